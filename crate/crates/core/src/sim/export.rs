//! Delimited-text export of trajectories and event logs.
//!
//! `trajectory.csv`: `t, j, x0.., z0.., xhat0.., zhat0.., V, V1, V2, sigma`,
//! where `sigma` holds one `0`/`1` character per variable and the Lyapunov
//! columns are empty when no saddle reference was supplied.
//!
//! `events.csv`: `t, j, agent, causes`, with causes comma-joined.

use std::io::{Read, Write};

use thiserror::Error;

use super::{BroadcastEvent, HybridTime, HybridTrajectory, Sample, SampleKind};
use crate::dynamics::{flow_f_unchecked, ActiveSet, LyapunovValues};
use crate::lp::StandardLp;
use crate::triggers::{Bookkeeping, BroadcastState, Cause, NetworkState};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed trajectory file: {0}")]
    Format(String),
}

fn header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "j".to_string()];
    h.extend((0..n).map(|i| format!("x{i}")));
    h.extend((0..m).map(|l| format!("z{l}")));
    h.extend((0..n).map(|i| format!("xhat{i}")));
    h.extend((0..m).map(|l| format!("zhat{l}")));
    h.extend(["V", "V1", "V2", "sigma"].map(String::from));
    h
}

pub fn write_trajectory_csv<W: Write>(traj: &HybridTrajectory, out: W) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(traj.n, traj.m))?;
    for s in &traj.samples {
        let mut row = vec![s.time.t.to_string(), s.time.j.to_string()];
        let st = &s.state;
        row.extend(st.x.iter().chain(&st.z).chain(&st.hat.x_hat).chain(&st.hat.z_hat).map(f64::to_string));
        match s.lyapunov {
            Some(v) => row.extend([v.v, v.v1, v.v2].map(|x| x.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), 3)),
        }
        row.push(s.sigma.bitstring());
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_events_csv<W: Write>(traj: &HybridTrajectory, out: W) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "j", "agent", "causes"])?;
    for e in &traj.events {
        w.write_record([e.t.to_string(), e.j.to_string(), e.agent.to_string(), e.causes.codes()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T, ExportError> {
    field.parse().map_err(|_| ExportError::Format(format!("cannot parse {what} from `{field}`")))
}

/// Reads a trajectory export back. Clocks and request flags are not part of
/// the export and come back in their synchronized state.
pub fn read_trajectory_csv<R: Read>(lp: &StandardLp, input: R) -> Result<Vec<Sample>, ExportError> {
    let (n, m) = (lp.n(), lp.m());
    let mut r = csv::Reader::from_reader(input);
    let expected = header(n, m);
    let found: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if found != expected {
        return Err(ExportError::Format(format!(
            "header does not match a problem with n = {n}, m = {m}"
        )));
    }
    let mut samples: Vec<Sample> = Vec::new();
    for record in r.records() {
        let rec = record?;
        let t: f64 = parse(&rec[0], "t")?;
        let j: usize = parse(&rec[1], "j")?;
        let nums = |from: usize, len: usize| -> Result<Vec<f64>, ExportError> {
            (from..from + len).map(|k| parse(&rec[k], "state")).collect()
        };
        let x = nums(2, n)?;
        let z = nums(2 + n, m)?;
        let x_hat = nums(2 + n + m, n)?;
        let z_hat = nums(2 + 2 * n + m, m)?;
        let base = 2 + 2 * (n + m);
        let lyapunov = if rec[base].is_empty() {
            None
        } else {
            Some(LyapunovValues {
                v: parse(&rec[base], "V")?,
                v1: parse(&rec[base + 1], "V1")?,
                v2: parse(&rec[base + 2], "V2")?,
            })
        };
        let sigma = ActiveSet::parse_bitstring(&rec[base + 3])
            .ok_or_else(|| ExportError::Format("bad sigma column".into()))?;
        let hat = BroadcastState { x_hat, z_hat };
        let f_hat = flow_f_unchecked(lp, &hat.x_hat, &hat.z_hat);
        let sigma_hat = ActiveSet::from_flow(&f_hat, &hat.x_hat);
        let kind = match samples.last() {
            None => SampleKind::Initial,
            Some(p) if p.time.j != j => SampleKind::Jump,
            Some(_) => SampleKind::Flow,
        };
        samples.push(Sample {
            time: HybridTime { t, j },
            kind,
            state: NetworkState { x, z, hat, book: Bookkeeping::synchronized(n + m), sent: None },
            lyapunov,
            sigma,
            sigma_hat,
            active: Cause::empty(),
        });
    }
    Ok(samples)
}

pub fn read_events_csv<R: Read>(input: R) -> Result<Vec<BroadcastEvent>, ExportError> {
    let mut r = csv::Reader::from_reader(input);
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(BroadcastEvent {
                t: parse(&rec[0], "t")?,
                j: parse(&rec[1], "j")?,
                agent: parse(&rec[2], "agent")?,
                causes: Cause::parse_codes(&rec[3])
                    .ok_or_else(|| ExportError::Format(format!("unknown cause in `{}`", &rec[3])))?,
            })
        })
        .collect()
}
