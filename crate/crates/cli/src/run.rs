use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use etlp_core::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Setup};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const METRICS_FILE: &str = "metrics.txt";
pub const CONFIG_FILE: &str = "config.echo";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    ZenoAbort,
    Divergence,
}

impl RunStatus {
    pub fn exit_code(self) -> u8 {
        match self {
            Self::Ok => 0,
            Self::ZenoAbort => 3,
            Self::Divergence => 4,
        }
    }
}

/// Contents of `metrics.txt`, written as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub status: RunStatus,
    pub mode: TriggerMode,
    pub stop: StopReason,
    pub t_end: f64,
    pub jumps: usize,
    pub total_broadcasts: usize,
    pub final_x: Vec<f64>,
    /// Missing when the problem is too large for the oracle.
    pub oracle_x: Option<Vec<f64>>,
    pub final_error_inf: Option<f64>,
    pub rounded_matches_oracle: Option<bool>,
    pub zeno_suspected: bool,
    pub min_inter_jump_gap: Option<f64>,
    pub min_zero_separation: Option<f64>,
    pub v_initial: Option<f64>,
    pub v_final: Option<f64>,
    pub v_max_increase: Option<f64>,
    pub v_monotone: Option<bool>,
    pub mismatch_intervals: Option<usize>,
    pub mismatch_bound_failures: Option<usize>,
    pub mismatch_duration_failures: Option<usize>,
    pub wall_seconds: f64,
    pub broadcasts: BTreeMap<String, usize>,
    pub persistence: Persistence,
}

pub struct RunOutcome {
    pub metrics: Metrics,
    pub trajectory: HybridTrajectory,
}

/// Oracle solution of the unscaled problem; `None` above the oracle's size
/// limit.
fn oracle_x(original: &StandardLp) -> Option<Vec<f64>> {
    match oracle_solve_lp(original) {
        Ok(p) => Some(p.x_star),
        Err(e) => {
            log::warn!("oracle unavailable: {e}");
            None
        }
    }
}

pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    let setup = Setup::new(cfg)?;
    let saddle = match SaddleReference::from_oracle(&setup.lp) {
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("no saddle reference, Lyapunov values disabled: {e}");
            None
        }
    };
    let mut opts = SimOptions::new(cfg.t_max, cfg.j_max).with_noise(cfg.noise());
    if let Some(s) = &saddle {
        opts = opts.with_saddle(s.clone());
    }
    if let Some(c) = cfg.cadence {
        opts = opts.with_cadence(c);
    }
    log::info!(
        "simulating n = {}, m = {}, {:?} mode, t_max = {}",
        setup.lp.n(),
        setup.lp.m(),
        cfg.mode,
        cfg.t_max
    );
    let start = Instant::now();
    let result = simulate(&setup.lp, &setup.graph, &setup.trigger, &default_initial_state(&setup.lp), &opts);
    let wall = start.elapsed().as_secs_f64();
    let (trajectory, status) = match result {
        Ok(t) => (t, RunStatus::Ok),
        Err(SimError::ZenoAbort { partial }) => (*partial, RunStatus::ZenoAbort),
        Err(SimError::Divergence { partial }) => (*partial, RunStatus::Divergence),
        Err(e) => return Err(e.into()),
    };
    log::info!("{} jumps, {} broadcasts in {wall:.2}s", trajectory.jumps(), trajectory.events.len());

    let oracle = oracle_x(&setup.original);
    let final_x = trajectory.final_state().x.clone();
    let final_error = oracle.as_ref().map(|o| sup_norm_diff(&final_x, o));
    let rounded = oracle.as_ref().map(|o| final_x.iter().zip(o).all(|(a, b)| a.round() == b.round()));

    let mut metrics = Metrics {
        status,
        mode: cfg.mode,
        stop: trajectory.stop,
        t_end: trajectory.end.t,
        jumps: trajectory.jumps(),
        total_broadcasts: trajectory.events.len(),
        final_x,
        oracle_x: oracle,
        final_error_inf: final_error,
        rounded_matches_oracle: rounded,
        zeno_suspected: trajectory.zeno_suspected,
        min_inter_jump_gap: trajectory.min_inter_jump_gap(),
        min_zero_separation: trajectory.min_zero_separation,
        v_initial: None,
        v_final: None,
        v_max_increase: None,
        v_monotone: None,
        mismatch_intervals: None,
        mismatch_bound_failures: None,
        mismatch_duration_failures: None,
        wall_seconds: wall,
        broadcasts: trajectory.cause_counts().into_iter().map(|(c, k)| (c.codes(), k)).collect(),
        persistence: trajectory.persistence,
    };
    if let Some(s) = saddle {
        let audits = audit_samples(&trajectory.samples, &setup, s, cfg.noise_std == 0.0)?;
        audits.fill(&mut metrics);
    }
    write_outputs(cfg, &setup, &trajectory, &metrics)?;
    Ok(RunOutcome { metrics, trajectory })
}

fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

pub struct Audits {
    pub lyapunov: LyapunovAudit,
    pub mismatch: MismatchReport,
}

impl Audits {
    pub fn passed(&self) -> bool {
        self.lyapunov.passed && self.mismatch.passed()
    }

    fn fill(&self, m: &mut Metrics) {
        m.v_initial = Some(self.lyapunov.v0());
        m.v_final = Some(self.lyapunov.v_final());
        m.v_max_increase = Some(self.lyapunov.max_increase);
        m.v_monotone = Some(self.lyapunov.violations.is_empty());
        m.mismatch_intervals = Some(self.mismatch.intervals.len());
        m.mismatch_bound_failures = Some(self.mismatch.bound_failures);
        m.mismatch_duration_failures = Some(self.mismatch.duration_failures);
    }
}

pub fn audit_samples(samples: &[Sample], setup: &Setup, saddle: SaddleReference, enforce: bool) -> Result<Audits> {
    let points: Vec<PrimalDualPoint> = samples.iter().map(|s| s.state.point()).collect();
    let params = LagrangianParams::new(LagrangianParams::default_k(&setup.lp, &points), saddle);
    let lyapunov = lyapunov_audit_with(samples, &setup.lp, &params, enforce)?;
    let mismatch = if setup.trigger.mode == TriggerMode::Distributed {
        mode_mismatch_audit(samples, &setup.lp, &setup.graph, &setup.trigger.tau)
    } else {
        MismatchReport::default()
    };
    Ok(Audits { lyapunov, mismatch })
}

fn write_outputs(cfg: &RunConfig, setup: &Setup, traj: &HybridTrajectory, metrics: &Metrics) -> Result<()> {
    let dir = &cfg.out;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let create = |name: &str| -> Result<BufWriter<File>> {
        let path = dir.join(name);
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    };
    write_trajectory_csv(traj, create(TRAJECTORY_FILE)?)?;
    write_events_csv(traj, create(EVENTS_FILE)?)?;
    fs::write(dir.join(METRICS_FILE), toml::to_string(metrics)?)?;
    let echo = RunConfig { trigger: Some(setup.trigger.clone()), ..cfg.clone() };
    fs::write(dir.join(CONFIG_FILE), echo.to_json()?)?;
    Ok(())
}

pub fn read_metrics(dir: &Path) -> Result<Metrics> {
    let path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(toml::from_str(&text)?)
}

/// Re-runs the audits on the trajectory saved in `dir`, under the
/// configuration echoed beside it.
pub fn audit_dir(dir: &Path) -> Result<Audits> {
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let setup = Setup::new(&cfg)?;
    let saddle = SaddleReference::from_oracle(&setup.lp).context("the audits need an oracle saddle point")?;
    let path = dir.join(TRAJECTORY_FILE);
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let samples = read_trajectory_csv(&setup.lp, file)?;
    if samples.is_empty() {
        bail!("{} holds no samples", path.display());
    }
    audit_samples(&samples, &setup, saddle, cfg.noise_std == 0.0)
}

/// One sweep axis: a config key and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for Sweep {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some((key, list)) = s.split_once('=') else {
            bail!("expected KEY=V1,V2,..., got `{s}`");
        };
        let values: Vec<String> = list.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            bail!("sweep over `{key}` has no values");
        }
        Ok(Self { key: key.trim().to_string(), values })
    }
}

impl Sweep {
    /// One config per value, each writing into `<out>/<key>-<value>`.
    pub fn expand(&self, base: &RunConfig) -> Result<Vec<RunConfig>> {
        self.values
            .iter()
            .map(|v| {
                let mut cfg = base.clone();
                let num = || v.parse::<f64>().with_context(|| format!("sweep value `{v}` is not a number"));
                match self.key.as_str() {
                    "seed" => cfg.seed = v.parse().with_context(|| format!("sweep value `{v}` is not a seed"))?,
                    "gamma" => cfg.gamma = num()?,
                    "mu" => cfg.mu = num()?,
                    "tau-scale" => cfg.tau_scale = num()?,
                    "rmin-scale" => cfg.rmin_scale = num()?,
                    "noise-std" => cfg.noise_std = num()?,
                    "t-max" => cfg.t_max = num()?,
                    "mode" => {
                        cfg.mode = match v.as_str() {
                            "centralized" => TriggerMode::Centralized,
                            "distributed" => TriggerMode::Distributed,
                            _ => bail!("unknown mode `{v}`"),
                        }
                    }
                    other => bail!(
                        "cannot sweep `{other}`; use seed, gamma, mu, tau-scale, rmin-scale, noise-std, t-max or mode"
                    ),
                }
                // Explicit trigger vectors would shadow the swept knob.
                if !matches!(self.key.as_str(), "seed" | "noise-std" | "t-max") {
                    cfg.trigger = None;
                }
                cfg.out = base.out.join(format!("{}-{v}", self.key));
                Ok(cfg)
            })
            .collect()
    }
}

/// Runs every config on its own thread.
pub fn execute_all(configs: &[RunConfig]) -> Vec<Result<Metrics>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = configs.iter().map(|c| scope.spawn(move || execute(c).map(|o| o.metrics))).collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("run panicked")))).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parsing_and_expansion() {
        let s: Sweep = "mu=0.001, 0.005".parse().unwrap();
        assert_eq!(s.values, vec!["0.001", "0.005"]);
        let base = RunConfig { trigger: Some(TriggerConfig { mode: TriggerMode::Distributed, mu: vec![], tau: vec![], r_min: vec![] }), ..RunConfig::default() };
        let runs = s.expand(&base).unwrap();
        assert_eq!(runs[1].mu, 0.005);
        assert!(runs.iter().all(|c| c.trigger.is_none()));
        assert_eq!(runs[0].out, base.out.join("mu-0.001"));

        let seeds = "seed=4,5".parse::<Sweep>().unwrap().expand(&base).unwrap();
        assert_eq!(seeds[1].seed, 5);
        assert!(seeds[1].trigger.is_some());

        assert!("seed".parse::<Sweep>().is_err());
        assert!("seed=".parse::<Sweep>().is_err());
        assert!("gamma=x".parse::<Sweep>().unwrap().expand(&base).is_err());
        assert!("mode=sideways".parse::<Sweep>().unwrap().expand(&base).is_err());
    }

    #[test]
    fn metrics_survive_toml() {
        let m = Metrics {
            status: RunStatus::ZenoAbort,
            mode: TriggerMode::Centralized,
            stop: StopReason::JumpLimit,
            t_end: 1.5,
            jumps: 3,
            total_broadcasts: 4,
            final_x: vec![0.1, 0.2],
            oracle_x: None,
            final_error_inf: None,
            rounded_matches_oracle: None,
            zeno_suspected: true,
            min_inter_jump_gap: Some(1e-12),
            min_zero_separation: None,
            v_initial: Some(2.0),
            v_final: Some(1.0),
            v_max_increase: Some(0.0),
            v_monotone: Some(true),
            mismatch_intervals: Some(0),
            mismatch_bound_failures: Some(0),
            mismatch_duration_failures: Some(0),
            wall_seconds: 0.25,
            broadcasts: [("E".to_string(), 4)].into(),
            persistence: Persistence::Undetermined,
        };
        let text = toml::to_string(&m).unwrap();
        assert!(text.contains("status = \"zeno-abort\""));
        assert_eq!(toml::from_str::<Metrics>(&text).unwrap(), m);
        assert_eq!(m.status.exit_code(), 3);
        assert_eq!(RunStatus::Divergence.exit_code(), 4);
    }
}
