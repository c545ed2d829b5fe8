//! Command-line front end: problem files, the assignment generator,
//! preprocessing, simulation runs with their exported artifacts, and audits
//! of saved trajectories.

pub mod config;
pub mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use etlp_core::*;
use serde_json::json;

pub use config::{read_problem, write_problem, ProblemSource, RunConfig, Setup};
pub use etlp_core::{generate_assignment, random_desk_lp, random_feasible_lp, AssignmentSpec};
pub use run::{audit_dir, execute, execute_all, read_metrics, Metrics, RunStatus, Sweep};

#[derive(Debug, Parser)]
#[command(name = "etlp", version, about = "Event-triggered distributed linear programming")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a problem with the reference oracles and print the result as JSON.
    SolveOracle {
        #[arg(long)]
        problem: Option<PathBuf>,
        /// Also solve the regularization `min γcᵀx + ½xᵀx`.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Run the distributed row scaling and report the estimates.
    Preprocess {
        #[arg(long)]
        problem: Option<PathBuf>,
        /// Write the scaled problem here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the event-triggered network.
    Simulate(SimulateArgs),
    /// Write an assignment problem file.
    GenAssignment {
        /// Number of agents and tasks.
        #[arg(long, default_value_t = 2)]
        size: usize,
        /// Draw integer benefits in 1..=20 from this seed instead of using
        /// the two-agent example.
        #[arg(long)]
        seed: Option<u64>,
        /// Benefit matrix as JSON rows, e.g. `[[5,15],[20,10]]`.
        #[arg(long, conflicts_with = "seed")]
        benefits: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the Lyapunov and mode-mismatch audits on a saved run.
    Audit {
        /// Output directory of an earlier `simulate`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Centralized,
    Distributed,
}

impl From<ModeArg> for TriggerMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Centralized => TriggerMode::Centralized,
            ModeArg::Distributed => TriggerMode::Distributed,
        }
    }
}

/// Flags given on the command line override the `--config` file, which in
/// turn overrides the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    /// Run configuration, e.g. a `config.echo` from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Problem file; the two-agent assignment when absent.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub j_max: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub tau_scale: Option<f64>,
    #[arg(long)]
    pub rmin_scale: Option<f64>,
    /// Skip the row scaling.
    #[arg(long)]
    pub no_preprocess: bool,
    /// Diagnostic sampling interval inside flows.
    #[arg(long)]
    pub cadence: Option<f64>,
    /// Run one simulation per value, concurrently, e.g. `seed=0,1,2`.
    #[arg(long)]
    pub sweep: Option<Sweep>,
}

impl SimulateArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.problem {
            // Absolute, so the echo still resolves from another directory.
            let path = std::fs::canonicalize(p).unwrap_or_else(|_| p.clone());
            cfg.problem = ProblemSource::File { path };
        }
        let before = (cfg.mode, cfg.mu, cfg.tau_scale, cfg.rmin_scale);
        if let Some(m) = self.mode {
            cfg.mode = m.into();
        }
        if let Some(v) = self.mu {
            cfg.mu = v;
        }
        if let Some(v) = self.tau_scale {
            cfg.tau_scale = v;
        }
        if let Some(v) = self.rmin_scale {
            cfg.rmin_scale = v;
        }
        if self.problem.is_some() || before != (cfg.mode, cfg.mu, cfg.tau_scale, cfg.rmin_scale) {
            cfg.trigger = None;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.t_max {
            cfg.t_max = v;
        }
        if let Some(v) = self.j_max {
            cfg.j_max = v;
        }
        if let Some(v) = self.noise_std {
            cfg.noise_std = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if self.no_preprocess {
            cfg.preprocess = false;
        }
        if self.cadence.is_some() {
            cfg.cadence = self.cadence;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_problem(path: &Option<PathBuf>) -> Result<StandardLp> {
    match path {
        Some(p) => read_problem(p),
        None => Ok(generate_assignment(&AssignmentSpec::two_agent())?),
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn solve_oracle(problem: &Option<PathBuf>, gamma: Option<f64>) -> Result<ExitCode> {
    let lp = load_problem(problem)?;
    let sol = oracle_solve_lp(&lp)?;
    let mut report = json!({
        "x": sol.x_star,
        "z": sol.z_star,
        "objective": lp.objective(&sol.x_star),
        "kkt": kkt_check_lp(&lp, &sol, ORACLE_TOL)?,
    });
    if let Some(g) = gamma {
        let qp = RegularizedQp::new(lp.clone(), g)?;
        let q = oracle_solve_qp(&qp)?;
        let exact = exactness_probe(&lp, &[g])?[0].matches;
        report["qp"] = json!({
            "gamma": g,
            "x": q.x_star,
            "z": q.z_star,
            "kkt": kkt_check_qp(&qp, &q, ORACLE_TOL)?,
            "exact": exact,
        });
    }
    print_json(&report)?;
    Ok(ExitCode::SUCCESS)
}

fn preprocess(problem: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<ExitCode> {
    let lp = load_problem(problem)?;
    let graph = build_graph(&lp);
    let s = max_consensus_scale(&lp, &graph)?;
    print_json(&json!({
        "estimates": gershgorin_estimates(&lp),
        "rho_star": s.rho_star,
        "rounds": s.rounds,
        "divisors": s.divisors,
        "spectral_radius_before": spectral_radius_ata(&lp),
        "spectral_radius_after": spectral_radius_ata(&s.scaled),
    }))?;
    if let Some(path) = out {
        write_problem(&s.scaled, path)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn gen_assignment(size: usize, seed: Option<u64>, benefits: &Option<String>, out: &Option<PathBuf>) -> Result<ExitCode> {
    let spec = match (seed, benefits) {
        (_, Some(text)) => AssignmentSpec::new(serde_json::from_str(text)?),
        (Some(s), None) => AssignmentSpec::random(size, s),
        (None, None) if size == 2 => AssignmentSpec::two_agent(),
        (None, None) => bail!("--size {size} needs --seed or --benefits"),
    };
    let lp = generate_assignment(&spec)?;
    match out {
        Some(path) => write_problem(&lp, path)?,
        None => println!("{}", serde_json::to_string_pretty(&ProblemFile::from(&lp))?),
    }
    Ok(ExitCode::SUCCESS)
}

fn summary(m: &Metrics) -> String {
    let err = m.final_error_inf.map_or("n/a".to_string(), |e| format!("{e:.3e}"));
    format!("{:?}: {} jumps, {} broadcasts, |x - x*|_inf = {err}", m.status, m.jumps, m.total_broadcasts)
}

fn simulate_cmd(args: &SimulateArgs) -> Result<ExitCode> {
    let cfg = args.resolve()?;
    let Some(sweep) = &args.sweep else {
        let outcome = execute(&cfg)?;
        println!("{}", summary(&outcome.metrics));
        return Ok(ExitCode::from(outcome.metrics.status.exit_code()));
    };
    let configs = sweep.expand(&cfg)?;
    let mut code = 0;
    for (c, result) in configs.iter().zip(execute_all(&configs)) {
        match result {
            Ok(m) => {
                println!("{}: {}", c.out.display(), summary(&m));
                code = code.max(m.status.exit_code());
            }
            Err(e) => {
                println!("{}: error: {e:#}", c.out.display());
                code = code.max(1);
            }
        }
    }
    Ok(ExitCode::from(code))
}

fn audit_cmd(out: &std::path::Path) -> Result<ExitCode> {
    let a = audit_dir(out)?;
    let l = &a.lyapunov;
    println!(
        "lyapunov: {} samples, V {:.6e} -> {:.6e}, max increase {:.3e}, {} violations, {} sigma-gain failures, {}",
        l.values.len(),
        l.v0(),
        l.v_final(),
        l.max_increase,
        l.violations.len(),
        l.sigma_gain_failures.len(),
        if l.passed { "pass" } else { "fail" }
    );
    let mm = &a.mismatch;
    println!(
        "mode mismatch: {} intervals, {} bound failures, {} duration failures, {}",
        mm.intervals.len(),
        mm.bound_failures,
        mm.duration_failures,
        if mm.passed() { "pass" } else { "fail" }
    );
    Ok(if a.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn dispatch(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::SolveOracle { problem, gamma } => solve_oracle(problem, *gamma),
        Command::Preprocess { problem, out } => preprocess(problem, out),
        Command::Simulate(args) => simulate_cmd(args),
        Command::GenAssignment { size, seed, benefits, out } => gen_assignment(*size, *seed, benefits, out),
        Command::Audit { out } => audit_cmd(out),
    }
}
