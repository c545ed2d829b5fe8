use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use etlp_core::*;
use serde::{Deserialize, Serialize};

/// Where the problem comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSource {
    File { path: PathBuf },
    Assignment { spec: AssignmentSpec },
}

impl Default for ProblemSource {
    fn default() -> Self {
        Self::Assignment { spec: AssignmentSpec::two_agent() }
    }
}

impl ProblemSource {
    pub fn load(&self) -> Result<StandardLp> {
        match self {
            Self::File { path } => read_problem(path),
            Self::Assignment { spec } => Ok(generate_assignment(spec)?),
        }
    }
}

pub fn read_problem(path: &Path) -> Result<StandardLp> {
    let text = fs::read_to_string(path).with_context(|| format!("reading problem file {}", path.display()))?;
    let file: ProblemFile =
        serde_json::from_str(&text).with_context(|| format!("parsing problem file {}", path.display()))?;
    StandardLp::try_from(file).with_context(|| format!("problem file {}", path.display()))
}

pub fn write_problem(lp: &StandardLp, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&ProblemFile::from(lp))?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Everything a simulation needs. `trigger`, when present, replaces the
/// scalar `mu`, `tau_scale` and `rmin_scale` knobs; the echo written next to
/// each run always carries the resolved per-agent values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub mode: TriggerMode,
    pub gamma: f64,
    pub preprocess: bool,
    pub mu: f64,
    pub tau_scale: f64,
    pub rmin_scale: f64,
    pub trigger: Option<TriggerConfig>,
    pub t_max: f64,
    pub j_max: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub cadence: Option<f64>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSource::default(),
            mode: TriggerMode::Distributed,
            gamma: 1.0,
            preprocess: true,
            mu: DEFAULT_MU,
            tau_scale: DEFAULT_TAU_SCALE,
            rmin_scale: DEFAULT_RMIN_SCALE,
            trigger: None,
            t_max: 200.0,
            j_max: 2_000_000,
            noise_std: 0.0,
            seed: 0,
            cadence: None,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec::normal(self.noise_std, self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            bail!("--gamma must be positive and finite, got {}", self.gamma);
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            bail!("--t-max must be positive and finite, got {}", self.t_max);
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            bail!("--noise-std must be nonnegative, got {}", self.noise_std);
        }
        if let Some(c) = self.cadence {
            if c.is_nan() || c <= 0.0 {
                bail!("cadence must be positive, got {c}");
            }
        }
        Ok(())
    }
}

/// The problem as handed to the simulator together with what was derived
/// from the configuration.
pub struct Setup {
    /// As loaded, before any scaling.
    pub original: StandardLp,
    /// Cost scaled by γ and, unless disabled, rows preprocessed.
    pub lp: StandardLp,
    pub graph: AgentGraph,
    pub trigger: TriggerConfig,
    pub scaling: Option<ScalingResult>,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let original = cfg.problem.load()?;
        let graph = build_graph(&original);
        let weighted = original.with_scaled_cost(cfg.gamma);
        let (lp, scaling) = if cfg.preprocess {
            let s = max_consensus_scale(&weighted, &graph)?;
            log::info!("preprocessing: rho* = {}, {} consensus rounds", s.rho_star, s.rounds);
            (s.scaled.clone(), Some(s))
        } else {
            (weighted, None)
        };
        let trigger = match &cfg.trigger {
            Some(t) => {
                if t.mode != cfg.mode {
                    bail!("trigger block is for {:?} mode but the run asks for {:?}", t.mode, cfg.mode);
                }
                TriggerConfig::new(&graph, t.mode, t.mu.clone(), t.tau.clone(), t.r_min.clone())?
            }
            None => TriggerConfig::scaled(&graph, cfg.mode, cfg.mu, cfg.tau_scale, cfg.rmin_scale)?,
        };
        Ok(Self { original, lp, graph, trigger, scaling })
    }
}
