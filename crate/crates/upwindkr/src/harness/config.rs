//! Experiment configuration: a small TOML file with one key per knob.
//!
//! Only `test_case` is required; everything else falls back to the test
//! case's registry defaults. Example:
//!
//! ```toml
//! test_case = "tc3"
//! levels = [0.125, 0.0625, 0.03125]
//! delta_rule = "h-over-2u"
//! r_rule = "sqrt"
//! eval_times = [0.7853981633974483, 1.5707963267948966]
//! out_dir = "out/tc3"
//! emit = ["csv", "text", "svg"]
//! ```

use serde::Deserialize;
use std::collections::BTreeSet;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown test case {0:?}")]
    UnknownTestCase(String),
    #[error("bad rule {0:?}: {1}")]
    BadRule(String, String),
    #[error("{0}")]
    Invalid(String),
}

/// How the time step follows the mesh size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaRule {
    /// delta = h / (2 |u|_inf); falls back to delta = h when u vanishes.
    HalfOverSup,
    /// delta = c h.
    ProportionalH(f64),
    /// delta = c sqrt(h).
    ProportionalSqrtH(f64),
    Fixed(f64),
}

impl DeltaRule {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        let bad = |msg: &str| ConfigError::BadRule(s.to_string(), msg.to_string());
        if s == "h-over-2u" {
            return Ok(DeltaRule::HalfOverSup);
        }
        if let Some(rest) = s.strip_prefix("h:") {
            let c: f64 = rest.parse().map_err(|_| bad("bad factor"))?;
            if c <= 0.0 {
                return Err(bad("factor must be positive"));
            }
            return Ok(DeltaRule::ProportionalH(c));
        }
        if let Some(rest) = s.strip_prefix("sqrt-h:") {
            let c: f64 = rest.parse().map_err(|_| bad("bad factor"))?;
            if c <= 0.0 {
                return Err(bad("factor must be positive"));
            }
            return Ok(DeltaRule::ProportionalSqrtH(c));
        }
        if let Some(rest) = s.strip_prefix("fixed:") {
            let v: f64 = rest.parse().map_err(|_| bad("bad value"))?;
            if v <= 0.0 {
                return Err(bad("step must be positive"));
            }
            return Ok(DeltaRule::Fixed(v));
        }
        Err(bad("expected h-over-2u | h:<c> | sqrt-h:<c> | fixed:<v>"))
    }

    pub fn apply(&self, h: f64, u_sup: f64) -> f64 {
        match *self {
            DeltaRule::HalfOverSup => {
                if u_sup > 0.0 {
                    h / (2.0 * u_sup)
                } else {
                    h
                }
            }
            DeltaRule::ProportionalH(c) => c * h,
            DeltaRule::ProportionalSqrtH(c) => c * h.sqrt(),
            DeltaRule::Fixed(v) => v,
        }
    }
}

/// How the cost radius follows the discretization scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusRule {
    /// r = sqrt(h) + sqrt(delta), the scaling under which the scheme error
    /// stays order one.
    SqrtSum,
    Fixed(f64),
}

impl RadiusRule {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        if s == "sqrt" {
            return Ok(RadiusRule::SqrtSum);
        }
        if let Some(rest) = s.strip_prefix("fixed:") {
            let v: f64 = rest
                .parse()
                .map_err(|_| ConfigError::BadRule(s.into(), "bad value".into()))?;
            if v <= 0.0 {
                return Err(ConfigError::BadRule(s.into(), "radius must be positive".into()));
            }
            return Ok(RadiusRule::Fixed(v));
        }
        Err(ConfigError::BadRule(s.into(), "expected sqrt | fixed:<v>".into()))
    }

    pub fn apply(&self, h: f64, delta: f64) -> f64 {
        match *self {
            RadiusRule::SqrtSum => h.sqrt() + delta.sqrt(),
            RadiusRule::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceKind {
    Particles,
    FineGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Eq, Ord)]
pub enum EmitFormat {
    Csv,
    Text,
    Svg,
}

/// Raw deserialized file; every field optional except the test case.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    test_case: String,
    levels: Option<Vec<f64>>,
    delta_rule: Option<String>,
    r_rule: Option<String>,
    eval_times: Option<Vec<f64>>,
    t_final: Option<f64>,
    q: Option<f64>,
    kappa: Option<f64>,
    qbar: Option<f64>,
    reference: Option<String>,
    particles_refine: Option<usize>,
    source_time_nodes: Option<usize>,
    ode_tol: Option<f64>,
    solver_tol: Option<f64>,
    out_dir: Option<String>,
    seed: Option<u64>,
    ot_cap: Option<usize>,
    balance_tol: Option<f64>,
    emit: Option<Vec<String>>,
    workers: Option<usize>,
    emit_trajectories: Option<bool>,
}

/// Fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub test_case: String,
    /// Target mesh sizes, one per level, largest first.
    pub levels: Vec<f64>,
    pub delta_rule: DeltaRule,
    pub r_rule: RadiusRule,
    /// Evaluation times; empty means half and full horizon.
    pub eval_times: Vec<f64>,
    pub t_final: Option<f64>,
    pub q: Option<f64>,
    pub kappa: Option<f64>,
    pub qbar: f64,
    pub reference: ReferenceKind,
    pub particles_refine: usize,
    pub source_time_nodes: usize,
    pub ode_tol: f64,
    pub solver_tol: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub ot_cap: usize,
    pub balance_tol: f64,
    pub emit: BTreeSet<EmitFormat>,
    pub workers: usize,
    pub emit_trajectories: bool,
}

impl ExperimentConfig {
    pub fn for_test_case(id: &str) -> Self {
        ExperimentConfig {
            test_case: id.to_string(),
            levels: Vec::new(),
            delta_rule: DeltaRule::HalfOverSup,
            r_rule: RadiusRule::SqrtSum,
            eval_times: Vec::new(),
            t_final: None,
            q: None,
            kappa: None,
            qbar: 2.0,
            reference: ReferenceKind::Particles,
            particles_refine: 0,
            source_time_nodes: 64,
            ode_tol: 1e-10,
            solver_tol: 1e-12,
            out_dir: PathBuf::from("out"),
            seed: 7,
            ot_cap: 6_000_000,
            balance_tol: 1e-8,
            emit: [EmitFormat::Csv, EmitFormat::Text].into_iter().collect(),
            workers: 0,
            emit_trajectories: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let mut cfg = ExperimentConfig::for_test_case(&raw.test_case);
        if let Some(l) = raw.levels {
            cfg.levels = l;
        }
        if let Some(s) = raw.delta_rule {
            cfg.delta_rule = DeltaRule::parse(&s)?;
        }
        if let Some(s) = raw.r_rule {
            cfg.r_rule = RadiusRule::parse(&s)?;
        }
        if let Some(v) = raw.eval_times {
            cfg.eval_times = v;
        }
        cfg.t_final = raw.t_final;
        cfg.q = raw.q;
        cfg.kappa = raw.kappa;
        if let Some(v) = raw.qbar {
            cfg.qbar = v;
        }
        if let Some(s) = raw.reference {
            cfg.reference = match s.as_str() {
                "particles" => ReferenceKind::Particles,
                "fine-grid" => ReferenceKind::FineGrid,
                other => {
                    return Err(ConfigError::BadRule(
                        other.to_string(),
                        "expected particles | fine-grid".into(),
                    ))
                }
            };
        }
        if let Some(v) = raw.particles_refine {
            cfg.particles_refine = v;
        }
        if let Some(v) = raw.source_time_nodes {
            cfg.source_time_nodes = v;
        }
        if let Some(v) = raw.ode_tol {
            cfg.ode_tol = v;
        }
        if let Some(v) = raw.solver_tol {
            cfg.solver_tol = v;
        }
        if let Some(v) = raw.out_dir {
            cfg.out_dir = PathBuf::from(v);
        }
        if let Some(v) = raw.seed {
            cfg.seed = v;
        }
        if let Some(v) = raw.ot_cap {
            cfg.ot_cap = v;
        }
        if let Some(v) = raw.balance_tol {
            cfg.balance_tol = v;
        }
        if let Some(list) = raw.emit {
            cfg.emit = list
                .iter()
                .map(|s| match s.as_str() {
                    "csv" => Ok(EmitFormat::Csv),
                    "text" => Ok(EmitFormat::Text),
                    "svg" => Ok(EmitFormat::Svg),
                    other => Err(ConfigError::BadRule(
                        other.to_string(),
                        "expected csv | text | svg".into(),
                    )),
                })
                .collect::<Result<_, _>>()?;
        }
        if let Some(v) = raw.workers {
            cfg.workers = v;
        }
        if let Some(v) = raw.emit_trajectories {
            cfg.emit_trajectories = v;
        }
        Ok(cfg)
    }

    /// Worker count after the environment override.
    pub fn effective_workers(&self) -> usize {
        std::env::var("UPWINDKR_WORKERS")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(self.workers)
    }
}
