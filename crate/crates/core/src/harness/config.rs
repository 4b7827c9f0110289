//! JSON experiment configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, EstimatorParams, EtaRule, Family};
use crate::problems::AffineToySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub problem: ProblemSpec,
    pub algorithms: Vec<AlgorithmSpec>,
    pub run: RunSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ProblemSpec {
    Auc(AucSpec),
    PolicyEval(PeSpec),
    AffineToy(ToySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AucSpec {
    #[serde(default = "defaults::auc_n")]
    pub n: usize,
    #[serde(default = "defaults::auc_d")]
    pub d: usize,
    #[serde(default = "defaults::p_pos")]
    pub p_pos: f64,
    #[serde(default = "defaults::noise_sigma")]
    pub noise_sigma: f64,
    /// Ball radius; `100 (1 + ||x0||)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Dataset file in the text format; replaces generation when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeSpec {
    #[serde(default = "defaults::states")]
    pub states: usize,
    #[serde(default = "defaults::actions")]
    pub actions: usize,
    #[serde(default = "defaults::pe_n")]
    pub n: usize,
    #[serde(default = "defaults::pe_d")]
    pub d: usize,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::tau_reg")]
    pub tau_reg: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    #[serde(default = "defaults::toy_n")]
    pub n: usize,
    #[serde(default = "defaults::toy_dim")]
    pub dim: usize,
    #[serde(default = "defaults::toy_mu")]
    pub mu: f64,
    #[serde(default = "defaults::toy_skew")]
    pub skew: f64,
    #[serde(default = "defaults::toy_hetero")]
    pub hetero: f64,
    #[serde(default = "defaults::toy_offset_noise")]
    pub offset_noise: f64,
    #[serde(default = "defaults::toy_skew_rank")]
    pub skew_rank: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ToySpec {
    pub fn spec(&self) -> AffineToySpec {
        AffineToySpec {
            n: self.n,
            dim: self.dim,
            mu: self.mu,
            skew: self.skew,
            hetero: self.hetero,
            offset_noise: self.offset_noise,
            skew_rank: self.skew_rank,
        }
    }
}

mod defaults {
    use crate::problems::AffineToySpec;

    pub fn auc_n() -> usize {
        5000
    }
    pub fn auc_d() -> usize {
        50
    }
    pub fn p_pos() -> f64 {
        0.1
    }
    pub fn noise_sigma() -> f64 {
        0.1
    }
    pub fn states() -> usize {
        100
    }
    pub fn actions() -> usize {
        10
    }
    pub fn pe_n() -> usize {
        2000
    }
    pub fn pe_d() -> usize {
        21
    }
    pub fn gamma() -> f64 {
        0.95
    }
    pub fn tau_reg() -> f64 {
        1e-4
    }
    pub fn toy_n() -> usize {
        AffineToySpec::default().n
    }
    pub fn toy_dim() -> usize {
        AffineToySpec::default().dim
    }
    pub fn toy_mu() -> f64 {
        AffineToySpec::default().mu
    }
    pub fn toy_skew() -> f64 {
        AffineToySpec::default().skew
    }
    pub fn toy_hetero() -> f64 {
        AffineToySpec::default().hetero
    }
    pub fn toy_offset_noise() -> f64 {
        AffineToySpec::default().offset_noise
    }
    pub fn toy_skew_rank() -> usize {
        AffineToySpec::default().skew_rank
    }
    pub fn record_every() -> f64 {
        1.0
    }
}

impl ProblemSpec {
    pub fn seed(&self) -> u64 {
        match self {
            ProblemSpec::Auc(s) => s.seed,
            ProblemSpec::PolicyEval(s) => s.seed,
            ProblemSpec::AffineToy(s) => s.seed,
        }
    }

    pub fn family(&self) -> Option<Family> {
        match self {
            ProblemSpec::Auc(_) => Some(Family::Auc),
            ProblemSpec::PolicyEval(_) => Some(Family::PolicyEval),
            ProblemSpec::AffineToy(_) => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Auc(_) => "auc",
            ProblemSpec::PolicyEval(_) => "policy-eval",
            ProblemSpec::AffineToy(_) => "affine-toy",
        }
    }

    /// Whether the data comes from a file and so cannot vary with the seed.
    pub fn from_file(&self) -> bool {
        match self {
            ProblemSpec::Auc(s) => s.data.is_some(),
            ProblemSpec::PolicyEval(s) => s.data.is_some(),
            ProblemSpec::AffineToy(_) => false,
        }
    }
}

/// Estimator parameters: a named profile or an explicit object.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum ParamsSpec {
    #[default]
    Experiment,
    Theory,
    Explicit(EstimatorParams),
}

impl Serialize for ParamsSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ParamsSpec::Experiment => s.serialize_str("default:experiment"),
            ParamsSpec::Theory => s.serialize_str("default:theory"),
            ParamsSpec::Explicit(p) => p.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ParamsSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::String(s) => match s.as_str() {
                "default:experiment" => Ok(ParamsSpec::Experiment),
                "default:theory" => Ok(ParamsSpec::Theory),
                other => Err(D::Error::custom(format!(
                    "unknown parameter profile {other:?}; expected \"default:experiment\" or \"default:theory\""
                ))),
            },
            obj @ serde_json::Value::Object(_) => serde_json::from_value(obj)
                .map(ParamsSpec::Explicit)
                .map_err(D::Error::custom),
            _ => Err(D::Error::custom("params must be a profile string or an object")),
        }
    }
}

/// Step size: a number, `"1/5L"`, or `"theory"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaSpec {
    Rule(EtaRule),
    Theory,
}

impl Serialize for EtaSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EtaSpec::Rule(EtaRule::Absolute(v)) => s.serialize_f64(*v),
            EtaSpec::Rule(EtaRule::OverL(c)) => s.serialize_str(&format!("1/{c}L")),
            EtaSpec::Theory => s.serialize_str("theory"),
        }
    }
}

impl<'de> Deserialize<'de> for EtaSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(|v| EtaSpec::Rule(EtaRule::Absolute(v)))
                .ok_or_else(|| D::Error::custom("step size is not a finite number")),
            serde_json::Value::String(s) if s == "theory" => Ok(EtaSpec::Theory),
            serde_json::Value::String(s) => s
                .parse::<EtaRule>()
                .map(EtaSpec::Rule)
                .map_err(D::Error::custom),
            _ => Err(D::Error::custom("eta must be a number or a string")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub kind: EstimatorKind,
    /// Name used in the CSV; defaults to the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub params: ParamsSpec,
    /// Defaults to the experiment step size for the experiment profile and
    /// to the theory step size otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<EtaSpec>,
}

impl AlgorithmSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.kind.name().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Budget in epochs of `n` component evaluations.
    pub epochs: f64,
    #[serde(default = "defaults::record_every")]
    pub record_every_epochs: f64,
    pub seeds: Vec<u64>,
    /// Keep one dataset for every seed instead of regenerating it.
    #[serde(default)]
    pub fix_data: bool,
    /// Write measured wall time; otherwise `wall_ms` is 0 and output is byte-reproducible.
    #[serde(default)]
    pub timing: bool,
    /// Stop a run early once `rel_residual` falls to this value; 0 disables.
    #[serde(default)]
    pub stop_tol: f64,
    /// Charge `n` calls per residual evaluation.
    #[serde(default)]
    pub meter_residuals: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.experiment_id.is_empty() || self.experiment_id.contains([',', '\n', '\r']) {
            return bad("experiment_id must be non-empty without commas or newlines".into());
        }
        if !(self.run.epochs >= 1.0) || !self.run.epochs.is_finite() {
            return bad("run.epochs must be at least 1".into());
        }
        if !(self.run.record_every_epochs > 0.0) {
            return bad("run.record_every_epochs must be positive".into());
        }
        if !(self.run.stop_tol >= 0.0) {
            return bad("run.stop_tol must be non-negative".into());
        }
        if self.algorithms.is_empty() {
            return bad("at least one algorithm is required".into());
        }
        if self.run.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut seeds = self.run.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return bad("seeds must be distinct".into());
        }
        let mut labels: Vec<String> = self.algorithms.iter().map(|a| a.label()).collect();
        if labels.iter().any(|l| l.is_empty() || l.contains([',', '\n', '\r'])) {
            return bad("algorithm labels must be non-empty without commas or newlines".into());
        }
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate algorithm label {:?}", w[0]));
        }
        for a in &self.algorithms {
            if let Some(EtaSpec::Rule(EtaRule::Absolute(v))) = a.eta {
                if !(v > 0.0) || !v.is_finite() {
                    return bad(format!("{}: eta must be positive", a.label()));
                }
            }
        }
        Ok(())
    }
}
