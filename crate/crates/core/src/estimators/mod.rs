//! Stochastic estimators `S̃^k` of the forward-reflected direction
//! `S^k = 2Gx^k - Gx^{k-1}`, their recursion constants, and parameter profiles.

mod defaults;
mod randomness;
mod state;
mod theory;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use defaults::{default_params, experiment_eta, EtaRule, Family, Profile};
pub use randomness::Script;
pub use state::{make_estimator, EstimatorState};
pub use theory::{theory_card, CardConvention, DeltaRule, SizeRule, TheoryCard};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    FullBatch,
    #[serde(alias = "sgd")]
    SgdIncreasing,
    #[serde(alias = "svrg")]
    LSvrg,
    Saga,
    #[serde(alias = "sarah")]
    LSarah,
    #[serde(alias = "hsgd")]
    HybridSgd,
    #[serde(alias = "hsvrg")]
    HybridSvrg,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::FullBatch,
        EstimatorKind::SgdIncreasing,
        EstimatorKind::LSvrg,
        EstimatorKind::Saga,
        EstimatorKind::LSarah,
        EstimatorKind::HybridSgd,
        EstimatorKind::HybridSvrg,
    ];

    /// Satisfies the biased class (`τ < 1` possible).
    pub fn is_biased(self) -> bool {
        matches!(
            self,
            EstimatorKind::LSarah | EstimatorKind::HybridSgd | EstimatorKind::HybridSvrg
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::FullBatch => "full-batch",
            EstimatorKind::SgdIncreasing => "sgd-increasing",
            EstimatorKind::LSvrg => "l-svrg",
            EstimatorKind::Saga => "saga",
            EstimatorKind::LSarah => "l-sarah",
            EstimatorKind::HybridSgd => "hybrid-sgd",
            EstimatorKind::HybridSvrg => "hybrid-svrg",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Ok(match key.as_str() {
            "full-batch" | "fullbatch" | "frbs" => EstimatorKind::FullBatch,
            "sgd" | "sgd-increasing" | "sgdincreasing" => EstimatorKind::SgdIncreasing,
            "svrg" | "l-svrg" | "lsvrg" => EstimatorKind::LSvrg,
            "saga" => EstimatorKind::Saga,
            "sarah" | "l-sarah" | "lsarah" => EstimatorKind::LSarah,
            "hsgd" | "hybrid-sgd" | "hybridsgd" => EstimatorKind::HybridSgd,
            "hsvrg" | "hybrid-svrg" | "hybridsvrg" => EstimatorKind::HybridSvrg,
            _ => return Err(Error::invalid(format!("unknown estimator kind {s:?}"))),
        })
    }
}

/// Iteration-indexed batch size rule for the SGD estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BatchSchedule {
    /// `b_k = b`.
    Constant,
    /// `b_k = min{n, max{1, ⌊scale·n·(k+1)^power⌋}}`.
    Polynomial { scale: f64, power: f64 },
    /// `b_k = ⌈base·(k+1)⌉`, clamped to `n` in the finite-sum setting.
    Linear { base: f64 },
    /// `b_k = ⌈σ² / (L²/2 ||x^k - x^{k-1}||² + L²/2 ||x^{k-1} - x^{k-2}||² + δ_k)⌉`, `δ_k = δ₀/(k+1)²`.
    Adaptive { sigma2: f64, delta0: f64, lipschitz: f64 },
}

/// How the snapshot or anchor value is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum AnchorMode {
    Exact,
    /// Mega-batch of size `⌈size·(k+1)^growth⌉`.
    MegaBatch { size: usize, growth: f64 },
}

impl AnchorMode {
    pub fn mega_size(&self, k: usize) -> Option<usize> {
        match *self {
            AnchorMode::Exact => None,
            AnchorMode::MegaBatch { size, growth } => {
                Some(((size as f64) * ((k + 1) as f64).powf(growth)).ceil().max(1.0) as usize)
            }
        }
    }
}

/// Batch draws: i.i.d. with replacement, or the full index set every time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    #[default]
    Iid,
    FullIndexSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    /// Finite sum.
    F,
    /// Expectation.
    E,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorParams {
    /// Batch size `b`.
    pub batch: usize,
    /// SGD batch schedule; `None` means constant `b`.
    pub schedule: Option<BatchSchedule>,
    /// Snapshot or switch probability `𝐩`.
    pub p_switch: f64,
    /// Blend weight `ω` of the hybrid estimators.
    pub omega: f64,
    pub anchor: AnchorMode,
    /// Hybrid variants: `B̂_k = B_k`.
    pub share_batches: bool,
    /// Size of `B̂_k` when batches are independent; defaults to `batch`.
    pub hat_batch: Option<usize>,
    /// Young parameter used in mega-batch constants.
    pub mu: f64,
    pub sampling: Sampling,
    /// Reuse the most recent exact `Gx` when the next step needs it at the same point.
    pub retain_full: bool,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self {
            batch: 1,
            schedule: None,
            p_switch: 0.5,
            omega: 0.5,
            anchor: AnchorMode::Exact,
            share_batches: true,
            hat_batch: None,
            mu: 1.0,
            sampling: Sampling::Iid,
            retain_full: true,
        }
    }
}

impl EstimatorParams {
    pub fn with_batch(mut self, b: usize) -> Self {
        self.batch = b;
        self
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p_switch = p;
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_sampling(mut self, s: Sampling) -> Self {
        self.sampling = s;
        self
    }

    pub fn with_schedule(mut self, s: BatchSchedule) -> Self {
        self.schedule = Some(s);
        self
    }

    pub fn hat_size(&self) -> usize {
        if self.share_batches {
            self.batch
        } else {
            self.hat_batch.unwrap_or(self.batch)
        }
    }

    /// Batch-sharing factor `C` of the hybrid cards.
    pub fn sharing_factor(&self) -> f64 {
        if self.share_batches {
            2.0
        } else {
            1.0
        }
    }

    /// `b_k` for the SGD estimator given the rolling iterate differences.
    pub fn batch_at(&self, k: usize, n: Option<usize>, dx_k_sq: f64, dx_km1_sq: f64) -> Result<usize> {
        let clamp = |b: f64| -> usize {
            let b = b.max(1.0);
            match n {
                Some(n) => b.min(n as f64) as usize,
                None => b.min(usize::MAX as f64) as usize,
            }
        };
        Ok(match self.schedule.unwrap_or(BatchSchedule::Constant) {
            BatchSchedule::Constant => self.batch,
            BatchSchedule::Polynomial { scale, power } => {
                let n = n.ok_or_else(|| {
                    Error::Unsupported("polynomial schedule needs a finite sum".into())
                })?;
                clamp(floor_robust(scale * n as f64 * ((k + 1) as f64).powf(power)))
            }
            BatchSchedule::Linear { base } => clamp(ceil_robust(base * (k + 1) as f64)),
            BatchSchedule::Adaptive {
                sigma2,
                delta0,
                lipschitz,
            } => {
                let l2 = lipschitz * lipschitz;
                let delta = delta0 / ((k + 1) as f64).powi(2);
                let denom = 0.5 * l2 * dx_k_sq + 0.5 * l2 * dx_km1_sq + delta;
                if denom <= 0.0 {
                    clamp(f64::INFINITY)
                } else {
                    clamp(ceil_robust(sigma2 / denom))
                }
            }
        })
    }

    pub fn validate(&self, kind: EstimatorKind, n: Option<usize>) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("{kind}: {m}")));
        if self.batch < 1 {
            return bad("batch size must be >= 1");
        }
        if let Some(n) = n {
            if self.batch > n && kind != EstimatorKind::FullBatch {
                return bad("batch size exceeds n");
            }
            if self.hat_size() > n {
                return bad("hat batch size exceeds n");
            }
        }
        if self.hat_size() < 1 {
            return bad("hat batch size must be >= 1");
        }
        let uses_p = matches!(
            kind,
            EstimatorKind::LSvrg | EstimatorKind::LSarah | EstimatorKind::HybridSvrg
        );
        if uses_p && !(self.p_switch > 0.0 && self.p_switch <= 1.0) {
            return bad("switch probability must lie in (0, 1]");
        }
        let uses_omega = matches!(kind, EstimatorKind::HybridSgd | EstimatorKind::HybridSvrg);
        if uses_omega && !(self.omega > 0.0 && self.omega <= 1.0) {
            return bad("omega must lie in (0, 1]");
        }
        if let AnchorMode::MegaBatch { size, growth } = self.anchor {
            if size < 1 || !(growth >= 0.0) {
                return bad("mega-batch size must be >= 1 with growth >= 0");
            }
        }
        if !(self.mu > 0.0) {
            return bad("mu must be positive");
        }
        if let Some(s) = self.schedule {
            let ok = match s {
                BatchSchedule::Constant => true,
                BatchSchedule::Polynomial { scale, power } => scale > 0.0 && power >= 0.0,
                BatchSchedule::Linear { base } => base > 0.0,
                BatchSchedule::Adaptive {
                    sigma2,
                    delta0,
                    lipschitz,
                } => sigma2 >= 0.0 && delta0 > 0.0 && lipschitz >= 0.0,
            };
            if !ok {
                return bad("invalid batch schedule parameters");
            }
        }
        Ok(())
    }
}

/// `⌊v⌋` tolerant of values a few ulps below an integer.
pub(crate) fn floor_robust(v: f64) -> f64 {
    (v + 1e-9 * v.abs().max(1.0)).floor()
}

/// `⌈v⌉` tolerant of values a few ulps above an integer.
pub(crate) fn ceil_robust(v: f64) -> f64 {
    (v - 1e-9 * v.abs().max(1.0)).ceil()
}
