//! Recursion constants `(τ, κ, Θ, Θ̂, δ_k)` for each estimator.

use serde::Serialize;

use super::{AnchorMode, BatchSchedule, EstimatorKind, EstimatorParams};

/// Sizes entering a variance term `σ²/size_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SizeRule {
    Fixed(f64),
    /// `⌈size·(k+1)^growth⌉`.
    Growing { size: f64, growth: f64 },
    /// SGD schedule with constant fallback `batch`.
    Schedule {
        schedule: BatchSchedule,
        batch: usize,
        n: Option<usize>,
    },
}

impl SizeRule {
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            SizeRule::Fixed(s) => s,
            SizeRule::Growing { size, growth } => (size * ((k + 1) as f64).powf(growth)).ceil(),
            SizeRule::Schedule { schedule, batch, n } => {
                let p = EstimatorParams {
                    batch,
                    schedule: Some(schedule),
                    ..EstimatorParams::default()
                };
                p.batch_at(k, n, 0.0, 0.0).map(|b| b as f64).unwrap_or(batch as f64)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DeltaRule {
    Zero,
    /// `δ_k = δ₀/(k+1)²`.
    InverseSquare { delta0: f64 },
    /// `δ_k = coef·σ²/size_k` for a supplied variance `σ²`.
    VarianceOver { coef: f64, sizes: SizeRule },
}

impl DeltaRule {
    pub fn delta_k(&self, k: usize, sigma2: f64) -> f64 {
        match *self {
            DeltaRule::Zero => 0.0,
            DeltaRule::InverseSquare { delta0 } => delta0 / ((k + 1) as f64).powi(2),
            DeltaRule::VarianceOver { coef, sizes } => {
                let s = sizes.at(k);
                if coef == 0.0 || s.is_infinite() {
                    0.0
                } else {
                    coef * sigma2 / s
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum CardConvention {
    /// Per-estimator constants.
    #[default]
    Stated,
    /// Looser SARAH constants used for step-size bounds: `κ = p/2`, `Θ = 8L²/b`, `Θ̂ = 2L²/b`.
    Simplified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryCard {
    pub tau: f64,
    pub kappa: f64,
    pub theta: f64,
    pub theta_hat: f64,
    pub delta: DeltaRule,
    pub biased: bool,
}

impl TheoryCard {
    pub fn full_batch() -> Self {
        Self {
            tau: 1.0,
            kappa: 1.0,
            theta: 0.0,
            theta_hat: 0.0,
            delta: DeltaRule::Zero,
            biased: false,
        }
    }

    pub fn sgd(l: f64, delta: DeltaRule) -> Self {
        Self {
            tau: 1.0,
            kappa: 1.0,
            theta: 0.5 * l * l,
            theta_hat: 0.5 * l * l,
            delta,
            biased: false,
        }
    }

    /// `mega = None` for an exact anchor.
    pub fn svrg(p: f64, b: f64, l: f64, mega: Option<(f64, SizeRule)>) -> Self {
        let (m, delta) = match mega {
            None => (0.0, DeltaRule::Zero),
            Some((mu, sizes)) => (
                mu,
                DeltaRule::VarianceOver {
                    coef: (1.0 + mu) * p / (2.0 * mu),
                    sizes,
                },
            ),
        };
        let l2 = l * l;
        Self {
            tau: 1.0,
            kappa: p / 2.0,
            theta: 16.0 * (1.0 + m) * l2 / (b * p),
            theta_hat: 4.0 * (1.0 + m) * l2 / (b * p),
            delta,
            biased: false,
        }
    }

    pub fn saga(b: f64, n: f64, l: f64) -> Self {
        let l2 = l * l;
        Self {
            tau: 1.0,
            kappa: b / (2.0 * n),
            theta: 16.0 * l2 * n / (b * b),
            theta_hat: 4.0 * l2 * n / (b * b),
            delta: DeltaRule::Zero,
            biased: false,
        }
    }

    pub fn sarah(p: f64, b: f64, l: f64, anchor_sizes: Option<SizeRule>) -> Self {
        let l2 = l * l;
        Self {
            tau: p,
            kappa: p,
            theta: 8.0 * (1.0 - p) * l2 / b,
            theta_hat: 2.0 * (1.0 - p) * l2 / b,
            delta: variance_delta(p, anchor_sizes),
            biased: true,
        }
    }

    pub fn sarah_simplified(p: f64, b: f64, l: f64, anchor_sizes: Option<SizeRule>) -> Self {
        let l2 = l * l;
        Self {
            tau: p,
            kappa: p / 2.0,
            theta: 8.0 * l2 / b,
            theta_hat: 2.0 * l2 / b,
            delta: variance_delta(p, anchor_sizes),
            biased: true,
        }
    }

    /// `σ²` supplied to `delta_k` is the per-sample variance of `2G_ξ x^k - G_ξ x^{k-1}`.
    pub fn hybrid_sgd(omega: f64, b: f64, b_hat: f64, l: f64, c: f64) -> Self {
        let l2 = l * l;
        let w1 = (1.0 - omega).powi(2);
        Self {
            tau: omega,
            kappa: omega * (2.0 - omega),
            theta: 8.0 * c * w1 * l2 / b,
            theta_hat: 2.0 * c * w1 * l2 / b,
            delta: DeltaRule::VarianceOver {
                coef: c * omega * omega,
                sizes: SizeRule::Fixed(b_hat),
            },
            biased: true,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn hybrid_svrg(
        omega: f64,
        p: f64,
        b: f64,
        b_hat: f64,
        l: f64,
        c: f64,
        mega: Option<(f64, SizeRule)>,
    ) -> Self {
        let (m, delta) = match mega {
            None => (0.0, DeltaRule::Zero),
            Some((mu, sizes)) => (
                mu,
                DeltaRule::VarianceOver {
                    coef: 2.0 * (1.0 + mu) * omega * omega / mu,
                    sizes,
                },
            ),
        };
        let bracket =
            c * (1.0 - omega).powi(2) / b + 8.0 * (1.0 + m) * omega * omega / (b_hat * p * p);
        let l2 = l * l;
        Self {
            tau: omega,
            kappa: (omega * (2.0 - omega)).min(p / 4.0),
            theta: 8.0 * l2 * bracket,
            theta_hat: 2.0 * l2 * bracket,
            delta,
            biased: true,
        }
    }
}

fn variance_delta(coef: f64, sizes: Option<SizeRule>) -> DeltaRule {
    match sizes {
        None => DeltaRule::Zero,
        Some(sizes) => DeltaRule::VarianceOver { coef, sizes },
    }
}

fn anchor_sizes(anchor: AnchorMode) -> Option<SizeRule> {
    match anchor {
        AnchorMode::Exact => None,
        AnchorMode::MegaBatch { size, growth } => Some(SizeRule::Growing {
            size: size as f64,
            growth,
        }),
    }
}

/// Card for `params`. `l` is the average-Lipschitz constant.
pub fn theory_card(
    kind: EstimatorKind,
    params: &EstimatorParams,
    l: f64,
    n: Option<usize>,
    convention: CardConvention,
) -> TheoryCard {
    let b = params.batch as f64;
    let p = params.p_switch;
    let mega = anchor_sizes(params.anchor).map(|s| (params.mu, s));
    match kind {
        EstimatorKind::FullBatch => TheoryCard::full_batch(),
        EstimatorKind::SgdIncreasing => {
            let delta = match params.schedule {
                Some(BatchSchedule::Adaptive { delta0, .. }) => DeltaRule::InverseSquare { delta0 },
                Some(schedule) => DeltaRule::VarianceOver {
                    coef: 1.0,
                    sizes: SizeRule::Schedule {
                        schedule,
                        batch: params.batch,
                        n,
                    },
                },
                None => DeltaRule::VarianceOver {
                    coef: 1.0,
                    sizes: SizeRule::Fixed(b),
                },
            };
            TheoryCard::sgd(l, delta)
        }
        EstimatorKind::LSvrg => TheoryCard::svrg(p, b, l, mega),
        EstimatorKind::Saga => TheoryCard::saga(b, n.unwrap_or(params.batch) as f64, l),
        EstimatorKind::LSarah => match convention {
            CardConvention::Stated => TheoryCard::sarah(p, b, l, anchor_sizes(params.anchor)),
            CardConvention::Simplified => {
                TheoryCard::sarah_simplified(p, b, l, anchor_sizes(params.anchor))
            }
        },
        EstimatorKind::HybridSgd => TheoryCard::hybrid_sgd(
            params.omega,
            b,
            params.hat_size() as f64,
            l,
            params.sharing_factor(),
        ),
        EstimatorKind::HybridSvrg => TheoryCard::hybrid_svrg(
            params.omega,
            p,
            b,
            params.hat_size() as f64,
            l,
            params.sharing_factor(),
            mega,
        ),
    }
}
