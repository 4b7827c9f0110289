//! Parameter profiles: literal experiment choices and unit-constant theory scalings.

use serde::{Deserialize, Serialize};

use super::{
    ceil_robust, floor_robust, AnchorMode, BatchSchedule, EstimatorKind, EstimatorParams, Setting,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Auc,
    PolicyEval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Theory,
    Experiment(Family),
}

/// Step size written as `η = 1/(c·L)` or an absolute value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaRule {
    Absolute(f64),
    OverL(f64),
}

impl EtaRule {
    pub fn resolve(&self, lipschitz: f64) -> f64 {
        match *self {
            EtaRule::Absolute(v) => v,
            EtaRule::OverL(c) => 1.0 / (c * lipschitz),
        }
    }
}

impl std::str::FromStr for EtaRule {
    type Err = Error;

    /// Accepts `"0.1"`, `"1/5L"`, `"1/(5L)"`, `"1/L"`.
    fn from_str(s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if let Ok(v) = t.parse::<f64>() {
            return Ok(EtaRule::Absolute(v));
        }
        let bad = || Error::Config(format!("cannot parse step size {s:?}"));
        let rest = t.strip_prefix("1/").ok_or_else(bad)?;
        let rest = rest
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .unwrap_or(rest);
        let c = rest.strip_suffix('L').ok_or_else(bad)?;
        let c = if c.is_empty() {
            1.0
        } else {
            c.strip_suffix('*').unwrap_or(c).parse::<f64>().map_err(|_| bad())?
        };
        if !(c > 0.0) {
            return Err(bad());
        }
        Ok(EtaRule::OverL(c))
    }
}

/// Step sizes used with the experiment profile.
pub fn experiment_eta(kind: EstimatorKind, family: Family) -> EtaRule {
    use EstimatorKind::*;
    let c = match (family, kind) {
        (Family::Auc, LSvrg) => 5.0,
        (Family::Auc, Saga) => 14.0,
        (Family::Auc, SgdIncreasing) => 2.0,
        (Family::Auc, LSarah) => 3.5,
        (Family::Auc, HybridSgd) => 1.5,
        (Family::Auc, HybridSvrg) => 5.5,
        (Family::PolicyEval, LSvrg | Saga | SgdIncreasing) => 2.0,
        (Family::PolicyEval, LSarah | HybridSgd | HybridSvrg) => 8.0,
        (_, FullBatch) => 2.0,
    };
    EtaRule::OverL(c)
}

fn clamp_batch(b: f64, n: Option<usize>) -> usize {
    let b = b.max(1.0);
    match n {
        Some(n) => b.min(n as f64) as usize,
        None => b as usize,
    }
}

/// `n` is required in setting F; `epsilon` in setting E.
pub fn default_params(
    kind: EstimatorKind,
    n: Option<usize>,
    setting: Setting,
    epsilon: Option<f64>,
    profile: Profile,
) -> Result<EstimatorParams> {
    use EstimatorKind::*;
    let base = EstimatorParams::default();
    match (profile, setting) {
        (Profile::Experiment(family), Setting::F) => {
            let n = n.ok_or_else(|| Error::invalid("experiment profile needs n"))?;
            let nf = n as f64;
            let half = clamp_batch(floor_robust(0.5 * nf.powf(2.0 / 3.0)), Some(n));
            let quarter = clamp_batch(floor_robust(0.25 * nf.powf(0.75)), Some(n));
            Ok(match kind {
                FullBatch => base.with_batch(n),
                LSvrg => base.with_batch(half).with_p(nf.powf(-1.0 / 3.0).min(1.0)),
                Saga => base.with_batch(half),
                SgdIncreasing => base.with_schedule(BatchSchedule::Polynomial {
                    scale: match family {
                        Family::Auc => 0.01,
                        Family::PolicyEval => 0.025,
                    },
                    power: 0.75,
                }),
                LSarah => base.with_batch(quarter).with_p(nf.powf(-0.25).min(1.0)),
                HybridSgd => base.with_batch(quarter).with_omega(0.5),
                HybridSvrg => base
                    .with_batch(quarter)
                    .with_p(nf.powf(-1.0 / 3.0).min(1.0))
                    .with_omega(0.5),
            })
        }
        (Profile::Experiment(_), Setting::E) => Err(Error::Unsupported(
            "the experiment profile is defined for finite sums only".into(),
        )),
        (Profile::Theory, Setting::F) => {
            let n = n.ok_or_else(|| Error::invalid("theory profile needs n in setting F"))?;
            let nf = n as f64;
            let nn = Some(n);
            Ok(match kind {
                FullBatch => base.with_batch(n),
                SgdIncreasing => base.with_schedule(BatchSchedule::Linear { base: 1.0 }),
                LSvrg => base
                    .with_batch(clamp_batch(ceil_robust(nf.powf(2.0 / 3.0)), nn))
                    .with_p(nf.powf(-1.0 / 3.0).min(1.0)),
                Saga => base.with_batch(clamp_batch(
                    ceil_robust(40f64.cbrt() * nf.powf(2.0 / 3.0)),
                    nn,
                )),
                LSarah => base
                    .with_batch(clamp_batch(ceil_robust(nf.powf(0.75)), nn))
                    .with_p(nf.powf(-0.25).min(1.0)),
                HybridSgd => base
                    .with_batch(clamp_batch(ceil_robust(nf.powf(0.75)), nn))
                    .with_omega(nf.powf(-0.25).min(1.0)),
                HybridSvrg => base
                    .with_batch(clamp_batch(ceil_robust(nf.powf(0.75)), nn))
                    .with_p(nf.powf(-0.25).min(1.0))
                    .with_omega(0.5),
            })
        }
        (Profile::Theory, Setting::E) => {
            let eps = epsilon
                .filter(|e| *e > 0.0 && *e <= 1.0)
                .ok_or_else(|| Error::invalid("theory profile in setting E needs epsilon in (0, 1]"))?;
            let mega = |pow: f64| AnchorMode::MegaBatch {
                size: clamp_batch(ceil_robust(eps.powf(-pow)), None),
                growth: 0.0,
            };
            let b = |pow: f64| clamp_batch(ceil_robust(eps.powf(-pow)), None);
            let mut p = match kind {
                FullBatch | Saga => {
                    return Err(Error::Unsupported(format!(
                        "{kind} needs a finite sum"
                    )))
                }
                SgdIncreasing => base.with_schedule(BatchSchedule::Linear { base: 1.0 }),
                LSvrg => base.with_batch(b(4.0 / 3.0)).with_p(eps.powf(2.0 / 3.0)),
                LSarah => base.with_batch(b(3.0)).with_p(eps),
                HybridSgd => base.with_batch(b(3.0)).with_omega(eps),
                HybridSvrg => base.with_batch(b(3.0)).with_p(eps).with_omega(eps),
            };
            p.anchor = match kind {
                LSvrg => mega(2.0),
                LSarah => mega(4.0),
                HybridSvrg => mega(3.0),
                _ => AnchorMode::Exact,
            };
            Ok(p)
        }
    }
}
