//! Monte-Carlo and exact-enumeration checks of the estimator definitions.
//!
//! Conditional expectations given the past are realised by freezing the
//! estimator state and the iterates, then randomising only the next step.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{
    theory_card, AnchorMode, CardConvention, EstimatorKind, EstimatorParams, EstimatorState,
    Script, TheoryCard,
};
use crate::inclusion::{FiniteSumOperator, Forward, Point};
use crate::linalg;
use crate::par::{self, Execution};
use crate::rng;

pub const DEFAULT_THRESHOLD: f64 = 4.0;
pub const ENUMERATION_TOL: f64 = 1e-12;
/// Upper bound on enumerated outcome paths.
pub const MAX_PATHS: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CheckMode {
    MonteCarlo,
    Enumeration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub name: String,
    pub mode: CheckMode,
    /// Trials, or outcome paths for enumeration.
    pub trials: usize,
    pub mean: Vec<f64>,
    pub mean_norm: f64,
    pub std_error: f64,
    pub target: Vec<f64>,
    pub target_norm: f64,
    /// Two-sided: `||mean - target|| / SE`. One-sided: `(mean - target) / SE`.
    pub margin_sigmas: f64,
    pub threshold: f64,
    pub one_sided: bool,
    pub pass: bool,
    /// Variance checks: one-sided margin of `E[||e^k||²] <= E[Δ_k]`.
    pub second_moment_margin: Option<f64>,
    /// Variance checks: one-sided margin of the recursion for `E[Δ_k]`.
    pub recursion_margin: Option<f64>,
}

impl McReport {
    /// `name, trials, mean_norm, se, target_norm, margin_sigmas, pass`
    pub fn to_line(&self) -> String {
        format!(
            "{}, {}, {:.6e}, {:.6e}, {:.6e}, {:.3}, {}",
            self.name,
            self.trials,
            self.mean_norm,
            self.std_error,
            self.target_norm,
            self.margin_sigmas,
            self.pass
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    pub trials: usize,
    pub seed: u64,
    pub threshold: f64,
    pub exec: Execution,
    /// Trials per reduction chunk.
    pub chunk: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trials: 100_000,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            exec: Execution::Parallel,
            chunk: 1024,
        }
    }
}

impl VerifyConfig {
    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Shifted sums of a vector quantity.
#[derive(Debug, Clone)]
struct Moments {
    count: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl Moments {
    fn new(m: usize) -> Self {
        Self {
            count: 0,
            sum: vec![0.0; m],
            sumsq: vec![0.0; m],
        }
    }

    fn push(&mut self, d: &[f64]) {
        self.count += 1;
        for ((s, q), v) in self.sum.iter_mut().zip(self.sumsq.iter_mut()).zip(d) {
            *s += v;
            *q += v * v;
        }
    }

    fn merge(&mut self, o: &Moments) {
        self.count += o.count;
        for (a, b) in self.sum.iter_mut().zip(&o.sum) {
            *a += b;
        }
        for (a, b) in self.sumsq.iter_mut().zip(&o.sumsq) {
            *a += b;
        }
    }

    fn mean(&self) -> Vec<f64> {
        let t = self.count as f64;
        self.sum.iter().map(|s| s / t).collect()
    }

    /// Per-component sample variances.
    fn variances(&self) -> Vec<f64> {
        let t = self.count as f64;
        if self.count < 2 {
            return vec![0.0; self.sum.len()];
        }
        self.sum
            .iter()
            .zip(&self.sumsq)
            .map(|(s, q)| ((q - s * s / t) / (t - 1.0)).max(0.0))
            .collect()
    }

    /// `sqrt(Σ_j s_j²) / sqrt(T)`.
    fn std_error(&self) -> f64 {
        (self.variances().iter().sum::<f64>() / self.count as f64).sqrt()
    }
}

/// Runs `f(trial_seed)` for each trial and reduces `f - shift` in fixed chunks.
fn monte_carlo<F>(cfg: &VerifyConfig, m: usize, shift: &[f64], f: F) -> Result<Moments>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync + Send,
{
    if cfg.trials < 2 {
        return Err(Error::invalid("need at least two trials"));
    }
    let chunk = cfg.chunk.max(1);
    let chunks = cfg.trials.div_ceil(chunk);
    let base = rng::derive_seed(cfg.seed, rng::streams::TRIAL);
    let parts = par::map_indexed(cfg.exec, chunks, |c| -> Result<Moments> {
        let mut mo = Moments::new(m);
        let mut d = vec![0.0; m];
        for t in c * chunk..((c + 1) * chunk).min(cfg.trials) {
            let q = f(rng::derive_seed(base, t as u64))?;
            for ((dj, qj), sj) in d.iter_mut().zip(&q).zip(shift) {
                *dj = qj - sj;
            }
            mo.push(&d);
        }
        Ok(mo)
    });
    let mut total = Moments::new(m);
    for p in parts {
        total.merge(&p?);
    }
    Ok(total)
}

/// Probability-weighted sum of `f` over every outcome path.
fn enumerate<F>(m: usize, f: F) -> Result<(Vec<f64>, usize)>
where
    F: Fn(Script) -> Result<(Vec<f64>, Script)>,
{
    let mut acc = vec![0.0; m];
    let mut prefix = Vec::new();
    let mut paths = 0;
    let mut total_p = 0.0;
    loop {
        let (q, s) = f(Script::from_prefix(prefix))?;
        for (a, v) in acc.iter_mut().zip(&q) {
            *a += s.probability * v;
        }
        total_p += s.probability;
        paths += 1;
        if paths > MAX_PATHS {
            return Err(Error::invalid("too many outcome paths to enumerate"));
        }
        match s.successor() {
            Some(p) => prefix = p,
            None => break,
        }
    }
    debug_assert!((total_p - 1.0).abs() < 1e-9);
    Ok((acc, paths))
}

fn two_sided(
    name: String,
    mode: CheckMode,
    trials: usize,
    mean: Vec<f64>,
    se: f64,
    target: Vec<f64>,
    threshold: f64,
    tol: f64,
) -> McReport {
    let diff = linalg::dist_sq(&mean, &target).sqrt();
    let margin = if se > 0.0 {
        diff / se
    } else if diff <= tol {
        0.0
    } else {
        f64::INFINITY
    };
    McReport {
        name,
        mode,
        trials,
        mean_norm: linalg::norm(&mean),
        mean,
        std_error: se,
        target_norm: linalg::norm(&target),
        target,
        margin_sigmas: margin,
        threshold,
        one_sided: false,
        pass: margin <= threshold,
        second_moment_margin: None,
        recursion_margin: None,
    }
}

fn signed_margin(diff: f64, se: f64, scale: f64) -> f64 {
    let tol = 1e-12 * scale.max(1e-300);
    if se > 0.0 {
        diff / se
    } else if diff > tol {
        f64::INFINITY
    } else if diff < -tol {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

/// Estimator state before step `k` together with `(x^k, x^{k-1}, x^{k-2})`.
#[derive(Debug, Clone)]
pub struct FrozenHistory {
    pub state: EstimatorState,
    pub x_k: Point,
    pub x_km1: Point,
    pub x_km2: Point,
}

impl FrozenHistory {
    pub fn new(state: EstimatorState, x_k: Point, x_km1: Point, x_km2: Point) -> Self {
        Self {
            state,
            x_k,
            x_km1,
            x_km2,
        }
    }

    /// Builds the state at `trajectory[0]` and steps it through `trajectory[1..k]`, `k = len - 1`.
    pub fn warm(
        kind: EstimatorKind,
        params: EstimatorParams,
        forward: &Forward,
        trajectory: &[Point],
        seed: u64,
    ) -> Result<Self> {
        let k = trajectory
            .len()
            .checked_sub(1)
            .filter(|&k| k >= 1)
            .ok_or_else(|| Error::invalid("trajectory needs at least two points"))?;
        let mut st = EstimatorState::new(
            kind,
            params,
            forward.clone(),
            trajectory[0].clone(),
            seed,
            Execution::Sequential,
        )?;
        let at = |j: isize| trajectory[j.max(0) as usize].clone();
        for j in 1..k as isize {
            st.step(&at(j), &at(j - 1), &at(j - 2))?;
        }
        let k = k as isize;
        Ok(Self::new(st, at(k), at(k - 1), at(k - 2)))
    }

    fn exact(&self, x: &[f64]) -> Result<Point> {
        let mut g = Point::zeros(x.len());
        self.state.forward().exact_mean(x, &mut g)?;
        Ok(g)
    }

    /// `S^k = 2Gx^k - Gx^{k-1}`.
    pub fn s_k(&self) -> Result<Point> {
        let a = self.exact(&self.x_k)?;
        let b = self.exact(&self.x_km1)?;
        Ok(a.iter().zip(b.iter()).map(|(a, b)| 2.0 * a - b).collect::<Vec<_>>().into())
    }

    /// `e^{k-1} = S̃^{k-1} - S^{k-1}`.
    pub fn e_prev(&self) -> Result<Point> {
        let a = self.exact(&self.x_km1)?;
        let b = self.exact(&self.x_km2)?;
        Ok(self
            .state
            .current()
            .iter()
            .zip(a.iter().zip(b.iter()))
            .map(|(s, (a, b))| s - (2.0 * a - b))
            .collect::<Vec<_>>()
            .into())
    }

    fn step_error(&self, st: &mut EstimatorState, s_k: &[f64]) -> Result<Vec<f64>> {
        let (s, _) = st.step(&self.x_k, &self.x_km1, &self.x_km2)?;
        Ok(s.iter().zip(s_k).map(|(a, b)| a - b).collect())
    }

    fn mc_error(&self, cfg: &VerifyConfig, target: &[f64]) -> Result<Moments> {
        let s_k = self.s_k()?;
        monte_carlo(cfg, s_k.dim(), target, |seed| {
            let mut st = self.state.clone();
            st.reseed(seed);
            self.step_error(&mut st, &s_k)
        })
    }

    fn exact_error(&self) -> Result<(Vec<f64>, usize)> {
        let s_k = self.s_k()?;
        enumerate(s_k.dim(), |script| {
            let mut st = self.state.clone();
            st.set_script(script);
            let e = self.step_error(&mut st, &s_k)?;
            Ok((e, st.script().cloned().unwrap_or_default()))
        })
    }
}

fn require_unbiased(kind: EstimatorKind) -> Result<()> {
    if kind.is_biased() {
        return Err(Error::invalid(format!("{kind} is a biased estimator")));
    }
    Ok(())
}

fn require_biased(kind: EstimatorKind) -> Result<()> {
    if !kind.is_biased() {
        return Err(Error::invalid(format!("{kind} is an unbiased estimator")));
    }
    Ok(())
}

/// `E[e^k | F_k] = 0` by Monte Carlo.
pub fn check_unbiased(history: &FrozenHistory, cfg: &VerifyConfig) -> Result<McReport> {
    let kind = history.state.kind();
    require_unbiased(kind)?;
    let m = history.state.dim();
    let target = vec![0.0; m];
    let mo = history.mc_error(cfg, &target)?;
    Ok(two_sided(
        format!("unbiased/{kind}"),
        CheckMode::MonteCarlo,
        mo.count,
        mo.mean(),
        mo.std_error(),
        target,
        cfg.threshold,
        ENUMERATION_TOL,
    ))
}

/// `E[e^k | F_k] = 0` summed exactly over every batch and switch outcome.
pub fn check_unbiased_exact(history: &FrozenHistory) -> Result<McReport> {
    let kind = history.state.kind();
    require_unbiased(kind)?;
    let (mean, paths) = history.exact_error()?;
    let target = vec![0.0; mean.len()];
    Ok(two_sided(
        format!("unbiased-exact/{kind}"),
        CheckMode::Enumeration,
        paths,
        mean,
        0.0,
        target,
        DEFAULT_THRESHOLD,
        ENUMERATION_TOL,
    ))
}

fn bias_target(history: &FrozenHistory) -> Result<Vec<f64>> {
    let st = &history.state;
    let card = theory_card(
        st.kind(),
        st.params(),
        1.0,
        st.num_components(),
        CardConvention::Stated,
    );
    let e = history.e_prev()?;
    Ok(e.iter().map(|v| (1.0 - card.tau) * v).collect())
}

/// `E[e^k | F_k] = (1-τ) e^{k-1}` by Monte Carlo.
pub fn check_bias_recursion(history: &FrozenHistory, cfg: &VerifyConfig) -> Result<McReport> {
    let kind = history.state.kind();
    require_biased(kind)?;
    let target = bias_target(history)?;
    let mo = history.mc_error(cfg, &target)?;
    let mean: Vec<f64> = mo.mean().iter().zip(&target).map(|(d, t)| d + t).collect();
    Ok(two_sided(
        format!("bias/{kind}"),
        CheckMode::MonteCarlo,
        mo.count,
        mean,
        mo.std_error(),
        target,
        cfg.threshold,
        ENUMERATION_TOL,
    ))
}

/// `E[e^k | F_k] = (1-τ) e^{k-1}` summed exactly over every outcome.
pub fn check_bias_recursion_exact(history: &FrozenHistory) -> Result<McReport> {
    let kind = history.state.kind();
    require_biased(kind)?;
    let target = bias_target(history)?;
    let (mean, paths) = history.exact_error()?;
    Ok(two_sided(
        format!("bias-exact/{kind}"),
        CheckMode::Enumeration,
        paths,
        mean,
        0.0,
        target,
        DEFAULT_THRESHOLD,
        ENUMERATION_TOL,
    ))
}

/// Component values `G_i x` for all `i`, row-major.
fn components(op: &dyn FiniteSumOperator, x: &[f64]) -> Vec<f64> {
    let p = op.dim();
    let mut out = vec![0.0; op.num_components() * p];
    for (i, r) in out.chunks_mut(p).enumerate() {
        op.eval_component(i, x, r);
    }
    out
}

/// `(1/n) Σ_i ||a_i - c_i||²` over row-major blocks.
fn mean_sq_dist(a: &[f64], c: &[f64], p: usize) -> f64 {
    let n = a.len() / p;
    linalg::dist_sq(a, c) / n as f64
}

/// Per-sample variance `(1/n) Σ ||a_i - mean(a)||²`.
fn sample_variance(a: &[f64], p: usize) -> f64 {
    let n = a.len() / p;
    let mut mean = vec![0.0; p];
    for r in a.chunks(p) {
        linalg::axpy(1.0, r, &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    a.chunks(p).map(|r| linalg::dist_sq(r, &mean)).sum::<f64>() / n as f64
}

fn reflect_rows(gk: &[f64], gkm1: &[f64]) -> Vec<f64> {
    gk.iter().zip(gkm1).map(|(a, b)| 2.0 * a - b).collect()
}

/// SVRG-type `Δ̂ = (1/b)(1/n) Σ ||2G_i x - G_i x' - G_i w||²`, inflated for mega-batch anchors.
fn svrg_delta(a: &[f64], gw: &[f64], p: usize, b: f64, anchor: &SvrgAnchor, k: usize) -> f64 {
    let hat = mean_sq_dist(a, gw, p) / b;
    match anchor {
        SvrgAnchor::Exact => hat,
        SvrgAnchor::Mega { mu, sigma2, mode } => {
            let nk = mode.mega_size(k).unwrap_or(1) as f64;
            (1.0 + mu) * hat + (1.0 + mu) * sigma2 / (mu * nk)
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum SvrgAnchor {
    Exact,
    Mega { mu: f64, sigma2: f64, mode: AnchorMode },
}

/// Inputs of the variance-recursion check.
#[derive(Debug, Clone)]
pub struct VarianceCheck<'a> {
    pub kind: EstimatorKind,
    pub params: EstimatorParams,
    pub forward: &'a Forward,
    /// `x^0, …, x^k` with `k >= 2` (`k >= 3` for SAGA).
    pub trajectory: &'a [Point],
    /// Average-Lipschitz constant used for the card.
    pub lipschitz: f64,
    pub convention: CardConvention,
    /// Variance entering `δ_k`; computed from the components when `None`.
    pub sigma2: Option<f64>,
    pub warmup_seed: u64,
}

/// `E[||e^k||²] <= E[Δ_k] <= (1-κ)Δ_{k-1} + Θ||x^k - x^{k-1}||² + Θ̂||x^{k-1} - x^{k-2}||² + δ_k`,
/// both one-sided at `threshold` standard errors.
pub fn check_variance_recursion(input: &VarianceCheck<'_>, cfg: &VerifyConfig) -> Result<McReport> {
    let op = match input.forward {
        Forward::FiniteSum(op) => op.clone(),
        Forward::Expectation(_) => {
            return Err(Error::Unsupported(
                "variance check needs a finite-sum operator".into(),
            ))
        }
    };
    let kind = input.kind;
    let n = op.num_components();
    let p = op.dim();
    let traj = input.trajectory;
    let k = traj.len().saturating_sub(1);
    let min_k = if kind == EstimatorKind::Saga { 3 } else { 2 };
    if k < min_k {
        return Err(Error::invalid(format!(
            "{kind} variance check needs a trajectory of at least {} points",
            min_k + 1
        )));
    }
    let params = input.params.clone();
    let card: TheoryCard = theory_card(kind, &params, input.lipschitz, Some(n), input.convention);

    let g: Vec<Vec<f64>> = (0..=k).map(|j| components(op.as_ref(), &traj[j])).collect();
    // a_j = 2G x^j - G x^{j-1}, per component
    let a_k = reflect_rows(&g[k], &g[k - 1]);
    let a_km1 = reflect_rows(&g[k - 1], &g[k - 2]);
    let v_k = sample_variance(&a_k, p);
    let dx_k = linalg::dist_sq(&traj[k], &traj[k - 1]);
    let dx_km1 = linalg::dist_sq(&traj[k - 1], &traj[k - 2]);

    let history = if kind == EstimatorKind::Saga {
        FrozenHistory::warm(kind, params.clone(), input.forward, &traj[..k], input.warmup_seed)?
    } else {
        FrozenHistory::warm(kind, params.clone(), input.forward, traj, input.warmup_seed)?
    };
    let s_k = {
        let mut mean = vec![0.0; p];
        for r in a_k.chunks(p) {
            linalg::axpy(1.0, r, &mut mean);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        mean
    };

    let s_norm_sq = linalg::dot(&s_k, &s_k);
    let b = params.batch as f64;
    let b_hat = params.hat_size() as f64;
    let omega = params.omega;
    let pp = params.p_switch;
    let var_at = |x: &[f64]| sample_variance(&components(op.as_ref(), x), p);
    let anchor = match params.anchor {
        AnchorMode::Exact => SvrgAnchor::Exact,
        mode => {
            let w_prev = history.state.snapshot().cloned().unwrap_or_else(|| traj[0].clone());
            let sigma2 = input
                .sigma2
                .unwrap_or_else(|| var_at(&traj[k - 1]).max(var_at(&w_prev)));
            SvrgAnchor::Mega {
                mu: params.mu,
                sigma2,
                mode,
            }
        }
    };
    let sigma2_delta = input.sigma2.unwrap_or(match (kind, anchor) {
        (_, SvrgAnchor::Mega { sigma2, .. }) => sigma2,
        _ => v_k,
    });
    let delta_k = card.delta.delta_k(k, sigma2_delta);

    // Δ_{k-1} and a per-trial sampler returning (||e^k||², Δ_k).
    type Sampler<'s> = Box<dyn Fn(&mut EstimatorState) -> Result<(f64, f64)> + Sync + Send + 's>;
    let err_sq = |s: &Point| linalg::dist_sq(s, &s_k);
    let e_prev_sq = if kind == EstimatorKind::Saga {
        0.0
    } else {
        history.e_prev()?.iter().map(|v| v * v).sum::<f64>()
    };
    let (xk, xkm1, xkm2) = (traj[k].clone(), traj[k - 1].clone(), traj[k - 2].clone());
    let step = move |st: &mut EstimatorState| -> Result<f64> {
        let (s, _) = st.step(&xk, &xkm1, &xkm2)?;
        Ok(err_sq(s))
    };

    let (delta_prev, sampler): (f64, Sampler) = match kind {
        EstimatorKind::FullBatch => (0.0, Box::new(move |st| Ok((step(st)?, 0.0)))),
        EstimatorKind::SgdIncreasing => {
            let sigma2 = match params.schedule {
                Some(crate::estimators::BatchSchedule::Adaptive { sigma2, .. }) => sigma2,
                _ => v_k,
            };
            let bk = params.batch_at(k, Some(n), dx_k, dx_km1)? as f64;
            let bkm1 = params.batch_at(
                k - 1,
                Some(n),
                dx_km1,
                linalg::dist_sq(&traj[k - 2], &traj[k.saturating_sub(3)]),
            )? as f64;
            let dk = sigma2 / bk;
            (sigma2 / bkm1, Box::new(move |st| Ok((step(st)?, dk))))
        }
        EstimatorKind::LSvrg | EstimatorKind::HybridSvrg => {
            let w_prev = history
                .state
                .snapshot()
                .cloned()
                .ok_or_else(|| Error::invalid("missing snapshot"))?;
            let gw_prev = components(op.as_ref(), &w_prev);
            let (bb, scale) = if kind == EstimatorKind::LSvrg {
                (b, 1.0)
            } else {
                (b_hat, (4.0 / pp - 1.0) * omega * omega)
            };
            let d_prev = svrg_delta(&a_km1, &gw_prev, p, bb, &anchor, k - 1);
            let d_keep = svrg_delta(&a_k, &gw_prev, p, bb, &anchor, k);
            let d_switch = svrg_delta(&a_k, &g[k - 1], p, bb, &anchor, k);
            let hybrid = kind == EstimatorKind::HybridSvrg;
            let delta_prev = if hybrid {
                e_prev_sq + scale * d_prev
            } else {
                d_prev
            };
            (
                delta_prev,
                Box::new(move |st| {
                    let e2 = step(st)?;
                    let d = if st.last_switch() { d_switch } else { d_keep };
                    Ok((e2, if hybrid { e2 + scale * d } else { d }))
                }),
            )
        }
        EstimatorKind::Saga => {
            // Frozen before step k-1; the trial runs steps k-1 and k.
            let table_prev: Vec<f64> = (0..n)
                .flat_map(|i| history.state.saga_row(i).unwrap().to_vec())
                .collect();
            let d_prev = mean_sq_dist(&a_km1, &table_prev, p) / b;
            let (p1, p2, p3) = (traj[k - 1].clone(), traj[k - 2].clone(), traj[k - 3].clone());
            (
                d_prev,
                Box::new(move |st| {
                    st.step(&p1, &p2, &p3)?;
                    let table: Vec<f64> =
                        (0..n).flat_map(|i| st.saga_row(i).unwrap().to_vec()).collect();
                    let dk = mean_sq_dist(&a_k, &table, p) / b;
                    Ok((step(st)?, dk))
                }),
            )
        }
        EstimatorKind::LSarah | EstimatorKind::HybridSgd => (
            e_prev_sq,
            Box::new(move |st| {
                let e2 = step(st)?;
                Ok((e2, e2))
            }),
        ),
    };

    let rhs = (1.0 - card.kappa) * delta_prev + card.theta * dx_k + card.theta_hat * dx_km1 + delta_k;
    let mo = monte_carlo(cfg, 2, &[0.0, 0.0], |seed| {
        let mut st = history.state.clone();
        st.reseed(seed);
        let (e2, d) = sampler(&mut st)?;
        Ok(vec![d, e2 - d])
    })?;
    let mean = mo.mean();
    let var = mo.variances();
    let t = mo.count as f64;
    let se_delta = (var[0] / t).sqrt();
    let se_gap = (var[1] / t).sqrt();
    let scale = rhs.abs().max(mean[0].abs()).max(s_norm_sq);
    let line3 = signed_margin(mean[0] - rhs, se_delta, scale);
    let line2 = signed_margin(mean[1], se_gap, scale);
    let margin = line3.max(line2);
    Ok(McReport {
        name: format!("variance/{kind}"),
        mode: CheckMode::MonteCarlo,
        trials: mo.count,
        mean: vec![mean[0]],
        mean_norm: mean[0],
        std_error: se_delta,
        target: vec![rhs],
        target_norm: rhs,
        margin_sigmas: margin,
        threshold: cfg.threshold,
        one_sided: true,
        pass: margin <= cfg.threshold,
        second_moment_margin: Some(line2),
        recursion_margin: Some(line3),
    })
}

/// Components of the standard verification toy.
pub const TOY_COMPONENTS: usize = 10;
/// Components of the enumeration toy.
pub const ENUM_COMPONENTS: usize = 5;
const TOY_SEED: u64 = 0;
const TRAJECTORY_LEN: usize = 5;

/// `x^0, …, x^4` of a VrFRBS run with `kind`, and the seed that reproduces its estimator.
pub fn sample_trajectory(
    kind: EstimatorKind,
    params: &EstimatorParams,
    problem: &crate::inclusion::InclusionProblem,
    seed: u64,
) -> Result<(Vec<Point>, u64)> {
    let warm = rng::derive_seed(seed, rng::streams::TRAJECTORY);
    let x0: Point = (0..problem.dim())
        .map(|i| ((i + 1) as f64).sin())
        .collect::<Vec<_>>()
        .into();
    let mut st = EstimatorState::new(
        kind,
        params.clone(),
        problem.forward.clone(),
        x0,
        warm,
        Execution::Sequential,
    )?;
    let cfg = crate::solver::SolverConfig {
        keep_iterates: true,
        ..crate::solver::SolverConfig::new(0.1 / problem.lipschitz, TRAJECTORY_LEN - 1)
    };
    let trace = crate::solver::run(problem, &mut st, &cfg)?;
    Ok((trace.iterates, warm))
}

/// Frozen history on a sampled trajectory. Biased kinds retry derived seeds until
/// `e^{k-1} != 0`, so the recursion target is not trivially zero.
pub fn informative_history(
    kind: EstimatorKind,
    params: &EstimatorParams,
    problem: &crate::inclusion::InclusionProblem,
    seed: u64,
) -> Result<(Vec<Point>, u64, FrozenHistory)> {
    const ATTEMPTS: u64 = 64;
    let mut attempt = 0;
    loop {
        let s = if attempt == 0 { seed } else { rng::derive_seed(seed, attempt) };
        let (traj, warm) = sample_trajectory(kind, params, problem, s)?;
        let h = FrozenHistory::warm(kind, params.clone(), &problem.forward, &traj, warm)?;
        attempt += 1;
        if !kind.is_biased() || h.e_prev()?.norm() > 0.0 || attempt == ATTEMPTS {
            return Ok((traj, warm, h));
        }
    }
}

/// Defining check (Monte Carlo and exact enumeration) plus the variance recursion for
/// `kind` with default parameters on the linear toys.
pub fn standard_suite(kind: EstimatorKind, cfg: &VerifyConfig) -> Result<Vec<McReport>> {
    use crate::problems::synthetic::linear_toy;
    let params = EstimatorParams::default();
    let mut out = Vec::new();

    let toy = linear_toy(TOY_COMPONENTS, TOY_SEED);
    let (traj, warm, history) = informative_history(kind, &params, &toy, cfg.seed)?;
    out.push(if kind.is_biased() {
        check_bias_recursion(&history, cfg)?
    } else {
        check_unbiased(&history, cfg)?
    });

    let small = linear_toy(ENUM_COMPONENTS, TOY_SEED);
    let (_, _, sh) = informative_history(kind, &params, &small, cfg.seed)?;
    out.push(if kind.is_biased() {
        check_bias_recursion_exact(&sh)?
    } else {
        check_unbiased_exact(&sh)?
    });

    out.push(check_variance_recursion(
        &VarianceCheck {
            kind,
            params,
            forward: &toy.forward,
            trajectory: &traj,
            lipschitz: toy.forward.lipschitz(),
            convention: CardConvention::Stated,
            sigma2: None,
            warmup_seed: warm,
        },
        cfg,
    )?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::problems::synthetic::{linear_toy, DenseAffineSum};

    fn traj(p: usize, len: usize) -> Vec<Point> {
        (0..len)
            .map(|j| {
                (0..p)
                    .map(|i| ((i + 1) as f64 * 0.37 * (j as f64 + 1.0)).sin())
                    .collect::<Vec<_>>()
                    .into()
            })
            .collect()
    }

    fn cfg(trials: usize) -> VerifyConfig {
        VerifyConfig::default().with_trials(trials).with_seed(17)
    }

    #[test]
    fn full_batch_error_is_zero() {
        let f = linear_toy(10, 1).forward;
        let h = FrozenHistory::warm(EstimatorKind::FullBatch, EstimatorParams::default(), &f, &traj(3, 4), 0)
            .unwrap();
        let r = check_unbiased(&h, &cfg(100)).unwrap();
        assert!(r.pass);
        assert_eq!(r.margin_sigmas, 0.0);
    }

    #[test]
    fn sgd_two_outcomes_by_hand() {
        // n = 2 scalar components G_1 x = x, G_2 x = 3x: outcomes 2x^k - x^{k-1} and 3(2x^k - x^{k-1}).
        let op = DenseAffineSum::new(
            vec![DenseMatrix::from_rows(&[&[1.0]]), DenseMatrix::from_rows(&[&[3.0]])],
            vec![vec![0.0], vec![0.0]],
        )
        .unwrap();
        let f = Forward::FiniteSum(std::sync::Arc::new(op));
        let t: Vec<Point> = vec![vec![1.0].into(), vec![2.0].into()];
        let h = FrozenHistory::warm(EstimatorKind::SgdIncreasing, EstimatorParams::default(), &f, &t, 0)
            .unwrap();
        let r = check_unbiased_exact(&h).unwrap();
        assert_eq!(r.trials, 2);
        assert!(r.mean_norm <= 1e-14);
        assert!(r.pass);
    }

    #[test]
    fn biased_kind_rejected() {
        let f = linear_toy(4, 1).forward;
        let h = FrozenHistory::warm(EstimatorKind::LSarah, EstimatorParams::default(), &f, &traj(3, 3), 0)
            .unwrap();
        assert!(check_unbiased(&h, &cfg(100)).is_err());
        let h = FrozenHistory::warm(EstimatorKind::Saga, EstimatorParams::default(), &f, &traj(3, 3), 0)
            .unwrap();
        assert!(check_bias_recursion(&h, &cfg(100)).is_err());
    }

    #[test]
    fn reduction_is_deterministic_across_modes() {
        let f = linear_toy(10, 2).forward;
        let h = FrozenHistory::warm(EstimatorKind::LSvrg, EstimatorParams::default().with_batch(2), &f, &traj(3, 4), 1)
            .unwrap();
        let mut a = cfg(5000);
        a.exec = Execution::Sequential;
        let mut b = a;
        b.exec = Execution::Parallel;
        assert_eq!(check_unbiased(&h, &a).unwrap(), check_unbiased(&h, &b).unwrap());
    }

    #[test]
    fn sarah_enumeration_matches_target() {
        let f = linear_toy(3, 3).forward;
        let h = FrozenHistory::warm(
            EstimatorKind::LSarah,
            EstimatorParams::default().with_p(0.5).with_batch(1),
            &f,
            &traj(3, 4),
            5,
        )
        .unwrap();
        let r = check_bias_recursion_exact(&h).unwrap();
        assert_eq!(r.trials, 4);
        assert!(r.pass, "{}", r.to_line());
        assert!(r.target_norm > 0.0);
    }

    #[test]
    fn suite_passes_for_every_kind() {
        for kind in EstimatorKind::ALL {
            for r in standard_suite(kind, &cfg(20_000)).unwrap() {
                assert!(r.pass, "{}", r.to_line());
                assert_eq!(r.pass, r.margin_sigmas <= r.threshold);
            }
        }
    }

    #[test]
    fn report_line_format() {
        let r = two_sided("x".into(), CheckMode::MonteCarlo, 10, vec![0.0], 1.0, vec![0.0], 4.0, 0.0);
        assert_eq!(r.to_line(), "x, 10, 0.000000e0, 1.000000e0, 0.000000e0, 0.000, true");
    }
}
