//! Composite inclusion `0 ∈ Gx + Tx`: forward operators, resolvents of `ηT`,
//! and the forward-backward residual `F_η x = (x - J_{ηT}(x - ηGx)) / η`.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{self, LinearMap, SpectralEstimate};

/// An iterate in `R^p`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn zeros(dim: usize) -> Self {
        Point(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

impl From<&[f64]> for Point {
    fn from(v: &[f64]) -> Self {
        Point(v.to_vec())
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Point {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Finite sum `Gx = (1/n) Σ G_i x`.
pub trait FiniteSumOperator: Send + Sync {
    fn num_components(&self) -> usize;
    fn dim(&self) -> usize;
    /// `out = G_i x`
    fn eval_component(&self, i: usize, x: &[f64], out: &mut [f64]);
    /// Writes `Gx` through a closed form. Returns false when none exists.
    fn eval_mean_closed_form(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }
    /// Average-Lipschitz constant: `(1/n) Σ ||G_i x - G_i y||² <= L² ||x - y||²`.
    fn lipschitz(&self) -> f64;
    fn affine(&self) -> Option<&dyn AffineComponents> {
        None
    }
}

/// Components of the form `G_i x = J_i x + c_i`.
pub trait AffineComponents: FiniteSumOperator {
    /// `out = J_i u`
    fn apply_linear(&self, i: usize, u: &[f64], out: &mut [f64]);
    /// `out = J_i^T u`
    fn apply_linear_t(&self, i: usize, u: &[f64], out: &mut [f64]);
}

/// Expectation `Gx = E_ξ G(x, ξ)` with sample handles drawn as `u64`.
pub trait StochasticOracle: Send + Sync {
    fn dim(&self) -> usize;
    /// Deterministic in `(x, xi)`.
    fn eval_sample(&self, xi: u64, x: &[f64], out: &mut [f64]);
    /// Exact mean if known. Returns false otherwise.
    fn eval_mean(&self, x: &[f64], out: &mut [f64]) -> bool;
    fn lipschitz(&self) -> f64;
    /// Bound on `E ||G(x, ξ) - Gx||²`.
    fn variance_bound(&self) -> f64;
}

#[derive(Clone)]
pub enum Forward {
    FiniteSum(Arc<dyn FiniteSumOperator>),
    Expectation(Arc<dyn StochasticOracle>),
}

impl fmt::Debug for Forward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forward::FiniteSum(op) => write!(
                f,
                "FiniteSum(n={}, p={})",
                op.num_components(),
                op.dim()
            ),
            Forward::Expectation(o) => write!(f, "Expectation(p={})", o.dim()),
        }
    }
}

impl Forward {
    pub fn dim(&self) -> usize {
        match self {
            Forward::FiniteSum(op) => op.dim(),
            Forward::Expectation(o) => o.dim(),
        }
    }

    pub fn num_components(&self) -> Option<usize> {
        match self {
            Forward::FiniteSum(op) => Some(op.num_components()),
            Forward::Expectation(_) => None,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Forward::FiniteSum(op) => op.lipschitz(),
            Forward::Expectation(o) => o.lipschitz(),
        }
    }

    /// One sample: a component index for finite sums, an oracle handle otherwise.
    pub fn eval_sample(&self, handle: u64, x: &[f64], out: &mut [f64]) {
        match self {
            Forward::FiniteSum(op) => op.eval_component(handle as usize, x, out),
            Forward::Expectation(o) => o.eval_sample(handle, x, out),
        }
    }

    /// Exact `Gx`, unmetered. Finite sums use the closed form when present.
    pub fn exact_mean(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Forward::FiniteSum(op) => {
                full_mean_into(op.as_ref(), x, out);
                Ok(())
            }
            Forward::Expectation(o) => {
                if o.eval_mean(x, out) {
                    Ok(())
                } else {
                    Err(Error::Unsupported(
                        "exact mean unavailable for this stochastic oracle".into(),
                    ))
                }
            }
        }
    }
}

/// Component-evaluation counter owned by one run.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CallCounter {
    pub calls: u64,
}

impl CallCounter {
    pub fn charge(&mut self, calls: u64) {
        self.calls += calls;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metering {
    #[default]
    Charged,
    /// Charges nothing when the closed-form path is taken.
    Free,
}

/// `out = (1/n) Σ G_i x`, summing components in index order.
pub(crate) fn component_mean_into(op: &dyn FiniteSumOperator, x: &[f64], out: &mut [f64]) {
    let n = op.num_components();
    let mut tmp = vec![0.0; out.len()];
    out.fill(0.0);
    for i in 0..n {
        op.eval_component(i, x, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o += t;
        }
    }
    let nf = n as f64;
    out.iter_mut().for_each(|o| *o /= nf);
}

/// Closed form when available, component mean otherwise. Returns true for the closed form.
pub(crate) fn full_mean_into(op: &dyn FiniteSumOperator, x: &[f64], out: &mut [f64]) -> bool {
    if op.eval_mean_closed_form(x, out) {
        true
    } else {
        component_mean_into(op, x, out);
        false
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::invalid(format!(
            "dimension mismatch: expected {expected}, got {got}"
        )));
    }
    Ok(())
}

pub fn eval_full(
    op: &dyn FiniteSumOperator,
    x: &[f64],
    counter: &mut CallCounter,
    metering: Metering,
) -> Result<Point> {
    check_dim(op.dim(), x.len())?;
    let mut out = Point::zeros(op.dim());
    let closed = full_mean_into(op, x, &mut out);
    if !(closed && metering == Metering::Free) {
        counter.charge(op.num_components() as u64);
    }
    Ok(out)
}

/// Mean over a multiset of component indices.
pub fn eval_batch(
    op: &dyn FiniteSumOperator,
    batch: &[usize],
    x: &[f64],
    counter: &mut CallCounter,
) -> Result<Point> {
    check_dim(op.dim(), x.len())?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = op.num_components();
    if let Some(&bad) = batch.iter().find(|&&i| i >= n) {
        return Err(Error::invalid(format!("index {bad} out of range 0..{n}")));
    }
    let mut out = Point::zeros(op.dim());
    let mut tmp = vec![0.0; op.dim()];
    for &i in batch {
        op.eval_component(i, x, &mut tmp);
        linalg::axpy(1.0, &tmp, &mut out);
    }
    let b = batch.len() as f64;
    out.iter_mut().for_each(|o| *o /= b);
    counter.charge(batch.len() as u64);
    Ok(out)
}

pub type UserResolvent = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

/// Resolvent `J_{ηT}`.
#[derive(Clone)]
pub enum Resolvent {
    /// `T = 0`.
    Zero,
    /// Projection onto `{||w|| <= radius} × Π_j [-b_j, b_j]` with `w` the leading `ball_dim` coordinates.
    BallBox {
        ball_dim: usize,
        radius: f64,
        box_bounds: Vec<f64>,
    },
    /// Prox of `weight·||θ||_1` on `start..start+len`, identity elsewhere. Threshold is `η·weight`.
    SoftThreshold {
        start: usize,
        len: usize,
        weight: f64,
    },
    /// Caller-supplied map `(z, η, out)`; must be nonexpansive.
    User(UserResolvent),
}

impl fmt::Debug for Resolvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resolvent::Zero => write!(f, "Zero"),
            Resolvent::BallBox {
                ball_dim,
                radius,
                box_bounds,
            } => write!(f, "BallBox(d={ball_dim}, R={radius}, box={box_bounds:?})"),
            Resolvent::SoftThreshold { start, len, weight } => {
                write!(f, "SoftThreshold({start}..{}, weight={weight})", start + len)
            }
            Resolvent::User(_) => write!(f, "User"),
        }
    }
}

impl Resolvent {
    /// Ball-box set of the AUC problem: `||w|| <= R`, `|a|, |b| <= Rκ`, `|α| <= 2Rκ`.
    pub fn auc(d: usize, radius: f64, kappa: f64) -> Self {
        let rk = if radius.is_infinite() {
            f64::INFINITY
        } else {
            radius * kappa
        };
        Resolvent::BallBox {
            ball_dim: d,
            radius,
            box_bounds: vec![rk, rk, 2.0 * rk],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Resolvent::Zero | Resolvent::User(_) => Ok(()),
            Resolvent::BallBox {
                ball_dim,
                radius,
                box_bounds,
            } => {
                if ball_dim + box_bounds.len() != dim {
                    return Err(Error::invalid("ball-box blocks do not cover the dimension"));
                }
                if !(*radius > 0.0) || box_bounds.iter().any(|b| !(*b >= 0.0)) {
                    return Err(Error::invalid("ball-box radii must be positive"));
                }
                Ok(())
            }
            Resolvent::SoftThreshold { start, len, weight } => {
                if start + len > dim {
                    return Err(Error::invalid("soft-threshold block out of range"));
                }
                if !(*weight >= 0.0) {
                    return Err(Error::invalid("l1 weight must be nonnegative"));
                }
                Ok(())
            }
        }
    }

    pub fn apply_into(&self, z: &[f64], eta: f64, out: &mut [f64]) {
        debug_assert_eq!(z.len(), out.len());
        match self {
            Resolvent::Zero => out.copy_from_slice(z),
            Resolvent::BallBox {
                ball_dim,
                radius,
                box_bounds,
            } => {
                let (w, rest) = z.split_at(*ball_dim);
                let (ow, orest) = out.split_at_mut(*ball_dim);
                let nw = linalg::norm(w);
                if nw > *radius {
                    let s = radius / nw;
                    for (o, v) in ow.iter_mut().zip(w) {
                        *o = v * s;
                    }
                } else {
                    ow.copy_from_slice(w);
                }
                for ((o, v), b) in orest.iter_mut().zip(rest).zip(box_bounds) {
                    *o = v.clamp(-b, *b);
                }
            }
            Resolvent::SoftThreshold { start, len, weight } => {
                out.copy_from_slice(z);
                let lambda = eta * weight;
                for v in &mut out[*start..start + len] {
                    *v = v.signum() * (v.abs() - lambda).max(0.0);
                }
            }
            Resolvent::User(f) => f(z, eta, out),
        }
    }

    pub fn apply(&self, z: &[f64], eta: f64) -> Point {
        let mut out = Point::zeros(z.len());
        self.apply_into(z, eta, &mut out);
        out
    }

    /// Membership in the range of a projection kind, within `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            Resolvent::BallBox {
                ball_dim,
                radius,
                box_bounds,
            } => {
                let (w, rest) = x.split_at(*ball_dim);
                linalg::norm(w) <= radius + tol
                    && rest.iter().zip(box_bounds).all(|(v, b)| v.abs() <= b + tol)
            }
            _ => true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InclusionProblem {
    pub name: String,
    pub forward: Forward,
    pub resolvent: Resolvent,
    /// Constant used by step-size rules.
    pub lipschitz: f64,
    pub weak_minty_rho: f64,
    pub known_solution: Option<Point>,
}

impl InclusionProblem {
    pub fn new(name: impl Into<String>, forward: Forward, resolvent: Resolvent) -> Result<Self> {
        let lipschitz = forward.lipschitz();
        resolvent.validate(forward.dim())?;
        Ok(Self {
            name: name.into(),
            forward,
            resolvent,
            lipschitz,
            weak_minty_rho: 0.0,
            known_solution: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.forward.dim()
    }

    pub fn num_components(&self) -> Option<usize> {
        self.forward.num_components()
    }
}

/// `r = (x - J_{ηT}(x - ηGx)) / η` with exact `G`, and `||r||`.
pub fn fb_residual(problem: &InclusionProblem, eta: f64, x: &[f64]) -> Result<(Point, f64)> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta must be positive"));
    }
    check_dim(problem.dim(), x.len())?;
    let mut g = Point::zeros(x.len());
    problem.forward.exact_mean(x, &mut g)?;
    let z: Vec<f64> = x.iter().zip(g.iter()).map(|(xi, gi)| xi - eta * gi).collect();
    let j = problem.resolvent.apply(&z, eta);
    let r: Point = x.iter().zip(j.iter()).map(|(xi, ji)| (xi - ji) / eta).collect::<Vec<_>>().into();
    let nr = r.norm();
    Ok((r, nr))
}

/// Wraps an operator and counts every component evaluation. Hides any closed
/// form so that full evaluations are observable component by component.
pub struct CountingOperator {
    inner: Arc<dyn FiniteSumOperator>,
    count: AtomicU64,
}

impl CountingOperator {
    pub fn new(inner: Arc<dyn FiniteSumOperator>) -> Self {
        Self {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

impl FiniteSumOperator for CountingOperator {
    fn num_components(&self) -> usize {
        self.inner.num_components()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval_component(&self, i: usize, x: &[f64], out: &mut [f64]) {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.eval_component(i, x, out)
    }
    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz()
    }
}

/// `u ↦ n^{-1/2} (J_1 u, …, J_n u)`, whose spectral norm is the average-Lipschitz constant.
struct StackedJacobians<'a> {
    op: &'a dyn AffineComponents,
}

impl LinearMap for StackedJacobians<'_> {
    fn nrows(&self) -> usize {
        self.op.num_components() * self.op.dim()
    }
    fn ncols(&self) -> usize {
        self.op.dim()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let p = self.op.dim();
        let s = (self.op.num_components() as f64).sqrt().recip();
        for (i, chunk) in out.chunks_mut(p).enumerate() {
            self.op.apply_linear(i, x, chunk);
            chunk.iter_mut().for_each(|v| *v *= s);
        }
    }
    fn apply_t(&self, y: &[f64], out: &mut [f64]) {
        let p = self.op.dim();
        let s = (self.op.num_components() as f64).sqrt().recip();
        let mut tmp = vec![0.0; p];
        out.fill(0.0);
        for (i, chunk) in y.chunks(p).enumerate() {
            self.op.apply_linear_t(i, chunk, &mut tmp);
            linalg::axpy(s, &tmp, out);
        }
    }
}

/// `sqrt(λ_max((1/n) Σ J_i^T J_i))` by power iteration.
pub fn average_lipschitz(op: &dyn AffineComponents, tol: f64) -> SpectralEstimate {
    linalg::spectral_norm(&StackedJacobians { op }, tol)
}
