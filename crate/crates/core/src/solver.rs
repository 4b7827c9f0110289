//! The VrFRBS loop `x^{k+1} = J_{ηT}(x^k - η S̃^k)`, step-size rules and rate checks.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{EstimatorState, TheoryCard};
use crate::inclusion::{fb_residual, InclusionProblem, Point};
use crate::rng::{self, streams};

/// Iterates with a norm above this abort the run.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RecordRule {
    EveryIters(usize),
    /// Record whenever the cumulative call count crosses a multiple of this value.
    EveryCalls(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub eta: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub record: RecordRule,
    /// Stop once `rel_residual <= stop_tol` at a recording; 0 disables.
    pub stop_tol: f64,
    /// Charge `n` calls per residual evaluation.
    pub meter_residuals: bool,
    pub max_calls: Option<u64>,
    /// Keep every iterate in the trace.
    pub keep_iterates: bool,
}

impl SolverConfig {
    pub fn new(eta: f64, max_iters: usize) -> Self {
        Self {
            eta,
            max_iters,
            seed: 0,
            record: RecordRule::EveryIters(1),
            stop_tol: 0.0,
            meter_residuals: false,
            max_calls: None,
            keep_iterates: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_record(mut self, record: RecordRule) -> Self {
        self.record = record;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid("eta must be positive and finite"));
        }
        match self.record {
            RecordRule::EveryIters(0) | RecordRule::EveryCalls(0) => {
                Err(Error::invalid("record cadence must be positive"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub calls: u64,
    /// `calls / n`; equals `calls` for expectation oracles.
    pub epoch: f64,
    pub abs_residual: f64,
    pub rel_residual: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    MaxIters,
    MaxCalls,
    Tolerance,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub final_x: Point,
    /// Uniform draw from `{x^0, …, x^K}`.
    pub best_iterate: Point,
    pub best_index: usize,
    pub iterations_run: usize,
    pub total_calls: u64,
    pub stop: StopReason,
    pub iterates: Vec<Point>,
}

pub fn best_iterate(trace: &RunTrace) -> &Point {
    &trace.best_iterate
}

struct Recorder<'a> {
    problem: &'a InclusionProblem,
    eta: f64,
    meter: bool,
    unit: f64,
    n_calls: u64,
    norm0: Option<f64>,
    start: Instant,
}

impl Recorder<'_> {
    fn record(&mut self, iter: usize, x: &[f64], calls: &mut u64) -> Result<TraceRecord> {
        let (_, abs) = fb_residual(self.problem, self.eta, x)?;
        if self.meter {
            *calls += self.n_calls;
        }
        let norm0 = *self.norm0.get_or_insert(abs);
        let rel = if norm0 == 0.0 { 0.0 } else { abs / norm0 };
        Ok(TraceRecord {
            iter,
            calls: *calls,
            epoch: *calls as f64 / self.unit,
            abs_residual: abs,
            rel_residual: rel,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Runs VrFRBS from the estimator's `x^0` for up to `max_iters` iterations.
pub fn run(
    problem: &InclusionProblem,
    estimator: &mut EstimatorState,
    config: &SolverConfig,
) -> Result<RunTrace> {
    config.validate()?;
    if estimator.k() != 0 {
        return Err(Error::invalid("estimator must be freshly initialised"));
    }
    if estimator.dim() != problem.dim() {
        return Err(Error::invalid("estimator and problem dimensions differ"));
    }
    let n = problem.num_components();
    let mut rec = Recorder {
        problem,
        eta: config.eta,
        meter: config.meter_residuals,
        unit: n.unwrap_or(1) as f64,
        n_calls: n.unwrap_or(0) as u64,
        norm0: None,
        start: Instant::now(),
    };
    let mut reservoir = rng::substream(config.seed, streams::RESERVOIR);
    let eta = config.eta;

    let x0 = estimator.x0().clone();
    let mut x = x0.clone();
    let mut x_prev = x0.clone();
    let mut best = x0.clone();
    let mut best_index = 0;
    let mut calls = estimator.total_calls();
    let mut records = vec![rec.record(0, &x, &mut calls)?];
    let mut iterates = if config.keep_iterates { vec![x0.clone()] } else { Vec::new() };
    let mut next_mark = match config.record {
        RecordRule::EveryCalls(c) => (calls / c + 1) * c,
        RecordRule::EveryIters(_) => 0,
    };
    let mut z = Point::zeros(x.dim());
    let mut k = 0;
    let mut stop = StopReason::MaxIters;

    let over_budget = |calls: u64| config.max_calls.is_some_and(|m| calls >= m);
    if over_budget(calls) {
        stop = StopReason::MaxCalls;
    }
    if config.stop_tol > 0.0 && records[0].rel_residual <= config.stop_tol {
        stop = StopReason::Tolerance;
    }

    while stop == StopReason::MaxIters && k < config.max_iters {
        let s = estimator.current();
        for ((zi, xi), si) in z.iter_mut().zip(x.iter()).zip(s.iter()) {
            *zi = xi - eta * si;
        }
        let mut next = Point::zeros(x.dim());
        problem.resolvent.apply_into(&z, eta, &mut next);
        let nn = next.norm();
        if !next.is_finite() || nn > DIVERGENCE_NORM {
            let trace = RunTrace {
                records,
                final_x: x,
                best_iterate: best,
                best_index,
                iterations_run: k,
                total_calls: calls,
                stop: StopReason::MaxIters,
                iterates,
            };
            return Err(Error::Divergence {
                iteration: k + 1,
                reason: if next.is_finite() {
                    format!("iterate norm {nn:e} exceeds {DIVERGENCE_NORM:e}")
                } else {
                    "non-finite iterate".into()
                },
                trace: Box::new(trace),
            });
        }
        let x_prev2 = std::mem::replace(&mut x_prev, std::mem::replace(&mut x, next));
        k += 1;
        if reservoir.random_range(0..=k) == 0 {
            best.clone_from(&x);
            best_index = k;
        }
        if config.keep_iterates {
            iterates.push(x.clone());
        }
        let last = k == config.max_iters;
        if !last {
            let (_, c) = estimator.step(&x, &x_prev, &x_prev2)?;
            calls += c;
        }
        if over_budget(calls) {
            stop = StopReason::MaxCalls;
        }
        let due = match config.record {
            RecordRule::EveryIters(e) => k % e == 0,
            RecordRule::EveryCalls(c) => {
                if calls >= next_mark {
                    next_mark = (calls / c + 1) * c;
                    true
                } else {
                    false
                }
            }
        };
        if due || last || stop != StopReason::MaxIters {
            let r = rec.record(k, &x, &mut calls)?;
            records.push(r);
            if config.stop_tol > 0.0 && r.rel_residual <= config.stop_tol {
                stop = StopReason::Tolerance;
            }
        }
    }

    Ok(RunTrace {
        records,
        final_x: x,
        best_iterate: best,
        best_index,
        iterations_run: k,
        total_calls: calls,
        stop,
        iterates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EstimatorClass {
    Unbiased,
    Biased,
}

impl EstimatorClass {
    pub fn of(card: &TheoryCard) -> Self {
        if card.biased {
            EstimatorClass::Biased
        } else {
            EstimatorClass::Unbiased
        }
    }

    /// `(lower, upper)` with `lower = cρ` and `upper = 1/(c'L)`.
    pub fn bounds(self, l: f64, rho: f64) -> (f64, f64) {
        match self {
            EstimatorClass::Unbiased => (8.0 * rho, 1.0 / (3.0 * 2f64.sqrt() * l)),
            EstimatorClass::Biased => (32.0 * rho, 1.0 / (134f64.sqrt() * l)),
        }
    }
}

pub const DEFAULT_SAFETY: f64 = 0.99;

/// `safety · upper`, clamped below by `lower`.
pub fn theory_stepsize(l: f64, rho: f64, class: EstimatorClass, safety: f64) -> Result<f64> {
    if !(l > 0.0) || !(rho >= 0.0) {
        return Err(Error::invalid("need L > 0 and rho >= 0"));
    }
    if !(safety > 0.0 && safety < 1.0) {
        return Err(Error::invalid("safety must lie in (0, 1)"));
    }
    let (lower, upper) = class.bounds(l, rho);
    if lower >= upper {
        let bound = match class {
            EstimatorClass::Unbiased => "8ρ < 1/(3√2 L), i.e. Lρ < 1/(24√2)",
            EstimatorClass::Biased => "32ρ < 1/(√134 L), i.e. Lρ < 1/(32√134)",
        };
        return Err(Error::Infeasible(format!(
            "step-size window empty: {bound} violated (lower {lower}, upper {upper})"
        )));
    }
    Ok((safety * upper).max(lower))
}

/// Relative slack under which a condition counts as holding with equality.
pub const EQUALITY_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs - rhs` for `lhs >= rhs` conditions.
    pub margin: f64,
    pub pass: bool,
    pub at_equality: bool,
}

impl Condition {
    fn geq(name: &'static str, lhs: f64, rhs: f64) -> Self {
        let scale = lhs.abs().max(rhs.abs());
        let at_equality = (lhs - rhs).abs() <= EQUALITY_RTOL * scale;
        Self {
            name,
            lhs,
            rhs,
            margin: lhs - rhs,
            pass: lhs >= rhs || at_equality,
            at_equality,
        }
    }

    fn lt(name: &'static str, lhs: f64, rhs: f64) -> Self {
        Self {
            name,
            lhs,
            rhs,
            margin: rhs - lhs,
            pass: lhs < rhs,
            at_equality: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub class: EstimatorClass,
    pub conditions: Vec<Condition>,
}

impl RateReport {
    pub fn pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Checks the step-size window and the variance-rate condition. Never errors.
pub fn validate_rates(card: &TheoryCard, l: f64, rho: f64, eta: f64) -> RateReport {
    let class = EstimatorClass::of(card);
    let (lower, upper) = class.bounds(l, rho);
    let l2 = l * l;
    let theta = card.theta + card.theta_hat;
    let rate = match class {
        EstimatorClass::Unbiased => Condition::geq("rate", card.kappa * l2, theta),
        EstimatorClass::Biased => Condition::geq(
            "rate",
            4.0 * l2 * card.tau * card.tau * card.kappa,
            22.0 * theta,
        ),
    };
    let report = RateReport {
        class,
        conditions: vec![
            Condition::geq("eta_lower", eta, lower),
            Condition::lt("eta_upper", eta, upper),
            rate,
        ],
    };
    for c in report.conditions.iter().filter(|c| !c.pass) {
        log::warn!(
            "theory condition {} fails: lhs {:e} vs rhs {:e}",
            c.name,
            c.lhs,
            c.rhs
        );
    }
    report
}
