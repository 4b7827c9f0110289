//! Config-driven experiment matrices: problems × algorithms × seeds.
//!
//! Every `(algorithm, seed)` cell is an independent job. Results are collected
//! and written once, sorted by `(algorithm, seed, iter)`, so files do not depend
//! on scheduling.

pub mod config;
pub mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

pub use config::{
    AlgorithmSpec, AucSpec, EtaSpec, ExperimentConfig, ParamsSpec, PeSpec, ProblemSpec, RunSpec,
    ToySpec,
};
pub use output::{summarize, CsvRow, SummaryRow, RUNS_HEADER};

use crate::error::{Error, Result};
use crate::estimators::{
    default_params, experiment_eta, EstimatorKind, EstimatorParams, EstimatorState, Profile,
    Setting,
};
use crate::inclusion::{InclusionProblem, Point};
use crate::par::{self, Execution};
use crate::problems::{self, auc, io, AffineToy};
use crate::rng;
use crate::solver::{self, EstimatorClass, RecordRule, RunTrace, SolverConfig, StopReason};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Builds the problem instance for one data seed.
pub fn build_problem(spec: &ProblemSpec, data_seed: u64) -> Result<InclusionProblem> {
    match spec {
        ProblemSpec::Auc(s) => {
            let data = match &s.data {
                Some(path) => io::read_auc(path)?,
                None => problems::gen_auc_dataset(s.n, s.d, s.p_pos, s.noise_sigma, data_seed)?,
            };
            problems::build_auc_problem(&data, s.radius.unwrap_or(auc::default_radius(0.0)))
        }
        ProblemSpec::PolicyEval(s) => {
            let (transitions, d) = match &s.data {
                Some(path) => io::read_transitions(path)?,
                None => {
                    let mdp = problems::gen_random_mdp(s.states, s.actions, data_seed)?;
                    let features = problems::random_features(s.states, s.d, data_seed)?;
                    (problems::sample_transitions(&mdp, s.n, &features, data_seed)?, s.d)
                }
            };
            problems::build_pe_problem(&transitions, d, s.gamma, s.tau_reg)
        }
        ProblemSpec::AffineToy(s) => Ok(AffineToy::generate(&s.spec(), data_seed)?.into_problem()),
    }
}

/// Dataset seed for a run seed.
pub fn data_seed(cfg: &ExperimentConfig, seed: u64) -> u64 {
    if cfg.run.fix_data || cfg.problem.from_file() {
        cfg.problem.seed()
    } else {
        rng::derive_seed(cfg.problem.seed(), seed)
    }
}

/// Estimator parameters and step size for one algorithm on one problem instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub label: String,
    pub kind: EstimatorKind,
    pub params: EstimatorParams,
    pub eta: f64,
    pub lipschitz: f64,
}

pub fn resolve_algorithm(
    algo: &AlgorithmSpec,
    family: Option<crate::estimators::Family>,
    problem: &InclusionProblem,
) -> Result<Resolved> {
    let label = algo.label();
    let cfg_err = |e: Error| match e {
        Error::Config(m) | Error::InvalidArgument(m) | Error::Unsupported(m) => {
            Error::Config(format!("{label}: {m}"))
        }
        Error::Infeasible(m) => Error::Infeasible(format!("{label}: {m}")),
        other => other,
    };
    let n = problem.num_components();
    let params = match &algo.params {
        ParamsSpec::Explicit(p) => p.clone(),
        ParamsSpec::Experiment => {
            let family = family.ok_or_else(|| {
                Error::Config(format!(
                    "{label}: the experiment profile needs an auc or policy-eval problem"
                ))
            })?;
            default_params(algo.kind, n, Setting::F, None, Profile::Experiment(family)).map_err(cfg_err)?
        }
        ParamsSpec::Theory => {
            default_params(algo.kind, n, Setting::F, None, Profile::Theory).map_err(cfg_err)?
        }
    };
    params.validate(algo.kind, n).map_err(cfg_err)?;
    let l = problem.lipschitz;
    let theory = || {
        let class = if algo.kind.is_biased() {
            EstimatorClass::Biased
        } else {
            EstimatorClass::Unbiased
        };
        solver::theory_stepsize(l, problem.weak_minty_rho, class, solver::DEFAULT_SAFETY).map_err(cfg_err)
    };
    let eta = match (algo.eta, &algo.params, family) {
        (Some(EtaSpec::Rule(r)), _, _) => r.resolve(l),
        (Some(EtaSpec::Theory), _, _) => theory()?,
        (None, ParamsSpec::Experiment, Some(f)) => experiment_eta(algo.kind, f).resolve(l),
        (None, _, _) => theory()?,
    };
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Infeasible(format!("{label}: step size {eta} is not positive")));
    }
    Ok(Resolved {
        label,
        kind: algo.kind,
        params,
        eta,
        lipschitz: l,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub algorithm: String,
    pub seed: u64,
    pub data_seed: u64,
    pub eta: f64,
    pub iterations: usize,
    pub total_calls: u64,
    pub final_epoch: f64,
    pub final_rel_residual: f64,
    pub stop: String,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub algorithm: String,
    pub kind: EstimatorKind,
    pub seed: u64,
    pub data_seed: u64,
    pub n: usize,
    pub eta: f64,
    pub trace: RunTrace,
    pub diverged: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub cells: Vec<CellResult>,
    pub rows: Vec<CsvRow>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Worker count for the cell pool; all cores when `None`.
    pub jobs: Option<usize>,
    pub exec: Execution,
}

#[derive(Serialize)]
struct Manifest<'a> {
    software: &'a str,
    config: &'a ExperimentConfig,
    resolved: Vec<ResolvedEntry<'a>>,
    cells: Vec<CellSummary>,
}

#[derive(Serialize)]
struct ResolvedEntry<'a> {
    seed: u64,
    data_seed: u64,
    n: usize,
    #[serde(flatten)]
    resolved: &'a Resolved,
}

fn run_cell(
    cfg: &ExperimentConfig,
    problem: &InclusionProblem,
    res: &Resolved,
    seed: u64,
    dseed: u64,
    exec: Execution,
) -> Result<CellResult> {
    let n = problem
        .num_components()
        .ok_or_else(|| Error::Config("the harness needs a finite-sum problem".into()))?;
    let budget = (cfg.run.epochs * n as f64).ceil() as u64;
    let cadence = ((cfg.run.record_every_epochs * n as f64).round() as u64).max(1);
    let x0 = Point::zeros(problem.dim());
    let mut est = EstimatorState::new(res.kind, res.params.clone(), problem.forward.clone(), x0, seed, exec)?;
    let scfg = SolverConfig {
        max_calls: Some(budget),
        stop_tol: cfg.run.stop_tol,
        meter_residuals: cfg.run.meter_residuals,
        ..SolverConfig::new(res.eta, usize::MAX)
            .with_seed(seed)
            .with_record(RecordRule::EveryCalls(cadence))
    };
    let (trace, diverged) = match solver::run(problem, &mut est, &scfg) {
        Ok(t) => (t, None),
        Err(Error::Divergence { iteration, reason, trace }) => {
            (*trace, Some(format!("iteration {iteration}: {reason}")))
        }
        Err(e) => return Err(e),
    };
    Ok(CellResult {
        algorithm: res.label.clone(),
        kind: res.kind,
        seed,
        data_seed: dseed,
        n,
        eta: res.eta,
        trace,
        diverged,
    })
}

/// Runs every `(algorithm, seed)` cell and writes `runs.csv`, `summary.csv` and `manifest` to `out`.
/// A diverged cell keeps its partial trace in the files and yields [`Error::Divergence`] afterwards.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, opts: RunOptions) -> Result<ExperimentOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let family = cfg.problem.family();

    let mut data_seeds: Vec<u64> = cfg.run.seeds.iter().map(|&s| data_seed(cfg, s)).collect();
    data_seeds.sort_unstable();
    data_seeds.dedup();
    let built = par::with_jobs(opts.exec, opts.jobs, || {
        par::map_indexed(opts.exec, data_seeds.len(), |i| build_problem(&cfg.problem, data_seeds[i]))
    });
    let mut problems: BTreeMap<u64, Arc<InclusionProblem>> = BTreeMap::new();
    for (s, p) in data_seeds.iter().zip(built) {
        problems.insert(*s, Arc::new(p?));
    }

    // Resolve everything before running so configuration errors surface first.
    let mut jobs = Vec::new();
    let mut resolved = Vec::new();
    for algo in &cfg.algorithms {
        for &seed in &cfg.run.seeds {
            let dseed = data_seed(cfg, seed);
            let problem = problems[&dseed].clone();
            let r = resolve_algorithm(algo, family, &problem)?;
            resolved.push((seed, dseed, problem.num_components().unwrap_or(0), r.clone()));
            jobs.push((problem, r, seed, dseed));
        }
    }

    let results = par::with_jobs(opts.exec, opts.jobs, || {
        par::map_indexed(opts.exec, jobs.len(), |j| {
            let (problem, r, seed, dseed) = &jobs[j];
            run_cell(cfg, problem, r, *seed, *dseed, opts.exec)
        })
    });
    let mut cells = Vec::with_capacity(results.len());
    for r in results {
        cells.push(r?);
    }
    cells.sort_by(|a, b| (a.algorithm.as_str(), a.seed).cmp(&(b.algorithm.as_str(), b.seed)));

    let mut rows = Vec::new();
    for c in &cells {
        for rec in &c.trace.records {
            rows.push(CsvRow {
                experiment_id: cfg.experiment_id.clone(),
                algorithm: c.algorithm.clone(),
                seed: c.seed,
                epoch: rec.epoch,
                iter: rec.iter,
                rel_residual: rec.rel_residual,
                abs_residual: rec.abs_residual,
                wall_ms: if cfg.run.timing { rec.wall_ms } else { 0.0 },
            });
        }
    }
    let summary = output::summarize_rows(&rows);

    let manifest = Manifest {
        software: VERSION,
        config: cfg,
        resolved: resolved
            .iter()
            .map(|(seed, data_seed, n, r)| ResolvedEntry {
                seed: *seed,
                data_seed: *data_seed,
                n: *n,
                resolved: r,
            })
            .collect(),
        cells: cells.iter().map(cell_summary).collect(),
    };
    let write = |name: &str, text: String| -> Result<()> {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("runs.csv", output::runs_to_string(&rows))?;
    write("summary.csv", output::summary_to_string(&summary))?;
    let mut m = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    m.push('\n');
    write("manifest", m)?;

    if let Some(c) = cells.iter().find(|c| c.diverged.is_some()) {
        return Err(Error::Divergence {
            iteration: c.trace.iterations_run + 1,
            reason: format!(
                "{} seed {}: {}",
                c.algorithm,
                c.seed,
                c.diverged.as_deref().unwrap_or_default()
            ),
            trace: Box::new(c.trace.clone()),
        });
    }
    Ok(ExperimentOutput {
        dir: out.to_path_buf(),
        cells,
        rows,
        summary,
    })
}

fn cell_summary(c: &CellResult) -> CellSummary {
    let last = c.trace.records.last();
    CellSummary {
        algorithm: c.algorithm.clone(),
        seed: c.seed,
        data_seed: c.data_seed,
        eta: c.eta,
        iterations: c.trace.iterations_run,
        total_calls: c.trace.total_calls,
        final_epoch: last.map_or(0.0, |r| r.epoch),
        final_rel_residual: last.map_or(f64::NAN, |r| r.rel_residual),
        stop: match (&c.diverged, c.trace.stop) {
            (Some(_), _) => "divergence".into(),
            (None, StopReason::MaxIters) => "max-iters".into(),
            (None, StopReason::MaxCalls) => "epoch-budget".into(),
            (None, StopReason::Tolerance) => "tolerance".into(),
        },
    }
}

/// Mean over seeds of each algorithm's final relative residual, in label order.
pub fn final_means(cells: &[CellResult]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for c in cells {
        let r = c.trace.records.last().map_or(f64::NAN, |r| r.rel_residual);
        let e = acc.entry(c.algorithm.clone()).or_default();
        e.0 += r;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, m))| (k, s / m as f64)).collect()
}
