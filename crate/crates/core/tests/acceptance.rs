//! Acceptance criteria. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero when any fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use vrfrbs_core::estimators::{
    default_params, CardConvention, EstimatorKind, EstimatorParams, EstimatorState, Profile,
    Setting, TheoryCard,
};
use vrfrbs_core::harness::{self, ExperimentConfig, RunOptions};
use vrfrbs_core::inclusion::{
    CountingOperator, FiniteSumOperator, Forward, InclusionProblem, Point, Resolvent,
};
use vrfrbs_core::linalg::DenseMatrix;
use vrfrbs_core::problems::synthetic::{linear_toy, DenseAffineSum};
use vrfrbs_core::problems::{build_auc_problem, gen_auc_dataset, AffineToy, AffineToySpec};
use vrfrbs_core::solver::{self, EstimatorClass, RecordRule, SolverConfig, StopReason};
use vrfrbs_core::verification::{self, VarianceCheck, VerifyConfig, ENUMERATION_TOL};
use vrfrbs_core::{rng, Execution};

const MC_TRIALS: usize = 100_000;
const SIGMA: f64 = 4.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn mc_cfg() -> VerifyConfig {
    VerifyConfig {
        trials: MC_TRIALS,
        seed: 2024,
        threshold: SIGMA,
        ..VerifyConfig::default()
    }
}

/// MC defining check on the 10-component toy and exact enumeration on the 5-component toy.
fn defining_checks(kinds: &[EstimatorKind]) -> Outcome {
    let cfg = mc_cfg();
    let params = EstimatorParams::default();
    let mut pass = true;
    let mut detail = Vec::new();
    for &kind in kinds {
        let toy = linear_toy(verification::TOY_COMPONENTS, 0);
        let (_, _, h) = verification::informative_history(kind, &params, &toy, cfg.seed).unwrap();
        let small = linear_toy(verification::ENUM_COMPONENTS, 0);
        let (_, _, sh) = verification::informative_history(kind, &params, &small, cfg.seed).unwrap();
        let (mc, exact) = if kind.is_biased() {
            (
                verification::check_bias_recursion(&h, &cfg).unwrap(),
                verification::check_bias_recursion_exact(&sh).unwrap(),
            )
        } else {
            (
                verification::check_unbiased(&h, &cfg).unwrap(),
                verification::check_unbiased_exact(&sh).unwrap(),
            )
        };
        let err: f64 = exact
            .mean
            .iter()
            .zip(&exact.target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let ok = mc.trials == MC_TRIALS && mc.pass && err <= ENUMERATION_TOL && exact.pass;
        pass &= ok;
        detail.push(format!(
            "{kind}: mc {:.2}σ, exact err {err:.1e} over {} paths",
            mc.margin_sigmas, exact.trials
        ));
    }
    outcome(pass, detail.join("; "))
}

fn unbiased_certification() -> Outcome {
    use EstimatorKind::*;
    defining_checks(&[SgdIncreasing, LSvrg, Saga])
}

fn biased_certification() -> Outcome {
    use EstimatorKind::*;
    defining_checks(&[LSarah, HybridSgd, HybridSvrg])
}

fn variance_recursion() -> Outcome {
    use EstimatorKind::*;
    let cfg = mc_cfg();
    let params = EstimatorParams::default();
    let toy = linear_toy(verification::TOY_COMPONENTS, 0);
    let mut pass = true;
    let mut detail = Vec::new();
    for kind in [SgdIncreasing, LSvrg, Saga, LSarah, HybridSgd, HybridSvrg] {
        let (traj, warm, _) = verification::informative_history(kind, &params, &toy, cfg.seed).unwrap();
        let r = verification::check_variance_recursion(
            &VarianceCheck {
                kind,
                params: params.clone(),
                forward: &toy.forward,
                trajectory: &traj,
                lipschitz: toy.forward.lipschitz(),
                convention: CardConvention::Stated,
                sigma2: None,
                warmup_seed: warm,
            },
            &cfg,
        )
        .unwrap();
        pass &= r.pass;
        detail.push(format!(
            "{kind}: {:.2}σ (second moment {:.2}σ, recursion {:.2}σ)",
            r.margin_sigmas,
            r.second_moment_margin.unwrap(),
            r.recursion_margin.unwrap()
        ));
    }
    outcome(pass, detail.join("; "))
}

/// Plain FRBS with `G` from the assembled affine form.
fn reference_frbs(
    mat: &DenseMatrix,
    offset: &[f64],
    resolvent: &Resolvent,
    eta: f64,
    x0: &[f64],
    iters: usize,
) -> Vec<Vec<f64>> {
    let g = |x: &[f64]| -> Vec<f64> {
        (0..mat.rows())
            .map(|i| mat.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + offset[i])
            .collect()
    };
    let mut xs = vec![x0.to_vec()];
    let mut g_prev = g(x0);
    let mut g_cur = g_prev.clone();
    for _ in 0..iters {
        let x = xs.last().unwrap();
        let z: Vec<f64> = (0..x.len())
            .map(|j| x[j] - eta * (2.0 * g_cur[j] - g_prev[j]))
            .collect();
        let next = resolvent.apply(&z, eta).into_vec();
        g_prev = std::mem::replace(&mut g_cur, g(&next));
        xs.push(next);
    }
    xs
}

fn monotone_affine(dim: usize, n: usize, seed: u64) -> DenseAffineSum {
    let mut r = rng::substream(seed, 99);
    let mut mats = Vec::new();
    let mut offs = Vec::new();
    for _ in 0..n {
        let mut m = DenseMatrix::zeros(dim, dim).as_slice().to_vec();
        for i in 0..dim {
            m[i * dim + i] = 0.5 + r.random::<f64>();
            for j in i + 1..dim {
                let s = r.random::<f64>() - 0.5;
                m[i * dim + j] = s;
                m[j * dim + i] = -s;
            }
        }
        mats.push(DenseMatrix::from_row_major(dim, dim, m));
        offs.push((0..dim).map(|_| r.random::<f64>() - 0.5).collect());
    }
    DenseAffineSum::new(mats, offs).unwrap()
}

fn deterministic_reduction() -> Outcome {
    const ITERS: usize = 1000;
    let affine = monotone_affine(6, 8, 1);
    let (am, ao) = (affine.mean_matrix().clone(), affine.mean_offset().to_vec());
    let affine = affine.into_problem("affine");

    let bil = DenseMatrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]);
    let bilinear = DenseAffineSum::new(vec![bil.clone()], vec![vec![0.0, 0.0]])
        .unwrap()
        .into_problem("bilinear");

    let data = gen_auc_dataset(200, 5, 0.2, 0.1, 3).unwrap();
    let auc = build_auc_problem(&data, 10.0).unwrap();
    let (qm, qv) = match &auc.forward {
        Forward::FiniteSum(_) => {
            let op = vrfrbs_core::problems::AucOperator::new(&data).unwrap();
            (op.q_matrix().clone(), op.q_vector().to_vec())
        }
        Forward::Expectation(_) => unreachable!(),
    };

    let cases: [(&InclusionProblem, DenseMatrix, Vec<f64>); 3] =
        [(&affine, am, ao), (&bilinear, bil, vec![0.0, 0.0]), (&auc, qm, qv)];
    let mut pass = true;
    let mut detail = Vec::new();
    for (problem, mat, off) in cases {
        let eta = 0.2 / problem.lipschitz;
        let x0: Vec<f64> = (0..problem.dim()).map(|i| ((i + 1) as f64).cos()).collect();
        let mut est = EstimatorState::new(
            EstimatorKind::FullBatch,
            EstimatorParams::default(),
            problem.forward.clone(),
            Point::from(x0.as_slice()),
            0,
            Execution::Parallel,
        )
        .unwrap();
        let cfg = SolverConfig {
            keep_iterates: true,
            ..SolverConfig::new(eta, ITERS).with_record(RecordRule::EveryIters(ITERS))
        };
        let trace = solver::run(problem, &mut est, &cfg).unwrap();
        let reference = reference_frbs(&mat, &off, &problem.resolvent, eta, &x0, ITERS);
        let same = trace.iterates.len() == ITERS + 1
            && trace.iterates.iter().zip(&reference).all(|(a, b)| {
                a.iter().zip(b).all(|(u, v)| u.to_bits() == v.to_bits())
            });
        pass &= same;
        detail.push(format!("{}: {}", problem.name, if same { "bitwise equal" } else { "differs" }));
    }
    outcome(pass, detail.join("; "))
}

fn affine50() -> InclusionProblem {
    let spec = AffineToySpec {
        n: 1000,
        dim: 50,
        ..AffineToySpec::default()
    };
    AffineToy::generate(&spec, 0).unwrap().into_problem()
}

fn theory_eta(problem: &InclusionProblem) -> f64 {
    solver::theory_stepsize(problem.lipschitz, 0.0, EstimatorClass::Unbiased, 0.99).unwrap()
}

fn svrg_run(problem: &InclusionProblem, seed: u64, cfg: &SolverConfig) -> solver::RunTrace {
    let n = problem.num_components();
    let params = default_params(EstimatorKind::LSvrg, n, Setting::F, None, Profile::Theory).unwrap();
    let mut est = EstimatorState::new(
        EstimatorKind::LSvrg,
        params,
        problem.forward.clone(),
        Point::zeros(problem.dim()),
        seed,
        Execution::Sequential,
    )
    .unwrap();
    solver::run(problem, &mut est, &cfg.clone().with_seed(seed)).unwrap()
}

fn convergence() -> Outcome {
    let problem = affine50();
    let eta = theory_eta(&problem);
    let n = problem.num_components().unwrap();

    let mut est = EstimatorState::new(
        EstimatorKind::FullBatch,
        EstimatorParams::default(),
        problem.forward.clone(),
        Point::zeros(problem.dim()),
        0,
        Execution::Parallel,
    )
    .unwrap();
    let cfg = SolverConfig {
        stop_tol: 1e-8,
        ..SolverConfig::new(eta, 100_000).with_record(RecordRule::EveryIters(1))
    };
    let full = solver::run(&problem, &mut est, &cfg).unwrap();
    let full_ok = full.stop == StopReason::Tolerance;

    let cfg = SolverConfig {
        max_calls: Some(200 * n as u64),
        ..SolverConfig::new(eta, usize::MAX).with_record(RecordRule::EveryCalls(n as u64))
    };
    let finals: Vec<f64> = vrfrbs_core::par::map_indexed(Execution::Parallel, 10, |s| {
        svrg_run(&problem, s as u64, &cfg).records.last().unwrap().rel_residual
    });
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    outcome(
        full_ok && mean <= 1e-6,
        format!(
            "full-batch reached 1e-8 at iteration {} ({:?}); l-svrg 10-seed mean at 200 epochs {mean:.3e}",
            full.iterations_run, full.stop
        ),
    )
}

fn one_over_k() -> Outcome {
    let problem = affine50();
    let eta = theory_eta(&problem);
    let cfg = SolverConfig::new(eta, 4000).with_record(RecordRule::EveryIters(1));
    let means: Vec<(f64, f64)> = vrfrbs_core::par::map_indexed(Execution::Parallel, 10, |s| {
        let t = svrg_run(&problem, s as u64, &cfg);
        let sq: Vec<f64> = t.records.iter().map(|r| r.abs_residual * r.abs_residual).collect();
        assert_eq!(sq.len(), 4001);
        let m = |k: usize| sq[..=k].iter().sum::<f64>() / (k + 1) as f64;
        (m(2000), m(4000))
    });
    let a = means.iter().map(|m| m.0).sum::<f64>() / 10.0;
    let b = means.iter().map(|m| m.1).sum::<f64>() / 10.0;
    outcome(b <= 0.6 * a, format!("mean_k≤4000 / mean_k≤2000 = {:.4}", b / a))
}

fn run_config(text: &str) -> harness::ExperimentOutput {
    let cfg = ExperimentConfig::from_json(text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    harness::run_experiment(&cfg, dir.path(), RunOptions::default()).unwrap()
}

fn auc_curves() -> Outcome {
    let out = run_config(
        r#"{"experiment_id": "auc-desk",
            "problem": {"family": "auc", "n": 5000, "d": 50, "seed": 0},
            "algorithms": [{"kind": "l-svrg"}, {"kind": "saga"}, {"kind": "sgd-increasing"},
                           {"kind": "l-sarah"}, {"kind": "hybrid-sgd"}, {"kind": "hybrid-svrg"}],
            "run": {"epochs": 1000, "record_every_epochs": 10, "seeds": [0, 1, 2, 3, 4]}}"#,
    );
    let m = harness::final_means(&out.cells);
    let sgd = m["sgd-increasing"];
    let series = out.cells.len();
    let curves: std::collections::BTreeSet<&str> = out.summary.iter().map(|s| s.algorithm.as_str()).collect();
    let mut pass = m["l-svrg"] <= 1e-6 && series == 30 && curves.len() == 6;
    let mut detail = vec![format!("sgd {sgd:.2e}")];
    for a in ["l-svrg", "saga", "l-sarah", "hybrid-svrg"] {
        pass &= m[a] <= 1e-2 * sgd;
        detail.push(format!("{a} {:.2e}", m[a]));
    }
    outcome(pass, detail.join(", "))
}

fn policy_eval_curves() -> Outcome {
    let out = run_config(
        r#"{"experiment_id": "pe-desk",
            "problem": {"family": "policy-eval", "states": 100, "actions": 10, "n": 2000, "d": 21,
                        "gamma": 0.95, "tau_reg": 1e-4, "seed": 0},
            "algorithms": [{"kind": "saga"}, {"kind": "l-svrg"}, {"kind": "sgd-increasing"}],
            "run": {"epochs": 5000, "record_every_epochs": 50, "seeds": [0, 1, 2, 3, 4]}}"#,
    );
    let m = harness::final_means(&out.cells);
    let (saga, svrg, sgd) = (m["saga"], m["l-svrg"], m["sgd-increasing"]);
    outcome(
        saga <= svrg && svrg <= sgd && saga <= 1e-5,
        format!("saga {saga:.2e} <= svrg {svrg:.2e} <= sgd {sgd:.2e}"),
    )
}

fn boundary_identities() -> Outcome {
    let l = 1.7;
    let mut pass = true;
    let mut detail = Vec::new();
    for n in [8.0, 100.0, 1000.0, 50_000.0] {
        let b = 40f64.cbrt() * f64::powf(n, 2.0 / 3.0);
        let card = TheoryCard::saga(b, n, l);
        let eta = solver::theory_stepsize(l, 0.0, EstimatorClass::of(&card), 0.99).unwrap();
        let rate = solver::validate_rates(&card, l, 0.0, eta).get("rate").cloned().unwrap();
        pass &= rate.pass && rate.at_equality;
        detail.push(format!("saga n={n}: {}", rate.at_equality));
    }
    for p in [0.1, 0.25, 0.5, 1.0] {
        let b = 110.0 / (p * p * p);
        let card = TheoryCard::sarah_simplified(p, b, l, None);
        let eta = solver::theory_stepsize(l, 0.0, EstimatorClass::of(&card), 0.99).unwrap();
        let rate = solver::validate_rates(&card, l, 0.0, eta).get("rate").cloned().unwrap();
        pass &= card.biased && rate.pass && rate.at_equality;
        detail.push(format!("sarah p={p}: {}", rate.at_equality));
    }
    outcome(pass, format!("at equality: {}", detail.join(", ")))
}

fn infrastructure() -> Outcome {
    let mut detail = Vec::new();

    // Byte-level reproducibility across worker counts.
    let cfg = ExperimentConfig::from_json(
        r#"{"experiment_id": "repro",
            "problem": {"family": "auc", "n": 300, "d": 5, "seed": 9},
            "algorithms": [{"kind": "l-svrg"}, {"kind": "saga"}, {"kind": "sgd-increasing"},
                           {"kind": "l-sarah"}, {"kind": "hybrid-sgd"}, {"kind": "hybrid-svrg"}],
            "run": {"epochs": 20, "seeds": [1, 2, 3]}}"#,
    )
    .unwrap();
    let files = |jobs: usize, exec: Execution| {
        let dir = tempfile::tempdir().unwrap();
        harness::run_experiment(&cfg, dir.path(), RunOptions { jobs: Some(jobs), exec }).unwrap();
        ["runs.csv", "summary.csv", "manifest"].map(|f| std::fs::read(dir.path().join(f)).unwrap())
    };
    let a = files(1, Execution::Sequential);
    let repro = a == files(4, Execution::Parallel) && a == files(2, Execution::Parallel);
    detail.push(format!("byte-identical outputs: {repro}"));

    // Epoch counters against an instrumented operator.
    let mut counts = true;
    let base: Arc<dyn FiniteSumOperator> = Arc::new(monotone_affine(4, 30, 5));
    for kind in EstimatorKind::ALL {
        let counter = Arc::new(CountingOperator::new(base.clone()));
        let problem = InclusionProblem::new("counted", Forward::FiniteSum(counter.clone()), Resolvent::Zero).unwrap();
        let params = default_params(kind, Some(30), Setting::F, None, Profile::Theory).unwrap();
        let mut est =
            EstimatorState::new(kind, params, problem.forward.clone(), Point::zeros(4), 3, Execution::Sequential)
                .unwrap();
        let cfg = SolverConfig {
            max_calls: Some(30 * 40),
            ..SolverConfig::new(0.05, usize::MAX).with_record(RecordRule::EveryCalls(30))
        };
        // Residuals go through the uncounted operator.
        let metered = InclusionProblem { forward: Forward::FiniteSum(base.clone()), ..problem.clone() };
        let trace = solver::run(&metered, &mut est, &cfg);
        let trace = match trace {
            Ok(t) => t,
            Err(e) => {
                detail.push(format!("{kind}: {e}"));
                counts = false;
                continue;
            }
        };
        let last = trace.records.last().unwrap();
        counts &= last.calls == counter.count() && last.epoch * 30.0 == counter.count() as f64;
    }
    detail.push(format!("epoch counters exact: {counts}"));

    // Nonexpansiveness of every resolvent kind.
    let mut r = rng::substream(11, 99);
    let dim = 8;
    let kinds = [
        Resolvent::Zero,
        Resolvent::auc(5, 1.5, 2.0),
        Resolvent::SoftThreshold { start: 2, len: 4, weight: 0.7 },
        Resolvent::User(Arc::new(|z: &[f64], _eta: f64, out: &mut [f64]| {
            for (o, v) in out.iter_mut().zip(z) {
                *o = v.clamp(-1.0, 1.0);
            }
        })),
    ];
    let mut worst: f64 = 0.0;
    for res in &kinds {
        for _ in 0..1000 {
            let x: Vec<f64> = (0..dim).map(|_| 6.0 * (r.random::<f64>() - 0.5)).collect();
            let y: Vec<f64> = (0..dim).map(|_| 6.0 * (r.random::<f64>() - 0.5)).collect();
            let eta = 0.01 + 2.0 * r.random::<f64>();
            let (jx, jy) = (res.apply(&x, eta), res.apply(&y, eta));
            let d_in: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let d_out: f64 = jx.iter().zip(jy.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            worst = worst.max(d_out / d_in);
        }
    }
    let nonexp = worst <= 1.0 + 1e-12;
    detail.push(format!("max ||Jx-Jy||/||x-y|| {worst:.12}"));

    outcome(repro && counts && nonexp, detail.join("; "))
}

fn main() {
    // Accept and ignore libtest arguments.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    type Criterion = (&'static str, fn() -> Outcome, u64);
    let criteria: [Criterion; 10] = [
        ("unbiased estimator certification", unbiased_certification, 60),
        ("biased estimator certification", biased_certification, 60),
        ("variance-recursion inequality", variance_recursion, 120),
        ("deterministic reduction", deterministic_reduction, 120),
        ("convergence regression", convergence, 120),
        ("O(1/K) trend", one_over_k, 120),
        ("auc curve ordering", auc_curves, 600),
        ("policy evaluation curve ordering", policy_eval_curves, 600),
        ("step-size boundary identities", boundary_identities, 60),
        ("infrastructure", infrastructure, 120),
    ];
    let mut failed = 0;
    for (name, run, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        let took = t.elapsed();
        let in_time = took <= Duration::from_secs(limit);
        let ok = o.pass && in_time;
        failed += usize::from(!ok);
        println!(
            "{} {name} [{:.1}s, limit {limit}s]: {}",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
