use std::sync::Arc;

use vrfrbs_core::estimators::{CardConvention, EstimatorKind, EstimatorParams, EstimatorState};
use vrfrbs_core::inclusion::{Forward, Point};
use vrfrbs_core::linalg::DenseMatrix;
use vrfrbs_core::problems::synthetic::{linear_toy, DenseAffineSum};
use vrfrbs_core::verification::{
    check_bias_recursion, check_bias_recursion_exact, check_unbiased, check_unbiased_exact,
    check_variance_recursion, informative_history, FrozenHistory, VarianceCheck, VerifyConfig,
};
use vrfrbs_core::{Error, Execution};

fn pts(rows: &[&[f64]]) -> Vec<Point> {
    rows.iter().map(|r| Point::from(*r)).collect()
}

fn cfg(trials: usize, seed: u64) -> VerifyConfig {
    VerifyConfig::default().with_trials(trials).with_seed(seed)
}

#[test]
fn sgd_two_component_enumeration() {
    let op = DenseAffineSum::new(
        vec![DenseMatrix::from_rows(&[&[2.0]]), DenseMatrix::from_rows(&[&[-1.0]])],
        vec![vec![0.5], vec![1.0]],
    )
    .unwrap();
    let f = Forward::FiniteSum(Arc::new(op));
    let h = FrozenHistory::warm(
        EstimatorKind::SgdIncreasing,
        EstimatorParams::default().with_batch(1),
        &f,
        &pts(&[&[0.3], &[-1.2], &[0.7]]),
        4,
    )
    .unwrap();
    let r = check_unbiased_exact(&h).unwrap();
    assert_eq!(r.trials, 2);
    assert!(r.mean_norm <= 1e-14, "{}", r.to_line());
}

#[test]
fn svrg_snapshot_switch_times_batch_enumeration() {
    let f = linear_toy(5, 8).forward;
    let traj = pts(&[&[0.1, 0.2, 0.3], &[0.5, -0.1, 0.0], &[0.2, 0.4, -0.6], &[1.0, 0.0, 0.5]]);
    let h = FrozenHistory::warm(EstimatorKind::LSvrg, EstimatorParams::default().with_batch(1), &f, &traj, 2).unwrap();
    let r = check_unbiased_exact(&h).unwrap();
    assert_eq!(r.trials, 10);
    assert!(r.mean_norm <= 1e-14, "{}", r.to_line());
}

#[test]
fn hybrid_sgd_omega_one_has_zero_target() {
    let f = linear_toy(10, 1).forward;
    let traj = pts(&[&[0.0, 0.0, 0.0], &[1.0, 0.5, 0.0], &[0.5, 0.5, 0.5], &[0.2, -0.3, 0.4]]);
    let params = EstimatorParams::default().with_omega(1.0).with_batch(2);
    let h = FrozenHistory::warm(EstimatorKind::HybridSgd, params, &f, &traj, 0).unwrap();
    let r = check_bias_recursion(&h, &cfg(20_000, 1)).unwrap();
    assert_eq!(r.target_norm, 0.0);
    assert!(r.pass, "{}", r.to_line());
}

#[test]
fn sarah_always_switch_has_zero_error() {
    let f = linear_toy(10, 1).forward;
    let traj = pts(&[&[0.0, 0.0, 0.0], &[1.0, 0.5, 0.0], &[0.5, 0.5, 0.5]]);
    let h = FrozenHistory::warm(EstimatorKind::LSarah, EstimatorParams::default().with_p(1.0), &f, &traj, 0).unwrap();
    let r = check_bias_recursion(&h, &cfg(1000, 1)).unwrap();
    assert!(r.mean_norm < 1e-14);
    assert_eq!(r.target_norm, 0.0);
    assert!(r.pass);
}

#[test]
fn sarah_three_component_enumeration_matches_geometric_target() {
    let params = EstimatorParams::default().with_p(0.5).with_batch(1);
    let (_, _, h) = informative_history(EstimatorKind::LSarah, &params, &linear_toy(3, 2), 6).unwrap();
    let r = check_bias_recursion_exact(&h).unwrap();
    assert!(r.target_norm > 0.0);
    let err: f64 = r.mean.iter().zip(&r.target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-12, "{}", r.to_line());
}

#[test]
fn kind_class_mismatch_is_invalid_argument() {
    let f = linear_toy(4, 0).forward;
    let traj = pts(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
    let biased = FrozenHistory::warm(EstimatorKind::HybridSvrg, EstimatorParams::default(), &f, &traj, 0).unwrap();
    assert!(matches!(check_unbiased(&biased, &cfg(100, 0)), Err(Error::InvalidArgument(_))));
    let unbiased = FrozenHistory::warm(EstimatorKind::LSvrg, EstimatorParams::default(), &f, &traj, 0).unwrap();
    assert!(matches!(check_bias_recursion(&unbiased, &cfg(100, 0)), Err(Error::InvalidArgument(_))));
}

fn variance(kind: EstimatorKind, params: EstimatorParams, traj: &[Point], trials: usize) -> vrfrbs_core::verification::McReport {
    let toy = linear_toy(10, 0);
    check_variance_recursion(
        &VarianceCheck {
            kind,
            params,
            forward: &toy.forward,
            trajectory: traj,
            lipschitz: toy.forward.lipschitz(),
            convention: CardConvention::Stated,
            sigma2: None,
            warmup_seed: 3,
        },
        &cfg(trials, 9),
    )
    .unwrap()
}

fn four_points() -> Vec<Point> {
    pts(&[&[0.0, 0.0, 0.0], &[0.4, -0.2, 0.1], &[0.3, 0.1, -0.5], &[0.9, 0.2, 0.0], &[0.6, -0.4, 0.3]])
}

#[test]
fn full_batch_variance_sides_are_zero() {
    let r = variance(EstimatorKind::FullBatch, EstimatorParams::default(), &four_points(), 1000);
    assert_eq!(r.mean_norm, 0.0);
    assert_eq!(r.target_norm, 0.0);
    assert!(r.pass);
}

#[test]
fn saga_variance_at_card_constants() {
    let r = variance(EstimatorKind::Saga, EstimatorParams::default().with_batch(4), &four_points(), 100_000);
    assert!(r.pass, "{}", r.to_line());
    assert!(r.target_norm > r.mean_norm);
}

#[test]
fn sgd_variance_with_large_batch() {
    let r = variance(EstimatorKind::SgdIncreasing, EstimatorParams::default().with_batch(8), &four_points(), 100_000);
    assert!(r.pass, "{}", r.to_line());
}

#[test]
fn saga_variance_needs_four_points() {
    let toy = linear_toy(10, 0);
    let traj = &four_points()[..3];
    let e = check_variance_recursion(
        &VarianceCheck {
            kind: EstimatorKind::Saga,
            params: EstimatorParams::default(),
            forward: &toy.forward,
            trajectory: traj,
            lipschitz: 1.0,
            convention: CardConvention::Stated,
            sigma2: None,
            warmup_seed: 0,
        },
        &cfg(100, 0),
    );
    assert!(e.is_err());
}

/// Monte-Carlo means fall within 4 SE of the enumerated mean in at least 95% of audits.
#[test]
fn monte_carlo_agrees_with_enumeration() {
    let toy = linear_toy(5, 3);
    for kind in [EstimatorKind::LSvrg, EstimatorKind::Saga, EstimatorKind::HybridSvrg] {
        let params = EstimatorParams::default().with_batch(1);
        let (_, _, h) = informative_history(kind, &params, &toy, 1).unwrap();
        let exact = if kind.is_biased() {
            check_bias_recursion_exact(&h).unwrap()
        } else {
            check_unbiased_exact(&h).unwrap()
        };
        let audits = 40;
        let mut hits = 0;
        for a in 0..audits {
            let mut hh = h.clone();
            hh.state.reseed(a);
            let mc = if kind.is_biased() {
                check_bias_recursion(&hh, &cfg(2000, 100 + a)).unwrap()
            } else {
                check_unbiased(&hh, &cfg(2000, 100 + a)).unwrap()
            };
            let d: f64 = mc.mean.iter().zip(&exact.mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            hits += u64::from(d <= 4.0 * mc.std_error);
        }
        assert!(hits * 100 >= 95 * audits, "{kind}: {hits}/{audits}");
    }
}

#[test]
fn frozen_state_is_untouched() {
    let f = linear_toy(10, 0).forward;
    let traj = four_points();
    let h = FrozenHistory::warm(EstimatorKind::Saga, EstimatorParams::default(), &f, &traj, 0).unwrap();
    let before = h.state.clone();
    check_unbiased(&h, &cfg(500, 0)).unwrap();
    assert_eq!(before.current(), h.state.current());
    assert_eq!(before.k(), h.state.k());
}

#[test]
fn warm_history_reproduces_solver_state() {
    let toy = linear_toy(10, 0);
    let params = EstimatorParams::default().with_batch(2);
    let (traj, warm, h) = informative_history(EstimatorKind::LSvrg, &params, &toy, 5).unwrap();
    let mut st = EstimatorState::new(EstimatorKind::LSvrg, params, toy.forward.clone(), traj[0].clone(), warm, Execution::Sequential).unwrap();
    for j in 1..traj.len() - 1 {
        let km2 = traj[j.saturating_sub(2)].clone();
        st.step(&traj[j], &traj[j - 1], &km2).unwrap();
    }
    assert_eq!(st.current(), h.state.current());
}

#[test]
fn variance_recursion_holds_across_batch_sizes() {
    for kind in EstimatorKind::ALL {
        for b in [1, 2, 4, 10] {
            let r = variance(kind, EstimatorParams::default().with_batch(b), &four_points(), 20_000);
            assert!(r.pass, "b={b}: {}", r.to_line());
        }
    }
}
