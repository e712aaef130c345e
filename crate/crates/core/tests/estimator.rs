mod common;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splinedp::estimator::Checkpoint;
use splinedp::{
    EstimatorState, Hyperparams, ReducedEstimator, SplineView, TdRule, Triangulation, ValueLearner,
};

use common::*;

fn rel_inf(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

#[test]
fn rls_matches_constrained_batch_least_squares() {
    let s = setup(pendulum_grid(), 4, 1);
    let sp = &s.space;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let target = &s.projector.z * DVector::from_fn(sp.ahat(), |_, _| rng.random_range(-1.0..1.0));

    let samples = 2000;
    let mut x = DMatrix::zeros(samples, sp.ahat());
    let mut y = DVector::zeros(samples);
    let hyper = Hyperparams { gamma: 0.0, beta1: 1e6, beta2: 0.0 };
    let mut st = EstimatorState::init(s.projector.clone(), hyper).unwrap();
    for k in 0..samples {
        let p = random_point_in_bounds(&mut rng, sp.triangulation());
        let row = sp.basis_row(&p).unwrap().to_dense(sp.ahat());
        y[k] = row.dot(&target);
        x.set_row(k, &row.transpose());
        st.rls_update(&row, y[k]).unwrap();
    }
    let oracle = constrained_ls_oracle(&x, &y, &s.smoothness.h);
    assert!(rel_inf(&oracle, &target) < 1e-8, "oracle itself off by {}", rel_inf(&oracle, &target));
    let err = rel_inf(&st.c, &oracle);
    assert!(err < 1e-4, "relative error {err}");
}

/// Square split into four triangles around its center: five vertices, and
/// the linear C^0 space has exactly one free parameter per vertex.
fn fan() -> Triangulation {
    Triangulation::new(
        vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![0.5, 0.5]],
        vec![vec![0, 1, 4], vec![1, 2, 4], vec![2, 3, 4], vec![3, 0, 4]],
    )
    .unwrap()
}

#[test]
fn rlstd_converges_to_bellman_solution_on_chain() {
    let s = setup(fan(), 1, 0);
    assert_eq!(s.projector.free_parameters(), 5);
    let states: Vec<Vec<f64>> = s.space.triangulation().vertices().to_vec();
    let gamma = 0.9;
    let rewards = [1.0, -0.5, 0.25, 2.0, -1.0];
    // Successor slots, each with probability 1/4, visited round-robin so the
    // empirical transition frequencies match the chain exactly.
    let slots: [[usize; 4]; 5] = [[1, 1, 4, 0], [2, 4, 4, 0], [3, 3, 3, 1], [0, 4, 2, 2], [0, 1, 2, 3]];
    let mut chain = DMatrix::zeros(5, 5);
    for (i, row) in slots.iter().enumerate() {
        for &j in row {
            chain[(i, j)] += 0.25;
        }
    }
    let v_star = (DMatrix::identity(5, 5) - chain * gamma)
        .lu()
        .solve(&DVector::from_row_slice(&rewards))
        .unwrap();

    let hyper = Hyperparams { gamma, beta1: 10.0, beta2: 0.0 };
    let mut st = EstimatorState::init(s.projector.clone(), hyper).unwrap();
    let rows: Vec<_> = states.iter().map(|p| s.space.basis_row(p).unwrap()).collect();
    let mut cursor = [0usize; 5];
    let mut state = 0;
    for _ in 0..100_000 {
        let next = slots[state][cursor[state] % 4];
        cursor[state] += 1;
        st.td_update(TdRule::Rlstd, &rows[state], &rows[next], rewards[state]).unwrap();
        state = next;
    }
    let view = SplineView::new(&s.space, st.c.as_slice());
    for (i, p) in states.iter().enumerate() {
        let v = view.evaluate(p).unwrap();
        assert!((v - v_star[i]).abs() < 1e-2, "state {i}: {v} vs {}", v_star[i]);
    }
}

#[test]
fn rlstd_matches_closed_form_lstd() {
    // P_t = pinv(Z (I / beta1 + sum x (x - gamma x')^T) Z),  c_t = P_t sum x r.
    let s = setup(Triangulation::grid(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 2, 1);
    let sp = &s.space;
    let a = sp.ahat();
    let hyper = Hyperparams { gamma: 0.8, beta1: 10.0, beta2: 0.0 };
    let mut st = EstimatorState::init(s.projector.clone(), hyper).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut acc = DMatrix::identity(a, a) / hyper.beta1;
    let mut rhs = DVector::zeros(a);
    let mut p = random_point_in_bounds(&mut rng, sp.triangulation());
    for _ in 0..200 {
        let q = random_point_in_bounds(&mut rng, sp.triangulation());
        let r: f64 = rng.random_range(-1.0..1.0);
        let (x0, x1) = (sp.basis_row(&p).unwrap(), sp.basis_row(&q).unwrap());
        st.td_update(TdRule::Rlstd, &x0, &x1, r).unwrap();
        let (d0, d1) = (x0.to_dense(a), x1.to_dense(a));
        acc += &d0 * (&d0 - &d1 * hyper.gamma).transpose();
        rhs += &d0 * r;
        p = q;
    }
    let z = &s.projector.z;
    let p_oracle = (z * acc * z).pseudo_inverse(1e-10).unwrap();
    let c_oracle = &p_oracle * rhs;
    assert!((&st.p - &p_oracle).amax() < 1e-8 * p_oracle.amax());
    assert!(rel_inf(&st.c, &c_oracle) < 1e-8);
    // The update is exact, and the exact covariance is not symmetric.
    assert!((&st.p - st.p.transpose()).amax() > 1e-6 * st.p.amax());
}

fn random_sequence(
    sp: &splinedp::SplineSpace,
    n: usize,
    seed: u64,
) -> Vec<(splinedp::BasisRow, splinedp::BasisRow, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = random_point_in_bounds(&mut rng, sp.triangulation());
    (0..n)
        .map(|_| {
            // Short hops, like a trajectory.
            let b = sp.triangulation().bounds();
            let q: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(k, v)| (v + rng.random_range(-0.1..0.1) * (b.upper[k] - b.lower[k])).clamp(b.lower[k], b.upper[k]))
                .collect();
            let item = (sp.basis_row(&p).unwrap(), sp.basis_row(&q).unwrap(), rng.random_range(-2.0..0.0));
            p = q;
            item
        })
        .collect()
}

#[test]
fn forgetting_preserves_continuity_over_long_runs() {
    let s = setup(Triangulation::grid(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 2, 1);
    let hyper = Hyperparams { gamma: 0.95, beta1: 10.0, beta2: 0.4 };
    let mut st = EstimatorState::init(s.projector.clone(), hyper).unwrap();
    let h = &s.smoothness.h;
    let mut worst: f64 = 0.0;
    for (x0, x1, r) in random_sequence(&s.space, 10_000, 23) {
        st.td_update(TdRule::RlstdForget, &x0, &x1, r).unwrap();
        worst = worst.max((h * &st.c).amax() - 1e-6 * st.c.amax());
    }
    assert!(worst <= 1e-9, "continuity violated by {worst}");
}

#[test]
fn covariance_stays_in_projector_range() {
    let s = setup(pendulum_grid(), 4, 1);
    let z = &s.projector.z;
    for rule in [TdRule::Rlstd, TdRule::RlstdForget] {
        let hyper = Hyperparams { gamma: 0.98, beta1: 10.0, beta2: 0.4 };
        let mut st = EstimatorState::init(s.projector.clone(), hyper).unwrap();
        for (x0, x1, r) in random_sequence(&s.space, 300, 24) {
            st.td_update(rule, &x0, &x1, r).unwrap();
        }
        let sandwiched = z * &st.p * z;
        assert!((&st.p - sandwiched).amax() <= 1e-6 * st.p.amax());
    }
}

#[test]
fn reduced_estimator_tracks_dense_estimator() {
    let s = setup(pendulum_grid(), 4, 1);
    for rule in [TdRule::Rlstd, TdRule::RlstdForget] {
        let hyper = Hyperparams { gamma: 0.98, beta1: 10.0, beta2: 0.4 };
        let mut dense = EstimatorState::init(s.projector.clone(), hyper).unwrap();
        let mut reduced = ReducedEstimator::init(&s.projector, hyper).unwrap();
        for (x0, x1, r) in random_sequence(&s.space, 500, 25) {
            dense.td_update(rule, &x0, &x1, r).unwrap();
            reduced.td_update(rule, &x0, &x1, r).unwrap();
        }
        assert!(rel_inf(reduced.coefficients(), dense.coefficients()) < 1e-8);
        let (pd, pr) = (dense.covariance(), reduced.covariance());
        assert!((&pd - &pr).amax() < 1e-8 * pd.amax());
        assert_eq!(dense.step_count(), reduced.step_count());
    }
}

#[test]
fn checkpoints_resume_identically() {
    let s = setup(Triangulation::grid(&[0.0, 1.0, 2.0], &[0.0, 1.0]).unwrap(), 3, 1);
    let hyper = Hyperparams { gamma: 0.9, beta1: 10.0, beta2: 0.4 };
    let seq = random_sequence(&s.space, 200, 26);
    let mut a = EstimatorState::init(s.projector.clone(), hyper).unwrap();
    for (x0, x1, r) in &seq[..100] {
        a.td_update(TdRule::RlstdForget, x0, x1, *r).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cp.json");
    a.checkpoint(&s.fingerprint).save(&path).unwrap();
    let cp = Checkpoint::load(&path).unwrap();
    let mut b = EstimatorState::from_checkpoint(&cp, s.projector.clone(), &s.fingerprint).unwrap();
    let mut c = ReducedEstimator::from_checkpoint(&cp, &s.projector, &s.fingerprint).unwrap();
    for (x0, x1, r) in &seq[100..] {
        a.td_update(TdRule::RlstdForget, x0, x1, *r).unwrap();
        b.td_update(TdRule::RlstdForget, x0, x1, *r).unwrap();
        c.td_update(TdRule::RlstdForget, x0, x1, *r).unwrap();
    }
    assert_eq!(a.c, b.c);
    assert!(rel_inf(c.coefficients(), &a.c) < 1e-9);
    assert!(EstimatorState::from_checkpoint(&cp, s.projector.clone(), "other space").is_err());
}

#[test]
fn forgetting_keeps_excited_direction_alive() {
    let s = setup(pendulum_grid(), 4, 1);
    let x = s.space.basis_row(&[0.3, -1.1]).unwrap();
    let xd = x.to_dense(s.space.ahat());
    let z = &s.projector.z;
    let xzx = xd.dot(&(z * &xd));
    let quad = |p: &DMatrix<f64>| xd.dot(&(p * &xd));
    let mut with = EstimatorState::init(s.projector.clone(), Hyperparams { gamma: 0.0, beta1: 10.0, beta2: 0.4 }).unwrap();
    let mut without = EstimatorState::init(s.projector.clone(), Hyperparams { gamma: 0.0, beta1: 10.0, beta2: 0.0 }).unwrap();
    for _ in 0..2000 {
        with.td_update(TdRule::RlstdForget, &x, &x, -1.0).unwrap();
        without.td_update(TdRule::Rlstd, &x, &x, -1.0).unwrap();
        let q = quad(&with.p);
        assert!(q >= 0.4 * xzx * xzx / (1.0 + q) * (1.0 - 1e-9), "collapsed to {q}");
    }
    // Without forgetting the excited direction shrinks as a / (1 + N a).
    let a0 = 10.0 * xzx;
    let collapsed = a0 / (1.0 + 2000.0 * a0);
    assert!((quad(&without.p) / collapsed - 1.0).abs() < 1e-6);
    assert!(quad(&with.p) > 10.0 * collapsed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_rule_preserves_continuity(
        seed in 0u64..10_000,
        gamma in 0.0f64..0.99,
        beta2 in 0.0f64..1.0,
        forget in any::<bool>(),
    ) {
        let s = setup(Triangulation::grid(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap(), 3, 1);
        let rule = if forget { TdRule::RlstdForget } else { TdRule::Rlstd };
        let mut st = EstimatorState::init(s.projector.clone(), Hyperparams { gamma, beta1: 10.0, beta2 }).unwrap();
        for (x0, x1, r) in random_sequence(&s.space, 200, seed) {
            st.td_update(rule, &x0, &x1, r).unwrap();
            prop_assert!((&s.smoothness.h * &st.c).amax() <= 1e-6 * st.c.amax() + 1e-9);
        }
    }

    #[test]
    fn rls_covariance_stays_symmetric(seed in 0u64..10_000) {
        let s = setup(Triangulation::grid(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 2, 1);
        let mut st = EstimatorState::init(s.projector.clone(), Hyperparams { gamma: 0.0, beta1: 10.0, beta2: 0.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let p = random_point_in_bounds(&mut rng, s.space.triangulation());
            st.rls_update(&s.space.basis_row(&p).unwrap().to_dense(s.space.ahat()), rng.random()).unwrap();
        }
        prop_assert!((&st.p - st.p.transpose()).amax() <= 1e-12 * st.p.amax());
    }
}

#[test]
fn shared_projector_is_not_copied() {
    let s = setup(Triangulation::grid(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 1, 0);
    let st = EstimatorState::init(s.projector.clone(), Hyperparams { gamma: 0.5, beta1: 1.0, beta2: 0.0 }).unwrap();
    assert!(Arc::ptr_eq(&st.projector, &s.projector));
}
