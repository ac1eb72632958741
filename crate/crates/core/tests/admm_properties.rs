mod common;

use nalgebra::DVector;
use proptest::prelude::*;

use toa_core::admm::{self, AdmmConfig, AdmmState};
use toa_core::loss::LossSpec;
use toa_core::model::{gamma_for_gsnr, measure, true_ranges, Measurements, RngSeed, Scenario, StableParams};

use common::{grid_golden_min, loss_value};

const LOSSES: [LossSpec; 4] = [LossSpec::L1, LossSpec::L2, LossSpec::Lp { p: 1.3 }, LossSpec::Huber { radius: 1.0 }];

fn noisy(seed: u64) -> (Scenario, Measurements) {
    let s = Scenario::fixed_perimeter8();
    let gamma = gamma_for_gsnr(&s, 1.5, 20.0).unwrap();
    (s.clone(), measure(&s, StableParams::symmetric(1.5, gamma), RngSeed(seed)).unwrap())
}

#[test]
fn converged_runs_meet_the_tolerance() {
    let cfg = AdmmConfig::default();
    for seed in 0..10 {
        let (s, m) = noisy(seed);
        for loss in &LOSSES {
            let r = admm::solve(&s, &m, loss, &cfg, None).unwrap();
            if r.converged {
                assert!(r.primal_residual < cfg.delta, "{loss:?} seed {seed}: {}", r.primal_residual);
                assert_eq!(r.primal_residual, admm::primal_residual(&r.state, &s));
            }
        }
    }
}

#[test]
fn successive_differences_vanish_on_converged_runs() {
    let cfg = AdmmConfig::default();
    let bound = 10.0 * cfg.delta;
    for seed in 0..10 {
        let (s, m) = noisy(seed);
        for loss in [LossSpec::Huber { radius: 1.0 }, LossSpec::L2] {
            let r = admm::solve(&s, &m, &loss, &cfg, None).unwrap();
            assert!(r.converged);
            let st = r.last_step;
            assert!(
                st.dx <= bound && st.dd <= bound && st.dbeta <= bound && st.dlambda <= bound,
                "{loss:?} seed {seed}: {st:?}"
            );
        }
    }
}

#[test]
fn d_update_matches_constrained_grid_minimization() {
    // f(r - d) + rho/2 (|v| - d)^2 over d >= 0
    let s = Scenario::fixed_perimeter8();
    let cfg = AdmmConfig::default();
    let mut rng = RngSeed(3).rng();
    use rand::Rng;
    for _ in 0..50 {
        let x = DVector::from_fn(2, |_, _| rng.random_range(-12.0..12.0));
        let mut state = AdmmState::feasible_at(&s, x);
        for l in state.lambda.iter_mut() {
            *l = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
        }
        let ranges: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..25.0)).collect();
        let d = admm::d_update(&state, &s, &ranges, &LossSpec::Huber { radius: 1.0 }, &cfg).unwrap();
        for i in 0..8 {
            let v = (&state.x - &s.sensors()[i] + &state.lambda[i] / cfg.rho).norm();
            let r = ranges[i];
            let g = |di: f64| loss_value("huber", 1.0, r - di) + cfg.rho / 2.0 * (v - di).powi(2);
            let want = grid_golden_min(g, 0.0, r.max(v) + 5.0, 20_000);
            assert!((d[i] - want).abs() < 1e-4, "d {} vs {want}", d[i]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn betas_stay_unit_and_d_nonnegative(seed in 0u64..10_000, which in 0usize..4) {
        let (s, m) = noisy(seed);
        let cfg = AdmmConfig::default().with_max_iters(200);
        let r = admm::solve(&s, &m, &LOSSES[which], &cfg, None).unwrap();
        for b in &r.state.beta {
            prop_assert!((b.norm_squared() - 1.0).abs() <= 1e-12);
        }
        prop_assert!(r.min_d >= -1e-12);
    }

    #[test]
    fn solve_is_deterministic(seed in 0u64..10_000, which in 0usize..4) {
        let (s, m) = noisy(seed);
        let cfg = AdmmConfig::default().with_max_iters(300);
        let a = admm::solve(&s, &m, &LOSSES[which], &cfg, None).unwrap();
        let b = admm::solve(&s, &m, &LOSSES[which], &cfg, None).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn lambda_step_is_rho_times_residual(seed in 0u64..10_000) {
        use rand::Rng;
        let s = Scenario::fixed_perimeter8();
        let mut rng = RngSeed(seed).rng();
        let mut state = AdmmState::random_feasible(&s, &mut rng);
        state.x += DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let cfg = AdmmConfig::default();
        let next = admm::lambda_update(&state, &s, &cfg);
        for i in 0..8 {
            let res = &state.x - &s.sensors()[i] - &state.beta[i] * state.d[i];
            prop_assert!(((&next[i] - &state.lambda[i]) - res * cfg.rho).norm() < 1e-12);
        }
    }
}

#[test]
fn noiseless_solves_recover_the_source() {
    let s = Scenario::fixed_perimeter8();
    let m = Measurements::from_ranges(true_ranges(&s));
    for loss in &LOSSES {
        let r = admm::solve(&s, &m, loss, &AdmmConfig::default(), None).unwrap();
        assert!((r.estimate - s.source()).norm() < 1e-3);
    }
}
