use doubleq_core::env::*;
use doubleq_core::linalg;
use doubleq_core::lsa::eigenvalue_union_distance;
use doubleq_core::lyapunov::{kronecker_sum, solve_lyapunov, LyapunovProblem};
use doubleq_core::mdp::{stationary_distribution, STATIONARY_TOL};
use doubleq_core::pipeline::{random_model, RandomModelSpec};
use doubleq_core::sim::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn stochastic(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(0.01f64..1.0, n * n).prop_map(move |v| {
        let mut m = DMatrix::from_row_slice(n, n, &v);
        for mut row in m.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        m
    })
}

fn square(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, n * n).prop_map(move |v| DMatrix::from_row_slice(n, n, &v))
}

fn hurwitz(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    square(n, -1.0, 1.0).prop_map(move |r| {
        let shift = linalg::spectral_abscissa(&r) + 0.2;
        r - DMatrix::identity(n, n) * shift
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stationary_law_is_invariant(p in (2usize..8).prop_flat_map(stochastic)) {
        let mu = stationary_distribution(&p, STATIONARY_TOL).unwrap();
        prop_assert!((mu.sum() - 1.0).abs() < 1e-12);
        prop_assert!(mu.iter().all(|&v| v > 0.0));
        prop_assert!(linalg::max_abs_vec(&(p.tr_mul(&mu) - &mu)) < 1e-12);
    }

    #[test]
    fn lyapunov_residual_and_psd(
        (a, l) in (1usize..7).prop_flat_map(|n| (hurwitz(n), square(n, -1.0, 1.0)))
    ) {
        let q = &l * l.transpose();
        let problem = LyapunovProblem::new(a, linalg::symmetrize(&q)).unwrap();
        let sol = solve_lyapunov(&problem).unwrap();
        let scale = 1.0f64.max(linalg::max_abs(&sol.x));
        prop_assert!(problem.residual(&sol.x) <= 1e-9 * scale);
        prop_assert!(linalg::asymmetry(&sol.x) <= 1e-12 * scale);
        prop_assert!(linalg::min_symmetric_eigenvalue(&sol.x) >= -1e-9 * scale);
    }

    #[test]
    fn kronecker_sum_acts_as_lyapunov_operator(
        (a, x) in (1usize..6).prop_flat_map(|n| (square(n, -2.0, 2.0), square(n, -2.0, 2.0)))
    ) {
        let lhs = kronecker_sum(&a) * DVector::from_column_slice(x.as_slice());
        let rhs = &a * &x + &x * a.transpose();
        prop_assert!((lhs - DVector::from_column_slice(rhs.as_slice())).amax() < 1e-12);
    }

    #[test]
    fn union_of_spectra(
        (a1, a2) in (1usize..6).prop_flat_map(|n| (square(n, -1.0, 1.0), square(n, -1.0, 1.0)))
    ) {
        prop_assert!(eigenvalue_union_distance(&a1, &a2) < 1e-8);
    }

    #[test]
    fn checkpoints_are_sorted_and_end_at_n(n in 1u64..10_000_000) {
        let c = checkpoints(n);
        prop_assert_eq!(*c.last().unwrap(), n);
        prop_assert!(c.windows(2).all(|w| w[0] < w[1]));
        let mut p = 10;
        while p <= n {
            prop_assert!(c.contains(&p));
            p *= 10;
        }
    }

    #[test]
    fn gridworld_tables_are_stochastic(
        n in 2usize..6,
        slip in 0.0f64..1.0,
        other in any::<bool>(),
        episodic in any::<bool>(),
    ) {
        let spec = GridWorldSpec {
            slip,
            slip_semantics: if other { SlipSemantics::OtherDirections } else { SlipSemantics::AnyDirection },
            mode: if episodic { GridMode::Episodic } else { GridMode::Restart },
            ..GridWorldSpec::new(n)
        };
        let (mdp, _, _) = build_gridworld(&spec).unwrap();
        prop_assert!(linalg::is_row_stochastic(mdp.transition(), 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn zero_step_leaves_parameters(seed in 0u64..1000, steps in 1u64..2000, alg_i in 0usize..7) {
        let spec = RandomModelSpec { n_states: 3, n_actions: 2, ..Default::default() };
        let m = random_model(&spec, seed).unwrap().model;
        let sim = SimModel::new(&m.mdp, &m.features, &m.policy, &m.solution).unwrap();
        let init = DVector::from_fn(sim.dim(), |i, _| i as f64 * 0.25);
        let cfg = RunConfig {
            algorithm: Algorithm::ALL[alg_i],
            // steps below the rounding threshold of every update
            schedule: StepSchedule::Harmonic { c: 1e-300, offset: 0.0 },
            n_steps: steps,
            n_paths: 1,
            seed_base: seed,
            init: Init::Explicit(init.clone()),
            start_state: 0,
            step_counter: StepCounter::Global,
        };
        let expected: f64 = init.iter().zip(sim.theta_star()).map(|(a, b)| (a - b) * (a - b)).sum();
        let r = simulate_path(&sim, &cfg, 0);
        prop_assert!(r.squared_errors.iter().all(|&e| (e - expected).abs() <= 1e-12 * expected.max(1.0)));
    }

    #[test]
    fn one_estimator_per_step(seed in 0u64..1000, steps in 1u64..5000) {
        let spec = RandomModelSpec { n_states: 3, n_actions: 2, ..Default::default() };
        let m = random_model(&spec, seed).unwrap().model;
        let sim = SimModel::new(&m.mdp, &m.features, &m.policy, &m.solution).unwrap();
        let mut theta_a = DVector::from_fn(sim.dim(), |i, _| (i as f64).sin());
        let x = (seed as usize) % sim.dim();
        let s_next = (seed as usize / 7) % sim.n_states();
        let before = theta_a.clone();
        let mut b = theta_a.clone();
        let beta = steps % 2 == 0;
        step_double_q(&sim, theta_a.as_mut_slice(), b.as_mut_slice(), beta, x, s_next, 0.3, PolicyMode::Greedy).unwrap();
        let (changed, untouched) = if beta { (&theta_a, &b) } else { (&b, &theta_a) };
        prop_assert_eq!(untouched, &before);
        // only the coordinate of the sampled pair moves under tabular features
        for i in 0..sim.dim() {
            if i != x {
                prop_assert_eq!(changed[i], before[i]);
            }
        }
        let r = simulate_path(&sim, &RunConfig {
            algorithm: Algorithm::DQ,
            schedule: StepSchedule::Harmonic { c: 1.0, offset: 1.0 },
            n_steps: steps,
            n_paths: 1,
            seed_base: seed,
            init: Init::Zero,
            start_state: 0,
            step_counter: StepCounter::Global,
        }, 0);
        prop_assert_eq!(r.a_updates + r.b_updates, steps);
    }

    #[test]
    fn theorem_identities_on_seeds(seed in 0u64..10_000) {
        let m = random_model(&RandomModelSpec::default(), seed).unwrap().model;
        let g = 2.0 * m.lsa.g0;
        let r = m.report(g).unwrap();
        prop_assert!(r.checks.all(), "{:?}", r.checks);
        prop_assert!((r.amse_avg - r.amse_q).abs() <= 1e-8 * r.amse_q.max(1.0));
        prop_assert!(r.amse_a >= r.amse_q - 1e-9);
    }
}
