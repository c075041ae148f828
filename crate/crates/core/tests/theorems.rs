//! Exact relations between the Q-learning and Double Q-learning asymptotic
//! covariances on seeded random models.

use doubleq_core::amse::IDENTITY_TOL;
use doubleq_core::linalg;
use doubleq_core::pipeline::{random_model, RandomModelSpec};
use doubleq_core::suites::{lemma3_trial, theorem2_trial, theorem3_trial, Verdict};
use doubleq_core::Error;

#[test]
fn averaged_double_matches_single() {
    for seed in 0..25 {
        let t = theorem2_trial(seed).unwrap();
        assert_eq!(t.verdict, Verdict::Pass, "seed {seed}: {:?}", t.metrics);
        assert!(t.metric("equality_rel").unwrap() <= 1e-8);
    }
}

#[test]
fn gap_lower_bound() {
    let mut checked = 0;
    for seed in 0..25 {
        let t = theorem3_trial(seed).unwrap();
        assert_ne!(t.verdict, Verdict::Fail, "seed {seed}: {:?}", t.metrics);
        if t.verdict == Verdict::Pass {
            checked += 1;
            assert!(t.metric("c0_lower").unwrap() > 0.0);
        }
    }
    assert!(checked > 20);
}

#[test]
fn eigenvalue_union() {
    for seed in 0..25 {
        let t = lemma3_trial(seed).unwrap();
        assert_eq!(t.verdict, Verdict::Pass, "seed {seed}: {:?}", t.metrics);
    }
}

#[test]
fn block_pattern_and_trace_identities() {
    let spec = RandomModelSpec {
        n_states: 4,
        n_actions: 2,
        ..Default::default()
    };
    for seed in 0..10 {
        let m = random_model(&spec, seed).unwrap().model;
        for factor in [1.1, 2.0, 5.0] {
            let g = factor * m.lsa.g0;
            let cov = m.covariances(g).unwrap();
            let r = m.report(g).unwrap();
            assert!(r.checks.all(), "seed {seed} g {g}: {:?}", r.checks);
            // trace(V - C) = 2 g trace(X)
            let lhs = (&cov.v - &cov.c).trace();
            assert!((lhs - 2.0 * g * r.gap_trace_x).abs() <= IDENTITY_TOL * lhs.abs().max(1.0));
            // Sigma_Q = (V + C) / 2
            let half = (&cov.v + &cov.c) * 0.5;
            assert!(
                linalg::max_abs(&(half - &cov.sigma_q))
                    <= 1e-8 * linalg::max_abs(&cov.sigma_q).max(1.0)
            );
        }
    }
}

#[test]
fn refusals() {
    let m = random_model(&RandomModelSpec::default(), 3).unwrap().model;
    let g0 = m.lsa.g0;
    assert!(matches!(
        m.report(0.5 * g0),
        Err(Error::StepSizeTooSmall { .. })
    ));
    assert!(matches!(m.report(g0), Err(Error::StepSizeTooSmall { .. })));
}

#[test]
fn tabular_gain_bound() {
    // g0 <= 1 / (mu_min (1 - gamma)) for tabular features
    for seed in 0..20 {
        let m = random_model(&RandomModelSpec::default(), seed)
            .unwrap()
            .model;
        let bound = 1.0 / (m.chain.mu_min() * (1.0 - m.mdp.discount()));
        assert!(m.lsa.g0 <= bound, "seed {seed}: {} > {bound}", m.lsa.g0);
    }
}
