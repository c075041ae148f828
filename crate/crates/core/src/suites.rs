//! Per-trial property checks on seeded random instances. Each trial returns
//! its measured quantities so failures can be replayed from the seed.

use alloc::vec::Vec;

use crate::amse::AmseReport;
use crate::error::Result;
use crate::linalg;
use crate::lsa::eigenvalue_union_distance;
use crate::lyapunov::{solve_lyapunov, LyapunovProblem};
use crate::oracle::{lyapunov_quadrature, random_lyapunov_instance};
use crate::pipeline::{random_model, RandomModelSpec};

/// Relative bound on `|amse_avg - amse_q|`.
pub const THEOREM2_EQUALITY_TOL: f64 = 1e-8;
/// Absolute slack on `amse_a >= amse_q`.
pub const THEOREM2_ORDERING_TOL: f64 = 1e-9;
/// Relative slack on `gap >= g trace(X')`.
pub const THEOREM3_TOL: f64 = 1e-8;
/// Suites skip models with `trace(B1 - B2)` at or below this.
pub const THEOREM3_MIN_NOISE: f64 = 1e-8;
pub const LEMMA3_TOL: f64 = 1e-8;
pub const QUADRATURE_TOL: f64 = 1e-6;
pub const QUADRATURE_MAX_DIM: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Theorem2,
    Theorem3,
    Lemma3,
    Lyapunov,
    Bridge,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Self::Theorem2,
        Self::Theorem3,
        Self::Lemma3,
        Self::Lyapunov,
        Self::Bridge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Theorem2 => "theorem2",
            Self::Theorem3 => "theorem3",
            Self::Lemma3 => "lemma3",
            Self::Lyapunov => "lyapunov",
            Self::Bridge => "bridge",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// The instance does not meet the suite's precondition.
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub seed: u64,
    pub verdict: Verdict,
    pub metrics: Vec<(&'static str, f64)>,
}

impl TrialOutcome {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
    }
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Random models of the theorem suites: 5 states, 3 actions, tabular,
/// `gamma = 0.8`, optimal-action gap above `1e-6`.
pub fn theorem_model_spec() -> RandomModelSpec {
    RandomModelSpec::default()
}

/// `amse_avg = amse_q` and `amse_a >= amse_q` at `g = 2 g0`.
pub fn theorem2_trial(seed: u64) -> Result<TrialOutcome> {
    let m = random_model(&theorem_model_spec(), seed)?;
    let g = 2.0 * m.model.lsa.g0;
    let r = m.model.report(g)?;
    let equality = (r.amse_avg - r.amse_q).abs() / 1.0f64.max(r.amse_q);
    let ok = equality <= THEOREM2_EQUALITY_TOL
        && r.amse_a >= r.amse_q - THEOREM2_ORDERING_TOL
        && r.checks.all();
    Ok(TrialOutcome {
        seed,
        verdict: verdict(ok),
        metrics: report_metrics(&r, &[("equality_rel", equality)]),
    })
}

fn report_metrics(r: &AmseReport, extra: &[(&'static str, f64)]) -> Vec<(&'static str, f64)> {
    let mut v = alloc::vec![
        ("g", r.g),
        ("g0", r.g0),
        ("amse_q", r.amse_q),
        ("amse_a", r.amse_a),
        ("amse_avg", r.amse_avg),
        ("gap", r.gap),
        ("c0_lower", r.c0_lower),
    ];
    v.extend_from_slice(extra);
    v
}

/// `gap >= g trace(X')` with `trace(X') > 0`, and `gap(2g) >= gap(g)`.
pub fn theorem3_trial(seed: u64) -> Result<TrialOutcome> {
    let m = random_model(&theorem_model_spec(), seed)?;
    let noise = m.model.lsa.b_gap().trace();
    let g = 2.0 * m.model.lsa.g0;
    let r = m.model.report(g)?;
    if !(noise > THEOREM3_MIN_NOISE) {
        return Ok(TrialOutcome {
            seed,
            verdict: Verdict::Skip,
            metrics: report_metrics(&r, &[("trace_b_gap", noise)]),
        });
    }
    let r2 = m.model.report(2.0 * g)?;
    let bound = g * r.c0_lower;
    let ok = r.gap >= bound - THEOREM3_TOL * 1.0f64.max(r.gap)
        && r.c0_lower > 0.0
        && r2.gap >= r.gap - THEOREM3_TOL * 1.0f64.max(r.gap);
    Ok(TrialOutcome {
        seed,
        verdict: verdict(ok),
        metrics: report_metrics(
            &r,
            &[
                ("trace_b_gap", noise),
                ("lower_bound", bound),
                ("gap_2g", r2.gap),
            ],
        ),
    })
}

/// `eig(Abar_D) = eig(Abar2 - Abar1) ∪ eig(-(Abar1 + Abar2))` as multisets.
pub fn lemma3_trial(seed: u64) -> Result<TrialOutcome> {
    let m = random_model(&theorem_model_spec(), seed)?;
    let lsa = &m.model.lsa;
    let dist = eigenvalue_union_distance(&lsa.abar1, &lsa.abar2);
    let scale = 1.0f64.max(linalg::max_abs(&lsa.abar_d));
    Ok(TrialOutcome {
        seed,
        verdict: verdict(dist <= LEMMA3_TOL * scale),
        metrics: alloc::vec![("distance", dist)],
    })
}

/// Dense solver against the integral oracle, and `trace(X) > 0` for the
/// nonzero positive semidefinite forcing.
pub fn lyapunov_trial(seed: u64) -> Result<TrialOutcome> {
    let inst = random_lyapunov_instance(seed, QUADRATURE_MAX_DIM);
    let sol = solve_lyapunov(&LyapunovProblem::new(inst.a.clone(), inst.q.clone())?)?;
    let quad = lyapunov_quadrature(&inst.a, &inst.q, 1e-13, 1_000_000)?;
    let diff = linalg::max_abs(&(&sol.x - &quad.x));
    let trace = sol.x.trace();
    Ok(TrialOutcome {
        seed,
        verdict: verdict(diff <= QUADRATURE_TOL && trace > 0.0),
        metrics: alloc::vec![
            ("dim", inst.a.nrows() as f64),
            ("rank_q", inst.rank as f64),
            ("max_diff", diff),
            ("trace_x", trace),
        ],
    })
}
