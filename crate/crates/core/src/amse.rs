//! Asymptotic covariances of linearized Q-learning (step `g/n`) and Double
//! Q-learning (step `2g/n`), and the mean-squared-error comparison built on
//! them.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::lsa::LsaModel;
use crate::lyapunov::{solve_lyapunov, solve_scaled_gap, Gain, LyapunovProblem};
use crate::solver::UNIQUE_GAP_TOL;

/// Relative tolerance for the exact identities between the two covariances.
pub const IDENTITY_TOL: f64 = 1e-8;

/// Absolute slack on `amse(theta^A) >= amse(theta)`.
pub const ORDERING_TOL: f64 = 1e-9;

/// Relative residual bound accepted from every Lyapunov solve.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSolution {
    pub sigma_q: DMatrix<f64>,
    pub sigma_d: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub residual_q: f64,
    pub residual_d: f64,
    /// Largest deviation of `sigma_d` from the `[[V, C], [C, V]]` pattern.
    pub structure_deviation: f64,
    pub ill_conditioned: bool,
}

/// Solves
/// `Sigma_Q (I/2 + g Abar)^T + (I/2 + g Abar) Sigma_Q + g^2 (B1 + B2) = 0` and
/// `Sigma_D (I/2 + g Abar_D)^T + (I/2 + g Abar_D) Sigma_D + g^2 Sigma_b^D = 0`.
pub fn solve_covariances(model: &LsaModel, g: f64) -> Result<CovarianceSolution> {
    if !(g > model.g0) {
        return Err(Error::StepSizeTooSmall { g, g0: model.g0 });
    }
    if !(model.omega > UNIQUE_GAP_TOL) {
        return Err(Error::NonUniqueOptimal { omega: model.omega });
    }
    let d = model.dim();
    let half = |n: usize| DMatrix::identity(n, n) * 0.5;

    let q_problem = LyapunovProblem::new(&half(d) + &model.abar * g, model.sigma_b() * (g * g))?;
    let q_sol = solve_lyapunov(&q_problem)?;
    let d_problem = LyapunovProblem::new(
        &half(2 * d) + &model.abar_d * g,
        model.sigma_b_double() * (g * g),
    )?;
    let d_sol = solve_lyapunov(&d_problem)?;

    let sd = &d_sol.x;
    let v = sd.view((0, 0), (d, d)).into_owned();
    let c = sd.view((0, d), (d, d)).into_owned();
    let lower_right = sd.view((d, d), (d, d)).into_owned();
    let lower_left = sd.view((d, 0), (d, d)).into_owned();
    let structure_deviation =
        linalg::max_abs(&(&lower_right - &v)).max(linalg::max_abs(&(&lower_left - &c)));

    Ok(CovarianceSolution {
        residual_q: q_sol.residual_norm,
        residual_d: d_sol.residual_norm,
        ill_conditioned: q_sol.ill_conditioned || d_sol.ill_conditioned,
        sigma_q: q_sol.x,
        sigma_d: d_sol.x,
        v,
        c,
        structure_deviation,
    })
}

/// Pass/fail flags for the exact relations between the two covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AmseChecks {
    /// `Sigma_D` has the `[[V, C], [C, V]]` pattern.
    pub block_structure: bool,
    /// `Sigma_Q = (V + C) / 2`.
    pub q_is_half_sum: bool,
    /// `trace(V) >= trace(C)`.
    pub trace_v_ge_c: bool,
    /// `amse(theta^A) >= amse(theta)`.
    pub double_not_better: bool,
    /// `amse((theta^A + theta^B)/2) = amse(theta)`.
    pub average_matches: bool,
    /// `gap >= g trace(X')`.
    pub gap_lower_bound: bool,
    /// `trace(V - C) = 2 g trace(X)` with `X` from the finite-gain gap equation.
    pub gap_trace_identity: bool,
    /// First block row of the double equation summed gives the `V + C` equation.
    pub block_sum_equation: bool,
    /// Upper-left minus upper-right block gives the `V - C` equation.
    pub block_difference_equation: bool,
    /// All Lyapunov residuals within bound.
    pub residuals: bool,
}

impl AmseChecks {
    pub fn all(&self) -> bool {
        self.block_structure
            && self.q_is_half_sum
            && self.trace_v_ge_c
            && self.double_not_better
            && self.average_matches
            && self.gap_lower_bound
            && self.gap_trace_identity
            && self.block_sum_equation
            && self.block_difference_equation
            && self.residuals
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmseReport {
    pub g: f64,
    pub g0: f64,
    /// `trace(Sigma_Q)`.
    pub amse_q: f64,
    /// `trace(V)`.
    pub amse_a: f64,
    /// `(trace(V) + trace(C)) / 2`.
    pub amse_avg: f64,
    pub gap: f64,
    /// `trace(X')` from the infinite-gain gap equation.
    pub c0_lower: f64,
    /// `trace(X)` from the finite-gain gap equation; `gap = g * this`.
    pub gap_trace_x: f64,
    pub residual_q: f64,
    pub residual_d: f64,
    pub residual_gap: f64,
    pub residual_gap_limit: f64,
    pub residual_block_sum: f64,
    pub residual_block_difference: f64,
    pub structure_deviation: f64,
    pub checks: AmseChecks,
}

fn scale(x: f64) -> f64 {
    1.0f64.max(x.abs())
}

pub fn amse_report(cov: &CovarianceSolution, model: &LsaModel, g: f64) -> Result<AmseReport> {
    let d = model.dim();
    let eye = DMatrix::<f64>::identity(d, d);
    let a_sum = model.abar_sum();
    let b_gap = model.b_gap();

    let amse_q = cov.sigma_q.trace();
    let amse_a = cov.v.trace();
    let trace_c = cov.c.trace();
    let amse_avg = 0.5 * (amse_a + trace_c);
    let gap = amse_a - amse_q;

    let limit = solve_scaled_gap(&a_sum, &b_gap, Gain::Infinite)?;
    let finite = solve_scaled_gap(&a_sum, &b_gap, Gain::Finite(g))?;
    let c0_lower = limit.x.trace();
    let gap_trace_x = finite.x.trace();

    // V + C + g (V + C) Abar^T + g Abar (V + C) + 2 g^2 (B1 + B2) = 0
    let sum = &cov.v + &cov.c;
    let block_sum = &sum
        + (&sum * model.abar.transpose() + &model.abar * &sum) * g
        + model.sigma_b() * (2.0 * g * g);
    // (V - C) M^T + M (V - C) + 2 g^2 (B1 - B2) = 0 with M = I/2 - g (Abar1 + Abar2)
    let diff = &cov.v - &cov.c;
    let m = &eye * 0.5 - &a_sum * g;
    let block_difference = &diff * m.transpose() + &m * &diff + &b_gap * (2.0 * g * g);

    let forcing = 1.0f64.max(g * g * linalg::max_abs(&model.sigma_b_double()));
    let residual_block_sum = linalg::max_abs(&block_sum);
    let residual_block_difference = linalg::max_abs(&block_difference);
    let sd_scale = 1.0f64.max(linalg::max_abs(&cov.sigma_d));
    let sq_scale = 1.0f64.max(linalg::max_abs(&cov.sigma_q));
    let bgap_scale = 1.0f64.max(linalg::max_abs(&b_gap));

    let trace_diff = diff.trace();
    let checks = AmseChecks {
        block_structure: cov.structure_deviation <= IDENTITY_TOL * sd_scale,
        q_is_half_sum: linalg::max_abs(&(&cov.sigma_q - &sum * 0.5)) <= IDENTITY_TOL * sq_scale,
        trace_v_ge_c: amse_a >= trace_c - 1e-10 * scale(amse_a),
        double_not_better: amse_a >= amse_q - ORDERING_TOL * scale(amse_q),
        average_matches: (amse_avg - amse_q).abs() <= IDENTITY_TOL * scale(amse_q),
        gap_lower_bound: gap >= g * c0_lower - IDENTITY_TOL * scale(gap),
        gap_trace_identity: (trace_diff - 2.0 * g * gap_trace_x).abs()
            <= IDENTITY_TOL * scale(trace_diff),
        block_sum_equation: residual_block_sum <= RESIDUAL_TOL * forcing,
        block_difference_equation: residual_block_difference <= RESIDUAL_TOL * forcing,
        residuals: cov.residual_q <= RESIDUAL_TOL * forcing
            && cov.residual_d <= RESIDUAL_TOL * forcing
            && finite.residual_norm <= RESIDUAL_TOL * bgap_scale
            && limit.residual_norm <= RESIDUAL_TOL * bgap_scale,
    };

    Ok(AmseReport {
        g,
        g0: model.g0,
        amse_q,
        amse_a,
        amse_avg,
        gap,
        c0_lower,
        gap_trace_x,
        residual_q: cov.residual_q,
        residual_d: cov.residual_d,
        residual_gap: finite.residual_norm,
        residual_gap_limit: limit.residual_norm,
        residual_block_sum,
        residual_block_difference,
        structure_deviation: cov.structure_deviation,
        checks,
    })
}
