//! Continuous-time Lyapunov equations `A X + X A^T + Q = 0`.
//!
//! The solver vectorizes the equation into the Kronecker-sum system
//! `(I ⊗ A + A ⊗ I) vec(X) = -vec(Q)` (column-major `vec`) and solves it with
//! a pivoted LU factorization. Sizes in this crate stay below a few dozen, so
//! the `n^2 x n^2` system is cheap.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// A matrix is Hurwitz when its spectral abscissa is below `-HURWITZ_MARGIN`.
pub const HURWITZ_MARGIN: f64 = 1e-12;

/// Condition estimate beyond which a solution is flagged.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovProblem {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl LyapunovProblem {
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.shape() != q.shape() {
            return Err(Error::DimensionMismatch(
                "A and Q must be square and equally sized".into(),
            ));
        }
        let scale = 1.0f64.max(linalg::max_abs(&q));
        if linalg::asymmetry(&q) > 1e-10 * scale {
            return Err(Error::Invalid("Q must be symmetric".into()));
        }
        Ok(Self { a, q })
    }

    /// `max |A X + X A^T + Q|`.
    pub fn residual(&self, x: &DMatrix<f64>) -> f64 {
        linalg::max_abs(&(&self.a * x + x * self.a.transpose() + &self.q))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSolution {
    pub x: DMatrix<f64>,
    pub residual_norm: f64,
    /// Lower estimate of the condition number of the vectorized system.
    pub condition_estimate: f64,
    pub ill_conditioned: bool,
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    a.is_square() && (a.nrows() == 0 || linalg::spectral_abscissa(a) < -HURWITZ_MARGIN)
}

/// `I ⊗ A + A ⊗ I` for column-major vectorization.
pub fn kronecker_sum(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut k = DMatrix::zeros(n * n, n * n);
    for j in 0..n {
        for i in 0..n {
            let row = i + j * n;
            // (I ⊗ A) vec(X): entry (i, j) picks A[i, m] X[m, j]
            for m in 0..n {
                k[(row, m + j * n)] += a[(i, m)];
            }
            // (A ⊗ I) vec(X): entry (i, j) picks X[i, m] A[j, m]
            for m in 0..n {
                k[(row, i + m * n)] += a[(j, m)];
            }
        }
    }
    k
}

pub fn solve_lyapunov(problem: &LyapunovProblem) -> Result<LyapunovSolution> {
    let a = &problem.a;
    let n = a.nrows();
    if n == 0 {
        return Ok(LyapunovSolution {
            x: DMatrix::zeros(0, 0),
            residual_norm: 0.0,
            condition_estimate: 1.0,
            ill_conditioned: false,
        });
    }
    let eig = linalg::eigenvalues(a);
    let abscissa = eig.iter().fold(f64::NEG_INFINITY, |m, z| m.max(z.re));
    if !(abscissa < -HURWITZ_MARGIN) {
        return Err(Error::NotHurwitz { abscissa });
    }

    let k = kronecker_sum(a);
    let rhs = DVector::from_iterator(n * n, problem.q.iter().map(|v| -v));
    let lu = k.lu();
    let u = lu.u();
    let (umax, umin) = u
        .diagonal()
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), v| {
            (hi.max(v.abs()), lo.min(v.abs()))
        });
    let vec_x = lu.solve(&rhs).ok_or(Error::NotHurwitz { abscissa })?;

    // eigenvalues of the Kronecker sum are all pairwise sums
    let (mut smax, mut smin) = (0.0f64, f64::INFINITY);
    for zi in &eig {
        for zj in &eig {
            let s = linalg::modulus(zi + zj);
            smax = smax.max(s);
            smin = smin.min(s);
        }
    }
    let condition_estimate = (smax / smin).max(umax / umin);

    let x = linalg::symmetrize(&DMatrix::from_column_slice(n, n, vec_x.as_slice()));
    let residual_norm = problem.residual(&x);
    Ok(LyapunovSolution {
        x,
        residual_norm,
        condition_estimate,
        ill_conditioned: !(condition_estimate <= MAX_CONDITION),
    })
}

/// Step-size gain for the scaled gap equation; `Infinite` selects the
/// `g -> infinity` limit exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gain {
    Finite(f64),
    Infinite,
}

/// Solves `X M^T + M X + Q = 0` with `M = I/(2g) - a_sum`, or `M = -a_sum`
/// for an infinite gain.
pub fn solve_scaled_gap(
    a_sum: &DMatrix<f64>,
    q: &DMatrix<f64>,
    gain: Gain,
) -> Result<LyapunovSolution> {
    let n = a_sum.nrows();
    let m = match gain {
        Gain::Finite(g) => {
            if !(g > 0.0) {
                return Err(Error::Invalid("gain must be positive".into()));
            }
            DMatrix::identity(n, n) * (0.5 / g) - a_sum
        }
        Gain::Infinite => -a_sum,
    };
    solve_lyapunov(&LyapunovProblem::new(m, q.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hurwitz_checks() {
        assert!(is_hurwitz(&-DMatrix::<f64>::identity(3, 3)));
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(!is_hurwitz(&rot));
    }

    #[test]
    fn scalar_equation() {
        let p = LyapunovProblem::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        let sol = solve_lyapunov(&p).unwrap();
        assert!((sol.x[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn half_identity() {
        let a = DMatrix::<f64>::identity(2, 2) * -0.5;
        let p = LyapunovProblem::new(a, DMatrix::identity(2, 2)).unwrap();
        let sol = solve_lyapunov(&p).unwrap();
        assert!(linalg::max_abs(&(sol.x - DMatrix::<f64>::identity(2, 2))) < 1e-15);
        assert!(!sol.ill_conditioned);
    }

    #[test]
    fn kronecker_sum_matches_direct_product() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 4.0, 2.0, 0.0, -3.0]);
        let x = DMatrix::from_row_slice(3, 3, &[0.2, -1.0, 3.0, 1.5, 0.0, 2.0, -0.7, 1.1, 0.4]);
        let direct = &a * &x + &x * a.transpose();
        let vec_x = DVector::from_column_slice(x.as_slice());
        let via = kronecker_sum(&a) * vec_x;
        let via = DMatrix::from_column_slice(3, 3, via.as_slice());
        assert!(linalg::max_abs(&(direct - via)) < 1e-14);
    }

    #[test]
    fn rejects_unstable_and_asymmetric() {
        let p = LyapunovProblem::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(solve_lyapunov(&p), Err(Error::NotHurwitz { .. })));
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(LyapunovProblem::new(-DMatrix::identity(2, 2), q).is_err());
    }

    #[test]
    fn scaled_gap_cases() {
        let zero = solve_scaled_gap(
            &DMatrix::identity(2, 2),
            &DMatrix::zeros(2, 2),
            Gain::Finite(3.0),
        )
        .unwrap();
        assert_eq!(linalg::max_abs(&zero.x), 0.0);
        let limit = solve_scaled_gap(
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 2.0),
            Gain::Infinite,
        )
        .unwrap();
        assert!((limit.x[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nearly_singular_system_is_flagged() {
        let a = DMatrix::from_row_slice(2, 2, &[-2e-12, 0.0, 0.0, -10.0]);
        let p = LyapunovProblem::new(a, DMatrix::identity(2, 2)).unwrap();
        let sol = solve_lyapunov(&p).unwrap();
        assert!(sol.ill_conditioned);
    }
}
