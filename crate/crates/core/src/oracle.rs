//! Reference computations that share no code path with the main solvers:
//! the lag sum of the noise covariance through the fundamental matrix, and
//! the Lyapunov solution as the integral `X = ∫ e^{At} Q e^{A^T t} dt`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

/// `sum_{k>=1} P^k W` for a centred `W` (`mu^T W = 0`), computed as
/// `(S - I) W` with the fundamental matrix `S = (I - P + 1 mu^T)^{-1}`.
pub fn lag_sum_fundamental(
    p: &DMatrix<f64>,
    mu: &DVector<f64>,
    w: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    let ones = DVector::from_element(n, 1.0);
    let m = DMatrix::identity(n, n) - p + &ones * mu.transpose();
    let s = m
        .try_inverse()
        .ok_or_else(|| Error::Invalid("fundamental matrix is singular".into()))?;
    Ok((s - DMatrix::identity(n, n)) * w)
}

/// `B2 = 1/2 (G + G^T)` with `G = sum_{k>=1} (P^k W)^T D W`.
pub fn b2_fundamental(
    p: &DMatrix<f64>,
    mu: &DVector<f64>,
    w: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let lag = lag_sum_fundamental(p, mu, w)?;
    let dw = DMatrix::from_diagonal(mu) * w;
    let g = lag.transpose() * dw;
    Ok((&g + g.transpose()) * 0.5)
}

/// Matrix exponential by scaling and squaring of a degree-18 Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let b = a * scale;
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=18 {
        term = &term * &b / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

// 10-point Gauss-Legendre rule on [-1, 1]
const GL_NODES: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_3,
    0.219_086_362_515_982,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureResult {
    pub x: DMatrix<f64>,
    pub intervals: usize,
    /// `max |e^{AT}|` at the truncation point.
    pub tail: f64,
}

/// `X = ∫_0^∞ e^{At} Q e^{A^T t} dt` by composite Gauss-Legendre on panels of
/// width `h` with `|A| h <= 1/2`, truncated once `|e^{AT}|^2 |Q| T` is below
/// `tol` relative to the running integral.
pub fn lyapunov_quadrature(
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    tol: f64,
    max_intervals: usize,
) -> Result<QuadratureResult> {
    let n = a.nrows();
    if n == 0 {
        return Ok(QuadratureResult {
            x: DMatrix::zeros(0, 0),
            intervals: 0,
            tail: 0.0,
        });
    }
    let norm = a
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let h = if norm > 0.0 { 0.5 / norm } else { 1.0 };
    let half = 0.5 * h;
    // exponentials at the panel nodes relative to the panel start
    let mut nodes: Vec<(DMatrix<f64>, f64)> = Vec::with_capacity(10);
    for (i, &t) in GL_NODES.iter().enumerate() {
        for sign in [-1.0, 1.0] {
            let tau = half + sign * t * half;
            nodes.push((expm(&(a * tau)), GL_WEIGHTS[i] * half));
        }
    }
    let step = expm(&(a * h));
    let q_scale = linalg::max_abs(q);
    let mut start = DMatrix::<f64>::identity(n, n);
    let mut x = DMatrix::<f64>::zeros(n, n);
    for k in 0..max_intervals {
        for (e, w) in &nodes {
            let et = &start * e;
            x += (&et * q * et.transpose()) * *w;
        }
        start = &start * &step;
        let tail = linalg::max_abs(&start);
        // remaining mass is bounded by a geometric tail once the decay sets in
        let horizon = (k + 1) as f64 * h;
        if tail * tail * q_scale * n as f64 * horizon.max(1.0)
            <= tol * 1.0f64.max(linalg::max_abs(&x))
        {
            return Ok(QuadratureResult {
                x: linalg::symmetrize(&x),
                intervals: k + 1,
                tail,
            });
        }
    }
    Err(Error::MaxIterExceeded {
        iterations: max_intervals,
        residual: linalg::max_abs(&start),
    })
}

/// A random Hurwitz matrix and symmetric positive semidefinite forcing term.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovInstance {
    pub seed: u64,
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Rank of the factor `L` in `Q = L L^T`.
    pub rank: usize,
}

/// Dimension in `1..=max_dim`; `A = R - s I` for Gaussian `R / sqrt(n)`
/// shifted so its spectral abscissa lies in `[-1, -0.1]`; `Q = L L^T` with
/// `L` of random rank.
pub fn random_lyapunov_instance(seed: u64, max_dim: usize) -> LyapunovInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_dim.max(1));
    let scale = 1.0 / libm::sqrt(n as f64);
    let r = DMatrix::from_fn(n, n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    });
    let target: f64 = rng.random_range(0.1..=1.0);
    let shift = linalg::spectral_abscissa(&r) + target;
    let a = r - DMatrix::identity(n, n) * shift;
    let rank = rng.random_range(1..=n);
    let l = DMatrix::from_fn(n, rank, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    let q = &l * l.transpose();
    LyapunovInstance {
        seed,
        a,
        q: linalg::symmetrize(&q),
        rank,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_rotation() {
        let t = 1.3;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -t, t, 0.0]);
        let e = expm(&a);
        let expected = DMatrix::from_row_slice(
            2,
            2,
            &[libm::cos(t), -libm::sin(t), libm::sin(t), libm::cos(t)],
        );
        assert!(linalg::max_abs(&(e - expected)) < 1e-14);
    }

    #[test]
    fn expm_of_large_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[-20.0, 3.0]));
        let e = expm(&a);
        assert!((e[(0, 0)] - libm::exp(-20.0)).abs() < 1e-20);
        assert!((e[(1, 1)] / libm::exp(3.0) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn quadrature_scalar() {
        // ∫ e^{-2t} q dt = q / 2
        let r = lyapunov_quadrature(
            &DMatrix::from_element(1, 1, -1.0),
            &DMatrix::from_element(1, 1, 3.0),
            1e-14,
            100_000,
        )
        .unwrap();
        assert!((r.x[(0, 0)] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn fundamental_lag_sum_two_state() {
        // P = [[1-a, a], [b, 1-b]] has second eigenvalue 1 - a - b, so the
        // lag sum of a centred W is W (1 - a - b) / (a + b)
        let (a, b) = (0.3, 0.1);
        let p = DMatrix::from_row_slice(2, 2, &[1.0 - a, a, b, 1.0 - b]);
        let mu = DVector::from_row_slice(&[b / (a + b), a / (a + b)]);
        let w = DMatrix::from_row_slice(2, 1, &[mu[1], -mu[0]]);
        let lag = lag_sum_fundamental(&p, &mu, &w).unwrap();
        let lam = 1.0 - a - b;
        let expected = &w * (lam / (1.0 - lam));
        assert!(linalg::max_abs(&(lag - expected)) < 1e-14);
    }

    #[test]
    fn instances_are_hurwitz_and_psd() {
        for seed in 0..20 {
            let inst = random_lyapunov_instance(seed, 12);
            let m = linalg::spectral_abscissa(&inst.a);
            assert!((-1.0 - 1e-9..=-0.1 + 1e-9).contains(&m), "{m}");
            assert!(linalg::min_symmetric_eigenvalue(&inst.q) > -1e-10);
        }
    }
}
