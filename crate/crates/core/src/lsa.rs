//! The linear stochastic-approximation model behind the linearized
//! Q-learning and Double Q-learning recursions.
//!
//! With `Z_n = (X_n, S_{n+1})` the recursions read
//! `theta += alpha (b(Z) + A2(Z) theta - A1(Z) theta)`, where
//! `b(z) = phi(x) R(x)`, `A1(z) = phi(x) phi(x)^T` and
//! `A2(z) = gamma phi(x) phi(s', pi*(s'))^T`. Their stationary means are
//! `Abar1 = Phi D Phi^T` and `Abar2 = gamma Phi D P S_pi Phi^T`. Shifting by
//! `theta*` leaves the noise `W(z) = b(z) + (A2(z) - A1(z)) theta*`, whose
//! lag covariances give `B1` and `B2`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{FeatureMap, PairChain, TabularMdp, ZChain};
use crate::solver::{GreedyPolicy, OptimalSolution};

/// Default truncation tolerance on lag-covariance terms.
pub const LAG_TOL: f64 = 1e-12;

/// Chains whose second eigenvalue modulus reaches `1 - MIXING_MARGIN` are rejected.
pub const MIXING_MARGIN: f64 = 1e-8;

/// Hard cap on the number of lag terms summed.
pub const MAX_LAGS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AbarMatrices {
    pub abar1: DMatrix<f64>,
    pub abar2: DMatrix<f64>,
    /// `Abar2 - Abar1`.
    pub abar: DMatrix<f64>,
    /// `[[-Abar1, Abar2], [Abar2, -Abar1]]`.
    pub abar_d: DMatrix<f64>,
}

pub fn build_abar(
    features: &FeatureMap,
    chain: &PairChain,
    mdp: &TabularMdp,
    pi_star: &GreedyPolicy,
) -> AbarMatrices {
    let phi = features.phi();
    let phi_d = phi * &chain.diag_d;
    let abar1 = &phi_d * phi.transpose();
    let mut p = mdp.transition().clone();
    for x in 0..mdp.n_pairs() {
        if mdp.is_terminal(x) {
            p.row_mut(x).fill(0.0);
        }
    }
    let abar2 = &phi_d * p * &pi_star.selection_matrix * phi.transpose() * mdp.discount();
    let abar = &abar2 - &abar1;
    let abar_d = linalg::block2(&-&abar1, &abar2, &abar2, &-&abar1);
    AbarMatrices {
        abar1,
        abar2,
        abar,
        abar_d,
    }
}

/// Per-z-state noise vectors, one row per z-state.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProcess {
    pub w: DMatrix<f64>,
}

impl NoiseProcess {
    pub fn build(
        mdp: &TabularMdp,
        features: &FeatureMap,
        zchain: &ZChain,
        pi_star: &GreedyPolicy,
        theta_star: &DVector<f64>,
    ) -> Self {
        let d = features.dim();
        let gamma = mdp.discount();
        let na = mdp.n_actions();
        let mut w = DMatrix::zeros(zchain.len(), d);
        for (i, &(x, sp)) in zchain.states.iter().enumerate() {
            let next = pi_star.action(sp) + sp * na;
            let bootstrap = gamma * mdp.continuation(x) * features.value(next, theta_star);
            let td = mdp.reward()[x] + bootstrap - features.value(x, theta_star);
            w.row_mut(i)
                .copy_from(&(features.phi().column(x) * td).transpose());
        }
        Self { w }
    }

    /// `sum_z mu_Z(z) W(z)`; zero at the projected Bellman fixed point.
    pub fn stationary_mean(&self, zchain: &ZChain) -> DVector<f64> {
        self.w.tr_mul(&zchain.stationary_z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariances {
    /// `E[W W^T]` under stationarity.
    pub c0: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub lags: usize,
    pub second_eigenvalue_modulus: f64,
}

/// Second largest eigenvalue modulus of a stochastic matrix: the modulus of
/// the eigenvalue closest to one is dropped.
pub fn second_eigenvalue_modulus(p: &DMatrix<f64>) -> f64 {
    let eig = linalg::eigenvalues(p);
    let unit = eig
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let da = libm::hypot(a.1.re - 1.0, a.1.im);
            let db = libm::hypot(b.1.re - 1.0, b.1.im);
            da.total_cmp(&db)
        })
        .map(|(i, _)| i);
    eig.iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != unit)
        .fold(0.0, |m, (_, z)| m.max(linalg::modulus(*z)))
}

/// State chain `P_S(s, t) = sum_a mu_b(a|s) P((s,a), t)` read off the
/// lifted chain. `P_Z` factors through the next state, so `P_Z` and `P_S`
/// share their nonzero spectrum.
pub fn state_transition(zchain: &ZChain) -> DMatrix<f64> {
    let ns = zchain
        .states
        .iter()
        .map(|&(_, sp)| sp + 1)
        .max()
        .unwrap_or(0);
    let mut p = DMatrix::zeros(ns, ns);
    let mut filled = alloc::vec![false; ns];
    for (i, &(_, s)) in zchain.states.iter().enumerate() {
        if filled[s] {
            continue;
        }
        filled[s] = true;
        for (j, &(_, t)) in zchain.states.iter().enumerate() {
            p[(s, t)] += zchain.transition_z[(i, j)];
        }
    }
    p
}

/// `B2 = 1/2 sum_{k>=1} (G_k + G_k^T)` and `B1 = C0 + B2`, where
/// `G_k = E[W(Z_{1+k}) W(Z_1)^T] = (P_Z^k W)^T D_Z W`.
///
/// The series stops once a term drops below `tol * max(1, |C0|)` and the
/// geometric tail bound from the second eigenvalue modulus does too.
pub fn noise_covariances(
    noise: &NoiseProcess,
    zchain: &ZChain,
    tol: f64,
) -> Result<NoiseCovariances> {
    let w = &noise.w;
    let d = w.ncols();
    let mean = noise.stationary_mean(zchain);
    let w_scale = 1.0f64.max(linalg::max_abs(w));
    if linalg::max_abs_vec(&mean) > 1e-8 * w_scale {
        return Err(Error::Invalid(alloc::format!(
            "noise has nonzero stationary mean {:e}",
            linalg::max_abs_vec(&mean)
        )));
    }
    let weighted = DMatrix::from_diagonal(&zchain.stationary_z) * w;
    let c0 = linalg::symmetrize(&w.tr_mul(&weighted));
    let zero = DMatrix::zeros(d, d);
    if linalg::max_abs(w) == 0.0 {
        return Ok(NoiseCovariances {
            c0,
            b1: zero.clone(),
            b2: zero,
            lags: 0,
            second_eigenvalue_modulus: 0.0,
        });
    }

    let rho = second_eigenvalue_modulus(&state_transition(zchain));
    if !(rho < 1.0 - MIXING_MARGIN) {
        return Err(Error::SlowMixing { modulus: rho });
    }
    let threshold = tol * 1.0f64.max(linalg::max_abs(&c0));
    let tail_factor = rho / (1.0 - rho);

    let mut propagated = w.clone();
    let mut lag_sum = zero;
    let mut lags = 0;
    while lags < MAX_LAGS {
        propagated = &zchain.transition_z * propagated;
        let term = propagated.tr_mul(&weighted);
        lags += 1;
        let size = linalg::max_abs(&term);
        lag_sum += term;
        if size < threshold && size * tail_factor < threshold {
            let b2 = linalg::symmetrize(&lag_sum);
            let b1 = &c0 + &b2;
            return Ok(NoiseCovariances {
                c0,
                b1,
                b2,
                lags,
                second_eigenvalue_modulus: rho,
            });
        }
    }
    Err(Error::SlowMixing { modulus: rho })
}

/// `g0 = 1 / (-m)` where `m` is the largest real part over the spectra of
/// `Abar` and `Abar_D`; infinite when either is not Hurwitz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainThreshold {
    pub g0: f64,
    pub abscissa: f64,
}

impl GainThreshold {
    pub fn is_hurwitz(&self) -> bool {
        self.g0.is_finite()
    }
}

pub fn compute_g0(abar: &DMatrix<f64>, abar_d: &DMatrix<f64>) -> GainThreshold {
    let m = linalg::spectral_abscissa(abar).max(linalg::spectral_abscissa(abar_d));
    let g0 = if m < 0.0 { 1.0 / -m } else { f64::INFINITY };
    GainThreshold { g0, abscissa: m }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsaModel {
    pub abar1: DMatrix<f64>,
    pub abar2: DMatrix<f64>,
    pub abar: DMatrix<f64>,
    pub abar_d: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c0: DMatrix<f64>,
    pub theta_star: DVector<f64>,
    pub g0: f64,
    pub abscissa: f64,
    pub omega: f64,
    pub lags: usize,
}

impl LsaModel {
    pub fn build(
        mdp: &TabularMdp,
        features: &FeatureMap,
        chain: &PairChain,
        zchain: &ZChain,
        solution: &OptimalSolution,
        tol: f64,
    ) -> Result<Self> {
        let abar = build_abar(features, chain, mdp, &solution.pi_star);
        let noise = NoiseProcess::build(
            mdp,
            features,
            zchain,
            &solution.pi_star,
            &solution.theta_star,
        );
        let cov = noise_covariances(&noise, zchain, tol)?;
        let threshold = compute_g0(&abar.abar, &abar.abar_d);
        Ok(Self {
            abar1: abar.abar1,
            abar2: abar.abar2,
            abar: abar.abar,
            abar_d: abar.abar_d,
            b1: cov.b1,
            b2: cov.b2,
            c0: cov.c0,
            theta_star: solution.theta_star.clone(),
            g0: threshold.g0,
            abscissa: threshold.abscissa,
            omega: solution.gap_omega,
            lags: cov.lags,
        })
    }

    pub fn dim(&self) -> usize {
        self.abar1.nrows()
    }

    /// `Sigma_b = B1 + B2`.
    pub fn sigma_b(&self) -> DMatrix<f64> {
        &self.b1 + &self.b2
    }

    /// `Sigma_b^D = 2 [[B1, B2], [B2, B1]]`.
    pub fn sigma_b_double(&self) -> DMatrix<f64> {
        linalg::block2(&self.b1, &self.b2, &self.b2, &self.b1) * 2.0
    }

    pub fn abar_sum(&self) -> DMatrix<f64> {
        &self.abar1 + &self.abar2
    }

    pub fn b_gap(&self) -> DMatrix<f64> {
        &self.b1 - &self.b2
    }
}

/// Eigenvalues of `Abar_D` next to the union of those of `Abar2 - Abar1` and
/// `-(Abar1 + Abar2)`; returns the multiset matching distance.
pub fn eigenvalue_union_distance(abar1: &DMatrix<f64>, abar2: &DMatrix<f64>) -> f64 {
    let abar_d = linalg::block2(&-abar1, abar2, abar2, &-abar1);
    let full = linalg::eigenvalues(&abar_d);
    let mut parts: Vec<_> = linalg::eigenvalues(&(abar2 - abar1));
    parts.extend(linalg::eigenvalues(&-(abar1 + abar2)));
    linalg::multiset_distance(&full, &parts).unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{pair_chain, z_chain, BehaviorPolicy};
    use crate::solver::solve_theta_star;

    fn one_state() -> (TabularMdp, FeatureMap, PairChain) {
        let mdp = TabularMdp::new(
            1,
            1,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            0.5,
        )
        .unwrap();
        let chain = pair_chain(&mdp, &BehaviorPolicy::uniform(1, 1)).unwrap();
        (mdp, FeatureMap::tabular(1, 1), chain)
    }

    #[test]
    fn scalar_abar() {
        let (mdp, f, chain) = one_state();
        let pi = GreedyPolicy::from_actions(alloc::vec![0], 1);
        let m = build_abar(&f, &chain, &mdp, &pi);
        assert_eq!(m.abar1[(0, 0)], 1.0);
        assert_eq!(m.abar2[(0, 0)], 0.5);
        assert_eq!(m.abar[(0, 0)], -0.5);
        assert_eq!(
            m.abar_d,
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.5, -1.0])
        );
        assert_eq!(m.abar_d.trace(), -2.0 * m.abar1.trace());
    }

    #[test]
    fn scalar_g0() {
        let abar = DMatrix::from_element(1, 1, -0.5);
        let abar_d = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.5, -1.0]);
        let t = compute_g0(&abar, &abar_d);
        assert!((t.g0 - 2.0).abs() < 1e-12);
        let unstable = compute_g0(&DMatrix::from_element(1, 1, 0.1), &abar_d);
        assert!(!unstable.is_hurwitz() && unstable.g0.is_infinite());
    }

    #[test]
    fn iid_chain_has_no_lag_covariance() {
        let mu = DVector::from_vec(alloc::vec![0.2, 0.3, 0.5]);
        let p = DMatrix::from_fn(3, 3, |_, j| mu[j]);
        let zc = ZChain {
            states: alloc::vec![(0, 0), (1, 0), (2, 0)],
            transition_z: p,
            stationary_z: mu,
        };
        // centred: 0.2*1 + 0.3*1 + 0.5*(-1) = 0
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, -2.0, -1.0, 0.4]);
        let cov = noise_covariances(&NoiseProcess { w }, &zc, LAG_TOL).unwrap();
        assert!(linalg::max_abs(&cov.b2) < 1e-15);
        assert_eq!(cov.b1, cov.c0);
    }

    #[test]
    fn zero_noise() {
        let (mdp, f, chain) = one_state();
        let mdp = TabularMdp::new(1, 1, mdp.transition().clone(), DVector::zeros(1), 0.5).unwrap();
        let zc = z_chain(&chain, &mdp).unwrap();
        let sol = solve_theta_star(&mdp, &f, &chain, 1e-10, 10).unwrap();
        let model = LsaModel::build(&mdp, &f, &chain, &zc, &sol, LAG_TOL).unwrap();
        assert_eq!(linalg::max_abs(&model.b1), 0.0);
        assert_eq!(linalg::max_abs(&model.b2), 0.0);
    }

    #[test]
    fn rejects_uncentred_noise() {
        let zc = ZChain {
            states: alloc::vec![(0, 0)],
            transition_z: DMatrix::from_element(1, 1, 1.0),
            stationary_z: DVector::from_element(1, 1.0),
        };
        let noise = NoiseProcess {
            w: DMatrix::from_element(1, 1, 1.0),
        };
        assert!(noise_covariances(&noise, &zc, LAG_TOL).is_err());
    }
}
