//! Bellman and projected Bellman solvers, greedy policies, and the
//! optimal-action gap.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{FeatureMap, PairChain, TabularMdp};

/// Two action values closer than this are treated as tied.
pub const TIE_TOL: f64 = 1e-12;

/// Below this gap the optimal policy is reported as non-unique.
pub const UNIQUE_GAP_TOL: f64 = 1e-9;

/// Largest accepted condition number of `Phi D Phi^T`.
pub const MAX_PROJECTION_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    /// `n_states x n_actions`.
    pub values: DMatrix<f64>,
}

impl QFunction {
    /// Values in pair-index order `a + s * n_actions`.
    pub fn flatten(&self) -> DVector<f64> {
        let (ns, na) = self.values.shape();
        DVector::from_fn(ns * na, |x, _| self.values[(x / na, x % na)])
    }

    /// Greedy action per state under the shared tie-break rule.
    pub fn greedy_actions(&self) -> Vec<usize> {
        self.values
            .row_iter()
            .map(|row| argmax_lowest(row.iter().copied()))
            .collect()
    }
}

/// Index of the maximum; candidates within [`TIE_TOL`] of the maximum go to
/// the lowest index.
pub fn argmax_lowest(values: impl Iterator<Item = f64> + Clone) -> usize {
    let best = values.clone().fold(f64::NEG_INFINITY, f64::max);
    values
        .into_iter()
        .position(|v| v >= best - TIE_TOL)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyPolicy {
    pub actions: Vec<usize>,
    /// `S_pi` with `S_pi(s, (s, pi(s))) = 1`.
    pub selection_matrix: DMatrix<f64>,
}

impl GreedyPolicy {
    pub fn from_actions(actions: Vec<usize>, n_actions: usize) -> Self {
        let ns = actions.len();
        let mut sel = DMatrix::zeros(ns, ns * n_actions);
        for (s, &a) in actions.iter().enumerate() {
            sel[(s, a + s * n_actions)] = 1.0;
        }
        Self {
            actions,
            selection_matrix: sel,
        }
    }

    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSolution {
    pub theta_star: DVector<f64>,
    pub pi_star: GreedyPolicy,
    pub gap_omega: f64,
    pub policy_iterations: usize,
}

impl OptimalSolution {
    pub fn is_unique(&self) -> bool {
        self.gap_omega > UNIQUE_GAP_TOL
    }
}

/// Value iteration on the Bellman optimality equation. Returns the solution
/// and the sup-norm residual after every sweep.
pub fn value_iteration(
    mdp: &TabularMdp,
    tol: f64,
    max_iter: usize,
) -> Result<(QFunction, Vec<f64>)> {
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let n = mdp.n_pairs();
    let gamma = mdp.discount();
    let p = mdp.transition();
    let mut q = DVector::zeros(n);
    let mut residuals = Vec::new();
    for _ in 0..max_iter {
        let v = DVector::from_fn(ns, |s, _| {
            (0..na).fold(f64::NEG_INFINITY, |m, a| m.max(q[a + s * na]))
        });
        let pv = p * &v;
        let next = DVector::from_fn(n, |x, _| {
            mdp.reward()[x] + gamma * mdp.continuation(x) * pv[x]
        });
        let residual = linalg::max_abs_vec(&(&next - &q));
        residuals.push(residual);
        q = next;
        if residual <= tol {
            let values = DMatrix::from_fn(ns, na, |s, a| q[a + s * na]);
            return Ok((QFunction { values }, residuals));
        }
    }
    Err(Error::MaxIterExceeded {
        iterations: max_iter,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

pub fn solve_q_star(mdp: &TabularMdp, tol: f64, max_iter: usize) -> Result<QFunction> {
    value_iteration(mdp, tol, max_iter).map(|(q, _)| q)
}

/// `pi(s) = argmax_a phi(s, a)^T theta`, ties to the lowest action index.
pub fn greedy_policy(theta: &DVector<f64>, features: &FeatureMap) -> GreedyPolicy {
    let na = features.n_actions();
    let scores = features.phi().tr_mul(theta);
    let actions = (0..features.n_states())
        .map(|s| argmax_lowest((0..na).map(|a| scores[a + s * na])))
        .collect();
    GreedyPolicy::from_actions(actions, na)
}

/// Minimum over states and non-greedy actions of the value gap to the greedy
/// action; infinite when every state has a single action.
pub fn optimal_gap(theta: &DVector<f64>, features: &FeatureMap, policy: &GreedyPolicy) -> f64 {
    let na = features.n_actions();
    let scores = features.phi().tr_mul(theta);
    let mut omega = f64::INFINITY;
    for (s, &best) in policy.actions.iter().enumerate() {
        for a in (0..na).filter(|&a| a != best) {
            omega = omega.min(scores[best + s * na] - scores[a + s * na]);
        }
    }
    omega
}

/// `P S_pi Phi^T` with each row scaled by the pair's continuation weight.
fn next_feature_matrix(mdp: &TabularMdp, features: &FeatureMap, actions: &[usize]) -> DMatrix<f64> {
    let na = mdp.n_actions();
    let d = features.dim();
    // row s of S_pi Phi^T is phi(s, pi(s))^T
    let s_phi = DMatrix::from_fn(mdp.n_states(), d, |s, k| {
        features.phi()[(k, actions[s] + s * na)]
    });
    let mut out = mdp.transition() * s_phi;
    for x in 0..mdp.n_pairs() {
        if mdp.is_terminal(x) {
            out.row_mut(x).fill(0.0);
        }
    }
    out
}

/// `Phi D (Phi^T theta - R - gamma P S_pi Phi^T theta)`.
pub fn projected_bellman_residual(
    mdp: &TabularMdp,
    features: &FeatureMap,
    chain: &PairChain,
    theta: &DVector<f64>,
    policy: &GreedyPolicy,
) -> DVector<f64> {
    let phi = features.phi();
    let next = next_feature_matrix(mdp, features, &policy.actions);
    let td = phi.tr_mul(theta) - mdp.reward() - (next * theta) * mdp.discount();
    phi * (&chain.diag_d * td)
}

/// Solves the projected Bellman equation by alternating an exact linear solve
/// for a fixed policy with a greedy policy update, until the policy repeats.
pub fn solve_theta_star(
    mdp: &TabularMdp,
    features: &FeatureMap,
    chain: &PairChain,
    tol: f64,
    max_policy_iters: usize,
) -> Result<OptimalSolution> {
    features.check_compatible(mdp)?;
    let phi = features.phi();
    let phi_d = phi * &chain.diag_d;
    let gram = &phi_d * phi.transpose();
    let lo = linalg::min_symmetric_eigenvalue(&gram);
    let hi = linalg::max_symmetric_eigenvalue(&gram);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition < MAX_PROJECTION_CONDITION) {
        return Err(Error::SingularProjection { condition });
    }
    let rhs = &phi_d * mdp.reward();
    let gamma = mdp.discount();

    let mut actions = vec![0usize; mdp.n_states()];
    let mut seen: Vec<Vec<usize>> = Vec::new();
    for iteration in 1..=max_policy_iters {
        let system = &gram - (&phi_d * next_feature_matrix(mdp, features, &actions)) * gamma;
        let theta = system.lu().solve(&rhs).ok_or(Error::SingularProjection {
            condition: f64::INFINITY,
        })?;
        let next = greedy_policy(&theta, features);
        if next.actions == actions {
            let pi_star = next;
            let residual = projected_bellman_residual(mdp, features, chain, &theta, &pi_star);
            let scale = 1.0f64.max(linalg::max_abs_vec(&rhs));
            if linalg::max_abs_vec(&residual) > tol * scale {
                return Err(Error::SingularProjection { condition });
            }
            let gap_omega = optimal_gap(&theta, features, &pi_star);
            return Ok(OptimalSolution {
                theta_star: theta,
                pi_star,
                gap_omega,
                policy_iterations: iteration,
            });
        }
        if seen.contains(&next.actions) {
            return Err(Error::PolicyCycle {
                iterations: iteration,
            });
        }
        seen.push(core::mem::replace(&mut actions, next.actions));
    }
    Err(Error::PolicyCycle {
        iterations: max_policy_iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{pair_chain, BehaviorPolicy};

    #[test]
    fn geometric_series() {
        let mdp = TabularMdp::new(
            1,
            1,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            0.5,
        )
        .unwrap();
        let q = solve_q_star(&mdp, 1e-13, 1000).unwrap();
        assert!((q.values[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_discount_returns_reward() {
        let p = DMatrix::from_element(4, 2, 0.5);
        let r = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.0]);
        let mdp = TabularMdp::new(2, 2, p, r.clone(), 0.0).unwrap();
        let q = solve_q_star(&mdp, 1e-14, 10).unwrap();
        assert_eq!(q.flatten(), r);
    }

    #[test]
    fn absorbing_pair() {
        // Q(s2) = 1 + 0.9 Q(s2) = 10, Q(s1) = 0 + 0.9 * 10 = 9
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let r = DVector::from_vec(vec![0.0, 1.0]);
        let mdp = TabularMdp::new(2, 1, p, r, 0.9).unwrap();
        let q = solve_q_star(&mdp, 1e-12, 10_000).unwrap();
        assert!((q.values[(1, 0)] - 10.0).abs() < 1e-10);
        assert!((q.values[(0, 0)] - 9.0).abs() < 1e-10);
    }

    #[test]
    fn value_iteration_budget() {
        let mdp = TabularMdp::new(
            1,
            1,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            0.99,
        )
        .unwrap();
        assert!(matches!(
            solve_q_star(&mdp, 1e-12, 5),
            Err(Error::MaxIterExceeded { iterations: 5, .. })
        ));
    }

    #[test]
    fn tie_break_prefers_lowest_action() {
        let f = FeatureMap::tabular(3, 2);
        let pi = greedy_policy(&DVector::zeros(6), &f);
        assert_eq!(pi.actions, vec![0, 0, 0]);
        let pi = greedy_policy(
            &DVector::from_vec(vec![1.0, 2.0, 0.0, 0.0, 5.0, 5.0 + 1e-13]),
            &f,
        );
        assert_eq!(pi.actions, vec![1, 0, 0]);
        for row in pi.selection_matrix.row_iter() {
            assert_eq!(row.sum(), 1.0);
        }
    }

    #[test]
    fn tabular_projection_matches_q_star() {
        let p = DMatrix::from_row_slice(4, 2, &[0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.3, 0.7]);
        let r = DVector::from_vec(vec![0.1, -0.4, 0.7, 0.2]);
        let mdp = TabularMdp::new(2, 2, p, r, 0.8).unwrap();
        let f = FeatureMap::tabular(2, 2);
        let chain = pair_chain(&mdp, &BehaviorPolicy::uniform(2, 2)).unwrap();
        let sol = solve_theta_star(&mdp, &f, &chain, 1e-10, 50).unwrap();
        let q = solve_q_star(&mdp, 1e-13, 10_000).unwrap();
        assert!(linalg::max_abs_vec(&(&sol.theta_star - q.flatten())) < 1e-11);
        assert_eq!(sol.pi_star.actions, q.greedy_actions());
        assert!(sol.is_unique());
    }

    #[test]
    fn singular_projection_rejected() {
        let p = DMatrix::from_element(2, 1, 1.0);
        let mdp = TabularMdp::new(1, 2, p, DVector::zeros(2), 0.5).unwrap();
        // both pairs share one feature direction in a 2-d space
        let f =
            FeatureMap::new(1, 2, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0])).unwrap();
        let chain = pair_chain(&mdp, &BehaviorPolicy::uniform(1, 2)).unwrap();
        assert!(matches!(
            solve_theta_star(&mdp, &f, &chain, 1e-10, 10),
            Err(Error::SingularProjection { .. })
        ));
    }
}
