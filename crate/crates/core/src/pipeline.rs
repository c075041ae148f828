//! End-to-end model construction: chains, optimal solution, and the LSA
//! model, plus the seeded random-model generator used by the verification
//! suites.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::amse::{amse_report, solve_covariances, AmseReport, CovarianceSolution};
use crate::error::{Error, Result};
use crate::lsa::{LsaModel, LAG_TOL};
use crate::lyapunov::is_hurwitz;
use crate::mdp::{pair_chain, z_chain, BehaviorPolicy, FeatureMap, PairChain, TabularMdp, ZChain};
use crate::solver::{solve_theta_star, OptimalSolution};

/// Projected Bellman residual accepted when solving for `theta*`.
pub const THETA_TOL: f64 = 1e-8;

pub const MAX_POLICY_ITERS: usize = 200;

#[derive(Debug, Clone)]
pub struct AnalyzedModel {
    pub mdp: TabularMdp,
    pub features: FeatureMap,
    pub policy: BehaviorPolicy,
    pub chain: PairChain,
    pub zchain: ZChain,
    pub solution: OptimalSolution,
    pub lsa: LsaModel,
}

impl AnalyzedModel {
    pub fn build(mdp: TabularMdp, features: FeatureMap, policy: BehaviorPolicy) -> Result<Self> {
        features.check_compatible(&mdp)?;
        let chain = pair_chain(&mdp, &policy)?;
        let zchain = z_chain(&chain, &mdp)?;
        let solution = solve_theta_star(&mdp, &features, &chain, THETA_TOL, MAX_POLICY_ITERS)?;
        let lsa = LsaModel::build(&mdp, &features, &chain, &zchain, &solution, LAG_TOL)?;
        Ok(Self {
            mdp,
            features,
            policy,
            chain,
            zchain,
            solution,
            lsa,
        })
    }

    /// Both Hurwitz conditions hold and the optimal policy is unique.
    pub fn qualifies(&self, min_gap: f64) -> bool {
        self.lsa.g0.is_finite()
            && self.solution.gap_omega > min_gap
            && is_hurwitz(&-self.lsa.abar_sum())
    }

    pub fn covariances(&self, g: f64) -> Result<CovarianceSolution> {
        solve_covariances(&self.lsa, g)
    }

    pub fn report(&self, g: f64) -> Result<AmseReport> {
        let cov = self.covariances(g)?;
        amse_report(&cov, &self.lsa, g)
    }
}

/// Settings of the random tabular model generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomModelSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// Models whose optimal-action gap is at or below this are redrawn.
    pub min_gap: f64,
    pub max_attempts: usize,
}

impl Default for RandomModelSpec {
    fn default() -> Self {
        Self {
            n_states: 5,
            n_actions: 3,
            gamma: 0.8,
            min_gap: 1e-6,
            max_attempts: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomModel {
    pub seed: u64,
    /// Number of draws, including the accepted one.
    pub attempts: usize,
    pub model: AnalyzedModel,
}

/// Draws Dirichlet(1) transition rows and `U[-1, 1]` rewards with a uniform
/// behavior policy and tabular features, redrawing until the model has a
/// unique optimal policy and both Hurwitz conditions hold.
pub fn random_model(spec: &RandomModelSpec, seed: u64) -> Result<RandomModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1..=spec.max_attempts {
        let mdp = random_mdp(spec, &mut rng)?;
        let features = FeatureMap::tabular(spec.n_states, spec.n_actions);
        let policy = BehaviorPolicy::uniform(spec.n_states, spec.n_actions);
        match AnalyzedModel::build(mdp, features, policy) {
            Ok(model) if model.qualifies(spec.min_gap) => {
                return Ok(RandomModel {
                    seed,
                    attempts: attempt,
                    model,
                });
            }
            Ok(_) | Err(Error::PolicyCycle { .. }) | Err(Error::SlowMixing { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::Invalid(alloc::format!(
        "no qualifying random model after {} draws",
        spec.max_attempts
    )))
}

fn random_mdp(spec: &RandomModelSpec, rng: &mut ChaCha8Rng) -> Result<TabularMdp> {
    let n_pairs = spec.n_states * spec.n_actions;
    let mut p = DMatrix::zeros(n_pairs, spec.n_states);
    for x in 0..n_pairs {
        let draws: Vec<f64> = (0..spec.n_states).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        for (sp, v) in draws.iter().enumerate() {
            p[(x, sp)] = v / total;
        }
    }
    let r = DVector::from_fn(n_pairs, |_, _| rng.random_range(-1.0..=1.0));
    TabularMdp::new(spec.n_states, spec.n_actions, p, r, spec.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_models_are_reproducible() {
        let spec = RandomModelSpec {
            n_states: 3,
            n_actions: 2,
            ..Default::default()
        };
        let a = random_model(&spec, 11).unwrap();
        let b = random_model(&spec, 11).unwrap();
        assert_eq!(a.model.mdp, b.model.mdp);
        assert_eq!(a.attempts, b.attempts);
        assert!(a.model.qualifies(spec.min_gap));
        let c = random_model(&spec, 12).unwrap();
        assert_ne!(a.model.mdp, c.model.mdp);
    }
}
