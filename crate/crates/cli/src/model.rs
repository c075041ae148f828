//! Builds environments from their config descriptors.

use anyhow::Result;
use sha2::{Digest, Sha256};

use doubleq_core::env::{
    build_baird, build_gridworld, build_max_bias, BairdSpec, GridWorldSpec, MaxBiasEnv, MaxBiasSpec,
};
use doubleq_core::pipeline::{random_model, RandomModelSpec};
use doubleq_core::{AnalyzedModel, BehaviorPolicy, FeatureMap, TabularMdp};

use crate::config::Environment;

pub enum Built {
    Tabular(Box<TabularParts>),
    MaxBias(MaxBiasEnv),
}

#[allow(clippy::large_enum_variant)]
pub enum TabularParts {
    Raw {
        mdp: TabularMdp,
        features: FeatureMap,
        policy: BehaviorPolicy,
    },
    /// Random models are already analyzed while they are drawn.
    Analyzed(AnalyzedModel),
}

impl TabularParts {
    pub fn analyze(self) -> doubleq_core::Result<AnalyzedModel> {
        match self {
            Self::Raw {
                mdp,
                features,
                policy,
            } => AnalyzedModel::build(mdp, features, policy),
            Self::Analyzed(m) => Ok(m),
        }
    }
}

pub fn build(env: &Environment) -> Result<Built> {
    let raw = |(mdp, features, policy)| {
        Built::Tabular(Box::new(TabularParts::Raw {
            mdp,
            features,
            policy,
        }))
    };
    Ok(match *env {
        Environment::Baird {
            setting,
            seed,
            gamma,
        } => raw(build_baird(&BairdSpec {
            reward_setting: setting.into(),
            reward_seed: seed,
            gamma,
        })?),
        Environment::Gridworld {
            n,
            slip,
            step_reward,
            goal_reward,
            gamma,
            mode,
            slip_semantics,
        } => raw(build_gridworld(&GridWorldSpec {
            n,
            slip,
            step_reward,
            goal_reward,
            gamma,
            mode: Environment::grid_mode(mode),
            slip_semantics: Environment::slip_semantics(slip_semantics),
        })?),
        Environment::Maxbias {
            m,
            reward_mean,
            reward_sd,
        } => Built::MaxBias(build_max_bias(&MaxBiasSpec {
            m,
            reward_mean,
            reward_sd,
        })?),
        Environment::Random {
            n_states,
            n_actions,
            gamma,
            seed,
            min_gap,
        } => {
            let spec = RandomModelSpec {
                n_states,
                n_actions,
                gamma,
                min_gap,
                ..Default::default()
            };
            Built::Tabular(Box::new(TabularParts::Analyzed(
                random_model(&spec, seed)?.model,
            )))
        }
    })
}

/// SHA-256 over the model tables, so runs can be matched to the exact
/// model they used.
pub fn model_hash(mdp: &TabularMdp, features: &FeatureMap, policy: &BehaviorPolicy) -> String {
    let mut h = Sha256::new();
    for v in [
        mdp.n_states() as u64,
        mdp.n_actions() as u64,
        features.dim() as u64,
    ] {
        h.update(v.to_le_bytes());
    }
    let mut put = |xs: &[f64]| {
        for x in xs {
            h.update(x.to_le_bytes());
        }
    };
    put(mdp.transition().as_slice());
    put(mdp.reward().as_slice());
    put(&[mdp.discount()]);
    put(features.phi().as_slice());
    put(policy.probs().as_slice());
    for &t in mdp.terminal() {
        h.update([t as u8]);
    }
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
