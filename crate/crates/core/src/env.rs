//! Benchmark environments: Baird's six-state example, a slippery GridWorld,
//! and the episodic maximization-bias chain.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mdp::{BehaviorPolicy, FeatureMap, TabularMdp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BairdReward {
    Zero,
    /// `U[-0.05, 0.05]`
    SmallRandom,
    /// `U[-50, 50]`
    LargeRandom,
}

impl BairdReward {
    pub fn half_width(self) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::SmallRandom => 0.05,
            Self::LargeRandom => 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BairdSpec {
    pub reward_setting: BairdReward,
    pub reward_seed: u64,
    pub gamma: f64,
}

impl Default for BairdSpec {
    fn default() -> Self {
        Self {
            reward_setting: BairdReward::SmallRandom,
            reward_seed: 7,
            gamma: 0.8,
        }
    }
}

pub const BAIRD_STATES: usize = 6;
pub const BAIRD_DOTTED: usize = 0;
pub const BAIRD_SOLID: usize = 1;

/// Baird's example: the dotted action moves uniformly to one of the first
/// five states, the solid action moves to the sixth. Features live in
/// `R^12` with `phi(i, dotted) = 2 e_i + e_{6+i}` and
/// `phi(i, solid) = e_i + 2 e_{6+i}`.
pub fn build_baird(spec: &BairdSpec) -> Result<(TabularMdp, FeatureMap, BehaviorPolicy)> {
    let ns = BAIRD_STATES;
    let na = 2;
    let mut p = DMatrix::zeros(ns * na, ns);
    for s in 0..ns {
        for sp in 0..5 {
            p[(BAIRD_DOTTED + s * na, sp)] = 0.2;
        }
        p[(BAIRD_SOLID + s * na, 5)] = 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.reward_seed);
    let w = spec.reward_setting.half_width();
    let r = DVector::from_fn(ns * na, |_, _| {
        if w == 0.0 {
            0.0
        } else {
            rng.random_range(-w..=w)
        }
    });
    let mdp = TabularMdp::new(ns, na, p, r, spec.gamma)?;
    let mut phi = DMatrix::zeros(2 * ns, ns * na);
    for s in 0..ns {
        phi[(s, BAIRD_DOTTED + s * na)] = 2.0;
        phi[(ns + s, BAIRD_DOTTED + s * na)] = 1.0;
        phi[(s, BAIRD_SOLID + s * na)] = 1.0;
        phi[(ns + s, BAIRD_SOLID + s * na)] = 2.0;
    }
    let features = FeatureMap::new(ns, na, phi)?;
    Ok((mdp, features, BehaviorPolicy::uniform(ns, na)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridMode {
    /// Reaching the goal ends the episode; the next one starts at `(1, 1)`.
    Episodic,
    /// The goal transitions back to `(1, 1)` and bootstraps as usual.
    Restart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlipSemantics {
    /// The slip draws uniformly from all four directions, the intended one included.
    AnyDirection,
    /// The slip draws uniformly from the three other directions.
    OtherDirections,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridWorldSpec {
    pub n: usize,
    pub slip: f64,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub gamma: f64,
    pub mode: GridMode,
    pub slip_semantics: SlipSemantics,
}

impl GridWorldSpec {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            slip: 0.3,
            step_reward: -1e-3,
            goal_reward: 1.0,
            gamma: 0.9,
            mode: GridMode::Restart,
            slip_semantics: SlipSemantics::AnyDirection,
        }
    }
}

/// Actions in order: up, right, down, left.
pub const GRID_MOVES: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

/// Cells are numbered `row * n + col` from the start `(1, 1)` at index 0;
/// the goal `(n, n)` is the last cell. Every action at the goal returns to
/// the start with the goal reward.
pub fn build_gridworld(spec: &GridWorldSpec) -> Result<(TabularMdp, FeatureMap, BehaviorPolicy)> {
    let n = spec.n;
    if n < 2 {
        return Err(Error::Invalid("grid side must be at least 2".into()));
    }
    if !(0.0..=1.0).contains(&spec.slip) {
        return Err(Error::Invalid("slip probability outside [0, 1]".into()));
    }
    let ns = n * n;
    let na = GRID_MOVES.len();
    let goal = ns - 1;
    let target = |cell: usize, dir: usize| -> usize {
        let (r, c) = ((cell / n) as isize, (cell % n) as isize);
        let (dr, dc) = GRID_MOVES[dir];
        let (nr, nc) = (r + dr, c + dc);
        if nr < 0 || nc < 0 || nr >= n as isize || nc >= n as isize {
            cell
        } else {
            nr as usize * n + nc as usize
        }
    };
    let mut p = DMatrix::zeros(ns * na, ns);
    let mut r = DVector::from_element(ns * na, spec.step_reward);
    for s in 0..ns {
        for a in 0..na {
            let x = a + s * na;
            if s == goal {
                p[(x, 0)] = 1.0;
                r[x] = spec.goal_reward;
                continue;
            }
            for dir in 0..na {
                let prob = match spec.slip_semantics {
                    SlipSemantics::AnyDirection => {
                        spec.slip / na as f64 + if dir == a { 1.0 - spec.slip } else { 0.0 }
                    }
                    SlipSemantics::OtherDirections => {
                        if dir == a {
                            1.0 - spec.slip
                        } else {
                            spec.slip / (na - 1) as f64
                        }
                    }
                };
                p[(x, target(s, dir))] += prob;
            }
        }
    }
    let mut mdp = TabularMdp::new(ns, na, p, r, spec.gamma)?;
    if spec.mode == GridMode::Episodic {
        let terminal = (0..ns * na).map(|x| x / na == goal).collect();
        mdp = mdp.with_terminal(terminal)?;
    }
    Ok((
        mdp,
        FeatureMap::tabular(ns, na),
        BehaviorPolicy::uniform(ns, na),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxBiasSpec {
    pub m: usize,
    pub reward_mean: f64,
    pub reward_sd: f64,
}

impl MaxBiasSpec {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            reward_mean: -0.1,
            reward_sd: 1.0,
        }
    }
}

pub const MAX_BIAS_RIGHT: usize = 0;
pub const MAX_BIAS_LEFT: usize = 1;

/// Outcome of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub reward: f64,
    /// `None` when the episode ends.
    pub next: Option<usize>,
}

/// The maximization-bias chain over states `{0, ..., M}` with actions
/// right (index 0) and left (index 1). From 0, right ends the episode and
/// left moves to a uniform state in `1..=M`, both with reward zero. From
/// `i >= 1`, right returns to 0 and left ends the episode, both with a
/// `Normal(-0.1, 1)` reward.
#[derive(Debug, Clone)]
pub struct MaxBiasEnv {
    spec: MaxBiasSpec,
    noise: Normal<f64>,
}

impl MaxBiasEnv {
    pub fn n_states(&self) -> usize {
        self.spec.m + 1
    }

    pub fn n_actions(&self) -> usize {
        2
    }

    pub fn spec(&self) -> &MaxBiasSpec {
        &self.spec
    }

    pub fn reset(&self) -> usize {
        0
    }

    /// Draws transitions from `moves` and rewards from `rewards`.
    pub fn step<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        &self,
        state: usize,
        action: usize,
        moves: &mut R1,
        rewards: &mut R2,
    ) -> Transition {
        match (state, action) {
            (0, MAX_BIAS_RIGHT) => Transition {
                reward: 0.0,
                next: None,
            },
            (0, _) => Transition {
                reward: 0.0,
                next: Some(moves.random_range(1..=self.spec.m)),
            },
            (_, MAX_BIAS_RIGHT) => Transition {
                reward: self.noise.sample(rewards),
                next: Some(0),
            },
            _ => Transition {
                reward: self.noise.sample(rewards),
                next: None,
            },
        }
    }
}

pub fn build_max_bias(spec: &MaxBiasSpec) -> Result<MaxBiasEnv> {
    if spec.m < 1 {
        return Err(Error::Invalid(
            "max-bias chain needs at least one left state".into(),
        ));
    }
    let noise = Normal::new(spec.reward_mean, spec.reward_sd)
        .map_err(|_| Error::Invalid("reward standard deviation must be finite and >= 0".into()))?;
    Ok(MaxBiasEnv { spec: *spec, noise })
}

/// States reachable from `start` under a behavior policy.
pub fn reachable_states(mdp: &TabularMdp, policy: &BehaviorPolicy, start: usize) -> Vec<bool> {
    let mut seen = vec![false; mdp.n_states()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(s) = stack.pop() {
        for a in 0..mdp.n_actions() {
            if policy.prob(s, a) == 0.0 {
                continue;
            }
            for (sp, seen_sp) in seen.iter_mut().enumerate() {
                if mdp.prob(s, a, sp) > 0.0 && !*seen_sp {
                    *seen_sp = true;
                    stack.push(sp);
                }
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baird_construction() {
        let (mdp, f, policy) = build_baird(&BairdSpec {
            reward_setting: BairdReward::Zero,
            ..Default::default()
        })
        .unwrap();
        assert_eq!((mdp.n_states(), mdp.n_actions(), f.dim()), (6, 2, 12));
        assert!(mdp.reward().iter().all(|&r| r == 0.0));
        for s in 0..6 {
            let dotted = mdp.transition().row(mdp.pair_index(s, BAIRD_DOTTED));
            assert_eq!(dotted.iter().filter(|&&p| p == 0.2).count(), 5);
            assert_eq!(mdp.prob(s, BAIRD_SOLID, 5), 1.0);
        }
        assert_eq!(policy.prob(3, 1), 0.5);
        assert_eq!(f.phi().rank(1e-12), 12);
    }

    #[test]
    fn baird_rewards_are_seeded() {
        let spec = BairdSpec {
            reward_setting: BairdReward::LargeRandom,
            reward_seed: 3,
            gamma: 0.8,
        };
        let (a, _, _) = build_baird(&spec).unwrap();
        let (b, _, _) = build_baird(&spec).unwrap();
        assert_eq!(a.reward(), b.reward());
        assert!(a.reward().iter().all(|r| r.abs() <= 50.0));
        let (c, _, _) = build_baird(&BairdSpec {
            reward_seed: 4,
            ..spec
        })
        .unwrap();
        assert_ne!(a.reward(), c.reward());
    }

    #[test]
    fn gridworld_slip_mass() {
        let (mdp, f, _) = build_gridworld(&GridWorldSpec::new(3)).unwrap();
        assert_eq!(mdp.n_pairs(), 36);
        assert_eq!(f.dim(), 36);
        // centre cell (index 4) moving right lands on cell 5
        assert!((mdp.prob(4, 1, 5) - 0.775).abs() < 1e-15);
        assert!((mdp.prob(4, 1, 1) - 0.075).abs() < 1e-15);
        let other = GridWorldSpec {
            slip_semantics: SlipSemantics::OtherDirections,
            ..GridWorldSpec::new(3)
        };
        let (mdp, _, _) = build_gridworld(&other).unwrap();
        assert!((mdp.prob(4, 1, 5) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn gridworld_goal_restarts() {
        let (mdp, _, policy) = build_gridworld(&GridWorldSpec::new(4)).unwrap();
        assert_eq!(mdp.prob(15, 2, 0), 1.0);
        assert_eq!(mdp.reward_at(15, 0), 1.0);
        assert_eq!(mdp.reward_at(3, 0), -1e-3);
        assert!(reachable_states(&mdp, &policy, 0).iter().all(|&r| r));
        let episodic = GridWorldSpec {
            mode: GridMode::Episodic,
            ..GridWorldSpec::new(4)
        };
        let (mdp, _, _) = build_gridworld(&episodic).unwrap();
        assert!(mdp.is_terminal(mdp.pair_index(15, 3)));
        assert!(!mdp.is_terminal(mdp.pair_index(14, 3)));
    }

    #[test]
    fn max_bias_moves() {
        let env = build_max_bias(&MaxBiasSpec::new(8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            env.step(0, MAX_BIAS_RIGHT, &mut rng, &mut rng2),
            Transition {
                reward: 0.0,
                next: None
            }
        );
        for _ in 0..100 {
            let t = env.step(0, MAX_BIAS_LEFT, &mut rng, &mut rng2);
            assert_eq!(t.reward, 0.0);
            assert!(matches!(t.next, Some(s) if (1..=8).contains(&s)));
        }
        assert_eq!(
            env.step(3, MAX_BIAS_RIGHT, &mut rng, &mut rng2).next,
            Some(0)
        );
        assert_eq!(env.step(3, MAX_BIAS_LEFT, &mut rng, &mut rng2).next, None);
        assert!(build_max_bias(&MaxBiasSpec::new(0)).is_err());
    }
}
