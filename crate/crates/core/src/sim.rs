//! Monte-Carlo simulation of Q-learning, Double Q-learning and their
//! linearized forms along behavior-policy sample paths.
//!
//! Every path owns a ChaCha8 generator seeded with `seed_base + path`.
//! Independent streams of that seed drive the different sources of
//! randomness, so the algorithms share the chain and the initial parameter
//! when run with the same seed:
//!
//! | stream | use |
//! |---|---|
//! | 0 | behavior actions and next states |
//! | 1 | Double Q coins `beta_n` |
//! | 2 | reward noise (max-bias chain) |
//! | 3 | initial parameter |
//! | 4 | epsilon-greedy exploration (max-bias chain) |

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{MaxBiasEnv, MAX_BIAS_LEFT, MAX_BIAS_RIGHT};
use crate::error::{Error, Result};
use crate::mdp::{BehaviorPolicy, FeatureMap, TabularMdp};
use crate::solver::OptimalSolution;

/// Runs stop once any parameter entry exceeds this in magnitude.
pub const DIVERGENCE_BOUND: f64 = 1e12;

pub const STREAM_CHAIN: u64 = 0;
pub const STREAM_COINS: u64 = 1;
pub const STREAM_REWARD: u64 = 2;
pub const STREAM_INIT: u64 = 3;
pub const STREAM_EXPLORE: u64 = 4;

/// Generator for one stream of one path.
pub fn path_rng(seed_base: u64, path: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_base.wrapping_add(path));
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Q,
    /// Double Q with the same step size as Q, reporting `theta^A`.
    DQ,
    /// Double Q with twice the step size, reporting `theta^A`.
    DQTwice,
    /// Double Q with twice the step size, reporting `(theta^A + theta^B) / 2`.
    DQAvgTwice,
    QLinearized,
    DQLinearized,
    DQAvgTwiceLinearized,
}

/// Which estimate a run reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Output {
    Single,
    First,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyMode {
    /// Bootstrap with the greedy policy of the current parameter.
    Greedy,
    /// Bootstrap with the optimal policy.
    Fixed,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Self::Q,
        Self::DQ,
        Self::DQTwice,
        Self::DQAvgTwice,
        Self::QLinearized,
        Self::DQLinearized,
        Self::DQAvgTwiceLinearized,
    ];

    /// The four algorithms of the benchmark experiments.
    pub const NONLINEAR: [Algorithm; 4] = [Self::Q, Self::DQ, Self::DQTwice, Self::DQAvgTwice];

    pub fn name(self) -> &'static str {
        match self {
            Self::Q => "Q",
            Self::DQ => "DQ",
            Self::DQTwice => "DQ_twice",
            Self::DQAvgTwice => "DQ_avg_twice",
            Self::QLinearized => "Q_linearized",
            Self::DQLinearized => "DQ_linearized",
            Self::DQAvgTwiceLinearized => "DQ_avg_twice_linearized",
        }
    }

    pub fn is_double(self) -> bool {
        !matches!(self, Self::Q | Self::QLinearized)
    }

    pub fn is_linearized(self) -> bool {
        matches!(
            self,
            Self::QLinearized | Self::DQLinearized | Self::DQAvgTwiceLinearized
        )
    }

    pub fn step_multiplier(self) -> f64 {
        match self {
            Self::DQTwice | Self::DQAvgTwice | Self::DQAvgTwiceLinearized => 2.0,
            _ => 1.0,
        }
    }

    pub fn output(self) -> Output {
        match self {
            Self::Q | Self::QLinearized => Output::Single,
            Self::DQ | Self::DQTwice | Self::DQLinearized => Output::First,
            Self::DQAvgTwice | Self::DQAvgTwiceLinearized => Output::Average,
        }
    }

    pub fn policy_mode(self) -> PolicyMode {
        if self.is_linearized() {
            PolicyMode::Fixed
        } else {
            PolicyMode::Greedy
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Invalid(alloc::format!("unknown algorithm '{s}'")))
    }
}

/// Base step size `alpha_n` for `n >= 1`. The algorithm's multiplier is
/// applied on top, so `DQ_twice` under `GOverN { g, .. }` steps with `2g/n`.
///
/// The `offset` of the `g/n` schedules shifts the index to
/// `g / (n + offset)`. It leaves the asymptotic covariance unchanged and
/// keeps the first steps below one when `g` is large.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    GOverN {
        g: f64,
        offset: f64,
    },
    TwoGOverN {
        g: f64,
        offset: f64,
    },
    /// `c / (n + offset)`.
    Harmonic {
        c: f64,
        offset: f64,
    },
    /// `c / (n + offset)` with `n` counting episodes.
    Episodic {
        c: f64,
        offset: f64,
    },
}

impl StepSchedule {
    pub fn value(&self, n: u64) -> f64 {
        let n = n as f64;
        match *self {
            Self::GOverN { g, offset } => g / (n + offset),
            Self::TwoGOverN { g, offset } => 2.0 * g / (n + offset),
            Self::Harmonic { c, offset } | Self::Episodic { c, offset } => c / (n + offset),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::GOverN { g: c, offset }
            | Self::TwoGOverN { g: c, offset }
            | Self::Harmonic { c, offset }
            | Self::Episodic { c, offset } => {
                c > 0.0 && c.is_finite() && offset > -1.0 && offset.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(
                "step schedule must be positive for every n >= 1".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zero,
    /// Uniform on `[0, 2]^d`, shared by both estimators of Double Q.
    Uniform02,
    Explicit(DVector<f64>),
}

/// Step index used for `delta_n` in Double Q.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepCounter {
    /// The global sample index `n`.
    Global,
    /// The number of updates the chosen estimator has received.
    PerEstimator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub schedule: StepSchedule,
    pub n_steps: u64,
    pub n_paths: usize,
    pub seed_base: u64,
    pub init: Init,
    pub start_state: usize,
    pub step_counter: StepCounter,
}

impl RunConfig {
    pub fn validate(&self, model: &SimModel) -> Result<()> {
        self.schedule.validate()?;
        if self.n_paths == 0 {
            return Err(Error::Invalid("n_paths must be at least 1".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::Invalid("n_steps must be at least 1".into()));
        }
        if self.start_state >= model.n_states {
            return Err(Error::Invalid("start state out of range".into()));
        }
        if let Init::Explicit(v) = &self.init {
            if v.len() != model.dim {
                return Err(Error::DimensionMismatch(alloc::format!(
                    "initial parameter has length {}, features have dimension {}",
                    v.len(),
                    model.dim
                )));
            }
        }
        Ok(())
    }
}

/// Sampling tables for a tabular MDP with sparse features.
#[derive(Debug, Clone)]
pub struct SimModel {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    feat_start: Vec<usize>,
    feat_index: Vec<usize>,
    feat_value: Vec<f64>,
    /// Support and cumulative probabilities of `P(x, .)`.
    next_start: Vec<usize>,
    next_state: Vec<usize>,
    next_cdf: Vec<f64>,
    behavior_cdf: Vec<f64>,
    reward: Vec<f64>,
    /// `gamma` for ordinary pairs, zero for terminal ones.
    bootstrap: Vec<f64>,
    terminal: Vec<bool>,
    pi_star: Vec<usize>,
    theta_star: Vec<f64>,
}

impl SimModel {
    pub fn new(
        mdp: &TabularMdp,
        features: &FeatureMap,
        policy: &BehaviorPolicy,
        solution: &OptimalSolution,
    ) -> Result<Self> {
        features.check_compatible(mdp)?;
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        if policy.n_states() != ns || policy.n_actions() != na {
            return Err(Error::DimensionMismatch(
                "behavior policy does not match the MDP".into(),
            ));
        }
        let d = features.dim();
        if solution.theta_star.len() != d || solution.pi_star.actions.len() != ns {
            return Err(Error::DimensionMismatch(
                "solution does not match the features".into(),
            ));
        }
        let n_pairs = ns * na;

        let mut feat_start = vec![0];
        let (mut feat_index, mut feat_value) = (Vec::new(), Vec::new());
        for x in 0..n_pairs {
            for i in 0..d {
                let v = features.phi()[(i, x)];
                if v != 0.0 {
                    feat_index.push(i);
                    feat_value.push(v);
                }
            }
            feat_start.push(feat_index.len());
        }

        let mut next_start = vec![0];
        let (mut next_state, mut next_cdf) = (Vec::new(), Vec::new());
        for x in 0..n_pairs {
            let mut acc = 0.0;
            for sp in 0..ns {
                let p = mdp.transition()[(x, sp)];
                if p > 0.0 {
                    acc += p;
                    next_state.push(sp);
                    next_cdf.push(acc);
                }
            }
            // guard against rounding in the last bucket
            if let Some(last) = next_cdf.last_mut() {
                *last = f64::INFINITY;
            }
            next_start.push(next_state.len());
        }

        let mut behavior_cdf = Vec::with_capacity(n_pairs);
        for s in 0..ns {
            let mut acc = 0.0;
            let last_positive = (0..na)
                .rev()
                .find(|&a| policy.prob(s, a) > 0.0)
                .unwrap_or(na - 1);
            for a in 0..na {
                acc += policy.prob(s, a);
                behavior_cdf.push(if a >= last_positive {
                    f64::INFINITY
                } else {
                    acc
                });
            }
        }

        Ok(Self {
            n_states: ns,
            n_actions: na,
            dim: d,
            feat_start,
            feat_index,
            feat_value,
            next_start,
            next_state,
            next_cdf,
            behavior_cdf,
            reward: mdp.reward().iter().copied().collect(),
            bootstrap: (0..n_pairs)
                .map(|x| mdp.discount() * mdp.continuation(x))
                .collect(),
            terminal: mdp.terminal().to_vec(),
            pi_star: solution.pi_star.actions.clone(),
            theta_star: solution.theta_star.iter().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn pi_star(&self) -> &[usize] {
        &self.pi_star
    }

    #[inline]
    fn pair(&self, s: usize, a: usize) -> usize {
        a + s * self.n_actions
    }

    #[inline]
    fn value(&self, x: usize, theta: &[f64]) -> f64 {
        let (lo, hi) = (self.feat_start[x], self.feat_start[x + 1]);
        let mut v = 0.0;
        for k in lo..hi {
            v += self.feat_value[k] * theta[self.feat_index[k]];
        }
        v
    }

    /// Greedy action at `s`; exact ties go to the lowest index.
    #[inline]
    pub fn greedy(&self, s: usize, theta: &[f64]) -> usize {
        let mut best = 0;
        let mut best_v = self.value(self.pair(s, 0), theta);
        for a in 1..self.n_actions {
            let v = self.value(self.pair(s, a), theta);
            if v > best_v {
                best = a;
                best_v = v;
            }
        }
        best
    }

    /// True when the greedy policy of `theta` equals the optimal policy.
    pub fn greedy_matches_optimal(&self, theta: &[f64]) -> bool {
        (0..self.n_states).all(|s| self.greedy(s, theta) == self.pi_star[s])
    }

    #[inline]
    fn bootstrap_action(&self, s: usize, selector: &[f64], mode: PolicyMode) -> usize {
        match mode {
            PolicyMode::Greedy => self.greedy(s, selector),
            PolicyMode::Fixed => self.pi_star[s],
        }
    }

    /// `theta += alpha * phi(x) * (target - phi(x)^T theta)`, then the
    /// divergence guard on the touched entries.
    #[inline]
    fn apply(&self, theta: &mut [f64], x: usize, target: f64, alpha: f64) -> Result<()> {
        let td = target - self.value(x, theta);
        let (lo, hi) = (self.feat_start[x], self.feat_start[x + 1]);
        let mut ok = true;
        for k in lo..hi {
            let i = self.feat_index[k];
            theta[i] += alpha * td * self.feat_value[k];
            ok &= theta[i].abs() <= DIVERGENCE_BOUND;
        }
        if ok {
            Ok(())
        } else {
            Err(Error::Diverged {
                diverged: 1,
                paths: 1,
            })
        }
    }

    #[inline]
    fn sample_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let row = &self.behavior_cdf[s * self.n_actions..(s + 1) * self.n_actions];
        row.iter()
            .position(|&c| u < c)
            .unwrap_or(self.n_actions - 1)
    }

    #[inline]
    fn sample_next<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let (lo, hi) = (self.next_start[x], self.next_start[x + 1]);
        let k = self.next_cdf[lo..hi]
            .iter()
            .position(|&c| u < c)
            .unwrap_or(hi - lo - 1);
        self.next_state[lo + k]
    }

    fn squared_error(&self, estimate: impl Iterator<Item = f64>) -> f64 {
        estimate
            .zip(&self.theta_star)
            .map(|(v, t)| (v - t) * (v - t))
            .sum()
    }
}

/// One Q-learning update on the sample `(x, s')`.
pub fn step_q(
    model: &SimModel,
    theta: &mut [f64],
    x: usize,
    s_next: usize,
    alpha: f64,
    mode: PolicyMode,
) -> Result<()> {
    let a_next = model.bootstrap_action(s_next, theta, mode);
    let h = model.value(model.pair(s_next, a_next), theta);
    let target = model.reward[x] + model.bootstrap[x] * h;
    model.apply(theta, x, target, alpha)
}

/// One Double Q-learning update: `beta = true` updates `theta_a` with the
/// action chosen by `theta_a` and valued by `theta_b`, otherwise the roles
/// swap.
#[allow(clippy::too_many_arguments)]
pub fn step_double_q(
    model: &SimModel,
    theta_a: &mut [f64],
    theta_b: &mut [f64],
    beta: bool,
    x: usize,
    s_next: usize,
    delta: f64,
    mode: PolicyMode,
) -> Result<()> {
    let (upd, other) = if beta {
        (theta_a, theta_b)
    } else {
        (theta_b, theta_a)
    };
    let a_next = model.bootstrap_action(s_next, upd, mode);
    let h = model.value(model.pair(s_next, a_next), other);
    let target = model.reward[x] + model.bootstrap[x] * h;
    model.apply(upd, x, target, delta)
}

/// Geometric checkpoints with ratio 1.5 from `n = 10`, every power of ten,
/// and the final step.
pub fn checkpoints(n_steps: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut g = 10.0f64;
    while (g as u64) < n_steps {
        out.push(libm::round(g) as u64);
        g *= 1.5;
    }
    let mut p = 10u64;
    while p < n_steps {
        out.push(p);
        p = p.saturating_mul(10);
    }
    out.push(n_steps);
    out.retain(|&n| n >= 1 && n <= n_steps);
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub path: u64,
    /// Squared error at each checkpoint; `None` after divergence.
    pub squared_errors: Vec<f64>,
    pub diverged_at: Option<u64>,
    pub a_updates: u64,
    pub b_updates: u64,
}

impl PathResult {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

fn initial_parameter(model: &SimModel, init: &Init, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match init {
        Init::Zero => vec![0.0; model.dim],
        Init::Uniform02 => (0..model.dim)
            .map(|_| rng.random_range(0.0..=2.0))
            .collect(),
        Init::Explicit(v) => v.iter().copied().collect(),
    }
}

/// Simulates path `path` of `cfg` and records the squared error of the
/// reported estimate at every checkpoint.
pub fn simulate_path(model: &SimModel, cfg: &RunConfig, path: u64) -> PathResult {
    let marks = checkpoints(cfg.n_steps);
    let mut chain = path_rng(cfg.seed_base, path, STREAM_CHAIN);
    let mut coins = path_rng(cfg.seed_base, path, STREAM_COINS);
    let mut init_rng = path_rng(cfg.seed_base, path, STREAM_INIT);

    let alg = cfg.algorithm;
    let mode = alg.policy_mode();
    let mult = alg.step_multiplier();
    let mut theta_a = initial_parameter(model, &cfg.init, &mut init_rng);
    let mut theta_b = if alg.is_double() {
        theta_a.clone()
    } else {
        Vec::new()
    };

    let mut result = PathResult {
        path,
        squared_errors: Vec::with_capacity(marks.len()),
        diverged_at: None,
        a_updates: 0,
        b_updates: 0,
    };
    let mut next_mark = 0;
    let mut s = cfg.start_state;

    for n in 1..=cfg.n_steps {
        let a = model.sample_action(s, &mut chain);
        let x = model.pair(s, a);
        let s_next = model.sample_next(x, &mut chain);

        let step = if alg.is_double() {
            let beta = coins.random::<bool>();
            let count = if beta {
                result.a_updates += 1;
                result.a_updates
            } else {
                result.b_updates += 1;
                result.b_updates
            };
            let k = match cfg.step_counter {
                StepCounter::Global => n,
                StepCounter::PerEstimator => count,
            };
            let delta = mult * cfg.schedule.value(k);
            step_double_q(
                model,
                &mut theta_a,
                &mut theta_b,
                beta,
                x,
                s_next,
                delta,
                mode,
            )
        } else {
            result.a_updates += 1;
            step_q(
                model,
                &mut theta_a,
                x,
                s_next,
                mult * cfg.schedule.value(n),
                mode,
            )
        };
        if step.is_err() {
            result.diverged_at = Some(n);
            result.squared_errors.clear();
            return result;
        }

        if marks[next_mark] == n {
            let err = match alg.output() {
                Output::Single | Output::First => model.squared_error(theta_a.iter().copied()),
                Output::Average => {
                    model.squared_error(theta_a.iter().zip(&theta_b).map(|(a, b)| 0.5 * (a + b)))
                }
            };
            result.squared_errors.push(err);
            next_mark += 1;
        }

        s = if model.terminal[x] {
            cfg.start_state
        } else {
            s_next
        };
    }
    result
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointStat {
    pub n: u64,
    pub mse_mean: f64,
    pub mse_stderr: f64,
    pub n_times_mse: f64,
    /// Standard error of `n_times_mse`.
    pub n_times_stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseCurve {
    pub algorithm: Algorithm,
    pub checkpoints: Vec<CheckpointStat>,
    pub paths: usize,
    pub diverged_paths: usize,
    pub seed_base: u64,
}

impl MseCurve {
    /// Fails with `Diverged` when any path hit the divergence guard.
    pub fn check(&self) -> Result<&Self> {
        if self.diverged_paths > 0 {
            Err(Error::Diverged {
                diverged: self.diverged_paths,
                paths: self.paths,
            })
        } else {
            Ok(self)
        }
    }

    pub fn at(&self, n: u64) -> Option<&CheckpointStat> {
        self.checkpoints.iter().find(|c| c.n == n)
    }

    pub fn last(&self) -> Option<&CheckpointStat> {
        self.checkpoints.last()
    }
}

/// Mean and standard error across the non-diverged paths, summed in path
/// order.
pub fn aggregate(cfg: &RunConfig, results: &[PathResult]) -> MseCurve {
    let marks = checkpoints(cfg.n_steps);
    let kept: Vec<&PathResult> = results.iter().filter(|r| !r.diverged()).collect();
    let k = kept.len() as f64;
    let checkpoints = marks
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let (mean, se) = if kept.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let mean = kept.iter().map(|r| r.squared_errors[i]).sum::<f64>() / k;
                let se = if kept.len() > 1 {
                    let var = kept
                        .iter()
                        .map(|r| (r.squared_errors[i] - mean) * (r.squared_errors[i] - mean))
                        .sum::<f64>()
                        / (k - 1.0);
                    libm::sqrt(var / k)
                } else {
                    0.0
                };
                (mean, se)
            };
            CheckpointStat {
                n,
                mse_mean: mean,
                mse_stderr: se,
                n_times_mse: n as f64 * mean,
                n_times_stderr: n as f64 * se,
            }
        })
        .collect();
    MseCurve {
        algorithm: cfg.algorithm,
        checkpoints,
        paths: results.len(),
        diverged_paths: results.len() - kept.len(),
        seed_base: cfg.seed_base,
    }
}

/// Runs every path sequentially.
pub fn run_experiment(model: &SimModel, cfg: &RunConfig) -> Result<MseCurve> {
    cfg.validate(model)?;
    let results: Vec<PathResult> = (0..cfg.n_paths as u64)
        .map(|p| simulate_path(model, cfg, p))
        .collect();
    Ok(aggregate(cfg, &results))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxBiasConfig {
    pub episodes: usize,
    pub runs: usize,
    pub seed_base: u64,
    pub epsilon: f64,
    pub schedule: StepSchedule,
    pub discount: f64,
    pub step_counter: StepCounter,
}

impl Default for MaxBiasConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            runs: 1000,
            seed_base: 0,
            epsilon: 0.1,
            schedule: StepSchedule::Episodic {
                c: 10.0,
                offset: 100.0,
            },
            discount: 1.0,
            step_counter: StepCounter::Global,
        }
    }
}

impl MaxBiasConfig {
    pub fn validate(&self, algorithm: Algorithm) -> Result<()> {
        self.schedule.validate()?;
        if algorithm.is_linearized() {
            return Err(Error::Invalid(alloc::format!(
                "{algorithm} has no optimal parameter on the max-bias chain"
            )));
        }
        if self.runs == 0 {
            return Err(Error::Invalid("runs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Invalid("epsilon outside [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::Invalid("discount outside [0, 1]".into()));
        }
        Ok(())
    }
}

struct TabularQ {
    n_actions: usize,
    values: Vec<f64>,
}

impl TabularQ {
    fn q(&self, s: usize, a: usize) -> f64 {
        self.values[a + s * self.n_actions]
    }

    fn greedy(&self, s: usize) -> usize {
        let mut best = 0;
        for a in 1..self.n_actions {
            if self.q(s, a) > self.q(s, best) {
                best = a;
            }
        }
        best
    }
}

fn prefers_left(q_right: f64, q_left: f64) -> bool {
    q_left > q_right
}

/// One independent run on the max-bias chain. Entry `k` of the result is
/// whether the reported estimate prefers left at state 0 after `k`
/// episodes, so entry 0 is the untrained state.
pub fn max_bias_run(
    env: &MaxBiasEnv,
    algorithm: Algorithm,
    cfg: &MaxBiasConfig,
    run: u64,
) -> Vec<bool> {
    let ns = env.n_states();
    let na = env.n_actions();
    let mut moves = path_rng(cfg.seed_base, run, STREAM_CHAIN);
    let mut coins = path_rng(cfg.seed_base, run, STREAM_COINS);
    let mut rewards = path_rng(cfg.seed_base, run, STREAM_REWARD);
    let mut explore = path_rng(cfg.seed_base, run, STREAM_EXPLORE);

    let double = algorithm.is_double();
    let mult = algorithm.step_multiplier();
    let mut qa = TabularQ {
        n_actions: na,
        values: vec![0.0; ns * na],
    };
    let mut qb = TabularQ {
        n_actions: na,
        values: vec![0.0; if double { ns * na } else { 0 }],
    };
    let mut behave = TabularQ {
        n_actions: na,
        values: vec![0.0; ns * na],
    };
    let (mut count_a, mut count_b) = (0u64, 0u64);

    let report = |qa: &TabularQ, qb: &TabularQ| -> bool {
        match algorithm.output() {
            Output::Single | Output::First => {
                prefers_left(qa.q(0, MAX_BIAS_RIGHT), qa.q(0, MAX_BIAS_LEFT))
            }
            Output::Average => prefers_left(
                0.5 * (qa.q(0, MAX_BIAS_RIGHT) + qb.q(0, MAX_BIAS_RIGHT)),
                0.5 * (qa.q(0, MAX_BIAS_LEFT) + qb.q(0, MAX_BIAS_LEFT)),
            ),
        }
    };

    let mut out = Vec::with_capacity(cfg.episodes + 1);
    out.push(report(&qa, &qb));
    for episode in 1..=cfg.episodes as u64 {
        let alpha = mult * cfg.schedule.value(episode);
        let mut s = env.reset();
        loop {
            let behave_q = if double { &behave } else { &qa };
            let a = if explore.random::<f64>() < cfg.epsilon {
                explore.random_range(0..na)
            } else {
                behave_q.greedy(s)
            };
            let t = env.step(s, a, &mut moves, &mut rewards);
            let x = a + s * na;
            if double {
                let beta = coins.random::<bool>();
                let (upd, other, count) = if beta {
                    (&mut qa, &qb, &mut count_a)
                } else {
                    (&mut qb, &qa, &mut count_b)
                };
                *count += 1;
                let step = match cfg.step_counter {
                    StepCounter::Global => alpha,
                    StepCounter::PerEstimator => mult * cfg.schedule.value(*count),
                };
                let target = match t.next {
                    Some(sp) => t.reward + cfg.discount * other.q(sp, upd.greedy(sp)),
                    None => t.reward,
                };
                upd.values[x] += step * (target - upd.values[x]);
                behave.values[x] = 0.5 * (qa.values[x] + qb.values[x]);
            } else {
                let target = match t.next {
                    Some(sp) => t.reward + cfg.discount * qa.q(sp, qa.greedy(sp)),
                    None => t.reward,
                };
                qa.values[x] += alpha * (target - qa.values[x]);
            }
            match t.next {
                Some(sp) => s = sp,
                None => break,
            }
        }
        out.push(report(&qa, &qb));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxBiasCurve {
    pub algorithm: Algorithm,
    /// `p_left[k]` is the fraction of runs preferring left after `k` episodes.
    pub p_left: Vec<f64>,
    pub runs: usize,
    pub seed_base: u64,
}

/// Fraction of runs preferring left after each episode.
pub fn aggregate_max_bias(
    algorithm: Algorithm,
    cfg: &MaxBiasConfig,
    runs: &[Vec<bool>],
) -> MaxBiasCurve {
    let len = cfg.episodes + 1;
    let p_left = (0..len)
        .map(|k| runs.iter().filter(|r| r[k]).count() as f64 / runs.len() as f64)
        .collect();
    MaxBiasCurve {
        algorithm,
        p_left,
        runs: runs.len(),
        seed_base: cfg.seed_base,
    }
}

/// Mean of the per-run left-preference frequency over episodes
/// `first..=last`, and its run-to-run standard error.
pub fn window_mean(runs: &[Vec<bool>], first: usize, last: usize) -> (f64, f64) {
    let width = (last - first + 1) as f64;
    let per_run: Vec<f64> = runs
        .iter()
        .map(|r| r[first..=last].iter().filter(|&&b| b).count() as f64 / width)
        .collect();
    let k = per_run.len() as f64;
    let mean = per_run.iter().sum::<f64>() / k;
    let var = per_run.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0).max(1.0);
    (mean, libm::sqrt(var / k))
}

pub fn run_max_bias(
    env: &MaxBiasEnv,
    algorithm: Algorithm,
    cfg: &MaxBiasConfig,
) -> Result<MaxBiasCurve> {
    cfg.validate(algorithm)?;
    let runs: Vec<Vec<bool>> = (0..cfg.runs as u64)
        .map(|r| max_bias_run(env, algorithm, cfg, r))
        .collect();
    Ok(aggregate_max_bias(algorithm, cfg, &runs))
}

/// Names of all algorithms, for error messages and help text.
pub fn algorithm_names() -> String {
    let mut s = String::new();
    for (i, a) in Algorithm::ALL.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push_str(a.name());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_max_bias, MaxBiasSpec};
    use crate::mdp::pair_chain;
    use crate::solver::{solve_theta_star, GreedyPolicy};
    use nalgebra::DMatrix;

    fn self_loop(reward: f64, gamma: f64) -> SimModel {
        let mdp = TabularMdp::new(
            1,
            1,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, reward),
            gamma,
        )
        .unwrap();
        let features = FeatureMap::tabular(1, 1);
        let policy = BehaviorPolicy::uniform(1, 1);
        let solution = OptimalSolution {
            theta_star: DVector::from_element(1, reward / (1.0 - gamma)),
            pi_star: GreedyPolicy::from_actions(vec![0], 1),
            gap_omega: f64::INFINITY,
            policy_iterations: 1,
        };
        SimModel::new(&mdp, &features, &policy, &solution).unwrap()
    }

    #[test]
    fn single_q_step() {
        let m = self_loop(1.0, 0.5);
        let mut theta = vec![0.0];
        step_q(&m, &mut theta, 0, 0, 1.0, PolicyMode::Greedy).unwrap();
        assert_eq!(theta, vec![1.0]);
        step_q(&m, &mut theta, 0, 0, 0.0, PolicyMode::Greedy).unwrap();
        assert_eq!(theta, vec![1.0]);
    }

    #[test]
    fn double_gating() {
        let m = self_loop(1.0, 0.5);
        let (mut a, mut b) = (vec![0.3], vec![0.3]);
        step_double_q(&m, &mut a, &mut b, false, 0, 0, 0.5, PolicyMode::Greedy).unwrap();
        assert_eq!(a, vec![0.3]);
        assert_ne!(b, vec![0.3]);
    }

    #[test]
    fn alternating_coins_by_hand() {
        // R = 1, gamma = 1/2, constant step 1/2, forced coins A, B, A, B
        let m = self_loop(1.0, 0.5);
        let (mut a, mut b) = (vec![0.0], vec![0.0]);
        let expected = [
            (0.5, 0.0),
            (0.5, 0.625),
            (0.90625, 0.625),
            (0.90625, 1.0390625),
        ];
        for (k, &(ea, eb)) in expected.iter().enumerate() {
            step_double_q(
                &m,
                &mut a,
                &mut b,
                k % 2 == 0,
                0,
                0,
                0.5,
                PolicyMode::Greedy,
            )
            .unwrap();
            assert_eq!((a[0], b[0]), (ea, eb));
        }
    }

    #[test]
    fn alternating_coins_without_bootstrap_follow_single_estimator() {
        // with gamma = 0 each estimator sees the single-estimator map at
        // half the sample rate
        let m = self_loop(1.0, 0.0);
        let mut single = vec![0.2];
        let (mut a, mut b) = (vec![0.2], vec![0.2]);
        for k in 0..4 {
            let alpha = 1.0 / (k as f64 + 2.0);
            step_q(&m, &mut single, 0, 0, alpha, PolicyMode::Greedy).unwrap();
            step_double_q(&m, &mut a, &mut b, true, 0, 0, alpha, PolicyMode::Greedy).unwrap();
            step_double_q(&m, &mut a, &mut b, false, 0, 0, alpha, PolicyMode::Greedy).unwrap();
            assert_eq!(a, single);
            assert_eq!(b, single);
        }
    }

    #[test]
    fn divergence_is_flagged() {
        let m = self_loop(1.0, 0.5);
        let mut theta = vec![1e12];
        assert!(matches!(
            step_q(&m, &mut theta, 0, 0, 10.0, PolicyMode::Fixed),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn checkpoint_grid() {
        let c = checkpoints(100);
        assert_eq!(c, vec![10, 15, 23, 34, 51, 76, 100]);
        let c = checkpoints(1_000_000);
        assert!(c.contains(&10_000) && c.contains(&1_000_000));
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(checkpoints(5), vec![5]);
    }

    #[test]
    fn schedules() {
        assert_eq!(
            StepSchedule::GOverN {
                g: 3.0,
                offset: 0.0
            }
            .value(1),
            3.0
        );
        assert_eq!(
            StepSchedule::TwoGOverN {
                g: 3.0,
                offset: 0.0
            }
            .value(2),
            3.0
        );
        assert_eq!(
            StepSchedule::GOverN {
                g: 3.0,
                offset: 2.0
            }
            .value(1),
            1.0
        );
        assert_eq!(
            StepSchedule::Harmonic {
                c: 1000.0,
                offset: 10000.0
            }
            .value(0),
            0.1
        );
        assert!(StepSchedule::GOverN {
            g: 0.0,
            offset: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("DQ_thrice".parse::<Algorithm>().is_err());
    }

    #[test]
    fn zero_noise_model_has_zero_error() {
        let mdp = TabularMdp::new(
            2,
            2,
            DMatrix::from_element(4, 2, 0.5),
            DVector::zeros(4),
            0.9,
        )
        .unwrap();
        let features = FeatureMap::tabular(2, 2);
        let policy = BehaviorPolicy::uniform(2, 2);
        let chain = pair_chain(&mdp, &policy).unwrap();
        let sol = solve_theta_star(&mdp, &features, &chain, 1e-10, 50).unwrap();
        let model = SimModel::new(&mdp, &features, &policy, &sol).unwrap();
        for alg in Algorithm::ALL {
            let cfg = RunConfig {
                algorithm: alg,
                schedule: StepSchedule::GOverN {
                    g: 1.0,
                    offset: 0.0,
                },
                n_steps: 200,
                n_paths: 2,
                seed_base: 5,
                init: Init::Zero,
                start_state: 0,
                step_counter: StepCounter::Global,
            };
            let curve = run_experiment(&model, &cfg).unwrap();
            assert!(curve.checkpoints.iter().all(|c| c.mse_mean == 0.0));
        }
    }

    #[test]
    fn untrained_max_bias_prefers_right() {
        let env = build_max_bias(&MaxBiasSpec::new(8)).unwrap();
        let cfg = MaxBiasConfig {
            episodes: 0,
            runs: 3,
            ..Default::default()
        };
        for alg in Algorithm::NONLINEAR {
            let curve = run_max_bias(&env, alg, &cfg).unwrap();
            assert_eq!(curve.p_left, vec![0.0]);
        }
    }
}
