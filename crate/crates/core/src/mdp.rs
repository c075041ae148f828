//! Finite MDPs, behavior policies, feature maps, and the Markov chains they
//! induce over state-action pairs `X = S x A` and transitions `Z = (X, S')`.
//!
//! Pair index convention: the pair `(s, a)` lives at index `a + s * n_actions`.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{ErgodicityFailure, Error, Result};
use crate::linalg;

/// Row sums of every probability table must match one this closely.
pub const PROBABILITY_TOL: f64 = 1e-12;

/// Default residual tolerance for stationary distributions.
pub const STATIONARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `|X| x |S|`, row `(s, a)` is the next-state distribution.
    transition: DMatrix<f64>,
    /// Pair-indexed reward `R(s, a)`.
    reward: DVector<f64>,
    discount: f64,
    /// Pairs whose transition ends an episode: the target does not bootstrap.
    terminal: Vec<bool>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: DMatrix<f64>,
        reward: DVector<f64>,
        discount: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Invalid(
                "MDP needs at least one state and one action".into(),
            ));
        }
        let n_pairs = n_states * n_actions;
        if transition.shape() != (n_pairs, n_states) {
            return Err(Error::DimensionMismatch(format!(
                "transition is {:?}, expected ({n_pairs}, {n_states})",
                transition.shape()
            )));
        }
        if reward.len() != n_pairs {
            return Err(Error::DimensionMismatch(format!(
                "reward has {} entries, expected {n_pairs}",
                reward.len()
            )));
        }
        if !linalg::is_row_stochastic(&transition, PROBABILITY_TOL) {
            return Err(Error::Invalid(
                "transition rows must be distributions".into(),
            ));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::Invalid(format!(
                "discount {discount} outside [0, 1)"
            )));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Invalid("rewards must be finite".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            discount,
            terminal: vec![false; n_pairs],
        })
    }

    /// Builds an MDP from tables indexed `[s][a][s']` and `[s][a]`.
    pub fn from_tables(
        transition: &[Vec<Vec<f64>>],
        reward: &[Vec<f64>],
        discount: f64,
    ) -> Result<Self> {
        let n_states = transition.len();
        let n_actions = transition.first().map_or(0, Vec::len);
        if reward.len() != n_states || reward.iter().any(|r| r.len() != n_actions) {
            return Err(Error::DimensionMismatch("reward table shape".into()));
        }
        let n_pairs = n_states * n_actions;
        let mut p = DMatrix::zeros(n_pairs, n_states);
        for (s, per_action) in transition.iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(Error::DimensionMismatch(format!("state {s} action count")));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::DimensionMismatch(format!("row ({s}, {a}) length")));
                }
                for (sp, &v) in row.iter().enumerate() {
                    p[(a + s * n_actions, sp)] = v;
                }
            }
        }
        let r = DVector::from_iterator(n_pairs, reward.iter().flatten().copied());
        Self::new(n_states, n_actions, p, r, discount)
    }

    /// Marks pairs as episode-ending. Their recorded next state is where the
    /// following episode starts.
    pub fn with_terminal(mut self, terminal: Vec<bool>) -> Result<Self> {
        if terminal.len() != self.n_pairs() {
            return Err(Error::DimensionMismatch("terminal flags".into()));
        }
        self.terminal = terminal;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn pair_index(&self, s: usize, a: usize) -> usize {
        a + s * self.n_actions
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(self.pair_index(s, a), next)]
    }

    pub fn reward(&self) -> &DVector<f64> {
        &self.reward
    }

    pub fn reward_at(&self, s: usize, a: usize) -> f64 {
        self.reward[self.pair_index(s, a)]
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn terminal(&self) -> &[bool] {
        &self.terminal
    }

    pub fn is_terminal(&self, pair: usize) -> bool {
        self.terminal[pair]
    }

    /// Bootstrapping weight of a pair: zero when its transition ends the episode.
    pub fn continuation(&self, pair: usize) -> f64 {
        if self.terminal[pair] {
            0.0
        } else {
            1.0
        }
    }
}

/// Fixed exploration policy `mu_b(a | s)`, one row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorPolicy {
    probs: DMatrix<f64>,
}

impl BehaviorPolicy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_row_stochastic(&probs, PROBABILITY_TOL) {
            return Err(Error::Invalid("behavior rows must be distributions".into()));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }
}

/// Linear features: column `x` of `phi` is `phi(s, a)` for pair index `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    n_states: usize,
    n_actions: usize,
    phi: DMatrix<f64>,
}

impl FeatureMap {
    pub fn new(n_states: usize, n_actions: usize, phi: DMatrix<f64>) -> Result<Self> {
        if phi.ncols() != n_states * n_actions {
            return Err(Error::DimensionMismatch(format!(
                "feature matrix has {} columns, expected {}",
                phi.ncols(),
                n_states * n_actions
            )));
        }
        if phi.nrows() == 0 || phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("features must be finite with d >= 1".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            phi,
        })
    }

    /// Identity features of size `|X|`.
    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        let n = n_states * n_actions;
        Self {
            n_states,
            n_actions,
            phi: DMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn feature(&self, pair: usize) -> DVector<f64> {
        self.phi.column(pair).into_owned()
    }

    /// `phi(pair)^T theta`.
    pub fn value(&self, pair: usize, theta: &DVector<f64>) -> f64 {
        self.phi.column(pair).dot(theta)
    }

    pub fn check_compatible(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states() || self.n_actions != mdp.n_actions() {
            return Err(Error::DimensionMismatch(
                "feature map does not match the MDP".into(),
            ));
        }
        Ok(())
    }
}

/// The chain `{(S_n, A_n)}` generated by an MDP under a behavior policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PairChain {
    pub transition_x: DMatrix<f64>,
    pub stationary_x: DVector<f64>,
    pub diag_d: DMatrix<f64>,
    pub policy: BehaviorPolicy,
}

impl PairChain {
    pub fn mu_min(&self) -> f64 {
        self.stationary_x.min()
    }
}

/// The lifted chain over `z = ((s, a), s')` restricted to transitions with
/// positive probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ZChain {
    /// `(pair index, next state)` per z-state.
    pub states: Vec<(usize, usize)>,
    pub transition_z: DMatrix<f64>,
    pub stationary_z: DVector<f64>,
}

impl ZChain {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// `P_X((s,a),(s',a')) = P((s,a),s') mu_b(a'|s')`, with its stationary law.
pub fn pair_chain(mdp: &TabularMdp, policy: &BehaviorPolicy) -> Result<PairChain> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch(
            "behavior policy does not match the MDP".into(),
        ));
    }
    let n = mdp.n_pairs();
    let na = mdp.n_actions();
    let mut px = DMatrix::zeros(n, n);
    for x in 0..n {
        for sp in 0..mdp.n_states() {
            let p = mdp.transition()[(x, sp)];
            if p == 0.0 {
                continue;
            }
            for ap in 0..na {
                px[(x, ap + sp * na)] = p * policy.prob(sp, ap);
            }
        }
    }
    let mu = stationary_distribution(&px, STATIONARY_TOL)?;
    let diag_d = DMatrix::from_diagonal(&mu);
    Ok(PairChain {
        transition_x: px,
        stationary_x: mu,
        diag_d,
        policy: policy.clone(),
    })
}

/// Stationary distribution of an irreducible, aperiodic chain.
///
/// Solves `(P^T - I) mu = 0` with the last balance equation replaced by
/// `sum(mu) = 1`. Irreducibility and the period are checked on the support
/// graph before solving.
pub fn stationary_distribution(p: &DMatrix<f64>, tol: f64) -> Result<DVector<f64>> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(Error::DimensionMismatch(
            "transition matrix must be square".into(),
        ));
    }
    if !linalg::is_row_stochastic(p, 1e-10) {
        return Err(Error::Invalid(
            "transition matrix is not row-stochastic".into(),
        ));
    }
    check_ergodic(p)?;

    let mut system = p.transpose() - DMatrix::identity(n, n);
    system.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let mu = system
        .lu()
        .solve(&rhs)
        .ok_or(Error::NotErgodic(ErgodicityFailure::Singular))?;

    let residual = linalg::max_abs_vec(&(p.transpose() * &mu - &mu));
    if !(residual <= tol) || mu.iter().any(|&v| v < -tol) {
        return Err(Error::NotErgodic(ErgodicityFailure::Singular));
    }
    // clip rounding noise, then renormalise
    let mu = mu.map(|v| v.max(0.0));
    let total = mu.sum();
    Ok(mu / total)
}

fn check_ergodic(p: &DMatrix<f64>) -> Result<()> {
    let n = p.nrows();
    let succ: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| p[(i, j)] > 0.0).collect())
        .collect();
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, out) in succ.iter().enumerate() {
        for &j in out {
            pred[j].push(i);
        }
    }
    let forward = bfs_levels(&succ);
    let backward = bfs_levels(&pred);
    if forward.iter().chain(backward.iter()).any(Option::is_none) {
        return Err(Error::NotErgodic(ErgodicityFailure::Reducible));
    }
    // period = gcd over edges u -> v of level(u) + 1 - level(v)
    let mut period = 0usize;
    for (u, out) in succ.iter().enumerate() {
        let lu = forward[u].unwrap_or_default();
        for &v in out {
            let lv = forward[v].unwrap_or_default();
            period = gcd(period, (lu + 1).abs_diff(lv));
        }
    }
    if period != 1 {
        return Err(Error::NotErgodic(ErgodicityFailure::Periodic(period)));
    }
    Ok(())
}

fn bfs_levels(adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    let mut queue = VecDeque::new();
    level[0] = Some(0);
    queue.push_back(0);
    while let Some(u) = queue.pop_front() {
        let next = level[u].unwrap_or_default() + 1;
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(next);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Lifts a pair chain to `Z_n = (X_n, S_{n+1})`.
pub fn z_chain(pc: &PairChain, mdp: &TabularMdp) -> Result<ZChain> {
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let n_pairs = mdp.n_pairs();
    if pc.stationary_x.len() != n_pairs {
        return Err(Error::DimensionMismatch(
            "pair chain does not match the MDP".into(),
        ));
    }
    let p = mdp.transition();
    let mut states = Vec::new();
    let mut index = vec![usize::MAX; n_pairs * ns];
    for x in 0..n_pairs {
        for sp in 0..ns {
            if p[(x, sp)] > 0.0 {
                index[x * ns + sp] = states.len();
                states.push((x, sp));
            }
        }
    }
    let nz = states.len();
    let mut pz = DMatrix::zeros(nz, nz);
    for (i, &(_, sp)) in states.iter().enumerate() {
        for ap in 0..na {
            let w = pc.policy.prob(sp, ap);
            if w == 0.0 {
                continue;
            }
            let xp = ap + sp * na;
            for spp in 0..ns {
                let j = index[xp * ns + spp];
                if j != usize::MAX {
                    pz[(i, j)] = w * p[(xp, spp)];
                }
            }
        }
    }
    let stationary_z = stationary_distribution(&pz, STATIONARY_TOL)?;
    Ok(ZChain {
        states,
        transition_z: pz,
        stationary_z,
    })
}
