//! Experiment configuration: TOML with embedded defaults, dotted `--set`
//! overrides, and strict key checking.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use doubleq_core::env::{BairdReward, GridMode, SlipSemantics};
use doubleq_core::sim::{Algorithm, Init, StepCounter, StepSchedule};
use doubleq_core::suites::Suite;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out: String,
    /// Run the analyzer next to `simulate` when the model qualifies.
    pub analysis: bool,
    pub environment: Environment,
    pub simulation: Simulation,
    pub schedule: Schedule,
    pub gain: Gain,
    pub maxbias: MaxBias,
    pub verify: Verify,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out: "runs/default".into(),
            analysis: true,
            environment: Environment::default(),
            simulation: Simulation::default(),
            schedule: Schedule::default(),
            gain: Gain::default(),
            maxbias: MaxBias::default(),
            verify: Verify::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSetting {
    Zero,
    SmallRandom,
    LargeRandom,
}

impl From<RewardSetting> for BairdReward {
    fn from(r: RewardSetting) -> Self {
        match r {
            RewardSetting::Zero => BairdReward::Zero,
            RewardSetting::SmallRandom => BairdReward::SmallRandom,
            RewardSetting::LargeRandom => BairdReward::LargeRandom,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Episodic,
    Restart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slip {
    AnyDirection,
    OtherDirections,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Environment {
    Baird {
        #[serde(default = "baird_setting")]
        setting: RewardSetting,
        #[serde(default = "baird_seed")]
        seed: u64,
        #[serde(default = "baird_gamma")]
        gamma: f64,
    },
    Gridworld {
        #[serde(default = "grid_n")]
        n: usize,
        #[serde(default = "grid_slip")]
        slip: f64,
        #[serde(default = "grid_step_reward")]
        step_reward: f64,
        #[serde(default = "grid_goal_reward")]
        goal_reward: f64,
        #[serde(default = "grid_gamma")]
        gamma: f64,
        #[serde(default = "grid_mode")]
        mode: Mode,
        #[serde(default = "grid_slip_semantics")]
        slip_semantics: Slip,
    },
    Maxbias {
        #[serde(default = "maxbias_m")]
        m: usize,
        #[serde(default = "maxbias_mean")]
        reward_mean: f64,
        #[serde(default = "maxbias_sd")]
        reward_sd: f64,
    },
    /// Seeded random tabular model with a uniform behavior policy.
    Random {
        #[serde(default = "random_states")]
        n_states: usize,
        #[serde(default = "random_actions")]
        n_actions: usize,
        #[serde(default = "baird_gamma")]
        gamma: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "random_min_gap")]
        min_gap: f64,
    },
}

fn baird_setting() -> RewardSetting {
    RewardSetting::SmallRandom
}
fn baird_seed() -> u64 {
    7
}
fn baird_gamma() -> f64 {
    0.8
}
fn grid_n() -> usize {
    3
}
fn grid_slip() -> f64 {
    0.3
}
fn grid_step_reward() -> f64 {
    -1e-3
}
fn grid_goal_reward() -> f64 {
    1.0
}
fn grid_gamma() -> f64 {
    0.9
}
fn grid_mode() -> Mode {
    Mode::Restart
}
fn grid_slip_semantics() -> Slip {
    Slip::AnyDirection
}
fn maxbias_m() -> usize {
    8
}
fn maxbias_mean() -> f64 {
    -0.1
}
fn maxbias_sd() -> f64 {
    1.0
}
fn random_states() -> usize {
    3
}
fn random_actions() -> usize {
    2
}
fn random_min_gap() -> f64 {
    1e-6
}

impl Default for Environment {
    fn default() -> Self {
        Self::Baird {
            setting: baird_setting(),
            seed: baird_seed(),
            gamma: baird_gamma(),
        }
    }
}

impl Environment {
    /// Short name used in output file names.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Baird { .. } => "baird",
            Self::Gridworld { .. } => "gridworld",
            Self::Maxbias { .. } => "maxbias",
            Self::Random { .. } => "random",
        }
    }

    pub fn grid_mode(mode: Mode) -> GridMode {
        match mode {
            Mode::Episodic => GridMode::Episodic,
            Mode::Restart => GridMode::Restart,
        }
    }

    pub fn slip_semantics(slip: Slip) -> SlipSemantics {
        match slip {
            Slip::AnyDirection => SlipSemantics::AnyDirection,
            Slip::OtherDirections => SlipSemantics::OtherDirections,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Zero,
    Uniform02,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Counter {
    Global,
    PerEstimator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Simulation {
    pub algorithms: Vec<String>,
    pub n_steps: u64,
    pub n_paths: usize,
    pub seed_base: u64,
    pub init: InitKind,
    pub start_state: usize,
    pub step_counter: Counter,
}

impl Default for Simulation {
    fn default() -> Self {
        Self {
            algorithms: ["Q", "DQ", "DQ_twice", "DQ_avg_twice"]
                .map(String::from)
                .to_vec(),
            n_steps: 1_000_000,
            n_paths: 100,
            seed_base: 0,
            init: InitKind::Uniform02,
            start_state: 0,
            step_counter: Counter::Global,
        }
    }
}

impl Simulation {
    pub fn algorithms(&self) -> Result<Vec<Algorithm>> {
        if self.algorithms.is_empty() {
            bail!("simulation.algorithms is empty");
        }
        self.algorithms
            .iter()
            .map(|a| {
                a.parse::<Algorithm>().map_err(|_| {
                    anyhow!(
                        "unknown algorithm {a:?} (expected one of {})",
                        doubleq_core::sim::algorithm_names()
                    )
                })
            })
            .collect()
    }

    pub fn init(&self) -> Init {
        match self.init {
            InitKind::Zero => Init::Zero,
            InitKind::Uniform02 => Init::Uniform02,
        }
    }

    pub fn step_counter(&self) -> StepCounter {
        match self.step_counter {
            Counter::Global => StepCounter::Global,
            Counter::PerEstimator => StepCounter::PerEstimator,
        }
    }
}

/// Step sizes `c / (n + offset)`. For `g_over_n` and `two_g_over_n` the
/// constant is the gain of the `[gain]` table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Harmonic,
    GOverN,
    TwoGOverN,
    Episodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub c: f64,
    pub offset: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Harmonic,
            c: 1000.0,
            offset: 10_000.0,
        }
    }
}

impl Schedule {
    /// Resolves the schedule; `gain` is needed only for the gain-driven kinds.
    pub fn resolve(&self, gain: Option<f64>) -> Result<StepSchedule> {
        let need =
            || gain.ok_or_else(|| anyhow!("schedule {:?} needs the analyzer's g0", self.kind));
        Ok(match self.kind {
            ScheduleKind::Harmonic => StepSchedule::Harmonic {
                c: self.c,
                offset: self.offset,
            },
            ScheduleKind::Episodic => StepSchedule::Episodic {
                c: self.c,
                offset: self.offset,
            },
            ScheduleKind::GOverN => StepSchedule::GOverN {
                g: need()?,
                offset: self.offset,
            },
            ScheduleKind::TwoGOverN => StepSchedule::TwoGOverN {
                g: need()?,
                offset: self.offset,
            },
        })
    }

    pub fn needs_gain(&self) -> bool {
        matches!(self.kind, ScheduleKind::GOverN | ScheduleKind::TwoGOverN)
    }
}

/// `g` for the analyzer and gain-driven schedules: `value` if set, else
/// `factor * g0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gain {
    pub factor: f64,
    pub value: Option<f64>,
}

impl Default for Gain {
    fn default() -> Self {
        Self {
            factor: 2.0,
            value: None,
        }
    }
}

impl Gain {
    pub fn resolve(&self, g0: f64) -> f64 {
        self.value.unwrap_or(self.factor * g0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaxBias {
    pub episodes: usize,
    pub runs: usize,
    pub epsilon: f64,
    pub discount: f64,
}

impl Default for MaxBias {
    fn default() -> Self {
        Self {
            episodes: 200,
            runs: 1000,
            epsilon: 0.1,
            discount: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Verify {
    pub suite: String,
    pub trials: usize,
    pub seed: u64,
    /// Steps and paths per model of the `bridge` suite.
    pub bridge_steps: u64,
    pub bridge_paths: usize,
}

impl Default for Verify {
    fn default() -> Self {
        Self {
            suite: "theorem2".into(),
            trials: 100,
            seed: 0,
            bridge_steps: 1_000_000,
            bridge_paths: 200,
        }
    }
}

impl Verify {
    pub fn suite(&self) -> Result<Suite> {
        Suite::parse(&self.suite).ok_or_else(|| {
            let names: Vec<_> = Suite::ALL.iter().map(|s| s.name()).collect();
            anyhow!(
                "unknown suite {:?} (expected one of {})",
                self.suite,
                names.join(", ")
            )
        })
    }
}

/// Parses the right-hand side of `--set` as a TOML value, falling back to a
/// bare string.
fn parse_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Applies `key.path=value` to `table`. Changing a `kind` tag drops the
/// sibling keys of the old variant.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not of the form key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key {key:?} is malformed");
    }
    let value = parse_value(raw.trim());
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override key {key:?}: {p:?} is not a table"))?;
    }
    let last = parts[parts.len() - 1];
    if last == "kind" && cur.get("kind") != Some(&value) {
        cur.clear();
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Reads `path` (or the defaults when `None`) and applies overrides.
    pub fn load(path: Option<&std::path::Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                toml::from_str::<Table>(&text)
                    .with_context(|| format!("parsing {}", p.display()))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation.algorithms()?;
        self.verify.suite()?;
        if self.simulation.n_paths == 0 || self.simulation.n_steps == 0 {
            bail!("simulation.n_paths and simulation.n_steps must be positive");
        }
        if self.gain.factor.is_nan()
            || self.gain.factor <= 0.0
            || self.gain.value.is_some_and(|g| g.is_nan() || g <= 0.0)
        {
            bail!("gain must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}
