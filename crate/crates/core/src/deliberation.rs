//! Urgency-aware deliberation: pick how long to think when thinking costs
//! wall-clock time. Single-task and sequential variants, each under EP
//! semantics (deliberation advances the global clock) or Step semantics
//! (deliberation is instantaneous).

use serde::{Deserialize, Serialize};

use crate::ep::{
    AdmissibilityError, AtomicAction, InterventionSet, ObservationSet, Tick, UtilityEvent,
    UtilityTag,
};
use crate::episode::EngagementProcess;
use crate::rng::EpisodeStreams;

/// Urgency-bucket edges in seconds of remaining slack: the midpoints between
/// adjacent single-task slack choices, so the single-task bucket equals the
/// slack-choice index.
pub const URGENCY_EDGES_S: [f64; 4] = [0.65, 1.5, 3.0, 6.0];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeliberationConfig {
    pub mode_durations_s: [f64; 5],
    pub mode_alphas: [f64; 5],
    pub beta: f64,
    pub slack_choices_s: [f64; 5],
    pub deadline_gaps_s: [f64; 5],
    pub difficulty_bin_edges: [f64; 2],
    pub reward_success: f64,
    pub penalty_fail: f64,
    pub tasks_per_episode: usize,
    pub gamma_second: f64,
    pub gamma_task: f64,
    pub ticks_per_second: u32,
}

impl Default for DeliberationConfig {
    fn default() -> Self {
        Self::single_task()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeliberationConfigError {
    #[error("mode durations must be strictly increasing")]
    Durations,
    #[error("mode alphas must be strictly increasing")]
    Alphas,
    #[error("difficulty bin edges must be increasing and inside (0,1)")]
    BinEdges,
    #[error("ticks_per_second must be positive")]
    TickRate,
    #[error("tasks_per_episode must be positive")]
    Tasks,
    #[error("mode index {0} out of range 1..=5")]
    Mode(usize),
}

impl DeliberationConfig {
    pub fn single_task() -> Self {
        Self {
            mode_durations_s: [0.2, 0.8, 1.6, 3.0, 5.0],
            mode_alphas: [0.0, 0.8, 1.6, 2.4, 3.2],
            beta: 3.5,
            slack_choices_s: [0.3, 1.0, 2.0, 4.0, 8.0],
            deadline_gaps_s: [0.4, 0.9, 1.6, 3.5, 5.5],
            difficulty_bin_edges: [0.33, 0.66],
            reward_success: 4.0,
            penalty_fail: -2.0,
            tasks_per_episode: 1,
            gamma_second: 1.0,
            gamma_task: 1.0,
            ticks_per_second: 10,
        }
    }

    pub fn sequential() -> Self {
        Self {
            tasks_per_episode: 10,
            gamma_second: 0.995,
            gamma_task: 0.95,
            ..Self::single_task()
        }
    }

    pub fn validate(&self) -> Result<(), DeliberationConfigError> {
        if !self.mode_durations_s.windows(2).all(|w| w[0] < w[1]) {
            return Err(DeliberationConfigError::Durations);
        }
        if !self.mode_alphas.windows(2).all(|w| w[0] < w[1]) {
            return Err(DeliberationConfigError::Alphas);
        }
        let [lo, hi] = self.difficulty_bin_edges;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(DeliberationConfigError::BinEdges);
        }
        if self.ticks_per_second == 0 {
            return Err(DeliberationConfigError::TickRate);
        }
        if self.tasks_per_episode == 0 {
            return Err(DeliberationConfigError::Tasks);
        }
        Ok(())
    }

    pub fn duration_ticks(&self, mode0: usize) -> u32 {
        (self.mode_durations_s[mode0] * self.ticks_per_second as f64).round() as u32
    }

    fn seconds_to_ticks(&self, s: f64) -> u32 {
        (s * self.ticks_per_second as f64).round() as u32
    }
}

/// Probability that deliberating in `mode` (1-based) solves a task of
/// difficulty `u`: the logistic value of `alpha_mode - beta * u`.
pub fn success_prob(
    mode: usize,
    u: f64,
    cfg: &DeliberationConfig,
) -> Result<f64, DeliberationConfigError> {
    if !(1..=5).contains(&mode) {
        return Err(DeliberationConfigError::Mode(mode));
    }
    Ok(sigmoid(cfg.mode_alphas[mode - 1] - cfg.beta * u))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Whether the clock runs while the agent deliberates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantics {
    Ep,
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    SingleTask,
    Sequential,
}

#[derive(Debug, Clone)]
struct TaskSpec {
    deadline_ticks: u32,
    difficulty: f64,
    /// One uniform draw per mode; success iff the draw is under that mode's
    /// success probability. Independent draws keep the modes uncorrelated.
    success_draws: [f64; 5],
    /// For single-task: the index of the chosen slack value.
    #[cfg_attr(not(test), allow(dead_code))]
    slack_choice: usize,
}

#[derive(Debug, Clone)]
pub struct DeliberationState {
    clock_ticks: u32,
    current_task: usize,
    tasks: Vec<TaskSpec>,
    /// Mode being deliberated and the ticks still needed; `remaining == 0`
    /// means the deliberation just finished and this tick announces the
    /// outcome. Never set under Step semantics.
    pending: Option<(usize, u32)>,
    successes: u32,
    failures: u32,
    timeouts: u32,
    mode_counts: [u32; 5],
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Outcome {
    Success,
    Fail,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DelibPhase {
    /// Awaiting a mode selection for the current task.
    Deciding { urgency_bucket: u8, difficulty_bin: u8 },
    Deliberating { mode: usize, remaining: u32 },
    /// Deliberation finished this tick; the outcome is charged here.
    Resolving { mode: usize },
    /// Current task's deadline passed before it was reached.
    Expired,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelibAnnotation {
    pub clock_s: f64,
    pub task: usize,
    pub phase: DelibPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelibObs {
    pub task: usize,
    pub urgency_bucket: u8,
    pub difficulty_bin: u8,
}

pub struct DeliberationEnv {
    cfg: DeliberationConfig,
    semantics: Semantics,
    variant: Variant,
    horizon: u32,
}

/// One episode, one task, slack drawn from the configured choices.
pub fn make_single_task_env(cfg: DeliberationConfig, semantics: Semantics) -> DeliberationEnv {
    let mut cfg = cfg;
    cfg.tasks_per_episode = 1;
    let horizon = delib_horizon(&cfg, semantics);
    DeliberationEnv { cfg, semantics, variant: Variant::SingleTask, horizon }
}

/// Fixed chain of tasks with absolute deadlines spaced by sampled gaps.
pub fn make_sequential_env(cfg: DeliberationConfig, semantics: Semantics) -> DeliberationEnv {
    let horizon = delib_horizon(&cfg, semantics);
    DeliberationEnv { cfg, semantics, variant: Variant::Sequential, horizon }
}

fn delib_horizon(cfg: &DeliberationConfig, semantics: Semantics) -> u32 {
    let tasks = cfg.tasks_per_episode as u32;
    match semantics {
        // Decide + deliberate + resolution announcement per task, plus slack.
        Semantics::Ep => tasks * (cfg.duration_ticks(4) + 2) + 2,
        Semantics::Step => tasks + 1,
    }
}

impl DeliberationEnv {
    pub fn cfg(&self) -> &DeliberationConfig {
        &self.cfg
    }

    pub fn semantics(&self) -> Semantics {
        self.semantics
    }

    fn urgency_bucket(&self, remaining_slack_ticks: u32) -> u8 {
        let slack_s = remaining_slack_ticks as f64 / self.cfg.ticks_per_second as f64;
        URGENCY_EDGES_S.iter().filter(|&&e| slack_s >= e).count() as u8
    }

    fn difficulty_bin(&self, u: f64) -> u8 {
        let [lo, hi] = self.cfg.difficulty_bin_edges;
        if u < lo {
            0
        } else if u < hi {
            1
        } else {
            2
        }
    }

    fn phase(&self, s: &DeliberationState) -> DelibPhase {
        if s.current_task >= s.tasks.len() {
            return DelibPhase::Done;
        }
        if let Some((mode, remaining)) = s.pending {
            return if remaining == 0 {
                DelibPhase::Resolving { mode }
            } else {
                DelibPhase::Deliberating { mode, remaining }
            };
        }
        let task = &s.tasks[s.current_task];
        if s.clock_ticks > task.deadline_ticks {
            return DelibPhase::Expired;
        }
        DelibPhase::Deciding {
            urgency_bucket: self.urgency_bucket(task.deadline_ticks - s.clock_ticks),
            difficulty_bin: self.difficulty_bin(task.difficulty),
        }
    }

    /// Outcome of the current task given that `mode0` resolves at
    /// `resolution_clock` ticks.
    fn outcome(&self, s: &DeliberationState, mode0: usize, resolution_clock: u32) -> Outcome {
        let task = &s.tasks[s.current_task];
        if resolution_clock > task.deadline_ticks {
            return Outcome::Timeout;
        }
        let p = sigmoid(self.cfg.mode_alphas[mode0] - self.cfg.beta * task.difficulty);
        if task.success_draws[mode0] < p {
            Outcome::Success
        } else {
            Outcome::Fail
        }
    }

    /// Reward scale for the current task: `gamma_second^clock_s *
    /// gamma_task^k` with k the 0-based task index. Applied to penalties as
    /// well as rewards.
    fn discount(&self, s: &DeliberationState) -> f64 {
        let clock_s = s.clock_ticks as f64 / self.cfg.ticks_per_second as f64;
        self.cfg.gamma_second.powf(clock_s) * self.cfg.gamma_task.powi(s.current_task as i32)
    }

    fn outcome_events(&self, outcome: Outcome, scale: f64, tick: Tick) -> Vec<UtilityEvent> {
        match outcome {
            Outcome::Success => vec![UtilityEvent::new(
                scale * self.cfg.reward_success,
                tick,
                UtilityTag::TaskReward,
            )],
            Outcome::Fail | Outcome::Timeout => vec![UtilityEvent::new(
                scale * self.cfg.penalty_fail,
                tick,
                UtilityTag::Penalty,
            )],
        }
    }

    fn apply_outcome(&self, s: &mut DeliberationState, outcome: Outcome) {
        match outcome {
            Outcome::Success => s.successes += 1,
            Outcome::Fail => s.failures += 1,
            Outcome::Timeout => s.timeouts += 1,
        }
        s.current_task += 1;
        s.pending = None;
    }
}

/// Zero-based index of the mode a decision selected, if the set holds one.
pub fn selected_mode(set: &InterventionSet) -> Option<usize> {
    let a = set.get("select_mode")?;
    match a.args.first() {
        Some(&m) if (0..MODES as i64).contains(&m) => Some(m as usize),
        _ => None,
    }
}

impl EngagementProcess for DeliberationEnv {
    type State = DeliberationState;
    type Obs = DelibObs;
    type Annotation = DelibAnnotation;

    fn name(&self) -> &'static str {
        match (self.variant, self.semantics) {
            (Variant::SingleTask, Semantics::Ep) => "deliberation-single-ep",
            (Variant::SingleTask, Semantics::Step) => "deliberation-single-step",
            (Variant::Sequential, Semantics::Ep) => "deliberation-sequential-ep",
            (Variant::Sequential, Semantics::Step) => "deliberation-sequential-step",
        }
    }

    fn initial(&self, streams: &mut EpisodeStreams) -> DeliberationState {
        use rand::Rng;
        let rng = &mut streams.init;
        let mut tasks = Vec::with_capacity(self.cfg.tasks_per_episode);
        let mut cumulative_ticks = 0u32;
        for _ in 0..self.cfg.tasks_per_episode {
            let (deadline_ticks, slack_choice) = match self.variant {
                Variant::SingleTask => {
                    let i = rng.random_range(0..5);
                    (self.cfg.seconds_to_ticks(self.cfg.slack_choices_s[i]), i)
                }
                Variant::Sequential => {
                    let i = rng.random_range(0..5);
                    cumulative_ticks += self.cfg.seconds_to_ticks(self.cfg.deadline_gaps_s[i]);
                    (cumulative_ticks, i)
                }
            };
            let difficulty: f64 = rng.random();
            let success_draws = std::array::from_fn(|_| rng.random());
            tasks.push(TaskSpec { deadline_ticks, difficulty, success_draws, slack_choice });
        }
        DeliberationState {
            clock_ticks: 0,
            current_task: 0,
            tasks,
            pending: None,
            successes: 0,
            failures: 0,
            timeouts: 0,
            mode_counts: [0; 5],
        }
    }

    fn horizon(&self) -> u32 {
        self.horizon
    }

    fn check_admissible(
        &self,
        state: &DeliberationState,
        set: &InterventionSet,
    ) -> Result<(), AdmissibilityError> {
        match self.phase(state) {
            DelibPhase::Deciding { .. } => {
                if set.len() == 1 && selected_mode(set).is_some() {
                    Ok(())
                } else {
                    let id = set
                        .actions()
                        .first()
                        .map(|a| a.id.clone())
                        .unwrap_or_else(|| "{}".to_string());
                    Err(AdmissibilityError::NotAdmissible(id))
                }
            }
            _ => {
                if set.is_empty() {
                    Ok(())
                } else {
                    Err(AdmissibilityError::NotAdmissible(
                        set.actions()[0].id.clone(),
                    ))
                }
            }
        }
    }

    fn admissible_sets(&self, state: &DeliberationState) -> Vec<InterventionSet> {
        match self.phase(state) {
            DelibPhase::Deciding { .. } => mode_menu(),
            _ => vec![InterventionSet::empty()],
        }
    }

    fn utility(
        &self,
        state: &DeliberationState,
        set: &InterventionSet,
        tick: Tick,
    ) -> Vec<UtilityEvent> {
        match self.phase(state) {
            DelibPhase::Deciding { .. } => {
                if self.semantics == Semantics::Step {
                    // Instantaneous deliberation: outcome lands on the
                    // selection tick and the clock never moves.
                    let m = selected_mode(set).expect("admissibility checked");
                    let outcome = self.outcome(state, m, state.clock_ticks);
                    self.outcome_events(outcome, self.discount(state), tick)
                } else {
                    Vec::new()
                }
            }
            DelibPhase::Resolving { mode } => {
                let outcome = self.outcome(state, mode, state.clock_ticks);
                self.outcome_events(outcome, self.discount(state), tick)
            }
            DelibPhase::Expired => self.outcome_events(
                Outcome::Timeout,
                self.discount(state),
                tick,
            ),
            _ => Vec::new(),
        }
    }

    fn transition(
        &self,
        state: &DeliberationState,
        set: &InterventionSet,
        _streams: &mut EpisodeStreams,
    ) -> DeliberationState {
        let mut s = state.clone();
        match self.phase(state) {
            DelibPhase::Deciding { .. } => {
                let m = selected_mode(set).expect("admissibility checked");
                s.mode_counts[m] += 1;
                match self.semantics {
                    Semantics::Step => {
                        let outcome = self.outcome(state, m, state.clock_ticks);
                        self.apply_outcome(&mut s, outcome);
                        return s; // clock frozen
                    }
                    Semantics::Ep => {
                        // The selection tick is the first deliberation tick.
                        s.pending = Some((m, self.cfg.duration_ticks(m) - 1));
                    }
                }
            }
            DelibPhase::Deliberating { mode, remaining } => {
                s.pending = Some((mode, remaining - 1));
            }
            DelibPhase::Resolving { mode } => {
                let outcome = self.outcome(state, mode, state.clock_ticks);
                self.apply_outcome(&mut s, outcome);
            }
            DelibPhase::Expired => {
                s.timeouts += 1;
                s.current_task += 1;
            }
            DelibPhase::Done => {}
        }
        if self.semantics == Semantics::Ep {
            s.clock_ticks += 1;
        }
        s
    }

    fn observe(
        &self,
        state: &DeliberationState,
        tick: Tick,
        _streams: &mut EpisodeStreams,
    ) -> ObservationSet<DelibObs> {
        let mut out = ObservationSet::empty();
        if let DelibPhase::Deciding { urgency_bucket, difficulty_bin } = self.phase(state) {
            out.push(
                "task_ready",
                DelibObs { task: state.current_task, urgency_bucket, difficulty_bin },
                tick,
            );
        }
        out
    }

    fn terminal(&self, state: &DeliberationState) -> bool {
        state.current_task >= state.tasks.len()
    }

    fn annotate(&self, state: &DeliberationState) -> DelibAnnotation {
        DelibAnnotation {
            clock_s: state.clock_ticks as f64 / self.cfg.ticks_per_second as f64,
            task: state.current_task,
            phase: self.phase(state),
        }
    }

    fn counters(&self, s: &DeliberationState) -> Vec<(&'static str, f64)> {
        let selections: u32 = s.mode_counts.iter().sum();
        vec![
            ("tasks", s.tasks.len() as f64),
            ("successes", s.successes as f64),
            ("failures", s.failures as f64),
            ("timeouts", s.timeouts as f64),
            ("selections", selections as f64),
            ("mode1", s.mode_counts[0] as f64),
            ("mode2", s.mode_counts[1] as f64),
            ("mode3", s.mode_counts[2] as f64),
            ("mode4", s.mode_counts[3] as f64),
            ("mode5", s.mode_counts[4] as f64),
        ]
    }
}

pub const MODES: usize = 5;

/// The five mode-selection singletons, in mode order.
pub fn mode_menu() -> Vec<InterventionSet> {
    (0..MODES)
        .map(|m| InterventionSet::single(AtomicAction::with_args("select_mode", [m as i64])))
        .collect()
}
