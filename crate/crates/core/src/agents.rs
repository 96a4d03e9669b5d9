//! Tabular Q-learning over decision gates, plus the hand-written Patch and
//! PatchPro interruption policies used as patrol baselines.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ep::{AtomicAction, History, InterventionSet, Tick};
use crate::episode::{step, EngagementProcess, EpisodeError, Extractor, Policy};
use crate::patrol::{manhattan, ModeView, PhaseSpec, StatusView};
use crate::rng::{derive_seed, EpisodeStreams, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QLearningConfig {
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: u32,
    pub gamma: f64,
    pub training_episodes: u32,
    pub seed: u64,
}

impl QLearningConfig {
    /// Standard tabular defaults: lr 0.1, epsilon 1.0 -> 0.05 linearly over
    /// the first 80% of episodes.
    pub fn standard(training_episodes: u32, gamma: f64, seed: u64) -> Self {
        Self {
            learning_rate: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: (training_episodes as f64 * 0.8).round() as u32,
            gamma,
            training_episodes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), QConfigError> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(QConfigError::LearningRate(self.learning_rate));
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(QConfigError::Epsilon(e));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QConfigError {
    #[error("learning_rate {0} outside (0, 1]")]
    LearningRate(f64),
    #[error("epsilon {0} outside [0, 1]")]
    Epsilon(f64),
}

/// Exploration rate for a 0-based episode index: linear from start to end,
/// reaching end exactly at `epsilon_decay_episodes` and constant after.
pub fn epsilon_at(cfg: &QLearningConfig, episode: u32) -> f64 {
    if cfg.epsilon_decay_episodes == 0 {
        return cfg.epsilon_end;
    }
    let f = episode as f64 / cfg.epsilon_decay_episodes as f64;
    if f >= 1.0 {
        return cfg.epsilon_end;
    }
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * f
}

/// Value table keyed by environment-defined discrete tuples. Unvisited keys
/// read as all-zero rows. The alphabet id and action labels pin the action
/// indexing so tables can only be evaluated where they are meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    alphabet: String,
    action_ids: Vec<String>,
    rows: BTreeMap<Vec<u16>, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QTableError {
    #[error("action index {0} out of range for {1} actions")]
    ActionIndex(usize, usize),
    #[error("qtable parse error at line {line}: {what}")]
    Parse { line: usize, what: String },
}

impl QTable {
    pub fn new(alphabet: impl Into<String>, action_ids: Vec<String>) -> Self {
        let alphabet = alphabet.into();
        assert!(!alphabet.is_empty() && !alphabet.contains(char::is_whitespace));
        assert!(!action_ids.is_empty());
        for id in &action_ids {
            assert!(!id.is_empty() && !id.contains(char::is_whitespace));
        }
        Self { alphabet, action_ids, rows: BTreeMap::new() }
    }

    pub fn alphabet(&self) -> &str {
        &self.alphabet
    }

    pub fn action_ids(&self) -> &[String] {
        &self.action_ids
    }

    pub fn n_actions(&self) -> usize {
        self.action_ids.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn value(&self, key: &[u16], action: usize) -> f64 {
        self.rows.get(key).map(|r| r[action]).unwrap_or(0.0)
    }

    pub fn row(&self, key: &[u16]) -> Vec<f64> {
        self.rows.get(key).cloned().unwrap_or_else(|| vec![0.0; self.action_ids.len()])
    }

    fn row_mut(&mut self, key: &[u16]) -> &mut Vec<f64> {
        let n = self.action_ids.len();
        self.rows.entry(key.to_vec()).or_insert_with(|| vec![0.0; n])
    }

    pub fn max_value(&self, key: &[u16]) -> f64 {
        self.row(key).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Highest-value action among `admissible`, ties broken by lowest index.
    pub fn greedy(&self, key: &[u16], admissible: &[usize]) -> usize {
        let row = self.row(key);
        let mut best = admissible[0];
        for &a in &admissible[1..] {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }

    /// Canonical text form: header, action labels, then one sorted line per
    /// key. Floats use the shortest exact representation, so serialize ->
    /// parse -> serialize is byte-identical.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("ep-lab-qtable v1\n");
        let _ = writeln!(out, "alphabet {}", self.alphabet);
        let _ = writeln!(out, "actions {}", self.action_ids.join(" "));
        let _ = writeln!(out, "rows {}", self.rows.len());
        for (key, values) in &self.rows {
            let ks: Vec<String> = key.iter().map(|k| k.to_string()).collect();
            let vs: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{} | {}", ks.join(" "), vs.join(" "));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, QTableError> {
        let err = |line: usize, what: &str| QTableError::Parse { line, what: what.to_string() };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty input"))?;
        if header != "ep-lab-qtable v1" {
            return Err(err(1, "bad header"));
        }
        let (_, alpha) = lines.next().ok_or_else(|| err(2, "missing alphabet"))?;
        let alphabet = alpha
            .strip_prefix("alphabet ")
            .ok_or_else(|| err(2, "missing alphabet"))?
            .to_string();
        let (_, acts) = lines.next().ok_or_else(|| err(3, "missing actions"))?;
        let action_ids: Vec<String> = acts
            .strip_prefix("actions ")
            .ok_or_else(|| err(3, "missing actions"))?
            .split_whitespace()
            .map(str::to_string)
            .collect();
        if action_ids.is_empty() {
            return Err(err(3, "no actions"));
        }
        let (_, nrows) = lines.next().ok_or_else(|| err(4, "missing row count"))?;
        let expected: usize = nrows
            .strip_prefix("rows ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(4, "bad row count"))?;
        let mut rows = BTreeMap::new();
        for (ix, line) in lines {
            let lineno = ix + 1;
            let (ks, vs) = line.split_once(" | ").ok_or_else(|| err(lineno, "missing ' | '"))?;
            let key: Vec<u16> = ks
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| err(lineno, "bad key component")))
                .collect::<Result<_, _>>()?;
            let values: Vec<f64> = vs
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| err(lineno, "bad value")))
                .collect::<Result<_, _>>()?;
            if values.len() != action_ids.len() {
                return Err(err(lineno, "value count mismatch"));
            }
            if rows.insert(key, values).is_some() {
                return Err(err(lineno, "duplicate key"));
            }
        }
        if rows.len() != expected {
            return Err(err(4, "row count mismatch"));
        }
        Ok(Self { alphabet, action_ids, rows })
    }
}

/// One-step update: Q(key,a) += lr * (r + gamma * max_a' Q(next,a') * (1-done) - Q(key,a)).
/// Returns the updated value.
pub fn q_update(
    q: &mut QTable,
    key: &[u16],
    action: usize,
    reward: f64,
    next_key: &[u16],
    done: bool,
    cfg: &QLearningConfig,
) -> Result<f64, QTableError> {
    q_update_scaled(
        q,
        key,
        action,
        reward,
        if done { None } else { Some(next_key) },
        cfg.gamma,
        cfg.learning_rate,
    )
}

/// Update with an explicit bootstrap scale, used by the trainer where the
/// gate-to-gate gap spans several ticks and the scale is gamma^gap.
fn q_update_scaled(
    q: &mut QTable,
    key: &[u16],
    action: usize,
    reward: f64,
    next_key: Option<&[u16]>,
    bootstrap_scale: f64,
    lr: f64,
) -> Result<f64, QTableError> {
    let n = q.n_actions();
    if action >= n {
        return Err(QTableError::ActionIndex(action, n));
    }
    let bootstrap = next_key.map(|nk| bootstrap_scale * q.max_value(nk)).unwrap_or(0.0);
    let target = reward + bootstrap;
    let row = q.row_mut(key);
    row[action] += lr * (target - row[action]);
    Ok(row[action])
}

/// A discrete decision gate: table key, globally indexed admissible actions,
/// and the intervention set realizing each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionPoint {
    pub key: Vec<u16>,
    pub admissible: Vec<usize>,
    pub menu: Vec<InterventionSet>,
}

/// Environment adapter for a tabular agent: the key/action alphabet, the
/// decision gate, and the (history -> decision point) map.
pub trait QAdapter {
    type Obs;
    type Ann;

    fn alphabet(&self) -> String;
    fn action_ids(&self) -> Vec<String>;
    fn gate(&self, annotation: &Self::Ann, tick: Tick) -> bool;
    fn decision_point(&self, history: &History<Self::Obs>, tick: Tick) -> Option<DecisionPoint>;
}

/// Extractor wrapper so adapters plug into episode runners.
pub struct DpExtractor<'a, A>(pub &'a A);

impl<A: QAdapter> Extractor<A::Obs> for DpExtractor<'_, A> {
    type Info = Option<DecisionPoint>;
    fn extract(&self, history: &History<A::Obs>, tick: Tick) -> Option<DecisionPoint> {
        self.0.decision_point(history, tick)
    }
}

/// Greedy evaluation policy over a frozen table (epsilon 0).
pub struct GreedyQPolicy<'a, A> {
    pub table: &'a QTable,
    pub adapter: &'a A,
}

impl<E, A> Policy<E> for GreedyQPolicy<'_, A>
where
    A: QAdapter,
    E: EngagementProcess<Obs = A::Obs, Annotation = A::Ann>,
{
    type Info = Option<DecisionPoint>;

    fn decision_gate(&self, annotation: &E::Annotation, tick: Tick) -> bool {
        self.adapter.gate(annotation, tick)
    }

    fn decide(&self, info: &Option<DecisionPoint>, _rng: &mut Stream) -> InterventionSet {
        match info {
            Some(dp) => {
                let a = self.table.greedy(&dp.key, &dp.admissible);
                let ix = dp.admissible.iter().position(|&g| g == a).unwrap();
                dp.menu[ix].clone()
            }
            None => InterventionSet::empty(),
        }
    }
}

/// Uniform-random choice over the admissible menu at every gate.
pub struct UniformPolicy<'a, A> {
    pub adapter: &'a A,
}

impl<E, A> Policy<E> for UniformPolicy<'_, A>
where
    A: QAdapter,
    E: EngagementProcess<Obs = A::Obs, Annotation = A::Ann>,
{
    type Info = Option<DecisionPoint>;

    fn decision_gate(&self, annotation: &E::Annotation, tick: Tick) -> bool {
        self.adapter.gate(annotation, tick)
    }

    fn decide(&self, info: &Option<DecisionPoint>, rng: &mut Stream) -> InterventionSet {
        match info {
            Some(dp) => dp.menu[rng.random_range(0..dp.menu.len())].clone(),
            None => InterventionSet::empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBlock {
    pub start_episode: u32,
    pub episodes: u32,
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub episodes: u32,
    pub blocks: Vec<TrainBlock>,
}

const TRAIN_LOG_BLOCK: u32 = 1000;

/// Epsilon-greedy tabular training. Rewards between consecutive gates are
/// accumulated with per-tick discounting and credited to the earlier gate's
/// action; the bootstrap is scaled by gamma^gap. Deterministic given the
/// config seed: episode i uses an independent stream derived from it.
pub fn train<E, A>(
    env: &E,
    adapter: &A,
    cfg: &QLearningConfig,
) -> Result<(QTable, TrainReport), EpisodeError>
where
    A: QAdapter,
    E: EngagementProcess<Obs = A::Obs, Annotation = A::Ann>,
{
    cfg.validate().expect("invalid q-learning config");
    let mut q = QTable::new(adapter.alphabet(), adapter.action_ids());
    let gamma = cfg.gamma;
    let mut blocks = Vec::new();
    let mut block_sum = 0.0;
    let mut block_n = 0u32;
    let mut block_start = 0u32;

    for episode in 0..cfg.training_episodes {
        let eps = epsilon_at(cfg, episode);
        let mut streams = EpisodeStreams::new(derive_seed(cfg.seed, "train", episode as u64));
        let mut state = env.initial(&mut streams);
        let mut history: History<E::Obs> = History::new();
        history.stage(env.observe(&state, Tick(0), &mut streams));

        let mut prev: Option<(Vec<u16>, usize)> = None;
        let mut acc_r = 0.0;
        let mut acc_g = 1.0;
        let mut ret = 0.0;
        let mut disc = 1.0;

        for t in 0..env.horizon() {
            if env.terminal(&state) {
                break;
            }
            let tick = Tick(t);
            let annotation = env.annotate(&state);
            let mut set = env.continuation(&state);
            if adapter.gate(&annotation, tick) {
                if let Some(dp) = adapter.decision_point(&history, tick) {
                    if let Some((pk, pa)) = prev.take() {
                        q_update_scaled(
                            &mut q,
                            &pk,
                            pa,
                            acc_r,
                            Some(&dp.key),
                            acc_g,
                            cfg.learning_rate,
                        )
                        .expect("trainer action indices are valid");
                    }
                    acc_r = 0.0;
                    acc_g = 1.0;
                    let a = if streams.policy.random::<f64>() < eps {
                        dp.admissible[streams.policy.random_range(0..dp.admissible.len())]
                    } else {
                        q.greedy(&dp.key, &dp.admissible)
                    };
                    let ix = dp.admissible.iter().position(|&g| g == a).unwrap();
                    set = dp.menu[ix].clone();
                    prev = Some((dp.key, a));
                }
            }
            let (next, obs, utilities) = step(env, &state, &set, tick, &mut streams)?;
            let r: f64 = utilities.iter().map(|u| u.value).sum();
            acc_r += acc_g * r;
            acc_g *= gamma;
            ret += disc * r;
            disc *= env.gamma_tick();
            history.commit(set, utilities);
            history.stage(obs);
            state = next;
        }
        if let Some((pk, pa)) = prev.take() {
            q_update_scaled(&mut q, &pk, pa, acc_r, None, acc_g, cfg.learning_rate)
                .expect("trainer action indices are valid");
        }

        block_sum += ret;
        block_n += 1;
        if block_n == TRAIN_LOG_BLOCK || episode + 1 == cfg.training_episodes {
            blocks.push(TrainBlock {
                start_episode: block_start,
                episodes: block_n,
                mean_return: block_sum / block_n as f64,
            });
            block_start = episode + 1;
            block_sum = 0.0;
            block_n = 0;
        }
    }
    Ok((q, TrainReport { episodes: cfg.training_episodes, blocks }))
}

// ---------------------------------------------------------------------------
// Environment adapters

/// Mode-selection alphabet shared by both clock semantics, so a table trained
/// under one can be evaluated under the other.
pub struct DelibAdapter;

impl QAdapter for DelibAdapter {
    type Obs = crate::deliberation::DelibObs;
    type Ann = crate::deliberation::DelibAnnotation;

    fn alphabet(&self) -> String {
        "deliberation-modes".into()
    }

    fn action_ids(&self) -> Vec<String> {
        (1..=5).map(|m| format!("select_mode[{m}]")).collect()
    }

    fn gate(&self, annotation: &Self::Ann, _tick: Tick) -> bool {
        matches!(annotation.phase, crate::deliberation::DelibPhase::Deciding { .. })
    }

    fn decision_point(&self, history: &History<Self::Obs>, _tick: Tick) -> Option<DecisionPoint> {
        let obs = history
            .pending_events()
            .iter()
            .rev()
            .find(|e| e.id == "task_ready")?;
        Some(DecisionPoint {
            key: vec![obs.payload.urgency_bucket as u16, obs.payload.difficulty_bin as u16],
            admissible: (0..5).collect(),
            menu: crate::deliberation::mode_menu(),
        })
    }
}

/// Patrol action alphabet: 0 continue, 1 handle_next_checkpoint,
/// 2 respond_alarm. `every_tick` distinguishes the tick-level interface from
/// the boundary-gated Loop.
pub struct PatrolAdapter {
    pub n_phases: usize,
    pub every_tick: bool,
}

pub const PATROL_CONTINUE: usize = 0;
pub const PATROL_HANDLE: usize = 1;
pub const PATROL_RESPOND: usize = 2;

impl PatrolAdapter {
    /// Discretized table key. Buckets keep the table small: deadlines in
    /// groups of 4 ticks, alarm distance in groups of 3 cells, handling
    /// progress in quartiles.
    pub fn key(&self, v: &StatusView) -> Vec<u16> {
        let mode_ord: u16 = match v.mode {
            ModeView::PatrolNav => 0,
            ModeView::Handling { phase, .. } => 1 + phase as u16,
            ModeView::AlarmNav => 1 + self.n_phases as u16,
            ModeView::Resolving { .. } => 2 + self.n_phases as u16,
        };
        let (alarm, deadline_b, dist_b) = match &v.alarm {
            Some(a) => (
                1u16,
                (a.deadline_remaining / 4) as u16,
                (manhattan(v.pos, a.pos) / 3) as u16,
            ),
            None => (0, 0, 0),
        };
        let progress_q: u16 = match v.mode {
            ModeView::Handling { remaining, duration, .. }
            | ModeView::Resolving { remaining, duration } => {
                (((duration - remaining) * 4 / duration).min(3)) as u16
            }
            _ => 0,
        };
        vec![mode_ord, alarm, deadline_b, dist_b, progress_q]
    }

    pub fn menu_for(&self, v: &StatusView) -> (Vec<usize>, Vec<InterventionSet>) {
        let mut admissible = vec![PATROL_CONTINUE];
        let mut menu = vec![InterventionSet::empty()];
        match v.mode {
            ModeView::AlarmNav | ModeView::Resolving { .. } => {
                admissible.push(PATROL_HANDLE);
                menu.push(InterventionSet::single(AtomicAction::new("handle_next_checkpoint")));
            }
            _ if v.alarm.is_some() => {
                admissible.push(PATROL_RESPOND);
                menu.push(InterventionSet::single(AtomicAction::new("respond_alarm")));
            }
            _ => {}
        }
        (admissible, menu)
    }
}

impl QAdapter for PatrolAdapter {
    type Obs = crate::patrol::PatrolObs;
    type Ann = crate::patrol::PatrolAnnotation;

    fn alphabet(&self) -> String {
        format!("patrol-{}ph", self.n_phases)
    }

    fn action_ids(&self) -> Vec<String> {
        ["continue", "handle_next_checkpoint", "respond_alarm"]
            .map(String::from)
            .to_vec()
    }

    fn gate(&self, annotation: &Self::Ann, _tick: Tick) -> bool {
        self.every_tick || annotation.fresh
    }

    fn decision_point(&self, history: &History<Self::Obs>, _tick: Tick) -> Option<DecisionPoint> {
        let v = history.pending_events().iter().rev().find_map(|e| match &e.payload {
            crate::patrol::PatrolObs::Status(v) => Some(v),
            _ => None,
        })?;
        let (admissible, menu) = self.menu_for(v);
        Some(DecisionPoint { key: self.key(v), admissible, menu })
    }
}

// ---------------------------------------------------------------------------
// Scripted interruption policies

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatrolChoice {
    Continue,
    Respond,
}

/// Fixed urgency-threshold rules, depth-specific. No-alarm states and states
/// already responding always continue.
pub fn patch_policy(view: &StatusView, phases: &[PhaseSpec]) -> PatrolChoice {
    use crate::patrol::PhaseName::*;
    use PatrolChoice::*;
    let Some(alarm) = &view.alarm else { return Continue };
    match view.mode {
        ModeView::AlarmNav | ModeView::Resolving { .. } => Continue,
        ModeView::PatrolNav => Respond,
        ModeView::Handling { phase, .. } => {
            let depth = phases.len();
            match (depth, phases[phase].name) {
                (_, Observe) => Respond,
                (2, Commit) if alarm.deadline_remaining <= 6 => Respond,
                (3, Verify) if alarm.deadline_remaining <= 8 => Respond,
                _ => Continue,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseThreshold {
    pub urgency_ticks: u32,
    pub progress_cutoff: f64,
    pub cost_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchProThresholds {
    pub per_phase: Vec<PhaseThreshold>,
    pub very_urgent_ticks: u32,
    /// Resolve reward plus the avoided expiry penalty.
    pub net_alarm_value: f64,
}

impl PatchProThresholds {
    pub fn depth2() -> Self {
        Self {
            per_phase: vec![
                PhaseThreshold { urgency_ticks: 16, progress_cutoff: 1.0, cost_ratio: 2.0 },
                PhaseThreshold { urgency_ticks: 8, progress_cutoff: 0.5, cost_ratio: 3.5 },
            ],
            very_urgent_ticks: 3,
            net_alarm_value: 45.0,
        }
    }

    pub fn depth3() -> Self {
        Self {
            per_phase: vec![
                PhaseThreshold { urgency_ticks: 18, progress_cutoff: 1.0, cost_ratio: 2.0 },
                PhaseThreshold { urgency_ticks: 12, progress_cutoff: 0.8, cost_ratio: 3.0 },
                PhaseThreshold { urgency_ticks: 8, progress_cutoff: 0.5, cost_ratio: 4.5 },
            ],
            very_urgent_ticks: 3,
            net_alarm_value: 45.0,
        }
    }

    pub fn for_depth(depth: usize) -> Self {
        match depth {
            2 => Self::depth2(),
            _ => Self::depth3(),
        }
    }
}

/// Ordered checks: infeasible skip; very-urgent respond; patrol-nav respond;
/// finish-first continue; then the phase threshold stage (urgency AND
/// progress AND cost-value all required).
pub fn patchpro_policy(
    view: &StatusView,
    phases: &[PhaseSpec],
    resolve_ticks: u32,
    thr: &PatchProThresholds,
) -> PatrolChoice {
    use PatrolChoice::*;
    let Some(alarm) = &view.alarm else { return Continue };
    if matches!(view.mode, ModeView::AlarmNav | ModeView::Resolving { .. }) {
        return Continue;
    }
    let dist = manhattan(view.pos, alarm.pos);
    if dist + resolve_ticks > alarm.deadline_remaining {
        return Continue;
    }
    if alarm.deadline_remaining <= thr.very_urgent_ticks {
        return Respond;
    }
    let ModeView::Handling { phase, remaining, duration } = view.mode else {
        return Respond;
    };
    if remaining + dist + resolve_ticks <= alarm.deadline_remaining {
        return Continue;
    }
    let t = &thr.per_phase[phase];
    let progress = (duration - remaining) as f64 / duration as f64;
    if alarm.deadline_remaining <= t.urgency_ticks
        && progress < t.progress_cutoff
        && thr.net_alarm_value >= t.cost_ratio * phases[phase].interrupt_cost.abs()
    {
        Respond
    } else {
        Continue
    }
}

/// Episode policy wrapper for the scripted patrol rules.
pub struct ScriptedPatrol {
    phases: Vec<PhaseSpec>,
    resolve_ticks: u32,
    thresholds: Option<PatchProThresholds>,
}

impl ScriptedPatrol {
    pub fn patch(phases: Vec<PhaseSpec>) -> Self {
        Self { phases, resolve_ticks: 0, thresholds: None }
    }

    pub fn patch_pro(phases: Vec<PhaseSpec>, resolve_ticks: u32) -> Self {
        let thr = PatchProThresholds::for_depth(phases.len());
        Self { phases, resolve_ticks, thresholds: Some(thr) }
    }

    fn choose(&self, view: &StatusView) -> PatrolChoice {
        match &self.thresholds {
            Some(thr) => patchpro_policy(view, &self.phases, self.resolve_ticks, thr),
            None => patch_policy(view, &self.phases),
        }
    }
}

impl Policy<crate::patrol::PatrolEnv> for ScriptedPatrol {
    type Info = Option<StatusView>;

    fn decision_gate(&self, _annotation: &crate::patrol::PatrolAnnotation, _tick: Tick) -> bool {
        true
    }

    fn decide(&self, info: &Option<StatusView>, _rng: &mut Stream) -> InterventionSet {
        match info {
            Some(v) if self.choose(v) == PatrolChoice::Respond => {
                InterventionSet::single(AtomicAction::new("respond_alarm"))
            }
            _ => InterventionSet::empty(),
        }
    }
}
