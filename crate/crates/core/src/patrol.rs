//! Grid patrol with asynchronous alarms. The agent cycles checkpoints and
//! handles each one (a single 20-tick module, or a chain of phases with
//! interruption costs); alarms spawn at distant cells with tight deadlines
//! and the only real decision is whether and when to interrupt.

use serde::{Deserialize, Serialize};

use crate::ep::{
    AdmissibilityError, AtomicAction, History, InterventionSet, ObservationSet, Tick,
    UtilityEvent, UtilityTag,
};
use crate::episode::EngagementProcess;
use crate::rng::{EpisodeStreams, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseName {
    Observe,
    Verify,
    Commit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub name: PhaseName,
    pub duration_ticks: u32,
    pub interrupt_cost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatrolConfig {
    pub grid_size: u32,
    pub checkpoints: Vec<(u32, u32)>,
    pub episode_ticks: u32,
    pub handle_ticks: u32,
    pub checkpoint_reward: f64,
    pub alarm_prob_per_tick: f64,
    pub alarm_min_distance: u32,
    pub deadline_range_ticks: (u32, u32),
    pub resolve_ticks: u32,
    pub alarm_reward: f64,
    pub expire_penalty: f64,
    pub active_tick_penalty: f64,
    pub phases: Option<Vec<PhaseSpec>>,
    pub gamma: f64,
}

impl Default for PatrolConfig {
    fn default() -> Self {
        Self::module_level()
    }
}

impl PatrolConfig {
    pub fn module_level() -> Self {
        Self {
            grid_size: 8,
            checkpoints: vec![(0, 0), (0, 7), (7, 7), (7, 0)],
            episode_ticks: 1000,
            handle_ticks: 20,
            checkpoint_reward: 1.0,
            alarm_prob_per_tick: 0.15,
            alarm_min_distance: 5,
            deadline_range_ticks: (14, 22),
            resolve_ticks: 2,
            alarm_reward: 25.0,
            expire_penalty: -20.0,
            active_tick_penalty: -0.5,
            phases: None,
            gamma: 0.99,
        }
    }

    fn state_level_base() -> Self {
        Self {
            checkpoints: vec![(1, 1), (1, 6), (6, 6), (6, 1)],
            alarm_prob_per_tick: 0.07,
            deadline_range_ticks: (7, 12),
            ..Self::module_level()
        }
    }

    pub fn state_level_depth2() -> Self {
        Self {
            phases: Some(vec![
                PhaseSpec { name: PhaseName::Observe, duration_ticks: 4, interrupt_cost: -1.0 },
                PhaseSpec { name: PhaseName::Commit, duration_ticks: 10, interrupt_cost: -5.0 },
            ]),
            ..Self::state_level_base()
        }
    }

    pub fn state_level_depth3() -> Self {
        Self {
            phases: Some(vec![
                PhaseSpec { name: PhaseName::Observe, duration_ticks: 3, interrupt_cost: -1.0 },
                PhaseSpec { name: PhaseName::Verify, duration_ticks: 5, interrupt_cost: -4.0 },
                PhaseSpec { name: PhaseName::Commit, duration_ticks: 10, interrupt_cost: -7.0 },
            ]),
            ..Self::state_level_base()
        }
    }

    pub fn validate(&self) -> Result<(), PatrolConfigError> {
        if self.checkpoints.is_empty() {
            return Err(PatrolConfigError::NoCheckpoints);
        }
        for &(x, y) in &self.checkpoints {
            if x >= self.grid_size || y >= self.grid_size {
                return Err(PatrolConfigError::CheckpointOutsideGrid(x, y));
            }
        }
        if self.deadline_range_ticks.0 > self.deadline_range_ticks.1 {
            return Err(PatrolConfigError::DeadlineRange);
        }
        if let Some(phases) = &self.phases {
            if phases.is_empty() || phases.iter().any(|p| p.duration_ticks == 0) {
                return Err(PatrolConfigError::Phases);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PatrolConfigError {
    #[error("at least one checkpoint required")]
    NoCheckpoints,
    #[error("checkpoint ({0},{1}) outside grid")]
    CheckpointOutsideGrid(u32, u32),
    #[error("deadline range lo > hi")]
    DeadlineRange,
    #[error("phase list must be non-empty with positive durations")]
    Phases,
}

pub fn manhattan(a: (u32, u32), b: (u32, u32)) -> u32 {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

/// One navigation step toward `target`, x-axis first.
pub fn nav_step(pos: (u32, u32), target: (u32, u32)) -> (u32, u32) {
    if pos.0 != target.0 {
        (if pos.0 < target.0 { pos.0 + 1 } else { pos.0 - 1 }, pos.1)
    } else if pos.1 != target.1 {
        (pos.0, if pos.1 < target.1 { pos.1 + 1 } else { pos.1 - 1 })
    } else {
        pos
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub pos: (u32, u32),
    pub deadline_remaining: u32,
    pub initial_deadline: u32,
}

/// Per-tick alarm generator: fires with the configured probability only when
/// no alarm is active, placing the alarm uniformly over cells at Manhattan
/// distance >= the configured minimum (rejection sampling), with an integer
/// deadline uniform over the configured range.
pub fn spawn_alarm(
    rng: &mut Stream,
    cfg: &PatrolConfig,
    agent_pos: (u32, u32),
    alarm_active: bool,
) -> Option<Alarm> {
    use rand::Rng;
    if alarm_active {
        return None;
    }
    if rng.random::<f64>() >= cfg.alarm_prob_per_tick {
        return None;
    }
    let n = cfg.grid_size;
    let reachable = (0..n).any(|x| {
        manhattan((x, 0), agent_pos) >= cfg.alarm_min_distance
            || manhattan((x, n - 1), agent_pos) >= cfg.alarm_min_distance
    });
    if !reachable {
        return None;
    }
    let pos = loop {
        let cand = (rng.random_range(0..n), rng.random_range(0..n));
        if manhattan(cand, agent_pos) >= cfg.alarm_min_distance {
            break cand;
        }
    };
    let (lo, hi) = cfg.deadline_range_ticks;
    let deadline = rng.random_range(lo..=hi);
    Some(Alarm { pos, deadline_remaining: deadline, initial_deadline: deadline })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Mode {
    PatrolNav,
    Handling { phase: usize, remaining: u32 },
    AlarmNav,
    Resolving { remaining: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SavedHandling {
    pub checkpoint: usize,
    pub phase: usize,
    /// Ticks left in the phase when interrupted; honored only where partial
    /// progress is preserved (module level).
    pub remaining: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatrolState {
    pub pos: (u32, u32),
    pub target: usize,
    pub mode: Mode,
    pub saved: Option<SavedHandling>,
    pub alarm: Option<Alarm>,
    pub just_resolved: bool,
    pub just_expired: bool,
    pub fresh: bool,
    pub spawned: u32,
    pub resolved: u32,
    pub expired: u32,
    /// Total spawn-to-conclusion ticks over resolved and expired alarms; an
    /// alarm still pending at the horizon contributes nothing.
    pub alarm_ticks_sum: u32,
    pub checkpoints_done: u32,
    pub interruptions: u32,
}

/// Agent-visible per-tick snapshot, emitted as a `status` observation event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusView {
    pub pos: (u32, u32),
    pub target: usize,
    pub mode: ModeView,
    pub alarm: Option<AlarmView>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModeView {
    PatrolNav,
    Handling { phase: usize, remaining: u32, duration: u32 },
    AlarmNav,
    Resolving { remaining: u32, duration: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmView {
    pub pos: (u32, u32),
    pub deadline_remaining: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PatrolObs {
    Status(StatusView),
    AlarmSpawned { pos: (u32, u32), deadline: u32 },
    AlarmResolved,
    AlarmExpired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatrolAnnotation {
    pub grid_size: u32,
    pub checkpoints: Vec<(u32, u32)>,
    pub status: StatusView,
    /// True when a mode or phase began this tick: the boundary states where
    /// the Loop interface re-decides.
    pub fresh: bool,
}

#[derive(Debug, Clone, Copy)]
struct InternalPhase {
    label: PhaseName,
    duration: u32,
    interrupt_cost: f64,
}

pub struct PatrolEnv {
    cfg: PatrolConfig,
    phases: Vec<InternalPhase>,
    /// Module level preserves partial handling progress across interruptions;
    /// state level restarts the interrupted phase.
    preserve_partial: bool,
}

/// Checkpoint handling as one indivisible module (no interruption cost).
pub fn module_level_env(cfg: PatrolConfig) -> Result<PatrolEnv, PatrolConfigError> {
    cfg.validate()?;
    if cfg.phases.is_some() {
        return Err(PatrolConfigError::Phases);
    }
    let phases = vec![InternalPhase {
        label: PhaseName::Commit,
        duration: cfg.handle_ticks,
        interrupt_cost: 0.0,
    }];
    Ok(PatrolEnv { cfg, phases, preserve_partial: true })
}

/// Checkpoint handling split into phases with interruption costs.
pub fn state_level_env(cfg: PatrolConfig, depth: usize) -> Result<PatrolEnv, PatrolConfigError> {
    cfg.validate()?;
    let specs = cfg.phases.as_ref().ok_or(PatrolConfigError::Phases)?;
    if specs.len() != depth {
        return Err(PatrolConfigError::Phases);
    }
    let phases = specs
        .iter()
        .map(|p| InternalPhase {
            label: p.name,
            duration: p.duration_ticks,
            interrupt_cost: p.interrupt_cost,
        })
        .collect();
    Ok(PatrolEnv { cfg, phases, preserve_partial: false })
}

const HANDLE: &str = "handle_next_checkpoint";
const RESPOND: &str = "respond_alarm";

impl PatrolEnv {
    pub fn cfg(&self) -> &PatrolConfig {
        &self.cfg
    }

    pub fn n_phases(&self) -> usize {
        self.phases.len()
    }

    pub fn phase_name(&self, ix: usize) -> PhaseName {
        self.phases[ix].label
    }

    fn mode_ordinal(&self, mode: &Mode) -> usize {
        match mode {
            Mode::PatrolNav => 0,
            Mode::Handling { phase, .. } => 1 + phase,
            Mode::AlarmNav => 1 + self.phases.len(),
            Mode::Resolving { .. } => 2 + self.phases.len(),
        }
    }

    fn status(&self, s: &PatrolState) -> StatusView {
        StatusView {
            pos: s.pos,
            target: s.target,
            mode: match s.mode {
                Mode::PatrolNav => ModeView::PatrolNav,
                Mode::Handling { phase, remaining } => ModeView::Handling {
                    phase,
                    remaining,
                    duration: self.phases[phase].duration,
                },
                Mode::AlarmNav => ModeView::AlarmNav,
                Mode::Resolving { remaining } => {
                    ModeView::Resolving { remaining, duration: self.cfg.resolve_ticks }
                }
            },
            alarm: s
                .alarm
                .map(|a| AlarmView { pos: a.pos, deadline_remaining: a.deadline_remaining }),
        }
    }

    /// Whether the alarm resolution completes on this tick given the chosen
    /// intervention set.
    fn resolves_now(&self, s: &PatrolState, set: &InterventionSet) -> bool {
        matches!(s.mode, Mode::Resolving { remaining: 1 }) && !set.contains(HANDLE)
    }

    /// Whether the last handling phase completes on this tick.
    fn completes_checkpoint_now(&self, s: &PatrolState, set: &InterventionSet) -> bool {
        if set.contains(RESPOND) {
            return false;
        }
        matches!(s.mode, Mode::Handling { phase, remaining: 1 } if phase + 1 == self.phases.len())
    }

    fn begin_handling(&self, s: &mut PatrolState) {
        let (phase, remaining) = match s.saved {
            Some(saved) if saved.checkpoint == s.target => {
                if self.preserve_partial {
                    (saved.phase, saved.remaining)
                } else {
                    (saved.phase, self.phases[saved.phase].duration)
                }
            }
            _ => (0, self.phases[0].duration),
        };
        s.saved = None;
        s.mode = Mode::Handling { phase, remaining };
    }
}

impl EngagementProcess for PatrolEnv {
    type State = PatrolState;
    type Obs = PatrolObs;
    type Annotation = PatrolAnnotation;

    fn name(&self) -> &'static str {
        if self.preserve_partial {
            "patrol-module"
        } else if self.phases.len() == 2 {
            "patrol-state-d2"
        } else {
            "patrol-state-d3"
        }
    }

    fn initial(&self, _streams: &mut EpisodeStreams) -> PatrolState {
        let c = (self.cfg.grid_size - 1) / 2;
        let pos = (c, c);
        let target = self
            .cfg
            .checkpoints
            .iter()
            .enumerate()
            .min_by_key(|(_, &cp)| manhattan(pos, cp))
            .map(|(i, _)| i)
            .unwrap_or(0);
        PatrolState {
            pos,
            target,
            mode: Mode::PatrolNav,
            saved: None,
            alarm: None,
            just_resolved: false,
            just_expired: false,
            fresh: true,
            spawned: 0,
            resolved: 0,
            expired: 0,
            alarm_ticks_sum: 0,
            checkpoints_done: 0,
            interruptions: 0,
        }
    }

    fn horizon(&self) -> u32 {
        self.cfg.episode_ticks
    }

    fn gamma_tick(&self) -> f64 {
        self.cfg.gamma
    }

    fn check_admissible(
        &self,
        state: &PatrolState,
        set: &InterventionSet,
    ) -> Result<(), AdmissibilityError> {
        if set.is_empty() {
            return Ok(());
        }
        if set.len() > 1 {
            return Err(AdmissibilityError::NotAdmissible(set.actions()[1].id.clone()));
        }
        let id = set.actions()[0].id.as_str();
        let responding = matches!(state.mode, Mode::AlarmNav | Mode::Resolving { .. });
        let ok = match id {
            RESPOND => state.alarm.is_some() && !responding,
            HANDLE => responding,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(AdmissibilityError::NotAdmissible(id.to_string()))
        }
    }

    fn admissible_sets(&self, state: &PatrolState) -> Vec<InterventionSet> {
        let mut menu = vec![InterventionSet::empty()];
        let responding = matches!(state.mode, Mode::AlarmNav | Mode::Resolving { .. });
        if responding {
            menu.push(InterventionSet::single(AtomicAction::new(HANDLE)));
        } else if state.alarm.is_some() {
            menu.push(InterventionSet::single(AtomicAction::new(RESPOND)));
        }
        menu
    }

    fn utility(
        &self,
        state: &PatrolState,
        set: &InterventionSet,
        tick: Tick,
    ) -> Vec<UtilityEvent> {
        let mut out = Vec::new();
        if set.contains(RESPOND) {
            if let Mode::Handling { phase, remaining } = state.mode {
                let p = &self.phases[phase];
                if remaining < p.duration && p.interrupt_cost != 0.0 {
                    out.push(UtilityEvent::new(p.interrupt_cost, tick, UtilityTag::InterruptCost));
                }
            }
        }
        if self.completes_checkpoint_now(state, set) {
            out.push(UtilityEvent::new(self.cfg.checkpoint_reward, tick, UtilityTag::TaskReward));
        }
        if self.resolves_now(state, set) {
            out.push(UtilityEvent::new(self.cfg.alarm_reward, tick, UtilityTag::TaskReward));
        }
        if let Some(alarm) = &state.alarm {
            out.push(UtilityEvent::new(self.cfg.active_tick_penalty, tick, UtilityTag::TimeCost));
            if alarm.deadline_remaining == 1 && !self.resolves_now(state, set) {
                out.push(UtilityEvent::new(self.cfg.expire_penalty, tick, UtilityTag::Penalty));
            }
        }
        out
    }

    fn transition(
        &self,
        state: &PatrolState,
        set: &InterventionSet,
        streams: &mut EpisodeStreams,
    ) -> PatrolState {
        let mut s = state.clone();
        s.just_resolved = false;
        s.just_expired = false;
        let had_alarm = s.alarm.is_some();
        let before = (self.mode_ordinal(&s.mode), phase_of(&s.mode));

        // 1. Intervention: mode switches, interruption bookkeeping.
        if set.contains(RESPOND) {
            if let Mode::Handling { phase, remaining } = s.mode {
                if remaining < self.phases[phase].duration {
                    s.interruptions += 1;
                }
                s.saved = Some(SavedHandling { checkpoint: s.target, phase, remaining });
            }
            s.mode = Mode::AlarmNav;
        } else if set.contains(HANDLE) {
            s.mode = Mode::PatrolNav;
        }

        // 2. Low-level progress of the (possibly new) mode.
        match s.mode {
            Mode::PatrolNav => {
                let cp = self.cfg.checkpoints[s.target];
                s.pos = nav_step(s.pos, cp);
                if s.pos == cp {
                    self.begin_handling(&mut s);
                }
            }
            Mode::Handling { phase, remaining } => {
                if remaining > 1 {
                    s.mode = Mode::Handling { phase, remaining: remaining - 1 };
                } else if phase + 1 < self.phases.len() {
                    s.mode = Mode::Handling {
                        phase: phase + 1,
                        remaining: self.phases[phase + 1].duration,
                    };
                } else {
                    s.checkpoints_done += 1;
                    s.saved = None;
                    s.target = (s.target + 1) % self.cfg.checkpoints.len();
                    s.mode = Mode::PatrolNav;
                }
            }
            Mode::AlarmNav => {
                if let Some(alarm) = s.alarm {
                    s.pos = nav_step(s.pos, alarm.pos);
                    if s.pos == alarm.pos {
                        s.mode = Mode::Resolving { remaining: self.cfg.resolve_ticks };
                    }
                } else {
                    s.mode = Mode::PatrolNav;
                }
            }
            Mode::Resolving { remaining } => {
                if remaining > 1 {
                    s.mode = Mode::Resolving { remaining: remaining - 1 };
                } else {
                    let alarm = s.alarm.take().expect("resolving requires an alarm");
                    s.resolved += 1;
                    s.alarm_ticks_sum += alarm.initial_deadline - alarm.deadline_remaining + 1;
                    s.just_resolved = true;
                    s.mode = Mode::PatrolNav;
                }
            }
        }

        // 3. Alarm countdown; expiry clears the alarm and aborts any response.
        if let Some(alarm) = &mut s.alarm {
            alarm.deadline_remaining -= 1;
            if alarm.deadline_remaining == 0 {
                let lifetime = alarm.initial_deadline;
                s.alarm = None;
                s.expired += 1;
                s.alarm_ticks_sum += lifetime;
                s.just_expired = true;
                if matches!(s.mode, Mode::AlarmNav | Mode::Resolving { .. }) {
                    s.mode = Mode::PatrolNav;
                }
            }
        }

        // 4. Spawn, suppressed for the whole tick if an alarm was active at
        //    its start (expiry and spawn never share a tick).
        if !had_alarm {
            if let Some(alarm) = spawn_alarm(&mut streams.arrival, &self.cfg, s.pos, false) {
                s.alarm = Some(alarm);
                s.spawned += 1;
            }
        }

        let after = (self.mode_ordinal(&s.mode), phase_of(&s.mode));
        s.fresh = before != after;
        s
    }

    fn observe(
        &self,
        state: &PatrolState,
        tick: Tick,
        _streams: &mut EpisodeStreams,
    ) -> ObservationSet<PatrolObs> {
        let mut out = ObservationSet::empty();
        out.push("status", PatrolObs::Status(self.status(state)), tick);
        if let Some(alarm) = &state.alarm {
            if alarm.deadline_remaining == alarm.initial_deadline {
                out.push(
                    "alarm_spawned",
                    PatrolObs::AlarmSpawned { pos: alarm.pos, deadline: alarm.initial_deadline },
                    tick,
                );
            }
        }
        if state.just_resolved {
            out.push("alarm_resolved", PatrolObs::AlarmResolved, tick);
        }
        if state.just_expired {
            out.push("alarm_expired", PatrolObs::AlarmExpired, tick);
        }
        out
    }

    fn annotate(&self, state: &PatrolState) -> PatrolAnnotation {
        PatrolAnnotation {
            grid_size: self.cfg.grid_size,
            checkpoints: self.cfg.checkpoints.clone(),
            status: self.status(state),
            fresh: state.fresh,
        }
    }

    fn counters(&self, s: &PatrolState) -> Vec<(&'static str, f64)> {
        vec![
            ("alarms_spawned", s.spawned as f64),
            ("alarms_resolved", s.resolved as f64),
            ("alarms_expired", s.expired as f64),
            ("alarm_ticks_sum", s.alarm_ticks_sum as f64),
            ("checkpoints_done", s.checkpoints_done as f64),
            ("interruptions", s.interruptions as f64),
        ]
    }
}

fn phase_of(mode: &Mode) -> u32 {
    match mode {
        Mode::Handling { phase, .. } => *phase as u32,
        _ => 0,
    }
}

/// Most recent `status` event: the current tick's snapshot, since the
/// environment emits one every tick.
pub fn latest_status(history: &History<PatrolObs>) -> Option<&StatusView> {
    history.events_rev().find_map(|e| match &e.payload {
        PatrolObs::Status(v) => Some(v),
        _ => None,
    })
}

/// Information function exposing the current tick's status snapshot.
pub struct StatusExtractor;

impl crate::episode::Extractor<PatrolObs> for StatusExtractor {
    type Info = Option<StatusView>;
    fn extract(&self, history: &History<PatrolObs>, _tick: Tick) -> Option<StatusView> {
        latest_status(history).cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{run_episode, Policy};

    /// Responds to every alarm as soon as it is visible; otherwise continues.
    struct EagerResponder;
    impl Policy<PatrolEnv> for EagerResponder {
        type Info = Option<StatusView>;
        fn decision_gate(&self, _ann: &PatrolAnnotation, _tick: Tick) -> bool {
            true
        }
        fn decide(&self, info: &Option<StatusView>, _rng: &mut Stream) -> InterventionSet {
            match info {
                Some(v)
                    if v.alarm.is_some()
                        && !matches!(v.mode, ModeView::AlarmNav | ModeView::Resolving { .. }) =>
                {
                    InterventionSet::single(AtomicAction::new(RESPOND))
                }
                _ => InterventionSet::empty(),
            }
        }
    }

    struct NeverRespond;
    impl Policy<PatrolEnv> for NeverRespond {
        type Info = Option<StatusView>;
        fn decision_gate(&self, _ann: &PatrolAnnotation, _tick: Tick) -> bool {
            false
        }
        fn decide(&self, _info: &Option<StatusView>, _rng: &mut Stream) -> InterventionSet {
            InterventionSet::empty()
        }
    }

    #[test]
    fn nav_step_prefers_x_axis_and_shrinks_distance() {
        assert_eq!(nav_step((3, 5), (1, 5)), (2, 5));
        assert_eq!(nav_step((0, 0), (0, 3)), (0, 1));
        assert_eq!(nav_step((2, 2), (2, 2)), (2, 2));
        let mut pos = (0, 0);
        let mut steps = 0;
        while pos != (7, 7) {
            pos = nav_step(pos, (7, 7));
            steps += 1;
        }
        assert_eq!(steps, 14);
    }

    #[test]
    fn spawn_respects_suppression_distance_and_deadline() {
        let cfg = PatrolConfig::module_level();
        let mut rng = crate::rng::named_stream(1, "arrival");
        assert!(spawn_alarm(&mut rng, &cfg, (0, 0), true).is_none());
        let mut spawned = 0;
        let mut rng = crate::rng::named_stream(7, "arrival");
        for _ in 0..10_000 {
            if let Some(a) = spawn_alarm(&mut rng, &cfg, (3, 3), false) {
                spawned += 1;
                assert!(manhattan(a.pos, (3, 3)) >= 5);
                assert!((14..=22).contains(&a.deadline_remaining));
                assert_eq!(a.initial_deadline, a.deadline_remaining);
            }
        }
        let rate = spawned as f64 / 10_000.0;
        assert!((rate - 0.15).abs() < 0.02, "spawn rate {rate}");
    }

    fn quiet_cfg() -> PatrolConfig {
        PatrolConfig { alarm_prob_per_tick: 0.0, ..PatrolConfig::module_level() }
    }

    #[test]
    fn undisturbed_patrol_cycles_checkpoints() {
        // From (3,3): reach (0,0) in 6 ticks, handle 20, then 7+20 per leg.
        let cfg = PatrolConfig { episode_ticks: 6 + 20 + 7 + 20 + 14 + 20, ..quiet_cfg() };
        let env = module_level_env(cfg).unwrap();
        let trace = run_episode(&env, &NeverRespond, &StatusExtractor, 0).unwrap();
        assert_eq!(trace.summary.counters["checkpoints_done"], 3.0);
        assert_eq!(trace.summary.counters["alarms_spawned"], 0.0);
        let undiscounted: f64 = trace.summary.tag_totals.values().sum();
        assert_eq!(undiscounted, 3.0);
    }

    /// Builds a state with a controlled alarm for arithmetic tests.
    fn state_with_alarm(env: &PatrolEnv, alarm_pos: (u32, u32), deadline: u32) -> PatrolState {
        let mut streams = EpisodeStreams::new(0);
        let mut s = env.initial(&mut streams);
        s.alarm = Some(Alarm {
            pos: alarm_pos,
            deadline_remaining: deadline,
            initial_deadline: deadline,
        });
        s.spawned = 1;
        s
    }

    fn drive(
        env: &PatrolEnv,
        mut s: PatrolState,
        policy: impl Fn(&PatrolState) -> InterventionSet,
        ticks: u32,
    ) -> (PatrolState, f64, Vec<UtilityEvent>) {
        let mut streams = EpisodeStreams::new(99);
        let mut total = 0.0;
        let mut events = Vec::new();
        for t in 0..ticks {
            let set = policy(&s);
            env.check_admissible(&s, &set).unwrap();
            let us = env.utility(&s, &set, Tick(t));
            total += us.iter().map(|u| u.value).sum::<f64>();
            events.extend(us);
            s = env.transition(&s, &set, &mut streams);
        }
        (s, total, events)
    }

    #[test]
    fn feasibility_boundary_distance_plus_resolve_equals_deadline() {
        // Agent at (3,3), alarm at distance 6: deadline 8 resolves with no
        // slack; deadline 7 expires mid-resolve.
        let env = module_level_env(quiet_cfg()).unwrap();
        let respond_once = |s: &PatrolState| {
            if s.alarm.is_some() && !matches!(s.mode, Mode::AlarmNav | Mode::Resolving { .. }) {
                InterventionSet::single(AtomicAction::new(RESPOND))
            } else {
                InterventionSet::empty()
            }
        };
        let s = state_with_alarm(&env, (6, 6), 8);
        let (end, _, _) = drive(&env, s, respond_once, 9);
        assert_eq!(end.resolved, 1);
        assert_eq!(end.expired, 0);
        // Resolution tick = distance + resolve ticks after first response.
        assert_eq!(end.alarm_ticks_sum, 8);

        let s = state_with_alarm(&env, (6, 6), 7);
        let (end, _, _) = drive(&env, s, respond_once, 9);
        assert_eq!(end.resolved, 0);
        assert_eq!(end.expired, 1);
        // An expiry charges the alarm's whole lifetime to the ticks sum.
        assert_eq!(end.alarm_ticks_sum, 7);
    }

    #[test]
    fn unreachable_far_alarm_expires_even_with_instant_response() {
        // Distance 14 with deadline 14: 14 nav + 2 resolve > 14.
        let cfg = PatrolConfig { checkpoints: vec![(0, 0)], ..quiet_cfg() };
        let env = module_level_env(cfg).unwrap();
        let mut s = state_with_alarm(&env, (7, 7), 14);
        s.pos = (0, 0);
        s.mode = Mode::PatrolNav;
        let (end, total, events) = drive(
            &env,
            s,
            |s| {
                if s.alarm.is_some() && !matches!(s.mode, Mode::AlarmNav | Mode::Resolving { .. }) {
                    InterventionSet::single(AtomicAction::new(RESPOND))
                } else {
                    InterventionSet::empty()
                }
            },
            15,
        );
        assert_eq!(end.expired, 1);
        assert_eq!(end.resolved, 0);
        // -20 expiry plus 14 active ticks at -0.5.
        assert_eq!(total, -20.0 - 0.5 * 14.0);
        assert_eq!(
            events.iter().filter(|e| e.tag == UtilityTag::Penalty).count(),
            1
        );
    }

    #[test]
    fn active_tick_penalty_totals_match_alarm_lifetime() {
        let env = module_level_env(quiet_cfg()).unwrap();
        let s = state_with_alarm(&env, (7, 7), 10);
        let (_, _, events) = drive(&env, s, |_| InterventionSet::empty(), 12);
        let time_cost: f64 = events
            .iter()
            .filter(|e| e.tag == UtilityTag::TimeCost)
            .map(|e| e.value)
            .sum();
        assert_eq!(time_cost, -0.5 * 10.0);
    }

    #[test]
    fn module_level_interruption_preserves_handling_progress() {
        let env = module_level_env(quiet_cfg()).unwrap();
        let mut streams = EpisodeStreams::new(0);
        let mut s = env.initial(&mut streams);
        // Walk to the first checkpoint and invest 2 handling ticks.
        for t in 0..8 {
            s = env.transition(&s, &InterventionSet::empty(), &mut streams);
            let _ = t;
        }
        let Mode::Handling { remaining, .. } = s.mode else {
            panic!("expected handling, got {:?}", s.mode)
        };
        assert_eq!(remaining, 18);
        // Inject an adjacent alarm, respond, resolve, return.
        s.alarm = Some(Alarm { pos: (5, 0), deadline_remaining: 12, initial_deadline: 12 });
        let respond = InterventionSet::single(AtomicAction::new(RESPOND));
        assert!(env.utility(&s, &respond, Tick(0)).iter().all(|u| u.tag != UtilityTag::InterruptCost));
        s = env.transition(&s, &respond, &mut streams);
        assert_eq!(s.saved, Some(SavedHandling { checkpoint: 0, phase: 0, remaining: 18 }));
        while s.alarm.is_some() || s.mode != Mode::PatrolNav {
            s = env.transition(&s, &InterventionSet::empty(), &mut streams);
        }
        while !matches!(s.mode, Mode::Handling { .. }) {
            s = env.transition(&s, &InterventionSet::empty(), &mut streams);
        }
        let Mode::Handling { remaining, .. } = s.mode else { unreachable!() };
        assert_eq!(remaining, 18, "module-level progress resumes where it left off");
    }

    #[test]
    fn state_level_interruption_charges_cost_and_restarts_phase() {
        let cfg = PatrolConfig { alarm_prob_per_tick: 0.0, ..PatrolConfig::state_level_depth2() };
        let env = state_level_env(cfg, 2).unwrap();
        let mut streams = EpisodeStreams::new(0);
        let mut s = env.initial(&mut streams);
        // (3,3) -> (1,1) in 4 ticks; finish Observe (4); 3 ticks into Commit.
        for _ in 0..(4 + 4 + 3) {
            s = env.transition(&s, &InterventionSet::empty(), &mut streams);
        }
        let Mode::Handling { phase, remaining } = s.mode else {
            panic!("expected handling, got {:?}", s.mode)
        };
        assert_eq!((phase, remaining), (1, 7));
        s.alarm = Some(Alarm { pos: (6, 6), deadline_remaining: 12, initial_deadline: 12 });
        let respond = InterventionSet::single(AtomicAction::new(RESPOND));
        let us = env.utility(&s, &respond, Tick(0));
        let cost: f64 = us
            .iter()
            .filter(|u| u.tag == UtilityTag::InterruptCost)
            .map(|u| u.value)
            .sum();
        assert_eq!(cost, -5.0);
        s = env.transition(&s, &respond, &mut streams);
        assert_eq!(s.interruptions, 1);
        // Resolve, then return: Commit restarts at full duration.
        while s.alarm.is_some() {
            s = env.transition(&s, &InterventionSet::empty(), &mut streams);
        }
        assert_eq!(s.resolved, 1);
        while !matches!(s.mode, Mode::Handling { .. }) {
            s = env.transition(&s, &InterventionSet::empty(), &mut streams);
        }
        let Mode::Handling { phase, remaining } = s.mode else { unreachable!() };
        assert_eq!((phase, remaining), (1, 10), "phase progress is discarded");
    }

    #[test]
    fn interrupting_a_fresh_phase_is_free() {
        let cfg = PatrolConfig { alarm_prob_per_tick: 0.0, ..PatrolConfig::state_level_depth2() };
        let env = state_level_env(cfg, 2).unwrap();
        let mut streams = EpisodeStreams::new(0);
        let mut s = env.initial(&mut streams);
        for _ in 0..4 {
            s = env.transition(&s, &InterventionSet::empty(), &mut streams);
        }
        assert_eq!(s.mode, Mode::Handling { phase: 0, remaining: 4 });
        s.alarm = Some(Alarm { pos: (6, 6), deadline_remaining: 12, initial_deadline: 12 });
        let respond = InterventionSet::single(AtomicAction::new(RESPOND));
        let us = env.utility(&s, &respond, Tick(0));
        assert!(us.iter().all(|u| u.tag != UtilityTag::InterruptCost));
        let s2 = env.transition(&s, &respond, &mut streams);
        assert_eq!(s2.interruptions, 0);
    }

    #[test]
    fn respond_without_alarm_is_rejected() {
        let env = module_level_env(quiet_cfg()).unwrap();
        let mut streams = EpisodeStreams::new(0);
        let s = env.initial(&mut streams);
        let err = env
            .check_admissible(&s, &InterventionSet::single(AtomicAction::new(RESPOND)))
            .unwrap_err();
        assert_eq!(err, AdmissibilityError::NotAdmissible(RESPOND.into()));
        let err = env
            .check_admissible(&s, &InterventionSet::single(AtomicAction::new(HANDLE)))
            .unwrap_err();
        assert_eq!(err, AdmissibilityError::NotAdmissible(HANDLE.into()));
    }

    #[test]
    fn earliest_response_is_one_tick_after_spawn() {
        let env = module_level_env(PatrolConfig {
            alarm_prob_per_tick: 1.0,
            episode_ticks: 40,
            ..PatrolConfig::module_level()
        })
        .unwrap();
        let trace = run_episode(&env, &EagerResponder, &StatusExtractor, 5).unwrap();
        let spawn_tick = trace
            .ticks
            .iter()
            .find(|t| t.observations.events.iter().any(|e| e.id == "alarm_spawned"))
            .map(|t| t.tick.0)
            .expect("an alarm must spawn with probability 1 per tick");
        let respond_tick = trace
            .ticks
            .iter()
            .find(|t| t.interventions.contains(RESPOND))
            .map(|t| t.tick.0)
            .unwrap();
        // The spawn transition ran at spawn_tick - 1; the event became
        // visible at spawn_tick, which is when the eager policy reacts.
        assert_eq!(respond_tick, spawn_tick);
        assert!(spawn_tick >= 1);
    }

    #[test]
    fn alarm_bookkeeping_is_exclusive_and_exhaustive() {
        let env = module_level_env(PatrolConfig {
            episode_ticks: 400,
            ..PatrolConfig::module_level()
        })
        .unwrap();
        for seed in 0..10 {
            let trace = run_episode(&env, &EagerResponder, &StatusExtractor, seed).unwrap();
            let c = &trace.summary.counters;
            assert!(c["alarms_resolved"] + c["alarms_expired"] <= c["alarms_spawned"]);
            assert!(c["alarms_spawned"] <= c["alarms_resolved"] + c["alarms_expired"] + 1.0);
        }
    }

    #[test]
    fn fresh_flag_marks_mode_and_phase_boundaries() {
        let cfg = PatrolConfig { alarm_prob_per_tick: 0.0, ..PatrolConfig::state_level_depth2() };
        let env = state_level_env(cfg, 2).unwrap();
        let trace = run_episode(
            &env,
            &NeverRespond,
            &StatusExtractor,
            3,
        )
        .unwrap();
        // Boundary ticks: start; Observe begins at 4 after the 4-step walk to
        // (1,1); Commit begins at 8; patrol resumes at 18; next checkpoint
        // (1,6) reached after 5 moves so Observe begins again at 23.
        let fresh: Vec<u32> = trace
            .ticks
            .iter()
            .take(25)
            .filter(|t| t.annotation.fresh)
            .map(|t| t.tick.0)
            .collect();
        assert_eq!(fresh, vec![0, 4, 8, 18, 23]);
    }
}
