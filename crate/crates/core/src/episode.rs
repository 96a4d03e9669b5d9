//! The environment trait and the episode loop.
//!
//! Tick order is fixed: the agent (or the continuation default) picks an
//! intervention set in state `s_t`, utility is charged for `(s_t, A_t)`, the
//! state advances, and the new state emits observation events stamped `t+1`.
//! The initial state emits its events at tick 0, before the first decision.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::ep::{
    discounted_return, AdmissibilityError, EpisodeTrace, History, InterventionSet,
    ObservationSet, Tick, TraceSummary, TraceTick, UtilityEvent,
};
use crate::rng::{EpisodeStreams, Stream};

/// A tick-level decision process with set-valued interventions and
/// event-valued observations.
pub trait EngagementProcess {
    /// Full latent state. Only the environment sees it.
    type State;
    /// Typed payload of observation events.
    type Obs: Clone + std::fmt::Debug + Serialize + DeserializeOwned;
    /// Privileged per-tick annotation recorded in traces for scoring and
    /// rendering. Not visible to agents' information functions.
    type Annotation: Clone + std::fmt::Debug + Serialize + DeserializeOwned;

    /// Stable environment name, recorded in traces and manifests.
    fn name(&self) -> &'static str;

    fn initial(&self, streams: &mut EpisodeStreams) -> Self::State;

    /// Maximum episode length in ticks.
    fn horizon(&self) -> u32;

    /// Per-tick discount applied to utility when scoring.
    fn gamma_tick(&self) -> f64 {
        1.0
    }

    /// Validates an intervention set against the current state.
    fn check_admissible(
        &self,
        state: &Self::State,
        set: &InterventionSet,
    ) -> Result<(), AdmissibilityError>;

    /// All admissible intervention sets in `state`, continuation first.
    /// Environments with large alphabets may return a representative menu.
    fn admissible_sets(&self, state: &Self::State) -> Vec<InterventionSet>;

    /// Utility charged for choosing `set` in `state`, before the transition.
    fn utility(&self, state: &Self::State, set: &InterventionSet, tick: Tick) -> Vec<UtilityEvent>;

    fn transition(
        &self,
        state: &Self::State,
        set: &InterventionSet,
        streams: &mut EpisodeStreams,
    ) -> Self::State;

    /// Events the state at `tick` emits.
    fn observe(
        &self,
        state: &Self::State,
        tick: Tick,
        streams: &mut EpisodeStreams,
    ) -> ObservationSet<Self::Obs>;

    /// The default intervention applied on ticks where the agent is not
    /// consulted. The empty set unless the environment forces something.
    fn continuation(&self, _state: &Self::State) -> InterventionSet {
        InterventionSet::empty()
    }

    fn terminal(&self, _state: &Self::State) -> bool {
        false
    }

    fn annotate(&self, state: &Self::State) -> Self::Annotation;

    /// Environment-specific episode counters pulled from the final state.
    fn counters(&self, _final_state: &Self::State) -> Vec<(&'static str, f64)> {
        Vec::new()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error("tick {tick}: {source}")]
    Inadmissible {
        tick: Tick,
        #[source]
        source: AdmissibilityError,
    },
}

/// One environment step. Utility is evaluated on the pre-transition state;
/// the returned observation set is emitted by the successor state at the
/// following tick.
pub fn step<E: EngagementProcess>(
    env: &E,
    state: &E::State,
    set: &InterventionSet,
    tick: Tick,
    streams: &mut EpisodeStreams,
) -> Result<(E::State, ObservationSet<E::Obs>, Vec<UtilityEvent>), EpisodeError> {
    env.check_admissible(state, set)
        .map_err(|source| EpisodeError::Inadmissible { tick, source })?;
    let utilities = env.utility(state, set, tick);
    let next = env.transition(state, set, streams);
    let observations = env.observe(&next, tick.next(), streams);
    Ok((next, observations, utilities))
}

/// An agent: a decision gate over annotations plus a choice rule over the
/// extracted information state.
pub trait Policy<E: EngagementProcess> {
    type Info;

    /// Whether the agent is consulted at a tick. Tick-level agents return
    /// true everywhere; gated agents consult the annotation.
    fn decision_gate(&self, annotation: &E::Annotation, tick: Tick) -> bool;

    fn decide(&self, info: &Self::Info, rng: &mut Stream) -> InterventionSet;
}

/// Information function: folds the visible history into the agent's
/// information state. Must be a pure function of `(history, tick)`.
pub trait Extractor<O> {
    type Info;
    fn extract(&self, history: &History<O>, tick: Tick) -> Self::Info;
}

/// Hook invoked after every committed tick; used by trainers to observe
/// transitions without re-running episodes.
pub trait TickSink<E: EngagementProcess> {
    fn on_tick(
        &mut self,
        tick: Tick,
        gated: bool,
        set: &InterventionSet,
        utilities: &[UtilityEvent],
        annotation: &E::Annotation,
        terminal_next: bool,
    );
}

/// No-op sink.
pub struct NullSink;

impl<E: EngagementProcess> TickSink<E> for NullSink {
    fn on_tick(
        &mut self,
        _tick: Tick,
        _gated: bool,
        _set: &InterventionSet,
        _utilities: &[UtilityEvent],
        _annotation: &E::Annotation,
        _terminal_next: bool,
    ) {
    }
}

/// Runs one full episode and records a trace.
pub fn run_episode<E, P, X>(
    env: &E,
    policy: &P,
    extractor: &X,
    seed: u64,
) -> Result<EpisodeTrace<E::Annotation, E::Obs>, EpisodeError>
where
    E: EngagementProcess,
    P: Policy<E>,
    X: Extractor<E::Obs, Info = P::Info>,
{
    run_episode_with(env, policy, extractor, seed, &mut NullSink)
}

/// `run_episode` with a per-tick sink (used by trainers).
pub fn run_episode_with<E, P, X, S>(
    env: &E,
    policy: &P,
    extractor: &X,
    seed: u64,
    sink: &mut S,
) -> Result<EpisodeTrace<E::Annotation, E::Obs>, EpisodeError>
where
    E: EngagementProcess,
    P: Policy<E>,
    X: Extractor<E::Obs, Info = P::Info>,
    S: TickSink<E>,
{
    let mut streams = EpisodeStreams::new(seed);
    let mut state = env.initial(&mut streams);
    let mut history: History<E::Obs> = History::new();
    history.stage(env.observe(&state, Tick(0), &mut streams));

    let mut ticks: Vec<TraceTick<E::Annotation, E::Obs>> = Vec::new();
    let mut per_tick_utility: Vec<f64> = Vec::new();
    let mut tag_totals: BTreeMap<String, f64> = BTreeMap::new();

    for t in 0..env.horizon() {
        if env.terminal(&state) {
            break;
        }
        let tick = Tick(t);
        let annotation = env.annotate(&state);
        let gated = policy.decision_gate(&annotation, tick);
        let set = if gated {
            let info = extractor.extract(&history, tick);
            policy.decide(&info, &mut streams.policy)
        } else {
            env.continuation(&state)
        };
        let (next, next_obs, utilities) = step(env, &state, &set, tick, &mut streams)?;

        per_tick_utility.push(utilities.iter().map(|u| u.value).sum());
        for u in &utilities {
            *tag_totals.entry(u.tag.name().to_string()).or_insert(0.0) += u.value;
        }
        let observations =
            ObservationSet { events: history.pending_events().to_vec() };
        ticks.push(TraceTick {
            tick,
            annotation: annotation.clone(),
            interventions: set.clone(),
            observations,
            utilities: utilities.clone(),
        });
        history.commit(set.clone(), utilities.clone());
        history.stage(next_obs);
        state = next;
        sink.on_tick(
            tick,
            gated,
            &set,
            &utilities,
            &annotation,
            env.terminal(&state) || t + 1 == env.horizon(),
        );
    }

    let total_return = discounted_return(&per_tick_utility, env.gamma_tick());
    let counters = env
        .counters(&state)
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let n_ticks = ticks.len() as u32;
    Ok(EpisodeTrace {
        env: env.name().to_string(),
        seed,
        gamma_tick: env.gamma_tick(),
        ticks,
        summary: TraceSummary {
            ticks: n_ticks,
            total_return,
            tag_totals,
            counters,
        },
    })
}

/// Tick-level policy that always applies the continuation. Useful as a
/// baseline and in tests.
pub struct DoNothing;

impl<E: EngagementProcess> Policy<E> for DoNothing {
    type Info = ();
    fn decision_gate(&self, _annotation: &E::Annotation, _tick: Tick) -> bool {
        false
    }
    fn decide(&self, _info: &(), _rng: &mut Stream) -> InterventionSet {
        InterventionSet::empty()
    }
}

/// Extractor that ignores the history.
pub struct NoInfo;

impl<O> Extractor<O> for NoInfo {
    type Info = ();
    fn extract(&self, _history: &History<O>, _tick: Tick) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ep::{AtomicAction, UtilityTag};

    /// Two-state chain: `s0 -> s1` on any intervention, then absorbing.
    /// Emits event "at_one" exactly while in s1. Utility +1 for acting in
    /// s0, -1 for anything in s1.
    struct Chain;

    impl EngagementProcess for Chain {
        type State = u8;
        type Obs = ();
        type Annotation = u8;

        fn name(&self) -> &'static str {
            "chain"
        }
        fn initial(&self, _streams: &mut EpisodeStreams) -> u8 {
            0
        }
        fn horizon(&self) -> u32 {
            4
        }
        fn check_admissible(
            &self,
            state: &u8,
            set: &InterventionSet,
        ) -> Result<(), AdmissibilityError> {
            for a in set.actions() {
                if a.id != "go" || *state != 0 {
                    return Err(AdmissibilityError::NotAdmissible(a.id.clone()));
                }
            }
            Ok(())
        }
        fn admissible_sets(&self, state: &u8) -> Vec<InterventionSet> {
            let mut menu = vec![InterventionSet::empty()];
            if *state == 0 {
                menu.push(InterventionSet::single(AtomicAction::new("go")));
            }
            menu
        }
        fn utility(&self, state: &u8, set: &InterventionSet, tick: Tick) -> Vec<UtilityEvent> {
            if set.is_empty() {
                return vec![];
            }
            let v = if *state == 0 { 1.0 } else { -1.0 };
            vec![UtilityEvent::new(v, tick, UtilityTag::TaskReward)]
        }
        fn transition(&self, state: &u8, set: &InterventionSet, _s: &mut EpisodeStreams) -> u8 {
            if *state == 0 && set.contains("go") {
                1
            } else {
                *state
            }
        }
        fn observe(&self, state: &u8, tick: Tick, _s: &mut EpisodeStreams) -> ObservationSet<()> {
            let mut o = ObservationSet::empty();
            if *state == 1 {
                o.push("at_one", (), tick);
            }
            o
        }
        fn annotate(&self, state: &u8) -> u8 {
            *state
        }
    }

    struct GoOnce;
    impl Policy<Chain> for GoOnce {
        type Info = bool;
        fn decision_gate(&self, _annotation: &u8, _tick: Tick) -> bool {
            true
        }
        fn decide(&self, in_zero: &bool, _rng: &mut Stream) -> InterventionSet {
            if *in_zero {
                InterventionSet::single(AtomicAction::new("go"))
            } else {
                InterventionSet::empty()
            }
        }
    }

    struct SawNothing;
    impl Extractor<()> for SawNothing {
        type Info = bool;
        fn extract(&self, history: &History<()>, _tick: Tick) -> bool {
            !history.events().any(|e| e.id == "at_one")
        }
    }

    #[test]
    fn step_emits_observation_from_successor_state() {
        let env = Chain;
        let mut streams = EpisodeStreams::new(1);
        let set = InterventionSet::single(AtomicAction::new("go"));
        let (next, obs, util) = step(&env, &0, &set, Tick(0), &mut streams).unwrap();
        assert_eq!(next, 1);
        assert_eq!(obs.events.len(), 1);
        assert_eq!(obs.events[0].id, "at_one");
        assert_eq!(obs.events[0].emitted_at, Tick(1));
        assert_eq!(util.len(), 1);
        assert_eq!(util[0].value, 1.0);
        assert_eq!(util[0].tick, Tick(0));
    }

    #[test]
    fn step_rejects_inadmissible_action_with_tick() {
        let env = Chain;
        let mut streams = EpisodeStreams::new(1);
        let set = InterventionSet::single(AtomicAction::new("warp"));
        let err = step(&env, &0, &set, Tick(3), &mut streams).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tick 3"), "{msg}");
        assert!(msg.contains("warp"), "{msg}");
    }

    #[test]
    fn episode_records_observation_before_decision_at_same_tick() {
        let env = Chain;
        let trace = run_episode(&env, &GoOnce, &SawNothing, 9).unwrap();
        // Tick 0: no event yet, policy fires "go", reward +1.
        assert_eq!(trace.ticks[0].interventions.to_string(), "{go}");
        assert!(trace.ticks[0].observations.is_empty());
        // Tick 1: the s1 event is visible, policy stays idle, no utility.
        assert_eq!(trace.ticks[1].observations.events[0].id, "at_one");
        assert!(trace.ticks[1].interventions.is_empty());
        assert!(trace.ticks[1].utilities.is_empty());
        assert_eq!(trace.summary.total_return, 1.0);
        assert_eq!(trace.summary.ticks, 4);
        assert_eq!(trace.summary.tag_totals["task_reward"], 1.0);
    }

    #[test]
    fn zero_horizon_yields_empty_trace() {
        struct Zero;
        impl EngagementProcess for Zero {
            type State = ();
            type Obs = ();
            type Annotation = ();
            fn name(&self) -> &'static str {
                "zero"
            }
            fn initial(&self, _s: &mut EpisodeStreams) {}
            fn horizon(&self) -> u32 {
                0
            }
            fn check_admissible(
                &self,
                _state: &(),
                _set: &InterventionSet,
            ) -> Result<(), AdmissibilityError> {
                Ok(())
            }
            fn admissible_sets(&self, _state: &()) -> Vec<InterventionSet> {
                vec![InterventionSet::empty()]
            }
            fn utility(&self, _: &(), _: &InterventionSet, _: Tick) -> Vec<UtilityEvent> {
                vec![]
            }
            fn transition(&self, _: &(), _: &InterventionSet, _: &mut EpisodeStreams) {}
            fn observe(&self, _: &(), _: Tick, _: &mut EpisodeStreams) -> ObservationSet<()> {
                ObservationSet::empty()
            }
            fn annotate(&self, _: &()) {}
        }
        let trace = run_episode(&Zero, &DoNothing, &NoInfo, 0).unwrap();
        assert!(trace.ticks.is_empty());
        assert_eq!(trace.summary.total_return, 0.0);
    }
}
