//! Core vocabulary types: ticks, interventions, observation events, utility
//! events, histories, and episode traces.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Discrete global time index. Tick 0 is the first decision point.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Tick(pub u32);

impl Tick {
    pub fn next(self) -> Tick {
        Tick(self.0 + 1)
    }
    pub fn as_usize(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Tick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One intervention from an environment's action alphabet. `args` carries the
/// small integer parameters some actions need (a mode index, an email id);
/// most actions have none.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AtomicAction {
    pub id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<i64>,
}

impl AtomicAction {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), args: Vec::new() }
    }

    pub fn with_args(id: impl Into<String>, args: impl Into<Vec<i64>>) -> Self {
        Self { id: id.into(), args: args.into() }
    }

    pub fn arg(&self, i: usize) -> i64 {
        self.args[i]
    }
}

/// A set of atomic interventions applied at one tick. The empty set is the
/// continuation "do nothing" element and is always representable.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InterventionSet {
    actions: Vec<AtomicAction>,
}

/// Rejected intervention set: the first offending action id, or a description
/// of the structural problem.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AdmissibilityError {
    #[error("duplicate action id {0:?} in intervention set")]
    DuplicateId(String),
    #[error("action {0:?} not admissible in the current state")]
    NotAdmissible(String),
}

impl InterventionSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a set, rejecting duplicate action ids.
    pub fn new(actions: Vec<AtomicAction>) -> Result<Self, AdmissibilityError> {
        for (i, a) in actions.iter().enumerate() {
            if actions[..i].iter().any(|b| b.id == a.id) {
                return Err(AdmissibilityError::DuplicateId(a.id.clone()));
            }
        }
        Ok(Self { actions })
    }

    /// Single-action convenience constructor.
    pub fn single(action: AtomicAction) -> Self {
        Self { actions: vec![action] }
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn actions(&self) -> &[AtomicAction] {
        &self.actions
    }

    pub fn contains(&self, id: &str) -> bool {
        self.actions.iter().any(|a| a.id == id)
    }

    pub fn get(&self, id: &str) -> Option<&AtomicAction> {
        self.actions.iter().find(|a| a.id == id)
    }
}

impl fmt::Display for InterventionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.actions.is_empty() {
            return write!(f, "{{}}");
        }
        write!(f, "{{")?;
        for (i, a) in self.actions.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}", a.id)?;
            if !a.args.is_empty() {
                write!(f, "{:?}", a.args)?;
            }
        }
        write!(f, "}}")
    }
}

/// One observation event. `payload` is the environment's typed event body;
/// `id` names the event kind within the environment's observation alphabet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationEvent<O> {
    pub id: String,
    pub payload: O,
    pub emitted_at: Tick,
}

/// The (possibly empty) set of events emitted at one tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationSet<O> {
    pub events: Vec<ObservationEvent<O>>,
}

impl<O> Default for ObservationSet<O> {
    fn default() -> Self {
        Self { events: Vec::new() }
    }
}

impl<O> ObservationSet<O> {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn push(&mut self, id: impl Into<String>, payload: O, emitted_at: Tick) {
        self.events.push(ObservationEvent { id: id.into(), payload, emitted_at });
    }
}

/// Category labels for utility events, used by scoring and reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityTag {
    TaskReward,
    Penalty,
    TimeCost,
    InterruptCost,
    SwitchCost,
    Other,
}

impl UtilityTag {
    pub const ALL: [UtilityTag; 6] = [
        UtilityTag::TaskReward,
        UtilityTag::Penalty,
        UtilityTag::TimeCost,
        UtilityTag::InterruptCost,
        UtilityTag::SwitchCost,
        UtilityTag::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UtilityTag::TaskReward => "task_reward",
            UtilityTag::Penalty => "penalty",
            UtilityTag::TimeCost => "time_cost",
            UtilityTag::InterruptCost => "interrupt_cost",
            UtilityTag::SwitchCost => "switch_cost",
            UtilityTag::Other => "other",
        }
    }
}

/// One scalar utility contribution charged at a tick.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityEvent {
    pub value: f64,
    pub tick: Tick,
    pub tag: UtilityTag,
}

impl UtilityEvent {
    pub fn new(value: f64, tick: Tick, tag: UtilityTag) -> Self {
        Self { value, tick, tag }
    }
}

/// Everything that happened at one completed tick.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HistoryRecord<O> {
    pub interventions: InterventionSet,
    pub observations: ObservationSet<O>,
    pub utilities: Vec<UtilityEvent>,
}

/// The interaction history available to an agent. Completed records cover
/// ticks `0..t`; `pending` holds the events already emitted at the current
/// tick, before the current intervention is chosen.
#[derive(Clone, Debug, Default)]
pub struct History<O> {
    records: Vec<HistoryRecord<O>>,
    pending: Vec<ObservationEvent<O>>,
}

impl<O> History<O> {
    pub fn new() -> Self {
        Self { records: Vec::new(), pending: Vec::new() }
    }

    pub fn records(&self) -> &[HistoryRecord<O>] {
        &self.records
    }

    /// Events emitted at the current tick, not yet folded into a record.
    pub fn pending_events(&self) -> &[ObservationEvent<O>] {
        &self.pending
    }

    /// All observation events in emission order, pending ones last.
    pub fn events(&self) -> impl Iterator<Item = &ObservationEvent<O>> {
        self.records
            .iter()
            .flat_map(|r| r.observations.events.iter())
            .chain(self.pending.iter())
    }

    /// Most recent event first.
    pub fn events_rev(&self) -> impl Iterator<Item = &ObservationEvent<O>> {
        self.pending.iter().rev().chain(
            self.records
                .iter()
                .rev()
                .flat_map(|r| r.observations.events.iter().rev()),
        )
    }

    pub fn stage(&mut self, obs: ObservationSet<O>) {
        self.pending.extend(obs.events);
    }

    /// Completes the current tick: the staged events plus the chosen
    /// intervention set and charged utilities become a record.
    pub fn commit(&mut self, interventions: InterventionSet, utilities: Vec<UtilityEvent>) {
        let observations = ObservationSet { events: std::mem::take(&mut self.pending) };
        self.records.push(HistoryRecord { interventions, observations, utilities });
    }
}

/// Per-episode rollup written at the end of a trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub ticks: u32,
    /// Discounted return under the environment's per-tick discount.
    pub total_return: f64,
    /// Undiscounted utility totals by tag.
    pub tag_totals: BTreeMap<String, f64>,
    /// Environment-specific counters (episode outcome flags, usage counts).
    pub counters: BTreeMap<String, f64>,
}

/// One tick of a recorded episode: the annotation of the state the agent was
/// in, what it did, what it saw, and what it was charged.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceTick<A, O> {
    pub tick: Tick,
    pub annotation: A,
    pub interventions: InterventionSet,
    pub observations: ObservationSet<O>,
    pub utilities: Vec<UtilityEvent>,
}

/// A fully recorded episode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeTrace<A, O> {
    pub env: String,
    pub seed: u64,
    pub gamma_tick: f64,
    pub ticks: Vec<TraceTick<A, O>>,
    pub summary: TraceSummary,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceIoError {
    #[error("trace i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("trace is missing its {0} line")]
    Missing(&'static str),
    #[error("unsupported trace header: {0}")]
    Header(String),
}

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    kind: String,
    version: u32,
    env: String,
    seed: u64,
    gamma_tick: f64,
}

#[derive(Serialize, Deserialize)]
struct TraceFooter {
    summary: TraceSummary,
}

impl<A, O> EpisodeTrace<A, O>
where
    A: Serialize + serde::de::DeserializeOwned,
    O: Serialize + serde::de::DeserializeOwned,
{
    /// Writes the trace as JSON lines: a header line, one line per tick, and
    /// a summary footer.
    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> Result<(), TraceIoError> {
        let header = TraceHeader {
            kind: "ep-lab-trace".to_string(),
            version: 1,
            env: self.env.clone(),
            seed: self.seed,
            gamma_tick: self.gamma_tick,
        };
        serde_json::to_writer(&mut w, &header).map_err(io_from_serde)?;
        w.write_all(b"\n")?;
        for t in &self.ticks {
            serde_json::to_writer(&mut w, t).map_err(io_from_serde)?;
            w.write_all(b"\n")?;
        }
        let footer = TraceFooter { summary: self.summary.clone() };
        serde_json::to_writer(&mut w, &footer).map_err(io_from_serde)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_jsonl<R: std::io::BufRead>(r: R) -> Result<Self, TraceIoError> {
        let mut lines = Vec::new();
        for line in r.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                lines.push(line);
            }
        }
        if lines.is_empty() {
            return Err(TraceIoError::Missing("header"));
        }
        let header: TraceHeader = serde_json::from_str(&lines[0])
            .map_err(|source| TraceIoError::Parse { line: 1, source })?;
        if header.kind != "ep-lab-trace" || header.version != 1 {
            return Err(TraceIoError::Header(lines[0].clone()));
        }
        if lines.len() < 2 {
            return Err(TraceIoError::Missing("summary"));
        }
        let footer: TraceFooter = serde_json::from_str(lines.last().unwrap())
            .map_err(|source| TraceIoError::Parse { line: lines.len(), source })?;
        let mut ticks = Vec::with_capacity(lines.len() - 2);
        for (i, line) in lines[1..lines.len() - 1].iter().enumerate() {
            let t: TraceTick<A, O> = serde_json::from_str(line)
                .map_err(|source| TraceIoError::Parse { line: i + 2, source })?;
            ticks.push(t);
        }
        Ok(Self {
            env: header.env,
            seed: header.seed,
            gamma_tick: header.gamma_tick,
            ticks,
            summary: footer.summary,
        })
    }
}

fn io_from_serde(e: serde_json::Error) -> TraceIoError {
    TraceIoError::Io(std::io::Error::other(e))
}

/// Discounted sum of per-tick utility totals.
pub fn discounted_return(per_tick: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut g = 1.0;
    for v in per_tick {
        acc += g * v;
        g *= gamma;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intervention_set_rejects_duplicate_ids() {
        let err = InterventionSet::new(vec![
            AtomicAction::new("go"),
            AtomicAction::with_args("go", [1]),
        ])
        .unwrap_err();
        assert_eq!(err, AdmissibilityError::DuplicateId("go".to_string()));
    }

    #[test]
    fn empty_set_displays_as_braces() {
        assert_eq!(InterventionSet::empty().to_string(), "{}");
        let s = InterventionSet::single(AtomicAction::with_args("select_mode", [3]));
        assert_eq!(s.to_string(), "{select_mode[3]}");
    }

    #[test]
    fn history_stage_then_commit_orders_events() {
        let mut h: History<i64> = History::new();
        let mut obs = ObservationSet::empty();
        obs.push("a", 1, Tick(0));
        h.stage(obs);
        assert_eq!(h.pending_events().len(), 1);
        h.commit(InterventionSet::empty(), vec![]);
        let mut obs = ObservationSet::empty();
        obs.push("b", 2, Tick(1));
        h.stage(obs);
        let ids: Vec<&str> = h.events().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        let rev: Vec<&str> = h.events_rev().map(|e| e.id.as_str()).collect();
        assert_eq!(rev, ["b", "a"]);
    }

    #[test]
    fn discounted_return_matches_hand_sum() {
        let r = discounted_return(&[1.0, 2.0, 4.0], 0.5);
        assert_eq!(r, 1.0 + 0.5 * 2.0 + 0.25 * 4.0);
        assert_eq!(discounted_return(&[], 0.9), 0.0);
    }

    #[test]
    fn trace_jsonl_roundtrip() {
        let trace: EpisodeTrace<String, i64> = EpisodeTrace {
            env: "toy".into(),
            seed: 5,
            gamma_tick: 1.0,
            ticks: vec![TraceTick {
                tick: Tick(0),
                annotation: "start".into(),
                interventions: InterventionSet::single(AtomicAction::new("go")),
                observations: ObservationSet {
                    events: vec![ObservationEvent { id: "e".into(), payload: 7, emitted_at: Tick(0) }],
                },
                utilities: vec![UtilityEvent::new(1.5, Tick(0), UtilityTag::TaskReward)],
            }],
            summary: TraceSummary {
                ticks: 1,
                total_return: 1.5,
                tag_totals: [("task_reward".to_string(), 1.5)].into(),
                counters: BTreeMap::new(),
            },
        };
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let back = EpisodeTrace::<String, i64>::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.seed, 5);
        assert_eq!(back.ticks.len(), 1);
        assert_eq!(back.ticks[0].interventions.to_string(), "{go}");
        assert_eq!(back.summary, trace.summary);
    }
}
