//! Digital-assistant environment: a token-replay main task plus asynchronous
//! email arrivals, simulated under three interfaces that differ only in when
//! arrivals become visible and whether generation can be interrupted. Email
//! handling itself is a deterministic scripted triage rule.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::ep::{Tick, UtilityEvent, UtilityTag};
use crate::rng::EpisodeStreams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decomposition {
    Single,
    Milestones,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interface {
    AgentLoop,
    PeriodicPoll,
    Ep,
}

impl Interface {
    pub const ALL: [Interface; 3] = [Interface::AgentLoop, Interface::PeriodicPoll, Interface::Ep];

    pub fn name(&self) -> &'static str {
        match self {
            Interface::AgentLoop => "agent_loop",
            Interface::PeriodicPoll => "periodic_poll",
            Interface::Ep => "ep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssistantConfig {
    /// Episode length in simulated time units.
    pub horizon_units: f64,
    /// Email arrivals per time unit (memoryless process).
    pub arrival_rate: f64,
    /// Time units per generated token; also the tick length.
    pub token_time_cost: f64,
    pub main_target_units: u32,
    /// (high, medium, low), summing to 1.
    pub urgency_probs: (f64, f64, f64),
    pub slack_high: (f64, f64),
    pub slack_medium: (f64, f64),
    pub slack_low: (f64, f64),
    pub check_inbox_duration: f64,
    pub open_duration: f64,
    pub handle_duration: f64,
    pub reminder_duration: f64,
    pub return_duration: f64,
    pub triage_duration: f64,
    pub polling_interval: f64,
    pub decomposition: Decomposition,
}

impl Default for AssistantConfig {
    fn default() -> Self {
        Self {
            horizon_units: 90.0,
            arrival_rate: 0.2,
            token_time_cost: 0.05,
            main_target_units: 4,
            urgency_probs: (0.4, 0.4, 0.2),
            slack_high: (5.0, 15.0),
            slack_medium: (15.0, 25.0),
            slack_low: (25.0, 35.0),
            check_inbox_duration: 0.1,
            open_duration: 0.1,
            handle_duration: 1.0,
            reminder_duration: 0.1,
            return_duration: 0.1,
            triage_duration: 0.2,
            polling_interval: 15.0,
            decomposition: Decomposition::Single,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssistantConfigError {
    #[error("duration {0} is not a positive multiple of token_time_cost")]
    Duration(f64),
    #[error("urgency_probs must be non-negative and sum to 1")]
    UrgencyProbs,
    #[error("slack range ({0}, {1}) has lo > hi")]
    SlackRange(f64, f64),
}

impl AssistantConfig {
    fn ticks_of(&self, units: f64) -> Result<u32, AssistantConfigError> {
        let raw = units / self.token_time_cost;
        let t = raw.round();
        if units <= 0.0 || (raw - t).abs() > 1e-9 {
            return Err(AssistantConfigError::Duration(units));
        }
        Ok(t as u32)
    }

    pub fn validate(&self) -> Result<(), AssistantConfigError> {
        let (h, m, l) = self.urgency_probs;
        if h < 0.0 || m < 0.0 || l < 0.0 || (h + m + l - 1.0).abs() > 1e-9 {
            return Err(AssistantConfigError::UrgencyProbs);
        }
        for (lo, hi) in [self.slack_high, self.slack_medium, self.slack_low] {
            if lo > hi || lo <= 0.0 {
                return Err(AssistantConfigError::SlackRange(lo, hi));
            }
        }
        for d in [
            self.horizon_units,
            self.check_inbox_duration,
            self.open_duration,
            self.handle_duration,
            self.reminder_duration,
            self.return_duration,
            self.triage_duration,
            self.polling_interval,
        ] {
            self.ticks_of(d)?;
        }
        Ok(())
    }
}

/// Deterministic triage rule: visible emails are handled in (deadline
/// ascending, urgency descending) order; emails that can no longer meet
/// their deadline are skipped; emails with ample slack are deferred with a
/// reminder placed shortly before the deadline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScriptedTriage {
    pub defer_threshold_units: f64,
    pub reminder_margin_units: f64,
}

impl Default for ScriptedTriage {
    fn default() -> Self {
        Self { defer_threshold_units: 10.0, reminder_margin_units: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Urgency {
    High,
    Medium,
    Low,
}

impl Urgency {
    pub fn weight(&self) -> f64 {
        match self {
            Urgency::High => 1.2,
            Urgency::Medium => 0.5,
            Urgency::Low => 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmailStatus {
    Unseen,
    Opened,
    Handled,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmailRecord {
    pub id: usize,
    pub urgency: Urgency,
    pub arrival_tick: u32,
    pub deadline_tick: u32,
    pub visible_tick: Option<u32>,
    pub first_response_tick: Option<u32>,
    pub handled_tick: Option<u32>,
    pub status: EmailStatus,
}

impl EmailRecord {
    /// Whether the episode determined this email's fate: handled on time, or
    /// its deadline fell inside the horizon.
    pub fn outcome_known(&self, horizon: u32) -> bool {
        self.status == EmailStatus::Handled || self.deadline_tick < horizon
    }
}

/// Fixed inbox for replaying a known arrival schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmailSpec {
    pub arrival_tick: u32,
    pub urgency: Urgency,
    pub slack_ticks: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistantTrace {
    pub interface: Interface,
    pub seed: u64,
    pub horizon_ticks: u32,
    pub main_total_tokens: u32,
    pub main_done_tokens: u32,
    pub progress_units: f64,
    pub completed: bool,
    pub main_end_tick: Option<u32>,
    pub on_time: u32,
    pub timeouts: u32,
    pub switches: u32,
    pub interruptions: u32,
    pub emails: Vec<EmailRecord>,
    pub utility_events: Vec<UtilityEvent>,
}

/// Scoring rule over a completed episode:
/// 0.4*progress + 0.8*completed + 0.4*on_time - 0.5*timeouts
/// - 0.005*switches - 0.005*interruptions.
pub fn utility_score(trace: &AssistantTrace) -> f64 {
    0.4 * trace.progress_units
        + 0.8 * if trace.completed { 1.0 } else { 0.0 }
        + 0.4 * trace.on_time as f64
        - 0.5 * trace.timeouts as f64
        - 0.005 * trace.switches as f64
        - 0.005 * trace.interruptions as f64
}

pub fn main_score(progress_units: f64, target: u32) -> f64 {
    (progress_units / target as f64).min(1.0)
}

/// Urgency-weighted on-time completion rate over emails whose outcome the
/// episode determined. Episodes with no such emails score 1.0.
pub fn email_score(emails: &[EmailRecord], horizon: u32) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for e in emails {
        if !e.outcome_known(horizon) {
            continue;
        }
        den += e.urgency.weight();
        if e.status == EmailStatus::Handled {
            num += e.urgency.weight();
        }
    }
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

/// 0.6*Main + 0.4*Email - 0.5*|Main - Email|.
pub fn balanced_score(
    main_progress_units: f64,
    target: u32,
    emails: &[EmailRecord],
    horizon: u32,
) -> f64 {
    let main = main_score(main_progress_units, target);
    let email = email_score(emails, horizon);
    0.6 * main + 0.4 * email - 0.5 * (main - email).abs()
}

/// Timeout fraction among outcome-determined emails (0 when none).
pub fn timeout_rate(emails: &[EmailRecord], horizon: u32) -> f64 {
    let den = emails.iter().filter(|e| e.outcome_known(horizon)).count();
    if den == 0 {
        return 0.0;
    }
    let num = emails.iter().filter(|e| e.status == EmailStatus::TimedOut).count();
    num as f64 / den as f64
}

/// Mean (visible - arrival) in time units over emails that became visible.
pub fn mean_visibility_delay_units(trace: &AssistantTrace, cfg: &AssistantConfig) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for e in &trace.emails {
        if let Some(v) = e.visible_tick {
            sum += (v - e.arrival_tick) as f64 * cfg.token_time_cost;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean (first response - arrival) in time units over responded emails.
pub fn mean_first_response_units(trace: &AssistantTrace, cfg: &AssistantConfig) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for e in &trace.emails {
        if let Some(r) = e.first_response_tick {
            sum += (r - e.arrival_tick) as f64 * cfg.token_time_cost;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Activity {
    MainWork,
    CheckInbox,
    Triage,
    Open(usize),
    Handle(usize),
    SetReminder(usize, u32),
    ReturnToMain,
    Idle,
}

#[derive(Debug, Clone, Copy)]
enum PlanItem {
    Handle(usize),
    Defer(usize, u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum TriageContext {
    MidUnit,
    Boundary,
    Free,
}

struct Durations {
    check: u32,
    open: u32,
    handle: u32,
    reminder: u32,
    ret: u32,
    triage: u32,
    poll: u32,
    defer_threshold: u32,
    margin: u32,
}

struct Sim<'a> {
    cfg: &'a AssistantConfig,
    interface: Interface,
    d: Durations,
    horizon: u32,
    emails: Vec<EmailRecord>,
    arrivals: Vec<(u32, usize)>,
    next_arrival: usize,
    reminders: Vec<(u32, usize)>,
    hidden: Vec<usize>,
    fired_unseen: Vec<usize>,
    untriaged: Vec<usize>,
    deferred: Vec<bool>,
    plan: VecDeque<PlanItem>,
    unit_tokens: Vec<u32>,
    unit_done: u32,
    cur_unit: usize,
    main_done: bool,
    main_end_tick: Option<u32>,
    done_tokens: u32,
    activity: Activity,
    activity_end: u32,
    on_time: u32,
    timeouts: u32,
    switches: u32,
    interruptions: u32,
    events: Vec<UtilityEvent>,
}

impl Sim<'_> {
    fn push_event(&mut self, value: f64, tick: u32, tag: UtilityTag) {
        self.events.push(UtilityEvent::new(value, Tick(tick), tag));
    }

    fn make_visible(&mut self, ix: usize, tick: u32) {
        if self.emails[ix].visible_tick.is_none() {
            self.emails[ix].visible_tick = Some(tick);
        }
        self.untriaged.push(ix);
    }

    fn instant_visibility(&self) -> bool {
        self.interface == Interface::Ep || self.main_done
    }

    fn process_externals(&mut self, t: u32) {
        // Deadlines: unhandled emails whose deadline has passed time out.
        for ix in 0..self.emails.len() {
            let e = &self.emails[ix];
            if e.deadline_tick < t
                && e.arrival_tick < t
                && !matches!(e.status, EmailStatus::Handled | EmailStatus::TimedOut)
            {
                self.emails[ix].status = EmailStatus::TimedOut;
                self.timeouts += 1;
                self.push_event(-0.5, t, UtilityTag::Penalty);
            }
        }
        // Main completion flushes everything that accumulated out of sight.
        if self.main_done {
            self.flush_hidden(t);
        }
        // The inbox syncs at poll boundaries regardless of what the agent is
        // doing, so visibility delay never exceeds one interval.
        if self.interface == Interface::PeriodicPoll
            && !self.main_done
            && t > 0
            && t % self.d.poll == 0
        {
            self.flush_hidden(t);
        }
        // Arrivals.
        while self.next_arrival < self.arrivals.len() && self.arrivals[self.next_arrival].0 <= t {
            let (_, ix) = self.arrivals[self.next_arrival];
            self.next_arrival += 1;
            if self.instant_visibility() {
                self.make_visible(ix, t);
            } else {
                self.hidden.push(ix);
            }
        }
        // Reminders.
        let mut fired = Vec::new();
        self.reminders.retain(|&(fire, ix)| {
            if fire <= t {
                fired.push(ix);
                false
            } else {
                true
            }
        });
        for ix in fired {
            self.deferred[ix] = false;
            if self.instant_visibility() {
                self.untriaged.push(ix);
            } else {
                self.fired_unseen.push(ix);
            }
        }
    }

    fn begin_triage(&mut self, t: u32, ctx: TriageContext) {
        if !self.main_done {
            match ctx {
                TriageContext::MidUnit => {
                    self.switches += 1;
                    self.interruptions += 1;
                    self.push_event(-0.005, t, UtilityTag::SwitchCost);
                    self.push_event(-0.005, t, UtilityTag::InterruptCost);
                }
                TriageContext::Boundary => {
                    self.switches += 1;
                    self.push_event(-0.005, t, UtilityTag::SwitchCost);
                }
                TriageContext::Free => {}
            }
        }
        self.activity = Activity::Triage;
        self.activity_end = t + self.d.triage;
    }

    /// Build the ordered plan from everything awaiting triage.
    fn build_plan(&mut self, now: u32) {
        let mut cands: Vec<usize> = std::mem::take(&mut self.untriaged)
            .into_iter()
            .filter(|&ix| {
                matches!(self.emails[ix].status, EmailStatus::Unseen | EmailStatus::Opened)
                    && !self.deferred[ix]
            })
            .collect();
        cands.sort_by_key(|&ix| {
            let e = &self.emails[ix];
            (e.deadline_tick, e.urgency, e.id)
        });
        cands.dedup();
        for ix in cands {
            let deadline = self.emails[ix].deadline_tick;
            if now + self.d.open + self.d.handle > deadline {
                continue;
            }
            if deadline - now > self.d.defer_threshold && deadline - self.d.margin > now {
                self.deferred[ix] = true;
                self.plan.push_back(PlanItem::Defer(ix, deadline - self.d.margin));
            } else {
                self.plan.push_back(PlanItem::Handle(ix));
            }
        }
    }

    /// Advance to the next queued email operation, re-triaging first when new
    /// emails surfaced during handling, and falling back to the main task.
    fn next_op(&mut self, t: u32) {
        if !self.untriaged.is_empty() {
            self.begin_triage(t, TriageContext::Free);
            return;
        }
        while let Some(item) = self.plan.pop_front() {
            match item {
                PlanItem::Handle(ix) => {
                    let e = &self.emails[ix];
                    if !matches!(e.status, EmailStatus::Unseen | EmailStatus::Opened) {
                        continue;
                    }
                    if t + self.d.open + self.d.handle > e.deadline_tick {
                        continue;
                    }
                    self.emails[ix].first_response_tick.get_or_insert(t);
                    self.activity = Activity::Open(ix);
                    self.activity_end = t + self.d.open;
                    return;
                }
                PlanItem::Defer(ix, fire) => {
                    self.activity = Activity::SetReminder(ix, fire);
                    self.activity_end = t + self.d.reminder;
                    return;
                }
            }
        }
        if self.main_done {
            self.activity = Activity::Idle;
        } else {
            self.activity = Activity::ReturnToMain;
            self.activity_end = t + self.d.ret;
        }
    }

    /// Effects of the activity completing at tick t, then the next choice.
    fn complete_activity(&mut self, t: u32) {
        match self.activity {
            Activity::CheckInbox => {
                self.flush_hidden(t);
                if !self.untriaged.is_empty() {
                    let ctx = if self.main_done {
                        TriageContext::Free
                    } else if self.unit_done > 0 {
                        TriageContext::MidUnit
                    } else {
                        TriageContext::Boundary
                    };
                    self.begin_triage(t, ctx);
                } else if self.main_done {
                    self.activity = Activity::Idle;
                } else {
                    self.activity = Activity::MainWork;
                }
            }
            Activity::Triage => {
                self.build_plan(t);
                self.next_op(t);
            }
            Activity::Open(ix) => {
                if self.emails[ix].status == EmailStatus::Unseen {
                    self.emails[ix].status = EmailStatus::Opened;
                }
                self.activity = Activity::Handle(ix);
                self.activity_end = t + self.d.handle;
            }
            Activity::Handle(ix) => {
                self.emails[ix].handled_tick = Some(t);
                if self.emails[ix].status == EmailStatus::Opened && t <= self.emails[ix].deadline_tick
                {
                    self.emails[ix].status = EmailStatus::Handled;
                    self.on_time += 1;
                    self.push_event(0.4, t, UtilityTag::TaskReward);
                }
                self.next_op(t);
            }
            Activity::SetReminder(ix, fire) => {
                self.reminders.push((fire, ix));
                self.next_op(t);
            }
            Activity::ReturnToMain => {
                self.activity = Activity::MainWork;
            }
            Activity::MainWork | Activity::Idle => unreachable!("no timed completion"),
        }
    }

    fn flush_hidden(&mut self, t: u32) {
        for ix in std::mem::take(&mut self.hidden) {
            self.make_visible(ix, t);
        }
        for ix in std::mem::take(&mut self.fired_unseen) {
            self.untriaged.push(ix);
        }
    }

    fn complete_unit(&mut self, t: u32) {
        let frac = self.cfg.main_target_units as f64 / self.unit_tokens.len() as f64;
        self.push_event(0.4 * frac, t, UtilityTag::TaskReward);
        self.cur_unit += 1;
        self.unit_done = 0;
        if self.interface == Interface::AgentLoop {
            self.flush_hidden(t);
        }
        if self.cur_unit == self.unit_tokens.len() {
            self.main_done = true;
            self.main_end_tick = Some(t + 1);
            self.push_event(0.8, t, UtilityTag::TaskReward);
            self.activity = Activity::Idle;
        } else if self.interface == Interface::AgentLoop {
            self.activity = Activity::CheckInbox;
            self.activity_end = t + self.d.check;
        }
    }

    fn run(&mut self) {
        self.activity = Activity::MainWork;
        for t in 0..self.horizon {
            self.process_externals(t);
            match self.activity {
                Activity::MainWork => {
                    if !self.untriaged.is_empty() {
                        if self.interface == Interface::Ep {
                            let ctx = if self.unit_done > 0 {
                                TriageContext::MidUnit
                            } else {
                                TriageContext::Boundary
                            };
                            self.begin_triage(t, ctx);
                        } else {
                            self.activity = Activity::CheckInbox;
                            self.activity_end = t + self.d.check;
                        }
                        continue;
                    }
                    self.unit_done += 1;
                    self.done_tokens += 1;
                    if self.unit_done == self.unit_tokens[self.cur_unit] {
                        self.complete_unit(t);
                    }
                }
                Activity::Idle => {
                    if !self.untriaged.is_empty() {
                        match self.interface {
                            Interface::Ep => self.begin_triage(t, TriageContext::Free),
                            _ => {
                                self.activity = Activity::CheckInbox;
                                self.activity_end = t + self.d.check;
                            }
                        }
                    }
                }
                _ => {
                    if t >= self.activity_end {
                        self.complete_activity(t);
                    }
                }
            }
        }
        // Final deadline sweep at the horizon boundary.
        for ix in 0..self.emails.len() {
            let e = &self.emails[ix];
            if e.deadline_tick < self.horizon
                && !matches!(e.status, EmailStatus::Handled | EmailStatus::TimedOut)
            {
                self.emails[ix].status = EmailStatus::TimedOut;
                self.timeouts += 1;
                self.push_event(-0.5, self.horizon - 1, UtilityTag::Penalty);
            }
        }
        // Partial progress on the unfinished unit.
        if !self.main_done && self.unit_done > 0 {
            let frac = self.cfg.main_target_units as f64 / self.unit_tokens.len() as f64;
            let part = self.unit_done as f64 / self.unit_tokens[self.cur_unit] as f64;
            self.push_event(0.4 * frac * part, self.horizon - 1, UtilityTag::TaskReward);
        }
    }
}

fn sample_inbox(cfg: &AssistantConfig, streams: &mut EpisodeStreams, horizon: u32) -> Vec<EmailSpec> {
    use rand::Rng;
    let mean_gap_ticks = 1.0 / (cfg.arrival_rate * cfg.token_time_cost);
    let slack_ticks = |r: (f64, f64), rng: &mut crate::rng::Stream| -> u32 {
        let lo = (r.0 / cfg.token_time_cost).round() as u32;
        let hi = (r.1 / cfg.token_time_cost).round() as u32;
        rng.random_range(lo..=hi)
    };
    let mut out = Vec::new();
    let mut t = 0u64;
    loop {
        let u: f64 = streams.arrival.random();
        let gap = (-mean_gap_ticks * (1.0 - u).ln()).round().max(1.0) as u64;
        t += gap;
        if t >= horizon as u64 {
            break;
        }
        let p: f64 = streams.arrival.random();
        let (h, m, _) = cfg.urgency_probs;
        let urgency = if p < h {
            Urgency::High
        } else if p < h + m {
            Urgency::Medium
        } else {
            Urgency::Low
        };
        let slack = match urgency {
            Urgency::High => slack_ticks(cfg.slack_high, &mut streams.arrival),
            Urgency::Medium => slack_ticks(cfg.slack_medium, &mut streams.arrival),
            Urgency::Low => slack_ticks(cfg.slack_low, &mut streams.arrival),
        };
        out.push(EmailSpec { arrival_tick: t as u32, urgency, slack_ticks: slack });
    }
    out
}

fn sample_units(cfg: &AssistantConfig, streams: &mut EpisodeStreams) -> Vec<u32> {
    use rand::Rng;
    let per_unit: u32 = streams.init.random_range(180..=220);
    match cfg.decomposition {
        Decomposition::Single => vec![per_unit * cfg.main_target_units],
        Decomposition::Milestones => vec![per_unit; cfg.main_target_units as usize],
    }
}

/// Replays a fixed inbox under one interface. The inbox and main-task unit
/// lengths fully determine the episode.
pub fn simulate_with_inbox(
    cfg: &AssistantConfig,
    interface: Interface,
    triage: &ScriptedTriage,
    seed: u64,
    inbox: &[EmailSpec],
    unit_tokens: Vec<u32>,
) -> Result<AssistantTrace, AssistantConfigError> {
    cfg.validate()?;
    let horizon = cfg.ticks_of(cfg.horizon_units)?;
    let emails: Vec<EmailRecord> = inbox
        .iter()
        .enumerate()
        .map(|(id, s)| EmailRecord {
            id,
            urgency: s.urgency,
            arrival_tick: s.arrival_tick,
            deadline_tick: s.arrival_tick + s.slack_ticks,
            visible_tick: None,
            first_response_tick: None,
            handled_tick: None,
            status: EmailStatus::Unseen,
        })
        .collect();
    let arrivals: Vec<(u32, usize)> = emails.iter().map(|e| (e.arrival_tick, e.id)).collect();
    let n_emails = emails.len();
    let d = Durations {
        check: cfg.ticks_of(cfg.check_inbox_duration)?,
        open: cfg.ticks_of(cfg.open_duration)?,
        handle: cfg.ticks_of(cfg.handle_duration)?,
        reminder: cfg.ticks_of(cfg.reminder_duration)?,
        ret: cfg.ticks_of(cfg.return_duration)?,
        triage: cfg.ticks_of(cfg.triage_duration)?,
        poll: cfg.ticks_of(cfg.polling_interval)?,
        defer_threshold: cfg.ticks_of(triage.defer_threshold_units)?,
        margin: cfg.ticks_of(triage.reminder_margin_units)?,
    };
    let total_tokens: u32 = unit_tokens.iter().sum();
    let mut sim = Sim {
        cfg,
        interface,
        d,
        horizon,
        emails,
        arrivals,
        next_arrival: 0,
        reminders: Vec::new(),
        hidden: Vec::new(),
        fired_unseen: Vec::new(),
        untriaged: Vec::new(),
        deferred: vec![false; n_emails],
        plan: VecDeque::new(),
        unit_tokens,
        unit_done: 0,
        cur_unit: 0,
        main_done: false,
        main_end_tick: None,
        done_tokens: 0,
        activity: Activity::MainWork,
        activity_end: 0,
        on_time: 0,
        timeouts: 0,
        switches: 0,
        interruptions: 0,
        events: Vec::new(),
    };
    sim.run();
    let progress_units =
        cfg.main_target_units as f64 * sim.done_tokens as f64 / total_tokens as f64;
    Ok(AssistantTrace {
        interface,
        seed,
        horizon_ticks: horizon,
        main_total_tokens: total_tokens,
        main_done_tokens: sim.done_tokens,
        progress_units,
        completed: sim.main_done,
        main_end_tick: sim.main_end_tick,
        on_time: sim.on_time,
        timeouts: sim.timeouts,
        switches: sim.switches,
        interruptions: sim.interruptions,
        emails: sim.emails,
        utility_events: sim.events,
    })
}

/// One seeded episode: arrivals and unit lengths are drawn from streams
/// derived from the seed, so the three interfaces face identical inboxes.
pub fn simulate_assistant(
    cfg: &AssistantConfig,
    interface: Interface,
    triage: &ScriptedTriage,
    seed: u64,
) -> Result<AssistantTrace, AssistantConfigError> {
    cfg.validate()?;
    let horizon = cfg.ticks_of(cfg.horizon_units)?;
    let mut streams = EpisodeStreams::new(seed);
    let inbox = sample_inbox(cfg, &mut streams, horizon);
    let units = sample_units(cfg, &mut streams);
    simulate_with_inbox(cfg, interface, triage, seed, &inbox, units)
}
