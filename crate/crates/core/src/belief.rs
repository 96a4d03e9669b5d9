//! Exact belief machinery over small explicit EPs: predict/posterior updates,
//! observation predictives, finite-horizon optimal values, and the
//! synchronized-POMDP reduction.

use std::path::Path;

use crate::ep::{AtomicAction, InterventionSet};

/// Default expectimax node budget for [`bellman_optimal_value`].
pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BeliefError {
    #[error("belief entries sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("belief entry {index} is negative ({value})")]
    Negative { index: usize, value: f64 },
    #[error("belief has {got} entries, model has {expected} states")]
    WrongLength { got: usize, expected: usize },
    #[error("unknown intervention-set index {0}")]
    UnknownSet(usize),
    #[error("unknown observation-set index {0}")]
    UnknownObs(usize),
    #[error("observation-set {obs} has zero likelihood under the predictive belief")]
    ImpossibleObservation { obs: usize },
    #[error("expectimax node budget of {budget} exceeded")]
    BudgetExceeded { budget: u64 },
    #[error("no intervention set is admissible under every state in the belief support")]
    NoAdmissibleSet,
}

/// A distribution over the states of a [`FiniteEP`].
#[derive(Debug, Clone, PartialEq)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self, BeliefError> {
        for (index, &value) in probs.iter().enumerate() {
            if value < 0.0 {
                return Err(BeliefError::Negative { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(BeliefError::NotNormalized { sum });
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn point(n: usize, state: usize) -> Self {
        let mut p = vec![0.0; n];
        p[state] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l1_distance(&self, other: &Belief) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    fn check_model(&self, ep: &FiniteEP) -> Result<(), BeliefError> {
        if self.0.len() != ep.n_states() {
            return Err(BeliefError::WrongLength { got: self.0.len(), expected: ep.n_states() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FiniteEpError {
    #[error("{table} row for {row} sums to {sum}, expected 1")]
    RowNotNormalized { table: &'static str, row: String, sum: f64 },
    #[error("{table} entry for {row} is negative ({value})")]
    NegativeEntry { table: &'static str, row: String, value: f64 },
    #[error("gamma {0} outside (0, 1]")]
    BadGamma(f64),
    #[error("table dimensions disagree: {0}")]
    Shape(String),
    #[error("intervention set {0} repeats an atomic action id")]
    DuplicateMember(usize),
}

/// An explicitly tabulated EP: enumerated states, enumerated intervention
/// sets (each a set of atomic action ids; the empty list is the continuation
/// set), and enumerated observation outcomes (each a set of event ids; the
/// empty list means "no events arrived").
///
/// `f[s][a]` is the next-state distribution, `o[s]` the observation-outcome
/// distribution, `u[s][a]` the utility, `admissible[s][a]` the per-state
/// intervention mask.
#[derive(Debug, Clone)]
pub struct FiniteEP {
    pub state_labels: Vec<String>,
    pub sets: Vec<Vec<String>>,
    pub obs_elems: Vec<Vec<String>>,
    pub f: Vec<Vec<Vec<f64>>>,
    pub o: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub gamma: f64,
    pub admissible: Vec<Vec<bool>>,
}

impl FiniteEP {
    /// Builds and validates a model with every intervention set admissible
    /// everywhere.
    pub fn new(
        state_labels: Vec<String>,
        sets: Vec<Vec<String>>,
        obs_elems: Vec<Vec<String>>,
        f: Vec<Vec<Vec<f64>>>,
        o: Vec<Vec<f64>>,
        u: Vec<Vec<f64>>,
        gamma: f64,
    ) -> Result<Self, FiniteEpError> {
        let admissible = vec![vec![true; sets.len()]; state_labels.len()];
        Self::with_admissibility(state_labels, sets, obs_elems, f, o, u, gamma, admissible)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_admissibility(
        state_labels: Vec<String>,
        sets: Vec<Vec<String>>,
        obs_elems: Vec<Vec<String>>,
        f: Vec<Vec<Vec<f64>>>,
        o: Vec<Vec<f64>>,
        u: Vec<Vec<f64>>,
        gamma: f64,
        admissible: Vec<Vec<bool>>,
    ) -> Result<Self, FiniteEpError> {
        let ep = Self { state_labels, sets, obs_elems, f, o, u, gamma, admissible };
        ep.validate()?;
        Ok(ep)
    }

    pub fn n_states(&self) -> usize {
        self.state_labels.len()
    }

    pub fn n_sets(&self) -> usize {
        self.sets.len()
    }

    pub fn n_obs(&self) -> usize {
        self.obs_elems.len()
    }

    pub fn set_label(&self, a: usize) -> String {
        if self.sets[a].is_empty() {
            "{}".to_string()
        } else {
            format!("{{{}}}", self.sets[a].join(","))
        }
    }

    fn validate(&self) -> Result<(), FiniteEpError> {
        let (n, k, m) = (self.n_states(), self.n_sets(), self.n_obs());
        if self.f.len() != n || self.o.len() != n || self.u.len() != n || self.admissible.len() != n
        {
            return Err(FiniteEpError::Shape(format!(
                "expected {n} state rows, got f={} o={} u={} admissible={}",
                self.f.len(),
                self.o.len(),
                self.u.len(),
                self.admissible.len()
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(FiniteEpError::BadGamma(self.gamma));
        }
        for (ai, set) in self.sets.iter().enumerate() {
            for (i, id) in set.iter().enumerate() {
                if set[..i].contains(id) {
                    return Err(FiniteEpError::DuplicateMember(ai));
                }
            }
        }
        for s in 0..n {
            if self.f[s].len() != k || self.u[s].len() != k || self.admissible[s].len() != k {
                return Err(FiniteEpError::Shape(format!(
                    "state {s}: expected {k} set columns"
                )));
            }
            for a in 0..k {
                check_row("F", &format!("state {s}, set {a}"), &self.f[s][a], n)?;
            }
            check_row("O", &format!("state {s}"), &self.o[s], m)?;
        }
        Ok(())
    }
}

fn check_row(table: &'static str, row: &str, values: &[f64], len: usize) -> Result<(), FiniteEpError> {
    if values.len() != len {
        return Err(FiniteEpError::Shape(format!(
            "{table} row for {row} has {} entries, expected {len}",
            values.len()
        )));
    }
    for &value in values {
        if value < 0.0 {
            return Err(FiniteEpError::NegativeEntry {
                table,
                row: row.to_string(),
                value,
            });
        }
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(FiniteEpError::RowNotNormalized { table, row: row.to_string(), sum });
    }
    Ok(())
}

/// Predictive belief before observing: `b̄(s') = Σ_s F(s'|s,A) b(s)`.
pub fn predict(b: &Belief, a: usize, ep: &FiniteEP) -> Result<Belief, BeliefError> {
    b.check_model(ep)?;
    if a >= ep.n_sets() {
        return Err(BeliefError::UnknownSet(a));
    }
    let mut out = vec![0.0; ep.n_states()];
    for (s, &w) in b.probs().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (sp, &p) in ep.f[s][a].iter().enumerate() {
            out[sp] += w * p;
        }
    }
    Ok(Belief(out))
}

/// Conditions a predictive belief on an observed observation-set outcome:
/// `b(s') = η O(Y|s') b̄(s')`. A zero total likelihood is an error.
pub fn posterior(b_bar: &Belief, y: usize, ep: &FiniteEP) -> Result<Belief, BeliefError> {
    b_bar.check_model(ep)?;
    if y >= ep.n_obs() {
        return Err(BeliefError::UnknownObs(y));
    }
    let mut out = vec![0.0; ep.n_states()];
    let mut total = 0.0;
    for (sp, &w) in b_bar.probs().iter().enumerate() {
        let v = w * ep.o[sp][y];
        out[sp] = v;
        total += v;
    }
    if total <= 0.0 {
        return Err(BeliefError::ImpossibleObservation { obs: y });
    }
    for v in &mut out {
        *v /= total;
    }
    Ok(Belief(out))
}

/// Predictive distribution over observation outcomes one tick ahead:
/// `P(Y|b,A) = Σ_{s'} O(Y|s') b̄(s')`.
pub fn obs_predictive(b: &Belief, a: usize, ep: &FiniteEP) -> Result<Vec<f64>, BeliefError> {
    let b_bar = predict(b, a, ep)?;
    let mut out = vec![0.0; ep.n_obs()];
    for (sp, &w) in b_bar.probs().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (y, &p) in ep.o[sp].iter().enumerate() {
            out[y] += w * p;
        }
    }
    Ok(out)
}

/// Intervention sets admissible under every state in the belief support.
fn support_admissible(ep: &FiniteEP, b: &Belief) -> Result<Vec<usize>, BeliefError> {
    let mut out = Vec::with_capacity(ep.n_sets());
    'sets: for a in 0..ep.n_sets() {
        for (s, &w) in b.probs().iter().enumerate() {
            if w > 0.0 && !ep.admissible[s][a] {
                continue 'sets;
            }
        }
        out.push(a);
    }
    if out.is_empty() {
        return Err(BeliefError::NoAdmissibleSet);
    }
    Ok(out)
}

/// Finite-horizon optimal value by exact expectimax:
/// `V*(b,h) = max_A [ r(b,A) + γ Σ_Y P(Y|b,A) V*(b_AY, h-1) ]` with
/// `V*(·,0) = 0` and `r(b,A) = Σ_s b(s) U(s,A)`. Ties break toward the lowest
/// intervention-set index. Uses the default node budget.
pub fn bellman_optimal_value(
    ep: &FiniteEP,
    b: &Belief,
    horizon: u32,
) -> Result<(f64, usize), BeliefError> {
    bellman_optimal_value_budgeted(ep, b, horizon, DEFAULT_NODE_BUDGET)
}

pub fn bellman_optimal_value_budgeted(
    ep: &FiniteEP,
    b: &Belief,
    horizon: u32,
    budget: u64,
) -> Result<(f64, usize), BeliefError> {
    b.check_model(ep)?;
    let mut nodes: u64 = 0;
    bellman_rec(ep, b, horizon, budget, &mut nodes)
}

fn bellman_rec(
    ep: &FiniteEP,
    b: &Belief,
    horizon: u32,
    budget: u64,
    nodes: &mut u64,
) -> Result<(f64, usize), BeliefError> {
    *nodes += 1;
    if *nodes > budget {
        return Err(BeliefError::BudgetExceeded { budget });
    }
    let admissible = support_admissible(ep, b)?;
    if horizon == 0 {
        return Ok((0.0, admissible[0]));
    }
    let mut best_value = f64::NEG_INFINITY;
    let mut best_set = admissible[0];
    for &a in &admissible {
        let mut value: f64 = b
            .probs()
            .iter()
            .enumerate()
            .map(|(s, &w)| w * ep.u[s][a])
            .sum();
        if horizon > 1 {
            let b_bar = predict(b, a, ep)?;
            let pred = obs_predictive_from_bar(&b_bar, ep);
            for (y, &py) in pred.iter().enumerate() {
                if py <= 0.0 {
                    continue;
                }
                let b_next = posterior(&b_bar, y, ep)?;
                let (v_next, _) = bellman_rec(ep, &b_next, horizon - 1, budget, nodes)?;
                value += ep.gamma * py * v_next;
            }
        }
        if value > best_value {
            best_value = value;
            best_set = a;
        }
    }
    Ok((best_value, best_set))
}

fn obs_predictive_from_bar(b_bar: &Belief, ep: &FiniteEP) -> Vec<f64> {
    let mut out = vec![0.0; ep.n_obs()];
    for (sp, &w) in b_bar.probs().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (y, &p) in ep.o[sp].iter().enumerate() {
            out[y] += w * p;
        }
    }
    out
}

/// A classical POMDP: `t[s][a]` next-state rows, `z[s'][y]` observation rows,
/// `r[s][a]` rewards.
#[derive(Debug, Clone)]
pub struct Pomdp {
    pub state_labels: Vec<String>,
    pub action_labels: Vec<String>,
    pub obs_labels: Vec<String>,
    pub t: Vec<Vec<Vec<f64>>>,
    pub z: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub gamma: f64,
}

/// Encodes a POMDP as the synchronized special case: every intervention set
/// is a singleton `{action}` and every observation outcome a singleton
/// `{symbol}`, so exactly one action fires and one symbol arrives per tick.
pub fn pomdp_sync_reduce(pomdp: &Pomdp) -> Result<FiniteEP, FiniteEpError> {
    let sets = pomdp
        .action_labels
        .iter()
        .map(|a| vec![a.clone()])
        .collect();
    let obs_elems = pomdp.obs_labels.iter().map(|y| vec![y.clone()]).collect();
    FiniteEP::new(
        pomdp.state_labels.clone(),
        sets,
        obs_elems,
        pomdp.t.clone(),
        pomdp.z.clone(),
        pomdp.r.clone(),
        pomdp.gamma,
    )
}

/// Builds the [`InterventionSet`] corresponding to an enumerated set index.
pub fn intervention_set_of(ep: &FiniteEP, a: usize) -> InterventionSet {
    InterventionSet::new(
        ep.sets[a]
            .iter()
            .map(|id| AtomicAction::new(id.clone()))
            .collect(),
    )
    .expect("validated set has no duplicate ids")
}

#[derive(Debug, thiserror::Error)]
pub enum TableLoadError {
    #[error("table i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] FiniteEpError),
    #[error("missing {0} declaration")]
    Missing(&'static str),
}

/// A loaded table file: the model plus the optional initial distribution.
#[derive(Debug, Clone)]
pub struct LoadedTable {
    pub ep: FiniteEP,
    pub init: Option<Vec<f64>>,
}

/// Parses the row-per-entry table format:
///
/// ```text
/// states: s0 s1
/// sets: {} {go}
/// obs: {} {ping}
/// gamma: 0.95
/// F: s0 {go} s1 1.0
/// O: s1 {ping} 0.6
/// O: s1 {} 0.4
/// U: s0 {go} 1.5
/// adm: s1 {go} 0
/// init: s0 1.0
/// ```
///
/// `F`/`O` entries default to 0 and each row must end up summing to 1; `U`
/// defaults to 0; `adm` defaults to 1. `#` starts a comment.
pub fn parse_table(text: &str) -> Result<LoadedTable, TableLoadError> {
    let mut states: Option<Vec<String>> = None;
    let mut sets: Option<Vec<Vec<String>>> = None;
    let mut obs: Option<Vec<Vec<String>>> = None;
    let mut gamma: Option<f64> = None;
    let mut entries: Vec<(usize, String, Vec<String>)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line.split_once(':').ok_or_else(|| TableLoadError::Line {
            line: i + 1,
            msg: "expected `key: values`".to_string(),
        })?;
        let fields: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
        match key.trim() {
            "states" => states = Some(fields),
            "sets" => sets = Some(parse_braced(&fields, i + 1)?),
            "obs" => obs = Some(parse_braced(&fields, i + 1)?),
            "gamma" => {
                gamma = Some(parse_num(fields.first().map(String::as_str), i + 1)?);
            }
            k @ ("F" | "O" | "U" | "adm" | "init") => {
                entries.push((i + 1, k.to_string(), fields));
            }
            other => {
                return Err(TableLoadError::Line {
                    line: i + 1,
                    msg: format!("unknown key {other:?}"),
                })
            }
        }
    }

    let states = states.ok_or(TableLoadError::Missing("states"))?;
    let sets = sets.ok_or(TableLoadError::Missing("sets"))?;
    let obs = obs.ok_or(TableLoadError::Missing("obs"))?;
    let gamma = gamma.ok_or(TableLoadError::Missing("gamma"))?;
    let (n, k, m) = (states.len(), sets.len(), obs.len());

    let state_ix = |name: &str, line: usize| {
        states
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| TableLoadError::Line { line, msg: format!("unknown state {name:?}") })
    };
    let set_ix = |label: &str, line: usize| {
        sets.iter()
            .position(|s| braced(s) == label)
            .ok_or_else(|| TableLoadError::Line { line, msg: format!("unknown set {label:?}") })
    };
    let obs_ix = |label: &str, line: usize| {
        obs.iter()
            .position(|s| braced(s) == label)
            .ok_or_else(|| TableLoadError::Line { line, msg: format!("unknown obs {label:?}") })
    };

    let mut f = vec![vec![vec![0.0; n]; k]; n];
    let mut o_table = vec![vec![0.0; m]; n];
    let mut u = vec![vec![0.0; k]; n];
    let mut admissible = vec![vec![true; k]; n];
    let mut init: Option<Vec<f64>> = None;

    for (line, key, fields) in entries {
        let need = |want: usize| -> Result<(), TableLoadError> {
            if fields.len() != want {
                return Err(TableLoadError::Line {
                    line,
                    msg: format!("{key} rows take {want} fields, got {}", fields.len()),
                });
            }
            Ok(())
        };
        match key.as_str() {
            "F" => {
                need(4)?;
                let s = state_ix(&fields[0], line)?;
                let a = set_ix(&fields[1], line)?;
                let sp = state_ix(&fields[2], line)?;
                f[s][a][sp] = parse_num(Some(&fields[3]), line)?;
            }
            "O" => {
                need(3)?;
                let s = state_ix(&fields[0], line)?;
                let y = obs_ix(&fields[1], line)?;
                o_table[s][y] = parse_num(Some(&fields[2]), line)?;
            }
            "U" => {
                need(3)?;
                let s = state_ix(&fields[0], line)?;
                let a = set_ix(&fields[1], line)?;
                u[s][a] = parse_num(Some(&fields[2]), line)?;
            }
            "adm" => {
                need(3)?;
                let s = state_ix(&fields[0], line)?;
                let a = set_ix(&fields[1], line)?;
                admissible[s][a] = parse_num(Some(&fields[2]), line)? != 0.0;
            }
            "init" => {
                need(2)?;
                let s = state_ix(&fields[0], line)?;
                let p = parse_num(Some(&fields[1]), line)?;
                init.get_or_insert_with(|| vec![0.0; n])[s] = p;
            }
            _ => unreachable!(),
        }
    }

    let ep = FiniteEP::with_admissibility(states, sets, obs, f, o_table, u, gamma, admissible)?;
    Ok(LoadedTable { ep, init })
}

pub fn load_table(path: &Path) -> Result<LoadedTable, TableLoadError> {
    parse_table(&std::fs::read_to_string(path)?)
}

fn braced(ids: &[String]) -> String {
    format!("{{{}}}", ids.join(","))
}

fn parse_braced(fields: &[String], line: usize) -> Result<Vec<Vec<String>>, TableLoadError> {
    fields
        .iter()
        .map(|tok| {
            let inner = tok
                .strip_prefix('{')
                .and_then(|t| t.strip_suffix('}'))
                .ok_or_else(|| TableLoadError::Line {
                    line,
                    msg: format!("expected braced set, got {tok:?}"),
                })?;
            Ok(if inner.is_empty() {
                Vec::new()
            } else {
                inner.split(',').map(str::to_string).collect()
            })
        })
        .collect()
}

fn parse_num(field: Option<&str>, line: usize) -> Result<f64, TableLoadError> {
    let field = field.ok_or_else(|| TableLoadError::Line {
        line,
        msg: "missing numeric field".to_string(),
    })?;
    field.parse().map_err(|_| TableLoadError::Line {
        line,
        msg: format!("bad number {field:?}"),
    })
}
