//! Named experiments: default configurations, config-file overrides,
//! training and evaluation drivers, and run manifests that pin every
//! artifact down to reproducible bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{
    train, DelibAdapter, DpExtractor, GreedyQPolicy, PatrolAdapter, QAdapter, QLearningConfig,
    QTable, ScriptedPatrol, TrainReport,
};
use crate::assistant::{
    balanced_score, main_score, mean_first_response_units, simulate_assistant, utility_score,
    AssistantConfig, AssistantTrace, Decomposition, EmailStatus, Interface, ScriptedTriage,
};
use crate::deliberation::{
    make_sequential_env, make_single_task_env, DelibAnnotation, DelibObs, DeliberationConfig,
    DeliberationEnv, Semantics, MODES,
};
use crate::ep::EpisodeTrace;
use crate::episode::{run_episode, EngagementProcess, EpisodeError};
use crate::metrics::{
    bootstrap_mean, bootstrap_rate, rows_to_csv, rows_to_markdown, BootstrapConfig, MetricsError,
    MetricsRow,
};
use crate::patrol::{
    module_level_env, state_level_env, PatrolAnnotation, PatrolConfig, PatrolEnv, PatrolObs,
    StatusExtractor,
};
use crate::rng::derive_seed;

// ---------------------------------------------------------------------------
// Registry

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    DeliberationSingle,
    DeliberationSequential,
    PatrolModule,
    PatrolStateD2,
    PatrolStateD3,
    AssistantSingle,
    AssistantMilestones,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::DeliberationSingle,
        ExperimentId::DeliberationSequential,
        ExperimentId::PatrolModule,
        ExperimentId::PatrolStateD2,
        ExperimentId::PatrolStateD3,
        ExperimentId::AssistantSingle,
        ExperimentId::AssistantMilestones,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::DeliberationSingle => "deliberation-single",
            ExperimentId::DeliberationSequential => "deliberation-sequential",
            ExperimentId::PatrolModule => "patrol-module",
            ExperimentId::PatrolStateD2 => "patrol-state-d2",
            ExperimentId::PatrolStateD3 => "patrol-state-d3",
            ExperimentId::AssistantSingle => "assistant-single",
            ExperimentId::AssistantMilestones => "assistant-milestones",
        }
    }

    /// Method rows in output order.
    pub fn methods(self) -> &'static [&'static str] {
        match self {
            ExperimentId::DeliberationSingle | ExperimentId::DeliberationSequential => {
                &["ep", "step"]
            }
            ExperimentId::PatrolModule => &["ep", "loop"],
            ExperimentId::PatrolStateD2 | ExperimentId::PatrolStateD3 => {
                &["ep", "patchpro", "patch", "loop"]
            }
            ExperimentId::AssistantSingle | ExperimentId::AssistantMilestones => {
                &["agent_loop", "periodic_poll", "ep"]
            }
        }
    }

    /// Subset of `methods` that `cmd_train` produces tables for.
    pub fn trainable_methods(self) -> &'static [&'static str] {
        match self {
            ExperimentId::DeliberationSingle | ExperimentId::DeliberationSequential => {
                &["ep", "step"]
            }
            ExperimentId::PatrolModule
            | ExperimentId::PatrolStateD2
            | ExperimentId::PatrolStateD3 => &["ep", "loop"],
            ExperimentId::AssistantSingle | ExperimentId::AssistantMilestones => &[],
        }
    }
}

impl std::fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| ExperimentError::UnknownExperiment(s.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Configuration

/// Full resolved configuration for one experiment run. Defaults come from
/// `default_spec`; a TOML file merges over them key by key.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub train_episodes: u32,
    pub eval_episodes: u32,
    pub seed: u64,
    /// Restricts the method rows; `None` means every registry method.
    pub methods: Option<Vec<String>>,
    /// Output directory recorded in the config; CLI flags take precedence.
    pub out_dir: Option<PathBuf>,
    pub deliberation: DeliberationConfig,
    pub patrol: PatrolConfig,
    pub assistant: AssistantConfig,
    pub triage: ScriptedTriage,
    pub bootstrap: BootstrapConfig,
}

pub fn default_spec(id: ExperimentId) -> ExperimentSpec {
    let base = ExperimentSpec {
        train_episodes: 8000,
        eval_episodes: 3000,
        seed: 42,
        methods: None,
        out_dir: None,
        deliberation: DeliberationConfig::single_task(),
        patrol: PatrolConfig::module_level(),
        assistant: AssistantConfig::default(),
        triage: ScriptedTriage::default(),
        bootstrap: BootstrapConfig::default(),
    };
    match id {
        ExperimentId::DeliberationSingle | ExperimentId::PatrolModule => base,
        ExperimentId::DeliberationSequential => ExperimentSpec {
            deliberation: DeliberationConfig::sequential(),
            ..base
        },
        ExperimentId::PatrolStateD2 => ExperimentSpec {
            patrol: PatrolConfig::state_level_depth2(),
            ..base
        },
        ExperimentId::PatrolStateD3 => ExperimentSpec {
            patrol: PatrolConfig::state_level_depth3(),
            ..base
        },
        ExperimentId::AssistantSingle => ExperimentSpec {
            train_episodes: 0,
            eval_episodes: 200,
            ..base
        },
        ExperimentId::AssistantMilestones => ExperimentSpec {
            train_episodes: 0,
            eval_episodes: 200,
            assistant: AssistantConfig {
                decomposition: Decomposition::Milestones,
                ..AssistantConfig::default()
            },
            ..base
        },
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Experiment defaults, with an optional TOML file merged on top. Scalars
/// and arrays in the file replace the default value; tables merge key by
/// key, so a file can override single fields inside a section.
pub fn load_spec(id: ExperimentId, path: Option<&Path>) -> Result<ExperimentSpec, ConfigError> {
    let mut value = spec_to_toml(&default_spec(id));
    if let Some(path) = path {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let user: toml::Value = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        deep_merge(&mut value, user);
    }
    let spec: ExperimentSpec = value.try_into().map_err(|e: toml::de::Error| match path {
        Some(p) => ConfigError::Parse {
            path: p.to_path_buf(),
            message: e.to_string(),
        },
        None => ConfigError::Invalid(e.to_string()),
    })?;
    validate_spec(id, &spec)?;
    Ok(spec)
}

fn spec_to_toml(spec: &ExperimentSpec) -> toml::Value {
    let json = serde_json::to_value(spec).expect("spec serializes");
    json_to_toml(json).expect("spec has no nulls outside optional fields")
}

fn json_to_toml(v: serde_json::Value) -> Option<toml::Value> {
    use serde_json::Value as J;
    Some(match v {
        J::Null => return None,
        J::Bool(b) => toml::Value::Boolean(b),
        J::Number(n) => {
            if let Some(i) = n.as_i64() {
                toml::Value::Integer(i)
            } else {
                toml::Value::Float(n.as_f64().expect("numeric"))
            }
        }
        J::String(s) => toml::Value::String(s),
        J::Array(items) => {
            toml::Value::Array(items.into_iter().filter_map(json_to_toml).collect())
        }
        J::Object(map) => {
            let mut table = toml::map::Map::new();
            for (k, v) in map {
                if let Some(v) = json_to_toml(v) {
                    table.insert(k, v);
                }
            }
            toml::Value::Table(table)
        }
    })
}

fn deep_merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn validate_spec(id: ExperimentId, spec: &ExperimentSpec) -> Result<(), ConfigError> {
    let bad = |m: String| Err(ConfigError::Invalid(m));
    spec.deliberation
        .validate()
        .map_err(|e| ConfigError::Invalid(format!("deliberation: {e}")))?;
    spec.patrol
        .validate()
        .map_err(|e| ConfigError::Invalid(format!("patrol: {e}")))?;
    spec.assistant
        .validate()
        .map_err(|e| ConfigError::Invalid(format!("assistant: {e}")))?;
    if spec.bootstrap.resamples == 0 {
        return bad("bootstrap: resamples must be at least 1".into());
    }
    if spec.eval_episodes == 0 {
        return bad("eval_episodes must be positive".into());
    }
    if let Some(methods) = &spec.methods {
        if methods.is_empty() {
            return bad("methods list must not be empty".into());
        }
        for m in methods {
            if !id.methods().contains(&m.as_str()) {
                return bad(format!(
                    "unknown method `{m}` for {id}; valid methods: {}",
                    id.methods().join(", ")
                ));
            }
        }
    }
    match id {
        ExperimentId::PatrolModule => {
            if spec.patrol.phases.is_some() {
                return bad("patrol-module does not take handling phases".into());
            }
        }
        ExperimentId::PatrolStateD2 | ExperimentId::PatrolStateD3 => {
            let want = if id == ExperimentId::PatrolStateD2 { 2 } else { 3 };
            let got = spec.patrol.phases.as_ref().map(Vec::len).unwrap_or(0);
            if got != want {
                return bad(format!("{id} requires exactly {want} handling phases, got {got}"));
            }
        }
        _ => {}
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Errors

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("unknown experiment `{0}`; valid ids: deliberation-single, deliberation-sequential, patrol-module, patrol-state-d2, patrol-state-d3, assistant-single, assistant-milestones")]
    UnknownExperiment(String),
    #[error("unknown environment id `{0}`")]
    UnknownEnv(String),
    #[error("experiment {0} has no trainable methods")]
    NothingToTrain(String),
    #[error("missing table file {0}; run the train command first")]
    MissingTable(PathBuf),
    #[error("state-key alphabet mismatch: table uses `{table}`, environment needs `{env}`")]
    AlphabetMismatch { table: String, env: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<ConfigError> for ExperimentError {
    fn from(e: ConfigError) -> Self {
        ExperimentError::Config(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Environments

fn delib_env(id: ExperimentId, cfg: DeliberationConfig, semantics: Semantics) -> DeliberationEnv {
    match id {
        ExperimentId::DeliberationSingle => make_single_task_env(cfg, semantics),
        ExperimentId::DeliberationSequential => make_sequential_env(cfg, semantics),
        _ => unreachable!("not a deliberation experiment"),
    }
}

fn patrol_env(id: ExperimentId, cfg: PatrolConfig) -> Result<PatrolEnv, ExperimentError> {
    let res = match id {
        ExperimentId::PatrolModule => module_level_env(cfg),
        ExperimentId::PatrolStateD2 => state_level_env(cfg, 2),
        ExperimentId::PatrolStateD3 => state_level_env(cfg, 3),
        _ => unreachable!("not a patrol experiment"),
    };
    res.map_err(|e| ExperimentError::Config(format!("patrol: {e}")))
}

fn semantics_of(method: &str) -> Semantics {
    if method == "step" {
        Semantics::Step
    } else {
        Semantics::Ep
    }
}

fn interface_of(method: &str) -> Option<Interface> {
    Interface::ALL.into_iter().find(|i| i.name() == method)
}

enum AnyEnv {
    Delib(DeliberationEnv),
    Patrol(PatrolEnv),
}

impl AnyEnv {
    fn alphabet(&self) -> String {
        match self {
            AnyEnv::Delib(_) => DelibAdapter.alphabet(),
            AnyEnv::Patrol(env) => {
                PatrolAdapter { n_phases: env.n_phases(), every_tick: true }.alphabet()
            }
        }
    }
}

fn env_by_id(env_id: &str) -> Result<AnyEnv, ExperimentError> {
    let env = match env_id {
        "deliberation-single-ep" => {
            AnyEnv::Delib(make_single_task_env(DeliberationConfig::single_task(), Semantics::Ep))
        }
        "deliberation-single-step" => {
            AnyEnv::Delib(make_single_task_env(DeliberationConfig::single_task(), Semantics::Step))
        }
        "deliberation-sequential-ep" => {
            AnyEnv::Delib(make_sequential_env(DeliberationConfig::sequential(), Semantics::Ep))
        }
        "deliberation-sequential-step" => {
            AnyEnv::Delib(make_sequential_env(DeliberationConfig::sequential(), Semantics::Step))
        }
        "patrol-module" => AnyEnv::Patrol(
            module_level_env(PatrolConfig::module_level()).expect("default config"),
        ),
        "patrol-state-d2" => AnyEnv::Patrol(
            state_level_env(PatrolConfig::state_level_depth2(), 2).expect("default config"),
        ),
        "patrol-state-d3" => AnyEnv::Patrol(
            state_level_env(PatrolConfig::state_level_depth3(), 3).expect("default config"),
        ),
        other => return Err(ExperimentError::UnknownEnv(other.to_string())),
    };
    Ok(env)
}

// ---------------------------------------------------------------------------
// Training

pub struct TrainedMethod {
    pub method: String,
    pub table: QTable,
    pub report: TrainReport,
}

fn selected_methods(id: ExperimentId, spec: &ExperimentSpec) -> Vec<&'static str> {
    match &spec.methods {
        None => id.methods().to_vec(),
        Some(sel) => id
            .methods()
            .iter()
            .copied()
            .filter(|m| sel.iter().any(|s| s == m))
            .collect(),
    }
}

pub fn train_experiment(
    id: ExperimentId,
    spec: &ExperimentSpec,
) -> Result<Vec<TrainedMethod>, ExperimentError> {
    let methods: Vec<&str> = selected_methods(id, spec)
        .into_iter()
        .filter(|m| id.trainable_methods().contains(m))
        .collect();
    if methods.is_empty() {
        return Err(ExperimentError::NothingToTrain(id.name().to_string()));
    }
    if spec.train_episodes == 0 {
        return Err(ExperimentError::Config("train_episodes must be positive".into()));
    }
    methods
        .into_iter()
        .map(|method| {
            let (table, report) = match id {
                ExperimentId::DeliberationSingle | ExperimentId::DeliberationSequential => {
                    let env = delib_env(id, spec.deliberation.clone(), semantics_of(method));
                    let cfg = QLearningConfig::standard(spec.train_episodes, 1.0, spec.seed);
                    train(&env, &DelibAdapter, &cfg)?
                }
                ExperimentId::PatrolModule
                | ExperimentId::PatrolStateD2
                | ExperimentId::PatrolStateD3 => {
                    let env = patrol_env(id, spec.patrol.clone())?;
                    let adapter =
                        PatrolAdapter { n_phases: env.n_phases(), every_tick: method == "ep" };
                    let cfg =
                        QLearningConfig::standard(spec.train_episodes, spec.patrol.gamma, spec.seed);
                    train(&env, &adapter, &cfg)?
                }
                _ => unreachable!("assistant methods are not trainable"),
            };
            Ok(TrainedMethod { method: method.to_string(), table, report })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Evaluation

fn check_alphabet(table: &QTable, env_alphabet: &str) -> Result<(), ExperimentError> {
    if table.alphabet() != env_alphabet {
        return Err(ExperimentError::AlphabetMismatch {
            table: table.alphabet().to_string(),
            env: env_alphabet.to_string(),
        });
    }
    Ok(())
}

/// Greedy rollouts of a trained table; episode i uses the stream derived
/// from (seed, "eval", i), so different methods see paired episodes.
pub fn delib_eval_traces(
    env: &DeliberationEnv,
    table: &QTable,
    episodes: u32,
    seed: u64,
) -> Result<Vec<EpisodeTrace<DelibAnnotation, DelibObs>>, ExperimentError> {
    check_alphabet(table, &DelibAdapter.alphabet())?;
    let adapter = DelibAdapter;
    (0..episodes)
        .into_par_iter()
        .map(|i| {
            let policy = GreedyQPolicy { table, adapter: &adapter };
            run_episode(env, &policy, &DpExtractor(&adapter), derive_seed(seed, "eval", i as u64))
        })
        .collect::<Result<Vec<_>, EpisodeError>>()
        .map_err(Into::into)
}

struct DelibStats {
    ret: f64,
    tasks: u64,
    successes: u64,
    timeouts: u64,
    selections: u64,
    modes: [u64; MODES],
}

fn delib_stats(t: &EpisodeTrace<DelibAnnotation, DelibObs>) -> DelibStats {
    let c = &t.summary.counters;
    let g = |k: &str| c.get(k).copied().unwrap_or(0.0) as u64;
    DelibStats {
        ret: t.summary.total_return,
        tasks: g("tasks"),
        successes: g("successes"),
        timeouts: g("timeouts"),
        selections: g("selections"),
        modes: [g("mode1"), g("mode2"), g("mode3"), g("mode4"), g("mode5")],
    }
}

fn delib_row(
    env_name: &str,
    method: &str,
    traces: &[EpisodeTrace<DelibAnnotation, DelibObs>],
    bs: &BootstrapConfig,
) -> Result<MetricsRow, ExperimentError> {
    let stats: Vec<DelibStats> = traces.iter().map(delib_stats).collect();
    let returns: Vec<f64> = stats.iter().map(|s| s.ret).collect();
    let mut row = MetricsRow::new(
        env_name,
        method,
        traces.len() as u32,
        bootstrap_mean(&returns, bs)?,
    );
    let task_counts =
        |num: &dyn Fn(&DelibStats) -> u64| -> Vec<(u64, u64)> {
            stats.iter().map(|s| (num(s), s.tasks)).collect()
        };
    row.success_rate = Some(bootstrap_rate(&task_counts(&|s| s.successes), bs)?);
    row.timeout_rate = Some(bootstrap_rate(&task_counts(&|s| s.timeouts), bs)?);
    row.mode_usage = (0..MODES)
        .map(|m| {
            let counts: Vec<(u64, u64)> =
                stats.iter().map(|s| (s.modes[m], s.selections)).collect();
            bootstrap_rate(&counts, bs)
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(row)
}

fn eval_delib_env(
    env: &DeliberationEnv,
    table: &QTable,
    method: &str,
    episodes: u32,
    seed: u64,
    bs: &BootstrapConfig,
) -> Result<MetricsRow, ExperimentError> {
    let traces = delib_eval_traces(env, table, episodes, seed)?;
    delib_row(env.name(), method, &traces, bs)
}

type PatrolTrace = EpisodeTrace<PatrolAnnotation, PatrolObs>;

fn patrol_traces_q(
    env: &PatrolEnv,
    table: &QTable,
    every_tick: bool,
    episodes: u32,
    seed: u64,
) -> Result<Vec<PatrolTrace>, ExperimentError> {
    let adapter = PatrolAdapter { n_phases: env.n_phases(), every_tick };
    check_alphabet(table, &adapter.alphabet())?;
    (0..episodes)
        .into_par_iter()
        .map(|i| {
            let policy = GreedyQPolicy { table, adapter: &adapter };
            run_episode(env, &policy, &DpExtractor(&adapter), derive_seed(seed, "eval", i as u64))
        })
        .collect::<Result<Vec<_>, EpisodeError>>()
        .map_err(Into::into)
}

fn patrol_traces_scripted(
    env: &PatrolEnv,
    policy: &ScriptedPatrol,
    episodes: u32,
    seed: u64,
) -> Result<Vec<PatrolTrace>, ExperimentError> {
    (0..episodes)
        .into_par_iter()
        .map(|i| run_episode(env, policy, &StatusExtractor, derive_seed(seed, "eval", i as u64)))
        .collect::<Result<Vec<_>, EpisodeError>>()
        .map_err(Into::into)
}

fn patrol_row(
    env_name: &str,
    method: &str,
    traces: &[PatrolTrace],
    bs: &BootstrapConfig,
) -> Result<MetricsRow, ExperimentError> {
    let returns: Vec<f64> = traces.iter().map(|t| t.summary.total_return).collect();
    let counts = |k: &'static str| -> Vec<u64> {
        traces
            .iter()
            .map(|t| t.summary.counters.get(k).copied().unwrap_or(0.0) as u64)
            .collect()
    };
    let spawned = counts("alarms_spawned");
    let resolved = counts("alarms_resolved");
    let expired = counts("alarms_expired");
    let ticks_sum = counts("alarm_ticks_sum");
    // Alarms still pending at the horizon stay in the rate denominators but
    // never reach a numerator, and are absent from the ticks average.
    let concluded: Vec<u64> = resolved.iter().zip(&expired).map(|(r, e)| r + e).collect();
    let costs: Vec<f64> = traces
        .iter()
        .map(|t| 0.0 - t.summary.tag_totals.get("interrupt_cost").copied().unwrap_or(0.0))
        .collect();

    let pairs = |num: &[u64], den: &[u64]| -> Vec<(u64, u64)> {
        num.iter().copied().zip(den.iter().copied()).collect()
    };
    let mut row = MetricsRow::new(
        env_name,
        method,
        traces.len() as u32,
        bootstrap_mean(&returns, bs)?,
    );
    row.resolve_rate = Some(bootstrap_rate(&pairs(&resolved, &spawned), bs)?);
    row.expire_rate = Some(bootstrap_rate(&pairs(&expired, &spawned), bs)?);
    row.ticks_per_alarm = if concluded.iter().sum::<u64>() == 0 {
        None
    } else {
        Some(bootstrap_rate(&pairs(&ticks_sum, &concluded), bs)?)
    };
    row.interrupt_cost = Some(bootstrap_mean(&costs, bs)?);
    Ok(row)
}

fn eval_assistant(
    exp_name: &str,
    cfg: &AssistantConfig,
    triage: &ScriptedTriage,
    interface: Interface,
    episodes: u32,
    seed: u64,
    bs: &BootstrapConfig,
) -> Result<MetricsRow, ExperimentError> {
    let traces: Vec<AssistantTrace> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            simulate_assistant(cfg, interface, triage, derive_seed(seed, "assistant", i as u64))
                .map_err(|e| ExperimentError::Config(format!("assistant: {e}")))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;

    let utilities: Vec<f64> = traces.iter().map(utility_score).collect();
    let balanced: Vec<f64> = traces
        .iter()
        .map(|t| {
            balanced_score(t.progress_units, cfg.main_target_units, &t.emails, t.horizon_ticks)
        })
        .collect();
    let mains: Vec<f64> = traces
        .iter()
        .map(|t| main_score(t.progress_units, cfg.main_target_units))
        .collect();
    let timeout_counts: Vec<(u64, u64)> = traces
        .iter()
        .map(|t| {
            let known = t.emails.iter().filter(|e| e.outcome_known(t.horizon_ticks)).count();
            let timed = t.emails.iter().filter(|e| e.status == EmailStatus::TimedOut).count();
            (timed as u64, known as u64)
        })
        .collect();
    let latencies: Vec<f64> = traces
        .iter()
        .filter_map(|t| mean_first_response_units(t, cfg))
        .collect();

    let mut row = MetricsRow::new(
        exp_name,
        interface.name(),
        traces.len() as u32,
        bootstrap_mean(&utilities, bs)?,
    );
    row.utility = Some(row.mean_return);
    row.balanced = Some(bootstrap_mean(&balanced, bs)?);
    row.main_score = Some(bootstrap_mean(&mains, bs)?);
    row.timeout_rate = Some(bootstrap_rate(&timeout_counts, bs)?);
    row.latency = if latencies.is_empty() {
        None
    } else {
        Some(bootstrap_mean(&latencies, bs)?)
    };
    Ok(row)
}

/// One MetricsRow per selected method, in registry order.
pub fn eval_experiment(
    id: ExperimentId,
    spec: &ExperimentSpec,
    tables: &BTreeMap<String, QTable>,
) -> Result<Vec<MetricsRow>, ExperimentError> {
    let bs = &spec.bootstrap;
    let episodes = spec.eval_episodes;
    let seed = spec.seed;
    let mut rows = Vec::new();
    for method in selected_methods(id, spec) {
        let need_table = || {
            tables
                .get(method)
                .ok_or_else(|| ExperimentError::MissingTable(PathBuf::from(method)))
        };
        let row = match id {
            ExperimentId::DeliberationSingle | ExperimentId::DeliberationSequential => {
                let env = delib_env(id, spec.deliberation.clone(), semantics_of(method));
                eval_delib_env(&env, need_table()?, method, episodes, seed, bs)?
            }
            ExperimentId::PatrolModule
            | ExperimentId::PatrolStateD2
            | ExperimentId::PatrolStateD3 => {
                let env = patrol_env(id, spec.patrol.clone())?;
                let traces = match method {
                    "ep" | "loop" => {
                        patrol_traces_q(&env, need_table()?, method == "ep", episodes, seed)?
                    }
                    "patch" | "patchpro" => {
                        let phases = spec
                            .patrol
                            .phases
                            .clone()
                            .ok_or_else(|| {
                                ExperimentError::Config(
                                    "scripted patrol methods need handling phases".into(),
                                )
                            })?;
                        let policy = if method == "patch" {
                            ScriptedPatrol::patch(phases)
                        } else {
                            ScriptedPatrol::patch_pro(phases, spec.patrol.resolve_ticks)
                        };
                        patrol_traces_scripted(&env, &policy, episodes, seed)?
                    }
                    other => {
                        return Err(ExperimentError::Config(format!("unknown method `{other}`")))
                    }
                };
                patrol_row(env.name(), method, &traces, bs)?
            }
            ExperimentId::AssistantSingle | ExperimentId::AssistantMilestones => {
                let interface = interface_of(method).ok_or_else(|| {
                    ExperimentError::Config(format!("unknown interface `{method}`"))
                })?;
                eval_assistant(id.name(), &spec.assistant, &spec.triage, interface, episodes, seed, bs)?
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

fn semantics_tag(env_name: &str) -> &str {
    if env_name.ends_with("-step") {
        "step"
    } else if env_name.ends_with("-ep") {
        "ep"
    } else {
        env_name
    }
}

/// Greedy evaluation of a table trained on one environment inside another.
/// Environment ids name the registry entries ("deliberation-single-ep",
/// "patrol-module", ...). Identical train and eval ids reduce to plain
/// evaluation.
pub fn cross_eval(
    trained: &QTable,
    train_env_id: &str,
    eval_env_id: &str,
    episodes: u32,
    seed: u64,
) -> Result<MetricsRow, ExperimentError> {
    let bs = BootstrapConfig::default();
    let train_env = env_by_id(train_env_id)?;
    let eval_env = env_by_id(eval_env_id)?;
    if train_env.alphabet() != eval_env.alphabet() {
        return Err(ExperimentError::AlphabetMismatch {
            table: train_env.alphabet(),
            env: eval_env.alphabet(),
        });
    }
    check_alphabet(trained, &eval_env.alphabet())?;
    let method = format!("{}->{}", semantics_tag(train_env_id), semantics_tag(eval_env_id));
    match eval_env {
        AnyEnv::Delib(env) => eval_delib_env(&env, trained, &method, episodes, seed, &bs),
        AnyEnv::Patrol(env) => {
            let traces = patrol_traces_q(&env, trained, true, episodes, seed)?;
            patrol_row(env.name(), &method, &traces, &bs)
        }
    }
}

/// The four-row train-semantics x eval-semantics table for a deliberation
/// experiment.
pub fn cross_eval_experiment(
    id: ExperimentId,
    spec: &ExperimentSpec,
    tables: &BTreeMap<String, QTable>,
) -> Result<Vec<MetricsRow>, ExperimentError> {
    if !matches!(
        id,
        ExperimentId::DeliberationSingle | ExperimentId::DeliberationSequential
    ) {
        return Err(ExperimentError::Config(
            "cross-eval is defined for the deliberation experiments".into(),
        ));
    }
    let order = [("ep", "ep"), ("ep", "step"), ("step", "step"), ("step", "ep")];
    let mut rows = Vec::new();
    for (train_m, eval_m) in order {
        let table = tables
            .get(train_m)
            .ok_or_else(|| ExperimentError::MissingTable(PathBuf::from(train_m)))?;
        let env = delib_env(id, spec.deliberation.clone(), semantics_of(eval_m));
        let method = format!("{train_m}->{eval_m}");
        rows.push(eval_delib_env(
            &env,
            table,
            &method,
            spec.eval_episodes,
            spec.seed,
            &spec.bootstrap,
        )?);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Manifests and file outputs

/// FNV-1a, 64-bit. Stable content fingerprint for manifests.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactStamp {
    pub bytes: u64,
    pub fnv64: String,
}

pub fn stamp_bytes(bytes: &[u8]) -> ArtifactStamp {
    ArtifactStamp { bytes: bytes.len() as u64, fnv64: format!("{:016x}", fnv64(bytes)) }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub experiment: String,
    pub config_json: String,
    pub config_hash: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, ArtifactStamp>,
    pub artifacts: BTreeMap<String, ArtifactStamp>,
}

pub fn build_manifest(
    command: &str,
    experiment: &str,
    config_json: String,
    params: BTreeMap<String, String>,
    inputs: BTreeMap<String, ArtifactStamp>,
    artifacts: BTreeMap<String, ArtifactStamp>,
) -> Manifest {
    let config_hash = format!("{:016x}", fnv64(config_json.as_bytes()));
    Manifest {
        tool: "ep-lab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        experiment: experiment.into(),
        config_json,
        config_hash,
        params,
        inputs,
        artifacts,
    }
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub written: Vec<PathBuf>,
    pub rows: Option<Vec<MetricsRow>>,
}

fn write_bytes(path: &Path, data: &[u8]) -> Result<(), ExperimentError> {
    fs::write(path, data).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn qtable_path(out: &Path, id: ExperimentId, method: &str) -> PathBuf {
    out.join(format!("{}-{}.qtable", id.name(), method))
}

fn train_log_csv(report: &TrainReport) -> String {
    let mut s = String::from("start_episode,episodes,mean_return\n");
    for b in &report.blocks {
        s.push_str(&format!("{},{},{:.6}\n", b.start_episode, b.episodes, b.mean_return));
    }
    s
}

fn finish_run(
    command: &str,
    manifest_stem: String,
    id: ExperimentId,
    spec: &ExperimentSpec,
    params: BTreeMap<String, String>,
    out_dir: &Path,
    inputs: BTreeMap<String, ArtifactStamp>,
    files: Vec<(PathBuf, Vec<u8>)>,
    rows: Option<Vec<MetricsRow>>,
) -> Result<RunArtifacts, ExperimentError> {
    fs::create_dir_all(out_dir)
        .map_err(|source| ExperimentError::Io { path: out_dir.to_path_buf(), source })?;
    let mut artifacts = BTreeMap::new();
    let mut written = Vec::new();
    for (path, data) in &files {
        write_bytes(path, data)?;
        artifacts.insert(file_name(path), stamp_bytes(data));
        written.push(path.clone());
    }
    let config_json = serde_json::to_string_pretty(spec).expect("spec serializes");
    let manifest = build_manifest(command, id.name(), config_json, params, inputs, artifacts);
    let manifest_path = out_dir.join(format!("{manifest_stem}-manifest.json"));
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    manifest_bytes.push(b'\n');
    write_bytes(&manifest_path, &manifest_bytes)?;
    written.push(manifest_path.clone());
    Ok(RunArtifacts { manifest, manifest_path, written, rows })
}

/// Trains every selected trainable method and writes one table file and one
/// per-1000-episode training log per method, plus the run manifest.
pub fn run_train(
    id: ExperimentId,
    spec: &ExperimentSpec,
    out_dir: &Path,
) -> Result<RunArtifacts, ExperimentError> {
    let trained = train_experiment(id, spec)?;
    let mut files = Vec::new();
    for t in &trained {
        files.push((qtable_path(out_dir, id, &t.method), t.table.serialize().into_bytes()));
        files.push((
            out_dir.join(format!("{}-{}-train.csv", id.name(), t.method)),
            train_log_csv(&t.report).into_bytes(),
        ));
    }
    finish_run(
        "train",
        format!("{}-train", id.name()),
        id,
        spec,
        BTreeMap::new(),
        out_dir,
        BTreeMap::new(),
        files,
        None,
    )
}

/// Records one seeded patrol episode as a JSONL trace file for rendering.
/// Scripted methods need no table; `ep` and `loop` load theirs from
/// `out_dir` like the eval command does.
pub fn run_trace(
    id: ExperimentId,
    spec: &ExperimentSpec,
    method: &str,
    seed: u64,
    out_dir: &Path,
) -> Result<RunArtifacts, ExperimentError> {
    if !matches!(
        id,
        ExperimentId::PatrolModule | ExperimentId::PatrolStateD2 | ExperimentId::PatrolStateD3
    ) {
        return Err(ExperimentError::Config(
            "the trace command supports the patrol experiments only".into(),
        ));
    }
    if !id.methods().contains(&method) {
        return Err(ExperimentError::Config(format!(
            "unknown method `{method}` for {id}; valid methods: {}",
            id.methods().join(", ")
        )));
    }
    let env = patrol_env(id, spec.patrol.clone())?;
    let mut inputs = BTreeMap::new();
    let trace = match method {
        "patch" | "patchpro" => {
            let phases = spec.patrol.phases.clone().ok_or_else(|| {
                ExperimentError::Config("scripted patrol methods need handling phases".into())
            })?;
            let policy = if method == "patch" {
                ScriptedPatrol::patch(phases)
            } else {
                ScriptedPatrol::patch_pro(phases, spec.patrol.resolve_ticks)
            };
            run_episode(&env, &policy, &StatusExtractor, seed)?
        }
        _ => {
            let (tables, ins) = load_tables(id, &[method], out_dir)?;
            inputs = ins;
            let adapter = PatrolAdapter { n_phases: env.n_phases(), every_tick: method == "ep" };
            let table = &tables[method];
            check_alphabet(table, &adapter.alphabet())?;
            let policy = GreedyQPolicy { table, adapter: &adapter };
            run_episode(&env, &policy, &DpExtractor(&adapter), seed)?
        }
    };
    let mut buf = Vec::new();
    trace
        .write_jsonl(&mut buf)
        .map_err(|e| ExperimentError::Config(format!("trace serialization: {e}")))?;
    let stem = format!("{}-{}-seed{}", id.name(), method, seed);
    let files = vec![(out_dir.join(format!("{stem}.trace.jsonl")), buf)];
    let params = BTreeMap::from([
        ("method".to_string(), method.to_string()),
        ("seed".to_string(), seed.to_string()),
    ]);
    finish_run("trace", format!("{stem}-trace"), id, spec, params, out_dir, inputs, files, None)
}

fn load_tables(
    id: ExperimentId,
    methods: &[&str],
    out_dir: &Path,
) -> Result<(BTreeMap<String, QTable>, BTreeMap<String, ArtifactStamp>), ExperimentError> {
    let mut tables = BTreeMap::new();
    let mut inputs = BTreeMap::new();
    for method in methods {
        let path = qtable_path(out_dir, id, method);
        let text = fs::read_to_string(&path)
            .map_err(|_| ExperimentError::MissingTable(path.clone()))?;
        let table = QTable::parse(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        inputs.insert(file_name(&path), stamp_bytes(text.as_bytes()));
        tables.insert(method.to_string(), table);
    }
    Ok((tables, inputs))
}

/// Evaluates every selected method, reading trained tables from `out_dir`,
/// and writes the metrics CSV, the Markdown table, and the run manifest.
pub fn run_eval(
    id: ExperimentId,
    spec: &ExperimentSpec,
    out_dir: &Path,
) -> Result<RunArtifacts, ExperimentError> {
    let needed: Vec<&str> = selected_methods(id, spec)
        .into_iter()
        .filter(|m| id.trainable_methods().contains(m))
        .collect();
    let (tables, inputs) = load_tables(id, &needed, out_dir)?;
    let rows = eval_experiment(id, spec, &tables)?;
    let files = vec![
        (out_dir.join(format!("{}-metrics.csv", id.name())), rows_to_csv(&rows).into_bytes()),
        (out_dir.join(format!("{}-metrics.md", id.name())), rows_to_markdown(&rows).into_bytes()),
    ];
    finish_run(
        "eval",
        format!("{}-eval", id.name()),
        id,
        spec,
        BTreeMap::new(),
        out_dir,
        inputs,
        files,
        Some(rows),
    )
}

/// The four-row cross-semantics table for a deliberation experiment, from
/// tables trained by `run_train`.
pub fn run_cross_eval(
    id: ExperimentId,
    spec: &ExperimentSpec,
    out_dir: &Path,
) -> Result<RunArtifacts, ExperimentError> {
    let (tables, inputs) = load_tables(id, &["ep", "step"], out_dir)?;
    let rows = cross_eval_experiment(id, spec, &tables)?;
    let files = vec![
        (
            out_dir.join(format!("{}-cross-metrics.csv", id.name())),
            rows_to_csv(&rows).into_bytes(),
        ),
        (
            out_dir.join(format!("{}-cross-metrics.md", id.name())),
            rows_to_markdown(&rows).into_bytes(),
        ),
    ];
    finish_run(
        "cross-eval",
        format!("{}-cross-eval", id.name()),
        id,
        spec,
        BTreeMap::new(),
        out_dir,
        inputs,
        files,
        Some(rows),
    )
}

// ---------------------------------------------------------------------------
// Replay

#[derive(Debug, Clone, Serialize)]
pub struct RerunReport {
    pub command: String,
    pub experiment: String,
    pub matched: Vec<String>,
    pub mismatched: Vec<String>,
}

impl RerunReport {
    pub fn ok(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Re-executes the run a manifest describes inside `work_dir` and compares
/// every produced artifact against the recorded stamps. Input tables are
/// staged from the manifest's directory after hash verification.
pub fn rerun_manifest(
    manifest_path: &Path,
    work_dir: &Path,
) -> Result<RerunReport, ExperimentError> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|source| ExperimentError::Io { path: manifest_path.to_path_buf(), source })?;
    let man: Manifest = serde_json::from_str(&text)
        .map_err(|e| ExperimentError::Config(format!("{}: {e}", manifest_path.display())))?;
    let id = ExperimentId::from_str(&man.experiment)?;
    let spec: ExperimentSpec = serde_json::from_str(&man.config_json)
        .map_err(|e| ExperimentError::Config(format!("manifest config: {e}")))?;

    fs::create_dir_all(work_dir)
        .map_err(|source| ExperimentError::Io { path: work_dir.to_path_buf(), source })?;
    let src_dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    for (name, recorded) in &man.inputs {
        let src = src_dir.join(name);
        let data = fs::read(&src).map_err(|_| ExperimentError::MissingTable(src.clone()))?;
        if stamp_bytes(&data) != *recorded {
            return Err(ExperimentError::Config(format!(
                "input {name} does not match the manifest stamp"
            )));
        }
        write_bytes(&work_dir.join(name), &data)?;
    }

    let out = match man.command.as_str() {
        "train" => run_train(id, &spec, work_dir)?,
        "eval" => run_eval(id, &spec, work_dir)?,
        "cross-eval" => run_cross_eval(id, &spec, work_dir)?,
        "trace" => {
            let method = man
                .params
                .get("method")
                .ok_or_else(|| ExperimentError::Config("trace manifest lacks a method".into()))?;
            let seed: u64 = man
                .params
                .get("seed")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ExperimentError::Config("trace manifest lacks a seed".into()))?;
            run_trace(id, &spec, method, seed, work_dir)?
        }
        other => {
            return Err(ExperimentError::Config(format!(
                "manifest command `{other}` cannot be rerun"
            )))
        }
    };

    let mut matched = Vec::new();
    let mut mismatched = Vec::new();
    for (name, recorded) in &man.artifacts {
        let produced = out.manifest.artifacts.get(name);
        if produced == Some(recorded) {
            matched.push(name.clone());
        } else {
            mismatched.push(name.clone());
        }
    }
    for name in out.manifest.artifacts.keys() {
        if !man.artifacts.contains_key(name) {
            mismatched.push(name.clone());
        }
    }
    Ok(RerunReport {
        command: man.command,
        experiment: man.experiment,
        matched,
        mismatched,
    })
}
