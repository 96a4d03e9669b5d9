//! Episode-set statistics: percentile-bootstrap confidence intervals, the
//! metric row emitted by every evaluation, and selection-distribution
//! summaries.

use serde::{Deserialize, Serialize};

use crate::deliberation::{selected_mode, DelibAnnotation, DelibObs, MODES};
use crate::ep::EpisodeTrace;
use crate::rng::named_stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub resamples: u32,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { resamples: 1000, level: 0.95, seed: 42 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ci {
    pub point: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot bootstrap an empty sample")]
    EmptySample,
    #[error("rate denominator sums to zero")]
    ZeroDenominator,
}

/// Input to the bootstrap: either raw per-episode values averaged with the
/// sample mean, or per-episode (numerator, denominator) count pairs whose
/// statistic is the pooled rate sum(num)/sum(den).
#[derive(Debug, Clone, Copy)]
pub enum Sample<'a> {
    Values(&'a [f64]),
    Counts(&'a [(u64, u64)]),
}

impl Sample<'_> {
    fn len(&self) -> usize {
        match self {
            Sample::Values(v) => v.len(),
            Sample::Counts(c) => c.len(),
        }
    }

    fn statistic(&self, pick: Option<(&mut crate::rng::Stream, usize)>) -> f64 {
        use rand::Rng;
        match self {
            Sample::Values(v) => {
                let n = v.len();
                let mut sum = 0.0;
                match pick {
                    Some((rng, _)) => {
                        for _ in 0..n {
                            sum += v[rng.random_range(0..n)];
                        }
                    }
                    None => sum = v.iter().sum(),
                }
                sum / n as f64
            }
            Sample::Counts(c) => {
                let n = c.len();
                let (mut num, mut den) = (0u64, 0u64);
                match pick {
                    Some((rng, _)) => {
                        for _ in 0..n {
                            let (a, b) = c[rng.random_range(0..n)];
                            num += a;
                            den += b;
                        }
                    }
                    None => {
                        for (a, b) in *c {
                            num += a;
                            den += b;
                        }
                    }
                }
                if den == 0 {
                    0.0
                } else {
                    num as f64 / den as f64
                }
            }
        }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = q * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    let frac = idx - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Point estimate on the full sample plus half the percentile-bootstrap
/// interval width at the configured level. Deterministic given the seed.
pub fn bootstrap_ci(sample: Sample, cfg: &BootstrapConfig) -> Result<Ci, MetricsError> {
    if sample.len() == 0 {
        return Err(MetricsError::EmptySample);
    }
    if let Sample::Counts(c) = sample {
        if c.iter().map(|&(_, d)| d).sum::<u64>() == 0 {
            return Err(MetricsError::ZeroDenominator);
        }
    }
    let point = sample.statistic(None);
    let mut rng = named_stream(cfg.seed, "bootstrap");
    let mut stats: Vec<f64> = (0..cfg.resamples)
        .map(|_| sample.statistic(Some((&mut rng, sample.len()))))
        .collect();
    stats.sort_by(f64::total_cmp);
    let lo_q = (1.0 - cfg.level) / 2.0;
    let lo = percentile(&stats, lo_q);
    let hi = percentile(&stats, 1.0 - lo_q);
    Ok(Ci { point, half_width: (hi - lo) / 2.0 })
}

pub fn bootstrap_mean(values: &[f64], cfg: &BootstrapConfig) -> Result<Ci, MetricsError> {
    bootstrap_ci(Sample::Values(values), cfg)
}

pub fn bootstrap_rate(counts: &[(u64, u64)], cfg: &BootstrapConfig) -> Result<Ci, MetricsError> {
    bootstrap_ci(Sample::Counts(counts), cfg)
}

/// One evaluated (environment, method) cell. Fields that do not apply to the
/// environment family stay None and render as empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env: String,
    pub method: String,
    pub episodes: u32,
    pub mean_return: Ci,
    pub success_rate: Option<Ci>,
    pub timeout_rate: Option<Ci>,
    pub mode_usage: Vec<Ci>,
    pub resolve_rate: Option<Ci>,
    pub expire_rate: Option<Ci>,
    pub ticks_per_alarm: Option<Ci>,
    pub interrupt_cost: Option<Ci>,
    pub utility: Option<Ci>,
    pub balanced: Option<Ci>,
    pub latency: Option<Ci>,
    pub main_score: Option<Ci>,
}

impl MetricsRow {
    pub fn new(env: impl Into<String>, method: impl Into<String>, episodes: u32, mean_return: Ci) -> Self {
        Self {
            env: env.into(),
            method: method.into(),
            episodes,
            mean_return,
            success_rate: None,
            timeout_rate: None,
            mode_usage: Vec::new(),
            resolve_rate: None,
            expire_rate: None,
            ticks_per_alarm: None,
            interrupt_cost: None,
            utility: None,
            balanced: None,
            latency: None,
            main_score: None,
        }
    }

    fn scalar_columns(&self) -> [(&'static str, Option<&Ci>); 10] {
        [
            ("success_rate", self.success_rate.as_ref()),
            ("timeout_rate", self.timeout_rate.as_ref()),
            ("resolve_rate", self.resolve_rate.as_ref()),
            ("expire_rate", self.expire_rate.as_ref()),
            ("ticks_per_alarm", self.ticks_per_alarm.as_ref()),
            ("interrupt_cost", self.interrupt_cost.as_ref()),
            ("utility", self.utility.as_ref()),
            ("balanced", self.balanced.as_ref()),
            ("latency", self.latency.as_ref()),
            ("main_score", self.main_score.as_ref()),
        ]
    }
}

const MODE_COLS: usize = MODES;

pub fn rows_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("env,method,episodes,mean_return,mean_return_hw");
    for m in 1..=MODE_COLS {
        out.push_str(&format!(",mode{m},mode{m}_hw"));
    }
    for (name, _) in MetricsRow::new("", "", 0, Ci { point: 0.0, half_width: 0.0 }).scalar_columns()
    {
        out.push_str(&format!(",{name},{name}_hw"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6}",
            r.env, r.method, r.episodes, r.mean_return.point, r.mean_return.half_width
        ));
        for m in 0..MODE_COLS {
            match r.mode_usage.get(m) {
                Some(ci) => out.push_str(&format!(",{:.6},{:.6}", ci.point, ci.half_width)),
                None => out.push_str(",,"),
            }
        }
        for (_, ci) in r.scalar_columns() {
            match ci {
                Some(ci) => out.push_str(&format!(",{:.6},{:.6}", ci.point, ci.half_width)),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Markdown table keeping only the columns some row actually fills.
pub fn rows_to_markdown(rows: &[MetricsRow]) -> String {
    let any_modes = rows.iter().any(|r| !r.mode_usage.is_empty());
    let mut active: Vec<&'static str> = Vec::new();
    if let Some(first) = rows.first() {
        for (name, _) in first.scalar_columns() {
            if rows.iter().any(|r| {
                r.scalar_columns().iter().any(|(n, ci)| *n == name && ci.is_some())
            }) {
                active.push(name);
            }
        }
    }
    let mut out = String::from("| env | method | episodes | return |");
    if any_modes {
        for m in 1..=MODE_COLS {
            out.push_str(&format!(" mode {m} |"));
        }
    }
    for name in &active {
        out.push_str(&format!(" {} |", name.replace('_', " ")));
    }
    out.push('\n');
    let cols = 4 + if any_modes { MODE_COLS } else { 0 } + active.len();
    out.push_str(&format!("|{}\n", " --- |".repeat(cols)));
    for r in rows {
        let cell = |ci: &Ci| format!(" {:.3} ± {:.3} |", ci.point, ci.half_width);
        out.push_str(&format!("| {} | {} | {} |", r.env, r.method, r.episodes));
        out.push_str(&cell(&r.mean_return));
        if any_modes {
            for m in 0..MODE_COLS {
                match r.mode_usage.get(m) {
                    Some(ci) => out.push_str(&cell(ci)),
                    None => out.push_str("  |"),
                }
            }
        }
        for name in &active {
            let ci = r.scalar_columns().iter().find(|(n, _)| n == name).and_then(|(_, c)| *c);
            match ci {
                Some(ci) => out.push_str(&cell(ci)),
                None => out.push_str("  |"),
            }
        }
        out.push('\n');
    }
    out
}

pub const URGENCY_BUCKETS: usize = 5;

/// Frequency of each selected mode per urgency bucket; rows normalized to
/// sum to 1 (rows for never-seen buckets stay all zero).
pub fn mode_distribution_by_urgency(
    traces: &[EpisodeTrace<DelibAnnotation, DelibObs>],
) -> [[f64; MODES]; URGENCY_BUCKETS] {
    let mut counts = [[0u64; MODES]; URGENCY_BUCKETS];
    for trace in traces {
        for tick in &trace.ticks {
            let Some(ev) = tick.observations.events.iter().find(|e| e.id == "task_ready") else {
                continue;
            };
            let Some(mode) = selected_mode(&tick.interventions) else {
                continue;
            };
            let bucket = ev.payload.urgency_bucket as usize;
            if bucket < URGENCY_BUCKETS && mode < MODES {
                counts[bucket][mode] += 1;
            }
        }
    }
    let mut out = [[0.0; MODES]; URGENCY_BUCKETS];
    for (row, crow) in out.iter_mut().zip(&counts) {
        let total: u64 = crow.iter().sum();
        if total > 0 {
            for (cell, c) in row.iter_mut().zip(crow) {
                *cell = *c as f64 / total as f64;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deliberation::{make_single_task_env, mode_menu, DelibPhase, DeliberationConfig, Semantics};
    use crate::ep::{InterventionSet, Tick};
    use crate::episode::{run_episode, Policy};
    use crate::rng::Stream;

    fn cfg() -> BootstrapConfig {
        BootstrapConfig::default()
    }

    #[test]
    fn constant_sample_has_zero_width() {
        let ci = bootstrap_mean(&[5.0, 5.0, 5.0, 5.0], &cfg()).unwrap();
        assert_eq!(ci.point, 5.0);
        assert_eq!(ci.half_width, 0.0);
    }

    #[test]
    fn all_successes_rate_is_one_with_zero_width() {
        let ci = bootstrap_rate(&[(1, 1); 6], &cfg()).unwrap();
        assert_eq!(ci.point, 1.0);
        assert_eq!(ci.half_width, 0.0);
    }

    #[test]
    fn two_point_sample_spans_its_range() {
        // Resamples of {0, 1} take means 0, 0.5, 1 with weights 1/4, 1/2,
        // 1/4, so the 95% percentile interval is [0, 1].
        let ci = bootstrap_mean(&[0.0, 1.0], &cfg()).unwrap();
        assert_eq!(ci.point, 0.5);
        assert!((ci.half_width - 0.5).abs() < 0.05, "half width {}", ci.half_width);

        let ci = bootstrap_rate(&[(1, 1), (0, 1)], &cfg()).unwrap();
        assert_eq!(ci.point, 0.5);
        assert!((ci.half_width - 0.5).abs() < 0.05, "half width {}", ci.half_width);
    }

    #[test]
    fn empty_samples_error() {
        assert_eq!(bootstrap_mean(&[], &cfg()), Err(MetricsError::EmptySample));
        assert_eq!(bootstrap_rate(&[], &cfg()), Err(MetricsError::EmptySample));
        assert_eq!(bootstrap_rate(&[(0, 0), (0, 0)], &cfg()), Err(MetricsError::ZeroDenominator));
    }

    #[test]
    fn bootstrap_is_deterministic_in_the_seed() {
        let values: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let a = bootstrap_mean(&values, &cfg()).unwrap();
        let b = bootstrap_mean(&values, &cfg()).unwrap();
        assert_eq!(a, b);
        let other = BootstrapConfig { seed: 43, ..cfg() };
        let c = bootstrap_mean(&values, &other).unwrap();
        assert_eq!(a.point, c.point);
        assert_ne!(a.half_width, c.half_width, "different resamples");
    }

    #[test]
    fn width_shrinks_like_root_n_for_coin_flips() {
        let flips = |n: usize| -> Vec<(u64, u64)> { (0..n).map(|i| ((i % 2) as u64, 1)).collect() };
        let hw100 = bootstrap_rate(&flips(100), &cfg()).unwrap().half_width;
        let hw400 = bootstrap_rate(&flips(400), &cfg()).unwrap().half_width;
        let ratio = hw100 / hw400;
        assert!(ratio > 4.0 / 3.0 && ratio < 3.0, "ratio {ratio}");
    }

    #[test]
    fn csv_and_markdown_round_out_the_row() {
        let ci = |p: f64| Ci { point: p, half_width: 0.01 };
        let mut row = MetricsRow::new("deliberation-single-ep", "q-ep", 100, ci(1.5));
        row.success_rate = Some(ci(0.9));
        row.timeout_rate = Some(ci(0.02));
        row.mode_usage = (0..5).map(|m| ci(0.2 * m as f64)).collect();
        let csv = rows_to_csv(&[row.clone()]);
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        let body = lines.next().unwrap();
        assert_eq!(header.split(',').count(), body.split(',').count());
        assert!(header.starts_with("env,method,episodes,mean_return,mean_return_hw,mode1"));
        assert!(body.starts_with("deliberation-single-ep,q-ep,100,1.500000,0.010000"));
        assert!(body.ends_with(",,,,,,,,,,,,,,,,"), "patrol and assistant cells empty");

        let md = rows_to_markdown(&[row]);
        assert!(md.contains("| success rate |"));
        assert!(!md.contains("resolve"), "inactive columns dropped");
        assert!(md.contains("0.900 ± 0.010"));
    }

    struct AlwaysMode(usize);
    impl Policy<crate::deliberation::DeliberationEnv> for AlwaysMode {
        type Info = ();
        fn decision_gate(&self, ann: &DelibAnnotation, _tick: Tick) -> bool {
            matches!(ann.phase, DelibPhase::Deciding { .. })
        }
        fn decide(&self, _info: &(), _rng: &mut Stream) -> InterventionSet {
            mode_menu().swap_remove(self.0)
        }
    }

    struct Unit;
    impl crate::episode::Extractor<DelibObs> for Unit {
        type Info = ();
        fn extract(&self, _history: &crate::ep::History<DelibObs>, _tick: Tick) {}
    }

    #[test]
    fn fixed_mode_concentrates_its_column() {
        let env = make_single_task_env(DeliberationConfig::single_task(), Semantics::Ep);
        let traces: Vec<_> = (0..200)
            .map(|s| run_episode(&env, &AlwaysMode(0), &Unit, s).unwrap())
            .collect();
        let dist = mode_distribution_by_urgency(&traces);
        for row in dist {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                assert_eq!(row[0], 1.0);
                assert_eq!(row[1..].iter().sum::<f64>(), 0.0);
            }
        }
    }

    #[test]
    fn uniform_selection_is_flat_in_every_bucket() {
        // 10000 uniformly random selections per urgency bucket.
        use crate::ep::{ObservationSet, TraceSummary, TraceTick};
        use rand::Rng;
        let mut rng = named_stream(7, "uniform-selections");
        let mut ticks = Vec::new();
        for bucket in 0..URGENCY_BUCKETS as u8 {
            for i in 0..10_000u32 {
                let mut obs = ObservationSet::empty();
                obs.push(
                    "task_ready",
                    DelibObs { task: 0, urgency_bucket: bucket, difficulty_bin: 0 },
                    Tick(i),
                );
                ticks.push(TraceTick {
                    tick: Tick(i),
                    annotation: DelibAnnotation {
                        clock_s: 0.0,
                        task: 0,
                        phase: DelibPhase::Deciding { urgency_bucket: bucket, difficulty_bin: 0 },
                    },
                    interventions: mode_menu().swap_remove(rng.random_range(0..MODES)),
                    observations: obs,
                    utilities: Vec::new(),
                });
            }
        }
        let trace = EpisodeTrace {
            env: "deliberation-single-ep".into(),
            seed: 0,
            gamma_tick: 1.0,
            ticks,
            summary: TraceSummary {
                ticks: 0,
                total_return: 0.0,
                tag_totals: Default::default(),
                counters: Default::default(),
            },
        };
        let dist = mode_distribution_by_urgency(std::slice::from_ref(&trace));
        for (b, row) in dist.iter().enumerate() {
            let total: f64 = row.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "row {b} sums to {total}");
            for (m, cell) in row.iter().enumerate() {
                assert!((cell - 0.2).abs() < 0.02, "bucket {b} mode {} at {cell}", m + 1);
            }
        }
    }
}
