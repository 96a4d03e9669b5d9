//! Command-line front end: train, eval, cross-eval, trace, render, rerun.
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ep_lab::experiments::{
    build_manifest, load_spec, rerun_manifest, run_cross_eval, run_eval, run_train, run_trace,
    stamp_bytes, ConfigError, ExperimentError, ExperimentId, ExperimentSpec, RunArtifacts,
};
use ep_lab::metrics::{rows_to_csv, rows_to_markdown};
use ep_lab::render::{find_first_event, render_window, FindCriterion, PatrolTrace, RenderFormat};

#[derive(Parser)]
#[command(
    name = "ep-lab",
    version,
    about = "Engagement-process environments: training, evaluation, and trace rendering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train tables for an experiment; writes one table and training log per method.
    Train(RunArgs),
    /// Evaluate every method of an experiment; writes metrics as CSV and Markdown.
    Eval(EvalArgs),
    /// Evaluate each trained deliberation semantics under both clock semantics.
    CrossEval(EvalArgs),
    /// Record one seeded patrol episode as a JSONL trace file.
    Trace(TraceArgs),
    /// Render consecutive tick panels from a patrol trace file.
    Render(RenderArgs),
    /// Re-execute a run from its manifest and verify artifacts byte-for-byte.
    Rerun(RerunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment id (deliberation-single, deliberation-sequential, patrol-module,
    /// patrol-state-d2, patrol-state-d3, assistant-single, assistant-milestones).
    #[arg(long)]
    experiment: String,
    /// TOML file merged over the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Episode count override (training episodes for train, evaluation episodes otherwise).
    #[arg(long)]
    episodes: Option<u32>,
    /// Output directory (default: config out_dir, then $EP_LAB_OUT, then ".").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel evaluation (default: available processors).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Table format echoed to stdout; both files are always written.
    #[arg(long, value_enum, default_value_t = TableFormat::Md)]
    format: TableFormat,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TableFormat {
    Csv,
    Md,
}

#[derive(Args)]
struct TraceArgs {
    /// Patrol experiment id.
    #[arg(long)]
    experiment: String,
    /// Method to roll out: ep, loop (tables from the output directory), patch, patchpro.
    #[arg(long)]
    method: String,
    /// TOML file merged over the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Episode seed (default: the config seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config out_dir, then $EP_LAB_OUT, then ".").
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    /// Patrol trace file (JSONL) produced by the trace command.
    #[arg(long)]
    trace: PathBuf,
    /// Event the window starts at.
    #[arg(long, value_enum, conflicts_with = "start")]
    criterion: Option<CriterionArg>,
    /// Fixed start tick instead of an event search.
    #[arg(long)]
    start: Option<usize>,
    /// Number of consecutive tick panels.
    #[arg(long, default_value_t = 6)]
    panels: usize,
    /// Output document format.
    #[arg(long, value_enum, default_value_t = DocFormat::Ascii)]
    format: DocFormat,
    /// Output directory (default: $EP_LAB_OUT, then ".").
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CriterionArg {
    FirstInterruption,
    FirstAlarmDuringHandling,
}

impl CriterionArg {
    fn to_criterion(self) -> FindCriterion {
        match self {
            CriterionArg::FirstInterruption => FindCriterion::FirstInterruption,
            CriterionArg::FirstAlarmDuringHandling => FindCriterion::FirstAlarmDuringHandling,
        }
    }

    fn label(self) -> &'static str {
        match self {
            CriterionArg::FirstInterruption => "first_interruption",
            CriterionArg::FirstAlarmDuringHandling => "first_alarm_during_handling",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DocFormat {
    Ascii,
    Svg,
}

#[derive(Args)]
struct RerunArgs {
    /// Manifest file written by a previous run.
    #[arg(long)]
    manifest: PathBuf,
    /// Scratch directory for the re-executed run (default: a fresh temp dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { message: message.into(), code: 1 }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self { message: message.into(), code: 2 }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        let code = match e {
            ExperimentError::UnknownExperiment(_)
            | ExperimentError::UnknownEnv(_)
            | ExperimentError::NothingToTrain(_)
            | ExperimentError::MissingTable(_)
            | ExperimentError::AlphabetMismatch { .. }
            | ExperimentError::Config(_) => 1,
            ExperimentError::Episode(_)
            | ExperimentError::Metrics(_)
            | ExperimentError::Io { .. } => 2,
        };
        CliError { message: e.to_string(), code }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            setup_workers(args.workers)?;
            let (id, spec, out) = resolve(&args, EpisodeTarget::Train)?;
            let arts = run_train(id, &spec, &out)?;
            print_written(&arts);
            Ok(())
        }
        Command::Eval(args) => {
            setup_workers(args.run.workers)?;
            let (id, spec, out) = resolve(&args.run, EpisodeTarget::Eval)?;
            let arts = run_eval(id, &spec, &out)?;
            echo_rows(&arts, args.format);
            print_written(&arts);
            Ok(())
        }
        Command::CrossEval(args) => {
            setup_workers(args.run.workers)?;
            let (id, spec, out) = resolve(&args.run, EpisodeTarget::Eval)?;
            let arts = run_cross_eval(id, &spec, &out)?;
            echo_rows(&arts, args.format);
            print_written(&arts);
            Ok(())
        }
        Command::Trace(args) => {
            let id = ExperimentId::from_str(&args.experiment)?;
            let spec = load_spec(id, args.config.as_deref())?;
            let seed = args.seed.unwrap_or(spec.seed);
            let out = out_dir(args.out.as_deref(), &spec);
            let arts = run_trace(id, &spec, &args.method, seed, &out)?;
            print_written(&arts);
            Ok(())
        }
        Command::Render(args) => cmd_render(args),
        Command::Rerun(args) => cmd_rerun(args),
    }
}

enum EpisodeTarget {
    Train,
    Eval,
}

fn resolve(
    args: &RunArgs,
    target: EpisodeTarget,
) -> Result<(ExperimentId, ExperimentSpec, PathBuf), CliError> {
    let id = ExperimentId::from_str(&args.experiment)?;
    let mut spec = load_spec(id, args.config.as_deref())?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.episodes {
        if n == 0 {
            return Err(CliError::usage("--episodes must be positive"));
        }
        match target {
            EpisodeTarget::Train => spec.train_episodes = n,
            EpisodeTarget::Eval => spec.eval_episodes = n,
        }
    }
    let out = out_dir(args.out.as_deref(), &spec);
    Ok((id, spec, out))
}

fn out_dir(flag: Option<&Path>, spec: &ExperimentSpec) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| spec.out_dir.clone())
        .or_else(|| std::env::var_os("EP_LAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn setup_workers(workers: Option<usize>) -> Result<(), CliError> {
    let Some(n) = workers else { return Ok(()) };
    if n == 0 {
        return Err(CliError::usage("--workers must be positive"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::runtime(format!("worker pool: {e}")))
}

fn echo_rows(arts: &RunArtifacts, format: TableFormat) {
    if let Some(rows) = &arts.rows {
        match format {
            TableFormat::Csv => print!("{}", rows_to_csv(rows)),
            TableFormat::Md => print!("{}", rows_to_markdown(rows)),
        }
    }
}

fn print_written(arts: &RunArtifacts) {
    for path in &arts.written {
        println!("wrote {}", path.display());
    }
}

fn cmd_render(args: RenderArgs) -> Result<(), CliError> {
    let file = fs::File::open(&args.trace)
        .map_err(|e| CliError::usage(format!("cannot read trace file {}: {e}", args.trace.display())))?;
    let trace = PatrolTrace::read_jsonl(BufReader::new(file))
        .map_err(|e| CliError::usage(format!("trace file {}: {e}", args.trace.display())))?;

    let start = match (args.criterion, args.start) {
        (Some(criterion), None) => match find_first_event(&trace, criterion.to_criterion()) {
            Some(tick) => {
                let len = trace.ticks.len();
                (tick.0 as usize).min(len.saturating_sub(args.panels))
            }
            None => {
                eprintln!(
                    "warning: no {} event in {}",
                    criterion.label(),
                    args.trace.display()
                );
                return Err(CliError::runtime("no matching event"));
            }
        },
        (None, Some(start)) => start,
        (None, None) => return Err(CliError::usage("give either --criterion or --start")),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    let format = match args.format {
        DocFormat::Ascii => RenderFormat::Ascii,
        DocFormat::Svg => RenderFormat::Svg,
    };
    let doc = render_window(&trace, start, args.panels, format)
        .map_err(|e| CliError::usage(e.to_string()))?;

    let out = args
        .out
        .or_else(|| std::env::var_os("EP_LAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out.display())))?;
    let stem = trace_stem(&args.trace);
    let ext = if format == RenderFormat::Ascii { "txt" } else { "svg" };
    let doc_path = out.join(format!("{stem}-w{start}p{}.{ext}", args.panels));
    fs::write(&doc_path, &doc)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", doc_path.display())))?;

    let trace_bytes = fs::read(&args.trace)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", args.trace.display())))?;
    let params = BTreeMap::from([
        ("start".to_string(), start.to_string()),
        ("panels".to_string(), args.panels.to_string()),
        (
            "format".to_string(),
            if format == RenderFormat::Ascii { "ascii" } else { "svg" }.to_string(),
        ),
        (
            "criterion".to_string(),
            args.criterion.map(|c| c.label().to_string()).unwrap_or_else(|| "none".into()),
        ),
    ]);
    let trace_name = args
        .trace
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let manifest = build_manifest(
        "render",
        &trace.env,
        "{}".into(),
        params,
        BTreeMap::from([(trace_name, stamp_bytes(&trace_bytes))]),
        BTreeMap::from([(
            doc_path.file_name().unwrap().to_string_lossy().into_owned(),
            stamp_bytes(doc.as_bytes()),
        )]),
    );
    let manifest_path = out.join(format!("{stem}-render-manifest.json"));
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    fs::write(&manifest_path, bytes)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", manifest_path.display())))?;

    println!("wrote {}", doc_path.display());
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn trace_stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(".trace.jsonl")
        .or_else(|| name.strip_suffix(".jsonl"))
        .unwrap_or(&name)
        .to_string()
}

fn cmd_rerun(args: RerunArgs) -> Result<(), CliError> {
    let work = match args.out {
        Some(dir) => dir,
        None => std::env::temp_dir().join(format!("ep-lab-rerun-{}", std::process::id())),
    };
    let report = rerun_manifest(&args.manifest, &work)?;
    println!(
        "rerun {} {}: {} artifacts matched, {} mismatched",
        report.command,
        report.experiment,
        report.matched.len(),
        report.mismatched.len()
    );
    for name in &report.mismatched {
        println!("mismatch: {name}");
    }
    if report.ok() {
        Ok(())
    } else {
        Err(CliError::runtime("rerun did not reproduce every artifact"))
    }
}
