//! promptsens command line: augment, sweep, paraphrase-eval, aggregate,
//! stats, report.
//!
//! Exit codes: 0 success, 2 configuration error, 3 backend failure,
//! 4 replay miss.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use promptsens::augment::{
    count_char_differences, count_word_differences, load_paraphrases, load_thesaurus,
    synonym_augment, typo_augment, AugmentationRate, Method, Thesaurus,
};
use promptsens::backend::BackendError;
use promptsens::config::{ConfigError, RunConfig};
use promptsens::corpus::{load_dataset, Dataset};
use promptsens::hash::{file_fingerprint, stable_hash};
use promptsens::pipeline::{
    run_paraphrase_eval, run_sweep, PipelineError, SweepContext, SweepResult,
};
use promptsens::report::{curves_from_pairs, curves_from_points, render_svg, CurvePoint};
use promptsens::rundir::{
    rate_sort_key, read_pairs, read_points, PointRow, RunDir, RunManifest, PAIRS_FILE, POINTS_FILE,
};
use promptsens::stats::{friedman, kruskal_wallis, RankMatrix, TestResult};

#[derive(Parser)]
#[command(
    name = "promptsens",
    version,
    about = "Prompt-perturbation sensitivity harness for code generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Augment a dataset's prompts at one rate and write them as JSONL.
    Augment(AugmentArgs),
    /// Run the full rate sweep for every task and method.
    Sweep(SweepArgs),
    /// Run the paraphrase-bucket evaluation.
    ParaphraseEval(ParaphraseArgs),
    /// Pool pairwise scores from run directories into per-method curves.
    Aggregate(AggregateArgs),
    /// Significance tests over points CSV files.
    Stats(StatsArgs),
    /// Emit per-method curve CSVs and SVG charts from a run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    method: String,
    #[arg(long)]
    rate: f64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    thesaurus: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Continue a partially completed run directory.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    rate_step: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated method list, e.g. "typos,synonyms".
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct ParaphraseArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    paraphrases: Option<PathBuf>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AggregateArgs {
    /// Run directory; repeat to pool several runs.
    #[arg(long = "run", required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = "curves.csv")]
    output: PathBuf,
    /// Keep models separate instead of pooling across them.
    #[arg(long)]
    per_model: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestKind {
    Friedman,
    #[value(name = "kruskal-wallis")]
    KruskalWallis,
}

#[derive(Clone, Copy, ValueEnum)]
enum BlockBy {
    /// One block per task.
    Task,
    /// One block per (task, model) cell.
    TaskModel,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupBy {
    Model,
    Task,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long, value_enum)]
    test: TestKind,
    /// points.csv input; repeat for kruskal-wallis to form one group per
    /// file.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Blocking dimension for the Friedman test (required there).
    #[arg(long, value_enum)]
    block: Option<BlockBy>,
    /// Grouping column for a single-input Kruskal-Wallis test.
    #[arg(long, value_enum)]
    group_by: Option<GroupBy>,
    /// Restrict to one augmentation method.
    #[arg(long)]
    method: Option<String>,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum CliError {
    Config(String),
    Backend(String),
    ReplayMiss(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
            CliError::ReplayMiss(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Backend(m) | CliError::ReplayMiss(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Backend(BackendError::ReplayMiss { .. }) => {
                CliError::ReplayMiss(e.to_string())
            }
            ConfigError::Backend(inner) => CliError::Backend(inner.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::Generation {
                source: BackendError::ReplayMiss { .. },
                ..
            } => CliError::ReplayMiss(e.to_string()),
            PipelineError::Generation { .. } => CliError::Backend(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<promptsens::rundir::RunDirError> for CliError {
    fn from(e: promptsens::rundir::RunDirError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<promptsens::corpus::CorpusError> for CliError {
    fn from(e: promptsens::corpus::CorpusError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<promptsens::augment::AugmentError> for CliError {
    fn from(e: promptsens::augment::AugmentError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<promptsens::stats::StatsError> for CliError {
    fn from(e: promptsens::stats::StatsError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Augment(args) => cmd_augment(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::ParaphraseEval(args) => cmd_paraphrase_eval(args),
        Command::Aggregate(args) => cmd_aggregate(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn cmd_augment(args: AugmentArgs) -> Result<(), CliError> {
    let method = Method::parse(&args.method)?;
    let rate = AugmentationRate::new(args.rate)?;
    let dataset = load_dataset(&args.dataset)?;
    let thesaurus: Option<Thesaurus> = match method {
        Method::Synonyms => Some(load_thesaurus(args.thesaurus.as_ref().ok_or_else(
            || CliError::Config("synonym augmentation needs --thesaurus".to_string()),
        )?)?),
        Method::Typos => None,
        Method::Paraphrase => {
            return Err(CliError::Config(
                "paraphrases are ingested from files, not generated; use paraphrase-eval"
                    .to_string(),
            ))
        }
    };

    let mut lines = String::new();
    for task in &dataset.tasks {
        let seed = stable_hash(&[
            b"cli-augment",
            &args.seed.to_le_bytes(),
            task.id.as_bytes(),
            method.name().as_bytes(),
            format!("{}", args.rate).as_bytes(),
        ]);
        let mut augmented = match method {
            Method::Typos => typo_augment(&task.prompt, rate, seed),
            Method::Synonyms => synonym_augment(
                &task.prompt,
                rate,
                seed,
                thesaurus.as_ref().expect("loaded"),
            ),
            Method::Paraphrase => unreachable!(),
        };
        augmented.source_task = task.id.clone();
        let edits = match method {
            Method::Typos => count_char_differences(&task.prompt, &augmented.text),
            Method::Synonyms => count_word_differences(&task.prompt, &augmented.text),
            Method::Paraphrase => unreachable!(),
        };
        println!("{}: {} edits", task.id, edits);
        lines.push_str(&serde_json::to_string(&augmented).expect("augmented serializes"));
        lines.push('\n');
    }
    fs::write(&args.output, lines)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", args.output.display())))?;
    Ok(())
}

struct LoadedRun {
    config: RunConfig,
    dataset: Dataset,
    thesaurus: Option<Thesaurus>,
}

fn load_run(
    config_path: &Path,
    mutate: impl FnOnce(&mut RunConfig),
) -> Result<LoadedRun, CliError> {
    let mut config = RunConfig::load(config_path)?;
    mutate(&mut config);
    config.validate()?;
    let dataset = load_dataset(&config.dataset)?;
    let thesaurus = match &config.thesaurus {
        Some(path) => Some(load_thesaurus(path)?),
        None => None,
    };
    Ok(LoadedRun {
        config,
        dataset,
        thesaurus,
    })
}

fn fingerprints(config: &RunConfig) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    let mut add = |name: &str, path: Option<&Path>| {
        if let Some(path) = path {
            if let Ok(bytes) = fs::read(path) {
                map.insert(name.to_string(), file_fingerprint(&bytes));
            }
        }
    };
    add("dataset", Some(config.dataset.as_path()));
    add("thesaurus", config.thesaurus.as_deref());
    add("paraphrases", config.paraphrases.as_deref());
    add("cassette", config.cassette_path());
    map
}

/// Shared driver for sweep and paraphrase-eval: iterate work items in
/// deterministic order, persist each result as it completes, and summarize
/// failures. `execute` returns None for items to skip.
fn drive_run(
    run: &LoadedRun,
    resume: bool,
    items: Vec<(String, Method)>,
    mut execute: impl FnMut(&str, Method) -> Option<Result<SweepResult, PipelineError>>,
) -> Result<(), CliError> {
    let run_dir = RunDir::open(&run.config.output_dir)?;
    if !resume && run_dir.points_path().exists() {
        return Err(CliError::Config(format!(
            "{} already contains {POINTS_FILE}; pass --resume to continue it or pick a fresh directory",
            run_dir.path().display()
        )));
    }

    let mut failures: Vec<(String, Method, PipelineError)> = Vec::new();
    for (task_id, method) in items {
        match execute(&task_id, method) {
            None => continue,
            Some(Ok(result)) => {
                run_dir.append(&result)?;
                println!(
                    "{} {} [{}]: {} points, {} pairs",
                    result.task_id,
                    method,
                    result.model,
                    result.points.len(),
                    result.pairs.len()
                );
            }
            Some(Err(e)) => {
                eprintln!("{task_id} {method}: {e}");
                failures.push((task_id, method, e));
            }
        }
    }

    run_dir.write_manifest(&RunManifest {
        config: run.config.echo(),
        fingerprints: fingerprints(&run.config),
    })?;

    if failures.is_empty() {
        return Ok(());
    }
    let summary = failures
        .iter()
        .map(|(task, method, e)| format!("{task} {method}: {e}"))
        .collect::<Vec<_>>()
        .join("; ");
    let replay_miss = failures.iter().any(|(_, _, e)| {
        matches!(
            e,
            PipelineError::Generation {
                source: BackendError::ReplayMiss { .. },
                ..
            }
        )
    });
    let message = format!("{} swept combinations failed: {summary}", failures.len());
    if replay_miss {
        Err(CliError::ReplayMiss(message))
    } else {
        Err(CliError::Backend(message))
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let run = load_run(&args.config, |config| {
        if let Some(backend) = args.backend.clone() {
            config.backend = backend;
        }
        if let Some(output) = args.output.clone() {
            config.output_dir = output;
        }
        if let Some(n) = args.n_samples {
            config.n_samples = n;
        }
        if let Some(step) = args.rate_step {
            config.rate_step = step;
        }
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        if let Some(par) = args.parallelism {
            config.parallelism = par;
        }
        if let Some(methods) = &args.methods {
            config.methods = methods.split(',').map(|s| s.trim().to_string()).collect();
        }
    })?;
    let methods = run.config.parsed_methods()?;
    let backend = run.config.build_backend(&run.dataset)?;
    let envelope = run.config.envelope();
    let pipeline_config = run.config.pipeline_config();
    let ctx = SweepContext {
        backend: backend.as_ref(),
        envelope: &envelope,
        thesaurus: run.thesaurus.as_ref(),
        config: &pipeline_config,
    };

    let completed = if args.resume {
        RunDir::open(&run.config.output_dir)?.completed()?
    } else {
        BTreeSet::new()
    };
    let model = backend.model_name().to_string();

    let items: Vec<(String, Method)> = run
        .dataset
        .tasks
        .iter()
        .flat_map(|t| methods.iter().map(move |m| (t.id.clone(), *m)))
        .collect();
    drive_run(&run, args.resume, items, |task_id, method| {
        if completed.contains(&(
            model.clone(),
            task_id.to_string(),
            method.name().to_string(),
        )) {
            println!("{task_id} {method}: already complete, skipping");
            return None;
        }
        let task = run.dataset.task(task_id).expect("task from dataset");
        Some(run_sweep(task, method, &ctx))
    })
}

fn cmd_paraphrase_eval(args: ParaphraseArgs) -> Result<(), CliError> {
    let run = load_run(&args.config, |config| {
        if let Some(backend) = args.backend.clone() {
            config.backend = backend;
        }
        if let Some(output) = args.output.clone() {
            config.output_dir = output;
        }
        if let Some(n) = args.n_samples {
            config.n_samples = n;
        }
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        if let Some(paraphrases) = args.paraphrases.clone() {
            config.paraphrases = Some(paraphrases);
        }
    })?;
    let paraphrase_path =
        run.config.paraphrases.clone().ok_or_else(|| {
            CliError::Config("paraphrase-eval needs a paraphrases file".to_string())
        })?;
    let by_task = load_paraphrases(&paraphrase_path)?;

    let backend = run.config.build_backend(&run.dataset)?;
    let envelope = run.config.envelope();
    let pipeline_config = run.config.pipeline_config();
    let ctx = SweepContext {
        backend: backend.as_ref(),
        envelope: &envelope,
        thesaurus: run.thesaurus.as_ref(),
        config: &pipeline_config,
    };
    let completed = if args.resume {
        RunDir::open(&run.config.output_dir)?.completed()?
    } else {
        BTreeSet::new()
    };
    let model = backend.model_name().to_string();

    let items: Vec<(String, Method)> = run
        .dataset
        .tasks
        .iter()
        .map(|t| (t.id.clone(), Method::Paraphrase))
        .collect();
    drive_run(&run, args.resume, items, |task_id, method| {
        let Some(paraphrases) = by_task.get(task_id) else {
            log::warn!("{task_id}: no paraphrases on file, skipping");
            return None;
        };
        if completed.contains(&(
            model.clone(),
            task_id.to_string(),
            method.name().to_string(),
        )) {
            println!("{task_id} {method}: already complete, skipping");
            return None;
        }
        let task = run.dataset.task(task_id).expect("task from dataset");
        Some(run_paraphrase_eval(task, paraphrases, &ctx))
    })
}

fn write_curves_csv(
    path: &Path,
    curves: &BTreeMap<String, Vec<CurvePoint>>,
) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["method", "rate", "mean", "ci_low", "ci_high", "count"])
        .map_err(|e| CliError::Config(e.to_string()))?;
    for (method, curve) in curves {
        for point in curve {
            writer
                .write_record([
                    method.as_str(),
                    point.rate.as_str(),
                    &point.mean.to_string(),
                    &point.ci_low.to_string(),
                    &point.ci_high.to_string(),
                    &point.count.to_string(),
                ])
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(path, bytes)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn cmd_aggregate(args: AggregateArgs) -> Result<(), CliError> {
    let mut pairs = Vec::new();
    for run in &args.runs {
        let path = run.join(PAIRS_FILE);
        pairs.extend(read_pairs(&path)?);
    }
    if pairs.is_empty() {
        return Err(CliError::Config(
            "no pairwise scores to aggregate".to_string(),
        ));
    }
    let curves: BTreeMap<String, Vec<CurvePoint>> = if args.per_model {
        let mut by_model: BTreeMap<String, Vec<promptsens::rundir::PairRow>> = BTreeMap::new();
        for row in pairs {
            by_model.entry(row.model.clone()).or_default().push(row);
        }
        let mut out = BTreeMap::new();
        for (model, rows) in by_model {
            for (method, curve) in curves_from_pairs(&rows, args.seed) {
                out.insert(format!("{method}/{model}"), curve);
            }
        }
        out
    } else {
        curves_from_pairs(&pairs, args.seed)
    };
    write_curves_csv(&args.output, &curves)?;
    println!("wrote {} ({} curves)", args.output.display(), curves.len());
    Ok(())
}

fn filter_method(rows: Vec<PointRow>, method: &Option<String>) -> Result<Vec<PointRow>, CliError> {
    let rows: Vec<PointRow> = match method {
        Some(m) => rows.into_iter().filter(|r| &r.method == m).collect(),
        None => rows,
    };
    if rows.is_empty() {
        return Err(CliError::Config("no matching points".to_string()));
    }
    let methods: BTreeSet<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    if methods.len() > 1 {
        return Err(CliError::Config(format!(
            "points mix methods {methods:?}; pass --method to pick one"
        )));
    }
    Ok(rows)
}

fn friedman_from_points(rows: &[PointRow], block: BlockBy) -> Result<TestResult, CliError> {
    let block_key = |row: &PointRow| match block {
        BlockBy::Task => row.task_id.clone(),
        BlockBy::TaskModel => format!("{}/{}", row.task_id, row.model),
    };
    let mut rates: Vec<String> = rows
        .iter()
        .map(|r| r.rate.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    rates.sort_by(|a, b| {
        rate_sort_key(a)
            .partial_cmp(&rate_sort_key(b))
            .expect("sortable rates")
    });
    let mut cells: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for row in rows {
        let key = block_key(row);
        if cells
            .entry(key.clone())
            .or_default()
            .insert(row.rate.clone(), row.mean)
            .is_some()
        {
            return Err(CliError::Config(format!(
                "block {key:?} has several rows at rate {}; block by task-model or filter the input",
                row.rate
            )));
        }
    }
    let mut blocks = Vec::new();
    for (key, by_rate) in &cells {
        let mut row = Vec::with_capacity(rates.len());
        for rate in &rates {
            match by_rate.get(rate) {
                Some(v) => row.push(*v),
                None => {
                    return Err(CliError::Config(format!(
                        "block {key:?} is missing rate {rate}; the test needs complete blocks"
                    )))
                }
            }
        }
        blocks.push(row);
    }
    Ok(friedman(&RankMatrix::new(blocks)?)?)
}

fn cmd_stats(args: StatsArgs) -> Result<(), CliError> {
    let result = match args.test {
        TestKind::Friedman => {
            if args.inputs.len() != 1 {
                return Err(CliError::Config(
                    "friedman takes exactly one --input".to_string(),
                ));
            }
            let block = args.block.ok_or_else(|| {
                CliError::Config(
                    "friedman needs --block task or --block task-model; the blocking \
                     dimension is never defaulted"
                        .to_string(),
                )
            })?;
            let rows = filter_method(read_points(&args.inputs[0])?, &args.method)?;
            friedman_from_points(&rows, block)?
        }
        TestKind::KruskalWallis => {
            let groups: Vec<Vec<f64>> = if args.inputs.len() > 1 {
                let mut groups = Vec::new();
                for input in &args.inputs {
                    let rows = filter_method(read_points(input)?, &args.method)?;
                    groups.push(rows.iter().map(|r| r.mean).collect());
                }
                groups
            } else {
                let group_by = args.group_by.ok_or_else(|| {
                    CliError::Config(
                        "kruskal-wallis needs several --input files (one group each) or \
                         --group-by on a single file"
                            .to_string(),
                    )
                })?;
                let rows = filter_method(read_points(&args.inputs[0])?, &args.method)?;
                let mut by_group: BTreeMap<String, Vec<f64>> = BTreeMap::new();
                for row in rows {
                    let key = match group_by {
                        GroupBy::Model => row.model.clone(),
                        GroupBy::Task => row.task_id.clone(),
                    };
                    by_group.entry(key).or_default().push(row.mean);
                }
                by_group.into_values().collect()
            };
            kruskal_wallis(&groups)?
        }
    };

    let name = match args.test {
        TestKind::Friedman => "friedman",
        TestKind::KruskalWallis => "kruskal-wallis",
    };
    let json = serde_json::json!({
        "test": name,
        "statistic": result.statistic,
        "df": result.df,
        "p_value": result.p_value,
        "tie_corrected": result.tie_corrected,
    });
    let body = serde_json::to_string_pretty(&json).expect("result serializes");
    match &args.output {
        Some(path) => fs::write(path, body + "\n")
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?,
        None => println!("{body}"),
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let points_path = args.run.join(POINTS_FILE);
    if !points_path.exists() {
        return Err(CliError::Config(format!(
            "missing {} in {}",
            POINTS_FILE,
            args.run.display()
        )));
    }
    let pairs_path = args.run.join(PAIRS_FILE);
    let curves = if pairs_path.exists() {
        curves_from_pairs(&read_pairs(&pairs_path)?, args.seed)
    } else {
        curves_from_points(&read_points(&points_path)?)
    };
    let out_dir = args.output.clone().unwrap_or_else(|| args.run.clone());
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out_dir.display())))?;
    for (method, curve) in &curves {
        let safe_method = method.replace(['/', '\\'], "-");
        let csv_path = out_dir.join(format!("curve_{safe_method}.csv"));
        let mut single = BTreeMap::new();
        single.insert(method.clone(), curve.clone());
        write_curves_csv(&csv_path, &single)?;
        let svg_path = out_dir.join(format!("chart_{safe_method}.svg"));
        fs::write(&svg_path, render_svg(method, curve))
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", svg_path.display())))?;
        println!(
            "wrote {} and {} ({} rows)",
            csv_path.display(),
            svg_path.display(),
            curve.len()
        );
    }
    Ok(())
}
