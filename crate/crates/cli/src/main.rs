//! `contrast-mine`: mine contrast sets from multiple-choice datasets and
//! compare responder rankings on original and contrast sets.
//!
//! Exit codes: 0 success, 1 unexpected failure, 2 usage or configuration,
//! 3 file I/O, 4 invalid data, 5 embedding provider or responder transport,
//! 6 fingerprint mismatch between artifacts.

mod config;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::bail;
use clap::{Args, Parser, Subcommand};
use contrast_core::contrast::{
    assemble_contrast, assemble_random_baseline, contrast_stats, load_contrast,
    random_baseline_for, sidecar_path, write_contrast,
};
use contrast_core::eval::responder::{question_blind_stubs, stub};
use contrast_core::eval::{
    evaluate, rank_consistency_report, ConsistencyOptions, EvalReport, ExemplarBank,
    HttpResponder, PromptConfig, PromptMode, Responder,
};
use contrast_core::graph::{build_graph, load_graph, write_graph};
use contrast_core::ingest::{self, Format, IngestConfig};
use contrast_core::matching::{load_matching, solve, write_matching, Solver};
use contrast_core::model::{flatten, ContrastSet, Dataset, McqEntry, Split};
use contrast_core::similarity::{
    Backend, EmbeddingCache, RemoteProvider, Similarity, SimilarityConfig, TrigramProvider,
};
use contrast_core::{fingerprint, report, synthetic, Error, ErrorClass};

use config::{Config, Provider};

type Result<T> = anyhow::Result<T>;

#[derive(Parser)]
#[command(name = "contrast-mine", version, about = "Mine and evaluate multiple-choice contrast sets")]
struct Cli {
    /// TOML settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate raw files and write one canonical dataset.
    Ingest(IngestArgs),
    /// Build the equivalence graph of a dataset.
    Graph(GraphArgs),
    /// Compute a maximum matching of a graph.
    Match(MatchArgs),
    /// Turn a graph and matching into a contrast set.
    Assemble(AssembleArgs),
    /// Graph, match and assemble in one step.
    Mine(MineArgs),
    /// Random-partner pairs, for comparison with a mined set.
    Baseline(BaselineArgs),
    /// Score responders on a dataset or contrast set.
    Eval(EvalArgs),
    /// Compare an original and a contrast evaluation report.
    Report(ReportArgs),
    /// Write the planted synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DatasetArgs {
    /// Canonical JSONL dataset.
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset name; defaults to the file stem.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct SimilarityArgs {
    #[arg(long, value_enum)]
    provider: Option<Provider>,
    /// Cosine threshold for equivalence, in (0, 1].
    #[arg(long)]
    threshold: Option<f64>,
    /// Embedding service base URL for `--provider remote`.
    #[arg(long)]
    endpoint: Option<String>,
    /// Persistent embedding cache (JSONL).
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    /// Input files, all in the same format.
    #[arg(long = "input", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "canonical_jsonl")]
    format: String,
    #[arg(long, default_value = "eval")]
    split: String,
    /// Name of the combined dataset; defaults to the output file stem.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the drop report (JSON); printed when omitted.
    #[arg(long)]
    drop_report: Option<PathBuf>,
}

#[derive(Args)]
struct GraphArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    sim: SimilarityArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    graph: PathBuf,
    /// blossom, greedy or brute.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AssembleArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    matching: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Contrast entries (JSONL); pair metadata goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MineArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    sim: SimilarityArgs,
    /// blossom, greedy or brute.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    graph_out: Option<PathBuf>,
    #[arg(long)]
    matching_out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    sim: SimilarityArgs,
    /// Number of pairs to draw.
    #[arg(long, conflicts_with = "like")]
    pairs: Option<usize>,
    /// Reuse the first source entry of every pair of this contrast set as
    /// anchors.
    #[arg(long)]
    like: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset or contrast set (JSONL).
    #[arg(long)]
    set: PathBuf,
    /// Train-split pool for few-shot exemplars (canonical JSONL).
    #[arg(long)]
    exemplars: PathBuf,
    /// Stub responder: oracle, noisy-oracle, longest-choice, choice-hash,
    /// first-choice.
    #[arg(long = "responder")]
    responders: Vec<String>,
    /// Completion endpoint as ID=URL.
    #[arg(long = "http")]
    http: Vec<String>,
    #[arg(long = "mode")]
    modes: Vec<PromptMode>,
    #[arg(long = "shots")]
    shots: Vec<usize>,
    /// Exemplar selection seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    attempts: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Per-item CSV; defaults to the report path with `.items.csv`.
    #[arg(long)]
    items: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    contrast: PathBuf,
    #[arg(long)]
    max_drop: Option<usize>,
    /// Compare even when the reports stem from different source datasets.
    #[arg(long)]
    force: bool,
    /// Markdown output; printed when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Consistency summary as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Bar chart (SVG) of one prompt configuration.
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long, default_value = "full")]
    svg_mode: PromptMode,
    #[arg(long)]
    svg_shots: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = synthetic::PLANTED_ENTRIES)]
    entries: usize,
    #[arg(long, default_value_t = synthetic::PLANTED_PAIRS)]
    pairs: usize,
    #[arg(long, default_value_t = synthetic::PLANTED_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn load_canonical(path: &Path, name: Option<&str>, split: Split) -> Result<Dataset> {
    let name = name.map_or_else(|| stem(path), str::to_string);
    let (dataset, drops) = ingest::load_dataset(&IngestConfig {
        path: path.to_path_buf(),
        format: Format::CanonicalJsonl,
        dataset_name: name,
        split,
    })?;
    if drops.dropped_total() > 0 {
        log::warn!(
            "{}: dropped {} of {} records: {:?}",
            path.display(),
            drops.dropped_total(),
            drops.total_records,
            drops.dropped
        );
    }
    Ok(dataset)
}

impl DatasetArgs {
    fn load(&self) -> Result<Dataset> {
        load_canonical(&self.dataset, self.name.as_deref(), Split::Eval)
    }
}

impl SimilarityArgs {
    fn apply(&self, cfg: &mut Config) {
        let s = &mut cfg.similarity;
        if let Some(p) = self.provider {
            s.provider = p;
        }
        if let Some(t) = self.threshold {
            s.threshold = t;
        }
        if let Some(e) = &self.endpoint {
            s.endpoint = Some(e.clone());
        }
        if let Some(c) = &self.cache {
            s.cache = Some(c.clone());
        }
    }
}

fn apply_solver(cfg: &mut Config, solver: Option<&str>, seed: Option<u64>) -> Result<()> {
    if let Some(s) = solver {
        cfg.matching.solver = s.parse::<Solver>()?;
    }
    if let Some(s) = seed {
        cfg.matching.seed = s;
    }
    Ok(())
}

fn similarity(cfg: &Config) -> Result<Similarity> {
    let s = &cfg.similarity;
    let backend = match s.provider {
        Provider::Exact => Backend::ExactMatch,
        Provider::Trigram => Backend::Embedding(Box::new(TrigramProvider::default())),
        Provider::Remote => {
            let endpoint = s
                .endpoint
                .clone()
                .or_else(|| std::env::var(RemoteProvider::ENDPOINT_ENV).ok())
                .ok_or_else(|| {
                    Error::Config(format!(
                        "remote provider needs --endpoint, a config endpoint or {}",
                        RemoteProvider::ENDPOINT_ENV
                    ))
                })?;
            Backend::Embedding(Box::new(RemoteProvider::connect(&endpoint, 3)?))
        }
    };
    let mut sim = Similarity::new(
        backend,
        SimilarityConfig {
            threshold: s.threshold,
            normalize: s.normalize,
            batch_size: s.batch_size,
        },
    )?;
    if let Some(path) = &s.cache {
        sim = sim.with_cache(EmbeddingCache::open(path)?);
    }
    Ok(sim)
}

/// Settings that decide graph content; cache location and endpoint do not.
fn graph_fingerprint(cfg: &Config) -> String {
    let s = &cfg.similarity;
    fingerprint::of(&("graph", s.provider, s.threshold, s.normalize))
}

fn mine_fingerprint(cfg: &Config) -> String {
    fingerprint::of(&(
        "mine",
        graph_fingerprint(cfg),
        cfg.matching.solver,
        cfg.matching.seed,
    ))
}

fn write_set(set: &ContrastSet, out: &Path) -> Result<()> {
    write_contrast(set, out)?;
    let stats = contrast_stats(set);
    println!(
        "{} pairs, {} questions -> {} (+ {})",
        set.pairs.len(),
        set.question_count(),
        out.display(),
        sidecar_path(out).display()
    );
    println!(
        "first entry's gold at (A): {}/{} pairs; questions per source: {:?}",
        stats.first_gold_at_a,
        set.pairs.len(),
        stats.per_source
    );
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let format: Format = args.format.parse()?;
    let split: Split = args.split.parse()?;
    let mut parts = Vec::new();
    let mut drops = ingest::DropReport::default();
    for path in &args.inputs {
        let (d, r) = ingest::load_dataset(&IngestConfig {
            path: path.clone(),
            format,
            dataset_name: stem(path),
            split,
        })?;
        drops.merge(&r);
        parts.push(d);
    }
    let name = args.name.unwrap_or_else(|| stem(&args.out));
    let (dataset, cross) = ingest::combine(&name, parts)?;
    // combine re-counts kept entries; only its drops are new
    for (k, v) in cross.dropped {
        *drops.dropped.entry(k).or_default() += v;
    }
    drops.kept = cross.kept;
    drops.per_dataset = cross.per_dataset;
    ingest::write_dataset(&dataset, &args.out)?;
    let text = serde_json::to_string_pretty(&drops)?;
    match args.drop_report {
        Some(p) => std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?,
        None => println!("{text}"),
    }
    eprintln!("{} entries -> {}", dataset.len(), args.out.display());
    Ok(())
}

fn cmd_graph(cfg: &mut Config, args: GraphArgs) -> Result<()> {
    args.sim.apply(cfg);
    let dataset = args.data.load()?;
    let sim = similarity(cfg)?;
    let (mut graph, summary) = build_graph(&dataset, &sim)?;
    sim.flush_cache()?;
    graph.header.config_fingerprint = Some(graph_fingerprint(cfg));
    write_graph(&graph, &args.out)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_match(cfg: &mut Config, args: MatchArgs) -> Result<()> {
    apply_solver(cfg, args.solver.as_deref(), None)?;
    let graph = load_graph(&args.graph)?;
    let mut matching = solve(&graph, cfg.matching.solver)?;
    matching.config_fingerprint = Some(fingerprint::of(&("match", cfg.matching.solver)));
    write_matching(&matching, &args.out)?;
    println!(
        "{} edges matched of {} ({})",
        matching.size,
        graph.edges.len(),
        matching.solver
    );
    Ok(())
}

fn cmd_assemble(cfg: &mut Config, args: AssembleArgs) -> Result<()> {
    apply_solver(cfg, None, args.seed)?;
    let dataset = args.data.load()?;
    let graph = load_graph(&args.graph)?;
    let matching = load_matching(&args.matching)?;
    if matching.graph != graph.header {
        return Err(Error::FingerprintMismatch(format!(
            "{} was not computed on {}",
            args.matching.display(),
            args.graph.display()
        ))
        .into());
    }
    let mut set = assemble_contrast(&dataset, &graph, &matching, cfg.matching.seed)?;
    set.provenance.config_fingerprint = Some(fingerprint::of(&(
        "assemble",
        &graph.header.config_fingerprint,
        &matching.config_fingerprint,
        cfg.matching.seed,
    )));
    write_set(&set, &args.out)
}

fn cmd_mine(cfg: &mut Config, args: MineArgs) -> Result<()> {
    args.sim.apply(cfg);
    apply_solver(cfg, args.solver.as_deref(), args.seed)?;
    let dataset = args.data.load()?;
    let sim = similarity(cfg)?;
    let (mut graph, summary) = build_graph(&dataset, &sim)?;
    sim.flush_cache()?;
    graph.header.config_fingerprint = Some(graph_fingerprint(cfg));
    log::info!(
        "graph: {} vertices, {} edges, {} gold-gold collisions",
        summary.vertices,
        summary.edges,
        summary.gold_gold_collisions
    );
    let mut matching = solve(&graph, cfg.matching.solver)?;
    matching.config_fingerprint = Some(fingerprint::of(&("match", cfg.matching.solver)));
    if let Some(p) = &args.graph_out {
        write_graph(&graph, p)?;
    }
    if let Some(p) = &args.matching_out {
        write_matching(&matching, p)?;
    }
    let mut set = assemble_contrast(&dataset, &graph, &matching, cfg.matching.seed)?;
    set.provenance.config_fingerprint = Some(mine_fingerprint(cfg));
    write_set(&set, &args.out)
}

fn cmd_baseline(cfg: &mut Config, args: BaselineArgs) -> Result<()> {
    args.sim.apply(cfg);
    apply_solver(cfg, None, args.seed)?;
    let dataset = args.data.load()?;
    let sim = similarity(cfg)?;
    let seed = cfg.matching.seed;
    let mut set = match (&args.like, args.pairs) {
        (Some(like), _) => {
            let mined = load_contrast(like)?;
            let anchors: Vec<String> = mined.pairs.iter().map(|p| p.source_ids.0.clone()).collect();
            random_baseline_for(&dataset, &anchors, seed, &sim)?
        }
        (None, Some(n)) => assemble_random_baseline(&dataset, n, seed, &sim)?,
        (None, None) => bail!(Error::Config("baseline needs --pairs or --like".into())),
    };
    sim.flush_cache()?;
    set.provenance.config_fingerprint = Some(fingerprint::of(&(
        "baseline",
        graph_fingerprint(cfg),
        seed,
    )));
    write_set(&set, &args.out)
}

/// Entries to evaluate and the fingerprint of the dataset they came from.
fn load_eval_set(path: &Path) -> Result<(Vec<McqEntry>, String)> {
    if sidecar_path(path).exists() {
        let set = load_contrast(path)?;
        let source = set.provenance.source_fingerprint.clone();
        Ok((flatten(&set)?, source))
    } else {
        let dataset = load_canonical(path, None, Split::Eval)?;
        let source = dataset.fingerprint();
        Ok((dataset.entries, source))
    }
}

fn cmd_eval(cfg: &mut Config, args: EvalArgs) -> Result<()> {
    let e = &mut cfg.eval;
    if !args.modes.is_empty() {
        e.modes = args.modes.clone();
    }
    if !args.shots.is_empty() {
        e.shots = args.shots.clone();
    }
    if let Some(s) = args.seed {
        e.prompt_seed = s;
    }
    if let Some(m) = args.max_tokens {
        e.max_tokens = m;
    }
    if let Some(a) = args.attempts {
        e.attempts = a;
    }
    if let Some(p) = args.parallelism {
        e.parallelism = p;
    }
    let mut responders: Vec<Box<dyn Responder>> = Vec::new();
    for name in &args.responders {
        match stub(name) {
            Some(r) => responders.push(r),
            None => bail!(Error::Config(format!("unknown stub responder `{name}`"))),
        }
    }
    for spec in &args.http {
        let Some((id, url)) = spec.split_once('=') else {
            bail!(Error::Config(format!("--http expects ID=URL, got `{spec}`")));
        };
        responders.push(Box::new(HttpResponder::new(id, url)));
    }
    if responders.is_empty() {
        responders = question_blind_stubs();
    }

    let (entries, source) = load_eval_set(&args.set)?;
    let pool = load_canonical(&args.exemplars, None, Split::Train)?;
    let sources: BTreeSet<&str> = entries.iter().map(|e| e.dataset.as_str()).collect();
    let options = cfg.eval.options();
    let mut report = EvalReport::new(stem(&args.set), source, &entries);
    report.config_fingerprint = Some(fingerprint::of(&("eval", &cfg.eval)));
    for &k in &cfg.eval.shots {
        let bank = ExemplarBank::select(&pool, sources.iter().copied(), k, cfg.eval.prompt_seed)?;
        for &mode in &cfg.eval.modes {
            let prompt = PromptConfig::new(mode, k, cfg.eval.prompt_seed)?;
            for r in &responders {
                let slice = evaluate(&entries, r.as_ref(), &prompt, &bank, &options)?;
                println!(
                    "{:<16} {:<13} {:>2}-shot  {}/{} = {}",
                    slice.responder,
                    mode.id(),
                    k,
                    slice.overall.correct,
                    slice.overall.answered(),
                    slice
                        .overall
                        .accuracy
                        .map_or_else(|| "n/a".into(), |a| format!("{a:.4}"))
                );
                report.push(slice);
            }
        }
    }
    report.write(&args.out)?;
    let items = args
        .items
        .unwrap_or_else(|| args.out.with_extension("items.csv"));
    report.write_items_csv(&items)?;
    Ok(())
}

fn cmd_report(cfg: &mut Config, args: ReportArgs) -> Result<()> {
    if let Some(m) = args.max_drop {
        cfg.report.max_drop = m;
    }
    let original = EvalReport::load(&args.original)?;
    let contrast = EvalReport::load(&args.contrast)?;
    let options = ConsistencyOptions {
        max_drop: cfg.report.max_drop,
        force: args.force,
    };
    let consistency = rank_consistency_report(&original, &contrast, &options)?;
    let markdown = report::render_markdown(&original, &contrast, &consistency);
    match &args.out {
        Some(p) => std::fs::write(p, &markdown).map_err(|e| Error::io(p, e))?,
        None => print!("{markdown}"),
    }
    if let Some(p) = &args.json {
        let text = serde_json::to_string_pretty(&consistency)? + "\n";
        std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
    }
    if let Some(p) = &args.svg {
        let k = match args.svg_shots {
            Some(k) => k,
            None => consistency
                .groups
                .iter()
                .find(|g| g.mode == args.svg_mode)
                .map(|g| g.k_shots)
                .ok_or_else(|| {
                    Error::Config(format!("no {} results to chart", args.svg_mode))
                })?,
        };
        let svg = report::bar_chart_svg(&original, &contrast, args.svg_mode, k);
        std::fs::write(p, svg).map_err(|e| Error::io(p, e))?;
    }
    for g in &consistency.groups {
        for d in g.flagged() {
            log::warn!(
                "{} {}-shot: {} dropped from rank {} to {}",
                g.mode,
                g.k_shots,
                d.responder,
                d.original_rank,
                d.contrast_rank
            );
        }
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let (dataset, planted) = synthetic::planted_dataset(args.entries, args.pairs, args.seed)?;
    ingest::write_dataset(&dataset, &args.out)?;
    println!(
        "{} entries with {} planted pairs -> {}",
        dataset.len(),
        planted.len(),
        args.out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Graph(a) => cmd_graph(&mut cfg, a),
        Command::Match(a) => cmd_match(&mut cfg, a),
        Command::Assemble(a) => cmd_assemble(&mut cfg, a),
        Command::Mine(a) => cmd_mine(&mut cfg, a),
        Command::Baseline(a) => cmd_baseline(&mut cfg, a),
        Command::Eval(a) => cmd_eval(&mut cfg, a),
        Command::Report(a) => cmd_report(&mut cfg, a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let class = err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map(Error::class);
    match class {
        Some(ErrorClass::Config) => 2,
        Some(ErrorClass::Io) => 3,
        Some(ErrorClass::Data) => 4,
        Some(ErrorClass::Provider) => 5,
        Some(ErrorClass::Fingerprint) => 6,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // core errors already carry their cause in the message
            match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
                Some(core) => eprintln!("error: {core}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
