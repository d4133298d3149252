//! Command-line front end: `acquire`, `train`, `eval` and `gradcheck`.
//!
//! Every command resolves one [`RunConfig`] (file, then flags), echoes it
//! to stderr and writes it as `<out>/<command>.config.json`.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::encoder::{import_features, TextEncoder};
use crate::error::{Error, Result};
use crate::inference::{
    evaluate, export_bank, handcraft_bank, items_from_corpus, items_from_features, load_labels, topk_report, EvalItem,
};
use crate::knowledge::{
    load_corpus, run_pipeline, save_corpus, CategorySet, DescriptionKind, DescriptionRecord, LiveClient, LiveConfig,
    LlmClient, MockLlm, SubgroupPartition,
};
use crate::learning::gradcheck::run_gradcheck;
use crate::learning::{fit, prepare_examples, Objective};
use crate::promptgraph::{load_checkpoint, save_checkpoint, HandcraftPromptMap, HierarchicalPrompts, PromptKind};

#[derive(Debug, Parser)]
#[command(name = "hiprompt", version, about = "Hierarchical prompt tuning from LLM-acquired descriptions")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for the mock LLM, prompt initialization and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Category file, one name per line.
    #[arg(long, global = true)]
    pub categories: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ask an LLM for attributes, subgroups and descriptions; write corpora.
    Acquire(AcquireArgs),
    /// Learn prompts on the corpora and write a checkpoint.
    Train(TrainArgs),
    /// Score an evaluation set and report mAP and F1@top-3.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct AcquireArgs {
    /// Use the deterministic offline mock (default).
    #[arg(long, conflicts_with = "live")]
    pub mock: bool,
    /// Use the chat endpoint in LLM_ENDPOINT.
    #[arg(long)]
    pub live: bool,
    /// Comma-separated description kinds: coarse, fine, relationship.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    pub kinds: Option<Vec<DescriptionKind>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Number of epochs; milestones at or past it are dropped.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Prompt variant to train.
    #[arg(long, value_enum)]
    pub prompts: Option<PromptKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputKind {
    /// Description corpora; text features come from the encoder.
    Corpus,
    /// A feature file plus a labels file.
    Features,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value_t = InputKind::Corpus)]
    pub input: InputKind,
    /// Evaluation data: corpus files, or one feature file.
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// Labels for `--input features`, one JSON object per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Checkpoint to load. Defaults to `<out>/checkpoint.bin`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub prompts: Option<PromptKind>,
    /// Predictions per item in the top-k report.
    #[arg(long, default_value_t = 3)]
    pub topk: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Perturb the analytic gradient; the check must then fail.
    #[arg(long, hide = true)]
    pub inject_bug: bool,
}

fn parse_kind(s: &str) -> std::result::Result<DescriptionKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Loads the config file (if any) and applies the common flags.
pub fn resolve_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(cats) = &common.categories {
        cfg.categories = Some(cats.clone());
    }
    Ok(cfg)
}

/// Runs one command and returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    let mut cfg = resolve_config(&cli.common)?;
    match &cli.command {
        Command::Acquire(args) => cmd_acquire(&mut cfg, args).map(|_| 0),
        Command::Train(args) => cmd_train(&mut cfg, args).map(|_| 0),
        Command::Eval(args) => cmd_eval(&mut cfg, args).map(|_| 0),
        Command::Gradcheck(args) => cmd_gradcheck(&cfg, args),
    }
}

fn echo(cfg: &RunConfig, command: &str) -> Result<()> {
    cfg.validate()?;
    let path = cfg.write_resolved(command)?;
    eprintln!("resolved config ({}):\n{}", path.display(), cfg.to_json());
    Ok(())
}

fn load_categories(cfg: &RunConfig) -> Result<CategorySet> {
    let path = cfg.categories_path()?;
    if !path.exists() {
        return Err(Error::Config(format!("categories file {} does not exist", path.display())));
    }
    CategorySet::from_file(path)
}

fn load_partition(cfg: &RunConfig, n: usize) -> Result<SubgroupPartition> {
    let path = cfg.partition_path();
    if !path.exists() {
        return Err(Error::Config(format!(
            "partition file {} does not exist; run `acquire` first or set `partition`",
            path.display()
        )));
    }
    let partition = SubgroupPartition::load(&path)?;
    partition.validate(n)?;
    Ok(partition)
}

fn corpus_file(out: &Path, kind: DescriptionKind) -> PathBuf {
    out.join(format!("corpus_{}.jsonl", kind.as_str()))
}

fn load_records(paths: &[PathBuf], n: usize) -> Result<Vec<DescriptionRecord>> {
    let mut records = Vec::new();
    for path in paths {
        if !path.exists() {
            return Err(Error::Config(format!("corpus file {} does not exist", path.display())));
        }
        let corpus = load_corpus(path)?;
        for (i, r) in corpus.records.into_iter().enumerate() {
            if let Some(&bad) = r.positives.iter().find(|&&c| c >= n) {
                return Err(Error::format(
                    path.display().to_string(),
                    format!("record {}", i + 1),
                    format!("positive id {bad} out of range for {n} categories"),
                ));
            }
            records.push(r);
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(records)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn cmd_acquire(cfg: &mut RunConfig, args: &AcquireArgs) -> Result<()> {
    if let Some(kinds) = &args.kinds {
        cfg.acquire.kinds = kinds.clone();
    }
    if cfg.acquire.kinds.contains(&DescriptionKind::Caption) {
        return Err(Error::Config("caption corpora are ingested from files, not acquired".into()));
    }
    let cats = load_categories(cfg)?;
    echo(cfg, "acquire")?;
    let client: Box<dyn LlmClient> = if args.live {
        let mut live = LiveConfig::from_env()?;
        live.cache_dir = Some(cfg.out_dir.join("llm_cache"));
        Box::new(LiveClient::new(live))
    } else {
        Box::new(MockLlm::new(cfg.seed))
    };
    let acquired = run_pipeline(client.as_ref(), &cats, &cfg.acquire)?;
    if !acquired.attributes.common.is_empty() || !acquired.attributes.specific.is_empty() {
        acquired.attributes.save(cfg.out_dir.join("attributes.json"))?;
    }
    acquired.partition.save(cfg.out_dir.join("partition.json"))?;
    for kind in &cfg.acquire.kinds {
        let records = acquired.corpora.get(kind).map(Vec::as_slice).unwrap_or(&[]);
        let path = corpus_file(&cfg.out_dir, *kind);
        save_corpus(records, &path)?;
        eprintln!("{}: {} records", path.display(), records.len());
    }
    Ok(())
}

pub fn cmd_train(cfg: &mut RunConfig, args: &TrainArgs) -> Result<()> {
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
        let before = cfg.train.milestones.len();
        cfg.train.milestones.retain(|&m| m < epochs);
        if cfg.train.milestones.len() < before {
            log::info!("dropped lr milestones at or past epoch {epochs}");
        }
    }
    if let Some(kind) = args.prompts {
        cfg.prompts = kind;
    }
    let composition = cfg
        .variant_composition()
        .ok_or_else(|| Error::Config("hand-craft prompts have nothing to train".into()))?;
    let cats = load_categories(cfg)?;
    let partition = load_partition(cfg, cats.len())?;
    let corpus_paths: Vec<PathBuf> = if cfg.corpus.is_empty() {
        DescriptionKind::ALL
            .iter()
            .map(|&k| corpus_file(&cfg.out_dir, k))
            .filter(|p| p.exists())
            .collect()
    } else {
        cfg.corpus.clone()
    };
    echo(cfg, "train")?;
    let records = load_records(&corpus_paths, cats.len())?;
    let handcraft = HandcraftPromptMap::new(&cats);
    let encoder = TextEncoder::new(
        cfg.encoder.clone(),
        handcraft.vocabulary(records.iter().map(|r| r.text.as_str())),
    )?;
    let mut prompts = HierarchicalPrompts::new(&partition, composition, cats.len(), encoder.d(), cfg.seed, cfg.init_sigma)?;
    let objective = Objective::new(&encoder, &cats, &handcraft, cfg.loss.clone())?;
    let examples = prepare_examples(&encoder, &records)?;

    let log_path = cfg.out_dir.join("train_log.jsonl");
    let mut log_file = std::io::BufWriter::new(std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let mut write_err = None;
    fit(&objective, &mut prompts, &examples, &cfg.train, |entry| {
        let line = serde_json::to_string(entry).expect("log line serializes");
        if let Err(e) = writeln!(log_file, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(Error::io(&log_path, e));
    }
    log_file.flush().map_err(|e| Error::io(&log_path, e))?;
    let ckpt = cfg.out_dir.join("checkpoint.bin");
    save_checkpoint(&ckpt, &prompts, &partition, cats.names(), &cfg.encoder)?;
    eprintln!("wrote {} and {}", ckpt.display(), log_path.display());
    Ok(())
}

pub fn cmd_eval(cfg: &mut RunConfig, args: &EvalArgs) -> Result<()> {
    if let Some(kind) = args.prompts {
        cfg.prompts = kind;
    }
    if args.topk == 0 {
        return Err(Error::InvalidArgument("--topk must be at least 1".into()));
    }
    let cats = load_categories(cfg)?;
    let handcraft = HandcraftPromptMap::new(&cats);
    let data: Vec<PathBuf> = if args.data.is_empty() { cfg.eval_corpus.clone() } else { args.data.clone() };
    if data.is_empty() {
        return Err(Error::Config("no evaluation data (--data or `eval_corpus`)".into()));
    }

    // Learned prompts need their checkpoint, which also fixes the encoder.
    let learned = match cfg.variant_composition() {
        None => None,
        Some(composition) => {
            let path = args.checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join("checkpoint.bin"));
            let partition = load_partition(cfg, cats.len())?;
            let (header, prompts) = load_checkpoint(&path, &partition)?;
            if header.categories != cats.names() {
                return Err(Error::Config(format!("checkpoint {} was trained on other categories", path.display())));
            }
            if header.composition != composition {
                return Err(Error::Config(format!(
                    "checkpoint {} holds {:?}, not the requested {} prompts",
                    path.display(),
                    header.composition,
                    cfg.prompts.label()
                )));
            }
            cfg.encoder = header.encoder.clone();
            Some(prompts)
        }
    };
    echo(cfg, "eval")?;

    let (items, texts): (Vec<EvalItem>, Vec<String>) = match args.input {
        InputKind::Corpus => {
            let records = load_records(&data, cats.len())?;
            let texts = records.iter().map(|r| r.text.clone()).collect();
            let encoder = TextEncoder::new(cfg.encoder.clone(), handcraft.vocabulary(records.iter().map(|r| r.text.as_str())))?;
            (items_from_corpus(&encoder, &records)?, texts)
        }
        InputKind::Features => {
            let [path] = data.as_slice() else {
                return Err(Error::Config("--input features takes exactly one --data file".into()));
            };
            let labels_path = args
                .labels
                .as_ref()
                .ok_or_else(|| Error::Config("--input features needs --labels".into()))?;
            let (d, features) = import_features(path)?;
            if d != cfg.encoder.d {
                return Err(Error::Config(format!("feature file has d={d}, encoder has d={}", cfg.encoder.d)));
            }
            (items_from_features(features, load_labels(labels_path)?)?, Vec::new())
        }
    };
    if let Some(&bad) = items.iter().flat_map(|it| &it.positives).find(|&&c| c >= cats.len()) {
        return Err(Error::Config(format!("label id {bad} out of range for {} categories", cats.len())));
    }
    let encoder = TextEncoder::new(cfg.encoder.clone(), handcraft.vocabulary(texts.iter().map(String::as_str)))?;
    let bank = match &learned {
        Some(prompts) => export_bank(prompts, &encoder, &cats)?,
        None => handcraft_bank(&encoder, &handcraft)?,
    };
    let report = evaluate(&items, &bank, &cfg.inference)?;
    let stem = format!("metrics.{}", serde_json::to_value(cfg.prompts).expect("kind").as_str().expect("string"));
    write_file(&cfg.out_dir.join(format!("{stem}.json")), (report.to_json() + "\n").as_bytes())?;
    let table = report.table(&cats);
    write_file(&cfg.out_dir.join(format!("{stem}.txt")), table.as_bytes())?;
    let topk = topk_report(&items, &bank, &cfg.inference, args.topk, &cats)?;
    write_file(&cfg.out_dir.join(format!("topk.{}.txt", &stem["metrics.".len()..])), topk.as_bytes())?;
    println!("{} prompts on {} items", cfg.prompts.label(), report.n_items);
    print!("{table}");
    Ok(())
}

pub fn cmd_gradcheck(cfg: &RunConfig, args: &GradcheckArgs) -> Result<i32> {
    echo(cfg, "gradcheck")?;
    let report = run_gradcheck(args.trials, cfg.seed, args.inject_bug)?;
    println!("trials           {}", report.trials);
    println!("max rel err rank  {:.3e}", report.max_rank);
    println!("max rel err order {:.3e}", report.max_order);
    println!("max rel err total {:.3e}", report.max_total);
    println!("tolerance        {:.0e}", report.tolerance);
    println!("{}", if report.passed { "PASS" } else { "FAIL" });
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_file(&cfg.out_dir.join("gradcheck.json"), json.as_bytes())?;
    Ok(if report.passed { 0 } else { 1 })
}
