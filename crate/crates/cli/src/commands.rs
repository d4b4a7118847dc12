//! Subcommand surface. Each command is a thin deterministic wrapper:
//! parse arguments, call into the library, write files. No timestamps
//! or machine identifiers ever reach an output file, so rerunning a
//! command from the config it echoed reproduces every byte.

use crate::config::ExperimentConfig;
use crate::protocol::{reference_data, run_variant, ABLATION_VARIANTS};
use clap::{Args, Parser, Subcommand};
use hamball::codes::{load_codes, save_codes, BinaryCode};
use hamball::data::{Domain, FeatureDataset};
use hamball::eval::{evaluate, MetricsSummary, RelevanceJudge};
use hamball::net::CheckpointMeta;
use hamball::trainer::{encode, train, write_history};
use hamball::{CodeIndex, Error, HashModel64, Result};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "hamball",
    version,
    about = "Adversarial transfer hashing with exact Hamming-ball retrieval"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Write the synthetic source/target feature files for a task.
    Gen(GenArgs),
    /// Train a hash model on labeled source features.
    Train(TrainArgs),
    /// Threshold features through a trained model into packed codes.
    Encode(EncodeArgs),
    /// Build a retrieval index from a code file.
    Index(IndexArgs),
    /// Look up one query code and print its radius-r neighbors.
    Query(QueryArgs),
    /// Score retrieval quality of query codes against an index.
    Eval(EvalArgs),
    /// Run all three variants on one config and tabulate them.
    Ablate(AblateArgs),
}

/// Config source plus the training-side overrides shared by the
/// commands that train.
#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// Experiment config JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Code length override.
    #[arg(long)]
    pub bits: Option<usize>,
    /// Retrieval radius override.
    #[arg(long)]
    pub radius: Option<usize>,
    /// Variant override: tah, tah-t, or tah-a.
    #[arg(long)]
    pub variant: Option<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(b) = self.bits {
            cfg.train.bits = b;
        }
        if let Some(r) = self.radius {
            cfg.radius = r;
        }
        if let Some(v) = &self.variant {
            cfg.train.variant = v.parse()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Experiment config JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Data seed override (this command draws no training seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for source.hfv, target.hfv, and the config echo.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Labeled source features (HFV1).
    #[arg(long)]
    pub source: PathBuf,
    /// Unlabeled target features (HFV1); required by the adversarial
    /// variants, ignored by tah-a. Labels in the file are not read.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Directory for the checkpoint, history, and config echo.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Hash model checkpoint (HMC1).
    #[arg(long)]
    pub model: PathBuf,
    /// Features to encode (HFV1).
    #[arg(long)]
    pub features: PathBuf,
    /// Output code file (HBC1).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    /// Code file to index (HBC1); ids are assigned 0..n in file order.
    #[arg(long)]
    pub codes: PathBuf,
    /// Output index path; the id sidecar lands at "<out>.ids".
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    /// Index path as written by `index` (expects "<path>.ids" beside it).
    #[arg(long)]
    pub index: PathBuf,
    /// Query code as a 0/1 string; the leftmost character is bit 0.
    #[arg(long)]
    pub code: String,
    /// Hamming radius.
    #[arg(long, default_value_t = 2)]
    pub radius: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Index path as written by `index`.
    #[arg(long)]
    pub index: PathBuf,
    /// Query codes (HBC1).
    #[arg(long)]
    pub queries: PathBuf,
    /// Query labels: a text file of one integer per line, or an HFV1
    /// file whose labels are used.
    #[arg(long)]
    pub query_labels: PathBuf,
    /// Database labels in index-id order; same formats.
    #[arg(long)]
    pub db_labels: PathBuf,
    /// Hamming radius.
    #[arg(long, default_value_t = 2)]
    pub radius: usize,
    /// Directory for metrics.json and pr_curve.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Experiment config JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Code length override.
    #[arg(long)]
    pub bits: Option<usize>,
    /// Retrieval radius override.
    #[arg(long)]
    pub radius: Option<usize>,
    /// Directory for per-variant runs and the comparison table.
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Encode(a) => cmd_encode(a),
        Cmd::Index(a) => cmd_index(a),
        Cmd::Query(a) => cmd_query(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Ablate(a) => cmd_ablate(a),
    }
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.data_seed = s;
    }
    cfg.validate()?;
    let (source, target) =
        hamball::data::generate::<f64>(&cfg.task, cfg.n_source, cfg.n_target, cfg.data_seed)?;
    std::fs::create_dir_all(&args.out_dir)?;
    source.save(args.out_dir.join("source.hfv"))?;
    target.save(args.out_dir.join("target.hfv"))?;
    cfg.save(args.out_dir.join("config.json"))?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = args.cfg.resolve()?;
    let source = FeatureDataset::<f64>::load(&args.source, Domain::Source)?;
    let target = match &args.target {
        Some(p) => Some(FeatureDataset::<f64>::load(p, Domain::Target)?),
        None => None,
    };
    let target_view = target.as_ref().map(|t| t.features.view());
    let outcome = train(&cfg.train, &source, target_view.as_ref())?;

    std::fs::create_dir_all(&args.out_dir)?;
    outcome.model.save(args.out_dir.join("model.hmc"))?;
    let meta = CheckpointMeta {
        bits: cfg.train.bits,
        feature_dim: source.dim(),
        alpha: cfg.train.resolved_alpha(),
        lambda: cfg.train.lambda,
        seed: cfg.train.seed,
    };
    meta.save(args.out_dir.join("model.meta.json"))?;
    if let Some(disc) = &outcome.disc {
        disc.save(args.out_dir.join("disc.hmc"))?;
    }
    let history = File::create(args.out_dir.join("history.csv"))?;
    write_history(&outcome.history, history)?;
    cfg.save(args.out_dir.join("config.json"))?;
    Ok(())
}

fn cmd_encode(args: EncodeArgs) -> Result<()> {
    let model = HashModel64::load(&args.model)?;
    let features = FeatureDataset::<f64>::load(&args.features, Domain::Target)?;
    let codes = encode(&model, features.features.view())?;
    save_codes(&args.out, &codes)?;
    Ok(())
}

fn ids_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".ids");
    out.with_file_name(name)
}

fn cmd_index(args: IndexArgs) -> Result<()> {
    let codes = load_codes(&args.codes)?;
    let index = CodeIndex::build(codes)?;
    index.save(&args.out, &ids_path(&args.out))?;
    Ok(())
}

fn parse_code(text: &str) -> Result<BinaryCode> {
    let mut bits = Vec::with_capacity(text.len());
    for (i, c) in text.chars().enumerate() {
        match c {
            '0' => bits.push(false),
            '1' => bits.push(true),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "query code must be 0s and 1s, found {other:?} at position {i}"
                )))
            }
        }
    }
    if bits.is_empty() {
        return Err(Error::InvalidArgument("empty query code".into()));
    }
    BinaryCode::from_bools(&bits)
}

fn cmd_query(args: QueryArgs) -> Result<()> {
    let index = CodeIndex::load(&args.index, &ids_path(&args.index))?;
    let query = parse_code(&args.code)?;
    let hits = index.query_radius(&query, args.radius)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (id, dist) in hits {
        writeln!(out, "{id}\t{dist}")?;
    }
    Ok(())
}

/// Labels come either from a text file (one integer per line) or from
/// an HFV1 feature file, told apart by the magic bytes.
fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 4];
    let n = file.read(&mut magic)?;
    if n == 4 && &magic == b"HFV1" {
        let ds = FeatureDataset::<f64>::load(path, Domain::Source)?;
        return ds.labels.ok_or_else(|| {
            Error::InvalidArgument(format!("{} has no labels", path.display()))
        });
    }
    let reader = BufReader::new(File::open(path)?);
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        labels.push(trimmed.parse::<u32>().map_err(|_| Error::Parse {
            offset: lineno as u64 + 1,
            what: format!("label line {:?}", trimmed),
        })?);
    }
    Ok(labels)
}

fn write_metrics(dir: &Path, metrics: &MetricsSummary) -> Result<()> {
    let mut text = serde_json::to_string_pretty(metrics)
        .map_err(|e| Error::InvalidArgument(format!("unserializable metrics: {e}")))?;
    text.push('\n');
    std::fs::write(dir.join("metrics.json"), text)?;
    let mut csv = csv::Writer::from_path(dir.join("pr_curve.csv"))?;
    csv.write_record(["cutoff", "recall", "precision"])?;
    for p in &metrics.pr_curve {
        csv.write_record([
            p.cutoff.to_string(),
            p.recall.to_string(),
            p.precision.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let index = CodeIndex::load(&args.index, &ids_path(&args.index))?;
    let queries = load_codes(&args.queries)?;
    let judge = RelevanceJudge::new(read_labels(&args.query_labels)?, read_labels(&args.db_labels)?)?;
    let metrics = evaluate(&index, &queries, &judge, args.radius)?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_metrics(&args.out_dir, &metrics)?;
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let shim = ConfigArgs {
        config: args.config,
        seed: args.seed,
        bits: args.bits,
        radius: args.radius,
        variant: None,
    };
    let cfg = shim.resolve()?;
    std::fs::create_dir_all(&args.out_dir)?;
    cfg.save(args.out_dir.join("config.json"))?;

    let data = reference_data(&cfg)?;
    data.source.save(args.out_dir.join("source.hfv"))?;
    data.queries.save(args.out_dir.join("queries.hfv"))?;
    data.database.save(args.out_dir.join("database.hfv"))?;

    let mut comparison = csv::Writer::from_path(args.out_dir.join("comparison.csv"))?;
    comparison.write_record([
        "variant",
        "bits",
        "map",
        "precision",
        "avg_similar_within_radius",
    ])?;
    for variant in ABLATION_VARIANTS {
        let run = run_variant(&cfg, &data, variant)?;
        let dir = args.out_dir.join(variant.as_str());
        std::fs::create_dir_all(&dir)?;
        write_variant_dir(&dir, &cfg, &run)?;
        comparison.write_record([
            variant.as_str().to_string(),
            cfg.train.bits.to_string(),
            run.metrics.map.to_string(),
            run.metrics.precision.to_string(),
            run.metrics.avg_similar_within_radius.to_string(),
        ])?;
    }
    comparison.flush()?;
    Ok(())
}

fn write_variant_dir(dir: &Path, cfg: &ExperimentConfig, run: &crate::protocol::VariantRun) -> Result<()> {
    run.outcome.model.save(dir.join("model.hmc"))?;
    if let Some(disc) = &run.outcome.disc {
        disc.save(dir.join("disc.hmc"))?;
    }
    let history = File::create(dir.join("history.csv"))?;
    write_history(&run.outcome.history, history)?;
    save_codes(dir.join("query_codes.hbc"), &run.query_codes)?;
    save_codes(dir.join("db_codes.hbc"), &run.db_codes)?;
    run.index
        .save(dir.join("index.hbc"), dir.join("index.hbc.ids"))?;
    write_metrics(dir, &run.metrics)?;
    let meta = CheckpointMeta {
        bits: cfg.train.bits,
        feature_dim: run.outcome.model.net().input_dim(),
        alpha: cfg.train.resolved_alpha(),
        lambda: cfg.train.lambda,
        seed: cfg.train.seed,
    };
    meta.save(dir.join("model.meta.json"))?;
    Ok(())
}
