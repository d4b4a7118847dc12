//! The experiment protocol shared by `ablate` and the test suite:
//! how the reference data splits into roles, how one variant runs end
//! to end, and how the domain-alignment probe is configured. Keeping
//! it here means the command line and the acceptance checks cannot
//! drift apart.

use crate::config::ExperimentConfig;
use hamball::data::generate;
use hamball::eval::{evaluate, MetricsSummary, RelevanceJudge};
use hamball::trainer::{encode, train, TrainConfig, Variant};
use hamball::{BinaryCode, CodeIndex, FeatureDataset64, Result, TrainOutcome64};

/// Reference datasets in their protocol roles. Queries are the
/// leading target rows; they never touch training. The database rows
/// double as the unlabeled adversarial pool.
pub struct ReferenceData {
    pub source: FeatureDataset64,
    pub queries: FeatureDataset64,
    pub database: FeatureDataset64,
}

pub fn reference_data(cfg: &ExperimentConfig) -> Result<ReferenceData> {
    let (source, target) = generate::<f64>(&cfg.task, cfg.n_source, cfg.n_target, cfg.data_seed)?;
    let (queries, database) = target.split_at(cfg.n_queries)?;
    Ok(ReferenceData {
        source,
        queries,
        database,
    })
}

/// Everything one trained variant produces under the protocol.
pub struct VariantRun {
    pub outcome: TrainOutcome64,
    pub query_codes: Vec<BinaryCode>,
    pub db_codes: Vec<BinaryCode>,
    pub index: CodeIndex,
    pub metrics: MetricsSummary,
}

/// Trains `variant` on the reference data under `cfg.train` (with the
/// variant swapped in), encodes both target splits, and evaluates
/// retrieval at the config radius.
pub fn run_variant(
    cfg: &ExperimentConfig,
    data: &ReferenceData,
    variant: Variant,
) -> Result<VariantRun> {
    let mut tc = cfg.train.clone();
    tc.variant = variant;
    let adv = variant
        .uses_adversary()
        .then(|| data.database.features.view());
    let outcome = train(&tc, &data.source, adv.as_ref())?;
    let db_codes = encode(&outcome.model, data.database.features.view())?;
    let query_codes = encode(&outcome.model, data.queries.features.view())?;
    let index = CodeIndex::build(db_codes.clone())?;
    let judge = RelevanceJudge::new(
        data.queries.labels.clone().unwrap_or_default(),
        data.database.labels.clone().unwrap_or_default(),
    )?;
    let metrics = evaluate(&index, &query_codes, &judge, cfg.radius)?;
    Ok(VariantRun {
        outcome,
        query_codes,
        db_codes,
        index,
        metrics,
    })
}

/// Probe training setup: a fresh discriminator gets a larger rate and
/// a longer budget than the in-training adversary, so it measures how
/// separable the frozen codes actually are rather than how far a
/// co-trained discriminator happened to get.
pub fn probe_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        lr0: 3e-3,
        epochs: 60,
        ..cfg.train.clone()
    }
}

/// Held-out rows for discriminator accuracy: same task geometry
/// (resolved from the data seed), fresh noise from `seed`.
pub fn held_out_data(
    cfg: &ExperimentConfig,
    n_per_domain: usize,
    seed: u64,
) -> Result<(FeatureDataset64, FeatureDataset64)> {
    let pinned = cfg.task.resolve(cfg.data_seed)?;
    generate::<f64>(&pinned, n_per_domain, n_per_domain, seed)
}

/// Fixed row order for ablation tables.
pub const ABLATION_VARIANTS: [Variant; 3] = [Variant::Tah, Variant::TahT, Variant::TahA];
