//! Training orchestration: alternating-free adversarial training of
//! the hash network, with the discriminator updated from the same
//! forward pass through a reversed gradient.
//!
//! Per step, the trainer:
//!
//! 1. samples a batch of labeled source pairs (similar : dissimilar
//!    at `similar_fraction`, by rejection) and descends the pair loss
//!    plus `lambda` times the quantization loss;
//! 2. for the adversarial variants, samples a mixed half-source,
//!    half-target batch, pushes it through hash net and discriminator,
//!    descends the domain BCE in the discriminator parameters, and
//!    ascends it in the hash parameters by backpropagating the
//!    mu-scaled, sign-flipped discriminator input gradient.
//!
//! Both parameter sets move once per step from gradients of the same
//! forward state, which is the saddle-point update the objective
//! C = J - mu * D asks for. The adversarial weight ramps as
//! mu(p) = mu_max * (2 / (1 + exp(-10 p)) - 1) and the learning rate
//! anneals as lr(p) = lr0 / (1 + 10 p)^0.75 over training progress
//! p in [0,1).
//!
//! The trainer never sees target labels: the target side of the
//! signature carries features only.

use crate::codes::BinaryCode;
use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::loss::{
    domain_bce, pair_nll, pair_nll_inner_product, quantization_loss, LossConfig, PairBatch,
};
use crate::net::{reverse_gradient, Discriminator, HashModel, SgdState};
use crate::scalar::Real;
use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Momentum, weight decay, and the output-layer learning-rate
/// multiplier are fixed points of the training recipe, not knobs.
pub const MOMENTUM: f64 = 0.9;
pub const WEIGHT_DECAY: f64 = 0.0005;
pub const OUTPUT_LR_MULTIPLIER: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Full model: t-distribution pair loss + adversarial alignment.
    #[serde(rename = "tah")]
    Tah,
    /// Inner-product pair loss instead of the t-distribution one.
    #[serde(rename = "tah-t")]
    TahT,
    /// No adversarial branch; source-only training.
    #[serde(rename = "tah-a")]
    TahA,
}

impl Variant {
    pub fn uses_adversary(self) -> bool {
        !matches!(self, Variant::TahA)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Tah => "tah",
            Variant::TahT => "tah-t",
            Variant::TahA => "tah-a",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tah" => Ok(Variant::Tah),
            "tah-t" => Ok(Variant::TahT),
            "tah-a" => Ok(Variant::TahA),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant {other:?}, expected tah, tah-t, or tah-a"
            ))),
        }
    }
}

fn default_epochs() -> usize {
    40
}
fn default_batch_pairs() -> usize {
    64
}
fn default_batch_mixed() -> usize {
    64
}
fn default_lr0() -> f64 {
    3e-4
}
fn default_lambda() -> f64 {
    0.1
}
fn default_mu_max() -> f64 {
    1.0
}
fn default_similar_fraction() -> f64 {
    0.25
}
fn default_hidden() -> Vec<usize> {
    vec![256]
}
fn default_disc_hidden() -> usize {
    64
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub bits: usize,
    pub seed: u64,
    pub epochs: usize,
    /// Source pairs per step.
    pub batch_pairs: usize,
    /// Mixed-domain batch per step, split evenly; must be even.
    pub batch_mixed: usize,
    /// Base learning rate, annealed over progress.
    pub lr0: f64,
    /// Probability-map rate; falls back to the per-bit default.
    pub alpha: Option<f64>,
    /// Quantization weight.
    pub lambda: f64,
    /// Adversarial weight ceiling.
    pub mu_max: f64,
    /// Fraction of sampled pairs that are same-class.
    pub similar_fraction: f64,
    /// Hash net hidden widths.
    pub hidden: Vec<usize>,
    /// Discriminator hidden width.
    pub disc_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Tah,
            bits: 16,
            seed: 0,
            epochs: default_epochs(),
            batch_pairs: default_batch_pairs(),
            batch_mixed: default_batch_mixed(),
            lr0: default_lr0(),
            alpha: None,
            lambda: default_lambda(),
            mu_max: default_mu_max(),
            similar_fraction: default_similar_fraction(),
            hidden: default_hidden(),
            disc_hidden: default_disc_hidden(),
        }
    }
}

impl TrainConfig {
    pub fn new(variant: Variant, bits: usize, seed: u64) -> Self {
        TrainConfig {
            variant,
            bits,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn resolved_alpha(&self) -> f64 {
        self.alpha.unwrap_or_else(|| crate::loss::default_alpha(self.bits))
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 || self.bits > crate::codes::MAX_BITS {
            return Err(Error::InvalidArgument(format!(
                "bits must be in 1..={}, got {}",
                crate::codes::MAX_BITS,
                self.bits
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if self.batch_pairs == 0 {
            return Err(Error::InvalidArgument("batch_pairs must be positive".into()));
        }
        if self.batch_mixed < 2 || !self.batch_mixed.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "batch_mixed must be even and at least 2, got {}",
                self.batch_mixed
            )));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lr0 must be finite and positive, got {}",
                self.lr0
            )));
        }
        if !(self.similar_fraction > 0.0 && self.similar_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "similar_fraction must be inside (0,1), got {}",
                self.similar_fraction
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(
                "hidden must list at least one nonzero width".into(),
            ));
        }
        if self.disc_hidden == 0 {
            return Err(Error::InvalidArgument("disc_hidden must be positive".into()));
        }
        // alpha/lambda/mu_max share the loss-config validation.
        LossConfig::<f64>::new(self.bits, self.resolved_alpha(), self.lambda, self.mu_max)?;
        Ok(())
    }
}

/// Adversarial weight ramp, 0 at the start and mu_max at the end of
/// training (to within 1e-3 relative; the sigmoid never quite closes).
#[derive(Clone, Copy, Debug)]
pub struct MuSchedule {
    pub mu_max: f64,
}

impl MuSchedule {
    pub fn at(&self, progress: f64) -> f64 {
        self.mu_max * (2.0 / (1.0 + (-10.0 * progress).exp()) - 1.0)
    }
}

/// Polynomial learning-rate decay from lr0 at progress 0.
#[derive(Clone, Copy, Debug)]
pub struct LrSchedule {
    pub lr0: f64,
}

impl LrSchedule {
    pub fn at(&self, progress: f64) -> f64 {
        self.lr0 / (1.0 + 10.0 * progress).powf(0.75)
    }
}

/// Per-epoch means of the step losses, plus the schedule values in
/// effect at the epoch's first step. `d` and `disc_accuracy` are
/// absent for the variant without an adversary.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub j: f64,
    pub l: f64,
    pub q: f64,
    pub d: Option<f64>,
    pub disc_accuracy: Option<f64>,
    pub mu: f64,
    pub lr: f64,
}

/// History as CSV: epoch,J,L,Q,D,disc_accuracy,mu,lr with empty
/// fields where a column does not apply.
pub fn write_history<W: std::io::Write>(history: &[EpochStats], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["epoch", "J", "L", "Q", "D", "disc_accuracy", "mu", "lr"])?;
    for h in history {
        csv.write_record([
            h.epoch.to_string(),
            format!("{:.17e}", h.j),
            format!("{:.17e}", h.l),
            format!("{:.17e}", h.q),
            h.d.map(|v| format!("{v:.17e}")).unwrap_or_default(),
            h.disc_accuracy
                .map(|v| format!("{v:.17e}"))
                .unwrap_or_default(),
            format!("{:.17e}", h.mu),
            format!("{:.17e}", h.lr),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub struct TrainOutcome<T: Real> {
    pub model: HashModel<T>,
    pub disc: Option<Discriminator<T>>,
    pub history: Vec<EpochStats>,
}

/// Sampled index pairs and their similarity labels.
pub type PairSample = (Vec<(usize, usize)>, Vec<bool>);

/// Index pairs plus similarity labels, sampled by rejection so the
/// batch hits `similar_fraction` in expectation. Errors when the
/// labels cannot produce the requested relation (single class and a
/// dissimilar slot, or one-member classes everywhere for similar).
pub fn sample_pair_batch<R: Rng>(
    labels: &[u32],
    n_pairs: usize,
    similar_fraction: f64,
    rng: &mut R,
) -> Result<PairSample> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::Degenerate(
            "pair sampling needs at least two items".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut s = Vec::with_capacity(n_pairs);
    const MAX_TRIES: usize = 100_000;
    for _ in 0..n_pairs {
        let want_similar = rng.random_bool(similar_fraction);
        let mut found = None;
        for _ in 0..MAX_TRIES {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                continue;
            }
            if (labels[i] == labels[j]) == want_similar {
                found = Some((i, j));
                break;
            }
        }
        let Some(pair) = found else {
            return Err(Error::Degenerate(format!(
                "could not sample a {} pair; labels lack that relation",
                if want_similar { "similar" } else { "dissimilar" }
            )));
        };
        pairs.push(pair);
        s.push(want_similar);
    }
    Ok((pairs, s))
}

fn gather<T: Real>(features: &ArrayView2<T>, rows: impl Iterator<Item = usize>) -> Array2<T> {
    let idx: Vec<usize> = rows.collect();
    features.select(Axis(0), &idx)
}

/// Adds step context to numerical failures so the abort says where
/// training died, not just that it did.
fn at_step(err: Error, epoch: usize, step: usize) -> Error {
    match err {
        Error::NonFinite { context, detail } => Error::NonFinite {
            context,
            detail: format!("{detail} (epoch {epoch}, step {step})"),
        },
        e => e,
    }
}

/// Trains a hash model on labeled source features, optionally aligning
/// against unlabeled target features. The adversarial variants require
/// `target`; the source-only variant ignores it.
pub fn train<T: Real>(
    cfg: &TrainConfig,
    source: &FeatureDataset<T>,
    target: Option<&ArrayView2<'_, T>>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let labels = source.labels_required()?;
    let n_source = source.len();
    let dim = source.dim();
    let target = if cfg.variant.uses_adversary() {
        let t = target.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "variant {} needs target features",
                cfg.variant.as_str()
            ))
        })?;
        if t.ncols() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: t.ncols(),
            });
        }
        if t.nrows() == 0 {
            return Err(Error::Degenerate("empty target features".into()));
        }
        Some(t)
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dims = Vec::with_capacity(cfg.hidden.len() + 2);
    dims.push(dim);
    dims.extend_from_slice(&cfg.hidden);
    dims.push(cfg.bits);
    let mut model: HashModel<T> = HashModel::new(&dims, &mut rng)?;
    let mut disc: Option<Discriminator<T>> = if cfg.variant.uses_adversary() {
        Some(Discriminator::new(cfg.bits, cfg.disc_hidden, &mut rng)?)
    } else {
        None
    };

    let mut sgd_hash = SgdState::with_output_multiplier(
        model.net(),
        T::c(MOMENTUM),
        T::c(WEIGHT_DECAY),
        T::c(OUTPUT_LR_MULTIPLIER),
    )?;
    let mut sgd_disc = match &disc {
        Some(d) => Some(SgdState::new(
            d.net(),
            T::c(MOMENTUM),
            T::c(WEIGHT_DECAY),
            vec![T::one(); d.net().layer_count()],
        )?),
        None => None,
    };

    let loss_cfg = LossConfig::<T>::new(
        cfg.bits,
        T::c(cfg.resolved_alpha()),
        T::c(cfg.lambda),
        T::c(cfg.mu_max),
    )?;
    let pair_loss: fn(&PairBatch<T>, &LossConfig<T>) -> Result<crate::loss::PairLossOutput<T>> =
        match cfg.variant {
            Variant::TahT => pair_nll_inner_product,
            _ => pair_nll,
        };
    let mu_sched = MuSchedule { mu_max: cfg.mu_max };
    let lr_sched = LrSchedule { lr0: cfg.lr0 };

    let steps_per_epoch = n_source.div_ceil(cfg.batch_pairs);
    let total_steps = (cfg.epochs * steps_per_epoch) as f64;
    let srcf = source.features.view();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut sum_j = 0.0;
        let mut sum_l = 0.0;
        let mut sum_q = 0.0;
        let mut sum_d = 0.0;
        let mut sum_acc = 0.0;
        let epoch_mu = mu_sched.at(step as f64 / total_steps);
        let epoch_lr = lr_sched.at(step as f64 / total_steps);

        for _ in 0..steps_per_epoch {
            let progress = step as f64 / total_steps;
            let mu = mu_sched.at(progress);
            let lr = T::c(lr_sched.at(progress));

            // Pair branch.
            let (pairs, s) =
                sample_pair_batch(labels, cfg.batch_pairs, cfg.similar_fraction, &mut rng)?;
            let xi = gather(&srcf, pairs.iter().map(|p| p.0));
            let xj = gather(&srcf, pairs.iter().map(|p| p.1));
            let (zi, cache_i) = model.forward(xi.view())?;
            let (zj, cache_j) = model.forward(xj.view())?;
            let pair_out = pair_loss(&PairBatch::new(zi.clone(), zj.clone(), s)?, &loss_cfg)
                .map_err(|e| at_step(e, epoch, step))?;
            let (q_i, gq_i) = quantization_loss(zi.view());
            let (q_j, gq_j) = quantization_loss(zj.view());

            let l_val = pair_out.loss.to_f64_c();
            let q_val = (q_i + q_j).to_f64_c();
            let j_val = l_val + cfg.lambda * q_val;
            if !j_val.is_finite() {
                return Err(at_step(
                    Error::NonFinite {
                        context: "objective".into(),
                        detail: format!("J = {j_val}"),
                    },
                    epoch,
                    step,
                ));
            }

            let dzi = &pair_out.grad_zi + &(&gq_i * loss_cfg.lambda);
            let dzj = &pair_out.grad_zj + &(&gq_j * loss_cfg.lambda);
            let mut hash_grads = model.backward(&cache_i, dzi.view())?;
            hash_grads.add_assign(&model.backward(&cache_j, dzj.view())?)?;

            // Adversarial branch: one forward through both nets, one
            // backward each, reversed gradient into the hash grads.
            let mut disc_step: Option<(crate::net::Gradients<T>, f64, f64)> = None;
            if let (Some(d), Some(t)) = (&disc, target) {
                let half = cfg.batch_mixed / 2;
                let src_rows = gather(&srcf, (0..half).map(|_| rng.random_range(0..n_source)));
                let tgt_rows = gather(t, (0..half).map(|_| rng.random_range(0..t.nrows())));
                let mut u = Array2::zeros((cfg.batch_mixed, dim));
                u.slice_mut(ndarray::s![..half, ..]).assign(&src_rows);
                u.slice_mut(ndarray::s![half.., ..]).assign(&tgt_rows);
                let d_labels: Vec<bool> = (0..cfg.batch_mixed).map(|k| k >= half).collect();

                let (zu, cache_u) = model.forward(u.view())?;
                let (p_mat, cache_d) = d.forward(zu.view())?;
                let p_vec: Vec<T> = p_mat.column(0).to_vec();
                let (d_val, grad_p) =
                    domain_bce(&p_vec, &d_labels).map_err(|e| at_step(e, epoch, step))?;
                let grad_p_mat =
                    Array2::from_shape_vec((cfg.batch_mixed, 1), grad_p).expect("column shape");
                let disc_grads = d.backward(&cache_d, grad_p_mat.view())?;

                let reversed = reverse_gradient(&disc_grads.d_input, T::c(mu));
                hash_grads.add_assign(&model.backward(&cache_u, reversed.view())?)?;

                let correct = p_vec
                    .iter()
                    .zip(&d_labels)
                    .filter(|(&p, &lab)| (p > T::c(0.5)) == lab)
                    .count();
                let acc = correct as f64 / cfg.batch_mixed as f64;
                disc_step = Some((disc_grads, d_val.to_f64_c(), acc));
            }

            sgd_hash.step(model.net_mut(), &hash_grads, lr)?;
            if let Some((disc_grads, d_val, acc)) = disc_step {
                let d = disc.as_mut().expect("adversarial variant");
                sgd_disc
                    .as_mut()
                    .expect("adversarial variant")
                    .step(d.net_mut(), &disc_grads, lr)?;
                sum_d += d_val;
                sum_acc += acc;
            }

            sum_j += j_val;
            sum_l += l_val;
            sum_q += q_val;
            step += 1;
        }

        let per = steps_per_epoch as f64;
        history.push(EpochStats {
            epoch,
            j: sum_j / per,
            l: sum_l / per,
            q: sum_q / per,
            d: disc.is_some().then_some(sum_d / per),
            disc_accuracy: disc.is_some().then_some(sum_acc / per),
            mu: epoch_mu,
            lr: epoch_lr,
        });
    }

    Ok(TrainOutcome {
        model,
        disc,
        history,
    })
}

/// Trains a fresh discriminator against a frozen hash model, for
/// probing how separable the two domains stay in code space. The
/// model is never updated; only the discriminator descends the
/// domain BCE, under the same schedule and batch shape as `train`.
pub fn train_discriminator_probe<T: Real>(
    model: &HashModel<T>,
    source: ArrayView2<'_, T>,
    target: ArrayView2<'_, T>,
    cfg: &TrainConfig,
) -> Result<Discriminator<T>> {
    cfg.validate()?;
    let dim = model.net().input_dim();
    for feats in [&source, &target] {
        if feats.ncols() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: feats.ncols(),
            });
        }
        if feats.nrows() == 0 {
            return Err(Error::Degenerate("empty probe features".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut disc = Discriminator::new(model.net().output_dim(), cfg.disc_hidden, &mut rng)?;
    let mut sgd = SgdState::new(
        disc.net(),
        T::c(MOMENTUM),
        T::c(WEIGHT_DECAY),
        vec![T::one(); disc.net().layer_count()],
    )?;
    let lr_sched = LrSchedule { lr0: cfg.lr0 };
    let half = cfg.batch_mixed / 2;
    let steps_per_epoch = source.nrows().max(target.nrows()).div_ceil(half);
    let total_steps = (cfg.epochs * steps_per_epoch) as f64;

    for step in 0..cfg.epochs * steps_per_epoch {
        let lr = T::c(lr_sched.at(step as f64 / total_steps));
        let src = gather(&source, (0..half).map(|_| rng.random_range(0..source.nrows())));
        let tgt = gather(&target, (0..half).map(|_| rng.random_range(0..target.nrows())));
        let mut u = Array2::zeros((cfg.batch_mixed, dim));
        u.slice_mut(ndarray::s![..half, ..]).assign(&src);
        u.slice_mut(ndarray::s![half.., ..]).assign(&tgt);
        let d_labels: Vec<bool> = (0..cfg.batch_mixed).map(|k| k >= half).collect();

        let (z, _) = model.forward(u.view())?;
        let (p_mat, cache) = disc.forward(z.view())?;
        let p_vec: Vec<T> = p_mat.column(0).to_vec();
        let (_, grad_p) = domain_bce(&p_vec, &d_labels)?;
        let grad_p_mat =
            Array2::from_shape_vec((cfg.batch_mixed, 1), grad_p).expect("column shape");
        let grads = disc.backward(&cache, grad_p_mat.view())?;
        sgd.step(disc.net_mut(), &grads, lr)?;
    }
    Ok(disc)
}

/// Fraction of held-out rows the discriminator classifies correctly,
/// over all of `source` (labeled 0) and `target` (labeled 1) pushed
/// through the frozen hash model. Deterministic full pass, no sampling.
pub fn discriminator_accuracy<T: Real>(
    model: &HashModel<T>,
    disc: &Discriminator<T>,
    source: ArrayView2<'_, T>,
    target: ArrayView2<'_, T>,
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (feats, is_target) in [(source, false), (target, true)] {
        if feats.nrows() == 0 {
            return Err(Error::Degenerate("empty held-out features".into()));
        }
        for chunk in feats.axis_chunks_iter(Axis(0), 256) {
            let (z, _) = model.forward(chunk)?;
            let (p, _) = disc.forward(z.view())?;
            correct += p
                .column(0)
                .iter()
                .filter(|&&v| (v > T::c(0.5)) == is_target)
                .count();
            total += chunk.nrows();
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Thresholds features into packed codes, in row order.
pub fn encode<T: Real>(model: &HashModel<T>, features: ArrayView2<'_, T>) -> Result<Vec<BinaryCode>> {
    let mut codes = Vec::with_capacity(features.nrows());
    for chunk in features.axis_chunks_iter(Axis(0), 256) {
        let (z, _) = model.forward(chunk)?;
        for row in z.rows() {
            codes.push(crate::codes::RelaxedCode::new(row.to_vec())?.sign_threshold());
        }
    }
    Ok(codes)
}
