//! Loss functions for learning relaxed codes.
//!
//! Pair supervision uses a Student-t style similarity between relaxed
//! codes z in [-1,1]^b:
//!
//! ```text
//! sim(zi, zj) = b / (1 + ||zi - zj||^2)
//! P(s = 1)    = tanh(alpha * sim)
//! ```
//!
//! The heavy-tailed kernel keeps gradients alive for pairs that are
//! far apart in code space, where an inner-product logistic model has
//! already saturated. With y = 2 * alpha * sim, the per-pair negative
//! log likelihood is
//!
//! ```text
//! loss = log((1 + e^y) / 2) - s * log((e^y - 1) / 2)
//! ```
//!
//! evaluated here in ln_1p form so nothing overflows for large y:
//! s = 1 gives `ln_1p(e^-y) - ln_1p(-e^-y)` and s = 0 gives
//! `y + ln_1p(e^-y) - ln 2`. Since ||zi - zj||^2 <= 4b the similarity
//! is bounded below by b / (1 + 4b) > 0, so e^y - 1 never reaches 0
//! and the log stays finite.
//!
//! Two auxiliary terms complete the objective: an L1 quantization
//! penalty pushing entries toward {-1,+1}, and a binary cross entropy
//! on domain predictions for adversarial alignment.

use crate::error::{Error, Result};
use crate::scalar::Real;
use ndarray::{Array2, ArrayView1, ArrayView2};

/// Base rate of the tanh probability map, chosen per code length so
/// that typical similarity values land on the responsive part of the
/// curve rather than the saturated tail.
pub fn default_alpha(bits: usize) -> f64 {
    if bits <= 32 {
        0.125
    } else {
        0.0625
    }
}

#[derive(Clone, Debug)]
pub struct LossConfig<T: Real> {
    pub bits: usize,
    pub alpha: T,
    pub lambda: T,
    pub mu_max: T,
}

impl<T: Real> LossConfig<T> {
    pub fn new(bits: usize, alpha: T, lambda: T, mu_max: T) -> Result<Self> {
        if bits == 0 {
            return Err(Error::InvalidArgument("bits must be positive".into()));
        }
        if !(alpha.is_finite() && alpha > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be finite and positive, got {alpha}"
            )));
        }
        if !(lambda.is_finite() && lambda >= T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and nonnegative, got {lambda}"
            )));
        }
        if !(mu_max.is_finite() && mu_max >= T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "mu_max must be finite and nonnegative, got {mu_max}"
            )));
        }
        Ok(LossConfig {
            bits,
            alpha,
            lambda,
            mu_max,
        })
    }

    pub fn with_default_alpha(bits: usize, lambda: T, mu_max: T) -> Result<Self> {
        LossConfig::new(bits, T::c(default_alpha(bits)), lambda, mu_max)
    }
}

/// A batch of relaxed-code pairs with similarity labels. Row k of `zi`
/// pairs with row k of `zj` under label `s[k]`.
#[derive(Clone, Debug)]
pub struct PairBatch<T: Real> {
    pub zi: Array2<T>,
    pub zj: Array2<T>,
    pub s: Vec<bool>,
}

impl<T: Real> PairBatch<T> {
    pub fn new(zi: Array2<T>, zj: Array2<T>, s: Vec<bool>) -> Result<Self> {
        if zi.dim() != zj.dim() {
            return Err(Error::InvalidArgument(format!(
                "pair sides have shapes {:?} and {:?}",
                zi.dim(),
                zj.dim()
            )));
        }
        if zi.nrows() != s.len() {
            return Err(Error::InvalidArgument(format!(
                "{} pairs but {} labels",
                zi.nrows(),
                s.len()
            )));
        }
        if s.is_empty() {
            return Err(Error::InvalidArgument("empty pair batch".into()));
        }
        Ok(PairBatch { zi, zj, s })
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// sim = bits / (1 + ||zi - zj||^2). Errors if the vectors disagree
/// with each other or with `bits`.
pub fn t_similarity<T: Real>(zi: ArrayView1<T>, zj: ArrayView1<T>, bits: usize) -> Result<T> {
    if zi.len() != zj.len() || zi.len() != bits {
        return Err(Error::DimMismatch {
            expected: bits,
            got: if zi.len() != bits { zi.len() } else { zj.len() },
        });
    }
    let d2: T = zi
        .iter()
        .zip(zj.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(T::c(bits as f64) / (T::one() + d2))
}

/// P(s = 1) = tanh(alpha * sim).
pub fn probability<T: Real>(similarity: T, alpha: T) -> T {
    (alpha * similarity).tanh()
}

#[derive(Debug)]
pub struct PairLossOutput<T: Real> {
    /// Sum of per-pair losses over the batch.
    pub loss: T,
    pub grad_zi: Array2<T>,
    pub grad_zj: Array2<T>,
}

fn check_finite<T: Real>(loss: T, grads: &[&Array2<T>], context: &str) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: context.into(),
            detail: format!("loss = {loss}"),
        });
    }
    for g in grads {
        if let Some(((r, c), v)) = g.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: context.into(),
                detail: format!("gradient entry ({r},{c}) = {v}"),
            });
        }
    }
    Ok(())
}

/// Pairwise NLL under the t-similarity model, with gradients w.r.t.
/// both relaxed codes. Loss is the batch sum.
pub fn pair_nll<T: Real>(batch: &PairBatch<T>, cfg: &LossConfig<T>) -> Result<PairLossOutput<T>> {
    if batch.zi.ncols() != cfg.bits {
        return Err(Error::DimMismatch {
            expected: cfg.bits,
            got: batch.zi.ncols(),
        });
    }
    let one = T::one();
    let two = T::c(2.0);
    let ln2 = T::c(std::f64::consts::LN_2);
    let bits_t = T::c(cfg.bits as f64);

    let mut loss = T::zero();
    let mut grad_zi = Array2::zeros(batch.zi.raw_dim());
    let mut grad_zj = Array2::zeros(batch.zj.raw_dim());

    for k in 0..batch.len() {
        let zi = batch.zi.row(k);
        let zj = batch.zj.row(k);
        let d2: T = zi
            .iter()
            .zip(zj.iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let x = bits_t / (one + d2);
        let y = two * cfg.alpha * x;
        let emy = (-y).exp();

        // ln((1+e^y)/2) = y + ln_1p(e^-y) - ln 2
        // ln((e^y-1)/2) = y + ln_1p(-e^-y) - ln 2
        let pair_loss = if batch.s[k] {
            emy.ln_1p() - (-emy).ln_1p()
        } else {
            y + emy.ln_1p() - ln2
        };
        loss += pair_loss;

        // d loss / dy = sigmoid(y) - s / (1 - e^-y)
        let sig = one / (one + emy);
        let mut dldy = sig;
        if batch.s[k] {
            dldy -= one / (one - emy);
        }
        // dy/dx = 2 alpha, dx/dD = -x^2 / b, dD/dzi = 2 (zi - zj)
        let coeff = dldy * two * cfg.alpha * (-(x * x) / bits_t) * two;
        for c in 0..cfg.bits {
            let diff = zi[c] - zj[c];
            grad_zi[(k, c)] = coeff * diff;
            grad_zj[(k, c)] = -coeff * diff;
        }
    }
    check_finite(loss, &[&grad_zi, &grad_zj], "pair_nll")?;
    Ok(PairLossOutput {
        loss,
        grad_zi,
        grad_zj,
    })
}

/// Inner-product logistic baseline: x = alpha * <zi, zj>, per-pair
/// loss `softplus(x) - s * x`. Same interface as [`pair_nll`] so a
/// trainer can swap models without touching anything else.
pub fn pair_nll_inner_product<T: Real>(
    batch: &PairBatch<T>,
    cfg: &LossConfig<T>,
) -> Result<PairLossOutput<T>> {
    if batch.zi.ncols() != cfg.bits {
        return Err(Error::DimMismatch {
            expected: cfg.bits,
            got: batch.zi.ncols(),
        });
    }
    let one = T::one();
    let mut loss = T::zero();
    let mut grad_zi = Array2::zeros(batch.zi.raw_dim());
    let mut grad_zj = Array2::zeros(batch.zj.raw_dim());

    for k in 0..batch.len() {
        let zi = batch.zi.row(k);
        let zj = batch.zj.row(k);
        let ip: T = zi.iter().zip(zj.iter()).map(|(&a, &b)| a * b).sum();
        let x = cfg.alpha * ip;

        // softplus(x) - s*x, each case written so no large terms
        // cancel: at x = 60 the similar-pair loss is ~9e-27, far below
        // the ulp of softplus(60) itself.
        loss += match (batch.s[k], x > T::zero()) {
            (true, true) => (-x).exp().ln_1p(),
            (true, false) => x.exp().ln_1p() - x,
            (false, true) => x + (-x).exp().ln_1p(),
            (false, false) => x.exp().ln_1p(),
        };
        let s = if batch.s[k] { one } else { T::zero() };

        let sig = one / (one + (-x).exp());
        let coeff = (sig - s) * cfg.alpha;
        for c in 0..cfg.bits {
            grad_zi[(k, c)] = coeff * zj[c];
            grad_zj[(k, c)] = coeff * zi[c];
        }
    }
    check_finite(loss, &[&grad_zi, &grad_zj], "pair_nll_inner_product")?;
    Ok(PairLossOutput {
        loss,
        grad_zi,
        grad_zj,
    })
}

/// L1 pull toward the hypercube corners: sum over entries of
/// | |z_kc| - 1 |, with the subgradient sign(|z|-1) * sign(z) and
/// sign(0) = 0. On the tanh range |z| < 1 this is 1 - |z| with
/// gradient -sign(z).
pub fn quantization_loss<T: Real>(z: ArrayView2<T>) -> (T, Array2<T>) {
    let one = T::one();
    let mut loss = T::zero();
    let mut grad = Array2::zeros(z.raw_dim());
    for ((r, c), &v) in z.indexed_iter() {
        loss += (v.abs() - one).abs();
        let outer = v.abs() - one;
        if outer != T::zero() && v != T::zero() {
            grad[(r, c)] = outer.signum() * v.signum();
        }
    }
    (loss, grad)
}

/// Mean binary cross entropy of domain predictions `p` against labels
/// `d` (true = target domain), plus the gradient w.r.t. `p`. Every
/// p_k must lie strictly inside (0,1); the discriminator clamps its
/// output so this holds, and anything else is reported rather than
/// silently patched.
pub fn domain_bce<T: Real>(p: &[T], d: &[bool]) -> Result<(T, Vec<T>)> {
    if p.len() != d.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions but {} labels",
            p.len(),
            d.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::InvalidArgument("empty domain batch".into()));
    }
    let one = T::one();
    for (k, &pk) in p.iter().enumerate() {
        if !pk.is_finite() || pk <= T::zero() || pk >= one {
            return Err(Error::NonFinite {
                context: "domain_bce".into(),
                detail: format!("prediction {k} = {pk} outside (0,1)"),
            });
        }
    }
    let n = T::c(p.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(p.len());
    for (&pk, &dk) in p.iter().zip(d) {
        if dk {
            loss -= pk.ln();
            grad.push(-one / pk / n);
        } else {
            loss -= (one - pk).ln();
            grad.push(one / (one - pk) / n);
        }
    }
    Ok((loss / n, grad))
}
