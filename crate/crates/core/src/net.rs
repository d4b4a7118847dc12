//! Hash network, domain discriminator, and their shared MLP core.
//!
//! Both models are plain fully connected stacks. The hash network maps
//! features to relaxed codes with ReLU hidden layers and a tanh output
//! so every coordinate lands in (-1,1). The discriminator maps relaxed
//! codes to a domain probability with ReLU hidden layers and a sigmoid
//! output clamped to [1e-7, 1 - 1e-7] so downstream cross entropy
//! never sees 0 or 1.
//!
//! `forward` returns the output together with a cache of layer inputs
//! and pre-activations. `backward` consumes gradients w.r.t. the
//! output and the cache; the cache records the parameter version it
//! was built against, and a backward pass against a model that has
//! stepped since is an error rather than a silently wrong gradient.
//!
//! Checkpoints are a versioned binary layout:
//!
//! ```text
//! magic "HMC1" | u32 LE layer count |
//!   per layer: u32 LE in_dim, u32 LE out_dim, u8 activation tag |
//!   per layer: weights row-major f64 LE (out_dim rows of in_dim), bias f64 LE
//! ```
//!
//! plus a JSON metadata sidecar ([`CheckpointMeta`]) carrying the
//! training hyperparameters a reader needs to reproduce encoding.

use crate::error::{Error, Result};
use crate::scalar::Real;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Discriminator outputs are clamped into [EPS, 1-EPS].
pub const SIGMOID_CLAMP: f64 = 1e-7;

const MAGIC: &[u8; 4] = b"HMC1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
        }
    }

    fn from_tag(tag: u8, offset: u64) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Sigmoid),
            t => Err(Error::Parse {
                offset,
                what: format!("unknown activation tag {t}"),
            }),
        }
    }
}

#[derive(Clone, Debug)]
struct Layer<T: Real> {
    /// (out_dim, in_dim); row r holds the weights of output unit r.
    w: Array2<T>,
    b: Array1<T>,
    act: Activation,
}

/// Fully connected stack, the shared machinery beneath both models.
#[derive(Clone, Debug)]
pub struct Mlp<T: Real> {
    layers: Vec<Layer<T>>,
    /// Bumped by every parameter update; caches carry the version they
    /// were computed at.
    version: u64,
    /// Clamp applied to sigmoid outputs of the final layer.
    output_clamp: Option<f64>,
}

/// Layer inputs and pre-activations captured during a forward pass.
pub struct ForwardCache<T: Real> {
    version: u64,
    inputs: Vec<Array2<T>>,
    preacts: Vec<Array2<T>>,
}

/// Gradients from one backward pass: per-layer weight and bias
/// gradients plus the gradient w.r.t. the network input.
pub struct Gradients<T: Real> {
    pub d_weights: Vec<Array2<T>>,
    pub d_biases: Vec<Array1<T>>,
    pub d_input: Array2<T>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of parameter `idx` under the flat ordering of
    /// [`Mlp::get_param`].
    pub fn param(&self, mut idx: usize) -> Option<T> {
        for (w, b) in self.d_weights.iter().zip(&self.d_biases) {
            if idx < w.len() {
                return Some(w.as_slice().expect("standard layout")[idx]);
            }
            idx -= w.len();
            if idx < b.len() {
                return Some(b.as_slice().expect("standard layout")[idx]);
            }
            idx -= b.len();
        }
        None
    }

    /// Entrywise accumulation; shapes must agree.
    pub fn add_assign(&mut self, other: &Gradients<T>) -> Result<()> {
        if self.d_weights.len() != other.d_weights.len() {
            return Err(Error::InvalidArgument(
                "gradient layer counts differ".into(),
            ));
        }
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            if a.dim() != b.dim() {
                return Err(Error::InvalidArgument(
                    "gradient shapes differ".into(),
                ));
            }
            *a += b;
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            *a += b;
        }
        Ok(())
    }
}

fn xavier_uniform<T: Real, R: Rng>(out_dim: usize, in_dim: usize, rng: &mut R) -> Array2<T> {
    let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
    Array2::from_shape_fn((out_dim, in_dim), |_| {
        T::c(rng.random_range(-bound..bound))
    })
}

impl<T: Real> Mlp<T> {
    /// `dims` is [input, hidden..., output]; `acts` has one entry per
    /// layer. Weights are Xavier-uniform, biases zero.
    fn new<R: Rng>(dims: &[usize], acts: &[Activation], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || acts.len() != dims.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} dims need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                acts.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArgument("zero-width layer".into()));
        }
        let layers = dims
            .windows(2)
            .zip(acts)
            .map(|(io, &act)| Layer {
                w: xavier_uniform(io[1], io[0], rng),
                b: Array1::zeros(io[1]),
                act,
            })
            .collect();
        Ok(Mlp {
            layers,
            version: 0,
            output_clamp: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().expect("at least one layer").w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").w.nrows()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Total parameter count, weights plus biases.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Reads parameter `idx` under the flat ordering: layer 0 weights
    /// row-major, layer 0 biases, layer 1 weights, and so on. The same
    /// ordering is used by [`Gradients::param`], so finite-difference
    /// probes can walk every parameter through a stable index space.
    pub fn get_param(&self, mut idx: usize) -> Option<T> {
        for l in &self.layers {
            if idx < l.w.len() {
                return Some(l.w.as_slice().expect("standard layout")[idx]);
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                return Some(l.b.as_slice().expect("standard layout")[idx]);
            }
            idx -= l.b.len();
        }
        None
    }

    /// Writes parameter `idx` (flat ordering as in [`Mlp::get_param`])
    /// and bumps the version, invalidating outstanding caches.
    pub fn set_param(&mut self, mut idx: usize, value: T) -> Result<()> {
        self.version += 1;
        for l in &mut self.layers {
            if idx < l.w.len() {
                l.w.as_slice_mut().expect("standard layout")[idx] = value;
                return Ok(());
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                l.b.as_slice_mut().expect("standard layout")[idx] = value;
                return Ok(());
            }
            idx -= l.b.len();
        }
        Err(Error::InvalidArgument(format!(
            "parameter index {idx} out of range"
        )))
    }

    /// Runs a batch (rows are items) through the stack.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        for (li, layer) in self.layers.iter().enumerate() {
            let pre = cur.dot(&layer.w.t()) + &layer.b;
            inputs.push(cur);
            let mut out = pre.clone();
            match layer.act {
                Activation::Relu => out.mapv_inplace(|v| v.max(T::zero())),
                Activation::Tanh => out.mapv_inplace(|v| v.tanh()),
                Activation::Sigmoid => {
                    out.mapv_inplace(|v| T::one() / (T::one() + (-v).exp()));
                    if li == self.layers.len() - 1 {
                        if let Some(eps) = self.output_clamp {
                            let lo = T::c(eps);
                            let hi = T::one() - lo;
                            out.mapv_inplace(|v| v.min(hi).max(lo));
                        }
                    }
                }
            }
            preacts.push(pre);
            cur = out;
        }
        Ok((
            cur,
            ForwardCache {
                version: self.version,
                inputs,
                preacts,
            },
        ))
    }

    /// Backpropagates `d_out` (gradient w.r.t. the forward output)
    /// through the cached pass. The clamp on sigmoid outputs is treated
    /// as identity here; when it binds, the sigmoid derivative is
    /// already ~1e-7, so the distinction is below working precision.
    pub fn backward(&self, cache: &ForwardCache<T>, d_out: ArrayView2<T>) -> Result<Gradients<T>> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                model: self.version,
                cache: cache.version,
            });
        }
        let rows = cache.inputs[0].nrows();
        if d_out.nrows() != rows || d_out.ncols() != self.output_dim() {
            return Err(Error::DimMismatch {
                expected: self.output_dim(),
                got: d_out.ncols(),
            });
        }
        let mut d_weights = vec![Array2::zeros((0, 0)); self.layers.len()];
        let mut d_biases = vec![Array1::zeros(0); self.layers.len()];
        let mut grad = d_out.to_owned();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.preacts[li];
            // d pre = d out * act'(pre)
            let mut d_pre = grad;
            match layer.act {
                Activation::Relu => {
                    d_pre.zip_mut_with(pre, |g, &p| {
                        if p <= T::zero() {
                            *g = T::zero();
                        }
                    });
                }
                Activation::Tanh => {
                    d_pre.zip_mut_with(pre, |g, &p| {
                        let t = p.tanh();
                        *g *= T::one() - t * t;
                    });
                }
                Activation::Sigmoid => {
                    d_pre.zip_mut_with(pre, |g, &p| {
                        let s = T::one() / (T::one() + (-p).exp());
                        *g = *g * s * (T::one() - s);
                    });
                }
            }
            d_weights[li] = d_pre.t().dot(&cache.inputs[li]);
            d_biases[li] = d_pre.sum_axis(Axis(0));
            grad = d_pre.dot(&layer.w);
        }
        Ok(Gradients {
            d_weights,
            d_biases,
            d_input: grad,
        })
    }

    fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for layer in &self.layers {
            w.write_all(&(layer.w.ncols() as u32).to_le_bytes())?;
            w.write_all(&(layer.w.nrows() as u32).to_le_bytes())?;
            w.write_all(&[layer.act.tag()])?;
        }
        for layer in &self.layers {
            for &v in layer.w.iter() {
                w.write_all(&v.to_f64_c().to_le_bytes())?;
            }
            for &v in layer.b.iter() {
                w.write_all(&v.to_f64_c().to_le_bytes())?;
            }
        }
        Ok(())
    }

    fn read_checkpoint<R: Read>(r: &mut R, output_clamp: Option<f64>) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact_at(r, &mut magic, 0, "magic")?;
        if &magic != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                what: format!("bad magic {magic:?}, expected {MAGIC:?}"),
            });
        }
        let mut u32buf = [0u8; 4];
        read_exact_at(r, &mut u32buf, 4, "layer count")?;
        let n_layers = u32::from_le_bytes(u32buf) as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(Error::Parse {
                offset: 4,
                what: format!("implausible layer count {n_layers}"),
            });
        }
        let mut shapes = Vec::with_capacity(n_layers);
        let mut offset = 8u64;
        for _ in 0..n_layers {
            read_exact_at(r, &mut u32buf, offset, "in dim")?;
            let in_dim = u32::from_le_bytes(u32buf) as usize;
            read_exact_at(r, &mut u32buf, offset + 4, "out dim")?;
            let out_dim = u32::from_le_bytes(u32buf) as usize;
            let mut tag = [0u8; 1];
            read_exact_at(r, &mut tag, offset + 8, "activation tag")?;
            let act = Activation::from_tag(tag[0], offset + 8)?;
            if in_dim == 0 || out_dim == 0 || in_dim > 1 << 20 || out_dim > 1 << 20 {
                return Err(Error::Parse {
                    offset,
                    what: format!("implausible layer shape {in_dim}x{out_dim}"),
                });
            }
            shapes.push((in_dim, out_dim, act));
            offset += 9;
        }
        for win in shapes.windows(2) {
            if win[0].1 != win[1].0 {
                return Err(Error::Parse {
                    offset,
                    what: format!(
                        "layer output {} does not feed layer input {}",
                        win[0].1, win[1].0
                    ),
                });
            }
        }
        let mut layers = Vec::with_capacity(n_layers);
        let mut f64buf = [0u8; 8];
        for &(in_dim, out_dim, act) in &shapes {
            let mut w = Array2::zeros((out_dim, in_dim));
            for r_i in 0..out_dim {
                for c_i in 0..in_dim {
                    read_exact_at(r, &mut f64buf, offset, "weight")?;
                    w[(r_i, c_i)] = T::c(f64::from_le_bytes(f64buf));
                    offset += 8;
                }
            }
            let mut b = Array1::zeros(out_dim);
            for r_i in 0..out_dim {
                read_exact_at(r, &mut f64buf, offset, "bias")?;
                b[r_i] = T::c(f64::from_le_bytes(f64buf));
                offset += 8;
            }
            layers.push(Layer { w, b, act });
        }
        Ok(Mlp {
            layers,
            version: 0,
            output_clamp,
        })
    }
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Parse {
                offset,
                what: format!("truncated {what}"),
            }
        } else {
            Error::Io(e)
        }
    })
}

/// Feature-to-code network: ReLU hidden layers, tanh output of width
/// `bits`, so outputs are valid relaxed codes.
#[derive(Clone, Debug)]
pub struct HashModel<T: Real> {
    net: Mlp<T>,
}

impl<T: Real> HashModel<T> {
    /// `dims` is [feature_dim, hidden..., bits] and needs at least one
    /// hidden layer.
    pub fn new<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 3 {
            return Err(Error::InvalidArgument(
                "hash model needs [input, hidden.., bits]".into(),
            ));
        }
        let mut acts = vec![Activation::Relu; dims.len() - 2];
        acts.push(Activation::Tanh);
        Ok(HashModel {
            net: Mlp::new(dims, &acts, rng)?,
        })
    }

    pub fn bits(&self) -> usize {
        self.net.output_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp<T> {
        &mut self.net
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.net.forward(x)
    }

    pub fn backward(&self, cache: &ForwardCache<T>, d_out: ArrayView2<T>) -> Result<Gradients<T>> {
        self.net.backward(cache, d_out)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.net.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let net = Mlp::read_checkpoint(&mut r, None)?;
        if net.layers.last().expect("nonempty").act != Activation::Tanh {
            return Err(Error::Parse {
                offset: 0,
                what: "hash model checkpoint must end in tanh".into(),
            });
        }
        Ok(HashModel { net })
    }
}

/// Code-to-domain classifier: ReLU hidden layers, clamped sigmoid
/// scalar output interpreted as P(domain = target).
#[derive(Clone, Debug)]
pub struct Discriminator<T: Real> {
    net: Mlp<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new<R: Rng>(bits: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let dims = [bits, hidden, hidden, 1];
        let acts = [Activation::Relu, Activation::Relu, Activation::Sigmoid];
        let mut net = Mlp::new(&dims, &acts, rng)?;
        net.output_clamp = Some(SIGMOID_CLAMP);
        Ok(Discriminator { net })
    }

    pub fn bits(&self) -> usize {
        self.net.input_dim()
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp<T> {
        &mut self.net
    }

    pub fn forward(&self, z: ArrayView2<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.net.forward(z)
    }

    pub fn backward(&self, cache: &ForwardCache<T>, d_out: ArrayView2<T>) -> Result<Gradients<T>> {
        self.net.backward(cache, d_out)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.net.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let net = Mlp::read_checkpoint(&mut r, Some(SIGMOID_CLAMP))?;
        if net.layers.last().expect("nonempty").act != Activation::Sigmoid
            || net.output_dim() != 1
        {
            return Err(Error::Parse {
                offset: 0,
                what: "discriminator checkpoint must end in a scalar sigmoid".into(),
            });
        }
        Ok(Discriminator { net })
    }
}

/// Gradient reversal: what flows from the discriminator into the hash
/// network is the negated, mu-scaled domain gradient, turning one
/// backward pass into a saddle-point step.
pub fn reverse_gradient<T: Real>(grad: &Array2<T>, mu: T) -> Array2<T> {
    grad.mapv(|g| -(mu * g))
}

/// SGD with momentum and weight decay. Velocities live here, one per
/// parameter tensor, so the same state object must be used across
/// steps. Per-layer learning-rate multipliers let the output layer
/// train faster than the trunk.
pub struct SgdState<T: Real> {
    vel_w: Vec<Array2<T>>,
    vel_b: Vec<Array1<T>>,
    momentum: T,
    weight_decay: T,
    lr_multipliers: Vec<T>,
}

impl<T: Real> SgdState<T> {
    /// `lr_multipliers` has one entry per layer; pass 1.0 everywhere
    /// for a uniform rate.
    pub fn new(model: &Mlp<T>, momentum: T, weight_decay: T, lr_multipliers: Vec<T>) -> Result<Self> {
        if lr_multipliers.len() != model.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "{} layers but {} lr multipliers",
                model.layers.len(),
                lr_multipliers.len()
            )));
        }
        Ok(SgdState {
            vel_w: model.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            vel_b: model.layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
            momentum,
            weight_decay,
            lr_multipliers,
        })
    }

    /// Uniform multipliers except the final layer, which gets `mult`.
    pub fn with_output_multiplier(
        model: &Mlp<T>,
        momentum: T,
        weight_decay: T,
        mult: T,
    ) -> Result<Self> {
        let mut m = vec![T::one(); model.layers.len()];
        *m.last_mut().expect("nonempty") = mult;
        SgdState::new(model, momentum, weight_decay, m)
    }

    /// v <- momentum * v - lr_layer * (grad + weight_decay * param);
    /// param <- param + v. Bumps the model version so outstanding
    /// forward caches become stale.
    pub fn step(&mut self, model: &mut Mlp<T>, grads: &Gradients<T>, lr: T) -> Result<()> {
        if grads.d_weights.len() != model.layers.len() {
            return Err(Error::InvalidArgument(
                "gradient layer count does not match model".into(),
            ));
        }
        if !(lr.is_finite() && lr > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and positive, got {lr}"
            )));
        }
        let mom = self.momentum;
        let wd = self.weight_decay;
        for (li, layer) in model.layers.iter_mut().enumerate() {
            let gw = &grads.d_weights[li];
            let gb = &grads.d_biases[li];
            if gw.dim() != layer.w.dim() || gb.dim() != layer.b.dim() {
                return Err(Error::InvalidArgument(format!(
                    "gradient shape mismatch at layer {li}"
                )));
            }
            let lr_l = lr * self.lr_multipliers[li];
            let vw = &mut self.vel_w[li];
            ndarray::Zip::from(&mut *vw)
                .and(gw)
                .and(&layer.w)
                .for_each(|v, &g, &p| *v = mom * *v - lr_l * (g + wd * p));
            layer.w += &*vw;

            let vb = &mut self.vel_b[li];
            ndarray::Zip::from(&mut *vb)
                .and(gb)
                .and(&layer.b)
                .for_each(|v, &g, &p| *v = mom * *v - lr_l * (g + wd * p));
            layer.b += &*vb;
        }
        model.version += 1;
        Ok(())
    }
}

/// Hyperparameters stored beside a hash-model checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub bits: usize,
    pub feature_dim: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl CheckpointMeta {
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidArgument(format!("metadata serialization: {e}")))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(|e| Error::Parse {
            offset: 0,
            what: format!("metadata json: {e}"),
        })
    }
}
