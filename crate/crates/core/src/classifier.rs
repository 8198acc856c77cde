//! Small from-scratch convolutional classifier with a pseudo-3D first block.
//!
//! Layer stack, for a `P x P x 9` input patch:
//!
//! 1. depthwise 3x3 spatial convolution per polarimetric channel (valid) → `O x O x 9`, `O = P - 2`
//! 2. pointwise 1x1 convolution mixing the 9 channels into `F` maps, ReLU
//! 3. 2x2 max pooling (stride 2, trailing row/column dropped) → `Q x Q x F`, `Q = O / 2`
//! 4. dense `Q·Q·F → hidden`, ReLU
//! 5. dense `hidden → C`, softmax
//!
//! Training is plain SGD on the mean natural-log cross-entropy. Inputs are
//! z-scored per channel with statistics frozen from the first batch the
//! model is trained on.

use std::io::{Read, Write};

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Patch, PixelVector};

const CHANNELS: usize = PixelVector::LEN;
const KERNEL: usize = 3;
const CHUNK: usize = 16;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCLM";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss or parameters after {step} update(s) (last loss {loss})")]
    NanLoss { step: usize, loss: f64 },
    #[error("empty sample set")]
    EmptySet,
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub num_classes: usize,
    /// Feature maps produced by the pointwise convolution.
    pub features: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { patch_size: 15, num_classes: 5, features: 16, hidden: 64, learning_rate: 0.01, seed: 0 }
    }
}

impl ModelConfig {
    pub fn new(num_classes: usize, seed: u64) -> Self {
        ModelConfig { num_classes, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.to_string()));
        if self.patch_size % 2 == 0 {
            return bad("patch_size must be odd");
        }
        if self.patch_size < 5 {
            return bad("patch_size must be at least 5 for conv + pooling");
        }
        if self.num_classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.features == 0 || self.hidden == 0 {
            return bad("features and hidden must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    fn conv_out(&self) -> usize {
        self.patch_size - (KERNEL - 1)
    }

    fn pooled(&self) -> usize {
        self.conv_out() / 2
    }

    fn flat(&self) -> usize {
        self.features * self.pooled() * self.pooled()
    }
}

/// All trainable tensors, in checkpoint declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `[channel][ky][kx]`
    pub depthwise_w: Vec<f64>,
    pub depthwise_b: Vec<f64>,
    /// `[feature][channel]`
    pub pointwise_w: Vec<f64>,
    pub pointwise_b: Vec<f64>,
    /// `[hidden][flat]`, flat index `feature·Q·Q + row·Q + col`
    pub dense1_w: Vec<f64>,
    pub dense1_b: Vec<f64>,
    /// `[class][hidden]`
    pub dense2_w: Vec<f64>,
    pub dense2_b: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 8] = [
    "depthwise_w",
    "depthwise_b",
    "pointwise_w",
    "pointwise_b",
    "dense1_w",
    "dense1_b",
    "dense2_w",
    "dense2_b",
];

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (f, h, c) = (cfg.features, cfg.hidden, cfg.num_classes);
        Params {
            depthwise_w: vec![0.0; CHANNELS * KERNEL * KERNEL],
            depthwise_b: vec![0.0; CHANNELS],
            pointwise_w: vec![0.0; f * CHANNELS],
            pointwise_b: vec![0.0; f],
            dense1_w: vec![0.0; h * cfg.flat()],
            dense1_b: vec![0.0; h],
            dense2_w: vec![0.0; c * h],
            dense2_b: vec![0.0; c],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 8] {
        [
            &self.depthwise_w,
            &self.depthwise_b,
            &self.pointwise_w,
            &self.pointwise_b,
            &self.dense1_w,
            &self.dense1_b,
            &self.dense2_w,
            &self.dense2_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.depthwise_w,
            &mut self.depthwise_b,
            &mut self.pointwise_w,
            &mut self.pointwise_b,
            &mut self.dense1_w,
            &mut self.dense1_b,
            &mut self.dense2_w,
            &mut self.dense2_b,
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Per-channel input normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats { mean: [0.0; CHANNELS], std: [1.0; CHANNELS] }
    }

    pub fn from_batch(batch: &[&Patch]) -> Self {
        let mut sum = [0.0; CHANNELS];
        let mut count = 0usize;
        for p in batch {
            for v in p.pixels() {
                for (s, x) in sum.iter_mut().zip(v.0) {
                    *s += x;
                }
                count += 1;
            }
        }
        let n = count.max(1) as f64;
        let mean = sum.map(|s| s / n);
        let mut var = [0.0; CHANNELS];
        for p in batch {
            for v in p.pixels() {
                for ((s, x), m) in var.iter_mut().zip(v.0).zip(mean) {
                    *s += (x - m) * (x - m);
                }
            }
        }
        // A constant channel carries no scale information.
        let std = var.map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 { sd } else { 1.0 }
        });
        NormStats { mean, std }
    }
}

/// Gradient-trainable classifier interface the curriculum loop drives.
pub trait Trainer {
    /// Runs `epochs` full-batch gradient steps on `batch`, returning the
    /// loss measured before each step.
    fn train_on_batch(&mut self, batch: &[&Patch], epochs: usize) -> Result<Vec<f64>, ClassifierError>;

    /// Argmax class per patch, ties to the lowest index.
    fn predict(&self, batch: &[&Patch]) -> Result<Vec<usize>, ClassifierError>;

    /// Freezes input normalization from `samples` unless already frozen.
    fn prime_normalization(&mut self, _samples: &[&Patch]) -> Result<(), ClassifierError> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    params: Params,
    norm: Option<NormStats>,
}

/// Glorot-uniform weights from the seeded generator; zero biases.
pub fn init_model(cfg: &ModelConfig) -> Result<Model, ClassifierError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = Params::zeros(cfg);
    let area = KERNEL * KERNEL;
    let fans = [
        (area, area),
        (CHANNELS, cfg.features),
        (cfg.flat(), cfg.hidden),
        (cfg.hidden, cfg.num_classes),
    ];
    let weights = [
        &mut params.depthwise_w,
        &mut params.pointwise_w,
        &mut params.dense1_w,
        &mut params.dense2_w,
    ];
    for (w, (fan_in, fan_out)) in weights.into_iter().zip(fans) {
        let a = glorot_limit(fan_in, fan_out);
        let dist = Uniform::new(-a, a).expect("finite positive limit");
        for x in w.iter_mut() {
            *x = dist.sample(&mut rng);
        }
    }
    Ok(Model { cfg: cfg.clone(), params, norm: None })
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn layer_fans(cfg: &ModelConfig) -> [(usize, usize); 4] {
    [
        (KERNEL * KERNEL, KERNEL * KERNEL),
        (CHANNELS, cfg.features),
        (cfg.flat(), cfg.hidden),
        (cfg.hidden, cfg.num_classes),
    ]
}

/// Per-sample activations kept for the backward pass.
struct Activations {
    x: Vec<f64>,
    z1: Vec<f64>,
    z2: Vec<f64>,
    pool_idx: Vec<usize>,
    pooled: Vec<f64>,
    z3: Vec<f64>,
    a3: Vec<f64>,
    logits: Vec<f64>,
}

impl Activations {
    fn new(cfg: &ModelConfig) -> Self {
        let (p, o, q) = (cfg.patch_size, cfg.conv_out(), cfg.pooled());
        Activations {
            x: vec![0.0; CHANNELS * p * p],
            z1: vec![0.0; CHANNELS * o * o],
            z2: vec![0.0; cfg.features * o * o],
            pool_idx: vec![0; cfg.features * q * q],
            pooled: vec![0.0; cfg.features * q * q],
            z3: vec![0.0; cfg.hidden],
            a3: vec![0.0; cfg.hidden],
            logits: vec![0.0; cfg.num_classes],
        }
    }
}

/// Scratch buffers for the backward pass.
struct Backprop {
    d_pooled: Vec<f64>,
    d_z2: Vec<f64>,
    d_z1: Vec<f64>,
    d_z3: Vec<f64>,
    d_logits: Vec<f64>,
}

impl Backprop {
    fn new(cfg: &ModelConfig) -> Self {
        let (o, q) = (cfg.conv_out(), cfg.pooled());
        Backprop {
            d_pooled: vec![0.0; cfg.features * q * q],
            d_z2: vec![0.0; cfg.features * o * o],
            d_z1: vec![0.0; CHANNELS * o * o],
            d_z3: vec![0.0; cfg.hidden],
            d_logits: vec![0.0; cfg.num_classes],
        }
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl Model {
    /// All-zero parameters: every input maps to the uniform distribution.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self, ClassifierError> {
        cfg.validate()?;
        Ok(Model { cfg: cfg.clone(), params: Params::zeros(cfg), norm: None })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.norm.as_ref()
    }

    /// Freezes normalization statistics. Has no effect once they are set.
    pub fn freeze_norm(&mut self, stats: NormStats) {
        self.norm.get_or_insert(stats);
    }

    fn check_shape(&self, p: &Patch, labeled: bool) -> Result<(), ClassifierError> {
        let s = self.cfg.patch_size;
        if p.rows() != s || p.cols() != s {
            return Err(ClassifierError::ShapeMismatch(format!(
                "patch {}x{} but model expects {s}x{s}",
                p.rows(),
                p.cols()
            )));
        }
        if labeled && p.label() >= self.cfg.num_classes {
            return Err(ClassifierError::ShapeMismatch(format!(
                "label {} but model has {} classes",
                p.label(),
                self.cfg.num_classes
            )));
        }
        Ok(())
    }

    fn forward_one(&self, patch: &Patch, act: &mut Activations) {
        let cfg = &self.cfg;
        let prm = &self.params;
        let (p, o, q, f) = (cfg.patch_size, cfg.conv_out(), cfg.pooled(), cfg.features);
        let norm = self.norm.unwrap_or_else(NormStats::identity);

        for (i, v) in patch.pixels().iter().enumerate() {
            for c in 0..CHANNELS {
                act.x[c * p * p + i] = (v.0[c] - norm.mean[c]) / norm.std[c];
            }
        }

        for c in 0..CHANNELS {
            let xc = &act.x[c * p * p..(c + 1) * p * p];
            let w = &prm.depthwise_w[c * 9..c * 9 + 9];
            let z = &mut act.z1[c * o * o..(c + 1) * o * o];
            for i in 0..o {
                for j in 0..o {
                    let mut s = prm.depthwise_b[c];
                    for ky in 0..KERNEL {
                        let row = &xc[(i + ky) * p + j..(i + ky) * p + j + KERNEL];
                        s += w[ky * 3] * row[0] + w[ky * 3 + 1] * row[1] + w[ky * 3 + 2] * row[2];
                    }
                    z[i * o + j] = s;
                }
            }
        }

        let area = o * o;
        for fi in 0..f {
            let z2 = &mut act.z2[fi * area..(fi + 1) * area];
            z2.fill(prm.pointwise_b[fi]);
            for c in 0..CHANNELS {
                let w = prm.pointwise_w[fi * CHANNELS + c];
                let z1 = &act.z1[c * area..(c + 1) * area];
                for (a, b) in z2.iter_mut().zip(z1) {
                    *a += w * b;
                }
            }
        }

        for fi in 0..f {
            for i in 0..q {
                for j in 0..q {
                    let mut best_idx = fi * area + (2 * i) * o + 2 * j;
                    let mut best = act.z2[best_idx].max(0.0);
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = fi * area + (2 * i + di) * o + 2 * j + dj;
                        let v = act.z2[idx].max(0.0);
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                    let k = fi * q * q + i * q + j;
                    act.pooled[k] = best;
                    act.pool_idx[k] = best_idx;
                }
            }
        }

        let flat = cfg.flat();
        for h in 0..cfg.hidden {
            let w = &prm.dense1_w[h * flat..(h + 1) * flat];
            let s: f64 = w.iter().zip(&act.pooled).map(|(a, b)| a * b).sum();
            act.z3[h] = s + prm.dense1_b[h];
            act.a3[h] = act.z3[h].max(0.0);
        }
        for c in 0..cfg.num_classes {
            let w = &prm.dense2_w[c * cfg.hidden..(c + 1) * cfg.hidden];
            let s: f64 = w.iter().zip(&act.a3).map(|(a, b)| a * b).sum();
            act.logits[c] = s + prm.dense2_b[c];
        }
    }

    /// Accumulates `scale · ∂loss/∂θ` for one sample into `grad`, with
    /// `d_logits` already set.
    fn backward_one(&self, act: &Activations, bp: &mut Backprop, grad: &mut Params) {
        let cfg = &self.cfg;
        let prm = &self.params;
        let (p, o, q, f, hid) = (cfg.patch_size, cfg.conv_out(), cfg.pooled(), cfg.features, cfg.hidden);
        let flat = cfg.flat();
        let area = o * o;

        bp.d_z3.fill(0.0);
        for c in 0..cfg.num_classes {
            let d = bp.d_logits[c];
            grad.dense2_b[c] += d;
            let gw = &mut grad.dense2_w[c * hid..(c + 1) * hid];
            let w = &prm.dense2_w[c * hid..(c + 1) * hid];
            for h in 0..hid {
                gw[h] += d * act.a3[h];
                bp.d_z3[h] += d * w[h];
            }
        }
        for h in 0..hid {
            if act.z3[h] <= 0.0 {
                bp.d_z3[h] = 0.0;
            }
        }

        bp.d_pooled.fill(0.0);
        for h in 0..hid {
            let d = bp.d_z3[h];
            if d == 0.0 {
                continue;
            }
            grad.dense1_b[h] += d;
            let gw = &mut grad.dense1_w[h * flat..(h + 1) * flat];
            let w = &prm.dense1_w[h * flat..(h + 1) * flat];
            for k in 0..flat {
                gw[k] += d * act.pooled[k];
                bp.d_pooled[k] += d * w[k];
            }
        }

        bp.d_z2.fill(0.0);
        for k in 0..f * q * q {
            let idx = act.pool_idx[k];
            if act.z2[idx] > 0.0 {
                bp.d_z2[idx] += bp.d_pooled[k];
            }
        }

        bp.d_z1.fill(0.0);
        for fi in 0..f {
            let dz2 = &bp.d_z2[fi * area..(fi + 1) * area];
            grad.pointwise_b[fi] += dz2.iter().sum::<f64>();
            for c in 0..CHANNELS {
                let z1 = &act.z1[c * area..(c + 1) * area];
                grad.pointwise_w[fi * CHANNELS + c] += dz2.iter().zip(z1).map(|(a, b)| a * b).sum::<f64>();
                let w = prm.pointwise_w[fi * CHANNELS + c];
                let dz1 = &mut bp.d_z1[c * area..(c + 1) * area];
                for (a, b) in dz1.iter_mut().zip(dz2) {
                    *a += w * b;
                }
            }
        }

        for c in 0..CHANNELS {
            let dz1 = &bp.d_z1[c * area..(c + 1) * area];
            let xc = &act.x[c * p * p..(c + 1) * p * p];
            grad.depthwise_b[c] += dz1.iter().sum::<f64>();
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let mut s = 0.0;
                    for i in 0..o {
                        let xrow = &xc[(i + ky) * p + kx..(i + ky) * p + kx + o];
                        let drow = &dz1[i * o..(i + 1) * o];
                        s += xrow.iter().zip(drow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grad.depthwise_w[c * 9 + ky * 3 + kx] += s;
                }
            }
        }
    }

    /// Class-probability rows, one per patch.
    pub fn forward(&self, batch: &[&Patch]) -> Result<Vec<Vec<f64>>, ClassifierError> {
        for p in batch {
            self.check_shape(p, false)?;
        }
        let rows = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut act = Activations::new(&self.cfg);
                chunk
                    .iter()
                    .map(|p| {
                        self.forward_one(p, &mut act);
                        let lse = log_sum_exp(&act.logits);
                        act.logits.iter().map(|z| (z - lse).exp()).collect::<Vec<f64>>()
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>();
        Ok(rows.into_iter().flatten().collect())
    }

    /// Mean cross-entropy over a labeled batch.
    pub fn loss(&self, batch: &[&Patch]) -> Result<f64, ClassifierError> {
        if batch.is_empty() {
            return Err(ClassifierError::EmptySet);
        }
        for p in batch {
            self.check_shape(p, true)?;
        }
        let sums = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut act = Activations::new(&self.cfg);
                chunk
                    .iter()
                    .map(|p| {
                        self.forward_one(p, &mut act);
                        log_sum_exp(&act.logits) - act.logits[p.label()]
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<_>>();
        Ok(sums.iter().sum::<f64>() / batch.len() as f64)
    }

    /// Mean cross-entropy and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, batch: &[&Patch]) -> Result<(f64, Params), ClassifierError> {
        if batch.is_empty() {
            return Err(ClassifierError::EmptySet);
        }
        for p in batch {
            self.check_shape(p, true)?;
        }
        let inv = 1.0 / batch.len() as f64;
        let parts = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut act = Activations::new(&self.cfg);
                let mut bp = Backprop::new(&self.cfg);
                let mut grad = Params::zeros(&self.cfg);
                let mut loss = 0.0;
                for p in chunk {
                    self.forward_one(p, &mut act);
                    let lse = log_sum_exp(&act.logits);
                    loss += lse - act.logits[p.label()];
                    for (c, d) in bp.d_logits.iter_mut().enumerate() {
                        let prob = (act.logits[c] - lse).exp();
                        let target = if c == p.label() { 1.0 } else { 0.0 };
                        *d = (prob - target) * inv;
                    }
                    self.backward_one(&act, &mut bp, &mut grad);
                }
                (loss, grad)
            })
            .collect::<Vec<_>>();
        let mut total = 0.0;
        let mut grad = Params::zeros(&self.cfg);
        for (l, g) in &parts {
            total += l;
            grad.add_assign(g);
        }
        Ok((total * inv, grad))
    }

    pub fn save_checkpoint<W: Write>(&self, mut w: W) -> Result<(), ClassifierError> {
        let cfg = &self.cfg;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [cfg.patch_size, cfg.num_classes, cfg.features, cfg.hidden] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&cfg.learning_rate.to_le_bytes())?;
        w.write_all(&cfg.seed.to_le_bytes())?;
        match &self.norm {
            None => w.write_all(&[0u8])?,
            Some(n) => {
                w.write_all(&[1u8])?;
                for x in n.mean.iter().chain(&n.std) {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        for t in self.params.tensors() {
            for x in t {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load_checkpoint<R: Read>(mut r: R) -> Result<Self, ClassifierError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut cur = ByteCursor { buf: &buf, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(ClassifierError::Format("expected magic \"DCLM\"".into()));
        }
        let version = u16::from_le_bytes(cur.array()?);
        if version != CHECKPOINT_VERSION {
            return Err(ClassifierError::Format(format!(
                "version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = u32::from_le_bytes(cur.array()?) as usize;
        }
        let learning_rate = f64::from_le_bytes(cur.array()?);
        let seed = u64::from_le_bytes(cur.array()?);
        let cfg = ModelConfig {
            patch_size: dims[0],
            num_classes: dims[1],
            features: dims[2],
            hidden: dims[3],
            learning_rate,
            seed,
        };
        cfg.validate()?;
        let norm = match cur.take(1)?[0] {
            0 => None,
            1 => {
                let mut n = NormStats::identity();
                for x in n.mean.iter_mut().chain(n.std.iter_mut()) {
                    *x = f64::from_le_bytes(cur.array()?);
                }
                Some(n)
            }
            b => return Err(ClassifierError::Format(format!("bad normalization flag {b}"))),
        };
        let mut params = Params::zeros(&cfg);
        for t in params.tensors_mut() {
            for x in t.iter_mut() {
                *x = f64::from_le_bytes(cur.array()?);
            }
        }
        if cur.pos != buf.len() {
            return Err(ClassifierError::Format(format!("{} trailing bytes", buf.len() - cur.pos)));
        }
        Ok(Model { cfg, params, norm })
    }
}

struct ByteCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifierError> {
        if self.pos + n > self.buf.len() {
            return Err(ClassifierError::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ClassifierError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

impl Trainer for Model {
    fn train_on_batch(&mut self, batch: &[&Patch], epochs: usize) -> Result<Vec<f64>, ClassifierError> {
        if epochs == 0 {
            return Err(ClassifierError::ZeroEpochs);
        }
        if batch.is_empty() {
            return Err(ClassifierError::EmptySet);
        }
        self.prime_normalization(batch)?;
        let mut work = self.clone();
        let mut history = Vec::with_capacity(epochs);
        let lr = self.cfg.learning_rate;
        for step in 0..epochs {
            let (loss, grad) = work.loss_and_gradient(batch)?;
            if !loss.is_finite() || !grad.all_finite() {
                return Err(ClassifierError::NanLoss { step, loss });
            }
            for (w, g) in work.params.tensors_mut().into_iter().zip(grad.tensors()) {
                for (x, d) in w.iter_mut().zip(g) {
                    *x -= lr * d;
                }
            }
            if !work.params.all_finite() {
                return Err(ClassifierError::NanLoss { step: step + 1, loss });
            }
            history.push(loss);
        }
        *self = work;
        Ok(history)
    }

    fn predict(&self, batch: &[&Patch]) -> Result<Vec<usize>, ClassifierError> {
        Ok(self.forward(batch)?.iter().map(|row| argmax(row)).collect())
    }

    fn prime_normalization(&mut self, samples: &[&Patch]) -> Result<(), ClassifierError> {
        if self.norm.is_none() && !samples.is_empty() {
            for p in samples {
                self.check_shape(p, true)?;
            }
            self.norm = Some(NormStats::from_batch(samples));
        }
        Ok(())
    }
}

/// Fraction of argmax-correct predictions.
pub fn evaluate<T: Trainer + ?Sized>(model: &T, test: &[&Patch]) -> Result<f64, ClassifierError> {
    if test.is_empty() {
        return Err(ClassifierError::EmptySet);
    }
    let preds = model.predict(test)?;
    let correct = preds.iter().zip(test).filter(|(p, t)| **p == t.label()).count();
    Ok(correct as f64 / test.len() as f64)
}

/// `counts[true][predicted]`.
pub fn confusion_matrix<T: Trainer + ?Sized>(
    model: &T,
    test: &[&Patch],
    num_classes: usize,
) -> Result<Vec<Vec<usize>>, ClassifierError> {
    let preds = model.predict(test)?;
    let mut m = vec![vec![0; num_classes]; num_classes];
    for (p, t) in preds.iter().zip(test) {
        m[t.label()][*p] += 1;
    }
    Ok(m)
}
