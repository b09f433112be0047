//! Losses, the weighted raw/augmented objective, and the training loop.
//!
//! For one sample the objective is
//! `beta * loss(M(x), y) + lambda * loss(M(x_aug), y)`; with `beta = 0` the
//! raw forward pass is skipped entirely, so training reduces to the
//! augmented-only objective with identical cost and gradients.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{SegModel, UNet, UNetSpec};
use crate::tensor::Tensor;

/// Dice smoothing term.
pub const DICE_EPS: f64 = 1e-6;

/// One-hot label map stored as a class index per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    num_classes: usize,
    classes: Grid<u8>,
}

impl LabelMap {
    pub fn new(classes: Grid<u8>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some(&c) = classes.as_slice().iter().find(|&&c| c as usize >= num_classes) {
            return Err(Error::Config(format!("class index {c} >= num_classes {num_classes}")));
        }
        Ok(LabelMap {
            num_classes,
            classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn classes(&self) -> &Grid<u8> {
        &self.classes
    }

    pub fn dims(&self) -> (usize, usize) {
        self.classes.dims()
    }

    /// `y[c](x, y)` of the one-hot encoding.
    pub fn onehot(&self, c: usize, x: usize, y: usize) -> f64 {
        (self.classes[(x, y)] as usize == c) as u8 as f64
    }

    pub fn to_onehot(&self) -> Tensor {
        let (w, h) = self.dims();
        let mut t = Tensor::zeros(self.num_classes, h, w);
        for (i, &c) in self.classes.as_slice().iter().enumerate() {
            t.plane_mut(c as usize)[i] = 1.0;
        }
        t
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> LabelMap {
        LabelMap {
            num_classes: self.num_classes,
            classes: self.classes.crop(x0, y0, w, h),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    SpatialCrossEntropy,
    Dice,
}

fn check_logits(logits: &Tensor, y: &LabelMap) -> Result<()> {
    let (c, h, w) = logits.shape();
    if c != y.num_classes || (w, h) != y.dims() {
        return Err(Error::shape(
            format!("{}x{}x{}", y.num_classes, y.dims().1, y.dims().0),
            format!("{c}x{h}x{w}"),
        ));
    }
    Ok(())
}

fn softmax(logits: &Tensor) -> Tensor {
    crate::deployment::activate(logits, crate::model::Activation::Softmax)
        .tensor()
        .clone()
}

/// Mean over pixels of `-ln softmax(logits)[true class]`.
pub fn spatial_ce_loss(logits: &Tensor, y: &LabelMap) -> Result<f64> {
    Ok(spatial_ce_with_grad(logits, y)?.0)
}

fn spatial_ce_with_grad(logits: &Tensor, y: &LabelMap) -> Result<(f64, Tensor)> {
    check_logits(logits, y)?;
    let (c, h, w) = logits.shape();
    let n = h * w;
    let z = logits.as_slice();
    let mut grad = Tensor::zeros(c, h, w);
    let g = grad.as_mut_slice();
    let mut total = 0.0;
    for (i, &t) in y.classes.as_slice().iter().enumerate() {
        let t = t as usize;
        let m = (0..c).map(|k| z[k * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..c).map(|k| (z[k * n + i] - m).exp()).sum();
        let lse = m + sum.ln();
        total += lse - z[t * n + i];
        for k in 0..c {
            let p = (z[k * n + i] - lse).exp();
            g[k * n + i] = (p - (k == t) as u8 as f64) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// `1 - mean_{c >= 1} (2 Σ p y + ε) / (Σ p + Σ y + ε)` over softmax probabilities.
pub fn dice_loss(logits: &Tensor, y: &LabelMap) -> Result<f64> {
    Ok(dice_with_grad(logits, y)?.0)
}

fn dice_with_grad(logits: &Tensor, y: &LabelMap) -> Result<(f64, Tensor)> {
    check_logits(logits, y)?;
    let (c, h, w) = logits.shape();
    let n = h * w;
    let p = softmax(logits);
    let p = p.as_slice();
    let labels = y.classes.as_slice();
    let k = (c - 1) as f64;
    let mut loss = 1.0;
    // dL/dp
    let mut gp = vec![0.0; c * n];
    for ch in 1..c {
        let mut inter = 0.0;
        let mut sp = 0.0;
        let mut sy = 0.0;
        for i in 0..n {
            let yv = (labels[i] as usize == ch) as u8 as f64;
            inter += p[ch * n + i] * yv;
            sp += p[ch * n + i];
            sy += yv;
        }
        let num = 2.0 * inter + DICE_EPS;
        let den = sp + sy + DICE_EPS;
        loss -= num / den / k;
        for i in 0..n {
            let yv = (labels[i] as usize == ch) as u8 as f64;
            gp[ch * n + i] = -(2.0 * yv * den - num) / (den * den) / k;
        }
    }
    // Back through the softmax: dz_j = p_j (g_j - Σ_k g_k p_k).
    let mut grad = Tensor::zeros(c, h, w);
    let g = grad.as_mut_slice();
    for i in 0..n {
        let dot: f64 = (0..c).map(|ch| gp[ch * n + i] * p[ch * n + i]).sum();
        for ch in 0..c {
            g[ch * n + i] = p[ch * n + i] * (gp[ch * n + i] - dot);
        }
    }
    Ok((loss, grad))
}

/// Loss value and its gradient with respect to the logits.
pub fn loss_with_grad(kind: LossKind, logits: &Tensor, y: &LabelMap) -> Result<(f64, Tensor)> {
    match kind {
        LossKind::SpatialCrossEntropy => spatial_ce_with_grad(logits, y),
        LossKind::Dice => dice_with_grad(logits, y),
    }
}

pub fn loss(kind: LossKind, logits: &Tensor, y: &LabelMap) -> Result<f64> {
    Ok(loss_with_grad(kind, logits, y)?.0)
}

fn default_beta() -> f64 {
    1.0
}
fn default_lambda() -> f64 {
    1.0
}
fn default_batch() -> usize {
    8
}
fn default_crop() -> usize {
    256
}
fn default_lr() -> f64 {
    5e-4
}
fn default_iters() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_crop")]
    pub crop_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_iters")]
    pub total_iters: usize,
    #[serde(default)]
    pub seed: u64,
    /// Random horizontal flips, applied identically to all three arrays.
    #[serde(default)]
    pub hflip: bool,
    #[serde(default)]
    pub vflip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: default_beta(),
            lambda: default_lambda(),
            loss: LossKind::default(),
            batch_size: default_batch(),
            crop_size: default_crop(),
            lr: default_lr(),
            total_iters: default_iters(),
            seed: 0,
            hflip: false,
            vflip: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.beta + self.lambda <= 0.0 {
            return bad("beta + lambda must be > 0".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.crop_size == 0 {
            return bad("crop_size must be >= 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be finite and > 0, got {}", self.lr));
        }
        Ok(())
    }
}

/// A training pair: raw network input, augmented input and labels, all the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub raw: Tensor,
    pub augmented: Tensor,
    pub label: LabelMap,
}

impl TrainSample {
    pub fn new(raw: Tensor, augmented: Tensor, label: LabelMap) -> Result<Self> {
        let (_, h, w) = raw.shape();
        if augmented.shape() != raw.shape() || label.dims() != (w, h) {
            return Err(Error::shape(
                format!("{:?}", raw.shape()),
                format!("aug {:?}, label {:?}", augmented.shape(), label.dims()),
            ));
        }
        Ok(TrainSample {
            raw,
            augmented,
            label,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.label.dims()
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> TrainSample {
        TrainSample {
            raw: self.raw.crop(x0, y0, w, h),
            augmented: self.augmented.crop(x0, y0, w, h),
            label: self.label.crop(x0, y0, w, h),
        }
    }

    fn flip(&self, horizontal: bool) -> TrainSample {
        let (w, h) = self.dims();
        let src = |x: usize, y: usize| if horizontal { (w - 1 - x, y) } else { (x, h - 1 - y) };
        let flip_t = |t: &Tensor| {
            let mut out = Tensor::zeros(t.channels(), h, w);
            for c in 0..t.channels() {
                for y in 0..h {
                    for x in 0..w {
                        let (sx, sy) = src(x, y);
                        *out.at_mut(c, y, x) = t.at(c, sy, sx);
                    }
                }
            }
            out
        };
        TrainSample {
            raw: flip_t(&self.raw),
            augmented: flip_t(&self.augmented),
            label: LabelMap {
                num_classes: self.label.num_classes,
                classes: Grid::from_fn(w, h, |x, y| self.label.classes[src(x, y)]),
            },
        }
    }
}

/// Uniform top-left offset for a `size x size` window.
pub fn crop_offset(width: usize, height: usize, size: usize, rng: &mut impl Rng) -> Result<(usize, usize)> {
    if size > width || size > height {
        return Err(Error::CropTooLarge {
            crop: size,
            width,
            height,
        });
    }
    let x0 = rng.random_range(0..=width - size);
    let y0 = rng.random_range(0..=height - size);
    Ok((x0, y0))
}

/// Objective value for one sample.
pub fn objective<M: SegModel>(
    model: &M,
    x: &Tensor,
    x_aug: &Tensor,
    y: &LabelMap,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    if cfg.beta != 0.0 {
        total += cfg.beta * loss(cfg.loss, &model.forward(x), y)?;
    }
    if cfg.lambda != 0.0 {
        total += cfg.lambda * loss(cfg.loss, &model.forward(x_aug), y)?;
    }
    Ok(total)
}

/// Mean objective over `batch`, accumulating its parameter gradient into `grads`.
pub fn batch_objective_grad<M: SegModel>(
    model: &M,
    batch: &[TrainSample],
    cfg: &TrainConfig,
    grads: &mut [f64],
) -> Result<f64> {
    let n = batch.len() as f64;
    let mut total = 0.0;
    for s in batch {
        for (weight, input) in [(cfg.beta, &s.raw), (cfg.lambda, &s.augmented)] {
            if weight == 0.0 {
                continue;
            }
            let (logits, tape) = model.forward_tape(input);
            let (l, mut g) = loss_with_grad(cfg.loss, &logits, &s.label)?;
            let scale = weight / n;
            g.scale(scale);
            model.backward(&tape, &g, grads);
            total += scale * l;
        }
    }
    Ok(total)
}

/// Adam with the usual defaults (`0.9, 0.999, 1e-8`) and constant learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Draw one training batch: samples with replacement, random crops, optional flips.
pub fn sample_batch(
    dataset: &[TrainSample],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainSample>> {
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let s = &dataset[rng.random_range(0..dataset.len())];
        let (w, h) = s.dims();
        let (x0, y0) = crop_offset(w, h, cfg.crop_size, rng)?;
        let mut c = s.crop(x0, y0, cfg.crop_size, cfg.crop_size);
        if cfg.hflip && rng.random_bool(0.5) {
            c = c.flip(true);
        }
        if cfg.vflip && rng.random_bool(0.5) {
            c = c.flip(false);
        }
        batch.push(c);
    }
    Ok(batch)
}

/// Run `cfg.total_iters` Adam steps on `model`; returns the per-iteration batch loss.
pub fn train<M: SegModel>(
    model: &mut M,
    dataset: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if cfg.total_iters == 0 {
        return Ok(Vec::new());
    }
    if dataset.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    for s in dataset {
        let (w, h) = s.dims();
        if cfg.crop_size > w || cfg.crop_size > h {
            return Err(Error::CropTooLarge {
                crop: cfg.crop_size,
                width: w,
                height: h,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.num_params(), cfg.lr);
    let mut grads = vec![0.0; model.num_params()];
    let mut history = Vec::with_capacity(cfg.total_iters);
    for iter in 0..cfg.total_iters {
        let batch = sample_batch(dataset, cfg, &mut rng)?;
        grads.iter_mut().for_each(|g| *g = 0.0);
        let l = batch_objective_grad(model, &batch, cfg, &mut grads)?;
        if !l.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iter, value: l });
        }
        adam.step(model.params_mut(), &grads);
        history.push(l);
        if (iter + 1) % 100 == 0 {
            log::debug!("iter {} loss {:.6}", iter + 1, l);
        }
    }
    Ok(history)
}

/// Loss history as `iter,loss` CSV, iterations counted from 1.
pub fn history_csv(history: &[f64]) -> String {
    let mut out = String::from("iter,loss\n");
    for (i, l) in history.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l));
    }
    out
}

/// Serialized model parameters together with the config that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: UNetSpec,
    pub params: Vec<f64>,
    pub config: TrainConfig,
    pub iteration: usize,
}

impl Checkpoint {
    pub fn new(model: &UNet, config: &TrainConfig, iteration: usize) -> Self {
        Checkpoint {
            model: model.spec(),
            params: model.params().to_vec(),
            config: config.clone(),
            iteration,
        }
    }

    pub fn to_model(&self) -> Result<UNet> {
        UNet::from_params(self.model, self.params.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}
