//! Inference strategies for a model trained on raw and/or augmented inputs.
//!
//! * aug-only: `τ(M(x_aug))`
//! * ensemble: `τ(M(x) + M(x_aug))`, logits summed before the activation
//! * entropy-select: whichever of `τ(M(x))`, `τ(M(x_aug))` has the lower
//!   mean per-pixel entropy, ties going to the augmented input

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Bitmap, Grid};
use crate::metrics::{label_instances, Connectivity, InstanceMap};
use crate::model::{Activation, SegModel};
use crate::tensor::Tensor;

/// Per-pixel class probabilities, channel sums equal 1 within `1e-6`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap(Tensor);

pub const NORMALIZATION_TOL: f64 = 1e-6;

impl ProbMap {
    /// Wrap a tensor after checking range and per-pixel normalization.
    pub fn new(t: Tensor) -> Result<Self> {
        let (c, h, w) = t.shape();
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0;
                for ch in 0..c {
                    let v = t.at(ch, y, x);
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Unnormalized { x, y, sum: f64::NAN });
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::Unnormalized { x, y, sum });
                }
            }
        }
        Ok(ProbMap(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.channels()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.0.width(), self.0.height())
    }

    /// Most probable class per pixel (lowest index on ties).
    pub fn argmax(&self) -> Grid<u8> {
        let (c, h, w) = self.0.shape();
        Grid::from_fn(w, h, |x, y| {
            let mut best = 0;
            for ch in 1..c {
                if self.0.at(ch, y, x) > self.0.at(best, y, x) {
                    best = ch;
                }
            }
            best as u8
        })
    }

    /// Pixels whose argmax is not background.
    pub fn foreground(&self) -> Bitmap {
        self.argmax().map(|&c| c != 0)
    }

    /// Object instances: connected components of argmax == class 1. In a
    /// three-class setup the boundary class (2) separates touching objects.
    pub fn instances(&self, connectivity: Connectivity) -> InstanceMap {
        label_instances(&self.argmax().map(|&c| c == 1), connectivity)
    }
}

/// Apply `τ` to a logit map. Sigmoid heads yield a two-channel map `(1-σ, σ)`.
pub fn activate(logits: &Tensor, activation: Activation) -> ProbMap {
    let (c, h, w) = logits.shape();
    match activation {
        Activation::Softmax => {
            let mut out = Tensor::zeros(c, h, w);
            let n = h * w;
            let src = logits.as_slice();
            let dst = out.as_mut_slice();
            for i in 0..n {
                let m = (0..c).map(|ch| src[ch * n + i]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for ch in 0..c {
                    let e = (src[ch * n + i] - m).exp();
                    dst[ch * n + i] = e;
                    sum += e;
                }
                for ch in 0..c {
                    dst[ch * n + i] /= sum;
                }
            }
            ProbMap(out)
        }
        Activation::Sigmoid => {
            assert_eq!(c, 1, "sigmoid head must have exactly one logit channel");
            let mut out = Tensor::zeros(2, h, w);
            for (i, &z) in logits.as_slice().iter().enumerate() {
                let p = sigmoid(z);
                out.plane_mut(1)[i] = p;
                out.plane_mut(0)[i] = 1.0 - p;
            }
            ProbMap(out)
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean over pixels of `-Σ_c p_c ln p_c`, with `0 ln 0 = 0`.
pub fn mean_entropy(p: &ProbMap) -> Result<f64> {
    let (c, h, w) = p.0.shape();
    let n = h * w;
    if n == 0 {
        return Ok(0.0);
    }
    let data = p.0.as_slice();
    let mut total = 0.0;
    for i in 0..n {
        let mut sum = 0.0;
        let mut ent = 0.0;
        for ch in 0..c {
            let v = data[ch * n + i];
            sum += v;
            if v > 0.0 {
                ent -= v * v.ln();
            }
        }
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Unnormalized { x: i % w, y: i / w, sum });
        }
        total += ent;
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeployStrategy {
    AugOnly,
    Ensemble,
    EntropySelect,
}

impl std::str::FromStr for DeployStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aug-only" => Ok(DeployStrategy::AugOnly),
            "ensemble" => Ok(DeployStrategy::Ensemble),
            "entropy-select" => Ok(DeployStrategy::EntropySelect),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected aug-only, ensemble or entropy-select)"
            ))),
        }
    }
}

/// Which input an entropy-select run kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Chosen {
    Raw,
    Aug,
}

fn check_pair(x: &Tensor, x_aug: &Tensor) -> Result<()> {
    if x.shape() != x_aug.shape() {
        return Err(Error::shape(format!("{:?}", x.shape()), format!("{:?}", x_aug.shape())));
    }
    Ok(())
}

pub fn infer_aug_only<M: SegModel>(model: &M, x_aug: &Tensor) -> Result<ProbMap> {
    if x_aug.channels() != 3 {
        return Err(Error::shape("3 channels", format!("{} channels", x_aug.channels())));
    }
    Ok(activate(&model.forward(x_aug), model.activation()))
}

pub fn infer_ensemble<M: SegModel>(model: &M, x: &Tensor, x_aug: &Tensor) -> Result<ProbMap> {
    check_pair(x, x_aug)?;
    let summed = model.forward(x).add(&model.forward(x_aug))?;
    Ok(activate(&summed, model.activation()))
}

/// Choose between two candidate maps by mean entropy; `aug` wins ties.
pub fn select_by_entropy(raw: ProbMap, aug: ProbMap) -> Result<(ProbMap, Chosen)> {
    let h_raw = mean_entropy(&raw)?;
    let h_aug = mean_entropy(&aug)?;
    Ok(if h_raw < h_aug {
        (raw, Chosen::Raw)
    } else {
        (aug, Chosen::Aug)
    })
}

pub fn infer_entropy_select<M: SegModel>(
    model: &M,
    x: &Tensor,
    x_aug: &Tensor,
) -> Result<(ProbMap, Chosen)> {
    check_pair(x, x_aug)?;
    let raw = activate(&model.forward(x), model.activation());
    let aug = activate(&model.forward(x_aug), model.activation());
    select_by_entropy(raw, aug)
}

/// Run `strategy`; the choice is reported only for entropy-select.
pub fn infer<M: SegModel>(
    model: &M,
    strategy: DeployStrategy,
    x: &Tensor,
    x_aug: &Tensor,
) -> Result<(ProbMap, Option<Chosen>)> {
    match strategy {
        DeployStrategy::AugOnly => Ok((infer_aug_only(model, x_aug)?, None)),
        DeployStrategy::Ensemble => Ok((infer_ensemble(model, x, x_aug)?, None)),
        DeployStrategy::EntropySelect => {
            let (p, c) = infer_entropy_select(model, x, x_aug)?;
            Ok((p, Some(c)))
        }
    }
}
