//! Segmentation model interface and two small reference networks.
//!
//! Models keep all trainable parameters in one flat `Vec<f64>`; layers are
//! views into it by offset. That makes the optimizer, checkpointing and
//! finite-difference checks model-agnostic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output activation applied to logits at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// Per-pixel softmax over `C >= 2` logit channels.
    Softmax,
    /// Sigmoid on a single foreground logit channel.
    Sigmoid,
}

/// A trainable map from a 3-channel image to per-class logit maps of the
/// same spatial size.
///
/// `forward_tape` returns whatever the model needs to run `backward`
/// afterwards; `backward` adds parameter gradients into `grads`.
pub trait SegModel {
    type Tape;

    /// Number of logit channels.
    fn num_classes(&self) -> usize;

    fn activation(&self) -> Activation {
        Activation::Softmax
    }

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn forward_tape(&self, input: &Tensor) -> (Tensor, Self::Tape);

    fn backward(&self, tape: &Self::Tape, grad_logits: &Tensor, grads: &mut [f64]);

    fn forward(&self, input: &Tensor) -> Tensor {
        self.forward_tape(input).0
    }

    fn num_params(&self) -> usize {
        self.params().len()
    }
}

/// Same-padded 2-D convolution with odd square kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// Start of this layer's weights in the model's parameter vector.
    pub offset: usize,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, offset: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            offset,
        }
    }

    fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn num_params(&self) -> usize {
        self.weight_len() + self.out_channels
    }

    pub fn end(&self) -> usize {
        self.offset + self.num_params()
    }

    #[inline]
    fn widx(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        self.offset + ((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx
    }

    fn bidx(&self, o: usize) -> usize {
        self.offset + self.weight_len() + o
    }

    /// He-normal weights, zero bias.
    pub fn init(&self, params: &mut [f64], rng: &mut ChaCha8Rng) {
        let fan_in = (self.in_channels * self.kernel * self.kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
        for p in &mut params[self.offset..self.offset + self.weight_len()] {
            *p = normal.sample(rng);
        }
        for o in 0..self.out_channels {
            params[self.bidx(o)] = 0.0;
        }
    }

    /// Valid output/input index ranges along one axis for kernel tap offset `d`.
    #[inline]
    fn span(len: usize, d: isize) -> (usize, usize) {
        let lo = if d < 0 { (-d) as usize } else { 0 };
        let hi = if d > 0 { len.saturating_sub(d as usize) } else { len };
        (lo, hi.max(lo))
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> Tensor {
        assert_eq!(x.channels(), self.in_channels, "conv input channels");
        let (_, h, w) = x.shape();
        let pad = (self.kernel / 2) as isize;
        let mut out = Tensor::zeros(self.out_channels, h, w);
        for o in 0..self.out_channels {
            let bias = params[self.bidx(o)];
            let oplane = out.plane_mut(o);
            oplane.iter_mut().for_each(|v| *v = bias);
            for i in 0..self.in_channels {
                let iplane = x.plane(i);
                for ky in 0..self.kernel {
                    let dy = ky as isize - pad;
                    let (y0, y1) = Self::span(h, dy);
                    for kx in 0..self.kernel {
                        let dx = kx as isize - pad;
                        let (x0, x1) = Self::span(w, dx);
                        let wv = params[self.widx(o, i, ky, kx)];
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let orow = &mut oplane[y * w + x0..y * w + x1];
                            let s0 = (sy * w) as isize + x0 as isize + dx;
                            let irow = &iplane[s0 as usize..s0 as usize + (x1 - x0)];
                            for (a, b) in orow.iter_mut().zip(irow) {
                                *a += wv * b;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulate weight/bias gradients; return the input gradient if asked.
    pub fn backward(
        &self,
        params: &[f64],
        x: &Tensor,
        grad_out: &Tensor,
        grads: &mut [f64],
        want_input_grad: bool,
    ) -> Option<Tensor> {
        let (_, h, w) = x.shape();
        let pad = (self.kernel / 2) as isize;
        let mut gin = want_input_grad.then(|| Tensor::zeros(self.in_channels, h, w));
        for o in 0..self.out_channels {
            let gplane = grad_out.plane(o);
            grads[self.bidx(o)] += gplane.iter().sum::<f64>();
            for i in 0..self.in_channels {
                let iplane = x.plane(i);
                for ky in 0..self.kernel {
                    let dy = ky as isize - pad;
                    let (y0, y1) = Self::span(h, dy);
                    for kx in 0..self.kernel {
                        let dx = kx as isize - pad;
                        let (x0, x1) = Self::span(w, dx);
                        let wi = self.widx(o, i, ky, kx);
                        let wv = params[wi];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let grow = &gplane[y * w + x0..y * w + x1];
                            let s0 = ((sy * w) as isize + x0 as isize + dx) as usize;
                            let irow = &iplane[s0..s0 + (x1 - x0)];
                            acc += grow.iter().zip(irow).map(|(g, v)| g * v).sum::<f64>();
                            if let Some(gin) = gin.as_mut() {
                                let girow = &mut gin.plane_mut(i)[s0..s0 + (x1 - x0)];
                                for (a, g) in girow.iter_mut().zip(grow) {
                                    *a += wv * g;
                                }
                            }
                        }
                        grads[wi] += acc;
                    }
                }
            }
        }
        gin
    }
}

fn relu(mut t: Tensor) -> Tensor {
    t.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    t
}

/// Mask the upstream gradient by the ReLU's (post-activation) output.
fn relu_backward(out: &Tensor, mut grad: Tensor) -> Tensor {
    for (g, &o) in grad.as_mut_slice().iter_mut().zip(out.as_slice()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
    grad
}

/// 2x2 max pooling (floor). Returns the pooled map and the flat source index of each max.
fn max_pool2(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (c, h, w) = x.shape();
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Tensor::zeros(c, h2, w2);
    let mut arg = Vec::with_capacity(c * h2 * w2);
    for ch in 0..c {
        let plane = x.plane(ch);
        for y in 0..h2 {
            for xx in 0..w2 {
                let mut best = (2 * y) * w + 2 * xx;
                for &(dy, dx) in &[(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * y + dy) * w + 2 * xx + dx;
                    if plane[idx] > plane[best] {
                        best = idx;
                    }
                }
                *out.at_mut(ch, y, xx) = plane[best];
                arg.push(ch * h * w + best);
            }
        }
    }
    (out, arg)
}

fn max_pool2_backward(shape: (usize, usize, usize), arg: &[usize], grad: &Tensor) -> Tensor {
    let (c, h, w) = shape;
    let mut gin = Tensor::zeros(c, h, w);
    let data = gin.as_mut_slice();
    for (&src, &g) in arg.iter().zip(grad.as_slice()) {
        data[src] += g;
    }
    gin
}

/// Nearest-neighbour upsampling to `(h, w)`; source index is clamped so odd sizes work.
fn upsample_to(x: &Tensor, h: usize, w: usize) -> Tensor {
    let (c, sh, sw) = x.shape();
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            let sy = (y / 2).min(sh - 1);
            for xx in 0..w {
                *out.at_mut(ch, y, xx) = x.at(ch, sy, (xx / 2).min(sw - 1));
            }
        }
    }
    out
}

fn upsample_backward(grad: &Tensor, sh: usize, sw: usize) -> Tensor {
    let (c, h, w) = grad.shape();
    let mut gin = Tensor::zeros(c, sh, sw);
    for ch in 0..c {
        for y in 0..h {
            let sy = (y / 2).min(sh - 1);
            for xx in 0..w {
                *gin.at_mut(ch, sy, (xx / 2).min(sw - 1)) += grad.at(ch, y, xx);
            }
        }
    }
    gin
}

/// Shape hyperparameters of [`UNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetSpec {
    pub base_channels: usize,
    pub num_classes: usize,
}

impl Default for UNetSpec {
    fn default() -> Self {
        UNetSpec {
            base_channels: 8,
            num_classes: 2,
        }
    }
}

/// A one-level U-Net: two 3x3 convs, 2x2 max-pool, two 3x3 convs at half
/// resolution, nearest upsampling, skip concatenation, one 3x3 conv and a
/// 1x1 classifier. Works on any input of at least 2x2 pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNet {
    spec: UNetSpec,
    params: Vec<f64>,
}

struct UNetLayers {
    enc1a: Conv2d,
    enc1b: Conv2d,
    enc2a: Conv2d,
    enc2b: Conv2d,
    dec: Conv2d,
    head: Conv2d,
}

impl UNetSpec {
    fn layers(&self) -> UNetLayers {
        let c = self.base_channels;
        let enc1a = Conv2d::new(3, c, 3, 0);
        let enc1b = Conv2d::new(c, c, 3, enc1a.end());
        let enc2a = Conv2d::new(c, 2 * c, 3, enc1b.end());
        let enc2b = Conv2d::new(2 * c, 2 * c, 3, enc2a.end());
        let dec = Conv2d::new(3 * c, c, 3, enc2b.end());
        let head = Conv2d::new(c, self.num_classes, 1, dec.end());
        UNetLayers {
            enc1a,
            enc1b,
            enc2a,
            enc2b,
            dec,
            head,
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers().head.end()
    }
}

pub struct UNetTape {
    input: Tensor,
    a1: Tensor,
    s1: Tensor,
    pool_arg: Vec<usize>,
    p1: Tensor,
    a2: Tensor,
    s2: Tensor,
    cat: Tensor,
    d: Tensor,
}

impl UNet {
    pub fn new(spec: UNetSpec, seed: u64) -> Result<Self> {
        if spec.base_channels == 0 || spec.num_classes < 2 {
            return Err(Error::Config(format!(
                "UNet needs base_channels >= 1 and num_classes >= 2, got {spec:?}"
            )));
        }
        let layers = spec.layers();
        let mut params = vec![0.0; spec.num_params()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in [
            layers.enc1a,
            layers.enc1b,
            layers.enc2a,
            layers.enc2b,
            layers.dec,
            layers.head,
        ] {
            l.init(&mut params, &mut rng);
        }
        Ok(UNet { spec, params })
    }

    /// Rebuild from a stored parameter vector.
    pub fn from_params(spec: UNetSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.num_params() {
            return Err(Error::shape(
                format!("{} parameters", spec.num_params()),
                format!("{} parameters", params.len()),
            ));
        }
        Ok(UNet { spec, params })
    }

    pub fn spec(&self) -> UNetSpec {
        self.spec
    }
}

impl SegModel for UNet {
    type Tape = UNetTape;

    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_tape(&self, input: &Tensor) -> (Tensor, UNetTape) {
        let l = self.spec.layers();
        let p = &self.params;
        let a1 = relu(l.enc1a.forward(p, input));
        let s1 = relu(l.enc1b.forward(p, &a1));
        let (p1, pool_arg) = max_pool2(&s1);
        let a2 = relu(l.enc2a.forward(p, &p1));
        let s2 = relu(l.enc2b.forward(p, &a2));
        let up = upsample_to(&s2, s1.height(), s1.width());
        let cat = s1.concat(&up);
        let d = relu(l.dec.forward(p, &cat));
        let logits = l.head.forward(p, &d);
        let tape = UNetTape {
            input: input.clone(),
            a1,
            s1,
            pool_arg,
            p1,
            a2,
            s2,
            cat,
            d,
        };
        (logits, tape)
    }

    fn backward(&self, t: &UNetTape, grad_logits: &Tensor, grads: &mut [f64]) {
        let l = self.spec.layers();
        let p = &self.params;
        let gd = l.head.backward(p, &t.d, grad_logits, grads, true).unwrap();
        let gd = relu_backward(&t.d, gd);
        let gcat = l.dec.backward(p, &t.cat, &gd, grads, true).unwrap();
        let (gs1_skip, gup) = gcat.split_channels(self.spec.base_channels);
        let gs2 = upsample_backward(&gup, t.s2.height(), t.s2.width());
        let gs2 = relu_backward(&t.s2, gs2);
        let ga2 = l.enc2b.backward(p, &t.a2, &gs2, grads, true).unwrap();
        let ga2 = relu_backward(&t.a2, ga2);
        let gp1 = l.enc2a.backward(p, &t.p1, &ga2, grads, true).unwrap();
        let gs1_pool = max_pool2_backward(t.s1.shape(), &t.pool_arg, &gp1);
        let gs1 = relu_backward(&t.s1, gs1_skip.add(&gs1_pool).expect("same shape"));
        let ga1 = l.enc1b.backward(p, &t.a1, &gs1, grads, true).unwrap();
        let ga1 = relu_backward(&t.a1, ga1);
        l.enc1a.backward(p, &t.input, &ga1, grads, false);
    }
}

/// Two-layer network: 3x3 conv, ReLU, 1x1 conv. Small enough for
/// finite-difference gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    hidden: Conv2d,
    head: Conv2d,
    params: Vec<f64>,
}

pub struct ToyTape {
    input: Tensor,
    hidden: Tensor,
}

impl ToyNet {
    pub fn new(hidden_channels: usize, num_classes: usize, seed: u64) -> Self {
        let hidden = Conv2d::new(3, hidden_channels, 3, 0);
        let head = Conv2d::new(hidden_channels, num_classes, 1, hidden.end());
        let mut params = vec![0.0; head.end()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        hidden.init(&mut params, &mut rng);
        head.init(&mut params, &mut rng);
        ToyNet {
            hidden,
            head,
            params,
        }
    }
}

impl SegModel for ToyNet {
    type Tape = ToyTape;

    fn num_classes(&self) -> usize {
        self.head.out_channels
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_tape(&self, input: &Tensor) -> (Tensor, ToyTape) {
        let hidden = relu(self.hidden.forward(&self.params, input));
        let logits = self.head.forward(&self.params, &hidden);
        (
            logits,
            ToyTape {
                input: input.clone(),
                hidden,
            },
        )
    }

    fn backward(&self, t: &ToyTape, grad_logits: &Tensor, grads: &mut [f64]) {
        let gh = self
            .head
            .backward(&self.params, &t.hidden, grad_logits, grads, true)
            .unwrap();
        let gh = relu_backward(&t.hidden, gh);
        self.hidden.backward(&self.params, &t.input, &gh, grads, false);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(c, h, w, data).unwrap()
    }

    /// Direct-definition convolution used as the oracle for `Conv2d::forward`.
    fn conv_naive(l: &Conv2d, p: &[f64], x: &Tensor) -> Tensor {
        let (_, h, w) = x.shape();
        let pad = (l.kernel / 2) as isize;
        let mut out = Tensor::zeros(l.out_channels, h, w);
        for o in 0..l.out_channels {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = p[l.bidx(o)];
                    for i in 0..l.in_channels {
                        for ky in 0..l.kernel {
                            for kx in 0..l.kernel {
                                let sy = y as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    s += p[l.widx(o, i, ky, kx)]
                                        * x.at(i, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    *out.at_mut(o, y, xx) = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive() {
        let l = Conv2d::new(2, 3, 3, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Vec<f64> = (0..l.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = random_tensor(2, 5, 4, 2);
        let a = l.forward(&p, &x);
        let b = conv_naive(&l, &p, &x);
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_input_gradient_matches_finite_difference() {
        let l = Conv2d::new(2, 2, 3, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: Vec<f64> = (0..l.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = random_tensor(2, 4, 5, 4);
        let g = random_tensor(2, 4, 5, 5);
        let mut grads = vec![0.0; p.len()];
        let gin = l.backward(&p, &x, &g, &mut grads, true).unwrap();
        let f = |x: &Tensor| -> f64 {
            l.forward(&p, x).as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum()
        };
        for k in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[k] += 1e-6;
            let mut xm = x.clone();
            xm.as_mut_slice()[k] -= 1e-6;
            let fd = (f(&xp) - f(&xm)) / 2e-6;
            assert!((fd - gin.as_slice()[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn unet_output_shape_and_odd_sizes() {
        let net = UNet::new(UNetSpec { base_channels: 2, num_classes: 3 }, 0).unwrap();
        for (h, w) in [(8, 8), (7, 5), (2, 3)] {
            let out = net.forward(&random_tensor(3, h, w, 9));
            assert_eq!(out.shape(), (3, h, w));
        }
    }

    #[test]
    fn unet_gradients_match_finite_differences() {
        let net = UNet::new(UNetSpec { base_channels: 2, num_classes: 2 }, 7).unwrap();
        let x = random_tensor(3, 6, 5, 8);
        let g = random_tensor(2, 6, 5, 10);
        let (_, tape) = net.forward_tape(&x);
        let mut grads = vec![0.0; net.num_params()];
        net.backward(&tape, &g, &mut grads);
        let f = |n: &UNet| -> f64 {
            n.forward(&x).as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum()
        };
        let mut ok = 0;
        for k in 0..net.num_params() {
            let mut np = net.clone();
            np.params_mut()[k] += 1e-6;
            let mut nm = net.clone();
            nm.params_mut()[k] -= 1e-6;
            let fd = (f(&np) - f(&nm)) / 2e-6;
            let rel = (fd - grads[k]).abs() / fd.abs().max(grads[k].abs()).max(1e-8);
            if rel < 1e-4 || (fd - grads[k]).abs() < 1e-8 {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.98 * net.num_params() as f64, "{ok}/{}", net.num_params());
    }

    #[test]
    fn init_is_seeded() {
        let spec = UNetSpec::default();
        assert_eq!(UNet::new(spec, 5).unwrap(), UNet::new(spec, 5).unwrap());
        assert_ne!(UNet::new(spec, 5).unwrap(), UNet::new(spec, 6).unwrap());
        assert!(UNet::new(UNetSpec { base_channels: 4, num_classes: 1 }, 0).is_err());
    }
}
