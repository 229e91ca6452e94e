use rand::Rng;
use rayon::prelude::*;

use super::{Mode, Param, Tensor4};
use crate::error::{Error, Result};
use crate::seeds;

/// Default negative slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

pub trait Layer: Send + Sync {
    /// Forward pass that records what [`Layer::backward`] needs.
    fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4>;

    /// Evaluation-mode forward pass without recording.
    fn infer(&self, x: &Tensor4) -> Result<Tensor4>;

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4>;

    /// Trainable parameters, in a fixed order.
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    /// Everything a checkpoint must hold (parameters and running buffers).
    fn state(&self) -> Vec<(&'static str, &Param)> {
        Vec::new()
    }

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        Vec::new()
    }
}

fn no_record() -> Error {
    Error::invalid("backward called without a recorded forward pass")
}

/// Kaiming-uniform (fan-in, leaky-ReLU gain) weights and `U(-1/sqrt(fan_in), ..)` biases.
fn kaiming(n: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<f64> {
    let bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in as f64)).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

fn fan_in_bias(n: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// 2D convolution (cross-correlation, as in common deep-learning libraries)
/// with zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor4>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        seed: u64,
    ) -> Self {
        let mut rng = seeds::rng(seed);
        let fan_in = in_channels * kernel.0 * kernel.1;
        let n = out_channels * fan_in;
        let weight = Param::new(
            vec![out_channels, in_channels, kernel.0, kernel.1],
            kaiming(n, fan_in, &mut rng),
        );
        let bias = Param::new(vec![out_channels], fan_in_bias(out_channels, fan_in, &mut rng));
        Self { in_channels, out_channels, kernel, stride: stride.max(1), padding, weight, bias, cache: None }
    }

    /// 3x3, stride 1, padding 1: spatial size preserved.
    pub fn same3x3(in_channels: usize, out_channels: usize, seed: u64) -> Self {
        Self::new(in_channels, out_channels, (3, 3), 1, 1, seed)
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < kh || pw < kw {
            return Err(Error::shape(format!("{h}x{w} input too small for {kh}x{kw} kernel")));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    fn check_input(&self, x: &Tensor4) -> Result<(usize, usize)> {
        if x.channels() != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        self.out_hw(x.height(), x.width())
    }

    /// Valid output-column range for kernel column `kx` plus the source offset.
    #[inline]
    fn col_range(&self, kx: usize, w: usize, ow: usize) -> (usize, usize) {
        let p = self.padding as isize;
        let s = self.stride as isize;
        let off = kx as isize - p;
        // need 0 <= ox*s + off < w
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = if (w as isize) - off <= 0 { 0 } else { (((w as isize) - off) + s - 1) / s };
        (lo.max(0) as usize, (hi as usize).min(ow))
    }

    fn forward_sample(&self, x: &[f64], h: usize, w: usize, oh: usize, ow: usize, out: &mut [f64]) {
        let (kh, kw) = self.kernel;
        let (s, p) = (self.stride, self.padding as isize);
        for oc in 0..self.out_channels {
            let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = self.bias.value[oc]);
            for ic in 0..self.in_channels {
                let src = &x[ic * h * w..(ic + 1) * h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = self.weight.value[((oc * self.in_channels + ic) * kh + ky) * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (lo, hi) = self.col_range(kx, w, ow);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * s) as isize + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                            let drow = &mut plane[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                let base = (lo as isize + kx as isize - p) as usize;
                                for (d, v) in drow[lo..hi].iter_mut().zip(&srow[base..base + hi - lo]) {
                                    *d += wv * v;
                                }
                            } else {
                                for ox in lo..hi {
                                    drow[ox] += wv * srow[(ox * s) as usize + kx - p as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward_sample(
        &self,
        x: &[f64],
        dy: &[f64],
        h: usize,
        w: usize,
        oh: usize,
        ow: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (kh, kw) = self.kernel;
        let (s, p) = (self.stride, self.padding as isize);
        let mut dx = vec![0.0; self.in_channels * h * w];
        let mut dw = vec![0.0; self.weight.len()];
        let mut db = vec![0.0; self.out_channels];
        for oc in 0..self.out_channels {
            let gplane = &dy[oc * oh * ow..(oc + 1) * oh * ow];
            db[oc] = gplane.iter().sum();
            for ic in 0..self.in_channels {
                let src = &x[ic * h * w..(ic + 1) * h * w];
                let dsrc = &mut dx[ic * h * w..(ic + 1) * h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let widx = ((oc * self.in_channels + ic) * kh + ky) * kw + kx;
                        let wv = self.weight.value[widx];
                        let (lo, hi) = self.col_range(kx, w, ow);
                        if lo >= hi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * s) as isize + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let (r0, r1) = (iy as usize * w, (iy as usize + 1) * w);
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                let base = (lo as isize + kx as isize - p) as usize;
                                let srow = &src[r0..r1][base..base + hi - lo];
                                let drow = &mut dsrc[r0..r1][base..base + hi - lo];
                                for ((g, v), d) in grow[lo..hi].iter().zip(srow).zip(drow) {
                                    acc += g * v;
                                    *d += wv * g;
                                }
                            } else {
                                for ox in lo..hi {
                                    let ix = ox * s + kx - p as usize;
                                    acc += grow[ox] * src[r0 + ix];
                                    dsrc[r0 + ix] += wv * grow[ox];
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
        (dx, dw, db)
    }

    fn run(&self, x: &Tensor4) -> Result<Tensor4> {
        let (oh, ow) = self.check_input(x)?;
        let (h, w) = (x.height(), x.width());
        let out_len = self.out_channels * oh * ow;
        let mut out = vec![0.0; x.batch() * out_len];
        out.par_chunks_mut(out_len).enumerate().for_each(|(b, o)| {
            self.forward_sample(x.sample(b), h, w, oh, ow, o);
        });
        Tensor4::new(x.batch(), self.out_channels, oh, ow, out)
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor4, _mode: Mode) -> Result<Tensor4> {
        let out = self.run(x)?;
        self.cache = Some(x.clone());
        Ok(out)
    }

    fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        self.run(x)
    }

    fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4> {
        let x = self.cache.take().ok_or_else(no_record)?;
        let (oh, ow) = self.out_hw(x.height(), x.width())?;
        if grad_out.dims() != [x.batch(), self.out_channels, oh, ow] {
            return Err(Error::shape(format!("conv grad {:?}", grad_out.dims())));
        }
        let (h, w) = (x.height(), x.width());
        let parts: Vec<_> = (0..x.batch())
            .into_par_iter()
            .map(|b| self.backward_sample(x.sample(b), grad_out.sample(b), h, w, oh, ow))
            .collect();
        let mut dx = Vec::with_capacity(x.data().len());
        for (pdx, pdw, pdb) in parts {
            dx.extend_from_slice(&pdx);
            self.weight.grad.iter_mut().zip(&pdw).for_each(|(g, v)| *g += v);
            self.bias.grad.iter_mut().zip(&pdb).for_each(|(g, v)| *g += v);
        }
        Tensor4::new(x.batch(), self.in_channels, h, w, dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn state(&self) -> Vec<(&'static str, &Param)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }
}

/// Per-channel batch normalisation over `(B, H, W)`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor4,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(vec![channels], vec![1.0; channels]),
            beta: Param::zeros(vec![channels]),
            running_mean: Param::zeros(vec![channels]),
            running_var: Param::new(vec![channels], vec![1.0; channels]),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            cache: None,
        }
    }

    fn check(&self, x: &Tensor4) -> Result<()> {
        if x.channels() != self.channels {
            return Err(Error::shape(format!("batch norm expects {} channels, got {}", self.channels, x.channels())));
        }
        Ok(())
    }

    /// Per-channel `(mean, biased variance)` over batch and space.
    fn batch_stats(x: &Tensor4) -> (Vec<f64>, Vec<f64>) {
        let [b, c, h, w] = x.dims();
        let hw = h * w;
        let n = (b * hw) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for bi in 0..b {
                s += x.sample(bi)[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
            }
            let mu = s / n;
            let mut v = 0.0;
            for bi in 0..b {
                v += x.sample(bi)[ch * hw..(ch + 1) * hw].iter().map(|t| (t - mu) * (t - mu)).sum::<f64>();
            }
            mean[ch] = mu;
            var[ch] = v / n;
        }
        (mean, var)
    }

    fn normalize(&self, x: &Tensor4, mean: &[f64], inv_std: &[f64]) -> (Tensor4, Tensor4) {
        let [_, c, h, w] = x.dims();
        let hw = h * w;
        let mut xhat = x.clone();
        let mut y = x.clone();
        for (idx, (xh, yv)) in xhat.data_mut().iter_mut().zip(y.data_mut()).enumerate() {
            let ch = (idx / hw) % c;
            let v = (*xh - mean[ch]) * inv_std[ch];
            *xh = v;
            *yv = self.gamma.value[ch] * v + self.beta.value[ch];
        }
        (xhat, y)
    }

    fn eval_inv_std(&self) -> Vec<f64> {
        self.running_var.value.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect()
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        self.check(x)?;
        let (xhat, y, inv_std) = match mode {
            Mode::Train => {
                let (mean, var) = Self::batch_stats(x);
                let n = (x.batch() * x.height() * x.width()) as f64;
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                for ch in 0..self.channels {
                    let m = self.momentum;
                    self.running_mean.value[ch] = (1.0 - m) * self.running_mean.value[ch] + m * mean[ch];
                    self.running_var.value[ch] = (1.0 - m) * self.running_var.value[ch] + m * var[ch] * unbias;
                }
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                let (xhat, y) = self.normalize(x, &mean, &inv_std);
                (xhat, y, inv_std)
            }
            Mode::Eval => {
                let inv_std = self.eval_inv_std();
                let (xhat, y) = self.normalize(x, &self.running_mean.value, &inv_std);
                (xhat, y, inv_std)
            }
        };
        self.cache = Some(BnCache { xhat, inv_std, batch_stats: mode == Mode::Train });
        Ok(y)
    }

    fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        Ok(self.normalize(x, &self.running_mean.value, &self.eval_inv_std()).1)
    }

    fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4> {
        let cache = self.cache.take().ok_or_else(no_record)?;
        cache.xhat.same_dims(grad_out)?;
        let [b, c, h, w] = grad_out.dims();
        let hw = h * w;
        let n = (b * hw) as f64;
        let mut dx = grad_out.clone();
        for ch in 0..c {
            let gamma = self.gamma.value[ch];
            let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
            for bi in 0..b {
                let off = (bi * c + ch) * hw;
                for i in off..off + hw {
                    sum_dy += grad_out.data()[i];
                    sum_dy_xhat += grad_out.data()[i] * cache.xhat.data()[i];
                }
            }
            self.gamma.grad[ch] += sum_dy_xhat;
            self.beta.grad[ch] += sum_dy;
            let inv = cache.inv_std[ch];
            for bi in 0..b {
                let off = (bi * c + ch) * hw;
                for i in off..off + hw {
                    let g = grad_out.data()[i];
                    dx.data_mut()[i] = if cache.batch_stats {
                        gamma * inv / n * (n * g - sum_dy - cache.xhat.data()[i] * sum_dy_xhat)
                    } else {
                        gamma * inv * g
                    };
                }
            }
        }
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn state(&self) -> Vec<(&'static str, &Param)> {
        vec![
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ]
    }

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![
            ("gamma", &mut self.gamma),
            ("beta", &mut self.beta),
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct LeakyRelu {
    pub slope: f64,
    cache: Option<Tensor4>,
}

impl Default for LeakyRelu {
    fn default() -> Self {
        Self { slope: LEAKY_SLOPE, cache: None }
    }
}

impl Layer for LeakyRelu {
    fn forward(&mut self, x: &Tensor4, _mode: Mode) -> Result<Tensor4> {
        self.cache = Some(x.clone());
        self.infer(x)
    }

    fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        let a = self.slope;
        Ok(x.map(|v| if v > 0.0 { v } else { a * v }))
    }

    fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4> {
        let x = self.cache.take().ok_or_else(no_record)?;
        x.same_dims(grad_out)?;
        let mut dx = grad_out.clone();
        for (d, v) in dx.data_mut().iter_mut().zip(x.data()) {
            if *v <= 0.0 {
                *d *= self.slope;
            }
        }
        Ok(dx)
    }
}

/// `ln(1 + e^x)`, evaluated stably.
#[derive(Debug, Clone, Default)]
pub struct Softplus {
    cache: Option<Tensor4>,
}

pub fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Layer for Softplus {
    fn forward(&mut self, x: &Tensor4, _mode: Mode) -> Result<Tensor4> {
        self.cache = Some(x.clone());
        self.infer(x)
    }

    fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(x.map(softplus))
    }

    fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4> {
        let x = self.cache.take().ok_or_else(no_record)?;
        x.same_dims(grad_out)?;
        let mut dx = grad_out.clone();
        dx.data_mut().iter_mut().zip(x.data()).for_each(|(d, &v)| *d *= sigmoid(v));
        Ok(dx)
    }
}

/// Fully connected layer on `B x F x 1 x 1` tensors.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor4>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, seed: u64) -> Self {
        let mut rng = seeds::rng(seed);
        Self {
            in_features,
            out_features,
            weight: Param::new(
                vec![out_features, in_features],
                kaiming(in_features * out_features, in_features, &mut rng),
            ),
            bias: Param::new(vec![out_features], fan_in_bias(out_features, in_features, &mut rng)),
            cache: None,
        }
    }

    fn check(&self, x: &Tensor4) -> Result<()> {
        if x.sample_len() != self.in_features {
            return Err(Error::shape(format!("linear expects {} features, got {}", self.in_features, x.sample_len())));
        }
        Ok(())
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: &Tensor4, _mode: Mode) -> Result<Tensor4> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        let mut out = Vec::with_capacity(x.batch() * self.out_features);
        for b in 0..x.batch() {
            let xs = x.sample(b);
            for o in 0..self.out_features {
                let row = &self.weight.value[o * self.in_features..(o + 1) * self.in_features];
                out.push(self.bias.value[o] + row.iter().zip(xs).map(|(w, v)| w * v).sum::<f64>());
            }
        }
        Tensor4::new(x.batch(), self.out_features, 1, 1, out)
    }

    fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4> {
        let x = self.cache.take().ok_or_else(no_record)?;
        if grad_out.dims() != [x.batch(), self.out_features, 1, 1] {
            return Err(Error::shape(format!("linear grad {:?}", grad_out.dims())));
        }
        let mut dx = vec![0.0; x.data().len()];
        for b in 0..x.batch() {
            let xs = x.sample(b);
            let g = grad_out.sample(b);
            let dxs = &mut dx[b * self.in_features..(b + 1) * self.in_features];
            for o in 0..self.out_features {
                self.bias.grad[o] += g[o];
                let row = o * self.in_features;
                for i in 0..self.in_features {
                    self.weight.grad[row + i] += g[o] * xs[i];
                    dxs[i] += g[o] * self.weight.value[row + i];
                }
            }
        }
        let [b, c, h, w] = x.dims();
        Tensor4::new(b, c, h, w, dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn state(&self) -> Vec<(&'static str, &Param)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }
}

/// Convolution, optional batch norm, leaky ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnLrelu {
    pub conv: Conv2d,
    pub bn: Option<BatchNorm2d>,
    pub act: LeakyRelu,
}

impl ConvBnLrelu {
    pub fn new(conv: Conv2d) -> Self {
        let bn = Some(BatchNorm2d::new(conv.out_channels));
        Self { conv, bn, act: LeakyRelu::default() }
    }

    pub fn same3x3(in_channels: usize, out_channels: usize, seed: u64) -> Self {
        Self::new(Conv2d::same3x3(in_channels, out_channels, seed))
    }

    pub fn without_bn(conv: Conv2d) -> Self {
        Self { conv, bn: None, act: LeakyRelu::default() }
    }
}

impl Layer for ConvBnLrelu {
    fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        let mut y = self.conv.forward(x, mode)?;
        if let Some(bn) = &mut self.bn {
            y = bn.forward(&y, mode)?;
        }
        self.act.forward(&y, mode)
    }

    fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        let mut y = self.conv.infer(x)?;
        if let Some(bn) = &self.bn {
            y = bn.infer(&y)?;
        }
        self.act.infer(&y)
    }

    fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4> {
        let mut g = self.act.backward(grad_out)?;
        if let Some(bn) = &mut self.bn {
            g = bn.backward(&g)?;
        }
        self.conv.backward(&g)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.conv.params_mut();
        if let Some(bn) = &mut self.bn {
            p.extend(bn.params_mut());
        }
        p
    }

    fn state(&self) -> Vec<(&'static str, &Param)> {
        let mut s: Vec<_> = self.conv.state().into_iter().map(|(n, p)| (conv_name(n), p)).collect();
        if let Some(bn) = &self.bn {
            s.extend(bn.state().into_iter().map(|(n, p)| (bn_name(n), p)));
        }
        s
    }

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        let mut s: Vec<_> = self.conv.state_mut().into_iter().map(|(n, p)| (conv_name(n), p)).collect();
        if let Some(bn) = &mut self.bn {
            s.extend(bn.state_mut().into_iter().map(|(n, p)| (bn_name(n), p)));
        }
        s
    }
}

fn conv_name(n: &str) -> &'static str {
    match n {
        "weight" => "conv.weight",
        _ => "conv.bias",
    }
}

fn bn_name(n: &str) -> &'static str {
    match n {
        "gamma" => "bn.gamma",
        "beta" => "bn.beta",
        "running_mean" => "bn.running_mean",
        _ => "bn.running_var",
    }
}
