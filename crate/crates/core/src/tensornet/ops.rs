//! Parameter-free tensor operations and their gradients.

use super::Tensor4;
use crate::error::{Error, Result};

/// Space-to-depth: `(B, C, H, W) -> (B, C*s1*s2, H/s1, W/s2)`; output channel
/// `c*s1*s2 + i*s2 + j` holds offset `(i, j)` of every `s1 x s2` cell.
pub fn pixel_unshuffle(x: &Tensor4, s1: usize, s2: usize) -> Result<Tensor4> {
    let [b, c, h, w] = x.dims();
    if s1 == 0 || s2 == 0 || h % s1 != 0 || w % s2 != 0 {
        return Err(Error::shape(format!("{h}x{w} not divisible by unshuffle factor {s1}x{s2}")));
    }
    let (oh, ow) = (h / s1, w / s2);
    let oc = c * s1 * s2;
    let mut out = vec![0.0; x.data().len()];
    for bi in 0..b {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let o = ch * s1 * s2 + (y % s1) * s2 + xx % s2;
                    out[((bi * oc + o) * oh + y / s1) * ow + xx / s2] = x.at(bi, ch, y, xx);
                }
            }
        }
    }
    Tensor4::new(b, oc, oh, ow, out)
}

/// Depth-to-space, the exact inverse of [`pixel_unshuffle`]; also its gradient.
pub fn pixel_shuffle(x: &Tensor4, s1: usize, s2: usize) -> Result<Tensor4> {
    let [b, oc, oh, ow] = x.dims();
    if s1 == 0 || s2 == 0 || oc % (s1 * s2) != 0 {
        return Err(Error::shape(format!("{oc} channels not divisible by {s1}x{s2}")));
    }
    let c = oc / (s1 * s2);
    let (h, w) = (oh * s1, ow * s2);
    let mut out = vec![0.0; x.data().len()];
    for bi in 0..b {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let o = ch * s1 * s2 + (y % s1) * s2 + xx % s2;
                    out[((bi * c + ch) * h + y) * w + xx] = x.at(bi, o, y / s1, xx / s2);
                }
            }
        }
    }
    Tensor4::new(b, c, h, w, out)
}

/// Channel-wise concatenation `[a; b]`.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    if a.batch() != b.batch() || a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape(format!("cannot concat {:?} and {:?}", a.dims(), b.dims())));
    }
    let mut out = Vec::with_capacity(a.data().len() + b.data().len());
    for i in 0..a.batch() {
        out.extend_from_slice(a.sample(i));
        out.extend_from_slice(b.sample(i));
    }
    Tensor4::new(a.batch(), a.channels() + b.channels(), a.height(), a.width(), out)
}

/// Splits channels at `first`, the gradient of [`concat_channels`].
pub fn split_channels(x: &Tensor4, first: usize) -> Result<(Tensor4, Tensor4)> {
    let [b, c, h, w] = x.dims();
    if first == 0 || first >= c {
        return Err(Error::shape(format!("cannot split {c} channels at {first}")));
    }
    let hw = h * w;
    let mut lo = Vec::with_capacity(b * first * hw);
    let mut hi = Vec::with_capacity(b * (c - first) * hw);
    for i in 0..b {
        let s = x.sample(i);
        lo.extend_from_slice(&s[..first * hw]);
        hi.extend_from_slice(&s[first * hw..]);
    }
    Ok((Tensor4::new(b, first, h, w, lo)?, Tensor4::new(b, c - first, h, w, hi)?))
}

/// Divides channel `c` of sample `b` by `scale[b, c]` (`scale` is `B x C x 1 x 1`).
pub fn channel_div(x: &Tensor4, scale: &Tensor4) -> Result<Tensor4> {
    check_scale(x, scale)?;
    let hw = x.height() * x.width();
    let mut out = x.clone();
    for (idx, v) in out.data_mut().iter_mut().enumerate() {
        *v /= scale.data()[idx / hw];
    }
    Ok(out)
}

/// Gradients of [`channel_div`] with respect to `x` and `scale`.
pub fn channel_div_backward(x: &Tensor4, scale: &Tensor4, grad_out: &Tensor4) -> Result<(Tensor4, Tensor4)> {
    check_scale(x, scale)?;
    x.same_dims(grad_out)?;
    let hw = x.height() * x.width();
    let mut dx = grad_out.clone();
    let mut ds = vec![0.0; scale.data().len()];
    for (idx, d) in dx.data_mut().iter_mut().enumerate() {
        let r = scale.data()[idx / hw];
        ds[idx / hw] -= *d * x.data()[idx] / (r * r);
        *d /= r;
    }
    Ok((dx, Tensor4::new(scale.batch(), scale.channels(), 1, 1, ds)?))
}

fn check_scale(x: &Tensor4, scale: &Tensor4) -> Result<()> {
    if scale.dims() != [x.batch(), x.channels(), 1, 1] {
        return Err(Error::shape(format!("scale {:?} does not match {:?}", scale.dims(), x.dims())));
    }
    Ok(())
}

/// Mean absolute error and its (sub)gradient, with `sign(0) = 0`.
pub fn l1_loss(pred: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    pred.same_dims(target)?;
    let n = pred.data().len() as f64;
    let mut loss = 0.0;
    let mut grad = pred.clone();
    for (g, (&p, &t)) in grad.data_mut().iter_mut().zip(pred.data().iter().zip(target.data())) {
        let d = p - t;
        loss += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((loss / n, grad))
}
