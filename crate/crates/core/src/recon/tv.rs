use super::Denoiser;
use crate::error::{Error, Result};
use crate::image::Image;

pub const TV_ITERS: usize = 50;
pub const TV_STEP: f64 = 0.125;
pub const DEFAULT_MU: f64 = 0.05;

/// Forward differences with a zero difference past the last row/column.
fn gradient(u: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                gx[i] = u[i + 1] - u[i];
            }
            if r + 1 < h {
                gy[i] = u[i + w] - u[i];
            }
        }
    }
    (gx, gy)
}

/// Negative adjoint of [`gradient`].
fn divergence(px: &[f64], py: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut d = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let x = if c + 1 < w { px[i] } else { 0.0 } - if c > 0 { px[i - 1] } else { 0.0 };
            let y = if r + 1 < h { py[i] } else { 0.0 } - if r > 0 { py[i - w] } else { 0.0 };
            d[i] = x + y;
        }
    }
    d
}

/// Isotropic total variation with the discretisation used by [`tv_denoise`].
pub fn total_variation(u: &Image) -> f64 {
    let (gx, gy) = gradient(u.data(), u.height(), u.width());
    gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).sum()
}

/// Approximate `argmin_u ½‖u − v‖² + μ TV(u)` by Chambolle's dual projection
/// with [`TV_ITERS`] iterations.
pub fn tv_denoise(v: &Image, mu: f64) -> Result<Image> {
    if !(mu >= 0.0) {
        return Err(Error::invalid(format!("TV weight must be >= 0, got {mu}")));
    }
    if mu == 0.0 {
        return Ok(v.clone());
    }
    let (h, w) = v.shape();
    let vd = v.data();
    let mut px = vec![0.0; h * w];
    let mut py = vec![0.0; h * w];
    for _ in 0..TV_ITERS {
        let div = divergence(&px, &py, h, w);
        let arg: Vec<f64> = div.iter().zip(vd).map(|(d, x)| d - x / mu).collect();
        let (gx, gy) = gradient(&arg, h, w);
        for i in 0..h * w {
            let norm = 1.0 + TV_STEP * gx[i].hypot(gy[i]);
            px[i] = (px[i] + TV_STEP * gx[i]) / norm;
            py[i] = (py[i] + TV_STEP * gy[i]) / norm;
        }
    }
    let div = divergence(&px, &py, h, w);
    Image::new(h, w, vd.iter().zip(&div).map(|(x, d)| x - mu * d).collect())
}

/// Total-variation proximal denoiser.
#[derive(Debug, Clone, Copy, Default)]
pub struct TvDenoiser;

impl Denoiser for TvDenoiser {
    fn name(&self) -> &str {
        "tv"
    }

    fn denoise(&self, v: &Image, mu: f64) -> Result<Image> {
        tv_denoise(v, mu)
    }
}
