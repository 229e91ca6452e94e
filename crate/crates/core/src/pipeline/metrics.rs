use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` flags identical images.
pub fn psnr(reference: &Image, test: &Image, peak: f64) -> Result<f64> {
    reference.check_same_shape(test)?;
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("pSNR peak must be positive, got {peak}")));
    }
    let mse = reference.data().iter().zip(test.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        / reference.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / mse).log10() })
}

/// pSNR over a whole stack of images, pooling squared errors.
pub fn psnr_stack(reference: &[Image], test: &[Image], peak: f64) -> Result<f64> {
    if reference.len() != test.len() || reference.is_empty() {
        return Err(Error::shape(format!("stacks of {} and {} images", reference.len(), test.len())));
    }
    let (mut se, mut n) = (0.0, 0usize);
    for (a, b) in reference.iter().zip(test) {
        a.check_same_shape(b)?;
        se += a.data().iter().zip(b.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        n += a.len();
    }
    let mse = se / n as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / mse).log10() })
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable valid-mode Gaussian filtering of a row-major `h × w` buffer.
fn filter_valid(data: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = g.iter().enumerate().map(|(k, t)| t * data[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = g.iter().enumerate().map(|(k, t)| t * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM for unit dynamic range, as a percentage.
pub fn ssim(reference: &Image, test: &Image) -> Result<f64> {
    reference.check_same_shape(test)?;
    let (h, w) = reference.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let g = gaussian_taps();
    let (x, y) = (reference.data(), test.data());
    let prod = |f: &dyn Fn(usize) -> f64| (0..x.len()).map(f).collect::<Vec<f64>>();
    let mu_x = filter_valid(x, h, w, &g);
    let mu_y = filter_valid(y, h, w, &g);
    let xx = filter_valid(&prod(&|i| x[i] * x[i]), h, w, &g);
    let yy = filter_valid(&prod(&|i| y[i] * y[i]), h, w, &g);
    let xy = filter_valid(&prod(&|i| x[i] * y[i]), h, w, &g);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let (vx, vy, cxy) = (xx[i] - mx * mx, yy[i] - my * my, xy[i] - mx * my);
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(100.0 * total / mu_x.len() as f64)
}

/// Noise standard deviation that puts a stack at `target_db` peak SNR,
/// referenced to the stack's maximum noiseless intensity.
pub fn noise_sigma_for_psnr(signal: &[Image], target_db: f64) -> Result<f64> {
    if signal.is_empty() {
        return Err(Error::invalid("noise calibration needs a non-empty signal"));
    }
    if target_db.is_nan() {
        return Err(Error::invalid("target pSNR is NaN"));
    }
    let peak = signal.iter().map(Image::max).fold(f64::NEG_INFINITY, f64::max);
    Ok(peak / 10f64.powf(target_db / 20.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::add_gaussian_noise;
    use crate::seeds;
    use rand::Rng;

    fn random(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = seeds::rng(seed);
        Image::from_fn(h, w, |_, _| rng.random())
    }

    #[test]
    fn psnr_closed_forms() {
        let a = random(8, 8, 0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 0.01);
        assert!((psnr(&a, &b, 1.0).unwrap() - 40.0).abs() < 1e-9);
        assert!(psnr(&a, &random(8, 7, 0), 1.0).is_err());
    }

    #[test]
    fn ssim_basics() {
        let a = random(16, 16, 1);
        assert!((ssim(&a, &a).unwrap() - 100.0).abs() < 1e-12);
        let bin = Image::from_fn(16, 16, |r, c| ((r / 3 + c / 4) % 2) as f64);
        assert!(ssim(&bin, &bin.map(|v| 1.0 - v)).unwrap() < -50.0);
        assert!(ssim(&random(10, 16, 0), &random(10, 16, 1)).is_err());
        let b = random(16, 16, 2);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        let s = ssim(&a, &b).unwrap();
        assert!((-100.0..=100.0).contains(&s));
    }

    #[test]
    fn noise_sigma_closed_form_and_monte_carlo() {
        let sig = Image::from_fn(100, 100, |r, c| ((r * 100 + c) as f64) / 9999.0);
        assert!((noise_sigma_for_psnr(&[sig.clone()], 60.0).unwrap() - 1e-3).abs() < 1e-15);
        assert!(noise_sigma_for_psnr(&[sig.clone()], 1e6).unwrap() < 1e-300);
        assert!(noise_sigma_for_psnr(&[], 30.0).is_err());
        for target in [20.0, 40.0, 60.0] {
            let sigma = noise_sigma_for_psnr(&[sig.clone()], target).unwrap();
            let noisy = add_gaussian_noise(&sig, sigma, 3).unwrap();
            assert!((psnr(&sig, &noisy, 1.0).unwrap() - target).abs() < 0.5);
        }
    }
}
