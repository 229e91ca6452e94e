//! Physical forward model: relay-lens PSF synthesis, 2D convolution,
//! box downsampling and snapshot measurement generation.
//!
//! Conventions shared by every module:
//! * the box filter averages (unit sum), so a constant scene of level `c`
//!   yields LR pixels of level `c`;
//! * convolution is "same"-size with zero padding outside the image.

mod bessel;
mod conv;

pub use bessel::{airy_intensity, bessel_j1, J1_FIRST_ZERO};
pub use conv::{convolve2d, convolve2d_direct, convolve2d_fft, convolve2d_circular, correlate2d};

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::seeds;

/// Discrete PSF of the relay lens: odd-sized, nonnegative, unit-sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    size: usize,
    kernel: Vec<f64>,
    radius: Option<f64>,
}

/// Kernel size used for simulated Airy PSFs.
pub const DEFAULT_PSF_SIZE: usize = 81;

const UNIT_SUM_TOL: f64 = 1e-12;

impl Psf {
    /// Airy disk whose first intensity null sits `radius` HR pixels from the
    /// center, truncated to `size`x`size` and renormalised.
    pub fn airy(radius: f64, size: usize) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!("airy radius must be > 0, got {radius}")));
        }
        if size < 3 || size % 2 == 0 {
            return Err(Error::invalid(format!("psf size must be odd and >= 3, got {size}")));
        }
        let c = (size / 2) as isize;
        let scale = J1_FIRST_ZERO / radius;
        let mut kernel = Vec::with_capacity(size * size);
        for i in 0..size as isize {
            for j in 0..size as isize {
                let (di, dj) = (i - c, j - c);
                let rho = (((di * di) + (dj * dj)) as f64).sqrt();
                kernel.push(airy_intensity(scale * rho));
            }
        }
        normalize(&mut kernel);
        Ok(Self { size, kernel, radius: Some(radius) })
    }

    /// Identity kernel (1x1).
    pub fn delta() -> Self {
        Self { size: 1, kernel: vec![1.0], radius: None }
    }

    /// Wraps an explicit kernel, which must already be unit-sum.
    pub fn from_kernel(size: usize, kernel: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || kernel.len() != size * size {
            return Err(Error::invalid(format!(
                "psf kernel must be odd-sized square, got size {size} with {} values",
                kernel.len()
            )));
        }
        if kernel.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("psf entries must be finite and nonnegative"));
        }
        let sum: f64 = kernel.iter().sum();
        if (sum - 1.0).abs() > UNIT_SUM_TOL {
            return Err(Error::invalid(format!("psf must be unit-sum, sums to {sum}")));
        }
        Ok(Self { size, kernel, radius: None })
    }

    /// Like [`Psf::from_kernel`] but rescales to unit sum first.
    pub fn normalized(size: usize, mut kernel: Vec<f64>) -> Result<Self> {
        let sum: f64 = kernel.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::invalid("psf kernel has no positive mass"));
        }
        kernel.iter_mut().for_each(|v| *v /= sum);
        Self::from_kernel(size, kernel)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> Option<f64> {
        self.radius
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.kernel[i * self.size + j]
    }

    pub fn half(&self) -> usize {
        self.size / 2
    }

    pub fn is_delta(&self) -> bool {
        let c = self.half();
        self.kernel
            .iter()
            .enumerate()
            .all(|(idx, &v)| if idx == c * self.size + c { v == 1.0 } else { v == 0.0 })
    }

    /// LR-domain counterpart: the HR kernel box-averaged in `s1`x`s2` cells
    /// aligned on the center pixel, then renormalised.
    pub fn to_lr(&self, sr: SrFactor) -> Self {
        let c = self.half() as isize;
        let cell = |u: isize, s: usize| -> isize { (u + (s / 2) as isize).div_euclid(s as isize) };
        let reach = cell(c, sr.s1).max(-cell(-c, sr.s1)).max(cell(c, sr.s2)).max(-cell(-c, sr.s2));
        let size = (2 * reach + 1) as usize;
        let mut lr = vec![0.0; size * size];
        for i in 0..self.size as isize {
            for j in 0..self.size as isize {
                let a = cell(i - c, sr.s1) + reach;
                let b = cell(j - c, sr.s2) + reach;
                lr[a as usize * size + b as usize] += self.at(i as usize, j as usize);
            }
        }
        normalize(&mut lr);
        Self { size, kernel: lr, radius: self.radius }
    }
}

fn normalize(kernel: &mut [f64]) {
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= sum);
}

/// Super-resolution factor `s = s1 * s2` between HR and LR grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SrFactor {
    pub s1: usize,
    pub s2: usize,
}

impl SrFactor {
    pub fn new(s1: usize, s2: usize) -> Result<Self> {
        if s1 == 0 || s2 == 0 {
            return Err(Error::invalid(format!("sr factor must be >= 1, got {s1}x{s2}")));
        }
        Ok(Self { s1, s2 })
    }

    pub fn square(s: usize) -> Result<Self> {
        Self::new(s, s)
    }

    pub fn total(&self) -> usize {
        self.s1 * self.s2
    }

    /// LR shape for an HR shape, checking exact divisibility.
    pub fn lr_shape(&self, hr: (usize, usize)) -> Result<(usize, usize)> {
        if hr.0 % self.s1 != 0 || hr.1 % self.s2 != 0 {
            return Err(Error::invalid(format!(
                "HR size {}x{} not divisible by sr factor {}x{}",
                hr.0, hr.1, self.s1, self.s2
            )));
        }
        Ok((hr.0 / self.s1, hr.1 / self.s2))
    }
}

/// Mean over each `s1`x`s2` block.
pub fn box_downsample(img: &Image, sr: SrFactor) -> Result<Image> {
    let (m1, m2) = sr.lr_shape(img.shape())?;
    let inv = 1.0 / sr.total() as f64;
    let mut out = vec![0.0; m1 * m2];
    for r in 0..img.height() {
        let row = &img.data()[r * img.width()..(r + 1) * img.width()];
        let dst = &mut out[(r / sr.s1) * m2..(r / sr.s1 + 1) * m2];
        for (c, v) in row.iter().enumerate() {
            dst[c / sr.s2] += v;
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    Image::new(m1, m2, out)
}

/// Adjoint of [`box_downsample`]: each LR value spread as `v / s` over its block.
pub fn box_downsample_adjoint(lr: &Image, sr: SrFactor) -> Image {
    let inv = 1.0 / sr.total() as f64;
    Image::from_fn(lr.height() * sr.s1, lr.width() * sr.s2, |r, c| {
        lr.get(r / sr.s1, c / sr.s2) * inv
    })
}

/// Same-size box filter anchored at the top-left of each window, zero outside.
/// Sampling its output every `s` pixels reproduces [`box_downsample`].
pub fn box_filter(img: &Image, sr: SrFactor) -> Image {
    let inv = 1.0 / sr.total() as f64;
    Image::from_fn(img.height(), img.width(), |r, c| {
        let mut acc = 0.0;
        for a in r..(r + sr.s1).min(img.height()) {
            for b in c..(c + sr.s2).min(img.width()) {
                acc += img.get(a, b);
            }
        }
        acc * inv
    })
}

/// Stride-`s` sampling with a delta kernel: keeps pixel `(k*s1, l*s2)`.
pub fn decimate(img: &Image, sr: SrFactor) -> Result<Image> {
    let (m1, m2) = sr.lr_shape(img.shape())?;
    Ok(Image::from_fn(m1, m2, |r, c| img.get(r * sr.s1, c * sr.s2)))
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma`.
pub fn add_gaussian_noise(img: &Image, sigma: f64, seed: u64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = seeds::rng(seed);
    let mut out = img.clone();
    for v in out.data_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

/// Noiseless blurred snapshot `D (h_R * (mask . x))`.
pub fn blurred_measure(x: &Image, mask: &Image, psf: &Psf, sr: SrFactor) -> Result<Image> {
    let masked = x.hadamard(mask)?;
    box_downsample(&convolve2d(&masked, psf), sr)
}

/// One snapshot of the compressive FPA: `D (h_R * (mask . x)) + n`, with
/// `n ~ N(0, noise_sigma^2)` drawn from `seed`.
pub fn forward_measure(
    x: &Image,
    mask: &Image,
    psf: &Psf,
    sr: SrFactor,
    noise_sigma: f64,
    seed: u64,
) -> Result<Image> {
    let clean = blurred_measure(x, mask, psf, sr)?;
    add_gaussian_noise(&clean, noise_sigma, seed)
}

/// Blur-free, noise-free snapshot `D (mask . x)`: the calibration target.
pub fn ideal_measure(x: &Image, mask: &Image, sr: SrFactor) -> Result<Image> {
    box_downsample(&x.hadamard(mask)?, sr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = seeds::rng(seed);
        Image::from_fn(h, w, |_, _| rng.random::<f64>())
    }

    #[test]
    fn airy_81_is_normalised_with_peak_at_center() {
        for &r in &[1.5, 3.2, 5.0, 10.4] {
            let psf = Psf::airy(r, 81).unwrap();
            assert_eq!(psf.size(), 81);
            assert!((psf.kernel().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let center = psf.at(40, 40);
            for (idx, &v) in psf.kernel().iter().enumerate() {
                assert!(v >= 0.0);
                if idx != 40 * 81 + 40 {
                    assert!(v < center);
                }
            }
        }
    }

    #[test]
    fn airy_first_null_at_radius() {
        let psf = Psf::airy(5.0, 81).unwrap();
        let center = psf.at(40, 40);
        assert!(psf.at(45, 40) < 1e-6 * center);
        assert!(psf.at(40, 35) < 1e-6 * center);
    }

    #[test]
    fn airy_rotation_symmetry_is_exact() {
        let psf = Psf::airy(3.7, 21).unwrap();
        let n = 21;
        for i in 0..n {
            for j in 0..n {
                let v = psf.at(i, j);
                assert_eq!(v, psf.at(j, n - 1 - i));
                assert_eq!(v, psf.at(n - 1 - i, n - 1 - j));
                assert_eq!(v, psf.at(i, n - 1 - j));
            }
        }
    }

    #[test]
    fn airy_rejects_bad_args() {
        assert!(Psf::airy(0.0, 81).is_err());
        assert!(Psf::airy(-1.0, 81).is_err());
        assert!(Psf::airy(2.0, 80).is_err());
        assert!(Psf::airy(2.0, 1).is_err());
    }

    #[test]
    fn from_kernel_validates() {
        assert!(Psf::from_kernel(3, vec![0.0; 9]).is_err());
        assert!(Psf::from_kernel(2, vec![0.25; 4]).is_err());
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        assert!(Psf::from_kernel(3, k).unwrap().is_delta());
    }

    #[test]
    fn box_downsample_examples() {
        let img = Image::new(2, 2, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let lr = box_downsample(&img, SrFactor::square(2).unwrap()).unwrap();
        assert_eq!(lr.data(), &[4.0]);

        let c = Image::filled(10, 15, 0.37);
        let lr = box_downsample(&c, SrFactor::new(5, 3).unwrap()).unwrap();
        assert_eq!(lr.shape(), (2, 5));
        assert!(lr.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));

        assert!(box_downsample(&Image::zeros(7, 10), SrFactor::square(5).unwrap()).is_err());
    }

    #[test]
    fn box_downsample_matches_dense_matrix() {
        let (n1, n2) = (20, 20);
        let sr = SrFactor::square(5).unwrap();
        let x = random_image(n1, n2, 11);
        let (m1, m2) = (4, 4);
        // D built row by row: row k has 1/s at the HR pixels of block k.
        let mut d = vec![0.0; m1 * m2 * n1 * n2];
        for k in 0..m1 * m2 {
            let (kr, kc) = (k / m2, k % m2);
            for r in kr * 5..kr * 5 + 5 {
                for c in kc * 5..kc * 5 + 5 {
                    d[k * n1 * n2 + r * n2 + c] = 1.0 / 25.0;
                }
            }
        }
        let lr = box_downsample(&x, sr).unwrap();
        for k in 0..m1 * m2 {
            let want: f64 = (0..n1 * n2).map(|j| d[k * n1 * n2 + j] * x.data()[j]).sum();
            assert!((lr.data()[k] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn downsample_adjoint_identity() {
        let sr = SrFactor::new(2, 3).unwrap();
        let x = random_image(6, 9, 1);
        let y = random_image(3, 3, 2);
        let lhs: f64 = box_downsample(&x, sr).unwrap().data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(box_downsample_adjoint(&y, sr).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn strided_box_equals_box_downsample() {
        let sr = SrFactor::new(3, 2).unwrap();
        let x = random_image(12, 10, 5);
        let a = decimate(&box_filter(&x, sr), sr).unwrap();
        let b = box_downsample(&x, sr).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn box_filter_commutes_with_psf_on_interior_support() {
        // delta (*)_s (h_B * h_R * v) == h_B (*)_s (h_R * v)
        let sr = SrFactor::square(5).unwrap();
        let psf = Psf::airy(2.0, 9).unwrap();
        let mut rng = seeds::rng(9);
        let v = Image::from_fn(40, 40, |r, c| {
            if (10..30).contains(&r) && (10..30).contains(&c) { rng.random::<f64>() } else { 0.0 }
        });
        let lhs = decimate(&convolve2d(&box_filter(&v, sr), &psf), sr).unwrap();
        let rhs = box_downsample(&convolve2d(&v, &psf), sr).unwrap();
        for (a, b) in lhs.data().iter().zip(rhs.data()) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn ideal_measure_is_unblurred_noiseless_forward() {
        let sr = SrFactor::square(3).unwrap();
        let x = random_image(9, 12, 3);
        let mask = random_image(9, 12, 4).map(|v| if v > 0.3 { 1.0 } else { 0.0 });
        let a = ideal_measure(&x, &mask, sr).unwrap();
        let b = forward_measure(&x, &mask, &Psf::delta(), sr, 0.0, 0).unwrap();
        assert_eq!(a, b);
        let ones = Image::filled(9, 12, 1.0);
        assert_eq!(ideal_measure(&x, &ones, sr).unwrap(), box_downsample(&x, sr).unwrap());
    }

    #[test]
    fn forward_measure_noise_is_seeded() {
        let sr = SrFactor::square(2).unwrap();
        let x = random_image(8, 8, 3);
        let mask = Image::filled(8, 8, 1.0);
        let psf = Psf::airy(1.5, 7).unwrap();
        let a = forward_measure(&x, &mask, &psf, sr, 0.01, 42).unwrap();
        let b = forward_measure(&x, &mask, &psf, sr, 0.01, 42).unwrap();
        let c = forward_measure(&x, &mask, &psf, sr, 0.01, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn forward_measure_rejects_mismatched_mask() {
        let sr = SrFactor::square(2).unwrap();
        let x = Image::zeros(8, 8);
        let mask = Image::zeros(8, 6);
        assert!(forward_measure(&x, &mask, &Psf::delta(), sr, 0.0, 0).is_err());
        assert!(ideal_measure(&x, &mask, sr).is_err());
    }

    #[test]
    fn forward_measure_is_linear() {
        let sr = SrFactor::square(4).unwrap();
        let psf = Psf::airy(2.5, 15).unwrap();
        let mask = random_image(16, 16, 8).map(|v| (v > 0.2) as u8 as f64);
        let x1 = random_image(16, 16, 1);
        let x2 = random_image(16, 16, 2);
        let (a, b) = (0.7, -1.9);
        let comb = Image::from_fn(16, 16, |r, c| a * x1.get(r, c) + b * x2.get(r, c));
        let lhs = forward_measure(&comb, &mask, &psf, sr, 0.0, 0).unwrap();
        let f1 = forward_measure(&x1, &mask, &psf, sr, 0.0, 0).unwrap();
        let f2 = forward_measure(&x2, &mask, &psf, sr, 0.0, 0).unwrap();
        for i in 0..lhs.len() {
            let want = a * f1.data()[i] + b * f2.data()[i];
            assert!((lhs.data()[i] - want).abs() <= 1e-10 * want.abs().max(1e-3));
        }
    }

    #[test]
    fn lr_psf_is_unit_sum_and_centered() {
        let sr = SrFactor::square(5).unwrap();
        let lr = Psf::airy(5.0, 81).unwrap().to_lr(sr);
        assert_eq!(lr.size() % 2, 1);
        assert!((lr.kernel().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let c = lr.half();
        assert!(lr.kernel().iter().all(|&v| v <= lr.at(c, c)));
        assert!(Psf::delta().to_lr(sr).is_delta());
    }
}
