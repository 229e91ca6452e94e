use crate::error::{Error, Result};
use crate::image::Image;
use crate::optics::{convolve2d, convolve2d_circular, correlate2d, Psf};

pub const DEFAULT_LUCY_ITERS: usize = 30;

/// Denominators below this are treated as zero.
const DENOM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    Zero,
    Circular,
}

/// Richardson–Lucy deconvolution of `y` (negatives clamped to 0) starting
/// from the clamped measurement itself.
pub fn lucy_richardson(y: &Image, psf: &Psf, iters: usize, boundary: Boundary) -> Result<Image> {
    if iters == 0 {
        return Err(Error::invalid("Richardson-Lucy needs at least one iteration"));
    }
    let total: f64 = psf.kernel().iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("PSF must sum to 1, sums to {total}")));
    }
    let y = y.map(|v| v.max(0.0));
    if psf.is_delta() {
        return Ok(y);
    }
    let flipped = Psf::from_kernel(psf.size(), psf.kernel().iter().rev().copied().collect())?;
    let (blur, blur_adj): (fn(&Image, &Psf) -> Image, Box<dyn Fn(&Image) -> Image>) = match boundary {
        Boundary::Zero => (convolve2d, Box::new(|r: &Image| correlate2d(r, psf))),
        Boundary::Circular => (convolve2d_circular, Box::new(move |r: &Image| convolve2d_circular(r, &flipped))),
    };
    let mut u = y.clone();
    for _ in 0..iters {
        let predicted = blur(&u, psf);
        let ratio = Image::from_fn(y.height(), y.width(), |r, c| {
            let d = predicted.get(r, c);
            if d > DENOM_FLOOR {
                y.get(r, c) / d
            } else {
                0.0
            }
        });
        let correction = blur_adj(&ratio);
        u = u.hadamard(&correction)?;
    }
    Ok(u)
}
