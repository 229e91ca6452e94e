use rustfft::{num_complex::Complex, FftPlanner};

use super::Psf;
use crate::image::Image;

/// Same-size zero-padded convolution. Large kernels on large images go
/// through the FFT path; results agree with the direct path to ~1e-15.
pub fn convolve2d(img: &Image, psf: &Psf) -> Image {
    if prefer_fft(img, psf) {
        convolve2d_fft(img, psf)
    } else {
        convolve2d_direct(img, psf)
    }
}

fn prefer_fft(img: &Image, psf: &Psf) -> bool {
    let k = psf.size();
    let direct_cost = img.len() * k * k;
    k >= 11 && direct_cost > 1 << 20
}

/// Reference spatial convolution:
/// `out(i, j) = sum_{u,v} h(c+u, c+v) * img(i-u, j-v)`.
pub fn convolve2d_direct(img: &Image, psf: &Psf) -> Image {
    spatial(img, psf, false)
}

/// Adjoint of [`convolve2d_direct`] (correlation with the same kernel).
pub fn correlate2d(img: &Image, psf: &Psf) -> Image {
    spatial(img, psf, true)
}

fn spatial(img: &Image, psf: &Psf, flip: bool) -> Image {
    let (h, w) = img.shape();
    let k = psf.size();
    let c = psf.half() as isize;
    let src = img.data();
    let mut out = vec![0.0; h * w];
    for a in 0..k {
        for b in 0..k {
            let weight = psf.at(a, b);
            if weight == 0.0 {
                continue;
            }
            // Offset of the source pixel relative to the output pixel.
            let (du, dv) = if flip {
                (a as isize - c, b as isize - c)
            } else {
                (c - a as isize, c - b as isize)
            };
            let c_lo = (-dv).max(0) as usize;
            let c_hi = (w as isize - dv).min(w as isize).max(0) as usize;
            if c_lo >= c_hi {
                continue;
            }
            for i in 0..h {
                let si = i as isize + du;
                if si < 0 || si >= h as isize {
                    continue;
                }
                let srow = &src[si as usize * w..(si as usize + 1) * w];
                let drow = &mut out[i * w..(i + 1) * w];
                let shift = dv;
                for j in c_lo..c_hi {
                    drow[j] += weight * srow[(j as isize + shift) as usize];
                }
            }
        }
    }
    Image::new(h, w, out).expect("shape preserved")
}

/// FFT evaluation of [`convolve2d_direct`] via a full linear convolution on a
/// padded grid, cropped back to the input size.
pub fn convolve2d_fft(img: &Image, psf: &Psf) -> Image {
    let (h, w) = img.shape();
    let k = psf.size();
    let c = psf.half();
    let (ph, pw) = (h + k - 1, w + k - 1);
    let mut planner = FftPlanner::<f64>::new();

    let mut a = vec![Complex::new(0.0, 0.0); ph * pw];
    for r in 0..h {
        for col in 0..w {
            a[r * pw + col].re = img.get(r, col);
        }
    }
    let mut b = vec![Complex::new(0.0, 0.0); ph * pw];
    for r in 0..k {
        for col in 0..k {
            b[r * pw + col].re = psf.at(r, col);
        }
    }
    fft2(&mut planner, &mut a, ph, pw, false);
    fft2(&mut planner, &mut b, ph, pw, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= *y;
    }
    fft2(&mut planner, &mut a, ph, pw, true);
    let scale = 1.0 / (ph * pw) as f64;
    Image::from_fn(h, w, |r, col| a[(r + c) * pw + col + c].re * scale)
}

fn fft2(planner: &mut FftPlanner<f64>, buf: &mut [Complex<f64>], rows: usize, cols: usize, inverse: bool) {
    let row_fft = if inverse { planner.plan_fft_inverse(cols) } else { planner.plan_fft_forward(cols) };
    for row in buf.chunks_exact_mut(cols) {
        row_fft.process(row);
    }
    let col_fft = if inverse { planner.plan_fft_inverse(rows) } else { planner.plan_fft_forward(rows) };
    let mut column = vec![Complex::new(0.0, 0.0); rows];
    for col in 0..cols {
        for r in 0..rows {
            column[r] = buf[r * cols + col];
        }
        col_fft.process(&mut column);
        for r in 0..rows {
            buf[r * cols + col] = column[r];
        }
    }
}

/// Convolution with periodic (wrap-around) boundaries.
pub fn convolve2d_circular(img: &Image, psf: &Psf) -> Image {
    let (h, w) = img.shape();
    let k = psf.size();
    let c = psf.half() as isize;
    Image::from_fn(h, w, |i, j| {
        let mut acc = 0.0;
        for a in 0..k {
            for b in 0..k {
                let si = (i as isize - (a as isize - c)).rem_euclid(h as isize) as usize;
                let sj = (j as isize - (b as isize - c)).rem_euclid(w as isize) as usize;
                acc += psf.at(a, b) * img.get(si, sj);
            }
        }
        acc
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = seeds::rng(seed);
        Image::from_fn(h, w, |_, _| rng.random::<f64>())
    }

    fn random_psf(k: usize, seed: u64) -> Psf {
        let mut rng = seeds::rng(seed);
        Psf::normalized(k, (0..k * k).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    /// Textbook quadruple loop over output pixel and kernel tap.
    fn naive(img: &Image, psf: &Psf) -> Image {
        let (h, w) = img.shape();
        let k = psf.size() as isize;
        let c = k / 2;
        Image::from_fn(h, w, |i, j| {
            let mut acc = 0.0;
            for a in 0..k {
                for b in 0..k {
                    let si = i as isize - (a - c);
                    let sj = j as isize - (b - c);
                    if si >= 0 && sj >= 0 && si < h as isize && sj < w as isize {
                        acc += psf.at(a as usize, b as usize) * img.get(si as usize, sj as usize);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn delta_is_identity() {
        let img = random_image(9, 7, 0);
        assert_eq!(convolve2d(&img, &Psf::delta()), img);
        let mut k = vec![0.0; 25];
        k[12] = 1.0;
        assert_eq!(convolve2d(&img, &Psf::from_kernel(5, k).unwrap()), img);
    }

    #[test]
    fn unit_sum_preserves_constant_interior() {
        let img = Image::filled(20, 20, 0.6);
        let psf = random_psf(5, 3);
        let out = convolve2d(&img, &psf);
        for r in 2..18 {
            for c in 2..18 {
                assert!((out.get(r, c) - 0.6).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn direct_matches_naive_loop() {
        let img = random_image(16, 16, 1);
        let psf = random_psf(5, 2);
        let fast = convolve2d_direct(&img, &psf);
        let slow = naive(&img, &psf);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-14);
        }
        // asymmetric kernel and non-square image exercise the flip
        let img = random_image(7, 13, 4);
        let psf = random_psf(9, 5);
        let fast = convolve2d_direct(&img, &psf);
        let slow = naive(&img, &psf);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn fft_matches_direct() {
        for &(h, w, k) in &[(16, 16, 5), (30, 21, 11), (20, 20, 81)] {
            let img = random_image(h, w, h as u64);
            let psf = random_psf(k, k as u64);
            let d = convolve2d_direct(&img, &psf);
            let f = convolve2d_fft(&img, &psf);
            let num: f64 = d.data().iter().zip(f.data()).map(|(a, b)| (a - b).powi(2)).sum();
            let den: f64 = d.data().iter().map(|a| a * a).sum();
            assert!((num / den).sqrt() < 1e-9, "{h}x{w} k={k}");
        }
    }

    #[test]
    fn correlate_is_adjoint() {
        let x = random_image(11, 9, 6);
        let y = random_image(11, 9, 7);
        let psf = random_psf(5, 8);
        let lhs: f64 = convolve2d_direct(&x, &psf).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(correlate2d(&y, &psf).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn circular_preserves_total_flux() {
        let x = random_image(12, 12, 9);
        let psf = random_psf(5, 10);
        let out = convolve2d_circular(&x, &psf);
        assert!((out.sum() - x.sum()).abs() < 1e-12);
    }
}
