use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io;
use crate::seeds;

const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "pnm", "ppm", "jpg", "jpeg"];

/// Procedural grayscale test scene in `[0, 1]`.
///
/// Layers a smooth background, filled ellipses and rectangles with sharp
/// edges, a patch of oriented grating and a few thin strokes.
pub fn synthetic_scene(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = seeds::rng(seed);
    let (hf, wf) = (height as f64, width as f64);
    let scale = hf.max(wf);

    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let k = rng.random_range(0.5..2.5) * 2.0 * PI / scale;
            let th = rng.random_range(0.0..PI);
            (k * th.cos(), k * th.sin(), rng.random_range(0.0..2.0 * PI), rng.random_range(0.05..0.15))
        })
        .collect();
    let base = rng.random_range(0.25..0.55);
    let mut img = Image::from_fn(height, width, |r, c| {
        base + waves.iter().map(|&(kx, ky, ph, a)| a * (kx * c as f64 + ky * r as f64 + ph).sin()).sum::<f64>()
    });

    let shapes = rng.random_range(4..9);
    for _ in 0..shapes {
        let (cy, cx) = (rng.random_range(0.0..hf), rng.random_range(0.0..wf));
        let (ry, rx) = (rng.random_range(0.05..0.25) * scale, rng.random_range(0.05..0.25) * scale);
        let level = rng.random_range(0.0..1.0);
        let ellipse = rng.random_bool(0.5);
        for r in 0..height {
            for c in 0..width {
                let (dy, dx) = ((r as f64 - cy) / ry, (c as f64 - cx) / rx);
                let inside = if ellipse { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if inside {
                    img.set(r, c, level);
                }
            }
        }
    }

    let (gy, gx) = (rng.random_range(0.0..hf * 0.6), rng.random_range(0.0..wf * 0.6));
    let (gh, gw) = (rng.random_range(0.2..0.4) * hf, rng.random_range(0.2..0.4) * wf);
    let period = rng.random_range(2.5..8.0);
    let th = rng.random_range(0.0..PI);
    let (gl, ga) = (rng.random_range(0.3..0.7), rng.random_range(0.15..0.3));
    for r in 0..height {
        for c in 0..width {
            let (y, x) = (r as f64, c as f64);
            if y >= gy && y < gy + gh && x >= gx && x < gx + gw {
                let u = x * th.cos() + y * th.sin();
                img.set(r, c, gl + ga * (2.0 * PI * u / period).sin());
            }
        }
    }

    for _ in 0..rng.random_range(2..5) {
        let (mut y, mut x) = (rng.random_range(0.0..hf), rng.random_range(0.0..wf));
        let th = rng.random_range(0.0..2.0 * PI);
        let level = rng.random_range(0.0..1.0);
        for _ in 0..(scale as usize / 2) {
            if y >= 0.0 && x >= 0.0 && (y as usize) < height && (x as usize) < width {
                img.set(y as usize, x as usize, level);
            }
            y += th.sin();
            x += th.cos();
        }
    }
    img.clamp(0.0, 1.0)
}

/// Image files in `dir` with a known raster extension, sorted by name.
pub fn list_scene_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// A random `size × size` crop of the grayscale image at `path`.
pub fn random_crop(path: &Path, size: usize, seed: u64) -> Result<Image> {
    let img = io::load_grayscale(path)?;
    let (h, w) = img.shape();
    if h < size || w < size {
        return Err(Error::invalid(format!("{} is {h}x{w}, smaller than the {size} crop", path.display())));
    }
    let mut rng = seeds::rng(seed);
    img.crop(rng.random_range(0..=h - size), rng.random_range(0..=w - size), size, size)
}
