//! Coded-aperture synthesis, corner alignment markers and piezo-stage
//! snapshot schedules.
//!
//! Shifted masks wrap around the aperture edges (circular shift), so every
//! shifted instance keeps the per-block structure of the printed pattern.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::optics::SrFactor;
use crate::seeds;

/// Binary HR mask (1 = transparent) with a fixed number of open pixels per
/// `s1`x`s2` block.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedAperture {
    height: usize,
    width: usize,
    sr: SrFactor,
    open_ratio: f64,
    base: Vec<u8>,
    markers: Option<MarkerSpec>,
}

/// Corner alignment markers: `lr_size`x`lr_size` LR pixels, open in the
/// middle and opaque around it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkerSpec {
    pub lr_size: usize,
}

impl Default for MarkerSpec {
    fn default() -> Self {
        Self { lr_size: 3 }
    }
}

/// Number of open pixels per block for open ratio `p`.
pub fn open_count(p: f64, sr: SrFactor) -> Result<usize> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("open ratio must be in (0, 1], got {p}")));
    }
    let exact = p * sr.total() as f64;
    let count = exact.round();
    if (exact - count).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "open ratio {p} gives {exact} open pixels per {}x{} block, not an integer",
            sr.s1, sr.s2
        )));
    }
    Ok(count as usize)
}

/// Random aperture: in every block exactly `round(p * s)` pixels, chosen
/// uniformly without replacement, are transparent.
pub fn generate_aperture(n1: usize, n2: usize, sr: SrFactor, p: f64, seed: u64) -> Result<CodedAperture> {
    let (m1, m2) = sr.lr_shape((n1, n2))?;
    if n1 == 0 || n2 == 0 {
        return Err(Error::invalid("aperture dims must be >= 1"));
    }
    let count = open_count(p, sr)?;
    let s = sr.total();
    let mut rng = seeds::rng(seed);
    let mut base = vec![0u8; n1 * n2];
    for br in 0..m1 {
        for bc in 0..m2 {
            for idx in sample(&mut rng, s, count) {
                let (r, c) = (br * sr.s1 + idx / sr.s2, bc * sr.s2 + idx % sr.s2);
                base[r * n2 + c] = 1;
            }
        }
    }
    Ok(CodedAperture { height: n1, width: n2, sr, open_ratio: p, base, markers: None })
}

impl CodedAperture {
    /// Rebuilds an aperture from a stored binary pattern.
    pub fn from_pattern(
        height: usize,
        width: usize,
        sr: SrFactor,
        open_ratio: f64,
        base: Vec<u8>,
        markers: Option<MarkerSpec>,
    ) -> Result<Self> {
        sr.lr_shape((height, width))?;
        if base.len() != height * width || base.iter().any(|&v| v > 1) {
            return Err(Error::invalid("aperture pattern must be a binary height*width array"));
        }
        Ok(Self { height, width, sr, open_ratio, base, markers })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn sr(&self) -> SrFactor {
        self.sr
    }

    pub fn open_ratio(&self) -> f64 {
        self.open_ratio
    }

    pub fn markers(&self) -> Option<MarkerSpec> {
        self.markers
    }

    pub fn pattern(&self) -> &[u8] {
        &self.base
    }

    pub fn to_image(&self) -> Image {
        Image::new(self.height, self.width, self.base.iter().map(|&v| v as f64).collect())
            .expect("aperture shape")
    }

    /// LR block rows/cols covered by markers, as `(row0, col0)` corners.
    fn marker_origins(&self, spec: MarkerSpec) -> Result<[(usize, usize); 4]> {
        let (m1, m2) = (self.height / self.sr.s1, self.width / self.sr.s2);
        let k = spec.lr_size;
        if k < 3 || k % 2 == 0 {
            return Err(Error::invalid(format!("marker size must be odd and >= 3, got {k}")));
        }
        if m1 < 2 * k || m2 < 2 * k {
            return Err(Error::invalid(format!(
                "{m1}x{m2} LR grid too small for four {k}x{k} corner markers"
            )));
        }
        Ok([(0, 0), (0, m2 - k), (m1 - k, 0), (m1 - k, m2 - k)])
    }

    /// True when LR block `(br, bc)` belongs to a marker.
    pub fn is_marker_block(&self, br: usize, bc: usize) -> bool {
        let Some(spec) = self.markers else { return false };
        let Ok(origins) = self.marker_origins(spec) else { return false };
        origins.iter().any(|&(r0, c0)| {
            (r0..r0 + spec.lr_size).contains(&br) && (c0..c0 + spec.lr_size).contains(&bc)
        })
    }

    /// Overwrites the four corners with markers; at HR resolution the central
    /// LR pixel becomes an all-open block and the ring all-opaque blocks.
    pub fn apply_markers(&self, spec: MarkerSpec) -> Result<Self> {
        let origins = self.marker_origins(spec)?;
        let mut out = self.clone();
        let half = spec.lr_size / 2;
        for (r0, c0) in origins {
            for br in r0..r0 + spec.lr_size {
                for bc in c0..c0 + spec.lr_size {
                    let open = (br - r0 == half && bc - c0 == half) as u8;
                    for r in br * self.sr.s1..(br + 1) * self.sr.s1 {
                        for c in bc * self.sr.s2..(bc + 1) * self.sr.s2 {
                            out.base[r * self.width + c] = open;
                        }
                    }
                }
            }
        }
        out.markers = Some(spec);
        Ok(out)
    }

    /// Number of open pixels in LR block `(br, bc)` of the unshifted pattern.
    pub fn block_count(&self, br: usize, bc: usize) -> usize {
        let mut n = 0;
        for r in br * self.sr.s1..(br + 1) * self.sr.s1 {
            for c in bc * self.sr.s2..(bc + 1) * self.sr.s2 {
                n += self.base[r * self.width + c] as usize;
            }
        }
        n
    }
}

/// How a mask shift is realised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftMode {
    /// Circular shift by whole HR pixels; the nominal model.
    Integer,
    /// Bilinear interpolation of the binary mask (values in [0, 1]); only for
    /// aperture-misalignment studies. Limited to |shift| <= 2.
    Fractional,
}

/// Mask `Lambda_i` seen by the sensor after moving the aperture by
/// `(dx, dy)` HR pixels (dx along columns, dy along rows).
pub fn shift_mask(ap: &CodedAperture, dx: f64, dy: f64, mode: ShiftMode) -> Result<Image> {
    let (h, w) = ap.shape();
    match mode {
        ShiftMode::Integer => {
            if dx.fract() != 0.0 || dy.fract() != 0.0 {
                return Err(Error::invalid(format!("integer shift requested with ({dx}, {dy})")));
            }
            let (sx, sy) = (dx as isize, dy as isize);
            Ok(Image::from_fn(h, w, |r, c| {
                let sr = (r as isize - sy).rem_euclid(h as isize) as usize;
                let sc = (c as isize - sx).rem_euclid(w as isize) as usize;
                ap.base[sr * w + sc] as f64
            }))
        }
        ShiftMode::Fractional => {
            if dx.abs() > 2.0 || dy.abs() > 2.0 || !dx.is_finite() || !dy.is_finite() {
                return Err(Error::invalid(format!(
                    "fractional shift ({dx}, {dy}) exceeds 2 HR pixels"
                )));
            }
            let at = |r: isize, c: isize| -> f64 {
                let r = r.rem_euclid(h as isize) as usize;
                let c = c.rem_euclid(w as isize) as usize;
                ap.base[r * w + c] as f64
            };
            Ok(Image::from_fn(h, w, |r, c| {
                let y = r as f64 - dy;
                let x = c as f64 - dx;
                let (y0, x0) = (y.floor(), x.floor());
                let (fy, fx) = (y - y0, x - x0);
                let (y0, x0) = (y0 as isize, x0 as isize);
                (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                    + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1))
            }))
        }
    }
}

/// Aperture displacement for one snapshot, in HR pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shift {
    pub dx: f64,
    pub dy: f64,
}

impl Shift {
    pub fn is_integer(&self) -> bool {
        self.dx.fract() == 0.0 && self.dy.fract() == 0.0
    }
}

/// Ordered aperture displacements, one per snapshot, starting at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSchedule {
    shifts: Vec<Shift>,
}

impl SnapshotSchedule {
    pub fn new(shifts: Vec<Shift>) -> Result<Self> {
        let Some(first) = shifts.first() else {
            return Err(Error::invalid("schedule needs at least one snapshot"));
        };
        if first.dx != 0.0 || first.dy != 0.0 {
            return Err(Error::invalid("first snapshot must be unshifted"));
        }
        for (i, a) in shifts.iter().enumerate() {
            if shifts[..i].iter().any(|b| b == a) {
                return Err(Error::invalid(format!("duplicate shift ({}, {})", a.dx, a.dy)));
            }
        }
        Ok(Self { shifts })
    }

    /// First `m` positions of a row-major `ceil(sqrt(m))`-square raster of
    /// single-HR-pixel steps.
    pub fn raster(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("snapshot count must be >= 1"));
        }
        let side = (m as f64).sqrt().ceil() as usize;
        let shifts = (0..m)
            .map(|i| Shift { dx: (i % side) as f64, dy: (i / side) as f64 })
            .collect();
        Self::new(shifts)
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn shifts(&self) -> &[Shift] {
        &self.shifts
    }

    pub fn is_integer(&self) -> bool {
        self.shifts.iter().all(Shift::is_integer)
    }

    /// One mask per snapshot; integer shifts wrap, fractional ones interpolate.
    pub fn masks(&self, ap: &CodedAperture) -> Result<Vec<Image>> {
        self.shifts
            .iter()
            .map(|s| {
                let mode = if s.is_integer() { ShiftMode::Integer } else { ShiftMode::Fractional };
                shift_mask(ap, s.dx, s.dy, mode)
            })
            .collect()
    }
}
