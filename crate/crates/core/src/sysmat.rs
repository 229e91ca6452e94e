//! Explicit system matrices relating an HR scene to stacked LR snapshots.
//!
//! Measurements are stacked snapshot-major: entry `i * M + k` is LR pixel `k`
//! (row-major) of snapshot `i`. HR vectors are row-major `N1 x N2`.
//!
//! Without relay-lens blur each LR pixel only sees its own `s1 x s2` HR block,
//! so the matrix splits into `M` independent `m x s` blocks and every product
//! costs `O(m N)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aperture::{CodedAperture, SnapshotSchedule};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::linalg::{cholesky_in_place, cholesky_solve};
use crate::optics::{Psf, SrFactor};

/// Largest HR pixel count for which a dense matrix is built (60x60).
pub const DEFAULT_DENSE_CAP: usize = 3600;

/// Default ridge weight for [`least_squares_solve`].
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Row-major `mM x N` matrix, one row block `C_i` per snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSystemMatrix {
    hr_shape: (usize, usize),
    lr_shape: (usize, usize),
    snapshots: usize,
    data: Vec<f64>,
}

impl DenseSystemMatrix {
    /// Probes the noiseless forward model with every HR basis image.
    ///
    /// The response to basis image `e_j` under mask `Lambda_i` is the PSF
    /// stamped at pixel `j`, scaled by `Lambda_i[j]`, then box-averaged.
    pub fn from_masks(masks: &[Image], psf: &Psf, sr: SrFactor, cap: usize) -> Result<Self> {
        let hr_shape = check_masks(masks)?;
        let lr_shape = sr.lr_shape(hr_shape)?;
        let (n1, n2) = hr_shape;
        let n = n1 * n2;
        if n > cap {
            return Err(Error::invalid(format!(
                "dense system matrix for {n1}x{n2} exceeds the {cap}-pixel cap"
            )));
        }
        let m_lr = lr_shape.0 * lr_shape.1;
        let rows = masks.len() * m_lr;
        let inv_s = 1.0 / sr.total() as f64;
        let k = psf.size() as isize;
        let c = psf.half() as isize;

        // Build transposed (one contiguous row per HR pixel), then transpose.
        let mut cols: Vec<f64> = vec![0.0; n * rows];
        cols.par_chunks_mut(rows).enumerate().for_each(|(j, col)| {
            let (p, q) = ((j / n2) as isize, (j % n2) as isize);
            for (i, mask) in masks.iter().enumerate() {
                let weight = mask.data()[j];
                if weight == 0.0 {
                    continue;
                }
                let off = i * m_lr;
                for a in 0..k {
                    let r = p + a - c;
                    if r < 0 || r >= n1 as isize {
                        continue;
                    }
                    let lr_row = r as usize / sr.s1 * lr_shape.1;
                    for b in 0..k {
                        let cc = q + b - c;
                        if cc < 0 || cc >= n2 as isize {
                            continue;
                        }
                        let h = psf.at(a as usize, b as usize);
                        col[off + lr_row + cc as usize / sr.s2] += weight * h * inv_s;
                    }
                }
            }
        });
        let mut data = vec![0.0; rows * n];
        data.par_chunks_mut(n).enumerate().for_each(|(r, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = cols[j * rows + r];
            }
        });
        Ok(Self { hr_shape, lr_shape, snapshots: masks.len(), data })
    }

    pub fn nrows(&self) -> usize {
        self.snapshots * self.lr_shape.0 * self.lr_shape.1
    }

    pub fn ncols(&self) -> usize {
        self.hr_shape.0 * self.hr_shape.1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn entry(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.ncols() + c]
    }

    /// Rows of snapshot `i` (`C_i`).
    pub fn snapshot_rows(&self, i: usize) -> &[f64] {
        let m = self.lr_shape.0 * self.lr_shape.1 * self.ncols();
        &self.data[i * m..(i + 1) * m]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.data.par_chunks(self.ncols()).map(|row| crate::linalg::dot(row, x)).collect()
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let n = self.ncols();
        let mut out = vec![0.0; n];
        for (row, &w) in self.data.chunks(n).zip(y) {
            if w == 0.0 {
                continue;
            }
            out.iter_mut().zip(row).for_each(|(o, v)| *o += w * v);
        }
        out
    }
}

/// `build_dense_row_probe`: dense `C` for a schedule of aperture shifts.
pub fn build_dense_row_probe(
    schedule: &SnapshotSchedule,
    aperture: &CodedAperture,
    psf: &Psf,
    sr: SrFactor,
    cap: usize,
) -> Result<DenseSystemMatrix> {
    DenseSystemMatrix::from_masks(&schedule.masks(aperture)?, psf, sr, cap)
}

/// Blur-free system matrix stored as `M` contiguous `m x s` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagSystemMatrix {
    hr_shape: (usize, usize),
    lr_shape: (usize, usize),
    snapshots: usize,
    block_len: usize,
    blocks: Vec<f64>,
    hr_index: Vec<usize>,
}

impl BlockDiagSystemMatrix {
    /// Block `k` holds `Lambda_i[l] / s` for snapshot `i` (row) and the `l`-th
    /// HR pixel of LR block `k` (column, row-major within the block).
    pub fn from_masks(masks: &[Image], sr: SrFactor) -> Result<Self> {
        let hr_shape = check_masks(masks)?;
        let lr_shape = sr.lr_shape(hr_shape)?;
        let m = masks.len();
        let s = sr.total();
        let n_blocks = lr_shape.0 * lr_shape.1;
        let inv_s = 1.0 / s as f64;
        let mut hr_index = Vec::with_capacity(n_blocks * s);
        for br in 0..lr_shape.0 {
            for bc in 0..lr_shape.1 {
                for a in 0..sr.s1 {
                    for b in 0..sr.s2 {
                        hr_index.push((br * sr.s1 + a) * hr_shape.1 + bc * sr.s2 + b);
                    }
                }
            }
        }
        let mut blocks = vec![0.0; n_blocks * m * s];
        for k in 0..n_blocks {
            let idx = &hr_index[k * s..(k + 1) * s];
            let blk = &mut blocks[k * m * s..(k + 1) * m * s];
            for (i, mask) in masks.iter().enumerate() {
                for (l, &hr) in idx.iter().enumerate() {
                    blk[i * s + l] = mask.data()[hr] * inv_s;
                }
            }
        }
        Ok(Self { hr_shape, lr_shape, snapshots: m, block_len: s, blocks, hr_index })
    }

    pub fn num_blocks(&self) -> usize {
        self.lr_shape.0 * self.lr_shape.1
    }

    /// `(m, s)`.
    pub fn block_shape(&self) -> (usize, usize) {
        (self.snapshots, self.block_len)
    }

    pub fn block(&self, k: usize) -> &[f64] {
        let len = self.snapshots * self.block_len;
        &self.blocks[k * len..(k + 1) * len]
    }

    /// HR pixel indices covered by block `k`.
    pub fn block_pixels(&self, k: usize) -> &[usize] {
        &self.hr_index[k * self.block_len..(k + 1) * self.block_len]
    }

    pub fn blocks(&self) -> &[f64] {
        &self.blocks
    }

    /// Blocks whose Gram matrix `B_k^T B_k` is not positive definite, i.e.
    /// HR pixels the snapshots cannot resolve without regularisation.
    pub fn singular_blocks(&self) -> Vec<usize> {
        let (m, s) = self.block_shape();
        (0..self.num_blocks())
            .filter(|&k| {
                let mut g = block_gram(self.block(k), m, s, 0.0);
                cholesky_in_place(&mut g, s).is_err()
            })
            .collect()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (m, s) = self.block_shape();
        let n_blocks = self.num_blocks();
        let mut y = vec![0.0; m * n_blocks];
        for k in 0..n_blocks {
            let blk = self.block(k);
            let idx = self.block_pixels(k);
            for i in 0..m {
                let row = &blk[i * s..(i + 1) * s];
                y[i * n_blocks + k] = row.iter().zip(idx).map(|(w, &j)| w * x[j]).sum();
            }
        }
        y
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let (m, s) = self.block_shape();
        let n_blocks = self.num_blocks();
        let mut x = vec![0.0; self.hr_shape.0 * self.hr_shape.1];
        for k in 0..n_blocks {
            let blk = self.block(k);
            let idx = self.block_pixels(k);
            for i in 0..m {
                let w = y[i * n_blocks + k];
                for (l, &j) in idx.iter().enumerate() {
                    x[j] += blk[i * s + l] * w;
                }
            }
        }
        x
    }
}

/// `build_block_diag`: block-diagonal `C` for whole-pixel aperture shifts.
pub fn build_block_diag(
    schedule: &SnapshotSchedule,
    aperture: &CodedAperture,
    sr: SrFactor,
) -> Result<BlockDiagSystemMatrix> {
    if !schedule.is_integer() {
        return Err(Error::invalid("block-diagonal system matrix needs integer shifts"));
    }
    BlockDiagSystemMatrix::from_masks(&schedule.masks(aperture)?, sr)
}

fn check_masks(masks: &[Image]) -> Result<(usize, usize)> {
    let first = masks.first().ok_or_else(|| Error::invalid("need at least one mask"))?;
    for m in masks {
        first.check_same_shape(m)?;
    }
    Ok(first.shape())
}

/// Which representation of `C` to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixForm {
    Dense,
    #[default]
    BlockDiag,
}

impl std::fmt::Display for MatrixForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MatrixForm::Dense => "dense",
            MatrixForm::BlockDiag => "block-diag",
        })
    }
}

impl std::str::FromStr for MatrixForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "block-diag" => Ok(Self::BlockDiag),
            other => Err(Error::invalid(format!("unknown matrix form {other:?} (dense|block-diag)"))),
        }
    }
}

/// Builds `C` for the given masks. `psf` is only honoured by the dense form;
/// the block-diagonal form exists only without blur.
pub fn build_system_matrix(form: MatrixForm, masks: &[Image], psf: &Psf, sr: SrFactor) -> Result<SystemMatrix> {
    match form {
        MatrixForm::Dense => Ok(DenseSystemMatrix::from_masks(masks, psf, sr, DEFAULT_DENSE_CAP)?.into()),
        MatrixForm::BlockDiag => {
            if !psf.is_delta() {
                return Err(Error::invalid("block-diagonal system matrix cannot model relay blur"));
            }
            Ok(BlockDiagSystemMatrix::from_masks(masks, sr)?.into())
        }
    }
}

/// Either matrix form behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemMatrix {
    Dense(DenseSystemMatrix),
    BlockDiag(BlockDiagSystemMatrix),
}

impl From<DenseSystemMatrix> for SystemMatrix {
    fn from(m: DenseSystemMatrix) -> Self {
        SystemMatrix::Dense(m)
    }
}

impl From<BlockDiagSystemMatrix> for SystemMatrix {
    fn from(m: BlockDiagSystemMatrix) -> Self {
        SystemMatrix::BlockDiag(m)
    }
}

impl SystemMatrix {
    /// `factor · C`.
    pub fn scaled(&self, factor: f64) -> SystemMatrix {
        match self {
            SystemMatrix::Dense(d) => {
                let mut d = d.clone();
                d.data.iter_mut().for_each(|v| *v *= factor);
                SystemMatrix::Dense(d)
            }
            SystemMatrix::BlockDiag(b) => {
                let mut b = b.clone();
                b.blocks.iter_mut().for_each(|v| *v *= factor);
                SystemMatrix::BlockDiag(b)
            }
        }
    }

    pub fn form_name(&self) -> &'static str {
        match self {
            SystemMatrix::Dense(_) => "dense",
            SystemMatrix::BlockDiag(_) => "block-diag",
        }
    }

    pub fn hr_shape(&self) -> (usize, usize) {
        match self {
            SystemMatrix::Dense(d) => d.hr_shape,
            SystemMatrix::BlockDiag(b) => b.hr_shape,
        }
    }

    pub fn lr_shape(&self) -> (usize, usize) {
        match self {
            SystemMatrix::Dense(d) => d.lr_shape,
            SystemMatrix::BlockDiag(b) => b.lr_shape,
        }
    }

    pub fn snapshots(&self) -> usize {
        match self {
            SystemMatrix::Dense(d) => d.snapshots,
            SystemMatrix::BlockDiag(b) => b.snapshots,
        }
    }

    pub fn nrows(&self) -> usize {
        let (m1, m2) = self.lr_shape();
        self.snapshots() * m1 * m2
    }

    pub fn ncols(&self) -> usize {
        let (n1, n2) = self.hr_shape();
        n1 * n2
    }

    /// `C x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols() {
            return Err(Error::shape(format!("x has {} entries, C has {} columns", x.len(), self.ncols())));
        }
        Ok(match self {
            SystemMatrix::Dense(d) => d.apply(x),
            SystemMatrix::BlockDiag(b) => b.apply(x),
        })
    }

    /// `C^T y`.
    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.nrows() {
            return Err(Error::shape(format!("y has {} entries, C has {} rows", y.len(), self.nrows())));
        }
        Ok(match self {
            SystemMatrix::Dense(d) => d.apply_adjoint(y),
            SystemMatrix::BlockDiag(b) => b.apply_adjoint(y),
        })
    }

    /// Splits a stacked measurement vector into per-snapshot LR images.
    pub fn unstack(&self, y: &[f64]) -> Result<Vec<Image>> {
        let (m1, m2) = self.lr_shape();
        if y.len() != self.nrows() {
            return Err(Error::shape("stacked measurement length"));
        }
        y.chunks(m1 * m2).map(|c| Image::new(m1, m2, c.to_vec())).collect()
    }
}

/// Stacks per-snapshot LR images into one measurement vector.
pub fn stack(measurements: &[Image]) -> Vec<f64> {
    measurements.iter().flat_map(|m| m.data().iter().copied()).collect()
}

/// Factorised `(I + C^T C)`, per block when `C` is block-diagonal.
#[derive(Debug, Clone)]
pub struct NormalInverse {
    kind: NormalKind,
}

#[derive(Debug, Clone)]
enum NormalKind {
    Dense { n: usize, factor: Vec<f64> },
    Block { s: usize, factors: Vec<f64>, hr_index: Vec<usize> },
}

/// Per-block Gram matrix `B_k^T B_k + ridge * I`.
fn block_gram(blk: &[f64], m: usize, s: usize, ridge: f64) -> Vec<f64> {
    let mut g = vec![0.0; s * s];
    for i in 0..m {
        let row = &blk[i * s..(i + 1) * s];
        for a in 0..s {
            if row[a] == 0.0 {
                continue;
            }
            for b in 0..s {
                g[a * s + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..s {
        g[a * s + a] += ridge;
    }
    g
}

/// Dense Gram matrix `C^T C + ridge * I`.
fn dense_gram(d: &DenseSystemMatrix, ridge: f64) -> Vec<f64> {
    let (rows, n) = (d.nrows(), d.ncols());
    let mut t = vec![0.0; n * rows];
    for r in 0..rows {
        for j in 0..n {
            t[j * rows + r] = d.data[r * n + j];
        }
    }
    let mut g = vec![0.0; n * n];
    g.par_chunks_mut(n).enumerate().for_each(|(a, grow)| {
        let ta = &t[a * rows..(a + 1) * rows];
        for (b, v) in grow.iter_mut().enumerate() {
            *v = crate::linalg::dot(ta, &t[b * rows..(b + 1) * rows]);
        }
        grow[a] += ridge;
    });
    g
}

/// Factorises `I + C^T C`. Block-diagonal matrices yield `M` independent
/// `s x s` Cholesky factors; dense matrices one `N x N` factor.
pub fn precompute_normal_inverse(c: &SystemMatrix) -> Result<NormalInverse> {
    match c {
        SystemMatrix::BlockDiag(b) => {
            let (m, s) = b.block_shape();
            let factors: Vec<Vec<f64>> = (0..b.num_blocks())
                .into_par_iter()
                .map(|k| {
                    let mut g = block_gram(b.block(k), m, s, 1.0);
                    cholesky_in_place(&mut g, s)
                        .map(|_| g)
                        .map_err(|e| Error::numerical(format!("block {k}: {e}")))
                })
                .collect::<Result<_>>()?;
            Ok(NormalInverse {
                kind: NormalKind::Block { s, factors: factors.concat(), hr_index: b.hr_index.clone() },
            })
        }
        SystemMatrix::Dense(d) => {
            let n = d.ncols();
            let mut g = dense_gram(d, 1.0);
            cholesky_in_place(&mut g, n)?;
            Ok(NormalInverse { kind: NormalKind::Dense { n, factor: g } })
        }
    }
}

impl NormalInverse {
    pub fn dim(&self) -> usize {
        match &self.kind {
            NormalKind::Dense { n, .. } => *n,
            NormalKind::Block { hr_index, .. } => hr_index.len(),
        }
    }

    /// `(I + C^T C)^{-1} v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::shape(format!("vector of {} for operator of dim {}", v.len(), self.dim())));
        }
        Ok(match &self.kind {
            NormalKind::Dense { n, factor } => {
                let mut x = v.to_vec();
                cholesky_solve(factor, *n, &mut x);
                x
            }
            NormalKind::Block { s, factors, hr_index } => {
                solve_blocks(*s, factors, hr_index, v)
            }
        })
    }
}

fn solve_blocks(s: usize, factors: &[f64], hr_index: &[usize], v: &[f64]) -> Vec<f64> {
    let local: Vec<f64> = hr_index
        .par_chunks(s)
        .zip(factors.par_chunks(s * s))
        .flat_map_iter(|(idx, l)| {
            let mut b: Vec<f64> = idx.iter().map(|&j| v[j]).collect();
            cholesky_solve(l, s, &mut b);
            b
        })
        .collect();
    let mut out = vec![0.0; v.len()];
    for (&j, x) in hr_index.iter().zip(local) {
        out[j] = x;
    }
    out
}

/// Ridge least squares `argmin ||C x - y||^2 + ridge ||x||^2`, solved per
/// block for block-diagonal `C`. `ridge = 0` is accepted when every block
/// has full column rank.
pub fn least_squares_solve(c: &SystemMatrix, y: &[f64], ridge: f64) -> Result<Image> {
    if !(ridge >= 0.0) {
        return Err(Error::invalid(format!("ridge must be >= 0, got {ridge}")));
    }
    if y.len() != c.nrows() {
        return Err(Error::shape(format!("y has {} entries, expected {}", y.len(), c.nrows())));
    }
    let (n1, n2) = c.hr_shape();
    let x = match c {
        SystemMatrix::BlockDiag(b) => {
            let (m, s) = b.block_shape();
            let nb = b.num_blocks();
            let per_block: Vec<Vec<f64>> = (0..nb)
                .into_par_iter()
                .map(|k| {
                    let blk = b.block(k);
                    let mut g = block_gram(blk, m, s, ridge);
                    cholesky_in_place(&mut g, s)
                        .map_err(|e| Error::numerical(format!("block {k}: {e}")))?;
                    let mut rhs = vec![0.0; s];
                    for i in 0..m {
                        let yi = y[i * nb + k];
                        for l in 0..s {
                            rhs[l] += blk[i * s + l] * yi;
                        }
                    }
                    cholesky_solve(&g, s, &mut rhs);
                    Ok(rhs)
                })
                .collect::<Result<_>>()?;
            let mut x = vec![0.0; n1 * n2];
            for (k, sol) in per_block.iter().enumerate() {
                for (&j, v) in b.block_pixels(k).iter().zip(sol) {
                    x[j] = *v;
                }
            }
            x
        }
        SystemMatrix::Dense(d) => {
            let n = d.ncols();
            let mut g = dense_gram(d, ridge);
            cholesky_in_place(&mut g, n)?;
            let mut rhs = d.apply_adjoint(y);
            cholesky_solve(&g, n, &mut rhs);
            rhs
        }
    };
    Image::new(n1, n2, x)
}
