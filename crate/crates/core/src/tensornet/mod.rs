//! Minimal differentiable layers for the calibration network.
//!
//! There is no autodiff graph: every layer caches what its own backward pass
//! needs during a recording forward pass, and the owning network calls the
//! backward passes in reverse order. Inference goes through `infer`, which
//! takes `&self` and records nothing, so frozen networks can be shared
//! across threads.
//!
//! Batch work is split per sample with rayon; parameter gradients are
//! reduced in sample order so results are bit-identical across runs and
//! thread counts.

mod adam;
pub mod gradcheck;
mod layers;
mod ops;

pub use adam::{Adam, AdamConfig};
pub use layers::{BatchNorm2d, Conv2d, ConvBnLrelu, Layer, LeakyRelu, Linear, Softplus};
pub use ops::{
    channel_div, channel_div_backward, concat_channels, l1_loss, pixel_shuffle, pixel_unshuffle,
    split_channels,
};

use crate::error::{Error, Result};
use crate::image::Image;

/// Dense `B x C x H x W` tensor, row-major with `W` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(b: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if b == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("tensor dims must be >= 1, got {b}x{c}x{h}x{w}")));
        }
        if data.len() != b * c * h * w {
            return Err(Error::shape(format!("{} values for a {b}x{c}x{h}x{w} tensor", data.len())));
        }
        Ok(Self { b, c, h, w, data })
    }

    pub fn zeros(b: usize, c: usize, h: usize, w: usize) -> Self {
        Self::new(b, c, h, w, vec![0.0; b * c * h * w]).expect("positive dims")
    }

    /// Stacks single-channel images into a `B x 1 x H x W` tensor.
    pub fn from_images(images: &[&Image]) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::shape("empty image batch"))?;
        let (h, w) = first.shape();
        let mut data = Vec::with_capacity(images.len() * h * w);
        for im in images {
            first.check_same_shape(im)?;
            data.extend_from_slice(im.data());
        }
        Self::new(images.len(), 1, h, w, data)
    }

    /// Splits a single-channel tensor back into images.
    pub fn to_images(&self) -> Result<Vec<Image>> {
        if self.c != 1 {
            return Err(Error::shape(format!("expected 1 channel, got {}", self.c)));
        }
        self.data.chunks(self.h * self.w).map(|c| Image::new(self.h, self.w, c.to_vec())).collect()
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        [self.b, self.c, self.h, self.w]
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.b
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((b * self.c + c) * self.h + y) * self.w + x]
    }

    pub fn same_dims(&self, other: &Tensor4) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        Ok(())
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        self.same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Tensor4::new(self.b, self.c, self.h, self.w, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Tensor4 { b: self.b, c: self.c, h: self.h, w: self.w, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Learnable tensor with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(shape: Vec<usize>, value: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Self { shape, value, grad }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Training records activations for backward; evaluation uses running
/// batch-norm statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
