//! File formats: the `CFPA` tensor container, 16-bit PGM dumps and
//! grayscale scene loading.
//!
//! Container byte layout (all integers little-endian):
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `CFPA` |
//! | 4 | 2 | version (`u16`, currently 1) |
//! | 6 | 1 | dtype (`1` = f64, `2` = u8) |
//! | 7 | 1 | ndim |
//! | 8 | 4·ndim | dims (`u32` each, row-major, outermost first) |
//! | 8 + 4·ndim | product(dims)·size(dtype) | payload |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub const MAGIC: &[u8; 4] = b"CFPA";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl Payload {
    fn code(&self) -> u8 {
        match self {
            Payload::F64(_) => 1,
            Payload::U8(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F64(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Payload as reals (bytes are widened).
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Payload::F64(v) => v.clone(),
            Payload::U8(v) => v.iter().map(|&b| f64::from(b)).collect(),
        }
    }
}

/// An n-dimensional array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    dims: Vec<usize>,
    payload: Payload,
}

impl Container {
    pub fn new(dims: Vec<usize>, payload: Payload) -> Result<Self> {
        if dims.is_empty() || dims.len() > u8::MAX as usize {
            return Err(Error::invalid(format!("container ndim must be 1..=255, got {}", dims.len())));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::invalid("container dimension exceeds u32"));
        }
        let n: usize = dims.iter().product();
        if n != payload.len() {
            return Err(Error::shape(format!("dims {dims:?} hold {n} values, payload has {}", payload.len())));
        }
        Ok(Self { dims, payload })
    }

    pub fn from_image(img: &Image) -> Self {
        Self { dims: vec![img.height(), img.width()], payload: Payload::F64(img.data().to_vec()) }
    }

    /// Stacks equally sized images into a `count × height × width` array.
    pub fn from_images(images: &[Image]) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::invalid("cannot store an empty image stack"))?;
        let mut data = Vec::with_capacity(images.len() * first.len());
        for img in images {
            first.check_same_shape(img)?;
            data.extend_from_slice(img.data());
        }
        Self::new(vec![images.len(), first.height(), first.width()], Payload::F64(data))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn into_payload(self) -> Payload {
        self.payload
    }

    /// Interprets a 2D container as one image.
    pub fn to_image(&self) -> Result<Image> {
        match self.dims[..] {
            [h, w] => Image::new(h, w, self.payload.to_f64()),
            _ => Err(Error::shape(format!("expected a 2D array, found dims {:?}", self.dims))),
        }
    }

    /// Interprets a 2D or 3D container as an image stack.
    pub fn to_images(&self) -> Result<Vec<Image>> {
        match self.dims[..] {
            [_, _] => Ok(vec![self.to_image()?]),
            [n, h, w] => {
                let data = self.payload.to_f64();
                data.chunks(h * w).take(n).map(|c| Image::new(h, w, c.to_vec())).collect()
            }
            _ => Err(Error::shape(format!("expected a 2D or 3D array, found dims {:?}", self.dims))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let elem = match self.payload {
            Payload::F64(_) => 8,
            Payload::U8(_) => 1,
        };
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + elem * self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.payload.code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.payload {
            Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    /// Parses container bytes; `origin` only labels errors.
    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format { path: origin.to_path_buf(), reason };
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("missing CFPA magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let (dtype, ndim) = (bytes[6], bytes[7] as usize);
        if ndim == 0 {
            return Err(bad("zero dimensions".into()));
        }
        let header = 8 + 4 * ndim;
        if bytes.len() < header {
            return Err(bad("truncated header".into()));
        }
        let dims: Vec<usize> = bytes[8..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("dims overflow".into()))?;
        let body = &bytes[header..];
        let payload = match dtype {
            1 => {
                if body.len() != n * 8 {
                    return Err(bad(format!("payload holds {} bytes, dims need {}", body.len(), n * 8)));
                }
                Payload::F64(
                    body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
                )
            }
            2 => {
                if body.len() != n {
                    return Err(bad(format!("payload holds {} bytes, dims need {n}", body.len())));
                }
                Payload::U8(body.to_vec())
            }
            other => return Err(bad(format!("unknown dtype code {other}"))),
        };
        Self::new(dims, payload).map_err(|e| bad(e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path.as_ref(), &self.encode())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&read_bytes(path)?, path)
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes a file, creating missing parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

/// Binary 16-bit PGM of `img` with `[0, 1]` mapped to `[0, 65535]`.
pub fn encode_pgm16(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn write_pgm16(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pgm16(img))
}

/// Loads any supported raster file as grayscale intensities in `[0, 1]`.
pub fn load_grayscale(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let decoded = ::image::open(path)
        .map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })?
        .into_luma16();
    let (w, h) = decoded.dimensions();
    Image::new(h as usize, w as usize, decoded.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect())
}
