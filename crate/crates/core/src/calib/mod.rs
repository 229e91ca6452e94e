//! Online calibration of blurred measurements.
//!
//! [`CalibNet`] maps a blurred snapshot, its shifted mask and the radius bin
//! to an estimate of the blur-free measurement. [`lucy_richardson`] and the
//! identity ("raw") are the classical alternatives; [`correct_measurements`]
//! dispatches between the three.

mod lucy;
mod net;
mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use lucy::{lucy_richardson, Boundary, DEFAULT_LUCY_ITERS};
pub use net::{CalibInputs, CalibNet, CalibNetConfig, Variant, LATENT_FLOOR};
pub use train::{mean_l1, train_calib, EpochLog, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{self, Container, Payload};
use crate::optics::{Psf, SrFactor};
use crate::tensornet::Tensor4;

pub const NUM_BINS: usize = 9;
pub const RADIUS_MIN: f64 = 1.5;
pub const RADIUS_MAX: f64 = 10.5;

/// One of the nine unit-width Airy radius intervals `[1.5 + k, 2.5 + k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RadiusBin(usize);

impl RadiusBin {
    pub fn new(index: usize) -> Result<Self> {
        if index < NUM_BINS {
            Ok(Self(index))
        } else {
            Err(Error::invalid(format!("radius bin {index} out of range 0..{NUM_BINS}")))
        }
    }

    pub fn index(self) -> usize {
        self.0
    }

    /// Half-open interval `[lo, hi)` covered by the bin.
    pub fn interval(self) -> (f64, f64) {
        let lo = RADIUS_MIN + self.0 as f64;
        (lo, lo + 1.0)
    }

    pub fn center(self) -> f64 {
        RADIUS_MIN + 0.5 + self.0 as f64
    }

    pub fn one_hot(self) -> [f64; NUM_BINS] {
        let mut v = [0.0; NUM_BINS];
        v[self.0] = 1.0;
        v
    }

    /// The bin `delta` steps away, if it exists.
    pub fn offset(self, delta: isize) -> Option<Self> {
        self.0.checked_add_signed(delta).filter(|&i| i < NUM_BINS).map(Self)
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (0..NUM_BINS).map(Self)
    }
}

impl fmt::Display for RadiusBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (lo, hi) = self.interval();
        write!(f, "{lo}-{hi}")
    }
}

/// Bin containing radius `r`; edges belong to the upper bin.
pub fn radius_bin(r: f64) -> Result<RadiusBin> {
    if !(RADIUS_MIN..RADIUS_MAX).contains(&r) {
        return Err(Error::invalid(format!("radius {r} outside [{RADIUS_MIN}, {RADIUS_MAX})")));
    }
    Ok(RadiusBin(((r - RADIUS_MIN).floor() as usize).min(NUM_BINS - 1)))
}

/// One training or evaluation example for the calibration network.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibSample {
    /// Shifted HR aperture mask of the snapshot.
    pub mask: Image,
    /// Blurred, noisy LR measurement.
    pub measurement: Image,
    pub bin: RadiusBin,
    /// Blur-free LR measurement.
    pub target: Image,
}

impl CalibSample {
    pub fn check(&self, sr: SrFactor) -> Result<()> {
        self.measurement.check_same_shape(&self.target)?;
        if sr.lr_shape(self.mask.shape())? != self.measurement.shape() {
            return Err(Error::shape(format!(
                "mask {:?} does not downsample to measurement {:?}",
                self.mask.shape(),
                self.measurement.shape()
            )));
        }
        Ok(())
    }
}

pub fn one_hot_batch(bins: &[RadiusBin]) -> Tensor4 {
    let data = bins.iter().flat_map(|b| b.one_hot()).collect();
    Tensor4::new(bins.len(), NUM_BINS, 1, 1, data).expect("consistent one-hot dims")
}

/// Network inputs and targets for a batch of samples.
pub fn batch_inputs(samples: &[&CalibSample]) -> Result<(CalibInputs, Tensor4)> {
    let masks: Vec<&Image> = samples.iter().map(|s| &s.mask).collect();
    let ys: Vec<&Image> = samples.iter().map(|s| &s.measurement).collect();
    let targets: Vec<&Image> = samples.iter().map(|s| &s.target).collect();
    let bins: Vec<RadiusBin> = samples.iter().map(|s| s.bin).collect();
    Ok((
        CalibInputs {
            masks: Tensor4::from_images(&masks)?,
            measurements: Tensor4::from_images(&ys)?,
            bins: one_hot_batch(&bins),
        },
        Tensor4::from_images(&targets)?,
    ))
}

const CHECKPOINT_FORMAT: &str = "calibfpa-checkpoint-1";
const MANIFEST_FILE: &str = "manifest.toml";
const WEIGHTS_FILE: &str = "weights.cfpa";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    format: String,
    sr: SrFactor,
    network: CalibNetConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl CalibNet {
    /// Writes `manifest.toml` and `weights.cfpa` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut net = self.clone();
        let mut tensors = Vec::new();
        let mut flat = Vec::new();
        for (name, p) in net.state_mut() {
            tensors.push(TensorEntry { name, shape: p.shape.clone() });
            flat.extend_from_slice(&p.value);
        }
        let manifest =
            CheckpointManifest { format: CHECKPOINT_FORMAT.into(), sr: self.sr(), network: self.config().clone(), tensors };
        let text = toml::to_string(&manifest).map_err(|e| Error::invalid(format!("manifest encoding: {e}")))?;
        io::write_text(&dir.join(MANIFEST_FILE), &text)?;
        Container::new(vec![flat.len()], Payload::F64(flat))?.write(dir.join(WEIGHTS_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_FILE);
        let bad = |reason: String| Error::Format { path: manifest_path.clone(), reason };
        let manifest: CheckpointManifest =
            toml::from_str(&io::read_text(&manifest_path)?).map_err(|e| bad(e.to_string()))?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unknown checkpoint format {:?}", manifest.format)));
        }
        let weights_path = dir.join(WEIGHTS_FILE);
        let flat = match Container::read(&weights_path)?.into_payload() {
            Payload::F64(v) => v,
            Payload::U8(_) => {
                return Err(Error::Format { path: weights_path, reason: "weights must be f64".into() })
            }
        };
        let mut net = CalibNet::new(manifest.network, manifest.sr, 0)?;
        let mut state = net.state_mut();
        if state.len() != manifest.tensors.len() {
            return Err(bad(format!("{} tensors listed, network has {}", manifest.tensors.len(), state.len())));
        }
        let mut offset = 0;
        for ((name, p), entry) in state.iter_mut().zip(&manifest.tensors) {
            if *name != entry.name || p.shape != entry.shape {
                return Err(bad(format!("tensor {} {:?} does not match {} {:?}", entry.name, entry.shape, name, p.shape)));
            }
            let n = p.value.len();
            let chunk = flat.get(offset..offset + n).ok_or_else(|| bad("weights file too short".into()))?;
            p.value.copy_from_slice(chunk);
            offset += n;
        }
        if offset != flat.len() {
            return Err(bad("weights file too long".into()));
        }
        drop(state);
        Ok(net)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionMethod {
    #[default]
    Raw,
    Lucy,
    Calibfpa,
}

impl fmt::Display for CorrectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrectionMethod::Raw => "raw",
            CorrectionMethod::Lucy => "lucy",
            CorrectionMethod::Calibfpa => "calibfpa",
        })
    }
}

impl FromStr for CorrectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "lucy" => Ok(Self::Lucy),
            "calibfpa" => Ok(Self::Calibfpa),
            other => Err(Error::invalid(format!("unknown correction method {other:?} (raw|lucy|calibfpa)"))),
        }
    }
}

/// Inputs a correction method may need beyond the measurements.
#[derive(Debug, Clone, Copy, Default)]
pub struct CorrectionContext<'a> {
    /// LR-domain PSF for Richardson–Lucy.
    pub lr_psf: Option<&'a Psf>,
    pub lucy_iters: Option<usize>,
    pub net: Option<&'a CalibNet>,
    /// Shifted HR mask of every snapshot, for the network.
    pub masks: Option<&'a [Image]>,
    pub bin: Option<RadiusBin>,
}

/// Corrects every snapshot independently, preserving order.
pub fn correct_measurements(
    method: CorrectionMethod,
    measurements: &[Image],
    ctx: &CorrectionContext<'_>,
) -> Result<Vec<Image>> {
    match method {
        CorrectionMethod::Raw => Ok(measurements.to_vec()),
        CorrectionMethod::Lucy => {
            let psf = ctx.lr_psf.ok_or_else(|| Error::invalid("lucy correction needs an LR PSF"))?;
            let iters = ctx.lucy_iters.unwrap_or(DEFAULT_LUCY_ITERS);
            measurements.par_iter().map(|y| lucy_richardson(y, psf, iters, Boundary::Zero)).collect()
        }
        CorrectionMethod::Calibfpa => {
            let net = ctx.net.ok_or_else(|| Error::invalid("calibfpa correction needs a trained network"))?;
            let masks = ctx.masks.ok_or_else(|| Error::invalid("calibfpa correction needs the snapshot masks"))?;
            let bin = ctx.bin.ok_or_else(|| Error::invalid("calibfpa correction needs a radius bin"))?;
            if masks.len() != measurements.len() {
                return Err(Error::shape(format!(
                    "{} masks for {} measurements",
                    masks.len(),
                    measurements.len()
                )));
            }
            if measurements.is_empty() {
                return Ok(Vec::new());
            }
            let inputs = CalibInputs {
                masks: Tensor4::from_images(&masks.iter().collect::<Vec<_>>())?,
                measurements: Tensor4::from_images(&measurements.iter().collect::<Vec<_>>())?,
                bins: one_hot_batch(&vec![bin; measurements.len()]),
            };
            net.infer(&inputs)?.to_images()
        }
    }
}
