use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::noise_sigma_for_psnr;
use super::scenes::{list_scene_files, random_crop, synthetic_scene};
use crate::aperture::{generate_aperture, shift_mask, ShiftMode};
use crate::calib::{radius_bin, CalibSample, RadiusBin, RADIUS_MAX, RADIUS_MIN};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{self, Container};
use crate::optics::{add_gaussian_noise, blurred_measure, ideal_measure, Psf, SrFactor, DEFAULT_PSF_SIZE};
use crate::seeds;

/// Parameters of the simulated acquisition and of dataset synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Directory of grayscale images; procedural scenes when absent.
    pub scene_dir: Option<PathBuf>,
    pub crop: usize,
    pub test_crop: usize,
    pub s1: usize,
    pub s2: usize,
    pub open_ratio: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub snapshots: usize,
    pub input_psnr: f64,
    pub psf_size: usize,
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            scene_dir: None,
            crop: 60,
            test_crop: 60,
            s1: 5,
            s2: 5,
            open_ratio: 0.8,
            radius_min: 4.5,
            radius_max: 5.5,
            snapshots: 5,
            input_psnr: 60.0,
            psf_size: DEFAULT_PSF_SIZE,
            seed: 0,
            train: 64,
            val: 16,
            test: 16,
        }
    }
}

impl SimulationConfig {
    /// Full-size protocol: 180-pixel training crops, 360-pixel test crops,
    /// every radius bin and 5513/200/199 samples.
    pub fn full_scale() -> Self {
        Self {
            crop: 180,
            test_crop: 360,
            radius_min: RADIUS_MIN,
            radius_max: RADIUS_MAX,
            train: 5513,
            val: 200,
            test: 199,
            ..Self::default()
        }
    }

    pub fn sr(&self) -> Result<SrFactor> {
        SrFactor::new(self.s1, self.s2)
    }

    pub fn validate(&self) -> Result<()> {
        let sr = self.sr()?;
        for crop in [self.crop, self.test_crop] {
            if crop == 0 {
                return Err(Error::invalid("crop size must be >= 1"));
            }
            sr.lr_shape((crop, crop))?;
        }
        if !(RADIUS_MIN <= self.radius_min && self.radius_min < self.radius_max && self.radius_max <= RADIUS_MAX) {
            return Err(Error::invalid(format!(
                "radius range [{}, {}) must lie within [{RADIUS_MIN}, {RADIUS_MAX})",
                self.radius_min, self.radius_max
            )));
        }
        if self.snapshots == 0 {
            return Err(Error::invalid("snapshot count must be >= 1"));
        }
        if self.psf_size < 3 || self.psf_size % 2 == 0 {
            return Err(Error::invalid(format!("PSF size must be odd and >= 3, got {}", self.psf_size)));
        }
        if self.input_psnr.is_nan() {
            return Err(Error::invalid("input pSNR is NaN"));
        }
        crate::aperture::open_count(self.open_ratio, sr)?;
        Ok(())
    }

    /// Noise level for a noiseless stack under this configuration.
    pub fn noise_sigma(&self, clean: &[Image]) -> Result<f64> {
        if self.input_psnr.is_infinite() {
            return Ok(0.0);
        }
        noise_sigma_for_psnr(clean, self.input_psnr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Provenance of one generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub id: String,
    pub seed: u64,
    pub radius: f64,
    pub bin: RadiusBin,
    pub aperture_seed: u64,
    /// Integer circular mask shift `(dx, dy)`.
    pub shift: (usize, usize),
    pub noise_sigma: f64,
    pub scene: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitData {
    pub samples: Vec<CalibSample>,
    pub scenes: Vec<Image>,
    pub meta: Vec<SampleMeta>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SimulationConfig,
    pub splits: BTreeMap<Split, SplitData>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &SplitData {
        &self.splits[&s]
    }
}

/// Where a sample's scene comes from.
#[derive(Debug, Clone)]
enum SceneSlot {
    Synthetic,
    File(PathBuf),
}

/// Blurred noisy measurement and its target for one scene and radius.
pub struct SimulatedSnapshot {
    pub measurement: Image,
    pub target: Image,
    pub noise_sigma: f64,
}

/// Simulates one snapshot of `scene` under `mask` with an Airy PSF of
/// radius `radius`, at the configured input pSNR.
pub fn simulate_snapshot(
    cfg: &SimulationConfig,
    scene: &Image,
    mask: &Image,
    radius: f64,
    noise_seed: u64,
) -> Result<SimulatedSnapshot> {
    let sr = cfg.sr()?;
    let psf = Psf::airy(radius, cfg.psf_size)?;
    let clean = blurred_measure(scene, mask, &psf, sr)?;
    let noise_sigma = cfg.noise_sigma(std::slice::from_ref(&clean))?;
    Ok(SimulatedSnapshot {
        measurement: add_gaussian_noise(&clean, noise_sigma, noise_seed)?,
        target: ideal_measure(scene, mask, sr)?,
        noise_sigma,
    })
}

fn generate_one(cfg: &SimulationConfig, split: Split, index: usize, slot: &SceneSlot, seed: u64) -> Result<(CalibSample, Image, SampleMeta)> {
    let sr = cfg.sr()?;
    let crop = if split == Split::Test { cfg.test_crop } else { cfg.crop };
    let mut rng = seeds::rng(seed);
    let (scene, scene_name) = match slot {
        SceneSlot::Synthetic => (synthetic_scene(crop, crop, seeds::derive(seed, 1)), format!("synthetic:{seed}")),
        SceneSlot::File(p) => (random_crop(p, crop, seeds::derive(seed, 1))?, p.display().to_string()),
    };
    let radius = rng.random_range(cfg.radius_min..cfg.radius_max);
    let aperture_seed = seeds::derive(seed, 2);
    let aperture = generate_aperture(crop, crop, sr, cfg.open_ratio, aperture_seed)?;
    let shift = (rng.random_range(0..sr.s2), rng.random_range(0..sr.s1));
    let mask = shift_mask(&aperture, shift.0 as f64, shift.1 as f64, ShiftMode::Integer)?;
    let snap = simulate_snapshot(cfg, &scene, &mask, radius, seeds::derive(seed, 3))?;
    let bin = radius_bin(radius)?;
    let meta = SampleMeta {
        id: format!("{}-{index:05}", split.name()),
        seed,
        radius,
        bin,
        aperture_seed,
        shift,
        noise_sigma: snap.noise_sigma,
        scene: scene_name,
    };
    Ok((CalibSample { mask, measurement: snap.measurement, bin, target: snap.target }, scene, meta))
}

/// Synthesizes train/val/test splits; identical configs give identical data.
///
/// With a scene directory, files are partitioned between the splits in
/// sorted order so that no scene is shared across splits.
pub fn gen_dataset(cfg: &SimulationConfig) -> Result<Dataset> {
    cfg.validate()?;
    let sizes = [(Split::Train, cfg.train), (Split::Val, cfg.val), (Split::Test, cfg.test)];
    let slots: BTreeMap<Split, Vec<SceneSlot>> = match &cfg.scene_dir {
        None => sizes.iter().map(|&(s, _)| (s, vec![SceneSlot::Synthetic])).collect(),
        Some(dir) => partition_files(&list_scene_files(dir)?, &sizes, dir)?,
    };
    let mut splits = BTreeMap::new();
    for (k, &(split, n)) in sizes.iter().enumerate() {
        let split_seed = seeds::derive(cfg.seed, k as u64 + 1);
        let pool = &slots[&split];
        let rows: Vec<_> = (0..n)
            .into_par_iter()
            .map(|i| generate_one(cfg, split, i, &pool[i % pool.len()], seeds::derive(split_seed, i as u64)))
            .collect::<Result<_>>()?;
        let mut data = SplitData::default();
        for (sample, scene, meta) in rows {
            data.samples.push(sample);
            data.scenes.push(scene);
            data.meta.push(meta);
        }
        splits.insert(split, data);
    }
    Ok(Dataset { config: cfg.clone(), splits })
}

fn partition_files(files: &[PathBuf], sizes: &[(Split, usize)], dir: &Path) -> Result<BTreeMap<Split, Vec<SceneSlot>>> {
    let wanted: Vec<(Split, usize)> = sizes.iter().copied().filter(|&(_, n)| n > 0).collect();
    if files.len() < wanted.len() {
        return Err(Error::invalid(format!(
            "{} holds {} images; need at least one per non-empty split ({})",
            dir.display(),
            files.len(),
            wanted.len()
        )));
    }
    let total: usize = wanted.iter().map(|&(_, n)| n).sum();
    let mut out: BTreeMap<Split, Vec<SceneSlot>> = sizes.iter().map(|&(s, _)| (s, vec![SceneSlot::Synthetic])).collect();
    let mut start = 0;
    for (k, &(split, n)) in wanted.iter().enumerate() {
        let remaining_splits = wanted.len() - k - 1;
        let share = if remaining_splits == 0 {
            files.len() - start
        } else {
            ((files.len() * n) / total).clamp(1, files.len() - start - remaining_splits)
        };
        out.insert(split, files[start..start + share].iter().cloned().map(SceneSlot::File).collect());
        start += share;
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    config: SimulationConfig,
    samples: BTreeMap<Split, Vec<SampleMeta>>,
}

const DATASET_MANIFEST: &str = "manifest.toml";

impl Dataset {
    /// Writes `manifest.toml` plus one container per split and field.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let manifest = DatasetManifest {
            config: self.config.clone(),
            samples: self.splits.iter().map(|(s, d)| (*s, d.meta.clone())).collect(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::invalid(format!("manifest encoding: {e}")))?;
        io::write_text(&dir.join(DATASET_MANIFEST), &text)?;
        for (split, data) in &self.splits {
            if data.is_empty() {
                continue;
            }
            let sub = dir.join(split.name());
            let field = |f: fn(&CalibSample) -> &Image| data.samples.iter().map(f).cloned().collect::<Vec<_>>();
            Container::from_images(&data.scenes)?.write(sub.join("scenes.cfpa"))?;
            Container::from_images(&field(|s| &s.mask))?.write(sub.join("masks.cfpa"))?;
            Container::from_images(&field(|s| &s.measurement))?.write(sub.join("measurements.cfpa"))?;
            Container::from_images(&field(|s| &s.target))?.write(sub.join("targets.cfpa"))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(DATASET_MANIFEST);
        let manifest: DatasetManifest = toml::from_str(&io::read_text(&path)?)
            .map_err(|e| Error::Format { path: path.clone(), reason: e.to_string() })?;
        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            let meta = manifest.samples.get(&split).cloned().unwrap_or_default();
            if meta.is_empty() {
                splits.insert(split, SplitData::default());
                continue;
            }
            let sub = dir.join(split.name());
            let read = |name: &str| Container::read(sub.join(name))?.to_images();
            let (scenes, masks, ys, targets) =
                (read("scenes.cfpa")?, read("masks.cfpa")?, read("measurements.cfpa")?, read("targets.cfpa")?);
            if [scenes.len(), masks.len(), ys.len(), targets.len()].iter().any(|&n| n != meta.len()) {
                return Err(Error::Format { path: sub, reason: "sample counts disagree with manifest".into() });
            }
            let samples = masks
                .into_iter()
                .zip(ys)
                .zip(targets)
                .zip(&meta)
                .map(|(((mask, measurement), target), m)| CalibSample { mask, measurement, bin: m.bin, target })
                .collect();
            splits.insert(split, SplitData { samples, scenes, meta });
        }
        Ok(Self { config: manifest.config, splits })
    }
}
