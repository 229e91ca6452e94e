use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::SimulationConfig;
use super::experiments::ExperimentGrid;
use crate::aperture::{generate_aperture, open_count, CodedAperture, MarkerSpec};
use crate::calib::{radius_bin, CalibNetConfig, CorrectionMethod, TrainConfig, DEFAULT_LUCY_ITERS, RADIUS_MAX, RADIUS_MIN};
use crate::error::{Error, Result};
use crate::io;
use crate::optics::SrFactor;
use crate::recon::ReconConfig;

/// Every tunable of a run. Missing sections take their defaults; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub simulation: SimulationConfig,
    pub network: CalibNetConfig,
    pub training: TrainConfig,
    pub recon: ReconConfig,
    pub lucy: LucyConfig,
    pub experiments: ExperimentGrid,
    pub aperture: ApertureConfig,
    pub acquisition: AcquisitionConfig,
    pub calibration: CalibrationConfig,
}

/// A standalone printed aperture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApertureConfig {
    /// Square HR side length.
    pub size: usize,
    /// Square block side, so `s = block²`.
    pub block: usize,
    pub open_ratio: f64,
    /// Corner marker size in LR pixels; 0 disables markers.
    pub markers: usize,
    pub seed: u64,
}

impl Default for ApertureConfig {
    fn default() -> Self {
        Self { size: 60, block: 5, open_ratio: 0.8, markers: 0, seed: 0 }
    }
}

impl ApertureConfig {
    pub fn sr(&self) -> Result<SrFactor> {
        SrFactor::square(self.block)
    }

    pub fn build(&self) -> Result<CodedAperture> {
        let ap = generate_aperture(self.size, self.size, self.sr()?, self.open_ratio, self.seed)?;
        match self.markers {
            0 => Ok(ap),
            lr_size => ap.apply_markers(MarkerSpec { lr_size }),
        }
    }
}

/// One simulated multi-snapshot acquisition of a single scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    /// Grayscale image to crop; procedural scene when absent.
    pub scene: Option<PathBuf>,
    pub radius: f64,
    pub snapshots: usize,
    /// Peak SNR of the measurement stack; `inf` for noiseless.
    pub input_psnr: f64,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self { scene: None, radius: 5.0, snapshots: 5, input_psnr: 60.0, seed: 0 }
    }
}

/// Measurement correction applied before reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub method: CorrectionMethod,
    /// Radius override; the acquisition's recorded radius otherwise.
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LucyConfig {
    pub iters: usize,
}

impl Default for LucyConfig {
    fn default() -> Self {
        Self { iters: DEFAULT_LUCY_ITERS }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            simulation: SimulationConfig::default(),
            network: CalibNetConfig::default(),
            training: TrainConfig::default(),
            recon: ReconConfig::default(),
            lucy: LucyConfig::default(),
            experiments: ExperimentGrid::default(),
            aperture: ApertureConfig::default(),
            acquisition: AcquisitionConfig::default(),
            calibration: CalibrationConfig::default(),
        }
    }
}

/// File name of the fully resolved configuration written next to outputs.
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&io::read_text(path.as_ref())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_text(path.as_ref(), &self.to_toml()?)
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        self.network.validate(self.simulation.sr()?)?;
        self.recon.ppfpa.stopping_rule().validate()?;
        self.experiments.validate()?;
        self.aperture.sr()?.lr_shape((self.aperture.size, self.aperture.size))?;
        open_count(self.aperture.open_ratio, self.aperture.sr()?)?;
        let acq = &self.acquisition;
        if acq.snapshots == 0 || acq.input_psnr.is_nan() || !(RADIUS_MIN..RADIUS_MAX).contains(&acq.radius) {
            return Err(Error::invalid(format!(
                "acquisition needs snapshots >= 1, a pSNR and a radius in [{RADIUS_MIN}, {RADIUS_MAX})"
            )));
        }
        if let Some(r) = self.calibration.radius {
            radius_bin(r)?;
        }
        if self.lucy.iters == 0 {
            return Err(Error::invalid("lucy iterations must be >= 1"));
        }
        if !(self.recon.ridge >= 0.0) {
            return Err(Error::invalid(format!("ridge must be >= 0, got {}", self.recon.ridge)));
        }
        Ok(())
    }
}
