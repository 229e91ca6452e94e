//! Dataset synthesis, quality metrics and the evaluation harness.

mod config;
mod dataset;
mod experiments;
mod metrics;
mod scenes;

pub use config::{AcquisitionConfig, ApertureConfig, CalibrationConfig, LucyConfig, RunConfig, RESOLVED_CONFIG};
pub use dataset::{gen_dataset, simulate_snapshot, Dataset, SampleMeta, SimulatedSnapshot, SimulationConfig, Split, SplitData};
pub use experiments::{
    acquire, cell_seed, format_table, run_matrix_of_experiments, simulate_stack, write_table, EvalRecord, ExperimentEnv, ExperimentGrid, SnapshotStack, Stage,
    TABLE_HEADER,
};
pub use metrics::{noise_sigma_for_psnr, psnr, psnr_stack, ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use scenes::{list_scene_files, random_crop, synthetic_scene};
