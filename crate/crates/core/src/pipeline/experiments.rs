use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::SimulationConfig;
use super::metrics::{noise_sigma_for_psnr, psnr, psnr_stack, ssim, SSIM_WINDOW};
use super::scenes::synthetic_scene;
use crate::aperture::{generate_aperture, CodedAperture, SnapshotSchedule};
use crate::calib::{correct_measurements, CalibNet, CorrectionContext, CorrectionMethod, RadiusBin};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io;
use crate::optics::{add_gaussian_noise, blurred_measure, ideal_measure, Psf};
use crate::recon::{reconstruct, ReconConfig};
use crate::seeds;
use crate::sysmat::{stack, BlockDiagSystemMatrix, SystemMatrix};

/// Axes of an evaluation sweep. Every combination of bin, snapshot count
/// and input pSNR is a cell; each cell is evaluated on `samples` scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentGrid {
    pub methods: Vec<CorrectionMethod>,
    pub bins: Vec<RadiusBin>,
    pub snapshots: Vec<usize>,
    pub input_psnrs: Vec<f64>,
    /// Offsets of the bin handed to the network relative to the true bin.
    pub bin_offsets: Vec<isize>,
    pub samples: usize,
    /// Also reconstruct the HR image from each corrected stack.
    pub reconstruct: bool,
    pub seed: u64,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            methods: vec![CorrectionMethod::Raw, CorrectionMethod::Lucy, CorrectionMethod::Calibfpa],
            bins: vec![RadiusBin::new(3).expect("bin 3 exists")],
            snapshots: vec![5],
            input_psnrs: vec![60.0],
            bin_offsets: vec![0],
            samples: 4,
            reconstruct: true,
            seed: 0,
        }
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.snapshots.contains(&0) {
            return Err(Error::invalid("snapshot counts must be >= 1"));
        }
        if self.input_psnrs.iter().any(|p| p.is_nan()) {
            return Err(Error::invalid("input pSNR is NaN"));
        }
        if self.bin_offsets.is_empty() {
            return Err(Error::invalid("need at least one bin offset (use 0 for the matched bin)"));
        }
        Ok(())
    }
}

/// Shared inputs of a sweep: acquisition geometry, optional trained network
/// and solver settings.
#[derive(Clone, Copy)]
pub struct ExperimentEnv<'a> {
    pub sim: &'a SimulationConfig,
    pub net: Option<&'a CalibNet>,
    pub lucy_iters: usize,
    pub recon: &'a ReconConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Corrected LR stack against the blur-free measurements.
    Measurement,
    /// Reconstructed HR image against the scene.
    Reconstruction,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Measurement => "measurement",
            Stage::Reconstruction => "reconstruction",
        }
    }
}

/// One row of the results table, averaged over the cell's samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: CorrectionMethod,
    pub stage: Stage,
    pub bin: RadiusBin,
    /// Bin given to the network; `None` for methods without one.
    pub assumed_bin: Option<RadiusBin>,
    pub snapshots: usize,
    pub input_psnr: f64,
    pub psnr_db: f64,
    /// Percent; `None` when the image is smaller than the SSIM window.
    pub ssim_pct: Option<f64>,
    /// Mean per-sample correction (plus reconstruction) time.
    pub wall_time_s: f64,
    pub samples: usize,
    /// Set when the cell was not evaluated.
    pub skipped: Option<String>,
}

pub const TABLE_HEADER: &str =
    "method\tstage\tbin\tassumed_bin\tsnapshots\tinput_psnr\tpsnr_db\tssim_pct\twall_time_s\tsamples\tnote";

impl EvalRecord {
    pub fn to_row(&self) -> String {
        let num = |v: f64| if v.is_finite() { format!("{v:.4}") } else { format!("{v}") };
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{}",
            self.method,
            self.stage.name(),
            self.bin.index(),
            self.assumed_bin.map_or("-".to_string(), |b| b.index().to_string()),
            self.snapshots,
            num(self.input_psnr),
            num(self.psnr_db),
            self.ssim_pct.map_or("-".to_string(), num),
            self.wall_time_s,
            self.samples,
            self.skipped.as_deref().unwrap_or("-"),
        )
    }
}

/// Header plus one line per record.
pub fn format_table(records: &[EvalRecord]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.to_row());
    }
    out
}

pub fn write_table(path: impl AsRef<Path>, records: &[EvalRecord]) -> Result<()> {
    io::write_text(path.as_ref(), &format_table(records))
}

/// A simulated multi-snapshot acquisition of one scene.
#[derive(Debug, Clone)]
pub struct SnapshotStack {
    pub scene: Image,
    pub masks: Vec<Image>,
    pub measurements: Vec<Image>,
    pub ideal: Vec<Image>,
    pub radius: f64,
    pub noise_sigma: f64,
}

impl SnapshotStack {
    pub fn system_matrix(&self, sim: &SimulationConfig) -> Result<SystemMatrix> {
        Ok(BlockDiagSystemMatrix::from_masks(&self.masks, sim.sr()?)?.into())
    }
}

/// Seed of sample `sample` in the `snapshot_index`-th snapshot-count column
/// of a sweep seeded with `grid_seed`.
pub fn cell_seed(grid_seed: u64, snapshot_index: usize, sample: usize) -> u64 {
    seeds::derive(seeds::derive(grid_seed, snapshot_index as u64), sample as u64)
}

/// Acquires `m` raster-shifted snapshots of `scene` through `aperture` with
/// an Airy blur of radius `radius`; snapshot `i` draws its noise from
/// `derive(seed, 4 + i)`.
pub fn acquire(
    scene: &Image,
    aperture: &CodedAperture,
    m: usize,
    radius: f64,
    psf_size: usize,
    input_psnr: f64,
    seed: u64,
) -> Result<SnapshotStack> {
    let sr = aperture.sr();
    let masks = SnapshotSchedule::raster(m)?.masks(aperture)?;
    let psf = Psf::airy(radius, psf_size)?;
    let clean: Vec<Image> = masks.iter().map(|mk| blurred_measure(scene, mk, &psf, sr)).collect::<Result<_>>()?;
    let noise_sigma = if input_psnr.is_infinite() { 0.0 } else { noise_sigma_for_psnr(&clean, input_psnr)? };
    let measurements = clean
        .iter()
        .enumerate()
        .map(|(i, c)| add_gaussian_noise(c, noise_sigma, seeds::derive(seed, 4 + i as u64)))
        .collect::<Result<_>>()?;
    let ideal = masks.iter().map(|mk| ideal_measure(scene, mk, sr)).collect::<Result<_>>()?;
    Ok(SnapshotStack { scene: scene.clone(), masks, measurements, ideal, radius, noise_sigma })
}

/// Simulates `m` raster-shifted snapshots of a procedural test scene.
///
/// Scene, aperture and the position of the radius inside its bin depend on
/// `seed` alone, so stacks drawn for different bins or noise levels are
/// paired.
pub fn simulate_stack(sim: &SimulationConfig, bin: RadiusBin, m: usize, input_psnr: f64, seed: u64) -> Result<SnapshotStack> {
    let n = sim.test_crop;
    let scene = synthetic_scene(n, n, seeds::derive(seed, 1));
    let aperture = generate_aperture(n, n, sim.sr()?, sim.open_ratio, seeds::derive(seed, 2))?;
    let (lo, hi) = bin.interval();
    let radius = lo + (hi - lo) * seeds::rng(seeds::derive(seed, 3)).random::<f64>();
    acquire(&scene, &aperture, m, radius, sim.psf_size, input_psnr, seed)
}

struct Plan {
    method: CorrectionMethod,
    assumed: Option<RadiusBin>,
    skipped: Option<String>,
}

fn plans(grid: &ExperimentGrid, bin: RadiusBin, have_net: bool) -> Vec<Plan> {
    let mut out = Vec::new();
    for &method in &grid.methods {
        if method != CorrectionMethod::Calibfpa {
            out.push(Plan { method, assumed: None, skipped: None });
            continue;
        }
        for &off in &grid.bin_offsets {
            let Some(assumed) = bin.offset(off) else { continue };
            let skipped = (!have_net).then(|| "no-checkpoint".to_string());
            out.push(Plan { method, assumed: Some(assumed), skipped });
        }
    }
    out
}

struct Outcome {
    meas: (f64, Option<f64>),
    recon: Option<(f64, f64)>,
    time: f64,
}

fn mean_ssim(refs: &[Image], tests: &[Image]) -> Result<Option<f64>> {
    let (h, w) = refs[0].shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Ok(None);
    }
    let total: f64 = refs.iter().zip(tests).map(|(r, t)| ssim(r, t)).sum::<Result<f64>>()?;
    Ok(Some(total / refs.len() as f64))
}

fn evaluate_plan(env: &ExperimentEnv<'_>, reconstruct_hr: bool, st: &SnapshotStack, plan: &Plan) -> Result<Outcome> {
    let sr = env.sim.sr()?;
    let t0 = Instant::now();
    let lr_psf = Psf::airy(st.radius, env.sim.psf_size)?.to_lr(sr);
    let ctx = CorrectionContext {
        lr_psf: Some(&lr_psf),
        lucy_iters: Some(env.lucy_iters),
        net: env.net,
        masks: Some(&st.masks),
        bin: plan.assumed,
    };
    let corrected = correct_measurements(plan.method, &st.measurements, &ctx)?;
    let meas = (psnr_stack(&st.ideal, &corrected, 1.0)?, mean_ssim(&st.ideal, &corrected)?);
    let recon = if reconstruct_hr {
        let c = st.system_matrix(env.sim)?;
        let (x, _) = reconstruct(&c, &stack(&corrected), st.noise_sigma, env.recon)?;
        Some((psnr(&st.scene, &x, 1.0)?, ssim(&st.scene, &x)?))
    } else {
        None
    };
    Ok(Outcome { meas, recon, time: t0.elapsed().as_secs_f64() })
}

/// Evaluates every method on every cell of `grid` and returns one record per
/// (method, assumed bin, stage, cell), in a fixed order.
///
/// CalibFPA cells without a network are reported with `skipped` set rather
/// than failing the sweep. An empty method list gives an empty table.
pub fn run_matrix_of_experiments(grid: &ExperimentGrid, env: &ExperimentEnv<'_>) -> Result<Vec<EvalRecord>> {
    grid.validate()?;
    env.sim.validate()?;
    let sr = env.sim.sr()?;
    if let Some(net) = env.net {
        if net.sr() != sr {
            return Err(Error::invalid(format!("network trained for s={}x{}, sweep uses {}x{}", net.sr().s1, net.sr().s2, sr.s1, sr.s2)));
        }
    }
    let mut records = Vec::new();
    if grid.methods.is_empty() {
        return Ok(records);
    }
    for (mi, &m) in grid.snapshots.iter().enumerate() {
        for &input_psnr in &grid.input_psnrs {
            for &bin in &grid.bins {
                let plans = plans(grid, bin, env.net.is_some());
                let per_sample: Vec<Vec<Option<Outcome>>> = (0..grid.samples)
                    .into_par_iter()
                    .map(|j| {
                        let seed = cell_seed(grid.seed, mi, j);
                        let st = simulate_stack(env.sim, bin, m, input_psnr, seed)?;
                        plans
                            .iter()
                            .map(|p| match p.skipped {
                                Some(_) => Ok(None),
                                None => evaluate_plan(env, grid.reconstruct, &st, p).map(Some),
                            })
                            .collect()
                    })
                    .collect::<Result<_>>()?;
                for (k, plan) in plans.iter().enumerate() {
                    let outs: Vec<&Outcome> = per_sample.iter().filter_map(|row| row[k].as_ref()).collect();
                    let n = outs.len();
                    let mean = |f: &dyn Fn(&Outcome) -> f64| {
                        if n == 0 { f64::NAN } else { outs.iter().map(|o| f(o)).sum::<f64>() / n as f64 }
                    };
                    let time = mean(&|o| o.time);
                    let base = EvalRecord {
                        method: plan.method,
                        stage: Stage::Measurement,
                        bin,
                        assumed_bin: plan.assumed,
                        snapshots: m,
                        input_psnr,
                        psnr_db: mean(&|o| o.meas.0),
                        ssim_pct: outs.first().and_then(|o| o.meas.1).map(|_| mean(&|o| o.meas.1.unwrap_or(f64::NAN))),
                        wall_time_s: time,
                        samples: n,
                        skipped: plan.skipped.clone(),
                    };
                    if grid.reconstruct {
                        let recon = EvalRecord {
                            stage: Stage::Reconstruction,
                            psnr_db: mean(&|o| o.recon.map_or(f64::NAN, |r| r.0)),
                            ssim_pct: if n == 0 { None } else { Some(mean(&|o| o.recon.map_or(f64::NAN, |r| r.1))) },
                            ..base.clone()
                        };
                        records.push(base);
                        records.push(recon);
                    } else {
                        records.push(base);
                    }
                }
            }
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::CalibNetConfig;

    fn small_sim() -> SimulationConfig {
        SimulationConfig { test_crop: 30, psf_size: 21, ..SimulationConfig::default() }
    }

    fn grid(methods: Vec<CorrectionMethod>) -> ExperimentGrid {
        ExperimentGrid {
            methods,
            bins: vec![RadiusBin::new(0).unwrap(), RadiusBin::new(4).unwrap()],
            snapshots: vec![2],
            input_psnrs: vec![50.0],
            samples: 2,
            reconstruct: false,
            ..ExperimentGrid::default()
        }
    }

    #[test]
    fn empty_method_list_gives_header_only() {
        let sim = small_sim();
        let recon = ReconConfig::default();
        let env = ExperimentEnv { sim: &sim, net: None, lucy_iters: 5, recon: &recon };
        let recs = run_matrix_of_experiments(&grid(vec![]), &env).unwrap();
        assert!(recs.is_empty());
        assert_eq!(format_table(&recs), format!("{TABLE_HEADER}\n"));
    }

    #[test]
    fn missing_network_flags_calibfpa_cells() {
        let sim = small_sim();
        let recon = ReconConfig::default();
        let env = ExperimentEnv { sim: &sim, net: None, lucy_iters: 5, recon: &recon };
        let recs = run_matrix_of_experiments(&grid(vec![CorrectionMethod::Raw, CorrectionMethod::Calibfpa]), &env).unwrap();
        assert_eq!(recs.len(), 4);
        let skipped: Vec<_> = recs.iter().filter(|r| r.skipped.is_some()).collect();
        assert_eq!(skipped.len(), 2);
        assert!(skipped.iter().all(|r| r.method == CorrectionMethod::Calibfpa && r.samples == 0));
        assert!(recs.iter().filter(|r| r.skipped.is_none()).all(|r| r.psnr_db.is_finite() && r.samples == 2));
        assert!(format_table(&recs).contains("no-checkpoint"));
    }

    #[test]
    fn stronger_blur_lowers_raw_measurement_psnr() {
        let sim = small_sim();
        let recon = ReconConfig::default();
        let env = ExperimentEnv { sim: &sim, net: None, lucy_iters: 5, recon: &recon };
        let recs = run_matrix_of_experiments(&grid(vec![CorrectionMethod::Raw]), &env).unwrap();
        assert!(recs[0].psnr_db > recs[1].psnr_db + 1.0, "{recs:?}");
    }

    #[test]
    fn untrained_network_matches_raw_and_offsets_clip_to_valid_bins() {
        let sim = small_sim();
        let recon = ReconConfig::default();
        let net = CalibNet::new(CalibNetConfig { channels: 4, fusion_layers: 1, ..CalibNetConfig::default() }, sim.sr().unwrap(), 1).unwrap();
        let env = ExperimentEnv { sim: &sim, net: Some(&net), lucy_iters: 5, recon: &recon };
        let g = ExperimentGrid { bin_offsets: vec![-1, 0, 1], ..grid(vec![CorrectionMethod::Raw, CorrectionMethod::Calibfpa]) };
        let recs = run_matrix_of_experiments(&g, &env).unwrap();
        // bin 0: raw + offsets {0, +1}; bin 4: raw + offsets {-1, 0, +1}
        assert_eq!(recs.len(), 3 + 4);
        for r in recs.iter().filter(|r| r.method == CorrectionMethod::Calibfpa) {
            let raw = recs.iter().find(|q| q.method == CorrectionMethod::Raw && q.bin == r.bin).unwrap();
            assert!((r.psnr_db - raw.psnr_db).abs() < 1e-9);
        }
    }

    #[test]
    fn reconstruction_rows_and_determinism() {
        let sim = small_sim();
        let recon = ReconConfig { method: crate::recon::ReconMethod::LeastSquares, ..ReconConfig::default() };
        let env = ExperimentEnv { sim: &sim, net: None, lucy_iters: 5, recon: &recon };
        let g = ExperimentGrid { reconstruct: true, ..grid(vec![CorrectionMethod::Raw, CorrectionMethod::Lucy]) };
        let a = run_matrix_of_experiments(&g, &env).unwrap();
        let b = run_matrix_of_experiments(&g, &env).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a.iter().filter(|r| r.stage == Stage::Reconstruction).count(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.psnr_db.to_bits(), y.psnr_db.to_bits());
            assert_eq!(x.ssim_pct.map(f64::to_bits), y.ssim_pct.map(f64::to_bits));
        }
        assert!(a.iter().filter(|r| r.stage == Stage::Reconstruction).all(|r| r.ssim_pct.is_some()));
        // 6x6 LR images are below the SSIM window
        assert!(a.iter().filter(|r| r.stage == Stage::Measurement).all(|r| r.ssim_pct.is_none()));
    }

    #[test]
    fn stacks_are_paired_across_bins() {
        let sim = small_sim();
        let a = simulate_stack(&sim, RadiusBin::new(1).unwrap(), 3, 40.0, 9).unwrap();
        let b = simulate_stack(&sim, RadiusBin::new(6).unwrap(), 3, 40.0, 9).unwrap();
        assert_eq!(a.scene, b.scene);
        assert_eq!(a.masks, b.masks);
        assert_eq!(a.ideal, b.ideal);
        assert!((a.radius.fract() - b.radius.fract()).abs() < 1e-12);
        assert_eq!(a.measurements.len(), 3);
    }
}
