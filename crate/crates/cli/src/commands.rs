use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use calibfpa::aperture::{CodedAperture, MarkerSpec, SnapshotSchedule};
use calibfpa::calib::{correct_measurements, radius_bin, train_calib, CalibNet, CorrectionContext, CorrectionMethod};
use calibfpa::io::{self, Container, Payload};
use calibfpa::optics::{Psf, SrFactor};
use calibfpa::pipeline::{
    acquire, cell_seed, gen_dataset as build_dataset, psnr, run_matrix_of_experiments, simulate_stack, ssim,
    synthetic_scene, random_crop, write_table, Dataset, ExperimentEnv, RunConfig, Split, RESOLVED_CONFIG, SSIM_WINDOW,
};
use calibfpa::recon::{self, ReconMethod, RunManifest};
use calibfpa::seeds;
use calibfpa::sysmat::{build_system_matrix, stack, MatrixForm};
use calibfpa::Image;

use crate::error::CliError;

type CliResult<T = ()> = Result<T, CliError>;

const APERTURE_FILE: &str = "aperture.cfpa";
const MANIFEST_FILE: &str = "manifest.toml";
const SCENE_FILE: &str = "scene.cfpa";
const MASKS_FILE: &str = "masks.cfpa";
const MEASUREMENTS_FILE: &str = "measurements.cfpa";
const IDEAL_FILE: &str = "ideal.cfpa";
const CORRECTED_FILE: &str = "corrected.cfpa";
const RECON_FILE: &str = "reconstruction.cfpa";
const REPORT_FILE: &str = "report.toml";
const TABLE_FILE: &str = "results.tsv";
const TRAIN_LOG_FILE: &str = "train_log.txt";

fn load_config(path: &Option<PathBuf>) -> CliResult<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

/// Validates the overridden config and records it next to the outputs.
fn finish_config(cfg: &RunConfig, out: &Path) -> CliResult {
    cfg.validate()?;
    cfg.save(out.join(RESOLVED_CONFIG))?;
    Ok(())
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = toml::to_string(value).map_err(|e| CliError::bad_args(format!("encoding {}: {e}", path.display())))?;
    io::write_text(path, &text)?;
    Ok(())
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = io::read_text(path)?;
    toml::from_str(&text)
        .map_err(|e| calibfpa::Error::Format { path: path.to_path_buf(), reason: e.to_string() }.into())
}

macro_rules! set {
    ($field:expr, $flag:expr) => {
        if let Some(v) = $flag {
            $field = v;
        }
    };
}

#[derive(Debug, Serialize, Deserialize)]
struct ApertureManifest {
    size: usize,
    block: usize,
    open_ratio: f64,
    markers: usize,
    seed: u64,
    open_pixels: usize,
}

pub struct GenApertureArgs {
    pub size: Option<usize>,
    pub block: Option<usize>,
    pub open_ratio: Option<f64>,
    pub markers: Option<usize>,
    pub seed: Option<u64>,
}

pub fn gen_aperture(config: &Option<PathBuf>, out: &Path, a: GenApertureArgs) -> CliResult {
    let mut cfg = load_config(config)?;
    set!(cfg.aperture.size, a.size);
    set!(cfg.aperture.block, a.block);
    set!(cfg.aperture.open_ratio, a.open_ratio);
    set!(cfg.aperture.markers, a.markers);
    set!(cfg.aperture.seed, a.seed);
    finish_config(&cfg, out)?;
    let ap = cfg.aperture.build()?;
    let (h, w) = ap.shape();
    Container::new(vec![h, w], Payload::U8(ap.pattern().to_vec()))?.write(out.join(APERTURE_FILE))?;
    let a = cfg.aperture;
    let manifest = ApertureManifest {
        size: a.size,
        block: a.block,
        open_ratio: a.open_ratio,
        markers: a.markers,
        seed: a.seed,
        open_pixels: ap.pattern().iter().map(|&v| v as usize).sum(),
    };
    write_toml(&out.join(MANIFEST_FILE), &manifest)?;
    info!("aperture {h}x{w}, block {0}x{0}, p={1} -> {2}", a.block, a.open_ratio, out.display());
    Ok(())
}

fn load_aperture(dir: &Path) -> CliResult<(CodedAperture, ApertureManifest)> {
    let m: ApertureManifest = read_toml(&dir.join(MANIFEST_FILE))?;
    let path = dir.join(APERTURE_FILE);
    let c = Container::read(&path)?;
    let (dims, pattern) = match (c.dims(), c.payload()) {
        ([h, w], Payload::U8(p)) => ((*h, *w), p.clone()),
        _ => {
            let reason = "aperture must be a 2-D u8 tensor".to_string();
            return Err(calibfpa::Error::Format { path, reason }.into());
        }
    };
    let markers = (m.markers > 0).then_some(MarkerSpec { lr_size: m.markers });
    let ap = CodedAperture::from_pattern(dims.0, dims.1, SrFactor::square(m.block)?, m.open_ratio, pattern, markers)?;
    Ok((ap, m))
}

#[derive(Debug, Serialize, Deserialize)]
struct AcquisitionManifest {
    block: usize,
    radius: f64,
    bin: usize,
    psf_size: usize,
    snapshots: usize,
    input_psnr: f64,
    noise_sigma: f64,
    shifts: Vec<[f64; 2]>,
    scene: String,
}

pub struct SimulateArgs {
    pub aperture: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub radius: Option<f64>,
    pub snapshots: Option<usize>,
    pub input_psnr: Option<f64>,
    pub seed: Option<u64>,
}

pub fn simulate(config: &Option<PathBuf>, out: &Path, a: SimulateArgs) -> CliResult {
    let mut cfg = load_config(config)?;
    if a.scene.is_some() {
        cfg.acquisition.scene = a.scene;
    }
    set!(cfg.acquisition.radius, a.radius);
    set!(cfg.acquisition.snapshots, a.snapshots);
    set!(cfg.acquisition.input_psnr, a.input_psnr);
    set!(cfg.acquisition.seed, a.seed);
    let aperture = match &a.aperture {
        Some(dir) => {
            let (ap, m) = load_aperture(dir)?;
            cfg.aperture.size = m.size;
            cfg.aperture.block = m.block;
            cfg.aperture.open_ratio = m.open_ratio;
            cfg.aperture.markers = m.markers;
            cfg.aperture.seed = m.seed;
            if ap.shape() != (m.size, m.size) || cfg.aperture.build().ok().as_ref() != Some(&ap) {
                warn!("{} does not match its manifest; the resolved config will not regenerate it", dir.display());
            }
            ap
        }
        None => {
            cfg.validate()?;
            cfg.aperture.build()?
        }
    };
    finish_config(&cfg, out)?;
    let acq = &cfg.acquisition;
    let (h, _) = aperture.shape();
    let (scene, scene_name) = match &acq.scene {
        Some(p) => (random_crop(p, h, seeds::derive(acq.seed, 1))?, p.display().to_string()),
        None => (synthetic_scene(h, h, seeds::derive(acq.seed, 1)), format!("synthetic:{}", acq.seed)),
    };
    let psf_size = cfg.simulation.psf_size;
    let st = acquire(&scene, &aperture, acq.snapshots, acq.radius, psf_size, acq.input_psnr, acq.seed)?;
    Container::from_image(&st.scene).write(out.join(SCENE_FILE))?;
    Container::from_images(&st.masks)?.write(out.join(MASKS_FILE))?;
    Container::from_images(&st.measurements)?.write(out.join(MEASUREMENTS_FILE))?;
    Container::from_images(&st.ideal)?.write(out.join(IDEAL_FILE))?;
    io::write_pgm16(out.join("scene.pgm"), &st.scene)?;
    let shifts = SnapshotSchedule::raster(acq.snapshots)?.shifts().iter().map(|s| [s.dx, s.dy]).collect();
    let manifest = AcquisitionManifest {
        block: cfg.aperture.block,
        radius: acq.radius,
        bin: radius_bin(acq.radius)?.index(),
        psf_size,
        snapshots: acq.snapshots,
        input_psnr: acq.input_psnr,
        noise_sigma: st.noise_sigma,
        shifts,
        scene: scene_name,
    };
    write_toml(&out.join(MANIFEST_FILE), &manifest)?;
    info!("{} snapshots at r={}, sigma={:.3e} -> {}", acq.snapshots, acq.radius, st.noise_sigma, out.display());
    Ok(())
}

pub struct GenDatasetArgs {
    pub scene_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub train: Option<usize>,
    pub val: Option<usize>,
    pub test: Option<usize>,
}

pub fn gen_dataset(config: &Option<PathBuf>, out: &Path, a: GenDatasetArgs) -> CliResult {
    let mut cfg = load_config(config)?;
    if a.scene_dir.is_some() {
        cfg.simulation.scene_dir = a.scene_dir;
    }
    set!(cfg.simulation.seed, a.seed);
    set!(cfg.simulation.train, a.train);
    set!(cfg.simulation.val, a.val);
    set!(cfg.simulation.test, a.test);
    finish_config(&cfg, out)?;
    let ds = build_dataset(&cfg.simulation)?;
    ds.save(out)?;
    let sizes: Vec<String> = Split::ALL.iter().map(|&s| format!("{}={}", s.name(), ds.split(s).len())).collect();
    info!("dataset {} -> {}", sizes.join(" "), out.display());
    Ok(())
}

pub struct TrainArgs {
    pub dataset: PathBuf,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
}

pub fn train_net(config: &Option<PathBuf>, out: &Path, a: TrainArgs) -> CliResult {
    let mut cfg = load_config(config)?;
    set!(cfg.training.epochs, a.epochs);
    set!(cfg.training.batch_size, a.batch_size);
    set!(cfg.training.lr, a.lr);
    set!(cfg.training.seed, a.seed);
    let ds = Dataset::load(&a.dataset)?;
    cfg.simulation = ds.config.clone();
    finish_config(&cfg, out)?;
    let outcome = train_calib(
        &ds.split(Split::Train).samples,
        &ds.split(Split::Val).samples,
        &cfg.network,
        cfg.simulation.sr()?,
        &cfg.training,
    )?;
    outcome.net.save(out)?;
    let log: String = outcome.log.iter().map(|l| l.to_line() + "\n").collect();
    io::write_text(&out.join(TRAIN_LOG_FILE), &log)?;
    info!(
        "val l1 {:.4e} -> {:.4e} (best epoch {}) -> {}",
        outcome.initial_val_l1,
        outcome.best_val_l1,
        outcome.best_epoch,
        out.display()
    );
    Ok(())
}

/// Snapshot stack of a `simulate` output directory.
struct Acquisition {
    manifest: AcquisitionManifest,
    masks: Vec<Image>,
    measurements: Vec<Image>,
    scene: Option<Image>,
}

fn load_acquisition(dir: &Path, measurements: Option<&Path>) -> CliResult<Acquisition> {
    let manifest: AcquisitionManifest = read_toml(&dir.join(MANIFEST_FILE))?;
    let masks = Container::read(dir.join(MASKS_FILE))?.to_images()?;
    let meas_path = measurements.map_or_else(|| dir.join(MEASUREMENTS_FILE), Path::to_path_buf);
    let measurements = Container::read(&meas_path)?.to_images()?;
    let scene_path = dir.join(SCENE_FILE);
    let scene = if scene_path.exists() { Some(Container::read(&scene_path)?.to_image()?) } else { None };
    if masks.len() != measurements.len() {
        return Err(CliError::bad_args(format!("{} masks but {} measurements", masks.len(), measurements.len())));
    }
    Ok(Acquisition { manifest, masks, measurements, scene })
}

fn correct(
    cfg: &RunConfig,
    acq: &Acquisition,
    checkpoint: Option<&Path>,
) -> CliResult<Vec<Image>> {
    let method = cfg.calibration.method;
    let radius = cfg.calibration.radius.unwrap_or(acq.manifest.radius);
    let sr = SrFactor::square(acq.manifest.block)?;
    let lr_psf = Psf::airy(radius, acq.manifest.psf_size)?.to_lr(sr);
    let net = match (method, checkpoint) {
        (CorrectionMethod::Calibfpa, None) => return Err(CliError::bad_args("calibfpa needs --checkpoint")),
        (CorrectionMethod::Calibfpa, Some(dir)) => Some(CalibNet::load(dir)?),
        _ => None,
    };
    let ctx = CorrectionContext {
        lr_psf: Some(&lr_psf),
        lucy_iters: Some(cfg.lucy.iters),
        net: net.as_ref(),
        masks: Some(&acq.masks),
        bin: Some(radius_bin(radius)?),
    };
    Ok(correct_measurements(method, &acq.measurements, &ctx)?)
}

pub struct CalibrateArgs {
    pub input: PathBuf,
    pub method: Option<CorrectionMethod>,
    pub checkpoint: Option<PathBuf>,
    pub radius: Option<f64>,
}

pub fn calibrate(config: &Option<PathBuf>, out: &Path, a: CalibrateArgs) -> CliResult {
    let mut cfg = load_config(config)?;
    set!(cfg.calibration.method, a.method);
    if a.radius.is_some() {
        cfg.calibration.radius = a.radius;
    }
    finish_config(&cfg, out)?;
    let acq = load_acquisition(&a.input, None)?;
    let corrected = correct(&cfg, &acq, a.checkpoint.as_deref())?;
    Container::from_images(&corrected)?.write(out.join(CORRECTED_FILE))?;
    info!("{} correction of {} snapshots -> {}", cfg.calibration.method, corrected.len(), out.display());
    Ok(())
}

pub struct ReconstructArgs {
    pub input: PathBuf,
    pub measurements: Option<PathBuf>,
    pub method: Option<ReconMethod>,
    pub calibration: Option<CorrectionMethod>,
    pub matrix: Option<MatrixForm>,
    pub ridge: Option<f64>,
    pub model_blur: bool,
    pub checkpoint: Option<PathBuf>,
    pub radius: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ReconReport {
    method: ReconMethod,
    calibration: CorrectionMethod,
    matrix: MatrixForm,
    model_blur: bool,
    psnr_db: Option<f64>,
    ssim_pct: Option<f64>,
    solver: Option<RunManifest>,
}

pub fn reconstruct(config: &Option<PathBuf>, out: &Path, a: ReconstructArgs) -> CliResult {
    let mut cfg = load_config(config)?;
    set!(cfg.recon.method, a.method);
    set!(cfg.calibration.method, a.calibration);
    set!(cfg.recon.matrix, a.matrix);
    set!(cfg.recon.ridge, a.ridge);
    cfg.recon.model_blur |= a.model_blur;
    if a.radius.is_some() {
        cfg.calibration.radius = a.radius;
    }
    finish_config(&cfg, out)?;
    let acq = load_acquisition(&a.input, a.measurements.as_deref())?;
    let corrected = correct(&cfg, &acq, a.checkpoint.as_deref())?;
    let sr = SrFactor::square(acq.manifest.block)?;
    let psf = if cfg.recon.model_blur {
        Psf::airy(cfg.calibration.radius.unwrap_or(acq.manifest.radius), acq.manifest.psf_size)?
    } else {
        Psf::delta()
    };
    let c = build_system_matrix(cfg.recon.matrix, &acq.masks, &psf, sr)?;
    let (x, solver) = recon::reconstruct(&c, &stack(&corrected), acq.manifest.noise_sigma, &cfg.recon)?;
    Container::from_image(&x).write(out.join(RECON_FILE))?;
    io::write_pgm16(out.join("reconstruction.pgm"), &x)?;
    let (psnr_db, ssim_pct) = match &acq.scene {
        Some(s) => {
            let big = s.height() >= SSIM_WINDOW && s.width() >= SSIM_WINDOW;
            (Some(psnr(s, &x, 1.0)?), if big { Some(ssim(s, &x)?) } else { None })
        }
        None => (None, None),
    };
    let report = ReconReport {
        method: cfg.recon.method,
        calibration: cfg.calibration.method,
        matrix: cfg.recon.matrix,
        model_blur: cfg.recon.model_blur,
        psnr_db,
        ssim_pct,
        solver,
    };
    write_toml(&out.join(REPORT_FILE), &report)?;
    match psnr_db {
        Some(p) => info!("{} reconstruction: {p:.2} dB -> {}", cfg.recon.method, out.display()),
        None => info!("{} reconstruction -> {}", cfg.recon.method, out.display()),
    }
    Ok(())
}

pub struct EvaluateArgs {
    pub methods: Option<String>,
    pub bins: Option<Vec<usize>>,
    pub snapshots: Option<Vec<usize>>,
    pub input_psnr: Option<Vec<f64>>,
    pub offsets: Option<Vec<isize>>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub no_recon: bool,
    pub checkpoint: Option<PathBuf>,
    pub dump_pgm: bool,
}

pub fn evaluate(config: &Option<PathBuf>, out: &Path, a: EvaluateArgs) -> CliResult {
    let mut cfg = load_config(config)?;
    let grid = &mut cfg.experiments;
    if let Some(list) = a.methods {
        grid.methods = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()?;
    }
    if let Some(bins) = a.bins {
        grid.bins = bins.into_iter().map(calibfpa::calib::RadiusBin::new).collect::<Result<_, _>>()?;
    }
    set!(grid.snapshots, a.snapshots);
    set!(grid.input_psnrs, a.input_psnr);
    set!(grid.bin_offsets, a.offsets);
    set!(grid.samples, a.samples);
    set!(grid.seed, a.seed);
    if a.no_recon {
        grid.reconstruct = false;
    }
    finish_config(&cfg, out)?;
    let net = match &a.checkpoint {
        Some(dir) if dir.exists() => Some(CalibNet::load(dir)?),
        Some(dir) => {
            warn!("checkpoint {} not found; calibfpa cells are skipped", dir.display());
            None
        }
        None => None,
    };
    let env = ExperimentEnv { sim: &cfg.simulation, net: net.as_ref(), lucy_iters: cfg.lucy.iters, recon: &cfg.recon };
    let records = run_matrix_of_experiments(&cfg.experiments, &env)?;
    write_table(out.join(TABLE_FILE), &records)?;
    if a.dump_pgm {
        dump_cells(&cfg, &env, &out.join("dumps"))?;
    }
    info!("{} records -> {}", records.len(), out.join(TABLE_FILE).display());
    Ok(())
}

/// PGM dumps of the first sample of every cell: the scene, and per method
/// the first corrected snapshot and (if enabled) the reconstruction.
fn dump_cells(cfg: &RunConfig, env: &ExperimentEnv<'_>, dir: &Path) -> CliResult {
    let grid = &cfg.experiments;
    if grid.samples == 0 {
        return Ok(());
    }
    let sr = cfg.simulation.sr()?;
    for (mi, &m) in grid.snapshots.iter().enumerate() {
        for &p in &grid.input_psnrs {
            for &bin in &grid.bins {
                let st = simulate_stack(&cfg.simulation, bin, m, p, cell_seed(grid.seed, mi, 0))?;
                let tag = format!("bin{}_m{m}_psnr{p}", bin.index());
                io::write_pgm16(dir.join(format!("{tag}_scene.pgm")), &st.scene)?;
                for &method in &grid.methods {
                    if method == CorrectionMethod::Calibfpa && env.net.is_none() {
                        continue;
                    }
                    let lr_psf = Psf::airy(st.radius, cfg.simulation.psf_size)?.to_lr(sr);
                    let ctx = CorrectionContext {
                        lr_psf: Some(&lr_psf),
                        lucy_iters: Some(env.lucy_iters),
                        net: env.net,
                        masks: Some(&st.masks),
                        bin: Some(bin),
                    };
                    let corrected = correct_measurements(method, &st.measurements, &ctx)?;
                    io::write_pgm16(dir.join(format!("{tag}_{method}_snapshot0.pgm")), &corrected[0].clamp(0.0, 1.0))?;
                    if grid.reconstruct {
                        let c = st.system_matrix(&cfg.simulation)?;
                        let (x, _) = recon::reconstruct(&c, &stack(&corrected), st.noise_sigma, env.recon)?;
                        io::write_pgm16(dir.join(format!("{tag}_{method}_recon.pgm")), &x)?;
                    }
                }
            }
        }
    }
    Ok(())
}
