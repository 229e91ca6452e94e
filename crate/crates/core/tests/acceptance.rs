//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero on any failure.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use sha2::{Digest, Sha256};

use calibfpa::aperture::{generate_aperture, SnapshotSchedule};
use calibfpa::calib::{batch_inputs, train_calib, CalibNet, CalibNetConfig, CorrectionMethod, RadiusBin, TrainConfig};
use calibfpa::io::Container;
use calibfpa::optics::{add_gaussian_noise, blurred_measure, Psf, SrFactor};
use calibfpa::pipeline::{
    gen_dataset, noise_sigma_for_psnr, psnr, run_matrix_of_experiments, simulate_stack, ssim, synthetic_scene, Dataset,
    EvalRecord, ExperimentEnv, ExperimentGrid, SimulationConfig, Split, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
};
use calibfpa::recon::{ppfpa, reconstruct, Denoiser, IdentityDenoiser, Ppfpa, PpfpaOperator, ReconConfig, StoppingRule};
use calibfpa::seeds;
use calibfpa::sysmat::{least_squares_solve, stack, BlockDiagSystemMatrix, DenseSystemMatrix, SystemMatrix};
use calibfpa::tensornet::gradcheck::{check_layer, random_tensor};
use calibfpa::tensornet::{BatchNorm2d, Conv2d, ConvBnLrelu, LeakyRelu, Linear, Mode, Softplus};
use calibfpa::{Image, Result};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|q| q * q).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = seeds::rng(seed);
    Image::from_fn(h, w, |_, _| rng.random::<f64>())
}

fn masks_for(n1: usize, n2: usize, sr: SrFactor, m: usize, seed: u64) -> Result<Vec<Image>> {
    let ap = generate_aperture(n1, n2, sr, 0.5f64.max(1.0 / sr.total() as f64).min(1.0), seed);
    let ap = match ap {
        Ok(ap) => ap,
        Err(_) => generate_aperture(n1, n2, sr, (sr.total() / 2) as f64 / sr.total() as f64, seed)?,
    };
    SnapshotSchedule::raster(m)?.masks(&ap)
}

fn ac1() -> Result<Verdict> {
    let t0 = Instant::now();
    // (n1, n2, s1, s2, m, radius, psf size)
    let configs = [
        (20, 20, 2, 2, 4, 2.0, 9),
        (16, 16, 4, 4, 5, 3.5, 11),
        (12, 18, 3, 3, 3, 1.6, 7),
        (20, 20, 5, 5, 2, 1.8, 81),
        (18, 12, 3, 2, 6, 4.2, 15),
    ];
    let mut worst = 0.0f64;
    for (ci, &(n1, n2, s1, s2, m, r, k)) in configs.iter().enumerate() {
        let sr = SrFactor::new(s1, s2)?;
        let psf = Psf::airy(r, k)?;
        let masks = masks_for(n1, n2, sr, m, ci as u64)?;
        let dense = DenseSystemMatrix::from_masks(&masks, &psf, sr, 400)?;
        let c = SystemMatrix::from(dense);
        for s in 0..10 {
            let x = random_image(n1, n2, seeds::derive(ci as u64, s));
            let via_matrix = c.apply(x.data())?;
            let via_conv = stack(&masks.iter().map(|mk| blurred_measure(&x, mk, &psf, sr)).collect::<Result<Vec<_>>>()?);
            worst = worst.max(rel_err(&via_matrix, &via_conv));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(worst < 1e-10 && secs < 10.0, format!("{} configs x 10 scenes, max rel err {worst:.2e}, {secs:.2} s", configs.len()))
}

fn ac2() -> Result<Verdict> {
    let mut worst = 0.0f64;
    for (ci, &(n, s, m)) in [(20, 2, 3), (20, 4, 5), (15, 5, 7), (12, 3, 9)].iter().enumerate() {
        let sr = SrFactor::square(s)?;
        let masks = masks_for(n, n, sr, m, 100 + ci as u64)?;
        let dense: SystemMatrix = DenseSystemMatrix::from_masks(&masks, &Psf::delta(), sr, 400)?.into();
        let block: SystemMatrix = BlockDiagSystemMatrix::from_masks(&masks, sr)?.into();
        for t in 0..5 {
            let x = random_image(n, n, seeds::derive(200 + ci as u64, t));
            worst = worst.max(rel_err(&block.apply(x.data())?, &dense.apply(x.data())?));
            let y: Vec<f64> = random_image(1, dense.nrows(), seeds::derive(300 + ci as u64, t)).into_data();
            worst = worst.max(rel_err(&block.apply_adjoint(&y)?, &dense.apply_adjoint(&y)?));
        }
    }
    let sr = SrFactor::square(5)?;
    let masks = masks_for(360, 360, sr, 5, 7)?;
    let big: SystemMatrix = BlockDiagSystemMatrix::from_masks(&masks, sr)?.into();
    let x = random_image(360, 360, 8);
    big.apply(x.data())?;
    let mut times: Vec<f64> = (0..7)
        .map(|_| {
            let t = Instant::now();
            let y = big.apply(x.data()).expect("matvec");
            std::hint::black_box(y);
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let ms = times[times.len() / 2];
    verdict(worst < 1e-10 && ms < 50.0, format!("max rel err {worst:.2e}; matvec N=360^2 m=5 median {ms:.2} ms"))
}

fn ac3() -> Result<Verdict> {
    let sr = SrFactor::square(5)?;
    let schedule = SnapshotSchedule::raster(25)?;
    let (seed, block) = (0..200)
        .map(|k| seeds::derive(3, k))
        .find_map(|seed| {
            let ap = generate_aperture(60, 60, sr, 0.8, seed).ok()?;
            let b = BlockDiagSystemMatrix::from_masks(&schedule.masks(&ap).ok()?, sr).ok()?;
            b.singular_blocks().is_empty().then_some((seed, b))
        })
        .expect("full-rank aperture within 200 seeds");
    let c: SystemMatrix = block.into();
    let scene = synthetic_scene(60, 60, 11);
    let y = c.apply(scene.data())?;

    let t = Instant::now();
    let ls = least_squares_solve(&c, &y, 0.0)?;
    let (ls_db, ls_s) = (psnr(&scene, &ls, 1.0)?, t.elapsed().as_secs_f64());

    let t = Instant::now();
    let stop = StoppingRule { max_iter: 2000, tol: 1e-10 };
    let out = ppfpa(&c, &y, &IdentityDenoiser, 0.0, 0.0, 1e4, &stop)?;
    let (pp_db, pp_s) = (psnr(&scene, &out.image, 1.0)?, t.elapsed().as_secs_f64());

    verdict(
        ls_db > 80.0 && pp_db > 80.0 && ls_s < 30.0 && pp_s < 30.0,
        format!(
            "aperture seed {seed}: least-squares {ls_db:.1} dB in {ls_s:.3} s; ppfpa {pp_db:.1} dB in {pp_s:.3} s ({} its)",
            out.manifest.iterations
        ),
    )
}

struct Shrink;

impl Denoiser for Shrink {
    fn name(&self) -> &str {
        "shrink"
    }
    fn denoise(&self, v: &Image, mu: f64) -> Result<Image> {
        Ok(v.map(|x| 0.9 * x + mu))
    }
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().copied().chain((0..n).map(|j| if i == j { 1.0 } else { 0.0 })).collect())
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        m[col].iter_mut().for_each(|v| *v /= p);
        let pivot_row = m[col].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r != col {
                let f = row[col];
                row.iter_mut().zip(&pivot_row).for_each(|(v, q)| *v -= f * q);
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn ac4() -> Result<Verdict> {
    let sr = SrFactor::square(2)?;
    let masks = [Image::new(2, 2, vec![1.0, 0.0, 1.0, 1.0])?, Image::new(2, 2, vec![0.0, 1.0, 1.0, 0.0])?];
    let c: SystemMatrix = BlockDiagSystemMatrix::from_masks(&masks, sr)?.into();
    let op = PpfpaOperator::new(&c, 1.0)?;
    let y = [0.55, 0.2];
    let mu = 0.01;

    let cm: Vec<Vec<f64>> = masks.iter().map(|m| m.data().iter().map(|v| v / 4.0).collect()).collect();
    let ct = |v: &[f64]| -> Vec<f64> { (0..4).map(|j| cm[0][j] * v[0] + cm[1][j] * v[1]).collect() };
    let cx_of = |x: &[f64]| -> Vec<f64> { cm.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect() };
    let gram: Vec<Vec<f64>> = (0..4)
        .map(|i| (0..4).map(|j| (i == j) as u8 as f64 + cm[0][i] * cm[0][j] + cm[1][i] * cm[1][j]).collect())
        .collect();
    let ginv = invert(&gram);

    let (z0, z1, d0, d1) = (y.to_vec(), ct(&y), [0.0; 2], [0.0; 4]);
    let lifted: Vec<f64> = z0.iter().zip(&d0).map(|(a, b)| a + b).collect();
    let rhs: Vec<f64> = ct(&lifted).iter().zip(&z1).zip(&d1).map(|((a, b), d)| a + b + d).collect();
    let x: Vec<f64> = ginv.iter().map(|r| r.iter().zip(&rhs).map(|(a, b)| a * b).sum()).collect();
    let cx = cx_of(&x);
    let s: Vec<f64> = cx.iter().zip(&d0).map(|(a, b)| a - b).collect();
    let dist = ((s[0] - y[0]).powi(2) + (s[1] - y[1]).powi(2)).sqrt();

    let mut worst = 0.0f64;
    let mut cases = Vec::new();
    for (case, eps) in [("interior", 2.0 * dist), ("boundary", dist), ("exterior", 0.5 * dist)] {
        let z0n: Vec<f64> =
            if dist <= eps { s.clone() } else { (0..2).map(|i| y[i] + eps * (s[i] - y[i]) / dist).collect() };
        let z1n: Vec<f64> = (0..4).map(|j| 0.9 * (x[j] - d1[j]) + mu).collect();
        let d0n: Vec<f64> = (0..2).map(|i| d0[i] + z0n[i] - cx[i]).collect();
        let d1n: Vec<f64> = (0..4).map(|j| d1[j] + z1n[j] - x[j]).collect();

        let solver = Ppfpa::new(&op, &y, &Shrink, eps, mu)?;
        let mut st = solver.initial_state()?;
        solver.step(&mut st)?;
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        let e = [diff(&st.x, &x), diff(&st.z0, &z0n), diff(&st.z1, &z1n), diff(&st.d0, &d0n), diff(&st.d1, &d1n)]
            .into_iter()
            .fold(0.0f64, f64::max);
        worst = worst.max(e);
        cases.push(case);
    }
    verdict(worst < 1e-12 && dist > 1e-3, format!("cases {}: max abs deviation {worst:.2e}", cases.join("/")))
}

fn ac5() -> Result<Verdict> {
    const H: f64 = 1e-5;
    let t0 = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut checks = 0;
    for seed in 0..25u64 {
        let x = random_tensor([2, 3, 6, 5], seed);
        let mut bn_eval = BatchNorm2d::new(3);
        bn_eval.running_mean.value = random_tensor([1, 3, 1, 1], seed + 50).into_data();
        bn_eval.running_var.value = random_tensor([1, 3, 1, 1], seed + 60).map(|v| v.abs() + 0.2).into_data();
        bn_eval.gamma.value = random_tensor([1, 3, 1, 1], seed + 70).into_data();
        let runs = [
            ("conv3x3", check_layer(&Conv2d::same3x3(3, 4, seed), &x, Mode::Train, H, seed)?),
            (
                "conv strided",
                check_layer(&Conv2d::new(3, 2, (3, 5), 3, 0, seed), &random_tensor([2, 3, 6, 10], seed), Mode::Train, H, seed)?,
            ),
            ("batchnorm train", check_layer(&BatchNorm2d::new(3), &x, Mode::Train, H, seed)?),
            ("batchnorm eval", check_layer(&bn_eval, &x, Mode::Eval, H, seed)?),
            ("leaky relu", check_layer(&LeakyRelu::default(), &x, Mode::Train, H, seed)?),
            ("softplus", check_layer(&Softplus::default(), &x, Mode::Train, H, seed)?),
            ("linear", check_layer(&Linear::new(9, 7, seed), &random_tensor([3, 9, 1, 1], seed), Mode::Train, H, seed)?),
            ("conv-bn-lrelu", check_layer(&ConvBnLrelu::same3x3(3, 4, seed), &x, Mode::Train, H, seed)?),
        ];
        for (name, reports) in runs {
            for r in reports {
                checks += 1;
                if r.max_rel_err > worst.0 {
                    worst = (r.max_rel_err, format!("{name} {} seed {seed}", r.target));
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        worst.0 < 1e-4 && secs < 60.0,
        format!("8 layers x 25 instances ({checks} gradients), worst {:.2e} ({}), {secs:.1} s", worst.0, worst.1),
    )
}

fn desk_training() -> TrainConfig {
    TrainConfig { batch_size: 8, ..TrainConfig::default() }
}

fn mean_psnr(refs: &[Image], tests: &[Image]) -> Result<f64> {
    Ok(refs.iter().zip(tests).map(|(r, t)| psnr(r, t, 1.0)).sum::<Result<f64>>()? / refs.len() as f64)
}

fn ac6() -> Result<Verdict> {
    let t0 = Instant::now();
    let sim = SimulationConfig::default();
    let ds = gen_dataset(&sim)?;
    let outcome =
        train_calib(&ds.split(Split::Train).samples, &ds.split(Split::Val).samples, &CalibNetConfig::default(), sim.sr()?, &desk_training())?;
    let test: Vec<_> = ds.split(Split::Test).samples.iter().collect();
    let (inputs, _) = batch_inputs(&test)?;
    let corrected = outcome.net.infer(&inputs)?.to_images()?;
    let targets: Vec<Image> = test.iter().map(|s| s.target.clone()).collect();
    let raw: Vec<Image> = test.iter().map(|s| s.measurement.clone()).collect();
    let (raw_db, cal_db) = (mean_psnr(&targets, &raw)?, mean_psnr(&targets, &corrected)?);
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        cal_db - raw_db >= 3.0 && secs < 1800.0,
        format!(
            "{} held-out: raw {raw_db:.2} dB, calibfpa {cal_db:.2} dB (gain {:.2} dB, best epoch {}), {secs:.0} s",
            test.len(),
            cal_db - raw_db,
            outcome.best_epoch
        ),
    )
}

fn cell_mean(records: &[EvalRecord], keep: impl Fn(&EvalRecord) -> bool) -> f64 {
    let (sum, n) = records.iter().filter(|r| keep(r)).fold((0.0, 0usize), |(s, n), r| (s + r.psnr_db * r.samples as f64, n + r.samples));
    sum / n as f64
}

fn ac7() -> Result<Verdict> {
    let t0 = Instant::now();
    let sim = SimulationConfig { radius_min: 2.5, radius_max: 8.5, seed: 70, ..SimulationConfig::default() };
    let ds = gen_dataset(&sim)?;
    let outcome =
        train_calib(&ds.split(Split::Train).samples, &ds.split(Split::Val).samples, &CalibNetConfig::default(), sim.sr()?, &desk_training())?;
    let grid = ExperimentGrid {
        methods: vec![CorrectionMethod::Calibfpa],
        bins: vec![RadiusBin::new(3)?, RadiusBin::new(4)?],
        snapshots: vec![1],
        input_psnrs: vec![sim.input_psnr],
        bin_offsets: vec![-2, 0, 2],
        samples: 12,
        reconstruct: false,
        seed: 71,
    };
    let recon = ReconConfig::default();
    let env = ExperimentEnv { sim: &sim, net: Some(&outcome.net), lucy_iters: 30, recon: &recon };
    let recs = run_matrix_of_experiments(&grid, &env)?;
    let by_offset = |off: isize| {
        cell_mean(&recs, |r| r.assumed_bin.map(|a| a.index() as isize - r.bin.index() as isize) == Some(off))
    };
    let (minus, matched, plus) = (by_offset(-2), by_offset(0), by_offset(2));
    let n: usize = recs.iter().filter(|r| r.assumed_bin == Some(r.bin)).map(|r| r.samples).sum();
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        matched >= minus && matched >= plus && n >= 20,
        format!("{n} samples in bins 3-4: matched {matched:.2} dB, bin-2 {minus:.2} dB, bin+2 {plus:.2} dB, {secs:.0} s"),
    )
}

fn ac8() -> Result<Verdict> {
    let sim = SimulationConfig::default();
    let grid = ExperimentGrid {
        methods: vec![CorrectionMethod::Raw],
        bins: RadiusBin::all().collect(),
        snapshots: vec![1],
        input_psnrs: vec![sim.input_psnr],
        bin_offsets: vec![0],
        samples: 16,
        reconstruct: false,
        seed: 80,
    };
    let recon = ReconConfig::default();
    let env = ExperimentEnv { sim: &sim, net: None, lucy_iters: 30, recon: &recon };
    let recs = run_matrix_of_experiments(&grid, &env)?;
    let means: Vec<f64> = recs.iter().map(|r| r.psnr_db).collect();
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let list: Vec<String> = means.iter().map(|v| format!("{v:.1}")).collect();
    verdict(decreasing && means.len() == 9, format!("raw dB by bin 0..8 (16 samples each): {}", list.join(" ")))
}

/// SSIM with the 2-D window summed explicitly at every valid position.
fn reference_ssim(a: &Image, b: &Image) -> f64 {
    let k = SSIM_WINDOW;
    let c = (k / 2) as f64;
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            win[i * k + j] = (-((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let (h, w) = a.shape();
    let mut acc = 0.0;
    let mut count = 0.0;
    for r in 0..=h - k {
        for q in 0..=w - k {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let g = win[i * k + j];
                    let (x, y) = (a.get(r + i, q + j), b.get(r + i, q + j));
                    mx += g * x;
                    my += g * y;
                    sxx += g * x * x;
                    syy += g * y * y;
                    sxy += g * x * y;
                }
            }
            let (vx, vy, cv) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            acc += ((2.0 * mx * my + c1) * (2.0 * cv + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    100.0 * acc / count
}

fn ac9() -> Result<Verdict> {
    let a = Image::from_fn(16, 16, |r, c| ((r * 16 + c) as f64 * 0.37).sin() * 0.5 + 0.5);
    let b = Image::from_fn(16, 16, |r, c| (((r * 16 + c) as f64 * 0.37).sin() * 0.5 + 0.5 + 0.03 * ((r * 7 + c * 3) % 5) as f64 - 0.06).clamp(0.0, 1.0));
    let mse: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64;
    let psnr_ref = 10.0 * (1.0 / mse).log10();
    let psnr_err = (psnr(&a, &b, 1.0)? - psnr_ref).abs();
    let ssim_err = (ssim(&a, &b)? - reference_ssim(&a, &b)).abs().max((ssim(&b, &a)? - reference_ssim(&b, &a)).abs());

    let clean: Vec<Image> = (0..4).map(|i| synthetic_scene(60, 60, 900 + i)).collect();
    let peak = clean.iter().map(Image::max).fold(0.0, f64::max);
    let mut worst_noise = 0.0f64;
    for target in [30.0, 45.0, 60.0] {
        let sigma = noise_sigma_for_psnr(&clean, target)?;
        let noisy: Vec<Image> =
            clean.iter().enumerate().map(|(i, x)| add_gaussian_noise(x, sigma, 40 + i as u64)).collect::<Result<_>>()?;
        let n: usize = clean.iter().map(Image::len).sum();
        let se: f64 = clean.iter().zip(&noisy).flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).powi(2))).sum();
        let measured = 10.0 * (peak * peak / (se / n as f64)).log10();
        worst_noise = worst_noise.max((measured - target).abs());
    }
    verdict(
        psnr_err < 1e-9 && ssim_err < 1e-6 && worst_noise < 0.5,
        format!("psnr dev {psnr_err:.1e} dB, ssim dev {ssim_err:.1e}, noise target dev {worst_noise:.3} dB over 14400 px"),
    )
}

fn hash_dir(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| calibfpa::Error::Io { path: d.clone(), source: e })? {
            let p = entry.map_err(|e| calibfpa::Error::Io { path: d.clone(), source: e })?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update(calibfpa::io::read_bytes(&f)?);
    }
    Ok(hex::encode(h.finalize()))
}

fn ac10() -> Result<Verdict> {
    let tmp = tempfile::tempdir().map_err(|e| calibfpa::Error::Io { path: "tmp".into(), source: e })?;
    let sim = SimulationConfig { train: 16, val: 4, test: 4, seed: 100, ..SimulationConfig::default() };
    let small = CalibNetConfig { channels: 8, fusion_layers: 2, ..CalibNetConfig::default() };
    let train = TrainConfig { epochs: 2, batch_size: 4, seed: 101, ..TrainConfig::default() };
    let mut hashes = Vec::new();
    for run in 0..2 {
        let root = tmp.path().join(format!("run{run}"));
        let ds = gen_dataset(&sim)?;
        ds.save(root.join("dataset"))?;
        let reloaded = Dataset::load(root.join("dataset"))?;
        let out = train_calib(&reloaded.split(Split::Train).samples, &reloaded.split(Split::Val).samples, &small, sim.sr()?, &train)?;
        out.net.save(root.join("net"))?;
        let _ = CalibNet::load(root.join("net"))?;
        let st = simulate_stack(&sim, RadiusBin::new(3)?, 5, 50.0, 102)?;
        let (x, _) = reconstruct(&st.system_matrix(&sim)?, &stack(&st.measurements), st.noise_sigma, &ReconConfig::default())?;
        Container::from_image(&x).write(root.join("recon").join("x.cfpa"))?;
        hashes.push([hash_dir(&root.join("dataset"))?, hash_dir(&root.join("net"))?, hash_dir(&root.join("recon"))?]);
    }
    let same = hashes[0] == hashes[1];
    let short: Vec<&str> = hashes[0].iter().map(|h| &h[..12]).collect();
    verdict(same, format!("sha256 dataset {} training {} reconstruction {} (two runs {})", short[0], short[1], short[2], if same { "identical" } else { "differ" }))
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Result<Verdict>); 10] = [
        ("AC1", "forward-model oracle", ac1),
        ("AC2", "block-diagonal equivalence and speed", ac2),
        ("AC3", "exact recovery", ac3),
        ("AC4", "single-iteration fidelity", ac4),
        ("AC5", "gradient suite", ac5),
        ("AC6", "calibration efficacy", ac6),
        ("AC7", "radius mismatch trend", ac7),
        ("AC8", "radius degradation trend", ac8),
        ("AC9", "metric fidelity", ac9),
        ("AC10", "determinism", ac10),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let (pass, detail) = match std::panic::catch_unwind(f) {
            Ok(Ok(v)) => (v.pass, v.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        failed += usize::from(!pass);
        println!("{id} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
