use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::aperture::{generate_aperture, SnapshotSchedule};
use crate::optics::SrFactor;
use crate::pipeline::{psnr, synthetic_scene};
use crate::seeds;
use crate::sysmat::{build_block_diag, least_squares_solve, stack, BlockDiagSystemMatrix};

#[test]
fn prox_examples() {
    let y = [1.0, 2.0, 3.0];
    let s = [1.1, 2.0, 2.9];
    assert_eq!(prox_l2_ball(&s, &y, 1.0).unwrap(), s.to_vec());
    assert_eq!(prox_l2_ball(&s, &y, 0.0).unwrap(), y.to_vec());
    let p = prox_l2_ball(&[3.0, 4.0], &[0.0, 0.0], 1.0).unwrap();
    assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
    assert!(prox_l2_ball(&s, &y[..2], 1.0).is_err());
    assert!(prox_l2_ball(&s, &y, -1.0).is_err());
}

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-10.0f64..10.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn prox_properties(s1 in vec_strategy(6), s2 in vec_strategy(6), y in vec_strategy(6), eps in 0.0f64..8.0) {
        let p1 = prox_l2_ball(&s1, &y, eps).unwrap();
        let p2 = prox_l2_ball(&s2, &y, eps).unwrap();
        let again = prox_l2_ball(&p1, &y, eps).unwrap();
        for (a, b) in again.iter().zip(&p1) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        prop_assert!(d(&p1, &y) <= eps + 1e-12);
        prop_assert!(d(&p1, &p2) <= d(&s1, &s2) + 1e-12);
    }
}

#[test]
fn epsilon_closed_form() {
    assert_eq!(set_epsilon_from_noise(0.0, 500, 1.0).unwrap(), 0.0);
    assert_eq!(set_epsilon_from_noise(1.0, 100, 1.0).unwrap(), 10.0);
    assert_eq!(set_epsilon_from_noise(1.0, 100, 1.5).unwrap(), 15.0);
    assert!(set_epsilon_from_noise(-1.0, 100, 1.0).is_err());
}

/// Deterministic stand-in prior used by the line-by-line reference.
struct Shrink(f64);

impl Denoiser for Shrink {
    fn name(&self) -> &str {
        "shrink"
    }
    fn denoise(&self, v: &Image, mu: f64) -> crate::Result<Image> {
        Ok(v.map(|x| self.0 * x + mu))
    }
}

fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(p, q)| p * q).sum()).collect()
}

fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// Gauss-Jordan inverse of a small matrix.
fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> =
        a.iter().enumerate().map(|(i, r)| r.iter().copied().chain((0..n).map(|j| (i == j) as u8 as f64)).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        m[col].iter_mut().for_each(|v| *v /= p);
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                let pivot_row = m[col].clone();
                m[r].iter_mut().zip(&pivot_row).for_each(|(v, q)| *v -= f * q);
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

#[test]
fn one_iteration_matches_scripted_reference() {
    let sr = SrFactor::square(2).unwrap();
    let masks = [
        Image::new(2, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap(),
        Image::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
    ];
    let c: SystemMatrix = BlockDiagSystemMatrix::from_masks(&masks, sr).unwrap().into();
    let op = PpfpaOperator::new(&c, 1.0).unwrap();
    let y = vec![0.55, 0.2];
    let prior = Shrink(0.9);
    let mu = 0.01;

    // explicit 2x4 matrix, row i = snapshot i
    let cm: Vec<Vec<f64>> = masks.iter().map(|m| m.data().iter().map(|v| v / 4.0).collect()).collect();
    let ct = transpose(&cm);
    let mut gram: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| (i == j) as u8 as f64).collect()).collect();
    for i in 0..4 {
        for j in 0..4 {
            gram[i][j] += (0..2).map(|r| cm[r][i] * cm[r][j]).sum::<f64>();
        }
    }
    let ginv = invert(&gram);

    // line 0: initialisation
    let z0 = y.clone();
    let z1 = mat_vec(&ct, &y);
    let (d0, d1) = (vec![0.0; 2], vec![0.0; 4]);
    // line 1: x-update
    let ctz: Vec<f64> = mat_vec(&ct, &z0.iter().zip(&d0).map(|(a, b)| a + b).collect::<Vec<_>>());
    let rhs: Vec<f64> = (0..4).map(|j| ctz[j] + z1[j] + d1[j]).collect();
    let x = mat_vec(&ginv, &rhs);
    // line 2: data projection input
    let cx = mat_vec(&cm, &x);
    let s: Vec<f64> = cx.iter().zip(&d0).map(|(a, b)| a - b).collect();
    let dist = ((s[0] - y[0]).powi(2) + (s[1] - y[1]).powi(2)).sqrt();
    assert!(dist > 1e-3, "toy must leave the ball centre");

    for (case, eps) in [("interior", 2.0 * dist), ("boundary", dist), ("exterior", 0.5 * dist)] {
        let z0n: Vec<f64> = if dist <= eps {
            s.clone()
        } else {
            (0..2).map(|i| y[i] + eps * (s[i] - y[i]) / dist).collect()
        };
        // line 3: prior step
        let z1n: Vec<f64> = (0..4).map(|j| 0.9 * (x[j] - d1[j]) + mu).collect();
        // lines 4-5: multipliers
        let d0n: Vec<f64> = (0..2).map(|i| d0[i] + z0n[i] - cx[i]).collect();
        let d1n: Vec<f64> = (0..4).map(|j| d1[j] + z1n[j] - x[j]).collect();

        let solver = Ppfpa::new(&op, &y, &prior, eps, mu).unwrap();
        let mut st = solver.initial_state().unwrap();
        solver.step(&mut st).unwrap();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(p, q)| (p - q).abs() < 1e-12);
        assert!(close(&st.x, &x), "{case} x");
        assert!(close(&st.z0, &z0n), "{case} z0");
        assert!(close(&st.z1, &z1n), "{case} z1");
        assert!(close(&st.d0, &d0n), "{case} d0");
        assert!(close(&st.d1, &d1n), "{case} d1");
    }
}

struct Toy {
    scene: Image,
    c: SystemMatrix,
}

/// Full-raster (m = s) toy whose blocks all have full rank.
fn determined_toy(n: usize, s: usize) -> Toy {
    let sr = SrFactor::square(s).unwrap();
    let schedule = SnapshotSchedule::raster(s * s).unwrap();
    let open = (0.8 * (s * s) as f64).round() / (s * s) as f64;
    for seed in 0..10_000 {
        let ap = generate_aperture(n, n, sr, open, seed).unwrap();
        let b = build_block_diag(&schedule, &ap, sr).unwrap();
        if b.singular_blocks().is_empty() {
            return Toy { scene: synthetic_scene(n, n, 7), c: b.into() };
        }
    }
    panic!("no full-rank aperture found")
}

#[test]
fn identity_prior_recovers_determined_system() {
    let toy = determined_toy(9, 3);
    let y = toy.c.apply(toy.scene.data()).unwrap();
    let stop = StoppingRule { max_iter: 5000, tol: 1e-12 };
    let out = ppfpa(&toy.c, &y, &IdentityDenoiser, 0.0, 0.0, 1e4, &stop).unwrap();
    let ls = least_squares_solve(&toy.c, &y, 0.0).unwrap();
    let rel = |a: &[f64]| {
        let e: f64 = a.iter().zip(toy.scene.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        e / norm2(toy.scene.data())
    };
    assert!(rel(&out.state.x) < 1e-6, "{}", rel(&out.state.x));
    assert!(rel(ls.data()) < 1e-6);
    assert!(psnr(&toy.scene, &out.image, 1.0).unwrap() > 80.0);
}

#[test]
fn fixed_point_start_stops_immediately() {
    let toy = determined_toy(9, 3);
    let y = toy.c.apply(toy.scene.data()).unwrap();
    let op = PpfpaOperator::new(&toy.c, 1.0).unwrap();
    let solver = Ppfpa::new(&op, &y, &IdentityDenoiser, 0.0, 0.0).unwrap();
    let st = solver.warm_state(toy.scene.data().to_vec(), toy.scene.data().to_vec());
    let out = solver.run_from(st, &StoppingRule::default()).unwrap();
    assert!(out.manifest.converged);
    assert!(out.manifest.iterations <= 2);
    let cx = toy.c.apply(&out.state.x).unwrap();
    let r: f64 = cx.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(r < 1e-12);
}

fn noisy_toy() -> (Toy, Vec<f64>, f64) {
    let sr = SrFactor::square(3).unwrap();
    let schedule = SnapshotSchedule::raster(4).unwrap();
    let ap = generate_aperture(30, 30, sr, 7.0 / 9.0, 3).unwrap();
    let c: SystemMatrix = build_block_diag(&schedule, &ap, sr).unwrap().into();
    let scene = synthetic_scene(30, 30, 1);
    let sigma = 0.01;
    let mut rng = seeds::rng(5);
    let y: Vec<f64> = c.apply(scene.data()).unwrap().into_iter().map(|v| v + sigma * (rng.random::<f64>() - 0.5) * 3.46).collect();
    let eps = set_epsilon_from_noise(sigma, y.len(), 1.0).unwrap();
    (Toy { scene, c }, y, eps)
}

#[test]
fn residuals_decrease_across_checkpoints() {
    let (toy, y, eps) = noisy_toy();
    let op = PpfpaOperator::new(&toy.c, DEFAULT_DATA_WEIGHT).unwrap();
    let solver = Ppfpa::new(&op, &y, &TvDenoiser, eps, DEFAULT_MU).unwrap();
    let mut st = solver.initial_state().unwrap();
    let mut seen = Vec::new();
    while st.iter < 100 {
        solver.step(&mut st).unwrap();
        if [10, 50, 100].contains(&st.iter) {
            seen.push(st.residual_data.max(st.residual_prior));
        }
    }
    assert!(seen.windows(2).all(|w| w[1] <= w[0]), "{seen:?}");
}

#[test]
fn converged_output_is_feasible_and_deterministic() {
    let (toy, y, eps) = noisy_toy();
    let stop = StoppingRule { max_iter: 2000, tol: 1e-5 };
    let a = ppfpa(&toy.c, &y, &TvDenoiser, eps, DEFAULT_MU, DEFAULT_DATA_WEIGHT, &stop).unwrap();
    assert!(a.manifest.converged);
    let cx = toy.c.apply(&a.state.x).unwrap();
    let r: f64 = cx.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    assert!(r <= eps + stop.tol * (1.0 + norm2(&y)), "{r} vs {eps}");
    assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let b = ppfpa(&toy.c, &y, &TvDenoiser, eps, DEFAULT_MU, DEFAULT_DATA_WEIGHT, &stop).unwrap();
    assert_eq!(a.image, b.image);
    let raw = least_squares_solve(&toy.c, &y, 1e-6).unwrap().clamp(0.0, 1.0);
    assert!(psnr(&toy.scene, &a.image, 1.0).unwrap() > psnr(&toy.scene, &raw, 1.0).unwrap());
}

#[test]
fn rejects_bad_setup() {
    let toy = determined_toy(9, 3);
    let op = PpfpaOperator::new(&toy.c, 1.0).unwrap();
    let y = stack(&toy.c.unstack(&vec![0.0; toy.c.nrows()]).unwrap());
    assert!(Ppfpa::new(&op, &y[1..], &IdentityDenoiser, 0.0, 0.0).is_err());
    assert!(Ppfpa::new(&op, &y, &IdentityDenoiser, -1.0, 0.0).is_err());
    assert!(PpfpaOperator::new(&toy.c, 0.0).is_err());
    assert!(StoppingRule { max_iter: 0, tol: 1.0 }.validate().is_err());
}

#[test]
fn weight_changes_speed_not_solution() {
    let toy = determined_toy(9, 3);
    let y = toy.c.apply(toy.scene.data()).unwrap();
    let stop = StoppingRule { max_iter: 100_000, tol: 1e-13 };
    let slow = ppfpa(&toy.c, &y, &IdentityDenoiser, 0.0, 0.0, 100.0, &stop).unwrap();
    let fast = ppfpa(&toy.c, &y, &IdentityDenoiser, 0.0, 0.0, 1e4, &stop).unwrap();
    assert!(fast.manifest.iterations < slow.manifest.iterations);
    let gap = slow.state.x.iter().zip(&fast.state.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-6, "{gap}");
}
