//! Central finite-difference checks of analytic gradients.

use rand::Rng;

use super::{Layer, Mode, Tensor4};
use crate::error::Result;
use crate::seeds;

/// Central-difference gradient of a scalar function.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Gradients whose magnitude stays below this are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-4;

/// `max |a - b| / max(max |a|, max |b|, ABS_FLOOR)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(ABS_FLOOR, |m, v| m.max(v.abs()));
    analytic.iter().zip(numeric).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub target: String,
    pub max_rel_err: f64,
}

pub fn random_tensor(dims: [usize; 4], seed: u64) -> Tensor4 {
    let mut rng = seeds::rng(seed);
    let n = dims.iter().product();
    Tensor4::new(dims[0], dims[1], dims[2], dims[3], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("positive dims")
}

/// Checks input and parameter gradients of `layer` for the scalar loss
/// `sum(weights . layer(x))` with random `weights`.
pub fn check_layer<L: Layer + Clone>(layer: &L, x: &Tensor4, mode: Mode, h: f64, seed: u64) -> Result<Vec<GradReport>> {
    let mut recorded = layer.clone();
    let y = recorded.forward(x, mode)?;
    let weights = random_tensor(y.dims(), seed);
    let dx = recorded.backward(&weights)?;

    let loss_with = |l: &mut L, input: &Tensor4| -> f64 {
        let out = l.forward(input, mode).expect("forward");
        out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };

    let mut reports = Vec::new();
    let num_dx = numeric_grad(
        |v| {
            let t = Tensor4::new(x.batch(), x.channels(), x.height(), x.width(), v.to_vec()).unwrap();
            loss_with(&mut layer.clone(), &t)
        },
        x.data(),
        h,
    );
    reports.push(GradReport { target: "input".into(), max_rel_err: max_rel_err(dx.data(), &num_dx) });

    let n_params = layer.clone().params_mut().len();
    for pi in 0..n_params {
        let analytic = recorded.params_mut()[pi].grad.clone();
        let base = layer.clone().params_mut()[pi].value.clone();
        let numeric = numeric_grad(
            |v| {
                let mut l = layer.clone();
                l.params_mut()[pi].value.copy_from_slice(v);
                loss_with(&mut l, x)
            },
            &base,
            h,
        );
        reports.push(GradReport { target: format!("param{pi}"), max_rel_err: max_rel_err(&analytic, &numeric) });
    }
    Ok(reports)
}
