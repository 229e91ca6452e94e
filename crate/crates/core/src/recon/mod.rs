//! Plug-and-play ADMM reconstruction with an ℓ2-ball data constraint.
//!
//! [`Ppfpa`] alternates a regularised back-projection through the
//! precomputed `(I + CᵀC)⁻¹`, a projection of the predicted measurements
//! onto the noise ball around `y`, and a denoising step in image space.

mod tv;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use tv::{total_variation, tv_denoise, TvDenoiser, DEFAULT_MU, TV_ITERS, TV_STEP};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::linalg::norm2;
use crate::sysmat::{precompute_normal_inverse, NormalInverse, SystemMatrix};

/// Radial projection of `s` onto `{v : ‖v − y‖ ≤ ε}`.
pub fn prox_l2_ball(s: &[f64], y: &[f64], eps: f64) -> Result<Vec<f64>> {
    if s.len() != y.len() {
        return Err(Error::shape(format!("{} vs {} measurement entries", s.len(), y.len())));
    }
    if !(eps >= 0.0) {
        return Err(Error::invalid(format!("ball radius must be >= 0, got {eps}")));
    }
    let dist = s.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    if dist <= eps {
        return Ok(s.to_vec());
    }
    let scale = eps / dist;
    Ok(s.iter().zip(y).map(|(a, b)| b + scale * (a - b)).collect())
}

/// Noise-ball radius `multiplier · σ · √(mM)`.
pub fn set_epsilon_from_noise(sigma: f64, measurements: usize, multiplier: f64) -> Result<f64> {
    if !(sigma >= 0.0) || !(multiplier >= 0.0) {
        return Err(Error::invalid("sigma and multiplier must be >= 0"));
    }
    Ok(multiplier * sigma * (measurements as f64).sqrt())
}

/// Multipliers tried when choosing ε on validation data.
pub const EPSILON_GRID: [f64; 5] = [0.5, 0.75, 1.0, 1.25, 1.5];

/// Proximal operator of an implicit image prior.
pub trait Denoiser: Send + Sync {
    fn name(&self) -> &str;
    fn denoise(&self, v: &Image, mu: f64) -> Result<Image>;
}

/// Returns its input; turns the solver into constrained least squares.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn name(&self) -> &str {
        "identity"
    }

    fn denoise(&self, v: &Image, _mu: f64) -> Result<Image> {
        Ok(v.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingRule {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self { max_iter: 300, tol: 1e-5 }
    }
}

impl StoppingRule {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::invalid("stopping rule needs max_iter >= 1 and tol > 0"));
        }
        Ok(())
    }
}

/// Iterates of the solver; `z0`/`d0` live in measurement space, `z1`/`d1`
/// in image space.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x: Vec<f64>,
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
    pub d0: Vec<f64>,
    pub d1: Vec<f64>,
    pub iter: usize,
    /// `‖z0 − Cx‖` after the last step.
    pub residual_data: f64,
    /// `‖z1 − x‖` after the last step.
    pub residual_prior: f64,
}

/// Summary of a solver run, written next to its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub matrix_form: String,
    pub denoiser: String,
    pub epsilon: f64,
    pub mu: f64,
    pub data_weight: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual_data: f64,
    pub residual_prior: f64,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_multiplier: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PpfpaOutcome {
    /// Final iterate clamped to `[0, 1]`.
    pub image: Image,
    pub state: AdmmState,
    pub manifest: RunManifest,
}

/// Default weight of the data split relative to the prior split.
pub const DEFAULT_DATA_WEIGHT: f64 = 100.0;

/// Operator-side precomputation shared by every solve with the same `C`.
///
/// The solver works on the equivalent constraint `‖κCx − κy‖ ≤ κε`; the
/// weight `κ` leaves the feasible set unchanged and only changes how fast
/// the iterates settle. `κ = 1` runs the unweighted updates.
#[derive(Debug, Clone)]
pub struct PpfpaOperator {
    c: SystemMatrix,
    normal: NormalInverse,
    weight: f64,
}

impl PpfpaOperator {
    pub fn new(c: &SystemMatrix, data_weight: f64) -> Result<Self> {
        if !(data_weight > 0.0) || !data_weight.is_finite() {
            return Err(Error::invalid(format!("data weight must be positive, got {data_weight}")));
        }
        let c = if data_weight == 1.0 { c.clone() } else { c.scaled(data_weight) };
        let normal = precompute_normal_inverse(&c)?;
        Ok(Self { c, normal, weight: data_weight })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// The weighted operator `κC`.
    pub fn matrix(&self) -> &SystemMatrix {
        &self.c
    }
}

/// One reconstruction problem: measurements, operator and prior.
pub struct Ppfpa<'a> {
    op: &'a PpfpaOperator,
    /// `κy`.
    y: Vec<f64>,
    y_norm: f64,
    denoiser: &'a dyn Denoiser,
    /// `κε`.
    eps: f64,
    mu: f64,
}

impl<'a> Ppfpa<'a> {
    pub fn new(op: &'a PpfpaOperator, y: &[f64], denoiser: &'a dyn Denoiser, eps: f64, mu: f64) -> Result<Self> {
        if y.len() != op.c.nrows() {
            return Err(Error::shape(format!("y has {} entries, C has {} rows", y.len(), op.c.nrows())));
        }
        if !(eps >= 0.0) || !(mu >= 0.0) {
            return Err(Error::invalid("epsilon and mu must be >= 0"));
        }
        let k = op.weight;
        Ok(Self { op, y: y.iter().map(|v| k * v).collect(), y_norm: norm2(y), denoiser, eps: k * eps, mu })
    }

    /// `z0 = y`, `z1 = Cᵀy`, zero multipliers.
    pub fn initial_state(&self) -> Result<AdmmState> {
        let mut z1 = self.op.c.apply_adjoint(&self.y)?;
        let k2 = self.op.weight * self.op.weight;
        z1.iter_mut().for_each(|v| *v /= k2);
        Ok(self.warm_state(z1.clone(), z1))
    }

    /// `z0 = y`, `z1` as given, zero multipliers, starting iterate `x`.
    pub fn warm_state(&self, x: Vec<f64>, z1: Vec<f64>) -> AdmmState {
        let n = self.op.c.ncols();
        AdmmState {
            x,
            z0: self.y.clone(),
            z1,
            d0: vec![0.0; self.y.len()],
            d1: vec![0.0; n],
            iter: 0,
            residual_data: f64::INFINITY,
            residual_prior: f64::INFINITY,
        }
    }

    /// One ADMM iteration. `z0` and `d0` are kept in weighted units.
    pub fn step(&self, st: &mut AdmmState) -> Result<()> {
        let c = &self.op.c;
        let (n1, n2) = c.hr_shape();
        let lifted: Vec<f64> = st.z0.iter().zip(&st.d0).map(|(a, b)| a + b).collect();
        let mut rhs = c.apply_adjoint(&lifted)?;
        for ((r, z), d) in rhs.iter_mut().zip(&st.z1).zip(&st.d1) {
            *r += z + d;
        }
        st.x = self.op.normal.apply(&rhs)?;
        st.iter += 1;
        if st.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite iterate at iteration {}", st.iter)));
        }

        let cx = c.apply(&st.x)?;
        let shifted: Vec<f64> = cx.iter().zip(&st.d0).map(|(a, b)| a - b).collect();
        st.z0 = prox_l2_ball(&shifted, &self.y, self.eps)?;
        let v = Image::new(n1, n2, st.x.iter().zip(&st.d1).map(|(a, b)| a - b).collect())?;
        st.z1 = self.denoiser.denoise(&v, self.mu)?.into_data();

        for ((d, z), c) in st.d0.iter_mut().zip(&st.z0).zip(&cx) {
            *d += z - c;
        }
        for ((d, z), x) in st.d1.iter_mut().zip(&st.z1).zip(&st.x) {
            *d += z - x;
        }
        st.residual_data =
            norm2(&st.z0.iter().zip(&cx).map(|(a, b)| a - b).collect::<Vec<_>>()) / self.op.weight;
        st.residual_prior = norm2(&st.z1.iter().zip(&st.x).map(|(a, b)| a - b).collect::<Vec<_>>());
        Ok(())
    }

    /// Data residual below `tol (1 + ‖y‖)` and prior residual below
    /// `tol (1 + ‖x‖)`, both in unweighted units.
    pub fn converged(&self, st: &AdmmState, tol: f64) -> bool {
        st.residual_data < tol * (1.0 + self.y_norm) && st.residual_prior < tol * (1.0 + norm2(&st.x))
    }

    pub fn run(&self, stop: &StoppingRule) -> Result<PpfpaOutcome> {
        self.run_from(self.initial_state()?, stop)
    }

    pub fn run_from(&self, mut st: AdmmState, stop: &StoppingRule) -> Result<PpfpaOutcome> {
        stop.validate()?;
        let started = Instant::now();
        let mut converged = false;
        while st.iter < stop.max_iter {
            self.step(&mut st)?;
            if self.converged(&st, stop.tol) {
                converged = true;
                break;
            }
        }
        let (n1, n2) = self.op.c.hr_shape();
        let image = Image::new(n1, n2, st.x.clone())?.clamp(0.0, 1.0);
        let manifest = RunManifest {
            matrix_form: self.op.c.form_name().into(),
            denoiser: self.denoiser.name().into(),
            epsilon: self.eps / self.op.weight,
            mu: self.mu,
            data_weight: self.op.weight,
            iterations: st.iter,
            converged,
            residual_data: st.residual_data,
            residual_prior: st.residual_prior,
            wall_time_s: started.elapsed().as_secs_f64(),
            epsilon_multiplier: None,
        };
        Ok(PpfpaOutcome { image, state: st, manifest })
    }
}

/// Solver settings besides the prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpfpaConfig {
    pub mu: f64,
    /// Multiplier on `σ√(mM)` giving the ball radius.
    pub epsilon_multiplier: f64,
    pub data_weight: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PpfpaConfig {
    fn default() -> Self {
        let stop = StoppingRule::default();
        Self {
            mu: DEFAULT_MU,
            epsilon_multiplier: 1.0,
            data_weight: DEFAULT_DATA_WEIGHT,
            max_iter: stop.max_iter,
            tol: stop.tol,
        }
    }
}

impl PpfpaConfig {
    pub fn stopping_rule(&self) -> StoppingRule {
        StoppingRule { max_iter: self.max_iter, tol: self.tol }
    }
}

/// Convenience wrapper: precomputes the operator and runs to completion.
pub fn ppfpa(
    c: &SystemMatrix,
    y: &[f64],
    denoiser: &dyn Denoiser,
    eps: f64,
    mu: f64,
    data_weight: f64,
    stop: &StoppingRule,
) -> Result<PpfpaOutcome> {
    let op = PpfpaOperator::new(c, data_weight)?;
    Ppfpa::new(&op, y, denoiser, eps, mu)?.run(stop)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReconMethod {
    LeastSquares,
    #[default]
    Ppfpa,
}

impl std::fmt::Display for ReconMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReconMethod::LeastSquares => "least-squares",
            ReconMethod::Ppfpa => "ppfpa",
        })
    }
}

impl std::str::FromStr for ReconMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least-squares" => Ok(Self::LeastSquares),
            "ppfpa" => Ok(Self::Ppfpa),
            other => Err(Error::invalid(format!("unknown reconstruction method {other:?} (least-squares|ppfpa)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub method: ReconMethod,
    pub matrix: crate::sysmat::MatrixForm,
    /// Include the Airy blur in a dense `C` (reconstruct raw measurements
    /// against the blurred model).
    pub model_blur: bool,
    /// Ridge weight of the least-squares solve.
    pub ridge: f64,
    pub ppfpa: PpfpaConfig,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            method: ReconMethod::default(),
            matrix: crate::sysmat::MatrixForm::default(),
            model_blur: false,
            ridge: crate::sysmat::DEFAULT_RIDGE,
            ppfpa: PpfpaConfig::default(),
        }
    }
}

/// Reconstructs with the configured method; PP-FPA uses the TV prior and
/// `ε = multiplier · σ · √(mM)`. Returns the clamped image and, for
/// PP-FPA, the run manifest.
pub fn reconstruct(
    c: &SystemMatrix,
    y: &[f64],
    noise_sigma: f64,
    cfg: &ReconConfig,
) -> Result<(Image, Option<RunManifest>)> {
    match cfg.method {
        ReconMethod::LeastSquares => {
            Ok((crate::sysmat::least_squares_solve(c, y, cfg.ridge)?.clamp(0.0, 1.0), None))
        }
        ReconMethod::Ppfpa => {
            let p = &cfg.ppfpa;
            let eps = set_epsilon_from_noise(noise_sigma, y.len(), p.epsilon_multiplier)?;
            let mut out = ppfpa(c, y, &TvDenoiser, eps, p.mu, p.data_weight, &p.stopping_rule())?;
            out.manifest.epsilon_multiplier = Some(p.epsilon_multiplier);
            Ok((out.image, Some(out.manifest)))
        }
    }
}

#[cfg(test)]
mod tests;
