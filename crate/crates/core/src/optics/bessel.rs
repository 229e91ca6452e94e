//! First-kind Bessel function of order one.
//!
//! Small arguments use the ascending power series; large arguments use the
//! Hankel asymptotic expansion truncated at its smallest term. The switch point
//! keeps both branches below 1e-10 absolute error.

use std::f64::consts::PI;

/// First zero of J1.
pub const J1_FIRST_ZERO: f64 = 3.831_705_970_207_512;

const SERIES_LIMIT: f64 = 12.0;

pub fn bessel_j1(t: f64) -> f64 {
    if t < 0.0 {
        return -bessel_j1(-t);
    }
    if t < SERIES_LIMIT {
        series(t)
    } else {
        asymptotic(t)
    }
}

fn series(t: f64) -> f64 {
    let half = 0.5 * t;
    let q = -half * half;
    let mut term = half;
    let mut sum = term;
    let mut k = 0.0;
    loop {
        term *= q / ((k + 1.0) * (k + 2.0));
        sum += term;
        k += 1.0;
        if term.abs() <= 1e-17 * sum.abs().max(1e-300) && k > half {
            break;
        }
        if k > 200.0 {
            break;
        }
    }
    sum
}

fn asymptotic(t: f64) -> f64 {
    // a_k = prod_{j=1..k} (4 - (2j-1)^2) / (k! 8^k)
    let mut p = 0.0;
    let mut q = 0.0;
    let mut a = 1.0;
    let mut prev = f64::INFINITY;
    for k in 0..60 {
        let term = a / t.powi(k as i32);
        if term.abs() > prev {
            break;
        }
        prev = term.abs();
        // P collects even k with alternating signs, Q the odd k.
        match k % 4 {
            0 => p += term,
            1 => q += term,
            2 => p -= term,
            _ => q -= term,
        }
        if term.abs() < 1e-17 {
            break;
        }
        let j = (k + 1) as f64;
        a *= (4.0 - (2.0 * j - 1.0).powi(2)) / (j * 8.0);
    }
    let chi = t - 0.75 * PI;
    (2.0 / (PI * t)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// Normalised Airy intensity `(2 J1(t) / t)^2`, equal to 1 at the origin.
pub fn airy_intensity(t: f64) -> f64 {
    if t.abs() < 1e-8 {
        return 1.0;
    }
    let v = 2.0 * bessel_j1(t) / t;
    v * v
}
