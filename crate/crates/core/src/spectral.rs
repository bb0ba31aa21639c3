//! Fourier-side numerics: Dawson's integral, the closed-form transform of
//! `q1(x) exp(-|x|^2 / 4)`, skew maps and magnitude floors.
//!
//! Transforms use the convention `F(xi) = int f(x) exp(-i <xi, x>) dx` with no
//! `2 pi` normalization. `q1(x)` is `x_1` on the orthant `x_1 >= 0`,
//! `x_j <= 0 (j >= 2)` and zero elsewhere.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::integrate_complex;

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Rybicki step and term count; the discretization error is about
/// `exp(-(pi / 2h)^2)`, far below double precision.
const RYBICKI_H: f64 = 0.2;
const RYBICKI_TERMS: usize = 20;

/// Default lower threshold on frequency coordinates for the asymptotic floors.
pub const DEFAULT_THRESHOLD: f64 = 8.0;

/// Dawson's integral `exp(-x^2) int_0^x exp(t^2) dt`.
pub fn dawson(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax < 0.5 {
        dawson_series(ax)
    } else if ax > 50.0 {
        dawson_asymptotic(ax)
    } else {
        dawson_rybicki(ax)
    };
    if x.is_sign_negative() {
        -v
    } else {
        v
    }
}

fn dawson_series(x: f64) -> f64 {
    // sum_n (-2 x^2)^n / (2n+1)!!
    let y = -2.0 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..40 {
        term *= y / (2 * n + 1) as f64;
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    x * sum
}

fn dawson_asymptotic(x: f64) -> f64 {
    // (1/2x) sum_n (2n-1)!! / (2x^2)^n
    let y = 1.0 / (2.0 * x * x);
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..12 {
        term *= (2 * n - 1) as f64 * y;
        sum += term;
    }
    sum / (2.0 * x)
}

fn dawson_rybicki(x: f64) -> f64 {
    let h = RYBICKI_H;
    let n0 = 2.0 * (0.5 * x / h).round();
    let xp = x - n0 * h;
    let mut e1 = (2.0 * xp * h).exp();
    let e2 = e1 * e1;
    let mut d1 = n0 + 1.0;
    let mut d2 = d1 - 2.0;
    let mut sum = 0.0;
    for i in 0..RYBICKI_TERMS {
        let c = (-(((2 * i + 1) as f64) * h).powi(2)).exp();
        sum += c * (e1 / d1 + 1.0 / (d2 * e1));
        d1 += 2.0;
        d2 -= 2.0;
        e1 *= e2;
    }
    FRAC_1_SQRT_PI * (-xp * xp).exp() * sum
}

/// `int_0^inf t exp(-t^2/4) exp(-i xi t) dt`.
pub fn first_factor(xi: f64) -> Complex64 {
    Complex64::new(
        2.0 - 4.0 * xi * dawson(xi),
        -2.0 * PI.sqrt() * xi * (-xi * xi).exp(),
    )
}

/// `int_{-inf}^0 exp(-t^2/4) exp(-i xi t) dt`.
pub fn rest_factor(xi: f64) -> Complex64 {
    Complex64::new(PI.sqrt() * (-xi * xi).exp(), 2.0 * dawson(xi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint {
    pub xi: Vec<f64>,
    pub value: Complex64,
    pub factor_first: Complex64,
    pub factors_rest: Vec<Complex64>,
}

impl SpectralPoint {
    /// Component of `value` along the unit complex direction `-i^(d-1)`.
    pub fn direction_component(&self) -> f64 {
        let dir = -Complex64::i().powu(self.xi.len() as u32 - 1);
        (self.value * dir.conj()).re
    }
}

/// Closed-form transform of `q1(x) exp(-|x|^2 / 4)` at `xi`.
pub fn q1_transform(xi: &[f64]) -> Result<SpectralPoint> {
    let Some((&x1, rest)) = xi.split_first() else {
        return Err(Error::Domain("frequency vector must be nonempty".into()));
    };
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("frequency must be finite".into()));
    }
    let factor_first = first_factor(x1);
    let factors_rest: Vec<Complex64> = rest.iter().map(|&x| rest_factor(x)).collect();
    let value = factors_rest.iter().fold(factor_first, |acc, f| acc * f);
    Ok(SpectralPoint {
        xi: xi.to_vec(),
        value,
        factor_first,
        factors_rest,
    })
}

/// Upper bound `2 pi^((d-1)/2)` on `|q1_transform|`.
pub fn magnitude_bound(d: usize) -> f64 {
    2.0 * PI.powf((d as f64 - 1.0) / 2.0)
}

/// `(1 / xi_1^2) prod_{j >= 2} 1 / xi_j`.
pub fn direction_floor(xi: &[f64]) -> f64 {
    xi[1..].iter().fold(1.0 / (xi[0] * xi[0]), |acc, x| acc / x)
}

/// Truncated-integral oracle for `q1_transform`, built independently from
/// numerically integrated 1-D factors.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleTransform {
    pub value: Complex64,
    pub factor_first: Complex64,
    pub factors_rest: Vec<Complex64>,
    /// Bound on the error from truncating each factor at `T`, propagated
    /// through the product.
    pub truncation_bound: f64,
    pub quadrature_error: f64,
}

pub fn quadrature_transform_oracle(xi: &[f64], t: f64, tol: f64) -> Result<OracleTransform> {
    let d = xi.len();
    if d == 0 || d > 3 {
        return Err(Error::Domain(format!(
            "quadrature oracle supports 1 <= d <= 3, got {d}"
        )));
    }
    if !(t >= 8.0) {
        return Err(Error::Domain("truncation T must be at least 8".into()));
    }
    let x1 = xi[0];
    let (factor_first, e1) = integrate_complex(
        |s| Complex64::from_polar(s * (-s * s / 4.0).exp(), -x1 * s),
        0.0,
        t,
        tol,
        0.0,
    )?;
    let mut factors_rest = Vec::with_capacity(d - 1);
    let mut quad_err = e1;
    for &xj in &xi[1..] {
        let (f, e) = integrate_complex(
            |s| Complex64::from_polar((-s * s / 4.0).exp(), -xj * s),
            -t,
            0.0,
            tol,
            0.0,
        )?;
        factors_rest.push(f);
        quad_err += e;
    }
    let tail = (-t * t / 4.0).exp();
    let first_tail = 2.0 * tail;
    let rest_tail = 2.0 / t * tail;
    // |prod (f_j + e_j) - prod f_j| with |f_1| <= 2, |f_j| <= sqrt(pi)
    let truncation_bound = (2.0 + first_tail) * (PI.sqrt() + rest_tail).powi(d as i32 - 1)
        - 2.0 * PI.sqrt().powi(d as i32 - 1);
    let value = factors_rest.iter().fold(factor_first, |acc, f| acc * f);
    Ok(OracleTransform {
        value,
        factor_first,
        factors_rest,
        truncation_bound,
        quadrature_error: quad_err,
    })
}

/// Volume-preserving shear that subtracts coordinate `direction` from all others.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkewMap {
    pub d: usize,
    pub direction: usize,
}

impl SkewMap {
    pub fn new(d: usize, direction: usize) -> Result<Self> {
        if direction >= d {
            return Err(Error::Domain(format!(
                "skew direction {direction} out of range for d = {d}"
            )));
        }
        Ok(Self { d, direction })
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Input(format!(
                "expected a vector of length {}, got {}",
                self.d,
                x.len()
            )));
        }
        Ok(())
    }

    /// `x -> (x_j - x_i)_{j != i}` with `x_i` kept.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let xi = x[self.direction];
        Ok(x
            .iter()
            .enumerate()
            .map(|(j, &v)| if j == self.direction { v } else { v - xi })
            .collect())
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check(y)?;
        let yi = y[self.direction];
        Ok(y
            .iter()
            .enumerate()
            .map(|(j, &v)| if j == self.direction { v } else { v + yi })
            .collect())
    }

    /// `S^{-T} xi`: coordinate `i` becomes the sum of all coordinates.
    pub fn inverse_transpose(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.check(xi)?;
        let total: f64 = xi.iter().sum();
        let mut out = xi.to_vec();
        out[self.direction] = total;
        Ok(out)
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.d)
            .map(|r| {
                let mut row = vec![0.0; self.d];
                row[r] = 1.0;
                if r != self.direction {
                    row[self.direction] = -1.0;
                }
                row
            })
            .collect()
    }
}

/// Admissible frequency box `[c d, b]^d` for [`big_fourier_floor`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBox {
    pub c: f64,
    pub b: f64,
}

impl FrequencyBox {
    pub fn new(c: f64, b: f64) -> Self {
        Self { c, b }
    }

    pub fn contains(&self, xi: &[f64]) -> bool {
        let lo = self.c * xi.len() as f64;
        xi.iter().all(|&x| x >= lo && x <= self.b)
    }
}

/// Floor contributed by component `m`: `(1 / (sum xi)^2) prod_{j != m} 1 / xi_j`.
pub fn big_fourier_component(xi: &[f64], m: usize) -> f64 {
    let total: f64 = xi.iter().sum();
    xi.iter()
        .enumerate()
        .filter(|&(j, _)| j != m)
        .fold(1.0 / (total * total), |acc, (_, x)| acc / x)
}

/// Sum of the `d` symmetric components. The `2^{-O(d)}` factor of the floor has no
/// explicit constant, so only the constant-free core is returned.
pub fn big_fourier_floor(xi: &[f64], bounds: FrequencyBox) -> Result<f64> {
    if xi.is_empty() {
        return Err(Error::Domain("frequency vector must be nonempty".into()));
    }
    if !bounds.contains(xi) {
        return Err(Error::Domain(format!(
            "frequency outside admissible box [{}, {}]^{}",
            bounds.c * xi.len() as f64,
            bounds.b,
            xi.len()
        )));
    }
    Ok((0..xi.len()).map(|m| big_fourier_component(xi, m)).sum())
}

/// Inclusive arithmetic grid `start, start + step, ..., stop`.
pub fn grid_axis(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::Input(format!("bad grid {start}:{stop}:{step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

/// Cartesian grid of transform values, first coordinate varying slowest.
pub fn spectral_grid(d: usize, axis: &[f64]) -> Result<Vec<SpectralPoint>> {
    if d == 0 {
        return Err(Error::Domain("d must be positive".into()));
    }
    let total = axis
        .len()
        .checked_pow(d as u32)
        .filter(|&n| n <= 10_000_000)
        .ok_or_else(|| Error::Input("spectral grid too large".into()))?;
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        let xi: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
        out.push(q1_transform(&xi)?);
        for slot in idx.iter_mut().rev() {
            *slot += 1;
            if *slot < axis.len() {
                break;
            }
            *slot = 0;
        }
    }
    Ok(out)
}
