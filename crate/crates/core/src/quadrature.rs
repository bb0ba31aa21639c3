//! Globally adaptive Gauss-Kronrod (7/15) quadrature.

// the node and weight tables are quoted at their published precision
#![allow(clippy::excessive_precision)]

use num_complex::Complex64;

use crate::error::{Error, Result};

// 15-point Kronrod abscissae on [0, 1]; odd indices are the 7-point Gauss nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Default cap on the number of subintervals.
pub const MAX_SUBDIVISIONS: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub abs_error: f64,
    pub intervals: usize,
}

#[derive(Clone, Copy, Debug)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// One 15-point rule on `[a, b]`: (Kronrod value, error estimate).
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut gauss = fc * WG[3];
    let mut kronrod = fc * WGK[7];
    let mut res_abs = kronrod.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let x = half * XGK[j];
        let (f1, f2) = (f(center - x), f(center + x));
        fv1[j] = f1;
        fv2[j] = f2;
        kronrod += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kronrod;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let abs_half = half.abs();
    let value = kronrod * half;
    res_abs *= abs_half;
    res_asc *= abs_half;
    let mut err = ((kronrod - gauss) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (value, err)
}

/// Integrates `f` over `[a, b]` until the summed error estimate is at most
/// `max(abs_tol, rel_tol * |value|)`, bisecting the worst interval each step.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Quadrature> {
    integrate_with_limit(f, a, b, abs_tol, rel_tol, MAX_SUBDIVISIONS)
}

pub fn integrate_with_limit<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    limit: usize,
) -> Result<Quadrature> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain("integration limits must be finite".into()));
    }
    if !(abs_tol >= 0.0 && rel_tol >= 0.0) || (abs_tol == 0.0 && rel_tol == 0.0) {
        return Err(Error::Domain("need a positive tolerance".into()));
    }
    let (value, error) = gk15(&f, a, b);
    let mut segments = vec![Segment { a, b, value, error }];
    loop {
        let total: f64 = segments.iter().map(|s| s.value).sum();
        let err: f64 = segments.iter().map(|s| s.error).sum();
        let target = abs_tol.max(rel_tol * total.abs());
        if !total.is_finite() {
            return Err(Error::Convergence {
                tolerance: target,
                estimate: f64::INFINITY,
            });
        }
        if err <= target {
            return Ok(Quadrature {
                value: total,
                abs_error: err,
                intervals: segments.len(),
            });
        }
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
            .expect("at least one segment");
        let s = segments[worst];
        let mid = 0.5 * (s.a + s.b);
        if segments.len() >= limit || mid <= s.a.min(s.b) || mid >= s.a.max(s.b) {
            return Err(Error::Convergence {
                tolerance: target,
                estimate: err,
            });
        }
        let (v1, e1) = gk15(&f, s.a, mid);
        let (v2, e2) = gk15(&f, mid, s.b);
        segments[worst] = Segment {
            a: s.a,
            b: mid,
            value: v1,
            error: e1,
        };
        segments.push(Segment {
            a: mid,
            b: s.b,
            value: v2,
            error: e2,
        });
    }
}

/// Complex integrand, integrated as two real integrals. The returned error is
/// the l2 combination of both parts.
pub fn integrate_complex<F: Fn(f64) -> Complex64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<(Complex64, f64)> {
    let re = integrate(|t| f(t).re, a, b, abs_tol, rel_tol)?;
    let im = integrate(|t| f(t).im, a, b, abs_tol, rel_tol)?;
    Ok((
        Complex64::new(re.value, im.value),
        re.abs_error.hypot(im.abs_error),
    ))
}
