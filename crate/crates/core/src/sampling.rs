//! Input distributions, separation predicates and Monte Carlo estimators.
//!
//! Sampling is split into fixed-size shards. Shard `s` draws from the ChaCha
//! stream `s` of the distribution seed, so every estimate is a deterministic
//! function of `(spec, seed, n)` regardless of how many threads run it, and
//! shard summaries are merged in shard order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{FeedForwardNet, Scratch};

/// Samples per shard.
pub const SHARD_SIZE: usize = 1 << 14;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseSource {
    /// Independent uniform signs, i.e. the corners of `[-1, 1]^d`.
    Rademacher,
    Constant(f64),
    UniformBox { a: f64, r: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Uniform on `[-scale, scale]`.
    Uniform,
    /// Centered normal with standard deviation `scale`.
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    UniformBox { a: f64, r: f64, d: usize },
    GaussianStd { d: usize },
    /// A (possibly discrete) base vector plus i.i.d. continuous noise.
    IidPlusNoise {
        d: usize,
        base: BaseSource,
        noise: NoiseKind,
        scale: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub kind: DistKind,
    pub seed: u64,
}

impl DistributionSpec {
    pub fn uniform(a: f64, r: f64, d: usize, seed: u64) -> Self {
        Self {
            kind: DistKind::UniformBox { a, r, d },
            seed,
        }
    }

    pub fn unit_cube(d: usize, seed: u64) -> Self {
        Self::uniform(0.0, 1.0, d, seed)
    }

    pub fn gaussian(d: usize, seed: u64) -> Self {
        Self {
            kind: DistKind::GaussianStd { d },
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            DistKind::UniformBox { d, .. }
            | DistKind::GaussianStd { d }
            | DistKind::IidPlusNoise { d, .. } => d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::Domain("distribution dimension must be positive".into()));
        }
        match self.kind {
            DistKind::UniformBox { a, r, .. } => {
                if !(r > 0.0 && r.is_finite() && a.is_finite()) {
                    return Err(Error::Domain("uniform box needs finite a and R > 0".into()));
                }
            }
            DistKind::GaussianStd { .. } => {}
            DistKind::IidPlusNoise { base, scale, .. } => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::Domain("noise scale must be positive".into()));
                }
                if let BaseSource::UniformBox { a, r } = base {
                    if !(r > 0.0 && r.is_finite() && a.is_finite()) {
                        return Err(Error::Domain("base box needs finite a and R > 0".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Short human-readable label used in reports.
    pub fn label(&self) -> String {
        match self.kind {
            DistKind::UniformBox { a, r, d } => format!("uniform[{a},{}]^{d}", a + r),
            DistKind::GaussianStd { d } => format!("gauss^{d}"),
            DistKind::IidPlusNoise {
                d, noise, scale, ..
            } => {
                let n = match noise {
                    NoiseKind::Uniform => "uniform",
                    NoiseKind::Gaussian => "gauss",
                };
                format!("noise-{n}({scale})^{d}")
            }
        }
    }

    /// RNG for shard `shard`.
    pub fn shard_rng(&self, shard: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(shard);
        rng
    }

    /// Fills `out` with one draw.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self.kind {
            DistKind::UniformBox { a, r, .. } => {
                for v in out.iter_mut() {
                    *v = a + r * rng.random::<f64>();
                }
            }
            DistKind::GaussianStd { .. } => {
                for v in out.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
            }
            DistKind::IidPlusNoise {
                base, noise, scale, ..
            } => {
                for v in out.iter_mut() {
                    let b = match base {
                        BaseSource::Rademacher => {
                            if rng.random::<bool>() {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                        BaseSource::Constant(c) => c,
                        BaseSource::UniformBox { a, r } => a + r * rng.random::<f64>(),
                    };
                    let e: f64 = match noise {
                        NoiseKind::Uniform => scale * (2.0 * rng.random::<f64>() - 1.0),
                        NoiseKind::Gaussian => scale * rng.sample::<f64, _>(StandardNormal),
                    };
                    *v = b + e;
                }
            }
        }
    }

    /// `n` deterministic draws, laid out shard by shard.
    pub fn samples(&self, n: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(n);
        for (shard, count) in shard_counts(n) {
            let mut rng = self.shard_rng(shard);
            for _ in 0..count {
                let mut x = vec![0.0; d];
                self.sample_into(&mut rng, &mut x);
                out.push(x);
            }
        }
        out
    }
}

fn shard_counts(n: usize) -> impl Iterator<Item = (u64, usize)> {
    let shards = n.div_ceil(SHARD_SIZE);
    (0..shards).map(move |s| (s as u64, SHARD_SIZE.min(n - s * SHARD_SIZE)))
}

/// `max(x_1, ..., x_d)`.
pub fn max_oracle(x: &[f64]) -> Result<f64> {
    x.iter()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| Error::Domain("max of an empty vector".into()))
}

/// True iff `x_i / x_j` lies outside `[1 - delta, 1 + delta]` for all `i != j`
/// with `x_j != 0`. Pairs with a zero denominator impose no constraint.
pub fn is_delta_separated(x: &[f64], delta: f64) -> bool {
    let (lo, hi) = (1.0 - delta, 1.0 + delta);
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (i, &xi) in x.iter().enumerate() {
            if i != j {
                let ratio = xi / xj;
                if ratio >= lo && ratio <= hi {
                    return false;
                }
            }
        }
    }
    true
}

/// Witness that a vector is `delta`-separated, obtained from a coordinate gap
/// and a magnitude bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeparationCertificate {
    pub delta: f64,
}

/// If every pair satisfies `|x_i - x_j| > gap` and every `|x_j| <= bound`,
/// then `x` is `gap / bound`-separated; returns that certificate, or `None`
/// when a hypothesis fails.
pub fn separation_from_gap(x: &[f64], gap: f64, bound: f64) -> Option<SeparationCertificate> {
    if !(gap > 0.0 && bound > 0.0) {
        return None;
    }
    if x.iter().any(|v| v.abs() > bound) {
        return None;
    }
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            if (x[i] - x[j]).abs() <= gap {
                return None;
            }
        }
    }
    Some(SeparationCertificate {
        delta: gap / bound,
    })
}

/// Running mean and sum of squared deviations.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let delta = v - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 =
            self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        Moments { n, mean, m2 }
    }

    pub fn sample_variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }
}

/// Monte Carlo estimate of a mean squared error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub mean_sq_error: f64,
    pub std_error: f64,
    pub n_samples: u64,
    /// Normal-approximation 95% interval, lower end clipped at zero.
    pub ci95: (f64, f64),
}

impl ErrorEstimate {
    pub fn from_moments(m: Moments) -> Self {
        let mean = m.mean.max(0.0);
        let se = (m.sample_variance() / m.n.max(1) as f64).sqrt();
        Self {
            mean_sq_error: mean,
            std_error: se,
            n_samples: m.n,
            ci95: ((mean - Z95 * se).max(0.0), mean + Z95 * se),
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci95.0 <= value && value <= self.ci95.1
    }

    pub fn overlaps(&self, other: &ErrorEstimate) -> bool {
        self.ci95.0 <= other.ci95.1 && other.ci95.0 <= self.ci95.1
    }
}

/// Estimated probability with a Wilson score interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProportionEstimate {
    pub proportion: f64,
    /// Binomial standard error `sqrt(p (1 - p) / n)`.
    pub std_error: f64,
    pub successes: u64,
    pub n_samples: u64,
    pub ci95: (f64, f64),
}

impl ProportionEstimate {
    pub fn new(successes: u64, n: u64) -> Self {
        let nf = n as f64;
        let p = successes as f64 / nf;
        let z2 = Z95 * Z95;
        let denom = 1.0 + z2 / nf;
        let center = (p + z2 / (2.0 * nf)) / denom;
        let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
        let low = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
        let high = if successes == n { 1.0 } else { (center + half).min(1.0) };
        Self {
            proportion: p,
            std_error: (p * (1.0 - p) / nf).sqrt(),
            successes,
            n_samples: n,
            ci95: (low, high),
        }
    }
}

/// Monte Carlo estimate of `P[X not in S_delta]`.
pub fn estimate_violation_prob(
    dist: &DistributionSpec,
    delta: f64,
    n: usize,
) -> Result<ProportionEstimate> {
    dist.validate()?;
    if n == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Domain("delta must be positive".into()));
    }
    let d = dist.dim();
    let counts: Vec<u64> = shard_counts(n)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(shard, count)| {
            let mut rng = dist.shard_rng(shard);
            let mut x = vec![0.0; d];
            let mut violations = 0;
            for _ in 0..count {
                dist.sample_into(&mut rng, &mut x);
                if !is_delta_separated(&x, delta) {
                    violations += 1;
                }
            }
            violations
        })
        .collect();
    Ok(ProportionEstimate::new(counts.iter().sum(), n as u64))
}

/// Monte Carlo estimate of `E[(net(X) - target(X))^2]` for `X ~ dist`.
pub fn mc_l2_error<F>(
    net: &FeedForwardNet,
    target: F,
    dist: &DistributionSpec,
    n: usize,
) -> Result<ErrorEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    dist.validate()?;
    if n < 2 {
        return Err(Error::Domain("need at least two samples".into()));
    }
    if net.input_dim() != dist.dim() {
        return Err(Error::Input(format!(
            "network takes {} inputs but distribution has dimension {}",
            net.input_dim(),
            dist.dim()
        )));
    }
    let d = dist.dim();
    let shards: Vec<Result<Moments>> = shard_counts(n)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(shard, count)| {
            let mut rng = dist.shard_rng(shard);
            let mut x = vec![0.0; d];
            let mut scratch = Scratch::default();
            let mut m = Moments::default();
            for _ in 0..count {
                dist.sample_into(&mut rng, &mut x);
                let y = match net.evaluate_with(&x, &mut scratch) {
                    Ok(y) => y,
                    Err(Error::NumericOverflow { .. }) => {
                        return Err(Error::NonFiniteSample { sample: x })
                    }
                    Err(e) => return Err(e),
                };
                let e = y - target(&x);
                m.push(e * e);
            }
            Ok(m)
        })
        .collect();
    let mut total = Moments::default();
    for m in shards {
        total = total.merge(m?);
    }
    Ok(ErrorEstimate::from_moments(total))
}

/// Mean squared error against the maximum function.
pub fn mc_max_error(
    net: &FeedForwardNet,
    dist: &DistributionSpec,
    n: usize,
) -> Result<ErrorEstimate> {
    mc_l2_error(net, |x| max_oracle(x).unwrap_or(f64::NAN), dist, n)
}

/// Draws `count` samples from `dist` conditioned on being `delta`-separated.
pub fn rejection_sample_separated(
    dist: &DistributionSpec,
    delta: f64,
    count: usize,
    max_draws: usize,
) -> Result<Vec<Vec<f64>>> {
    dist.validate()?;
    let mut rng = dist.shard_rng(u64::MAX);
    let mut out = Vec::with_capacity(count);
    let mut x = vec![0.0; dist.dim()];
    let mut draws = 0;
    while out.len() < count {
        if draws == max_draws {
            return Err(Error::Domain(format!(
                "accepted {} of {count} separated samples within {max_draws} draws",
                out.len()
            )));
        }
        draws += 1;
        dist.sample_into(&mut rng, &mut x);
        if is_delta_separated(&x, delta) {
            out.push(x.clone());
        }
    }
    Ok(out)
}
