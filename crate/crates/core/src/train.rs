//! Plain SGD on squared error against the maximum, for small dense ReLU
//! networks. Hyperparameters here are experiment settings, not anything the
//! constructions depend on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Activation, AffineLayer, FeedForwardNet};
use crate::sampling::{max_oracle, mc_max_error, DistributionSpec, ErrorEstimate};

/// Losses above this are treated as divergence.
const DIVERGENCE_LOSS: f64 = 1e12;

/// Samples used to report the final training error.
const FINAL_TRAIN_SAMPLES: usize = 8192;

/// Minimum held-out sample count in sweeps.
pub const MIN_TEST_SAMPLES: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseLayer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            out.push(self.b[r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

/// Dense ReLU network: every layer but the last is followed by ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMlp {
    pub input_dim: usize,
    pub layers: Vec<DenseLayer>,
}

impl DenseMlp {
    /// He-style Gaussian weights scaled by `init_scale`. Each hidden neuron's
    /// bias puts its kink through the image of a random draw from `dist`, so
    /// no unit starts dead on the data.
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        arch: &[usize],
        init_scale: f64,
        dist: &DistributionSpec,
        rng: &mut R,
    ) -> Self {
        let mut mlp = Self {
            input_dim: d,
            layers: Vec::with_capacity(arch.len() + 1),
        };
        let mut fan_in = d;
        let mut x0 = vec![0.0; d];
        for (li, &w) in arch.iter().chain(std::iter::once(&1)).enumerate() {
            let mut l = DenseLayer::zeros(w, fan_in);
            let std = init_scale * (2.0 / fan_in as f64).sqrt();
            for v in l.w.iter_mut() {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
            if li < arch.len() {
                for r in 0..w {
                    dist.sample_into(rng, &mut x0);
                    let h = mlp.hidden_output(&x0);
                    let row = &l.w[r * fan_in..(r + 1) * fan_in];
                    l.b[r] = -row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            mlp.layers.push(l);
            fan_in = w;
        }
        mlp
    }

    /// Post-activation output of the last layer built so far.
    fn hidden_output(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let mut z = Vec::new();
        for l in &self.layers {
            l.forward(&h, &mut z);
            h = z.iter().map(|&v| v.max(0.0)).collect();
        }
        h
    }

    pub fn from_net(net: &FeedForwardNet) -> Result<Self> {
        if net.activation() != Activation::Relu {
            return Err(Error::Domain("only ReLU networks can be trained".into()));
        }
        let n = net.layers().len();
        let mut layers = Vec::with_capacity(n);
        for (i, l) in net.layers().iter().enumerate() {
            if l.apply_activation() != (i + 1 < n) {
                return Err(Error::Domain(
                    "expected activations on every layer except the output".into(),
                ));
            }
            layers.push(DenseLayer {
                rows: l.out_width(),
                cols: l.in_width(),
                w: l.to_dense().concat(),
                b: l.biases().to_vec(),
            });
        }
        Ok(Self {
            input_dim: net.input_dim(),
            layers,
        })
    }

    pub fn to_net(&self, metadata: impl Into<String>) -> Result<FeedForwardNet> {
        let n = self.layers.len();
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let rows: Vec<Vec<f64>> = l.w.chunks(l.cols).map(<[f64]>::to_vec).collect();
                AffineLayer::from_dense(&rows, l.b.clone(), i + 1 < n)
            })
            .collect::<Result<Vec<_>>>()?;
        FeedForwardNet::new(self.input_dim, Activation::Relu, layers, metadata)
    }

    /// Pre-activations of every layer.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut input = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(l.rows);
            l.forward(&input, &mut z);
            if i + 1 < self.layers.len() {
                input = z.iter().map(|&v| v.max(0.0)).collect();
            }
            pres.push(z);
        }
        pres
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.forward_trace(x).last().expect("output layer")[0]
    }

    /// Smallest `|pre-activation|` over hidden neurons at `x`.
    pub fn min_abs_preactivation(&self, x: &[f64]) -> f64 {
        let pres = self.forward_trace(x);
        pres[..pres.len() - 1]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// Mean squared error against the maximum on `xs` and its gradient. The
    /// ReLU derivative at 0 is taken as 0.
    pub fn loss_and_gradient(&self, xs: &[Vec<f64>]) -> (f64, DenseMlp) {
        let mut grad = DenseMlp {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.rows, l.cols))
                .collect(),
        };
        let scale = 1.0 / xs.len() as f64;
        let mut loss = 0.0;
        for x in xs {
            let pres = self.forward_trace(x);
            let y = pres.last().expect("output")[0];
            let target = max_oracle(x).unwrap_or(f64::NAN);
            let err = y - target;
            loss += err * err * scale;
            let mut delta = vec![2.0 * err * scale];
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let g = &mut grad.layers[li];
                for r in 0..layer.rows {
                    g.b[r] += delta[r];
                    let row = &mut g.w[r * layer.cols..(r + 1) * layer.cols];
                    if li == 0 {
                        row.iter_mut().zip(x).for_each(|(gw, v)| *gw += delta[r] * v);
                    } else {
                        row.iter_mut()
                            .zip(&pres[li - 1])
                            .for_each(|(gw, z)| *gw += delta[r] * z.max(0.0));
                    }
                }
                if li > 0 {
                    let below = &pres[li - 1];
                    delta = (0..layer.cols)
                        .map(|c| {
                            if below[c] > 0.0 {
                                (0..layer.rows).map(|r| delta[r] * layer.w[r * layer.cols + c]).sum()
                            } else {
                                0.0
                            }
                        })
                        .collect();
                }
            }
        }
        (loss, grad)
    }

    fn axpy(&mut self, a: f64, other: &DenseMlp) {
        for (l, g) in self.layers.iter_mut().zip(&other.layers) {
            l.w.iter_mut().zip(&g.w).for_each(|(x, y)| *x += a * y);
            l.b.iter_mut().zip(&g.b).for_each(|(x, y)| *x += a * y);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden widths.
    pub arch: Vec<usize>,
    pub d: usize,
    /// Input law. Its own seed is ignored; `seed` drives both initialization
    /// and minibatches.
    pub dist: DistributionSpec,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    pub init_scale: f64,
    /// Record the minibatch loss every this many steps.
    pub log_every: usize,
}

impl TrainConfig {
    pub fn new(arch: Vec<usize>, d: usize, seed: u64) -> Self {
        Self {
            arch,
            d,
            dist: DistributionSpec::unit_cube(d, 0),
            lr: 0.1,
            batch: 32,
            steps: 5000,
            seed,
            init_scale: 0.5,
            log_every: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.arch.is_empty() || self.arch.contains(&0) {
            return Err(Error::Domain("hidden widths must be nonempty and positive".into()));
        }
        if self.d == 0 || self.dist.dim() != self.d {
            return Err(Error::Domain(format!(
                "input dimension {} does not match distribution dimension {}",
                self.d,
                self.dist.dim()
            )));
        }
        if !(self.lr > 0.0 && self.init_scale > 0.0) || self.batch == 0 || self.log_every == 0 {
            return Err(Error::Domain(
                "lr, init_scale, batch and log_every must be positive".into(),
            ));
        }
        self.dist.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    pub net: FeedForwardNet,
    /// `(step, minibatch mse)` pairs.
    pub history: Vec<(usize, f64)>,
    pub final_train_mse: f64,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn train(cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    let mut mlp = DenseMlp::init(
        cfg.d,
        &cfg.arch,
        cfg.init_scale,
        &cfg.dist,
        &mut rng_stream(cfg.seed, 0),
    );
    let mut data = rng_stream(cfg.seed, 1);
    let mut batch = vec![vec![0.0; cfg.d]; cfg.batch];
    let mut history = Vec::new();
    for step in 0..cfg.steps {
        for x in batch.iter_mut() {
            cfg.dist.sample_into(&mut data, x);
        }
        let (loss, grad) = mlp.loss_and_gradient(&batch);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Training { step, loss });
        }
        if step % cfg.log_every == 0 {
            history.push((step, loss));
        }
        mlp.axpy(-cfg.lr, &grad);
    }
    let mut eval = rng_stream(cfg.seed, 2);
    let mut x = vec![0.0; cfg.d];
    let mut total = 0.0;
    for _ in 0..FINAL_TRAIN_SAMPLES {
        cfg.dist.sample_into(&mut eval, &mut x);
        let e = mlp.forward(&x) - max_oracle(&x)?;
        total += e * e;
    }
    let final_train_mse = total / FINAL_TRAIN_SAMPLES as f64;
    if !final_train_mse.is_finite() {
        return Err(Error::Training {
            step: cfg.steps,
            loss: final_train_mse,
        });
    }
    history.push((cfg.steps, final_train_mse));
    let arch: Vec<String> = cfg.arch.iter().map(usize::to_string).collect();
    let net = mlp.to_net(format!(
        "sgd arch=[{}] d={} lr={} batch={} steps={} seed={} init_scale={}",
        arch.join(","),
        cfg.d,
        cfg.lr,
        cfg.batch,
        cfg.steps,
        cfg.seed,
        cfg.init_scale
    ))?;
    Ok(TrainResult {
        net,
        history,
        final_train_mse,
    })
}

/// Settings shared by every cell of a width sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub dist: DistributionSpec,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub init_scale: f64,
    /// Training seeds; the best by final training error is kept.
    pub seeds: Vec<u64>,
    pub test_n: usize,
    pub test_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub depth: usize,
    pub width: usize,
    pub d: usize,
    /// Seed of the selected run.
    pub seed: u64,
    pub final_train_mse: f64,
    pub test: Option<ErrorEstimate>,
    pub net: Option<FeedForwardNet>,
    /// Training failures encountered in this cell.
    pub failures: Vec<String>,
}

/// Trains `depth - 1` hidden layers of each width and reports held-out error.
pub fn width_sweep(
    depth: usize,
    widths: &[usize],
    d: usize,
    common: &SweepConfig,
) -> Result<Vec<SweepCell>> {
    if depth < 2 {
        return Err(Error::Domain("sweep depth must be at least 2".into()));
    }
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::Domain("widths must be nonempty and positive".into()));
    }
    if common.seeds.is_empty() {
        return Err(Error::Domain("need at least one training seed".into()));
    }
    if common.test_n < MIN_TEST_SAMPLES {
        return Err(Error::Domain(format!(
            "held-out evaluation needs at least {MIN_TEST_SAMPLES} samples"
        )));
    }
    let jobs: Vec<(usize, u64)> = widths
        .iter()
        .flat_map(|&w| common.seeds.iter().map(move |&s| (w, s)))
        .collect();
    let runs: Vec<Result<TrainResult>> = jobs
        .par_iter()
        .map(|&(w, seed)| {
            train(&TrainConfig {
                arch: vec![w; depth - 1],
                d,
                dist: common.dist,
                lr: common.lr,
                batch: common.batch,
                steps: common.steps,
                seed,
                init_scale: common.init_scale,
                log_every: common.steps.max(1),
            })
        })
        .collect();
    let test_dist = common.dist.with_seed(common.test_seed);
    let mut cells = Vec::with_capacity(widths.len());
    for (wi, &width) in widths.iter().enumerate() {
        let mut best: Option<(u64, TrainResult)> = None;
        let mut failures = Vec::new();
        for (si, &seed) in common.seeds.iter().enumerate() {
            match &runs[wi * common.seeds.len() + si] {
                Ok(r) => {
                    if best.as_ref().is_none_or(|(_, b)| r.final_train_mse < b.final_train_mse) {
                        best = Some((seed, r.clone()));
                    }
                }
                Err(e) => failures.push(format!("seed {seed}: {e}")),
            }
        }
        let cell = match best {
            Some((seed, r)) => SweepCell {
                depth,
                width,
                d,
                seed,
                final_train_mse: r.final_train_mse,
                test: Some(mc_max_error(&r.net, &test_dist, common.test_n)?),
                net: Some(r.net),
                failures,
            },
            None => SweepCell {
                depth,
                width,
                d,
                seed: common.seeds[0],
                final_train_mse: f64::NAN,
                test: None,
                net: None,
                failures,
            },
        };
        cells.push(cell);
    }
    Ok(cells)
}
