//! Constructive pieces of the lower-bound arguments: the first-layer weight
//! graph with triangle search, and the kernel-direction parallelotope that
//! forces a fixed error floor on networks with a narrow first layer.
//!
//! Vertices and coordinates are 0-based here.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{AffineLayer, FeedForwardNet, Scratch};
use crate::sampling::{mc_max_error, DistributionSpec, ErrorEstimate};

/// Denominator of the error floor `1 / (120 d^4.5)`.
pub const FLOOR_DENOMINATOR: f64 = 120.0;

/// Absolute tolerance for the constancy check along the kernel direction.
pub const CONSTANCY_TOL: f64 = 1e-9;

/// Undirected simple graph on `d` vertices stored as bitset rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightGraph {
    d: usize,
    rows: Vec<Vec<u64>>,
    removed_by: BTreeMap<(usize, usize), Vec<usize>>,
}

impl WeightGraph {
    pub fn empty(d: usize) -> Self {
        Self {
            d,
            rows: vec![vec![0; d.div_ceil(64)]; d],
            removed_by: BTreeMap::new(),
        }
    }

    pub fn complete(d: usize) -> Self {
        let mut g = Self::empty(d);
        for i in 0..d {
            for j in i + 1..d {
                g.set(i, j, true);
            }
        }
        g
    }

    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(d);
        for &(i, j) in edges {
            if i >= d || j >= d || i == j {
                return Err(Error::Input(format!("invalid edge ({i}, {j}) for d = {d}")));
            }
            g.set(i, j, true);
        }
        Ok(g)
    }

    fn set(&mut self, i: usize, j: usize, on: bool) {
        for (a, b) in [(i, j), (j, i)] {
            let word = &mut self.rows[a][b / 64];
            if on {
                *word |= 1 << (b % 64);
            } else {
                *word &= !(1 << (b % 64));
            }
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.rows[i][j / 64] >> (j % 64) & 1 == 1
    }

    pub fn edge_count(&self) -> usize {
        let twice: u32 = self
            .rows
            .iter()
            .flat_map(|r| r.iter().map(|w| w.count_ones()))
            .sum();
        twice as usize / 2
    }

    /// Edges `(i, j)` with `i < j` in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.d {
            for j in i + 1..self.d {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn adjacency_matrix(&self) -> Vec<Vec<bool>> {
        (0..self.d)
            .map(|i| (0..self.d).map(|j| self.has_edge(i, j)).collect())
            .collect()
    }

    /// Removed edges and every neuron whose weights removed them.
    pub fn removed_by(&self) -> &BTreeMap<(usize, usize), Vec<usize>> {
        &self.removed_by
    }
}

/// Starts from the complete graph and removes `(j1, j2)` whenever some neuron's
/// two largest weight magnitudes sit on `j1, j2` and both strictly exceed every
/// other magnitude in that row. All-zero rows are skipped.
pub fn build_weight_graph(layer: &AffineLayer) -> WeightGraph {
    let d = layer.in_width();
    let mut g = WeightGraph::complete(d);
    for m in 0..layer.out_width() {
        let mut mags: Vec<(usize, f64)> = layer
            .row(m)
            .map(|(c, w)| (c, w.abs()))
            .filter(|&(_, w)| w > 0.0)
            .collect();
        if mags.is_empty() || d < 2 {
            continue;
        }
        mags.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let pair = if d == 2 {
            Some((0, 1))
        } else {
            let second = mags.get(1).map_or(0.0, |p| p.1);
            let third = mags.get(2).map_or(0.0, |p| p.1);
            (second > third).then(|| {
                let (a, b) = (mags[0].0, mags[1].0);
                (a.min(b), a.max(b))
            })
        };
        if let Some((a, b)) = pair {
            g.set(a, b, false);
            g.removed_by.entry((a, b)).or_default().push(m);
        }
    }
    g
}

/// Lexicographically smallest triangle `(i, j, k)`, `i < j < k`, if any.
pub fn find_triangle(g: &WeightGraph) -> Option<(usize, usize, usize)> {
    let words = g.d.div_ceil(64);
    for i in 0..g.d {
        for j in i + 1..g.d {
            if !g.has_edge(i, j) {
                continue;
            }
            for w in (j + 1) / 64..words {
                let mut common = g.rows[i][w] & g.rows[j][w];
                if w == (j + 1) / 64 {
                    common &= !0u64 << ((j + 1) % 64);
                }
                if common != 0 {
                    return Some((i, j, w * 64 + common.trailing_zeros() as usize));
                }
            }
        }
    }
    None
}

/// Unit vector in the kernel of the first-layer weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelDirection {
    /// In original coordinates; `v[pivot] = max |v_i| > 0`.
    pub v: Vec<f64>,
    pub pivot: usize,
    /// `max_i |(W v)_i|`.
    pub residual: f64,
    /// Whether the orthogonal-complement fallback was used.
    pub fallback: bool,
}

fn residual(w: &[Vec<f64>], v: &[f64]) -> f64 {
    w.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

fn normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Null vector from full-pivot elimination; `None` when every column pivots.
fn elimination_null_vector(w: &[Vec<f64>], d: usize, tol: f64) -> Option<Vec<f64>> {
    let mut a: Vec<Vec<f64>> = w.to_vec();
    let k = a.len();
    let mut cols: Vec<usize> = (0..d).collect();
    let mut rank = 0;
    while rank < k.min(d) {
        let mut best = (rank, rank, 0.0);
        for (r, row) in a.iter().enumerate().skip(rank) {
            for c in rank..d {
                let m = row[cols[c]].abs();
                if m > best.2 {
                    best = (r, c, m);
                }
            }
        }
        if best.2 <= tol {
            break;
        }
        a.swap(rank, best.0);
        cols.swap(rank, best.1);
        let pc = cols[rank];
        let p = a[rank][pc];
        a[rank].iter_mut().for_each(|x| *x /= p);
        let pivot_row = a[rank].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != rank {
                let f = row[pc];
                if f != 0.0 {
                    row.iter_mut().zip(&pivot_row).for_each(|(x, y)| *x -= f * y);
                }
            }
        }
        rank += 1;
    }
    if rank == d {
        return None;
    }
    let free = cols[rank..].iter().copied().min().expect("free column exists");
    let mut v = vec![0.0; d];
    v[free] = 1.0;
    for (r, row) in a.iter().enumerate().take(rank) {
        v[cols[r]] = -row[free];
    }
    normalize(&mut v).then_some(v)
}

/// Projects standard basis vectors off the row space and keeps the longest.
fn complement_null_vector(w: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for row in w {
        let mut u = row.clone();
        for _ in 0..2 {
            for q in &basis {
                let dot: f64 = u.iter().zip(q).map(|(a, b)| a * b).sum();
                u.iter_mut().zip(q).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let scale = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 * scale && normalize(&mut u) {
            basis.push(u);
        }
    }
    let mut best = vec![0.0; d];
    let mut best_norm = -1.0;
    for i in 0..d {
        let mut u = vec![0.0; d];
        u[i] = 1.0;
        for _ in 0..2 {
            for q in &basis {
                let dot: f64 = u.iter().zip(q).map(|(a, b)| a * b).sum();
                u.iter_mut().zip(q).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > best_norm {
            best_norm = n;
            best = u;
        }
    }
    normalize(&mut best);
    best
}

/// Unit kernel vector of `W` (at most `d - 1` rows), sign-fixed so its
/// largest-magnitude coordinate is positive.
pub fn kernel_direction(layer: &AffineLayer) -> Result<KernelDirection> {
    let d = layer.in_width();
    let k = layer.out_width();
    if k + 1 > d {
        return Err(Error::Domain(format!(
            "first layer has {k} neurons; a kernel direction needs at most d - 1 = {}",
            d.saturating_sub(1)
        )));
    }
    let w = layer.to_dense();
    let wmax = layer.max_abs_weight();
    let wnorm = w.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let (mut v, fallback) = if wmax == 0.0 {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        (e, false)
    } else {
        match elimination_null_vector(&w, d, 1e-10 * wmax) {
            Some(v) if residual(&w, &v) <= 1e-9 * wnorm => (v, false),
            _ => (complement_null_vector(&w, d), true),
        }
    };
    let mut pivot = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[pivot].abs() {
            pivot = i;
        }
    }
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(KernelDirection {
        residual: residual(&w, &v),
        v,
        pivot,
        fallback,
    })
}

/// The affine image `{P x + b : x in [0,1]^d}`, written in permuted
/// coordinates where the kernel pivot is coordinate 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parallelotope {
    /// Lower-triangular `d x d`.
    pub p: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    /// Kernel vector in permuted coordinates, `v[0] = |v|_inf`.
    pub v: Vec<f64>,
    /// `perm[i]` is the original index of permuted coordinate `i`.
    pub perm: Vec<usize>,
}

impl Parallelotope {
    pub fn from_kernel(kernel: &KernelDirection) -> Result<Self> {
        let d = kernel.v.len();
        if d < 3 {
            return Err(Error::Domain("the parallelotope needs d >= 3".into()));
        }
        let mut perm: Vec<usize> = (0..d).collect();
        perm.swap(0, kernel.pivot);
        let v: Vec<f64> = perm.iter().map(|&i| kernel.v[i]).collect();
        let df = d as f64;
        let p = (0..d)
            .map(|r| {
                let mut row = vec![0.0; d];
                row[0] = v[r] / df;
                if r > 0 {
                    row[r] = 1.0 - 2.0 / df;
                }
                row
            })
            .collect();
        let mut b = vec![1.0 / df; d];
        b[0] = 1.0 - 1.0 / df;
        Ok(Self { p, b, v, perm })
    }

    pub fn d(&self) -> usize {
        self.b.len()
    }

    /// `|det P|` as the product of the diagonal.
    pub fn abs_det(&self) -> f64 {
        (0..self.d()).map(|i| self.p[i][i]).product::<f64>().abs()
    }

    /// `(1/d) (1 - 2/d)^(d-1) v_1`.
    pub fn det_formula(&self) -> f64 {
        let df = self.d() as f64;
        (1.0 - 2.0 / df).powi(self.d() as i32 - 1) * self.v[0] / df
    }

    /// Maps `x in [0,1]^d` (permuted coordinates, `x[0]` along the kernel)
    /// to a point of the unit cube in original coordinates.
    pub fn map(&self, x: &[f64]) -> Vec<f64> {
        let d = self.d();
        let mut out = vec![0.0; d];
        for r in 0..d {
            let mut u = self.b[r] + self.p[r][0] * x[0];
            if r > 0 {
                u += self.p[r][r] * x[r];
            }
            out[self.perm[r]] = u;
        }
        out
    }
}

pub fn narrow_layer_floor(d: usize) -> f64 {
    1.0 / (FLOOR_DENOMINATOR * (d as f64).powf(4.5))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorReport {
    pub kernel: KernelDirection,
    pub parallelotope: Parallelotope,
    pub floor: f64,
    pub empirical: ErrorEstimate,
    /// Largest change of the output along the kernel coordinate on the grid.
    pub constancy_deviation: f64,
}

impl FloorReport {
    pub fn constant_along_kernel(&self) -> bool {
        self.constancy_deviation <= CONSTANCY_TOL
    }

    /// `empirical >= floor - 3 se`.
    pub fn floor_holds(&self) -> bool {
        self.empirical.mean_sq_error >= self.floor - 3.0 * self.empirical.std_error
    }
}

/// Number of base points and kernel-coordinate values in the constancy grid.
const CONSTANCY_POINTS: usize = 64;
const CONSTANCY_STEPS: usize = 11;

/// Builds the parallelotope for `net`'s first layer, checks that `net` is
/// constant along the kernel coordinate on a grid inside it, and estimates the
/// uniform-cube error with `n` samples.
pub fn parallelotope_floor(net: &FeedForwardNet, n: usize, seed: u64) -> Result<FloorReport> {
    let d = net.input_dim();
    let first = &net.layers()[0];
    if !first.apply_activation() {
        return Err(Error::Domain("network has no hidden layer".into()));
    }
    if first.out_width() + 1 > d {
        return Err(Error::Domain(format!(
            "first hidden layer has {} neurons, more than d - 1 = {}",
            first.out_width(),
            d - 1
        )));
    }
    let kernel = kernel_direction(first)?;
    let para = Parallelotope::from_kernel(&kernel)?;
    let grid = DistributionSpec::unit_cube(d, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut scratch = Scratch::default();
    let mut x = vec![0.0; d];
    let mut deviation: f64 = 0.0;
    for _ in 0..CONSTANCY_POINTS {
        grid.sample_into(&mut rng, &mut x);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in 0..CONSTANCY_STEPS {
            x[0] = s as f64 / (CONSTANCY_STEPS - 1) as f64;
            let y = net.evaluate_with(&para.map(&x), &mut scratch)?;
            lo = lo.min(y);
            hi = hi.max(y);
        }
        deviation = deviation.max(hi - lo);
    }
    let empirical = mc_max_error(net, &grid, n)?;
    Ok(FloorReport {
        kernel,
        parallelotope: para,
        floor: narrow_layer_floor(d),
        empirical,
        constancy_deviation: deviation,
    })
}
