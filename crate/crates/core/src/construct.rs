//! ReLU networks that compute or approximate `x -> max(x_1, ..., x_d)`.
//!
//! * [`depth3_max`]: depth 3, width `d(d+1)`, exact on `1/alpha`-separated inputs.
//! * [`deep_max`]: depth `2k+1`, recursive batching of depth-3 blocks.
//! * [`exact_max_tree`]: depth `ceil(log2 d) + 1` pairwise-max tree, exact everywhere.
//!
//! Networks are assembled from *unit expressions*: a sparse linear combination
//! of the previous layer's units. A block's affine output is never given its
//! own layer; it stays an expression and is folded into whatever layer reads
//! it next, so stacked blocks add exactly two hidden layers each.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Activation, AffineLayer, FeedForwardNet};

/// Sparse linear combination of units in the previous layer.
type Expr = Vec<(usize, f64)>;

/// `beta(k) = 1 / (2^k - 1)`.
pub fn beta(k: u32) -> Result<f64> {
    let (num, den) = beta_ratio(k)?;
    Ok(num as f64 / den as f64)
}

/// `beta(k)` as the exact ratio `(1, 2^k - 1)`.
pub fn beta_ratio(k: u32) -> Result<(u64, u64)> {
    if k == 0 || k > 63 {
        return Err(Error::Domain(format!("beta(k) needs 1 <= k <= 63, got {k}")));
    }
    Ok((1, (1u64 << k) - 1))
}

/// Largest recursion depth for which the width bound is stated:
/// `ceil(log2(log2(d) + 1))`, computed exactly as the smallest `k >= 1`
/// with `d <= 2^(2^k - 1)`.
pub fn max_recursion_depth(d: usize) -> u32 {
    let mut k = 1u32;
    loop {
        let exp = (1u32 << k) - 1;
        if exp >= 64 || (d as u128) <= (1u128 << exp) {
            return k;
        }
        k += 1;
    }
}

/// Smallest integer `m >= 1` with `m^den >= d^num`, i.e. `ceil(d^(num/den))`.
pub fn ceil_rational_power(d: usize, num: u32, den: u32) -> usize {
    assert!(den > 0, "zero exponent denominator");
    if d <= 1 || num == 0 {
        return 1;
    }
    let target = BigUint::from(d).pow(num);
    let fits = |m: usize| BigUint::from(m).pow(den) >= target;
    let mut m = ((d as f64).powf(num as f64 / den as f64).ceil() as usize).max(1);
    while m > 1 && fits(m - 1) {
        m -= 1;
    }
    while !fits(m) {
        m += 1;
    }
    m
}

/// Batch sizes used by the outermost level of [`deep_max`] for `(d, k)`,
/// `k >= 2`: `ceil(d^(1-beta(k)))` contiguous batches whose sizes differ by at
/// most one, hence each at most `ceil(d^beta(k))`.
pub fn batch_sizes(d: usize, k: u32) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Domain("batching only applies for k >= 2".into()));
    }
    let (_, den) = beta_ratio(k)?;
    let count = ceil_rational_power(d, (den - 1) as u32, den as u32).min(d).max(1);
    let (q, r) = (d / count, d % count);
    Ok((0..count).map(|b| q + usize::from(b < r)).collect())
}

/// Hidden-layer widths of `deep_max(d, _, k)` derived from the recursion alone.
pub fn deep_layer_widths(d: usize, k: u32) -> Result<Vec<usize>> {
    if d == 0 {
        return Err(Error::Domain("d must be positive".into()));
    }
    beta_ratio(k)?;
    let mut widths = Vec::with_capacity(2 * k as usize);
    let mut cur = d;
    for level in (2..=k).rev() {
        let sizes = batch_sizes(cur, level)?;
        widths.push(sizes.iter().map(|s| s * (s + 1)).sum());
        widths.push(2 * cur);
        cur = sizes.len();
    }
    widths.push(cur * (cur + 1));
    widths.push(2 * cur);
    Ok(widths)
}

/// `alpha = 2 d^2 (d+1)^2 R^2 / epsilon`: with this weight scale the depth-3
/// and deep constructions have mean squared error at most `epsilon` under the
/// uniform distribution on `[0, R]^d`. This is the explicit constant behind
/// the `O(d^4 R^2 / epsilon)` weight bound and is typically loose.
pub fn alpha_for_accuracy(d: usize, r: f64, epsilon: f64) -> Result<f64> {
    if d < 2 {
        return Err(Error::Domain(format!("d must be at least 2, got {d}")));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("R must be positive, got {r}")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let d = d as f64;
    Ok(2.0 * d * d * (d + 1.0) * (d + 1.0) * r * r / epsilon)
}

/// `prod_{i=1}^{n} (1 + 2/i^3)^2`, the per-level width inflation factor.
pub fn width_inflation_product(n: usize) -> f64 {
    (1..=n)
        .map(|i| {
            let t = 1.0 + 2.0 / (i as f64).powi(3);
            t * t
        })
        .product()
}

/// `2 d^(1 - beta(k+1)) / (k+1)^3`, which must stay at least 1 over the
/// admissible `(d, k)` range for the width recursion to close.
pub fn width_recursion_ratio(d: usize, k: u32) -> Result<f64> {
    let b = beta(k + 1)?;
    Ok(2.0 * (d as f64).powf(1.0 - b) / f64::from(k + 1).powi(3))
}

/// Hypercube `[a, a + r]^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub a: f64,
    pub r: f64,
}

impl Default for DomainBox {
    fn default() -> Self {
        Self { a: 0.0, r: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionParams {
    pub d: usize,
    pub alpha: f64,
    pub k: u32,
    pub domain: DomainBox,
}

impl ConstructionParams {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Domain(format!("d must be at least 2, got {}", self.d)));
        }
        check_alpha(self.alpha)?;
        if self.k == 0 {
            return Err(Error::Domain("k must be at least 1".into()));
        }
        if !(self.domain.r > 0.0 && self.domain.r.is_finite() && self.domain.a.is_finite()) {
            return Err(Error::Domain("domain needs finite a and R > 0".into()));
        }
        Ok(())
    }

    /// Whether `d >= 58` and `1 <= k <= ceil(log2(log2 d + 1))`, the range where
    /// the `20 d^(1+beta(k))` width bound is claimed.
    pub fn width_bound_applies(&self) -> bool {
        self.d >= 58 && self.k >= 1 && self.k <= max_recursion_depth(self.d)
    }

    pub fn width_bound(&self) -> Result<f64> {
        Ok(20.0 * (self.d as f64).powf(1.0 + beta(self.k)?))
    }

    /// `deep_max(d, alpha, k)` moved onto the parameter domain box.
    pub fn build(&self) -> Result<FeedForwardNet> {
        self.validate()?;
        let net = deep_max(self.d, self.alpha, self.k)?;
        if self.domain == DomainBox::default() {
            Ok(net)
        } else {
            rescale_to_box(&net, self.domain.a, self.domain.r)
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha must be positive and finite, got {alpha}")))
    }
}

fn linear_combination(terms: &[(&Expr, f64)]) -> Expr {
    let mut out: Expr = terms
        .iter()
        .flat_map(|(e, c)| e.iter().map(move |&(u, w)| (u, w * c)))
        .collect();
    out.sort_by_key(|&(u, _)| u);
    out.dedup_by(|next, kept| {
        if next.0 == kept.0 {
            kept.1 += next.1;
            true
        } else {
            false
        }
    });
    out.retain(|&(_, w)| w != 0.0);
    out
}

/// Appends one depth-3 block over `inputs` to the two hidden layers under
/// construction and returns the block output as an expression over layer 2.
///
/// For each coordinate `i` the first layer holds `relu(e_i)`, `relu(-e_i)`
/// and the `d-1` shared penalties `relu(alpha e_j - alpha e_i)`; the second
/// layer clips `relu(+-e_i) - sum_j penalty` at zero.
fn push_depth3_block(
    inputs: &[Expr],
    alpha: f64,
    first: &mut Vec<Expr>,
    second: &mut Vec<Expr>,
) -> Expr {
    let mut output = Expr::with_capacity(2 * inputs.len());
    for (i, ei) in inputs.iter().enumerate() {
        let pos = first.len();
        first.push(ei.clone());
        let neg = first.len();
        first.push(linear_combination(&[(ei, -1.0)]));
        let penalties = first.len();
        for (j, ej) in inputs.iter().enumerate() {
            if j != i {
                first.push(linear_combination(&[(ej, alpha), (ei, -alpha)]));
            }
        }
        let penalty_terms: Vec<(usize, f64)> =
            (penalties..first.len()).map(|u| (u, -1.0)).collect();
        for head in [pos, neg] {
            let mut row = Vec::with_capacity(penalty_terms.len() + 1);
            row.push((head, 1.0));
            row.extend_from_slice(&penalty_terms);
            output.push((second.len(), if head == pos { 1.0 } else { -1.0 }));
            second.push(row);
        }
    }
    output
}

struct LayerStack {
    input_dim: usize,
    width: usize,
    layers: Vec<AffineLayer>,
}

impl LayerStack {
    fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            width: input_dim,
            layers: Vec::new(),
        }
    }

    fn push(&mut self, rows: Vec<Expr>, activated: bool) -> Result<()> {
        let biases = vec![0.0; rows.len()];
        let n = rows.len();
        self.layers
            .push(AffineLayer::from_sparse_rows(self.width, rows, biases, activated)?);
        self.width = n;
        Ok(())
    }

    fn finish(mut self, output: Expr, metadata: String) -> Result<FeedForwardNet> {
        self.push(vec![output], false)?;
        FeedForwardNet::new(self.input_dim, Activation::Relu, self.layers, metadata)
    }
}

fn identity_inputs(d: usize) -> Vec<Expr> {
    (0..d).map(|i| vec![(i, 1.0)]).collect()
}

/// Depth-3, width `d(d+1)` approximator of the maximum.
///
/// Equals `max(x)` whenever `x` is `1/alpha`-separated and satisfies
/// `|N(x)| <= ||x||_1` everywhere. Weights are `+-1` and `+-alpha`.
pub fn depth3_max(d: usize, alpha: f64) -> Result<FeedForwardNet> {
    if d < 2 {
        return Err(Error::Domain(format!("d must be at least 2, got {d}")));
    }
    check_alpha(alpha)?;
    build_deep(d, alpha, 1)
}

/// Depth `2k+1` approximator: `k = 1` is [`depth3_max`]; for `k > 1` the
/// inputs are split into `ceil(d^(1-beta(k)))` batches, each reduced by a
/// depth-3 block, and the batch maxima feed `deep_max(batches, alpha, k-1)`.
pub fn deep_max(d: usize, alpha: f64, k: u32) -> Result<FeedForwardNet> {
    if d < 2 {
        return Err(Error::Domain(format!("d must be at least 2, got {d}")));
    }
    check_alpha(alpha)?;
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    beta_ratio(k)?;
    build_deep(d, alpha, k)
}

fn build_deep(d: usize, alpha: f64, k: u32) -> Result<FeedForwardNet> {
    let mut stack = LayerStack::new(d);
    let mut exprs = identity_inputs(d);
    for level in (2..=k).rev() {
        let sizes = batch_sizes(exprs.len(), level)?;
        let (mut first, mut second) = (Vec::new(), Vec::new());
        let mut next = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for size in sizes {
            next.push(push_depth3_block(
                &exprs[start..start + size],
                alpha,
                &mut first,
                &mut second,
            ));
            start += size;
        }
        stack.push(first, true)?;
        stack.push(second, true)?;
        exprs = next;
    }
    let (mut first, mut second) = (Vec::new(), Vec::new());
    let output = push_depth3_block(&exprs, alpha, &mut first, &mut second);
    stack.push(first, true)?;
    stack.push(second, true)?;
    let kind = if k == 1 { "depth3_max" } else { "deep_max" };
    stack.finish(output, format!("{kind} d={d} k={k} alpha={alpha}"))
}

/// Pairwise-max tree computing `max(x)` exactly for every input, via
/// `max(a, b) = relu(a - b) + relu(b) - relu(-b)`. An unpaired value passes
/// through a level as `relu(v) - relu(-v)`.
pub fn exact_max_tree(d: usize) -> Result<FeedForwardNet> {
    if d == 0 {
        return Err(Error::Domain("d must be at least 1".into()));
    }
    let mut stack = LayerStack::new(d);
    let mut exprs = identity_inputs(d);
    while exprs.len() > 1 {
        let mut rows = Vec::new();
        let mut next = Vec::with_capacity(exprs.len().div_ceil(2));
        for pair in exprs.chunks(2) {
            let base = rows.len();
            match pair {
                [a, b] => {
                    rows.push(linear_combination(&[(a, 1.0), (b, -1.0)]));
                    rows.push(b.clone());
                    rows.push(linear_combination(&[(b, -1.0)]));
                    next.push(vec![(base, 1.0), (base + 1, 1.0), (base + 2, -1.0)]);
                }
                [v] => {
                    rows.push(v.clone());
                    rows.push(linear_combination(&[(v, -1.0)]));
                    next.push(vec![(base, 1.0), (base + 1, -1.0)]);
                }
                _ => unreachable!(),
            }
        }
        stack.push(rows, true)?;
        exprs = next;
    }
    let output = exprs.pop().expect("one expression remains");
    stack.finish(output, format!("exact_max_tree d={d}"))
}

/// Returns `N'(x) = R * N((x - a 1) / R) + a`.
///
/// When `N` approximates the maximum on `[0, 1]^d`, `N'` approximates it on
/// `[a, a+R]^d` with pointwise squared error scaled by exactly `R^2`.
pub fn rescale_to_box(net: &FeedForwardNet, a: f64, r: f64) -> Result<FeedForwardNet> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("R must be positive, got {r}")));
    }
    if !a.is_finite() {
        return Err(Error::Domain("a must be finite".into()));
    }
    let mut out = net.clone();
    let shift = a / r;
    {
        let first = &mut out.layers_mut()[0];
        let row_sums: Vec<f64> = (0..first.out_width())
            .map(|i| first.row(i).map(|(_, w)| w).sum::<f64>())
            .collect();
        for (b, s) in first.biases_mut().iter_mut().zip(row_sums) {
            *b -= shift * s;
        }
        first.map_weights(|w| w / r);
    }
    let last = out.layers_mut().last_mut().expect("nets have layers");
    last.map_weights(|w| w * r);
    for b in last.biases_mut() {
        *b = r * *b + a;
    }
    let meta = format!("{} rescaled a={a} R={r}", net.metadata());
    Ok(out.with_metadata(meta))
}
