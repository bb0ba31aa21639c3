//! Fully connected feedforward networks with a scalar activation.
//!
//! Layers are stored in compressed sparse row form. Every construction in this
//! crate is extremely sparse (each neuron reads two or `d` inputs), and a
//! dense depth-3 approximator for `d = 4096` would not fit in memory. The
//! serialized form is still the dense nested-array document.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
    /// `ln(1 + e^z)`, a smooth polynomially bounded alternative.
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
            Activation::Softplus => {
                if z > 30.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative; the ReLU subgradient at zero is taken as zero.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::Softplus => "softplus",
        }
    }
}

/// One affine map `z = W h + b`, optionally followed by the network activation.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineLayer {
    in_width: usize,
    row_start: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    biases: Vec<f64>,
    apply_activation: bool,
}

impl AffineLayer {
    /// Builds a layer from row-major dense weights.
    pub fn from_dense(
        weights: &[Vec<f64>],
        biases: Vec<f64>,
        apply_activation: bool,
    ) -> Result<Self> {
        let in_width = weights.first().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(weights.len());
        for (r, row) in weights.iter().enumerate() {
            if row.len() != in_width {
                return Err(Error::Validation(format!(
                    "weight row {r} has {} columns, expected {in_width}",
                    row.len()
                )));
            }
            // Positive zeros are implicit; negative zeros are kept so that
            // serialization round-trips bit for bit.
            rows.push(
                row.iter()
                    .enumerate()
                    .filter(|(_, w)| w.to_bits() != 0)
                    .map(|(c, &w)| (c, w))
                    .collect(),
            );
        }
        Self::from_sparse_rows(in_width, rows, biases, apply_activation)
    }

    /// Builds a layer from per-neuron `(input index, weight)` lists.
    pub fn from_sparse_rows(
        in_width: usize,
        rows: Vec<Vec<(usize, f64)>>,
        biases: Vec<f64>,
        apply_activation: bool,
    ) -> Result<Self> {
        if rows.len() != biases.len() {
            return Err(Error::Validation(format!(
                "{} weight rows but {} biases",
                rows.len(),
                biases.len()
            )));
        }
        if in_width > u32::MAX as usize {
            return Err(Error::Validation("layer input width too large".into()));
        }
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_start = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_start.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            for pair in row.windows(2) {
                if pair[0].0 == pair[1].0 {
                    return Err(Error::Validation(format!(
                        "row {r} lists input {} twice",
                        pair[0].0
                    )));
                }
            }
            for (c, w) in row {
                if c >= in_width {
                    return Err(Error::Validation(format!(
                        "row {r} references input {c} but layer input width is {in_width}"
                    )));
                }
                if !w.is_finite() {
                    return Err(Error::Validation(format!("non-finite weight in row {r}")));
                }
                cols.push(c as u32);
                vals.push(w);
            }
            row_start.push(cols.len());
        }
        if let Some(r) = biases.iter().position(|b| !b.is_finite()) {
            return Err(Error::Validation(format!("non-finite bias in row {r}")));
        }
        Ok(Self {
            in_width,
            row_start,
            cols,
            vals,
            biases,
            apply_activation,
        })
    }

    pub fn in_width(&self) -> usize {
        self.in_width
    }

    pub fn out_width(&self) -> usize {
        self.biases.len()
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn apply_activation(&self) -> bool {
        self.apply_activation
    }

    /// Number of explicitly stored weights.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Stored `(input index, weight)` pairs of one neuron, in input order.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_start[r]..self.row_start[r + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.vals[span])
            .map(|(&c, &w)| (c as usize, w))
    }

    pub fn weight(&self, r: usize, c: usize) -> f64 {
        let span = self.row_start[r]..self.row_start[r + 1];
        match self.cols[span.clone()].binary_search(&(c as u32)) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn dense_row(&self, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.in_width];
        for (c, w) in self.row(r) {
            out[c] = w;
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.out_width()).map(|r| self.dense_row(r)).collect()
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    /// Upper bound on the l2 operator norm, `sqrt(||W||_1 ||W||_inf)`.
    pub fn operator_norm_bound(&self) -> f64 {
        let mut col_sums = vec![0.0; self.in_width];
        let mut max_row = 0.0f64;
        for r in 0..self.out_width() {
            let mut s = 0.0;
            for (c, w) in self.row(r) {
                s += w.abs();
                col_sums[c] += w.abs();
            }
            max_row = max_row.max(s);
        }
        let max_col = col_sums.into_iter().fold(0.0f64, f64::max);
        (max_col * max_row).sqrt()
    }

    /// Computes pre-activations `W input + b` into `out`.
    #[inline]
    pub fn pre_activations(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_width);
        for (r, o) in out.iter_mut().enumerate() {
            let mut s = self.biases[r];
            for k in self.row_start[r]..self.row_start[r + 1] {
                s += self.vals[k] * input[self.cols[k] as usize];
            }
            *o = s;
        }
    }

    pub(crate) fn map_weights(&mut self, mut f: impl FnMut(f64) -> f64) {
        for v in &mut self.vals {
            *v = f(*v);
        }
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }
}

/// Shape summary of a network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetStats {
    /// Hidden layers plus one.
    pub depth: usize,
    /// Neurons in the largest hidden layer.
    pub width: usize,
    /// Neurons across all layers, output neuron included.
    pub size: usize,
    pub max_abs_weight: f64,
}

/// Reusable buffers for repeated evaluation without allocation.
#[derive(Clone, Debug, Default)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardNet {
    input_dim: usize,
    activation: Activation,
    layers: Vec<AffineLayer>,
    metadata: String,
}

impl FeedForwardNet {
    pub fn new(
        input_dim: usize,
        activation: Activation,
        layers: Vec<AffineLayer>,
        metadata: impl Into<String>,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Validation("input_dim must be positive".into()));
        }
        let Some(last) = layers.last() else {
            return Err(Error::Validation("network has no layers".into()));
        };
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_width() != width {
                return Err(Error::Validation(format!(
                    "layer {i} expects {} inputs but receives {width}",
                    layer.in_width()
                )));
            }
            if layer.out_width() == 0 {
                return Err(Error::Validation(format!("layer {i} has no neurons")));
            }
            width = layer.out_width();
        }
        if last.out_width() != 1 {
            return Err(Error::Validation(format!(
                "output layer has width {}, expected 1",
                last.out_width()
            )));
        }
        if last.apply_activation() {
            return Err(Error::Validation(
                "output layer must be affine (apply_activation = false)".into(),
            ));
        }
        Ok(Self {
            input_dim,
            activation,
            layers,
            metadata: metadata.into(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub fn metadata(&self) -> &str {
        &self.metadata
    }

    pub fn with_metadata(mut self, metadata: impl Into<String>) -> Self {
        self.metadata = metadata.into();
        self
    }

    /// Depth-2 net with one dead hidden neuron that always outputs `value`.
    pub fn constant(input_dim: usize, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Validation("constant must be finite".into()));
        }
        let hidden = AffineLayer::from_sparse_rows(input_dim, vec![vec![]], vec![0.0], true)?;
        let out = AffineLayer::from_sparse_rows(1, vec![vec![]], vec![value], false)?;
        Self::new(input_dim, Activation::Relu, vec![hidden, out], format!("constant {value}"))
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [AffineLayer] {
        &mut self.layers
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.evaluate_with(x, &mut Scratch::default())
    }

    /// Evaluates using caller-owned buffers.
    pub fn evaluate_with(&self, x: &[f64], scratch: &mut Scratch) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::Input(format!(
                "expected {} inputs, got {}",
                self.input_dim,
                x.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("input coordinate {i} is not finite")));
        }
        let Scratch { a, b } = scratch;
        a.clear();
        a.extend_from_slice(x);
        for (li, layer) in self.layers.iter().enumerate() {
            b.resize(layer.out_width(), 0.0);
            layer.pre_activations(a, b);
            if layer.apply_activation() {
                let act = self.activation;
                for v in b.iter_mut() {
                    *v = act.apply(*v);
                }
            }
            if let Some(neuron) = b.iter().position(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow { layer: li, neuron });
            }
            std::mem::swap(a, b);
        }
        Ok(a[0])
    }

    pub fn stats(&self) -> NetStats {
        let hidden = self.layers.iter().filter(|l| l.apply_activation());
        NetStats {
            depth: 1 + hidden.clone().count(),
            width: hidden.map(AffineLayer::out_width).max().unwrap_or(0),
            size: self.layers.iter().map(AffineLayer::out_width).sum(),
            max_abs_weight: self
                .layers
                .iter()
                .map(AffineLayer::max_abs_weight)
                .fold(0.0, f64::max),
        }
    }

    /// Lipschitz constant bound (l2) valid for 1-Lipschitz activations.
    pub fn lipschitz_bound(&self) -> f64 {
        self.layers
            .iter()
            .map(AffineLayer::operator_norm_bound)
            .product()
    }

    pub fn to_json(&self) -> String {
        let doc = NetDocument {
            input_dim: self.input_dim,
            activation: self.activation,
            layers: self
                .layers
                .iter()
                .map(|l| LayerDocument {
                    weights: l.to_dense(),
                    biases: l.biases().to_vec(),
                    apply_activation: l.apply_activation(),
                })
                .collect(),
            metadata: self.metadata.clone(),
        };
        serde_json::to_string(&doc).expect("network document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let layers = doc
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                AffineLayer::from_dense(&l.weights, l.biases, l.apply_activation)
                    .map_err(|e| Error::Validation(format!("layer {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(doc.input_dim, doc.activation, layers, doc.metadata)
    }
}

#[derive(Serialize, Deserialize)]
struct NetDocument {
    input_dim: usize,
    #[serde(default)]
    activation: Activation,
    layers: Vec<LayerDocument>,
    #[serde(default)]
    metadata: String,
}

#[derive(Serialize, Deserialize)]
struct LayerDocument {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    apply_activation: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_relu() -> FeedForwardNet {
        let hidden = AffineLayer::from_dense(&[vec![1.0]], vec![0.0], true).unwrap();
        let out = AffineLayer::from_dense(&[vec![1.0]], vec![0.0], false).unwrap();
        FeedForwardNet::new(1, Activation::Relu, vec![hidden, out], "relu").unwrap()
    }

    #[test]
    fn relu_identity_on_positive_half_line() {
        let net = single_relu();
        assert_eq!(net.evaluate(&[0.5]).unwrap(), 0.5);
        assert_eq!(net.evaluate(&[-0.5]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_wrong_input_length_and_nan() {
        let net = single_relu();
        assert!(matches!(net.evaluate(&[1.0, 2.0]), Err(Error::Input(_))));
        assert!(matches!(net.evaluate(&[f64::NAN]), Err(Error::Input(_))));
    }

    #[test]
    fn overflow_is_reported() {
        let big = f64::MAX;
        let hidden = AffineLayer::from_dense(&[vec![big]], vec![0.0], true).unwrap();
        let out = AffineLayer::from_dense(&[vec![big]], vec![0.0], false).unwrap();
        let net = FeedForwardNet::new(1, Activation::Relu, vec![hidden, out], "").unwrap();
        assert!(matches!(
            net.evaluate(&[2.0]),
            Err(Error::NumericOverflow { layer: 0, .. })
        ));
    }

    #[test]
    fn stats_of_single_hidden_layer() {
        let hidden = AffineLayer::from_dense(&vec![vec![1.0, -2.0]; 7], vec![0.0; 7], true).unwrap();
        let out = AffineLayer::from_dense(&[vec![0.5; 7]], vec![0.0], false).unwrap();
        let net = FeedForwardNet::new(2, Activation::Relu, vec![hidden, out], "").unwrap();
        let s = net.stats();
        assert_eq!(s.depth, 2);
        assert_eq!(s.width, 7);
        assert_eq!(s.size, 8);
        assert_eq!(s.max_abs_weight, 2.0);
    }

    #[test]
    fn validation_failures() {
        let l1 = AffineLayer::from_dense(&[vec![1.0, 1.0]], vec![0.0], true).unwrap();
        let bad = AffineLayer::from_dense(&[vec![1.0, 1.0]], vec![0.0], false).unwrap();
        assert!(matches!(
            FeedForwardNet::new(2, Activation::Relu, vec![l1.clone(), bad], ""),
            Err(Error::Validation(_))
        ));
        // activated output layer
        assert!(FeedForwardNet::new(2, Activation::Relu, vec![l1], "").is_err());
        assert!(AffineLayer::from_dense(&[vec![f64::INFINITY]], vec![0.0], true).is_err());
        assert!(AffineLayer::from_dense(&[vec![1.0], vec![1.0, 2.0]], vec![0.0; 2], true).is_err());
    }

    #[test]
    fn json_round_trip_and_errors() {
        let net = single_relu().with_metadata("note");
        let back = FeedForwardNet::from_json(&net.to_json()).unwrap();
        assert_eq!(back, net);
        assert!(matches!(FeedForwardNet::from_json(""), Err(Error::Parse { .. })));
        let mismatched = r#"{"input_dim":2,"activation":"relu","layers":[
            {"weights":[[1,0],[0,1]],"biases":[0,0],"apply_activation":true},
            {"weights":[[1,1,1]],"biases":[0],"apply_activation":false}],"metadata":""}"#;
        assert!(matches!(
            FeedForwardNet::from_json(mismatched),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn softplus_is_smooth_relu_like() {
        let a = Activation::Softplus;
        assert!((a.apply(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((a.apply(50.0) - 50.0).abs() < 1e-12);
        assert!(a.apply(-50.0) > 0.0);
        assert!((a.derivative(0.0) - 0.5).abs() < 1e-15);
    }
}
