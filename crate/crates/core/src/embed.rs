//! Embedding-space similarity.
//!
//! An [`EmbeddingMap`] is a small fully connected network `m`. When one is
//! supplied, similarities are evaluated between `m(x_i)` and `m(x_j)` while
//! perturbation budgets stay in the original input space; gradients are pulled
//! back through `m` with the chain rule.
//!
//! # File format
//!
//! JSON, version 1. `weights` is row-major: one inner array per output unit.
//!
//! ```json
//! {
//!   "version": 1,
//!   "input_dim": 2,
//!   "output_dim": 2,
//!   "layers": [
//!     { "weights": [[2.0, 0.0], [0.0, 3.0]], "bias": [1.0, -1.0], "activation": "tanh" }
//!   ]
//! }
//! ```
//!
//! `activation` is one of `identity`, `tanh`, `relu`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMBEDDING_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative at pre-activation `v`; relu'(0) is taken as 0.
    #[inline]
    fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`
    weights: Array2<f64>,
    bias: Array1<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::EmbeddingFormat("layer weight matrix is empty".into()));
        }
        if bias.len() != weights.nrows() {
            return Err(Error::EmbeddingFormat(format!(
                "bias has {} entries for {} output units",
                bias.len(),
                weights.nrows()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::EmbeddingFormat("non-finite weight or bias".into()));
        }
        Ok(Self { weights, bias, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn pre_activation(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.output_dim());
        for (o, w_row) in self.weights.rows().into_iter().enumerate() {
            let mut acc = 0.0;
            for (w, v) in w_row.iter().zip(x.iter()) {
                acc += w * v;
            }
            out[o] = acc + self.bias[o];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap {
    layers: Vec<Layer>,
}

impl EmbeddingMap {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmbeddingFormat("an embedding needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::EmbeddingFormat(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    k + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Single identity layer on `dim` inputs.
    pub fn identity(dim: usize) -> Self {
        let layer =
            Layer::new(Array2::eye(dim), Array1::zeros(dim), Activation::Identity).expect("identity layer is valid");
        Self { layers: vec![layer] }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), actual: len });
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut h = x.to_owned();
        for layer in &self.layers {
            h = layer.pre_activation(h.view()).mapv(|v| layer.activation.apply(v));
        }
        h
    }

    /// `J(x)^T g` by reverse accumulation.
    pub(crate) fn backward(&self, x: ArrayView1<'_, f64>, g: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for layer in &self.layers {
            let z = layer.pre_activation(h.view());
            h = z.mapv(|v| layer.activation.apply(v));
            pre.push(z);
        }
        let mut grad = g.to_owned();
        for (layer, z) in self.layers.iter().zip(pre.iter()).rev() {
            let local: Array1<f64> =
                grad.iter().zip(z.iter()).map(|(gv, zv)| gv * layer.activation.derivative(*zv)).collect();
            let mut back = Array1::zeros(layer.input_dim());
            for (o, w_row) in layer.weights.rows().into_iter().enumerate() {
                for (i, w) in w_row.iter().enumerate() {
                    back[i] += w * local[o];
                }
            }
            grad = back;
        }
        grad
    }

    /// Embeds every row of `points`.
    pub fn embed_points(&self, points: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(points.ncols())?;
        let mut out = Array2::zeros((points.nrows(), self.output_dim()));
        for (i, row) in points.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&self.forward(row));
        }
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: EmbeddingFile = serde_json::from_str(text).map_err(|e| Error::EmbeddingFormat(e.to_string()))?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&EmbeddingFile::from(self)).expect("embedding serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::EmbeddingFormat(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

pub fn apply_embedding(m: &EmbeddingMap, x: &[f64]) -> Result<Vec<f64>> {
    m.check_input(x.len())?;
    Ok(m.forward(ArrayView1::from(x)).to_vec())
}

pub fn pullback_gradient(m: &EmbeddingMap, x: &[f64], g_emb: &[f64]) -> Result<Vec<f64>> {
    m.check_input(x.len())?;
    if g_emb.len() != m.output_dim() {
        return Err(Error::DimensionMismatch { expected: m.output_dim(), actual: g_emb.len() });
    }
    Ok(m.backward(ArrayView1::from(x), ArrayView1::from(g_emb)).to_vec())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingFile {
    version: u32,
    input_dim: usize,
    output_dim: usize,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Activation,
}

impl TryFrom<EmbeddingFile> for EmbeddingMap {
    type Error = Error;

    fn try_from(file: EmbeddingFile) -> Result<Self> {
        if file.version != EMBEDDING_FORMAT_VERSION {
            return Err(Error::EmbeddingFormat(format!(
                "unsupported version {} (expected {EMBEDDING_FORMAT_VERSION})",
                file.version
            )));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        for (k, lf) in file.layers.into_iter().enumerate() {
            let rows = lf.weights.len();
            let cols = lf.weights.first().map_or(0, Vec::len);
            if lf.weights.iter().any(|r| r.len() != cols) {
                return Err(Error::EmbeddingFormat(format!("layer {k}: ragged weight matrix")));
            }
            let flat: Vec<f64> = lf.weights.into_iter().flatten().collect();
            let weights =
                Array2::from_shape_vec((rows, cols), flat).map_err(|e| Error::EmbeddingFormat(e.to_string()))?;
            layers.push(
                Layer::new(weights, Array1::from(lf.bias), lf.activation)
                    .map_err(|e| Error::EmbeddingFormat(format!("layer {k}: {e}")))?,
            );
        }
        let map = EmbeddingMap::new(layers)?;
        if map.input_dim() != file.input_dim || map.output_dim() != file.output_dim {
            return Err(Error::EmbeddingFormat(format!(
                "declared dims {}->{} disagree with layers {}->{}",
                file.input_dim,
                file.output_dim,
                map.input_dim(),
                map.output_dim()
            )));
        }
        Ok(map)
    }
}

impl From<&EmbeddingMap> for EmbeddingFile {
    fn from(m: &EmbeddingMap) -> Self {
        EmbeddingFile {
            version: EMBEDDING_FORMAT_VERSION,
            input_dim: m.input_dim(),
            output_dim: m.output_dim(),
            layers: m
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
                    bias: l.bias.to_vec(),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}
