//! Transformer that turns correspondence embeddings into sampling weights.
//!
//! Rows are correspondences. Each block is pre-norm: `x += MHA(LN(x))`,
//! then `x += FF(LN(x))`. There is no positional encoding, so the output is
//! equivariant to row permutations.

use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)] // std builds resolve these to inherent methods
use num_traits::Float;

use nalgebra::{DMatrix, RowDVector};
use rand_distr::{Distribution, Normal};

use crate::correspondence::EmbeddingSet;
use crate::rng::{substream, Domain};
use crate::{Error, Result};

const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionConfig {
    pub blocks: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub input_dim: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            model_dim: 32,
            heads: 2,
            input_dim: 48,
        }
    }
}

impl FusionConfig {
    /// Dimensions used in the original model.
    pub fn paper() -> Self {
        Self {
            blocks: 2,
            model_dim: 768,
            heads: 4,
            input_dim: 48,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::config("blocks", "must be at least 1"));
        }
        if self.heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::config(
                "model_dim",
                "must be a positive multiple of heads",
            ));
        }
        if self.input_dim == 0 {
            return Err(Error::config("input_dim", "must be positive"));
        }
        Ok(())
    }
}

/// A linear map applied to row vectors: `y = x·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DMatrix<f64>,
    pub bias: RowDVector<f64>,
}

impl Linear {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DMatrix::zeros(input, output),
            bias: RowDVector::zeros(output),
        }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.weight;
        for mut row in y.row_iter_mut() {
            row += &self.bias;
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: RowDVector<f64>,
    pub bias: RowDVector<f64>,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        Self {
            gain: RowDVector::from_element(dim, 1.0),
            bias: RowDVector::zeros(dim),
        }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x.clone();
        let d = x.ncols() as f64;
        for mut row in y.row_iter_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * self.gain[j] + self.bias[j];
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub config: FusionConfig,
    pub input: Linear,
    pub blocks: Vec<Block>,
    pub head1: Linear,
    pub head2: Linear,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

fn attention(b: &Block, x: &DMatrix<f64>, heads: usize) -> DMatrix<f64> {
    let (q, k, v) = (b.q.apply(x), b.k.apply(x), b.v.apply(x));
    let n = x.nrows();
    let dh = x.ncols() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = DMatrix::zeros(n, x.ncols());
    let mut scores = alloc::vec![0.0; n];
    for h in 0..heads {
        let (qh, kh, vh) = (
            q.columns(h * dh, dh),
            k.columns(h * dh, dh),
            v.columns(h * dh, dh),
        );
        for i in 0..n {
            for (j, s) in scores.iter_mut().enumerate() {
                *s = qh.row(i).dot(&kh.row(j)) * scale;
            }
            softmax_in_place(&mut scores);
            let mut row = out.view_mut((i, h * dh), (1, dh));
            for (j, s) in scores.iter().enumerate() {
                row += vh.row(j) * *s;
            }
        }
    }
    b.o.apply(&out)
}

/// Softmax weights over the rows of `e`; they sum to 1 and are all positive.
pub fn fusion_forward(params: &FusionParams, e: &EmbeddingSet) -> Result<Vec<f64>> {
    let cfg = &params.config;
    if e.is_empty() {
        return Err(Error::DimensionMismatch("no embedding rows".into()));
    }
    if e.width() != cfg.input_dim {
        return Err(Error::DimensionMismatch(alloc::format!(
            "embedding width {} vs input_dim {}",
            e.width(),
            cfg.input_dim
        )));
    }
    let mut x = params.input.apply(&e.rows);
    for b in &params.blocks {
        x += attention(b, &b.ln1.apply(&x), cfg.heads);
        let hidden = b.ff1.apply(&b.ln2.apply(&x)).map(gelu);
        x += b.ff2.apply(&hidden);
    }
    let hidden = params.head1.apply(&x).map(gelu);
    let mut logits: Vec<f64> = params
        .head2
        .apply(&hidden)
        .column(0)
        .iter()
        .copied()
        .collect();
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// Gaussian weights (σ = 0.02), zero biases, unit layer-norm gains.
pub fn init_params(cfg: &FusionConfig, seed: u64) -> Result<FusionParams> {
    cfg.validate()?;
    let mut params = FusionParams::zeros(cfg);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    for (i, (name, tensor)) in params.tensors_mut().into_iter().enumerate() {
        if name.ends_with(".weight") {
            let mut rng = substream(seed, Domain::FusionInit, i as u64);
            tensor.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
    }
    Ok(params)
}

/// A tensor view used for serialization: name, shape, row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FusionParams {
    pub fn zeros(cfg: &FusionConfig) -> Self {
        let d = cfg.model_dim;
        let block = || Block {
            ln1: LayerNorm::new(d),
            q: Linear::zeros(d, d),
            k: Linear::zeros(d, d),
            v: Linear::zeros(d, d),
            o: Linear::zeros(d, d),
            ln2: LayerNorm::new(d),
            ff1: Linear::zeros(d, 4 * d),
            ff2: Linear::zeros(4 * d, d),
        };
        Self {
            config: *cfg,
            input: Linear::zeros(cfg.input_dim, d),
            blocks: (0..cfg.blocks).map(|_| block()).collect(),
            head1: Linear::zeros(d, d),
            head2: Linear::zeros(d, 1),
        }
    }

    /// Every parameter tensor in a fixed order, with a stable name.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        fn lin<'a>(out: &mut Vec<(String, &'a mut [f64])>, name: &str, l: &'a mut Linear) {
            out.push((alloc::format!("{name}.weight"), l.weight.as_mut_slice()));
            out.push((alloc::format!("{name}.bias"), l.bias.as_mut_slice()));
        }
        fn ln<'a>(out: &mut Vec<(String, &'a mut [f64])>, name: &str, l: &'a mut LayerNorm) {
            out.push((alloc::format!("{name}.gain"), l.gain.as_mut_slice()));
            out.push((alloc::format!("{name}.bias"), l.bias.as_mut_slice()));
        }
        let mut out = Vec::new();
        lin(&mut out, "input", &mut self.input);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            ln(&mut out, &alloc::format!("block{i}.ln1"), &mut b.ln1);
            lin(&mut out, &alloc::format!("block{i}.q"), &mut b.q);
            lin(&mut out, &alloc::format!("block{i}.k"), &mut b.k);
            lin(&mut out, &alloc::format!("block{i}.v"), &mut b.v);
            lin(&mut out, &alloc::format!("block{i}.o"), &mut b.o);
            ln(&mut out, &alloc::format!("block{i}.ln2"), &mut b.ln2);
            lin(&mut out, &alloc::format!("block{i}.ff1"), &mut b.ff1);
            lin(&mut out, &alloc::format!("block{i}.ff2"), &mut b.ff2);
        }
        lin(&mut out, "head1", &mut self.head1);
        lin(&mut out, "head2", &mut self.head2);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.clone()
            .tensors_mut()
            .iter()
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Tensors in row-major order (nalgebra stores column-major).
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let shapes = self.shapes();
        let mut copy = self.clone();
        copy.tensors_mut()
            .into_iter()
            .zip(shapes)
            .map(|((name, data), (rows, cols))| NamedTensor {
                name,
                rows,
                cols,
                data: (0..rows * cols)
                    .map(|i| data[(i % cols) * rows + i / cols])
                    .collect(),
            })
            .collect()
    }

    pub fn from_named_tensors(cfg: &FusionConfig, tensors: &[NamedTensor]) -> Result<Self> {
        cfg.validate()?;
        let mut params = Self::zeros(cfg);
        let shapes = params.shapes();
        let slots = params.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::DimensionMismatch(alloc::format!(
                "expected {} tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (((name, slot), (rows, cols)), t) in slots.into_iter().zip(shapes).zip(tensors) {
            if t.name != name || t.rows != rows || t.cols != cols || t.data.len() != rows * cols {
                return Err(Error::DimensionMismatch(alloc::format!(
                    "tensor {} ({}×{}) does not match {} ({}×{})",
                    t.name,
                    t.rows,
                    t.cols,
                    name,
                    rows,
                    cols
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::DimensionMismatch(alloc::format!(
                    "tensor {} has non-finite values",
                    t.name
                )));
            }
            for (i, v) in t.data.iter().enumerate() {
                slot[(i % cols) * rows + i / cols] = *v;
            }
        }
        Ok(params)
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let lin = |out: &mut Vec<(usize, usize)>, l: &Linear| {
            out.push(l.weight.shape());
            out.push((1, l.bias.len()));
        };
        let ln = |out: &mut Vec<(usize, usize)>, l: &LayerNorm| {
            out.push((1, l.gain.len()));
            out.push((1, l.bias.len()));
        };
        lin(&mut out, &self.input);
        for b in &self.blocks {
            ln(&mut out, &b.ln1);
            for l in [&b.q, &b.k, &b.v, &b.o] {
                lin(&mut out, l);
            }
            ln(&mut out, &b.ln2);
            lin(&mut out, &b.ff1);
            lin(&mut out, &b.ff2);
        }
        lin(&mut out, &self.head1);
        lin(&mut out, &self.head2);
        out
    }
}
