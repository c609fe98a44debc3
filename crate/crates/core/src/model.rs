//! Dense regression head mapping a feature vector to the raw Gaussian
//! parameterization, plus prediction and checkpoint I/O.
//!
//! # Checkpoint layout
//!
//! Little-endian binary, in order:
//!
//! | field          | type                                  |
//! |----------------|---------------------------------------|
//! | magic          | 8 bytes, `QGHEAD01`                   |
//! | label_dims     | u32                                   |
//! | input_dim      | u32                                   |
//! | variant        | u8 (0 = full, 1 = independent, 2 = mse) |
//! | dropout_rate   | f64                                   |
//! | seed           | u64                                   |
//! | hidden count   | u32, followed by that many u32 widths |
//! | parameter count| u64                                   |
//! | parameters     | f64 each                              |
//!
//! Parameters are stored layer by layer: the weight matrix (rows = outputs)
//! row-major, then the bias vector.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::gaussian::{
    packed_len, AffineMap, CovarianceMatrix, GaussianParams, LowerTriangularRaw, MeanVector,
    RawGaussian, QUALITY_DIMS,
};
use crate::loss::{diag_gnll_value_and_grad_raw, gnll_value_and_grad_raw, mse_value_and_grad_raw};

const MAGIC: &[u8; 8] = b"QGHEAD01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Mean plus full covariance through the packed Cholesky triangle.
    Full,
    /// Mean plus one scale per dimension; covariance is diagonal.
    Independent,
    /// Mean only, trained with squared error.
    Mse,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::Independent, Variant::Mse];

    /// Raw output width for `n` label dimensions.
    pub fn output_dim(self, n: usize) -> usize {
        match self {
            Variant::Full => n + packed_len(n),
            Variant::Independent => 2 * n,
            Variant::Mse => n,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Independent => "independent",
            Variant::Mse => "mse",
        }
    }

    pub fn is_probabilistic(self) -> bool {
        !matches!(self, Variant::Mse)
    }

    fn code(self) -> u8 {
        match self {
            Variant::Full => 0,
            Variant::Independent => 1,
            Variant::Mse => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Variant::Full),
            1 => Ok(Variant::Independent),
            2 => Ok(Variant::Mse),
            other => Err(Error::Schema(format!("unknown variant code {other}"))),
        }
    }

    /// Per-sample training loss and its gradient on the raw output.
    pub fn loss_and_grad(self, raw: &[f64], y: &[f64], map: &AffineMap) -> Result<(f64, Vec<f64>)> {
        let n = map.dim();
        if raw.len() != self.output_dim(n) {
            return Err(invalid(format!(
                "{} head output must have {} values, got {}",
                self.name(),
                self.output_dim(n),
                raw.len()
            )));
        }
        let (loss, grad) = match self {
            Variant::Full => gnll_value_and_grad_raw(&RawGaussian::from_flat(raw, n)?, y, map)?,
            Variant::Independent => {
                diag_gnll_value_and_grad_raw(&MeanVector::new(raw[..n].to_vec())?, &raw[n..], y, map)?
            }
            Variant::Mse => mse_value_and_grad_raw(raw, y, map)?,
        };
        Ok((loss.value(), grad.flatten()))
    }

    /// Turns a raw output into a label-scale prediction.
    pub fn to_prediction(self, raw: &[f64], map: &AffineMap) -> Result<Prediction> {
        let n = map.dim();
        if raw.len() != self.output_dim(n) {
            return Err(invalid(format!(
                "{} head output must have {} values, got {}",
                self.name(),
                self.output_dim(n),
                raw.len()
            )));
        }
        let gaussian = match self {
            Variant::Full => RawGaussian::from_flat(raw, n)?.to_label_gaussian(map)?,
            Variant::Independent => {
                RawGaussian::new(raw[..n].to_vec(), LowerTriangularRaw::diagonal(&raw[n..])?)?
                    .to_label_gaussian(map)?
            }
            Variant::Mse => GaussianParams::new(
                MeanVector::new(map.apply(raw)?)?,
                CovarianceMatrix::identity(n),
            )?,
        };
        let point = gaussian.mean().clone();
        Ok(Prediction { gaussian, point })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Variant::Full),
            "independent" | "indep" => Ok(Variant::Independent),
            "mse" => Ok(Variant::Mse),
            other => Err(Error::InvalidConfig(format!(
                "unknown variant `{other}` (expected full, independent or mse)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub variant: Variant,
    pub dropout_rate: f64,
    pub seed: u64,
    pub label_dims: usize,
}

impl HeadConfig {
    pub fn new(input_dim: usize, variant: Variant) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![256, 64],
            variant,
            dropout_rate: 0.0,
            seed: 0,
            label_dims: QUALITY_DIMS,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.variant.output_dim(self.label_dims)
    }

    /// `(outputs, inputs)` per dense layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim());
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.label_dims == 0 {
            return Err(Error::InvalidConfig("layer dimensions must be positive".into()));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&h| h == 0) {
            return Err(Error::InvalidConfig(format!("hidden layer {i} has zero width")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate {} is outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Label-scale predictive distribution and its point estimate (the mean).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub gaussian: GaussianParams,
    pub point: MeanVector,
}

/// Dense network parameters, stored flat: for each layer the weights
/// (row-major, rows = outputs) followed by the biases.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    config: HeadConfig,
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

/// Intermediate values from a training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (the feature vector for layer 0).
    inputs: Vec<Vec<f64>>,
    /// Per hidden unit, the factor its upstream gradient is multiplied by:
    /// zero where ReLU or dropout blocked it, the dropout scale otherwise.
    gates: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl HeadModel {
    fn with_params(config: HeadConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for &(out, inp) in &shapes {
            offsets.push(total);
            total += out * inp + out;
        }
        if params.len() != total {
            return Err(Error::Schema(format!(
                "expected {total} parameters for this architecture, found {}",
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Schema(format!("parameter {i} is not finite")));
        }
        Ok(Self {
            config,
            shapes,
            offsets,
            params,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    pub fn layer_shape(&self, layer: usize) -> (usize, usize) {
        self.shapes[layer]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let (out, inp) = self.shapes[layer];
        let o = self.offsets[layer];
        &self.params[o..o + out * inp]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let (out, inp) = self.shapes[layer];
        let o = self.offsets[layer];
        &mut self.params[o..o + out * inp]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let (out, inp) = self.shapes[layer];
        let o = self.offsets[layer] + out * inp;
        &self.params[o..o + out]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let (out, inp) = self.shapes[layer];
        let o = self.offsets[layer] + out * inp;
        &mut self.params[o..o + out]
    }

    /// Human-readable name of the block containing flat parameter `index`.
    pub fn block_name(&self, index: usize) -> String {
        for (l, &(out, inp)) in self.shapes.iter().enumerate().rev() {
            let o = self.offsets[l];
            if index >= o {
                let local = index - o;
                return if local < out * inp {
                    format!("layer {l} weights [{}, {}]", local / inp, local % inp)
                } else {
                    format!("layer {l} bias [{}]", local - out * inp)
                };
            }
        }
        format!("parameter {index}")
    }

    fn dense(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let inp = self.shapes[layer].1;
        let w = self.weights(layer);
        self.bias(layer)
            .iter()
            .zip(w.chunks_exact(inp))
            .map(|(b, row)| b + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(invalid(format!(
                "feature vector has length {} but the head expects {}",
                x.len(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Forward pass that keeps what backpropagation needs.
    pub fn forward_cached(&self, x: &[f64], training: bool, dropout_seed: u64) -> Result<ForwardCache> {
        self.check_input(x)?;
        let rate = self.config.dropout_rate;
        let use_dropout = training && rate > 0.0;
        let keep_scale = 1.0 / (1.0 - rate);
        let mut rng = use_dropout.then(|| ChaCha8Rng::seed_from_u64(dropout_seed));

        let last = self.num_layers() - 1;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut gates = Vec::with_capacity(last);
        let mut h = x.to_vec();
        for layer in 0..last {
            let mut z = self.dense(layer, &h);
            let mut gate = vec![0.0; z.len()];
            for (zi, gi) in z.iter_mut().zip(gate.iter_mut()) {
                let mut factor = if *zi > 0.0 { 1.0 } else { 0.0 };
                if let Some(rng) = rng.as_mut() {
                    factor *= if rng.gen::<f64>() < rate { 0.0 } else { keep_scale };
                }
                *zi = if factor == 0.0 { 0.0 } else { *zi * factor };
                *gi = factor;
            }
            inputs.push(std::mem::replace(&mut h, z));
            gates.push(gate);
        }
        let output = self.dense(last, &h);
        inputs.push(h);
        Ok(ForwardCache {
            inputs,
            gates,
            output,
        })
    }

    /// Accumulates `∂loss/∂params` into `grads` given `∂loss/∂output`.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64], grads: &mut [f64]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(invalid("gradient buffer does not match parameter count"));
        }
        if d_output.len() != cache.output.len() {
            return Err(invalid("output gradient has the wrong length"));
        }
        let mut delta = d_output.to_vec();
        for layer in (0..self.num_layers()).rev() {
            let (out, inp) = self.shapes[layer];
            let input = &cache.inputs[layer];
            let o = self.offsets[layer];
            {
                let (gw, gb) = grads[o..o + out * inp + out].split_at_mut(out * inp);
                for r in 0..out {
                    let d = delta[r];
                    if d != 0.0 {
                        for (g, a) in gw[r * inp..(r + 1) * inp].iter_mut().zip(input) {
                            *g += d * a;
                        }
                    }
                    gb[r] += d;
                }
            }
            if layer > 0 {
                let w = self.weights(layer);
                let gate = &cache.gates[layer - 1];
                let mut prev = vec![0.0; inp];
                for r in 0..out {
                    let d = delta[r];
                    if d != 0.0 {
                        for (p, a) in prev.iter_mut().zip(&w[r * inp..(r + 1) * inp]) {
                            *p += a * d;
                        }
                    }
                }
                for (p, g) in prev.iter_mut().zip(gate) {
                    *p *= g;
                }
                delta = prev;
            }
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases, deterministic in `config.seed`.
pub fn init_head(config: &HeadConfig) -> Result<HeadModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = Vec::new();
    for (out, inp) in config.layer_shapes() {
        let limit = (6.0 / (inp + out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        params.extend((0..out * inp).map(|_| dist.sample(&mut rng)));
        params.resize(params.len() + out, 0.0);
    }
    HeadModel::with_params(config.clone(), params)
}

/// Raw head output. With `training = false` (or a zero dropout rate) the pass
/// is deterministic and `dropout_seed` is unused.
pub fn forward(model: &HeadModel, x: &[f64], training: bool, dropout_seed: u64) -> Result<Vec<f64>> {
    Ok(model.forward_cached(x, training, dropout_seed)?.output)
}

/// Label-scale predictive Gaussian for one feature vector.
pub fn predict(model: &HeadModel, x: &[f64], map: &AffineMap) -> Result<Prediction> {
    if map.dim() != model.config.label_dims {
        return Err(invalid(format!(
            "affine map has dimension {} but the head predicts {}",
            map.dim(),
            model.config.label_dims
        )));
    }
    let raw = forward(model, x, false, 0)?;
    model.config.variant.to_prediction(&raw, map)
}

impl HeadModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(c.label_dims as u32).to_le_bytes());
        out.extend_from_slice(&(c.input_dim as u32).to_le_bytes());
        out.push(c.variant.code());
        out.extend_from_slice(&c.dropout_rate.to_le_bytes());
        out.extend_from_slice(&c.seed.to_le_bytes());
        out.extend_from_slice(&(c.hidden_dims.len() as u32).to_le_bytes());
        for &h in &c.hidden_dims {
            out.extend_from_slice(&(h as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Schema("not a head checkpoint (bad magic)".into()));
        }
        let label_dims = r.u32()? as usize;
        let input_dim = r.u32()? as usize;
        let variant = Variant::from_code(r.take(1)?[0])?;
        let dropout_rate = r.f64()?;
        let seed = r.u64()?;
        let hidden_count = r.u32()? as usize;
        let hidden_dims = (0..hidden_count)
            .map(|_| r.u32().map(|h| h as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = r.u64()? as usize;
        if r.remaining() != count * 8 {
            return Err(Error::Schema(format!(
                "checkpoint declares {count} parameters but carries {} bytes of them",
                r.remaining()
            )));
        }
        let params = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let config = HeadConfig {
            input_dim,
            hidden_dims,
            variant,
            dropout_rate,
            seed,
            label_dims,
        };
        Self::with_params(config, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Schema("checkpoint is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
