//! Forward-pass context and shared layers.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{IrisError, Result};
use crate::params::{GradientSet, ParameterStore};
use crate::tensor::Tensor;

/// One forward pass: a fresh tape plus lazily bound parameters.
///
/// A parameter becomes a trainable leaf when its partition is not frozen;
/// otherwise it enters the tape as a constant and no gradient is computed
/// for it (gradients still flow through it to upstream inputs).
pub struct Forward<'a> {
    pub g: Graph,
    params: &'a ParameterStore,
    bound: HashMap<String, Var>,
    training: bool,
    rng: ChaCha8Rng,
    only: Option<BTreeSet<String>>,
}

impl<'a> Forward<'a> {
    /// Inference: dropout and augmentation disabled.
    pub fn eval(params: &'a ParameterStore) -> Self {
        Self {
            g: Graph::new(),
            params,
            bound: HashMap::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            only: None,
        }
    }

    /// Training pass; `seed` drives dropout masks.
    pub fn train(params: &'a ParameterStore, seed: u64) -> Self {
        Self {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Self::eval(params)
        }
    }

    /// Evaluation pass where exactly the named parameters are differentiable,
    /// regardless of partition freezing. Used by gradient checks.
    pub fn with_trainable(params: &'a ParameterStore, names: BTreeSet<String>) -> Self {
        Self {
            only: Some(names),
            ..Self::eval(params)
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn params(&self) -> &'a ParameterStore {
        self.params
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let t = self.params.get(name)?.clone();
        let trainable = match &self.only {
            Some(set) => set.contains(name),
            None => self.params.is_trainable(name),
        };
        let v = self.g.input(t, trainable);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Like [`Forward::param`], checking the stored shape first.
    pub fn param_shaped(&mut self, name: &str, shape: &[usize]) -> Result<Var> {
        self.params.expect(name, shape)?;
        self.param(name)
    }

    /// Inverted dropout; identity outside training or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !self.training || p <= 0.0 {
            return Ok(x);
        }
        let shape = self.g.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let m = self.g.constant(Tensor::new(shape, mask)?);
        self.g.mul(x, m)
    }

    /// Backward sweep collecting gradients of every bound trainable parameter.
    pub fn gradients(&self, root: Var) -> Result<GradientSet> {
        let mut grads = self.g.backward(root)?;
        let mut out = GradientSet::new();
        let mut bound: Vec<(&String, &Var)> = self.bound.iter().collect();
        bound.sort();
        for (name, v) in bound {
            if !self.g.requires_grad(*v) {
                continue;
            }
            let g = grads
                .take(*v)
                .unwrap_or_else(|| vec![0.0; self.g.value(*v).numel()]);
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

/// Parameter initializers. Values are rounded to `f32` so freshly built
/// stores equal their checkpointed form.
pub mod init {
    use super::*;

    pub fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
            .map(|v| v as f32 as f64)
            .collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn fan_in(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
        uniform(shape, 1.0 / (fan_in.max(1) as f64).sqrt(), rng)
    }

    /// Glorot-uniform for a `fan_in x fan_out` matrix.
    pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
        uniform(&[fan_in, fan_out], (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
    }
}

/// Registers a `fan_in x fan_out` linear layer under `prefix`.
pub fn add_linear(
    store: &mut ParameterStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    store.insert(format!("{prefix}.weight"), init::xavier(fan_in, fan_out, rng))?;
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]))
}

/// Registers layer-norm gain (ones) and bias (zeros) of width `dim`.
pub fn add_layer_norm(store: &mut ParameterStore, prefix: &str, dim: usize) -> Result<()> {
    store.insert(format!("{prefix}.gain"), Tensor::full(&[dim], 1.0))?;
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[dim]))
}

/// `x · W + b` for a time-major `frames x fan_in` input.
pub fn linear(fw: &mut Forward, prefix: &str, x: Var) -> Result<Var> {
    let w = fw.param(&format!("{prefix}.weight"))?;
    let b = fw.param(&format!("{prefix}.bias"))?;
    let y = fw.g.matmul(x, w)?;
    fw.g.add_row(y, b)
}

/// Per-frame layer normalization of a time-major matrix.
pub fn layer_norm(fw: &mut Forward, prefix: &str, x: Var) -> Result<Var> {
    let gain = fw.param(&format!("{prefix}.gain"))?;
    let bias = fw.param(&format!("{prefix}.bias"))?;
    let n = fw.g.standardize(x, crate::autodiff::Axis::Rows, 1e-5)?;
    let y = fw.g.mul_row(n, gain)?;
    fw.g.add_row(y, bias)
}

/// Softmax attention of `t_q x d` queries over `t_k x d` keys and
/// `t_k x d_v` values. `mask[i * t_k + j]` is `true` where query `i` may
/// attend to key `j`.
pub fn scaled_dot_attention(
    g: &mut Graph,
    query: Var,
    key: Var,
    value: Var,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let d = g.shape(query).get(1).copied().unwrap_or(0);
    if d == 0 || g.shape(key).get(1) != Some(&d) {
        return Err(IrisError::shape(
            "scaled_dot_attention",
            format!(
                "query width {d} must be >= 1 and equal key width {:?}",
                g.shape(key).get(1)
            ),
        ));
    }
    if g.shape(key)[0] != g.shape(value)[0] {
        return Err(IrisError::shape(
            "scaled_dot_attention",
            format!(
                "key frames {} differ from value frames {}",
                g.shape(key)[0],
                g.shape(value)[0]
            ),
        ));
    }
    let scores = g.matmul_t(query, key)?;
    let scaled = g.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = g.softmax_rows(scaled, mask)?;
    g.matmul(weights, value)
}

/// Registers the four projections of a multi-head attention block.
pub fn add_attention(
    store: &mut ParameterStore,
    prefix: &str,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for p in ["query", "key", "value", "out"] {
        add_linear(store, &format!("{prefix}.{p}"), dim, dim, rng)?;
    }
    Ok(())
}

/// Multi-head attention: heads are column blocks of the projected inputs.
pub fn multi_head_attention(
    fw: &mut Forward,
    prefix: &str,
    x_query: Var,
    x_memory: Var,
    heads: usize,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let q = linear(fw, &format!("{prefix}.query"), x_query)?;
    let k = linear(fw, &format!("{prefix}.key"), x_memory)?;
    let v = linear(fw, &format!("{prefix}.value"), x_memory)?;
    let dim = fw.g.shape(q)[1];
    if heads == 0 || dim % heads != 0 {
        return Err(IrisError::InvalidArgument(format!(
            "model dim {dim} is not divisible by {heads} heads"
        )));
    }
    let width = dim / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = fw.g.narrow_cols(q, h * width, width)?;
        let kh = fw.g.narrow_cols(k, h * width, width)?;
        let vh = fw.g.narrow_cols(v, h * width, width)?;
        outs.push(scaled_dot_attention(&mut fw.g, qh, kh, vh, mask)?);
    }
    let joined = if outs.len() == 1 { outs[0] } else { fw.g.concat_cols(&outs)? };
    linear(fw, &format!("{prefix}.out"), joined)
}
