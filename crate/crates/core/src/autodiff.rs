//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each operation appends a
//! node holding its output value and whatever it needs for the backward
//! sweep; nodes are never mutated once recorded. [`Graph::backward`] walks the
//! tape in reverse creation order, so every parent is visited after all of
//! its consumers.
//!
//! Matrices are rank-2 tensors. Signal-like activations are channel-major
//! (`channels x frames`), sequence activations are time-major
//! (`frames x dim`).

use std::hash::{DefaultHasher, Hash, Hasher};

use crate::error::{IrisError, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Normalization extent for [`Graph::standardize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// All elements jointly.
    All,
    /// Each row over its columns.
    Rows,
    /// Each column over its rows.
    Cols,
}

/// Geometry of a 1-D convolution over a `channels x length` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv1dSpec {
    pub fn strided(stride: usize) -> Self {
        Self {
            stride,
            padding: 0,
            dilation: 1,
        }
    }

    /// Output frames for an input of `length` samples and a kernel of `kernel` taps.
    pub fn output_len(&self, length: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = length + 2 * self.padding;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

#[derive(Debug, Clone, Copy)]
struct Geom1d {
    c_in: usize,
    c_out: usize,
    kernel: usize,
    t_in: usize,
    t_out: usize,
    spec: Conv1dSpec,
}

#[derive(Debug, Clone, Copy)]
struct Geom2d {
    c_in: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    stride: (usize, usize),
    padding: (usize, usize),
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var, Var),
    MulScalar(Var, Var),
    Affine(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Relu(Var),
    Prelu(Var, Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Transpose(Var, usize, usize),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    NarrowCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Geom1d,
        col: Vec<f64>,
    },
    DepthwiseConv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Geom1d,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        geom: Geom1d,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Geom2d,
        col: Vec<f64>,
    },
    Standardize {
        x: Var,
        axis: Axis,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Fused {
        x: Var,
        grad: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, if any flowed into it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Recording tape for one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(IrisError::shape(
            op,
            format!("operand shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn im2col_1d(x: &[f64], g: &Geom1d) -> Vec<f64> {
    let (k, t_out) = (g.kernel, g.t_out);
    let mut col = vec![0.0; g.c_in * k * t_out];
    let pad = g.spec.padding as isize;
    for i in 0..g.c_in {
        let xrow = &x[i * g.t_in..(i + 1) * g.t_in];
        for kk in 0..k {
            let row = &mut col[(i * k + kk) * t_out..(i * k + kk + 1) * t_out];
            let offset = (kk * g.spec.dilation) as isize - pad;
            for (f, slot) in row.iter_mut().enumerate() {
                let pos = (f * g.spec.stride) as isize + offset;
                if pos >= 0 && (pos as usize) < g.t_in {
                    *slot = xrow[pos as usize];
                }
            }
        }
    }
    col
}

fn col2im_1d(col: &[f64], g: &Geom1d, dx: &mut [f64]) {
    let (k, t_out) = (g.kernel, g.t_out);
    let pad = g.spec.padding as isize;
    for i in 0..g.c_in {
        let xrow = &mut dx[i * g.t_in..(i + 1) * g.t_in];
        for kk in 0..k {
            let row = &col[(i * k + kk) * t_out..(i * k + kk + 1) * t_out];
            let offset = (kk * g.spec.dilation) as isize - pad;
            for (f, v) in row.iter().enumerate() {
                let pos = (f * g.spec.stride) as isize + offset;
                if pos >= 0 && (pos as usize) < g.t_in {
                    xrow[pos as usize] += v;
                }
            }
        }
    }
}

fn im2col_2d(x: &[f64], g: &Geom2d) -> Vec<f64> {
    let cols = g.oh * g.ow;
    let mut col = vec![0.0; g.c_in * g.kh * g.kw * cols];
    for c in 0..g.c_in {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let r = (c * g.kh + i) * g.kw + j;
                let row = &mut col[r * cols..(r + 1) * cols];
                for oy in 0..g.oh {
                    let y = (oy * g.stride.0 + i) as isize - g.padding.0 as isize;
                    if y < 0 || y as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let xx = (ox * g.stride.1 + j) as isize - g.padding.1 as isize;
                        if xx < 0 || xx as usize >= g.w {
                            continue;
                        }
                        row[oy * g.ow + ox] = x[(c * g.h + y as usize) * g.w + xx as usize];
                    }
                }
            }
        }
    }
    col
}

fn col2im_2d(col: &[f64], g: &Geom2d, dx: &mut [f64]) {
    let cols = g.oh * g.ow;
    for c in 0..g.c_in {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let r = (c * g.kh + i) * g.kw + j;
                let row = &col[r * cols..(r + 1) * cols];
                for oy in 0..g.oh {
                    let y = (oy * g.stride.0 + i) as isize - g.padding.0 as isize;
                    if y < 0 || y as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let xx = (ox * g.stride.1 + j) as isize - g.padding.1 as isize;
                        if xx < 0 || xx as usize >= g.w {
                            continue;
                        }
                        dx[(c * g.h + y as usize) * g.w + xx as usize] += row[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

/// Splits `data` into consecutive groups for [`Axis`] normalization and
/// returns, per group, the list of flat indices it covers via a closure.
fn for_each_group(shape: (usize, usize), axis: Axis, mut f: impl FnMut(&mut dyn Iterator<Item = usize>)) {
    let (r, c) = shape;
    match axis {
        Axis::All => f(&mut (0..r * c)),
        Axis::Rows => {
            for i in 0..r {
                f(&mut (i * c..(i + 1) * c));
            }
        }
        Axis::Cols => {
            for j in 0..c {
                f(&mut (0..r).map(move |i| i * c + j));
            }
        }
    }
}

fn group_count(shape: (usize, usize), axis: Axis) -> usize {
    match axis {
        Axis::All => 1,
        Axis::Rows => shape.0,
        Axis::Cols => shape.1,
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = if v == f64::NEG_INFINITY { 0.0 } else { (v - max).exp() };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Digest of the side of zero on which every ReLU and PReLU input lies.
    /// Two evaluations with equal digests lie on the same smooth piece of
    /// the function.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            if let Op::Relu(x) | Op::Prelu(x, _) = node.op {
                for &v in self.nodes[x.0].value.data() {
                    (v > 0.0).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .map_err(|_| IrisError::shape(op, format!("expected a matrix, got {:?}", self.shape(v))))
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        same_shape(op, self.value(a), self.value(b))?;
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, make(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    fn check_scalar(&self, op: &'static str, s: Var) -> Result<f64> {
        let t = self.value(s);
        if t.numel() != 1 {
            return Err(IrisError::shape(op, format!("expected a single value, got {:?}", t.shape())));
        }
        Ok(t.data()[0])
    }

    /// `a + s` with a single-valued `s` broadcast over `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.check_scalar("add_scalar", s)?;
        let va = self.value(a);
        let t = Tensor::from_parts(va.shape().to_vec(), va.data().iter().map(|x| x + sv).collect());
        let rg = self.rg(&[a, s]);
        Ok(self.push(t, Op::AddScalar(a, s), rg))
    }

    /// `a * s` with a single-valued `s` broadcast over `a`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.check_scalar("mul_scalar", s)?;
        let va = self.value(a);
        let t = Tensor::from_parts(va.shape().to_vec(), va.data().iter().map(|x| x * sv).collect());
        let rg = self.rg(&[a, s]);
        Ok(self.push(t, Op::MulScalar(a, s), rg))
    }

    /// `scale * a + shift` with constant coefficients.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let va = self.value(a);
        let t = Tensor::from_parts(
            va.shape().to_vec(),
            va.data().iter().map(|x| scale * x + shift).collect(),
        );
        let rg = self.rg(&[a]);
        self.push(t, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 0.0)
    }

    fn broadcast(
        &mut self,
        op: &'static str,
        a: Var,
        v: Var,
        along_rows: bool,
        f: impl Fn(f64, f64) -> f64,
        make: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let (r, c) = self.dims2(op, a)?;
        let want = if along_rows { c } else { r };
        if self.value(v).numel() != want {
            return Err(IrisError::shape(
                op,
                format!(
                    "broadcast operand has {} values, matrix {r}x{c} needs {want}",
                    self.value(v).numel()
                ),
            ));
        }
        let va = self.value(a).data();
        let vv = self.value(v).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                let b = if along_rows { vv[j] } else { vv[i] };
                out[i * c + j] = f(va[i * c + j], b);
            }
        }
        let rg = self.rg(&[a, v]);
        Ok(self.push(Tensor::from_parts(vec![r, c], out), make(a, v), rg))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.broadcast("add_row", a, row, true, |x, y| x + y, Op::AddRow)
    }

    /// Multiplies every row elementwise by a length-`cols` vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.broadcast("mul_row", a, row, true, |x, y| x * y, Op::MulRow)
    }

    /// Adds a length-`rows` vector to every column.
    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var> {
        self.broadcast("add_col", a, col, false, |x, y| x + y, Op::AddCol)
    }

    /// Multiplies every column elementwise by a length-`rows` vector.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        self.broadcast("mul_col", a, col, false, |x, y| x * y, Op::MulCol)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (br, bc) = self.dims2("matmul", b)?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(IrisError::shape(
                "matmul",
                format!("inner dimension {k} of left operand differs from {kb} of right operand"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), trans_b, &mut out, false);
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul {
                a,
                b,
                trans_b,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    /// `a · b` for `m x k` and `k x n` matrices.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `m x k` and `n x k` matrices.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, make: fn(Var) -> Op) -> Var {
        let va = self.value(a);
        let t = Tensor::from_parts(va.shape().to_vec(), va.data().iter().map(|x| f(*x)).collect());
        let rg = self.rg(&[a]);
        self.push(t, make(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            Op::Sigmoid,
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square)
    }

    /// Parametric ReLU with one shared negative slope.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var> {
        let s = self.check_scalar("prelu", slope)?;
        let va = self.value(a);
        let t = Tensor::from_parts(
            va.shape().to_vec(),
            va.data().iter().map(|&x| if x > 0.0 { x } else { s * x }).collect(),
        );
        let rg = self.rg(&[a, slope]);
        Ok(self.push(t, Op::Prelu(a, slope), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.numel() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Sum of elementwise products, a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2("transpose", a)?;
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(a, r, c), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// `out[j] = a[indices[j]]`, with `None` producing zero.
    pub fn gather(&mut self, a: Var, indices: &[Option<usize>], shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != indices.len() || shape.iter().any(|&d| d == 0) {
            return Err(IrisError::shape(
                "gather",
                format!("{} indices cannot fill shape {shape:?}", indices.len()),
            ));
        }
        let src = self.value(a).data();
        let mut flat = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for idx in indices {
            match idx {
                Some(i) if *i < src.len() => {
                    flat.push(*i);
                    out.push(src[*i]);
                }
                Some(i) => {
                    return Err(IrisError::shape(
                        "gather",
                        format!("index {i} out of range for {} values", src.len()),
                    ))
                }
                None => {
                    flat.push(usize::MAX);
                    out.push(0.0);
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(shape.to_vec(), out), Op::Gather(a, flat), rg))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn narrow_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2("narrow_cols", a)?;
        if len == 0 || start + len > c {
            return Err(IrisError::shape(
                "narrow_cols",
                format!("columns {start}..{} exceed width {c}", start + len),
            ));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(vec![r, len], out), Op::NarrowCols { x: a, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(IrisError::shape("concat_cols", "no operands"));
        }
        let r = self.dims2("concat_cols", parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2("concat_cols", p)?;
            if pr != r {
                return Err(IrisError::shape(
                    "concat_cols",
                    format!("row count {pr} differs from {r}"),
                ));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..r {
                out[i * total + off..i * total + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::from_parts(vec![r, total], out), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(IrisError::shape("concat_rows", "no operands"));
        }
        let c = self.dims2("concat_rows", parts[0])?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.dims2("concat_rows", p)?;
            if pc != c {
                return Err(IrisError::shape(
                    "concat_rows",
                    format!("column count {pc} differs from {c}"),
                ));
            }
            rows += pr;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::from_parts(vec![rows, c], out), Op::ConcatRows(parts.to_vec()), rg))
    }

    /// 1-D convolution of a `c_in x length` input with a
    /// `c_out x c_in x kernel` weight and optional `c_out` bias.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: Conv1dSpec) -> Result<Var> {
        let (c_in, t_in) = self.dims2("conv1d", x)?;
        let ws = self.shape(w).to_vec();
        let [c_out, wc_in, kernel] = ws[..] else {
            return Err(IrisError::shape(
                "conv1d",
                format!("weight must be c_out x c_in x kernel, got {ws:?}"),
            ));
        };
        if wc_in != c_in {
            return Err(IrisError::shape(
                "conv1d",
                format!("input channels {c_in} differ from weight channels {wc_in}"),
            ));
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return Err(IrisError::shape("conv1d", "stride and dilation must be >= 1"));
        }
        let Some(t_out) = spec.output_len(t_in, kernel) else {
            return Err(IrisError::shape(
                "conv1d",
                format!("input length {t_in} shorter than kernel span of {kernel} taps"),
            ));
        };
        if let Some(b) = bias {
            if self.value(b).numel() != c_out {
                return Err(IrisError::shape(
                    "conv1d",
                    format!("bias has {} values for {c_out} output channels", self.value(b).numel()),
                ));
            }
        }
        let geom = Geom1d {
            c_in,
            c_out,
            kernel,
            t_in,
            t_out,
            spec,
        };
        let col = im2col_1d(self.value(x).data(), &geom);
        let mut out = vec![0.0; c_out * t_out];
        gemm(c_out, c_in * kernel, t_out, self.value(w).data(), false, &col, false, &mut out, false);
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for (o, row) in out.chunks_mut(t_out).enumerate() {
                row.iter_mut().for_each(|v| *v += bv[o]);
            }
        }
        let mut deps = vec![x, w];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            Tensor::from_parts(vec![c_out, t_out], out),
            Op::Conv1d {
                x,
                w,
                b: bias,
                geom,
                col,
            },
            rg,
        ))
    }

    /// Per-channel convolution with a `channels x kernel` weight.
    pub fn depthwise_conv1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        spec: Conv1dSpec,
    ) -> Result<Var> {
        let (c, t_in) = self.dims2("depthwise_conv1d", x)?;
        let (wc, kernel) = self.dims2("depthwise_conv1d", w)?;
        if wc != c {
            return Err(IrisError::shape(
                "depthwise_conv1d",
                format!("input channels {c} differ from weight channels {wc}"),
            ));
        }
        let Some(t_out) = spec.output_len(t_in, kernel) else {
            return Err(IrisError::shape(
                "depthwise_conv1d",
                format!("input length {t_in} shorter than kernel span"),
            ));
        };
        if let Some(b) = bias {
            if self.value(b).numel() != c {
                return Err(IrisError::shape("depthwise_conv1d", "bias length differs from channels"));
            }
        }
        let geom = Geom1d {
            c_in: c,
            c_out: c,
            kernel,
            t_in,
            t_out,
            spec,
        };
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; c * t_out];
        let pad = spec.padding as isize;
        for ch in 0..c {
            let xrow = &xv[ch * t_in..(ch + 1) * t_in];
            let orow = &mut out[ch * t_out..(ch + 1) * t_out];
            for kk in 0..kernel {
                let wk = wv[ch * kernel + kk];
                let offset = (kk * spec.dilation) as isize - pad;
                for (f, o) in orow.iter_mut().enumerate() {
                    let pos = (f * spec.stride) as isize + offset;
                    if pos >= 0 && (pos as usize) < t_in {
                        *o += wk * xrow[pos as usize];
                    }
                }
            }
            if let Some(b) = bias {
                let bv = self.value(b).data()[ch];
                orow.iter_mut().for_each(|v| *v += bv);
            }
        }
        let mut deps = vec![x, w];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            Tensor::from_parts(vec![c, t_out], out),
            Op::DepthwiseConv1d {
                x,
                w,
                b: bias,
                geom,
            },
            rg,
        ))
    }

    /// Transposed 1-D convolution of a `c_in x frames` input with a
    /// `c_in x c_out x kernel` weight; output length `(frames-1)*stride + kernel`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (c_in, frames) = self.dims2("conv_transpose1d", x)?;
        let ws = self.shape(w).to_vec();
        let [wc_in, c_out, kernel] = ws[..] else {
            return Err(IrisError::shape(
                "conv_transpose1d",
                format!("weight must be c_in x c_out x kernel, got {ws:?}"),
            ));
        };
        if wc_in != c_in {
            return Err(IrisError::shape(
                "conv_transpose1d",
                format!("input channels {c_in} differ from weight channels {wc_in}"),
            ));
        }
        if stride == 0 {
            return Err(IrisError::shape("conv_transpose1d", "stride must be >= 1"));
        }
        let length = (frames - 1) * stride + kernel;
        // The forward map is the adjoint of a conv1d from c_out to c_in channels.
        let geom = Geom1d {
            c_in: c_out,
            c_out: c_in,
            kernel,
            t_in: length,
            t_out: frames,
            spec: Conv1dSpec::strided(stride),
        };
        let mut cols = vec![0.0; c_out * kernel * frames];
        gemm(
            c_out * kernel,
            c_in,
            frames,
            self.value(w).data(),
            true,
            self.value(x).data(),
            false,
            &mut cols,
            false,
        );
        let mut out = vec![0.0; c_out * length];
        col2im_1d(&cols, &geom, &mut out);
        let rg = self.rg(&[x, w]);
        Ok(self.push(
            Tensor::from_parts(vec![c_out, length], out),
            Op::ConvTranspose1d { x, w, geom },
            rg,
        ))
    }

    /// 2-D convolution of a `c_in x h x w` input with a
    /// `c_out x c_in x kh x kw` weight.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let [c_in, h, wd] = xs[..] else {
            return Err(IrisError::shape("conv2d", format!("input must be c x h x w, got {xs:?}")));
        };
        let ws = self.shape(w).to_vec();
        let [c_out, wc_in, kh, kw] = ws[..] else {
            return Err(IrisError::shape(
                "conv2d",
                format!("weight must be c_out x c_in x kh x kw, got {ws:?}"),
            ));
        };
        if wc_in != c_in {
            return Err(IrisError::shape(
                "conv2d",
                format!("input channels {c_in} differ from weight channels {wc_in}"),
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(IrisError::shape("conv2d", "stride must be >= 1"));
        }
        if h + 2 * padding.0 < kh || wd + 2 * padding.1 < kw {
            return Err(IrisError::shape(
                "conv2d",
                format!("input {h}x{wd} smaller than kernel {kh}x{kw}"),
            ));
        }
        let oh = (h + 2 * padding.0 - kh) / stride.0 + 1;
        let ow = (wd + 2 * padding.1 - kw) / stride.1 + 1;
        let geom = Geom2d {
            c_in,
            c_out,
            kh,
            kw,
            h,
            w: wd,
            oh,
            ow,
            stride,
            padding,
        };
        let col = im2col_2d(self.value(x).data(), &geom);
        let mut out = vec![0.0; c_out * oh * ow];
        gemm(c_out, c_in * kh * kw, oh * ow, self.value(w).data(), false, &col, false, &mut out, false);
        if let Some(b) = bias {
            if self.value(b).numel() != c_out {
                return Err(IrisError::shape("conv2d", "bias length differs from output channels"));
            }
            let bv = self.value(b).data();
            for (o, row) in out.chunks_mut(oh * ow).enumerate() {
                row.iter_mut().for_each(|v| *v += bv[o]);
            }
        }
        let mut deps = vec![x, w];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            Tensor::from_parts(vec![c_out, oh, ow], out),
            Op::Conv2d {
                x,
                w,
                b: bias,
                geom,
                col,
            },
            rg,
        ))
    }

    /// Zero-mean, unit-variance normalization over `axis` of a matrix.
    pub fn standardize(&mut self, x: Var, axis: Axis, eps: f64) -> Result<Var> {
        let (r, c) = self.dims2("standardize", x)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(group_count((r, c), axis));
        for_each_group((r, c), axis, |idx| {
            let ids: Vec<usize> = idx.collect();
            let n = ids.len() as f64;
            let first = src[ids[0]];
            // A constant group maps to exact zeros; the rounded mean may not
            // equal the constant itself.
            let constant = ids.iter().all(|&i| src[i] == first);
            let mean = if constant {
                first
            } else {
                ids.iter().map(|&i| src[i]).sum::<f64>() / n
            };
            let var = ids.iter().map(|&i| (src[i] - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for &i in &ids {
                out[i] = (src[i] - mean) * inv;
            }
            inv_std.push(inv);
        });
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![r, c], out),
            Op::Standardize { x, axis, inv_std },
            rg,
        ))
    }

    /// Row-wise softmax. Entries whose `mask` flag is `false` get exactly zero
    /// weight; every row must keep at least one entry.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.dims2("softmax_rows", x)?;
        let mut logits = self.value(x).data().to_vec();
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(IrisError::shape(
                    "softmax_rows",
                    format!("mask has {} entries for a {r}x{c} matrix", m.len()),
                ));
            }
            for (i, row) in m.chunks(c).enumerate() {
                if !row.iter().any(|&keep| keep) {
                    return Err(IrisError::InvalidArgument(format!(
                        "attention row {i} has every key masked"
                    )));
                }
            }
            for (v, &keep) in logits.iter_mut().zip(m) {
                if !keep {
                    *v = f64::NEG_INFINITY;
                }
            }
        }
        let mut out = vec![0.0; r * c];
        for (row, o) in logits.chunks(c).zip(out.chunks_mut(c)) {
            softmax_row(row, o);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![r, c], out), Op::Softmax(x), rg))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("log_softmax_rows", x)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for (row, o) in src.chunks(c).zip(out.chunks_mut(c)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (ov, v) in o.iter_mut().zip(row) {
                *ov = v - lse;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![r, c], out), Op::LogSoftmax(x), rg))
    }

    /// Records a scalar function of `x` whose gradient was computed by the
    /// caller. Used for losses with closed-form backward passes such as CTC.
    pub fn fused_scalar(&mut self, x: Var, value: f64, grad: Vec<f64>) -> Result<Var> {
        if grad.len() != self.value(x).numel() {
            return Err(IrisError::shape(
                "fused_scalar",
                format!("gradient has {} values for {} inputs", grad.len(), self.value(x).numel()),
            ));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(value), Op::Fused { x, grad }, rg))
    }

    /// Reverse sweep from a single-valued `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(IrisError::shape(
                "backward",
                format!("root must hold one value, got {:?}", self.shape(root)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.acc(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(d) = self.acc(grads, *b) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d -= g);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.acc(grads, *a) {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(vb) {
                        *d += g * y;
                    }
                }
                if let Some(d) = self.acc(grads, *b) {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(va) {
                        *d += g * x;
                    }
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b).data();
                if let Some(d) = self.acc(grads, *a) {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(vb) {
                        *d += g / y;
                    }
                }
                if let Some(d) = self.acc(grads, *b) {
                    for (((d, g), y), q) in d.iter_mut().zip(g).zip(vb).zip(out) {
                        *d -= g * q / y;
                    }
                }
            }
            Op::AddScalar(a, s) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(d) = self.acc(grads, *s) {
                    d[0] += g.iter().sum::<f64>();
                }
            }
            Op::MulScalar(a, s) => {
                let sv = self.value(*s).data()[0];
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g * sv);
                }
                if let Some(d) = self.acc(grads, *s) {
                    d[0] += g.iter().zip(self.value(*a).data()).map(|(g, x)| g * x).sum::<f64>();
                }
            }
            Op::Affine(a, scale) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g * scale);
                }
            }
            Op::AddRow(a, v) | Op::AddCol(a, v) => {
                let along_rows = matches!(node.op, Op::AddRow(..));
                let c = node.value.shape()[1];
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(d) = self.acc(grads, *v) {
                    for (k, gv) in g.iter().enumerate() {
                        let idx = if along_rows { k % c } else { k / c };
                        d[idx] += gv;
                    }
                }
            }
            Op::MulRow(a, v) | Op::MulCol(a, v) => {
                let along_rows = matches!(node.op, Op::MulRow(..));
                let c = node.value.shape()[1];
                let (va, vv) = (self.value(*a).data(), self.value(*v).data());
                let pick = |k: usize| if along_rows { k % c } else { k / c };
                if let Some(d) = self.acc(grads, *a) {
                    for (k, (d, gv)) in d.iter_mut().zip(g).enumerate() {
                        *d += gv * vv[pick(k)];
                    }
                }
                if let Some(d) = self.acc(grads, *v) {
                    for (k, gv) in g.iter().enumerate() {
                        d[pick(k)] += gv * va[k];
                    }
                }
            }
            Op::MatMul {
                a,
                b,
                trans_b,
                m,
                k,
                n,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.acc(grads, *a) {
                    // dA = G · op(B)ᵀ
                    gemm(m, n, k, g, false, vb, !*trans_b, d, true);
                }
                if let Some(d) = self.acc(grads, *b) {
                    if *trans_b {
                        // B is n x k: dB = Gᵀ · A
                        gemm(n, m, k, g, true, va, false, d, true);
                    } else {
                        // dB = Aᵀ · G
                        gemm(k, m, n, va, true, g, false, d, true);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(out) {
                        if *y > 0.0 {
                            *d += g;
                        }
                    }
                }
            }
            Op::Prelu(a, s) => {
                let sv = self.value(*s).data()[0];
                let va = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(va) {
                        *d += if *x > 0.0 { *g } else { g * sv };
                    }
                }
                if let Some(d) = self.acc(grads, *s) {
                    d[0] += g.iter().zip(va).filter(|(_, x)| **x <= 0.0).map(|(g, x)| g * x).sum::<f64>();
                }
            }
            Op::Sigmoid(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(out) {
                        *d += g * y * (1.0 - y);
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(out) {
                        *d += g * y;
                    }
                }
            }
            Op::Log(a) => {
                let va = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(va) {
                        *d += g / x;
                    }
                }
            }
            Op::Sqrt(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(out) {
                        *d += g * 0.5 / y;
                    }
                }
            }
            Op::Square(a) => {
                let va = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(va) {
                        *d += 2.0 * g * x;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
            Op::Transpose(a, r, c) => {
                let (r, c) = (*r, *c);
                if let Some(d) = self.acc(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
            Op::Gather(a, idx) => {
                if let Some(d) = self.acc(grads, *a) {
                    for (gv, &src) in g.iter().zip(idx) {
                        if src != usize::MAX {
                            d[src] += gv;
                        }
                    }
                }
            }
            Op::NarrowCols { x, start } => {
                let c = self.value(*x).shape()[1];
                let (r, len) = (node.value.shape()[0], node.value.shape()[1]);
                if let Some(d) = self.acc(grads, *x) {
                    for i in 0..r {
                        for j in 0..len {
                            d[i * c + start + j] += g[i * len + j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = (node.value.shape()[0], node.value.shape()[1]);
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if let Some(d) = self.acc(grads, p) {
                        for i in 0..r {
                            for j in 0..w {
                                d[i * w + j] += g[i * total + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if let Some(d) = self.acc(grads, p) {
                        d.iter_mut().zip(&g[off..off + n]).for_each(|(d, g)| *d += g);
                    }
                    off += n;
                }
            }
            Op::Conv1d { x, w, b, geom, col } => {
                let kdim = geom.c_in * geom.kernel;
                if let Some(d) = self.acc(grads, *w) {
                    gemm(geom.c_out, geom.t_out, kdim, g, false, col, true, d, true);
                }
                if let Some(bv) = b {
                    if let Some(d) = self.acc(grads, *bv) {
                        for (o, row) in g.chunks(geom.t_out).enumerate() {
                            d[o] += row.iter().sum::<f64>();
                        }
                    }
                }
                if self.nodes[x.0].requires_grad {
                    let mut dcol = vec![0.0; kdim * geom.t_out];
                    gemm(kdim, geom.c_out, geom.t_out, self.value(*w).data(), true, g, false, &mut dcol, false);
                    if let Some(d) = self.acc(grads, *x) {
                        col2im_1d(&dcol, geom, d);
                    }
                }
            }
            Op::DepthwiseConv1d { x, w, b, geom } => {
                let (c, k, t_in, t_out) = (geom.c_in, geom.kernel, geom.t_in, geom.t_out);
                let pad = geom.spec.padding as isize;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let need_x = self.nodes[x.0].requires_grad;
                let need_w = self.nodes[w.0].requires_grad;
                let mut dx = if need_x { vec![0.0; c * t_in] } else { Vec::new() };
                let mut dw = if need_w { vec![0.0; c * k] } else { Vec::new() };
                for ch in 0..c {
                    let grow = &g[ch * t_out..(ch + 1) * t_out];
                    for kk in 0..k {
                        let offset = (kk * geom.spec.dilation) as isize - pad;
                        let wk = wv[ch * k + kk];
                        let mut acc_w = 0.0;
                        for (f, gv) in grow.iter().enumerate() {
                            let pos = (f * geom.spec.stride) as isize + offset;
                            if pos >= 0 && (pos as usize) < t_in {
                                let p = ch * t_in + pos as usize;
                                if need_x {
                                    dx[p] += gv * wk;
                                }
                                acc_w += gv * xv[p];
                            }
                        }
                        if need_w {
                            dw[ch * k + kk] += acc_w;
                        }
                    }
                }
                if let Some(d) = self.acc(grads, *x) {
                    d.iter_mut().zip(&dx).for_each(|(d, v)| *d += v);
                }
                if let Some(d) = self.acc(grads, *w) {
                    d.iter_mut().zip(&dw).for_each(|(d, v)| *d += v);
                }
                if let Some(bv) = b {
                    if let Some(d) = self.acc(grads, *bv) {
                        for (ch, row) in g.chunks(t_out).enumerate() {
                            d[ch] += row.iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::ConvTranspose1d { x, w, geom } => {
                // geom describes the adjoint conv1d: c_in here is the output
                // channel count, c_out the input channel count.
                let (c_out, c_in, k, frames) = (geom.c_in, geom.c_out, geom.kernel, geom.t_out);
                let dcols = im2col_1d(g, geom);
                if let Some(d) = self.acc(grads, *x) {
                    gemm(c_in, c_out * k, frames, self.value(*w).data(), false, &dcols, false, d, true);
                }
                if let Some(d) = self.acc(grads, *w) {
                    gemm(c_in, frames, c_out * k, self.value(*x).data(), false, &dcols, true, d, true);
                }
            }
            Op::Conv2d { x, w, b, geom, col } => {
                let kdim = geom.c_in * geom.kh * geom.kw;
                let cols = geom.oh * geom.ow;
                if let Some(d) = self.acc(grads, *w) {
                    gemm(geom.c_out, cols, kdim, g, false, col, true, d, true);
                }
                if let Some(bv) = b {
                    if let Some(d) = self.acc(grads, *bv) {
                        for (o, row) in g.chunks(cols).enumerate() {
                            d[o] += row.iter().sum::<f64>();
                        }
                    }
                }
                if self.nodes[x.0].requires_grad {
                    let mut dcol = vec![0.0; kdim * cols];
                    gemm(kdim, geom.c_out, cols, self.value(*w).data(), true, g, false, &mut dcol, false);
                    if let Some(d) = self.acc(grads, *x) {
                        col2im_2d(&dcol, geom, d);
                    }
                }
            }
            Op::Standardize { x, axis, inv_std } => {
                let shape = (node.value.shape()[0], node.value.shape()[1]);
                if let Some(d) = self.acc(grads, *x) {
                    let mut gi = 0;
                    for_each_group(shape, *axis, |idx| {
                        let ids: Vec<usize> = idx.collect();
                        let n = ids.len() as f64;
                        let mg = ids.iter().map(|&i| g[i]).sum::<f64>() / n;
                        let mgy = ids.iter().map(|&i| g[i] * out[i]).sum::<f64>() / n;
                        let inv = inv_std[gi];
                        for &i in &ids {
                            d[i] += inv * (g[i] - mg - out[i] * mgy);
                        }
                        gi += 1;
                    });
                }
            }
            Op::Softmax(a) => {
                let c = node.value.shape()[1];
                if let Some(d) = self.acc(grads, *a) {
                    for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let s: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                        for ((d, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (g - s);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let c = node.value.shape()[1];
                if let Some(d) = self.acc(grads, *a) {
                    for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let s: f64 = grow.iter().sum();
                        for ((d, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += g - y.exp() * s;
                        }
                    }
                }
            }
            Op::Fused { x, grad } => {
                if let Some(d) = self.acc(grads, *x) {
                    d.iter_mut().zip(grad).for_each(|(d, v)| *d += g[0] * v);
                }
            }
        }
    }
}
