//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every op appends a node holding its forward value; nodes only reference
//! earlier nodes, so a reverse sweep over the node list is a valid
//! topological order for the backward pass. Parameters enter through
//! [`Graph::param`], which snapshots the store entry; [`Graph::backward_into`]
//! adds the resulting gradients back into the store's accumulators for
//! trainable entries only.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::{ParamStore, Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Stack(Vec<Var>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    MaskedSoftmax(Var),
    LogSoftmax(Var),
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
    },
    Cols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Rows(Var, Vec<usize>),
    ReplaceRows {
        x: Var,
        fill: Var,
        rows: Vec<bool>,
    },
    Pick(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    NormalizeRows {
        x: Var,
        norms: Vec<F>,
    },
    /// Loss node whose gradient w.r.t. its input was computed in the forward pass.
    Fused {
        x: Var,
        grad: Vec<F>,
    },
}

#[derive(Debug, Clone)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients produced by one backward sweep, indexed by node.
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Graph<F: Scalar = f32> {
    nodes: Vec<Node<F>>,
    params: HashMap<String, Var>,
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

fn matrix_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match shape {
        [m, n] => Ok((*m, *n)),
        _ => Err(Error::Rank { expected: if op.is_empty() { "matrix" } else { op }, shape: shape.to_vec() }),
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        let value = if value.requires_grad() {
            let mut v = value;
            v.set_requires_grad(false);
            v
        } else {
            value
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a rank-0 (or single-element) node.
    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value.data()[0]
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf that is not backed by a store entry.
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Copy of `v`'s value with the gradient path cut.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.input(t)
    }

    /// Snapshots a store parameter into the graph. Repeated calls for the same
    /// name return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let entry = store.get(name).ok_or_else(|| Error::MissingGroup { names: vec![name.to_string()] })?;
        let v = self.push(entry.tensor.clone(), Op::Param, entry.trainable);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self.shape(a), "matmul lhs")?;
        let (k2, n) = matrix_dims(self.shape(b), "matmul rhs")?;
        if k != k2 {
            return Err(dim_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, self.value(a).data(), k as isize, 1, self.value(b).data(), n as isize, 1, F::zero(), &mut out);
        let ng = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self.shape(a), "matmul_bt lhs")?;
        let (n, k2) = matrix_dims(self.shape(b), "matmul_bt rhs")?;
        if k != k2 {
            return Err(dim_err("matmul_bt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, self.value(a).data(), k as isize, 1, self.value(b).data(), 1, k as isize, F::zero(), &mut out);
        let ng = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulBt(a, b), ng))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(name, self.shape(a), self.shape(b)));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    /// Broadcast-adds a vector over the last axis.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(b) != [d] || self.value(x).rank() == 0 {
            return Err(dim_err("add_row", self.shape(x), self.shape(b)));
        }
        let bias = self.value(b).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(d) {
            add_into(row, &bias);
        }
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.needs(&[x, b]);
        Ok(self.push(t, Op::AddRow(x, b), ng))
    }

    /// `x · w + b` for `x: T×in`, `w: in×out`, `b: out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn scale(&mut self, x: Var, s: F) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| *v * s).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, Op::Scale(x, s), ng))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| if *v > F::zero() { *v } else { F::zero() }).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, Op::Relu(x), ng))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v.abs()).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, Op::Abs(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(0.0f64, |acc, v| acc + v.to_f64().unwrap_or(f64::NAN));
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(F::lit(s)), Op::Sum(x), ng))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::Rank { expected: "non-empty tensor", shape: self.shape(x).to_vec() });
        }
        let s = self.value(x).data().iter().fold(0.0f64, |acc, v| acc + v.to_f64().unwrap_or(f64::NAN));
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(F::lit(s / n as f64)), Op::Mean(x), ng))
    }

    /// Packs single-element nodes into a vector.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let mut data = Vec::with_capacity(xs.len());
        for x in xs {
            if self.value(*x).numel() != 1 {
                return Err(Error::Rank { expected: "scalar", shape: self.shape(*x).to_vec() });
            }
            data.push(self.scalar(*x));
        }
        let ng = self.needs(xs);
        Ok(self.push(Tensor::new(vec![xs.len()], data)?, Op::Stack(xs.to_vec()), ng))
    }

    /// Uniform average of scalar nodes.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var> {
        let s = self.stack(xs)?;
        self.mean(s)
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        if eps <= F::zero() {
            return Err(Error::Config("layer_norm eps must be positive".into()));
        }
        let d = self.value(x).last_dim();
        if self.value(x).rank() == 0 || self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(dim_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let xs = self.value(x).data();
        let rows = xs.len() / d.max(1);
        let mut xhat = vec![F::zero(); xs.len()];
        let mut rstd = Vec::with_capacity(rows);
        let mut out = vec![F::zero(); xs.len()];
        let inv_d = 1.0 / d as f64;
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mu = row.iter().fold(0.0f64, |a, v| a + v.to_f64().unwrap()) * inv_d;
            let var = row.iter().fold(0.0f64, |a, v| {
                let c = v.to_f64().unwrap() - mu;
                a + c * c
            }) * inv_d;
            let rs = 1.0 / (var + eps.to_f64().unwrap()).sqrt();
            rstd.push(F::lit(rs));
            for j in 0..d {
                let h = F::lit((row[j].to_f64().unwrap() - mu) * rs);
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let ng = self.needs(&[x, gain, bias]);
        Ok(self.push(t, Op::LayerNorm { x, gain, bias, xhat, rstd }, ng))
    }

    /// Row-wise softmax over the last axis restricted to `mask` (true = allowed).
    /// The mask covers the trailing two axes and is shared across leading ones.
    pub fn masked_softmax(&mut self, scores: Var, mask: &[bool]) -> Result<Var> {
        let shape = self.shape(scores).to_vec();
        if shape.len() < 2 {
            return Err(Error::Rank { expected: "at least 2 axes", shape });
        }
        let (t, s) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if mask.len() != t * s {
            return Err(dim_err("masked_softmax", &shape, &[mask.len()]));
        }
        for (i, row) in mask.chunks(s.max(1)).enumerate() {
            if !row.iter().any(|m| *m) {
                return Err(Error::InvalidMask { row: i });
            }
        }
        let xs = self.value(scores).data();
        let mut out = vec![F::zero(); xs.len()];
        for (r, (row, orow)) in xs.chunks(s).zip(out.chunks_mut(s)).enumerate() {
            let mrow = &mask[(r % t) * s..(r % t + 1) * s];
            let mx = row.iter().zip(mrow).filter(|(_, m)| **m).map(|(v, _)| *v).fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for j in 0..s {
                if mrow[j] {
                    let e = (row[j] - mx).exp();
                    orow[j] = e;
                    z = z + e;
                }
            }
            for v in orow.iter_mut() {
                *v = *v / z;
            }
        }
        let ng = self.needs(&[scores]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MaskedSoftmax(scores), ng))
    }

    pub fn softmax(&mut self, scores: Var) -> Result<Var> {
        let shape = self.shape(scores).to_vec();
        let s = *shape.last().unwrap_or(&1);
        if shape.len() < 2 {
            return Err(Error::Rank { expected: "at least 2 axes", shape });
        }
        let t = shape[shape.len() - 2];
        self.masked_softmax(scores, &vec![true; t * s])
    }

    /// Row-wise log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if d == 0 {
            return Err(Error::Rank { expected: "non-empty last axis", shape: self.shape(x).to_vec() });
        }
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(d) {
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = mx + row.iter().map(|v| (*v - mx).exp()).fold(F::zero(), |a, b| a + b).ln();
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, Op::LogSoftmax(x), ng))
    }

    /// Valid (unpadded) 1-D convolution over time.
    ///
    /// `x: T×C_in`, `kernel: K×C_in×C_out`, `bias: C_out`; output length is
    /// `floor((T − K) / stride) + 1`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::Config("conv1d stride must be at least 1".into()));
        }
        let (t, cin) = matrix_dims(self.shape(x), "conv1d input")?;
        let (k, kin, cout) = match self.shape(kernel) {
            [k, i, o] => (*k, *i, *o),
            other => return Err(Error::Rank { expected: "conv1d kernel K×C_in×C_out", shape: other.to_vec() }),
        };
        if kin != cin || self.shape(bias) != [cout] {
            return Err(dim_err("conv1d", self.shape(x), self.shape(kernel)));
        }
        if t < k {
            return Err(Error::SequenceTooShort { len: t, min: k });
        }
        let tout = (t - k) / stride + 1;
        let mut out = vec![F::zero(); tout * cout];
        for row in out.chunks_mut(cout) {
            row.copy_from_slice(self.value(bias).data());
        }
        // Output row i reads the contiguous input window starting at i·stride,
        // so the im2col matrix is a strided view of the input.
        F::gemm(
            tout,
            k * cin,
            cout,
            self.value(x).data(),
            (stride * cin) as isize,
            1,
            self.value(kernel).data(),
            cout as isize,
            1,
            F::one(),
            &mut out,
        );
        let ng = self.needs(&[x, kernel, bias]);
        Ok(self.push(Tensor::new(vec![tout, cout], out)?, Op::Conv1d { x, kernel, bias, stride }, ng))
    }

    /// Column slice `[start, start+len)` of a matrix.
    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = matrix_dims(self.shape(x), "cols")?;
        if start + len > n {
            return Err(dim_err("cols", self.shape(x), &[start, len]));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![m, len], out)?, Op::Cols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or(Error::Rank { expected: "at least one input", shape: vec![] })?;
        let (m, _) = matrix_dims(self.shape(first), "concat_cols")?;
        let mut widths = Vec::with_capacity(xs.len());
        for x in xs {
            let (mi, ni) = matrix_dims(self.shape(*x), "concat_cols")?;
            if mi != m {
                return Err(dim_err("concat_cols", self.shape(first), self.shape(*x)));
            }
            widths.push(ni);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (x, w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*x).data()[r * w..(r + 1) * w]);
            }
        }
        let ng = self.needs(xs);
        Ok(self.push(Tensor::new(vec![m, total], out)?, Op::ConcatCols(xs.to_vec()), ng))
    }

    /// Gathers rows (indices may repeat).
    pub fn rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = matrix_dims(self.shape(x), "rows")?;
        if let Some(bad) = idx.iter().find(|i| **i >= m) {
            return Err(dim_err("rows", self.shape(x), &[*bad]));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for i in idx {
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![idx.len(), n], out)?, Op::Rows(x, idx.to_vec()), ng))
    }

    /// Replaces the rows flagged in `rows` by the vector `fill`.
    pub fn replace_rows(&mut self, x: Var, fill: Var, rows: &[bool]) -> Result<Var> {
        let (m, n) = matrix_dims(self.shape(x), "replace_rows")?;
        if rows.len() != m || self.shape(fill) != [n] {
            return Err(dim_err("replace_rows", self.shape(x), self.shape(fill)));
        }
        let mut out = self.value(x).data().to_vec();
        let f = self.value(fill).data().to_vec();
        for (r, on) in rows.iter().enumerate() {
            if *on {
                out[r * n..(r + 1) * n].copy_from_slice(&f);
            }
        }
        let ng = self.needs(&[x, fill]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::ReplaceRows { x, fill, rows: rows.to_vec() }, ng))
    }

    /// `out[i] = x[i, idx[i]]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = matrix_dims(self.shape(x), "pick")?;
        if idx.len() != m || idx.iter().any(|i| *i >= n) {
            return Err(dim_err("pick", self.shape(x), &[idx.len()]));
        }
        let src = self.value(x).data();
        let out = idx.iter().enumerate().map(|(r, c)| src[r * n + c]).collect();
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![m], out)?, Op::Pick(x, idx.to_vec()), ng))
    }

    /// Per-row column gather: `out[i, j] = x[i, idx[i·w + j]]` for an
    /// `m×w` output; indices may repeat.
    pub fn gather(&mut self, x: Var, idx: &[usize], w: usize) -> Result<Var> {
        let (m, n) = matrix_dims(self.shape(x), "gather")?;
        if idx.len() != m * w || idx.iter().any(|i| *i >= n) {
            return Err(dim_err("gather", self.shape(x), &[m, w]));
        }
        let src = self.value(x).data();
        let out = idx.iter().enumerate().map(|(k, c)| src[(k / w.max(1)) * n + c]).collect();
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![m, w], out)?, Op::Gather(x, idx.to_vec()), ng))
    }

    /// Scales each row to unit L2 norm (`x / sqrt(|x|² + eps)`).
    pub fn normalize_rows(&mut self, x: Var, eps: F) -> Result<Var> {
        let (_, n) = matrix_dims(self.shape(x), "normalize_rows")?;
        let mut out = self.value(x).data().to_vec();
        let mut norms = Vec::new();
        for row in out.chunks_mut(n.max(1)) {
            let sq = row.iter().fold(F::zero(), |a, v| a + *v * *v);
            let nrm = (sq + eps).sqrt();
            norms.push(nrm);
            for v in row.iter_mut() {
                *v = *v / nrm;
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, Op::NormalizeRows { x, norms }, ng))
    }

    /// Registers a scalar loss whose gradient w.r.t. `x` is already known.
    pub fn fused_loss(&mut self, x: Var, value: F, grad: Vec<F>) -> Result<Var> {
        if grad.len() != self.value(x).numel() {
            return Err(dim_err("fused_loss", self.shape(x), &[grad.len()]));
        }
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(value), Op::Fused { x, grad }, ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::Rank { expected: "scalar loss", shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Graph::backward`] and adds parameter gradients into `store`.
    /// Entries with `trainable == false` are never touched.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<F>) -> Result<Gradients<F>> {
        let grads = self.backward(loss)?;
        for (name, v) in &self.params {
            let Some(g) = grads.get(*v) else { continue };
            if let Some(entry) = store.get_mut(name) {
                if !entry.trainable {
                    continue;
                }
                if let Some(acc) = entry.tensor.grad_mut() {
                    add_into(acc, g);
                }
            }
        }
        Ok(grads)
    }

    fn acc(&self, grads: &mut [Option<Vec<F>>], v: Var, f: impl FnOnce(&mut [F])) {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        let g = grads[v.0].get_or_insert_with(|| vec![F::zero(); node.value.numel()]);
        f(g);
    }

    fn propagate(&self, node: &Node<F>, gy: &[F], grads: &mut [Option<Vec<F>>]) {
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                // dA = dY · Bᵀ
                self.acc(grads, *a, |ga| F::gemm(m, n, k, gy, n as isize, 1, bv, 1, n as isize, F::one(), ga));
                // dB = Aᵀ · dY
                self.acc(grads, *b, |gb| F::gemm(k, m, n, av, 1, k as isize, gy, n as isize, 1, F::one(), gb));
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                // dA = dY · B
                self.acc(grads, *a, |ga| F::gemm(m, n, k, gy, n as isize, 1, bv, k as isize, 1, F::one(), ga));
                // dB = dYᵀ · A
                self.acc(grads, *b, |gb| F::gemm(n, m, k, gy, 1, n as isize, av, k as isize, 1, F::one(), gb));
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |g| add_into(g, gy));
                self.acc(grads, *b, |g| add_into(g, gy));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |g| add_into(g, gy));
                self.acc(grads, *b, |g| {
                    for (d, s) in g.iter_mut().zip(gy) {
                        *d = *d - *s;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.acc(grads, *a, |g| {
                    for ((d, s), o) in g.iter_mut().zip(gy).zip(bv) {
                        *d = *d + *s * *o;
                    }
                });
                self.acc(grads, *b, |g| {
                    for ((d, s), o) in g.iter_mut().zip(gy).zip(av) {
                        *d = *d + *s * *o;
                    }
                });
            }
            Op::AddRow(x, b) => {
                self.acc(grads, *x, |g| add_into(g, gy));
                let d = self.value(*b).numel();
                self.acc(grads, *b, |g| {
                    for row in gy.chunks(d) {
                        add_into(g, row);
                    }
                });
            }
            Op::Scale(x, s) => self.acc(grads, *x, |g| {
                for (d, v) in g.iter_mut().zip(gy) {
                    *d = *d + *v * *s;
                }
            }),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |g| {
                    for ((d, v), xi) in g.iter_mut().zip(gy).zip(xv) {
                        if *xi > F::zero() {
                            *d = *d + *v;
                        }
                    }
                })
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |g| {
                    for ((d, v), xi) in g.iter_mut().zip(gy).zip(xv) {
                        if *xi > F::zero() {
                            *d = *d + *v;
                        } else if *xi < F::zero() {
                            *d = *d - *v;
                        }
                    }
                })
            }
            Op::Sum(x) => self.acc(grads, *x, |g| {
                for d in g.iter_mut() {
                    *d = *d + gy[0];
                }
            }),
            Op::Mean(x) => {
                let n = F::lit(self.value(*x).numel() as f64);
                self.acc(grads, *x, |g| {
                    for d in g.iter_mut() {
                        *d = *d + gy[0] / n;
                    }
                })
            }
            Op::Stack(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    self.acc(grads, *x, |g| g[0] = g[0] + gy[i]);
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = self.value(*gain).numel();
                let gv = self.value(*gain).data();
                self.acc(grads, *gain, |g| {
                    for (row_g, row_h) in gy.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            g[j] = g[j] + row_g[j] * row_h[j];
                        }
                    }
                });
                self.acc(grads, *bias, |g| {
                    for row in gy.chunks(d) {
                        add_into(g, row);
                    }
                });
                let inv_d = F::lit(1.0 / d as f64);
                self.acc(grads, *x, |g| {
                    for (r, (row_g, row_h)) in gy.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut m1 = F::zero();
                        let mut m2 = F::zero();
                        for j in 0..d {
                            let dh = row_g[j] * gv[j];
                            m1 = m1 + dh;
                            m2 = m2 + dh * row_h[j];
                        }
                        m1 = m1 * inv_d;
                        m2 = m2 * inv_d;
                        for j in 0..d {
                            let dh = row_g[j] * gv[j];
                            g[r * d + j] = g[r * d + j] + rstd[r] * (dh - m1 - row_h[j] * m2);
                        }
                    }
                });
            }
            Op::MaskedSoftmax(x) => {
                let y = node.value.data();
                let s = node.value.last_dim();
                self.acc(grads, *x, |g| {
                    for ((gr, yr), dr) in g.chunks_mut(s).zip(y.chunks(s)).zip(gy.chunks(s)) {
                        let dot = yr.iter().zip(dr).fold(F::zero(), |a, (p, q)| a + *p * *q);
                        for j in 0..s {
                            gr[j] = gr[j] + yr[j] * (dr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let y = node.value.data();
                let s = node.value.last_dim();
                self.acc(grads, *x, |g| {
                    for ((gr, yr), dr) in g.chunks_mut(s).zip(y.chunks(s)).zip(gy.chunks(s)) {
                        let tot = dr.iter().fold(F::zero(), |a, v| a + *v);
                        for j in 0..s {
                            gr[j] = gr[j] + dr[j] - yr[j].exp() * tot;
                        }
                    }
                });
            }
            Op::Conv1d { x, kernel, bias, stride } => {
                let (t, cin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let (k, cout) = (self.shape(*kernel)[0], self.shape(*kernel)[2]);
                let tout = node.value.shape()[0];
                let xv = self.value(*x).data();
                let kv = self.value(*kernel).data();
                let win = k * cin;
                let rs = (*stride * cin) as isize;
                self.acc(grads, *bias, |g| {
                    for row in gy.chunks(cout) {
                        add_into(g, row);
                    }
                });
                // dW = X_colᵀ · dY
                self.acc(grads, *kernel, |g| F::gemm(win, tout, cout, xv, 1, rs, gy, cout as isize, 1, F::one(), g));
                // dX_col = dY · Wᵀ, then overlap-add into dX
                self.acc(grads, *x, |g| {
                    let mut col = vec![F::zero(); tout * win];
                    F::gemm(tout, cout, win, gy, cout as isize, 1, kv, 1, cout as isize, F::zero(), &mut col);
                    for (i, row) in col.chunks(win).enumerate() {
                        let off = i * stride * cin;
                        add_into(&mut g[off..off + win], row);
                    }
                    debug_assert!(g.len() == t * cin);
                });
            }
            Op::Cols { x, start } => {
                let n = self.shape(*x)[1];
                let len = node.value.last_dim();
                self.acc(grads, *x, |g| {
                    for (r, row) in gy.chunks(len).enumerate() {
                        add_into(&mut g[r * n + start..r * n + start + len], row);
                    }
                });
            }
            Op::ConcatCols(xs) => {
                let total = node.value.last_dim();
                let mut off = 0;
                for x in xs {
                    let w = self.value(*x).last_dim();
                    self.acc(grads, *x, |g| {
                        for (r, row) in g.chunks_mut(w).enumerate() {
                            add_into(row, &gy[r * total + off..r * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::Rows(x, idx) => {
                let n = self.value(*x).last_dim();
                self.acc(grads, *x, |g| {
                    for (r, i) in idx.iter().enumerate() {
                        add_into(&mut g[i * n..(i + 1) * n], &gy[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::ReplaceRows { x, fill, rows } => {
                let n = self.value(*x).last_dim();
                self.acc(grads, *x, |g| {
                    for (r, on) in rows.iter().enumerate() {
                        if !*on {
                            add_into(&mut g[r * n..(r + 1) * n], &gy[r * n..(r + 1) * n]);
                        }
                    }
                });
                self.acc(grads, *fill, |g| {
                    for (r, on) in rows.iter().enumerate() {
                        if *on {
                            add_into(g, &gy[r * n..(r + 1) * n]);
                        }
                    }
                });
            }
            Op::Pick(x, idx) => {
                let n = self.value(*x).last_dim();
                self.acc(grads, *x, |g| {
                    for (r, c) in idx.iter().enumerate() {
                        g[r * n + c] = g[r * n + c] + gy[r];
                    }
                });
            }
            Op::Gather(x, idx) => {
                let n = self.value(*x).last_dim();
                let w = node.value.last_dim().max(1);
                self.acc(grads, *x, |g| {
                    for (k, c) in idx.iter().enumerate() {
                        g[(k / w) * n + c] = g[(k / w) * n + c] + gy[k];
                    }
                });
            }
            Op::NormalizeRows { x, norms } => {
                let n = self.value(*x).last_dim();
                let y = node.value.data();
                self.acc(grads, *x, |g| {
                    for (r, nrm) in norms.iter().enumerate() {
                        let yr = &y[r * n..(r + 1) * n];
                        let dr = &gy[r * n..(r + 1) * n];
                        let dot = yr.iter().zip(dr).fold(F::zero(), |a, (p, q)| a + *p * *q);
                        for j in 0..n {
                            g[r * n + j] = g[r * n + j] + (dr[j] - yr[j] * dot) / *nrm;
                        }
                    }
                });
            }
            Op::Fused { x, grad } => self.acc(grads, *x, |g| {
                for (d, v) in g.iter_mut().zip(grad) {
                    *d = *d + *v * gy[0];
                }
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ParamGroup;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.input(t(&[2, 1], &[5.0, 6.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[17.0, 39.0]);

        let eye = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let ai = g.matmul(a, eye).unwrap();
        assert_eq!(g.value(ai).data(), g.value(a).data());

        let z = g.input(Tensor::zeros(&[3, 2]));
        let zc = g.matmul(z, a).unwrap();
        assert!(g.value(zc).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn layer_norm_examples() {
        let mut g = Graph::<f64>::new();
        let ones = g.input(t(&[2], &[1.0, 1.0]));
        let zeros = g.input(t(&[2], &[0.0, 0.0]));
        let x = g.input(t(&[1, 2], &[1.0, -1.0]));
        let y = g.layer_norm(x, ones, zeros, 1e-12).unwrap();
        for (a, b) in g.value(y).data().iter().zip([1.0, -1.0]) {
            assert!((a - b).abs() < 1e-9);
        }
        let c = g.input(t(&[1, 3], &[4.0, 4.0, 4.0]));
        let g3 = g.input(Tensor::full(&[3], 1.0));
        let b3 = g.input(Tensor::zeros(&[3]));
        let y = g.layer_norm(c, g3, b3, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));

        let gain0 = g.input(Tensor::zeros(&[3]));
        let bias = g.input(t(&[3], &[0.5, -1.0, 2.0]));
        let xr = g.input(t(&[2, 3], &[1.0, 5.0, -2.0, 0.3, 0.1, 9.0]));
        let y = g.layer_norm(xr, gain0, bias, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);

        let bad = g.input(Tensor::zeros(&[4]));
        assert!(g.layer_norm(xr, bad, bias, 1e-5).is_err());
    }

    #[test]
    fn masked_softmax_examples() {
        let mut g = Graph::<f64>::new();
        let s = g.input(Tensor::full(&[4, 4], 0.7));
        let p = g.masked_softmax(s, &[true; 16]).unwrap();
        assert!(g.value(p).data().iter().all(|v| (*v - 0.25).abs() < 1e-15));

        let causal: Vec<bool> = (0..16).map(|i| i % 4 <= i / 4).collect();
        let p = g.masked_softmax(s, &causal).unwrap();
        assert_eq!(&g.value(p).data()[..4], &[1.0, 0.0, 0.0, 0.0]);

        let s2 = g.input(t(&[1, 2], &[0.0, 3f64.ln()]));
        let p = g.masked_softmax(s2, &[true, true]).unwrap();
        assert!((g.value(p).data()[0] - 0.25).abs() < 1e-12);
        assert!((g.value(p).data()[1] - 0.75).abs() < 1e-12);

        let mut bad = causal.clone();
        bad[8..12].iter_mut().for_each(|m| *m = false);
        assert!(matches!(g.masked_softmax(s, &bad), Err(Error::InvalidMask { row: 2 })));
    }

    #[test]
    fn conv1d_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let eye = g.input(t(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b0 = g.input(Tensor::zeros(&[2]));
        let y = g.conv1d(x, eye, b0, 1).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());

        let long = g.input(Tensor::full(&[8, 2], 1.0));
        let k0 = g.input(Tensor::zeros(&[3, 2, 4]));
        let b = g.input(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.conv1d(long, k0, b, 2).unwrap();
        assert_eq!(g.shape(y), &[3, 4]);
        assert_eq!(&g.value(y).data()[4..8], &[1.0, 2.0, 3.0, 4.0]);

        let short = g.input(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.conv1d(short, k0, b, 2), Err(Error::SequenceTooShort { len: 2, min: 3 })));
    }

    #[test]
    fn backward_examples() {
        let mut store = ParamStore::<f64>::new();
        store.insert("p", t(&[3], &[1.0, -2.0, 0.5]), ParamGroup::Backbone).unwrap();
        store.insert("q", t(&[1], &[3.0]), ParamGroup::Adapter).unwrap();

        let mut g = Graph::new();
        let p = g.param(&store, "p").unwrap();
        let l = g.sum(p).unwrap();
        g.backward_into(l, &mut store).unwrap();
        assert_eq!(store.get("p").unwrap().tensor.grad().unwrap(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let q = g.param(&store, "q").unwrap();
        let qq = g.mul(q, q).unwrap();
        let l = g.sum(qq).unwrap();
        g.backward_into(l, &mut store).unwrap();
        assert_eq!(store.get("q").unwrap().tensor.grad().unwrap(), &[6.0]);

        // accumulation until cleared
        g.backward_into(l, &mut store).unwrap();
        assert_eq!(store.get("q").unwrap().tensor.grad().unwrap(), &[12.0]);
        store.zero_grads();
        assert_eq!(store.get("q").unwrap().tensor.grad().unwrap(), &[0.0]);

        let non_scalar = g.input(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(non_scalar), Err(Error::Rank { .. })));
    }

    #[test]
    fn frozen_parameter_receives_no_gradient() {
        let mut store = ParamStore::<f32>::new();
        store.insert("p", Tensor::full(&[2], 1.0), ParamGroup::Backbone).unwrap();
        store.get_mut("p").unwrap().trainable = false;
        let mut g = Graph::new();
        let p = g.param(&store, "p").unwrap();
        let l = g.sum(p).unwrap();
        let grads = g.backward_into(l, &mut store).unwrap();
        assert!(grads.get(p).is_none());
        assert!(store.get("p").unwrap().tensor.grad().unwrap().iter().all(|v| *v == 0.0));
    }
}
