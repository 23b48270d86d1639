//! Reverse-mode differentiation over a recorded tape.
//!
//! Every op appends a node holding its forward value and whatever it needs
//! for the pullback. `backward` walks the tape once in reverse. Nodes only
//! carry gradient if some ancestor leaf was created with `requires_grad`.
//! Any op that produces a non-finite value fails immediately with the op
//! name and input shapes.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::fft::RfftPlan;
use crate::tensor::{fmt_shapes, gemm_acc, gemm_nt_acc, gemm_tn_acc, numel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    SumAxis { x: Var, axis: usize, mean: bool },
    SumAll { x: Var, mean: bool },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Option<Var>, beta: Option<Var>, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Abs(Var),
    L2Norm(Var),
    Cosine(Var, Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    GatherRows { x: Var, idx: Vec<Vec<usize>> },
    ScatterRows { x: Var, idx: Vec<Vec<usize>> },
    Conv1d { x: Var, w: Var },
    RfftMag { x: Var, plan: Box<RfftPlan> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out`, the flat index of the broadcast source.
fn broadcast_map(out: &[usize], src: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let off = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for d in (0..src.len()).rev() {
        strides[d + off] = if src[d] == 1 { 0 } else { s };
        s *= src[d];
    }
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for d in (0..rank).rev() {
            idx[d] += 1;
            cur += strides[d];
            if idx[d] < out[d] {
                break;
            }
            cur -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    map
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut cur = 0usize;
    for _ in 0..n {
        out.push(data[cur]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            cur += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            cur -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    cdf + x * pdf
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A constant copy of `v`'s current value, cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            let shapes: Vec<&[usize]> = inputs.iter().map(|v| self.shape(*v)).collect();
            return Err(Error::NonFinite { op: name, shapes: fmt_shapes(&shapes) });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let value = if sa == sb {
            let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
            Tensor::new(sa.to_vec(), data)?
        } else {
            let out = broadcast_shape(sa, sb).ok_or_else(|| shape_err!(name, "cannot broadcast {sa:?} with {sb:?}"))?;
            let (ma, mb) = (broadcast_map(&out, sa), broadcast_map(&out, sb));
            let (da, db) = (self.value(a).data(), self.value(b).data());
            let data = ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect();
            Tensor::new(out, data)?
        };
        self.push(name, value, op, &[a, b])
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v * c);
        self.push("scale", value, Op::Scale(x, c), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v + c);
        self.push("add_scalar", value, Op::AddScalar(x), &[x])
    }

    /// Matrix product over the last two axes. Leading axes must match, or
    /// one side must be a plain matrix shared across the other's batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err!("matmul", "operands must be at least 2-D: {sa:?} x {sb:?}"));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(shape_err!("matmul", "inner extents differ: {sa:?} x {sb:?}"));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let (out_shape, data) = if sb.len() == 2 {
            let rows = numel(&sa) / k;
            let mut out = vec![0.0; rows * n];
            gemm_acc(da, db, &mut out, rows, k, n);
            let mut shape = sa[..sa.len() - 1].to_vec();
            shape.push(n);
            (shape, out)
        } else if sa.len() == 2 || sa[..sa.len() - 2] == sb[..sb.len() - 2] {
            let batch = numel(&sb[..sb.len() - 2]);
            let mut out = vec![0.0; batch * m * n];
            for bi in 0..batch {
                let ao = if sa.len() == 2 { 0 } else { bi * m * k };
                gemm_acc(&da[ao..ao + m * k], &db[bi * k * n..(bi + 1) * k * n], &mut out[bi * m * n..(bi + 1) * m * n], m, k, n);
            }
            let mut shape = sb[..sb.len() - 2].to_vec();
            shape.extend([m, n]);
            (shape, out)
        } else {
            return Err(shape_err!("matmul", "batch extents differ: {sa:?} x {sb:?}"));
        };
        let value = Tensor::new(out_shape, data)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || core::mem::replace(&mut seen[p], true)) {
            return Err(shape_err!("permute", "invalid permutation {perm:?} for {shape:?}"));
        }
        let (data, out_shape) = permute_data(self.value(x).data(), shape, perm);
        let value = Tensor::new(out_shape, data)?;
        self.push("permute", value, Op::Permute(x, perm.to_vec()), &[x])
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(shape_err!("transpose", "rank {r}"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, keepdim: bool, mean: bool) -> Result<Var> {
        let name = if mean { "mean" } else { "sum" };
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err!(name, "axis {axis} out of range for {shape:?}"));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &src[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if mean && len > 0 {
            out.iter_mut().for_each(|v| *v /= len as f64);
        }
        let mut out_shape = shape.clone();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        let value = Tensor::new(out_shape, out)?;
        self.push(name, value, Op::SumAxis { x, axis, mean }, &[x])
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.reduce_axis(x, axis, keepdim, false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.reduce_axis(x, axis, keepdim, true)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::SumAll { x, mean: false }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(shape_err!("mean", "empty tensor"));
        }
        let s: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::SumAll { x, mean: true }, &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err!("softmax", "axis {axis} out of range for {shape:?}"));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| src[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for l in 0..len {
                    let e = libm::exp(src[at(l)] - max);
                    out[at(l)] = e;
                    z += e;
                }
                for l in 0..len {
                    out[at(l)] /= z;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push("softmax", value, Op::Softmax { x, axis }, &[x])
    }

    /// Normalizes over the last axis, then applies the optional affine.
    pub fn layer_norm(&mut self, x: Var, gamma: Option<Var>, beta: Option<Var>, eps: f64) -> Result<Var> {
        if eps <= 0.0 || !eps.is_finite() {
            return Err(Error::Param(alloc::format!("layer_norm eps must be > 0, got {eps}")));
        }
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| shape_err!("layer_norm", "scalar input"))?;
        for p in [gamma, beta].into_iter().flatten() {
            if self.shape(p) != [d] {
                return Err(shape_err!("layer_norm", "affine shape {:?} vs last extent {d}", self.shape(p)));
            }
        }
        let src = self.value(x).data();
        let rows = src.len() / d.max(1);
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / libm::sqrt(var + eps);
            inv_std[r] = is;
            for (o, v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mu) * is;
            }
        }
        let mut out = xhat.clone();
        if let Some(g) = gamma {
            let gv = self.value(g).data();
            out.chunks_mut(d).for_each(|row| row.iter_mut().zip(gv).for_each(|(o, g)| *o *= g));
        }
        if let Some(b) = beta {
            let bv = self.value(b).data();
            out.chunks_mut(d).for_each(|row| row.iter_mut().zip(bv).for_each(|(o, b)| *o += b));
        }
        let value = Tensor::new(shape, out)?;
        let inputs: Vec<Var> = [Some(x), gamma, beta].into_iter().flatten().collect();
        self.push("layer_norm", value, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, &inputs)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(gelu);
        self.push("gelu", value, Op::Gelu(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(libm::fabs);
        self.push("abs", value, Op::Abs(x), &[x])
    }

    /// Sum of absolute values over the last axis.
    pub fn l1_norm(&mut self, x: Var) -> Result<Var> {
        let a = self.abs(x)?;
        let last = self.shape(a).len().checked_sub(1).ok_or_else(|| shape_err!("l1_norm", "scalar input"))?;
        self.sum_axis(a, last, false)
    }

    /// Euclidean norm over the last axis. The subgradient at zero is zero.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| shape_err!("l2_norm", "scalar input"))?;
        let out: Vec<f64> = self.value(x).data().chunks(d).map(|r| libm::sqrt(r.iter().map(|v| v * v).sum())).collect();
        let value = Tensor::new(shape[..shape.len() - 1].to_vec(), out)?;
        self.push("l2_norm", value, Op::L2Norm(x), &[x])
    }

    /// Cosine similarity over the last axis; zero-norm rows give 0.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape != self.shape(b) || shape.is_empty() {
            return Err(shape_err!("cosine", "{shape:?} vs {:?}", self.shape(b)));
        }
        let d = shape[shape.len() - 1];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = da
            .chunks(d)
            .zip(db.chunks(d))
            .map(|(x, y)| {
                let (nx, ny) = (norm(x), norm(y));
                if nx == 0.0 || ny == 0.0 {
                    0.0
                } else {
                    dot(x, y) / (nx * ny)
                }
            })
            .collect();
        let value = Tensor::new(shape[..shape.len() - 1].to_vec(), out)?;
        self.push("cosine", value, Op::Cosine(a, b), &[a, b])
    }

    /// Per-row cross-entropy of `logits[B×K]` against class indices `0..K`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(shape_err!("cross_entropy", "logits {shape:?} with {} labels", labels.len()));
        }
        let k = shape[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Param(alloc::format!("cross_entropy: label {bad} outside 0..{k}")));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; src.len()];
        let mut out = Vec::with_capacity(labels.len());
        for (r, &y) in labels.iter().enumerate() {
            let row = &src[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| libm::exp(v - max)).sum();
            let lse = max + libm::log(z);
            for (p, v) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
                *p = libm::exp(v - lse);
            }
            out.push(lse - row[y]);
        }
        let value = Tensor::new([labels.len()], out)?;
        self.push("cross_entropy", value, Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, &[logits])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| shape_err!("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(shape_err!("concat", "axis {axis} out of range for {first:?}"));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let ok = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(shape_err!("concat", "{s:?} incompatible with {first:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis];
                out.extend_from_slice(&self.value(x).data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        self.push("concat", value, Op::Concat { xs: xs.to_vec(), axis }, xs)
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err!("slice", "[{start}, {}) on axis {axis} of {shape:?}", start + len));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, out)?;
        self.push("slice", value, Op::Slice { x, axis, start }, &[x])
    }

    fn check_rows(&self, name: &'static str, x: Var, idx: &[Vec<usize>], bound: usize) -> Result<(usize, usize)> {
        let shape = self.shape(x);
        if shape.len() != 3 || shape[0] != idx.len() {
            return Err(shape_err!(name, "expected [B, N, D] with B = {}, got {shape:?}", idx.len()));
        }
        let m = idx.first().map_or(0, Vec::len);
        for row in idx {
            if row.len() != m {
                return Err(shape_err!(name, "ragged index lists"));
            }
            if let Some(&bad) = row.iter().find(|&&i| i >= bound) {
                return Err(shape_err!(name, "index {bad} out of range {bound}"));
            }
        }
        Ok((m, shape[2]))
    }

    /// Picks rows `idx[b]` from each sample of `x[B×N×D]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[Vec<usize>]) -> Result<Var> {
        let n = self.shape(x).get(1).copied().unwrap_or(0);
        let (m, d) = self.check_rows("gather_rows", x, idx, n)?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * m * d);
        for (b, row) in idx.iter().enumerate() {
            for &i in row {
                out.extend_from_slice(&src[(b * n + i) * d..(b * n + i + 1) * d]);
            }
        }
        let value = Tensor::new([idx.len(), m, d], out)?;
        self.push("gather_rows", value, Op::GatherRows { x, idx: idx.to_vec() }, &[x])
    }

    /// Places the rows of `x[B×M×D]` at `idx[b]` of a zero `[B×n×D]` tensor.
    pub fn scatter_rows(&mut self, x: Var, idx: &[Vec<usize>], n: usize) -> Result<Var> {
        let (m, d) = self.check_rows("scatter_rows", x, idx, n)?;
        if self.shape(x)[1] != m {
            return Err(shape_err!("scatter_rows", "{} rows for {m} indices", self.shape(x)[1]));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; idx.len() * n * d];
        for (b, row) in idx.iter().enumerate() {
            for (j, &i) in row.iter().enumerate() {
                out[(b * n + i) * d..(b * n + i + 1) * d].copy_from_slice(&src[(b * m + j) * d..(b * m + j + 1) * d]);
            }
        }
        let value = Tensor::new([idx.len(), n, d], out)?;
        self.push("scatter_rows", value, Op::ScatterRows { x, idx: idx.to_vec() }, &[x])
    }

    /// Zero-padded "same" 1-D convolution along the last axis with one
    /// tap set per output position: `y[c] = Σ_j w[j, c] · x[c + j − K/2]`.
    pub fn conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| shape_err!("conv1d", "scalar input"))?;
        let ws = self.shape(w);
        if ws.len() != 2 || ws[1] != c {
            return Err(shape_err!("conv1d", "kernel {ws:?} for {c} channels"));
        }
        let k = ws[0];
        if k.is_multiple_of(2) {
            return Err(Error::Param(alloc::format!("conv1d kernel size must be odd, got {k}")));
        }
        let half = k / 2;
        let (src, wd) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![0.0; src.len()];
        for (orow, xrow) in out.chunks_mut(c).zip(src.chunks(c)) {
            for (ci, o) in orow.iter_mut().enumerate() {
                let mut s = 0.0;
                for j in 0..k {
                    let pos = ci + j;
                    if pos >= half && pos - half < c {
                        s += wd[j * c + ci] * xrow[pos - half];
                    }
                }
                *o = s;
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push("conv1d", value, Op::Conv1d { x, w }, &[x, w])
    }

    /// Magnitudes of the rFFT along the last axis.
    pub fn rfft_magnitude(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| shape_err!("rfft_magnitude", "scalar input"))?;
        if c == 0 {
            return Err(shape_err!("rfft_magnitude", "empty last axis"));
        }
        let plan = RfftPlan::new(c);
        let bins = plan.bins();
        let src = self.value(x).data();
        let rows = src.len() / c;
        let mut out = vec![0.0; rows * bins];
        let (mut re, mut im) = (vec![0.0; bins], vec![0.0; bins]);
        for r in 0..rows {
            plan.process(&src[r * c..(r + 1) * c], &mut re, &mut im);
            for k in 0..bins {
                out[r * bins + k] = libm::hypot(re[k], im[k]);
            }
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = bins;
        let value = Tensor::new(out_shape, out)?;
        self.push("rfft_magnitude", value, Op::RfftMag { x, plan: Box::new(plan) }, &[x])
    }

    /// Populates `∂loss/∂v` for every node that depends on a grad-requiring leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(alloc::format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.pullback(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let mut out: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let g = if !node.requires_grad {
                None
            } else {
                let data = grads.get_mut(i).and_then(Option::take).unwrap_or_else(|| vec![0.0; node.value.len()]);
                Some(Tensor::new(node.value.shape().to_vec(), data)?)
            };
            out.push(g);
        }
        Ok(Gradients { grads: out })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn reduce_into(&self, grads: &mut [Option<Vec<f64>>], target: Var, out_shape: &[usize], contrib: impl Iterator<Item = f64>) {
        let ts = self.shape(target);
        let len = numel(ts);
        let buf = acc(grads, target, len);
        if ts == out_shape {
            buf.iter_mut().zip(contrib).for_each(|(b, c)| *b += c);
        } else {
            let map = broadcast_map(out_shape, ts);
            for (&j, c) in map.iter().zip(contrib) {
                buf[j] += c;
            }
        }
    }

    fn bcast_values(&self, v: Var, out_shape: &[usize]) -> Vec<f64> {
        let s = self.shape(v);
        if s == out_shape {
            self.value(v).data().to_vec()
        } else {
            let d = self.value(v).data();
            broadcast_map(out_shape, s).into_iter().map(|j| d[j]).collect()
        }
    }

    fn pullback(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &v in [a, b] {
                    if self.wants(v) {
                        self.reduce_into(grads, v, out_shape, g.iter().copied());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    self.reduce_into(grads, *a, out_shape, g.iter().copied());
                }
                if self.wants(*b) {
                    self.reduce_into(grads, *b, out_shape, g.iter().map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bv = self.bcast_values(*b, out_shape);
                    self.reduce_into(grads, *a, out_shape, g.iter().zip(bv).map(|(x, y)| x * y));
                }
                if self.wants(*b) {
                    let av = self.bcast_values(*a, out_shape);
                    self.reduce_into(grads, *b, out_shape, g.iter().zip(av).map(|(x, y)| x * y));
                }
            }
            Op::Scale(x, c) => {
                let buf = acc(grads, *x, g.len());
                buf.iter_mut().zip(g).for_each(|(b, v)| *b += c * v);
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                let buf = acc(grads, *x, g.len());
                buf.iter_mut().zip(g).for_each(|(b, v)| *b += v);
            }
            Op::MatMul(a, b) => self.matmul_pullback(*a, *b, g, grads),
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let (back, _) = permute_data(g, out_shape, &inv);
                let buf = acc(grads, *x, back.len());
                buf.iter_mut().zip(back).for_each(|(b, v)| *b += v);
            }
            Op::SumAxis { x, axis, mean } => {
                let shape = self.shape(*x);
                let (outer, len, inner) = split_axis(shape, *axis);
                let scale = if *mean { 1.0 / len as f64 } else { 1.0 };
                let buf = acc(grads, *x, outer * len * inner);
                for o in 0..outer {
                    for l in 0..len {
                        let dst = &mut buf[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, v) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                            *d += v * scale;
                        }
                    }
                }
            }
            Op::SumAll { x, mean } => {
                let n = self.value(*x).len();
                let v = if *mean { g[0] / n as f64 } else { g[0] };
                acc(grads, *x, n).iter_mut().for_each(|b| *b += v);
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(out_shape, *axis);
                let y = node.value.data();
                let buf = acc(grads, *x, y.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let s: f64 = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            buf[at(l)] += y[at(l)] * (g[at(l)] - s);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = *out_shape.last().unwrap();
                if let Some(b) = beta {
                    if self.wants(*b) {
                        let buf = acc(grads, *b, d);
                        g.chunks(d).for_each(|row| buf.iter_mut().zip(row).for_each(|(b, v)| *b += v));
                    }
                }
                if let Some(gm) = gamma {
                    if self.wants(*gm) {
                        let buf = acc(grads, *gm, d);
                        for (row, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                            buf.iter_mut().zip(row.iter().zip(xr)).for_each(|(b, (v, h))| *b += v * h);
                        }
                    }
                }
                if self.wants(*x) {
                    let gv = gamma.map(|gm| self.value(gm).data());
                    let buf = acc(grads, *x, g.len());
                    let mut dxhat = vec![0.0; d];
                    for (r, (row, xr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        for j in 0..d {
                            dxhat[j] = row[j] * gv.map_or(1.0, |gv| gv[j]);
                        }
                        let m1 = dxhat.iter().sum::<f64>() / d as f64;
                        let m2 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        let dst = &mut buf[r * d..(r + 1) * d];
                        for j in 0..d {
                            dst[j] += inv_std[r] * (dxhat[j] - m1 - xr[j] * m2);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let buf = acc(grads, *x, g.len());
                for ((b, v), xi) in buf.iter_mut().zip(g).zip(xv) {
                    *b += v * gelu_grad(*xi);
                }
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                let buf = acc(grads, *x, g.len());
                for ((b, v), xi) in buf.iter_mut().zip(g).zip(xv) {
                    *b += if *xi > 0.0 { *v } else if *xi < 0.0 { -v } else { 0.0 };
                }
            }
            Op::L2Norm(x) => {
                let xv = self.value(*x).data();
                let d = *self.shape(*x).last().unwrap();
                let n = node.value.data();
                let buf = acc(grads, *x, xv.len());
                for r in 0..n.len() {
                    if n[r] == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        buf[r * d + j] += g[r] * xv[r * d + j] / n[r];
                    }
                }
            }
            Op::Cosine(a, b) => {
                let d = *self.shape(*a).last().unwrap();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let c = node.value.data();
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; bv.len()];
                for r in 0..c.len() {
                    let (x, y) = (&av[r * d..(r + 1) * d], &bv[r * d..(r + 1) * d]);
                    let (nx, ny) = (norm(x), norm(y));
                    if nx == 0.0 || ny == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        da[r * d + j] = g[r] * (y[j] / (nx * ny) - c[r] * x[j] / (nx * nx));
                        db[r * d + j] = g[r] * (x[j] / (nx * ny) - c[r] * y[j] / (ny * ny));
                    }
                }
                if self.wants(*a) {
                    acc(grads, *a, da.len()).iter_mut().zip(da).for_each(|(b, v)| *b += v);
                }
                if self.wants(*b) {
                    acc(grads, *b, db.len()).iter_mut().zip(db).for_each(|(b, v)| *b += v);
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.shape(*logits)[1];
                let buf = acc(grads, *logits, probs.len());
                for (r, &y) in labels.iter().enumerate() {
                    for j in 0..k {
                        let onehot = if j == y { 1.0 } else { 0.0 };
                        buf[r * k + j] += g[r] * (probs[r * k + j] - onehot);
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    if self.wants(x) {
                        let buf = acc(grads, x, outer * len * inner);
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            buf[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src).for_each(|(b, v)| *b += v);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let shape = self.shape(*x);
                let (outer, full, inner) = split_axis(shape, *axis);
                let len = out_shape[*axis];
                let buf = acc(grads, *x, outer * full * inner);
                for o in 0..outer {
                    let dst = &mut buf[(o * full + start) * inner..(o * full + start + len) * inner];
                    dst.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]).for_each(|(b, v)| *b += v);
                }
            }
            Op::GatherRows { x, idx } => {
                let shape = self.shape(*x);
                let (n, d) = (shape[1], shape[2]);
                let m = out_shape[1];
                let buf = acc(grads, *x, numel(shape));
                for (b, row) in idx.iter().enumerate() {
                    for (j, &i) in row.iter().enumerate() {
                        let src = &g[(b * m + j) * d..(b * m + j + 1) * d];
                        buf[(b * n + i) * d..(b * n + i + 1) * d].iter_mut().zip(src).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::ScatterRows { x, idx } => {
                let shape = self.shape(*x);
                let (m, d) = (shape[1], shape[2]);
                let n = out_shape[1];
                let buf = acc(grads, *x, numel(shape));
                for (b, row) in idx.iter().enumerate() {
                    for (j, &i) in row.iter().enumerate() {
                        let src = &g[(b * n + i) * d..(b * n + i + 1) * d];
                        buf[(b * m + j) * d..(b * m + j + 1) * d].iter_mut().zip(src).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::Conv1d { x, w } => {
                let c = *out_shape.last().unwrap();
                let k = self.shape(*w)[0];
                let half = k / 2;
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                if self.wants(*x) {
                    let buf = acc(grads, *x, xv.len());
                    for (brow, grow) in buf.chunks_mut(c).zip(g.chunks(c)) {
                        for (ci, gv) in grow.iter().enumerate() {
                            for j in 0..k {
                                let pos = ci + j;
                                if pos >= half && pos - half < c {
                                    brow[pos - half] += wv[j * c + ci] * gv;
                                }
                            }
                        }
                    }
                }
                if self.wants(*w) {
                    let buf = acc(grads, *w, wv.len());
                    for (xrow, grow) in xv.chunks(c).zip(g.chunks(c)) {
                        for (ci, gv) in grow.iter().enumerate() {
                            for j in 0..k {
                                let pos = ci + j;
                                if pos >= half && pos - half < c {
                                    buf[j * c + ci] += xrow[pos - half] * gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::RfftMag { x, plan } => {
                let c = plan.len();
                let bins = plan.bins();
                let xv = self.value(*x).data();
                let mag = node.value.data();
                let buf = acc(grads, *x, xv.len());
                let (mut re, mut im) = (vec![0.0; bins], vec![0.0; bins]);
                for r in 0..xv.len() / c {
                    plan.process(&xv[r * c..(r + 1) * c], &mut re, &mut im);
                    for k in 0..bins {
                        let m = mag[r * bins + k];
                        if m == 0.0 {
                            continue;
                        }
                        let gk = g[r * bins + k] / m;
                        for n in 0..c {
                            let (cs, sn) = plan.twiddle(k, n);
                            buf[r * c + n] += gk * (re[k] * cs - im[k] * sn);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn matmul_pullback(&self, a: Var, b: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        if sb.len() == 2 {
            let rows = numel(sa) / k;
            if self.wants(a) {
                let buf = acc(grads, a, da.len());
                gemm_nt_acc(g, db, buf, rows, n, k);
            }
            if self.wants(b) {
                let buf = acc(grads, b, db.len());
                gemm_tn_acc(da, g, buf, rows, k, n);
            }
            return;
        }
        let batch = numel(&sb[..sb.len() - 2]);
        let shared_a = sa.len() == 2;
        if self.wants(a) {
            let buf = acc(grads, a, da.len());
            for bi in 0..batch {
                let ao = if shared_a { 0 } else { bi * m * k };
                gemm_nt_acc(&g[bi * m * n..(bi + 1) * m * n], &db[bi * k * n..(bi + 1) * k * n], &mut buf[ao..ao + m * k], m, n, k);
            }
        }
        if self.wants(b) {
            let buf = acc(grads, b, db.len());
            for bi in 0..batch {
                let ao = if shared_a { 0 } else { bi * m * k };
                gemm_tn_acc(&da[ao..ao + m * k], &g[bi * m * n..(bi + 1) * m * n], &mut buf[bi * k * n..(bi + 1) * k * n], m, k, n);
            }
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn norm(x: &[f64]) -> f64 {
    libm::sqrt(dot(x, x))
}
