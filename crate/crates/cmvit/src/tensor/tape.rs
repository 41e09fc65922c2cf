//! Record of executed differentiable operations, replayed in reverse by
//! [`Tape::backward`].
//!
//! Every op returns a [`Var`] handle into the tape that created it; handles
//! must not be mixed between tapes. Nodes own their output values, so a tape
//! doubles as the activation cache for the backward sweep.

use crate::error::{Error, Result};
use crate::spectral;

use super::params::{ParamId, ParamStore};
use super::{numel_of, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Pointwise op kind for [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwKind {
    Add,
    Sub,
    Mul,
}

enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    Elementwise {
        kind: EwKind,
        a: Var,
        b: Var,
        // b is rank-1 and broadcast over a's last axis
        bias_broadcast: bool,
    },
    // b's shape equals a's shape minus the leading axis
    BroadcastAdd {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        c: T,
    },
    Matmul {
        a: Var,
        b: Var,
    },
    Bmm {
        a: Var,
        b: Var,
    },
    TransposeLast2 {
        a: Var,
    },
    Reshape {
        a: Var,
    },
    Narrow {
        a: Var,
        axis: usize,
        start: usize,
        len: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Relu {
        a: Var,
    },
    Softmax {
        a: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        var: Vec<T>,
        train: bool,
        eps: T,
    },
    Sum {
        a: Var,
        axis: Option<usize>,
    },
    Mean {
        a: Var,
        axis: Option<usize>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    },
    AvgPool {
        x: Var,
        out_h: usize,
        out_w: usize,
    },
    // per-channel 2-D FFT magnitude; padded spectra kept for the backward pass
    Fft2dMag {
        x: Var,
        pad_h: usize,
        pad_w: usize,
        re: Vec<T>,
        im: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of differentiable operations.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Option<Vec<Vec<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn axpy<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

/// Decomposes `shape` around `axis` into (outer, extent, inner) so that the
/// row-major flat index of (o, j, i) is (o * extent + j) * inner + i.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_into<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                out_row[j] = out_row[j] + av * b_row[j];
            }
        }
    }
}

// da += g . b^T for c = a(m,k) . b(k,n)
fn matmul_backward_a<T: Real>(g: &[T], b: &[T], m: usize, k: usize, n: usize, da: &mut [T]) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for j in 0..n {
                acc = acc + g_row[j] * b_row[j];
            }
            da[i * k + p] = da[i * k + p] + acc;
        }
    }
}

// db += a^T . g
fn matmul_backward_b<T: Real>(g: &[T], a: &[T], m: usize, k: usize, n: usize, db: &mut [T]) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let db_row = &mut db[p * n..(p + 1) * n];
            for j in 0..n {
                db_row[j] = db_row[j] + av * g_row[j];
            }
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + *x * *y;
    }
    acc
}

fn axpy_scaled<T: Real>(dst: &mut [T], src: &[T], c: T) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + c * *s;
    }
}

// valid kernel-tap range [lo, hi) at output offset `pos` = o * stride:
// taps kx with 0 <= pos + kx - pad < extent
fn tap_range(pos: usize, pad: usize, k: usize, extent: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(pos);
    let hi = (extent + pad).saturating_sub(pos).min(k);
    (lo, hi)
}

// output positions (ox_lo, ox_hi, first input index) with
// 0 <= ox * stride + kx - pad < extent, clipped to out_len; convolutions
// run kx outermost so the inner loops sweep whole output rows
fn ox_range(
    stride: usize,
    pad: usize,
    kx: usize,
    extent: usize,
    out_len: usize,
) -> (usize, usize, usize) {
    let ox_lo = pad.saturating_sub(kx).div_ceil(stride);
    let ox_hi = if extent + pad > kx {
        ((extent + pad - kx - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    if ox_lo >= ox_hi {
        (0, 0, 0)
    } else {
        (ox_lo, ox_hi, ox_lo * stride + kx - pad)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: None,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Output value of a node.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.val(v)
    }

    /// Gradient of the last [`Tape::backward`] loss w.r.t. this node.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.as_ref().map(|g| g[v.0].as_slice())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Stages a tensor as a leaf; `requires_grad` controls participation in
    /// the backward sweep.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let needs = t.requires_grad;
        self.push(t, Op::Leaf { param: None }, needs)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let mut t = t;
        t.requires_grad = false;
        self.leaf(t)
    }

    /// Leaf that participates in the backward sweep (for inputs under test).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let mut t = t;
        t.requires_grad = true;
        self.leaf(t)
    }

    /// Stages a parameter's current value; its gradient is routed back to the
    /// store by [`Tape::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.param(id);
        let t = Tensor {
            shape: p.shape.clone(),
            data: p.value.clone(),
            requires_grad: true,
        };
        self.push(t, Op::Leaf { param: Some(id) }, true)
    }

    // ── pointwise ───────────────────────────────────────────────────

    pub fn elementwise(&mut self, kind: EwKind, a: Var, b: Var) -> Result<Var> {
        let sa = self.val(a).shape.clone();
        let sb = self.val(b).shape.clone();
        let bias_broadcast = if sa == sb {
            false
        } else if sb.len() == 1 && sa.last() == Some(&sb[0]) {
            true
        } else {
            return Err(Error::shape(format!(
                "elementwise {kind:?}: incompatible shapes {sa:?} vs {sb:?}"
            )));
        };
        let av = &self.val(a).data;
        let bv = &self.val(b).data;
        let bl = bv.len();
        let mut out = Vec::with_capacity(av.len());
        for (i, &x) in av.iter().enumerate() {
            let y = if bias_broadcast { bv[i % bl] } else { bv[i] };
            out.push(match kind {
                EwKind::Add => x + y,
                EwKind::Sub => x - y,
                EwKind::Mul => x * y,
            });
        }
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::from_vec(&sa, out)?;
        Ok(self.push(
            value,
            Op::Elementwise {
                kind,
                a,
                b,
                bias_broadcast,
            },
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(EwKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(EwKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(EwKind::Mul, a, b)
    }

    /// a + b where b's shape equals a's shape without the leading axis
    /// (broadcast over the batch; used for the positional table).
    pub fn broadcast_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.val(a).shape.clone();
        let sb = self.val(b).shape.clone();
        if sa.is_empty() || sa[1..] != sb[..] {
            return Err(Error::shape(format!(
                "broadcast_add: {sb:?} does not match trailing extents of {sa:?}"
            )));
        }
        let bv = &self.val(b).data;
        let bl = bv.len();
        let out: Vec<T> = self
            .val(a)
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % bl])
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::from_vec(&sa, out)?;
        Ok(self.push(value, Op::BroadcastAdd { a, b }, needs))
    }

    /// Multiplication by a compile-time-known constant.
    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out: Vec<T> = self.val(a).data.iter().map(|&x| x * c).collect();
        let value = Tensor::from_vec(&self.val(a).shape.clone(), out).unwrap();
        let needs = self.needs(a);
        self.push(value, Op::Scale { a, c }, needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<T> = self
            .val(a)
            .data
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let value = Tensor::from_vec(&self.val(a).shape.clone(), out).unwrap();
        let needs = self.needs(a);
        self.push(value, Op::Relu { a }, needs)
    }

    // ── linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.val(a).shape.clone();
        let sb = self.val(b).shape.clone();
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape(format!(
                "matmul requires rank-2 operands, got {sa:?} and {sb:?}"
            )));
        }
        if sa[1] != sb[0] {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_into(&self.val(a).data, &self.val(b).data, m, k, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(value, Op::Matmul { a, b }, needs))
    }

    /// Batched matmul over rank-3 operands: [B,m,k] x [B,k,n] -> [B,m,n].
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.val(a).shape.clone();
        let sb = self.val(b).shape.clone();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape(format!("bmm: incompatible {sa:?} x {sb:?}")));
        }
        let (bsz, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); bsz * m * n];
        for i in 0..bsz {
            matmul_into(
                &self.val(a).data[i * m * k..(i + 1) * m * k],
                &self.val(b).data[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::from_vec(&[bsz, m, n], out)?;
        Ok(self.push(value, Op::Bmm { a, b }, needs))
    }

    /// Swaps the last two axes, batching over any leading axes.
    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let sa = self.val(a).shape.clone();
        if sa.len() < 2 {
            return Err(Error::shape(format!("transpose_last2 on rank {} tensor", sa.len())));
        }
        let (r, c) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let batch = numel_of(&sa) / (r * c);
        let av = &self.val(a).data;
        let mut out = vec![T::zero(); av.len()];
        for bi in 0..batch {
            let src = &av[bi * r * c..(bi + 1) * r * c];
            let dst = &mut out[bi * r * c..(bi + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let mut shape = sa;
        let len = shape.len();
        shape.swap(len - 2, len - 1);
        let needs = self.needs(a);
        let value = Tensor::from_vec(&shape, out)?;
        Ok(self.push(value, Op::TransposeLast2 { a }, needs))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel_of(shape) != self.val(a).numel() {
            return Err(Error::shape(format!(
                "reshape {:?} -> {:?}: element counts differ",
                self.val(a).shape,
                shape
            )));
        }
        let value = Tensor::from_vec(shape, self.val(a).data.clone())?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Reshape { a }, needs))
    }

    /// Contiguous slice of `len` extents starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sa = self.val(a).shape.clone();
        if axis >= sa.len() {
            return Err(Error::Axis {
                axis,
                rank: sa.len(),
            });
        }
        if start + len > sa[axis] || len == 0 {
            return Err(Error::shape(format!(
                "narrow [{start}, {start}+{len}) out of range for axis extent {}",
                sa[axis]
            )));
        }
        let (outer, _, inner) = axis_split(&sa, axis);
        let av = &self.val(a).data;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for j in 0..len {
                let base = (o * sa[axis] + start + j) * inner;
                out.extend_from_slice(&av[base..base + inner]);
            }
        }
        let mut shape = sa;
        shape[axis] = len;
        let needs = self.needs(a);
        let value = Tensor::from_vec(&shape, out)?;
        Ok(self.push(
            value,
            Op::Narrow {
                a,
                axis,
                start,
                len,
            },
            needs,
        ))
    }

    /// Concatenates tensors that agree on every axis except `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let first = self.val(parts[0]).shape.clone();
        if axis >= first.len() {
            return Err(Error::Axis {
                axis,
                rank: first.len(),
            });
        }
        let mut total = 0usize;
        for &p in parts {
            let sp = &self.val(p).shape;
            if sp.len() != first.len()
                || sp
                    .iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(format!(
                    "concat: {sp:?} incompatible with {first:?} along axis {axis}"
                )));
            }
            total += sp[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let mut shape = first;
        shape[axis] = total;
        let mut out = vec![T::zero(); outer * total * inner];
        let mut offset = 0usize;
        for &p in parts {
            let sp_axis = self.val(p).shape[axis];
            let pv = &self.val(p).data;
            for o in 0..outer {
                for j in 0..sp_axis {
                    let src = (o * sp_axis + j) * inner;
                    let dst = (o * total + offset + j) * inner;
                    out[dst..dst + inner].copy_from_slice(&pv[src..src + inner]);
                }
            }
            offset += sp_axis;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        let value = Tensor::from_vec(&shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        ))
    }

    // ── reductions ──────────────────────────────────────────────────

    fn reduce(&mut self, a: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let sa = self.val(a).shape.clone();
        let av = &self.val(a).data;
        let (value, op) = match axis {
            None => {
                let mut s = T::zero();
                for &x in av {
                    s = s + x;
                }
                if mean {
                    s = s / T::from_usize(av.len()).unwrap();
                }
                (
                    Tensor::scalar(s),
                    if mean {
                        Op::Mean { a, axis: None }
                    } else {
                        Op::Sum { a, axis: None }
                    },
                )
            }
            Some(ax) => {
                if ax >= sa.len() {
                    return Err(Error::Axis {
                        axis: ax,
                        rank: sa.len(),
                    });
                }
                let (outer, len, inner) = axis_split(&sa, ax);
                let mut out = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for j in 0..len {
                        let base = (o * len + j) * inner;
                        for i in 0..inner {
                            out[o * inner + i] = out[o * inner + i] + av[base + i];
                        }
                    }
                }
                if mean {
                    let d = T::from_usize(len).unwrap();
                    for v in &mut out {
                        *v = *v / d;
                    }
                }
                let mut shape = sa;
                shape.remove(ax);
                (
                    Tensor::from_vec(&shape, out)?,
                    if mean {
                        Op::Mean { a, axis: Some(ax) }
                    } else {
                        Op::Sum { a, axis: Some(ax) }
                    },
                )
            }
        };
        let needs = self.needs(a);
        Ok(self.push(value, op, needs))
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(a, axis, false)
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(a, axis, true)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        self.reduce(a, None, false).unwrap()
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        self.reduce(a, None, true).unwrap()
    }

    // ── neural-network ops ──────────────────────────────────────────

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let sa = self.val(a).shape.clone();
        if axis >= sa.len() {
            return Err(Error::Axis {
                axis,
                rank: sa.len(),
            });
        }
        let (outer, len, inner) = axis_split(&sa, axis);
        let av = &self.val(a).data;
        let mut out = vec![T::zero(); av.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..len {
                    mx = mx.max(av[idx(j)]);
                }
                let mut denom = T::zero();
                for j in 0..len {
                    let e = (av[idx(j)] - mx).exp();
                    out[idx(j)] = e;
                    denom = denom + e;
                }
                for j in 0..len {
                    out[idx(j)] = out[idx(j)] / denom;
                }
            }
        }
        let needs = self.needs(a);
        let value = Tensor::from_vec(&sa, out)?;
        Ok(self.push(value, Op::Softmax { a, axis }, needs))
    }

    /// Layer normalization over the last axis with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let sx = self.val(x).shape.clone();
        let d = *sx.last().ok_or_else(|| Error::shape("layer_norm on rank-0 tensor"))?;
        if self.val(gamma).shape != [d] || self.val(beta).shape != [d] {
            return Err(Error::shape(format!(
                "layer_norm: gamma/beta must be [{d}], got {:?} and {:?}",
                self.val(gamma).shape,
                self.val(beta).shape
            )));
        }
        let xv = &self.val(x).data;
        let gv = &self.val(gamma).data;
        let bv = &self.val(beta).data;
        let rows = xv.len() / d;
        let mut out = vec![T::zero(); xv.len()];
        let dn = T::from_usize(d).unwrap();
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mut mean = T::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean / dn;
            let mut var = T::zero();
            for &v in row {
                var = var + (v - mean) * (v - mean);
            }
            var = var / dn;
            let inv_std = T::one() / (var + eps).sqrt();
            for j in 0..d {
                out[r * d + j] = (row[j] - mean) * inv_std * gv[j] + bv[j];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let value = Tensor::from_vec(&sx, out)?;
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, eps }, needs))
    }

    fn batch_norm_stats(&self, x: Var) -> Result<(Vec<T>, Vec<T>)> {
        let sx = &self.val(x).shape;
        if sx.len() != 4 {
            return Err(Error::shape(format!("batch_norm expects [N,C,H,W], got {sx:?}")));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let m = T::from_usize(n * h * w).unwrap();
        let xv = &self.val(x).data;
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for ni in 0..n {
                let base = (ni * c + ch) * h * w;
                for i in 0..h * w {
                    s = s + xv[base + i];
                }
            }
            mean[ch] = s / m;
            let mut v = T::zero();
            for ni in 0..n {
                let base = (ni * c + ch) * h * w;
                for i in 0..h * w {
                    let d = xv[base + i] - mean[ch];
                    v = v + d * d;
                }
            }
            var[ch] = v / m;
        }
        Ok((mean, var))
    }

    fn batch_norm_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        var: Vec<T>,
        train: bool,
        eps: T,
    ) -> Result<Var> {
        let sx = self.val(x).shape.clone();
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        if self.val(gamma).shape != [c] || self.val(beta).shape != [c] {
            return Err(Error::shape(format!(
                "batch_norm: gamma/beta must be [{c}]"
            )));
        }
        let xv = &self.val(x).data;
        let gv = &self.val(gamma).data;
        let bv = &self.val(beta).data;
        let mut out = vec![T::zero(); xv.len()];
        for ch in 0..c {
            let inv_std = T::one() / (var[ch] + eps).sqrt();
            let scale = gv[ch] * inv_std;
            let shift = bv[ch] - mean[ch] * scale;
            for ni in 0..n {
                let base = (ni * c + ch) * h * w;
                for i in 0..h * w {
                    out[base + i] = xv[base + i] * scale + shift;
                }
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let value = Tensor::from_vec(&sx, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                var,
                train,
                eps,
            },
            needs,
        ))
    }

    /// Batch norm over [N,C,H,W] using batch statistics; returns the output
    /// together with the (mean, var) the caller folds into running stats.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (mean, var) = self.batch_norm_stats(x)?;
        let out = self.batch_norm_apply(x, gamma, beta, mean.clone(), var.clone(), true, eps)?;
        Ok((out, mean, var))
    }

    /// Batch norm using frozen running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let sx = &self.val(x).shape;
        if sx.len() != 4 {
            return Err(Error::shape(format!("batch_norm expects [N,C,H,W], got {sx:?}")));
        }
        if mean.len() != sx[1] || var.len() != sx[1] {
            return Err(Error::shape("batch_norm: running stats length mismatch"));
        }
        self.batch_norm_apply(x, gamma, beta, mean.to_vec(), var.to_vec(), false, eps)
    }

    /// Grouped 2-D cross-correlation with zero padding.
    ///
    /// x: [N,C,H,W], w: [OC, C/groups, KH, KW], b: [OC].
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var> {
        let sx = self.val(x).shape.clone();
        let sw = self.val(w).shape.clone();
        if sx.len() != 4 || sw.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects [N,C,H,W] and [OC,ICg,KH,KW], got {sx:?} and {sw:?}"
            )));
        }
        let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (oc, icg, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        if groups == 0 || c % groups != 0 || oc % groups != 0 || icg != c / groups {
            return Err(Error::shape(format!(
                "conv2d: channels {c}->{oc} with groups {groups} and per-group {icg} inconsistent"
            )));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d stride must be positive"));
        }
        if h + 2 * pad < kh
            || wd + 2 * pad < kw
            || (h + 2 * pad - kh) % stride != 0
            || (wd + 2 * pad - kw) % stride != 0
        {
            return Err(Error::shape(format!(
                "conv2d: non-integral output extent for input {h}x{wd}, kernel {kh}x{kw}, stride {stride}, pad {pad}"
            )));
        }
        if let Some(bv) = b {
            if self.val(bv).shape != [oc] {
                return Err(Error::shape(format!("conv2d: bias must be [{oc}]")));
            }
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let ocg = oc / groups;
        let xv = &self.val(x).data;
        let wv = &self.val(w).data;
        let bias = b.map(|bv| self.val(bv).data.clone());
        let mut out = vec![T::zero(); n * oc * oh * ow];
        for ni in 0..n {
            for o in 0..oc {
                let group = o / ocg;
                let ic0 = group * icg;
                let b0 = bias.as_ref().map_or(T::zero(), |bb| bb[o]);
                let obase = (ni * oc + o) * oh * ow;
                for v in &mut out[obase..obase + oh * ow] {
                    *v = b0;
                }
                for ic in 0..icg {
                    let xbase = (ni * c + ic0 + ic) * h * wd;
                    let wbase = (o * icg + ic) * kh * kw;
                    for oy in 0..oh {
                        let (ky_lo, ky_hi) = tap_range(oy * stride, pad, kh, h);
                        let orow = &mut out[obase + oy * ow..obase + (oy + 1) * ow];
                        for ky in ky_lo..ky_hi {
                            let iy = oy * stride + ky - pad;
                            let xrow = &xv[xbase + iy * wd..xbase + (iy + 1) * wd];
                            let wrow = &wv[wbase + ky * kw..wbase + (ky + 1) * kw];
                            for (kx, &wk) in wrow.iter().enumerate() {
                                let (ox_lo, ox_hi, x0) = ox_range(stride, pad, kx, wd, ow);
                                if ox_lo >= ox_hi {
                                    continue;
                                }
                                if stride == 1 {
                                    axpy_scaled(
                                        &mut orow[ox_lo..ox_hi],
                                        &xrow[x0..x0 + ox_hi - ox_lo],
                                        wk,
                                    );
                                } else {
                                    for (idx, ov) in orow[ox_lo..ox_hi].iter_mut().enumerate() {
                                        *ov = *ov + wk * xrow[x0 + idx * stride];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let needs =
            self.needs(x) || self.needs(w) || b.map_or(false, |bv| self.needs(bv));
        let value = Tensor::from_vec(&[n, oc, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                groups,
            },
            needs,
        ))
    }

    /// Average pooling onto an (out_h, out_w) grid; extents must tile exactly.
    pub fn avg_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let sx = self.val(x).shape.clone();
        if sx.len() != 4 {
            return Err(Error::shape(format!("avg_pool expects [N,C,H,W], got {sx:?}")));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        if out_h == 0 || out_w == 0 || h % out_h != 0 || w % out_w != 0 {
            return Err(Error::shape(format!(
                "avg_pool: {h}x{w} does not tile into {out_h}x{out_w}"
            )));
        }
        let (ch, cw) = (h / out_h, w / out_w);
        let cell = T::from_usize(ch * cw).unwrap();
        let xv = &self.val(x).data;
        let mut out = vec![T::zero(); n * c * out_h * out_w];
        for nc in 0..n * c {
            let xin = nc * h * w;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = T::zero();
                    for dy in 0..ch {
                        for dx in 0..cw {
                            acc = acc + xv[xin + (oy * ch + dy) * w + (ox * cw + dx)];
                        }
                    }
                    out[nc * out_h * out_w + oy * out_w + ox] = acc / cell;
                }
            }
        }
        let needs = self.needs(x);
        let value = Tensor::from_vec(&[n, c, out_h, out_w], out)?;
        Ok(self.push(value, Op::AvgPool { x, out_h, out_w }, needs))
    }

    /// Per-channel 2-D FFT magnitude of [N,C,H,W]: each plane is zero-padded
    /// to power-of-two extents, transformed, and the magnitude cropped back
    /// to H x W. Differentiable through the transform.
    pub fn fft2d_magnitude(&mut self, x: Var) -> Result<Var> {
        let sx = self.val(x).shape.clone();
        if sx.len() != 4 {
            return Err(Error::shape(format!(
                "fft2d_magnitude expects [N,C,H,W], got {sx:?}"
            )));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        if h == 0 || w == 0 {
            return Err(Error::contract("fft2d_magnitude on empty plane"));
        }
        let ph = h.next_power_of_two();
        let pw = w.next_power_of_two();
        let plane = ph * pw;
        let xv = &self.val(x).data;
        let mut re_all = vec![T::zero(); n * c * plane];
        let mut im_all = vec![T::zero(); n * c * plane];
        let mut out = vec![T::zero(); n * c * h * w];
        for nc in 0..n * c {
            let re = &mut re_all[nc * plane..(nc + 1) * plane];
            let im = &mut im_all[nc * plane..(nc + 1) * plane];
            for y in 0..h {
                for xq in 0..w {
                    re[y * pw + xq] = xv[nc * h * w + y * w + xq];
                }
            }
            spectral::fft2_inplace(re, im, ph, pw);
            for y in 0..h {
                for xq in 0..w {
                    let (rr, ii) = (re[y * pw + xq], im[y * pw + xq]);
                    out[nc * h * w + y * w + xq] = (rr * rr + ii * ii).sqrt();
                }
            }
        }
        let needs = self.needs(x);
        let value = Tensor::from_vec(&sx, out)?;
        Ok(self.push(
            value,
            Op::Fft2dMag {
                x,
                pad_h: ph,
                pad_w: pw,
                re: re_all,
                im: im_all,
            },
            needs,
        ))
    }

    /// Mean cross-entropy between logits [N,C] and class labels, through a
    /// max-shifted log-sum-exp. Produces a rank-0 loss.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let sl = self.val(logits).shape.clone();
        if sl.len() != 2 {
            return Err(Error::shape(format!("cross_entropy expects [N,C], got {sl:?}")));
        }
        let (n, c) = (sl[0], sl[1]);
        if labels.len() != n {
            return Err(Error::contract(format!(
                "cross_entropy: {} labels for batch of {n}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::contract(format!(
                "cross_entropy: label {bad} out of range for {c} classes"
            )));
        }
        let lv = &self.val(logits).data;
        let mut total = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &lv[r * c..(r + 1) * c];
            let mut mx = T::neg_infinity();
            for &v in row {
                mx = mx.max(v);
            }
            let mut lse = T::zero();
            for &v in row {
                lse = lse + (v - mx).exp();
            }
            let lse = lse.ln() + mx;
            total = total + (lse - row[label]);
        }
        let loss = total / T::from_usize(n).unwrap();
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            needs,
        ))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse sweep from a rank-0 loss; node gradients are retained and
    /// readable through [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.val(loss).rank() != 0 {
            return Err(Error::contract(format!(
                "backward requires a rank-0 loss, got shape {:?}",
                self.val(loss).shape
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Vec<T>> = self
            .nodes
            .iter()
            .map(|nd| vec![T::zero(); nd.value.numel()])
            .collect();
        grads[loss.0][0] = T::one();
        for i in (0..n).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            self.backprop_node(i, &g, &mut grads);
            grads[i] = g;
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// [`Tape::backward`] followed by routing leaf gradients into the store.
    /// Gradients accumulate; the caller zeroes between steps.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        self.backward(loss)?;
        self.accumulate_param_grads(store);
        Ok(())
    }

    /// Adds the gradient of every staged parameter leaf to `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        let grads = match &self.grads {
            Some(g) => g,
            None => return,
        };
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                if node.needs_grad {
                    store.accumulate_grad(id, &grads[i]);
                }
            }
        }
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Vec<T>]) {
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}

            Op::Elementwise {
                kind,
                a,
                b,
                bias_broadcast,
            } => {
                let av = &self.val(*a).data;
                let bv = &self.val(*b).data;
                let bl = bv.len();
                if self.needs(*a) {
                    let da = &mut grads[a.0];
                    match kind {
                        EwKind::Add | EwKind::Sub => axpy(da, g),
                        EwKind::Mul => {
                            for (idx, gi) in g.iter().enumerate() {
                                let bi = if *bias_broadcast { bv[idx % bl] } else { bv[idx] };
                                da[idx] = da[idx] + *gi * bi;
                            }
                        }
                    }
                }
                if self.needs(*b) {
                    let db = &mut grads[b.0];
                    for (idx, gi) in g.iter().enumerate() {
                        let j = if *bias_broadcast { idx % bl } else { idx };
                        match kind {
                            EwKind::Add => db[j] = db[j] + *gi,
                            EwKind::Sub => db[j] = db[j] - *gi,
                            EwKind::Mul => db[j] = db[j] + *gi * av[idx],
                        }
                    }
                }
            }

            Op::BroadcastAdd { a, b } => {
                if self.needs(*a) {
                    axpy(&mut grads[a.0], g);
                }
                if self.needs(*b) {
                    let bl = self.val(*b).numel();
                    let db = &mut grads[b.0];
                    for (idx, gi) in g.iter().enumerate() {
                        db[idx % bl] = db[idx % bl] + *gi;
                    }
                }
            }

            Op::Scale { a, c } => {
                if self.needs(*a) {
                    let da = &mut grads[a.0];
                    for (idx, gi) in g.iter().enumerate() {
                        da[idx] = da[idx] + *gi * *c;
                    }
                }
            }

            Op::Matmul { a, b } => {
                let sa = &self.val(*a).shape;
                let (m, k) = (sa[0], sa[1]);
                let n = self.val(*b).shape[1];
                if self.needs(*a) {
                    matmul_backward_a(g, &self.val(*b).data, m, k, n, &mut grads[a.0]);
                }
                if self.needs(*b) {
                    matmul_backward_b(g, &self.val(*a).data, m, k, n, &mut grads[b.0]);
                }
            }

            Op::Bmm { a, b } => {
                let sa = &self.val(*a).shape;
                let (bsz, m, k) = (sa[0], sa[1], sa[2]);
                let n = self.val(*b).shape[2];
                for bi in 0..bsz {
                    let gb = &g[bi * m * n..(bi + 1) * m * n];
                    if self.needs(*a) {
                        matmul_backward_a(
                            gb,
                            &self.val(*b).data[bi * k * n..(bi + 1) * k * n],
                            m,
                            k,
                            n,
                            &mut grads[a.0][bi * m * k..(bi + 1) * m * k],
                        );
                    }
                    if self.needs(*b) {
                        matmul_backward_b(
                            gb,
                            &self.val(*a).data[bi * m * k..(bi + 1) * m * k],
                            m,
                            k,
                            n,
                            &mut grads[b.0][bi * k * n..(bi + 1) * k * n],
                        );
                    }
                }
            }

            Op::TransposeLast2 { a } => {
                if self.needs(*a) {
                    let so = &self.nodes[i].value.shape;
                    let (r, c) = (so[so.len() - 2], so[so.len() - 1]);
                    let batch = g.len() / (r * c);
                    let da = &mut grads[a.0];
                    for bi in 0..batch {
                        let src = &g[bi * r * c..(bi + 1) * r * c];
                        let dst = &mut da[bi * r * c..(bi + 1) * r * c];
                        for y in 0..r {
                            for x in 0..c {
                                dst[x * r + y] = dst[x * r + y] + src[y * c + x];
                            }
                        }
                    }
                }
            }

            Op::Reshape { a } => {
                if self.needs(*a) {
                    axpy(&mut grads[a.0], g);
                }
            }

            Op::Narrow {
                a,
                axis,
                start,
                len,
            } => {
                if self.needs(*a) {
                    let sa = &self.val(*a).shape;
                    let (outer, ext, inner) = axis_split(sa, *axis);
                    let da = &mut grads[a.0];
                    for o in 0..outer {
                        for j in 0..*len {
                            let src = (o * len + j) * inner;
                            let dst = (o * ext + start + j) * inner;
                            for q in 0..inner {
                                da[dst + q] = da[dst + q] + g[src + q];
                            }
                        }
                    }
                }
            }

            Op::Concat { parts, axis } => {
                let so = &self.nodes[i].value.shape;
                let (outer, total, inner) = axis_split(so, *axis);
                let mut offset = 0usize;
                for &p in parts {
                    let ext = self.val(p).shape[*axis];
                    if self.needs(p) {
                        let dp = &mut grads[p.0];
                        for o in 0..outer {
                            for j in 0..ext {
                                let src = (o * total + offset + j) * inner;
                                let dst = (o * ext + j) * inner;
                                for q in 0..inner {
                                    dp[dst + q] = dp[dst + q] + g[src + q];
                                }
                            }
                        }
                    }
                    offset += ext;
                }
            }

            Op::Relu { a } => {
                if self.needs(*a) {
                    let av = &self.val(*a).data;
                    let da = &mut grads[a.0];
                    for (idx, gi) in g.iter().enumerate() {
                        if av[idx] > T::zero() {
                            da[idx] = da[idx] + *gi;
                        }
                    }
                }
            }

            Op::Softmax { a, axis } => {
                if self.needs(*a) {
                    let s = &self.nodes[i].value;
                    let (outer, len, inner) = axis_split(&s.shape, *axis);
                    let sv = &s.data;
                    let da = &mut grads[a.0];
                    for o in 0..outer {
                        for q in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + q;
                            let mut dot = T::zero();
                            for j in 0..len {
                                dot = dot + g[idx(j)] * sv[idx(j)];
                            }
                            for j in 0..len {
                                da[idx(j)] = da[idx(j)] + sv[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                }
            }

            Op::LayerNorm { x, gamma, beta, eps } => {
                let xv = &self.val(*x).data;
                let gv = &self.val(*gamma).data;
                let d = gv.len();
                let rows = xv.len() / d;
                let dn = T::from_usize(d).unwrap();
                for r in 0..rows {
                    let row = &xv[r * d..(r + 1) * d];
                    let grow = &g[r * d..(r + 1) * d];
                    let mut mean = T::zero();
                    for &v in row {
                        mean = mean + v;
                    }
                    mean = mean / dn;
                    let mut var = T::zero();
                    for &v in row {
                        var = var + (v - mean) * (v - mean);
                    }
                    var = var / dn;
                    let inv_std = T::one() / (var + *eps).sqrt();
                    if self.needs(*gamma) || self.needs(*beta) {
                        for j in 0..d {
                            let xhat = (row[j] - mean) * inv_std;
                            if self.needs(*gamma) {
                                grads[gamma.0][j] = grads[gamma.0][j] + grow[j] * xhat;
                            }
                            if self.needs(*beta) {
                                grads[beta.0][j] = grads[beta.0][j] + grow[j];
                            }
                        }
                    }
                    if self.needs(*x) {
                        let mut sum_dxhat = T::zero();
                        let mut sum_dxhat_xhat = T::zero();
                        for j in 0..d {
                            let xhat = (row[j] - mean) * inv_std;
                            let dxhat = grow[j] * gv[j];
                            sum_dxhat = sum_dxhat + dxhat;
                            sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                        }
                        let dx = &mut grads[x.0][r * d..(r + 1) * d];
                        for j in 0..d {
                            let xhat = (row[j] - mean) * inv_std;
                            let dxhat = grow[j] * gv[j];
                            dx[j] = dx[j]
                                + inv_std / dn * (dn * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                        }
                    }
                }
            }

            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                var,
                train,
                eps,
            } => {
                let sx = &self.val(*x).shape;
                let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
                let hw = h * w;
                let m = T::from_usize(n * hw).unwrap();
                let xv = &self.val(*x).data;
                let gv = &self.val(*gamma).data;
                for ch in 0..c {
                    let inv_std = T::one() / (var[ch] + *eps).sqrt();
                    let mut sum_g = T::zero();
                    let mut sum_g_xhat = T::zero();
                    for ni in 0..n {
                        let base = (ni * c + ch) * hw;
                        for q in 0..hw {
                            let xhat = (xv[base + q] - mean[ch]) * inv_std;
                            sum_g = sum_g + g[base + q];
                            sum_g_xhat = sum_g_xhat + g[base + q] * xhat;
                        }
                    }
                    if self.needs(*gamma) {
                        grads[gamma.0][ch] = grads[gamma.0][ch] + sum_g_xhat;
                    }
                    if self.needs(*beta) {
                        grads[beta.0][ch] = grads[beta.0][ch] + sum_g;
                    }
                    if self.needs(*x) {
                        for ni in 0..n {
                            let base = (ni * c + ch) * hw;
                            for q in 0..hw {
                                let gi = g[base + q];
                                let contrib = if *train {
                                    let xhat = (xv[base + q] - mean[ch]) * inv_std;
                                    gv[ch] * inv_std / m
                                        * (m * gi - sum_g - xhat * sum_g_xhat)
                                } else {
                                    gv[ch] * inv_std * gi
                                };
                                grads[x.0][base + q] = grads[x.0][base + q] + contrib;
                            }
                        }
                    }
                }
            }

            Op::Sum { a, axis } | Op::Mean { a, axis } => {
                if self.needs(*a) {
                    let mean_op = matches!(self.nodes[i].op, Op::Mean { .. });
                    let sa = &self.val(*a).shape;
                    let da = &mut grads[a.0];
                    match axis {
                        None => {
                            let mut gv = g[0];
                            if mean_op {
                                gv = gv / T::from_usize(da.len()).unwrap();
                            }
                            for v in da.iter_mut() {
                                *v = *v + gv;
                            }
                        }
                        Some(ax) => {
                            let (outer, len, inner) = axis_split(sa, *ax);
                            let scale = if mean_op {
                                T::one() / T::from_usize(len).unwrap()
                            } else {
                                T::one()
                            };
                            for o in 0..outer {
                                for j in 0..len {
                                    let base = (o * len + j) * inner;
                                    for q in 0..inner {
                                        da[base + q] = da[base + q] + g[o * inner + q] * scale;
                                    }
                                }
                            }
                        }
                    }
                }
            }

            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                groups,
            } => {
                let sx = &self.val(*x).shape;
                let sw = &self.val(*w).shape;
                let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
                let (oc, icg, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
                let ocg = oc / groups;
                let so = &self.nodes[i].value.shape;
                let (oh, ow) = (so[2], so[3]);
                let xv = &self.val(*x).data;
                let wv = &self.val(*w).data;
                let need_x = self.needs(*x);
                let need_w = self.needs(*w);
                if let Some(bv) = b {
                    if self.needs(*bv) {
                        for ni in 0..n {
                            for o in 0..oc {
                                let gbase = (ni * oc + o) * oh * ow;
                                let mut s = T::zero();
                                for &gi in &g[gbase..gbase + oh * ow] {
                                    s = s + gi;
                                }
                                grads[bv.0][o] = grads[bv.0][o] + s;
                            }
                        }
                    }
                }
                if need_x || need_w {
                    let (stride, pad) = (*stride, *pad);
                    for ni in 0..n {
                        for o in 0..oc {
                            let group = o / ocg;
                            let ic0 = group * icg;
                            let gbase = (ni * oc + o) * oh * ow;
                            for ic in 0..icg {
                                let xbase = (ni * c + ic0 + ic) * h * wd;
                                let wbase = (o * icg + ic) * kh * kw;
                                for oy in 0..oh {
                                    let (ky_lo, ky_hi) = tap_range(oy * stride, pad, kh, h);
                                    let grow = &g[gbase + oy * ow..gbase + (oy + 1) * ow];
                                    for ky in ky_lo..ky_hi {
                                        let iy = oy * stride + ky - pad;
                                        let xrow_at = xbase + iy * wd;
                                        for kx in 0..kw {
                                            let (ox_lo, ox_hi, x0) =
                                                ox_range(stride, pad, kx, wd, ow);
                                            if ox_lo >= ox_hi {
                                                continue;
                                            }
                                            let len = ox_hi - ox_lo;
                                            if need_w {
                                                let xrow = &xv[xrow_at + x0..];
                                                let acc = if stride == 1 {
                                                    dot(&grow[ox_lo..ox_hi], &xrow[..len])
                                                } else {
                                                    let mut s = T::zero();
                                                    for (idx, &gi) in
                                                        grow[ox_lo..ox_hi].iter().enumerate()
                                                    {
                                                        s = s + gi * xrow[idx * stride];
                                                    }
                                                    s
                                                };
                                                let wi = wbase + ky * kw + kx;
                                                grads[w.0][wi] = grads[w.0][wi] + acc;
                                            }
                                            if need_x {
                                                let wk = wv[wbase + ky * kw + kx];
                                                let dx = &mut grads[x.0][xrow_at + x0..];
                                                if stride == 1 {
                                                    axpy_scaled(
                                                        &mut dx[..len],
                                                        &grow[ox_lo..ox_hi],
                                                        wk,
                                                    );
                                                } else {
                                                    for (idx, &gi) in
                                                        grow[ox_lo..ox_hi].iter().enumerate()
                                                    {
                                                        dx[idx * stride] =
                                                            dx[idx * stride] + wk * gi;
                                                    }
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }

            Op::AvgPool { x, out_h, out_w } => {
                if self.needs(*x) {
                    let sx = &self.val(*x).shape;
                    let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
                    let (ch, cw) = (h / out_h, w / out_w);
                    let cell = T::from_usize(ch * cw).unwrap();
                    let da = &mut grads[x.0];
                    for nc in 0..n * c {
                        for oy in 0..*out_h {
                            for ox in 0..*out_w {
                                let gi = g[nc * out_h * out_w + oy * out_w + ox] / cell;
                                for dy in 0..ch {
                                    for dx in 0..cw {
                                        let idx = nc * h * w + (oy * ch + dy) * w + (ox * cw + dx);
                                        da[idx] = da[idx] + gi;
                                    }
                                }
                            }
                        }
                    }
                }
            }

            Op::Fft2dMag {
                x,
                pad_h,
                pad_w,
                re,
                im,
            } => {
                if self.needs(*x) {
                    let sx = &self.val(*x).shape;
                    let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
                    let plane = pad_h * pad_w;
                    let mag = &self.nodes[i].value.data;
                    let da = &mut grads[x.0];
                    for nc in 0..n * c {
                        // cotangent on the spectrum, conjugated for the
                        // adjoint-through-forward-FFT trick
                        let mut wr = vec![T::zero(); plane];
                        let mut wi = vec![T::zero(); plane];
                        for y in 0..h {
                            for xq in 0..w {
                                let mg = mag[nc * h * w + y * w + xq];
                                if mg <= T::zero() {
                                    continue;
                                }
                                let gi = g[nc * h * w + y * w + xq];
                                let rr = re[nc * plane + y * pad_w + xq];
                                let ii = im[nc * plane + y * pad_w + xq];
                                wr[y * pad_w + xq] = gi * rr / mg;
                                wi[y * pad_w + xq] = -(gi * ii / mg);
                            }
                        }
                        spectral::fft2_inplace(&mut wr, &mut wi, *pad_h, *pad_w);
                        for y in 0..h {
                            for xq in 0..w {
                                let idx = nc * h * w + y * w + xq;
                                da[idx] = da[idx] + wr[y * pad_w + xq];
                            }
                        }
                    }
                }
            }

            Op::CrossEntropy { logits, labels } => {
                if self.needs(*logits) {
                    let sl = &self.val(*logits).shape;
                    let (n, c) = (sl[0], sl[1]);
                    let lv = &self.val(*logits).data;
                    let bn = T::from_usize(n).unwrap();
                    let g0 = g[0];
                    let dl = &mut grads[logits.0];
                    for (r, &label) in labels.iter().enumerate() {
                        let row = &lv[r * c..(r + 1) * c];
                        let mut mx = T::neg_infinity();
                        for &v in row {
                            mx = mx.max(v);
                        }
                        let mut denom = T::zero();
                        for &v in row {
                            denom = denom + (v - mx).exp();
                        }
                        for j in 0..c {
                            let p = (row[j] - mx).exp() / denom;
                            let onehot = if j == label { T::one() } else { T::zero() };
                            dl[r * c + j] = dl[r * c + j] + g0 * (p - onehot) / bn;
                        }
                    }
                }
            }
        }
    }
}
