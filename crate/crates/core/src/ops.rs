//! Raw numeric kernels behind the tape primitives.
//!
//! Everything here operates on flat row-major buffers plus shapes; the tape
//! in `graph.rs` owns op dispatch and gradient bookkeeping.

use crate::error::{Error, Result};
use crate::tensor::{broadcast_shapes, Scalar, Tensor};

// ── elementwise with broadcasting ────────────────────────────────────

/// Apply `f` elementwise over broadcast operands.
pub fn binary_broadcast<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let out_shape = broadcast_shapes(a.shape(), b.shape())?;
    // Fast path: identical shapes.
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(out_shape, data);
    }
    // Fast path: b is a contiguous trailing block of a (e.g. bias [d] against [B,N,d]).
    if out_shape == a.shape() && is_suffix(b.shape(), a.shape()) {
        let bn = b.numel();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % bn]))
            .collect();
        return Tensor::new(out_shape, data);
    }
    if out_shape == b.shape() && is_suffix(a.shape(), b.shape()) {
        let an = a.numel();
        let data = b
            .data()
            .iter()
            .enumerate()
            .map(|(i, &y)| f(a.data()[i % an], y))
            .collect();
        return Tensor::new(out_shape, data);
    }
    // General case: coordinate walk.
    let numel: usize = out_shape.iter().product();
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let mut data = Vec::with_capacity(numel);
    let mut coords = vec![0usize; out_shape.len()];
    for _ in 0..numel {
        let (mut ia, mut ib) = (0usize, 0usize);
        for (d, &c) in coords.iter().enumerate() {
            ia += c * sa[d];
            ib += c * sb[d];
        }
        data.push(f(a.data()[ia], b.data()[ib]));
        bump(&mut coords, &out_shape);
    }
    Tensor::new(out_shape, data)
}

/// Sum `grad` (shaped `grad_shape`) down to `target_shape`, undoing broadcast.
pub fn reduce_to_shape<T: Scalar>(grad: &Tensor<T>, target_shape: &[usize]) -> Tensor<T> {
    if grad.shape() == target_shape {
        return grad.clone();
    }
    // Fast path: target is a contiguous trailing block.
    if is_suffix(target_shape, grad.shape()) {
        let tn: usize = target_shape.iter().product();
        let mut out = vec![T::zero(); tn];
        for (i, &g) in grad.data().iter().enumerate() {
            out[i % tn] = out[i % tn] + g;
        }
        return Tensor::new(target_shape.to_vec(), out).expect("suffix reduce");
    }
    let rank = grad.rank();
    let mut padded = vec![1usize; rank];
    let off = rank - target_shape.len();
    padded[off..].copy_from_slice(target_shape);
    let tstrides = shape_strides(&padded);
    let tn: usize = target_shape.iter().product();
    let mut out = vec![T::zero(); tn];
    let mut coords = vec![0usize; rank];
    for &g in grad.data() {
        let mut ti = 0usize;
        for (d, &c) in coords.iter().enumerate() {
            if padded[d] != 1 {
                ti += c * tstrides[d];
            }
        }
        out[ti] = out[ti] + g;
        bump(&mut coords, grad.shape());
    }
    Tensor::new(target_shape.to_vec(), out).expect("broadcast reduce")
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn shape_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides of `shape` right-aligned into `out_shape`, zero where broadcast.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let strides = shape_strides(shape);
    let off = out_shape.len() - shape.len();
    let mut out = vec![0usize; out_shape.len()];
    for i in 0..shape.len() {
        out[off + i] = if shape[i] == 1 { 0 } else { strides[i] };
    }
    out
}

fn bump(coords: &mut [usize], shape: &[usize]) {
    for d in (0..coords.len()).rev() {
        coords[d] += 1;
        if coords[d] < shape[d] {
            return;
        }
        coords[d] = 0;
    }
}

// ── matmul ───────────────────────────────────────────────────────────

/// `c += a · b` for row-major blocks: a `[m,k]`, b `[k,n]`, c `[m,n]`.
pub fn mm_nn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv = *cv + s * bv;
            }
        }
    }
}

/// `c += a · bᵀ`: a `[m,n]`, b `[k,n]`, c `[m,k]`.
pub fn mm_nt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut s = T::zero();
            for (&av, &bv) in arow.iter().zip(brow.iter()) {
                s = s + av * bv;
            }
            c[i * k + j] = c[i * k + j] + s;
        }
    }
}

/// `c += aᵀ · b`: a `[m,k]`, b `[m,n]`, c `[k,n]`.
pub fn mm_tn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv = *cv + s * bv;
            }
        }
    }
}

pub struct MatmulPlan {
    pub out_shape: Vec<usize>,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// (a offset, b offset) per output batch element, broadcast-aware.
    pub batches: Vec<(usize, usize)>,
}

/// Shape/offset plan for batched matmul with broadcast leading dims.
pub fn matmul_plan(a_shape: &[usize], b_shape: &[usize]) -> Result<MatmulPlan> {
    if a_shape.len() < 2 || b_shape.len() < 2 {
        return Err(Error::shape(format!(
            "matmul needs rank >= 2 operands, got {a_shape:?} x {b_shape:?}"
        )));
    }
    let (m, ka) = (a_shape[a_shape.len() - 2], a_shape[a_shape.len() - 1]);
    let (kb, n) = (b_shape[b_shape.len() - 2], b_shape[b_shape.len() - 1]);
    if ka != kb {
        return Err(Error::shape(format!(
            "matmul inner dims differ: {a_shape:?} x {b_shape:?}"
        )));
    }
    let a_batch = &a_shape[..a_shape.len() - 2];
    let b_batch = &b_shape[..b_shape.len() - 2];
    let batch = broadcast_shapes(a_batch, b_batch)
        .map_err(|_| Error::shape(format!("matmul batch dims differ: {a_shape:?} x {b_shape:?}")))?;
    let sa = broadcast_strides(a_batch, &batch);
    let sb = broadcast_strides(b_batch, &batch);
    let count: usize = batch.iter().product();
    let mut batches = Vec::with_capacity(count);
    let mut coords = vec![0usize; batch.len()];
    for _ in 0..count {
        let (mut ia, mut ib) = (0usize, 0usize);
        for (d, &c) in coords.iter().enumerate() {
            ia += c * sa[d];
            ib += c * sb[d];
        }
        batches.push((ia * m * ka, ib * kb * n));
        bump(&mut coords, &batch);
    }
    let mut out_shape = batch;
    out_shape.push(m);
    out_shape.push(n);
    Ok(MatmulPlan {
        out_shape,
        m,
        k: ka,
        n,
        batches,
    })
}

pub fn matmul_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let plan = matmul_plan(a.shape(), b.shape())?;
    let mut out = Tensor::zeros(&plan.out_shape);
    let block = plan.m * plan.n;
    for (bi, &(ao, bo)) in plan.batches.iter().enumerate() {
        mm_nn_acc(
            &a.data()[ao..ao + plan.m * plan.k],
            &b.data()[bo..bo + plan.k * plan.n],
            &mut out.data_mut()[bi * block..(bi + 1) * block],
            plan.m,
            plan.k,
            plan.n,
        );
    }
    Ok(out)
}

/// Gradients of batched matmul; accumulates directly into the operand slabs
/// so broadcast batch dims reduce as they should.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let plan = matmul_plan(a.shape(), b.shape())?;
    let mut da = Tensor::zeros(a.shape());
    let mut db = Tensor::zeros(b.shape());
    let block = plan.m * plan.n;
    for (bi, &(ao, bo)) in plan.batches.iter().enumerate() {
        let g = &grad_out.data()[bi * block..(bi + 1) * block];
        // dA += g · Bᵀ
        mm_nt_acc(
            g,
            &b.data()[bo..bo + plan.k * plan.n],
            &mut da.data_mut()[ao..ao + plan.m * plan.k],
            plan.m,
            plan.n,
            plan.k,
        );
        // dB += Aᵀ · g
        mm_tn_acc(
            &a.data()[ao..ao + plan.m * plan.k],
            g,
            &mut db.data_mut()[bo..bo + plan.k * plan.n],
            plan.m,
            plan.k,
            plan.n,
        );
    }
    Ok((da, db))
}

// ── row-wise ops over the last axis ──────────────────────────────────

pub fn last_dim(shape: &[usize]) -> usize {
    *shape.last().expect("non-empty shape")
}

pub fn softmax_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = last_dim(x.shape());
    let mut out = vec![T::zero(); x.numel()];
    for (row_in, row_out) in x.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mut mx = row_in[0];
        for &v in row_in {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = T::zero();
        for (o, &v) in row_out.iter_mut().zip(row_in.iter()) {
            *o = (v - mx).exp();
            sum = sum + *o;
        }
        for o in row_out.iter_mut() {
            *o = *o / sum;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("softmax shape")
}

/// dX for softmax given the forward output `y`.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let d = last_dim(y.shape());
    let mut out = vec![T::zero(); y.numel()];
    for ((row_y, row_g), row_o) in y
        .data()
        .chunks_exact(d)
        .zip(grad.data().chunks_exact(d))
        .zip(out.chunks_exact_mut(d))
    {
        let mut dot = T::zero();
        for (&yv, &gv) in row_y.iter().zip(row_g.iter()) {
            dot = dot + yv * gv;
        }
        for ((o, &yv), &gv) in row_o.iter_mut().zip(row_y.iter()).zip(row_g.iter()) {
            *o = yv * (gv - dot);
        }
    }
    Tensor::new(y.shape().to_vec(), out).expect("softmax grad shape")
}

pub fn log_softmax_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = last_dim(x.shape());
    let mut out = vec![T::zero(); x.numel()];
    for (row_in, row_out) in x.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mut mx = row_in[0];
        for &v in row_in {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = T::zero();
        for &v in row_in {
            sum = sum + (v - mx).exp();
        }
        let lse = mx + sum.ln();
        for (o, &v) in row_out.iter_mut().zip(row_in.iter()) {
            *o = v - lse;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("log_softmax shape")
}

/// dX for log-softmax given forward output `y`: `g - exp(y) * sum(g)`.
pub fn log_softmax_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let d = last_dim(y.shape());
    let mut out = vec![T::zero(); y.numel()];
    for ((row_y, row_g), row_o) in y
        .data()
        .chunks_exact(d)
        .zip(grad.data().chunks_exact(d))
        .zip(out.chunks_exact_mut(d))
    {
        let mut gsum = T::zero();
        for &gv in row_g {
            gsum = gsum + gv;
        }
        for ((o, &yv), &gv) in row_o.iter_mut().zip(row_y.iter()).zip(row_g.iter()) {
            *o = gv - yv.exp() * gsum;
        }
    }
    Tensor::new(y.shape().to_vec(), out).expect("log_softmax grad shape")
}

/// Normalize the last axis to zero mean / unit variance (no affine part).
/// Returns the output plus per-row `(mean, rstd)` for the backward rule.
pub fn layer_norm_forward<T: Scalar>(x: &Tensor<T>, eps: T) -> (Tensor<T>, Vec<(T, T)>) {
    let d = last_dim(x.shape());
    let dn = T::of(d as f64);
    let mut out = vec![T::zero(); x.numel()];
    let mut stats = Vec::with_capacity(x.numel() / d);
    for (row_in, row_out) in x.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mut mean = T::zero();
        for &v in row_in {
            mean = mean + v;
        }
        mean = mean / dn;
        let mut var = T::zero();
        for &v in row_in {
            let c = v - mean;
            var = var + c * c;
        }
        var = var / dn;
        let rstd = T::one() / (var + eps).sqrt();
        for (o, &v) in row_out.iter_mut().zip(row_in.iter()) {
            *o = (v - mean) * rstd;
        }
        stats.push((mean, rstd));
    }
    (
        Tensor::new(x.shape().to_vec(), out).expect("layer_norm shape"),
        stats,
    )
}

pub fn layer_norm_backward<T: Scalar>(
    y: &Tensor<T>,
    grad: &Tensor<T>,
    stats: &[(T, T)],
) -> Tensor<T> {
    let d = last_dim(y.shape());
    let dn = T::of(d as f64);
    let mut out = vec![T::zero(); y.numel()];
    for (((row_y, row_g), row_o), &(_, rstd)) in y
        .data()
        .chunks_exact(d)
        .zip(grad.data().chunks_exact(d))
        .zip(out.chunks_exact_mut(d))
        .zip(stats.iter())
    {
        let mut gsum = T::zero();
        let mut gysum = T::zero();
        for (&gv, &yv) in row_g.iter().zip(row_y.iter()) {
            gsum = gsum + gv;
            gysum = gysum + gv * yv;
        }
        let gmean = gsum / dn;
        let gymean = gysum / dn;
        for ((o, &gv), &yv) in row_o.iter_mut().zip(row_g.iter()).zip(row_y.iter()) {
            *o = rstd * (gv - gmean - yv * gymean);
        }
    }
    Tensor::new(y.shape().to_vec(), out).expect("layer_norm grad shape")
}

// ── axis reductions ──────────────────────────────────────────────────

/// Sum along `axis`, keeping the axis with extent 1.
pub fn sum_axis_forward<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::shape(format!(
            "axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    let mut out_shape = x.shape().to_vec();
    let alen = out_shape[axis];
    out_shape[axis] = 1;
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer: usize = x.shape()[..axis].iter().product();
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for a in 0..alen {
            let base = (o * alen + a) * inner;
            let obase = o * inner;
            for i in 0..inner {
                out[obase + i] = out[obase + i] + x.data()[base + i];
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Broadcast `grad` (axis extent 1) back across the axis of `in_shape`.
pub fn sum_axis_backward<T: Scalar>(grad: &Tensor<T>, in_shape: &[usize], axis: usize) -> Tensor<T> {
    let alen = in_shape[axis];
    let inner: usize = in_shape[axis + 1..].iter().product();
    let outer: usize = in_shape[..axis].iter().product();
    let mut out = vec![T::zero(); outer * alen * inner];
    for o in 0..outer {
        let gbase = o * inner;
        for a in 0..alen {
            let base = (o * alen + a) * inner;
            out[base..base + inner].copy_from_slice(&grad.data()[gbase..gbase + inner]);
        }
    }
    Tensor::new(in_shape.to_vec(), out).expect("sum_axis grad shape")
}

// ── data movement ────────────────────────────────────────────────────

/// Select rows along `axis`: `out[..., i, ...] = x[..., idx[i], ...]`.
pub fn index_select_forward<T: Scalar>(
    x: &Tensor<T>,
    axis: usize,
    idx: &[usize],
) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::shape(format!(
            "axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    let alen = x.shape()[axis];
    if let Some(&bad) = idx.iter().find(|&&i| i >= alen) {
        return Err(Error::shape(format!(
            "index {bad} out of range for axis {axis} of shape {:?}",
            x.shape()
        )));
    }
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer: usize = x.shape()[..axis].iter().product();
    let mut out_shape = x.shape().to_vec();
    out_shape[axis] = idx.len();
    let mut out = Vec::with_capacity(outer * idx.len() * inner);
    for o in 0..outer {
        for &src in idx {
            let base = (o * alen + src) * inner;
            out.extend_from_slice(&x.data()[base..base + inner]);
        }
    }
    Tensor::new(out_shape, out)
}

/// Scatter-add of index_select: repeated indices accumulate.
pub fn index_select_backward<T: Scalar>(
    grad: &Tensor<T>,
    in_shape: &[usize],
    axis: usize,
    idx: &[usize],
) -> Tensor<T> {
    let alen = in_shape[axis];
    let inner: usize = in_shape[axis + 1..].iter().product();
    let outer: usize = in_shape[..axis].iter().product();
    let mut out = vec![T::zero(); outer * alen * inner];
    for o in 0..outer {
        for (j, &src) in idx.iter().enumerate() {
            let gbase = (o * idx.len() + j) * inner;
            let base = (o * alen + src) * inner;
            for i in 0..inner {
                out[base + i] = out[base + i] + grad.data()[gbase + i];
            }
        }
    }
    Tensor::new(in_shape.to_vec(), out).expect("index_select grad shape")
}

pub fn slice_forward<T: Scalar>(
    x: &Tensor<T>,
    axis: usize,
    start: usize,
    end: usize,
) -> Result<Tensor<T>> {
    if axis >= x.rank() || start >= end || end > x.shape()[axis] {
        return Err(Error::shape(format!(
            "slice [{start}..{end}) on axis {axis} invalid for shape {:?}",
            x.shape()
        )));
    }
    let idx: Vec<usize> = (start..end).collect();
    index_select_forward(x, axis, &idx)
}

pub fn slice_backward<T: Scalar>(
    grad: &Tensor<T>,
    in_shape: &[usize],
    axis: usize,
    start: usize,
    end: usize,
) -> Tensor<T> {
    let idx: Vec<usize> = (start..end).collect();
    index_select_backward(grad, in_shape, axis, &idx)
}

pub fn concat_forward<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat of zero tensors".to_string()))?;
    if axis >= first.rank() {
        return Err(Error::shape(format!(
            "concat axis {axis} out of range for shape {:?}",
            first.shape()
        )));
    }
    let mut axis_total = 0usize;
    for p in parts {
        if p.rank() != first.rank() {
            return Err(Error::shape(format!(
                "concat rank mismatch: {:?} vs {:?}",
                first.shape(),
                p.shape()
            )));
        }
        for d in 0..first.rank() {
            if d != axis && p.shape()[d] != first.shape()[d] {
                return Err(Error::shape(format!(
                    "concat extent mismatch on dim {d}: {:?} vs {:?}",
                    first.shape(),
                    p.shape()
                )));
            }
        }
        axis_total += p.shape()[axis];
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = axis_total;
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let outer: usize = first.shape()[..axis].iter().product();
    let mut out = Vec::with_capacity(outer * axis_total * inner);
    for o in 0..outer {
        for p in parts {
            let pa = p.shape()[axis];
            let base = o * pa * inner;
            out.extend_from_slice(&p.data()[base..base + pa * inner]);
        }
    }
    Tensor::new(out_shape, out)
}

/// Split concat grad back into per-input tensors.
pub fn concat_backward<T: Scalar>(
    grad: &Tensor<T>,
    in_shapes: &[Vec<usize>],
    axis: usize,
) -> Vec<Tensor<T>> {
    let inner: usize = in_shapes[0][axis + 1..].iter().product();
    let outer: usize = in_shapes[0][..axis].iter().product();
    let total_axis: usize = in_shapes.iter().map(|s| s[axis]).sum();
    let mut outs: Vec<Tensor<T>> = in_shapes.iter().map(|s| Tensor::zeros(s)).collect();
    for o in 0..outer {
        let mut offset = 0usize;
        for (pi, shape) in in_shapes.iter().enumerate() {
            let pa = shape[axis];
            let gbase = (o * total_axis + offset) * inner;
            let obase = o * pa * inner;
            outs[pi].data_mut()[obase..obase + pa * inner]
                .copy_from_slice(&grad.data()[gbase..gbase + pa * inner]);
            offset += pa;
        }
    }
    outs
}

pub fn permute_forward<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::shape(format!(
            "invalid permutation {perm:?} for shape {:?}",
            x.shape()
        )));
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let in_strides = x.strides();
    let mut out = Vec::with_capacity(x.numel());
    let mut coords = vec![0usize; rank];
    for _ in 0..x.numel() {
        let mut src = 0usize;
        for (d, &c) in coords.iter().enumerate() {
            src += c * in_strides[perm[d]];
        }
        out.push(x.data()[src]);
        bump(&mut coords, &out_shape);
    }
    Tensor::new(out_shape, out)
}

pub fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

// ── Kronecker product ────────────────────────────────────────────────

/// Block matrix with block `(i,j) = a[i,j] * b`.
pub fn kron_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::shape(format!(
            "kronecker needs matrices, got {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (p, q) = (a.shape()[0], a.shape()[1]);
    let (r, s) = (b.shape()[0], b.shape()[1]);
    let mut out = vec![T::zero(); p * r * q * s];
    let cols = q * s;
    for i in 0..p {
        for j in 0..q {
            let av = a.data()[i * q + j];
            for k in 0..r {
                let orow = (i * r + k) * cols + j * s;
                let brow = k * s;
                for l in 0..s {
                    out[orow + l] = av * b.data()[brow + l];
                }
            }
        }
    }
    Tensor::new(vec![p * r, q * s], out)
}

pub fn kron_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (p, q) = (a.shape()[0], a.shape()[1]);
    let (r, s) = (b.shape()[0], b.shape()[1]);
    let cols = q * s;
    let mut da = Tensor::zeros(a.shape());
    let mut db = Tensor::zeros(b.shape());
    for i in 0..p {
        for j in 0..q {
            let av = a.data()[i * q + j];
            let mut acc = T::zero();
            for k in 0..r {
                let grow = (i * r + k) * cols + j * s;
                let brow = k * s;
                for l in 0..s {
                    let g = grad.data()[grow + l];
                    acc = acc + g * b.data()[brow + l];
                    db.data_mut()[brow + l] = db.data_mut()[brow + l] + av * g;
                }
            }
            da.data_mut()[i * q + j] = acc;
        }
    }
    (da, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], vals: &[f64]) -> Tensor<f64> {
        Tensor::from_f64_slice(shape, vals).unwrap()
    }

    #[test]
    fn matmul_hand_case() {
        // [[1,2]] x [[3],[4]] = [[11]]
        let a = t64(&[1, 2], &[1.0, 2.0]);
        let b = t64(&[2, 1], &[3.0, 4.0]);
        let c = matmul_forward(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_batched_broadcast() {
        // [2,2,3] x [3,2]: rhs broadcast over the batch.
        let a = t64(&[2, 2, 3], &(0..12).map(|i| i as f64).collect::<Vec<_>>());
        let b = t64(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let c = matmul_forward(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 2, 2]);
        // row [0,1,2] -> [0*1+1*0+2*1, 0+1+2] = [2, 3]
        assert_eq!(&c.data()[..2], &[2.0, 3.0]);
    }

    #[test]
    fn matmul_rejects_bad_inner_dim() {
        let a = t64(&[2, 3], &[0.0; 6]);
        let b = t64(&[2, 2], &[0.0; 4]);
        let err = matmul_forward(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn kron_block_expansion() {
        // a=[[1,2],[3,4]], b=[[0,1],[1,0]] from the hand example.
        let a = t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t64(&[2, 2], &[0.0, 1.0, 1.0, 0.0]);
        let w = kron_forward(&a, &b).unwrap();
        assert_eq!(w.shape(), &[4, 4]);
        assert_eq!(
            w.data(),
            &[0.0, 1.0, 0.0, 2.0, 1.0, 0.0, 2.0, 0.0, 0.0, 3.0, 0.0, 4.0, 3.0, 0.0, 4.0, 0.0]
        );
    }

    #[test]
    fn kron_identity_scalar() {
        let a = t64(&[1, 1], &[1.0]);
        let b = t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = kron_forward(&a, &b).unwrap();
        assert_eq!(w.shape(), &[2, 3]);
        assert_eq!(w.data(), b.data());
    }

    /// Independent quadruple-loop oracle over (i,j,k,l) for the block matrix.
    fn kron_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (p, q) = (a.shape()[0], a.shape()[1]);
        let (r, s) = (b.shape()[0], b.shape()[1]);
        let mut out = Tensor::<f64>::zeros(&[p * r, q * s]);
        for i in 0..p {
            for j in 0..q {
                for k in 0..r {
                    for l in 0..s {
                        let row = i * r + k;
                        let col = j * s + l;
                        out.data_mut()[row * (q * s) + col] =
                            a.data()[i * q + j] * b.data()[k * s + l];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn kron_matches_oracle_on_random_shapes() {
        let mut rng = crate::rng::Rng::seeded(11);
        // Includes the 3x3 (x) 32x8 case.
        let shapes = [(3, 3, 32, 8), (2, 5, 4, 3), (1, 7, 6, 1), (4, 2, 2, 4)];
        for &(p, q, r, s) in &shapes {
            let mut a = Tensor::<f64>::zeros(&[p, q]);
            let mut b = Tensor::<f64>::zeros(&[r, s]);
            rng.fill_uniform(a.data_mut(), -1.0, 1.0);
            rng.fill_uniform(b.data_mut(), -1.0, 1.0);
            let got = kron_forward(&a, &b).unwrap();
            let want = kron_oracle(&a, &b);
            assert_eq!(got.shape(), want.shape());
            for (g, w) in got.data().iter().zip(want.data().iter()) {
                assert_eq!(g.to_bits(), w.to_bits());
            }
        }
    }

    #[test]
    fn kron_rejects_non_matrix() {
        let a = t64(&[2], &[1.0, 2.0]);
        let b = t64(&[2, 2], &[0.0; 4]);
        assert!(kron_forward(&a, &b).is_err());
    }

    #[test]
    fn index_select_roundtrip_scatter() {
        let x = t64(&[1, 3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let up = index_select_forward(&x, 1, &[0, 0, 1, 2]).unwrap();
        assert_eq!(up.shape(), &[1, 4, 2]);
        assert_eq!(up.data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let g = Tensor::<f64>::ones(&[1, 4, 2]);
        let back = index_select_backward(&g, &[1, 3, 2], 1, &[0, 0, 1, 2]);
        // Row 0 was selected twice, so its gradient doubles.
        assert_eq!(back.data(), &[2.0, 2.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn concat_and_split_are_inverse() {
        let a = t64(&[2, 1], &[1.0, 2.0]);
        let b = t64(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let c = concat_forward(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let parts = concat_backward(&c, &[vec![2, 1], vec![2, 2]], 1);
        assert_eq!(parts[0].data(), a.data());
        assert_eq!(parts[1].data(), b.data());
    }

    #[test]
    fn permute_transposes() {
        let x = t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = permute_forward(&x, &[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        // Zero-variance symmetry: constant vector normalizes to zeros
        // (epsilon keeps the denominator finite).
        let x = t64(&[1, 4], &[3.0, 3.0, 3.0, 3.0]);
        let (y, _) = layer_norm_forward(&x, 1e-5);
        for &v in y.data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = t64(&[2, 3], &[0.5, -1.0, 2.0, 3.0, 3.0, 3.0]);
        let y = softmax_forward(&x);
        for row in y.data().chunks_exact(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_axis_keeps_dim() {
        let x = t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = sum_axis_forward(&x, 1).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert_eq!(y.data(), &[6.0, 15.0]);
        let x2 = sum_axis_backward(&y, &[2, 3], 1);
        assert_eq!(x2.data(), &[6.0, 6.0, 6.0, 15.0, 15.0, 15.0]);
    }

    #[test]
    fn broadcast_binary_suffix_path() {
        let a = t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t64(&[3], &[10.0, 20.0, 30.0]);
        let c = binary_broadcast(&a, &b, |x, y| x + y).unwrap();
        assert_eq!(c.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let r = reduce_to_shape(&c, &[3]);
        assert_eq!(r.data(), &[25.0, 47.0, 69.0]);
    }
}
