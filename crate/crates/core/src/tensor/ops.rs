//! Tensor operations with closed-form gradients.
//!
//! Binary elementwise ops broadcast with numpy semantics (shapes aligned at
//! the trailing axes, extent-1 axes stretched); their backward passes sum
//! gradients over the broadcast axes. All reductions run in a fixed
//! sequential order so results are reproducible bit for bit.

use super::{numel_of, Tensor};
use crate::error::TensorError;
use crate::scalar::Scalar;

// ── Broadcast helpers ─────────────────────────────────────────────────

fn broadcast_shape(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<Vec<usize>, TensorError> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = dim_from_right(a, rank - 1 - i);
        let db = dim_from_right(b, rank - 1 - i);
        if da != db && da != 1 && db != 1 {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Dimension at distance `d` from the right, 1 past the left edge.
#[inline]
fn dim_from_right(shape: &[usize], d: usize) -> usize {
    if d < shape.len() {
        shape[shape.len() - 1 - d]
    } else {
        1
    }
}

/// Strides of `shape` within a broadcast target of rank `rank`, with 0 for
/// stretched axes. Index order matches the target's axes.
fn broadcast_strides(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for d in 0..shape.len() {
        let axis = shape.len() - 1 - d;
        let target_axis = rank - 1 - d;
        strides[target_axis] = if shape[axis] == 1 { 0 } else { acc };
        acc *= shape[axis];
    }
    strides
}

/// Iterate a broadcast output shape, yielding (out_idx, a_idx, b_idx).
fn for_each_broadcast(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    let a_str = broadcast_strides(a_shape, rank);
    let b_str = broadcast_strides(b_shape, rank);
    let n = numel_of(out_shape);
    if rank == 0 {
        if n == 1 {
            f(0, 0, 0);
        }
        return;
    }
    let mut coords = vec![0usize; rank];
    let mut ai = 0usize;
    let mut bi = 0usize;
    for oi in 0..n {
        f(oi, ai, bi);
        // Increment multi-index, updating a/b offsets incrementally.
        for axis in (0..rank).rev() {
            coords[axis] += 1;
            ai += a_str[axis];
            bi += b_str[axis];
            if coords[axis] < out_shape[axis] {
                break;
            }
            ai -= a_str[axis] * out_shape[axis];
            bi -= b_str[axis] * out_shape[axis];
            coords[axis] = 0;
        }
    }
}

// ── Elementwise binary ops ────────────────────────────────────────────

macro_rules! binary_op {
    ($name:ident, $opname:literal, $fwd:expr, $bwd_a:expr, $bwd_b:expr) => {
        pub fn $name(&self, other: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
            let out_shape = broadcast_shape($opname, self.shape(), other.shape())?;
            let a = self.data();
            let b = other.data();
            let mut data = vec![S::zero(); numel_of(&out_shape)];
            for_each_broadcast(&out_shape, self.shape(), other.shape(), |oi, ai, bi| {
                data[oi] = $fwd(a[ai], b[bi]);
            });
            drop(a);
            drop(b);
            let pa = self.clone();
            let pb = other.clone();
            let oshape = out_shape.clone();
            let backward = move |g: &[S]| {
                let a = pa.data();
                let b = pb.data();
                let mut da = vec![S::zero(); a.len()];
                let mut db = vec![S::zero(); b.len()];
                for_each_broadcast(&oshape, pa.shape(), pb.shape(), |oi, ai, bi| {
                    da[ai] += $bwd_a(g[oi], a[ai], b[bi]);
                    db[bi] += $bwd_b(g[oi], a[ai], b[bi]);
                });
                drop(a);
                drop(b);
                pa.accumulate_grad(&da);
                pb.accumulate_grad(&db);
            };
            Ok(Tensor::from_op(
                out_shape,
                data,
                vec![self.clone(), other.clone()],
                backward,
            ))
        }
    };
}

impl<S: Scalar> Tensor<S> {
    binary_op!(
        add,
        "add",
        |a: S, b: S| a + b,
        |g: S, _a: S, _b: S| g,
        |g: S, _a: S, _b: S| g
    );

    binary_op!(
        sub,
        "sub",
        |a: S, b: S| a - b,
        |g: S, _a: S, _b: S| g,
        |g: S, _a: S, _b: S| -g
    );

    binary_op!(
        mul,
        "mul",
        |a: S, b: S| a * b,
        |g: S, _a: S, b: S| g * b,
        |g: S, a: S, _b: S| g * a
    );

    // Elementwise max; ties route the gradient to the left operand.
    binary_op!(
        maximum,
        "maximum",
        |a: S, b: S| if a >= b { a } else { b },
        |g: S, a: S, b: S| if a >= b { g } else { S::zero() },
        |g: S, a: S, b: S| if a < b { g } else { S::zero() }
    );

    // ── Scalar ops ────────────────────────────────────────────────────

    pub fn add_scalar(&self, c: S) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&v| v + c).collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g| {
            p.accumulate_grad(g);
        })
    }

    pub fn mul_scalar(&self, c: S) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&v| v * c).collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g| {
            let contrib: Vec<S> = g.iter().map(|&gi| gi * c).collect();
            p.accumulate_grad(&contrib);
        })
    }

    pub fn neg(&self) -> Tensor<S> {
        self.mul_scalar(-S::one())
    }

    // ── Elementwise unary ops ─────────────────────────────────────────

    fn unary(&self, f: impl Fn(S) -> S, df: impl Fn(S) -> S + 'static) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&v| f(v)).collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g| {
            let x = p.data();
            let contrib: Vec<S> = g.iter().zip(x.iter()).map(|(&gi, &xi)| gi * df(xi)).collect();
            drop(x);
            p.accumulate_grad(&contrib);
        })
    }

    pub fn relu(&self) -> Tensor<S> {
        self.unary(
            |x| if x > S::zero() { x } else { S::zero() },
            |x| if x > S::zero() { S::one() } else { S::zero() },
        )
    }

    /// Numerically stable softplus ln(1 + e^x) with sigmoid derivative.
    pub fn softplus(&self) -> Tensor<S> {
        fn sp<S: Scalar>(x: S) -> S {
            let zero = S::zero();
            if x > zero {
                x + (-x).exp().ln_1p()
            } else {
                x.exp().ln_1p()
            }
        }
        fn sig<S: Scalar>(x: S) -> S {
            let one = S::one();
            if x >= S::zero() {
                one / (one + (-x).exp())
            } else {
                let e = x.exp();
                e / (one + e)
            }
        }
        self.unary(sp::<S>, sig::<S>)
    }

    /// GELU, tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
    pub fn gelu(&self) -> Tensor<S> {
        fn consts<S: Scalar>() -> (S, S) {
            (
                S::from_f64(0.797_884_560_802_865_4), // sqrt(2/pi)
                S::from_f64(0.044715),
            )
        }
        fn f<S: Scalar>(x: S) -> S {
            let (c, k) = consts::<S>();
            let half = S::from_f64(0.5);
            let u = c * (x + k * x * x * x);
            half * x * (S::one() + u.tanh())
        }
        fn df<S: Scalar>(x: S) -> S {
            let (c, k) = consts::<S>();
            let half = S::from_f64(0.5);
            let three = S::from_f64(3.0);
            let u = c * (x + k * x * x * x);
            let t = u.tanh();
            let sech2 = S::one() - t * t;
            half * (S::one() + t) + half * x * sech2 * c * (S::one() + three * k * x * x)
        }
        self.unary(f::<S>, df::<S>)
    }

    /// Reciprocal square root, used by layer normalization.
    pub fn rsqrt(&self) -> Tensor<S> {
        let half = S::from_f64(0.5);
        self.unary(
            |x| x.sqrt().recip(),
            move |x| -half * x.powf(S::from_f64(-1.5)),
        )
    }

    // ── Reductions ────────────────────────────────────────────────────

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&self) -> Tensor<S> {
        let mut acc = S::zero();
        for &v in self.data().iter() {
            acc += v;
        }
        let p = self.clone();
        Tensor::from_op(vec![], vec![acc], vec![self.clone()], move |g| {
            let contrib = vec![g[0]; p.numel()];
            p.accumulate_grad(&contrib);
        })
    }

    /// Mean of all elements, as a rank-0 scalar.
    pub fn mean(&self) -> Tensor<S> {
        let n = S::from_f64(self.numel() as f64);
        self.sum().mul_scalar(n.recip())
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<S>, TensorError> {
        let shape = self.shape();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(TensorError::InvalidAxis {
                op: "sum_axis",
                axis,
                shape: shape.to_vec(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![S::zero(); outer * inner];
        {
            let x = self.data();
            for o in 0..outer {
                for j in 0..len {
                    let base = (o * len + j) * inner;
                    let obase = o * inner;
                    for i in 0..inner {
                        data[obase + i] += x[base + i];
                    }
                }
            }
        }
        let mut out_shape: Vec<usize> = Vec::with_capacity(shape.len());
        out_shape.extend_from_slice(&shape[..axis]);
        if keepdim {
            out_shape.push(1);
        }
        out_shape.extend_from_slice(&shape[axis + 1..]);
        let p = self.clone();
        let backward = move |g: &[S]| {
            let mut contrib = vec![S::zero(); p.numel()];
            for o in 0..outer {
                for j in 0..len {
                    let base = (o * len + j) * inner;
                    let gbase = o * inner;
                    for i in 0..inner {
                        contrib[base + i] = g[gbase + i];
                    }
                }
            }
            p.accumulate_grad(&contrib);
        };
        Ok(Tensor::from_op(out_shape, data, vec![self.clone()], backward))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<S>, TensorError> {
        let n = S::from_f64(self.shape()[axis.min(self.rank().saturating_sub(1))] as f64);
        Ok(self.sum_axis(axis, keepdim)?.mul_scalar(n.recip()))
    }

    // ── Softmax family ────────────────────────────────────────────────

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<(usize, usize, usize), TensorError> {
        let shape = self.shape();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(TensorError::InvalidAxis {
                op,
                axis,
                shape: shape.to_vec(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        Ok((outer, len, inner))
    }

    /// Softmax along `axis`, stabilized by max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<S>, TensorError> {
        let (outer, len, inner) = self.check_axis("softmax", axis)?;
        let mut data = vec![S::zero(); self.numel()];
        {
            let x = self.data();
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let mut m = x[at(0)];
                    for j in 1..len {
                        if x[at(j)] > m {
                            m = x[at(j)];
                        }
                    }
                    let mut z = S::zero();
                    for j in 0..len {
                        let e = (x[at(j)] - m).exp();
                        data[at(j)] = e;
                        z += e;
                    }
                    let zr = z.recip();
                    for j in 0..len {
                        data[at(j)] = data[at(j)] * zr;
                    }
                }
            }
        }
        let y = data.clone();
        let p = self.clone();
        let backward = move |g: &[S]| {
            // dx = y * (g - sum_j(g_j * y_j)) per slice.
            let mut contrib = vec![S::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let mut dot = S::zero();
                    for j in 0..len {
                        dot += g[at(j)] * y[at(j)];
                    }
                    for j in 0..len {
                        contrib[at(j)] = y[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            p.accumulate_grad(&contrib);
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            backward,
        ))
    }

    /// Log-softmax along `axis` (stable), for cross-entropy.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<S>, TensorError> {
        let (outer, len, inner) = self.check_axis("log_softmax", axis)?;
        let mut data = vec![S::zero(); self.numel()];
        {
            let x = self.data();
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let mut m = x[at(0)];
                    for j in 1..len {
                        if x[at(j)] > m {
                            m = x[at(j)];
                        }
                    }
                    let mut z = S::zero();
                    for j in 0..len {
                        z += (x[at(j)] - m).exp();
                    }
                    let lse = m + z.ln();
                    for j in 0..len {
                        data[at(j)] = x[at(j)] - lse;
                    }
                }
            }
        }
        let y = data.clone();
        let p = self.clone();
        let backward = move |g: &[S]| {
            // dx = g - softmax(x) * sum_j(g_j) per slice.
            let mut contrib = vec![S::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let mut gsum = S::zero();
                    for j in 0..len {
                        gsum += g[at(j)];
                    }
                    for j in 0..len {
                        contrib[at(j)] = g[at(j)] - y[at(j)].exp() * gsum;
                    }
                }
            }
            p.accumulate_grad(&contrib);
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            backward,
        ))
    }

    // ── Matrix multiplication ─────────────────────────────────────────

    /// Matrix product over the trailing two axes; leading (batch) axes
    /// broadcast.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        let (ash, bsh) = (self.shape(), other.shape());
        if ash.len() < 2 || bsh.len() < 2 || ash[ash.len() - 1] != bsh[bsh.len() - 2] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ash.to_vec(),
                rhs: bsh.to_vec(),
            });
        }
        let m = ash[ash.len() - 2];
        let k = ash[ash.len() - 1];
        let n = bsh[bsh.len() - 1];
        let batch_shape = broadcast_shape("matmul", &ash[..ash.len() - 2], &bsh[..bsh.len() - 2])?;
        let batch = numel_of(&batch_shape);
        let rank = batch_shape.len();
        let a_bstr = broadcast_strides(&ash[..ash.len() - 2], rank);
        let b_bstr = broadcast_strides(&bsh[..bsh.len() - 2], rank);

        // Flat batch offsets into a and b (in units of matrices).
        let bshape = batch_shape.clone();
        let batch_offsets = move |bi: usize| -> (usize, usize) {
            let mut rem = bi;
            let mut ao = 0usize;
            let mut bo = 0usize;
            for axis in (0..rank).rev() {
                let c = rem % bshape[axis];
                rem /= bshape[axis];
                ao += c * a_bstr[axis];
                bo += c * b_bstr[axis];
            }
            (ao, bo)
        };
        let batch_offsets_bwd = batch_offsets.clone();

        let mut data = vec![S::zero(); batch * m * n];
        {
            let a = self.data();
            let b = other.data();
            for bi in 0..batch {
                let (ao, bo) = batch_offsets(bi);
                let abase = ao * m * k;
                let bbase = bo * k * n;
                let cbase = bi * m * n;
                for i in 0..m {
                    for p in 0..k {
                        let av = a[abase + i * k + p];
                        if av == S::zero() {
                            continue;
                        }
                        let brow = bbase + p * n;
                        let crow = cbase + i * n;
                        for j in 0..n {
                            data[crow + j] += av * b[brow + j];
                        }
                    }
                }
            }
        }
        let mut out_shape = batch_shape.clone();
        out_shape.push(m);
        out_shape.push(n);

        let pa = self.clone();
        let pb = other.clone();
        let backward = move |g: &[S]| {
            let a = pa.data();
            let b = pb.data();
            let mut da = vec![S::zero(); a.len()];
            let mut db = vec![S::zero(); b.len()];
            for bi in 0..batch {
                let (ao, bo) = batch_offsets_bwd(bi);
                let abase = ao * m * k;
                let bbase = bo * k * n;
                let cbase = bi * m * n;
                // dA += g @ B^T
                for i in 0..m {
                    for j in 0..n {
                        let gv = g[cbase + i * n + j];
                        if gv == S::zero() {
                            continue;
                        }
                        for p in 0..k {
                            da[abase + i * k + p] += gv * b[bbase + p * n + j];
                        }
                    }
                }
                // dB += A^T @ g
                for p in 0..k {
                    for i in 0..m {
                        let av = a[abase + i * k + p];
                        if av == S::zero() {
                            continue;
                        }
                        let grow = cbase + i * n;
                        let drow = bbase + p * n;
                        for j in 0..n {
                            db[drow + j] += av * g[grow + j];
                        }
                    }
                }
            }
            drop(a);
            drop(b);
            pa.accumulate_grad(&da);
            pb.accumulate_grad(&db);
        };
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            backward,
        ))
    }

    // ── Shape ops ─────────────────────────────────────────────────────

    pub fn reshape(&self, new_shape: Vec<usize>) -> Result<Tensor<S>, TensorError> {
        if numel_of(&new_shape) != self.numel() {
            return Err(TensorError::DataLength {
                op: "reshape",
                expected: self.numel(),
                got: numel_of(&new_shape),
                shape: new_shape,
            });
        }
        let data = self.to_vec();
        let p = self.clone();
        Ok(Tensor::from_op(new_shape, data, vec![self.clone()], move |g| {
            p.accumulate_grad(g);
        }))
    }

    /// Permute axes; `perm` must be a permutation of 0..rank.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<S>, TensorError> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::Config {
                op: "permute",
                msg: format!("invalid permutation {:?} for rank {}", perm, rank),
            });
        }
        let shape = self.shape();
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let data = permute_data(&self.data(), shape, perm);
        let inv: Vec<usize> = {
            let mut inv = vec![0usize; rank];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            inv
        };
        let p = self.clone();
        let oshape = out_shape.clone();
        Ok(Tensor::from_op(out_shape, data, vec![self.clone()], move |g| {
            let contrib = permute_data(g, &oshape, &inv);
            p.accumulate_grad(&contrib);
        }))
    }

    /// Swap the trailing two axes.
    pub fn transpose(&self) -> Result<Tensor<S>, TensorError> {
        let rank = self.rank();
        if rank < 2 {
            return Err(TensorError::Config {
                op: "transpose",
                msg: format!("rank {} < 2", rank),
            });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(&perm)
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<S>, TensorError> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(TensorError::InvalidAxis {
                op: "narrow",
                axis,
                shape: shape.to_vec(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let extent = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let mut data = vec![S::zero(); outer * len * inner];
        {
            let x = self.data();
            for o in 0..outer {
                for j in 0..len {
                    let src = (o * extent + start + j) * inner;
                    let dst = (o * len + j) * inner;
                    data[dst..dst + inner].copy_from_slice(&x[src..src + inner]);
                }
            }
        }
        let p = self.clone();
        Ok(Tensor::from_op(out_shape, data, vec![self.clone()], move |g| {
            let mut contrib = vec![S::zero(); p.numel()];
            for o in 0..outer {
                for j in 0..len {
                    let dst = (o * extent + start + j) * inner;
                    let src = (o * len + j) * inner;
                    contrib[dst..dst + inner].copy_from_slice(&g[src..src + inner]);
                }
            }
            p.accumulate_grad(&contrib);
        }))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor<S>], axis: usize) -> Result<Tensor<S>, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Config {
                op: "concat",
                msg: "no tensors".into(),
            });
        }
        let first = parts[0].shape().to_vec();
        if axis >= first.len() {
            return Err(TensorError::InvalidAxis {
                op: "concat",
                axis,
                shape: first,
            });
        }
        let mut total = 0usize;
        for t in parts {
            let sh = t.shape();
            if sh.len() != first.len()
                || sh.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: sh.to_vec(),
                });
            }
            total += sh[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let mut data = vec![S::zero(); outer * total * inner];
        let mut offsets = Vec::with_capacity(parts.len());
        {
            let mut off = 0usize;
            for t in parts {
                let extent = t.shape()[axis];
                offsets.push((off, extent));
                let x = t.data();
                for o in 0..outer {
                    for j in 0..extent {
                        let src = (o * extent + j) * inner;
                        let dst = (o * total + off + j) * inner;
                        data[dst..dst + inner].copy_from_slice(&x[src..src + inner]);
                    }
                }
                off += extent;
            }
        }
        let owned: Vec<Tensor<S>> = parts.iter().map(|t| (*t).clone()).collect();
        let parents = owned.clone();
        Ok(Tensor::from_op(out_shape, data, parents, move |g| {
            for (t, &(off, extent)) in owned.iter().zip(&offsets) {
                let mut contrib = vec![S::zero(); t.numel()];
                for o in 0..outer {
                    for j in 0..extent {
                        let dst = (o * extent + j) * inner;
                        let src = (o * total + off + j) * inner;
                        contrib[dst..dst + inner].copy_from_slice(&g[src..src + inner]);
                    }
                }
                t.accumulate_grad(&contrib);
            }
        }))
    }
}

fn permute_data<S: Scalar>(data: &[S], shape: &[usize], perm: &[usize]) -> Vec<S> {
    let rank = shape.len();
    if rank == 0 {
        return data.to_vec();
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    // Strides of the source tensor.
    let mut src_strides = vec![1usize; rank];
    for i in (0..rank - 1).rev() {
        src_strides[i] = src_strides[i + 1] * shape[i + 1];
    }
    // Stride in the source for each output axis.
    let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let n = data.len();
    let mut out = vec![S::zero(); n];
    let mut coords = vec![0usize; rank];
    let mut si = 0usize;
    for oi in 0..n {
        out[oi] = data[si];
        for axis in (0..rank).rev() {
            coords[axis] += 1;
            si += strides[axis];
            if coords[axis] < out_shape[axis] {
                break;
            }
            si -= strides[axis] * out_shape[axis];
            coords[axis] = 0;
        }
    }
    out
}
