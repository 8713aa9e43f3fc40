use std::sync::Arc;

use rayon::prelude::*;

use super::kernels::{self, dot, gelu, masked_softmax_row};
use super::{Op, Tensor};
use crate::quadtree::{KeySetTable, PoolingMatrix, PAD};
use crate::{HstError, Real, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(HstError::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(HstError::Shape(format!("matmul inner dims {k} vs {k2}")));
        }
        let data = kernels::matmul_nn(self.data(), other.data(), m, k, n);
        Ok(Self::from_op(data, vec![m, n], &[self, other], || Op::MatMul(self.clone(), other.clone())))
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (r, c) = self.dims2("transpose")?;
        let data = kernels::transpose(self.data(), r, c);
        Ok(Self::from_op(data, vec![c, r], &[self], || Op::Transpose(self.clone())))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, other, "add")?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        Ok(Self::from_op(data, self.shape().to_vec(), &[self, other], || Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, other, "sub")?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        Ok(Self::from_op(data, self.shape().to_vec(), &[self, other], || Op::Sub(self.clone(), other.clone())))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, other, "mul")?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        Ok(Self::from_op(data, self.shape().to_vec(), &[self, other], || Op::Mul(self.clone(), other.clone())))
    }

    /// `x + bias` with `bias` broadcast over the rows of matrix `x`.
    pub fn add_row(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c) = self.dims2("add_row")?;
        if bias.numel() != c {
            return Err(HstError::Shape(format!("bias of {} for {c} columns", bias.numel())));
        }
        let b = bias.data();
        let data = self.data().chunks(c).flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y)).collect();
        Ok(Self::from_op(data, self.shape().to_vec(), &[self, bias], || Op::AddRow(self.clone(), bias.clone())))
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v * s).collect();
        Self::from_op(data, self.shape().to_vec(), &[self], || Op::Scale(self.clone(), s))
    }

    pub fn relu(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v.max(T::zero())).collect();
        Self::from_op(data, self.shape().to_vec(), &[self], || Op::Relu(self.clone()))
    }

    pub fn gelu(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&v| gelu(v)).collect();
        Self::from_op(data, self.shape().to_vec(), &[self], || Op::Gelu(self.clone()))
    }

    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum();
        Self::from_op(vec![total], Vec::new(), &[self], || Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor<T> {
        let total: T = self.data().iter().copied().sum();
        let mean = total / T::from_usize_lossy(self.numel().max(1));
        Self::from_op(vec![mean], Vec::new(), &[self], || Op::Mean(self.clone()))
    }

    /// Row-wise layer normalisation followed by the affine `gamma * xhat + beta`.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
        let (r, c) = self.dims2("layer_norm")?;
        if gamma.numel() != c || beta.numel() != c {
            return Err(HstError::Shape(format!("layer_norm affine params must have {c} entries")));
        }
        let eps = T::lit(LAYER_NORM_EPS);
        let cf = T::from_usize_lossy(c);
        let mut xhat = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        let mut data = Vec::with_capacity(r * c);
        for row in self.data().chunks(c) {
            let mean = row.iter().copied().sum::<T>() / cf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cf;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                data.push(gamma.data()[j] * h + beta.data()[j]);
            }
        }
        let requires = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        let op = requires.then(|| Op::LayerNorm {
            x: self.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            xhat,
            inv_std,
        });
        Ok(Self::build(data, vec![r, c], requires, op))
    }

    pub fn concat_cols(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (r, a) = self.dims2("concat_cols")?;
        let (r2, b) = other.dims2("concat_cols")?;
        if r != r2 {
            return Err(HstError::Shape(format!("concat_cols rows {r} vs {r2}")));
        }
        let mut data = Vec::with_capacity(r * (a + b));
        for i in 0..r {
            data.extend_from_slice(&self.data()[i * a..(i + 1) * a]);
            data.extend_from_slice(&other.data()[i * b..(i + 1) * b]);
        }
        Ok(Self::from_op(data, vec![r, a + b], &[self, other], || Op::ConcatCols(self.clone(), other.clone())))
    }

    pub fn concat_rows(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (r, c) = self.dims2("concat_rows")?;
        let (r2, c2) = other.dims2("concat_rows")?;
        if c != c2 {
            return Err(HstError::Shape(format!("concat_rows cols {c} vs {c2}")));
        }
        let mut data = Vec::with_capacity((r + r2) * c);
        data.extend_from_slice(self.data());
        data.extend_from_slice(other.data());
        Ok(Self::from_op(data, vec![r + r2, c], &[self, other], || Op::ConcatRows(self.clone(), other.clone())))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let (r, c) = self.dims2("slice_cols")?;
        if start + len > c {
            return Err(HstError::Shape(format!("slice_cols {start}+{len} beyond {c}")));
        }
        let data = self.data().chunks(c).flat_map(|row| row[start..start + len].iter().copied()).collect();
        Ok(Self::from_op(data, vec![r, len], &[self], || Op::SliceCols(self.clone(), start)))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let (r, c) = self.dims2("slice_rows")?;
        if start + len > r {
            return Err(HstError::Shape(format!("slice_rows {start}+{len} beyond {r}")));
        }
        let data = self.data()[start * c..(start + len) * c].to_vec();
        Ok(Self::from_op(data, vec![len, c], &[self], || Op::SliceRows(self.clone(), start)))
    }

    /// Batched gather: `out[i, j, :] = src[rows[i * k + j], :]` for valid slots, zero
    /// otherwise. `rows` and `mask` are row-major `n x k`.
    pub fn gather_rows(&self, rows: &[usize], mask: &[bool], n: usize, k: usize) -> Result<Tensor<T>> {
        let (src_rows, d) = self.dims2("gather_rows")?;
        if rows.len() != n * k || mask.len() != n * k {
            return Err(HstError::Shape(format!("gather index table must be {n} x {k}")));
        }
        let mut data = vec![T::zero(); n * k * d];
        for (slot, (&r, &valid)) in rows.iter().zip(mask).enumerate() {
            if !valid {
                continue;
            }
            if r == PAD || r >= src_rows {
                return Err(HstError::IndexOutOfRange { index: r, len: src_rows });
            }
            data[slot * d..(slot + 1) * d].copy_from_slice(&self.data()[r * d..(r + 1) * d]);
        }
        Ok(Self::from_op(data, vec![n, k, d], &[self], || Op::GatherRows {
            src: self.clone(),
            rows: Arc::new(rows.to_vec()),
            mask: Arc::new(mask.to_vec()),
        }))
    }

    /// Row-wise softmax over valid slots of an `n x k` score matrix, with the
    /// max-subtraction shift. Masked slots get weight 0.
    pub fn masked_softmax(&self, mask: &[bool]) -> Result<Tensor<T>> {
        let (_, k) = self.dims2("masked_softmax")?;
        if mask.len() != self.numel() {
            return Err(HstError::Shape("mask must match scores".into()));
        }
        let mut data = vec![T::zero(); self.numel()];
        if k > 0 {
            for ((x, m), o) in self.data().chunks(k).zip(mask.chunks(k)).zip(data.chunks_mut(k)) {
                masked_softmax_row(x, m, o);
            }
        }
        Ok(Self::from_op(data, self.shape().to_vec(), &[self], || Op::MaskedSoftmax {
            x: self.clone(),
            mask: Arc::new(mask.to_vec()),
        }))
    }

    /// Dense row softmax.
    pub fn softmax_rows(&self) -> Result<Tensor<T>> {
        self.masked_softmax(&vec![true; self.numel()])
    }

    /// `out[i, j] = <q[i, :], keys[i, j, :]>` for `q [n x d]`, `keys [n x k x d]`.
    pub fn batched_dot(&self, keys: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, d) = self.dims2("batched_dot")?;
        let (n2, k, d2) = keys.dims3("batched_dot")?;
        if n != n2 || d != d2 {
            return Err(HstError::Shape(format!("batched_dot {:?} vs {:?}", self.shape(), keys.shape())));
        }
        let mut data = Vec::with_capacity(n * k);
        for i in 0..n {
            let qi = &self.data()[i * d..(i + 1) * d];
            for j in 0..k {
                data.push(dot(qi, &keys.data()[(i * k + j) * d..(i * k + j + 1) * d]));
            }
        }
        Ok(Self::from_op(data, vec![n, k], &[self, keys], || Op::BatchedDot(self.clone(), keys.clone())))
    }

    /// `out[i, :] = sum_j w[i, j] * values[i, j, :]` for `w [n x k]`, `values [n x k x d]`.
    pub fn batched_mix(&self, values: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, k) = self.dims2("batched_mix")?;
        let (n2, k2, d) = values.dims3("batched_mix")?;
        if n != n2 || k != k2 {
            return Err(HstError::Shape(format!("batched_mix {:?} vs {:?}", self.shape(), values.shape())));
        }
        let mut data = vec![T::zero(); n * d];
        for i in 0..n {
            let out = &mut data[i * d..(i + 1) * d];
            for j in 0..k {
                let w = self.data()[i * k + j];
                let v = &values.data()[(i * k + j) * d..(i * k + j + 1) * d];
                for (o, &x) in out.iter_mut().zip(v) {
                    *o += w * x;
                }
            }
        }
        Ok(Self::from_op(data, vec![n, d], &[self, values], || Op::BatchedMix(self.clone(), values.clone())))
    }

    /// Sparse pooling `P x` for `x [num_points x d]`.
    pub fn pool(&self, matrix: &Arc<PoolingMatrix<T>>) -> Result<Tensor<T>> {
        let (_, d) = self.dims2("pool")?;
        let data = matrix.apply(self.data(), d)?;
        Ok(Self::from_op(data, vec![matrix.rows(), d], &[self], || Op::Pool {
            x: self.clone(),
            matrix: Arc::clone(matrix),
        }))
    }

    /// Multi-head attention of query rows over per-query key sets.
    ///
    /// `q` is `[num_queries x d]`; `k` and `v` are `[num_nodes x d]` and are indexed by
    /// the rows in `table`. Head `h` uses columns `h * d/heads .. (h + 1) * d/heads` and
    /// scores are scaled by `1 / sqrt(d / heads)`. Produces the concatenated heads,
    /// `[num_queries x d]`, without the output projection.
    ///
    /// Equivalent to gather, batched dot, masked softmax and batched mix per head, but
    /// never materialises the gathered key and value tensors.
    pub fn keyed_attention(&self, k: &Tensor<T>, v: &Tensor<T>, table: &Arc<KeySetTable>, heads: usize) -> Result<Tensor<T>> {
        let (nq, d) = self.dims2("keyed_attention")?;
        let (nk, dk) = k.dims2("keyed_attention")?;
        same_shape(k, v, "keyed_attention keys/values")?;
        if d != dk {
            return Err(HstError::Shape(format!("query width {d} vs key width {dk}")));
        }
        if heads == 0 || d % heads != 0 {
            return Err(HstError::Shape(format!("{d} columns do not split into {heads} heads")));
        }
        if table.num_queries() != nq {
            return Err(HstError::Shape(format!("key table has {} rows for {nq} queries", table.num_queries())));
        }
        if let Some(&bad) = table.key_rows().iter().zip(table.mask()).filter(|(_, &m)| m).map(|(r, _)| r).find(|&&r| r >= nk) {
            return Err(HstError::IndexOutOfRange { index: bad, len: nk });
        }
        let kmax = table.k_max();
        let dh = d / heads;
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let requires = self.requires_grad() || k.requires_grad() || v.requires_grad();

        let mut out = vec![T::zero(); nq * d];
        let mut weights = if requires { vec![T::zero(); nq * heads * kmax] } else { Vec::new() };
        let (qd, kd, vd) = (self.data(), k.data(), v.data());
        let query = |i: usize, out_row: &mut [T], w_row: &mut [T]| {
            let keys = table.keys_of(i);
            let mut scores = vec![T::zero(); keys.len()];
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = &qd[i * d..(i + 1) * d][cols.clone()];
                let mut max = T::neg_infinity();
                for (s, &r) in scores.iter_mut().zip(keys) {
                    *s = dot(qh, &kd[r * d..(r + 1) * d][cols.clone()]) * scale;
                    max = max.max(*s);
                }
                let mut total = T::zero();
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                let dst = &mut out_row[cols.clone()];
                for (s, &r) in scores.iter_mut().zip(keys) {
                    *s /= total;
                    for (o, &x) in dst.iter_mut().zip(&vd[r * d..(r + 1) * d][cols.clone()]) {
                        *o += *s * x;
                    }
                }
                if !w_row.is_empty() {
                    w_row[h * kmax..h * kmax + keys.len()].copy_from_slice(&scores);
                }
            }
        };
        let wchunk = if requires { heads * kmax } else { 0 };
        if nq * kmax * d >= 1 << 15 {
            if requires {
                out.par_chunks_mut(d)
                    .zip(weights.par_chunks_mut(wchunk.max(1)))
                    .enumerate()
                    .for_each(|(i, (o, w))| query(i, o, w));
            } else {
                out.par_chunks_mut(d).enumerate().for_each(|(i, o)| query(i, o, &mut []));
            }
        } else {
            for i in 0..nq {
                let (o, w) = (&mut out[i * d..(i + 1) * d], if requires { &mut weights[i * wchunk..(i + 1) * wchunk] } else { &mut [][..] });
                query(i, o, w);
            }
        }
        let op = requires.then(|| Op::KeyedAttention {
            q: self.clone(),
            k: k.clone(),
            v: v.clone(),
            table: Arc::clone(table),
            heads,
            weights,
        });
        Ok(Self::build(out, vec![nq, d], requires, op))
    }
}
