use std::collections::{HashMap, HashSet};
use std::sync::atomic::Ordering;

use super::kernels::{self, dot, gelu_grad};
use super::{Op, Tensor};
use crate::{HstError, Real, Result};

fn accumulate<T: Real>(grads: &mut HashMap<u64, Vec<T>>, t: &Tensor<T>, g: Vec<T>) {
    if !t.requires_grad() {
        return;
    }
    match grads.get_mut(&t.id()) {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => {
            grads.insert(t.id(), g);
        }
    }
}

/// Post-order over gradient-tracking nodes reachable from `root`.
fn topo_order<T: Real>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    let mut stack: Vec<(Tensor<T>, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(op) = &t.node().op {
            for input in op.inputs().into_iter().rev() {
                if input.requires_grad() && !seen.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order
}

impl<T: Real> Op<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ConcatCols(a, b)
            | Op::ConcatRows(a, b)
            | Op::BatchedDot(a, b)
            | Op::BatchedMix(a, b) => vec![a, b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Gelu(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _) => vec![a],
            Op::LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::GatherRows { src, .. } => vec![src],
            Op::MaskedSoftmax { x, .. } => vec![x],
            Op::Pool { x, .. } => vec![x],
            Op::KeyedAttention { q, k, v, .. } => vec![q, k, v],
        }
    }
}

impl<T: Real> Tensor<T> {
    /// Reverse-mode sweep from a scalar. Writes gradients into every reachable leaf that
    /// requires them and returns the number of graph nodes visited.
    ///
    /// Running it twice on the same root without [`Tensor::reset_backward`] is an error.
    pub fn backward(&self) -> Result<usize> {
        if self.numel() != 1 {
            return Err(HstError::NonScalarLoss(self.shape().to_vec()));
        }
        if self.node().backward_ran.swap(true, Ordering::SeqCst) {
            return Err(HstError::BackwardTwice);
        }
        if !self.requires_grad() {
            return Ok(0);
        }
        let order = topo_order(self);
        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else { continue };
            match &node.node().op {
                None => *node.node().grad.lock().expect("grad lock") = Some(g),
                Some(op) => propagate(node, op, &g, &mut grads)?,
            }
        }
        Ok(order.len())
    }
}

fn propagate<T: Real>(out: &Tensor<T>, op: &Op<T>, g: &[T], grads: &mut HashMap<u64, Vec<T>>) -> Result<()> {
    match op {
        Op::MatMul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            if a.requires_grad() {
                accumulate(grads, a, kernels::matmul_nt(g, b.data(), m, n, k));
            }
            if b.requires_grad() {
                accumulate(grads, b, kernels::matmul_tn(a.data(), g, m, k, n));
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (a.shape()[0], a.shape()[1]);
            accumulate(grads, a, kernels::transpose(g, c, r));
        }
        Op::Add(a, b) => {
            accumulate(grads, a, g.to_vec());
            accumulate(grads, b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(grads, a, g.to_vec());
            accumulate(grads, b, g.iter().map(|&v| -v).collect());
        }
        Op::Mul(a, b) => {
            if a.requires_grad() {
                accumulate(grads, a, g.iter().zip(b.data()).map(|(&x, &y)| x * y).collect());
            }
            if b.requires_grad() {
                accumulate(grads, b, g.iter().zip(a.data()).map(|(&x, &y)| x * y).collect());
            }
        }
        Op::AddRow(x, bias) => {
            accumulate(grads, x, g.to_vec());
            if bias.requires_grad() {
                let c = bias.numel();
                let mut gb = vec![T::zero(); c];
                for row in g.chunks(c) {
                    gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                }
                accumulate(grads, bias, gb);
            }
        }
        Op::Scale(a, s) => accumulate(grads, a, g.iter().map(|&v| v * *s).collect()),
        Op::Relu(a) => accumulate(
            grads,
            a,
            g.iter().zip(a.data()).map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() }).collect(),
        ),
        Op::Gelu(a) => accumulate(grads, a, g.iter().zip(a.data()).map(|(&gv, &x)| gv * gelu_grad(x)).collect()),
        Op::Sum(a) => accumulate(grads, a, vec![g[0]; a.numel()]),
        Op::Mean(a) => {
            let s = g[0] / T::from_usize_lossy(a.numel().max(1));
            accumulate(grads, a, vec![s; a.numel()]);
        }
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let c = gamma.numel();
            let cf = T::from_usize_lossy(c);
            if gamma.requires_grad() || beta.requires_grad() {
                let mut gg = vec![T::zero(); c];
                let mut gbeta = vec![T::zero(); c];
                for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        gg[j] += grow[j] * hrow[j];
                        gbeta[j] += grow[j];
                    }
                }
                accumulate(grads, gamma, gg);
                accumulate(grads, beta, gbeta);
            }
            if x.requires_grad() {
                let mut gx = Vec::with_capacity(g.len());
                for ((grow, hrow), &inv) in g.chunks(c).zip(xhat.chunks(c)).zip(inv_std) {
                    let dy: Vec<T> = grow.iter().zip(gamma.data()).map(|(&a, &b)| a * b).collect();
                    let mean_dy = dy.iter().copied().sum::<T>() / cf;
                    let mean_dyh = dot(&dy, hrow) / cf;
                    gx.extend(dy.iter().zip(hrow).map(|(&d, &h)| inv * (d - mean_dy - h * mean_dyh)));
                }
                accumulate(grads, x, gx);
            }
        }
        Op::ConcatCols(a, b) => {
            let (ca, cb) = (a.shape()[1], b.shape()[1]);
            let w = ca + cb;
            if a.requires_grad() {
                accumulate(grads, a, g.chunks(w).flat_map(|row| row[..ca].iter().copied()).collect());
            }
            if b.requires_grad() {
                accumulate(grads, b, g.chunks(w).flat_map(|row| row[ca..].iter().copied()).collect());
            }
        }
        Op::ConcatRows(a, b) => {
            let split = a.numel();
            accumulate(grads, a, g[..split].to_vec());
            accumulate(grads, b, g[split..].to_vec());
        }
        Op::SliceCols(a, start) => {
            let c = a.shape()[1];
            let len = out.shape()[1];
            let mut ga = vec![T::zero(); a.numel()];
            for (dst, src) in ga.chunks_mut(c).zip(g.chunks(len)) {
                dst[*start..*start + len].copy_from_slice(src);
            }
            accumulate(grads, a, ga);
        }
        Op::SliceRows(a, start) => {
            let c = a.shape()[1];
            let mut ga = vec![T::zero(); a.numel()];
            ga[start * c..start * c + g.len()].copy_from_slice(g);
            accumulate(grads, a, ga);
        }
        Op::GatherRows { src, rows, mask } => {
            let d = src.shape()[1];
            let mut gs = vec![T::zero(); src.numel()];
            for (slot, (&r, &valid)) in rows.iter().zip(mask.iter()).enumerate() {
                if valid {
                    gs[r * d..(r + 1) * d].iter_mut().zip(&g[slot * d..(slot + 1) * d]).for_each(|(a, &b)| *a += b);
                }
            }
            accumulate(grads, src, gs);
        }
        Op::MaskedSoftmax { x, mask } => {
            let k = x.shape()[1];
            let mut gx = vec![T::zero(); x.numel()];
            for ((dst, (y, gr)), m) in gx.chunks_mut(k).zip(out.data().chunks(k).zip(g.chunks(k))).zip(mask.chunks(k)) {
                let inner = dot(y, gr);
                for j in 0..k {
                    if m[j] {
                        dst[j] = y[j] * (gr[j] - inner);
                    }
                }
            }
            accumulate(grads, x, gx);
        }
        Op::BatchedDot(q, keys) => {
            let (n, d) = (q.shape()[0], q.shape()[1]);
            let k = keys.shape()[1];
            if q.requires_grad() {
                let mut gq = vec![T::zero(); q.numel()];
                for i in 0..n {
                    for j in 0..k {
                        let gv = g[i * k + j];
                        let kr = &keys.data()[(i * k + j) * d..(i * k + j + 1) * d];
                        gq[i * d..(i + 1) * d].iter_mut().zip(kr).for_each(|(a, &b)| *a += gv * b);
                    }
                }
                accumulate(grads, q, gq);
            }
            if keys.requires_grad() {
                let mut gk = vec![T::zero(); keys.numel()];
                for i in 0..n {
                    let qr = &q.data()[i * d..(i + 1) * d];
                    for j in 0..k {
                        let gv = g[i * k + j];
                        gk[(i * k + j) * d..(i * k + j + 1) * d].iter_mut().zip(qr).for_each(|(a, &b)| *a = gv * b);
                    }
                }
                accumulate(grads, keys, gk);
            }
        }
        Op::BatchedMix(w, values) => {
            let (n, k) = (w.shape()[0], w.shape()[1]);
            let d = values.shape()[2];
            if w.requires_grad() {
                let mut gw = vec![T::zero(); w.numel()];
                for i in 0..n {
                    for j in 0..k {
                        gw[i * k + j] = dot(&g[i * d..(i + 1) * d], &values.data()[(i * k + j) * d..(i * k + j + 1) * d]);
                    }
                }
                accumulate(grads, w, gw);
            }
            if values.requires_grad() {
                let mut gv = vec![T::zero(); values.numel()];
                for i in 0..n {
                    for j in 0..k {
                        let wv = w.data()[i * k + j];
                        gv[(i * k + j) * d..(i * k + j + 1) * d]
                            .iter_mut()
                            .zip(&g[i * d..(i + 1) * d])
                            .for_each(|(a, &b)| *a = wv * b);
                    }
                }
                accumulate(grads, values, gv);
            }
        }
        Op::Pool { x, matrix } => {
            let d = x.shape()[1];
            accumulate(grads, x, matrix.apply_transpose(g, d));
        }
        Op::KeyedAttention { q, k, v, table, heads, weights } => {
            let (nq, d) = (q.shape()[0], q.shape()[1]);
            let nk = k.shape()[0];
            let heads = *heads;
            let dh = d / heads;
            let kmax = table.k_max();
            let scale = T::one() / T::from_usize_lossy(dh).sqrt();
            let (qd, kd, vd) = (q.data(), k.data(), v.data());
            let mut gq = vec![T::zero(); nq * d];
            let mut gk = vec![T::zero(); nk * d];
            let mut gv = vec![T::zero(); nk * d];
            let mut dw = Vec::with_capacity(kmax);
            for i in 0..nq {
                let keys = table.keys_of(i);
                for h in 0..heads {
                    let cols = h * dh..(h + 1) * dh;
                    let w = &weights[(i * heads + h) * kmax..(i * heads + h) * kmax + keys.len()];
                    let gi = &g[i * d..(i + 1) * d][cols.clone()];
                    dw.clear();
                    dw.extend(keys.iter().map(|&r| dot(gi, &vd[r * d..(r + 1) * d][cols.clone()])));
                    let inner = dot(w, &dw);
                    let qi = &qd[i * d..(i + 1) * d][cols.clone()];
                    for ((&r, &wj), &dwj) in keys.iter().zip(w).zip(&dw) {
                        let ds = wj * (dwj - inner) * scale;
                        let kr = &kd[r * d..(r + 1) * d][cols.clone()];
                        gq[i * d..(i + 1) * d][cols.clone()].iter_mut().zip(kr).for_each(|(a, &b)| *a += ds * b);
                        gk[r * d..(r + 1) * d][cols.clone()].iter_mut().zip(qi).for_each(|(a, &b)| *a += ds * b);
                        gv[r * d..(r + 1) * d][cols.clone()].iter_mut().zip(gi).for_each(|(a, &b)| *a += wj * b);
                    }
                }
            }
            accumulate(grads, q, gq);
            accumulate(grads, k, gk);
            accumulate(grads, v, gv);
        }
    }
    Ok(())
}
