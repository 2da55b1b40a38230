//! Normalizers and losses: softmax, layer norm, cross-entropy.

use alloc::vec;
use alloc::vec::Vec;

use super::scalar::Scalar;
use super::tape::Var;
use crate::error::{contract, Error, Result};

impl<'t, T: Scalar> Var<'t, T> {
    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(contract!("softmax axis {axis} out of range for {shape:?}"));
        }
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let x = self.value();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..n {
                    mx = mx.max(x[base + j * inner]);
                }
                let mut s = T::zero();
                for j in 0..n {
                    let e = (x[base + j * inner] - mx).exp();
                    y[base + j * inner] = e;
                    s = s + e;
                }
                for j in 0..n {
                    y[base + j * inner] = y[base + j * inner] / s;
                }
            }
        }
        let y = alloc::sync::Arc::new(y);
        let yc = y.clone();
        let id = self.id;
        Ok(self.tape.record_arc(shape, y, &[self], move |g, sink| {
            let Some(gx) = sink.buf(id) else { return };
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * n * inner + i;
                    let mut dot = T::zero();
                    for j in 0..n {
                        dot = dot + g[base + j * inner] * yc[base + j * inner];
                    }
                    for j in 0..n {
                        let k = base + j * inner;
                        gx[k] = gx[k] + yc[k] * (g[k] - dot);
                    }
                }
            }
        }))
    }

    /// Layer normalization over the last axis with optional affine terms.
    pub fn layer_norm(
        self,
        gain: Option<Var<'t, T>>,
        bias: Option<Var<'t, T>>,
        eps: f64,
    ) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let d = *shape.last().unwrap_or(&1);
        for p in [gain, bias].into_iter().flatten() {
            if p.shape() != [d] {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: p.shape(),
                });
            }
        }
        let x = self.value();
        let rows = x.len() / d;
        let eps = T::c(eps);
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstd = vec![T::zero(); rows];
        let dn = T::c(d as f64);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                xhat[r * d + j] = (row[j] - mu) * rs;
            }
        }
        let gv = gain.map(|g| g.value());
        let bv = bias.map(|b| b.value());
        let mut y = xhat.clone();
        if let Some(gv) = &gv {
            y.chunks_mut(d).for_each(|row| row.iter_mut().zip(gv.iter()).for_each(|(a, &g)| *a = *a * g));
        }
        if let Some(bv) = &bv {
            y.chunks_mut(d).for_each(|row| row.iter_mut().zip(bv.iter()).for_each(|(a, &b)| *a = *a + b));
        }
        let id = self.id;
        let gid = gain.map(|g| g.id);
        let bid = bias.map(|b| b.id);
        let mut parents: Vec<Var<'t, T>> = vec![self];
        parents.extend(gain);
        parents.extend(bias);
        Ok(self.tape.record(shape, y, &parents, move |g, sink| {
            if let Some(gid) = gid {
                if let Some(gg) = sink.buf(gid) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] = gg[j] + g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
            }
            if let Some(bid) = bid {
                if let Some(gb) = sink.buf(bid) {
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] = gb[j] + g[r * d + j];
                        }
                    }
                }
            }
            let Some(gx) = sink.buf(id) else { return };
            let mut gh = vec![T::zero(); d];
            for r in 0..rows {
                for j in 0..d {
                    gh[j] = match &gv {
                        Some(gv) => g[r * d + j] * gv[j],
                        None => g[r * d + j],
                    };
                }
                let xh = &xhat[r * d..(r + 1) * d];
                let m1 = gh.iter().copied().sum::<T>() / dn;
                let m2 = gh.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / dn;
                for j in 0..d {
                    gx[r * d + j] = gx[r * d + j] + rstd[r] * (gh[j] - m1 - xh[j] * m2);
                }
            }
        }))
    }

    /// Mean softmax cross-entropy of the rows of a `[R, C]` logit matrix
    /// against integer targets.
    pub fn cross_entropy(self, targets: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len()],
            });
        }
        let (rows, c) = (shape[0], shape[1]);
        if let Some((r, &t)) = targets.iter().enumerate().find(|(_, &t)| t >= c) {
            return Err(contract!("target {t} at row {r} out of range for {c} classes"));
        }
        let x = self.value();
        let mut probs = vec![T::zero(); x.len()];
        let mut total = T::zero();
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for j in 0..c {
                let e = (row[j] - mx).exp();
                probs[r * c + j] = e;
                s = s + e;
            }
            probs[r * c..(r + 1) * c].iter_mut().for_each(|p| *p = *p / s);
            total = total + (mx + s.ln() - row[targets[r]]);
        }
        let inv = T::one() / T::c(rows as f64);
        let targets = targets.to_vec();
        let id = self.id;
        Ok(self.tape.record(vec![1], vec![total * inv], &[self], move |g, sink| {
            let Some(gx) = sink.buf(id) else { return };
            let s = g[0] * inv;
            for r in 0..rows {
                for j in 0..c {
                    let onehot = if j == targets[r] { T::one() } else { T::zero() };
                    gx[r * c + j] = gx[r * c + j] + s * (probs[r * c + j] - onehot);
                }
            }
        }))
    }
}
