use alloc::vec;
use alloc::vec::Vec;

use super::scalar::Scalar;
use super::shape::{broadcast_shapes, broadcast_strides, for_each_broadcast, numel};
use super::tape::Var;
use crate::error::{Error, Result};

/// `c += a · b` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
#[inline]
fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj = *cj + aip * bj;
            }
        }
    }
}

/// Dot product with eight independent partial sums, combined pairwise.
#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] = acc[l] + a[l] * b[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&a, &b) in xr.iter().zip(yr) {
        s = s + a * b;
    }
    s
}

/// `ga += g · bᵀ` for `g: m×n`, `b: k×n`, `ga: m×k`.
#[inline]
fn gemm_nt<T: Scalar>(g: &[T], b: &[T], ga: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            ga[i * k + p] = ga[i * k + p] + dot(grow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `gb += aᵀ · g` for `a: m×k`, `g: m×n`, `gb: k×n`.
#[inline]
fn gemm_tn<T: Scalar>(a: &[T], g: &[T], gb: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let gbrow = &mut gb[p * n..(p + 1) * n];
            for (x, &y) in gbrow.iter_mut().zip(grow) {
                *x = *x + aip * y;
            }
        }
    }
}

/// Plain 2-D product of row-major buffers, outside any tape.
pub fn matmul_values<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    gemm_nn(a, b, &mut c, m, k, n);
    c
}

struct BatchPlan {
    out_shape: Vec<usize>,
    /// (batch index in a, batch index in b) for every output batch.
    pairs: Vec<(usize, usize)>,
    m: usize,
    k: usize,
    n: usize,
}

fn plan(sa: &[usize], sb: &[usize]) -> Option<BatchPlan> {
    if sa.len() < 2 || sb.len() < 2 {
        return None;
    }
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
    if k != k2 {
        return None;
    }
    let ba = &sa[..sa.len() - 2];
    let bb = &sb[..sb.len() - 2];
    let batch = broadcast_shapes(ba, bb)?;
    let ta = broadcast_strides(ba, &batch);
    let tb = broadcast_strides(bb, &batch);
    let mut pairs = Vec::with_capacity(numel(&batch));
    if batch.is_empty() {
        pairs.push((0, 0));
    } else {
        for_each_broadcast(&batch, &ta, &tb, |_, i, j| pairs.push((i, j)));
    }
    let mut out_shape = batch;
    out_shape.push(m);
    out_shape.push(n);
    Some(BatchPlan {
        out_shape,
        pairs,
        m,
        k,
        n,
    })
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Matrix product over the last two axes, broadcasting leading axes.
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), rhs.shape());
        let p = plan(&sa, &sb).ok_or_else(|| Error::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let (a, b) = (self.value(), rhs.value());
        let (m, k, n) = (p.m, p.k, p.n);
        let mut c = vec![T::zero(); numel(&p.out_shape)];
        for (bi, &(ia, ib)) in p.pairs.iter().enumerate() {
            gemm_nn(
                &a[ia * m * k..(ia + 1) * m * k],
                &b[ib * k * n..(ib + 1) * k * n],
                &mut c[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        self.tape.count_macs((p.pairs.len() * m * k * n) as u64);
        let (ida, idb) = (self.id, rhs.id);
        let pairs = p.pairs;
        Ok(self.tape.record(p.out_shape, c, &[self, rhs], move |g, sink| {
            if let Some(ga) = sink.buf(ida) {
                for (bi, &(ia, ib)) in pairs.iter().enumerate() {
                    gemm_nt(
                        &g[bi * m * n..(bi + 1) * m * n],
                        &b[ib * k * n..(ib + 1) * k * n],
                        &mut ga[ia * m * k..(ia + 1) * m * k],
                        m,
                        k,
                        n,
                    );
                }
            }
            if let Some(gb) = sink.buf(idb) {
                for (bi, &(ia, ib)) in pairs.iter().enumerate() {
                    gemm_tn(
                        &a[ia * m * k..(ia + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        &mut gb[ib * k * n..(ib + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
            }
        }))
    }
}
