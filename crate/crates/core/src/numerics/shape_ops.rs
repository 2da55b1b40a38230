//! Layout operations: reshape, permute, slice, concat, row gather.

use alloc::vec;
use alloc::vec::Vec;

use super::scalar::Scalar;
use super::shape::{numel, strides};
use super::tape::Var;
use crate::error::{contract, Error, Result};

/// Source offset of every destination element under `perm`.
fn permutation_map(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let src_strides = strides(shape);
    let out: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let ps: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let total = numel(&out);
    let mut map = Vec::with_capacity(total);
    let nd = out.len();
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for _ in 0..total {
        map.push(off);
        let mut ax = nd;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            off += ps[ax];
            if idx[ax] < out[ax] {
                break;
            }
            off -= ps[ax] * out[ax];
            idx[ax] = 0;
        }
    }
    map
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Same data, new shape. Shares the underlying buffer.
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let cur = self.shape();
        if numel(shape) != numel(&cur) {
            return Err(Error::Shape {
                op: "reshape",
                lhs: cur,
                rhs: shape.to_vec(),
            });
        }
        let id = self.id;
        Ok(self
            .tape
            .record_arc(shape.to_vec(), self.value(), &[self], move |g, sink| sink.add(id, g)))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || core::mem::replace(&mut seen[p], true)) {
            return Err(contract!("invalid permutation {perm:?} for shape {shape:?}"));
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self);
        }
        let out: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let map = permutation_map(&shape, perm);
        let x = self.value();
        let y: Vec<T> = map.iter().map(|&s| x[s]).collect();
        let id = self.id;
        Ok(self.tape.record(out, y, &[self], move |g, sink| {
            if let Some(gx) = sink.buf(id) {
                for (o, &s) in map.iter().enumerate() {
                    gx[s] = gx[s] + g[o];
                }
            }
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let nd = self.shape().len();
        if nd < 2 {
            return Err(contract!("transpose needs at least 2 axes"));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm)
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(contract!(
                "slice [{start}, {}) on axis {axis} of {shape:?}",
                start + len
            ));
        }
        if start == 0 && len == shape[axis] {
            return Ok(self);
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let x = self.value();
        let mut y = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            y.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut out = shape;
        out[axis] = len;
        let id = self.id;
        Ok(self.tape.record(out, y, &[self], move |g, sink| {
            if let Some(gx) = sink.buf(id) {
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    gx[base..base + len * inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(a, &b)| *a = *a + b);
                }
            }
        }))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| contract!("concat of nothing"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(contract!("concat axis {axis} out of range for {base:?}"));
        }
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s,
                });
            }
            lens.push(s[axis]);
        }
        let inner: usize = base[axis + 1..].iter().product();
        let outer: usize = base[..axis].iter().product();
        let total: usize = lens.iter().sum();
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let mut y = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &l) in values.iter().zip(&lens) {
                y.extend_from_slice(&v[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut out = base;
        out[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(first.tape.record(out, y, parts, move |g, sink| {
            let mut off = 0;
            for (&id, &l) in ids.iter().zip(&lens) {
                if let Some(gx) = sink.buf(id) {
                    for o in 0..outer {
                        let src = &g[(o * total + off) * inner..(o * total + off + l) * inner];
                        gx[o * l * inner..(o + 1) * l * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, &b)| *a = *a + b);
                    }
                }
                off += l;
            }
        }))
    }

    /// Rows `indices` of a `[V, D]` table, giving `[indices.len(), D]`.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(contract!("gather_rows needs a 2-D table, got {shape:?}"));
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some((pos, &i)) = indices.iter().enumerate().find(|(_, &i)| i >= v) {
            return Err(contract!("row index {i} at position {pos} out of range for {v} rows"));
        }
        if indices.is_empty() {
            return Err(contract!("gather_rows with no indices"));
        }
        let x = self.value();
        let mut y = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            y.extend_from_slice(&x[i * d..(i + 1) * d]);
        }
        let idx = indices.to_vec();
        let id = self.id;
        Ok(self.tape.record(vec![indices.len(), d], y, &[self], move |g, sink| {
            if let Some(gx) = sink.buf(id) {
                for (r, &i) in idx.iter().enumerate() {
                    gx[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(&g[r * d..(r + 1) * d])
                        .for_each(|(a, &b)| *a = *a + b);
                }
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::numerics::Tape;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn permute_round_trip_and_grad() {
        let t = Tape::<f64>::new();
        let x = t.leaf(&[2, 3, 4], (0..24).map(|i| i as f64).collect()).unwrap();
        let y = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), vec![4, 2, 3]);
        // y[k, i, j] = x[i, j, k]
        assert_eq!(y.to_vec()[6 + 3 + 2], (12 + 2 * 4 + 1) as f64);
        let back = y.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
        let w = t.constant(&[4, 2, 3], (0..24).map(|i| i as f64).collect()).unwrap();
        let g = t.backward(y.mul(w).unwrap().sum()).unwrap();
        let gx = g.wrt(x).unwrap();
        // gradient is w permuted back
        assert_eq!(gx[12 + 2 * 4 + 1], (6 + 3 + 2) as f64);
    }

    #[test]
    fn slice_concat_inverse() {
        let t = Tape::<f64>::new();
        let x = t.leaf(&[2, 5], (0..10).map(|i| i as f64).collect()).unwrap();
        let a = x.slice(1, 0, 2).unwrap();
        let b = x.slice(1, 2, 3).unwrap();
        let y = super::Var::concat(&[a, b], 1).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
        let g = t.backward(b.sum()).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[0., 0., 1., 1., 1., 0., 0., 1., 1., 1.]);
    }

    #[test]
    fn gather_scatters_gradient() {
        let t = Tape::<f64>::new();
        let table = t.leaf(&[4, 2], vec![0.0; 8]).unwrap();
        let y = table.gather_rows(&[1, 3, 1]).unwrap();
        let g = t.backward(y.sum()).unwrap();
        let expect: Vec<f64> = vec![0., 0., 2., 2., 0., 0., 1., 1.];
        assert_eq!(g.wrt(table).unwrap(), expect.as_slice());
        assert!(table.gather_rows(&[4]).is_err());
    }
}
