//! Separable bilinear / bicubic resampling with half-pixel centers.
//!
//! Output sample `i` of an axis resized from `n` to `m` reads input
//! coordinate `(i + 0.5) * n / m - 0.5`, clamped to `[0, n - 1]`. Tap indices
//! that fall outside the axis replicate the border. Same-size resampling is
//! the identity.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::tape::Var;
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    #[default]
    Bilinear,
    /// Keys cubic convolution with `a = -0.5`.
    Bicubic,
}

impl ResizeMode {
    pub fn taps(self) -> usize {
        match self {
            ResizeMode::Bilinear => 2,
            ResizeMode::Bicubic => 4,
        }
    }
}

const KEYS_A: f64 = -0.5;

fn keys(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((KEYS_A + 2.0) * x - (KEYS_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((KEYS_A * x - 5.0 * KEYS_A) * x + 8.0 * KEYS_A) * x - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// For every output position, the `(source index, weight)` pairs it mixes.
pub fn resample_taps(n: usize, m: usize, mode: ResizeMode) -> Vec<Vec<(usize, f64)>> {
    let scale = n as f64 / m as f64;
    let last = (n - 1) as f64;
    (0..m)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let base = num_traits::Float::floor(src);
            let t = src - base;
            let base = base as isize;
            let clampi = |j: isize| j.clamp(0, n as isize - 1) as usize;
            match mode {
                ResizeMode::Bilinear => vec![(clampi(base), 1.0 - t), (clampi(base + 1), t)],
                ResizeMode::Bicubic => (-1..=2)
                    .map(|o| (clampi(base + o), keys(t - o as f64)))
                    .collect(),
            }
        })
        .collect()
}

/// Taps with weights converted to `T`, zero weights dropped.
fn typed_taps<T: Scalar>(taps: &[Vec<(usize, f64)>]) -> Vec<Vec<(usize, T)>> {
    taps.iter()
        .map(|row| row.iter().filter(|t| t.1 != 0.0).map(|&(j, w)| (j, T::c(w))).collect())
        .collect()
}

/// Resamples axis of length `n` (with `outer` blocks before and `inner`
/// elements after) to length `m`.
fn resample_axis<T: Scalar>(
    x: &[T],
    outer: usize,
    n: usize,
    inner: usize,
    m: usize,
    taps: &[Vec<(usize, f64)>],
) -> Vec<T> {
    let taps = typed_taps::<T>(taps);
    let mut y = vec![T::zero(); outer * m * inner];
    if inner == 1 {
        for (src, dst) in x.chunks_exact(n).zip(y.chunks_exact_mut(m)) {
            for (d, row) in dst.iter_mut().zip(&taps) {
                *d = row.iter().fold(T::zero(), |acc, &(j, w)| acc + w * src[j]);
            }
        }
        return y;
    }
    for o in 0..outer {
        for (i, row) in taps.iter().enumerate() {
            let dst = &mut y[(o * m + i) * inner..(o * m + i + 1) * inner];
            for &(j, w) in row {
                let src = &x[(o * n + j) * inner..(o * n + j + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(a, &b)| *a = *a + w * b);
            }
        }
    }
    y
}

fn resample_axis_adjoint<T: Scalar>(
    g: &[T],
    gx: &mut [T],
    outer: usize,
    n: usize,
    inner: usize,
    m: usize,
    taps: &[Vec<(usize, f64)>],
) {
    let taps = typed_taps::<T>(taps);
    if inner == 1 {
        for (src, dst) in g.chunks_exact(m).zip(gx.chunks_exact_mut(n)) {
            for (&v, row) in src.iter().zip(&taps) {
                for &(j, w) in row {
                    dst[j] = dst[j] + w * v;
                }
            }
        }
        return;
    }
    for o in 0..outer {
        for (i, row) in taps.iter().enumerate() {
            let src = &g[(o * m + i) * inner..(o * m + i + 1) * inner];
            for &(j, w) in row {
                let dst = &mut gx[(o * n + j) * inner..(o * n + j + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(a, &b)| *a = *a + w * b);
            }
        }
    }
}

/// Resizes the last two axes of a row-major `[c, h, w]` buffer.
pub fn resize_values<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    mode: ResizeMode,
) -> Vec<T> {
    let tmp = if oh == h {
        x.to_vec()
    } else {
        resample_axis(x, c, h, w, oh, &resample_taps(h, oh, mode))
    };
    if ow == w {
        tmp
    } else {
        resample_axis(&tmp, c * oh, w, 1, ow, &resample_taps(w, ow, mode))
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    fn resample(self, axis: usize, m: usize, mode: ResizeMode) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let n = shape[axis];
        if m == n {
            return Ok(self);
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let taps = resample_taps(n, m, mode);
        let y = resample_axis(&self.value(), outer, n, inner, m, &taps);
        self.tape.count_macs((y.len() * mode.taps()) as u64);
        let mut out = shape;
        out[axis] = m;
        let id = self.id;
        Ok(self.tape.record(out, y, &[self], move |g, sink| {
            if let Some(gx) = sink.buf(id) {
                resample_axis_adjoint(g, gx, outer, n, inner, m, &taps);
            }
        }))
    }

    /// Differentiable resize of the last two axes `[.., h, w] -> [.., oh, ow]`.
    pub fn resize(self, oh: usize, ow: usize, mode: ResizeMode) -> Result<Var<'t, T>> {
        let nd = self.shape().len();
        if nd < 2 || oh == 0 || ow == 0 {
            return Err(contract!(
                "resize to {oh}x{ow} of tensor with shape {:?}",
                self.shape()
            ));
        }
        self.resample(nd - 2, oh, mode)?.resample(nd - 1, ow, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    #[test]
    fn same_size_is_exact_identity() {
        let x: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        for mode in [ResizeMode::Bilinear, ResizeMode::Bicubic] {
            assert_eq!(resize_values(&x, 1, 3, 4, 3, 4, mode), x);
            // the taps themselves are exact at same size
            let t = resample_taps(4, 4, mode);
            for (i, row) in t.iter().enumerate() {
                for &(j, w) in row {
                    assert!(w == 0.0 || (j == i && w == 1.0));
                }
            }
        }
    }

    #[test]
    fn two_by_two_to_one_averages() {
        let y = resize_values(&[1.0f64, 3.0, 5.0, 7.0], 1, 2, 2, 1, 1, ResizeMode::Bilinear);
        assert_eq!(y, vec![4.0]);
    }

    #[test]
    fn constants_survive_both_modes() {
        let x = vec![0.25f64; 5 * 7];
        for mode in [ResizeMode::Bilinear, ResizeMode::Bicubic] {
            for (oh, ow) in [(1, 1), (3, 11), (10, 14), (2, 7)] {
                let y = resize_values(&x, 1, 5, 7, oh, ow, mode);
                assert!(y.iter().all(|&v| (v - 0.25).abs() < 1e-15), "{mode:?} {oh}x{ow}");
            }
        }
    }

    #[test]
    fn bicubic_keys_kernel_partition_of_unity() {
        for k in 0..10 {
            let t = k as f64 / 10.0;
            let s: f64 = (-1..=2).map(|o| keys(t - o as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(keys(0.0), 1.0);
        assert_eq!(keys(1.0), 0.0);
        assert_eq!(keys(2.0), 0.0);
    }

    #[test]
    fn tape_resize_counts_taps_and_routes_gradient() {
        let t = Tape::<f64>::new();
        let x = t.leaf(&[1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let y = x.resize(1, 1, ResizeMode::Bilinear).unwrap();
        assert_eq!(y.to_vec(), vec![4.0]);
        let g = t.backward(y.sum()).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[0.25; 4]);
    }
}
