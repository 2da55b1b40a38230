//! Elementwise arithmetic, reductions, and gradient-routing helpers.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;

use super::scalar::Scalar;
use super::shape::{broadcast_shapes, broadcast_strides, for_each_broadcast};
use super::tape::Var;
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy)]
enum Unary {
    Exp,
    Log,
    Tanh,
    Gelu,
    Relu,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let u = T::c(GELU_K) * (x + T::c(GELU_C) * x * x * x);
    T::c(0.5) * x * (T::one() + u.tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::c(GELU_K) * (x + T::c(GELU_C) * x * x * x);
    let t = u.tanh();
    let du = T::c(GELU_K) * (T::one() + T::c(3.0 * GELU_C) * x * x);
    T::c(0.5) * (T::one() + t) + T::c(0.5) * x * (T::one() - t * t) * du
}

impl<'t, T: Scalar> Var<'t, T> {
    fn binary(self, rhs: Var<'t, T>, op: Binary, name: &'static str) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), rhs.shape());
        let out = broadcast_shapes(&sa, &sb).ok_or_else(|| Error::Shape {
            op: name,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let (a, b) = (self.value(), rhs.value());
        let ta = broadcast_strides(&sa, &out);
        let tb = broadcast_strides(&sb, &out);
        let mut value = vec![T::zero(); super::numel(&out)];
        if sa == sb {
            for (o, (&x, &y)) in value.iter_mut().zip(a.iter().zip(b.iter())) {
                *o = apply(op, x, y);
            }
        } else {
            for_each_broadcast(&out, &ta, &tb, |o, i, j| value[o] = apply(op, a[i], b[j]));
        }
        let (ida, idb) = (self.id, rhs.id);
        let shape = out.clone();
        Ok(self.tape.record(out, value, &[self, rhs], move |g, sink| {
            if sink.wants(ida) {
                let ga = sink.buf(ida).unwrap();
                for_each_broadcast(&shape, &ta, &tb, |o, i, j| {
                    ga[i] = ga[i]
                        + match op {
                            Binary::Add | Binary::Sub => g[o],
                            Binary::Mul => g[o] * b[j],
                            Binary::Div => g[o] / b[j],
                        };
                });
            }
            if sink.wants(idb) {
                let gb = sink.buf(idb).unwrap();
                for_each_broadcast(&shape, &ta, &tb, |o, i, j| {
                    gb[j] = gb[j]
                        + match op {
                            Binary::Add => g[o],
                            Binary::Sub => -g[o],
                            Binary::Mul => g[o] * a[i],
                            Binary::Div => -g[o] * a[i] / (b[j] * b[j]),
                        };
                });
            }
        }))
    }

    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, Binary::Add, "add")
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, Binary::Sub, "sub")
    }

    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, Binary::Mul, "mul")
    }

    /// Division by an exact zero yields an infinity, as in IEEE arithmetic.
    pub fn div(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, Binary::Div, "div")
    }

    fn unary(self, op: Unary) -> Var<'t, T> {
        let x = self.value();
        let y: Vec<T> = x
            .iter()
            .map(|&v| match op {
                Unary::Exp => v.exp(),
                Unary::Log => v.ln(),
                Unary::Tanh => v.tanh(),
                Unary::Gelu => gelu(v),
                Unary::Relu => v.max(T::zero()),
            })
            .collect();
        let id = self.id;
        let yv = alloc::sync::Arc::new(y);
        let ycap = yv.clone();
        self.tape
            .record_arc(self.shape(), yv, &[self], move |g, sink| {
                let Some(gx) = sink.buf(id) else { return };
                for i in 0..g.len() {
                    let d = match op {
                        Unary::Exp => ycap[i],
                        Unary::Log => T::one() / x[i],
                        Unary::Tanh => T::one() - ycap[i] * ycap[i],
                        Unary::Gelu => gelu_grad(x[i]),
                        Unary::Relu => {
                            if x[i] > T::zero() {
                                T::one()
                            } else {
                                T::zero()
                            }
                        }
                    };
                    gx[i] = gx[i] + g[i] * d;
                }
            })
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(Unary::Exp)
    }

    /// Natural log; non-positive inputs give NaN or -inf per float semantics.
    pub fn log(self) -> Var<'t, T> {
        self.unary(Unary::Log)
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(Unary::Tanh)
    }

    /// GELU, tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(self) -> Var<'t, T> {
        self.unary(Unary::Gelu)
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(Unary::Relu)
    }

    /// Multiplies every element by a constant.
    pub fn scale(self, c: T) -> Var<'t, T> {
        let y: Vec<T> = self.value().iter().map(|&v| v * c).collect();
        let id = self.id;
        self.tape.record(self.shape(), y, &[self], move |g, sink| {
            if let Some(gx) = sink.buf(id) {
                gx.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b * c);
            }
        })
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        let y: Vec<T> = self.value().iter().map(|&v| v + c).collect();
        let id = self.id;
        self.tape.record(self.shape(), y, &[self], move |g, sink| sink.add(id, g))
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    pub fn square(self) -> Var<'t, T> {
        let x = self.value();
        let y: Vec<T> = x.iter().map(|&v| v * v).collect();
        let id = self.id;
        self.tape.record(self.shape(), y, &[self], move |g, sink| {
            if let Some(gx) = sink.buf(id) {
                for i in 0..g.len() {
                    gx[i] = gx[i] + T::c(2.0) * x[i] * g[i];
                }
            }
        })
    }

    /// Clamps to `[lo, hi]`; the gradient is zero where the input is outside.
    pub fn clamp(self, lo: T, hi: T) -> Var<'t, T> {
        let x = self.value();
        let y: Vec<T> = x.iter().map(|&v| v.max(lo).min(hi)).collect();
        let id = self.id;
        self.tape.record(self.shape(), y, &[self], move |g, sink| {
            if let Some(gx) = sink.buf(id) {
                for i in 0..g.len() {
                    if x[i] >= lo && x[i] <= hi {
                        gx[i] = gx[i] + g[i];
                    }
                }
            }
        })
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let s = x.iter().copied().sum::<T>();
        let (id, n) = (self.id, x.len());
        self.tape.record(alloc::vec![1], vec![s], &[self], move |g, sink| {
            if let Some(gx) = sink.buf(id) {
                gx.iter_mut().take(n).for_each(|a| *a = *a + g[0]);
            }
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.numel();
        self.sum().scale(T::one() / T::c(n as f64))
    }

    /// Same value, no gradient.
    pub fn detach(self) -> Var<'t, T> {
        self.tape.constant_arc(self.shape(), self.value())
    }

    /// Forward value `replacement`, backward identity into `self`.
    pub fn straight_through(self, replacement: Vec<T>) -> Result<Var<'t, T>> {
        if replacement.len() != self.numel() {
            return Err(Error::Shape {
                op: "straight_through",
                lhs: self.shape(),
                rhs: alloc::vec![replacement.len()],
            });
        }
        let id = self.id;
        Ok(self
            .tape
            .record(self.shape(), replacement, &[self], move |g, sink| sink.add(id, g)))
    }

    /// Inverted dropout. Identity unless the tape is in training mode.
    pub fn dropout(self, p: f64) -> Var<'t, T> {
        if p <= 0.0 || !self.tape.is_training() {
            return self;
        }
        let n = self.numel();
        let keep = T::c(1.0 / (1.0 - p));
        let mask: Vec<T> = self
            .tape
            .with_dropout_rng(|rng| {
                (0..n)
                    .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
                    .collect()
            })
            .unwrap_or_default();
        let m = self.tape.constant_arc(self.shape(), alloc::sync::Arc::new(mask));
        self.mul(m).expect("dropout mask has the operand's shape")
    }
}

#[inline]
fn apply<T: Scalar>(op: Binary, x: T, y: T) -> T {
    match op {
        Binary::Add => x + y,
        Binary::Sub => x - y,
        Binary::Mul => x * y,
        Binary::Div => x / y,
    }
}
