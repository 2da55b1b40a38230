use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use super::scalar::Scalar;
use super::shape::numel;
use super::tape::Gradients;
use crate::error::{contract, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique identity of a parameter, used to route tape gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(u64);

/// A named learnable tensor together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    id: ParamId,
    name: String,
    shape: Vec<usize>,
    value: Arc<Vec<T>>,
    pub grad: Vec<T>,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(numel(shape), data.len(), "parameter data/shape mismatch");
        Param {
            id: ParamId(NEXT_ID.fetch_add(1, Ordering::Relaxed)),
            name: name.into(),
            shape: shape.to_vec(),
            grad: vec![T::zero(); data.len()],
            value: Arc::new(data),
            decay: false,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, shape, vec![T::zero(); numel(shape)])
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], x: T) -> Self {
        Self::new(name, shape, vec![x; numel(shape)])
    }

    pub fn with_decay(mut self) -> Self {
        self.decay = true;
        self
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn value(&self) -> &[T] {
        &self.value
    }

    pub(crate) fn value_arc(&self) -> Arc<Vec<T>> {
        self.value.clone()
    }

    /// Mutable access to the values; copies only if a tape still holds them.
    pub fn value_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.value).as_mut_slice()
    }

    pub fn set_value(&mut self, data: &[T]) -> Result<()> {
        if data.len() != self.len() {
            return Err(contract!(
                "parameter {} expects {} values, got {}",
                self.name,
                self.len(),
                data.len()
            ));
        }
        self.value_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Anything that owns parameters.
pub trait Module<T: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |p| names.push(p.name().into()));
        names
    }

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    /// Adds the gradients recorded for this module's parameters.
    fn accumulate(&mut self, grads: &Gradients<T>) {
        self.visit_mut(&mut |p| {
            if let Some(g) = grads.param(p.id()) {
                p.grad.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b);
            }
        });
    }

    fn grad_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit(&mut |p| s += p.grad.iter().map(|g| g.f64() * g.f64()).sum::<f64>());
        num_traits::Float::sqrt(s)
    }
}

impl<T: Scalar> Module<T> for Param<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(self)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(self)
    }
}

impl<T: Scalar, M: Module<T>> Module<T> for Vec<M> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.iter().for_each(|m| m.visit(f))
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.iter_mut().for_each(|m| m.visit_mut(f))
    }
}

impl<T: Scalar, M: Module<T>> Module<T> for Option<M> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        if let Some(m) = self {
            m.visit(f)
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        if let Some(m) = self {
            m.visit_mut(f)
        }
    }
}
