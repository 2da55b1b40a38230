use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};

use super::param::{Param, ParamId};
use super::scalar::Scalar;
use super::shape::numel;
use crate::error::{contract, Result};
use crate::Rng;

pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &mut GradSink<'_, T>)>;

struct Node<T> {
    shape: Vec<usize>,
    value: Arc<Vec<T>>,
    tracked: bool,
    backward: Option<BackwardFn<T>>,
    param: Option<ParamId>,
}

/// Records one forward pass.
///
/// A tape created with [`Tape::new`] runs in evaluation mode (dropout off).
/// [`Tape::training`] enables dropout driven by the supplied RNG and
/// [`Tape::inference`] disables gradient recording entirely.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
    dropout: Option<RefCell<Rng>>,
    macs: Cell<u64>,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T: Scalar> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> core::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            dropout: None,
            macs: Cell::new(0),
        }
    }

    /// Training-mode tape: dropout masks are drawn from `rng`.
    pub fn training(rng: Rng) -> Self {
        Tape {
            dropout: Some(RefCell::new(rng)),
            ..Self::new()
        }
    }

    /// No backward closures are recorded; cheaper for sampling.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout.is_some()
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Multiply-accumulates performed by the forward ops recorded so far.
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    pub(crate) fn count_macs(&self, n: u64) {
        self.macs.set(self.macs.get() + n);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn with_dropout_rng<R>(&self, f: impl FnOnce(&mut Rng) -> R) -> Option<R> {
        self.dropout.as_ref().map(|rng| f(&mut rng.borrow_mut()))
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, shape: &[usize], data: Vec<T>) -> Result<Var<'_, T>> {
        self.check_len(shape, data.len())?;
        Ok(self.constant_arc(shape.to_vec(), Arc::new(data)))
    }

    pub(crate) fn constant_arc(&self, shape: Vec<usize>, value: Arc<Vec<T>>) -> Var<'_, T> {
        self.push(Node {
            shape,
            value,
            tracked: false,
            backward: None,
            param: None,
        })
    }

    /// A differentiable leaf; its gradient is read back with [`Gradients::wrt`].
    pub fn leaf(&self, shape: &[usize], data: Vec<T>) -> Result<Var<'_, T>> {
        self.check_len(shape, data.len())?;
        Ok(self.push(Node {
            shape: shape.to_vec(),
            value: Arc::new(data),
            tracked: self.grad_enabled,
            backward: None,
            param: None,
        }))
    }

    /// Places a model parameter on the tape without copying its data.
    pub fn param(&self, p: &Param<T>) -> Var<'_, T> {
        self.push(Node {
            shape: p.shape().to_vec(),
            value: p.value_arc(),
            tracked: self.grad_enabled,
            backward: None,
            param: Some(p.id()),
        })
    }

    pub fn scalar(&self, x: T) -> Var<'_, T> {
        self.constant_arc(vec![1], Arc::new(vec![x]))
    }

    fn check_len(&self, shape: &[usize], len: usize) -> Result<()> {
        if numel(shape) != len || shape.contains(&0) {
            return Err(contract!(
                "shape {shape:?} does not describe {len} elements"
            ));
        }
        Ok(())
    }

    /// Records the result of an op. `back` is dropped unless some parent
    /// needs a gradient.
    pub(crate) fn record(
        &self,
        shape: Vec<usize>,
        value: Vec<T>,
        parents: &[Var<'_, T>],
        back: impl Fn(&[T], &mut GradSink<'_, T>) + 'static,
    ) -> Var<'_, T> {
        self.record_arc(shape, Arc::new(value), parents, back)
    }

    pub(crate) fn record_arc(
        &self,
        shape: Vec<usize>,
        value: Arc<Vec<T>>,
        parents: &[Var<'_, T>],
        back: impl Fn(&[T], &mut GradSink<'_, T>) + 'static,
    ) -> Var<'_, T> {
        debug_assert_eq!(numel(&shape), value.len());
        let tracked = self.grad_enabled && {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].tracked)
        };
        self.push(Node {
            shape,
            value,
            tracked,
            backward: if tracked { Some(Box::new(back)) } else { None },
            param: None,
        })
    }

    pub(crate) fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }

    pub(crate) fn value_of(&self, id: usize) -> Arc<Vec<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn is_tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// Reverse pass from a one-element loss. Backward closures are released
    /// afterwards, so a tape supports a single backward call.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let mut nodes = self.nodes.borrow_mut();
        let n = nodes.len();
        if numel(&nodes[loss.id].shape) != 1 {
            return Err(contract!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].shape
            ));
        }
        let lens: Vec<usize> = nodes.iter().map(|nd| nd.value.len()).collect();
        let tracked: Vec<bool> = nodes.iter().map(|nd| nd.tracked).collect();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        if tracked[loss.id] {
            grads[loss.id] = Some(vec![T::one()]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(back) = nodes[id].backward.as_ref() {
                let mut sink = GradSink {
                    grads: &mut grads,
                    lens: &lens,
                    tracked: &tracked,
                };
                back(&g, &mut sink);
            }
            grads[id] = Some(g);
        }
        let mut params: BTreeMap<ParamId, Vec<T>> = BTreeMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if let (Some(pid), Some(g)) = (node.param, grads[id].as_ref()) {
                match params.get_mut(&pid) {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
                    None => {
                        params.insert(pid, g.clone());
                    }
                }
            }
        }
        for node in nodes.iter_mut() {
            node.backward = None;
        }
        Ok(Gradients { grads, params })
    }
}

/// Gradient accumulator handed to backward closures.
pub(crate) struct GradSink<'a, T> {
    grads: &'a mut [Option<Vec<T>>],
    lens: &'a [usize],
    tracked: &'a [bool],
}

impl<T: Scalar> GradSink<'_, T> {
    #[inline]
    pub fn wants(&self, id: usize) -> bool {
        self.tracked[id]
    }

    /// Mutable access to the gradient buffer of `id`, allocated on demand.
    /// Returns `None` when the node does not need a gradient.
    pub fn buf(&mut self, id: usize) -> Option<&mut [T]> {
        if !self.tracked[id] {
            return None;
        }
        let len = self.lens[id];
        Some(self.grads[id].get_or_insert_with(|| vec![T::zero(); len]))
    }

    pub fn add(&mut self, id: usize, g: &[T]) {
        if let Some(buf) = self.buf(id) {
            buf.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b);
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: BTreeMap<ParamId, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if it was reachable.
    pub fn wrt(&self, v: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(&id).map(|g| g.as_slice())
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn numel(&self) -> usize {
        self.tape.value_of(self.id).len()
    }

    pub fn value(&self) -> Arc<Vec<T>> {
        self.tape.value_of(self.id)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.value().as_ref().clone()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> T {
        self.value()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.is_tracked(self.id)
    }
}
