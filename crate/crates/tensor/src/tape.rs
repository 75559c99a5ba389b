use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::array::Array;
use crate::elem::Elem;
use crate::error::{Result, TensorError};

/// Backward rule of a recorded op.
///
/// Receives the gradient of the op output and a flag per parent telling
/// whether that parent needs a gradient; returns one entry per parent.
pub(crate) type BackwardFn<T> = Box<dyn FnOnce(&Array<T>, &[bool]) -> Vec<Option<Array<T>>>>;

struct Node<T> {
    value: Rc<Array<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Records operations for reverse-mode differentiation.
///
/// A tape lives for one forward/backward pass. Node ids grow monotonically so
/// reverse id order is a valid topological order.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
}

impl<T: Elem> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Elem> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// Tape that records values only; nothing on it requires a gradient.
    pub fn no_grad() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Constant input.
    pub fn constant(&self, value: Array<T>) -> Var<'_, T> {
        self.insert(Rc::new(value), Vec::new(), None, false)
    }

    /// Input that gradients are tracked for.
    pub fn variable(&self, value: Array<T>) -> Var<'_, T> {
        self.variable_rc(Rc::new(value))
    }

    pub fn variable_rc(&self, value: Rc<Array<T>>) -> Var<'_, T> {
        let rg = self.grad_enabled;
        self.insert(value, Vec::new(), None, rg)
    }

    fn insert(
        &self,
        value: Rc<Array<T>>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        requires_grad: bool,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            parents,
            backward: if requires_grad { backward } else { None },
            requires_grad,
        });
        Var { tape: self, id }
    }

    pub(crate) fn push(
        &self,
        value: Array<T>,
        parents: &[Var<'_, T>],
        backward: BackwardFn<T>,
    ) -> Var<'_, T> {
        let requires_grad = self.grad_enabled && parents.iter().any(|p| p.requires_grad());
        let ids = parents.iter().map(|p| p.id).collect();
        self.insert(Rc::new(value), ids, Some(backward), requires_grad)
    }

    fn value(&self, id: usize) -> Rc<Array<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Back-propagates from a one-element `loss`.
    ///
    /// Backward closures are consumed, so each tape supports one backward pass.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Grads<T>> {
        let shape = loss.shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let n = loss.id + 1;
        let mut grads: Vec<Option<Array<T>>> = (0..self.len()).map(|_| None).collect();
        grads[loss.id] = Some(Array::full(shape, T::one()));
        for id in (0..n).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let (backward, parents) = {
                let mut nodes = self.nodes.borrow_mut();
                let node = &mut nodes[id];
                (node.backward.take(), node.parents.clone())
            };
            if let Some(backward) = backward {
                let needs: Vec<bool> = parents.iter().map(|&p| self.requires_grad(p)).collect();
                let parent_grads = backward(&grad, &needs);
                debug_assert_eq!(parent_grads.len(), parents.len());
                for ((&p, g), need) in parents.iter().zip(parent_grads).zip(needs) {
                    let Some(g) = g else { continue };
                    if !need {
                        continue;
                    }
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            grads[id] = Some(grad);
        }
        Ok(Grads { grads })
    }
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<'t, T: Elem> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Array<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        self.tape.nodes.borrow()[self.id].value.dims4()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Same value, cut off from the gradient graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.insert(self.value(), Vec::new(), None, false)
    }

    pub(crate) fn same_tape(&self, other: &Var<'_, T>) -> bool {
        std::ptr::eq(self.tape, other.tape)
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Grads<T> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Elem> Grads<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Array<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Array<T>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}
