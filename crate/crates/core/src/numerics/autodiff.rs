//! Reverse-mode differentiation over a dynamically recorded graph.
//!
//! Every op returns a [`Var`] that owns its value and, when any input
//! requires a gradient, the parents and backward rule needed to propagate
//! through it. Ops on constants record nothing, so inference frees
//! intermediates as soon as they go out of scope.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static CHECK_FINITE: Cell<bool> = const { Cell::new(false) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Turns on NaN/Inf scanning of every op output on this thread.
pub fn set_finite_checks(on: bool) {
    CHECK_FINITE.with(|c| c.set(on));
}

pub fn finite_checks() -> bool {
    CHECK_FINITE.with(|c| c.get())
}

/// What a backward rule sees: the op inputs, its output, the upstream
/// gradient, and which inputs actually need a gradient.
pub struct BackwardCtx<'a, S: Scalar> {
    pub inputs: &'a [Var<S>],
    pub output: &'a Tensor<S>,
    pub grad: &'a Tensor<S>,
    pub needs: &'a [bool],
}

impl<S: Scalar> BackwardCtx<'_, S> {
    pub fn input(&self, i: usize) -> &Tensor<S> {
        self.inputs[i].value()
    }
}

/// Vector-Jacobian product of one recorded op. Returns one entry per input;
/// `None` for inputs with `needs[i] == false`.
pub trait Backward<S: Scalar> {
    fn backward(&self, ctx: &BackwardCtx<'_, S>) -> Result<Vec<Option<Tensor<S>>>>;
}

impl<S, F> Backward<S> for F
where
    S: Scalar,
    F: Fn(&BackwardCtx<'_, S>) -> Result<Vec<Option<Tensor<S>>>>,
{
    fn backward(&self, ctx: &BackwardCtx<'_, S>) -> Result<Vec<Option<Tensor<S>>>> {
        self(ctx)
    }
}

struct Node<S: Scalar> {
    id: u64,
    op: &'static str,
    value: Tensor<S>,
    requires_grad: bool,
    parents: Vec<Var<S>>,
    rule: Option<Box<dyn Backward<S>>>,
}

/// A tensor participating in differentiation.
#[derive(Clone)]
pub struct Var<S: Scalar>(Rc<Node<S>>);

impl<S: Scalar> Var<S> {
    /// Leaf that receives a gradient.
    pub fn param(value: Tensor<S>) -> Self {
        Self::leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(value: Tensor<S>) -> Self {
        Self::leaf(value, false)
    }

    fn leaf(value: Tensor<S>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            op: "leaf",
            value,
            requires_grad,
            parents: Vec::new(),
            rule: None,
        }))
    }

    /// Records an op result. Parents and the rule are kept only when some
    /// parent requires a gradient.
    pub fn from_op(
        op: &'static str,
        value: Tensor<S>,
        parents: Vec<Var<S>>,
        rule: impl Backward<S> + 'static,
    ) -> Result<Self> {
        if finite_checks() && !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = parents.iter().any(Var::requires_grad);
        let (parents, rule): (_, Option<Box<dyn Backward<S>>>) = if requires_grad {
            (parents, Some(Box::new(rule)))
        } else {
            (Vec::new(), None)
        };
        Ok(Var(Rc::new(Node { id: next_id(), op, value, requires_grad, parents, rule })))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op
    }

    pub fn value(&self) -> &Tensor<S> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn detach(&self) -> Self {
        Var::constant(self.0.value.clone())
    }

    pub fn backward(&self) -> Result<Gradients<S>> {
        Tape::record(self)?.backward()
    }
}

impl<S: Scalar> std::fmt::Debug for Var<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({}, {:?})", self.0.id, self.0.op, self.0.value)
    }
}

/// The recorded ops reachable from a loss, in creation order.
pub struct Tape<S: Scalar> {
    loss: Var<S>,
    nodes: Vec<Var<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn record(loss: &Var<S>) -> Result<Self> {
        if loss.value().numel() != 1 {
            return Err(Error::NonScalarLoss(loss.shape().to_vec()));
        }
        if !loss.requires_grad() {
            return Err(Error::Detached);
        }
        let mut seen = HashSet::new();
        let mut stack = vec![loss.clone()];
        let mut nodes = Vec::new();
        seen.insert(loss.id());
        while let Some(v) = stack.pop() {
            for p in &v.0.parents {
                if p.requires_grad() && seen.insert(p.id()) {
                    stack.push(p.clone());
                }
            }
            nodes.push(v);
        }
        nodes.sort_by_key(Var::id);
        Ok(Tape { loss: loss.clone(), nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Ids in the order backward visits them (reverse creation order).
    pub fn visit_order(&self) -> Vec<u64> {
        self.nodes.iter().rev().map(Var::id).collect()
    }

    /// Propagates d(loss)/d(loss) = 1 back to every leaf. Consumes the tape.
    pub fn backward(self) -> Result<Gradients<S>> {
        let Tape { loss, mut nodes } = self;
        let mut pending: HashMap<u64, Tensor<S>> = HashMap::new();
        pending.insert(loss.id(), Tensor::full(loss.shape().to_vec(), S::one()));
        drop(loss);
        let mut leaves = HashMap::new();
        while let Some(node) = nodes.pop() {
            let Some(grad) = pending.remove(&node.id()) else { continue };
            let n = &node.0;
            let Some(rule) = &n.rule else {
                leaves.insert(n.id, grad);
                continue;
            };
            let needs: Vec<bool> = n.parents.iter().map(Var::requires_grad).collect();
            let ctx = BackwardCtx { inputs: &n.parents, output: &n.value, grad: &grad, needs: &needs };
            let grads = rule.backward(&ctx)?;
            for (parent, g) in n.parents.iter().zip(grads) {
                let Some(g) = g else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(g.shape(), parent.shape(), "grad shape from {}", n.op);
                match pending.remove(&parent.id()) {
                    Some(acc) => {
                        pending.insert(parent.id(), acc.zip_same(&g, |a, b| a + b));
                    }
                    None => {
                        pending.insert(parent.id(), g);
                    }
                }
            }
        }
        Ok(Gradients { by_id: leaves })
    }
}

/// Gradients of the loss with respect to each trainable leaf.
pub struct Gradients<S> {
    by_id: HashMap<u64, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, var: &Var<S>) -> Option<&Tensor<S>> {
        self.by_id.get(&var.id())
    }

    /// Gradient for `var`, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: &Var<S>) -> Tensor<S> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }

    pub fn take(&mut self, var: &Var<S>) -> Option<Tensor<S>> {
        self.by_id.remove(&var.id())
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}
