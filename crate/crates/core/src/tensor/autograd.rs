use std::collections::{HashMap, HashSet};

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// The recorded operations reachable from a loss, in reverse topological
/// order (outputs before inputs).
///
/// Node ids are allocated monotonically at creation and every parent exists
/// before its child, so sorting by descending id is a valid reverse
/// topological order.
pub struct Tape<E: Element> {
    nodes: Vec<Tensor<E>>,
}

impl<E: Element> Tape<E> {
    pub fn from_loss(loss: &Tensor<E>) -> Self {
        let mut seen = HashSet::new();
        let mut nodes = Vec::new();
        let mut stack = vec![loss.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(gf) = t.grad_fn() {
                stack.extend(gf.parents.iter().cloned());
            }
            nodes.push(t);
        }
        nodes.sort_by_key(|t| std::cmp::Reverse(t.id()));
        Tape { nodes }
    }

    /// Number of recorded (non-leaf) operations.
    pub fn len(&self) -> usize {
        self.nodes.iter().filter(|t| !t.is_leaf()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Tensor<E>> {
        self.nodes.iter().filter(|t| t.is_leaf())
    }

    pub fn nodes(&self) -> &[Tensor<E>] {
        &self.nodes
    }
}

impl<E: Element> Tensor<E> {
    /// Accumulates d(self)/d(leaf) into every gradient-tracking leaf.
    ///
    /// Gradients add onto whatever is already stored; call
    /// [`Tensor::zero_grad`] between optimizer steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract(
                "backward on a tensor that does not require grad".into(),
            ));
        }
        let tape = Tape::from_loss(self);
        let mut pending: HashMap<u64, Vec<E>> = HashMap::new();
        pending.insert(self.id(), vec![E::one()]);

        for node in tape.nodes() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            let Some(gf) = node.grad_fn() else {
                if !grad.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite { op: "backward" });
                }
                node.accumulate_grad(&grad);
                continue;
            };
            let parent_grads = (gf.backward)(&gf.parents, node.data(), &grad);
            debug_assert_eq!(parent_grads.len(), gf.parents.len(), "{}", gf.op);
            for (parent, pg) in gf.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.len(), parent.numel(), "{} gradient size", gf.op);
                match pending.get_mut(&parent.id()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                    None => {
                        pending.insert(parent.id(), pg);
                    }
                }
            }
        }
        Ok(())
    }
}
