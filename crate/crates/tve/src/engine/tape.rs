//! The executed compute record: every kernel's op, shape, and output
//! tensor, in execution order. Adjoint passes walk it backwards; `replay`
//! re-runs it forwards.

use crate::semiring::Semiring;
use crate::tensor::{pointwise_times, reduce_plus, reduce_product, NamedTensor};
use crate::Element;

use super::plan::{OpId, OpNode, PlannedOp};
use super::EngineError;

#[derive(Clone, Debug)]
pub struct Tape<E: Element> {
    nodes: Vec<OpNode>,
    tensors: Vec<NamedTensor<E>>,
    result: OpId,
}

impl<E: Element> Tape<E> {
    pub(super) fn new(nodes: Vec<OpNode>, tensors: Vec<NamedTensor<E>>, result: OpId) -> Self {
        debug_assert_eq!(nodes.len(), tensors.len());
        Self { nodes, tensors, result }
    }

    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, id: OpId) -> &NamedTensor<E> {
        &self.tensors[id]
    }

    pub fn result_id(&self) -> OpId {
        self.result
    }

    pub fn result_tensor(&self) -> &NamedTensor<E> {
        &self.tensors[self.result]
    }

    /// Recompute every non-input node from the recorded inputs and return
    /// the final tensor. Equal to `result_tensor()` bit for bit.
    pub fn replay<S: Semiring<Elem = E>>(&self, s: &S) -> Result<NamedTensor<E>, EngineError> {
        let mut tensors: Vec<NamedTensor<E>> = Vec::with_capacity(self.nodes.len());
        for (node, recorded) in self.nodes.iter().zip(&self.tensors) {
            let t = match &node.op {
                PlannedOp::Load { .. } => recorded.clone(),
                PlannedOp::Ones => NamedTensor::filled(node.dims.clone(), s.one())?,
                PlannedOp::OneScalar => NamedTensor::scalar(s.one()),
                PlannedOp::Mul { a, b } => pointwise_times(&tensors[*a], &tensors[*b], s)?,
                PlannedOp::SumReduce { input, dim } => {
                    reduce_plus(&tensors[*input], std::slice::from_ref(dim), s)?
                }
                PlannedOp::ProdReduce { input, dim } => {
                    reduce_product(&tensors[*input], std::slice::from_ref(dim), s)?
                }
            };
            tensors.push(t);
        }
        Ok(tensors.swap_remove(self.result))
    }
}
