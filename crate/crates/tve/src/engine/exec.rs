//! Executes a [`Plan`] against a graph's tensors, producing the [`Tape`].

use crate::graph::PlatedFactorGraph;
use crate::semiring::Semiring;
use crate::tensor::{pointwise_times, reduce_plus, reduce_product, NamedTensor};

use super::plan::{Plan, PlannedOp};
use super::tape::Tape;
use super::EngineError;

pub(super) fn execute<S: Semiring>(
    s: &S,
    g: &PlatedFactorGraph<S::Elem>,
    plan: &Plan,
) -> Result<Tape<S::Elem>, EngineError> {
    let mut tensors: Vec<NamedTensor<S::Elem>> = Vec::with_capacity(plan.ops.len());
    for node in &plan.ops {
        let t = match &node.op {
            PlannedOp::Load { factor } => {
                g.factor(factor).expect("plan built from this graph").tensor().clone()
            }
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
        debug_assert_eq!(t.dims(), &node.dims[..], "executed shape matches the plan");
        tensors.push(t);
    }
    Ok(Tape::new(plan.ops.clone(), tensors, plan.result))
}
