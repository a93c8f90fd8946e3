//! The elimination engine.
//!
//! Contraction runs in two phases. Planning walks the graph's shapes:
//! repeatedly choose a leaf plate set (a live factor's plate set of
//! maximal size), split that leaf's variables and factors into connected
//! components, sum out each component's variables in an optimized order,
//! and product-reduce the plates the surviving factor no longer needs.
//! Execution then interprets the planned kernel list against the actual
//! tensors, recording every output on a [`Tape`] for the adjoint passes.
//!
//! Planning fails with [`EngineError::Intractable`] when a component's
//! surviving variables span the whole leaf, so no plate can be reduced;
//! the error carries the graph's structural witness when one exists.

mod exec;
mod plan;
mod tape;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::graph::{MinorWitness, PlatedFactorGraph, Violation};
use crate::oracle::{self, OracleError};
use crate::semiring::{fold_times_by, Semiring};
use crate::tensor::{pointwise_times, reduce_plus, union_dims, DimName, NamedTensor, TensorError};
use crate::Element;

pub use plan::{IterationSnapshot, OpId, OpNode, Plan, PlannedOp, Schedule, ScheduleStep};
pub use tape::Tape;

pub(crate) use plan::elimination_order;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum EngineError {
    #[error("graph is invalid ({} violations)", .0.len())]
    Invalid(Vec<Violation>),
    #[error("no tractable schedule: contracting at leaf {leaf:?} cannot shed a plate")]
    Intractable { leaf: BTreeSet<String>, witness: Option<MinorWitness> },
    #[error("kept variable {0:?} is not declared")]
    UnknownKeptVariable(String),
    #[error("kept variable {0:?} is plated; only plate-free variables can be kept")]
    KeptVariablePlated(String),
    #[error("{0:?} is not a variable dim")]
    NotAVariable(String),
    #[error("variable {var:?} passed with domain {given}, factors give {found}")]
    DomainConflict { var: String, given: usize, found: usize },
    #[error("loop invariant broken after iteration {iteration}")]
    LoopInvariant { iteration: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Engine options. `check_loop_invariant` re-contracts the remaining graph
/// with the brute-force oracle after every leaf iteration; it is
/// proportional to the full joint size, so keep it for small graphs and
/// tests. Graphs too large for the oracle skip the check silently.
#[derive(Clone, Copy, Debug, Default)]
pub struct Options {
    pub check_loop_invariant: bool,
}

/// A finished contraction: the result tensor (scalar unless variables were
/// kept), the executed tape, and the schedule it followed.
#[derive(Clone, Debug)]
pub struct Run<E: Element> {
    pub result: NamedTensor<E>,
    pub tape: Tape<E>,
    pub schedule: Schedule,
}

impl<E: Element> Run<E> {
    /// The scalar value of a full contraction.
    pub fn value(&self) -> E {
        self.result.item().expect("full contraction yields a scalar").clone()
    }
}

/// Contract the whole graph to a scalar in the given semiring.
pub fn tensor_variable_elimination<S: Semiring>(
    s: &S,
    g: &PlatedFactorGraph<S::Elem>,
    opts: &Options,
) -> Result<Run<S::Elem>, EngineError> {
    contract_keeping(s, g, &BTreeSet::new(), opts)
}

/// Contract the graph while keeping the named (plate-free) variables
/// un-eliminated; the result tensor has exactly their dims.
pub fn contract_keeping<S: Semiring>(
    s: &S,
    g: &PlatedFactorGraph<S::Elem>,
    keep: &BTreeSet<String>,
    opts: &Options,
) -> Result<Run<S::Elem>, EngineError> {
    let (plan, schedule) = plan::plan(g, keep)?;
    let tape = exec::execute(s, g, &plan)?;
    if opts.check_loop_invariant {
        check_loop_invariant(s, g, &plan, &tape)?;
    }
    Ok(Run { result: tape.result_tensor().clone(), tape, schedule })
}

/// Plan without tensor values: the exact schedule a run would execute,
/// with its operation count, or the structural error it would hit.
pub fn dry_run<T: Element>(g: &PlatedFactorGraph<T>) -> Result<Schedule, EngineError> {
    plan::plan(g, &BTreeSet::new()).map(|(_, schedule)| schedule)
}

/// After each leaf iteration the remaining graph, times the scalars
/// produced so far, must still contract to the original value.
fn check_loop_invariant<S: Semiring>(
    s: &S,
    g: &PlatedFactorGraph<S::Elem>,
    plan: &Plan,
    tape: &Tape<S::Elem>,
) -> Result<(), EngineError> {
    let expected = match oracle::brute_plated_sum_product(s, g) {
        Ok(v) => v,
        Err(OracleError::TooLarge { .. }) => return Ok(()),
        Err(_) => return Ok(()),
    };
    for (iteration, snap) in plan.snapshots.iter().enumerate() {
        let mut rest: PlatedFactorGraph<S::Elem> = PlatedFactorGraph::new();
        for (p, &m) in g.plates() {
            rest.add_plate(p.clone(), m).expect("fresh graph");
        }
        for v in &snap.remaining_vars {
            let var = g.variable(v).expect("remaining variables are declared");
            rest.add_variable(v.clone(), var.domain, var.plates.clone()).expect("fresh graph");
        }
        for (k, op) in snap.live.iter().enumerate() {
            rest.add_factor(format!("t{k}"), tape.tensor(*op).clone()).expect("fresh graph");
        }
        let value = match oracle::brute_plated_sum_product(s, &rest) {
            Ok(v) => v,
            Err(OracleError::TooLarge { .. }) => continue,
            Err(_) => return Err(EngineError::LoopInvariant { iteration }),
        };
        let scalars = fold_times_by(s, snap.scalars.len(), |i| {
            tape.tensor(snap.scalars[i]).item().expect("scalar op").clone()
        });
        let got = s.times(&value, &scalars);
        if !s.approx_eq(&got, &expected) {
            return Err(EngineError::LoopInvariant { iteration });
        }
    }
    Ok(())
}

/// Plain (plate-unaware) sum-product: pointwise-multiply the factors and
/// plus-reduce the given variables, computed by sequential elimination in
/// an optimized order. A variable absent from every factor contributes
/// `sum_of_ones(domain)`; each entry pairs the variable dim with its
/// domain so that case is well defined.
pub fn sum_product<S: Semiring>(
    s: &S,
    factors: &[NamedTensor<S::Elem>],
    vars: &[(DimName, usize)],
) -> Result<NamedTensor<S::Elem>, EngineError> {
    for (d, _) in vars {
        if d.is_plate() {
            return Err(EngineError::NotAVariable(d.name().to_string()));
        }
    }
    let lists: Vec<&[(DimName, usize)]> = factors.iter().map(|t| t.dims()).collect();
    let union = union_dims(&lists)?;
    let mut present = Vec::new();
    let mut absent = Vec::new();
    for (d, dom) in vars {
        match union.iter().find(|(u, _)| u == d) {
            Some((_, size)) => {
                if size != dom {
                    return Err(EngineError::DomainConflict {
                        var: d.name().to_string(),
                        given: *dom,
                        found: *size,
                    });
                }
                present.push(d.name().to_string());
            }
            None => absent.push(*dom),
        }
    }
    present.sort();
    present.dedup();

    let dim_sets: Vec<BTreeMap<DimName, usize>> = factors
        .iter()
        .map(|t| t.dims().iter().map(|(d, s)| (d.clone(), *s)).collect())
        .collect();
    let order = elimination_order(&dim_sets, &present);

    let mut live: Vec<NamedTensor<S::Elem>> = factors.to_vec();
    for v in &order {
        let vdim = DimName::variable(v);
        let mut gathered = Vec::new();
        let mut rest = Vec::new();
        for t in live {
            if t.dims().iter().any(|(d, _)| d == &vdim) {
                gathered.push(t);
            } else {
                rest.push(t);
            }
        }
        live = rest;
        debug_assert!(!gathered.is_empty());
        let mut acc = gathered.remove(0);
        for t in gathered {
            acc = pointwise_times(&acc, &t, s)?;
        }
        live.push(reduce_plus(&acc, std::slice::from_ref(&vdim), s)?);
    }

    let mut acc = NamedTensor::scalar(s.one());
    for t in &live {
        acc = pointwise_times(&acc, t, s)?;
    }
    for dom in absent {
        acc = pointwise_times(&acc, &NamedTensor::scalar(s.sum_of_ones(dom)), s)?;
    }
    Ok(acc)
}
