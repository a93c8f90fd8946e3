//! Backward passes over an executed [`Tape`]: all-variable marginals, MAP
//! assignment, and joint sampling.
//!
//! All three run the engine forward once, then walk the tape backwards.
//! Marginals propagate an adjoint tensor through each node (division
//! undoes plate products, with the semiring's zero guard). MAP and
//! sampling instead propagate cell selections: at each variable reduction
//! the walker picks an index per selected cell, by argmax or by a
//! categorical draw, and plate reductions fan each selection out to every
//! plate index.
//!
//! [`Tape`]: crate::engine::Tape

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::engine::{self, EngineError, Options, PlannedOp, Tape};
use crate::graph::PlatedFactorGraph;
use crate::oracle;
use crate::rng;
use crate::semiring::{DivideSemiring, MaxSemiring, SampleSemiring};
use crate::tensor::{
    pointwise_divide, pointwise_times, reduce_plus, DimName, NamedTensor, TensorError,
};
use crate::Element;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AdjointError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("total weight is the semiring zero; nothing to sample")]
    ZeroPartition,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Per-variable marginal tensors, each over dims (the variable's plates,
/// the variable itself).
///
/// When normalized, plus-folding a marginal over the variable dim gives
/// the semiring one at every plate index. Divisions by the semiring zero
/// are guarded to zero and counted in `zero_divisions`; a nonzero count
/// means some plate slice had zero total weight and its marginals are
/// zeros rather than meaningful.
#[derive(Clone, Debug)]
pub struct MarginalSet<E: Element> {
    marginals: BTreeMap<String, NamedTensor<E>>,
    normalized: bool,
    zero_divisions: usize,
}

impl<E: Element> MarginalSet<E> {
    pub fn get(&self, var: &str) -> Option<&NamedTensor<E>> {
        self.marginals.get(var)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NamedTensor<E>)> {
        self.marginals.iter()
    }

    pub fn len(&self) -> usize {
        self.marginals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marginals.is_empty()
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn zero_divisions(&self) -> usize {
        self.zero_divisions
    }

    pub fn into_map(self) -> BTreeMap<String, NamedTensor<E>> {
        self.marginals
    }
}

/// One joint assignment: per variable an index tensor over its plate dims,
/// plus the product of all factors evaluated at those indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment<E> {
    pub indices: BTreeMap<String, NamedTensor<usize>>,
    pub score: E,
}

/// Normalized marginals for every variable, with the partition value.
pub fn marginals<S: DivideSemiring>(
    s: &S,
    g: &PlatedFactorGraph<S::Elem>,
) -> Result<(MarginalSet<S::Elem>, S::Elem), AdjointError> {
    marginal_pass(s, g, true)
}

/// As [`marginals`], without the per-cell normalization.
pub fn marginals_unnormalized<S: DivideSemiring>(
    s: &S,
    g: &PlatedFactorGraph<S::Elem>,
) -> Result<(MarginalSet<S::Elem>, S::Elem), AdjointError> {
    marginal_pass(s, g, false)
}

fn marginal_pass<S: DivideSemiring>(
    s: &S,
    g: &PlatedFactorGraph<S::Elem>,
    normalize: bool,
) -> Result<(MarginalSet<S::Elem>, S::Elem), AdjointError> {
    let run = engine::tensor_variable_elimination(s, g, &Options::default())?;
    let tape = &run.tape;
    let mut zero_divisions = 0usize;

    // Backward adjoint per node. Every node feeds exactly one consumer, so
    // a plain slot per node suffices.
    let mut beta: Vec<Option<NamedTensor<S::Elem>>> = vec![None; tape.len()];
    beta[tape.result_id()] = Some(NamedTensor::scalar(s.one()));
    for id in (0..tape.len()).rev() {
        let Some(b) = beta[id].clone() else { continue };
        match &tape.nodes()[id].op {
            PlannedOp::Mul { a: ida, b: idb } => {
                let ta = tape.tensor(*ida);
                let tb = tape.tensor(*idb);
                for (input, other) in [(*ida, tb), (*idb, ta)] {
                    let prod = pointwise_times(&b, other, s)?;
                    let keep: BTreeSet<&DimName> =
                        tape.tensor(input).dims().iter().map(|(d, _)| d).collect();
                    let extra: Vec<DimName> = prod
                        .dims()
                        .iter()
                        .map(|(d, _)| d.clone())
                        .filter(|d| !keep.contains(d))
                        .collect();
                    let contrib = reduce_plus(&prod, &extra, s)?;
                    debug_assert!(beta[input].is_none());
                    beta[input] = Some(contrib);
                }
            }
            PlannedOp::SumReduce { input, .. } => {
                let target = tape.tensor(*input).dims().to_vec();
                beta[*input] = Some(b.broadcast_to(&target)?);
            }
            PlannedOp::ProdReduce { input, .. } => {
                let inp = tape.tensor(*input);
                let num = pointwise_times(&b, tape.tensor(id), s)?;
                zero_divisions += inp.to_vec().iter().filter(|x| s.is_zero(x)).count();
                beta[*input] = Some(pointwise_divide(&num, inp, s)?);
            }
            PlannedOp::Load { .. } | PlannedOp::Ones | PlannedOp::OneScalar => {}
        }
    }

    // Each variable's sole plus-reduction: the adjoint times the input,
    // summed over the other variables still in flight, is its plated
    // unnormalized marginal.
    let mut out = BTreeMap::new();
    for node in tape.nodes() {
        let PlannedOp::SumReduce { input, dim } = &node.op else { continue };
        let inp = tape.tensor(*input);
        let b = beta[*input].as_ref().expect("reductions lie on the result path");
        let joint = pointwise_times(b, inp, s)?;
        let others: Vec<DimName> = inp
            .dims()
            .iter()
            .map(|(d, _)| d.clone())
            .filter(|d| !d.is_plate() && d != dim)
            .collect();
        let mut m = reduce_plus(&joint, &others, s)?;
        if normalize {
            let denom = reduce_plus(&m, std::slice::from_ref(dim), s)?;
            zero_divisions += denom.to_vec().iter().filter(|x| s.is_zero(x)).count();
            m = pointwise_divide(&m, &denom, s)?;
        }
        let prev = out.insert(dim.name().to_string(), m);
        debug_assert!(prev.is_none(), "one reduction per variable");
    }

    Ok((
        MarginalSet { marginals: out, normalized: normalize, zero_divisions },
        run.value(),
    ))
}

/// A cell selection: one index per dim of a node's tensor.
type Selection = BTreeMap<DimName, usize>;

fn restrict(sel: &Selection, dims: &[(DimName, usize)]) -> Selection {
    dims.iter().map(|(d, _)| (d.clone(), sel[d])).collect()
}

/// Walk the tape backwards, resolving every variable reduction with
/// `choose` and fanning plate reductions out to all indices. Returns the
/// per-variable index tensors.
fn selection_walk<E: Element>(
    tape: &Tape<E>,
    mut choose: impl FnMut(&[E]) -> usize,
) -> BTreeMap<String, NamedTensor<usize>> {
    let mut sels: Vec<Vec<Selection>> = vec![Vec::new(); tape.len()];
    if tape.result_tensor().is_scalar() {
        sels[tape.result_id()].push(Selection::new());
    }
    let mut chosen: BTreeMap<String, (Vec<(DimName, usize)>, BTreeMap<Vec<usize>, usize>)> =
        BTreeMap::new();

    for id in (0..tape.len()).rev() {
        let list = std::mem::take(&mut sels[id]);
        if list.is_empty() {
            continue;
        }
        let mut list = list;
        list.sort();
        debug_assert!(list.windows(2).all(|w| w[0] != w[1]), "each cell selected once");
        match &tape.nodes()[id].op {
            PlannedOp::Mul { a, b } => {
                let da = tape.tensor(*a).dims().to_vec();
                let db = tape.tensor(*b).dims().to_vec();
                for sel in &list {
                    sels[*a].push(restrict(sel, &da));
                    sels[*b].push(restrict(sel, &db));
                }
            }
            PlannedOp::SumReduce { input, dim } => {
                let inp = tape.tensor(*input);
                let domain = inp
                    .dims()
                    .iter()
                    .find(|(d, _)| d == dim)
                    .map(|(_, s)| *s)
                    .expect("reduced dim is present");
                let plate_dims: Vec<(DimName, usize)> =
                    inp.dims().iter().filter(|(d, _)| d.is_plate()).cloned().collect();
                let entry = chosen
                    .entry(dim.name().to_string())
                    .or_insert_with(|| (plate_dims.clone(), BTreeMap::new()));
                for sel in &list {
                    let weights: Vec<E> = (0..domain)
                        .map(|k| {
                            let mut idx: Vec<(DimName, usize)> =
                                sel.iter().map(|(d, i)| (d.clone(), *i)).collect();
                            idx.push((dim.clone(), k));
                            inp.get(&idx).expect("full index").clone()
                        })
                        .collect();
                    let k = choose(&weights);
                    let cell: Vec<usize> = plate_dims.iter().map(|(d, _)| sel[d]).collect();
                    let dup = entry.1.insert(cell, k);
                    debug_assert!(dup.is_none(), "each plate instance resolved once");
                    let mut next = sel.clone();
                    next.insert(dim.clone(), k);
                    sels[*input].push(next);
                }
            }
            PlannedOp::ProdReduce { input, dim } => {
                let size = tape
                    .tensor(*input)
                    .dims()
                    .iter()
                    .find(|(d, _)| d == dim)
                    .map(|(_, s)| *s)
                    .expect("reduced dim is present");
                for sel in &list {
                    for i in 0..size {
                        let mut next = sel.clone();
                        next.insert(dim.clone(), i);
                        sels[*input].push(next);
                    }
                }
            }
            PlannedOp::Load { .. } | PlannedOp::Ones | PlannedOp::OneScalar => {}
        }
    }

    chosen
        .into_iter()
        .map(|(var, (plate_dims, cells))| {
            let tensor = if plate_dims.is_empty() {
                NamedTensor::scalar(cells[&Vec::new()])
            } else {
                let expected: usize = plate_dims.iter().map(|(_, s)| s).product();
                debug_assert_eq!(cells.len(), expected, "all plate instances resolved");
                let values: Vec<usize> = cells.into_values().collect();
                NamedTensor::from_flat(plate_dims, values).expect("cells cover the plate box")
            };
            (var, tensor)
        })
        .collect()
}

/// Highest-scoring joint assignment: a max-semiring forward pass, then
/// argmax backtracking (ties keep the lowest index). The score is the
/// factor product at the returned indices.
pub fn map_assignment<S: MaxSemiring>(
    s: &S,
    g: &PlatedFactorGraph<S::Elem>,
) -> Result<Assignment<S::Elem>, AdjointError> {
    let run = engine::tensor_variable_elimination(s, g, &Options::default())?;
    let indices = selection_walk(&run.tape, |weights| {
        let mut best = 0;
        for (k, w) in weights.iter().enumerate().skip(1) {
            if s.beats(w, &weights[best]) {
                best = k;
            }
        }
        best
    });
    let score = oracle::joint_score(s, g, &indices).expect("walk covers every variable");
    Ok(Assignment { indices, score })
}

/// Draw `n` independent joint samples. Deterministic for a given seed:
/// sample `k` uses its own counter stream, so the sequence is stable
/// regardless of `n` or evaluation order. Factor values must be
/// nonnegative weights in the semiring's carrier.
pub fn sample<S: SampleSemiring>(
    s: &S,
    g: &PlatedFactorGraph<S::Elem>,
    seed: u64,
    n: usize,
) -> Result<Vec<Assignment<S::Elem>>, AdjointError> {
    let run = engine::tensor_variable_elimination(s, g, &Options::default())?;
    if s.is_zero(&run.value()) {
        return Err(AdjointError::ZeroPartition);
    }
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut stream = rng::stream(seed, k as u64);
        let indices =
            selection_walk(&run.tape, |weights| s.draw(weights, rng::uniform(&mut stream)));
        let score = oracle::joint_score(s, g, &indices).expect("walk covers every variable");
        out.push(Assignment { indices, score });
    }
    Ok(out)
}
