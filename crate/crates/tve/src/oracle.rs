//! Brute-force ground truth for small graphs.
//!
//! Everything here grounds a plated graph directly: enumerate every copy of
//! every variable, walk the full joint assignment space, and combine terms
//! with the semiring. No code is shared with the engine's scheduled
//! contraction, so agreement between the two is meaningful evidence.
//!
//! All entry points refuse joint spaces larger than [`MAX_TERMS`].

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::{PlatedFactorGraph, Violation};
use crate::semiring::{
    fold_plus_by, fold_times, fold_times_by, DivideSemiring, MaxSemiring, Semiring,
};
use crate::tensor::{DimName, NamedTensor, TensorError};
use crate::Element;

/// Upper bound on enumerated joint assignments.
pub const MAX_TERMS: u128 = 10_000_000;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum OracleError {
    #[error("graph is invalid ({} violations)", .0.len())]
    Invalid(Vec<Violation>),
    #[error("joint space has {terms} assignments, limit is {MAX_TERMS}")]
    TooLarge { terms: u128 },
    #[error("assignment is missing variable {0:?}")]
    MissingAssignment(String),
    #[error("assignment for {variable:?} should have dims {expected:?}")]
    AssignmentShape { variable: String, expected: Vec<String> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One fully-ground variable: a declared variable at one index combination
/// of its plates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundVar {
    pub name: String,
    /// Plate indices in sorted plate-name order.
    pub cell: Vec<(String, usize)>,
    pub domain: usize,
}

/// The enumerated joint space of a graph: ground variables in a fixed
/// order and, per joint assignment, the product of all ground factor
/// entries.
pub struct JointTable<E> {
    pub vars: Vec<GroundVar>,
    /// Row-major weight per joint assignment, indexed consistently with
    /// `vars` (last variable fastest).
    pub weights: Vec<E>,
    pub total: E,
}

impl<E> JointTable<E> {
    /// Flat row-major index of one joint assignment.
    pub fn index_of(&self, indices: &[usize]) -> usize {
        debug_assert_eq!(indices.len(), self.vars.len());
        let mut flat = 0;
        for (v, &i) in self.vars.iter().zip(indices) {
            debug_assert!(i < v.domain);
            flat = flat * v.domain + i;
        }
        flat
    }
}

struct GroundFactor<'g, T> {
    tensor: &'g NamedTensor<T>,
    /// Per tensor dim: a fixed plate index or a joint-vector slot.
    sources: Vec<DimSource>,
}

enum DimSource {
    Fixed(usize),
    Var(usize),
}

struct Ground<'g, T> {
    vars: Vec<GroundVar>,
    factors: Vec<GroundFactor<'g, T>>,
    terms: usize,
}

impl<'g, T: Element> Ground<'g, T> {
    fn build(g: &'g PlatedFactorGraph<T>) -> Result<Self, OracleError> {
        let violations = g.validate();
        if !violations.is_empty() {
            return Err(OracleError::Invalid(violations));
        }

        // Ground variables: sorted by name, plate cells row-major over
        // sorted plate names.
        let mut vars = Vec::new();
        let mut slot: BTreeMap<(&str, Vec<usize>), usize> = BTreeMap::new();
        for (name, var) in g.variables() {
            let plates: Vec<(&String, usize)> =
                var.plates.iter().map(|p| (p, g.plate_size(p).unwrap())).collect();
            let extents: Vec<usize> = plates.iter().map(|(_, m)| *m).collect();
            for cell in cells(&extents) {
                slot.insert((name.as_str(), cell.clone()), vars.len());
                let named = plates
                    .iter()
                    .map(|(p, _)| (*p).clone())
                    .zip(cell.iter().copied())
                    .collect();
                vars.push(GroundVar { name: name.clone(), cell: named, domain: var.domain });
            }
        }

        let mut terms: u128 = 1;
        for v in &vars {
            terms = terms.saturating_mul(v.domain as u128);
            if terms > MAX_TERMS {
                return Err(OracleError::TooLarge { terms });
            }
        }

        // Ground factors: one per plate cell of each factor; every tensor
        // dim resolves to either the cell's fixed plate index or the slot
        // of the neighbor variable's matching copy.
        let mut factors = Vec::new();
        for (_, f) in g.factors() {
            let t = f.tensor();
            let plate_dims: Vec<(&str, usize)> = t
                .dims()
                .iter()
                .filter(|(d, _)| d.is_plate())
                .map(|(d, s)| (d.name(), *s))
                .collect();
            let extents: Vec<usize> = plate_dims.iter().map(|(_, s)| *s).collect();
            for cell in cells(&extents) {
                let by_plate: BTreeMap<&str, usize> =
                    plate_dims.iter().map(|(p, _)| *p).zip(cell.iter().copied()).collect();
                let sources = t
                    .dims()
                    .iter()
                    .map(|(d, _)| {
                        if d.is_plate() {
                            DimSource::Fixed(by_plate[d.name()])
                        } else {
                            let var = &g.variables()[d.name()];
                            let vcell: Vec<usize> =
                                var.plates.iter().map(|p| by_plate[p.as_str()]).collect();
                            DimSource::Var(slot[&(d.name(), vcell)])
                        }
                    })
                    .collect();
                factors.push(GroundFactor { tensor: t, sources });
            }
        }

        Ok(Self { vars, factors, terms: terms as usize })
    }

    /// Decode a flat joint index (row-major, last variable fastest).
    fn decode(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.vars.len()];
        for (k, v) in self.vars.iter().enumerate().rev() {
            out[k] = flat % v.domain;
            flat /= v.domain;
        }
        out
    }

    fn term<S: Semiring<Elem = T>>(&self, s: &S, joint: &[usize]) -> T {
        fold_times_by(s, self.factors.len(), |k| {
            let f = &self.factors[k];
            let idx: Vec<usize> = f
                .sources
                .iter()
                .map(|src| match src {
                    DimSource::Fixed(i) => *i,
                    DimSource::Var(slot) => joint[*slot],
                })
                .collect();
            f.tensor.at(&idx).clone()
        })
    }
}

/// Row-major enumeration of all index combinations for the given extents.
fn cells(extents: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = extents.iter().product();
    (0..total)
        .map(|mut flat| {
            let mut cell = vec![0; extents.len()];
            for (k, &m) in extents.iter().enumerate().rev() {
                cell[k] = flat % m;
                flat /= m;
            }
            cell
        })
        .collect()
}

/// Total contraction value by full enumeration.
pub fn brute_plated_sum_product<S: Semiring>(
    s: &S,
    g: &PlatedFactorGraph<S::Elem>,
) -> Result<S::Elem, OracleError> {
    let ground = Ground::build(g)?;
    Ok(fold_plus_by(s, ground.terms, |flat| {
        let joint = ground.decode(flat);
        ground.term(s, &joint)
    }))
}

/// Full joint table (small graphs only).
pub fn brute_joint<S: Semiring>(
    s: &S,
    g: &PlatedFactorGraph<S::Elem>,
) -> Result<JointTable<S::Elem>, OracleError> {
    let ground = Ground::build(g)?;
    let weights: Vec<S::Elem> = (0..ground.terms)
        .map(|flat| {
            let joint = ground.decode(flat);
            ground.term(s, &joint)
        })
        .collect();
    let total = fold_plus_by(s, weights.len(), |i| weights[i].clone());
    Ok(JointTable { vars: ground.vars, weights, total })
}

/// Per-variable plated marginals by enumeration: for each variable the
/// result has dims (its plates, itself). Unnormalized; the total is
/// returned alongside.
pub fn brute_marginals<S: DivideSemiring>(
    s: &S,
    g: &PlatedFactorGraph<S::Elem>,
) -> Result<(BTreeMap<String, NamedTensor<S::Elem>>, S::Elem), OracleError> {
    let ground = Ground::build(g)?;
    let mut acc: Vec<Vec<S::Elem>> =
        ground.vars.iter().map(|v| vec![s.zero(); v.domain]).collect();
    let mut total = s.zero();
    for flat in 0..ground.terms {
        let joint = ground.decode(flat);
        let term = ground.term(s, &joint);
        total = s.plus(&total, &term);
        for (slot, &i) in joint.iter().enumerate() {
            acc[slot][i] = s.plus(&acc[slot][i], &term);
        }
    }

    // Reassemble plated tensors: ground copies of one variable appear
    // consecutively, plate cells row-major, matching from_flat's layout
    // for dims (sorted plates, then the variable itself).
    let mut out = BTreeMap::new();
    let mut k = 0;
    for (name, var) in g.variables() {
        let mut dims: Vec<(DimName, usize)> = var
            .plates
            .iter()
            .map(|p| (DimName::plate(p), g.plate_size(p).unwrap()))
            .collect();
        dims.push((DimName::variable(name), var.domain));
        let copies: usize = var.plates.iter().map(|p| g.plate_size(p).unwrap()).product();
        let mut values = Vec::with_capacity(copies * var.domain);
        for _ in 0..copies {
            values.extend(acc[k].iter().cloned());
            k += 1;
        }
        out.insert(name.clone(), NamedTensor::from_flat(dims, values)?);
    }
    Ok((out, total))
}

/// Highest-scoring joint assignment by enumeration. Ties resolve to the
/// lowest flat index. Returns per-variable index tensors over plate dims
/// and the score of the winner under [`joint_score`].
pub fn brute_map<S: MaxSemiring>(
    s: &S,
    g: &PlatedFactorGraph<S::Elem>,
) -> Result<(BTreeMap<String, NamedTensor<usize>>, S::Elem), OracleError> {
    let ground = Ground::build(g)?;
    let mut best = s.zero();
    let mut best_flat = 0;
    for flat in 0..ground.terms {
        let joint = ground.decode(flat);
        let term = ground.term(s, &joint);
        if flat == 0 || s.beats(&term, &best) {
            best = term;
            best_flat = flat;
        }
    }
    let joint = ground.decode(best_flat);

    let mut out = BTreeMap::new();
    let mut k = 0;
    for (name, var) in g.variables() {
        let dims: Vec<(DimName, usize)> = var
            .plates
            .iter()
            .map(|p| (DimName::plate(p), g.plate_size(p).unwrap()))
            .collect();
        let copies: usize = var.plates.iter().map(|p| g.plate_size(p).unwrap()).product();
        let values: Vec<usize> = joint[k..k + copies].to_vec();
        k += copies;
        if dims.is_empty() {
            out.insert(name.clone(), NamedTensor::scalar(values[0]));
        } else {
            out.insert(name.clone(), NamedTensor::from_flat(dims, values)?);
        }
    }
    let score = joint_score(s, g, &out)?;
    Ok((out, score))
}

/// Canonical evaluation of the full product of factors at one assignment:
/// factors in sorted name order, plate cells row-major, combined with the
/// fixed balanced fold. Engine and oracle both report scores through this
/// function so exact comparison is meaningful.
pub fn joint_score<S: Semiring>(
    s: &S,
    g: &PlatedFactorGraph<S::Elem>,
    assignment: &BTreeMap<String, NamedTensor<usize>>,
) -> Result<S::Elem, OracleError> {
    for (name, var) in g.variables() {
        let Some(t) = assignment.get(name) else {
            return Err(OracleError::MissingAssignment(name.clone()));
        };
        let expected: Vec<&String> = var.plates.iter().collect();
        let have: Vec<&str> = t.dims().iter().map(|(d, _)| d.name()).collect();
        if expected.iter().map(|p| p.as_str()).ne(have.iter().copied()) {
            return Err(OracleError::AssignmentShape {
                variable: name.clone(),
                expected: var.plates.iter().cloned().collect(),
            });
        }
    }

    let mut entries = Vec::new();
    for (_, f) in g.factors() {
        let t = f.tensor();
        let plate_dims: Vec<(&str, usize)> = t
            .dims()
            .iter()
            .filter(|(d, _)| d.is_plate())
            .map(|(d, s)| (d.name(), *s))
            .collect();
        let extents: Vec<usize> = plate_dims.iter().map(|(_, s)| *s).collect();
        for cell in cells(&extents) {
            let by_plate: BTreeMap<&str, usize> =
                plate_dims.iter().map(|(p, _)| *p).zip(cell.iter().copied()).collect();
            let idx: Vec<usize> = t
                .dims()
                .iter()
                .map(|(d, _)| {
                    if d.is_plate() {
                        by_plate[d.name()]
                    } else {
                        let var = &g.variables()[d.name()];
                        let vcell: Vec<usize> =
                            var.plates.iter().map(|p| by_plate[p.as_str()]).collect();
                        *assignment[d.name()].at(&vcell)
                    }
                })
                .collect();
            entries.push(t.at(&idx).clone());
        }
    }
    Ok(fold_times(s, &entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::semiring::{LogSumExpProduct, MaxProduct, RealSumProduct};

    const REAL: RealSumProduct<f64> = RealSumProduct::new();
    const LOG: LogSumExpProduct<f64> = LogSumExpProduct::new();
    const MAXP: MaxProduct<f64> = MaxProduct::new();

    fn single_factor(values: Vec<f64>) -> PlatedFactorGraph<f64> {
        let mut g = PlatedFactorGraph::new();
        g.add_variable("x", values.len(), Vec::<String>::new()).unwrap();
        g.add_factor(
            "f",
            NamedTensor::from_flat(vec![(DimName::variable("x"), values.len())], values).unwrap(),
        )
        .unwrap();
        g
    }

    #[test]
    fn single_factor_sums() {
        let g = single_factor(vec![2.0, 6.0]);
        assert_eq!(brute_plated_sum_product(&REAL, &g).unwrap(), 8.0);
    }

    #[test]
    fn plate_replication_multiplies_contributions() {
        // one variable on a plate of size 2, factor [1, 2] per copy:
        // total = (1+2)^2
        let mut g = PlatedFactorGraph::new();
        g.add_plate("i", 2).unwrap();
        g.add_variable("y", 2, ["i"]).unwrap();
        let t = NamedTensor::from_flat(
            vec![(DimName::plate("i"), 2), (DimName::variable("y"), 2)],
            vec![1.0, 2.0, 1.0, 2.0],
        )
        .unwrap();
        g.add_factor("G", t).unwrap();
        assert_eq!(brute_plated_sum_product(&REAL, &g).unwrap(), 9.0);
    }

    #[test]
    fn isolated_variable_contributes_its_domain() {
        let mut g = single_factor(vec![5.0]);
        g.add_variable("v", 3, Vec::<String>::new()).unwrap();
        assert_eq!(brute_plated_sum_product(&REAL, &g).unwrap(), 15.0);
    }

    #[test]
    fn grounding_matches_hand_expansion() {
        // v{i} - h{i}(v, u) with global u: total = sum_u prod_i sum_v h
        let mut g = PlatedFactorGraph::new();
        g.add_plate("i", 2).unwrap();
        g.add_variable("u", 2, Vec::<String>::new()).unwrap();
        g.add_variable("v", 2, ["i"]).unwrap();
        let t = NamedTensor::from_flat(
            vec![(DimName::plate("i"), 2), (DimName::variable("u"), 2), (DimName::variable("v"), 2)],
            vec![0.3, 0.7, 0.6, 0.4, 0.2, 0.8, 0.9, 0.1],
        )
        .unwrap();
        g.add_factor("h", t.clone()).unwrap();
        let by_hand: f64 = (0..2)
            .map(|u| {
                (0..2)
                    .map(|i| {
                        (0..2)
                            .map(|v| *t.at(&[i, u, v]))
                            .sum::<f64>()
                    })
                    .product::<f64>()
            })
            .sum();
        let got = brute_plated_sum_product(&REAL, &g).unwrap();
        assert!((got - by_hand).abs() < 1e-12);
    }

    #[test]
    fn log_space_agrees_with_real() {
        let g = models::plate_chain(2, 2, 2, 11);
        let real = brute_plated_sum_product(&REAL, &g).unwrap();
        let log = brute_plated_sum_product(&LOG, &models::log_space(&g)).unwrap();
        assert!((real.ln() - log).abs() < 1e-9, "{} vs {}", real.ln(), log);
    }

    #[test]
    fn marginals_sum_to_total() {
        let g = models::global_local(2, 2, 2, 3, 5);
        let (marg, total) = brute_marginals(&REAL, &g).unwrap();
        let y = &marg["Y"];
        assert_eq!(
            y.dims().iter().map(|(d, s)| (d.name().to_string(), *s)).collect::<Vec<_>>(),
            vec![("i".to_string(), 2), ("Y".to_string(), 3)]
        );
        // summing any single copy's marginal over its domain gives the total
        for i in 0..2 {
            let s: f64 = (0..3)
                .map(|k| *y.get(&[(DimName::plate("i"), i), (DimName::variable("Y"), k)]).unwrap())
                .sum();
            assert!((s - total).abs() / total < 1e-9);
        }
        let x = &marg["X"];
        let sx: f64 = (0..2).map(|k| *x.get(&[(DimName::variable("X"), k)]).unwrap()).sum();
        assert!((sx - total).abs() / total < 1e-9);
    }

    #[test]
    fn map_finds_the_peak() {
        let mut g = PlatedFactorGraph::new();
        g.add_variable("x", 2, Vec::<String>::new()).unwrap();
        g.add_variable("y", 2, Vec::<String>::new()).unwrap();
        let t = NamedTensor::from_flat(
            vec![(DimName::variable("x"), 2), (DimName::variable("y"), 2)],
            vec![0.1, 0.2, 0.9, 0.3],
        )
        .unwrap();
        g.add_factor("f", t).unwrap();
        let (assignment, score) = brute_map(&MAXP, &g).unwrap();
        assert_eq!(*assignment["x"].item().unwrap(), 1);
        assert_eq!(*assignment["y"].item().unwrap(), 0);
        assert_eq!(score, 0.9);
    }

    #[test]
    fn map_ties_take_lowest_flat_index() {
        let g = single_factor(vec![0.5, 0.5]);
        let (assignment, score) = brute_map(&MAXP, &g).unwrap();
        assert_eq!(*assignment["x"].item().unwrap(), 0);
        assert_eq!(score, 0.5);
    }

    #[test]
    fn joint_table_indexing() {
        let g = models::plate_chain(2, 2, 2, 1);
        let table = brute_joint(&REAL, &g).unwrap();
        // v has 4 copies, w 2, x 1, y 2, z 4: 13 binary ground vars
        assert_eq!(table.vars.len(), 13);
        assert_eq!(table.weights.len(), 1 << 13);
        let total2 = brute_plated_sum_product(&REAL, &g).unwrap();
        assert!((table.total - total2).abs() / total2 < 1e-12);
        let idx = table.index_of(&vec![1; 13]);
        assert_eq!(idx, (1 << 13) - 1);
    }

    #[test]
    fn joint_score_matches_term() {
        let g = models::global_local(2, 2, 2, 2, 9);
        let (assignment, score) = brute_map(&MAXP, &g).unwrap();
        // recompute by enumerating the table and taking the max weight
        let table = brute_joint(&REAL, &g).unwrap();
        let max = table.weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((score - max).abs() / max < 1e-12);
        // score is also reproducible directly
        let again = joint_score(&MAXP, &g, &assignment).unwrap();
        assert_eq!(score, again);
    }

    #[test]
    fn size_guard_trips() {
        let mut g = PlatedFactorGraph::new();
        g.add_plate("i", 100).unwrap();
        g.add_plate("j", 100).unwrap();
        g.add_variable("v", 10, ["i", "j"]).unwrap();
        g.add_factor(
            "f",
            NamedTensor::filled(
                vec![
                    (DimName::plate("i"), 100),
                    (DimName::plate("j"), 100),
                    (DimName::variable("v"), 10),
                ],
                1.0,
            )
            .unwrap(),
        )
        .unwrap();
        assert!(matches!(
            brute_plated_sum_product(&REAL, &g),
            Err(OracleError::TooLarge { .. })
        ));
    }

    #[test]
    fn invalid_graphs_are_refused() {
        let mut g = PlatedFactorGraph::new();
        g.add_plate("a", 2).unwrap();
        g.add_variable("v", 2, ["a"]).unwrap();
        g.add_factor(
            "f",
            NamedTensor::from_flat(vec![(DimName::variable("v"), 2)], vec![1.0, 2.0]).unwrap(),
        )
        .unwrap();
        assert!(matches!(brute_plated_sum_product(&REAL, &g), Err(OracleError::Invalid(_))));
    }
}
