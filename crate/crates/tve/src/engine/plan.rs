//! Scheduling: leaf plate selection, leaf-subgraph partitioning, variable
//! elimination ordering, and emission of the flat op list the executor
//! interprets. Planning works on shapes alone, so a dry run costs nothing
//! but bookkeeping.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use itertools::Itertools;

use crate::graph::{partition, Component, PlatedFactorGraph};
use crate::tensor::DimName;
use crate::Element;

use super::EngineError;

pub type OpId = usize;

/// One primitive kernel in a contraction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlannedOp {
    /// Fetch a factor's tensor from the input graph.
    Load { factor: String },
    /// Tensor of semiring ones over this node's dims.
    Ones,
    /// Scalar semiring one.
    OneScalar,
    /// Entrywise product over the aligned dim union.
    Mul { a: OpId, b: OpId },
    /// Plus-reduce one variable dim.
    SumReduce { input: OpId, dim: DimName },
    /// Product-reduce one plate dim.
    ProdReduce { input: OpId, dim: DimName },
}

/// An op plus its output shape and scalar-operation cost.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpNode {
    pub op: PlannedOp,
    /// Output dims in canonical order.
    pub dims: Vec<(DimName, usize)>,
    pub cost: u64,
}

/// Graph state after one leaf iteration, for the loop-invariant check.
#[derive(Clone, Debug)]
pub struct IterationSnapshot {
    /// Ops whose tensors are the still-live factors.
    pub live: Vec<OpId>,
    /// Scalar ops accumulated so far.
    pub scalars: Vec<OpId>,
    /// Variables not yet eliminated (kept ones included).
    pub remaining_vars: Vec<String>,
}

/// Complete executable contraction recipe.
#[derive(Clone, Debug)]
pub struct Plan {
    pub ops: Vec<OpNode>,
    pub result: OpId,
    pub keep: BTreeSet<String>,
    pub snapshots: Vec<IterationSnapshot>,
}

/// One processed component: which leaf it ran under, what it eliminated,
/// and what survived.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduleStep {
    pub leaf: BTreeSet<String>,
    pub component_vars: Vec<String>,
    pub component_factors: Vec<String>,
    pub produced_vars: Vec<String>,
    pub product_reduced: BTreeSet<String>,
}

/// Ordered trace of an elimination run, with its cost model total.
#[derive(Clone, Debug)]
pub struct Schedule {
    pub steps: Vec<ScheduleStep>,
    /// Number of leaf iterations (isolated-variable cleanup not counted).
    pub iterations: usize,
    /// Scalar-operation count over all planned kernels; worker-count
    /// independent.
    pub total_ops: u64,
}

fn set_str<S: AsRef<str>>(items: impl IntoIterator<Item = S>) -> String {
    format!("{{{}}}", items.into_iter().map(|s| s.as_ref().to_string()).join(","))
}

impl fmt::Display for ScheduleStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "L={} eliminate={} produce_vars={} product_reduce={}",
            set_str(&self.leaf),
            set_str(&self.component_vars),
            set_str(&self.produced_vars),
            set_str(&self.product_reduced),
        )
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for step in &self.steps {
            writeln!(f, "{step}")?;
        }
        Ok(())
    }
}

struct Live {
    dims: BTreeMap<DimName, usize>,
    plates: BTreeSet<String>,
    vars: BTreeSet<String>,
    op: OpId,
}

fn table_size(dims: &BTreeMap<DimName, usize>) -> u64 {
    dims.values().fold(1u64, |a, &s| a.saturating_mul(s as u64))
}

struct Planner<'g, T: Element> {
    g: &'g PlatedFactorGraph<T>,
    ops: Vec<OpNode>,
    /// Live factors keyed by original name, or by a NUL-prefixed synthetic
    /// key (sorts first, cannot collide with JSON-derived names).
    lives: BTreeMap<String, Live>,
    scalars: Vec<OpId>,
    steps: Vec<ScheduleStep>,
    snapshots: Vec<IterationSnapshot>,
    iterations: usize,
    /// Not-yet-eliminated, eliminable variables.
    remaining: BTreeSet<String>,
    keep: BTreeSet<String>,
    synth: usize,
}

pub(super) fn plan<T: Element>(
    g: &PlatedFactorGraph<T>,
    keep: &BTreeSet<String>,
) -> Result<(Plan, Schedule), EngineError> {
    let violations = g.validate();
    if !violations.is_empty() {
        return Err(EngineError::Invalid(violations));
    }
    for k in keep {
        let Some(var) = g.variable(k) else {
            return Err(EngineError::UnknownKeptVariable(k.clone()));
        };
        if !var.plates.is_empty() {
            return Err(EngineError::KeptVariablePlated(k.clone()));
        }
    }

    let p = Planner {
        g,
        ops: Vec::new(),
        lives: BTreeMap::new(),
        scalars: Vec::new(),
        steps: Vec::new(),
        snapshots: Vec::new(),
        iterations: 0,
        remaining: g.variables().keys().filter(|v| !keep.contains(*v)).cloned().collect(),
        keep: keep.clone(),
        synth: 0,
    };
    p.run()
}

impl<'g, T: Element> Planner<'g, T> {
    fn push(&mut self, op: PlannedOp, dims: &BTreeMap<DimName, usize>) -> OpId {
        let cost = match &op {
            PlannedOp::Mul { .. } => table_size(dims),
            PlannedOp::SumReduce { input, .. } | PlannedOp::ProdReduce { input, .. } => {
                self.ops[*input].dims.iter().fold(1u64, |a, (_, s)| a.saturating_mul(*s as u64))
            }
            _ => 0,
        };
        let dims: Vec<(DimName, usize)> = dims.iter().map(|(d, s)| (d.clone(), *s)).collect();
        self.ops.push(OpNode { op, dims, cost });
        self.ops.len() - 1
    }

    fn var_plates(&self, v: &str) -> &BTreeSet<String> {
        &self.g.variable(v).expect("declared variable").plates
    }

    fn run(mut self) -> Result<(Plan, Schedule), EngineError> {
        // Load every factor.
        let factor_names: Vec<String> = self.g.factors().keys().cloned().collect();
        for name in factor_names {
            let f = self.g.factor(&name).unwrap();
            let dims: BTreeMap<DimName, usize> =
                f.tensor().dims().iter().map(|(d, s)| (d.clone(), *s)).collect();
            let op = self.push(PlannedOp::Load { factor: name.clone() }, &dims);
            self.lives.insert(
                name.clone(),
                Live { dims, plates: f.plates().clone(), vars: f.vars().clone(), op },
            );
        }

        // Kept variables no factor touches become explicit ones-tensors so
        // the result still carries their dims.
        for k in self.keep.clone() {
            if !self.lives.values().any(|l| l.vars.contains(&k)) {
                let dom = self.g.variable(&k).unwrap().domain;
                let dims = BTreeMap::from([(DimName::variable(&k), dom)]);
                let op = self.push(PlannedOp::Ones, &dims);
                let key = format!("\u{0}#{}", self.synth);
                self.synth += 1;
                self.lives.insert(
                    key,
                    Live { dims, plates: BTreeSet::new(), vars: BTreeSet::from([k]), op },
                );
            }
        }

        self.sweep_isolated();
        loop {
            let has_plated = self.lives.values().any(|l| !l.plates.is_empty());
            if self.lives.is_empty() || (!has_plated && self.remaining.is_empty()) {
                break;
            }
            let leaf = self.choose_leaf();
            self.iterations += 1;

            let vl: BTreeSet<String> = self
                .remaining
                .iter()
                .filter(|v| self.var_plates(v) == &leaf)
                .cloned()
                .collect();
            let fl: BTreeSet<String> =
                self.lives.iter().filter(|(_, l)| l.plates == leaf).map(|(k, _)| k.clone()).collect();
            let mut edges = BTreeSet::new();
            for f in &fl {
                for v in self.lives[f].vars.intersection(&vl) {
                    edges.insert((v.clone(), f.clone()));
                }
            }
            for comp in partition(&vl, &fl, &edges) {
                self.process_component(&leaf, &comp)?;
            }

            self.snapshots.push(IterationSnapshot {
                live: self.lives.values().map(|l| l.op).collect(),
                scalars: self.scalars.clone(),
                remaining_vars: self.remaining.union(&self.keep).cloned().collect(),
            });
        }
        debug_assert!(self.remaining.is_empty());

        // Final combine: scalars in creation order, then kept-variable
        // factors in key order.
        let parts: Vec<OpId> =
            self.scalars.iter().copied().chain(self.lives.values().map(|l| l.op)).collect();
        let result = match parts.split_first() {
            None => self.push(PlannedOp::OneScalar, &BTreeMap::new()),
            Some((&first, rest)) => {
                let mut acc = first;
                for &id in rest {
                    let dims = self.union_of(acc, id);
                    acc = self.push(PlannedOp::Mul { a: acc, b: id }, &dims);
                }
                acc
            }
        };

        let total_ops = self.ops.iter().map(|o| o.cost).sum();
        let schedule = Schedule { steps: self.steps, iterations: self.iterations, total_ops };
        let plan = Plan { ops: self.ops, result, keep: self.keep, snapshots: self.snapshots };
        Ok((plan, schedule))
    }

    fn union_of(&self, a: OpId, b: OpId) -> BTreeMap<DimName, usize> {
        let mut out: BTreeMap<DimName, usize> =
            self.ops[a].dims.iter().map(|(d, s)| (d.clone(), *s)).collect();
        for (d, s) in &self.ops[b].dims {
            let prev = out.insert(d.clone(), *s);
            debug_assert!(prev.is_none() || prev == Some(*s));
        }
        out
    }

    /// Largest plate set among live factors; ties take the
    /// lexicographically smallest set.
    fn choose_leaf(&self) -> BTreeSet<String> {
        let mut best: Option<&BTreeSet<String>> = None;
        for l in self.lives.values() {
            let better = match best {
                None => true,
                Some(b) => {
                    l.plates.len() > b.len() || (l.plates.len() == b.len() && l.plates < *b)
                }
            };
            if better {
                best = Some(&l.plates);
            }
        }
        best.cloned().unwrap_or_default()
    }

    /// Emit the ones-chain for a variable no factor touches: sum over its
    /// domain, product over its plates, one scalar out.
    fn isolated_chain(&mut self, v: &str) {
        let var = self.g.variable(v).unwrap().clone();
        let vdim = DimName::variable(v);
        let mut dims: BTreeMap<DimName, usize> = var
            .plates
            .iter()
            .map(|p| (DimName::plate(p), self.g.plate_size(p).unwrap()))
            .collect();
        dims.insert(vdim.clone(), var.domain);
        let ones = self.push(PlannedOp::Ones, &dims);
        dims.remove(&vdim);
        let mut cur = self.push(PlannedOp::SumReduce { input: ones, dim: vdim }, &dims);
        for p in &var.plates {
            let pdim = DimName::plate(p);
            dims.remove(&pdim);
            cur = self.push(PlannedOp::ProdReduce { input: cur, dim: pdim }, &dims);
        }
        self.scalars.push(cur);
        self.remaining.remove(v);
        self.steps.push(ScheduleStep {
            leaf: var.plates.clone(),
            component_vars: vec![v.to_string()],
            component_factors: Vec::new(),
            produced_vars: Vec::new(),
            product_reduced: var.plates,
        });
    }

    fn sweep_isolated(&mut self) {
        let covered: BTreeSet<String> =
            self.lives.values().flat_map(|l| l.vars.iter().cloned()).collect();
        let isolated: Vec<String> =
            self.remaining.iter().filter(|v| !covered.contains(*v)).cloned().collect();
        for v in isolated {
            self.isolated_chain(&v);
        }
    }

    fn process_component(
        &mut self,
        leaf: &BTreeSet<String>,
        comp: &Component,
    ) -> Result<(), EngineError> {
        let mut entries: Vec<(BTreeMap<DimName, usize>, OpId)> = comp
            .factors
            .iter()
            .map(|k| {
                let l = self.lives.remove(k).expect("component factor is live");
                (l.dims, l.op)
            })
            .collect();
        if entries.is_empty() {
            debug_assert!(false, "leaf variables always touch a leaf factor");
            for v in &comp.vars {
                self.isolated_chain(v);
            }
            return Ok(());
        }

        let dim_sets: Vec<BTreeMap<DimName, usize>> =
            entries.iter().map(|(d, _)| d.clone()).collect();
        let order = elimination_order(&dim_sets, &comp.vars);
        for v in &order {
            let vdim = DimName::variable(v);
            let mut gathered = Vec::new();
            let mut rest = Vec::new();
            for e in entries {
                if e.0.contains_key(&vdim) {
                    gathered.push(e);
                } else {
                    rest.push(e);
                }
            }
            entries = rest;
            self.remaining.remove(v);
            if gathered.is_empty() {
                debug_assert!(false, "component variables appear in component factors");
                self.isolated_chain(v);
                continue;
            }
            let (mut dims, mut acc) = gathered.remove(0);
            for (d, id) in gathered {
                for (k, s) in d {
                    dims.insert(k, s);
                }
                acc = self.push(PlannedOp::Mul { a: acc, b: id }, &dims);
            }
            dims.remove(&vdim);
            let red = self.push(PlannedOp::SumReduce { input: acc, dim: vdim }, &dims);
            entries.push((dims, red));
        }

        let (mut dims, mut acc) = entries.remove(0);
        for (d, id) in entries {
            for (k, s) in d {
                dims.insert(k, s);
            }
            acc = self.push(PlannedOp::Mul { a: acc, b: id }, &dims);
        }

        let produced: BTreeSet<String> = dims
            .keys()
            .filter(|d| !d.is_plate())
            .map(|d| d.name().to_string())
            .collect();
        if produced.is_empty() {
            let mut cur = acc;
            for p in leaf {
                let pdim = DimName::plate(p);
                dims.remove(&pdim);
                cur = self.push(PlannedOp::ProdReduce { input: cur, dim: pdim }, &dims);
            }
            self.scalars.push(cur);
            self.steps.push(ScheduleStep {
                leaf: leaf.clone(),
                component_vars: comp.vars.clone(),
                component_factors: self.display_names(comp),
                produced_vars: Vec::new(),
                product_reduced: leaf.clone(),
            });
        } else {
            let mut l_prime = BTreeSet::new();
            for v in &produced {
                l_prime.extend(self.var_plates(v).iter().cloned());
            }
            if !leaf.is_empty() && l_prime == *leaf {
                return Err(EngineError::Intractable {
                    leaf: leaf.clone(),
                    witness: self.g.detect_forbidden_minor(),
                });
            }
            let reduce: Vec<String> = leaf.difference(&l_prime).cloned().collect();
            let mut cur = acc;
            for p in &reduce {
                let pdim = DimName::plate(p);
                dims.remove(&pdim);
                cur = self.push(PlannedOp::ProdReduce { input: cur, dim: pdim }, &dims);
            }
            let key = format!("\u{0}#{}", self.synth);
            self.synth += 1;
            self.lives.insert(
                key,
                Live {
                    plates: l_prime.clone(),
                    vars: produced.iter().cloned().collect(),
                    dims,
                    op: cur,
                },
            );
            self.steps.push(ScheduleStep {
                leaf: leaf.clone(),
                component_vars: comp.vars.clone(),
                component_factors: self.display_names(comp),
                produced_vars: produced.into_iter().collect(),
                product_reduced: reduce.into_iter().collect(),
            });
        }
        Ok(())
    }

    fn display_names(&self, comp: &Component) -> Vec<String> {
        comp.factors
            .iter()
            .map(|k| k.strip_prefix('\u{0}').map(|d| d.to_string()).unwrap_or_else(|| k.clone()))
            .collect()
    }
}

/// Pick the within-component elimination order: exhaustive search for up
/// to four variables, min-fill greedy beyond (ties by degree, then name).
pub(crate) fn elimination_order(
    dim_sets: &[BTreeMap<DimName, usize>],
    vars: &[String],
) -> Vec<String> {
    if vars.len() <= 1 {
        return vars.to_vec();
    }
    if vars.len() <= 4 {
        let mut best: Option<(u64, Vec<String>)> = None;
        for perm in vars.iter().permutations(vars.len()) {
            let order: Vec<String> = perm.into_iter().cloned().collect();
            let cost = simulate_cost(dim_sets, &order);
            if best.as_ref().map_or(true, |(c, _)| cost < *c) {
                best = Some((cost, order));
            }
        }
        best.unwrap().1
    } else {
        min_fill(dim_sets, vars)
    }
}

/// Cost of one order, mirroring the planner's emission exactly.
fn simulate_cost(dim_sets: &[BTreeMap<DimName, usize>], order: &[String]) -> u64 {
    let mut sets: Vec<BTreeMap<DimName, usize>> = dim_sets.to_vec();
    let mut cost = 0u64;
    for v in order {
        let vdim = DimName::variable(v);
        let mut gathered = Vec::new();
        let mut rest = Vec::new();
        for s in sets {
            if s.contains_key(&vdim) {
                gathered.push(s);
            } else {
                rest.push(s);
            }
        }
        sets = rest;
        if gathered.is_empty() {
            continue;
        }
        let mut acc = gathered.remove(0);
        for d in gathered {
            acc.extend(d);
            cost = cost.saturating_add(table_size(&acc));
        }
        cost = cost.saturating_add(table_size(&acc));
        acc.remove(&vdim);
        sets.push(acc);
    }
    let mut acc = sets.remove(0);
    for d in sets {
        acc.extend(d);
        cost = cost.saturating_add(table_size(&acc));
    }
    cost
}

fn min_fill(dim_sets: &[BTreeMap<DimName, usize>], vars: &[String]) -> Vec<String> {
    let in_set = |s: &BTreeMap<DimName, usize>, v: &str| s.contains_key(&DimName::variable(v));
    let mut adj: BTreeMap<&str, BTreeSet<&str>> =
        vars.iter().map(|v| (v.as_str(), BTreeSet::new())).collect();
    for s in dim_sets {
        let present: Vec<&str> =
            vars.iter().filter(|v| in_set(s, v)).map(|v| v.as_str()).collect();
        for a in &present {
            for b in &present {
                if a != b {
                    adj.get_mut(a).unwrap().insert(b);
                }
            }
        }
    }
    let mut order = Vec::new();
    while !adj.is_empty() {
        let mut best: Option<(usize, usize, &str)> = None;
        for (v, ns) in &adj {
            let ns: Vec<&&str> = ns.iter().collect();
            let mut fill = 0;
            for i in 0..ns.len() {
                for j in i + 1..ns.len() {
                    if !adj[*ns[i]].contains(*ns[j]) {
                        fill += 1;
                    }
                }
            }
            let key = (fill, ns.len(), *v);
            if best.map_or(true, |b| key < b) {
                best = Some(key);
            }
        }
        let (_, _, v) = best.unwrap();
        let ns: Vec<&str> = adj[v].iter().copied().collect();
        for i in 0..ns.len() {
            for j in i + 1..ns.len() {
                adj.get_mut(ns[i]).unwrap().insert(ns[j]);
                adj.get_mut(ns[j]).unwrap().insert(ns[i]);
            }
        }
        for n in &ns {
            adj.get_mut(n).unwrap().remove(v);
        }
        order.push(v.to_string());
        adj.remove(v);
    }
    order
}
