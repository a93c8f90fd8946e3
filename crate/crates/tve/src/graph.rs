//! The plated factor graph data model.
//!
//! A [`PlatedFactorGraph`] is a bipartite graph of named variables and
//! factors, each annotated with a set of plates: batch dimensions standing
//! for independent replication. A variable's plates must be a subset of the
//! plates of every factor touching it; that containment is what lets the
//! engine eliminate whole plates at once.
//!
//! Factor neighborhoods are carried by the factor tensors themselves: a
//! factor's variable dims are its edge neighbors and its plate dims are its
//! plate set. [`PlatedFactorGraph::validate`] reports every breach of the
//! model invariants as data rather than failing fast, so tooling can show
//! all problems at once.
//!
//! [`PlatedFactorGraph::unroll`] replicates one plate explicitly, the
//! semantic ground truth the engine's plate-parallel elimination is tested
//! against. [`detect_forbidden_minor`] decides tractability by searching
//! for the one plate pattern the engine cannot handle.
//!
//! [`detect_forbidden_minor`]: PlatedFactorGraph::detect_forbidden_minor

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::tensor::{DimName, NamedTensor};
use crate::Element;

/// Declared variable: domain size plus plate set. The name is the key in
/// [`PlatedFactorGraph::variables`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Variable {
    pub domain: usize,
    pub plates: BTreeSet<String>,
}

/// Factor: a tensor over its neighbor variables and its plates. Neighbor
/// and plate sets are derived from the tensor dims at insertion.
#[derive(Clone, Debug, PartialEq)]
pub struct Factor<T: Element> {
    tensor: NamedTensor<T>,
    vars: BTreeSet<String>,
    plates: BTreeSet<String>,
}

impl<T: Element> Factor<T> {
    pub fn tensor(&self) -> &NamedTensor<T> {
        &self.tensor
    }

    /// Neighbor variable names.
    pub fn vars(&self) -> &BTreeSet<String> {
        &self.vars
    }

    pub fn plates(&self) -> &BTreeSet<String> {
        &self.plates
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("plate {0:?} already declared")]
    DuplicatePlate(String),
    #[error("variable {0:?} already declared")]
    DuplicateVariable(String),
    #[error("factor {0:?} already declared")]
    DuplicateFactor(String),
    #[error("name {0:?} is already used by another kind of vertex")]
    NameClash(String),
    #[error("plate {0:?} must have size >= 1")]
    EmptyPlate(String),
    #[error("variable {0:?} must have domain size >= 1")]
    EmptyDomain(String),
    #[error("no plate named {0:?}")]
    UnknownPlate(String),
    #[error("graph is invalid: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// One breached model invariant, reported by [`PlatedFactorGraph::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// A variable references an undeclared plate.
    UnknownPlateInVariable { variable: String, plate: String },
    /// A factor tensor has a plate dim that is not a declared plate.
    UnknownPlateInFactor { factor: String, plate: String },
    /// A factor tensor has a variable dim that is not a declared variable.
    UnknownVariable { factor: String, variable: String },
    /// An edge (v, f) where P(v) is not contained in P(f).
    PlateCoverage { variable: String, factor: String, missing: Vec<String> },
    /// Tensor dim size disagrees with the variable's declared domain.
    DomainMismatch { factor: String, variable: String, tensor: usize, declared: usize },
    /// Tensor plate dim size disagrees with the declared plate size.
    PlateSizeMismatch { factor: String, plate: String, tensor: usize, declared: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownPlateInVariable { variable, plate } => {
                write!(f, "variable {variable:?} references undeclared plate {plate:?}")
            }
            Violation::UnknownPlateInFactor { factor, plate } => {
                write!(f, "factor {factor:?} has undeclared plate dim {plate:?}")
            }
            Violation::UnknownVariable { factor, variable } => {
                write!(f, "factor {factor:?} touches undeclared variable {variable:?}")
            }
            Violation::PlateCoverage { variable, factor, missing } => write!(
                f,
                "variable {variable:?} carries plates {missing:?} its factor {factor:?} lacks"
            ),
            Violation::DomainMismatch { factor, variable, tensor, declared } => write!(
                f,
                "factor {factor:?} gives variable {variable:?} size {tensor}, declared domain is {declared}"
            ),
            Violation::PlateSizeMismatch { factor, plate, tensor, declared } => write!(
                f,
                "factor {factor:?} gives plate {plate:?} size {tensor}, declared size is {declared}"
            ),
        }
    }
}

/// Bipartite graph of plated variables and factors.
#[derive(Clone, Debug)]
pub struct PlatedFactorGraph<T: Element> {
    plates: BTreeMap<String, usize>,
    variables: BTreeMap<String, Variable>,
    factors: BTreeMap<String, Factor<T>>,
}

impl<T: Element> PlatedFactorGraph<T> {
    pub fn new() -> Self {
        Self { plates: BTreeMap::new(), variables: BTreeMap::new(), factors: BTreeMap::new() }
    }

    pub fn add_plate(&mut self, name: impl Into<String>, size: usize) -> Result<(), GraphError> {
        let name = name.into();
        if size == 0 {
            return Err(GraphError::EmptyPlate(name));
        }
        if self.plates.contains_key(&name) {
            return Err(GraphError::DuplicatePlate(name));
        }
        self.plates.insert(name, size);
        Ok(())
    }

    pub fn add_variable<I>(
        &mut self,
        name: impl Into<String>,
        domain: usize,
        plates: I,
    ) -> Result<(), GraphError>
    where
        I: IntoIterator,
        I::Item: Into<String>,
    {
        let name = name.into();
        if domain == 0 {
            return Err(GraphError::EmptyDomain(name));
        }
        if self.variables.contains_key(&name) {
            return Err(GraphError::DuplicateVariable(name));
        }
        if self.factors.contains_key(&name) {
            return Err(GraphError::NameClash(name));
        }
        let plates = plates.into_iter().map(Into::into).collect();
        self.variables.insert(name, Variable { domain, plates });
        Ok(())
    }

    /// Add a factor; its neighbors and plate set are read off the tensor's
    /// variable and plate dims.
    pub fn add_factor(
        &mut self,
        name: impl Into<String>,
        tensor: NamedTensor<T>,
    ) -> Result<(), GraphError> {
        let name = name.into();
        if self.factors.contains_key(&name) {
            return Err(GraphError::DuplicateFactor(name));
        }
        if self.variables.contains_key(&name) {
            return Err(GraphError::NameClash(name));
        }
        let mut vars = BTreeSet::new();
        let mut plates = BTreeSet::new();
        for (d, _) in tensor.dims() {
            if d.is_plate() {
                plates.insert(d.name().to_string());
            } else {
                vars.insert(d.name().to_string());
            }
        }
        self.factors.insert(name, Factor { tensor, vars, plates });
        Ok(())
    }

    pub fn plates(&self) -> &BTreeMap<String, usize> {
        &self.plates
    }

    pub fn plate_size(&self, name: &str) -> Option<usize> {
        self.plates.get(name).copied()
    }

    pub fn variables(&self) -> &BTreeMap<String, Variable> {
        &self.variables
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.get(name)
    }

    pub fn factors(&self) -> &BTreeMap<String, Factor<T>> {
        &self.factors
    }

    pub fn factor(&self, name: &str) -> Option<&Factor<T>> {
        self.factors.get(name)
    }

    /// All (variable, factor) edges in sorted order.
    pub fn edges(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (fname, f) in &self.factors {
            for v in &f.vars {
                out.push((v.clone(), fname.clone()));
            }
        }
        out.sort();
        out
    }

    /// Check every model invariant, returning all breaches. Empty result
    /// means the graph is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (vname, var) in &self.variables {
            for p in &var.plates {
                if !self.plates.contains_key(p) {
                    out.push(Violation::UnknownPlateInVariable {
                        variable: vname.clone(),
                        plate: p.clone(),
                    });
                }
            }
        }
        for (fname, f) in &self.factors {
            for (d, size) in f.tensor.dims() {
                if d.is_plate() {
                    match self.plates.get(d.name()) {
                        None => out.push(Violation::UnknownPlateInFactor {
                            factor: fname.clone(),
                            plate: d.name().to_string(),
                        }),
                        Some(&m) if m != *size => out.push(Violation::PlateSizeMismatch {
                            factor: fname.clone(),
                            plate: d.name().to_string(),
                            tensor: *size,
                            declared: m,
                        }),
                        Some(_) => {}
                    }
                } else {
                    match self.variables.get(d.name()) {
                        None => out.push(Violation::UnknownVariable {
                            factor: fname.clone(),
                            variable: d.name().to_string(),
                        }),
                        Some(var) => {
                            if var.domain != *size {
                                out.push(Violation::DomainMismatch {
                                    factor: fname.clone(),
                                    variable: d.name().to_string(),
                                    tensor: *size,
                                    declared: var.domain,
                                });
                            }
                            let missing: Vec<String> =
                                var.plates.difference(&f.plates).cloned().collect();
                            if !missing.is_empty() {
                                out.push(Violation::PlateCoverage {
                                    variable: d.name().to_string(),
                                    factor: fname.clone(),
                                    missing,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Replicate plate `b` explicitly: every vertex carrying `b` becomes
    /// `M(b)` copies named `name[b=i]`, factor tensors are sliced along the
    /// plate dim, and variable dims of replicated neighbors are renamed to
    /// the matching copy. Vertices not carrying `b` are shared by all
    /// copies.
    pub fn unroll(&self, b: &str) -> Result<Self, GraphError> {
        let Some(&m) = self.plates.get(b) else {
            return Err(GraphError::UnknownPlate(b.to_string()));
        };
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(GraphError::Invalid(violations));
        }

        let mut out = Self::new();
        for (p, &size) in &self.plates {
            if p != b {
                out.add_plate(p.clone(), size)?;
            }
        }
        for (vname, var) in &self.variables {
            if var.plates.contains(b) {
                let rest: Vec<&String> = var.plates.iter().filter(|p| *p != b).collect();
                for i in 0..m {
                    out.add_variable(instance_name(vname, b, i), var.domain, rest.clone())?;
                }
            } else {
                out.add_variable(vname.clone(), var.domain, var.plates.clone())?;
            }
        }
        for (fname, f) in &self.factors {
            if f.plates.contains(b) {
                let plate_dim = DimName::plate(b);
                for i in 0..m {
                    let mut tensor = f.tensor.slice(&plate_dim, i).expect("validated plate dim");
                    for v in &f.vars {
                        if self.variables[v].plates.contains(b) {
                            let from = DimName::variable(v);
                            let to = DimName::variable(instance_name(v, b, i));
                            tensor = tensor.rename(&from, to).expect("validated var dim");
                        }
                    }
                    out.add_factor(instance_name(fname, b, i), tensor)?;
                }
            } else {
                out.add_factor(fname.clone(), f.tensor.clone())?;
            }
        }
        Ok(out)
    }

    /// Unroll every plate (in sorted order), yielding the plain ground
    /// graph the plated one abbreviates.
    pub fn unroll_all(&self) -> Result<UnrolledFactorGraph<T>, GraphError> {
        let names: Vec<String> = self.plates.keys().cloned().collect();
        let mut g = self.clone();
        for b in &names {
            g = g.unroll(b)?;
        }
        let mut variables = BTreeMap::new();
        for (name, var) in &g.variables {
            debug_assert!(var.plates.is_empty());
            variables.insert(name.clone(), var.domain);
        }
        let mut factors = BTreeMap::new();
        let mut edges = BTreeSet::new();
        for (name, f) in &g.factors {
            debug_assert!(f.plates.is_empty());
            for v in &f.vars {
                edges.insert((v.clone(), name.clone()));
            }
            factors.insert(name.clone(), f.tensor.clone());
        }
        Ok(UnrolledFactorGraph { variables, factors, edges })
    }

    /// Search for the plate pattern that makes elimination impossible: a
    /// path u - ... - w where u is a variable on plate `a` but not `b`, w a
    /// variable on `b` but not `a`, and every vertex between them carries
    /// both plates. Returns the first witness in a fixed scan order, or
    /// `None` if the graph is tractable.
    pub fn detect_forbidden_minor(&self) -> Option<MinorWitness> {
        let mut var_factors: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (fname, f) in &self.factors {
            for v in &f.vars {
                var_factors.entry(v).or_default().push(fname);
            }
        }
        let plate_names: Vec<&String> = self.plates.keys().collect();
        for a in &plate_names {
            for b in &plate_names {
                if a == b {
                    continue;
                }
                if let Some(w) = self.minor_path(a, b, &var_factors) {
                    return Some(w);
                }
            }
        }
        None
    }

    fn minor_path(
        &self,
        a: &str,
        b: &str,
        var_factors: &BTreeMap<&str, Vec<&str>>,
    ) -> Option<MinorWitness> {
        let has = |plates: &BTreeSet<String>, p: &str| plates.contains(p);
        let source = |v: &Variable| has(&v.plates, a) && !has(&v.plates, b);
        let target = |v: &Variable| has(&v.plates, b) && !has(&v.plates, a);
        let interior_v = |v: &Variable| has(&v.plates, a) && has(&v.plates, b);
        let interior_f = |f: &Factor<T>| has(&f.plates, a) && has(&f.plates, b);

        // Multi-source BFS alternating variable / factor layers. Interior
        // vertices carry both plates; a hit is an interior factor adjacent
        // to a target variable.
        let mut queue: VecDeque<(bool, &str)> = VecDeque::new();
        let mut seen_v: BTreeSet<&str> = BTreeSet::new();
        let mut seen_f: BTreeSet<&str> = BTreeSet::new();
        let mut parent_f: BTreeMap<&str, &str> = BTreeMap::new();
        let mut parent_v: BTreeMap<&str, &str> = BTreeMap::new();

        for (vname, var) in &self.variables {
            if source(var) {
                seen_v.insert(vname);
                queue.push_back((true, vname));
            }
        }

        while let Some((is_var, name)) = queue.pop_front() {
            if is_var {
                let Some(fs) = var_factors.get(name) else { continue };
                for fname in fs {
                    if seen_f.contains(*fname) || !interior_f(&self.factors[*fname]) {
                        continue;
                    }
                    seen_f.insert(fname);
                    parent_f.insert(fname, name);
                    for w in &self.factors[*fname].vars {
                        if target(&self.variables[w]) {
                            return Some(self.build_witness(
                                a, b, fname, w, &parent_f, &parent_v,
                            ));
                        }
                    }
                    queue.push_back((false, fname));
                }
            } else {
                for v in &self.factors[name].vars {
                    if !seen_v.contains(v.as_str()) && interior_v(&self.variables[v]) {
                        seen_v.insert(v);
                        parent_v.insert(v, name);
                        queue.push_back((true, v));
                    }
                }
            }
        }
        None
    }

    fn build_witness(
        &self,
        a: &str,
        b: &str,
        last_factor: &str,
        target: &str,
        parent_f: &BTreeMap<&str, &str>,
        parent_v: &BTreeMap<&str, &str>,
    ) -> MinorWitness {
        let mut path = vec![last_factor.to_string()];
        let mut var = parent_f[last_factor];
        while let Some(f) = parent_v.get(var) {
            path.push(var.to_string());
            path.push(f.to_string());
            var = parent_f[f];
        }
        path.reverse();
        MinorWitness {
            plate_a: a.to_string(),
            plate_b: b.to_string(),
            endpoint_a: Endpoint::variable(var),
            endpoint_b: Endpoint::variable(target),
            path,
        }
    }
}

fn instance_name(base: &str, plate: &str, index: usize) -> String {
    format!("{base}[{plate}={index}]")
}

/// Plain (plate-free) factor graph produced by unrolling every plate.
#[derive(Clone, Debug)]
pub struct UnrolledFactorGraph<T: Element> {
    /// Instance-indexed variable names mapped to their domains.
    pub variables: BTreeMap<String, usize>,
    /// Instance-indexed factor names mapped to their (variable-dim only)
    /// tensors.
    pub factors: BTreeMap<String, NamedTensor<T>>,
    /// All (variable, factor) edges.
    pub edges: BTreeSet<(String, String)>,
}

/// One endpoint of a [`MinorWitness`]: a variable, or a factor taken
/// together with one of its variables (so the endpoint always contains a
/// variable).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Endpoint {
    pub vertex: String,
    pub variable: String,
}

impl Endpoint {
    pub fn variable(name: impl Into<String>) -> Self {
        let name = name.into();
        Self { vertex: name.clone(), variable: name }
    }
}

/// Proof of intractability: a path between two singly-plated variables
/// whose interior carries both plates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinorWitness {
    pub plate_a: String,
    pub plate_b: String,
    /// Variable-containing vertex with plate `a` but not `b`.
    pub endpoint_a: Endpoint,
    /// Variable-containing vertex with plate `b` but not `a`.
    pub endpoint_b: Endpoint,
    /// Interior vertices in order from `endpoint_a` to `endpoint_b`, each
    /// carrying both plates.
    pub path: Vec<String>,
}

impl fmt::Display for MinorWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "plates ({}, {}): {} - {} - {}",
            self.plate_a,
            self.plate_b,
            self.endpoint_a.variable,
            self.path.join(" - "),
            self.endpoint_b.variable
        )
    }
}

/// One connected component of a bipartite (variables, factors) subgraph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub vars: Vec<String>,
    pub factors: Vec<String>,
}

impl Component {
    fn smallest_name(&self) -> &str {
        let v = self.vars.first().map(String::as_str);
        let f = self.factors.first().map(String::as_str);
        match (v, f) {
            (Some(v), Some(f)) => v.min(f),
            (Some(v), None) => v,
            (None, Some(f)) => f,
            (None, None) => "",
        }
    }
}

/// Split a bipartite subgraph into connected components. Vertices absent
/// from every edge form singleton components. Components are sorted by
/// their smallest member name, and member lists are sorted. Variable and
/// factor names must not collide.
pub fn partition(
    vars: &BTreeSet<String>,
    factors: &BTreeSet<String>,
    edges: &BTreeSet<(String, String)>,
) -> Vec<Component> {
    let mut var_adj: BTreeMap<&str, Vec<&str>> = vars.iter().map(|v| (v.as_str(), vec![])).collect();
    let mut fac_adj: BTreeMap<&str, Vec<&str>> =
        factors.iter().map(|f| (f.as_str(), vec![])).collect();
    for (v, f) in edges {
        if var_adj.contains_key(v.as_str()) && fac_adj.contains_key(f.as_str()) {
            var_adj.get_mut(v.as_str()).unwrap().push(f);
            fac_adj.get_mut(f.as_str()).unwrap().push(v);
        }
    }

    let mut seen_v: BTreeSet<&str> = BTreeSet::new();
    let mut seen_f: BTreeSet<&str> = BTreeSet::new();
    let mut out = Vec::new();
    let seeds: Vec<(bool, &str)> = vars
        .iter()
        .map(|v| (true, v.as_str()))
        .chain(factors.iter().map(|f| (false, f.as_str())))
        .collect();
    for (is_var, seed) in seeds {
        let fresh = if is_var { !seen_v.contains(seed) } else { !seen_f.contains(seed) };
        if !fresh {
            continue;
        }
        let mut comp = Component { vars: vec![], factors: vec![] };
        let mut queue = VecDeque::from([(is_var, seed)]);
        if is_var {
            seen_v.insert(seed);
        } else {
            seen_f.insert(seed);
        }
        while let Some((is_var, name)) = queue.pop_front() {
            if is_var {
                comp.vars.push(name.to_string());
                for f in &var_adj[name] {
                    if seen_f.insert(f) {
                        queue.push_back((false, f));
                    }
                }
            } else {
                comp.factors.push(name.to_string());
                for v in &fac_adj[name] {
                    if seen_v.insert(v) {
                        queue.push_back((true, v));
                    }
                }
            }
        }
        comp.vars.sort();
        comp.factors.sort();
        out.push(comp);
    }
    out.sort_by(|a, b| a.smallest_name().to_string().cmp(&b.smallest_name().to_string()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DimKind;

    fn tensor(plates: &[(&str, usize)], vars: &[(&str, usize)]) -> NamedTensor<f64> {
        let mut dims: Vec<(DimName, usize)> =
            plates.iter().map(|(n, s)| (DimName::plate(*n), *s)).collect();
        dims.extend(vars.iter().map(|(n, s)| (DimName::variable(*n), *s)));
        let len: usize = dims.iter().map(|(_, s)| s).product();
        let values = (0..len).map(|i| 0.25 + (i % 7) as f64 * 0.1).collect();
        NamedTensor::from_flat(dims, values).unwrap()
    }

    /// Global variable X, per-plate variable Y, nested observation plate:
    /// F(X), G(Y) on plate i, H(X, Y) on plates i and j.
    fn global_local(i: usize, j: usize) -> PlatedFactorGraph<f64> {
        let mut g = PlatedFactorGraph::new();
        g.add_plate("i", i).unwrap();
        g.add_plate("j", j).unwrap();
        g.add_variable("X", 2, Vec::<String>::new()).unwrap();
        g.add_variable("Y", 3, ["i"]).unwrap();
        g.add_factor("F", tensor(&[], &[("X", 2)])).unwrap();
        g.add_factor("G", tensor(&[("i", i)], &[("Y", 3)])).unwrap();
        g.add_factor("H", tensor(&[("i", i), ("j", j)], &[("X", 2), ("Y", 3)])).unwrap();
        g
    }

    /// Grid-coupled pair: x on plate a, y on plate b, one coupling factor
    /// replicated over both plates.
    fn grid(a: usize, b: usize) -> PlatedFactorGraph<f64> {
        let mut g = PlatedFactorGraph::new();
        g.add_plate("a", a).unwrap();
        g.add_plate("b", b).unwrap();
        g.add_variable("x", 2, ["a"]).unwrap();
        g.add_variable("y", 2, ["b"]).unwrap();
        g.add_factor("f", tensor(&[("a", a), ("b", b)], &[("x", 2), ("y", 2)])).unwrap();
        g
    }

    fn chain(a: usize, b: usize) -> PlatedFactorGraph<f64> {
        let mut g = PlatedFactorGraph::new();
        g.add_plate("a", a).unwrap();
        g.add_plate("b", b).unwrap();
        g.add_variable("v", 2, ["a", "b"]).unwrap();
        g.add_variable("w", 2, ["a"]).unwrap();
        g.add_variable("x", 2, Vec::<String>::new()).unwrap();
        g.add_variable("y", 2, ["b"]).unwrap();
        g.add_variable("z", 2, ["a", "b"]).unwrap();
        g.add_factor("f_vw", tensor(&[("a", a), ("b", b)], &[("v", 2), ("w", 2)])).unwrap();
        g.add_factor("f_wx", tensor(&[("a", a)], &[("w", 2), ("x", 2)])).unwrap();
        g.add_factor("f_x", tensor(&[], &[("x", 2)])).unwrap();
        g.add_factor("f_xy", tensor(&[("b", b)], &[("x", 2), ("y", 2)])).unwrap();
        g.add_factor("f_yz", tensor(&[("a", a), ("b", b)], &[("y", 2), ("z", 2)])).unwrap();
        g
    }

    #[test]
    fn builder_rejects_bad_names() {
        let mut g = PlatedFactorGraph::<f64>::new();
        g.add_plate("i", 2).unwrap();
        assert_eq!(g.add_plate("i", 3), Err(GraphError::DuplicatePlate("i".into())));
        g.add_variable("x", 2, ["i"]).unwrap();
        assert_eq!(
            g.add_variable("x", 2, Vec::<String>::new()),
            Err(GraphError::DuplicateVariable("x".into()))
        );
        assert_eq!(
            g.add_factor("x", tensor(&[], &[("x", 2)])),
            Err(GraphError::NameClash("x".into()))
        );
        assert_eq!(
            g.add_variable("q", 0, Vec::<String>::new()),
            Err(GraphError::EmptyDomain("q".into()))
        );
    }

    #[test]
    fn validate_accepts_the_nested_example() {
        assert_eq!(global_local(2, 3).validate(), vec![]);
        assert_eq!(grid(2, 2).validate(), vec![]);
        assert_eq!(chain(3, 4).validate(), vec![]);
    }

    #[test]
    fn validate_reports_coverage_breach() {
        let mut g = PlatedFactorGraph::new();
        g.add_plate("a", 2).unwrap();
        g.add_variable("v", 2, ["a"]).unwrap();
        g.add_factor("f", tensor(&[], &[("v", 2)])).unwrap();
        let viol = g.validate();
        assert_eq!(
            viol,
            vec![Violation::PlateCoverage {
                variable: "v".into(),
                factor: "f".into(),
                missing: vec!["a".into()],
            }]
        );
    }

    #[test]
    fn validate_reports_shape_breaches() {
        let mut g = PlatedFactorGraph::new();
        g.add_plate("a", 2).unwrap();
        g.add_variable("v", 2, ["a"]).unwrap();
        // wrong domain size, wrong plate size, unknown variable, unknown plate
        g.add_factor("f", tensor(&[("a", 3)], &[("v", 4), ("q", 2)])).unwrap();
        g.add_factor("h", tensor(&[("c", 2)], &[("v", 2)])).unwrap();
        let viol = g.validate();
        assert!(viol.contains(&Violation::DomainMismatch {
            factor: "f".into(),
            variable: "v".into(),
            tensor: 4,
            declared: 2,
        }));
        assert!(viol.contains(&Violation::PlateSizeMismatch {
            factor: "f".into(),
            plate: "a".into(),
            tensor: 3,
            declared: 2,
        }));
        assert!(viol.contains(&Violation::UnknownVariable { factor: "f".into(), variable: "q".into() }));
        assert!(viol.contains(&Violation::UnknownPlateInFactor { factor: "h".into(), plate: "c".into() }));

        let mut g2 = PlatedFactorGraph::<f64>::new();
        g2.add_variable("v", 2, ["ghost"]).unwrap();
        assert_eq!(
            g2.validate(),
            vec![Violation::UnknownPlateInVariable { variable: "v".into(), plate: "ghost".into() }]
        );
    }

    #[test]
    fn unroll_counts_for_nested_example() {
        // The fully unrolled graph at i=2, j=3: variables {X, Y[i]}, the
        // shared F, per-i G and per-(i,j) H; every H copy touches X and its
        // plate's Y copy.
        let g = global_local(2, 3);
        for order in [["j", "i"], ["i", "j"]] {
            let u = g.unroll(order[0]).unwrap().unroll(order[1]).unwrap();
            assert!(u.plates().is_empty());
            assert_eq!(u.variables().len(), 3);
            assert_eq!(u.factors().len(), 9);
            assert_eq!(u.edges().len(), 15);
        }
        let u = g.unroll_all().unwrap();
        assert!(u.variables.contains_key("X"));
        assert!(u.variables.contains_key("Y[i=0]"));
        assert!(u.variables.contains_key("Y[i=1]"));
        // H copies bind X and the Y copy matching their i index
        assert!(u.edges.contains(&("X".into(), "H[i=0][j=2]".into())));
        assert!(u.edges.contains(&("Y[i=0]".into(), "H[i=0][j=2]".into())));
        assert!(!u.edges.contains(&("Y[i=1]".into(), "H[i=0][j=2]".into())));
        assert!(u.edges.contains(&("Y[i=1]".into(), "G[i=1]".into())));
    }

    #[test]
    fn unroll_slices_factor_values() {
        let mut g = PlatedFactorGraph::new();
        g.add_plate("i", 2).unwrap();
        g.add_variable("y", 2, ["i"]).unwrap();
        let t = NamedTensor::from_flat(
            vec![(DimName::plate("i"), 2), (DimName::variable("y"), 2)],
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        g.add_factor("G", t).unwrap();
        let u = g.unroll("i").unwrap();
        let g1 = u.factor("G[i=1]").unwrap();
        assert_eq!(g1.tensor().to_vec(), vec![3.0, 4.0]);
        assert_eq!(g1.vars().iter().collect::<Vec<_>>(), ["y[i=1]"]);
        assert!(u.plates().is_empty());
        assert_eq!(u.validate(), vec![]);
    }

    #[test]
    fn unroll_grid_counts() {
        let u = grid(2, 2).unroll_all().unwrap();
        assert_eq!(u.variables.len(), 4);
        assert_eq!(u.factors.len(), 4);
        assert_eq!(u.edges.len(), 8);
    }

    #[test]
    fn unroll_size_one_plate_keeps_structure() {
        let mut g = PlatedFactorGraph::new();
        g.add_plate("i", 1).unwrap();
        g.add_variable("y", 2, ["i"]).unwrap();
        g.add_factor("G", tensor(&[("i", 1)], &[("y", 2)])).unwrap();
        let u = g.unroll("i").unwrap();
        assert_eq!(u.variables().len(), 1);
        assert_eq!(u.factors().len(), 1);
        assert!(u.variables().contains_key("y[i=0]"));
        assert!(g.unroll("zz").is_err());
    }

    #[test]
    fn unroll_commutes_up_to_renaming() {
        let g = chain(2, 3);
        let ab = g.unroll("a").unwrap().unroll("b").unwrap();
        let ba = g.unroll("b").unwrap().unroll("a").unwrap();
        let norm = |name: &str| -> String {
            let mut parts: Vec<&str> = name.split('[').collect();
            let base = parts.remove(0).to_string();
            parts.sort();
            parts.iter().fold(base, |acc, p| format!("{acc}[{p}"))
        };
        let vs =
            |u: &PlatedFactorGraph<f64>| -> BTreeSet<String> { u.variables().keys().map(|k| norm(k)).collect() };
        let es = |u: &PlatedFactorGraph<f64>| -> BTreeSet<(String, String)> {
            u.edges().into_iter().map(|(v, f)| (norm(&v), norm(&f))).collect()
        };
        assert_eq!(vs(&ab), vs(&ba));
        assert_eq!(es(&ab), es(&ba));
    }

    #[test]
    fn unrolled_vertex_counts_match_product_formula() {
        let g = chain(3, 4);
        let u = g.unroll_all().unwrap();
        let expect_v: usize = g
            .variables()
            .values()
            .map(|v| v.plates.iter().map(|p| g.plate_size(p).unwrap()).product::<usize>())
            .sum();
        let expect_f: usize = g
            .factors()
            .values()
            .map(|f| f.plates().iter().map(|p| g.plate_size(p).unwrap()).product::<usize>())
            .sum();
        assert_eq!(u.variables.len(), expect_v);
        assert_eq!(u.factors.len(), expect_f);
    }

    #[test]
    fn partition_splits_leaf_subgraph() {
        // the two-plate leaf of the chain model: {v, z} with their factors
        let vars: BTreeSet<String> = ["v".into(), "z".into()].into();
        let factors: BTreeSet<String> = ["f_vw".into(), "f_yz".into()].into();
        let edges: BTreeSet<(String, String)> =
            [("v".into(), "f_vw".into()), ("z".into(), "f_yz".into())].into();
        let comps = partition(&vars, &factors, &edges);
        assert_eq!(
            comps,
            vec![
                Component { vars: vec!["v".into()], factors: vec!["f_vw".into()] },
                Component { vars: vec!["z".into()], factors: vec!["f_yz".into()] },
            ]
        );
        assert_eq!(partition(&BTreeSet::new(), &BTreeSet::new(), &BTreeSet::new()), vec![]);
        let lone: BTreeSet<String> = ["f".into()].into();
        assert_eq!(
            partition(&BTreeSet::new(), &lone, &BTreeSet::new()),
            vec![Component { vars: vec![], factors: vec!["f".into()] }]
        );
        let lonely_var: BTreeSet<String> = ["q".into()].into();
        assert_eq!(
            partition(&lonely_var, &BTreeSet::new(), &BTreeSet::new()),
            vec![Component { vars: vec!["q".into()], factors: vec![] }]
        );
    }

    #[test]
    fn minor_detector_flags_the_grid() {
        let w = grid(2, 2).detect_forbidden_minor().expect("grid couples its plates");
        assert_eq!(w.plate_a, "a");
        assert_eq!(w.plate_b, "b");
        assert_eq!(w.endpoint_a, Endpoint::variable("x"));
        assert_eq!(w.endpoint_b, Endpoint::variable("y"));
        assert_eq!(w.path, vec!["f".to_string()]);
    }

    #[test]
    fn minor_detector_passes_tractable_models() {
        assert_eq!(global_local(2, 3).detect_forbidden_minor(), None);
        assert_eq!(chain(2, 2).detect_forbidden_minor(), None);
    }

    #[test]
    fn minor_detector_flags_crossed_chain() {
        let mut g = chain(2, 2);
        g.add_factor("f_vz", tensor(&[("a", 2), ("b", 2)], &[("v", 2), ("z", 2)])).unwrap();
        let w = g.detect_forbidden_minor().expect("crossing factor couples the plates");
        assert_eq!((w.plate_a.as_str(), w.plate_b.as_str()), ("a", "b"));
        assert_eq!(w.endpoint_a.variable, "w");
        assert_eq!(w.endpoint_b.variable, "y");
        // path runs through both-plate vertices only
        for x in &w.path {
            let plates = g
                .variable(x)
                .map(|v| v.plates.clone())
                .or_else(|| g.factor(x).map(|f| f.plates().clone()))
                .unwrap();
            assert!(plates.contains("a") && plates.contains("b"));
        }
    }

    #[test]
    fn dim_kind_round_trip_through_factor() {
        let g = global_local(2, 3);
        let h = g.factor("H").unwrap();
        assert_eq!(h.plates().iter().collect::<Vec<_>>(), ["i", "j"]);
        assert_eq!(h.vars().iter().collect::<Vec<_>>(), ["X", "Y"]);
        assert_eq!(h.tensor().dims()[0].0.kind(), DimKind::Plate);
    }
}
