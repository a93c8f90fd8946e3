//! The on-disk model format.
//!
//! A model file is JSON: plate sizes, variable declarations, and factors.
//! Factor data is a nested array in canonical dim order (sorted plate
//! names, then sorted variable names), a generator string (`"uniform"`,
//! `"random(SEED)"`), or `"file:PATH"` naming a binary `.ten` tensor
//! resolved relative to the model file. The optional `semiring` field
//! declares how the data is encoded (real or log carrier) and the default
//! algebra for queries.
//!
//! JSON numbers cannot be infinite, so log-encoded factors with zero
//! weight (entries of negative infinity) must use a `.ten` payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use tve::rng;
use tve::semiring::SemiringKind;
use tve::tensor::DimName;
use tve::{Graph64, Tensor64};

use crate::Failure;

/// Deserialized model file. `to_graph` turns it into a validated graph;
/// `from_graph` inverts that, with data as nested arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default)]
    pub plates: BTreeMap<String, usize>,
    #[serde(default)]
    pub variables: BTreeMap<String, VariableDecl>,
    #[serde(default)]
    pub factors: Vec<FactorDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semiring: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableDecl {
    pub domain: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plates: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorDecl {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variables: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plates: Vec<String>,
    pub data: DataDecl,
}

/// Factor payload: a generator string or nested value arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataDecl {
    Generator(String),
    Values(Value),
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<ModelFile, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::validation(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
    }

    /// The declared semiring, if any.
    pub fn kind(&self) -> Result<Option<SemiringKind>, Failure> {
        self.semiring.as_deref().map(|s| s.parse().map_err(Failure::validation)).transpose()
    }

    /// Build and validate the graph. `base` resolves `file:` data paths.
    pub fn to_graph(&self, base: &Path) -> Result<Graph64, Failure> {
        let log_data = self.kind()?.is_some_and(SemiringKind::log_carrier);
        let mut g = Graph64::new();
        for (name, &size) in &self.plates {
            g.add_plate(name.clone(), size).map_err(|e| Failure::validation(e.to_string()))?;
        }
        for (name, decl) in &self.variables {
            g.add_variable(name.clone(), decl.domain, decl.plates.clone())
                .map_err(|e| Failure::validation(e.to_string()))?;
        }
        for f in &self.factors {
            let dims = self.factor_dims(f)?;
            let shape: Vec<usize> = dims.iter().map(|(_, s)| *s).collect();
            let values = self.factor_values(f, &shape, base, log_data)?;
            let tensor = Tensor64::from_flat(dims, values)
                .map_err(|e| Failure::validation(format!("factor {:?}: {e}", f.name)))?;
            g.add_factor(f.name.clone(), tensor)
                .map_err(|e| Failure::validation(e.to_string()))?;
        }
        let violations = g.validate();
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Failure::validation(format!(
                "model does not validate: {}",
                list.join("; ")
            )));
        }
        Ok(g)
    }

    /// Inverse of `to_graph`: every factor becomes explicit nested arrays.
    pub fn from_graph(g: &Graph64, semiring: Option<SemiringKind>) -> ModelFile {
        let variables = g
            .variables()
            .iter()
            .map(|(name, v)| {
                let plates: Vec<String> = v.plates.iter().cloned().collect();
                (name.clone(), VariableDecl { domain: v.domain, plates })
            })
            .collect();
        let factors = g
            .factors()
            .iter()
            .map(|(name, f)| {
                let shape: Vec<usize> = f.tensor().dims().iter().map(|(_, s)| *s).collect();
                FactorDecl {
                    name: name.clone(),
                    variables: f.vars().iter().cloned().collect(),
                    plates: f.plates().iter().cloned().collect(),
                    data: DataDecl::Values(nest(&f.tensor().to_vec(), &shape)),
                }
            })
            .collect();
        ModelFile {
            plates: g.plates().clone(),
            variables,
            factors,
            semiring: semiring.map(|k| k.name().to_string()),
        }
    }

    /// Canonical dims of a declared factor: sorted plates, then sorted
    /// variables, sizes looked up in the declarations.
    fn factor_dims(&self, f: &FactorDecl) -> Result<Vec<(DimName, usize)>, Failure> {
        let sorted_unique = |names: &[String], what: &str| -> Result<Vec<String>, Failure> {
            let mut out = names.to_vec();
            out.sort();
            let before = out.len();
            out.dedup();
            if out.len() != before {
                return Err(Failure::validation(format!(
                    "factor {:?} lists a {what} twice",
                    f.name
                )));
            }
            Ok(out)
        };
        let mut dims = Vec::new();
        for p in sorted_unique(&f.plates, "plate")? {
            let size = self.plates.get(&p).ok_or_else(|| {
                Failure::validation(format!("factor {:?} references undeclared plate {p:?}", f.name))
            })?;
            dims.push((DimName::plate(p), *size));
        }
        for v in sorted_unique(&f.variables, "variable")? {
            let decl = self.variables.get(&v).ok_or_else(|| {
                Failure::validation(format!(
                    "factor {:?} references undeclared variable {v:?}",
                    f.name
                ))
            })?;
            dims.push((DimName::variable(v), decl.domain));
        }
        Ok(dims)
    }

    fn factor_values(
        &self,
        f: &FactorDecl,
        shape: &[usize],
        base: &Path,
        log_data: bool,
    ) -> Result<Vec<f64>, Failure> {
        let n: usize = shape.iter().product();
        match &f.data {
            DataDecl::Generator(s) if s == "uniform" => {
                Ok(vec![if log_data { 0.0 } else { 1.0 }; n])
            }
            DataDecl::Generator(s) => {
                if let Some(seed) = parse_random(s) {
                    let mut r = rng::seeded(seed);
                    let draw = (0..n).map(|_| rng::uniform_in(&mut r, 0.1, 1.0));
                    Ok(if log_data { draw.map(f64::ln).collect() } else { draw.collect() })
                } else if let Some(rel) = s.strip_prefix("file:") {
                    let path = base.join(rel);
                    let (file_shape, values) = read_tensor_file(&path)?;
                    if file_shape != shape {
                        return Err(Failure::validation(format!(
                            "factor {:?}: {} has shape {file_shape:?}, declaration needs {shape:?}",
                            f.name,
                            path.display()
                        )));
                    }
                    Ok(values)
                } else {
                    Err(Failure::validation(format!(
                        "factor {:?}: unknown data generator {s:?} (expected \"uniform\", \"random(SEED)\", or \"file:PATH\")",
                        f.name
                    )))
                }
            }
            DataDecl::Values(v) => {
                let mut out = Vec::with_capacity(n);
                flatten(v, shape, &mut out)
                    .map_err(|m| Failure::validation(format!("factor {:?}: {m}", f.name)))?;
                Ok(out)
            }
        }
    }
}

fn parse_random(s: &str) -> Option<u64> {
    s.strip_prefix("random(")?.strip_suffix(')')?.trim().parse().ok()
}

/// Row-major flatten of nested arrays, checking every extent against the
/// expected shape.
fn flatten(v: &Value, shape: &[usize], out: &mut Vec<f64>) -> Result<(), String> {
    match shape.split_first() {
        None => match v.as_f64() {
            Some(x) => {
                out.push(x);
                Ok(())
            }
            None => Err(format!("expected a number, found {v}")),
        },
        Some((&n, rest)) => {
            let arr = v.as_array().ok_or_else(|| format!("expected an array of {n}, found {v}"))?;
            if arr.len() != n {
                return Err(format!("expected {n} entries, found {}", arr.len()));
            }
            arr.iter().try_for_each(|item| flatten(item, rest, out))
        }
    }
}

/// Inverse of `flatten`: nested arrays from a row-major buffer. An empty
/// shape yields the bare value.
pub fn nest<T: Copy + Into<Value>>(flat: &[T], shape: &[usize]) -> Value {
    match shape.split_first() {
        None => flat[0].into(),
        Some((&n, rest)) => {
            let chunk = flat.len() / n;
            (0..n)
                .map(|i| nest(&flat[i * chunk..(i + 1) * chunk], rest))
                .collect::<Vec<Value>>()
                .into()
        }
    }
}

/// Read an operand tensor file: `.ten` binary by extension, otherwise JSON
/// nested arrays with the shape inferred from the nesting.
pub fn read_tensor_file(path: &Path) -> Result<(Vec<usize>, Vec<f64>), Failure> {
    if path.extension().is_some_and(|e| e == "ten") {
        return read_ten(path);
    }
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::validation(format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    let shape = infer_shape(&v).map_err(|m| Failure::validation(format!("{}: {m}", path.display())))?;
    let mut out = Vec::new();
    flatten(&v, &shape, &mut out)
        .map_err(|m| Failure::validation(format!("{}: {m}", path.display())))?;
    Ok((shape, out))
}

fn infer_shape(v: &Value) -> Result<Vec<usize>, String> {
    let mut shape = Vec::new();
    let mut cur = v;
    while let Some(arr) = cur.as_array() {
        if arr.is_empty() {
            return Err("empty array has no extent".into());
        }
        shape.push(arr.len());
        cur = &arr[0];
    }
    if !cur.is_number() {
        return Err(format!("expected numbers at depth {}, found {cur}", shape.len()));
    }
    Ok(shape)
}

/// Read a `.ten` file: u64 LE rank, u64 LE extents, f64 LE row-major
/// values, nothing else.
pub fn read_ten(path: &Path) -> Result<(Vec<usize>, Vec<f64>), Failure> {
    let bytes =
        fs::read(path).map_err(|e| Failure::validation(format!("cannot read {}: {e}", path.display())))?;
    let bad = |m: &str| Failure::validation(format!("{}: {m}", path.display()));
    let word = |k: usize| -> Option<u64> {
        bytes.get(8 * k..8 * k + 8).map(|c| u64::from_le_bytes(c.try_into().unwrap()))
    };
    let rank = word(0).ok_or_else(|| bad("truncated header"))? as usize;
    if rank > 64 {
        return Err(bad("implausible rank; not a tensor file"));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut len = 1usize;
    for k in 0..rank {
        let extent = word(1 + k).ok_or_else(|| bad("truncated header"))? as usize;
        len = len
            .checked_mul(extent)
            .filter(|&n| n <= (1 << 32))
            .ok_or_else(|| bad("extent product overflows"))?;
        shape.push(extent);
    }
    let body = &bytes[8 * (1 + rank)..];
    if body.len() != 8 * len {
        return Err(bad("value count disagrees with the header"));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((shape, values))
}

pub fn write_ten(path: &Path, shape: &[usize], values: &[f64]) -> Result<(), Failure> {
    assert_eq!(values.len(), shape.iter().product::<usize>(), "shape and value count disagree");
    let mut out = Vec::with_capacity(8 * (1 + shape.len() + values.len()));
    out.extend((shape.len() as u64).to_le_bytes());
    for &s in shape {
        out.extend((s as u64).to_le_bytes());
    }
    for &v in values {
        out.extend(v.to_le_bytes());
    }
    fs::write(path, out)
        .map_err(|e| Failure::validation(format!("cannot write {}: {e}", path.display())))
}
