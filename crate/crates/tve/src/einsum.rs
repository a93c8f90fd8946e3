//! Einsum-style string front-end with a plates declaration.
//!
//! A spec like `"xy,iyz->xz"` with plates `"i"` describes one factor per
//! operand. Symbols declared in the plates string become plate dims of
//! their operands; every other symbol is a variable. A variable's plate
//! set is inferred as the largest one consistent with the inputs: the
//! intersection of the plate symbols it co-occurs with, over all operands
//! containing it. Output symbols denote a single shared variable, so their
//! plate set is empty. Contraction sums out every non-output variable and
//! multiplies across plate slices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::engine::{self, EngineError, Options};
use crate::graph::PlatedFactorGraph;
use crate::semiring::Semiring;
use crate::tensor::{DimName, NamedTensor};
use crate::Element;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum EinsumError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("operand {operand} repeats symbol '{symbol}'")]
    DuplicateSymbolInOperand { operand: usize, symbol: char },
    #[error("output repeats symbol '{0}'")]
    DuplicateOutputSymbol(char),
    #[error("output symbol '{0}' appears in no input")]
    OutputSymbolNotInInputs(char),
    #[error("output symbol '{0}' is declared as a plate")]
    PlateInOutput(char),
    #[error("symbol '{0}' is used as both a plate and a variable")]
    InconsistentKind(char),
    #[error("symbol '{symbol}' has extent {expected} in one operand and {found} in another")]
    SizeMismatch { symbol: char, expected: usize, found: usize },
    #[error("symbol '{symbol}' has extent 0 in operand {operand}")]
    ZeroExtent { operand: usize, symbol: char },
    #[error("spec names {expected} operands, {found} given")]
    OperandCount { expected: usize, found: usize },
    #[error("operand {operand} should have rank {expected}, shape has rank {found}")]
    OperandRank { operand: usize, expected: usize, found: usize },
    #[error("operand {operand} needs {expected} values, {found} given")]
    DataLength { operand: usize, expected: usize, found: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// A parsed spec: one symbol string per operand, the output symbols, and
/// which symbols are plates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EinsumSpec {
    inputs: Vec<Vec<char>>,
    output: Vec<char>,
    plates: BTreeSet<char>,
}

impl EinsumSpec {
    pub fn inputs(&self) -> &[Vec<char>] {
        &self.inputs
    }

    pub fn output(&self) -> &[char] {
        &self.output
    }

    pub fn plates(&self) -> &BTreeSet<char> {
        &self.plates
    }

    pub fn is_plate(&self, symbol: char) -> bool {
        self.plates.contains(&symbol)
    }

    /// The plates declaration as a string, in sorted order.
    pub fn plates_string(&self) -> String {
        self.plates.iter().collect()
    }
}

impl fmt::Display for EinsumSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, inp) in self.inputs.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            for c in inp {
                write!(f, "{c}")?;
            }
        }
        f.write_str("->")?;
        for c in &self.output {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Parse `"ab,bc->ac"` plus a plates declaration like `"i"`. Symbols are
/// single ASCII letters; the output may be empty (full contraction), and
/// an empty operand denotes a rank-0 scalar.
pub fn parse(spec: &str, plates: &str) -> Result<EinsumSpec, EinsumError> {
    let arrow = spec.find("->").ok_or_else(|| EinsumError::Syntax {
        pos: spec.len(),
        message: "expected '->'".into(),
    })?;
    let (lhs, rhs) = (&spec[..arrow], &spec[arrow + 2..]);
    if let Some(extra) = rhs.find("->") {
        return Err(EinsumError::Syntax {
            pos: arrow + 2 + extra,
            message: "more than one '->'".into(),
        });
    }

    let mut inputs = Vec::new();
    let mut start = 0;
    for piece in lhs.split(',') {
        let mut syms = Vec::new();
        for (off, c) in piece.char_indices() {
            if !c.is_ascii_alphabetic() {
                return Err(EinsumError::Syntax {
                    pos: start + off,
                    message: format!("unexpected character '{c}'"),
                });
            }
            if syms.contains(&c) {
                return Err(EinsumError::DuplicateSymbolInOperand {
                    operand: inputs.len(),
                    symbol: c,
                });
            }
            syms.push(c);
        }
        start += piece.len() + 1;
        inputs.push(syms);
    }

    let mut output = Vec::new();
    for (off, c) in rhs.char_indices() {
        if !c.is_ascii_alphabetic() {
            return Err(EinsumError::Syntax {
                pos: arrow + 2 + off,
                message: format!("unexpected character '{c}'"),
            });
        }
        if output.contains(&c) {
            return Err(EinsumError::DuplicateOutputSymbol(c));
        }
        output.push(c);
    }
    for c in &output {
        if !inputs.iter().any(|inp| inp.contains(c)) {
            return Err(EinsumError::OutputSymbolNotInInputs(*c));
        }
    }

    let mut plate_set = BTreeSet::new();
    for (off, c) in plates.char_indices() {
        if !c.is_ascii_alphabetic() {
            return Err(EinsumError::Syntax {
                pos: off,
                message: format!("unexpected character '{c}' in plates"),
            });
        }
        plate_set.insert(c);
    }

    Ok(EinsumSpec { inputs, output, plates: plate_set })
}

struct Skeleton {
    // extent per symbol, plate size or variable domain
    extents: BTreeMap<char, usize>,
    var_plates: BTreeMap<char, BTreeSet<char>>,
    // per operand, dims in symbol order
    operand_dims: Vec<Vec<(DimName, usize)>>,
}

fn skeleton(spec: &EinsumSpec, shapes: &[Vec<usize>]) -> Result<Skeleton, EinsumError> {
    if let Some(&c) = spec.output.iter().find(|c| spec.plates.contains(c)) {
        return Err(EinsumError::InconsistentKind(c));
    }
    if shapes.len() != spec.inputs.len() {
        return Err(EinsumError::OperandCount {
            expected: spec.inputs.len(),
            found: shapes.len(),
        });
    }

    let mut extents: BTreeMap<char, usize> = BTreeMap::new();
    let mut var_plates: BTreeMap<char, BTreeSet<char>> = BTreeMap::new();
    let mut operand_dims = Vec::with_capacity(shapes.len());
    for (k, (syms, shape)) in spec.inputs.iter().zip(shapes).enumerate() {
        if shape.len() != syms.len() {
            return Err(EinsumError::OperandRank {
                operand: k,
                expected: syms.len(),
                found: shape.len(),
            });
        }
        let operand_plates: BTreeSet<char> =
            syms.iter().copied().filter(|c| spec.plates.contains(c)).collect();
        let mut dims = Vec::with_capacity(syms.len());
        for (&c, &extent) in syms.iter().zip(shape) {
            if extent == 0 {
                return Err(EinsumError::ZeroExtent { operand: k, symbol: c });
            }
            match extents.get(&c) {
                Some(&prev) if prev != extent => {
                    return Err(EinsumError::SizeMismatch {
                        symbol: c,
                        expected: prev,
                        found: extent,
                    })
                }
                _ => {
                    extents.insert(c, extent);
                }
            }
            if spec.plates.contains(&c) {
                dims.push((DimName::plate(c.to_string()), extent));
            } else {
                dims.push((DimName::variable(c.to_string()), extent));
                var_plates
                    .entry(c)
                    .and_modify(|p| {
                        p.retain(|b| operand_plates.contains(b));
                    })
                    .or_insert_with(|| operand_plates.clone());
            }
        }
        operand_dims.push(dims);
    }
    // an output symbol names one shared variable across all slices
    for c in &spec.output {
        var_plates.insert(*c, BTreeSet::new());
    }

    Ok(Skeleton { extents, var_plates, operand_dims })
}

fn build_graph<T, F>(sk: &Skeleton, mut tensor: F) -> PlatedFactorGraph<T>
where
    T: Element,
    F: FnMut(usize, Vec<(DimName, usize)>) -> NamedTensor<T>,
{
    let mut g = PlatedFactorGraph::new();
    let used: BTreeSet<char> = sk
        .operand_dims
        .iter()
        .flat_map(|dims| dims.iter())
        .filter(|(d, _)| d.is_plate())
        .map(|(d, _)| d.name().chars().next().expect("single-letter symbol"))
        .collect();
    for c in used {
        g.add_plate(c.to_string(), sk.extents[&c]).expect("fresh plate");
    }
    for (c, plates) in &sk.var_plates {
        let names: Vec<String> = plates.iter().map(|p| p.to_string()).collect();
        g.add_variable(c.to_string(), sk.extents[c], names).expect("fresh variable");
    }
    for (k, dims) in sk.operand_dims.iter().enumerate() {
        let t = tensor(k, dims.clone());
        g.add_factor(format!("op{k}"), t).expect("checked operand");
    }
    g
}

/// Build the factor graph a spec describes, from operand shapes alone.
/// Factors carry unit tensors; use this to inspect the inferred structure
/// or to plan without data.
pub fn infer_plate_sets(
    spec: &EinsumSpec,
    shapes: &[Vec<usize>],
) -> Result<PlatedFactorGraph<()>, EinsumError> {
    let sk = skeleton(spec, shapes)?;
    Ok(build_graph(&sk, |_, dims| NamedTensor::filled(dims, ()).expect("checked shapes")))
}

/// Contract the operands per the spec. Each operand is a row-major value
/// buffer with its shape. The result's dims are the output variables; use
/// [`NamedTensor::export`] to read it in a chosen symbol order.
pub fn plated_einsum<S: Semiring>(
    s: &S,
    spec: &EinsumSpec,
    operands: &[(Vec<usize>, Vec<S::Elem>)],
) -> Result<NamedTensor<S::Elem>, EinsumError> {
    if let Some(&c) = spec.output.iter().find(|c| spec.plates.contains(c)) {
        return Err(EinsumError::PlateInOutput(c));
    }
    let shapes: Vec<Vec<usize>> = operands.iter().map(|(shape, _)| shape.clone()).collect();
    let sk = skeleton(spec, &shapes)?;
    for (k, dims) in sk.operand_dims.iter().enumerate() {
        let expected: usize = dims.iter().map(|(_, s)| s).product();
        let found = operands[k].1.len();
        if found != expected {
            return Err(EinsumError::DataLength { operand: k, expected, found });
        }
    }
    let g = build_graph(&sk, |k, dims| {
        NamedTensor::from_flat(dims, operands[k].1.clone()).expect("length checked")
    });
    let keep: BTreeSet<String> = spec.output.iter().map(|c| c.to_string()).collect();
    let run = engine::contract_keeping(s, &g, &keep, &Options::default())?;
    Ok(run.result)
}
