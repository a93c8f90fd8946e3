//! Dense tensors addressed by named dimensions.
//!
//! A dimension is either a *plate* (a batch axis that is only ever
//! product-reduced) or a *variable* (a domain axis that is only ever
//! plus-reduced). Tensors broadcast by name: binary operations align their
//! operands to the union of dim names, expanding missing dims virtually
//! with stride 0 rather than by copying. Dims are kept in one canonical
//! order (plates sorted by name, then variables sorted by name) so layouts,
//! oracles, and serialized forms never disagree about value order.
//!
//! Reductions fold in the fixed balanced-tree order of
//! [`crate::semiring::fold_plus_by`]. Kernels over large outputs run on the
//! current rayon pool, but each output cell is computed independently, so
//! results are bit-identical for every thread count.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::semiring::{fold_argmax_by, fold_plus_by, fold_times_by, DivideSemiring, MaxSemiring, Semiring};
use crate::Element;

/// Axis role. Plates are replication axes; variables carry domains.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum DimKind {
    Plate,
    Variable,
}

/// A named, kinded dimension. The derived ordering (kind first, then name)
/// is the canonical dim order used throughout the crate.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DimName {
    kind: DimKind,
    name: String,
}

impl DimName {
    pub fn new(name: impl Into<String>, kind: DimKind) -> Self {
        Self { kind, name: name.into() }
    }

    pub fn plate(name: impl Into<String>) -> Self {
        Self::new(name, DimKind::Plate)
    }

    pub fn variable(name: impl Into<String>) -> Self {
        Self::new(name, DimKind::Variable)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> DimKind {
        self.kind
    }

    pub fn is_plate(&self) -> bool {
        self.kind == DimKind::Plate
    }

    pub fn is_variable(&self) -> bool {
        self.kind == DimKind::Variable
    }
}

impl fmt::Debug for DimName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            DimKind::Plate => write!(f, "plate({})", self.name),
            DimKind::Variable => write!(f, "var({})", self.name),
        }
    }
}

impl fmt::Display for DimName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("dim {dim:?} has conflicting sizes {a} and {b}")]
    SizeMismatch { dim: String, a: usize, b: usize },
    #[error("dim {dim:?} is a plate in one place and a variable in another")]
    KindMismatch { dim: String },
    #[error("duplicate dim {dim:?}")]
    DuplicateDim { dim: String },
    #[error("no dim named {dim:?}")]
    UnknownDim { dim: String },
    #[error("plate dim {dim:?} cannot be plus-reduced")]
    PlusOnPlateDim { dim: String },
    #[error("variable dim {dim:?} cannot be product-reduced")]
    ProductOnVariableDim { dim: String },
    #[error("index {index} out of range for dim {dim:?} of size {size}")]
    IndexOutOfRange { dim: String, size: usize, index: usize },
    #[error("dim {dim:?} must have size >= 1")]
    EmptyDim { dim: String },
    #[error("shape holds {expected} values but {got} were given")]
    WrongValueCount { expected: usize, got: usize },
    #[error("index must name every dim of the tensor exactly once")]
    BadIndex,
}

/// Dense tensor with named dims, stride-0 broadcasting, and shared storage.
///
/// Cloning and slicing never copy values. Equality is logical: same dims,
/// same entries, regardless of layout.
#[derive(Clone)]
pub struct NamedTensor<T> {
    dims: Vec<(DimName, usize)>,
    strides: Vec<usize>,
    offset: usize,
    data: Arc<Vec<T>>,
}

impl<T: Element> NamedTensor<T> {
    /// Zero-dim tensor holding one value.
    pub fn scalar(value: T) -> Self {
        Self {
            dims: Vec::new(),
            strides: Vec::new(),
            offset: 0,
            data: Arc::new(vec![value]),
        }
    }

    /// Build from dims in caller order and values row-major over that
    /// order. The result is stored in canonical dim order (a relabeling,
    /// not a copy).
    pub fn from_flat(dims: Vec<(DimName, usize)>, values: Vec<T>) -> Result<Self, TensorError> {
        let mut expected: usize = 1;
        let mut seen: std::collections::BTreeMap<&str, DimKind> = std::collections::BTreeMap::new();
        for (d, size) in &dims {
            if *size == 0 {
                return Err(TensorError::EmptyDim { dim: d.name().to_string() });
            }
            match seen.insert(d.name(), d.kind()) {
                Some(kind) if kind != d.kind() => {
                    return Err(TensorError::KindMismatch { dim: d.name().to_string() })
                }
                Some(_) => return Err(TensorError::DuplicateDim { dim: d.name().to_string() }),
                None => {}
            }
            expected = expected.checked_mul(*size).ok_or(TensorError::WrongValueCount {
                expected: usize::MAX,
                got: values.len(),
            })?;
        }
        if values.len() != expected {
            return Err(TensorError::WrongValueCount { expected, got: values.len() });
        }

        let mut strides = vec![0usize; dims.len()];
        let mut acc = 1usize;
        for i in (0..dims.len()).rev() {
            strides[i] = acc;
            acc *= dims[i].1;
        }

        let mut order: Vec<usize> = (0..dims.len()).collect();
        order.sort_by(|&i, &j| dims[i].0.cmp(&dims[j].0));
        let dims = order.iter().map(|&i| dims[i].clone()).collect();
        let strides = order.iter().map(|&i| strides[i]).collect();

        Ok(Self { dims, strides, offset: 0, data: Arc::new(values) })
    }

    /// Tensor with every entry equal to `value`.
    pub fn filled(dims: Vec<(DimName, usize)>, value: T) -> Result<Self, TensorError> {
        let mut len = 1usize;
        for (_, size) in &dims {
            len = len.saturating_mul(*size);
        }
        Self::from_flat(dims, vec![value; len])
    }

    pub fn dims(&self) -> &[(DimName, usize)] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.dims.is_empty()
    }

    /// Number of logical entries (product of dim sizes).
    pub fn len(&self) -> usize {
        self.dims.iter().map(|(_, s)| s).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn size(&self, dim: &DimName) -> Option<usize> {
        self.dims.iter().find(|(d, _)| d == dim).map(|(_, s)| *s)
    }

    pub fn has_dim(&self, dim: &DimName) -> bool {
        self.size(dim).is_some()
    }

    /// The single value of a zero-dim tensor.
    pub fn item(&self) -> Option<&T> {
        if self.is_scalar() {
            Some(&self.data[self.offset])
        } else {
            None
        }
    }

    fn dim_index(&self, dim: &DimName) -> Result<usize, TensorError> {
        self.dims
            .iter()
            .position(|(d, _)| d == dim)
            .ok_or_else(|| TensorError::UnknownDim { dim: dim.name().to_string() })
    }

    /// Entry at a positional index in `dims()` order.
    pub fn at(&self, index: &[usize]) -> &T {
        debug_assert_eq!(index.len(), self.dims.len());
        let mut off = self.offset;
        for (k, &i) in index.iter().enumerate() {
            debug_assert!(i < self.dims[k].1);
            off += i * self.strides[k];
        }
        &self.data[off]
    }

    /// Entry addressed by name; every dim must appear exactly once.
    pub fn get(&self, index: &[(DimName, usize)]) -> Result<&T, TensorError> {
        if index.len() != self.dims.len()
            || index.iter().map(|(d, _)| d).collect::<std::collections::BTreeSet<_>>().len()
                != self.dims.len()
        {
            return Err(TensorError::BadIndex);
        }
        let mut off = self.offset;
        for (d, i) in index {
            let k = self.dim_index(d)?;
            let size = self.dims[k].1;
            if *i >= size {
                return Err(TensorError::IndexOutOfRange {
                    dim: d.name().to_string(),
                    size,
                    index: *i,
                });
            }
            off += i * self.strides[k];
        }
        Ok(&self.data[off])
    }

    /// Fix `dim = index`, dropping the dim. Shares storage.
    pub fn slice(&self, dim: &DimName, index: usize) -> Result<Self, TensorError> {
        let k = self.dim_index(dim)?;
        let size = self.dims[k].1;
        if index >= size {
            return Err(TensorError::IndexOutOfRange {
                dim: dim.name().to_string(),
                size,
                index,
            });
        }
        let mut dims = self.dims.clone();
        let mut strides = self.strides.clone();
        let offset = self.offset + index * strides[k];
        dims.remove(k);
        strides.remove(k);
        Ok(Self { dims, strides, offset, data: Arc::clone(&self.data) })
    }

    /// Rename one dim. Shares storage; the dim keeps its position in the
    /// canonical order according to its new name.
    pub fn rename(&self, from: &DimName, to: DimName) -> Result<Self, TensorError> {
        let k = self.dim_index(from)?;
        if to != *from && self.dims.iter().any(|(d, _)| d.name() == to.name()) {
            return Err(TensorError::DuplicateDim { dim: to.name().to_string() });
        }
        let mut renamed = self.dims.clone();
        renamed[k].0 = to;
        let mut order: Vec<usize> = (0..renamed.len()).collect();
        order.sort_by(|&i, &j| renamed[i].0.cmp(&renamed[j].0));
        let dims = order.iter().map(|&i| renamed[i].clone()).collect();
        let strides = order.iter().map(|&i| self.strides[i]).collect();
        Ok(Self { dims, strides, offset: self.offset, data: Arc::clone(&self.data) })
    }

    /// View of this tensor over a superset of its dims; added dims get
    /// stride 0. `target` must be canonically ordered with consistent
    /// sizes.
    pub fn broadcast_to(&self, target: &[(DimName, usize)]) -> Result<Self, TensorError> {
        let mut strides = Vec::with_capacity(target.len());
        for (d, size) in target {
            match self.dims.iter().position(|(sd, _)| sd == d) {
                Some(k) => {
                    let have = self.dims[k].1;
                    if have != *size {
                        return Err(TensorError::SizeMismatch {
                            dim: d.name().to_string(),
                            a: have,
                            b: *size,
                        });
                    }
                    strides.push(self.strides[k]);
                }
                None => strides.push(0),
            }
        }
        for (d, _) in &self.dims {
            if !target.iter().any(|(t, _)| t == d) {
                return Err(TensorError::UnknownDim { dim: d.name().to_string() });
            }
        }
        Ok(Self {
            dims: target.to_vec(),
            strides,
            offset: self.offset,
            data: Arc::clone(&self.data),
        })
    }

    /// Values in row-major order over the canonical dims.
    pub fn to_vec(&self) -> Vec<T> {
        let reader = CellReader::of(self);
        (0..self.len()).map(|i| self.data[reader.offset_at(i)].clone()).collect()
    }

    /// Values in row-major order over an explicit dim permutation.
    pub fn export(&self, order: &[DimName]) -> Result<Vec<T>, TensorError> {
        if order.len() != self.dims.len() {
            return Err(TensorError::BadIndex);
        }
        let mut extents = Vec::with_capacity(order.len());
        let mut strides = Vec::with_capacity(order.len());
        let mut seen = std::collections::BTreeSet::new();
        for d in order {
            let k = self.dim_index(d)?;
            if !seen.insert(k) {
                return Err(TensorError::BadIndex);
            }
            extents.push(self.dims[k].1);
            strides.push(self.strides[k]);
        }
        let reader = CellReader { extents, strides, offset: self.offset };
        Ok((0..self.len()).map(|i| self.data[reader.offset_at(i)].clone()).collect())
    }

    /// Entrywise map, materializing the canonical layout.
    pub fn map<U: Element>(&self, f: impl Fn(&T) -> U) -> NamedTensor<U> {
        let reader = CellReader::of(self);
        let values = (0..self.len()).map(|i| f(&self.data[reader.offset_at(i)])).collect();
        NamedTensor::from_flat(self.dims.clone(), values).expect("shape preserved")
    }
}

impl<T: Element> PartialEq for NamedTensor<T> {
    fn eq(&self, other: &Self) -> bool {
        if self.dims != other.dims {
            return false;
        }
        let a = CellReader::of(self);
        let b = CellReader::of(other);
        (0..self.len()).all(|i| self.data[a.offset_at(i)] == other.data[b.offset_at(i)])
    }
}

impl<T: Element> fmt::Debug for NamedTensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NamedTensor")
            .field("dims", &self.dims)
            .field("values", &self.to_vec())
            .finish()
    }
}

/// Flat-to-offset decoder for row-major iteration over `extents` with
/// arbitrary per-dim strides.
struct CellReader {
    extents: Vec<usize>,
    strides: Vec<usize>,
    offset: usize,
}

impl CellReader {
    fn of<T: Element>(t: &NamedTensor<T>) -> Self {
        Self {
            extents: t.dims.iter().map(|(_, s)| *s).collect(),
            strides: t.strides.clone(),
            offset: t.offset,
        }
    }

    fn offset_at(&self, mut flat: usize) -> usize {
        let mut off = self.offset;
        for k in (0..self.extents.len()).rev() {
            let e = self.extents[k];
            off += (flat % e) * self.strides[k];
            flat /= e;
        }
        off
    }
}

/// Work size above which kernels fan out on the rayon pool.
const PAR_THRESHOLD: usize = 1 << 15;

fn compute_cells<U: Send>(n: usize, work: usize, f: impl Fn(usize) -> U + Send + Sync) -> Vec<U> {
    use rayon::prelude::*;
    if work >= PAR_THRESHOLD && rayon::current_num_threads() > 1 {
        (0..n).into_par_iter().with_min_len(512).map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Union of dim lists with size and kind consistency checks, canonically
/// ordered.
pub fn union_dims(lists: &[&[(DimName, usize)]]) -> Result<Vec<(DimName, usize)>, TensorError> {
    let mut union: Vec<(DimName, usize)> = Vec::new();
    for dims in lists {
        for (d, size) in *dims {
            match union.iter().find(|(u, _)| u.name() == d.name()) {
                None => union.push((d.clone(), *size)),
                Some((u, have)) => {
                    if u.kind() != d.kind() {
                        return Err(TensorError::KindMismatch { dim: d.name().to_string() });
                    }
                    if have != size {
                        return Err(TensorError::SizeMismatch {
                            dim: d.name().to_string(),
                            a: *have,
                            b: *size,
                        });
                    }
                }
            }
        }
    }
    union.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(union)
}

/// Broadcast all tensors to their common dim union in canonical order.
pub fn align<T: Element>(tensors: &[&NamedTensor<T>]) -> Result<Vec<NamedTensor<T>>, TensorError> {
    let lists: Vec<&[(DimName, usize)]> = tensors.iter().map(|t| t.dims()).collect();
    let union = union_dims(&lists)?;
    tensors.iter().map(|t| t.broadcast_to(&union)).collect()
}

/// Entrywise semiring product over the aligned dim union.
pub fn pointwise_times<S: Semiring>(
    a: &NamedTensor<S::Elem>,
    b: &NamedTensor<S::Elem>,
    s: &S,
) -> Result<NamedTensor<S::Elem>, TensorError> {
    let union = union_dims(&[a.dims(), b.dims()])?;
    let av = a.broadcast_to(&union)?;
    let bv = b.broadcast_to(&union)?;
    let ra = CellReader::of(&av);
    let rb = CellReader::of(&bv);
    let n = av.len();
    let values = compute_cells(n, n, |i| {
        s.times(&av.data[ra.offset_at(i)], &bv.data[rb.offset_at(i)])
    });
    NamedTensor::from_flat(union, values)
}

/// Entrywise guarded semiring division over the aligned dim union.
pub fn pointwise_divide<S: DivideSemiring>(
    num: &NamedTensor<S::Elem>,
    den: &NamedTensor<S::Elem>,
    s: &S,
) -> Result<NamedTensor<S::Elem>, TensorError> {
    let union = union_dims(&[num.dims(), den.dims()])?;
    let nv = num.broadcast_to(&union)?;
    let dv = den.broadcast_to(&union)?;
    let rn = CellReader::of(&nv);
    let rd = CellReader::of(&dv);
    let n = nv.len();
    let values = compute_cells(n, n, |i| {
        s.divide(&nv.data[rn.offset_at(i)], &dv.data[rd.offset_at(i)])
    });
    NamedTensor::from_flat(union, values)
}

struct ReduceParts {
    kept: Vec<(DimName, usize)>,
    outer: CellReader,
    inner: CellReader,
    n_out: usize,
    fold_len: usize,
}

fn split_for_reduce<T: Element>(
    t: &NamedTensor<T>,
    dims: &[DimName],
    reduced_kind: DimKind,
) -> Result<ReduceParts, TensorError> {
    for d in dims {
        let k = t.dim_index(d)?;
        if t.dims[k].0.kind() != reduced_kind {
            return Err(match reduced_kind {
                DimKind::Variable => TensorError::PlusOnPlateDim { dim: d.name().to_string() },
                DimKind::Plate => TensorError::ProductOnVariableDim { dim: d.name().to_string() },
            });
        }
    }
    let mut kept = Vec::new();
    let mut outer = (Vec::new(), Vec::new());
    let mut inner = (Vec::new(), Vec::new());
    for (k, (d, size)) in t.dims.iter().enumerate() {
        if dims.contains(d) {
            inner.0.push(*size);
            inner.1.push(t.strides[k]);
        } else {
            kept.push((d.clone(), *size));
            outer.0.push(*size);
            outer.1.push(t.strides[k]);
        }
    }
    let n_out = outer.0.iter().product();
    let fold_len = inner.0.iter().product();
    Ok(ReduceParts {
        kept,
        outer: CellReader { extents: outer.0, strides: outer.1, offset: t.offset },
        inner: CellReader { extents: inner.0, strides: inner.1, offset: 0 },
        n_out,
        fold_len,
    })
}

/// Plus-reduce over a set of variable dims. Each output entry is the fixed
/// tree fold over all index combinations of `dims` in row-major order.
pub fn reduce_plus<S: Semiring>(
    t: &NamedTensor<S::Elem>,
    dims: &[DimName],
    s: &S,
) -> Result<NamedTensor<S::Elem>, TensorError> {
    if dims.is_empty() {
        return Ok(t.clone());
    }
    let p = split_for_reduce(t, dims, DimKind::Variable)?;
    let data = &t.data;
    let values = compute_cells(p.n_out, p.n_out * p.fold_len, |o| {
        let base = p.outer.offset_at(o);
        fold_plus_by(s, p.fold_len, |j| data[base + p.inner.offset_at(j)].clone())
    });
    NamedTensor::from_flat(p.kept, values)
}

/// Plus-reduce over one variable dim, also returning the winning index per
/// output cell. Ties go to the lowest index.
pub fn reduce_plus_argmax<S: MaxSemiring>(
    t: &NamedTensor<S::Elem>,
    dim: &DimName,
    s: &S,
) -> Result<(NamedTensor<S::Elem>, NamedTensor<usize>), TensorError> {
    let p = split_for_reduce(t, std::slice::from_ref(dim), DimKind::Variable)?;
    let data = &t.data;
    let cells = compute_cells(p.n_out, p.n_out * p.fold_len, |o| {
        let base = p.outer.offset_at(o);
        fold_argmax_by(s, p.fold_len, |j| data[base + p.inner.offset_at(j)].clone())
    });
    let mut values = Vec::with_capacity(cells.len());
    let mut winners = Vec::with_capacity(cells.len());
    for (v, w) in cells {
        values.push(v);
        winners.push(w);
    }
    let out = NamedTensor::from_flat(p.kept.clone(), values)?;
    let idx = NamedTensor::from_flat(p.kept, winners)?;
    Ok((out, idx))
}

/// Times-reduce over a set of plate dims, same fold contract as
/// [`reduce_plus`].
pub fn reduce_product<S: Semiring>(
    t: &NamedTensor<S::Elem>,
    dims: &[DimName],
    s: &S,
) -> Result<NamedTensor<S::Elem>, TensorError> {
    if dims.is_empty() {
        return Ok(t.clone());
    }
    let p = split_for_reduce(t, dims, DimKind::Plate)?;
    let data = &t.data;
    let values = compute_cells(p.n_out, p.n_out * p.fold_len, |o| {
        let base = p.outer.offset_at(o);
        fold_times_by(s, p.fold_len, |j| data[base + p.inner.offset_at(j)].clone())
    });
    NamedTensor::from_flat(p.kept, values)
}
