//! Commutative semirings and the deterministic fold kernels built on them.
//!
//! Every contraction in this crate is generic over a [`Semiring`]: swap the
//! instance and the same elimination code computes partition functions
//! ([`RealSumProduct`]), numerically stable log-space partition functions
//! ([`LogSumExpProduct`]), or unnormalized MAP scores ([`MaxProduct`],
//! [`MaxSum`]). Optional capabilities are split into extra traits:
//! [`DivideSemiring`] for marginal backward passes, [`MaxSemiring`] for
//! argmax bookkeeping, [`SampleSemiring`] for categorical draws.
//!
//! All folds go through the fixed balanced tree in [`fold_plus_by`] so that
//! results are bit-identical regardless of thread count or chunking.

use std::fmt;
use std::marker::PhantomData;
use std::str::FromStr;

use num_traits::Float;

use crate::Element;

/// Float scalar usable as a semiring carrier (`f32`, `f64`).
pub trait FloatElem: Float + fmt::Debug + fmt::Display + Send + Sync + 'static {}

impl<F: Float + fmt::Debug + fmt::Display + Send + Sync + 'static> FloatElem for F {}

/// A commutative semiring over an owned carrier type.
///
/// Laws: `plus` is associative and commutative with identity [`zero`];
/// `times` is associative and commutative with identity [`one`] and
/// distributes over `plus`. Float instances satisfy the laws to relative
/// tolerance rather than exactly.
///
/// [`zero`]: Semiring::zero
/// [`one`]: Semiring::one
pub trait Semiring: Clone + Send + Sync + 'static {
    type Elem: Element;

    fn zero(&self) -> Self::Elem;
    fn one(&self) -> Self::Elem;
    fn plus(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
    fn times(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem;

    fn is_zero(&self, a: &Self::Elem) -> bool {
        *a == self.zero()
    }

    /// Plus-fold of `k` copies of `one`: the contribution of a variable that
    /// appears in no factor. Folded by default; instances where the result
    /// has a closed form may shortcut.
    fn sum_of_ones(&self, k: usize) -> Self::Elem {
        let one = self.one();
        fold_plus_by(self, k, |_| one.clone())
    }

    /// Comparison used by internal validation assertions. Exact by default;
    /// float instances loosen it to a small relative (linear-space) or
    /// absolute (log-space) tolerance.
    fn approx_eq(&self, a: &Self::Elem, b: &Self::Elem) -> bool {
        a == b
    }
}

/// Semiring with a guarded division, `divide(times(a, b), b) == a` for
/// nonzero `b`. Dividing by zero returns zero instead of poisoning the
/// result; backward marginal passes rely on that for structurally-zero
/// entries and count the occurrences themselves.
pub trait DivideSemiring: Semiring {
    fn divide(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
}

/// Semiring whose `plus` is a strict maximum, enabling argmax folds.
pub trait MaxSemiring: Semiring {
    /// True when `challenger` strictly improves on `incumbent`. Argmax folds
    /// keep the incumbent on ties, so the lowest index wins.
    fn beats(&self, challenger: &Self::Elem, incumbent: &Self::Elem) -> bool;
}

/// Semiring whose carrier encodes sampling weights.
pub trait SampleSemiring: DivideSemiring {
    /// Map `unit` in `[0, 1)` to an index drawn with probability
    /// proportional to `weights`. At least one weight must be nonzero.
    fn draw(&self, weights: &[Self::Elem], unit: f64) -> usize;
}

fn rel_close<F: Float>(a: F, b: F, rel: F, abs: F) -> bool {
    if a == b {
        return true;
    }
    let d = (a - b).abs();
    d <= abs || d <= rel * a.abs().max(b.abs())
}

/// Ordinary arithmetic: `plus = +`, `times = *`, carrier any float.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RealSumProduct<F = f64>(PhantomData<F>);

impl<F> RealSumProduct<F> {
    pub const fn new() -> Self {
        Self(PhantomData)
    }
}

impl<F: FloatElem> Semiring for RealSumProduct<F> {
    type Elem = F;

    fn zero(&self) -> F {
        F::zero()
    }

    fn one(&self) -> F {
        F::one()
    }

    fn plus(&self, a: &F, b: &F) -> F {
        *a + *b
    }

    fn times(&self, a: &F, b: &F) -> F {
        *a * *b
    }

    fn sum_of_ones(&self, k: usize) -> F {
        F::from(k).expect("count representable in carrier")
    }

    fn approx_eq(&self, a: &F, b: &F) -> bool {
        rel_close(*a, *b, F::from(1e-9).unwrap(), F::from(1e-12).unwrap())
    }
}

impl<F: FloatElem> DivideSemiring for RealSumProduct<F> {
    fn divide(&self, a: &F, b: &F) -> F {
        if b.is_zero() {
            F::zero()
        } else {
            *a / *b
        }
    }
}

impl<F: FloatElem> SampleSemiring for RealSumProduct<F> {
    fn draw(&self, weights: &[F], unit: f64) -> usize {
        let mut total = F::zero();
        for w in weights {
            debug_assert!(*w >= F::zero(), "sampling weight must be non-negative");
            total = total + *w;
        }
        let target = F::from(unit).unwrap() * total;
        let mut acc = F::zero();
        for (i, w) in weights.iter().enumerate() {
            acc = acc + *w;
            if target < acc {
                return i;
            }
        }
        weights.len().saturating_sub(1)
    }
}

/// Log-space arithmetic: `plus = logsumexp`, `times = +`, `zero = -inf`,
/// `one = 0`. Carrier values are logs of the linear-space values; `+inf` is
/// not a valid carrier value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LogSumExpProduct<F = f64>(PhantomData<F>);

impl<F> LogSumExpProduct<F> {
    pub const fn new() -> Self {
        Self(PhantomData)
    }
}

impl<F: FloatElem> Semiring for LogSumExpProduct<F> {
    type Elem = F;

    fn zero(&self) -> F {
        F::neg_infinity()
    }

    fn one(&self) -> F {
        F::zero()
    }

    fn plus(&self, a: &F, b: &F) -> F {
        if *a == F::neg_infinity() {
            *b
        } else if *b == F::neg_infinity() {
            *a
        } else {
            let m = a.max(*b);
            m + ((*a - m).exp() + (*b - m).exp()).ln()
        }
    }

    fn times(&self, a: &F, b: &F) -> F {
        *a + *b
    }

    fn approx_eq(&self, a: &F, b: &F) -> bool {
        *a == *b || (*a - *b).abs() <= F::from(1e-9).unwrap()
    }
}

impl<F: FloatElem> DivideSemiring for LogSumExpProduct<F> {
    fn divide(&self, a: &F, b: &F) -> F {
        if *b == F::neg_infinity() {
            F::neg_infinity()
        } else {
            *a - *b
        }
    }
}

impl<F: FloatElem> SampleSemiring for LogSumExpProduct<F> {
    fn draw(&self, weights: &[F], unit: f64) -> usize {
        let mut m = F::neg_infinity();
        for w in weights {
            m = m.max(*w);
        }
        if m == F::neg_infinity() {
            return 0;
        }
        let mut total = F::zero();
        for w in weights {
            total = total + (*w - m).exp();
        }
        let target = F::from(unit).unwrap() * total;
        let mut acc = F::zero();
        for (i, w) in weights.iter().enumerate() {
            acc = acc + (*w - m).exp();
            if target < acc {
                return i;
            }
        }
        weights.len().saturating_sub(1)
    }
}

/// Viterbi-style scoring in linear space: `plus = max`, `times = *`.
/// Distributivity holds on the non-negative reals, which is the intended
/// carrier range.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MaxProduct<F = f64>(PhantomData<F>);

impl<F> MaxProduct<F> {
    pub const fn new() -> Self {
        Self(PhantomData)
    }
}

impl<F: FloatElem> Semiring for MaxProduct<F> {
    type Elem = F;

    fn zero(&self) -> F {
        F::zero()
    }

    fn one(&self) -> F {
        F::one()
    }

    fn plus(&self, a: &F, b: &F) -> F {
        if *b > *a {
            *b
        } else {
            *a
        }
    }

    fn times(&self, a: &F, b: &F) -> F {
        *a * *b
    }

    fn sum_of_ones(&self, k: usize) -> F {
        if k == 0 {
            F::zero()
        } else {
            F::one()
        }
    }

    fn approx_eq(&self, a: &F, b: &F) -> bool {
        rel_close(*a, *b, F::from(1e-9).unwrap(), F::from(1e-12).unwrap())
    }
}

impl<F: FloatElem> MaxSemiring for MaxProduct<F> {
    fn beats(&self, challenger: &F, incumbent: &F) -> bool {
        *challenger > *incumbent
    }
}

/// Viterbi-style scoring in log space: `plus = max`, `times = +`,
/// `zero = -inf`, `one = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MaxSum<F = f64>(PhantomData<F>);

impl<F> MaxSum<F> {
    pub const fn new() -> Self {
        Self(PhantomData)
    }
}

impl<F: FloatElem> Semiring for MaxSum<F> {
    type Elem = F;

    fn zero(&self) -> F {
        F::neg_infinity()
    }

    fn one(&self) -> F {
        F::zero()
    }

    fn plus(&self, a: &F, b: &F) -> F {
        if *b > *a {
            *b
        } else {
            *a
        }
    }

    fn times(&self, a: &F, b: &F) -> F {
        *a + *b
    }

    fn sum_of_ones(&self, k: usize) -> F {
        if k == 0 {
            F::neg_infinity()
        } else {
            F::zero()
        }
    }

    fn approx_eq(&self, a: &F, b: &F) -> bool {
        *a == *b || (*a - *b).abs() <= F::from(1e-9).unwrap()
    }
}

impl<F: FloatElem> MaxSemiring for MaxSum<F> {
    fn beats(&self, challenger: &F, incumbent: &F) -> bool {
        *challenger > *incumbent
    }
}

/// Instance selector for config and CLI dispatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SemiringKind {
    Real,
    Log,
    MaxProd,
    MaxSum,
}

impl SemiringKind {
    pub const ALL: [SemiringKind; 4] = [
        SemiringKind::Real,
        SemiringKind::Log,
        SemiringKind::MaxProd,
        SemiringKind::MaxSum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SemiringKind::Real => "real",
            SemiringKind::Log => "log",
            SemiringKind::MaxProd => "maxprod",
            SemiringKind::MaxSum => "maxsum",
        }
    }

    /// Whether carrier values are logs of the linear-space quantities.
    pub fn log_carrier(self) -> bool {
        matches!(self, SemiringKind::Log | SemiringKind::MaxSum)
    }
}

impl FromStr for SemiringKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        SemiringKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown semiring {s:?} (expected real, log, maxprod, or maxsum)"))
    }
}

impl fmt::Display for SemiringKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn fold_range<T>(lo: usize, hi: usize, read: &impl Fn(usize) -> T, op: &impl Fn(&T, &T) -> T) -> T {
    if hi - lo == 1 {
        read(lo)
    } else {
        let mid = lo + (hi - lo) / 2;
        let left = fold_range(lo, mid, read, op);
        let right = fold_range(mid, hi, read, op);
        op(&left, &right)
    }
}

/// Plus-fold of `read(0..n)` in the fixed balanced-tree order (split at
/// `n/2`, recurse left then right). Empty input yields `zero`. The tree
/// shape depends only on `n`, making results independent of how callers
/// chunk the surrounding work.
pub fn fold_plus_by<S: Semiring>(s: &S, n: usize, read: impl Fn(usize) -> S::Elem) -> S::Elem {
    if n == 0 {
        return s.zero();
    }
    fold_range(0, n, &read, &|a, b| s.plus(a, b))
}

/// Times-fold of `read(0..n)`, same tree as [`fold_plus_by`]. Empty input
/// yields `one`.
pub fn fold_times_by<S: Semiring>(s: &S, n: usize, read: impl Fn(usize) -> S::Elem) -> S::Elem {
    if n == 0 {
        return s.one();
    }
    fold_range(0, n, &read, &|a, b| s.times(a, b))
}

/// Plus-fold of a slice.
pub fn fold_plus<S: Semiring>(s: &S, values: &[S::Elem]) -> S::Elem {
    fold_plus_by(s, values.len(), |i| values[i].clone())
}

/// Times-fold of a slice.
pub fn fold_times<S: Semiring>(s: &S, values: &[S::Elem]) -> S::Elem {
    fold_times_by(s, values.len(), |i| values[i].clone())
}

/// Max-fold with the winning index, same tree as [`fold_plus_by`]. Ties keep
/// the lower index. Empty input yields `(zero, 0)`.
pub fn fold_argmax_by<S: MaxSemiring>(
    s: &S,
    n: usize,
    read: impl Fn(usize) -> S::Elem,
) -> (S::Elem, usize) {
    if n == 0 {
        return (s.zero(), 0);
    }
    fold_range(
        0,
        n,
        &|i| (read(i), i),
        &|a, b| {
            if s.beats(&b.0, &a.0) {
                b.clone()
            } else {
                a.clone()
            }
        },
    )
}

/// Max-fold of a slice with the winning index.
pub fn fold_argmax<S: MaxSemiring>(s: &S, values: &[S::Elem]) -> (S::Elem, usize) {
    fold_argmax_by(s, values.len(), |i| values[i].clone())
}
