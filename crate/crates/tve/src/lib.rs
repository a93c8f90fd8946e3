//! Exact inference on plated factor graphs by tensor variable elimination.
//!
//! A plated factor graph is a bipartite graph of variables and factors in
//! which every vertex is annotated with a set of *plates*: named batch
//! dimensions that stand for independent replication. Contracting such a
//! graph means summing out every variable instance of every plate slice and
//! multiplying every factor instance, without ever materializing the
//! unrolled graph. The engine in this crate does that whenever the plate
//! structure allows it, in time polynomial in the plate sizes, and reports
//! an intractability witness when it provably cannot.
//!
//! The main entry points are:
//!
//! * [`engine::tensor_variable_elimination`]: contract a graph to a scalar
//!   in a chosen [`semiring`], recording a [`engine::Tape`] for reuse.
//! * [`engine::dry_run`]: plan the contraction without touching values and
//!   report the elimination schedule and its operation count.
//! * [`adjoint`]: marginals, MAP assignments, and exact joint samples, all
//!   derived from a single recorded forward pass.
//! * [`einsum::plated_einsum`]: a string frontend where upper-case work is
//!   replaced by one-letter dimension symbols and a plate declaration.
//! * [`oracle`]: deliberately naive reference implementations used to
//!   validate everything else on small instances.
//!
//! Scalar values are generic: every numeric entry point takes a semiring
//! whose carrier can be `f32`, `f64`, or anything else implementing the
//! relevant `num-traits` bounds. The aliases below fix the common `f64`
//! choices.

pub mod adjoint;
pub mod einsum;
pub mod engine;
pub mod graph;
pub mod models;
pub mod oracle;
pub mod rng;
pub mod semiring;
pub mod tensor;

use std::fmt;

/// Minimal bound for tensor entries. Blanket-implemented; index tensors
/// (`usize`), unit shapes (`()`), and float carriers all qualify.
pub trait Element: Clone + PartialEq + fmt::Debug + Send + Sync + 'static {}

impl<T: Clone + PartialEq + fmt::Debug + Send + Sync + 'static> Element for T {}

pub use graph::{MinorWitness, PlatedFactorGraph, UnrolledFactorGraph};
pub use tensor::{DimKind, DimName, NamedTensor};

/// Sum-product in ordinary arithmetic over `f64`.
pub type Real64 = semiring::RealSumProduct<f64>;
/// Sum-product over log-space `f64` values.
pub type Log64 = semiring::LogSumExpProduct<f64>;
/// Max-product over non-negative `f64` values.
pub type MaxProd64 = semiring::MaxProduct<f64>;
/// Max-sum over log-space `f64` values.
pub type MaxSum64 = semiring::MaxSum<f64>;

/// `f64` tensor, the concrete type most callers use.
pub type Tensor64 = NamedTensor<f64>;

/// Plated factor graph with `f64` factor tables.
pub type Graph64 = PlatedFactorGraph<f64>;
