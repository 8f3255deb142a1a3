//! Graph Multiset Transformer pooling on a small, deterministic autodiff engine.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command line
//! and wall-clock benchmarks live in the companion `gmt` crate.
//!
//! Layout:
//!
//! * [`tensor`], [`tape`], [`param`], [`optim`], [`nn`]: dense 64-bit tensors,
//!   reverse-mode differentiation, parameters and Adam.
//! * [`graph`], [`generate`], [`split`]: graphs, batching, synthetic generators
//!   and stratified folds.
//! * [`gcn`]: sparse GCN layers and the jumping-knowledge encoder.
//! * [`attention`], [`pool`]: attention, multi-head attention, graph multi-head
//!   attention, GMPool, SelfAtt, the full GMT readout and the baseline readouts.
//! * [`tasks`]: classification and reconstruction harnesses.
//! * [`bench`]: peak-memory profiling of a single pooling forward pass.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attention;
pub mod bench;
pub mod error;
pub mod gcn;
pub mod generate;
pub mod graph;
mod kernels;
pub mod nn;
pub mod optim;
pub mod param;
pub mod pool;
pub mod sparse;
pub mod split;
pub mod tape;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use param::{ParamId, ParamStore};
pub use tape::{Ctx, MemoryStats, Tape, Var};
pub use tensor::Tensor;

/// The seeded generator every random draw in the crate flows from.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
