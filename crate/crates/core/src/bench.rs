//! One pooling forward pass with its scalar accounting, shared by the
//! memory and time benchmarks.

use alloc::format;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::gcn::Adjacency;
use crate::graph::GraphBatch;
use crate::nn::Linear;
use crate::param::ParamStore;
use crate::pool::{ClusterPool, GmtConfig, GmtPooler};
use crate::tape::Ctx;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum BenchMethod {
    Gmt,
    Cluster,
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Gmt => "gmt",
            BenchMethod::Cluster => "cluster",
        }
    }
}

impl FromStr for BenchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmt" => Ok(BenchMethod::Gmt),
            "cluster" => Ok(BenchMethod::Cluster),
            _ => Err(Error::Config(format!("unknown bench method {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchSettings {
    pub dim: usize,
    pub k: usize,
    pub heads: usize,
    pub seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            dim: 32,
            k: 4,
            heads: 1,
            seed: 0,
        }
    }
}

/// An input projection followed by the pooling under test.
#[derive(Clone, Debug)]
pub struct BenchModel {
    params: ParamStore,
    input: Linear,
    pooling: Pooling,
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
enum Pooling {
    Gmt(GmtPooler),
    Cluster(ClusterPool),
}

/// Scalars held by the tape during the pooling call, the node embeddings
/// it receives excluded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolingMemory {
    pub peak_scalars: usize,
    pub retained_scalars: usize,
}

impl BenchModel {
    pub fn new(method: BenchMethod, num_features: usize, s: &BenchSettings) -> Result<Self> {
        let mut rng = crate::rng_from_seed(s.seed);
        let mut params = ParamStore::new();
        let input = Linear::new(&mut params, "input", num_features, s.dim, true, &mut rng);
        let pooling = match method {
            BenchMethod::Gmt => {
                Pooling::Gmt(GmtPooler::new(&mut params, "gmt", &GmtConfig::new(s.dim, s.heads, s.k), &mut rng)?)
            }
            BenchMethod::Cluster => Pooling::Cluster(ClusterPool::new(&mut params, "cluster", s.dim, s.k, &mut rng)?),
        };
        Ok(Self { params, input, pooling })
    }

    /// Runs the pooling forward on `batch` in inference mode.
    pub fn run(&self, batch: &GraphBatch) -> Result<PoolingMemory> {
        if batch.num_nodes() == 0 {
            return Err(Error::InvalidInput("benchmark graph has no nodes".into()));
        }
        let mut ctx = Ctx::eval(&self.params);
        let x = ctx.tape.constant(batch.features.clone());
        let h = self.input.forward(&mut ctx, x)?;
        let adj = Adjacency::Graph(batch.adjacency());
        ctx.tape.reset_peak();
        let base = ctx.tape.memory().live;
        match &self.pooling {
            Pooling::Gmt(p) => {
                p.forward(&mut ctx, h, &adj, &batch.offsets, false)?;
            }
            Pooling::Cluster(p) => {
                p.forward(&mut ctx, h, &adj, &batch.offsets, &batch.edges)?;
            }
        }
        let m = ctx.tape.memory();
        Ok(PoolingMemory {
            peak_scalars: m.peak - base,
            retained_scalars: m.live - base,
        })
    }
}
