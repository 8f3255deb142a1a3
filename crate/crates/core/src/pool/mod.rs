//! READOUT functions: the GMT stack and the baseline poolings.

mod baseline;
mod gmt;

pub use baseline::{
    coarsen_adjacency, mean_pool, select_topk, sum_pool, ClusterOutput, ClusterPool, TopKOutput, TopKPool,
};
pub use gmt::{gmt_readout, GmPool, GmtConfig, GmtOutput, GmtPooler, PoolOutput, SelfAtt};

use alloc::format;

use crate::attention::SoftmaxAxis;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which block produced an assignment matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssignmentSource {
    /// Attention weights of a GMPool, averaged over `heads`.
    GmPool { heads: usize, axis: SoftmaxAxis },
    /// Row softmax of a cluster-assignment GCN.
    Cluster,
}

/// Soft `n x k` node-to-cluster memberships; rows sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix {
    c: Tensor,
    pub source: AssignmentSource,
}

/// Tolerance on row sums accepted by [`AssignmentMatrix::new`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

impl AssignmentMatrix {
    pub fn new(c: Tensor, source: AssignmentSource) -> Result<Self> {
        let m = Self { c, source };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c.rank() != 2 {
            return Err(Error::InvalidInput(format!(
                "assignment matrix must be n x k, got {:?}",
                self.c.shape()
            )));
        }
        for i in 0..self.c.rows() {
            let row = self.c.row(i);
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidInput(format!("row {i} has entry {v} outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidInput(format!("row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    pub fn matrix(&self) -> &Tensor {
        &self.c
    }

    pub fn num_nodes(&self) -> usize {
        self.c.rows()
    }

    pub fn num_clusters(&self) -> usize {
        self.c.cols()
    }
}
