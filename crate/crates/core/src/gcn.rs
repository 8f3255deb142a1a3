//! Sparse GCN message passing and the stacked encoder with jumping knowledge.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::param::{ParamId, ParamStore};
use crate::sparse::SparseMatrix;
use crate::tape::{Ctx, Var};
use crate::Rng;

/// Structure a GCN layer aggregates over.
#[derive(Clone, Debug)]
pub enum Adjacency {
    /// Normalized `D^-1/2 (A + I) D^-1/2`, see [`crate::graph::normalized_adjacency`].
    Graph(Rc<SparseMatrix>),
    /// `A = I`: normalization gives the identity, so the layer is row-wise.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub activation: Activation,
    pub c_in: usize,
    pub c_out: usize,
}

impl GcnLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        bias: bool,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        Self {
            weight: store.glorot(&format!("{name}.weight"), c_in, c_out, rng),
            bias: bias.then(|| store.zeros(&format!("{name}.bias"), c_out)),
            activation,
            c_in,
            c_out,
        }
    }

    /// `act(A_hat (H W) + b)`, aggregated per edge without a dense `n x n`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, h: Var, adj: &Adjacency) -> Result<Var> {
        let w = ctx.param(self.weight);
        let mut out = ctx.tape.matmul(h, w)?;
        if let Adjacency::Graph(a) = adj {
            out = ctx.tape.propagate(out, a.clone())?;
        }
        if let Some(b) = self.bias {
            let b = ctx.param(b);
            out = ctx.tape.add_row(out, b)?;
        }
        Ok(match self.activation {
            Activation::Relu => ctx.tape.relu(out),
            Activation::Identity => out,
        })
    }
}

/// Combination of the per-layer outputs.
#[derive(Clone, Debug)]
pub enum JumpingKnowledge {
    /// Output of the final layer only.
    Last,
    /// All layer outputs concatenated feature-wise, then projected to `d`.
    Concat(Linear),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JkMode {
    Last,
    Concat,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub layers: Vec<GcnLayer>,
    pub jk: JumpingKnowledge,
    pub dropout: f64,
}

impl Encoder {
    /// `num_layers` GCN layers `c_in -> hidden -> ... -> hidden`, ReLU between
    /// layers and none after the last one.
    pub fn new(
        store: &mut ParamStore,
        c_in: usize,
        hidden: usize,
        num_layers: usize,
        jk: JkMode,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::Parameter("encoder needs at least one layer".into()));
        }
        let layers = (0..num_layers)
            .map(|i| {
                let act = if i + 1 == num_layers {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                let c = if i == 0 { c_in } else { hidden };
                GcnLayer::new(store, &format!("encoder.gcn{i}"), c, hidden, true, act, rng)
            })
            .collect();
        let jk = match jk {
            JkMode::Last => JumpingKnowledge::Last,
            JkMode::Concat => JumpingKnowledge::Concat(Linear::new(
                store,
                "encoder.jk",
                hidden * num_layers,
                hidden,
                true,
                rng,
            )),
        };
        Ok(Self { layers, jk, dropout })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.c_out)
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, adj: &Adjacency) -> Result<Var> {
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(ctx, h, adj)?;
            outputs.push(h);
            if i + 1 < self.layers.len() {
                h = ctx.dropout(h, self.dropout)?;
            }
        }
        match &self.jk {
            JumpingKnowledge::Last => Ok(h),
            JumpingKnowledge::Concat(proj) => {
                let cat = ctx.tape.concat_cols(&outputs)?;
                proj.forward(ctx, cat)
            }
        }
    }
}
