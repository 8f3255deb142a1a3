//! Dense building blocks shared by the encoder and the attention blocks.

use alloc::format;

use crate::error::Result;
use crate::param::{ParamId, ParamStore};
use crate::tape::{Ctx, Var};
use crate::Rng;

/// Fixed epsilon inside layer normalization.
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut Rng) -> Self {
        let weight = store.glorot(&format!("{name}.weight"), fan_in, fan_out, rng);
        let bias = bias.then(|| store.zeros(&format!("{name}.bias"), fan_out));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let y = ctx.tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = ctx.param(b);
                ctx.tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Row-wise layer normalization with a learned affine map.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.ones(&format!("{name}.gamma"), dim),
            beta: store.zeros(&format!("{name}.beta"), dim),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        ctx.tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Row-wise feedforward: `relu(x W1 + b1) W2 + b2`, the same map on every row.
#[derive(Clone, Debug)]
pub struct Rff {
    pub first: Linear,
    pub second: Linear,
}

impl Rff {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            first: Linear::new(store, &format!("{name}.0"), dim, hidden, true, rng),
            second: Linear::new(store, &format!("{name}.1"), hidden, dim, true, rng),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.first.forward(ctx, x)?;
        let h = ctx.tape.relu(h);
        self.second.forward(ctx, h)
    }
}
