use alloc::format;
use alloc::vec::Vec;

use crate::attention::{assignment_from_heads, AttentionOptions, AttnLayout, MultiHead, SoftmaxAxis};
use crate::error::{Error, Result};
use crate::gcn::Adjacency;
use crate::nn::{LayerNorm, Rff};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Ctx, Var};
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmtConfig {
    pub dim: usize,
    pub heads: usize,
    /// Seeds in the first pooling block.
    pub k: usize,
    pub scaled: bool,
    /// Attention-weight dropout.
    pub dropout: f64,
    /// Softmax axis of the first pooling block.
    pub axis: SoftmaxAxis,
    pub rff_hidden: usize,
    /// Give each head `dim / heads` columns instead of a full `dim`-wide
    /// projection. Cheaper; off by default.
    pub split_heads: bool,
}

impl GmtConfig {
    /// Width of each attention head: `dim`, or `dim / heads` when split.
    pub fn head_dim(&self) -> Result<usize> {
        if self.heads == 0 {
            return Err(Error::Parameter("at least one attention head is needed".into()));
        }
        if !self.split_heads {
            return Ok(self.dim);
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Parameter(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(self.dim / self.heads)
    }

    pub fn new(dim: usize, heads: usize, k: usize) -> Self {
        Self {
            dim,
            heads,
            k,
            scaled: true,
            dropout: 0.0,
            axis: SoftmaxAxis::Keys,
            rff_hidden: dim,
            split_heads: false,
        }
    }

    fn options(&self, axis: SoftmaxAxis) -> AttentionOptions {
        AttentionOptions {
            axis,
            scaled: self.scaled,
            dropout: self.dropout,
        }
    }
}

/// Output of a seeded pooling block over a batch of `B` graphs.
#[derive(Clone, Debug)]
pub struct PoolOutput {
    /// `B * k x d`, graph `g` in rows `g * k..(g + 1) * k`.
    pub output: Var,
    /// Per-graph `n_g x k` assignment, when requested.
    pub assignments: Vec<Var>,
}

/// `GMPool_k(H, A) = LN(Z + rFF(Z))`, `Z = LN(S + GMH(S, H, A))`.
#[derive(Clone, Debug)]
pub struct GmPool {
    pub seeds: ParamId,
    pub k: usize,
    pub attention: MultiHead,
    pub options: AttentionOptions,
    pub norm0: LayerNorm,
    pub norm1: LayerNorm,
    pub rff: Rff,
}

impl GmPool {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &GmtConfig,
        k: usize,
        axis: SoftmaxAxis,
        rng: &mut Rng,
    ) -> Result<Self> {
        if k == 0 || cfg.dim == 0 {
            return Err(Error::Parameter(format!("{name}: k ({k}) and dim ({}) must be positive", cfg.dim)));
        }
        let d = cfg.dim;
        Ok(Self {
            seeds: store.normal(&format!("{name}.seeds"), k, d, 1.0 / libm::sqrt(d as f64), rng),
            k,
            attention: MultiHead::new(store, &format!("{name}.mh"), d, d, cfg.heads, cfg.head_dim()?, d, rng)?,
            options: cfg.options(axis),
            norm0: LayerNorm::new(store, &format!("{name}.ln0"), d),
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            rff: Rff::new(store, &format!("{name}.rff"), d, cfg.rff_hidden, rng),
        })
    }

    /// Pools every graph of the block `h` (rows split by `offsets`) into
    /// `k` rows.
    pub fn forward(
        &self,
        ctx: &mut Ctx<'_>,
        h: Var,
        adj: &Adjacency,
        offsets: &[usize],
        want_assignment: bool,
    ) -> Result<PoolOutput> {
        let graphs = offsets.len().saturating_sub(1);
        if graphs == 0 {
            return Err(Error::InvalidInput("pooling needs at least one graph".into()));
        }
        if let Some(g) = (0..graphs).find(|&g| offsets[g] == offsets[g + 1]) {
            return Err(Error::InvalidInput(format!("graph {g} has no nodes")));
        }
        let s = ctx.param(self.seeds);
        let layout = AttnLayout::shared_queries(offsets.to_vec());
        let mh = self.attention.forward(ctx, s, h, adj, &layout, &self.options)?;
        let seeds = if graphs == 1 { s } else { ctx.tape.repeat_rows(s, graphs)? };
        let z = ctx.tape.add(seeds, mh.output)?;
        let z = self.norm0.forward(ctx, z)?;
        let f = self.rff.forward(ctx, z)?;
        let out = ctx.tape.add(z, f)?;
        let output = self.norm1.forward(ctx, out)?;
        let assignments = if want_assignment {
            mh.segments
                .iter()
                .map(|heads| assignment_from_heads(ctx, heads, self.options.axis))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(PoolOutput { output, assignments })
    }
}

/// `SelfAtt(H) = LN(Z + rFF(Z))`, `Z = LN(H + MH(H, H, H))`, per graph.
#[derive(Clone, Debug)]
pub struct SelfAtt {
    pub attention: MultiHead,
    pub options: AttentionOptions,
    pub norm0: LayerNorm,
    pub norm1: LayerNorm,
    pub rff: Rff,
}

impl SelfAtt {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &GmtConfig, rng: &mut Rng) -> Result<Self> {
        let d = cfg.dim;
        Ok(Self {
            attention: MultiHead::new(store, &format!("{name}.mh"), d, d, cfg.heads, cfg.head_dim()?, d, rng)?,
            options: cfg.options(SoftmaxAxis::Keys),
            norm0: LayerNorm::new(store, &format!("{name}.ln0"), d),
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            rff: Rff::new(store, &format!("{name}.rff"), d, cfg.rff_hidden, rng),
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, h: Var, offsets: &[usize]) -> Result<Var> {
        let layout = AttnLayout::aligned(offsets.to_vec());
        let mh = self
            .attention
            .forward(ctx, h, h, &Adjacency::Identity, &layout, &self.options)?;
        let z = ctx.tape.add(h, mh.output)?;
        let z = self.norm0.forward(ctx, z)?;
        let f = self.rff.forward(ctx, z)?;
        let out = ctx.tape.add(z, f)?;
        self.norm1.forward(ctx, out)
    }
}

#[derive(Clone, Debug)]
pub struct GmtOutput {
    /// One `d`-vector per graph, `B x d`.
    pub output: Var,
    /// Per-graph assignments of the first pooling block, when requested.
    pub assignments: Vec<Var>,
}

/// `GMPool_1(SelfAtt(GMPool_k(H, A)), I)`.
#[derive(Clone, Debug)]
pub struct GmtPooler {
    pub gmpool_k: GmPool,
    pub selfatt: SelfAtt,
    pub gmpool_1: GmPool,
}

impl GmtPooler {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &GmtConfig, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            gmpool_k: GmPool::new(store, &format!("{name}.gmpool_k"), cfg, cfg.k, cfg.axis, rng)?,
            selfatt: SelfAtt::new(store, &format!("{name}.selfatt"), cfg, rng)?,
            gmpool_1: GmPool::new(store, &format!("{name}.gmpool_1"), cfg, 1, SoftmaxAxis::Keys, rng)?,
        })
    }

    pub fn k(&self) -> usize {
        self.gmpool_k.k
    }

    pub fn forward(
        &self,
        ctx: &mut Ctx<'_>,
        h: Var,
        adj: &Adjacency,
        offsets: &[usize],
        want_assignment: bool,
    ) -> Result<GmtOutput> {
        let first = self.gmpool_k.forward(ctx, h, adj, offsets, want_assignment)?;
        let k = self.k();
        let pooled_offsets: Vec<usize> = (0..offsets.len()).map(|g| g * k).collect();
        let mixed = self.selfatt.forward(ctx, first.output, &pooled_offsets)?;
        let last = self
            .gmpool_1
            .forward(ctx, mixed, &Adjacency::Identity, &pooled_offsets, false)?;
        Ok(GmtOutput {
            output: last.output,
            assignments: first.assignments,
        })
    }
}

/// Graph representations `B x d` for node embeddings `h` of a batch.
pub fn gmt_readout(
    ctx: &mut Ctx<'_>,
    pooler: &GmtPooler,
    h: Var,
    adj: &Adjacency,
    offsets: &[usize],
) -> Result<Var> {
    Ok(pooler.forward(ctx, h, adj, offsets, false)?.output)
}
