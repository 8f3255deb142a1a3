//! Scaled dot-product attention, multi-head attention and its graph variant.
//!
//! Batched inputs are handled segment by segment: keys and values of graph
//! `g` occupy rows `offsets[g]..offsets[g + 1]` of one block, and attention
//! never mixes rows of different segments.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::gcn::{Activation, Adjacency, GcnLayer};
use crate::nn::Linear;
use crate::param::ParamStore;
use crate::tape::{Ctx, Var};
use crate::Rng;

/// Axis the attention weights are normalized over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SoftmaxAxis {
    /// Each query's weights over the keys sum to one (standard attention).
    #[default]
    Keys,
    /// Each key's weights over the queries sum to one (soft clustering of
    /// keys into query slots).
    Queries,
}

impl SoftmaxAxis {
    fn tensor_axis(self) -> usize {
        match self {
            SoftmaxAxis::Keys => 1,
            SoftmaxAxis::Queries => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionOptions {
    pub axis: SoftmaxAxis,
    /// Divide logits by `sqrt(d_k)`.
    pub scaled: bool,
    /// Dropout on the attention weights (training only).
    pub dropout: f64,
}

impl Default for AttentionOptions {
    fn default() -> Self {
        Self {
            axis: SoftmaxAxis::Keys,
            scaled: true,
            dropout: 0.0,
        }
    }
}

/// Result of one attention call.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub output: Var,
    /// Normalized weights before dropout, `n_q x n`.
    pub weights: Var,
    /// Raw (scaled) logits `Q K^T`, `n_q x n`.
    pub logits: Var,
}

/// `w(Q K^T) V` with `w` a softmax along `opts.axis`.
pub fn attention(ctx: &mut Ctx<'_>, q: Var, k: Var, v: Var, opts: &AttentionOptions) -> Result<Attended> {
    let (qs, ks, vs) = (
        ctx.tape.shape(q).to_vec(),
        ctx.tape.shape(k).to_vec(),
        ctx.tape.shape(v).to_vec(),
    );
    if ks.len() != 2 || ks[0] == 0 {
        return Err(Error::InvalidInput("attention over an empty key set".into()));
    }
    if qs.len() != 2 || qs[1] != ks[1] {
        return Err(dim_err("attention(q, k)", &qs, &ks));
    }
    if vs.len() != 2 || vs[0] != ks[0] {
        return Err(dim_err("attention(k, v)", &ks, &vs));
    }
    let mut logits = ctx.tape.matmul_nt(q, k)?;
    if opts.scaled {
        logits = ctx.tape.scale(logits, 1.0 / libm::sqrt(qs[1] as f64));
    }
    let weights = ctx.tape.softmax(logits, opts.axis.tensor_axis())?;
    let dropped = ctx.dropout(weights, opts.dropout)?;
    let output = ctx.tape.matmul(dropped, v)?;
    Ok(Attended {
        output,
        weights,
        logits,
    })
}

/// How query rows pair up with key/value segments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnLayout {
    kv: Vec<usize>,
    q: Option<Vec<usize>>,
}

impl AttnLayout {
    /// One segment of `n` keys, all queries attend to it.
    pub fn single(n: usize) -> Self {
        Self::shared_queries(alloc::vec![0, n])
    }

    /// Every segment is attended by the full (shared) query matrix.
    pub fn shared_queries(kv_offsets: Vec<usize>) -> Self {
        Self { kv: kv_offsets, q: None }
    }

    /// Queries and keys share the same segmentation (self-attention).
    pub fn aligned(offsets: Vec<usize>) -> Self {
        Self {
            q: Some(offsets.clone()),
            kv: offsets,
        }
    }

    pub fn num_segments(&self) -> usize {
        self.kv.len() - 1
    }

    pub fn kv_range(&self, s: usize) -> core::ops::Range<usize> {
        self.kv[s]..self.kv[s + 1]
    }

    fn q_range(&self, s: usize) -> Option<core::ops::Range<usize>> {
        self.q.as_ref().map(|q| q[s]..q[s + 1])
    }
}

/// Multi-head attention with per-head query/key/value projections and a
/// shared output projection.
///
/// Keys and values come from one GCN layer per role; with
/// [`Adjacency::Identity`] those layers are plain linear maps and this is
/// ordinary multi-head attention, with a real adjacency it is graph
/// multi-head attention.
#[derive(Clone, Debug)]
pub struct MultiHead {
    pub heads: usize,
    pub head_dim: usize,
    /// Stacked per-head query projections, `d_q x heads * head_dim`.
    pub query: Linear,
    pub key: GcnLayer,
    pub value: GcnLayer,
    /// `heads * head_dim x d_out`.
    pub output: Linear,
}

/// Per-segment, per-head attention results.
#[derive(Clone, Debug)]
pub struct MultiHeadOutput {
    pub output: Var,
    pub segments: Vec<Vec<Attended>>,
}

impl MultiHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim_q: usize,
        dim_kv: usize,
        heads: usize,
        head_dim: usize,
        dim_out: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || head_dim == 0 {
            return Err(Error::Parameter(format!(
                "{name}: heads ({heads}) and head_dim ({head_dim}) must be positive"
            )));
        }
        let width = heads * head_dim;
        Ok(Self {
            heads,
            head_dim,
            query: Linear::new(store, &format!("{name}.q"), dim_q, width, true, rng),
            key: GcnLayer::new(store, &format!("{name}.k"), dim_kv, width, true, Activation::Identity, rng),
            value: GcnLayer::new(store, &format!("{name}.v"), dim_kv, width, true, Activation::Identity, rng),
            output: Linear::new(store, &format!("{name}.o"), width, dim_out, true, rng),
        })
    }

    /// `[O_1, ..., O_h] W_O` with `O_i = Att(Q Wq_i, K_i, V_i)` and
    /// `K_i, V_i` built from `kv` over `adj`.
    pub fn forward(
        &self,
        ctx: &mut Ctx<'_>,
        q: Var,
        kv: Var,
        adj: &Adjacency,
        layout: &AttnLayout,
        opts: &AttentionOptions,
    ) -> Result<MultiHeadOutput> {
        let qp = self.query.forward(ctx, q)?;
        let kp = self.key.forward(ctx, kv, adj)?;
        let vp = self.value.forward(ctx, kv, adj)?;
        self.attend(ctx, qp, kp, vp, layout, opts)
    }

    /// Multi-head attention on already projected `Q`, `K`, `V`.
    fn attend(
        &self,
        ctx: &mut Ctx<'_>,
        qp: Var,
        kp: Var,
        vp: Var,
        layout: &AttnLayout,
        opts: &AttentionOptions,
    ) -> Result<MultiHeadOutput> {
        let n_total = ctx.tape.shape(kp)[0];
        if layout.kv.last().copied() != Some(n_total) {
            return Err(Error::InvalidInput(format!(
                "layout covers {:?} rows, key block has {n_total}",
                layout.kv.last()
            )));
        }
        let whole = layout.num_segments() == 1 && layout.kv[0] == 0;
        let dh = self.head_dim;
        let mut seg_outputs = Vec::with_capacity(layout.num_segments());
        let mut seg_heads = Vec::with_capacity(layout.num_segments());
        for s in 0..layout.num_segments() {
            let r = layout.kv_range(s);
            if r.is_empty() {
                return Err(Error::InvalidInput(format!("segment {s} has no nodes")));
            }
            let (ks, vs) = if whole {
                (kp, vp)
            } else {
                (
                    ctx.tape.slice_rows(kp, r.start, r.end)?,
                    ctx.tape.slice_rows(vp, r.start, r.end)?,
                )
            };
            let qs = match layout.q_range(s) {
                Some(qr) if !(whole && qr.start == 0) => ctx.tape.slice_rows(qp, qr.start, qr.end)?,
                _ => qp,
            };
            let mut heads = Vec::with_capacity(self.heads);
            let mut outs = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let (qh, kh, vh) = if self.heads == 1 {
                    (qs, ks, vs)
                } else {
                    (
                        ctx.tape.slice_cols(qs, h * dh, dh)?,
                        ctx.tape.slice_cols(ks, h * dh, dh)?,
                        ctx.tape.slice_cols(vs, h * dh, dh)?,
                    )
                };
                let a = attention(ctx, qh, kh, vh, opts)?;
                outs.push(a.output);
                heads.push(a);
            }
            let cat = if outs.len() == 1 {
                outs[0]
            } else {
                ctx.tape.concat_cols(&outs)?
            };
            seg_outputs.push(cat);
            seg_heads.push(heads);
        }
        let stacked = if seg_outputs.len() == 1 {
            seg_outputs[0]
        } else {
            ctx.tape.concat_rows(&seg_outputs)?
        };
        let output = self.output.forward(ctx, stacked)?;
        Ok(MultiHeadOutput {
            output,
            segments: seg_heads,
        })
    }
}

/// Soft assignment of keys to queries: the query-axis softmax of each head's
/// logits, averaged over heads and transposed to `n x k`. Rows sum to one.
pub fn assignment_from_heads(ctx: &mut Ctx<'_>, heads: &[Attended], axis: SoftmaxAxis) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for a in heads {
        let w = match axis {
            SoftmaxAxis::Queries => a.weights,
            SoftmaxAxis::Keys => ctx.tape.softmax(a.logits, 0)?,
        };
        acc = Some(match acc {
            None => w,
            Some(prev) => ctx.tape.add(prev, w)?,
        });
    }
    let sum = acc.ok_or_else(|| Error::InvalidInput("no attention heads".into()))?;
    let avg = if heads.len() == 1 {
        sum
    } else {
        ctx.tape.scale(sum, 1.0 / heads.len() as f64)
    };
    ctx.tape.transpose(avg)
}
