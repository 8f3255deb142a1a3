use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gcn::{Activation, Adjacency, GcnLayer};
use crate::graph::dense_adjacency;
use crate::param::{ParamId, ParamStore};
use crate::pool::AssignmentMatrix;
use crate::tape::{Ctx, Var};
use crate::tensor::Tensor;
use crate::Rng;

/// Per-graph sum of node rows, `B x d`.
pub fn sum_pool(ctx: &mut Ctx<'_>, h: Var, graph_ids: Rc<[usize]>, graphs: usize) -> Result<Var> {
    ctx.tape.segment_reduce(h, graph_ids, graphs, false)
}

/// Per-graph mean of node rows, `B x d`.
pub fn mean_pool(ctx: &mut Ctx<'_>, h: Var, graph_ids: Rc<[usize]>, graphs: usize) -> Result<Var> {
    ctx.tape.segment_reduce(h, graph_ids, graphs, true)
}

/// Indices of the `ceil(ratio * n)` highest scores, best first; equal scores
/// keep the lower index first.
pub fn select_topk(scores: &[f64], ratio: f64) -> Vec<usize> {
    let n = scores.len();
    if n == 0 {
        return Vec::new();
    }
    let keep = (libm::ceil(ratio * n as f64 - 1e-9) as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(keep);
    order
}

/// Node-drop pooling: scores `y = H p / |p|`, the top `ceil(ratio * n)`
/// nodes of each graph survive and are gated by `tanh(y)`.
#[derive(Clone, Debug)]
pub struct TopKPool {
    pub score: ParamId,
    pub ratio: f64,
}

#[derive(Clone, Debug)]
pub struct TopKOutput {
    /// Gated kept rows, graph by graph.
    pub features: Var,
    /// Block row of each kept node.
    pub kept: Vec<usize>,
    pub offsets: Vec<usize>,
    /// Induced edges among kept nodes, in the new numbering.
    pub edges: Vec<(usize, usize)>,
}

impl TopKPool {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, ratio: f64, rng: &mut Rng) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::Parameter(format!("{name}: ratio {ratio} not in (0, 1]")));
        }
        Ok(Self {
            score: store.normal(&format!("{name}.score"), 1, dim, 1.0 / libm::sqrt(dim as f64), rng),
            ratio,
        })
    }

    pub fn forward(
        &self,
        ctx: &mut Ctx<'_>,
        h: Var,
        offsets: &[usize],
        edges: &[(usize, usize)],
    ) -> Result<TopKOutput> {
        let p = ctx.param(self.score);
        let p = ctx.tape.unit(p)?;
        let y = ctx.tape.matmul_nt(h, p)?;
        let scores = ctx.tape.value(y).data().to_vec();
        let mut kept = Vec::new();
        let mut new_offsets = vec![0];
        for g in 0..offsets.len().saturating_sub(1) {
            let (lo, hi) = (offsets[g], offsets[g + 1]);
            kept.extend(select_topk(&scores[lo..hi], self.ratio).into_iter().map(|i| lo + i));
            new_offsets.push(kept.len());
        }
        let mut position = vec![usize::MAX; scores.len()];
        for (new, &old) in kept.iter().enumerate() {
            position[old] = new;
        }
        let kept_edges = edges
            .iter()
            .filter_map(|&(u, v)| {
                let (a, b) = (position[u], position[v]);
                (a != usize::MAX && b != usize::MAX).then_some((a, b))
            })
            .collect();
        let index: Rc<[usize]> = kept.iter().copied().collect();
        let hk = ctx.tape.gather_rows(h, index.clone())?;
        let yk = ctx.tape.gather_rows(y, index)?;
        let gate = ctx.tape.tanh(yk);
        let features = ctx.tape.mul_col(hk, gate)?;
        Ok(TopKOutput {
            features,
            kept,
            offsets: new_offsets,
            edges: kept_edges,
        })
    }
}

/// Soft-clustering pooling: `C = softmax(GCN(H, A))` row-wise,
/// `H' = C^T H` and the dense `A' = C^T A C`.
#[derive(Clone, Debug)]
pub struct ClusterPool {
    pub assign: GcnLayer,
    pub k: usize,
}

#[derive(Clone, Debug)]
pub struct ClusterOutput {
    /// `B * k x d`.
    pub features: Var,
    /// Per-graph dense `k x k` coarsened adjacency.
    pub adjacency: Vec<Var>,
    /// Per-graph `n_g x k` assignment.
    pub assignments: Vec<Var>,
}

impl ClusterPool {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, k: usize, rng: &mut Rng) -> Result<Self> {
        if k == 0 {
            return Err(Error::Parameter(format!("{name}: k must be positive")));
        }
        Ok(Self {
            assign: GcnLayer::new(store, &format!("{name}.assign"), dim, k, true, Activation::Identity, rng),
            k,
        })
    }

    /// `edges` are block-numbered, as in [`crate::graph::GraphBatch`].
    pub fn forward(
        &self,
        ctx: &mut Ctx<'_>,
        h: Var,
        adj: &Adjacency,
        offsets: &[usize],
        edges: &[(usize, usize)],
    ) -> Result<ClusterOutput> {
        let graphs = offsets.len().saturating_sub(1);
        let logits = self.assign.forward(ctx, h, adj)?;
        let c = ctx.tape.softmax(logits, 1)?;
        let mut local: Vec<Vec<(usize, usize)>> = vec![Vec::new(); graphs];
        for &(u, v) in edges {
            let g = offsets.partition_point(|&o| o <= u) - 1;
            local[g].push((u - offsets[g], v - offsets[g]));
        }
        let whole = graphs == 1;
        let mut features = Vec::with_capacity(graphs);
        let mut adjacency = Vec::with_capacity(graphs);
        let mut assignments = Vec::with_capacity(graphs);
        for (g, edges) in local.iter().enumerate() {
            let (lo, hi) = (offsets[g], offsets[g + 1]);
            if lo == hi {
                return Err(Error::InvalidInput(format!("graph {g} has no nodes")));
            }
            let (cg, hg) = if whole {
                (c, h)
            } else {
                (ctx.tape.slice_rows(c, lo, hi)?, ctx.tape.slice_rows(h, lo, hi)?)
            };
            let ct = ctx.tape.transpose(cg)?;
            features.push(ctx.tape.matmul(ct, hg)?);
            let a = ctx.tape.constant(dense_adjacency(hi - lo, edges));
            let ac = ctx.tape.matmul(a, cg)?;
            adjacency.push(ctx.tape.matmul(ct, ac)?);
            assignments.push(cg);
        }
        let features = if whole { features[0] } else { ctx.tape.concat_rows(&features)? };
        Ok(ClusterOutput {
            features,
            adjacency,
            assignments,
        })
    }
}

/// `C^T A C` accumulated edge by edge, `A` the symmetric 0/1 adjacency.
pub fn coarsen_adjacency(c: &AssignmentMatrix, edges: &[(usize, usize)]) -> Result<Tensor> {
    let m = c.matrix();
    let (n, k) = (m.rows(), m.cols());
    let mut out = Tensor::zeros(&[k, k]);
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(Error::InvalidInput(format!("edge ({u}, {v}) outside {n} nodes")));
        }
        let (cu, cv) = (m.row(u), m.row(v));
        let data = out.data_mut();
        for i in 0..k {
            for j in 0..k {
                data[i * k + j] += cu[i] * cv[j] + cv[i] * cu[j];
            }
        }
    }
    Ok(out)
}
