use alloc::format;
use alloc::rc::Rc;
use core::str::FromStr;

use crate::attention::SoftmaxAxis;
use crate::error::{Error, Result};
use crate::gcn::{Activation, Adjacency, GcnLayer};
use crate::graph::Graph;
use crate::nn::Linear;
use crate::optim::Adam;
use crate::param::ParamStore;
use crate::pool::{AssignmentMatrix, AssignmentSource, ClusterPool, GmPool, GmtConfig, TopKPool};
use crate::tape::{Ctx, Var};
use crate::tasks::{EpochRecord, Progress, TrainState};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconPoolKind {
    GmPool,
    TopK,
    Cluster,
}

impl ReconPoolKind {
    pub fn name(self) -> &'static str {
        match self {
            ReconPoolKind::GmPool => "gmpool",
            ReconPoolKind::TopK => "topk",
            ReconPoolKind::Cluster => "cluster",
        }
    }
}

impl FromStr for ReconPoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gmpool" | "gmt" => ReconPoolKind::GmPool,
            "topk" => ReconPoolKind::TopK,
            "cluster" => ReconPoolKind::Cluster,
            _ => return Err(Error::Config(format!("unknown reconstruction pooling {s:?}"))),
        })
    }
}

/// Quantity the reconstruction is trained to match.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconObjective {
    /// MSE between node features and their reconstruction.
    Features,
    /// MSE between the 0/1 adjacency and `C (C^T A C) C^T`.
    Adjacency,
}

impl ReconObjective {
    pub fn name(self) -> &'static str {
        match self {
            ReconObjective::Features => "x",
            ReconObjective::Adjacency => "a",
        }
    }
}

impl FromStr for ReconObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "x" | "features" => ReconObjective::Features,
            "a" | "adjacency" => ReconObjective::Adjacency,
            _ => return Err(Error::Config(format!("unknown objective {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconConfig {
    pub pool: ReconPoolKind,
    pub objective: ReconObjective,
    pub hidden: usize,
    pub ratio: f64,
    pub heads: usize,
    pub scaled: bool,
    pub axis: SoftmaxAxis,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            pool: ReconPoolKind::GmPool,
            objective: ReconObjective::Features,
            hidden: 32,
            ratio: 0.25,
            heads: 1,
            scaled: true,
            axis: SoftmaxAxis::Keys,
            lr: 5e-3,
            max_epochs: 10_000,
            patience: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
enum Pooling {
    GmPool(GmPool),
    TopK(TopKPool),
    Cluster(ClusterPool),
}

/// Two GCN layers, one pooling stage, unpooling, two GCN layers and a
/// linear map back to the feature space.
#[derive(Clone, Debug)]
pub struct ReconModel {
    pub params: ParamStore,
    pre: [GcnLayer; 2],
    pooling: Pooling,
    post: [GcnLayer; 2],
    head: Linear,
    pub k: usize,
}

/// Tape handles of one reconstruction forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ReconForward {
    /// `n x c`.
    pub features: Var,
    /// `n x k`, absent for node-drop pooling.
    pub assignment: Option<Var>,
}

impl ReconModel {
    pub fn new(cfg: &ReconConfig, num_nodes: usize, num_features: usize) -> Result<Self> {
        if !(cfg.ratio > 0.0 && cfg.ratio <= 1.0) {
            return Err(Error::Config(format!("ratio {} not in (0, 1]", cfg.ratio)));
        }
        let mut rng = crate::rng_from_seed(cfg.seed);
        let mut params = ParamStore::new();
        let d = cfg.hidden;
        let k = (libm::ceil(cfg.ratio * num_nodes as f64 - 1e-9) as usize).max(1);
        let gcn = |params: &mut ParamStore, name: &str, c_in: usize, rng: &mut crate::Rng| {
            GcnLayer::new(params, name, c_in, d, true, Activation::Relu, rng)
        };
        let pre = [
            gcn(&mut params, "pre0", num_features, &mut rng),
            gcn(&mut params, "pre1", d, &mut rng),
        ];
        let pooling = match cfg.pool {
            ReconPoolKind::GmPool => {
                let mut g = GmtConfig::new(d, cfg.heads, k);
                g.scaled = cfg.scaled;
                g.axis = cfg.axis;
                Pooling::GmPool(GmPool::new(&mut params, "gmpool", &g, k, cfg.axis, &mut rng)?)
            }
            ReconPoolKind::TopK => Pooling::TopK(TopKPool::new(&mut params, "topk", d, cfg.ratio, &mut rng)?),
            ReconPoolKind::Cluster => Pooling::Cluster(ClusterPool::new(&mut params, "cluster", d, k, &mut rng)?),
        };
        let post = [gcn(&mut params, "post0", d, &mut rng), gcn(&mut params, "post1", d, &mut rng)];
        let head = Linear::new(&mut params, "head", d, num_features, true, &mut rng);
        Ok(Self {
            params,
            pre,
            pooling,
            post,
            head,
            k,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, graph: &Graph) -> Result<ReconForward> {
        let n = graph.num_nodes();
        let x = ctx.tape.constant(graph.node_features().clone());
        let adj = Adjacency::Graph(Rc::new(graph.normalized_adjacency()));
        let mut h = x;
        for layer in &self.pre {
            h = layer.forward(ctx, h, &adj)?;
        }
        let offsets = [0, n];
        let (mut h, assignment) = match &self.pooling {
            Pooling::GmPool(p) => {
                let out = p.forward(ctx, h, &adj, &offsets, true)?;
                let c = out.assignments[0];
                (ctx.tape.matmul(c, out.output)?, Some(c))
            }
            Pooling::TopK(p) => {
                let out = p.forward(ctx, h, &offsets, graph.edges())?;
                let index: Rc<[usize]> = out.kept.iter().copied().collect();
                (ctx.tape.scatter_rows(out.features, index, n)?, None)
            }
            Pooling::Cluster(p) => {
                let out = p.forward(ctx, h, &adj, &offsets, graph.edges())?;
                let c = out.assignments[0];
                (ctx.tape.matmul(c, out.features)?, Some(c))
            }
        };
        for layer in &self.post {
            h = layer.forward(ctx, h, &adj)?;
        }
        let features = self.head.forward(ctx, h)?;
        Ok(ReconForward { features, assignment })
    }

    fn source(&self) -> Option<AssignmentSource> {
        match &self.pooling {
            Pooling::GmPool(p) => Some(AssignmentSource::GmPool {
                heads: p.attention.heads,
                axis: p.options.axis,
            }),
            Pooling::TopK(_) => None,
            Pooling::Cluster(_) => Some(AssignmentSource::Cluster),
        }
    }

    /// Reconstructed node features in inference mode.
    pub fn reconstruct(&self, graph: &Graph) -> Result<Tensor> {
        let mut ctx = Ctx::eval(&self.params);
        let out = self.forward(&mut ctx, graph)?;
        Ok(ctx.tape.value(out.features).clone())
    }

    /// The pooling stage's soft assignment for `graph`.
    pub fn assignment(&self, graph: &Graph) -> Result<AssignmentMatrix> {
        let source = self.source().ok_or_else(|| {
            Error::UnsupportedMetric("node-drop pooling has no assignment matrix".into())
        })?;
        let mut ctx = Ctx::eval(&self.params);
        let out = self.forward(&mut ctx, graph)?;
        let c = out.assignment.expect("assignment pooling returns C");
        AssignmentMatrix::new(ctx.tape.value(c).clone(), source)
    }
}

/// `C (C^T A C) C^T` on the tape.
fn adjacency_reconstruction(ctx: &mut Ctx<'_>, c: Var, a: Var) -> Result<Var> {
    let ct = ctx.tape.transpose(c)?;
    let ac = ctx.tape.matmul(a, c)?;
    let pooled = ctx.tape.matmul(ct, ac)?;
    let right = ctx.tape.matmul_nt(pooled, c)?;
    ctx.tape.matmul(c, right)
}

fn objective_loss(ctx: &mut Ctx<'_>, out: &ReconForward, graph: &Graph, objective: ReconObjective) -> Result<Var> {
    match objective {
        ReconObjective::Features => {
            let x = ctx.tape.constant(graph.node_features().clone());
            ctx.tape.mse(out.features, x)
        }
        ReconObjective::Adjacency => {
            let c = out.assignment.ok_or_else(|| {
                Error::UnsupportedMetric("the adjacency objective needs an assignment matrix".into())
            })?;
            let a = ctx.tape.constant(graph.dense_adjacency());
            let rec = adjacency_reconstruction(ctx, c, a)?;
            ctx.tape.mse(rec, a)
        }
    }
}

/// Reconstruction errors: per-entry mean squared error and the raw
/// Frobenius norm of the difference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconErrors {
    pub x_mse: f64,
    pub x_norm: f64,
    pub a_mse: Option<f64>,
    pub a_norm: Option<f64>,
}

fn errors(a: &Tensor, b: &Tensor) -> (f64, f64) {
    let sq: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    (sq / a.numel().max(1) as f64, libm::sqrt(sq))
}

fn all_errors(model: &ReconModel, graph: &Graph) -> Result<ReconErrors> {
    let mut ctx = Ctx::eval(&model.params);
    let out = model.forward(&mut ctx, graph)?;
    let (x_mse, x_norm) = errors(ctx.tape.value(out.features), graph.node_features());
    let (a_mse, a_norm) = match out.assignment {
        Some(c) => {
            let a_true = graph.dense_adjacency();
            let a = ctx.tape.constant(a_true.clone());
            let rec = adjacency_reconstruction(&mut ctx, c, a)?;
            let (m, f) = errors(ctx.tape.value(rec), &a_true);
            (Some(m), Some(f))
        }
        None => (None, None),
    };
    Ok(ReconErrors {
        x_mse,
        x_norm,
        a_mse,
        a_norm,
    })
}

/// Feature and adjacency errors of `model` on `graph`.
pub fn reconstruct_adjacency_error(model: &ReconModel, graph: &Graph) -> Result<ReconErrors> {
    if model.source().is_none() {
        return Err(Error::UnsupportedMetric(
            "adjacency error needs an assignment matrix; node-drop pooling has none".into(),
        ));
    }
    all_errors(model, graph)
}

#[derive(Clone, Debug)]
pub struct ReconRun {
    pub state: TrainState,
    pub errors: ReconErrors,
}

/// Trains `model` on one graph, monitoring the training loss, and leaves it
/// at the lowest-loss checkpoint.
pub fn train_reconstruction(model: &mut ReconModel, graph: &Graph, cfg: &ReconConfig) -> Result<ReconRun> {
    if graph.num_nodes() == 0 {
        return Err(Error::Config("cannot reconstruct an empty graph".into()));
    }
    if cfg.objective == ReconObjective::Adjacency && model.source().is_none() {
        return Err(Error::UnsupportedMetric(
            "the adjacency objective needs an assignment matrix".into(),
        ));
    }
    let adam = Adam::new(cfg.lr);
    let mut state = TrainState::new(cfg.patience, cfg.seed);
    let mut best = model.params.snapshot();
    for epoch in 0..cfg.max_epochs {
        let (loss, grads) = {
            let mut ctx = Ctx::eval(&model.params);
            let out = model.forward(&mut ctx, graph)?;
            let loss = objective_loss(&mut ctx, &out, graph, cfg.objective)?;
            (ctx.tape.scalar(loss), ctx.backward(loss)?)
        };
        state.history.push(EpochRecord {
            epoch,
            train_loss: loss,
            val_loss: None,
            val_acc: None,
        });
        // The loss belongs to the parameters before this step.
        match state.observe(loss) {
            Progress::Improved => best = model.params.snapshot(),
            Progress::Waiting => {}
            Progress::Stop => break,
        }
        model.params.apply_gradients(grads);
        adam.step(&mut model.params)?;
    }
    model.params.restore(&best);
    let errors = all_errors(model, graph)?;
    Ok(ReconRun { state, errors })
}

impl ReconErrors {
    pub fn a_or_nan(&self) -> (f64, f64) {
        (self.a_mse.unwrap_or(f64::NAN), self.a_norm.unwrap_or(f64::NAN))
    }
}
