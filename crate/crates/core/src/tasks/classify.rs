use alloc::format;
use alloc::rc::Rc;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::gcn::{Adjacency, Encoder, JkMode};
use crate::graph::{make_batch, Dataset, Graph, GraphBatch};
use crate::nn::Linear;
use crate::optim::Adam;
use crate::param::ParamStore;
use crate::pool::{gmt_readout, mean_pool, sum_pool, ClusterPool, GmtConfig, GmtPooler, TopKPool};
use crate::split::FoldSplit;
use crate::tape::{Ctx, Var};
use crate::tasks::{EpochRecord, Progress, TrainState};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadoutKind {
    Gmt,
    Sum,
    Mean,
    TopK,
    Cluster,
}

impl ReadoutKind {
    pub fn name(self) -> &'static str {
        match self {
            ReadoutKind::Gmt => "gmt",
            ReadoutKind::Sum => "sum",
            ReadoutKind::Mean => "mean",
            ReadoutKind::TopK => "topk",
            ReadoutKind::Cluster => "cluster",
        }
    }
}

impl FromStr for ReadoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gmt" => ReadoutKind::Gmt,
            "sum" => ReadoutKind::Sum,
            "mean" => ReadoutKind::Mean,
            "topk" => ReadoutKind::TopK,
            "cluster" => ReadoutKind::Cluster,
            _ => return Err(Error::Config(format!("unknown readout {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub readout: ReadoutKind,
    pub hidden: usize,
    pub layers: usize,
    pub jk: JkMode,
    pub heads: usize,
    pub ratio: f64,
    /// After each message-passing nonlinearity.
    pub dropout: f64,
    /// On the attention weights of the GMT readout.
    pub attention_dropout: f64,
    pub scaled: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            readout: ReadoutKind::Gmt,
            hidden: 128,
            layers: 3,
            jk: JkMode::Concat,
            heads: 4,
            ratio: 0.25,
            dropout: 0.5,
            attention_dropout: 0.5,
            scaled: true,
            lr: 5e-4,
            weight_decay: 1e-4,
            batch_size: 128,
            max_epochs: 500,
            patience: 50,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    /// Seeds of the first pooling stage for graphs of at most `max_nodes` nodes.
    pub fn pooled_nodes(&self, max_nodes: usize) -> usize {
        (libm::ceil(self.ratio * max_nodes as f64 - 1e-9) as usize).max(1)
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Readout {
    Gmt(GmtPooler),
    Sum,
    Mean,
    /// One node-drop stage, then the mean of the surviving nodes.
    TopK(TopKPool),
    /// One clustering stage, then the mean of the `k` cluster rows.
    Cluster(ClusterPool),
}

/// Encoder, readout and a linear classification head.
#[derive(Clone, Debug)]
pub struct ClassifierModel {
    pub params: ParamStore,
    pub encoder: Encoder,
    pub readout: Readout,
    pub head: Linear,
    pub num_classes: usize,
}

impl ClassifierModel {
    /// `max_nodes` fixes the seed count of pooling readouts.
    pub fn new(cfg: &ClassifierConfig, num_features: usize, num_classes: usize, max_nodes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        let mut rng = crate::rng_from_seed(cfg.seed);
        let mut params = ParamStore::new();
        let d = cfg.hidden;
        let encoder = Encoder::new(&mut params, num_features, d, cfg.layers, cfg.jk, cfg.dropout, &mut rng)?;
        let k = cfg.pooled_nodes(max_nodes);
        let readout = match cfg.readout {
            ReadoutKind::Gmt => {
                let mut g = GmtConfig::new(d, cfg.heads, k);
                g.scaled = cfg.scaled;
                g.dropout = cfg.attention_dropout;
                Readout::Gmt(GmtPooler::new(&mut params, "gmt", &g, &mut rng)?)
            }
            ReadoutKind::Sum => Readout::Sum,
            ReadoutKind::Mean => Readout::Mean,
            ReadoutKind::TopK => Readout::TopK(TopKPool::new(&mut params, "topk", d, cfg.ratio, &mut rng)?),
            ReadoutKind::Cluster => Readout::Cluster(ClusterPool::new(&mut params, "cluster", d, k, &mut rng)?),
        };
        let head = Linear::new(&mut params, "head", d, num_classes, true, &mut rng);
        Ok(Self {
            params,
            encoder,
            readout,
            head,
            num_classes,
        })
    }

    /// Graph representations, `B x d`.
    pub fn embed(&self, ctx: &mut Ctx<'_>, batch: &GraphBatch) -> Result<Var> {
        let x = ctx.tape.constant(batch.features.clone());
        let adj = Adjacency::Graph(batch.adjacency());
        let h = self.encoder.forward(ctx, x, &adj)?;
        let graphs = batch.num_graphs();
        match &self.readout {
            Readout::Gmt(p) => gmt_readout(ctx, p, h, &adj, &batch.offsets),
            Readout::Sum => sum_pool(ctx, h, batch.graph_ids.clone(), graphs),
            Readout::Mean => mean_pool(ctx, h, batch.graph_ids.clone(), graphs),
            Readout::TopK(p) => {
                let out = p.forward(ctx, h, &batch.offsets, &batch.edges)?;
                mean_pool(ctx, out.features, segment_ids(&out.offsets), graphs)
            }
            Readout::Cluster(p) => {
                let out = p.forward(ctx, h, &adj, &batch.offsets, &batch.edges)?;
                let ids: Rc<[usize]> = (0..graphs * p.k).map(|r| r / p.k).collect();
                mean_pool(ctx, out.features, ids, graphs)
            }
        }
    }

    /// Class logits, `B x num_classes`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, batch: &GraphBatch) -> Result<Var> {
        let g = self.embed(ctx, batch)?;
        self.head.forward(ctx, g)
    }

    /// Inference-mode logits.
    pub fn logits(&self, graphs: &[&Graph]) -> Result<Tensor> {
        let batch = make_batch(graphs)?;
        let mut ctx = Ctx::eval(&self.params);
        let out = self.forward(&mut ctx, &batch)?;
        Ok(ctx.tape.value(out).clone())
    }
}

fn segment_ids(offsets: &[usize]) -> Rc<[usize]> {
    (0..offsets.len() - 1)
        .flat_map(|g| core::iter::repeat_n(g, offsets[g + 1] - offsets[g]))
        .collect()
}

fn labels_of(batch: &GraphBatch) -> Result<Rc<[usize]>> {
    batch
        .labels
        .iter()
        .enumerate()
        .map(|(i, y)| y.ok_or_else(|| Error::Config(format!("graph {i} of the batch has no label"))))
        .collect()
}

/// Fraction of rows whose largest logit sits at the label; ties go to the
/// lowest class index.
pub fn accuracy_from_logits(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(logits.row(i)) == y)
        .count();
    correct as f64 / labels.len() as f64
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

pub fn evaluate_accuracy(model: &ClassifierModel, graphs: &[&Graph]) -> Result<f64> {
    if graphs.is_empty() {
        return Ok(0.0);
    }
    let logits = model.logits(graphs)?;
    let labels: Vec<usize> = graphs
        .iter()
        .enumerate()
        .map(|(i, g)| g.label.ok_or_else(|| Error::Config(format!("graph {i} has no label"))))
        .collect::<Result<_>>()?;
    Ok(accuracy_from_logits(&logits, &labels))
}

fn loss_and_accuracy(model: &ClassifierModel, batch: &GraphBatch) -> Result<(f64, f64)> {
    let labels = labels_of(batch)?;
    let mut ctx = Ctx::eval(&model.params);
    let logits = model.forward(&mut ctx, batch)?;
    let acc = accuracy_from_logits(ctx.tape.value(logits), &labels);
    let loss = ctx.tape.cross_entropy(logits, labels)?;
    Ok((ctx.tape.scalar(loss), acc))
}

/// Minimizes cross-entropy on `split.train` with Adam, stops after
/// `cfg.patience` epochs without a lower validation loss and leaves `model`
/// at the lowest-validation-loss checkpoint.
pub fn train_classifier(
    model: &mut ClassifierModel,
    dataset: &Dataset,
    split: &FoldSplit,
    cfg: &ClassifierConfig,
) -> Result<TrainState> {
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::Config("training and validation splits must be non-empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let val_graphs: Vec<&Graph> = split.val.iter().map(|&i| &dataset.graphs[i]).collect();
    let val_batch = make_batch(&val_graphs)?;
    let adam = Adam::new(cfg.lr).with_weight_decay(cfg.weight_decay);
    let mut rng = crate::rng_from_seed(cfg.seed ^ 0x5e_ed0f_da7a);
    let mut state = TrainState::new(cfg.patience, cfg.seed);
    let mut best = model.params.snapshot();
    let mut order = split.train.clone();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let graphs: Vec<&Graph> = chunk.iter().map(|&i| &dataset.graphs[i]).collect();
            let batch = make_batch(&graphs)?;
            let labels = labels_of(&batch)?;
            let grads = {
                let mut ctx = Ctx::train(&model.params, &mut rng);
                let logits = model.forward(&mut ctx, &batch)?;
                let loss = ctx.tape.cross_entropy(logits, labels)?;
                total += ctx.tape.scalar(loss) * chunk.len() as f64;
                ctx.backward(loss)?
            };
            model.params.apply_gradients(grads);
            adam.step(&mut model.params)?;
        }
        let (val_loss, val_acc) = loss_and_accuracy(model, &val_batch)?;
        state.history.push(EpochRecord {
            epoch,
            train_loss: total / order.len() as f64,
            val_loss: Some(val_loss),
            val_acc: Some(val_acc),
        });
        match state.observe(val_loss) {
            Progress::Improved => best = model.params.snapshot(),
            Progress::Waiting => {}
            Progress::Stop => break,
        }
    }
    model.params.restore(&best);
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_fixtures() {
        let logits = Tensor::from_rows(&[&[2.0, 1.0], &[0.0, 3.0], &[1.0, 0.5], &[0.2, 0.1]]);
        assert_eq!(accuracy_from_logits(&logits, &[0, 1, 0, 0]), 1.0);
        assert_eq!(accuracy_from_logits(&logits, &[1, 0, 1, 1]), 0.0);
        assert_eq!(accuracy_from_logits(&logits, &[0, 1, 0, 1]), 0.75);
    }

    #[test]
    fn readout_names_round_trip() {
        for k in [
            ReadoutKind::Gmt,
            ReadoutKind::Sum,
            ReadoutKind::Mean,
            ReadoutKind::TopK,
            ReadoutKind::Cluster,
        ] {
            assert_eq!(k.name().parse::<ReadoutKind>().unwrap(), k);
        }
        assert!("max".parse::<ReadoutKind>().is_err());
    }

    #[test]
    fn k_follows_largest_graph() {
        let cfg = ClassifierConfig::default();
        assert_eq!(cfg.pooled_nodes(28), 7);
        assert_eq!(cfg.pooled_nodes(1), 1);
        assert_eq!(cfg.pooled_nodes(0), 1);
    }
}
