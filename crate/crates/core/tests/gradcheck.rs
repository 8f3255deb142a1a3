mod common;

use std::rc::Rc;

use common::{gradcheck, probe_loss, random_matrix};
use gmt_core::attention::{AttentionOptions, AttnLayout, MultiHead, SoftmaxAxis};
use gmt_core::gcn::{Activation, Adjacency, Encoder, GcnLayer, JkMode};
use gmt_core::generate::erdos_renyi;
use gmt_core::graph::{make_batch, Graph};
use gmt_core::pool::{ClusterPool, GmPool, GmtConfig, GmtPooler, SelfAtt, TopKPool};
use gmt_core::{rng_from_seed, ParamStore};

const TOL: f64 = 1e-4;
const INSTANCES: u64 = 5;

fn random_graph(n: usize, m: usize, c: usize, seed: u64) -> Graph {
    let mut rng = rng_from_seed(seed);
    let g = erdos_renyi(n, m, &mut rng).unwrap();
    Graph::new(random_matrix(n, c, seed + 100), g.edges().to_vec()).unwrap()
}

fn check(name: &str, seed: u64, err: f64) {
    assert!(err <= TOL, "{name} instance {seed}: relative gradient error {err:e}");
}

#[test]
fn tape_ops() {
    for seed in 0..INSTANCES {
        let mut store = ParamStore::new();
        let a = store.add("a", random_matrix(4, 3, seed));
        let b = store.add("b", random_matrix(3, 5, seed + 1));
        let g = store.add("g", random_matrix(1, 5, seed + 2));
        let beta = store.add("beta", random_matrix(1, 5, seed + 3));
        let err = gradcheck(&mut store, |ctx| {
            let (a, b, g, beta) = (ctx.param(a), ctx.param(b), ctx.param(g), ctx.param(beta));
            let ab = ctx.tape.matmul(a, b)?;
            let t = ctx.tape.tanh(ab);
            let ln = ctx.tape.layer_norm(t, g, beta, 1e-5)?;
            let s0 = ctx.tape.softmax(ln, 0)?;
            let s1 = ctx.tape.softmax(ab, 1)?;
            let m = ctx.tape.mul(s0, s1)?;
            let bt = ctx.tape.transpose(b)?;
            let p1 = ctx.tape.matmul(m, bt)?;
            let p2 = ctx.tape.matmul_nt(m, b)?;
            let back = ctx.tape.sub(p1, p2)?;
            let back = ctx.tape.add(back, p1)?;
            let seg = ctx.tape.segment_reduce(back, Rc::from(vec![0, 1, 0, 1]), 2, true)?;
            let sc = ctx.tape.scatter_rows(seg, Rc::from(vec![2, 0]), 3)?;
            let ga = ctx.tape.gather_rows(a, Rc::from(vec![1, 1, 3]))?;
            let both = ctx.tape.concat_cols(&[sc, ga])?;
            let u = ctx.tape.unit(both)?;
            let l1 = probe_loss(ctx, u, seed)?;
            let ce = ctx.tape.cross_entropy(ab, Rc::from(vec![0, 4, 2, 1]))?;
            let sum = ctx.tape.add(l1, ce)?;
            let r = ctx.tape.relu(ab);
            let target = ctx.tape.constant(random_matrix(4, 5, seed + 9));
            let mse = ctx.tape.mse(r, target)?;
            ctx.tape.add(sum, mse)
        });
        check("tape ops", seed, err);
    }
}

#[test]
fn gcn_layer() {
    for seed in 0..INSTANCES {
        let g = random_graph(7, 9, 3, seed);
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(seed);
        let layer = GcnLayer::new(&mut store, "gcn", 3, 4, true, Activation::Relu, &mut rng);
        let adj = Adjacency::Graph(Rc::new(g.normalized_adjacency()));
        let err = gradcheck(&mut store, |ctx| {
            let x = ctx.tape.constant(g.node_features().clone());
            let h = layer.forward(ctx, x, &adj)?;
            probe_loss(ctx, h, seed)
        });
        check("gcn", seed, err);
    }
}

#[test]
fn encoder_with_jumping_knowledge() {
    for seed in 0..INSTANCES {
        let g = random_graph(6, 7, 3, seed);
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(seed);
        let enc = Encoder::new(&mut store, 3, 4, 3, JkMode::Concat, 0.0, &mut rng).unwrap();
        let adj = Adjacency::Graph(Rc::new(g.normalized_adjacency()));
        let err = gradcheck(&mut store, |ctx| {
            let x = ctx.tape.constant(g.node_features().clone());
            let h = enc.forward(ctx, x, &adj)?;
            probe_loss(ctx, h, seed)
        });
        check("encoder", seed, err);
    }
}

fn multi_head(graph: bool, seed: u64) -> f64 {
    let g = random_graph(5, 6, 4, seed);
    let mut store = ParamStore::new();
    let mut rng = rng_from_seed(seed);
    let mh = MultiHead::new(&mut store, "mh", 4, 4, 2, 2, 4, &mut rng).unwrap();
    let q = random_matrix(3, 4, seed + 7);
    let adj = if graph {
        Adjacency::Graph(Rc::new(g.normalized_adjacency()))
    } else {
        Adjacency::Identity
    };
    gradcheck(&mut store, |ctx| {
        let q = ctx.tape.constant(q.clone());
        let h = ctx.tape.constant(g.node_features().clone());
        let out = mh.forward(ctx, q, h, &adj, &AttnLayout::single(5), &AttentionOptions::default())?;
        probe_loss(ctx, out.output, seed)
    })
}

#[test]
fn multi_head_attention() {
    for seed in 0..INSTANCES {
        check("mh", seed, multi_head(false, seed));
    }
}

#[test]
fn graph_multi_head_attention() {
    for seed in 0..INSTANCES {
        check("gmh", seed, multi_head(true, seed));
    }
}

fn two_graph_batch(seed: u64, c: usize) -> gmt_core::graph::GraphBatch {
    let a = random_graph(5, 5, c, seed);
    let b = random_graph(3, 2, c, seed + 50);
    make_batch(&[a, b]).unwrap()
}

#[test]
fn gmpool_both_axes() {
    for seed in 0..INSTANCES {
        let batch = two_graph_batch(seed, 4);
        for axis in [SoftmaxAxis::Keys, SoftmaxAxis::Queries] {
            let mut store = ParamStore::new();
            let mut rng = rng_from_seed(seed);
            let cfg = GmtConfig::new(4, 2, 3);
            let pool = GmPool::new(&mut store, "p", &cfg, 3, axis, &mut rng).unwrap();
            let adj = Adjacency::Graph(batch.adjacency());
            let err = gradcheck(&mut store, |ctx| {
                let h = ctx.tape.constant(batch.features.clone());
                let out = pool.forward(ctx, h, &adj, &batch.offsets, true)?;
                let l = probe_loss(ctx, out.output, seed)?;
                let c = probe_loss(ctx, out.assignments[1], seed + 1)?;
                ctx.tape.add(l, c)
            });
            check("gmpool", seed, err);
        }
    }
}

#[test]
fn self_attention_block() {
    for seed in 0..INSTANCES {
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(seed);
        let block = SelfAtt::new(&mut store, "sa", &GmtConfig::new(4, 2, 3), &mut rng).unwrap();
        let h = random_matrix(6, 4, seed + 3);
        let err = gradcheck(&mut store, |ctx| {
            let h = ctx.tape.constant(h.clone());
            let out = block.forward(ctx, h, &[0, 3, 6])?;
            probe_loss(ctx, out, seed)
        });
        check("selfatt", seed, err);
    }
}

#[test]
fn full_gmt_stack() {
    for seed in 0..INSTANCES {
        let batch = two_graph_batch(seed, 4);
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(seed);
        let pooler = GmtPooler::new(&mut store, "gmt", &GmtConfig::new(4, 2, 2), &mut rng).unwrap();
        let adj = Adjacency::Graph(batch.adjacency());
        let err = gradcheck(&mut store, |ctx| {
            let h = ctx.tape.constant(batch.features.clone());
            let out = pooler.forward(ctx, h, &adj, &batch.offsets, false)?;
            probe_loss(ctx, out.output, seed)
        });
        check("gmt", seed, err);
    }
}

#[test]
fn topk_gate() {
    for seed in 0..INSTANCES {
        let batch = two_graph_batch(seed, 4);
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(seed);
        let pool = TopKPool::new(&mut store, "topk", 4, 0.5, &mut rng).unwrap();
        let h0 = store.add("h", batch.features.clone());
        let err = gradcheck(&mut store, |ctx| {
            let h = ctx.param(h0);
            let out = pool.forward(ctx, h, &batch.offsets, &batch.edges)?;
            probe_loss(ctx, out.features, seed)
        });
        check("topk", seed, err);
    }
}

#[test]
fn cluster_assignment() {
    for seed in 0..INSTANCES {
        let batch = two_graph_batch(seed, 4);
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(seed);
        let pool = ClusterPool::new(&mut store, "cl", 4, 2, &mut rng).unwrap();
        let adj = Adjacency::Graph(batch.adjacency());
        let err = gradcheck(&mut store, |ctx| {
            let h = ctx.tape.constant(batch.features.clone());
            let out = pool.forward(ctx, h, &adj, &batch.offsets, &batch.edges)?;
            let f = probe_loss(ctx, out.features, seed)?;
            let a = probe_loss(ctx, out.adjacency[0], seed + 1)?;
            ctx.tape.add(f, a)
        });
        check("cluster", seed, err);
    }
}

#[test]
fn propagate_matches_its_transpose_rule() {
    // Asymmetric operator: the backward pass must use the transpose.
    let op = gmt_core::sparse::SparseMatrix::from_entries(3, vec![(0, 1, 2.0), (2, 0, -1.0), (1, 1, 0.5)]);
    let op = Rc::new(op);
    let mut store = ParamStore::new();
    let x = store.add("x", random_matrix(3, 2, 4));
    let err = gradcheck(&mut store, |ctx| {
        let x = ctx.param(x);
        let y = ctx.tape.propagate(x, op.clone())?;
        probe_loss(ctx, y, 1)
    });
    check("propagate", 0, err);
}
