#![allow(clippy::needless_range_loop)]

mod common;

use std::rc::Rc;

use common::{add_row, dense_normalized, hcat, matmul, random_matrix, relu};
use gmt_core::gcn::{Activation, Adjacency, Encoder, GcnLayer, JkMode, JumpingKnowledge};
use gmt_core::generate::erdos_renyi;
use gmt_core::graph::{normalized_adjacency, Graph};
use gmt_core::{rng_from_seed, Ctx, ParamStore, Tensor};

fn layer_output(store: &ParamStore, layer: &GcnLayer, x: &Tensor, adj: &Adjacency) -> Tensor {
    let mut ctx = Ctx::eval(store);
    let x = ctx.tape.constant(x.clone());
    let h = layer.forward(&mut ctx, x, adj).unwrap();
    ctx.tape.value(h).clone()
}

fn dense_layer(store: &ParamStore, layer: &GcnLayer, a: &Tensor, x: &Tensor) -> Tensor {
    let w = store.value(layer.weight);
    let b = store.value(layer.bias.unwrap());
    let out = add_row(&matmul(a, &matmul(x, w)), b.data());
    match layer.activation {
        Activation::Relu => relu(&out),
        Activation::Identity => out,
    }
}

#[test]
fn normalized_adjacency_of_a_path() {
    // Path 0-1-2: degrees with self loops are 2, 3, 2.
    let a = normalized_adjacency(3, &[(0, 1), (1, 2)]).to_dense();
    let s6 = 1.0 / 6f64.sqrt();
    let expect = Tensor::from_rows(&[&[0.5, s6, 0.0], &[s6, 1.0 / 3.0, s6], &[0.0, s6, 0.5]]);
    assert!(a.max_abs_diff(&expect) <= 1e-15);
}

#[test]
fn isolated_node_keeps_its_own_row() {
    let a = normalized_adjacency(3, &[(0, 1)]).to_dense();
    assert_eq!(a.row(2), &[0.0, 0.0, 1.0]);
}

#[test]
fn layer_matches_dense_oracle() {
    for seed in 0..5 {
        let mut rng = rng_from_seed(seed);
        let g = erdos_renyi(12, 20, &mut rng).unwrap();
        let x = random_matrix(12, 5, seed + 10);
        let mut store = ParamStore::new();
        let layer = GcnLayer::new(&mut store, "l", 5, 4, true, Activation::Relu, &mut rng);
        let b = store.add("noise", random_matrix(1, 4, seed + 20));
        store.set_value(layer.bias.unwrap(), store.value(b).clone().reshape(&[4]).unwrap());
        let sparse = layer_output(&store, &layer, &x, &Adjacency::Graph(Rc::new(normalized_adjacency(12, g.edges()))));
        let dense = dense_layer(&store, &layer, &dense_normalized(12, g.edges()), &x);
        assert!(sparse.max_abs_diff(&dense) <= 1e-10, "seed {seed}");
    }
}

#[test]
fn identity_adjacency_is_row_wise() {
    let mut rng = rng_from_seed(1);
    let mut store = ParamStore::new();
    let layer = GcnLayer::new(&mut store, "l", 3, 2, true, Activation::Identity, &mut rng);
    let x = random_matrix(4, 3, 2);
    let out = layer_output(&store, &layer, &x, &Adjacency::Identity);
    let expect = dense_layer(&store, &layer, &Tensor::identity(4), &x);
    assert!(out.max_abs_diff(&expect) <= 1e-14);
}

#[test]
fn zero_weights_give_relu_of_bias() {
    let mut rng = rng_from_seed(0);
    let mut store = ParamStore::new();
    let layer = GcnLayer::new(&mut store, "l", 3, 2, true, Activation::Relu, &mut rng);
    store.set_value(layer.weight, Tensor::zeros(&[3, 2]));
    store.set_value(layer.bias.unwrap(), Tensor::vector(vec![0.5, -0.5]));
    let g = Graph::new(random_matrix(4, 3, 0), vec![(0, 1), (1, 2), (2, 3)]).unwrap();
    let out = layer_output(&store, &layer, g.node_features(), &Adjacency::Graph(Rc::new(g.normalized_adjacency())));
    for i in 0..4 {
        assert_eq!(out.row(i), &[0.5, 0.0]);
    }
}

#[test]
fn layer_is_permutation_equivariant() {
    for seed in 0..5 {
        let mut rng = rng_from_seed(seed);
        let g = erdos_renyi(10, 15, &mut rng).unwrap();
        let g = Graph::new(random_matrix(10, 3, seed), g.edges().to_vec()).unwrap();
        let mut store = ParamStore::new();
        let layer = GcnLayer::new(&mut store, "l", 3, 4, true, Activation::Relu, &mut rng);
        let perm: Vec<usize> = (0..10).map(|i| (i * 3 + seed as usize) % 10).collect();
        let p = g.permuted(&perm);
        let out = layer_output(&store, &layer, g.node_features(), &Adjacency::Graph(Rc::new(g.normalized_adjacency())));
        let out_p = layer_output(&store, &layer, p.node_features(), &Adjacency::Graph(Rc::new(p.normalized_adjacency())));
        // Node i of g is node perm[i] of the permuted graph.
        for i in 0..10 {
            for j in 0..4 {
                assert!((out.get(i, j) - out_p.get(perm[i], j)).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn encoder_composes_layers_with_concat() {
    let g = Graph::new(random_matrix(4, 2, 5), vec![(0, 1), (1, 2), (2, 3)]).unwrap();
    let mut store = ParamStore::new();
    let mut rng = rng_from_seed(9);
    let enc = Encoder::new(&mut store, 2, 3, 2, JkMode::Concat, 0.0, &mut rng).unwrap();
    let a = dense_normalized(4, g.edges());
    let h1 = dense_layer(&store, &enc.layers[0], &a, g.node_features());
    let h2 = dense_layer(&store, &enc.layers[1], &a, &h1);
    let JumpingKnowledge::Concat(proj) = &enc.jk else { panic!("concat expected") };
    let expect = add_row(
        &matmul(&hcat(&[h1, h2]), store.value(proj.weight)),
        store.value(proj.bias.unwrap()).data(),
    );
    let mut ctx = Ctx::eval(&store);
    let x = ctx.tape.constant(g.node_features().clone());
    let out = enc.forward(&mut ctx, x, &Adjacency::Graph(Rc::new(g.normalized_adjacency()))).unwrap();
    assert!(ctx.tape.value(out).max_abs_diff(&expect) <= 1e-12);
    assert_eq!(enc.output_dim(), 3);
}

#[test]
fn single_layer_encoder_is_one_gcn() {
    let g = Graph::new(random_matrix(5, 3, 1), vec![(0, 1), (1, 2), (3, 4)]).unwrap();
    let mut store = ParamStore::new();
    let mut rng = rng_from_seed(2);
    let enc = Encoder::new(&mut store, 3, 4, 1, JkMode::Last, 0.5, &mut rng).unwrap();
    let adj = Adjacency::Graph(Rc::new(g.normalized_adjacency()));
    let mut ctx = Ctx::eval(&store);
    let x = ctx.tape.constant(g.node_features().clone());
    let out = enc.forward(&mut ctx, x, &adj).unwrap();
    let expect = layer_output(&store, &enc.layers[0], g.node_features(), &adj);
    assert_eq!(ctx.tape.value(out), &expect);
}

#[test]
fn encoder_needs_a_layer() {
    let mut rng = rng_from_seed(0);
    assert!(Encoder::new(&mut ParamStore::new(), 3, 4, 0, JkMode::Last, 0.0, &mut rng).is_err());
}
