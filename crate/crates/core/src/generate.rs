//! Synthetic graph generators.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

fn coord_graph(coords: Vec<[f64; 2]>, edges: Vec<(usize, usize)>) -> Graph {
    let n = coords.len();
    let feats = coords.iter().flat_map(|c| c.iter().copied()).collect();
    let mut g = Graph::new(Tensor::matrix(n, 2, feats), edges).expect("generator builds valid graphs");
    g.coords = Some(coords);
    g
}

/// `n` nodes on the unit circle, node `i` at angle `2 pi i / n`, joined in a cycle.
pub fn ring(n: usize) -> Result<Graph> {
    if n < 3 {
        return Err(Error::Parameter(format!("ring needs n >= 3, got {n}")));
    }
    let coords = (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            [libm::cos(t), libm::sin(t)]
        })
        .collect();
    let edges = (0..n).map(|i| (i, (i + 1) % n)).collect();
    Ok(coord_graph(coords, edges))
}

/// `rows x cols` lattice scaled into the unit square, 4-neighbour edges.
/// Node `r * cols + c` sits at `(c / (cols - 1), r / (rows - 1))`.
pub fn grid(rows: usize, cols: usize) -> Result<Graph> {
    if rows < 2 || cols < 2 {
        return Err(Error::Parameter(format!(
            "grid needs rows, cols >= 2, got {rows}x{cols}"
        )));
    }
    let mut coords = Vec::with_capacity(rows * cols);
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            coords.push([c as f64 / (cols - 1) as f64, r as f64 / (rows - 1) as f64]);
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
            }
        }
    }
    Ok(coord_graph(coords, edges))
}

/// `m` distinct edges drawn uniformly without replacement; every node gets
/// the constant feature `1.0`. Edges come out sorted.
pub fn erdos_renyi(n: usize, m: usize, rng: &mut crate::Rng) -> Result<Graph> {
    let total = n * n.saturating_sub(1) / 2;
    if m > total {
        return Err(Error::Parameter(format!(
            "{m} edges do not fit in a simple graph on {n} nodes (max {total})"
        )));
    }
    // Floyd's sampling of m distinct pair indices out of `total`.
    let mut picked = BTreeSet::new();
    for j in total - m..total {
        let t = rng.random_range(0..=j);
        if !picked.insert(t) {
            picked.insert(j);
        }
    }
    let edges = picked.into_iter().map(|idx| pair_from_index(n, idx)).collect();
    Graph::new(Tensor::full(&[n, 1], 1.0), edges)
}

/// Index of `(i, j)`, `i < j`, in row-major order of the strict upper triangle.
fn pair_from_index(n: usize, idx: usize) -> (usize, usize) {
    // pairs before row i: i * (2n - i - 1) / 2
    let before = |i: usize| i * (2 * n - i - 1) / 2;
    let (mut lo, mut hi) = (0, n - 1);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if before(mid) <= idx {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, lo + 1 + idx - before(lo))
}
