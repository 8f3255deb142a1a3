//! Graphs, datasets and disjoint-union batches.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::tensor::Tensor;

/// An undirected graph with node features.
///
/// Each undirected edge is stored once; message passing expands it to both
/// directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    node_features: Tensor,
    edges: Vec<(usize, usize)>,
    pub label: Option<usize>,
    /// 2-D node positions, synthetic graphs only.
    pub coords: Option<Vec<[f64; 2]>>,
    /// Raw categorical node labels (TU datasets), already remapped to `0..`.
    pub node_labels: Option<Vec<usize>>,
}

impl Graph {
    pub fn new(node_features: Tensor, edges: Vec<(usize, usize)>) -> Result<Self> {
        if node_features.rank() != 2 {
            return Err(Error::InvalidInput(format!(
                "node features must be n x c, got {:?}",
                node_features.shape()
            )));
        }
        let n = node_features.rows();
        let mut seen = BTreeSet::new();
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(Error::InvalidInput(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::InvalidInput(format!("duplicate edge ({u}, {v})")));
            }
        }
        Ok(Self {
            node_features,
            edges,
            label: None,
            coords: None,
            node_labels: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.node_features.cols()
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn set_node_features(&mut self, features: Tensor) -> Result<()> {
        if features.rank() != 2 || features.rows() != self.num_nodes() {
            return Err(Error::InvalidInput(format!(
                "feature matrix {:?} does not match {} nodes",
                features.shape(),
                self.num_nodes()
            )));
        }
        self.node_features = features;
        Ok(())
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes()];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            if u != v {
                deg[v] += 1;
            }
        }
        deg
    }

    /// Dense symmetric 0/1 adjacency.
    pub fn dense_adjacency(&self) -> Tensor {
        dense_adjacency(self.num_nodes(), &self.edges)
    }

    pub fn normalized_adjacency(&self) -> SparseMatrix {
        normalized_adjacency(self.num_nodes(), &self.edges)
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        let n = self.num_nodes();
        assert_eq!(perm.len(), n);
        let c = self.num_features();
        let mut feats = vec![0.0; n * c];
        for (i, &p) in perm.iter().enumerate() {
            feats[p * c..(p + 1) * c].copy_from_slice(self.node_features.row(i));
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut g = Graph::new(Tensor::matrix(n, c, feats), edges).expect("permutation keeps validity");
        g.label = self.label;
        g.coords = self.coords.as_ref().map(|cs| {
            let mut out = vec![[0.0; 2]; n];
            for (i, &p) in perm.iter().enumerate() {
                out[p] = cs[i];
            }
            out
        });
        g.node_labels = self.node_labels.as_ref().map(|ls| {
            let mut out = vec![0; n];
            for (i, &p) in perm.iter().enumerate() {
                out[p] = ls[i];
            }
            out
        });
        g
    }
}

pub fn dense_adjacency(n: usize, edges: &[(usize, usize)]) -> Tensor {
    let mut a = Tensor::zeros(&[n, n]);
    for &(u, v) in edges {
        a.set(u, v, 1.0);
        a.set(v, u, 1.0);
    }
    a
}

/// GCN propagation operator `D^-1/2 (A + I) D^-1/2` as a sparse matrix.
///
/// Self-loops come first, then each undirected edge in both directions, in
/// edge-list order.
pub fn normalized_adjacency(n: usize, edges: &[(usize, usize)]) -> SparseMatrix {
    let mut deg = vec![1.0f64; n];
    for &(u, v) in edges {
        deg[u] += 1.0;
        if u != v {
            deg[v] += 1.0;
        }
    }
    let inv: Vec<f64> = deg.iter().map(|d| 1.0 / libm::sqrt(*d)).collect();
    let mut entries = Vec::with_capacity(n + 2 * edges.len());
    for (i, s) in inv.iter().enumerate() {
        entries.push((i, i, s * s));
    }
    for &(u, v) in edges {
        let w = inv[u] * inv[v];
        entries.push((v, u, w));
        if u != v {
            entries.push((u, v, w));
        }
    }
    SparseMatrix::from_entries(n, entries)
}

/// How a dataset's node features were built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    /// One-hot categorical node labels.
    NodeLabels { count: usize },
    /// One-hot node degree, clamped to `cap`.
    Degree { cap: usize },
    /// Anything else (coordinates, constants).
    Raw,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub features: FeatureKind,
}

impl Dataset {
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>, num_classes: usize, features: FeatureKind) -> Result<Self> {
        if let Some(first) = graphs.first() {
            let c = first.num_features();
            for (i, g) in graphs.iter().enumerate() {
                if g.num_features() != c {
                    return Err(Error::InvalidInput(format!(
                        "graph {i} has {} features, expected {c}",
                        g.num_features()
                    )));
                }
                if let Some(y) = g.label {
                    if y >= num_classes {
                        return Err(Error::InvalidInput(format!(
                            "graph {i} label {y} >= {num_classes} classes"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            name: name.into(),
            graphs,
            num_classes,
            features,
        })
    }

    pub fn num_features(&self) -> usize {
        self.graphs.first().map_or(0, |g| g.num_features())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label.unwrap_or(0)).collect()
    }

    pub fn max_nodes(&self, indices: &[usize]) -> usize {
        indices.iter().map(|&i| self.graphs[i].num_nodes()).max().unwrap_or(0)
    }

    pub fn mean_nodes(&self) -> f64 {
        let total: usize = self.graphs.iter().map(|g| g.num_nodes()).sum();
        total as f64 / self.graphs.len().max(1) as f64
    }

    /// Replaces every graph's features with one-hot degrees clamped to `cap`.
    pub fn set_degree_features(&mut self, cap: usize) {
        for g in &mut self.graphs {
            let f = one_hot_degree(g, cap);
            g.set_node_features(f).expect("same node count");
        }
        self.features = FeatureKind::Degree { cap };
    }
}

/// `n x (cap + 1)` one-hot encoding of `min(degree, cap)`.
pub fn one_hot_degree(g: &Graph, cap: usize) -> Tensor {
    let deg = g.degrees();
    let mut t = Tensor::zeros(&[g.num_nodes(), cap + 1]);
    for (i, d) in deg.into_iter().enumerate() {
        t.set(i, d.min(cap), 1.0);
    }
    t
}

pub fn one_hot(labels: &[usize], count: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), count]);
    for (i, &l) in labels.iter().enumerate() {
        t.set(i, l, 1.0);
    }
    t
}

/// Several graphs as one block-diagonal graph.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub features: Tensor,
    pub edges: Vec<(usize, usize)>,
    pub graph_ids: Rc<[usize]>,
    pub node_counts: Vec<usize>,
    /// `offsets[g]..offsets[g + 1]` are graph `g`'s rows.
    pub offsets: Vec<usize>,
    pub labels: Vec<Option<usize>>,
    coords: Vec<Option<Vec<[f64; 2]>>>,
    adjacency: Rc<SparseMatrix>,
}

impl GraphBatch {
    pub fn num_graphs(&self) -> usize {
        self.node_counts.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    /// Cached normalized adjacency of the whole block.
    pub fn adjacency(&self) -> Rc<SparseMatrix> {
        self.adjacency.clone()
    }

    pub fn range(&self, g: usize) -> core::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }

    /// Undoes batching.
    pub fn split(&self) -> Vec<Graph> {
        let mut per_graph: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.num_graphs()];
        for &(u, v) in &self.edges {
            let g = self.graph_ids[u];
            let off = self.offsets[g];
            per_graph[g].push((u - off, v - off));
        }
        per_graph
            .into_iter()
            .enumerate()
            .map(|(g, edges)| {
                let r = self.range(g);
                let mut out = Graph::new(self.features.slice_rows(r.start, r.end), edges)
                    .expect("batch was built from valid graphs");
                out.label = self.labels[g];
                out.coords = self.coords[g].clone();
                out
            })
            .collect()
    }
}

/// Disjoint union of `graphs`, node indices offset graph by graph.
pub fn make_batch<G: core::borrow::Borrow<Graph>>(graphs: &[G]) -> Result<GraphBatch> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Batch("cannot batch zero graphs".into()))?
        .borrow();
    let c = first.num_features();
    let total: usize = graphs.iter().map(|g| g.borrow().num_nodes()).sum();
    let mut data = Vec::with_capacity(total * c);
    let mut edges = Vec::new();
    let mut ids = Vec::with_capacity(total);
    let mut offsets = vec![0];
    let mut counts = Vec::with_capacity(graphs.len());
    let mut labels = Vec::with_capacity(graphs.len());
    let mut coords = Vec::with_capacity(graphs.len());
    for (gi, g) in graphs.iter().enumerate() {
        let g = g.borrow();
        if g.num_features() != c {
            return Err(Error::Batch(format!(
                "graph {gi} has {} features, batch has {c}",
                g.num_features()
            )));
        }
        let off = *offsets.last().unwrap();
        data.extend_from_slice(g.node_features.data());
        edges.extend(g.edges.iter().map(|&(u, v)| (u + off, v + off)));
        ids.extend(core::iter::repeat_n(gi, g.num_nodes()));
        counts.push(g.num_nodes());
        offsets.push(off + g.num_nodes());
        labels.push(g.label);
        coords.push(g.coords.clone());
    }
    let adjacency = Rc::new(normalized_adjacency(total, &edges));
    Ok(GraphBatch {
        features: Tensor::matrix(total, c, data),
        edges,
        graph_ids: ids.into(),
        node_counts: counts,
        offsets,
        labels,
        coords,
        adjacency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::new(Tensor::matrix(3, 1, vec![1., 2., 3.]), vec![(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn rejects_out_of_range_and_duplicate_edges() {
        let f = Tensor::zeros(&[2, 1]);
        assert!(Graph::new(f.clone(), vec![(0, 2)]).is_err());
        assert!(Graph::new(f.clone(), vec![(0, 1), (1, 0)]).is_err());
        assert!(Graph::new(f, vec![(0, 1)]).is_ok());
    }

    #[test]
    fn single_graph_batch_is_the_graph() {
        let g = path3().with_label(1);
        let b = make_batch(&[&g]).unwrap();
        assert_eq!(b.features, *g.node_features());
        assert_eq!(b.edges, g.edges());
        assert!(b.graph_ids.iter().all(|&i| i == 0));
        assert_eq!(b.labels, vec![Some(1)]);
    }

    #[test]
    fn second_graph_edges_are_offset() {
        let a = path3();
        let b = Graph::new(Tensor::zeros(&[4, 1]), vec![(0, 1), (2, 3)]).unwrap();
        let batch = make_batch(&[a, b]).unwrap();
        assert_eq!(batch.num_nodes(), 7);
        assert_eq!(&batch.edges[2..], &[(3, 4), (5, 6)]);
        assert_eq!(batch.offsets, vec![0, 3, 7]);
    }

    #[test]
    fn mixed_feature_dims_fail_to_batch() {
        let a = path3();
        let b = Graph::new(Tensor::zeros(&[2, 2]), vec![]).unwrap();
        assert!(matches!(make_batch(&[a, b]), Err(Error::Batch(_))));
    }

    #[test]
    fn normalized_adjacency_of_isolated_node_is_identity() {
        let a = normalized_adjacency(1, &[]);
        assert_eq!(a.to_dense(), Tensor::identity(1));
    }

    #[test]
    fn degree_one_hot_clamps() {
        // star with 3 leaves: centre degree 3, cap 2
        let g = Graph::new(Tensor::zeros(&[4, 1]), vec![(0, 1), (0, 2), (0, 3)]).unwrap();
        let f = one_hot_degree(&g, 2);
        assert_eq!(f.row(0), &[0., 0., 1.]);
        assert_eq!(f.row(1), &[0., 1., 0.]);
    }
}
