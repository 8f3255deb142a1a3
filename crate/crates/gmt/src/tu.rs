//! Reader and writer for the TU graph-kernel benchmark text format.
//!
//! A dataset `DS` is a directory of comma-separated files: `DS_A.txt` (one
//! 1-based `row, col` pair per line, both directions present),
//! `DS_graph_indicator.txt` (graph id of every node), `DS_graph_labels.txt`
//! and, optionally, `DS_node_labels.txt`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gmt_core::graph::{one_hot, one_hot_degree, Dataset, FeatureKind, Graph};
use gmt_core::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{0}")]
    Inconsistent(String),
    #[error(transparent)]
    Core(#[from] gmt_core::Error),
}

fn read(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Non-empty lines, each split on commas into trimmed integers.
fn parse_rows(path: &Path, width: usize) -> Result<Vec<Vec<i64>>, LoadError> {
    let text = read(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Result<Vec<i64>, _> = line.split(',').map(|f| f.trim().parse::<i64>()).collect();
        let fields = fields.map_err(|e| LoadError::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: format!("{e} in {line:?}"),
        })?;
        if fields.len() != width {
            return Err(LoadError::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        rows.push(fields);
    }
    Ok(rows)
}

fn column(path: &Path) -> Result<Vec<i64>, LoadError> {
    Ok(parse_rows(path, 1)?.into_iter().map(|r| r[0]).collect())
}

/// Maps sorted distinct values onto `0..`.
fn remap(values: &[i64]) -> (Vec<usize>, usize) {
    let distinct: BTreeSet<i64> = values.iter().copied().collect();
    let index: BTreeMap<i64, usize> = distinct.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    (values.iter().map(|v| index[v]).collect(), distinct.len())
}

/// Loads dataset `name` from `dir`. Graph labels are remapped to `0..C` in
/// sorted order; node features are one-hot node labels when the file
/// exists and one-hot degrees (capped at the largest degree) otherwise.
pub fn load_tu(dir: &Path, name: &str) -> Result<Dataset, LoadError> {
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));
    let indicator_path = file("graph_indicator");
    let indicator = column(&indicator_path)?;
    let graph_labels = column(&file("graph_labels"))?;
    let edges_path = file("A");
    let edges = parse_rows(&edges_path, 2)?;
    let node_labels_path = file("node_labels");
    let node_labels = if node_labels_path.exists() {
        Some(column(&node_labels_path)?)
    } else {
        None
    };

    let num_graphs = graph_labels.len();
    let n = indicator.len();
    let mut graph_of = Vec::with_capacity(n);
    let mut local = Vec::with_capacity(n);
    let mut sizes = vec![0usize; num_graphs];
    for (i, &g) in indicator.iter().enumerate() {
        if g < 1 || g as usize > num_graphs {
            return Err(LoadError::Parse {
                path: indicator_path.clone(),
                line: i + 1,
                message: format!("graph id {g} outside 1..={num_graphs}"),
            });
        }
        let g = g as usize - 1;
        if i > 0 && g < graph_of[i - 1] {
            return Err(LoadError::Parse {
                path: indicator_path.clone(),
                line: i + 1,
                message: "graph ids must be non-decreasing".into(),
            });
        }
        graph_of.push(g);
        local.push(sizes[g]);
        sizes[g] += 1;
    }
    if let Some(labels) = &node_labels {
        if labels.len() != n {
            return Err(LoadError::Inconsistent(format!(
                "{} node labels for {n} nodes",
                labels.len()
            )));
        }
    }

    let mut per_graph: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); num_graphs];
    for (line, e) in edges.iter().enumerate() {
        let in_range = |v: i64| v >= 1 && v as usize <= n;
        if !in_range(e[0]) || !in_range(e[1]) {
            return Err(LoadError::Parse {
                path: edges_path.clone(),
                line: line + 1,
                message: format!("node id outside 1..={n}"),
            });
        }
        let (u, v) = (e[0] as usize - 1, e[1] as usize - 1);
        if graph_of[u] != graph_of[v] {
            return Err(LoadError::Parse {
                path: edges_path.clone(),
                line: line + 1,
                message: format!("edge joins graphs {} and {}", graph_of[u] + 1, graph_of[v] + 1),
            });
        }
        if u != v {
            let (a, b) = (local[u].min(local[v]), local[u].max(local[v]));
            per_graph[graph_of[u]].insert((a, b));
        }
    }

    let (labels, num_classes) = remap(&graph_labels);
    let node_classes = node_labels.as_deref().map(remap);
    let mut graphs = Vec::with_capacity(num_graphs);
    let mut start = 0;
    for (g, edge_set) in per_graph.into_iter().enumerate() {
        let size = sizes[g];
        let edges: Vec<(usize, usize)> = edge_set.into_iter().collect();
        let mut graph = Graph::new(Tensor::zeros(&[size, 0]), edges)?.with_label(labels[g]);
        if let Some((classes, count)) = &node_classes {
            let mine = classes[start..start + size].to_vec();
            graph.set_node_features(one_hot(&mine, *count))?;
            graph.node_labels = Some(mine);
        }
        start += size;
        graphs.push(graph);
    }
    let features = match &node_classes {
        Some((_, count)) => FeatureKind::NodeLabels { count: *count },
        None => {
            let cap = graphs.iter().flat_map(|g| g.degrees()).max().unwrap_or(0);
            for g in &mut graphs {
                let f = one_hot_degree(g, cap);
                g.set_node_features(f)?;
            }
            FeatureKind::Degree { cap }
        }
    };
    Ok(Dataset::new(name, graphs, num_classes, features)?)
}

/// Writes `dataset` in the TU layout (labels written as their indices,
/// edges in both directions).
pub fn write_tu(dir: &Path, dataset: &Dataset) -> Result<(), LoadError> {
    let io = |path: PathBuf| move |source| LoadError::Io { path: path.clone(), source };
    fs::create_dir_all(dir).map_err(io(dir.to_owned()))?;
    let name = &dataset.name;
    let open = |suffix: &str| -> Result<(PathBuf, std::io::BufWriter<fs::File>), LoadError> {
        let path = dir.join(format!("{name}_{suffix}.txt"));
        let f = fs::File::create(&path).map_err(io(path.clone()))?;
        Ok((path, std::io::BufWriter::new(f)))
    };
    let (pa, mut a) = open("A")?;
    let (pi, mut ind) = open("graph_indicator")?;
    let (pl, mut gl) = open("graph_labels")?;
    let mut nl = None;
    let mut offset = 0;
    for (gi, g) in dataset.graphs.iter().enumerate() {
        for &(u, v) in g.edges() {
            writeln!(a, "{}, {}", u + offset + 1, v + offset + 1).map_err(io(pa.clone()))?;
            writeln!(a, "{}, {}", v + offset + 1, u + offset + 1).map_err(io(pa.clone()))?;
        }
        for _ in 0..g.num_nodes() {
            writeln!(ind, "{}", gi + 1).map_err(io(pi.clone()))?;
        }
        writeln!(gl, "{}", g.label.unwrap_or(0)).map_err(io(pl.clone()))?;
        if let Some(labels) = &g.node_labels {
            if nl.is_none() {
                nl = Some(open("node_labels")?);
            }
            let (pn, w) = nl.as_mut().expect("opened above");
            for l in labels {
                writeln!(w, "{l}").map_err(io(pn.clone()))?;
            }
        }
        offset += g.num_nodes();
    }
    for (path, w) in [(pa, &mut a), (pi, &mut ind), (pl, &mut gl)] {
        w.flush().map_err(io(path))?;
    }
    if let Some((path, mut w)) = nl {
        w.flush().map_err(io(path))?;
    }
    Ok(())
}
