use std::fs;
use std::path::PathBuf;

use gmt::tu::{load_tu, write_tu, LoadError};
use gmt_core::graph::{Dataset, FeatureKind, Graph};
use gmt_core::Tensor;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn write_files(dir: &std::path::Path, name: &str, files: &[(&str, &str)]) {
    for (suffix, body) in files {
        fs::write(dir.join(format!("{name}_{suffix}.txt")), body).unwrap();
    }
}

#[test]
fn mutag_statistics() {
    let ds = load_tu(&data_dir().join("MUTAG"), "MUTAG").unwrap();
    assert_eq!(ds.graphs.len(), 188);
    assert_eq!(ds.graphs.iter().map(Graph::num_nodes).sum::<usize>(), 3371);
    assert_eq!(ds.graphs.iter().map(|g| g.edges().len()).sum::<usize>(), 3721);
    assert_eq!(ds.num_classes, 2);
    assert_eq!(ds.features, FeatureKind::NodeLabels { count: 7 });
    assert_eq!(ds.num_features(), 7);
    let positives = ds.labels().iter().filter(|&&l| l == 1).count();
    assert_eq!((188 - positives, positives), (63, 125));
    for g in &ds.graphs {
        let f = g.node_features();
        for i in 0..g.num_nodes() {
            assert_eq!(f.row(i).iter().sum::<f64>(), 1.0);
        }
    }
}

#[test]
fn write_then_load_round_trips() {
    let a = Graph::new(Tensor::zeros(&[4, 0]), vec![(0, 1), (0, 3), (1, 2), (2, 3)])
        .unwrap()
        .with_label(1);
    let b = Graph::new(Tensor::zeros(&[3, 0]), vec![(0, 2)]).unwrap().with_label(0);
    let mut graphs = vec![a, b];
    let labels = [vec![0, 2, 2, 1], vec![1, 0, 0]];
    for (g, l) in graphs.iter_mut().zip(&labels) {
        g.set_node_features(gmt_core::graph::one_hot(l, 3)).unwrap();
        g.node_labels = Some(l.clone());
    }
    let ds = Dataset::new("TOY", graphs, 2, FeatureKind::NodeLabels { count: 3 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_tu(dir.path(), &ds).unwrap();
    let back = load_tu(dir.path(), "TOY").unwrap();
    assert_eq!(back.graphs.len(), 2);
    assert_eq!(back.num_classes, 2);
    for (x, y) in ds.graphs.iter().zip(&back.graphs) {
        assert_eq!(x.edges(), y.edges());
        assert_eq!(x.label, y.label);
        assert_eq!(x.node_labels, y.node_labels);
        assert_eq!(x.node_features(), y.node_features());
    }
}

#[test]
fn degree_features_without_node_labels() {
    let dir = tempfile::tempdir().unwrap();
    // A path of three nodes and a lone edge; graph labels 5 and 9.
    write_files(
        dir.path(),
        "D",
        &[
            ("A", "1, 2\n2, 1\n2, 3\n3, 2\n4, 5\n5, 4\n"),
            ("graph_indicator", "1\n1\n1\n2\n2\n"),
            ("graph_labels", "9\n5\n"),
        ],
    );
    let ds = load_tu(dir.path(), "D").unwrap();
    assert_eq!(ds.features, FeatureKind::Degree { cap: 2 });
    assert_eq!(ds.labels(), vec![1, 0]);
    let f = ds.graphs[0].node_features();
    assert_eq!(f.row(0), &[0.0, 1.0, 0.0]);
    assert_eq!(f.row(1), &[0.0, 0.0, 1.0]);
}

#[test]
fn parse_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    write_files(
        dir.path(),
        "B",
        &[
            ("A", "1, 2\n2, x\n"),
            ("graph_indicator", "1\n1\n"),
            ("graph_labels", "0\n"),
        ],
    );
    let err = load_tu(dir.path(), "B").unwrap_err();
    assert!(matches!(err, LoadError::Parse { line: 2, .. }), "{err}");
    let text = err.to_string();
    assert!(text.contains("B_A.txt:2:"), "{text}");
}

#[test]
fn edges_across_graphs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_files(
        dir.path(),
        "C",
        &[
            ("A", "1, 3\n"),
            ("graph_indicator", "1\n1\n2\n"),
            ("graph_labels", "0\n1\n"),
        ],
    );
    let err = load_tu(dir.path(), "C").unwrap_err();
    assert!(err.to_string().contains("edge joins graphs 1 and 2"), "{err}");
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_tu(dir.path(), "NONE").unwrap_err();
    assert!(matches!(err, LoadError::Io { .. }), "{err}");
}

#[test]
fn proteins_when_present() {
    let dir = data_dir().join("PROTEINS");
    if !dir.exists() {
        eprintln!("PROTEINS not found under data/, skipping");
        return;
    }
    let ds = load_tu(&dir, "PROTEINS").unwrap();
    assert_eq!(ds.graphs.len(), 1113);
    assert_eq!(ds.num_classes, 2);
}
