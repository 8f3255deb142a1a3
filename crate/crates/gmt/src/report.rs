//! CSV, SVG and provenance outputs.

use std::fs;
use std::io;
use std::path::Path;
use std::process::Command;

use gmt_core::graph::Graph;
use gmt_core::pool::AssignmentMatrix;
use gmt_core::tasks::EpochRecord;
use gmt_core::Tensor;
use serde::Serialize;

use crate::config::RunConfig;

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// `epoch,train_loss,val_loss,val_acc`; absent values are empty cells.
pub fn write_metrics(path: &Path, history: &[EpochRecord]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["epoch", "train_loss", "val_loss", "val_acc"]).map_err(csv_err)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            opt(r.val_loss),
            opt(r.val_acc),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

/// `node_id,x_true,y_true,x_rec,y_rec`.
pub fn write_reconstruction(path: &Path, truth: &Tensor, rec: &Tensor) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["node_id", "x_true", "y_true", "x_rec", "y_rec"]).map_err(csv_err)?;
    for i in 0..truth.rows() {
        let (t, r) = (truth.row(i), rec.row(i));
        w.write_record([
            i.to_string(),
            t[0].to_string(),
            t[1].to_string(),
            r[0].to_string(),
            r[1].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

/// `node_id,cluster_0,...,cluster_{k-1}`.
pub fn write_assignment(path: &Path, c: &AssignmentMatrix) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["node_id".to_string()];
    header.extend((0..c.num_clusters()).map(|j| format!("cluster_{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..c.num_nodes() {
        let mut row = vec![i.to_string()];
        row.extend(c.matrix().row(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

/// `node_id,x,y` and `src,dst` for a synthetic graph.
pub fn write_graph(nodes: &Path, edges: &Path, g: &Graph) -> io::Result<()> {
    let coords = g.coords.as_deref().unwrap_or(&[]);
    let mut w = csv::Writer::from_path(nodes).map_err(csv_err)?;
    w.write_record(["node_id", "x", "y"]).map_err(csv_err)?;
    for (i, c) in coords.iter().enumerate() {
        w.write_record([i.to_string(), c[0].to_string(), c[1].to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(edges).map_err(csv_err)?;
    w.write_record(["src", "dst"]).map_err(csv_err)?;
    for &(u, v) in g.edges() {
        w.write_record([u.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    w.flush()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRecord {
    pub n: usize,
    pub m: usize,
    pub method: String,
    pub peak_scalars: usize,
    pub wall_ms: f64,
}

/// `n,m,method,peak_scalars,wall_ms`.
pub fn write_bench(path: &Path, records: &[BenchRecord]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Original graph in gray, reconstructed positions colored by their
/// strongest cluster (or a single color without an assignment).
pub fn overlay_svg(g: &Graph, truth: &Tensor, rec: &Tensor, assignment: Option<&AssignmentMatrix>) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 24.0;
    let points = (0..truth.rows()).flat_map(|i| [truth.row(i), rec.row(i)]);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
    let at = |p: &[f64]| {
        (
            PAD + (p[0] - lo[0]) / span * (SIZE - 2.0 * PAD),
            SIZE - PAD - (p[1] - lo[1]) / span * (SIZE - 2.0 * PAD),
        )
    };
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for &(u, v) in g.edges() {
        let ((x1, y1), (x2, y2)) = (at(truth.row(u)), at(truth.row(v)));
        s += &format!(
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"#c8c8c8\" stroke-width=\"1\"/>\n"
        );
    }
    for i in 0..truth.rows() {
        let (x, y) = at(truth.row(i));
        s += &format!("<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"5\" fill=\"#a0a0a0\"/>\n");
    }
    for i in 0..rec.rows() {
        let (x, y) = at(rec.row(i));
        let color = assignment.map_or(PALETTE[0], |c| {
            let row = c.matrix().row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            PALETTE[best % PALETTE.len()]
        });
        s += &format!("<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\"/>\n");
    }
    s += "</svg>\n";
    s
}

#[derive(Serialize)]
struct Provenance<'a> {
    command: &'a str,
    seed: u64,
    git_describe: String,
    config: serde_json::Map<String, serde_json::Value>,
}

/// `git describe --always --dirty`, or `"unknown"` outside a work tree.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Writes `run.json` and `config.txt` into `dir`.
pub fn write_provenance(dir: &Path, cfg: &RunConfig) -> io::Result<()> {
    let config = cfg
        .entries()
        .into_iter()
        .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
        .collect();
    let record = Provenance {
        command: cfg.task.name(),
        seed: cfg.seed,
        git_describe: git_describe(),
        config,
    };
    let json = serde_json::to_string_pretty(&record).map_err(io::Error::other)?;
    fs::write(dir.join("run.json"), json + "\n")?;
    fs::write(dir.join("config.txt"), cfg.to_text())
}
