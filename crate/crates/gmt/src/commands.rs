//! The four subcommands, callable without the command line.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use gmt_core::bench::{BenchMethod, BenchModel, BenchSettings};
use gmt_core::generate::{erdos_renyi, grid, ring};
use gmt_core::graph::{make_batch, Dataset, Graph};
use gmt_core::split::stratified_kfold;
use gmt_core::tasks::{
    evaluate_accuracy, reconstruct_adjacency_error, train_classifier, train_reconstruction, ClassifierConfig,
    ClassifierModel, ReconConfig, ReconErrors, ReconModel,
};

use crate::config::{ConfigError, Generator, RunConfig};
use crate::report::{self, BenchRecord};
use crate::tu::{load_tu, LoadError};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("usage: {0}")]
    Config(#[from] ConfigError),
    #[error("load: {0}")]
    Load(#[from] LoadError),
    #[error(transparent)]
    Core(#[from] gmt_core::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Runs `f` over `0..count` on up to `jobs` threads; results keep their index.
fn run_jobs<T: Send, F>(count: usize, jobs: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync,
{
    if jobs <= 1 || count <= 1 {
        return (0..count).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(count) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let r = f(i);
                results.lock().expect("no job panicked")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("no job panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn prepare(cfg: &RunConfig) -> Result<(), RunError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    report::write_provenance(&cfg.out, cfg)?;
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub seed: u64,
    pub fold: usize,
    pub test_acc: f64,
    pub epochs: usize,
    pub best_val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifySummary {
    pub pool: String,
    pub folds: Vec<FoldResult>,
    pub mean_acc: f64,
    /// Spread of the per-seed mean accuracies (zero for a single seed).
    pub std_over_seeds: f64,
    pub std_over_folds: f64,
}

pub fn classifier_config(cfg: &RunConfig) -> Result<ClassifierConfig, RunError> {
    Ok(ClassifierConfig {
        readout: cfg.pool.parse()?,
        hidden: cfg.hidden,
        heads: cfg.heads,
        ratio: cfg.ratio,
        dropout: cfg.dropout,
        attention_dropout: cfg.attention_dropout,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        batch_size: cfg.batch_size,
        max_epochs: cfg.max_epochs,
        patience: cfg.patience,
        seed: cfg.seed,
        ..ClassifierConfig::default()
    })
}

/// `seeds` repetitions of stratified `folds`-fold cross-validation on an
/// already loaded dataset. Per-fold metric histories go to `cfg.out`.
pub fn cross_validate(cfg: &RunConfig, dataset: &Dataset) -> Result<ClassifySummary, RunError> {
    let base = classifier_config(cfg)?;
    let mut splits = Vec::new();
    for s in 0..cfg.seeds {
        let seed = cfg.seed + s as u64;
        for (f, split) in stratified_kfold(dataset, cfg.folds, seed)?.into_iter().enumerate() {
            splits.push((seed, f, split));
        }
    }
    let results = run_jobs(splits.len(), cfg.jobs, |i| -> Result<FoldResult, RunError> {
        let (seed, fold, split) = &splits[i];
        let mut c = base.clone();
        c.seed = seed.wrapping_mul(1000).wrapping_add(*fold as u64);
        let max_nodes = dataset.max_nodes(&split.train);
        let mut model = ClassifierModel::new(&c, dataset.num_features(), dataset.num_classes, max_nodes)?;
        let state = train_classifier(&mut model, dataset, split, &c)?;
        let test: Vec<&Graph> = split.test.iter().map(|&j| &dataset.graphs[j]).collect();
        let test_acc = evaluate_accuracy(&model, &test)?;
        report::write_metrics(
            &cfg.out.join(format!("metrics_seed{seed}_fold{fold}.csv")),
            &state.history,
        )?;
        Ok(FoldResult {
            seed: *seed,
            fold: *fold,
            test_acc,
            epochs: state.epoch,
            best_val_loss: state.best_loss,
        })
    });
    let folds = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let accs: Vec<f64> = folds.iter().map(|f| f.test_acc).collect();
    let (mean_acc, std_over_folds) = mean_std(&accs);
    let per_seed: Vec<f64> = accs.chunks(cfg.folds).map(|c| mean_std(c).0).collect();
    let std_over_seeds = mean_std(&per_seed).1;
    let summary = ClassifySummary {
        pool: cfg.pool.clone(),
        folds,
        mean_acc,
        std_over_seeds,
        std_over_folds,
    };
    write_classify(&cfg.out, &summary)?;
    Ok(summary)
}

fn write_classify(dir: &Path, s: &ClassifySummary) -> io::Result<()> {
    let err = io::Error::other;
    let mut w = csv::Writer::from_path(dir.join("folds.csv")).map_err(err)?;
    w.write_record(["seed", "fold", "test_acc", "epochs", "best_val_loss"]).map_err(err)?;
    for f in &s.folds {
        w.write_record([
            f.seed.to_string(),
            f.fold.to_string(),
            f.test_acc.to_string(),
            f.epochs.to_string(),
            f.best_val_loss.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv")).map_err(err)?;
    w.write_record(["pool", "runs", "mean_acc", "std_over_seeds", "std_over_folds"])
        .map_err(err)?;
    w.write_record([
        s.pool.clone(),
        s.folds.len().to_string(),
        s.mean_acc.to_string(),
        s.std_over_seeds.to_string(),
        s.std_over_folds.to_string(),
    ])
    .map_err(err)?;
    w.flush()
}

/// Loads `cfg.dataset` from `cfg.data_dir/<dataset>/` and cross-validates.
pub fn classify(cfg: &RunConfig) -> Result<ClassifySummary, RunError> {
    prepare(cfg)?;
    let dataset = load_tu(&cfg.data_dir.join(&cfg.dataset), &cfg.dataset)?;
    cross_validate(cfg, &dataset)
}

#[derive(Clone, Debug)]
pub struct ReconSummary {
    pub errors: ReconErrors,
    pub epochs: usize,
    pub k: usize,
}

pub fn recon_config(cfg: &RunConfig) -> Result<ReconConfig, RunError> {
    Ok(ReconConfig {
        pool: cfg.pool.parse()?,
        objective: cfg.objective.parse()?,
        hidden: cfg.hidden,
        ratio: cfg.ratio,
        heads: cfg.heads,
        lr: cfg.lr,
        max_epochs: cfg.max_epochs,
        patience: cfg.patience,
        seed: cfg.seed,
        ..ReconConfig::default()
    })
}

pub fn synthetic_graph(cfg: &RunConfig) -> Result<Graph, RunError> {
    Ok(match cfg.graph {
        Generator::Ring => ring(cfg.n)?,
        Generator::Grid => grid(cfg.rows, cfg.cols)?,
    })
}

/// Trains a reconstruction model on the configured synthetic graph and
/// writes coordinates, assignment, metrics and the overlay.
pub fn reconstruct(cfg: &RunConfig) -> Result<ReconSummary, RunError> {
    prepare(cfg)?;
    let g = synthetic_graph(cfg)?;
    let rc = recon_config(cfg)?;
    let mut model = ReconModel::new(&rc, g.num_nodes(), g.num_features())?;
    let run = train_reconstruction(&mut model, &g, &rc)?;
    let rec = model.reconstruct(&g)?;
    let out = &cfg.out;
    report::write_graph(&out.join("nodes.csv"), &out.join("edges.csv"), &g)?;
    report::write_reconstruction(&out.join("reconstruction.csv"), g.node_features(), &rec)?;
    report::write_metrics(&out.join("metrics.csv"), &run.state.history)?;
    let assignment = match model.assignment(&g) {
        Ok(c) => {
            report::write_assignment(&out.join("assignment.csv"), &c)?;
            Some(c)
        }
        Err(gmt_core::Error::UnsupportedMetric(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let svg = report::overlay_svg(&g, g.node_features(), &rec, assignment.as_ref());
    fs::write(out.join("overlay.svg"), svg)?;
    let errors = match reconstruct_adjacency_error(&model, &g) {
        Ok(e) => e,
        Err(gmt_core::Error::UnsupportedMetric(_)) => run.errors,
        Err(e) => return Err(e.into()),
    };
    let (a_mse, a_norm) = errors.a_or_nan();
    fs::write(
        out.join("errors.csv"),
        format!(
            "x_mse,x_norm,a_mse,a_norm\n{},{},{},{}\n",
            errors.x_mse, errors.x_norm, a_mse, a_norm
        ),
    )?;
    Ok(ReconSummary {
        errors,
        epochs: run.state.epoch,
        k: model.k,
    })
}

fn bench_settings(cfg: &RunConfig) -> BenchSettings {
    BenchSettings {
        dim: cfg.hidden,
        k: cfg.k,
        heads: cfg.heads,
        seed: cfg.seed,
    }
}

fn methods(cfg: &RunConfig) -> Result<Vec<BenchMethod>, RunError> {
    Ok(cfg.methods.iter().map(|m| m.parse()).collect::<Result<_, _>>()?)
}

/// Peak scalars of one pooling forward on an Erdos-Renyi graph with
/// `m = 2n`, for every `n` of the sweep and every method.
pub fn bench_memory(cfg: &RunConfig) -> Result<Vec<BenchRecord>, RunError> {
    prepare(cfg)?;
    let methods = methods(cfg)?;
    let points: Vec<(usize, BenchMethod)> = cfg
        .sweep
        .iter()
        .flat_map(|&n| methods.iter().map(move |&m| (n, m)))
        .collect();
    let settings = bench_settings(cfg);
    let records = run_jobs(points.len(), cfg.jobs, |i| -> Result<BenchRecord, RunError> {
        let (n, method) = points[i];
        let mut rng = gmt_core::rng_from_seed(cfg.seed ^ n as u64);
        let g = erdos_renyi(n, 2 * n, &mut rng)?;
        let batch = make_batch(&[&g])?;
        let model = BenchModel::new(method, 1, &settings)?;
        let start = Instant::now();
        let mem = model.run(&batch)?;
        Ok(BenchRecord {
            n,
            m: g.edges().len(),
            method: method.name().into(),
            peak_scalars: mem.peak_scalars,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    });
    let records = records.into_iter().collect::<Result<Vec<_>, _>>()?;
    report::write_bench(&cfg.out.join("bench_memory.csv"), &records)?;
    Ok(records)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Forward wall time on a batch of `batch_graphs` Erdos-Renyi graphs with
/// `m = n^2 / 10`: one discarded warmup, then the median of `repeats` runs.
/// Sweep points run one after another so timings do not compete.
pub fn bench_time(cfg: &RunConfig) -> Result<Vec<BenchRecord>, RunError> {
    prepare(cfg)?;
    let methods = methods(cfg)?;
    let settings = bench_settings(cfg);
    let mut records = Vec::new();
    for &n in &cfg.sweep {
        let m = (n * n / 10).min(n * n.saturating_sub(1) / 2);
        let mut rng = gmt_core::rng_from_seed(cfg.seed ^ n as u64);
        let graphs = (0..cfg.batch_graphs)
            .map(|_| erdos_renyi(n, m, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let batch = make_batch(&graphs)?;
        for &method in &methods {
            let model = BenchModel::new(method, 1, &settings)?;
            let warm = model.run(&batch)?;
            let mut times = Vec::with_capacity(cfg.repeats);
            for _ in 0..cfg.repeats {
                let start = Instant::now();
                model.run(&batch)?;
                times.push(start.elapsed().as_secs_f64() * 1e3);
            }
            records.push(BenchRecord {
                n,
                m,
                method: method.name().into(),
                peak_scalars: warm.peak_scalars,
                wall_ms: median(times),
            });
        }
    }
    report::write_bench(&cfg.out.join("bench_time.csv"), &records)?;
    Ok(records)
}
