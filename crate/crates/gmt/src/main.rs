use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gmt::commands::{self, RunError};
use gmt::config::{RunConfig, Task};

#[derive(Parser)]
#[command(name = "gmt", version, about = "Graph Multiset Transformer pooling: training and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Cross-validated graph classification on a TU dataset.
    Classify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        data_dir: Option<String>,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        folds: Option<String>,
        #[arg(long)]
        batch_size: Option<String>,
        #[arg(long)]
        weight_decay: Option<String>,
        #[arg(long)]
        dropout: Option<String>,
        #[arg(long)]
        attention_dropout: Option<String>,
    },
    /// Node-feature reconstruction of a ring or grid graph.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
        /// ring | grid
        #[arg(long)]
        graph: Option<String>,
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        rows: Option<String>,
        #[arg(long)]
        cols: Option<String>,
        /// x (node features) | a (adjacency)
        #[arg(long)]
        objective: Option<String>,
    },
    /// Peak live scalars of one pooling forward over a node-count sweep.
    BenchMemory {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        bench: Bench,
    },
    /// Forward wall time on 50-graph batches over a node-count sweep.
    BenchTime {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        bench: Bench,
        #[arg(long)]
        repeats: Option<String>,
        #[arg(long)]
        batch_graphs: Option<String>,
    },
}

#[derive(Args)]
struct Common {
    /// key = value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    jobs: Option<String>,
}

#[derive(Args)]
struct Model {
    #[arg(long)]
    pool: Option<String>,
    #[arg(long)]
    ratio: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    heads: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
}

#[derive(Args)]
struct Bench {
    /// Comma-separated node counts.
    #[arg(long)]
    sweep: Option<String>,
    /// Comma-separated methods: gmt, cluster.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    heads: Option<String>,
}

type Overrides<'a> = Vec<(&'static str, &'a Option<String>)>;

impl Common {
    fn overrides(&self) -> Overrides<'_> {
        vec![("seed", &self.seed), ("out", &self.out), ("jobs", &self.jobs)]
    }
}

impl Model {
    fn overrides(&self) -> Overrides<'_> {
        vec![
            ("pool", &self.pool),
            ("ratio", &self.ratio),
            ("hidden", &self.hidden),
            ("heads", &self.heads),
            ("lr", &self.lr),
            ("max_epochs", &self.max_epochs),
            ("patience", &self.patience),
        ]
    }
}

impl Bench {
    fn overrides(&self) -> Overrides<'_> {
        vec![
            ("sweep", &self.sweep),
            ("methods", &self.methods),
            ("k", &self.k),
            ("hidden", &self.hidden),
            ("heads", &self.heads),
        ]
    }
}

fn build(task: Task, common: &Common, flags: Overrides<'_>) -> Result<RunConfig, RunError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let cfg = RunConfig::parse(&text, Some(task))?;
            if cfg.task != task {
                return Err(RunError::Config(gmt::config::ConfigError::Invalid {
                    field: "task",
                    reason: format!("config is for {}, command is {}", cfg.task.name(), task.name()),
                }));
            }
            cfg
        }
        None => RunConfig::defaults(task),
    };
    for (key, value) in common.overrides().into_iter().chain(flags) {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), RunError> {
    match &cli.command {
        Cmd::Classify {
            common,
            model,
            dataset,
            data_dir,
            seeds,
            folds,
            batch_size,
            weight_decay,
            dropout,
            attention_dropout,
        } => {
            let mut flags = model.overrides();
            flags.extend([
                ("dataset", dataset),
                ("data_dir", data_dir),
                ("seeds", seeds),
                ("folds", folds),
                ("batch_size", batch_size),
                ("weight_decay", weight_decay),
                ("dropout", dropout),
                ("attention_dropout", attention_dropout),
            ]);
            let cfg = build(Task::Classify, common, flags)?;
            let s = commands::classify(&cfg)?;
            for f in &s.folds {
                println!("seed {} fold {}: test accuracy {:.4} ({} epochs)", f.seed, f.fold, f.test_acc, f.epochs);
            }
            println!(
                "{} {}: {:.4} +- {:.4} over seeds, +- {:.4} over folds ({} runs)",
                cfg.dataset,
                s.pool,
                s.mean_acc,
                s.std_over_seeds,
                s.std_over_folds,
                s.folds.len()
            );
        }
        Cmd::Reconstruct {
            common,
            model,
            graph,
            n,
            rows,
            cols,
            objective,
        } => {
            let mut flags = model.overrides();
            flags.extend([
                ("graph", graph),
                ("n", n),
                ("rows", rows),
                ("cols", cols),
                ("objective", objective),
            ]);
            let cfg = build(Task::Reconstruct, common, flags)?;
            let s = commands::reconstruct(&cfg)?;
            let (a_mse, a_norm) = s.errors.a_or_nan();
            println!(
                "{} {} (k = {}, {} epochs): x_error {:.3e} (norm {:.4}), a_error {:.3e} (norm {:.4})",
                cfg.graph.name(),
                cfg.pool,
                s.k,
                s.epochs,
                s.errors.x_mse,
                s.errors.x_norm,
                a_mse,
                a_norm
            );
        }
        Cmd::BenchMemory { common, bench } => {
            let cfg = build(Task::BenchMemory, common, bench.overrides())?;
            for r in commands::bench_memory(&cfg)? {
                println!("n {:>6} m {:>7} {:<8} peak {:>10} scalars", r.n, r.m, r.method, r.peak_scalars);
            }
        }
        Cmd::BenchTime {
            common,
            bench,
            repeats,
            batch_graphs,
        } => {
            let mut flags = bench.overrides();
            flags.extend([("repeats", repeats), ("batch_graphs", batch_graphs)]);
            let cfg = build(Task::BenchTime, common, flags)?;
            for r in commands::bench_time(&cfg)? {
                println!("n {:>6} m {:>8} {:<8} {:>10.2} ms", r.n, r.m, r.method, r.wall_ms);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                RunError::Config(_) => 2,
                RunError::Load(_) => 3,
                _ => 1,
            })
        }
    }
}
