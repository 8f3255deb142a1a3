//! Run configuration: a flat `key = value` file plus command-line overrides.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use gmt_core::bench::BenchMethod;
use gmt_core::tasks::{ReadoutKind, ReconObjective, ReconPoolKind};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("{field}: cannot parse {value:?}: {reason}")]
    Value { field: String, value: String, reason: String },
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classify,
    Reconstruct,
    BenchMemory,
    BenchTime,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::Reconstruct => "reconstruct",
            Task::BenchMemory => "bench-memory",
            Task::BenchTime => "bench-time",
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "classify" => Ok(Task::Classify),
            "reconstruct" => Ok(Task::Reconstruct),
            "bench-memory" => Ok(Task::BenchMemory),
            "bench-time" => Ok(Task::BenchTime),
            _ => Err(format!("unknown task {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    Ring,
    Grid,
}

impl Generator {
    pub fn name(self) -> &'static str {
        match self {
            Generator::Ring => "ring",
            Generator::Grid => "grid",
        }
    }
}

impl FromStr for Generator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ring" => Ok(Generator::Ring),
            "grid" => Ok(Generator::Grid),
            _ => Err(format!("unknown graph generator {s:?}")),
        }
    }
}

/// Everything a run depends on besides the code itself.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub dataset: String,
    pub data_dir: PathBuf,
    pub graph: Generator,
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    /// Pooling method name, interpreted per task.
    pub pool: String,
    pub objective: String,
    pub ratio: f64,
    pub hidden: usize,
    pub heads: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    pub attention_dropout: f64,
    pub seed: u64,
    pub seeds: usize,
    pub folds: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub sweep: Vec<usize>,
    pub methods: Vec<String>,
    pub k: usize,
    pub repeats: usize,
    pub batch_graphs: usize,
    pub out: PathBuf,
    pub jobs: usize,
}

impl RunConfig {
    /// Defaults of `task`: the classification and reconstruction protocols,
    /// and the desk-scale benchmark sweeps.
    pub fn defaults(task: Task) -> Self {
        let mut c = Self {
            task,
            dataset: "MUTAG".into(),
            data_dir: PathBuf::from("data"),
            graph: Generator::Ring,
            n: 64,
            rows: 8,
            cols: 8,
            pool: "gmt".into(),
            objective: "x".into(),
            ratio: 0.25,
            hidden: 128,
            heads: 4,
            lr: 5e-4,
            batch_size: 128,
            weight_decay: 1e-4,
            dropout: 0.5,
            attention_dropout: 0.5,
            seed: 0,
            seeds: 1,
            folds: 10,
            max_epochs: 500,
            patience: 50,
            sweep: vec![1000, 2000, 4000, 8000],
            methods: vec!["gmt".into(), "cluster".into()],
            k: 4,
            repeats: 5,
            batch_graphs: 50,
            out: PathBuf::from("runs").join(task.name()),
            jobs: 1,
        };
        match task {
            Task::Classify => {}
            Task::Reconstruct => {
                c.pool = "gmpool".into();
                c.hidden = 32;
                c.heads = 1;
                c.lr = 5e-3;
                c.weight_decay = 0.0;
                c.dropout = 0.0;
                c.attention_dropout = 0.0;
                c.max_epochs = 10_000;
                c.patience = 1000;
            }
            Task::BenchMemory => {
                c.hidden = 32;
                c.heads = 1;
            }
            Task::BenchTime => {
                c.hidden = 32;
                c.heads = 1;
                c.sweep = vec![250, 500, 1000];
            }
        }
        c
    }

    pub const KEYS: [&'static str; 30] = [
        "task",
        "dataset",
        "data_dir",
        "graph",
        "n",
        "rows",
        "cols",
        "pool",
        "objective",
        "ratio",
        "hidden",
        "heads",
        "lr",
        "batch_size",
        "weight_decay",
        "dropout",
        "attention_dropout",
        "seed",
        "seeds",
        "folds",
        "max_epochs",
        "patience",
        "sweep",
        "methods",
        "k",
        "repeats",
        "batch_graphs",
        "out",
        "jobs",
        "format_version",
    ];

    /// Assigns one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn p<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::Value {
                field: key.into(),
                value: value.into(),
                reason: e.to_string(),
            })
        }
        fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| p(key, s))
                .collect()
        }
        match key {
            "task" => self.task = p(key, value)?,
            "dataset" => self.dataset = value.into(),
            "data_dir" => self.data_dir = value.into(),
            "graph" => self.graph = p(key, value)?,
            "n" => self.n = p(key, value)?,
            "rows" => self.rows = p(key, value)?,
            "cols" => self.cols = p(key, value)?,
            "pool" => self.pool = value.into(),
            "objective" => self.objective = value.into(),
            "ratio" => self.ratio = p(key, value)?,
            "hidden" => self.hidden = p(key, value)?,
            "heads" => self.heads = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "weight_decay" => self.weight_decay = p(key, value)?,
            "dropout" => self.dropout = p(key, value)?,
            "attention_dropout" => self.attention_dropout = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "seeds" => self.seeds = p(key, value)?,
            "folds" => self.folds = p(key, value)?,
            "max_epochs" => self.max_epochs = p(key, value)?,
            "patience" => self.patience = p(key, value)?,
            "sweep" => self.sweep = list(key, value)?,
            "methods" => self.methods = list(key, value)?,
            "k" => self.k = p(key, value)?,
            "repeats" => self.repeats = p(key, value)?,
            "batch_graphs" => self.batch_graphs = p(key, value)?,
            "out" => self.out = value.into(),
            "jobs" => self.jobs = p(key, value)?,
            "format_version" => {}
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Parses a config file. `task` may be given in the file or by
    /// `fallback`; the task's defaults fill every key the file omits.
    pub fn parse(text: &str, fallback: Option<Task>) -> Result<Self, ConfigError> {
        let pairs = parse_pairs(text)?;
        let task = match pairs.iter().find(|(k, _)| k == "task") {
            Some((_, v)) => v.parse().map_err(|reason| ConfigError::Value {
                field: "task".into(),
                value: v.clone(),
                reason,
            })?,
            None => fallback.ok_or(ConfigError::Invalid {
                field: "task",
                reason: "missing".into(),
            })?,
        };
        let mut cfg = Self::defaults(task);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Serializes every field; [`RunConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// `(key, value)` pairs in the order of [`RunConfig::KEYS`].
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let join = |xs: &[String]| xs.join(",");
        vec![
            ("task", self.task.name().into()),
            ("dataset", self.dataset.clone()),
            ("data_dir", self.data_dir.display().to_string()),
            ("graph", self.graph.name().into()),
            ("n", self.n.to_string()),
            ("rows", self.rows.to_string()),
            ("cols", self.cols.to_string()),
            ("pool", self.pool.clone()),
            ("objective", self.objective.clone()),
            ("ratio", self.ratio.to_string()),
            ("hidden", self.hidden.to_string()),
            ("heads", self.heads.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("dropout", self.dropout.to_string()),
            ("attention_dropout", self.attention_dropout.to_string()),
            ("seed", self.seed.to_string()),
            ("seeds", self.seeds.to_string()),
            ("folds", self.folds.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            (
                "sweep",
                self.sweep.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("methods", join(&self.methods)),
            ("k", self.k.to_string()),
            ("repeats", self.repeats.to_string()),
            ("batch_graphs", self.batch_graphs.to_string()),
            ("out", self.out.display().to_string()),
            ("jobs", self.jobs.to_string()),
        ]
    }

    /// Checks ranges and names; errors name the offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &'static str, reason: String| Err(ConfigError::Invalid { field, reason });
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return bad("ratio", format!("{} is not in (0, 1]", self.ratio));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("{} must be positive", self.lr));
        }
        for (field, v) in [("dropout", self.dropout), ("attention_dropout", self.attention_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return bad(field, format!("{v} is not in [0, 1)"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", format!("{} must be non-negative", self.weight_decay));
        }
        for (field, v) in [
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("batch_size", self.batch_size),
            ("seeds", self.seeds),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("k", self.k),
            ("repeats", self.repeats),
            ("batch_graphs", self.batch_graphs),
            ("jobs", self.jobs),
        ] {
            if v == 0 {
                return bad(field, "must be positive".into());
            }
        }
        match self.task {
            Task::Classify => {
                if self.folds < 2 {
                    return bad("folds", format!("need at least 2, got {}", self.folds));
                }
                if let Err(e) = self.pool.parse::<ReadoutKind>() {
                    return bad("pool", e.to_string());
                }
            }
            Task::Reconstruct => {
                if let Err(e) = self.pool.parse::<ReconPoolKind>() {
                    return bad("pool", e.to_string());
                }
                if let Err(e) = self.objective.parse::<ReconObjective>() {
                    return bad("objective", e.to_string());
                }
                let too_small = match self.graph {
                    Generator::Ring => self.n < 3,
                    Generator::Grid => self.rows < 2 || self.cols < 2,
                };
                if too_small {
                    return bad("n", "graph too small for the generator".into());
                }
            }
            Task::BenchMemory | Task::BenchTime => {
                if self.sweep.is_empty() {
                    return bad("sweep", "empty".into());
                }
                if self.sweep.contains(&0) {
                    return bad("sweep", "node counts must be positive".into());
                }
                if self.methods.is_empty() {
                    return bad("methods", "empty".into());
                }
                for m in &self.methods {
                    if let Err(e) = m.parse::<BenchMethod>() {
                        return bad("methods", e.to_string());
                    }
                }
            }
        }
        Ok(())
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.into(),
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for t in [Task::Classify, Task::Reconstruct, Task::BenchMemory, Task::BenchTime] {
            RunConfig::defaults(t).validate().unwrap();
        }
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::defaults(Task::BenchTime);
        c.sweep = vec![3, 5];
        c.lr = 0.1 + 0.2;
        let back = RunConfig::parse(&c.to_text(), None).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_ratio_names_field() {
        let mut c = RunConfig::defaults(Task::Classify);
        c.set("ratio", "1.5").unwrap();
        let err = c.validate().unwrap_err();
        assert!(err.to_string().starts_with("ratio:"), "{err}");
    }

    #[test]
    fn unknown_key_and_syntax() {
        assert_eq!(
            RunConfig::parse("task = classify\nfoo = 1", None),
            Err(ConfigError::UnknownKey("foo".into()))
        );
        assert!(matches!(
            RunConfig::parse("task classify", None),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("lr = 0.1", None),
            Err(ConfigError::Invalid { field: "task", .. })
        ));
    }

    #[test]
    fn comments_and_fallback_task() {
        let c = RunConfig::parse("# protocol\nlr = 0.01 # faster\n", Some(Task::Reconstruct)).unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.hidden, 32);
    }
}
