//! Flat `key = value` run configuration.
//!
//! A config file holds one `key = value` per line; `#` starts a comment.
//! Command-line `--key value` pairs are applied after the file, so flags win.
//! `--synthetic` may be given without a value.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::network::Activation;
use crate::optimizer::{NgConfig, OptimizerKind, ScheduleKind, DEFAULT_EPOCHS, DEFAULT_LR};
use crate::pretrain::PretrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitKind {
    Random,
    #[default]
    Rbm,
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::Random => "random",
            InitKind::Rbm => "rbm",
        })
    }
}

impl FromStr for InitKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(InitKind::Random),
            "rbm" => Ok(InitKind::Rbm),
            other => Err(format!("expected `random` or `rbm`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub standardize: bool,
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub optimizer: OptimizerKind,
    pub init: InitKind,
    pub lr_init: f64,
    pub lr_schedule: ScheduleKind,
    /// Multiply `lr_init` by the worker count.
    pub scale_lr: bool,
    pub epochs: usize,
    pub minibatch: usize,
    pub workers: usize,
    pub avg_frequency: usize,
    pub cv_fraction: f64,
    pub seed: u64,
    pub ng: NgConfig,
    pub pretrain: PretrainConfig,
    pub metrics_out: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
}

pub const DEFAULT_SYNTHETIC: SyntheticSpec = SyntheticSpec {
    classes: 10,
    dim: 64,
    per_class: 2000,
    separation: 3.0,
    seed: 1,
};

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSource::Synthetic(DEFAULT_SYNTHETIC),
            standardize: true,
            hidden_layers: 2,
            hidden_dim: 128,
            activation: Activation::Sigmoid,
            optimizer: OptimizerKind::NaturalGradient,
            init: InitKind::Rbm,
            lr_init: DEFAULT_LR,
            lr_schedule: ScheduleKind::Exponential,
            scale_lr: true,
            epochs: DEFAULT_EPOCHS,
            minibatch: 128,
            workers: 1,
            avg_frequency: 10,
            cv_fraction: 0.10,
            seed: 0,
            ng: NgConfig::default(),
            pretrain: PretrainConfig::default(),
            metrics_out: None,
            checkpoint_out: None,
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "data_csv",
    "synthetic",
    "synthetic_classes",
    "synthetic_dim",
    "synthetic_per_class",
    "synthetic_separation",
    "synthetic_seed",
    "standardize",
    "hidden_layers",
    "hidden_dim",
    "activation",
    "optimizer",
    "init",
    "lr_init",
    "lr_schedule",
    "scale_lr",
    "epochs",
    "minibatch",
    "workers",
    "avg_frequency",
    "cv_fraction",
    "seed",
    "ng_decay",
    "ng_smoothing",
    "pretrain_epochs",
    "pretrain_minibatch",
    "pretrain_lr_gaussian",
    "pretrain_lr_bernoulli",
    "metrics_out",
    "checkpoint_out",
];

/// One raw assignment and where it came from (`line` is `None` for flags).
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub key: String,
    pub value: String,
    pub line: Option<usize>,
}

pub fn parse_assignments(text: &str) -> Result<Vec<Assignment>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(line, Some(i + 1), "expected `key = value`"));
        };
        out.push(Assignment {
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            line: Some(i + 1),
        });
    }
    Ok(out)
}

/// `--key value` pairs. A bare `--synthetic` means `synthetic = true`.
pub fn parse_flag_overrides<S: AsRef<str>>(args: &[S]) -> Result<Vec<Assignment>> {
    let mut out = Vec::new();
    let mut it = args.iter().map(AsRef::as_ref).peekable();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(Error::config(arg, None, "expected a `--key` flag"));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let key = flag.replace('-', "_");
                let takes_bare = key == "synthetic";
                match it.peek() {
                    Some(v) if !(takes_bare && v.starts_with("--")) => {
                        (key, it.next().unwrap().to_string())
                    }
                    _ if takes_bare => (key, "true".to_string()),
                    _ => return Err(Error::config(key, None, "flag is missing its value")),
                }
            }
        };
        out.push(Assignment {
            key: key.replace('-', "_"),
            value,
            line: None,
        });
    }
    Ok(out)
}

fn parse_value<T: FromStr>(a: &Assignment, what: &str) -> Result<T> {
    a.value
        .parse()
        .map_err(|_| Error::config(&a.key, a.line, format!("`{}` is not {what}", a.value)))
}

fn parse_enum<T: FromStr<Err = String>>(a: &Assignment) -> Result<T> {
    a.value
        .parse()
        .map_err(|msg| Error::config(&a.key, a.line, msg))
}

fn parse_bool(a: &Assignment) -> Result<bool> {
    match a.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        v => Err(Error::config(
            &a.key,
            a.line,
            format!("`{v}` is not a boolean"),
        )),
    }
}

fn parse_path(a: &Assignment) -> Result<Option<PathBuf>> {
    Ok(match a.value.as_str() {
        "" | "none" => None,
        v => Some(PathBuf::from(v)),
    })
}

/// Synthetic and CSV settings are collected separately and resolved last.
#[derive(Default)]
struct DataKeys {
    csv: Option<(PathBuf, Option<usize>)>,
    synthetic: Option<(bool, Option<usize>)>,
    spec: Option<SyntheticSpec>,
}

impl RunConfig {
    /// Applies a single assignment. Data-source keys are only meaningful via
    /// [`resolve`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let a = Assignment {
            key: key.to_string(),
            value: value.to_string(),
            line: None,
        };
        let mut data = self.current_data_keys();
        self.apply(&a, &mut data)?;
        self.data = data.resolve()?;
        self.validate()
    }

    fn current_data_keys(&self) -> DataKeys {
        match &self.data {
            DataSource::Csv(p) => DataKeys {
                csv: Some((p.clone(), None)),
                synthetic: None,
                spec: None,
            },
            DataSource::Synthetic(s) => DataKeys {
                csv: None,
                synthetic: Some((true, None)),
                spec: Some(*s),
            },
        }
    }

    fn apply(&mut self, a: &Assignment, data: &mut DataKeys) -> Result<()> {
        let spec = data.spec.unwrap_or(DEFAULT_SYNTHETIC);
        match a.key.as_str() {
            "data_csv" => {
                data.csv = parse_path(a)?.map(|p| (p, a.line));
                if data.csv.is_some() {
                    data.synthetic = None;
                }
            }
            "synthetic" => {
                let on = parse_bool(a)?;
                data.synthetic = Some((on, a.line));
                if on {
                    data.csv = None;
                }
            }
            "synthetic_classes" => {
                data.spec = Some(SyntheticSpec {
                    classes: parse_value(a, "a count")?,
                    ..spec
                })
            }
            "synthetic_dim" => {
                data.spec = Some(SyntheticSpec {
                    dim: parse_value(a, "a count")?,
                    ..spec
                })
            }
            "synthetic_per_class" => {
                data.spec = Some(SyntheticSpec {
                    per_class: parse_value(a, "a count")?,
                    ..spec
                })
            }
            "synthetic_separation" => {
                data.spec = Some(SyntheticSpec {
                    separation: parse_value(a, "a number")?,
                    ..spec
                })
            }
            "synthetic_seed" => {
                data.spec = Some(SyntheticSpec {
                    seed: parse_value(a, "an integer seed")?,
                    ..spec
                })
            }
            "standardize" => self.standardize = parse_bool(a)?,
            "hidden_layers" => self.hidden_layers = parse_value(a, "a count")?,
            "hidden_dim" => self.hidden_dim = parse_value(a, "a count")?,
            "activation" => self.activation = parse_enum(a)?,
            "optimizer" => self.optimizer = parse_enum(a)?,
            "init" => self.init = parse_enum(a)?,
            "lr_init" => self.lr_init = parse_value(a, "a number")?,
            "lr_schedule" => self.lr_schedule = parse_enum(a)?,
            "scale_lr" => self.scale_lr = parse_bool(a)?,
            "epochs" => self.epochs = parse_value(a, "a count")?,
            "minibatch" => self.minibatch = parse_value(a, "a count")?,
            "workers" => self.workers = parse_value(a, "a count")?,
            "avg_frequency" => self.avg_frequency = parse_value(a, "a count")?,
            "cv_fraction" => self.cv_fraction = parse_value(a, "a number")?,
            "seed" => self.seed = parse_value(a, "an integer seed")?,
            "ng_decay" => self.ng.decay = parse_value(a, "a number")?,
            "ng_smoothing" => self.ng.smoothing = parse_value(a, "a number")?,
            "pretrain_epochs" => self.pretrain.epochs = parse_value(a, "a count")?,
            "pretrain_minibatch" => self.pretrain.batch_size = parse_value(a, "a count")?,
            "pretrain_lr_gaussian" => self.pretrain.lr_gaussian = parse_value(a, "a number")?,
            "pretrain_lr_bernoulli" => self.pretrain.lr_bernoulli = parse_value(a, "a number")?,
            "metrics_out" => self.metrics_out = parse_path(a)?,
            "checkpoint_out" => self.checkpoint_out = parse_path(a)?,
            other => return Err(Error::config(other, a.line, "unknown key")),
        }
        Ok(())
    }

    /// Cross-key checks; each error names the offending key.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_dim", self.hidden_dim),
            ("minibatch", self.minibatch),
            ("workers", self.workers),
            ("avg_frequency", self.avg_frequency),
            ("pretrain_minibatch", self.pretrain.batch_size),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, None, "must be at least 1"));
            }
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return Err(Error::config(
                "lr_init",
                None,
                "must be positive and finite",
            ));
        }
        if !(self.cv_fraction > 0.0 && self.cv_fraction < 1.0) {
            return Err(Error::config(
                "cv_fraction",
                None,
                "must lie strictly between 0 and 1",
            ));
        }
        if !(self.ng.decay > 0.0 && self.ng.decay < 1.0) {
            return Err(Error::config(
                "ng_decay",
                None,
                "must lie strictly between 0 and 1",
            ));
        }
        if !(self.ng.smoothing > 0.0 && self.ng.smoothing.is_finite()) {
            return Err(Error::config("ng_smoothing", None, "must be positive"));
        }
        for (key, v) in [
            ("pretrain_lr_gaussian", self.pretrain.lr_gaussian),
            ("pretrain_lr_bernoulli", self.pretrain.lr_bernoulli),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, None, "must be non-negative"));
            }
        }
        if self.init == InitKind::Rbm {
            if self.activation != Activation::Sigmoid {
                return Err(Error::config(
                    "init",
                    None,
                    "rbm initialisation produces sigmoid units; use activation = sigmoid",
                ));
            }
            if self.hidden_layers == 0 {
                return Err(Error::config(
                    "init",
                    None,
                    "rbm initialisation needs hidden layers",
                ));
            }
        }
        if let DataSource::Synthetic(s) = &self.data {
            if s.classes < 2 || s.dim == 0 || s.per_class == 0 {
                return Err(Error::config(
                    "synthetic_classes",
                    None,
                    "synthetic task needs at least 2 classes and positive dim and per_class",
                ));
            }
            if !(s.separation >= 0.0 && s.separation.is_finite()) {
                return Err(Error::config(
                    "synthetic_separation",
                    None,
                    "must be non-negative",
                ));
            }
        }
        Ok(())
    }

    /// Learning rate handed to each worker.
    pub fn effective_lr(&self) -> f64 {
        if self.scale_lr {
            crate::optimizer::scale_lr_for_workers(self.lr_init, self.workers)
        } else {
            self.lr_init
        }
    }

    /// The fully resolved configuration in the file format; parsing it back
    /// yields an equal config.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or("none".to_string(), |p| p.display().to_string())
        };
        match &self.data {
            DataSource::Csv(p) => {
                let _ = writeln!(out, "data_csv = {}", p.display());
            }
            DataSource::Synthetic(s) => {
                let _ = writeln!(out, "synthetic = true");
                let _ = writeln!(out, "synthetic_classes = {}", s.classes);
                let _ = writeln!(out, "synthetic_dim = {}", s.dim);
                let _ = writeln!(out, "synthetic_per_class = {}", s.per_class);
                let _ = writeln!(out, "synthetic_separation = {:?}", s.separation);
                let _ = writeln!(out, "synthetic_seed = {}", s.seed);
            }
        }
        let rows: [(&str, String); 23] = [
            ("standardize", self.standardize.to_string()),
            ("hidden_layers", self.hidden_layers.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("activation", self.activation.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("init", self.init.to_string()),
            ("lr_init", format!("{:?}", self.lr_init)),
            ("lr_schedule", self.lr_schedule.to_string()),
            ("scale_lr", self.scale_lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("minibatch", self.minibatch.to_string()),
            ("workers", self.workers.to_string()),
            ("avg_frequency", self.avg_frequency.to_string()),
            ("cv_fraction", format!("{:?}", self.cv_fraction)),
            ("seed", self.seed.to_string()),
            ("ng_decay", format!("{:?}", self.ng.decay)),
            ("ng_smoothing", format!("{:?}", self.ng.smoothing)),
            ("pretrain_epochs", self.pretrain.epochs.to_string()),
            ("pretrain_minibatch", self.pretrain.batch_size.to_string()),
            (
                "pretrain_lr_gaussian",
                format!("{:?}", self.pretrain.lr_gaussian),
            ),
            (
                "pretrain_lr_bernoulli",
                format!("{:?}", self.pretrain.lr_bernoulli),
            ),
            ("metrics_out", path(&self.metrics_out)),
            ("checkpoint_out", path(&self.checkpoint_out)),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

impl DataKeys {
    fn resolve(self) -> Result<DataSource> {
        let spec = self.spec;
        match (self.csv, self.synthetic) {
            (Some((path, _)), _) => Ok(DataSource::Csv(path)),
            (None, Some((false, line))) => Err(Error::config(
                "synthetic",
                line,
                "synthetic data disabled and no `data_csv` given",
            )),
            // Any synthetic_* key selects synthetic data on its own.
            (None, Some((true, _))) => Ok(DataSource::Synthetic(spec.unwrap_or(DEFAULT_SYNTHETIC))),
            (None, None) => match spec {
                Some(s) => Ok(DataSource::Synthetic(s)),
                None => Err(Error::config(
                    "data_csv",
                    None,
                    "no data source: set `data_csv = <path>` or `synthetic = true`",
                )),
            },
        }
    }
}

/// Builds a validated config from assignments applied in order.
pub fn resolve(assignments: &[Assignment]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut data = DataKeys::default();
    for a in assignments {
        cfg.apply(a, &mut data)?;
    }
    cfg.data = data.resolve()?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_str<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<RunConfig> {
    let mut assignments = parse_assignments(text)?;
    assignments.extend(parse_flag_overrides(overrides)?);
    resolve(&assignments)
}

/// Reads `path` (if any) and applies `overrides` on top.
pub fn parse_config<S: AsRef<str>>(path: Option<&Path>, overrides: &[S]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    parse_config_str(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    const NO_FLAGS: &[&str] = &[];

    #[test]
    fn empty_file_plus_synthetic_flag_is_all_defaults() {
        let cfg = parse_config_str("", &["--synthetic"]).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn flag_beats_file() {
        let cfg =
            parse_config_str("synthetic = true\nworkers = 16\n", &["--workers", "8"]).unwrap();
        assert_eq!(cfg.workers, 8);
        let cfg = parse_config_str("synthetic = true\nworkers = 16\n", NO_FLAGS).unwrap();
        assert_eq!(cfg.workers, 16);
    }

    #[test]
    fn type_error_names_key_and_line() {
        let err =
            parse_config_str("synthetic = true\n\navg_frequency = ten\n", NO_FLAGS).unwrap_err();
        match &err {
            Error::Config { key, line, .. } => {
                assert_eq!(key, "avg_frequency");
                assert_eq!(*line, Some(3));
            }
            e => panic!("{e:?}"),
        }
        assert!(err.to_string().contains("avg_frequency"));
    }

    #[test]
    fn unknown_key_and_missing_source() {
        match parse_config_str("synthetic = true\nlearning_rate = 1\n", NO_FLAGS).unwrap_err() {
            Error::Config { key, line, .. } => {
                assert_eq!((key.as_str(), line), ("learning_rate", Some(2)))
            }
            e => panic!("{e:?}"),
        }
        match parse_config_str("epochs = 3\n", NO_FLAGS).unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "data_csv"),
            e => panic!("{e:?}"),
        }
        assert!(parse_config_str("synthetic = true\nnot an assignment\n", NO_FLAGS).is_err());
    }

    #[test]
    fn comments_and_whitespace() {
        let cfg = parse_config_str(
            "# desk run\n  data_csv =  frames.csv  # trailing\n\nlr_schedule=newbob\n",
            NO_FLAGS,
        )
        .unwrap();
        assert_eq!(cfg.data, DataSource::Csv("frames.csv".into()));
        assert_eq!(cfg.lr_schedule, ScheduleKind::Newbob);
    }

    #[test]
    fn enum_and_bool_errors() {
        for (text, key) in [
            ("optimizer = adam", "optimizer"),
            ("init = xavier", "init"),
            ("scale_lr = maybe", "scale_lr"),
            ("workers = 0", "workers"),
            ("cv_fraction = 1.5", "cv_fraction"),
        ] {
            match parse_config_str(&format!("synthetic = true\n{text}\n"), NO_FLAGS).unwrap_err() {
                Error::Config { key: k, .. } => assert_eq!(k, key, "{text}"),
                e => panic!("{text}: {e:?}"),
            }
        }
    }

    #[test]
    fn rbm_requires_sigmoid() {
        assert!(parse_config_str("synthetic = true\nactivation = tanh\n", NO_FLAGS).is_err());
        let cfg = parse_config_str(
            "synthetic = true\nactivation = tanh\ninit = random\n",
            NO_FLAGS,
        )
        .unwrap();
        assert_eq!(cfg.activation, Activation::Tanh);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse_config_str(
            "synthetic = true\nsynthetic_separation = 2.5\nworkers = 8\nlr_init = 0.1\nmetrics_out = m.csv\n",
            NO_FLAGS,
        )
        .unwrap();
        let text = cfg.to_config_text();
        assert_eq!(parse_config_str(&text, NO_FLAGS).unwrap(), cfg);
        for key in KEYS.iter().filter(|k| **k != "data_csv") {
            assert!(text.contains(&format!("{key} = ")), "{key}");
        }
    }

    #[test]
    fn set_rewrites_one_key() {
        let mut cfg = RunConfig::default();
        cfg.set("optimizer", "sgd").unwrap();
        assert_eq!(cfg.optimizer, OptimizerKind::Sgd);
        cfg.set("synthetic_per_class", "50").unwrap();
        assert!(matches!(cfg.data, DataSource::Synthetic(s) if s.per_class == 50));
        assert!(cfg.set("avg_frequency", "often").is_err());
    }

    #[test]
    fn flag_forms() {
        let a =
            parse_flag_overrides(&["--synthetic", "--avg-frequency", "20", "--seed=4"]).unwrap();
        let pairs: Vec<_> = a
            .iter()
            .map(|a| (a.key.as_str(), a.value.as_str()))
            .collect();
        assert_eq!(
            pairs,
            vec![
                ("synthetic", "true"),
                ("avg_frequency", "20"),
                ("seed", "4")
            ]
        );
        assert!(parse_flag_overrides(&["--epochs"]).is_err());
        assert!(parse_flag_overrides(&["epochs", "3"]).is_err());
    }

    #[test]
    fn effective_lr_scales_with_workers() {
        let mut cfg = RunConfig {
            workers: 16,
            ..RunConfig::default()
        };
        assert!((cfg.effective_lr() - 5.12).abs() < 1e-12);
        cfg.scale_lr = false;
        assert_eq!(cfg.effective_lr(), 0.32);
    }
}
