//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key may appear
//! at most once; unknown keys are rejected. Lists are comma-separated.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ortho_shot::augment::{parse_ops, parse_task_ops, AugPolicy, MaxUpGranularity};
use ortho_shot::episodes::{EpisodeSpec, PoolLimits, PoolMode};
use ortho_shot::learner::{parse_widths, LossConfig, TrainConfig};
use ortho_shot::ortho::OrthoMode;
use ortho_shot::verify::Fault;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub out_dir: PathBuf,

    /// Manifest to read images from; synthetic data is generated when absent.
    pub manifest: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub synth_classes: usize,
    /// 0 generates no meta-test split.
    pub synth_test_classes: usize,
    pub synth_per_class: usize,
    pub synth_hw: usize,
    pub data_seed: u64,

    pub spec: EpisodeSpec,
    pub limits: PoolLimits,
    pub policy: AugPolicy,
    pub train: TrainConfig,
    pub widths: String,
    pub kernel: usize,

    pub eval_episodes: usize,
    pub checkpoint: Option<PathBuf>,

    pub bench_sizes: Vec<usize>,
    pub bench_reps: usize,

    pub cumulative_params: Vec<u64>,
    pub units: Vec<u64>,
    pub pieces: u64,
    pub degree: u64,
    pub c1: f64,
    pub c2: f64,
    pub ldr: Option<(u64, u64, u64)>,

    pub fault: Fault,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            seed: 0,
            threads: 1,
            out_dir: PathBuf::from("out"),
            manifest: None,
            data_dir: None,
            synth_classes: 8,
            synth_test_classes: 8,
            synth_per_class: 60,
            synth_hw: 16,
            data_seed: 0,
            spec: train.spec,
            limits: train.limits,
            policy: AugPolicy::default(),
            widths: "64-64-64-64".into(),
            kernel: 3,
            train,
            eval_episodes: 300,
            checkpoint: None,
            bench_sizes: vec![16, 64, 256, 1024, 4096],
            bench_reps: 20,
            cumulative_params: Vec::new(),
            units: Vec::new(),
            pieces: 2,
            degree: 1,
            c1: 1.0,
            c2: 1.0,
            ldr: None,
            fault: Fault::None,
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> CliError {
    CliError::Config(format!("{key} = {value}: {what}"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| bad(key, value, "not a valid number"))
}

fn positive(key: &str, value: &str) -> Result<usize, CliError> {
    let v: usize = num(key, value)?;
    if v == 0 {
        return Err(bad(key, value, "must be at least 1"));
    }
    Ok(v)
}

fn unit_interval(key: &str, value: &str, closed_top: bool) -> Result<f64, CliError> {
    let v: f64 = num(key, value)?;
    let ok = v >= 0.0 && if closed_top { v <= 1.0 } else { v < 1.0 };
    if !ok {
        return Err(bad(key, value, "outside the allowed range"));
    }
    Ok(v)
}

fn non_negative(key: &str, value: &str) -> Result<f64, CliError> {
    let v: f64 = num(key, value)?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(bad(key, value, "must be finite and non-negative"));
    }
    Ok(v)
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad(key, value, "not a list of numbers")))
        .collect()
}

fn cap(key: &str, value: &str) -> Result<Option<usize>, CliError> {
    if value == "none" {
        Ok(None)
    } else {
        positive(key, value).map(Some)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {}: duplicate key '{key}'", i + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| CliError::Config(format!("line {}: {}", i + 1, e.message())))?;
        }
        cfg.finish()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        match key {
            "seed" => self.seed = num(key, value)?,
            "threads" => self.threads = positive(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "synth_classes" => self.synth_classes = positive(key, value)?,
            "synth_test_classes" => {
                self.synth_test_classes = num(key, value)?;
                if self.synth_test_classes == 1 {
                    return Err(bad(key, value, "use 0 for no test split or at least 2 classes"));
                }
            }
            "synth_per_class" => self.synth_per_class = positive(key, value)?,
            "synth_hw" => {
                self.synth_hw = positive(key, value)?;
                if self.synth_hw < 4 {
                    return Err(bad(key, value, "must be at least 4"));
                }
            }
            "data_seed" => self.data_seed = num(key, value)?,
            "n_way" => self.spec.n_way = positive(key, value)?,
            "k_shot" => self.spec.k_shot = positive(key, value)?,
            "q_query" => self.spec.q_query = positive(key, value)?,
            "support_cap" => self.limits.support_cap = cap(key, value)?,
            "query_cap" => self.limits.query_cap = cap(key, value)?,
            "task_cap" => self.limits.task_cap = cap(key, value)?,
            "pool_mode" => self.limits.mode = PoolMode::from_str(value).map_err(|e| bad(key, value, &e.to_string()))?,
            "support_ops" => self.policy.support_ops = parse_ops(value).map_err(|e| bad(key, value, &e.to_string()))?,
            "query_ops" => self.policy.query_ops = parse_ops(value).map_err(|e| bad(key, value, &e.to_string()))?,
            "task_ops" => self.policy.task_ops = parse_task_ops(value).map_err(|e| bad(key, value, &e.to_string()))?,
            "maxup_pool" => self.policy.maxup_pool = positive(key, value)?,
            "maxup_granularity" => {
                self.policy.maxup_granularity = match value {
                    "sample" => MaxUpGranularity::Sample,
                    "task" => MaxUpGranularity::Task,
                    _ => return Err(bad(key, value, "expected 'sample' or 'task'")),
                }
            }
            "lr" => t.lr = non_negative(key, value)?,
            "momentum" => t.momentum = unit_interval(key, value, false)?,
            "weight_decay" => t.weight_decay = non_negative(key, value)?,
            "lr_decay" => {
                t.lr_decay = unit_interval(key, value, true)?;
                if t.lr_decay == 0.0 {
                    return Err(bad(key, value, "must be positive"));
                }
            }
            "milestones" => {
                t.milestones = list(key, value)?;
                if t.milestones.iter().any(|m: &f64| !(*m > 0.0 && *m <= 1.0)) {
                    return Err(bad(key, value, "milestones are epoch fractions in (0, 1]"));
                }
            }
            "epochs" => t.epochs = positive(key, value)?,
            "episodes_per_epoch" => t.episodes_per_epoch = positive(key, value)?,
            "lambda_orth" => t.loss.lambda_orth = non_negative(key, value)?,
            "lambda_ridge" => {
                t.loss.lambda_ridge = non_negative(key, value)?;
                if t.loss.lambda_ridge == 0.0 {
                    return Err(bad(key, value, "must be positive"));
                }
            }
            "logit_scale" => {
                t.loss.logit_scale = non_negative(key, value)?;
                if t.loss.logit_scale == 0.0 {
                    return Err(bad(key, value, "must be positive"));
                }
            }
            "ortho_mode" => t.loss.ortho_mode = OrthoMode::from_str(value).map_err(|e| bad(key, value, &e.to_string()))?,
            "widths" => self.widths = value.to_string(),
            "kernel" => self.kernel = positive(key, value)?,
            "eval_episodes" => self.eval_episodes = num(key, value)?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "bench_sizes" => {
                self.bench_sizes = list(key, value)?;
                if self.bench_sizes.is_empty() || self.bench_sizes.contains(&0) {
                    return Err(bad(key, value, "sizes must be at least 1"));
                }
            }
            "bench_reps" => self.bench_reps = positive(key, value)?,
            "cumulative_params" => self.cumulative_params = list(key, value)?,
            "units" => self.units = list(key, value)?,
            "pieces" => self.pieces = num(key, value)?,
            "degree" => self.degree = num(key, value)?,
            "c1" => self.c1 = non_negative(key, value)?,
            "c2" => self.c2 = non_negative(key, value)?,
            "ldr" => {
                let v: Vec<u64> = list(key, value)?;
                match v[..] {
                    [m, n, r] if m > 0 && n > 0 && r > 0 => self.ldr = Some((m, n, r)),
                    _ => return Err(bad(key, value, "expected m,n,r with each at least 1")),
                }
            }
            "inject_fault" => self.fault = Fault::from_str(value).map_err(|e| bad(key, value, &e.to_string()))?,
            _ => return Err(CliError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Cross-key checks and derived fields.
    fn finish(&mut self) -> Result<(), CliError> {
        self.train.blocks = parse_widths(&self.widths, self.kernel).map_err(|e| CliError::Config(e.to_string()))?;
        self.spec = EpisodeSpec::new(self.spec.n_way, self.spec.k_shot, self.spec.q_query)
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train.spec = self.spec;
        self.train.limits = self.limits;
        self.train.seed = self.seed;
        if self.spec.n_way > self.synth_classes && self.manifest.is_none() {
            return Err(CliError::Config(format!(
                "n_way = {} exceeds synth_classes = {}",
                self.spec.n_way, self.synth_classes
            )));
        }
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.policy.validate().map_err(|e| CliError::Config(e.to_string()))?;
        LossConfig::validate(&self.train.loss).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Applies a command-line seed override.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("checkpoint.bin"))
    }

    pub fn data_root(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = RunConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(c.train.blocks.len(), 4);
        assert_eq!(c.train.lr, 1e-4);
        assert_eq!(c.spec.n_way, 5);
    }

    #[test]
    fn parses_known_keys() {
        let c = RunConfig::parse(
            "seed = 7\nwidths = 16-16\nlr = 0.01\nquery_ops = cutmix(alpha=1.0)\nmaxup_pool = 4\nsupport_cap = 5\nmilestones = 0.5\nldr = 8,8,1",
        )
        .unwrap();
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.train.blocks.len(), 2);
        assert_eq!(c.policy.query_ops.len(), 1);
        assert_eq!(c.limits.support_cap, Some(5));
        assert_eq!(c.train.limits.support_cap, Some(5));
        assert_eq!(c.train.milestones, vec![0.5]);
        assert_eq!(c.ldr, Some((8, 8, 1)));
    }

    #[test]
    fn rejects_unknown_duplicate_and_out_of_range() {
        assert!(RunConfig::parse("learning_rate = 0.1").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("momentum = 1.5").is_err());
        assert!(RunConfig::parse("lr = -1").is_err());
        assert!(RunConfig::parse("epochs = 0").is_err());
        assert!(RunConfig::parse("no equals sign").is_err());
        assert!(RunConfig::parse("n_way = 9").is_err());
        assert!(RunConfig::parse("query_ops = warp(p=1)").is_err());
    }

    #[test]
    fn seed_override() {
        let c = RunConfig::parse("seed = 1").unwrap().with_seed(9);
        assert_eq!((c.seed, c.train.seed), (9, 9));
    }
}
