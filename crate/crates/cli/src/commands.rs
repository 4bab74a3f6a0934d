use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ortho_shot::capacity::{capacity_report, ldr_budget, NetSpec};
use ortho_shot::dbt::{toeplitz_matvec_fast, ToeplitzSpec};
use ortho_shot::episodes::{load_dataset, synth_shapes_range, write_dataset, Dataset, PoolLimits, Split};
use ortho_shot::learner::{
    evaluate, load_checkpoint, save_checkpoint, stream_rng, train, BackboneParams, RunMetrics,
};
use ortho_shot::verify::{run_all, PropertyResult};
use rand::Rng;

use crate::config::RunConfig;
use crate::error::CliError;

/// Human-readable text for stdout plus files written.
pub type Output = String;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Appends a timestamped line to `<out_dir>/run.log`.
fn log_line(cfg: &RunConfig, msg: &str) -> Result<(), CliError> {
    let path = cfg.out_dir.join("run.log");
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    writeln!(f, "[{ts:.3}] {msg}")?;
    Ok(())
}

fn synth(cfg: &RunConfig, split: Split) -> Result<Dataset, CliError> {
    let (first, n) = match split {
        Split::Train => (0, cfg.synth_classes),
        Split::Test => (cfg.synth_classes, cfg.synth_test_classes),
    };
    if n == 0 {
        return Err(CliError::Config("synth_test_classes = 0 leaves no meta-test split".into()));
    }
    Ok(synth_shapes_range(first, n, cfg.synth_per_class, cfg.synth_hw, cfg.data_seed, split)?)
}

fn dataset(cfg: &RunConfig, split: Split) -> Result<Dataset, CliError> {
    match &cfg.manifest {
        Some(m) => Ok(load_dataset(m, split)?),
        None => synth(cfg, split),
    }
}

pub fn gen_data(cfg: &RunConfig) -> Result<Output, CliError> {
    let root = cfg.data_root();
    let train = synth(cfg, Split::Train)?;
    let mut sets = vec![train];
    if cfg.synth_test_classes > 0 {
        sets.push(synth(cfg, Split::Test)?);
    }
    let refs: Vec<&Dataset> = sets.iter().collect();
    let manifest = write_dataset(&root, &refs)?;
    let mut out = String::new();
    for d in &sets {
        writeln!(out, "{}: {} classes, {} images", d.split(), d.num_classes(), d.total_images()).unwrap();
    }
    writeln!(out, "manifest: {}", manifest.display()).unwrap();
    Ok(out)
}

pub fn verify(cfg: &RunConfig) -> Result<Output, CliError> {
    let results = run_all(cfg.seed, cfg.fault);
    let mut out = String::new();
    for r in &results {
        writeln!(out, "{r}").unwrap();
    }
    let failed: Vec<&PropertyResult> = results.iter().filter(|r| !r.passed).collect();
    writeln!(out, "{} properties, {} failed", results.len(), failed.len()).unwrap();
    if failed.is_empty() {
        Ok(out)
    } else {
        print!("{out}");
        let names: Vec<String> = failed.iter().map(|r| format!("{}::{}", r.suite, r.name)).collect();
        Err(CliError::Failed(format!("failing properties: {}", names.join(", "))))
    }
}

fn accuracy_line(m: &RunMetrics, what: &str) -> String {
    let s = m.accuracy();
    let flag = if s.ci_defined { "" } else { ", interval undefined" };
    format!("acc {s} ({} {what} episodes{flag})", s.n)
}

pub fn train_cmd(cfg: &RunConfig) -> Result<Output, CliError> {
    ensure_dir(&cfg.out_dir)?;
    log_line(cfg, &format!("train seed={} out_dir={}", cfg.seed, cfg.out_dir.display()))?;
    let start = Instant::now();
    let train_ds = dataset(cfg, Split::Train)?;
    let test_ds = if cfg.eval_episodes > 0 {
        Some(dataset(cfg, Split::Test)?)
    } else {
        None
    };
    let (params, mut metrics) = train(&cfg.train, &train_ds, &cfg.policy)?;
    save_checkpoint(&params, &cfg.out_dir.join("checkpoint.bin"))?;
    let mut out = String::new();
    writeln!(out, "trained {} episodes, {} parameters", metrics.len(), params.num_params()).unwrap();
    let summary = match &test_ds {
        Some(ds) => {
            let ev = evaluate(&params, ds, cfg.eval_episodes, cfg.spec, PoolLimits::full(), &cfg.train.loss, cfg.seed)?;
            let line = accuracy_line(&ev, "test");
            metrics.records.extend(ev.records);
            line
        }
        None => {
            let last: Vec<f64> = metrics
                .records
                .iter()
                .rev()
                .take(cfg.train.episodes_per_epoch)
                .map(|r| r.acc)
                .collect();
            let s = ortho_shot::learner::confidence_interval(&last);
            format!("acc {s} (last {} training episodes)", s.n)
        }
    };
    write_file(&cfg.out_dir.join("metrics.csv"), metrics.to_csv().as_bytes())?;
    writeln!(out, "{summary}").unwrap();
    log_line(cfg, &format!("done in {:.2}s: {summary}", start.elapsed().as_secs_f64()))?;
    Ok(out)
}

/// Pool caps shape meta-training only; evaluation always samples the full test split.
pub fn eval_cmd(cfg: &RunConfig) -> Result<Output, CliError> {
    ensure_dir(&cfg.out_dir)?;
    let ckpt = cfg.checkpoint_path();
    log_line(cfg, &format!("eval checkpoint={} seed={}", ckpt.display(), cfg.seed))?;
    let start = Instant::now();
    let params: BackboneParams = load_checkpoint(&ckpt)?;
    let ds = dataset(cfg, Split::Test)?;
    if cfg.eval_episodes == 0 {
        return Err(CliError::Config("eval_episodes must be at least 1 for eval".into()));
    }
    let m = evaluate(&params, &ds, cfg.eval_episodes, cfg.spec, PoolLimits::full(), &cfg.train.loss, cfg.seed)?;
    write_file(&cfg.out_dir.join("eval_metrics.csv"), m.to_csv().as_bytes())?;
    let line = accuracy_line(&m, "test");
    log_line(cfg, &format!("done in {:.2}s: {line}", start.elapsed().as_secs_f64()))?;
    Ok(format!("{line}\n"))
}

/// Median wall time in nanoseconds of `reps` calls.
fn median_ns(reps: usize, mut f: impl FnMut()) -> f64 {
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_nanos() as f64
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

/// One row of the dense-versus-FFT Toeplitz timing table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatvecTiming {
    pub n: usize,
    pub dense_ns: f64,
    pub fft_ns: f64,
    pub max_abs_err: f64,
}

impl MatvecTiming {
    pub fn speedup(&self) -> f64 {
        self.dense_ns / self.fft_ns
    }
}

pub fn time_matvec(n: usize, reps: usize, seed: u64) -> Result<MatvecTiming, CliError> {
    let mut rng = stream_rng(seed, n as u64);
    let col: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    row[0] = col[0];
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t = ToeplitzSpec::new(col, row)?;
    let dense = t.to_dense();
    let fast = toeplitz_matvec_fast(&t, &x)?;
    let slow = dense.matvec(&x)?;
    let max_abs_err = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let dense_ns = median_ns(reps, || {
        std::hint::black_box(dense.matvec(std::hint::black_box(&x)).expect("sizes match"));
    });
    let fft_ns = median_ns(reps, || {
        std::hint::black_box(toeplitz_matvec_fast(&t, std::hint::black_box(&x)).expect("sizes match"));
    });
    Ok(MatvecTiming {
        n,
        dense_ns,
        fft_ns,
        max_abs_err,
    })
}

pub fn bench_matvec(cfg: &RunConfig) -> Result<Output, CliError> {
    ensure_dir(&cfg.out_dir)?;
    let rows = cfg
        .bench_sizes
        .iter()
        .map(|&n| time_matvec(n, cfg.bench_reps, cfg.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let mut csv = String::from("n,dense_ns,fft_ns,speedup,max_abs_err\n");
    for r in &rows {
        writeln!(csv, "{},{:.0},{:.0},{:.3},{:e}", r.n, r.dense_ns, r.fft_ns, r.speedup(), r.max_abs_err).unwrap();
    }
    write_file(&cfg.out_dir.join("bench_matvec.csv"), csv.as_bytes())?;
    let mut out = csv.clone();
    let monotone = rows.windows(2).all(|w| w[1].fft_ns >= w[0].fft_ns);
    writeln!(out, "fft_ns nondecreasing in n: {monotone}").unwrap();
    if let Some(r) = rows.iter().find(|r| r.n == 4096) {
        let verdict = if r.speedup() >= 5.0 { "meets" } else { "below" };
        writeln!(out, "speedup at n=4096: {:.2}x ({verdict} the 5x target)", r.speedup()).unwrap();
    }
    Ok(out)
}

pub fn vc_bound(cfg: &RunConfig) -> Result<Output, CliError> {
    let mut out = String::new();
    if !cfg.cumulative_params.is_empty() || !cfg.units.is_empty() {
        let mut spec = NetSpec::new(cfg.cumulative_params.clone(), cfg.units.clone())?;
        spec.pieces = cfg.pieces;
        spec.degree = cfg.degree;
        spec.c1 = cfg.c1;
        spec.c2 = cfg.c2;
        spec.validate()?;
        let r = capacity_report(&spec)?;
        writeln!(out, "layers={}", spec.depth()).unwrap();
        writeln!(out, "total_params={}", spec.total_params()).unwrap();
        writeln!(out, "effective_depth={}", r.effective_depth).unwrap();
        writeln!(out, "total_units={}", r.total_units).unwrap();
        writeln!(out, "bound_surrogate={}", r.bound).unwrap();
        writeln!(out, "bound_implicit={}", r.implicit_bound).unwrap();
    }
    if let Some((m, n, r)) = cfg.ldr {
        let b = ldr_budget(m, n, r)?;
        writeln!(out, "ldr_params={}", b.params).unwrap();
        writeln!(out, "ldr_dense_params={}", b.dense_params).unwrap();
        writeln!(out, "ldr_matvec_fast={}", b.matvec_fast).unwrap();
        writeln!(out, "ldr_matvec_fft={}", b.matvec_fft).unwrap();
        writeln!(out, "ldr_ratio={}", b.ratio).unwrap();
    }
    if out.is_empty() {
        return Err(CliError::Config("vc-bound needs cumulative_params and units, or ldr".into()));
    }
    Ok(out)
}
