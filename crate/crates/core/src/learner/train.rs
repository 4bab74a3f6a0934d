//! Episode objective, SGD meta-training and evaluation.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::backbone::{batch_images, BackboneParams, BlockSpec, ParamGrads};
use super::loss::{argmax_rows, cross_entropy_rows, soft_cross_entropy};
use super::metrics::{EpisodeRecord, RunMetrics};
use super::ridge::ridge_head_fit;
use crate::augment::{apply_ops, maxup_select, AugPolicy, Image, MaxUpGranularity, SoftLabel, TaskOp};
use crate::episodes::{task_augment_rotation, Dataset, Episode, EpisodeSampler, EpisodeSpec, PoolLimits, Split};
use crate::error::{Error, Result};
use crate::ortho::{layer_ortho_loss_and_grad, select_case, OrthoCase, OrthoMode};
use crate::tensor::Tensor4;

/// Hyperparameters of the per-episode objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_orth: f64,
    pub lambda_ridge: f64,
    /// Fixed multiplier applied to ridge predictions before the softmax.
    pub logit_scale: f64,
    pub ortho_mode: OrthoMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_orth: 0.1,
            lambda_ridge: 1.0,
            logit_scale: 10.0,
            ortho_mode: OrthoMode::Auto,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_orth >= 0.0 && self.lambda_orth.is_finite()) {
            return Err(Error::Config(format!("lambda_orth must be ≥ 0, got {}", self.lambda_orth)));
        }
        if !(self.lambda_ridge > 0.0 && self.lambda_ridge.is_finite()) {
            return Err(Error::Config(format!("lambda_ridge must be > 0, got {}", self.lambda_ridge)));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return Err(Error::Config(format!("logit_scale must be > 0, got {}", self.logit_scale)));
        }
        Ok(())
    }
}

/// Objective value broken into its terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    /// `λ_orth · Σ_l ‖self_conv(K_l) − I‖²_F`.
    pub orth: f64,
    pub acc: f64,
    pub residuals: Vec<f64>,
}

/// Orthogonality case used by each block.
pub fn layer_cases(p: &BackboneParams, mode: OrthoMode) -> Result<Vec<OrthoCase>> {
    p.blocks()
        .iter()
        .zip(p.block_inputs()?)
        .map(|(b, input)| select_case(b.kernel.dims(), input, b.geometry, mode))
        .collect()
}

/// Per-layer residuals `‖self_conv − I‖_F` and, when `lambda > 0`, the
/// weighted penalty with its kernel gradients.
pub fn ortho_term(
    p: &BackboneParams,
    cases: &[OrthoCase],
    lambda: f64,
) -> Result<(f64, Vec<Option<Tensor4>>, Vec<f64>)> {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(cases.len());
    let mut residuals = Vec::with_capacity(cases.len());
    for (b, &case) in p.blocks().iter().zip(cases) {
        let (sq, grad) = layer_ortho_loss_and_grad(&b.kernel, b.geometry.stride, case, 1.0)?;
        residuals.push(sq.sqrt());
        total += lambda * sq;
        grads.push((lambda > 0.0).then(|| grad.scaled(lambda)));
    }
    Ok((total, grads, residuals))
}

fn label_matrix(labels: &[&SoftLabel]) -> Result<DMatrix<f64>> {
    let c = labels.first().map(|l| l.len()).ok_or_else(|| Error::invalid("empty label set"))?;
    if labels.iter().any(|l| l.len() != c) {
        return Err(Error::geometry("labels differ in dimension"));
    }
    Ok(DMatrix::from_fn(labels.len(), c, |i, j| labels[i].as_slice()[j]))
}

fn one_hot_set(items: &[(Image, usize)], n_way: usize) -> Vec<(Image, SoftLabel)> {
    items
        .iter()
        .map(|(im, y)| (im.clone(), SoftLabel::one_hot(*y, n_way)))
        .collect()
}

fn accuracy(logits: &DMatrix<f64>, targets: &[&SoftLabel]) -> f64 {
    let pred = argmax_rows(logits);
    let hits = pred.iter().zip(targets).filter(|(p, t)| **p == t.argmax()).count();
    hits as f64 / targets.len().max(1) as f64
}

/// Ridge head fitted on `support`, scored on `query`: cross-entropy plus the
/// orthogonality penalty. Returns parameter gradients when `want_grad`.
pub fn episode_objective(
    p: &BackboneParams,
    support: &[(Image, SoftLabel)],
    query: &[(Image, SoftLabel)],
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(LossParts, Option<ParamGrads>)> {
    if support.is_empty() || query.is_empty() {
        return Err(Error::invalid("episode needs support and query samples"));
    }
    let ns = support.len();
    let x = batch_images(support.iter().chain(query).map(|(im, _)| im))?;
    let ys: Vec<&SoftLabel> = support.iter().map(|(_, l)| l).collect();
    let yq: Vec<&SoftLabel> = query.iter().map(|(_, l)| l).collect();
    let y = label_matrix(&ys)?;
    let yqm = label_matrix(&yq)?;

    let (emb, cache) = if want_grad {
        let (e, c) = p.forward_with_cache(&x)?;
        (e, Some(c))
    } else {
        (p.forward_embed(&x)?, None)
    };
    let z = emb.rows(0, ns).into_owned();
    let zq = emb.rows(ns, query.len()).into_owned();
    let head = ridge_head_fit(&z, &y, cfg.lambda_ridge)?;
    let logits = head.logits(&zq, cfg.logit_scale);
    let (ce, d_logits) = soft_cross_entropy(&logits, &yqm)?;
    let acc = accuracy(&logits, &yq);

    let cases = layer_cases(p, cfg.ortho_mode)?;
    let (orth, ortho_grads, residuals) = ortho_term(p, &cases, cfg.lambda_orth)?;
    let parts = LossParts {
        total: ce + orth,
        ce,
        orth,
        acc,
        residuals,
    };
    let grads = match cache {
        None => None,
        Some(cache) => {
            let (dz, dzq) = head.backward(&z, &zq, &d_logits, cfg.logit_scale);
            let mut d_emb = DMatrix::zeros(emb.nrows(), emb.ncols());
            d_emb.rows_mut(0, ns).copy_from(&dz);
            d_emb.rows_mut(ns, query.len()).copy_from(&dzq);
            let mut g = p.backward(&cache, &d_emb)?;
            for (gk, og) in g.kernels.iter_mut().zip(ortho_grads) {
                if let Some(og) = og {
                    gk.add_assign(&og);
                }
            }
            Some(g)
        }
    };
    Ok((parts, grads))
}

/// Objective of an episode with one-hot labels.
pub fn episode_loss(p: &BackboneParams, ep: &Episode, cfg: &LossConfig) -> Result<LossParts> {
    let n = ep.n_way();
    let (parts, _) = episode_objective(p, &one_hot_set(&ep.support, n), &one_hot_set(&ep.query, n), cfg, false)?;
    Ok(parts)
}

pub fn episode_loss_and_grad(p: &BackboneParams, ep: &Episode, cfg: &LossConfig) -> Result<(LossParts, ParamGrads)> {
    let n = ep.n_way();
    let (parts, g) = episode_objective(p, &one_hot_set(&ep.support, n), &one_hot_set(&ep.query, n), cfg, true)?;
    Ok((parts, g.expect("gradient requested")))
}

/// SGD and schedule settings plus everything needed to rebuild a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    /// Fractions of `epochs` after which the learning rate is multiplied by `lr_decay`.
    pub milestones: Vec<f64>,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub loss: LossConfig,
    pub spec: EpisodeSpec,
    pub limits: PoolLimits,
    pub blocks: Vec<BlockSpec>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            momentum: 0.9,
            weight_decay: 2e-5,
            lr_decay: 0.1,
            milestones: vec![0.6, 0.8],
            epochs: 10,
            episodes_per_epoch: 100,
            loss: LossConfig::default(),
            spec: EpisodeSpec {
                n_way: 5,
                k_shot: 1,
                q_query: 6,
            },
            limits: PoolLimits::full(),
            blocks: vec![BlockSpec::same(64, 3); 4],
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A learning rate of exactly zero is accepted and leaves parameters unchanged.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be ≥ 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be ≥ 0".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        if self.milestones.iter().any(|m| !(*m > 0.0 && *m <= 1.0)) {
            return Err(Error::Config("milestones must lie in (0, 1]".into()));
        }
        if self.epochs == 0 || self.episodes_per_epoch == 0 {
            return Err(Error::Config("epochs and episodes_per_epoch must be ≥ 1".into()));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("backbone needs at least one block".into()));
        }
        self.loss.validate()
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| epoch >= (m * self.epochs as f64).round() as usize)
            .count();
        self.lr * self.lr_decay.powi(passed as i32)
    }
}

/// Independent generator for one purpose of one run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const INIT_STREAM: u64 = 0;
const POOL_STREAM: u64 = 1;
const EPISODE_STREAM_BASE: u64 = 2;

/// Applies the policy's task-level operators to a dataset.
pub fn apply_task_ops(ds: &Dataset, policy: &AugPolicy) -> Result<Dataset> {
    let mut out = ds.clone();
    for op in &policy.task_ops {
        out = match op {
            TaskOp::Rotation => task_augment_rotation(&out)?,
        };
    }
    Ok(out)
}

pub fn init_params(cfg: &TrainConfig, input: (usize, usize, usize)) -> Result<BackboneParams> {
    BackboneParams::init(input, &cfg.blocks, &mut stream_rng(cfg.seed, INIT_STREAM))
}

/// Meta-trains a freshly initialized backbone.
pub fn train(cfg: &TrainConfig, ds: &Dataset, policy: &AugPolicy) -> Result<(BackboneParams, RunMetrics)> {
    cfg.validate()?;
    let params = init_params(cfg, ds.image_dims())?;
    train_from(params, cfg, ds, policy)
}

struct Sgd {
    velocity: Vec<f64>,
}

impl Sgd {
    /// `v ← μv + g (+ wd·K for kernels)`, `θ ← θ − lr·v`.
    fn step(&mut self, p: &mut BackboneParams, g: &ParamGrads, lr: f64, momentum: f64, wd: f64) {
        let mut off = 0;
        for (blk, (gk, gb)) in p.blocks_mut().iter_mut().zip(g.kernels.iter().zip(&g.biases)) {
            for (w, gw) in blk.kernel.data_mut().iter_mut().zip(gk.data()) {
                let v = &mut self.velocity[off];
                *v = momentum * *v + gw + wd * *w;
                *w -= lr * *v;
                off += 1;
            }
            for (b, gbv) in blk.bias.iter_mut().zip(gb) {
                let v = &mut self.velocity[off];
                *v = momentum * *v + gbv;
                *b -= lr * *v;
                off += 1;
            }
        }
    }
}

/// Worst-of-`m` query views under the current head.
fn maxup_query(
    p: &BackboneParams,
    support: &[(Image, SoftLabel)],
    query: &[(Image, SoftLabel)],
    policy: &AugPolicy,
    cfg: &LossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Image, SoftLabel)>> {
    let views: Vec<Vec<(Image, SoftLabel)>> = (0..policy.maxup_pool)
        .map(|_| apply_ops(query, &policy.query_ops, rng))
        .collect::<Result<_>>()?;
    let z = p.forward_embed(&batch_images(support.iter().map(|(im, _)| im))?)?;
    let ys: Vec<&SoftLabel> = support.iter().map(|(_, l)| l).collect();
    let head = ridge_head_fit(&z, &label_matrix(&ys)?, cfg.lambda_ridge)?;
    let losses: Vec<Vec<f64>> = views
        .iter()
        .map(|view| {
            let zq = p.forward_embed(&batch_images(view.iter().map(|(im, _)| im))?)?;
            let yq: Vec<&SoftLabel> = view.iter().map(|(_, l)| l).collect();
            cross_entropy_rows(&head.logits(&zq, cfg.logit_scale), &label_matrix(&yq)?)
        })
        .collect::<Result<_>>()?;
    let idx: Vec<usize> = (0..views.len()).collect();
    match policy.maxup_granularity {
        MaxUpGranularity::Task => {
            let best = maxup_select(|&v: &usize| losses[v].iter().sum::<f64>(), &idx)?;
            Ok(views[best].clone())
        }
        MaxUpGranularity::Sample => (0..query.len())
            .map(|i| {
                let best = maxup_select(|&v: &usize| losses[v][i], &idx)?;
                Ok(views[best][i].clone())
            })
            .collect(),
    }
}

/// Continues meta-training from `params`. Task operators are applied to the
/// dataset first; each episode draws from its own seeded generator.
pub fn train_from(
    mut params: BackboneParams,
    cfg: &TrainConfig,
    ds: &Dataset,
    policy: &AugPolicy,
) -> Result<(BackboneParams, RunMetrics)> {
    cfg.validate()?;
    policy.validate()?;
    let ds = apply_task_ops(ds, policy)?;
    if ds.image_dims() != params.input_dims() {
        return Err(Error::geometry(format!(
            "backbone expects {:?} images, dataset has {:?}",
            params.input_dims(),
            ds.image_dims()
        )));
    }
    let sampler = EpisodeSampler::new(&ds, cfg.spec, cfg.limits, &mut stream_rng(cfg.seed, POOL_STREAM))?;
    let mut sgd = Sgd {
        velocity: vec![0.0; params.num_params()],
    };
    let mut metrics = RunMetrics::default();
    let n_way = cfg.spec.n_way;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        for i in 0..cfg.episodes_per_epoch {
            let global = epoch * cfg.episodes_per_epoch + i;
            let mut rng = stream_rng(cfg.seed, EPISODE_STREAM_BASE + global as u64);
            let ep = sampler.sample(&mut rng);
            let support = apply_ops(&one_hot_set(&ep.support, n_way), &policy.support_ops, &mut rng)?;
            let base_query = one_hot_set(&ep.query, n_way);
            let query = if policy.uses_maxup() {
                maxup_query(&params, &support, &base_query, policy, &cfg.loss, &mut rng)?
            } else {
                apply_ops(&base_query, &policy.query_ops, &mut rng)?
            };
            let (parts, grads) = episode_objective(&params, &support, &query, &cfg.loss, true)?;
            let grads = grads.expect("gradient requested");
            if !parts.total.is_finite() || !grads.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at episode {global} (epoch {epoch}): ce={}, orth={}",
                    parts.ce, parts.orth
                )));
            }
            metrics.push(EpisodeRecord {
                episode: global,
                split: Split::Train,
                acc: parts.acc,
                loss_ce: parts.ce,
                loss_orth: parts.orth,
                residuals: parts.residuals,
            });
            sgd.step(&mut params, &grads, lr, cfg.momentum, cfg.weight_decay);
        }
    }
    Ok((params, metrics))
}

/// Fits the head on each episode's support set and scores its query set.
/// Episodes run in parallel; results are ordered by episode index.
pub fn evaluate(
    p: &BackboneParams,
    ds: &Dataset,
    n_episodes: usize,
    spec: EpisodeSpec,
    limits: PoolLimits,
    cfg: &LossConfig,
    seed: u64,
) -> Result<RunMetrics> {
    if n_episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    cfg.validate()?;
    let sampler = EpisodeSampler::new(ds, spec, limits, &mut stream_rng(seed, POOL_STREAM))?;
    let cases = layer_cases(p, cfg.ortho_mode)?;
    let (_, _, residuals) = ortho_term(p, &cases, 0.0)?;
    let orth = cfg.lambda_orth * residuals.iter().map(|r| r * r).sum::<f64>();
    let no_ortho = LossConfig {
        lambda_orth: 0.0,
        ..*cfg
    };
    let records = (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, EPISODE_STREAM_BASE + i as u64);
            let ep = sampler.sample(&mut rng);
            let n = ep.n_way();
            let (parts, _) = episode_objective(
                p,
                &one_hot_set(&ep.support, n),
                &one_hot_set(&ep.query, n),
                &no_ortho,
                false,
            )?;
            Ok(EpisodeRecord {
                episode: i,
                split: Split::Test,
                acc: parts.acc,
                loss_ce: parts.ce,
                loss_orth: orth,
                residuals: residuals.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunMetrics { records })
}
