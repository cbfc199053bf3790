//! Difficulty-weighted first-order meta-training, the plain-Reptile /
//! transfer / train-on-target comparison regimes, and the final adaptation
//! stage for data-scarce series.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate_backbone, ClassificationMetrics};
use crate::market_data::Sample;
use crate::model::{Backbone, GradientModel, LossReduction, Optimizer, OptimizerKind};
use crate::par;
use crate::tasking::{softmax_weights, Task, WeightScope};

/// How the outer update consumes a meta-batch: average the meta-gradients
/// of its tasks, or apply one update per task in sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaUpdate {
    Batched,
    PerTask,
}

/// Hyperparameters of the meta-training and adaptation stages. Fields
/// missing from a config file fall back to these defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    /// Inner gradient steps per task (K).
    pub inner_steps: usize,
    /// Tasks per meta-batch (B).
    pub meta_batch: usize,
    pub epochs: usize,
    /// Inner-loop learning rate (alpha).
    pub inner_lr: f64,
    /// Outer-loop learning rate (beta).
    pub meta_lr: f64,
    /// Adaptation learning rate (gamma).
    pub adapt_lr: f64,
    /// Gradient steps of the adaptation stage.
    pub adapt_steps: usize,
    /// Inner mini-batch size (C). Inner steps walk the task's samples in
    /// contiguous blocks of this size, wrapping around; with the default
    /// task size one inner loop is exactly one pass.
    pub inner_batch: usize,
    /// Decoupled weight decay (sigma) for AdamW stages.
    pub weight_decay: f64,
    /// Difficulty-derived task weights on or off.
    pub adaptive: bool,
    pub weight_scope: WeightScope,
    pub meta_update: MetaUpdate,
    /// Optimizer of the inner task steps (plain gradient descent by
    /// default; task weights scale the whole update either way).
    pub inner_optimizer: OptimizerKind,
    pub adapt_optimizer: OptimizerKind,
    pub reduction: LossReduction,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_steps: 6,
            meta_batch: 6,
            epochs: 50,
            inner_lr: 1e-2,
            meta_lr: 1e-2,
            adapt_lr: 1e-2,
            adapt_steps: 50,
            inner_batch: 4096,
            weight_decay: 1e-5,
            adaptive: true,
            weight_scope: WeightScope::Global,
            meta_update: MetaUpdate::Batched,
            inner_optimizer: OptimizerKind::Sgd,
            adapt_optimizer: OptimizerKind::AdamW,
            reduction: LossReduction::Sum,
            seed: 7,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == 0 || self.meta_batch == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "inner_steps, meta_batch and epochs must all be at least 1".into(),
            ));
        }
        if self.inner_batch == 0 {
            return Err(Error::Config("inner_batch must be at least 1".into()));
        }
        for (name, lr) in [
            ("inner_lr", self.inner_lr),
            ("meta_lr", self.meta_lr),
            ("adapt_lr", self.adapt_lr),
        ] {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        Ok(())
    }
}

/// Sample pool that counts reads, so tests can assert a training method
/// never touched it.
#[derive(Debug, Default)]
pub struct CountedPool {
    samples: Vec<Sample>,
    reads: AtomicU64,
}

impl CountedPool {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self {
            samples,
            reads: AtomicU64::new(0),
        }
    }

    pub fn samples(&self) -> &[Sample] {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.samples
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Data splits handed to the training methods.
pub struct TrainData<'a> {
    pub old_tasks: Option<&'a [Task]>,
    pub old_pool: Option<&'a CountedPool>,
    pub subnew_train_tasks: &'a [Task],
    pub subnew_val: &'a [Sample],
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_mcc: f64,
    pub val_f1: f64,
}

/// Per-epoch history of one training run. The best epoch is selected by
/// validation MCC.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub wall_secs: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub model: Backbone,
    pub record: RunRecord,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Scratch,
    Transfer,
    Reptile,
}

/// Contiguous mini-batch `k` of a pool, wrapping around its end.
fn batch_bounds(k: usize, batch_size: usize, pool_len: usize) -> (usize, usize) {
    if batch_size >= pool_len {
        return (0, pool_len);
    }
    let start = (k * batch_size) % pool_len;
    (start, (start + batch_size).min(pool_len))
}

/// K gradient-descent steps on one task starting from a copy of `params`,
/// with effective step `lr * weight`. Returns the adapted parameters and
/// the mean step loss; `params` itself is never touched.
#[allow(clippy::too_many_arguments)]
pub fn inner_loop<M: GradientModel>(
    model: &M,
    params: &[f64],
    task: &Task,
    steps: usize,
    lr: f64,
    weight: f64,
    batch_size: usize,
    reduction: LossReduction,
) -> Result<(Vec<f64>, f64)> {
    inner_loop_with(
        model,
        params,
        task,
        steps,
        lr,
        weight,
        batch_size,
        reduction,
        OptimizerKind::Sgd,
        0.0,
    )
}

/// [`inner_loop`] with a configurable step rule. Optimizer state is fresh
/// per call, matching the per-task reset of the outer algorithm.
#[allow(clippy::too_many_arguments)]
pub fn inner_loop_with<M: GradientModel>(
    model: &M,
    params: &[f64],
    task: &Task,
    steps: usize,
    lr: f64,
    weight: f64,
    batch_size: usize,
    reduction: LossReduction,
    optimizer_kind: OptimizerKind,
    weight_decay: f64,
) -> Result<(Vec<f64>, f64)> {
    let mut adapted = params.to_vec();
    let pool_len = task.samples.len();
    if pool_len == 0 {
        return Err(Error::EmptyInput("inner loop over an empty task"));
    }
    let mut optimizer = Optimizer::new(optimizer_kind, lr, weight_decay, adapted.len());
    let mut loss_sum = 0.0;
    for k in 0..steps {
        let (start, end) = batch_bounds(k, batch_size, pool_len);
        let batch = &task.samples[start..end];
        let (loss, grad) = model.loss_and_grad_at(&adapted, batch, reduction)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                context: format!("task {} inner step {k}", task.id),
            });
        }
        loss_sum += loss;
        optimizer.step_scaled(&mut adapted, &grad, weight)?;
    }
    Ok((adapted, loss_sum / steps.max(1) as f64))
}

/// Outer update: move `params` toward the mean of the adapted vectors,
/// scaled by the meta learning rate. Deltas are combined in list order.
pub fn meta_step(params: &mut [f64], adapted: &[Vec<f64>], meta_lr: f64) -> Result<()> {
    if adapted.is_empty() {
        return Err(Error::EmptyInput("meta step over an empty batch"));
    }
    for a in adapted {
        if a.len() != params.len() {
            return Err(Error::LengthMismatch {
                left: a.len(),
                right: params.len(),
            });
        }
    }
    let scale = meta_lr / adapted.len() as f64;
    for i in 0..params.len() {
        let mut delta = 0.0;
        for a in adapted {
            delta += a[i] - params[i];
        }
        params[i] += scale * delta;
    }
    Ok(())
}

/// Fine-tune all parameters on the sub-new training tasks with the
/// configured optimizer. The task samples are pooled, shuffled once by
/// `seed`, and consumed in wrapping mini-batches for `steps` steps.
#[allow(clippy::too_many_arguments)]
pub fn adapt<M: GradientModel>(
    model: &M,
    params: &[f64],
    train_tasks: &[Task],
    lr: f64,
    steps: usize,
    optimizer_kind: OptimizerKind,
    weight_decay: f64,
    batch_size: usize,
    reduction: LossReduction,
    seed: u64,
) -> Result<Vec<f64>> {
    if train_tasks.is_empty() {
        return Err(Error::MissingSplit {
            split: "subnew_train".into(),
        });
    }
    let mut pool: Vec<Sample> = train_tasks
        .iter()
        .flat_map(|t| t.samples.iter().cloned())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);

    let mut adapted = params.to_vec();
    let mut optimizer = Optimizer::new(optimizer_kind, lr, weight_decay, adapted.len());
    for k in 0..steps {
        let (start, end) = batch_bounds(k, batch_size, pool.len());
        let batch = &pool[start..end];
        let (loss, grad) = model.loss_and_grad_at(&adapted, batch, reduction)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                context: format!("adaptation step {k}"),
            });
        }
        optimizer.step(&mut adapted, &grad)?;
    }
    Ok(adapted)
}

/// Seed offset so the adaptation shuffle does not reuse the task-order
/// stream.
const ADAPT_SEED_SALT: u64 = 0xADA9_5EED;

fn validate_candidate(
    init: &Backbone,
    candidate: &[f64],
    subnew_val: &[Sample],
) -> Result<ClassificationMetrics> {
    let model = init.with_params(candidate.to_vec())?;
    let (metrics, _) = evaluate_backbone(&model, subnew_val)?;
    Ok(metrics)
}

struct Selection {
    best_epoch: usize,
    best_mcc: f64,
    best_params: Vec<f64>,
}

impl Selection {
    fn new() -> Self {
        Self {
            best_epoch: 0,
            best_mcc: f64::NEG_INFINITY,
            best_params: Vec::new(),
        }
    }

    fn offer(&mut self, epoch: usize, mcc: f64, params: &[f64]) {
        if mcc > self.best_mcc {
            self.best_epoch = epoch;
            self.best_mcc = mcc;
            self.best_params = params.to_vec();
        }
    }
}

/// Adaptive meta-training. Each epoch walks a seeded shuffle of the old
/// tasks in meta-batches of B, runs the weighted inner loop per task (in
/// parallel, combined in task order) and applies the outer update. The
/// candidate model of an epoch is the current initialization adapted on the
/// sub-new training tasks; the best candidate by validation MCC wins.
pub fn train_metastock(
    init: &Backbone,
    old_tasks: &[Task],
    subnew_train_tasks: &[Task],
    subnew_val: &[Sample],
    cfg: &MetaConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if old_tasks.is_empty() {
        return Err(Error::EmptyInput("meta-training over an empty task list"));
    }
    let started = Instant::now();
    let mut params = init.params().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut record = RunRecord::default();
    let mut selection = Selection::new();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..old_tasks.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for chunk in order.chunks(cfg.meta_batch) {
            let weights = resolve_weights(old_tasks, chunk, cfg);
            match cfg.meta_update {
                MetaUpdate::Batched => {
                    let jobs: Vec<(usize, f64)> =
                        chunk.iter().copied().zip(weights.iter().copied()).collect();
                    let results: Vec<Result<(Vec<f64>, f64)>> =
                        par::map_ordered(&jobs, |&(task_idx, weight)| {
                            inner_loop_with(
                                init,
                                &params,
                                &old_tasks[task_idx],
                                cfg.inner_steps,
                                cfg.inner_lr,
                                weight,
                                cfg.inner_batch,
                                cfg.reduction,
                                cfg.inner_optimizer,
                                cfg.weight_decay,
                            )
                        });
                    let mut adapted = Vec::with_capacity(results.len());
                    for result in results {
                        let (task_params, task_loss) = result?;
                        loss_sum += task_loss;
                        loss_count += 1;
                        adapted.push(task_params);
                    }
                    meta_step(&mut params, &adapted, cfg.meta_lr)?;
                }
                MetaUpdate::PerTask => {
                    for (&task_idx, &weight) in chunk.iter().zip(&weights) {
                        let (task_params, task_loss) = inner_loop_with(
                            init,
                            &params,
                            &old_tasks[task_idx],
                            cfg.inner_steps,
                            cfg.inner_lr,
                            weight,
                            cfg.inner_batch,
                            cfg.reduction,
                            cfg.inner_optimizer,
                            cfg.weight_decay,
                        )?;
                        loss_sum += task_loss;
                        loss_count += 1;
                        meta_step(&mut params, &[task_params], cfg.meta_lr)?;
                    }
                }
            }
        }

        let candidate = adapt(
            init,
            &params,
            subnew_train_tasks,
            cfg.adapt_lr,
            cfg.adapt_steps,
            cfg.adapt_optimizer,
            cfg.weight_decay,
            cfg.inner_batch,
            cfg.reduction,
            cfg.seed ^ ADAPT_SEED_SALT,
        )?;
        let metrics = validate_candidate(init, &candidate, subnew_val)?;
        record.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / loss_count.max(1) as f64,
            val_acc: metrics.acc,
            val_mcc: metrics.mcc,
            val_f1: metrics.f1,
        });
        selection.offer(epoch, metrics.mcc, &candidate);
    }

    record.best_epoch = selection.best_epoch;
    record.wall_secs = started.elapsed().as_secs_f64();
    Ok(TrainOutput {
        model: init.with_params(selection.best_params)?,
        record,
    })
}

/// Task weights for one meta-batch under the configured scope.
fn resolve_weights(tasks: &[Task], chunk: &[usize], cfg: &MetaConfig) -> Vec<f64> {
    if !cfg.adaptive {
        return vec![1.0; chunk.len()];
    }
    match cfg.weight_scope {
        WeightScope::Global => chunk.iter().map(|&i| tasks[i].weight).collect(),
        WeightScope::PerMetaBatch => {
            let difficulties: Vec<f64> = chunk.iter().map(|&i| tasks[i].difficulty).collect();
            softmax_weights(&difficulties)
        }
    }
}

/// Supervised mini-batch training over a sample pool: one shuffle and a
/// full pass per epoch. Returns the mean batch loss of the epoch.
fn supervised_epoch(
    model: &Backbone,
    params: &mut [f64],
    pool: &mut [Sample],
    rng: &mut ChaCha8Rng,
    optimizer: &mut Optimizer,
    batch_size: usize,
    reduction: LossReduction,
) -> Result<f64> {
    pool.shuffle(rng);
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    for batch in pool.chunks(batch_size.max(1)) {
        let (loss, grad) = model.loss_and_grad_at(params, batch, reduction)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                context: format!("supervised batch {batches}"),
            });
        }
        optimizer.step(params, &grad)?;
        loss_sum += loss;
        batches += 1;
    }
    Ok(loss_sum / batches.max(1) as f64)
}

/// The three comparison regimes. `scratch` trains on the sub-new training
/// split only; `transfer` pretrains supervised on the old pool and adapts;
/// `reptile` is meta-training with the task weights switched off.
pub fn train_baseline(
    kind: BaselineKind,
    init: &Backbone,
    data: &TrainData,
    cfg: &MetaConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    match kind {
        BaselineKind::Reptile => {
            let old_tasks = data.old_tasks.ok_or(Error::MissingSplit {
                split: "old_tasks".into(),
            })?;
            let mut plain = cfg.clone();
            plain.adaptive = false;
            train_metastock(
                init,
                old_tasks,
                data.subnew_train_tasks,
                data.subnew_val,
                &plain,
            )
        }
        BaselineKind::Scratch => {
            if data.subnew_train_tasks.is_empty() {
                return Err(Error::MissingSplit {
                    split: "subnew_train".into(),
                });
            }
            let started = Instant::now();
            let mut pool: Vec<Sample> = data
                .subnew_train_tasks
                .iter()
                .flat_map(|t| t.samples.iter().cloned())
                .collect();
            let mut params = init.params().to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut optimizer = Optimizer::new(
                cfg.adapt_optimizer,
                cfg.adapt_lr,
                cfg.weight_decay,
                params.len(),
            );
            let mut record = RunRecord::default();
            let mut selection = Selection::new();
            for epoch in 0..cfg.epochs {
                let loss = supervised_epoch(
                    init,
                    &mut params,
                    &mut pool,
                    &mut rng,
                    &mut optimizer,
                    cfg.inner_batch,
                    cfg.reduction,
                )?;
                let metrics = validate_candidate(init, &params, data.subnew_val)?;
                record.epochs.push(EpochRecord {
                    epoch,
                    train_loss: loss,
                    val_acc: metrics.acc,
                    val_mcc: metrics.mcc,
                    val_f1: metrics.f1,
                });
                selection.offer(epoch, metrics.mcc, &params);
            }
            record.best_epoch = selection.best_epoch;
            record.wall_secs = started.elapsed().as_secs_f64();
            Ok(TrainOutput {
                model: init.with_params(selection.best_params)?,
                record,
            })
        }
        BaselineKind::Transfer => {
            let old_pool = data.old_pool.ok_or(Error::MissingSplit {
                split: "old_pool".into(),
            })?;
            if old_pool.is_empty() {
                return Err(Error::MissingSplit {
                    split: "old_pool".into(),
                });
            }
            let started = Instant::now();
            let mut pool: Vec<Sample> = old_pool.samples().to_vec();
            let mut params = init.params().to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut optimizer = Optimizer::new(
                OptimizerKind::AdamW,
                cfg.inner_lr,
                cfg.weight_decay,
                params.len(),
            );
            let mut record = RunRecord::default();
            let mut selection = Selection::new();
            for epoch in 0..cfg.epochs {
                let loss = supervised_epoch(
                    init,
                    &mut params,
                    &mut pool,
                    &mut rng,
                    &mut optimizer,
                    cfg.inner_batch,
                    cfg.reduction,
                )?;
                let candidate = adapt(
                    init,
                    &params,
                    data.subnew_train_tasks,
                    cfg.adapt_lr,
                    cfg.adapt_steps,
                    cfg.adapt_optimizer,
                    cfg.weight_decay,
                    cfg.inner_batch,
                    cfg.reduction,
                    cfg.seed ^ ADAPT_SEED_SALT,
                )?;
                let metrics = validate_candidate(init, &candidate, data.subnew_val)?;
                record.epochs.push(EpochRecord {
                    epoch,
                    train_loss: loss,
                    val_acc: metrics.acc,
                    val_mcc: metrics.mcc,
                    val_f1: metrics.f1,
                });
                selection.offer(epoch, metrics.mcc, &candidate);
            }
            record.best_epoch = selection.best_epoch;
            record.wall_secs = started.elapsed().as_secs_f64();
            Ok(TrainOutput {
                model: init.with_params(selection.best_params)?,
                record,
            })
        }
    }
}
