//! The five training procedures: plain cross entropy, label smoothing,
//! teacher-free KD against a frozen pre-trained model, last-batch
//! self-distillation (DLB), and the double-reverse combination of offline
//! and last-batch distillation with adaptive weights (DRRNet-SKD), plus
//! the two-stage pipeline that trains the offline student first.
//!
//! Per-iteration teachers are realized two ways, matching the two readings
//! of "last iteration outputs": DLB replays the cached logits of the
//! previous batch on that same batch, while the double-reverse trainer
//! snapshots the previous iteration's parameters and evaluates them on the
//! current batch. Caches and snapshots reset at every epoch boundary, so
//! the first iteration of an epoch carries no distillation terms.

use crate::awa::{awa_weights, epoch_schedule, AwaConfig, ScheduleSpec, WeightPair};
use crate::data::{batches, Batch, Dataset};
use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy, kl_soft, kl_soft_per_sample, lsr_loss, soft_target_ce_with_mode,
};
use crate::model::{Model, ModelSpec, Snapshot};
use crate::optim::{lr_at, Adam, AdamConfig};
use crate::record::{EpochRecord, EvalRecord, IterationLog, RunRecord};
use crate::seed;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// The training procedures under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    Baseline,
    Lsr,
    TfKd,
    Dlb,
    DrrnetSkd,
}

impl TrainerKind {
    pub fn needs_teacher(&self) -> bool {
        matches!(self, TrainerKind::TfKd | TrainerKind::DrrnetSkd)
    }

    pub fn label(&self) -> &'static str {
        match self {
            TrainerKind::Baseline => "baseline",
            TrainerKind::Lsr => "lsr",
            TrainerKind::TfKd => "tf_kd",
            TrainerKind::Dlb => "dlb",
            TrainerKind::DrrnetSkd => "drrnet_skd",
        }
    }
}

impl std::str::FromStr for TrainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(TrainerKind::Baseline),
            "lsr" => Ok(TrainerKind::Lsr),
            "tf_kd" | "tfkd" => Ok(TrainerKind::TfKd),
            "dlb" => Ok(TrainerKind::Dlb),
            "drrnet_skd" | "drrnet" => Ok(TrainerKind::DrrnetSkd),
            other => Err(Error::config(format!("unknown trainer '{other}'"))),
        }
    }
}

/// Previous-iteration batch with the logits its model produced, for
/// last-batch replay. Always empty at iteration 0 of an epoch.
#[derive(Debug, Clone)]
pub struct BatchCache {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub logits: Tensor,
}

/// Everything a training loop needs beyond model and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Base seed for epoch shuffling and stage branching.
    pub seed: u64,
    pub adam: AdamConfig,
    pub lr_decay: f64,
    pub lr_decay_period: usize,
    /// Distillation temperature for the KL terms.
    pub tau: f64,
    /// Smoothing factor for the LSR trainer.
    pub lsr_eps: f64,
    /// Epoch weight schedule for the DLB and Tf-KD trainers.
    pub schedule: ScheduleSpec,
    /// Adaptive weight assignment knobs for the double-reverse trainer.
    pub awa: AwaConfig,
    /// Batch size used for evaluation passes.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            seed: 1,
            adam: AdamConfig::default(),
            lr_decay: 0.2,
            lr_decay_period: 7,
            tau: 3.0,
            lsr_eps: 0.1,
            schedule: ScheduleSpec::fixed(0.5),
            awa: AwaConfig::default(),
            eval_batch: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1".to_string()));
        }
        if self.tau <= 0.0 {
            return Err(Error::config(format!("tau must be positive: {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.lsr_eps) {
            return Err(Error::config(format!(
                "lsr_eps must be in [0,1): {}",
                self.lsr_eps
            )));
        }
        if self.eval_batch == 0 {
            return Err(Error::config("eval_batch must be >= 1".to_string()));
        }
        self.adam.validate()?;
        self.schedule.validate()?;
        self.awa.validate()?;
        Ok(())
    }
}

/// Top-1 accuracy and mean cross entropy of a model on a dataset, in eval
/// mode regardless of the model's stored mode.
pub fn evaluate(model: &Model, data: &Dataset, eval_batch: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::data(
            "cannot evaluate on an empty dataset".to_string(),
        ));
    }
    let mut hits = 0usize;
    let mut loss_sum = 0.0;
    let n = data.len();
    let mut start = 0;
    while start < n {
        let end = (start + eval_batch).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let sub = data.select(&indices)?;
        let logits = model.forward_eval(&sub.images)?;
        let pred = logits.argmax_rows()?;
        hits += pred.iter().zip(&sub.labels).filter(|(p, l)| p == l).count();
        let (ce, _) = cross_entropy(&logits, &sub.labels)?;
        loss_sum += ce.value * sub.labels.len() as f64;
        start = end;
    }
    Ok((hits as f64 / n as f64, loss_sum / n as f64))
}

/// One cross-entropy-only step.
pub fn step_baseline(
    model: &mut Model,
    opt: &mut Adam,
    lr: f64,
    batch: &Batch,
    iter: usize,
) -> Result<IterationLog> {
    if model.is_frozen() {
        return Err(Error::frozen("cannot train a frozen model".to_string()));
    }
    model.zero_grad();
    let logits = model.forward(&batch.inputs)?;
    let (loss, grad) = cross_entropy(&logits, &batch.labels)?;
    model.backward(&grad)?;
    opt.step(model, lr)?;
    Ok(IterationLog {
        iter,
        loss_total: loss.value,
        loss_ce: loss.value,
        loss_lb: 0.0,
        loss_kd: 0.0,
        w_lb_mean: None,
        w_kd_mean: None,
    })
}

/// One step against label-smoothed targets.
pub fn step_lsr(
    model: &mut Model,
    opt: &mut Adam,
    lr: f64,
    batch: &Batch,
    eps: f64,
    iter: usize,
) -> Result<IterationLog> {
    if model.is_frozen() {
        return Err(Error::frozen("cannot train a frozen model".to_string()));
    }
    model.zero_grad();
    let logits = model.forward(&batch.inputs)?;
    let (loss, grad) = lsr_loss(&logits, &batch.labels, eps)?;
    model.backward(&grad)?;
    opt.step(model, lr)?;
    Ok(IterationLog {
        iter,
        loss_total: loss.value,
        loss_ce: loss.value,
        loss_lb: 0.0,
        loss_kd: 0.0,
        w_lb_mean: None,
        w_kd_mean: None,
    })
}

/// One teacher-free KD step: `(1 - a) * CE + a * KL(teacher || student)`
/// with `a` resolved from the epoch schedule.
#[allow(clippy::too_many_arguments)]
pub fn step_tfkd(
    model: &mut Model,
    teacher: &Model,
    opt: &mut Adam,
    lr: f64,
    batch: &Batch,
    schedule: &ScheduleSpec,
    tau: f64,
    epoch: usize,
    total_epochs: usize,
    iter: usize,
) -> Result<IterationLog> {
    if !teacher.is_frozen() {
        return Err(Error::config("tf-kd teacher must be frozen".to_string()));
    }
    if teacher.spec().num_classes != model.spec().num_classes {
        return Err(Error::config(
            "teacher and student class counts differ".to_string(),
        ));
    }
    let a = epoch_schedule(schedule, epoch, total_epochs)?;
    let z_teacher = teacher.forward_eval(&batch.inputs)?;
    model.zero_grad();
    let logits = model.forward(&batch.inputs)?;
    let (ce, ce_grad) = cross_entropy(&logits, &batch.labels)?;
    let (kd, kd_grad) = kl_soft(&z_teacher, &logits, tau)?;
    let upstream = ce_grad.scale(1.0 - a).add(&kd_grad.scale(a))?;
    model.backward(&upstream)?;
    opt.step(model, lr)?;
    Ok(IterationLog {
        iter,
        loss_total: (1.0 - a) * ce.value + a * kd.value,
        loss_ce: ce.value,
        loss_lb: 0.0,
        loss_kd: kd.value,
        w_lb_mean: None,
        w_kd_mean: Some(a),
    })
}

/// One last-batch self-distillation step:
/// `CE(batch) + a * KL(cached logits || model(cached inputs))`. Returns the
/// cache for the next iteration, holding this batch and its detached
/// pre-step logits.
#[allow(clippy::too_many_arguments)]
pub fn step_dlb(
    model: &mut Model,
    cache: Option<&BatchCache>,
    opt: &mut Adam,
    lr: f64,
    batch: &Batch,
    schedule: &ScheduleSpec,
    tau: f64,
    epoch: usize,
    total_epochs: usize,
    iter: usize,
) -> Result<(IterationLog, BatchCache)> {
    if model.is_frozen() {
        return Err(Error::frozen("cannot train a frozen model".to_string()));
    }
    let a = epoch_schedule(schedule, epoch, total_epochs)?;
    model.zero_grad();
    let logits = model.forward(&batch.inputs)?;
    let (ce, ce_grad) = cross_entropy(&logits, &batch.labels)?;
    model.backward(&ce_grad)?;
    let mut loss_lb = 0.0;
    if let Some(cache) = cache {
        let replay = model.forward(&cache.inputs)?;
        let (kl, kl_grad) = kl_soft(&cache.logits, &replay, tau)?;
        model.backward(&kl_grad.scale(a))?;
        loss_lb = kl.value;
    }
    opt.step(model, lr)?;
    let new_cache = BatchCache {
        inputs: batch.inputs.clone(),
        labels: batch.labels.clone(),
        logits,
    };
    Ok((
        IterationLog {
            iter,
            loss_total: ce.value + a * loss_lb,
            loss_ce: ce.value,
            loss_lb,
            loss_kd: 0.0,
            w_lb_mean: Some(a),
            w_kd_mean: None,
        },
        new_cache,
    ))
}

/// One double-reverse step. The previous-iteration teacher is the snapshot
/// restored into `evaluator` and run on the current batch; the offline
/// teacher is the frozen `offline` model. Soft-target cross entropies of
/// both teachers set the adaptive weights, and the composite loss is
/// `CE + mean(w_lb ⊙ KL_lb) + mean(w_kd ⊙ KL_kd)` with per-sample KL terms.
/// Returns the pre-step parameter snapshot for the next iteration. With no
/// previous snapshot both distillation terms are dropped.
#[allow(clippy::too_many_arguments)]
pub fn step_drrnet(
    model: &mut Model,
    offline: &Model,
    prev: Option<&Snapshot>,
    evaluator: &mut Model,
    opt: &mut Adam,
    lr: f64,
    batch: &Batch,
    awa_cfg: &AwaConfig,
    tau: f64,
    iter: usize,
) -> Result<(IterationLog, Snapshot)> {
    if !offline.is_frozen() {
        return Err(Error::config("offline student must be frozen".to_string()));
    }
    if offline.spec().num_classes != model.spec().num_classes {
        return Err(Error::config(
            "offline and student class counts differ".to_string(),
        ));
    }
    let snap = model.snapshot();
    let log = match prev {
        None => {
            let mut log = step_baseline(model, opt, lr, batch, iter)?;
            log.w_lb_mean = None;
            log.w_kd_mean = None;
            log
        }
        Some(prev) => {
            evaluator.restore_into(prev)?;
            let z_prev = evaluator.forward_eval(&batch.inputs)?;
            let z_off = offline.forward_eval(&batch.inputs)?;
            let l_on = soft_target_ce_with_mode(
                &z_prev,
                &batch.labels,
                awa_cfg.alpha_tau,
                awa_cfg.softening,
            )?;
            let l_of = soft_target_ce_with_mode(
                &z_off,
                &batch.labels,
                awa_cfg.alpha_tau,
                awa_cfg.softening,
            )?;
            let weights = awa_weights(&l_on, &l_of, awa_cfg)?;
            let mut log = step_drrnet_with_weights(
                model, &z_prev, &z_off, opt, lr, batch, &weights, tau, iter,
            )?;
            // The logged pair is the batch-level weight (assigned from the
            // batch-mean losses), the scalar a trajectory plot samples; it
            // satisfies w_kd = max(alpha - w_lb, 0) by construction even
            // when the applied weights vary per sample.
            let batch_pair = awa_weights(
                &l_on,
                &l_of,
                &AwaConfig {
                    granularity: crate::awa::Granularity::PerBatch,
                    ..*awa_cfg
                },
            )?;
            log.w_lb_mean = Some(batch_pair.w_lb.data()[0]);
            log.w_kd_mean = Some(batch_pair.w_kd.data()[0]);
            log
        }
    };
    Ok((log, snap))
}

/// The weighted core of [`step_drrnet`], with teacher logits and weights
/// already resolved. Exposed separately so the weight path can be pinned
/// in tests (zero weights must reproduce the baseline step exactly).
#[allow(clippy::too_many_arguments)]
pub fn step_drrnet_with_weights(
    model: &mut Model,
    z_prev: &Tensor,
    z_off: &Tensor,
    opt: &mut Adam,
    lr: f64,
    batch: &Batch,
    weights: &WeightPair,
    tau: f64,
    iter: usize,
) -> Result<IterationLog> {
    if model.is_frozen() {
        return Err(Error::frozen("cannot train a frozen model".to_string()));
    }
    let b = batch.labels.len();
    if weights.w_lb.len() != b || weights.w_kd.len() != b {
        return Err(Error::shape(format!(
            "weight vectors of {} for batch of {b}",
            weights.w_lb.len()
        )));
    }
    model.zero_grad();
    let logits = model.forward(&batch.inputs)?;
    let (ce, ce_grad) = cross_entropy(&logits, &batch.labels)?;
    let (kl_lb, g_lb) = kl_soft_per_sample(z_prev, &logits, tau)?;
    let (kl_kd, g_kd) = kl_soft_per_sample(z_off, &logits, tau)?;
    let c = logits.shape()[1];
    let bf = b as f64;
    let mut upstream = ce_grad;
    {
        let up = upstream.data_mut();
        for i in 0..b {
            let wl = weights.w_lb.data()[i];
            let wk = weights.w_kd.data()[i];
            for j in 0..c {
                up[i * c + j] += (wl * g_lb.data()[i * c + j] + wk * g_kd.data()[i * c + j]) / bf;
            }
        }
    }
    model.backward(&upstream)?;
    opt.step(model, lr)?;
    let loss_lb = weights.w_lb.mul(&kl_lb)?.mean_all()?;
    let loss_kd = weights.w_kd.mul(&kl_kd)?.mean_all()?;
    Ok(IterationLog {
        iter,
        loss_total: ce.value + loss_lb + loss_kd,
        loss_ce: ce.value,
        loss_lb,
        loss_kd,
        w_lb_mean: Some(weights.w_lb_mean()),
        w_kd_mean: Some(weights.w_kd_mean()),
    })
}

const TAG_MODEL: u64 = 1;
const TAG_RUN: u64 = 2;
const TAG_STAGE1: u64 = 3;

const TAG_EPOCH_BASE: u64 = 100;

/// Full training loop: seeded per-epoch shuffle, step-decayed learning
/// rate, per-iteration dispatch on the trainer kind, and a held-out
/// evaluation after every epoch. `teacher` is required (and must be
/// frozen) for the Tf-KD and double-reverse trainers and rejected
/// otherwise.
pub fn train(
    kind: TrainerKind,
    model: &mut Model,
    teacher: Option<&Model>,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<RunRecord> {
    cfg.validate()?;
    if kind.needs_teacher() != teacher.is_some() {
        return Err(Error::config(format!(
            "trainer {} {} a teacher model",
            kind.label(),
            if kind.needs_teacher() {
                "requires"
            } else {
                "does not take"
            }
        )));
    }
    if model.is_frozen() {
        return Err(Error::frozen("cannot train a frozen model".to_string()));
    }
    let mut opt = Adam::new(cfg.adam)?;
    let mut evaluator = match kind {
        TrainerKind::DrrnetSkd => Some(Model::build(model.spec(), 0)?),
        _ => None,
    };

    let (train_acc, _) = evaluate(model, train_set, cfg.eval_batch)?;
    let (test_acc, _) = evaluate(model, test_set, cfg.eval_batch)?;
    let mut record = RunRecord::new(
        kind,
        cfg.seed,
        EvalRecord {
            train_acc,
            test_acc,
        },
    );

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg.adam.lr0, cfg.lr_decay, cfg.lr_decay_period)?;
        model.set_mode(crate::model::Mode::Train)?;
        let mut cache: Option<BatchCache> = None;
        let mut prev: Option<Snapshot> = None;
        let mut iterations = Vec::new();
        let epoch_batches = batches(
            train_set,
            cfg.batch_size,
            seed::derive(cfg.seed, TAG_EPOCH_BASE + epoch as u64),
        )?;
        for (i, batch) in epoch_batches.iter().enumerate() {
            let log = match kind {
                TrainerKind::Baseline => step_baseline(model, &mut opt, lr, batch, i)?,
                TrainerKind::Lsr => step_lsr(model, &mut opt, lr, batch, cfg.lsr_eps, i)?,
                TrainerKind::TfKd => step_tfkd(
                    model,
                    teacher.expect("checked above"),
                    &mut opt,
                    lr,
                    batch,
                    &cfg.schedule,
                    cfg.tau,
                    epoch,
                    cfg.epochs,
                    i,
                )?,
                TrainerKind::Dlb => {
                    let (log, new_cache) = step_dlb(
                        model,
                        cache.as_ref(),
                        &mut opt,
                        lr,
                        batch,
                        &cfg.schedule,
                        cfg.tau,
                        epoch,
                        cfg.epochs,
                        i,
                    )?;
                    cache = Some(new_cache);
                    log
                }
                TrainerKind::DrrnetSkd => {
                    let (log, snap) = step_drrnet(
                        model,
                        teacher.expect("checked above"),
                        prev.as_ref(),
                        evaluator.as_mut().expect("built above"),
                        &mut opt,
                        lr,
                        batch,
                        &cfg.awa,
                        cfg.tau,
                        i,
                    )?;
                    prev = Some(snap);
                    log
                }
            };
            iterations.push(log);
        }
        model.set_mode(crate::model::Mode::Eval)?;
        let (train_acc, _) = evaluate(model, train_set, cfg.eval_batch)?;
        let (test_acc, _) = evaluate(model, test_set, cfg.eval_batch)?;
        let train_loss = if iterations.is_empty() {
            0.0
        } else {
            iterations.iter().map(|l| l.loss_total).sum::<f64>() / iterations.len() as f64
        };
        record.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            train_acc,
            test_acc,
            iterations,
        });
    }
    Ok(record)
}

/// Result of the two-phase pipeline.
#[derive(Debug)]
pub struct TwoStageResult {
    pub offline: Model,
    pub student: Model,
    pub stage1: RunRecord,
    pub stage2: RunRecord,
}

/// Two-phase training: a fresh model is trained with last-batch
/// self-distillation on an independent seed branch and frozen as the
/// offline student, then a second fresh model is trained with the
/// double-reverse objective against it. The stage-2 student uses the same
/// per-seed init and shuffle branch as the single-stage trainers, so
/// cross-trainer comparisons at one seed differ only in the objective.
pub fn two_stage(
    spec: &ModelSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TwoStageResult> {
    let s1 = seed::derive(cfg.seed, TAG_STAGE1);
    let mut offline = Model::build(spec, seed::derive(s1, TAG_MODEL))?;
    let cfg1 = TrainConfig {
        seed: seed::derive(s1, TAG_RUN),
        ..cfg.clone()
    };
    let stage1 = train(
        TrainerKind::Dlb,
        &mut offline,
        None,
        train_set,
        test_set,
        &cfg1,
    )?;
    offline.freeze();

    let mut student = Model::build(spec, model_seed(cfg.seed))?;
    let cfg2 = TrainConfig {
        seed: run_seed(cfg.seed),
        ..cfg.clone()
    };
    let stage2 = train(
        TrainerKind::DrrnetSkd,
        &mut student,
        Some(&offline),
        train_set,
        test_set,
        &cfg2,
    )?;
    Ok(TwoStageResult {
        offline,
        student,
        stage1,
        stage2,
    })
}

/// Pre-trains a same-spec teacher with plain cross entropy and freezes it;
/// the teacher trains on the same independent seed branch as
/// [`two_stage`]'s stage 1. This is how the Tf-KD trainer obtains its
/// frozen equal-size teacher.
pub fn pretrain_teacher(
    spec: &ModelSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model, RunRecord)> {
    let s1 = seed::derive(cfg.seed, TAG_STAGE1);
    let mut teacher = Model::build(spec, seed::derive(s1, TAG_MODEL))?;
    let cfg1 = TrainConfig {
        seed: seed::derive(s1, TAG_RUN),
        ..cfg.clone()
    };
    let record = train(
        TrainerKind::Baseline,
        &mut teacher,
        None,
        train_set,
        test_set,
        &cfg1,
    )?;
    teacher.freeze();
    Ok((teacher, record))
}

/// Seed used to build a model for a given run seed.
pub fn model_seed(run_seed: u64) -> u64 {
    seed::derive(run_seed, TAG_MODEL)
}

/// Seed used for epoch shuffling streams of a given run seed.
pub fn run_seed(base: u64) -> u64 {
    seed::derive(base, TAG_RUN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitTag;
    use crate::model::{InputShape, ModelKind};

    fn toy_spec() -> ModelSpec {
        ModelSpec {
            kind: ModelKind::Mlp,
            input: InputShape::Flat(2),
            hidden: vec![8],
            num_classes: 2,
            use_batchnorm: false,
        }
    }

    /// Linearly separable 2-D two-class set.
    fn separable_dataset(n_per_class: usize, split: SplitTag) -> Dataset {
        let n = 2 * n_per_class;
        let mut data = Vec::with_capacity(n * 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n_per_class {
            let t = i as f64 / n_per_class as f64;
            data.extend_from_slice(&[1.0 + 0.3 * t, 0.8 - 0.2 * t]);
            labels.push(0);
            data.extend_from_slice(&[-1.0 - 0.25 * t, -0.7 + 0.3 * t]);
            labels.push(1);
        }
        Dataset::new(
            Tensor::new(vec![n, 1, 1, 2], data).unwrap(),
            labels,
            vec!["a".into(), "b".into()],
            split,
        )
        .unwrap()
    }

    fn flat_batch(d: &Dataset) -> Batch {
        let n = d.len();
        Batch {
            inputs: d.images.reshape(vec![n, 2]).unwrap(),
            labels: d.labels.clone(),
        }
    }

    fn toy_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            seed: 5,
            adam: AdamConfig {
                lr0: 0.01,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    /// Dataset with flat input shape for use with `train` directly.
    fn separable_flat(n_per_class: usize, split: SplitTag) -> Dataset {
        let d = separable_dataset(n_per_class, split);
        let n = d.len();
        Dataset::new(
            d.images.reshape(vec![n, 1, 1, 2]).unwrap(),
            d.labels,
            d.class_names,
            split,
        )
        .unwrap()
    }

    fn toy_model_spec() -> ModelSpec {
        ModelSpec {
            kind: ModelKind::Mlp,
            input: InputShape::Image {
                channels: 1,
                height: 1,
                width: 2,
            },
            hidden: vec![8],
            num_classes: 2,
            use_batchnorm: false,
        }
    }

    #[test]
    fn baseline_log_has_zero_distillation_terms() {
        let mut model = Model::build(&toy_spec(), 1).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let batch = flat_batch(&separable_dataset(4, SplitTag::Train));
        let log = step_baseline(&mut model, &mut opt, 0.01, &batch, 0).unwrap();
        assert_eq!(log.loss_lb, 0.0);
        assert_eq!(log.loss_kd, 0.0);
        assert_eq!(log.loss_total, log.loss_ce);
        assert_eq!(log.w_lb_mean, None);
    }

    #[test]
    fn baseline_fits_separable_toy_set() {
        let mut model = Model::build(&toy_spec(), 2).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let d = separable_dataset(16, SplitTag::Train);
        let batch = flat_batch(&d);
        for i in 0..100 {
            step_baseline(&mut model, &mut opt, 0.01, &batch, i).unwrap();
        }
        let logits = model
            .forward_eval(&batch.inputs.reshape(vec![32, 2]).unwrap())
            .unwrap();
        let pred = logits.argmax_rows().unwrap();
        let hits = pred
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
        assert_eq!(hits, 32);
    }

    #[test]
    fn baseline_streams_are_deterministic() {
        let run = || {
            let mut model = Model::build(&toy_spec(), 3).unwrap();
            let mut opt = Adam::new(AdamConfig::default()).unwrap();
            let batch = flat_batch(&separable_dataset(8, SplitTag::Train));
            (0..20)
                .map(|i| step_baseline(&mut model, &mut opt, 0.01, &batch, i).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn lsr_zero_eps_equals_baseline() {
        let batch = flat_batch(&separable_dataset(8, SplitTag::Train));
        let mut a = Model::build(&toy_spec(), 4).unwrap();
        let mut b = a.clone();
        let mut oa = Adam::new(AdamConfig::default()).unwrap();
        let mut ob = Adam::new(AdamConfig::default()).unwrap();
        for i in 0..10 {
            let la = step_baseline(&mut a, &mut oa, 0.01, &batch, i).unwrap();
            let lb = step_lsr(&mut b, &mut ob, 0.01, &batch, 0.0, i).unwrap();
            assert_eq!(la.loss_total, lb.loss_total);
        }
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.value, pb.value);
        }
    }

    #[test]
    fn lsr_uniform_start_first_loss_is_ln_c() {
        // Zero the output layer so logits start uniform.
        let mut model = Model::build(&toy_spec(), 5).unwrap();
        for p in model.params_mut() {
            p.value.data_mut().fill(0.0);
        }
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let batch = flat_batch(&separable_dataset(4, SplitTag::Train));
        let log = step_lsr(&mut model, &mut opt, 0.01, &batch, 0.1, 0).unwrap();
        assert!((log.loss_total - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn tfkd_zero_weight_equals_baseline() {
        let batch = flat_batch(&separable_dataset(8, SplitTag::Train));
        let mut teacher = Model::build(&toy_spec(), 9).unwrap();
        teacher.freeze();
        let mut a = Model::build(&toy_spec(), 6).unwrap();
        let mut b = a.clone();
        let mut oa = Adam::new(AdamConfig::default()).unwrap();
        let mut ob = Adam::new(AdamConfig::default()).unwrap();
        let sched = ScheduleSpec::fixed(0.0);
        for i in 0..10 {
            step_baseline(&mut a, &mut oa, 0.01, &batch, i).unwrap();
            step_tfkd(
                &mut b, &teacher, &mut ob, 0.01, &batch, &sched, 3.0, 0, 10, i,
            )
            .unwrap();
        }
        for (pa, pb) in a.params().iter().zip(b.params()) {
            for (va, vb) in pa.value.data().iter().zip(pb.value.data()) {
                assert!((va - vb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tfkd_identical_teacher_full_weight_is_noop() {
        let batch = flat_batch(&separable_dataset(8, SplitTag::Train));
        let mut student = Model::build(&toy_spec(), 7).unwrap();
        let mut teacher = student.clone();
        teacher.freeze();
        let before: Vec<Tensor> = student.params().iter().map(|p| p.value.clone()).collect();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let sched = ScheduleSpec::fixed(1.0);
        let log = step_tfkd(
            &mut student,
            &teacher,
            &mut opt,
            0.01,
            &batch,
            &sched,
            3.0,
            0,
            10,
            0,
        )
        .unwrap();
        assert!(log.loss_total.abs() < 1e-12);
        for (p, b) in student.params().iter().zip(&before) {
            assert_eq!(&p.value, b);
        }
    }

    #[test]
    fn tfkd_unfixed_schedule_endpoints() {
        let sched = ScheduleSpec::linear_down();
        assert_eq!(epoch_schedule(&sched, 0, 10).unwrap(), 1.0);
        assert_eq!(epoch_schedule(&sched, 10, 10).unwrap(), 0.0);
    }

    #[test]
    fn tfkd_rejects_unfrozen_teacher() {
        let batch = flat_batch(&separable_dataset(2, SplitTag::Train));
        let teacher = Model::build(&toy_spec(), 1).unwrap();
        let mut student = Model::build(&toy_spec(), 2).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let sched = ScheduleSpec::fixed(0.5);
        assert!(matches!(
            step_tfkd(
                &mut student,
                &teacher,
                &mut opt,
                0.01,
                &batch,
                &sched,
                3.0,
                0,
                10,
                0
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dlb_first_iteration_has_no_replay_term() {
        let batch = flat_batch(&separable_dataset(8, SplitTag::Train));
        let mut model = Model::build(&toy_spec(), 8).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let sched = ScheduleSpec::fixed(0.5);
        let (log, cache) = step_dlb(
            &mut model, None, &mut opt, 0.01, &batch, &sched, 3.0, 0, 10, 0,
        )
        .unwrap();
        assert_eq!(log.loss_lb, 0.0);
        assert_eq!(log.loss_total, log.loss_ce);
        assert_eq!(cache.labels, batch.labels);
    }

    #[test]
    fn dlb_unchanged_parameters_replay_to_zero_kl() {
        let batch = flat_batch(&separable_dataset(8, SplitTag::Train));
        let mut model = Model::build(&toy_spec(), 9).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let sched = ScheduleSpec::fixed(0.5);
        // lr = 0 leaves parameters untouched, so the replayed logits match
        // the cached ones exactly.
        let (_, cache) = step_dlb(
            &mut model, None, &mut opt, 0.0, &batch, &sched, 3.0, 0, 10, 0,
        )
        .unwrap();
        let (log, _) = step_dlb(
            &mut model,
            Some(&cache),
            &mut opt,
            0.0,
            &batch,
            &sched,
            3.0,
            0,
            10,
            1,
        )
        .unwrap();
        assert!(log.loss_lb.abs() < 1e-12);
    }

    #[test]
    fn dlb_warmup_then_linear_weight_sequence() {
        let sched = ScheduleSpec::warmup_then_linear_up(50, 0.5);
        let mut seq = Vec::new();
        for t in 0..=100 {
            seq.push(epoch_schedule(&sched, t, 100).unwrap());
        }
        for v in &seq[..50] {
            assert_eq!(*v, 0.5);
        }
        assert_eq!(seq[50], 0.5);
        assert!((seq[51] - 0.51).abs() < 1e-12);
        assert!((seq[52] - 0.52).abs() < 1e-12);
        assert_eq!(seq[100], 1.0);
    }

    #[test]
    fn drrnet_first_iteration_is_pure_ce() {
        let batch = flat_batch(&separable_dataset(8, SplitTag::Train));
        let mut offline = Model::build(&toy_spec(), 10).unwrap();
        offline.freeze();
        let mut model = Model::build(&toy_spec(), 11).unwrap();
        let mut evaluator = Model::build(&toy_spec(), 0).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let (log, _) = step_drrnet(
            &mut model,
            &offline,
            None,
            &mut evaluator,
            &mut opt,
            0.01,
            &batch,
            &AwaConfig::default(),
            3.0,
            0,
        )
        .unwrap();
        assert_eq!(log.loss_total, log.loss_ce);
        assert_eq!(log.w_lb_mean, None);
    }

    #[test]
    fn drrnet_all_equal_models_reduce_to_ce_step() {
        // offline == prev snapshot == current model, alpha_tau = 1:
        // w_lb = 1, both KL terms vanish, the step equals a pure CE step.
        let batch = flat_batch(&separable_dataset(8, SplitTag::Train));
        let base = Model::build(&toy_spec(), 12).unwrap();
        let mut offline = base.clone();
        offline.freeze();
        let snap = base.snapshot();
        let mut model = base.clone();
        let mut reference = base.clone();
        let mut evaluator = Model::build(&toy_spec(), 0).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let mut opt_ref = Adam::new(AdamConfig::default()).unwrap();
        let awa = AwaConfig {
            alpha: 1.3,
            alpha_tau: 1.0,
            ..AwaConfig::default()
        };
        let (log, _) = step_drrnet(
            &mut model,
            &offline,
            Some(&snap),
            &mut evaluator,
            &mut opt,
            0.01,
            &batch,
            &awa,
            3.0,
            0,
        )
        .unwrap();
        let ref_log = step_baseline(&mut reference, &mut opt_ref, 0.01, &batch, 0).unwrap();
        assert!((log.w_lb_mean.unwrap() - 1.0).abs() < 1e-12);
        assert!((log.w_kd_mean.unwrap() - 0.3).abs() < 1e-12);
        assert!(log.loss_lb.abs() < 1e-12);
        assert!(log.loss_kd.abs() < 1e-12);
        assert!((log.loss_ce - ref_log.loss_ce).abs() < 1e-12);
        for (pa, pb) in model.params().iter().zip(reference.params()) {
            for (va, vb) in pa.value.data().iter().zip(pb.value.data()) {
                assert!((va - vb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn drrnet_zero_weights_match_baseline_update() {
        let batch = flat_batch(&separable_dataset(8, SplitTag::Train));
        let base = Model::build(&toy_spec(), 13).unwrap();
        let prev = Model::build(&toy_spec(), 14).unwrap(); // deliberately different
        let mut offline = Model::build(&toy_spec(), 15).unwrap();
        offline.freeze();
        let z_prev = prev.forward_eval(&batch.inputs).unwrap();
        let z_off = offline.forward_eval(&batch.inputs).unwrap();
        let mut model = base.clone();
        let mut reference = base.clone();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let mut opt_ref = Adam::new(AdamConfig::default()).unwrap();
        let b = batch.labels.len();
        let zero = WeightPair {
            w_lb: Tensor::zeros(vec![b]),
            w_kd: Tensor::zeros(vec![b]),
        };
        step_drrnet_with_weights(
            &mut model, &z_prev, &z_off, &mut opt, 0.01, &batch, &zero, 3.0, 0,
        )
        .unwrap();
        step_baseline(&mut reference, &mut opt_ref, 0.01, &batch, 0).unwrap();
        for (pa, pb) in model.params().iter().zip(reference.params()) {
            for (va, vb) in pa.value.data().iter().zip(pb.value.data()) {
                assert!((va - vb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn drrnet_bad_prev_good_offline_weights_favor_offline() {
        // Soft-target CE of a random previous snapshot is worse than that of
        // a trained offline teacher, so the offline weight dominates.
        let train_set = separable_flat(16, SplitTag::Train);
        let test_set = separable_flat(8, SplitTag::Test);
        let mut offline = Model::build(&toy_model_spec(), 20).unwrap();
        let cfg = toy_cfg(6);
        train(
            TrainerKind::Baseline,
            &mut offline,
            None,
            &train_set,
            &test_set,
            &cfg,
        )
        .unwrap();
        offline.freeze();
        let bad_prev = Model::build(&toy_model_spec(), 999).unwrap().snapshot();
        let mut model = Model::build(&toy_model_spec(), 21).unwrap();
        let mut evaluator = Model::build(&toy_model_spec(), 0).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let bs = batches(&train_set, 8, 1).unwrap();
        let (log, _) = step_drrnet(
            &mut model,
            &offline,
            Some(&bad_prev),
            &mut evaluator,
            &mut opt,
            0.01,
            &bs[0],
            &AwaConfig::default(),
            3.0,
            0,
        )
        .unwrap();
        assert!(log.w_kd_mean.unwrap() > log.w_lb_mean.unwrap());
    }

    #[test]
    fn drrnet_snapshot_is_pre_step_parameters() {
        let batch = flat_batch(&separable_dataset(8, SplitTag::Train));
        let mut offline = Model::build(&toy_spec(), 16).unwrap();
        offline.freeze();
        let mut model = Model::build(&toy_spec(), 17).unwrap();
        let mut evaluator = Model::build(&toy_spec(), 0).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let mut prev: Option<Snapshot> = None;
        for i in 0..4 {
            let before: Vec<Tensor> = model.params().iter().map(|p| p.value.clone()).collect();
            let (_, snap) = step_drrnet(
                &mut model,
                &offline,
                prev.as_ref(),
                &mut evaluator,
                &mut opt,
                0.01,
                &batch,
                &AwaConfig::default(),
                3.0,
                i,
            )
            .unwrap();
            assert_eq!(snap.values, before);
            prev = Some(snap);
        }
    }

    #[test]
    fn drrnet_teachers_accumulate_no_gradients() {
        let batch = flat_batch(&separable_dataset(8, SplitTag::Train));
        let mut offline = Model::build(&toy_spec(), 18).unwrap();
        offline.freeze();
        let snap = Model::build(&toy_spec(), 19).unwrap().snapshot();
        let mut model = Model::build(&toy_spec(), 20).unwrap();
        let mut evaluator = Model::build(&toy_spec(), 0).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        step_drrnet(
            &mut model,
            &offline,
            Some(&snap),
            &mut evaluator,
            &mut opt,
            0.01,
            &batch,
            &AwaConfig::default(),
            3.0,
            0,
        )
        .unwrap();
        for p in offline.params().iter().chain(evaluator.params().iter()) {
            assert!(p.grad.data().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn drrnet_rejects_unfrozen_offline() {
        let batch = flat_batch(&separable_dataset(2, SplitTag::Train));
        let offline = Model::build(&toy_spec(), 1).unwrap();
        let mut model = Model::build(&toy_spec(), 2).unwrap();
        let mut evaluator = Model::build(&toy_spec(), 0).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        assert!(matches!(
            step_drrnet(
                &mut model,
                &offline,
                None,
                &mut evaluator,
                &mut opt,
                0.01,
                &batch,
                &AwaConfig::default(),
                3.0,
                0,
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn train_zero_epochs_keeps_only_initial_eval() {
        let train_set = separable_flat(8, SplitTag::Train);
        let test_set = separable_flat(4, SplitTag::Test);
        let mut model = Model::build(&toy_model_spec(), 30).unwrap();
        let rec = train(
            TrainerKind::Baseline,
            &mut model,
            None,
            &train_set,
            &test_set,
            &toy_cfg(0),
        )
        .unwrap();
        assert!(rec.epochs.is_empty());
        assert!(rec.initial.test_acc >= 0.0);
    }

    #[test]
    fn train_is_deterministic() {
        let train_set = separable_flat(12, SplitTag::Train);
        let test_set = separable_flat(6, SplitTag::Test);
        let run = || {
            let mut model = Model::build(&toy_model_spec(), 31).unwrap();
            let rec = train(
                TrainerKind::Dlb,
                &mut model,
                None,
                &train_set,
                &test_set,
                &toy_cfg(4),
            )
            .unwrap();
            (rec, model.params_sha256())
        };
        let (ra, ha) = run();
        let (rb, hb) = run();
        assert_eq!(ra, rb);
        assert_eq!(ha, hb);
    }

    #[test]
    fn train_teacher_requirements_enforced() {
        let train_set = separable_flat(4, SplitTag::Train);
        let test_set = separable_flat(4, SplitTag::Test);
        let mut model = Model::build(&toy_model_spec(), 32).unwrap();
        assert!(matches!(
            train(
                TrainerKind::TfKd,
                &mut model,
                None,
                &train_set,
                &test_set,
                &toy_cfg(1)
            ),
            Err(Error::Config(_))
        ));
        let teacher = Model::build(&toy_model_spec(), 33).unwrap();
        let frozen = {
            let mut t = teacher.clone();
            t.freeze();
            t
        };
        assert!(matches!(
            train(
                TrainerKind::Baseline,
                &mut model,
                Some(&frozen),
                &train_set,
                &test_set,
                &toy_cfg(1)
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn iteration_totals_recompose_per_trainer() {
        let train_set = separable_flat(12, SplitTag::Train);
        let test_set = separable_flat(6, SplitTag::Test);
        let cfg = TrainConfig {
            schedule: ScheduleSpec::fixed(0.7),
            ..toy_cfg(3)
        };
        let mut model = Model::build(&toy_model_spec(), 34).unwrap();
        let rec = train(
            TrainerKind::Dlb,
            &mut model,
            None,
            &train_set,
            &test_set,
            &cfg,
        )
        .unwrap();
        for ep in &rec.epochs {
            for log in &ep.iterations {
                let a = log.w_lb_mean.unwrap();
                assert!((log.loss_total - (log.loss_ce + a * log.loss_lb)).abs() < 1e-9);
            }
        }
        let (teacher, _) =
            pretrain_teacher(&toy_model_spec(), &train_set, &test_set, &cfg).unwrap();
        let mut student = Model::build(&toy_model_spec(), 35).unwrap();
        let rec = train(
            TrainerKind::TfKd,
            &mut student,
            Some(&teacher),
            &train_set,
            &test_set,
            &cfg,
        )
        .unwrap();
        for ep in &rec.epochs {
            for log in &ep.iterations {
                let a = log.w_kd_mean.unwrap();
                let want = (1.0 - a) * log.loss_ce + a * log.loss_kd;
                assert!((log.loss_total - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_stage_offline_frozen_and_shapes_match() {
        let train_set = separable_flat(12, SplitTag::Train);
        let test_set = separable_flat(6, SplitTag::Test);
        let result = two_stage(&toy_model_spec(), &train_set, &test_set, &toy_cfg(3)).unwrap();
        assert!(result.offline.is_frozen());
        let so: Vec<_> = result
            .offline
            .params()
            .iter()
            .map(|p| p.value.shape().to_vec())
            .collect();
        let ss: Vec<_> = result
            .student
            .params()
            .iter()
            .map(|p| p.value.shape().to_vec())
            .collect();
        assert_eq!(so, ss);
        assert_eq!(result.stage1.trainer, TrainerKind::Dlb);
        assert_eq!(result.stage2.trainer, TrainerKind::DrrnetSkd);
        // Drrnet iterations after the first carry both weights.
        let some_weighted = result
            .stage2
            .epochs
            .iter()
            .flat_map(|e| &e.iterations)
            .any(|l| l.w_lb_mean.is_some() && l.w_kd_mean.is_some());
        assert!(some_weighted);
        for ep in &result.stage2.epochs {
            for log in &ep.iterations {
                assert!((log.loss_total - (log.loss_ce + log.loss_lb + log.loss_kd)).abs() < 1e-9);
            }
        }
    }
}
