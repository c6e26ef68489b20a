//! Per-run metric records and their line-delimited serialization.
//!
//! A run serializes as one JSON object per line: a `meta` line carrying the
//! schema version, trainer, seed, and initial evaluation, then per-epoch
//! blocks of `iter` lines followed by one `epoch` line. Accuracies are
//! stored as fractions in [0, 1].

use crate::distill::TrainerKind;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

pub const SCHEMA_VERSION: u32 = 1;

/// One optimizer step. `loss_lb` / `loss_kd` hold the distillation terms as
/// they enter the total for the active trainer: unweighted means for the
/// schedule-weighted trainers (whose scalar weight is logged in the
/// matching `w_*_mean` field), already weight-folded means for the
/// double-reverse trainer whose weights vary per sample. For the
/// double-reverse trainer `w_*_mean` carries the batch-level adaptive
/// pair (assigned from batch-mean losses), which keeps
/// `w_kd == max(alpha - w_lb, 0)` row-exact in emitted trajectories.
/// `w_*_mean` is `None` on iterations where the weight does not exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_lb: f64,
    pub loss_kd: f64,
    pub w_lb_mean: Option<f64>,
    pub w_kd_mean: Option<f64>,
}

/// End-of-epoch metrics; `train_loss` is the mean of the iteration totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    #[serde(skip)]
    pub iterations: Vec<IterationLog>,
}

/// Accuracy of the untrained model, recorded before the first epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Full metrics stream for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub schema_version: u32,
    pub trainer: TrainerKind,
    pub seed: u64,
    pub initial: EvalRecord,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Meta {
        schema_version: u32,
        trainer: TrainerKind,
        seed: u64,
        initial: EvalRecord,
    },
    Iter {
        epoch: usize,
        #[serde(flatten)]
        log: IterationLog,
    },
    Epoch {
        epoch: usize,
        lr: f64,
        train_loss: f64,
        train_acc: f64,
        test_acc: f64,
    },
}

impl RunRecord {
    pub fn new(trainer: TrainerKind, seed: u64, initial: EvalRecord) -> Self {
        RunRecord {
            schema_version: SCHEMA_VERSION,
            trainer,
            seed,
            initial,
            epochs: Vec::new(),
        }
    }

    /// Final test accuracy, or the initial one when no epoch ran.
    pub fn final_test_acc(&self) -> f64 {
        self.epochs
            .last()
            .map(|e| e.test_acc)
            .unwrap_or(self.initial.test_acc)
    }

    pub fn final_train_acc(&self) -> f64 {
        self.epochs
            .last()
            .map(|e| e.train_acc)
            .unwrap_or(self.initial.train_acc)
    }

    /// Writes the stream; `include_iterations` controls whether per-step
    /// lines are emitted alongside the per-epoch ones.
    pub fn write_jsonl(&self, mut w: impl Write, include_iterations: bool) -> Result<()> {
        let mut emit = |line: &Line| -> Result<()> {
            let buf =
                serde_json::to_string(line).map_err(|e| Error::data(format!("encode: {e}")))?;
            writeln!(w, "{buf}")?;
            Ok(())
        };
        emit(&Line::Meta {
            schema_version: self.schema_version,
            trainer: self.trainer,
            seed: self.seed,
            initial: self.initial,
        })?;
        for ep in &self.epochs {
            if include_iterations {
                for log in &ep.iterations {
                    emit(&Line::Iter {
                        epoch: ep.epoch,
                        log: log.clone(),
                    })?;
                }
            }
            emit(&Line::Epoch {
                epoch: ep.epoch,
                lr: ep.lr,
                train_loss: ep.train_loss,
                train_acc: ep.train_acc,
                test_acc: ep.test_acc,
            })?;
        }
        Ok(())
    }

    /// Parses a stream produced by [`RunRecord::write_jsonl`].
    pub fn read_jsonl(r: impl BufRead) -> Result<RunRecord> {
        let mut record: Option<RunRecord> = None;
        let mut pending: Vec<(usize, IterationLog)> = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|e| Error::data(format!("line {}: {e}", lineno + 1)))?;
            match parsed {
                Line::Meta {
                    schema_version,
                    trainer,
                    seed,
                    initial,
                } => {
                    if schema_version != SCHEMA_VERSION {
                        return Err(Error::data(format!(
                            "unsupported schema version {schema_version}"
                        )));
                    }
                    record = Some(RunRecord::new(trainer, seed, initial));
                }
                Line::Iter { epoch, log } => pending.push((epoch, log)),
                Line::Epoch {
                    epoch,
                    lr,
                    train_loss,
                    train_acc,
                    test_acc,
                } => {
                    let rec = record
                        .as_mut()
                        .ok_or_else(|| Error::data("epoch line before meta".to_string()))?;
                    let iterations = pending
                        .drain(..)
                        .filter(|(e, _)| *e == epoch)
                        .map(|(_, l)| l)
                        .collect();
                    rec.epochs.push(EpochRecord {
                        epoch,
                        lr,
                        train_loss,
                        train_acc,
                        test_acc,
                        iterations,
                    });
                }
            }
        }
        record.ok_or_else(|| Error::data("empty record stream".to_string()))
    }

    /// Per-epoch weight sample: the first iteration of each epoch that
    /// carries weights. Iterations without weights (e.g. the first of each
    /// epoch, which has no previous-iteration teacher yet) are skipped.
    /// Errors if the run logged no weights at all or carries no iteration
    /// logs.
    pub fn weight_trajectory(&self) -> Result<Vec<TrajectoryPoint>> {
        if self.epochs.iter().all(|e| e.iterations.is_empty()) {
            return Err(Error::data(
                "record stream contains no iteration logs".to_string(),
            ));
        }
        let mut out = Vec::new();
        for ep in &self.epochs {
            if let Some(log) = ep
                .iterations
                .iter()
                .find(|l| l.w_lb_mean.is_some() || l.w_kd_mean.is_some())
            {
                out.push(TrajectoryPoint {
                    epoch: ep.epoch,
                    w_lb: log.w_lb_mean,
                    w_kd: log.w_kd_mean,
                });
            }
        }
        if out.is_empty() {
            return Err(Error::data(
                "run logged no distillation weights".to_string(),
            ));
        }
        Ok(out)
    }
}

/// One row of the epoch-sampled weight trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub epoch: usize,
    pub w_lb: Option<f64>,
    pub w_kd: Option<f64>,
}
