//! Named experiment presets. The desk presets reproduce the weight-study
//! and method-comparison protocols on the synthetic speckled-shapes task
//! at a scale that runs in minutes on one core: a few-shot noisy train
//! split that the plain baseline memorizes, leaving test-side headroom for
//! the distillation regularizers.

use crate::config::{ExperimentConfig, ScheduleConfig};
use distillab_core::awa::ScheduleKind;
use distillab_core::distill::TrainerKind;
use distillab_core::error::{Error, Result};
use std::path::PathBuf;

pub const PRESET_NAMES: [&str; 4] = ["trend-desk", "table1-desk", "table2-desk", "smoke-desk"];

/// Shared desk-scale base: 3-class speckled shapes, 30 train / 100 test
/// per class at 32x32 with 2-look speckle and 10% label noise, the small
/// CNN, 40 epochs. The learning rate is raised to 5e-3 so the baseline
/// reaches the noisy-memorization regime within the shortened schedule.
fn desk_base(trainer: TrainerKind, label: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml_str("trainer = \"baseline\"").expect("valid base");
    cfg.trainer = trainer;
    cfg.label = Some(label.to_string());
    cfg.epochs = 40;
    cfg.batch_size = 16;
    cfg.seeds = vec![1, 2, 3, 4, 5];
    cfg.data.train_per_class = 30;
    cfg.data.test_per_class = 100;
    cfg.data.image_size = 32;
    cfg.data.looks = 2;
    cfg.data.label_noise_rate = 0.1;
    cfg.optim.lr0 = 5e-3;
    cfg.output_dir = PathBuf::from(label);
    cfg
}

fn fixed(value: f64) -> ScheduleConfig {
    ScheduleConfig {
        kind: ScheduleKind::Fixed,
        fixed_value: value,
        warmup_epochs: 0,
        warmup_value: 0.0,
    }
}

/// Warmup at 0.5 for the first half, then t/T; the configuration reported
/// as strongest for last-batch distillation.
fn warmup_linear_up(epochs: usize) -> ScheduleConfig {
    ScheduleConfig {
        kind: ScheduleKind::EpochLinearUp,
        fixed_value: 0.0,
        warmup_epochs: epochs / 2,
        warmup_value: 0.5,
    }
}

fn linear_down() -> ScheduleConfig {
    ScheduleConfig {
        kind: ScheduleKind::EpochLinearDown,
        fixed_value: 0.0,
        warmup_epochs: 0,
        warmup_value: 0.0,
    }
}

fn baseline() -> ExperimentConfig {
    desk_base(TrainerKind::Baseline, "baseline")
}

fn dlb_fixed(value: f64) -> ExperimentConfig {
    let label = format!("dlb-fixed-{value}");
    let mut cfg = desk_base(TrainerKind::Dlb, &label);
    cfg.distill.schedule = fixed(value);
    cfg
}

fn dlb_unfixed() -> ExperimentConfig {
    let mut cfg = desk_base(TrainerKind::Dlb, "dlb-unfixed");
    cfg.distill.schedule = warmup_linear_up(cfg.epochs);
    cfg
}

fn tfkd_fixed(value: f64) -> ExperimentConfig {
    let label = format!("tfkd-fixed-{value}");
    let mut cfg = desk_base(TrainerKind::TfKd, &label);
    cfg.distill.schedule = fixed(value);
    cfg
}

fn tfkd_unfixed() -> ExperimentConfig {
    let mut cfg = desk_base(TrainerKind::TfKd, "tfkd-unfixed");
    cfg.distill.schedule = linear_down();
    cfg
}

fn lsr() -> ExperimentConfig {
    let mut cfg = desk_base(TrainerKind::Lsr, "lsr");
    cfg.distill.lsr_eps = 0.1;
    cfg
}

fn drrnet() -> ExperimentConfig {
    let mut cfg = desk_base(TrainerKind::DrrnetSkd, "drrnet-skd");
    // Stage 1 (the offline student) trains with the warmup-then-linear
    // last-batch schedule; stage 2 weights come from the AWA module.
    cfg.distill.schedule = warmup_linear_up(cfg.epochs);
    cfg.distill.awa.alpha = 1.3;
    cfg
}

/// The rows of a named preset.
pub fn preset(name: &str) -> Result<Vec<ExperimentConfig>> {
    match name {
        // The method-trend comparison: baseline vs last-batch distillation
        // (fixed and growing weight) vs the double-reverse combination.
        "trend-desk" => Ok(vec![baseline(), dlb_fixed(0.3), dlb_unfixed(), drrnet()]),
        // Fixed-vs-unfixed weight study for the two schedule-driven methods.
        "table1-desk" => Ok(vec![
            baseline(),
            dlb_fixed(0.3),
            dlb_fixed(0.7),
            dlb_unfixed(),
            tfkd_fixed(0.3),
            tfkd_fixed(0.7),
            tfkd_unfixed(),
        ]),
        // Method comparison across all five trainers.
        "table2-desk" => Ok(vec![
            baseline(),
            lsr(),
            tfkd_unfixed(),
            dlb_unfixed(),
            drrnet(),
        ]),
        // Minutes-scale smoke preset for pipeline and determinism checks.
        "smoke-desk" => {
            let shrink = |mut cfg: ExperimentConfig| {
                cfg.epochs = 3;
                cfg.seeds = vec![1, 2];
                cfg.data.train_per_class = 8;
                cfg.data.test_per_class = 10;
                cfg.data.image_size = 16;
                cfg.distill.schedule.warmup_epochs = 1;
                cfg
            };
            Ok(vec![shrink(baseline()), shrink(drrnet())])
        }
        other => Err(Error::config(format!(
            "unknown preset '{other}'; available: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_resolve() {
        for name in PRESET_NAMES {
            let rows = preset(name).unwrap();
            assert!(!rows.is_empty());
            for cfg in &rows {
                cfg.validate().unwrap();
            }
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn table1_has_fixed_and_unfixed_rows() {
        let rows = preset("table1-desk").unwrap();
        let labels: Vec<String> = rows.iter().map(|c| c.label()).collect();
        assert!(labels.contains(&"baseline".to_string()));
        assert!(labels.contains(&"dlb-fixed-0.3".to_string()));
        assert!(labels.contains(&"dlb-fixed-0.7".to_string()));
        assert!(labels.contains(&"dlb-unfixed".to_string()));
        assert!(labels.contains(&"tfkd-unfixed".to_string()));
    }

    #[test]
    fn output_dirs_are_distinct() {
        let rows = preset("table2-desk").unwrap();
        let mut dirs: Vec<_> = rows.iter().map(|c| c.output_dir.clone()).collect();
        dirs.sort();
        dirs.dedup();
        assert_eq!(dirs.len(), rows.len());
    }
}
