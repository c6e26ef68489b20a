//! Experiment execution, multi-seed aggregation, and artifact emission.
//!
//! Every file written here is a pure function of (config, seeds, dataset
//! bytes): seeds run independently (in parallel when cores allow) and the
//! aggregator writes all output in seed order.

use crate::config::ExperimentConfig;
use distillab_core::data::Dataset;
use distillab_core::distill::{
    model_seed, pretrain_teacher, run_seed, train, two_stage, TrainerKind,
};
use distillab_core::error::{Error, Result};
use distillab_core::model::Model;
use distillab_core::record::{RunRecord, TrajectoryPoint};
use rayon::prelude::*;
use std::io::Write;
use std::path::{Path, PathBuf};

/// One aggregated result row. Accuracies are percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub trainer: TrainerKind,
    pub n_seeds: usize,
    pub mean_acc: f64,
    /// Sample standard deviation; absent with fewer than 2 seeds.
    pub std_acc: Option<f64>,
    pub delta_vs_baseline: Option<f64>,
}

impl SummaryRow {
    pub fn format_line(&self) -> String {
        let std = match self.std_acc {
            Some(s) => format!("±{s:.2}"),
            None => "±n/a".to_string(),
        };
        let delta = match self.delta_vs_baseline {
            Some(d) => format!(" ({d:+.2})"),
            None => String::new(),
        };
        format!("{:<16} {:>6.2}{std}{delta}", self.label, self.mean_acc)
    }
}

/// Everything one seed produced: the records to persist and the final
/// accuracy that enters the aggregate.
struct SeedOutput {
    seed: u64,
    final_acc: f64,
    /// (file suffix, record); the suffix-free entry is the headline run.
    records: Vec<(&'static str, RunRecord)>,
}

fn run_one_seed(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    seed: u64,
) -> Result<SeedOutput> {
    let spec = cfg.model.to_spec();
    match cfg.trainer {
        TrainerKind::Baseline | TrainerKind::Lsr | TrainerKind::Dlb => {
            let mut model = Model::build(&spec, model_seed(seed))?;
            let tc = cfg.to_train_config(run_seed(seed));
            let rec = train(cfg.trainer, &mut model, None, train_set, test_set, &tc)?;
            Ok(SeedOutput {
                seed,
                final_acc: rec.final_test_acc(),
                records: vec![("", rec)],
            })
        }
        TrainerKind::TfKd => {
            let tc = cfg.to_train_config(seed);
            let (teacher, teacher_rec) = pretrain_teacher(&spec, train_set, test_set, &tc)?;
            let mut student = Model::build(&spec, model_seed(seed))?;
            let tc2 = cfg.to_train_config(run_seed(seed));
            let rec = train(
                TrainerKind::TfKd,
                &mut student,
                Some(&teacher),
                train_set,
                test_set,
                &tc2,
            )?;
            Ok(SeedOutput {
                seed,
                final_acc: rec.final_test_acc(),
                records: vec![("-teacher", teacher_rec), ("", rec)],
            })
        }
        TrainerKind::DrrnetSkd => {
            let tc = cfg.to_train_config(seed);
            let result = two_stage(&spec, train_set, test_set, &tc)?;
            Ok(SeedOutput {
                seed,
                final_acc: result.stage2.final_test_acc(),
                records: vec![("-stage1", result.stage1), ("", result.stage2)],
            })
        }
    }
}

fn mean_and_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

/// Runs every seed of an experiment, writes the per-seed record streams,
/// `accuracies.csv`, `summary.csv`, `trajectory.csv` (when the headline
/// runs log weights), and the resolved config. Returns the summary row.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<(SummaryRow, PathBuf)> {
    cfg.validate()?;
    let dir = out_root.join(&cfg.output_dir);
    std::fs::create_dir_all(&dir)?;
    let (train_set, test_set) = cfg.data.load()?;

    let mut outputs: Vec<SeedOutput> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_one_seed(cfg, &train_set, &test_set, seed))
        .collect::<Result<Vec<_>>>()?;
    outputs.sort_by_key(|o| {
        cfg.seeds
            .iter()
            .position(|&s| s == o.seed)
            .unwrap_or(usize::MAX)
    });

    std::fs::write(dir.join("resolved-config.toml"), cfg.to_toml_string()?)?;
    for out in &outputs {
        for (suffix, rec) in &out.records {
            let file = std::fs::File::create(dir.join(format!("seed{}{suffix}.jsonl", out.seed)))?;
            rec.write_jsonl(std::io::BufWriter::new(file), true)?;
        }
    }

    let mut acc_csv = String::from("seed,acc_pct\n");
    for out in &outputs {
        acc_csv.push_str(&format!("{},{}\n", out.seed, out.final_acc * 100.0));
    }
    std::fs::write(dir.join("accuracies.csv"), acc_csv)?;

    let accs: Vec<f64> = outputs.iter().map(|o| o.final_acc * 100.0).collect();
    let (mean, std) = mean_and_std(&accs);
    let row = SummaryRow {
        label: cfg.label(),
        trainer: cfg.trainer,
        n_seeds: accs.len(),
        mean_acc: mean,
        std_acc: std,
        delta_vs_baseline: None,
    };
    let mut summary = String::from("label,trainer,n_seeds,mean_acc,std_acc\n");
    summary.push_str(&format!(
        "{},{},{},{:.2},{}\n",
        row.label,
        row.trainer.label(),
        row.n_seeds,
        row.mean_acc,
        row.std_acc.map(|s| format!("{s:.2}")).unwrap_or_default()
    ));
    std::fs::write(dir.join("summary.csv"), summary)?;

    // Weight trajectory of the first seed's headline run, when it has one.
    let headline = outputs
        .first()
        .and_then(|o| o.records.iter().find(|(s, _)| s.is_empty()))
        .map(|(_, r)| r);
    if let Some(rec) = headline {
        if let Ok(traj) = rec.weight_trajectory() {
            std::fs::write(dir.join("trajectory.csv"), trajectory_csv(&traj))?;
        }
    }
    Ok((row, dir))
}

pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let mut out = String::from("epoch,w_lb,w_kd\n");
    for p in points {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", p.epoch, fmt(p.w_lb), fmt(p.w_kd)));
    }
    out
}

/// Reads a record stream back and emits its weight trajectory as CSV.
pub fn emit_trajectory(run_file: &Path) -> Result<String> {
    let file = std::fs::File::open(run_file)?;
    let rec = RunRecord::read_jsonl(std::io::BufReader::new(file))?;
    Ok(trajectory_csv(&rec.weight_trajectory()?))
}

/// Ranked comparison of summary rows: deltas against the baseline row and
/// the best row flagged. Requires a baseline row.
pub fn compare(rows: &[SummaryRow]) -> Result<Vec<SummaryRow>> {
    let baseline = rows
        .iter()
        .find(|r| r.trainer == TrainerKind::Baseline)
        .ok_or_else(|| Error::data("comparison needs a baseline row".to_string()))?
        .mean_acc;
    let mut ranked: Vec<SummaryRow> = rows
        .iter()
        .map(|r| SummaryRow {
            delta_vs_baseline: Some(r.mean_acc - baseline),
            ..r.clone()
        })
        .collect();
    ranked.sort_by(|a, b| b.mean_acc.partial_cmp(&a.mean_acc).unwrap());
    Ok(ranked)
}

/// Loads the summary rows persisted under each subdirectory of `dir`.
pub fn load_summaries(dir: &Path) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for sub in entries {
        let summary = sub.join("summary.csv");
        if !summary.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&summary)?;
        for line in text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 4 {
                return Err(Error::data(format!("malformed summary row: {line}")));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| Error::data(format!("bad number '{s}': {e}")))
            };
            rows.push(SummaryRow {
                label: fields[0].to_string(),
                trainer: fields[1].parse()?,
                n_seeds: fields[2]
                    .parse()
                    .map_err(|e| Error::data(format!("bad seed count: {e}")))?,
                mean_acc: parse(fields[3])?,
                std_acc: match fields.get(4) {
                    Some(s) if !s.is_empty() => Some(parse(s)?),
                    _ => None,
                },
                delta_vs_baseline: None,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::data(format!(
            "no summary.csv found under {}",
            dir.display()
        )));
    }
    Ok(rows)
}

/// Writes and prints a ranked comparison table for the rows under `dir`.
pub fn compare_dir(dir: &Path) -> Result<Vec<SummaryRow>> {
    let ranked = compare(&load_summaries(dir)?)?;
    let mut csv = String::from("label,trainer,n_seeds,mean_acc,std_acc,delta_vs_baseline,best\n");
    for (i, row) in ranked.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{:.2},{},{:.2},{}\n",
            row.label,
            row.trainer.label(),
            row.n_seeds,
            row.mean_acc,
            row.std_acc.map(|s| format!("{s:.2}")).unwrap_or_default(),
            row.delta_vs_baseline.unwrap_or(0.0),
            i == 0
        ));
    }
    std::fs::write(dir.join("comparison.csv"), &csv)?;
    Ok(ranked)
}

/// Per-seed accuracies persisted by [`run_experiment`].
pub fn load_accuracies(dir: &Path) -> Result<Vec<(u64, f64)>> {
    let text = std::fs::read_to_string(dir.join("accuracies.csv"))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (seed, acc) = line
            .split_once(',')
            .ok_or_else(|| Error::data(format!("malformed accuracy row: {line}")))?;
        out.push((
            seed.parse()
                .map_err(|e| Error::data(format!("bad seed: {e}")))?,
            acc.parse()
                .map_err(|e| Error::data(format!("bad accuracy: {e}")))?,
        ));
    }
    Ok(out)
}

pub fn print_table(rows: &[SummaryRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "{:<16} {:>7}  {:>7}  {:>7}",
        "label", "mean%", "std%", "delta"
    )?;
    for row in rows {
        writeln!(
            w,
            "{:<16} {:>7.2}  {:>7}  {:>7}",
            row.label,
            row.mean_acc,
            row.std_acc
                .map(|s| format!("{s:.2}"))
                .unwrap_or_else(|| "n/a".into()),
            row.delta_vs_baseline
                .map(|d| format!("{d:+.2}"))
                .unwrap_or_default()
        )?;
    }
    Ok(())
}
