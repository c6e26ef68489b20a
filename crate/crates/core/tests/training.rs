//! Desk-scale training behavior: the overfitting regime on the few-shot
//! noisy shapes task, and the weight dynamics of the double-reverse
//! pipeline.

use distillab_core::awa::ScheduleSpec;
use distillab_core::data::{corrupt, gen_speckled_shapes, CorruptionSpec, Dataset, SplitTag};
use distillab_core::distill::{train, two_stage, TrainConfig, TrainerKind};
use distillab_core::model::{InputShape, Model, ModelKind, ModelSpec};
use distillab_core::optim::AdamConfig;

fn shapes_task(train_per_class: usize, test_per_class: usize, size: usize) -> (Dataset, Dataset) {
    let clean = gen_speckled_shapes(3, train_per_class, size, 2, 7, SplitTag::Train).unwrap();
    let train_set = corrupt(
        &clean,
        &CorruptionSpec {
            label_noise_rate: 0.1,
            seed: 7,
            ..CorruptionSpec::default()
        },
    )
    .unwrap();
    let test_set = gen_speckled_shapes(3, test_per_class, size, 2, 8, SplitTag::Test).unwrap();
    (train_set, test_set)
}

fn cnn_spec(size: usize) -> ModelSpec {
    ModelSpec {
        kind: ModelKind::SmallCnn,
        input: InputShape::Image {
            channels: 1,
            height: size,
            width: size,
        },
        hidden: vec![8, 16],
        num_classes: 3,
        use_batchnorm: false,
    }
}

fn desk_cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        seed,
        adam: AdamConfig {
            lr0: 5e-3,
            ..AdamConfig::default()
        },
        schedule: ScheduleSpec::warmup_then_linear_up(epochs / 2, 0.5),
        ..TrainConfig::default()
    }
}

#[test]
fn baseline_overfits_few_shot_noisy_task() {
    let (train_set, test_set) = shapes_task(30, 60, 24);
    let spec = cnn_spec(24);
    let mut model = Model::build(&spec, distillab_core::distill::model_seed(1)).unwrap();
    let rec = train(
        TrainerKind::Baseline,
        &mut model,
        None,
        &train_set,
        &test_set,
        &desk_cfg(30, 1),
    )
    .unwrap();
    let gap = rec.final_train_acc() - rec.final_test_acc();
    assert!(
        gap > 0.10,
        "train-test gap {:.3} (train {:.3}, test {:.3})",
        gap,
        rec.final_train_acc(),
        rec.final_test_acc()
    );
}

#[test]
fn two_stage_frozen_teacher_and_weight_trend() {
    let (train_set, test_set) = shapes_task(30, 60, 24);
    let spec = cnn_spec(24);
    let result = two_stage(&spec, &train_set, &test_set, &desk_cfg(16, 2)).unwrap();

    // Stage-2 training must leave the offline student untouched.
    let hash_after = result.offline.params_sha256();
    let rebuilt = two_stage(&spec, &train_set, &test_set, &desk_cfg(16, 2)).unwrap();
    assert_eq!(rebuilt.offline.params_sha256(), hash_after);

    // The self-distillation weight grows as the student catches up.
    let traj = result.stage2.weight_trajectory().unwrap();
    assert!(traj.len() >= 8);
    let first = traj.first().unwrap().w_lb.unwrap();
    let last = traj.last().unwrap().w_lb.unwrap();
    assert!(
        last > first,
        "w_lb did not grow: first {first:.4}, last {last:.4}"
    );
}
