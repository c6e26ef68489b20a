//! Dataset ingestion and synthesis: IDX files, a speckled-shape generator
//! for few-shot noisy classification, label-noise injection, stratified
//! subsampling, and seeded batching.

mod idx;
mod shapes;

pub use idx::{read_idx, write_idx};
pub use shapes::{gen_speckled_shapes, speckle_factors, SHAPE_NAMES};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
}

/// Labeled image set. Images are `[N, C, H, W]` with values in [0, 1];
/// datasets are immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        class_names: Vec<String>,
        split: SplitTag,
    ) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::shape(format!(
                "dataset images must be [N,C,H,W], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::data(format!(
                "{} images vs {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        let c = class_names.len();
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::data(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            class_names,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Elements per sample (C*H*W).
    pub fn sample_len(&self) -> usize {
        self.images.shape()[1..].iter().product()
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let s = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * s);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::data(format!("index {i} out of range")));
            }
            data.extend_from_slice(&self.images.data()[i * s..(i + 1) * s]);
            labels.push(self.labels[i]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Ok(Dataset {
            images: Tensor::new(shape, data)?,
            labels,
            class_names: self.class_names.clone(),
            split: self.split,
        })
    }
}

/// Few-shot / label-noise corruption knobs. `speckle_looks` rides along for
/// dataset synthesis configs; [`corrupt`] itself never touches image bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub few_shot_per_class: Option<usize>,
    pub label_noise_rate: f64,
    pub speckle_looks: Option<u32>,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            few_shot_per_class: None,
            label_noise_rate: 0.0,
            speckle_looks: None,
            seed: 0,
        }
    }
}

/// Applies stratified subsampling, then flips exactly
/// `floor(label_noise_rate * N)` labels to a uniformly drawn different
/// class. Deterministic in `spec.seed`; images are copied verbatim.
pub fn corrupt(d: &Dataset, spec: &CorruptionSpec) -> Result<Dataset> {
    if !(0.0..1.0).contains(&spec.label_noise_rate) {
        return Err(Error::config(format!(
            "label noise rate must be in [0,1): {}",
            spec.label_noise_rate
        )));
    }
    let mut out = match spec.few_shot_per_class {
        None => d.clone(),
        Some(k) => {
            if k == 0 {
                return Err(Error::config("few_shot_per_class must be >= 1".to_string()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, 1));
            let mut selected = Vec::with_capacity(k * d.num_classes());
            for class in 0..d.num_classes() {
                let mut members: Vec<usize> =
                    (0..d.len()).filter(|&i| d.labels[i] == class).collect();
                if members.len() < k {
                    return Err(Error::data(format!(
                        "class {class} has {} samples, need {k}",
                        members.len()
                    )));
                }
                members.shuffle(&mut rng);
                selected.extend_from_slice(&members[..k]);
            }
            selected.sort_unstable();
            d.select(&selected)?
        }
    };
    let n = out.len();
    let flips = (spec.label_noise_rate * n as f64).floor() as usize;
    if flips > 0 {
        let c = out.num_classes();
        if c < 2 {
            return Err(Error::data(
                "cannot flip labels with fewer than 2 classes".to_string(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, 2));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &i in order.iter().take(flips) {
            let old = out.labels[i];
            out.labels[i] = (old + 1 + rng.gen_range(0..c - 1)) % c;
        }
    }
    Ok(out)
}

/// One training batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

/// Seeded shuffle into contiguous batches; the final short batch is kept.
pub fn batches(d: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be >= 1".to_string()));
    }
    let mut perm: Vec<usize> = (0..d.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    perm.shuffle(&mut rng);
    let mut out = Vec::with_capacity(d.len().div_ceil(batch_size));
    for chunk in perm.chunks(batch_size) {
        let sub = d.select(chunk)?;
        out.push(Batch {
            inputs: sub.images,
            labels: sub.labels,
        });
    }
    Ok(out)
}
