//! Synthetic speckled-shape classification task.
//!
//! Renders one canonical shape per class at a random pose and scale, then
//! multiplies by L-look averaged unit-mean exponential speckle, the
//! standard intensity statistic of coherent imaging. Geometry is rendered
//! noise-free first, so the infinite-look limit recovers a clean task.

use super::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

pub const SHAPE_NAMES: [&str; 7] = [
    "ellipse",
    "rectangle",
    "wedge",
    "cross",
    "tee",
    "ell",
    "bar",
];

const FOREGROUND: f64 = 0.25;
const BACKGROUND: f64 = 0.05;

/// Unit-mean multiplicative speckle: each factor is the average of `looks`
/// independent Exp(1) draws, i.e. a Gamma(L, 1/L) variate, sampled in O(1)
/// per pixel so large look counts stay cheap.
pub fn speckle_factors(n: usize, looks: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if looks == 1 {
        return (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                -(1.0 - u).ln()
            })
            .collect();
    }
    let gamma = Gamma::new(looks as f64, 1.0 / looks as f64).expect("valid gamma");
    (0..n).map(|_| gamma.sample(rng)).collect()
}

fn inside(shape: usize, u: f64, v: f64) -> bool {
    match shape {
        // ellipse, landscape
        0 => (u / 0.85).powi(2) + (v / 0.55).powi(2) <= 1.0,
        // rectangle, portrait
        1 => u.abs() <= 0.46 && v.abs() <= 0.7,
        // wedge: apex at (0, 0.65), base at v = -0.55
        2 => (-0.55..=0.65).contains(&v) && u.abs() <= 0.7 * (0.65 - v) / 1.2,
        // cross
        3 => (u.abs() <= 0.22 && v.abs() <= 0.75) || (v.abs() <= 0.22 && u.abs() <= 0.75),
        // tee
        4 => {
            ((0.3..=0.72).contains(&v) && u.abs() <= 0.68)
                || (u.abs() <= 0.2 && (-0.72..0.3).contains(&v))
        }
        // ell
        5 => {
            ((-0.68..=-0.28).contains(&u) && v.abs() <= 0.72)
                || ((-0.72..=-0.32).contains(&v) && u > -0.28 && u <= 0.62)
        }
        // bar
        6 => u.abs() <= 0.75 && v.abs() <= 0.14,
        _ => false,
    }
}

/// Generates `per_class` samples for each of `num_classes` (3..=7) shape
/// classes on a `size`x`size` grid, deterministic in `seed`. Images are
/// clamped to [0, 1] after the multiplicative noise.
pub fn gen_speckled_shapes(
    num_classes: usize,
    per_class: usize,
    size: usize,
    looks: u32,
    seed_value: u64,
    split: SplitTag,
) -> Result<Dataset> {
    if !(3..=7).contains(&num_classes) {
        return Err(Error::config(format!(
            "num_classes must be in 3..=7, got {num_classes}"
        )));
    }
    if size < 16 {
        return Err(Error::config(format!("size must be >= 16, got {size}")));
    }
    if per_class == 0 || looks == 0 {
        return Err(Error::config(
            "per_class and looks must be >= 1".to_string(),
        ));
    }
    let n = num_classes * per_class;
    let half = size as f64 / 2.0;
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    // Poses and speckle come from independent streams, so the same seed
    // produces identical geometry at every look count.
    let mut pose_rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, 0xDA7A));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, 0x57EC));
    for class in 0..num_classes {
        for _ in 0..per_class {
            let scale: f64 = pose_rng.gen_range(0.75..1.0);
            let jx: f64 = pose_rng.gen_range(-0.08..0.08) * size as f64;
            let jy: f64 = pose_rng.gen_range(-0.08..0.08) * size as f64;
            let theta: f64 = pose_rng.gen_range(-0.26..0.26);
            let (sin, cos) = theta.sin_cos();
            let start = data.len();
            for py in 0..size {
                for px in 0..size {
                    let x = (px as f64 + 0.5 - half - jx) / (scale * half);
                    let y = (py as f64 + 0.5 - half - jy) / (scale * half);
                    let u = x * cos + y * sin;
                    let v = -x * sin + y * cos;
                    data.push(if inside(class, u, v) {
                        FOREGROUND
                    } else {
                        BACKGROUND
                    });
                }
            }
            let noise = speckle_factors(size * size, looks, &mut noise_rng);
            for (pixel, factor) in data[start..].iter_mut().zip(noise) {
                *pixel = (*pixel * factor).clamp(0.0, 1.0);
            }
            labels.push(class);
        }
    }
    Dataset::new(
        Tensor::new(vec![n, 1, size, size], data)?,
        labels,
        SHAPE_NAMES[..num_classes]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        split,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let a = gen_speckled_shapes(3, 4, 24, 2, 9, SplitTag::Train).unwrap();
        let b = gen_speckled_shapes(3, 4, 24, 2, 9, SplitTag::Train).unwrap();
        assert_eq!(a, b);
        let c = gen_speckled_shapes(3, 4, 24, 2, 10, SplitTag::Train).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn speckle_is_unit_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for looks in [1, 2, 4] {
            let f = speckle_factors(10_000, looks, &mut rng);
            let mean = f.iter().sum::<f64>() / f.len() as f64;
            assert!((mean - 1.0).abs() < 0.05, "looks={looks}, mean={mean}");
        }
    }

    #[test]
    fn huge_look_count_washes_out_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = speckle_factors(2_000, 1_000_000, &mut rng);
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        let var = f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f.len() as f64;
        assert!(var < 1e-4, "var={var}");
    }

    #[test]
    fn single_look_bright_region_keeps_clean_mean() {
        // Foreground intensity is low enough that the [0,1] clamp biases the
        // unit-mean product by under 5%.
        let d = gen_speckled_shapes(3, 30, 32, 1, 3, SplitTag::Train).unwrap();
        let clean = gen_speckled_shapes(3, 30, 32, 1_000_000, 3, SplitTag::Train).unwrap();
        let mut sum = 0.0;
        let mut count = 0usize;
        for (noisy, base) in d.images.data().iter().zip(clean.images.data()) {
            if (base - FOREGROUND).abs() < 0.01 {
                sum += noisy;
                count += 1;
            }
        }
        assert!(count >= 10_000, "bright pixels: {count}");
        let mean = sum / count as f64;
        assert!(
            (mean - FOREGROUND).abs() / FOREGROUND < 0.05,
            "bright mean {mean} vs {FOREGROUND}"
        );
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(gen_speckled_shapes(2, 4, 24, 1, 0, SplitTag::Train).is_err());
        assert!(gen_speckled_shapes(8, 4, 24, 1, 0, SplitTag::Train).is_err());
        assert!(gen_speckled_shapes(3, 4, 8, 1, 0, SplitTag::Train).is_err());
    }

    #[test]
    fn clean_shapes_nearest_centroid_separable() {
        // Infinite-look images must stay classifiable by a nearest-centroid
        // rule, otherwise training trends on this task mean nothing.
        let train = gen_speckled_shapes(7, 100, 32, 1_000_000, 11, SplitTag::Train).unwrap();
        let test = gen_speckled_shapes(7, 40, 32, 1_000_000, 12, SplitTag::Test).unwrap();
        let s = train.sample_len();
        let mut centroids = vec![vec![0.0; s]; 7];
        let mut counts = [0usize; 7];
        for i in 0..train.len() {
            let c = train.labels[i];
            counts[c] += 1;
            for (acc, &v) in centroids[c]
                .iter_mut()
                .zip(&train.images.data()[i * s..(i + 1) * s])
            {
                *acc += v;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            for v in centroid.iter_mut() {
                *v /= counts[c] as f64;
            }
        }
        let mut hits = 0usize;
        for i in 0..test.len() {
            let img = &test.images.data()[i * s..(i + 1) * s];
            let mut best = (f64::INFINITY, 0usize);
            for (c, centroid) in centroids.iter().enumerate() {
                let dist: f64 = img
                    .iter()
                    .zip(centroid)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            if best.1 == test.labels[i] {
                hits += 1;
            }
        }
        let acc = hits as f64 / test.len() as f64;
        assert!(acc > 0.9, "nearest-centroid accuracy {acc}");
    }
}
