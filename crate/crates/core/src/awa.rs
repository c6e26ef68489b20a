//! Distillation weight scheduling.
//!
//! Two mechanisms produce the weights that scale the distillation terms:
//! epoch-indexed linear schedules (optionally preceded by a fixed warmup
//! value), and adaptive weight assignment (AWA), which derives a pair of
//! reverse-changing weights from how the two teachers currently score
//! against the true labels. The self-distillation weight is
//! `w_lb = exp(l_of - l_on)`; the offline weight is the remainder of a
//! fixed budget, `w_kd = max(alpha - w_lb, 0)`.
//!
//! AWA weights are plain coefficients: no gradient flows through them, so
//! the composite objective keeps the same gradient structure as
//! fixed-weight distillation.

use crate::error::{Error, Result};
use crate::losses::SofteningMode;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Epoch-weight schedule family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Constant `fixed_value`.
    Fixed,
    /// `t / T`, ramping 0 -> 1.
    EpochLinearUp,
    /// `1 - t / T`, ramping 1 -> 0.
    EpochLinearDown,
    /// Weights come from [`awa_weights`] per iteration, not from the epoch.
    Awa,
}

/// Weight schedule with an optional fixed-value warmup phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    #[serde(default)]
    pub fixed_value: f64,
    #[serde(default)]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub warmup_value: f64,
}

impl ScheduleSpec {
    pub fn fixed(value: f64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Fixed,
            fixed_value: value,
            warmup_epochs: 0,
            warmup_value: 0.0,
        }
    }

    pub fn linear_up() -> Self {
        ScheduleSpec {
            kind: ScheduleKind::EpochLinearUp,
            fixed_value: 0.0,
            warmup_epochs: 0,
            warmup_value: 0.0,
        }
    }

    pub fn linear_down() -> Self {
        ScheduleSpec {
            kind: ScheduleKind::EpochLinearDown,
            fixed_value: 0.0,
            warmup_epochs: 0,
            warmup_value: 0.0,
        }
    }

    /// Fixed `warmup_value` for the first `warmup_epochs`, then `t / T`.
    pub fn warmup_then_linear_up(warmup_epochs: usize, warmup_value: f64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::EpochLinearUp,
            fixed_value: 0.0,
            warmup_epochs,
            warmup_value,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fixed_value < 0.0 || self.warmup_value < 0.0 {
            return Err(Error::config(
                "schedule weights must be nonnegative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Resolves a schedule at epoch `t` of `total` epochs.
pub fn epoch_schedule(spec: &ScheduleSpec, t: usize, total: usize) -> Result<f64> {
    spec.validate()?;
    if total == 0 {
        return Err(Error::config("total epochs must be >= 1".to_string()));
    }
    if t > total {
        return Err(Error::config(format!("epoch {t} beyond total {total}")));
    }
    if t < spec.warmup_epochs {
        return Ok(spec.warmup_value);
    }
    match spec.kind {
        ScheduleKind::Fixed => Ok(spec.fixed_value),
        ScheduleKind::EpochLinearUp => Ok(t as f64 / total as f64),
        ScheduleKind::EpochLinearDown => Ok(1.0 - t as f64 / total as f64),
        ScheduleKind::Awa => Err(Error::config(
            "awa weights are assigned per iteration, not by epoch schedule".to_string(),
        )),
    }
}

/// Whether AWA weights are assigned per sample or from batch-mean losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    PerSample,
    PerBatch,
}

/// Knobs for adaptive weight assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AwaConfig {
    /// Total weight budget; caps the offline distillation weight.
    pub alpha: f64,
    /// Temperature applied when scoring teachers against true labels.
    pub alpha_tau: f64,
    pub granularity: Granularity,
    /// How `alpha_tau` softens the scored predictions.
    pub softening: SofteningMode,
}

impl Default for AwaConfig {
    fn default() -> Self {
        AwaConfig {
            alpha: 1.3,
            alpha_tau: 1.0,
            granularity: Granularity::PerSample,
            softening: SofteningMode::Logits,
        }
    }
}

impl AwaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(Error::config(format!(
                "alpha must be positive: {}",
                self.alpha
            )));
        }
        if self.alpha_tau <= 0.0 {
            return Err(Error::config(format!(
                "alpha_tau must be positive: {}",
                self.alpha_tau
            )));
        }
        Ok(())
    }
}

/// The two reverse-changing distillation weights, one entry per sample
/// (per-batch granularity fills every entry with the shared value).
#[derive(Debug, Clone)]
pub struct WeightPair {
    pub w_lb: Tensor,
    pub w_kd: Tensor,
}

impl WeightPair {
    pub fn w_lb_mean(&self) -> f64 {
        self.w_lb.mean_all().unwrap_or(0.0)
    }

    pub fn w_kd_mean(&self) -> f64 {
        self.w_kd.mean_all().unwrap_or(0.0)
    }
}

/// Computes the weight pair from the two soft-target cross entropies:
/// `l_on` scored on the last-iteration student, `l_of` on the offline
/// student. `w_lb = exp(l_of - l_on)` is left unclamped; `w_kd` is the
/// remaining budget clamped at zero, since a negative offline weight would
/// invert that KL term.
pub fn awa_weights(l_on: &Tensor, l_of: &Tensor, cfg: &AwaConfig) -> Result<WeightPair> {
    cfg.validate()?;
    if l_on.shape() != l_of.shape() {
        return Err(Error::shape(format!(
            "awa_weights: {:?} vs {:?}",
            l_on.shape(),
            l_of.shape()
        )));
    }
    if !l_on.all_finite() || !l_of.all_finite() {
        return Err(Error::numeric(
            "awa_weights: non-finite loss input".to_string(),
        ));
    }
    let n = l_on.len();
    let (w_lb, w_kd) = match cfg.granularity {
        Granularity::PerSample => {
            let mut lb = Vec::with_capacity(n);
            let mut kd = Vec::with_capacity(n);
            for (&on, &of) in l_on.data().iter().zip(l_of.data()) {
                let w = (of - on).exp();
                lb.push(w);
                kd.push((cfg.alpha - w).max(0.0));
            }
            (Tensor::from_vec(lb), Tensor::from_vec(kd))
        }
        Granularity::PerBatch => {
            let on = l_on.mean_all()?;
            let of = l_of.mean_all()?;
            let w = (of - on).exp();
            (
                Tensor::filled(vec![n], w),
                Tensor::filled(vec![n], (cfg.alpha - w).max(0.0)),
            )
        }
    };
    Ok(WeightPair { w_lb, w_kd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(alpha: f64) -> AwaConfig {
        AwaConfig {
            alpha,
            ..AwaConfig::default()
        }
    }

    #[test]
    fn schedule_linear_midpoint() {
        let s = ScheduleSpec::linear_up();
        assert_eq!(epoch_schedule(&s, 50, 100).unwrap(), 0.5);
    }

    #[test]
    fn schedule_down_endpoints() {
        let s = ScheduleSpec::linear_down();
        assert_eq!(epoch_schedule(&s, 0, 100).unwrap(), 1.0);
        assert_eq!(epoch_schedule(&s, 100, 100).unwrap(), 0.0);
    }

    #[test]
    fn schedule_warmup_overrides() {
        let s = ScheduleSpec::warmup_then_linear_up(50, 0.5);
        assert_eq!(epoch_schedule(&s, 10, 100).unwrap(), 0.5);
        assert_eq!(epoch_schedule(&s, 49, 100).unwrap(), 0.5);
        assert_eq!(epoch_schedule(&s, 50, 100).unwrap(), 0.5);
        assert_eq!(epoch_schedule(&s, 51, 100).unwrap(), 0.51);
    }

    #[test]
    fn schedule_complementarity() {
        let up = ScheduleSpec::linear_up();
        let down = ScheduleSpec::linear_down();
        for t in 0..=100 {
            let a = epoch_schedule(&up, t, 100).unwrap();
            let b = epoch_schedule(&down, t, 100).unwrap();
            assert_eq!(a + b, 1.0);
        }
    }

    #[test]
    fn schedule_errors() {
        let s = ScheduleSpec::linear_up();
        assert!(matches!(
            epoch_schedule(&s, 101, 100),
            Err(Error::Config(_))
        ));
        assert!(matches!(epoch_schedule(&s, 0, 0), Err(Error::Config(_))));
        let awa = ScheduleSpec {
            kind: ScheduleKind::Awa,
            fixed_value: 0.0,
            warmup_epochs: 0,
            warmup_value: 0.0,
        };
        assert!(matches!(epoch_schedule(&awa, 1, 10), Err(Error::Config(_))));
    }

    #[test]
    fn awa_equal_losses() {
        let l = Tensor::from_vec(vec![1.7, 0.4]);
        let wp = awa_weights(&l, &l, &cfg(1.3)).unwrap();
        for (&lb, &kd) in wp.w_lb.data().iter().zip(wp.w_kd.data()) {
            assert!((lb - 1.0).abs() < 1e-15);
            assert!((kd - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn awa_reference_values() {
        // exp(-2) = 0.13533528323661269, exp(1.5) = 4.4816890703380648 (mpmath).
        let l_on = Tensor::from_vec(vec![2.5]);
        let l_of = Tensor::from_vec(vec![0.5]);
        let wp = awa_weights(&l_on, &l_of, &cfg(1.3)).unwrap();
        assert!((wp.w_lb.data()[0] - 0.135_335_283_236_612_7).abs() < 1e-15);
        assert!((wp.w_kd.data()[0] - (1.3 - 0.135_335_283_236_612_7)).abs() < 1e-15);

        let wp = awa_weights(
            &Tensor::from_vec(vec![0.5]),
            &Tensor::from_vec(vec![2.0]),
            &cfg(1.3),
        )
        .unwrap();
        assert!((wp.w_lb.data()[0] - 4.4816890703380648).abs() < 1e-14);
        assert_eq!(wp.w_kd.data()[0], 0.0);
    }

    #[test]
    fn awa_algebra_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let c = AwaConfig::default();
        for _ in 0..2000 {
            let on: f64 = rng.gen_range(-4.0..4.0);
            let of: f64 = rng.gen_range(-4.0..4.0);
            let alpha: f64 = rng.gen_range(0.1..3.0);
            let wp = awa_weights(
                &Tensor::from_vec(vec![on]),
                &Tensor::from_vec(vec![of]),
                &AwaConfig { alpha, ..c },
            )
            .unwrap();
            let lb = wp.w_lb.data()[0];
            let kd = wp.w_kd.data()[0];
            assert_eq!(lb, (of - on).exp());
            assert_eq!(kd, (alpha - lb).max(0.0));
            assert!(lb > 0.0);
            assert!(kd >= 0.0);
            if lb <= alpha {
                // Identity up to one rounding of the subtraction.
                assert!((lb + kd - alpha).abs() <= f64::EPSILON * alpha);
            }
        }
    }

    #[test]
    fn awa_monotone_in_l_on_and_shift_invariant() {
        let c = cfg(1.3);
        let of = Tensor::from_vec(vec![1.0]);
        let mut prev = f64::INFINITY;
        for i in 0..20 {
            let on = Tensor::from_vec(vec![i as f64 * 0.3]);
            let wp = awa_weights(&on, &of, &c).unwrap();
            assert!(wp.w_lb.data()[0] < prev);
            prev = wp.w_lb.data()[0];
        }
        let a = awa_weights(
            &Tensor::from_vec(vec![0.7]),
            &Tensor::from_vec(vec![1.9]),
            &c,
        )
        .unwrap();
        let b = awa_weights(
            &Tensor::from_vec(vec![0.7 + 5.0]),
            &Tensor::from_vec(vec![1.9 + 5.0]),
            &c,
        )
        .unwrap();
        // Shifting both inputs perturbs the f64 difference by at most an ulp.
        assert!((a.w_lb.data()[0] - b.w_lb.data()[0]).abs() < 1e-12);
        assert!((a.w_kd.data()[0] - b.w_kd.data()[0]).abs() < 1e-12);
    }

    #[test]
    fn awa_per_batch_granularity_averages_first() {
        let l_on = Tensor::from_vec(vec![1.0, 3.0]);
        let l_of = Tensor::from_vec(vec![2.0, 2.0]);
        let c = AwaConfig {
            granularity: Granularity::PerBatch,
            ..cfg(1.3)
        };
        let wp = awa_weights(&l_on, &l_of, &c).unwrap();
        // mean(l_of) - mean(l_on) = 0 -> w_lb = 1 everywhere.
        assert_eq!(wp.w_lb.data(), &[1.0, 1.0]);
    }

    #[test]
    fn awa_rejects_non_finite() {
        let bad = Tensor::from_vec(vec![f64::NAN]);
        let ok = Tensor::from_vec(vec![1.0]);
        assert!(matches!(
            awa_weights(&bad, &ok, &cfg(1.3)),
            Err(Error::Numeric(_))
        ));
    }
}
