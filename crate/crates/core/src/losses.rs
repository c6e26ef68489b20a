//! Probability-space machinery: temperature softmax, cross entropy,
//! label-smoothing regularization, temperature-softened KL distillation
//! losses, and the soft-target cross entropy pair that feeds adaptive
//! weight assignment.
//!
//! All losses report per-sample values next to the batch mean, because the
//! adaptive weighting operates at the sample level. Every log-probability
//! is computed through a max-shifted log-sum-exp; probabilities are never
//! materialized before a log.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-stochastic probabilities produced by [`softmax`].
#[derive(Debug, Clone)]
pub struct ProbDist(Tensor);

impl ProbDist {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Scalar loss plus the pre-reduction per-sample values.
/// `value` is always the arithmetic mean of `per_sample`.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub per_sample: Tensor,
}

impl LossValue {
    fn from_per_sample(per_sample: Vec<f64>) -> Self {
        let value = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        LossValue {
            value,
            per_sample: Tensor::from_vec(per_sample),
        }
    }
}

/// How a temperature divisor is applied when softening a prediction for
/// weight assignment: to the raw logits (the reading under which a unit
/// temperature reduces to plain cross entropy) or to the already-normalized
/// probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SofteningMode {
    Logits,
    Probabilities,
}

fn check_logits(z: &Tensor, ctx: &str) -> Result<(usize, usize)> {
    if z.rank() != 2 {
        return Err(Error::shape(format!(
            "{ctx}: expected [batch, classes] logits, got {:?}",
            z.shape()
        )));
    }
    let (b, c) = (z.shape()[0], z.shape()[1]);
    if b == 0 || c == 0 {
        return Err(Error::shape(format!("{ctx}: empty logits {:?}", z.shape())));
    }
    Ok((b, c))
}

fn check_labels(labels: &[usize], b: usize, c: usize, ctx: &str) -> Result<()> {
    if labels.len() != b {
        return Err(Error::shape(format!(
            "{ctx}: {} labels for batch of {b}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::data(format!(
            "{ctx}: label {bad} out of range for {c} classes"
        )));
    }
    Ok(())
}

/// Row-wise log softmax of `z / tau`, max-shifted for stability.
pub fn log_softmax(z: &Tensor, tau: f64) -> Result<Tensor> {
    if tau <= 0.0 {
        return Err(Error::config(format!(
            "temperature must be positive: {tau}"
        )));
    }
    let (b, c) = check_logits(z, "log_softmax")?;
    let mut out = vec![0.0; b * c];
    for i in 0..b {
        let row = z.row(i);
        let mut max = f64::NEG_INFINITY;
        for &v in row {
            max = max.max(v / tau);
        }
        let mut lse = 0.0;
        for &v in row {
            lse += (v / tau - max).exp();
        }
        let lse = max + lse.ln();
        for (j, &v) in row.iter().enumerate() {
            out[i * c + j] = v / tau - lse;
        }
    }
    Tensor::new(vec![b, c], out)
}

/// Row-wise softmax of `z / tau`.
pub fn softmax(z: &Tensor, tau: f64) -> Result<ProbDist> {
    Ok(ProbDist(log_softmax(z, tau)?.exp()))
}

/// Mean cross entropy against integer labels, with the gradient of the mean
/// with respect to the logits: `(softmax(z) - onehot) / B`.
pub fn cross_entropy(z: &Tensor, labels: &[usize]) -> Result<(LossValue, Tensor)> {
    let (b, c) = check_logits(z, "cross_entropy")?;
    check_labels(labels, b, c, "cross_entropy")?;
    let ls = log_softmax(z, 1.0)?;
    let mut per_sample = Vec::with_capacity(b);
    let mut grad = ls.exp();
    {
        let g = grad.data_mut();
        for (i, &label) in labels.iter().enumerate() {
            per_sample.push(-ls.data()[i * c + label]);
            g[i * c + label] -= 1.0;
        }
        for v in g.iter_mut() {
            *v /= b as f64;
        }
    }
    Ok((LossValue::from_per_sample(per_sample), grad))
}

/// Cross entropy against smoothed targets `(1 - eps) * onehot + eps / C`,
/// with the gradient of the mean.
pub fn lsr_loss(z: &Tensor, labels: &[usize], eps: f64) -> Result<(LossValue, Tensor)> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::config(format!(
            "label smoothing eps must be in [0,1): {eps}"
        )));
    }
    let (b, c) = check_logits(z, "lsr_loss")?;
    check_labels(labels, b, c, "lsr_loss")?;
    let ls = log_softmax(z, 1.0)?;
    let uniform = eps / c as f64;
    let mut per_sample = Vec::with_capacity(b);
    let mut grad = ls.exp();
    {
        let g = grad.data_mut();
        for (i, &label) in labels.iter().enumerate() {
            let mut loss = 0.0;
            for j in 0..c {
                let target = uniform + if j == label { 1.0 - eps } else { 0.0 };
                loss -= target * ls.data()[i * c + j];
                g[i * c + j] -= target;
            }
            per_sample.push(loss);
        }
        for v in g.iter_mut() {
            *v /= b as f64;
        }
    }
    Ok((LossValue::from_per_sample(per_sample), grad))
}

/// Per-sample temperature-softened KL divergence
/// `tau^2 * KL(softmax(z_teacher/tau) || softmax(z_student/tau))` together
/// with the gradient of each per-sample value with respect to its student
/// logit row: `tau * (q - p)`. The teacher side is a constant by contract;
/// no gradient ever flows into it.
pub fn kl_soft_per_sample(
    z_teacher: &Tensor,
    z_student: &Tensor,
    tau: f64,
) -> Result<(Tensor, Tensor)> {
    if tau <= 0.0 {
        return Err(Error::config(format!(
            "temperature must be positive: {tau}"
        )));
    }
    let (b, c) = check_logits(z_student, "kl_soft")?;
    if z_teacher.shape() != z_student.shape() {
        return Err(Error::shape(format!(
            "kl_soft: teacher {:?} vs student {:?}",
            z_teacher.shape(),
            z_student.shape()
        )));
    }
    let lp = log_softmax(z_teacher, tau)?;
    let lq = log_softmax(z_student, tau)?;
    let t2 = tau * tau;
    let mut per_sample = vec![0.0; b];
    let mut grad = vec![0.0; b * c];
    for i in 0..b {
        let mut kl = 0.0;
        for j in 0..c {
            let idx = i * c + j;
            let p = lp.data()[idx].exp();
            let q = lq.data()[idx].exp();
            kl += p * (lp.data()[idx] - lq.data()[idx]);
            grad[idx] = tau * (q - p);
        }
        per_sample[i] = t2 * kl;
    }
    Ok((Tensor::from_vec(per_sample), Tensor::new(vec![b, c], grad)?))
}

/// Batch-mean softened KL with the gradient of the mean wrt student logits.
pub fn kl_soft(z_teacher: &Tensor, z_student: &Tensor, tau: f64) -> Result<(LossValue, Tensor)> {
    let (per_sample, per_grad) = kl_soft_per_sample(z_teacher, z_student, tau)?;
    let b = per_sample.len() as f64;
    let loss = LossValue::from_per_sample(per_sample.into_data());
    Ok((loss, per_grad.scale(1.0 / b)))
}

/// Per-sample cross entropy of softened predictions against true labels.
/// Used only to compute adaptive weights; never differentiated.
pub fn soft_target_ce(z: &Tensor, labels: &[usize], alpha_tau: f64) -> Result<Tensor> {
    soft_target_ce_with_mode(z, labels, alpha_tau, SofteningMode::Logits)
}

/// [`soft_target_ce`] with an explicit softening mode. `Probabilities`
/// divides the softmax outputs (not the logits) by the temperature and
/// renormalizes through a second softmax.
pub fn soft_target_ce_with_mode(
    z: &Tensor,
    labels: &[usize],
    alpha_tau: f64,
    mode: SofteningMode,
) -> Result<Tensor> {
    if alpha_tau <= 0.0 {
        return Err(Error::config(format!(
            "alpha_tau must be positive: {alpha_tau}"
        )));
    }
    let (b, c) = check_logits(z, "soft_target_ce")?;
    check_labels(labels, b, c, "soft_target_ce")?;
    let ls = match mode {
        SofteningMode::Logits => log_softmax(z, alpha_tau)?,
        SofteningMode::Probabilities => {
            let probs = softmax(z, 1.0)?.into_tensor();
            log_softmax(&probs, alpha_tau)?
        }
    };
    let mut out = Vec::with_capacity(b);
    for (i, &label) in labels.iter().enumerate() {
        out.push(-ls.data()[i * c + label]);
    }
    Ok(Tensor::from_vec(out))
}
