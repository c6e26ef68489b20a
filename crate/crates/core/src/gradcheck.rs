//! Finite-difference gradient verification.
//!
//! The numeric route only ever calls forward passes and loss values, never
//! backward, so it stays an independent oracle for the hand-coded layer
//! gradients. Central differences at `eps` are compared per coordinate
//! with relative error `|a - n| / max(|a|, |n|, 1e-6)`.

use crate::error::{Error, Result};
use crate::losses::cross_entropy;
use crate::model::layers::Layer;
use crate::model::Model;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks every parameter gradient of `model` for the softmax cross
/// entropy objective on `(batch, labels)` against central differences.
pub fn check_model_grads(
    model: &mut Model,
    batch: &Tensor,
    labels: &[usize],
    eps: f64,
) -> Result<GradCheckReport> {
    model.set_mode(crate::model::Mode::Train)?;
    model.zero_grad();
    let logits = model.forward(batch)?;
    let (_, grad) = cross_entropy(&logits, labels)?;
    model.backward(&grad)?;
    let analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
    };
    let param_count = analytic.len();
    for pi in 0..param_count {
        for i in 0..analytic[pi].len() {
            let mut eval_at = |delta: f64| -> Result<f64> {
                model.params_mut()[pi].value.data_mut()[i] += delta;
                let logits = model.forward(batch)?;
                let (loss, _) = cross_entropy(&logits, labels)?;
                model.params_mut()[pi].value.data_mut()[i] -= delta;
                Ok(loss.value)
            };
            let plus = eval_at(eps)?;
            let minus = eval_at(-eps)?;
            let numeric = (plus - minus) / (2.0 * eps);
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel_err(analytic[pi][i], numeric));
        }
    }
    Ok(report)
}

/// Checks one layer's parameter and input gradients under a fixed random
/// linear readout `loss = sum(output ⊙ r)`, whose upstream gradient is `r`
/// itself.
pub fn check_layer_grads(layer: &mut Layer, input: &Tensor, eps: f64) -> Result<GradCheckReport> {
    let probe = {
        let out = layer.forward_train(input)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0x9d0b);
        let data = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(out.shape().to_vec(), data)?
    };
    let readout = |layer: &mut Layer, x: &Tensor| -> Result<f64> {
        let out = layer.forward_train(x)?;
        out.mul(&probe)?.sum_all()
    };

    for p in layer.params_mut() {
        p.zero_grad();
    }
    layer.forward_train(input)?;
    let input_grad = layer.backward(&probe)?;
    let analytic_params: Vec<Vec<f64>> = layer
        .params()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
    };
    for pi in 0..analytic_params.len() {
        for i in 0..analytic_params[pi].len() {
            let eval_at = |layer: &mut Layer, delta: f64| -> Result<f64> {
                layer.params_mut()[pi].value.data_mut()[i] += delta;
                let v = readout(layer, input)?;
                layer.params_mut()[pi].value.data_mut()[i] -= delta;
                Ok(v)
            };
            let plus = eval_at(layer, eps)?;
            let minus = eval_at(layer, -eps)?;
            let numeric = (plus - minus) / (2.0 * eps);
            report.checked += 1;
            report.max_rel_err = report
                .max_rel_err
                .max(rel_err(analytic_params[pi][i], numeric));
        }
    }
    for i in 0..input.len() {
        let mut x = input.clone();
        x.data_mut()[i] += eps;
        let plus = readout(layer, &x)?;
        x.data_mut()[i] -= 2.0 * eps;
        let minus = readout(layer, &x)?;
        let numeric = (plus - minus) / (2.0 * eps);
        report.checked += 1;
        report.max_rel_err = report
            .max_rel_err
            .max(rel_err(input_grad.data()[i], numeric));
    }
    if report.checked == 0 {
        return Err(Error::state("nothing to check".to_string()));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layers::Dense;

    #[test]
    fn dense_layer_passes_quick_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = Layer::Dense(Dense::new(&mut rng, 4, 3));
        let input =
            Tensor::new(vec![2, 4], (0..8).map(|i| (i as f64) * 0.3 - 1.0).collect()).unwrap();
        let report = check_layer_grads(&mut layer, &input, 1e-5).unwrap();
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
    }
}
