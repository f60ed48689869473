use crate::error::{Error, Result};
use crate::model::LayeredParams;

/// Central-difference comparison of an analytic gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    /// `|g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|)` per flattened parameter.
    pub errors: Vec<f64>,
    pub max_error: f64,
    pub checked: usize,
}

impl GradReport {
    /// Flattened indices whose relative error exceeds `tol`.
    pub fn flagged(&self, tol: f64) -> Vec<usize> {
        self.errors
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > tol)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Checks the gradient returned by `loss_fn` against central differences
/// with step `step` for every parameter.
pub fn finite_diff_check<F>(params: &LayeredParams, loss_fn: F, step: f64) -> Result<GradReport>
where
    F: Fn(&LayeredParams) -> Result<(f64, LayeredParams)>,
{
    if !(step > 0.0) {
        return Err(Error::invalid(format!("finite difference step must be > 0, got {step}")));
    }
    let (loss, analytic) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss} at the probe point")));
    }
    let analytic = analytic.flatten();
    let base = params.flatten();
    let mut errors = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + step;
        let (up, _) = loss_fn(&params.with_flat(&probe)?)?;
        probe[i] = base[i] - step;
        let (down, _) = loss_fn(&params.with_flat(&probe)?)?;
        probe[i] = base[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss while probing parameter {i}")));
        }
        let fd = (up - down) / (2.0 * step);
        let ad = analytic[i];
        errors.push((ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-12));
    }
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(GradReport {
        checked: errors.len(),
        errors,
        max_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Activation, Layer, ModelConfig, Target};
    use crate::numerics::Tensor;

    #[test]
    fn quadratic_is_exact() {
        // 0.5 * |theta|^2 with analytic gradient theta
        let p = LayeredParams::scalar(1.0);
        let loss = |q: &LayeredParams| {
            let flat = q.flatten();
            let l = 0.5 * flat.iter().map(|v| v * v).sum::<f64>();
            Ok((l, q.clone()))
        };
        let r = finite_diff_check(&p, loss, 1e-5).unwrap();
        assert_eq!(r.checked, 2);
        assert!(r.max_error < 1e-9, "{r:?}");
    }

    #[test]
    fn relu_kink_is_flagged() {
        let layers = vec![
            Layer {
                weight: Tensor::filled(&[1, 1], 0.0),
                bias: Tensor::zeros(&[1]),
                activation: Activation::Relu,
            },
            Layer {
                weight: Tensor::filled(&[1, 1], 1.0),
                bias: Tensor::zeros(&[1]),
                activation: Activation::Identity,
            },
        ];
        let p = LayeredParams::new(layers).unwrap();
        let x = Tensor::filled(&[1, 1], 1.0);
        let y = Tensor::filled(&[1, 1], 3.0);
        let r = finite_diff_check(&p, |q| q.loss_and_grad(&x, Target::Values(&y)), 1e-5).unwrap();
        assert!(r.flagged(1e-5).contains(&0), "{r:?}");
    }

    #[test]
    fn small_tanh_mlp() {
        // 2 -> 4 -> 2: 12 + 10 = 22 parameters
        let p = init_params(&ModelConfig::new(2, &[4], 2).with_activation(Activation::Tanh).with_seed(5)).unwrap();
        let x = Tensor::from_fn(&[6, 2], |i| ((i * 7 % 11) as f64 - 5.0) / 3.0);
        let labels = [0, 1, 1, 0, 1, 0];
        let r = finite_diff_check(&p, |q| q.loss_and_grad(&x, Target::Classes(&labels)), 1e-5).unwrap();
        assert_eq!(r.checked, 22);
        assert!(r.max_error < 1e-5, "{}", r.max_error);
        assert!(r.errors.iter().all(|&e| e <= r.max_error && e >= 0.0));
    }

    #[test]
    fn rejects_bad_step_and_non_finite_loss() {
        let p = LayeredParams::scalar(1.0);
        assert!(finite_diff_check(&p, |q| Ok((0.0, q.clone())), 0.0).is_err());
        assert!(matches!(
            finite_diff_check(&p, |q| Ok((f64::NAN, q.clone())), 1e-3),
            Err(Error::NonFinite(_))
        ));
    }
}
