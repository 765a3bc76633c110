use rand::Rng;
use serde::Serialize;

use super::layers::mse_loss;
use super::network::{Mode, ResNet, ResNetConfig};
use crate::seed;
use crate::Result;

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub worst: String,
    pub tolerance: f64,
    /// Tensors whose worst element exceeds the tolerance.
    pub failing: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compare analytic gradients of the MSE loss of `net` on `(x, y)` against
/// central differences with step `h`. Dropout is ignored.
pub fn check_network(net: &ResNet<f64>, x: &[f64], y: &[f64], batch: usize, h: f64, tolerance: f64) -> Result<GradCheckReport> {
    let mut rng = seed::rng(0);
    let loss = |n: &ResNet<f64>, rng: &mut seed::Rng| -> Result<f64> {
        let yhat = n.predict(x, batch, Mode::Eval, rng)?;
        Ok(mse_loss(&yhat, y)?.0)
    };
    let cache = net.forward(x, batch, Mode::Eval, &mut rng)?;
    let (_, dy) = mse_loss(cache.output(), y)?;
    let grads = net.backward(&cache, &dy)?;

    let mut probe = net.clone();
    let mut tensors = Vec::new();
    for (ti, g) in grads.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..g.len() {
            let orig = probe.params()[ti].data()[i];
            probe.params_mut()[ti].data_mut()[i] = orig + h;
            let up = loss(&probe, &mut rng)?;
            probe.params_mut()[ti].data_mut()[i] = orig - h;
            let down = loss(&probe, &mut rng)?;
            probe.params_mut()[ti].data_mut()[i] = orig;
            worst = worst.max(relative_error(g.data()[i], (up - down) / (2.0 * h)));
        }
        tensors.push(TensorCheck {
            name: net.names()[ti].clone(),
            max_rel_error: worst,
        });
    }
    let (max_rel_error, worst) = tensors
        .iter()
        .fold((0.0, String::new()), |(m, w), t| if t.max_rel_error > m { (t.max_rel_error, t.name.clone()) } else { (m, w) });
    let failing = tensors
        .iter()
        .filter(|t| t.max_rel_error >= tolerance)
        .map(|t| t.name.clone())
        .collect();
    Ok(GradCheckReport {
        tensors,
        max_rel_error,
        worst,
        tolerance,
        failing,
    })
}

/// Full-network check on a randomly initialised 64-bit network with
/// random inputs and targets, `p = 0`.
pub fn gradient_check(config: &ResNetConfig, batch: usize, tolerance: f64, seed_value: u64) -> Result<GradCheckReport> {
    let config = ResNetConfig {
        dropout: 0.0,
        ..config.clone()
    };
    let mut rng = seed::rng(seed_value);
    let net = ResNet::<f64>::init(config.clone(), &mut rng)?;
    let x: Vec<f64> = (0..batch * config.horizon * config.d_in)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let y: Vec<f64> = (0..batch * config.d_out).map(|_| rng.random::<f64>()).collect();
    check_network(&net, &x, &y, batch, 1e-5, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ResNetConfig {
        ResNetConfig {
            filters: 4,
            kernel: 5,
            blocks: 2,
            dropout: 0.0,
            d_in: 3,
            d_out: 2,
            horizon: 7,
        }
    }

    #[test]
    fn full_network_gradients() {
        let report = gradient_check(&small(), 2, 1e-4, 42).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.tensors.len(), 8);
    }

    #[test]
    fn zero_network_zero_input() {
        let net = ResNet::<f64>::zeros(small()).unwrap();
        let x = vec![0.0; 2 * 7 * 3];
        let y = vec![0.3, 0.9, 0.1, 0.6];
        let report = check_network(&net, &x, &y, 2, 1e-5, 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn failing_tensor_is_named() {
        let report = gradient_check(&small(), 2, 0.0, 42).unwrap();
        assert!(!report.passed());
        assert!(report.failing.contains(&report.worst));
    }
}
