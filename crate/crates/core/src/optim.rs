//! Adam over a flattened parameter vector.

use crate::engine::config::AdamConfig;
use crate::nn::Params;

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Clips `grad` to the configured global norm (if any), then applies one
    /// bias-corrected update. Returns the pre-clip gradient norm.
    pub fn step<P: Params>(&mut self, params: &mut P, grad: &P) -> f64 {
        let mut g = grad.flatten();
        assert_eq!(g.len(), self.m.len(), "gradient length does not match optimizer state");
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let clip = self.config.grad_clip;
        if clip > 0.0 && gnorm > clip {
            let s = clip / gnorm;
            g.iter_mut().for_each(|x| *x *= s);
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut p = params.flatten();
        for i in 0..p.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        params.assign_flat(&p);
        gnorm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Linear::zeros(2, 1);
        let mut g = Linear::zeros(2, 1);
        g.weight[[0, 0]] = 3.0;
        g.weight[[1, 0]] = -0.5;
        let mut opt = Adam::new(
            AdamConfig {
                grad_clip: 0.0,
                ..AdamConfig::default()
            },
            p.num_params(),
        );
        opt.step(&mut p, &g);
        assert!((p.weight[[0, 0]] + 1e-3).abs() < 1e-9);
        assert!((p.weight[[1, 0]] - 1e-3).abs() < 1e-9);
        assert_eq!(p.bias[0], 0.0);
    }

    #[test]
    fn minimizes_quadratic() {
        // f(w) = |w - 2|^2 per coordinate
        let mut p = Linear::zeros(3, 1);
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            p.num_params(),
        );
        for _ in 0..2000 {
            let mut g = p.clone();
            g.visit_mut(&mut |d| d.iter_mut().for_each(|x| *x = 2.0 * (*x - 2.0)));
            opt.step(&mut p, &g);
        }
        assert!(p.flatten().iter().all(|x| (x - 2.0).abs() < 1e-3));
        assert_eq!(opt.steps(), 2000);
    }
}
