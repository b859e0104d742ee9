//! AdamW with linear warmup and cosine decay.

use crate::config::OptimConfig;
use crate::tensor::Tensor;

/// Learning rate at `step` of `total` steps: linear warmup over `warmup`
/// steps, then cosine decay to zero.
pub fn lr_at(base: f64, step: usize, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Decoupled weight decay Adam. Moments are kept per parameter in the order
/// the parameters are passed to [`AdamW::step`]; decay skips vectors
/// (biases and normalisation scales).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: OptimConfig,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(config: OptimConfig, params: &[Tensor<f32>]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    /// One update at learning rate `lr`; parameters without a gradient are
    /// left alone.
    pub fn step(&mut self, params: &[Tensor<f32>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter list changed");
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let step_size = (lr / bc1) as f32;
        let inv_bc2_sqrt = (1.0 / bc2.sqrt()) as f32;
        let eps = c.eps as f32;
        for (i, p) in params.iter().enumerate() {
            let Some(g) = p.grad() else { continue };
            let decay = if p.shape().len() > 1 {
                (1.0 - lr * c.weight_decay) as f32
            } else {
                1.0
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            p.update(|w| {
                for j in 0..w.len() {
                    m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                    v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                    w[j] = w[j] * decay - step_size * m[j] / (v[j].sqrt() * inv_bc2_sqrt + eps);
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        assert!((lr_at(1.0, 0, 4, 20) - 0.25).abs() < 1e-12);
        assert!((lr_at(1.0, 3, 4, 20) - 1.0).abs() < 1e-12);
        assert!((lr_at(1.0, 4, 4, 20) - 1.0).abs() < 1e-12);
        assert!((lr_at(1.0, 12, 4, 20) - 0.5).abs() < 1e-12);
        assert!(lr_at(1.0, 20, 4, 20).abs() < 1e-12);
        assert!((lr_at(1.0, 0, 0, 10) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let w = Tensor::param(vec![1.0f32, -1.0], &[2]).unwrap();
        w.mul(&Tensor::from_vec(vec![3.0, -0.5], &[2]).unwrap()).unwrap().sum().backward().unwrap();
        let mut opt = AdamW::new(OptimConfig::default(), &[w.clone()]);
        opt.step(&[w.clone()], 0.1);
        let got = w.to_vec();
        assert!((got[0] - 0.9).abs() < 1e-5 && (got[1] + 0.9).abs() < 1e-5);
    }

    #[test]
    fn matrices_decay_vectors_do_not() {
        let cfg = OptimConfig {
            weight_decay: 0.5,
            ..OptimConfig::default()
        };
        let mat = Tensor::param(vec![2.0f32; 4], &[2, 2]).unwrap();
        let vec_ = Tensor::param(vec![2.0f32; 2], &[2]).unwrap();
        mat.scale(0.0).sum().add(&vec_.scale(0.0).sum()).unwrap().backward().unwrap();
        let mut opt = AdamW::new(cfg, &[mat.clone(), vec_.clone()]);
        opt.step(&[mat.clone(), vec_.clone()], 0.1);
        assert!((mat.to_vec()[0] - 1.9).abs() < 1e-6);
        assert_eq!(vec_.to_vec()[0], 2.0);
    }
}
