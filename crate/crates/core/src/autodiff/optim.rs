use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::AutodiffError;
use crate::tensor::Tensor;

/// Learning-rate schedule evaluated at the zero-based update index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// `base * 0.5 * (1 + cos(pi * t / total_steps))`, held at 0 past the horizon.
    Cosine { total_steps: u64 },
}

impl LrSchedule {
    pub fn lr_at(&self, base_lr: f64, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant => base_lr,
            LrSchedule::Cosine { total_steps } => {
                let t = step.min(total_steps) as f64 / total_steps.max(1) as f64;
                base_lr * 0.5 * (1.0 + libm::cos(PI * t))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule: LrSchedule::Constant,
        }
    }

    pub fn with_cosine(mut self, total_steps: u64) -> Self {
        self.schedule = LrSchedule::Cosine { total_steps };
        self
    }
}

/// AdamW with decoupled weight decay. Moment buffers are allocated on the
/// first step and matched to parameters by position.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    /// Learning rate the next update will use.
    pub fn current_lr(&self) -> f64 {
        self.config.schedule.lr_at(self.config.lr, self.step)
    }

    /// One update over `params`. Gradients are read, never cleared.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<(), AutodiffError> {
        for (i, p) in params.iter().enumerate() {
            if !p.requires_grad() {
                return Err(AutodiffError::FrozenParameter { index: i });
            }
            if p.grad().is_none() {
                return Err(AutodiffError::MissingGrad { index: i });
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(AutodiffError::StateMismatch {
                index: self.m.len().min(params.len()),
            });
        }
        for (i, p) in params.iter().enumerate() {
            if self.m[i].len() != p.len() {
                return Err(AutodiffError::StateMismatch { index: i });
            }
        }

        let c = self.config;
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * c.weight_decay * *w;
                *w -= lr * m_hat / (libm::sqrt(v_hat) + c.eps);
            }
        }
        Ok(())
    }
}

/// Plain stochastic gradient descent.
#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&self, params: &mut [&mut Tensor]) -> Result<(), AutodiffError> {
        for (i, p) in params.iter_mut().enumerate() {
            if !p.requires_grad() {
                return Err(AutodiffError::FrozenParameter { index: i });
            }
            let grad = p.grad().ok_or(AutodiffError::MissingGrad { index: i })?.to_vec();
            p.data_mut()
                .iter_mut()
                .zip(&grad)
                .for_each(|(w, g)| *w -= self.lr * g);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: f64) -> Tensor {
        let mut p = Tensor::scalar(v).trainable();
        p.accumulate_grad(&[g]).unwrap();
        p
    }

    #[test]
    fn zero_grad_is_fixed_point_without_decay() {
        let mut p = param(1.5, 0.0);
        let mut opt = AdamW::new(AdamWConfig::new(0.1, 0.0));
        for _ in 0..3 {
            opt.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
        let mut p = param(1.0, 1.0);
        let mut opt = AdamW::new(AdamWConfig::new(0.1, 0.0).with_cosine(1_000_000));
        opt.step(&mut [&mut p]).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert_eq!(p.grad(), Some(&[1.0][..]));
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = param(2.0, 0.0);
        let mut opt = AdamW::new(AdamWConfig::new(0.1, 0.5));
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn cosine_schedule_shape() {
        let s = LrSchedule::Cosine { total_steps: 100 };
        assert_eq!(s.lr_at(0.2, 0), 0.2);
        assert!((s.lr_at(0.2, 50) - 0.1).abs() < 1e-15);
        assert!(s.lr_at(0.2, 100).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for t in 0..=100 {
            let lr = s.lr_at(0.2, t);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn rejects_missing_grad_and_frozen() {
        let mut p = Tensor::scalar(1.0).trainable();
        let mut opt = AdamW::new(AdamWConfig::new(0.1, 0.0));
        assert_eq!(
            opt.step(&mut [&mut p]),
            Err(AutodiffError::MissingGrad { index: 0 })
        );
        let mut frozen = Tensor::scalar(1.0);
        frozen.accumulate_grad(&[1.0]).unwrap();
        assert_eq!(
            opt.step(&mut [&mut frozen]),
            Err(AutodiffError::FrozenParameter { index: 0 })
        );
        assert_eq!(frozen.data(), &[1.0]);
    }
}
