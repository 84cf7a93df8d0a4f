use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn update_body(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], cfg: &AdamConfig, bc1: f64, bc2: f64) {
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let (c1, c2) = (1.0 - b1, 1.0 - b2);
    for i in 0..params.len() {
        let g = grads[i];
        let mi = b1 * m[i] + c1 * g;
        let vi = b2 * v[i] + c2 * (g * g);
        m[i] = mi;
        v[i] = vi;
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn update_avx2(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], cfg: &AdamConfig, bc1: f64, bc2: f64) {
    update_body(params, grads, m, v, cfg, bc1, bc2)
}

impl AdamState {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        AdamState {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.m.len()],
                got: vec![params.len(), grads.len()],
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.config.beta1.powi(t);
        let bc2 = 1.0 - self.config.beta2.powi(t);
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: AVX2 availability checked above.
            unsafe { update_avx2(params, grads, &mut self.m, &mut self.v, &self.config, bc1, bc2) };
            return Ok(());
        }
        update_body(params, grads, &mut self.m, &mut self.v, &self.config, bc1, bc2);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(AdamConfig::default(), 3);
        let mut p = vec![1.0, -2.0, 0.5];
        s.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_is_normalized_gradient() {
        let cfg = AdamConfig::default();
        let g = [0.3, -4.0, 1e-3, 2e-9];
        let mut s = AdamState::new(cfg, g.len());
        let mut p = vec![0.0; g.len()];
        s.step(&mut p, &g).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expect = -cfg.learning_rate * gi / (gi.abs() + cfg.epsilon);
            assert!((pi - expect).abs() <= 1e-12 * expect.abs().max(1e-12), "{pi} vs {expect}");
        }
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let cfg = AdamConfig::default();
        let mut s = AdamState::new(cfg, 1);
        let mut p = vec![0.0];
        let mut last = 0.0;
        for _ in 0..500 {
            let before = p[0];
            s.step(&mut p, &[2.5]).unwrap();
            last = p[0] - before;
        }
        assert!(last < 0.0);
        assert!((last.abs() - cfg.learning_rate).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(AdamConfig::default(), 2);
        assert!(s.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
