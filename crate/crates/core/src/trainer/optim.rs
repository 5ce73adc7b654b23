use super::config::OptimizerConfig;

/// Moments for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptState {
    pub fn zeros(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One update of `params` against `grad` at learning rate `lr`.
    pub fn apply(&mut self, cfg: &OptimizerConfig, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        match *cfg {
            OptimizerConfig::Sgd { momentum } => {
                for ((p, g), m) in params.iter_mut().zip(grad).zip(&mut self.m) {
                    *m = momentum * *m + g;
                    *p -= lr * *m;
                }
            }
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// `lr0 · ½(1 + cos(π t / T))`; constant `lr0` when `T = 0`.
pub fn cosine_lr(lr0: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = (t.min(total) as f64) / total as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_plain_step() {
        let mut st = OptState::zeros(2);
        let mut p = vec![1.0, -1.0];
        st.apply(&OptimizerConfig::Sgd { momentum: 0.0 }, &mut p, &[0.5, 2.0], 0.1);
        assert_eq!(p, vec![1.0 - 0.1 * 0.5, -1.0 - 0.1 * 2.0]);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut st = OptState::zeros(1);
        let mut p = vec![0.0];
        let cfg = OptimizerConfig::Sgd { momentum: 0.5 };
        st.apply(&cfg, &mut p, &[1.0], 1.0);
        st.apply(&cfg, &mut p, &[1.0], 1.0);
        assert_eq!(p, vec![-1.0 - 1.5]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut st = OptState::zeros(2);
        let mut p = vec![0.0, 0.0];
        st.apply(&OptimizerConfig::default(), &mut p, &[3.0, -0.01], 0.1);
        assert!((p[0] + 0.1).abs() < 1e-8);
        assert!((p[1] - 0.1).abs() < 1e-5);
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(0.3, 0, 100), 0.3);
        assert!(cosine_lr(0.3, 100, 100).abs() < 1e-16);
        assert!((cosine_lr(0.3, 50, 100) - 0.15).abs() < 1e-15);
        assert_eq!(cosine_lr(0.3, 5, 0), 0.3);
    }
}
