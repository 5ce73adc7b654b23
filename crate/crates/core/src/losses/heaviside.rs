use serde::{Deserialize, Serialize};

use super::{LossError, Result};

/// Shape of the two smooth step functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothHeavisideParams {
    /// Slope of the lower bound for `t < 0`.
    pub gamma: f64,
    /// Ramp slope of the lower bound for `t ≥ 0`.
    pub nu: f64,
    /// Value of the lower bound at `t = 0`.
    pub mu: f64,
    /// Sigmoid temperature of the upper bound.
    pub tau: f64,
    /// Slope of the upper bound's linear tail.
    pub rho: f64,
    /// Where the upper bound switches from sigmoid to linear.
    pub delta: f64,
}

impl Default for SmoothHeavisideParams {
    fn default() -> Self {
        Self { gamma: 10.0, nu: 25.0, mu: 0.5, tau: 0.01, rho: 100.0, delta: 0.05 }
    }
}

impl SmoothHeavisideParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma, self.nu, self.mu, self.tau, self.rho, self.delta];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(LossError::InvalidParams("heaviside parameters must be positive".into()));
        }
        if self.mu > 1.0 {
            return Err(LossError::InvalidParams(format!("mu must be at most 1, got {}", self.mu)));
        }
        Ok(())
    }

    /// Points where either surrogate is discontinuous or kinked.
    pub fn boundaries(&self) -> [f64; 3] {
        [0.0, (1.0 - self.mu) / self.nu, self.delta]
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Piecewise-linear lower bound of the step (with `H(0) = 1`).
/// Returns `(value, slope)`.
pub fn heaviside_lower(t: f64, p: &SmoothHeavisideParams) -> (f64, f64) {
    if t < 0.0 {
        (p.gamma * t, p.gamma)
    } else {
        let v = p.nu * t + p.mu;
        if v < 1.0 {
            (v, p.nu)
        } else {
            (1.0, 0.0)
        }
    }
}

/// Sigmoid-plus-affine upper bound of the step (with `H(0) = 0`).
/// Returns `(value, slope)`; at `t = delta` the linear tail's slope is used.
pub fn heaviside_upper(t: f64, p: &SmoothHeavisideParams) -> (f64, f64) {
    if t >= p.delta {
        (p.rho * (t - p.delta) + sigmoid(p.delta / p.tau) + 0.5, p.rho)
    } else {
        let s = sigmoid(t / p.tau);
        let slope = s * (1.0 - s) / p.tau;
        if t < 0.0 {
            (s, slope)
        } else {
            (s + 0.5, slope)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(t: f64, at_zero: f64) -> f64 {
        if t > 0.0 {
            1.0
        } else if t == 0.0 {
            at_zero
        } else {
            0.0
        }
    }

    #[test]
    fn lower_values() {
        let p = SmoothHeavisideParams::default();
        assert_eq!(heaviside_lower(0.0, &p), (0.5, 25.0));
        assert_eq!(heaviside_lower(1.0, &p), (1.0, 0.0));
        let (v, s) = heaviside_lower(-0.1, &p);
        assert!((v + 1.0).abs() < 1e-15);
        assert_eq!(s, 10.0);
        // kink at (1 - mu) / nu takes the saturated branch
        assert_eq!(heaviside_lower(0.02, &p), (1.0, 0.0));
    }

    #[test]
    fn upper_values() {
        let p = SmoothHeavisideParams::default();
        let s5 = 1.0 / (1.0 + (-5f64).exp());
        assert!((heaviside_upper(0.05, &p).0 - (s5 + 0.5)).abs() < 1e-15);
        assert!((heaviside_upper(0.05, &p).0 - 1.493_307).abs() < 1e-6);
        assert!((heaviside_upper(0.1, &p).0 - 6.493_307).abs() < 1e-6);
        assert_eq!(heaviside_upper(0.0, &p).0, 1.0);
        assert!(heaviside_upper(-1e3, &p).0 < 1e-300);
        assert_eq!(heaviside_upper(-1e3, &p).1, 0.0);
    }

    #[test]
    fn bounds_on_dense_grid() {
        let p = SmoothHeavisideParams::default();
        for i in -20_000..=20_000 {
            let t = i as f64 * 5e-5;
            assert!(heaviside_lower(t, &p).0 <= step(t, 1.0), "lower at {t}");
            assert!(heaviside_upper(t, &p).0 >= step(t, 0.0), "upper at {t}");
        }
    }

    #[test]
    fn validation() {
        assert!(SmoothHeavisideParams::default().validate().is_ok());
        let bad = SmoothHeavisideParams { mu: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SmoothHeavisideParams { tau: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
