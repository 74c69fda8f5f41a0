use serde::{Deserialize, Serialize};

/// Element-wise activation applied after a dense affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Exponential linear unit with unit scale: `x` for `x > 0`, `exp(x) - 1` otherwise.
    Elu,
    /// Logistic sigmoid `1 / (1 + exp(-x))`.
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's own output.
    #[inline]
    pub fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Elu => {
                if out > 0.0 {
                    1.0
                } else {
                    out + 1.0
                }
            }
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Identity => 1.0,
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elu_matches_definition() {
        assert_eq!(Activation::Elu.apply(0.0), 0.0);
        assert_eq!(Activation::Elu.apply(2.5), 2.5);
        assert!((Activation::Elu.apply(-1.0) - ((-1.0f64).exp() - 1.0)).abs() < 1e-12);
        assert!((Activation::Elu.apply(-800.0) + 1.0).abs() < 1e-12);
        assert!((Activation::Elu.apply(f64::NEG_INFINITY) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_matches_definition() {
        assert_eq!(sigmoid(0.0), 0.5);
        for &x in &[-30.0f64, -3.0, -0.2, 0.7, 4.0, 25.0] {
            let expect = 1.0 / (1.0 + (-x).exp());
            assert!((sigmoid(x) - expect).abs() < 1e-12, "x={x}");
        }
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for act in [Activation::Elu, Activation::Sigmoid, Activation::Identity] {
            for &x in &[-2.0, -0.3, 0.4, 1.7] {
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                let an = act.derivative_from_output(act.apply(x));
                assert!((fd - an).abs() < 1e-8, "{act:?} at {x}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }
}
