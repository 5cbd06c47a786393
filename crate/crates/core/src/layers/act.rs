use crate::error::Result;
use crate::tensor::{Real, Tensor4};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const CUBIC: f64 = 0.044715;

/// Tanh-approximation GELU: `0.5 x (1 + tanh(√(2/π) (x + 0.044715 x³)))`.
pub fn gelu_scalar<T: Real>(x: T) -> T {
    let k = T::lit(SQRT_2_OVER_PI);
    let inner = k * (x + T::lit(CUBIC) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

pub fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let k = T::lit(SQRT_2_OVER_PI);
    let c = T::lit(CUBIC);
    let t = (k * (x + c * x * x * x)).tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::lit(3.0) * c * x * x)
}

pub fn gelu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(gelu_scalar)
}

pub fn gelu_backward<T: Real>(x: &Tensor4<T>, d_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    x.zip(d_out, |x, g| g * gelu_grad_scalar(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        // 0.5·(1 + tanh(√(2/π)·1.044715))
        assert!((gelu_scalar(1.0f64) - 0.841192).abs() < 1e-6);
        assert!((gelu_scalar(10.0f64) - 10.0).abs() < 1e-9);
        assert!(gelu_scalar(-10.0f64).abs() < 1e-9);
    }

    #[test]
    fn derivative_matches_central_differences() {
        let h = 1e-6;
        for i in -40..=40 {
            let x = i as f64 * 0.1 + 0.003;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad_scalar(x)).abs() < 1e-8, "x={x}");
        }
    }
}
