use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

/// Mean softmax cross-entropy against targets `1 - s` on the true class and
/// `s / (K - 1)` elsewhere. `logits` is `(n, K, 1, 1)`; returns the loss and
/// its gradient.
pub fn cross_entropy_ls<T: Real>(
    logits: &Tensor4<T>,
    labels: &[usize],
    smoothing: f64,
) -> Result<(f64, Tensor4<T>)> {
    let s = logits.shape();
    let (n, k) = (s.n, s.c);
    if s.h != 1 || s.w != 1 || n == 0 || k == 0 {
        return Err(Error::invalid(format!(
            "logits must be (n, K, 1, 1), got {s}"
        )));
    }
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::invalid(format!(
            "smoothing {smoothing} outside [0, 1)"
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let off = if k > 1 {
        smoothing / (k - 1) as f64
    } else {
        0.0
    };
    let on = if k > 1 { 1.0 - smoothing } else { 1.0 };
    let mut grad = Tensor4::zeros(s);
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row: Vec<f64> = logits.data()[i * k..(i + 1) * k]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        for (j, &z) in row.iter().enumerate() {
            let target = if j == label { on } else { off };
            total -= target * (z - lse);
            grad.data_mut()[i * k + j] = T::lit(((z - lse).exp() - target) / n as f64);
        }
    }
    Ok((total / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::rel_err_tensor;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn uniform_logits_give_log_k() {
        let (l, _) =
            cross_entropy_ls(&Tensor4::<f64>::zeros([3, 5, 1, 1]), &[0, 2, 4], 0.0).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-15);
        let (l, _) = cross_entropy_ls(&Tensor4::<f64>::zeros([1, 5, 1, 1]), &[1], 0.3).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_logits_approach_zero() {
        let t = Tensor4::from_vec([1, 3, 1, 1], vec![0.0, 60.0, 0.0]).unwrap();
        assert!(cross_entropy_ls(&t, &[1], 0.0).unwrap().0 < 1e-20);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = stream(3, 0);
        let z = Tensor4::from_fn([4, 6, 1, 1], |_| rng.random_range(-3.0..3.0));
        let labels = [0, 5, 2, 2];
        let (_, g) = cross_entropy_ls(&z, &labels, 0.1).unwrap();
        let h = 1e-6;
        let num = Tensor4::from_fn(z.shape(), |i| {
            let mut p = z.clone();
            p.data_mut()[i] += h;
            let mut m = z.clone();
            m.data_mut()[i] -= h;
            (cross_entropy_ls(&p, &labels, 0.1).unwrap().0
                - cross_entropy_ls(&m, &labels, 0.1).unwrap().0)
                / (2.0 * h)
        });
        let (e, _) = rel_err_tensor(&g, &num);
        assert!(e < 1e-6, "{e}");
    }

    #[test]
    fn invalid_inputs() {
        let z = Tensor4::<f64>::zeros([2, 3, 1, 1]);
        assert!(cross_entropy_ls(&z, &[0, 3], 0.0).is_err());
        assert!(cross_entropy_ls(&z, &[0], 0.0).is_err());
        assert!(cross_entropy_ls(&z, &[0, 1], 1.0).is_err());
    }
}
