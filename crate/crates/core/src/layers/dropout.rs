use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

/// Survivor scale factors drawn by [`dropout`] / [`drop_path`]; `None` means identity.
#[derive(Clone, Debug, PartialEq)]
pub enum Mask<T> {
    Identity,
    /// One factor per element.
    Elementwise(Vec<T>),
    /// One factor per sample.
    PerSample(Vec<T>),
}

impl<T: Real> Mask<T> {
    pub fn apply(&self, x: &Tensor4<T>) -> Tensor4<T> {
        match self {
            Mask::Identity => x.clone(),
            Mask::Elementwise(m) => {
                let mut out = x.clone();
                out.data_mut().iter_mut().zip(m).for_each(|(v, &s)| *v *= s);
                out
            }
            Mask::PerSample(m) => {
                let mut out = x.clone();
                let per = x.shape().sample();
                if per > 0 {
                    for (chunk, &s) in out.data_mut().chunks_mut(per).zip(m) {
                        chunk.iter_mut().for_each(|v| *v *= s);
                    }
                }
                out
            }
        }
    }

    /// The masks are linear, so backward applies the same factors.
    pub fn backward(&self, d_out: &Tensor4<T>) -> Tensor4<T> {
        self.apply(d_out)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("drop rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Zeroes each element with probability `rate`, scaling survivors by `1 / (1 - rate)`.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    x: &Tensor4<T>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor4<T>, Mask<T>)> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok((x.clone(), Mask::Identity));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let m: Vec<T> = (0..x.len())
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let mask = Mask::Elementwise(m);
    Ok((mask.apply(x), mask))
}

/// Stochastic depth: zeroes a whole residual branch per sample with probability `rate`.
pub fn drop_path<T: Real, R: Rng + ?Sized>(
    x: &Tensor4<T>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor4<T>, Mask<T>)> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok((x.clone(), Mask::Identity));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let m: Vec<T> = (0..x.shape().n)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let mask = Mask::PerSample(m);
    Ok((mask.apply(x), mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_rate_and_inference_are_identity() {
        let x = Tensor4::from_fn([2, 3, 4, 4], |i| i as f32);
        let mut r = stream(0, 0);
        for training in [true, false] {
            assert_eq!(dropout(&x, 0.0, &mut r, training).unwrap().0, x);
            assert_eq!(drop_path(&x, 0.0, &mut r, training).unwrap().0, x);
        }
        assert_eq!(dropout(&x, 0.7, &mut r, false).unwrap().0, x);
        assert_eq!(drop_path(&x, 0.7, &mut r, false).unwrap().0, x);
    }

    #[test]
    fn rate_out_of_range_is_rejected() {
        let x = Tensor4::<f32>::zeros([1, 1, 1, 1]);
        let mut r = stream(0, 0);
        assert!(dropout(&x, 1.0, &mut r, true).is_err());
        assert!(drop_path(&x, -0.1, &mut r, true).is_err());
    }

    #[test]
    fn half_rate_statistics() {
        let x = Tensor4::<f64>::full([1, 1, 400, 400], 2.0);
        let mut r = stream(42, 0);
        let (y, _) = dropout(&x, 0.5, &mut r, true).unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / y.len() as f64;
        assert!((survivors - 0.5).abs() < 0.02, "{survivors}");
        let mean = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 2.0).abs() < 0.04, "{mean}");
    }

    #[test]
    fn drop_path_zeroes_whole_samples() {
        let x = Tensor4::<f64>::full([64, 2, 3, 3], 1.0);
        let mut r = stream(7, 0);
        let (y, mask) = drop_path(&x, 0.5, &mut r, true).unwrap();
        for i in 0..64 {
            let s = &y.data()[i * 18..(i + 1) * 18];
            assert!(s.iter().all(|&v| v == 0.0) || s.iter().all(|&v| v == 2.0));
        }
        assert_eq!(mask.backward(&x), y);
    }
}
