//! Finite-difference validation of the LIF backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{backward, forward, LifConfig, LifGrads, LifParams, LifSaved};
use crate::error::{Error, Result};
use crate::gradcheck::{rel_err_scalar, rel_err_tensor};
use crate::tensor::{Shape, Tensor4};

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub params: LifParams<f64>,
    /// Minimum distance between any membrane value and the threshold.
    pub margin: f64,
    /// Central-difference half step.
    pub step: f64,
    pub max_attempts: usize,
    /// Inputs are drawn uniformly from this range.
    pub input_range: (f64, f64),
    /// Draw every input strictly above the threshold (every step fires).
    pub all_above_threshold: bool,
    /// Use an all-zero upstream gradient.
    pub zero_upstream: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            params: LifParams::default(),
            margin: 1e-3,
            step: 1e-6,
            max_attempts: 1000,
            input_range: (-0.5, 1.0),
            all_above_threshold: false,
            zero_upstream: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub shape: Shape,
    pub cfg: LifConfig,
    pub d_input: f64,
    pub d_tau: f64,
    pub d_v_th: f64,
    /// Flat index of the largest `d_input` discrepancy.
    pub worst_index: [usize; 4],
    pub attempts: usize,
}

impl CheckReport {
    pub fn max_error(&self) -> f64 {
        self.d_input.max(self.d_tau).max(self.d_v_th)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_error() < tol
    }
}

/// Compares [`backward`] against central finite differences of `Σ w·r`.
pub fn forward_backward_check(
    shape: Shape,
    cfg: LifConfig,
    seed: u64,
    opts: &CheckOptions,
) -> Result<CheckReport> {
    forward_backward_check_with(shape, cfg, seed, opts, backward)
}

/// Same as [`forward_backward_check`] with a caller-supplied backward pass.
pub fn forward_backward_check_with<B>(
    shape: Shape,
    cfg: LifConfig,
    seed: u64,
    opts: &CheckOptions,
    backward_fn: B,
) -> Result<CheckReport>
where
    B: Fn(&Tensor4<f64>, &LifSaved<f64>) -> Result<LifGrads<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = opts.params;
    let (lo, hi) = if opts.all_above_threshold {
        (p.v_th + 0.1, p.v_th + 1.0)
    } else {
        opts.input_range
    };

    let mut attempts = 0;
    let (x, saved) = loop {
        if attempts == opts.max_attempts {
            return Err(Error::MarginNotFound {
                margin: opts.margin,
                attempts,
            });
        }
        attempts += 1;
        let x = Tensor4::from_fn(shape, |_| rng.random_range(lo..hi));
        let (_, saved) = forward(&x, &p, &cfg)?;
        if saved
            .u
            .data()
            .iter()
            .all(|u| (u - p.v_th).abs() >= opts.margin)
        {
            break (x, saved);
        }
    };

    let w = if opts.zero_upstream {
        Tensor4::zeros(shape)
    } else {
        Tensor4::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    };
    let analytic = backward_fn(&w, &saved)?;

    let h = opts.step;
    let loss_delta = |xp: &Tensor4<f64>,
                      pp: &LifParams<f64>,
                      xm: &Tensor4<f64>,
                      pm: &LifParams<f64>|
     -> Result<f64> {
        let (rp, _) = forward(xp, pp, &cfg)?;
        let (rm, _) = forward(xm, pm, &cfg)?;
        // Σ w (r⁺ − r⁻) avoids cancelling two large loss totals.
        Ok(w.data()
            .iter()
            .zip(rp.data().iter().zip(rm.data()))
            .map(|(&wi, (&a, &b))| wi * (a - b))
            .sum::<f64>()
            / (2.0 * h))
    };

    let mut numeric = Tensor4::zeros(shape);
    let mut xp = x.clone();
    let mut xm = x.clone();
    for i in 0..x.len() {
        xp.data_mut()[i] += h;
        xm.data_mut()[i] -= h;
        numeric.data_mut()[i] = loss_delta(&xp, &p, &xm, &p)?;
        xp.data_mut()[i] = x.data()[i];
        xm.data_mut()[i] = x.data()[i];
    }

    let nudge = |dt: f64, dv: f64| LifParams {
        tau: p.tau + dt,
        v_th: p.v_th + dv,
        ..p
    };
    let fd_tau = loss_delta(&x, &nudge(h, 0.0), &x, &nudge(-h, 0.0))?;
    let fd_vth = loss_delta(&x, &nudge(0.0, h), &x, &nudge(0.0, -h))?;

    let (d_input, worst) = rel_err_tensor(&analytic.d_input, &numeric);
    Ok(CheckReport {
        shape,
        cfg,
        d_input,
        d_tau: rel_err_scalar(analytic.d_tau, fd_tau),
        d_v_th: rel_err_scalar(analytic.d_v_th, fd_vth),
        worst_index: if shape.is_empty() {
            [0; 4]
        } else {
            shape.unravel(worst)
        },
        attempts,
    })
}
