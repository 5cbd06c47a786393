//! Full-precision leaky integrate-and-fire token mixing.
//!
//! A spatial axis (`H` for [`Direction::Vertical`], `W` for
//! [`Direction::Horizontal`]) is cut into consecutive blocks of `groups`
//! positions. Each block, at every `(batch, channel, cross-axis)` coordinate,
//! is one independent chain running
//!
//! ```text
//! u_1     = y_1
//! o_t     = [u_t > v_th]
//! r_t     = max(u_t, v_th)
//! u_{t+1} = tau * u_t * (1 - o_t) + y_{t+1}
//! ```
//!
//! A fired step carries nothing into the next one (reset to zero); a silent
//! step leaks `tau * u_t` forward and emits the threshold itself. When the
//! axis extent is not a multiple of `groups`, the last block is a shorter
//! chain.

mod check;
mod oracle;

pub use check::{forward_backward_check, forward_backward_check_with, CheckOptions, CheckReport};
pub use oracle::{classical_binary, oracle_scalar, ScalarTrace};

use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::{Axis, Real, Shape, Tensor4};

pub const DEFAULT_TAU: f64 = 0.25;
pub const DEFAULT_V_TH: f64 = 0.25;
pub const DEFAULT_GROUPS: usize = 4;

/// Learnable leak/threshold pair of one LIF unit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifParams<T> {
    pub tau: T,
    pub v_th: T,
    pub learn_tau: bool,
    pub learn_v_th: bool,
}

impl<T: Real> LifParams<T> {
    pub fn new(tau: T, v_th: T) -> Self {
        LifParams {
            tau,
            v_th,
            learn_tau: true,
            learn_v_th: true,
        }
    }
}

impl<T: Real> Default for LifParams<T> {
    fn default() -> Self {
        Self::new(T::lit(DEFAULT_TAU), T::lit(DEFAULT_V_TH))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Chains run down the `H` axis.
    Vertical,
    /// Chains run along the `W` axis.
    Horizontal,
}

impl Direction {
    pub fn axis(self) -> Axis {
        match self {
            Direction::Vertical => Axis::H,
            Direction::Horizontal => Axis::W,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LifConfig {
    pub direction: Direction,
    pub groups: usize,
}

impl LifConfig {
    pub fn new(direction: Direction, groups: usize) -> Self {
        LifConfig { direction, groups }
    }

    fn validate(&self) -> Result<()> {
        if self.groups == 0 {
            return Err(Error::invalid("LIF groups must be >= 1"));
        }
        Ok(())
    }
}

/// Forward trace consumed by [`backward`].
#[derive(Clone, Debug)]
pub struct LifSaved<T> {
    /// Membrane potential at every position, laid out like the input.
    pub u: Tensor4<T>,
    /// Fire mask `u > v_th`, flat and laid out like the input.
    pub fired: Vec<bool>,
    pub params: LifParams<T>,
    pub cfg: LifConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LifGrads<T> {
    pub d_input: Tensor4<T>,
    pub d_tau: T,
    pub d_v_th: T,
}

/// Runs the grouped recurrence over `x`. Returns the output and the trace for
/// [`backward`].
pub fn forward<T: Real>(
    x: &Tensor4<T>,
    params: &LifParams<T>,
    cfg: &LifConfig,
) -> Result<(Tensor4<T>, LifSaved<T>)> {
    cfg.validate()?;
    x.check_finite()?;
    let shape = x.shape();
    let plane = shape.plane();
    let mut r = Tensor4::zeros(shape);
    let mut u = Tensor4::zeros(shape);
    let mut fired = vec![false; shape.len()];
    let (tau, v_th, g) = (params.tau, params.v_th, cfg.groups);
    let xd = x.data();

    exec::for_each_chunk3(
        r.data_mut(),
        plane,
        u.data_mut(),
        plane,
        &mut fired,
        plane,
        |p, r, u, o| {
            let y = &xd[p * plane..(p + 1) * plane];
            match cfg.direction {
                Direction::Vertical => forward_plane_vertical(y, shape, g, tau, v_th, r, u, o),
                Direction::Horizontal => forward_plane_horizontal(y, shape, g, tau, v_th, r, u, o),
            }
        },
    );

    let saved = LifSaved {
        u,
        fired,
        params: *params,
        cfg: *cfg,
    };
    Ok((r, saved))
}

#[inline(always)]
fn step<T: Real>(tau: T, u_prev: T, fired_prev: bool, y: T) -> T {
    tau * u_prev * (T::one() - mask::<T>(fired_prev)) + y
}

// Rows of the plane are the chain steps; each column is a separate chain.
#[allow(clippy::too_many_arguments)]
fn forward_plane_vertical<T: Real>(
    y: &[T],
    shape: Shape,
    g: usize,
    tau: T,
    v_th: T,
    r: &mut [T],
    u: &mut [T],
    o: &mut [bool],
) {
    let w = shape.w;
    for k in 0..shape.h {
        let row = k * w..(k + 1) * w;
        if k % g == 0 {
            u[row.clone()].copy_from_slice(&y[row.clone()]);
        } else {
            let (head, tail) = u.split_at_mut(k * w);
            let prev = &head[(k - 1) * w..];
            let prev_o = &o[(k - 1) * w..k * w];
            for l in 0..w {
                tail[l] = step(tau, prev[l], prev_o[l], y[k * w + l]);
            }
        }
        for i in row {
            o[i] = u[i] > v_th;
            r[i] = u[i].max(v_th);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn forward_plane_horizontal<T: Real>(
    y: &[T],
    shape: Shape,
    g: usize,
    tau: T,
    v_th: T,
    r: &mut [T],
    u: &mut [T],
    o: &mut [bool],
) {
    let w = shape.w;
    for k in 0..shape.h {
        let base = k * w;
        for l in 0..w {
            let i = base + l;
            u[i] = if l % g == 0 {
                y[i]
            } else {
                step(tau, u[i - 1], o[i - 1], y[i])
            };
            o[i] = u[i] > v_th;
            r[i] = u[i].max(v_th);
        }
    }
}

/// Analytic gradients with the fire mask held constant:
/// `dr_t/du_t = o_t`, `dr_t/dv_th = 1 - o_t`, `du_{t+1}/du_t = tau (1 - o_t)`.
///
/// Per chain, `g_t = dr_t o_t + g_{t+1} tau (1 - o_t)` runs from the last step
/// back to the first; `d_input = g`, `d_tau = Σ g_{t+1} u_t (1 - o_t)` and
/// `d_v_th = Σ dr_t (1 - o_t)`. Scalar sums are combined chain by chain in a
/// fixed order, so the result does not depend on the thread count.
pub fn backward<T: Real>(d_r: &Tensor4<T>, saved: &LifSaved<T>) -> Result<LifGrads<T>> {
    let shape = saved.u.shape();
    d_r.expect_shape("lif backward", shape)?;
    let plane = shape.plane();
    let planes = shape.n * shape.c;
    let mut d_input = Tensor4::zeros(shape);
    let mut partial = vec![(T::zero(), T::zero()); planes];
    let (tau, g) = (saved.params.tau, saved.cfg.groups);
    let (dr, u, o) = (d_r.data(), saved.u.data(), &saved.fired[..]);

    exec::for_each_chunk2(d_input.data_mut(), plane, &mut partial, 1, |p, dx, acc| {
        let s = p * plane..(p + 1) * plane;
        let (dr, u, o) = (&dr[s.clone()], &u[s.clone()], &o[s]);
        acc[0] = match saved.cfg.direction {
            Direction::Vertical => backward_plane_vertical(dr, u, o, shape, g, tau, dx),
            Direction::Horizontal => backward_plane_horizontal(dr, u, o, shape, g, tau, dx),
        };
    });

    let (d_tau, d_v_th) = partial
        .into_iter()
        .fold((T::zero(), T::zero()), |(a, b), (x, y)| (a + x, b + y));
    Ok(LifGrads {
        d_input,
        d_tau,
        d_v_th,
    })
}

#[inline(always)]
fn mask<T: Real>(fired: bool) -> T {
    if fired {
        T::one()
    } else {
        T::zero()
    }
}

fn backward_plane_vertical<T: Real>(
    dr: &[T],
    u: &[T],
    o: &[bool],
    shape: Shape,
    g: usize,
    tau: T,
    dx: &mut [T],
) -> (T, T) {
    let (h, w) = (shape.h, shape.w);
    let mut chain_tau = vec![T::zero(); w];
    let mut chain_vth = vec![T::zero(); w];
    let (mut sum_tau, mut sum_vth) = (T::zero(), T::zero());
    for b0 in (0..h).step_by(g) {
        let b1 = (b0 + g).min(h);
        chain_tau.fill(T::zero());
        chain_vth.fill(T::zero());
        for k in (b0..b1).rev() {
            for l in 0..w {
                let i = k * w + l;
                let silent = T::one() - mask::<T>(o[i]);
                let mut gi = dr[i] * mask::<T>(o[i]);
                if k + 1 < b1 {
                    let g_next = dx[i + w];
                    gi += g_next * tau * silent;
                    chain_tau[l] += g_next * u[i] * silent;
                }
                chain_vth[l] += dr[i] * silent;
                dx[i] = gi;
            }
        }
        for l in 0..w {
            sum_tau += chain_tau[l];
            sum_vth += chain_vth[l];
        }
    }
    (sum_tau, sum_vth)
}

fn backward_plane_horizontal<T: Real>(
    dr: &[T],
    u: &[T],
    o: &[bool],
    shape: Shape,
    g: usize,
    tau: T,
    dx: &mut [T],
) -> (T, T) {
    let w = shape.w;
    let (mut sum_tau, mut sum_vth) = (T::zero(), T::zero());
    for k in 0..shape.h {
        for b0 in (0..w).step_by(g) {
            let b1 = (b0 + g).min(w);
            let (mut c_tau, mut c_vth) = (T::zero(), T::zero());
            for l in (b0..b1).rev() {
                let i = k * w + l;
                let silent = T::one() - mask::<T>(o[i]);
                let mut gi = dr[i] * mask::<T>(o[i]);
                if l + 1 < b1 {
                    let g_next = dx[i + 1];
                    gi += g_next * tau * silent;
                    c_tau += g_next * u[i] * silent;
                }
                c_vth += dr[i] * silent;
                dx[i] = gi;
            }
            sum_tau += c_tau;
            sum_vth += c_vth;
        }
    }
    (sum_tau, sum_vth)
}

#[cfg(test)]
mod tests;
