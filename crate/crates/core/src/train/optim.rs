//! AdamW with decoupled weight decay and a warmup + cosine schedule.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::layers::{ParamKind, Params};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Moments mirror the parameter list of the model they were created for.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub hyper: AdamW,
    pub step: u64,
    pub names: Vec<String>,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> OptimState<T> {
    pub fn new<P: Params<T>>(params: &P, hyper: AdamW) -> Self {
        let refs = params.params();
        OptimState {
            hyper,
            step: 0,
            names: refs.iter().map(|p| p.name.clone()).collect(),
            m: refs.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            v: refs.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
        }
    }
}

/// One update at learning rate `lr`. Only [`ParamKind::Weight`] tensors decay;
/// frozen tensors are untouched.
pub fn adamw_step<T: Real, P: Params<T>>(
    params: &mut P,
    grads: &P,
    state: &mut OptimState<T>,
    lr: f64,
) -> Result<()> {
    let g = grads.params();
    let mut p = params.params_mut();
    if p.len() != g.len() || p.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "adamw: {} parameters, {} gradients, {} moment slots",
            p.len(),
            g.len(),
            state.m.len()
        )));
    }
    for (k, (pk, gk)) in p.iter().zip(&g).enumerate() {
        if pk.data.len() != gk.data.len()
            || pk.data.len() != state.m[k].len()
            || pk.name != state.names[k]
        {
            return Err(Error::invalid(format!(
                "adamw: {:?} has {} values, gradient {:?} {}, moments {:?} {}",
                pk.name,
                pk.data.len(),
                gk.name,
                gk.data.len(),
                state.names[k],
                state.m[k].len()
            )));
        }
    }
    state.step += 1;
    let h = state.hyper;
    let t = state.step as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    let (b1, b2) = (T::lit(h.beta1), T::lit(h.beta2));
    let (lr_t, eps) = (T::lit(lr), T::lit(h.eps));
    let shrink = T::lit(1.0 - lr * h.weight_decay);
    let (inv_bc1, inv_bc2) = (T::lit(1.0 / bc1), T::lit(1.0 / bc2));
    for (k, (pk, gk)) in p.iter_mut().zip(&g).enumerate() {
        if pk.kind == ParamKind::Frozen {
            continue;
        }
        let decays = pk.kind.decays() && h.weight_decay != 0.0;
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (((x, &gr), mi), vi) in pk
            .data
            .iter_mut()
            .zip(gk.data)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + (T::one() - b1) * gr;
            *vi = b2 * *vi + (T::one() - b2) * gr * gr;
            if decays {
                *x *= shrink;
            }
            let m_hat = *mi * inv_bc1;
            let v_hat = *vi * inv_bc2;
            *x -= lr_t * (m_hat / (v_hat.sqrt() + eps));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

/// Linear warmup from 0, then half-cosine decay to 0 at `total_steps`.
pub fn cosine_lr(s: &Schedule, step: u64) -> Result<f64> {
    if s.warmup_steps > s.total_steps || step > s.total_steps {
        return Err(Error::invalid(format!(
            "step {step} outside schedule (warmup {}, total {})",
            s.warmup_steps, s.total_steps
        )));
    }
    if step < s.warmup_steps {
        return Ok(s.base_lr * step as f64 / s.warmup_steps as f64);
    }
    let span = s.total_steps - s.warmup_steps;
    if span == 0 {
        return Ok(s.base_lr);
    }
    let progress = (step - s.warmup_steps) as f64 / span as f64;
    Ok(s.base_lr * 0.5 * (1.0 + (PI * progress).cos()))
}
