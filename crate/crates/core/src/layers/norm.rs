use super::param::{push, push_mut, ParamKind, ParamMut, ParamRef, Params};
use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::{Real, Tensor4};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Group normalisation over `(C / num_groups)·H·W` elements per sample and group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupNormParams<T> {
    pub num_groups: usize,
    pub eps: T,
    pub gamma: Tensor4<T>,
    pub beta: Tensor4<T>,
}

impl<T: Real> GroupNormParams<T> {
    /// `gamma = 1`, `beta = 0`.
    pub fn new(channels: usize, num_groups: usize) -> Result<Self> {
        if num_groups == 0 || !channels.is_multiple_of(num_groups) {
            return Err(Error::invalid(format!(
                "group_norm: {channels} channels not divisible into {num_groups} groups"
            )));
        }
        Ok(GroupNormParams {
            num_groups,
            eps: T::lit(DEFAULT_EPS),
            gamma: Tensor4::full([channels, 1, 1, 1], T::one()),
            beta: Tensor4::zeros([channels, 1, 1, 1]),
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape().n
    }

    /// Same configuration with zeroed affine terms, for use as a gradient.
    pub fn zeros_like(&self) -> Self {
        GroupNormParams {
            num_groups: self.num_groups,
            eps: self.eps,
            gamma: Tensor4::zeros(self.gamma.shape()),
            beta: Tensor4::zeros(self.beta.shape()),
        }
    }
}

impl<T: Real> Params<T> for GroupNormParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        push(out, prefix, "gamma", ParamKind::NoDecay, &self.gamma);
        push(out, prefix, "beta", ParamKind::NoDecay, &self.beta);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        push_mut(out, prefix, "gamma", ParamKind::NoDecay, &mut self.gamma);
        push_mut(out, prefix, "beta", ParamKind::NoDecay, &mut self.beta);
    }
}

#[derive(Clone, Debug)]
pub struct GroupNormCache<T> {
    /// Normalised input before the affine step.
    pub x_hat: Tensor4<T>,
    /// `1 / sqrt(var + eps)` per `(sample, group)`.
    pub rstd: Vec<T>,
}

fn validate<T: Real>(x: &Tensor4<T>, p: &GroupNormParams<T>) -> Result<()> {
    let c = x.shape().c;
    if c != p.channels() || p.num_groups == 0 || !c.is_multiple_of(p.num_groups) {
        return Err(Error::invalid(format!(
            "group_norm: input {} incompatible with {} channels in {} groups",
            x.shape(),
            p.channels(),
            p.num_groups
        )));
    }
    Ok(())
}

pub fn group_norm<T: Real>(
    x: &Tensor4<T>,
    p: &GroupNormParams<T>,
) -> Result<(Tensor4<T>, GroupNormCache<T>)> {
    validate(x, p)?;
    let s = x.shape();
    let cpg = s.c / p.num_groups;
    let group_len = cpg * s.plane();
    let mut x_hat = x.clone();
    let mut rstd = vec![T::zero(); s.n * p.num_groups];
    if group_len > 0 {
        let inv_len = T::one() / T::from_usize(group_len).unwrap();
        exec::for_each_chunk2(x_hat.data_mut(), group_len, &mut rstd, 1, |_, g, r| {
            let mean = g.iter().copied().sum::<T>() * inv_len;
            let var = g.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_len;
            let inv = T::one() / (var + p.eps).sqrt();
            g.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            r[0] = inv;
        });
    }
    let plane = s.plane();
    let mut out = x_hat.clone();
    exec::for_each_chunk(out.data_mut(), plane, |pi, o| {
        let c = pi % s.c;
        let (ga, be) = (p.gamma.data()[c], p.beta.data()[c]);
        o.iter_mut().for_each(|v| *v = *v * ga + be);
    });
    Ok((out, GroupNormCache { x_hat, rstd }))
}

/// Returns `(d_x, d_params)`.
pub fn group_norm_backward<T: Real>(
    cache: &GroupNormCache<T>,
    p: &GroupNormParams<T>,
    d_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, GroupNormParams<T>)> {
    let s = cache.x_hat.shape();
    d_out.expect_shape("group_norm backward", s)?;
    let plane = s.plane();
    let cpg = s.c / p.num_groups;
    let group_len = cpg * plane;

    let mut dx = Tensor4::zeros(s);
    if group_len > 0 {
        let inv_len = T::one() / T::from_usize(group_len).unwrap();
        exec::for_each_chunk(dx.data_mut(), group_len, |gi, d| {
            let base = gi * group_len;
            let g0 = (gi % p.num_groups) * cpg;
            let xh = &cache.x_hat.data()[base..base + group_len];
            let dy = &d_out.data()[base..base + group_len];
            let (mut sum_d, mut sum_dx) = (T::zero(), T::zero());
            for (idx, (&dyv, &xv)) in dy.iter().zip(xh).enumerate() {
                let dxh = dyv * p.gamma.data()[g0 + idx / plane];
                sum_d += dxh;
                sum_dx += dxh * xv;
            }
            let (mean_d, mean_dx) = (sum_d * inv_len, sum_dx * inv_len);
            let r = cache.rstd[gi];
            for (idx, v) in d.iter_mut().enumerate() {
                let dxh = dy[idx] * p.gamma.data()[g0 + idx / plane];
                *v = r * (dxh - mean_d - xh[idx] * mean_dx);
            }
        });
    }

    let mut grads = p.zeros_like();
    exec::for_each_chunk2(
        grads.gamma.data_mut(),
        1,
        grads.beta.data_mut(),
        1,
        |c, dg, db| {
            for i in 0..s.n {
                let pi = (i * s.c + c) * plane;
                let dy = &d_out.data()[pi..pi + plane];
                let xh = &cache.x_hat.data()[pi..pi + plane];
                dg[0] += dy.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
                db[0] += dy.iter().copied().sum::<T>();
            }
        },
    );
    Ok((dx, grads))
}
