use rand::Rng;

use super::param::{push, push_mut, ParamKind, ParamMut, ParamRef, Params};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::trunc_normal;
use crate::tensor::{Real, Tensor4};

pub const KERNEL: usize = 3;

/// One 3×3 filter per channel (`kernel` is `(C, 1, 3, 3)`) plus a per-channel bias.
#[derive(Clone, Debug, PartialEq)]
pub struct DwConvParams<T> {
    pub kernel: Tensor4<T>,
    pub bias: Tensor4<T>,
}

impl<T: Real> DwConvParams<T> {
    pub fn zeros(channels: usize) -> Self {
        DwConvParams {
            kernel: Tensor4::zeros([channels, 1, KERNEL, KERNEL]),
            bias: Tensor4::zeros([channels, 1, 1, 1]),
        }
    }

    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        DwConvParams {
            kernel: Tensor4::from_fn([channels, 1, KERNEL, KERNEL], |_| {
                T::lit(trunc_normal(rng, super::linear::INIT_STD))
            }),
            bias: Tensor4::zeros([channels, 1, 1, 1]),
        }
    }

    pub fn channels(&self) -> usize {
        self.kernel.shape().n
    }
}

impl<T: Real> Params<T> for DwConvParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        push(out, prefix, "kernel", ParamKind::Weight, &self.kernel);
        push(out, prefix, "bias", ParamKind::NoDecay, &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        push_mut(out, prefix, "kernel", ParamKind::Weight, &mut self.kernel);
        push_mut(out, prefix, "bias", ParamKind::NoDecay, &mut self.bias);
    }
}

fn check_channels<T: Real>(x: &Tensor4<T>, p: &DwConvParams<T>) -> Result<()> {
    if x.shape().c != p.channels() {
        return Err(Error::invalid(format!(
            "dwconv3x3 has {} channels, input shape is {}",
            p.channels(),
            x.shape()
        )));
    }
    Ok(())
}

/// Visits every `(output pixel, input pixel, tap)` triple of a zero-padded
/// 3×3 stencil over an `h×w` plane.
#[inline(always)]
fn stencil(h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
    for ki in 0..KERNEL {
        for kj in 0..KERNEL {
            let tap = ki * KERNEL + kj;
            // output (k, l) reads input (k + ki - 1, l + kj - 1)
            let k_lo = 1usize.saturating_sub(ki);
            let k_hi = (h + 1).saturating_sub(ki).min(h);
            let l_lo = 1usize.saturating_sub(kj);
            let l_hi = (w + 1).saturating_sub(kj).min(w);
            for k in k_lo..k_hi {
                let src_row = (k + ki - 1) * w;
                for l in l_lo..l_hi {
                    f(k * w + l, src_row + l + kj - 1, tap);
                }
            }
        }
    }
}

/// Depthwise 3×3 convolution, stride 1, zero padding 1.
pub fn dwconv3x3<T: Real>(x: &Tensor4<T>, p: &DwConvParams<T>) -> Result<Tensor4<T>> {
    check_channels(x, p)?;
    let s = x.shape();
    let plane = s.plane();
    let mut out = Tensor4::zeros(s);
    exec::for_each_chunk(out.data_mut(), plane, |pi, o| {
        let c = pi % s.c;
        let k = &p.kernel.data()[c * 9..c * 9 + 9];
        let src = &x.data()[pi * plane..(pi + 1) * plane];
        o.fill(p.bias.data()[c]);
        stencil(s.h, s.w, |dst, from, tap| o[dst] += k[tap] * src[from]);
    });
    Ok(out)
}

/// Returns `(d_x, d_params)`.
pub fn dwconv3x3_backward<T: Real>(
    x: &Tensor4<T>,
    p: &DwConvParams<T>,
    d_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, DwConvParams<T>)> {
    check_channels(x, p)?;
    let s = x.shape();
    d_out.expect_shape("dwconv3x3 backward", s)?;
    let plane = s.plane();

    let mut dx = Tensor4::zeros(s);
    exec::for_each_chunk(dx.data_mut(), plane, |pi, d| {
        let c = pi % s.c;
        let k = &p.kernel.data()[c * 9..c * 9 + 9];
        let dy = &d_out.data()[pi * plane..(pi + 1) * plane];
        stencil(s.h, s.w, |dst, from, tap| d[from] += k[tap] * dy[dst]);
    });

    let mut grads = DwConvParams::zeros(s.c);
    exec::for_each_chunk2(
        grads.kernel.data_mut(),
        9,
        grads.bias.data_mut(),
        1,
        |c, dk, db| {
            for i in 0..s.n {
                let pi = i * s.c + c;
                let src = &x.data()[pi * plane..(pi + 1) * plane];
                let dy = &d_out.data()[pi * plane..(pi + 1) * plane];
                stencil(s.h, s.w, |dst, from, tap| dk[tap] += dy[dst] * src[from]);
                db[0] += dy.iter().copied().sum::<T>();
            }
        },
    );
    Ok((dx, grads))
}
