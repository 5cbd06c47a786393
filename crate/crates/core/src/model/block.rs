//! One backbone block: the LIF token-mixing module followed by the channel
//! MLP module, each with forward caches and a handwritten backward pass.

use rand::Rng;

use crate::error::Result;
use crate::layers::param::join;
use crate::layers::{
    self, DwConvParams, GroupNormCache, GroupNormParams, LinearParams, Mask, ParamKind, ParamMut,
    ParamRef, Params,
};
use crate::lif::{self, Direction, LifConfig, LifParams, LifSaved};
use crate::tensor::{Real, Shape, Tensor4};

macro_rules! impl_params {
    ($ty:ident { $($f:ident),* $(,)? }) => {
        impl<T: Real> Params<T> for $ty<T> {
            fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
                $( self.$f.visit(&join(prefix, stringify!($f)), out); )*
            }
            fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
                $( self.$f.visit_mut(&join(prefix, stringify!($f)), out); )*
            }
        }
    };
}

fn lif_kind(learn: bool) -> ParamKind {
    if learn {
        ParamKind::Lif
    } else {
        ParamKind::Frozen
    }
}

impl<T: Real> Params<T> for LifParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        let one = Shape::new(1, 1, 1, 1);
        out.push(ParamRef {
            name: join(prefix, "tau"),
            kind: lif_kind(self.learn_tau),
            shape: one,
            data: std::slice::from_ref(&self.tau),
        });
        out.push(ParamRef {
            name: join(prefix, "v_th"),
            kind: lif_kind(self.learn_v_th),
            shape: one,
            data: std::slice::from_ref(&self.v_th),
        });
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        let one = Shape::new(1, 1, 1, 1);
        out.push(ParamMut {
            name: join(prefix, "tau"),
            kind: lif_kind(self.learn_tau),
            shape: one,
            data: std::slice::from_mut(&mut self.tau),
        });
        out.push(ParamMut {
            name: join(prefix, "v_th"),
            kind: lif_kind(self.learn_v_th),
            shape: one,
            data: std::slice::from_mut(&mut self.v_th),
        });
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LifModuleParams<T> {
    pub proj1: LinearParams<T>,
    pub norm1: GroupNormParams<T>,
    pub dwconv: DwConvParams<T>,
    pub norm2: GroupNormParams<T>,
    pub vlif: LifParams<T>,
    pub hlif: LifParams<T>,
    pub proj_v: LinearParams<T>,
    pub proj_h: LinearParams<T>,
    pub norm3: GroupNormParams<T>,
    pub proj_out: LinearParams<T>,
}

impl_params!(LifModuleParams {
    proj1,
    norm1,
    dwconv,
    norm2,
    vlif,
    hlif,
    proj_v,
    proj_h,
    norm3,
    proj_out
});

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub fc1: LinearParams<T>,
    pub fc2: LinearParams<T>,
}

impl_params!(MlpParams { fc1, fc2 });

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T> {
    pub lif: LifModuleParams<T>,
    pub mlp: MlpParams<T>,
}

impl_params!(BlockParams { lif, mlp });

/// Initial values shared by every block of a model.
#[derive(Clone, Copy, Debug)]
pub struct BlockInit {
    pub norm_groups: usize,
    pub tau: f64,
    pub v_th: f64,
    pub learn_lif: bool,
}

impl BlockInit {
    fn lif<T: Real>(&self) -> LifParams<T> {
        LifParams {
            tau: T::lit(self.tau),
            v_th: T::lit(self.v_th),
            learn_tau: self.learn_lif,
            learn_v_th: self.learn_lif,
        }
    }
}

impl<T: Real> LifModuleParams<T> {
    pub fn init<R: Rng + ?Sized>(c: usize, b: &BlockInit, rng: &mut R) -> Result<Self> {
        Ok(LifModuleParams {
            proj1: LinearParams::init(c, c, rng),
            norm1: GroupNormParams::new(c, b.norm_groups)?,
            dwconv: DwConvParams::init(c, rng),
            norm2: GroupNormParams::new(c, b.norm_groups)?,
            vlif: b.lif(),
            hlif: b.lif(),
            proj_v: LinearParams::init(c, c, rng),
            proj_h: LinearParams::init(c, c, rng),
            norm3: GroupNormParams::new(c, b.norm_groups)?,
            proj_out: LinearParams::init(c, c, rng),
        })
    }

    pub fn channels(&self) -> usize {
        self.proj1.c_in()
    }
}

impl<T: Real> MlpParams<T> {
    pub fn init<R: Rng + ?Sized>(c: usize, hidden: usize, rng: &mut R) -> Self {
        MlpParams {
            fc1: LinearParams::init(c, hidden, rng),
            fc2: LinearParams::init(hidden, c, rng),
        }
    }
}

impl<T: Real> BlockParams<T> {
    pub fn init<R: Rng + ?Sized>(
        c: usize,
        hidden: usize,
        b: &BlockInit,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(BlockParams {
            lif: LifModuleParams::init(c, b, rng)?,
            mlp: MlpParams::init(c, hidden, rng),
        })
    }
}

/// Intermediate values of [`lif_module_forward`].
#[derive(Clone, Debug)]
pub struct LifModuleCache<T> {
    x: Tensor4<T>,
    n1: GroupNormCache<T>,
    a1: Tensor4<T>,
    h1: Tensor4<T>,
    n2: GroupNormCache<T>,
    a2: Tensor4<T>,
    sv: LifSaved<T>,
    sh: LifSaved<T>,
    /// Vertical and horizontal LIF outputs.
    pub rv: Tensor4<T>,
    pub rh: Tensor4<T>,
    pv: Tensor4<T>,
    ph: Tensor4<T>,
    n3: GroupNormCache<T>,
    m: Tensor4<T>,
}

pub fn lif_module_forward<T: Real>(
    x: &Tensor4<T>,
    p: &LifModuleParams<T>,
    groups: usize,
) -> Result<(Tensor4<T>, LifModuleCache<T>)> {
    let (a1, n1) = layers::group_norm(&layers::channel_mlp(x, &p.proj1)?, &p.norm1)?;
    let h1 = layers::gelu(&a1);
    let (a2, n2) = layers::group_norm(&layers::dwconv3x3(&h1, &p.dwconv)?, &p.norm2)?;
    let h2 = layers::gelu(&a2);
    let (rv, sv) = lif::forward(&h2, &p.vlif, &LifConfig::new(Direction::Vertical, groups))?;
    let (rh, sh) = lif::forward(&h2, &p.hlif, &LifConfig::new(Direction::Horizontal, groups))?;
    let pv = layers::channel_mlp(&rv, &p.proj_v)?;
    let ph = layers::channel_mlp(&rh, &p.proj_h)?;
    let (m, n3) = layers::group_norm(&layers::gelu(&pv).add(&layers::gelu(&ph))?, &p.norm3)?;
    let out = layers::channel_mlp(&m, &p.proj_out)?;
    let cache = LifModuleCache {
        x: x.clone(),
        n1,
        a1,
        h1,
        n2,
        a2,
        sv,
        sh,
        rv,
        rh,
        pv,
        ph,
        n3,
        m,
    };
    Ok((out, cache))
}

impl<T: Real> LifModuleCache<T> {
    /// Smallest `|u - v_th|` over both LIF units.
    pub fn lif_margin(&self) -> f64 {
        [&self.sv, &self.sh]
            .iter()
            .flat_map(|s| {
                let th = s.params.v_th;
                s.u.data().iter().map(move |&u| (u - th).abs().as_f64())
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Returns `(d_x, d_params)`.
pub fn lif_module_backward<T: Real>(
    c: &LifModuleCache<T>,
    p: &LifModuleParams<T>,
    d_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, LifModuleParams<T>)> {
    let (dm, g_out) = layers::channel_mlp_backward(&c.m, &p.proj_out, d_out)?;
    let (ds, g_n3) = layers::group_norm_backward(&c.n3, &p.norm3, &dm)?;
    let (drv, g_v) =
        layers::channel_mlp_backward(&c.rv, &p.proj_v, &layers::gelu_backward(&c.pv, &ds)?)?;
    let (drh, g_h) =
        layers::channel_mlp_backward(&c.rh, &p.proj_h, &layers::gelu_backward(&c.ph, &ds)?)?;
    let lv = lif::backward(&drv, &c.sv)?;
    let lh = lif::backward(&drh, &c.sh)?;
    let dh2 = lv.d_input.add(&lh.d_input)?;
    let (dd, g_n2) =
        layers::group_norm_backward(&c.n2, &p.norm2, &layers::gelu_backward(&c.a2, &dh2)?)?;
    let (dh1, g_dw) = layers::dwconv3x3_backward(&c.h1, &p.dwconv, &dd)?;
    let (dp1, g_n1) =
        layers::group_norm_backward(&c.n1, &p.norm1, &layers::gelu_backward(&c.a1, &dh1)?)?;
    let (dx, g_p1) = layers::channel_mlp_backward(&c.x, &p.proj1, &dp1)?;
    let lif_grad = |src: &LifParams<T>, d_tau: T, d_v_th: T| LifParams {
        tau: if src.learn_tau { d_tau } else { T::zero() },
        v_th: if src.learn_v_th { d_v_th } else { T::zero() },
        ..*src
    };
    let grads = LifModuleParams {
        proj1: g_p1,
        norm1: g_n1,
        dwconv: g_dw,
        norm2: g_n2,
        vlif: lif_grad(&p.vlif, lv.d_tau, lv.d_v_th),
        hlif: lif_grad(&p.hlif, lh.d_tau, lh.d_v_th),
        proj_v: g_v,
        proj_h: g_h,
        norm3: g_n3,
        proj_out: g_out,
    };
    Ok((dx, grads))
}

#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    x: Tensor4<T>,
    h: Tensor4<T>,
    mask: Mask<T>,
    a: Tensor4<T>,
    z: Tensor4<T>,
}

/// `gelu(fc2(dropout(gelu(fc1(x)))))`.
pub fn mlp_block_forward<T: Real, R: Rng + ?Sized>(
    x: &Tensor4<T>,
    p: &MlpParams<T>,
    dropout: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor4<T>, MlpCache<T>)> {
    let h = layers::channel_mlp(x, &p.fc1)?;
    let (a, mask) = layers::dropout(&layers::gelu(&h), dropout, rng, training)?;
    let z = layers::channel_mlp(&a, &p.fc2)?;
    let out = layers::gelu(&z);
    Ok((
        out,
        MlpCache {
            x: x.clone(),
            h,
            mask,
            a,
            z,
        },
    ))
}

pub fn mlp_block_backward<T: Real>(
    c: &MlpCache<T>,
    p: &MlpParams<T>,
    d_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, MlpParams<T>)> {
    let (da, g2) =
        layers::channel_mlp_backward(&c.a, &p.fc2, &layers::gelu_backward(&c.z, d_out)?)?;
    let dh = layers::gelu_backward(&c.h, &c.mask.backward(&da))?;
    let (dx, g1) = layers::channel_mlp_backward(&c.x, &p.fc1, &dh)?;
    Ok((dx, MlpParams { fc1: g1, fc2: g2 }))
}

/// Adds every tensor of `g` into the matching tensor of `acc`.
pub fn accumulate<T: Real, P: Params<T>>(acc: &mut P, g: &P) {
    for (a, b) in acc.params_mut().into_iter().zip(g.params()) {
        debug_assert_eq!(a.name, b.name);
        a.data.iter_mut().zip(b.data).for_each(|(x, &y)| *x += y);
    }
}
