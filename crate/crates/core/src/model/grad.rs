//! Finite-difference checks of the composed modules and the whole network.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gradcheck::{numeric_grad, OpReport};
use crate::layers::{ParamKind, Params};
use crate::rng::stream;
use crate::tensor::{Shape, Tensor4};

use super::block::{
    lif_module_backward, lif_module_forward, mlp_block_backward, mlp_block_forward, BlockInit,
    LifModuleParams, MlpParams,
};
use super::config::ModelConfig;
use super::net::{Pass, SnnMlp};

pub const LIF_MARGIN: f64 = 1e-3;
const MAX_ATTEMPTS: usize = 1000;

fn randomize<P: Params<f64>, R: Rng>(p: &mut P, rng: &mut R) {
    for q in p.params_mut() {
        if q.kind == ParamKind::Lif {
            continue;
        }
        let gamma = q.name.ends_with("gamma");
        for v in q.data.iter_mut() {
            *v = if gamma {
                rng.random_range(0.5..1.5)
            } else {
                rng.random_range(-0.5..0.5)
            };
        }
    }
}

/// Compares every non-frozen tensor of `analytic` with central differences
/// of `Σ w·f(p)` under perturbations of the matching tensor of `p`.
fn record_params<P: Params<f64> + Clone>(
    r: &mut OpReport,
    p: &P,
    analytic: &P,
    w: &Tensor4<f64>,
    step: f64,
    keep: impl Fn(&str) -> bool,
    f: impl Fn(&P) -> Result<Tensor4<f64>>,
) -> Result<()> {
    let refs = p.params();
    let grads = analytic.params();
    for (k, (q, g)) in refs.iter().zip(&grads).enumerate() {
        if q.kind == ParamKind::Frozen || !keep(&q.name) {
            continue;
        }
        let a = Tensor4::from_vec(g.shape, g.data.to_vec())?;
        let n = numeric_grad(q.shape, w, step, |i, d| {
            let mut p2 = p.clone();
            p2.params_mut()[k].data[i] += d;
            f(&p2)
        })?;
        r.record(&q.name, &a, &n);
    }
    Ok(())
}

fn shifted(t: &Tensor4<f64>, i: usize, d: f64) -> Tensor4<f64> {
    let mut t = t.clone();
    t.data_mut()[i] += d;
    t
}

fn rand_tensor<R: Rng>(rng: &mut R, shape: Shape, lo: f64, hi: f64) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Checks the LIF mixing module's input and parameter gradients on `shape`,
/// resampling until every membrane value clears the threshold by [`LIF_MARGIN`].
pub fn check_lif_module(shape: Shape, groups: usize, seed: u64, step: f64) -> Result<OpReport> {
    let mut rng = stream(seed, 0x006d_6f64);
    let init = BlockInit {
        norm_groups: 1,
        tau: 0.25,
        v_th: 0.25,
        learn_lif: true,
    };
    for _ in 0..MAX_ATTEMPTS {
        let mut p = LifModuleParams::<f64>::init(shape.c, &init, &mut rng)?;
        randomize(&mut p, &mut rng);
        let x = rand_tensor(&mut rng, shape, -1.0, 1.0);
        let (y, cache) = lif_module_forward(&x, &p, groups)?;
        if cache.lif_margin() < LIF_MARGIN {
            continue;
        }
        let w = rand_tensor(&mut rng, y.shape(), -1.0, 1.0);
        let (dx, g) = lif_module_backward(&cache, &p, &w)?;
        let f = |x: &Tensor4<f64>, p: &LifModuleParams<f64>| {
            lif_module_forward(x, p, groups).map(|r| r.0)
        };
        let mut r = OpReport::new("lif_module");
        r.record(
            "d_x",
            &dx,
            &numeric_grad(shape, &w, step, |i, d| f(&shifted(&x, i, d), &p))?,
        );
        record_params(&mut r, &p, &g, &w, step, |_| true, |q| f(&x, q))?;
        return Ok(r);
    }
    Err(Error::MarginNotFound {
        margin: LIF_MARGIN,
        attempts: MAX_ATTEMPTS,
    })
}

/// Checks the channel MLP module (dropout off) on `shape`.
pub fn check_mlp_block(shape: Shape, ratio: usize, seed: u64, step: f64) -> Result<OpReport> {
    let mut rng = stream(seed, 0x006d_6c70);
    let mut p = MlpParams::<f64>::init(shape.c, ratio * shape.c, &mut rng);
    randomize(&mut p, &mut rng);
    let x = rand_tensor(&mut rng, shape, -1.0, 1.0);
    let f = |x: &Tensor4<f64>, p: &MlpParams<f64>| {
        mlp_block_forward(x, p, 0.0, &mut stream(0, 0), false).map(|r| r.0)
    };
    let (y, cache) = mlp_block_forward(&x, &p, 0.0, &mut stream(0, 0), false)?;
    let w = rand_tensor(&mut rng, y.shape(), -1.0, 1.0);
    let (dx, g) = mlp_block_backward(&cache, &p, &w)?;
    let mut r = OpReport::new("mlp_block");
    r.record(
        "d_x",
        &dx,
        &numeric_grad(shape, &w, step, |i, d| f(&shifted(&x, i, d), &p))?,
    );
    record_params(&mut r, &p, &g, &w, step, |_| true, |q| f(&x, q))?;
    Ok(r)
}

/// Micro backbone for end-to-end checks: widths 4..32, patch 1, 8×8 input.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        patch: 1,
        embed_dim: 4,
        depths: [1, 1, 1, 1],
        groups: 2,
        num_classes: 3,
        drop_path: 0.0,
        ..ModelConfig::default()
    }
}

/// Checks the whole network: image gradient, every LIF scalar, and the
/// stem and head tensors.
pub fn check_network(seed: u64, step: f64) -> Result<OpReport> {
    let cfg = micro_config();
    let mut rng = stream(seed, 0x6e_6574);
    for _ in 0..MAX_ATTEMPTS {
        let mut m = SnnMlp::<f64>::init(&cfg, rng.random())?;
        randomize(&mut m, &mut rng);
        let img = rand_tensor(&mut rng, Shape::new(1, 3, 8, 8), -1.0, 1.0);
        let (y, cache) = m.forward(&img, Pass::eval())?;
        if cache.lif_margin() < LIF_MARGIN {
            continue;
        }
        let w = rand_tensor(&mut rng, y.shape(), -1.0, 1.0);
        let (g, d_img) = m.backward_with_input(&cache, &w)?;
        let mut r = OpReport::new("network");
        r.record(
            "d_img",
            &d_img,
            &numeric_grad(img.shape(), &w, step, |i, d| m.infer(&shifted(&img, i, d)))?,
        );
        let keep = |n: &str| {
            n.ends_with(".tau")
                || n.ends_with(".v_th")
                || n.starts_with("patch_embed")
                || n.starts_with("head")
        };
        record_params(&mut r, &m, &g, &w, step, keep, |q| q.infer(&img))?;
        return Ok(r);
    }
    Err(Error::MarginNotFound {
        margin: LIF_MARGIN,
        attempts: MAX_ATTEMPTS,
    })
}
