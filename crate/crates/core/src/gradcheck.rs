//! Central finite differences and error metrics shared by every gradient check.

use crate::tensor::Tensor4;

/// Largest absolute discrepancy normalised by the largest magnitude on either
/// side, with the flat index where it occurs. Zero when both sides are zero.
pub fn rel_err_tensor(analytic: &Tensor4<f64>, numeric: &Tensor4<f64>) -> (f64, usize) {
    assert_eq!(analytic.shape(), numeric.shape());
    let scale = analytic.max_abs().max(numeric.max_abs());
    let (mut worst, mut at) = (0.0f64, 0usize);
    for (i, (a, n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let d = (a - n).abs();
        if d > worst {
            worst = d;
            at = i;
        }
    }
    if scale == 0.0 {
        (0.0, at)
    } else {
        (worst / scale, at)
    }
}

/// `|a - n| / max(|a|, |n|)`, zero when both are zero.
pub fn rel_err_scalar(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

use rand::Rng;

use crate::error::Result;
use crate::layers::{self, DwConvParams, GroupNormParams, LinearParams, Mask};
use crate::rng::stream;

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-5;

/// Worst relative error of one operation across all of its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct OpReport {
    pub op: String,
    pub max_rel_err: f64,
    /// Which gradient (and flat index) produced the worst error.
    pub worst: String,
}

impl OpReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }

    pub fn new(op: &str) -> Self {
        OpReport {
            op: op.to_string(),
            max_rel_err: 0.0,
            worst: String::new(),
        }
    }

    pub fn record(&mut self, what: &str, analytic: &Tensor4<f64>, numeric: &Tensor4<f64>) {
        let (e, at) = rel_err_tensor(analytic, numeric);
        if self.worst.is_empty() || e > self.max_rel_err {
            self.max_rel_err = e;
            self.worst = format!("{what}[{at}]");
        }
    }
}

/// Central-difference gradient of `Σ w·f` with respect to `len` scalars, where
/// `eval(i, δ)` evaluates `f` with scalar `i` shifted by `δ`.
pub fn numeric_grad(
    shape: crate::tensor::Shape,
    w: &Tensor4<f64>,
    step: f64,
    mut eval: impl FnMut(usize, f64) -> Result<Tensor4<f64>>,
) -> Result<Tensor4<f64>> {
    let mut g = Tensor4::zeros(shape);
    for i in 0..shape.len() {
        let plus = eval(i, step)?;
        let minus = eval(i, -step)?;
        g.data_mut()[i] = w
            .data()
            .iter()
            .zip(plus.data().iter().zip(minus.data()))
            .map(|(&wi, (&a, &b))| wi * (a - b))
            .sum::<f64>()
            / (2.0 * step);
    }
    Ok(g)
}

fn shifted(t: &Tensor4<f64>, i: usize, d: f64) -> Tensor4<f64> {
    let mut t = t.clone();
    t.data_mut()[i] += d;
    t
}

fn rand_tensor<R: Rng>(rng: &mut R, shape: [usize; 4], lo: f64, hi: f64) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn rand_linear<R: Rng>(rng: &mut R, c_in: usize, c_out: usize) -> LinearParams<f64> {
    LinearParams::from_parts(
        (0..c_in * c_out)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect(),
        (0..c_out).map(|_| rng.random_range(-0.5..0.5)).collect(),
    )
    .unwrap()
}

/// Finite-difference checks of every non-LIF layer in `f64`.
pub fn check_layers(seed: u64, step: f64) -> Result<Vec<OpReport>> {
    let mut rng = stream(seed, 0x6c61_7965);
    let h = step;
    let mut reports = Vec::new();

    // channel_mlp
    {
        let x = rand_tensor(&mut rng, [2, 5, 3, 4], -1.0, 1.0);
        let p = rand_linear(&mut rng, 5, 6);
        let w = rand_tensor(&mut rng, [2, 6, 3, 4], -1.0, 1.0);
        let (dx, dp) = layers::channel_mlp_backward(&x, &p, &w)?;
        let mut r = OpReport::new("channel_mlp");
        r.record(
            "d_x",
            &dx,
            &numeric_grad(x.shape(), &w, h, |i, d| {
                layers::channel_mlp(&shifted(&x, i, d), &p)
            })?,
        );
        r.record(
            "d_weight",
            &dp.weight,
            &numeric_grad(p.weight.shape(), &w, h, |i, d| {
                let mut q = p.clone();
                q.weight.data_mut()[i] += d;
                layers::channel_mlp(&x, &q)
            })?,
        );
        r.record(
            "d_bias",
            &dp.bias,
            &numeric_grad(p.bias.shape(), &w, h, |i, d| {
                let mut q = p.clone();
                q.bias.data_mut()[i] += d;
                layers::channel_mlp(&x, &q)
            })?,
        );
        reports.push(r);
    }

    // dwconv3x3
    {
        let x = rand_tensor(&mut rng, [2, 3, 5, 4], -1.0, 1.0);
        let p = DwConvParams {
            kernel: rand_tensor(&mut rng, [3, 1, 3, 3], -1.0, 1.0),
            bias: rand_tensor(&mut rng, [3, 1, 1, 1], -1.0, 1.0),
        };
        let w = rand_tensor(&mut rng, [2, 3, 5, 4], -1.0, 1.0);
        let (dx, dp) = layers::dwconv3x3_backward(&x, &p, &w)?;
        let mut r = OpReport::new("dwconv3x3");
        r.record(
            "d_x",
            &dx,
            &numeric_grad(x.shape(), &w, h, |i, d| {
                layers::dwconv3x3(&shifted(&x, i, d), &p)
            })?,
        );
        r.record(
            "d_kernel",
            &dp.kernel,
            &numeric_grad(p.kernel.shape(), &w, h, |i, d| {
                let mut q = p.clone();
                q.kernel.data_mut()[i] += d;
                layers::dwconv3x3(&x, &q)
            })?,
        );
        r.record(
            "d_bias",
            &dp.bias,
            &numeric_grad(p.bias.shape(), &w, h, |i, d| {
                let mut q = p.clone();
                q.bias.data_mut()[i] += d;
                layers::dwconv3x3(&x, &q)
            })?,
        );
        reports.push(r);
    }

    // group_norm
    for groups in [1, 2] {
        let x = rand_tensor(&mut rng, [2, 4, 3, 3], -2.0, 2.0);
        let mut p = GroupNormParams::<f64>::new(4, groups)?;
        p.gamma = rand_tensor(&mut rng, [4, 1, 1, 1], 0.5, 1.5);
        p.beta = rand_tensor(&mut rng, [4, 1, 1, 1], -0.5, 0.5);
        let w = rand_tensor(&mut rng, [2, 4, 3, 3], -1.0, 1.0);
        let (_, cache) = layers::group_norm(&x, &p)?;
        let (dx, dp) = layers::group_norm_backward(&cache, &p, &w)?;
        let f = |x: &Tensor4<f64>, p: &GroupNormParams<f64>| layers::group_norm(x, p).map(|r| r.0);
        let mut r = OpReport::new(&format!("group_norm(g={groups})"));
        r.record(
            "d_x",
            &dx,
            &numeric_grad(x.shape(), &w, h, |i, d| f(&shifted(&x, i, d), &p))?,
        );
        r.record(
            "d_gamma",
            &dp.gamma,
            &numeric_grad(p.gamma.shape(), &w, h, |i, d| {
                let mut q = p.clone();
                q.gamma.data_mut()[i] += d;
                f(&x, &q)
            })?,
        );
        r.record(
            "d_beta",
            &dp.beta,
            &numeric_grad(p.beta.shape(), &w, h, |i, d| {
                let mut q = p.clone();
                q.beta.data_mut()[i] += d;
                f(&x, &q)
            })?,
        );
        reports.push(r);
    }

    // gelu, sampled away from the origin
    {
        let x = Tensor4::from_fn([2, 3, 4, 4], |_| {
            let v: f64 = rng.random_range(1e-3..3.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        });
        let w = rand_tensor(&mut rng, [2, 3, 4, 4], -1.0, 1.0);
        let dx = layers::gelu_backward(&x, &w)?;
        let mut r = OpReport::new("gelu");
        r.record(
            "d_x",
            &dx,
            &numeric_grad(x.shape(), &w, h, |i, d| {
                Ok(layers::gelu(&shifted(&x, i, d)))
            })?,
        );
        reports.push(r);
    }

    // patch_embed
    {
        let img = rand_tensor(&mut rng, [2, 3, 4, 4], 0.0, 1.0);
        let p = rand_linear(&mut rng, 12, 5);
        let w = rand_tensor(&mut rng, [2, 5, 2, 2], -1.0, 1.0);
        let (dimg, dp) = layers::patch_embed_backward(&img, &p, 2, &w)?;
        let mut r = OpReport::new("patch_embed");
        r.record(
            "d_img",
            &dimg,
            &numeric_grad(img.shape(), &w, h, |i, d| {
                layers::patch_embed(&shifted(&img, i, d), &p, 2)
            })?,
        );
        r.record(
            "d_weight",
            &dp.weight,
            &numeric_grad(p.weight.shape(), &w, h, |i, d| {
                let mut q = p.clone();
                q.weight.data_mut()[i] += d;
                layers::patch_embed(&img, &q, 2)
            })?,
        );
        r.record(
            "d_bias",
            &dp.bias,
            &numeric_grad(p.bias.shape(), &w, h, |i, d| {
                let mut q = p.clone();
                q.bias.data_mut()[i] += d;
                layers::patch_embed(&img, &q, 2)
            })?,
        );
        reports.push(r);
    }

    // patch_merge
    {
        let x = rand_tensor(&mut rng, [2, 3, 4, 2], -1.0, 1.0);
        let p = rand_linear(&mut rng, 12, 6);
        let w = rand_tensor(&mut rng, [2, 6, 2, 1], -1.0, 1.0);
        let (dx, dp) = layers::patch_merge_backward(&x, &p, &w)?;
        let mut r = OpReport::new("patch_merge");
        r.record(
            "d_x",
            &dx,
            &numeric_grad(x.shape(), &w, h, |i, d| {
                layers::patch_merge(&shifted(&x, i, d), &p)
            })?,
        );
        r.record(
            "d_weight",
            &dp.weight,
            &numeric_grad(p.weight.shape(), &w, h, |i, d| {
                let mut q = p.clone();
                q.weight.data_mut()[i] += d;
                layers::patch_merge(&x, &q)
            })?,
        );
        reports.push(r);
    }

    // reduce_mean_hw
    {
        let x = rand_tensor(&mut rng, [2, 3, 3, 5], -1.0, 1.0);
        let w = rand_tensor(&mut rng, [2, 3, 1, 1], -1.0, 1.0);
        let dx = Tensor4::mean_hw_backward(&w, x.shape())?;
        let mut r = OpReport::new("reduce_mean_hw");
        r.record(
            "d_x",
            &dx,
            &numeric_grad(x.shape(), &w, h, |i, d| shifted(&x, i, d).mean_hw())?,
        );
        reports.push(r);
    }

    // dropout and drop_path with the mask held fixed
    for (name, per_sample) in [("dropout", false), ("drop_path", true)] {
        let x = rand_tensor(&mut rng, [4, 2, 3, 3], -1.0, 1.0);
        let mut mrng = stream(seed, 99);
        let (_, mask) = if per_sample {
            layers::drop_path(&x, 0.5, &mut mrng, true)?
        } else {
            layers::dropout(&x, 0.5, &mut mrng, true)?
        };
        let w = rand_tensor(&mut rng, [4, 2, 3, 3], -1.0, 1.0);
        let dx = mask.backward(&w);
        let apply = |m: &Mask<f64>, x: &Tensor4<f64>| Ok(m.apply(x));
        let mut r = OpReport::new(name);
        r.record(
            "d_x",
            &dx,
            &numeric_grad(x.shape(), &w, h, |i, d| apply(&mask, &shifted(&x, i, d)))?,
        );
        reports.push(r);
    }

    Ok(reports)
}
