use rand::Rng;

use super::param::{push, push_mut, ParamKind, ParamMut, ParamRef, Params};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::trunc_normal;
use crate::tensor::{gemm, MatRef, Real, Shape, Tensor4};

pub const INIT_STD: f64 = 0.02;

/// Per-pixel linear map `C_in → C_out`. `weight` is stored `(C_out, C_in, 1, 1)`,
/// `bias` as `(C_out, 1, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams<T> {
    pub weight: Tensor4<T>,
    pub bias: Tensor4<T>,
}

impl<T: Real> LinearParams<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        LinearParams {
            weight: Tensor4::zeros([c_out, c_in, 1, 1]),
            bias: Tensor4::zeros([c_out, 1, 1, 1]),
        }
    }

    /// Truncated-normal weights (σ = 0.02), zero bias.
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        LinearParams {
            weight: Tensor4::from_fn([c_out, c_in, 1, 1], |_| T::lit(trunc_normal(rng, INIT_STD))),
            bias: Tensor4::zeros([c_out, 1, 1, 1]),
        }
    }

    pub fn from_parts(weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        let c_out = bias.len();
        if c_out == 0 || !weight.len().is_multiple_of(c_out) {
            return Err(Error::invalid(format!(
                "weight length {} is not a multiple of bias length {c_out}",
                weight.len()
            )));
        }
        let c_in = weight.len() / c_out;
        Ok(LinearParams {
            weight: Tensor4::from_vec([c_out, c_in, 1, 1], weight)?,
            bias: Tensor4::from_vec([c_out, 1, 1, 1], bias)?,
        })
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape().c
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape().n
    }
}

impl<T: Real> Params<T> for LinearParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        push(out, prefix, "weight", ParamKind::Weight, &self.weight);
        push(out, prefix, "bias", ParamKind::NoDecay, &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        push_mut(out, prefix, "weight", ParamKind::Weight, &mut self.weight);
        push_mut(out, prefix, "bias", ParamKind::NoDecay, &mut self.bias);
    }
}

/// `out[:, j] = Σ_i weight[j, i] · x[:, i] + bias[j]` at every pixel.
pub fn channel_mlp<T: Real>(x: &Tensor4<T>, p: &LinearParams<T>) -> Result<Tensor4<T>> {
    let s = x.shape();
    let (c_in, c_out) = (p.c_in(), p.c_out());
    if s.c != c_in {
        return Err(Error::invalid(format!(
            "channel_mlp expects {c_in} input channels, got input of shape {s}"
        )));
    }
    let hw = s.plane();
    let mut out = Tensor4::zeros(Shape::new(s.n, c_out, s.h, s.w));
    let w = MatRef::row_major(p.weight.data(), c_out, c_in);
    let bias = p.bias.data();
    exec::for_each_chunk(out.data_mut(), c_out * hw, |i, o| {
        for (row, &b) in o.chunks_mut(hw).zip(bias) {
            row.fill(b);
        }
        let xi = MatRef::row_major(&x.data()[i * c_in * hw..(i + 1) * c_in * hw], c_in, hw);
        gemm(T::one(), w, xi, T::one(), o);
    });
    Ok(out)
}

/// Returns `(d_x, d_params)`.
pub fn channel_mlp_backward<T: Real>(
    x: &Tensor4<T>,
    p: &LinearParams<T>,
    d_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, LinearParams<T>)> {
    let s = x.shape();
    let (c_in, c_out) = (p.c_in(), p.c_out());
    d_out.expect_shape("channel_mlp backward", Shape::new(s.n, c_out, s.h, s.w))?;
    let hw = s.plane();
    let w = MatRef::row_major(p.weight.data(), c_out, c_in);

    let mut dx = Tensor4::zeros(s);
    exec::for_each_chunk(dx.data_mut(), c_in * hw, |i, dxi| {
        let dy = MatRef::row_major(
            &d_out.data()[i * c_out * hw..(i + 1) * c_out * hw],
            c_out,
            hw,
        );
        gemm(T::one(), w.t(), dy, T::zero(), dxi);
    });

    // dW[j, :] = Σ_n dy_n[j, :] · x_nᵀ, row blocks in parallel, samples in order.
    let mut grads = LinearParams::zeros(c_in, c_out);
    const ROWS: usize = 16;
    exec::for_each_chunk2(
        grads.weight.data_mut(),
        ROWS * c_in,
        grads.bias.data_mut(),
        ROWS,
        |blk, dw, db| {
            let j0 = blk * ROWS;
            let rows = db.len();
            for i in 0..s.n {
                let dy_all = &d_out.data()[i * c_out * hw..(i + 1) * c_out * hw];
                let dy = MatRef::row_major(&dy_all[j0 * hw..(j0 + rows) * hw], rows, hw);
                let xi = MatRef::row_major(&x.data()[i * c_in * hw..(i + 1) * c_in * hw], c_in, hw);
                gemm(T::one(), dy, xi.t(), T::one(), dw);
                for (r, b) in db.iter_mut().enumerate() {
                    *b += dy_all[(j0 + r) * hw..(j0 + r + 1) * hw]
                        .iter()
                        .copied()
                        .sum::<T>();
                }
            }
        },
    );
    Ok((dx, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn loop_oracle(x: &Tensor4<f64>, p: &LinearParams<f64>) -> Vec<f64> {
        let s = x.shape();
        let (ci, co) = (p.c_in(), p.c_out());
        let mut out = vec![0.0; s.n * co * s.plane()];
        for n in 0..s.n {
            for j in 0..co {
                for px in 0..s.plane() {
                    let mut acc = p.bias.data()[j];
                    for i in 0..ci {
                        acc +=
                            p.weight.data()[j * ci + i] * x.data()[(n * ci + i) * s.plane() + px];
                    }
                    out[(n * co + j) * s.plane() + px] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_weight_is_identity() {
        let c = 3;
        let mut w = vec![0.0; c * c];
        (0..c).for_each(|i| w[i * c + i] = 1.0);
        let p = LinearParams::from_parts(w, vec![0.0; c]).unwrap();
        let x = Tensor4::from_fn([2, c, 2, 3], |i| i as f64 - 4.0);
        assert_eq!(channel_mlp(&x, &p).unwrap(), x);
    }

    #[test]
    fn sums_two_channels() {
        let p = LinearParams::from_parts(vec![1.0f32, 1.0], vec![0.0]).unwrap();
        let x = Tensor4::from_vec([1, 2, 1, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(channel_mlp(&x, &p).unwrap().data(), &[7.0]);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut r = stream(5, 0);
        let p = LinearParams::<f64>::from_parts(
            (0..35).map(|_| r.random_range(-1.0..1.0)).collect(),
            (0..5).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let x = Tensor4::from_fn([3, 7, 4, 5], |_| r.random_range(-2.0..2.0));
        let got = channel_mlp(&x, &p).unwrap();
        for (a, b) in got.data().iter().zip(loop_oracle(&x, &p)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let p = LinearParams::<f32>::zeros(4, 2);
        assert!(channel_mlp(&Tensor4::zeros([1, 3, 2, 2]), &p).is_err());
    }

    #[test]
    fn adjoint_identity() {
        // ⟨J·dx, dy⟩ = ⟨dx, Jᵀ·dy⟩ with the map linear in x (bias zero).
        let mut r = stream(9, 1);
        let mut p = LinearParams::<f64>::init(6, 37, &mut r);
        p.bias = Tensor4::zeros(p.bias.shape());
        let dx = Tensor4::from_fn([2, 6, 3, 3], |_| r.random_range(-1.0..1.0));
        let dy = Tensor4::from_fn([2, 37, 3, 3], |_| r.random_range(-1.0..1.0));
        let lhs = channel_mlp(&dx, &p).unwrap().dot(&dy);
        let (jt, _) = channel_mlp_backward(&dx, &p, &dy).unwrap();
        assert!((lhs - dx.dot(&jt)).abs() < 1e-10);
    }
}
