//! Patch embedding and 2×2 patch merging, both expressed as a spatial
//! rearrangement followed by a per-pixel linear map.

use super::linear::{channel_mlp, channel_mlp_backward, LinearParams};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor4};

/// Rearranges non-overlapping `p×p` patches into channels:
/// `(n, c, h, w) → (n, c·p·p, h/p, w/p)`, channel index `(c·p + ki)·p + kj`.
pub fn space_to_depth<T: Real>(x: &Tensor4<T>, p: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if p == 0 || !s.h.is_multiple_of(p) || !s.w.is_multiple_of(p) {
        return Err(Error::invalid(format!(
            "spatial extent of {s} not divisible by patch size {p}"
        )));
    }
    let (ho, wo) = (s.h / p, s.w / p);
    let os = Shape::new(s.n, s.c * p * p, ho, wo);
    let mut out = Tensor4::zeros(os);
    for i in 0..s.n {
        for c in 0..s.c {
            for k in 0..s.h {
                for l in 0..s.w {
                    let oc = (c * p + k % p) * p + l % p;
                    out.set(i, oc, k / p, l / p, x.get(i, c, k, l));
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space<T: Real>(x: &Tensor4<T>, p: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if p == 0 || !s.c.is_multiple_of(p * p) {
        return Err(Error::invalid(format!(
            "{s} channels not divisible by {p}²"
        )));
    }
    let c_out = s.c / (p * p);
    let mut out = Tensor4::zeros(Shape::new(s.n, c_out, s.h * p, s.w * p));
    for i in 0..s.n {
        for c in 0..c_out {
            for k in 0..s.h * p {
                for l in 0..s.w * p {
                    let ic = (c * p + k % p) * p + l % p;
                    out.set(i, c, k, l, x.get(i, ic, k / p, l / p));
                }
            }
        }
    }
    Ok(out)
}

/// Linear projection of each flattened `3×p×p` patch to `embed_dim` channels.
/// `proj` maps `3·p·p → embed_dim`.
pub fn patch_embed<T: Real>(
    img: &Tensor4<T>,
    proj: &LinearParams<T>,
    patch: usize,
) -> Result<Tensor4<T>> {
    if img.shape().c != 3 {
        return Err(Error::invalid(format!(
            "patch_embed expects 3 channels, got {}",
            img.shape()
        )));
    }
    channel_mlp(&space_to_depth(img, patch)?, proj)
}

/// Returns `(d_img, d_proj)`.
pub fn patch_embed_backward<T: Real>(
    img: &Tensor4<T>,
    proj: &LinearParams<T>,
    patch: usize,
    d_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, LinearParams<T>)> {
    let cols = space_to_depth(img, patch)?;
    let (d_cols, grads) = channel_mlp_backward(&cols, proj, d_out)?;
    Ok((depth_to_space(&d_cols, patch)?, grads))
}

/// Concatenates the four 2×2 neighbours along channels in the order
/// (even row, even col), (even, odd), (odd, even), (odd, odd):
/// `(n, C, h, w) → (n, 4C, h/2, w/2)`.
pub fn gather_2x2<T: Real>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "patch_merge needs even spatial extents, got {s}"
        )));
    }
    let mut out = Tensor4::zeros(Shape::new(s.n, 4 * s.c, s.h / 2, s.w / 2));
    for i in 0..s.n {
        for (q, (dr, dc)) in QUADRANTS.iter().enumerate() {
            for c in 0..s.c {
                for k in 0..s.h / 2 {
                    for l in 0..s.w / 2 {
                        out.set(i, q * s.c + c, k, l, x.get(i, c, 2 * k + dr, 2 * l + dc));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`gather_2x2`].
pub fn scatter_2x2<T: Real>(g: &Tensor4<T>) -> Result<Tensor4<T>> {
    let s = g.shape();
    if !s.c.is_multiple_of(4) {
        return Err(Error::invalid(format!(
            "scatter_2x2 needs 4C channels, got {s}"
        )));
    }
    let c = s.c / 4;
    let mut out = Tensor4::zeros(Shape::new(s.n, c, s.h * 2, s.w * 2));
    for i in 0..s.n {
        for (q, (dr, dc)) in QUADRANTS.iter().enumerate() {
            for j in 0..c {
                for k in 0..s.h {
                    for l in 0..s.w {
                        out.set(i, j, 2 * k + dr, 2 * l + dc, g.get(i, q * c + j, k, l));
                    }
                }
            }
        }
    }
    Ok(out)
}

const QUADRANTS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// 2× spatial downsampling: gather 2×2 neighbours to `4C` channels, project to `2C`.
pub fn patch_merge<T: Real>(x: &Tensor4<T>, proj: &LinearParams<T>) -> Result<Tensor4<T>> {
    channel_mlp(&gather_2x2(x)?, proj)
}

/// Returns `(d_x, d_proj)`.
pub fn patch_merge_backward<T: Real>(
    x: &Tensor4<T>,
    proj: &LinearParams<T>,
    d_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, LinearParams<T>)> {
    let g = gather_2x2(x)?;
    let (dg, grads) = channel_mlp_backward(&g, proj, d_out)?;
    Ok((scatter_2x2(&dg)?, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn embed_shapes() {
        let mut r = stream(0, 0);
        let proj = LinearParams::<f32>::init(48, 32, &mut r);
        let y = patch_embed(&Tensor4::zeros([2, 3, 32, 32]), &proj, 4).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 32, 8, 8));
        assert!(patch_embed(&Tensor4::zeros([1, 3, 30, 32]), &proj, 4).is_err());
        assert!(patch_embed(&Tensor4::zeros([1, 1, 32, 32]), &proj, 4).is_err());
    }

    #[test]
    fn tiny_embed_shape() {
        let proj = LinearParams::<f32>::zeros(48, 96);
        let y = patch_embed(&Tensor4::zeros([1, 3, 224, 224]), &proj, 4).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 96, 56, 56));
    }

    #[test]
    fn unit_patch_is_a_per_pixel_map() {
        let mut w = vec![0.0; 9];
        (0..3).for_each(|i| w[i * 3 + i] = 1.0);
        let proj = LinearParams::from_parts(w, vec![0.0; 3]).unwrap();
        let img = Tensor4::from_fn([1, 3, 5, 7], |i| i as f64);
        assert_eq!(patch_embed(&img, &proj, 1).unwrap(), img);
    }

    #[test]
    fn space_to_depth_round_trips() {
        let x = Tensor4::from_fn([2, 3, 8, 4], |i| i as f64);
        assert_eq!(
            depth_to_space(&space_to_depth(&x, 4).unwrap(), 4).unwrap(),
            x
        );
    }

    #[test]
    fn merge_shapes() {
        let proj = LinearParams::<f32>::zeros(4 * 96, 192);
        let y = patch_merge(&Tensor4::zeros([1, 96, 56, 56]), &proj).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 192, 28, 28));
        assert!(patch_merge(&Tensor4::zeros([1, 96, 5, 4]), &proj).is_err());
    }

    #[test]
    fn selecting_projection_keeps_first_two_quadrants() {
        let c = 3;
        let mut w = vec![0.0; 2 * c * 4 * c];
        (0..2 * c).for_each(|j| w[j * 4 * c + j] = 1.0);
        let proj = LinearParams::from_parts(w, vec![0.0; 2 * c]).unwrap();
        let x = Tensor4::from_fn([1, c, 4, 6], |i| i as f64);
        let y = patch_merge(&x, &proj).unwrap();
        for j in 0..c {
            for k in 0..2 {
                for l in 0..3 {
                    assert_eq!(y.get(0, j, k, l), x.get(0, j, 2 * k, 2 * l));
                    assert_eq!(y.get(0, c + j, k, l), x.get(0, j, 2 * k, 2 * l + 1));
                }
            }
        }
    }

    #[test]
    fn identity_merge_then_inverse_gather_is_lossless() {
        let c = 2;
        let mut w = vec![0.0; 16 * c * c];
        (0..4 * c).for_each(|j| w[j * 4 * c + j] = 1.0);
        let proj = LinearParams::from_parts(w, vec![0.0; 4 * c]).unwrap();
        let x = Tensor4::from_fn([2, c, 6, 4], |i| (i as f64).cos());
        assert_eq!(scatter_2x2(&patch_merge(&x, &proj).unwrap()).unwrap(), x);
    }

    #[test]
    fn merge_matches_gather_matmul_loop() {
        let mut r = stream(8, 0);
        let proj = LinearParams::<f64>::init(32, 16, &mut r);
        let x = Tensor4::from_fn([1, 8, 2, 2], |_| r.random_range(-1.0..1.0));
        let y = patch_merge(&x, &proj).unwrap();
        let quads = [(0, 0), (0, 1), (1, 0), (1, 1)];
        for j in 0..16 {
            let mut acc = proj.bias.data()[j];
            for (q, (dr, dc)) in quads.iter().enumerate() {
                for c in 0..8 {
                    acc += proj.weight.get(j, q * 8 + c, 0, 0) * x.get(0, c, *dr, *dc);
                }
            }
            assert!((y.get(0, j, 0, 0) - acc).abs() < 1e-12);
        }
    }
}
