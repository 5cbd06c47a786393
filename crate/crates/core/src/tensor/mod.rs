//! Dense rank-4 tensors in row-major `N×C×H×W` layout.
//!
//! No broadcasting and no general strides: every shape alignment is explicit,
//! and the only view type ([`AxisBlockView`]) selects a contiguous index range
//! along `H` or `W`.

mod gemm;
mod io;
mod real;
mod view;

use std::fmt;

pub use gemm::{gemm, MatRef};
pub use real::{DType, Real};
pub use view::{Axis, AxisBlockView};

use crate::error::{Error, Result};
use crate::exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one `H×W` plane.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one sample (`C×H×W`).
    pub fn sample(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.c + j) * self.h + k) * self.w + l
    }

    /// Inverse of [`offset`](Self::offset).
    pub fn unravel(&self, flat: usize) -> [usize; 4] {
        let l = flat % self.w;
        let rest = flat / self.w;
        let k = rest % self.h;
        let rest = rest / self.h;
        [rest / self.c, rest % self.c, k, l]
    }

    pub fn extent(&self, axis: Axis) -> usize {
        match axis {
            Axis::H => self.h,
            Axis::W => self.w,
        }
    }

    pub fn to_array(self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl From<[usize; 4]> for Shape {
    fn from(a: [usize; 4]) -> Self {
        Shape::new(a[0], a[1], a[2], a[3])
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        Tensor4 {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.len()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        Tensor4 {
            shape,
            data: (0..shape.len()).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        self.data[self.shape.offset(i, j, k, l)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: T) {
        let o = self.shape.offset(i, j, k, l);
        self.data[o] = v;
    }

    /// The `H×W` plane at `(i, j)`.
    pub fn plane(&self, i: usize, j: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (i * self.shape.c + j) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(self, shape: impl Into<Shape>) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }

    /// Elementwise `f(x)`, shape preserved.
    pub fn map(&self, f: impl Fn(T) -> T + Sync + Send) -> Self {
        let mut out = self.clone();
        exec::for_each_chunk(&mut out.data, CHUNK, |_, c| {
            c.iter_mut().for_each(|x| *x = f(*x))
        });
        out
    }

    /// Elementwise `f(a, b)`; shapes must match exactly.
    pub fn zip(&self, other: &Self, f: impl Fn(T, T) -> T + Sync + Send) -> Result<Self> {
        self.expect_shape("ew_zip", other.shape)?;
        let mut out = self.clone();
        exec::for_each_chunk(&mut out.data, CHUNK, |ci, c| {
            let b = &other.data[ci * CHUNK..ci * CHUNK + c.len()];
            c.iter_mut().zip(b).for_each(|(x, &y)| *x = f(*x, y))
        });
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape("add_assign", other.shape)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(move |x| x * s)
    }

    /// Global average over each `H×W` plane; output shape `(n, c, 1, 1)`.
    pub fn mean_hw(&self) -> Result<Self> {
        let s = self.shape;
        if s.plane() == 0 {
            return Err(Error::invalid(format!("reduce_mean_hw on empty plane {s}")));
        }
        let inv = T::one() / T::from_usize(s.plane()).unwrap();
        let data = self
            .data
            .chunks(s.plane())
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        Ok(Tensor4 {
            shape: Shape::new(s.n, s.c, 1, 1),
            data,
        })
    }

    /// Backward of [`mean_hw`](Self::mean_hw): spreads `d_out / (h·w)` over each plane.
    pub fn mean_hw_backward(d_out: &Self, input_shape: Shape) -> Result<Self> {
        let want = Shape::new(input_shape.n, input_shape.c, 1, 1);
        d_out.expect_shape("reduce_mean_hw backward", want)?;
        let p = input_shape.plane();
        let inv = T::one() / T::from_usize(p).unwrap();
        let mut out = Self::zeros(input_shape);
        for (plane, &g) in out.data.chunks_mut(p).zip(&d_out.data) {
            plane.fill(g * inv);
        }
        Ok(out)
    }

    /// Errors on the first NaN or infinity in flat order.
    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite {
                index: self.shape.unravel(i),
                value: self.data[i].as_f64(),
            }),
        }
    }

    pub fn expect_shape(&self, op: &'static str, want: Shape) -> Result<()> {
        if self.shape != want {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: want,
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn min(&self) -> Option<T> {
        self.data.iter().copied().reduce(T::min)
    }

    pub fn axis_block(
        &mut self,
        axis: Axis,
        start: usize,
        len: usize,
    ) -> Result<AxisBlockView<'_, T>> {
        AxisBlockView::new(self, axis, start, len)
    }
}

const CHUNK: usize = 1 << 14;

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], d: &[f32]) -> Tensor4<f32> {
        Tensor4::from_vec(shape, d.to_vec()).unwrap()
    }

    #[test]
    fn zeros_shapes() {
        assert_eq!(Tensor4::<f32>::zeros([1, 1, 2, 2]).data(), &[0.0; 4]);
        let e = Tensor4::<f32>::zeros([0, 3, 4, 4]);
        assert!(e.is_empty());
        assert_eq!(e.shape(), Shape::new(0, 3, 4, 4));
        let big = Tensor4::<f32>::zeros([2, 96, 56, 56]);
        assert_eq!(big.len(), 602_112);
        assert!(big.data().iter().all(|&x| x == 0.0));
        assert_eq!(big.dtype(), DType::F32);
    }

    #[test]
    fn map_examples() {
        assert_eq!(t([1, 1, 1, 2], &[1., -2.]).map(|x| -x).data(), &[-1., 2.]);
        assert_eq!(t([1, 1, 1, 1], &[0.5]).map(|x| x).data(), &[0.5]);
        assert_eq!(t([1, 1, 1, 2], &[3., 4.]).map(|x| x * x).data(), &[9., 16.]);
    }

    #[test]
    fn zip_examples() {
        let a = t([1, 1, 1, 2], &[1., 2.]);
        assert_eq!(
            a.zip(&t([1, 1, 1, 2], &[3., 4.]), |x, y| x + y)
                .unwrap()
                .data(),
            &[4., 6.]
        );
        assert_eq!(
            a.zip(&t([1, 1, 1, 2], &[0., 0.]), |x, y| x * y)
                .unwrap()
                .data(),
            &[0., 0.]
        );
        let err = Tensor4::<f32>::zeros([1, 1, 2, 2])
            .zip(&Tensor4::zeros([1, 1, 2, 3]), |x, _| x)
            .unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("(1, 1, 2, 2)") && msg.contains("(1, 1, 2, 3)"),
            "{msg}"
        );
    }

    #[test]
    fn mean_hw_examples() {
        assert_eq!(
            t([1, 1, 2, 2], &[1., 2., 3., 4.]).mean_hw().unwrap().data(),
            &[2.5]
        );
        let m = t([1, 2, 1, 1], &[7., 9.]).mean_hw().unwrap();
        assert_eq!(m.data(), &[7., 9.]);
        assert_eq!(m.shape(), Shape::new(1, 2, 1, 1));
        assert_eq!(
            t([1, 1, 1, 4], &[0., 0., 0., 8.]).mean_hw().unwrap().data(),
            &[2.]
        );
        assert!(Tensor4::<f32>::zeros([1, 1, 0, 3]).mean_hw().is_err());
    }

    #[test]
    fn offset_round_trip() {
        let s = Shape::new(2, 3, 4, 5);
        let mut x = Tensor4::<f64>::zeros(s);
        x.set(1, 2, 3, 4, 7.5);
        assert_eq!(x.get(1, 2, 3, 4), 7.5);
        assert_eq!(s.offset(1, 2, 3, 4), 119);
        for flat in 0..s.len() {
            let [i, j, k, l] = s.unravel(flat);
            assert_eq!(s.offset(i, j, k, l), flat);
        }
    }

    #[test]
    fn check_finite_reports_first_index() {
        let mut x = Tensor4::<f32>::zeros([1, 2, 2, 2]);
        x.set(0, 1, 0, 1, f32::NAN);
        x.set(0, 1, 1, 1, f32::INFINITY);
        match x.check_finite() {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, [0, 1, 0, 1]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor4::<f32>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn map_commutes_with_permutation(v in prop::collection::vec(-10.0f64..10.0, 2..40), a in 0usize..40, b in 0usize..40) {
            let n = v.len();
            let (a, b) = (a % n, b % n);
            let x = Tensor4::from_vec([1, 1, 1, n], v.clone()).unwrap();
            let mut p = v.clone();
            p.swap(a, b);
            let xp = Tensor4::from_vec([1, 1, 1, n], p).unwrap();
            let f = |x: f64| x * x - 3.0 * x;
            let mut want = x.map(f).into_vec();
            want.swap(a, b);
            prop_assert_eq!(xp.map(f).into_vec(), want);
        }

        #[test]
        fn zip_is_pointwise(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40)) {
            let n = v.len();
            let a = Tensor4::from_vec([1, 1, n, 1], v.iter().map(|p| p.0).collect()).unwrap();
            let b = Tensor4::from_vec([1, 1, n, 1], v.iter().map(|p| p.1).collect()).unwrap();
            let z = a.zip(&b, |x, y| x * y + 1.0).unwrap();
            for (i, p) in v.iter().enumerate() {
                prop_assert_eq!(z.data()[i], p.0 * p.1 + 1.0);
            }
        }
    }
}
