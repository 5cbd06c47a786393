use super::{Real, Shape, Tensor4};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    H,
    W,
}

/// Mutable window over the contiguous index range `[start, start + len)` of
/// one spatial axis, all other axes in full. Indices passed to `get`/`set`
/// are local along the viewed axis.
#[derive(Debug)]
pub struct AxisBlockView<'a, T> {
    base: &'a mut Tensor4<T>,
    axis: Axis,
    start: usize,
    len: usize,
}

impl<'a, T: Real> AxisBlockView<'a, T> {
    pub(super) fn new(
        base: &'a mut Tensor4<T>,
        axis: Axis,
        start: usize,
        len: usize,
    ) -> Result<Self> {
        let extent = base.shape().extent(axis);
        if len == 0 || start + len > extent {
            return Err(Error::invalid(format!(
                "block [{start}, {}) out of range for axis {axis:?} of extent {extent}",
                start + len
            )));
        }
        Ok(AxisBlockView {
            base,
            axis,
            start,
            len,
        })
    }

    /// Shape of the window as a standalone tensor.
    pub fn shape(&self) -> Shape {
        let s = self.base.shape();
        match self.axis {
            Axis::H => Shape::new(s.n, s.c, self.len, s.w),
            Axis::W => Shape::new(s.n, s.c, s.h, self.len),
        }
    }

    fn base_index(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        let local = self.shape();
        assert!(
            i < local.n && j < local.c && k < local.h && l < local.w,
            "index ({i}, {j}, {k}, {l}) outside view {local}"
        );
        match self.axis {
            Axis::H => self.base.shape().offset(i, j, self.start + k, l),
            Axis::W => self.base.shape().offset(i, j, k, self.start + l),
        }
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        self.base.data()[self.base_index(i, j, k, l)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: T) {
        let o = self.base_index(i, j, k, l);
        self.base.data_mut()[o] = v;
    }

    pub fn to_tensor(&self) -> Tensor4<T> {
        let s = self.shape();
        Tensor4::from_fn(s, |flat| {
            let [i, j, k, l] = s.unravel(flat);
            self.get(i, j, k, l)
        })
    }

    /// Overwrites the window with `src`, whose shape must equal [`shape`](Self::shape).
    pub fn copy_from(&mut self, src: &Tensor4<T>) -> Result<()> {
        let s = self.shape();
        src.expect_shape("axis block copy", s)?;
        for (flat, &v) in src.data().iter().enumerate() {
            let [i, j, k, l] = s.unravel(flat);
            self.set(i, j, k, l, v);
        }
        Ok(())
    }

    pub fn map_inplace(&mut self, f: impl Fn(T) -> T) {
        let s = self.shape();
        for flat in 0..s.len() {
            let [i, j, k, l] = s.unravel(flat);
            let o = self.base_index(i, j, k, l);
            let d = self.base.data_mut();
            d[o] = f(d[o]);
        }
    }
}
