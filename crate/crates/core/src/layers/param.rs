use crate::tensor::{Real, Shape, Tensor4};

/// How the optimizer treats a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Projection and convolution weights: decoupled weight decay applies.
    Weight,
    /// Biases and normalisation affine terms: no decay.
    NoDecay,
    /// LIF leak/threshold: updated without decay.
    Lif,
    /// Not updated.
    Frozen,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

pub struct ParamRef<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Shape,
    pub data: &'a [T],
}

pub struct ParamMut<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Shape,
    pub data: &'a mut [T],
}

/// A bundle of named learnable tensors. Gradients use the same type, so
/// visiting a parameter set and its gradient yields matching sequences.
pub trait Params<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>);

    fn params(&self) -> Vec<ParamRef<'_, T>> {
        let mut v = Vec::new();
        self.visit("", &mut v);
        v
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut v = Vec::new();
        self.visit_mut("", &mut v);
        v
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn push<'a, T: Real>(
    out: &mut Vec<ParamRef<'a, T>>,
    prefix: &str,
    name: &str,
    kind: ParamKind,
    t: &'a Tensor4<T>,
) {
    out.push(ParamRef {
        name: join(prefix, name),
        kind,
        shape: t.shape(),
        data: t.data(),
    });
}

pub(crate) fn push_mut<'a, T: Real>(
    out: &mut Vec<ParamMut<'a, T>>,
    prefix: &str,
    name: &str,
    kind: ParamKind,
    t: &'a mut Tensor4<T>,
) {
    out.push(ParamMut {
        name: join(prefix, name),
        kind,
        shape: t.shape(),
        data: t.data_mut(),
    });
}
