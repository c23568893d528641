//! Minimal dense-tensor machinery shared by the networks: tensors, feature
//! maps, matmul, layers with hand-written backward passes, Adam, and
//! checkpoint I/O.

mod act;
mod adam;
pub mod checkpoint;
mod conv;
mod gemm;
pub mod gradcheck;
mod linear;
mod norm;

pub use act::{leaky_relu, leaky_relu_grad, sigmoid, silu, silu_grad, softplus};
pub use adam::{Adam, AdamConfig};
pub use conv::{Conv2d, ConvCache, PadMode};
pub use gemm::gemm;
pub use linear::Linear;
pub use norm::{LayerNorm, LayerNormCache};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{shape, Result};

/// Dense f64 tensor with an explicit shape (row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(shape, data.len());
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn randn<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }
}

fn shape_err<T>(shape_: &[usize], len: usize) -> Result<T> {
    shape(format!("shape {shape_:?} does not hold {len} values"))
}

/// H×W×C activation map, row-major with channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct Feat {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Feat {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * c {
            return shape_err(&[h, w, c], data.len());
        }
        Ok(Self { h, w, c, data })
    }

    pub fn tokens(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    pub fn same_shape(&self, other: &Feat) -> bool {
        self.h == other.h && self.w == other.w && self.c == other.c
    }

    pub fn add_assign(&mut self, other: &Feat) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Named parameter enumeration. Gradient buffers are values of the same
/// type, so the two enumerations line up entry for entry.
pub trait Params {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>);

    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.named("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.named_mut("", &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn zero_(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// `self += other`, entry by entry.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.tensors();
        for ((_, dst), (_, s)) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.data.iter_mut().zip(&s.data) {
                *a += b;
            }
        }
    }

    fn scale_(&mut self, k: f64) {
        for (_, t) in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= k);
        }
    }

    fn flat(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.data.iter().copied())
            .collect()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// A zeroed copy of `p`, used as a gradient buffer.
pub fn zeros_like<P: Params + Clone>(p: &P) -> P {
    let mut g = p.clone();
    g.zero_();
    g
}

/// Sum per-sample gradients in slice order.
pub fn reduce_ordered<P: Params + Clone>(parts: &[P]) -> Option<P> {
    let mut iter = parts.iter();
    let mut acc = iter.next()?.clone();
    for p in iter {
        acc.accumulate(p);
    }
    Some(acc)
}

/// Row-major token matrix (L×C) ⇄ feature map views share storage layout, so
/// conversions are moves.
impl From<Feat> for Tensor {
    fn from(f: Feat) -> Self {
        Tensor {
            shape: vec![f.h, f.w, f.c],
            data: f.data,
        }
    }
}
