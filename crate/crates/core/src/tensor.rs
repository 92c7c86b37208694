//! Rank-4 tensors in `(n, c, h, w)` layout.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Scalar type a tensor can hold.
///
/// Production code runs in `f32`. The same kernels instantiated at `f64`
/// form the shadow mode used by finite-difference gradient checks.
pub trait Real:
    Float + FromPrimitive + Sum + Default + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one `(h, w)` plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub const fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    pub const fn with_hw(self, h: usize, w: usize) -> Self {
        Shape { h, w, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major `(n, c, h, w)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape} needs {} elements, got {}", shape.numel(), data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Same data under a different shape with equal element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        T::lit(self.data.iter().map(|v| v.as_f64()).sum::<f64>())
    }

    pub fn mean(&self) -> T {
        T::lit(self.data.iter().map(|v| v.as_f64()).sum::<f64>() / self.data.len().max(1) as f64)
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// One sample of a batch, as an `(1, c, h, w)` tensor.
    pub fn sample(&self, n: usize) -> Tensor<T> {
        let per = self.shape.c * self.shape.plane();
        Tensor {
            shape: Shape { n: 1, ..self.shape },
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Channels `start..start + count` of every sample.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Tensor<T>> {
        if start + count > self.shape.c {
            return Err(Error::shape(
                "slice_channels",
                format!("range {start}..{} exceeds {} channels", start + count, self.shape.c),
            ));
        }
        let plane = self.shape.plane();
        let mut data = Vec::with_capacity(self.shape.n * count * plane);
        for n in 0..self.shape.n {
            let base = (n * self.shape.c + start) * plane;
            data.extend_from_slice(&self.data[base..base + count * plane]);
        }
        Ok(Tensor { shape: self.shape.with_c(count), data })
    }

    /// Stacks `(1, c, h, w)` samples along the batch axis.
    pub fn stack(samples: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = samples
            .first()
            .ok_or_else(|| Error::shape("stack", "no samples".to_string()))?
            .shape;
        let mut data = Vec::with_capacity(first.numel() * samples.len());
        let mut n = 0;
        for s in samples {
            let sh = s.shape;
            if (sh.c, sh.h, sh.w) != (first.c, first.h, first.w) {
                return Err(Error::shape("stack", format!("sample {sh} does not match {first}")));
            }
            n += sh.n;
            data.extend_from_slice(&s.data);
        }
        Ok(Tensor { shape: Shape { n, ..first }, data })
    }
}
