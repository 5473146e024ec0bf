use crate::error::{Error, Result};

/// Element type for tensors. f32 is the working precision for parameters and
/// activations; f64 backs gradient accumulation and the reference kernels.
pub trait Scalar: Copy + PartialOrd + std::fmt::Debug + Send + Sync + 'static {
    const ZERO: Self;
    const ONE: Self;
    /// Smallest positive normal; used to clamp sigmoid output away from 0.
    const TINY: Self;
    /// Largest value strictly below one; clamps sigmoid output away from 1.
    const BELOW_ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const TINY: Self = f32::MIN_POSITIVE;
    const BELOW_ONE: Self = 1.0 - f32::EPSILON / 2.0;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const TINY: Self = f64::MIN_POSITIVE;
    const BELOW_ONE: Self = 1.0 - f64::EPSILON / 2.0;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}

/// NCHW dimensions. Batch is carried through the type for shape checking even
/// though every code path in this crate runs with n = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub const fn count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense NCHW tensor, row-major within each plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: Dims) -> Self {
        Tensor {
            dims,
            data: vec![T::ZERO; dims.count()],
        }
    }

    pub fn filled(dims: Dims, v: T) -> Self {
        Tensor {
            dims,
            data: vec![v; dims.count()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.count() {
            return Err(Error::InvalidArgument(format!(
                "tensor data length {} does not match dims {} ({} elements)",
                data.len(),
                dims,
                dims.count()
            )));
        }
        Ok(Tensor { dims, data })
    }

    #[inline(always)]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline(always)]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline(always)]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline(always)]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims.c + c) * self.dims.h + h) * self.dims.w + w
    }

    #[inline(always)]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    #[inline(always)]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    /// One H*W channel plane.
    #[inline(always)]
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.dims.h * self.dims.w;
        let start = (n * self.dims.c + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline(always)]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let hw = self.dims.h * self.dims.w;
        let start = (n * self.dims.c + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Row/col of the largest value in a single-channel map; ties break toward
    /// the smallest row, then the smallest column.
    pub fn argmax_hw(&self, n: usize, c: usize) -> (usize, usize) {
        let plane = self.plane(n, c);
        let mut best = 0usize;
        for (i, v) in plane.iter().enumerate() {
            if *v > plane[best] {
                best = i;
            }
        }
        (best / self.dims.w, best % self.dims.w)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

impl Tensor<f32> {
    pub fn to_f64(&self) -> Tensor<f64> {
        self.cast()
    }
}

impl Tensor<f64> {
    pub fn to_f32(&self) -> Tensor<f32> {
        self.cast()
    }
}
