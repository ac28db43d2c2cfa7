//! Dense tensors for the network and the scalar trait they are generic over.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point scalar the network runs on: `f32` for training, `f64` for
/// gradient checks.
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    /// `c = a · b + beta · c` with explicit row/column strides (in elements).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    /// Nearest value of this type.
    fn of(v: f64) -> Self;

    fn f64(self) -> f64;
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (isize, isize)) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_real {
    ($t:ty, $f:path) => {
        impl Real for $t {
            #[inline(always)]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline(always)]
            fn f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                check_extent(c.len(), m, n, c_strides);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every index touched by the kernel lies within the
                // slices, checked above.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Batched volumetric tensor `[N, C, X, Y, Z]`; within one channel the X
/// axis is fastest, matching the volume and patch layouts.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorBatch<T> {
    pub n: usize,
    pub c: usize,
    pub dims: [usize; 3],
    pub data: Vec<T>,
}

impl<T: Real> TensorBatch<T> {
    pub fn zeros(n: usize, c: usize, dims: [usize; 3]) -> Self {
        Self {
            n,
            c,
            dims,
            data: vec![T::zero(); n * c * dims.iter().product::<usize>()],
        }
    }

    pub fn from_vec(n: usize, c: usize, dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        let t = Self { n, c, dims, data };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.dims.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "tensor dims must be positive, got [{}, {}, {:?}]",
                self.n, self.c, self.dims
            )));
        }
        if self.data.len() != self.n * self.c * self.spatial() {
            return Err(Error::ShapeMismatch(format!(
                "tensor [{}, {}, {:?}] needs {} values, got {}",
                self.n,
                self.c,
                self.dims,
                self.n * self.c * self.spatial(),
                self.data.len()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn spatial(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.spatial()
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn channel(&self, i: usize, c: usize) -> &[T] {
        let s = self.spatial();
        let start = (i * self.c + c) * s;
        &self.data[start..start + s]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n == other.n && self.c == other.c && self.dims == other.dims
    }

    pub fn cast<U: Real>(&self) -> TensorBatch<U> {
        TensorBatch {
            n: self.n,
            c: self.c,
            dims: self.dims,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Stacks equally-shaped samples, each `[C, X, Y, Z]` flattened.
    pub fn stack(c: usize, dims: [usize; 3], samples: &[&[T]]) -> Result<Self> {
        let mut data = Vec::with_capacity(samples.len() * c * dims.iter().product::<usize>());
        for s in samples {
            data.extend_from_slice(s);
        }
        Self::from_vec(samples.len(), c, dims, data)
    }
}

/// Row-major dense matrix, used for logits and fully-connected activations.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}
