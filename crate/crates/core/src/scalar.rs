//! Scalar abstraction.
//!
//! All numerics in the crate are generic over [`Real`]. The trait bundles the
//! `num-traits` float interface with the two pieces of machinery that need a
//! concrete type underneath: the FFT backend and the dense symmetric
//! eigensolver. Both are implemented for `f32` and `f64`.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::sync::Arc;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftNum, FftPlanner};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Two-dimensional complex transform on a row-major `ny × nx` array.
///
/// Both directions are unnormalized; callers divide by `nx * ny`.
pub trait Transform2d<T>: Send + Sync {
    fn forward(&self, data: &mut [Complex<T>]);
    fn inverse(&self, data: &mut [Complex<T>]);

    /// Real input to the half spectrum `ix ∈ 0..=nx/2`, stored row-major with
    /// `nx/2 + 1` entries per row. Unnormalized.
    fn forward_real(&self, input: &[T], out: &mut [Complex<T>]);
    /// Inverse of [`forward_real`](Self::forward_real), unnormalized. The
    /// spectrum is used as scratch.
    fn inverse_real(&self, spectrum: &mut [Complex<T>], out: &mut [T]);
}

/// Floating point scalar usable by every solver in the crate.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Machine epsilon as a plain value (avoids the `Float::epsilon()` call noise).
    const EPS: f64;

    fn transform_2d(nx: usize, ny: usize) -> Arc<dyn Transform2d<Self>>;

    /// Eigen-decomposition of a symmetric `n × n` matrix stored column-major.
    ///
    /// Returns eigenvalues in ascending order and the matching unit
    /// eigenvectors as columns of a column-major `n × n` buffer.
    fn symmetric_eigen(n: usize, matrix: Vec<Self>) -> (Vec<Self>, Vec<Self>);

    /// Literal conversion; every `f64` constant used in the crate is representable.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn lit_usize(n: usize) -> Self {
        Self::from_usize(n).expect("representable count")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

struct RustFft2d<T: FftNum> {
    nx: usize,
    ny: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
    r2c: Arc<dyn RealToComplex<T>>,
    c2r: Arc<dyn ComplexToReal<T>>,
}

impl<T: FftNum> RustFft2d<T> {
    fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::<T>::new();
        let mut real_planner = RealFftPlanner::<T>::new();
        Self {
            r2c: real_planner.plan_fft_forward(nx),
            c2r: real_planner.plan_fft_inverse(nx),
            nx,
            ny,
            row_fwd: planner.plan_fft_forward(nx),
            row_inv: planner.plan_fft_inverse(nx),
            col_fwd: planner.plan_fft_forward(ny),
            col_inv: planner.plan_fft_inverse(ny),
        }
    }

    fn run(&self, data: &mut [Complex<T>], rows: &Arc<dyn Fft<T>>, cols: &Arc<dyn Fft<T>>) {
        let (nx, ny) = (self.nx, self.ny);
        debug_assert_eq!(data.len(), nx * ny);
        let scratch_len = rows.get_inplace_scratch_len().max(cols.get_inplace_scratch_len());
        let zero = Complex::new(T::zero(), T::zero());
        let mut scratch = vec![zero; scratch_len];
        // rows are contiguous: one batched call over all of them
        rows.process_with_scratch(data, &mut scratch);
        let mut transposed = vec![zero; nx * ny];
        for iy in 0..ny {
            for ix in 0..nx {
                transposed[ix * ny + iy] = data[iy * nx + ix];
            }
        }
        cols.process_with_scratch(&mut transposed, &mut scratch);
        for ix in 0..nx {
            for iy in 0..ny {
                data[iy * nx + ix] = transposed[ix * ny + iy];
            }
        }
    }
}

impl<T: FftNum> RustFft2d<T> {
    /// Column transforms of a row-major `ny × nh` half spectrum.
    fn columns(&self, data: &mut [Complex<T>], cols: &Arc<dyn Fft<T>>) {
        let (nh, ny) = (self.nx / 2 + 1, self.ny);
        let zero = Complex::new(T::zero(), T::zero());
        let mut transposed = vec![zero; nh * ny];
        for iy in 0..ny {
            let row = &data[iy * nh..(iy + 1) * nh];
            for (ix, &c) in row.iter().enumerate() {
                transposed[ix * ny + iy] = c;
            }
        }
        let mut scratch = vec![zero; cols.get_inplace_scratch_len()];
        cols.process_with_scratch(&mut transposed, &mut scratch);
        for ix in 0..nh {
            let col = &transposed[ix * ny..(ix + 1) * ny];
            for (iy, &c) in col.iter().enumerate() {
                data[iy * nh + ix] = c;
            }
        }
    }
}

impl<T: FftNum> Transform2d<T> for RustFft2d<T> {
    fn forward_real(&self, input: &[T], out: &mut [Complex<T>]) {
        let (nx, ny) = (self.nx, self.ny);
        let nh = nx / 2 + 1;
        debug_assert_eq!(input.len(), nx * ny);
        debug_assert_eq!(out.len(), nh * ny);
        let mut row = self.r2c.make_input_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for iy in 0..ny {
            row.copy_from_slice(&input[iy * nx..(iy + 1) * nx]);
            self.r2c
                .process_with_scratch(&mut row, &mut out[iy * nh..(iy + 1) * nh], &mut scratch)
                .expect("buffer sizes match the plan");
        }
        self.columns(out, &self.col_fwd);
    }

    fn inverse_real(&self, spectrum: &mut [Complex<T>], out: &mut [T]) {
        let (nx, ny) = (self.nx, self.ny);
        let nh = nx / 2 + 1;
        debug_assert_eq!(spectrum.len(), nh * ny);
        debug_assert_eq!(out.len(), nx * ny);
        self.columns(spectrum, &self.col_inv);
        let mut scratch = self.c2r.make_scratch_vec();
        for iy in 0..ny {
            let half = &mut spectrum[iy * nh..(iy + 1) * nh];
            // for a real field these are real up to rounding
            half[0].im = T::zero();
            half[nh - 1].im = T::zero();
            self.c2r
                .process_with_scratch(half, &mut out[iy * nx..(iy + 1) * nx], &mut scratch)
                .expect("buffer sizes match the plan");
        }
    }

    fn forward(&self, data: &mut [Complex<T>]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    fn inverse(&self, data: &mut [Complex<T>]) {
        self.run(data, &self.row_inv, &self.col_inv);
    }
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            const EPS: f64 = <$t>::EPSILON as f64;

            fn transform_2d(nx: usize, ny: usize) -> Arc<dyn Transform2d<Self>> {
                Arc::new(RustFft2d::<$t>::new(nx, ny))
            }

            fn symmetric_eigen(n: usize, matrix: Vec<Self>) -> (Vec<Self>, Vec<Self>) {
                assert_eq!(matrix.len(), n * n, "matrix must be n x n");
                let m = nalgebra::DMatrix::<$t>::from_vec(n, n, matrix);
                let eig = nalgebra::SymmetricEigen::new(m);
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
                let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
                let mut vectors = Vec::with_capacity(n * n);
                for &i in &order {
                    vectors.extend(eig.eigenvectors.column(i).iter().copied());
                }
                (values, vectors)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
