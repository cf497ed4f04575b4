//! Flat torus `ℝ²/(aℤ × bℤ)` sampled on a uniform grid, with an exact
//! Fourier calculus.
//!
//! Storage is row-major with `y` as the row index: node `(ix, iy)` sits at
//! `values[iy * nx + ix]` and has coordinates `(a·ix/nx, b·iy/ny)`.
//!
//! Spectral coefficients are normalized as `f̂_k = N⁻¹ Σ_j f_j e^{-iξ_k·x_j}`
//! so that `∫ f² = |Ω| Σ_k |f̂_k|²`.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;

use crate::error::GridError;
use crate::scalar::{Real, Transform2d};

/// Treatment of pointwise products of band-limited fields.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dealias {
    /// Plain pointwise product on the grid nodes.
    #[default]
    Off,
    /// Zero-pad to a 3/2-size grid, multiply there, truncate back.
    ThreeHalves,
}

pub struct TorusGrid<T: Real> {
    a: T,
    b: T,
    nx: usize,
    ny: usize,
    cell_area: T,
    /// |ξ|² per mode, same layout as physical storage.
    xi2: Vec<T>,
    /// |ξ|² on the half spectrum `ix ∈ 0..=nx/2`.
    xi2_half: Vec<T>,
    transform: Arc<dyn Transform2d<T>>,
    padded: OnceLock<Arc<TorusGrid<T>>>,
}

impl<T: Real> fmt::Debug for TorusGrid<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("a", &self.a)
            .field("b", &self.b)
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .finish()
    }
}

/// Signed integer frequency of storage index `i` on an axis with `n` points.
/// The Nyquist index maps to `+n/2`.
#[inline]
pub fn frequency(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl<T: Real> TorusGrid<T> {
    pub fn new(a: T, b: T, nx: usize, ny: usize) -> Result<Arc<Self>, GridError> {
        if !(a > T::zero() && a.is_finite() && b > T::zero() && b.is_finite()) {
            return Err(GridError::NonPositiveSide {
                a: a.as_f64(),
                b: b.as_f64(),
            });
        }
        for n in [nx, ny] {
            if n < 4 {
                return Err(GridError::TooCoarse(n));
            }
            if n % 2 != 0 {
                return Err(GridError::OddResolution(n));
            }
        }
        Ok(Arc::new(Self::build(a, b, nx, ny)))
    }

    fn build(a: T, b: T, nx: usize, ny: usize) -> Self {
        let two_pi = T::TAU();
        let mut xi2 = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            let ky = two_pi * T::from_i64(frequency(iy, ny)).unwrap() / b;
            for ix in 0..nx {
                let kx = two_pi * T::from_i64(frequency(ix, nx)).unwrap() / a;
                xi2.push(kx * kx + ky * ky);
            }
        }
        let nh = nx / 2 + 1;
        let xi2_half = (0..ny)
            .flat_map(|iy| xi2[iy * nx..iy * nx + nh].iter().copied())
            .collect();
        let cell_area = (a / T::lit_usize(nx)) * (b / T::lit_usize(ny));
        Self {
            a,
            b,
            nx,
            ny,
            cell_area,
            xi2,
            xi2_half,
            transform: T::transform_2d(nx, ny),
            padded: OnceLock::new(),
        }
    }

    pub fn a(&self) -> T {
        self.a
    }

    pub fn b(&self) -> T {
        self.b
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_area(&self) -> T {
        self.cell_area
    }

    /// |Ω| = a·b.
    pub fn area(&self) -> T {
        self.a * self.b
    }

    /// Smallest grid spacing.
    pub fn spacing(&self) -> T {
        (self.a / T::lit_usize(self.nx)).min(self.b / T::lit_usize(self.ny))
    }

    /// |ξ|² of every mode, in storage order.
    pub fn wavenumbers_squared(&self) -> &[T] {
        &self.xi2
    }

    /// Largest |ξ|² resolved by the grid.
    pub fn max_wavenumber_squared(&self) -> T {
        self.xi2.iter().copied().fold(T::zero(), T::max)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.a == other.a && self.b == other.b
    }

    pub fn x(&self, ix: usize) -> T {
        self.a * T::lit_usize(ix) / T::lit_usize(self.nx)
    }

    pub fn y(&self, iy: usize) -> T {
        self.b * T::lit_usize(iy) / T::lit_usize(self.ny)
    }

    /// Forward transform with the `1/N` normalization.
    pub fn to_spectral(&self, values: &[T]) -> Vec<Complex<T>> {
        let mut data: Vec<Complex<T>> = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.transform.forward(&mut data);
        let scale = T::one() / T::lit_usize(self.len());
        for c in &mut data {
            *c = *c * scale;
        }
        data
    }

    /// Inverse of [`to_spectral`](Self::to_spectral); keeps the real part.
    pub fn from_spectral(&self, mut coeffs: Vec<Complex<T>>) -> Vec<T> {
        self.transform.inverse(&mut coeffs);
        coeffs.into_iter().map(|c| c.re).collect()
    }

    fn half_spectrum(&self, values: &[T]) -> Vec<Complex<T>> {
        let mut spec = vec![Complex::new(T::zero(), T::zero()); self.xi2_half.len()];
        self.transform.forward_real(values, &mut spec);
        spec
    }

    /// Applies a real radial multiplier `m(|ξ|²)` mode-wise.
    pub fn apply_multiplier(&self, values: &[T], multiplier: impl Fn(T) -> T) -> Vec<T> {
        let mut spec = self.half_spectrum(values);
        let scale = T::one() / T::lit_usize(self.len());
        for (c, &k2) in spec.iter_mut().zip(&self.xi2_half) {
            *c = *c * (multiplier(k2) * scale);
        }
        let mut out = vec![T::zero(); self.len()];
        self.transform.inverse_real(&mut spec, &mut out);
        out
    }

    /// `|Ω| Σ_k m(|ξ_k|²) |f̂_k|²`.
    pub fn spectral_quadratic(&self, values: &[T], weight: impl Fn(T) -> T) -> T {
        let spec = self.half_spectrum(values);
        let nh = self.nx / 2 + 1;
        let two = T::lit(2.0);
        let mut sum = T::zero();
        for (i, (c, &k2)) in spec.iter().zip(&self.xi2_half).enumerate() {
            let ix = i % nh;
            // columns 1..nx/2 stand for themselves and their mirror image
            let mult = if ix == 0 || ix == nh - 1 { T::one() } else { two };
            sum += mult * weight(k2) * c.norm_sqr();
        }
        let n = T::lit_usize(self.len());
        sum * self.area() / (n * n)
    }

    /// Grid of size `3nx/2 × 3ny/2` on the same torus, used for de-aliasing.
    fn padded(&self) -> &Arc<TorusGrid<T>> {
        self.padded
            .get_or_init(|| Arc::new(Self::build(self.a, self.b, 3 * self.nx / 2, 3 * self.ny / 2)))
    }

    fn pad_spectrum(&self, spec: &[Complex<T>], target: &TorusGrid<T>) -> Vec<Complex<T>> {
        let zero = Complex::new(T::zero(), T::zero());
        let mut out = vec![zero; target.len()];
        for iy in 0..self.ny {
            let my = frequency(iy, self.ny);
            if my.unsigned_abs() as usize * 2 == self.ny {
                continue;
            }
            let ty = my.rem_euclid(target.ny as i64) as usize;
            for ix in 0..self.nx {
                let mx = frequency(ix, self.nx);
                if mx.unsigned_abs() as usize * 2 == self.nx {
                    continue;
                }
                let tx = mx.rem_euclid(target.nx as i64) as usize;
                out[ty * target.nx + tx] = spec[iy * self.nx + ix];
            }
        }
        out
    }

    fn truncate_spectrum(&self, spec: &[Complex<T>], source: &TorusGrid<T>) -> Vec<Complex<T>> {
        let zero = Complex::new(T::zero(), T::zero());
        let mut out = vec![zero; self.len()];
        for iy in 0..self.ny {
            let my = frequency(iy, self.ny);
            if my.unsigned_abs() as usize * 2 == self.ny {
                continue;
            }
            let sy = my.rem_euclid(source.ny as i64) as usize;
            for ix in 0..self.nx {
                let mx = frequency(ix, self.nx);
                if mx.unsigned_abs() as usize * 2 == self.nx {
                    continue;
                }
                let sx = mx.rem_euclid(source.nx as i64) as usize;
                out[iy * self.nx + ix] = spec[sy * source.nx + sx];
            }
        }
        out
    }

    /// Pointwise product `f·g`, optionally de-aliased by the 3/2 rule.
    pub fn product(&self, f: &[T], g: &[T], dealias: Dealias) -> Vec<T> {
        match dealias {
            Dealias::Off => f.iter().zip(g).map(|(&x, &y)| x * y).collect(),
            Dealias::ThreeHalves => {
                let big = self.padded();
                let fp = big.from_spectral(self.pad_spectrum(&self.to_spectral(f), big));
                let gp = big.from_spectral(self.pad_spectrum(&self.to_spectral(g), big));
                let prod: Vec<T> = fp.iter().zip(&gp).map(|(&x, &y)| x * y).collect();
                let spec = big.to_spectral(&prod);
                self.from_spectral(self.truncate_spectrum(&spec, big))
            }
        }
    }

    /// Spectral translation by `(sx, sy)` in physical units.
    pub fn translate(&self, values: &[T], sx: T, sy: T) -> Vec<T> {
        let mut spec = self.to_spectral(values);
        let two_pi = T::TAU();
        for iy in 0..self.ny {
            let my = frequency(iy, self.ny);
            for ix in 0..self.nx {
                let mx = frequency(ix, self.nx);
                let idx = iy * self.nx + ix;
                if mx.unsigned_abs() as usize * 2 == self.nx || my.unsigned_abs() as usize * 2 == self.ny {
                    // a Nyquist mode cannot be shifted by a non-grid amount and stay real
                    continue;
                }
                let phase = -two_pi * (T::from_i64(mx).unwrap() * sx / self.a + T::from_i64(my).unwrap() * sy / self.b);
                spec[idx] = spec[idx] * Complex::new(phase.cos(), phase.sin());
            }
        }
        self.from_spectral(spec)
    }
}

/// Real scalar function sampled on a [`TorusGrid`].
#[derive(Clone)]
pub struct Field<T: Real> {
    grid: Arc<TorusGrid<T>>,
    values: Vec<T>,
}

impl<T: Real> fmt::Debug for Field<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("grid", &self.grid)
            .field("min", &self.min())
            .field("max", &self.max())
            .finish()
    }
}

impl<T: Real> Field<T> {
    pub fn from_values(grid: &Arc<TorusGrid<T>>, values: Vec<T>) -> Self {
        assert_eq!(values.len(), grid.len(), "field length must match grid");
        Self {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn zeros(grid: &Arc<TorusGrid<T>>) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn constant(grid: &Arc<TorusGrid<T>>, c: T) -> Self {
        Self::from_values(grid, vec![c; grid.len()])
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(grid: &Arc<TorusGrid<T>>, f: impl Fn(T, T) -> T) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny() {
            let y = grid.y(iy);
            for ix in 0..grid.nx() {
                values.push(f(grid.x(ix), y));
            }
        }
        Self::from_values(grid, values)
    }

    /// Real Fourier mode `cos(2π(m x/a + n y/b))`.
    pub fn cos_mode(grid: &Arc<TorusGrid<T>>, m: i64, n: i64) -> Self {
        let (a, b) = (grid.a(), grid.b());
        let (m, n) = (T::from_i64(m).unwrap(), T::from_i64(n).unwrap());
        Self::from_fn(grid, |x, y| (T::TAU() * (m * x / a + n * y / b)).cos())
    }

    /// Real Fourier mode `sin(2π(m x/a + n y/b))`.
    pub fn sin_mode(grid: &Arc<TorusGrid<T>>, m: i64, n: i64) -> Self {
        let (a, b) = (grid.a(), grid.b());
        let (m, n) = (T::from_i64(m).unwrap(), T::from_i64(n).unwrap());
        Self::from_fn(grid, |x, y| (T::TAU() * (m * x / a + n * y / b)).sin())
    }

    pub fn grid(&self) -> &Arc<TorusGrid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    fn with_values(&self, values: Vec<T>) -> Self {
        Self {
            grid: Arc::clone(&self.grid),
            values,
        }
    }

    fn check_shape(&self, other: &Self) {
        assert!(
            Arc::ptr_eq(&self.grid, &other.grid) || self.grid.same_shape(&other.grid),
            "fields live on different grids"
        );
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        self.check_shape(other);
        self.with_values(self.values.iter().zip(&other.values).map(|(&x, &y)| f(x, y)).collect())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        self.check_shape(other);
        for (x, &y) in self.values.iter_mut().zip(&other.values) {
            *x += alpha * y;
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn shifted(&self, c: T) -> Self {
        self.map(|v| v + c)
    }

    pub fn exp(&self) -> Self {
        self.map(T::exp)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `∫_Ω f` by the rectangle rule (exact for trigonometric polynomials below Nyquist).
    pub fn integral(&self) -> T {
        self.values.iter().copied().sum::<T>() * self.grid.cell_area()
    }

    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::lit_usize(self.values.len())
    }

    /// Removes the mean.
    pub fn zero_mean(&self) -> Self {
        self.shifted(-self.mean())
    }

    /// `|∫ f| ≤ tol·|Ω|·max|f|`.
    pub fn is_zero_mean(&self, tol: T) -> bool {
        self.integral().abs() <= tol * self.grid.area() * self.max_abs().max(T::min_positive_value())
    }

    /// L² inner product `(f, g)`.
    pub fn inner(&self, other: &Self) -> T {
        self.check_shape(other);
        self.values.iter().zip(&other.values).map(|(&x, &y)| x * y).sum::<T>() * self.grid.cell_area()
    }

    pub fn product(&self, other: &Self, dealias: Dealias) -> Self {
        self.check_shape(other);
        self.with_values(self.grid.product(&self.values, &other.values, dealias))
    }

    /// Spectral Laplacian, multiplier `−|ξ|²`.
    pub fn laplacian(&self) -> Self {
        self.with_values(self.grid.apply_multiplier(&self.values, |k2| -k2))
    }

    /// Zero-mean `g` with `−Δg = f − mean(f)`.
    pub fn inv_laplacian_zero_mean(&self) -> Self {
        self.with_values(self.grid.apply_multiplier(&self.values, |k2| {
            if k2 > T::zero() {
                T::one() / k2
            } else {
                T::zero()
            }
        }))
    }

    /// `(a − bΔ)⁻¹ f` for `a, b` with `a + b|ξ|² ≠ 0` on every mode.
    pub fn helmholtz_solve(&self, a: T, b: T) -> Self {
        self.with_values(self.grid.apply_multiplier(&self.values, |k2| T::one() / (a + b * k2)))
    }

    pub fn translated(&self, sx: T, sy: T) -> Self {
        self.with_values(self.grid.translate(&self.values, sx, sy))
    }

    /// `(∫ f²)^{1/2}`.
    pub fn norm_l2(&self) -> T {
        self.inner(self).sqrt()
    }

    /// `‖∇f‖₂² = |Ω| Σ |ξ|² |f̂|²`.
    pub fn grad_norm_sq(&self) -> T {
        self.grid.spectral_quadratic(&self.values, |k2| k2)
    }

    /// H¹ norm `(‖f‖₂² + ‖∇f‖₂²)^{1/2}`.
    pub fn norm_v(&self) -> T {
        self.grid.spectral_quadratic(&self.values, |k2| T::one() + k2).sqrt()
    }

    /// Dual of the H¹ norm through the Riesz map `(I − Δ)⁻¹`.
    pub fn norm_vstar(&self) -> T {
        self.grid
            .spectral_quadratic(&self.values, |k2| T::one() / (T::one() + k2))
            .sqrt()
    }
}

impl<T: Real> Add for &Field<T> {
    type Output = Field<T>;
    fn add(self, rhs: Self) -> Field<T> {
        self.zip_map(rhs, |x, y| x + y)
    }
}

impl<T: Real> Sub for &Field<T> {
    type Output = Field<T>;
    fn sub(self, rhs: Self) -> Field<T> {
        self.zip_map(rhs, |x, y| x - y)
    }
}

impl<T: Real> Mul<T> for &Field<T> {
    type Output = Field<T>;
    fn mul(self, rhs: T) -> Field<T> {
        self.scaled(rhs)
    }
}

impl<T: Real> Neg for &Field<T> {
    type Output = Field<T>;
    fn neg(self) -> Field<T> {
        self.map(|v| -v)
    }
}

impl<T: Real> AddAssign<&Field<T>> for Field<T> {
    fn add_assign(&mut self, rhs: &Field<T>) {
        self.axpy(T::one(), rhs);
    }
}

impl<T: Real> SubAssign<&Field<T>> for Field<T> {
    fn sub_assign(&mut self, rhs: &Field<T>) {
        self.axpy(-T::one(), rhs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(a: f64, b: f64, n: usize) -> Arc<TorusGrid<f64>> {
        TorusGrid::new(a, b, n, n).unwrap()
    }

    fn random_field(g: &Arc<TorusGrid<f64>>, seed: u64) -> Field<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Field::from_values(g, (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(matches!(
            TorusGrid::<f64>::new(1.0, 1.0, 7, 8),
            Err(GridError::OddResolution(7))
        ));
        assert!(matches!(
            TorusGrid::<f64>::new(1.0, 1.0, 2, 8),
            Err(GridError::TooCoarse(2))
        ));
        assert!(TorusGrid::<f64>::new(0.0, 1.0, 8, 8).is_err());
    }

    #[test]
    fn cell_areas_sum_to_domain_area() {
        let g = TorusGrid::<f64>::new(2.5, 0.7, 12, 20).unwrap();
        let total = g.cell_area() * g.len() as f64;
        assert!((total - 2.5 * 0.7).abs() <= 1e-12 * 2.5 * 0.7);
    }

    #[test]
    fn laplacian_multiplier_is_exact() {
        let g = TorusGrid::<f64>::new(1.5, 2.0, 8, 10).unwrap();
        let xi2 = g.wavenumbers_squared();
        // mode (m, n) = (-3, 4) at storage (5, 4)
        let expect = 4.0 * PI * PI * (9.0 / 2.25 + 16.0 / 4.0);
        assert!((xi2[4 * 8 + 5] - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn integral_examples() {
        let g = grid(1.0, 1.0, 16);
        assert!((Field::constant(&g, 1.0).integral() - 1.0).abs() < 1e-14);
        assert!(Field::cos_mode(&g, 1, 0).integral().abs() < 1e-12);
        let g2 = TorusGrid::<f64>::new(2.0, 1.0, 16, 8).unwrap();
        let f = Field::cos_mode(&g2, 1, 0).shifted(3.0);
        assert!((f.integral() - 6.0).abs() < 1e-10);
    }

    #[test]
    fn laplacian_examples() {
        let g = grid(1.0, 1.0, 16);
        assert!(Field::constant(&g, 2.3).laplacian().max_abs() < 1e-12);
        let f = Field::cos_mode(&g, 1, 0);
        let lap = f.laplacian();
        let err = (&lap - &f.scaled(-4.0 * PI * PI)).max_abs();
        assert!(err < 1e-10);

        let g2 = TorusGrid::new(1.0, 2.0, 8, 16).unwrap();
        let f = Field::sin_mode(&g2, 0, 1);
        let expect = Field::from_fn(&g2, |_, y| -PI * PI * (PI * y).sin());
        assert!((&f.laplacian() - &expect).max_abs() < 1e-10);
    }

    #[test]
    fn inverse_laplacian_examples() {
        let g = grid(1.0, 1.0, 16);
        assert!(Field::constant(&g, 5.0).inv_laplacian_zero_mean().max_abs() < 1e-14);
        let f = Field::cos_mode(&g, 1, 0);
        let inv = f.inv_laplacian_zero_mean();
        assert!((&inv - &f.scaled(1.0 / (4.0 * PI * PI))).max_abs() < 1e-12);

        let f = random_field(&g, 3);
        let gsol = f.inv_laplacian_zero_mean();
        let residual = &gsol.laplacian() + &f.zero_mean();
        assert!(residual.norm_l2() <= 1e-10 * f.norm_l2());
        assert!(gsol.is_zero_mean(1e-10));
    }

    #[test]
    fn norm_examples() {
        let g = grid(1.0, 1.0, 16);
        let one = Field::constant(&g, 1.0);
        for n in [one.norm_l2(), one.norm_v(), one.norm_vstar()] {
            assert!((n - 1.0).abs() < 1e-12);
        }
        // single-mode Parseval oracle: ∫cos² = 1/2, ∫|∇cos|² = 4π²/2
        let c = Field::cos_mode(&g, 1, 0);
        let expect = (0.5f64).sqrt() * (1.0 + 4.0 * PI * PI).sqrt();
        assert!((c.norm_v() - expect).abs() < 1e-12 * expect);
        let expect_dual = (0.5 / (1.0 + 4.0 * PI * PI)).sqrt();
        assert!((c.norm_vstar() - expect_dual).abs() < 1e-12);
    }

    #[test]
    fn parseval_on_random_fields() {
        let g = TorusGrid::new(1.3, 0.8, 16, 12).unwrap();
        for seed in 0..5 {
            let f = random_field(&g, seed);
            let physical = f.inner(&f);
            let spectral = g.spectral_quadratic(f.values(), |_| 1.0);
            assert!((physical - spectral).abs() <= 1e-10 * physical);
        }
    }

    #[test]
    fn grad_norm_matches_minus_f_laplacian() {
        let g = grid(1.0, 1.0, 16);
        let f = random_field(&g, 9);
        let via_lap = -f.inner(&f.laplacian());
        assert!((f.grad_norm_sq() - via_lap).abs() <= 1e-10 * via_lap);
    }

    #[test]
    fn dealiased_product_of_low_modes_is_exact() {
        let g = grid(1.0, 1.0, 8);
        let c = Field::cos_mode(&g, 1, 0);
        let s = Field::sin_mode(&g, 0, 1);
        let plain = c.product(&s, Dealias::Off);
        let dealiased = c.product(&s, Dealias::ThreeHalves);
        assert!((&plain - &dealiased).max_abs() < 1e-12);
        // cos(6πx)·cos(2πx) aliases on 8 points; the de-aliased product drops the k=8 harmonic
        let c3 = Field::cos_mode(&g, 3, 0);
        let d = c3.product(&c, Dealias::ThreeHalves);
        let expect = Field::cos_mode(&g, 2, 0).scaled(0.5);
        assert!((&d - &expect).max_abs() < 1e-12);
    }

    #[test]
    fn translation_round_trip() {
        let g = grid(1.0, 1.0, 16);
        let f = Field::cos_mode(&g, 1, 2);
        let t = f.translated(0.123, -0.31).translated(-0.123, 0.31);
        assert!((&t - &f).max_abs() < 1e-12);
    }

    #[test]
    fn single_precision_grid_works() {
        let g = TorusGrid::<f32>::new(1.0, 1.0, 16, 16).unwrap();
        let f = Field::cos_mode(&g, 1, 0);
        let err = (&f.laplacian() - &f.scaled(-4.0 * std::f32::consts::PI.powi(2))).max_abs();
        assert!(err < 1e-3);
    }
}
