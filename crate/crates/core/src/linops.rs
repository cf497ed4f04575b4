//! Linearized operators at a stationary state and their spectra.
//!
//! * `L = −Δ − e^{w*}` on the full space (second variation of `E`);
//! * `B φ = −Δφ − u*φ + (1/λ)(φ, u*) u*` on zero-mean fields (second
//!   variation of `J_λ`);
//! * `M = −Δ − u*`, used on the `u*`-orthogonal complement.
//!
//! Small grids are diagonalized densely. Larger ones use block shift-invert
//! subspace iteration with MINRES inner solves and Rayleigh–Ritz, which keeps
//! degenerate eigenvalues together.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::initial::low_pass_noise;
use crate::krylov::minres;
use crate::scalar::Real;
use crate::torus::{Field, TorusGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum OperatorKind {
    L,
    B,
    M,
}

impl std::str::FromStr for OperatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" | "l" => Ok(Self::L),
            "B" | "b" => Ok(Self::B),
            "M" | "m" => Ok(Self::M),
            other => Err(Error::InvalidArgument(format!(
                "unknown operator '{other}' (expected L, B or M)"
            ))),
        }
    }
}

/// Relative threshold below which an eigenvalue is counted as kernel.
pub fn kernel_threshold<T: Real>(lambda: T, area: T) -> T {
    T::lit(1e-6) * (T::one() + lambda / area)
}

#[derive(Clone, Debug)]
pub struct LinearOperatorSpec<T: Real> {
    pub kind: OperatorKind,
    /// Stationary density `u* = e^{w*}`.
    pub u_star: Field<T>,
    pub lambda: T,
}

impl<T: Real> LinearOperatorSpec<T> {
    pub fn new(kind: OperatorKind, u_star: Field<T>, lambda: T) -> Result<Self> {
        let min = u_star.min();
        if !(min > T::zero()) || !u_star.is_finite() {
            return Err(Error::NonPositiveDensity { min: min.as_f64() });
        }
        if !(lambda > T::zero()) {
            return Err(Error::InvalidArgument("lambda must be positive".into()));
        }
        Ok(Self { kind, u_star, lambda })
    }

    pub fn from_w(kind: OperatorKind, w_star: &Field<T>, lambda: T) -> Result<Self> {
        Self::new(kind, w_star.exp(), lambda)
    }

    pub fn grid(&self) -> &Arc<TorusGrid<T>> {
        self.u_star.grid()
    }

    pub fn on_zero_mean(&self) -> bool {
        self.kind == OperatorKind::B
    }

    pub fn apply(&self, phi: &Field<T>) -> Field<T> {
        let u = &self.u_star;
        match self.kind {
            OperatorKind::L | OperatorKind::M => {
                let lap = phi.laplacian();
                Field::from_values(
                    phi.grid(),
                    lap.values()
                        .iter()
                        .zip(phi.values())
                        .zip(u.values())
                        .map(|((&l, &p), &uv)| -l - uv * p)
                        .collect(),
                )
            }
            OperatorKind::B => {
                let p = phi.zero_mean();
                let coupling = p.inner(u) / self.lambda;
                let lap = p.laplacian();
                let out = Field::from_values(
                    phi.grid(),
                    lap.values()
                        .iter()
                        .zip(p.values())
                        .zip(u.values())
                        .map(|((&l, &pv), &uv)| -l - uv * pv + coupling * uv)
                        .collect(),
                );
                out.zero_mean()
            }
        }
    }

    /// A value strictly below the spectrum (`(φ, u*)²/λ ≥ 0` keeps B above M).
    fn lower_bound(&self) -> T {
        -self.u_star.max() - T::one()
    }
}

#[derive(Clone, Debug)]
pub struct SpectrumOptions<T: Real> {
    /// Grids with at most this many nodes are diagonalized densely.
    pub dense_max_nodes: usize,
    /// Residual target `‖Aφ − μφ‖₂ ≤ tol·(1 + |μ|)` of the iterative solver.
    pub tol: T,
    pub max_iter: usize,
    pub seed: u64,
}

impl<T: Real> Default for SpectrumOptions<T> {
    fn default() -> Self {
        Self {
            dense_max_nodes: 1024,
            tol: T::lit(1e-10),
            max_iter: 400,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    Dense,
    SubspaceIteration,
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Real")]
pub struct SpectrumReport<T: Real> {
    pub kind: OperatorKind,
    pub lambda: T,
    pub eigenvalues: Vec<T>,
    #[serde(skip)]
    pub eigenfields: Vec<Field<T>>,
    pub kernel_dim: usize,
    #[serde(skip)]
    pub kernel_basis: Vec<Field<T>>,
    pub nondegenerate: bool,
    pub smallest_abs_eigenvalue: T,
    pub kernel_threshold: T,
    pub max_residual: T,
    pub method: EigenMethod,
}

/// Modified Gram–Schmidt (two passes) in L². Vectors that collapse are dropped.
pub fn orthonormalize<T: Real>(fields: Vec<Field<T>>) -> Vec<Field<T>> {
    let mut out: Vec<Field<T>> = Vec::with_capacity(fields.len());
    for mut f in fields {
        let before = f.norm_l2();
        for _ in 0..2 {
            for q in &out {
                let c = f.inner(q);
                f.axpy(-c, q);
            }
        }
        let n = f.norm_l2();
        if n > T::lit(1e-10) * before && n > T::zero() {
            out.push(f.scaled(T::one() / n));
        }
    }
    out
}

fn dense_eigenpairs<T: Real>(spec: &LinearOperatorSpec<T>, count: usize) -> (Vec<T>, Vec<Field<T>>) {
    let grid = spec.grid();
    let n = grid.len();
    let inv_n = T::one() / T::lit_usize(n);
    // B lives on V₀: park the constant direction far below the spectrum
    let shift = T::lit(10.0) * spec.lower_bound();
    let mut matrix = vec![T::zero(); n * n];
    let mut unit = Field::zeros(grid);
    for j in 0..n {
        unit.values_mut()[j] = T::one();
        let col = spec.apply(&unit);
        let dst = &mut matrix[j * n..(j + 1) * n];
        dst.copy_from_slice(col.values());
        if spec.on_zero_mean() {
            for v in dst.iter_mut() {
                *v += shift * inv_n;
            }
        }
        unit.values_mut()[j] = T::zero();
    }
    for j in 0..n {
        for i in (j + 1)..n {
            let s = T::lit(0.5) * (matrix[j * n + i] + matrix[i * n + j]);
            matrix[j * n + i] = s;
            matrix[i * n + j] = s;
        }
    }
    let (values, vectors) = T::symmetric_eigen(n, matrix);
    let skip = usize::from(spec.on_zero_mean());
    let scale = T::one() / grid.cell_area().sqrt();
    let take = count.min(n - skip);
    let fields = (skip..skip + take)
        .map(|c| {
            let v = vectors[c * n..(c + 1) * n].iter().map(|&x| x * scale).collect();
            Field::from_values(grid, v)
        })
        .collect();
    (values[skip..skip + take].to_vec(), fields)
}

fn starting_block<T: Real>(spec: &LinearOperatorSpec<T>, size: usize, seed: u64) -> Vec<Field<T>> {
    let grid = spec.grid();
    let (a, b) = (grid.a(), grid.b());
    let mut modes: Vec<(T, i64, i64)> = Vec::new();
    let reach = (size as f64).sqrt().ceil() as i64 + 2;
    for m in 0..=reach {
        for n in -reach..=reach {
            if m == 0 && n < 0 {
                continue;
            }
            let k2 = (T::lit(m as f64) / a).powi(2) + (T::lit(n as f64) / b).powi(2);
            modes.push((k2, m, n));
        }
    }
    modes.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut block = Vec::with_capacity(size);
    for (i, &(_, m, n)) in modes.iter().enumerate() {
        if block.len() >= size {
            break;
        }
        let noise = low_pass_noise(grid, seed.wrapping_add(i as u64), 4, T::lit(0.05));
        if m == 0 && n == 0 {
            if !spec.on_zero_mean() {
                block.push(&Field::constant(grid, T::one()) + &noise);
            }
            continue;
        }
        block.push(&Field::cos_mode(grid, m, n) + &noise);
        if block.len() < size {
            block.push(&Field::sin_mode(grid, m, n) + &noise.scaled(-T::one()));
        }
    }
    block
}

fn subspace_eigenpairs<T: Real>(
    spec: &LinearOperatorSpec<T>,
    count: usize,
    opts: &SpectrumOptions<T>,
) -> Result<(Vec<T>, Vec<Field<T>>)> {
    let grid = spec.grid();
    let size = (count + (count / 2).max(4)).min(grid.len() - 1);
    let sigma = spec.lower_bound();
    let pre_shift = -sigma - spec.u_star.mean();
    let project = |f: Field<T>| if spec.on_zero_mean() { f.zero_mean() } else { f };
    let shifted = |x: &Field<T>| {
        let mut y = spec.apply(x);
        y.axpy(-sigma, x);
        y
    };
    let precond = |x: &Field<T>| project(x.helmholtz_solve(pre_shift, T::one()));

    let mut basis = orthonormalize(starting_block(spec, size, opts.seed).into_iter().map(project).collect());
    let mut worst = T::infinity();
    for _ in 0..opts.max_iter {
        let images: Vec<Field<T>> = basis.iter().map(|x| spec.apply(x)).collect();
        let p = basis.len();
        let mut h = vec![T::zero(); p * p];
        for j in 0..p {
            for i in 0..=j {
                let v = T::lit(0.5) * (basis[i].inner(&images[j]) + basis[j].inner(&images[i]));
                h[j * p + i] = v;
                h[i * p + j] = v;
            }
        }
        let (theta, vecs) = T::symmetric_eigen(p, h);
        let combine = |src: &[Field<T>], col: usize| {
            let mut f = Field::zeros(grid);
            for (i, s) in src.iter().enumerate() {
                f.axpy(vecs[col * p + i], s);
            }
            f
        };
        let ritz: Vec<Field<T>> = (0..p).map(|c| combine(&basis, c)).collect();
        let ritz_images: Vec<Field<T>> = (0..p).map(|c| combine(&images, c)).collect();
        worst = T::zero();
        for c in 0..count.min(p) {
            let mut r = ritz_images[c].clone();
            r.axpy(-theta[c], &ritz[c]);
            worst = worst.max(r.norm_l2() / (T::one() + theta[c].abs()));
        }
        if worst <= opts.tol {
            return Ok((theta[..count.min(p)].to_vec(), ritz.into_iter().take(count).collect()));
        }
        let next: Vec<Field<T>> = ritz
            .iter()
            .map(|x| project(minres(&shifted, &precond, x, T::lit(1e-12), 500).solution))
            .collect();
        basis = orthonormalize(next);
        if basis.len() < count {
            break;
        }
    }
    Err(Error::EigsNotConverged {
        iters: opts.max_iter,
        residual: worst.as_f64(),
    })
}

pub fn spectrum<T: Real>(spec: &LinearOperatorSpec<T>, k: usize) -> Result<SpectrumReport<T>> {
    spectrum_with(spec, k, &SpectrumOptions::default())
}

/// The `k` lowest eigenpairs. If the kernel fills all `k` slots the request is
/// enlarged until it is resolved.
pub fn spectrum_with<T: Real>(
    spec: &LinearOperatorSpec<T>,
    k: usize,
    opts: &SpectrumOptions<T>,
) -> Result<SpectrumReport<T>> {
    let grid = spec.grid();
    let available = grid.len() - usize::from(spec.on_zero_mean());
    if k == 0 || k > available {
        return Err(Error::InvalidArgument(format!(
            "requested {k} eigenpairs, grid supports 1..={available}"
        )));
    }
    let threshold = kernel_threshold(spec.lambda, grid.area());
    let dense = grid.len() <= opts.dense_max_nodes;
    let mut want = k;
    let (values, fields) = loop {
        let (values, fields) = if dense {
            dense_eigenpairs(spec, want)
        } else {
            subspace_eigenpairs(spec, want, opts)?
        };
        let saturated = values.last().is_some_and(|v| v.abs() < threshold);
        if saturated && want < available {
            want = (want * 2).min(available);
            continue;
        }
        break (values, fields);
    };

    let mut max_residual = T::zero();
    for (mu, f) in values.iter().zip(&fields) {
        let mut r = spec.apply(f);
        r.axpy(-*mu, f);
        max_residual = max_residual.max(r.norm_l2() / (T::one() + mu.abs()));
    }
    if !(max_residual <= T::lit(1e-7)) {
        return Err(Error::EigsNotConverged {
            iters: 0,
            residual: max_residual.as_f64(),
        });
    }

    let kernel: Vec<Field<T>> = values
        .iter()
        .zip(&fields)
        .filter(|(mu, _)| mu.abs() < threshold)
        .map(|(_, f)| f.clone())
        .collect();
    let kernel_basis = orthonormalize(kernel);
    let smallest = values.iter().fold(T::infinity(), |m, v| m.min(v.abs()));
    Ok(SpectrumReport {
        kind: spec.kind,
        lambda: spec.lambda,
        kernel_dim: kernel_basis.len(),
        nondegenerate: kernel_basis.is_empty(),
        eigenvalues: values,
        eigenfields: fields,
        kernel_basis,
        smallest_abs_eigenvalue: smallest,
        kernel_threshold: threshold,
        max_residual,
        method: if dense {
            EigenMethod::Dense
        } else {
            EigenMethod::SubspaceIteration
        },
    })
}

/// Orthogonal L² projection onto the span of an orthonormal basis.
#[derive(Clone, Debug)]
pub struct KernelProjector<T: Real> {
    basis: Vec<Field<T>>,
}

impl<T: Real> KernelProjector<T> {
    pub fn new(basis: Vec<Field<T>>) -> Self {
        Self { basis }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Field<T>] {
        &self.basis
    }

    pub fn coordinates(&self, f: &Field<T>) -> Vec<T> {
        self.basis.iter().map(|phi| f.inner(phi)).collect()
    }

    /// `Σ cᵢ φᵢ`.
    pub fn embed(&self, grid: &Arc<TorusGrid<T>>, coords: &[T]) -> Field<T> {
        let mut out = Field::zeros(grid);
        for (c, phi) in coords.iter().zip(&self.basis) {
            out.axpy(*c, phi);
        }
        out
    }

    pub fn apply(&self, f: &Field<T>) -> Field<T> {
        self.embed(f.grid(), &self.coordinates(f))
    }

    /// `(I − P) f`.
    pub fn complement(&self, f: &Field<T>) -> Field<T> {
        let mut out = f.clone();
        for phi in &self.basis {
            let c = f.inner(phi);
            out.axpy(-c, phi);
        }
        out
    }
}

pub fn projector_p<T: Real>(kernel_basis: &[Field<T>], f: &Field<T>) -> Field<T> {
    let mut out = Field::zeros(f.grid());
    for phi in kernel_basis {
        out.axpy(f.inner(phi), phi);
    }
    out
}

/// `ψ = φ − (1/λ)∫u*φ`: a B-kernel element becomes a solution of
/// `−Δψ = u*ψ`, `∫ψu* = 0`.
pub fn witness_from_kernel<T: Real>(phi: &Field<T>, u_star: &Field<T>, lambda: T) -> Field<T> {
    phi.shifted(-phi.inner(u_star) / lambda)
}

/// Inverse of [`witness_from_kernel`]: `φ = ψ − mean(ψ)`.
pub fn kernel_from_witness<T: Real>(psi: &Field<T>) -> Field<T> {
    psi.zero_mean()
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Real")]
pub struct NondegeneracyReport<T: Real> {
    pub nondegenerate: bool,
    pub kernel_dim: usize,
    pub smallest_abs_eigenvalue: T,
    pub lowest_eigenvalue: T,
    #[serde(skip)]
    pub witnesses: Vec<Field<T>>,
    /// Largest `‖−Δψ − u*ψ‖₂` over the witnesses.
    pub witness_residual: T,
    /// Largest `|∫ψu*|`.
    pub witness_orthogonality: T,
    /// Largest `‖(ψ − mean ψ) − φ‖₂`.
    pub roundtrip_error: T,
}

/// Decides whether `−Δψ = u*ψ`, `∫ψu* = 0` forces `ψ = 0`, via the kernel of B.
pub fn nondegeneracy_check<T: Real>(u_star: &Field<T>, lambda: T) -> Result<NondegeneracyReport<T>> {
    let spec = LinearOperatorSpec::new(OperatorKind::B, u_star.clone(), lambda)?;
    let k = 8.min(u_star.grid().len() - 1);
    let report = spectrum(&spec, k)?;
    let mut witnesses = Vec::new();
    let (mut res, mut orth, mut trip) = (T::zero(), T::zero(), T::zero());
    for phi in &report.kernel_basis {
        let psi = witness_from_kernel(phi, u_star, lambda);
        let m = &-&psi.laplacian() - &u_star.zip_map(&psi, |u, p| u * p);
        res = res.max(m.norm_l2());
        orth = orth.max(psi.inner(u_star).abs());
        trip = trip.max((&kernel_from_witness(&psi) - phi).norm_l2());
        witnesses.push(psi);
    }
    Ok(NondegeneracyReport {
        nondegenerate: report.nondegenerate,
        kernel_dim: report.kernel_dim,
        smallest_abs_eigenvalue: report.smallest_abs_eigenvalue,
        lowest_eigenvalue: report.eigenvalues[0],
        witnesses,
        witness_residual: res,
        witness_orthogonality: orth,
        roundtrip_error: trip,
    })
}

/// Estimate of the best `C` in `‖φ‖_V ≤ C‖Mφ‖_{V*}` on `∫u*φ = 0`, from the
/// low B-eigenbasis mapped to witnesses and from random low-pass samples.
pub fn m_coercivity_constant<T: Real>(u_star: &Field<T>, lambda: T, samples: usize, seed: u64) -> Result<T> {
    let spec_b = LinearOperatorSpec::new(OperatorKind::B, u_star.clone(), lambda)?;
    let spec_m = LinearOperatorSpec::new(OperatorKind::M, u_star.clone(), lambda)?;
    let mass = u_star.integral();
    let k = 8.min(u_star.grid().len() - 1);
    let report = spectrum(&spec_b, k)?;
    let ratio = |psi: &Field<T>| psi.norm_v() / spec_m.apply(psi).norm_vstar();
    let mut best = T::zero();
    for phi in &report.eigenfields {
        best = best.max(ratio(&witness_from_kernel(phi, u_star, lambda)));
    }
    for i in 0..samples {
        let f = low_pass_noise(u_star.grid(), seed.wrapping_add(i as u64), 4, T::one());
        let psi = f.shifted(-f.inner(u_star) / mass);
        best = best.max(ratio(&psi));
    }
    if !(best <= T::lit(1e8)) {
        return Err(Error::DegenerateState {
            estimate: best.as_f64(),
        });
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{energy_e, energy_j};
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn trivial(kind: OperatorKind, a: f64, b: f64, nx: usize, ny: usize, lam: f64) -> LinearOperatorSpec<f64> {
        let g = TorusGrid::new(a, b, nx, ny).unwrap();
        LinearOperatorSpec::new(kind, Field::constant(&g, lam / (a * b)), lam).unwrap()
    }

    fn random_field(g: &Arc<TorusGrid<f64>>, seed: u64) -> Field<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Field::from_values(g, (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn l_on_fourier_mode() {
        let s = trivial(OperatorKind::L, 1.5, 1.0, 16, 16, 5.0);
        let phi = Field::cos_mode(s.grid(), 1, 0);
        let expect = phi.scaled(4.0 * PI * PI / 2.25 - 5.0 / 1.5);
        assert!((&s.apply(&phi) - &expect).max_abs() < 1e-10);
    }

    #[test]
    fn b_reduces_on_zero_mean_at_constant_state() {
        let s = trivial(OperatorKind::B, 1.0, 1.0, 16, 16, 8.0 * PI);
        let phi = random_field(s.grid(), 2).zero_mean();
        let expect = &-&phi.laplacian() - &phi.scaled(8.0 * PI);
        assert!((&s.apply(&phi) - &expect).max_abs() < 1e-9);
    }

    #[test]
    fn m_is_self_adjoint() {
        let g = TorusGrid::new(1.0, 2.0, 16, 32).unwrap();
        let u = Field::from_fn(&g, |x, y| 3.0 + (2.0 * PI * x).sin() * (PI * y).cos());
        let s = LinearOperatorSpec::new(OperatorKind::M, u, 6.0).unwrap();
        let (f, h) = (random_field(&g, 3), random_field(&g, 4));
        let lhs = s.apply(&f).inner(&h);
        let rhs = f.inner(&s.apply(&h));
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs());
    }

    #[test]
    fn rejects_non_positive_density() {
        let g = TorusGrid::new(1.0, 1.0, 8, 8).unwrap();
        assert!(LinearOperatorSpec::new(OperatorKind::M, Field::zeros(&g), 1.0).is_err());
    }

    fn fourier_eigs(a: f64, b: f64, nx: usize, ny: usize, shift: f64, with_zero: bool) -> Vec<f64> {
        let mut v = Vec::new();
        for ix in 0..nx {
            for iy in 0..ny {
                let m = crate::torus::frequency(ix, nx) as f64;
                let n = crate::torus::frequency(iy, ny) as f64;
                if m == 0.0 && n == 0.0 && !with_zero {
                    continue;
                }
                v.push(4.0 * PI * PI * ((m / a).powi(2) + (n / b).powi(2)) - shift);
            }
        }
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn dense_b_spectrum_matches_fourier() {
        let s = trivial(OperatorKind::B, 1.0, 1.0, 16, 16, 8.0 * PI);
        let rep = spectrum(&s, 12).unwrap();
        assert_eq!(rep.method, EigenMethod::Dense);
        let expect = fourier_eigs(1.0, 1.0, 16, 16, 8.0 * PI, false);
        for (got, want) in rep.eigenvalues.iter().zip(&expect) {
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
        }
        assert!((rep.eigenvalues[0] - (4.0 * PI * PI - 8.0 * PI)).abs() < 1e-6);
        assert!(rep.nondegenerate && rep.kernel_dim == 0);
        for f in &rep.eigenfields {
            assert!(f.mean().abs() < 1e-10);
            assert!((f.norm_l2() - 1.0).abs() < 1e-10);
        }
        assert!(rep.eigenfields[0].inner(&rep.eigenfields[1]).abs() < 1e-10);
    }

    #[test]
    fn l_spectrum_has_constant_mode_below_zero() {
        let lam = 8.0 * PI;
        let s = trivial(OperatorKind::L, 1.0, 1.0, 16, 16, lam);
        let rep = spectrum(&s, 5).unwrap();
        assert!((rep.eigenvalues[0] + lam).abs() < 1e-9);
        let c = &rep.eigenfields[0];
        assert!((c.max() - c.min()).abs() < 1e-9);
    }

    #[test]
    fn degenerate_kernel_dense_and_iterative() {
        let lam = 2.0 * PI * PI;
        let s = trivial(OperatorKind::B, 1.0, 2.0, 16, 32, lam);
        let dense = spectrum(&s, 6).unwrap();
        let opts = SpectrumOptions {
            dense_max_nodes: 0,
            ..SpectrumOptions::default()
        };
        let iter = spectrum_with(&s, 6, &opts).unwrap();
        assert_eq!(iter.method, EigenMethod::SubspaceIteration);
        for rep in [&dense, &iter] {
            assert_eq!(rep.kernel_dim, 2);
            assert!(!rep.nondegenerate);
            let target = [Field::cos_mode(s.grid(), 0, 1), Field::sin_mode(s.grid(), 0, 1)];
            for phi in &rep.kernel_basis {
                let captured: f64 = target.iter().map(|t| phi.inner(t).powi(2) / t.inner(t)).sum();
                assert!((captured - 1.0).abs() < 1e-8, "{captured}");
            }
        }
        let expect = fourier_eigs(1.0, 2.0, 16, 32, PI * PI, false);
        for (got, want) in iter.eigenvalues.iter().zip(&expect) {
            assert!((got - want).abs() <= 1e-8 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn iterative_matches_dense_on_variable_density() {
        let g = TorusGrid::new(1.0, 1.0, 16, 16).unwrap();
        let u = Field::from_fn(&g, |x, y| {
            8.0 * PI * (1.0 + 0.3 * (2.0 * PI * x).cos() * (2.0 * PI * y).sin())
        });
        let s = LinearOperatorSpec::new(OperatorKind::L, u, 8.0 * PI).unwrap();
        let dense = spectrum(&s, 6).unwrap();
        let opts = SpectrumOptions {
            dense_max_nodes: 0,
            ..SpectrumOptions::default()
        };
        let iter = spectrum_with(&s, 6, &opts).unwrap();
        for (a, b) in dense.eigenvalues.iter().zip(&iter.eigenvalues) {
            assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn nondegeneracy_verdicts() {
        let g = TorusGrid::new(1.0, 1.0, 16, 16).unwrap();
        let v = nondegeneracy_check(&Field::constant(&g, 8.0 * PI), 8.0 * PI).unwrap();
        assert!(v.nondegenerate && v.witnesses.is_empty());

        let g = TorusGrid::new(1.0, 2.0, 16, 32).unwrap();
        let u = Field::constant(&g, PI * PI);
        let v = nondegeneracy_check(&u, 2.0 * PI * PI).unwrap();
        assert!(!v.nondegenerate);
        assert_eq!(v.witnesses.len(), 2);
        assert!(v.witness_residual <= 1e-7);
        assert!(v.witness_orthogonality <= 1e-8);
        assert!(v.roundtrip_error <= 1e-10);
    }

    #[test]
    fn witness_map_roundtrip_on_non_constant_density() {
        let g = TorusGrid::new(1.0, 1.0, 16, 16).unwrap();
        let u = Field::from_fn(&g, |x, _| 2.0 + (2.0 * PI * x).cos());
        let lam = u.integral();
        let phi = random_field(&g, 9).zero_mean();
        let psi = witness_from_kernel(&phi, &u, lam);
        assert!(psi.inner(&u).abs() < 1e-12);
        assert!((&kernel_from_witness(&psi) - &phi).max_abs() < 1e-12);
        // the two operator forms agree: Bφ = Mψ
        let b = LinearOperatorSpec::new(OperatorKind::B, u.clone(), lam).unwrap();
        let m = LinearOperatorSpec::new(OperatorKind::M, u, lam).unwrap();
        assert!((&b.apply(&phi) - &m.apply(&psi).zero_mean()).max_abs() < 1e-10);
    }

    #[test]
    fn projector_algebra() {
        let g = TorusGrid::new(1.0, 1.0, 16, 16).unwrap();
        let f = random_field(&g, 5);
        let h = random_field(&g, 6);
        assert!(projector_p(&[], &f).max_abs() == 0.0);
        let basis = orthonormalize(vec![
            Field::cos_mode(&g, 1, 0),
            Field::sin_mode(&g, 0, 2),
            random_field(&g, 7),
        ]);
        let p = KernelProjector::new(basis.clone());
        let pf = p.apply(&f);
        assert!((&p.apply(&pf) - &pf).max_abs() < 1e-12);
        assert!((pf.inner(&h) - f.inner(&p.apply(&h))).abs() < 1e-12);
        let inside = &basis[0].scaled(2.0) + &basis[2];
        assert!((&p.apply(&inside) - &inside).max_abs() < 1e-10);
        assert!((&(&p.complement(&f) + &pf) - &f).max_abs() < 1e-12);
        assert!((&projector_p(&basis, &f) - &pf).max_abs() < 1e-14);
    }

    #[test]
    fn coercivity_constant() {
        let g = TorusGrid::new(1.0, 1.0, 16, 16).unwrap();
        let lam = 8.0 * PI;
        let c = m_coercivity_constant(&Field::constant(&g, lam), lam, 20, 1).unwrap();
        let mu = 4.0 * PI * PI;
        let expect = (1.0 + mu) / (mu - lam);
        assert!((c - expect).abs() < 1e-8 * expect, "{c} vs {expect}");

        let g = TorusGrid::new(1.0, 2.0, 16, 32).unwrap();
        let err = m_coercivity_constant(&Field::constant(&g, PI * PI), 2.0 * PI * PI, 5, 1).unwrap_err();
        assert!(matches!(err, Error::DegenerateState { .. }));
    }

    #[test]
    fn coercivity_ratio_is_homogeneous() {
        let g = TorusGrid::new(1.0, 1.0, 16, 16).unwrap();
        let u = Field::constant(&g, 8.0 * PI);
        let m = LinearOperatorSpec::new(OperatorKind::M, u, 8.0 * PI).unwrap();
        let f = random_field(&g, 11).zero_mean();
        let r1 = f.norm_v() / m.apply(&f).norm_vstar();
        let f2 = f.scaled(2.0);
        let r2 = f2.norm_v() / m.apply(&f2).norm_vstar();
        assert!((r1 - r2).abs() < 1e-12 * r1);
    }

    #[test]
    fn quadratic_forms_match_second_differences() {
        let g = TorusGrid::new(1.0, 1.0, 16, 16).unwrap();
        let lam = 8.0 * PI;
        let phi = low_pass_noise(&g, 3, 3, 1.0);
        // B against J at v* = 0
        let b = trivial(OperatorKind::B, 1.0, 1.0, 16, 16, lam);
        let exact = b.apply(&phi).inner(&phi);
        let zero = Field::zeros(&g);
        let mut errs = Vec::new();
        for h in [1e-2, 5e-3] {
            let jp = energy_j(&phi.scaled(h), lam).unwrap();
            let jm = energy_j(&phi.scaled(-h), lam).unwrap();
            let j0 = energy_j(&zero, lam).unwrap();
            errs.push(((jp - 2.0 * j0 + jm) / (h * h) - exact).abs());
        }
        assert!(errs[1] < errs[0] / 3.0 && errs[0] < 1e-2 * exact.abs());
        // L against E at w* = log λ
        let l = trivial(OperatorKind::L, 1.0, 1.0, 16, 16, lam);
        let ws = Field::constant(&g, lam.ln());
        let exact = l.apply(&phi).inner(&phi);
        let h = 1e-3;
        let second = (energy_e(&(&ws + &phi.scaled(h)), lam) - 2.0 * energy_e(&ws, lam)
            + energy_e(&(&ws - &phi.scaled(h)), lam))
            / (h * h);
        assert!((second - exact).abs() < 1e-3 * exact.abs());
    }

    #[test]
    fn oversized_request_is_an_error() {
        let s = trivial(OperatorKind::B, 1.0, 1.0, 4, 4, 1.0);
        assert!(spectrum(&s, 16).is_err());
        assert!(spectrum(&s, 15).is_ok());
    }
}
