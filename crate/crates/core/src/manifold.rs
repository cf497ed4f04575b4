//! Numerical Lyapunov–Schmidt reduction around a stationary `w*`.
//!
//! With `P` the L² projection onto `ker L`, the critical manifold is
//! `S = {w : (I − P) δE(w) = 0}`, parametrized near `w*` by kernel
//! coordinates `c ↦ w* + Σ cᵢφᵢ + g(c)` with `g(c) ⊥ ker L`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{energy_gap, first_variation_e};
use crate::initial::low_pass_noise;
use crate::krylov::minres;
use crate::linops::{spectrum, KernelProjector, LinearOperatorSpec, OperatorKind};
use crate::scalar::Real;
use crate::torus::Field;

#[derive(Clone, Debug)]
pub struct ChartOptions<T: Real> {
    /// Newton stops once `‖(I − P)δE‖₂` is below this.
    pub residual_tol: T,
    pub max_newton: usize,
    /// Eigenpairs of L computed to find the kernel.
    pub spectrum_k: usize,
    /// Starting radius of the adaptive search in kernel coordinates.
    pub initial_radius: T,
    pub min_radius: T,
}

impl<T: Real> Default for ChartOptions<T> {
    fn default() -> Self {
        Self {
            residual_tol: T::lit(1e-11),
            max_newton: 30,
            spectrum_k: 8,
            initial_radius: T::lit(1e-1),
            min_radius: T::lit(1e-6),
        }
    }
}

pub struct ManifoldChart<T: Real> {
    pub w_star: Field<T>,
    pub lambda: T,
    projector: KernelProjector<T>,
    radius: T,
    options: ChartOptions<T>,
    cache: Mutex<HashMap<Vec<u64>, Field<T>>>,
}

impl<T: Real> std::fmt::Debug for ManifoldChart<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManifoldChart")
            .field("lambda", &self.lambda)
            .field("kernel_dim", &self.projector.dim())
            .field("radius", &self.radius)
            .finish()
    }
}

impl<T: Real> ManifoldChart<T> {
    /// Chart with a given orthonormal kernel basis and radius.
    pub fn new(w_star: Field<T>, lambda: T, kernel_basis: Vec<Field<T>>, radius: T, options: ChartOptions<T>) -> Self {
        Self {
            w_star,
            lambda,
            projector: KernelProjector::new(kernel_basis),
            radius,
            options,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Computes `ker L` at `w*` and certifies a radius by halving from
    /// `initial_radius` until the probe coordinates all solve.
    pub fn build(w_star: &Field<T>, lambda: T, options: ChartOptions<T>) -> Result<Self> {
        let spec = LinearOperatorSpec::from_w(OperatorKind::L, w_star, lambda)?;
        let k = options.spectrum_k.min(w_star.grid().len());
        let report = spectrum(&spec, k)?;
        let radius = options.initial_radius;
        let mut chart = Self::new(w_star.clone(), lambda, report.kernel_basis, radius, options);
        chart.certify_radius()?;
        Ok(chart)
    }

    fn certify_radius(&mut self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Ok(());
        }
        let mut r = self.options.initial_radius;
        while r >= self.options.min_radius {
            self.radius = r;
            let mut probes: Vec<Vec<T>> = (0..n)
                .map(|i| (0..n).map(|j| if i == j { r } else { T::zero() }).collect())
                .collect();
            probes.push(vec![-r / T::lit_usize(n).sqrt(); n]);
            if probes.iter().all(|c| self.solve_g(c).is_ok()) {
                return Ok(());
            }
            self.cache.lock().expect("cache lock").clear();
            r *= T::lit(0.5);
        }
        Err(Error::ChartExceeded(format!(
            "no radius above {:e} admits a solution of the reduced equation",
            self.options.min_radius.as_f64()
        )))
    }

    pub fn dim(&self) -> usize {
        self.projector.dim()
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn kernel_basis(&self) -> &[Field<T>] {
        self.projector.basis()
    }

    pub fn projector(&self) -> &KernelProjector<T> {
        &self.projector
    }

    fn key(c: &[T]) -> Vec<u64> {
        c.iter().map(|x| x.as_f64().to_bits()).collect()
    }

    fn check_coords(&self, c: &[T]) -> Result<()> {
        if c.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} kernel coordinates, got {}",
                self.dim(),
                c.len()
            )));
        }
        let norm = c.iter().fold(T::zero(), |s, &x| s + x * x).sqrt();
        if norm > self.radius * (T::one() + T::lit(1e-12)) {
            return Err(Error::ChartExceeded(format!(
                "|c| = {:e} exceeds the chart radius {:e}",
                norm.as_f64(),
                self.radius.as_f64()
            )));
        }
        Ok(())
    }

    /// `‖(I − P) δE(w)‖₂`.
    pub fn residual(&self, w: &Field<T>) -> T {
        self.projector.complement(&first_variation_e(w, self.lambda)).norm_l2()
    }

    /// The correction `g(c) ⊥ ker L` with `(I − P)δE(w* + Σcᵢφᵢ + g(c)) = 0`.
    pub fn solve_g(&self, c: &[T]) -> Result<Field<T>> {
        self.check_coords(c)?;
        let key = Self::key(c);
        if let Some(g) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(g.clone());
        }
        let grid = self.w_star.grid();
        let base = &self.w_star + &self.projector.embed(grid, c);
        let proj = &self.projector;
        let mut g = Field::zeros(grid);
        let mut last = T::infinity();
        for _ in 0..self.options.max_newton {
            let w = &base + &g;
            let f = proj.complement(&first_variation_e(&w, self.lambda));
            let fnorm = f.norm_l2();
            if !fnorm.is_finite() || fnorm > T::lit(10.0) * last {
                break;
            }
            if fnorm <= self.options.residual_tol {
                self.cache.lock().expect("cache lock").insert(key, g.clone());
                return Ok(g);
            }
            last = fnorm;
            let u = w.exp();
            let shift = u.mean();
            let jac = |x: &Field<T>| {
                let y = proj.complement(x);
                let lap = y.laplacian();
                proj.complement(&Field::from_values(
                    grid,
                    lap.values()
                        .iter()
                        .zip(y.values())
                        .zip(u.values())
                        .map(|((&l, &yv), &uv)| -l - uv * yv)
                        .collect(),
                ))
            };
            let pre = |x: &Field<T>| proj.complement(&proj.complement(x).helmholtz_solve(shift, T::one()));
            let out = minres(jac, pre, &-&f, T::lit(1e-12), 600);
            g = proj.complement(&(&g + &out.solution));
        }
        Err(Error::ChartExceeded(format!(
            "Newton for the reduced equation failed at |c| = {:e}",
            c.iter().fold(T::zero(), |s, &x| s + x * x).sqrt().as_f64()
        )))
    }

    /// The manifold point with kernel coordinates `c`.
    pub fn point(&self, c: &[T]) -> Result<Field<T>> {
        let g = self.solve_g(c)?;
        Ok(&(&self.w_star + &self.projector.embed(self.w_star.grid(), c)) + &g)
    }

    /// Kernel coordinates of `w − w*`.
    pub fn coordinates(&self, w: &Field<T>) -> Vec<T> {
        self.projector.coordinates(&(w - &self.w_star))
    }

    /// `Qw = w* + P(w − w*) + g(P(w − w*))`.
    pub fn project_q(&self, w: &Field<T>) -> Result<Field<T>> {
        self.point(&self.coordinates(w))
    }

    /// `E(w* + Σcᵢφᵢ + g(c)) − E(w*)`.
    pub fn reduced_energy(&self, c: &[T]) -> Result<T> {
        Ok(energy_gap(&self.point(c)?, &self.w_star, self.lambda))
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Real")]
pub struct LemmaReport<T: Real> {
    pub radius: T,
    pub samples: usize,
    /// `max |E(w) − E(Qw)| / ‖w − Qw‖²_V`.
    pub energy_ratio_max: T,
    /// `max ‖w − Qw‖_V / ‖δE(w)‖_{V*}`.
    pub distance_ratio_max: T,
    /// `max ‖δE(Qw)‖_{V*} / ‖δE(w)‖_{V*}`.
    pub gradient_ratio_max: T,
    /// Samples whose `‖δE(Qw)‖_{V*}` fell below the noise floor and counted as 0.
    pub gradient_noise_hits: usize,
    pub all_finite: bool,
}

impl<T: Real> LemmaReport<T> {
    /// Factor by which each maximum changes from `self` to `finer`; `0/0` is `1`.
    pub fn growth(&self, finer: &Self) -> [T; 3] {
        let g = |coarse: T, fine: T| {
            if coarse == T::zero() && fine == T::zero() {
                T::one()
            } else {
                fine / coarse
            }
        };
        [
            g(self.energy_ratio_max, finer.energy_ratio_max),
            g(self.distance_ratio_max, finer.distance_ratio_max),
            g(self.gradient_ratio_max, finer.gradient_ratio_max),
        ]
    }
}

/// Evaluates the three chart inequalities on `samples` seeded perturbations
/// `w = w* + z` with `‖z‖_V = radius`.
pub fn verify_lemma_bounds<T: Real>(
    chart: &ManifoldChart<T>,
    radius: T,
    samples: usize,
    seed: u64,
) -> Result<LemmaReport<T>> {
    let lam = chart.lambda;
    let noise_floor = T::lit(1e-9);
    let grid = chart.w_star.grid();
    let (mut r3, mut r5, mut r6) = (T::zero(), T::zero(), T::zero());
    let mut hits = 0;
    let mut finite = true;
    for i in 0..samples {
        let z = low_pass_noise(grid, seed.wrapping_add(i as u64), 4, T::one());
        let z = z.scaled(radius / z.norm_v());
        let w = &chart.w_star + &z;
        let q = chart.project_q(&w)?;
        let diff = &w - &q;
        let dist_v = diff.norm_v();
        let grad_w = first_variation_e(&w, lam).norm_vstar();
        let grad_q = first_variation_e(&q, lam).norm_vstar();
        let e3 = if dist_v > T::zero() {
            energy_gap(&w, &q, lam).abs() / (dist_v * dist_v)
        } else {
            T::zero()
        };
        let e5 = dist_v / grad_w;
        let e6 = if grad_q <= noise_floor {
            hits += 1;
            T::zero()
        } else {
            grad_q / grad_w
        };
        finite &= e3.is_finite() && e5.is_finite() && e6.is_finite();
        r3 = r3.max(e3);
        r5 = r5.max(e5);
        r6 = r6.max(e6);
    }
    Ok(LemmaReport {
        radius,
        samples,
        energy_ratio_max: r3,
        distance_ratio_max: r5,
        gradient_ratio_max: r6,
        gradient_noise_hits: hits,
        all_finite: finite,
    })
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Real")]
pub struct ChartSummary<T: Real> {
    pub kernel_dim: usize,
    pub certified_radius: T,
    pub lambda: T,
}

impl<T: Real> ManifoldChart<T> {
    pub fn summary(&self) -> ChartSummary<T> {
        ChartSummary {
            kernel_dim: self.dim(),
            certified_radius: self.radius,
            lambda: self.lambda,
        }
    }
}

/// Shared, read-only chart handle for concurrent evaluation.
pub type SharedChart<T> = Arc<ManifoldChart<T>>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::TorusGrid;
    use std::f64::consts::PI;

    fn degenerate_chart() -> ManifoldChart<f64> {
        let g = TorusGrid::new(1.0, 2.0, 16, 32).unwrap();
        let lam = 2.0 * PI * PI;
        ManifoldChart::build(&Field::constant(&g, (PI * PI).ln()), lam, ChartOptions::default()).unwrap()
    }

    fn flagship_chart(n: usize) -> ManifoldChart<f64> {
        let g = TorusGrid::new(1.0, 1.0, n, n).unwrap();
        let lam = 8.0 * PI;
        ManifoldChart::build(&Field::constant(&g, lam.ln()), lam, ChartOptions::default()).unwrap()
    }

    #[test]
    fn degenerate_chart_has_two_dimensional_kernel() {
        let chart = degenerate_chart();
        assert_eq!(chart.dim(), 2);
        assert!(chart.radius() >= 1e-2);
        let g0 = chart.solve_g(&[0.0, 0.0]).unwrap();
        assert!(g0.max_abs() < 1e-10);
    }

    #[test]
    fn tangency_and_residual() {
        let chart = degenerate_chart();
        let mut prev = f64::INFINITY;
        for k in 0..5 {
            let r = 1e-2 * 0.5f64.powi(k);
            let c = [r * 0.6, r * 0.8];
            let g = chart.solve_g(&c).unwrap();
            let w = chart.point(&c).unwrap();
            assert!(chart.residual(&w) <= 1e-9);
            assert!(chart.projector().apply(&g).norm_l2() <= 1e-10);
            let ratio = g.norm_v() / r;
            assert!(ratio < prev, "k = {k}: {ratio} !< {prev}");
            prev = ratio;
        }
    }

    #[test]
    fn q_is_idempotent_and_splits_correctly() {
        let chart = degenerate_chart();
        let g = chart.w_star.grid().clone();
        for seed in 0..5 {
            let z = low_pass_noise(&g, seed, 3, 4e-3);
            let w = &chart.w_star + &z;
            let q = chart.project_q(&w).unwrap();
            let qq = chart.project_q(&q).unwrap();
            assert!((&qq - &q).norm_v() <= 1e-8);
            assert!(chart.projector().apply(&(&w - &q)).norm_l2() <= 1e-9);
        }
        let q = chart.project_q(&chart.w_star).unwrap();
        assert!((&q - &chart.w_star).max_abs() < 1e-10);
        // a point on S is fixed and has zero distance
        let s = chart.point(&[3e-3, -1e-3]).unwrap();
        assert!((&chart.project_q(&s).unwrap() - &s).norm_v() <= 1e-9);
    }

    #[test]
    fn coordinates_outside_radius_are_rejected() {
        let chart = degenerate_chart();
        let big = chart.radius() * 2.0;
        assert!(matches!(chart.solve_g(&[big, 0.0]), Err(Error::ChartExceeded(_))));
        assert!(matches!(chart.solve_g(&[0.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn reduced_energy_is_rotation_invariant() {
        let chart = degenerate_chart();
        assert_eq!(chart.reduced_energy(&[0.0, 0.0]).unwrap(), 0.0);
        let r = 8e-3;
        let e0 = chart.reduced_energy(&[r, 0.0]).unwrap();
        for alpha in [0.3, 1.1, 2.5, 4.0] {
            let e = chart
                .reduced_energy(&[r * f64::cos(alpha), r * f64::sin(alpha)])
                .unwrap();
            assert!((e - e0).abs() <= 1e-8 * (1.0 + e0.abs()), "{e} vs {e0}");
            assert!((e - e0).abs() <= 1e-4 * e0.abs(), "{e} vs {e0}");
        }
        // the energy is flat to second order along the kernel: quartic leading term
        let e1 = chart.reduced_energy(&[r / 2.0, 0.0]).unwrap();
        assert!(e0.abs() < 1e-6 && (e0 / e1).abs() > 8.0, "{e0} {e1}");
    }

    #[test]
    fn nondegenerate_chart_is_a_point() {
        let chart = flagship_chart(16);
        assert_eq!(chart.dim(), 0);
        assert!(chart.solve_g(&[]).unwrap().max_abs() < 1e-10);
        assert_eq!(chart.reduced_energy(&[]).unwrap(), 0.0);
        let w = &chart.w_star + &Field::cos_mode(chart.w_star.grid(), 1, 1).scaled(1e-3);
        assert!((&chart.project_q(&w).unwrap() - &chart.w_star).max_abs() < 1e-10);
    }

    #[test]
    fn lemma_bounds_near_nondegenerate_state() {
        let chart = flagship_chart(16);
        let a = verify_lemma_bounds(&chart, 1e-2, 30, 1).unwrap();
        let b = verify_lemma_bounds(&chart, 5e-3, 30, 1).unwrap();
        assert!(a.all_finite && b.all_finite);
        for g in a.growth(&b) {
            assert!(g < 2.0, "{g}");
        }
        assert!(a.distance_ratio_max > 0.0 && a.energy_ratio_max > 0.0);
    }

    #[test]
    fn lemma_bounds_on_the_manifold() {
        let chart = degenerate_chart();
        let s = chart.point(&[4e-3, 2e-3]).unwrap();
        let q = chart.project_q(&s).unwrap();
        assert!((&s - &q).norm_v() < 1e-9);
        let rep = verify_lemma_bounds(&chart, 5e-3, 10, 2).unwrap();
        assert!(rep.all_finite);
    }
}
