//! Stationary states: the mean-field equation
//! `−Δv = λ(e^v/∫e^v − 1/|Ω|)`, `∫v = 0`, solved by globalized Newton–MINRES,
//! and natural-parameter continuation in λ with degeneracy detection.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{first_variation_e, u_from_v, w_from_v};
use crate::initial::low_pass_noise;
use crate::krylov::minres;
use crate::linops::{kernel_threshold, spectrum, LinearOperatorSpec, OperatorKind};
use crate::scalar::Real;
use crate::torus::{Field, TorusGrid};

#[derive(Clone, Debug)]
pub struct NewtonOptions<T: Real> {
    /// Convergence when `‖R(v)‖₂ ≤ tol`.
    pub tol: T,
    pub max_iters: usize,
    pub max_halvings: usize,
    pub max_linear_iters: usize,
}

impl<T: Real> Default for NewtonOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-11),
            max_iters: 60,
            max_halvings: 20,
            max_linear_iters: 500,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Real")]
pub struct StationaryResult<T: Real> {
    #[serde(skip)]
    pub w_star: Field<T>,
    #[serde(skip)]
    pub v_star: Field<T>,
    #[serde(skip)]
    pub u_star: Field<T>,
    pub lambda: T,
    /// `‖δE(w*)‖₂`, which is also the residual of `−Δ log u* = u* − mean(u*)`.
    pub residual_l2: T,
    /// `‖R(v*)‖₂` of the mean-field form.
    pub mean_field_residual: T,
    pub newton_iters: usize,
    pub converged: bool,
}

impl<T: Real> StationaryResult<T> {
    pub fn from_v(v: Field<T>, lambda: T, iters: usize, converged: bool) -> Self {
        let w = w_from_v(&v, lambda);
        let residual_l2 = first_variation_e(&w, lambda).norm_l2();
        let mean_field_residual = mean_field_residual(&v, lambda).norm_l2();
        Self {
            u_star: w.exp(),
            w_star: w,
            v_star: v,
            lambda,
            residual_l2,
            mean_field_residual,
            newton_iters: iters,
            converged,
        }
    }

    /// The constant solution `v* = 0`, `u* = λ/|Ω|`.
    pub fn trivial(grid: &Arc<TorusGrid<T>>, lambda: T) -> Self {
        Self::from_v(Field::zeros(grid), lambda, 0, true)
    }
}

/// `R(v) = −Δv − λ(e^v/∫e^v − 1/|Ω|)`.
pub fn mean_field_residual<T: Real>(v: &Field<T>, lambda: T) -> Field<T> {
    let u = u_from_v(v, lambda);
    let c = lambda / v.grid().area();
    let lap = v.laplacian();
    Field::from_values(
        v.grid(),
        lap.values()
            .iter()
            .zip(u.values())
            .map(|(&l, &uv)| -l - uv + c)
            .collect(),
    )
}

pub fn solve_mean_field<T: Real>(v0: &Field<T>, lambda: T, tol: T) -> Result<StationaryResult<T>> {
    solve_mean_field_with(
        v0,
        lambda,
        &NewtonOptions {
            tol,
            ..NewtonOptions::default()
        },
    )
}

pub fn solve_mean_field_with<T: Real>(
    v0: &Field<T>,
    lambda: T,
    opts: &NewtonOptions<T>,
) -> Result<StationaryResult<T>> {
    if !(lambda > T::zero() && lambda.is_finite()) {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    if !v0.is_finite() {
        return Err(Error::InvalidArgument("initial guess is not finite".into()));
    }
    let mean = v0.mean();
    if mean.abs() > T::lit(1e-8) * v0.max_abs().max(T::one()) {
        return Err(Error::NotZeroMean { mean: mean.as_f64() });
    }
    let mut v = v0.zero_mean();
    let mut r = mean_field_residual(&v, lambda);
    let mut rn = r.norm_l2();
    for iter in 0..opts.max_iters {
        if rn <= opts.tol {
            return Ok(StationaryResult::from_v(v, lambda, iter, true));
        }
        let jac = LinearOperatorSpec::new(OperatorKind::B, u_from_v(&v, lambda), lambda)?;
        let eta = rn.min(T::lit(1e-2)).max(T::lit(1e-14));
        let rhs = -&r;
        let solve = minres(
            |x| jac.apply(x),
            |x| x.inv_laplacian_zero_mean(),
            &rhs,
            eta,
            opts.max_linear_iters,
        );
        if !solve.converged && solve.relative_residual > T::lit(0.5) {
            return Err(Error::SingularJacobian {
                lambda: lambda.as_f64(),
                relative_residual: solve.relative_residual.as_f64(),
            });
        }
        let step = solve.solution.zero_mean();
        let mut s = T::one();
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut trial = v.clone();
            trial.axpy(s, &step);
            let tr = mean_field_residual(&trial, lambda);
            let tn = tr.norm_l2();
            if tn.is_finite() && tn < (T::one() - T::lit(1e-4) * s) * rn {
                accepted = Some((trial, tr, tn));
                break;
            }
            s *= T::lit(0.5);
        }
        match accepted {
            Some((trial, tr, tn)) => {
                v = trial.zero_mean();
                r = tr;
                rn = tn;
            }
            None => {
                return Err(Error::NewtonDiverged {
                    iters: iter + 1,
                    residual: rn.as_f64(),
                })
            }
        }
    }
    if rn <= opts.tol {
        return Ok(StationaryResult::from_v(v, lambda, opts.max_iters, true));
    }
    Err(Error::NewtonDiverged {
        iters: opts.max_iters,
        residual: rn.as_f64(),
    })
}

/// Eigenvalue of the Jacobian (B at the solution) of smallest magnitude.
pub fn smallest_jacobian_eigenvalue<T: Real>(result: &StationaryResult<T>) -> Result<T> {
    let spec = LinearOperatorSpec::new(OperatorKind::B, result.u_star.clone(), result.lambda)?;
    let k = 8.min(result.u_star.grid().len() - 1);
    let report = spectrum(&spec, k)?;
    Ok(report
        .eigenvalues
        .iter()
        .copied()
        .fold(T::infinity(), |best, v| if v.abs() < best.abs() { v } else { best }))
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Real")]
pub struct BranchPoint<T: Real> {
    pub result: StationaryResult<T>,
    /// Signed eigenvalue of smallest magnitude; its absolute value is the
    /// smallest singular value of the symmetric Jacobian.
    pub jacobian_eigenvalue: T,
    pub min_singular_value: T,
    pub flag: bool,
    /// Inserted by bisection between two regular steps.
    pub refined: bool,
}

/// One JSON line of branch output.
#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Real")]
pub struct BranchRecord<T: Real> {
    pub lambda: T,
    pub residual: T,
    pub min_singular_value: T,
    pub flag: bool,
}

impl<T: Real> BranchPoint<T> {
    pub fn record(&self) -> BranchRecord<T> {
        BranchRecord {
            lambda: self.result.lambda,
            residual: self.result.residual_l2,
            min_singular_value: self.min_singular_value,
            flag: self.flag,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Branch<T: Real> {
    pub points: Vec<BranchPoint<T>>,
    /// Message of the error that ended the continuation early.
    pub failure: Option<String>,
}

impl<T: Real> Branch<T> {
    pub fn candidates(&self) -> Vec<T> {
        self.points.iter().filter(|p| p.flag).map(|p| p.result.lambda).collect()
    }
}

fn branch_point<T: Real>(result: StationaryResult<T>) -> Result<BranchPoint<T>> {
    let mu = smallest_jacobian_eigenvalue(&result)?;
    let threshold = kernel_threshold(result.lambda, result.u_star.grid().area());
    Ok(BranchPoint {
        min_singular_value: mu.abs(),
        flag: mu.abs() < threshold,
        jacobian_eigenvalue: mu,
        result,
        refined: false,
    })
}

fn bisect<T: Real>(
    left: &BranchPoint<T>,
    right: &BranchPoint<T>,
    opts: &NewtonOptions<T>,
) -> Result<Option<BranchPoint<T>>> {
    let mut lo = left.clone();
    let mut hi = right.clone();
    for _ in 0..80 {
        let lam = T::lit(0.5) * (lo.result.lambda + hi.result.lambda);
        if lam <= lo.result.lambda || lam >= hi.result.lambda {
            break;
        }
        let solved = solve_mean_field_with(&lo.result.v_star, lam, opts)?;
        let mut mid = branch_point(solved)?;
        mid.refined = true;
        if mid.flag {
            return Ok(Some(mid));
        }
        if (mid.jacobian_eigenvalue > T::zero()) == (lo.jacobian_eigenvalue > T::zero()) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(None)
}

/// Natural-parameter continuation from `start` to `lambda_end` in `steps`
/// equal increments. A sign change of the Jacobian's smallest eigenvalue
/// between steps is bisected until the smallest singular value drops below
/// `1e-6·(1 + λ/|Ω|)`; that λ is flagged.
pub fn continue_in_lambda<T: Real>(
    start: &StationaryResult<T>,
    lambda_end: T,
    steps: usize,
    opts: &NewtonOptions<T>,
) -> Result<Branch<T>> {
    if !start.converged {
        return Err(Error::InvalidArgument("continuation needs a converged start".into()));
    }
    if steps == 0 || !(lambda_end > T::zero()) {
        return Err(Error::InvalidArgument(
            "continuation needs steps ≥ 1 and lambda_end > 0".into(),
        ));
    }
    let lam0 = start.lambda;
    let dl = (lambda_end - lam0) / T::lit_usize(steps);
    let mut points = vec![branch_point(start.clone())?];
    let mut failure = None;
    for i in 1..=steps {
        let lam = if i == steps {
            lambda_end
        } else {
            lam0 + dl * T::lit_usize(i)
        };
        let prev = points.last().expect("start point").clone();
        let next = solve_mean_field_with(&prev.result.v_star, lam, opts).and_then(branch_point);
        let next = match next {
            Ok(p) => p,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let crossed = !prev.flag
            && !next.flag
            && (prev.jacobian_eigenvalue > T::zero()) != (next.jacobian_eigenvalue > T::zero());
        if crossed {
            match bisect(&prev, &next, opts) {
                Ok(Some(p)) => points.push(p),
                Ok(None) => {}
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        points.push(next);
    }
    Ok(Branch { points, failure })
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Real")]
pub struct UniquenessReport<T: Real> {
    pub lambda: T,
    pub starts: usize,
    pub converged: usize,
    /// Number of solutions pairwise farther apart than `1e-6` in L².
    pub distinct: usize,
    /// Largest `‖v*‖₂` among converged solves.
    pub max_norm: T,
    pub max_residual: T,
    pub statement: String,
    #[serde(skip)]
    pub solutions: Vec<StationaryResult<T>>,
}

/// Multi-start Newton from seeded zero-mean low-pass starts. Can only report
/// that no second solution was found; it proves nothing.
pub fn probe_uniqueness<T: Real>(
    grid: &Arc<TorusGrid<T>>,
    lambda: T,
    starts: usize,
    amplitude: T,
    seed: u64,
    opts: &NewtonOptions<T>,
) -> UniquenessReport<T> {
    let mut solutions: Vec<StationaryResult<T>> = Vec::new();
    for i in 0..starts {
        let v0 = low_pass_noise(grid, seed.wrapping_add(i as u64), 3, amplitude);
        if let Ok(s) = solve_mean_field_with(&v0, lambda, opts) {
            solutions.push(s);
        }
    }
    let mut reps: Vec<&Field<T>> = Vec::new();
    for s in &solutions {
        if reps.iter().all(|r| (&s.v_star - *r).norm_l2() > T::lit(1e-6)) {
            reps.push(&s.v_star);
        }
    }
    let distinct = reps.len();
    let max_norm = solutions.iter().fold(T::zero(), |m, s| m.max(s.v_star.norm_l2()));
    let max_residual = solutions.iter().fold(T::zero(), |m, s| m.max(s.mean_field_residual));
    let statement = if distinct <= 1 {
        format!("no second solution found among {starts} starts")
    } else {
        format!("{distinct} distinct solutions found among {starts} starts")
    };
    UniquenessReport {
        lambda,
        starts,
        converged: solutions.len(),
        distinct,
        max_norm,
        max_residual,
        statement,
        solutions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(a: f64, b: f64, n: usize) -> Arc<TorusGrid<f64>> {
        TorusGrid::new(a, b, n, (n as f64 * b / a) as usize).unwrap()
    }

    #[test]
    fn trivial_start_is_already_converged() {
        let g = grid(1.0, 1.0, 16);
        let r = solve_mean_field(&Field::zeros(&g), 5.0, 1e-11).unwrap();
        assert!(r.newton_iters <= 1 && r.converged);
        assert!((r.u_star.max() - 5.0).abs() < 1e-12 && (r.u_star.min() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn returns_to_zero_from_cosine() {
        let g = grid(1.0, 1.0, 32);
        let lam = 8.0 * PI;
        let v0 = Field::cos_mode(&g, 1, 0).scaled(0.3);
        let r = solve_mean_field(&v0, lam, 1e-11).unwrap();
        assert!(r.mean_field_residual <= 1e-11);
        assert!(r.v_star.max_abs() < 1e-10);
        assert!(r.residual_l2 <= 1e-10);
        assert!((r.u_star.integral() - lam).abs() <= 1e-10 * lam);
        assert!((&r.v_star - &r.w_star.zero_mean()).max_abs() < 1e-12);
    }

    #[test]
    fn rejects_non_zero_mean_start() {
        let g = grid(1.0, 1.0, 8);
        let err = solve_mean_field(&Field::constant(&g, 0.5), 1.0, 1e-11).unwrap_err();
        assert!(matches!(err, Error::NotZeroMean { .. }));
    }

    #[test]
    fn residual_forms_agree_on_random_state() {
        let g = grid(1.0, 2.0, 16);
        let v = low_pass_noise(&g, 1, 3, 0.4);
        let lam = 7.0;
        let w = w_from_v(&v, lam);
        let a = mean_field_residual(&v, lam);
        let b = first_variation_e(&w, lam);
        assert!((&a - &b).max_abs() < 1e-11);
    }

    #[test]
    fn non_trivial_solution_on_elongated_torus() {
        // beyond λ = 2π² the trivial state on 1×2 loses stability and a y-profile bifurcates
        let g = grid(1.0, 2.0, 16);
        let lam = 25.0;
        let v0 = Field::cos_mode(&g, 0, 1).scaled(1.0);
        let r = solve_mean_field(&v0, lam, 1e-11).unwrap();
        assert!(r.v_star.norm_l2() > 0.1);
        assert!(r.residual_l2 <= 1e-10);
        let mu = smallest_jacobian_eigenvalue(&r).unwrap();
        // the translation mode keeps one zero eigenvalue on the bifurcated branch
        assert!(mu.abs() < 1e-6 * (1.0 + lam / 2.0), "{mu}");
    }

    #[test]
    fn continuation_flags_degeneracy_on_elongated_torus() {
        let g = grid(1.0, 2.0, 16);
        let start = StationaryResult::trivial(&g, 1.0);
        let branch = continue_in_lambda(&start, 25.0, 12, &NewtonOptions::default()).unwrap();
        assert!(branch.failure.is_none());
        let flags = branch.candidates();
        assert_eq!(flags.len(), 1, "{flags:?}");
        assert!((flags[0] - 2.0 * PI * PI).abs() < 1e-4, "{}", flags[0]);
        for p in &branch.points {
            let c = p.result.lambda / 2.0;
            assert!((&p.result.u_star - &Field::constant(&g, c)).max_abs() <= 1e-12 * c);
        }
        let line = serde_json::to_string(&branch.points[0].record()).unwrap();
        assert!(line.contains("min_singular_value"));
    }

    #[test]
    fn continuation_without_flag_below_critical_mass() {
        let g = grid(1.0, 1.0, 16);
        let start = StationaryResult::trivial(&g, 1.0);
        let branch = continue_in_lambda(&start, 8.0 * PI, 8, &NewtonOptions::default()).unwrap();
        assert!(branch.candidates().is_empty());
        assert_eq!(branch.points.len(), 9);
    }

    #[test]
    fn uniqueness_probe_at_critical_mass() {
        let g = grid(1.0, 1.0, 16);
        let rep = probe_uniqueness(&g, 8.0 * PI, 5, 0.5, 3, &NewtonOptions::default());
        assert_eq!(rep.converged, 5);
        assert_eq!(rep.distinct, 1);
        assert!(rep.max_norm < 1e-9);
        assert!(rep.statement.contains("no second solution"));
    }
}
