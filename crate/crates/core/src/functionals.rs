//! Energies of the flow and the changes of variables between the density
//! `u`, its logarithm `w = log u` and the zero-mean potential `v`.
//!
//! * `E(w) = ∫ ½|∇w|² − e^w + (λ/|Ω|) w`, with `δE(w) = −Δw − e^w + λ/|Ω|`
//! * `F(u) = ∫ u(log u − 1) + ½ ∫ u Δ⁻¹u`
//! * `J_λ(v) = ½‖∇v‖₂² − λ log ∫ e^v` on zero-mean `v`

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::torus::Field;

pub fn energy_e<T: Real>(w: &Field<T>, lambda: T) -> T {
    let area = w.grid().area();
    T::lit(0.5) * w.grad_norm_sq() - w.exp().integral() + lambda / area * w.integral()
}

pub fn first_variation_e<T: Real>(w: &Field<T>, lambda: T) -> Field<T> {
    let c = lambda / w.grid().area();
    w.laplacian().zip_map(w, |lap, wv| -lap - wv.exp() + c)
}

/// `e^z − 1 − z` without cancellation for small `z`.
pub fn exp_m1_minus_x<T: Real>(z: T) -> T {
    if z.abs() < T::lit(0.5) {
        let mut term = z * z * T::lit(0.5);
        let mut sum = term;
        let mut k = 3usize;
        while term.abs() > T::epsilon() * sum.abs() && k < 40 {
            term = term * z / T::lit_usize(k);
            sum += term;
            k += 1;
        }
        sum
    } else {
        z.exp_m1() - z
    }
}

/// `E(w) − E(w*)` evaluated through the increment `z = w − w*`, which keeps
/// full relative precision when the gap is far below the size of `E` itself.
pub fn energy_gap<T: Real>(w: &Field<T>, w_star: &Field<T>, lambda: T) -> T {
    let z = w - w_star;
    let linear = first_variation_e(w_star, lambda).inner(&z);
    let curvature: T = w_star
        .values()
        .iter()
        .zip(z.values())
        .map(|(&ws, &zv)| ws.exp() * exp_m1_minus_x(zv))
        .sum::<T>()
        * w.grid().cell_area();
    linear + T::lit(0.5) * z.grad_norm_sq() - curvature
}

pub fn energy_f<T: Real>(u: &Field<T>) -> Result<T> {
    check_positive(u)?;
    let entropy = u.map(|x| x * (x.ln() - T::one())).integral();
    // Δ⁻¹u = −(zero-mean inverse of −Δ)
    let delta_inv = -&u.inv_laplacian_zero_mean();
    Ok(entropy + T::lit(0.5) * u.inner(&delta_inv))
}

pub fn energy_j<T: Real>(v: &Field<T>, lambda: T) -> Result<T> {
    let mean = v.mean();
    let tol = T::lit(1e-8_f64.max(1e3 * T::EPS));
    if mean.abs() > tol * v.max_abs().max(T::one()) {
        return Err(Error::NotZeroMean { mean: mean.as_f64() });
    }
    Ok(T::lit(0.5) * v.grad_norm_sq() - lambda * v.exp().integral().ln())
}

fn check_positive<T: Real>(u: &Field<T>) -> Result<()> {
    let min = u.min();
    if min <= T::zero() || min.is_nan() {
        return Err(Error::NonPositiveDensity { min: min.as_f64() });
    }
    Ok(())
}

pub fn u_from_w<T: Real>(w: &Field<T>) -> Field<T> {
    w.exp()
}

pub fn w_from_u<T: Real>(u: &Field<T>) -> Result<Field<T>> {
    check_positive(u)?;
    Ok(u.map(T::ln))
}

pub fn v_from_w<T: Real>(w: &Field<T>) -> Field<T> {
    w.zero_mean()
}

/// `u = λ e^v / ∫ e^v`.
pub fn u_from_v<T: Real>(v: &Field<T>, lambda: T) -> Field<T> {
    // shift by max(v) before exponentiating; the normalization cancels it
    let top = v.max();
    let ev = v.map(|x| (x - top).exp());
    let total = ev.integral();
    ev.scaled(lambda / total)
}

/// `w = v + log(λ / ∫ e^v)`, the unique shift of `v` with mass λ.
pub fn w_from_v<T: Real>(v: &Field<T>, lambda: T) -> Field<T> {
    let top = v.max();
    let total = v.map(|x| (x - top).exp()).integral();
    v.shifted((lambda / total).ln() - top)
}

#[derive(Clone, Debug, Serialize)]
pub struct FunctionalReport<T: Real> {
    pub energy_e: T,
    pub energy_f: T,
    pub energy_j: T,
    pub grad_e_l2: T,
    pub grad_e_vstar: T,
    pub mass: T,
}

impl<T: Real> FunctionalReport<T> {
    pub fn evaluate(w: &Field<T>, lambda: T) -> Result<Self> {
        let u = u_from_w(w);
        let grad = first_variation_e(w, lambda);
        Ok(Self {
            energy_e: energy_e(w, lambda),
            energy_f: energy_f(&u)?,
            energy_j: energy_j(&v_from_w(w), lambda)?,
            grad_e_l2: grad.norm_l2(),
            grad_e_vstar: grad.norm_vstar(),
            mass: u.integral(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::TorusGrid;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn unit(n: usize) -> Arc<TorusGrid<f64>> {
        TorusGrid::new(1.0, 1.0, n, n).unwrap()
    }

    /// Smooth random field: a handful of low modes with random amplitudes.
    fn smooth_random(g: &Arc<TorusGrid<f64>>, seed: u64, amp: f64) -> Field<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut f = Field::zeros(g);
        for m in -2i64..=2 {
            for n in -2i64..=2 {
                let c: f64 = rng.random_range(-amp..amp);
                let s: f64 = rng.random_range(-amp..amp);
                f.axpy(c, &Field::cos_mode(g, m, n));
                f.axpy(s, &Field::sin_mode(g, m, n));
            }
        }
        f
    }

    #[test]
    fn energy_e_at_constants() {
        let g = unit(16);
        let lam = 8.0 * PI;
        let w = Field::constant(&g, lam.ln());
        let expect = -lam + lam * lam.ln();
        assert!((energy_e(&w, lam) - expect).abs() < 1e-10);
        assert!((expect - 55.900).abs() < 1e-3);
        assert!((energy_e(&Field::zeros(&g), 1.0) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn energy_e_constant_shift_identity() {
        let g = unit(16);
        let lam = 3.0;
        let w = smooth_random(&g, 1, 0.3);
        let c = 0.37;
        let lhs = energy_e(&w.shifted(c), lam) - energy_e(&w, lam);
        let rhs = lam * c - (w.shifted(c).exp().integral() - w.exp().integral());
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn first_variation_vanishes_at_constant_state() {
        let g = unit(16);
        let lam = 8.0 * PI;
        let w = Field::constant(&g, lam.ln());
        assert!(first_variation_e(&w, lam).max_abs() < 1e-12);
    }

    #[test]
    fn first_variation_linearization() {
        let g = TorusGrid::new(1.5, 1.0, 16, 16).unwrap();
        let lam: f64 = 5.0;
        let area: f64 = 1.5;
        let eps = 1e-5;
        let phi = Field::cos_mode(&g, 1, 0);
        let w = phi.scaled(eps).shifted((lam / area).ln());
        let expect = phi.scaled(eps * (4.0 * PI * PI / (1.5 * 1.5) - lam / area));
        let err = (&first_variation_e(&w, lam) - &expect).max_abs();
        assert!(err < 10.0 * eps * eps * lam / area);
    }

    #[test]
    fn gradient_consistency_second_order() {
        let g = unit(16);
        let lam = 8.0 * PI;
        for seed in 0..10u64 {
            let w = smooth_random(&g, seed, 0.2).shifted(lam.ln());
            let phi = smooth_random(&g, 100 + seed, 0.2);
            let exact = first_variation_e(&w, lam).inner(&phi);
            let err = |h: f64| {
                let fd = (energy_e(&(&w + &phi.scaled(h)), lam) - energy_e(&(&w - &phi.scaled(h)), lam)) / (2.0 * h);
                (fd - exact).abs()
            };
            let (e1, e2) = (err(1e-2), err(1e-3));
            let order = (e1 / e2).log10();
            assert!(order >= 1.9, "seed {seed}: order {order} ({e1:e}, {e2:e})");
        }
    }

    #[test]
    fn energy_gap_matches_direct_difference() {
        let g = unit(16);
        let lam = 8.0 * PI;
        let ws = Field::constant(&g, lam.ln());
        let w = &ws + &smooth_random(&g, 5, 0.05);
        let direct = energy_e(&w, lam) - energy_e(&ws, lam);
        assert!((energy_gap(&w, &ws, lam) - direct).abs() < 1e-10);
        // tiny perturbation: gap must be quadratic and positive-accurate
        let tiny = &ws + &Field::cos_mode(&g, 1, 0).scaled(1e-9);
        let gap = energy_gap(&tiny, &ws, lam);
        // ½(4π²·½ − 8π·½)·1e-18 (mean shift contributes at fourth order)
        let expect = 0.25 * (4.0 * PI * PI - lam) * 1e-18;
        assert!((gap - expect).abs() < 1e-6 * expect, "{gap:e} vs {expect:e}");
    }

    #[test]
    fn exp_m1_minus_x_branches_agree() {
        for &z in &[1e-12f64, -3e-5, 0.2, 0.49, -0.49, 0.51, 2.0] {
            let direct: f64 = z.exp() - 1.0 - z;
            let v = exp_m1_minus_x(z);
            assert!((v - direct).abs() <= 1e-15 + 1e-12 * direct.abs());
        }
    }

    #[test]
    fn energy_f_examples() {
        let g = unit(16);
        assert!((energy_f(&Field::constant(&g, 1.0)).unwrap() + 1.0).abs() < 1e-14);
        let gg = TorusGrid::new(2.0, 1.5, 8, 8).unwrap();
        let c = 2.7f64;
        let expect = c * (c.ln() - 1.0) * 3.0;
        assert!((energy_f(&Field::constant(&gg, c)).unwrap() - expect).abs() < 1e-12);
        let mut bad = Field::constant(&g, 1.0);
        bad.values_mut()[3] = 0.0;
        assert!(matches!(energy_f(&bad), Err(Error::NonPositiveDensity { .. })));
    }

    #[test]
    fn energy_j_examples() {
        let g = unit(16);
        let lam = 8.0 * PI;
        assert!(energy_j(&Field::zeros(&g), lam).unwrap().abs() < 1e-12);
        assert!(matches!(
            energy_j(&Field::constant(&g, 0.3), lam),
            Err(Error::NotZeroMean { .. })
        ));
        // second-variation oracle: J(εφ) ≈ ε²/4 (4π² − λ) for φ = cos 2πx
        for &eps in &[1e-2, 5e-3] {
            let v = Field::cos_mode(&g, 1, 0).scaled(eps);
            let j = energy_j(&v, lam).unwrap();
            let q = eps * eps / 4.0 * (4.0 * PI * PI - lam);
            assert!((j - q).abs() < 10.0 * eps.powi(4) * lam, "eps {eps}: {j} vs {q}");
        }
    }

    #[test]
    fn energy_j_translation_invariant() {
        let g = unit(16);
        let v = smooth_random(&g, 8, 0.4).zero_mean();
        let j0 = energy_j(&v, 10.0).unwrap();
        let j1 = energy_j(&v.translated(0.25, 0.0), 10.0).unwrap();
        // translation by a grid multiple is a permutation of nodes
        assert!((j0 - j1).abs() < 1e-12);
        let j2 = energy_j(&v.translated(0.0, 0.5), 10.0).unwrap();
        assert!((j0 - j2).abs() < 1e-12);
    }

    #[test]
    fn change_of_variables() {
        let g = unit(16);
        let u = smooth_random(&g, 2, 0.3).shifted(2.0);
        let back = u_from_w(&w_from_u(&u).unwrap());
        for (a, b) in back.values().iter().zip(u.values()) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
        let lam = 8.0 * PI;
        let u0 = u_from_v(&Field::zeros(&g), lam);
        assert!((u0.max() - lam).abs() < 1e-12 && (u0.min() - lam).abs() < 1e-12);
        for seed in 0..5 {
            let v = smooth_random(&g, seed, 1.0).zero_mean();
            let u = u_from_v(&v, lam);
            assert!((u.integral() - lam).abs() <= 1e-10 * lam);
            let w = w_from_v(&v, lam);
            assert!((&v_from_w(&w) - &v).max_abs() < 1e-12);
            assert!((w.exp().integral() - lam).abs() <= 1e-10 * lam);
        }
    }

    #[test]
    fn lipschitz_constant_is_bounded() {
        // ‖δE(w₁) − δE(w₂)‖_{V*} ≤ C(K)‖w₁ − w₂‖_V with an empirical C(K)
        let g = unit(16);
        let lam = 8.0 * PI;
        for seed in 0..20u64 {
            let w1 = smooth_random(&g, seed, 0.1);
            let w2 = smooth_random(&g, 50 + seed, 0.1);
            let num = (&first_variation_e(&w1, lam) - &first_variation_e(&w2, lam)).norm_vstar();
            let den = (&w1 - &w2).norm_v();
            // −Δ is a contraction V → V*; the exponential adds at most max e^w
            let bound = 1.0 + w1.max().max(w2.max()).exp();
            assert!(num / den <= bound, "seed {seed}: {} > {bound}", num / den);
        }
    }

    #[test]
    fn report_is_consistent() {
        let g = unit(16);
        let lam = 8.0 * PI;
        let w = Field::constant(&g, lam.ln());
        let r = FunctionalReport::evaluate(&w, lam).unwrap();
        assert!((r.mass - lam).abs() < 1e-12);
        assert!(r.grad_e_l2 < 1e-12 && r.grad_e_vstar < 1e-12);
        assert!((r.energy_f - lam * (lam.ln() - 1.0)).abs() < 1e-10);
    }
}
