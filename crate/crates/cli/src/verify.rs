//! Built-in invariant suite on small fixed problems: spectral calculus,
//! conservation, dissipation, gradient consistency and Fourier spectra.

use std::f64::consts::PI;

use serde::Serialize;
use serde_json::json;

use torusflow::flow::{dissipation_identity_residual, renormalize_mass, rhs, run_flow, step, FlowConfig, FlowState};
use torusflow::functionals::{energy_gap, first_variation_e};
use torusflow::initial::{low_pass_noise, InitialData};
use torusflow::linops::{spectrum, LinearOperatorSpec, OperatorKind};
use torusflow::stationary::solve_mean_field;
use torusflow::{Field, TorusGrid};

use crate::error::CliError;
use crate::output::Output;

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    /// Bound on `value`; `kind` is `max`, `min` or `eq`.
    pub threshold: f64,
    pub kind: &'static str,
    pub pass: bool,
}

fn at_most(name: &'static str, value: f64, threshold: f64) -> Check {
    Check {
        name,
        value,
        threshold,
        kind: "max",
        pass: value <= threshold,
    }
}

fn at_least(name: &'static str, value: f64, threshold: f64) -> Check {
    Check {
        name,
        value,
        threshold,
        kind: "min",
        pass: value >= threshold,
    }
}

fn grid(a: f64, b: f64, nx: usize, ny: usize) -> std::sync::Arc<TorusGrid<f64>> {
    TorusGrid::new(a, b, nx, ny).expect("fixed grid is valid")
}

fn laplacian_exactness() -> f64 {
    let g = grid(1.0, 2.0, 16, 32);
    let f = Field::cos_mode(&g, 2, 3);
    let xi2 = (2.0 * PI * 2.0).powi(2) + (2.0 * PI * 3.0 / 2.0).powi(2);
    let err = &f.laplacian() + &f.scaled(xi2);
    err.max_abs() / xi2
}

fn mass_checks(seed: u64) -> (f64, f64) {
    let lam = 8.0 * PI;
    let g = grid(1.0, 1.0, 16, 16);
    let w0 = InitialData::parse_preset("constant+cos_x+sin_y+noise 0.1 0.05 0.05")
        .expect("fixed preset")
        .with_seed(seed)
        .build(&g, lam);
    let mut cfg = FlowConfig {
        t_end: 1.0,
        record_every: 20,
        ..FlowConfig::default()
    };
    let rel = |recs: &[torusflow::flow::TrajectoryRecord<f64>]| {
        recs.iter().map(|r| (r.mass - lam).abs() / lam).fold(0.0, f64::max)
    };
    let with = run_flow(&w0, lam, &cfg, None)
        .map(|t| rel(&t.records))
        .unwrap_or(f64::INFINITY);
    cfg.renormalize_mass = false;
    let free = run_flow(&w0, lam, &cfg, None)
        .map(|t| rel(&t.records))
        .unwrap_or(f64::INFINITY);
    (with, free)
}

fn dissipation_checks(seed: u64) -> (f64, f64) {
    let lam = 8.0 * PI;
    let g = grid(1.0, 1.0, 16, 16);
    let mut w0 = InitialData::parse_preset("constant+noise 0.2")
        .expect("fixed preset")
        .with_seed(seed)
        .build(&g, lam);
    renormalize_mass(&mut w0, lam);
    let cfg = FlowConfig {
        t_end: 2.0,
        record_every: 10,
        ..FlowConfig::default()
    };
    let increase = match run_flow(&w0, lam, &cfg, None) {
        Ok(t) => t
            .records
            .windows(2)
            .map(|p| (p[1].energy_e - p[0].energy_e) / p[0].energy_e.abs().max(1.0))
            .fold(f64::NEG_INFINITY, f64::max),
        Err(_) => f64::INFINITY,
    };
    let state = FlowState {
        t: 0.0,
        w: w0.clone(),
        lambda: lam,
    };
    let residuals: Vec<f64> = [4e-4, 2e-4, 1e-4]
        .iter()
        .map(|&dt| match step(&state, dt, &cfg) {
            Ok(next) => dissipation_identity_residual(&w0, &next.w, dt, lam),
            Err(_) => f64::NAN,
        })
        .collect();
    let order = if residuals.iter().all(|r| r.is_finite()) {
        residuals
            .windows(2)
            .map(|p| (p[0] / p[1]).log2())
            .fold(f64::INFINITY, f64::min)
    } else {
        f64::NEG_INFINITY
    };
    (increase, order)
}

fn gradient_order(seed: u64) -> f64 {
    let lam = 8.0 * PI;
    let g = grid(1.0, 1.0, 16, 16);
    let hs = [1e-2, 1e-3, 1e-4];
    let mut order = f64::INFINITY;
    for i in 0..5 {
        let w = low_pass_noise(&g, seed.wrapping_add(100 + i), 3, 0.5).shifted(lam.ln());
        let phi = low_pass_noise(&g, seed.wrapping_add(200 + i), 4, 1.0);
        let exact = first_variation_e(&w, lam).inner(&phi);
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let plus = &w + &phi.scaled(h);
                let minus = &w - &phi.scaled(h);
                (energy_gap(&plus, &minus, lam) / (2.0 * h) - exact).abs()
            })
            .collect();
        for p in errs.windows(2) {
            order = order.min((p[0] / p[1]).log10());
        }
    }
    order
}

fn spectrum_checks() -> (f64, f64) {
    let lam = 8.0 * PI;
    let g = grid(1.0, 1.0, 16, 16);
    let err = LinearOperatorSpec::new(OperatorKind::B, Field::constant(&g, lam), lam)
        .and_then(|s| spectrum(&s, 4))
        .map(|r| {
            let e = (r.eigenvalues[0] - (4.0 * PI * PI - 8.0 * PI)).abs();
            if r.nondegenerate {
                e
            } else {
                f64::INFINITY
            }
        })
        .unwrap_or(f64::INFINITY);
    let lam2 = 2.0 * PI * PI;
    let g2 = grid(1.0, 2.0, 16, 32);
    let dim = LinearOperatorSpec::new(OperatorKind::B, Field::constant(&g2, lam2 / 2.0), lam2)
        .and_then(|s| spectrum(&s, 4))
        .map(|r| r.kernel_dim as f64)
        .unwrap_or(f64::NAN);
    (err, dim)
}

fn stationary_checks(seed: u64) -> (f64, f64) {
    let lam = 8.0 * PI;
    let g = grid(1.0, 1.0, 16, 16);
    let v0 = low_pass_noise(&g, seed, 3, 0.5);
    match solve_mean_field(&v0, lam, 1e-11) {
        Ok(s) => (s.mean_field_residual, rhs(&s.w_star, lam).max_abs()),
        Err(_) => (f64::INFINITY, f64::INFINITY),
    }
}

pub fn run_checks(seed: u64) -> Vec<Check> {
    let (mass_renorm, mass_free) = mass_checks(seed);
    let (increase, order) = dissipation_checks(seed);
    let (eig_err, kernel_dim) = spectrum_checks();
    let (residual, fixed_point) = stationary_checks(seed);
    vec![
        at_most("spectral_laplacian_exactness", laplacian_exactness(), 1e-12),
        at_most("mass_conservation_renormalized", mass_renorm, 1e-12),
        at_most("mass_drift_unrenormalized", mass_free, 1e-6),
        at_most("energy_monotone_max_increase", increase, 1e-12),
        at_least("dissipation_identity_order", order, 1.9),
        at_least("gradient_fd_order", gradient_order(seed), 1.9),
        at_most("fourier_lowest_eigenvalue_error", eig_err, 1e-6),
        Check {
            name: "degenerate_kernel_dim",
            value: kernel_dim,
            threshold: 2.0,
            kind: "eq",
            pass: kernel_dim == 2.0,
        },
        at_most("stationary_residual", residual, 1e-10),
        at_most("stationary_rhs_vanishes", fixed_point, 1e-8),
    ]
}

pub fn verify(seed: u64, config_echo: serde_json::Value, out: &mut Output) -> Result<(), CliError> {
    let checks = run_checks(seed);
    println!("{:<34} {:>13} {:>4} {:>11}  status", "check", "value", "", "threshold");
    for c in &checks {
        let op = match c.kind {
            "max" => "<=",
            "min" => ">=",
            _ => "==",
        };
        println!(
            "{:<34} {:>13.4e} {:>4} {:>11.1e}  {}",
            c.name,
            c.value,
            op,
            c.threshold,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    out.json(
        "verify.json",
        json!({
            "config": config_echo,
            "checks": checks,
            "passed": checks.len() - failed.len(),
            "failed": failed,
        }),
    )?;
    println!("verify: {}/{} checks passed", checks.len() - failed.len(), checks.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Checks(format!(
            "invariant checks failed: {}",
            failed.join(", ")
        )))
    }
}
