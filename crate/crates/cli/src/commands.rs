//! One function per subcommand. Each writes its artifacts into the run's
//! output directory and prints a short report on stdout.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde_json::{json, Value};

use torusflow::flow::{run_flow, Reference, TrajectoryRecord};
use torusflow::functionals::energy_e;
use torusflow::io::{read_table, Checkpoint, DIAGNOSTIC_COLUMNS, TRAJECTORY_COLUMNS};
use torusflow::linops::{m_coercivity_constant, nondegeneracy_check, spectrum_with, LinearOperatorSpec, OperatorKind};
use torusflow::manifold::{verify_lemma_bounds, ManifoldChart};
use torusflow::rates::{
    classify_convergence, estimate_theta, estimate_theta_on_chart, fit_decay, h_series, DecayModel,
};
use torusflow::stationary::{
    continue_in_lambda, probe_uniqueness, smallest_jacobian_eigenvalue, solve_mean_field_with, StationaryResult,
};
use torusflow::{Error, Field, TorusGrid};

use crate::config::{RunConfig, StateSource};
use crate::error::CliError;
use crate::output::Output;
use crate::plot::Chart;

type Grid = Arc<TorusGrid<f64>>;

/// Zero-mean part of the configured initial data.
fn initial_potential(cfg: &RunConfig, grid: &Grid) -> Result<Field<f64>, CliError> {
    Ok(cfg.initial_data()?.build(grid, cfg.lambda).zero_mean())
}

fn load_checkpoint(cfg: &RunConfig, grid: &Grid) -> Result<Field<f64>, CliError> {
    let path = cfg
        .state
        .checkpoint
        .as_deref()
        .ok_or_else(|| CliError::Config("[state] checkpoint is not set".into()))?;
    let cp = Checkpoint::load(path).map_err(|e| CliError::Config(format!("[state] checkpoint {path}: {e}")))?;
    if (cp.lambda - cfg.lambda).abs() > 1e-12 * cfg.lambda {
        return Err(CliError::Config(format!(
            "[state] checkpoint {path} was written at lambda = {}, config has {}",
            cp.lambda, cfg.lambda
        )));
    }
    let g = &cfg.geometry;
    if cp.a != g.a || cp.b != g.b {
        return Err(CliError::Config(format!(
            "[state] checkpoint {path} lives on a {} x {} torus, config has {} x {}",
            cp.a, cp.b, g.a, g.b
        )));
    }
    cp.field_on(grid)
        .map_err(|e| CliError::Config(format!("[state] checkpoint {path}: {e}")))
}

/// The stationary state named by `[state] source`.
fn resolve_state(cfg: &RunConfig, grid: &Grid) -> Result<Option<StationaryResult<f64>>, CliError> {
    match cfg.state.source {
        StateSource::None => Ok(None),
        StateSource::Trivial => Ok(Some(StationaryResult::trivial(grid, cfg.lambda))),
        StateSource::Stationary => {
            let v0 = initial_potential(cfg, grid)?;
            solve_mean_field_with(&v0, cfg.lambda, &cfg.newton_options())
                .map(Some)
                .map_err(CliError::solver("stationary solve"))
        }
        StateSource::Checkpoint => {
            let w = load_checkpoint(cfg, grid)?;
            Ok(Some(StationaryResult::from_v(w.zero_mean(), cfg.lambda, 0, true)))
        }
    }
}

fn require_state(cfg: &RunConfig, grid: &Grid, command: &str) -> Result<StationaryResult<f64>, CliError> {
    resolve_state(cfg, grid)?.ok_or_else(|| {
        CliError::Config(format!(
            "{command} needs a state: set [state] source to stationary, trivial or checkpoint"
        ))
    })
}

fn state_json(cfg: &RunConfig, s: &StationaryResult<f64>) -> Value {
    json!({
        "source": cfg.state.source,
        "checkpoint": cfg.state.checkpoint,
        "residual_l2": s.residual_l2,
        "mean_field_residual": s.mean_field_residual,
        "newton_iters": s.newton_iters,
        "energy": energy_e(&s.w_star, s.lambda),
        "max_abs_v": s.v_star.max_abs(),
    })
}

fn plot(
    out: &mut Output,
    name: &str,
    title: &str,
    y_label: &str,
    log_y: bool,
    pts: &[(f64, f64)],
) -> Result<(), CliError> {
    let meta = out.meta_lines();
    let svg = Chart {
        title,
        x_label: "t",
        y_label,
        log_y,
        meta: &meta,
    }
    .render(pts);
    out.text(name, &svg)
}

pub fn simulate(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let grid = cfg.grid();
    let flow_cfg = cfg.flow_config()?;
    let w0 = cfg.initial_data()?.build(&grid, cfg.lambda);
    let reference_state = resolve_state(cfg, &grid)?;
    let reference = reference_state.as_ref().map(|s| Reference {
        w_star: s.w_star.clone(),
        theta: Some(cfg.state.theta),
    });
    let start = Instant::now();
    let traj =
        run_flow(&w0, cfg.lambda, &flow_cfg, reference.as_ref()).map_err(CliError::solver("flow integration"))?;
    let seconds = start.elapsed().as_secs_f64();

    out.trajectory("trajectory.csv", &traj.records)?;
    out.diagnostics("diagnostics.csv", &traj.records)?;
    let fin = &traj.final_state;
    out.checkpoint("final.ckpt", &Checkpoint::from_field(&fin.w, fin.lambda, fin.t))?;
    let series = |f: &dyn Fn(&TrajectoryRecord<f64>) -> Option<f64>| -> Vec<(f64, f64)> {
        traj.records.iter().filter_map(|r| f(r).map(|v| (r.t, v))).collect()
    };
    plot(
        out,
        "energy.svg",
        "Energy E(t)",
        "E",
        false,
        &series(&|r| Some(r.energy_e)),
    )?;
    plot(
        out,
        "gradient.svg",
        "Gradient norm ||dE||_2",
        "||dE||_2",
        true,
        &series(&|r| Some(r.grad_e_l2)),
    )?;
    if reference.is_some() {
        plot(
            out,
            "distance.svg",
            "Distance ||w - w*||_2",
            "||w - w*||_2",
            true,
            &series(&|r| r.dist_l2),
        )?;
    }

    let last = traj.records.last().expect("run_flow records the final state");
    let files = out.written().to_vec();
    out.json(
        "summary.json",
        json!({
            "config": cfg,
            "stop_reason": traj.stop_reason,
            "steps": traj.steps,
            "rejected_steps": traj.rejected_steps,
            "final": {
                "t": last.t,
                "energy": last.energy_e,
                "grad_l2": last.grad_e_l2,
                "grad_vstar": last.grad_e_vstar,
                "mass": last.mass,
                "min_u": last.min_u,
                "max_u": last.max_u,
                "dist_l2": last.dist_l2,
                "dist_v": last.dist_v,
                "energy_gap": last.energy_gap,
            },
            "reference": reference_state.as_ref().map(|s| state_json(cfg, s)),
            "warnings": traj.warnings,
            "files": files,
        }),
    )?;
    println!(
        "simulate: {} steps ({} rejected), stop {:?} at t = {:.4}, E = {:.12e}, |dE|_2 = {:.3e} [{:.1}s] -> {}",
        traj.steps,
        traj.rejected_steps,
        traj.stop_reason,
        last.t,
        last.energy_e,
        last.grad_e_l2,
        seconds,
        out.dir().display()
    );
    Ok(())
}

pub fn stationary(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let grid = cfg.grid();
    let v0 = match cfg.state.source {
        StateSource::Checkpoint => load_checkpoint(cfg, &grid)?.zero_mean(),
        _ => initial_potential(cfg, &grid)?,
    };
    let opts = cfg.newton_options();
    let result = solve_mean_field_with(&v0, cfg.lambda, &opts).map_err(CliError::solver("stationary solve"))?;
    let mu = smallest_jacobian_eigenvalue(&result).map_err(CliError::solver("Jacobian spectrum"))?;
    let nondeg = nondegeneracy_check(&result.u_star, cfg.lambda).map_err(CliError::solver("nondegeneracy check"))?;
    out.checkpoint(
        "stationary.ckpt",
        &Checkpoint::from_field(&result.w_star, cfg.lambda, 0.0),
    )?;

    let branch = match cfg.stationary.continuation_to {
        None => None,
        Some(end) => {
            let branch = continue_in_lambda(&result, end, cfg.stationary.continuation_steps, &opts)
                .map_err(CliError::solver("continuation"))?;
            let rows: Vec<Vec<f64>> = branch
                .points
                .iter()
                .map(|p| {
                    vec![
                        p.result.lambda,
                        p.result.residual_l2,
                        p.jacobian_eigenvalue,
                        p.min_singular_value,
                        f64::from(u8::from(p.flag)),
                        f64::from(u8::from(p.refined)),
                    ]
                })
                .collect();
            out.table(
                "branch.csv",
                &[
                    "lambda",
                    "residual",
                    "jacobian_eigenvalue",
                    "min_singular_value",
                    "flag",
                    "refined",
                ],
                &rows,
            )?;
            let mut lines = vec![serde_json::to_string(&json!({ "meta": out.meta_json() })).expect("json")];
            lines.extend(
                branch
                    .points
                    .iter()
                    .map(|p| serde_json::to_string(&p.record()).expect("json")),
            );
            out.text("branch.jsonl", &(lines.join("\n") + "\n"))?;
            Some(branch)
        }
    };
    let uniqueness = (cfg.stationary.uniqueness_starts > 0).then(|| {
        probe_uniqueness(
            &grid,
            cfg.lambda,
            cfg.stationary.uniqueness_starts,
            cfg.stationary.uniqueness_amplitude,
            cfg.seed,
            &opts,
        )
    });

    let files = out.written().to_vec();
    out.json(
        "stationary.json",
        json!({
            "config": cfg,
            "result": result,
            "energy": energy_e(&result.w_star, cfg.lambda),
            "max_abs_v": result.v_star.max_abs(),
            "jacobian_smallest_eigenvalue": mu,
            "nondegeneracy": nondeg,
            "continuation": branch.as_ref().map(|b| json!({
                "points": b.points.iter().map(|p| p.record()).collect::<Vec<_>>(),
                "flagged_lambdas": b.candidates(),
                "failure": b.failure,
            })),
            "uniqueness": uniqueness,
            "files": files,
        }),
    )?;
    println!(
        "stationary: converged in {} Newton steps, residual {:.3e}, |v*|_max {:.3e}, smallest Jacobian eigenvalue {:.6e}{}",
        result.newton_iters,
        result.mean_field_residual,
        result.v_star.max_abs(),
        mu,
        branch
            .map(|b| format!(", {} branch points, flagged {:?}", b.points.len(), b.candidates()))
            .unwrap_or_default()
    );
    if let Some(u) = uniqueness {
        println!("stationary: {}", u.statement);
    }
    Ok(())
}

pub fn spectrum(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let grid = cfg.grid();
    let state = require_state(cfg, &grid, "spectrum")?;
    let kind = cfg.operator()?;
    let spec =
        LinearOperatorSpec::from_w(kind, &state.w_star, cfg.lambda).map_err(CliError::solver("operator assembly"))?;
    let report =
        spectrum_with(&spec, cfg.spectrum.k, &cfg.spectrum_options()).map_err(CliError::solver("eigensolve"))?;
    let nondeg = nondegeneracy_check(&state.u_star, cfg.lambda).map_err(CliError::solver("nondegeneracy check"))?;
    let coercivity = if nondeg.nondegenerate {
        match m_coercivity_constant(&state.u_star, cfg.lambda, cfg.spectrum.coercivity_samples, cfg.seed) {
            Ok(c) => Some(c),
            Err(Error::DegenerateState { .. }) => None,
            Err(e) => return Err(CliError::solver("coercivity estimate")(e)),
        }
    } else {
        None
    };
    let rows: Vec<Vec<f64>> = report
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &mu)| vec![i as f64, mu])
        .collect();
    out.table("eigenvalues.csv", &["index", "eigenvalue"], &rows)?;
    // checkpoint layout with the eigenvalue in the time slot
    for (i, (phi, &mu)) in report.eigenfields.iter().zip(&report.eigenvalues).enumerate() {
        out.checkpoint(
            &format!("eigenfield_{i}.ckpt"),
            &Checkpoint::from_field(phi, cfg.lambda, mu),
        )?;
    }
    let verdict = if report.nondegenerate {
        "nondegenerate"
    } else {
        "degenerate"
    };
    let files = out.written().to_vec();
    out.json(
        "spectrum.json",
        json!({
            "config": cfg,
            "state": state_json(cfg, &state),
            "operator": kind,
            "lowest_eigenvalue": report.eigenvalues.first(),
            "verdict": verdict,
            "report": report,
            "nondegeneracy": nondeg,
            "m_coercivity_constant": coercivity,
            "files": files,
        }),
    )?;
    println!(
        "spectrum: operator {kind:?}, lowest eigenvalues {:?}, kernel_dim {}, {verdict} ({:?})",
        report
            .eigenvalues
            .iter()
            .take(4)
            .map(|m| format!("{m:.6}"))
            .collect::<Vec<_>>(),
        report.kernel_dim,
        report.method
    );
    Ok(())
}

pub fn manifold(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let grid = cfg.grid();
    let state = require_state(cfg, &grid, "manifold")?;
    let chart = ManifoldChart::build(&state.w_star, cfg.lambda, cfg.chart_options())
        .map_err(CliError::solver("chart construction"))?;
    let r = cfg.manifold.lemma_radius;
    let n = cfg.manifold.lemma_samples;
    let coarse = verify_lemma_bounds(&chart, r, n, cfg.seed).map_err(CliError::solver("chart inequality check"))?;
    let fine = verify_lemma_bounds(&chart, 0.5 * r, n, cfg.seed).map_err(CliError::solver("chart inequality check"))?;
    let growth = coarse.growth(&fine);
    let theta = if chart.dim() > 0 {
        let mut dir = vec![0.0; chart.dim()];
        dir[0] = 1.0;
        let radii: Vec<f64> = (0..12).map(|k| 0.2 * chart.radius() * 0.75f64.powi(k)).collect();
        Some(estimate_theta_on_chart(&chart, &dir, &radii).map_err(CliError::solver("chart exponent fit"))?)
    } else {
        None
    };
    let samples = reduced_energy_samples(&chart)?;
    let columns: Vec<String> = (1..=chart.dim())
        .map(|i| format!("c{i}"))
        .chain(["reduced_energy".to_owned()])
        .collect();
    let columns: Vec<&str> = columns.iter().map(String::as_str).collect();
    out.table("reduced_energy.csv", &columns, &samples)?;
    let files = out.written().to_vec();
    out.json(
        "manifold.json",
        json!({
            "config": cfg,
            "state": state_json(cfg, &state),
            "kernel_dim": chart.dim(),
            "chart": chart.summary(),
            "lemma_bounds": [coarse, fine],
            "growth_under_halving": growth,
            "theta_on_chart": theta,
            "files": files,
        }),
    )?;
    println!(
        "manifold: kernel_dim {}, certified radius {:.3e}, ratio maxima at {r:.1e}: {:.3e} {:.3e} {:.3e}, growth {:.3} {:.3} {:.3}{}",
        chart.dim(),
        chart.radius(),
        coarse.energy_ratio_max,
        coarse.distance_ratio_max,
        coarse.gradient_ratio_max,
        growth[0],
        growth[1],
        growth[2],
        theta.map(|t| format!(", theta on chart {:.4}", t.theta)).unwrap_or_default()
    );
    Ok(())
}

/// `(c, E(w* + Σcᵢφᵢ + g(c)) − E*)` on a 9-point grid over half the chart
/// radius: the full tensor grid up to two dimensions, the coordinate axes above.
fn reduced_energy_samples(chart: &ManifoldChart<f64>) -> Result<Vec<Vec<f64>>, CliError> {
    let d = chart.dim();
    let ticks: Vec<f64> = (0..9).map(|i| chart.radius() * (i as f64 - 4.0) / 8.0).collect();
    let coords: Vec<Vec<f64>> = match d {
        0 => vec![vec![]],
        1 => ticks.iter().map(|&t| vec![t]).collect(),
        2 => ticks
            .iter()
            .flat_map(|&x| ticks.iter().map(move |&y| vec![x, y]))
            .collect(),
        _ => (0..d)
            .flat_map(|axis| {
                ticks.iter().map(move |&t| {
                    let mut c = vec![0.0; d];
                    c[axis] = t;
                    c
                })
            })
            .collect(),
    };
    coords
        .into_iter()
        .map(|c| {
            let e = chart.reduced_energy(&c).map_err(CliError::solver("reduced energy"))?;
            Ok(c.into_iter().chain([e]).collect())
        })
        .collect()
}

/// Rebuilds records from the two CSV files written by `simulate`.
fn read_records(dir: &Path) -> Result<Vec<TrajectoryRecord<f64>>, CliError> {
    let load = |name: &str, expected: &[&str]| -> Result<Vec<Vec<f64>>, CliError> {
        let path = dir.join(name);
        let file = std::fs::File::open(&path)
            .map_err(|e| CliError::Config(format!("[rates] trajectory: {}: {e}", path.display())))?;
        let (header, rows) =
            read_table(file).map_err(|e| CliError::Config(format!("[rates] trajectory: {}: {e}", path.display())))?;
        if header != expected {
            return Err(CliError::Config(format!(
                "[rates] trajectory: {} has columns {header:?}",
                path.display()
            )));
        }
        Ok(rows)
    };
    let traj = load("trajectory.csv", &TRAJECTORY_COLUMNS)?;
    let diag = load("diagnostics.csv", &DIAGNOSTIC_COLUMNS)?;
    if traj.len() != diag.len() {
        return Err(CliError::Config(format!(
            "[rates] trajectory: {} trajectory rows but {} diagnostic rows",
            traj.len(),
            diag.len()
        )));
    }
    let opt = |v: f64| (!v.is_nan()).then_some(v);
    Ok(traj
        .iter()
        .zip(&diag)
        .enumerate()
        .map(|(i, (t, d))| TrajectoryRecord {
            step: i,
            t: t[0],
            dt: f64::NAN,
            energy_e: t[1],
            grad_e_l2: t[2],
            grad_e_vstar: t[3],
            mass: t[4],
            min_u: t[5],
            max_u: t[6],
            dissipation: t[7],
            bc_ratio: t[8],
            energy_gap: opt(d[1]),
            dist_l2: opt(d[2]),
            dist_v: opt(d[3]),
            wt_l2: d[4],
            bc_max: d[5],
            h: opt(d[6]),
        })
        .collect())
}

pub fn rates(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let grid = cfg.grid();
    let state = require_state(cfg, &grid, "rates")?;
    let records = match &cfg.rates.trajectory {
        Some(dir) => read_records(Path::new(dir))?,
        None => {
            let w0 = cfg.initial_data()?.build(&grid, cfg.lambda);
            let reference = Reference {
                w_star: state.w_star.clone(),
                theta: Some(cfg.state.theta),
            };
            run_flow(&w0, cfg.lambda, &cfg.flow_config()?, Some(&reference))
                .map_err(CliError::solver("flow integration"))?
                .records
        }
    };
    let e_star = energy_e(&state.w_star, cfg.lambda);
    let fit = fit_decay(&records).map_err(CliError::solver("decay fit"))?;
    let loj = estimate_theta(&records, e_star).map_err(CliError::solver("exponent fit"))?;
    let spec = LinearOperatorSpec::from_w(OperatorKind::B, &state.w_star, cfg.lambda)
        .map_err(CliError::solver("operator assembly"))?;
    let report =
        spectrum_with(&spec, cfg.spectrum.k, &cfg.spectrum_options()).map_err(CliError::solver("eigensolve"))?;
    let verdict = classify_convergence(&state, &report, &fit);
    let theta_h = if loj.in_range {
        loj.theta.min(0.5)
    } else {
        cfg.state.theta
    };
    let h = h_series(&records, e_star, theta_h).map_err(CliError::solver("H(t) series"))?;
    let rows: Vec<Vec<f64>> = (0..h.t.len()).map(|i| vec![h.t[i], h.h[i], h.wt_l2[i]]).collect();
    out.table("h_series.csv", &["t", "H", "wt_l2"], &rows)?;
    let overlay: Vec<Vec<f64>> = records
        .iter()
        .filter_map(|r| r.dist_l2.map(|d| (r.t, d)))
        .filter(|&(t, _)| t > 0.0)
        .map(|(t, d)| {
            let inside = t >= fit.window[0] && t <= fit.window[1];
            vec![
                t,
                d,
                fit.predict(DecayModel::Exponential, t),
                fit.predict(DecayModel::Algebraic, t),
                f64::from(u8::from(inside)),
            ]
        })
        .collect();
    out.table(
        "rates_overlay.csv",
        &["t", "dist_l2", "fit_exponential", "fit_algebraic", "in_window"],
        &overlay,
    )?;
    let files = out.written().to_vec();
    out.json(
        "rates.json",
        json!({
            "config": cfg,
            "state": state_json(cfg, &state),
            "records": records.len(),
            "decay_fit": fit,
            "lojasiewicz": loj,
            "spectrum_nondegenerate": report.nondegenerate,
            "convergence": verdict,
            "h_theta": theta_h,
            "h_constant_c": h.constant_c,
            "wt_integral": h.wt_integral,
            "wt_integral_bound": h.integral_bound,
            "h_monotone": h.h_monotone,
            "files": files,
        }),
    )?;
    println!(
        "rates: {:?} decay, gamma {:.5}, exponent {:.4}, r2 {:.6}; theta {:.4} (r2 {:.6}); {}",
        fit.model, fit.gamma, fit.exponent, fit.r_squared, loj.theta, loj.r_squared, verdict.message
    );
    Ok(())
}
