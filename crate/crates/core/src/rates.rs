//! Post-processing of trajectories: Łojasiewicz exponent, decay-profile fits
//! and the convergence classification.
//!
//! Along the flow, `|E − E*|^{1−θ} ≤ C‖δE‖_{V*}` with `0 < θ ≤ 1/2`; `θ = 1/2`
//! gives `‖w − w*‖₂ ≲ e^{−γt}`, smaller θ gives `t^{−θ/(1−2θ)}`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::TrajectoryRecord;
use crate::functionals::first_variation_e;
use crate::linops::SpectrumReport;
use crate::manifold::ManifoldChart;
use crate::scalar::Real;
use crate::stationary::StationaryResult;

/// Minimum number of usable samples for any fit.
pub const MIN_SAMPLES: usize = 10;

/// Default tail window on `‖δE‖₂`.
pub const TAIL_GRAD_RANGE: (f64, f64) = (1e-9, 1e-3);

/// Margin on r² below which the two decay models count as tied.
pub const MODEL_MARGIN: f64 = 0.01;

#[derive(Clone, Copy, Debug)]
pub struct LinearFit<T> {
    pub slope: T,
    pub intercept: T,
    pub r_squared: T,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit<T: Real>(x: &[T], y: &[T]) -> LinearFit<T> {
    let n = T::lit_usize(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = T::zero();
    for (&xi, &yi) in x.iter().zip(y) {
        let e = yi - slope * xi - intercept;
        ss_res += e * e;
    }
    let r2 = if syy > T::zero() {
        T::one() - ss_res / syy
    } else {
        T::one()
    };
    LinearFit {
        slope,
        intercept,
        r_squared: r2.max(T::zero()).min(T::one()),
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Real")]
pub struct LojEstimate<T: Real> {
    pub theta: T,
    pub constant_c: T,
    pub r_squared: T,
    pub sample_count: usize,
    /// `0 < θ ≤ 1/2 + 0.05`.
    pub in_range: bool,
}

/// Fits `log g = (1 − θ) log e + log(1/C)` over paired energy gaps `e` and
/// gradient norms `g`; non-positive or non-finite pairs are skipped.
pub fn estimate_theta_series<T: Real>(gap: &[T], grad: &[T]) -> Result<LojEstimate<T>> {
    let (x, y): (Vec<T>, Vec<T>) = gap
        .iter()
        .zip(grad)
        .filter(|(e, g)| **e > T::zero() && **g > T::zero() && e.is_finite() && g.is_finite())
        .map(|(e, g)| (e.ln(), g.ln()))
        .unzip();
    if x.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData {
            have: x.len(),
            need: MIN_SAMPLES,
        });
    }
    let fit = linear_fit(&x, &y);
    let theta = T::one() - fit.slope;
    Ok(LojEstimate {
        theta,
        constant_c: (-fit.intercept).exp(),
        r_squared: fit.r_squared,
        sample_count: x.len(),
        in_range: theta > T::zero() && theta <= T::lit(0.55),
    })
}

fn check_monotone<T: Real>(records: &[TrajectoryRecord<T>]) -> Result<()> {
    for (i, pair) in records.windows(2).enumerate() {
        let slack = T::lit(1e-12) * pair[0].energy_e.abs().max(T::one());
        if pair[1].energy_e > pair[0].energy_e + slack {
            return Err(Error::NonMonotoneEnergy { index: i + 1 });
        }
    }
    Ok(())
}

fn in_tail<T: Real>(r: &TrajectoryRecord<T>, range: (f64, f64)) -> bool {
    r.grad_e_l2 >= T::lit(range.0) && r.grad_e_l2 <= T::lit(range.1)
}

/// Gap `E − E*` of a record: the accurately evaluated difference when the
/// run carried a reference state, otherwise `energy_E − e_star`.
fn record_gap<T: Real>(r: &TrajectoryRecord<T>, e_star: T) -> T {
    r.energy_gap.unwrap_or(r.energy_e - e_star)
}

pub fn estimate_theta<T: Real>(records: &[TrajectoryRecord<T>], e_star: T) -> Result<LojEstimate<T>> {
    estimate_theta_in(records, e_star, TAIL_GRAD_RANGE)
}

pub fn estimate_theta_in<T: Real>(
    records: &[TrajectoryRecord<T>],
    e_star: T,
    range: (f64, f64),
) -> Result<LojEstimate<T>> {
    check_monotone(records)?;
    let tail: Vec<&TrajectoryRecord<T>> = records.iter().filter(|r| in_tail(r, range)).collect();
    let gap: Vec<T> = tail.iter().map(|r| record_gap(r, e_star)).collect();
    let grad: Vec<T> = tail.iter().map(|r| r.grad_e_vstar).collect();
    estimate_theta_series(&gap, &grad)
}

/// θ from points on the critical manifold at kernel coordinates `r·dir`.
pub fn estimate_theta_on_chart<T: Real>(chart: &ManifoldChart<T>, dir: &[T], radii: &[T]) -> Result<LojEstimate<T>> {
    let mut gap = Vec::new();
    let mut grad = Vec::new();
    for &r in radii {
        let c: Vec<T> = dir.iter().map(|&d| d * r).collect();
        let w = chart.point(&c)?;
        gap.push(chart.reduced_energy(&c)?.abs());
        grad.push(first_variation_e(&w, chart.lambda).norm_vstar());
    }
    estimate_theta_series(&gap, &grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayModel {
    Exponential,
    Algebraic,
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Real")]
pub struct RateFit<T: Real> {
    pub model: DecayModel,
    /// Rate of `e^{−γt}`.
    pub gamma: T,
    /// Exponent `p` of `t^{−p}`.
    pub exponent: T,
    /// `θ = p/(1 + 2p)`, the exponent consistent with `p = θ/(1 − 2θ)`.
    pub theta_fit: T,
    pub r_squared: T,
    pub r_squared_exponential: T,
    pub r_squared_algebraic: T,
    /// The two r² values are within the selection margin.
    pub tie: bool,
    pub window: [T; 2],
    pub sample_count: usize,
    #[serde(skip)]
    pub intercept_exponential: T,
    #[serde(skip)]
    pub intercept_algebraic: T,
}

impl<T: Real> RateFit<T> {
    pub fn predict(&self, model: DecayModel, t: T) -> T {
        match model {
            DecayModel::Exponential => (self.intercept_exponential - self.gamma * t).exp(),
            DecayModel::Algebraic => (self.intercept_algebraic - self.exponent * t.ln()).exp(),
        }
    }
}

/// Fits `log d = a − γt` and `log d = b − p log t`; picks the larger r².
pub fn fit_decay_series<T: Real>(t: &[T], d: &[T]) -> Result<RateFit<T>> {
    let pts: Vec<(T, T)> = t
        .iter()
        .zip(d)
        .filter(|(t, d)| **t > T::zero() && **d > T::zero() && d.is_finite())
        .map(|(&t, &d)| (t, d))
        .collect();
    if pts.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData {
            have: pts.len(),
            need: MIN_SAMPLES,
        });
    }
    let ts: Vec<T> = pts.iter().map(|p| p.0).collect();
    let logt: Vec<T> = pts.iter().map(|p| p.0.ln()).collect();
    let logd: Vec<T> = pts.iter().map(|p| p.1.ln()).collect();
    let exp = linear_fit(&ts, &logd);
    let alg = linear_fit(&logt, &logd);
    let margin = T::lit(MODEL_MARGIN);
    let tie = (exp.r_squared - alg.r_squared).abs() <= margin;
    let model = if exp.r_squared >= alg.r_squared {
        DecayModel::Exponential
    } else {
        DecayModel::Algebraic
    };
    let p = -alg.slope;
    Ok(RateFit {
        model,
        gamma: -exp.slope,
        exponent: p,
        theta_fit: p / (T::one() + T::lit(2.0) * p),
        r_squared: exp.r_squared.max(alg.r_squared),
        r_squared_exponential: exp.r_squared,
        r_squared_algebraic: alg.r_squared,
        tie,
        window: [ts[0], *ts.last().expect("non-empty")],
        sample_count: pts.len(),
        intercept_exponential: exp.intercept,
        intercept_algebraic: alg.intercept,
    })
}

/// Decay fit of `‖w − w*‖₂` over the tail window of a run recorded with a
/// reference state.
pub fn fit_decay<T: Real>(records: &[TrajectoryRecord<T>]) -> Result<RateFit<T>> {
    fit_decay_in(records, TAIL_GRAD_RANGE)
}

pub fn fit_decay_in<T: Real>(records: &[TrajectoryRecord<T>], range: (f64, f64)) -> Result<RateFit<T>> {
    let (t, d): (Vec<T>, Vec<T>) = records
        .iter()
        .filter(|r| in_tail(r, range))
        .filter_map(|r| r.dist_l2.map(|d| (r.t, d)))
        .unzip();
    fit_decay_series(&t, &d)
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceVerdict {
    pub nondegenerate: bool,
    pub expected: String,
    pub observed: DecayModel,
    pub tie: bool,
    pub consistent: bool,
    pub message: String,
}

/// Cross-checks the spectral verdict against the fitted decay model.
pub fn classify_convergence<T: Real>(
    stationary: &StationaryResult<T>,
    spectrum: &SpectrumReport<T>,
    fit: &RateFit<T>,
) -> ConvergenceVerdict {
    let lam_ok = (stationary.lambda - spectrum.lambda).abs() <= T::lit(1e-12) * stationary.lambda.abs();
    let nondeg = spectrum.nondegenerate;
    let expected = if nondeg {
        "exponential".to_owned()
    } else {
        "algebraic or faster".to_owned()
    };
    let (consistent, message) = if !lam_ok {
        (
            false,
            "stationary state and spectrum refer to different lambda".to_owned(),
        )
    } else if !nondeg {
        (
            true,
            "degenerate state: at least algebraic decay is expected, any fitted model agrees".to_owned(),
        )
    } else if fit.model == DecayModel::Exponential {
        (
            true,
            format!(
                "nondegenerate state with exponential decay, gamma = {:.6}",
                fit.gamma.as_f64()
            ),
        )
    } else if fit.tie {
        (
            true,
            "nondegenerate state: algebraic and exponential fits are tied".to_owned(),
        )
    } else {
        (
            false,
            format!(
                "discrepancy: nondegenerate state but algebraic fit preferred (r2 = {:.6})",
                fit.r_squared_algebraic.as_f64()
            ),
        )
    };
    ConvergenceVerdict {
        nondegenerate: nondeg,
        expected,
        observed: fit.model,
        tie: fit.tie,
        consistent,
        message,
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Real")]
pub struct HSeries<T: Real> {
    pub t: Vec<T>,
    pub h: Vec<T>,
    pub wt_l2: Vec<T>,
    /// Smallest C with `‖wₜ‖₂ ≤ C·(−dH/dt)` on every tail interval.
    pub constant_c: T,
    /// Trapezoidal `∫‖wₜ‖₂ dt` over the series.
    pub wt_integral: T,
    /// `C·H(t_start)`.
    pub integral_bound: T,
    pub h_monotone: bool,
}

/// `H(t) = (E − E*)^θ` along the records with positive gap, and the check of
/// `‖wₜ‖₂ ≤ −C dH/dt` between consecutive records.
pub fn h_series<T: Real>(records: &[TrajectoryRecord<T>], e_star: T, theta: T) -> Result<HSeries<T>> {
    if records.len() < 2 {
        return Err(Error::InsufficientData {
            have: records.len(),
            need: 2,
        });
    }
    let t: Vec<T> = records.iter().map(|r| r.t).collect();
    let h: Vec<T> = records
        .iter()
        .map(|r| record_gap(r, e_star).max(T::zero()).powf(theta))
        .collect();
    let wt: Vec<T> = records.iter().map(|r| r.wt_l2).collect();
    let mut c = T::zero();
    let mut integral = T::zero();
    let mut monotone = true;
    for i in 0..t.len() - 1 {
        let dt = t[i + 1] - t[i];
        if dt <= T::zero() {
            continue;
        }
        let avg = T::lit(0.5) * (wt[i] + wt[i + 1]);
        integral += avg * dt;
        let drop = h[i] - h[i + 1];
        if drop < T::zero() {
            monotone = false;
        }
        if avg > T::zero() && h[i] > T::zero() {
            let ratio = avg * dt / drop.max(T::min_positive_value());
            c = c.max(ratio);
        }
    }
    Ok(HSeries {
        integral_bound: c * h[0],
        t,
        h,
        wt_l2: wt,
        constant_c: c,
        wt_integral: integral,
        h_monotone: monotone,
    })
}
