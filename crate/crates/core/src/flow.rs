//! Time integration of `∂ₜe^w = Δw + e^w − λ/|Ω|` with mass conservation
//! and Lyapunov diagnostics.
//!
//! The evolution is carried in the form `wₜ = e^{−w}(Δw + e^w − λ/|Ω|) =
//! −e^{−w} δE(w)`. Along exact solutions `dE/dt = −∫ e^w wₜ² ≤ 0` and
//! `∫ e^w = λ`; both are monitored on every recorded step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::energy_gap;
use crate::krylov::minres;
use crate::scalar::Real;
use crate::torus::{Dealias, Field};

/// Upper end of the global-existence range `0 < λ ≤ 8π`.
pub fn critical_mass<T: Real>() -> T {
    T::lit(8.0) * T::PI()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ExplicitRk4,
    SemiImplicit,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit_rk4" | "rk4" => Ok(Self::ExplicitRk4),
            "semi_implicit" | "implicit" => Ok(Self::SemiImplicit),
            other => Err(Error::InvalidArgument(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FlowConfig<T: Real> {
    pub dt_initial: T,
    pub t_end: T,
    pub scheme: Scheme,
    /// Multiplier on the explicit bound `min(e^w)·h²/4`.
    pub dt_safety: T,
    pub renormalize_mass: bool,
    pub record_every: usize,
    /// Stop once `‖δE(w)‖₂` falls below this.
    pub stop_tol: T,
    /// Allowed energy increase per step, relative to `|E|`.
    pub energy_slack: T,
    pub max_retries: usize,
    /// Newton tolerance of the semi-implicit step, relative to `‖e^w‖₂`.
    pub implicit_tol: T,
    pub dealias: Dealias,
}

impl<T: Real> Default for FlowConfig<T> {
    fn default() -> Self {
        Self {
            dt_initial: T::lit(1e-3),
            t_end: T::lit(50.0),
            scheme: Scheme::ExplicitRk4,
            dt_safety: T::lit(0.5),
            renormalize_mass: true,
            record_every: 100,
            stop_tol: T::lit(1e-11),
            energy_slack: T::lit(1e-12),
            max_retries: 30,
            implicit_tol: T::lit(1e-13),
            dealias: Dealias::Off,
        }
    }
}

impl<T: Real> FlowConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_owned()));
        if !(self.dt_initial > T::zero() && self.dt_initial.is_finite()) {
            return bad("dt_initial must be positive");
        }
        if !(self.t_end > T::zero() && self.t_end.is_finite()) {
            return bad("t_end must be positive");
        }
        if !(self.dt_safety > T::zero()) {
            return bad("dt_safety must be positive");
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1");
        }
        Ok(())
    }

    /// Largest explicit step admitted at state `w`.
    pub fn explicit_dt_limit(&self, w: &Field<T>) -> T {
        let h = w.grid().spacing();
        self.dt_safety * w.min().exp() * h * h / T::lit(4.0)
    }
}

#[derive(Clone, Debug)]
pub struct FlowState<T: Real> {
    pub t: T,
    pub w: Field<T>,
    pub lambda: T,
}

impl<T: Real> FlowState<T> {
    pub fn mass(&self) -> T {
        self.w.exp().integral()
    }
}

/// Stationary state the diagnostics are measured against.
#[derive(Clone, Debug)]
pub struct Reference<T: Real> {
    pub w_star: Field<T>,
    pub theta: Option<T>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TrajectoryRecord<T: Real> {
    pub step: usize,
    pub t: T,
    pub dt: T,
    pub energy_e: T,
    pub grad_e_l2: T,
    pub grad_e_vstar: T,
    pub mass: T,
    pub min_u: T,
    pub max_u: T,
    /// `∫ e^w wₜ²`, the instantaneous energy dissipation.
    pub dissipation: T,
    pub wt_l2: T,
    /// `max_x uₜ/u = max_x wₜ`.
    pub bc_max: T,
    /// `bc_max` divided by the bound `eᵗ/(eᵗ − 1)`.
    pub bc_ratio: T,
    pub energy_gap: Option<T>,
    pub h: Option<T>,
    pub dist_l2: Option<T>,
    pub dist_v: Option<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Stationary,
    TimeReached,
}

#[derive(Clone, Debug)]
pub struct Trajectory<T: Real> {
    pub records: Vec<TrajectoryRecord<T>>,
    pub final_state: FlowState<T>,
    pub steps: usize,
    pub rejected_steps: usize,
    pub stop_reason: StopReason,
    pub warnings: Vec<String>,
}

/// `wₜ` together with the quantities the stepping loop needs at a state.
struct Eval<T: Real> {
    wt: Field<T>,
    grad: Field<T>,
    energy: T,
}

/// One Laplacian and one exponential per call: `δE = −Δw − e^w + c`, the
/// energy through `‖∇w‖² = −∫ wΔw`.
fn evaluate<T: Real>(w: &Field<T>, lambda: T, dealias: Dealias) -> Eval<T> {
    let c = lambda / w.grid().area();
    let lap = w.laplacian();
    let u = w.exp();
    let grad = Field::from_values(
        w.grid(),
        lap.values().iter().zip(u.values()).map(|(&l, &e)| -l - e + c).collect(),
    );
    let energy = -T::lit(0.5) * w.inner(&lap) - u.integral() + c * w.integral();
    let wt = match dealias {
        Dealias::Off => grad.zip_map(&u, |g, e| -g / e),
        _ => -&w.map(|v| (-v).exp()).product(&grad, dealias),
    };
    Eval { wt, grad, energy }
}

/// `wₜ = e^{−w}(Δw − c) + 1` with `c = λ/|Ω|`.
fn rhs_with<T: Real>(w: &Field<T>, lambda: T, dealias: Dealias) -> Field<T> {
    match dealias {
        Dealias::Off => {
            let c = lambda / w.grid().area();
            w.laplacian().zip_map(w, |l, v| (-v).exp() * (l - c) + T::one())
        }
        _ => evaluate(w, lambda, dealias).wt,
    }
}

/// `wₜ = e^{−w}(Δw + e^w − λ/|Ω|)`.
pub fn rhs<T: Real>(w: &Field<T>, lambda: T) -> Field<T> {
    rhs_with(w, lambda, Dealias::Off)
}

/// Shift `w` so that `∫ e^w = λ`.
pub fn renormalize_mass<T: Real>(w: &mut Field<T>, lambda: T) {
    let top = w.max();
    let scaled = w.map(|v| (v - top).exp()).integral();
    let shift = (lambda / scaled).ln() - top;
    for v in w.values_mut() {
        *v += shift;
    }
}

fn rk4_update<T: Real>(w: &Field<T>, k1: Field<T>, dt: T, lambda: T, dealias: Dealias) -> Field<T> {
    let half = dt * T::lit(0.5);
    let mut stage = w.clone();
    stage.axpy(half, &k1);
    let k2 = rhs_with(&stage, lambda, dealias);
    let mut stage = w.clone();
    stage.axpy(half, &k2);
    let k3 = rhs_with(&stage, lambda, dealias);
    let mut stage = w.clone();
    stage.axpy(dt, &k3);
    let k4 = rhs_with(&stage, lambda, dealias);
    let sixth = dt / T::lit(6.0);
    let mut next = w.clone();
    next.axpy(sixth, &k1);
    next.axpy(T::lit(2.0) * sixth, &k2);
    next.axpy(T::lit(2.0) * sixth, &k3);
    next.axpy(sixth, &k4);
    next
}

/// Backward Euler on `e^w`: solves `e^{w⁺} − e^{w} = dt(Δw⁺ + e^{w⁺} − λ/|Ω|)`
/// for the increment by Newton with MINRES inner solves.
fn semi_implicit_update<T: Real>(w: &Field<T>, dt: T, lambda: T, tol: T) -> Result<Field<T>> {
    let c = lambda / w.grid().area();
    let u0 = w.exp();
    let scale = u0.norm_l2();
    let residual = |next: &Field<T>| {
        let lap = next.laplacian();
        let un = next.exp();
        let mut r = &un - &u0;
        for ((rv, &l), &e) in r.values_mut().iter_mut().zip(lap.values()).zip(un.values()) {
            *rv -= dt * (l + e - c);
        }
        r
    };
    let mut next = w.clone();
    let mut r = residual(&next);
    for _ in 0..30 {
        if r.norm_l2() <= tol * scale {
            return Ok(next);
        }
        let diag = next.map(|v| v.exp() * (T::one() - dt));
        let mean_diag = diag.mean().abs().max(T::lit(1e-3) * u0.mean());
        let op = |x: &Field<T>| {
            let mut out = x.laplacian().scaled(-dt);
            out += &diag.zip_map(x, |d, v| d * v);
            out
        };
        let rhs = -&r;
        let out = minres(op, |x| x.helmholtz_solve(mean_diag, dt), &rhs, T::lit(1e-12), 200);
        next += &out.solution;
        if !next.is_finite() {
            return Err(Error::StepRejected("semi-implicit iterate is not finite".into()));
        }
        r = residual(&next);
    }
    if r.norm_l2() <= tol * scale * T::lit(100.0) {
        return Ok(next);
    }
    Err(Error::StepRejected(format!(
        "semi-implicit Newton did not converge (residual {:e})",
        r.norm_l2().as_f64()
    )))
}

fn advance<T: Real>(
    state: &FlowState<T>,
    k1: Option<Field<T>>,
    energy_before: T,
    dt: T,
    config: &FlowConfig<T>,
) -> Result<(FlowState<T>, Eval<T>)> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    let lambda = state.lambda;
    let mut next = match config.scheme {
        Scheme::ExplicitRk4 => {
            let k1 = k1.unwrap_or_else(|| rhs_with(&state.w, lambda, config.dealias));
            rk4_update(&state.w, k1, dt, lambda, config.dealias)
        }
        Scheme::SemiImplicit => semi_implicit_update(&state.w, dt, lambda, config.implicit_tol)?,
    };
    if !next.is_finite() {
        return Err(Error::StepRejected("density left the positive finite range".into()));
    }
    if config.renormalize_mass {
        renormalize_mass(&mut next, lambda);
    }
    let eval = evaluate(&next, lambda, config.dealias);
    let energy_after = eval.energy;
    let slack = config.energy_slack * energy_before.abs().max(T::one());
    if !(energy_after <= energy_before + slack) {
        return Err(Error::StepRejected(format!(
            "energy increased by {:e}",
            (energy_after - energy_before).as_f64()
        )));
    }
    Ok((
        FlowState {
            t: state.t + dt,
            w: next,
            lambda,
        },
        eval,
    ))
}

/// One step of the configured scheme.
pub fn step<T: Real>(state: &FlowState<T>, dt: T, config: &FlowConfig<T>) -> Result<FlowState<T>> {
    let e0 = evaluate(&state.w, state.lambda, config.dealias).energy;
    advance(state, None, e0, dt, config).map(|(s, _)| s)
}

fn make_record<T: Real>(
    state: &FlowState<T>,
    step: usize,
    dt: T,
    energy: T,
    wt: &Field<T>,
    grad: &Field<T>,
    reference: Option<&Reference<T>>,
) -> TrajectoryRecord<T> {
    let u = state.w.exp();
    let dissipation = u.zip_map(wt, |uv, v| uv * v * v).integral();
    let bc_max = wt.max();
    // eᵗ/(eᵗ − 1) = 1/(1 − e^{−t})
    let inv_bound = -(-state.t).exp_m1();
    let (energy_gap_v, h, dist_l2, dist_v) = match reference {
        Some(r) => {
            let gap = energy_gap(&state.w, &r.w_star, state.lambda);
            let diff = &state.w - &r.w_star;
            let h = r.theta.map(|th| gap.max(T::zero()).powf(th));
            (Some(gap), h, Some(diff.norm_l2()), Some(diff.norm_v()))
        }
        None => (None, None, None, None),
    };
    TrajectoryRecord {
        step,
        t: state.t,
        dt,
        energy_e: energy,
        grad_e_l2: grad.norm_l2(),
        grad_e_vstar: grad.norm_vstar(),
        mass: u.integral(),
        min_u: u.min(),
        max_u: u.max(),
        dissipation,
        wt_l2: wt.norm_l2(),
        bc_max,
        bc_ratio: bc_max * inv_bound,
        energy_gap: energy_gap_v,
        h,
        dist_l2,
        dist_v,
    }
}

/// Integrates from `w0` (rescaled to mass λ) until `t_end` or stationarity.
pub fn run_flow<T: Real>(
    w0: &Field<T>,
    lambda: T,
    config: &FlowConfig<T>,
    reference: Option<&Reference<T>>,
) -> Result<Trajectory<T>> {
    config.validate()?;
    if !(lambda > T::zero() && lambda.is_finite()) {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    if !w0.is_finite() {
        return Err(Error::NonFiniteState { t: 0.0 });
    }
    let mut warnings = Vec::new();
    if lambda > critical_mass::<T>() {
        warnings.push(format!(
            "lambda = {} exceeds 8π: outside the global-existence range 0 < λ ≤ 8π",
            lambda
        ));
    }

    let mut w = w0.clone();
    renormalize_mass(&mut w, lambda);
    let mut state = FlowState {
        t: T::zero(),
        w,
        lambda,
    };
    let mut eval = evaluate(&state.w, lambda, config.dealias);
    let mut dt = config.dt_initial;
    let mut records = Vec::new();
    let mut steps = 0usize;
    let mut rejected = 0usize;
    let mut retries = 0usize;
    let time_eps = config.t_end * T::lit(1e-12);

    let stop_reason = loop {
        let grad = &eval.grad;
        if !grad.is_finite() {
            return Err(Error::NonFiniteState { t: state.t.as_f64() });
        }
        let stationary = grad.norm_l2() < config.stop_tol;
        let done = state.t >= config.t_end - time_eps;
        if retries == 0 && (steps % config.record_every == 0 || stationary || done) {
            records.push(make_record(&state, steps, dt, eval.energy, &eval.wt, grad, reference));
        }
        if stationary {
            break StopReason::Stationary;
        }
        if done {
            break StopReason::TimeReached;
        }

        let mut h = dt.min(config.t_end - state.t);
        if config.scheme == Scheme::ExplicitRk4 {
            h = h.min(config.explicit_dt_limit(&state.w));
        }
        let k1 = (config.scheme == Scheme::ExplicitRk4).then(|| eval.wt.clone());
        match advance(&state, k1, eval.energy, h, config) {
            Ok((next, e)) => {
                state = next;
                eval = e;
                steps += 1;
                retries = 0;
                dt = (dt * T::lit(2.0)).min(config.dt_initial);
            }
            Err(Error::StepRejected(_)) => {
                rejected += 1;
                retries += 1;
                if retries > config.max_retries {
                    return Err(Error::PositivityLost {
                        t: state.t.as_f64(),
                        retries,
                    });
                }
                dt = h * T::lit(0.5);
            }
            Err(e) => return Err(e),
        }
    };

    Ok(Trajectory {
        records,
        final_state: state,
        steps,
        rejected_steps: rejected,
        stop_reason,
        warnings,
    })
}

/// `|ΔE/Δt + D(w_mid)|` across one step, with the dissipation evaluated at
/// the midpoint state. Second order in `Δt` for a consistent scheme.
pub fn dissipation_identity_residual<T: Real>(before: &Field<T>, after: &Field<T>, dt: T, lambda: T) -> T {
    let mid = before.zip_map(after, |a, b| T::lit(0.5) * (a + b));
    let wt = rhs(&mid, lambda);
    let dissipation = mid.exp().zip_map(&wt, |u, v| u * v * v).integral();
    let de = energy_gap(after, before, lambda);
    (de / dt + dissipation).abs()
}
