//! Preconditioned MINRES for self-adjoint (possibly indefinite) operators on
//! fields, with the L² inner product. The preconditioner must be symmetric
//! positive definite in the same inner product.

use crate::scalar::Real;
use crate::torus::Field;

#[derive(Clone, Debug)]
pub struct KrylovOutcome<T: Real> {
    pub solution: Field<T>,
    pub iterations: usize,
    /// True residual `‖b − Ax‖₂ / ‖b‖₂` at exit.
    pub relative_residual: T,
    pub converged: bool,
}

pub fn minres<T: Real>(
    op: impl Fn(&Field<T>) -> Field<T>,
    precond: impl Fn(&Field<T>) -> Field<T>,
    rhs: &Field<T>,
    tol: T,
    max_iter: usize,
) -> KrylovOutcome<T> {
    let zero = Field::zeros(rhs.grid());
    let b_norm = rhs.norm_l2();
    if b_norm == T::zero() {
        return KrylovOutcome {
            solution: zero,
            iterations: 0,
            relative_residual: T::zero(),
            converged: true,
        };
    }

    let mut x = zero.clone();
    let mut r1 = rhs.clone();
    let mut y = precond(&r1);
    let beta1 = r1.inner(&y);
    if beta1 <= T::zero() {
        // preconditioner is not positive on this right-hand side
        return KrylovOutcome {
            solution: x,
            iterations: 0,
            relative_residual: T::one(),
            converged: false,
        };
    }
    let beta1 = beta1.sqrt();

    let mut old_beta = T::zero();
    let mut beta = beta1;
    let mut dbar = T::zero();
    let mut epsln = T::zero();
    let mut phibar = beta1;
    let mut cs = -T::one();
    let mut sn = T::zero();
    let mut w = zero.clone();
    let mut w2 = zero;
    let mut r2 = r1.clone();
    let mut iterations = 0;
    let mut converged = false;

    for itn in 1..=max_iter {
        iterations = itn;
        let v = y.scaled(T::one() / beta);
        y = op(&v);
        if itn >= 2 {
            y.axpy(-beta / old_beta, &r1);
        }
        let alfa = v.inner(&y);
        y.axpy(-alfa / beta, &r2);
        r1 = r2;
        r2 = y;
        y = precond(&r2);
        old_beta = beta;
        let bb = r2.inner(&y);
        if bb < T::zero() {
            break;
        }
        beta = bb.sqrt();

        let old_eps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(T::epsilon());
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar = sn * phibar;

        let w1 = std::mem::replace(&mut w2, w);
        // w = (v − ε w1 − δ w2) / γ
        let mut next = v;
        next.axpy(-old_eps, &w1);
        next.axpy(-delta, &w2);
        w = next.scaled(T::one() / gamma);
        x.axpy(phi, &w);

        if phibar <= tol * beta1 || beta <= T::epsilon() * beta1 {
            converged = true;
            break;
        }
    }

    // convergence is judged in the preconditioner norm; report the plain one
    let residual = (rhs - &op(&x)).norm_l2() / b_norm;
    KrylovOutcome {
        solution: x,
        iterations,
        relative_residual: residual,
        converged,
    }
}
