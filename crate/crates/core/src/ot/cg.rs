//! Conditional gradient (Frank-Wolfe) over the transportation polytope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ot::emd::solve_emd;
use crate::ot::plan::TransportPlan;
use crate::ot::quadratic::{step_from_coefficients, QuadraticProblem};

/// Stopping rule for [`conditional_gradient`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgOptions {
    pub max_iter: usize,
    /// Stop once the relative objective decrease of a step falls below this.
    pub tol: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-7,
        }
    }
}

/// Summary of one solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgReport {
    pub iterations: usize,
    /// Objective at the initial plan followed by the value after every iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub final_objective: f64,
}

/// Minimize a quadratic transport objective starting from `t_init`.
///
/// Each iteration linearizes the objective, solves the linear subproblem
/// exactly with the network simplex, and takes the exact minimizing step
/// along the segment to that vertex.
pub fn conditional_gradient<P: AsRef<QuadraticProblem>>(
    prob: &P,
    t_init: &TransportPlan,
    max_iter: usize,
    tol: f64,
) -> Result<(TransportPlan, CgReport)> {
    let q = prob.as_ref();
    q.check_plan_shape(t_init.matrix())?;
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tol must be positive, got {tol}")));
    }

    if let Some(plan) = TransportPlan::singleton_side(q.source(), q.target()) {
        let f = q.objective(&plan)?;
        let report = CgReport {
            iterations: 0,
            objective_trace: vec![f],
            converged: true,
            final_objective: f,
        };
        return Ok((plan, report));
    }

    let mut t = t_init.clone();
    let mut p = q.products(t.matrix());
    let mut f = q.value_with(t.matrix(), &p);
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let grad = q.gradient_with(&p);
        if grad.as_slice().iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite gradient in conditional gradient".into()));
        }
        let vertex = solve_emd(&grad, q.source(), q.target())?;
        let p_vertex = q.products(vertex.matrix());
        let (a, b) = q.step_coefficients(t.matrix(), &p, vertex.matrix(), &p_vertex);
        let tau = step_from_coefficients(a, b);
        if tau == 0.0 {
            trace.push(f);
            converged = true;
            break;
        }

        let t_next = t.interpolate(&vertex, tau);
        let p_next: Vec<_> = p
            .iter()
            .zip(&p_vertex)
            .map(|(pc, pv)| {
                let mut out = pc.scale(1.0 - tau);
                out.axpy(tau, pv);
                out
            })
            .collect();
        let f_next = q.value_with(t_next.matrix(), &p_next);
        if !f_next.is_finite() {
            return Err(Error::Numerical("non-finite objective in conditional gradient".into()));
        }
        if f_next > f {
            // rounding made the step useless; keep the current iterate
            trace.push(f);
            converged = true;
            break;
        }
        let decrease = f - f_next;
        let scale = f.abs();
        t = t_next;
        p = p_next;
        f = f_next;
        trace.push(f);
        if decrease <= tol * scale {
            converged = true;
            break;
        }
    }

    let report = CgReport {
        iterations,
        objective_trace: trace,
        converged,
        final_objective: f,
    };
    Ok((t, report))
}

/// [`conditional_gradient`] with [`CgOptions`].
pub fn conditional_gradient_with<P: AsRef<QuadraticProblem>>(
    prob: &P,
    t_init: &TransportPlan,
    opts: CgOptions,
) -> Result<(TransportPlan, CgReport)> {
    conditional_gradient(prob, t_init, opts.max_iter, opts.tol)
}
