//! Central finite-difference auditing of the analytic gradients.

use crate::classify::VibeState;
use crate::train::params::{visit_mut, visit_ref};

/// Default perturbation step.
pub const GRAD_CHECK_STEP: f64 = 1e-4;
/// Default pass threshold on the max relative error.
pub const GRAD_CHECK_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub params_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Relative error with an absolute floor so that near-zero gradient pairs
/// compare absolutely at `tol × 1e-4`.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-4)
}

fn get_param(state: &VibeState, tensor: usize, index: usize) -> f64 {
    visit_ref(state)[tensor].2.as_slice()[index]
}

fn set_param(state: &mut VibeState, tensor: usize, index: usize, value: f64) {
    visit_mut(state)[tensor].2.as_slice_mut()[index] = value;
}

/// Compare `analytic` (a gradient accumulated in a zeroed state clone)
/// against central finite differences of `loss` for every parameter.
pub fn grad_check_state(
    state: &mut VibeState,
    analytic: &VibeState,
    mut loss: impl FnMut(&VibeState) -> f64,
    step: f64,
) -> GradCheckReport {
    let tensor_count = visit_ref(state).len();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        params_checked: 0,
    };
    for ti in 0..tensor_count {
        let (name, len) = {
            let view = visit_ref(state);
            (view[ti].0, view[ti].2.len())
        };
        for ei in 0..len {
            let orig = get_param(state, ti, ei);
            set_param(state, ti, ei, orig + step);
            let f_plus = loss(state);
            set_param(state, ti, ei, orig - step);
            let f_minus = loss(state);
            set_param(state, ti, ei, orig);
            let numeric = (f_plus - f_minus) / (2.0 * step);
            let a = get_param(analytic, ti, ei);
            let err = rel_err(a, numeric);
            report.params_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_tensor = name.to_string();
                report.worst_index = ei;
            }
        }
    }
    report
}

/// Flat-slice variant for arbitrary differentiable functionals.
pub fn grad_check_flat(
    params: &mut [f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    step: f64,
) -> f64 {
    let mut max_err: f64 = 0.0;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + step;
        let f_plus = f(params);
        params[i] = orig - step;
        let f_minus = f(params);
        params[i] = orig;
        let numeric = (f_plus - f_minus) / (2.0 * step);
        max_err = max_err.max(rel_err(analytic[i], numeric));
    }
    max_err
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_functional_is_exact() {
        // f(x) = Σ aᵢ xᵢ² with gradient 2 aᵢ xᵢ; central differences are
        // exact for quadratics up to roundoff.
        let a = [0.5, -1.25, 3.0, 0.1];
        let mut x = [1.0, -2.0, 0.25, 4.0];
        let grad: Vec<f64> = a.iter().zip(&x).map(|(ai, xi)| 2.0 * ai * xi).collect();
        let err = grad_check_flat(
            &mut x,
            &grad,
            |x| x.iter().zip(&a).map(|(xi, ai)| ai * xi * xi).sum(),
            1e-4,
        );
        assert!(err < 1e-8, "max rel err {err}");
    }

    #[test]
    fn constant_functional_has_zero_gradients() {
        let mut x = [0.3, -0.7];
        let grad = [0.0, 0.0];
        let err = grad_check_flat(&mut x, &grad, |_| 42.0, 1e-4);
        assert_eq!(err, 0.0);
    }
}
