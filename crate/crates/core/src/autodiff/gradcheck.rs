//! Central finite differences over a parameter store.
//!
//! Only forward evaluations are used here, so these checks stay independent
//! of the tape's backward rules.

use super::params::{Gradients, ParamId, ParamStore};

/// Relative error with a magnitude floor, so near-zero gradients are compared
/// absolutely at `floor` scale.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Default magnitude floor for [`relative_error`].
pub const ERROR_FLOOR: f64 = 1e-4;

/// `(f(θ + ε e_k) - f(θ - ε e_k)) / 2ε` for one scalar of one parameter.
pub fn central_difference<F>(store: &mut ParamStore, id: ParamId, k: usize, eps: f64, f: &F) -> f64
where
    F: Fn(&ParamStore) -> f64,
{
    let orig = store.get(id).data()[k];
    store.get_mut(id).data_mut()[k] = orig + eps;
    let plus = f(store);
    store.get_mut(id).data_mut()[k] = orig - eps;
    let minus = f(store);
    store.get_mut(id).data_mut()[k] = orig;
    (plus - minus) / (2.0 * eps)
}

/// Outcome of comparing analytic gradients to finite differences.
#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Checks the listed `(param, element)` coordinates; `analytic` missing a
/// parameter counts as a zero gradient.
pub fn check_coordinates<F>(
    store: &mut ParamStore,
    analytic: &Gradients,
    coords: &[(ParamId, usize)],
    eps: f64,
    f: &F,
) -> CheckReport
where
    F: Fn(&ParamStore) -> f64,
{
    let mut report = CheckReport::default();
    for &(id, k) in coords {
        let a = analytic.get(id).map_or(0.0, |g| g.data()[k]);
        let n = central_difference(store, id, k, eps, f);
        let err = relative_error(a, n, ERROR_FLOOR);
        report.checked += 1;
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(err);
            if err >= report.max_relative_error {
                report.worst = Some((store.name(id).to_string(), k, a, n));
            }
        }
    }
    report
}

/// Every scalar coordinate of every parameter.
pub fn all_coordinates(store: &ParamStore) -> Vec<(ParamId, usize)> {
    store
        .iter()
        .flat_map(|(id, _, t)| (0..t.len()).map(move |k| (id, k)))
        .collect()
}
