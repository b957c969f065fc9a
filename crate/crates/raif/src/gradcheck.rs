//! Central finite-difference gradient checking.
//!
//! Compares tape gradients against central differences computed by
//! re-evaluating a loss closure with single parameter coordinates perturbed.
//! Used by the test suites for every loss in the crate; tolerances follow the
//! usual relative-error-with-floor convention so near-zero gradients do not
//! produce spurious failures.

use crate::autodiff::{Grads, ParamId, ParamStore};
use crate::rng::Rng;

/// One checked coordinate: parameter, flat index, analytic and numeric slope.
#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Checks `n_coords` randomly chosen parameter coordinates of `loss_fn`
/// against central differences with step `eps`.
///
/// `loss_fn` must be a deterministic function of the store (fix all noise
/// outside). Panics if any coordinate exceeds `tol` relative error.
pub fn check_random_coords(
    store: &mut ParamStore,
    params: &[ParamId],
    loss_fn: &mut dyn FnMut(&ParamStore) -> f64,
    grads: &Grads,
    n_coords: usize,
    eps: f64,
    tol: f64,
    rng: &mut Rng,
) -> Vec<CoordCheck> {
    assert!(!params.is_empty(), "gradcheck: no parameters given");
    let mut checks = Vec::with_capacity(n_coords);
    for _ in 0..n_coords {
        let pid = params[rng.below(params.len())];
        let len = store.value(pid).len();
        let idx = rng.below(len);
        let analytic = grads.get(pid).map(|g| g[idx]).unwrap_or(0.0);

        let orig = store.value(pid)[idx];
        store.value_mut(pid)[idx] = orig + eps;
        let up = loss_fn(store);
        store.value_mut(pid)[idx] = orig - eps;
        let down = loss_fn(store);
        store.value_mut(pid)[idx] = orig;

        let numeric = (up - down) / (2.0 * eps);
        let rel = relative_error(analytic, numeric);
        let check = CoordCheck {
            param: pid,
            index: idx,
            analytic,
            numeric,
            rel_error: rel,
        };
        assert!(
            rel <= tol,
            "gradient mismatch on {} [{}]: analytic {:.10e} vs numeric {:.10e} (rel {:.3e} > {:.1e})",
            store.name(pid),
            idx,
            analytic,
            numeric,
            rel,
            tol
        );
        checks.push(check);
    }
    checks
}

/// Dense variant: checks every coordinate of the listed parameters.
pub fn check_all_coords(
    store: &mut ParamStore,
    params: &[ParamId],
    loss_fn: &mut dyn FnMut(&ParamStore) -> f64,
    grads: &Grads,
    eps: f64,
    tol: f64,
) {
    for &pid in params {
        let len = store.value(pid).len();
        for idx in 0..len {
            let analytic = grads.get(pid).map(|g| g[idx]).unwrap_or(0.0);
            let orig = store.value(pid)[idx];
            store.value_mut(pid)[idx] = orig + eps;
            let up = loss_fn(store);
            store.value_mut(pid)[idx] = orig - eps;
            let down = loss_fn(store);
            store.value_mut(pid)[idx] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = relative_error(analytic, numeric);
            assert!(
                rel <= tol,
                "gradient mismatch on {} [{}]: analytic {:.10e} vs numeric {:.10e} (rel {:.3e})",
                store.name(pid),
                idx,
                analytic,
                numeric,
                rel
            );
        }
    }
}
