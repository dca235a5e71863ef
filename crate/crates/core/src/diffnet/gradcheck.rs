//! Central finite-difference verification of backward passes.
//!
//! The checker perturbs one parameter entry at a time, re-runs a caller
//! supplied forward pass, and compares the symmetric difference quotient
//! against the analytic gradient sitting in the store's accumulators.

use crate::diffnet::param::ParamStore;

/// Central finite difference of `f` with respect to entry `idx` of `block`.
/// The entry is restored bitwise afterwards.
pub fn fd_grad(
    store: &mut ParamStore,
    block: &str,
    idx: usize,
    step: f64,
    f: &mut dyn FnMut(&ParamStore) -> f64,
) -> f64 {
    let orig = store.block(block).unwrap().value[idx];
    store.block_mut(block).unwrap().value[idx] = orig + step;
    let plus = f(store);
    store.block_mut(block).unwrap().value[idx] = orig - step;
    let minus = f(store);
    store.block_mut(block).unwrap().value[idx] = orig;
    (plus - minus) / (2.0 * step)
}

/// Relative error with an absolute floor so near-zero gradients compare
/// sanely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / scale
}

/// Check every entry of every block of `store` against finite differences of
/// `f`. Expects the analytic gradients to already be accumulated in the
/// store. Returns the worst (block, index, relative error) triple.
pub fn worst_rel_err(
    store: &mut ParamStore,
    step: f64,
    f: &mut dyn FnMut(&ParamStore) -> f64,
) -> (String, usize, f64) {
    let names: Vec<String> = store.blocks().map(|b| b.name.clone()).collect();
    let mut worst = (String::new(), 0, 0.0);
    for name in names {
        let n = store.block(&name).unwrap().len();
        for idx in 0..n {
            let analytic = store.block(&name).unwrap().grad[idx];
            let numeric = fd_grad(store, &name, idx, step, f);
            let e = rel_err(analytic, numeric);
            if e > worst.2 {
                worst = (name.clone(), idx, e);
            }
        }
    }
    worst
}
