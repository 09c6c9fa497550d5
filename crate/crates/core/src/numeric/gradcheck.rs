//! Central finite-difference checks of tape gradients.

use super::{Gradients, ParamStore, Tensor};

/// `max|a − b| / max(max|a|, max|b|, 1e-6)`. The floor keeps round-off in the
/// difference quotient (around 1e-11 for unit-sized losses) from dominating
/// gradients that are exactly zero.
pub fn rel_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    diff / a.max_abs().max(b.max_abs()).max(1e-6)
}

/// Central differences of `f` around `x` with the given step.
pub fn numeric_gradient(x: &Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * step);
    }
    out
}

/// Worst per-parameter [`rel_error`] between `grads` and central differences
/// of `loss` over every entry of every parameter in `store`.
pub fn max_param_rel_error(
    store: &ParamStore,
    grads: &Gradients,
    step: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = store.clone();
    for id in store.ids() {
        let zero;
        let analytic = match grads.get(id) {
            Some(g) => g,
            None => {
                zero = Tensor::zeros(store.get(id).shape());
                &zero
            }
        };
        let numeric = numeric_gradient(store.get(id), step, |t| {
            *probe.value_mut(id) = t.clone();
            loss(&probe)
        });
        *probe.value_mut(id) = store.get(id).clone();
        worst = worst.max(rel_error(analytic, &numeric));
    }
    worst
}
