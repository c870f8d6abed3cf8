//! Finite-difference verification of tape gradients.

use super::params::ParamStore;
use super::tape::{Graph, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error over all checked coordinates.
    pub max_rel_err: f64,
    /// Parameter name and flat index where it occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub passed: bool,
}

/// Relative error with an absolute floor so that coordinates whose gradient is
/// numerically zero do not blow up the ratio.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Compare reverse-mode gradients of the scalar produced by `f` against
/// central differences with step `h`, for every scalar in `store`.
///
/// `max_per_param` limits how many coordinates of each parameter are probed
/// (`usize::MAX` for all); probed coordinates are spread evenly.
pub fn grad_check<F>(
    store: &mut ParamStore,
    f: F,
    h: f64,
    tol: f64,
    max_per_param: usize,
) -> GradCheckReport
where
    F: Fn(&mut Graph, &ParamStore) -> Var,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = f(&mut g, store);
    g.backward(loss);
    g.accumulate_param_grads(store);

    let eval = |s: &ParamStore| {
        let mut g = Graph::inference();
        let l = f(&mut g, s);
        g.value(l).get(0, 0)
    };

    let mut max_rel_err: f64 = 0.0;
    let mut worst = None;
    let mut checked = 0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let len = store.value(id).len();
        let stride = len.div_ceil(max_per_param.max(1)).max(1);
        for idx in (0..len).step_by(stride) {
            let analytic = store.grad(id).data()[idx];
            let orig = store.value(id).data()[idx];
            store.value_mut(id).data_mut()[idx] = orig + h;
            let fp = eval(store);
            store.value_mut(id).data_mut()[idx] = orig - h;
            let fm = eval(store);
            store.value_mut(id).data_mut()[idx] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let e = rel_err(analytic, numeric);
            checked += 1;
            if worst.is_none() || e > max_rel_err {
                max_rel_err = e;
                worst = Some((store.name(id).to_string(), idx));
            }
        }
    }
    store.zero_grad();
    GradCheckReport { max_rel_err, worst, checked, passed: max_rel_err < tol }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn half_squared_norm() {
        let mut store = ParamStore::new();
        let id = store.insert("x", Tensor::row_vector(vec![0.3, -1.2, 2.0]));
        let rep = grad_check(
            &mut store,
            |g, s| {
                let x = g.param(s, id);
                let l = g.sq_err_sum(x, Tensor::zeros(1, 3));
                g.scale(l, 0.5)
            },
            1e-5,
            1e-6,
            usize::MAX,
        );
        assert!(rep.passed, "{rep:?}");
        assert_eq!(rep.checked, 3);
    }
}
