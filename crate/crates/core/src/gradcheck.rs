//! Central finite-difference gradient checking.

use crate::embedding::EmbeddingBank;
use crate::real::Real;

/// Parameter containers whose arrays can be visited as flat slices.
///
/// The two methods must list the same arrays in the same order.
pub trait Parameters<T> {
    fn param_slices(&self) -> Vec<&[T]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [T]>;

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}

impl<T: Real> Parameters<T> for EmbeddingBank<T> {
    fn param_slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![self.base.as_slice().expect("standard layout")];
        for t in self.sub_tables.iter().chain(&self.projections) {
            out.push(t.as_slice().expect("standard layout"));
        }
        if !self.norm_gain.is_empty() {
            out.push(self.norm_gain.as_slice().expect("standard layout"));
            out.push(self.norm_bias.as_slice().expect("standard layout"));
        }
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.tensors_mut()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// `(array, element)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares `grads` against central differences of `loss` at `model`.
///
/// `select(array, element)` chooses which entries to probe. `model` is restored
/// exactly after every probe.
pub fn check_gradients<M, F, S>(
    model: &mut M,
    grads: &M,
    loss: F,
    step: f64,
    floor: f64,
    mut select: S,
) -> GradCheck
where
    M: Parameters<f64>,
    F: Fn(&M) -> f64,
    S: FnMut(usize, usize) -> bool,
{
    let analytic: Vec<Vec<f64>> = grads.param_slices().iter().map(|s| s.to_vec()).collect();
    let sizes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
    assert_eq!(
        sizes,
        analytic.iter().map(Vec::len).collect::<Vec<_>>(),
        "gradient layout differs from parameter layout"
    );
    let mut report = GradCheck { max_rel_error: 0.0, worst: (0, 0), checked: 0 };
    for (a, &len) in sizes.iter().enumerate() {
        for e in 0..len {
            if !select(a, e) {
                continue;
            }
            let orig = model.param_slices()[a][e];
            model.param_slices_mut()[a][e] = orig + step;
            let plus = loss(model);
            model.param_slices_mut()[a][e] = orig - step;
            let minus = loss(model);
            model.param_slices_mut()[a][e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let g = analytic[a][e];
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = (a, e);
            }
        }
    }
    report
}
