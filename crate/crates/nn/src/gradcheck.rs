use rand::seq::index::sample;
use rand::Rng;

use crate::{Parameterized, Tensor};

/// Gradients smaller than this are compared on an absolute scale.
const RELATIVE_FLOOR: f64 = 1e-7;

/// Multiple of `eps * |loss| / step` treated as finite-difference round-off.
const ROUNDOFF_FACTOR: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(parameter index, element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_gradient<F>(f: F, x: &mut [f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let plus = f(x);
            x[i] = orig - step;
            let minus = f(x);
            x[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Compares `analytic` (ordered like `model.params()`) with central finite
/// differences of `loss` on a random subsample of `samples` coordinates.
///
/// Checks every coordinate when the model has no more than `samples` of them.
/// The discrepancy is reduced by the round-off bound of the difference
/// quotient before it is scaled, so gradients far below the loss magnitude
/// are not failed on float noise.
/// The model is restored bit-for-bit before returning.
pub fn gradient_check<M, F, R>(
    model: &mut M,
    loss: F,
    analytic: &[Tensor],
    samples: usize,
    step: f64,
    rng: &mut R,
) -> GradCheckReport
where
    M: Parameterized,
    F: Fn(&M) -> f64,
    R: Rng + ?Sized,
{
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    assert_eq!(sizes.len(), analytic.len(), "gradient buffer count");
    let total: usize = sizes.iter().sum();
    let flat: Vec<usize> = if total <= samples {
        (0..total).collect()
    } else {
        let mut picked = sample(rng, total, samples).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst: None,
    };
    for index in flat {
        let (param, elem) = locate(&sizes, index);
        let orig = model.params()[param].data()[elem];
        set(model, param, elem, orig + step);
        let plus = loss(model);
        set(model, param, elem, orig - step);
        let minus = loss(model);
        set(model, param, elem, orig);
        let numeric = (plus - minus) / (2.0 * step);
        let roundoff = ROUNDOFF_FACTOR * f64::EPSILON * plus.abs().max(minus.abs()).max(1.0) / step;
        let a = analytic[param].data()[elem];
        let scale = a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        let err = ((a - numeric).abs() - roundoff).max(0.0) / scale;
        report.checked += 1;
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(err);
            report.worst = Some((param, elem));
        }
    }
    report
}

fn locate(sizes: &[usize], mut index: usize) -> (usize, usize) {
    for (p, size) in sizes.iter().enumerate() {
        if index < *size {
            return (p, index);
        }
        index -= size;
    }
    unreachable!("index beyond parameter count")
}

fn set<M: Parameterized>(model: &mut M, param: usize, elem: usize, value: f64) {
    model.params_mut()[param].data_mut()[elem] = value;
}
