//! Central finite-difference check of analytic parameter gradients.

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use super::network::Differentiable;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradSample {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<GradSample>,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - n| / max(1, |a|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compares analytic gradients with `(L(p + h) - L(p - h)) / 2h` on up to
/// `max_checks` randomly chosen parameters (all of them when there are
/// fewer).
pub fn grad_check<N: Differentiable + ?Sized, R: Rng + ?Sized>(
    net: &mut N,
    x: &Tensor,
    labels: &[usize],
    h: f64,
    tol: f64,
    max_checks: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let (_, grads) = net.loss_and_grads(x, labels)?;
    let sizes: Vec<usize> = net.parameters().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let picks: Vec<usize> = if total <= max_checks {
        (0..total).collect()
    } else {
        let mut v = sample(rng, total, max_checks).into_vec();
        v.sort_unstable();
        v
    };

    let mut worst: Option<GradSample> = None;
    for flat in &picks {
        let (mut t, mut idx) = (0, *flat);
        while idx >= sizes[t] {
            idx -= sizes[t];
            t += 1;
        }
        let original = net.parameters()[t][idx];
        net.parameters_mut()[t][idx] = original + h;
        let plus = net.loss(x, labels)?;
        net.parameters_mut()[t][idx] = original - h;
        let minus = net.loss(x, labels)?;
        net.parameters_mut()[t][idx] = original;

        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads[t][idx];
        if !numeric.is_finite() || !analytic.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {t}[{idx}] is not finite"
            )));
        }
        let rel_error = relative_error(analytic, numeric);
        if worst.is_none_or(|w| rel_error > w.rel_error) {
            worst = Some(GradSample {
                tensor: t,
                index: idx,
                analytic,
                numeric,
                rel_error,
            });
        }
    }
    let max_rel_error = worst.map_or(0.0, |w| w.rel_error);
    Ok(GradCheckReport {
        checked: picks.len(),
        max_rel_error,
        worst,
        tolerance: tol,
        passed: max_rel_error <= tol,
    })
}
