//! Finite-difference verification of analytic gradients.

use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_rel_err: f64,
    /// Flat coordinate with the worst disagreement.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub step: f64,
    pub tol: f64,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max rel err {:.3e} at coordinate {} (analytic {:.6e}, numeric {:.6e}, step {:.1e}, tol {:.1e})",
            if self.passed { "pass" } else { "FAIL" },
            self.max_rel_err,
            self.worst_index,
            self.analytic_at_worst,
            self.numeric_at_worst,
            self.step,
            self.tol
        )
    }
}

/// Evaluates the scalar function defined by `build` at `point`.
fn eval<F>(build: &F, point: &Tensor) -> f64
where
    F: Fn(&mut Graph, NodeId) -> NodeId,
{
    let mut g = Graph::new();
    let x = g.leaf(point.clone());
    let out = build(&mut g, x);
    g.value(out)
}

/// Compares the analytic gradient of the scalar function built by `build`
/// against central finite differences at `point`, coordinate by coordinate.
///
/// The per-coordinate error is `|a - n| / max(|a|, |n|, floor)`; the floor
/// keeps finite-difference rounding noise on near-zero coordinates from
/// drowning the comparison. A failing check is a report, not an error.
pub fn grad_check_with<F>(
    build: F,
    point: &Tensor,
    step: f64,
    tol: f64,
    floor: f64,
) -> GradCheckReport
where
    F: Fn(&mut Graph, NodeId) -> NodeId,
{
    let mut g = Graph::new();
    let x = g.leaf(point.clone().with_grad());
    let out = build(&mut g, x);
    assert!(
        g.output(out).is_scalar(),
        "grad_check requires a scalar-valued function"
    );
    g.backward(out).expect("backward on scalar");
    let analytic: Vec<f64> = g
        .grad(x)
        .map(|s| s.to_vec())
        .unwrap_or_else(|| vec![0.0; point.numel()]);

    let mut max_rel_err = 0.0;
    let mut worst_index = 0;
    let mut analytic_at_worst = analytic.first().copied().unwrap_or(0.0);
    let mut numeric_at_worst = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(&build, &plus) - eval(&build, &minus)) / (2.0 * step);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if rel >= max_rel_err {
            max_rel_err = rel;
            worst_index = i;
            analytic_at_worst = a;
            numeric_at_worst = numeric;
        }
    }
    GradCheckReport {
        passed: max_rel_err < tol,
        max_rel_err,
        worst_index,
        analytic_at_worst,
        numeric_at_worst,
        step,
        tol,
    }
}

/// `grad_check_with` at the default step 1e-5 and floor 1e-6.
pub fn grad_check<F>(build: F, point: &Tensor, tol: f64) -> GradCheckReport
where
    F: Fn(&mut Graph, NodeId) -> NodeId,
{
    grad_check_with(build, point, 1e-5, tol, 1e-6)
}
