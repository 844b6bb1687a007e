use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(parameter index, flat coordinate)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`, where the floor is
/// 1e-3 of the largest gradient magnitude in the whole check. Coordinates
/// whose gradient is negligible next to the others are thereby judged on
/// absolute error at that scale.
const RELATIVE_FLOOR: f64 = 1e-3;

/// Checks the gradient of the scalar built by `f` against central
/// differences `(f(p+h) − f(p−h)) / 2h` on every coordinate of every
/// parameter.
pub fn finite_diff_check<S, F>(f: F, params: &[Tensor<S>], h: S, tol: f64) -> Result<GradCheckReport>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, &[Var<'t, S>]) -> Result<Var<'t, S>>,
{
    // Also rejects NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(h > S::zero()) {
        return Err(Error::config("finite-difference step must be positive"));
    }

    let analytic: Vec<Tensor<S>> = {
        let tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = f(&tape, &vars)?;
        let v = root.item();
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("non-finite objective {v}")));
        }
        tape.backward(root)?;
        vars.iter().map(Var::grad).collect()
    };

    let eval = |ps: &[Tensor<S>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let v = f(&tape, &vars)?.item();
        if v.is_finite() {
            Ok(v.as_f64())
        } else {
            Err(Error::Evaluation(format!("non-finite objective {v}")))
        }
    };

    let mut work: Vec<Tensor<S>> = params.to_vec();
    let mut numeric: Vec<Vec<f64>> = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut col = Vec::with_capacity(params[pi].data().len());
        for ci in 0..params[pi].data().len() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[ci] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[ci] = orig;
            col.push((up - down) / (2.0 * h.as_f64()));
        }
        numeric.push(col);
    }

    let scale = analytic
        .iter()
        .flat_map(|t| t.data().iter().map(|v| v.as_f64().abs()))
        .chain(numeric.iter().flatten().map(|v| v.abs()))
        .fold(0.0f64, f64::max);
    let floor = (scale * RELATIVE_FLOOR).max(f64::MIN_POSITIVE);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        coordinates: 0,
        tol,
        passed: true,
    };
    for (pi, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (ci, (&av, &nv)) in a.data().iter().zip(n).enumerate() {
            let av = av.as_f64();
            let abs = (av - nv).abs();
            let rel = abs / av.abs().max(nv.abs()).max(floor);
            report.coordinates += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((pi, ci));
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}
