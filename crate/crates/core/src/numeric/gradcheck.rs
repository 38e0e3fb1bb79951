use crate::error::{Error, Result};

use super::Matrix;

/// Location and size of the worst disagreement found by [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Compare an analytic gradient against central differences.
///
/// `loss_fn` maps a parameter list to `(loss, gradient per parameter)`; the gradient
/// is only read at the unperturbed point. The error per entry is
/// `|g_a − g_n| / (|g_a| + |g_n| + 1e-12)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[Matrix], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[Matrix]) -> Result<(f64, Vec<Matrix>)>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps {eps} outside [1e-7, 1e-4]")));
    }
    let (f0, grads) = loss_fn(params)?;
    if !f0.is_finite() {
        return Err(Error::NonFiniteLoss("grad_check base point".into()));
    }
    if grads.len() != params.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }

    let mut work: Vec<Matrix> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    for (p, grad) in grads.iter().enumerate() {
        if grad.shape() != params[p].shape() {
            return Err(Error::DimensionMismatch(format!("gradient {p} shape")));
        }
        for e in 0..params[p].len() {
            let orig = params[p].as_slice()[e];
            work[p].as_mut_slice()[e] = orig + eps;
            let (fp, _) = loss_fn(&work)?;
            work[p].as_mut_slice()[e] = orig - eps;
            let (fm, _) = loss_fn(&work)?;
            work[p].as_mut_slice()[e] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFiniteLoss(format!("parameter {p} entry {e}")));
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let analytic = grad.as_slice()[e];
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12);
            report.entries_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((p, e));
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let f = |p: &[Matrix]| {
            let t = p[0].item();
            Ok((t * t, vec![Matrix::scalar(2.0 * t)]))
        };
        let r = grad_check(f, &[Matrix::scalar(3.0)], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn linear_sum() {
        let f = |p: &[Matrix]| {
            Ok((p[0].sum() + p[1].sum(), vec![Matrix::filled(2, 3, 1.0), Matrix::filled(1, 4, 1.0)]))
        };
        let params = [
            Matrix::from_vec(2, 3, vec![0.3, -1.0, 2.0, 5.0, 0.0, 1.5]).unwrap(),
            Matrix::row_vector(&[4.0, -4.0, 0.25, 9.0]),
        ];
        let r = grad_check(f, &params, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-10, "{r:?}");
        assert_eq!(r.entries_checked, 10);
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |p: &[Matrix]| {
            let t = p[0].item();
            Ok((t * t * t, vec![Matrix::scalar(2.0 * t)]))
        };
        let r = grad_check(f, &[Matrix::scalar(2.0)], 1e-5).unwrap();
        assert!(r.max_rel_error > 0.1);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let f = |p: &[Matrix]| Ok((p[0].item().ln(), vec![Matrix::scalar(1.0 / p[0].item())]));
        assert!(matches!(
            grad_check(f, &[Matrix::scalar(0.0)], 1e-5),
            Err(Error::NonFiniteLoss(_))
        ));
        assert!(grad_check(f, &[Matrix::scalar(1.0)], 1e-2).is_err());
    }
}
