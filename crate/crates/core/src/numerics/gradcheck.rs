use super::tensor::ParamSet;
use crate::error::{Error, Result};

/// Outcome of a finite-difference gradient audit.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst component.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares the gradients already accumulated in `set` against central
/// differences of `f`, componentwise, using
/// `|a - n| / max(1e-8, |a| + |n|)`.
///
/// Values are restored after each probe, so `set` is left unchanged.
pub fn grad_check<S, F>(mut f: F, set: &mut S, h: f64) -> Result<GradCheck>
where
    S: ParamSet,
    F: FnMut(&S) -> f64,
{
    if !(1e-7..=1e-4).contains(&h) {
        return Err(Error::Domain(format!("finite-difference step {h} outside [1e-7, 1e-4]")));
    }
    let shapes: Vec<usize> = set.params().iter().map(|p| p.value.len()).collect();
    let mut report = GradCheck { max_rel_error: 0.0, worst: None, checked: 0 };
    for (pi, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let orig = set.params()[pi].value.data()[i];
            set.params_mut()[pi].value.data_mut()[i] = orig + h;
            let fp = f(set);
            set.params_mut()[pi].value.data_mut()[i] = orig - h;
            let fm = f(set);
            set.params_mut()[pi].value.data_mut()[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                let name = set.params()[pi].name.clone();
                return Err(Error::NonFinite(format!("objective at perturbed {name}[{i}]")));
            }
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = set.params()[pi].grad.data()[i];
            let rel = (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs());
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((set.params()[pi].name.clone(), i));
            }
        }
    }
    Ok(report)
}
