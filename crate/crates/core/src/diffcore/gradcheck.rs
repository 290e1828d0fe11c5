use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
    /// Coordinates where both the loss difference and the analytic step
    /// change sit within float roundoff of the loss, so no relative error
    /// is measurable. They are excluded from `max_rel_error`.
    pub below_noise: usize,
}

/// Loss differences up to this many ulps of the loss are treated as roundoff.
pub const ROUNDOFF_ULPS: f64 = 16.0;

fn loss_value<F>(store: &ParamStore, build: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(Error::shape("finite_diff_check", "loss must be scalar"));
    }
    Ok(v.data()[0])
}

/// Compares reverse-mode gradients against central differences with step `h`
/// for every scalar in `store`.
///
/// The relative error of one coordinate is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`. A coordinate is
/// counted in `below_noise` instead when `|f(x+h) − f(x−h)|` and
/// `2h·|analytic|` are both below `ROUNDOFF_ULPS · ε · |f|`.
pub fn finite_diff_check<F>(store: &mut ParamStore, h: f64, mut build: F) -> Result<FiniteDiffReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    tape.backprop(loss, store)?;
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.data().to_vec()).collect();
    let base = tape.value(loss).data()[0].abs();

    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
        below_noise: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        for (j, &a) in analytic[pi].iter().enumerate() {
            let orig = store.get(id).value.data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + h;
            let plus = loss_value(store, &mut build);
            store.get_mut(id).value.data_mut()[j] = orig - h;
            let minus = loss_value(store, &mut build);
            store.get_mut(id).value.data_mut()[j] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    block: store.get(id).name.clone(),
                    detail: format!("loss at perturbed coordinate {j}"),
                });
            }
            let numeric = (plus - minus) / (2.0 * h);
            report.coordinates += 1;
            let noise = ROUNDOFF_ULPS * f64::EPSILON * base.max(plus.abs()).max(minus.abs());
            if (plus - minus).abs() <= noise && (2.0 * h * a).abs() <= noise {
                report.below_noise += 1;
                continue;
            }
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((store.get(id).name.clone(), j));
            }
        }
    }
    Ok(report)
}
