//! Central finite-difference verification of tape gradients, run in `f64`.

use super::params::ParamSet;
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst disagreement.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Elements skipped because a kink lies inside the difference stencil.
    pub nonsmooth: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Relative error with a small floor so two near-zero values compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares the tape gradient of every trainable parameter element against
/// `(f(p + h) - f(p - h)) / 2h`.
///
/// An element whose difference quotient changes by more than `tolerance`
/// between `h` and `h / 4` has a ReLU or max-pool kink inside the stencil;
/// it is counted in `nonsmooth` instead of being compared.
///
/// `fragment` records a scalar loss on the tape from the bound parameters and
/// must be deterministic.
pub fn grad_check<Fr>(
    params: &ParamSet<f64>,
    fragment: Fr,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    Fr: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = p.bind_constant(&mut tape);
        let out = fragment(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = fragment(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        nonsmooth: 0,
        tolerance,
    };
    let quotient = |probe: &mut ParamSet<f64>, id, k: usize, orig: f64, h: f64| -> Result<f64> {
        probe.get_mut(id).data_mut()[k] = orig + h;
        let plus = eval(probe)?;
        probe.get_mut(id).data_mut()[k] = orig - h;
        let minus = eval(probe)?;
        probe.get_mut(id).data_mut()[k] = orig;
        Ok((plus - minus) / (2.0 * h))
    };
    for id in params.ids() {
        if params.is_frozen(id) {
            continue;
        }
        let analytic = grads.get(vars[id.index()]);
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            let numeric = quotient(&mut probe, id, k, orig, step)?;
            let a = analytic.map_or(0.0, |g| g[k]);
            let err = relative_error(a, numeric);
            if err >= tolerance {
                let fine = quotient(&mut probe, id, k, orig, step / 4.0)?;
                if relative_error(numeric, fine) >= tolerance {
                    report.nonsmooth += 1;
                    continue;
                }
            }
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}
