//! Central finite-difference verification of backward rules.

use super::{Tape, Tensor, VarId};
use crate::error::{Error, Result};

/// Worst observed deviation for one checked input tensor.
#[derive(Debug, Clone)]
pub struct InputReport {
    pub input_index: usize,
    pub elements: usize,
    pub worst_rel_err: f64,
    pub worst_element: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.inputs.iter().all(|r| r.worst_rel_err <= self.tol)
    }

    pub fn worst(&self) -> f64 {
        self.inputs.iter().map(|r| r.worst_rel_err).fold(0.0, f64::max)
    }
}

/// Compare analytic gradients of `f` against central differences with step
/// `h` for every element of every input.
///
/// `f` must evaluate to a tensor; non-scalar outputs are sum-wrapped. The
/// reported deviation per element is
/// |analytic − cd| / max(1, |analytic|, |cd|), so near-zero gradients do not
/// false-fail.
pub fn gradient_check<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[VarId]) -> Result<VarId>,
{
    let eval = |xs: &[Tensor], want_grads: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let tape = Tape::new();
        tape.set_check_finite(true);
        let vars: Vec<VarId> = xs.iter().map(|t| tape.var(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let out = if tape.numel(out) == 1 { out } else { tape.sum_all(out)? };
        let y = tape.value_vec(out)[0];
        if !y.is_finite() {
            return Err(Error::NonFinite("gradient_check: objective value".into()));
        }
        let grads = if want_grads {
            tape.backward(out)?;
            vars.iter().map(|&v| tape.grad_vec(v)).collect()
        } else {
            Vec::new()
        };
        Ok((y, grads))
    };

    let (_, analytic) = eval(inputs, true)?;

    let mut reports = Vec::with_capacity(inputs.len());
    for (ti, t) in inputs.iter().enumerate() {
        let mut worst = InputReport {
            input_index: ti,
            elements: t.numel(),
            worst_rel_err: 0.0,
            worst_element: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for e in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[ti].values_mut()[e] += h;
            let (yp, _) = eval(&plus, false).map_err(|err| match err {
                Error::NonFinite(m) => {
                    Error::NonFinite(format!("{m} (input {ti}, element {e}, +h)"))
                }
                other => other,
            })?;
            let mut minus = inputs.to_vec();
            minus[ti].values_mut()[e] -= h;
            let (ym, _) = eval(&minus, false).map_err(|err| match err {
                Error::NonFinite(m) => {
                    Error::NonFinite(format!("{m} (input {ti}, element {e}, -h)"))
                }
                other => other,
            })?;
            let cd = (yp - ym) / (2.0 * h);
            let an = analytic[ti][e];
            let rel = (an - cd).abs() / 1.0_f64.max(an.abs()).max(cd.abs());
            if rel > worst.worst_rel_err {
                worst.worst_rel_err = rel;
                worst.worst_element = e;
                worst.worst_analytic = an;
                worst.worst_numeric = cd;
            }
        }
        reports.push(worst);
    }
    Ok(GradCheckReport { inputs: reports, tol })
}
