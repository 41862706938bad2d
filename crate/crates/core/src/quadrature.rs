//! Adaptive Simpson quadrature with an evaluation budget.

use crate::error::{PricingError, Result};

/// Integral value with its internal error estimate and cost.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: u64,
}

const INITIAL_PANELS: usize = 16;
const MAX_DEPTH: u32 = 50;

struct Workspace<F: Fn(f64) -> f64> {
    f: F,
    evaluations: u64,
    budget: u64,
}

impl<F: Fn(f64) -> f64> Workspace<F> {
    fn eval(&mut self, x: f64) -> Result<f64> {
        if self.evaluations >= self.budget {
            return Err(PricingError::QuadratureBudgetExceeded {
                evaluations: self.evaluations,
                error_estimate: f64::NAN,
            });
        }
        self.evaluations += 1;
        Ok((self.f)(x))
    }
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Integrates `f` over `[a, b]` to absolute tolerance `abs_tol`.
///
/// The interval is pre-split into equal panels so isolated features cannot be
/// stepped over, then each panel is refined adaptively with the Richardson
/// acceptance rule `|S_fine - S_coarse| <= 15 eps`.
pub fn adaptive_simpson(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_evaluations: u64,
) -> Result<QuadResult> {
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(PricingError::InvalidInput(format!(
            "quadrature interval [{a}, {b}] must be finite and ordered"
        )));
    }
    if abs_tol <= 0.0 {
        return Err(PricingError::InvalidInput(
            "quadrature tolerance must be positive".into(),
        ));
    }
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error_estimate: 0.0,
            evaluations: 0,
        });
    }

    let mut ws = Workspace {
        f,
        evaluations: 0,
        budget: max_evaluations,
    };
    let panel = (b - a) / INITIAL_PANELS as f64;
    let panel_tol = abs_tol / INITIAL_PANELS as f64;
    let mut value = 0.0;
    let mut err = 0.0;

    for i in 0..INITIAL_PANELS {
        let lo = a + i as f64 * panel;
        let hi = if i + 1 == INITIAL_PANELS { b } else { lo + panel };
        let flo = ws.eval(lo)?;
        let fmid = ws.eval(0.5 * (lo + hi))?;
        let fhi = ws.eval(hi)?;
        let whole = simpson(lo, hi, flo, fmid, fhi);
        let (v, e) = refine(&mut ws, lo, hi, flo, fmid, fhi, whole, panel_tol, MAX_DEPTH)?;
        value += v;
        err += e;
    }

    Ok(QuadResult {
        value,
        error_estimate: err,
        evaluations: ws.evaluations,
    })
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> f64>(
    ws: &mut Workspace<F>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<(f64, f64)> {
    let m = 0.5 * (a + b);
    let flm = ws.eval(0.5 * (a + m))?;
    let frm = ws.eval(0.5 * (m + b))?;
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || m == a || m == b {
        return Ok((left + right + delta / 15.0, delta.abs() / 15.0));
    }
    if depth == 0 {
        return Err(PricingError::ToleranceNotMet {
            residual: delta.abs(),
            iterations: MAX_DEPTH,
            requested: tol,
        });
    }
    let (lv, le) = refine(ws, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let (rv, re) = refine(ws, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Ok((lv + rv, le + re))
}
