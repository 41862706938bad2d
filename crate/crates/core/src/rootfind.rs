//! Scalar root finding for strictly increasing objectives.
//!
//! Safeguarded hybrid: a geometrically expanded bracket, bisection while
//! Newton is unreliable, and Newton steps once they stay inside the bracket.
//! No external solver is used so the root path stays auditable.

use crate::error::{PricingError, Result};

/// Outcome of a root solve.
#[derive(Debug, Clone, Copy)]
pub struct RootResult {
    pub root: f64,
    pub iterations: u32,
    /// Final bracket width around the root.
    pub bracket_width: f64,
    /// Objective value at the returned root.
    pub residual: f64,
}

const MAX_EXPANSIONS: u32 = 60;
const MAX_ITERATIONS: u32 = 200;

/// Finds the root of a strictly increasing `f` with derivative `df`.
///
/// The initial bracket `[lo0, hi0]` is expanded geometrically until the sign
/// change is captured. `x_tol` bounds the accepted bracket width or Newton
/// step at the root.
pub fn solve_increasing(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    lo0: f64,
    hi0: f64,
    x_tol: f64,
) -> Result<RootResult> {
    let (mut lo, mut hi) = (lo0, hi0);
    let mut flo = f(lo);
    let mut fhi = f(hi);
    if flo.is_nan() || fhi.is_nan() {
        return Err(PricingError::NoRoot(format!(
            "objective returned NaN on initial bracket [{lo0}, {hi0}]"
        )));
    }

    let mut expansions = 0;
    while flo > 0.0 || fhi < 0.0 {
        if expansions >= MAX_EXPANSIONS {
            return Err(PricingError::NoRoot(format!(
                "no sign change after {MAX_EXPANSIONS} bracket expansions; f({lo}) = {flo:e}, f({hi}) = {fhi:e}"
            )));
        }
        let width = hi - lo;
        if flo > 0.0 {
            lo -= width;
            flo = f(lo);
        }
        if fhi < 0.0 {
            hi += width;
            fhi = f(hi);
        }
        if flo.is_nan() || fhi.is_nan() {
            return Err(PricingError::NoRoot(
                "objective returned NaN during bracket expansion".into(),
            ));
        }
        expansions += 1;
    }
    if flo == 0.0 {
        return Ok(RootResult {
            root: lo,
            iterations: 0,
            bracket_width: 0.0,
            residual: 0.0,
        });
    }
    if fhi == 0.0 {
        return Ok(RootResult {
            root: hi,
            iterations: 0,
            bracket_width: 0.0,
            residual: 0.0,
        });
    }

    let mut x = 0.5 * (lo + hi);
    let mut fx = f(x);
    for iter in 1..=MAX_ITERATIONS {
        if fx == 0.0 {
            return Ok(RootResult {
                root: x,
                iterations: iter,
                bracket_width: hi - lo,
                residual: 0.0,
            });
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }

        // Prefer a Newton step when it lands strictly inside the bracket.
        let slope = df(x);
        let newton = x - fx / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - x).abs();
        x = next;
        fx = f(x);
        if fx.is_nan() {
            return Err(PricingError::NoRoot("objective returned NaN near root".into()));
        }
        if (hi - lo) < x_tol || step < x_tol {
            // One extra Newton polish tightens the residual when possible.
            let slope = df(x);
            if slope > 0.0 {
                let polished = x - fx / slope;
                if polished.is_finite() && polished > lo && polished < hi {
                    x = polished;
                    fx = f(x);
                }
            }
            return Ok(RootResult {
                root: x,
                iterations: iter,
                bracket_width: hi - lo,
                residual: fx,
            });
        }
    }
    Err(PricingError::ToleranceNotMet {
        residual: fx,
        iterations: MAX_ITERATIONS,
        requested: x_tol,
    })
}
