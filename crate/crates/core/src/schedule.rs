//! Piecewise-constant coefficient schedules.
//!
//! Every market coefficient (drift, volatility, riskless rate, up-probability)
//! is either a constant or a step function of time. A schedule is a list of
//! `(t_start, value)` segments; the value applies on `[t_k, t_{k+1})` and the
//! last segment extends to infinity. Time is measured from 0 in whatever unit
//! the caller uses consistently (the CLI works in years with 252 trading days).

use serde::{Deserialize, Serialize};

use crate::error::{PricingError, Result};

/// One step of a piecewise-constant schedule, valid from `t_start` onward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub value: f64,
}

/// A time-dependent coefficient: a constant or a piecewise-constant schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Constant(f64),
    Piecewise(Vec<Segment>),
}

impl From<f64> for Param {
    fn from(v: f64) -> Self {
        Param::Constant(v)
    }
}

impl Param {
    /// Builds a schedule from `(t_start, value)` pairs, validating ordering.
    pub fn piecewise(segments: Vec<(f64, f64)>) -> Result<Self> {
        let p = Param::Piecewise(
            segments
                .into_iter()
                .map(|(t_start, value)| Segment { t_start, value })
                .collect(),
        );
        p.validate()?;
        Ok(p)
    }

    /// Checks finiteness, a zero first breakpoint, and strictly increasing breakpoints.
    pub fn validate(&self) -> Result<()> {
        match self {
            Param::Constant(v) => {
                if !v.is_finite() {
                    return Err(PricingError::InvalidInput(format!(
                        "constant parameter must be finite, got {v}"
                    )));
                }
            }
            Param::Piecewise(segs) => {
                if segs.is_empty() {
                    return Err(PricingError::InvalidInput(
                        "schedule must have at least one segment".into(),
                    ));
                }
                if segs[0].t_start != 0.0 {
                    return Err(PricingError::InvalidInput(format!(
                        "schedule must start at t = 0, got {}",
                        segs[0].t_start
                    )));
                }
                for (i, s) in segs.iter().enumerate() {
                    if !s.t_start.is_finite() || !s.value.is_finite() {
                        return Err(PricingError::InvalidInput(format!(
                            "segment {i} has non-finite entries"
                        )));
                    }
                    if i > 0 && s.t_start <= segs[i - 1].t_start {
                        return Err(PricingError::InvalidInput(format!(
                            "segment breakpoints must be strictly increasing (segment {i})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Value in force at time `t`; times before the first breakpoint read the first segment.
    pub fn value_at(&self, t: f64) -> f64 {
        match self {
            Param::Constant(v) => *v,
            Param::Piecewise(segs) => {
                let mut v = segs[0].value;
                for s in segs {
                    if s.t_start <= t {
                        v = s.value;
                    } else {
                        break;
                    }
                }
                v
            }
        }
    }

    /// Exact integral of the step function over `[a, b]` (sign flips if `b < a`).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.integral(b, a);
        }
        match self {
            Param::Constant(v) => v * (b - a),
            Param::Piecewise(segs) => {
                let mut total = 0.0;
                for (i, s) in segs.iter().enumerate() {
                    let seg_end = segs.get(i + 1).map_or(f64::INFINITY, |n| n.t_start);
                    let lo = s.t_start.max(a);
                    let hi = seg_end.min(b);
                    if hi > lo {
                        total += s.value * (hi - lo);
                    }
                }
                // Anything before the first breakpoint reads the first segment,
                // mirroring value_at.
                if a < segs[0].t_start {
                    total += segs[0].value * (segs[0].t_start.min(b) - a).max(0.0);
                }
                total
            }
        }
    }

    /// Breakpoints strictly inside `(a, b)`, sorted ascending.
    pub fn breakpoints_within(&self, a: f64, b: f64) -> Vec<f64> {
        match self {
            Param::Constant(_) => Vec::new(),
            Param::Piecewise(segs) => segs
                .iter()
                .map(|s| s.t_start)
                .filter(|&t| t > a && t < b)
                .collect(),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Param::Constant(_) => true,
            Param::Piecewise(segs) => segs.len() == 1,
        }
    }

    /// The single value if the schedule never changes.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Param::Constant(v) => Some(*v),
            Param::Piecewise(segs) if segs.len() == 1 => Some(segs[0].value),
            _ => None,
        }
    }

    /// Applies `f` to each segment value, preserving breakpoints.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Param {
        match self {
            Param::Constant(v) => Param::Constant(f(*v)),
            Param::Piecewise(segs) => Param::Piecewise(
                segs.iter()
                    .map(|s| Segment {
                        t_start: s.t_start,
                        value: f(s.value),
                    })
                    .collect(),
            ),
        }
    }
}

/// Merges the interior breakpoints of several schedules with the endpoints of
/// `[a, b]`, producing a sorted, deduplicated step grid for exact integration.
pub fn merged_grid(params: &[&Param], a: f64, b: f64) -> Vec<f64> {
    let mut grid = vec![a, b];
    for p in params {
        grid.extend(p.breakpoints_within(a, b));
    }
    grid.sort_by(|x, y| x.partial_cmp(y).unwrap());
    grid.dedup();
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_lookup_and_integral() {
        let p = Param::Constant(0.05);
        assert_eq!(p.value_at(0.0), 0.05);
        assert_eq!(p.value_at(17.3), 0.05);
        assert_relative_eq!(p.integral(0.25, 1.75), 0.075, epsilon = 1e-15);
    }

    #[test]
    fn piecewise_lookup_uses_left_endpoint_convention() {
        let p = Param::piecewise(vec![(0.0, 0.02), (1.0, 0.04), (2.0, 0.01)]).unwrap();
        assert_eq!(p.value_at(0.0), 0.02);
        assert_eq!(p.value_at(0.999), 0.02);
        assert_eq!(p.value_at(1.0), 0.04);
        assert_eq!(p.value_at(1.5), 0.04);
        assert_eq!(p.value_at(2.0), 0.01);
        assert_eq!(p.value_at(99.0), 0.01);
    }

    #[test]
    fn piecewise_integral_is_exact() {
        let p = Param::piecewise(vec![(0.0, 0.02), (1.0, 0.04), (2.0, 0.01)]).unwrap();
        assert_relative_eq!(p.integral(0.0, 3.0), 0.02 + 0.04 + 0.01, epsilon = 1e-15);
        assert_relative_eq!(p.integral(0.5, 1.5), 0.01 + 0.02, epsilon = 1e-15);
        assert_relative_eq!(p.integral(2.5, 10.0), 0.075, epsilon = 1e-15);
        assert_relative_eq!(p.integral(1.5, 0.5), -0.03, epsilon = 1e-15);
    }

    #[test]
    fn rejects_unsorted_or_offset_schedules() {
        assert!(Param::piecewise(vec![(0.5, 0.02)]).is_err());
        assert!(Param::piecewise(vec![(0.0, 0.02), (1.0, 0.04), (1.0, 0.05)]).is_err());
        assert!(Param::piecewise(vec![]).is_err());
        assert!(Param::Constant(f64::NAN).validate().is_err());
    }

    #[test]
    fn merged_grid_dedups_and_sorts() {
        let a = Param::piecewise(vec![(0.0, 1.0), (0.5, 2.0)]).unwrap();
        let b = Param::piecewise(vec![(0.0, 1.0), (0.5, 3.0), (0.75, 4.0)]).unwrap();
        let g = merged_grid(&[&a, &b], 0.0, 1.0);
        assert_eq!(g, vec![0.0, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn json_round_trip_accepts_bare_numbers_and_segment_lists() {
        let c: Param = serde_json::from_str("0.08").unwrap();
        assert_eq!(c, Param::Constant(0.08));
        let s: Param =
            serde_json::from_str(r#"[{"t_start":0.0,"value":0.1},{"t_start":0.5,"value":0.2}]"#)
                .unwrap();
        assert_eq!(s.value_at(0.6), 0.2);
    }
}
