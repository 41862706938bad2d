//! The two companion marketable assets: a perpetual power derivative of the
//! stock and the deflated cumulative-return asset's deflator.
//!
//! The perpetual derivative is the separable solution g(t, S) = S^gamma f(t)
//! (plus an optional deterministic account component) of the single-asset
//! pricing equation. For constant coefficients its time factor is
//! exp(xi(gamma) sigma^2 t / 2) with xi(gamma) = (1 - gamma)(delta + gamma)
//! and delta = 2 r_f / sigma^2; schedules are handled by exact piecewise
//! integration of the same exponent.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{PricingError, Result};
use crate::market::SingleAssetParams;
use crate::schedule::Param;

/// Schedules whose deflator exceeds this sup of pi + 1/pi are rejected.
pub const MAX_DEFLATOR_SUP: f64 = 1e12;

/// Matching tolerance between a grid gamma and a named solution's gamma.
const LABEL_MATCH_TOLERANCE: f64 = 1e-12;

/// Named solutions on the xi curve, in increasing-gamma order:
/// the lower fixed point, the no-time-factor power, the bank account, the
/// curve maximum, the upper xi = delta point, the upper fixed point, and the
/// stock itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum XiLabel {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
}

impl fmt::Display for XiLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            XiLabel::A => "A",
            XiLabel::B => "B",
            XiLabel::C => "C",
            XiLabel::D => "D",
            XiLabel::E => "E",
            XiLabel::F => "F",
            XiLabel::G => "G",
        };
        f.write_str(s)
    }
}

/// One point of the xi curve, optionally carrying a named-solution label.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct XiPoint {
    pub gamma: f64,
    pub xi: f64,
    pub label: Option<XiLabel>,
}

/// A perpetual power derivative S^gamma with an optional deterministic
/// account component started at `h0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerpetualSpec {
    pub gamma: f64,
    pub r_f: Param,
    pub sigma: Param,
    pub mu: Param,
    pub h0: f64,
}

impl PerpetualSpec {
    pub fn new(gamma: f64, r_f: Param, sigma: Param, mu: Param) -> Result<Self> {
        let spec = PerpetualSpec {
            gamma,
            r_f,
            sigma,
            mu,
            h0: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn constant(gamma: f64, r_f: f64, sigma: f64, mu: f64) -> Result<Self> {
        Self::new(
            gamma,
            Param::Constant(r_f),
            Param::Constant(sigma),
            Param::Constant(mu),
        )
    }

    pub fn with_h0(mut self, h0: f64) -> Self {
        self.h0 = h0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() {
            return Err(PricingError::InvalidInput(format!(
                "gamma must be finite, got {}",
                self.gamma
            )));
        }
        if !self.h0.is_finite() {
            return Err(PricingError::InvalidInput(format!(
                "h0 must be finite, got {}",
                self.h0
            )));
        }
        for (name, p) in [("r_f", &self.r_f), ("sigma", &self.sigma), ("mu", &self.mu)] {
            p.validate()
                .map_err(|e| PricingError::InvalidInput(format!("{name}: {e}")))?;
        }
        require_positive(&self.sigma, "sigma")?;
        Ok(())
    }
}

fn require_positive(p: &Param, name: &str) -> Result<()> {
    let ok = match p {
        Param::Constant(v) => *v > 0.0,
        Param::Piecewise(segs) => segs.iter().all(|s| s.value > 0.0),
    };
    if ok {
        Ok(())
    } else {
        Err(PricingError::InvalidInput(format!(
            "{name} must be positive on every segment"
        )))
    }
}

/// All schedule breakpoints of the given parameters, starting at 0.
fn combined_breakpoints(params: &[&Param]) -> Vec<f64> {
    let mut starts = vec![0.0];
    for p in params {
        if let Param::Piecewise(segs) = p {
            starts.extend(segs.iter().map(|s| s.t_start));
        }
    }
    starts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    starts.dedup();
    starts
}

/// Pointwise combination of schedules into one schedule.
fn combine_params(params: &[&Param], f: impl Fn(&[f64]) -> f64) -> Param {
    let starts = combined_breakpoints(params);
    let mut vals = Vec::with_capacity(params.len());
    if starts.len() == 1 {
        vals.extend(params.iter().map(|p| p.value_at(0.0)));
        return Param::Constant(f(&vals));
    }
    let pts = starts
        .iter()
        .map(|&t| {
            vals.clear();
            vals.extend(params.iter().map(|p| p.value_at(t)));
            (t, f(&vals))
        })
        .collect();
    Param::piecewise(pts).expect("combined breakpoints are sorted and start at zero")
}

/// The rate-to-variance ratio delta = 2 r_f / sigma^2.
pub fn delta_ratio(r_f: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PricingError::InvalidInput(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if !r_f.is_finite() {
        return Err(PricingError::InvalidInput(format!(
            "r_f must be finite, got {r_f}"
        )));
    }
    Ok(2.0 * r_f / (sigma * sigma))
}

/// The exponent curve xi(gamma) = (1 - gamma)(delta + gamma).
pub fn xi_value(delta: f64, gamma: f64) -> f64 {
    (1.0 - gamma) * (delta + gamma)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(PricingError::InvalidInput(format!(
            "delta must be positive, got {delta}"
        )));
    }
    Ok(())
}

/// The seven named solutions of the xi curve, in increasing-gamma order:
/// fixed points xi(gamma) = gamma at A and F, roots at B (gamma = -delta) and
/// G (gamma = 1), bank-account-growth points xi = delta at C (gamma = 0) and
/// E (gamma = 1 - delta), and the maximum (1 + delta)^2 / 4 at D.
pub fn named_xi_points(delta: f64) -> Result<Vec<XiPoint>> {
    check_delta(delta)?;
    let disc = (delta * delta + 4.0 * delta).sqrt();
    let gamma_minus = (-delta - disc) / 2.0;
    let gamma_plus = (-delta + disc) / 2.0;
    let named = [
        (gamma_minus, XiLabel::A),
        (-delta, XiLabel::B),
        (0.0, XiLabel::C),
        ((1.0 - delta) / 2.0, XiLabel::D),
        (1.0 - delta, XiLabel::E),
        (gamma_plus, XiLabel::F),
        (1.0, XiLabel::G),
    ];
    Ok(named
        .iter()
        .map(|&(gamma, label)| XiPoint {
            gamma,
            xi: xi_value(delta, gamma),
            label: Some(label),
        })
        .collect())
}

/// Evaluates xi on a gamma grid and merges in the seven named solutions.
/// Grid points that coincide with a named gamma carry its label; named points
/// absent from the grid are inserted, and the result is sorted by gamma.
pub fn xi_curve(delta: f64, gamma_grid: &[f64]) -> Result<Vec<XiPoint>> {
    let named = named_xi_points(delta)?;
    let mut points: Vec<XiPoint> = gamma_grid
        .iter()
        .map(|&gamma| {
            if !gamma.is_finite() {
                return Err(PricingError::InvalidInput(format!(
                    "gamma grid entries must be finite, got {gamma}"
                )));
            }
            let label = named
                .iter()
                .find(|p| (p.gamma - gamma).abs() <= LABEL_MATCH_TOLERANCE)
                .and_then(|p| p.label);
            Ok(XiPoint {
                gamma,
                xi: xi_value(delta, gamma),
                label,
            })
        })
        .collect::<Result<_>>()?;
    for p in named {
        if !points
            .iter()
            .any(|q| (q.gamma - p.gamma).abs() <= LABEL_MATCH_TOLERANCE)
        {
            points.push(p);
        }
    }
    points.sort_by(|a, b| a.gamma.partial_cmp(&b.gamma).unwrap());
    Ok(points)
}

/// Price of the perpetual derivative at time `t` given the stock price:
/// S^gamma times the exactly integrated exponent exp(int (1 - gamma)(r_f +
/// sigma^2 gamma / 2) du), plus the deterministic component h0 e^{int r_f}.
pub fn perpetual_price(spec: &PerpetualSpec, t: f64, s_t: f64) -> Result<f64> {
    spec.validate()?;
    if !(s_t > 0.0 && s_t.is_finite()) {
        return Err(PricingError::InvalidInput(format!(
            "stock price must be positive, got {s_t}"
        )));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(PricingError::InvalidInput(format!(
            "time must be non-negative, got {t}"
        )));
    }
    let gamma = spec.gamma;
    let sigma_sq = spec.sigma.map(|x| x * x);
    let exponent =
        (1.0 - gamma) * (spec.r_f.integral(0.0, t) + 0.5 * gamma * sigma_sq.integral(0.0, t));
    let power_part = s_t.powf(gamma) * exponent.exp();
    let account_part = if spec.h0 == 0.0 {
        0.0
    } else {
        spec.h0 * spec.r_f.integral(0.0, t).exp()
    };
    Ok(power_part + account_part)
}

/// Drift and diffusion schedules of the perpetual derivative:
/// mu_tilde = (1 - gamma) r_f + gamma mu and sigma_tilde = gamma sigma.
/// Only the pure power solution has these dynamics, so `h0` must be zero.
pub fn perpetual_dynamics(spec: &PerpetualSpec) -> Result<(Param, Param)> {
    spec.validate()?;
    if spec.h0 != 0.0 {
        return Err(PricingError::RequiresZeroH0 { h0: spec.h0 });
    }
    let gamma = spec.gamma;
    let mu_tilde = combine_params(&[&spec.r_f, &spec.mu], |v| {
        (1.0 - gamma) * v[0] + gamma * v[1]
    });
    let sigma_tilde = spec.sigma.map(|s| gamma * s);
    Ok((mu_tilde, sigma_tilde))
}

/// Drift and signed diffusion loading of S^{-delta}: drift
/// (1 + delta) r_f - delta mu and loading -delta sigma, with delta = 2 r_f /
/// sigma^2 evaluated segment by segment. The negative loading makes the asset
/// move against the stock on every step.
pub fn s_minus_delta_dynamics(params: &SingleAssetParams) -> Result<(Param, Param)> {
    require_positive(&params.sigma, "sigma")?;
    let drift = combine_params(&[&params.r_f, &params.sigma, &params.mu], |v| {
        let delta = 2.0 * v[0] / (v[1] * v[1]);
        (1.0 + delta) * v[0] - delta * v[2]
    });
    let vol = combine_params(&[&params.r_f, &params.sigma], |v| {
        let delta = 2.0 * v[0] / (v[1] * v[1]);
        -delta * v[1]
    });
    Ok((drift, vol))
}

/// Residual of the single-asset pricing equation at the perpetual solution,
/// r_f g - g_t - r_f S g_S - (sigma^2 S^2 / 2) g_SS, evaluated through
/// analytic partials. Exact cancellation should leave only rounding noise,
/// bounded by 1e-10 |g|.
pub fn perpetual_pde_residual(spec: &PerpetualSpec, t: f64, s: f64) -> Result<f64> {
    spec.validate()?;
    let (Some(r_f), Some(sigma)) = (spec.r_f.constant_value(), spec.sigma.constant_value())
    else {
        return Err(PricingError::InvalidInput(
            "the residual check needs constant coefficients".into(),
        ));
    };
    if !(s > 0.0 && s.is_finite()) {
        return Err(PricingError::InvalidInput(format!(
            "stock price must be positive, got {s}"
        )));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(PricingError::InvalidInput(format!(
            "time must be non-negative, got {t}"
        )));
    }
    let gamma = spec.gamma;
    let delta = delta_ratio(r_f, sigma)?;
    let xi = xi_value(delta, gamma);
    let power_part = s.powf(gamma) * (0.5 * xi * sigma * sigma * t).exp();
    let account_part = spec.h0 * (r_f * t).exp();
    let g = power_part + account_part;
    let g_s = gamma * power_part / s;
    let g_ss = gamma * (gamma - 1.0) * power_part / (s * s);
    let g_t = 0.5 * xi * sigma * sigma * power_part + r_f * account_part;
    Ok(r_f * g - g_t - r_f * s * g_s - 0.5 * sigma * sigma * s * s * g_ss)
}

/// The return deflator pi_t = r_f(t) / mu(t), with the whole schedule checked
/// for boundedness of pi + 1/pi before the value at `t` is returned.
pub fn deflator_pi(params: &SingleAssetParams, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(PricingError::InvalidInput(format!(
            "time must be non-negative, got {t}"
        )));
    }
    let mu_t = params.mu.value_at(t);
    if mu_t == 0.0 {
        return Err(PricingError::ZeroDrift { t });
    }
    let mut sup: f64 = 0.0;
    for u in combined_breakpoints(&[&params.r_f, &params.mu]) {
        let mu_u = params.mu.value_at(u);
        let pi_u = if mu_u == 0.0 {
            f64::INFINITY
        } else {
            (params.r_f.value_at(u) / mu_u).abs()
        };
        let size = if pi_u == 0.0 || !pi_u.is_finite() {
            f64::INFINITY
        } else {
            pi_u + 1.0 / pi_u
        };
        sup = sup.max(size);
    }
    if !(sup <= MAX_DEFLATOR_SUP) {
        return Err(PricingError::UnboundedDeflator {
            sup,
            bound: MAX_DEFLATOR_SUP,
        });
    }
    Ok(params.r_f.value_at(t) / mu_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{self, DualAssetParams};
    use crate::monte_carlo::{simulate_p_single, McConfig};

    /// Daily-scale reference constants used throughout.
    const DAILY_MU: f64 = 4.38e-4;
    const DAILY_SIGMA: f64 = 1.935e-2;
    const DAILY_R_F: f64 = 1.635e-4;

    /// Frozen oracle values for the daily constants.
    const DAILY_DELTA: f64 = 0.8733449512248863;
    const DAILY_MU_TILDE: f64 = -7.623318911123133e-5;
    const DAILY_SIGMA_TILDE: f64 = -0.01689922480620155;

    #[test]
    fn delta_ratio_reference_value() {
        let delta = delta_ratio(DAILY_R_F, DAILY_SIGMA).unwrap();
        assert!((delta - DAILY_DELTA).abs() < 1e-15);
        assert!(delta_ratio(0.05, 0.0).is_err());
        assert!(delta_ratio(0.05, -0.2).is_err());
    }

    #[test]
    fn xi_roots_endpoints_and_maximum() {
        let delta = DAILY_DELTA;
        assert_eq!(xi_value(delta, 1.0), 0.0);
        assert_eq!(xi_value(delta, -delta), 0.0);
        assert_eq!(xi_value(delta, 0.0), delta);
        assert!((xi_value(delta, 1.0 - delta) - delta).abs() < 1e-15);
        let peak = (1.0 + delta) * (1.0 + delta) / 4.0;
        assert!((xi_value(delta, (1.0 - delta) / 2.0) - peak).abs() < 1e-15);
        // Concavity: interior values exceed chords.
        for gamma in [-1.0, -0.3, 0.2, 0.7] {
            let mid = xi_value(delta, gamma);
            let chord = 0.5 * (xi_value(delta, gamma - 0.5) + xi_value(delta, gamma + 0.5));
            assert!(mid > chord);
        }
    }

    #[test]
    fn named_points_for_the_reference_delta() {
        let delta = 0.87332;
        let named = named_xi_points(delta).unwrap();
        let labels: Vec<_> = named.iter().map(|p| p.label.unwrap()).collect();
        assert_eq!(
            labels,
            vec![
                XiLabel::A,
                XiLabel::B,
                XiLabel::C,
                XiLabel::D,
                XiLabel::E,
                XiLabel::F,
                XiLabel::G
            ]
        );
        assert!(named.windows(2).all(|w| w[0].gamma < w[1].gamma));
        // Fixed points satisfy xi(gamma) = gamma.
        for idx in [0, 5] {
            assert!(
                (named[idx].xi - named[idx].gamma).abs() < 1e-12,
                "fixed point {:?}",
                named[idx]
            );
        }
        assert!((named[0].gamma - -1.4681598572951913).abs() < 1e-12);
        assert!((named[5].gamma - 0.5948398572951912).abs() < 1e-12);
        // Roots of xi.
        assert_eq!(named[1].xi, 0.0);
        assert_eq!(named[6].xi, 0.0);
        // Bank-account growth points.
        assert_eq!(named[2].xi, delta);
        assert!((named[4].xi - delta).abs() < 1e-15);
        // Maximum.
        assert!((named[3].gamma - 0.06334).abs() < 1e-15);
        assert!((named[3].xi - 0.8773319556).abs() < 1e-9);
        let peak = (1.0 + delta) * (1.0 + delta) / 4.0;
        assert!((named[3].xi - peak).abs() < 1e-15);

        assert!(named_xi_points(0.0).is_err());
        assert!(named_xi_points(-1.0).is_err());
    }

    #[test]
    fn curve_merges_grid_and_named_points() {
        let delta = 0.87332;
        let grid = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let curve = xi_curve(delta, &grid).unwrap();
        assert_eq!(curve.len(), grid.len() + 5);
        assert!(curve.windows(2).all(|w| w[0].gamma <= w[1].gamma));
        let labeled: Vec<_> = curve.iter().filter_map(|p| p.label).collect();
        assert_eq!(labeled.len(), 7);
        let at_zero = curve.iter().find(|p| p.gamma == 0.0).unwrap();
        assert_eq!(at_zero.label, Some(XiLabel::C));
        let at_one = curve.iter().find(|p| p.gamma == 1.0).unwrap();
        assert_eq!(at_one.label, Some(XiLabel::G));
        for p in &curve {
            assert!((p.xi - xi_value(delta, p.gamma)).abs() < 1e-15);
        }
        assert!(xi_curve(delta, &[f64::NAN]).is_err());
    }

    #[test]
    fn price_special_cases() {
        let stock = PerpetualSpec::constant(1.0, 0.05, 0.2, 0.1).unwrap();
        let g = perpetual_price(&stock, 3.0, 123.45).unwrap();
        assert!((g - 123.45).abs() <= 1e-13 * 123.45);

        let bank = PerpetualSpec::constant(0.0, 0.05, 0.2, 0.1).unwrap();
        let g = perpetual_price(&bank, 3.0, 123.45).unwrap();
        assert!((g - (0.15f64).exp()).abs() <= 1e-13);

        let spec =
            PerpetualSpec::constant(-DAILY_DELTA, DAILY_R_F, DAILY_SIGMA, DAILY_MU).unwrap();
        assert_eq!(perpetual_price(&spec, 0.0, 1.0).unwrap(), 1.0);

        let funded = PerpetualSpec::constant(0.0, 0.05, 0.2, 0.1)
            .unwrap()
            .with_h0(2.0);
        let g = perpetual_price(&funded, 3.0, 50.0).unwrap();
        assert!((g - 3.0 * (0.15f64).exp()).abs() <= 1e-12);
    }

    #[test]
    fn constant_coefficients_collapse_to_the_xi_exponent() {
        let spec = PerpetualSpec::constant(0.7, 0.05, 0.2, 0.1).unwrap();
        let delta = delta_ratio(0.05, 0.2).unwrap();
        let expected =
            80f64.powf(0.7) * (0.5 * xi_value(delta, 0.7) * 0.04 * 2.0).exp();
        let g = perpetual_price(&spec, 2.0, 80.0).unwrap();
        assert!((g - expected).abs() <= 1e-13 * expected, "{g} vs {expected}");
    }

    #[test]
    fn no_time_factor_at_the_negative_delta_exponent() {
        let delta = delta_ratio(0.05, 0.2).unwrap();
        let spec = PerpetualSpec::constant(-delta, 0.05, 0.2, 0.1).unwrap();
        for t in [0.0, 1.0, 7.5] {
            let g = perpetual_price(&spec, t, 42.0).unwrap();
            let bare = 42f64.powf(-delta);
            assert!((g - bare).abs() <= 1e-12 * bare, "t = {t}: {g} vs {bare}");
        }
    }

    #[test]
    fn schedule_exponent_integrates_piecewise() {
        let spec = PerpetualSpec::new(
            0.5,
            Param::piecewise(vec![(0.0, 0.05), (1.0, 0.02)]).unwrap(),
            Param::piecewise(vec![(0.0, 0.2), (0.5, 0.3)]).unwrap(),
            Param::Constant(0.1),
        )
        .unwrap();
        // Segment-by-segment sum of (1 - gamma)(r_f + sigma^2 gamma / 2).
        let eta = |r: f64, s: f64| 0.5 * (r + 0.25 * s * s);
        let exponent = eta(0.05, 0.2) * 0.5 + eta(0.05, 0.3) * 0.5 + eta(0.02, 0.3) * 1.0;
        let expected = 100f64.powf(0.5) * exponent.exp();
        let g = perpetual_price(&spec, 2.0, 100.0).unwrap();
        assert!((g - expected).abs() <= 1e-13 * expected, "{g} vs {expected}");
    }

    #[test]
    fn dynamics_match_the_reference_daily_values() {
        let spec =
            PerpetualSpec::constant(-DAILY_DELTA, DAILY_R_F, DAILY_SIGMA, DAILY_MU).unwrap();
        let (mu_tilde, sigma_tilde) = perpetual_dynamics(&spec).unwrap();
        let mu_tilde = mu_tilde.constant_value().unwrap();
        let sigma_tilde = sigma_tilde.constant_value().unwrap();
        assert!((mu_tilde - DAILY_MU_TILDE).abs() < 1e-16);
        assert!((sigma_tilde - DAILY_SIGMA_TILDE).abs() < 1e-16);
        // The rounded value quoted for this drift.
        assert!((mu_tilde - -7.62e-5).abs() < 5e-8);
    }

    #[test]
    fn stock_and_bank_dynamics_are_degenerate_cases() {
        let stock = PerpetualSpec::constant(1.0, 0.05, 0.2, 0.1).unwrap();
        let (m, s) = perpetual_dynamics(&stock).unwrap();
        assert_eq!(m.constant_value().unwrap(), 0.1);
        assert_eq!(s.constant_value().unwrap(), 0.2);

        let bank = PerpetualSpec::constant(0.0, 0.05, 0.2, 0.1).unwrap();
        let (m, s) = perpetual_dynamics(&bank).unwrap();
        assert_eq!(m.constant_value().unwrap(), 0.05);
        assert_eq!(s.constant_value().unwrap(), 0.0);
    }

    #[test]
    fn nonzero_h0_blocks_the_dynamics() {
        let spec = PerpetualSpec::constant(0.5, 0.05, 0.2, 0.1)
            .unwrap()
            .with_h0(5.0);
        match perpetual_dynamics(&spec) {
            Err(PricingError::RequiresZeroH0 { h0 }) => assert_eq!(h0, 5.0),
            other => panic!("expected RequiresZeroH0, got {other:?}"),
        }
    }

    #[test]
    fn shadow_rate_recovers_the_riskless_rate_for_every_exponent() {
        let r_f = Param::piecewise(vec![(0.0, 0.05), (0.8, 0.03)]).unwrap();
        let sigma = Param::piecewise(vec![(0.0, 0.2), (0.4, 0.35)]).unwrap();
        let mu = Param::Constant(0.11);
        for gamma in [-2.0, -0.5, 0.5, 2.0, -DAILY_DELTA] {
            let spec =
                PerpetualSpec::new(gamma, r_f.clone(), sigma.clone(), mu.clone()).unwrap();
            let (mu_tilde, sigma_tilde) = perpetual_dynamics(&spec).unwrap();
            let pair =
                DualAssetParams::new(mu.clone(), sigma.clone(), mu_tilde, sigma_tilde).unwrap();
            for t in [0.0, 0.5, 1.3] {
                let rate = market::shadow_rate(&pair, t).unwrap();
                let expected = r_f.value_at(t);
                assert!(
                    (rate - expected).abs() <= 1e-12 * expected.abs().max(1.0),
                    "gamma = {gamma}, t = {t}: {rate} vs {expected}"
                );
            }
        }

        let stock = PerpetualSpec::new(1.0, r_f, sigma.clone(), mu.clone()).unwrap();
        let (mu_tilde, sigma_tilde) = perpetual_dynamics(&stock).unwrap();
        let pair = DualAssetParams::new(mu, sigma, mu_tilde, sigma_tilde).unwrap();
        assert!(matches!(
            market::shadow_rate(&pair, 0.0),
            Err(PricingError::DegenerateVolatilitySpread { .. })
        ));
    }

    #[test]
    fn negative_delta_power_dynamics_line_up() {
        let params = SingleAssetParams::constant(DAILY_MU, DAILY_SIGMA, DAILY_R_F).unwrap();
        let (drift, vol) = s_minus_delta_dynamics(&params).unwrap();
        let drift = drift.constant_value().unwrap();
        let vol = vol.constant_value().unwrap();
        assert!((drift - DAILY_MU_TILDE).abs() < 1e-16);
        assert!((vol - DAILY_SIGMA_TILDE).abs() < 1e-16);

        // Same numbers as the perpetual dynamics at gamma = -delta.
        let spec =
            PerpetualSpec::constant(-DAILY_DELTA, DAILY_R_F, DAILY_SIGMA, DAILY_MU).unwrap();
        let (mu_tilde, sigma_tilde) = perpetual_dynamics(&spec).unwrap();
        assert!((drift - mu_tilde.constant_value().unwrap()).abs() < 1e-18);
        assert!((vol - sigma_tilde.constant_value().unwrap()).abs() < 1e-18);

        // mu = r_f collapses the drift to r_f.
        let balanced = SingleAssetParams::constant(0.04, 0.25, 0.04).unwrap();
        let (drift, _) = s_minus_delta_dynamics(&balanced).unwrap();
        let drift = drift.constant_value().unwrap();
        assert!((drift - 0.04).abs() <= 1e-15);
    }

    #[test]
    fn pde_residual_vanishes_on_solutions() {
        let stock = PerpetualSpec::constant(1.0, 0.05, 0.2, 0.1).unwrap();
        let r = perpetual_pde_residual(&stock, 2.0, 77.0).unwrap();
        assert!(r.abs() <= 1e-13 * 77.0);

        let spec =
            PerpetualSpec::constant(-DAILY_DELTA, DAILY_R_F, DAILY_SIGMA, DAILY_MU).unwrap();
        for (t, s) in [(0.0, 1.0), (10.0, 1.2), (100.0, 0.8)] {
            let g = perpetual_price(&spec, t, s).unwrap();
            let r = perpetual_pde_residual(&spec, t, s).unwrap();
            assert!(r.abs() <= 1e-12 * g.abs(), "t = {t}, s = {s}: {r}");
        }

        for gamma in [-3.0, -1.2, 0.3, 0.9, 2.5] {
            for (r_f, sigma) in [(0.01, 0.15), (0.1, 0.15), (0.01, 0.6), (0.1, 0.6)] {
                let spec = PerpetualSpec::constant(gamma, r_f, sigma, 0.1)
                    .unwrap()
                    .with_h0(0.3);
                for (t, s) in [(0.5, 0.2), (0.5, 150.0), (7.0, 0.2), (7.0, 150.0)] {
                    let g = perpetual_price(&spec, t, s).unwrap();
                    let r = perpetual_pde_residual(&spec, t, s).unwrap();
                    assert!(
                        r.abs() <= 1e-10 * g.abs(),
                        "gamma = {gamma}, r_f = {r_f}, sigma = {sigma}, t = {t}, s = {s}: {r}"
                    );
                }
            }
        }

        let scheduled = PerpetualSpec::new(
            0.5,
            Param::piecewise(vec![(0.0, 0.05), (1.0, 0.02)]).unwrap(),
            Param::Constant(0.2),
            Param::Constant(0.1),
        )
        .unwrap();
        assert!(perpetual_pde_residual(&scheduled, 1.0, 100.0).is_err());
    }

    #[test]
    fn deflator_values_and_schedule_bounds() {
        let params = SingleAssetParams::constant(0.10, 0.2, 0.05).unwrap();
        assert_eq!(deflator_pi(&params, 0.7).unwrap(), 0.5);

        let identity = SingleAssetParams::constant(0.07, 0.2, 0.07).unwrap();
        assert_eq!(deflator_pi(&identity, 0.0).unwrap(), 1.0);

        let vanishing_drift = SingleAssetParams::new(
            Param::piecewise(vec![(0.0, 0.1), (1.0, 1e-14)]).unwrap(),
            Param::Constant(0.2),
            Param::Constant(0.05),
        )
        .unwrap();
        assert!(matches!(
            deflator_pi(&vanishing_drift, 0.5),
            Err(PricingError::UnboundedDeflator { .. })
        ));

        let zero_drift_later = SingleAssetParams::new(
            Param::piecewise(vec![(0.0, 0.1), (1.0, 0.0)]).unwrap(),
            Param::Constant(0.2),
            Param::Constant(0.05),
        )
        .unwrap();
        assert!(matches!(
            deflator_pi(&zero_drift_later, 1.5),
            Err(PricingError::ZeroDrift { .. })
        ));
        assert!(matches!(
            deflator_pi(&zero_drift_later, 0.2),
            Err(PricingError::UnboundedDeflator { .. })
        ));

        let zero_rate = SingleAssetParams::constant(0.1, 0.2, 0.0).unwrap();
        assert!(matches!(
            deflator_pi(&zero_rate, 0.0),
            Err(PricingError::UnboundedDeflator { .. })
        ));
    }

    #[test]
    fn companion_returns_move_exactly_against_the_stock() {
        let params = SingleAssetParams::constant(0.10, 0.2, 0.04).unwrap();
        let delta = delta_ratio(0.04, 0.2).unwrap();
        let (drift, vol) = s_minus_delta_dynamics(&params).unwrap();
        let (mu_c, sigma_c) = (
            drift.constant_value().unwrap(),
            vol.constant_value().unwrap(),
        );
        assert!(sigma_c < 0.0);
        assert!((delta - 2.0).abs() < 1e-15);

        let n_steps = 252;
        let dt = 1.0 / n_steps as f64;
        let cfg = McConfig::new(2, 97).with_steps(n_steps);
        let batch = simulate_p_single(100.0, &params, 1.0, &cfg, false).unwrap();
        let row = &batch.paths[0];
        let m_s = (0.10 - 0.5 * 0.04) * dt;
        let v_s = 0.2 * dt.sqrt();
        let m_c = (mu_c - 0.5 * sigma_c * sigma_c) * dt;
        let v_c = sigma_c * dt.sqrt();
        let mut stock_returns = Vec::with_capacity(n_steps);
        let mut companion_returns = Vec::with_capacity(n_steps);
        for k in 0..n_steps {
            let r_s = (row[k + 1] / row[k]).ln();
            let xi = (r_s - m_s) / v_s;
            stock_returns.push(r_s);
            companion_returns.push(m_c + v_c * xi);
        }
        let corr = pearson(&stock_returns, &companion_returns);
        assert!(corr <= -1.0 + 1e-12, "correlation {corr}");
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (x, y) in a.iter().zip(b) {
            cov += (x - ma) * (y - mb);
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
        }
        cov / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn validation_rejects_degenerate_specs() {
        assert!(PerpetualSpec::constant(f64::NAN, 0.05, 0.2, 0.1).is_err());
        assert!(PerpetualSpec::constant(0.5, 0.05, 0.0, 0.1).is_err());
        assert!(PerpetualSpec::constant(0.5, 0.05, -0.2, 0.1).is_err());
        let zero_vol_segment = PerpetualSpec::new(
            0.5,
            Param::Constant(0.05),
            Param::piecewise(vec![(0.0, 0.2), (1.0, 0.0)]).unwrap(),
            Param::Constant(0.1),
        );
        assert!(zero_vol_segment.is_err());

        let spec = PerpetualSpec::constant(0.5, 0.05, 0.2, 0.1).unwrap();
        assert!(perpetual_price(&spec, 1.0, 0.0).is_err());
        assert!(perpetual_price(&spec, 1.0, -3.0).is_err());
        assert!(perpetual_price(&spec, -0.5, 100.0).is_err());
    }
}
