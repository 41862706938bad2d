//! Closed-form European pricing in the two-risky-asset market.
//!
//! The payoff max(0, eta S_T + (1-eta) Z_T - K) admits an exact formula once
//! the exercise boundary y* is found: y* is the root of a strictly increasing
//! sum of two exponentials, and the price is a three-term normal-CDF
//! expression evaluated at d = -y*. A direct quadrature of the same
//! expectation is provided as an independent route to the identical number.

use crate::error::{PricingError, Result};
use crate::market::{DualAssetParams, OptionSpec};
use crate::normal::{normal_cdf, normal_pdf};
use crate::quadrature::adaptive_simpson;
use crate::rootfind::{solve_increasing, RootResult};
use crate::{market, schedule::Param};

/// Default absolute tolerance on the exercise boundary y*.
pub const Y_STAR_TOLERANCE: f64 = 1e-13;
/// Default absolute tolerance for the quadrature route.
pub const QUADRATURE_TOLERANCE: f64 = 1e-10;
const QUADRATURE_BUDGET: u64 = 2_000_000;

/// Frozen scalar inputs for the closed form (constant coefficients only).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LrClosedFormInputs {
    pub s: f64,
    pub z: f64,
    pub eta: f64,
    pub strike: f64,
    /// Time to maturity T - t.
    pub tau: f64,
    pub r_bar: f64,
    pub sigma: f64,
    pub sigma_tilde: f64,
}

impl LrClosedFormInputs {
    /// Builds inputs from a constant-coefficient market observed at time `t`.
    pub fn new(
        s: f64,
        z: f64,
        params: &DualAssetParams,
        spec: &OptionSpec,
        t: f64,
    ) -> Result<Self> {
        if !params.is_constant() {
            return Err(PricingError::InvalidInput(
                "closed form requires constant coefficients; use the tree or Monte Carlo for schedules"
                    .into(),
            ));
        }
        spec.validate()?;
        let r_bar = market::shadow_rate(params, t)?;
        let (_, sigma, _, sigma_tilde) = params.at(t);
        Self::from_parts(
            s,
            z,
            spec.eta,
            spec.strike,
            spec.maturity - t,
            r_bar,
            sigma,
            sigma_tilde,
        )
    }

    /// Builds inputs from already-reduced scalars (shadow rate supplied directly).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        s: f64,
        z: f64,
        eta: f64,
        strike: f64,
        tau: f64,
        r_bar: f64,
        sigma: f64,
        sigma_tilde: f64,
    ) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) || !(z > 0.0 && z.is_finite()) {
            return Err(PricingError::InvalidInput(format!(
                "spot prices must be positive, got s = {s}, z = {z}"
            )));
        }
        if !(strike > 0.0 && strike.is_finite()) {
            return Err(PricingError::InvalidInput(format!(
                "strike must be positive, got {strike}"
            )));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(PricingError::InvalidInput(format!(
                "eta must lie in [0, 1], got {eta}"
            )));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(PricingError::MaturityDegenerate { tau });
        }
        if !(sigma > 0.0 && sigma_tilde > 0.0) {
            return Err(PricingError::InvalidInput(format!(
                "volatilities must be positive, got sigma = {sigma}, sigma_tilde = {sigma_tilde}"
            )));
        }
        if !r_bar.is_finite() {
            return Err(PricingError::InvalidInput(format!(
                "shadow rate must be finite, got {r_bar}"
            )));
        }
        Ok(LrClosedFormInputs {
            s,
            z,
            eta,
            strike,
            tau,
            r_bar,
            sigma,
            sigma_tilde,
        })
    }

    /// Cumulative shadow rate m = r tau.
    #[inline]
    pub fn m(&self) -> f64 {
        self.r_bar * self.tau
    }

    /// Cumulative volatility w = sigma sqrt(tau).
    #[inline]
    pub fn w(&self) -> f64 {
        self.sigma * self.tau.sqrt()
    }

    #[inline]
    pub fn w_tilde(&self) -> f64 {
        self.sigma_tilde * self.tau.sqrt()
    }

    /// Signed spread dw = w - w_tilde.
    #[inline]
    pub fn dw(&self) -> f64 {
        self.w() - self.w_tilde()
    }
}

/// Log-normal terminal distribution of (S_T, Z_T) under the S-numeraire measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalLogParams {
    pub mean_log_s: f64,
    pub sd_log_s: f64,
    pub mean_log_z: f64,
    pub sd_log_z: f64,
}

/// Mean/sd of log S_T and log Z_T under the pricing measure.
pub fn lognormal_terminal_params(inputs: &LrClosedFormInputs) -> TerminalLogParams {
    let (m, w, wt) = (inputs.m(), inputs.w(), inputs.w_tilde());
    TerminalLogParams {
        mean_log_s: inputs.s.ln() + m + 0.5 * w * w,
        sd_log_s: w,
        mean_log_z: inputs.z.ln() + m + w * wt - 0.5 * wt * wt,
        sd_log_z: wt,
    }
}

fn boundary_terms(inputs: &LrClosedFormInputs) -> (f64, f64, f64, f64, f64, f64) {
    let (m, w, wt) = (inputs.m(), inputs.w(), inputs.w_tilde());
    // F(y) = a1 exp(w y) + a2 exp(wt y) - K with a1, a2 >= 0.
    let a1 = inputs.eta * inputs.s * (m + 0.5 * w * w).exp();
    let a2 = (1.0 - inputs.eta) * inputs.z * (m + w * wt - 0.5 * wt * wt).exp();
    (a1, a2, w, wt, m, inputs.strike)
}

/// Solves for the exercise boundary y* where the discounted exercise equation
/// `eta S e^{m + w^2/2 + w y} + (1-eta) Z e^{m + w wt - wt^2/2 + wt y} = K` holds.
pub fn solve_y_star(inputs: &LrClosedFormInputs, x_tol: f64) -> Result<RootResult> {
    let (a1, a2, w, wt, _, k) = boundary_terms(inputs);
    if a1 == 0.0 && a2 == 0.0 {
        return Err(PricingError::NoRoot(
            "payoff has no exposure to either asset".into(),
        ));
    }
    let f = |y: f64| {
        let mut v = -k;
        if a1 > 0.0 {
            v += a1 * (w * y).exp();
        }
        if a2 > 0.0 {
            v += a2 * (wt * y).exp();
        }
        v
    };
    let df = |y: f64| {
        let mut v = 0.0;
        if a1 > 0.0 {
            v += a1 * w * (w * y).exp();
        }
        if a2 > 0.0 {
            v += a2 * wt * (wt * y).exp();
        }
        v
    };
    solve_increasing(f, df, -50.0, 50.0, x_tol)
}

/// Closed-form price of the portfolio call.
pub fn lr_call_price(inputs: &LrClosedFormInputs) -> Result<f64> {
    Ok(lr_call_price_detailed(inputs)?.0)
}

/// Closed-form price together with the boundary d = -y*.
pub fn lr_call_price_detailed(inputs: &LrClosedFormInputs) -> Result<(f64, f64)> {
    let root = solve_y_star(inputs, Y_STAR_TOLERANCE)?;
    let d = -root.root;
    let (m, w, wt) = (inputs.m(), inputs.w(), inputs.w_tilde());
    let dw = w - wt;
    let price = inputs.eta * inputs.s * normal_cdf(d)
        + (1.0 - inputs.eta) * inputs.z * normal_cdf(d - dw)
        - inputs.strike * (-m).exp() * normal_cdf(d - w);
    if !price.is_finite() {
        return Err(PricingError::Overflow(format!(
            "closed-form price overflowed at d = {d}"
        )));
    }
    Ok((price, d))
}

/// Quadrature route to the same price: integrates the terminal expectation
/// integrand from y* upward. Independent of the CDF assembly above; used to
/// cross-check the closed form.
pub fn lr_call_price_quadrature(inputs: &LrClosedFormInputs, abs_tol: f64) -> Result<f64> {
    let root = solve_y_star(inputs, Y_STAR_TOLERANCE)?;
    let y_star = root.root;
    let (m, w, wt) = (inputs.m(), inputs.w(), inputs.w_tilde());
    let dw = w - wt;
    let eta = inputs.eta;
    let (s, z, k) = (inputs.s, inputs.z, inputs.strike);

    // Each term is a Gaussian density shifted by 0, dw, or w. The limits keep
    // less than Phi(-12) of every term's mass outside the window, so a
    // boundary far below the support can be clipped without moving the value.
    let lower = y_star.max(-12.0 - w);
    let upper = 12.0 + y_star.max(0.0).max(-dw);
    let integrand = |y: f64| {
        (eta * s + (1.0 - eta) * z * (-0.5 * dw * dw - dw * y).exp()
            - k * (-m - 0.5 * w * w - w * y).exp())
            * normal_pdf(y)
    };
    let q = adaptive_simpson(integrand, lower, upper, abs_tol, QUADRATURE_BUDGET)?;
    Ok(q.value)
}

/// Standard lognormal call with rate `r` and volatility `sigma` (tau = 0 returns intrinsic).
pub fn black_scholes_call(s: f64, k: f64, r: f64, sigma: f64, tau: f64) -> Result<f64> {
    if !(s > 0.0 && k > 0.0) {
        return Err(PricingError::InvalidInput(format!(
            "spot and strike must be positive, got s = {s}, k = {k}"
        )));
    }
    if tau < 0.0 || !tau.is_finite() {
        return Err(PricingError::MaturityDegenerate { tau });
    }
    if tau == 0.0 {
        return Ok((s - k).max(0.0));
    }
    if !(sigma > 0.0) {
        return Err(PricingError::InvalidInput(format!(
            "volatility must be positive, got {sigma}"
        )));
    }
    let sq = sigma * tau.sqrt();
    let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * tau) / sq;
    Ok(s * normal_cdf(d1) - k * (-r * tau).exp() * normal_cdf(d1 - sq))
}

/// Convenience: closed-form price straight from market data at time `t`.
pub fn lr_call_price_from_market(
    s: f64,
    z: f64,
    params: &DualAssetParams,
    spec: &OptionSpec,
    t: f64,
) -> Result<f64> {
    lr_call_price(&LrClosedFormInputs::new(s, z, params, spec, t)?)
}

/// A generous price ceiling: the discounted portfolio forward can exceed the
/// spot portfolio only through the Z drift adjustment.
pub fn price_upper_bound(inputs: &LrClosedFormInputs) -> f64 {
    let (w, wt) = (inputs.w(), inputs.w_tilde());
    inputs.eta * inputs.s
        + (1.0 - inputs.eta) * inputs.z * (w * wt - 0.5 * wt * wt).abs().exp()
}

/// Builds a constant market whose shadow rate is exactly `r_bar` by giving
/// both assets the same Sharpe ratio `lambda`.
pub fn market_with_shadow_rate(
    r_bar: f64,
    lambda: f64,
    sigma: f64,
    sigma_tilde: f64,
) -> Result<DualAssetParams> {
    DualAssetParams::new(
        Param::Constant(r_bar + lambda * sigma),
        Param::Constant(sigma),
        Param::Constant(r_bar + lambda * sigma_tilde),
        Param::Constant(sigma_tilde),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eta_half() -> LrClosedFormInputs {
        LrClosedFormInputs::from_parts(100.0, 100.0, 0.5, 100.0, 1.0, 0.05, 0.2, 0.4).unwrap()
    }

    #[test]
    fn eta_one_boundary_is_analytic() {
        // With eta = 1 the root is (ln(K/S) - m - w^2/2)/w = -0.35 exactly.
        let inp =
            LrClosedFormInputs::from_parts(100.0, 100.0, 1.0, 100.0, 1.0, 0.05, 0.2, 0.4).unwrap();
        let r = solve_y_star(&inp, 1e-13).unwrap();
        assert_relative_eq!(r.root, -0.35, epsilon = 1e-12);
    }

    #[test]
    fn eta_one_reduces_to_black_scholes() {
        let inp =
            LrClosedFormInputs::from_parts(100.0, 77.0, 1.0, 100.0, 1.0, 0.05, 0.2, 0.4).unwrap();
        let c = lr_call_price(&inp).unwrap();
        assert_relative_eq!(c, 10.450_583_572_185_566, epsilon = 1e-12);
        assert_relative_eq!(
            c,
            black_scholes_call(100.0, 100.0, 0.05, 0.2, 1.0).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn eta_zero_reduces_to_black_scholes_on_z() {
        // The sigma dependence cancels identically at eta = 0.
        let inp =
            LrClosedFormInputs::from_parts(120.0, 80.0, 0.0, 90.0, 2.5, 0.03, 0.5, 0.15).unwrap();
        let c = lr_call_price(&inp).unwrap();
        assert_relative_eq!(c, 6.092_888_261_221_22, epsilon = 1e-11);
        assert_relative_eq!(
            c,
            black_scholes_call(80.0, 90.0, 0.03, 0.15, 2.5).unwrap(),
            epsilon = 1e-11
        );
    }

    #[test]
    fn mixed_portfolio_reference_values() {
        let c = lr_call_price(&eta_half()).unwrap();
        assert_relative_eq!(c, 14.172_614_262_684_059, epsilon = 1e-11);
        let r = solve_y_star(&eta_half(), 1e-13).unwrap();
        assert_relative_eq!(r.root, -0.201_514_958_310_978_65, epsilon = 1e-11);

        let inp2 =
            LrClosedFormInputs::from_parts(120.0, 80.0, 0.25, 90.0, 2.5, 0.03, 0.5, 0.15).unwrap();
        assert_relative_eq!(
            lr_call_price(&inp2).unwrap(),
            17.502_629_133_646_817,
            epsilon = 1e-11
        );
        let r2 = solve_y_star(&inp2, 1e-13).unwrap();
        assert_relative_eq!(r2.root, -0.690_365_269_054_902_7, epsilon = 1e-11);
    }

    #[test]
    fn quadrature_route_agrees_with_closed_form() {
        let cases = [
            eta_half(),
            LrClosedFormInputs::from_parts(120.0, 80.0, 0.25, 90.0, 2.5, 0.03, 0.5, 0.15).unwrap(),
            LrClosedFormInputs::from_parts(100.0, 100.0, 1.0, 100.0, 1.0, 0.05, 0.2, 0.4).unwrap(),
            LrClosedFormInputs::from_parts(50.0, 199.0, 0.1, 100.0, 5.0, -0.01, 0.75, 0.06)
                .unwrap(),
        ];
        for inp in cases {
            let c = lr_call_price(&inp).unwrap();
            let q = lr_call_price_quadrature(&inp, QUADRATURE_TOLERANCE).unwrap();
            assert!(
                (c - q).abs() <= 1e-8,
                "closed form {c} vs quadrature {q} (diff {:e})",
                (c - q).abs()
            );
        }
    }

    #[test]
    fn quadrature_handles_deep_in_the_money_boundary() {
        // y* sits near -62; a naive 12-unit window above it would miss all mass.
        let inp =
            LrClosedFormInputs::from_parts(200.0, 100.0, 1.0, 100.0, 0.05, 0.05, 0.05, 0.1)
                .unwrap();
        let y = solve_y_star(&inp, 1e-13).unwrap().root;
        assert!(y < -55.0, "expected deep boundary, got {y}");
        let c = lr_call_price(&inp).unwrap();
        let q = lr_call_price_quadrature(&inp, QUADRATURE_TOLERANCE).unwrap();
        assert!((c - q).abs() <= 1e-8, "closed {c} vs quad {q}");
        assert_relative_eq!(c, 200.0 - 100.0 * (-0.05f64 * 0.05).exp(), epsilon = 1e-9);
    }

    #[test]
    fn integrand_vanishes_at_the_boundary() {
        let inp = eta_half();
        let y = solve_y_star(&inp, 1e-13).unwrap().root;
        let (m, w, wt) = (inp.m(), inp.w(), inp.w_tilde());
        let dw = w - wt;
        let raw = inp.eta * inp.s + (1.0 - inp.eta) * inp.z * (-0.5 * dw * dw - dw * y).exp()
            - inp.strike * (-m - 0.5 * w * w - w * y).exp();
        assert!(raw.abs() < 1e-9, "integrand at y* = {raw}");
    }

    #[test]
    fn vanishing_strike_recovers_the_portfolio() {
        let inp =
            LrClosedFormInputs::from_parts(100.0, 100.0, 0.5, 1e-8, 1.0, 0.05, 0.2, 0.4).unwrap();
        let c = lr_call_price(&inp).unwrap();
        assert_relative_eq!(c, 100.0, epsilon = 1e-7);
        let q = lr_call_price_quadrature(&inp, QUADRATURE_TOLERANCE).unwrap();
        assert!((c - q).abs() <= 1e-8);
    }

    #[test]
    fn short_maturity_approaches_intrinsic() {
        let inp =
            LrClosedFormInputs::from_parts(110.0, 105.0, 0.5, 100.0, 1e-8, 0.05, 0.2, 0.4).unwrap();
        let c = lr_call_price(&inp).unwrap();
        assert_relative_eq!(c, 7.5, epsilon = 1e-4);
    }

    #[test]
    fn monotone_in_strike_and_spots() {
        let base = eta_half();
        let mut k_prev = lr_call_price(&base).unwrap();
        for k in [105.0, 120.0, 150.0, 220.0] {
            let mut inp = base;
            inp.strike = k;
            let c = lr_call_price(&inp).unwrap();
            assert!(c < k_prev, "price must fall as strike rises");
            k_prev = c;
        }
        let mut up_s = base;
        up_s.s = 130.0;
        assert!(lr_call_price(&up_s).unwrap() > lr_call_price(&base).unwrap());
        let mut up_z = base;
        up_z.z = 130.0;
        assert!(lr_call_price(&up_z).unwrap() > lr_call_price(&base).unwrap());
    }

    #[test]
    fn price_respects_bounds() {
        for inp in [
            eta_half(),
            LrClosedFormInputs::from_parts(120.0, 80.0, 0.25, 90.0, 2.5, 0.03, 0.5, 0.15).unwrap(),
        ] {
            let c = lr_call_price(&inp).unwrap();
            assert!(c >= 0.0);
            assert!(c <= price_upper_bound(&inp));
        }
    }

    #[test]
    fn terminal_log_params_reference() {
        let p = lognormal_terminal_params(
            &LrClosedFormInputs::from_parts(100.0, 100.0, 1.0, 100.0, 1.0, 0.05, 0.2, 0.4).unwrap(),
        );
        assert_relative_eq!(p.mean_log_s, 4.675170185988091, epsilon = 1e-12);
        assert_relative_eq!(p.sd_log_s, 0.2, epsilon = 1e-15);
        // Z under the S-numeraire measure picks up the covariance term.
        assert_relative_eq!(
            p.mean_log_z,
            100f64.ln() + 0.05 + 0.2 * 0.4 - 0.08,
            epsilon = 1e-12
        );
        assert_relative_eq!(p.sd_log_z, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            LrClosedFormInputs::from_parts(100.0, 100.0, 0.5, 100.0, 0.0, 0.05, 0.2, 0.4),
            Err(PricingError::MaturityDegenerate { .. })
        ));
        assert!(LrClosedFormInputs::from_parts(-1.0, 100.0, 0.5, 100.0, 1.0, 0.05, 0.2, 0.4)
            .is_err());
        assert!(LrClosedFormInputs::from_parts(100.0, 100.0, 1.5, 100.0, 1.0, 0.05, 0.2, 0.4)
            .is_err());
        assert!(LrClosedFormInputs::from_parts(100.0, 100.0, 0.5, 100.0, 1.0, 0.05, -0.2, 0.4)
            .is_err());
    }

    #[test]
    fn market_construction_with_schedule_is_rejected() {
        let params = DualAssetParams::new(
            Param::piecewise(vec![(0.0, 0.08), (0.5, 0.1)]).unwrap(),
            Param::Constant(0.2),
            Param::Constant(0.14),
            Param::Constant(0.4),
        )
        .unwrap();
        let spec = OptionSpec::portfolio_call(100.0, 1.0, 0.5).unwrap();
        assert!(LrClosedFormInputs::new(100.0, 100.0, &params, &spec, 0.0).is_err());
    }

    #[test]
    fn shadow_rate_market_builder_round_trips() {
        let m = market_with_shadow_rate(0.02, 0.3, 0.2, 0.4).unwrap();
        assert_relative_eq!(
            crate::market::shadow_rate(&m, 0.0).unwrap(),
            0.02,
            epsilon = 1e-14
        );
    }
}
