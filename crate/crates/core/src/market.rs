//! Two-risky-asset market primitives.
//!
//! A market of two risky assets S (the numeraire) and Z with no riskless
//! instrument still carries an implied "shadow" riskless rate: the unique rate
//! at which both assets earn the same Sharpe ratio. Everything downstream
//! (closed form, trees, simulation) is parameterized by this market.

use serde::{Deserialize, Serialize};

use crate::error::{PricingError, Result};
use crate::schedule::Param;

/// Default threshold below which |sigma_tilde - sigma| is considered degenerate.
pub const DEFAULT_VOL_SPREAD_EPSILON: f64 = 1e-10;

fn default_epsilon() -> f64 {
    DEFAULT_VOL_SPREAD_EPSILON
}

/// Coefficients of the joint GBM pair (S, Z); plain fields carry S, tilde fields carry Z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualAssetParams {
    pub mu: Param,
    pub sigma: Param,
    pub mu_tilde: Param,
    pub sigma_tilde: Param,
    /// Degeneracy threshold for the volatility spread.
    #[serde(default = "default_epsilon")]
    pub vol_spread_epsilon: f64,
}

impl DualAssetParams {
    pub fn new(mu: Param, sigma: Param, mu_tilde: Param, sigma_tilde: Param) -> Result<Self> {
        let p = DualAssetParams {
            mu,
            sigma,
            mu_tilde,
            sigma_tilde,
            vol_spread_epsilon: DEFAULT_VOL_SPREAD_EPSILON,
        };
        p.validate()?;
        Ok(p)
    }

    /// Constant-coefficient convenience constructor.
    pub fn constant(mu: f64, sigma: f64, mu_tilde: f64, sigma_tilde: f64) -> Result<Self> {
        Self::new(
            Param::Constant(mu),
            Param::Constant(sigma),
            Param::Constant(mu_tilde),
            Param::Constant(sigma_tilde),
        )
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.vol_spread_epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("mu", &self.mu),
            ("sigma", &self.sigma),
            ("mu_tilde", &self.mu_tilde),
            ("sigma_tilde", &self.sigma_tilde),
        ] {
            p.validate()
                .map_err(|e| PricingError::InvalidInput(format!("{name}: {e}")))?;
        }
        if !(self.vol_spread_epsilon > 0.0) {
            return Err(PricingError::InvalidInput(
                "vol_spread_epsilon must be positive".into(),
            ));
        }
        Ok(())
    }

    /// True when every coefficient is a single value.
    pub fn is_constant(&self) -> bool {
        self.mu.is_constant()
            && self.sigma.is_constant()
            && self.mu_tilde.is_constant()
            && self.sigma_tilde.is_constant()
    }

    /// (mu, sigma, mu_tilde, sigma_tilde) at time `t`.
    pub fn at(&self, t: f64) -> (f64, f64, f64, f64) {
        (
            self.mu.value_at(t),
            self.sigma.value_at(t),
            self.mu_tilde.value_at(t),
            self.sigma_tilde.value_at(t),
        )
    }
}

/// Coefficients of a single risky asset plus an external riskless yield.
///
/// Used by the deflated-return models, where the observed riskless rate `r_f`
/// exists but is not tradable inside the model market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleAssetParams {
    pub mu: Param,
    pub sigma: Param,
    pub r_f: Param,
}

impl SingleAssetParams {
    pub fn new(mu: Param, sigma: Param, r_f: Param) -> Result<Self> {
        mu.validate()?;
        sigma.validate()?;
        r_f.validate()?;
        Ok(SingleAssetParams { mu, sigma, r_f })
    }

    pub fn constant(mu: f64, sigma: f64, r_f: f64) -> Result<Self> {
        Self::new(
            Param::Constant(mu),
            Param::Constant(sigma),
            Param::Constant(r_f),
        )
    }

    /// Deflated volatility sigma_R = sigma * r_f / mu at time `t`.
    pub fn sigma_r_at(&self, t: f64) -> Result<f64> {
        let mu = self.mu.value_at(t);
        if mu == 0.0 {
            return Err(PricingError::ZeroDrift { t });
        }
        Ok(self.sigma.value_at(t) * self.r_f.value_at(t) / mu)
    }
}

/// Terminal payoff selector for the standard contracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayoffKind {
    /// max(0, eta S + (1 - eta) Z - K).
    PortfolioCall,
    /// max(0, S - K); ignores Z and eta.
    SingleAssetCall,
}

/// European contract terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub strike: f64,
    pub maturity: f64,
    /// Portfolio weight on S in the payoff, in [0, 1].
    pub eta: f64,
    pub payoff: PayoffKind,
}

impl OptionSpec {
    pub fn portfolio_call(strike: f64, maturity: f64, eta: f64) -> Result<Self> {
        let s = OptionSpec {
            strike,
            maturity,
            eta,
            payoff: PayoffKind::PortfolioCall,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(PricingError::InvalidInput(format!(
                "strike must be positive, got {}",
                self.strike
            )));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(PricingError::InvalidInput(format!(
                "maturity must be positive, got {}",
                self.maturity
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(PricingError::InvalidInput(format!(
                "eta must lie in [0, 1], got {}",
                self.eta
            )));
        }
        Ok(())
    }

    /// Terminal payoff at joint prices (s, z).
    #[inline]
    pub fn payoff_value(&self, s: f64, z: f64) -> f64 {
        match self.payoff {
            PayoffKind::PortfolioCall => (self.eta * s + (1.0 - self.eta) * z - self.strike).max(0.0),
            PayoffKind::SingleAssetCall => (s - self.strike).max(0.0),
        }
    }
}

/// Drifts of (S, Z, Z/S) under the S-numeraire martingale measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QDrifts {
    pub drift_s: f64,
    pub drift_z: f64,
    pub drift_ratio: f64,
}

/// Equal-Sharpe-ratio diagnostic at a point in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SharpeReport {
    pub shadow_rate: f64,
    pub sharpe_s: f64,
    pub sharpe_z: f64,
    pub difference: f64,
}

fn spreads_at(params: &DualAssetParams, t: f64) -> Result<(f64, f64, f64, f64, f64, f64)> {
    let (mu, sigma, mu_tilde, sigma_tilde) = params.at(t);
    let d_sigma = sigma_tilde - sigma;
    if d_sigma.abs() < params.vol_spread_epsilon {
        return Err(PricingError::DegenerateVolatilitySpread {
            spread: d_sigma.abs(),
            epsilon: params.vol_spread_epsilon,
            t,
        });
    }
    Ok((mu, sigma, mu_tilde, sigma_tilde, mu_tilde - mu, d_sigma))
}

/// Shadow riskless rate r = (mu sigma_tilde - mu_tilde sigma) / (sigma_tilde - sigma).
///
/// This is the unique rate making the two Sharpe ratios agree; it exists only
/// while the volatility spread is non-degenerate.
pub fn shadow_rate(params: &DualAssetParams, t: f64) -> Result<f64> {
    let (mu, sigma, mu_tilde, sigma_tilde, _, d_sigma) = spreads_at(params, t)?;
    Ok((mu * sigma_tilde - mu_tilde * sigma) / d_sigma)
}

/// Girsanov kernel theta = d_mu / d_sigma - sigma for the S-numeraire measure change.
pub fn market_price_of_risk(params: &DualAssetParams, t: f64) -> Result<f64> {
    let (_, sigma, _, _, d_mu, d_sigma) = spreads_at(params, t)?;
    Ok(d_mu / d_sigma - sigma)
}

/// Drift-spread to volatility-spread ratio d_mu / d_sigma.
///
/// Shows up in the risk-neutral tree probability; equals the classical
/// market price of risk (mu - r) / sigma when Z is a power of S.
pub fn drift_spread_ratio(params: &DualAssetParams, t: f64) -> Result<f64> {
    let (_, _, _, _, d_mu, d_sigma) = spreads_at(params, t)?;
    Ok(d_mu / d_sigma)
}

/// Drifts of S, Z, and the ratio Z/S under the S-numeraire measure:
/// (r + sigma^2, r + sigma sigma_tilde, 0).
pub fn q_dynamics(params: &DualAssetParams, t: f64) -> Result<QDrifts> {
    let r = shadow_rate(params, t)?;
    let (_, sigma, _, sigma_tilde) = params.at(t);
    Ok(QDrifts {
        drift_s: r + sigma * sigma,
        drift_z: r + sigma * sigma_tilde,
        drift_ratio: 0.0,
    })
}

/// Computes both Sharpe ratios at the shadow rate and their absolute gap.
pub fn sharpe_consistency_check(params: &DualAssetParams, t: f64) -> Result<SharpeReport> {
    let r = shadow_rate(params, t)?;
    let (mu, sigma, mu_tilde, sigma_tilde) = params.at(t);
    let sharpe_s = (mu - r) / sigma;
    let sharpe_z = (mu_tilde - r) / sigma_tilde;
    Ok(SharpeReport {
        shadow_rate: r,
        sharpe_s,
        sharpe_z,
        difference: (sharpe_s - sharpe_z).abs(),
    })
}
