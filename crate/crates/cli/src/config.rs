//! JSON parameter documents for the `price` subcommand.
//!
//! Every coefficient accepts either a number (constant) or an array of
//! `{"t_start": ..., "value": ...}` segments (piecewise-constant schedule).

use std::path::Path;

use serde::Deserialize;

use altpricing::market::{DualAssetParams, OptionSpec, PayoffKind, SingleAssetParams};
use altpricing::schedule::Param;

use crate::commands::CliError;

/// Top-level pricing document. `dual` feeds the two-asset models, `single`
/// the deflated-price models; each model checks that its section is present.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceDoc {
    pub s0: f64,
    pub z0: Option<f64>,
    pub dual: Option<DualDoc>,
    pub single: Option<SingleDoc>,
    pub option: OptionDoc,
    /// Physical up probability for the tree models.
    #[serde(default = "default_p")]
    pub p: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualDoc {
    pub mu: Param,
    pub sigma: Param,
    pub mu_tilde: Param,
    pub sigma_tilde: Param,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleDoc {
    pub mu: Param,
    pub sigma: Param,
    pub r_f: Param,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionDoc {
    pub strike: f64,
    pub maturity: f64,
    /// Portfolio weight on the first asset; ignored by single-asset models.
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_p() -> f64 {
    0.5
}

fn default_eta() -> f64 {
    1.0
}

impl PriceDoc {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Two-asset section plus the companion spot, or a config error naming
    /// what is missing.
    pub fn dual_market(&self) -> Result<(f64, DualAssetParams, OptionSpec), CliError> {
        let dual = self.dual.as_ref().ok_or_else(|| {
            CliError::Config("this model needs a \"dual\" section in the config".into())
        })?;
        let z0 = self.z0.ok_or_else(|| {
            CliError::Config("this model needs \"z0\" in the config".into())
        })?;
        let params = DualAssetParams::new(
            dual.mu.clone(),
            dual.sigma.clone(),
            dual.mu_tilde.clone(),
            dual.sigma_tilde.clone(),
        )?;
        let spec =
            OptionSpec::portfolio_call(self.option.strike, self.option.maturity, self.option.eta)?;
        Ok((z0, params, spec))
    }

    /// Single-asset section, or a config error naming what is missing.
    pub fn single_market(&self) -> Result<(SingleAssetParams, OptionSpec), CliError> {
        let single = self.single.as_ref().ok_or_else(|| {
            CliError::Config("this model needs a \"single\" section in the config".into())
        })?;
        let params = SingleAssetParams::new(
            single.mu.clone(),
            single.sigma.clone(),
            single.r_f.clone(),
        )?;
        let spec = OptionSpec {
            strike: self.option.strike,
            maturity: self.option.maturity,
            eta: 1.0,
            payoff: PayoffKind::SingleAssetCall,
        };
        spec.validate()?;
        Ok((params, spec))
    }
}
