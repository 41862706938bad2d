//! Option pricing for markets without a riskless asset.
//!
//! Two model families are covered. In the first, two risky assets span the
//! market and imply a shadow riskless rate; European portfolio calls price in
//! closed form, on binomial trees, and by Monte Carlo, all under the
//! numeraire-change measure. In the second, cumulative returns are deflated
//! by the ratio of the riskless yield to the asset drift, which restores
//! riskless-style pricing under the natural probability. Companion assets
//! (power-of-price perpetual derivatives) connect the two families.

// `!(x > 0.0)` guards are deliberate: unlike `x <= 0.0` they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closed_form;
pub mod companion;
pub mod error;
pub mod estimation;
pub mod lattice;
pub mod market;
pub mod monte_carlo;
pub mod normal;
pub mod pde_verifier;
pub mod quadrature;
pub mod rootfind;
pub mod schedule;

pub use error::{PricingError, Result};
pub use market::{DualAssetParams, OptionSpec, PayoffKind, SingleAssetParams};
pub use schedule::{Param, Segment};
