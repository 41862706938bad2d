//! Binomial trees for both market models.
//!
//! The two-asset tree moves S and Z together on a single Bernoulli factor per
//! step; option values discount at the one-step cumulative return implied by
//! the pair, with a risk-neutral probability that differs from the natural one
//! by a drift-spread term. The deflated-return tree replaces the asset's drift
//! with the riskless rate through the return deflator pi = r_f / mu, after
//! which backward induction runs directly under the natural probabilities.
//!
//! All node prices are accumulated by direct products of (1 + move) factors.
//! Near-degenerate probabilities push one move factor through zero, and log
//! tricks would silently produce NaN there; products keep the arithmetic exact
//! in sign.

use serde::Serialize;

use crate::error::{PricingError, Result};
use crate::market::{DualAssetParams, OptionSpec, PayoffKind, SingleAssetParams};
use crate::schedule::Param;

/// Step cap for trees that do not recombine (schedule-driven parameters).
pub const MAX_NON_RECOMBINING_STEPS: usize = 25;
/// Step cap when full node storage is requested.
pub const MAX_STORED_STEPS: usize = 1024;

/// Step layout shared by every tree in this module.
#[derive(Debug, Clone)]
pub struct LatticeConfig {
    pub n_steps: usize,
    /// Total horizon T; the step size is T / n_steps.
    pub horizon: f64,
    /// Natural up-probability per step, each value in (0, 1).
    pub p: Param,
    /// Keep per-node values and hedge weights in the result.
    pub store_nodes: bool,
}

impl LatticeConfig {
    pub fn new(n_steps: usize, horizon: f64, p: Param) -> Result<Self> {
        let cfg = LatticeConfig {
            n_steps,
            horizon,
            p,
            store_nodes: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Constant-probability configuration.
    pub fn uniform(n_steps: usize, horizon: f64, p: f64) -> Result<Self> {
        Self::new(n_steps, horizon, Param::Constant(p))
    }

    pub fn with_node_storage(mut self) -> Self {
        self.store_nodes = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(PricingError::InvalidInput(
                "tree needs at least one step".into(),
            ));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(PricingError::InvalidInput(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        self.p.validate()?;
        if self.store_nodes && self.n_steps > MAX_STORED_STEPS {
            return Err(PricingError::InvalidInput(format!(
                "node storage is capped at {MAX_STORED_STEPS} steps, requested {}",
                self.n_steps
            )));
        }
        Ok(())
    }

    /// Step size delta = T / n.
    pub fn delta(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    fn p_at_step(&self, step: usize) -> Result<f64> {
        let p = self.p.value_at(step as f64 * self.delta());
        if !(p > 0.0 && p < 1.0) {
            return Err(PricingError::InvalidInput(format!(
                "up-probability must lie in (0, 1), got {p} at step {step}"
            )));
        }
        Ok(p)
    }
}

/// Soft diagnostics recorded during calibration and tree construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LatticeWarning {
    /// A calibrated down move is not strictly positive as an arithmetic
    /// return; standard trees allow this, so it is not an error.
    DownMoveNotPositive { step: usize, down: f64 },
    /// 1 + move crossed zero: node prices change sign past this step.
    PriceFactorNotPositive { step: usize, factor: f64 },
    /// The plain asset's moves do not straddle the riskless step return.
    NoArbitrageBandViolated {
        step: usize,
        r_f_step: f64,
        up: f64,
        down: f64,
    },
}

/// Per-step arithmetic-return moves for the two-asset tree.
#[derive(Debug, Clone, Serialize)]
pub struct CalibratedMoves {
    pub delta: f64,
    pub p: Vec<f64>,
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    pub up_tilde: Vec<f64>,
    pub down_tilde: Vec<f64>,
    pub warnings: Vec<LatticeWarning>,
}

impl CalibratedMoves {
    pub fn n_steps(&self) -> usize {
        self.up.len()
    }
}

/// Per-step moves for a single-asset tree.
#[derive(Debug, Clone, Serialize)]
pub struct SingleMoves {
    pub delta: f64,
    pub p: Vec<f64>,
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    pub warnings: Vec<LatticeWarning>,
}

/// Up/down arithmetic returns matching the first two moments of a step:
/// the induced mean is exactly mu delta and the variance exactly sigma^2 delta.
fn step_moves(mu: f64, sigma: f64, p: f64, delta: f64) -> (f64, f64) {
    let sq = delta.sqrt();
    let up = mu * delta + sigma * ((1.0 - p) / p).sqrt() * sq;
    let down = mu * delta - sigma * (p / (1.0 - p)).sqrt() * sq;
    (up, down)
}

/// Moment-matched moves for both assets at every step.
pub fn calibrate_moves(params: &DualAssetParams, cfg: &LatticeConfig) -> Result<CalibratedMoves> {
    cfg.validate()?;
    params.validate()?;
    let n = cfg.n_steps;
    let delta = cfg.delta();
    let mut moves = CalibratedMoves {
        delta,
        p: Vec::with_capacity(n),
        up: Vec::with_capacity(n),
        down: Vec::with_capacity(n),
        up_tilde: Vec::with_capacity(n),
        down_tilde: Vec::with_capacity(n),
        warnings: Vec::new(),
    };
    for step in 0..n {
        let t = step as f64 * delta;
        let p = cfg.p_at_step(step)?;
        let (mu, sigma, mu_tilde, sigma_tilde) = params.at(t);
        let (up, down) = step_moves(mu, sigma, p, delta);
        let (up_tilde, down_tilde) = step_moves(mu_tilde, sigma_tilde, p, delta);
        for d in [down, down_tilde] {
            if d <= 0.0 {
                moves
                    .warnings
                    .push(LatticeWarning::DownMoveNotPositive { step, down: d });
            }
            if 1.0 + d <= 0.0 {
                moves.warnings.push(LatticeWarning::PriceFactorNotPositive {
                    step,
                    factor: 1.0 + d,
                });
            }
        }
        moves.p.push(p);
        moves.up.push(up);
        moves.down.push(down);
        moves.up_tilde.push(up_tilde);
        moves.down_tilde.push(down_tilde);
    }
    Ok(moves)
}

/// Moment-matched moves for a single asset (drift mu, volatility sigma).
pub fn calibrate_single_moves(
    params: &SingleAssetParams,
    cfg: &LatticeConfig,
) -> Result<SingleMoves> {
    cfg.validate()?;
    let n = cfg.n_steps;
    let delta = cfg.delta();
    let mut moves = SingleMoves {
        delta,
        p: Vec::with_capacity(n),
        up: Vec::with_capacity(n),
        down: Vec::with_capacity(n),
        warnings: Vec::new(),
    };
    for step in 0..n {
        let t = step as f64 * delta;
        let p = cfg.p_at_step(step)?;
        let (up, down) = step_moves(params.mu.value_at(t), params.sigma.value_at(t), p, delta);
        if down <= 0.0 {
            moves
                .warnings
                .push(LatticeWarning::DownMoveNotPositive { step, down });
        }
        if 1.0 + down <= 0.0 {
            moves.warnings.push(LatticeWarning::PriceFactorNotPositive {
                step,
                factor: 1.0 + down,
            });
        }
        moves.p.push(p);
        moves.up.push(up);
        moves.down.push(down);
    }
    Ok(moves)
}

/// Risk-neutral up-probability from the move spreads between the two assets.
pub fn risk_neutral_q(moves: &CalibratedMoves, step: usize) -> Result<f64> {
    let du = moves.up_tilde[step] - moves.up[step];
    let dd = moves.down_tilde[step] - moves.down[step];
    if dd == du {
        return Err(PricingError::InvalidInput(format!(
            "move spreads coincide at step {step}; risk-neutral probability undefined"
        )));
    }
    let q = dd / (dd - du);
    if !(q > 0.0 && q < 1.0) {
        return Err(PricingError::NoArbitrageViolation { step, q });
    }
    Ok(q)
}

/// Same probability through the drift-spread ratio: q = p - ratio sqrt(p(1-p) delta).
pub fn q_from_drift_spread(p: f64, drift_spread_ratio: f64, delta: f64) -> f64 {
    p - drift_spread_ratio * (p * (1.0 - p) * delta).sqrt()
}

/// One-step cumulative return factor implied by the pair; equals 1 + shadow
/// rate times delta under moment-matched moves.
pub fn cumulative_return_r(moves: &CalibratedMoves, step: usize) -> Result<f64> {
    let (u, d) = (moves.up[step], moves.down[step]);
    let (ut, dt) = (moves.up_tilde[step], moves.down_tilde[step]);
    let du = ut - u;
    let dd = dt - d;
    if dd == du {
        return Err(PricingError::InvalidInput(format!(
            "move spreads coincide at step {step}; cumulative return undefined"
        )));
    }
    Ok(((1.0 + u) * (1.0 + dt) - (1.0 + ut) * (1.0 + d)) / (dd - du))
}

/// Per-node values and hedge weights of a recombining tree.
///
/// Layer k holds k+1 entries; entry j is the node reached by j up moves.
#[derive(Debug, Clone, Serialize)]
pub struct TreeNodes {
    pub values: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<Vec<f64>>>,
    /// Hedge weight on the first asset, one layer per step.
    pub s_weight: Vec<Vec<f64>>,
    /// Hedge weight on the second asset (two-asset tree only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_weight: Option<Vec<Vec<f64>>>,
}

/// Priced tree with its per-step schedules.
#[derive(Debug, Clone, Serialize)]
pub struct LatticeResult {
    pub root_value: f64,
    pub q_schedule: Vec<f64>,
    /// One-step discount factor per step (cumulative return or 1 + r_f delta).
    pub r_schedule: Vec<f64>,
    pub warnings: Vec<LatticeWarning>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<TreeNodes>,
}

fn layer_prices(x0: f64, up_factor: f64, down_factor: f64, k: usize) -> Vec<f64> {
    (0..=k)
        .map(|j| x0 * up_factor.powi(j as i32) * down_factor.powi((k - j) as i32))
        .collect()
}

/// Prices the portfolio call on the two-asset tree by backward induction.
pub fn price_lr_tree(
    s0: f64,
    z0: f64,
    params: &DualAssetParams,
    spec: &OptionSpec,
    cfg: &LatticeConfig,
) -> Result<LatticeResult> {
    if !(s0 > 0.0 && z0 > 0.0) {
        return Err(PricingError::InvalidInput(format!(
            "spot prices must be positive, got s0 = {s0}, z0 = {z0}"
        )));
    }
    spec.validate()?;
    if spec.payoff != PayoffKind::PortfolioCall {
        return Err(PricingError::InvalidInput(
            "the two-asset tree prices portfolio calls".into(),
        ));
    }
    if (spec.maturity - cfg.horizon).abs() > 1e-12 {
        return Err(PricingError::InvalidInput(format!(
            "tree horizon {} must equal the option maturity {}",
            cfg.horizon, spec.maturity
        )));
    }
    let moves = calibrate_moves(params, cfg)?;
    let n = cfg.n_steps;
    let mut q_schedule = Vec::with_capacity(n);
    let mut r_schedule = Vec::with_capacity(n);
    for step in 0..n {
        q_schedule.push(risk_neutral_q(&moves, step)?);
        r_schedule.push(cumulative_return_r(&moves, step)?);
    }

    let recombining = params.is_constant() && cfg.p.is_constant();
    if recombining {
        let root = recombining_two_asset(s0, z0, &moves, &q_schedule, &r_schedule, spec, cfg)?;
        return Ok(LatticeResult {
            root_value: root.0,
            q_schedule,
            r_schedule,
            warnings: moves.warnings.clone(),
            nodes: root.1,
        });
    }
    if n > MAX_NON_RECOMBINING_STEPS {
        return Err(PricingError::InvalidInput(format!(
            "schedule-driven trees do not recombine and are capped at {MAX_NON_RECOMBINING_STEPS} steps, requested {n}"
        )));
    }
    if cfg.store_nodes {
        return Err(PricingError::InvalidInput(
            "node storage requires constant parameters (recombining layout)".into(),
        ));
    }
    let root_value = path_two_asset(0, s0, z0, &moves, &q_schedule, &r_schedule, spec);
    if !root_value.is_finite() {
        return Err(PricingError::Overflow(
            "tree value overflowed; reduce the step count or the moves".into(),
        ));
    }
    Ok(LatticeResult {
        root_value,
        q_schedule,
        r_schedule,
        warnings: moves.warnings.clone(),
        nodes: None,
    })
}

fn recombining_two_asset(
    s0: f64,
    z0: f64,
    moves: &CalibratedMoves,
    q_schedule: &[f64],
    r_schedule: &[f64],
    spec: &OptionSpec,
    cfg: &LatticeConfig,
) -> Result<(f64, Option<TreeNodes>)> {
    let n = cfg.n_steps;
    let (su, sd) = (1.0 + moves.up[0], 1.0 + moves.down[0]);
    let (zu, zd) = (1.0 + moves.up_tilde[0], 1.0 + moves.down_tilde[0]);
    let (q, r) = (q_schedule[0], r_schedule[0]);

    let terminal_s = layer_prices(s0, su, sd, n);
    let terminal_z = layer_prices(z0, zu, zd, n);
    let mut values: Vec<f64> = terminal_s
        .iter()
        .zip(&terminal_z)
        .map(|(&s, &z)| spec.payoff_value(s, z))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PricingError::Overflow(
            "terminal node values overflowed; reduce the step count or the moves".into(),
        ));
    }

    let mut stored_values = cfg.store_nodes.then(|| vec![values.clone()]);
    let mut s_weights: Vec<Vec<f64>> = Vec::new();
    let mut z_weights: Vec<Vec<f64>> = Vec::new();
    for k in (0..n).rev() {
        let mut layer_a = cfg.store_nodes.then(|| Vec::with_capacity(k + 1));
        let mut layer_b = cfg.store_nodes.then(|| Vec::with_capacity(k + 1));
        for j in 0..=k {
            if let (Some(a_vec), Some(b_vec)) = (layer_a.as_mut(), layer_b.as_mut()) {
                let s = s0 * su.powi(j as i32) * sd.powi((k - j) as i32);
                let z = z0 * zu.powi(j as i32) * zd.powi((k - j) as i32);
                let (s_up, s_dn) = (s * su, s * sd);
                let (z_up, z_dn) = (z * zu, z * zd);
                let det = s_up * z_dn - s_dn * z_up;
                a_vec.push((values[j + 1] * z_dn - values[j] * z_up) / det);
                b_vec.push((s_up * values[j] - s_dn * values[j + 1]) / det);
            }
            values[j] = (q * values[j + 1] + (1.0 - q) * values[j]) / r;
        }
        values.truncate(k + 1);
        if let Some(stored) = stored_values.as_mut() {
            stored.push(values.clone());
        }
        if let (Some(a_vec), Some(b_vec)) = (layer_a, layer_b) {
            s_weights.push(a_vec);
            z_weights.push(b_vec);
        }
    }

    let root = values[0];
    if !root.is_finite() {
        return Err(PricingError::Overflow(
            "tree value overflowed during induction".into(),
        ));
    }
    let nodes = stored_values.map(|mut layers| {
        layers.reverse();
        s_weights.reverse();
        z_weights.reverse();
        TreeNodes {
            values: layers,
            s: (0..=n).map(|k| layer_prices(s0, su, sd, k)).collect(),
            z: Some((0..=n).map(|k| layer_prices(z0, zu, zd, k)).collect()),
            s_weight: s_weights,
            z_weight: Some(z_weights),
        }
    });
    Ok((root, nodes))
}

fn path_two_asset(
    step: usize,
    s: f64,
    z: f64,
    moves: &CalibratedMoves,
    q_schedule: &[f64],
    r_schedule: &[f64],
    spec: &OptionSpec,
) -> f64 {
    if step == moves.n_steps() {
        return spec.payoff_value(s, z);
    }
    let up = path_two_asset(
        step + 1,
        s * (1.0 + moves.up[step]),
        z * (1.0 + moves.up_tilde[step]),
        moves,
        q_schedule,
        r_schedule,
        spec,
    );
    let down = path_two_asset(
        step + 1,
        s * (1.0 + moves.down[step]),
        z * (1.0 + moves.down_tilde[step]),
        moves,
        q_schedule,
        r_schedule,
        spec,
    );
    let q = q_schedule[step];
    (q * up + (1.0 - q) * down) / r_schedule[step]
}

/// Per-step deviation of the price ratio Z/S from the one-step martingale
/// property under q, relative to the current ratio.
#[derive(Debug, Clone, Serialize)]
pub struct RatioMartingaleReport {
    pub delta: f64,
    /// Ratio of the initial prices z0 / s0.
    pub root_ratio: f64,
    /// E_q[(Z'/S')] / (Z/S) - 1 over the two joint outcomes, per step.
    pub two_outcome: Vec<f64>,
    /// Variant treating the two assets as driven by independent factors, so
    /// the step realizes four joint outcomes instead of two.
    pub four_outcome: Vec<f64>,
}

impl RatioMartingaleReport {
    /// Absolute deviation at the root node for the first step.
    pub fn root_deviation(&self) -> f64 {
        self.root_ratio * self.two_outcome[0]
    }
}

/// Measures how far Z/S is from a one-step martingale on the joint tree.
pub fn ratio_martingale_diagnostic(
    s0: f64,
    z0: f64,
    moves: &CalibratedMoves,
) -> Result<RatioMartingaleReport> {
    if !(s0 > 0.0 && z0 > 0.0) {
        return Err(PricingError::InvalidInput(format!(
            "spot prices must be positive, got s0 = {s0}, z0 = {z0}"
        )));
    }
    let n = moves.n_steps();
    let mut two_outcome = Vec::with_capacity(n);
    let mut four_outcome = Vec::with_capacity(n);
    for step in 0..n {
        let q = risk_neutral_q(moves, step)?;
        let (u, d) = (moves.up[step], moves.down[step]);
        let (ut, dt) = (moves.up_tilde[step], moves.down_tilde[step]);
        two_outcome.push(q * (1.0 + ut) / (1.0 + u) + (1.0 - q) * (1.0 + dt) / (1.0 + d) - 1.0);
        four_outcome.push(
            (q * (1.0 + ut) + (1.0 - q) * (1.0 + dt))
                * (q / (1.0 + u) + (1.0 - q) / (1.0 + d))
                - 1.0,
        );
    }
    Ok(RatioMartingaleReport {
        delta: moves.delta,
        root_ratio: z0 / s0,
        two_outcome,
        four_outcome,
    })
}

/// Deflated-return tree: the asset's per-step return is rescaled by
/// pi = r_f / mu so its mean is exactly the riskless step return.
#[derive(Debug, Clone, Serialize)]
pub struct PiTree {
    pub s0: f64,
    pub delta: f64,
    pub p: Vec<f64>,
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    /// Simple riskless return per step, r_f delta.
    pub r_f_step: Vec<f64>,
    pub pi: Vec<f64>,
    pub sigma_r: Vec<f64>,
    /// Moves of the undeflated asset, kept for the no-arbitrage band
    /// diagnostic and for identity-deflator comparisons.
    pub plain_up: Vec<f64>,
    pub plain_down: Vec<f64>,
    pub warnings: Vec<LatticeWarning>,
    pub store_nodes: bool,
}

impl PiTree {
    pub fn n_steps(&self) -> usize {
        self.up.len()
    }

    pub fn horizon(&self) -> f64 {
        self.delta * self.n_steps() as f64
    }

    fn is_uniform(&self) -> bool {
        let same = |xs: &[f64]| xs.iter().all(|&x| x == xs[0]);
        same(&self.up) && same(&self.down) && same(&self.p) && same(&self.r_f_step)
    }
}

/// Builds the deflated-return tree for a single risky asset.
pub fn build_pi_tree(s0: f64, params: &SingleAssetParams, cfg: &LatticeConfig) -> Result<PiTree> {
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(PricingError::InvalidInput(format!(
            "spot price must be positive, got {s0}"
        )));
    }
    cfg.validate()?;
    let n = cfg.n_steps;
    let delta = cfg.delta();
    let mut tree = PiTree {
        s0,
        delta,
        p: Vec::with_capacity(n),
        up: Vec::with_capacity(n),
        down: Vec::with_capacity(n),
        r_f_step: Vec::with_capacity(n),
        pi: Vec::with_capacity(n),
        sigma_r: Vec::with_capacity(n),
        plain_up: Vec::with_capacity(n),
        plain_down: Vec::with_capacity(n),
        warnings: Vec::new(),
        store_nodes: cfg.store_nodes,
    };
    for step in 0..n {
        let t = step as f64 * delta;
        let p = cfg.p_at_step(step)?;
        let mu = params.mu.value_at(t);
        if mu == 0.0 {
            return Err(PricingError::ZeroDrift { t });
        }
        let sigma = params.sigma.value_at(t);
        let r_f = params.r_f.value_at(t);
        let sigma_r = params.sigma_r_at(t)?;
        if !(sigma_r > 0.0) {
            return Err(PricingError::InvalidInput(format!(
                "deflated volatility must be positive, got {sigma_r} at t = {t}"
            )));
        }
        let (up, down) = step_moves(r_f, sigma_r, p, delta);
        let (plain_up, plain_down) = step_moves(mu, sigma, p, delta);
        let r_f_step = r_f * delta;
        if 1.0 + down <= 0.0 {
            tree.warnings.push(LatticeWarning::PriceFactorNotPositive {
                step,
                factor: 1.0 + down,
            });
        }
        if !(plain_down < r_f_step && r_f_step < plain_up) {
            tree.warnings.push(LatticeWarning::NoArbitrageBandViolated {
                step,
                r_f_step,
                up: plain_up,
                down: plain_down,
            });
        }
        tree.p.push(p);
        tree.up.push(up);
        tree.down.push(down);
        tree.r_f_step.push(r_f_step);
        tree.pi.push(r_f / mu);
        tree.sigma_r.push(sigma_r);
        tree.plain_up.push(plain_up);
        tree.plain_down.push(plain_down);
    }
    Ok(tree)
}

/// Prices a single-asset payoff on the deflated tree by backward induction
/// under the natural probabilities, discounting at the riskless step return.
pub fn price_pi_tree(tree: &PiTree, spec: &OptionSpec) -> Result<LatticeResult> {
    spec.validate()?;
    if spec.payoff != PayoffKind::SingleAssetCall {
        return Err(PricingError::InvalidInput(
            "the deflated tree prices single-asset payoffs".into(),
        ));
    }
    if (spec.maturity - tree.horizon()).abs() > 1e-12 {
        return Err(PricingError::InvalidInput(format!(
            "tree horizon {} must equal the option maturity {}",
            tree.horizon(),
            spec.maturity
        )));
    }
    let n = tree.n_steps();
    // The implied risk-neutral probability coincides with the natural one; it
    // is recorded from the moves so callers can verify the coincidence.
    let q_schedule: Vec<f64> = (0..n)
        .map(|k| (tree.r_f_step[k] - tree.down[k]) / (tree.up[k] - tree.down[k]))
        .collect();
    let r_schedule: Vec<f64> = tree.r_f_step.iter().map(|&r| 1.0 + r).collect();

    if tree.is_uniform() {
        let (root, nodes) = recombining_single(tree, spec)?;
        return Ok(LatticeResult {
            root_value: root,
            q_schedule,
            r_schedule,
            warnings: tree.warnings.clone(),
            nodes,
        });
    }
    if n > MAX_NON_RECOMBINING_STEPS {
        return Err(PricingError::InvalidInput(format!(
            "schedule-driven trees do not recombine and are capped at {MAX_NON_RECOMBINING_STEPS} steps, requested {n}"
        )));
    }
    if tree.store_nodes {
        return Err(PricingError::InvalidInput(
            "node storage requires constant parameters (recombining layout)".into(),
        ));
    }
    let root_value = path_single(0, tree.s0, tree, spec);
    if !root_value.is_finite() {
        return Err(PricingError::Overflow(
            "tree value overflowed; reduce the step count or the moves".into(),
        ));
    }
    Ok(LatticeResult {
        root_value,
        q_schedule,
        r_schedule,
        warnings: tree.warnings.clone(),
        nodes: None,
    })
}

fn recombining_single(tree: &PiTree, spec: &OptionSpec) -> Result<(f64, Option<TreeNodes>)> {
    let n = tree.n_steps();
    let (fu, fd) = (1.0 + tree.up[0], 1.0 + tree.down[0]);
    let p = tree.p[0];
    let disc = 1.0 + tree.r_f_step[0];

    let mut values: Vec<f64> = layer_prices(tree.s0, fu, fd, n)
        .into_iter()
        .map(|s| spec.payoff_value(s, 0.0))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PricingError::Overflow(
            "terminal node values overflowed; reduce the step count or the moves".into(),
        ));
    }
    let mut stored_values = tree.store_nodes.then(|| vec![values.clone()]);
    let mut weights: Vec<Vec<f64>> = Vec::new();
    for k in (0..n).rev() {
        let mut layer_w = tree.store_nodes.then(|| Vec::with_capacity(k + 1));
        for j in 0..=k {
            if let Some(w) = layer_w.as_mut() {
                let s = tree.s0 * fu.powi(j as i32) * fd.powi((k - j) as i32);
                w.push((values[j + 1] - values[j]) / (s * fu - s * fd));
            }
            values[j] = (p * values[j + 1] + (1.0 - p) * values[j]) / disc;
        }
        values.truncate(k + 1);
        if let Some(stored) = stored_values.as_mut() {
            stored.push(values.clone());
        }
        if let Some(w) = layer_w {
            weights.push(w);
        }
    }
    let root = values[0];
    if !root.is_finite() {
        return Err(PricingError::Overflow(
            "tree value overflowed during induction".into(),
        ));
    }
    let nodes = stored_values.map(|mut layers| {
        layers.reverse();
        weights.reverse();
        TreeNodes {
            values: layers,
            s: (0..=n).map(|k| layer_prices(tree.s0, fu, fd, k)).collect(),
            z: None,
            s_weight: weights,
            z_weight: None,
        }
    });
    Ok((root, nodes))
}

fn path_single(step: usize, s: f64, tree: &PiTree, spec: &OptionSpec) -> f64 {
    if step == tree.n_steps() {
        return spec.payoff_value(s, 0.0);
    }
    let up = path_single(step + 1, s * (1.0 + tree.up[step]), tree, spec);
    let down = path_single(step + 1, s * (1.0 + tree.down[step]), tree, spec);
    let p = tree.p[step];
    (p * up + (1.0 - p) * down) / (1.0 + tree.r_f_step[step])
}

/// Hedge weight from adjacent node values: a = (C_up - C_down)/(S_up - S_down).
pub fn replication_weight(c_up: f64, c_down: f64, s_up: f64, s_down: f64) -> Result<f64> {
    if s_up == s_down {
        return Err(PricingError::DegenerateNode { price: s_up });
    }
    Ok((c_up - c_down) / (s_up - s_down))
}

/// Closed form of the same hedge weight on the deflated tree, written in the
/// undeflated asset's drift and volatility.
#[allow(clippy::too_many_arguments)]
pub fn deflated_replication_weight(
    c_up: f64,
    c_down: f64,
    s: f64,
    mu: f64,
    sigma: f64,
    p: f64,
    delta: f64,
    r_f_step: f64,
) -> f64 {
    (c_up - c_down) * mu * (p * (1.0 - p) * delta).sqrt() / (s * sigma * r_f_step)
}

/// Discrete bank account path: beta_0 = 1, beta_{k+1} = beta_k (1 + r_f delta).
pub fn bank_account_path(r_f: &Param, cfg: &LatticeConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    r_f.validate()?;
    let delta = cfg.delta();
    let mut beta = Vec::with_capacity(cfg.n_steps + 1);
    beta.push(1.0);
    for k in 0..cfg.n_steps {
        let step_return = r_f.value_at(k as f64 * delta) * delta;
        beta.push(beta[k] * (1.0 + step_return));
    }
    Ok(beta)
}

/// Discounted payoff of the single surviving branch when the up-probability
/// degenerates to 0 or 1: every move collapses to the riskless step return.
pub fn pi_single_branch_limit(
    s0: f64,
    params: &SingleAssetParams,
    spec: &OptionSpec,
    cfg: &LatticeConfig,
) -> Result<f64> {
    let beta = bank_account_path(&params.r_f, cfg)?;
    let beta_t = beta[beta.len() - 1];
    Ok(spec.payoff_value(s0 * beta_t, 0.0) / beta_t)
}
