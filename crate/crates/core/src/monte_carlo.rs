//! Path simulation and expectation pricing for both market models.
//!
//! Every estimator here follows the same recipe: integrate the relevant price
//! process exactly over sub-steps on which the coefficient schedules are
//! constant, draw one standard normal per sub-step, and average a terminal
//! functional over paths. Exact per-step integration removes discretization
//! bias, so acceptance tests need only statistical tolerances; an Euler
//! stepping scheme is kept as a diagnostic.
//!
//! Paths are generated in fixed sub-batches with one counter-based RNG stream
//! per sub-batch and reduced in sub-batch order, so results are bit-identical
//! regardless of how many threads run the sub-batches.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::black_scholes_call;
use crate::error::{PricingError, Result};
use crate::market::{
    self, DualAssetParams, OptionSpec, PayoffKind, SingleAssetParams, DEFAULT_VOL_SPREAD_EPSILON,
};
use crate::normal::normal_quantile;
use crate::schedule::Param;

/// Paths per RNG stream; the reduction folds streams in index order.
const UNIT_BLOCK: usize = 8192;

/// Stepping scheme for path generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Integrates each sub-step in closed form; no discretization bias.
    ExactLognormal,
    /// First-order arithmetic stepping; diagnostic only.
    Euler,
}

/// Probability measure a batch was drawn under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    P,
    Q,
}

/// Which process a batch holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessTag {
    S,
    Z,
    SPi,
    ZHat,
}

/// Simulation controls shared by every estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    /// Recording steps per path; exact stepping is unbiased for any value.
    pub n_steps: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Pair each path with its sign-flipped driver; requires an even path count.
    pub antithetic: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_paths: 100_000,
            n_steps: 1,
            seed: 42,
            scheme: Scheme::ExactLognormal,
            antithetic: false,
        }
    }
}

impl McConfig {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        McConfig {
            n_paths,
            seed,
            ..Self::default()
        }
    }

    pub fn with_steps(mut self, n_steps: usize) -> Self {
        self.n_steps = n_steps;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_antithetic(mut self, antithetic: bool) -> Self {
        self.antithetic = antithetic;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(PricingError::InvalidInput(format!(
                "need at least 2 paths, got {}",
                self.n_paths
            )));
        }
        if self.n_steps == 0 {
            return Err(PricingError::InvalidInput(
                "need at least one recording step".into(),
            ));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(PricingError::InvalidInput(
                "antithetic sampling needs an even path count".into(),
            ));
        }
        Ok(())
    }
}

/// A matrix of simulated price paths recorded on the uniform step grid.
#[derive(Debug, Clone, Serialize)]
pub struct PathBatch {
    /// `paths[i][k]` is path i at `times[k]`.
    pub paths: Vec<Vec<f64>>,
    /// Recording times, `n_steps + 1` entries starting at 0.
    pub times: Vec<f64>,
    pub seed: u64,
    pub scheme: Scheme,
    pub measure: Measure,
    pub process_tag: ProcessTag,
}

/// Sample-mean estimate with its standard error.
///
/// The standard error is `sample_std / sqrt(n)` over independent replications;
/// with antithetic sampling a path pair counts as one replication, so the
/// error bar stays honest under the induced correlation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

/// One martingale diagnostic: a sample mean against its exact target.
#[derive(Debug, Clone, Serialize)]
pub struct MartingaleCheck {
    pub label: String,
    pub expected: f64,
    pub sample_mean: f64,
    pub std_error: f64,
    /// (sample_mean - expected) / std_error.
    pub z_score: f64,
}

impl MartingaleCheck {
    fn new(label: &str, expected: f64, estimate: McEstimate) -> Self {
        let z_score = if estimate.std_error > 0.0 {
            (estimate.value - expected) / estimate.std_error
        } else {
            0.0
        };
        MartingaleCheck {
            label: label.to_string(),
            expected,
            sample_mean: estimate.value,
            std_error: estimate.std_error,
            z_score,
        }
    }
}

/// Side-by-side single-asset call prices under the plain and deflated
/// volatilities at the same riskless rate; no equality is asserted.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PiComparisonReport {
    pub sigma: f64,
    pub sigma_r: f64,
    pub price_plain_vol: f64,
    pub price_deflated_vol: f64,
    pub difference: f64,
}

/// One exact sub-step of the joint (S, Z) process under the pricing measure.
#[derive(Debug, Clone, Copy)]
struct PairStep {
    /// Integrated log-drift of S over the sub-step.
    m_s: f64,
    m_z: f64,
    /// Diffusion loading sigma sqrt(dt); both assets share the draw.
    v_s: f64,
    v_z: f64,
    /// Arithmetic drift times dt, for Euler stepping.
    a_s: f64,
    a_z: f64,
    record: bool,
}

/// One exact sub-step of a single lognormal process.
#[derive(Debug, Clone, Copy)]
struct SingleStep {
    m: f64,
    v: f64,
    a: f64,
    record: bool,
}

/// One exact sub-step of the numeraire-deflated estimator: the change-of-
/// numeraire factor and the underlying share the same draw.
#[derive(Debug, Clone, Copy)]
struct NumeraireStep {
    fac_m: f64,
    fac_v: f64,
    s_m: f64,
    s_v: f64,
}

/// Uniform recording grid refined by every schedule breakpoint; `record[i]`
/// marks `grid[i + 1]` as a recording time.
fn stepping_grid(t: f64, n_steps: usize, params: &[&Param]) -> (Vec<f64>, Vec<bool>) {
    let mut uniform = Vec::with_capacity(n_steps + 1);
    uniform.push(0.0);
    for k in 1..n_steps {
        uniform.push(t * k as f64 / n_steps as f64);
    }
    uniform.push(t);
    let mut grid = uniform.clone();
    for p in params {
        grid.extend(p.breakpoints_within(0.0, t));
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    let mut record = vec![false; grid.len() - 1];
    let mut u = 1;
    for (i, &g) in grid.iter().enumerate().skip(1) {
        if u < uniform.len() && g == uniform[u] {
            record[i - 1] = true;
            u += 1;
        }
    }
    (grid, record)
}

fn check_horizon(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(PricingError::InvalidInput(format!(
            "horizon must be positive, got {t}"
        )));
    }
    Ok(())
}

fn q_pair_plan(params: &DualAssetParams, t: f64, n_steps: usize) -> Result<Vec<PairStep>> {
    check_horizon(t)?;
    params.validate()?;
    let (grid, record) = stepping_grid(
        t,
        n_steps,
        &[
            &params.mu,
            &params.sigma,
            &params.mu_tilde,
            &params.sigma_tilde,
        ],
    );
    let mut plan = Vec::with_capacity(grid.len() - 1);
    for i in 0..grid.len() - 1 {
        let (a, b) = (grid[i], grid[i + 1]);
        let dt = b - a;
        let drifts = market::q_dynamics(params, a)?;
        let (_, sigma, _, sigma_tilde) = params.at(a);
        let sq = dt.sqrt();
        plan.push(PairStep {
            m_s: (drifts.drift_s - 0.5 * sigma * sigma) * dt,
            m_z: (drifts.drift_z - 0.5 * sigma_tilde * sigma_tilde) * dt,
            v_s: sigma * sq,
            v_z: sigma_tilde * sq,
            a_s: drifts.drift_s * dt,
            a_z: drifts.drift_z * dt,
            record: record[i],
        });
    }
    Ok(plan)
}

fn p_single_plan(
    params: &SingleAssetParams,
    t: f64,
    n_steps: usize,
    deflated: bool,
) -> Result<Vec<SingleStep>> {
    check_horizon(t)?;
    let (grid, record) = stepping_grid(t, n_steps, &[&params.mu, &params.sigma, &params.r_f]);
    let mut plan = Vec::with_capacity(grid.len() - 1);
    for i in 0..grid.len() - 1 {
        let (a, b) = (grid[i], grid[i + 1]);
        let dt = b - a;
        let (drift, vol) = if deflated {
            (params.r_f.value_at(a), params.sigma_r_at(a)?)
        } else {
            (params.mu.value_at(a), params.sigma.value_at(a))
        };
        let sq = dt.sqrt();
        plan.push(SingleStep {
            m: (drift - 0.5 * vol * vol) * dt,
            v: vol * sq,
            a: drift * dt,
            record: record[i],
        });
    }
    Ok(plan)
}

fn numeraire_plan(params: &SingleAssetParams, t: f64, n_steps: usize) -> Result<Vec<NumeraireStep>> {
    check_horizon(t)?;
    let (grid, _) = stepping_grid(t, n_steps, &[&params.mu, &params.sigma, &params.r_f]);
    let mut plan = Vec::with_capacity(grid.len() - 1);
    for i in 0..grid.len() - 1 {
        let (a, b) = (grid[i], grid[i + 1]);
        let dt = b - a;
        let sigma = params.sigma.value_at(a);
        let sigma_r = params.sigma_r_at(a)?;
        let spread = sigma - sigma_r;
        if spread.abs() < DEFAULT_VOL_SPREAD_EPSILON {
            return Err(PricingError::DegenerateVolatilitySpread {
                spread: spread.abs(),
                epsilon: DEFAULT_VOL_SPREAD_EPSILON,
                t: a,
            });
        }
        let sq = dt.sqrt();
        plan.push(NumeraireStep {
            fac_m: -0.5 * sigma_r * sigma_r * dt,
            fac_v: -sigma_r * sq,
            s_m: (sigma_r * sigma - 0.5 * sigma * sigma) * dt,
            s_v: sigma * sq,
        });
    }
    Ok(plan)
}

/// Uniform (0, 1) from the top 53 bits, then the normal quantile.
pub(crate) fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    normal_quantile(u).expect("uniform draw lies strictly inside (0, 1)")
}

/// Terminal (S_T, Z_T) for one draw vector.
fn terminal_pair(
    plan: &[PairStep],
    scheme: Scheme,
    s0: f64,
    z0: f64,
    normals: &[f64],
) -> (f64, f64) {
    match scheme {
        Scheme::ExactLognormal => {
            let mut es = 0.0;
            let mut ez = 0.0;
            for (step, &xi) in plan.iter().zip(normals) {
                es += step.m_s + step.v_s * xi;
                ez += step.m_z + step.v_z * xi;
            }
            (s0 * es.exp(), z0 * ez.exp())
        }
        Scheme::Euler => {
            let mut s = s0;
            let mut z = z0;
            for (step, &xi) in plan.iter().zip(normals) {
                s *= 1.0 + step.a_s + step.v_s * xi;
                z *= 1.0 + step.a_z + step.v_z * xi;
            }
            (s, z)
        }
    }
}

fn terminal_single(plan: &[SingleStep], scheme: Scheme, s0: f64, normals: &[f64]) -> f64 {
    match scheme {
        Scheme::ExactLognormal => {
            let mut e = 0.0;
            for (step, &xi) in plan.iter().zip(normals) {
                e += step.m + step.v * xi;
            }
            s0 * e.exp()
        }
        Scheme::Euler => {
            let mut s = s0;
            for (step, &xi) in plan.iter().zip(normals) {
                s *= 1.0 + step.a + step.v * xi;
            }
            s
        }
    }
}

/// Streams path functionals through ordered sub-batches and reduces them to a
/// mean and standard error. `path_value` sees one draw vector per path.
fn stream_units<F>(cfg: &McConfig, normals_per_path: usize, path_value: F) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let pairing = cfg.antithetic;
    let n_units = if pairing {
        cfg.n_paths / 2
    } else {
        cfg.n_paths
    };
    let n_blocks = n_units.div_ceil(UNIT_BLOCK);
    let partials: Vec<(f64, f64)> = (0..n_blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
            rng.set_stream(block as u64);
            let lo = block * UNIT_BLOCK;
            let hi = ((block + 1) * UNIT_BLOCK).min(n_units);
            let mut buf = vec![0.0; normals_per_path];
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in lo..hi {
                for slot in buf.iter_mut() {
                    *slot = standard_normal(&mut rng);
                }
                let mut v = path_value(&buf);
                if pairing {
                    for slot in buf.iter_mut() {
                        *slot = -*slot;
                    }
                    v = 0.5 * (v + path_value(&buf));
                }
                sum += v;
                sum_sq += v * v;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = partials
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let n = n_units as f64;
    let mean = sum / n;
    let var = ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        n_paths: cfg.n_paths,
    })
}

/// Records full paths for up to two coupled processes sharing the draws.
/// Returns one row set per requested process, in path order.
fn record_rows<F>(cfg: &McConfig, normals_per_path: usize, n_cols: usize, fill_row: F) -> Result<Vec<Vec<Vec<f64>>>>
where
    F: Fn(&[f64], &mut [Vec<f64>]) + Sync,
{
    cfg.validate()?;
    let pairing = cfg.antithetic;
    let rows_per_unit = if pairing { 2 } else { 1 };
    let n_units = cfg.n_paths / rows_per_unit;
    let n_blocks = n_units.div_ceil(UNIT_BLOCK);
    let blocks: Vec<Vec<Vec<Vec<f64>>>> = (0..n_blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
            rng.set_stream(block as u64);
            let lo = block * UNIT_BLOCK;
            let hi = ((block + 1) * UNIT_BLOCK).min(n_units);
            let mut buf = vec![0.0; normals_per_path];
            let mut out: Vec<Vec<Vec<f64>>> = Vec::with_capacity((hi - lo) * rows_per_unit);
            for _ in lo..hi {
                for slot in buf.iter_mut() {
                    *slot = standard_normal(&mut rng);
                }
                let mut rows = vec![vec![0.0; n_cols]; 2];
                fill_row(&buf, &mut rows);
                out.push(rows.clone());
                if pairing {
                    for slot in buf.iter_mut() {
                        *slot = -*slot;
                    }
                    fill_row(&buf, &mut rows);
                    out.push(rows);
                }
            }
            out
        })
        .collect();
    // blocks[b][unit_row][process][col] -> per-process row matrices.
    let mut per_process: Vec<Vec<Vec<f64>>> =
        (0..2).map(|_| Vec::with_capacity(cfg.n_paths)).collect();
    for block in blocks {
        for rows in block {
            for (p, row) in rows.into_iter().enumerate() {
                per_process[p].push(row);
            }
        }
    }
    Ok(per_process)
}

fn recording_times(t: f64, n_steps: usize) -> Vec<f64> {
    let mut times = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    for k in 1..n_steps {
        times.push(t * k as f64 / n_steps as f64);
    }
    times.push(t);
    times
}

/// Simulates the joint (S, Z) pair under the pricing measure; both batches are
/// driven by the same normal draws, so their paths are perfectly dependent.
pub fn simulate_q_pair(
    s0: f64,
    z0: f64,
    params: &DualAssetParams,
    t: f64,
    cfg: &McConfig,
) -> Result<(PathBatch, PathBatch)> {
    if !(s0 > 0.0 && z0 > 0.0) {
        return Err(PricingError::InvalidInput(format!(
            "spot prices must be positive, got s0 = {s0}, z0 = {z0}"
        )));
    }
    let plan = q_pair_plan(params, t, cfg.n_steps)?;
    let n_cols = cfg.n_steps + 1;
    let scheme = cfg.scheme;
    let rows = record_rows(cfg, plan.len(), n_cols, |normals, rows| {
        rows[0][0] = s0;
        rows[1][0] = z0;
        match scheme {
            Scheme::ExactLognormal => {
                let mut es = 0.0;
                let mut ez = 0.0;
                let mut col = 1;
                for (step, &xi) in plan.iter().zip(normals) {
                    es += step.m_s + step.v_s * xi;
                    ez += step.m_z + step.v_z * xi;
                    if step.record {
                        rows[0][col] = s0 * es.exp();
                        rows[1][col] = z0 * ez.exp();
                        col += 1;
                    }
                }
            }
            Scheme::Euler => {
                let mut s = s0;
                let mut z = z0;
                let mut col = 1;
                for (step, &xi) in plan.iter().zip(normals) {
                    s *= 1.0 + step.a_s + step.v_s * xi;
                    z *= 1.0 + step.a_z + step.v_z * xi;
                    if step.record {
                        rows[0][col] = s;
                        rows[1][col] = z;
                        col += 1;
                    }
                }
            }
        }
    })?;
    let mut it = rows.into_iter();
    let (paths_s, paths_z) = (it.next().unwrap(), it.next().unwrap());
    let times = recording_times(t, cfg.n_steps);
    Ok((
        PathBatch {
            paths: paths_s,
            times: times.clone(),
            seed: cfg.seed,
            scheme: cfg.scheme,
            measure: Measure::Q,
            process_tag: ProcessTag::S,
        },
        PathBatch {
            paths: paths_z,
            times,
            seed: cfg.seed,
            scheme: cfg.scheme,
            measure: Measure::Q,
            process_tag: ProcessTag::Z,
        },
    ))
}

/// Simulates a single asset under the natural measure, plain or deflated.
pub fn simulate_p_single(
    s0: f64,
    params: &SingleAssetParams,
    t: f64,
    cfg: &McConfig,
    deflated: bool,
) -> Result<PathBatch> {
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(PricingError::InvalidInput(format!(
            "spot price must be positive, got {s0}"
        )));
    }
    let plan = p_single_plan(params, t, cfg.n_steps, deflated)?;
    let n_cols = cfg.n_steps + 1;
    let scheme = cfg.scheme;
    let rows = record_rows(cfg, plan.len(), n_cols, |normals, rows| {
        rows[0][0] = s0;
        match scheme {
            Scheme::ExactLognormal => {
                let mut e = 0.0;
                let mut col = 1;
                for (step, &xi) in plan.iter().zip(normals) {
                    e += step.m + step.v * xi;
                    if step.record {
                        rows[0][col] = s0 * e.exp();
                        col += 1;
                    }
                }
            }
            Scheme::Euler => {
                let mut s = s0;
                let mut col = 1;
                for (step, &xi) in plan.iter().zip(normals) {
                    s *= 1.0 + step.a + step.v * xi;
                    if step.record {
                        rows[0][col] = s;
                        col += 1;
                    }
                }
            }
        }
    })?;
    Ok(PathBatch {
        paths: rows.into_iter().next().unwrap(),
        times: recording_times(t, cfg.n_steps),
        seed: cfg.seed,
        scheme: cfg.scheme,
        measure: Measure::P,
        process_tag: if deflated {
            ProcessTag::SPi
        } else {
            ProcessTag::S
        },
    })
}

/// Prices the portfolio call as a numeraire-deflated expectation: the payoff
/// is scaled by S_t / S_T path by path, with no explicit discount factor.
pub fn mc_price_lr(
    s0: f64,
    z0: f64,
    params: &DualAssetParams,
    spec: &OptionSpec,
    cfg: &McConfig,
) -> Result<McEstimate> {
    if !(s0 > 0.0 && z0 > 0.0) {
        return Err(PricingError::InvalidInput(format!(
            "spot prices must be positive, got s0 = {s0}, z0 = {z0}"
        )));
    }
    spec.validate()?;
    if spec.payoff != PayoffKind::PortfolioCall {
        return Err(PricingError::InvalidInput(
            "mc_price_lr prices portfolio calls".into(),
        ));
    }
    let plan = q_pair_plan(params, spec.maturity, cfg.n_steps)?;
    let scheme = cfg.scheme;
    stream_units(cfg, plan.len(), |normals| {
        let (st, zt) = terminal_pair(&plan, scheme, s0, z0, normals);
        spec.payoff_value(st, zt) * s0 / st
    })
}

/// Prices a single-asset call on the deflated process under the natural
/// measure, discounting by the riskless integral; no measure change anywhere.
pub fn mc_price_pi(
    s0: f64,
    params: &SingleAssetParams,
    spec: &OptionSpec,
    cfg: &McConfig,
) -> Result<McEstimate> {
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(PricingError::InvalidInput(format!(
            "spot price must be positive, got {s0}"
        )));
    }
    spec.validate()?;
    if spec.payoff != PayoffKind::SingleAssetCall {
        return Err(PricingError::InvalidInput(
            "mc_price_pi prices single-asset calls".into(),
        ));
    }
    let plan = p_single_plan(params, spec.maturity, cfg.n_steps, true)?;
    let discount = (-params.r_f.integral(0.0, spec.maturity)).exp();
    let scheme = cfg.scheme;
    stream_units(cfg, plan.len(), |normals| {
        let st = terminal_single(&plan, scheme, s0, normals);
        spec.payoff_value(st, 0.0) * discount
    })
}

/// Averages the numeraire-form payoff functional: each path carries an
/// explicit change-of-numeraire exponential in place of a discount factor,
/// and the payoff argument diffuses with the plain volatility. The result is
/// reported as its own estimate and is not reconciled with [`mc_price_pi`];
/// see [`compare_bsm_vs_pi`] for the side-by-side view of the two routes.
pub fn mc_price_deflated_numeraire(
    s0: f64,
    params: &SingleAssetParams,
    spec: &OptionSpec,
    cfg: &McConfig,
) -> Result<McEstimate> {
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(PricingError::InvalidInput(format!(
            "spot price must be positive, got {s0}"
        )));
    }
    spec.validate()?;
    if spec.payoff != PayoffKind::SingleAssetCall {
        return Err(PricingError::InvalidInput(
            "mc_price_deflated_numeraire prices single-asset calls".into(),
        ));
    }
    if cfg.scheme != Scheme::ExactLognormal {
        return Err(PricingError::InvalidInput(
            "the numeraire estimator uses exact stepping only".into(),
        ));
    }
    let plan = numeraire_plan(params, spec.maturity, cfg.n_steps)?;
    stream_units(cfg, plan.len(), |normals| {
        let mut fac = 0.0;
        let mut se = 0.0;
        for (step, &xi) in plan.iter().zip(normals) {
            fac += step.fac_m + step.fac_v * xi;
            se += step.s_m + step.s_v * xi;
        }
        fac.exp() * spec.payoff_value(s0 * se.exp(), 0.0)
    })
}

/// Single-asset call priced with the plain volatility and with the deflated
/// volatility at the same riskless rate, reported side by side.
pub fn compare_bsm_vs_pi(
    s0: f64,
    params: &SingleAssetParams,
    spec: &OptionSpec,
) -> Result<PiComparisonReport> {
    spec.validate()?;
    let (Some(r_f), Some(sigma)) = (params.r_f.constant_value(), params.sigma.constant_value())
    else {
        return Err(PricingError::InvalidInput(
            "the comparison needs constant coefficients".into(),
        ));
    };
    let sigma_r = params.sigma_r_at(0.0)?;
    let price_plain_vol = black_scholes_call(s0, spec.strike, r_f, sigma, spec.maturity)?;
    let price_deflated_vol = black_scholes_call(s0, spec.strike, r_f, sigma_r, spec.maturity)?;
    Ok(PiComparisonReport {
        sigma,
        sigma_r,
        price_plain_vol,
        price_deflated_vol,
        difference: price_plain_vol - price_deflated_vol,
    })
}

/// Sample mean of Z_T / S_T under the pricing measure against Z_0 / S_0.
pub fn z_hat_martingale_check(
    s0: f64,
    z0: f64,
    params: &DualAssetParams,
    t: f64,
    cfg: &McConfig,
) -> Result<MartingaleCheck> {
    if !(s0 > 0.0 && z0 > 0.0) {
        return Err(PricingError::InvalidInput(format!(
            "spot prices must be positive, got s0 = {s0}, z0 = {z0}"
        )));
    }
    let plan = q_pair_plan(params, t, cfg.n_steps)?;
    let scheme = cfg.scheme;
    let estimate = stream_units(cfg, plan.len(), |normals| {
        let (st, zt) = terminal_pair(&plan, scheme, s0, z0, normals);
        zt / st
    })?;
    Ok(MartingaleCheck::new(
        "z-hat-under-q",
        z0 / s0,
        estimate,
    ))
}

/// The two natural-measure / numeraire-measure martingale diagnostics of the
/// deflated model: S_pi discounted by the bank account under P, and the
/// S / S_pi ratio under Q.
pub fn deflated_martingale_checks(
    s0: f64,
    params: &SingleAssetParams,
    t: f64,
    cfg: &McConfig,
) -> Result<Vec<MartingaleCheck>> {
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(PricingError::InvalidInput(format!(
            "spot price must be positive, got {s0}"
        )));
    }
    check_horizon(t)?;
    let deflated_plan = p_single_plan(params, t, cfg.n_steps, true)?;
    let bank = params.r_f.integral(0.0, t).exp();
    let scheme = cfg.scheme;
    let discounted = stream_units(cfg, deflated_plan.len(), |normals| {
        terminal_single(&deflated_plan, scheme, s0, normals) / bank
    })?;

    // Ratio S / S_pi under Q: driftless lognormal with loading sigma - sigma_R
    // per sub-step, started at 1.
    let (grid, _) = stepping_grid(t, cfg.n_steps, &[&params.mu, &params.sigma, &params.r_f]);
    let mut ratio_plan = Vec::with_capacity(grid.len() - 1);
    for i in 0..grid.len() - 1 {
        let (a, b) = (grid[i], grid[i + 1]);
        let dt = b - a;
        let loading = params.sigma.value_at(a) - params.sigma_r_at(a)?;
        ratio_plan.push(SingleStep {
            m: -0.5 * loading * loading * dt,
            v: loading * dt.sqrt(),
            a: 0.0,
            record: false,
        });
    }
    let ratio = stream_units(cfg, ratio_plan.len(), |normals| {
        terminal_single(&ratio_plan, Scheme::ExactLognormal, 1.0, normals)
    })?;

    Ok(vec![
        MartingaleCheck::new("s-pi-over-bank-under-p", s0, discounted),
        MartingaleCheck::new("s-over-s-pi-under-q", 1.0, ratio),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{
        lognormal_terminal_params, lr_call_price, LrClosedFormInputs,
    };

    fn reference_params() -> DualAssetParams {
        DualAssetParams::constant(0.08, 0.2, 0.14, 0.4).unwrap()
    }

    fn reference_spec() -> OptionSpec {
        OptionSpec::portfolio_call(100.0, 1.0, 0.5).unwrap()
    }

    fn single_call(strike: f64, maturity: f64) -> OptionSpec {
        OptionSpec {
            strike,
            maturity,
            eta: 1.0,
            payoff: PayoffKind::SingleAssetCall,
        }
    }

    fn pi_params() -> SingleAssetParams {
        SingleAssetParams::constant(0.10, 0.2, 0.05).unwrap()
    }

    #[test]
    fn batches_are_reproducible_and_positive() {
        let cfg = McConfig::new(2_000, 7).with_steps(4);
        let (s1, z1) = simulate_q_pair(100.0, 90.0, &reference_params(), 1.0, &cfg).unwrap();
        let (s2, z2) = simulate_q_pair(100.0, 90.0, &reference_params(), 1.0, &cfg).unwrap();
        assert_eq!(s1.paths, s2.paths);
        assert_eq!(z1.paths, z2.paths);
        assert_eq!(s1.paths.len(), 2_000);
        assert_eq!(s1.paths[0].len(), 5);
        assert!(s1
            .paths
            .iter()
            .chain(z1.paths.iter())
            .all(|row| row.iter().all(|&x| x > 0.0)));

        let other_seed = McConfig::new(2_000, 8).with_steps(4);
        let (s3, _) = simulate_q_pair(100.0, 90.0, &reference_params(), 1.0, &other_seed).unwrap();
        assert_ne!(s1.paths, s3.paths);
    }

    #[test]
    fn pair_batches_share_their_normal_draws() {
        let cfg = McConfig::new(64, 3).with_steps(4);
        let params = reference_params();
        let (s, z) = simulate_q_pair(100.0, 80.0, &params, 1.0, &cfg).unwrap();
        let plan = q_pair_plan(&params, 1.0, 4).unwrap();
        for (row_s, row_z) in s.paths.iter().zip(&z.paths) {
            for k in 0..4 {
                let xi_s = ((row_s[k + 1] / row_s[k]).ln() - plan[k].m_s) / plan[k].v_s;
                let xi_z = ((row_z[k + 1] / row_z[k]).ln() - plan[k].m_z) / plan[k].v_z;
                assert!(
                    (xi_s - xi_z).abs() < 1e-11,
                    "recovered increments differ: {xi_s} vs {xi_z}"
                );
            }
        }
    }

    #[test]
    fn estimates_are_invariant_to_thread_count() {
        let cfg = McConfig::new(50_000, 42);
        let parallel = mc_price_lr(100.0, 100.0, &reference_params(), &reference_spec(), &cfg)
            .unwrap();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| {
                mc_price_lr(100.0, 100.0, &reference_params(), &reference_spec(), &cfg).unwrap()
            });
        assert_eq!(parallel.value.to_bits(), single.value.to_bits());
        assert_eq!(parallel.std_error.to_bits(), single.std_error.to_bits());
    }

    #[test]
    fn terminal_log_moments_match_the_closed_form_parameters() {
        let spec = reference_spec();
        let inputs =
            LrClosedFormInputs::new(100.0, 90.0, &reference_params(), &spec, 0.0).unwrap();
        let target = lognormal_terminal_params(&inputs);
        let cfg = McConfig::new(200_000, 11);
        let (s, z) = simulate_q_pair(100.0, 90.0, &reference_params(), 1.0, &cfg).unwrap();
        for (batch, mean, sd) in [
            (&s, target.mean_log_s, target.sd_log_s),
            (&z, target.mean_log_z, target.sd_log_z),
        ] {
            let logs: Vec<f64> = batch.paths.iter().map(|row| row[1].ln()).collect();
            let n = logs.len() as f64;
            let m = logs.iter().sum::<f64>() / n;
            let v = logs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
            let se_mean = sd / n.sqrt();
            assert!(
                (m - mean).abs() <= 3.0 * se_mean,
                "log mean {m} vs {mean} (3 s.e. = {})",
                3.0 * se_mean
            );
            let se_sd = sd / (2.0 * n).sqrt();
            assert!(
                (v.sqrt() - sd).abs() <= 3.0 * se_sd,
                "log sd {} vs {sd}",
                v.sqrt()
            );
        }
    }

    #[test]
    fn ratio_is_a_martingale_under_the_pricing_measure() {
        let check = z_hat_martingale_check(
            100.0,
            90.0,
            &reference_params(),
            1.0,
            &McConfig::new(400_000, 13),
        )
        .unwrap();
        assert!((check.expected - 0.9).abs() < 1e-15);
        assert!(
            check.z_score.abs() <= 3.0,
            "z-hat diagnostic z = {}",
            check.z_score
        );
    }

    #[test]
    fn price_matches_closed_form_within_three_standard_errors() {
        let spec = reference_spec();
        let inputs =
            LrClosedFormInputs::new(100.0, 100.0, &reference_params(), &spec, 0.0).unwrap();
        let exact = lr_call_price(&inputs).unwrap();
        let est = mc_price_lr(
            100.0,
            100.0,
            &reference_params(),
            &spec,
            &McConfig::new(400_000, 17),
        )
        .unwrap();
        assert!(
            (est.value - exact).abs() <= 3.0 * est.std_error,
            "mc {} +- {} vs exact {exact}",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn eta_one_matches_black_scholes() {
        let spec = OptionSpec::portfolio_call(100.0, 1.0, 1.0).unwrap();
        let oracle = black_scholes_call(100.0, 100.0, 0.02, 0.2, 1.0).unwrap();
        let est = mc_price_lr(
            100.0,
            100.0,
            &reference_params(),
            &spec,
            &McConfig::new(400_000, 19),
        )
        .unwrap();
        assert!(
            (est.value - oracle).abs() <= 3.0 * est.std_error,
            "mc {} +- {} vs oracle {oracle}",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn near_zero_strike_recovers_the_deflated_portfolio() {
        let spec = OptionSpec::portfolio_call(1e-6, 1.0, 0.5).unwrap();
        let inputs =
            LrClosedFormInputs::new(100.0, 80.0, &reference_params(), &spec, 0.0).unwrap();
        let exact = lr_call_price(&inputs).unwrap();
        // eta S0 + (1 - eta) Z0 up to the vanishing strike correction.
        assert!((exact - 90.0).abs() < 1e-4);
        let est = mc_price_lr(
            100.0,
            80.0,
            &reference_params(),
            &spec,
            &McConfig::new(200_000, 23),
        )
        .unwrap();
        assert!((est.value - exact).abs() <= 3.0 * est.std_error);
    }

    #[test]
    fn exact_scheme_is_unbiased_for_any_step_count() {
        let spec = reference_spec();
        let inputs =
            LrClosedFormInputs::new(100.0, 100.0, &reference_params(), &spec, 0.0).unwrap();
        let exact = lr_call_price(&inputs).unwrap();
        let est = mc_price_lr(
            100.0,
            100.0,
            &reference_params(),
            &spec,
            &McConfig::new(200_000, 29).with_steps(7),
        )
        .unwrap();
        assert!((est.value - exact).abs() <= 3.0 * est.std_error);
    }

    #[test]
    fn euler_scheme_lands_near_the_exact_price_at_fine_steps() {
        let spec = reference_spec();
        let inputs =
            LrClosedFormInputs::new(100.0, 100.0, &reference_params(), &spec, 0.0).unwrap();
        let exact = lr_call_price(&inputs).unwrap();
        let est = mc_price_lr(
            100.0,
            100.0,
            &reference_params(),
            &spec,
            &McConfig::new(100_000, 31)
                .with_steps(256)
                .with_scheme(Scheme::Euler),
        )
        .unwrap();
        assert!(
            (est.value - exact).abs() <= 3.0 * est.std_error + 0.1,
            "euler {} +- {} vs exact {exact}",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn antithetic_pairs_do_not_increase_the_error_bar() {
        let spec = reference_spec();
        let plain = mc_price_lr(
            100.0,
            100.0,
            &reference_params(),
            &spec,
            &McConfig::new(100_000, 37),
        )
        .unwrap();
        let anti = mc_price_lr(
            100.0,
            100.0,
            &reference_params(),
            &spec,
            &McConfig::new(100_000, 37).with_antithetic(true),
        )
        .unwrap();
        assert!(
            anti.std_error <= plain.std_error * 1.05,
            "antithetic s.e. {} vs plain {}",
            anti.std_error,
            plain.std_error
        );
        let odd = McConfig::new(100_001, 37).with_antithetic(true);
        assert!(mc_price_lr(100.0, 100.0, &reference_params(), &spec, &odd).is_err());
    }

    #[test]
    fn plain_natural_measure_moments() {
        let params = pi_params();
        let cfg = McConfig::new(200_000, 41);
        let batch = simulate_p_single(100.0, &params, 2.0, &cfg, false).unwrap();
        assert_eq!(batch.measure, Measure::P);
        assert_eq!(batch.process_tag, ProcessTag::S);
        let target = 100f64.ln() + (0.10 - 0.5 * 0.04) * 2.0;
        let sd = 0.2 * 2f64.sqrt();
        let logs: Vec<f64> = batch.paths.iter().map(|row| row[1].ln()).collect();
        let n = logs.len() as f64;
        let m = logs.iter().sum::<f64>() / n;
        assert!(
            (m - target).abs() <= 3.0 * sd / n.sqrt(),
            "mean {m} vs {target}"
        );
    }

    #[test]
    fn deflated_diagnostics_pass_at_three_standard_errors() {
        let checks =
            deflated_martingale_checks(100.0, &pi_params(), 1.0, &McConfig::new(400_000, 43))
                .unwrap();
        assert_eq!(checks.len(), 2);
        for check in &checks {
            assert!(
                check.z_score.abs() <= 3.0,
                "{} z = {}",
                check.label,
                check.z_score
            );
        }
        assert_eq!(checks[0].label, "s-pi-over-bank-under-p");
        assert!((checks[0].expected - 100.0).abs() < 1e-15);
        assert_eq!(checks[1].label, "s-over-s-pi-under-q");
        assert!((checks[1].expected - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_deflator_reproduces_the_plain_path_law() {
        let params = SingleAssetParams::constant(0.05, 0.2, 0.05).unwrap();
        let cfg = McConfig::new(500, 47).with_steps(3);
        let plain = simulate_p_single(100.0, &params, 1.0, &cfg, false).unwrap();
        let deflated = simulate_p_single(100.0, &params, 1.0, &cfg, true).unwrap();
        for (a, b) in plain.paths.iter().zip(&deflated.paths) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-10 * x.abs());
            }
        }
    }

    #[test]
    fn pi_price_matches_the_deflated_volatility_formula() {
        let oracle = black_scholes_call(100.0, 100.0, 0.05, 0.1, 1.0).unwrap();
        let est = mc_price_pi(
            100.0,
            &pi_params(),
            &single_call(100.0, 1.0),
            &McConfig::new(400_000, 53),
        )
        .unwrap();
        assert!(
            (est.value - oracle).abs() <= 3.0 * est.std_error,
            "pi-mc {} +- {} vs oracle {oracle}",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn huge_drift_collapses_to_a_discounted_deterministic_payoff() {
        let params = SingleAssetParams::constant(50.0, 0.2, 0.05).unwrap();
        let expected = 100.0 - 100.0 * (-0.05f64).exp();
        let est = mc_price_pi(
            100.0,
            &params,
            &single_call(100.0, 1.0),
            &McConfig::new(50_000, 59),
        )
        .unwrap();
        assert!(
            (est.value - expected).abs() <= 3.0 * est.std_error + 1e-6,
            "mc {} vs deterministic {expected}",
            est.value
        );
        assert!(est.std_error < 1e-3);
    }

    #[test]
    fn constant_payoff_has_zero_variance() {
        let cfg = McConfig::new(1_000, 61);
        let est = stream_units(&cfg, 1, |_| 0.97).unwrap();
        assert!((est.value - 0.97).abs() < 1e-13);
        assert!(est.std_error < 1e-7, "s.e. {}", est.std_error);
    }

    #[test]
    fn numeraire_route_matches_its_analytic_expectation() {
        // Absorbing the change-of-numeraire exponential into the measure
        // turns the payoff argument into a driftless lognormal with the plain
        // volatility, so the estimator's exact value is the zero-rate call
        // price at sigma. The deflated volatility cancels entirely.
        let oracle = black_scholes_call(100.0, 100.0, 0.0, 0.2, 1.0).unwrap();
        let est = mc_price_deflated_numeraire(
            100.0,
            &pi_params(),
            &single_call(100.0, 1.0),
            &McConfig::new(400_000, 67),
        )
        .unwrap();
        assert!(
            (est.value - oracle).abs() <= 3.0 * est.std_error,
            "numeraire {} +- {} vs analytic {oracle}",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn numeraire_forward_payoff_recovers_the_spot() {
        // For g(x) = x the factor and the underlying combine into a driftless
        // exponential with unit expectation, so the price is exactly S_0.
        let plan = numeraire_plan(&pi_params(), 1.0, 1).unwrap();
        let cfg = McConfig::new(400_000, 73);
        let est = stream_units(&cfg, plan.len(), |normals| {
            let mut fac = 0.0;
            let mut se = 0.0;
            for (step, &xi) in plan.iter().zip(normals) {
                fac += step.fac_m + step.fac_v * xi;
                se += step.s_m + step.s_v * xi;
            }
            fac.exp() * 100.0 * se.exp()
        })
        .unwrap();
        assert!(
            (est.value - 100.0).abs() <= 3.0 * est.std_error,
            "forward {} +- {}",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn degenerate_numeraire_pair_is_rejected() {
        let params = SingleAssetParams::constant(0.05, 0.2, 0.05).unwrap();
        let e = mc_price_deflated_numeraire(
            100.0,
            &params,
            &single_call(100.0, 1.0),
            &McConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(
            e,
            PricingError::DegenerateVolatilitySpread { .. }
        ));
        let e = mc_price_deflated_numeraire(
            100.0,
            &pi_params(),
            &single_call(100.0, 1.0),
            &McConfig::default().with_scheme(Scheme::Euler),
        )
        .unwrap_err();
        assert!(matches!(e, PricingError::InvalidInput(_)));
    }

    #[test]
    fn zero_drift_is_rejected_for_deflated_simulation() {
        let params = SingleAssetParams::constant(0.0, 0.2, 0.05).unwrap();
        let e = simulate_p_single(100.0, &params, 1.0, &McConfig::default(), true).unwrap_err();
        assert!(matches!(e, PricingError::ZeroDrift { .. }));
    }

    #[test]
    fn schedule_exponents_integrate_exactly_across_breakpoints() {
        // Volatility jumps at t = 0.37, off the uniform recording grid.
        let params = DualAssetParams::new(
            Param::Constant(0.08),
            Param::piecewise(vec![(0.0, 0.2), (0.37, 0.5)]).unwrap(),
            Param::Constant(0.14),
            Param::Constant(0.4),
        )
        .unwrap();
        // Shadow rate is 0.02 before the jump and 0.38 after; the S log-drift
        // under the pricing measure is r + sigma^2 / 2 on each segment.
        let mean_target =
            100f64.ln() + (0.02 + 0.02) * 0.37 + (0.38 + 0.125) * 0.63;
        let var_target: f64 = 0.04 * 0.37 + 0.25 * 0.63;
        let cfg = McConfig::new(150_000, 79);
        let (s, _) = simulate_q_pair(100.0, 100.0, &params, 1.0, &cfg).unwrap();
        let logs: Vec<f64> = s.paths.iter().map(|row| row[1].ln()).collect();
        let n = logs.len() as f64;
        let m = logs.iter().sum::<f64>() / n;
        let sd = var_target.sqrt();
        assert!(
            (m - mean_target).abs() <= 3.0 * sd / n.sqrt(),
            "mean {m} vs {mean_target}"
        );
        let v = logs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        assert!(
            (v.sqrt() - sd).abs() <= 3.0 * sd / (2.0 * n).sqrt(),
            "sd {} vs {sd}",
            v.sqrt()
        );
    }

    #[test]
    fn comparison_report_carries_both_volatilities() {
        let report =
            compare_bsm_vs_pi(100.0, &pi_params(), &single_call(100.0, 1.0)).unwrap();
        assert!((report.sigma - 0.2).abs() < 1e-15);
        assert!((report.sigma_r - 0.1).abs() < 1e-15);
        let plain = black_scholes_call(100.0, 100.0, 0.05, 0.2, 1.0).unwrap();
        let deflated = black_scholes_call(100.0, 100.0, 0.05, 0.1, 1.0).unwrap();
        assert!((report.price_plain_vol - plain).abs() < 1e-12);
        assert!((report.price_deflated_vol - deflated).abs() < 1e-12);
        assert!(report.difference > 0.0);

        let identity = SingleAssetParams::constant(0.05, 0.2, 0.05).unwrap();
        let same = compare_bsm_vs_pi(100.0, &identity, &single_call(100.0, 1.0)).unwrap();
        assert!(same.difference.abs() < 1e-12);
    }

    #[test]
    fn degenerate_spread_is_rejected_by_the_pair_plan() {
        let params = DualAssetParams::constant(0.08, 0.3, 0.14, 0.3).unwrap();
        let e = simulate_q_pair(100.0, 100.0, &params, 1.0, &McConfig::default()).unwrap_err();
        assert!(matches!(
            e,
            PricingError::DegenerateVolatilitySpread { .. }
        ));
    }

    #[test]
    fn config_validation_rejects_degenerate_requests() {
        assert!(McConfig::new(1, 42).validate().is_err());
        assert!(McConfig::new(10, 42).with_steps(0).validate().is_err());
        assert!(McConfig::new(11, 42).with_antithetic(true).validate().is_err());
        assert!(McConfig::new(10, 42).validate().is_ok());
    }
}
