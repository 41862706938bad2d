//! Subcommand implementations: each builds its report in memory and writes it
//! in one piece, so identical inputs produce byte-identical files.

use std::fmt;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use altpricing::closed_form::{
    lr_call_price_detailed, lr_call_price_quadrature, LrClosedFormInputs, QUADRATURE_TOLERANCE,
};
use altpricing::companion::{named_xi_points, xi_curve, XiPoint};
use altpricing::error::PricingError;
use altpricing::estimation::{
    load_series, load_yield_series, rolling_estimates, synthesize_pair, write_estimates_csv,
    RollingEstimate, YieldSeries,
};
use altpricing::lattice::{build_pi_tree, price_lr_tree, price_pi_tree, LatticeConfig};
use altpricing::market::SingleAssetParams;
use altpricing::monte_carlo::{
    mc_price_deflated_numeraire, mc_price_lr, mc_price_pi, McConfig, McEstimate,
};
use altpricing::pde_verifier::{run_grid_verification, VerifyOptions};

use crate::config::PriceDoc;
use crate::{EstimateArgs, Format, Model, PathsArgs, PriceArgs, VerifyArgs, XiCurveArgs};

/// Failure with the process exit code it maps to: 1 invariant, 2 config, 3 I/O.
#[derive(Debug)]
pub enum CliError {
    Invariant(String),
    Config(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invariant(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invariant(msg) | CliError::Config(msg) | CliError::Io(msg) => {
                write!(f, "{msg}")
            }
        }
    }
}

impl From<PricingError> for CliError {
    fn from(e: PricingError) -> Self {
        match e {
            PricingError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

/// Writes the whole report to `--output` or stdout.
fn emit(output: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match output {
        Some(path) => std::fs::write(path, bytes)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| CliError::Io(format!("cannot write stdout: {e}")))
        }
    }
}

fn to_json_bytes(value: &impl Serialize) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Io(format!("cannot serialize report: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Serialize)]
struct PriceReport {
    model: &'static str,
    price: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    std_error: Option<f64>,
    diagnostics: serde_json::Value,
}

impl PriceReport {
    fn exact(model: &'static str, price: f64, diagnostics: serde_json::Value) -> Self {
        PriceReport {
            model,
            price,
            std_error: None,
            diagnostics,
        }
    }

    fn sampled(model: &'static str, est: &McEstimate, diagnostics: serde_json::Value) -> Self {
        PriceReport {
            model,
            price: est.value,
            std_error: Some(est.std_error),
            diagnostics,
        }
    }

    fn to_bytes(&self, format: Format) -> Result<Vec<u8>, CliError> {
        match format {
            Format::Json => to_json_bytes(self),
            Format::Csv => {
                let mut wtr = csv::Writer::from_writer(Vec::new());
                let csv_err = |e: csv::Error| CliError::Io(format!("cannot write csv: {e}"));
                wtr.write_record(["model", "price", "std_error"]).map_err(csv_err)?;
                wtr.write_record([
                    self.model.to_string(),
                    self.price.to_string(),
                    self.std_error.map(|s| s.to_string()).unwrap_or_default(),
                ])
                .map_err(csv_err)?;
                wtr.into_inner()
                    .map_err(|e| CliError::Io(format!("cannot write csv: {e}")))
            }
        }
    }
}

pub fn run_price(args: &PriceArgs) -> Result<(), CliError> {
    let doc = PriceDoc::load(&args.config)?;
    let report = match args.model {
        Model::LrClosed => {
            let (z0, params, spec) = doc.dual_market()?;
            let inputs = LrClosedFormInputs::new(doc.s0, z0, &params, &spec, 0.0)?;
            let (price, d) = lr_call_price_detailed(&inputs)?;
            PriceReport::exact(args.model.as_str(), price, json!({ "boundary_d": d }))
        }
        Model::LrQuad => {
            let (z0, params, spec) = doc.dual_market()?;
            let inputs = LrClosedFormInputs::new(doc.s0, z0, &params, &spec, 0.0)?;
            let abs_tol = args.tolerance.unwrap_or(QUADRATURE_TOLERANCE);
            let price = lr_call_price_quadrature(&inputs, abs_tol)?;
            PriceReport::exact(args.model.as_str(), price, json!({ "abs_tol": abs_tol }))
        }
        Model::LrTree => {
            let (z0, params, spec) = doc.dual_market()?;
            let cfg = LatticeConfig::uniform(args.n, spec.maturity, doc.p)?;
            let result = price_lr_tree(doc.s0, z0, &params, &spec, &cfg)?;
            PriceReport::exact(
                args.model.as_str(),
                result.root_value,
                json!({ "n_steps": args.n, "p": doc.p, "warnings": result.warnings.len() }),
            )
        }
        Model::LrMc => {
            let (z0, params, spec) = doc.dual_market()?;
            let cfg = McConfig::new(args.paths, args.seed);
            let est = mc_price_lr(doc.s0, z0, &params, &spec, &cfg)?;
            PriceReport::sampled(args.model.as_str(), &est, mc_diagnostics(&cfg))
        }
        Model::PiTree => {
            let (params, spec) = doc.single_market()?;
            let cfg = LatticeConfig::uniform(args.n, spec.maturity, doc.p)?;
            let tree = build_pi_tree(doc.s0, &params, &cfg)?;
            let result = price_pi_tree(&tree, &spec)?;
            PriceReport::exact(
                args.model.as_str(),
                result.root_value,
                json!({ "n_steps": args.n, "p": doc.p, "warnings": result.warnings.len() }),
            )
        }
        Model::PiMc => {
            let (params, spec) = doc.single_market()?;
            let cfg = McConfig::new(args.paths, args.seed);
            let est = mc_price_pi(doc.s0, &params, &spec, &cfg)?;
            PriceReport::sampled(args.model.as_str(), &est, mc_diagnostics(&cfg))
        }
        Model::DeflatedMc => {
            let (params, spec) = doc.single_market()?;
            let cfg = McConfig::new(args.paths, args.seed);
            let est = mc_price_deflated_numeraire(doc.s0, &params, &spec, &cfg)?;
            PriceReport::sampled(args.model.as_str(), &est, mc_diagnostics(&cfg))
        }
    };
    emit(args.output.as_deref(), &report.to_bytes(args.format)?)
}

fn mc_diagnostics(cfg: &McConfig) -> serde_json::Value {
    json!({ "n_paths": cfg.n_paths, "seed": cfg.seed })
}

pub fn run_verify(args: &VerifyArgs) -> Result<(), CliError> {
    let options = VerifyOptions {
        n_instances: args.n,
        seed: args.seed,
        check_finite_difference: !args.skip_finite_difference,
        inject_sign_error: args.inject_sign_error,
    };
    let report = run_grid_verification(&options)?;
    emit(args.output.as_deref(), &to_json_bytes(&report)?)?;
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Invariant(format!(
            "{} of {} instances failed; first failure: {}",
            report.failures.len(),
            report.n_instances,
            report.failures.first().map(String::as_str).unwrap_or("none")
        )))
    }
}

fn xi_points_to_csv(points: &[XiPoint]) -> Result<Vec<u8>, CliError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Io(format!("cannot write csv: {e}"));
    wtr.write_record(["gamma", "xi", "label"]).map_err(csv_err)?;
    for point in points {
        wtr.write_record([
            point.gamma.to_string(),
            point.xi.to_string(),
            point.label.map(|l| l.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    wtr.into_inner()
        .map_err(|e| CliError::Io(format!("cannot write csv: {e}")))
}

pub fn run_xi_curve(args: &XiCurveArgs) -> Result<(), CliError> {
    if args.n < 2 {
        return Err(CliError::Config(format!(
            "the gamma grid needs at least 2 points, got {}",
            args.n
        )));
    }
    let named = named_xi_points(args.delta)?;
    let lowest = named.iter().map(|p| p.gamma).fold(f64::INFINITY, f64::min);
    let highest = named.iter().map(|p| p.gamma).fold(f64::NEG_INFINITY, f64::max);
    let lo = args.gamma_min.unwrap_or(lowest - 0.5);
    let hi = args.gamma_max.unwrap_or(highest + 0.5);
    if !(lo < hi) {
        return Err(CliError::Config(format!(
            "gamma range is empty: [{lo}, {hi}]"
        )));
    }
    let grid: Vec<f64> = (0..args.n)
        .map(|k| lo + (hi - lo) * k as f64 / (args.n - 1) as f64)
        .collect();
    let points = xi_curve(args.delta, &grid)?;
    let bytes = match args.format {
        Format::Csv => xi_points_to_csv(&points)?,
        Format::Json => to_json_bytes(&points)?,
    };
    emit(args.output.as_deref(), &bytes)
}

#[derive(Serialize)]
struct PathRow {
    day: usize,
    stock: f64,
    companion: f64,
}

pub fn run_paths(args: &PathsArgs) -> Result<(), CliError> {
    let params = SingleAssetParams::constant(args.mu, args.sigma, args.r_f)?;
    let (stock, companion) =
        synthesize_pair(args.s0, &params, args.gamma, args.days, args.seed)?;
    let rows: Vec<PathRow> = stock
        .closes
        .iter()
        .zip(&companion.closes)
        .enumerate()
        .map(|(day, (&s, &c))| PathRow {
            day,
            stock: s,
            companion: c,
        })
        .collect();
    let bytes = match args.format {
        Format::Csv => {
            let mut wtr = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| CliError::Io(format!("cannot write csv: {e}"));
            wtr.write_record(["day", "stock", "companion"]).map_err(csv_err)?;
            for row in &rows {
                wtr.write_record([
                    row.day.to_string(),
                    row.stock.to_string(),
                    row.companion.to_string(),
                ])
                .map_err(csv_err)?;
            }
            wtr.into_inner()
                .map_err(|e| CliError::Io(format!("cannot write csv: {e}")))?
        }
        Format::Json => to_json_bytes(&rows)?,
    };
    emit(args.output.as_deref(), &bytes)
}

fn estimates_to_csv(estimates: &[RollingEstimate]) -> Result<Vec<u8>, CliError> {
    let mut bytes = Vec::new();
    write_estimates_csv(&mut bytes, estimates)?;
    Ok(bytes)
}

pub fn run_estimate(args: &EstimateArgs) -> Result<(), CliError> {
    let series = load_series(&args.input)?;
    let yields = match &args.yields {
        Some(path) => load_yield_series(path)?,
        None => YieldSeries::flat(args.annual_yield)?,
    };
    let estimates = rolling_estimates(&series, args.window, &yields)?;
    let bytes = match args.format {
        Format::Csv => estimates_to_csv(&estimates)?,
        Format::Json => to_json_bytes(&estimates)?,
    };
    emit(args.output.as_deref(), &bytes)
}
