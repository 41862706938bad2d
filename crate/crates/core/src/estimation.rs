//! Historical parameter estimation and synthetic series generation.
//!
//! Rolling windows of arithmetic daily returns yield drift and volatility
//! estimates, and the rate-to-variance ratio delta is rebuilt from each
//! window against a forward-filled riskless yield series. The synthesizer
//! produces daily lognormal series, optionally paired with the power
//! companion driven by the same increments, for end-to-end checks of the
//! estimation pipeline.

use std::io::Read;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::companion::{perpetual_dynamics, PerpetualSpec};
use crate::error::{PricingError, Result};
use crate::market::SingleAssetParams;
use crate::monte_carlo::standard_normal;

/// Trading days per year used to turn annual yields into daily rates.
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// First date of synthesized series.
const SYNTHETIC_EPOCH: (i32, u32, u32) = (2020, 1, 1);

/// A dated close-price history with strictly increasing dates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceSeries {
    pub dates: Vec<NaiveDate>,
    pub closes: Vec<f64>,
    pub symbol: String,
}

impl PriceSeries {
    pub fn new(dates: Vec<NaiveDate>, closes: Vec<f64>, symbol: impl Into<String>) -> Result<Self> {
        let series = PriceSeries {
            dates,
            closes,
            symbol: symbol.into(),
        };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dates.len() != self.closes.len() {
            return Err(PricingError::InvalidInput(format!(
                "{} dates vs {} closes",
                self.dates.len(),
                self.closes.len()
            )));
        }
        if self.dates.is_empty() {
            return Err(PricingError::InvalidInput("empty price series".into()));
        }
        for (i, w) in self.dates.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(PricingError::ParseError {
                    row: i + 2,
                    message: format!("dates must be strictly increasing: {} then {}", w[0], w[1]),
                });
            }
        }
        for (i, &c) in self.closes.iter().enumerate() {
            if !(c > 0.0 && c.is_finite()) {
                return Err(PricingError::NonPositivePrice {
                    row: i + 1,
                    value: c,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Arithmetic day-over-day returns; entry i covers dates[i] to dates[i+1].
    pub fn arithmetic_returns(&self) -> Vec<f64> {
        self.closes
            .windows(2)
            .map(|w| w[1] / w[0] - 1.0)
            .collect()
    }
}

/// A dated annual-yield history; lookups forward-fill from the most recent
/// date at or before the query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YieldSeries {
    pub dates: Vec<NaiveDate>,
    pub annual_yields: Vec<f64>,
}

impl YieldSeries {
    pub fn new(dates: Vec<NaiveDate>, annual_yields: Vec<f64>) -> Result<Self> {
        if dates.len() != annual_yields.len() {
            return Err(PricingError::InvalidInput(format!(
                "{} dates vs {} yields",
                dates.len(),
                annual_yields.len()
            )));
        }
        if dates.is_empty() {
            return Err(PricingError::InvalidInput("empty yield series".into()));
        }
        for (i, w) in dates.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(PricingError::ParseError {
                    row: i + 2,
                    message: format!("dates must be strictly increasing: {} then {}", w[0], w[1]),
                });
            }
        }
        for (i, &y) in annual_yields.iter().enumerate() {
            if !y.is_finite() {
                return Err(PricingError::ParseError {
                    row: i + 1,
                    message: format!("yield must be finite, got {y}"),
                });
            }
        }
        Ok(YieldSeries {
            dates,
            annual_yields,
        })
    }

    /// The same annual yield on every date.
    pub fn flat(annual_yield: f64) -> Result<Self> {
        Self::new(vec![NaiveDate::MIN], vec![annual_yield])
    }

    /// Annual yield on `date`, forward-filled from the last prior observation.
    pub fn annual_yield_on(&self, date: NaiveDate) -> Result<f64> {
        match self.dates.partition_point(|&d| d <= date) {
            0 => Err(PricingError::InvalidInput(format!(
                "no yield on or before {date}"
            ))),
            k => Ok(self.annual_yields[k - 1]),
        }
    }
}

/// One trailing-window estimate anchored on its end date. `delta_hat` is
/// `None` when the window volatility is zero and the ratio is undefined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RollingEstimate {
    pub date: NaiveDate,
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub delta_hat: Option<f64>,
    pub window: usize,
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| PricingError::ParseError {
            row: 1,
            message: format!("missing column '{name}'"),
        })
}

fn parse_date(field: &str, row: usize) -> Result<NaiveDate> {
    field
        .trim()
        .parse::<NaiveDate>()
        .map_err(|e| PricingError::ParseError {
            row,
            message: format!("bad date '{}': {e}", field.trim()),
        })
}

fn parse_number(field: &str, row: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| PricingError::ParseError {
            row,
            message: format!("bad number '{}': {e}", field.trim()),
        })
}

/// Reads `date,close` records into a validated series. Row numbers in errors
/// count data rows from 1.
pub fn load_series_from_reader(reader: impl Read, symbol: impl Into<String>) -> Result<PriceSeries> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let date_col = header_index(&headers, "date")?;
    let close_col = header_index(&headers, "close")?;
    let mut dates = Vec::new();
    let mut closes = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |col: usize| {
            record.get(col).ok_or_else(|| PricingError::ParseError {
                row,
                message: format!("missing field {col}"),
            })
        };
        let date = parse_date(field(date_col)?, row)?;
        let close = parse_number(field(close_col)?, row)?;
        if !(close > 0.0 && close.is_finite()) {
            return Err(PricingError::NonPositivePrice { row, value: close });
        }
        if let Some(&prev) = dates.last() {
            if date <= prev {
                return Err(PricingError::ParseError {
                    row,
                    message: format!("dates must be strictly increasing: {prev} then {date}"),
                });
            }
        }
        dates.push(date);
        closes.push(close);
    }
    PriceSeries::new(dates, closes, symbol)
}

pub fn load_series(path: impl AsRef<Path>) -> Result<PriceSeries> {
    let path = path.as_ref();
    let symbol = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".to_string());
    let file = std::fs::File::open(path)?;
    load_series_from_reader(file, symbol)
}

/// Reads `date,annual_yield` records into a yield series.
pub fn load_yield_series_from_reader(reader: impl Read) -> Result<YieldSeries> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let date_col = header_index(&headers, "date")?;
    let yield_col = header_index(&headers, "annual_yield")?;
    let mut dates = Vec::new();
    let mut yields = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |col: usize| {
            record.get(col).ok_or_else(|| PricingError::ParseError {
                row,
                message: format!("missing field {col}"),
            })
        };
        dates.push(parse_date(field(date_col)?, row)?);
        yields.push(parse_number(field(yield_col)?, row)?);
    }
    YieldSeries::new(dates, yields)
}

pub fn load_yield_series(path: impl AsRef<Path>) -> Result<YieldSeries> {
    let file = std::fs::File::open(path.as_ref())?;
    load_yield_series_from_reader(file)
}

/// Trailing-window estimates for every date with a full window behind it.
///
/// Each window holds `window` arithmetic returns; the drift estimate is their
/// mean, the volatility estimate the unbiased standard deviation, and
/// delta_hat = 2 r_daily / sigma_hat^2 with r_daily the forward-filled annual
/// yield on the anchor date divided by 252.
pub fn rolling_estimates(
    series: &PriceSeries,
    window: usize,
    yields: &YieldSeries,
) -> Result<Vec<RollingEstimate>> {
    series.validate()?;
    if window < 2 {
        return Err(PricingError::InvalidInput(format!(
            "window must hold at least 2 returns, got {window}"
        )));
    }
    let n = series.len();
    if n < window + 1 {
        return Err(PricingError::WindowTooLong {
            window,
            needed: window + 1,
            available: n,
        });
    }
    let returns = series.arithmetic_returns();
    let mut out = Vec::with_capacity(n - window);
    for k in window..n {
        let slice = &returns[k - window..k];
        let mean = slice.iter().sum::<f64>() / window as f64;
        let ss = slice.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>();
        let sigma_hat = (ss / (window as f64 - 1.0)).sqrt();
        let date = series.dates[k];
        let r_daily = yields.annual_yield_on(date)? / TRADING_DAYS_PER_YEAR;
        let delta_hat = if sigma_hat > 0.0 {
            Some(2.0 * r_daily / (sigma_hat * sigma_hat))
        } else {
            None
        };
        out.push(RollingEstimate {
            date,
            mu_hat: mean,
            sigma_hat,
            delta_hat,
            window,
        });
    }
    Ok(out)
}

fn synthetic_dates(n_days: usize) -> Vec<NaiveDate> {
    let (y, m, d) = SYNTHETIC_EPOCH;
    let epoch = NaiveDate::from_ymd_opt(y, m, d).unwrap();
    (0..n_days)
        .map(|k| epoch.checked_add_days(Days::new(k as u64)).unwrap())
        .collect()
}

fn check_n_days(n_days: usize) -> Result<()> {
    if n_days < 2 {
        return Err(PricingError::InvalidInput(format!(
            "need at least 2 days, got {n_days}"
        )));
    }
    Ok(())
}

/// Daily exact-lognormal series with the given daily-scale drift and
/// volatility schedules (time unit: one day).
pub fn synthesize_series(
    s0: f64,
    params: &SingleAssetParams,
    n_days: usize,
    seed: u64,
) -> Result<PriceSeries> {
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(PricingError::InvalidInput(format!(
            "start price must be positive, got {s0}"
        )));
    }
    check_n_days(n_days)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut closes = Vec::with_capacity(n_days);
    closes.push(s0);
    let mut exponent = 0.0;
    for k in 0..n_days - 1 {
        let t = k as f64;
        let mu = params.mu.value_at(t);
        let sigma = params.sigma.value_at(t);
        exponent += mu - 0.5 * sigma * sigma + sigma * standard_normal(&mut rng);
        closes.push(s0 * exponent.exp());
    }
    PriceSeries::new(synthetic_dates(n_days), closes, "synthetic")
}

/// A stock series and its power companion S^gamma driven by the same daily
/// increments. The companion follows its own lognormal dynamics (drift
/// (1 - gamma) r_f + gamma mu, loading gamma sigma), so its closes equal the
/// perpetual-derivative price evaluated on the stock path.
pub fn synthesize_pair(
    s0: f64,
    params: &SingleAssetParams,
    gamma: f64,
    n_days: usize,
    seed: u64,
) -> Result<(PriceSeries, PriceSeries)> {
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(PricingError::InvalidInput(format!(
            "start price must be positive, got {s0}"
        )));
    }
    check_n_days(n_days)?;
    let spec = PerpetualSpec::new(
        gamma,
        params.r_f.clone(),
        params.sigma.clone(),
        params.mu.clone(),
    )?;
    let (mu_c, sigma_c) = perpetual_dynamics(&spec)?;
    let c0 = s0.powf(gamma);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut stock = Vec::with_capacity(n_days);
    let mut companion = Vec::with_capacity(n_days);
    stock.push(s0);
    companion.push(c0);
    let mut e_s = 0.0;
    let mut e_c = 0.0;
    for k in 0..n_days - 1 {
        let t = k as f64;
        let mu = params.mu.value_at(t);
        let sigma = params.sigma.value_at(t);
        let mu_k = mu_c.value_at(t);
        let sigma_k = sigma_c.value_at(t);
        let xi = standard_normal(&mut rng);
        e_s += mu - 0.5 * sigma * sigma + sigma * xi;
        e_c += mu_k - 0.5 * sigma_k * sigma_k + sigma_k * xi;
        stock.push(s0 * e_s.exp());
        companion.push(c0 * e_c.exp());
    }
    let dates = synthetic_dates(n_days);
    Ok((
        PriceSeries::new(dates.clone(), stock, "synthetic")?,
        PriceSeries::new(dates, companion, "synthetic-power")?,
    ))
}

/// Writes `date,mu_hat,sigma_hat,delta_hat` records; an undefined delta_hat
/// becomes an empty field.
pub fn write_estimates_csv(
    writer: impl std::io::Write,
    estimates: &[RollingEstimate],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["date", "mu_hat", "sigma_hat", "delta_hat"])?;
    for e in estimates {
        wtr.write_record([
            e.date.to_string(),
            e.mu_hat.to_string(),
            e.sigma_hat.to_string(),
            e.delta_hat.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush().map_err(PricingError::Io)?;
    Ok(())
}
