//! Option quotes: CSV ingestion, filters, train/test split, maturity-bucketed
//! error tables and a synthetic quote generator.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heston::HestonParams;
use crate::model::{vix_from_heston_variance, vix_from_state, HiddenState, ModelParams, QuadratureConfig};
use crate::spx::{price_spx, SpxOptionSpec};
use crate::vix::{heston_as_leading_order, price_vix, VixOptionSpec};

/// Days per year used to turn calendar gaps into maturities.
pub const DAYS_PER_YEAR: f64 = 365.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Underlying {
    Spx,
    Vix,
}

impl fmt::Display for Underlying {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Underlying::Spx => "SPX",
            Underlying::Vix => "VIX",
        })
    }
}

impl FromStr for Underlying {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SPX" => Ok(Underlying::Spx),
            "VIX" => Ok(Underlying::Vix),
            other => Err(format!("unknown underlying `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptionType {
    Call,
    Put,
}

impl fmt::Display for OptionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptionType::Call => "call",
            OptionType::Put => "put",
        })
    }
}

impl FromStr for OptionType {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "c" | "call" => Ok(OptionType::Call),
            "p" | "put" => Ok(OptionType::Put),
            other => Err(format!("unknown option type `{other}`")),
        }
    }
}

/// One market observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub trade_date: NaiveDate,
    pub underlying: Underlying,
    pub option_type: OptionType,
    pub strike: f64,
    pub expiry: NaiveDate,
    pub price: f64,
    pub volume: f64,
    /// SPX close for SPX quotes, VIX close for VIX quotes.
    pub underlying_close: f64,
}

impl OptionQuote {
    pub fn days_to_expiry(&self) -> i64 {
        (self.expiry - self.trade_date).num_days()
    }

    /// Time to maturity in years.
    pub fn tau(&self) -> f64 {
        self.days_to_expiry() as f64 / DAYS_PER_YEAR
    }
}

/// The canonical columns, in header order.
pub const COLUMNS: [&str; 8] = [
    "date",
    "underlying",
    "type",
    "strike",
    "expiry",
    "price",
    "volume",
    "underlying_close",
];

/// Maps canonical column names to the names used in a vendor file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Schema {
    pub renames: BTreeMap<String, String>,
    /// Date format accepted by `chrono`; ISO dates by default.
    pub date_format: Option<String>,
}

impl Schema {
    fn column(&self, canonical: &str) -> String {
        self.renames
            .get(canonical)
            .cloned()
            .unwrap_or_else(|| canonical.to_string())
    }

    fn date_format(&self) -> &str {
        self.date_format.as_deref().unwrap_or("%Y-%m-%d")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    Malformed,
    NonPositivePrice,
    NegativeVolume,
    NonPositiveStrike,
    NonPositiveUnderlying,
    ExpiryNotAfterTrade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line number in the file, header included.
    pub line: u64,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuoteSet {
    pub quotes: Vec<OptionQuote>,
    pub rejects: Vec<Reject>,
}

pub fn load_quotes(path: impl AsRef<Path>, schema: &Schema) -> Result<QuoteSet> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_quotes(file, schema)
}

/// Parses quotes from any reader. Rows that fail to parse or violate a quote
/// invariant go to `rejects`; missing columns are an error.
pub fn read_quotes<R: Read>(reader: R, schema: &Schema) -> Result<QuoteSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 8];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        let wanted = schema.column(name);
        *slot = headers
            .iter()
            .position(|h| h == wanted)
            .ok_or_else(|| Error::Data(format!("missing required column `{wanted}`")))?;
    }
    let fmt = schema.date_format();
    let mut set = QuoteSet::default();
    for (row, record) in rdr.records().enumerate() {
        let line = row as u64 + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                set.rejects.push(Reject {
                    line,
                    reason: RejectReason::Malformed,
                    detail: e.to_string(),
                });
                continue;
            }
        };
        match parse_row(&record, &idx, fmt) {
            Ok(q) => match check_quote(&q) {
                None => set.quotes.push(q),
                Some((reason, detail)) => set.rejects.push(Reject { line, reason, detail }),
            },
            Err(detail) => set.rejects.push(Reject {
                line,
                reason: RejectReason::Malformed,
                detail,
            }),
        }
    }
    Ok(set)
}

fn parse_row(
    record: &csv::StringRecord,
    idx: &[usize; 8],
    date_fmt: &str,
) -> std::result::Result<OptionQuote, String> {
    let field = |i: usize| -> std::result::Result<&str, String> {
        record
            .get(idx[i])
            .ok_or_else(|| format!("missing field `{}`", COLUMNS[i]))
    };
    let date = |i: usize| -> std::result::Result<NaiveDate, String> {
        let s = field(i)?;
        NaiveDate::parse_from_str(s, date_fmt).map_err(|e| format!("{}: `{s}` ({e})", COLUMNS[i]))
    };
    let num = |i: usize| -> std::result::Result<f64, String> {
        let s = field(i)?;
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("{}: `{s}` is not a number", COLUMNS[i]))
    };
    Ok(OptionQuote {
        trade_date: date(0)?,
        underlying: field(1)?.parse()?,
        option_type: field(2)?.parse()?,
        strike: num(3)?,
        expiry: date(4)?,
        price: num(5)?,
        volume: num(6)?,
        underlying_close: num(7)?,
    })
}

fn check_quote(q: &OptionQuote) -> Option<(RejectReason, String)> {
    if q.price <= 0.0 {
        return Some((RejectReason::NonPositivePrice, format!("price {}", q.price)));
    }
    if q.volume < 0.0 {
        return Some((RejectReason::NegativeVolume, format!("volume {}", q.volume)));
    }
    if q.strike <= 0.0 {
        return Some((RejectReason::NonPositiveStrike, format!("strike {}", q.strike)));
    }
    if q.underlying_close <= 0.0 {
        return Some((
            RejectReason::NonPositiveUnderlying,
            format!("underlying_close {}", q.underlying_close),
        ));
    }
    if q.expiry <= q.trade_date {
        return Some((
            RejectReason::ExpiryNotAfterTrade,
            format!("expiry {} not after trade date {}", q.expiry, q.trade_date),
        ));
    }
    None
}

pub fn write_quotes<W: Write>(out: W, quotes: &[OptionQuote]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for q in quotes {
        w.write_record([
            q.trade_date.to_string(),
            q.underlying.to_string(),
            q.option_type.to_string(),
            fmt_sig(q.strike),
            q.expiry.to_string(),
            fmt_sig(q.price),
            fmt_sig(q.volume),
            fmt_sig(q.underlying_close),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Liquidity and maturity filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterRules {
    pub min_volume: f64,
    pub min_price: f64,
    pub min_days_to_expiry: i64,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            min_volume: 50.0,
            min_price: 0.5,
            min_days_to_expiry: 4,
        }
    }
}

/// Quotes removed by each rule. A quote failing several rules counts once per rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub input: usize,
    pub kept: usize,
    pub low_volume: usize,
    pub low_price: usize,
    pub near_expiry: usize,
}

pub fn apply_filters(quotes: &[OptionQuote], rules: &FilterRules) -> (Vec<OptionQuote>, FilterStats) {
    let mut stats = FilterStats {
        input: quotes.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(quotes.len());
    for q in quotes {
        let volume = q.volume < rules.min_volume;
        let price = q.price < rules.min_price;
        let expiry = q.days_to_expiry() < rules.min_days_to_expiry;
        stats.low_volume += volume as usize;
        stats.low_price += price as usize;
        stats.near_expiry += expiry as usize;
        if !(volume || price || expiry) {
            kept.push(q.clone());
        }
    }
    stats.kept = kept.len();
    (kept, stats)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<OptionQuote>,
    pub test: Vec<OptionQuote>,
    pub warnings: Vec<String>,
}

/// Quotes traded strictly before `split_date` go to training, the rest to test.
pub fn split_train_test(quotes: &[OptionQuote], split_date: NaiveDate) -> Split {
    let (train, test): (Vec<_>, Vec<_>) = quotes
        .iter()
        .cloned()
        .partition(|q| q.trade_date < split_date);
    let mut warnings = Vec::new();
    if test.is_empty() {
        warnings.push(format!("no quotes on or after {split_date}; test set is empty"));
    }
    if train.is_empty() {
        warnings.push(format!("no quotes before {split_date}; training set is empty"));
    }
    Split {
        train,
        test,
        warnings,
    }
}

/// Upper edges of the maturity buckets (years).
pub const BUCKET_EDGES: [f64; 3] = [0.05, 0.1, 0.2];

/// Column titles of the error tables.
pub const BUCKET_LABELS: [&str; 5] = ["tau<0.05", "0.05<=tau<0.1", "0.1<=tau<0.2", "tau>=0.2", "total"];

pub fn bucket_of(tau: f64) -> usize {
    BUCKET_EDGES.iter().take_while(|&&e| tau >= e).count()
}

/// Per-option error: `|model - market| / (0.1 + market)`.
pub fn weighted_error(model: f64, market: f64) -> f64 {
    (model - market).abs() / (0.1 + market)
}

/// Count, mean and sample standard deviation of the errors in one cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl CellStats {
    fn from_errors(errors: &[f64]) -> Self {
        let n = errors.len();
        if n == 0 {
            return CellStats {
                count: 0,
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = errors.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        CellStats { count: n, mean, std }
    }
}

/// Error statistics per underlying and maturity bucket; index 4 is the total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub cells: BTreeMap<Underlying, [CellStats; 5]>,
    /// Raw per-option errors in input order, kept for recomputation.
    pub errors: Vec<f64>,
}

pub fn error_report(model_prices: &[f64], quotes: &[OptionQuote]) -> Result<ErrorReport> {
    if model_prices.len() != quotes.len() {
        return Err(Error::LengthMismatch {
            left: model_prices.len(),
            right: quotes.len(),
        });
    }
    let mut groups: BTreeMap<Underlying, [Vec<f64>; 5]> = BTreeMap::new();
    let mut errors = Vec::with_capacity(quotes.len());
    for (m, q) in model_prices.iter().zip(quotes) {
        let e = weighted_error(*m, q.price);
        errors.push(e);
        let g = groups.entry(q.underlying).or_default();
        g[bucket_of(q.tau())].push(e);
        g[4].push(e);
    }
    let cells = groups
        .into_iter()
        .map(|(u, g)| (u, std::array::from_fn(|i| CellStats::from_errors(&g[i]))))
        .collect();
    Ok(ErrorReport { cells, errors })
}

/// Writes the two-model error table. Each maturity bucket has three columns,
/// the benchmark, the multiscale model and their ratio `o/h` in percent; each
/// underlying has a mean row and a std row. The ratio is left blank on std rows.
pub fn write_comparison_table<W: Write>(
    out: &mut W,
    heston: &ErrorReport,
    ours: &ErrorReport,
) -> Result<()> {
    write!(out, "underlying,statistic")?;
    for label in BUCKET_LABELS {
        write!(out, ",{label} heston,{label} ours,{label} o/h")?;
    }
    writeln!(out)?;
    for (u, h) in &heston.cells {
        let Some(o) = ours.cells.get(u) else { continue };
        for stat in ["mean", "std"] {
            write!(out, "{u},{stat}")?;
            for i in 0..BUCKET_LABELS.len() {
                let (hv, ov) = if stat == "mean" {
                    (h[i].mean, o[i].mean)
                } else {
                    (h[i].std, o[i].std)
                };
                let ratio = if stat == "mean" && ov.is_finite() && hv.is_finite() && hv != 0.0 {
                    format!("{}%", fmt_sig(100.0 * ov / hv))
                } else {
                    String::new()
                };
                write!(out, ",{},{},{ratio}", fmt_cell(hv), fmt_cell(ov))?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Single-model table with the same columns.
pub fn write_report_table<W: Write>(out: &mut W, report: &ErrorReport) -> Result<()> {
    writeln!(out, "underlying,statistic,{}", BUCKET_LABELS.join(","))?;
    for (u, cells) in &report.cells {
        for (stat, vals) in [
            ("count", cells.map(|c| c.count as f64)),
            ("mean", cells.map(|c| c.mean)),
            ("std", cells.map(|c| c.std)),
        ] {
            write!(out, "{u},{stat}")?;
            for v in vals {
                write!(out, ",{}", fmt_cell(v))?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

fn fmt_cell(v: f64) -> String {
    if v.is_finite() {
        fmt_sig(v)
    } else {
        String::new()
    }
}

/// Formats with 10 significant digits, dropping trailing zeros.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.9e}").parse().unwrap_or(x);
    let s = rounded.to_string();
    // Display never uses exponents; fall back to scientific for extreme magnitudes.
    if s.len() > 24 {
        format!("{rounded:e}")
    } else {
        s
    }
}

/// Model used to generate synthetic quotes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticModel {
    Multiscale(ModelParams),
    Heston { params: HestonParams, r: f64 },
}

/// Layout of a synthetic quote set.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub start: NaiveDate,
    pub dates: usize,
    /// Calendar days between consecutive trade dates.
    pub date_step: i64,
    pub spx_level: f64,
    /// SPX strikes as fractions of the spot.
    pub spx_moneyness: Vec<f64>,
    pub spx_days: Vec<i64>,
    /// VIX strikes as fractions of the VIX level, rounded to half points.
    pub vix_moneyness: Vec<f64>,
    pub vix_days: Vec<i64>,
    /// Standard deviation of the multiplicative price noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            start: NaiveDate::from_ymd_opt(2017, 1, 4).expect("valid date"),
            dates: 6,
            date_step: 14,
            spx_level: 2000.0,
            spx_moneyness: vec![0.9, 0.95, 1.0, 1.05],
            spx_days: vec![14, 30, 60, 120],
            vix_moneyness: vec![0.85, 1.0, 1.15, 1.3, 1.5],
            vix_days: vec![14, 30, 60, 120],
            noise: 0.0,
            seed: 7,
        }
    }
}

/// A synthetic data set together with the hidden states that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub quotes: Vec<OptionQuote>,
    pub states: Vec<(NaiveDate, HiddenState)>,
}

/// Draws one state per date and prices a fixed grid of SPX and VIX calls.
///
/// Quotes whose model price is not finite and positive are skipped. Volumes are
/// set well above the default filter.
pub fn synthesize(model: &SyntheticModel, spec: &SyntheticSpec, quad: &QuadratureConfig) -> Result<SyntheticData> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut quotes = Vec::new();
    let mut states = Vec::new();
    let noise = rand_distr::Normal::new(0.0, spec.noise.max(0.0))
        .map_err(|e| Error::InvalidParameter {
            name: "noise",
            reason: e.to_string(),
        })?;
    for i in 0..spec.dates {
        let date = spec.start + Duration::days(spec.date_step * i as i64);
        let spx = spec.spx_level * (1.0 + 0.02 * (rng.gen::<f64>() - 0.5));
        // For Heston the recorded state is (v, v); VIX pricing runs on z = v / 2.
        let (state, vix_state, vix, pricing) = match model {
            SyntheticModel::Multiscale(p) => {
                let z = p.theta * rng.gen_range(0.75..1.3);
                let y = z * rng.gen_range(0.5..1.6);
                let s = HiddenState::new(y, z);
                (s, s, vix_from_state(s, p)?, *p)
            }
            SyntheticModel::Heston { params, r } => {
                let v = params.theta * rng.gen_range(0.6..1.5);
                let vix = vix_from_heston_variance(v, params.kappa, params.theta)?;
                let half = HiddenState::new(0.5 * v, 0.5 * v);
                (HiddenState::new(v, v), half, vix, heston_as_leading_order(params, *r))
            }
        };
        states.push((date, state));
        let mut push = |underlying, strike: f64, days: i64, close: f64, price: f64, rng: &mut ChaCha8Rng| {
            if !(price.is_finite() && price > 0.0) {
                return;
            }
            let noisy = if spec.noise > 0.0 {
                price * (1.0 + rng.sample(noise))
            } else {
                price
            };
            quotes.push(OptionQuote {
                trade_date: date,
                underlying,
                option_type: OptionType::Call,
                strike,
                expiry: date + Duration::days(days),
                price: noisy,
                volume: 1000.0,
                underlying_close: close,
            });
        };
        for &days in &spec.vix_days {
            let tau = days as f64 / DAYS_PER_YEAR;
            for &m in &spec.vix_moneyness {
                let strike = (2.0 * m * vix).round() / 2.0;
                let price = price_vix(&VixOptionSpec::call(strike, tau), vix_state, &pricing, quad)?.total;
                push(Underlying::Vix, strike, days, vix, price, &mut rng);
            }
        }
        for &days in &spec.spx_days {
            let tau = days as f64 / DAYS_PER_YEAR;
            for &m in &spec.spx_moneyness {
                let strike = (m * spx / 5.0).round() * 5.0;
                let price = match model {
                    SyntheticModel::Multiscale(p) => {
                        price_spx(&SpxOptionSpec::call(spx, strike, tau), state, p, quad)?.total
                    }
                    SyntheticModel::Heston { params, r } => crate::heston::heston_call(
                        params, spx, strike, tau, *r, state.z, quad,
                    )?,
                };
                push(Underlying::Spx, strike, days, spx, price, &mut rng);
            }
        }
    }
    Ok(SyntheticData { quotes, states })
}

/// Flat `key = value` configuration with `#` comments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("config line {}: expected key = value", n + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(ConfigFile { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Data(format!("config key `{key}`: cannot parse `{v}`"))),
        }
    }

    /// Rejects keys outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        for k in self.entries.keys() {
            if !known.contains(&k.as_str()) {
                return Err(Error::Data(format!("unknown config key `{k}`")));
            }
        }
        Ok(())
    }
}
