//! Rolling-window subspace detector.
//!
//! For every day `t` after the warm-up, components are fitted on the
//! `window` days before `t`, day `t` is projected onto the anomalous
//! subspace, and the resulting residual is expressed as a fraction of the
//! country's typical usage. Each country then keeps a robust band
//! (rolling median ± `mad_k` MADs) over its recent residuals; residuals
//! outside the band are flagged.

use std::collections::{BTreeMap, VecDeque};
use std::ops::Range;

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{CountryCode, ObservationMatrix};
use crate::parallel::{map_range, Execution};
use crate::pca::{fit_components, residual_vector, select_components, standardize, ComponentPolicy};
use crate::stats::{median, median_and_mad, NORMAL_CONSISTENCY};

pub const DEFAULT_WINDOW: usize = 180;
pub const DEFAULT_MAD_K: f64 = 2.5;
pub const DEFAULT_SCALE_FLOOR: f64 = 1.0;
pub const DEFAULT_MIN_HISTORY: usize = 30;
/// Lower bound on the MAD used for flagging.
pub const MIN_EFFECTIVE_MAD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectorParams {
    /// Trailing days used to fit each model.
    pub window: usize,
    pub components: ComponentPolicy,
    /// Band half-width in (scaled) MADs.
    pub mad_k: f64,
    /// Multiplier applied to the raw MAD before forming the band.
    pub mad_consistency: f64,
    /// Floor on the usage level that residuals are divided by.
    pub scale_floor: f64,
    /// Residuals a country needs before it can be flagged.
    pub min_history: usize,
    /// Residuals kept for the rolling median; `None` means `window`.
    pub threshold_history: Option<usize>,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            window: DEFAULT_WINDOW,
            components: ComponentPolicy::default(),
            mad_k: DEFAULT_MAD_K,
            mad_consistency: NORMAL_CONSISTENCY,
            scale_floor: DEFAULT_SCALE_FLOOR,
            min_history: DEFAULT_MIN_HISTORY,
            threshold_history: None,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::parameter("window must be positive"));
        }
        if let ComponentPolicy::Fixed(0) = self.components {
            return Err(Error::parameter("component count must be positive"));
        }
        if !(self.mad_k > 0.0 && self.mad_k.is_finite()) {
            return Err(Error::parameter(format!("mad_k must be positive, got {}", self.mad_k)));
        }
        if !(self.mad_consistency > 0.0 && self.mad_consistency.is_finite()) {
            return Err(Error::parameter(format!(
                "mad_consistency must be positive, got {}",
                self.mad_consistency
            )));
        }
        if !(self.scale_floor > 0.0 && self.scale_floor.is_finite()) {
            return Err(Error::parameter(format!(
                "scale_floor must be positive, got {}",
                self.scale_floor
            )));
        }
        if self.min_history == 0 {
            return Err(Error::parameter("min_history must be at least 1"));
        }
        if self.threshold_history == Some(0) {
            return Err(Error::parameter("threshold_history must be positive"));
        }
        Ok(())
    }

    pub fn history_len(&self) -> usize {
        self.threshold_history.unwrap_or(self.window)
    }
}

/// One (date, country) cell of detector output. `predicted` and
/// `residual` are absent when the cell was not evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualRecord {
    pub date: NaiveDate,
    pub country: CountryCode,
    pub usage: f64,
    pub predicted: Option<f64>,
    /// Positive when usage is below the model.
    pub residual: Option<f64>,
}

impl ResidualRecord {
    pub fn evaluated(&self) -> bool {
        self.residual.is_some()
    }
}

/// Residual records ordered by date, then country.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResidualSeries {
    pub records: Vec<ResidualRecord>,
}

impl ResidualSeries {
    pub fn new(records: Vec<ResidualRecord>) -> Self {
        ResidualSeries { records }
    }

    pub fn iter(&self) -> impl Iterator<Item = &ResidualRecord> {
        self.records.iter()
    }

    /// Evaluated residuals of one country in date order.
    pub fn country_residuals(&self, country: CountryCode) -> Vec<(NaiveDate, f64)> {
        self.records
            .iter()
            .filter(|r| r.country == country)
            .filter_map(|r| r.residual.map(|v| (r.date, v)))
            .collect()
    }

    /// Records with `from <= date <= to`.
    pub fn restrict(&self, from: Option<NaiveDate>, to: Option<NaiveDate>) -> ResidualSeries {
        ResidualSeries {
            records: self
                .records
                .iter()
                .filter(|r| from.is_none_or(|f| r.date >= f) && to.is_none_or(|t| r.date <= t))
                .copied()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyClass {
    /// Usage below the model.
    Drop,
    /// Usage above the model.
    Increase,
}

impl AnomalyClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnomalyClass::Drop => "drop",
            AnomalyClass::Increase => "increase",
        }
    }
}

impl std::str::FromStr for AnomalyClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "drop" => Ok(AnomalyClass::Drop),
            "increase" => Ok(AnomalyClass::Increase),
            other => Err(format!("unknown anomaly class {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnomalyFlag {
    pub date: NaiveDate,
    pub country: CountryCode,
    pub class: AnomalyClass,
    pub residual: f64,
    pub threshold_low: f64,
    pub threshold_high: f64,
}

/// Rolling residual history of one country.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CountryThreshold {
    pub rolling_median: f64,
    /// Raw median absolute deviation about `rolling_median`.
    pub mad: f64,
    pub history: VecDeque<f64>,
}

impl CountryThreshold {
    pub fn push(&mut self, residual: f64, capacity: usize) {
        self.history.push_back(residual);
        while self.history.len() > capacity {
            self.history.pop_front();
        }
        let (med, mad) = median_and_mad(self.history.make_contiguous()).unwrap_or((0.0, 0.0));
        self.rolling_median = med;
        self.mad = mad;
    }

    /// `(low, high)` bounds of the acceptance band.
    pub fn band(&self, params: &DetectorParams) -> (f64, f64) {
        let half = params.mad_k * (params.mad_consistency * self.mad).max(MIN_EFFECTIVE_MAD);
        (self.rolling_median - half, self.rolling_median + half)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdState {
    pub capacity: usize,
    pub countries: BTreeMap<CountryCode, CountryThreshold>,
}

impl ThresholdState {
    pub fn new(capacity: usize) -> Self {
        ThresholdState {
            capacity,
            countries: BTreeMap::new(),
        }
    }

    pub fn get(&self, country: CountryCode) -> Option<&CountryThreshold> {
        self.countries.get(&country)
    }
}

/// Appends a residual to a country's history and recomputes its median and
/// MAD.
pub fn update_threshold(state: &mut ThresholdState, country: CountryCode, residual: f64) {
    let capacity = state.capacity;
    state.countries.entry(country).or_default().push(residual, capacity);
}

/// Flags `residual` when it leaves the country's band. Returns `None` while
/// the history is shorter than `min_history`.
pub fn flag(
    date: NaiveDate,
    country: CountryCode,
    residual: f64,
    threshold: &CountryThreshold,
    params: &DetectorParams,
) -> Option<AnomalyFlag> {
    if threshold.history.len() < params.min_history {
        return None;
    }
    let (low, high) = threshold.band(params);
    let class = if residual > high {
        AnomalyClass::Drop
    } else if residual < low {
        AnomalyClass::Increase
    } else {
        return None;
    };
    Some(AnomalyFlag {
        date,
        country,
        class,
        residual,
        threshold_low: low,
        threshold_high: high,
    })
}

/// Converts a residual in standardized units (positive = observation below
/// the model) to a fraction of the country's typical usage.
pub fn proportional_residual(raw: f64, scale: f64, rolling_usage_level: f64, scale_floor: f64) -> f64 {
    debug_assert!(scale > 0.0);
    raw * scale / rolling_usage_level.max(scale_floor)
}

/// Band state of one country after processing one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdSnapshot {
    pub date: NaiveDate,
    pub country: CountryCode,
    pub rolling_median: f64,
    pub mad: f64,
    pub history_len: usize,
    pub threshold_low: f64,
    pub threshold_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct DetectionStats {
    pub evaluated_days: usize,
    pub degenerate_windows: usize,
    pub clamped_windows: usize,
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub series: ResidualSeries,
    pub flags: Vec<AnomalyFlag>,
    pub trace: Vec<ThresholdSnapshot>,
    pub state: ThresholdState,
    pub stats: DetectionStats,
}

pub fn run_detector(matrix: &ObservationMatrix, params: &DetectorParams) -> Result<Detection> {
    run_detector_with(matrix, params, Execution::available())
}

/// Per-country `(predicted, residual)` for one day, `None` where the
/// country could not be evaluated.
#[derive(Debug, Clone)]
pub(crate) struct DayEvaluation {
    pub(crate) cells: Vec<Option<(f64, f64)>>,
    pub(crate) degenerate: bool,
    pub(crate) clamped: bool,
}

pub(crate) fn evaluate_day(matrix: &ObservationMatrix, t: usize, params: &DetectorParams) -> Result<DayEvaluation> {
    let n = matrix.ncols();
    let values = matrix.values();
    let window = values.rows(t - params.window, params.window);
    let std = match standardize(window) {
        Ok(std) => std,
        Err(Error::DegenerateWindow { .. }) => {
            return Ok(DayEvaluation {
                cells: vec![None; n],
                degenerate: true,
                clamped: false,
            })
        }
        Err(e) => return Err(e),
    };
    let basis = select_components(fit_components(&std)?, params.components)?;
    let today: Vec<f64> = values.row(t).iter().copied().collect();
    let residual = residual_vector(&basis, &std.standardize_row(&today)?)?;

    let mut cells = vec![None; n];
    for (k, &j) in std.retained.iter().enumerate() {
        let scale = std.scales[j];
        let column: Vec<f64> = window.column(j).iter().copied().collect();
        let level = median(&column).unwrap_or(0.0);
        // Projection minus observation: positive when usage is below the model.
        let raw = -residual[k];
        let predicted = today[j] + raw * scale;
        cells[j] = Some((predicted, proportional_residual(raw, scale, level, params.scale_floor)));
    }
    Ok(DayEvaluation {
        cells,
        degenerate: false,
        clamped: basis.was_clamped(),
    })
}

/// Checks that the matrix supports at least one evaluated day.
pub(crate) fn check_feasible(matrix: &ObservationMatrix, params: &DetectorParams) -> Result<()> {
    params.validate()?;
    let (m, n) = (matrix.nrows(), matrix.ncols());
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 countries, got {n}")));
    }
    if params.window <= n {
        return Err(Error::Feasibility {
            window: params.window,
            countries: n,
        });
    }
    if m < params.window + 1 {
        return Err(Error::InsufficientData(format!(
            "{m} days of data do not cover a {}-day window plus one evaluated day",
            params.window
        )));
    }
    Ok(())
}

/// Evaluates the days in `days`, each of which must be at least `window`.
pub(crate) fn evaluate_days(
    matrix: &ObservationMatrix,
    params: &DetectorParams,
    days: Range<usize>,
    exec: Execution,
) -> Result<Vec<DayEvaluation>> {
    map_range(exec, days, |t| evaluate_day(matrix, t, params))
        .into_iter()
        .collect()
}

/// Output of folding one country's residuals through its threshold.
pub(crate) struct CountryFold {
    pub(crate) threshold: CountryThreshold,
    pub(crate) flags: Vec<AnomalyFlag>,
    pub(crate) trace: Vec<ThresholdSnapshot>,
}

/// Runs column `j` through the threshold update for `days[i]` at row
/// `window + i`, stopping after row `end`.
pub(crate) fn fold_country(
    matrix: &ObservationMatrix,
    params: &DetectorParams,
    days: &[DayEvaluation],
    j: usize,
    end: usize,
) -> CountryFold {
    let dates = matrix.dates();
    let country = matrix.countries()[j];
    let capacity = params.history_len();
    let mut threshold = CountryThreshold::default();
    let mut flags = Vec::new();
    let mut trace = Vec::new();
    for (i, day) in days.iter().enumerate().take(end - params.window) {
        let Some((_, residual)) = day.cells[j] else { continue };
        let t = params.window + i;
        threshold.push(residual, capacity);
        let (low, high) = threshold.band(params);
        trace.push(ThresholdSnapshot {
            date: dates[t],
            country,
            rolling_median: threshold.rolling_median,
            mad: threshold.mad,
            history_len: threshold.history.len(),
            threshold_low: low,
            threshold_high: high,
        });
        flags.extend(flag(dates[t], country, residual, &threshold, params));
    }
    CountryFold { threshold, flags, trace }
}

pub fn run_detector_with(matrix: &ObservationMatrix, params: &DetectorParams, exec: Execution) -> Result<Detection> {
    check_feasible(matrix, params)?;
    let (m, n) = (matrix.nrows(), matrix.ncols());
    let days = evaluate_days(matrix, params, params.window..m, exec)?;
    let cell = |t: usize, j: usize| -> Option<(f64, f64)> {
        t.checked_sub(params.window)
            .and_then(|i| days[i].cells[j])
    };

    let per_country = map_range(exec, 0..n, |j| fold_country(matrix, params, &days, j, m));

    let countries = matrix.countries();
    let mut state = ThresholdState::new(params.history_len());
    let mut flags = Vec::new();
    let mut trace = Vec::new();
    for (j, fold) in per_country.into_iter().enumerate() {
        state.countries.insert(countries[j], fold.threshold);
        flags.extend(fold.flags);
        trace.extend(fold.trace);
    }
    flags.sort_by_key(|f| (f.date, f.country));
    trace.sort_by_key(|s| (s.date, s.country));

    let dates = matrix.dates();
    let values = matrix.values();
    let mut records = Vec::with_capacity(m * n);
    for t in 0..m {
        for j in 0..n {
            let evaluated = cell(t, j);
            records.push(ResidualRecord {
                date: dates[t],
                country: countries[j],
                usage: values[(t, j)],
                predicted: evaluated.map(|c| c.0),
                residual: evaluated.map(|c| c.1),
            });
        }
    }

    let stats = DetectionStats {
        evaluated_days: m - params.window,
        degenerate_windows: days.iter().filter(|d| d.degenerate).count(),
        clamped_windows: days.iter().filter(|d| d.clamped).count(),
    };
    Ok(Detection {
        series: ResidualSeries::new(records),
        flags,
        trace,
        state,
        stats,
    })
}
