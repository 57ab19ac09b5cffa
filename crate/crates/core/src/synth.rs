//! Synthetic anomaly injection and detection-rate experiments.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use chrono::{Days, NaiveDate};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::detector::{check_feasible, evaluate_days, fold_country, AnomalyFlag, DetectorParams};
use crate::error::{Error, Result};
use crate::ingest::{assemble_matrix, CountryCode, ObservationMatrix, UsageTable};
use crate::parallel::{map_range, Execution};

/// Ramp lengths drawn by default in experiments.
pub const DEFAULT_RAMP_DAYS: RangeInclusive<usize> = 7..=49;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InjectionSpec {
    pub country: CountryCode,
    /// Last unaltered day; the ramp begins the day after.
    pub start: NaiveDate,
    pub ramp_days: usize,
    /// Fractional change reached at the end of the ramp, in `[-1, 1]`.
    pub magnitude: f64,
    pub hold_days: usize,
    pub seed: u64,
}

impl InjectionSpec {
    fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.magnitude) {
            return Err(Error::parameter(format!(
                "magnitude must lie in [-1, 1], got {}",
                self.magnitude
            )));
        }
        if self.ramp_days == 0 {
            return Err(Error::parameter("ramp_days must be positive"));
        }
        Ok(())
    }

    pub fn active_days(&self) -> usize {
        self.ramp_days + self.hold_days
    }

    /// Multiplier on day `start + offset`; 1 outside the active period.
    pub fn multiplier(&self, offset: i64) -> f64 {
        if offset < 1 || offset as usize > self.active_days() {
            return 1.0;
        }
        let progress = (offset as usize).min(self.ramp_days) as f64 / self.ramp_days as f64;
        1.0 + self.magnitude * progress
    }

    pub fn active_dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (1..=self.active_days() as u64).map(|k| self.start + Days::new(k))
    }

    pub fn last_active(&self) -> NaiveDate {
        self.start + Days::new(self.active_days() as u64)
    }
}

/// Scales one country's usage by a linear ramp to `1 + magnitude`, holds it
/// for `hold_days`, then returns to the original values.
pub fn inject(table: &UsageTable, spec: &InjectionSpec) -> Result<UsageTable> {
    spec.validate()?;
    let series = table
        .country_series(spec.country)
        .ok_or_else(|| Error::parameter(format!("country {} not in table", spec.country)))?;
    let (first, last) = table.date_range().expect("non-empty table has a range");
    if spec.start < first || spec.last_active() > last {
        return Err(Error::parameter(format!(
            "anomaly window {}..={} exceeds data range {first}..={last}",
            spec.start,
            spec.last_active()
        )));
    }
    let updates: Vec<(NaiveDate, f64)> = spec
        .active_dates()
        .filter_map(|d| {
            let users = *series.get(&d)?;
            let factor = spec.multiplier((d - spec.start).num_days());
            Some((d, (users * factor).max(0.0)))
        })
        .collect();
    let mut out = table.clone();
    for (d, users) in updates {
        out.set(d, spec.country, users);
    }
    Ok(out)
}

fn inject_column(matrix: &mut ObservationMatrix, column: usize, spec: &InjectionSpec) {
    let first = matrix.dates()[0];
    let start_offset = (spec.start - first).num_days();
    let values = matrix.values_mut();
    for i in 0..values.nrows() {
        let factor = spec.multiplier(i as i64 - start_offset);
        if factor != 1.0 {
            values[(i, column)] = (values[(i, column)] * factor).max(0.0);
        }
    }
}

/// True when strictly more than half of the active days carry a flag for
/// the injected country.
pub fn judge_detection(flags: &[AnomalyFlag], spec: &InjectionSpec) -> bool {
    flagged_active_days(flags, spec) * 2 > spec.active_days()
}

fn flagged_active_days(flags: &[AnomalyFlag], spec: &InjectionSpec) -> usize {
    let last = spec.last_active();
    flags
        .iter()
        .filter(|f| f.country == spec.country && f.date > spec.start && f.date <= last)
        .map(|f| f.date)
        .collect::<BTreeSet<_>>()
        .len()
}

/// Correlated synthetic usage: one global trend and `factors - 1` group
/// trends, each an AR(1) process, plus per-country i.i.d. noise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineSpec {
    pub countries: usize,
    pub days: usize,
    pub factors: usize,
    /// Noise standard deviation as a fraction of the country's level.
    pub noise: f64,
    pub start: NaiveDate,
    pub seed: u64,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        BaselineSpec {
            countries: 50,
            days: 500,
            factors: 13,
            noise: 0.03,
            start: NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid date"),
            seed: 1,
        }
    }
}

const GLOBAL_PERSISTENCE: f64 = 0.9;
const GROUP_PERSISTENCE: f64 = 0.5;

/// Two-letter code for the `index`-th synthetic country (`aa`, `ab`, ...).
pub fn synthetic_country(index: usize) -> CountryCode {
    let letters = [b'a' + (index / 26 % 26) as u8, b'a' + (index % 26) as u8];
    std::str::from_utf8(&letters).unwrap().parse().unwrap()
}

pub fn synthetic_baseline(spec: &BaselineSpec) -> Result<UsageTable> {
    Ok(synthetic_matrix(spec)?.to_table())
}

pub fn synthetic_matrix(spec: &BaselineSpec) -> Result<ObservationMatrix> {
    if spec.countries < 2 || spec.countries > 26 * 26 {
        return Err(Error::parameter(format!("countries must be in 2..=676, got {}", spec.countries)));
    }
    if spec.factors == 0 || spec.days == 0 {
        return Err(Error::parameter("factors and days must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Unit-variance AR(1) trends; the global one is smoother than the
    // group ones.
    let trends: Vec<Vec<f64>> = (0..spec.factors)
        .map(|k| {
            let phi: f64 = if k == 0 { GLOBAL_PERSISTENCE } else { GROUP_PERSISTENCE };
            let innovation = (1.0 - phi * phi).sqrt();
            let mut level: f64 = rng.sample(StandardNormal);
            (0..spec.days)
                .map(|_| {
                    let eps: f64 = rng.sample(StandardNormal);
                    level = phi * level + innovation * eps;
                    level
                })
                .collect()
        })
        .collect();
    let trend = |k: usize, t: usize| trends[k][t];

    let groups = spec.factors.saturating_sub(1).max(1);
    let mut values = DMatrix::zeros(spec.days, spec.countries);
    for c in 0..spec.countries {
        let level = rng.random_range(600f64.ln()..50_000f64.ln()).exp();
        let global = rng.random_range(0.03..0.08);
        let local = rng.random_range(0.08..0.20);
        let group = 1 + c % groups;
        for t in 0..spec.days {
            let eps: f64 = rng.sample(StandardNormal);
            let mut shape = 1.0 + global * trend(0, t) + spec.noise * eps;
            if spec.factors > 1 {
                shape += local * trend(group, t);
            }
            values[(t, c)] = level * shape.max(0.0);
        }
    }
    let dates = spec.start.iter_days().take(spec.days).collect();
    let countries = (0..spec.countries).map(synthetic_country).collect();
    ObservationMatrix::new(values, dates, countries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HoldPolicy {
    /// Plateau as long as the ramp.
    SameAsRamp,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub country: CountryCode,
    /// Inclusive range that every active period must fall in.
    pub period: (NaiveDate, NaiveDate),
    /// Signed magnitudes; each one forms a bucket.
    pub magnitudes: Vec<f64>,
    pub ramp_days: RangeInclusive<usize>,
    pub hold: HoldPolicy,
    /// Runs per magnitude bucket.
    pub runs: usize,
    pub seed: u64,
    pub max_gap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateBucket {
    /// Absolute magnitude.
    pub magnitude: f64,
    pub sign: Sign,
    pub runs: usize,
    pub detected: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExperimentRun {
    pub spec: InjectionSpec,
    pub flagged_days: usize,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRateReport {
    pub buckets: Vec<RateBucket>,
    pub total_runs: usize,
    pub runs: Vec<ExperimentRun>,
}

impl DetectionRateReport {
    /// Bucket for a signed magnitude.
    pub fn bucket(&self, magnitude: f64) -> Option<&RateBucket> {
        let sign = if magnitude < 0.0 { Sign::Negative } else { Sign::Positive };
        self.buckets
            .iter()
            .find(|b| b.sign == sign && (b.magnitude - magnitude.abs()).abs() < 1e-12)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn draw_spec(config: &ExperimentConfig, magnitude: f64, run_seed: u64) -> Result<InjectionSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let ramp_days = rng.random_range(config.ramp_days.clone());
    let hold_days = match config.hold {
        HoldPolicy::SameAsRamp => ramp_days,
        HoldPolicy::Fixed(h) => h,
    };
    let (lo, hi) = config.period;
    // Active days run from start + 1 to start + ramp + hold.
    let first_start = lo - Days::new(1);
    let last_start = hi
        .checked_sub_days(Days::new((ramp_days + hold_days) as u64))
        .filter(|d| *d >= first_start)
        .ok_or_else(|| {
            Error::parameter(format!(
                "period {lo}..={hi} is shorter than a {}-day anomaly",
                ramp_days + hold_days
            ))
        })?;
    let span = (last_start - first_start).num_days() as u64;
    let start = first_start + Days::new(rng.random_range(0..=span));
    Ok(InjectionSpec {
        country: config.country,
        start,
        ramp_days,
        magnitude,
        hold_days,
        seed: run_seed,
    })
}

/// Injects anomalies drawn from `config` into the baseline, reruns the
/// detector, and aggregates detection rates per magnitude.
pub fn run_experiment(table: &UsageTable, params: &DetectorParams, config: &ExperimentConfig) -> Result<DetectionRateReport> {
    run_experiment_with(table, params, config, Execution::available())
}

pub fn run_experiment_with(
    table: &UsageTable,
    params: &DetectorParams,
    config: &ExperimentConfig,
    exec: Execution,
) -> Result<DetectionRateReport> {
    params.validate()?;
    if config.runs == 0 || config.magnitudes.is_empty() {
        return Err(Error::parameter("experiment needs at least one run and one magnitude"));
    }
    if let Some(m) = config.magnitudes.iter().find(|m| !(-1.0..=1.0).contains(*m)) {
        return Err(Error::parameter(format!("magnitude must lie in [-1, 1], got {m}")));
    }
    if config.ramp_days.is_empty() || *config.ramp_days.start() == 0 {
        return Err(Error::parameter("ramp range must be non-empty and positive"));
    }
    let matrix = assemble_matrix(table, config.max_gap)?.matrix;
    let column = matrix
        .country_index(config.country)
        .ok_or_else(|| Error::parameter(format!("country {} not in the assembled matrix", config.country)))?;
    let earliest = params.window + params.min_history;
    match matrix.date_index(config.period.0) {
        Some(i) if i >= earliest && matrix.date_index(config.period.1).is_some() => {}
        _ => {
            return Err(Error::parameter(format!(
                "injection period must lie inside the data and start at least {earliest} days after {}",
                matrix.dates()[0]
            )))
        }
    }

    check_feasible(&matrix, params)?;
    let m = matrix.nrows();
    let baseline = evaluate_days(&matrix, params, params.window..m, exec)?;
    let baseline_flags = fold_country(&matrix, params, &baseline, column, m).flags;

    let total = config.magnitudes.len() * config.runs;
    let specs: Vec<InjectionSpec> = (0..total)
        .map(|i| {
            let magnitude = config.magnitudes[i / config.runs];
            draw_spec(config, magnitude, splitmix64(config.seed ^ splitmix64(i as u64)))
        })
        .collect::<Result<_>>()?;
    if let Some(bad) = specs.iter().find(|s| judge_detection(&baseline_flags, s)) {
        return Err(Error::InvalidBaseline(format!(
            "{} is already detected as anomalous between {} and {} without injection",
            config.country,
            bad.start,
            bad.last_active()
        )));
    }

    // Only days whose window or current row touch the anomaly change, and
    // nothing after the last active day is judged.
    let runs: Vec<ExperimentRun> = map_range(exec, 0..total, |i| {
        let spec = specs[i];
        let first_active = matrix.date_index(spec.start).unwrap() + 1;
        let end = matrix.date_index(spec.last_active()).unwrap() + 1;
        let mut injected = matrix.clone();
        inject_column(&mut injected, column, &spec);
        let mut days = baseline[..end - params.window].to_vec();
        let redo = evaluate_days(&injected, params, first_active..end, Execution::Sequential)?;
        days.splice(first_active - params.window.., redo);
        let flags = fold_country(&injected, params, &days, column, end).flags;
        let flagged_days = flagged_active_days(&flags, &spec);
        Ok(ExperimentRun {
            spec,
            flagged_days,
            detected: flagged_days * 2 > spec.active_days(),
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut tally: BTreeMap<(Sign, u64), (f64, usize, usize)> = BTreeMap::new();
    for run in &runs {
        let m = run.spec.magnitude;
        let sign = if m < 0.0 { Sign::Negative } else { Sign::Positive };
        let entry = tally.entry((sign, m.abs().to_bits())).or_insert((m.abs(), 0, 0));
        entry.1 += 1;
        entry.2 += usize::from(run.detected);
    }
    let buckets = tally
        .into_iter()
        .map(|((sign, _), (magnitude, runs, detected))| RateBucket {
            magnitude,
            sign,
            runs,
            detected,
            rate: detected as f64 / runs as f64,
        })
        .collect();
    Ok(DetectionRateReport {
        buckets,
        total_runs: total,
        runs,
    })
}
