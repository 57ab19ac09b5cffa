//! Subcommand implementations. Each one resolves its whole configuration
//! before reading data, and stages every output before committing any.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use chrono::{Days, NaiveDate};
use serde::Serialize;
use usage_anomaly::detector::{
    run_detector, AnomalyClass, DetectorParams, ResidualSeries, DEFAULT_MAD_K, DEFAULT_MIN_HISTORY,
    DEFAULT_SCALE_FLOOR, DEFAULT_WINDOW,
};
use usage_anomaly::eval::{load_events, load_events_path, score_events};
use usage_anomaly::ingest::{
    assemble_matrix, filter_countries, parse_userstats, write_userstats, CountryCode, DroppedCountry,
    ObservationMatrix, UsageTable, DEFAULT_MAX_GAP, DEFAULT_MIN_USERS,
};
use usage_anomaly::pca::ComponentPolicy;
use usage_anomaly::ranking::rank_countries;
use usage_anomaly::stats::NORMAL_CONSISTENCY;
use usage_anomaly::synth::{
    run_experiment, synthetic_baseline, BaselineSpec, ExperimentConfig, HoldPolicy, DEFAULT_RAMP_DAYS,
};

use crate::args::{DataArgs, DetectArgs, DetectorArgs, EvaluateArgs, FetchArgs, InjectArgs, OutArgs, RankArgs};
use crate::config::Resolver;
use crate::output::{render_table, sha256_hex, write_atomic, Format, Meta, OutputSet};
use crate::tables::{
    rate_rows, read_flags, read_residuals, score_rows, FlagRow, RankRow, ResidualRow, FLAG_HEADERS, RANK_HEADERS,
    RATE_HEADERS, RESIDUAL_HEADERS, RUN_HEADERS, SCORE_HEADERS,
};

/// Environment variable naming the directory searched for default inputs.
pub const DATA_DIR_ENV: &str = "USAGE_ANOMALY_DATA_DIR";
pub const DEFAULT_INPUT_NAME: &str = "userstats.csv";
pub const DEFAULT_FETCH_URL: &str =
    "https://metrics.torproject.org/userstats-relay-country.csv?start=2011-09-01&end=2016-08-31&events=off";
const BUNDLED_EVENTS: &str = include_str!("../data/reported-events.csv");
const BUNDLED_NAME: &str = "bundled:reported-events.csv";

fn default_data_path(name: &str) -> String {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if !dir.is_empty() => Path::new(&dir).join(name).display().to_string(),
        _ => name.to_string(),
    }
}

/// Comma-separated signed magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Magnitudes(pub Vec<f64>);

impl Default for Magnitudes {
    fn default() -> Self {
        let steps = (1..=10).map(|i| f64::from(i) / 10.0);
        Magnitudes(steps.clone().rev().map(|m| -m).chain(steps).collect())
    }
}

impl FromStr for Magnitudes {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad magnitude {p:?}: {e}")))
            .collect::<Result<_, _>>()
            .map(Magnitudes)
    }
}

impl fmt::Display for Magnitudes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(f64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// `ramp` (plateau as long as the ramp) or a fixed day count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hold(pub HoldPolicy);

impl FromStr for Hold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("ramp") {
            return Ok(Hold(HoldPolicy::SameAsRamp));
        }
        s.parse()
            .map(|n| Hold(HoldPolicy::Fixed(n)))
            .map_err(|_| format!("hold must be \"ramp\" or a day count, got {s:?}"))
    }
}

impl fmt::Display for Hold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            HoldPolicy::SameAsRamp => f.write_str("ramp"),
            HoldPolicy::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl DetectorArgs {
    pub fn resolve(&self, r: &mut Resolver) -> Result<DetectorParams> {
        let params = DetectorParams {
            window: r.value("window", self.window, DEFAULT_WINDOW)?,
            components: r.value("components", self.components, ComponentPolicy::default())?,
            mad_k: r.value("mad-k", self.mad_k, DEFAULT_MAD_K)?,
            mad_consistency: r.value("mad-consistency", self.mad_consistency, NORMAL_CONSISTENCY)?,
            scale_floor: r.value("scale-floor", self.scale_floor, DEFAULT_SCALE_FLOOR)?,
            min_history: r.value("min-history", self.min_history, DEFAULT_MIN_HISTORY)?,
            threshold_history: r.optional("threshold-history", self.threshold_history)?,
        };
        params.validate()?;
        Ok(params)
    }
}

struct DataSource {
    path: PathBuf,
    min_users: f64,
    max_gap: usize,
}

impl DataArgs {
    fn resolve(&self, r: &mut Resolver) -> Result<DataSource> {
        let source = DataSource {
            path: PathBuf::from(r.value("input", self.input.clone(), default_data_path(DEFAULT_INPUT_NAME))?),
            min_users: r.value("min-users", self.min_users, DEFAULT_MIN_USERS)?,
            max_gap: r.value("max-gap", self.max_gap, DEFAULT_MAX_GAP)?,
        };
        if source.min_users.is_nan() || source.min_users < 0.0 {
            bail!("min-users must be non-negative, got {}", source.min_users);
        }
        Ok(source)
    }
}

struct OutTarget {
    dir: PathBuf,
    format: Format,
}

impl OutArgs {
    fn resolve(&self, r: &mut Resolver) -> Result<OutTarget> {
        Ok(OutTarget {
            dir: PathBuf::from(r.value("out-dir", self.out_dir.clone(), ".".to_string())?),
            format: r.value("format", self.format, Format::Csv)?,
        })
    }
}

#[derive(Debug, Serialize)]
struct DataSummary {
    first_date: NaiveDate,
    last_date: NaiveDate,
    days: usize,
    countries: usize,
    skipped_unresolved: usize,
    skipped_missing_users: usize,
    below_min_users: usize,
    dropped_for_gaps: Vec<DroppedCountry>,
    filled_cells: usize,
}

struct Loaded {
    table: UsageTable,
    matrix: ObservationMatrix,
    label: String,
    digest: String,
    summary: DataSummary,
}

fn load(source: &DataSource) -> Result<Loaded> {
    let bytes = std::fs::read(&source.path).map_err(|e| usage_anomaly::Error::Io {
        path: source.path.clone(),
        source: e,
    })?;
    let parsed = parse_userstats(&bytes[..]).with_context(|| format!("parsing {}", source.path.display()))?;
    let all = parsed.table.countries().count();
    let table = filter_countries(&parsed.table, source.min_users)?;
    let kept = table.countries().count();
    let assembly = assemble_matrix(&table, source.max_gap)?;
    let matrix = assembly.matrix;
    let summary = DataSummary {
        first_date: matrix.dates()[0],
        last_date: *matrix.dates().last().expect("non-empty"),
        days: matrix.nrows(),
        countries: matrix.ncols(),
        skipped_unresolved: parsed.skipped_unresolved,
        skipped_missing_users: parsed.skipped_missing_users,
        below_min_users: all - kept,
        dropped_for_gaps: assembly.dropped,
        filled_cells: assembly.filled_cells,
    };
    log::info!(
        "{}: {} days x {} countries",
        source.path.display(),
        summary.days,
        summary.countries
    );
    Ok(Loaded {
        table,
        matrix,
        label: source.path.display().to_string(),
        digest: sha256_hex(&bytes),
        summary,
    })
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    meta: &'a Meta,
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<&'a DataSummary>,
    results: T,
}

fn summary_bytes<T: Serialize>(meta: &Meta, data: Option<&DataSummary>, results: T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(&Summary { meta, data, results })?;
    out.push(b'\n');
    Ok(out)
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

fn check_range(from: Option<NaiveDate>, to: Option<NaiveDate>) -> Result<()> {
    if let (Some(f), Some(t)) = (from, to) {
        if f > t {
            bail!("--from {f} is after --to {t}");
        }
    }
    Ok(())
}

pub fn detect(args: &DetectArgs, mut r: Resolver) -> Result<()> {
    let source = args.data.resolve(&mut r)?;
    let params = args.detector.resolve(&mut r)?;
    let from = r.optional("from", args.from)?;
    let to = r.optional("to", args.to)?;
    let out = args.out.resolve(&mut r)?;
    check_range(from, to)?;
    if r.finish() {
        return Ok(());
    }

    let data = load(&source)?;
    let detection = run_detector(&data.matrix, &params)?;
    let series = detection.series.restrict(from, to);
    if series.records.is_empty() {
        bail!("no data between the requested dates");
    }
    let in_range = |d: NaiveDate| from.is_none_or(|f| d >= f) && to.is_none_or(|t| d <= t);
    let flags: Vec<FlagRow> = detection.flags.iter().filter(|f| in_range(f.date)).map(FlagRow::from).collect();
    let residuals: Vec<ResidualRow> = series.iter().map(ResidualRow::from).collect();

    let meta = Meta::new("detect", r.resolved(), data.label.clone(), data.digest.clone());
    let ext = out.format.extension();
    let mut set = OutputSet::new(&out.dir)?;
    set.stage(
        &format!("residuals.{ext}"),
        &render_table(&meta, &residuals, RESIDUAL_HEADERS, out.format)?,
    )?;
    set.stage(&format!("flags.{ext}"), &render_table(&meta, &flags, FLAG_HEADERS, out.format)?)?;

    #[derive(Serialize)]
    struct DetectResults {
        evaluated_days: usize,
        degenerate_windows: usize,
        clamped_windows: usize,
        residual_rows: usize,
        evaluated_rows: usize,
        flags: usize,
        drops: usize,
        increases: usize,
    }
    let results = DetectResults {
        evaluated_days: detection.stats.evaluated_days,
        degenerate_windows: detection.stats.degenerate_windows,
        clamped_windows: detection.stats.clamped_windows,
        residual_rows: residuals.len(),
        evaluated_rows: residuals.iter().filter(|r| r.evaluated).count(),
        flags: flags.len(),
        drops: flags.iter().filter(|f| f.class == AnomalyClass::Drop.as_str()).count(),
        increases: flags.iter().filter(|f| f.class == AnomalyClass::Increase.as_str()).count(),
    };
    eprintln!(
        "{} flags ({} drops, {} increases) over {} evaluated country-days",
        results.flags, results.drops, results.increases, results.evaluated_rows
    );
    set.stage("summary.json", &summary_bytes(&meta, Some(&data.summary), results)?)?;
    report_written(&set.commit()?);
    Ok(())
}

pub fn rank(args: &RankArgs, mut r: Resolver) -> Result<()> {
    let residual_path = r.optional("residuals", args.residuals.clone())?;
    let source = match residual_path {
        Some(_) => None,
        None => Some(args.data.resolve(&mut r)?),
    };
    let params = args.detector.resolve(&mut r)?;
    let from = r.optional("from", args.from)?;
    let to = r.optional("to", args.to)?;
    let last_days = r.optional("last-days", args.last_days)?;
    let top = r.value("top", args.top, 10usize)?;
    let out = args.out.resolve(&mut r)?;
    check_range(from, to)?;
    if top == 0 {
        bail!("--top must be at least 1");
    }
    if last_days == Some(0) {
        bail!("--last-days must be at least 1");
    }
    if last_days.is_some() && from.is_some() {
        bail!("--last-days and --from are mutually exclusive");
    }
    if r.finish() {
        return Ok(());
    }

    let (series, label, digest, data): (ResidualSeries, String, String, Option<DataSummary>) = match (&residual_path, source) {
        (Some(path), _) => {
            let path = PathBuf::from(path);
            let bytes = std::fs::read(&path).map_err(|e| usage_anomaly::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let series = read_residuals(&path)?;
            (series, path.display().to_string(), sha256_hex(&bytes), None)
        }
        (None, Some(source)) => {
            let data = load(&source)?;
            let series = run_detector(&data.matrix, &params)?.series;
            (series, data.label, data.digest, Some(data.summary))
        }
        (None, None) => unreachable!("data source resolved above"),
    };
    let last = series.iter().map(|r| r.date).max().context("residual table is empty")?;
    let first = series.iter().map(|r| r.date).min().expect("non-empty");
    let to = to.unwrap_or(last);
    let from = match last_days {
        Some(n) => to
            .checked_sub_days(Days::new(n as u64 - 1))
            .context("--last-days reaches before the calendar start")?,
        None => from.unwrap_or(first),
    };

    let ranking = rank_countries(&series, from, to, top, params.min_history)?;
    let rows: Vec<RankRow> = ranking.ranks.iter().map(RankRow::from).collect();
    println!("most anomalous countries, {from} to {to}");
    for row in &rows {
        println!("{:>3}  {}  {:.4}  ({} days)", row.rank, row.country, row.score, row.evaluated_days);
    }
    if !ranking.excluded.is_empty() {
        eprintln!("{} countries excluded for too few evaluated days", ranking.excluded.len());
    }

    let meta = Meta::new("rank", r.resolved(), label, digest);
    let mut set = OutputSet::new(&out.dir)?;
    set.stage(
        &format!("ranking.{}", out.format.extension()),
        &render_table(&meta, &rows, RANK_HEADERS, out.format)?,
    )?;

    #[derive(Serialize)]
    struct RankResults {
        from: NaiveDate,
        to: NaiveDate,
        ranked: usize,
        excluded: Vec<(CountryCode, usize)>,
    }
    let results = RankResults {
        from,
        to,
        ranked: rows.len(),
        excluded: ranking.excluded,
    };
    set.stage("rank-summary.json", &summary_bytes(&meta, data.as_ref(), results)?)?;
    report_written(&set.commit()?);
    Ok(())
}

pub fn inject(args: &InjectArgs, mut r: Resolver) -> Result<()> {
    let synthetic = r.switch("synthetic", args.synthetic)?;
    let source = if synthetic {
        None
    } else {
        Some(args.data.resolve(&mut r)?)
    };
    let baseline = if synthetic {
        let defaults = BaselineSpec::default();
        Some(BaselineSpec {
            noise: r.value("noise", args.noise, defaults.noise)?,
            seed: r.value("baseline-seed", args.baseline_seed, defaults.seed)?,
            ..defaults
        })
    } else {
        None
    };
    let params = args.detector.resolve(&mut r)?;
    let default_country = if synthetic { "aa" } else { "be" };
    let country = r.value("country", args.country, default_country.parse().expect("valid code"))?;
    let start = r.value("start", args.start, NaiveDate::from_ymd_opt(2013, 8, 21).expect("valid"))?;
    let end = r.value("end", args.end, NaiveDate::from_ymd_opt(2014, 2, 21).expect("valid"))?;
    let runs = r.value("runs", args.runs, 1000usize)?;
    let seed = r.value("seed", args.seed, 1u64)?;
    let magnitudes = r.value("magnitudes", args.magnitudes.clone(), Magnitudes::default())?;
    let ramp_min = r.value("ramp-min", args.ramp_min, *DEFAULT_RAMP_DAYS.start())?;
    let ramp_max = r.value("ramp-max", args.ramp_max, *DEFAULT_RAMP_DAYS.end())?;
    let hold = r.value("hold", args.hold, Hold(HoldPolicy::SameAsRamp))?;
    let max_gap = match &source {
        Some(s) => s.max_gap,
        None => DEFAULT_MAX_GAP,
    };
    let out = args.out.resolve(&mut r)?;
    if start > end {
        bail!("--start {start} is after --end {end}");
    }
    if ramp_min == 0 || ramp_min > ramp_max {
        bail!("ramp range {ramp_min}..={ramp_max} is empty or starts at zero");
    }
    if let Some(b) = &baseline {
        if b.noise.is_nan() || b.noise < 0.0 {
            bail!("noise must be non-negative, got {}", b.noise);
        }
    }
    if r.finish() {
        return Ok(());
    }

    let (table, label, digest, data) = match (source, baseline) {
        (Some(source), _) => {
            let data = load(&source)?;
            (data.table, data.label, data.digest, Some(data.summary))
        }
        (None, Some(spec)) => {
            let table = synthetic_baseline(&spec)?;
            let mut bytes = Vec::new();
            write_userstats(&table, &mut bytes)?;
            (table, "synthetic".to_string(), sha256_hex(&bytes), None)
        }
        (None, None) => unreachable!("one data source is always resolved"),
    };
    let config = ExperimentConfig {
        country,
        period: (start, end),
        magnitudes: magnitudes.0,
        ramp_days: ramp_min..=ramp_max,
        hold: hold.0,
        runs,
        seed,
        max_gap,
    };
    let report = run_experiment(&table, &params, &config)?;
    let (rates, run_rows) = rate_rows(&report);
    println!("detection rates for {country}, {start} to {end}, {runs} runs per magnitude");
    for b in &rates {
        let signed = if b.sign == "negative" { -b.magnitude } else { b.magnitude };
        println!("{signed:>+6.2}  {:>5}/{:<5}  {:.3}", b.detected, b.runs, b.rate);
    }

    let meta = Meta::new("inject", r.resolved(), label, digest);
    let ext = out.format.extension();
    let mut set = OutputSet::new(&out.dir)?;
    set.stage(&format!("rates.{ext}"), &render_table(&meta, &rates, RATE_HEADERS, out.format)?)?;
    set.stage(&format!("runs.{ext}"), &render_table(&meta, &run_rows, RUN_HEADERS, out.format)?)?;
    set.stage(
        "inject-summary.json",
        &summary_bytes(&meta, data.as_ref(), serde_json::json!({ "total_runs": report.total_runs }))?,
    )?;
    report_written(&set.commit()?);
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs, mut r: Resolver) -> Result<()> {
    let events_path = r.optional("events", args.events.clone())?;
    let flags_path = r.optional("flags", args.flags.clone())?;
    let source = match flags_path {
        Some(_) => None,
        None => Some(args.data.resolve(&mut r)?),
    };
    let params = args.detector.resolve(&mut r)?;
    let tolerance = r.value("tolerance-days", args.tolerance_days, 0u32)?;
    let out = args.out.resolve(&mut r)?;
    if r.finish() {
        return Ok(());
    }

    let events = match &events_path {
        Some(p) => load_events_path(p)?,
        None => load_events(BUNDLED_EVENTS.as_bytes())?,
    };
    let (flags, label, digest, data) = match (&flags_path, source) {
        (Some(path), _) => {
            let path = PathBuf::from(path);
            let bytes = std::fs::read(&path).map_err(|e| usage_anomaly::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            (read_flags(&path)?, path.display().to_string(), sha256_hex(&bytes), None)
        }
        (None, Some(source)) => {
            let data = load(&source)?;
            let flags = run_detector(&data.matrix, &params)?.flags;
            (flags, data.label, data.digest, Some(data.summary))
        }
        (None, None) => unreachable!("flag source resolved above"),
    };

    let card = score_events(&flags, &events, tolerance);
    let rows = score_rows(&card);
    println!(
        "detected {} of {} applicable events ({} not applicable), tolerance {} days",
        card.detected.len(),
        card.applicable(),
        card.not_applicable.len(),
        tolerance
    );
    for row in &rows {
        let matched = row.matched.map_or_else(|| "-".to_string(), |d| d.to_string());
        println!("{}  {}  {:<15} {:<11} {}", row.date, row.country, row.outcome, matched, row.description);
    }

    let meta = Meta::new("evaluate", r.resolved(), label, digest);
    let events_label = events_path.unwrap_or_else(|| BUNDLED_NAME.to_string());
    let mut set = OutputSet::new(&out.dir)?;
    set.stage(
        &format!("scorecard.{}", out.format.extension()),
        &render_table(&meta, &rows, SCORE_HEADERS, out.format)?,
    )?;
    let results = serde_json::json!({
        "events": events_label,
        "tolerance_days": tolerance,
        "detected": card.detected.len(),
        "missed": card.missed.len(),
        "not_applicable": card.not_applicable.len(),
        "applicable": card.applicable(),
    });
    set.stage("evaluate-summary.json", &summary_bytes(&meta, data.as_ref(), results)?)?;
    report_written(&set.commit()?);
    Ok(())
}

/// Upper bound on a downloaded body.
const FETCH_LIMIT: u64 = 1 << 30;

pub fn fetch(args: &FetchArgs, mut r: Resolver) -> Result<()> {
    let url = r.value("url", args.url.clone(), DEFAULT_FETCH_URL.to_string())?;
    let output = PathBuf::from(r.value("output", args.output.clone(), default_data_path(DEFAULT_INPUT_NAME))?);
    if r.finish() {
        return Ok(());
    }

    let mut response = ureq::get(&url).call().with_context(|| format!("fetching {url}"))?;
    let body = response
        .body_mut()
        .with_config()
        .limit(FETCH_LIMIT)
        .read_to_vec()
        .with_context(|| format!("reading response from {url}"))?;
    let parsed = parse_userstats(&body[..]).with_context(|| format!("response from {url} is not a usage table"))?;
    write_atomic(&output, &body)?;
    let (first, last) = parsed
        .table
        .date_range()
        .with_context(|| format!("response from {url} contains no usage rows"))?;
    eprintln!(
        "wrote {} ({} countries, {first} to {last}, sha256 {})",
        output.display(),
        parsed.table.countries().count(),
        sha256_hex(&body)
    );
    Ok(())
}
