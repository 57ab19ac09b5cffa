//! Row layouts of the emitted tables, and readers for the ones that feed
//! later commands.

use std::path::Path;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use usage_anomaly::detector::{AnomalyClass, AnomalyFlag, ResidualRecord, ResidualSeries};
use usage_anomaly::eval::Scorecard;
use usage_anomaly::ingest::CountryCode;
use usage_anomaly::ranking::CountryRank;
use usage_anomaly::synth::{DetectionRateReport, Sign};

pub const RESIDUAL_HEADERS: &[&str] = &["date", "country", "usage", "predicted", "residual", "evaluated"];
pub const FLAG_HEADERS: &[&str] = &["date", "country", "class", "residual", "threshold_low", "threshold_high"];
pub const RANK_HEADERS: &[&str] = &["rank", "country", "score", "evaluated_days"];
pub const RATE_HEADERS: &[&str] = &["magnitude", "sign", "runs", "detected", "rate"];
pub const RUN_HEADERS: &[&str] = &[
    "magnitude",
    "start",
    "ramp_days",
    "hold_days",
    "active_days",
    "flagged_days",
    "detected",
    "seed",
];
pub const SCORE_HEADERS: &[&str] = &["date", "country", "description", "applicable", "outcome", "matched"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub date: NaiveDate,
    pub country: CountryCode,
    pub usage: f64,
    pub predicted: Option<f64>,
    pub residual: Option<f64>,
    pub evaluated: bool,
}

impl From<&ResidualRecord> for ResidualRow {
    fn from(r: &ResidualRecord) -> Self {
        ResidualRow {
            date: r.date,
            country: r.country,
            usage: r.usage,
            predicted: r.predicted,
            residual: r.residual,
            evaluated: r.evaluated(),
        }
    }
}

impl ResidualRow {
    fn into_record(self) -> ResidualRecord {
        let (predicted, residual) = if self.evaluated {
            (self.predicted, self.residual)
        } else {
            (None, None)
        };
        ResidualRecord {
            date: self.date,
            country: self.country,
            usage: self.usage,
            predicted,
            residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagRow {
    pub date: NaiveDate,
    pub country: CountryCode,
    pub class: String,
    pub residual: f64,
    pub threshold_low: f64,
    pub threshold_high: f64,
}

impl From<&AnomalyFlag> for FlagRow {
    fn from(f: &AnomalyFlag) -> Self {
        FlagRow {
            date: f.date,
            country: f.country,
            class: f.class.as_str().to_string(),
            residual: f.residual,
            threshold_low: f.threshold_low,
            threshold_high: f.threshold_high,
        }
    }
}

impl FlagRow {
    fn into_flag(self) -> Result<AnomalyFlag> {
        let class: AnomalyClass = self.class.parse().map_err(anyhow::Error::msg)?;
        Ok(AnomalyFlag {
            date: self.date,
            country: self.country,
            class,
            residual: self.residual,
            threshold_low: self.threshold_low,
            threshold_high: self.threshold_high,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RankRow {
    pub rank: usize,
    pub country: CountryCode,
    pub score: f64,
    pub evaluated_days: usize,
}

impl From<&CountryRank> for RankRow {
    fn from(r: &CountryRank) -> Self {
        RankRow {
            rank: r.rank,
            country: r.country,
            score: r.score,
            evaluated_days: r.evaluated_days,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub magnitude: f64,
    pub sign: &'static str,
    pub runs: usize,
    pub detected: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRow {
    pub magnitude: f64,
    pub start: NaiveDate,
    pub ramp_days: usize,
    pub hold_days: usize,
    pub active_days: usize,
    pub flagged_days: usize,
    pub detected: bool,
    pub seed: u64,
}

pub fn rate_rows(report: &DetectionRateReport) -> (Vec<RateRow>, Vec<RunRow>) {
    let rates = report
        .buckets
        .iter()
        .map(|b| RateRow {
            magnitude: b.magnitude,
            sign: match b.sign {
                Sign::Positive => "positive",
                Sign::Negative => "negative",
            },
            runs: b.runs,
            detected: b.detected,
            rate: b.rate,
        })
        .collect();
    let runs = report
        .runs
        .iter()
        .map(|r| RunRow {
            magnitude: r.spec.magnitude,
            start: r.spec.start,
            ramp_days: r.spec.ramp_days,
            hold_days: r.spec.hold_days,
            active_days: r.spec.active_days(),
            flagged_days: r.flagged_days,
            detected: r.detected,
            seed: r.spec.seed,
        })
        .collect();
    (rates, runs)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreRow {
    pub date: NaiveDate,
    pub country: CountryCode,
    pub description: String,
    pub applicable: bool,
    pub outcome: &'static str,
    pub matched: Option<NaiveDate>,
}

pub fn score_rows(card: &Scorecard) -> Vec<ScoreRow> {
    let groups = [
        ("detected", &card.detected),
        ("missed", &card.missed),
        ("not-applicable", &card.not_applicable),
    ];
    let mut rows: Vec<ScoreRow> = groups
        .into_iter()
        .flat_map(|(outcome, list)| {
            list.iter().map(move |o| ScoreRow {
                date: o.event.date,
                country: o.event.country,
                description: o.event.description.clone(),
                applicable: o.event.applicable,
                outcome,
                matched: o.matched,
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.date, r.country));
    rows
}

#[derive(Deserialize)]
struct JsonRecords<R> {
    records: Vec<R>,
}

fn read_rows<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let bytes = std::fs::read(path).map_err(|source| usage_anomaly::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let table: JsonRecords<R> =
            serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(table.records);
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(&bytes[..]);
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<R>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

pub fn read_residuals(path: &Path) -> Result<ResidualSeries> {
    let rows: Vec<ResidualRow> = read_rows(path)?;
    Ok(ResidualSeries::new(rows.into_iter().map(ResidualRow::into_record).collect()))
}

pub fn read_flags(path: &Path) -> Result<Vec<AnomalyFlag>> {
    read_rows::<FlagRow>(path)?
        .into_iter()
        .map(FlagRow::into_flag)
        .collect::<Result<_>>()
        .with_context(|| format!("parsing {}", path.display()))
}
