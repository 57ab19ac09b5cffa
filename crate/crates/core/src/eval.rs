//! Comparison of detector flags against a curated list of reported events.

use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use crate::detector::AnomalyFlag;
use crate::error::{Error, Result};
use crate::ingest::CountryCode;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnownEvent {
    pub date: NaiveDate,
    pub country: CountryCode,
    pub description: String,
    /// False for events the usage data cannot reflect (bridge-only
    /// blocking, for instance). Such events are listed but not scored.
    pub applicable: bool,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "y" => Some(true),
        "false" | "no" | "0" | "n" | "-" => Some(false),
        _ => None,
    }
}

/// Reads `date,country,description,applicable` rows.
pub fn load_events<R: Read>(source: R) -> Result<Vec<KnownEvent>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut events = Vec::new();
    let mut seen_header = false;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if !seen_header {
            seen_header = true;
            if record.get(0).is_some_and(|f| f.eq_ignore_ascii_case("date")) {
                continue;
            }
        }
        if record.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("malformed date {:?}: {e}", &record[0]),
        })?;
        let country = record[1].parse().map_err(|message| Error::Parse { line, message })?;
        let applicable = parse_bool(&record[3]).ok_or_else(|| Error::Parse {
            line,
            message: format!("applicable must be true or false, got {:?}", &record[3]),
        })?;
        events.push(KnownEvent {
            date,
            country,
            description: record[2].to_string(),
            applicable,
        });
    }
    if events.is_empty() {
        return Err(Error::parameter("event list is empty"));
    }
    Ok(events)
}

pub fn load_events_path(path: impl AsRef<Path>) -> Result<Vec<KnownEvent>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_events(std::io::BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventOutcome {
    pub event: KnownEvent,
    /// Closest flag date within tolerance, if any.
    pub matched: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scorecard {
    pub tolerance_days: u32,
    pub detected: Vec<EventOutcome>,
    pub missed: Vec<EventOutcome>,
    pub not_applicable: Vec<EventOutcome>,
}

impl Scorecard {
    pub fn total(&self) -> usize {
        self.detected.len() + self.missed.len() + self.not_applicable.len()
    }

    pub fn applicable(&self) -> usize {
        self.detected.len() + self.missed.len()
    }
}

/// An applicable event is detected when a flag for its country falls
/// within `tolerance_days` of the event date.
pub fn score_events(flags: &[AnomalyFlag], events: &[KnownEvent], tolerance_days: u32) -> Scorecard {
    let mut card = Scorecard {
        tolerance_days,
        detected: Vec::new(),
        missed: Vec::new(),
        not_applicable: Vec::new(),
    };
    for event in events {
        let matched = flags
            .iter()
            .filter(|f| f.country == event.country)
            .map(|f| ((f.date - event.date).num_days().abs(), f.date))
            .filter(|&(gap, _)| gap <= i64::from(tolerance_days))
            .min()
            .map(|(_, date)| date);
        let outcome = EventOutcome {
            event: event.clone(),
            matched,
        };
        if !event.applicable {
            card.not_applicable.push(outcome);
        } else if matched.is_some() {
            card.detected.push(outcome);
        } else {
            card.missed.push(outcome);
        }
    }
    card
}
