//! Ranking of countries by the dispersion of their residuals.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::Serialize;

use crate::detector::ResidualSeries;
use crate::error::{Error, Result};
use crate::ingest::CountryCode;
use crate::stats::median_and_mad;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountryRank {
    pub rank: usize,
    pub country: CountryCode,
    /// Raw MAD of the country's evaluated residuals in the period.
    pub score: f64,
    pub evaluated_days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranking {
    pub from: NaiveDate,
    pub to: NaiveDate,
    /// Top entries, best score first.
    pub ranks: Vec<CountryRank>,
    /// Countries with too few evaluated days, and their day counts.
    pub excluded: Vec<(CountryCode, usize)>,
}

/// Scores every country over `[from, to]` and returns the `top` highest.
/// Ties are broken by country code.
pub fn rank_countries(
    series: &ResidualSeries,
    from: NaiveDate,
    to: NaiveDate,
    top: usize,
    min_history: usize,
) -> Result<Ranking> {
    if from > to {
        return Err(Error::parameter(format!("empty period: {from} is after {to}")));
    }
    if top == 0 {
        return Err(Error::parameter("top must be at least 1"));
    }
    let mut residuals: BTreeMap<CountryCode, Vec<f64>> = BTreeMap::new();
    let mut any_in_period = false;
    for r in series.iter().filter(|r| r.date >= from && r.date <= to) {
        any_in_period = true;
        let entry = residuals.entry(r.country).or_default();
        if let Some(v) = r.residual {
            entry.push(v);
        }
    }
    if !any_in_period {
        return Err(Error::parameter(format!("no residuals between {from} and {to}")));
    }

    let mut scored = Vec::new();
    let mut excluded = Vec::new();
    for (country, values) in residuals {
        if values.len() < min_history.max(1) {
            excluded.push((country, values.len()));
            continue;
        }
        let (_, mad) = median_and_mad(&values).expect("non-empty");
        scored.push((country, mad, values.len()));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let ranks = scored
        .into_iter()
        .take(top)
        .enumerate()
        .map(|(i, (country, score, evaluated_days))| CountryRank {
            rank: i + 1,
            country,
            score,
            evaluated_days,
        })
        .collect();
    Ok(Ranking {
        from,
        to,
        ranks,
        excluded,
    })
}
