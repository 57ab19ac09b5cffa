//! Ingestion of per-country daily usage estimates.
//!
//! The reference input is the relay-user CSV exported by the Tor metrics
//! portal (`date,country,users[,lower,upper,frac]`), but any delimiter
//! separated file with `date`, `country` and `users` columns is accepted.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_USERS: f64 = 500.0;
pub const DEFAULT_MAX_GAP: usize = 7;

/// Lowercase two-character ISO-3166 alpha-2 code (plus the GeoIP pseudo
/// codes such as `a1`, which are also two characters).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountryCode([u8; 2]);

impl CountryCode {
    pub fn as_str(&self) -> &str {
        // Only ASCII alphanumerics are ever stored.
        std::str::from_utf8(&self.0).expect("country code is ascii")
    }
}

impl FromStr for CountryCode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let bytes = s.trim().as_bytes();
        if bytes.len() != 2 || !bytes.iter().all(u8::is_ascii_alphanumeric) {
            return Err(format!("invalid country code {s:?}"));
        }
        Ok(CountryCode([
            bytes[0].to_ascii_lowercase(),
            bytes[1].to_ascii_lowercase(),
        ]))
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CountryCode({})", self.as_str())
    }
}

impl Serialize for CountryCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CountryCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sparse date × country grid of estimated daily users.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UsageTable {
    series: BTreeMap<CountryCode, BTreeMap<NaiveDate, f64>>,
    date_range: Option<(NaiveDate, NaiveDate)>,
}

impl UsageTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts one observation. Fails on duplicates and on negative or
    /// non-finite counts.
    pub fn insert(&mut self, date: NaiveDate, country: CountryCode, users: f64) -> Result<()> {
        if !users.is_finite() || users < 0.0 {
            return Err(Error::parameter(format!(
                "user count for ({date}, {country}) must be finite and non-negative, got {users}"
            )));
        }
        let days = self.series.entry(country).or_default();
        if days.contains_key(&date) {
            return Err(Error::DuplicateEntry {
                date,
                country,
                line: 0,
            });
        }
        days.insert(date, users);
        self.date_range = Some(match self.date_range {
            None => (date, date),
            Some((lo, hi)) => (lo.min(date), hi.max(date)),
        });
        Ok(())
    }

    pub fn get(&self, date: NaiveDate, country: CountryCode) -> Option<f64> {
        self.series.get(&country)?.get(&date).copied()
    }

    /// Overwrites an existing cell. Used by anomaly injection.
    pub(crate) fn set(&mut self, date: NaiveDate, country: CountryCode, users: f64) {
        if let Some(v) = self
            .series
            .get_mut(&country)
            .and_then(|days| days.get_mut(&date))
        {
            *v = users;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Number of (date, country) entries.
    pub fn len(&self) -> usize {
        self.series.values().map(BTreeMap::len).sum()
    }

    pub fn date_range(&self) -> Option<(NaiveDate, NaiveDate)> {
        self.date_range
    }

    pub fn countries(&self) -> impl Iterator<Item = CountryCode> + '_ {
        self.series.keys().copied()
    }

    pub fn contains_country(&self, country: CountryCode) -> bool {
        self.series.contains_key(&country)
    }

    pub fn country_series(&self, country: CountryCode) -> Option<&BTreeMap<NaiveDate, f64>> {
        self.series.get(&country)
    }

    /// All entries ordered by (country, date).
    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, CountryCode, f64)> + '_ {
        self.series
            .iter()
            .flat_map(|(&c, days)| days.iter().map(move |(&d, &u)| (d, c, u)))
    }

    fn from_series(series: BTreeMap<CountryCode, BTreeMap<NaiveDate, f64>>) -> Self {
        let mut date_range: Option<(NaiveDate, NaiveDate)> = None;
        for days in series.values() {
            if let (Some((&first, _)), Some((&last, _))) = (days.first_key_value(), days.last_key_value()) {
                date_range = Some(match date_range {
                    None => (first, last),
                    Some((lo, hi)) => (lo.min(first), hi.max(last)),
                });
            }
        }
        UsageTable { series, date_range }
    }
}

/// Result of parsing a usage file, with counters for skipped rows.
#[derive(Debug, Clone)]
pub struct ParsedUsage {
    pub table: UsageTable,
    /// Rows with an empty country or the unresolved code `??`.
    pub skipped_unresolved: usize,
    /// Rows whose `users` cell is empty (treated as a missing day).
    pub skipped_missing_users: usize,
}

fn sniff_delimiter(text: &str) -> u8 {
    let header = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    if header.contains('\t') {
        b'\t'
    } else if header.contains(';') && !header.contains(',') {
        b';'
    } else {
        b','
    }
}

/// Parses a usage table from delimiter-separated text.
pub fn parse_userstats<R: Read>(mut source: R) -> Result<ParsedUsage> {
    let mut text = String::new();
    source.read_to_string(&mut text).map_err(|e| Error::Parse {
        line: 0,
        message: format!("input is not valid UTF-8 text: {e}"),
    })?;
    parse_userstats_str(&text)
}

pub fn parse_userstats_path(path: impl AsRef<Path>) -> Result<ParsedUsage> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_userstats(std::io::BufReader::new(file))
}

fn parse_userstats_str(text: &str) -> Result<ParsedUsage> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(text))
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
        .clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
    };
    let (date_col, country_col, users_col) = (column("date")?, column("country")?, column("users")?);

    let mut table = UsageTable::new();
    let mut skipped_unresolved = 0;
    let mut skipped_missing_users = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");

        let country = field(country_col);
        if country.is_empty() || country == "??" {
            skipped_unresolved += 1;
            continue;
        }
        let country: CountryCode = country
            .parse()
            .map_err(|message| Error::Parse { line, message })?;
        let date = NaiveDate::parse_from_str(field(date_col), "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("malformed date {:?}: {e}", field(date_col)),
        })?;
        let users = field(users_col);
        if users.is_empty() || users.eq_ignore_ascii_case("na") {
            skipped_missing_users += 1;
            continue;
        }
        let users: f64 = users.parse().map_err(|_| Error::Parse {
            line,
            message: format!("malformed user count {users:?}"),
        })?;
        if !users.is_finite() || users < 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("user count must be finite and non-negative, got {users}"),
            });
        }
        table.insert(date, country, users).map_err(|e| match e {
            Error::DuplicateEntry { date, country, .. } => Error::DuplicateEntry { date, country, line },
            other => other,
        })?;
    }
    Ok(ParsedUsage {
        table,
        skipped_unresolved,
        skipped_missing_users,
    })
}

/// Writes `date,country,users` rows, ordered by date then country.
pub fn write_userstats<W: Write>(table: &UsageTable, out: W) -> std::io::Result<()> {
    let mut rows: Vec<_> = table.iter().collect();
    rows.sort_by_key(|&(d, c, _)| (d, c));
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["date", "country", "users"])?;
    for (date, country, users) in rows {
        writer.write_record([date.to_string(), country.to_string(), users.to_string()])?;
    }
    writer.flush()
}

/// Keeps only countries whose maximum daily usage reaches `min_users`.
pub fn filter_countries(table: &UsageTable, min_users: f64) -> Result<UsageTable> {
    if table.is_empty() {
        return Err(Error::InsufficientData("usage table is empty".into()));
    }
    if min_users.is_nan() || min_users < 0.0 {
        return Err(Error::parameter(format!("min_users must be non-negative, got {min_users}")));
    }
    let series: BTreeMap<_, _> = table
        .series
        .iter()
        .filter(|(_, days)| days.values().copied().fold(f64::NEG_INFINITY, f64::max) >= min_users)
        .map(|(&c, days)| (c, days.clone()))
        .collect();
    if series.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "only {} country(ies) reach {min_users} users; at least 2 are required",
            series.len()
        )));
    }
    Ok(UsageTable::from_series(series))
}

/// Dense observation matrix: rows are consecutive days, columns countries.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    values: DMatrix<f64>,
    dates: Vec<NaiveDate>,
    countries: Vec<CountryCode>,
}

impl ObservationMatrix {
    pub fn new(values: DMatrix<f64>, dates: Vec<NaiveDate>, countries: Vec<CountryCode>) -> Result<Self> {
        if values.nrows() != dates.len() {
            return Err(Error::Shape {
                expected: dates.len(),
                actual: values.nrows(),
            });
        }
        if values.ncols() != countries.len() {
            return Err(Error::Shape {
                expected: countries.len(),
                actual: values.ncols(),
            });
        }
        if dates.windows(2).any(|w| w[1] != w[0].succ_opt().unwrap_or(w[0])) {
            return Err(Error::parameter("matrix dates must be consecutive days"));
        }
        if countries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::parameter("matrix countries must be unique and sorted"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::parameter("matrix cells must be finite and non-negative"));
        }
        Ok(ObservationMatrix {
            values,
            dates,
            countries,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn countries(&self) -> &[CountryCode] {
        &self.countries
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn country_index(&self, country: CountryCode) -> Option<usize> {
        self.countries.binary_search(&country).ok()
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.dates.first()?;
        let offset = (date - first).num_days();
        (0..self.dates.len() as i64)
            .contains(&offset)
            .then_some(offset as usize)
    }

    /// Rows `[start, end)` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> ObservationMatrix {
        ObservationMatrix {
            values: self.values.rows(start, end - start).into_owned(),
            dates: self.dates[start..end].to_vec(),
            countries: self.countries.clone(),
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.values
    }

    pub fn to_table(&self) -> UsageTable {
        let mut series = BTreeMap::new();
        for (j, &c) in self.countries.iter().enumerate() {
            let days: BTreeMap<_, _> = self
                .dates
                .iter()
                .enumerate()
                .map(|(i, &d)| (d, self.values[(i, j)]))
                .collect();
            series.insert(c, days);
        }
        UsageTable::from_series(series)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedCountry {
    pub country: CountryCode,
    pub longest_gap: usize,
}

#[derive(Debug, Clone)]
pub struct Assembly {
    pub matrix: ObservationMatrix,
    pub dropped: Vec<DroppedCountry>,
    pub filled_cells: usize,
}

/// Builds the dense matrix over the table's full date range, filling
/// missing runs of at most `max_gap` days and dropping countries with
/// longer gaps.
pub fn assemble_matrix(table: &UsageTable, max_gap: usize) -> Result<Assembly> {
    let (first, last) = table
        .date_range()
        .ok_or_else(|| Error::InsufficientData("usage table is empty".into()))?;
    let dates: Vec<NaiveDate> = first.iter_days().take_while(|d| *d <= last).collect();
    let m = dates.len();

    let mut columns = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut filled_cells = 0;
    for (&country, days) in &table.series {
        let mut column: Vec<Option<f64>> = vec![None; m];
        for (&d, &u) in days {
            column[(d - first).num_days() as usize] = Some(u);
        }
        match fill_gaps(&column, max_gap) {
            Ok((values, filled)) => {
                filled_cells += filled;
                columns.push(values);
                kept.push(country);
            }
            Err(longest_gap) => dropped.push(DroppedCountry { country, longest_gap }),
        }
    }
    if kept.is_empty() {
        return Err(Error::InsufficientData(format!(
            "every country has a gap longer than {max_gap} days"
        )));
    }
    let values = DMatrix::from_fn(m, kept.len(), |i, j| columns[j][i]);
    Ok(Assembly {
        matrix: ObservationMatrix::new(values, dates, kept)?,
        dropped,
        filled_cells,
    })
}

/// Returns the filled column and the number of filled cells, or the
/// length of the longest gap when it exceeds `max_gap`.
fn fill_gaps(column: &[Option<f64>], max_gap: usize) -> std::result::Result<(Vec<f64>, usize), usize> {
    let observed: Vec<usize> = (0..column.len()).filter(|&i| column[i].is_some()).collect();
    let (Some(&head), Some(&tail)) = (observed.first(), observed.last()) else {
        return Err(column.len());
    };
    let longest = observed
        .windows(2)
        .map(|w| w[1] - w[0] - 1)
        .chain([head, column.len() - 1 - tail])
        .max()
        .unwrap_or(0);
    if longest > max_gap {
        return Err(longest);
    }

    let mut out: Vec<f64> = column.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let mut filled = 0;
    for v in &mut out[..head] {
        *v = column[head].unwrap();
        filled += 1;
    }
    for v in &mut out[tail + 1..] {
        *v = column[tail].unwrap();
        filled += 1;
    }
    for w in observed.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (va, vb) = (column[a].unwrap(), column[b].unwrap());
        for (i, v) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let frac = (i - a) as f64 / (b - a) as f64;
            *v = va + (vb - va) * frac;
            filled += 1;
        }
    }
    Ok((out, filled))
}
