//! Observed daily series: loading, French reconstruction, initial
//! conditions and train/validation/test splits.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::InitialCondition;
use crate::scalar::Scalar;

/// The five fitted series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    D,
    R,
    T,
    H,
    E,
}

impl Target {
    pub const ALL: [Target; 5] = [Target::D, Target::R, Target::T, Target::H, Target::E];

    #[inline]
    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn name(self) -> &'static str {
        match self {
            Target::D => "D",
            Target::R => "R",
            Target::T => "T",
            Target::H => "H",
            Target::E => "E",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type Column = Vec<Option<f64>>;

/// Daily targets with per-day missing values.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSeries {
    pub date0: Option<NaiveDate>,
    pub population: f64,
    series: [Column; 5],
}

impl ObservedSeries {
    pub fn new(date0: Option<NaiveDate>, population: f64, series: [Column; 5]) -> Result<Self> {
        let len = series[0].len();
        if let Some(bad) = series.iter().position(|s| s.len() != len) {
            return Err(Error::Shape { expected: len, actual: series[bad].len() });
        }
        if !(population.is_finite() && population > 0.0) {
            return Err(Error::Data(format!("population must be positive, got {population}")));
        }
        for (t, s) in Target::ALL.iter().zip(&series) {
            if let Some(day) = s.iter().position(|v| matches!(v, Some(x) if !(x.is_finite() && *x >= 0.0))) {
                return Err(Error::Data(format!("series {t} has an invalid value on day {day}")));
            }
        }
        Ok(Self { date0, population, series })
    }

    pub fn len(&self) -> usize {
        self.series[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn series(&self, t: Target) -> &[Option<f64>] {
        &self.series[t.index()]
    }

    #[inline]
    pub fn get(&self, t: Target, day: usize) -> Option<f64> {
        self.series[t.index()].get(day).copied().flatten()
    }

    /// Marks one observation missing.
    pub fn clear(&mut self, t: Target, day: usize) {
        if let Some(v) = self.series[t.index()].get_mut(day) {
            *v = None;
        }
    }

    /// Days `start..end` as a new series with shifted calendar origin.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return Err(Error::Range(format!("slice {start}..{end} of a {}-day series", self.len())));
        }
        Ok(Self {
            date0: self.date0.map(|d| d + chrono::Days::new(start as u64)),
            population: self.population,
            series: std::array::from_fn(|k| self.series[k][start..end].to_vec()),
        })
    }

    pub fn concat(&self, other: &Self) -> Self {
        Self {
            date0: self.date0,
            population: self.population,
            series: std::array::from_fn(|k| {
                let mut v = self.series[k].clone();
                v.extend_from_slice(&other.series[k]);
                v
            }),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SeriesDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SeriesDocument = serde_json::from_str(text)?;
        doc.try_into()
    }
}

/// On-disk representation: `{date0, N, series: {D, R, T, H, E}}`.
#[derive(Debug, Serialize, Deserialize)]
struct SeriesDocument {
    date0: Option<NaiveDate>,
    #[serde(rename = "N")]
    population: f64,
    series: SeriesColumns,
}

#[derive(Debug, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct SeriesColumns {
    D: Column,
    R: Column,
    T: Column,
    H: Column,
    E: Column,
}

impl From<&ObservedSeries> for SeriesDocument {
    fn from(o: &ObservedSeries) -> Self {
        let [d, r, t, h, e] = o.series.clone();
        SeriesDocument {
            date0: o.date0,
            population: o.population,
            series: SeriesColumns { D: d, R: r, T: t, H: h, E: e },
        }
    }
}

impl TryFrom<SeriesDocument> for ObservedSeries {
    type Error = Error;
    fn try_from(doc: SeriesDocument) -> Result<Self> {
        let s = doc.series;
        ObservedSeries::new(doc.date0, doc.population, [s.D, s.R, s.T, s.H, s.E])
    }
}

/// Column names in a daily report file. Unset targets load as all-missing;
/// a serialized map lists exactly the columns it uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub date: Option<String>,
    pub d: Option<String>,
    pub r: Option<String>,
    pub t: Option<String>,
    pub h: Option<String>,
    pub e: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self::italy()
    }
}

impl ColumnMap {
    /// Italian Civil Protection national report: home isolation, hospitalized
    /// with symptoms, intensive care, discharged/healed, deceased.
    pub fn italy() -> Self {
        Self {
            date: Some("data".into()),
            d: Some("isolamento_domiciliare".into()),
            r: Some("ricoverati_con_sintomi".into()),
            t: Some("terapia_intensiva".into()),
            h: Some("dimessi_guariti".into()),
            e: Some("deceduti".into()),
        }
    }

    fn target(&self, t: Target) -> Option<&str> {
        match t {
            Target::D => self.d.as_deref(),
            Target::R => self.r.as_deref(),
            Target::T => self.t.as_deref(),
            Target::H => self.h.as_deref(),
            Target::E => self.e.as_deref(),
        }
    }
}

/// A delimiter-separated table read column-wise with 1-based file line numbers.
struct Table {
    headers: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut text = String::new();
        fs::File::open(path)?.read_to_string(&mut text)?;
        Self::parse(&text)
    }

    fn parse(text: &str) -> Result<Self> {
        let first = text.lines().find(|l| !l.trim().is_empty()).ok_or(Error::Parse {
            row: 0,
            message: "empty file: a header row is required".into(),
        })?;
        let delimiter = if first.matches(';').count() > first.matches(',').count() { b';' } else { b',' };
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .flexible(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.iter().map(|h| h.trim_start_matches('\u{feff}').to_string()).collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Parse {
                row: e.position().map(|p| p.line() as usize).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(rows.len() + 2);
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Self { headers, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 1,
            message: format!("unknown column `{name}` (header has: {})", self.headers.join(", ")),
        })
    }

    fn numbers(&self, name: &str) -> Result<Column> {
        let col = self.column(name)?;
        self.rows
            .iter()
            .map(|(line, cells)| {
                let cell = cells[col].as_str();
                if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                    return Ok(None);
                }
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row: *line,
                    message: format!("column `{name}`: cannot parse `{cell}` as a number"),
                })?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Parse {
                        row: *line,
                        message: format!("column `{name}`: counts must be non-negative, got {v}"),
                    });
                }
                Ok(Some(v))
            })
            .collect()
    }

    /// Parses the date column and checks it is strictly increasing.
    fn dates(&self, name: &str) -> Result<Option<NaiveDate>> {
        let col = self.column(name)?;
        let mut first = None;
        let mut prev: Option<NaiveDate> = None;
        for (line, cells) in &self.rows {
            let cell = cells[col].as_str();
            let stem = cell.get(..10).unwrap_or(cell);
            let date = NaiveDate::parse_from_str(stem, "%Y-%m-%d").map_err(|_| Error::Parse {
                row: *line,
                message: format!("column `{name}`: cannot parse `{cell}` as a date"),
            })?;
            if let Some(p) = prev {
                if date <= p {
                    return Err(Error::Parse {
                        row: *line,
                        message: format!("dates are not increasing ({date} follows {p})"),
                    });
                }
            }
            first.get_or_insert(date);
            prev = Some(date);
        }
        Ok(first)
    }
}

/// Reads a daily report (comma or semicolon separated, header row required).
pub fn load_series(path: impl AsRef<Path>, map: &ColumnMap, population: f64) -> Result<ObservedSeries> {
    let table = Table::read(path.as_ref())?;
    series_from_table(&table, map, population)
}

/// Same as [`load_series`] for in-memory text.
pub fn parse_series(text: &str, map: &ColumnMap, population: f64) -> Result<ObservedSeries> {
    series_from_table(&Table::parse(text)?, map, population)
}

fn series_from_table(table: &Table, map: &ColumnMap, population: f64) -> Result<ObservedSeries> {
    if table.rows.is_empty() {
        return Err(Error::Parse { row: 1, message: "file has a header but no data rows".into() });
    }
    let date0 = match &map.date {
        Some(name) => table.dates(name)?,
        None => None,
    };
    let mut series: [Column; 5] = Default::default();
    for t in Target::ALL {
        series[t.index()] = match map.target(t) {
            Some(name) => table.numbers(name)?,
            None => vec![None; table.rows.len()],
        };
    }
    ObservedSeries::new(date0, population, series)
}

/// French report columns before reconstruction of `D` and `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrenchRawSeries {
    pub date0: Option<NaiveDate>,
    pub population: f64,
    /// Cumulative infectious count.
    pub cumulative_infectious: Column,
    /// Hospitalized individuals that recovered.
    pub hospital_recovered: Column,
    pub r: Column,
    pub t: Column,
    pub e: Column,
    /// Days after which a detected asymptomatic case counts as healed.
    pub quarantine_days: usize,
}

pub const DEFAULT_QUARANTINE_DAYS: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrenchColumnMap {
    pub date: Option<String>,
    pub cumulative_infectious: String,
    pub hospital_recovered: String,
    pub r: String,
    pub t: String,
    pub e: String,
}

impl Default for FrenchColumnMap {
    /// Column names of the consolidated opencovid19-fr national table.
    fn default() -> Self {
        Self {
            date: Some("date".into()),
            cumulative_infectious: "cas_confirmes".into(),
            hospital_recovered: "gueris".into(),
            r: "hospitalises".into(),
            t: "reanimation".into(),
            e: "deces".into(),
        }
    }
}

pub fn load_french_raw(
    path: impl AsRef<Path>,
    map: &FrenchColumnMap,
    population: f64,
    quarantine_days: usize,
) -> Result<FrenchRawSeries> {
    let table = Table::read(path.as_ref())?;
    if table.rows.is_empty() {
        return Err(Error::Parse { row: 1, message: "file has a header but no data rows".into() });
    }
    Ok(FrenchRawSeries {
        date0: match &map.date {
            Some(name) => table.dates(name)?,
            None => None,
        },
        population,
        cumulative_infectious: table.numbers(&map.cumulative_infectious)?,
        hospital_recovered: table.numbers(&map.hospital_recovered)?,
        r: table.numbers(&map.r)?,
        t: table.numbers(&map.t)?,
        e: table.numbers(&map.e)?,
        quarantine_days,
    })
}

/// Data-quality notes produced by [`derive_french`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DataQuality {
    /// Days where the reconstructed `D` was negative and clamped to zero.
    pub clamped_days: Vec<usize>,
    /// Days where the cumulative count decreased.
    pub non_monotone_days: Vec<usize>,
}

/// Reconstructs `D` and `H` assuming detected asymptomatic cases heal after
/// `d` days:
///
/// ```text
/// D(t) = C_I(t) - T(t) - R(t) - D(t - d)
/// H(t) = H_h(t) + D(t - d)
/// ```
///
/// `D(t - d)` is zero for `t < d`. Any missing operand makes the output for
/// that day missing.
pub fn derive_french(raw: &FrenchRawSeries) -> Result<(ObservedSeries, DataQuality)> {
    let d = raw.quarantine_days;
    if d == 0 {
        return Err(Error::Config("quarantine period must be at least one day".into()));
    }
    let len = raw.cumulative_infectious.len();
    for (name, col) in [
        ("hospital_recovered", &raw.hospital_recovered),
        ("R", &raw.r),
        ("T", &raw.t),
        ("E", &raw.e),
    ] {
        if col.len() != len {
            return Err(Error::Data(format!("column {name} has {} days, expected {len}", col.len())));
        }
    }
    let mut quality = DataQuality::default();
    let mut last_cumulative: Option<f64> = None;
    for (day, c) in raw.cumulative_infectious.iter().enumerate() {
        if let Some(c) = *c {
            if matches!(last_cumulative, Some(p) if c < p) {
                quality.non_monotone_days.push(day);
            }
            last_cumulative = Some(c);
        }
    }

    let mut dd: Column = Vec::with_capacity(len);
    let mut hh: Column = Vec::with_capacity(len);
    for day in 0..len {
        let lagged = if day < d { Some(0.0) } else { dd[day - d] };
        let value = match (raw.cumulative_infectious[day], raw.t[day], raw.r[day], lagged) {
            (Some(c), Some(t), Some(r), Some(l)) => {
                let v = c - t - r - l;
                if v < 0.0 {
                    quality.clamped_days.push(day);
                    Some(0.0)
                } else {
                    Some(v)
                }
            }
            _ => None,
        };
        dd.push(value);
        hh.push(match (raw.hospital_recovered[day], lagged) {
            (Some(h), Some(l)) => Some(h + l),
            _ => None,
        });
    }
    if !quality.clamped_days.is_empty() {
        log::warn!("{} days of reconstructed D were negative and clamped to 0", quality.clamped_days.len());
    }
    let series = ObservedSeries::new(raw.date0, raw.population, [dd, raw.r.clone(), raw.t.clone(), hh, raw.e.clone()])?;
    Ok((series, quality))
}

/// `I0 = D0 = D(0)`, `A0 = R0 = R(0)`, `T0 = T(0)`, `H0 = H_d0 = H(0)`,
/// `E0 = E(0)` and `S0` the complement to `population`.
pub fn build_initial_condition<T: Scalar>(obs: &ObservedSeries, population: f64) -> Result<InitialCondition<T>> {
    let first = |t: Target| {
        obs.get(t, 0)
            .ok_or_else(|| Error::Data(format!("day-0 value of series {t} is missing")))
    };
    let (d, r, t, h, e) = (first(Target::D)?, first(Target::R)?, first(Target::T)?, first(Target::H)?, first(Target::E)?);
    let infected = [d, d, r, r, t, h, e];
    let others: f64 = infected.iter().sum();
    if population - others < 0.0 {
        return Err(Error::Data(format!(
            "initial susceptible count would be negative ({} - {others})",
            population
        )));
    }
    InitialCondition::with_complement(infected.map(T::lit), T::lit(h), T::lit(population))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

/// Contiguous train, validation and test windows taken from the start of `obs`.
pub fn split(obs: &ObservedSeries, spec: &SplitSpec) -> Result<(ObservedSeries, ObservedSeries, ObservedSeries)> {
    if spec.total() > obs.len() {
        return Err(Error::Range(format!(
            "split {}+{}+{} exceeds the {}-day series",
            spec.train,
            spec.validation,
            spec.test,
            obs.len()
        )));
    }
    let a = spec.train;
    let b = a + spec.validation;
    let c = b + spec.test;
    Ok((obs.slice(0, a)?, obs.slice(a, b)?, obs.slice(b, c)?))
}
