//! Country attributes and observed lockdown series: ingestion, validation and
//! the normalization extrema used by the similarity distance.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

pub const COUNTRIES_HEADER: [&str; 8] = [
    "code",
    "name",
    "income",
    "democracy",
    "capital_lat",
    "capital_lon",
    "pop_density",
    "initial_lockdown",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}, column `{column}`: cannot parse `{value}`")]
    Malformed {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}, column `{column}`: value {value} outside {bounds}")]
    OutOfRange {
        line: u64,
        column: String,
        value: f64,
        bounds: &'static str,
    },
    #[error("line {line}: duplicate country code `{code}`")]
    DuplicateCode { line: u64, code: String },
    #[error("line {line}: unknown country code `{code}`")]
    UnknownCode { line: u64, code: String },
    #[error("no observation row for country `{code}`")]
    MissingCountry { code: String },
    #[error("observations header: expected day column `{expected}`, found `{found}`")]
    MissingDay { expected: String, found: String },
    #[error("line {line}, column `{column}`: cell `{value}` is not 0 or 1")]
    NonBinary {
        line: u64,
        column: String,
        value: String,
    },
    #[error("country `{code}` leaves lockdown between day {day} and day {next}", next = day + 1)]
    Monotonicity { code: String, day: usize },
    #[error("country `{code}`: day-0 observation disagrees with initial_lockdown")]
    InitialMismatch { code: String },
    #[error("no countries loaded")]
    Empty,
    #[error("degenerate country set: {0}")]
    Degenerate(&'static str),
}

/// A capital position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// Great-circle distance in km on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn haversine(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // rounding can push h a hair above 1 for antipodal points
    2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryRecord {
    pub id: usize,
    pub code: String,
    pub name: String,
    /// GDP per capita, PPP.
    pub income: f64,
    /// Democracy index score in [0, 10].
    pub democracy: f64,
    pub capital_lat: f64,
    pub capital_lon: f64,
    /// Persons per km².
    pub pop_density: f64,
    pub initial_lockdown: bool,
}

impl CountryRecord {
    pub fn capital(&self) -> LatLon {
        LatLon::new(self.capital_lat, self.capital_lon)
    }
}

/// Observed binary lockdown status, one row per country (indexed by id) and
/// one column per day.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    days: usize,
    matrix: Vec<Vec<bool>>,
}

/// What to do with a row that leaves lockdown inside the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MonotonePolicy {
    #[default]
    Reject,
    /// Once a country is observed in lockdown, keep it there.
    Clamp,
}

impl ObservationSeries {
    /// Builds a series from a `[country][day]` matrix. Rows must share a
    /// length of at least one day and be monotone non-decreasing.
    pub fn from_rows(matrix: Vec<Vec<bool>>) -> Result<Self, DataError> {
        let days = matrix.first().map_or(0, Vec::len);
        if matrix.is_empty() || days == 0 {
            return Err(DataError::Empty);
        }
        for (id, row) in matrix.iter().enumerate() {
            if row.len() != days {
                return Err(DataError::MissingDay {
                    expected: format!("d{}", days - 1),
                    found: format!("row {id} with {} days", row.len()),
                });
            }
            if let Some(day) = first_exit(row) {
                return Err(DataError::Monotonicity {
                    code: format!("#{id}"),
                    day,
                });
            }
        }
        Ok(Self { days, matrix })
    }

    /// Number of observed days (columns).
    pub fn days(&self) -> usize {
        self.days
    }

    pub fn n_countries(&self) -> usize {
        self.matrix.len()
    }

    pub fn row(&self, country: usize) -> &[bool] {
        &self.matrix[country]
    }

    /// Status of every country on `day`, indexed by country id.
    pub fn day_slice(&self, day: usize) -> Vec<bool> {
        self.matrix.iter().map(|row| row[day]).collect()
    }

    pub fn fraction(&self, day: usize) -> f64 {
        let locked = self.matrix.iter().filter(|row| row[day]).count();
        locked as f64 / self.matrix.len() as f64
    }

    /// Observed fraction in lockdown for days `0..=horizon`.
    pub fn fraction_curve(&self, horizon: usize) -> Vec<f64> {
        (0..=horizon).map(|d| self.fraction(d)).collect()
    }
}

fn first_exit(row: &[bool]) -> Option<usize> {
    row.windows(2).position(|w| w[0] && !w[1])
}

/// Per-dimension extrema of the loaded set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationContext {
    pub income_min: f64,
    pub income_max: f64,
    pub democracy_min: f64,
    pub democracy_max: f64,
    /// Largest pairwise capital distance, km.
    pub haversine_max: f64,
}

pub fn build_normalization(countries: &[CountryRecord]) -> Result<NormalizationContext, DataError> {
    if countries.len() < 2 {
        return Err(DataError::Degenerate("at least two countries are required"));
    }
    let extrema = |f: fn(&CountryRecord) -> f64| {
        countries
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (income_min, income_max) = extrema(|c| c.income);
    let (democracy_min, democracy_max) = extrema(|c| c.democracy);
    if income_max <= income_min {
        return Err(DataError::Degenerate("all incomes are equal"));
    }
    if democracy_max <= democracy_min {
        return Err(DataError::Degenerate("all democracy scores are equal"));
    }
    let mut haversine_max = 0.0_f64;
    for (i, a) in countries.iter().enumerate() {
        for b in &countries[i + 1..] {
            haversine_max = haversine_max.max(haversine(a.capital(), b.capital()));
        }
    }
    if haversine_max <= 0.0 {
        return Err(DataError::Degenerate("all capitals coincide"));
    }
    Ok(NormalizationContext {
        income_min,
        income_max,
        democracy_min,
        democracy_max,
        haversine_max,
    })
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File, DataError> {
    File::create(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_countries(path: impl AsRef<Path>) -> Result<Vec<CountryRecord>, DataError> {
    parse_countries(open(path.as_ref())?)
}

/// Parses the countries CSV. Ids are assigned in file order.
pub fn parse_countries<R: Read>(reader: R) -> Result<Vec<CountryRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(COUNTRIES_HEADER.iter().copied()) {
        return Err(DataError::Header {
            expected: COUNTRIES_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize| record.get(idx).unwrap_or("").trim();
        let number = |idx: usize| -> Result<f64, DataError> {
            let raw = field(idx);
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::Malformed {
                    line,
                    column: COUNTRIES_HEADER[idx].to_string(),
                    value: raw.to_string(),
                })
        };
        let check = |idx: usize, value: f64, ok: bool, bounds: &'static str| {
            if ok {
                Ok(value)
            } else {
                Err(DataError::OutOfRange {
                    line,
                    column: COUNTRIES_HEADER[idx].to_string(),
                    value,
                    bounds,
                })
            }
        };

        let code = field(0).to_string();
        if code.is_empty() {
            return Err(DataError::Malformed {
                line,
                column: "code".into(),
                value: String::new(),
            });
        }
        let income = number(2)?;
        let income = check(2, income, income >= 0.0, "[0, inf)")?;
        let democracy = number(3)?;
        let democracy = check(3, democracy, (0.0..=10.0).contains(&democracy), "[0, 10]")?;
        let lat = number(4)?;
        let lat = check(4, lat, (-90.0..=90.0).contains(&lat), "[-90, 90]")?;
        let lon = number(5)?;
        let lon = check(5, lon, (-180.0..=180.0).contains(&lon), "[-180, 180]")?;
        let density = number(6)?;
        let density = check(6, density, density > 0.0, "(0, inf)")?;
        let initial_lockdown = match field(7) {
            "0" => false,
            "1" => true,
            other => {
                return Err(DataError::NonBinary {
                    line,
                    column: "initial_lockdown".into(),
                    value: other.to_string(),
                })
            }
        };

        if seen.insert(code.clone(), out.len()).is_some() {
            return Err(DataError::DuplicateCode { line, code });
        }
        out.push(CountryRecord {
            id: out.len(),
            code,
            name: field(1).to_string(),
            income,
            democracy,
            capital_lat: lat,
            capital_lon: lon,
            pop_density: density,
            initial_lockdown,
        });
    }
    if out.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(out)
}

pub fn load_observations(
    path: impl AsRef<Path>,
    countries: &[CountryRecord],
    policy: MonotonePolicy,
) -> Result<ObservationSeries, DataError> {
    parse_observations(open(path.as_ref())?, countries, policy)
}

/// Parses the observations CSV and aligns its rows to `countries` by code.
pub fn parse_observations<R: Read>(
    reader: R,
    countries: &[CountryRecord],
    policy: MonotonePolicy,
) -> Result<ObservationSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("code") {
        return Err(DataError::Header {
            expected: "code,d0,...".into(),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let days = header.len() - 1;
    if days == 0 {
        return Err(DataError::MissingDay {
            expected: "d0".into(),
            found: String::new(),
        });
    }
    for (day, name) in header.iter().skip(1).enumerate() {
        let expected = format!("d{day}");
        if name.trim() != expected {
            return Err(DataError::MissingDay {
                expected,
                found: name.to_string(),
            });
        }
    }

    let index: HashMap<&str, usize> = countries.iter().map(|c| (c.code.as_str(), c.id)).collect();
    let mut rows: Vec<Option<Vec<bool>>> = vec![None; countries.len()];
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let code = record.get(0).unwrap_or("").trim();
        let id = *index.get(code).ok_or_else(|| DataError::UnknownCode {
            line,
            code: code.to_string(),
        })?;
        if rows[id].is_some() {
            return Err(DataError::DuplicateCode {
                line,
                code: code.to_string(),
            });
        }
        let mut row = Vec::with_capacity(days);
        for day in 0..days {
            let cell = record.get(day + 1).map(str::trim);
            row.push(match cell {
                Some("0") => false,
                Some("1") => true,
                Some(other) => {
                    return Err(DataError::NonBinary {
                        line,
                        column: format!("d{day}"),
                        value: other.to_string(),
                    })
                }
                None => {
                    return Err(DataError::MissingDay {
                        expected: format!("d{day}"),
                        found: format!("line {line} ends early"),
                    })
                }
            });
        }
        rows[id] = Some(row);
    }

    let mut matrix = Vec::with_capacity(countries.len());
    for (country, row) in countries.iter().zip(rows) {
        let mut row = row.ok_or_else(|| DataError::MissingCountry {
            code: country.code.clone(),
        })?;
        if row[0] != country.initial_lockdown {
            return Err(DataError::InitialMismatch {
                code: country.code.clone(),
            });
        }
        if let Some(day) = first_exit(&row) {
            match policy {
                MonotonePolicy::Reject => {
                    return Err(DataError::Monotonicity {
                        code: country.code.clone(),
                        day,
                    })
                }
                MonotonePolicy::Clamp => {
                    let mut locked = false;
                    for cell in row.iter_mut() {
                        locked |= *cell;
                        *cell = locked;
                    }
                }
            }
        }
        matrix.push(row);
    }
    ObservationSeries::from_rows(matrix)
}

pub fn write_countries(path: impl AsRef<Path>, countries: &[CountryRecord]) -> Result<(), DataError> {
    let path = path.as_ref();
    let w = write_countries_to(create(path)?, countries)?;
    flush(w, path)
}

/// Writes the countries CSV to any writer. Lines starting with `#` written
/// beforehand are skipped by [`parse_countries`].
pub fn write_countries_to<W: Write>(writer: W, countries: &[CountryRecord]) -> Result<csv::Writer<W>, DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COUNTRIES_HEADER)?;
    for c in countries {
        w.write_record([
            c.code.clone(),
            c.name.clone(),
            c.income.to_string(),
            c.democracy.to_string(),
            c.capital_lat.to_string(),
            c.capital_lon.to_string(),
            c.pop_density.to_string(),
            u8::from(c.initial_lockdown).to_string(),
        ])?;
    }
    Ok(w)
}

pub fn write_observations(
    path: impl AsRef<Path>,
    countries: &[CountryRecord],
    observations: &ObservationSeries,
) -> Result<(), DataError> {
    let path = path.as_ref();
    let w = write_observations_to(create(path)?, countries, observations)?;
    flush(w, path)
}

pub fn write_observations_to<W: Write>(
    writer: W,
    countries: &[CountryRecord],
    observations: &ObservationSeries,
) -> Result<csv::Writer<W>, DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["code".to_string()];
    header.extend((0..observations.days()).map(|d| format!("d{d}")));
    w.write_record(&header)?;
    for c in countries {
        let mut rec = vec![c.code.clone()];
        rec.extend(observations.row(c.id).iter().map(|&b| u8::from(b).to_string()));
        w.write_record(&rec)?;
    }
    Ok(w)
}

fn flush<W: Write>(w: csv::Writer<W>, path: &Path) -> Result<(), DataError> {
    w.into_inner()
        .map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })?
        .flush()
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
}
