//! Raw station files to the conglomerated `prime.csv` dataset.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDateTime};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of `prime.csv`.
pub const PRIME_HEADER: [&str; 13] = [
    "station_ID",
    "date_time",
    "latitude",
    "longitude",
    "year",
    "month",
    "altitude",
    "wind_speed",
    "wind_direct_avg",
    "cos_direct",
    "sin_direct",
    "f_month",
    "c_month",
];

const DATE_FORMAT: &str = "%Y-%m-%d %H:%M";
const INPUT_FORMATS: [&str; 6] = ["%Y-%m-%d %H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%dT%H:%M:%S", "%Y/%m/%d %H:%M", "%Y/%m/%d %H:%M:%S"];

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub station_id: String,
    pub date_time: NaiveDateTime,
    pub altitude: f64,
    pub wind_speed: Option<f64>,
    pub wind_direct_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindRecord {
    pub station_id: String,
    pub date_time: NaiveDateTime,
    pub latitude: f64,
    pub longitude: f64,
    pub year: i32,
    pub month: u32,
    pub altitude: f64,
    pub wind_speed: f64,
    pub wind_direct_avg: f64,
    pub cos_direct: f64,
    pub sin_direct: f64,
    pub f_month: u32,
    pub c_month: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StationTable {
    pub stations: BTreeMap<String, Station>,
}

impl StationTable {
    /// The ten WASA measurement sites.
    pub fn wasa() -> Self {
        let rows = [
            ("WM01", "Alexander Bay", -28.583331, 16.4833),
            ("WM02", "Calvinia", -31.4707, 19.7760),
            ("WM03", "Vredendal", -31.6391, 18.5285),
            ("WM04", "Vredenburg", -32.9000, 17.9833),
            ("WM05", "Napier", -34.4667, 19.9000),
            ("WM06", "Sutherland", -32.3743, 20.8064),
            ("WM07", "Prince Albert", -33.2167, 22.0333),
            ("WM08", "Humansdorp", -34.0027, 24.7440),
            ("WM09", "Noupoort", -31.1874, 24.9499),
            ("WM10", "Butterworth", -32.3308, 28.1498),
        ];
        let stations = rows
            .iter()
            .map(|&(id, name, latitude, longitude)| (id.to_string(), Station { name: name.to_string(), latitude, longitude }))
            .collect();
        Self { stations }
    }

    /// Reads `station_ID,name,latitude,longitude` rows.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(crate::error::open(path)?);
        let mut stations = BTreeMap::new();
        for row in rdr.records() {
            let row = row?;
            if row.len() < 4 {
                return Err(Error::Data(format!("{}: station rows need 4 columns", path.display())));
            }
            let num = |k: usize| {
                row[k].trim().parse::<f64>().map_err(|_| Error::Data(format!("{}: bad coordinate '{}'", path.display(), &row[k])))
            };
            stations.insert(row[0].trim().to_string(), Station { name: row[1].trim().to_string(), latitude: num(2)?, longitude: num(3)? });
        }
        Ok(Self { stations })
    }

    pub fn get(&self, id: &str) -> Result<&Station> {
        self.stations.get(id).ok_or_else(|| Error::UnknownStation(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }
}

/// Counts of raw rows that did not become records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkipReport {
    pub rows_read: usize,
    pub records_kept: usize,
    pub bad_timestamp: usize,
    pub missing_speed: usize,
    pub missing_direction: usize,
    pub nonpositive_speed: usize,
    pub direction_out_of_range: usize,
    pub bad_altitude: usize,
    /// Example offending lines as `file:line: reason`.
    pub examples: Vec<String>,
}

impl SkipReport {
    fn merge(&mut self, other: SkipReport) {
        self.rows_read += other.rows_read;
        self.records_kept += other.records_kept;
        self.bad_timestamp += other.bad_timestamp;
        self.missing_speed += other.missing_speed;
        self.missing_direction += other.missing_direction;
        self.nonpositive_speed += other.nonpositive_speed;
        self.direction_out_of_range += other.direction_out_of_range;
        self.bad_altitude += other.bad_altitude;
        for e in other.examples {
            if self.examples.len() < 50 {
                self.examples.push(e);
            }
        }
    }

    pub fn skipped(&self) -> usize {
        self.rows_read - self.records_kept
    }
}

impl fmt::Display for SkipReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows read: {}", self.rows_read)?;
        writeln!(f, "records kept: {}", self.records_kept)?;
        writeln!(f, "rows skipped: {}", self.skipped())?;
        writeln!(f, "  unparseable timestamp: {}", self.bad_timestamp)?;
        writeln!(f, "  missing wind speed: {}", self.missing_speed)?;
        writeln!(f, "  missing wind direction: {}", self.missing_direction)?;
        writeln!(f, "  wind speed at or below threshold: {}", self.nonpositive_speed)?;
        writeln!(f, "  wind direction outside [0, 360): {}", self.direction_out_of_range)?;
        writeln!(f, "  unparseable altitude: {}", self.bad_altitude)?;
        for e in &self.examples {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestOptions {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Speeds at or below this value are dropped.
    #[serde(default)]
    pub min_speed: f64,
    /// `(year, month)` for `c_month = 1`; the earliest month present when unset.
    #[serde(default)]
    pub origin: Option<(i32, u32)>,
}

fn default_delimiter() -> char {
    ','
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { delimiter: ',', min_speed: 0.0, origin: None }
    }
}

fn parse_missing(s: &str) -> Option<f64> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("null") {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let t = s.trim();
    INPUT_FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(t, f).ok())
}

fn column(headers: &csv::StringRecord, names: &[&str], path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
        .ok_or_else(|| Error::Data(format!("{}: missing column '{}'", path.display(), names[0])))
}

/// Parses one raw station file. Rows that cannot be used are tallied.
pub fn read_raw_file(path: &Path, opts: &IngestOptions) -> Result<(Vec<RawRecord>, SkipReport)> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(opts.delimiter as u8).flexible(true).from_reader(crate::error::open(path)?);
    let headers = rdr.headers()?.clone();
    let c_id = column(&headers, &["station_ID", "station_id"], path)?;
    let c_dt = column(&headers, &["date_time"], path)?;
    let c_alt = column(&headers, &["altitude"], path)?;
    let c_ws = column(&headers, &["wind_speed"], path)?;
    let c_wd = column(&headers, &["wind_direct_avg", "wind_direct AVG", "wind_direct_AVG"], path)?;
    let mut out = Vec::new();
    let mut rep = SkipReport::default();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        rep.rows_read += 1;
        let note = |rep: &mut SkipReport, why: &str| {
            if rep.examples.len() < 20 {
                rep.examples.push(format!("{}:{}: {why}", path.display(), line + 2));
            }
        };
        let field = |k: usize| row.get(k).unwrap_or("");
        let Some(date_time) = parse_timestamp(field(c_dt)) else {
            rep.bad_timestamp += 1;
            note(&mut rep, "unparseable timestamp");
            continue;
        };
        let Some(altitude) = parse_missing(field(c_alt)) else {
            rep.bad_altitude += 1;
            note(&mut rep, "unparseable altitude");
            continue;
        };
        out.push(RawRecord {
            station_id: field(c_id).trim().to_string(),
            date_time,
            altitude,
            wind_speed: parse_missing(field(c_ws)),
            wind_direct_avg: parse_missing(field(c_wd)),
        });
    }
    Ok((out, rep))
}

fn month_index(year: i32, month: u32) -> i64 {
    12 * year as i64 + month as i64 - 1
}

/// Merges raw station files into cleaned records sorted by station then time.
pub fn conglomerate(paths: &[PathBuf], stations: &StationTable, opts: &IngestOptions) -> Result<(Vec<WindRecord>, SkipReport)> {
    let parsed: Vec<Result<(Vec<RawRecord>, SkipReport)>> = paths.par_iter().map(|p| read_raw_file(p, opts)).collect();
    let mut raw = Vec::new();
    let mut report = SkipReport::default();
    for r in parsed {
        let (rows, rep) = r?;
        raw.extend(rows);
        report.merge(rep);
    }
    for r in &raw {
        stations.get(&r.station_id)?;
    }
    let mut kept: Vec<RawRecord> = Vec::with_capacity(raw.len());
    for r in raw {
        let Some(speed) = r.wind_speed else {
            report.missing_speed += 1;
            continue;
        };
        let Some(dir) = r.wind_direct_avg else {
            report.missing_direction += 1;
            continue;
        };
        if speed <= opts.min_speed {
            report.nonpositive_speed += 1;
            continue;
        }
        if !(0.0..360.0).contains(&dir) {
            report.direction_out_of_range += 1;
            continue;
        }
        kept.push(r);
    }
    let origin = match opts.origin {
        Some(o) => o,
        None => kept.iter().map(|r| (r.date_time.year(), r.date_time.month())).min().unwrap_or((1970, 1)),
    };
    let o = month_index(origin.0, origin.1);
    let mut out = Vec::with_capacity(kept.len());
    for r in kept {
        let st = stations.get(&r.station_id)?;
        let (year, month) = (r.date_time.year(), r.date_time.month());
        let c = month_index(year, month) - o + 1;
        if c < 1 {
            return Err(Error::Data(format!("record at {} precedes the dataset origin {}-{:02}", r.date_time, origin.0, origin.1)));
        }
        let dir = r.wind_direct_avg.unwrap();
        let rad = dir.to_radians();
        out.push(WindRecord {
            station_id: r.station_id,
            date_time: r.date_time,
            latitude: st.latitude,
            longitude: st.longitude,
            year,
            month,
            altitude: r.altitude,
            wind_speed: r.wind_speed.unwrap(),
            wind_direct_avg: dir,
            cos_direct: rad.cos(),
            sin_direct: rad.sin(),
            f_month: month,
            c_month: c as u32,
        });
    }
    out.sort_by(|a, b| a.station_id.cmp(&b.station_id).then(a.date_time.cmp(&b.date_time)));
    report.records_kept = out.len();
    Ok((out, report))
}

/// Displaces every record uniformly within a disc of `radius` degrees around
/// its current coordinates. With `radius > 0` all output coordinate pairs are
/// distinct (collisions are re-drawn).
pub fn jitter(records: &[WindRecord], radius: f64, seed: u64) -> Result<Vec<WindRecord>> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::Config(format!("jitter radius must be non-negative, got {radius}")));
    }
    let mut out = records.to_vec();
    if radius == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<(u64, u64)> = HashSet::with_capacity(records.len());
    for rec in out.iter_mut() {
        let (lat0, lon0) = (rec.latitude, rec.longitude);
        loop {
            let r = radius * rng.random::<f64>().sqrt();
            let phi = 2.0 * std::f64::consts::PI * rng.random::<f64>();
            let lon = lon0 + r * phi.cos();
            let lat = lat0 + r * phi.sin();
            if (lon - lon0).hypot(lat - lat0) <= radius && seen.insert((lat.to_bits(), lon.to_bits())) {
                rec.latitude = lat;
                rec.longitude = lon;
                break;
            }
        }
    }
    Ok(out)
}

/// Uniform subset of `n` records without replacement, in original order.
pub fn sample(records: &[WindRecord], n: usize, seed: u64) -> Result<Vec<WindRecord>> {
    if n > records.len() {
        return Err(Error::Data(format!("cannot sample {n} records: only {} available", records.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, records.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| records[i].clone()).collect())
}

pub fn write_prime(records: &[WindRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PRIME_HEADER)?;
    for r in records {
        w.write_record([
            r.station_id.clone(),
            r.date_time.format(DATE_FORMAT).to_string(),
            r.latitude.to_string(),
            r.longitude.to_string(),
            r.year.to_string(),
            r.month.to_string(),
            r.altitude.to_string(),
            r.wind_speed.to_string(),
            r.wind_direct_avg.to_string(),
            r.cos_direct.to_string(),
            r.sin_direct.to_string(),
            r.f_month.to_string(),
            r.c_month.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_prime(path: &Path) -> Result<Vec<WindRecord>> {
    let mut rdr = csv::Reader::from_reader(crate::error::open(path)?);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(PRIME_HEADER.iter().copied()) {
        return Err(Error::Data(format!("{}: header does not match the prime dataset layout", path.display())));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |k: usize| Error::Data(format!("{}:{}: bad value '{}' in column {}", path.display(), line + 2, &row[k], PRIME_HEADER[k]));
        let f = |k: usize| row[k].parse::<f64>().map_err(|_| bad(k));
        let u = |k: usize| row[k].parse::<u32>().map_err(|_| bad(k));
        out.push(WindRecord {
            station_id: row[0].to_string(),
            date_time: NaiveDateTime::parse_from_str(&row[1], DATE_FORMAT).map_err(|_| bad(1))?,
            latitude: f(2)?,
            longitude: f(3)?,
            year: row[4].parse::<i32>().map_err(|_| bad(4))?,
            month: u(5)?,
            altitude: f(6)?,
            wind_speed: f(7)?,
            wind_direct_avg: f(8)?,
            cos_direct: f(9)?,
            sin_direct: f(10)?,
            f_month: u(11)?,
            c_month: u(12)?,
        });
    }
    Ok(out)
}
