//! RSS scans, labelled datasets and their CSV representation.
//!
//! On disk a dataset is one CSV row per scan:
//!
//! ```text
//! timestamp,position_id,x,y,readings
//! 1000,0,0,0,AA:BB:CC:DD:EE:FF:-67;11:22:33:44:55:66:-80
//! ```
//!
//! `readings` packs `AP_ID:RSS` pairs separated by `;`. The RSS value is the
//! text after the last `:`. An identifier that itself ends in `:` is written
//! with a doubled separator (`AP::RSS`) and a single trailing `:` is stripped
//! when parsing.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weakest RSS value a scan may report, in dBm.
pub const RSS_MIN: i32 = -99;
/// Strongest RSS value a scan may report, in dBm.
pub const RSS_MAX: i32 = -30;

pub const CSV_HEADER: &str = "timestamp,position_id,x,y,readings";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reading {
    pub ap: String,
    pub rss: i32,
}

impl Reading {
    pub fn new(ap: impl Into<String>, rss: i32) -> Self {
        Reading { ap: ap.into(), rss }
    }
}

/// One WiFi scan. Readings keep the order in which the scan listed them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RssSample {
    pub readings: Vec<Reading>,
    pub position_id: Option<u32>,
    pub location: Option<Point>,
    pub timestamp: Option<f64>,
}

impl RssSample {
    pub fn rss(&self, ap: &str) -> Option<i32> {
        self.readings.iter().find(|r| r.ap == ap).map(|r| r.rss)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.readings.is_empty() {
            return Err("scan has no readings".into());
        }
        let mut seen = HashSet::with_capacity(self.readings.len());
        for r in &self.readings {
            if r.ap.is_empty() {
                return Err("empty AP identifier".into());
            }
            if !(RSS_MIN..=RSS_MAX).contains(&r.rss) {
                return Err(format!(
                    "RSS {} dBm for AP {} outside [{RSS_MIN}, {RSS_MAX}]",
                    r.rss, r.ap
                ));
            }
            if !seen.insert(r.ap.as_str()) {
                return Err(format!("AP {} appears twice in one scan", r.ap));
            }
        }
        if self.position_id.is_some() && self.location.is_none() {
            return Err("position_id without coordinates".into());
        }
        if let Some(p) = self.location {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err("non-finite coordinates".into());
            }
        }
        if let Some(t) = self.timestamp {
            if !t.is_finite() {
                return Err("non-finite timestamp".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Train,
    TestKnown,
    TestUnknown,
    TestTrajectory,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] = [
        DatasetKind::Train,
        DatasetKind::TestKnown,
        DatasetKind::TestUnknown,
        DatasetKind::TestTrajectory,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Train => "train",
            DatasetKind::TestKnown => "test-known",
            DatasetKind::TestUnknown => "test-unknown",
            DatasetKind::TestTrajectory => "test-trajectory",
        }
    }

    fn requires_labels(&self) -> bool {
        matches!(self, DatasetKind::Train | DatasetKind::TestKnown)
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown dataset kind {s:?}")))
    }
}

/// An ordered, validated collection of scans. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<RssSample>,
    positions: BTreeMap<u32, Point>,
    kind: DatasetKind,
}

impl Dataset {
    pub fn new(samples: Vec<RssSample>, kind: DatasetKind) -> Result<Self> {
        let positions = validate(&samples, kind)
            .map_err(|(i, msg)| Error::InvalidDataset(format!("sample {i}: {msg}")))?;
        Ok(Dataset {
            samples,
            positions,
            kind,
        })
    }

    pub fn samples(&self) -> &[RssSample] {
        &self.samples
    }

    pub fn positions(&self) -> &BTreeMap<u32, Point> {
        &self.positions
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<RssSample> {
        self.samples
    }
}

/// Checks every dataset invariant. On failure returns the index of the
/// offending sample and a message.
fn validate(
    samples: &[RssSample],
    kind: DatasetKind,
) -> std::result::Result<BTreeMap<u32, Point>, (usize, String)> {
    let mut positions: BTreeMap<u32, Point> = BTreeMap::new();
    let mut by_coord: HashMap<(u64, u64), u32> = HashMap::new();
    let mut scan_keys: HashMap<(u64, Option<u32>), HashSet<&str>> = HashMap::new();
    let mut last_ts: Option<f64> = None;

    for (i, s) in samples.iter().enumerate() {
        s.check().map_err(|m| (i, m))?;

        if kind.requires_labels() && s.position_id.is_none() {
            return Err((i, format!("{kind} sample without position_id")));
        }
        if kind != DatasetKind::Train && s.location.is_none() {
            return Err((i, format!("{kind} sample without ground-truth location")));
        }
        if kind == DatasetKind::TestTrajectory {
            let Some(t) = s.timestamp else {
                return Err((i, "trajectory sample without timestamp".into()));
            };
            if last_ts.is_some_and(|prev| t < prev) {
                return Err((i, "trajectory timestamps are not ordered".into()));
            }
            last_ts = Some(t);
        }

        if let (Some(id), Some(loc)) = (s.position_id, s.location) {
            match positions.get(&id) {
                Some(known) if *known != loc => {
                    return Err((i, format!("position {id} has conflicting coordinates")));
                }
                Some(_) => {}
                None => {
                    let key = (loc.x.to_bits(), loc.y.to_bits());
                    if let Some(other) = by_coord.insert(key, id) {
                        return Err((i, format!("positions {other} and {id} share coordinates")));
                    }
                    positions.insert(id, loc);
                }
            }
        }

        if let Some(t) = s.timestamp {
            let aps = scan_keys.entry((t.to_bits(), s.position_id)).or_default();
            for r in &s.readings {
                if !aps.insert(r.ap.as_str()) {
                    return Err((
                        i,
                        format!(
                            "duplicate reading for AP {} at timestamp {t} and position {:?}",
                            r.ap, s.position_id
                        ),
                    ));
                }
            }
        }
    }
    Ok(positions)
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite {what}"),
        });
    }
    Ok(v)
}

fn parse_readings(field: &str, line: usize) -> Result<Vec<Reading>> {
    let err = |message: String| Error::Parse { line, message };
    if field.is_empty() {
        return Err(err("empty readings column".into()));
    }
    field
        .split(';')
        .map(|pair| {
            let (ap, rss) = pair
                .rsplit_once(':')
                .ok_or_else(|| err(format!("reading {pair:?} is not AP_ID:RSS")))?;
            let ap = ap.strip_suffix(':').unwrap_or(ap);
            if ap.is_empty() {
                return Err(err(format!("reading {pair:?} has an empty AP identifier")));
            }
            let rss: i32 = rss
                .parse()
                .map_err(|_| err(format!("invalid RSS {rss:?} for AP {ap}")))?;
            if !(RSS_MIN..=RSS_MAX).contains(&rss) {
                return Err(err(format!(
                    "RSS {rss} dBm for AP {ap} outside [{RSS_MIN}, {RSS_MAX}]"
                )));
            }
            Ok(Reading::new(ap, rss))
        })
        .collect()
}

fn parse_row(row: &str, line: usize) -> Result<RssSample> {
    let fields: Vec<&str> = row.splitn(5, ',').collect();
    if fields.len() != 5 {
        return Err(Error::Parse {
            line,
            message: format!("expected 5 columns, found {}", fields.len()),
        });
    }
    let timestamp = match fields[0].trim() {
        "" => None,
        t => Some(parse_f64(t, "timestamp", line)?),
    };
    let position_id = match fields[1].trim() {
        "" => None,
        p => Some(p.parse::<u32>().map_err(|_| Error::Parse {
            line,
            message: format!("invalid position_id {p:?}"),
        })?),
    };
    let location = match (fields[2].trim(), fields[3].trim()) {
        ("", "") => None,
        (x, y) => Some(Point::new(
            parse_f64(x, "x", line)?,
            parse_f64(y, "y", line)?,
        )),
    };
    let readings = parse_readings(fields[4].trim_end_matches('\r'), line)?;
    let sample = RssSample {
        readings,
        position_id,
        location,
        timestamp,
    };
    sample
        .check()
        .map_err(|message| Error::Parse { line, message })?;
    Ok(sample)
}

pub fn parse_dataset_str(text: &str, kind: DatasetKind) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == CSV_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header {CSV_HEADER:?}, found {h:?}"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    }
    let mut samples = Vec::new();
    let mut line_of = Vec::new();
    for (idx, row) in lines {
        if row.trim().is_empty() {
            continue;
        }
        samples.push(parse_row(row, idx + 1)?);
        line_of.push(idx + 1);
    }
    let positions = validate(&samples, kind).map_err(|(i, message)| Error::Parse {
        line: line_of[i],
        message,
    })?;
    Ok(Dataset {
        samples,
        positions,
        kind,
    })
}

pub fn parse_dataset(path: impl AsRef<Path>, kind: DatasetKind) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset_str(&text, kind)
}

fn write_ap(out: &mut String, ap: &str) -> Result<()> {
    if ap.contains([',', ';', '\n', '\r']) {
        return Err(Error::InvalidDataset(format!(
            "AP identifier {ap:?} cannot be written to CSV"
        )));
    }
    out.push_str(ap);
    if ap.ends_with(':') {
        out.push(':');
    }
    Ok(())
}

pub fn dataset_to_csv(ds: &Dataset) -> Result<String> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = String::with_capacity(64 + ds.len() * 32);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in ds.samples() {
        if s.readings.is_empty() {
            return Err(Error::InvalidDataset("scan has no readings".into()));
        }
        if let Some(t) = s.timestamp {
            out.push_str(&t.to_string());
        }
        out.push(',');
        if let Some(p) = s.position_id {
            out.push_str(&p.to_string());
        }
        out.push(',');
        if let Some(loc) = s.location {
            out.push_str(&format!("{},{}", loc.x, loc.y));
        } else {
            out.push(',');
        }
        out.push(',');
        for (i, r) in s.readings.iter().enumerate() {
            if i > 0 {
                out.push(';');
            }
            write_ap(&mut out, &r.ap)?;
            out.push(':');
            out.push_str(&r.rss.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn serialize_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = dataset_to_csv(ds)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Nearest-neighbour spacing between survey positions, in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacingStats {
    pub min_m: f64,
    pub mean_m: f64,
    pub max_m: f64,
}

pub fn spacing_stats_of(points: &[Point]) -> Result<SpacingStats> {
    if points.len() < 2 {
        return Err(Error::TooFewPositions {
            needed: 2,
            got: points.len(),
        });
    }
    let nearest: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| p.distance(q))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let min_m = nearest.iter().copied().fold(f64::INFINITY, f64::min);
    let max_m = nearest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean_m = nearest.iter().sum::<f64>() / nearest.len() as f64;
    Ok(SpacingStats {
        min_m,
        mean_m,
        max_m,
    })
}

pub fn spacing_stats(ds: &Dataset) -> Result<SpacingStats> {
    let points: Vec<Point> = ds.positions().values().copied().collect();
    spacing_stats_of(&points)
}
