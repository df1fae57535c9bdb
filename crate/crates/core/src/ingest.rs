//! Park-out event input, quality filters and duration statistics.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::geojson::{self, Feature, Geometry};

/// Events shorter than this are not considered real parking.
pub const DEFAULT_MIN_DURATION_S: f64 = 300.0;

/// Upper end of the duration histogram.
pub const DEFAULT_MAX_HISTOGRAM_S: f64 = 86_400.0;

/// Fraction of malformed rows above which a load counts as failed.
pub const MAX_BAD_ROW_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "yesParking")]
    YesParking,
    #[serde(rename = "noParking")]
    NoParking,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::YesParking => "yesParking",
            Label::NoParking => "noParking",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yesParking" => Ok(Label::YesParking),
            "noParking" => Ok(Label::NoParking),
            other => Err(Error::Data(format!("unknown label {other:?}"))),
        }
    }
}

/// One park-out event.
#[derive(Debug, Clone, PartialEq)]
pub struct PoeRecord {
    pub id: String,
    pub position: GeoPoint,
    /// Event time, UTC epoch seconds.
    pub timestamp: i64,
    /// Preceding parking duration in seconds.
    pub duration: f64,
    pub label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line number in the source file, header included.
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct PoeLoad {
    pub records: Vec<PoeRecord>,
    pub errors: Vec<RowError>,
}

impl PoeLoad {
    pub fn bad_row_fraction(&self) -> f64 {
        let total = self.records.len() + self.errors.len();
        if total == 0 {
            0.0
        } else {
            self.errors.len() as f64 / total as f64
        }
    }

    /// Fails when more than [`MAX_BAD_ROW_FRACTION`] of the rows were malformed.
    pub fn into_checked(self) -> Result<Vec<PoeRecord>> {
        if self.bad_row_fraction() > MAX_BAD_ROW_FRACTION {
            let first = &self.errors[0];
            return Err(Error::Data(format!(
                "{} of {} rows malformed (first at line {}: {})",
                self.errors.len(),
                self.errors.len() + self.records.len(),
                first.line,
                first.message
            )));
        }
        for e in &self.errors {
            log::warn!("skipping line {}: {}", e.line, e.message);
        }
        Ok(self.records)
    }
}

pub fn parse_timestamp(s: &str) -> Result<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .map(|dt| dt.and_utc().timestamp())
        .map_err(|_| Error::Data(format!("unparseable timestamp {s:?}")))
}

pub fn format_timestamp(epoch: i64) -> String {
    DateTime::<Utc>::from_timestamp(epoch, 0)
        .map(|dt| dt.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| epoch.to_string())
}

const REQUIRED_COLUMNS: [&str; 5] = ["id", "lat", "lon", "timestamp", "duration_s"];

struct Columns {
    id: usize,
    lat: usize,
    lon: usize,
    timestamp: usize,
    duration: usize,
    label: Option<usize>,
}

fn parse_row(rec: &csv::StringRecord, cols: &Columns) -> Result<PoeRecord> {
    let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
    let num = |i: usize, name: &str| {
        field(i)
            .parse::<f64>()
            .map_err(|_| Error::Data(format!("unparseable {name} {:?}", field(i))))
    };
    let position = GeoPoint::new(num(cols.lat, "lat")?, num(cols.lon, "lon")?)?;
    let duration = num(cols.duration, "duration_s")?;
    if !(duration >= 0.0) || !duration.is_finite() {
        return Err(Error::Data(format!("duration {duration} must be finite and >= 0")));
    }
    let label = match cols.label.map(field) {
        None | Some("") => None,
        Some(s) => Some(s.parse()?),
    };
    Ok(PoeRecord {
        id: field(cols.id).to_owned(),
        position,
        timestamp: parse_timestamp(field(cols.timestamp))?,
        duration,
        label,
    })
}

/// Reads POE CSV from any reader. `source` names the input in errors.
pub fn read_poes<R: Read>(reader: R, source: &Path) -> Result<PoeLoad> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let missing: Vec<&str> = REQUIRED_COLUMNS.iter().copied().filter(|c| find(c).is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::input(source, format!("missing required columns: {}", missing.join(", "))));
    }
    let cols = Columns {
        id: find("id").unwrap(),
        lat: find("lat").unwrap(),
        lon: find("lon").unwrap(),
        timestamp: find("timestamp").unwrap(),
        duration: find("duration_s").unwrap(),
        label: find("label"),
    };
    let mut load = PoeLoad::default();
    for row in rdr.records() {
        match row {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line());
                match parse_row(&rec, &cols) {
                    Ok(r) => load.records.push(r),
                    Err(e) => load.errors.push(RowError {
                        line,
                        message: e.to_string(),
                    }),
                }
            }
            Err(e) => load.errors.push(RowError {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            }),
        }
    }
    Ok(load)
}

pub fn load_poes(path: &Path) -> Result<PoeLoad> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_poes(file, path)
}

pub fn write_poes<W: Write>(writer: W, poes: &[PoeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "lat", "lon", "timestamp", "duration_s", "label"])?;
    for p in poes {
        w.write_record([
            p.id.clone(),
            p.position.lat.to_string(),
            p.position.lon.to_string(),
            format_timestamp(p.timestamp),
            p.duration.to_string(),
            p.label.map(|l| l.as_str().to_owned()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn save_poes(path: &Path, poes: &[PoeRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_poes(std::io::BufWriter::new(file), poes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneType {
    NoParking,
    Parking,
    Building,
    Park,
    School,
    PrivateYard,
    OtherUnfeasible,
}

impl ZoneType {
    /// Zones in which a car cannot be parked on-street at all.
    pub fn is_unfeasible(self) -> bool {
        matches!(
            self,
            ZoneType::Building | ZoneType::Park | ZoneType::School | ZoneType::PrivateYard | ZoneType::OtherUnfeasible
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ZoneType::NoParking => "no_parking",
            ZoneType::Parking => "parking",
            ZoneType::Building => "building",
            ZoneType::Park => "park",
            ZoneType::School => "school",
            ZoneType::PrivateYard => "private_yard",
            ZoneType::OtherUnfeasible => "other_unfeasible",
        }
    }
}

impl FromStr for ZoneType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "no_parking" => ZoneType::NoParking,
            "parking" => ZoneType::Parking,
            "building" => ZoneType::Building,
            "park" => ZoneType::Park,
            "school" => ZoneType::School,
            "private_yard" => ZoneType::PrivateYard,
            "other_unfeasible" => ZoneType::OtherUnfeasible,
            other => return Err(Error::Data(format!("unknown zone_type {other:?}"))),
        })
    }
}

/// A map polygon; rings after the first are holes (even-odd rule).
#[derive(Debug, Clone, PartialEq)]
pub struct ZonePolygon {
    pub rings: Vec<Vec<GeoPoint>>,
    pub zone_type: ZoneType,
    /// Finer class such as `bus_lane`, `gas_station`, `taxi_stand`, `garage`.
    pub kind: Option<String>,
}

impl ZonePolygon {
    pub fn new(rings: Vec<Vec<GeoPoint>>, zone_type: ZoneType, kind: Option<String>) -> Result<Self> {
        let z = ZonePolygon { rings, zone_type, kind };
        z.validate()?;
        Ok(z)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rings.is_empty() {
            return Err(Error::InvalidPolygon("polygon without rings".into()));
        }
        for (ri, ring) in self.rings.iter().enumerate() {
            if ring.len() < 4 {
                return Err(Error::InvalidPolygon(format!("ring {ri} has {} points, need >= 4", ring.len())));
            }
            if ring.first() != ring.last() {
                return Err(Error::InvalidPolygon(format!("ring {ri} is not closed")));
            }
            if ring_self_intersects(ring) {
                return Err(Error::InvalidPolygon(format!("ring {ri} self-intersects")));
            }
        }
        Ok(())
    }

    /// Strict interior test; points on an edge are outside.
    pub fn contains(&self, p: GeoPoint) -> bool {
        if self.rings.iter().any(|r| on_ring_boundary(p, r)) {
            return false;
        }
        self.rings.iter().filter(|r| ray_crossings_odd(p, r)).count() % 2 == 1
    }

    pub fn to_feature(&self) -> Feature {
        let f = Feature::new(Geometry::Polygon(self.rings.clone())).with("zone_type", self.zone_type.as_str());
        match &self.kind {
            Some(k) => f.with("kind", k.as_str()),
            None => f,
        }
    }
}

fn orient(a: GeoPoint, b: GeoPoint, c: GeoPoint) -> f64 {
    (b.lon - a.lon) * (c.lat - a.lat) - (b.lat - a.lat) * (c.lon - a.lon)
}

fn on_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> bool {
    orient(a, b, p) == 0.0
        && p.lon >= a.lon.min(b.lon)
        && p.lon <= a.lon.max(b.lon)
        && p.lat >= a.lat.min(b.lat)
        && p.lat <= a.lat.max(b.lat)
}

fn on_ring_boundary(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    ring.windows(2).any(|w| on_segment(p, w[0], w[1]))
}

/// Even-odd ray cast toward +lon.
fn ray_crossings_odd(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if p.lon < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn segments_intersect(a: GeoPoint, b: GeoPoint, c: GeoPoint, d: GeoPoint) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

fn ring_self_intersects(ring: &[GeoPoint]) -> bool {
    let n = ring.len() - 1;
    for i in 0..n {
        for j in (i + 1)..n {
            // Edges sharing a vertex touch by construction.
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return true;
            }
        }
    }
    false
}

/// Reads zone polygons from a GeoJSON FeatureCollection with a `zone_type` property.
/// Non-polygon features are skipped with a warning.
pub fn load_zones(path: &Path) -> Result<Vec<ZonePolygon>> {
    zones_from_features(&geojson::read(path)?, path)
}

pub fn zones_from_features(features: &[Feature], source: &Path) -> Result<Vec<ZonePolygon>> {
    let mut zones = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let Geometry::Polygon(rings) = &f.geometry else {
            log::warn!("{}: feature {i} is not a polygon, skipped", source.display());
            continue;
        };
        let zone_type: ZoneType = f
            .str_prop("zone_type")
            .ok_or_else(|| Error::input(source, format!("feature {i}: missing zone_type")))?
            .parse()
            .map_err(|e: Error| Error::input(source, format!("feature {i}: {e}")))?;
        let kind = f.str_prop("kind").map(str::to_owned);
        let zone = ZonePolygon::new(rings.clone(), zone_type, kind)
            .map_err(|e| Error::input(source, format!("feature {i}: {e}")))?;
        zones.push(zone);
    }
    Ok(zones)
}

/// Keeps events lasting at least `min_duration` seconds.
pub fn filter_short_durations(poes: Vec<PoeRecord>, min_duration: f64) -> (Vec<PoeRecord>, Vec<PoeRecord>) {
    poes.into_iter().partition(|p| p.duration >= min_duration)
}

pub fn in_unfeasible_zone(p: GeoPoint, zones: &[ZonePolygon]) -> bool {
    zones.iter().any(|z| z.zone_type.is_unfeasible() && z.contains(p))
}

/// Drops events strictly inside any unfeasible zone.
pub fn filter_unfeasible_zones(
    poes: Vec<PoeRecord>,
    zones: &[ZonePolygon],
) -> Result<(Vec<PoeRecord>, Vec<PoeRecord>)> {
    for z in zones {
        z.validate()?;
    }
    Ok(poes.into_iter().partition(|p| !in_unfeasible_zone(p.position, zones)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub total_in: usize,
    pub dropped_short_duration: usize,
    pub dropped_in_unfeasible_zone: usize,
    pub retained: usize,
}

impl FilterReport {
    pub fn reconciles(&self) -> bool {
        self.total_in == self.dropped_short_duration + self.dropped_in_unfeasible_zone + self.retained
    }
}

/// Short-duration filter, then zone filter. A record failing both counts as short.
pub fn apply_filters(
    poes: Vec<PoeRecord>,
    zones: &[ZonePolygon],
    min_duration: f64,
) -> Result<(Vec<PoeRecord>, FilterReport)> {
    let total_in = poes.len();
    let (kept, short) = filter_short_durations(poes, min_duration);
    let (retained, in_zone) = filter_unfeasible_zones(kept, zones)?;
    let report = FilterReport {
        total_in,
        dropped_short_duration: short.len(),
        dropped_in_unfeasible_zone: in_zone.len(),
        retained: retained.len(),
    };
    debug_assert!(report.reconciles());
    Ok((retained, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DurationHistogram {
    pub bin_width: f64,
    pub max_duration: f64,
    /// `(bin_start, count)`, covering `[0, max_duration]`; the last bin is closed.
    pub bins: Vec<(f64, usize)>,
    /// Records longer than `max_duration`.
    pub overflow: usize,
}

impl DurationHistogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.1).sum::<usize>() + self.overflow
    }
}

pub fn duration_histogram(poes: &[PoeRecord], bin_width: f64, max_duration: f64) -> Result<DurationHistogram> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::InvalidArgument(format!("bin width {bin_width} must be positive")));
    }
    if !(max_duration > 0.0) || !max_duration.is_finite() {
        return Err(Error::InvalidArgument(format!("max duration {max_duration} must be positive")));
    }
    let n_bins = (max_duration / bin_width).ceil() as usize;
    let mut counts = vec![0usize; n_bins];
    let mut overflow = 0;
    for p in poes {
        if p.duration > max_duration {
            overflow += 1;
        } else {
            let i = ((p.duration / bin_width).floor() as usize).min(n_bins - 1);
            counts[i] += 1;
        }
    }
    Ok(DurationHistogram {
        bin_width,
        max_duration,
        bins: counts.into_iter().enumerate().map(|(i, c)| (i as f64 * bin_width, c)).collect(),
        overflow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poe(id: &str, lat: f64, lon: f64, duration: f64) -> PoeRecord {
        PoeRecord {
            id: id.into(),
            position: GeoPoint { lat, lon },
            timestamp: 1_486_000_000,
            duration,
            label: None,
        }
    }

    fn square(lat0: f64, lon0: f64, size: f64, zone_type: ZoneType) -> ZonePolygon {
        let p = |a: f64, b: f64| GeoPoint { lat: lat0 + a, lon: lon0 + b };
        ZonePolygon::new(
            vec![vec![p(0.0, 0.0), p(0.0, size), p(size, size), p(size, 0.0), p(0.0, 0.0)]],
            zone_type,
            None,
        )
        .unwrap()
    }

    fn read_str(s: &str) -> Result<PoeLoad> {
        read_poes(s.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn empty_file_with_header_loads_nothing() {
        let load = read_str("id,lat,lon,timestamp,duration_s\n").unwrap();
        assert!(load.records.is_empty() && load.errors.is_empty());
    }

    #[test]
    fn bad_latitude_is_a_row_error() {
        let load = read_str("id,lat,lon,timestamp,duration_s\na,91,13,2017-02-01T10:00:00Z,600\n").unwrap();
        assert!(load.records.is_empty());
        assert_eq!(load.errors.len(), 1);
        assert_eq!(load.errors[0].line, 2);
        assert!(load.into_checked().is_err());
    }

    #[test]
    fn missing_columns_fail_the_load() {
        let err = read_str("id,lat,lon,duration_s\n").unwrap_err();
        assert!(err.to_string().contains("timestamp"), "{err}");
    }

    #[test]
    fn three_rows_round_trip() {
        let text = "id,lat,lon,timestamp,duration_s,label\n\
                    a,52.52,13.405,2017-02-01T10:00:00Z,600,yesParking\n\
                    b,52.5201,13.4051,2017-03-01T11:30:15Z,299.5,noParking\n\
                    c,52.5202,13.4052,2017-07-31T23:59:59Z,86400,\n";
        let load = read_str(text).unwrap();
        assert_eq!(load.records.len(), 3);
        assert_eq!(load.records[1].label, Some(Label::NoParking));
        assert_eq!(load.records[2].label, None);
        let mut out = Vec::new();
        write_poes(&mut out, &load.records).unwrap();
        assert_eq!(String::from_utf8(out.clone()).unwrap(), text);
        let again = read_poes(out.as_slice(), Path::new("mem.csv")).unwrap();
        assert_eq!(again.records, load.records);
    }

    #[test]
    fn naive_timestamps_are_utc() {
        assert_eq!(parse_timestamp("2017-02-01T10:00:00").unwrap(), parse_timestamp("2017-02-01T10:00:00Z").unwrap());
        assert_eq!(parse_timestamp("2017-02-01T12:00:00+02:00").unwrap(), parse_timestamp("2017-02-01T10:00:00Z").unwrap());
        assert!(parse_timestamp("yesterday").is_err());
    }

    #[test]
    fn five_minute_boundary() {
        let poes = vec![poe("a", 0.0, 0.0, 299.0), poe("b", 0.0, 0.0, 300.0), poe("c", 0.0, 0.0, 3600.0)];
        let (kept, dropped) = filter_short_durations(poes, DEFAULT_MIN_DURATION_S);
        assert_eq!(kept.iter().map(|p| p.id.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        assert_eq!(dropped[0].id, "a");
        let (_, dropped) = filter_short_durations(vec![poe("x", 0.0, 0.0, 301.0)], 300.0);
        assert!(dropped.is_empty());
    }

    #[test]
    fn zone_filter_examples() {
        let park = square(52.0, 13.0, 0.001, ZoneType::Park);
        let bus = square(52.01, 13.01, 0.001, ZoneType::NoParking);
        let poes = vec![
            poe("in_park", 52.0005, 13.0005, 600.0),
            poe("street", 52.005, 13.005, 600.0),
            poe("bus", 52.0105, 13.0105, 600.0),
            poe("edge", 52.0, 13.0005, 600.0),
        ];
        let (kept, dropped) = filter_unfeasible_zones(poes.clone(), &[park, bus]).unwrap();
        assert_eq!(dropped.iter().map(|p| p.id.as_str()).collect::<Vec<_>>(), ["in_park"]);
        assert_eq!(kept.len(), 3);
        let (kept, dropped) = filter_unfeasible_zones(poes, &[]).unwrap();
        assert_eq!((kept.len(), dropped.len()), (4, 0));
    }

    #[test]
    fn polygon_validation() {
        let p = |a: f64, b: f64| GeoPoint { lat: a, lon: b };
        let open = vec![p(0.0, 0.0), p(0.0, 1.0), p(1.0, 1.0), p(1.0, 0.0)];
        assert!(ZonePolygon::new(vec![open], ZoneType::Park, None).is_err());
        let short = vec![p(0.0, 0.0), p(0.0, 1.0), p(0.0, 0.0)];
        assert!(ZonePolygon::new(vec![short], ZoneType::Park, None).is_err());
        let bowtie = vec![p(0.0, 0.0), p(1.0, 1.0), p(1.0, 0.0), p(0.0, 1.0), p(0.0, 0.0)];
        assert!(ZonePolygon::new(vec![bowtie], ZoneType::Park, None).is_err());
    }

    #[test]
    fn holes_are_excluded() {
        let p = |a: f64, b: f64| GeoPoint { lat: a, lon: b };
        let outer = vec![p(0.0, 0.0), p(0.0, 4.0), p(4.0, 4.0), p(4.0, 0.0), p(0.0, 0.0)];
        let hole = vec![p(1.0, 1.0), p(1.0, 3.0), p(3.0, 3.0), p(3.0, 1.0), p(1.0, 1.0)];
        let z = ZonePolygon::new(vec![outer, hole], ZoneType::School, None).unwrap();
        assert!(z.contains(p(0.5, 0.5)));
        assert!(!z.contains(p(2.0, 2.0)));
    }

    #[test]
    fn histogram_examples() {
        let h = duration_histogram(&[poe("a", 0.0, 0.0, 600.0)], 300.0, DEFAULT_MAX_HISTOGRAM_S).unwrap();
        assert_eq!(h.bins.len(), 288);
        assert_eq!(h.bins[2], (600.0, 1));
        assert_eq!(h.total(), 1);
        let poes = vec![poe("a", 0.0, 0.0, 0.0), poe("b", 0.0, 0.0, 86_400.0), poe("c", 0.0, 0.0, 90_000.0)];
        let h = duration_histogram(&poes, 300.0, 86_400.0).unwrap();
        assert_eq!(h.bins[0].1, 1);
        assert_eq!(h.bins[287].1, 1);
        assert_eq!(h.overflow, 1);
        assert!(duration_histogram(&poes, 0.0, 86_400.0).is_err());
    }

    #[test]
    fn log_normal_durations_have_a_decaying_tail() {
        use rand_distr::{Distribution, LogNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dist = LogNormal::new(3600f64.ln(), 1.0).unwrap();
        let poes: Vec<_> = (0..50_000).map(|i| poe(&i.to_string(), 0.0, 0.0, dist.sample(&mut rng))).collect();
        let h = duration_histogram(&poes, 1800.0, DEFAULT_MAX_HISTOGRAM_S).unwrap();
        assert_eq!(h.total(), poes.len());
        let counts: Vec<usize> = h.bins.iter().map(|b| b.1).collect();
        let mode = counts.iter().enumerate().max_by_key(|(_, c)| **c).unwrap().0;
        assert!(h.bins[mode].0 < 7200.0);
        // Coarse bins past the mode must decrease.
        let tail: Vec<usize> = counts[mode..].chunks(4).map(|c| c.iter().sum()).collect();
        assert!(tail.windows(2).all(|w| w[0] >= w[1]), "{tail:?}");
    }

    /// Independent oracle: a point is strictly inside a triangle iff all three
    /// edge cross products share a sign.
    fn triangle_oracle(p: GeoPoint, t: [GeoPoint; 3]) -> bool {
        let s = |a: GeoPoint, b: GeoPoint| (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
        let (d1, d2, d3) = (s(t[0], t[1]), s(t[1], t[2]), s(t[2], t[0]));
        (d1 > 0.0 && d2 > 0.0 && d3 > 0.0) || (d1 < 0.0 && d2 < 0.0 && d3 < 0.0)
    }

    #[test]
    fn point_in_triangle_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 1000 {
            let mut v = || GeoPoint {
                lat: rng.random_range(52.0..52.01),
                lon: rng.random_range(13.0..13.01),
            };
            let t = [v(), v(), v()];
            let p = v();
            let Ok(zone) = ZonePolygon::new(vec![vec![t[0], t[1], t[2], t[0]]], ZoneType::Park, None) else {
                continue;
            };
            assert_eq!(zone.contains(p), triangle_oracle(p, t), "{p:?} {t:?}");
            checked += 1;
        }
    }

    fn arb_poes() -> impl Strategy<Value = Vec<PoeRecord>> {
        prop::collection::vec((52.0..52.004f64, 13.0..13.004f64, 0.0..2000.0f64), 0..60).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (lat, lon, d))| poe(&i.to_string(), lat, lon, d))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn filters_idempotent_and_order_independent(poes in arb_poes()) {
            let zones = vec![
                square(52.0, 13.0, 0.002, ZoneType::Park),
                square(52.002, 13.002, 0.001, ZoneType::PrivateYard),
                square(52.001, 13.003, 0.001, ZoneType::NoParking),
            ];
            let (a, _) = filter_short_durations(poes.clone(), 300.0);
            let (a2, d2) = filter_short_durations(a.clone(), 300.0);
            prop_assert_eq!(&a2, &a);
            prop_assert!(d2.is_empty());
            let (ab, _) = filter_unfeasible_zones(a, &zones).unwrap();
            let (ab2, _) = filter_unfeasible_zones(ab.clone(), &zones).unwrap();
            prop_assert_eq!(&ab2, &ab);
            let (b, _) = filter_unfeasible_zones(poes.clone(), &zones).unwrap();
            let (ba, _) = filter_short_durations(b, 300.0);
            prop_assert_eq!(&ab, &ba);
            let (kept, report) = apply_filters(poes, &zones, 300.0).unwrap();
            prop_assert!(report.reconciles());
            prop_assert_eq!(kept, ab);
        }
    }
}
