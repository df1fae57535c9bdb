//! Synthetic cities with planted ground truth.
//!
//! `grid-city` is a rectangular street grid whose sections carry valid parking
//! strips between forbidden intervals (junction buffers, driveways, crossings,
//! bus stops, no-stopping stretches, taxi stands), plus off-street garages and
//! gas stations. `crossing-street` is a single street with two strips either
//! side of a pedestrian crossing. Labels come from the planted geometry; GPS
//! noise is added afterwards.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, LocalFrame, LocalPoint};
use crate::geojson::{self, round_coord, Feature, Geometry};
use crate::ingest::{save_poes, Label, PoeRecord, ZoneType};

/// 2019-01-01T00:00:00Z.
const BASE_TIMESTAMP: i64 = 1_546_300_800;
const TIMESTAMP_SPAN_S: i64 = 90 * 86_400;
/// Half-width of the street band used for ground-truth and zone polygons.
const BAND_HALF_WIDTH_M: f64 = 10.0;
/// Planted pieces shorter than this are absorbed into the forbidden set.
const MIN_STRIP_M: f64 = 5.0;

pub const ROADS_FILE: &str = "roads.geojson";
pub const ZONES_FILE: &str = "zones.geojson";
pub const GT_FILE: &str = "gt.geojson";
pub const POES_FILE: &str = "poes.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    GridCity,
    CrossingStreet,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid-city" => Ok(Preset::GridCity),
            "crossing-street" => Ok(Preset::CrossingStreet),
            other => Err(Error::InvalidArgument(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationModel {
    pub mu_log: f64,
    pub sigma_log: f64,
    /// Share of short stops drawn uniformly from [30 s, 300 s).
    pub short_fraction: f64,
}

impl Default for DurationModel {
    fn default() -> Self {
        DurationModel {
            mu_log: 3600f64.ln(),
            sigma_log: 1.0,
            short_fraction: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub preset: Preset,
    pub seed: u64,
    pub n: usize,
    /// GPS noise standard deviation per axis.
    pub noise_m: f64,
    /// Share of `yesParking` records.
    pub yes_fraction: f64,
    pub duration: DurationModel,
    /// Center of the generated area.
    pub origin: GeoPoint,
    pub rows: usize,
    pub cols: usize,
    pub block_m: f64,
    pub junction_buffer_m: f64,
    /// Distance of parked cars from the road centerline.
    pub curb_offset_m: f64,
    /// Share of `noParking` records placed off-street (garages, gas stations).
    pub off_street_fraction: f64,
    pub street_m: f64,
    pub gap_m: f64,
    /// Demand within a strip: uniform when `None`, otherwise a normal profile
    /// with this standard deviation centered on the strip, truncated to it.
    pub demand_sd_m: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::preset(Preset::GridCity)
    }
}

impl SynthConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = SynthConfig {
            preset,
            seed: 17,
            n: 10_000,
            noise_m: 4.0,
            yes_fraction: 0.837,
            duration: DurationModel::default(),
            origin: GeoPoint { lat: 52.51, lon: 13.39 },
            rows: 8,
            cols: 8,
            block_m: 100.0,
            junction_buffer_m: 12.0,
            curb_offset_m: 3.5,
            off_street_fraction: 0.35,
            street_m: 120.0,
            gap_m: 8.0,
            demand_sd_m: None,
        };
        match preset {
            Preset::GridCity => base,
            Preset::CrossingStreet => SynthConfig {
                n: 1_000,
                noise_m: 3.0,
                yes_fraction: 1.0,
                demand_sd_m: Some(10.0),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !(self.noise_m >= 0.0) {
            return bad(format!("noise_m {} must be >= 0", self.noise_m));
        }
        if !(0.0..=1.0).contains(&self.yes_fraction) {
            return bad(format!("yes_fraction {} not in [0, 1]", self.yes_fraction));
        }
        if !(0.0..1.0).contains(&self.duration.short_fraction) {
            return bad(format!("short_fraction {} not in [0, 1)", self.duration.short_fraction));
        }
        if !(self.duration.sigma_log > 0.0) {
            return bad("duration sigma_log must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.off_street_fraction) {
            return bad(format!("off_street_fraction {} not in [0, 1]", self.off_street_fraction));
        }
        if self.demand_sd_m.is_some_and(|s| !(s > 0.0)) {
            return bad("demand_sd_m must be positive".into());
        }
        match self.preset {
            Preset::GridCity => {
                if self.rows < 2 || self.cols < 2 {
                    return bad("grid needs at least 2 rows and 2 columns".into());
                }
                if !(self.block_m > 2.0 * self.junction_buffer_m + MIN_STRIP_M) {
                    return Err(Error::Data(format!(
                        "block {} m leaves no room for strips between {} m junction buffers",
                        self.block_m, self.junction_buffer_m
                    )));
                }
                if self.block_m < 4.0 * BAND_HALF_WIDTH_M + 20.0 {
                    return Err(Error::Data(format!("block {} m too short for off-street spots", self.block_m)));
                }
            }
            Preset::CrossingStreet => {
                if !(self.gap_m >= 0.0) || !(self.street_m > self.gap_m + 2.0 * MIN_STRIP_M) {
                    return Err(Error::Data(format!(
                        "street {} m cannot hold a {} m gap and two strips",
                        self.street_m, self.gap_m
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub label: Label,
    pub kind: String,
}

impl Interval {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

/// One straight junction-to-junction piece of a planted road.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannedSection {
    pub road_id: String,
    pub a: LocalPoint,
    pub b: LocalPoint,
    pub length: f64,
    /// Non-overlapping, sorted, covering [0, length].
    pub intervals: Vec<Interval>,
}

impl PlannedSection {
    fn direction(&self) -> LocalPoint {
        self.b.sub(self.a).scale(1.0 / self.length)
    }

    pub fn point_at(&self, t: f64, lateral: f64) -> LocalPoint {
        let d = self.direction();
        let normal = LocalPoint::new(-d.y, d.x);
        self.a.add(d.scale(t)).add(normal.scale(lateral))
    }

    pub fn valid_strips(&self) -> impl Iterator<Item = &Interval> {
        self.intervals.iter().filter(|i| i.label == Label::YesParking)
    }

    fn band(&self, start: f64, end: f64) -> Vec<LocalPoint> {
        let w = BAND_HALF_WIDTH_M;
        vec![
            self.point_at(start, -w),
            self.point_at(end, -w),
            self.point_at(end, w),
            self.point_at(start, w),
            self.point_at(start, -w),
        ]
    }
}

/// Off-street area: a garage or gas station footprint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffStreetSpot {
    pub kind: String,
    pub min: LocalPoint,
    pub max: LocalPoint,
}

impl OffStreetSpot {
    fn ring(&self) -> Vec<LocalPoint> {
        let (a, b) = (self.min, self.max);
        vec![a, LocalPoint::new(b.x, a.y), b, LocalPoint::new(a.x, b.y), a]
    }

    fn area(&self) -> f64 {
        (self.max.x - self.min.x) * (self.max.y - self.min.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRoad {
    pub road_id: String,
    pub highway: &'static str,
    pub polyline: Vec<LocalPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub frame: LocalFrame,
    pub roads: Vec<SynthRoad>,
    pub sections: Vec<PlannedSection>,
    pub spots: Vec<OffStreetSpot>,
    /// Unfeasible footprints (buildings, parks) with their zone type.
    pub blocks: Vec<(ZoneType, OffStreetSpot)>,
    pub poes: Vec<PoeRecord>,
    /// Positions before noise, aligned with `poes`.
    pub true_positions: Vec<LocalPoint>,
}

fn ring_geo(frame: &LocalFrame, ring: &[LocalPoint]) -> Vec<GeoPoint> {
    ring.iter().map(|p| rounded(frame.from_local(*p))).collect()
}

fn rounded(p: GeoPoint) -> GeoPoint {
    GeoPoint {
        lat: round_coord(p.lat),
        lon: round_coord(p.lon),
    }
}

impl SynthDataset {
    pub fn road_features(&self) -> Vec<Feature> {
        self.roads
            .iter()
            .map(|r| {
                Feature::new(Geometry::LineString(r.polyline.iter().map(|p| rounded(self.frame.from_local(*p))).collect()))
                    .with("road_id", r.road_id.as_str())
                    .with("highway", r.highway)
                    .with("oneway", false)
            })
            .collect()
    }

    /// Mapped no-parking zones, garages, gas stations and unfeasible blocks.
    pub fn zone_features(&self) -> Vec<Feature> {
        let mut out = Vec::new();
        for s in &self.sections {
            for i in s.intervals.iter().filter(|i| i.label == Label::NoParking) {
                let mapped = match i.kind.as_str() {
                    "bus_stop" => Some("bus_lane"),
                    "no_stopping" => Some("no_stopping"),
                    "taxi_stand" => Some("taxi_stand"),
                    "crossing" if self.config.preset == Preset::CrossingStreet => Some("crossing"),
                    _ => None,
                };
                if let Some(kind) = mapped {
                    out.push(
                        Feature::new(Geometry::Polygon(vec![ring_geo(&self.frame, &s.band(i.start, i.end))]))
                            .with("zone_type", ZoneType::NoParking.as_str())
                            .with("kind", kind),
                    );
                }
            }
        }
        for spot in &self.spots {
            let zone_type = if spot.kind == "gas_station" { ZoneType::NoParking } else { ZoneType::Parking };
            out.push(
                Feature::new(Geometry::Polygon(vec![ring_geo(&self.frame, &spot.ring())]))
                    .with("zone_type", zone_type.as_str())
                    .with("kind", spot.kind.as_str()),
            );
        }
        for (zt, b) in &self.blocks {
            out.push(Feature::new(Geometry::Polygon(vec![ring_geo(&self.frame, &b.ring())])).with("zone_type", zt.as_str()));
        }
        out
    }

    /// Ground truth: one polygon per planted interval and per off-street spot.
    pub fn gt_features(&self) -> Vec<Feature> {
        let mut out = Vec::new();
        for s in &self.sections {
            for i in &s.intervals {
                out.push(
                    Feature::new(Geometry::Polygon(vec![ring_geo(&self.frame, &s.band(i.start, i.end))]))
                        .with("label", i.label.as_str())
                        .with("kind", i.kind.as_str())
                        .with("road_id", s.road_id.as_str())
                        .with("start_m", i.start)
                        .with("end_m", i.end),
                );
            }
        }
        for spot in &self.spots {
            out.push(
                Feature::new(Geometry::Polygon(vec![ring_geo(&self.frame, &spot.ring())]))
                    .with("label", Label::NoParking.as_str())
                    .with("kind", spot.kind.as_str()),
            );
        }
        out
    }

    /// Writes roads, zones, ground truth, POEs and a manifest with file hashes.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths: Vec<PathBuf> = [ROADS_FILE, ZONES_FILE, GT_FILE, POES_FILE].iter().map(|f| dir.join(f)).collect();
        geojson::write(&paths[0], &self.road_features())?;
        geojson::write(&paths[1], &self.zone_features())?;
        geojson::write(&paths[2], &self.gt_features())?;
        save_poes(&paths[3], &self.poes)?;
        let mut files = serde_json::Map::new();
        for p in &paths {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_owned();
            files.insert(name, json!(sha256_file(p)?));
        }
        let yes = self.poes.iter().filter(|p| p.label == Some(Label::YesParking)).count();
        let manifest = json!({
            "generator": "parkgrid synth",
            "config": self.config,
            "seed": self.config.seed,
            "counts": {
                "poes": self.poes.len(),
                "yesParking": yes,
                "noParking": self.poes.len() - yes,
                "roads": self.roads.len(),
                "sections": self.sections.len(),
            },
            "files": Value::Object(files),
        });
        let manifest_path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
        let mut all = paths;
        all.push(manifest_path);
        Ok(all)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Sorted union of `(start, end)` pieces, clipped to [0, len].
fn merge(mut pieces: Vec<(f64, f64, String)>, len: f64) -> Vec<(f64, f64, String)> {
    pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64, String)> = Vec::new();
    for (s, e, k) in pieces {
        let (s, e) = (s.max(0.0), e.min(len));
        match out.last_mut() {
            Some(last) if s <= last.1 => {
                if e > last.1 {
                    last.1 = e;
                }
            }
            _ => out.push((s, e, k)),
        }
    }
    out
}

/// Fills the gaps between forbidden pieces with valid strips; gaps shorter
/// than the minimum strip become forbidden remnants.
fn fill_intervals(forbidden: Vec<(f64, f64, String)>, len: f64) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut cursor = 0.0;
    let push_gap = |out: &mut Vec<Interval>, s: f64, e: f64| {
        if e - s <= 0.0 {
            return;
        }
        let (label, kind) = if e - s >= MIN_STRIP_M {
            (Label::YesParking, "strip")
        } else {
            (Label::NoParking, "remnant")
        };
        out.push(Interval {
            start: s,
            end: e,
            label,
            kind: kind.into(),
        });
    };
    for (s, e, kind) in merge(forbidden, len) {
        push_gap(&mut out, cursor, s);
        out.push(Interval {
            start: s,
            end: e,
            label: Label::NoParking,
            kind,
        });
        cursor = e;
    }
    push_gap(&mut out, cursor, len);
    out
}

fn plan_grid_section(rng: &mut ChaCha8Rng, cfg: &SynthConfig, road_id: &str, primary: bool, a: LocalPoint, b: LocalPoint) -> PlannedSection {
    let len = a.distance(b);
    let jb = cfg.junction_buffer_m;
    let mut forbidden = vec![(0.0, jb, "junction_buffer".to_owned()), (len - jb, len, "junction_buffer".to_owned())];
    let mut place = |rng: &mut ChaCha8Rng, width: f64, kind: &str| {
        let room = len - 2.0 * jb - width;
        if room > 0.0 {
            let s = jb + rng.random_range(0.0..room);
            forbidden.push((s, s + width, kind.to_owned()));
        }
    };
    for _ in 0..rng.random_range(0..=2) {
        place(rng, 6.0, "driveway");
    }
    if rng.random_bool(0.3) {
        place(rng, 8.0, "crossing");
    }
    if rng.random_bool(if primary { 0.25 } else { 0.08 }) {
        place(rng, 20.0, "bus_stop");
    }
    if rng.random_bool(0.4) {
        let w = rng.random_range(15.0..30.0);
        place(rng, w, "no_stopping");
    }
    if rng.random_bool(0.05) {
        place(rng, 15.0, "taxi_stand");
    }
    PlannedSection {
        road_id: road_id.to_owned(),
        a,
        b,
        length: len,
        intervals: fill_intervals(forbidden, len),
    }
}

struct Layout {
    roads: Vec<SynthRoad>,
    sections: Vec<PlannedSection>,
    spots: Vec<OffStreetSpot>,
    blocks: Vec<(ZoneType, OffStreetSpot)>,
}

fn grid_layout(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Layout {
    let (rows, cols, block) = (cfg.rows, cfg.cols, cfg.block_m);
    let x0 = -((cols - 1) as f64) * block / 2.0;
    let y0 = -((rows - 1) as f64) * block / 2.0;
    let node = |r: usize, c: usize| LocalPoint::new(x0 + c as f64 * block, y0 + r as f64 * block);
    let mut roads = Vec::new();
    let mut sections = Vec::new();
    for r in 0..rows {
        let primary = r == rows / 2;
        let id = format!("row-{r}");
        let pts: Vec<LocalPoint> = (0..cols).map(|c| node(r, c)).collect();
        for w in pts.windows(2) {
            sections.push(plan_grid_section(rng, cfg, &id, primary, w[0], w[1]));
        }
        roads.push(SynthRoad {
            road_id: id,
            highway: if primary { "primary" } else { "residential" },
            polyline: pts,
        });
    }
    for c in 0..cols {
        let primary = c == cols / 2;
        let id = format!("col-{c}");
        let pts: Vec<LocalPoint> = (0..rows).map(|r| node(r, c)).collect();
        for w in pts.windows(2) {
            sections.push(plan_grid_section(rng, cfg, &id, primary, w[0], w[1]));
        }
        roads.push(SynthRoad {
            road_id: id,
            highway: if primary { "primary" } else { "residential" },
            polyline: pts,
        });
    }
    // Freeway south of the grid, not connected to it and without parking.
    let fy = y0 - 1.5 * block;
    let freeway: Vec<LocalPoint> = (0..cols).map(|c| LocalPoint::new(x0 + c as f64 * block, fy)).collect();
    let flen = freeway[0].distance(freeway[cols - 1]);
    sections.push(PlannedSection {
        road_id: "freeway".into(),
        a: freeway[0],
        b: freeway[cols - 1],
        length: flen,
        intervals: vec![Interval {
            start: 0.0,
            end: flen,
            label: Label::NoParking,
            kind: "freeway".into(),
        }],
    });
    roads.push(SynthRoad {
        road_id: "freeway".into(),
        highway: "trunk",
        polyline: freeway,
    });

    let mut spots = Vec::new();
    let mut blocks = Vec::new();
    let inset = 2.0 * BAND_HALF_WIDTH_M;
    let gas_blocks = [(0, 0), (rows - 2, cols - 2)];
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let lo = node(r, c);
            let hi = node(r + 1, c + 1);
            let inner_lo = LocalPoint::new(lo.x + inset, lo.y + inset);
            let inner_hi = LocalPoint::new(hi.x - inset, hi.y - inset);
            let side = (inner_hi.x - inner_lo.x).min(inner_hi.y - inner_lo.y);
            let spot_w = (side / 3.0).min(20.0);
            if gas_blocks.contains(&(r, c)) {
                spots.push(OffStreetSpot {
                    kind: "gas_station".into(),
                    min: inner_lo,
                    max: LocalPoint::new(inner_lo.x + spot_w, inner_lo.y + spot_w),
                });
            } else if rng.random_bool(0.15) {
                spots.push(OffStreetSpot {
                    kind: "garage".into(),
                    min: LocalPoint::new(inner_hi.x - spot_w, inner_lo.y),
                    max: LocalPoint::new(inner_hi.x, inner_lo.y + spot_w),
                });
            }
            let zt = if rng.random_bool(0.1) { ZoneType::Park } else { ZoneType::Building };
            blocks.push((
                zt,
                OffStreetSpot {
                    kind: zt.as_str().into(),
                    min: LocalPoint::new(inner_lo.x + spot_w + 2.0, inner_hi.y - spot_w),
                    max: LocalPoint::new(inner_hi.x - spot_w - 2.0, inner_hi.y),
                },
            ));
        }
    }
    Layout {
        roads,
        sections,
        spots,
        blocks,
    }
}

fn crossing_layout(cfg: &SynthConfig) -> Layout {
    let half = cfg.street_m / 2.0;
    let a = LocalPoint::new(-half, 0.0);
    let b = LocalPoint::new(half, 0.0);
    let g0 = half - cfg.gap_m / 2.0;
    let g1 = half + cfg.gap_m / 2.0;
    let strip = |start, end| Interval {
        start,
        end,
        label: Label::YesParking,
        kind: "strip".into(),
    };
    let mut intervals = vec![strip(0.0, g0)];
    if cfg.gap_m > 0.0 {
        intervals.push(Interval {
            start: g0,
            end: g1,
            label: Label::NoParking,
            kind: "crossing".into(),
        });
    }
    intervals.push(strip(g1, cfg.street_m));
    Layout {
        roads: vec![SynthRoad {
            road_id: "street".into(),
            highway: "residential",
            polyline: vec![a, b],
        }],
        sections: vec![PlannedSection {
            road_id: "street".into(),
            a,
            b,
            length: cfg.street_m,
            intervals,
        }],
        spots: Vec::new(),
        blocks: Vec::new(),
    }
}

/// Position along an interval: uniform, or a truncated normal around its center.
fn draw_along(rng: &mut ChaCha8Rng, i: &Interval, demand_sd: Option<f64>) -> f64 {
    match demand_sd {
        None => rng.random_range(i.start..=i.end),
        Some(sd) => {
            let d = Normal::new((i.start + i.end) / 2.0, sd).expect("positive sd");
            loop {
                let t = d.sample(rng);
                if i.contains(t) {
                    return t;
                }
            }
        }
    }
}

/// Index into `weights` with probability proportional to weight.
fn pick_weighted(rng: &mut ChaCha8Rng, weights: &[f64], total: f64) -> usize {
    let mut u = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn draw_duration(rng: &mut ChaCha8Rng, m: &DurationModel) -> f64 {
    if rng.random_bool(m.short_fraction) {
        rng.random_range(30.0..300.0f64).floor()
    } else {
        let d = LogNormal::new(m.mu_log, m.sigma_log).expect("valid log-normal");
        d.sample(rng).round().max(1.0)
    }
}

/// Deterministic for a fixed config. Record order is shuffled so labels are
/// not grouped.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layout = match cfg.preset {
        Preset::GridCity => grid_layout(cfg, &mut rng),
        Preset::CrossingStreet => crossing_layout(cfg),
    };
    let frame = LocalFrame::new(cfg.origin);

    let pieces = |label: Label| -> Vec<(usize, usize)> {
        layout
            .sections
            .iter()
            .enumerate()
            .flat_map(|(si, s)| {
                s.intervals
                    .iter()
                    .enumerate()
                    .filter(move |(_, i)| i.label == label && s.road_id != "freeway")
                    .map(move |(ii, _)| (si, ii))
            })
            .collect()
    };
    let valid = pieces(Label::YesParking);
    let forbidden = pieces(Label::NoParking);
    let len_of = |v: &[(usize, usize)]| -> Vec<f64> { v.iter().map(|&(s, i)| layout.sections[s].intervals[i].len()).collect() };
    let (valid_w, forbidden_w) = (len_of(&valid), len_of(&forbidden));
    let spot_w: Vec<f64> = layout.spots.iter().map(|s| s.area() * if s.kind == "gas_station" { 3.0 } else { 1.0 }).collect();
    let (vt, ft, st) = (valid_w.iter().sum::<f64>(), forbidden_w.iter().sum::<f64>(), spot_w.iter().sum::<f64>());

    let n_yes = (cfg.yes_fraction * cfg.n as f64).round() as usize;
    let n_no = cfg.n - n_yes;
    let n_off = if st > 0.0 { (cfg.off_street_fraction * n_no as f64).round() as usize } else { 0 };
    if (n_yes > 0 && vt <= 0.0) || (n_no > n_off && ft <= 0.0) {
        return Err(Error::Data("planted layout has no room for the requested labels".into()));
    }

    let mut truth: Vec<(LocalPoint, Label)> = Vec::with_capacity(cfg.n);
    let on_street = |rng: &mut ChaCha8Rng, set: &[(usize, usize)], w: &[f64], total: f64, label: Label, sd: Option<f64>| {
        let (si, ii) = set[pick_weighted(rng, w, total)];
        let s = &layout.sections[si];
        let t = draw_along(rng, &s.intervals[ii], sd);
        let lateral = if rng.random_bool(0.5) { cfg.curb_offset_m } else { -cfg.curb_offset_m };
        (s.point_at(t, lateral), label)
    };
    for _ in 0..n_yes {
        truth.push(on_street(&mut rng, &valid, &valid_w, vt, Label::YesParking, cfg.demand_sd_m));
    }
    for _ in 0..n_no - n_off {
        truth.push(on_street(&mut rng, &forbidden, &forbidden_w, ft, Label::NoParking, None));
    }
    for _ in 0..n_off {
        let s = &layout.spots[pick_weighted(&mut rng, &spot_w, st)];
        let p = LocalPoint::new(rng.random_range(s.min.x..s.max.x), rng.random_range(s.min.y..s.max.y));
        truth.push((p, Label::NoParking));
    }
    shuffle(&mut truth, &mut rng);

    let noise = Normal::new(0.0, cfg.noise_m.max(f64::MIN_POSITIVE)).expect("valid noise");
    let mut poes = Vec::with_capacity(cfg.n);
    let mut true_positions = Vec::with_capacity(cfg.n);
    for (i, (p, label)) in truth.into_iter().enumerate() {
        let observed = if cfg.noise_m > 0.0 {
            LocalPoint::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng))
        } else {
            p
        };
        poes.push(PoeRecord {
            id: format!("poe-{:06}", i + 1),
            position: rounded(frame.from_local(observed)),
            timestamp: BASE_TIMESTAMP + rng.random_range(0..TIMESTAMP_SPAN_S),
            duration: draw_duration(&mut rng, &cfg.duration),
            label: Some(label),
        });
        true_positions.push(p);
    }
    Ok(SynthDataset {
        config: cfg.clone(),
        frame,
        roads: layout.roads,
        sections: layout.sections,
        spots: layout.spots,
        blocks: layout.blocks,
        poes,
        true_positions,
    })
}

fn shuffle<T>(v: &mut [T], rng: &mut ChaCha8Rng) {
    use rand::seq::SliceRandom;
    v.shuffle(rng);
}

/// The crossing-street scenario with the given config's seed, size and noise.
pub fn plant_crossing_street(cfg: &SynthConfig) -> Result<SynthDataset> {
    generate(&SynthConfig {
        preset: Preset::CrossingStreet,
        ..cfg.clone()
    })
}
