//! Road sectioning: roads are split into junction-to-junction sections, each
//! section into fixed-length segments, and matched events are turned into
//! per-segment load ratios.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geo::{closest_param, GeoPoint, LocalFrame, LocalPoint};
use crate::geojson::{self, Feature, Geometry};
use crate::index::{IndexedSegment, SegmentIndex};

pub const DEFAULT_SEGMENT_M: f64 = 5.0;
pub const DEFAULT_MAX_MATCH_M: f64 = 25.0;

const INDEX_CELL_M: f64 = 50.0;

/// OSM `highway` values treated as car-drivable; `_link` variants are accepted too.
pub const DRIVABLE_HIGHWAYS: [&str; 9] = [
    "motorway",
    "trunk",
    "primary",
    "secondary",
    "tertiary",
    "unclassified",
    "residential",
    "living_street",
    "service",
];

pub fn is_drivable(highway: &str) -> bool {
    let base = highway.strip_suffix("_link").unwrap_or(highway);
    DRIVABLE_HIGHWAYS.contains(&base)
}

pub fn is_freeway(highway: &str) -> bool {
    matches!(highway.strip_suffix("_link").unwrap_or(highway), "motorway" | "trunk")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadElement {
    pub road_id: String,
    pub polyline: Vec<GeoPoint>,
    pub highway_class: String,
    pub oneway: bool,
    pub drivable: bool,
}

impl RoadElement {
    /// Builds a road, dropping repeated consecutive vertices.
    pub fn new(road_id: impl Into<String>, mut polyline: Vec<GeoPoint>, highway_class: impl Into<String>, oneway: bool) -> Result<Self> {
        let road_id = road_id.into();
        polyline.dedup();
        if polyline.len() < 2 {
            return Err(Error::Degenerate(format!("road {road_id} has fewer than 2 distinct points")));
        }
        let highway_class = highway_class.into();
        Ok(RoadElement {
            drivable: is_drivable(&highway_class),
            road_id,
            polyline,
            highway_class,
            oneway,
        })
    }

    pub fn to_feature(&self) -> Feature {
        Feature::new(Geometry::LineString(self.polyline.clone()))
            .with("road_id", self.road_id.as_str())
            .with("highway", self.highway_class.as_str())
            .with("oneway", if self.oneway { "yes" } else { "no" })
    }
}

/// Parses road LineStrings, keeping drivable ones only.
pub fn roads_from_features(features: &[Feature], source: &Path) -> Result<Vec<RoadElement>> {
    let mut roads = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let Geometry::LineString(line) = &f.geometry else {
            return Err(Error::input(source, format!("feature {i}: road geometry must be a LineString")));
        };
        let highway = f
            .str_prop("highway")
            .ok_or_else(|| Error::input(source, format!("feature {i}: missing highway property")))?;
        let road_id = match f.properties.get("road_id") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => format!("road-{i}"),
        };
        let oneway = match f.properties.get("oneway") {
            Some(serde_json::Value::Bool(b)) => *b,
            Some(serde_json::Value::String(s)) => matches!(s.as_str(), "yes" | "true" | "1" | "-1"),
            _ => false,
        };
        let road = RoadElement::new(road_id, line.clone(), highway, oneway)
            .map_err(|e| Error::input(source, format!("feature {i}: {e}")))?;
        if road.drivable {
            roads.push(road);
        }
    }
    Ok(roads)
}

pub fn load_roads(path: &Path) -> Result<Vec<RoadElement>> {
    roads_from_features(&geojson::read(path)?, path)
}

pub type SectionId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSection {
    pub id: SectionId,
    pub road_id: String,
    pub polyline: Vec<GeoPoint>,
    pub local: Vec<LocalPoint>,
    /// Cumulative arc length at each vertex; `cumulative[0] == 0`.
    pub cumulative: Vec<f64>,
    pub length: f64,
}

impl RoadSection {
    fn new(id: SectionId, road_id: &str, polyline: Vec<GeoPoint>, local: Vec<LocalPoint>) -> Self {
        let mut cumulative = Vec::with_capacity(local.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in local.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        RoadSection {
            id,
            road_id: road_id.to_owned(),
            polyline,
            local,
            cumulative,
            length: acc,
        }
    }

    pub fn segment_count(&self, segment_m: f64) -> usize {
        ((self.length / segment_m) - 1e-9).ceil().max(1.0) as usize
    }

    /// Point at arc length `s`, clamped to the section.
    pub fn point_at(&self, s: f64) -> LocalPoint {
        let s = s.clamp(0.0, self.length);
        let i = self.cumulative.partition_point(|&c| c <= s).clamp(1, self.local.len() - 1);
        let (a, b) = (self.local[i - 1], self.local[i]);
        let span = self.cumulative[i] - self.cumulative[i - 1];
        let t = if span > 0.0 { (s - self.cumulative[i - 1]) / span } else { 0.0 };
        a.add(b.sub(a).scale(t))
    }

    /// Sub-polyline between arc lengths `from` and `to`.
    pub fn slice(&self, from: f64, to: f64) -> Vec<LocalPoint> {
        let mut out = vec![self.point_at(from)];
        for (i, &c) in self.cumulative.iter().enumerate() {
            if c > from && c < to {
                out.push(self.local[i]);
            }
        }
        out.push(self.point_at(to));
        out
    }

    /// Unit direction of the edge at arc length `s`.
    pub fn direction_at(&self, s: f64) -> LocalPoint {
        let i = self.cumulative.partition_point(|&c| c <= s).clamp(1, self.local.len() - 1);
        let d = self.local[i].sub(self.local[i - 1]);
        d.scale(1.0 / d.norm())
    }
}

/// Splits roads at junction vertices: vertices shared by at least two distinct roads.
pub fn build_sections(roads: &[RoadElement], frame: &LocalFrame) -> Result<(Vec<RoadSection>, Vec<GeoPoint>)> {
    let key = |p: &GeoPoint| (p.lat.to_bits(), p.lon.to_bits());
    let mut owners: BTreeMap<(u64, u64), BTreeSet<usize>> = BTreeMap::new();
    for (ri, road) in roads.iter().enumerate() {
        for p in &road.polyline {
            owners.entry(key(p)).or_default().insert(ri);
        }
    }
    let is_junction = |p: &GeoPoint| owners.get(&key(p)).is_some_and(|s| s.len() >= 2);

    let mut junctions = Vec::new();
    let mut seen = BTreeSet::new();
    let mut sections = Vec::new();
    for road in roads {
        let local = road
            .polyline
            .iter()
            .map(|p| frame.to_local(*p))
            .collect::<Result<Vec<_>>>()?;
        let mut start = 0;
        for j in 0..road.polyline.len() {
            let p = &road.polyline[j];
            let junction = is_junction(p);
            if junction && seen.insert(key(p)) {
                junctions.push(*p);
            }
            let interior = j > 0 && j + 1 < road.polyline.len();
            if (interior && junction) || j + 1 == road.polyline.len() {
                let id = sections.len();
                sections.push(RoadSection::new(
                    id,
                    &road.road_id,
                    road.polyline[start..=j].to_vec(),
                    local[start..=j].to_vec(),
                ));
                start = j;
            }
        }
    }
    Ok((sections, junctions))
}

/// A record's nearest section within the match distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SectionMatch {
    pub section: SectionId,
    pub distance: f64,
    /// Arc length of the projection foot along the section.
    pub along: f64,
}

#[derive(Debug, Clone)]
pub struct RoadNetwork {
    pub frame: LocalFrame,
    pub roads: Vec<RoadElement>,
    pub sections: Vec<RoadSection>,
    pub junctions: Vec<GeoPoint>,
    pub segment_m: f64,
    index: SegmentIndex,
    /// For each index piece, its edge position within the owning section.
    piece_edge: Vec<usize>,
}

impl RoadNetwork {
    pub fn build(roads: Vec<RoadElement>, segment_m: f64) -> Result<Self> {
        if !(segment_m > 0.0) {
            return Err(Error::InvalidArgument(format!("segment length {segment_m} must be positive")));
        }
        let frame = LocalFrame::centered_on(roads.iter().flat_map(|r| r.polyline.iter()))
            .unwrap_or_else(|| LocalFrame::new(GeoPoint { lat: 0.0, lon: 0.0 }));
        Self::build_in_frame(roads, segment_m, frame)
    }

    pub fn build_in_frame(roads: Vec<RoadElement>, segment_m: f64, frame: LocalFrame) -> Result<Self> {
        let (sections, junctions) = build_sections(&roads, &frame)?;
        let mut pieces = Vec::new();
        let mut piece_edge = Vec::new();
        for s in &sections {
            for (e, w) in s.local.windows(2).enumerate() {
                pieces.push(IndexedSegment {
                    a: w[0],
                    b: w[1],
                    owner: s.id,
                });
                piece_edge.push(e);
            }
        }
        Ok(RoadNetwork {
            frame,
            roads,
            sections,
            junctions,
            segment_m,
            index: SegmentIndex::new(INDEX_CELL_M, pieces),
            piece_edge,
        })
    }

    pub fn section(&self, id: SectionId) -> &RoadSection {
        &self.sections[id]
    }

    pub fn to_local(&self, p: GeoPoint) -> Option<LocalPoint> {
        self.frame.to_local(p).ok()
    }

    pub fn segment_index(&self, section: SectionId, along: f64) -> usize {
        let n = self.sections[section].segment_count(self.segment_m);
        ((along / self.segment_m).floor().max(0.0) as usize).min(n - 1)
    }

    /// Nearest section within `max_dist`; ties go to the smaller section id.
    pub fn match_point(&self, p: GeoPoint, max_dist: f64) -> Option<SectionMatch> {
        let q = self.to_local(p)?;
        let hit = self.index.nearest_within(q, max_dist)?;
        let s = &self.sections[hit.owner];
        let e = self.piece_edge[hit.piece];
        let t = closest_param(q, s.local[e], s.local[e + 1]);
        Some(SectionMatch {
            section: hit.owner,
            distance: hit.distance,
            along: s.cumulative[e] + t * (s.cumulative[e + 1] - s.cumulative[e]),
        })
    }

    /// Nearest section with no distance bound.
    pub fn nearest_section(&self, p: GeoPoint) -> Option<SectionMatch> {
        let q = self.to_local(p)?;
        let hit = self.index.nearest(q)?;
        let s = &self.sections[hit.owner];
        let e = self.piece_edge[hit.piece];
        let t = closest_param(q, s.local[e], s.local[e + 1]);
        Some(SectionMatch {
            section: hit.owner,
            distance: hit.distance,
            along: s.cumulative[e] + t * (s.cumulative[e + 1] - s.cumulative[e]),
        })
    }

    /// Total local length of a road's polyline.
    pub fn road_length(&self, road: &RoadElement) -> Result<f64> {
        let local = road.polyline.iter().map(|p| self.frame.to_local(*p)).collect::<Result<Vec<_>>>()?;
        Ok(local.windows(2).map(|w| w[0].distance(w[1])).sum())
    }
}

pub fn match_poe_to_section(poe: &crate::ingest::PoeRecord, network: &RoadNetwork, max_dist: f64) -> Option<SectionId> {
    network.match_point(poe.position, max_dist).map(|m| m.section)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentClass {
    Green,
    Red,
    Undetermined,
}

impl SegmentClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentClass::Green => "green",
            SegmentClass::Red => "red",
            SegmentClass::Undetermined => "undetermined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentLoad {
    pub section_id: SectionId,
    /// Position within the section, from its start.
    pub index: usize,
    pub start_m: f64,
    pub end_m: f64,
    pub poe_count: u64,
    pub load_ratio: f64,
    pub class: SegmentClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectionLoad {
    pub section_id: SectionId,
    pub length: f64,
    pub poe_count: u64,
    pub count_per_meter: f64,
    pub mean_segment_load_ratio: f64,
    pub segments: Vec<SegmentLoad>,
}

/// Per-section counts and per-segment load ratios. Classes start undetermined.
pub fn compute_loads(network: &RoadNetwork, matches: &[SectionMatch]) -> Vec<SectionLoad> {
    let mut counts: Vec<Vec<u64>> = network
        .sections
        .iter()
        .map(|s| vec![0; s.segment_count(network.segment_m)])
        .collect();
    for m in matches {
        let k = network.segment_index(m.section, m.along);
        counts[m.section][k] += 1;
    }
    network
        .sections
        .iter()
        .zip(counts)
        .map(|(s, seg_counts)| {
            let n = seg_counts.len();
            let total: u64 = seg_counts.iter().sum();
            let segments: Vec<SegmentLoad> = seg_counts
                .iter()
                .enumerate()
                .map(|(k, &c)| SegmentLoad {
                    section_id: s.id,
                    index: k,
                    start_m: k as f64 * network.segment_m,
                    end_m: ((k + 1) as f64 * network.segment_m).min(s.length),
                    poe_count: c,
                    load_ratio: if total == 0 { 0.0 } else { (c * n as u64) as f64 / total as f64 },
                    class: SegmentClass::Undetermined,
                })
                .collect();
            SectionLoad {
                section_id: s.id,
                length: s.length,
                poe_count: total,
                count_per_meter: if s.length > 0.0 { total as f64 / s.length } else { 0.0 },
                mean_segment_load_ratio: segments.iter().map(|g| g.load_ratio).sum::<f64>() / n as f64,
                segments,
            }
        })
        .collect()
}

/// Green: load ratio above the section mean. Red: the whole section is empty.
pub fn classify_segments(mut loads: Vec<SectionLoad>) -> Vec<SectionLoad> {
    for sec in &mut loads {
        let n = sec.segments.len() as u64;
        for seg in &mut sec.segments {
            seg.class = if sec.poe_count == 0 {
                SegmentClass::Red
            } else if seg.poe_count * n > sec.poe_count {
                // ratio > mean, where mean = sum(ratios)/n, in exact integers.
                SegmentClass::Green
            } else {
                SegmentClass::Undetermined
            };
        }
    }
    loads
}

/// Matches, loads and classifies in one pass; unmatched records are counted.
pub fn sectionize(network: &RoadNetwork, points: &[GeoPoint], max_dist: f64) -> (Vec<SectionLoad>, usize) {
    let matches: Vec<SectionMatch> = points.iter().filter_map(|p| network.match_point(*p, max_dist)).collect();
    let unmatched = points.len() - matches.len();
    (classify_segments(compute_loads(network, &matches)), unmatched)
}

pub fn segment_geometry(network: &RoadNetwork, seg: &SegmentLoad) -> Vec<GeoPoint> {
    network.sections[seg.section_id]
        .slice(seg.start_m, seg.end_m)
        .into_iter()
        .map(|p| network.frame.from_local(p))
        .collect()
}

pub fn to_features(network: &RoadNetwork, loads: &[SectionLoad]) -> Vec<Feature> {
    loads
        .iter()
        .flat_map(|sec| sec.segments.iter())
        .map(|seg| {
            Feature::new(Geometry::LineString(segment_geometry(network, seg)))
                .with("section_id", seg.section_id)
                .with("segment_index", seg.index)
                .with("road_id", network.sections[seg.section_id].road_id.as_str())
                .with("poe_count", seg.poe_count)
                .with("load_ratio", seg.load_ratio)
                .with("class", seg.class.as_str())
        })
        .collect()
}
