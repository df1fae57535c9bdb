//! Map-feature attributes for each park-out event.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_distance, side_of_segment, GeoPoint, LocalFrame, LocalPoint, Side};
use crate::index::{IndexedSegment, SegmentIndex};
use crate::ingest::{Label, PoeRecord, ZonePolygon, ZoneType};
use crate::sectioning::{is_freeway, RoadNetwork};

/// Distance reported when a map layer has no feature at all.
pub const MISSING_DISTANCE_M: f64 = 99_999.0;

/// Roads farther than this leave the parking side unknown.
pub const SIDE_MATCH_M: f64 = 25.0;

pub const DEFAULT_CENTER: GeoPoint = GeoPoint { lat: 52.52, lon: 13.405 };

const INDEX_CELL_M: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideType {
    Left,
    Right,
    Unknown,
}

impl SideType {
    pub const ALL: [SideType; 3] = [SideType::Left, SideType::Right, SideType::Unknown];

    pub fn as_str(self) -> &'static str {
        match self {
            SideType::Left => "left",
            SideType::Right => "right",
            SideType::Unknown => "unknown",
        }
    }
}

impl FromStr for SideType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(SideType::Left),
            "right" => Ok(SideType::Right),
            "unknown" => Ok(SideType::Unknown),
            other => Err(Error::Data(format!("unknown side type {other:?}"))),
        }
    }
}

/// The ten decision-tree attributes, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attribute {
    Duration,
    SideTypeInput,
    NoparkingDistInput,
    ParkingDistInput,
    RoadDist,
    FreewayDist,
    GasDist,
    BuslaneDist,
    JunctionDist,
    CenterDist,
}

impl Attribute {
    pub const ALL: [Attribute; 10] = [
        Attribute::Duration,
        Attribute::SideTypeInput,
        Attribute::NoparkingDistInput,
        Attribute::ParkingDistInput,
        Attribute::RoadDist,
        Attribute::FreewayDist,
        Attribute::GasDist,
        Attribute::BuslaneDist,
        Attribute::JunctionDist,
        Attribute::CenterDist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Duration => "duration",
            Attribute::SideTypeInput => "side_type_input",
            Attribute::NoparkingDistInput => "noparking_dist_input",
            Attribute::ParkingDistInput => "parking_dist_input",
            Attribute::RoadDist => "road_dist",
            Attribute::FreewayDist => "freeway_dist",
            Attribute::GasDist => "gas_dist",
            Attribute::BuslaneDist => "buslane_dist",
            Attribute::JunctionDist => "junction_dist",
            Attribute::CenterDist => "center_dist",
        }
    }

    pub fn is_categorical(self) -> bool {
        self == Attribute::SideTypeInput
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown attribute {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub duration: f64,
    pub side_type_input: SideType,
    pub noparking_dist_input: f64,
    pub parking_dist_input: f64,
    pub road_dist: f64,
    pub freeway_dist: f64,
    pub gas_dist: f64,
    pub buslane_dist: f64,
    pub junction_dist: f64,
    pub center_dist: f64,
}

impl FeatureVector {
    /// Numeric value of `attr`; `None` for the categorical side attribute.
    pub fn numeric(&self, attr: Attribute) -> Option<f64> {
        Some(match attr {
            Attribute::Duration => self.duration,
            Attribute::SideTypeInput => return None,
            Attribute::NoparkingDistInput => self.noparking_dist_input,
            Attribute::ParkingDistInput => self.parking_dist_input,
            Attribute::RoadDist => self.road_dist,
            Attribute::FreewayDist => self.freeway_dist,
            Attribute::GasDist => self.gas_dist,
            Attribute::BuslaneDist => self.buslane_dist,
            Attribute::JunctionDist => self.junction_dist,
            Attribute::CenterDist => self.center_dist,
        })
    }

    pub fn set_numeric(&mut self, attr: Attribute, v: f64) {
        let slot = match attr {
            Attribute::Duration => &mut self.duration,
            Attribute::SideTypeInput => return,
            Attribute::NoparkingDistInput => &mut self.noparking_dist_input,
            Attribute::ParkingDistInput => &mut self.parking_dist_input,
            Attribute::RoadDist => &mut self.road_dist,
            Attribute::FreewayDist => &mut self.freeway_dist,
            Attribute::GasDist => &mut self.gas_dist,
            Attribute::BuslaneDist => &mut self.buslane_dist,
            Attribute::JunctionDist => &mut self.junction_dist,
            Attribute::CenterDist => &mut self.center_dist,
        };
        *slot = v;
    }
}

/// Polygons of one map class, with an edge index for distance queries.
#[derive(Debug, Clone)]
pub struct PolygonLayer {
    polygons: Vec<ZonePolygon>,
    edges: SegmentIndex,
}

impl PolygonLayer {
    pub fn new<'a>(polygons: impl IntoIterator<Item = &'a ZonePolygon>, frame: &LocalFrame) -> Self {
        let polygons: Vec<ZonePolygon> = polygons.into_iter().cloned().collect();
        let mut pieces = Vec::new();
        for (i, z) in polygons.iter().enumerate() {
            for ring in &z.rings {
                for w in ring.windows(2) {
                    pieces.push(IndexedSegment {
                        a: frame.to_local_unchecked(w[0]),
                        b: frame.to_local_unchecked(w[1]),
                        owner: i,
                    });
                }
            }
        }
        PolygonLayer {
            polygons,
            edges: SegmentIndex::new(INDEX_CELL_M, pieces),
        }
    }

    pub fn len(&self) -> usize {
        self.polygons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    /// 0 inside any polygon, otherwise the distance to the nearest edge.
    pub fn distance(&self, p: GeoPoint, q: LocalPoint) -> f64 {
        if self.polygons.is_empty() {
            return MISSING_DISTANCE_M;
        }
        if self.polygons.iter().any(|z| z.contains(p)) {
            return 0.0;
        }
        self.edges.nearest(q).map_or(MISSING_DISTANCE_M, |h| h.distance)
    }
}

/// Read-only map layers used to enrich events.
#[derive(Debug, Clone)]
pub struct MapContext {
    pub frame: LocalFrame,
    pub center: GeoPoint,
    roads: SegmentIndex,
    freeways: SegmentIndex,
    pub noparking: PolygonLayer,
    pub parking: PolygonLayer,
    pub gas: PolygonLayer,
    pub buslane: PolygonLayer,
    pub junctions: Vec<GeoPoint>,
}

impl MapContext {
    /// No-parking: every `no_parking` zone. Parking: every `parking` zone.
    /// Gas stations and bus lanes are picked by the zone `kind`.
    pub fn new(network: &RoadNetwork, zones: &[ZonePolygon], center: GeoPoint) -> Self {
        let frame = network.frame;
        let mut roads = Vec::new();
        let mut freeways = Vec::new();
        for (ri, road) in network.roads.iter().enumerate() {
            let local: Vec<LocalPoint> = road.polyline.iter().map(|p| frame.to_local_unchecked(*p)).collect();
            for w in local.windows(2) {
                let piece = IndexedSegment { a: w[0], b: w[1], owner: ri };
                roads.push(piece);
                if is_freeway(&road.highway_class) {
                    freeways.push(piece);
                }
            }
        }
        let kind_is = |z: &&ZonePolygon, k: &str| z.kind.as_deref() == Some(k);
        MapContext {
            frame,
            center,
            roads: SegmentIndex::new(INDEX_CELL_M, roads),
            freeways: SegmentIndex::new(INDEX_CELL_M, freeways),
            noparking: PolygonLayer::new(zones.iter().filter(|z| z.zone_type == ZoneType::NoParking), &frame),
            parking: PolygonLayer::new(zones.iter().filter(|z| z.zone_type == ZoneType::Parking), &frame),
            gas: PolygonLayer::new(zones.iter().filter(|z| kind_is(z, "gas_station")), &frame),
            buslane: PolygonLayer::new(zones.iter().filter(|z| kind_is(z, "bus_lane")), &frame),
            junctions: network.junctions.clone(),
        }
    }
}

pub fn enrich(poe: &PoeRecord, ctx: &MapContext) -> FeatureVector {
    let p = poe.position;
    let q = ctx.frame.to_local_unchecked(p);
    let road = ctx.roads.nearest(q);
    let side_type_input = match road {
        Some(hit) if hit.distance <= SIDE_MATCH_M => {
            let piece = ctx.roads.pieces()[hit.piece];
            match side_of_segment(q, piece.a, piece.b) {
                Ok(Side::Left) => SideType::Left,
                Ok(Side::Right) => SideType::Right,
                _ => SideType::Unknown,
            }
        }
        _ => SideType::Unknown,
    };
    let junction_dist = ctx
        .junctions
        .iter()
        .map(|j| haversine_distance(p, *j))
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))))
        .unwrap_or(MISSING_DISTANCE_M);
    FeatureVector {
        duration: poe.duration,
        side_type_input,
        noparking_dist_input: ctx.noparking.distance(p, q),
        parking_dist_input: ctx.parking.distance(p, q),
        road_dist: road.map_or(MISSING_DISTANCE_M, |h| h.distance),
        freeway_dist: ctx.freeways.nearest(q).map_or(MISSING_DISTANCE_M, |h| h.distance),
        gas_dist: ctx.gas.distance(p, q),
        buslane_dist: ctx.buslane.distance(p, q),
        junction_dist,
        center_dist: haversine_distance(p, ctx.center),
    }
}

/// One row of the features table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub position: GeoPoint,
    pub features: FeatureVector,
    pub label: Option<Label>,
}

pub fn enrich_all(poes: &[PoeRecord], ctx: &MapContext) -> Vec<FeatureRow> {
    poes.iter()
        .map(|p| FeatureRow {
            id: p.id.clone(),
            position: p.position,
            features: enrich(p, ctx),
            label: p.label,
        })
        .collect()
}

fn header() -> Vec<&'static str> {
    let mut h = vec!["id", "lat", "lon"];
    h.extend(Attribute::ALL.iter().map(|a| a.name()));
    h.push("label");
    h
}

pub fn write_features<W: Write>(writer: W, rows: &[FeatureRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header())?;
    for r in rows {
        let mut rec = vec![r.id.clone(), r.position.lat.to_string(), r.position.lon.to_string()];
        for a in Attribute::ALL {
            rec.push(match r.features.numeric(a) {
                Some(v) => v.to_string(),
                None => r.features.side_type_input.as_str().to_owned(),
            });
        }
        rec.push(r.label.map(|l| l.as_str().to_owned()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn save_features(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_features(std::io::BufWriter::new(file), rows)
}

pub fn read_features<R: Read>(reader: R, source: &Path) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::input(source, format!("missing column {name}")))
    };
    let id = col("id")?;
    let lat = col("lat")?;
    let lon = col("lon")?;
    let attr_cols = Attribute::ALL.iter().map(|a| col(a.name())).collect::<Result<Vec<_>>>()?;
    let label = col("label").ok();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |m: String| Error::input(source, format!("line {line}: {m}"));
        let field = |c: usize| rec.get(c).map(str::trim).unwrap_or("");
        let num = |c: usize| field(c).parse::<f64>().map_err(|_| bad(format!("bad number {:?}", field(c))));
        let mut fv = FeatureVector {
            duration: 0.0,
            side_type_input: field(attr_cols[1]).parse().map_err(|e: Error| bad(e.to_string()))?,
            noparking_dist_input: 0.0,
            parking_dist_input: 0.0,
            road_dist: 0.0,
            freeway_dist: 0.0,
            gas_dist: 0.0,
            buslane_dist: 0.0,
            junction_dist: 0.0,
            center_dist: 0.0,
        };
        for (a, &c) in Attribute::ALL.iter().zip(&attr_cols) {
            if !a.is_categorical() {
                fv.set_numeric(*a, num(c)?);
            }
        }
        let label = match label.map(field) {
            None | Some("") => None,
            Some(s) => Some(s.parse().map_err(|e: Error| bad(e.to_string()))?),
        };
        rows.push(FeatureRow {
            id: field(id).to_owned(),
            position: GeoPoint::new(num(lat)?, num(lon)?).map_err(|e| bad(e.to_string()))?,
            features: fv,
            label,
        });
    }
    Ok(rows)
}

pub fn load_features(path: &Path) -> Result<Vec<FeatureRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(file, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::point_segment_distance;
    use crate::sectioning::RoadElement;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame() -> LocalFrame {
        LocalFrame::new(DEFAULT_CENTER)
    }

    fn geo(x: f64, y: f64) -> GeoPoint {
        frame().from_local(LocalPoint::new(x, y))
    }

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64, zone_type: ZoneType, kind: Option<&str>) -> ZonePolygon {
        ZonePolygon::new(
            vec![vec![geo(x0, y0), geo(x1, y0), geo(x1, y1), geo(x0, y1), geo(x0, y0)]],
            zone_type,
            kind.map(str::to_owned),
        )
        .unwrap()
    }

    fn fixture() -> (RoadNetwork, Vec<ZonePolygon>) {
        let road = |id: &str, pts: &[(f64, f64)], hw: &str| {
            RoadElement::new(id, pts.iter().map(|&(x, y)| geo(x, y)).collect(), hw, false).unwrap()
        };
        let roads = vec![
            road("a", &[(-200.0, 0.0), (0.0, 0.0), (200.0, 0.0)], "residential"),
            road("b", &[(0.0, -200.0), (0.0, 0.0), (0.0, 200.0)], "residential"),
            road("m", &[(-300.0, 300.0), (300.0, 300.0)], "motorway"),
        ];
        let zones = vec![
            rect(40.0, -6.0, 60.0, 6.0, ZoneType::NoParking, Some("bus_lane")),
            rect(-80.0, 20.0, -60.0, 40.0, ZoneType::NoParking, Some("gas_station")),
            rect(100.0, 30.0, 140.0, 60.0, ZoneType::Parking, Some("garage")),
            rect(-150.0, -80.0, -100.0, -30.0, ZoneType::PrivateYard, None),
        ];
        let net = RoadNetwork::build_in_frame(roads, 5.0, frame()).unwrap();
        (net, zones)
    }

    fn poe_at(p: GeoPoint) -> PoeRecord {
        PoeRecord {
            id: "x".into(),
            position: p,
            timestamp: 0,
            duration: 1200.0,
            label: Some(Label::YesParking),
        }
    }

    #[test]
    fn point_features_vanish_at_their_location() {
        let (net, zones) = fixture();
        let ctx = MapContext::new(&net, &zones, DEFAULT_CENTER);
        let at_junction = enrich(&poe_at(net.junctions[0]), &ctx);
        assert_eq!(at_junction.junction_dist, 0.0);
        assert_eq!(at_junction.road_dist, 0.0);
        let at_center = enrich(&poe_at(DEFAULT_CENTER), &ctx);
        assert_eq!(at_center.center_dist, 0.0);
        let in_bus = enrich(&poe_at(geo(50.0, 0.0)), &ctx);
        assert_eq!((in_bus.noparking_dist_input, in_bus.buslane_dist), (0.0, 0.0));
        assert!((in_bus.gas_dist - 110.0f64.hypot(20.0)).abs() < 1e-6);
    }

    #[test]
    fn missing_layers_use_sentinel() {
        let (net, _) = fixture();
        let ctx = MapContext::new(&net, &[], DEFAULT_CENTER);
        let fv = enrich(&poe_at(geo(10.0, 3.0)), &ctx);
        assert_eq!(fv.gas_dist, MISSING_DISTANCE_M);
        assert_eq!(fv.parking_dist_input, MISSING_DISTANCE_M);
        assert!((fv.road_dist - 3.0).abs() < 1e-6);
    }

    fn brute_layer(p: GeoPoint, q: LocalPoint, zones: &[&ZonePolygon]) -> f64 {
        if zones.is_empty() {
            return MISSING_DISTANCE_M;
        }
        if zones.iter().any(|z| z.contains(p)) {
            return 0.0;
        }
        zones
            .iter()
            .flat_map(|z| z.rings.iter())
            .flat_map(|r| r.windows(2))
            .map(|w| point_segment_distance(q, frame().to_local_unchecked(w[0]), frame().to_local_unchecked(w[1])))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn distances_match_exhaustive_scan() {
        let (net, zones) = fixture();
        let ctx = MapContext::new(&net, &zones, DEFAULT_CENTER);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..300 {
            let p = geo(rng.random_range(-350.0..350.0), rng.random_range(-350.0..350.0));
            let q = frame().to_local_unchecked(p);
            let fv = enrich(&poe_at(p), &ctx);
            let road_brute = net
                .roads
                .iter()
                .flat_map(|r| r.polyline.windows(2))
                .map(|w| point_segment_distance(q, frame().to_local_unchecked(w[0]), frame().to_local_unchecked(w[1])))
                .fold(f64::INFINITY, f64::min);
            let freeway_brute = net.roads[2]
                .polyline
                .windows(2)
                .map(|w| point_segment_distance(q, frame().to_local_unchecked(w[0]), frame().to_local_unchecked(w[1])))
                .fold(f64::INFINITY, f64::min);
            let by = |f: &dyn Fn(&ZonePolygon) -> bool| zones.iter().filter(|z| f(z)).collect::<Vec<_>>();
            assert!((fv.road_dist - road_brute).abs() < 1e-6);
            assert!((fv.freeway_dist - freeway_brute).abs() < 1e-6);
            let np = by(&|z| z.zone_type == ZoneType::NoParking);
            assert!((fv.noparking_dist_input - brute_layer(p, q, &np)).abs() < 1e-6);
            let pk = by(&|z| z.zone_type == ZoneType::Parking);
            assert!((fv.parking_dist_input - brute_layer(p, q, &pk)).abs() < 1e-6);
            let gas = by(&|z| z.kind.as_deref() == Some("gas_station"));
            assert!((fv.gas_dist - brute_layer(p, q, &gas)).abs() < 1e-6);
            let bus = by(&|z| z.kind.as_deref() == Some("bus_lane"));
            assert!((fv.buslane_dist - brute_layer(p, q, &bus)).abs() < 1e-6);
            let j = net.junctions.iter().map(|j| haversine_distance(p, *j)).fold(f64::INFINITY, f64::min);
            assert!((fv.junction_dist - j).abs() < 1e-6);
            assert_eq!(fv, enrich(&poe_at(p), &ctx));
        }
    }

    #[test]
    fn side_flips_with_road_direction() {
        let road = |pts: [(f64, f64); 2]| {
            let r = RoadElement::new("a", pts.iter().map(|&(x, y)| geo(x, y)).collect(), "residential", false).unwrap();
            RoadNetwork::build_in_frame(vec![r], 5.0, frame()).unwrap()
        };
        let forward = road([(-100.0, 0.0), (100.0, 0.0)]);
        let backward = road([(100.0, 0.0), (-100.0, 0.0)]);
        let p = poe_at(geo(10.0, 3.0));
        let side = |net: &RoadNetwork| enrich(&p, &MapContext::new(net, &[], DEFAULT_CENTER)).side_type_input;
        assert_eq!(side(&forward), SideType::Left);
        assert_eq!(side(&backward), SideType::Right);
        let far = poe_at(geo(10.0, 40.0));
        assert_eq!(enrich(&far, &MapContext::new(&forward, &[], DEFAULT_CENTER)).side_type_input, SideType::Unknown);
    }

    #[test]
    fn enrich_all_preserves_order_and_labels() {
        let (net, zones) = fixture();
        let ctx = MapContext::new(&net, &zones, DEFAULT_CENTER);
        assert!(enrich_all(&[], &ctx).is_empty());
        let mut poes: Vec<PoeRecord> = (0..5)
            .map(|i| PoeRecord {
                id: i.to_string(),
                label: if i % 2 == 0 { Some(Label::NoParking) } else { None },
                ..poe_at(geo(i as f64 * 20.0, 4.0))
            })
            .collect();
        let rows = enrich_all(&poes, &ctx);
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().zip(&poes).all(|(r, p)| r.id == p.id && r.label == p.label));
        poes.reverse();
        let rev = enrich_all(&poes, &ctx);
        assert!(rev.iter().rev().zip(&rows).all(|(a, b)| a == b));
    }

    #[test]
    fn csv_round_trip_and_missing_columns() {
        let (net, zones) = fixture();
        let ctx = MapContext::new(&net, &zones, DEFAULT_CENTER);
        let rows = enrich_all(&[poe_at(geo(12.0, -3.0)), poe_at(geo(-40.0, 8.0))], &ctx);
        let mut buf = Vec::new();
        write_features(&mut buf, &rows).unwrap();
        let back = read_features(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, rows);
        let text = String::from_utf8(buf).unwrap().replace("gas_dist", "gas");
        assert!(read_features(text.as_bytes(), Path::new("mem")).is_err());
    }
}
