//! Minimal GeoJSON reading and writing for the layers this crate uses.
//!
//! Coordinates are written as `[lon, lat]` rounded to 7 decimal places so
//! outputs diff cleanly between runs.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;

pub const COORD_DECIMALS: i32 = 7;

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Point(GeoPoint),
    LineString(Vec<GeoPoint>),
    Polygon(Vec<Vec<GeoPoint>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub geometry: Geometry,
    pub properties: Map<String, Value>,
}

impl Feature {
    pub fn new(geometry: Geometry) -> Self {
        Feature {
            geometry,
            properties: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.properties.insert(key.to_owned(), value.into());
        self
    }

    pub fn str_prop(&self, key: &str) -> Option<&str> {
        self.properties.get(key).and_then(Value::as_str)
    }
}

pub fn round_coord(v: f64) -> f64 {
    let s = 10f64.powi(COORD_DECIMALS);
    (v * s).round() / s
}

fn position(p: &GeoPoint) -> Value {
    json!([round_coord(p.lon), round_coord(p.lat)])
}

fn geometry_value(g: &Geometry) -> Value {
    match g {
        Geometry::Point(p) => json!({"type": "Point", "coordinates": position(p)}),
        Geometry::LineString(ps) => json!({
            "type": "LineString",
            "coordinates": ps.iter().map(position).collect::<Vec<_>>(),
        }),
        Geometry::Polygon(rings) => json!({
            "type": "Polygon",
            "coordinates": rings
                .iter()
                .map(|r| r.iter().map(position).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        }),
    }
}

pub fn to_value(features: &[Feature]) -> Value {
    let features: Vec<Value> = features
        .iter()
        .map(|f| {
            json!({
                "type": "Feature",
                "geometry": geometry_value(&f.geometry),
                "properties": Value::Object(f.properties.clone()),
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn to_string(features: &[Feature]) -> String {
    let mut s = serde_json::to_string_pretty(&to_value(features)).expect("geojson serializes");
    s.push('\n');
    s
}

pub fn write(path: &Path, features: &[Feature]) -> Result<()> {
    fs::write(path, to_string(features)).map_err(|e| Error::io(path, e))
}

fn parse_position(v: &Value) -> std::result::Result<GeoPoint, String> {
    let arr = v.as_array().ok_or("position is not an array")?;
    if arr.len() < 2 {
        return Err("position needs at least 2 numbers".into());
    }
    let lon = arr[0].as_f64().ok_or("longitude is not a number")?;
    let lat = arr[1].as_f64().ok_or("latitude is not a number")?;
    GeoPoint::new(lat, lon).map_err(|e| e.to_string())
}

fn parse_positions(v: &Value) -> std::result::Result<Vec<GeoPoint>, String> {
    v.as_array()
        .ok_or_else(|| "expected an array of positions".to_string())?
        .iter()
        .map(parse_position)
        .collect()
}

/// Parses one geometry. Multi-geometries are split into their parts.
fn parse_geometry(v: &Value) -> std::result::Result<Vec<Geometry>, String> {
    let ty = v.get("type").and_then(Value::as_str).ok_or("geometry without type")?;
    let coords = v.get("coordinates").ok_or("geometry without coordinates")?;
    let polygon = |c: &Value| -> std::result::Result<Geometry, String> {
        let rings = c
            .as_array()
            .ok_or("polygon coordinates are not an array")?
            .iter()
            .map(parse_positions)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Geometry::Polygon(rings))
    };
    let not_array = || format!("{ty} coordinates are not an array");
    Ok(match ty {
        "Point" => vec![Geometry::Point(parse_position(coords)?)],
        "LineString" => vec![Geometry::LineString(parse_positions(coords)?)],
        "Polygon" => vec![polygon(coords)?],
        "MultiPoint" => parse_positions(coords)?.into_iter().map(Geometry::Point).collect(),
        "MultiLineString" => coords
            .as_array()
            .ok_or_else(not_array)?
            .iter()
            .map(|c| parse_positions(c).map(Geometry::LineString))
            .collect::<std::result::Result<_, _>>()?,
        "MultiPolygon" => coords.as_array().ok_or_else(not_array)?.iter().map(polygon).collect::<std::result::Result<_, _>>()?,
        other => return Err(format!("unsupported geometry type {other}")),
    })
}

pub fn parse_str(text: &str, path: &Path) -> Result<Vec<Feature>> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::input(path, e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::input(path, "expected a FeatureCollection"));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::input(path, "FeatureCollection without features array"))?;
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let geometry = f
            .get("geometry")
            .ok_or_else(|| Error::input(path, format!("feature {i}: missing geometry")))?;
        let properties = match f.get("properties") {
            Some(Value::Object(m)) => m.clone(),
            None | Some(Value::Null) => Map::new(),
            Some(_) => return Err(Error::input(path, format!("feature {i}: properties is not an object"))),
        };
        let parts =
            parse_geometry(geometry).map_err(|m| Error::input(path, format!("feature {i}: {m}")))?;
        out.extend(parts.into_iter().map(|geometry| Feature {
            geometry,
            properties: properties.clone(),
        }));
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Vec<Feature>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_str(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_rounded_coordinates() {
        let f = Feature::new(Geometry::Point(GeoPoint {
            lat: 52.123456789,
            lon: 13.000000049,
        }))
        .with("count", 3);
        let s = to_string(&[f]);
        assert!(s.contains("52.1234568"), "{s}");
        assert!(s.contains("13.0"), "{s}");
        let back = parse_str(&s, Path::new("mem")).unwrap();
        assert_eq!(back[0].properties["count"], 3);
    }

    #[test]
    fn multipolygons_split_into_parts() {
        let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature",
            "properties":{"zone_type":"park"},
            "geometry":{"type":"MultiPolygon","coordinates":[
                [[[0,0],[1,0],[1,1],[0,0]]],
                [[[2,2],[3,2],[3,3],[2,2]]]]}}]}"#;
        let fs = parse_str(text, Path::new("mem")).unwrap();
        assert_eq!(fs.len(), 2);
        assert_eq!(fs[1].str_prop("zone_type"), Some("park"));
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(parse_str("{}", Path::new("mem")).is_err());
        let bad = r#"{"type":"FeatureCollection","features":[{"type":"Feature","geometry":{"type":"Point","coordinates":[0,95]}}]}"#;
        assert!(parse_str(bad, Path::new("mem")).is_err());
    }
}
