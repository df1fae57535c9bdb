//! Geodesy, local projection, slippy-tile math and planar primitives.
//!
//! Distances use a spherical earth of fixed radius. Planar work (line
//! fitting, point-to-segment distances, arc lengths) happens in a local
//! equirectangular frame anchored at a per-dataset origin.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Maximum distance from the origin accepted by [`LocalFrame::to_local`].
pub const LOCAL_AREA_LIMIT_M: f64 = 50_000.0;

/// Web Mercator latitude limit in degrees.
pub const MAX_MERCATOR_LAT: f64 = 85.051_128_779_806_59;

/// Squared-meter cross-product magnitude below which a point counts as on the line.
pub const SIDE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidCoordinate(format!("latitude {lat} outside [-90, 90]")));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidCoordinate(format!("longitude {lon} outside [-180, 180]")));
        }
        Ok(GeoPoint { lat, lon })
    }

    /// Parses `"lat,lon"`.
    pub fn parse_lat_lon(s: &str) -> Result<Self> {
        let mut parts = s.split(',').map(str::trim);
        let (Some(lat), Some(lon), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::InvalidCoordinate(format!("expected \"lat,lon\", got {s:?}")));
        };
        let lat = lat
            .parse::<f64>()
            .map_err(|_| Error::InvalidCoordinate(format!("bad latitude {lat:?}")))?;
        let lon = lon
            .parse::<f64>()
            .map_err(|_| Error::InvalidCoordinate(format!("bad longitude {lon:?}")))?;
        GeoPoint::new(lat, lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalPoint {
    pub x: f64,
    pub y: f64,
}

impl LocalPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        LocalPoint { x, y }
    }

    pub fn sub(self, o: LocalPoint) -> LocalPoint {
        LocalPoint::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: LocalPoint) -> LocalPoint {
        LocalPoint::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> LocalPoint {
        LocalPoint::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: LocalPoint) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: LocalPoint) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: LocalPoint) -> f64 {
        self.sub(o).norm()
    }
}

/// Great-circle distance in meters.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Equirectangular projection about a fixed origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin: GeoPoint,
    cos_lat: f64,
}

impl LocalFrame {
    pub fn new(origin: GeoPoint) -> Self {
        LocalFrame {
            origin,
            cos_lat: origin.lat.to_radians().cos(),
        }
    }

    /// Frame centered on the bounding box of `points`; `None` when empty.
    pub fn centered_on<'a>(points: impl IntoIterator<Item = &'a GeoPoint>) -> Option<Self> {
        GeoBBox::from_points(points).map(|b| LocalFrame::new(b.center()))
    }

    pub fn to_local(&self, p: GeoPoint) -> Result<LocalPoint> {
        let d = haversine_distance(self.origin, p);
        if d > LOCAL_AREA_LIMIT_M {
            return Err(Error::OutsideLocalArea {
                distance_m: d,
                limit_m: LOCAL_AREA_LIMIT_M,
            });
        }
        Ok(self.to_local_unchecked(p))
    }

    pub fn to_local_unchecked(&self, p: GeoPoint) -> LocalPoint {
        LocalPoint {
            x: EARTH_RADIUS_M * self.cos_lat * (p.lon - self.origin.lon).to_radians(),
            y: EARTH_RADIUS_M * (p.lat - self.origin.lat).to_radians(),
        }
    }

    pub fn from_local(&self, p: LocalPoint) -> GeoPoint {
        GeoPoint {
            lat: self.origin.lat + (p.y / EARTH_RADIUS_M).to_degrees(),
            lon: self.origin.lon + (p.x / (EARTH_RADIUS_M * self.cos_lat)).to_degrees(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl GeoBBox {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self> {
        GeoPoint::new(min_lat, min_lon)?;
        GeoPoint::new(max_lat, max_lon)?;
        if min_lat > max_lat || min_lon > max_lon {
            return Err(Error::InvalidArgument(format!(
                "empty bounding box [{min_lat}, {min_lon}] .. [{max_lat}, {max_lon}]"
            )));
        }
        Ok(GeoBBox {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        })
    }

    /// Parses `"west,south,east,north"`.
    pub fn parse_wsen(s: &str) -> Result<Self> {
        let vals: Vec<f64> = s
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("bad bbox {s:?}")))?;
        let [w, so, e, n] = vals[..] else {
            return Err(Error::InvalidArgument(format!("bbox needs 4 values, got {s:?}")));
        };
        GeoBBox::new(so, w, n, e)
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a GeoPoint>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = GeoBBox {
            min_lat: first.lat,
            min_lon: first.lon,
            max_lat: first.lat,
            max_lon: first.lon,
        };
        for p in it {
            b.extend(*p);
        }
        Some(b)
    }

    pub fn extend(&mut self, p: GeoPoint) {
        self.min_lat = self.min_lat.min(p.lat);
        self.min_lon = self.min_lon.min(p.lon);
        self.max_lat = self.max_lat.max(p.lat);
        self.max_lon = self.max_lon.max(p.lon);
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat) && (self.min_lon..=self.max_lon).contains(&p.lon)
    }

    pub fn intersects(&self, o: &GeoBBox) -> bool {
        self.min_lat <= o.max_lat
            && o.min_lat <= self.max_lat
            && self.min_lon <= o.max_lon
            && o.min_lon <= self.max_lon
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lat: (self.min_lat + self.max_lat) / 2.0,
            lon: (self.min_lon + self.max_lon) / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileCoord {
    pub zoom: u8,
    pub x: u32,
    pub y: u32,
}

impl TileCoord {
    pub fn new(zoom: u8, x: u32, y: u32) -> Result<Self> {
        if zoom > 30 {
            return Err(Error::InvalidArgument(format!("zoom {zoom} above 30")));
        }
        let n = 1u64 << zoom;
        if u64::from(x) >= n || u64::from(y) >= n {
            return Err(Error::InvalidArgument(format!(
                "tile ({x}, {y}) out of range for zoom {zoom}"
            )));
        }
        Ok(TileCoord { zoom, x, y })
    }

    /// Geographic center of the tile.
    pub fn center(&self) -> GeoPoint {
        tile_to_geo(self.x as f64 + 0.5, self.y as f64 + 0.5, self.zoom)
    }
}

/// Fractional slippy-tile coordinates of `p` at `zoom`.
pub fn geo_to_tile(p: GeoPoint, zoom: u8) -> Result<(f64, f64)> {
    if p.lat.abs() > MAX_MERCATOR_LAT {
        return Err(Error::InvalidCoordinate(format!(
            "latitude {} outside Web Mercator bounds",
            p.lat
        )));
    }
    let n = 2f64.powi(i32::from(zoom));
    let phi = p.lat.to_radians();
    let x = (p.lon + 180.0) / 360.0 * n;
    let y = (1.0 - (phi.tan() + 1.0 / phi.cos()).ln() / PI) / 2.0 * n;
    Ok((x, y))
}

/// Integer tile containing `p`.
pub fn tile_for(p: GeoPoint, zoom: u8) -> Result<TileCoord> {
    let (x, y) = geo_to_tile(p, zoom)?;
    let max = (1u64 << zoom) - 1;
    let clamp = |v: f64| (v.floor().max(0.0) as u64).min(max) as u32;
    Ok(TileCoord {
        zoom,
        x: clamp(x),
        y: clamp(y),
    })
}

/// Inverse of [`geo_to_tile`] for fractional tile coordinates.
pub fn tile_to_geo(x: f64, y: f64, zoom: u8) -> GeoPoint {
    let n = 2f64.powi(i32::from(zoom));
    let lon = x / n * 360.0 - 180.0;
    let lat = (PI * (1.0 - 2.0 * y / n)).sinh().atan().to_degrees();
    GeoPoint { lat, lon }
}

/// Ground width in meters of one tile at `zoom` and latitude `lat`.
pub fn tile_width_m(zoom: u8, lat: f64) -> f64 {
    2.0 * PI * EARTH_RADIUS_M * lat.to_radians().cos() / 2f64.powi(i32::from(zoom))
}

/// Smallest zoom whose tile width at `lat` is at most `target_m`.
pub fn zoom_for_width(target_m: f64, lat: f64) -> Result<u8> {
    if !(target_m > 0.0) {
        return Err(Error::InvalidArgument(format!("cell width {target_m} must be positive")));
    }
    (0..=30u8)
        .find(|&z| tile_width_m(z, lat) <= target_m)
        .ok_or_else(|| Error::InvalidArgument(format!("no zoom level reaches {target_m} m")))
}

/// Parameter of the closest point on segment `[a, b]` to `p`, clamped to `[0, 1]`.
pub fn closest_param(p: LocalPoint, a: LocalPoint, b: LocalPoint) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return 0.0;
    }
    (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0)
}

pub fn point_segment_distance(p: LocalPoint, a: LocalPoint, b: LocalPoint) -> f64 {
    let t = closest_param(p, a, b);
    p.distance(a.add(b.sub(a).scale(t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    On,
}

/// Side of the directed line `a -> b` on which `p` lies.
pub fn side_of_segment(p: LocalPoint, a: LocalPoint, b: LocalPoint) -> Result<Side> {
    if a == b {
        return Err(Error::Degenerate("segment endpoints coincide".into()));
    }
    let cross = b.sub(a).cross(p.sub(a));
    Ok(if cross.abs() < SIDE_EPSILON {
        Side::On
    } else if cross > 0.0 {
        Side::Left
    } else {
        Side::Right
    })
}
