//! Dual-resolution rasterization of park-out events.
//!
//! Coarse normalization windows are slippy tiles at the smallest zoom whose
//! ground width does not exceed the requested coarse size. Each window is
//! subdivided into `ratio x ratio` fine counting cells, where `ratio` is the
//! requested coarse/fine size ratio. Cells are rectangles in lat/lon.

use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geo::{geo_to_tile, tile_to_geo, tile_width_m, zoom_for_width, GeoBBox, GeoPoint, TileCoord};
use crate::geojson::{Feature, Geometry};
use crate::ingest::PoeRecord;

pub const DEFAULT_FINE_M: f64 = 5.0;
pub const DEFAULT_COARSE_M: f64 = 500.0;

/// Fine cell address: global column/row at `coarse_zoom` subdivided by `ratio`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Cell {
    pub x: u64,
    pub y: u64,
}

/// Coarse window address; identical to a slippy tile at `coarse_zoom`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Window {
    pub x: u64,
    pub y: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    /// Coarse tile containing the north-west corner of `bounds`.
    pub origin: TileCoord,
    pub coarse_zoom: u8,
    /// Fine cells per coarse window edge.
    pub ratio: u32,
    pub fine_cell_m: f64,
    pub coarse_cell_m: f64,
    pub bounds: GeoBBox,
}

impl GridSpec {
    pub fn new(bounds: GeoBBox, fine_m: f64, coarse_m: f64) -> Result<Self> {
        if !(fine_m > 0.0) || !(coarse_m >= fine_m) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < fine ({fine_m} m) <= coarse ({coarse_m} m)"
            )));
        }
        if bounds.min_lat > bounds.max_lat || bounds.min_lon > bounds.max_lon {
            return Err(Error::InvalidArgument("empty raster bounds".into()));
        }
        let mean_lat = (bounds.min_lat + bounds.max_lat) / 2.0;
        let coarse_zoom = zoom_for_width(coarse_m, mean_lat)?;
        let ratio = (coarse_m / fine_m).round().max(1.0) as u32;
        let coarse_cell_m = tile_width_m(coarse_zoom, mean_lat);
        let origin = crate::geo::tile_for(
            GeoPoint {
                lat: bounds.max_lat,
                lon: bounds.min_lon,
            },
            coarse_zoom,
        )?;
        Ok(GridSpec {
            origin,
            coarse_zoom,
            ratio,
            fine_cell_m: coarse_cell_m / f64::from(ratio),
            coarse_cell_m,
            bounds,
        })
    }

    /// Grid covering every given record.
    pub fn covering(poes: &[PoeRecord], fine_m: f64, coarse_m: f64) -> Result<Self> {
        let bounds = GeoBBox::from_points(poes.iter().map(|p| &p.position))
            .ok_or_else(|| Error::InvalidArgument("cannot derive raster bounds from zero records".into()))?;
        GridSpec::new(bounds, fine_m, coarse_m)
    }

    fn fine_coord(&self, p: GeoPoint) -> Option<Cell> {
        let (tx, ty) = geo_to_tile(p, self.coarse_zoom).ok()?;
        let r = f64::from(self.ratio);
        Some(Cell {
            x: (tx * r).floor().max(0.0) as u64,
            y: (ty * r).floor().max(0.0) as u64,
        })
    }

    /// Fine cell holding `p`, or `None` outside the bounds.
    pub fn cell_of(&self, p: GeoPoint) -> Option<Cell> {
        if !self.bounds.contains(p) {
            return None;
        }
        self.fine_coord(p)
    }

    pub fn window_of(&self, c: Cell) -> Window {
        let r = u64::from(self.ratio);
        Window { x: c.x / r, y: c.y / r }
    }

    /// Inclusive fine-cell ranges `(x0, x1, y0, y1)` touched by the bounds.
    fn fine_extent(&self) -> (u64, u64, u64, u64) {
        let nw = self
            .fine_coord(GeoPoint {
                lat: self.bounds.max_lat,
                lon: self.bounds.min_lon,
            })
            .unwrap_or(Cell { x: 0, y: 0 });
        let se = self
            .fine_coord(GeoPoint {
                lat: self.bounds.min_lat,
                lon: self.bounds.max_lon,
            })
            .unwrap_or(nw);
        (nw.x, se.x, nw.y, se.y)
    }

    /// Number of fine cells of `w` that intersect the bounds.
    pub fn cells_in_bounds(&self, w: Window) -> u64 {
        let r = u64::from(self.ratio);
        let (x0, x1, y0, y1) = self.fine_extent();
        let span = |lo: u64, hi: u64, wlo: u64| {
            let a = lo.max(wlo);
            let b = hi.min(wlo + r - 1);
            if a > b {
                0
            } else {
                b - a + 1
            }
        };
        span(x0, x1, w.x * r) * span(y0, y1, w.y * r)
    }

    /// Closed lon/lat ring of a fine cell.
    pub fn cell_ring(&self, c: Cell) -> Vec<GeoPoint> {
        let r = f64::from(self.ratio);
        let corner = |dx: u64, dy: u64| tile_to_geo((c.x + dx) as f64 / r, (c.y + dy) as f64 / r, self.coarse_zoom);
        let nw = corner(0, 0);
        vec![nw, corner(1, 0), corner(1, 1), corner(0, 1), nw]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualRaster {
    pub spec: GridSpec,
    pub fine_counts: BTreeMap<Cell, u64>,
    pub coarse_totals: BTreeMap<Window, u64>,
    /// Records that fell outside the bounds and were not counted.
    pub out_of_bounds: u64,
}

impl DualRaster {
    pub fn empty(spec: GridSpec) -> Self {
        DualRaster {
            spec,
            fine_counts: BTreeMap::new(),
            coarse_totals: BTreeMap::new(),
            out_of_bounds: 0,
        }
    }

    /// Counts one record; `false` if it lies outside the bounds.
    pub fn insert(&mut self, p: GeoPoint) -> bool {
        let Some(cell) = self.spec.cell_of(p) else {
            return false;
        };
        *self.fine_counts.entry(cell).or_insert(0) += 1;
        *self.coarse_totals.entry(self.spec.window_of(cell)).or_insert(0) += 1;
        true
    }

    pub fn count(&self, c: Cell) -> u64 {
        self.fine_counts.get(&c).copied().unwrap_or(0)
    }

    pub fn window_total(&self, w: Window) -> u64 {
        self.coarse_totals.get(&w).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.fine_counts.values().sum()
    }
}

pub fn build_raster(poes: &[PoeRecord], spec: &GridSpec) -> DualRaster {
    let mut raster = DualRaster::empty(spec.clone());
    for p in poes {
        if !raster.insert(p.position) {
            raster.out_of_bounds += 1;
        }
    }
    if raster.out_of_bounds > 0 {
        log::warn!("{} records outside raster bounds were not counted", raster.out_of_bounds);
    }
    raster
}

/// Returns `raster` extended by one record.
pub fn update_raster(raster: &DualRaster, poe: &PoeRecord) -> Result<DualRaster> {
    let mut next = raster.clone();
    if !next.insert(poe.position) {
        return Err(Error::InvalidArgument(format!("record {} lies outside the raster bounds", poe.id)));
    }
    Ok(next)
}

/// Population over which a window's average count is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    /// Mean over fine cells with at least one record.
    #[default]
    OccupiedCells,
    /// Mean over every in-bounds fine cell of the window.
    AllCells,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellState {
    pub cell: Cell,
    pub count: u64,
    pub intensity: f64,
    pub valid: bool,
}

/// Per-cell result for every occupied cell; absent cells have count 0,
/// intensity 0 and are not valid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RasterClassification {
    pub cells: Vec<CellState>,
}

impl RasterClassification {
    pub fn valid_cells(&self) -> impl Iterator<Item = &CellState> {
        self.cells.iter().filter(|c| c.valid)
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("classification serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Intensities only; `valid` is left false.
pub fn normalize(raster: &DualRaster) -> RasterClassification {
    let cells = raster
        .fine_counts
        .iter()
        .map(|(&cell, &count)| {
            let total = raster.window_total(raster.spec.window_of(cell));
            CellState {
                cell,
                count,
                intensity: if total == 0 { 0.0 } else { count as f64 / total as f64 },
                valid: false,
            }
        })
        .collect();
    RasterClassification { cells }
}

/// Marks cells whose count strictly exceeds the window mean.
pub fn classify_cells(raster: &DualRaster, mode: MeanMode) -> RasterClassification {
    let mut occupied: BTreeMap<Window, u64> = BTreeMap::new();
    for (&cell, &count) in &raster.fine_counts {
        if count > 0 {
            *occupied.entry(raster.spec.window_of(cell)).or_insert(0) += 1;
        }
    }
    let mut out = normalize(raster);
    for c in &mut out.cells {
        let w = raster.spec.window_of(c.cell);
        let total = raster.window_total(w);
        let population = match mode {
            MeanMode::OccupiedCells => occupied.get(&w).copied().unwrap_or(0),
            MeanMode::AllCells => raster.spec.cells_in_bounds(w),
        };
        // count > total / population, kept in integers so ties are exact.
        c.valid = c.count > 0 && u128::from(c.count) * u128::from(population) > u128::from(total);
    }
    out
}

pub fn to_features(classification: &RasterClassification, spec: &GridSpec) -> Vec<Feature> {
    classification
        .cells
        .iter()
        .map(|c| {
            Feature::new(Geometry::Polygon(vec![spec.cell_ring(c.cell)]))
                .with("count", c.count)
                .with("intensity", c.intensity)
                .with("valid", c.valid)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ZonePolygon;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poe(lat: f64, lon: f64) -> PoeRecord {
        PoeRecord {
            id: format!("{lat},{lon}"),
            position: GeoPoint { lat, lon },
            timestamp: 0,
            duration: 600.0,
            label: None,
        }
    }

    fn berlin_spec() -> GridSpec {
        GridSpec::new(GeoBBox::new(52.51, 13.39, 52.53, 13.42).unwrap(), 5.0, 500.0).unwrap()
    }

    fn random_poes(n: usize, seed: u64) -> Vec<PoeRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| poe(rng.random_range(52.515..52.525), rng.random_range(13.40..13.41)))
            .collect()
    }

    #[test]
    fn spec_snaps_to_tiles() {
        let spec = berlin_spec();
        assert_eq!(spec.coarse_zoom, 16);
        assert_eq!(spec.ratio, 100);
        assert!(spec.coarse_cell_m <= 500.0);
        assert!(spec.fine_cell_m <= 5.0);
        assert!((spec.coarse_cell_m / spec.fine_cell_m - 100.0).abs() < 1e-9);
        assert!(GridSpec::new(spec.bounds, 0.0, 500.0).is_err());
    }

    #[test]
    fn counting_examples() {
        let spec = berlin_spec();
        let r = build_raster(&[], &spec);
        assert_eq!(r.total(), 0);
        assert!(normalize(&r).cells.is_empty());

        let r = build_raster(&[poe(52.52, 13.405)], &spec);
        assert_eq!(r.fine_counts.len(), 1);
        assert_eq!(r.fine_counts.values().copied().collect::<Vec<_>>(), [1]);
        assert_eq!(r.coarse_totals.values().copied().collect::<Vec<_>>(), [1]);

        let same: Vec<_> = (0..7).map(|_| poe(52.52, 13.405)).collect();
        let r = build_raster(&same, &spec);
        assert_eq!(r.fine_counts.values().copied().collect::<Vec<_>>(), [7]);
        let n = normalize(&r);
        assert_eq!(n.cells[0].intensity, 1.0);

        let r = build_raster(&[poe(10.0, 10.0)], &spec);
        assert_eq!((r.total(), r.out_of_bounds), (0, 1));
    }

    #[test]
    fn counted_points_lie_in_their_cell() {
        let spec = berlin_spec();
        for p in random_poes(200, 5) {
            let c = spec.cell_of(p.position).unwrap();
            let ring = spec.cell_ring(c);
            let zone = ZonePolygon::new(vec![ring.clone()], crate::ingest::ZoneType::Park, None).unwrap();
            let on_edge = ring.iter().any(|q| q.lat == p.position.lat || q.lon == p.position.lon);
            assert!(zone.contains(p.position) || on_edge);
        }
    }

    /// Two occupied cells inside one window at `base`, with `a` and `b` records.
    fn two_cells(a: usize, b: usize) -> (DualRaster, Cell, Cell) {
        let spec = berlin_spec();
        let p1 = GeoPoint { lat: 52.52, lon: 13.405 };
        let c1 = spec.cell_of(p1).unwrap();
        let r = f64::from(spec.ratio);
        let center = |c: Cell| tile_to_geo((c.x as f64 + 0.5) / r, (c.y as f64 + 0.5) / r, spec.coarse_zoom);
        let c2 = Cell { x: c1.x + 1, y: c1.y };
        assert_eq!(spec.window_of(c1), spec.window_of(c2));
        let mut poes = vec![];
        poes.extend((0..a).map(|_| PoeRecord { position: center(c1), ..poe(0.0, 0.0) }));
        poes.extend((0..b).map(|_| PoeRecord { position: center(c2), ..poe(0.0, 0.0) }));
        (build_raster(&poes, &spec), c1, c2)
    }

    #[test]
    fn normalization_ratios() {
        let (r, c1, c2) = two_cells(3, 1);
        let n = normalize(&r);
        let get = |c: Cell| n.cells.iter().find(|s| s.cell == c).unwrap().intensity;
        assert_eq!(get(c1), 0.75);
        assert_eq!(get(c2), 0.25);
    }

    #[test]
    fn classification_examples() {
        let (r, c1, _) = two_cells(1, 0);
        let k = classify_cells(&r, MeanMode::OccupiedCells);
        assert!(!k.cells.iter().find(|s| s.cell == c1).unwrap().valid);

        let (r, c1, c2) = two_cells(10, 2);
        let k = classify_cells(&r, MeanMode::OccupiedCells);
        let valid = |c: Cell| k.cells.iter().find(|s| s.cell == c).unwrap().valid;
        assert!(valid(c1));
        assert!(!valid(c2));

        let (r, _, _) = two_cells(4, 4);
        assert_eq!(classify_cells(&r, MeanMode::OccupiedCells).valid_cells().count(), 0);
        // Over all cells of the window both occupied cells beat the mean.
        assert_eq!(classify_cells(&r, MeanMode::AllCells).valid_cells().count(), 2);
    }

    #[test]
    fn update_can_flip_a_neighbor() {
        // Counts {2, 1}: mean 1.5, only the first cell is valid. Two more records
        // in the second cell make it {2, 3}, mean 2.5, flipping both flags.
        let (r, c1, c2) = two_cells(2, 1);
        let before = classify_cells(&r, MeanMode::OccupiedCells);
        let flag = |k: &RasterClassification, c: Cell| k.cells.iter().find(|s| s.cell == c).unwrap().valid;
        assert!(flag(&before, c1) && !flag(&before, c2));
        let rr = f64::from(r.spec.ratio);
        let center = tile_to_geo((c2.x as f64 + 0.5) / rr, (c2.y as f64 + 0.5) / rr, r.spec.coarse_zoom);
        let q = PoeRecord { position: center, ..poe(0.0, 0.0) };
        let r2 = update_raster(&update_raster(&r, &q).unwrap(), &q).unwrap();
        let after = classify_cells(&r2, MeanMode::OccupiedCells);
        assert!(!flag(&after, c1) && flag(&after, c2));
        assert!(update_raster(&r, &poe(0.0, 0.0)).is_err());
    }

    #[test]
    fn incremental_equals_batch() {
        let spec = berlin_spec();
        let poes = random_poes(1000, 9);
        let mut inc = DualRaster::empty(spec.clone());
        for p in &poes {
            inc = update_raster(&inc, p).unwrap();
        }
        let batch = build_raster(&poes, &spec);
        assert_eq!(inc, batch);
        assert_eq!(
            classify_cells(&inc, MeanMode::OccupiedCells).digest(),
            classify_cells(&batch, MeanMode::OccupiedCells).digest()
        );
    }

    #[test]
    fn conservation_and_window_sums() {
        let spec = berlin_spec();
        let poes = random_poes(3000, 1);
        let r = build_raster(&poes, &spec);
        assert_eq!(r.total(), 3000);
        assert_eq!(r.coarse_totals.values().sum::<u64>(), 3000);
        for (&w, &t) in &r.coarse_totals {
            let inner: u64 = r.fine_counts.iter().filter(|(c, _)| spec.window_of(**c) == w).map(|(_, n)| n).sum();
            assert_eq!(inner, t);
        }
        let n = normalize(&r);
        let mut sums: BTreeMap<Window, f64> = BTreeMap::new();
        for c in &n.cells {
            *sums.entry(spec.window_of(c.cell)).or_insert(0.0) += c.intensity;
        }
        assert!(sums.values().all(|s| (s - 1.0).abs() < 1e-9));
    }

    #[test]
    fn duplication_keeps_valid_set() {
        let spec = berlin_spec();
        let poes = random_poes(2000, 2);
        let doubled: Vec<_> = poes.iter().chain(poes.iter()).cloned().collect();
        let valid = |ps: &[PoeRecord]| {
            classify_cells(&build_raster(ps, &spec), MeanMode::OccupiedCells)
                .valid_cells()
                .map(|c| c.cell)
                .collect::<Vec<_>>()
        };
        assert_eq!(valid(&poes), valid(&doubled));
    }

    #[test]
    fn cells_in_bounds_clips_edge_windows() {
        let spec = berlin_spec();
        let inside = spec.window_of(spec.cell_of(GeoPoint { lat: 52.52, lon: 13.405 }).unwrap());
        let n = spec.cells_in_bounds(inside);
        assert!(n > 0 && n <= 100 * 100);
        assert_eq!(spec.cells_in_bounds(Window { x: 0, y: 0 }), 0);
    }
}
