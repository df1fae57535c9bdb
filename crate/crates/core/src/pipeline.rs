//! Run configuration, ground-truth evaluation and the end-to-end runner.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dtree::{self, EvalReport, ResampleStrategy, Sample, SplitConfig};
use crate::error::{Error, Result};
use crate::features::{self, FeatureRow, MapContext, DEFAULT_CENTER};
use crate::geo::{GeoBBox, GeoPoint};
use crate::geojson::{self, Feature, Geometry};
use crate::gmm::{self, GmmConfig};
use crate::ingest::{self, FilterReport, Label, PoeRecord, ZonePolygon, ZoneType};
use crate::raster::{self, GridSpec, MeanMode};
use crate::sectioning::{self, RoadNetwork, SegmentClass};
use crate::synth::sha256_file;

pub const MIN_DURATION_S: f64 = 300.0;

/// Labelled polygons; positions inside no polygon are `noParking`, and
/// `noParking` wins where polygons overlap.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    polygons: Vec<(ZonePolygon, GeoBBox, Label)>,
    extent: GeoBBox,
}

impl GroundTruth {
    pub fn from_features(features: &[Feature], source: &Path) -> Result<Self> {
        let mut polygons = Vec::new();
        for (i, f) in features.iter().enumerate() {
            let Geometry::Polygon(rings) = &f.geometry else {
                continue;
            };
            let label: Label = f
                .str_prop("label")
                .ok_or_else(|| Error::input(source, format!("feature {i}: missing label")))?
                .parse()
                .map_err(|e: Error| Error::input(source, format!("feature {i}: {e}")))?;
            let poly = ZonePolygon::new(rings.clone(), ZoneType::NoParking, None)
                .map_err(|e| Error::input(source, format!("feature {i}: {e}")))?;
            let bbox = GeoBBox::from_points(rings[0].iter()).expect("validated ring");
            polygons.push((poly, bbox, label));
        }
        let extent = GeoBBox::from_points(polygons.iter().flat_map(|(p, _, _)| p.rings[0].iter()))
            .ok_or_else(|| Error::input(source, "ground truth has no polygons"))?;
        Ok(GroundTruth { polygons, extent })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_features(&geojson::read(path)?, path)
    }

    pub fn extent(&self) -> GeoBBox {
        self.extent
    }

    pub fn label_at(&self, p: GeoPoint) -> Label {
        let mut yes = false;
        for (poly, bbox, label) in &self.polygons {
            if bbox.contains(p) && poly.contains(p) {
                match label {
                    Label::NoParking => return Label::NoParking,
                    Label::YesParking => yes = true,
                }
            }
        }
        if yes {
            Label::YesParking
        } else {
            Label::NoParking
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Raster,
    Sections,
    Dtree,
    Gmm,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raster" => Ok(Method::Raster),
            "sections" => Ok(Method::Sections),
            "dtree" => Ok(Method::Dtree),
            "gmm" => Ok(Method::Gmm),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Raster => "raster",
            Method::Sections => "sections",
            Method::Dtree => "dtree",
            Method::Gmm => "gmm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub poes: Option<PathBuf>,
    pub roads: Option<PathBuf>,
    pub zones: Option<PathBuf>,
    pub gt: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub min_duration_s: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            min_duration_s: MIN_DURATION_S,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterParams {
    pub fine_m: f64,
    pub coarse_m: f64,
    pub mean_over_all_cells: bool,
}

impl Default for RasterParams {
    fn default() -> Self {
        RasterParams {
            fine_m: raster::DEFAULT_FINE_M,
            coarse_m: raster::DEFAULT_COARSE_M,
            mean_over_all_cells: false,
        }
    }
}

impl RasterParams {
    pub fn mean_mode(&self) -> MeanMode {
        if self.mean_over_all_cells {
            MeanMode::AllCells
        } else {
            MeanMode::OccupiedCells
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SectionParams {
    pub segment_m: f64,
    pub max_match_m: f64,
}

impl Default for SectionParams {
    fn default() -> Self {
        SectionParams {
            segment_m: sectioning::DEFAULT_SEGMENT_M,
            max_match_m: sectioning::DEFAULT_MAX_MATCH_M,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    /// Ground truth when a layer is configured, otherwise the POE labels.
    #[default]
    Auto,
    Poes,
    Gt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtreeParams {
    pub split: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_impurity_decrease: f64,
    pub resample: ResampleStrategy,
    pub labels: LabelSource,
}

impl Default for DtreeParams {
    fn default() -> Self {
        let s = SplitConfig::default();
        DtreeParams {
            split: s.train_fraction,
            max_depth: s.max_depth,
            min_samples_leaf: s.min_samples_leaf,
            min_impurity_decrease: s.min_impurity_decrease,
            resample: ResampleStrategy::None,
            labels: LabelSource::Auto,
        }
    }
}

impl DtreeParams {
    pub fn split_config(&self, seed: u64) -> SplitConfig {
        SplitConfig {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            min_impurity_decrease: self.min_impurity_decrease,
            train_fraction: self.split,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmParams {
    pub k_max: usize,
    pub criterion: gmm::Criterion,
    pub restarts: usize,
    /// `w,s,e,n` selector for the street's records.
    pub bbox: Option<String>,
    /// Alternative selector: records matched to this section.
    pub section_id: Option<usize>,
}

impl Default for GmmParams {
    fn default() -> Self {
        GmmParams {
            k_max: gmm::DEFAULT_K_MAX,
            criterion: gmm::Criterion::Bic,
            restarts: 0,
            bbox: None,
            section_id: None,
        }
    }
}

impl GmmParams {
    pub fn gmm_config(&self, seed: u64) -> GmmConfig {
        GmmConfig {
            k_max: self.k_max,
            criterion: self.criterion,
            restarts: self.restarts,
            seed,
            ..GmmConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub method: Method,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub filter: FilterParams,
    #[serde(default)]
    pub raster: RasterParams,
    #[serde(default)]
    pub sections: SectionParams,
    #[serde(default)]
    pub dtree: DtreeParams,
    #[serde(default)]
    pub gmm: GmmParams,
}

fn default_seed() -> u64 {
    17
}

impl PipelineConfig {
    /// Parses TOML; relative paths are taken relative to `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        for p in [&mut cfg.inputs.poes, &mut cfg.inputs.roads, &mut cfg.inputs.zones, &mut cfg.inputs.gt]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Fully resolved document, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks that every file the method needs is configured and exists.
    pub fn validate(&self) -> Result<()> {
        let need = |name: &str, p: &Option<PathBuf>, required: bool| -> Result<()> {
            match p {
                Some(p) if !p.is_file() => Err(Error::Config(format!("{name} file {} does not exist", p.display()))),
                None if required => Err(Error::Config(format!("method {} needs inputs.{name}", self.method.as_str()))),
                _ => Ok(()),
            }
        };
        need("poes", &self.inputs.poes, true)?;
        let roads_required = matches!(self.method, Method::Sections | Method::Dtree) || self.gmm.section_id.is_some();
        need("roads", &self.inputs.roads, roads_required && self.method != Method::Raster)?;
        need("zones", &self.inputs.zones, false)?;
        need("gt", &self.inputs.gt, false)?;
        if self.method == Method::Gmm {
            if let Some(b) = &self.gmm.bbox {
                GeoBBox::parse_wsen(b).map_err(|e| Error::Config(format!("gmm.bbox: {e}")))?;
            }
        }
        if !(self.dtree.split > 0.0 && self.dtree.split < 1.0) {
            return Err(Error::Config(format!("dtree.split {} not in (0, 1)", self.dtree.split)));
        }
        if !(self.raster.fine_m > 0.0 && self.raster.coarse_m >= self.raster.fine_m) {
            return Err(Error::Config("raster sizes need 0 < fine_m <= coarse_m".into()));
        }
        if !(self.sections.segment_m > 0.0 && self.sections.max_match_m >= 0.0) {
            return Err(Error::Config("sections.segment_m must be positive".into()));
        }
        Ok(())
    }
}

/// Metrics of one method against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GtMetrics {
    pub method: Method,
    /// What was compared: records, cells or segments.
    pub unit: &'static str,
    pub skipped_outside_gt: usize,
    #[serde(flatten)]
    pub report: EvalReport,
}

fn finish_metrics(method: Method, unit: &'static str, pairs: Vec<(Label, Label)>, skipped: usize) -> Result<GtMetrics> {
    if pairs.is_empty() {
        return Err(Error::Data("predictions and ground truth do not overlap".into()));
    }
    Ok(GtMetrics {
        method,
        unit,
        skipped_outside_gt: skipped,
        report: dtree::evaluate_pairs(&pairs)?,
    })
}

/// Majority ground-truth label over sample points; ties go to `noParking`.
fn majority_label(gt: &GroundTruth, points: &[GeoPoint]) -> Label {
    let yes = points.iter().filter(|p| gt.label_at(**p) == Label::YesParking).count();
    if 2 * yes > points.len() {
        Label::YesParking
    } else {
        Label::NoParking
    }
}

/// Predictions at record positions against the ground-truth label there.
pub fn evaluate_points(predictions: &[(GeoPoint, Label)], gt: &GroundTruth) -> Result<GtMetrics> {
    let extent = gt.extent();
    let (inside, outside): (Vec<_>, Vec<_>) = predictions.iter().partition(|(p, _)| extent.contains(*p));
    let pairs = inside.iter().map(|(p, pred)| (*pred, gt.label_at(*p))).collect();
    finish_metrics(Method::Dtree, "records", pairs, outside.len())
}

/// Line features with a `class` property: green counts as `yesParking`,
/// red and undetermined as `noParking`. Truth is the majority label at five
/// points spread along each segment.
pub fn evaluate_segments(segments: &[Feature], gt: &GroundTruth) -> Result<GtMetrics> {
    let extent = gt.extent();
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for f in segments {
        let Geometry::LineString(line) = &f.geometry else { continue };
        let pred = if f.str_prop("class") == Some(SegmentClass::Green.as_str()) {
            Label::YesParking
        } else {
            Label::NoParking
        };
        let samples = sample_line(line, 5);
        if !samples.iter().any(|p| extent.contains(*p)) {
            skipped += 1;
            continue;
        }
        pairs.push((pred, majority_label(gt, &samples)));
    }
    finish_metrics(Method::Sections, "segments", pairs, skipped)
}

/// Polygon features with a boolean `valid` property; truth is the majority
/// label over a 3 x 3 lattice inside each cell.
pub fn evaluate_cells(cells: &[Feature], gt: &GroundTruth) -> Result<GtMetrics> {
    let extent = gt.extent();
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for f in cells {
        let Geometry::Polygon(rings) = &f.geometry else { continue };
        let pred = if f.properties.get("valid").and_then(Value::as_bool) == Some(true) {
            Label::YesParking
        } else {
            Label::NoParking
        };
        let b = GeoBBox::from_points(rings[0].iter()).ok_or_else(|| Error::Data("empty cell polygon".into()))?;
        let mut samples = Vec::with_capacity(9);
        for i in 0..3 {
            for j in 0..3 {
                let fy = (i as f64 + 0.5) / 3.0;
                let fx = (j as f64 + 0.5) / 3.0;
                samples.push(GeoPoint {
                    lat: b.min_lat + fy * (b.max_lat - b.min_lat),
                    lon: b.min_lon + fx * (b.max_lon - b.min_lon),
                });
            }
        }
        if !samples.iter().any(|p| extent.contains(*p)) {
            skipped += 1;
            continue;
        }
        pairs.push((pred, majority_label(gt, &samples)));
    }
    finish_metrics(Method::Raster, "cells", pairs, skipped)
}

fn sample_line(line: &[GeoPoint], k: usize) -> Vec<GeoPoint> {
    if line.len() < 2 {
        return line.to_vec();
    }
    let lens: Vec<f64> = line.windows(2).map(|w| crate::geo::haversine_distance(w[0], w[1])).collect();
    let total: f64 = lens.iter().sum();
    (0..k)
        .map(|i| {
            let mut t = (i as f64 + 0.5) / k as f64 * total;
            for (w, &l) in line.windows(2).zip(&lens) {
                if t <= l || l == 0.0 {
                    let f = if l > 0.0 { t / l } else { 0.0 };
                    return GeoPoint {
                        lat: w[0].lat + f * (w[1].lat - w[0].lat),
                        lon: w[0].lon + f * (w[1].lon - w[0].lon),
                    };
                }
                t -= l;
            }
            *line.last().expect("non-empty")
        })
        .collect()
}

/// Reads a predictions CSV (`id, lat, lon, predicted[, label]`).
pub fn read_predictions<R: Read>(reader: R, source: &Path) -> Result<Vec<(String, GeoPoint, Label)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::input(source, format!("missing column {name}")))
    };
    let (id, lat, lon, pred) = (col("id")?, col("lat")?, col("lon")?, col("predicted")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |c: usize| rec.get(c).unwrap_or_default();
        let num = |c: usize| -> Result<f64> {
            field(c)
                .trim()
                .parse()
                .map_err(|_| Error::input(source, format!("line {line}: bad number {:?}", field(c))))
        };
        let p = GeoPoint::new(num(lat)?, num(lon)?).map_err(|e| Error::input(source, format!("line {line}: {e}")))?;
        let label: Label = field(pred).parse().map_err(|e: Error| Error::input(source, format!("line {line}: {e}")))?;
        out.push((field(id).to_owned(), p, label));
    }
    Ok(out)
}

pub fn write_predictions<W: Write>(writer: W, rows: &[FeatureRow], predicted: &[Label]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "lat", "lon", "predicted", "label"])?;
    for (r, p) in rows.iter().zip(predicted) {
        w.write_record([
            r.id.clone(),
            r.position.lat.to_string(),
            r.position.lon.to_string(),
            p.as_str().to_owned(),
            r.label.map(|l| l.as_str().to_owned()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn save_predictions(path: &Path, rows: &[FeatureRow], predicted: &[Label]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions(std::io::BufWriter::new(file), rows, predicted)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Replaces record labels with the ground-truth label at each position.
pub fn label_from_gt(rows: &mut [FeatureRow], gt: &GroundTruth) {
    for r in rows {
        r.label = Some(gt.label_at(r.position));
    }
}

/// Records inside `bbox`, or matched to `section_id`, or all of them.
pub fn select_street(
    poes: &[PoeRecord],
    bbox: Option<&GeoBBox>,
    section: Option<(&RoadNetwork, usize, f64)>,
) -> Result<Vec<GeoPoint>> {
    let mut pts: Vec<GeoPoint> = poes.iter().map(|p| p.position).collect();
    if let Some(b) = bbox {
        pts.retain(|p| b.contains(*p));
    }
    if let Some((net, id, max_dist)) = section {
        if id >= net.sections.len() {
            return Err(Error::InvalidArgument(format!("section {id} does not exist ({} sections)", net.sections.len())));
        }
        pts.retain(|p| net.match_point(*p, max_dist).is_some_and(|m| m.section == id));
    }
    if pts.len() < 4 {
        return Err(Error::Data(format!("only {} records selected for the street", pts.len())));
    }
    Ok(pts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub outputs: Vec<PathBuf>,
    pub filter: FilterReport,
    pub metrics: Option<Value>,
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    outputs: Vec<PathBuf>,
    filter: Option<FilterReport>,
    stages: Vec<&'static str>,
}

impl Run<'_> {
    fn out(&mut self, name: &str) -> PathBuf {
        let p = self.cfg.output_dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn manifest(&self, status: &str, error: Option<&Error>) -> Result<Value> {
        let mut inputs = BTreeMap::new();
        let i = &self.cfg.inputs;
        for (name, p) in [("poes", &i.poes), ("roads", &i.roads), ("zones", &i.zones), ("gt", &i.gt)] {
            if let Some(p) = p {
                inputs.insert(name, json!({"path": p, "sha256": sha256_file(p).ok()}));
            }
        }
        let mut outputs = Vec::new();
        for p in &self.outputs {
            if p.is_file() {
                let name = p.strip_prefix(&self.cfg.output_dir).unwrap_or(p);
                outputs.push(json!({"path": name, "sha256": sha256_file(p)?}));
            }
        }
        let config: Value = toml::from_str(&self.cfg.to_toml()).map_err(|e| Error::Config(e.to_string()))?;
        Ok(json!({
            "status": status,
            "error": error.map(|e| e.to_string()),
            "stages": self.stages,
            "config": config,
            "inputs": inputs,
            "filter": self.filter,
            "outputs": outputs,
        }))
    }
}

/// Ingest, then the configured method; writes outputs and `manifest.json`
/// into the output directory. On failure a manifest with status `failed` is
/// still written.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let mut run = Run {
        cfg,
        outputs: Vec::new(),
        filter: None,
        stages: Vec::new(),
    };
    let result = run_stages(&mut run);
    let manifest_path = cfg.output_dir.join("manifest.json");
    match result {
        Ok(metrics) => {
            write_json(&manifest_path, &run.manifest("ok", None)?)?;
            let mut outputs = run.outputs.clone();
            outputs.push(manifest_path);
            Ok(RunReport {
                outputs,
                filter: run.filter.unwrap_or_default(),
                metrics,
            })
        }
        Err(e) => {
            if let Ok(m) = run.manifest("failed", Some(&e)) {
                let _ = write_json(&manifest_path, &m);
            }
            Err(e)
        }
    }
}

fn run_stages(run: &mut Run) -> Result<Option<Value>> {
    let cfg = run.cfg;
    let poes_path = cfg.inputs.poes.as_ref().expect("validated");
    let zones = match &cfg.inputs.zones {
        Some(p) => ingest::load_zones(p)?,
        None => Vec::new(),
    };
    let poes = ingest::load_poes(poes_path)?.into_checked()?;
    let (kept, report) = ingest::apply_filters(poes, &zones, cfg.filter.min_duration_s)?;
    log::info!(
        "ingest: {} in, {} short, {} in unfeasible zones, {} kept",
        report.total_in,
        report.dropped_short_duration,
        report.dropped_in_unfeasible_zone,
        report.retained
    );
    run.filter = Some(report);
    run.stages.push("ingest");
    let filtered = run.out("filtered.csv");
    ingest::save_poes(&filtered, &kept)?;
    if kept.is_empty() {
        return Err(Error::Data("no records left after filtering".into()));
    }
    let gt = cfg.inputs.gt.as_deref().map(GroundTruth::load).transpose()?;

    let metrics = match cfg.method {
        Method::Raster => {
            let spec = GridSpec::covering(&kept, cfg.raster.fine_m, cfg.raster.coarse_m)?;
            let r = raster::build_raster(&kept, &spec);
            let classes = raster::classify_cells(&r, cfg.raster.mean_mode());
            let cells = raster::to_features(&classes, &spec);
            geojson::write(&run.out("raster.geojson"), &cells)?;
            run.stages.push("raster");
            gt.map(|gt| evaluate_cells(&cells, &gt)).transpose()?.map(serde_json::to_value).transpose()?
        }
        Method::Sections => {
            let roads = sectioning::load_roads(cfg.inputs.roads.as_ref().expect("validated"))?;
            let network = RoadNetwork::build(roads, cfg.sections.segment_m)?;
            let pts: Vec<GeoPoint> = kept.iter().map(|p| p.position).collect();
            let (loads, unmatched) = sectioning::sectionize(&network, &pts, cfg.sections.max_match_m);
            log::info!("sections: {} sections, {unmatched} records unmatched", network.sections.len());
            let segs = sectioning::to_features(&network, &loads);
            geojson::write(&run.out("sections.geojson"), &segs)?;
            run.stages.push("sections");
            gt.map(|gt| evaluate_segments(&segs, &gt)).transpose()?.map(serde_json::to_value).transpose()?
        }
        Method::Dtree => Some(run_dtree(run, &kept, &zones, gt.as_ref())?),
        Method::Gmm => {
            let bbox = cfg.gmm.bbox.as_deref().map(GeoBBox::parse_wsen).transpose()?;
            let network = match (&cfg.inputs.roads, cfg.gmm.section_id) {
                (Some(p), Some(_)) => Some(RoadNetwork::build(sectioning::load_roads(p)?, cfg.sections.segment_m)?),
                _ => None,
            };
            let section = network.as_ref().zip(cfg.gmm.section_id).map(|(n, id)| (n, id, cfg.sections.max_match_m));
            let pts = select_street(&kept, bbox.as_ref(), section)?;
            let fit = gmm::fit_street(&pts, &cfg.gmm.gmm_config(cfg.seed))?;
            write_json(&run.out("gmm.json"), &fit.to_json())?;
            geojson::write(&run.out("boundaries.geojson"), &fit.to_features())?;
            run.stages.push("gmm");
            None
        }
    };
    if let Some(m) = &metrics {
        write_json(&run.out("metrics.json"), m)?;
    }
    Ok(metrics)
}

fn run_dtree(run: &mut Run, kept: &[PoeRecord], zones: &[ZonePolygon], gt: Option<&GroundTruth>) -> Result<Value> {
    let cfg = run.cfg;
    let roads = sectioning::load_roads(cfg.inputs.roads.as_ref().expect("validated"))?;
    let network = RoadNetwork::build(roads, cfg.sections.segment_m)?;
    let ctx = MapContext::new(&network, zones, DEFAULT_CENTER);
    let mut rows = features::enrich_all(kept, &ctx);
    match (cfg.dtree.labels, gt) {
        (LabelSource::Gt | LabelSource::Auto, Some(gt)) => label_from_gt(&mut rows, gt),
        (LabelSource::Gt, None) => return Err(Error::Config("dtree.labels = \"gt\" needs inputs.gt".into())),
        _ => {}
    }
    features::save_features(&run.out("features.csv"), &rows)?;
    run.stages.push("enrich");

    let labelled: Vec<FeatureRow> = rows.into_iter().filter(|r| r.label.is_some()).collect();
    if labelled.len() < 2 {
        return Err(Error::Data("fewer than 2 labelled records for training".into()));
    }
    let split = cfg.dtree.split_config(cfg.seed);
    let (train_rows, test_rows) = dtree::split_dataset(&labelled, split.train_fraction, cfg.seed)?;
    let train = dtree::resample(&Sample::from_rows(&train_rows), cfg.dtree.resample, cfg.seed)?;
    let tree = dtree::train(&train, &split)?;
    dtree::save_tree(&run.out("tree.json"), &tree)?;
    run.stages.push("train");

    let test = Sample::from_rows(&test_rows);
    let predicted: Vec<Label> = test_rows.iter().map(|r| tree.predict(&r.features)).collect();
    save_predictions(&run.out("predictions.csv"), &test_rows, &predicted)?;
    let report = dtree::evaluate(&tree, &test)?;
    run.stages.push("evaluate");
    Ok(json!({
        "method": Method::Dtree,
        "unit": "records",
        "train_size": train_rows.len(),
        "train_size_after_resampling": train.len(),
        "test_size": test.len(),
        "tree_depth": tree.depth(),
        "tree_leaves": tree.leaf_count(),
        "report": report,
    }))
}
