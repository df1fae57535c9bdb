use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use parkgrid::dtree::{self, ResampleStrategy, Sample, SplitConfig};
use parkgrid::features::{self, MapContext, DEFAULT_CENTER};
use parkgrid::geo::{GeoBBox, GeoPoint};
use parkgrid::gmm::{self, Criterion, GmmConfig};
use parkgrid::ingest::{self, Label};
use parkgrid::pipeline::{self, GroundTruth, PipelineConfig};
use parkgrid::raster::{self, GridSpec, MeanMode};
use parkgrid::sectioning::{self, RoadNetwork};
use parkgrid::synth::{self, Preset, SynthConfig};
use parkgrid::{geojson, Error, Result};

/// Infer valid on-street parking maps from park-out event records.
#[derive(Parser)]
#[command(name = "parkgrid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Drop short stops and records inside unfeasible zones.
    Filter(FilterArgs),
    /// Dual-resolution raster classification.
    Rasterize(RasterizeArgs),
    /// Road sections split into segments with load ratios.
    Sectionize(SectionizeArgs),
    /// Compute the map-feature attributes of each record.
    Enrich(EnrichArgs),
    /// Train a decision tree on an enriched feature table.
    Train(TrainArgs),
    /// Apply a trained tree to an enriched feature table.
    Predict(PredictArgs),
    /// Fit a 1-D Gaussian mixture along one street.
    FitGaussians(FitArgs),
    /// Generate a synthetic city with ground truth.
    Synth(SynthArgs),
    /// Score a method output against a ground-truth layer.
    Evaluate(EvaluateArgs),
    /// Run a full pipeline from a TOML config.
    Run(RunArgs),
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    poes: PathBuf,
    #[arg(long)]
    zones: Option<PathBuf>,
    #[arg(long, default_value_t = ingest::DEFAULT_MIN_DURATION_S)]
    min_duration_s: f64,
    #[arg(long)]
    out: PathBuf,
    /// Filter counts as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Duration histogram of the input as JSON.
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 900.0)]
    bin_s: f64,
}

#[derive(Args)]
struct RasterizeArgs {
    #[arg(long)]
    poes: PathBuf,
    #[arg(long, default_value_t = raster::DEFAULT_FINE_M)]
    fine_m: f64,
    #[arg(long, default_value_t = raster::DEFAULT_COARSE_M)]
    coarse_m: f64,
    #[arg(long)]
    mean_over_all_cells: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SectionizeArgs {
    #[arg(long)]
    poes: PathBuf,
    #[arg(long)]
    roads: PathBuf,
    #[arg(long, default_value_t = sectioning::DEFAULT_SEGMENT_M)]
    segment_m: f64,
    #[arg(long, default_value_t = sectioning::DEFAULT_MAX_MATCH_M)]
    max_match_m: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnrichArgs {
    #[arg(long)]
    poes: PathBuf,
    #[arg(long)]
    roads: PathBuf,
    #[arg(long)]
    zones: Option<PathBuf>,
    /// Relabel records from this ground-truth layer.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// City center as `lat,lon`.
    #[arg(long)]
    center: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long, default_value = "none")]
    resample: ResampleStrategy,
    #[arg(long, default_value_t = 8)]
    max_depth: usize,
    #[arg(long, default_value_t = 20)]
    min_samples_leaf: usize,
    #[arg(long, default_value_t = 1e-4)]
    min_impurity_decrease: f64,
    #[arg(long)]
    tree_out: PathBuf,
    /// Held-out evaluation report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    poes: PathBuf,
    /// Street selector as `west,south,east,north`.
    #[arg(long, conflicts_with = "section_id")]
    bbox: Option<String>,
    #[arg(long, requires = "roads")]
    section_id: Option<usize>,
    #[arg(long)]
    roads: Option<PathBuf>,
    #[arg(long, default_value_t = sectioning::DEFAULT_MAX_MATCH_M)]
    max_match_m: f64,
    #[arg(long, default_value_t = gmm::DEFAULT_K_MAX)]
    k_max: usize,
    #[arg(long, default_value = "bic")]
    criterion: Criterion,
    #[arg(long, default_value_t = 0)]
    restarts: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Boundary points as GeoJSON.
    #[arg(long)]
    boundaries: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "grid-city")]
    preset: Preset,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    noise_m: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "method_output")]
struct EvalInput {
    /// Predictions CSV from `predict`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Raster GeoJSON from `rasterize`.
    #[arg(long)]
    raster: Option<PathBuf>,
    /// Segment GeoJSON from `sectionize`.
    #[arg(long)]
    sections: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gt: PathBuf,
    #[command(flatten)]
    input: EvalInput,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PARKGRID_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("parkgrid: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Filter(a) => filter(a),
        Command::Rasterize(a) => rasterize(a),
        Command::Sectionize(a) => sectionize(a),
        Command::Enrich(a) => enrich(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::FitGaussians(a) => fit_gaussians(a),
        Command::Synth(a) => synth(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Run(a) => run(a),
    }
}

fn load_checked_poes(path: &Path) -> Result<Vec<ingest::PoeRecord>> {
    let load = ingest::load_poes(path)?;
    for e in &load.errors {
        log::warn!("{}: skipped line {}: {}", path.display(), e.line, e.message);
    }
    load.into_checked()
}

fn load_zones(path: Option<&Path>) -> Result<Vec<ingest::ZonePolygon>> {
    path.map(ingest::load_zones).transpose().map(Option::unwrap_or_default)
}

fn filter(a: FilterArgs) -> Result<()> {
    let poes = load_checked_poes(&a.poes)?;
    if let Some(h) = &a.histogram {
        let hist = ingest::duration_histogram(&poes, a.bin_s, ingest::DEFAULT_MAX_HISTOGRAM_S)?;
        pipeline::write_json(h, &hist)?;
    }
    let zones = load_zones(a.zones.as_deref())?;
    let (kept, report) = ingest::apply_filters(poes, &zones, a.min_duration_s)?;
    log::info!("kept {} of {} records", report.retained, report.total_in);
    ingest::save_poes(&a.out, &kept)?;
    if let Some(r) = &a.report {
        pipeline::write_json(r, &report)?;
    }
    Ok(())
}

fn rasterize(a: RasterizeArgs) -> Result<()> {
    let poes = load_checked_poes(&a.poes)?;
    let spec = GridSpec::covering(&poes, a.fine_m, a.coarse_m)?;
    let r = raster::build_raster(&poes, &spec);
    let mode = if a.mean_over_all_cells {
        MeanMode::AllCells
    } else {
        MeanMode::OccupiedCells
    };
    let classes = raster::classify_cells(&r, mode);
    geojson::write(&a.out, &raster::to_features(&classes, &spec))
}

fn sectionize(a: SectionizeArgs) -> Result<()> {
    let poes = load_checked_poes(&a.poes)?;
    let network = RoadNetwork::build(sectioning::load_roads(&a.roads)?, a.segment_m)?;
    let pts: Vec<GeoPoint> = poes.iter().map(|p| p.position).collect();
    let (loads, unmatched) = sectioning::sectionize(&network, &pts, a.max_match_m);
    log::info!("{} sections, {unmatched} records unmatched", network.sections.len());
    geojson::write(&a.out, &sectioning::to_features(&network, &loads))
}

fn enrich(a: EnrichArgs) -> Result<()> {
    let poes = load_checked_poes(&a.poes)?;
    let network = RoadNetwork::build(sectioning::load_roads(&a.roads)?, sectioning::DEFAULT_SEGMENT_M)?;
    let zones = load_zones(a.zones.as_deref())?;
    let center = match &a.center {
        Some(s) => GeoPoint::parse_lat_lon(s)?,
        None => DEFAULT_CENTER,
    };
    let ctx = MapContext::new(&network, &zones, center);
    let mut rows = features::enrich_all(&poes, &ctx);
    if let Some(gt) = &a.gt {
        pipeline::label_from_gt(&mut rows, &GroundTruth::load(gt)?);
    }
    features::save_features(&a.out, &rows)
}

fn train(a: TrainArgs) -> Result<()> {
    let rows = features::load_features(&a.features)?;
    let samples = Sample::from_rows(&rows);
    let cfg = SplitConfig {
        max_depth: a.max_depth,
        min_samples_leaf: a.min_samples_leaf,
        min_impurity_decrease: a.min_impurity_decrease,
        train_fraction: a.split,
        seed: a.seed,
    };
    cfg.validate()?;
    let (train_set, test_set) = dtree::split_dataset(&samples, a.split, a.seed)?;
    let train_set = dtree::resample(&train_set, a.resample, a.seed)?;
    let tree = dtree::train(&train_set, &cfg)?;
    dtree::save_tree(&a.tree_out, &tree)?;
    if let Some(path) = &a.report {
        let report = dtree::evaluate(&tree, &test_set)?;
        log::info!(
            "accuracy {:.4}, majority baseline {:.4}",
            report.accuracy,
            report.majority_baseline
        );
        pipeline::write_json(
            path,
            &json!({
                "train_size": train_set.len(),
                "test_size": test_set.len(),
                "tree_depth": tree.depth(),
                "tree_leaves": tree.leaf_count(),
                "report": report,
            }),
        )?;
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let tree = dtree::load_tree(&a.tree)?;
    let rows = features::load_features(&a.features)?;
    let predicted: Vec<Label> = rows.iter().map(|r| tree.predict(&r.features)).collect();
    pipeline::save_predictions(&a.out, &rows, &predicted)
}

fn fit_gaussians(a: FitArgs) -> Result<()> {
    let poes = load_checked_poes(&a.poes)?;
    let bbox = a.bbox.as_deref().map(GeoBBox::parse_wsen).transpose()?;
    let network = match (&a.roads, a.section_id) {
        (Some(r), Some(_)) => Some(RoadNetwork::build(sectioning::load_roads(r)?, sectioning::DEFAULT_SEGMENT_M)?),
        _ => None,
    };
    let section = network.as_ref().zip(a.section_id).map(|(n, id)| (n, id, a.max_match_m));
    let pts = pipeline::select_street(&poes, bbox.as_ref(), section)?;
    let cfg = GmmConfig {
        k_max: a.k_max,
        criterion: a.criterion,
        restarts: a.restarts,
        seed: a.seed,
        ..GmmConfig::default()
    };
    let fit = gmm::fit_street(&pts, &cfg)?;
    pipeline::write_json(&a.out, &fit.to_json())?;
    if let Some(b) = &a.boundaries {
        geojson::write(b, &fit.to_features())?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::preset(a.preset);
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(s) = a.noise_m {
        cfg.noise_m = s;
    }
    let data = synth::generate(&cfg)?;
    for p in data.write(&a.out_dir)? {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let gt = GroundTruth::load(&a.gt)?;
    let metrics = if let Some(p) = &a.input.predictions {
        let file = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
        let preds: Vec<(GeoPoint, Label)> = pipeline::read_predictions(file, p)?
            .into_iter()
            .map(|(_, pos, label)| (pos, label))
            .collect();
        pipeline::evaluate_points(&preds, &gt)?
    } else if let Some(p) = &a.input.raster {
        pipeline::evaluate_cells(&geojson::read(p)?, &gt)?
    } else {
        let p = a.input.sections.as_ref().expect("clap group");
        pipeline::evaluate_segments(&geojson::read(p)?, &gt)?
    };
    match &a.out {
        Some(out) => pipeline::write_json(out, &metrics),
        None => print_line(&serde_json::to_string_pretty(&metrics)?),
    }
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&a.config)?;
    let report = pipeline::run_pipeline(&cfg)?;
    for p in &report.outputs {
        print_line(&p.display().to_string())?;
    }
    Ok(())
}

fn print_line(s: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{s}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}
