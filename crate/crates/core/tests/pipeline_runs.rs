use std::fs;
use std::path::Path;

use parkgrid::pipeline::{run_pipeline, PipelineConfig};
use parkgrid::synth::{self, Preset, SynthConfig};
use serde_json::Value;

fn city(dir: &Path) {
    let cfg = SynthConfig {
        n: 3_000,
        ..SynthConfig::preset(Preset::GridCity)
    };
    synth::generate(&cfg).unwrap().write(&dir.join("city")).unwrap();
    synth::generate(&SynthConfig::preset(Preset::CrossingStreet))
        .unwrap()
        .write(&dir.join("street"))
        .unwrap();
}

fn config(dir: &Path, body: &str) -> PipelineConfig {
    PipelineConfig::from_toml(body, dir).unwrap()
}

fn manifest(dir: &Path, out: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(out).join("manifest.json")).unwrap()).unwrap()
}

const INPUTS: &str = "[inputs]\npoes = \"city/poes.csv\"\nroads = \"city/roads.geojson\"\nzones = \"city/zones.geojson\"\ngt = \"city/gt.geojson\"\n";

#[test]
fn every_method_runs_and_scores_against_gt() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    city(dir);
    for method in ["raster", "sections", "dtree"] {
        let cfg = config(dir, &format!("method = \"{method}\"\noutput_dir = \"{method}\"\n{INPUTS}"));
        let report = run_pipeline(&cfg).unwrap();
        assert!(report.filter.reconciles());
        let m = report.metrics.expect("gt configured");
        let acc = m.get("accuracy").or_else(|| m["report"].get("accuracy")).unwrap().as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc), "{method}: {acc}");
        let man = manifest(dir, method);
        assert_eq!(man["status"], "ok");
        assert_eq!(man["inputs"]["poes"]["sha256"].as_str().unwrap().len(), 64);
        assert!(man["outputs"].as_array().unwrap().iter().any(|o| o["path"] == "metrics.json"));
    }
    let gmm = config(dir, "method = \"gmm\"\noutput_dir = \"gmm\"\n[inputs]\npoes = \"street/poes.csv\"\n");
    run_pipeline(&gmm).unwrap();
    let fit: Value = serde_json::from_str(&fs::read_to_string(dir.join("gmm/gmm.json")).unwrap()).unwrap();
    assert_eq!(fit["k"], 2);
}

#[test]
fn dtree_with_gt_labels_beats_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    city(dir);
    let cfg = config(dir, &format!("method = \"dtree\"\noutput_dir = \"out\"\n{INPUTS}[dtree]\nlabels = \"gt\"\n"));
    let m = run_pipeline(&cfg).unwrap().metrics.unwrap();
    assert!(m["report"]["accuracy"].as_f64().unwrap() > m["report"]["majority_baseline"].as_f64().unwrap());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    city(dir);
    let cfg = config(dir, &format!("method = \"sections\"\noutput_dir = \"out\"\n{INPUTS}"));
    run_pipeline(&cfg).unwrap();
    let first = fs::read(dir.join("out/manifest.json")).unwrap();
    run_pipeline(&cfg).unwrap();
    assert_eq!(first, fs::read(dir.join("out/manifest.json")).unwrap());
}

#[test]
fn failure_leaves_a_failed_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("poes.csv"),
        "id,lat,lon,timestamp,duration_s,label\na,52.5,13.4,2019-01-01T00:00:00Z,60,\n",
    )
    .unwrap();
    let cfg = config(dir, "method = \"raster\"\noutput_dir = \"out\"\n[inputs]\npoes = \"poes.csv\"\n");
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let man = manifest(dir, "out");
    assert_eq!(man["status"], "failed");
    assert_eq!(man["stages"], serde_json::json!(["ingest"]));
    assert_eq!(man["filter"]["dropped_short_duration"], 1);
}

#[test]
fn gmm_by_section_id_needs_a_real_section() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    city(dir);
    let body = "method = \"gmm\"\noutput_dir = \"out\"\n[inputs]\npoes = \"street/poes.csv\"\nroads = \"street/roads.geojson\"\n[gmm]\nsection_id = 0\n";
    run_pipeline(&config(dir, body)).unwrap();
    let bad = body.replace("section_id = 0", "section_id = 99");
    assert_eq!(run_pipeline(&config(dir, &bad)).unwrap_err().exit_code(), 2);
}
