//! Binary CART-style decision tree over [`FeatureVector`]s.
//!
//! Splits maximize the decrease in Gini impurity. Numeric conditions read
//! `value <= threshold`, categorical ones `side in {categories}`; a true
//! condition descends left. Equal-gain candidates are ordered by attribute
//! name, then by threshold, so training is deterministic.

use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::features::{Attribute, FeatureRow, FeatureVector, SideType};
use crate::ingest::Label;

/// Gains closer than this are treated as equal.
const GAIN_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub label: Label,
}

impl Sample {
    /// Labelled rows only.
    pub fn from_rows(rows: &[FeatureRow]) -> Vec<Sample> {
        rows.iter()
            .filter_map(|r| r.label.map(|label| Sample { features: r.features, label }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    #[serde(rename = "yesParking")]
    pub yes: usize,
    #[serde(rename = "noParking")]
    pub no: usize,
}

impl ClassCounts {
    pub fn of<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let mut c = ClassCounts::default();
        for s in samples {
            c.add(s.label);
        }
        c
    }

    pub fn add(&mut self, label: Label) {
        match label {
            Label::YesParking => self.yes += 1,
            Label::NoParking => self.no += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.yes + self.no
    }

    /// Majority label; ties go to `noParking`.
    pub fn majority(&self) -> Label {
        if self.yes > self.no {
            Label::YesParking
        } else {
            Label::NoParking
        }
    }

    fn gini(&self) -> f64 {
        gini_of(self.yes, self.no)
    }
}

fn gini_of(a: usize, b: usize) -> f64 {
    let n = (a + b) as f64;
    let (pa, pb) = (a as f64 / n, b as f64 / n);
    1.0 - (pa * pa + pb * pb)
}

/// Gini impurity `1 - sum p_i^2` of per-class counts.
pub fn gini(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("gini of empty counts".into()));
    }
    let n = total as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Threshold { attribute: Attribute, threshold: f64 },
    Category { attribute: Attribute, categories: Vec<SideType> },
}

impl Condition {
    pub fn attribute(&self) -> Attribute {
        match self {
            Condition::Threshold { attribute, .. } | Condition::Category { attribute, .. } => *attribute,
        }
    }

    pub fn holds(&self, fv: &FeatureVector) -> bool {
        match self {
            Condition::Threshold { attribute, threshold } => {
                fv.numeric(*attribute).is_some_and(|v| v <= *threshold)
            }
            Condition::Category { categories, .. } => categories.contains(&fv.side_type_input),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal {
        condition: Condition,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        label: Label,
        counts: ClassCounts,
    },
}

impl TreeNode {
    pub fn predict(&self, fv: &FeatureVector) -> Label {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { label, .. } => return *label,
                TreeNode::Internal { condition, left, right } => {
                    node = if condition.holds(fv) { left } else { right };
                }
            }
        }
    }

    /// Index of the leaf reached by `fv`, counting leaves left to right.
    pub fn leaf_index(&self, fv: &FeatureVector) -> usize {
        let mut node = self;
        let mut offset = 0;
        loop {
            match node {
                TreeNode::Leaf { .. } => return offset,
                TreeNode::Internal { condition, left, right } => {
                    if condition.holds(fv) {
                        node = left;
                    } else {
                        offset += left.leaf_count();
                        node = right;
                    }
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Split attributes in pre-order.
    pub fn split_attributes(&self) -> Vec<Attribute> {
        let mut out = Vec::new();
        fn walk(n: &TreeNode, out: &mut Vec<Attribute>) {
            if let TreeNode::Internal { condition, left, right } = n {
                out.push(condition.attribute());
                walk(left, out);
                walk(right, out);
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn to_json(&self) -> Value {
        match self {
            TreeNode::Leaf { label, counts } => json!({
                "label": label.as_str(),
                "counts": {"yesParking": counts.yes, "noParking": counts.no},
            }),
            TreeNode::Internal { condition, left, right } => {
                let mut m = Map::new();
                m.insert("attribute".into(), condition.attribute().name().into());
                match condition {
                    Condition::Threshold { threshold, .. } => {
                        m.insert("threshold".into(), json!(threshold));
                    }
                    Condition::Category { categories, .. } => {
                        m.insert("categories".into(), json!(categories.iter().map(|c| c.as_str()).collect::<Vec<_>>()));
                    }
                }
                m.insert("left".into(), left.to_json());
                m.insert("right".into(), right.to_json());
                Value::Object(m)
            }
        }
    }

    pub fn from_json(v: &Value) -> Result<TreeNode> {
        let bad = |m: &str| Error::Data(format!("tree json: {m}"));
        if let Some(label) = v.get("label") {
            let label: Label = label.as_str().ok_or_else(|| bad("label is not a string"))?.parse()?;
            let counts: ClassCounts = serde_json::from_value(v.get("counts").cloned().ok_or_else(|| bad("leaf without counts"))?)?;
            if counts.total() == 0 {
                return Err(bad("leaf with empty counts"));
            }
            return Ok(TreeNode::Leaf { label, counts });
        }
        let attribute: Attribute = v
            .get("attribute")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("node without attribute or label"))?
            .parse()?;
        let condition = if attribute.is_categorical() {
            let cats = v
                .get("categories")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("categorical node without categories"))?
                .iter()
                .map(|c| c.as_str().ok_or_else(|| bad("category is not a string"))?.parse())
                .collect::<Result<Vec<SideType>>>()?;
            Condition::Category { attribute, categories: cats }
        } else {
            let threshold = v
                .get("threshold")
                .and_then(Value::as_f64)
                .ok_or_else(|| bad("numeric node without threshold"))?;
            Condition::Threshold { attribute, threshold }
        };
        let child = |k: &str| -> Result<Box<TreeNode>> {
            Ok(Box::new(TreeNode::from_json(v.get(k).ok_or_else(|| bad("missing child"))?)?))
        };
        Ok(TreeNode::Internal {
            condition,
            left: child("left")?,
            right: child("right")?,
        })
    }
}

pub fn export_tree(tree: &TreeNode) -> String {
    let mut s = serde_json::to_string_pretty(&tree.to_json()).expect("tree serializes");
    s.push('\n');
    s
}

pub fn import_tree(text: &str) -> Result<TreeNode> {
    TreeNode::from_json(&serde_json::from_str(text)?)
}

pub fn save_tree(path: &Path, tree: &TreeNode) -> Result<()> {
    fs::write(path, export_tree(tree)).map_err(|e| Error::io(path, e))
}

pub fn load_tree(path: &Path) -> Result<TreeNode> {
    import_tree(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_impurity_decrease: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            max_depth: 8,
            min_samples_leaf: 20,
            min_impurity_decrease: 1e-4,
            train_fraction: 0.8,
            seed: 17,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("train fraction {} not in (0, 1)", self.train_fraction)));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidArgument("min_samples_leaf must be at least 1".into()));
        }
        if !(self.min_impurity_decrease >= 0.0) {
            return Err(Error::InvalidArgument("min_impurity_decrease must be >= 0".into()));
        }
        Ok(())
    }

    /// No depth, leaf-size or gain limits: grows until every leaf is pure or
    /// holds identical feature vectors.
    pub fn unlimited() -> Self {
        SplitConfig {
            max_depth: usize::MAX,
            min_samples_leaf: 1,
            min_impurity_decrease: 0.0,
            ..SplitConfig::default()
        }
    }
}

/// Shuffles with `seed` and splits off `round(fraction * n)` training items,
/// kept within `[1, n - 1]` so both parts are non-empty.
pub fn split_dataset<T: Clone>(samples: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples to split, got {n}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..n_train].iter().map(|&i| samples[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleStrategy {
    #[default]
    None,
    OversampleMinority,
    UndersampleMajority,
    Bootstrap,
}

impl std::str::FromStr for ResampleStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => ResampleStrategy::None,
            "oversample_minority" | "oversample" => ResampleStrategy::OversampleMinority,
            "undersample_majority" | "undersample" => ResampleStrategy::UndersampleMajority,
            "bootstrap" => ResampleStrategy::Bootstrap,
            other => return Err(Error::InvalidArgument(format!("unknown resample strategy {other:?}"))),
        })
    }
}

pub fn resample(samples: &[Sample], strategy: ResampleStrategy, seed: u64) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (yes, no): (Vec<Sample>, Vec<Sample>) = samples.iter().partition(|s| s.label == Label::YesParking);
    let two_classes = || {
        if yes.is_empty() || no.is_empty() {
            Err(Error::InvalidArgument("resampling needs both classes present".into()))
        } else {
            Ok(())
        }
    };
    let (major, minor) = if yes.len() >= no.len() { (&yes, &no) } else { (&no, &yes) };
    Ok(match strategy {
        ResampleStrategy::None => samples.to_vec(),
        ResampleStrategy::OversampleMinority => {
            two_classes()?;
            let mut out: Vec<Sample> = major.iter().chain(minor.iter()).copied().collect();
            out.extend((minor.len()..major.len()).map(|_| minor[rng.random_range(0..minor.len())]));
            out
        }
        ResampleStrategy::UndersampleMajority => {
            two_classes()?;
            let mut keep = index::sample(&mut rng, major.len(), minor.len()).into_vec();
            keep.sort_unstable();
            keep.into_iter().map(|i| major[i]).chain(minor.iter().copied()).collect()
        }
        ResampleStrategy::Bootstrap => {
            if samples.is_empty() {
                return Err(Error::InvalidArgument("cannot bootstrap an empty sample".into()));
            }
            (0..samples.len()).map(|_| samples[rng.random_range(0..samples.len())]).collect()
        }
    })
}

struct Split {
    condition: Condition,
    gain: f64,
}

/// Attributes in tie-break order.
fn attributes_by_name() -> Vec<Attribute> {
    let mut attrs = Attribute::ALL.to_vec();
    attrs.sort_by_key(|a| a.name());
    attrs
}

fn best_split(samples: &[Sample], idx: &[usize], cfg: &SplitConfig, attrs: &[Attribute]) -> Option<Split> {
    let parent = ClassCounts::of(idx.iter().map(|&i| &samples[i]));
    let n = idx.len();
    let parent_gini = parent.gini();
    let min_leaf = cfg.min_samples_leaf;
    let mut best: Option<Split> = None;
    let mut consider = |condition: Condition, left: ClassCounts| {
        let nl = left.total();
        let nr = n - nl;
        if nl < min_leaf || nr < min_leaf {
            return;
        }
        let right = ClassCounts {
            yes: parent.yes - left.yes,
            no: parent.no - left.no,
        };
        let child = (nl as f64 * left.gini() + nr as f64 * right.gini()) / n as f64;
        let gain = parent_gini - child;
        if best.as_ref().is_none_or(|b| gain > b.gain + GAIN_TIE_EPS) {
            best = Some(Split { condition, gain });
        }
    };
    let mut column: Vec<(f64, Label)> = Vec::with_capacity(n);
    for &attr in attrs {
        if attr.is_categorical() {
            for cat in SideType::ALL {
                let left = ClassCounts::of(idx.iter().map(|&i| &samples[i]).filter(|s| s.features.side_type_input == cat));
                consider(
                    Condition::Category {
                        attribute: attr,
                        categories: vec![cat],
                    },
                    left,
                );
            }
            continue;
        }
        column.clear();
        column.extend(idx.iter().map(|&i| (samples[i].features.numeric(attr).unwrap_or(0.0), samples[i].label)));
        column.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = ClassCounts::default();
        for k in 0..n - 1 {
            left.add(column[k].1);
            let (lo, hi) = (column[k].0, column[k + 1].0);
            if lo == hi {
                continue;
            }
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold >= hi {
                threshold = lo;
            }
            consider(Condition::Threshold { attribute: attr, threshold }, left);
        }
    }
    best
}

fn grow(samples: &[Sample], idx: &mut [usize], depth: usize, cfg: &SplitConfig, attrs: &[Attribute]) -> TreeNode {
    let counts = ClassCounts::of(idx.iter().map(|&i| &samples[i]));
    let leaf = TreeNode::Leaf {
        label: counts.majority(),
        counts,
    };
    if depth >= cfg.max_depth || counts.yes == 0 || counts.no == 0 || idx.len() < 2 * cfg.min_samples_leaf {
        return leaf;
    }
    let Some(split) = best_split(samples, idx, cfg, attrs) else {
        return leaf;
    };
    if split.gain < cfg.min_impurity_decrease {
        return leaf;
    }
    // Stable partition keeps child ordering independent of the split values.
    let (mut l, mut r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| split.condition.holds(&samples[i].features));
    TreeNode::Internal {
        left: Box::new(grow(samples, &mut l, depth + 1, cfg, attrs)),
        right: Box::new(grow(samples, &mut r, depth + 1, cfg, attrs)),
        condition: split.condition,
    }
}

/// Greedy recursive partitioning. Stops at `max_depth`, when a child would fall
/// under `min_samples_leaf`, when the node is pure, or when the best gain is
/// below `min_impurity_decrease`.
pub fn train(samples: &[Sample], cfg: &SplitConfig) -> Result<TreeNode> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty set".into()));
    }
    cfg.validate()?;
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    Ok(grow(samples, &mut idx, 0, cfg, &attributes_by_name()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion {
    /// Predicted and actual `yesParking`.
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub majority_label: Label,
    pub majority_baseline: f64,
    /// `None` when the baseline is already perfect.
    pub uncertainty_reduction: Option<f64>,
    pub confusion: Confusion,
    #[serde(rename = "yesParking")]
    pub yes: ClassMetrics,
    #[serde(rename = "noParking")]
    pub no: ClassMetrics,
}

/// Share of the trivial predictor's error removed: `1 - (1 - acc) / (1 - base)`.
pub fn uncertainty_reduction(accuracy: f64, majority_baseline: f64) -> Option<f64> {
    (majority_baseline < 1.0).then(|| 1.0 - (1.0 - accuracy) / (1.0 - majority_baseline))
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

/// Metrics over `(predicted, actual)` pairs.
pub fn evaluate_pairs(pairs: &[(Label, Label)]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty test set".into()));
    }
    let mut c = Confusion::default();
    for &(pred, actual) in pairs {
        match (pred, actual) {
            (Label::YesParking, Label::YesParking) => c.tp += 1,
            (Label::YesParking, Label::NoParking) => c.fp += 1,
            (Label::NoParking, Label::NoParking) => c.tn += 1,
            (Label::NoParking, Label::YesParking) => c.fn_ += 1,
        }
    }
    let n = pairs.len();
    let actual_yes = c.tp + c.fn_;
    let actual_no = c.tn + c.fp;
    let (majority_label, majority) = if actual_yes > actual_no {
        (Label::YesParking, actual_yes)
    } else {
        (Label::NoParking, actual_no)
    };
    let accuracy = (c.tp + c.tn) as f64 / n as f64;
    let majority_baseline = majority as f64 / n as f64;
    Ok(EvalReport {
        n,
        accuracy,
        majority_label,
        majority_baseline,
        uncertainty_reduction: uncertainty_reduction(accuracy, majority_baseline),
        confusion: c,
        yes: ClassMetrics {
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, actual_yes),
        },
        no: ClassMetrics {
            precision: ratio(c.tn, c.tn + c.fn_),
            recall: ratio(c.tn, actual_no),
        },
    })
}

pub fn evaluate(tree: &TreeNode, test: &[Sample]) -> Result<EvalReport> {
    let pairs: Vec<(Label, Label)> = test.iter().map(|s| (tree.predict(&s.features), s.label)).collect();
    evaluate_pairs(&pairs)
}
