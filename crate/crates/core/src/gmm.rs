//! Gaussian density boundaries along a single street.
//!
//! POEs are projected onto their total-least-squares line, a 1-D Gaussian
//! mixture is fitted by EM for k = 1..k_max, and the component count with the
//! lowest information criterion wins. Where adjacent weighted components cross
//! is reported as a boundary, typically an entrance or a crossing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, LocalFrame, LocalPoint};
use crate::geojson::{Feature, Geometry};

pub const SIGMA_FLOOR_M: f64 = 0.5;
pub const DEFAULT_K_MAX: usize = 6;
pub const RESIDUAL_GATE_M: f64 = 15.0;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FittedLine {
    pub origin: LocalPoint,
    /// Unit vector.
    pub direction: LocalPoint,
}

impl FittedLine {
    pub fn at(&self, t: f64) -> LocalPoint {
        self.origin.add(self.direction.scale(t))
    }
}

/// Principal axis of the 2-D covariance through the centroid.
pub fn fit_line(points: &[LocalPoint]) -> Result<FittedLine> {
    if points.len() < 2 {
        return Err(Error::Degenerate(format!("line fit needs 2 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - cx, p.y - cy);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let trace = sxx + syy;
    if trace <= 1e-18 * n {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let spread = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
    if spread <= 1e-9 * trace {
        return Err(Error::Degenerate("isotropic point cloud has no dominant axis".into()));
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Ok(FittedLine {
        origin: LocalPoint::new(cx, cy),
        direction: LocalPoint::new(theta.cos(), theta.sin()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub positions: Vec<f64>,
    /// Signed orthogonal distances, positive to the left of the direction.
    pub residuals: Vec<f64>,
}

pub fn project(points: &[LocalPoint], line: &FittedLine) -> Projection {
    let (positions, residuals) = points
        .iter()
        .map(|p| {
            let d = p.sub(line.origin);
            (d.dot(line.direction), line.direction.cross(d))
        })
        .unzip();
    Projection { positions, residuals }
}

pub fn back_project(positions: &[f64], line: &FittedLine, frame: &LocalFrame) -> Vec<GeoPoint> {
    positions.iter().map(|&t| frame.from_local(line.at(t))).collect()
}

fn median_abs(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub sigma: f64,
}

impl Component {
    fn log_density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sigma;
        self.weight.ln() - self.sigma.ln() - LN_SQRT_2PI - 0.5 * z * z
    }
}

/// Components sorted by mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mixture1D {
    pub components: Vec<Component>,
}

impl Mixture1D {
    pub fn new(mut components: Vec<Component>) -> Self {
        components.sort_by(|a, b| a.mean.total_cmp(&b.mean));
        Mixture1D { components }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn density(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.log_density(x).exp()).sum()
    }

    pub fn log_likelihood(&self, xs: &[f64]) -> f64 {
        xs.iter().map(|&x| log_sum_exp(self.components.iter().map(|c| c.log_density(x)))).sum()
    }
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Bic,
    Aic,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bic" => Ok(Criterion::Bic),
            "aic" => Ok(Criterion::Aic),
            other => Err(Error::InvalidArgument(format!("unknown criterion {other:?}"))),
        }
    }
}

impl Criterion {
    /// `3k - 1` free parameters: k means, k sigmas, k - 1 weights.
    pub fn score(self, log_likelihood: f64, k: usize, n: usize) -> f64 {
        let p = (3 * k - 1) as f64;
        let penalty = match self {
            Criterion::Bic => p * (n as f64).ln(),
            Criterion::Aic => 2.0 * p,
        };
        -2.0 * log_likelihood + penalty
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    pub k_max: usize,
    pub criterion: Criterion,
    pub seed: u64,
    /// Extra EM runs from random means; the best log-likelihood is kept.
    pub restarts: usize,
    pub sigma_floor: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub residual_gate_m: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            k_max: DEFAULT_K_MAX,
            criterion: Criterion::Bic,
            seed: 17,
            restarts: 0,
            sigma_floor: SIGMA_FLOOR_M,
            max_iter: 500,
            tol: 1e-8,
            residual_gate_m: RESIDUAL_GATE_M,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmFit {
    pub mixture: Mixture1D,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood of every parameter state visited, starting with `init`.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Means at the (i + 0.5)/k quantiles, sigma = sample std / k, equal weights.
pub fn initial_mixture(xs: &[f64], k: usize, sigma_floor: f64) -> Mixture1D {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sigma = (sample_std(xs) / k as f64).max(sigma_floor);
    Mixture1D::new(
        (0..k)
            .map(|i| Component {
                weight: 1.0 / k as f64,
                mean: quantile(&sorted, (i as f64 + 0.5) / k as f64),
                sigma,
            })
            .collect(),
    )
}

fn check_em_input(xs: &[f64], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("component count must be at least 1".into()));
    }
    if xs.len() < 2 * k {
        return Err(Error::InvalidArgument(format!("{} points are too few for k = {k}", xs.len())));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite position".into()));
    }
    Ok(())
}

/// E-step: fills `resp` with responsibilities and returns the log-likelihood
/// of `comps`.
fn e_step(xs: &[f64], comps: &[Component], resp: &mut [f64]) -> f64 {
    let k = comps.len();
    let consts: Vec<(f64, f64, f64)> = comps
        .iter()
        .map(|c| (c.weight.ln() - c.sigma.ln() - LN_SQRT_2PI, c.mean, 1.0 / c.sigma))
        .collect();
    let mut ll = 0.0;
    for (row, &x) in resp.chunks_exact_mut(k).zip(xs) {
        let mut max = f64::NEG_INFINITY;
        for (r, &(base, mean, inv)) in row.iter_mut().zip(&consts) {
            let z = (x - mean) * inv;
            *r = base - 0.5 * z * z;
            max = max.max(*r);
        }
        let mut sum = 0.0;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            sum += *r;
        }
        for r in row.iter_mut() {
            *r /= sum;
        }
        ll += max + sum.ln();
    }
    ll
}

/// Runs EM from `init` until |delta logL| < tol or `max_iter` M-steps.
pub fn run_em(xs: &[f64], init: Mixture1D, cfg: &GmmConfig) -> Result<EmFit> {
    check_em_input(xs, init.k())?;
    let n = xs.len();
    let k = init.k();
    let mut comps = init.components;
    let mut resp = vec![0.0; n * k];
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let ll = e_step(xs, &comps, &mut resp);
        if !ll.is_finite() {
            return Err(Error::Numeric(format!("EM log-likelihood became {ll}")));
        }
        let prev = trace.last().copied();
        trace.push(ll);
        if prev.is_some_and(|p| (ll - p).abs() < cfg.tol) {
            converged = true;
            break;
        }
        if iterations == cfg.max_iter {
            break;
        }
        // M-step
        let mut sums = vec![(0.0, 0.0); k];
        for (row, &x) in resp.chunks_exact(k).zip(xs) {
            for (s, &r) in sums.iter_mut().zip(row) {
                s.0 += r;
                s.1 += r * x;
            }
        }
        let means: Vec<f64> = sums.iter().map(|&(nk, sx)| if nk > 1e-12 { sx / nk } else { f64::NAN }).collect();
        let mut vars = vec![0.0; k];
        for (row, &x) in resp.chunks_exact(k).zip(xs) {
            for ((v, &r), &m) in vars.iter_mut().zip(row).zip(&means) {
                *v += r * (x - m) * (x - m);
            }
        }
        for (j, c) in comps.iter_mut().enumerate() {
            let nk = sums[j].0;
            if nk <= 1e-12 {
                c.weight = 1e-12;
                continue;
            }
            *c = Component {
                weight: nk / n as f64,
                mean: means[j],
                sigma: (vars[j] / nk).sqrt().max(cfg.sigma_floor),
            };
        }
        let wsum: f64 = comps.iter().map(|c| c.weight).sum();
        for c in &mut comps {
            c.weight /= wsum;
        }
        iterations += 1;
    }
    Ok(EmFit {
        mixture: Mixture1D::new(comps),
        log_likelihood: *trace.last().expect("at least one E-step"),
        iterations,
        converged,
        trace,
    })
}

/// Random start: means drawn from the data, same sigma and weights as the
/// quantile start.
pub fn random_mixture(xs: &[f64], k: usize, sigma_floor: f64, rng: &mut impl Rng) -> Mixture1D {
    let sigma = (sample_std(xs) / k as f64).max(sigma_floor);
    Mixture1D::new(
        (0..k)
            .map(|_| Component {
                weight: 1.0 / k as f64,
                mean: xs[rng.random_range(0..xs.len())],
                sigma,
            })
            .collect(),
    )
}

/// Quantile start plus `cfg.restarts` random starts; keeps the best fit,
/// earliest on ties.
pub fn fit_em(xs: &[f64], k: usize, cfg: &GmmConfig) -> Result<EmFit> {
    check_em_input(xs, k)?;
    let mut best = run_em(xs, initial_mixture(xs, k, cfg.sigma_floor), cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    for _ in 0..cfg.restarts {
        let fit = run_em(xs, random_mixture(xs, k, cfg.sigma_floor, &mut rng), cfg)?;
        if fit.log_likelihood > best.log_likelihood {
            best = fit;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KScore {
    pub k: usize,
    pub log_likelihood: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub k: usize,
    pub fit: EmFit,
    pub scores: Vec<KScore>,
}

/// Fits k = 1..=k_max (capped at n/2) and keeps the lowest criterion score;
/// ties go to the smaller k.
pub fn select_k(xs: &[f64], cfg: &GmmConfig) -> Result<Selection> {
    if xs.len() < 4 {
        return Err(Error::InvalidArgument(format!("model selection needs 4 points, got {}", xs.len())));
    }
    let k_max = cfg.k_max.min(xs.len() / 2).max(1);
    let mut best: Option<(usize, EmFit, f64)> = None;
    let mut scores = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let fit = fit_em(xs, k, cfg)?;
        let score = cfg.criterion.score(fit.log_likelihood, k, xs.len());
        scores.push(KScore {
            k,
            log_likelihood: fit.log_likelihood,
            score,
        });
        if best.as_ref().is_none_or(|b| score < b.2) {
            best = Some((k, fit, score));
        }
    }
    let (k, fit, _) = best.expect("k_max >= 1");
    Ok(Selection { k, fit, scores })
}

/// log(w1 N1(x)) - log(w2 N2(x)).
fn log_ratio(a: &Component, b: &Component, x: f64) -> f64 {
    a.log_density(x) - b.log_density(x)
}

fn bisect(a: &Component, b: &Component, mut lo: f64, mut hi: f64) -> f64 {
    let sign_lo = log_ratio(a, b, lo) > 0.0;
    for _ in 0..200 {
        let mid = lo + (hi - lo) / 2.0;
        if mid <= lo || mid >= hi {
            break;
        }
        if (log_ratio(a, b, mid) > 0.0) == sign_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo + (hi - lo) / 2.0
}

/// Crossing of `w1 N(x; mu1, s1)` and `w2 N(x; mu2, s2)` between the means,
/// `None` when one weighted density dominates the whole interval.
pub fn pair_intersection(a: &Component, b: &Component) -> Option<f64> {
    let (lo, hi) = if a.mean <= b.mean { (a.mean, b.mean) } else { (b.mean, a.mean) };
    if a.sigma == b.sigma {
        if a.mean == b.mean {
            return None;
        }
        let s2 = a.sigma * a.sigma;
        let x = (a.mean + b.mean) / 2.0 + s2 * (a.weight / b.weight).ln() / (b.mean - a.mean);
        return (lo..=hi).contains(&x).then_some(x);
    }
    // g(x) = qa x^2 + qb x + qc, zero where the weighted densities cross.
    let (va, vb) = (a.sigma * a.sigma, b.sigma * b.sigma);
    let qa = 0.5 / vb - 0.5 / va;
    let qb = a.mean / va - b.mean / vb;
    let qc = b.mean * b.mean / (2.0 * vb) - a.mean * a.mean / (2.0 * va) + (a.weight / a.sigma).ln()
        - (b.weight / b.sigma).ln();
    let disc = qb * qb - 4.0 * qa * qc;
    let mut inside = Vec::new();
    if disc >= 0.0 {
        let q = -0.5 * (qb + qb.signum() * disc.sqrt());
        for r in [q / qa, qc / q] {
            if r.is_finite() && (lo..=hi).contains(&r) {
                inside.push(r);
            }
        }
    }
    let (glo, ghi) = (log_ratio(a, b, lo), log_ratio(a, b, hi));
    match inside.as_slice() {
        [r] => Some(*r),
        _ if (glo > 0.0) != (ghi > 0.0) => Some(bisect(a, b, lo, hi)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Boundary {
    /// Index of the left component of the adjacent pair.
    pub pair: usize,
    pub position_m: f64,
}

pub fn intersections(m: &Mixture1D) -> Vec<Boundary> {
    m.components
        .windows(2)
        .enumerate()
        .filter_map(|(pair, w)| pair_intersection(&w[0], &w[1]).map(|position_m| Boundary { pair, position_m }))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreetFit {
    pub frame: LocalFrame,
    pub line: FittedLine,
    pub projection: Projection,
    pub selection: Selection,
    pub boundaries: Vec<Boundary>,
    pub boundaries_geo: Vec<GeoPoint>,
    pub criterion: Criterion,
}

impl StreetFit {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "line": {
                "origin": self.frame.from_local(self.line.origin),
                "direction": [self.line.direction.x, self.line.direction.y],
            },
            "n": self.projection.positions.len(),
            "criterion": self.criterion,
            "k": self.selection.k,
            "scores": self.selection.scores,
            "log_likelihood": self.selection.fit.log_likelihood,
            "components": self.selection.fit.mixture.components,
            "boundaries_m": self.boundaries.iter().map(|b| b.position_m).collect::<Vec<_>>(),
            "boundaries_geo": self.boundaries_geo,
        })
    }

    pub fn to_features(&self) -> Vec<Feature> {
        self.boundaries
            .iter()
            .zip(&self.boundaries_geo)
            .map(|(b, g)| {
                Feature::new(Geometry::Point(*g))
                    .with("position_m", b.position_m)
                    .with("pair", b.pair)
            })
            .collect()
    }
}

/// Line fit, residual gate, model selection and boundaries for one street's points.
pub fn fit_street(points: &[GeoPoint], cfg: &GmmConfig) -> Result<StreetFit> {
    let frame = LocalFrame::centered_on(points).ok_or_else(|| Error::Data("no points to fit".into()))?;
    let local = points.iter().map(|p| frame.to_local(*p)).collect::<Result<Vec<_>>>()?;
    let line = fit_line(&local)?;
    let projection = project(&local, &line);
    let med = median_abs(&projection.residuals);
    if med > cfg.residual_gate_m {
        return Err(Error::Data(format!(
            "points are not street-like: median residual {med:.1} m exceeds {} m",
            cfg.residual_gate_m
        )));
    }
    let selection = select_k(&projection.positions, cfg)?;
    let boundaries = intersections(&selection.fit.mixture);
    let positions: Vec<f64> = boundaries.iter().map(|b| b.position_m).collect();
    let boundaries_geo = back_project(&positions, &line, &frame);
    Ok(StreetFit {
        frame,
        line,
        projection,
        selection,
        boundaries,
        boundaries_geo,
        criterion: cfg.criterion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn normal_draws(rng: &mut ChaCha8Rng, mean: f64, sd: f64, n: usize) -> Vec<f64> {
        let d = Normal::new(mean, sd).unwrap();
        (0..n).map(|_| d.sample(rng)).collect()
    }

    fn two_clusters(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = normal_draws(&mut rng, 20.0, 2.0, 500);
        xs.extend(normal_draws(&mut rng, 80.0, 2.0, 500));
        xs
    }

    fn assert_monotone(trace: &[f64]) {
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "logL decreased {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn line_fit_examples() {
        let pts: Vec<LocalPoint> = (0..5).map(|i| LocalPoint::new(i as f64, 0.0)).collect();
        let l = fit_line(&pts).unwrap();
        assert!((l.direction.x.abs() - 1.0).abs() < 1e-12 && l.direction.y.abs() < 1e-12);
        assert_eq!(l.origin, LocalPoint::new(2.0, 0.0));

        let diag: Vec<LocalPoint> = (0..5).map(|i| LocalPoint::new(i as f64, i as f64)).collect();
        let d = fit_line(&diag).unwrap().direction;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d.x.abs() - h).abs() < 1e-12 && (d.y.abs() - h).abs() < 1e-12);
        assert!((d.norm() - 1.0).abs() < 1e-9);

        assert!(matches!(fit_line(&[LocalPoint::new(1.0, 1.0); 3]), Err(Error::Degenerate(_))));
        let square = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)].map(|(x, y)| LocalPoint::new(x, y));
        assert!(matches!(fit_line(&square), Err(Error::Degenerate(_))));
        assert!(fit_line(&pts[..1]).is_err());
    }

    #[test]
    fn noisy_line_direction_within_two_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = 0.6_f64;
        let (c, s) = (truth.cos(), truth.sin());
        let noise = Normal::new(0.0, 2.0).unwrap();
        let pts: Vec<LocalPoint> = (0..400)
            .map(|_| {
                let t: f64 = rng.random_range(-50.0..50.0);
                let e = noise.sample(&mut rng);
                LocalPoint::new(t * c - e * s, t * s + e * c)
            })
            .collect();
        let d = fit_line(&pts).unwrap().direction;
        let angle = d.y.atan2(d.x);
        let diff = (angle - truth).rem_euclid(std::f64::consts::PI);
        let diff = diff.min(std::f64::consts::PI - diff);
        assert!(diff.to_degrees() < 2.0, "{}", diff.to_degrees());
    }

    #[test]
    fn projection_examples() {
        let line = FittedLine {
            origin: LocalPoint::new(3.0, 4.0),
            direction: LocalPoint::new(0.6, 0.8),
        };
        let p = project(&[line.origin, line.at(10.0), line.at(-2.5)], &line);
        assert_eq!(p.positions[0], 0.0);
        assert!((p.positions[1] - 10.0).abs() < 1e-12);
        assert!(p.positions[2] < p.positions[0]);
        assert!(p.residuals.iter().all(|r| r.abs() < 1e-12));
        let off = project(&[line.origin.add(LocalPoint::new(-0.8, 0.6).scale(2.0))], &line);
        assert!((off.residuals[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn back_projection_inverts_projection() {
        let frame = LocalFrame::new(GeoPoint { lat: 52.5, lon: 13.4 });
        let line = FittedLine {
            origin: LocalPoint::new(12.0, -7.0),
            direction: LocalPoint::new(0.6, -0.8),
        };
        let ts = [0.0, 15.5, -40.25, 120.0];
        let geo = back_project(&ts, &line, &frame);
        let local: Vec<LocalPoint> = geo.iter().map(|g| frame.to_local(*g).unwrap()).collect();
        assert!(local[0].distance(line.origin) < 1e-6);
        let p = project(&local, &line);
        for (a, b) in p.positions.iter().zip(ts) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(p.residuals.iter().all(|r| r.abs() < 1.0));
    }

    #[test]
    fn single_component_is_closed_form() {
        let xs = [1.0, 2.0, 4.0, 7.0, 11.0];
        let fit = fit_em(&xs, 1, &GmmConfig::default()).unwrap();
        let c = fit.mixture.components[0];
        let mean = 5.0;
        let pop_sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
        assert!((c.mean - mean).abs() < 1e-12);
        assert!((c.sigma - pop_sd).abs() < 1e-12);
        assert_eq!(c.weight, 1.0);
        assert!(fit_em(&xs, 0, &GmmConfig::default()).is_err());
        assert!(fit_em(&xs, 3, &GmmConfig::default()).is_err());
    }

    #[test]
    fn two_clusters_recovered() {
        let xs = two_clusters(1);
        let fit = fit_em(&xs, 2, &GmmConfig::default()).unwrap();
        let m = &fit.mixture.components;
        assert!((m[0].mean - 20.0).abs() < 0.5, "{m:?}");
        assert!((m[1].mean - 80.0).abs() < 0.5, "{m:?}");
        assert!(fit.trace.last().unwrap() >= fit.trace.first().unwrap());
        assert_monotone(&fit.trace);
        assert!((m.iter().map(|c| c.weight).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bic_prefers_two_on_two_clusters() {
        let xs = two_clusters(2);
        let n = xs.len();
        let cfg = GmmConfig::default();
        let bic: Vec<f64> = (1..=3)
            .map(|k| {
                let ll = fit_em(&xs, k, &cfg).unwrap().log_likelihood;
                -2.0 * ll + (3 * k - 1) as f64 * (n as f64).ln()
            })
            .collect();
        assert!(bic[1] < bic[0] && bic[1] < bic[2], "{bic:?}");
        let sel = select_k(&xs, &cfg).unwrap();
        assert_eq!(sel.k, 2);
        assert_eq!(sel.scores.len(), 6);
        let b = intersections(&sel.fit.mixture);
        assert_eq!(b.len(), 1);
        assert!((b[0].position_m - 50.0).abs() < 3.0);
    }

    #[test]
    fn tight_cluster_selects_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs = normal_draws(&mut rng, 10.0, 1.5, 300);
        let sel = select_k(&xs, &GmmConfig::default()).unwrap();
        assert_eq!(sel.k, 1);
        assert!(intersections(&sel.fit.mixture).is_empty());
        let small = select_k(&xs[..5], &GmmConfig::default()).unwrap();
        assert!(small.k <= 2);
        assert!(select_k(&xs[..3], &GmmConfig::default()).is_err());
    }

    #[test]
    fn sigma_floor_on_duplicates() {
        let xs = [5.0; 20];
        let fit = fit_em(&xs, 2, &GmmConfig::default()).unwrap();
        assert!(fit.mixture.components.iter().all(|c| c.sigma >= SIGMA_FLOOR_M));
        assert!(fit.log_likelihood.is_finite());
    }

    #[test]
    fn symmetric_pair_crosses_at_midpoint() {
        let a = Component { weight: 0.5, mean: 12.25, sigma: 2.0 };
        let b = Component { weight: 0.5, mean: 31.75, sigma: 2.0 };
        assert!((pair_intersection(&a, &b).unwrap() - 22.0).abs() < 1e-9);
        let heavy = Component { weight: 0.7, ..a };
        let light = Component { weight: 0.3, ..b };
        assert!(pair_intersection(&heavy, &light).unwrap() > 22.0);
        assert!(intersections(&Mixture1D::new(vec![a])).is_empty());
    }

    /// Sign change of the weighted-density difference on a 1e-3 m grid.
    fn scan_root(a: &Component, b: &Component) -> Option<f64> {
        let steps = ((b.mean - a.mean) / 1e-3).ceil() as usize;
        let mut prev = log_ratio(a, b, a.mean) > 0.0;
        for i in 1..=steps {
            let x = (a.mean + i as f64 * 1e-3).min(b.mean);
            let cur = log_ratio(a, b, x) > 0.0;
            if cur != prev {
                return Some(x - 0.5e-3);
            }
            prev = cur;
        }
        None
    }

    #[test]
    fn unequal_sigma_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        for _ in 0..200 {
            let a = Component {
                weight: rng.random_range(0.1..0.9),
                mean: rng.random_range(0.0..40.0),
                sigma: rng.random_range(0.5..6.0),
            };
            let b = Component {
                weight: 1.0 - a.weight,
                mean: a.mean + rng.random_range(5.0..40.0),
                sigma: rng.random_range(0.5..6.0),
            };
            match (pair_intersection(&a, &b), scan_root(&a, &b)) {
                (Some(x), Some(s)) => {
                    assert!((x - s).abs() <= 1e-3, "{a:?} {b:?}: {x} vs {s}");
                    checked += 1;
                }
                (None, None) => {}
                other => panic!("{a:?} {b:?}: {other:?}"),
            }
        }
        assert!(checked > 150);
    }

    #[test]
    fn restarts_stay_monotone() {
        let xs = two_clusters(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..100 {
            let init = random_mixture(&xs, 2 + i % 2, SIGMA_FLOOR_M, &mut rng);
            let fit = run_em(&xs, init, &GmmConfig::default()).unwrap();
            assert_monotone(&fit.trace);
            let w: f64 = fit.mixture.components.iter().map(|c| c.weight).sum();
            assert!((w - 1.0).abs() < 1e-9);
        }
        let cfg = GmmConfig { restarts: 5, ..GmmConfig::default() };
        assert!(fit_em(&xs, 2, &cfg).unwrap().log_likelihood >= fit_em(&xs, 2, &GmmConfig::default()).unwrap().log_likelihood);
    }

    #[test]
    fn residual_gate_refuses_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frame = LocalFrame::new(GeoPoint { lat: 52.5, lon: 13.4 });
        let blob: Vec<GeoPoint> = (0..200)
            .map(|_| frame.from_local(LocalPoint::new(rng.random_range(-100.0..100.0), rng.random_range(-60.0..60.0))))
            .collect();
        assert!(matches!(fit_street(&blob, &GmmConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn street_fit_end_to_end() {
        let frame = LocalFrame::new(GeoPoint { lat: 52.5, lon: 13.4 });
        let xs = two_clusters(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pts: Vec<GeoPoint> = xs
            .iter()
            .map(|&t| frame.from_local(LocalPoint::new(t, rng.random_range(-1.0..1.0))))
            .collect();
        let fit = fit_street(&pts, &GmmConfig::default()).unwrap();
        assert_eq!(fit.selection.k, 2);
        assert_eq!(fit.boundaries_geo.len(), 1);
        let b = frame.to_local(fit.boundaries_geo[0]).unwrap();
        assert!((b.x - 50.0).abs() < 3.0 && b.y.abs() < 1.0, "{b:?}");
        let j = fit.to_json();
        assert_eq!(j["boundaries_m"].as_array().unwrap().len(), 1);
        assert_eq!(fit.to_features().len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn translation_equivariance(seed in 0u64..1000, shift in -500.0f64..500.0) {
            let xs = two_clusters(seed);
            let moved: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            let cfg = GmmConfig { k_max: 3, ..GmmConfig::default() };
            let (a, b) = (select_k(&xs, &cfg).unwrap(), select_k(&moved, &cfg).unwrap());
            prop_assert_eq!(a.k, b.k);
            for (ca, cb) in a.fit.mixture.components.iter().zip(&b.fit.mixture.components) {
                prop_assert!((cb.mean - ca.mean - shift).abs() < 1e-6);
                prop_assert!((cb.sigma - ca.sigma).abs() < 1e-6);
                prop_assert!((cb.weight - ca.weight).abs() < 1e-6);
            }
            let (ia, ib) = (intersections(&a.fit.mixture), intersections(&b.fit.mixture));
            prop_assert_eq!(ia.len(), ib.len());
            for (x, y) in ia.iter().zip(&ib) {
                prop_assert!((y.position_m - x.position_m - shift).abs() < 1e-6);
            }
        }

        #[test]
        fn boundaries_lie_between_means(w in 0.05f64..0.95, m1 in -50.0f64..50.0, gap in 1.0f64..60.0, s1 in 0.5f64..8.0, s2 in 0.5f64..8.0) {
            let m = Mixture1D::new(vec![
                Component { weight: w, mean: m1, sigma: s1 },
                Component { weight: 1.0 - w, mean: m1 + gap, sigma: s2 },
            ]);
            for b in intersections(&m) {
                prop_assert!(b.position_m >= m1 && b.position_m <= m1 + gap);
            }
        }
    }
}
