//! Flash-crowd detection from the total correlation between the content
//! accessed at bin `t - w` (X) and the content accessed at bin `t` (Y).
//!
//! The marginals come straight from the counts. The joint is unknown, so it
//! is modelled as a mixture of the independent joint `f(x) g(y)` and one of
//! the discrete Fréchet extremes (counter-monotone for negative, comonotone
//! for positive correlation), weighted so that its Pearson coefficient equals
//! the sample correlation of the two count vectors.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::trace::{BinnedTrace, ContentId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("bins {prev} and {t} are both empty")]
    EmptyBin { t: usize, prev: usize },
    #[error("bin {t} precedes the window {w}")]
    BeforeWindow { t: usize, w: usize },
    #[error("trace horizon {horizon} must exceed the window {w}")]
    ShortTrace { horizon: usize, w: usize },
    #[error("degenerate Fréchet bound for rho {rho}")]
    DegenerateBound { rho: f64 },
    #[error("invalid flag config: {0}")]
    BadConfig(String),
}

/// Numeric values given to X and Y when computing Pearson moments of a joint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValueEncoding {
    /// Position of the content in the ascending support (0, 1, 2, ...).
    #[default]
    Ordinal,
    /// The raw content id.
    RawId,
}

/// Marginals of X (bin `t - w`) and Y (bin `t`) over their joint support.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionPair {
    pub support: Vec<ContentId>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub cdf_f: Vec<f64>,
    pub cdf_g: Vec<f64>,
    /// Count vectors backing `f` and `g`, indexed like `support`.
    pub prev_counts: Vec<u64>,
    pub counts: Vec<u64>,
}

impl DistributionPair {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Builds a pair directly from two count vectors over the same support.
    pub fn from_counts(support: Vec<ContentId>, prev_counts: Vec<u64>, counts: Vec<u64>) -> Self {
        let normalize = |c: &[u64]| -> Vec<f64> {
            let total: u64 = c.iter().sum();
            if total == 0 {
                vec![0.0; c.len()]
            } else {
                c.iter().map(|&v| v as f64 / total as f64).collect()
            }
        };
        let f = normalize(&prev_counts);
        let g = normalize(&counts);
        let cdf_f = cumulative(&f);
        let cdf_g = cumulative(&g);
        Self { support, f, g, cdf_f, cdf_g, prev_counts, counts }
    }

    /// Builds a pair from two probability vectors (counts left empty).
    pub fn from_probabilities(f: Vec<f64>, g: Vec<f64>) -> Self {
        assert_eq!(f.len(), g.len());
        let support = (0..f.len() as u64).map(ContentId).collect();
        let cdf_f = cumulative(&f);
        let cdf_g = cumulative(&g);
        Self { support, f, g, cdf_f, cdf_g, prev_counts: Vec::new(), counts: Vec::new() }
    }

    fn values(&self, enc: ValueEncoding) -> Vec<f64> {
        match enc {
            ValueEncoding::Ordinal => (0..self.len()).map(|i| i as f64).collect(),
            ValueEncoding::RawId => self.support.iter().map(|c| c.0 as f64).collect(),
        }
    }
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = KahanSum::default();
    p.iter()
        .map(|&v| {
            acc.add(v);
            acc.value()
        })
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    fn add(&mut self, v: f64) {
        let y = v - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

/// Marginals over the union of contents accessed at `t - w` or `t`.
pub fn build_distributions(trace: &BinnedTrace, t: usize, w: usize) -> Result<DistributionPair, DetectError> {
    if t < w {
        return Err(DetectError::BeforeWindow { t, w });
    }
    let prev = t - w;
    let empty = Default::default();
    let a = trace.bins.get(prev).unwrap_or(&empty);
    let b = trace.bins.get(t).unwrap_or(&empty);
    let support: Vec<ContentId> = a.keys().chain(b.keys()).copied().collect::<BTreeSet<_>>().into_iter().collect();
    if support.is_empty() {
        return Err(DetectError::EmptyBin { t, prev });
    }
    let prev_counts = support.iter().map(|c| a.get(c).copied().unwrap_or(0)).collect();
    let counts = support.iter().map(|c| b.get(c).copied().unwrap_or(0)).collect();
    Ok(DistributionPair::from_counts(support, prev_counts, counts))
}

/// Pearson sample correlation between two count vectors; 0 when either has
/// zero variance.
pub fn pearson_counts(prev: &[u64], cur: &[u64]) -> f64 {
    let n = prev.len();
    if n == 0 {
        return 0.0;
    }
    let mean_a = prev.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let mean_b = cur.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in prev.iter().zip(cur) {
        let da = x as f64 - mean_a;
        let db = y as f64 - mean_b;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Sample correlation of the count vectors behind bins `t - w` and `t`.
pub fn sample_rho(trace: &BinnedTrace, t: usize, w: usize) -> Result<f64, DetectError> {
    let d = build_distributions(trace, t, w)?;
    Ok(pearson_counts(&d.prev_counts, &d.counts))
}

/// Row-major `n x n` joint mass function.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub rho: f64,
    /// `rho_L` when `rho < 0`, `rho_U` when `rho > 0`, 0 otherwise.
    pub rho_bound: f64,
    pub theta: f64,
    pub n: usize,
    pub p: Vec<f64>,
    /// Set when the bound was degenerate and the product joint was used instead.
    pub degenerate: bool,
}

impl JointModel {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.p[x * self.n + y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrechetBound {
    Lower,
    Upper,
}

/// Fréchet extreme joint mass function (row-major), obtained by differencing
/// `max(F+G-1, 0)` or `min(F, G)` with zero outside the support.
pub fn frechet_mass(dist: &DistributionPair, bound: FrechetBound) -> Vec<f64> {
    let n = dist.len();
    let cdf = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 {
            return 0.0;
        }
        let (fx, gy) = (dist.cdf_f[x as usize], dist.cdf_g[y as usize]);
        match bound {
            FrechetBound::Lower => (fx + gy - 1.0).max(0.0),
            FrechetBound::Upper => fx.min(gy),
        }
    };
    let mut p = vec![0.0; n * n];
    for x in 0..n as isize {
        for y in 0..n as isize {
            let m = cdf(x, y) - cdf(x - 1, y) - cdf(x, y - 1) + cdf(x - 1, y - 1);
            // Differencing leaves round-off of either sign on true zeros.
            p[x as usize * n + y as usize] = if m.abs() < 1e-15 { 0.0 } else { m.max(0.0) };
        }
    }
    p
}

/// Pearson coefficient of a joint under the given value encoding.
/// Returns `None` when a marginal has zero variance.
pub fn joint_pearson(dist: &DistributionPair, p: &[f64], enc: ValueEncoding) -> Option<f64> {
    let n = dist.len();
    let v = dist.values(enc);
    let (mut ex, mut ey, mut exx, mut eyy, mut exy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        ex += v[i] * dist.f[i];
        exx += v[i] * v[i] * dist.f[i];
        ey += v[i] * dist.g[i];
        eyy += v[i] * v[i] * dist.g[i];
    }
    for x in 0..n {
        for y in 0..n {
            exy += v[x] * v[y] * p[x * n + y];
        }
    }
    let vx = exx - ex * ex;
    let vy = eyy - ey * ey;
    let scale = v.iter().fold(1.0f64, |m, a| m.max(a.abs()));
    let tiny = 1e-14 * scale * scale;
    if vx <= tiny || vy <= tiny {
        return None;
    }
    Some((exy - ex * ey) / (vx.sqrt() * vy.sqrt()))
}

/// Joint whose Pearson coefficient is `rho`: `theta * p_bound + (1 - theta) * f g`
/// with `theta = rho / rho_bound`. `theta` is clamped to `[0, 1]`, so targets
/// beyond the attainable bound land on the bound itself. When the bound is
/// degenerate (a marginal with zero variance) the product joint is returned
/// with `degenerate` set.
pub fn frechet_joint(dist: &DistributionPair, rho: f64, enc: ValueEncoding) -> JointModel {
    let n = dist.len();
    let mut p: Vec<f64> = Vec::with_capacity(n * n);
    for x in 0..n {
        for y in 0..n {
            p.push(dist.f[x] * dist.g[y]);
        }
    }
    if rho == 0.0 {
        return JointModel { rho, rho_bound: 0.0, theta: 0.0, n, p, degenerate: false };
    }
    let bound = if rho < 0.0 { FrechetBound::Lower } else { FrechetBound::Upper };
    let extreme = frechet_mass(dist, bound);
    let rho_bound = match joint_pearson(dist, &extreme, enc) {
        Some(r) if r != 0.0 && r.signum() == rho.signum() => r,
        _ => return JointModel { rho, rho_bound: 0.0, theta: 0.0, n, p, degenerate: true },
    };
    let theta = (rho / rho_bound).clamp(0.0, 1.0);
    for (cell, e) in p.iter_mut().zip(&extreme) {
        *cell = theta * e + (1.0 - theta) * *cell;
    }
    JointModel { rho, rho_bound, theta, n, p, degenerate: false }
}

/// Shannon entropy in bits with `0 log 0 = 0`.
pub fn entropy_bits(p: &[f64]) -> f64 {
    let mut acc = KahanSum::default();
    for &v in p {
        if v > 0.0 {
            acc.add(-v * v.log2());
        }
    }
    acc.value().max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionPoint {
    pub t: usize,
    pub h_x: f64,
    pub h_y: f64,
    pub h_xy: f64,
    pub c_xy: f64,
    pub n: usize,
}

pub fn entropies(t: usize, dist: &DistributionPair, joint: &JointModel) -> DetectionPoint {
    let h_x = entropy_bits(&dist.f);
    let h_y = entropy_bits(&dist.g);
    let h_xy = entropy_bits(&joint.p);
    DetectionPoint { t, h_x, h_y, h_xy, c_xy: h_x + h_y - h_xy, n: dist.len() }
}

/// Full per-bin computation at bin `t`.
pub fn detection_point(
    trace: &BinnedTrace,
    t: usize,
    w: usize,
    enc: ValueEncoding,
) -> Result<DetectionPoint, DetectError> {
    let dist = build_distributions(trace, t, w)?;
    let rho = pearson_counts(&dist.prev_counts, &dist.counts);
    let joint = frechet_joint(&dist, rho, enc);
    Ok(entropies(t, &dist, &joint))
}

/// Knobs of the event flagging rule.
///
/// A baseline mean/deviation of C is taken over the first `warmup` points and
/// then tracked with an exponentially weighted update (`ewma_lambda`) while no
/// event is open. An event opens when C exceeds `mean + k * sd` for `m`
/// consecutive points and closes when C falls back under the threshold frozen
/// at onset for `m` consecutive points. Events separated by fewer than
/// `gap_merge` bins are merged.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FlagConfig {
    pub k: f64,
    pub m: usize,
    pub gap_merge: usize,
    pub warmup: usize,
    pub ewma_lambda: f64,
    /// Floor on the deviation so a flat baseline does not flag noise.
    pub min_sd: f64,
}

impl Default for FlagConfig {
    fn default() -> Self {
        Self { k: 3.0, m: 3, gap_merge: 15, warmup: 30, ewma_lambda: 0.01, min_sd: 1e-3 }
    }
}

impl FlagConfig {
    pub fn with_m(m: usize) -> Self {
        Self { m, gap_merge: 5 * m, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        if self.m == 0 || self.warmup == 0 {
            return Err(DetectError::BadConfig("m and warmup must be positive".into()));
        }
        if !(self.k >= 0.0) || !(self.ewma_lambda > 0.0 && self.ewma_lambda <= 1.0) || !(self.min_sd >= 0.0) {
            return Err(DetectError::BadConfig("k >= 0, 0 < ewma_lambda <= 1, min_sd >= 0 required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlagTransition {
    Onset { start: usize },
    End { start: usize, end: usize },
}

/// Causal event flagger; feed it one C value per bin in time order.
#[derive(Debug, Clone)]
pub struct EventFlagger {
    cfg: FlagConfig,
    warm: Vec<f64>,
    mean: f64,
    var: f64,
    ready: bool,
    run: usize,
    run_start: usize,
    open: Option<(usize, f64)>,
}

impl EventFlagger {
    pub fn new(cfg: FlagConfig) -> Self {
        Self { cfg, warm: Vec::new(), mean: 0.0, var: 0.0, ready: false, run: 0, run_start: 0, open: None }
    }

    pub fn in_event(&self) -> bool {
        self.open.is_some()
    }

    pub fn threshold(&self) -> Option<f64> {
        self.ready.then(|| self.mean + self.cfg.k * self.var.sqrt().max(self.cfg.min_sd))
    }

    pub fn push(&mut self, t: usize, c: f64) -> Option<FlagTransition> {
        if !self.ready {
            self.warm.push(c);
            if self.warm.len() >= self.cfg.warmup {
                let n = self.warm.len() as f64;
                self.mean = self.warm.iter().sum::<f64>() / n;
                self.var = self.warm.iter().map(|v| (v - self.mean).powi(2)).sum::<f64>() / n;
                self.ready = true;
            }
            return None;
        }
        match self.open {
            None => {
                let thr = self.threshold().expect("ready");
                if c > thr {
                    if self.run == 0 {
                        self.run_start = t;
                    }
                    self.run += 1;
                    if self.run >= self.cfg.m {
                        self.open = Some((self.run_start, thr));
                        self.run = 0;
                        return Some(FlagTransition::Onset { start: self.run_start });
                    }
                } else {
                    self.run = 0;
                    let lambda = self.cfg.ewma_lambda;
                    let d = c - self.mean;
                    self.mean += lambda * d;
                    self.var = (1.0 - lambda) * (self.var + lambda * d * d);
                }
                None
            }
            Some((start, thr)) => {
                if c < thr {
                    if self.run == 0 {
                        self.run_start = t;
                    }
                    self.run += 1;
                    if self.run >= self.cfg.m {
                        self.open = None;
                        self.run = 0;
                        return Some(FlagTransition::End { start, end: self.run_start });
                    }
                } else {
                    self.run = 0;
                }
                None
            }
        }
    }

    /// Closes a still-open event at `last`.
    pub fn finish(&mut self, last: usize) -> Option<(usize, usize)> {
        self.open.take().map(|(start, _)| (start, last))
    }
}

/// Merges events whose gap is shorter than `gap`.
pub fn merge_events(events: &[(usize, usize)], gap: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &(s, e) in events {
        match out.last_mut() {
            Some(last) if s.saturating_sub(last.1) < gap => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSeries {
    pub window: usize,
    pub horizon: usize,
    pub points: Vec<DetectionPoint>,
    /// Bins where both `t - w` and `t` were empty.
    pub skipped: Vec<usize>,
    pub events: Vec<(usize, usize)>,
}

impl DetectionSeries {
    pub fn points_csv(&self) -> String {
        let mut s = String::from("t,h_x,h_y,h_xy,c_xy\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{},{},{}\n", p.t, p.h_x, p.h_y, p.h_xy, p.c_xy));
        }
        s
    }

    pub fn events_csv(&self) -> String {
        let mut s = String::from("start,end\n");
        for (a, b) in &self.events {
            s.push_str(&format!("{a},{b}\n"));
        }
        s
    }
}

/// Runs the detector over every bin `t` in `[w, horizon)` and flags events.
pub fn detect(trace: &BinnedTrace, w: usize, cfg: &FlagConfig) -> Result<DetectionSeries, DetectError> {
    detect_with(trace, w, cfg, ValueEncoding::Ordinal)
}

pub fn detect_with(
    trace: &BinnedTrace,
    w: usize,
    cfg: &FlagConfig,
    enc: ValueEncoding,
) -> Result<DetectionSeries, DetectError> {
    cfg.validate()?;
    let horizon = trace.horizon();
    if w == 0 || horizon <= w {
        return Err(DetectError::ShortTrace { horizon, w });
    }
    let mut points = Vec::with_capacity(horizon - w);
    let mut skipped = Vec::new();
    let mut flagger = EventFlagger::new(cfg.clone());
    let mut raw = Vec::new();
    for t in w..horizon {
        match detection_point(trace, t, w, enc) {
            Ok(p) => {
                if let Some(FlagTransition::End { start, end }) = flagger.push(t, p.c_xy) {
                    raw.push((start, end));
                }
                points.push(p);
            }
            Err(DetectError::EmptyBin { .. }) => skipped.push(t),
            Err(e) => return Err(e),
        }
    }
    if let Some(ev) = flagger.finish(horizon - 1) {
        raw.push(ev);
    }
    let events = merge_events(&raw, cfg.gap_merge);
    Ok(DetectionSeries { window: w, horizon, points, skipped, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn trace_of(bins: &[&[(u64, u64)]]) -> BinnedTrace {
        let mut t = BinnedTrace::new(1, bins.len());
        for (i, b) in bins.iter().enumerate() {
            for &(c, n) in *b {
                t.add(i, ContentId(c), n);
            }
        }
        t
    }

    #[test]
    fn single_content_pair() {
        let tr = trace_of(&[&[(7, 4)], &[(7, 4)]]);
        let d = build_distributions(&tr, 1, 1).unwrap();
        assert_eq!(d.support, vec![ContentId(7)]);
        assert_eq!((d.f.clone(), d.g.clone()), (vec![1.0], vec![1.0]));
    }

    #[test]
    fn normalization_and_disjoint_supports() {
        let tr = trace_of(&[&[(1, 3), (2, 1)], &[(1, 1), (2, 3)]]);
        let d = build_distributions(&tr, 1, 1).unwrap();
        assert_eq!(d.f, vec![0.75, 0.25]);
        assert_eq!(d.g, vec![0.25, 0.75]);

        let tr = trace_of(&[&[(1, 2)], &[(2, 2)]]);
        let d = build_distributions(&tr, 1, 1).unwrap();
        assert_eq!(d.support, vec![ContentId(1), ContentId(2)]);
        assert_eq!(d.f, vec![1.0, 0.0]);
        assert_eq!(d.g, vec![0.0, 1.0]);
    }

    #[test]
    fn empty_bins_error() {
        let tr = BinnedTrace { bin_width: 1, bins: vec![BTreeMap::new(); 3], content_catalog: Default::default() };
        assert_eq!(build_distributions(&tr, 2, 1), Err(DetectError::EmptyBin { t: 2, prev: 1 }));
    }

    #[test]
    fn pearson_cases() {
        assert_eq!(pearson_counts(&[3, 1], &[1, 3]), -1.0);
        assert!((pearson_counts(&[1, 5, 2], &[1, 5, 2]) - 1.0).abs() < 1e-15);
        assert_eq!(pearson_counts(&[4, 4, 4], &[1, 2, 9]), 0.0);
    }

    #[test]
    fn zero_rho_gives_product() {
        let d = DistributionPair::from_probabilities(vec![0.2, 0.3, 0.5], vec![0.6, 0.1, 0.3]);
        let j = frechet_joint(&d, 0.0, ValueEncoding::Ordinal);
        for x in 0..3 {
            for y in 0..3 {
                assert_eq!(j.at(x, y), d.f[x] * d.g[y]);
            }
        }
    }

    #[test]
    fn counter_monotone_example() {
        let d = DistributionPair::from_probabilities(vec![0.75, 0.25], vec![0.25, 0.75]);
        let j = frechet_joint(&d, -1.0, ValueEncoding::Ordinal);
        assert!((j.rho_bound + 1.0).abs() < 1e-12);
        assert!((j.theta - 1.0).abs() < 1e-12);
        let want = [0.0, 0.75, 0.25, 0.0];
        for (a, b) in j.p.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let pt = entropies(0, &d, &j);
        let h = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        assert!((h - 0.811_278).abs() < 1e-6);
        for v in [pt.h_x, pt.h_y, pt.h_xy, pt.c_xy] {
            assert!((v - h).abs() < 1e-12);
        }
    }

    #[test]
    fn comonotone_equal_marginals() {
        let f = vec![0.1, 0.4, 0.2, 0.3];
        let d = DistributionPair::from_probabilities(f.clone(), f.clone());
        let j = frechet_joint(&d, 1.0, ValueEncoding::Ordinal);
        assert!((j.theta - 1.0).abs() < 1e-12);
        for x in 0..4 {
            for y in 0..4 {
                let want = if x == y { f[x] } else { 0.0 };
                assert!((j.at(x, y) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn disjoint_point_masses_are_degenerate() {
        let tr = trace_of(&[&[(1, 2)], &[(2, 2)]]);
        let d = build_distributions(&tr, 1, 1).unwrap();
        let rho = pearson_counts(&d.prev_counts, &d.counts);
        assert_eq!(rho, -1.0);
        let j = frechet_joint(&d, rho, ValueEncoding::Ordinal);
        assert!(j.degenerate);
        assert_eq!(j.p, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn entropy_examples() {
        let d = DistributionPair::from_probabilities(vec![1.0], vec![1.0]);
        let p = entropies(0, &d, &frechet_joint(&d, 0.0, ValueEncoding::Ordinal));
        assert_eq!((p.h_x, p.h_y, p.h_xy, p.c_xy), (0.0, 0.0, 0.0, 0.0));

        let u = vec![0.25; 4];
        let d = DistributionPair::from_probabilities(u.clone(), u);
        let p = entropies(0, &d, &frechet_joint(&d, 0.0, ValueEncoding::Ordinal));
        assert!((p.h_x - 2.0).abs() < 1e-12 && (p.h_y - 2.0).abs() < 1e-12);
        assert!((p.h_xy - 4.0).abs() < 1e-12 && p.c_xy.abs() < 1e-12);
    }

    #[test]
    fn raw_id_encoding_differs_from_ordinal() {
        let tr = trace_of(&[&[(1, 5), (2, 1), (50, 2)], &[(1, 3), (2, 1), (50, 4)]]);
        let a = detection_point(&tr, 1, 1, ValueEncoding::Ordinal).unwrap();
        let b = detection_point(&tr, 1, 1, ValueEncoding::RawId).unwrap();
        assert!((a.c_xy - b.c_xy).abs() > 1e-9);
    }

    #[test]
    fn constant_trace_has_no_events() {
        let bins: Vec<Vec<(u64, u64)>> = (0..200).map(|_| (0..5).map(|c| (c, 10)).collect()).collect();
        let refs: Vec<&[(u64, u64)]> = bins.iter().map(|b| b.as_slice()).collect();
        let s = detect(&trace_of(&refs), 1, &FlagConfig::default()).unwrap();
        assert_eq!(s.points.len(), 199);
        let c0 = s.points[0].c_xy;
        assert!(s.points.iter().all(|p| p.c_xy == c0));
        assert!(s.events.is_empty());
    }

    #[test]
    fn short_trace_is_rejected() {
        let tr = trace_of(&[&[(1, 1)]]);
        assert!(matches!(detect(&tr, 1, &FlagConfig::default()), Err(DetectError::ShortTrace { .. })));
    }

    #[test]
    fn flagger_onset_and_end() {
        let cfg = FlagConfig { warmup: 5, m: 2, gap_merge: 3, ..FlagConfig::default() };
        let mut fl = EventFlagger::new(cfg);
        let series = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let mut out = Vec::new();
        for (t, c) in series.iter().enumerate() {
            if let Some(tr) = fl.push(t, *c) {
                out.push(tr);
            }
        }
        assert_eq!(out, vec![FlagTransition::Onset { start: 6 }, FlagTransition::End { start: 6, end: 9 }]);
    }

    #[test]
    fn merging_respects_gap() {
        assert_eq!(merge_events(&[(10, 20), (24, 30)], 5), vec![(10, 30)]);
        assert_eq!(merge_events(&[(10, 20), (25, 30)], 5), vec![(10, 20), (25, 30)]);
    }
}
