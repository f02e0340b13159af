//! Synthetic flash-crowd traces.
//!
//! Each content's per-bin access count is `round(U * v)` with
//! `v ~ Beta(alpha_t, beta_t)`. Outside a flash crowd a content samples from
//! `Beta(alpha0, beta0)`. A ramp-up moves the shape towards the swapped pair
//! `(beta0, alpha0)` along an exponential mixing weight, the sustained phase
//! stays there, and a ramp-down brings it back. `alpha_t + beta_t` stays equal
//! to `alpha0 + beta0` throughout, so only the location of the density moves.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{BinnedTrace, ContentId};

#[derive(Debug, Error, PartialEq)]
pub enum GeneratorError {
    #[error("bin {t} is outside phase window [{t0}, {t1}]")]
    OutOfWindow { t: usize, t0: usize, t1: usize },
    #[error("invalid generator config: {0}")]
    Invalid(String),
    #[error("config: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    RampUp,
    RampDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub t0: usize,
    pub t1: usize,
    pub gamma: f64,
    pub kind: PhaseKind,
}

impl PhaseSchedule {
    pub fn ramp_up(t0: usize, t1: usize, gamma: f64) -> Self {
        Self { t0, t1, gamma, kind: PhaseKind::RampUp }
    }

    pub fn ramp_down(t0: usize, t1: usize, gamma: f64) -> Self {
        Self { t0, t1, gamma, kind: PhaseKind::RampDown }
    }
}

/// Per-content sampling profile. Flash-crowd contents are normally given
/// `alpha0` much smaller than `beta0` (low baseline), but that is left to the
/// caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentProfile {
    pub content: ContentId,
    pub u_max: u64,
    pub alpha0: f64,
    pub beta0: f64,
    #[serde(default)]
    pub phases: Vec<PhaseSchedule>,
    /// Ground-truth label: the content takes part in a flash crowd.
    #[serde(default)]
    pub in_flash_crowd: bool,
}

impl ContentProfile {
    pub fn steady(content: u64, u_max: u64, alpha0: f64, beta0: f64) -> Self {
        Self { content: ContentId(content), u_max, alpha0, beta0, phases: Vec::new(), in_flash_crowd: false }
    }

    /// A content with one ramp-up / sustained / ramp-down flash crowd.
    pub fn flash(content: u64, u_max: u64, alpha0: f64, beta0: f64, events: &[(PhaseSchedule, PhaseSchedule)]) -> Self {
        let phases = events.iter().flat_map(|(up, down)| [*up, *down]).collect();
        Self { content: ContentId(content), u_max, alpha0, beta0, phases, in_flash_crowd: true }
    }

    fn validate(&self, horizon: usize) -> Result<(), GeneratorError> {
        let bad = |m: String| Err(GeneratorError::Invalid(format!("content {}: {m}", self.content)));
        if !(self.alpha0 > 0.0 && self.beta0 > 0.0) {
            return bad("alpha0 and beta0 must be positive".into());
        }
        if self.u_max == 0 {
            return bad("u_max must be positive".into());
        }
        let mut prev_end: Option<usize> = None;
        for p in &self.phases {
            if p.t0 >= p.t1 {
                return bad(format!("phase [{}, {}] is empty", p.t0, p.t1));
            }
            if !(p.gamma > 0.0 && p.gamma.is_finite()) {
                return bad(format!("phase gamma {} must be positive", p.gamma));
            }
            if p.t1 >= horizon {
                return bad(format!("phase ends at {} beyond horizon {horizon}", p.t1));
            }
            if prev_end.is_some_and(|e| p.t0 < e) {
                return bad("phases overlap or are out of order".into());
            }
            prev_end = Some(p.t1);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub horizon: usize,
    #[serde(default = "one")]
    pub bin_width: u64,
    pub seed: u64,
    #[serde(default)]
    pub contents: Vec<ContentProfile>,
}

fn one() -> u64 {
    1
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.bin_width == 0 {
            return Err(GeneratorError::Invalid("bin_width must be positive".into()));
        }
        let mut ids: Vec<ContentId> = self.contents.iter().map(|c| c.content).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(GeneratorError::Invalid("duplicate content id".into()));
        }
        self.contents.iter().try_for_each(|c| c.validate(self.horizon))
    }

    pub fn from_toml(text: &str) -> Result<Self, GeneratorError> {
        toml::from_str(text).map_err(|e| GeneratorError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeneratorError> {
        let text = std::fs::read_to_string(path).map_err(|e| GeneratorError::Parse(e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("generator config serializes")
    }

    /// `(first ramp-up start, last ramp-down end)` over all flash-crowd contents.
    pub fn ground_truth(&self) -> Option<(usize, usize)> {
        let phases = self.contents.iter().filter(|c| c.in_flash_crowd).flat_map(|c| c.phases.iter());
        let start = phases.clone().filter(|p| p.kind == PhaseKind::RampUp).map(|p| p.t0).min()?;
        let end = phases.filter(|p| p.kind == PhaseKind::RampDown).map(|p| p.t1).max()?;
        Some((start, end))
    }
}

/// Exponential mixing weight `y_t` of a phase window.
///
/// Ramp-up: `(e^{g(t1-t0)} - e^{g(t-t0)}) / (e^{g(t1-t0)} - 1)`, falling from 1 to 0.
/// Ramp-down: `(e^{g(t-t0)} - 1) / (e^{g(t1-t0)} - 1)`, rising from 0 to 1.
/// Both are evaluated after dividing through by `e^{g(t1-t0)}` to avoid overflow.
pub fn mixing_weight(phase: &PhaseSchedule, t: usize) -> Result<f64, GeneratorError> {
    if t < phase.t0 || t > phase.t1 {
        return Err(GeneratorError::OutOfWindow { t, t0: phase.t0, t1: phase.t1 });
    }
    let len = (phase.t1 - phase.t0) as f64;
    let s = (t - phase.t0) as f64;
    let tail = (-phase.gamma * len).exp();
    let head = (phase.gamma * (s - len)).exp();
    let denom = 1.0 - tail;
    let y = match phase.kind {
        PhaseKind::RampUp => (1.0 - head) / denom,
        PhaseKind::RampDown => (head - tail) / denom,
    };
    Ok(y.clamp(0.0, 1.0))
}

/// Beta shape `(alpha_t, beta_t)` of a content at bin `t`.
pub fn shape_at(profile: &ContentProfile, t: usize) -> (f64, f64) {
    let total = profile.alpha0 + profile.beta0;
    let mut alpha = profile.alpha0;
    for phase in &profile.phases {
        if t < phase.t0 {
            break;
        }
        if t <= phase.t1 {
            let y = mixing_weight(phase, t).expect("t inside window");
            alpha = y * profile.alpha0 + (1.0 - y) * profile.beta0;
            break;
        }
        // Past this window: hold its final endpoint.
        alpha = match phase.kind {
            PhaseKind::RampUp => profile.beta0,
            PhaseKind::RampDown => profile.alpha0,
        };
    }
    exact_split(total, alpha)
}

/// `(alpha, total - alpha)` adjusted so the two parts add back to `total`
/// exactly: the larger part is at least `total / 2`, so subtracting it from
/// `total` is exact.
fn exact_split(total: f64, alpha: f64) -> (f64, f64) {
    if alpha >= total / 2.0 {
        (alpha, total - alpha)
    } else {
        let beta = total - alpha;
        (total - beta, beta)
    }
}

/// Uniform draw on the open interval (0, 1) with 53 bits of resolution.
pub(crate) fn open01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Beta variate by Cheng's rejection algorithms (BB when both shapes exceed
/// one, BC otherwise). Only [`open01`] touches the generator, so the output
/// stream is fixed by the seed on every platform.
pub fn sample_beta<R: RngCore + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    const LN4: f64 = 1.386_294_361_119_890_6;
    const LN5_PLUS1: f64 = 2.609_437_912_434_100_4;
    let expmax = f64::MAX.ln();
    let lo = a.min(b);
    let hi = a.max(b);
    let alpha = lo + hi;

    let v_w = |u1: f64, scale: f64, beta: f64| -> (f64, f64) {
        let v = beta * (u1 / (1.0 - u1)).ln();
        let w = if v <= expmax { (scale * v.exp()).min(f64::MAX) } else { f64::MAX };
        (v, w)
    };

    if lo <= 1.0 {
        // BC
        let beta = 1.0 / lo;
        let delta = 1.0 + hi - lo;
        let k1 = delta * (0.013_888_9 + 0.041_666_7 * lo) / (hi * beta - 0.777_778);
        let k2 = 0.25 + (0.5 + 0.25 / delta) * lo;
        let w = loop {
            let u1 = open01(rng);
            let u2 = open01(rng);
            let z;
            if u1 < 0.5 {
                let y = u1 * u2;
                z = u1 * y;
                if 0.25 * u2 + z - y >= k1 {
                    continue;
                }
            } else {
                z = u1 * u1 * u2;
                if z <= 0.25 {
                    break v_w(u1, hi, beta).1;
                }
                if z >= k2 {
                    continue;
                }
            }
            let (v, w) = v_w(u1, hi, beta);
            if alpha * ((alpha / (lo + w)).ln() + v) - LN4 >= z.ln() {
                break w;
            }
        };
        if a == lo {
            lo / (lo + w)
        } else {
            w / (lo + w)
        }
    } else {
        // BB
        let beta = ((alpha - 2.0) / (2.0 * lo * hi - alpha)).sqrt();
        let gamma = lo + 1.0 / beta;
        let w = loop {
            let u1 = open01(rng);
            let u2 = open01(rng);
            let (v, w) = v_w(u1, lo, beta);
            let z = u1 * u1 * u2;
            let r = gamma * v - LN4;
            let s = lo + r - w;
            if s + LN5_PLUS1 >= 5.0 * z {
                break w;
            }
            let t = z.ln();
            if s > t || r + alpha * (alpha / (hi + w)).ln() >= t {
                break w;
            }
        };
        if a != lo {
            hi / (hi + w)
        } else {
            w / (hi + w)
        }
    }
}

/// `round_half_even(v * u_max)` for `v ~ Beta(alpha_t, beta_t)`.
pub fn sample_count<R: RngCore + ?Sized>(alpha_t: f64, beta_t: f64, u_max: u64, rng: &mut R) -> u64 {
    let v = sample_beta(alpha_t, beta_t, rng);
    let scaled = (v * u_max as f64).round_ties_even();
    (scaled.max(0.0) as u64).min(u_max)
}

/// Generates a trace; the output is a pure function of `config`.
pub fn generate(config: &GeneratorConfig) -> Result<BinnedTrace, GeneratorError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let horizon = if config.contents.is_empty() { 0 } else { config.horizon };
    let mut trace = BinnedTrace::new(config.bin_width, horizon);
    for profile in &config.contents {
        trace.content_catalog.insert(profile.content);
    }
    for t in 0..horizon {
        for profile in &config.contents {
            let (a, b) = shape_at(profile, t);
            let n = sample_count(a, b, profile.u_max, &mut rng);
            trace.add(t, profile.content, n);
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_up_endpoints() {
        let p = PhaseSchedule::ramp_up(3, 13, 0.4);
        assert_eq!(mixing_weight(&p, 3).unwrap(), 1.0);
        assert_eq!(mixing_weight(&p, 13).unwrap(), 0.0);
    }

    #[test]
    fn ramp_down_endpoints_and_midpoint() {
        let p = PhaseSchedule::ramp_down(0, 10, 0.5);
        assert_eq!(mixing_weight(&p, 0).unwrap(), 0.0);
        assert_eq!(mixing_weight(&p, 10).unwrap(), 1.0);
        let direct = (2.5f64.exp() - 1.0) / (5.0f64.exp() - 1.0);
        assert!((mixing_weight(&p, 5).unwrap() - direct).abs() < 1e-12);
        assert!((direct - 0.075_858).abs() < 1e-6);
    }

    #[test]
    fn out_of_window() {
        let p = PhaseSchedule::ramp_up(3, 13, 0.4);
        assert_eq!(mixing_weight(&p, 2), Err(GeneratorError::OutOfWindow { t: 2, t0: 3, t1: 13 }));
        assert!(mixing_weight(&p, 14).is_err());
    }

    #[test]
    fn large_gamma_does_not_overflow() {
        let p = PhaseSchedule::ramp_up(0, 10_000, 5.0);
        let y = mixing_weight(&p, 5_000).unwrap();
        assert!(y.is_finite() && (y - 1.0).abs() < 1e-12);
    }

    fn flash_profile() -> ContentProfile {
        ContentProfile::flash(
            0,
            100,
            2.0,
            8.0,
            &[(PhaseSchedule::ramp_up(10, 20, 0.3), PhaseSchedule::ramp_down(30, 40, 0.3))],
        )
    }

    #[test]
    fn shape_follows_phases() {
        let p = flash_profile();
        assert_eq!(shape_at(&p, 0), (2.0, 8.0));
        assert_eq!(shape_at(&p, 10), (2.0, 8.0));
        assert_eq!(shape_at(&p, 20), (8.0, 2.0));
        assert_eq!(shape_at(&p, 25), (8.0, 2.0));
        assert_eq!(shape_at(&p, 40), (2.0, 8.0));
        assert_eq!(shape_at(&p, 90), (2.0, 8.0));
    }

    #[test]
    fn convex_combination_midpoint() {
        let y = 0.5;
        let alpha = y * 2.0 + (1.0 - y) * 8.0;
        assert_eq!((alpha, 10.0 - alpha), (5.0, 5.0));
    }

    #[test]
    fn mixing_weight_is_monotone() {
        let up = PhaseSchedule::ramp_up(0, 50, 0.1);
        let down = PhaseSchedule::ramp_down(0, 50, 0.1);
        for t in 1..=50 {
            assert!(mixing_weight(&up, t).unwrap() <= mixing_weight(&up, t - 1).unwrap());
            assert!(mixing_weight(&down, t).unwrap() >= mixing_weight(&down, t - 1).unwrap());
        }
    }

    #[test]
    fn counts_stay_in_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(a, b) in &[(0.3, 0.4), (1.0, 1.0), (5.0, 0.5), (30.0, 2.0)] {
            for _ in 0..2_000 {
                assert!(sample_count(a, b, 17, &mut rng) <= 17);
            }
        }
    }

    #[test]
    fn beta_variance_matches() {
        // Checks both branches against the closed-form variance.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(a, b) in &[(0.5, 3.0), (4.0, 0.7), (2.5, 6.0), (9.0, 3.0)] {
            let n = 100_000;
            let xs: Vec<f64> = (0..n).map(|_| sample_beta(a, b, &mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let want_mean = a / (a + b);
            let want_var = a * b / ((a + b).powi(2) * (a + b + 1.0));
            assert!((mean - want_mean).abs() < 0.01, "{a},{b}: mean {mean} vs {want_mean}");
            assert!((var / want_var - 1.0).abs() < 0.05, "{a},{b}: var {var} vs {want_var}");
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = GeneratorConfig { horizon: 60, bin_width: 1, seed: 99, contents: vec![flash_profile()] };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = GeneratorConfig { seed: 100, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn zero_contents_gives_empty_trace() {
        let cfg = GeneratorConfig { horizon: 60, bin_width: 1, seed: 1, contents: vec![] };
        let t = generate(&cfg).unwrap();
        assert_eq!(t.horizon(), 0);
        assert!(t.content_catalog.is_empty());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut p = flash_profile();
        p.phases[1].t0 = 15;
        let cfg = GeneratorConfig { horizon: 60, bin_width: 1, seed: 1, contents: vec![p] };
        assert!(matches!(generate(&cfg), Err(GeneratorError::Invalid(_))));
        let cfg = GeneratorConfig { horizon: 35, bin_width: 1, seed: 1, contents: vec![flash_profile()] };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = GeneratorConfig { horizon: 60, bin_width: 1, seed: 5, contents: vec![flash_profile()] };
        assert_eq!(GeneratorConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.ground_truth(), Some((10, 40)));
    }
}
