//! Learning curves and dynamic-interval detection.
//!
//! A curve is fitted with the four-parameter logistic
//! `perf(x) = b + a / (1 + exp(-k (x - x0)))` over `x = ln(sample_count)`.
//! The dynamic region is where `d perf / d x` is at least `threshold` times its
//! peak value `a k / 4`; for the logistic this is `s (1 - s) >= threshold / 4`
//! with `s` the sigmoid, i.e. `|x - x0| <= 2 atanh(sqrt(1 - threshold)) / k`.
//!
//! Fitting is Levenberg-Marquardt damped Gauss-Newton from a fixed 5x5 grid of
//! starts: `x0` at 0, 1/4, 1/2, 3/4 and 1 of the observed log-size span, and
//! `k` at 1, 2, 4, 8 and 16 divided by that span. The amplitude and offset of
//! each start come from linear least squares with `k`, `x0` held fixed. The
//! lowest residual wins, earlier starts winning ties.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::PerformanceRecord;

/// Minimum number of distinct sample counts needed to fit a curve.
pub const MIN_CURVE_POINTS: usize = 4;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

const START_X0_FRACTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const START_K_MULTIPLES: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];
const MAX_ITERATIONS: usize = 500;
const FLAT_TOLERANCE: f64 = 1e-9;
/// A fit whose residual norm exceeds this fraction of the curve range is rejected.
const MAX_RELATIVE_RESIDUAL: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    #[error("insufficient curve support: {found} distinct sample counts, need {MIN_CURVE_POINTS}")]
    InsufficientSupport { found: usize },
    #[error("records span several languages ({0} and {1})")]
    MixedLanguages(String, String),
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("no dynamic region: {0}")]
    NoDynamicRegion(NoRegionReason),
    #[error("fit diverged: residual norm {residual} exceeds half the curve range {range}")]
    FitDiverged { residual: f64, range: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoRegionReason {
    Flat,
    Decreasing,
    EmptyRegion,
    Containment { x_left: f64, x_right: f64, max_observed: u64 },
}

impl std::fmt::Display for NoRegionReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoRegionReason::Flat => f.write_str("curve is flat"),
            NoRegionReason::Decreasing => f.write_str("curve is decreasing"),
            NoRegionReason::EmptyRegion => f.write_str("region has empty interior"),
            NoRegionReason::Containment { x_left, x_right, max_observed } => write!(
                f,
                "no observed N with [N, 2N] inside [{:.3}, {:.3}] (max observed {max_observed})",
                x_left.exp(),
                x_right.exp()
            ),
        }
    }
}

/// Four-parameter logistic in log sample count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub a: f64,
    pub b: f64,
    pub k: f64,
    pub x0: f64,
}

impl Logistic {
    pub fn at_log(&self, x: f64) -> f64 {
        self.b + self.a * sigmoid(self.k * (x - self.x0))
    }

    /// Performance at `sample_count` (may be fractional).
    pub fn at(&self, sample_count: f64) -> f64 {
        self.at_log(sample_count.ln())
    }

    pub fn derivative_log(&self, x: f64) -> f64 {
        let s = sigmoid(self.k * (x - self.x0));
        self.a * self.k * s * (1.0 - s)
    }

    /// Rewrites a `k < 0` parameterisation as the equivalent `k > 0` one.
    fn canonical(self) -> Self {
        if self.k < 0.0 {
            Logistic { a: -self.a, b: self.b + self.a, k: -self.k, x0: self.x0 }
        } else {
            self
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Half-width of `{x : derivative >= threshold * max derivative}` for slope `k`.
pub fn region_half_width(k: f64, threshold: f64) -> f64 {
    2.0 * (1.0 - threshold).sqrt().atanh() / k
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub sample_count: u64,
    pub perf: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub language: String,
    pub points: Vec<CurvePoint>,
}

/// Seed-averaged curve for one language, one point per distinct sample count.
pub fn build_curve(records: &[PerformanceRecord]) -> Result<LearningCurve, CurveError> {
    let language = records.first().map(|r| r.target.clone()).unwrap_or_default();
    let mut groups: BTreeMap<u64, Vec<(u64, f64)>> = BTreeMap::new();
    for r in records {
        if r.target != language {
            return Err(CurveError::MixedLanguages(language, r.target.clone()));
        }
        groups.entry(r.sample_count).or_default().push((r.seed, r.value));
    }
    if groups.len() < MIN_CURVE_POINTS {
        return Err(CurveError::InsufficientSupport { found: groups.len() });
    }
    let points = groups
        .into_iter()
        .map(|(sample_count, mut values)| {
            values.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let perf = values.iter().map(|v| v.1).sum::<f64>() / values.len() as f64;
            CurvePoint { sample_count, perf, seeds: values.len() }
        })
        .collect();
    Ok(LearningCurve { language, points })
}

/// Groups records by target language, preserving first appearance order.
pub fn split_by_language(records: &[PerformanceRecord]) -> Vec<(String, Vec<PerformanceRecord>)> {
    let mut out: Vec<(String, Vec<PerformanceRecord>)> = Vec::new();
    for r in records {
        match out.iter_mut().find(|(l, _)| *l == r.target) {
            Some((_, v)) => v.push(r.clone()),
            None => out.push((r.target.clone(), vec![r.clone()])),
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub a: f64,
    pub b: f64,
    pub k: f64,
    pub x0: f64,
    pub residual: f64,
}

impl FitSummary {
    pub fn logistic(&self) -> Logistic {
        Logistic { a: self.a, b: self.b, k: self.k, x0: self.x0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicInterval {
    pub language: String,
    pub n_low: u64,
    pub n_high: u64,
    pub x_left: f64,
    pub x_right: f64,
    pub fit: FitSummary,
}

/// Least-squares logistic fit over `(ln sample_count, perf)`.
pub fn fit_logistic(xs: &[f64], ys: &[f64]) -> Option<(Logistic, f64)> {
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let span = (hi - lo).max(f64::EPSILON);
    let mut best: Option<(Logistic, f64)> = None;
    for &fx in &START_X0_FRACTIONS {
        for &mk in &START_K_MULTIPLES {
            let (k, x0) = (mk / span, lo + fx * span);
            let Some((a, b)) = linear_amplitude(xs, ys, k, x0) else { continue };
            let fitted = levenberg_marquardt(xs, ys, Logistic { a, b, k, x0 });
            let sse = sum_squares(xs, ys, &fitted);
            if sse.is_finite() && best.as_ref().is_none_or(|(_, s)| sse < *s) {
                best = Some((fitted, sse));
            }
        }
    }
    best.map(|(fit, sse)| (fit.canonical(), sse.sqrt()))
}

fn linear_amplitude(xs: &[f64], ys: &[f64], k: f64, x0: f64) -> Option<(f64, f64)> {
    let m = xs.len() as f64;
    let s: Vec<f64> = xs.iter().map(|&x| sigmoid(k * (x - x0))).collect();
    let (ss, sy) = (s.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sss: f64 = s.iter().map(|v| v * v).sum();
    let ssy: f64 = s.iter().zip(ys).map(|(a, b)| a * b).sum();
    let det = m * sss - ss * ss;
    if det.abs() < 1e-14 * m * sss.max(1.0) {
        return None;
    }
    let a = (m * ssy - ss * sy) / det;
    let b = (sy - a * ss) / m;
    Some((a, b))
}

fn sum_squares(xs: &[f64], ys: &[f64], f: &Logistic) -> f64 {
    xs.iter().zip(ys).map(|(&x, &y)| (f.at_log(x) - y).powi(2)).sum()
}

fn levenberg_marquardt(xs: &[f64], ys: &[f64], start: Logistic) -> Logistic {
    let mut p = [start.a, start.b, start.k, start.x0];
    let as_logistic = |p: &[f64; 4]| Logistic { a: p[0], b: p[1], k: p[2], x0: p[3] };
    let mut sse = sum_squares(xs, ys, &as_logistic(&p));
    let mut lambda = 1e-3;

    for _ in 0..MAX_ITERATIONS {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (&x, &y) in xs.iter().zip(ys) {
            let s = sigmoid(p[2] * (x - p[3]));
            let ds = s * (1.0 - s);
            let row = [s, 1.0, p[0] * ds * (x - p[3]), -p[0] * ds * p[2]];
            let r = p[1] + p[0] * s - y;
            for i in 0..4 {
                jtr[i] += row[i] * r;
                for j in 0..4 {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }

        let mut improved = false;
        while lambda < 1e16 {
            let mut system = jtj;
            for (i, row) in system.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-12);
            }
            let rhs = jtr.map(|g| -g);
            let Some(step) = solve4(system, rhs) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2], p[3] + step[3]];
            let trial_sse = sum_squares(xs, ys, &as_logistic(&trial));
            if trial_sse.is_finite() && trial_sse <= sse {
                let step_norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
                let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                let stalled = step_norm <= 1e-15 * (p_norm + 1e-15) || trial_sse == sse;
                p = trial;
                sse = trial_sse;
                lambda = (lambda / 10.0).max(1e-15);
                improved = !stalled;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    as_logistic(&p)
}

/// Gaussian elimination with partial pivoting on a 4x4 system.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let factor = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (dst, src) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= factor * src;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let tail: f64 = (row + 1..4).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Fits the curve and picks the smallest observed `N` whose `[N, 2N]` lies in
/// the dynamic region and within the observed sizes.
pub fn detect_dynamic_interval(curve: &LearningCurve, threshold: f64) -> Result<DynamicInterval, CurveError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(CurveError::InvalidThreshold(threshold));
    }
    if curve.points.len() < MIN_CURVE_POINTS {
        return Err(CurveError::InsufficientSupport { found: curve.points.len() });
    }
    let xs: Vec<f64> = curve.points.iter().map(|p| (p.sample_count as f64).ln()).collect();
    let ys: Vec<f64> = curve.points.iter().map(|p| p.perf).collect();
    let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &y| (l.min(y), h.max(y)));
    let range = hi - lo;
    let scale = lo.abs().max(hi.abs()).max(1.0);
    if range <= FLAT_TOLERANCE * scale {
        return Err(CurveError::NoDynamicRegion(NoRegionReason::Flat));
    }

    let (fit, residual) = fit_logistic(&xs, &ys).ok_or(CurveError::NoDynamicRegion(NoRegionReason::Flat))?;
    if residual > MAX_RELATIVE_RESIDUAL * range {
        return Err(CurveError::FitDiverged { residual, range });
    }
    if fit.a.abs() <= FLAT_TOLERANCE * scale || fit.k == 0.0 {
        return Err(CurveError::NoDynamicRegion(NoRegionReason::Flat));
    }
    if fit.a < 0.0 {
        return Err(CurveError::NoDynamicRegion(NoRegionReason::Decreasing));
    }

    let half = region_half_width(fit.k, threshold);
    if half <= 0.0 {
        return Err(CurveError::NoDynamicRegion(NoRegionReason::EmptyRegion));
    }
    let (x_left, x_right) = (fit.x0 - half, fit.x0 + half);
    let lower = x_left.exp().ceil();
    let upper = x_right.exp().floor();
    let max_observed = curve.points.last().map_or(0, |p| p.sample_count);
    let n_low = curve
        .points
        .iter()
        .map(|p| p.sample_count)
        .find(|&n| n as f64 >= lower && (2 * n) as f64 <= upper && 2 * n <= max_observed)
        .ok_or(CurveError::NoDynamicRegion(NoRegionReason::Containment { x_left, x_right, max_observed }))?;

    Ok(DynamicInterval {
        language: curve.language.clone(),
        n_low,
        n_high: 2 * n_low,
        x_left,
        x_right,
        fit: FitSummary { a: fit.a, b: fit.b, k: fit.k, x0: fit.x0, residual },
    })
}
