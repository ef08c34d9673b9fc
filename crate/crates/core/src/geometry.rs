//! Linear probes on semantic latents, signed hyperplane distance, and the
//! distance → grade calibration used for ordinal prediction and for sizing
//! counterfactual edits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decision boundary `n·w + b = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub n: Vec<f64>,
    pub b: f64,
}

impl Hyperplane {
    pub fn new(n: Vec<f64>, b: f64) -> Result<Self> {
        let h = Hyperplane { n, b };
        if !(h.norm() > 0.0) || !h.b.is_finite() {
            return Err(Error::Domain("hyperplane normal must be non-zero and finite".into()));
        }
        Ok(h)
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn norm(&self) -> f64 {
        self.n.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn unit_normal(&self) -> Vec<f64> {
        let k = self.norm();
        self.n.iter().map(|v| v / k).collect()
    }

    /// `n·w + b`.
    pub fn decision(&self, w: &[f64]) -> f64 {
        dot(&self.n, w) + self.b
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(n·w + b) / ‖n‖`.
pub fn signed_distance(w: &[f64], p: &Hyperplane) -> Result<f64> {
    if w.len() != p.dim() {
        return Err(Error::Shape(format!("latent has dim {}, hyperplane {}", w.len(), p.dim())));
    }
    let norm = p.norm();
    if !(norm > 0.0) {
        return Err(Error::Domain("hyperplane with zero normal".into()));
    }
    Ok(p.decision(w) / norm)
}

fn check_binary(xs: &[Vec<f64>], ys: &[u8]) -> Result<usize> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("{} latents but {} labels", xs.len(), ys.len())));
    }
    let dim = xs.first().map_or(0, Vec::len);
    if xs.iter().any(|x| x.len() != dim) {
        return Err(Error::Shape("latents of differing dimension".into()));
    }
    if let Some(&bad) = ys.iter().find(|&&y| y > 1) {
        return Err(Error::Domain(format!("binary label {bad} not in {{0, 1}}")));
    }
    let pos = ys.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == ys.len() {
        return Err(Error::DegenerateData("probe training needs both classes".into()));
    }
    Ok(dim)
}

/// Per-feature mean and standard deviation, for optional standardization.
/// Constant features get unit scale.
fn feature_stats(xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = xs[0].len();
    let m = xs.len() as f64;
    let mut mean = vec![0.0; d];
    for x in xs {
        for (a, v) in mean.iter_mut().zip(x) {
            *a += v / m;
        }
    }
    let mut sd = vec![0.0; d];
    for x in xs {
        for ((a, v), mu) in sd.iter_mut().zip(x).zip(&mean) {
            *a += (v - mu) * (v - mu) / m;
        }
    }
    let sd = sd.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
    (mean, sd)
}

/// Fit on standardized features, then express the plane in raw coordinates.
fn fit_standardized(
    xs: &[Vec<f64>],
    fit: impl FnOnce(&[Vec<f64>]) -> Result<Hyperplane>,
) -> Result<Hyperplane> {
    let (mean, sd) = feature_stats(xs);
    let zs: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| x.iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    let h = fit(&zs)?;
    let n: Vec<f64> = h.n.iter().zip(&sd).map(|(v, s)| v / s).collect();
    let b = h.b - dot(&n, &mean);
    Hyperplane::new(n, b)
}

/// Fit on mean-centered features and map the plane back. The bias is not
/// regularized, so the optimum is unchanged; only the conditioning improves
/// (latents sit far from the origin, which starves the bias of progress).
fn fit_centered(xs: &[Vec<f64>], fit: impl FnOnce(&[Vec<f64>]) -> Result<Hyperplane>) -> Result<Hyperplane> {
    let (mean, _) = feature_stats(xs);
    let zs: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| x.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let h = fit(&zs)?;
    let b = h.b - dot(&h.n, &mean);
    Hyperplane::new(h.n, b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub standardize: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-3,
            epochs: 200,
            standardize: false,
        }
    }
}

/// Linear SVM objective `λ‖n‖²/2 + mean hinge(1 − y(n·w + b))`, labels mapped
/// to `y ∈ {−1, +1}`.
pub fn svm_objective(xs: &[Vec<f64>], ys: &[u8], n: &[f64], b: f64, lambda: f64) -> f64 {
    let hinge: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| (1.0 - sign(y) * (dot(n, x) + b)).max(0.0))
        .sum();
    0.5 * lambda * dot(n, n) + hinge / xs.len() as f64
}

fn sign(y: u8) -> f64 {
    if y == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Full-batch subgradient descent from zero with step `1/(λ·(epoch+1))`.
/// The normal is projected onto the ball `‖n‖ ≤ 1/√λ`, which contains the
/// optimum, and the iterate with the lowest objective is returned since
/// subgradient steps are not monotone.
pub fn fit_svm(xs: &[Vec<f64>], ys: &[u8], cfg: &SvmConfig) -> Result<Hyperplane> {
    let dim = check_binary(xs, ys)?;
    if !(cfg.lambda > 0.0) || cfg.epochs == 0 {
        return Err(Error::Domain("SVM needs λ > 0 and at least one epoch".into()));
    }
    if cfg.standardize {
        let plain = SvmConfig {
            standardize: false,
            ..*cfg
        };
        return fit_standardized(xs, |zs| fit_svm(zs, ys, &plain));
    }
    fit_centered(xs, |zs| svm_subgradient(zs, ys, dim, cfg))
}

fn svm_subgradient(xs: &[Vec<f64>], ys: &[u8], dim: usize, cfg: &SvmConfig) -> Result<Hyperplane> {
    let m = xs.len() as f64;
    let radius = 1.0 / cfg.lambda.sqrt();
    let (mut n, mut b) = (vec![0.0; dim], 0.0);
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for epoch in 0..cfg.epochs {
        let mut gn: Vec<f64> = n.iter().map(|v| cfg.lambda * v).collect();
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let y = sign(y);
            if y * (dot(&n, x) + b) < 1.0 {
                for (g, v) in gn.iter_mut().zip(x) {
                    *g -= y * v / m;
                }
                gb -= y / m;
            }
        }
        let eta = 1.0 / (cfg.lambda * (epoch + 1) as f64);
        for (v, g) in n.iter_mut().zip(&gn) {
            *v -= eta * g;
        }
        b -= eta * gb;
        let norm = dot(&n, &n).sqrt();
        if norm > radius {
            n.iter_mut().for_each(|v| *v *= radius / norm);
        }
        let obj = svm_objective(xs, ys, &n, b, cfg.lambda);
        if obj.is_finite() && dot(&n, &n) > 0.0 && best.as_ref().is_none_or(|(o, _, _)| obj < *o) {
            best = Some((obj, n.clone(), b));
        }
    }
    let (_, n, b) = best.ok_or_else(|| Error::Numeric("SVM produced no usable iterate".into()))?;
    Hyperplane::new(n, b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub standardize: bool,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            lambda: 1e-4,
            epochs: 500,
            standardize: false,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradient of `mean log-loss + λ‖n‖²/2` (bias unregularized), as
/// `(∇n, ∂b)`.
pub fn logistic_gradient(xs: &[Vec<f64>], ys: &[u8], n: &[f64], b: f64, lambda: f64) -> (Vec<f64>, f64) {
    let m = xs.len() as f64;
    let mut gn: Vec<f64> = n.iter().map(|v| lambda * v).collect();
    let mut gb = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let r = (sigmoid(dot(n, x) + b) - f64::from(y)) / m;
        for (g, v) in gn.iter_mut().zip(x) {
            *g += r * v;
        }
        gb += r;
    }
    (gn, gb)
}

/// L2-regularized logistic regression by full-batch gradient descent with
/// step `1/L`, `L` the Lipschitz constant of the gradient
/// (`λ_max(X̃ᵀX̃)/(4m) + λ`, `X̃` the data with a bias column).
pub fn fit_logistic(xs: &[Vec<f64>], ys: &[u8], cfg: &LogisticConfig) -> Result<Hyperplane> {
    let dim = check_binary(xs, ys)?;
    if !(cfg.lambda >= 0.0) || cfg.epochs == 0 {
        return Err(Error::Domain("logistic regression needs λ ≥ 0 and at least one epoch".into()));
    }
    if cfg.standardize {
        let plain = LogisticConfig {
            standardize: false,
            ..*cfg
        };
        return fit_standardized(xs, |zs| fit_logistic(zs, ys, &plain));
    }
    fit_centered(xs, |zs| logistic_descent(zs, ys, dim, cfg))
}

fn logistic_descent(xs: &[Vec<f64>], ys: &[u8], dim: usize, cfg: &LogisticConfig) -> Result<Hyperplane> {
    let m = xs.len();
    let design = DMatrix::from_fn(m, dim + 1, |i, j| if j < dim { xs[i][j] } else { 1.0 });
    let gram = design.transpose() * &design;
    let top = gram.symmetric_eigenvalues().max();
    let lipschitz = top / (4.0 * m as f64) + cfg.lambda;
    let step = 1.0 / lipschitz;
    let (mut n, mut b) = (vec![0.0; dim], 0.0);
    for _ in 0..cfg.epochs {
        let (gn, gb) = logistic_gradient(xs, ys, &n, b, cfg.lambda);
        for (v, g) in n.iter_mut().zip(&gn) {
            *v -= step * g;
        }
        b -= step * gb;
    }
    Hyperplane::new(n, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    MeansOfExtremes,
    LeastSquares,
    Polynomial,
}

impl std::str::FromStr for CalibrationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "means-of-extremes" => Ok(CalibrationMode::MeansOfExtremes),
            "least-squares" => Ok(CalibrationMode::LeastSquares),
            "polynomial" => Ok(CalibrationMode::Polynomial),
            _ => Err(Error::Domain(format!("unknown calibration mode `{s}`"))),
        }
    }
}

/// Points checked for strict monotonicity of a polynomial fit.
pub const MONOTONE_GRID: usize = 1000;
const BISECTION_TOL: f64 = 1e-10;

/// Map from signed distance `d` to continuous grade `s(d) = Σ c_k d^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mode: CalibrationMode,
    pub degree: usize,
    pub coeffs: Vec<f64>,
    pub gmax: f64,
    /// Distance interval the fit is validated on: the observed range for
    /// polynomial fits, the distances of grades 0 and `gmax` for linear ones.
    pub range: [f64; 2],
    /// Distinct grade values present in the fitting data.
    pub grades_used: Vec<f64>,
}

impl Calibration {
    /// Linear calibration `s(d) = c0 + c1·d`.
    pub fn linear(mode: CalibrationMode, c0: f64, c1: f64, gmax: f64, grades_used: Vec<f64>) -> Result<Self> {
        if !(c1 != 0.0 && c1.is_finite() && c0.is_finite()) {
            return Err(Error::DegenerateCalibration(format!("slope {c1} is not usable")));
        }
        let (a, b) = ((0.0 - c0) / c1, (gmax - c0) / c1);
        Ok(Calibration {
            mode,
            degree: 1,
            coeffs: vec![c0, c1],
            gmax,
            range: [a.min(b), a.max(b)],
            grades_used,
        })
    }

    pub fn score(&self, d: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * d + c)
    }

    fn derivative(&self, d: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * d + k as f64 * c)
    }

    pub fn is_linear(&self) -> bool {
        self.degree == 1
    }

    /// True when the score increases with distance.
    pub fn increasing(&self) -> bool {
        self.score(self.range[1]) > self.score(self.range[0])
    }

    /// Grade interval reachable inside the monotone range.
    pub fn score_range(&self) -> (f64, f64) {
        if self.is_linear() {
            return (0.0, self.gmax);
        }
        let (a, b) = (self.score(self.range[0]), self.score(self.range[1]));
        (a.min(b), a.max(b))
    }

    /// The distance with `s(d) = target`. Targets must lie in `[0, gmax]`
    /// (and, for polynomial fits, in the image of the monotone range).
    pub fn invert(&self, target: f64) -> Result<f64> {
        let (lo, hi) = self.score_range();
        let (lo, hi) = (lo.max(0.0), hi.min(self.gmax));
        if !(target >= lo && target <= hi) {
            return Err(Error::OutOfRange { target, lo, hi });
        }
        self.invert_unbounded(target)
    }

    /// Like [`invert`](Self::invert) but lets linear calibrations extrapolate
    /// beyond `[0, gmax]`.
    pub fn invert_unbounded(&self, target: f64) -> Result<f64> {
        if self.is_linear() {
            return Ok((target - self.coeffs[0]) / self.coeffs[1]);
        }
        let (lo, hi) = self.score_range();
        if !(target >= lo && target <= hi) {
            return Err(Error::OutOfRange { target, lo, hi });
        }
        let up = self.increasing();
        let (mut a, mut b) = (self.range[0], self.range[1]);
        while b - a > BISECTION_TOL {
            let mid = 0.5 * (a + b);
            if (self.score(mid) < target) == up {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(0.5 * (a + b))
    }

    /// Score sampled at `points` distances spanning the calibrated range
    /// padded by a quarter of its width on each side (linear fits) or the
    /// monotone range itself (polynomial fits).
    pub fn curve(&self, points: usize) -> Vec<(f64, f64)> {
        let [a, b] = self.range;
        let pad = if self.is_linear() { 0.25 * (b - a) } else { 0.0 };
        let (a, b) = (a - pad, b + pad);
        (0..points)
            .map(|i| {
                let d = if points == 1 {
                    a
                } else {
                    a + (b - a) * i as f64 / (points - 1) as f64
                };
                (d, self.score(d))
            })
            .collect()
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn distinct(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Fit a calibration from `(distance, grade)` pairs.
pub fn fit_calibration(
    distances: &[f64],
    grades: &[f64],
    mode: CalibrationMode,
    degree: usize,
    gmax: f64,
) -> Result<Calibration> {
    if distances.len() != grades.len() {
        return Err(Error::Shape(format!(
            "{} distances but {} grades",
            distances.len(),
            grades.len()
        )));
    }
    if distances.iter().chain(grades).any(|v| !v.is_finite()) {
        return Err(Error::Domain("calibration data must be finite".into()));
    }
    let used = distinct(grades);
    match mode {
        CalibrationMode::MeansOfExtremes => {
            let at = |g: f64| mean(distances.iter().zip(grades).filter(|(_, &x)| x == g).map(|(&d, _)| d));
            let (d0, dmax) = match (at(0.0), at(gmax)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::DegenerateData(format!(
                        "means-of-extremes needs samples of grade 0 and grade {gmax}"
                    )))
                }
            };
            if dmax == d0 {
                return Err(Error::DegenerateCalibration(format!(
                    "grade-0 and grade-{gmax} mean distances coincide ({d0})"
                )));
            }
            let c1 = gmax / (dmax - d0);
            let extremes = used.iter().copied().filter(|&g| g == 0.0 || g == gmax).collect();
            Calibration::linear(mode, -c1 * d0, c1, gmax, extremes)
        }
        CalibrationMode::LeastSquares => {
            if used.len() < 2 {
                return Err(Error::DegenerateData("least squares needs at least 2 distinct grades".into()));
            }
            let md = mean(distances.iter().copied()).unwrap_or(0.0);
            let mg = mean(grades.iter().copied()).unwrap_or(0.0);
            let sxx: f64 = distances.iter().map(|d| (d - md) * (d - md)).sum();
            let sxy: f64 = distances.iter().zip(grades).map(|(d, g)| (d - md) * (g - mg)).sum();
            if sxx == 0.0 {
                return Err(Error::DegenerateCalibration("all distances are equal".into()));
            }
            let c1 = sxy / sxx;
            Calibration::linear(mode, mg - c1 * md, c1, gmax, used)
        }
        CalibrationMode::Polynomial => fit_polynomial(distances, grades, degree, gmax, used),
    }
}

fn fit_polynomial(distances: &[f64], grades: &[f64], degree: usize, gmax: f64, used: Vec<f64>) -> Result<Calibration> {
    if degree == 0 {
        return Err(Error::Domain("polynomial degree must be at least 1".into()));
    }
    if used.len() < degree + 1 {
        return Err(Error::DegenerateData(format!(
            "degree {degree} needs at least {} distinct grades, got {}",
            degree + 1,
            used.len()
        )));
    }
    let lo = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::DegenerateCalibration("all distances are equal".into()));
    }
    // Solve in the centred, scaled variable u = (d − c)/h for conditioning,
    // then expand back to powers of d.
    let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let a = DMatrix::from_fn(distances.len(), degree + 1, |i, k| ((distances[i] - c) / h).powi(k as i32));
    let y = DVector::from_column_slice(grades);
    let sol = a
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| Error::Numeric(format!("polynomial least squares failed: {e}")))?;
    let coeffs = expand_shifted(sol.as_slice(), c, h);
    let cal = Calibration {
        mode: CalibrationMode::Polynomial,
        degree,
        coeffs,
        gmax,
        range: [lo, hi],
        grades_used: used,
    };
    check_monotone(&cal)?;
    Ok(cal)
}

/// Coefficients in `d` of `Σ a_k ((d − c)/h)^k`.
fn expand_shifted(a: &[f64], c: f64, h: f64) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    // (d − c)^k expanded with binomial coefficients.
    for (k, &ak) in a.iter().enumerate() {
        let scale = ak / h.powi(k as i32);
        let mut binom = 1.0;
        for (j, o) in out.iter_mut().enumerate().take(k + 1) {
            *o += scale * binom * (-c).powi((k - j) as i32);
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
    }
    out
}

fn check_monotone(cal: &Calibration) -> Result<()> {
    let [lo, hi] = cal.range;
    let scores: Vec<f64> = (0..MONOTONE_GRID)
        .map(|i| cal.score(lo + (hi - lo) * i as f64 / (MONOTONE_GRID - 1) as f64))
        .collect();
    let up = scores.windows(2).all(|w| w[1] > w[0]);
    let down = scores.windows(2).all(|w| w[1] < w[0]);
    if !(up || down) {
        let turn = (0..MONOTONE_GRID)
            .map(|i| lo + (hi - lo) * i as f64 / (MONOTONE_GRID - 1) as f64)
            .find(|&d| cal.derivative(d).signum() != cal.derivative(lo).signum());
        return Err(Error::CalibrationRejected(format!(
            "degree-{} fit is not strictly monotone on [{lo}, {hi}] (turns near d = {:?})",
            cal.degree, turn
        )));
    }
    Ok(())
}

/// Continuous score and integer grade: round half away from zero after
/// clamping to `[0, gmax]`.
pub fn predict_grade(w: &[f64], p: &Hyperplane, cal: &Calibration) -> Result<(f64, u8)> {
    let score = cal.score(signed_distance(w, p)?);
    Ok((score, round_grade(score, cal.gmax)))
}

pub fn round_grade(score: f64, gmax: f64) -> u8 {
    if score.is_nan() {
        return 0;
    }
    score.clamp(0.0, gmax).round() as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    Svm,
    Logistic,
}

impl std::str::FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svm" => Ok(ProbeKind::Svm),
            "logistic" => Ok(ProbeKind::Logistic),
            _ => Err(Error::Domain(format!("unknown probe kind `{s}`"))),
        }
    }
}

/// Serialized probe: hyperplane plus (once calibrated) its calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub kind: ProbeKind,
    pub n: Vec<f64>,
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cal: Option<Calibration>,
}

impl Probe {
    pub fn hyperplane(&self) -> Result<Hyperplane> {
        Hyperplane::new(self.n.clone(), self.b)
    }

    pub fn calibration(&self) -> Result<&Calibration> {
        self.cal
            .as_ref()
            .ok_or_else(|| Error::Config("probe has no calibration; run calibrate first".into()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::json::write(path, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let probe: Probe = crate::json::read(path)?;
        probe.hyperplane()?;
        Ok(probe)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_arithmetic() {
        let p = Hyperplane::new(vec![3.0, 4.0], 0.0).unwrap();
        assert_eq!(signed_distance(&[5.0, 0.0], &p).unwrap(), 3.0);
        assert!(matches!(signed_distance(&[1.0], &p), Err(Error::Shape(_))));
        assert!(Hyperplane::new(vec![0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn shifted_basis_expansion() {
        // 1 + 2u + 3u² with u = (d − 1)/2, expanded in powers of d.
        let coeffs = expand_shifted(&[1.0, 2.0, 3.0], 1.0, 2.0);
        for d in [-2.0, 0.0, 0.5, 3.0] {
            let u: f64 = (d - 1.0) / 2.0;
            let want = 1.0 + 2.0 * u + 3.0 * u * u;
            let got: f64 = coeffs.iter().enumerate().map(|(k, c)| c * d.powi(k as i32)).sum();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(round_grade(1.5, 3.0), 2);
        assert_eq!(round_grade(2.5, 3.0), 3);
        assert_eq!(round_grade(-0.4, 3.0), 0);
        assert_eq!(round_grade(7.0, 3.0), 3);
        assert_eq!(round_grade(0.49, 3.0), 0);
    }
}
