//! Evaluation metrics: ranking, classification, grading, reconstruction
//! quality, latent-distribution distance and PCA.
//!
//! PSNR/SSIM and the latent Fréchet distance stand in for perceptual and
//! Inception-based scores; they are not comparable with those.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// PSNR reported for identical images.
pub const PSNR_IDENTICAL: f64 = 99.0;

/// Probability that a random positive outranks a random negative, ties
/// counting one half (Mann–Whitney U / (n₊·n₋)).
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ROC-AUC needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedMetric("correlation needs at least two points".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("correlation of a constant sequence".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

fn class_f1(pred: &[usize], truth: &[usize], class: usize) -> f64 {
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == class, t == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fne;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn check_pairs<T>(pred: &[T], truth: &[T]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions but {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("no samples".into()));
    }
    Ok(())
}

/// F1 of the positive class (label 1); 0 when there are neither predicted
/// nor actual positives.
pub fn f1_binary(pred: &[u8], truth: &[u8]) -> Result<f64> {
    check_pairs(pred, truth)?;
    let p: Vec<usize> = pred.iter().map(|&v| usize::from(v)).collect();
    let t: Vec<usize> = truth.iter().map(|&v| usize::from(v)).collect();
    Ok(class_f1(&p, &t, 1))
}

/// Unweighted mean of per-class F1 over classes `0..classes`; a class with
/// no support contributes 0.
pub fn f1_macro(pred: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    check_pairs(pred, truth)?;
    if classes == 0 {
        return Err(Error::UndefinedMetric("no classes".into()));
    }
    let total: f64 = (0..classes)
        .map(|c| {
            if truth.contains(&c) {
                class_f1(pred, truth, c)
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / classes as f64)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pairs(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// `confusion[true][pred]` over grades `0..classes`.
pub fn confusion(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    check_pairs(pred, truth)?;
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::Domain(format!("grade outside 0..{classes}")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

fn check_images(a: &Image, b: &Image) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!(
            "{}×{} vs {}×{} images",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio for unit peak; identical images report
/// [`PSNR_IDENTICAL`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_images(a, b)?;
    let mse = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_IDENTICAL))
}

/// Mean SSIM over all `window × window` uniform windows (stride 1), unit
/// dynamic range, `k1 = 0.01`, `k2 = 0.03`, population statistics.
pub fn ssim(a: &Image, b: &Image, window: usize) -> Result<f64> {
    check_images(a, b)?;
    if window == 0 || window > a.width || window > a.height {
        return Err(Error::Shape(format!(
            "SSIM window {window} does not fit a {}×{} image",
            a.width, a.height
        )));
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let count = (window * window) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for y0 in 0..=a.height - window {
        for x0 in 0..=a.width - window {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + window {
                for x in x0..x0 + window {
                    let (u, v) = (f64::from(a.get(x, y)), f64::from(b.get(x, y)));
                    sa += u;
                    sb += v;
                    saa += u * u;
                    sbb += v * v;
                    sab += u * v;
                }
            }
            let (ma, mb) = (sa / count, sb / count);
            let va = saa / count - ma * ma;
            let vb = sbb / count - mb * mb;
            let cov = sab / count - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Mean and (unbiased) covariance of a latent set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianSummary {
    pub fn fit(xs: &[Vec<f64>]) -> Result<Self> {
        let n = xs.len();
        let d = xs.first().map_or(0, Vec::len);
        if n < 2 || d == 0 || xs.iter().any(|x| x.len() != d) {
            return Err(Error::Shape("need at least two equal-length vectors".into()));
        }
        let data = DMatrix::from_fn(n, d, |i, j| xs[i][j]);
        let mean = DVector::from_fn(d, |j, _| data.column(j).sum() / n as f64);
        let centered = DMatrix::from_fn(n, d, |i, j| data[(i, j)] - mean[j]);
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        // Exact symmetry regardless of summation order.
        cov = (&cov + cov.transpose()) * 0.5;
        Ok(GaussianSummary { mean, cov })
    }
}

/// Tolerance below which negative eigenvalues are treated as round-off.
const EIG_NEG_TOL: f64 = 1e-8;

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    if min < -EIG_NEG_TOL {
        return Err(Error::Numeric(format!(
            "{what} is not positive semi-definite: eigenvalues span [{min:.3e}, {:.3e}]",
            eig.eigenvalues.max()
        )));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `‖μ_A − μ_B‖² + Tr(Σ_A + Σ_B − 2(Σ_A Σ_B)^{1/2})`, the trace of the matrix
/// root taken as `Σ √λ_i(Σ_A^{1/2} Σ_B Σ_A^{1/2})`.
pub fn latent_frechet(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let d = a.first().map_or(0, Vec::len);
    if a.len() <= d || b.len() <= d {
        return Err(Error::UndefinedMetric(format!(
            "Fréchet distance in {d} dimensions needs more than {d} samples per set (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let (ga, gb) = (GaussianSummary::fit(a)?, GaussianSummary::fit(b)?);
    if ga.mean.len() != gb.mean.len() {
        return Err(Error::Shape("latent sets of different dimension".into()));
    }
    frechet_between(&ga, &gb)
}

pub fn frechet_between(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    let ra = psd_sqrt(&a.cov, "covariance A")?;
    let mut inner = &ra * &b.cov * &ra;
    inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner).eigenvalues;
    let min = eig.min();
    if min < -EIG_NEG_TOL {
        return Err(Error::Numeric(format!(
            "Σ_A^½ Σ_B Σ_A^½ has eigenvalue {min:.3e}; covariances are ill-conditioned"
        )));
    }
    let tr_root: f64 = eig.iter().map(|v| v.max(0.0).sqrt()).sum();
    let dmu = (&a.mean - &b.mean).norm_squared();
    Ok(dmu + a.cov.trace() + b.cov.trace() - 2.0 * tr_root)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Top-k unit eigenvectors of the covariance, largest first.
    pub components: Vec<Vec<f64>>,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub explained_ratio: Vec<f64>,
    pub coords: Vec<Vec<f64>>,
    /// Set when fewer than `k` directions carry variance.
    pub rank_deficient: bool,
}

impl Pca {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((ci, xi), mi)| ci * (xi - mi)).sum())
            .collect()
    }
}

/// Project onto the top-`k` principal axes. Each axis is signed so that its
/// largest-magnitude entry is positive.
pub fn pca_project(xs: &[Vec<f64>], k: usize) -> Result<Pca> {
    if xs.len() < k + 1 {
        return Err(Error::UndefinedMetric(format!(
            "PCA to {k} components needs at least {} samples",
            k + 1
        )));
    }
    let g = GaussianSummary::fit(xs)?;
    let d = g.mean.len();
    if k == 0 || k > d {
        return Err(Error::Domain(format!("cannot take {k} components of {d}-d data")));
    }
    let eig = SymmetricEigen::new(g.cov.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let components: Vec<Vec<f64>> = order[..k]
        .iter()
        .map(|&i| {
            let v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                v.iter().map(|x| -x).collect()
            } else {
                v
            }
        })
        .collect();
    let scale = eigenvalues.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let rank_deficient = eigenvalues[..k].iter().any(|&v| v <= 1e-12 * scale);
    let explained_ratio = eigenvalues[..k]
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    let mut pca = Pca {
        mean: g.mean.iter().copied().collect(),
        components,
        eigenvalues,
        explained_ratio,
        coords: Vec::new(),
        rank_deficient,
    };
    pca.coords = xs.iter().map(|x| pca.project(x)).collect();
    Ok(pca)
}

/// Scores for one evaluation task. Fields that do not apply are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub n_samples: usize,
    pub auc: Option<f64>,
    pub f1_binary: Option<f64>,
    pub f1_macro: Option<f64>,
    pub mae: Option<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Option<Vec<Vec<usize>>>,
    /// Additional named values (e.g. reconstruction substitutes).
    #[serde(default)]
    pub extra: Vec<(String, f64)>,
}

impl EvalReport {
    pub fn new(task: impl Into<String>, n_samples: usize) -> Self {
        EvalReport {
            task: task.into(),
            n_samples,
            auc: None,
            f1_binary: None,
            f1_macro: None,
            mae: None,
            confusion: None,
            extra: Vec::new(),
        }
    }
}

/// Aligned plain-text rendering of a set of reports.
pub fn render_table(reports: &[EvalReport]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let mut rows = vec![["task", "n", "AUC", "F1", "macro-F1", "MAE"].map(String::from).to_vec()];
    for r in reports {
        rows.push(vec![
            r.task.clone(),
            r.n_samples.to_string(),
            fmt(r.auc),
            fmt(r.f1_binary),
            fmt(r.f1_macro),
            fmt(r.mae),
        ]);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, &w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    for r in reports {
        for (name, v) in &r.extra {
            let _ = writeln!(out, "{}: {name} = {v:.4}", r.task);
        }
        if let Some(m) = &r.confusion {
            let _ = writeln!(out, "{}: confusion (rows = true grade, columns = predicted)", r.task);
            for (g, row) in m.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|c| format!("{c:>4}")).collect();
                let _ = writeln!(out, "  G{g} {}", cells.join(""));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_worked_example() {
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert!((auc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn auc_needs_both_classes() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn f1_formula_cases() {
        assert_eq!(f1_binary(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        let f = f1_binary(&[1, 1, 1, 1], &[1, 0, 1, 0]).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mae_cases() {
        assert_eq!(mae(&[0.0, 3.0], &[3.0, 0.0]).unwrap(), 3.0);
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 3.0]).unwrap(), 1.0);
        assert!(matches!(mae(&[], &[]), Err(Error::UndefinedMetric(_))));
    }
}
