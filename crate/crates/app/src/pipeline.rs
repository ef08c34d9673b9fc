//! Pipeline steps shared by the CLI and the service: latent caching, probe
//! and calibration fitting, evaluation, and counterfactual export.

use std::path::Path;

use latentgrade::corpus::{Corpus, Sample, Split, MAX_GRADE};
use latentgrade::counterfactual::{generate_ce, CeMode, CeSteps, CounterfactualResult};
use latentgrade::dae::{embed_corpus, load_latents, save_latents, DaeModel, LatentRecord, DECODE_STEPS, ENCODE_STEPS};
use latentgrade::geometry::{
    fit_calibration, fit_logistic, fit_svm, round_grade, signed_distance, Calibration, CalibrationMode, Hyperplane,
    LogisticConfig, Probe, ProbeKind, SvmConfig,
};
use latentgrade::image::Image;
use latentgrade::metrics::{self, EvalReport};
use latentgrade::par::Execution;
use latentgrade::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::artifacts::Layout;

pub const GMAX: f64 = MAX_GRADE as f64;

pub fn to_f64(z: &[f32]) -> Vec<f64> {
    z.iter().map(|&v| f64::from(v)).collect()
}

/// Semantic latents of `split`, from the cache when it matches the corpus
/// and model, otherwise embedded and cached.
pub fn latents_for(
    layout: &Layout,
    model: &DaeModel,
    corpus: &Corpus,
    split: Split,
    exec: Execution,
) -> Result<Vec<LatentRecord>> {
    let path = layout.latents(split);
    if path.exists() {
        let cached = load_latents(&path)?;
        let ids: Vec<u64> = corpus.split(split).map(|s| s.id).collect();
        let fits = cached.len() == ids.len()
            && cached
                .iter()
                .zip(&ids)
                .all(|(r, &id)| r.id == id && r.z.len() == model.latent_dim());
        if fits {
            return Ok(cached);
        }
    }
    embed(layout, model, corpus, split, exec)
}

/// Embed `split` and overwrite its cache.
pub fn embed(
    layout: &Layout,
    model: &DaeModel,
    corpus: &Corpus,
    split: Split,
    exec: Execution,
) -> Result<Vec<LatentRecord>> {
    let records = embed_corpus(model, corpus, split, exec)?;
    save_latents(&layout.latents(split), &records)?;
    Ok(records)
}

/// Drop every cached latent file (after retraining they are stale).
pub fn clear_latents(layout: &Layout) -> Result<()> {
    for split in Split::ALL {
        let path = layout.latents(split);
        if path.exists() {
            std::fs::remove_file(&path).map_err(|e| Error::Io { path, source: e })?;
        }
    }
    Ok(())
}

fn sample(corpus: &Corpus, id: u64) -> Result<&Sample> {
    corpus
        .get(id)
        .ok_or_else(|| Error::CorruptCorpus {
            id: Some(id),
            reason: "latent cache refers to a sample missing from the corpus".into(),
        })
}

/// Binary probe data: labeled samples only, grade 1 left out, positives are
/// grades 2 and 3.
pub fn probe_dataset(records: &[LatentRecord], corpus: &Corpus) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in records {
        let s = sample(corpus, r.id)?;
        if let Some(label) = s.binary_label.filter(|_| s.grade != 1) {
            xs.push(to_f64(&r.z));
            ys.push(label);
        }
    }
    Ok((xs, ys))
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeOptions {
    pub kind: ProbeKind,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub standardize: bool,
}

pub fn fit_probe(records: &[LatentRecord], corpus: &Corpus, opts: ProbeOptions) -> Result<Probe> {
    let (xs, ys) = probe_dataset(records, corpus)?;
    if xs.is_empty() {
        return Err(Error::DegenerateData("no labeled probe samples".into()));
    }
    let plane = match opts.kind {
        ProbeKind::Svm => {
            let d = SvmConfig::default();
            fit_svm(
                &xs,
                &ys,
                &SvmConfig {
                    lambda: opts.lambda.unwrap_or(d.lambda),
                    epochs: opts.epochs.unwrap_or(d.epochs),
                    standardize: opts.standardize,
                },
            )?
        }
        ProbeKind::Logistic => {
            let d = LogisticConfig::default();
            fit_logistic(
                &xs,
                &ys,
                &LogisticConfig {
                    lambda: opts.lambda.unwrap_or(d.lambda),
                    epochs: opts.epochs.unwrap_or(d.epochs),
                    standardize: opts.standardize,
                },
            )?
        }
    };
    Ok(Probe {
        kind: opts.kind,
        n: plane.n,
        b: plane.b,
        cal: None,
    })
}

/// Signed distances and true samples for `records`.
pub fn distances<'c>(records: &[LatentRecord], corpus: &'c Corpus, plane: &Hyperplane) -> Result<Vec<(f64, &'c Sample)>> {
    records
        .iter()
        .map(|r| Ok((signed_distance(&to_f64(&r.z), plane)?, sample(corpus, r.id)?)))
        .collect()
}

pub fn calibrate(
    records: &[LatentRecord],
    corpus: &Corpus,
    plane: &Hyperplane,
    mode: CalibrationMode,
    degree: usize,
) -> Result<Calibration> {
    let pairs = distances(records, corpus, plane)?;
    let d: Vec<f64> = pairs.iter().map(|(d, _)| *d).collect();
    let g: Vec<f64> = pairs.iter().map(|(_, s)| f64::from(s.grade)).collect();
    fit_calibration(&d, &g, mode, degree, GMAX)
}

/// Detection on the binary task (grades 2-3 positive): AUC of signed
/// distance and F1 at distance 0 over every labeled sample, plus the AUC
/// without the grade-1 band the probe never saw.
pub fn detection_report(records: &[LatentRecord], corpus: &Corpus, plane: &Hyperplane) -> Result<EvalReport> {
    let pairs: Vec<(f64, u8, u8)> = distances(records, corpus, plane)?
        .into_iter()
        .filter_map(|(d, s)| s.binary_label.map(|y| (d, y, s.grade)))
        .collect();
    let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let truth: Vec<u8> = pairs.iter().map(|p| p.1).collect();
    let pred: Vec<u8> = scores.iter().map(|&d| u8::from(d > 0.0)).collect();
    let mut report = EvalReport::new("detection (grades 2-3 positive, threshold d = 0)", pairs.len());
    report.auc = Some(metrics::roc_auc(&scores, &truth)?);
    report.f1_binary = Some(metrics::f1_binary(&pred, &truth)?);
    let (s, t): (Vec<f64>, Vec<u8>) = pairs.iter().filter(|p| p.2 != 1).map(|p| (p.0, p.1)).unzip();
    if let Ok(auc) = metrics::roc_auc(&s, &t) {
        report.extra.push(("auc_without_grade_1".into(), auc));
    }
    Ok(report)
}

/// Grading on every sample: MAE and macro-F1 of rounded grades, confusion,
/// and rank correlation between distance and continuous severity.
pub fn grading_report(
    records: &[LatentRecord],
    corpus: &Corpus,
    plane: &Hyperplane,
    cal: &Calibration,
) -> Result<EvalReport> {
    let pairs = distances(records, corpus, plane)?;
    let classes = MAX_GRADE as usize + 1;
    let pred: Vec<usize> = pairs.iter().map(|(d, _)| round_grade(cal.score(*d), cal.gmax) as usize).collect();
    let truth: Vec<usize> = pairs.iter().map(|(_, s)| s.grade as usize).collect();
    let as_f = |v: &[usize]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let mut report = EvalReport::new(format!("grading ({} calibration)", mode_name(cal.mode)), pairs.len());
    report.mae = Some(metrics::mae(&as_f(&pred), &as_f(&truth))?);
    report.f1_macro = Some(metrics::f1_macro(&pred, &truth, classes)?);
    report.confusion = Some(metrics::confusion(&pred, &truth, classes)?);
    let d: Vec<f64> = pairs.iter().map(|(d, _)| *d).collect();
    let g: Vec<f64> = pairs.iter().map(|(_, s)| s.g).collect();
    report.extra.push(("spearman_distance_g".into(), metrics::spearman(&d, &g)?));
    let middle: (Vec<f64>, Vec<f64>) = pred
        .iter()
        .zip(&truth)
        .filter(|(_, &t)| t == 1 || t == 2)
        .map(|(&p, &t)| (p as f64, t as f64))
        .unzip();
    if !middle.0.is_empty() {
        report.extra.push(("mae_grades_1_2".into(), metrics::mae(&middle.0, &middle.1)?));
    }
    Ok(report)
}

pub fn mode_name(mode: CalibrationMode) -> &'static str {
    match mode {
        CalibrationMode::MeansOfExtremes => "means-of-extremes",
        CalibrationMode::LeastSquares => "least-squares",
        CalibrationMode::Polynomial => "polynomial",
    }
}

/// Encode/decode round trip of `images`; PSNR and SSIM stand in for a
/// learned perceptual metric.
pub fn reconstruction_report(model: &DaeModel, images: &[&Image], steps: CeSteps, exec: Execution) -> Result<EvalReport> {
    let latents = model.encode(images, steps.encode, exec)?;
    let recon = model.decode(&latents, steps.decode, exec)?;
    let mut psnr = 0.0;
    let mut ssim = 0.0;
    for (a, b) in images.iter().zip(&recon) {
        psnr += metrics::psnr(a, b)?;
        ssim += metrics::ssim(a, b, 8)?;
    }
    let n = images.len().max(1) as f64;
    let mut report = EvalReport::new("reconstruction (PSNR/SSIM, substitute perceptual metric)", images.len());
    report.extra.push(("psnr_db".into(), psnr / n));
    report.extra.push(("ssim".into(), ssim / n));
    Ok(report)
}

/// Generation quality: decode the real latents from fresh Gaussian noise,
/// re-embed the samples, and compare the two latent sets by Fréchet
/// distance (a latent-space substitute for an Inception-feature FID).
pub fn generation_report(
    model: &DaeModel,
    records: &[LatentRecord],
    decode_steps: usize,
    seed: u64,
    exec: Execution,
) -> Result<EvalReport> {
    let s = model.image_size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(Vec<f32>, Vec<f32>)> = records
        .iter()
        .map(|r| {
            let noise = (0..s * s).map(|_| StandardNormal.sample(&mut rng)).collect();
            (r.z.clone(), noise)
        })
        .collect();
    let generated = model.decode(&pairs, decode_steps, exec)?;
    let refs: Vec<&Image> = generated.iter().collect();
    let regen = model.encode_semantic(&refs, exec)?;
    let real: Vec<Vec<f64>> = records.iter().map(|r| to_f64(&r.z)).collect();
    let fake: Vec<Vec<f64>> = regen.iter().map(|z| to_f64(z)).collect();
    let mut report = EvalReport::new("generation (latent Frechet, substitute for FID)", records.len());
    report.extra.push(("latent_frechet".into(), metrics::latent_frechet(&real, &fake)?));
    Ok(report)
}

/// A counterfactual result as exported: the library result plus the source
/// id and convenience fields for single-frame modes.
#[derive(Debug, Clone, Serialize)]
pub struct CeExport {
    pub id: Option<u64>,
    #[serde(flatten)]
    pub result: CounterfactualResult,
    pub distance_edited: Option<f64>,
    pub score_edited: Option<f64>,
    pub steps: [usize; 2],
}

impl CeExport {
    pub fn new(id: Option<u64>, result: CounterfactualResult, steps: CeSteps) -> Self {
        CeExport {
            id,
            distance_edited: result.distance_edited(),
            score_edited: (result.frames.len() == 1).then(|| result.frames[0].score),
            result,
            steps: [steps.encode, steps.decode],
        }
    }
}

pub fn run_counterfactual(
    model: &DaeModel,
    probe: &Probe,
    image: &Image,
    id: Option<u64>,
    mode: &CeMode,
    steps: CeSteps,
    exec: Execution,
) -> Result<CeExport> {
    let plane = probe.hyperplane()?;
    let cal = probe.calibration()?;
    let result = generate_ce(model, &plane, cal, image, mode, steps, exec)?;
    Ok(CeExport::new(id, result, steps))
}

/// File label of a frame value: integers bare, others with their decimal.
pub fn value_label(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Write `ce_<id>_<grade>.pgm` per frame (reflections use `reflect`), the
/// reconstruction as `ce_<id>_recon.pgm`, and the JSON as `ce_<id>.json`.
pub fn write_counterfactual(dir: &Path, export: &CeExport) -> Result<Vec<std::path::PathBuf>> {
    let stem = match export.id {
        Some(id) => format!("ce_{id}"),
        None => "ce_image".to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut written = Vec::new();
    let recon = dir.join(format!("{stem}_recon.pgm"));
    export.result.reconstruction.quantized().write_pgm(&recon)?;
    written.push(recon);
    for frame in &export.result.frames {
        let label = frame.value.map_or_else(|| "reflect".to_string(), value_label);
        let path = dir.join(format!("{stem}_{label}.pgm"));
        frame.image.quantized().write_pgm(&path)?;
        written.push(path);
    }
    let json = dir.join(format!("{stem}.json"));
    latentgrade::json::write(&json, export)?;
    written.push(json);
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectedPoint {
    pub id: u64,
    pub grade: u8,
    pub g: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Projection {
    pub split: Split,
    pub explained_ratio: Vec<f64>,
    pub rank_deficient: bool,
    pub points: Vec<ProjectedPoint>,
}

/// 2-D PCA of a split's latents, with each point's grade.
pub fn projection(records: &[LatentRecord], corpus: &Corpus, split: Split) -> Result<Projection> {
    let xs: Vec<Vec<f64>> = records.iter().map(|r| to_f64(&r.z)).collect();
    let pca = metrics::pca_project(&xs, 2)?;
    let points = records
        .iter()
        .zip(&pca.coords)
        .map(|(r, c)| {
            let s = sample(corpus, r.id)?;
            Ok(ProjectedPoint {
                id: r.id,
                grade: s.grade,
                g: s.g,
                x: c[0],
                y: c[1],
            })
        })
        .collect::<Result<_>>()?;
    Ok(Projection {
        split,
        explained_ratio: pca.explained_ratio,
        rank_deficient: pca.rank_deficient,
        points,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurvePoint {
    pub d: f64,
    pub score: f64,
}

pub const CURVE_POINTS: usize = 64;

pub fn calibration_curve(cal: &Calibration) -> Vec<CurvePoint> {
    cal.curve(CURVE_POINTS)
        .into_iter()
        .map(|(d, score)| CurvePoint { d, score })
        .collect()
}

pub fn default_steps() -> CeSteps {
    CeSteps {
        encode: ENCODE_STEPS,
        decode: DECODE_STEPS,
    }
}
