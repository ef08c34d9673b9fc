//! Synthetic graded corpus: a bright block whose height shrinks linearly with
//! a continuous severity `g`, on a noisy background.
//!
//! On disk a corpus is a directory holding `manifest.csv`, a JSON sidecar with
//! the generator settings and per-image SHA-256 digests, and one P5 PGM per
//! sample under `images/`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;

pub const IMAGE_SIZE: usize = 32;
pub const MAX_GRADE: u8 = 3;
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const META_FILE: &str = "manifest.meta.json";

const BACKGROUND_MEAN: f64 = 0.1;
const BACKGROUND_STD: f64 = 0.05;
const BLOCK_INTENSITY: f32 = 0.8;
const BLOCK_WIDTH: i64 = 16;
const WIDTH_JITTER: i64 = 2;
const HEIGHT_JITTER: i64 = 3;
/// Severities strictly inside this band lose their binary label in the
/// probe-training split.
const UNLABELED_BAND: (f64, f64) = (0.4, 0.6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    TrainDae,
    TrainProbe,
    Calibrate,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::TrainDae, Split::TrainProbe, Split::Calibrate, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::TrainDae => "train-dae",
            Split::TrainProbe => "train-probe",
            Split::Calibrate => "calibrate",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| Error::Domain(format!("unknown split `{s}`")))
    }
}

/// Ordinal grade for severity `g`: quartile index, capped at 3.
pub fn grade_of(g: f64) -> u8 {
    ((4.0 * g).floor() as i64).clamp(0, MAX_GRADE as i64) as u8
}

/// Binary label convention: grades 2 and 3 are positive.
pub fn binary_label_of(grade: u8) -> u8 {
    u8::from(grade >= 2)
}

/// Block height in pixels for severity `g`.
pub fn block_height(g: f64) -> usize {
    (20.0 - 12.0 * g).round() as usize
}

/// SplitMix64 finalizer, used to derive independent per-sample seeds.
pub fn mix_seed(global_seed: u64, id: u64) -> u64 {
    let mut z = global_seed ^ id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Render one 32×32 sample. Jitters and background noise come from `seed`
/// alone, so for a fixed seed only the block height depends on `g`.
pub fn render_sample(seed: u64, g: f64) -> Result<Image> {
    if !(0.0..=1.0).contains(&g) {
        return Err(Error::Domain(format!("severity {g} outside [0, 1]")));
    }
    let n = IMAGE_SIZE as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = BLOCK_WIDTH + rng.random_range(-WIDTH_JITTER..=WIDTH_JITTER);
    let dy = rng.random_range(-HEIGHT_JITTER..=HEIGHT_JITTER);
    let height = block_height(g) as i64;
    let left = (n - width) / 2;
    let top = (n - height) / 2 + dy;

    let noise = Normal::new(BACKGROUND_MEAN, BACKGROUND_STD).expect("valid normal");
    let background: Vec<f32> = (0..n * n)
        .map(|_| noise.sample(&mut rng).clamp(0.0, 1.0) as f32)
        .collect();

    let mut mask = vec![0f32; (n * n) as usize];
    for y in top.max(0)..(top + height).min(n) {
        for x in left.max(0)..(left + width).min(n) {
            mask[(y * n + x) as usize] = 1.0;
        }
    }
    let mask = box_blur3(&mask, IMAGE_SIZE, IMAGE_SIZE);
    let pixels = background
        .iter()
        .zip(&mask)
        .map(|(&bg, &m)| bg * (1.0 - m) + BLOCK_INTENSITY * m)
        .collect();
    Image::new(IMAGE_SIZE, IMAGE_SIZE, pixels)
}

/// Block height read back from pixels: the number of pixels brighter than
/// the background/block midpoint, averaged over the eight central columns
/// (always inside the block whatever the width jitter).
pub fn measure_block_height(img: &Image) -> f64 {
    let threshold = ((BACKGROUND_MEAN as f32) + BLOCK_INTENSITY) / 2.0;
    let (c0, c1) = (img.width / 2 - 4, img.width / 2 + 4);
    let bright: usize = (c0..c1)
        .map(|x| (0..img.height).filter(|&y| img.get(x, y) > threshold).count())
        .sum();
    bright as f64 / (c1 - c0) as f64
}

/// One pass of a 3×3 mean filter; border pixels average their in-bounds
/// neighbours.
fn box_blur3(src: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (mut sum, mut count) = (0f32, 0f32);
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    sum += src[yy * w + xx];
                    count += 1.0;
                }
            }
            out[y * w + x] = sum / count;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub g: f64,
    pub grade: u8,
    pub binary_label: Option<u8>,
    pub split: Split,
    /// Path relative to the corpus directory.
    pub path: String,
    pub image: Image,
}

/// Generator settings and per-image digests, stored beside the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub version: u32,
    pub global_seed: u64,
    pub n: usize,
    pub fractions: [f64; 4],
    pub sha256: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub meta: CorpusMeta,
    pub samples: Vec<Sample>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn get(&self, id: u64) -> Option<&Sample> {
        self.samples.get(usize::try_from(id).ok()?)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: u64,
    g: String,
    grade: u8,
    binary_label: Option<u8>,
    split: Split,
    path: String,
}

/// Split sizes by largest remainder; ties go to the earlier split.
pub fn split_sizes(n: usize, fractions: &[f64; 4]) -> Result<[usize; 4]> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|&f| !(f > 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let exact = fractions.map(|f| f * n as f64);
    let mut sizes = exact.map(|e| e.floor() as usize);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = n - sizes.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn image_rel_path(id: u64) -> String {
    format!("images/{id:06}.pgm")
}

/// Generate `n` samples into `dir`. Severities are uniform on `[0, 1]`,
/// rounded to the 6 decimals stored in the manifest; ids are assigned to
/// splits in contiguous blocks.
pub fn generate_corpus(dir: &Path, n: usize, global_seed: u64, fractions: [f64; 4]) -> Result<Corpus> {
    if n < 100 {
        return Err(Error::Domain(format!("corpus needs at least 100 samples, got {n}")));
    }
    let sizes = split_sizes(n, &fractions)?;
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let mut severity_rng = ChaCha8Rng::seed_from_u64(global_seed);
    let splits = Split::ALL
        .iter()
        .zip(sizes)
        .flat_map(|(&s, k)| std::iter::repeat_n(s, k));
    let mut samples = Vec::with_capacity(n);
    let mut digests = Vec::with_capacity(n);
    for (id, split) in (0..n as u64).zip(splits) {
        let g = (severity_rng.random::<f64>() * 1e6).round() / 1e6;
        let grade = grade_of(g);
        let unlabeled = split == Split::TrainProbe && g > UNLABELED_BAND.0 && g < UNLABELED_BAND.1;
        let image = render_sample(mix_seed(global_seed, id), g)?.quantized();
        let path = image_rel_path(id);
        let bytes = image.to_pgm();
        let file = dir.join(&path);
        std::fs::write(&file, &bytes).map_err(|e| Error::io(&file, e))?;
        digests.push(sha256_hex(&bytes));
        samples.push(Sample {
            id,
            g,
            grade,
            binary_label: (!unlabeled).then(|| binary_label_of(grade)),
            split,
            path,
            image,
        });
    }

    let manifest = dir.join(MANIFEST_FILE);
    let mut writer = csv::Writer::from_path(&manifest).map_err(|e| csv_error(&manifest, e))?;
    for s in &samples {
        writer
            .serialize(ManifestRow {
                id: s.id,
                g: format!("{:.6}", s.g),
                grade: s.grade,
                binary_label: s.binary_label,
                split: s.split,
                path: s.path.clone(),
            })
            .map_err(|e| csv_error(&manifest, e))?;
    }
    writer.flush().map_err(|e| Error::io(&manifest, e))?;

    let meta = CorpusMeta {
        version: MANIFEST_VERSION,
        global_seed,
        n,
        fractions,
        sha256: digests,
    };
    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_vec_pretty(&meta)?;
    std::fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;

    Ok(Corpus {
        dir: dir.to_path_buf(),
        meta,
        samples,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::CorruptCorpus {
            id: None,
            reason: format!("malformed manifest: {other:?}"),
        },
    }
}

fn corrupt(id: u64, reason: impl Into<String>) -> Error {
    Error::CorruptCorpus {
        id: Some(id),
        reason: reason.into(),
    }
}

/// Load a corpus from its manifest, re-checking every sample invariant and
/// image digest.
pub fn load_corpus(manifest: &Path) -> Result<Corpus> {
    let dir = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let meta_path = dir.join(META_FILE);
    let meta_bytes = std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CorpusMeta = serde_json::from_slice(&meta_bytes).map_err(|e| Error::CorruptCorpus {
        id: None,
        reason: format!("unreadable manifest sidecar: {e}"),
    })?;
    if meta.version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "corpus manifest version {} is not supported by this reader (version {MANIFEST_VERSION})",
            meta.version
        )));
    }

    let mut reader = csv::Reader::from_path(manifest).map_err(|e| csv_error(manifest, e))?;
    let mut samples = Vec::new();
    for (index, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| csv_error(manifest, e))?;
        let id = row.id;
        if id != index as u64 {
            return Err(corrupt(id, format!("ids must be contiguous from 0; found {id} at row {index}")));
        }
        let g: f64 = row
            .g
            .parse()
            .map_err(|_| corrupt(id, format!("unparseable severity `{}`", row.g)))?;
        if !(0.0..=1.0).contains(&g) {
            return Err(corrupt(id, format!("severity {g} outside [0, 1]")));
        }
        if row.grade != grade_of(g) {
            return Err(corrupt(
                id,
                format!("grade {} inconsistent with severity {g} (expected {})", row.grade, grade_of(g)),
            ));
        }
        let band = g > UNLABELED_BAND.0 && g < UNLABELED_BAND.1;
        match row.binary_label {
            Some(label) if label != binary_label_of(row.grade) => {
                return Err(corrupt(id, format!("binary label {label} inconsistent with grade {}", row.grade)));
            }
            Some(_) if row.split == Split::TrainProbe && band => {
                return Err(corrupt(id, "borderline probe sample must be unlabeled"));
            }
            None if !(row.split == Split::TrainProbe && band) => {
                return Err(corrupt(id, "binary label missing"));
            }
            _ => {}
        }
        let file = dir.join(&row.path);
        let bytes = std::fs::read(&file).map_err(|e| corrupt(id, format!("cannot read {}: {e}", file.display())))?;
        match meta.sha256.get(index) {
            Some(want) if *want == sha256_hex(&bytes) => {}
            _ => return Err(corrupt(id, "image checksum mismatch")),
        }
        let image = Image::from_pgm(&bytes).map_err(|e| corrupt(id, e.to_string()))?;
        if image.width != IMAGE_SIZE || image.height != IMAGE_SIZE {
            return Err(corrupt(id, format!("image is {}×{}", image.width, image.height)));
        }
        samples.push(Sample {
            id,
            g,
            grade: row.grade,
            binary_label: row.binary_label,
            split: row.split,
            path: row.path,
            image,
        });
    }
    if samples.len() != meta.n {
        return Err(Error::CorruptCorpus {
            id: None,
            reason: format!("manifest lists {} samples, sidecar expects {}", samples.len(), meta.n),
        });
    }
    let sizes = split_sizes(meta.n, &meta.fractions)?;
    for (split, want) in Split::ALL.into_iter().zip(sizes) {
        let got = samples.iter().filter(|s| s.split == split).count();
        if got != want {
            return Err(Error::CorruptCorpus {
                id: None,
                reason: format!("split {split} has {got} samples, expected {want}"),
            });
        }
    }
    Ok(Corpus { dir, meta, samples })
}
