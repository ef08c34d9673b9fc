//! Diffusion autoencoder: semantic encoder plus conditional denoiser trained
//! jointly on the noise-prediction loss, with DDIM encode/decode, checkpoints
//! and a binary latent cache.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{mix_seed, Corpus, Split};
use crate::diffusion::{ddim_decode, ddim_encode, NoiseSchedule, StepGrid};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::checkpoint::{decode_records, encode_records};
use crate::nn::{
    adam_step, AdamConfig, AdamState, Denoiser, DenoiserCache, DenoiserConfig, Encoder, EncoderCache, EncoderConfig,
    FeatureMap, Grads, Tensor,
};
use crate::par::{self, Execution};

pub const ENCODE_STEPS: usize = 250;
pub const DECODE_STEPS: usize = 100;
/// Samples per forward/backward unit. Fixed so that batch results never
/// depend on how work is spread over threads.
pub const MICRO_BATCH: usize = 16;

const CONFIG_RECORD: &str = "config";
const SCHEDULE_RECORD: &str = "schedule";

/// Pixel value in `[0, 1]` to model space `[−1, 1]`.
pub fn to_model(p: f32) -> f32 {
    2.0 * p - 1.0
}

/// Model space back to pixels, without clamping.
pub fn from_model(x: f32) -> f32 {
    (x + 1.0) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub denoiser: DenoiserConfig,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            denoiser: DenoiserConfig::default(),
            steps: crate::diffusion::DEFAULT_STEPS,
            beta_start: crate::diffusion::DEFAULT_BETA_START,
            beta_end: crate::diffusion::DEFAULT_BETA_END,
        }
    }
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        let (e, d) = (&self.encoder, &self.denoiser);
        if e.latent_dim != d.latent_dim {
            return Err(Error::Config(format!(
                "encoder emits {}-d latents but the denoiser expects {}",
                e.latent_dim, d.latent_dim
            )));
        }
        if e.image_size != d.image_size || e.image_size % 8 != 0 || e.image_size == 0 {
            return Err(Error::Config(format!(
                "image sizes must agree and be a positive multiple of 8 (encoder {}, denoiser {})",
                e.image_size, d.image_size
            )));
        }
        Ok(())
    }

    fn to_record(self) -> Tensor {
        let e = &self.encoder;
        let d = &self.denoiser;
        let v = [
            e.latent_dim,
            e.channels[0],
            e.channels[1],
            e.channels[2],
            e.image_size,
            d.base_channels,
            d.mid_channels,
            d.time_dim,
            d.latent_proj_dim,
        ];
        Tensor::from_vec(&[v.len()], v.iter().map(|&x| x as f32).collect()).expect("dims match")
    }

    fn from_records(config: &Tensor, schedule: &Tensor) -> Result<Self> {
        let [latent, c1, c2, c3, size, base, mid, time, proj] = <[f32; 9]>::try_from(config.data())
            .map_err(|_| Error::Format("config record must hold 9 values".into()))?
            .map(|v| v as usize);
        let [steps, beta_start, beta_end] = <[f32; 3]>::try_from(schedule.data())
            .map_err(|_| Error::Format("schedule record must hold [T, beta_start, beta_end]".into()))?;
        Ok(ModelConfig {
            encoder: EncoderConfig {
                latent_dim: latent,
                channels: [c1, c2, c3],
                image_size: size,
            },
            denoiser: DenoiserConfig {
                latent_dim: latent,
                base_channels: base,
                mid_channels: mid,
                time_dim: time,
                latent_proj_dim: proj,
                image_size: size,
            },
            steps: steps as usize,
            beta_start: f64::from(beta_start),
            beta_end: f64::from(beta_end),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DaeModel {
    pub config: ModelConfig,
    pub encoder: Encoder<f32>,
    pub denoiser: Denoiser<f32>,
    pub schedule: NoiseSchedule,
}

impl DaeModel {
    /// Fresh model. The schedule endpoints are rounded to `f32` up front, the
    /// precision the checkpoint stores them at, so reloading reproduces the
    /// schedule exactly.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut config = config;
        config.beta_start = f64::from(config.beta_start as f32);
        config.beta_end = f64::from(config.beta_end as f32);
        let schedule = NoiseSchedule::linear(config.steps, config.beta_start, config.beta_end)?;
        Ok(DaeModel {
            config,
            encoder: Encoder::new(config.encoder, mix_seed(seed, 1)),
            denoiser: Denoiser::new(config.denoiser, mix_seed(seed, 2)),
            schedule,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.encoder.latent_dim
    }

    pub fn image_size(&self) -> usize {
        self.config.encoder.image_size
    }

    pub fn parameter_count(&self) -> usize {
        self.encoder.params.count() + self.denoiser.params.count()
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        let s = self.image_size();
        if img.width != s || img.height != s {
            return Err(Error::Shape(format!(
                "model expects {s}×{s} images, got {}×{}",
                img.width, img.height
            )));
        }
        Ok(())
    }

    fn batch_map(&self, images: &[&Image]) -> Result<FeatureMap<f32>> {
        let s = self.image_size();
        let mut data = Vec::with_capacity(images.len() * s * s);
        for img in images {
            self.check_image(img)?;
            data.extend(img.pixels.iter().map(|&p| to_model(p)));
        }
        Ok(FeatureMap::from_vec(1, images.len(), s, s, data))
    }

    /// Noise-predictor closure for a fixed batch of latents (`[D, B]`).
    fn predictor<'a>(&'a self, z: &'a FeatureMap<f32>) -> impl FnMut(&[f32], usize) -> Result<Vec<f32>> + 'a {
        let s = self.image_size();
        move |x: &[f32], t: usize| {
            let x = FeatureMap::from_vec(1, z.b, s, s, x.to_vec());
            let ts = vec![t; z.b];
            let (out, _) = self.denoiser.forward(&x, &ts, z, self.schedule.steps())?;
            Ok(out.data)
        }
    }

    fn grid(&self, steps: usize) -> Result<StepGrid> {
        if steps == 0 || steps > self.schedule.steps() {
            return Err(Error::Config(format!(
                "{steps} sampling steps requested for a {}-step schedule",
                self.schedule.steps()
            )));
        }
        StepGrid::uniform(self.schedule.steps(), steps)
    }

    /// Semantic latents only.
    pub fn encode_semantic(&self, images: &[&Image], exec: Execution) -> Result<Vec<Vec<f32>>> {
        let chunks = par::map_chunks(exec, images, MICRO_BATCH, |chunk| -> Result<Vec<Vec<f32>>> {
            let x = self.batch_map(chunk)?;
            let (z, _) = self.encoder.forward(&x)?;
            Ok(columns(&z))
        });
        flatten(chunks)
    }

    /// `(z_sem, x_T)` per image; `x_T` comes from `steps`-step DDIM inversion
    /// conditioned on that image's own `z_sem`.
    pub fn encode(&self, images: &[&Image], steps: usize, exec: Execution) -> Result<Vec<(Vec<f32>, Vec<f32>)>> {
        let grid = self.grid(steps)?;
        let chunks = par::map_chunks(exec, images, MICRO_BATCH, |chunk| -> Result<Vec<(Vec<f32>, Vec<f32>)>> {
            let x = self.batch_map(chunk)?;
            let (z, _) = self.encoder.forward(&x)?;
            let xt = ddim_encode(&x.data, &grid, &self.schedule, self.predictor(&z))?;
            let plane = x.h * x.w;
            Ok(columns(&z)
                .into_iter()
                .zip(xt.chunks(plane).map(<[f32]>::to_vec))
                .collect())
        });
        flatten(chunks)
    }

    /// Decode `(z_sem, x_T)` pairs to images in `[0, 1]`; clamping happens
    /// only here, after the last step.
    pub fn decode(&self, latents: &[(Vec<f32>, Vec<f32>)], steps: usize, exec: Execution) -> Result<Vec<Image>> {
        let grid = self.grid(steps)?;
        let s = self.image_size();
        let d = self.latent_dim();
        for (z, xt) in latents {
            if z.len() != d || xt.len() != s * s {
                return Err(Error::Shape(format!(
                    "decode expects a {d}-d latent and {} noise values, got {} and {}",
                    s * s,
                    z.len(),
                    xt.len()
                )));
            }
        }
        let chunks = par::map_chunks(exec, latents, MICRO_BATCH, |chunk| -> Result<Vec<Image>> {
            let b = chunk.len();
            let mut zdata = vec![0f32; d * b];
            for (j, (z, _)) in chunk.iter().enumerate() {
                for (i, &v) in z.iter().enumerate() {
                    zdata[i * b + j] = v;
                }
            }
            let z = FeatureMap::vectors(d, b, zdata);
            let xt: Vec<f32> = chunk.iter().flat_map(|(_, x)| x.iter().copied()).collect();
            let x0 = ddim_decode(&xt, &grid, &self.schedule, self.predictor(&z))?;
            x0.chunks(s * s)
                .map(|px| Image::new(s, s, px.iter().map(|&v| from_model(v.clamp(-1.0, 1.0))).collect()))
                .collect()
        });
        flatten(chunks)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config = self.config.to_record();
        let schedule = Tensor::from_vec(
            &[3],
            vec![
                self.config.steps as f32,
                self.config.beta_start as f32,
                self.config.beta_end as f32,
            ],
        )
        .expect("dims match");
        let head = [(CONFIG_RECORD, &config), (SCHEDULE_RECORD, &schedule)];
        encode_records(
            head.into_iter()
                .chain(self.encoder.params.iter())
                .chain(self.denoiser.params.iter()),
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let records = decode_records(bytes)?;
        let mut it = records.into_iter();
        let mut next = |want: &str| match it.next() {
            Some((name, t)) if name == want => Ok(t),
            Some((name, _)) => Err(Error::Format(format!("expected `{want}` record, found `{name}`"))),
            None => Err(Error::Format(format!("missing `{want}` record"))),
        };
        let config = next(CONFIG_RECORD)?;
        let schedule = next(SCHEDULE_RECORD)?;
        let config = ModelConfig::from_records(&config, &schedule)?;
        let mut model = DaeModel::new(config, 0).map_err(|e| Error::Format(format!("invalid stored config: {e}")))?;
        model.encoder.params.load_records(&mut it)?;
        model.denoiser.params.load_records(&mut it)?;
        if let Some((name, _)) = it.next() {
            return Err(Error::Format(format!("unexpected trailing record `{name}`")));
        }
        if !model.encoder.params.is_finite() || !model.denoiser.params.is_finite() {
            return Err(Error::Format("checkpoint holds non-finite parameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Write via a temporary sibling and rename, so readers never see a partial
/// file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn columns(z: &FeatureMap<f32>) -> Vec<Vec<f32>> {
    (0..z.b)
        .map(|j| (0..z.c).map(|i| z.data[i * z.b + j]).collect())
        .collect()
}

fn flatten<T>(chunks: Vec<Result<Vec<T>>>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Forward/backward pair for one micro-batch of the training loss. Backward
/// consumes the recorded forward pass.
pub struct TrainingGraph<'m> {
    model: &'m DaeModel,
    recorded: Option<Recorded>,
}

struct Recorded {
    encoder: EncoderCache<f32>,
    denoiser: DenoiserCache<f32>,
    residual: Vec<f32>,
    batch: usize,
    size: usize,
}

impl<'m> TrainingGraph<'m> {
    pub fn new(model: &'m DaeModel) -> Self {
        TrainingGraph { model, recorded: None }
    }

    /// Record the loss graph for clean images `x0` (model space), their noised
    /// versions `x_t` and the noise `eps`. Returns the summed squared error.
    pub fn forward(&mut self, x0: &FeatureMap<f32>, x_t: &FeatureMap<f32>, t: &[usize], eps: &[f32]) -> Result<f64> {
        if eps.len() != x_t.data.len() || x0.data.len() != x_t.data.len() {
            return Err(Error::Shape("noise, clean and noised batches must match".into()));
        }
        let m = self.model;
        let (z, encoder) = m.encoder.forward(x0)?;
        let (pred, denoiser) = m.denoiser.forward(x_t, t, &z, m.schedule.steps())?;
        let residual: Vec<f32> = pred.data.iter().zip(eps).map(|(p, e)| p - e).collect();
        let sse = residual.iter().map(|&r| f64::from(r) * f64::from(r)).sum();
        self.recorded = Some(Recorded {
            encoder,
            denoiser,
            residual,
            batch: x_t.b,
            size: x_t.h,
        });
        Ok(sse)
    }

    /// Gradients of `scale · Σ residual²` for the encoder and denoiser.
    pub fn backward(&mut self, scale: f32) -> Result<(Grads<f32>, Grads<f32>)> {
        let rec = self
            .recorded
            .take()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let m = self.model;
        let dout = FeatureMap::from_vec(
            1,
            rec.batch,
            rec.size,
            rec.size,
            rec.residual.iter().map(|&r| 2.0 * scale * r).collect(),
        );
        let mut gd = m.denoiser.params.zero_grads();
        let dz = m.denoiser.backward(&rec.denoiser, &dout, &mut gd);
        let mut ge = m.encoder.params.zero_grads();
        m.encoder.backward(&rec.encoder, &dz, &mut ge);
        Ok((ge, gd))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub log_every: usize,
    /// Save to `checkpoint_path` every this many steps; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 20_000,
            batch_size: 64,
            lr: 1e-4,
            seed: 42,
            log_every: 100,
            checkpoint_every: 0,
            checkpoint_path: None,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    /// Last step of the window (1-based).
    pub step: usize,
    /// Mean loss over the window.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub trace: Vec<LossPoint>,
}

impl TrainReport {
    /// Mean loss of the first and last tenth of the trace (at least one
    /// point each).
    pub fn decile_means(&self) -> Option<(f64, f64)> {
        let n = self.trace.len();
        if n == 0 {
            return None;
        }
        let k = (n / 10).max(1);
        let mean = |s: &[LossPoint]| s.iter().map(|p| p.loss).sum::<f64>() / s.len() as f64;
        Some((mean(&self.trace[..k]), mean(&self.trace[n - k..])))
    }
}

/// Train a fresh model on `images` (pixels in `[0, 1]`). `on_log` sees each
/// trace point as it is produced.
pub fn train(
    images: &[&Image],
    model_config: ModelConfig,
    config: &TrainConfig,
    mut on_log: impl FnMut(&LossPoint),
) -> Result<(DaeModel, TrainReport)> {
    if config.total_steps == 0 {
        return Err(Error::Domain("total_steps must be at least 1".into()));
    }
    if config.batch_size == 0 || config.log_every == 0 {
        return Err(Error::Domain("batch_size and log_every must be at least 1".into()));
    }
    if images.is_empty() {
        return Err(Error::Domain("no training images".into()));
    }
    let mut model = DaeModel::new(model_config, config.seed)?;
    let data = model.batch_map(images)?;
    let (size, plane) = (model.image_size(), model.image_size() * model.image_size());
    let total_t = model.schedule.steps();
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut enc_state = AdamState::new(&model.encoder.params);
    let mut den_state = AdamState::new(&model.denoiser.params);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 3));
    let b = config.batch_size;
    let scale = 1.0 / (b * plane) as f64;

    let mut report = TrainReport {
        initial_loss: f64::NAN,
        trace: Vec::new(),
    };
    let mut window = (0.0, 0usize);
    for step in 1..=config.total_steps {
        let picks: Vec<usize> = (0..b).map(|_| rng.random_range(0..images.len())).collect();
        let ts: Vec<usize> = (0..b).map(|_| rng.random_range(1..=total_t)).collect();
        let eps: Vec<f32> = (0..b * plane).map(|_| rng.sample(StandardNormal)).collect();

        let mut x0 = Vec::with_capacity(b * plane);
        let mut xt = Vec::with_capacity(b * plane);
        for (j, (&i, &t)) in picks.iter().zip(&ts).enumerate() {
            let clean = &data.data[i * plane..][..plane];
            let ab = model.schedule.alpha_bar(t);
            let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
            x0.extend_from_slice(clean);
            xt.extend(
                clean
                    .iter()
                    .zip(&eps[j * plane..][..plane])
                    .map(|(&x, &e)| (a * f64::from(x) + s * f64::from(e)) as f32),
            );
        }

        let starts: Vec<usize> = (0..b).step_by(MICRO_BATCH).collect();
        let parts = par::map(config.exec, &starts, |&lo| -> Result<(f64, Grads<f32>, Grads<f32>)> {
            let hi = (lo + MICRO_BATCH).min(b);
            let n = hi - lo;
            let span = lo * plane..hi * plane;
            let x0m = FeatureMap::from_vec(1, n, size, size, x0[span.clone()].to_vec());
            let xtm = FeatureMap::from_vec(1, n, size, size, xt[span.clone()].to_vec());
            let mut graph = TrainingGraph::new(&model);
            let sse = graph.forward(&x0m, &xtm, &ts[lo..hi], &eps[span])?;
            let (ge, gd) = graph.backward(scale as f32)?;
            Ok((sse, ge, gd))
        });
        let mut sse = 0.0;
        let mut grads: Option<(Grads<f32>, Grads<f32>)> = None;
        for part in parts {
            let (s, ge, gd) = part?;
            sse += s;
            match grads.as_mut() {
                None => grads = Some((ge, gd)),
                Some((acc_e, acc_d)) => {
                    acc_e.add_assign(&ge);
                    acc_d.add_assign(&gd);
                }
            }
        }
        let loss = sse * scale;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        if step == 1 {
            report.initial_loss = loss;
        }
        let (ge, gd) = grads.expect("at least one micro-batch");
        adam_step(&mut model.encoder.params, &ge, &mut enc_state, &adam)?;
        adam_step(&mut model.denoiser.params, &gd, &mut den_state, &adam)?;

        window.0 += loss;
        window.1 += 1;
        if step % config.log_every == 0 || step == config.total_steps {
            let point = LossPoint {
                step,
                loss: window.0 / window.1 as f64,
            };
            on_log(&point);
            report.trace.push(point);
            window = (0.0, 0);
        }
        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
            if let Some(path) = &config.checkpoint_path {
                model.save(path)?;
            }
        }
    }
    Ok((model, report))
}

/// One cached semantic latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRecord {
    pub id: u64,
    pub z: Vec<f32>,
}

pub const LATENT_MAGIC: &[u8; 4] = b"ZSEM";

/// Encode `split` of `corpus` to semantic latents, in manifest order.
pub fn embed_corpus(model: &DaeModel, corpus: &Corpus, split: Split, exec: Execution) -> Result<Vec<LatentRecord>> {
    let samples: Vec<_> = corpus.split(split).collect();
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let zs = model.encode_semantic(&images, exec)?;
    Ok(samples.iter().zip(zs).map(|(s, z)| LatentRecord { id: s.id, z }).collect())
}

pub fn latents_to_bytes(records: &[LatentRecord]) -> Result<Vec<u8>> {
    let d = records.first().map_or(0, |r| r.z.len());
    let mut out = Vec::with_capacity(12 + records.len() * (4 + 4 * d));
    out.extend_from_slice(LATENT_MAGIC);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for r in records {
        if r.z.len() != d {
            return Err(Error::Shape(format!("latent {} has dim {}, expected {d}", r.id, r.z.len())));
        }
        let id = u32::try_from(r.id).map_err(|_| Error::Domain(format!("id {} exceeds u32", r.id)))?;
        out.extend_from_slice(&id.to_le_bytes());
        for v in &r.z {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn latents_from_bytes(bytes: &[u8]) -> Result<Vec<LatentRecord>> {
    let word = |at: usize| -> Result<[u8; 4]> {
        bytes
            .get(at..at + 4)
            .map(|s| s.try_into().expect("4 bytes"))
            .ok_or_else(|| Error::Format(format!("truncated latent cache at offset {at}")))
    };
    if word(0)? != *LATENT_MAGIC {
        return Err(Error::Format("bad magic, not a ZSEM latent cache".into()));
    }
    let count = u32::from_le_bytes(word(4)?) as usize;
    let d = u32::from_le_bytes(word(8)?) as usize;
    let expected = 12 + count * (4 + 4 * d);
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "latent cache is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let mut pos = 12;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id = u64::from(u32::from_le_bytes(word(pos)?));
        pos += 4;
        let z = (0..d)
            .map(|k| word(pos + 4 * k).map(f32::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        pos += 4 * d;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("latent {id} holds non-finite values")));
        }
        out.push(LatentRecord { id, z });
    }
    Ok(out)
}

pub fn save_latents(path: &Path, records: &[LatentRecord]) -> Result<()> {
    write_atomic(path, &latents_to_bytes(records)?)
}

pub fn load_latents(path: &Path) -> Result<Vec<LatentRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    latents_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let model = DaeModel::new(ModelConfig::default(), 1).unwrap();
        let mut graph = TrainingGraph::new(&model);
        assert!(matches!(graph.backward(1.0), Err(Error::State(_))));
    }

    #[test]
    fn zero_steps_is_a_domain_error() {
        let img = Image::filled(32, 32, 0.5);
        let cfg = TrainConfig {
            total_steps: 0,
            ..TrainConfig::default()
        };
        let r = train(&[&img], ModelConfig::default(), &cfg, |_| {});
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn latent_cache_rejects_truncation() {
        let recs = vec![LatentRecord { id: 3, z: vec![1.0, 2.0] }];
        let bytes = latents_to_bytes(&recs).unwrap();
        assert_eq!(latents_from_bytes(&bytes).unwrap(), recs);
        assert!(matches!(latents_from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(latents_from_bytes(b"NOPE"), Err(Error::Format(_))));
    }
}
