#![allow(dead_code)]

use latentgrade::corpus::{render_sample, IMAGE_SIZE};
use latentgrade::dae::{DaeModel, ModelConfig};
use latentgrade::image::Image;
use latentgrade::nn::{DenoiserConfig, EncoderConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Narrow network on full-size images; cheap enough for debug-profile tests.
pub fn small_config() -> ModelConfig {
    let latent_dim = 8;
    ModelConfig {
        encoder: EncoderConfig {
            latent_dim,
            channels: [4, 8, 8],
            image_size: IMAGE_SIZE,
        },
        denoiser: DenoiserConfig {
            latent_dim,
            base_channels: 8,
            mid_channels: 16,
            time_dim: 16,
            latent_proj_dim: 16,
            image_size: IMAGE_SIZE,
        },
        ..ModelConfig::default()
    }
}

/// Small model whose zero-initialized tensors (output conv, FiLM weights)
/// are replaced by uniform noise of amplitude `scale`, so the noise
/// predictor and its conditioning are both active.
pub fn random_small_model(seed: u64, scale: f32) -> DaeModel {
    let mut model = DaeModel::new(small_config(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    for t in model.denoiser.params.tensors_mut() {
        if t.data().iter().all(|&v| v == 0.0) && t.dims().len() > 1 {
            for v in t.data_mut() {
                *v = rng.random_range(-scale..scale);
            }
        }
    }
    model
}

pub fn sample_images(seed: u64, count: usize) -> Vec<Image> {
    (0..count)
        .map(|i| render_sample(seed + i as u64, i as f64 / count.max(2).saturating_sub(1) as f64).unwrap())
        .collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-30)
}
