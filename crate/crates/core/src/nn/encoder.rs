//! Semantic encoder: three stride-2 convolutions and a linear head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{silu, silu_backward, Conv2d, FeatureMap, Linear, SpatialLayer};
use super::{ConvCache, Grads, ParamStore, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub latent_dim: usize,
    pub channels: [usize; 3],
    pub image_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            latent_dim: 32,
            channels: [16, 32, 64],
            image_size: 32,
        }
    }
}

impl EncoderConfig {
    fn feature_side(&self) -> usize {
        self.image_size / 8
    }

    fn flat_dim(&self) -> usize {
        self.channels[2] * self.feature_side() * self.feature_side()
    }
}

#[derive(Debug, Clone)]
pub struct Encoder<F = f32> {
    pub config: EncoderConfig,
    pub params: ParamStore<F>,
    convs: [Conv2d; 3],
    head: Linear,
}

pub struct EncoderCache<F> {
    convs: Vec<ConvCache<F>>,
    pre_acts: Vec<FeatureMap<F>>,
    flat: FeatureMap<F>,
}

impl<F: Scalar> Encoder<F> {
    pub fn new(config: EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let [c1, c2, c3] = config.channels;
        let convs = [
            Conv2d::new(&mut p, "enc.conv1", 1, c1, 2, &mut rng),
            Conv2d::new(&mut p, "enc.conv2", c1, c2, 2, &mut rng),
            Conv2d::new(&mut p, "enc.conv3", c2, c3, 2, &mut rng),
        ];
        let head = Linear::new(&mut p, "enc.head", config.flat_dim(), config.latent_dim, &mut rng);
        Encoder {
            config,
            params: p,
            convs,
            head,
        }
    }

    pub fn cast<G: Scalar>(&self) -> Encoder<G> {
        Encoder {
            config: self.config,
            params: self.params.cast(),
            convs: self.convs.clone(),
            head: self.head.clone(),
        }
    }

    /// Encode `[1, B, H, W]` images to `[D, B]` latents.
    pub fn forward(&self, x: &FeatureMap<F>) -> Result<(FeatureMap<F>, EncoderCache<F>)> {
        let s = self.config.image_size;
        if x.c != 1 || x.h != s || x.w != s {
            return Err(Error::Shape(format!(
                "encoder expects 1×{s}×{s} images, got {}×{}×{}",
                x.c, x.h, x.w
            )));
        }
        let p = &self.params;
        let mut caches = Vec::with_capacity(3);
        let mut pre_acts = Vec::with_capacity(3);
        let mut h = x.clone();
        for conv in &self.convs {
            let (pre, cache) = conv.forward(p, &h);
            h = FeatureMap::from_vec(pre.c, pre.b, pre.h, pre.w, silu(&pre.data));
            caches.push(cache);
            pre_acts.push(pre);
        }
        let flat = flatten(&h);
        let z = self.head.forward(p, &flat);
        Ok((
            z,
            EncoderCache {
                convs: caches,
                pre_acts,
                flat,
            },
        ))
    }

    pub fn backward(&self, cache: &EncoderCache<F>, dz: &FeatureMap<F>, g: &mut Grads<F>) {
        let p = &self.params;
        let dflat = self
            .head
            .backward(p, &cache.flat, dz, g, true)
            .expect("requested dx");
        let last = cache.pre_acts.last().expect("three conv layers");
        let mut dh = unflatten(&dflat, last.c, last.h, last.w);
        for (i, conv) in self.convs.iter().enumerate().rev() {
            let pre = &cache.pre_acts[i];
            let dpre = FeatureMap {
                data: silu_backward(&pre.data, &dh.data),
                c: pre.c,
                b: pre.b,
                h: pre.h,
                w: pre.w,
            };
            match conv.backward(p, &cache.convs[i], &dpre, g, i > 0) {
                Some(dx) => dh = dx,
                None => break,
            }
        }
    }
}

/// `[C, B, H, W]` → `[C·H·W, B]` with feature index `c·H·W + y·W + x`.
fn flatten<F: Scalar>(x: &FeatureMap<F>) -> FeatureMap<F> {
    let hw = x.h * x.w;
    let mut out = FeatureMap::zeros(x.c * hw, x.b, 1, 1);
    for c in 0..x.c {
        for b in 0..x.b {
            let src = &x.data[(c * x.b + b) * hw..][..hw];
            for (s, &v) in src.iter().enumerate() {
                out.data[(c * hw + s) * x.b + b] = v;
            }
        }
    }
    out
}

fn unflatten<F: Scalar>(x: &FeatureMap<F>, c: usize, h: usize, w: usize) -> FeatureMap<F> {
    let hw = h * w;
    let mut out = FeatureMap::zeros(c, x.b, h, w);
    for ci in 0..c {
        for b in 0..x.b {
            for s in 0..hw {
                out.data[(ci * x.b + b) * hw + s] = x.data[(ci * hw + s) * x.b + b];
            }
        }
    }
    out
}
