//! Two-level U-Net noise predictor conditioned on time and `z_sem` via FiLM.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{silu, silu_backward, Conv2d, FeatureMap, FilmBlock, FilmBlockCache, Linear, SpatialLayer, UpConv};
use super::{ConvCache, Grads, ParamStore, Scalar, UpConvCache};
use crate::error::{Error, Result};

/// Layer widths. Defaults give the 32/64-channel network used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    pub base_channels: usize,
    pub mid_channels: usize,
    pub time_dim: usize,
    pub latent_proj_dim: usize,
    pub image_size: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            latent_dim: 32,
            base_channels: 32,
            mid_channels: 64,
            time_dim: 64,
            latent_proj_dim: 64,
            image_size: 32,
        }
    }
}

impl DenoiserConfig {
    pub fn cond_dim(&self) -> usize {
        self.time_dim + self.latent_proj_dim
    }
}

/// Sinusoidal embedding of integer timestep `t` out of `total`, rescaled to a
/// 1000-step clock. Returns `dim` values: sines then cosines.
pub fn timestep_embedding(t: usize, total: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let pos = t as f64 * 1000.0 / total as f64;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (pos * freq).sin();
        out[half + i] = (pos * freq).cos();
    }
    out
}

/// Network parameters and layer wiring.
#[derive(Debug, Clone)]
pub struct Denoiser<F = f32> {
    pub config: DenoiserConfig,
    pub params: ParamStore<F>,
    time_fc1: Linear,
    time_fc2: Linear,
    latent_proj: Linear,
    input: FilmBlock<Conv2d>,
    down: FilmBlock<Conv2d>,
    mid: FilmBlock<Conv2d>,
    up: FilmBlock<UpConv>,
    output: Conv2d,
}

pub struct DenoiserCache<F> {
    temb: FeatureMap<F>,
    t_hidden: FeatureMap<F>,
    z: FeatureMap<F>,
    cond: FeatureMap<F>,
    cond_act: FeatureMap<F>,
    input: FilmBlockCache<F, ConvCache<F>>,
    down: FilmBlockCache<F, ConvCache<F>>,
    mid: FilmBlockCache<F, ConvCache<F>>,
    up: FilmBlockCache<F, UpConvCache<F>>,
    output: ConvCache<F>,
}

impl<F: Scalar> Denoiser<F> {
    pub fn new(config: DenoiserConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let c = config;
        let cond = c.cond_dim();
        let time_fc1 = Linear::new(&mut p, "den.time.fc1", c.time_dim, c.time_dim, &mut rng);
        let time_fc2 = Linear::new(&mut p, "den.time.fc2", c.time_dim, c.time_dim, &mut rng);
        let latent_proj = Linear::new(&mut p, "den.zproj", c.latent_dim, c.latent_proj_dim, &mut rng);
        let input = FilmBlock {
            conv: Conv2d::new(&mut p, "den.in.conv", 1, c.base_channels, 1, &mut rng),
            film: Linear::new_film(&mut p, "den.in.film", cond, c.base_channels),
        };
        let down = FilmBlock {
            conv: Conv2d::new(&mut p, "den.down.conv", c.base_channels, c.mid_channels, 2, &mut rng),
            film: Linear::new_film(&mut p, "den.down.film", cond, c.mid_channels),
        };
        let mid = FilmBlock {
            conv: Conv2d::new(&mut p, "den.mid.conv", c.mid_channels, c.mid_channels, 1, &mut rng),
            film: Linear::new_film(&mut p, "den.mid.film", cond, c.mid_channels),
        };
        let up = FilmBlock {
            conv: UpConv::new(&mut p, "den.up.conv", c.mid_channels, c.base_channels, &mut rng),
            film: Linear::new_film(&mut p, "den.up.film", cond, c.base_channels),
        };
        let output = Conv2d::new(&mut p, "den.out.conv", c.base_channels, 1, 1, &mut rng);
        // Zero output layer: the untrained network predicts ε̂ = 0.
        p.get_mut(output.weight).fill(F::zero());
        Denoiser {
            config,
            params: p,
            time_fc1,
            time_fc2,
            latent_proj,
            input,
            down,
            mid,
            up,
            output,
        }
    }

    /// Same wiring with parameters converted to another precision.
    pub fn cast<G: Scalar>(&self) -> Denoiser<G> {
        Denoiser {
            config: self.config,
            params: self.params.cast(),
            time_fc1: self.time_fc1.clone(),
            time_fc2: self.time_fc2.clone(),
            latent_proj: self.latent_proj.clone(),
            input: self.input.clone(),
            down: self.down.clone(),
            mid: self.mid.clone(),
            up: self.up.clone(),
            output: self.output.clone(),
        }
    }

    fn check_inputs(&self, x: &FeatureMap<F>, t: &[usize], z: &FeatureMap<F>, total_steps: usize) -> Result<()> {
        let s = self.config.image_size;
        if x.c != 1 || x.h != s || x.w != s {
            return Err(Error::Shape(format!(
                "denoiser expects 1×{s}×{s} images, got {}×{}×{}",
                x.c, x.h, x.w
            )));
        }
        if z.c != self.config.latent_dim || z.b != x.b || z.h * z.w != 1 {
            return Err(Error::Shape(format!(
                "denoiser expects {} latents of dim {}, got {} of dim {}",
                x.b, self.config.latent_dim, z.b, z.c
            )));
        }
        if t.len() != x.b {
            return Err(Error::Shape(format!("{} timesteps for batch of {}", t.len(), x.b)));
        }
        if let Some(&bad) = t.iter().find(|&&t| t == 0 || t > total_steps) {
            return Err(Error::Domain(format!("timestep {bad} outside [1, {total_steps}]")));
        }
        Ok(())
    }

    /// Predict ε̂ for a batch. `x` is `[1, B, H, W]`, `z` is `[D, B]`, `t` has one
    /// timestep per sample.
    pub fn forward(
        &self,
        x: &FeatureMap<F>,
        t: &[usize],
        z: &FeatureMap<F>,
        total_steps: usize,
    ) -> Result<(FeatureMap<F>, DenoiserCache<F>)> {
        self.check_inputs(x, t, z, total_steps)?;
        let p = &self.params;
        let c = &self.config;
        let b = x.b;

        let mut temb = FeatureMap::zeros(c.time_dim, b, 1, 1);
        for (j, &tj) in t.iter().enumerate() {
            for (i, v) in timestep_embedding(tj, total_steps, c.time_dim).into_iter().enumerate() {
                temb.data[i * b + j] = F::of(v);
            }
        }
        let t_hidden = self.time_fc1.forward(p, &temb);
        let t_act = FeatureMap::vectors(c.time_dim, b, silu(&t_hidden.data));
        let t_out = self.time_fc2.forward(p, &t_act);
        let z_out = self.latent_proj.forward(p, z);
        let mut cond_data = t_out.data;
        cond_data.extend_from_slice(&z_out.data);
        let cond = FeatureMap::vectors(c.cond_dim(), b, cond_data);
        let cond_act = FeatureMap::vectors(c.cond_dim(), b, silu(&cond.data));

        let (h0, input) = self.input.forward(p, x, &cond_act);
        let (h1, down) = self.down.forward(p, &h0, &cond_act);
        let (m, mid) = self.mid.forward(p, &h1, &cond_act);
        let mut h2 = h1;
        h2.add_assign(&m);
        let (mut h3, up) = self.up.forward(p, &h2, &cond_act);
        h3.add_assign(&h0);
        let (out, output) = self.output.forward(p, &h3);

        Ok((
            out,
            DenoiserCache {
                temb,
                t_hidden,
                z: z.clone(),
                cond,
                cond_act,
                input,
                down,
                mid,
                up,
                output,
            },
        ))
    }

    /// Accumulate parameter gradients for upstream gradient `dout`; returns the
    /// gradient with respect to `z` (`[D, B]`).
    pub fn backward(&self, cache: &DenoiserCache<F>, dout: &FeatureMap<F>, g: &mut Grads<F>) -> FeatureMap<F> {
        let p = &self.params;
        let c = &self.config;
        let b = dout.b;
        let ca = &cache.cond_act;

        let dh3 = self
            .output
            .backward(p, &cache.output, dout, g, true)
            .expect("requested dx");
        let mut dh0 = dh3.clone();
        let (dh2, mut dca) = self.up.backward(p, &cache.up, ca, &dh3, g, true);
        let dh2 = dh2.expect("requested dx");
        let (dm, dca_mid) = self.mid.backward(p, &cache.mid, ca, &dh2, g, true);
        dca.add_assign(&dca_mid);
        let mut dh1 = dh2;
        dh1.add_assign(&dm.expect("requested dx"));
        let (dh0_down, dca_down) = self.down.backward(p, &cache.down, ca, &dh1, g, true);
        dca.add_assign(&dca_down);
        dh0.add_assign(&dh0_down.expect("requested dx"));
        let (_, dca_in) = self.input.backward(p, &cache.input, ca, &dh0, g, false);
        dca.add_assign(&dca_in);

        let dcond = silu_backward(&cache.cond.data, &dca.data);
        let (dt_out, dz_out) = dcond.split_at(c.time_dim * b);
        let dt_out = FeatureMap::vectors(c.time_dim, b, dt_out.to_vec());
        let dz_out = FeatureMap::vectors(c.latent_proj_dim, b, dz_out.to_vec());

        let t_act = FeatureMap::vectors(c.time_dim, b, silu(&cache.t_hidden.data));
        let dt_act = self
            .time_fc2
            .backward(p, &t_act, &dt_out, g, true)
            .expect("requested dx");
        let dt_hidden = FeatureMap::vectors(c.time_dim, b, silu_backward(&cache.t_hidden.data, &dt_act.data));
        self.time_fc1.backward(p, &cache.temb, &dt_hidden, g, false);
        self.latent_proj
            .backward(p, &cache.z, &dz_out, g, true)
            .expect("requested dx")
    }
}
