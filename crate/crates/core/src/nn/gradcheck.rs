//! Analytic gradients against 64-bit central finite differences.
//!
//! Each case builds a small layer or network in `f64`, contracts its output
//! with a random cotangent, and compares every (or a random subset of)
//! parameter and input gradient with a central difference. Cases return the
//! worst relative error seen.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv2d, FeatureMap, FilmBlock, Linear, SpatialLayer, UpConv};
use super::{Denoiser, DenoiserConfig, Encoder, EncoderConfig, Grads, ParamStore};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_map(rng: &mut ChaCha8Rng, c: usize, b: usize, h: usize, w: usize) -> FeatureMap<f64> {
    FeatureMap::from_vec(c, b, h, w, random_vec(rng, c * b * h * w, 1.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Perturb every parameter entry (or `max_per_tensor` random ones per
/// tensor) and compare against `grads`.
pub fn check_params(
    params: &ParamStore<f64>,
    grads: &Grads<f64>,
    max_per_tensor: usize,
    loss: impl Fn(&ParamStore<f64>) -> f64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    let mut p = params.clone();
    for ti in 0..params.len() {
        let n = params.tensors()[ti].len();
        let idx: Vec<usize> = if n <= max_per_tensor {
            (0..n).collect()
        } else {
            (0..max_per_tensor).map(|_| rng.random_range(0..n)).collect()
        };
        for j in idx {
            let orig = p.tensors()[ti].data()[j];
            p.tensors_mut()[ti].data_mut()[j] = orig + STEP;
            let lp = loss(&p);
            p.tensors_mut()[ti].data_mut()[j] = orig - STEP;
            let lm = loss(&p);
            p.tensors_mut()[ti].data_mut()[j] = orig;
            let numeric = (lp - lm) / (2.0 * STEP);
            worst = worst.max(rel_err(grads.tensors()[ti].data()[j], numeric));
        }
    }
    worst
}

pub fn check_input(x: &[f64], dx: &[f64], loss: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        xp[j] = x[j] + STEP;
        let lp = loss(&xp);
        xp[j] = x[j] - STEP;
        let lm = loss(&xp);
        xp[j] = x[j];
        worst = worst.max(rel_err(dx[j], (lp - lm) / (2.0 * STEP)));
    }
    worst
}

/// Parameter and input gradients of a spatial layer.
pub fn check_spatial<L: SpatialLayer<f64>>(layer: &L, params: &ParamStore<f64>, x: FeatureMap<f64>, seed: u64) -> f64 {
    let (y, cache) = layer.forward(params, &x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random_vec(&mut rng, y.data.len(), 1.0);
    let dy = FeatureMap::from_vec(y.c, y.b, y.h, y.w, r.clone());
    let mut g = params.zero_grads();
    let Some(dx) = layer.backward(params, &cache, &dy, &mut g, true) else {
        return f64::INFINITY;
    };
    let e1 = check_params(params, &g, usize::MAX, |p| dot(&layer.forward(p, &x).0.data, &r));
    let e2 = check_input(&x.data, &dx.data, |xd| {
        let xm = FeatureMap::from_vec(x.c, x.b, x.h, x.w, xd.to_vec());
        dot(&layer.forward(params, &xm).0.data, &r)
    });
    e1.max(e2)
}

fn conv_case(seed: u64, in_c: usize, out_c: usize, stride: usize, shift: f64, dims: [usize; 3]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::<f64>::new();
    let conv = Conv2d::new(&mut p, "c", in_c, out_c, stride, &mut rng);
    p.map_inplace(|v| v + shift);
    let x = random_map(&mut rng, in_c, dims[0], dims[1], dims[2]);
    check_spatial(&conv, &p, x, seed + 100)
}

pub fn conv_stride_one() -> f64 {
    conv_case(1, 3, 4, 1, 0.05, [2, 5, 6])
}

/// Wide enough input to take the implicit-GEMM path.
pub fn conv_stride_one_wide() -> f64 {
    conv_case(2, 9, 3, 1, -0.02, [2, 4, 5])
}

/// Single output channel takes the direct path.
pub fn conv_single_output() -> f64 {
    conv_case(4, 3, 1, 1, 0.04, [3, 5, 4])
}

pub fn conv_stride_two() -> f64 {
    conv_case(3, 2, 3, 2, -0.03, [2, 7, 6])
}

pub fn upconv() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = ParamStore::<f64>::new();
    let up = UpConv::new(&mut p, "u", 3, 2, &mut rng);
    p.map_inplace(|v| v + 0.01);
    let x = random_map(&mut rng, 3, 2, 4, 3);
    check_spatial(&up, &p, x, 6)
}

pub fn linear() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = ParamStore::<f64>::new();
    let lin = Linear::new(&mut p, "l", 5, 3, &mut rng);
    let x = random_map(&mut rng, 5, 4, 1, 1);
    let r = random_vec(&mut rng, 12, 1.0);
    let dy = FeatureMap::vectors(3, 4, r.clone());
    let mut g = p.zero_grads();
    let Some(dx) = lin.backward(&p, &x, &dy, &mut g, true) else {
        return f64::INFINITY;
    };
    let e1 = check_params(&p, &g, usize::MAX, |p| dot(&lin.forward(p, &x).data, &r));
    let e2 = check_input(&x.data, &dx.data, |xd| {
        dot(&lin.forward(&p, &FeatureMap::vectors(5, 4, xd.to_vec())).data, &r)
    });
    e1.max(e2)
}

pub fn film_block() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut p = ParamStore::<f64>::new();
    let block = FilmBlock {
        conv: Conv2d::new(&mut p, "c", 2, 3, 1, &mut rng),
        film: Linear::new(&mut p, "f", 4, 6, &mut rng),
    };
    let x = random_map(&mut rng, 2, 2, 4, 4);
    let cond = random_map(&mut rng, 4, 2, 1, 1);
    let (y, cache) = block.forward(&p, &x, &cond);
    let r = random_vec(&mut rng, y.data.len(), 1.0);
    let dy = FeatureMap::from_vec(y.c, y.b, y.h, y.w, r.clone());
    let mut g = p.zero_grads();
    let (dx, dcond) = block.backward(&p, &cache, &cond, &dy, &mut g, true);
    let Some(dx) = dx else {
        return f64::INFINITY;
    };
    let e1 = check_params(&p, &g, usize::MAX, |p| dot(&block.forward(p, &x, &cond).0.data, &r));
    let e2 = check_input(&x.data, &dx.data, |xd| {
        let xm = FeatureMap::from_vec(2, 2, 4, 4, xd.to_vec());
        dot(&block.forward(&p, &xm, &cond).0.data, &r)
    });
    let e3 = check_input(&cond.data, &dcond.data, |cd| {
        let cm = FeatureMap::vectors(4, 2, cd.to_vec());
        dot(&block.forward(&p, &x, &cm).0.data, &r)
    });
    e1.max(e2).max(e3)
}

/// Full denoiser on 8×8 inputs, including the latent input.
pub fn denoiser() -> f64 {
    let cfg = DenoiserConfig {
        latent_dim: 3,
        base_channels: 3,
        mid_channels: 4,
        time_dim: 6,
        latent_proj_dim: 4,
        image_size: 8,
    };
    let mut d = Denoiser::<f64>::new(cfg, 11);
    // Move off the identity-FiLM / zero-output initialization so every path
    // carries gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    d.params.map_inplace(|v| v + rng.random_range(-0.2..0.2));

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random_map(&mut rng, 1, 2, 8, 8);
    let z = random_map(&mut rng, 3, 2, 1, 1);
    let t = [17, 640];
    let Ok((y, cache)) = d.forward(&x, &t, &z, 1000) else {
        return f64::INFINITY;
    };
    let r = random_vec(&mut rng, y.data.len(), 1.0);
    let dy = FeatureMap::from_vec(1, 2, 8, 8, r.clone());
    let mut g = d.params.zero_grads();
    let dz = d.backward(&cache, &dy, &mut g);
    let e1 = check_params(&d.params, &g, 12, |p| {
        let mut d2 = d.clone();
        d2.params = p.clone();
        dot(&d2.forward(&x, &t, &z, 1000).expect("shapes fixed").0.data, &r)
    });
    let e2 = check_input(&z.data, &dz.data, |zd| {
        let zm = FeatureMap::vectors(3, 2, zd.to_vec());
        dot(&d.forward(&x, &t, &zm, 1000).expect("shapes fixed").0.data, &r)
    });
    e1.max(e2)
}

pub fn encoder() -> f64 {
    let cfg = EncoderConfig {
        latent_dim: 3,
        channels: [2, 3, 4],
        image_size: 8,
    };
    let e = Encoder::<f64>::new(cfg, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = random_map(&mut rng, 1, 3, 8, 8);
    let Ok((z, cache)) = e.forward(&x) else {
        return f64::INFINITY;
    };
    let r = random_vec(&mut rng, z.data.len(), 1.0);
    let mut g = e.params.zero_grads();
    e.backward(&cache, &FeatureMap::vectors(3, 3, r.clone()), &mut g);
    check_params(&e.params, &g, 16, |p| {
        let mut e2 = e.clone();
        e2.params = p.clone();
        dot(&e2.forward(&x).expect("shapes fixed").0.data, &r)
    })
}

/// A named case returning its worst relative error.
pub type Case = (&'static str, fn() -> f64);

/// Every case, by name.
pub const CASES: &[Case] = &[
    ("conv stride 1", conv_stride_one),
    ("conv stride 1, wide input", conv_stride_one_wide),
    ("conv, one output channel", conv_single_output),
    ("conv stride 2", conv_stride_two),
    ("upsampling conv", upconv),
    ("linear", linear),
    ("FiLM block", film_block),
    ("denoiser", denoiser),
    ("encoder", encoder),
];
