use super::{Grads, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F = f32> {
    pub step: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ParamStore<F>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.dims())).collect();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update. Gradients are validated before any
/// parameter is touched, so a failing call leaves `params` and `state`
/// unchanged.
pub fn adam_step<F: Scalar>(
    params: &mut ParamStore<F>,
    grads: &Grads<F>,
    state: &mut AdamState<F>,
    cfg: &AdamConfig,
) -> Result<()> {
    assert_eq!(grads.tensors().len(), params.len(), "gradient/parameter count");
    if let Some(i) = grads.tensors().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            param: params.name(i).to_string(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
    let (one_b1, one_b2) = (F::of(1.0 - cfg.beta1), F::of(1.0 - cfg.beta2));
    let step_size = F::of(cfg.lr / bc1);
    let inv_sqrt_bc2 = F::of(1.0 / bc2.sqrt());
    let eps = F::of(cfg.eps);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads.tensors()[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + one_b1 * g[j];
            v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
            *w -= step_size * m[j] / (v[j].sqrt() * inv_sqrt_bc2 + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.add("p", Tensor::full(&[1], v));
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_store(0.7);
        let g = p.zero_grads();
        let mut s = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p.tensors()[0].data()[0], 0.7);
    }

    #[test]
    fn first_step_is_unit_step() {
        let mut p = scalar_store(1.0);
        let mut g = p.zero_grads();
        g.tensors_mut()[0].fill(1.0);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        adam_step(&mut p, &g, &mut s, &cfg).unwrap();
        let moved = 1.0 - p.tensors()[0].data()[0];
        assert!((moved - 0.1).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn update_order_of_stores_is_irrelevant() {
        let make = || {
            let mut a = scalar_store(0.3);
            a.add("q", Tensor::full(&[2], -1.0));
            let b = scalar_store(2.0);
            (a, b)
        };
        let grads = |a: &ParamStore<f64>, b: &ParamStore<f64>| {
            let mut ga = a.zero_grads();
            ga.tensors_mut()[0].fill(0.5);
            ga.tensors_mut()[1].fill(-2.0);
            let mut gb = b.zero_grads();
            gb.tensors_mut()[0].fill(3.0);
            (ga, gb)
        };
        let cfg = AdamConfig::default();
        let (mut a1, mut b1) = make();
        let (mut sa1, mut sb1) = (AdamState::new(&a1), AdamState::new(&b1));
        let (mut a2, mut b2) = make();
        let (mut sa2, mut sb2) = (AdamState::new(&a2), AdamState::new(&b2));
        for _ in 0..3 {
            let (ga, gb) = grads(&a1, &b1);
            adam_step(&mut a1, &ga, &mut sa1, &cfg).unwrap();
            adam_step(&mut b1, &gb, &mut sb1, &cfg).unwrap();
            adam_step(&mut b2, &gb, &mut sb2, &cfg).unwrap();
            adam_step(&mut a2, &ga, &mut sa2, &cfg).unwrap();
        }
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_store(1.0);
        p.add("bad", Tensor::zeros(&[3]));
        let mut g = p.zero_grads();
        g.tensors_mut()[1].data_mut()[2] = f64::NAN;
        let mut s = AdamState::new(&p);
        let before = p.clone();
        let err = adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { ref param } if param == "bad"));
        assert_eq!(p, before);
        assert_eq!(s.step, 0);
    }
}
