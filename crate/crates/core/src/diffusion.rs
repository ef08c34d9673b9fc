//! Linear noise schedule, forward noising and deterministic (η = 0) DDIM in
//! both directions.
//!
//! The sampler keeps its running state in `f64` and only rounds to `f32` when
//! querying the noise predictor and when returning, so the zero-predictor
//! closed forms hold to single-precision rounding for any grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    betas: Vec<f64>,
    /// `alpha_bars[t]` for `t = 0..=T`; `alpha_bars[0] = 1`.
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas linearly spaced from `beta_start` to `beta_end` inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Domain("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Domain(format!(
                "need 0 < beta_start ≤ beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule {
            beta_start,
            beta_end,
            betas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `ᾱ_t` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Domain(format!("timestep {t} outside [1, {}]", self.steps())));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("valid defaults")
    }
}

/// `x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε`.
pub fn q_sample(x0: &[f32], t: usize, eps: &[f32], sched: &NoiseSchedule) -> Result<Vec<f32>> {
    if x0.len() != eps.len() {
        return Err(Error::Shape(format!("x_0 has {} values, ε has {}", x0.len(), eps.len())));
    }
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(&x, &e)| (a * f64::from(x) + s * f64::from(e)) as f32)
        .collect())
}

/// Increasing timesteps `τ_1 < … < τ_S` in `1..=T`; `τ_0 = 0` is implicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepGrid {
    steps: Vec<usize>,
}

impl StepGrid {
    pub fn new(steps: Vec<usize>, total: usize) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Domain("empty step grid".into()));
        }
        if steps[0] == 0 || steps.windows(2).any(|w| w[0] >= w[1]) || *steps.last().unwrap() > total {
            return Err(Error::Domain(format!(
                "grid must increase strictly within [1, {total}], got {steps:?}"
            )));
        }
        Ok(StepGrid { steps })
    }

    /// `S` evenly spaced timesteps ending at `T`: `round(i·T/S)` for
    /// `i = 1..=S`, deduplicated.
    pub fn uniform(total: usize, count: usize) -> Result<Self> {
        if count == 0 || total == 0 {
            return Err(Error::Domain("empty step grid".into()));
        }
        let mut steps: Vec<usize> = (1..=count)
            .map(|i| ((i * total) as f64 / count as f64).round() as usize)
            .filter(|&t| t >= 1)
            .collect();
        steps.dedup();
        StepGrid::new(steps, total)
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> usize {
        *self.steps.last().expect("non-empty grid")
    }
}

/// One deterministic DDIM move from `t_from` to `t_to` given the prediction
/// `eps` made at `t_from`.
fn ddim_move(x: &mut [f64], eps: &[f32], ab_from: f64, ab_to: f64) {
    let (sa_from, sn_from) = (ab_from.sqrt(), (1.0 - ab_from).sqrt());
    let (sa_to, sn_to) = (ab_to.sqrt(), (1.0 - ab_to).sqrt());
    for (xv, &e) in x.iter_mut().zip(eps) {
        let e = f64::from(e);
        let x0 = (*xv - sn_from * e) / sa_from;
        *xv = sa_to * x0 + sn_to * e;
    }
}

fn predict<P>(predictor: &mut P, x: &[f64], t: usize) -> Result<Vec<f32>>
where
    P: FnMut(&[f32], usize) -> Result<Vec<f32>>,
{
    let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
    let eps = predictor(&xf, t)?;
    if eps.len() != x.len() {
        return Err(Error::Shape(format!(
            "noise predictor returned {} values for {}",
            eps.len(),
            x.len()
        )));
    }
    Ok(eps)
}

/// Generate `x_0` from `x_T` by walking the grid downwards to 0.
///
/// `predictor(x_t, t)` returns ε̂ for the whole (possibly batched) state.
pub fn ddim_decode<P>(x_t: &[f32], grid: &StepGrid, sched: &NoiseSchedule, mut predictor: P) -> Result<Vec<f32>>
where
    P: FnMut(&[f32], usize) -> Result<Vec<f32>>,
{
    check_grid(grid, sched)?;
    let mut x: Vec<f64> = x_t.iter().map(|&v| f64::from(v)).collect();
    let steps = grid.steps();
    for i in (0..steps.len()).rev() {
        let t = steps[i];
        let t_prev = if i == 0 { 0 } else { steps[i - 1] };
        let eps = predict(&mut predictor, &x, t)?;
        ddim_move(&mut x, &eps, sched.alpha_bar(t), sched.alpha_bar(t_prev));
    }
    Ok(x.into_iter().map(|v| v as f32).collect())
}

/// Invert generation: walk the grid upwards from `x_0` to `x_{τ_S}`,
/// predicting ε̂ at the current state. At the clean start (`t = 0`, outside
/// the predictor's domain) the predictor is queried at `τ_1`, the timestep the
/// matching decode step uses.
pub fn ddim_encode<P>(x_0: &[f32], grid: &StepGrid, sched: &NoiseSchedule, mut predictor: P) -> Result<Vec<f32>>
where
    P: FnMut(&[f32], usize) -> Result<Vec<f32>>,
{
    check_grid(grid, sched)?;
    let mut x: Vec<f64> = x_0.iter().map(|&v| f64::from(v)).collect();
    let mut t = 0;
    for &t_next in grid.steps() {
        let eps = predict(&mut predictor, &x, t.max(grid.steps()[0]))?;
        ddim_move(&mut x, &eps, sched.alpha_bar(t), sched.alpha_bar(t_next));
        t = t_next;
    }
    Ok(x.into_iter().map(|v| v as f32).collect())
}

fn check_grid(grid: &StepGrid, sched: &NoiseSchedule) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Domain("empty step grid".into()));
    }
    if grid.last() > sched.steps() {
        return Err(Error::Domain(format!(
            "grid reaches t = {} beyond schedule length {}",
            grid.last(),
            sched.steps()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_values() {
        let s = NoiseSchedule::default();
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.alpha_bar(1) - 0.9999).abs() < 1e-15);
        assert!((s.beta(1000) - 0.02).abs() < 1e-15);
        assert!(s.alpha_bar(1000) < s.alpha_bar(1));
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 3e-3, 0.02).unwrap();
        assert_eq!(s.beta(1), 3e-3);
    }

    #[test]
    fn invalid_bounds() {
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
    }

    #[test]
    fn uniform_grid_shape() {
        let g = StepGrid::uniform(1000, 250).unwrap();
        assert_eq!(g.len(), 250);
        assert_eq!(g.steps()[0], 4);
        assert_eq!(g.last(), 1000);
        let g = StepGrid::uniform(10, 30).unwrap();
        assert_eq!(g.steps(), (1..=10).collect::<Vec<_>>().as_slice());
        assert!(StepGrid::uniform(1000, 0).is_err());
        assert!(StepGrid::new(vec![3, 3], 10).is_err());
    }

    #[test]
    fn q_sample_shape_and_domain() {
        let s = NoiseSchedule::default();
        assert!(matches!(q_sample(&[0.0; 3], 5, &[0.0; 2], &s), Err(Error::Shape(_))));
        assert!(matches!(q_sample(&[0.0; 2], 0, &[0.0; 2], &s), Err(Error::Domain(_))));
    }
}
