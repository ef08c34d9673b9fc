//! Counterfactual edits along the probe normal, and the image-to-image
//! pipeline that decodes them with the source's own stochastic latent.

use serde::{Deserialize, Serialize};

use crate::dae::{DaeModel, DECODE_STEPS, ENCODE_STEPS};
use crate::error::{Error, Result};
use crate::geometry::{signed_distance, Calibration, Hyperplane};
use crate::image::Image;
use crate::par::Execution;

fn moved(w: &[f64], p: &Hyperplane, delta: f64) -> Vec<f64> {
    let k = p.norm();
    w.iter().zip(&p.n).map(|(wi, ni)| wi + delta * ni / k).collect()
}

/// Mirror `w` across the hyperplane: `w − 2·dist(w, P)·n̂`.
pub fn reflect(w: &[f64], p: &Hyperplane) -> Result<Vec<f64>> {
    let d = signed_distance(w, p)?;
    Ok(moved(w, p, -2.0 * d))
}

/// Move `w` along `n̂` so its calibrated score equals `target`.
pub fn shift_to_grade(w: &[f64], p: &Hyperplane, cal: &Calibration, target: f64) -> Result<Vec<f64>> {
    let d = signed_distance(w, p)?;
    Ok(moved(w, p, cal.invert(target)? - d))
}

/// How sweep values are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// Grades, clamped to `[0, gmax]`.
    #[default]
    Calibrated,
    /// Grades, allowed outside `[0, gmax]` (linear calibrations only).
    Extrapolate,
    /// Raw signed-distance offsets from the source latent.
    Uncalibrated,
}

/// One edited latent per value, in input order.
pub fn sweep(w: &[f64], p: &Hyperplane, cal: &Calibration, values: &[f64], mode: SweepMode) -> Result<Vec<Vec<f64>>> {
    let d = signed_distance(w, p)?;
    values
        .iter()
        .map(|&v| {
            let delta = match mode {
                SweepMode::Calibrated => cal.invert(v.clamp(0.0, cal.gmax))? - d,
                SweepMode::Extrapolate => cal.invert_unbounded(v)? - d,
                SweepMode::Uncalibrated => v,
            };
            Ok(moved(w, p, delta))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum CeMode {
    Reflect,
    TargetGrade {
        target_grade: f64,
    },
    Sweep {
        sweep_grades: Vec<f64>,
        #[serde(default)]
        sweep_mode: SweepMode,
    },
}

impl CeMode {
    pub fn validate(&self, gmax: f64) -> Result<()> {
        match self {
            CeMode::Reflect => Ok(()),
            CeMode::TargetGrade { target_grade } => {
                if !(0.0..=gmax).contains(target_grade) {
                    return Err(Error::OutOfRange {
                        target: *target_grade,
                        lo: 0.0,
                        hi: gmax,
                    });
                }
                Ok(())
            }
            CeMode::Sweep { sweep_grades, .. } => {
                if sweep_grades.len() < 2 {
                    return Err(Error::Domain("a sweep needs at least two values".into()));
                }
                if sweep_grades.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Domain("sweep values must be finite".into()));
                }
                Ok(())
            }
        }
    }
}

/// Encode/decode budgets for [`generate_ce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CeSteps {
    pub encode: usize,
    pub decode: usize,
}

impl Default for CeSteps {
    fn default() -> Self {
        CeSteps {
            encode: ENCODE_STEPS,
            decode: DECODE_STEPS,
        }
    }
}

/// One edited latent and its decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeFrame {
    /// Requested grade (or distance offset in uncalibrated sweeps); absent
    /// for reflections.
    pub value: Option<f64>,
    pub latent: Vec<f64>,
    pub distance: f64,
    pub score: f64,
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub original_latent: Vec<f64>,
    pub distance_original: f64,
    pub score_original: f64,
    /// Decode of the unedited latent with the same stochastic latent.
    pub reconstruction: Image,
    pub frames: Vec<CeFrame>,
    /// Stochastic latent shared by every decoded frame.
    #[serde(skip)]
    pub stochastic_latent: Vec<f32>,
}

impl CounterfactualResult {
    /// Edited distance of a single-frame result (reflect / target-grade).
    pub fn distance_edited(&self) -> Option<f64> {
        (self.frames.len() == 1).then(|| self.frames[0].distance)
    }
}

/// Encode `source`, apply the requested latent edit(s), and decode every
/// edited latent together with the unedited reconstruction, all from the
/// source's original `x_T`.
pub fn generate_ce(
    model: &DaeModel,
    plane: &Hyperplane,
    cal: &Calibration,
    source: &Image,
    mode: &CeMode,
    steps: CeSteps,
    exec: Execution,
) -> Result<CounterfactualResult> {
    if plane.dim() != model.latent_dim() {
        return Err(Error::Config(format!(
            "probe is {}-dimensional but the model's latents are {}-dimensional",
            plane.dim(),
            model.latent_dim()
        )));
    }
    mode.validate(cal.gmax)?;
    let (z, x_t) = model
        .encode(&[source], steps.encode, exec)?
        .pop()
        .expect("one image in, one latent out");
    let w: Vec<f64> = z.iter().map(|&v| f64::from(v)).collect();
    let (values, edited) = match mode {
        CeMode::Reflect => (vec![None], vec![reflect(&w, plane)?]),
        CeMode::TargetGrade { target_grade } => (
            vec![Some(*target_grade)],
            vec![shift_to_grade(&w, plane, cal, *target_grade)?],
        ),
        CeMode::Sweep {
            sweep_grades,
            sweep_mode,
        } => (
            sweep_grades.iter().copied().map(Some).collect(),
            sweep(&w, plane, cal, sweep_grades, *sweep_mode)?,
        ),
    };

    let mut batch = vec![(z.clone(), x_t.clone())];
    batch.extend(
        edited
            .iter()
            .map(|e| (e.iter().map(|&v| v as f32).collect::<Vec<f32>>(), x_t.clone())),
    );
    let mut images = model.decode(&batch, steps.decode, exec)?.into_iter();
    let reconstruction = images.next().expect("reconstruction decoded");

    let d0 = signed_distance(&w, plane)?;
    let mut frames = Vec::with_capacity(edited.len());
    for ((value, latent), image) in values.into_iter().zip(edited).zip(images) {
        let distance = signed_distance(&latent, plane)?;
        frames.push(CeFrame {
            value,
            score: cal.score(distance),
            distance,
            latent,
            image,
        });
    }
    Ok(CounterfactualResult {
        score_original: cal.score(d0),
        distance_original: d0,
        original_latent: w,
        reconstruction,
        frames,
        stochastic_latent: x_t,
    })
}
