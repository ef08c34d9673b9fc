mod common;

use latentgrade::counterfactual::{generate_ce, reflect, shift_to_grade, sweep, CeMode, CeSteps, SweepMode};
use latentgrade::geometry::{
    dot, fit_calibration, predict_grade, signed_distance, Calibration, CalibrationMode, Hyperplane,
};
use latentgrade::par::Execution;
use latentgrade::Error;
use proptest::prelude::*;

use common::{random_small_model, sample_images};

fn plane_strategy(dim: usize) -> impl Strategy<Value = Hyperplane> {
    (prop::collection::vec(-3.0f64..3.0, dim), -3.0f64..3.0)
        .prop_filter("non-degenerate normal", |(n, _)| dot(n, n) > 1e-2)
        .prop_map(|(n, b)| Hyperplane::new(n, b).unwrap())
}

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, dim)
}

/// Linear calibration with grade 0 at distance −2 and grade 3 at +4.
fn cal() -> Calibration {
    fit_calibration(&[-2.0, 4.0], &[0.0, 3.0], CalibrationMode::MeansOfExtremes, 1, 3.0).unwrap()
}

fn cubic_cal() -> Calibration {
    let ds: Vec<f64> = (0..80).map(|i| -4.0 + 0.1 * i as f64).collect();
    let gs: Vec<f64> = ds.iter().map(|d| 1.5 + 0.35 * d + 0.01 * d * d * d).collect();
    fit_calibration(&ds, &gs, CalibrationMode::Polynomial, 3, 3.0).unwrap()
}

/// Component of `v − w` orthogonal to the normal.
fn off_line(w: &[f64], v: &[f64], p: &Hyperplane) -> f64 {
    let u = p.unit_normal();
    let delta: Vec<f64> = v.iter().zip(w).map(|(a, b)| a - b).collect();
    let along = dot(&delta, &u);
    delta
        .iter()
        .zip(&u)
        .map(|(d, n)| (d - along * n).powi(2))
        .sum::<f64>()
        .sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn reflection_properties(p in plane_strategy(6), w in point(6)) {
        let d = signed_distance(&w, &p).unwrap();
        prop_assume!(d.abs() > 1e-9);
        let r = reflect(&w, &p).unwrap();
        prop_assert_eq!(p.decision(&r).signum(), -p.decision(&w).signum());
        prop_assert!((signed_distance(&r, &p).unwrap() + d).abs() <= 1e-9);
        let back = reflect(&r, &p).unwrap();
        for (a, b) in back.iter().zip(&w) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        prop_assert!(off_line(&w, &r, &p) <= 1e-9 * (1.0 + dot(&w, &w).sqrt()));
    }

    #[test]
    fn reflection_ignores_normal_scale(p in plane_strategy(4), w in point(4), k in 0.01f64..100.0) {
        let q = Hyperplane::new(p.n.iter().map(|v| k * v).collect(), k * p.b).unwrap();
        let (a, b) = (reflect(&w, &p).unwrap(), reflect(&w, &q).unwrap());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn shifts_hit_their_target(p in plane_strategy(5), w in point(5), target in 0.0f64..=3.0) {
        for c in [cal(), cubic_cal()] {
            let v = shift_to_grade(&w, &p, &c, target).unwrap();
            let (score, _) = predict_grade(&v, &p, &c).unwrap();
            prop_assert!((score - target).abs() <= 1e-6, "score {} target {}", score, target);
            prop_assert!(off_line(&w, &v, &p) <= 1e-9 * (1.0 + dot(&w, &w).sqrt()));
        }
    }

    #[test]
    fn shifts_compose(p in plane_strategy(5), w in point(5)) {
        let c = cal();
        let via = shift_to_grade(&shift_to_grade(&w, &p, &c, 0.0).unwrap(), &p, &c, 3.0).unwrap();
        let direct = shift_to_grade(&w, &p, &c, 3.0).unwrap();
        for (a, b) in via.iter().zip(&direct) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn grade_grid_round_trip() {
    let p = Hyperplane::new(vec![0.3, -1.1, 0.5], 0.2).unwrap();
    let w = [1.0, 2.0, -0.5];
    for c in [cal(), cubic_cal()] {
        for i in 0..=6 {
            let g = 0.5 * i as f64;
            let v = shift_to_grade(&w, &p, &c, g).unwrap();
            assert!((predict_grade(&v, &p, &c).unwrap().0 - g).abs() <= 1e-6);
        }
    }
}

#[test]
fn shifting_to_the_current_score_is_a_no_op() {
    let p = Hyperplane::new(vec![1.0, 2.0], -0.5).unwrap();
    let c = cal();
    let w = [0.4, 0.3];
    let now = c.score(signed_distance(&w, &p).unwrap());
    let v = shift_to_grade(&w, &p, &c, now).unwrap();
    assert!(v.iter().zip(&w).all(|(a, b)| (a - b).abs() <= 1e-9));
    assert!(matches!(shift_to_grade(&w, &p, &c, 3.2), Err(Error::OutOfRange { .. })));
}

#[test]
fn sweep_contracts() {
    let p = Hyperplane::new(vec![2.0, -1.0, 0.5, 0.0], 1.0).unwrap();
    let w = [0.1, 0.2, -0.3, 0.4];
    let c = cal();
    let frames = sweep(&w, &p, &c, &[0.0, 1.0, 2.0, 3.0], SweepMode::Calibrated).unwrap();
    assert_eq!(frames.len(), 4);
    for (f, g) in frames.iter().zip([0.0, 1.0, 2.0, 3.0]) {
        assert!((c.score(signed_distance(f, &p).unwrap()) - g).abs() <= 1e-9);
    }
    let u = p.unit_normal();
    for pair in frames.windows(2) {
        let step: Vec<f64> = pair[1].iter().zip(&pair[0]).map(|(a, b)| a - b).collect();
        let cos = dot(&step, &u) / dot(&step, &step).sqrt();
        assert!(cos >= 1.0 - 1e-9);
    }
    // Clamped by default, extrapolated on request.
    let clamped = sweep(&w, &p, &c, &[-1.0, 4.0], SweepMode::Calibrated).unwrap();
    assert!((c.score(signed_distance(&clamped[1], &p).unwrap()) - 3.0).abs() < 1e-9);
    let wide = sweep(&w, &p, &c, &[-1.0, 4.0], SweepMode::Extrapolate).unwrap();
    assert!((c.score(signed_distance(&wide[0], &p).unwrap()) + 1.0).abs() < 1e-9);
    // Raw offsets along the normal.
    let sigma = 0.7;
    let d0 = signed_distance(&w, &p).unwrap();
    let raw = sweep(&w, &p, &c, &[-2.0 * sigma, 0.0, 2.0 * sigma], SweepMode::Uncalibrated).unwrap();
    assert_eq!(raw.len(), 3);
    for (f, off) in raw.iter().zip([-2.0 * sigma, 0.0, 2.0 * sigma]) {
        assert!((signed_distance(f, &p).unwrap() - d0 - off).abs() < 1e-12);
    }
}

#[test]
fn request_validation() {
    assert!(CeMode::TargetGrade { target_grade: -0.1 }.validate(3.0).is_err());
    assert!(CeMode::TargetGrade { target_grade: 3.0 }.validate(3.0).is_ok());
    let sweep = CeMode::Sweep {
        sweep_grades: vec![0.0, f64::NAN],
        sweep_mode: SweepMode::Calibrated,
    };
    assert!(sweep.validate(3.0).is_err());
}

fn small_steps() -> CeSteps {
    CeSteps { encode: 20, decode: 10 }
}

#[test]
fn pipeline_reuses_the_stochastic_latent() {
    let model = random_small_model(31, 0.05);
    let img = &sample_images(40, 1)[0];
    let p = Hyperplane::new((0..8).map(|i| (i as f64 - 3.5) / 4.0).collect(), 0.1).unwrap();
    let c = cal();
    let mode = CeMode::Sweep {
        sweep_grades: vec![0.0, 1.5, 3.0],
        sweep_mode: SweepMode::Calibrated,
    };
    let res = generate_ce(&model, &p, &c, img, &mode, small_steps(), Execution::Parallel).unwrap();
    let (z, xt) = model.encode(&[img], 20, Execution::Sequential).unwrap().remove(0);
    assert_eq!(res.stochastic_latent, xt);
    assert_eq!(res.frames.len(), 3);
    assert_eq!(res.reconstruction, model.decode(&[(z, xt.clone())], 10, Execution::Sequential).unwrap()[0]);
    for f in &res.frames {
        let zf: Vec<f32> = f.latent.iter().map(|&v| v as f32).collect();
        let expect = model.decode(&[(zf, xt.clone())], 10, Execution::Sequential).unwrap().remove(0);
        assert_eq!(f.image, expect);
        assert!((f.distance - signed_distance(&f.latent, &p).unwrap()).abs() < 1e-12);
        assert!((f.score - f.value.unwrap()).abs() < 1e-6);
    }

    let again = generate_ce(&model, &p, &c, img, &mode, small_steps(), Execution::Sequential).unwrap();
    assert_eq!(again, res);

    let r = generate_ce(&model, &p, &c, img, &CeMode::Reflect, small_steps(), Execution::Parallel).unwrap();
    assert!((r.distance_edited().unwrap() + r.distance_original).abs() <= 1e-9);
}

#[test]
fn probe_of_wrong_dimension_is_a_config_error() {
    let model = random_small_model(32, 0.05);
    let img = &sample_images(41, 1)[0];
    let p = Hyperplane::new(vec![1.0, 0.0], 0.0).unwrap();
    let r = generate_ce(&model, &p, &cal(), img, &CeMode::Reflect, small_steps(), Execution::Sequential);
    assert!(matches!(r, Err(Error::Config(_))));
}
