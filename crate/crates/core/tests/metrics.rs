use latentgrade::image::Image;
use latentgrade::metrics::{
    confusion, f1_binary, f1_macro, latent_frechet, mae, pca_project, psnr, render_table, roc_auc, spearman, ssim,
    EvalReport, PSNR_IDENTICAL,
};
use latentgrade::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

#[test]
fn auc_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cases = 0;
    while cases < 100 {
        let n = rng.random_range(2..=50);
        // Coarse scores so that ties are common.
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8)) / 4.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        if !labels.contains(&0) || !labels.contains(&1) {
            continue;
        }
        let auc = roc_auc(&scores, &labels).unwrap();
        assert!((auc - brute_force_auc(&scores, &labels)).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&auc));
        cases += 1;
    }
}

#[test]
fn auc_edge_cases() {
    assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(roc_auc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    assert!(matches!(roc_auc(&[0.1], &[0, 1]), Err(Error::Shape(_))));
}

#[test]
fn f1_hand_computed_three_class_case() {
    let truth = [0, 0, 1, 1, 2, 2];
    let pred = [0, 1, 1, 1, 2, 0];
    // Class 0: tp 1, fp 1, fn 1 → 1/2. Class 1: tp 2, fp 1 → 4/5. Class 2: tp 1, fn 1 → 2/3.
    let expected = (0.5 + 0.8 + 2.0 / 3.0) / 3.0;
    assert!((f1_macro(&pred, &truth, 3).unwrap() - expected).abs() < 1e-12);
    assert_eq!(f1_macro(&truth, &truth, 3).unwrap(), 1.0);
    // A class with no support contributes 0.
    assert!((f1_macro(&truth, &truth, 4).unwrap() - 0.75).abs() < 1e-12);
    assert_eq!(f1_binary(&[0, 0], &[0, 0]).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn macro_f1_is_label_permutation_invariant(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
        perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let pp: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
        let pt: Vec<usize> = truth.iter().map(|&c| perm[c]).collect();
        let a = f1_macro(&pred, &truth, 4).unwrap();
        let b = f1_macro(&pp, &pt, 4).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn auc_depends_only_on_score_order(
        data in prop::collection::vec((-5.0f64..5.0, 0u8..2), 2..60),
        a in 0.1f64..10.0,
        c in -3.0f64..3.0,
    ) {
        let (scores, labels): (Vec<f64>, Vec<u8>) = data.into_iter().unzip();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let base = roc_auc(&scores, &labels).unwrap();
        let moved: Vec<f64> = scores.iter().map(|s| (a * s + c).exp()).collect();
        prop_assert!((roc_auc(&moved, &labels).unwrap() - base).abs() < 1e-12);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((roc_auc(&flipped, &labels).unwrap() - (1.0 - base)).abs() < 1e-12);
    }

    #[test]
    fn spearman_is_invariant_to_monotone_maps(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..40),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let Ok(base) = spearman(&x, &y) else { return Ok(()); };
        let cubed: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
        prop_assert!((spearman(&cubed, &y).unwrap() - base).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&base));
    }

    #[test]
    fn confusion_rows_count_each_grade(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = confusion(&pred, &truth, 4).unwrap();
        for (g, row) in m.iter().enumerate() {
            prop_assert_eq!(row.iter().sum::<usize>(), truth.iter().filter(|&&t| t == g).count());
        }
    }
}

#[test]
fn mae_examples() {
    assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(mae(&[0.0, 3.0], &[3.0, 0.0]).unwrap(), 3.0);
}

fn random_image(seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(32, 32, (0..1024).map(|_| rng.random_range(0.0f32..0.85)).collect()).unwrap()
}

#[test]
fn reconstruction_metrics() {
    let a = random_image(1);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_IDENTICAL);
    assert!((ssim(&a, &a, 8).unwrap() - 1.0).abs() < 1e-12);
    let b = Image::new(32, 32, a.pixels.iter().map(|p| p + 0.1).collect()).unwrap();
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-4);
    let c = random_image(2);
    assert_eq!(ssim(&a, &c, 8).unwrap(), ssim(&c, &a, 8).unwrap());
    assert!(ssim(&a, &c, 8).unwrap() < 0.5);
    assert!(matches!(psnr(&a, &Image::filled(16, 16, 0.0)), Err(Error::Shape(_))));
}

fn gaussian_set(seed: u64, n: usize, dim: usize, mix: &[f64], shift: &[f64]) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let e: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            (0..dim)
                .map(|i| (0..dim).map(|j| mix[i * dim + j] * e[j]).sum::<f64>() + shift[i])
                .collect()
        })
        .collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major).
fn jacobi(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[i * n + j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                out[i * n + j] += a[i * n + k] * b[k * n + j];
            }
        }
    }
    out
}

fn stats(xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (xs.len(), xs[0].len());
    let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; d * d];
    for x in xs {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]) / (n - 1) as f64;
            }
        }
    }
    (mean, cov)
}

fn oracle_frechet(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = a[0].len();
    let (ma, ca) = stats(a);
    let (mb, cb) = stats(b);
    let (vals, vecs) = jacobi(ca.clone(), d);
    let mut root = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            root[i * d + j] = (0..d).map(|k| vecs[i * d + k] * vals[k].max(0.0).sqrt() * vecs[j * d + k]).sum();
        }
    }
    let m = matmul(&matmul(&root, &cb, d), &root, d);
    let (ev, _) = jacobi(m, d);
    let tr: f64 = ev.iter().map(|v| v.max(0.0).sqrt()).sum();
    let dmu: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum();
    let trace = |c: &[f64]| (0..d).map(|i| c[i * d + i]).sum::<f64>();
    dmu + trace(&ca) + trace(&cb) - 2.0 * tr
}

#[test]
fn frechet_matches_jacobi_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..20 {
        let mix_a: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mix_b: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shift: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = gaussian_set(100 + case, 60, 4, &mix_a, &[0.0; 4]);
        let b = gaussian_set(200 + case, 80, 4, &mix_b, &shift);
        let got = latent_frechet(&a, &b).unwrap();
        let want = oracle_frechet(&a, &b);
        assert!((got - want).abs() <= 1e-6 * (1.0 + want.abs()), "case {case}: {got} vs {want}");
        let rev = latent_frechet(&b, &a).unwrap();
        assert!((got - rev).abs() <= 1e-6 * (1.0 + got.abs()));
        assert!(got >= -1e-8);
    }
}

#[test]
fn frechet_analytic_cases() {
    let mix: Vec<f64> = vec![1.0, 0.2, 0.0, 0.5, 1.0, 0.1, 0.0, 0.3, 0.7];
    let a = gaussian_set(7, 50, 3, &mix, &[0.0; 3]);
    assert!(latent_frechet(&a, &a).unwrap().abs() <= 1e-6);
    let d = [0.5, -1.0, 2.0];
    let b: Vec<Vec<f64>> = a.iter().map(|x| x.iter().zip(&d).map(|(v, s)| v + s).collect()).collect();
    let want: f64 = d.iter().map(|v| v * v).sum();
    assert!((latent_frechet(&a, &b).unwrap() - want).abs() <= 1e-6);
    assert!(matches!(latent_frechet(&a[..3], &b), Err(Error::UndefinedMetric(_))));
}

#[test]
fn pca_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let line: Vec<Vec<f64>> = (0..40)
        .map(|_| {
            let t: f64 = rng.random_range(-3.0..3.0);
            vec![t, 2.0 * t + 1.0, -t + rng.random_range(-1e-3..1e-3)]
        })
        .collect();
    let pca = pca_project(&line, 2).unwrap();
    assert!(pca.explained_ratio[0] >= 0.999);
    let origin = pca.project(&pca.mean);
    assert!(origin.iter().all(|v| v.abs() < 1e-12));
    for c in &pca.components {
        let lead = c.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        assert!(lead > 0.0);
    }

    let mix: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xs = gaussian_set(10, 100, 5, &mix, &[1.0, 2.0, 3.0, 4.0, 5.0]);
    let pca = pca_project(&xs, 2).unwrap();
    let mut resid = 0.0;
    for (x, coords) in xs.iter().zip(&pca.coords) {
        for (j, &xj) in x.iter().enumerate() {
            let rec = pca.mean[j] + coords.iter().zip(&pca.components).map(|(c, v)| c * v[j]).sum::<f64>();
            resid += (xj - rec).powi(2);
        }
    }
    let discarded: f64 = pca.eigenvalues[2..].iter().sum();
    assert!((resid / 99.0 - discarded).abs() <= 1e-9 * (1.0 + discarded));
    assert!(matches!(pca_project(&xs[..2], 2), Err(Error::UndefinedMetric(_))));
}

#[test]
fn spearman_is_rank_based() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [1.0, 8.0, 27.0, 64.0, 125.0];
    assert!((spearman(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    let c = [5.0, 4.0, 3.0, 2.0, 1.0];
    assert!((spearman(&a, &c).unwrap() + 1.0).abs() < 1e-12);
}

#[test]
fn report_table_lists_every_task() {
    let mut r = EvalReport::new("svm-detection", 80);
    r.auc = Some(0.987);
    let mut g = EvalReport::new("grading", 100);
    g.mae = Some(0.31);
    g.confusion = Some(vec![vec![1, 0], vec![0, 1]]);
    let table = render_table(&[r, g]);
    assert!(table.contains("svm-detection") && table.contains("0.9870") && table.contains("0.3100"));
    assert!(table.contains("confusion"));
}
