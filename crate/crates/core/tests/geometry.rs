use icl_lens::geometry::stats::{bootstrap_mean_ci, loglog_slope, ols, Moments};
use icl_lens::geometry::{
    between_task_distance, bias_variance_decompose, compression_expression_ratios, optimal_layer,
    pca_2d, tdnv, tdnv_curve, tdnv_grouped, within_task_variance, PairAggregation,
    RepresentationSet, TdnvCurve,
};
use icl_lens::Error;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

fn two_tasks() -> Vec<Vec<Vec<f64>>> {
    vec![
        vec![vec![0.0, 0.0], vec![2.0, 0.0]],
        vec![vec![5.0, 0.0], vec![5.0, 2.0]],
    ]
}

#[test]
fn hand_examples() {
    assert!((within_task_variance(&two_tasks()[0]).unwrap() - 1.0).abs() < 1e-12);
    assert!((between_task_distance(&[1.0, 0.0], &[5.0, 1.0]).unwrap() - 17.0).abs() < 1e-12);
    let v = tdnv_grouped(&two_tasks(), PairAggregation::Mean).unwrap();
    assert!((v - 1.0 / 17.0).abs() < 1e-12);
    // both ordered pairs summed
    let s = tdnv_grouped(&two_tasks(), PairAggregation::Sum).unwrap();
    assert!((s - 2.0 / 17.0).abs() < 1e-12);
}

#[test]
fn tdnv_labels_in_any_order() {
    let g = two_tasks();
    let vectors = vec![
        g[1][0].clone(),
        g[0][0].clone(),
        g[1][1].clone(),
        g[0][1].clone(),
    ];
    let v = tdnv(&vectors, &[7, 3, 7, 3], PairAggregation::Mean).unwrap();
    assert!((v - 1.0 / 17.0).abs() < 1e-12);
}

#[test]
fn tdnv_errors() {
    let one = vec![two_tasks()[0].clone()];
    assert!(matches!(
        tdnv_grouped(&one, PairAggregation::Mean),
        Err(Error::Invalid(_))
    ));
    let same = vec![vec![vec![0.0], vec![2.0]], vec![vec![1.0], vec![1.0]]];
    assert!(matches!(
        tdnv_grouped(&same, PairAggregation::Mean),
        Err(Error::Degenerate(_))
    ));
}

/// Direct double loop over ordered task pairs, written independently of the library.
fn tdnv_oracle(groups: &[Vec<Vec<f64>>]) -> f64 {
    let d = groups[0][0].len();
    let mean = |g: &Vec<Vec<f64>>| -> Vec<f64> {
        (0..d)
            .map(|j| g.iter().map(|v| v[j]).sum::<f64>() / g.len() as f64)
            .collect()
    };
    let sq =
        |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };
    let means: Vec<Vec<f64>> = groups.iter().map(mean).collect();
    let vars: Vec<f64> = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|v| sq(v, m)).sum::<f64>() / g.len() as f64)
        .collect();
    let t = groups.len();
    let mut acc = 0.0;
    for a in 0..t {
        for b in 0..t {
            if a != b {
                acc += (vars[a] + vars[b]) / (2.0 * sq(&means[a], &means[b]));
            }
        }
    }
    acc / (t * (t - 1)) as f64
}

#[test]
fn tdnv_matches_double_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for t in 2..6 {
        let groups: Vec<Vec<Vec<f64>>> = (0..t)
            .map(|i| {
                gaussian(&mut rng, 5 + i, 6)
                    .into_iter()
                    .map(|v| v.into_iter().map(|x| x + i as f64).collect())
                    .collect()
            })
            .collect();
        let got = tdnv_grouped(&groups, PairAggregation::Mean).unwrap();
        let want = tdnv_oracle(&groups);
        assert!(
            (got - want).abs() < 1e-12 * want.max(1.0),
            "{got} vs {want}"
        );
    }
}

fn random_groups(seed: u64, tasks: usize, n: usize, d: usize) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..tasks)
        .map(|t| {
            gaussian(&mut rng, n, d)
                .into_iter()
                .map(|v| {
                    v.into_iter()
                        .enumerate()
                        .map(|(j, x)| x + 3.0 * ((t + j) % 3) as f64)
                        .collect()
                })
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tdnv_scale_and_shift_invariant(seed in 0u64..1000, c in 0.01f64..100.0, shift in -10.0f64..10.0) {
        let g = random_groups(seed, 3, 6, 4);
        let base = tdnv_grouped(&g, PairAggregation::Mean).unwrap();
        let moved: Vec<Vec<Vec<f64>>> = g
            .iter()
            .map(|t| t.iter().map(|v| v.iter().map(|x| c * x + shift).collect()).collect())
            .collect();
        let other = tdnv_grouped(&moved, PairAggregation::Mean).unwrap();
        prop_assert!((base - other).abs() <= 1e-9 * base);
    }

    #[test]
    fn tdnv_rotation_invariant(seed in 0u64..1000, theta in 0.0f64..std::f64::consts::TAU, i in 0usize..4, j in 0usize..4) {
        prop_assume!(i != j);
        let g = random_groups(seed, 4, 5, 4);
        let (s, c) = theta.sin_cos();
        let rotated: Vec<Vec<Vec<f64>>> = g
            .iter()
            .map(|t| {
                t.iter()
                    .map(|v| {
                        let mut w = v.clone();
                        w[i] = c * v[i] - s * v[j];
                        w[j] = s * v[i] + c * v[j];
                        w
                    })
                    .collect()
            })
            .collect();
        let a = tdnv_grouped(&g, PairAggregation::Mean).unwrap();
        let b = tdnv_grouped(&rotated, PairAggregation::Mean).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a);
    }

    #[test]
    fn tdnv_nonnegative_and_sum_is_scaled_mean(seed in 0u64..1000, tasks in 2usize..6) {
        let g = random_groups(seed, tasks, 4, 3);
        let m = tdnv_grouped(&g, PairAggregation::Mean).unwrap();
        let s = tdnv_grouped(&g, PairAggregation::Sum).unwrap();
        prop_assert!(m >= 0.0);
        prop_assert!((s - m * (tasks * (tasks - 1)) as f64).abs() <= 1e-9 * s);
    }
}

/// Applies the library's sign convention: first loading with |x| > 1e-12 is positive.
fn canonical(v: &[f64]) -> Vec<f64> {
    let first = v.iter().find(|x| x.abs() > 1e-12).copied().unwrap_or(1.0);
    v.iter().map(|x| x * first.signum()).collect()
}

#[test]
fn pca_matches_dense_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 8;
    // anisotropic cloud so the top two eigenvalues are separated
    let points: Vec<Vec<f64>> = gaussian(&mut rng, 400, d)
        .into_iter()
        .map(|v| {
            v.iter()
                .enumerate()
                .map(|(j, x)| x * (d - j) as f64 + 0.3 * v[0] * j as f64)
                .collect()
        })
        .collect();
    let pca = pca_2d(&points).unwrap();

    let n = points.len();
    let mean: Vec<f64> = (0..d)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let x = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let cov = x.transpose() * &x / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    for c in 0..2 {
        let want_val = eig.eigenvalues[order[c]];
        assert!((pca.explained[c] - want_val).abs() < 1e-6 * want_val.max(1.0));
        let want_vec = canonical(eig.eigenvectors.column(order[c]).as_slice());
        for (a, b) in pca.components[c].iter().zip(&want_vec) {
            assert!((a - b).abs() < 1e-6, "component {c}: {a} vs {b}");
        }
    }
    for (p, coord) in points.iter().zip(&pca.coords) {
        for c in 0..2 {
            let proj: f64 = p
                .iter()
                .zip(&mean)
                .zip(&pca.components[c])
                .map(|((x, m), u)| (x - m) * u)
                .sum();
            assert!((proj - coord[c]).abs() < 1e-9);
        }
    }
}

#[test]
fn pca_isotropic_gaussian_has_equal_explained_variances() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let points = gaussian(&mut rng, 20_000, 2);
    let pca = pca_2d(&points).unwrap();
    let ratio = pca.explained[1] / pca.explained[0];
    assert!(ratio > 0.95 && ratio <= 1.0, "ratio {ratio}");
    let dot: f64 = pca.components[0]
        .iter()
        .zip(&pca.components[1])
        .map(|(a, b)| a * b)
        .sum();
    assert!(dot.abs() < 1e-9);
}

#[test]
fn pca_rejects_tiny_inputs() {
    assert!(pca_2d(&[vec![1.0, 2.0]]).is_err());
    assert!(pca_2d(&[vec![1.0], vec![2.0]]).is_err());
}

#[test]
fn curve_helpers() {
    assert_eq!(optimal_layer(&[3.0, 1.0, 1.0, 2.0]), 1);
    let c = TdnvCurve::new(1, vec![4.0, 1.0, 2.0]);
    assert_eq!(c.argmin(), 2);
    assert!(c.has_interior_minimum());
    assert_eq!(c.at(3), Some(2.0));
    assert_eq!(c.at(0), None);
    let (dc, de) = compression_expression_ratios(&c).unwrap();
    assert!((dc - 0.75).abs() < 1e-15 && (de - 0.5).abs() < 1e-15);
    assert!(!TdnvCurve::from_values(vec![1.0, 2.0, 3.0]).has_interior_minimum());
}

#[test]
fn curve_from_representation_set() {
    // layer 0 has coincident task means, so the curve starts at layer 1
    let g = two_tasks();
    let reps: Vec<Vec<Vec<Vec<f64>>>> = g
        .iter()
        .map(|t| {
            t.iter()
                .map(|v| {
                    vec![
                        vec![0.0, 0.0],
                        v.clone(),
                        v.iter().map(|x| 2.0 * x).collect(),
                    ]
                })
                .collect()
        })
        .collect();
    let set = RepresentationSet::new("test", 1, "m", vec!["a".into(), "b".into()], reps).unwrap();
    let curve = tdnv_curve(&set, PairAggregation::Mean).unwrap();
    assert_eq!(curve.first_layer, 1);
    assert_eq!(curve.values.len(), 2);
    assert!((curve.values[0] - 1.0 / 17.0).abs() < 1e-12);
    assert!((curve.values[1] - 1.0 / 17.0).abs() < 1e-12);
}

#[test]
fn ragged_representation_set_rejected() {
    let reps = vec![
        vec![vec![vec![0.0]]],
        vec![vec![vec![0.0]], vec![vec![1.0]]],
    ];
    assert!(RepresentationSet::new("x", 0, "m", vec!["a".into(), "b".into()], reps).is_err());
}

#[test]
fn synthetic_variance_decays_as_one_over_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let grid = [0usize, 1, 2, 4, 8, 16, 32, 64];
    let mus = [vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]];
    let reps: Vec<Vec<Vec<Vec<f64>>>> = grid
        .iter()
        .map(|&k| {
            let s = 1.0 / (k.max(1) as f64).sqrt();
            mus.iter()
                .map(|mu| {
                    gaussian(&mut rng, 2000, 4)
                        .into_iter()
                        .map(|g| mu.iter().zip(g).map(|(m, x)| m + s * x).collect())
                        .collect()
                })
                .collect()
        })
        .collect();
    let report = bias_variance_decompose(&reps, &grid, 64).unwrap();
    assert!(
        (report.variance_slope + 1.0).abs() < 0.1,
        "slope {}",
        report.variance_slope
    );
    assert!(bias_variance_decompose(&reps, &grid, 32).is_err());
    assert!(bias_variance_decompose(&reps[1..], &grid[1..], 64).is_err());
}

#[test]
fn stats_helpers() {
    let (slope, icpt) = ols(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
    assert!((slope - 2.0).abs() < 1e-14 && (icpt - 1.0).abs() < 1e-14);
    let xs = [1.0, 2.0, 4.0, 8.0];
    let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 / x).collect();
    assert!((loglog_slope(&xs, &ys).unwrap() + 1.0).abs() < 1e-12);

    let data = [1.0, 4.0, 2.0, 8.0, 5.0];
    let mut m = Moments::default();
    data.iter().for_each(|&x| m.push(x));
    let mean = data.iter().sum::<f64>() / 5.0;
    let var = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
    assert!((m.mean() - mean).abs() < 1e-14 && (m.variance() - var).abs() < 1e-12);

    assert_eq!(
        bootstrap_mean_ci(&[2.0; 10], 100, 0.95, 1).unwrap(),
        (2.0, 2.0)
    );
    let (lo, hi) = bootstrap_mean_ci(&data, 2000, 0.95, 1).unwrap();
    assert!(lo < mean && mean < hi);
    assert!(bootstrap_mean_ci(&[], 10, 0.95, 1).is_err());
}
