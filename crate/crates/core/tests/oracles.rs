//! Deterministic checks against independent reference computations.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use robust_sm::estimator::{irrep_diagnostics, regularized_robust_sm, robust_sm, EstimatorConfig, Penalty};
use robust_sm::evaluation::{average_roc, forbidden_edge_fdr, unit_grid, BandConfig, RocCurve};
use robust_sm::gmom::{gmom, gmom_stats, GmomConfig, RemainderPolicy};
use robust_sm::ingest::{fit, load_csv, FitConfig, LoadOptions};
use robust_sm::linalg::{norm2, norm_inf, Matrix};
use robust_sm::models::{sample_gaussian, sample_sqr_gibbs, GibbsConfig, PairwiseModel};
use robust_sm::scorestats::{empirical_moments, score_stats_all, sm_objective};
use robust_sm::simulate::{random_model, sample_model};
use robust_sm::{Family, Support};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn column_mean(x: &Matrix<f64>, j: usize) -> f64 {
    x.column(j).iter().sum::<f64>() / x.rows() as f64
}

/// Midpoint rule for `∫₀^upper f`.
fn integrate(f: impl Fn(f64) -> f64, upper: f64, steps: usize) -> f64 {
    let h = upper / steps as f64;
    (0..steps).map(|i| f((i as f64 + 0.5) * h)).sum::<f64>() * h
}

#[test]
fn gaussian_sampler_moments() {
    let model = PairwiseModel::gaussian(Matrix::identity(3), vec![0.0; 3]).unwrap();
    let n = 100_000;
    let x = sample_gaussian(&model, n, &mut rng(1)).unwrap();
    for a in 0..3 {
        assert!(column_mean(&x, a).abs() < 0.02);
        for b in 0..3 {
            let cov = (0..n).map(|i| x[(i, a)] * x[(i, b)]).sum::<f64>() / n as f64;
            let target = if a == b { 1.0 } else { 0.0 };
            assert!((cov - target).abs() < 0.05, "cov[{a}][{b}] = {cov}");
        }
    }
}

/// Mean and standard deviation of the one-dimensional square-root law
/// with density proportional to `exp(−a x + 2 c √x)`.
fn sqr_1d_moments(a: f64, c: f64) -> (f64, f64) {
    let dens = |x: f64| (-a * x + 2.0 * c * x.sqrt()).exp();
    let z = integrate(dens, 50.0, 200_000);
    let m1 = integrate(|x| x * dens(x), 50.0, 200_000) / z;
    let m2 = integrate(|x| x * x * dens(x), 50.0, 200_000) / z;
    (m1, (m2 - m1 * m1).sqrt())
}

#[test]
fn square_root_one_dimensional_mean() {
    let model = PairwiseModel::square_root(Matrix::identity(1), vec![1.0], 1.5).unwrap();
    let n = 100_000;
    let x = sample_sqr_gibbs(&model, n, GibbsConfig::default(), &mut rng(2)).unwrap();
    let (mean, sd) = sqr_1d_moments(1.0, 1.0);
    let se = sd / (n as f64).sqrt();
    assert!((column_mean(&x, 0) - mean).abs() < 3.0 * se, "{} vs {mean}", column_mean(&x, 0));
}

#[test]
fn independent_square_root_marginals() {
    let theta = Matrix::from_diag(&[1.0, 2.0, 0.5]);
    let eta = vec![0.5, -0.5, 0.0];
    let model = PairwiseModel::square_root(theta, eta.clone(), 1.5).unwrap();
    let n = 60_000;
    let x = sample_sqr_gibbs(&model, n, GibbsConfig::default(), &mut rng(3)).unwrap();
    for (j, (a, c)) in [(1.0, 0.5), (2.0, -0.5), (0.5, 0.0)].into_iter().enumerate() {
        let (mean, sd) = sqr_1d_moments(a, c);
        let se = sd / (n as f64).sqrt();
        assert!((column_mean(&x, j) - mean).abs() < 3.0 * se, "coordinate {j}");
    }
}

#[test]
fn samplers_are_reproducible() {
    let mut r = rng(4);
    for family in [Family::Gaussian, Family::SquareRoot] {
        let model = random_model::<f64, _>(4, 3, family, &mut r).unwrap();
        let a = sample_model(&model, 200, GibbsConfig::default(), &mut rng(9)).unwrap();
        let b = sample_model(&model, 200, GibbsConfig::default(), &mut rng(9)).unwrap();
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}

#[test]
fn gmom_concentrates_on_normal_data() {
    let mut r = rng(5);
    let pts: Vec<Vec<f64>> = (0..100).map(|_| (0..10).map(|_| r.sample::<f64, _>(StandardNormal)).collect()).collect();
    let g = gmom(&pts, &GmomConfig::new(10)).unwrap();
    assert!(norm2(&g) < 3.0 * (10.0f64 / 100.0).sqrt());
}

#[test]
fn gmom_gamma_resists_junk_statistics() {
    let mut r = rng(6);
    let model = random_model::<f64, _>(3, 2, Family::Gaussian, &mut r).unwrap();
    let reference = empirical_moments(&model, &sample_gaussian(&model, 200_000, &mut r).unwrap()).unwrap().gamma;
    let x = sample_gaussian(&model, 600, &mut r).unwrap();
    let clean = score_stats_all(&model, &x).unwrap();
    let rdim = model.n_params();
    let mut dirty = clean.clone();
    // 5% of the statistics, in consecutive rows
    for s in dirty.iter_mut().take(30) {
        let v: Vec<f64> = (0..rdim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        for a in 0..rdim {
            for b in 0..rdim {
                s.gamma[(a, b)] = 1e6 * v[a] * v[b];
            }
        }
        s.g = v.iter().map(|t| 1e6 * t).collect();
    }
    let err = |stats: &[robust_sm::ScoreStats], k: usize| {
        let mut d = gmom_stats(stats, &GmomConfig::new(k)).unwrap().gamma;
        d.add_assign_scaled(&reference, -1.0);
        d.frobenius_norm()
    };
    let base = err(&clean, 30);
    assert!(err(&dirty, 30) <= 5.0 * base, "{} vs {base}", err(&dirty, 30));
    assert!(err(&dirty, 1) > 1e3 * base);
}

#[test]
fn unpenalized_estimator_is_consistent() {
    let mut r = rng(7);
    let model = random_model::<f64, _>(5, 4, Family::Gaussian, &mut r).unwrap();
    let x = sample_gaussian(&model, 10_000, &mut r).unwrap();
    let stats = empirical_moments(&model, &x).unwrap();
    let est = robust_sm(&stats.gamma, &stats.g).unwrap();
    let err = est.theta_hat.iter().zip(model.params()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 0.15, "max error {err}");
}

/// Proximal gradient descent run far past convergence.
fn ista(gamma: &Matrix<f64>, g: &[f64], lambda: f64) -> Vec<f64> {
    let r = g.len();
    let lipschitz = (0..r).map(|i| gamma.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / lipschitz;
    let mut th = vec![0.0; r];
    for _ in 0..200_000 {
        let grad: Vec<f64> = (0..r).map(|i| (0..r).map(|j| gamma[(i, j)] * th[j]).sum::<f64>() - g[i]).collect();
        for i in 0..r {
            let z = th[i] - step * grad[i];
            th[i] = z.signum() * (z.abs() - step * lambda).max(0.0);
        }
    }
    th
}

#[test]
fn coordinate_descent_matches_proximal_reference() {
    let mut r = rng(8);
    let dim = 12;
    let a = Matrix::from_row_major(dim, dim, (0..dim * dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect());
    let mut gamma = a.transpose().matmul(&a);
    gamma.scale(1.0 / dim as f64);
    for i in 0..dim {
        gamma[(i, i)] += 0.3;
    }
    let g: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let cfg = EstimatorConfig { lambda: 0.3, cd_tol: 1e-12, ..Default::default() };
    let cd = regularized_robust_sm(&gamma, &g, &cfg).unwrap();
    let reference = ista(&gamma, &g, 0.3);
    let f_ref = sm_objective(&reference, &gamma, &g, 0.3);
    assert!((cd.objective - f_ref).abs() < 1e-8, "{} vs {f_ref}", cd.objective);
}

/// Gauss-Jordan inverse, written out independently of the library.
fn gauss_jordan(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.iter().enumerate().map(|(i, row)| {
        let mut r = row.clone();
        r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
        r
    }).collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| m[x][c].abs().partial_cmp(&m[y][c].abs()).unwrap()).unwrap();
        m.swap(c, piv);
        let d = m[c][c];
        m[c].iter_mut().for_each(|v| *v /= d);
        for row in 0..n {
            if row != c {
                let f = m[row][c];
                let pivot_row = m[c].clone();
                m[row].iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn max_row_sum(rows: &[Vec<f64>]) -> f64 {
    rows.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

#[test]
fn irrepresentability_matches_naive_reference() {
    let mut r = rng(10);
    for _ in 0..5 {
        let m = 4;
        let model = random_model::<f64, _>(m, 3, Family::Gaussian, &mut r).unwrap();
        let x = sample_gaussian(&model, 2000, &mut r).unwrap();
        let gamma0 = empirical_moments(&model, &x).unwrap().gamma;
        let theta0 = model.params();
        let d = irrep_diagnostics(&gamma0, &theta0).unwrap();

        let s: Vec<usize> = (0..theta0.len()).filter(|&i| theta0[i] != 0.0).collect();
        let sc: Vec<usize> = (0..theta0.len()).filter(|&i| theta0[i] == 0.0).collect();
        let gss: Vec<Vec<f64>> = s.iter().map(|&a| s.iter().map(|&b| gamma0[(a, b)]).collect()).collect();
        let inv = gauss_jordan(&gss);
        let prod: Vec<Vec<f64>> = sc
            .iter()
            .map(|&a| (0..s.len()).map(|c| (0..s.len()).map(|k| gamma0[(a, s[k])] * inv[k][c]).sum()).collect())
            .collect();
        let i_s0 = max_row_sum(&prod);
        assert!((d.c_gamma0 - max_row_sum(&inv)).abs() < 1e-10 * d.c_gamma0.max(1.0));
        assert!((d.i_s0 - i_s0).abs() < 1e-10 * i_s0.max(1.0));
        assert!((d.alpha - (1.0 - i_s0)).abs() < 1e-10);
        let rows: Vec<Vec<f64>> = (0..m).map(|i| model.theta().row(i).to_vec()).collect();
        assert!((d.c_theta0 - max_row_sum(&rows)).abs() < 1e-12);
        let degree = (0..m)
            .map(|j| (0..m).filter(|&i| model.theta()[(i, j)] != 0.0).count() + usize::from(model.eta()[j] != 0.0))
            .max()
            .unwrap();
        assert_eq!(d.d_theta0, degree);
    }
}

#[test]
fn support_stays_inside_truth_under_irrepresentability() {
    // chain graph with strong diagonal and η = 0
    let m = 4;
    let mut theta = Matrix::identity(m);
    for i in 0..m - 1 {
        theta[(i, i + 1)] = 0.2;
        theta[(i + 1, i)] = 0.2;
    }
    let model = PairwiseModel::gaussian(theta, vec![0.0; m]).unwrap();
    let mut r = rng(11);
    let big = sample_gaussian(&model, 200_000, &mut r).unwrap();
    let gamma0 = empirical_moments(&model, &big).unwrap().gamma;
    let diag = irrep_diagnostics(&gamma0, &model.params()).unwrap();
    assert!(diag.alpha >= 0.5, "alpha = {}", diag.alpha);

    let truth: HashSet<usize> = (0..model.n_params()).filter(|&i| model.params()[i] != 0.0).collect();
    let n = 2000;
    let theta0 = model.params();
    let mut inside = 0;
    let mut nonempty = 0;
    for _ in 0..100 {
        let x = sample_gaussian(&model, n, &mut r).unwrap();
        let stats = empirical_moments(&model, &x).unwrap();
        // primal-dual witness: λ above (2 - α)/α times the gradient at the truth
        let alpha = irrep_diagnostics(&stats.gamma, &theta0).unwrap().alpha;
        assert!(alpha > 0.0, "sample alpha {alpha}");
        let w: Vec<f64> = stats.gamma.mul_vec(&theta0).iter().zip(&stats.g).map(|(a, b)| a - b).collect();
        let lambda = 1.05 * (2.0 - alpha) / alpha * norm_inf(&w);
        let cfg = EstimatorConfig { lambda, penalty: Penalty::All, ..Default::default() };
        let est = regularized_robust_sm(&stats.gamma, &stats.g, &cfg).unwrap();
        inside += usize::from(est.support.iter().all(|i| truth.contains(i)));
        nonempty += usize::from(!est.support.is_empty());
    }
    assert_eq!(nonempty, 100);
    assert_eq!(inside, 100);
}

#[test]
fn random_graphs_are_uniform() {
    let mut r = rng(12);
    let mut counts: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
    let draws = 10_000;
    for _ in 0..draws {
        let model = random_model::<f64, _>(4, 2, Family::Gaussian, &mut r).unwrap();
        let mut edges = Vec::new();
        for i in 0..4 {
            for j in (i + 1)..4 {
                if model.theta()[(i, j)] != 0.0 {
                    edges.push((i, j));
                }
            }
        }
        *counts.entry(edges).or_default() += 1;
    }
    assert_eq!(counts.len(), 15);
    for (g, c) in counts {
        let f = c as f64 / draws as f64;
        assert!((f - 1.0 / 15.0).abs() < 0.02, "{g:?}: {f}");
    }
}

#[test]
fn random_graph_fdr_matches_forbidden_share() {
    // two regions of 15 nodes; edges between regions are forbidden
    let m = 30;
    let forbidden: HashSet<(usize, usize)> =
        (0..m).flat_map(|i| ((i + 1)..m).map(move |j| (i, j))).filter(|&(i, j)| (i < 15) != (j < 15)).collect();
    let share = forbidden.len() as f64 / (m * (m - 1) / 2) as f64;
    let mut r = rng(13);
    let mut total = 0.0;
    let reps = 2000;
    for _ in 0..reps {
        let model = random_model::<f64, _>(m, 45, Family::Gaussian, &mut r).unwrap();
        let edges: Vec<(usize, usize)> =
            (0..m).flat_map(|i| ((i + 1)..m).map(move |j| (i, j))).filter(|&(i, j)| model.theta()[(i, j)] != 0.0).collect();
        total += forbidden_edge_fdr(&edges, &forbidden);
    }
    assert!((total / reps as f64 - share).abs() < 0.01);
}

#[test]
fn band_width_shrinks_with_curve_count() {
    let mut r = rng(14);
    let curve = |r: &mut ChaCha8Rng| {
        let shift = 0.1 * r.sample::<f64, _>(StandardNormal);
        let pts: Vec<(f64, f64)> = unit_grid(11).iter().map(|&f| (f, (f.sqrt() + shift).clamp(0.0, 1.0))).collect();
        RocCurve::from_points(&pts).unwrap()
    };
    let grid = unit_grid(11);
    let mean_width = |curves: &[RocCurve]| {
        let avg = average_roc(curves, &grid, BandConfig { level: 0.95, resamples: 2000, seed: 3 }).unwrap();
        (3..8).map(|i| avg.tpr_hi[i] - avg.tpr_lo[i]).sum::<f64>() / 5.0
    };
    let (mut few, mut many) = (0.0, 0.0);
    for _ in 0..20 {
        let a: Vec<RocCurve> = (0..25).map(|_| curve(&mut r)).collect();
        let b: Vec<RocCurve> = (0..100).map(|_| curve(&mut r)).collect();
        few += mean_width(&a);
        many += mean_width(&b);
    }
    let ratio = few / many;
    assert!((1.6..2.5).contains(&ratio), "ratio {ratio}");
}

fn dataset_file(x: &Matrix<f64>) -> tempfile::NamedTempFile {
    let f = tempfile::NamedTempFile::new().unwrap();
    let mut w = csv::Writer::from_path(f.path()).unwrap();
    w.write_record((0..x.cols()).map(|j| format!("s{j}"))).unwrap();
    for i in 0..x.rows() {
        w.write_record(x.row(i).iter().map(|v| v.to_string())).unwrap();
    }
    w.flush().unwrap();
    f
}

#[test]
fn fit_hits_target_edge_count() {
    let mut r = rng(15);
    let model = random_model::<f64, _>(10, 8, Family::SquareRoot, &mut r).unwrap();
    let x = sample_model(&model, 3000, GibbsConfig::default(), &mut r).unwrap();
    let file = dataset_file(&x);
    let data = load_csv(file.path(), Support::NonNegOrthant, LoadOptions::default()).unwrap();
    let cfg = FitConfig {
        family: Family::SquareRoot,
        weight_exponent: 1.5,
        estimator: EstimatorConfig { penalty: Penalty::OffDiagonal, ..Default::default() },
        remainder: RemainderPolicy::FoldIntoLast,
        target_edges: Some(8),
    };
    let res = fit(&data, &cfg).unwrap();
    assert_eq!(res.n_edges, 8);
    let again = fit(&data, &cfg).unwrap();
    assert_eq!(again.lambda, res.lambda);
    assert_eq!(again.edge_index, res.edge_index);

    let empty = fit(&data, &FitConfig { target_edges: Some(0), ..cfg }).unwrap();
    assert_eq!(empty.n_edges, 0);

    // edge count does not grow with λ
    let mut last = usize::MAX;
    for i in 0..25 {
        let lambda = res.lambda * 4f64.powf(i as f64 / 6.0 - 2.0);
        let est = EstimatorConfig { lambda, ..cfg.estimator };
        let n = fit(&data, &FitConfig { estimator: est, target_edges: None, ..cfg }).unwrap().n_edges;
        assert!(n <= last.saturating_add(1), "lambda {lambda}: {n} after {last}");
        last = n;
    }
    assert!(norm_inf(&res.estimate.theta_hat) > 0.0);
}
