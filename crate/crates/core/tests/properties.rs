use approx::assert_relative_eq;
use fpweak::data::{read_snapshots, write_snapshots, DomainConfig, Source};
use fpweak::kde::estimate_density;
use fpweak::regression::{default_lambdas, mstls, mstls_from, mstls_sweep, robust_standard_errors, LeastSquares};
use fpweak::stats::{bootstrap_frames, covariance_rate, TimeWeighting};
use fpweak::{Mat2, SnapshotSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((20.0..155.0f64, 20.0..155.0f64).prop_map(|(x, y)| [x, y]), n)
}

fn source() -> Source {
    Source {
        plot_id: "p".into(),
        replicate_id: "r".into(),
    }
}

/// Random system with planted weights of magnitude 0.5..2 on about a third
/// of the columns, plus `noise` in `b`.
fn system(seed: u64, rows: usize, cols: usize, noise: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: Vec<Vec<f64>> = (0..cols)
        .map(|_| (0..rows).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut w: Vec<f64> = (0..cols)
        .map(|_| if rng.random_bool(0.3) { rng.random_range(0.5..2.0) } else { 0.0 })
        .collect();
    w[0] = -1.0;
    let b = (0..rows)
        .map(|i| (0..cols).map(|j| g[j][i] * w[j]).sum::<f64>() + noise * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (g, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kde_is_linear_in_the_empirical_measure(a in points(1..20), b in points(1..20)) {
        let grid = DomainConfig::default().grid(0.0, 1.0).unwrap();
        let cov = Mat2::symmetric(60.0, 8.0, 45.0);
        let h = 0.4;
        let fa = estimate_density(&a, cov, h, &grid).unwrap();
        let fb = estimate_density(&b, cov, h, &grid).unwrap();
        let all: Vec<[f64; 2]> = a.iter().chain(&b).copied().collect();
        let fab = estimate_density(&all, cov, h, &grid).unwrap();
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let mix = (fa * na + fb * nb) / (na + nb);
        let scale = fab.iter().fold(0.0f64, |m, v| m.max(*v));
        for (x, y) in fab.iter().zip(&mix) {
            prop_assert!((x - y).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn covariance_rate_ignores_offsets(
        frames in prop::collection::vec(points(3..15), 3),
        dx in -15.0..15.0f64,
        dy in -15.0..15.0f64,
    ) {
        let timed: Vec<(f64, Vec<[f64; 2]>)> = frames.into_iter().zip([0.0, 1.0, 4.0]).map(|(p, t)| (t, p)).collect();
        let set = SnapshotSet::from_positions(DomainConfig::default(), source(), timed).unwrap();
        let moved = set.map_positions(|[x, y]| [x + dx, y + dy]).unwrap();
        let a = covariance_rate(&set, TimeWeighting::Uniform).unwrap().d;
        let b = covariance_rate(&moved, TimeWeighting::Uniform).unwrap().d;
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            prop_assert!((a.get(i, j) - b.get(i, j)).abs() <= 1e-9 * (1.0 + a.get(i, j).abs()));
        }
    }

    #[test]
    fn csv_round_trip_preserves_snapshots(frames in prop::collection::vec(points(1..10), 1..4)) {
        let timed: Vec<(f64, Vec<[f64; 2]>)> = frames.into_iter().enumerate().map(|(k, p)| (k as f64 * 2.0, p)).collect();
        let set = SnapshotSet::from_positions(DomainConfig::default(), source(), timed).unwrap();
        let mut buf = Vec::new();
        write_snapshots(&set, &mut buf).unwrap();
        let (back, report) = read_snapshots(buf.as_slice(), &DomainConfig::default()).unwrap();
        prop_assert_eq!(report.dropped_missing, 0);
        prop_assert_eq!(back, set);
    }

    // The bracket also bounds |w_j| by [λ, 1/λ] in absolute terms, so
    // equivariance only holds while no weight approaches those limits.
    #[test]
    fn mstls_is_scale_equivariant_on_sparse_systems(seed in 0u64..1000, c in 0.5..2.0f64, lambda in 1e-3..0.2f64) {
        let (g, b) = system(seed, 60, 8, 0.0);
        let fit = mstls(&LeastSquares::from_columns(&g, &b).unwrap(), lambda).unwrap();
        let cb: Vec<f64> = b.iter().map(|v| c * v).collect();
        let scaled = mstls(&LeastSquares::from_columns(&g, &cb).unwrap(), lambda).unwrap();
        prop_assert_eq!(&scaled.support, &fit.support);
        for (w, s) in fit.weights.iter().zip(&scaled.weights) {
            prop_assert!((c * w - s).abs() <= 1e-9 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn mstls_output_is_a_fixed_point(seed in 0u64..1000, lambda in 1e-3..0.5f64) {
        let (g, b) = system(seed, 60, 8, 0.3);
        let ls = LeastSquares::from_columns(&g, &b).unwrap();
        let fit = mstls(&ls, lambda).unwrap();
        let again = mstls_from(&ls, lambda, &fit.support).unwrap();
        prop_assert_eq!(again.support, fit.support);
        prop_assert_eq!(again.weights, fit.weights);
    }

    #[test]
    fn sweep_support_never_grows(seed in 0u64..1000) {
        let (g, b) = system(seed, 80, 12, 0.3);
        let ls = LeastSquares::from_columns(&g, &b).unwrap();
        let sweep = mstls_sweep(&ls, &default_lambdas()).unwrap();
        for w in sweep.path.windows(2) {
            prop_assert!(w[1].support_size <= w[0].support_size);
        }
    }
}

#[test]
fn kde_sample_covariance_matches_the_kernel_plus_data() {
    // Second moments of a KDE frame = data covariance + kernel covariance.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<[f64; 2]> = (0..400)
        .map(|_| {
            let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            [87.5 + 8.0 * a, 87.5 + 5.0 * a + 6.0 * b]
        })
        .collect();
    let domain = DomainConfig {
        grid_nx: 176,
        grid_ny: 176,
        ..Default::default()
    };
    let grid = domain.grid(0.0, 1.0).unwrap();
    let cov = Mat2::symmetric(40.0, 5.0, 30.0);
    let h = 0.5;
    let f = estimate_density(&pts, cov, h, &grid).unwrap();
    let n = pts.len() as f64;
    let mean = pts.iter().fold([0.0, 0.0], |m, p| [m[0] + p[0] / n, m[1] + p[1] / n]);
    let mut data = [0.0; 3];
    for p in &pts {
        let (u, v) = (p[0] - mean[0], p[1] - mean[1]);
        data[0] += u * u / n;
        data[1] += u * v / n;
        data[2] += v * v / n;
    }
    let (dx, dy) = (grid.x.step, grid.y.step);
    let mut moments = [0.0; 3];
    for i in 0..grid.x.len {
        for j in 0..grid.y.len {
            let (u, v) = (grid.x.node(i) - mean[0], grid.y.node(j) - mean[1]);
            let w = f[[i, j]] * dx * dy;
            moments[0] += u * u * w;
            moments[1] += u * v * w;
            moments[2] += v * v * w;
        }
    }
    let kernel = cov.scale(h * h);
    assert_relative_eq!(moments[0], data[0] + kernel.get(0, 0), max_relative = 1e-3);
    assert_relative_eq!(moments[1], data[1] + kernel.get(0, 1), max_relative = 1e-3);
    assert_relative_eq!(moments[2], data[2] + kernel.get(1, 1), max_relative = 1e-3);
}

#[test]
fn bootstrap_error_of_a_mean_follows_the_clt() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 500;
    let xs: Vec<f64> = (0..n).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let m = xs.iter().sum::<f64>() / n as f64;
    let s = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
    let mean = |f: &[Vec<f64>]| Ok(f[0].iter().sum::<f64>() / f[0].len() as f64);
    let boot = bootstrap_frames(&[xs], mean, 2000, 9).unwrap();
    assert_relative_eq!(boot.estimate, m, max_relative = 1e-12);
    assert_relative_eq!(boot.std_error, s / (n as f64).sqrt(), max_relative = 0.08);
    assert!(boot.interval.0 < m && m < boot.interval.1);
}

#[test]
fn sandwich_matches_classical_errors_under_homoskedastic_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (rows, sigma) = (20_000, 0.3);
    let g: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..rows).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let b: Vec<f64> = (0..rows)
        .map(|i| 1.5 * g[0][i] - 0.5 * g[1][i] + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let ls = LeastSquares::from_columns(&g, &b).unwrap();
    let w = ls.solve_subset(&[0, 1]).weights;
    let se = robust_standard_errors(&g, &b, &w, &[0, 1]).unwrap();
    // Classical: s² (GᵀG)⁻¹ with s² the residual variance.
    let s2 = ls.residual_norm2(&w) / (rows - 2) as f64;
    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    let gram = Mat2::symmetric(dot(&g[0], &g[0]), dot(&g[0], &g[1]), dot(&g[1], &g[1]));
    let inv = gram.inverse().unwrap();
    assert_relative_eq!(se[0], (s2 * inv.get(0, 0)).sqrt(), max_relative = 0.05);
    assert_relative_eq!(se[1], (s2 * inv.get(1, 1)).sqrt(), max_relative = 0.05);
}
