use gcon::noise::{sample_direction, sample_noise_matrix, sample_radius, stream_rng};
use statrs::distribution::{ChiSquared, ContinuousCDF, Gamma};

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn radius_follows_erlang_for_several_rates() {
    let n = 20_000;
    // 1% critical value of the one-sample KS test.
    let crit = 1.63 / (n as f64).sqrt();
    for (d, beta) in [(1usize, 0.3), (4, 1.0), (16, 5.0), (40, 0.05)] {
        let mut rng = stream_rng(2024 + d as u64, 0);
        let xs: Vec<f64> = (0..n).map(|_| sample_radius(d, beta, &mut rng)).collect();
        let law = Gamma::new(d as f64, beta).unwrap();
        let ks = ks_statistic(xs, |x| law.cdf(x));
        assert!(ks < crit, "d={d} beta={beta}: KS {ks} >= {crit}");
    }
}

#[test]
fn planar_directions_are_uniform_in_angle() {
    let bins = 36;
    let n = 36_000;
    let mut counts = vec![0usize; bins];
    let mut rng = stream_rng(7, 0);
    for _ in 0..n {
        let v = sample_direction(2, &mut rng);
        assert!((v.norm() - 1.0).abs() < 1e-12);
        let theta = v[1].atan2(v[0]) + std::f64::consts::PI;
        let k = ((theta / (2.0 * std::f64::consts::PI)) * bins as f64) as usize;
        counts[k.min(bins - 1)] += 1;
    }
    let expected = n as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 1e-3, "chi-square {chi2}, p = {p}");
}

#[test]
fn column_radii_are_uncorrelated() {
    let trials = 4000;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for seed in 0..trials {
        let m = sample_noise_matrix(5, 2, Some(1.5), seed, 1);
        a.push(m.radii[0]);
        b.push(m.radii[1]);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&a), mean(&b));
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    let r = cov / (va * vb).sqrt();
    // |r| below 4 standard errors
    assert!(r.abs() < 4.0 / (trials as f64).sqrt(), "correlation {r}");
}

#[test]
fn noise_matrix_is_reproducible_and_stream_separated() {
    let a = sample_noise_matrix(6, 3, Some(0.7), 99, 1);
    let b = sample_noise_matrix(6, 3, Some(0.7), 99, 1);
    let c = sample_noise_matrix(6, 3, Some(0.7), 99, 2);
    assert_eq!(a, b);
    assert_ne!(a.b, c.b);
    let zero = sample_noise_matrix(6, 3, None, 99, 1);
    assert!(zero.b.iter().all(|&v| v == 0.0));
    for (j, r) in a.radii.iter().enumerate() {
        assert!((a.b.column(j).norm() - r).abs() < 1e-12 * r.max(1.0));
    }
}
