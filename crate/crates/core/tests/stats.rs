use std::collections::BTreeMap;

use orthograd::rng::{stream, Stream};
use orthograd::stats::{
    aggregate, compare, compare_sets, comparison_csv, comparison_markdown, ln_gamma, students_t_cdf,
    SeedMetricSet, TABLE_ROWS,
};
use proptest::prelude::*;
use rand::Rng as _;
use statrs::distribution::{ContinuousCDF, StudentsT};

// mpmath at 40 digits: pooled-SD d, d -/+ 1.96 SE, and the two-sided Welch
// p-value by direct quadrature of the t density.
const D_REF: f64 = -0.632_455_532_033_675_866_4;
const CI_LO_REF: f64 = -1.902_680_708_921_616_471_7;
const CI_HI_REF: f64 = 0.637_769_644_854_264_738_9;
const P_REF: f64 = 0.346_593_507_087_334_247_8;

#[test]
fn fixed_vectors_match_high_precision_oracle() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [2.0, 3.0, 4.0, 5.0, 6.0];
    let c = compare(&a, &b).unwrap();
    assert!((c.effect_size - D_REF).abs() <= 1e-9);
    assert!((c.p_value - P_REF).abs() <= 1e-9);
    assert!((c.ci_lo - CI_LO_REF).abs() <= 1e-9);
    assert!((c.ci_hi - CI_HI_REF).abs() <= 1e-9);
    assert_eq!(c.t_stat, -1.0);
    assert!((c.df - 8.0).abs() <= 1e-12);
    assert!(!c.degenerate);
}

#[test]
fn zero_spread_groups() {
    let c = compare(&[0.0; 4], &[1.0; 4]).unwrap();
    assert!(c.degenerate);
    assert_eq!(c.effect_size, f64::NEG_INFINITY);
    let c = compare(&[2.0; 3], &[2.0; 3]).unwrap();
    assert_eq!((c.effect_size, c.p_value, c.degenerate), (0.0, 1.0, false));
}

/// Composite Simpson integral of the t density from 0 to |t|.
fn simpson_cdf(t: f64, df: f64) -> f64 {
    let log_norm = statrs::function::gamma::ln_gamma((df + 1.0) / 2.0)
        - statrs::function::gamma::ln_gamma(df / 2.0)
        - 0.5 * (df * std::f64::consts::PI).ln();
    let pdf = |x: f64| (log_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let n = 20_000;
    let h = t.abs() / n as f64;
    let mut s = pdf(0.0) + pdf(t.abs());
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(i as f64 * h);
    }
    let half = s * h / 3.0;
    if t >= 0.0 { 0.5 + half } else { 0.5 - half }
}

#[test]
fn cdf_matches_numeric_integration() {
    for &df in &[1.0, 2.5, 5.0, 10.0, 30.0, 100.0] {
        for &t in &[-5.0, -2.0, -0.5, 0.1, 1.0, 2.0, 3.0, 5.0] {
            let got = students_t_cdf(t, df);
            let want = simpson_cdf(t, df);
            assert!((got - want).abs() < 1e-10, "t={t} df={df}: {got} vs {want}");
        }
    }
}

#[test]
fn cdf_agrees_with_statrs() {
    // statrs drifts by ~1e-10 at very large df; that range is covered below
    for &df in &[0.5, 1.0, 3.0, 8.0, 19.7, 250.0] {
        let dist = StudentsT::new(0.0, 1.0, df).unwrap();
        for &t in &[-40.0, -3.3, -1.0, -0.01, 0.7, 1.96, 4.0, 12.0] {
            let got = students_t_cdf(t, df);
            assert!((got - dist.cdf(t)).abs() < 1e-10, "t={t} df={df}");
        }
    }
    for &x in &[0.1, 0.5, 1.0, 2.5, 10.0, 171.3] {
        let want = statrs::function::gamma::ln_gamma(x);
        assert!((ln_gamma(x) - want).abs() <= 1e-12 * want.abs().max(1.0));
    }
}

#[test]
fn cdf_at_large_df_matches_scipy() {
    // scipy.stats.t.cdf(t, 1e5)
    let refs = [
        (-3.3, 0.000_483_593_131_163_570_93),
        (-0.01, 0.496_010_653_659_411_55),
        (0.7, 0.758_035_533_576_338_9),
        (1.96, 0.975_000_718_402_849_2),
    ];
    for (t, want) in refs {
        assert!((students_t_cdf(t, 1e5) - want).abs() < 1e-12, "t={t}");
    }
}

#[test]
fn cdf_normal_limit() {
    assert!((students_t_cdf(1.96, 1e7) - 0.975).abs() < 1e-3);
    assert_eq!(students_t_cdf(0.0, 3.0), 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn swap_negates_effect_size(
        a in prop::collection::vec(-1e3f64..1e3, 2..30),
        b in prop::collection::vec(-1e3f64..1e3, 2..30),
    ) {
        let ab = compare(&a, &b).unwrap();
        let ba = compare(&b, &a).unwrap();
        prop_assert_eq!(ab.effect_size, -ba.effect_size);
        prop_assert_eq!(ab.p_value, ba.p_value);
    }

    #[test]
    fn affine_maps_preserve_d_and_p(
        a in prop::collection::vec(-100.0f64..100.0, 2..30),
        b in prop::collection::vec(-100.0f64..100.0, 2..30),
        alpha in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0],
        beta in -100.0f64..100.0,
    ) {
        let base = compare(&a, &b).unwrap();
        let map = |v: &[f64]| v.iter().map(|x| alpha * x + beta).collect::<Vec<_>>();
        let moved = compare(&map(&a), &map(&b)).unwrap();
        let want_d = base.effect_size * alpha.signum();
        prop_assert!((moved.effect_size - want_d).abs() <= 1e-9 * want_d.abs().max(1.0));
        prop_assert!((moved.p_value - base.p_value).abs() <= 1e-9 * base.p_value + 1e-15);
    }

    #[test]
    fn cdf_is_symmetric_and_monotone(t in 0.0f64..50.0, dt in 1e-6f64..5.0, df in 0.2f64..500.0) {
        let f = students_t_cdf(t, df);
        prop_assert!((f + students_t_cdf(-t, df) - 1.0).abs() <= 1e-10);
        prop_assert!(students_t_cdf(t + dt, df) >= f);
    }
}

fn neumaier_sum(x: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &v in x {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

fn random_sets(n: usize, seed: u64) -> Vec<SeedMetricSet> {
    let mut rng = stream(seed, Stream::Probe);
    (0..n as u64)
        .map(|s| SeedMetricSet {
            seed: s,
            metrics: TABLE_ROWS.iter().map(|(k, _)| (k.to_string(), rng.random_range(-5.0..5.0))).collect(),
        })
        .collect()
}

#[test]
fn aggregate_matches_compensated_oracle() {
    let sets = random_sets(20, 3);
    let summary = aggregate(&sets).unwrap();
    let keys: Vec<&str> = TABLE_ROWS.iter().map(|(k, _)| *k).collect();
    assert_eq!(summary.iter().map(|s| s.metric.as_str()).collect::<Vec<_>>(), keys);
    for row in &summary {
        let v: Vec<f64> = sets.iter().map(|s| s.metrics[&row.metric]).collect();
        let m = neumaier_sum(&v) / v.len() as f64;
        let dev: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
        let sd = (neumaier_sum(&dev) / (v.len() - 1) as f64).sqrt();
        assert!((row.mean - m).abs() <= 1e-12 * m.abs().max(1.0));
        assert!((row.sd.unwrap() - sd).abs() <= 1e-12 * sd.max(1.0));
    }
}

#[test]
fn aggregate_edge_cases() {
    let one = |x: f64, seed| SeedMetricSet { seed, metrics: BTreeMap::from([("nll".to_string(), x)]) };
    let s = aggregate(&[one(2.5, 0)]).unwrap();
    assert_eq!((s[0].mean, s[0].sd), (2.5, None));
    let s = aggregate(&[one(3.0 - 0.25, 0), one(3.0 + 0.25, 1)]).unwrap();
    assert_eq!(s[0].mean, 3.0);
    let mut bad = one(1.0, 1);
    bad.metrics.insert("ece".into(), 0.1);
    assert!(aggregate(&[one(1.0, 0), bad]).is_err());
}

#[test]
fn compare_sets_against_itself_is_null() {
    let sets = random_sets(5, 9);
    let rows = compare_sets(&sets, &sets).unwrap();
    assert_eq!(rows.len(), 9);
    for r in &rows {
        assert_eq!((r.effect_size, r.p_value), (0.0, 1.0));
    }
    let md = comparison_markdown(&rows, "SGD", "perp");
    assert_eq!(md.lines().count(), 11);
    assert!(md.contains("Brier Score") && md.contains("Logit Variance"));
    assert_eq!(comparison_csv(&rows).lines().count(), 10);

    let mut other = random_sets(5, 10);
    other[0].seed = 99;
    assert!(compare_sets(&sets, &other).is_err());
}
