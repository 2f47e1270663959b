//! Multi-seed aggregation and two-sample comparisons.
//!
//! Effect sizes are Cohen's d with a pooled standard deviation, signed as
//! `(mean_a - mean_b) / s_pooled` where group `a` is the baseline. The 95%
//! interval on d uses the normal approximation
//! `SE(d) = sqrt((na + nb) / (na nb) + d^2 / (2 (na + nb)))`, and p-values come
//! from a two-sided Welch t-test.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric keys in the order the comparison table lists them, with labels.
pub const TABLE_ROWS: [(&str, &str); 9] = [
    ("top1_acc", "Top1 Accuracy"),
    ("top5_acc", "Top5 Accuracy"),
    ("nll", "Loss"),
    ("ece", "ECE"),
    ("brier", "Brier Score"),
    ("mean_entropy", "Entropy"),
    ("mean_max_softmax", "Max Softmax"),
    ("mean_max_logit", "Max Logit"),
    ("mean_logit_variance", "Logit Variance"),
];

pub const Z_95: f64 = 1.96;

/// Labels for metrics reported alongside the table rows.
pub const EXTRA_LABELS: [(&str, &str); 6] = [
    ("conf_acc_corr", "Conf-Acc Corr"),
    ("final_theta_norm", "Weight Norm"),
    ("t_star", "Temperature"),
    ("ts_nll", "Loss (TS)"),
    ("ts_ece", "ECE (TS)"),
    ("ts_brier", "Brier Score (TS)"),
];

/// Human label for a metric key; unknown keys label themselves.
pub fn metric_label(key: &str) -> &str {
    TABLE_ROWS
        .iter()
        .chain(&EXTRA_LABELS)
        .find(|(k, _)| *k == key)
        .map_or(key, |(_, l)| l)
}

fn row_rank(key: &str) -> usize {
    TABLE_ROWS.iter().position(|(k, _)| *k == key).unwrap_or(TABLE_ROWS.len())
}

/// Sorts metric keys into table order; keys outside the table follow alphabetically.
pub fn table_order<'a>(keys: impl IntoIterator<Item = &'a String>) -> Vec<String> {
    let mut v: Vec<String> = keys.into_iter().cloned().collect();
    v.sort_by(|a, b| row_rank(a).cmp(&row_rank(b)).then_with(|| a.cmp(b)));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetricSet {
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonStats {
    pub metric: String,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub sd_a: f64,
    pub sd_b: f64,
    pub effect_size: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub t_stat: f64,
    pub df: f64,
    pub p_value: f64,
    /// Both groups have zero spread but different means: d is infinite and
    /// the p-value is its limit, 0.
    pub degenerate: bool,
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with Bessel's correction.
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Cohen's d, its 95% interval and a Welch t-test for `a` against `b`.
pub fn compare(a: &[f64], b: &[f64]) -> Result<ComparisonStats> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Argument(format!(
            "comparison needs at least two values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Argument("comparison values must be finite".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a), sample_variance(b));
    let diff = ma - mb;
    let mut out = ComparisonStats {
        metric: String::new(),
        n_a: a.len(),
        n_b: b.len(),
        mean_a: ma,
        mean_b: mb,
        sd_a: va.sqrt(),
        sd_b: vb.sqrt(),
        effect_size: 0.0,
        ci_lo: 0.0,
        ci_hi: 0.0,
        t_stat: 0.0,
        df: na + nb - 2.0,
        p_value: 1.0,
        degenerate: false,
    };
    if va == 0.0 && vb == 0.0 {
        if diff != 0.0 {
            let inf = f64::INFINITY.copysign(diff);
            out.effect_size = inf;
            out.ci_lo = inf;
            out.ci_hi = inf;
            out.t_stat = inf;
            out.p_value = 0.0;
            out.degenerate = true;
        }
        return Ok(out);
    }
    let pooled = (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt();
    let d = diff / pooled;
    let se_d = ((na + nb) / (na * nb) + d * d / (2.0 * (na + nb))).sqrt();
    let (sa, sb) = (va / na, vb / nb);
    let se = (sa + sb).sqrt();
    let t = diff / se;
    let df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    out.effect_size = d;
    out.ci_lo = d - Z_95 * se_d;
    out.ci_hi = d + Z_95 * se_d;
    out.t_stat = t;
    out.df = df;
    out.p_value = two_sided_p(t, df);
    Ok(out)
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    let t2 = t * t;
    let x = df / (df + t2);
    let y = t2 / (df + t2);
    incomplete_beta_xy(x, y, df / 2.0, 0.5).clamp(0.0, 1.0)
}

/// Student's t cumulative distribution function.
pub fn students_t_cdf(t: f64, df: f64) -> f64 {
    assert!(df > 0.0, "degrees of freedom must be positive");
    if t == 0.0 {
        return 0.5;
    }
    let tail = 0.5 * two_sided_p(t, df);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn stirling_tail(z: f64) -> f64 {
    let z2 = z * z;
    1.0 / (12.0 * z) - 1.0 / (360.0 * z * z2) + 1.0 / (1260.0 * z * z2 * z2)
}

/// `ln Gamma(a + b) - ln Gamma(a)`, without cancellation when `a` is large.
fn ln_gamma_ratio(a: f64, b: f64) -> f64 {
    if a < 100.0 {
        return ln_gamma(a + b) - ln_gamma(a);
    }
    (a - 0.5) * (b / a).ln_1p() + b * (a + b).ln() - b + stirling_tail(a + b) - stirling_tail(a)
}

/// `ln B(a, b)`.
fn ln_beta(a: f64, b: f64) -> f64 {
    let (big, small) = if a >= b { (a, b) } else { (b, a) };
    ln_gamma(small) - ln_gamma_ratio(big, small)
}

/// `I_x(a, b)` via the modified Lentz continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    incomplete_beta_xy(x, 1.0 - x, a, b)
}

/// `I_x(a, b)` given both `x` and `y = 1 - x`, so callers near either end
/// can supply the small one exactly.
fn incomplete_beta_xy(x: f64, y: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * y.ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(y, b, a) / b
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..100_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; `None` for a single seed.
    pub sd: Option<f64>,
}

fn check_keys(sets: &[SeedMetricSet]) -> Result<BTreeSet<String>> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Argument("need at least one seed".into()))?;
    let keys: BTreeSet<String> = first.metrics.keys().cloned().collect();
    for s in sets {
        let k: BTreeSet<String> = s.metrics.keys().cloned().collect();
        if k != keys {
            let diff: Vec<_> = keys.symmetric_difference(&k).cloned().collect();
            return Err(Error::Argument(format!(
                "seed {} has inconsistent metric keys (differs in {diff:?})",
                s.seed
            )));
        }
    }
    Ok(keys)
}

/// Mean and sample SD of every metric, in table order.
pub fn aggregate(sets: &[SeedMetricSet]) -> Result<Vec<MetricSummary>> {
    let keys = check_keys(sets)?;
    Ok(table_order(&keys)
        .into_iter()
        .map(|key| {
            let values: Vec<f64> = sets.iter().map(|s| s.metrics[&key]).collect();
            let sd = (values.len() >= 2).then(|| sample_variance(&values).sqrt());
            MetricSummary { n: values.len(), mean: mean(&values), sd, metric: key }
        })
        .collect())
}

/// Per-metric comparison of two seed populations sharing one seed list.
pub fn compare_sets(a: &[SeedMetricSet], b: &[SeedMetricSet]) -> Result<Vec<ComparisonStats>> {
    let seeds_a: Vec<u64> = a.iter().map(|s| s.seed).collect();
    let seeds_b: Vec<u64> = b.iter().map(|s| s.seed).collect();
    if seeds_a != seeds_b {
        return Err(Error::Argument(format!("seed lists differ: {seeds_a:?} vs {seeds_b:?}")));
    }
    let keys = check_keys(a)?;
    if check_keys(b)? != keys {
        return Err(Error::Argument("metric keys differ between the two groups".into()));
    }
    table_order(&keys)
        .into_iter()
        .map(|key| {
            let va: Vec<f64> = a.iter().map(|s| s.metrics[&key]).collect();
            let vb: Vec<f64> = b.iter().map(|s| s.metrics[&key]).collect();
            let mut c = compare(&va, &vb)?;
            c.metric = key;
            Ok(c)
        })
        .collect()
}

fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let a = v.abs();
    if a != 0.0 && (a < 1e-3 || a >= 1e5) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

/// Markdown table: metric, both means, effect size, 95% CI, p-value.
pub fn comparison_markdown(rows: &[ComparisonStats], label_a: &str, label_b: &str) -> String {
    let mut out = format!(
        "| Metric | {label_a} | {label_b} | Effect Size | 95% CI | p value |\n|---|---|---|---|---|---|\n"
    );
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | ({}, {}) | {}{} |\n",
            metric_label(&r.metric),
            fmt_num(r.mean_a),
            fmt_num(r.mean_b),
            fmt_num(r.effect_size),
            fmt_num(r.ci_lo),
            fmt_num(r.ci_hi),
            fmt_num(r.p_value),
            if r.degenerate { " (degenerate)" } else { "" },
        ));
    }
    out
}

pub const COMPARISON_CSV_HEADER: &str =
    "metric,n_a,n_b,mean_a,mean_b,sd_a,sd_b,effect_size,ci_lo,ci_hi,t_stat,df,p_value,degenerate";

/// CSV rendering with full precision.
pub fn comparison_csv(rows: &[ComparisonStats]) -> String {
    let mut out = format!("{COMPARISON_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.metric, r.n_a, r.n_b, r.mean_a, r.mean_b, r.sd_a, r.sd_b, r.effect_size, r.ci_lo,
            r.ci_hi, r.t_stat, r.df, r.p_value, r.degenerate
        ));
    }
    out
}
