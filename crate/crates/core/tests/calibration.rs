use orthograd::calibration::{
    accuracy, brier, confidence_stats, ece, evaluate, fit_temperature, mean_entropy, nll, reliability_bins,
    DEFAULT_BINS,
};
use orthograd::rng::{stream, Rng, Stream};
use orthograd::tensor::Tensor;
use orthograd::PredictionBatch;
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

fn batch(rows: &[Vec<f64>], labels: &[usize]) -> PredictionBatch {
    PredictionBatch::from_logits(Tensor::from_rows(rows).unwrap(), labels.to_vec()).unwrap()
}

fn random_batch(rng: &mut Rng) -> PredictionBatch {
    let n = rng.random_range(2..200);
    let k = rng.random_range(2..11);
    let scale = rng.random_range(0.1..10.0);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..k).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    batch(&rows, &labels)
}

/// Scalar-loop reference for every per-sample metric.
struct Oracle {
    ece: f64,
    brier: f64,
    entropy: f64,
    max_softmax: f64,
    max_logit: f64,
    logit_var: f64,
    corr: f64,
}

fn oracle(logits: &[Vec<f64>], labels: &[usize], n_bins: usize) -> Oracle {
    let n = logits.len();
    let mut confs = Vec::new();
    let mut hits = Vec::new();
    let (mut brier, mut entropy, mut max_logit, mut logit_var) = (0.0, 0.0, 0.0, 0.0);
    for (z, &y) in logits.iter().zip(labels) {
        let k = z.len();
        let mut m = z[0];
        let mut arg = 0;
        for (j, &v) in z.iter().enumerate() {
            if v > m {
                m = v;
                arg = j;
            }
        }
        let mut denom = 0.0;
        for &v in z {
            denom += (v - m).exp();
        }
        let mut conf = 0.0f64;
        for (j, &v) in z.iter().enumerate() {
            let p = (v - m).exp() / denom;
            conf = conf.max(p);
            let target = if j == y { 1.0 } else { 0.0 };
            brier += (p - target) * (p - target);
            if p > 0.0 {
                entropy -= p * p.ln();
            }
        }
        confs.push(conf);
        hits.push(if arg == y { 1.0 } else { 0.0 });
        max_logit += m;
        let mean = z.iter().sum::<f64>() / k as f64;
        logit_var += z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64;
    }
    let nf = n as f64;

    let mut ece = 0.0;
    for b in 0..n_bins {
        let lo = b as f64 / n_bins as f64;
        let hi = (b + 1) as f64 / n_bins as f64;
        let members: Vec<usize> = (0..n)
            .filter(|&i| {
                let c = confs[i];
                if b + 1 == n_bins { c >= lo } else { c >= lo && c < hi }
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        let cnt = members.len() as f64;
        let ca = members.iter().map(|&i| confs[i]).sum::<f64>() / cnt;
        let aa = members.iter().map(|&i| hits[i]).sum::<f64>() / cnt;
        ece += cnt / nf * (aa - ca).abs();
    }

    let mc = confs.iter().sum::<f64>() / nf;
    let mh = hits.iter().sum::<f64>() / nf;
    let cov: f64 = confs.iter().zip(&hits).map(|(c, h)| (c - mc) * (h - mh)).sum();
    let vc: f64 = confs.iter().map(|c| (c - mc).powi(2)).sum();
    let vh: f64 = hits.iter().map(|h| (h - mh).powi(2)).sum();
    let corr = if vc == 0.0 || vh == 0.0 { 0.0 } else { cov / (vc * vh).sqrt() };

    Oracle {
        ece,
        brier: brier / nf,
        entropy: entropy / nf,
        max_softmax: mc,
        max_logit: max_logit / nf,
        logit_var: logit_var / nf,
        corr,
    }
}

fn rows_of(b: &PredictionBatch) -> Vec<Vec<f64>> {
    b.logits().iter_rows().map(|r| r.to_vec()).collect()
}

#[test]
fn metrics_match_scalar_oracle_on_random_batches() {
    let mut rng = stream(31, Stream::Probe);
    for _ in 0..100 {
        let b = random_batch(&mut rng);
        let o = oracle(&rows_of(&b), b.labels(), DEFAULT_BINS);
        let r = evaluate(&b, DEFAULT_BINS).unwrap();
        let close = |a: f64, e: f64| (a - e).abs() <= 1e-12 * e.abs().max(1.0);
        assert!(close(r.ece, o.ece), "ece {} vs {}", r.ece, o.ece);
        assert!(close(r.brier, o.brier));
        assert!(close(r.mean_entropy, o.entropy));
        assert!(close(r.mean_max_softmax, o.max_softmax));
        assert!(close(r.mean_max_logit, o.max_logit));
        assert!(close(r.mean_logit_variance, o.logit_var));
        assert!(close(r.conf_acc_corr.unwrap(), o.corr));
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), b.len());
        let k = b.num_classes() as f64;
        assert!(r.mean_entropy >= 0.0 && r.mean_entropy <= k.ln() + 1e-12);
        assert!(r.mean_max_softmax >= 1.0 / k - 1e-12 && r.mean_max_softmax <= 1.0);
        assert!((0.0..=2.0).contains(&r.brier));
    }
}

#[test]
fn uniform_ten_class_entropy_is_ln_ten() {
    let b = batch(&vec![vec![0.0; 10]; 7], &[0, 1, 2, 3, 4, 5, 6]);
    assert!((mean_entropy(&b) - 10f64.ln()).abs() <= 1e-12);
    assert!((brier(&b) - 0.9).abs() <= 1e-12);
}

#[test]
fn eight_sample_two_bin_ece() {
    let l = |v: f64| v.ln();
    let rows = vec![
        vec![0.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0],
        vec![l(2.0), 0.0, 0.0, 0.0],
        vec![0.0, 0.0, -800.0, -800.0],
        vec![0.0, 0.0, -800.0, -800.0],
        vec![l(9.0), 0.0, 0.0, 0.0],
        vec![800.0, 0.0, 0.0, 0.0],
        vec![l(27.0), 0.0, 0.0, 0.0],
    ];
    let labels = [0, 3, 0, 1, 0, 0, 2, 0];
    let b = batch(&rows, &labels);
    // bin [0, .5): conf .25 .25 .4, acc 2/3; bin [.5, 1]: conf .5 .5 .75 1 .9, acc 3/5
    let hand = 3.0 / 8.0 * (2.0f64 / 3.0 - 0.3).abs() + 5.0 / 8.0 * (0.6f64 - 0.73).abs();
    let got = ece(&b, 2).unwrap();
    assert!((got - hand).abs() <= 1e-12, "{got} vs {hand}");
    assert!((got - oracle(&rows, &labels, 2).ece).abs() <= 1e-12);
    let bins = reliability_bins(&b, 2).unwrap();
    assert_eq!(bins[0].count, 3);
    assert_eq!(bins[1].count, 5);
}

/// Rank of the label when classes are sorted by descending logit, lower index first on ties.
fn brute_rank(z: &[f64], y: usize) -> usize {
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| z[b].partial_cmp(&z[a]).unwrap().then(a.cmp(&b)));
    order.iter().position(|&c| c == y).unwrap()
}

#[test]
fn six_sample_accuracy_matches_exhaustive_scan() {
    let rows = vec![
        vec![0.1, 0.5, 0.2, 0.9],
        vec![1.0, 1.0, 0.0, -1.0],
        vec![3.0, 2.0, 1.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0],
        vec![-1.0, 2.0, 2.0, 1.5],
        vec![0.3, 0.2, 0.1, 0.4],
    ];
    let labels = [1, 1, 0, 3, 2, 2];
    let b = batch(&rows, &labels);
    for topn in 1..=4 {
        let want = rows.iter().zip(&labels).filter(|(z, &y)| brute_rank(z, y) < topn).count() as f64 / 6.0;
        assert_eq!(accuracy(&b, topn).unwrap(), want, "top{topn}");
    }
    assert_eq!(accuracy(&b, 4).unwrap(), 1.0);
}

#[test]
fn correlation_is_one_when_confidence_ranks_correctness() {
    let c = |p: f64| vec![(p / (1.0 - p)).ln(), 0.0];
    let b = batch(&[c(0.9), c(0.9), c(0.6), c(0.6)], &[0, 0, 1, 1]);
    let corr = confidence_stats(&b).conf_acc_corr.unwrap();
    assert!((corr - 1.0).abs() <= 1e-12);
    assert!((corr - oracle(&rows_of(&b), b.labels(), 15).corr).abs() <= 1e-12);
}

/// Logits whose softmax is the true class posterior; labels drawn from it.
fn calibrated_batch(n: usize, k: usize, spread: f64, rng: &mut Rng) -> PredictionBatch {
    let normal = Normal::new(0.0, spread).unwrap();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..k).map(|_| normal.sample(rng)).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut y = k - 1;
        for (j, wj) in w.iter().enumerate() {
            if u < *wj {
                y = j;
                break;
            }
            u -= wj;
        }
        rows.push(z);
        labels.push(y);
    }
    batch(&rows, &labels)
}

#[test]
fn temperature_recovers_one_on_calibrated_logits() {
    let mut rng = stream(41, Stream::Probe);
    let b = calibrated_batch(40_000, 5, 2.0, &mut rng);
    let t = fit_temperature(&b, DEFAULT_BINS).unwrap();
    assert!((t.t_star - 1.0).abs() <= 0.02, "t* = {}", t.t_star);
    assert!(t.nll_after <= t.nll_before + 1e-12);
}

#[test]
fn temperature_recovers_three_on_inflated_logits() {
    let mut rng = stream(42, Stream::Probe);
    let base = calibrated_batch(40_000, 5, 2.0, &mut rng);
    let inflated = batch(
        &base.logits().iter_rows().map(|r| r.iter().map(|v| 3.0 * v).collect()).collect::<Vec<Vec<f64>>>(),
        base.labels(),
    );
    let t = fit_temperature(&inflated, DEFAULT_BINS).unwrap();
    assert!((t.t_star / 3.0 - 1.0).abs() <= 0.02, "t* = {}", t.t_star);
    assert!(t.nll_after <= t.nll_before);
    assert!(t.ece_after <= t.ece_before);
    assert!(!t.degenerate);
}

#[test]
fn temperature_fit_never_worsens_nll() {
    let mut rng = stream(43, Stream::Probe);
    for _ in 0..50 {
        let b = random_batch(&mut rng);
        let t = fit_temperature(&b, DEFAULT_BINS).unwrap();
        assert!(t.nll_after <= t.nll_before + 1e-12);
        assert!((t.nll_before - nll(&b)).abs() == 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sharpening_never_lowers_confidence(seed in any::<u64>(), c in 1.0f64..20.0) {
        let mut rng = stream(seed, Stream::Probe);
        let b = random_batch(&mut rng);
        let sharp = b.with_temperature(1.0 / c).unwrap();
        let before = confidence_stats(&b).mean_max_softmax;
        let after = confidence_stats(&sharp).mean_max_softmax;
        prop_assert!(after >= before - 1e-12);
        prop_assert!(mean_entropy(&sharp) <= mean_entropy(&b) + 1e-12);
    }

    #[test]
    fn temperature_keeps_accuracy(seed in any::<u64>(), t in 0.01f64..100.0) {
        let mut rng = stream(seed, Stream::Probe);
        let b = random_batch(&mut rng);
        let scaled = b.with_temperature(t).unwrap();
        prop_assert_eq!(accuracy(&b, 1).unwrap(), accuracy(&scaled, 1).unwrap());
        prop_assert_eq!(b.argmax(), scaled.argmax());
    }

    #[test]
    fn ece_is_recoverable_from_bins(seed in any::<u64>(), n_bins in 1usize..30) {
        let mut rng = stream(seed, Stream::Probe);
        let b = random_batch(&mut rng);
        let r = evaluate(&b, n_bins).unwrap();
        let recomputed: f64 = r.bins.iter()
            .map(|bin| bin.count as f64 / b.len() as f64 * (bin.mean_accuracy - bin.mean_confidence).abs())
            .sum();
        prop_assert!((recomputed - r.ece).abs() <= 1e-12);
    }
}
