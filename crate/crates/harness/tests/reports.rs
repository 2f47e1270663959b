use orthograd::calibration::{CalibrationReport, ReliabilityBin, TemperatureResult};
use orthograd::optim::{EpochLog, Variant};
use orthograd::stats::{compare, TABLE_ROWS};
use orthograd_harness::compare::{compare_runs, Direction};
use orthograd_harness::corrupt::Operator;
use orthograd_harness::data::SplitSummary;
use orthograd_harness::plotdata::{curve_rows, emit_plotdata, pool_bins, read_curve_csv};
use orthograd_harness::record::{
    load_records, record_file_name, validate_record_json, write_json, CorruptionResult, RunRecord, TemperatureOutcome,
    SCHEMA,
};

fn report(base: f64) -> CalibrationReport {
    CalibrationReport {
        samples: 10,
        classes: 3,
        top1_acc: 0.7 + base,
        top5_acc: 1.0,
        nll: 0.9 - base,
        ece: 0.1 + base / 2.0,
        brier: 0.4 - base,
        mean_entropy: 0.3 + base,
        mean_max_softmax: 0.8 - base,
        mean_max_logit: 3.0 + 10.0 * base,
        mean_logit_variance: 2.0 + base * base,
        conf_acc_corr: Some(0.4 + base),
        bins: vec![
            ReliabilityBin { lo: 0.0, hi: 0.5, count: 4, mean_confidence: 0.4, mean_accuracy: 0.25 + base },
            ReliabilityBin { lo: 0.5, hi: 1.0, count: 6, mean_confidence: 0.8, mean_accuracy: 0.8 - base },
        ],
    }
}

fn temp(t: f64) -> TemperatureResult {
    TemperatureResult {
        t_star: t,
        degenerate: false,
        nll_before: 1.0,
        nll_after: 0.9,
        ece_before: 0.2,
        ece_after: 0.1,
        brier_before: 0.5,
        brier_after: 0.45,
    }
}

fn record(variant: Variant, seed: u64, base: f64) -> RunRecord {
    RunRecord {
        schema: SCHEMA.into(),
        name: "hand".into(),
        config_hash: format!("cfg-{variant}"),
        protocol_hash: "protocol".into(),
        variant,
        seed,
        splits: SplitSummary { train: 9, val: 1, test: 10, features: 2, classes: 3 },
        epochs: vec![EpochLog { epoch: 0, train_loss: 1.0, theta_norm: 2.0 }],
        initial_theta_norm: 2.0,
        final_theta_norm: 2.5 + base,
        clean: report(base),
        temperature: TemperatureOutcome { val: temp(1.5 + base), test: temp(1.5 + base) },
        corruption: (1..=5)
            .map(|s| CorruptionResult {
                operator: Operator::GaussianNoise,
                severity: s,
                mean_perturbation: 0.1 * s as f64,
                report: report(base - 0.02 * s as f64),
            })
            .collect(),
        wall_time_s: 0.0,
    }
}

fn groups() -> (Vec<RunRecord>, Vec<RunRecord>) {
    let a = vec![record(Variant::Sgd, 0, 0.00), record(Variant::Sgd, 1, 0.03)];
    let b = vec![record(Variant::PerpRenorm, 0, 0.05), record(Variant::PerpRenorm, 1, 0.01)];
    (a, b)
}

#[test]
fn comparison_rows_equal_stats_module_outputs() {
    let (a, b) = groups();
    let rep = compare_runs(&a, &b, "sgd", "perp").unwrap();
    // every table row, in table order, then the extras
    let keys: Vec<&str> = rep.rows.iter().map(|r| r.metric.as_str()).collect();
    assert_eq!(&keys[..9], TABLE_ROWS.map(|(k, _)| k).as_slice());
    let field = |r: &RunRecord, key: &str| -> f64 {
        let c = &r.clean;
        match key {
            "top1_acc" => c.top1_acc,
            "top5_acc" => c.top5_acc,
            "nll" => c.nll,
            "ece" => c.ece,
            "brier" => c.brier,
            "mean_entropy" => c.mean_entropy,
            "mean_max_softmax" => c.mean_max_softmax,
            "mean_max_logit" => c.mean_max_logit,
            "mean_logit_variance" => c.mean_logit_variance,
            "conf_acc_corr" => c.conf_acc_corr.unwrap(),
            "final_theta_norm" => r.final_theta_norm,
            "t_star" => r.temperature.val.t_star,
            "ts_nll" => r.temperature.test.nll_after,
            "ts_ece" => r.temperature.test.ece_after,
            "ts_brier" => r.temperature.test.brier_after,
            other => panic!("unexpected metric {other}"),
        }
    };
    for row in &rep.rows {
        let va: Vec<f64> = a.iter().map(|r| field(r, &row.metric)).collect();
        let vb: Vec<f64> = b.iter().map(|r| field(r, &row.metric)).collect();
        let mut want = compare(&va, &vb).unwrap();
        want.metric = row.metric.clone();
        assert_eq!(*row, want);
    }
    assert!(rep.omitted.is_empty());
    let md = rep.to_markdown();
    assert!(md.contains("| Metric | sgd | perp | Effect Size | 95% CI | p value |"));
    assert!(md.contains("## gaussian_noise"));
    assert_eq!(rep.to_csv().lines().count(), rep.rows.len() + 1);
}

#[test]
fn direction_record_marks_better_side() {
    let (a, b) = groups();
    let rep = compare_runs(&a, &b, "sgd", "perp").unwrap();
    let nll = rep.direction.iter().find(|d| d.metric == "nll").unwrap();
    assert_eq!(nll.better, Direction::Lower);
    // b has the higher base on average, so lower nll
    assert_eq!(nll.winner, "perp");
    assert_eq!(nll.paper_winner.as_deref(), Some("perp"));
    assert_eq!(nll.agrees_with_paper, Some(true));
    assert!(rep.direction.iter().all(|d| d.metric != "final_theta_norm"));
}

#[test]
fn self_comparison_is_exactly_null() {
    let (a, _) = groups();
    let rep = compare_runs(&a, &a, "x", "y").unwrap();
    for row in &rep.rows {
        assert_eq!(row.effect_size, 0.0, "{}", row.metric);
        assert_eq!(row.p_value, 1.0, "{}", row.metric);
    }
    for c in &rep.corruption {
        let s = c.stats.as_ref().unwrap();
        assert_eq!((s.effect_size, s.p_value), (0.0, 1.0));
    }
    assert!(rep.direction.iter().all(|d| d.paper_winner.is_none()));
}

#[test]
fn mismatched_seeds_and_protocols_are_rejected() {
    let (a, mut b) = groups();
    b[1].seed = 7;
    assert!(compare_runs(&a, &b, "a", "b").is_err());
    let (a, mut b) = groups();
    for r in b.iter_mut() {
        r.protocol_hash = "other".into();
    }
    assert!(compare_runs(&a, &b, "a", "b").is_err());
}

#[test]
fn undefined_correlation_is_omitted_not_fabricated() {
    let (a, mut b) = groups();
    b[0].clean.conf_acc_corr = None;
    let rep = compare_runs(&a, &b, "a", "b").unwrap();
    assert_eq!(rep.omitted, vec!["conf_acc_corr".to_string()]);
    assert!(rep.rows.iter().all(|r| r.metric != "conf_acc_corr"));
}

#[test]
fn missing_metric_is_a_schema_error() {
    let (a, _) = groups();
    let mut json = serde_json::to_value(&a[0]).unwrap();
    validate_record_json(&json).unwrap();
    json["clean"].as_object_mut().unwrap().remove("brier");
    let err = validate_record_json(&json).unwrap_err().to_string();
    assert!(err.contains("brier"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    write_json(&dir.path().join(record_file_name(0)), &json).unwrap();
    assert!(load_records(dir.path()).is_err());
}

#[test]
fn records_round_trip_through_a_directory() {
    let (a, _) = groups();
    let dir = tempfile::tempdir().unwrap();
    for r in a.iter().rev() {
        write_json(&dir.path().join(record_file_name(r.seed)), r).unwrap();
    }
    assert_eq!(load_records(dir.path()).unwrap(), a);
}

#[test]
fn curve_files_have_one_row_per_optimizer_and_severity() {
    let (a, b) = groups();
    let rows = curve_rows(&[("sgd", &a), ("perp", &b)], "top1_acc");
    assert_eq!(rows.len(), 10);
    let single = curve_rows(&[("sgd", &a[..1])], "top1_acc");
    assert_eq!(single.len(), 5);
    assert!(single.iter().all(|r| r.sd.is_none() && r.n == 1));
}

#[test]
fn plot_csv_round_trips_to_1e_12() {
    let (a, b) = groups();
    let dir = tempfile::tempdir().unwrap();
    let written = emit_plotdata(&[("sgd", &a), ("perp", &b)], dir.path()).unwrap();
    assert!(written.iter().all(|p| p.exists()));
    for name in ["accuracy", "loss", "ece", "entropy"] {
        let back = read_curve_csv(&dir.path().join(format!("fig1_{name}.csv"))).unwrap();
        let metric = orthograd_harness::plotdata::CURVES.iter().find(|(n, _)| *n == name).unwrap().1;
        let want = curve_rows(&[("sgd", &a), ("perp", &b)], metric);
        assert_eq!(back.len(), 10);
        for (x, y) in back.iter().zip(&want) {
            assert_eq!((&x.optimizer, x.operator, x.severity, x.n), (&y.optimizer, y.operator, y.severity, y.n));
            assert!((x.mean - y.mean).abs() <= 1e-12);
            assert!((x.sd.unwrap() - y.sd.unwrap()).abs() <= 1e-12);
        }
    }
    let single = tempfile::tempdir().unwrap();
    emit_plotdata(&[("sgd", &a[..1])], single.path()).unwrap();
    let text = std::fs::read_to_string(single.path().join("fig1_loss.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(',')), "{text}");
}

#[test]
fn pooled_bins_weight_by_count() {
    let (a, _) = groups();
    let pooled = pool_bins(a.iter().map(|r| &r.clean));
    assert_eq!(pooled[0].count, 8);
    // equal counts: plain average of the two seeds' bin accuracies
    assert!((pooled[0].mean_accuracy - (0.25 + 0.28) / 2.0).abs() < 1e-15);
}
