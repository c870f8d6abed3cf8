use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use resdyn::bench::{self, ExperimentConfig, Manifest, MetricsReport, ScenarioFilter, Splits};
use resdyn::fdt::FdtConfig;
use resdyn::sim::TrajectoryKind;

fn small_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.out_dir = out.to_path_buf();
    cfg.data.payloads = vec![0.0, 0.3];
    cfg.data.duration = 8.0;
    cfg.fdt = FdtConfig { d_k: 8, ..FdtConfig::tiny(cfg.plant.n()) };
    cfg.train.epochs = 3;
    cfg.train.batch_size = 32;
    cfg.prediction.duration = 3.0;
    cfg.closed_loop.duration = 2.0;
    cfg.closed_loop.preroll = 0.5;
    cfg.ablation.duration = 3.0;
    cfg.seeds = vec![0, 1, 2];
    cfg.prediction.log_seeds = 3;
    cfg.scenario.log_seeds = 3;
    cfg
}

/// One small pipeline run shared by the tests in this file.
fn pipeline() -> &'static (tempfile::TempDir, ExperimentConfig) {
    static RUN: OnceLock<(tempfile::TempDir, ExperimentConfig)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(&dir.path().join("run"));
        bench::generate_data(&cfg).unwrap();
        bench::train_command(&cfg).unwrap();
        let ck = bench::checkpoint_path(&cfg.out_dir);
        bench::eval_prediction(&cfg, &ck).unwrap();
        let filter = ScenarioFilter { scenario: Some(TrajectoryKind::SShape), payload: None, speed: Some(0.5) };
        bench::run_scenario(&cfg, &ck, &filter).unwrap();
        bench::ablate(&cfg, &ck).unwrap();
        bench::report(std::slice::from_ref(&cfg.out_dir), &cfg.out_dir).unwrap();
        (dir, cfg)
    })
}

/// Header plus numeric rows of a CSV file.
fn read_table(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let header = rd.headers().unwrap().iter().map(str::to_string).collect();
    let rows = rd.records().map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn columns(header: &[String], prefix: &str) -> Vec<usize> {
    header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.rsplit_once('_').is_some_and(|(p, i)| p == prefix && i.parse::<usize>().is_ok()))
        .map(|(i, _)| i)
        .collect()
}

fn naive_rmse(pairs: &[(f64, f64)]) -> f64 {
    (pairs.iter().map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt()
}

fn naive_r2(pred: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    let n = target[0].len();
    let mut acc = 0.0;
    for c in 0..n {
        let mean = target.iter().map(|r| r[c]).sum::<f64>() / target.len() as f64;
        let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p[c] - t[c]).powi(2)).sum();
        let sst: f64 = target.iter().map(|t| (t[c] - mean).powi(2)).sum();
        acc += 1.0 - sse / sst;
    }
    acc / n as f64
}

#[test]
fn prediction_metrics_match_recomputation_from_logs() {
    let (_, cfg) = pipeline();
    let runs = MetricsReport::read_runs(&cfg.out_dir.join("eval/prediction_runs.csv"), None).unwrap();
    assert_eq!(runs.runs.len(), 2 * cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (header, rows) = read_table(&cfg.out_dir.join(format!("eval/logs/prediction_s{seed}.csv")));
        let target: Vec<Vec<f64>> = rows.iter().map(|r| columns(&header, "r").iter().map(|&c| r[c]).collect()).collect();
        for (method, prefix) in [("fdt", "fdt"), ("fdt_lra", "fdt_lra")] {
            let pred: Vec<Vec<f64>> =
                rows.iter().map(|r| columns(&header, prefix).iter().map(|&c| r[c]).collect()).collect();
            let pairs: Vec<(f64, f64)> =
                pred.iter().zip(&target).flat_map(|(p, t)| p.iter().copied().zip(t.iter().copied())).collect();
            let m = runs.runs.iter().find(|r| r.seed == seed && r.method == method).unwrap();
            assert!((m.rmse - naive_rmse(&pairs)).abs() < 1e-10, "{method} seed {seed}");
            assert!((m.r2.unwrap() - naive_r2(&pred, &target)).abs() < 1e-10, "{method} seed {seed}");
        }
    }
}

#[test]
fn tracking_rmse_matches_recomputation_from_logs() {
    let (_, cfg) = pipeline();
    let runs = MetricsReport::read_runs(&cfg.out_dir.join("scenario/tracking_runs.csv"), None).unwrap();
    assert_eq!(runs.runs.len(), 2 * 3 * cfg.seeds.len());
    let mut checked = 0;
    for m in &runs.runs {
        let label = m.group.split('/').nth(1).unwrap();
        let log = cfg.out_dir.join(format!("scenario/logs/s_shape_{label}_0.5_{}_s{}.csv", m.method, m.seed));
        let (header, rows) = read_table(&log);
        let e: Vec<(f64, f64)> = rows.iter().flat_map(|r| columns(&header, "e").into_iter().map(|c| (r[c], 0.0)).collect::<Vec<_>>()).collect();
        assert!((m.rmse - naive_rmse(&e)).abs() < 1e-10, "{log:?}");
        let sigma = header.iter().position(|h| h == "sigma_hat").unwrap();
        let min_sigma = rows.iter().map(|r| r[sigma]).fold(f64::INFINITY, f64::min);
        assert_eq!(m.min_sigma_hat, Some(min_sigma));
        assert!(min_sigma > 0.0);
        checked += 1;
    }
    assert_eq!(checked, 18);
}

#[test]
fn ablation_reports_every_variant_against_the_full_model() {
    let (_, cfg) = pipeline();
    let rep = MetricsReport::read_runs(&cfg.out_dir.join("ablation/ablation_runs.csv"), Some("full")).unwrap();
    let group = format!("ood_{:.3}kg", cfg.ablation.payload);
    assert_eq!(rep.summary_row(&group, "full").unwrap().median_delta_pct, Some(0.0));
    for m in ["no_lra", "no_global_token", "no_short_context", "no_memory"] {
        let row = rep.summary_row(&group, m).unwrap();
        assert_eq!(row.n, cfg.seeds.len());
        assert!(row.median_delta_pct.unwrap().is_finite());
    }
    for v in ["no_global_token", "no_short_context", "no_memory"] {
        assert!(cfg.out_dir.join(format!("ablation/{v}.ckpt")).exists());
    }
}

#[test]
fn report_attention_rows_are_distributions() {
    let (_, cfg) = pipeline();
    let dir = cfg.out_dir.join("report");
    for f in ["metrics.csv", "tracking_error.csv", "sigma_hat.csv", "resets.csv", "attention.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let mut rd = csv::Reader::from_path(dir.join("attention.csv")).unwrap();
    let header: Vec<String> = rd.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(&header[..3], ["run", "log", "t"]);
    let mut rows = 0;
    for rec in rd.records() {
        let rec = rec.unwrap();
        let s: f64 = rec.iter().skip(3).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-9, "row sums to {s}");
        rows += 1;
    }
    assert!(rows > 0);
    let plots: Vec<_> = std::fs::read_dir(dir.join("plots")).unwrap().collect();
    assert!(!plots.is_empty());
}

#[test]
fn manifest_checksums_match_files() {
    let (_, cfg) = pipeline();
    let m = Manifest::read(&cfg.out_dir).unwrap();
    for c in ["generate-data", "train", "eval-prediction", "run-scenario", "ablate", "report"] {
        assert!(m.commands.contains_key(c), "{c}");
    }
    assert_eq!(m.commands["train"].seeds, cfg.seeds);
    for (rel, sum) in &m.files {
        assert_eq!(&bench::sha256_file(&cfg.out_dir.join(rel)).unwrap(), sum, "{rel}");
    }
    assert!(m.timing_files.iter().any(|f| f.starts_with("model/")));
    let snap = ExperimentConfig::load(cfg.preset, Some(&cfg.out_dir.join("configs/train.toml"))).unwrap();
    assert_eq!(snap.seeds, cfg.seeds);
    assert_eq!(snap.out_dir, PathBuf::from("."));
}

#[test]
fn empty_report_has_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = bench::report(&[empty], dir.path()).unwrap();
    assert!(out.rows.is_empty());
    for f in ["metrics.csv", "tracking_error.csv", "sigma_hat.csv", "resets.csv", "attention.csv"] {
        let text = std::fs::read_to_string(dir.path().join("report").join(f)).unwrap();
        assert_eq!(text.lines().count(), 1, "{f}: {text}");
    }
}

#[test]
fn missing_artifacts_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert!(bench::train_command(&cfg).is_err());
    assert!(bench::eval_prediction(&cfg, &dir.path().join("none.ckpt")).is_err());
    assert!(bench::report(&[dir.path().join("absent")], dir.path()).is_err());
}

/// Learning must beat a control run trained on permuted targets.
#[test]
fn validation_loss_beats_shuffled_label_control() {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let (_, base) = pipeline();
    let mut cfg = base.clone();
    cfg.train.epochs = 8;
    let splits = bench::load_splits(&cfg).unwrap();
    let (_, _, real) = bench::fit_model(&cfg, &cfg.fdt, &splits).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let mut shuffled = Splits { train: splits.train.clone(), val: splits.val.clone(), test: splits.test.clone() };
    for t in &mut shuffled.train {
        let mut rs: Vec<_> = t.samples.iter().map(|s| s.r.clone()).collect();
        rs.shuffle(&mut rng);
        for (s, r) in t.samples.iter_mut().zip(rs) {
            s.r = r;
        }
    }
    let (_, _, control) = bench::fit_model(&cfg, &cfg.fdt, &shuffled).unwrap();
    assert!(
        real.best_val_loss <= control.best_val_loss,
        "real {} vs shuffled {}",
        real.best_val_loss,
        control.best_val_loss
    );
}
