use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::manifest::{CommandEntry, Manifest};
use super::metrics::{r2_mean, rmse, write_rows, HeaderOnly, MetricsReport, RunMetrics};
use super::plot;
use crate::controller::{collect_trajectory, run_closed_loop, ClosedLoopLog, CollectConfig, Compensation};
use crate::error::{Error, Result};
use crate::fdt::{
    evaluate_loss, train, FdtConfig, FdtModel, HistoryWindow, NormStats, TrainLog, Variant, WindowDataset,
};
use crate::lra::{write_trace, AdapterConfig, AdapterState, TraceRow};
use crate::sim::dataset::{read_csv, write_csv};
use crate::sim::{ReferenceTrajectory, Trajectory, TrajectoryKind};

const STREAM_DATA_TRAJ: u64 = 0x10;
const STREAM_DATA_DIST: u64 = 0x20;
const STREAM_PRED_TRAJ: u64 = 0x30;
const STREAM_PRED_DIST: u64 = 0x40;
const STREAM_LOOP_DIST: u64 = 0x50;

/// splitmix64 of `seed` offset by a stream tag, for independent derived seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn data_path(out: &Path, payload: f64) -> PathBuf {
    out.join("data").join(format!("payload_{payload:.3}kg.csv"))
}

pub fn checkpoint_path(out: &Path) -> PathBuf {
    out.join("model").join("fdt.ckpt")
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Full => "full",
        Variant::NoGlobalToken => "no_global_token",
        Variant::NoShortContext => "no_short_context",
        Variant::NoMemory => "no_memory",
    }
}

fn kind_name(k: TrajectoryKind) -> &'static str {
    match k {
        TrajectoryKind::SShape => "s_shape",
        TrajectoryKind::Figure8 => "figure8",
        TrajectoryKind::RandomizedExcitation => "randomized_excitation",
    }
}

/// Snapshot the config (without its output directory, so identical runs into
/// different directories stay byte-identical) and refresh the manifest.
fn record(cfg: &ExperimentConfig, command: &str) -> Result<()> {
    let out = &cfg.out_dir;
    let dir = out.join("configs");
    std::fs::create_dir_all(&dir)?;
    let mut snap = cfg.clone();
    snap.out_dir = PathBuf::from(".");
    let rel = format!("configs/{command}.toml");
    std::fs::write(out.join(&rel), snap.to_toml()?)?;
    Manifest::update(out, command, CommandEntry { config: rel, seed: cfg.seed, seeds: cfg.seeds.clone() })?;
    Ok(())
}

fn collect_config(cfg: &ExperimentConfig, duration: f64) -> CollectConfig {
    CollectConfig { dt: cfg.data.dt, substeps: cfg.data.substeps, duration, dither: cfg.data.dither.clone() }
}

/// PID-tracked excitation run under the dataset protocol.
fn excitation_run(cfg: &ExperimentConfig, payload: f64, duration: f64, traj_seed: u64, dist_seed: u64) -> Result<Trajectory> {
    let n = cfg.plant.n();
    let traj = ReferenceTrajectory::new(TrajectoryKind::RandomizedExcitation, n, cfg.data.speed, duration, traj_seed)?;
    let plant = cfg.plant.with_payload(payload);
    collect_trajectory(
        &plant,
        traj.payload_schedule(payload),
        &traj,
        &cfg.gains.mbar,
        &cfg.pid,
        &collect_config(cfg, duration),
        dist_seed,
    )
}

/// One dataset file per payload condition.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    std::fs::create_dir_all(cfg.out_dir.join("data"))?;
    let mut paths = Vec::new();
    for (i, &m) in cfg.data.payloads.iter().enumerate() {
        let i = i as u64;
        let tr = excitation_run(
            cfg,
            m,
            cfg.data.duration,
            derive_seed(cfg.seed, STREAM_DATA_TRAJ + i),
            derive_seed(cfg.seed, STREAM_DATA_DIST + i),
        )?;
        let p = data_path(&cfg.out_dir, m);
        write_csv(&p, &tr)?;
        paths.push(p);
    }
    record(cfg, "generate-data")?;
    Ok(paths)
}

/// Contiguous train / validation / test segments of every run.
#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

pub fn split_contiguous(trajs: &[Trajectory], train_frac: f64, val_frac: f64) -> Splits {
    let mut s = Splits::default();
    for t in trajs {
        let n = t.len();
        let a = (n as f64 * train_frac).round() as usize;
        let b = ((n as f64 * (train_frac + val_frac)).round() as usize).min(n);
        s.train.push(Trajectory { samples: t.samples[..a].to_vec() });
        s.val.push(Trajectory { samples: t.samples[a..b].to_vec() });
        s.test.push(Trajectory { samples: t.samples[b..].to_vec() });
    }
    s
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let mut trajs = Vec::new();
    for &m in &cfg.data.payloads {
        let p = data_path(&cfg.out_dir, m);
        if !p.exists() {
            return Err(Error::Config(format!("dataset {} missing; run generate-data first", p.display())));
        }
        trajs.push(read_csv(&p)?);
    }
    Ok(split_contiguous(&trajs, cfg.data.train_fraction, cfg.data.val_fraction))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: Variant,
    pub parameters: usize,
    pub train_windows: usize,
    pub val_windows: usize,
    pub test_windows: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub test_loss: f64,
}

/// Fit normalization on the training split and train a fresh model.
pub fn fit_model(cfg: &ExperimentConfig, fdt: &FdtConfig, splits: &Splits) -> Result<(FdtModel, TrainLog, TrainSummary)> {
    let norm = NormStats::fit(&splits.train)?;
    let mut model = FdtModel::new(fdt, norm.clone(), cfg.seed)?;
    let tr = WindowDataset::new(&splits.train, fdt, &norm, cfg.train.window_stride)?;
    let va = WindowDataset::new(&splits.val, fdt, &norm, 1)?;
    let te = WindowDataset::new(&splits.test, fdt, &norm, 1)?;
    let log = train(&mut model, &tr, &va, &cfg.train)?;
    let test_loss = if te.is_empty() { f64::NAN } else { evaluate_loss(&model, &te, cfg.train.batch_size)? };
    let summary = TrainSummary {
        variant: fdt.variant,
        parameters: model.store.num_scalars(),
        train_windows: tr.len(),
        val_windows: va.len(),
        test_windows: te.len(),
        epochs_run: log.epochs.len(),
        best_epoch: log.best_epoch,
        best_val_loss: log.best_val,
        test_loss,
    };
    Ok((model, log, summary))
}

/// Checkpoint plus `<stem>_train_log.csv` and `<stem>_summary.json` beside it.
fn save_trained(model: &FdtModel, log: &TrainLog, summary: &TrainSummary, ckpt: &Path) -> Result<()> {
    if let Some(d) = ckpt.parent() {
        std::fs::create_dir_all(d)?;
    }
    model.save(ckpt)?;
    let stem = file_stem(ckpt);
    log.write_csv(&ckpt.with_file_name(format!("{stem}_train_log.csv")))?;
    std::fs::write(
        ckpt.with_file_name(format!("{stem}_summary.json")),
        serde_json::to_string_pretty(summary)? + "\n",
    )?;
    Ok(())
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

/// Train on the generated dataset and write `model/fdt.ckpt` with its log.
pub fn train_command(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    let (model, log, summary) = fit_model(cfg, &cfg.fdt, &splits)?;
    let ckpt = checkpoint_path(&cfg.out_dir);
    save_trained(&model, &log, &summary, &ckpt)?;
    record(cfg, "train")?;
    Ok(summary)
}

/// Open-loop one-step predictions over a stream: frozen and adapted.
#[derive(Clone, Debug, Default)]
pub struct StreamEval {
    pub n: usize,
    pub t: Vec<f64>,
    /// Row-major `samples x n`.
    pub target: Vec<f64>,
    pub frozen: Vec<f64>,
    pub adapted: Vec<f64>,
    pub inference_ms: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub alpha: Vec<Vec<f64>>,
}

/// Each prediction is made before its target is revealed to the adapter.
/// Samples before the window fills are skipped.
pub fn evaluate_stream(model: &FdtModel, adapter: &AdapterConfig, stream: &Trajectory) -> Result<StreamEval> {
    let mc = model.config();
    let n = mc.n;
    let mut window = HistoryWindow::new(n, mc.t_l);
    let mut state = AdapterState::new(mc.d_k, n, adapter);
    let mut ev = StreamEval { n, ..Default::default() };
    for s in &stream.samples {
        window.push(&s.chi, &s.chi_dot, &s.tau)?;
        if !window.is_full() {
            continue;
        }
        let t0 = Instant::now();
        let fc = model.forward(&window)?;
        ev.inference_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        let base = fc.one_step();
        let adapted = state.adapt_predict(&base, &fc.latent)?;
        let rep = state.update(&fc.latent, &s.r, &base, adapter)?;
        ev.t.push(s.t);
        ev.target.extend(s.r.iter());
        ev.frozen.extend(base.iter());
        ev.adapted.extend(adapted.iter());
        ev.trace.push(TraceRow::new(s.t, &state, &rep));
        ev.alpha.push(fc.alpha);
    }
    if ev.t.is_empty() {
        return Err(Error::Underfilled { have: stream.len(), need: mc.t_l });
    }
    Ok(ev)
}

impl StreamEval {
    /// `t, r_i, fdt_i, fdt_lra_i`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        for name in ["r", "fdt", "fdt_lra"] {
            header.extend((0..self.n).map(|i| format!("{name}_{i}")));
        }
        w.write_record(&header)?;
        for (k, t) in self.t.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            for v in [&self.target, &self.frozen, &self.adapted] {
                rec.extend(v[k * self.n..(k + 1) * self.n].iter().map(|x| x.to_string()));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn metrics(&self, group: &str, seed: u64) -> Result<[RunMetrics; 2]> {
        let mk = |method: &str, pred: &[f64]| -> Result<RunMetrics> {
            let mut r = RunMetrics::new(group, method, seed, rmse(pred, &self.target)?).with_inference(&self.inference_ms);
            r.r2 = Some(r2_mean(pred, &self.target, self.n)?);
            Ok(r)
        };
        Ok([mk("fdt", &self.frozen)?, mk("fdt_lra", &self.adapted)?])
    }
}

/// Held-out excitation stream for evaluation seed `seed`.
fn evaluation_stream(cfg: &ExperimentConfig, payload: f64, duration: f64, seed: u64) -> Result<Trajectory> {
    excitation_run(cfg, payload, duration, derive_seed(seed, STREAM_PRED_TRAJ), derive_seed(seed, STREAM_PRED_DIST))
}

fn write_attention(path: &Path, t: &[f64], alpha: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = alpha.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("alpha_{i}")));
    w.write_record(&header)?;
    for (t, a) in t.iter().zip(alpha) {
        let mut rec = vec![t.to_string()];
        rec.extend(a.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn load_model(path: &Path) -> Result<FdtModel> {
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} missing; run train first", path.display())));
    }
    FdtModel::load(path)
}

/// Frozen vs adapted open-loop prediction on the held-out payload.
pub fn eval_prediction(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<MetricsReport> {
    cfg.validate()?;
    let model = load_model(checkpoint)?;
    let dir = cfg.out_dir.join("eval");
    let logs = dir.join("logs");
    std::fs::create_dir_all(&logs)?;
    let group = format!("unseen_{:.3}kg", cfg.prediction.payload);
    let mut report = MetricsReport::new(Some("fdt"));
    for (i, &seed) in cfg.seeds.iter().enumerate() {
        let stream = evaluation_stream(cfg, cfg.prediction.payload, cfg.prediction.duration, seed)?;
        let ev = evaluate_stream(&model, &cfg.adapter, &stream)?;
        for m in ev.metrics(&group, seed)? {
            report.push(m)?;
        }
        if i < cfg.prediction.log_seeds {
            ev.write_csv(&logs.join(format!("prediction_s{seed}.csv")))?;
            write_trace(&logs.join(format!("adapter_s{seed}.csv")), &ev.trace)?;
            write_attention(&logs.join(format!("attention_s{seed}.csv")), &ev.t, &ev.alpha)?;
        }
    }
    report.write(&dir, "prediction")?;
    record(cfg, "eval-prediction")?;
    Ok(report)
}

/// Restricts `run_scenario` to part of the grid.
#[derive(Clone, Debug, Default)]
pub struct ScenarioFilter {
    pub scenario: Option<TrajectoryKind>,
    pub payload: Option<f64>,
    pub speed: Option<f64>,
}

/// One closed-loop grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub kind: TrajectoryKind,
    pub label: &'static str,
    pub payload: f64,
    pub speed: f64,
}

impl Cell {
    pub fn group(&self) -> String {
        format!("{}/{}/{}", kind_name(self.kind), self.label, self.speed)
    }
}

pub fn scenario_cells(cfg: &ExperimentConfig, filter: &ScenarioFilter) -> Vec<Cell> {
    let sc = &cfg.scenario;
    let mut cells = Vec::new();
    for &kind in &sc.scenarios {
        for (label, payload) in [("in_dist", sc.in_dist_payload), ("ood", sc.ood_payload)] {
            for &speed in &sc.speeds {
                let keep = filter.scenario.is_none_or(|k| k == kind)
                    && filter.payload.is_none_or(|p| (p - payload).abs() < 1e-12)
                    && filter.speed.is_none_or(|v| (v - speed).abs() < 1e-12);
                if keep {
                    cells.push(Cell { kind, label, payload, speed });
                }
            }
        }
    }
    cells
}

pub const METHODS: [&str; 3] = ["none", "fdt", "fdt_lra"];

/// Closed-loop tracking for every cell, method and seed.
pub fn run_scenario(cfg: &ExperimentConfig, checkpoint: &Path, filter: &ScenarioFilter) -> Result<MetricsReport> {
    cfg.validate()?;
    let model = load_model(checkpoint)?;
    let cells = scenario_cells(cfg, filter);
    if cells.is_empty() {
        return Err(Error::Config("scenario filter selects no grid cell".into()));
    }
    let dir = cfg.out_dir.join("scenario");
    let logs = dir.join("logs");
    std::fs::create_dir_all(&logs)?;
    let n = cfg.plant.n();
    let mut report = MetricsReport::new(Some("none"));
    for cell in &cells {
        let plant = cfg.plant.with_payload(cell.payload);
        for (i, &seed) in cfg.seeds.iter().enumerate() {
            let traj = ReferenceTrajectory::new(cell.kind, n, cell.speed, cfg.closed_loop.duration, seed)?;
            for method in METHODS {
                let comp = match method {
                    "none" => Compensation::None,
                    "fdt" => Compensation::Model { model: &model, adapter: None },
                    _ => Compensation::Model { model: &model, adapter: Some(&cfg.adapter) },
                };
                let log = run_closed_loop(
                    &plant,
                    traj.payload_schedule(cell.payload),
                    &traj,
                    &cfg.gains,
                    &cfg.pid,
                    comp,
                    &cfg.closed_loop,
                    derive_seed(seed, STREAM_LOOP_DIST),
                )?;
                let mut m = RunMetrics::new(&cell.group(), method, seed, log.tracking_rmse())
                    .with_inference(&log.inference_ms);
                m.min_sigma_hat = Some(log.min_sigma_hat());
                report.push(m)?;
                if i < cfg.scenario.log_seeds {
                    write_loop_logs(&logs, &format!("{}_{}_{}_{}_s{seed}", kind_name(cell.kind), cell.label, cell.speed, method), &log)?;
                }
            }
        }
    }
    report.write(&dir, "tracking")?;
    record(cfg, "run-scenario")?;
    Ok(report)
}

fn write_loop_logs(dir: &Path, stem: &str, log: &ClosedLoopLog) -> Result<()> {
    log.write_csv(&dir.join(format!("{stem}.csv")))?;
    if !log.alpha.is_empty() {
        log.write_attention_csv(&dir.join(format!("{stem}_attention.csv")))?;
    }
    if !log.adapter_trace.is_empty() {
        write_trace(&dir.join(format!("{stem}_adapter.csv")), &log.adapter_trace)?;
    }
    Ok(())
}

/// Retrain each architecture variant with the same data, seed and budget,
/// then score every variant (with the adapter) and the frozen full model on
/// the out-of-distribution stream.
pub fn ablate(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<MetricsReport> {
    cfg.validate()?;
    let full = load_model(checkpoint)?;
    let dir = cfg.out_dir.join("ablation");
    std::fs::create_dir_all(&dir)?;
    let splits = load_splits(cfg)?;
    let mut variants = Vec::new();
    for &v in &cfg.ablation.variants {
        if v == Variant::Full {
            continue;
        }
        let fdt = FdtConfig { variant: v, ..cfg.fdt.clone() };
        let (model, log, summary) = fit_model(cfg, &fdt, &splits)?;
        let ckpt = dir.join(format!("{}.ckpt", variant_name(v)));
        save_trained(&model, &log, &summary, &ckpt)?;
        variants.push((variant_name(v), model));
    }
    let group = format!("ood_{:.3}kg", cfg.ablation.payload);
    let mut report = MetricsReport::new(Some("full"));
    for &seed in &cfg.seeds {
        let stream = evaluation_stream(cfg, cfg.ablation.payload, cfg.ablation.duration, seed)?;
        let ev = evaluate_stream(&full, &cfg.adapter, &stream)?;
        let [frozen, adapted] = ev.metrics(&group, seed)?;
        report.push(RunMetrics { method: "full".into(), ..adapted })?;
        report.push(RunMetrics { method: "no_lra".into(), ..frozen })?;
        for (name, model) in &variants {
            let ev = evaluate_stream(model, &cfg.adapter, &stream)?;
            let [_, adapted] = ev.metrics(&group, seed)?;
            report.push(RunMetrics { method: name.to_string(), ..adapted })?;
        }
    }
    report.write(&dir, "ablation")?;
    record(cfg, "ablate")?;
    Ok(report)
}

/// One row of the consolidated metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub report: String,
    pub group: String,
    pub method: String,
    pub n: usize,
    pub median_rmse: f64,
    pub q1_rmse: f64,
    pub q3_rmse: f64,
    pub iqr_rmse: f64,
    pub median_r2: Option<f64>,
    pub median_delta_pct: Option<f64>,
}

impl HeaderOnly for ReportRow {
    fn header() -> &'static [&'static str] {
        &[
            "run", "report", "group", "method", "n", "median_rmse", "q1_rmse", "q3_rmse", "iqr_rmse", "median_r2",
            "median_delta_pct",
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrackingPoint {
    run: String,
    log: String,
    t: f64,
    e_norm: f64,
}

impl HeaderOnly for TrackingPoint {
    fn header() -> &'static [&'static str] {
        &["run", "log", "t", "e_norm"]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SigmaPoint {
    run: String,
    log: String,
    t: f64,
    sigma_hat: f64,
}

impl HeaderOnly for SigmaPoint {
    fn header() -> &'static [&'static str] {
        &["run", "log", "t", "sigma_hat"]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ResetPoint {
    run: String,
    log: String,
    t: f64,
    eps_ema_norm: f64,
    reset: u8,
}

impl HeaderOnly for ResetPoint {
    fn header() -> &'static [&'static str] {
        &["run", "log", "t", "eps_ema_norm", "reset"]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportOutput {
    pub rows: Vec<ReportRow>,
    pub plots: Vec<PathBuf>,
}

const REPORT_SOURCES: [(&str, &str, Option<&str>); 3] = [
    ("eval/prediction_runs.csv", "prediction", Some("fdt")),
    ("scenario/tracking_runs.csv", "tracking", Some("none")),
    ("ablation/ablation_runs.csv", "ablation", Some("full")),
];

fn sorted_csvs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    v.retain(|p| p.extension().is_some_and(|e| e == "csv") && !file_stem(p).ends_with("_timing"));
    v.sort();
    Ok(v)
}

/// Merge the metrics of `runs` and export per-figure data and SVG plots to
/// `out/report`. Figure CSVs: `tracking_error.csv` (run, log, t, e_norm),
/// `sigma_hat.csv` (run, log, t, sigma_hat), `resets.csv` (run, log, t,
/// eps_ema_norm, reset), `attention.csv` (run, log, t, alpha_0..).
pub fn report(runs: &[PathBuf], out: &Path) -> Result<ReportOutput> {
    let dir = out.join("report");
    let plots_dir = dir.join("plots");
    std::fs::create_dir_all(&plots_dir)?;
    let mut output = ReportOutput::default();
    let mut tracking = Vec::new();
    let mut sigma = Vec::new();
    let mut resets = Vec::new();
    let mut attention: Vec<(String, String, Vec<f64>)> = Vec::new();
    let mut alpha_width = None;
    for run_dir in runs {
        if !run_dir.is_dir() {
            return Err(Error::Config(format!("run directory {} missing", run_dir.display())));
        }
        let run = run_dir.file_name().map_or_else(|| run_dir.display().to_string(), |s| s.to_string_lossy().into_owned());
        for (rel, kind, reference) in REPORT_SOURCES {
            let p = run_dir.join(rel);
            if !p.exists() {
                continue;
            }
            let rep = MetricsReport::read_runs(&p, reference)?;
            for s in rep.summary() {
                output.rows.push(ReportRow {
                    run: run.clone(),
                    report: kind.to_string(),
                    group: s.group,
                    method: s.method,
                    n: s.n,
                    median_rmse: s.median_rmse,
                    q1_rmse: s.q1_rmse,
                    q3_rmse: s.q3_rmse,
                    iqr_rmse: s.iqr_rmse,
                    median_r2: s.median_r2,
                    median_delta_pct: s.median_delta_pct,
                });
            }
        }
        for p in sorted_csvs(&run_dir.join("scenario/logs"))? {
            let stem = file_stem(&p);
            if stem.ends_with("_attention") || stem.ends_with("_adapter") {
                continue;
            }
            let log = LoopLogColumns::read(&p)?;
            let label = format!("{run}_{stem}");
            tracking.extend(log.t.iter().zip(&log.e_norm).map(|(&t, &e)| TrackingPoint { run: run.clone(), log: stem.clone(), t, e_norm: e }));
            sigma.extend(log.t.iter().zip(&log.sigma_hat).map(|(&t, &s)| SigmaPoint { run: run.clone(), log: stem.clone(), t, sigma_hat: s }));
            resets.extend(log.t.iter().zip(log.eps_ema.iter().zip(&log.reset)).map(|(&t, (&e, &r))| ResetPoint {
                run: run.clone(),
                log: stem.clone(),
                t,
                eps_ema_norm: e,
                reset: r,
            }));
            let f = plots_dir.join(format!("{label}_tracking_error.svg"));
            plot::lines(&f, &format!("{stem}: tracking error"), "t [s]", "|e|", &log.t, &[("|e|", &log.e_norm)])?;
            output.plots.push(f);
            let f = plots_dir.join(format!("{label}_sigma_hat.svg"));
            plot::lines(&f, &format!("{stem}: switching gain"), "t [s]", "sigma_hat", &log.t, &[("sigma_hat", &log.sigma_hat)])?;
            output.plots.push(f);
            if log.reset.iter().any(|&r| r == 1) || log.eps_ema.iter().any(|&e| e != 0.0) {
                let marks: Vec<f64> = log.reset.iter().map(|&r| f64::from(r)).collect();
                let f = plots_dir.join(format!("{label}_resets.svg"));
                plot::lines(&f, &format!("{stem}: innovation EMA and resets"), "t [s]", "", &log.t, &[("|eps_ema|", &log.eps_ema), ("reset", &marks)])?;
                output.plots.push(f);
            }
            let ap = p.with_file_name(format!("{stem}_attention.csv"));
            if ap.exists() {
                let (t, alpha) = read_attention(&ap)?;
                let w = alpha.first().map_or(0, Vec::len);
                if *alpha_width.get_or_insert(w) != w {
                    return Err(Error::Dimension(format!("attention width {w} in {}", ap.display())));
                }
                let series: Vec<Vec<f64>> = (0..w).map(|c| alpha.iter().map(|a| a[c]).collect()).collect();
                let named: Vec<(String, &Vec<f64>)> = series.iter().enumerate().map(|(c, s)| (format!("alpha_{c}"), s)).collect();
                let refs: Vec<(&str, &[f64])> = named.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect();
                let f = plots_dir.join(format!("{label}_attention.svg"));
                plot::lines(&f, &format!("{stem}: memory attention"), "t [s]", "alpha", &t, &refs)?;
                output.plots.push(f);
                attention.extend(t.into_iter().zip(alpha).map(|(t, a)| {
                    let mut row = vec![t];
                    row.extend(a);
                    (run.clone(), stem.clone(), row)
                }));
            }
        }
    }
    write_rows(&dir.join("metrics.csv"), &output.rows)?;
    write_rows(&dir.join("tracking_error.csv"), &tracking)?;
    write_rows(&dir.join("sigma_hat.csv"), &sigma)?;
    write_rows(&dir.join("resets.csv"), &resets)?;
    let mut w = csv::Writer::from_path(dir.join("attention.csv"))?;
    let mut header = vec!["run".to_string(), "log".to_string(), "t".to_string()];
    header.extend((0..alpha_width.unwrap_or(0)).map(|i| format!("alpha_{i}")));
    w.write_record(&header)?;
    for (run, log, row) in &attention {
        let mut rec = vec![run.clone(), log.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Manifest::update(out, "report", CommandEntry::default())?;
    Ok(output)
}

/// Columns of a closed-loop log needed for the figures.
struct LoopLogColumns {
    t: Vec<f64>,
    e_norm: Vec<f64>,
    sigma_hat: Vec<f64>,
    eps_ema: Vec<f64>,
    reset: Vec<u8>,
}

impl LoopLogColumns {
    fn read(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let header = rd.headers()?.clone();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Config(format!("{}: no column {name}", path.display())))
        };
        let e_cols: Vec<usize> =
            header.iter().enumerate().filter(|(_, h)| h.starts_with("e_")).map(|(i, _)| i).collect();
        let (ct, cs, ce, cr) = (col("t")?, col("sigma_hat")?, col("eps_ema_norm")?, col("reset")?);
        let mut out = Self { t: vec![], e_norm: vec![], sigma_hat: vec![], eps_ema: vec![], reset: vec![] };
        let num = |rec: &csv::StringRecord, i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Config(format!("{}: bad number {}", path.display(), &rec[i])))
        };
        for rec in rd.records() {
            let rec = rec?;
            out.t.push(num(&rec, ct)?);
            let mut sq = 0.0;
            for &c in &e_cols {
                sq += num(&rec, c)?.powi(2);
            }
            out.e_norm.push(sq.sqrt());
            out.sigma_hat.push(num(&rec, cs)?);
            out.eps_ema.push(num(&rec, ce)?);
            out.reset.push(num(&rec, cr)? as u8);
        }
        Ok(out)
    }
}

fn read_attention(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut rd = csv::Reader::from_path(path)?;
    let (mut t, mut alpha) = (Vec::new(), Vec::new());
    for rec in rd.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Config(format!("{}: bad number {s}", path.display()))))
            .collect::<Result<_>>()?;
        t.push(vals[0]);
        alpha.push(vals[1..].to_vec());
    }
    Ok((t, alpha))
}

/// Everything from data generation through reporting.
pub fn run_all(cfg: &ExperimentConfig) -> Result<()> {
    generate_data(cfg)?;
    train_command(cfg)?;
    let ck = checkpoint_path(&cfg.out_dir);
    eval_prediction(cfg, &ck)?;
    run_scenario(cfg, &ck, &ScenarioFilter::default())?;
    ablate(cfg, &ck)?;
    report(std::slice::from_ref(&cfg.out_dir), &cfg.out_dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_per_stream() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(0, 1));
        assert_eq!(derive_seed(5, 3), derive_seed(5, 3));
    }

    #[test]
    fn full_grid_has_eight_cells() {
        let cfg = ExperimentConfig::desk();
        assert_eq!(scenario_cells(&cfg, &ScenarioFilter::default()).len(), 8);
        let one = ScenarioFilter { scenario: Some(TrajectoryKind::Figure8), payload: Some(0.5), speed: Some(1.0) };
        let cells = scenario_cells(&cfg, &one);
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].group(), "figure8/ood/1");
    }

    #[test]
    fn contiguous_split_sizes() {
        let samples: Vec<_> = (0..100)
            .map(|k| {
                let z = nalgebra::DVector::zeros(3);
                crate::sim::ResidualSample { t: k as f64, chi: z.clone(), chi_dot: z.clone(), chi_ddot: z.clone(), tau: z.clone(), r: z }
            })
            .collect();
        let s = split_contiguous(&[Trajectory { samples }], 0.8, 0.1);
        assert_eq!((s.train[0].len(), s.val[0].len(), s.test[0].len()), (80, 10, 10));
        assert_eq!(s.val[0].samples[0].t, 80.0);
        assert_eq!(s.test[0].samples[0].t, 90.0);
    }
}
