use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdt::timing_path;

/// RMS of `pred - target` over every entry.
pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Dimension(format!("rmse: {} vs {} entries", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyDataset("rmse of nothing".into()));
    }
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// `1 - SSE / SST` per channel, averaged over channels. Rows are samples,
/// `n` channels each, stored row-major. A channel with zero variance scores
/// 1 if predicted exactly and 0 otherwise.
pub fn r2_mean(pred: &[f64], target: &[f64], n: usize) -> Result<f64> {
    if pred.len() != target.len() || n == 0 || pred.len() % n != 0 {
        return Err(Error::Dimension(format!("r2: {} vs {} entries, n = {n}", pred.len(), target.len())));
    }
    let rows = pred.len() / n;
    if rows == 0 {
        return Err(Error::EmptyDataset("r2 of nothing".into()));
    }
    let mut total = 0.0;
    for c in 0..n {
        let mean = (0..rows).map(|r| target[r * n + c]).sum::<f64>() / rows as f64;
        let (mut sse, mut sst) = (0.0, 0.0);
        for r in 0..rows {
            let (p, t) = (pred[r * n + c], target[r * n + c]);
            sse += (p - t) * (p - t);
            sst += (t - mean) * (t - mean);
        }
        total += if sst > 0.0 {
            1.0 - sse / sst
        } else if sse == 0.0 {
            1.0
        } else {
            0.0
        };
    }
    Ok(total / n as f64)
}

/// Linear-interpolated quantile of unsorted data, `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// One scored run: a (group, method, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub group: String,
    pub method: String,
    pub seed: u64,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub min_sigma_hat: Option<f64>,
    /// Wall-clock figures; written to the timing sidecar only.
    #[serde(skip)]
    pub inference_mean_ms: Option<f64>,
    #[serde(skip)]
    pub inference_max_ms: Option<f64>,
}

impl RunMetrics {
    pub fn new(group: &str, method: &str, seed: u64, rmse: f64) -> Self {
        Self {
            group: group.to_string(),
            method: method.to_string(),
            seed,
            rmse,
            r2: None,
            min_sigma_hat: None,
            inference_mean_ms: None,
            inference_max_ms: None,
        }
    }

    pub fn with_inference(mut self, ms: &[f64]) -> Self {
        if !ms.is_empty() {
            self.inference_mean_ms = Some(ms.iter().sum::<f64>() / ms.len() as f64);
            self.inference_max_ms = Some(ms.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: String,
    pub method: String,
    pub n: usize,
    pub median_rmse: f64,
    pub q1_rmse: f64,
    pub q3_rmse: f64,
    pub iqr_rmse: f64,
    pub median_r2: Option<f64>,
    /// Median over seeds of `100 (rmse / rmse_ref - 1)` against the reference
    /// method of the same group and seed.
    pub median_delta_pct: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub runs: Vec<RunMetrics>,
    /// Method that relative changes are computed against.
    pub reference: Option<String>,
}

impl MetricsReport {
    pub fn new(reference: Option<&str>) -> Self {
        Self { runs: Vec::new(), reference: reference.map(str::to_string) }
    }

    pub fn push(&mut self, run: RunMetrics) -> Result<()> {
        if !(run.rmse >= 0.0) {
            return Err(Error::InvalidParameter(format!("rmse {} for {}/{}", run.rmse, run.group, run.method)));
        }
        if let Some(r2) = run.r2 {
            if !(r2 <= 1.0) {
                return Err(Error::InvalidParameter(format!("r2 {r2} for {}/{}", run.group, run.method)));
            }
        }
        self.runs.push(run);
        Ok(())
    }

    /// RMSE per seed for one cell.
    pub fn rmse_by_seed(&self, group: &str, method: &str) -> BTreeMap<u64, f64> {
        self.runs
            .iter()
            .filter(|r| r.group == group && r.method == method)
            .map(|r| (r.seed, r.rmse))
            .collect()
    }

    /// Groups and methods in first-appearance order.
    fn cells(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        for r in &self.runs {
            if !out.iter().any(|(g, m)| *g == r.group && *m == r.method) {
                out.push((r.group.clone(), r.method.clone()));
            }
        }
        out
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        self.cells()
            .into_iter()
            .map(|(group, method)| {
                let runs: Vec<&RunMetrics> =
                    self.runs.iter().filter(|r| r.group == group && r.method == method).collect();
                let rm: Vec<f64> = runs.iter().map(|r| r.rmse).collect();
                let r2: Vec<f64> = runs.iter().filter_map(|r| r.r2).collect();
                let median_delta_pct = self.reference.as_ref().and_then(|reference| {
                    let base = self.rmse_by_seed(&group, reference);
                    let d: Vec<f64> = runs
                        .iter()
                        .filter_map(|r| base.get(&r.seed).map(|b| 100.0 * (r.rmse / b - 1.0)))
                        .collect();
                    (!d.is_empty()).then(|| median(&d))
                });
                let (q1, q3) = (quantile(&rm, 0.25), quantile(&rm, 0.75));
                SummaryRow {
                    n: rm.len(),
                    median_rmse: median(&rm),
                    q1_rmse: q1,
                    q3_rmse: q3,
                    iqr_rmse: q3 - q1,
                    median_r2: (!r2.is_empty()).then(|| median(&r2)),
                    median_delta_pct,
                    group,
                    method,
                }
            })
            .collect()
    }

    pub fn summary_row(&self, group: &str, method: &str) -> Option<SummaryRow> {
        self.summary().into_iter().find(|s| s.group == group && s.method == method)
    }

    /// `<stem>_runs.csv`, `<stem>_summary.csv` and the runs timing sidecar.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let runs_path = dir.join(format!("{stem}_runs.csv"));
        write_rows(&runs_path, &self.runs)?;
        write_rows(&dir.join(format!("{stem}_summary.csv")), &self.summary())?;
        let mut t = std::fs::File::create(timing_path(&runs_path))?;
        writeln!(t, "group,method,seed,inference_mean_ms,inference_max_ms")?;
        for r in &self.runs {
            let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            writeln!(t, "{},{},{},{},{}", r.group, r.method, r.seed, f(r.inference_mean_ms), f(r.inference_max_ms))?;
        }
        Ok(())
    }

    pub fn read_runs(path: &Path, reference: Option<&str>) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let runs = rd.deserialize().collect::<std::result::Result<Vec<RunMetrics>, _>>()?;
        Ok(Self { runs, reference: reference.map(str::to_string) })
    }
}

/// Header-only output for an empty slice.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()>
where
    T: HeaderOnly,
{
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(T::header())?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Column names for CSV files that may have no rows.
pub trait HeaderOnly {
    fn header() -> &'static [&'static str];
}

impl HeaderOnly for RunMetrics {
    fn header() -> &'static [&'static str] {
        &["group", "method", "seed", "rmse", "r2", "min_sigma_hat"]
    }
}

impl HeaderOnly for SummaryRow {
    fn header() -> &'static [&'static str] {
        &["group", "method", "n", "median_rmse", "q1_rmse", "q3_rmse", "iqr_rmse", "median_r2", "median_delta_pct"]
    }
}
