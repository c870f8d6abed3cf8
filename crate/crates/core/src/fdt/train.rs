use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::FdtConfig;
use super::model::FdtModel;
use super::window::NormStats;
use crate::error::{check_len, Error, Result};
use crate::numerics::{AdamConfig, Graph, Tensor};
use crate::sim::Trajectory;

/// `sum_t sum_j ||r_{t+j} - rhat_{t+j|t}||^2` over aligned forecast/target pairs.
pub fn multi_step_loss(forecasts: &[DMatrix<f64>], targets: &[DMatrix<f64>]) -> Result<f64> {
    check_len("targets", targets.len(), forecasts.len())?;
    let mut s = 0.0;
    for (f, t) in forecasts.iter().zip(targets) {
        if f.shape() != t.shape() {
            return Err(Error::Dimension(format!("forecast {:?} vs target {:?}", f.shape(), t.shape())));
        }
        s += (f - t).norm_squared();
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without validation improvement.
    pub patience: usize,
    /// Spacing between consecutive training windows, in samples.
    pub window_stride: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, batch_size: 256, epochs: 100, patience: 10, window_stride: 1, seed: 0 }
    }
}

/// Normalized per-trajectory series with an index of valid window end points.
#[derive(Clone, Debug)]
pub struct WindowDataset {
    d_v: usize,
    n: usize,
    t_s: usize,
    t_l: usize,
    horizon: usize,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    index: Vec<(usize, usize)>,
}

impl WindowDataset {
    /// A window ending at sample `t` needs `t + 1 >= T_l` and `t + k` inside
    /// the trajectory.
    pub fn new(trajs: &[Trajectory], cfg: &FdtConfig, norm: &NormStats, stride: usize) -> Result<Self> {
        let (n, d_v, h) = (cfg.n, cfg.d_v(), cfg.horizon());
        let stride = stride.max(1);
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut index = Vec::new();
        for (ti, tr) in trajs.iter().enumerate() {
            let mut xin = Vec::with_capacity(tr.len() * d_v);
            let mut xout = Vec::with_capacity(tr.len() * n);
            for s in &tr.samples {
                check_len("sample", s.n(), n)?;
                for (c, v) in s.chi.iter().chain(s.chi_dot.iter()).chain(s.tau.iter()).enumerate() {
                    xin.push(norm.input(c, *v));
                }
                xout.extend(s.r.iter().enumerate().map(|(i, v)| norm.target(i, *v)));
            }
            if tr.len() >= cfg.t_l + h {
                index.extend((cfg.t_l - 1..tr.len() - h + 1).step_by(stride).map(|t| (ti, t)));
            }
            inputs.push(xin);
            targets.push(xout);
        }
        Ok(Self { d_v, n, t_s: cfg.t_s, t_l: cfg.t_l, horizon: h, inputs, targets, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// `(trajectory, end sample)` of window `i`.
    pub fn window(&self, i: usize) -> (usize, usize) {
        self.index[i]
    }

    /// Short and long blocks (`B*d_v x t_s`, `B*d_v x t_l`) and normalized
    /// targets (`B x (k+1)n`) for the given windows.
    pub fn batch(&self, windows: &[usize]) -> (Tensor, Tensor, Tensor) {
        let (d_v, b) = (self.d_v, windows.len());
        let mut zl = Tensor::zeros(b * d_v, self.t_l);
        let mut tg = Tensor::zeros(b, self.horizon * self.n);
        for (bi, &w) in windows.iter().enumerate() {
            let (ti, t) = self.index[w];
            let x = &self.inputs[ti];
            let start = t + 1 - self.t_l;
            for c in 0..d_v {
                let row = zl.row_mut(bi * d_v + c);
                for (j, r) in row.iter_mut().enumerate() {
                    *r = x[(start + j) * d_v + c];
                }
            }
            let y = &self.targets[ti];
            tg.row_mut(bi).copy_from_slice(&y[t * self.n..(t + self.horizon) * self.n]);
        }
        let off = self.t_l - self.t_s;
        let zs = Tensor::from_fn(b * d_v, self.t_s, |r, j| zl.get(r, off + j));
        (zs, zl, tg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_s: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
}

impl TrainLog {
    /// Losses to `path`; wall-clock times to a `_timing` sidecar next to it so
    /// that the loss log stays byte-reproducible.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "val_loss"])?;
        for e in &self.epochs {
            w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.val_loss.to_string()])?;
        }
        w.flush()?;
        let mut t = std::fs::File::create(timing_path(path))?;
        writeln!(t, "epoch,wall_s")?;
        for e in &self.epochs {
            writeln!(t, "{},{}", e.epoch, e.wall_s)?;
        }
        Ok(())
    }
}

/// `dir/name.csv` -> `dir/name_timing.csv`.
pub fn timing_path(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("log");
    path.with_file_name(format!("{stem}_timing.csv"))
}

/// Mean per-window loss (normalized units) over a dataset.
pub fn evaluate_loss(model: &FdtModel, data: &WindowDataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("no evaluation windows".into()));
    }
    let ids: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in ids.chunks(batch_size.max(1)) {
        let (zs, zl, tg) = data.batch(chunk);
        let mut g = Graph::inference();
        let (zs, zl) = (g.input(zs), g.input(zl));
        let out = model.net.forward_batch(&mut g, &model.store, zs, zl, chunk.len());
        let l = g.sq_err_sum(out.pred, tg);
        total += g.value(l).get(0, 0);
    }
    Ok(total / data.len() as f64)
}

/// Adam on the multi-step loss with validation-based early stopping; the
/// model is left holding the best-validation parameters.
pub fn train(model: &mut FdtModel, train: &WindowDataset, val: &WindowDataset, tc: &TrainConfig) -> Result<TrainLog> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("no training windows".into()));
    }
    if tc.batch_size == 0 || !(tc.lr > 0.0) {
        return Err(Error::InvalidParameter("batch size and learning rate must be positive".into()));
    }
    let adam = AdamConfig { lr: tc.lr, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog { best_val: f64::INFINITY, ..Default::default() };
    let mut best = model.store.snapshot();
    let mut since_best = 0;
    let start = Instant::now();
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let (zs, zl, tg) = train.batch(chunk);
            let mut g = Graph::new();
            let (zs, zl) = (g.input(zs), g.input(zl));
            let out = model.net.forward_batch(&mut g, &model.store, zs, zl, chunk.len());
            let sse = g.sq_err_sum(out.pred, tg);
            let v = g.value(sse).get(0, 0);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            total += v;
            let loss = g.scale(sse, 1.0 / chunk.len() as f64);
            g.backward(loss);
            g.accumulate_param_grads(&mut model.store);
            model.store.adam_step(&adam);
        }
        let train_loss = total / train.len() as f64;
        let val_loss = if val.is_empty() { train_loss } else { evaluate_loss(model, val, tc.batch_size)? };
        log.epochs.push(EpochRecord { epoch, train_loss, val_loss, wall_s: start.elapsed().as_secs_f64() });
        if val_loss < log.best_val {
            log.best_val = val_loss;
            log.best_epoch = epoch;
            best = model.store.snapshot();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                break;
            }
        }
    }
    model.store.restore(&best);
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        let z = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert_eq!(multi_step_loss(&[z.clone()], &[z.clone()]).unwrap(), 0.0);
        let e = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert_eq!(multi_step_loss(&[e], &[DMatrix::zeros(1, 2)]).unwrap(), 25.0);
        assert!(multi_step_loss(&[z], &[]).is_err());
    }
}
