use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::Tensor;
use crate::sim::Trajectory;

/// Per-channel z-score statistics for model inputs and residual targets,
/// fitted on training data and frozen afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

fn mean_std(cols: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    cols.iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / c.len() as f64;
            let v = c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / c.len() as f64;
            let s = v.sqrt();
            (m, if s > 1e-9 { s } else { 1.0 })
        })
        .unzip()
}

impl NormStats {
    pub fn identity(n: usize) -> Self {
        Self {
            in_mean: vec![0.0; 3 * n],
            in_std: vec![1.0; 3 * n],
            out_mean: vec![0.0; n],
            out_std: vec![1.0; n],
        }
    }

    pub fn fit(trajs: &[Trajectory]) -> Result<Self> {
        let n = trajs
            .iter()
            .find_map(Trajectory::n)
            .ok_or_else(|| Error::EmptyDataset("no samples to fit normalization".into()))?;
        let mut ins = vec![Vec::new(); 3 * n];
        let mut outs = vec![Vec::new(); n];
        for s in trajs.iter().flat_map(|t| &t.samples) {
            check_len("sample", s.n(), n)?;
            for i in 0..n {
                ins[i].push(s.chi[i]);
                ins[n + i].push(s.chi_dot[i]);
                ins[2 * n + i].push(s.tau[i]);
                outs[i].push(s.r[i]);
            }
        }
        let (in_mean, in_std) = mean_std(&ins);
        let (out_mean, out_std) = mean_std(&outs);
        Ok(Self { in_mean, in_std, out_mean, out_std })
    }

    pub fn n(&self) -> usize {
        self.out_mean.len()
    }

    pub fn input(&self, ch: usize, v: f64) -> f64 {
        (v - self.in_mean[ch]) / self.in_std[ch]
    }

    pub fn target(&self, ch: usize, v: f64) -> f64 {
        (v - self.out_mean[ch]) / self.out_std[ch]
    }

    pub fn denorm_target(&self, ch: usize, v: f64) -> f64 {
        v * self.out_std[ch] + self.out_mean[ch]
    }
}

/// The most recent `T_l` model inputs `x_t = (chi_t, chi_dot_t, tau_{t-1})`.
#[derive(Clone, Debug)]
pub struct HistoryWindow {
    n: usize,
    cap: usize,
    buf: VecDeque<Vec<f64>>,
}

impl HistoryWindow {
    pub fn new(n: usize, t_l: usize) -> Self {
        Self { n, cap: t_l, buf: VecDeque::with_capacity(t_l) }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.buf.len() == self.cap
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }

    /// `tau_prev` is the input applied over the interval that ended at this sample.
    pub fn push(&mut self, chi: &DVector<f64>, chi_dot: &DVector<f64>, tau_prev: &DVector<f64>) -> Result<()> {
        check_len("chi", chi.len(), self.n)?;
        check_len("chi_dot", chi_dot.len(), self.n)?;
        check_len("tau_prev", tau_prev.len(), self.n)?;
        let x: Vec<f64> = chi.iter().chain(chi_dot.iter()).chain(tau_prev.iter()).copied().collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("history sample".into()));
        }
        if self.buf.len() == self.cap {
            self.buf.pop_front();
        }
        self.buf.push_back(x);
        Ok(())
    }

    /// Channel-major normalized blocks: `d_v x t_s` (latest `t_s` samples)
    /// and `d_v x T_l`, oldest sample first.
    pub fn blocks(&self, norm: &NormStats, t_s: usize) -> Result<(Tensor, Tensor)> {
        if !self.is_full() {
            return Err(Error::Underfilled { have: self.buf.len(), need: self.cap });
        }
        let d_v = 3 * self.n;
        let zl = Tensor::from_fn(d_v, self.cap, |c, j| norm.input(c, self.buf[j][c]));
        let off = self.cap - t_s;
        let zs = Tensor::from_fn(d_v, t_s, |c, j| zl.get(c, off + j));
        Ok((zs, zl))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_buffer_keeps_latest() {
        let mut w = HistoryWindow::new(1, 3);
        for k in 0..5 {
            let v = DVector::from_element(1, k as f64);
            w.push(&v, &v, &v).unwrap();
        }
        let (zs, zl) = w.blocks(&NormStats::identity(1), 2).unwrap();
        assert_eq!(zl.row(0), &[2.0, 3.0, 4.0]);
        assert_eq!(zs.row(2), &[3.0, 4.0]);
    }

    #[test]
    fn underfilled_window_errors() {
        let mut w = HistoryWindow::new(1, 3);
        let v = DVector::from_element(1, 0.0);
        w.push(&v, &v, &v).unwrap();
        assert!(matches!(
            w.blocks(&NormStats::identity(1), 2),
            Err(Error::Underfilled { have: 1, need: 3 })
        ));
    }
}
