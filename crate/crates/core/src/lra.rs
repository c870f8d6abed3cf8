//! Latent residual adapter: recursive least squares on the frozen model's
//! latent feature, correcting the one-step residual prediction online.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    /// Forgetting factor in (0, 1].
    pub lambda: f64,
    /// Covariance scale at start and after a reset.
    pub sigma0: f64,
    /// Reset when the innovation EMA norm strictly exceeds this.
    pub delta_thresh: f64,
    /// EMA smoothing in [0, 1).
    pub alpha_ema: f64,
    pub reset_enabled: bool,
    /// Factor applied to the EMA after a reset so it does not fire again at once.
    pub ema_decay_on_reset: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            lambda: 0.99,
            sigma0: 1.0,
            delta_thresh: 3.2,
            alpha_ema: 0.9,
            reset_enabled: true,
            ema_decay_on_reset: 0.5,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidParameter(format!("lambda {} not in (0, 1]", self.lambda)));
        }
        if !(self.sigma0 > 0.0) {
            return Err(Error::InvalidParameter("sigma0 must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.alpha_ema) {
            return Err(Error::InvalidParameter(format!("alpha_ema {} not in [0, 1)", self.alpha_ema)));
        }
        if !(self.delta_thresh >= 0.0) || !(0.0..=1.0).contains(&self.ema_decay_on_reset) {
            return Err(Error::InvalidParameter("reset threshold / decay out of range".into()));
        }
        Ok(())
    }
}

/// Adapter weights, covariance and innovation statistics. Holds no model
/// parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterState {
    pub w: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub eps_ema: DVector<f64>,
    pub steps: u64,
    pub resets: u64,
}

/// Outcome of one adapter update.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateReport {
    /// Innovation `r - (base + W^T g')` with the pre-update weights.
    pub eps: DVector<f64>,
    pub ema_norm: f64,
    pub reset: bool,
}

impl AdapterState {
    pub fn new(d_k: usize, n: usize, cfg: &AdapterConfig) -> Self {
        Self {
            w: DMatrix::zeros(d_k, n),
            sigma: DMatrix::identity(d_k, d_k) * cfg.sigma0,
            eps_ema: DVector::zeros(n),
            steps: 0,
            resets: 0,
        }
    }

    pub fn d_k(&self) -> usize {
        self.w.nrows()
    }

    pub fn n(&self) -> usize {
        self.w.ncols()
    }

    /// `base + W^T g'`.
    pub fn adapt_predict(&self, base: &DVector<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("base", base.len(), self.n())?;
        check_len("latent", g.len(), self.d_k())?;
        Ok(base + self.w.tr_mul(g))
    }

    /// One RLS step with common regressor `g'` for all output channels.
    pub fn rls_update(
        &mut self,
        g: &DVector<f64>,
        r: &DVector<f64>,
        base: &DVector<f64>,
        cfg: &AdapterConfig,
    ) -> Result<DVector<f64>> {
        check_len("measured residual", r.len(), self.n())?;
        let pred = self.adapt_predict(base, g)?;
        if g.iter().chain(r.iter()).chain(base.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("adapter input".into()));
        }
        let eps = r - pred;
        let sg = &self.sigma * g;
        let denom = cfg.lambda + g.dot(&sg);
        let k = &sg / denom;
        self.w += &k * eps.transpose();
        // sigma g' is reused: K g'^T Sigma = K (Sigma g')^T by symmetry
        self.sigma -= &k * sg.transpose();
        self.sigma /= cfg.lambda;
        let sym = (&self.sigma + self.sigma.transpose()) * 0.5;
        self.sigma = sym;
        self.eps_ema = &self.eps_ema * cfg.alpha_ema + &eps * (1.0 - cfg.alpha_ema);
        self.steps += 1;
        Ok(eps)
    }

    /// Reinitialize the covariance when the innovation EMA is too large.
    pub fn maybe_reset(&mut self, cfg: &AdapterConfig) -> bool {
        if !cfg.reset_enabled || self.eps_ema.norm() <= cfg.delta_thresh {
            return false;
        }
        let d = self.d_k();
        self.sigma = DMatrix::identity(d, d) * cfg.sigma0;
        self.eps_ema *= cfg.ema_decay_on_reset;
        self.resets += 1;
        true
    }

    /// `rls_update` followed by `maybe_reset`.
    pub fn update(
        &mut self,
        g: &DVector<f64>,
        r: &DVector<f64>,
        base: &DVector<f64>,
        cfg: &AdapterConfig,
    ) -> Result<UpdateReport> {
        let eps = self.rls_update(g, r, base, cfg)?;
        let ema_norm = self.eps_ema.norm();
        let reset = self.maybe_reset(cfg);
        Ok(UpdateReport { eps, ema_norm, reset })
    }

    pub fn sigma_trace(&self) -> f64 {
        self.sigma.trace()
    }
}

/// `sum_tau lambda^(t - tau) ||r - base - W^T g'||^2` over `(g', base, r)` history,
/// most recent last.
pub fn weighted_objective(
    history: &[(DVector<f64>, DVector<f64>, DVector<f64>)],
    w: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let len = history.len();
    history
        .iter()
        .enumerate()
        .map(|(i, (g, base, r))| lambda.powi((len - 1 - i) as i32) * (r - base - w.tr_mul(g)).norm_squared())
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub eps_norm: f64,
    pub ema_norm: f64,
    pub reset: bool,
    pub sigma_trace: f64,
    pub w_norm: f64,
}

impl TraceRow {
    pub fn new(t: f64, state: &AdapterState, rep: &UpdateReport) -> Self {
        Self {
            t,
            eps_norm: rep.eps.norm(),
            ema_norm: rep.ema_norm,
            reset: rep.reset,
            sigma_trace: state.sigma_trace(),
            w_norm: state.w.norm(),
        }
    }
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "eps_norm", "eps_ema_norm", "reset", "sigma_trace", "w_fro"])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.eps_norm.to_string(),
            r.ema_norm.to_string(),
            u8::from(r.reset).to_string(),
            r.sigma_trace.to_string(),
            r.w_norm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(d_k: usize, n: usize) -> (AdapterState, AdapterConfig) {
        let cfg = AdapterConfig::default();
        (AdapterState::new(d_k, n, &cfg), cfg)
    }

    #[test]
    fn zero_weights_or_latent_return_base() {
        let (mut s, _) = state(3, 2);
        let base = DVector::from_vec(vec![1.0, -2.0]);
        let g = DVector::from_vec(vec![0.3, 0.1, 5.0]);
        assert_eq!(s.adapt_predict(&base, &g).unwrap(), base);
        s.w = DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        assert_eq!(s.adapt_predict(&base, &DVector::zeros(3)).unwrap(), base);
    }

    #[test]
    fn planted_weights_reproduce_exactly() {
        let (mut s, _) = state(3, 2);
        let w_star = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -2.0, 0.0, 0.25, 3.0]);
        s.w = w_star.clone();
        let g = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let expect = DVector::from_vec(vec![0.5 + 2.0 + 0.5, 0.25 + 6.0]);
        assert_eq!(s.adapt_predict(&DVector::zeros(2), &g).unwrap(), expect);
    }

    #[test]
    fn zero_innovation_keeps_weights() {
        let (mut s, cfg) = state(2, 2);
        s.w = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let g = DVector::from_vec(vec![0.5, -0.5]);
        let base = DVector::from_vec(vec![0.1, 0.2]);
        let r = s.adapt_predict(&base, &g).unwrap();
        let w0 = s.w.clone();
        let eps = s.rls_update(&g, &r, &base, &cfg).unwrap();
        assert_eq!(eps.norm(), 0.0);
        assert_eq!(s.w, w0);
    }

    #[test]
    fn reset_threshold_is_strict() {
        let (mut s, cfg) = state(2, 2);
        s.sigma *= 0.01;
        s.eps_ema = DVector::from_vec(vec![cfg.delta_thresh, 0.0]);
        assert!(!s.maybe_reset(&cfg));
        s.eps_ema[0] = cfg.delta_thresh * (1.0 + 1e-12);
        assert!(s.maybe_reset(&cfg));
        assert_eq!(s.sigma, DMatrix::identity(2, 2));
        assert!((s.eps_ema[0] - 1.6).abs() < 1e-9);
        let off = AdapterConfig { reset_enabled: false, ..cfg };
        s.eps_ema[0] = 100.0;
        assert!(!s.maybe_reset(&off));
    }

    #[test]
    fn objective_edge_cases() {
        let w = DMatrix::zeros(2, 1);
        assert_eq!(weighted_objective(&[], &w, 0.9), 0.0);
        let g = DVector::from_vec(vec![1.0, 2.0]);
        let w = DMatrix::from_row_slice(2, 1, &[0.5, 0.25]);
        let hist = vec![(g, DVector::from_element(1, 1.0), DVector::from_element(1, 2.0))];
        assert_eq!(weighted_objective(&hist, &w, 0.9), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(AdapterConfig::default().validate().is_ok());
        assert!(AdapterConfig { lambda: 0.0, ..Default::default() }.validate().is_err());
        assert!(AdapterConfig { alpha_ema: 1.0, ..Default::default() }.validate().is_err());
    }
}
