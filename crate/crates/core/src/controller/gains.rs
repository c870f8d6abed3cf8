use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Published 8-entry diagonals, ordered (x, y, z, roll, pitch, yaw, q1, q2).
pub const TABLE_PHI: [f64; 8] = [1.0, 1.0, 1.5, 1.1, 1.1, 1.0, 1.2, 1.2];
pub const TABLE_LAMBDA: [f64; 8] = [2.0, 2.0, 3.5, 1.5, 1.5, 1.2, 3.0, 3.0];
pub const TABLE_MBAR: [f64; 8] = [2.0, 2.0, 2.0, 0.02, 0.02, 0.02, 0.05, 0.05];

/// Entries of the published tables used by the planar plant: x, z, pitch.
const PLANAR_BASE: [usize; 3] = [0, 2, 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// Diagonal of the sliding-surface gain.
    pub phi: Vec<f64>,
    /// Diagonal of the feedback gain.
    pub lambda: Vec<f64>,
    /// Diagonal of the constant nominal inertia.
    pub mbar: Vec<f64>,
    /// Leak of the adaptive switching gain.
    pub nu: f64,
    pub sigma_hat0: f64,
    /// Boundary-layer width replacing `s / |s|` by `sat(s / eps)`.
    pub epsilon_bl: f64,
    /// When false, the switching term uses the discontinuous `s / |s|`.
    pub boundary_layer: bool,
    pub sigma_floor: f64,
}

impl ControllerGains {
    /// Published gains mapped onto an `n`-DOF planar plant: base entries for
    /// x, z and pitch, the arm entry repeated for every joint.
    pub fn table(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Dimension(format!("controller needs n >= 3, got {n}")));
        }
        let pick = |tab: &[f64; 8]| -> Vec<f64> {
            PLANAR_BASE.iter().map(|&i| tab[i]).chain((3..n).map(|j| tab[6 + (j - 3).min(1)])).collect()
        };
        Ok(Self {
            phi: pick(&TABLE_PHI),
            lambda: pick(&TABLE_LAMBDA),
            mbar: pick(&TABLE_MBAR),
            nu: 2.0,
            sigma_hat0: 0.1,
            epsilon_bl: 0.01,
            boundary_layer: true,
            sigma_floor: 1e-6,
        })
    }

    pub fn n(&self) -> usize {
        self.phi.len()
    }

    pub fn mbar_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mbar)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.lambda.len() != n || self.mbar.len() != n {
            return Err(Error::Dimension("gain diagonals differ in length".into()));
        }
        let pos = |v: &[f64]| v.iter().all(|x| *x > 0.0);
        if !pos(&self.phi) || !pos(&self.lambda) || !pos(&self.mbar) {
            return Err(Error::InvalidParameter("gain diagonals must be positive".into()));
        }
        if !(self.nu > 0.0 && self.sigma_hat0 > 0.0 && self.epsilon_bl > 0.0 && self.sigma_floor > 0.0) {
            return Err(Error::InvalidParameter("nu, sigma_hat0, epsilon_bl, floor must be positive".into()));
        }
        Ok(())
    }

    /// Smallest `Lambda_i / Mbar_i`: the slowest exponential rate of the
    /// nominal sliding dynamics.
    pub fn slowest_rate(&self) -> f64 {
        self.lambda.iter().zip(&self.mbar).map(|(l, m)| l / m).fold(f64::INFINITY, f64::min)
    }
}

/// Joint-space PID around a nominal gravity model; used to collect data and
/// to hold the vehicle while the model window fills.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    pub ki: Vec<f64>,
}

impl PidGains {
    /// Critically damped per-channel gains: `omega` 4 rad/s on base
    /// translation, 8 rad/s on pitch and the arm, integral at `omega^3 / 10`.
    pub fn default_for(n: usize) -> Self {
        let omega = |i: usize| if i < 2 { 4.0 } else { 8.0 };
        Self {
            kp: (0..n).map(|i| omega(i) * omega(i)).collect(),
            kd: (0..n).map(|i| 2.0 * omega(i)).collect(),
            ki: (0..n).map(|i| omega(i).powi(3) / 10.0).collect(),
        }
    }
}
