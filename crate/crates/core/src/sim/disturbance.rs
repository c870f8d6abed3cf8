use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::PlantModel;

/// Generator state of the external disturbance: one first-order low-pass
/// (Ornstein-Uhlenbeck) noise channel per generalized coordinate.
#[derive(Clone, Debug)]
pub struct DisturbanceState {
    filtered: Vec<f64>,
    rng: ChaCha8Rng,
}

impl DisturbanceState {
    /// Starts from a draw of the stationary distribution so there is no
    /// start-up transient.
    pub fn new(model: &PlantModel, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let filtered = model
            .disturbance
            .noise_amplitude
            .iter()
            .map(|a| {
                let z: f64 = StandardNormal.sample(&mut rng);
                a / std::f64::consts::SQRT_2 * z
            })
            .collect();
        Self { filtered, rng }
    }

    pub fn filtered(&self) -> &[f64] {
        &self.filtered
    }

    /// Advance the filtered noise by `dt` seconds (exact discretisation).
    pub fn advance(&mut self, model: &PlantModel, dt: f64) {
        let p = &model.disturbance;
        let a = (-2.0 * std::f64::consts::PI * p.noise_bandwidth_hz * dt).exp();
        let b = (1.0 - a * a).sqrt();
        for (x, amp) in self.filtered.iter_mut().zip(&p.noise_amplitude) {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *x = a * *x + b * amp / std::f64::consts::SQRT_2 * z;
        }
    }
}

/// `d(chi_dot, t) = D chi_dot + n(t)`, with `n` the current filtered noise.
pub fn disturbance(model: &PlantModel, chi_dot: &DVector<f64>, state: &DisturbanceState) -> DVector<f64> {
    let mut d = model.drag_force(chi_dot);
    for (di, ni) in d.iter_mut().zip(&state.filtered) {
        *di += ni;
    }
    d
}
