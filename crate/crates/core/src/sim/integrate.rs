use nalgebra::DVector;

use super::disturbance::{disturbance, DisturbanceState};
use super::model::PlantModel;
use super::payload::PayloadSchedule;
use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedState {
    pub chi: DVector<f64>,
    pub chi_dot: DVector<f64>,
    pub chi_ddot: DVector<f64>,
    pub t: f64,
}

impl GeneralizedState {
    pub fn at_rest(chi: DVector<f64>) -> Self {
        let n = chi.len();
        Self { chi, chi_dot: DVector::zeros(n), chi_ddot: DVector::zeros(n), t: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.chi.iter().chain(self.chi_dot.iter()).chain(self.chi_ddot.iter()).all(|v| v.is_finite())
            && self.t.is_finite()
    }
}

/// One fixed RK4 step of `(chi, chi_dot)` under constant `tau`. The filtered
/// noise is held over the step and advanced afterwards; drag is evaluated at
/// every stage. The returned `chi_ddot` is the forward-dynamics acceleration
/// at the new state under the same `tau`.
pub fn step(
    model: &PlantModel,
    state: &GeneralizedState,
    tau: &DVector<f64>,
    dt: f64,
    dist: &mut DisturbanceState,
) -> Result<GeneralizedState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let n = model.n();
    check_len("tau", tau.len(), n)?;
    check_len("chi", state.chi.len(), n)?;
    let accel = |q: &DVector<f64>, v: &DVector<f64>, dist: &DisturbanceState| {
        model.forward_dynamics(q, v, tau, &disturbance(model, v, dist))
    };
    let (q0, v0) = (&state.chi, &state.chi_dot);
    let a1 = accel(q0, v0, dist)?;
    let q2 = q0 + v0 * (0.5 * dt);
    let v2 = v0 + &a1 * (0.5 * dt);
    let a2 = accel(&q2, &v2, dist)?;
    let q3 = q0 + &v2 * (0.5 * dt);
    let v3 = v0 + &a2 * (0.5 * dt);
    let a3 = accel(&q3, &v3, dist)?;
    let q4 = q0 + &v3 * dt;
    let v4 = v0 + &a3 * dt;
    let a4 = accel(&q4, &v4, dist)?;
    let chi = q0 + (v0 + &v2 * 2.0 + &v3 * 2.0 + &v4) * (dt / 6.0);
    let chi_dot = v0 + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0);
    dist.advance(model, dt);
    let chi_ddot = accel(&chi, &chi_dot, dist)?;
    let next = GeneralizedState { chi, chi_dot, chi_ddot, t: state.t + dt };
    if !next.is_finite() {
        return Err(Error::NonFinite(format!("state after step at t = {}", next.t)));
    }
    Ok(next)
}

/// Decomposition of `tau - Mbar chi_ddot` into its physical contributions.
#[derive(Clone, Debug)]
pub struct ResidualTerms {
    pub inertial: DVector<f64>,
    pub coriolis: DVector<f64>,
    pub gravity: DVector<f64>,
    pub disturbance: DVector<f64>,
}

impl ResidualTerms {
    pub fn total(&self) -> DVector<f64> {
        &self.inertial + &self.coriolis + &self.gravity + &self.disturbance
    }
}

/// A plant instance: model, payload schedule, state and disturbance generator.
#[derive(Clone, Debug)]
pub struct Simulator {
    base: PlantModel,
    model: PlantModel,
    schedule: PayloadSchedule,
    state: GeneralizedState,
    dist: DisturbanceState,
}

impl Simulator {
    pub fn new(
        base: PlantModel,
        schedule: PayloadSchedule,
        chi0: DVector<f64>,
        chi_dot0: DVector<f64>,
        seed: u64,
    ) -> Result<Self> {
        base.validate()?;
        check_len("chi0", chi0.len(), base.n())?;
        check_len("chi_dot0", chi_dot0.len(), base.n())?;
        let model = base.with_payload(schedule.mass_at(0.0, base.payload));
        let dist = DisturbanceState::new(&model, seed);
        let n = base.n();
        let mut sim = Self {
            base,
            model,
            schedule,
            state: GeneralizedState { chi: chi0, chi_dot: chi_dot0, chi_ddot: DVector::zeros(n), t: 0.0 },
            dist,
        };
        sim.state.chi_ddot = sim.acceleration_under(&DVector::zeros(n))?;
        Ok(sim)
    }

    /// Start the clock at `t0` instead of zero (payload events use this clock).
    pub fn starting_at(mut self, t0: f64) -> Result<Self> {
        self.state.t = t0;
        self.model = self.base.with_payload(self.schedule.mass_at(t0, self.base.payload));
        self.state.chi_ddot = self.acceleration_under(&DVector::zeros(self.base.n()))?;
        Ok(self)
    }

    pub fn state(&self) -> &GeneralizedState {
        &self.state
    }

    /// Plant model without the scheduled payload.
    pub fn base_model(&self) -> &PlantModel {
        &self.base
    }

    /// Model with the payload active at the current time.
    pub fn model(&self) -> &PlantModel {
        &self.model
    }

    pub fn disturbance_state(&self) -> &DisturbanceState {
        &self.dist
    }

    pub fn payload(&self) -> f64 {
        self.model.payload
    }

    /// Acceleration at the current state if `tau` were applied now.
    pub fn acceleration_under(&self, tau: &DVector<f64>) -> Result<DVector<f64>> {
        let d = disturbance(&self.model, &self.state.chi_dot, &self.dist);
        self.model.forward_dynamics(&self.state.chi, &self.state.chi_dot, tau, &d)
    }

    /// Term-by-term residual at the current state for acceleration `chi_ddot`.
    pub fn residual_terms(&self, chi_ddot: &DVector<f64>, mbar: &DVector<f64>) -> Result<ResidualTerms> {
        let s = &self.state;
        let m = self.model.mass_matrix(&s.chi)?;
        let mut m_minus = m;
        for i in 0..mbar.len() {
            m_minus[(i, i)] -= mbar[i];
        }
        Ok(ResidualTerms {
            inertial: m_minus * chi_ddot,
            coriolis: self.model.coriolis_matrix(&s.chi, &s.chi_dot)? * &s.chi_dot,
            gravity: self.model.gravity_vector(&s.chi)?,
            disturbance: disturbance(&self.model, &s.chi_dot, &self.dist),
        })
    }

    pub fn step(&mut self, tau: &DVector<f64>, dt: f64) -> Result<&GeneralizedState> {
        let payload = self.schedule.mass_at(self.state.t, self.base.payload);
        if payload != self.model.payload {
            self.model = self.base.with_payload(payload);
        }
        self.state = step(&self.model, &self.state, tau, dt, &mut self.dist)?;
        Ok(&self.state)
    }
}
