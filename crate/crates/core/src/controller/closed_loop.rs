use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gains::{ControllerGains, PidGains};
use super::law::{adaptive_gain_step, nominal_input, sliding_variable};
use crate::error::{check_len, Error, Result};
use crate::fdt::{timing_path, FdtModel, HistoryWindow};
use crate::lra::{AdapterConfig, AdapterState, TraceRow, UpdateReport};
use crate::sim::{PayloadSchedule, PlantModel, ReferenceTrajectory, ResidualSample, Simulator, Trajectory};

/// Source of the residual compensation `r_hat` in the control input.
#[derive(Clone, Copy, Debug)]
pub enum Compensation<'a> {
    None,
    /// Exact residual from the simulator for the commanded acceleration.
    Oracle,
    /// Frozen model forecast, optionally corrected online by the adapter.
    Model { model: &'a FdtModel, adapter: Option<&'a AdapterConfig> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Physics step.
    pub dt: f64,
    /// Physics steps per control tick (input held in between).
    pub substeps: usize,
    /// Scored duration after the warm-up.
    pub duration: f64,
    /// Warm-up under the PID baseline before scoring starts; extended to
    /// the model's long window when a model is used.
    pub preroll: f64,
    /// Include the adaptive switching term.
    pub switching: bool,
    /// Offset added to the reference position for the initial state.
    pub initial_error: Vec<f64>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self { dt: 1e-3, substeps: 10, duration: 20.0, preroll: 3.0, switching: true, initial_error: Vec::new() }
    }
}

impl LoopConfig {
    pub fn control_dt(&self) -> f64 {
        self.dt * self.substeps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.substeps == 0 || !(self.duration > 0.0) || !(self.preroll >= 0.0) {
            return Err(Error::InvalidParameter("loop timing must be positive".into()));
        }
        if self.initial_error.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial error".into()));
        }
        Ok(())
    }
}

/// Computed-torque PID on the payload-free, disturbance-free nominal model.
#[derive(Clone, Debug)]
pub struct Pid {
    gains: PidGains,
    integral: DVector<f64>,
}

impl Pid {
    pub fn new(gains: PidGains) -> Self {
        let n = gains.kp.len();
        Self { gains, integral: DVector::zeros(n) }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn input(
        &mut self,
        nominal: &PlantModel,
        chi: &DVector<f64>,
        chi_dot: &DVector<f64>,
        e: &DVector<f64>,
        e_dot: &DVector<f64>,
        acc_desired: &DVector<f64>,
        dt: f64,
    ) -> Result<DVector<f64>> {
        self.integral += e * dt;
        let g = &self.gains;
        let a = DVector::from_fn(e.len(), |i, _| {
            acc_desired[i] - g.kd[i] * e_dot[i] - g.kp[i] * e[i] - g.ki[i] * self.integral[i]
        });
        let m = nominal.mass_matrix(chi)?;
        let c = nominal.coriolis_matrix(chi, chi_dot)?;
        Ok(m * a + c * chi_dot + nominal.gravity_vector(chi)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub chi_d: DVector<f64>,
    pub chi: DVector<f64>,
    pub e: DVector<f64>,
    pub s: DVector<f64>,
    pub tau: DVector<f64>,
    pub r: DVector<f64>,
    pub r_hat_base: DVector<f64>,
    pub r_hat_adapted: DVector<f64>,
    pub sigma_hat: f64,
    pub eps_ema_norm: f64,
    pub reset: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ClosedLoopLog {
    pub rows: Vec<LogRow>,
    /// Wall time per scored tick, microseconds.
    pub tick_us: Vec<f64>,
    pub adapter_trace: Vec<TraceRow>,
    /// Memory attention over input channels per scored tick (model runs only).
    pub alpha: Vec<Vec<f64>>,
    /// Forecast wall time per scored tick, milliseconds (model runs only).
    pub inference_ms: Vec<f64>,
}

impl ClosedLoopLog {
    /// RMS over all ticks and coordinates of the tracking error.
    pub fn tracking_rmse(&self) -> f64 {
        let (mut sum, mut count) = (0.0, 0usize);
        for r in &self.rows {
            sum += r.e.norm_squared();
            count += r.e.len();
        }
        if count == 0 {
            0.0
        } else {
            (sum / count as f64).sqrt()
        }
    }

    pub fn min_sigma_hat(&self) -> f64 {
        self.rows.iter().map(|r| r.sigma_hat).fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.rows.first().map_or(0, |r| r.chi.len());
        let mut header = vec!["t".to_string()];
        for name in ["chi_d", "chi", "e", "s", "tau", "r", "r_hat_base", "r_hat_adapted"] {
            header.extend((0..n).map(|i| format!("{name}_{i}")));
        }
        header.extend(["sigma_hat", "eps_ema_norm", "reset"].map(String::from));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.t.to_string()];
            for v in [&r.chi_d, &r.chi, &r.e, &r.s, &r.tau, &r.r, &r.r_hat_base, &r.r_hat_adapted] {
                rec.extend(v.iter().map(|x| x.to_string()));
            }
            rec.push(r.sigma_hat.to_string());
            rec.push(r.eps_ema_norm.to_string());
            rec.push(u8::from(r.reset).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        let mut t = std::fs::File::create(timing_path(path))?;
        writeln!(t, "t,tick_us,inference_ms")?;
        for (i, (r, us)) in self.rows.iter().zip(&self.tick_us).enumerate() {
            let inf = self.inference_ms.get(i).map_or(String::new(), |v| v.to_string());
            writeln!(t, "{},{},{}", r.t, us, inf)?;
        }
        Ok(())
    }

    /// `t, alpha_0..alpha_{d_v}` per tick.
    pub fn write_attention_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.alpha.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|i| format!("alpha_{i}")));
        w.write_record(&header)?;
        for (r, a) in self.rows.iter().zip(&self.alpha) {
            let mut rec = vec![r.t.to_string()];
            rec.extend(a.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Track `traj` on `plant` for `cfg.duration` seconds after a PID warm-up.
///
/// Per control tick: measure the state, form the measured residual from the
/// previously applied input and the current acceleration, push
/// `(chi, chi_dot, tau_prev)` into the model window, forecast, update the
/// adapter, compute the control input and adaptive gain, then hold the input
/// over `cfg.substeps` physics steps.
#[allow(clippy::too_many_arguments)]
pub fn run_closed_loop(
    plant: &PlantModel,
    schedule: PayloadSchedule,
    traj: &ReferenceTrajectory,
    gains: &ControllerGains,
    pid: &PidGains,
    comp: Compensation<'_>,
    cfg: &LoopConfig,
    seed: u64,
) -> Result<ClosedLoopLog> {
    cfg.validate()?;
    gains.validate()?;
    let n = plant.n();
    if gains.n() != n {
        return Err(Error::Dimension(format!("gains for n = {}, plant n = {n}", gains.n())));
    }
    let ctrl_dt = cfg.control_dt();
    let mut pre_ticks = (cfg.preroll / ctrl_dt).round() as usize;
    let mut window = None;
    let mut adapter = None;
    if let Compensation::Model { model, adapter: acfg } = comp {
        let mc = model.config();
        if mc.n != n {
            return Err(Error::Dimension(format!("model for n = {}, plant n = {n}", mc.n)));
        }
        pre_ticks = pre_ticks.max(mc.t_l);
        window = Some(HistoryWindow::new(n, mc.t_l));
        if let Some(a) = acfg {
            a.validate()?;
            adapter = Some((AdapterState::new(mc.d_k, n, a), *a));
        }
    }
    let t0 = -(pre_ticks as f64) * ctrl_dt;
    let start = traj.sample(t0);
    let mut chi0 = start.pos;
    if !cfg.initial_error.is_empty() {
        if cfg.initial_error.len() != n {
            return Err(Error::Dimension(format!("initial error length {}, plant n = {n}", cfg.initial_error.len())));
        }
        chi0 += DVector::from_column_slice(&cfg.initial_error);
    }
    let mut sim = Simulator::new(plant.clone(), schedule, chi0, start.vel, seed)?.starting_at(t0)?;
    let nominal = plant.with_payload(0.0).without_disturbance();
    let mbar = gains.mbar_vec();
    let mut pid = Pid::new(pid.clone());
    let mut tau_prev = DVector::zeros(n);
    let mut sigma_hat = gains.sigma_hat0;
    let total = pre_ticks + (cfg.duration / ctrl_dt).round() as usize;
    let mut log = ClosedLoopLog::default();

    for k in 0..total {
        let tick_start = Instant::now();
        let tk = t0 + k as f64 * ctrl_dt;
        let st = sim.state().clone();
        let r = &tau_prev - mbar.component_mul(&st.chi_ddot);
        if let Some(w) = window.as_mut() {
            w.push(&st.chi, &st.chi_dot, &tau_prev)?;
        }
        let des = traj.sample(tk);
        let e = &st.chi - &des.pos;
        let e_dot = &st.chi_dot - &des.vel;
        let s = sliding_variable(&e, &e_dot, &gains.phi)?;

        if k < pre_ticks {
            let tau = pid.input(&nominal, &st.chi, &st.chi_dot, &e, &e_dot, &des.acc, ctrl_dt)?;
            for _ in 0..cfg.substeps {
                sim.step(&tau, cfg.dt)?;
            }
            tau_prev = tau;
            continue;
        }

        let mut r_hat_base = DVector::zeros(n);
        let mut r_hat = DVector::zeros(n);
        let mut report: Option<UpdateReport> = None;
        if let Compensation::Model { model, .. } = comp {
            let t_inf = Instant::now();
            let fc = model.forward(window.as_ref().expect("model window"))?;
            log.inference_ms.push(t_inf.elapsed().as_secs_f64() * 1e3);
            r_hat_base = fc.one_step();
            r_hat = r_hat_base.clone();
            if let Some((state, acfg)) = adapter.as_mut() {
                let rep = state.update(&fc.latent, &r, &r_hat_base, acfg)?;
                r_hat = state.adapt_predict(&r_hat_base, &fc.latent)?;
                log.adapter_trace.push(TraceRow::new(tk, state, &rep));
                report = Some(rep);
            }
            log.alpha.push(fc.alpha);
        }
        let sw = if cfg.switching { sigma_hat } else { 0.0 };
        let tau_nom = nominal_input(&des.acc, &e_dot, &s, sw, gains)?;
        if let Compensation::Oracle = comp {
            let acc_cmd = tau_nom.component_div(&mbar);
            r_hat = sim.residual_terms(&acc_cmd, &mbar)?.total();
            r_hat_base = r_hat.clone();
        }
        let tau = &tau_nom + &r_hat;
        if !tau.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("control input at t = {tk}")));
        }
        log.rows.push(LogRow {
            t: tk,
            chi_d: des.pos,
            chi: st.chi.clone(),
            e,
            s: s.clone(),
            tau: tau.clone(),
            r,
            r_hat_base,
            r_hat_adapted: r_hat,
            sigma_hat,
            eps_ema_norm: report.as_ref().map_or(0.0, |rep| rep.ema_norm),
            reset: report.as_ref().is_some_and(|rep| rep.reset),
        });
        if cfg.switching {
            sigma_hat = adaptive_gain_step(sigma_hat, s.norm(), gains.nu, ctrl_dt, gains.sigma_floor);
        }
        for _ in 0..cfg.substeps {
            sim.step(&tau, cfg.dt)?;
        }
        tau_prev = tau;
        log.tick_us.push(tick_start.elapsed().as_secs_f64() * 1e6);
    }
    Ok(log)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub dt: f64,
    pub substeps: usize,
    pub duration: f64,
    /// Std of zero-mean Gaussian input dither, redrawn every control tick,
    /// per channel. Empty means none.
    pub dither: Vec<f64>,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { dt: 1e-3, substeps: 10, duration: 60.0, dither: Vec::new() }
    }
}

/// PID-tracked run logged at the control rate as residual samples. Row `k`
/// pairs the state at tick `k` with the input held over the preceding
/// interval and the acceleration it produces there.
pub fn collect_trajectory(
    plant: &PlantModel,
    schedule: PayloadSchedule,
    traj: &ReferenceTrajectory,
    mbar: &[f64],
    pid: &PidGains,
    cfg: &CollectConfig,
    seed: u64,
) -> Result<Trajectory> {
    let n = plant.n();
    if mbar.len() != n {
        return Err(Error::Dimension(format!("mbar length {}, plant n = {n}", mbar.len())));
    }
    if !cfg.dither.is_empty() {
        check_len("dither", cfg.dither.len(), n)?;
        if cfg.dither.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("dither std must be non-negative".into()));
        }
    }
    if !(cfg.dt > 0.0) || cfg.substeps == 0 || !(cfg.duration > 0.0) {
        return Err(Error::InvalidParameter("collection timing must be positive".into()));
    }
    let ctrl_dt = cfg.dt * cfg.substeps as f64;
    let start = traj.sample(0.0);
    let mut sim = Simulator::new(plant.clone(), schedule, start.pos, start.vel, seed)?;
    let nominal = plant.with_payload(0.0).without_disturbance();
    let mbar_v = DVector::from_column_slice(mbar);
    let mut pid = Pid::new(pid.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DITHER_STREAM);
    let mut tau_prev: Option<DVector<f64>> = None;
    let ticks = (cfg.duration / ctrl_dt).round() as usize;
    let mut samples = Vec::with_capacity(ticks);
    for k in 0..=ticks {
        let tk = k as f64 * ctrl_dt;
        let st = sim.state().clone();
        if let Some(tp) = tau_prev.take() {
            samples.push(ResidualSample::new(tk, st.chi.clone(), st.chi_dot.clone(), st.chi_ddot.clone(), tp, &mbar_v)?);
        }
        if k == ticks {
            break;
        }
        let des = traj.sample(tk);
        let e = &st.chi - &des.pos;
        let e_dot = &st.chi_dot - &des.vel;
        let mut tau = pid.input(&nominal, &st.chi, &st.chi_dot, &e, &e_dot, &des.acc, ctrl_dt)?;
        for (t, sd) in tau.iter_mut().zip(&cfg.dither) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *t += sd * z;
        }
        for _ in 0..cfg.substeps {
            sim.step(&tau, cfg.dt)?;
        }
        tau_prev = Some(tau);
    }
    Ok(Trajectory { samples })
}

const DITHER_STREAM: u64 = 0x5d17_4e2a_9c3b_0f61;
