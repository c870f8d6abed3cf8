//! Planar floating-base aerial manipulator.
//!
//! Generalized coordinates are `(x, z, pitch, q_1, .., q_m)`: base position in
//! the vertical plane, base pitch, and relative joint angles of an `m`-link
//! serial arm mounted below the base. Joint angle zero means the link hangs
//! straight down. Links are uniform rods; the payload is a point mass at the
//! tip of the last link.
//!
//! Every point mass sits at `(x, z) + sum_s L_s u(c_s . chi)` with
//! `u(phi) = (sin phi, -cos phi)` and `c_s` a 0/1 vector selecting the angles
//! that make up the absolute orientation of segment `s`. Jacobians and their
//! configuration derivatives follow in closed form, which gives `M`, `dM/dchi`,
//! the Christoffel `C` and `g` without any numeric differentiation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Number of floating-base coordinates of the planar model.
pub const N_BASE: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub mass: f64,
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceParams {
    /// Linear drag per generalized coordinate (N s/m or N m s/rad).
    pub drag: Vec<f64>,
    /// Amplitude of the low-pass filtered noise per coordinate; the stationary
    /// standard deviation is `amplitude / sqrt(2)`.
    pub noise_amplitude: Vec<f64>,
    /// First-order filter bandwidth (Hz).
    pub noise_bandwidth_hz: f64,
}

impl DisturbanceParams {
    pub fn none(n: usize) -> Self {
        Self { drag: vec![0.0; n], noise_amplitude: vec![0.0; n], noise_bandwidth_hz: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub base_mass: f64,
    /// Pitch inertia of the base about its centre of mass (kg m^2).
    pub base_inertia: f64,
    /// Distance from the base centre of mass down to the arm mount (m).
    pub mount_offset: f64,
    pub links: Vec<Link>,
    /// Reflected actuator inertia on every arm joint (kg m^2).
    #[serde(default)]
    pub joint_armature: f64,
    /// Point mass carried at the arm tip (kg).
    pub payload: f64,
    pub gravity: f64,
    pub disturbance: DisturbanceParams,
}

/// A point mass with its planar chain description.
struct PointMass {
    mass: f64,
    /// `(length, angle coefficient vector)` per segment from the base centre.
    segments: Vec<(f64, Vec<f64>)>,
}

impl Default for PlantModel {
    /// Roughly a 3 kg quadrotor carrying a two-link arm of 18 cm links driven
    /// by geared servos.
    fn default() -> Self {
        let n = N_BASE + 2;
        Self {
            base_mass: 2.6,
            base_inertia: 0.035,
            mount_offset: 0.08,
            links: vec![Link { mass: 0.15, length: 0.18 }, Link { mass: 0.10, length: 0.18 }],
            joint_armature: 0.04,
            payload: 0.0,
            gravity: 9.81,
            disturbance: DisturbanceParams {
                drag: vec![0.35, 0.35, 0.004, 0.002, 0.002],
                noise_amplitude: vec![0.6, 0.6, 0.01, 0.004, 0.004],
                noise_bandwidth_hz: 0.3,
            },
        }
        .with_dof_check(n)
    }
}

impl PlantModel {
    fn with_dof_check(self, n: usize) -> Self {
        debug_assert_eq!(self.n(), n);
        self
    }

    /// Planar model with `n_arm` identical links; disturbances off.
    pub fn with_arm(n_arm: usize, link: Link) -> Self {
        let n = N_BASE + n_arm;
        Self {
            links: vec![link; n_arm],
            disturbance: DisturbanceParams::none(n),
            ..Self::default()
        }
    }

    pub fn n(&self) -> usize {
        N_BASE + self.links.len()
    }

    pub fn n_arm(&self) -> usize {
        self.links.len()
    }

    pub fn with_payload(&self, payload: f64) -> Self {
        Self { payload, ..self.clone() }
    }

    pub fn without_disturbance(&self) -> Self {
        Self { disturbance: DisturbanceParams::none(self.n()), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        pos("base_mass", self.base_mass)?;
        pos("base_inertia", self.base_inertia)?;
        pos("mount_offset", self.mount_offset)?;
        pos("gravity", self.gravity)?;
        for (i, l) in self.links.iter().enumerate() {
            pos(&format!("links[{i}].mass"), l.mass)?;
            pos(&format!("links[{i}].length"), l.length)?;
        }
        if !(self.joint_armature >= 0.0 && self.joint_armature.is_finite()) {
            return Err(Error::InvalidParameter(format!("joint_armature {}", self.joint_armature)));
        }
        if !(self.payload >= 0.0 && self.payload.is_finite()) {
            return Err(Error::InvalidParameter(format!("payload {}", self.payload)));
        }
        let n = self.n();
        check_len("disturbance.drag", self.disturbance.drag.len(), n)?;
        check_len("disturbance.noise_amplitude", self.disturbance.noise_amplitude.len(), n)?;
        if self.disturbance.drag.iter().chain(&self.disturbance.noise_amplitude).any(|v| *v < 0.0)
        {
            return Err(Error::InvalidParameter("disturbance coefficients must be >= 0".into()));
        }
        pos("noise_bandwidth_hz", self.disturbance.noise_bandwidth_hz)?;
        Ok(())
    }

    /// Angle coefficient vector of link `i` (absolute angle = pitch + q_1 + .. + q_i).
    fn link_angle(&self, i: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.n()];
        c[2] = 1.0;
        for j in 0..=i {
            c[N_BASE + j] = 1.0;
        }
        c
    }

    fn pitch_angle(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n()];
        c[2] = 1.0;
        c
    }

    fn point_masses(&self) -> Vec<PointMass> {
        let mut out = Vec::with_capacity(self.links.len() + 2);
        out.push(PointMass { mass: self.base_mass, segments: vec![] });
        let mut chain = vec![(self.mount_offset, self.pitch_angle())];
        for (i, link) in self.links.iter().enumerate() {
            let c = self.link_angle(i);
            let mut segs = chain.clone();
            segs.push((0.5 * link.length, c.clone()));
            out.push(PointMass { mass: link.mass, segments: segs });
            chain.push((link.length, c));
        }
        if self.payload > 0.0 {
            out.push(PointMass { mass: self.payload, segments: chain });
        }
        out
    }

    /// Rotational inertias: `(inertia, angle coefficient vector)`.
    fn rotational_bodies(&self) -> Vec<(f64, Vec<f64>)> {
        let mut out = vec![(self.base_inertia, self.pitch_angle())];
        for (i, l) in self.links.iter().enumerate() {
            out.push((l.mass * l.length * l.length / 12.0, self.link_angle(i)));
        }
        if self.joint_armature > 0.0 {
            for i in 0..self.links.len() {
                let mut c = vec![0.0; self.n()];
                c[N_BASE + i] = 1.0;
                out.push((self.joint_armature, c));
            }
        }
        out
    }

    fn angle(c: &[f64], chi: &DVector<f64>) -> f64 {
        c.iter().zip(chi.iter()).map(|(a, b)| a * b).sum()
    }

    fn position(&self, pm: &PointMass, chi: &DVector<f64>) -> [f64; 2] {
        let mut p = [chi[0], chi[1]];
        for (l, c) in &pm.segments {
            let phi = Self::angle(c, chi);
            p[0] += l * phi.sin();
            p[1] -= l * phi.cos();
        }
        p
    }

    /// `2 x n` translational Jacobian of a point mass.
    fn jacobian(&self, pm: &PointMass, chi: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n();
        let mut j = DMatrix::zeros(2, n);
        j[(0, 0)] = 1.0;
        j[(1, 1)] = 1.0;
        for (l, c) in &pm.segments {
            let phi = Self::angle(c, chi);
            let (s, co) = phi.sin_cos();
            for k in 0..n {
                if c[k] != 0.0 {
                    j[(0, k)] += l * co * c[k];
                    j[(1, k)] += l * s * c[k];
                }
            }
        }
        j
    }

    /// `dJ/dchi_k` of a point mass.
    fn jacobian_derivative(&self, pm: &PointMass, chi: &DVector<f64>, k: usize) -> DMatrix<f64> {
        let n = self.n();
        let mut dj = DMatrix::zeros(2, n);
        for (l, c) in &pm.segments {
            if c[k] == 0.0 {
                continue;
            }
            let phi = Self::angle(c, chi);
            let (s, co) = phi.sin_cos();
            for m in 0..n {
                if c[m] != 0.0 {
                    dj[(0, m)] -= l * s * c[k] * c[m];
                    dj[(1, m)] += l * co * c[k] * c[m];
                }
            }
        }
        dj
    }

    pub fn mass_matrix(&self, chi: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.n();
        check_len("chi", chi.len(), n)?;
        let mut m = DMatrix::zeros(n, n);
        for pm in self.point_masses() {
            let j = self.jacobian(&pm, chi);
            m += pm.mass * j.transpose() * &j;
        }
        for (inertia, c) in self.rotational_bodies() {
            let cv = DVector::from_vec(c);
            m += inertia * &cv * cv.transpose();
        }
        Ok(m)
    }

    /// `dM/dchi_k` for every `k`.
    pub fn mass_matrix_derivatives(&self, chi: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        let n = self.n();
        check_len("chi", chi.len(), n)?;
        let pms = self.point_masses();
        let jacs: Vec<_> = pms.iter().map(|pm| self.jacobian(pm, chi)).collect();
        Ok((0..n)
            .map(|k| {
                let mut dm = DMatrix::zeros(n, n);
                for (pm, j) in pms.iter().zip(&jacs) {
                    let dj = self.jacobian_derivative(pm, chi, k);
                    let t = dj.transpose() * j;
                    dm += pm.mass * (&t + t.transpose());
                }
                dm
            })
            .collect())
    }

    /// Christoffel-symbol Coriolis matrix; `dM/dt - 2C` is skew-symmetric.
    pub fn coriolis_matrix(&self, chi: &DVector<f64>, chi_dot: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.n();
        check_len("chi_dot", chi_dot.len(), n)?;
        let dm = self.mass_matrix_derivatives(chi)?;
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * chi_dot[k];
                }
                c[(i, j)] = s;
            }
        }
        Ok(c)
    }

    /// `dM/dt = sum_k dM/dchi_k * chi_dot_k`.
    pub fn mass_matrix_rate(&self, chi: &DVector<f64>, chi_dot: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_len("chi_dot", chi_dot.len(), self.n())?;
        let dm = self.mass_matrix_derivatives(chi)?;
        Ok(dm.iter().zip(chi_dot.iter()).fold(DMatrix::zeros(self.n(), self.n()), |acc, (d, v)| acc + d * *v))
    }

    pub fn potential_energy(&self, chi: &DVector<f64>) -> Result<f64> {
        check_len("chi", chi.len(), self.n())?;
        Ok(self
            .point_masses()
            .iter()
            .map(|pm| pm.mass * self.gravity * self.position(pm, chi)[1])
            .sum())
    }

    pub fn kinetic_energy(&self, chi: &DVector<f64>, chi_dot: &DVector<f64>) -> Result<f64> {
        check_len("chi_dot", chi_dot.len(), self.n())?;
        let m = self.mass_matrix(chi)?;
        Ok(0.5 * chi_dot.dot(&(m * chi_dot)))
    }

    pub fn total_energy(&self, chi: &DVector<f64>, chi_dot: &DVector<f64>) -> Result<f64> {
        Ok(self.kinetic_energy(chi, chi_dot)? + self.potential_energy(chi)?)
    }

    /// `dV/dchi`.
    pub fn gravity_vector(&self, chi: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n();
        check_len("chi", chi.len(), n)?;
        let mut g = DVector::zeros(n);
        for pm in self.point_masses() {
            let j = self.jacobian(&pm, chi);
            for k in 0..n {
                g[k] += pm.mass * self.gravity * j[(1, k)];
            }
        }
        Ok(g)
    }

    /// Arm-tip position in the plane.
    pub fn end_effector(&self, chi: &DVector<f64>) -> Result<[f64; 2]> {
        check_len("chi", chi.len(), self.n())?;
        let tip = PointMass {
            mass: 0.0,
            segments: self.point_masses_chain_to_tip(),
        };
        Ok(self.position(&tip, chi))
    }

    /// `2 x n` Jacobian of the arm tip.
    pub fn end_effector_jacobian(&self, chi: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_len("chi", chi.len(), self.n())?;
        let tip = PointMass { mass: 0.0, segments: self.point_masses_chain_to_tip() };
        Ok(self.jacobian(&tip, chi))
    }

    fn point_masses_chain_to_tip(&self) -> Vec<(f64, Vec<f64>)> {
        let mut chain = vec![(self.mount_offset, self.pitch_angle())];
        for (i, l) in self.links.iter().enumerate() {
            chain.push((l.length, self.link_angle(i)));
        }
        chain
    }

    /// Linear drag `D chi_dot`.
    pub fn drag_force(&self, chi_dot: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n(),
            chi_dot.iter().zip(&self.disturbance.drag).map(|(v, d)| d * v),
        )
    }

    /// `M^{-1}(tau - C chi_dot - g - d)`.
    pub fn forward_dynamics(
        &self,
        chi: &DVector<f64>,
        chi_dot: &DVector<f64>,
        tau: &DVector<f64>,
        external: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_len("tau", tau.len(), self.n())?;
        let m = self.mass_matrix(chi)?;
        let c = self.coriolis_matrix(chi, chi_dot)?;
        let g = self.gravity_vector(chi)?;
        let rhs = tau - c * chi_dot - g - external;
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::SingularMass(format!("at chi = {:?}", chi.as_slice())))?;
        Ok(chol.solve(&rhs))
    }
}
