//! Residual samples and the dataset file format.
//!
//! A dataset is a CSV file with header
//! `t, chi_0.., chi_dot_0.., chi_ddot_0.., tau_0.., r_0..` and one row per
//! logged sample.

use std::path::Path;

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSample {
    pub t: f64,
    pub chi: DVector<f64>,
    pub chi_dot: DVector<f64>,
    pub chi_ddot: DVector<f64>,
    pub tau: DVector<f64>,
    pub r: DVector<f64>,
}

/// `r = tau - Mbar chi_ddot` for diagonal `Mbar` given by its diagonal.
pub fn compute_residual(
    mbar_diag: &DVector<f64>,
    tau: &DVector<f64>,
    chi_ddot: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len("tau", tau.len(), mbar_diag.len())?;
    check_len("chi_ddot", chi_ddot.len(), mbar_diag.len())?;
    if mbar_diag.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::InvalidParameter("Mbar entries must be positive".into()));
    }
    Ok(tau - mbar_diag.component_mul(chi_ddot))
}

impl ResidualSample {
    pub fn new(
        t: f64,
        chi: DVector<f64>,
        chi_dot: DVector<f64>,
        chi_ddot: DVector<f64>,
        tau: DVector<f64>,
        mbar_diag: &DVector<f64>,
    ) -> Result<Self> {
        let r = compute_residual(mbar_diag, &tau, &chi_ddot)?;
        Ok(Self { t, chi, chi_dot, chi_ddot, tau, r })
    }

    pub fn n(&self) -> usize {
        self.chi.len()
    }
}

/// One logged trajectory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<ResidualSample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n(&self) -> Option<usize> {
        self.samples.first().map(ResidualSample::n)
    }
}

pub fn header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for name in ["chi", "chi_dot", "chi_ddot", "tau", "r"] {
        h.extend((0..n).map(|i| format!("{name}_{i}")));
    }
    h
}

pub fn write_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let n = traj.n().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(n))?;
    for s in &traj.samples {
        let mut row = Vec::with_capacity(1 + 5 * n);
        row.push(s.t.to_string());
        for v in [&s.chi, &s.chi_dot, &s.chi_ddot, &s.tau, &s.r] {
            row.extend(v.iter().map(|x| x.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Trajectory> {
    let mut rd = csv::Reader::from_path(path)?;
    let cols = rd.headers()?.len();
    if cols == 0 || (cols - 1) % 5 != 0 {
        return Err(Error::Dimension(format!("dataset header has {cols} columns")));
    }
    let n = (cols - 1) / 5;
    let mut samples = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("bad number {s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let block = |k: usize| DVector::from_column_slice(&vals[1 + k * n..1 + (k + 1) * n]);
        samples.push(ResidualSample {
            t: vals[0],
            chi: block(0),
            chi_dot: block(1),
            chi_ddot: block(2),
            tau: block(3),
            r: block(4),
        });
    }
    Ok(Trajectory { samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_model_gives_zero_residual() {
        let mbar = DVector::from_vec(vec![2.0, 0.5]);
        let acc = DVector::from_vec(vec![1.5, -4.0]);
        let tau = mbar.component_mul(&acc);
        assert_eq!(compute_residual(&mbar, &tau, &acc).unwrap().norm(), 0.0);
    }

    #[test]
    fn residual_errors() {
        let mbar = DVector::from_vec(vec![2.0, 0.0]);
        let v = DVector::zeros(2);
        assert!(compute_residual(&mbar, &v, &v).is_err());
        let mbar = DVector::from_vec(vec![2.0, 1.0]);
        assert!(compute_residual(&mbar, &DVector::zeros(3), &v).is_err());
    }

    proptest! {
        #[test]
        fn residual_is_linear(
            t1 in prop::collection::vec(-10.0f64..10.0, 3),
            t2 in prop::collection::vec(-10.0f64..10.0, 3),
            a1 in prop::collection::vec(-10.0f64..10.0, 3),
            a2 in prop::collection::vec(-10.0f64..10.0, 3),
            c in -3.0f64..3.0,
        ) {
            let mbar = DVector::from_vec(vec![2.0, 0.02, 0.05]);
            let (t1, t2) = (DVector::from_vec(t1), DVector::from_vec(t2));
            let (a1, a2) = (DVector::from_vec(a1), DVector::from_vec(a2));
            let lhs = compute_residual(&mbar, &(&t1 + c * &t2), &(&a1 + c * &a2)).unwrap();
            let rhs = compute_residual(&mbar, &t1, &a1).unwrap() + c * compute_residual(&mbar, &t2, &a2).unwrap();
            prop_assert!((lhs - rhs).amax() < 1e-10);
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let mbar = DVector::from_vec(vec![2.0, 0.3]);
        let traj = Trajectory {
            samples: (0..5)
                .map(|k| {
                    let x = k as f64 * 0.1 + 1.0 / 3.0;
                    ResidualSample::new(
                        x,
                        DVector::from_vec(vec![x, -x]),
                        DVector::from_vec(vec![x.sin(), x.cos()]),
                        DVector::from_vec(vec![x.exp(), 1e-17]),
                        DVector::from_vec(vec![7.0, x * 1e5]),
                        &mbar,
                    )
                    .unwrap()
                })
                .collect(),
        };
        write_csv(&p, &traj).unwrap();
        assert_eq!(read_csv(&p).unwrap(), traj);
    }
}
