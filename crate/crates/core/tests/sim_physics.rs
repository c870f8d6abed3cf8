use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use resdyn::sim::{step, DisturbanceState, GeneralizedState, Link, PlantModel};

fn chi_strategy(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-3.0f64..3.0, n).prop_map(DVector::from_vec)
}

fn models() -> Vec<PlantModel> {
    vec![
        PlantModel::default(),
        PlantModel::default().with_payload(0.5),
        PlantModel::with_arm(5, Link { mass: 0.08, length: 0.12 }),
    ]
}

proptest! {
    #[test]
    fn mass_matrix_is_spd(chi in chi_strategy(5), payload in 0.0f64..1.0) {
        let m = PlantModel::default().with_payload(payload);
        let mm = m.mass_matrix(&chi).unwrap();
        prop_assert!((&mm - mm.transpose()).amax() < 1e-12);
        let eig = mm.symmetric_eigenvalues();
        prop_assert!(eig.min() > 0.0, "eigenvalues {eig}");
    }

    #[test]
    fn mdot_minus_two_c_is_skew(chi in chi_strategy(5), v in chi_strategy(5)) {
        let m = PlantModel::default().with_payload(0.2);
        let n = m.mass_matrix_rate(&chi, &v).unwrap() - 2.0 * m.coriolis_matrix(&chi, &v).unwrap();
        prop_assert!((&n + n.transpose()).amax() < 1e-8);
    }

    #[test]
    fn gravity_is_potential_gradient(chi in chi_strategy(5)) {
        let m = PlantModel::default().with_payload(0.3);
        let g = m.gravity_vector(&chi).unwrap();
        let h = 1e-6;
        for i in 0..5 {
            let mut p = chi.clone();
            p[i] += h;
            let mut q = chi.clone();
            q[i] -= h;
            let fd = (m.potential_energy(&p).unwrap() - m.potential_energy(&q).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() < 1e-6, "coord {i}: {fd} vs {}", g[i]);
        }
    }
}

#[test]
fn eight_dof_variant_is_spd_and_skew() {
    let m = &models()[2];
    assert_eq!(m.n(), 8);
    let chi = DVector::from_fn(8, |i, _| 0.3 * i as f64 - 1.0);
    let v = DVector::from_fn(8, |i, _| (i as f64).sin());
    assert!(m.mass_matrix(&chi).unwrap().symmetric_eigenvalues().min() > 0.0);
    let n: DMatrix<f64> = m.mass_matrix_rate(&chi, &v).unwrap() - 2.0 * m.coriolis_matrix(&chi, &v).unwrap();
    assert!((&n + n.transpose()).amax() < 1e-8);
}

#[test]
fn unforced_motion_conserves_energy() {
    for m in models() {
        let m = m.without_disturbance();
        let n = m.n();
        let mut d = DisturbanceState::new(&m, 0);
        let chi0 = DVector::from_fn(n, |i, _| if i >= 2 { 0.4 + 0.1 * i as f64 } else { 0.0 });
        let mut s = GeneralizedState::at_rest(chi0);
        let tau = DVector::zeros(n);
        let e0 = m.total_energy(&s.chi, &s.chi_dot).unwrap();
        for _ in 0..20_000 {
            s = step(&m, &s, &tau, 1e-4, &mut d).unwrap();
        }
        let e1 = m.total_energy(&s.chi, &s.chi_dot).unwrap();
        assert!((e1 - e0).abs() < 1e-6, "n = {n}: dE = {}", e1 - e0);
    }
}
