use super::*;
use crate::spectral::{dense_eig_pairs, Projector};
use nalgebra::DVector;
use num_complex::ComplexFloat;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn small_family() -> DrivenFamily {
    DrivenFamily::new(8, true, |s| {
        let m = DMatrix::from_fn(8, 8, |i, j| {
            if i == j {
                c(0.3 * i as f64 + 0.2 * s, 0.0)
            } else {
                let a = 0.1 / (1.0 + (i as f64 - j as f64).abs());
                c(a * (1.0 + s), if i < j { 0.05 * s } else { -0.05 * s })
            }
        });
        Ok(ComplexOperator::from_dense(m).with_hermitian(true))
    })
}

#[test]
fn zero_generator_gives_identity() {
    let f = DrivenFamily::new(3, true, |_| Ok(ComplexOperator::zeros(3)));
    let r = propagate(&f, 5.0, 1e-2, &[0.5, 1.0], &Initial::Identity).unwrap();
    for sn in &r.snapshots {
        assert!((&sn.state - DMatrix::<C64>::identity(3, 3)).camax() < 1e-15);
    }
}

#[test]
fn constant_diagonal_phases() {
    let e = [0.3, -0.7, 1.1];
    let f = DrivenFamily::new(3, true, move |_| Ok(ComplexOperator::from_real_diagonal(&e)));
    let r = propagate(&f, 1.0, 1e-3, &[1.0], &Initial::Identity).unwrap();
    for (k, &ek) in e.iter().enumerate() {
        // Cayley factor per step, applied 1000 times.
        let cayley = (c(1.0, -0.5e-3 * ek) / c(1.0, 0.5e-3 * ek)).powu(1000);
        assert!((r.final_state()[(k, k)] - cayley).abs() < 1e-11);
        assert!((r.final_state()[(k, k)] - c(0.0, -ek).exp()).abs() < 1e-6);
    }
}

#[test]
fn matches_time_ordered_oracle() {
    let f = small_family();
    let r = propagate(&f, 1.0, 1e-3, &[1.0], &Initial::Identity).unwrap();
    let oracle = time_ordered_oracle(&f, 1.0, 1.0, 100_000).unwrap();
    assert!(dense_norm(&(r.final_state() - oracle)) < 1e-6);
    assert!(r.unitarity_defect() < 1e-10);
}

#[test]
fn vector_block_matches_full_propagator() {
    let f = small_family();
    let full = propagate(&f, 3.0, 1e-3, &[0.5, 1.0], &Initial::Identity).unwrap();
    let v = DMatrix::from_fn(8, 2, |i, j| c(i as f64 - j as f64, 1.0));
    let part = propagate(&f, 3.0, 1e-3, &[0.5, 1.0], &Initial::Vectors(v.clone())).unwrap();
    assert!((full.final_state() * v - part.final_state()).camax() < 1e-12);
}

#[test]
fn coarse_step_warns() {
    let f = small_family();
    let r = propagate(&f, 100.0, 0.1, &[1.0], &Initial::Identity).unwrap();
    assert!(!r.warnings.is_empty());
}

#[test]
fn expm_basics() {
    let h = ComplexOperator::from_real_diagonal(&[1.0, 2.0]);
    let u = expm_oracle(&h, std::f64::consts::PI).unwrap();
    assert!((u[(0, 0)] - c(-1.0, 0.0)).abs() < 1e-12 && (u[(1, 1)] - c(1.0, 0.0)).abs() < 1e-12);
    let z = expm_oracle(&small_family().at(0.3).unwrap(), 0.0).unwrap();
    assert!((z - DMatrix::<C64>::identity(8, 8)).camax() < 1e-12);
    let big = expm_oracle(&ComplexOperator::identity(300), 1.0);
    assert!(matches!(big, Err(Error::OracleCap { .. })));
}

#[test]
fn expm_unitary_and_taylor_agree() {
    let h = small_family().at(0.7).unwrap();
    let u = expm_oracle(&h, 2.5).unwrap();
    assert!(dense_norm(&(u.adjoint() * &u - DMatrix::<C64>::identity(8, 8))) < 1e-10);
    let t = expm_dense(&(h.to_dense() * c(0.0, -2.5)));
    assert!((u - t).camax() < 1e-10);
}

#[test]
fn damped_family_decays() {
    let cc = 0.3;
    let f = small_family().damped(cc);
    let tau = 4.0;
    let r = propagate(&f, tau, 1e-3, &[0.25, 0.5, 1.0], &Initial::Identity).unwrap();
    for (s, n) in semigroup_norm_profile(&r) {
        let expect = (-cc * tau * s).exp();
        assert!((n / expect - 1.0).abs() < 0.05, "s {s}: {n} vs {expect}");
    }
}

fn rotation(s: f64) -> DVector<C64> {
    DVector::from_vec(vec![c(s.cos(), 0.0), c(s.sin(), 0.0)])
}

#[test]
fn constant_branch_leaves_generator_unchanged() {
    let f = small_family();
    let v = DVector::from_fn(8, |i, _| c(if i == 0 { 1.0 } else { 0.0 }, 0.0));
    let b: Branch = Arc::new(move |_| Ok(Projector::onto(&v)));
    let a = adiabatic_generator(&f, b, 10.0, 1.0, 1e-3);
    assert!((a.at(0.4).unwrap().to_dense() - f.at(0.4).unwrap().to_dense()).camax() < 1e-12);
}

#[test]
fn rotating_branch_commutator_norm() {
    let f = DrivenFamily::new(2, true, |_| Ok(ComplexOperator::zeros(2)));
    let b: Branch = Arc::new(|s| Ok(Projector::onto(&rotation(s))));
    let tau = 10.0;
    let a = adiabatic_generator(&f, b, tau, 1.0, 1e-3);
    let extra = a.at(0.3).unwrap();
    // [Ṗ, P] for a rotating rank-one projector in a plane has norm |θ'| = 1.
    let n = dense_norm(&extra.to_dense());
    assert!((n - 1.0 / tau).abs() < 1e-6, "{n}");
    assert!(n <= 2.0 / tau);
    assert!(extra.hermiticity_defect() < 1e-12);
}

#[test]
fn adiabatic_propagator_intertwines_exactly() {
    let f = DrivenFamily::new(2, true, |s| {
        let v = rotation(s);
        let p = &v * v.adjoint();
        Ok(ComplexOperator::from_dense(p * c(-1.0, 0.0)).with_hermitian(true))
    });
    let b: Branch = Arc::new(|s| Ok(Projector::onto(&rotation(s))));
    let a = adiabatic_generator(&f, b.clone(), 5.0, 1.0, 1e-4);
    let r = propagate(&a, 5.0, 1e-3, &[0.25, 0.5, 0.75, 1.0], &Initial::Identity).unwrap();
    let d = intertwining_defect(&r, &*b).unwrap();
    assert!(d < 1e-6, "{d}");
    let plain = propagate(&f, 5.0, 1e-3, &[0.25, 0.5, 0.75, 1.0], &Initial::Identity).unwrap();
    assert!(intertwining_defect(&plain, &*b).unwrap() > 1e-3);
}

#[test]
fn constant_family_has_no_defect() {
    let f = small_family();
    let g = DrivenFamily::new(8, true, move |_| f.at(0.0));
    let h0 = g.at(0.0).unwrap();
    let pairs = crate::spectral::hermitian_eigs(&h0, 1, 1.0).unwrap();
    let v = pairs[0].vector.amps.clone();
    let b: Branch = Arc::new(move |_| Ok(Projector::onto(&v)));
    let r = propagate(&g, 4.0, 1e-2, &[0.5, 1.0], &Initial::Identity).unwrap();
    assert!(intertwining_defect(&r, &*b).unwrap() < 1e-10);
}

#[test]
fn auxiliary_w_identity_cases() {
    let f = small_family();
    let obs = [0.0, 0.5, 1.0];
    let u = propagate(&f, 2.0, 1e-3, &obs, &Initial::Identity).unwrap();
    let w = auxiliary_w(&u, &u).unwrap();
    for sn in &w.snapshots {
        assert!((&sn.state - DMatrix::<C64>::identity(8, 8)).camax() < 1e-10);
    }
    let short = propagate(&f, 2.0, 1e-3, &[0.5], &Initial::Identity).unwrap();
    assert!(matches!(auxiliary_w(&u, &short), Err(Error::GridMismatch(_))));
}

#[test]
fn auxiliary_w_generator_residual() {
    // H = H1 + δv with diagonal δv; W solves ∂W = −iτ H̃ W.
    let h1 = small_family();
    let dv: Vec<f64> = (0..8).map(|i| 0.05 * (i as f64 - 3.5)).collect();
    let dvc = dv.clone();
    let full = h1.plus(true, move |_| Ok(ComplexOperator::from_real_diagonal(&dvc)));
    let tau = 2.0;
    let (s0, eps) = (0.5, 1e-3);
    let obs = [s0 - eps, s0, s0 + eps];
    let u = propagate(&full, tau, 1e-4, &obs, &Initial::Identity).unwrap();
    let u1 = propagate(&h1, tau, 1e-4, &obs, &Initial::Identity).unwrap();
    let w = auxiliary_w(&u, &u1).unwrap();
    let dw = (&w.snapshots[2].state - &w.snapshots[0].state) / c(2.0 * eps, 0.0);
    let ht = tilde_h(&u1.snapshots[1].state, &ComplexOperator::from_real_diagonal(&dv));
    let rhs = ht * &w.snapshots[1].state * c(0.0, -tau);
    assert!(dense_norm(&(dw - rhs)) < 1e-3);
}

#[test]
fn nonnormal_pairs_give_oblique_branch() {
    let m = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, -0.5)]);
    let pairs = dense_eig_pairs(&m).unwrap();
    for p in pairs {
        let proj = Projector::rank_one(&p.vector.amps, &p.left_vector.unwrap().amps).unwrap();
        assert!(proj.idempotency_defect() < 1e-12);
    }
}
