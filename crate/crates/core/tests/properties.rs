use nalgebra::DMatrix;
use proptest::prelude::*;
use reslab::friedrichs::{level_shift, FriedrichsModel};
use reslab::harness::report::format_value;
use reslab::harness::{fit_loglog, parse_config_str, ExperimentConfig, InlierRule};
use reslab::lattice::{build_dilated_hamiltonian, build_hamiltonian, Band, ComplexOperator, Grid1D};
use reslab::propagate::{propagate, DrivenFamily, Initial};
use reslab::shape::{f_metric, uncertainty_bounds};
use reslab::spectral::{dense_norm, riesz_projector, Contour, Projector};
use reslab::C64;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn hermitian(entries: &[(f64, f64)], n: usize) -> DMatrix<C64> {
    let m = DMatrix::from_fn(n, n, |i, j| {
        let (re, im) = entries[i * n + j];
        c(re, im)
    });
    (&m + m.adjoint()) * c(0.5, 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn real_potentials_give_hermitian_operators(
        coeffs in prop::collection::vec(-5.0f64..5.0, 4),
        n in 8usize..64,
    ) {
        let grid = Grid1D::symmetric(n, 6.0).unwrap();
        let h = build_hamiltonian(&grid, |x| coeffs[0] + coeffs[1] * x + coeffs[2] * x * x + coeffs[3] * (3.0 * x).sin()).unwrap();
        prop_assert!(h.hermiticity_defect() <= 1e-12);
    }

    #[test]
    fn dilation_adjoint_is_conjugate_angle(
        re in -0.3f64..0.3,
        im in -0.6f64..0.6,
        depth in 0.5f64..8.0,
        field in -0.5f64..0.5,
    ) {
        let grid = Grid1D::symmetric(40, 8.0).unwrap();
        let v = move |z: C64| -(-(z * z)).exp() * depth + z * field;
        let theta = c(re, im);
        let a = build_dilated_hamiltonian(&grid, v, theta).unwrap().adjoint().to_dense();
        let b = build_dilated_hamiltonian(&grid, v, theta.conj()).unwrap().to_dense();
        prop_assert!((a - b).camax() <= 1e-12);
    }

    #[test]
    fn hermitian_propagation_is_unitary(
        a in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 36),
        b in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 36),
        tau in 1.0f64..50.0,
    ) {
        let (ha, hb) = (hermitian(&a, 6), hermitian(&b, 6));
        let fam = DrivenFamily::new(6, true, move |s| {
            Ok(ComplexOperator::from_dense(&ha + &hb * c(s, 0.0)).with_hermitian(true))
        });
        let r = propagate(&fam, tau, 1e-2, &[0.25, 0.5, 1.0], &Initial::Identity).unwrap();
        prop_assert!(r.unitarity_defect() <= 1e-6);
    }

    #[test]
    fn riesz_projectors_are_idempotent_with_integer_trace(
        diag in prop::collection::vec(0.0f64..10.0, 5),
        noise in prop::collection::vec((-0.05f64..0.05, -0.05f64..0.05), 25),
        pick in 0usize..5,
    ) {
        let mut d = diag.clone();
        d.sort_by(f64::total_cmp);
        let spread = d.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 0.5);
        let m = DMatrix::from_fn(5, 5, |i, j| {
            let (re, im) = noise[i * 5 + j];
            c(re, im) + if i == j { c(d[i], 0.0) } else { c(0.0, 0.0) }
        });
        let p = riesz_projector(&ComplexOperator::from_dense(m), &Contour::new(c(d[pick], 0.0), 0.25, 128).unwrap()).unwrap();
        prop_assert_eq!(p.rank, 1);
        prop_assert!(p.check(1e-8, 1e-8).is_ok());
    }

    #[test]
    fn envelope_brackets_reference_and_widens(p in 0.0f64..=1.0, s1 in 0.0f64..2.0, ds in 0.0f64..1.0) {
        let (lo1, hi1) = uncertainty_bounds(p, s1).unwrap();
        let (lo2, hi2) = uncertainty_bounds(p, s1 + ds).unwrap();
        prop_assert!(lo1 <= p + 1e-12 && p <= hi1 + 1e-12);
        prop_assert!(lo2 <= lo1 + 1e-15 && hi1 <= hi2 + 1e-15);
        prop_assert!((0.0..=1.0).contains(&lo2) && (0.0..=1.0).contains(&hi2));
        let (l0, h0) = uncertainty_bounds(p, 0.0).unwrap();
        prop_assert!((l0 - p).abs() < 1e-12 && (h0 - p).abs() < 1e-12);
    }

    #[test]
    fn level_shift_has_nonpositive_imaginary_part(
        lambda in 0.05f64..1.95,
        eta in 1e-3f64..1e-1,
        s in 0.0f64..1.0,
    ) {
        let m = FriedrichsModel::new(400, 0.1).unwrap();
        prop_assert!(level_shift(&m, s, c(lambda, eta)).unwrap().im <= 1e-8);
    }

    #[test]
    fn power_laws_are_recovered(k in -3.0f64..3.0, scale in 1e-3f64..1e3) {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| scale * x.powf(k)).collect();
        let f = fit_loglog(&xs, &ys, &InlierRule::All).unwrap();
        prop_assert!((f.slope - k).abs() < 1e-9);
        prop_assert!(f.r2 > 1.0 - 1e-9 || k.abs() < 1e-9);
    }

    #[test]
    fn csv_values_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(format_value(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn sweep_lists_round_trip_through_config(taus in prop::collection::vec(0.5f64..1e3, 1..6), seed in any::<u32>()) {
        let mut cfg = ExperimentConfig { seed: seed as u64, ..Default::default() };
        cfg.shape.taus = taus;
        let text = toml::to_string(&cfg).unwrap();
        prop_assert_eq!(parse_config_str(&text).unwrap(), cfg);
    }

    #[test]
    fn band_solves_match_dense(
        diag in prop::collection::vec(2.0f64..4.0, 12),
        off in prop::collection::vec((-0.9f64..0.9, -0.9f64..0.9), 11),
    ) {
        let d: Vec<C64> = diag.iter().map(|&x| c(x, 0.3)).collect();
        let lo: Vec<C64> = off.iter().map(|&(a, b)| c(a, b)).collect();
        let up: Vec<C64> = off.iter().map(|&(a, b)| c(b, -a)).collect();
        let band = Band::tridiagonal(&lo, &d, &up);
        let rhs = DMatrix::from_fn(12, 2, |i, j| c(i as f64 - 3.0, j as f64));
        let x = band.lu().unwrap().solve_mat(&rhs);
        prop_assert!(dense_norm(&(band.to_dense() * x - rhs)) <= 1e-10);
    }

    #[test]
    fn variance_metric_vanishes_on_eigenvectors(k in 0usize..4, shift in -2.0f64..2.0) {
        let a = ComplexOperator::from_real_diagonal(&[0.0, 1.0, 2.5, 4.0]);
        let mut e = nalgebra::DVector::zeros(4);
        e[k] = c(1.0, 0.0);
        prop_assert!(f_metric(&Projector::onto(&e), &a.shift(c(shift, 0.0))) < 1e-12);
    }
}
