use nalgebra::{DMatrix, DVector};

use super::*;
use crate::builtin::{example1_storage, feedthrough_system, Example1};
use crate::certificate::Status;
use crate::dynamics::{AffineSystem, DisturbanceEnsemble, LinearSystem};
use crate::error::Error;
use crate::noise::{ExpectationRule, ExpectationScheme, NoiseModel};
use crate::storage::{DomainBox, Sampling, StorageFunction};

fn s(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn x1(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

fn exact(sys: &AffineSystem) -> ExpectationRule {
    ExpectationRule::new(sys.noise(), &ExpectationScheme::closed_form()).unwrap()
}

fn line(lo: f64, hi: f64, n: usize) -> DomainBox {
    DomainBox::cube(1, lo, hi, Sampling::Grid { points_per_axis: n }).unwrap()
}

fn scalar_linear(a: f64, a0: f64, b: f64, c: f64, d: f64) -> LinearSystem {
    LinearSystem::new(s(a), s(a0), s(b), s(c), s(d)).unwrap()
}

fn ex1() -> AffineSystem {
    Example1::default().system().unwrap()
}

fn ex1_variant(a: f64, b: f64, c: f64, c1: f64) -> AffineSystem {
    Example1 { a, b, c, c1 }.system().unwrap()
}

#[test]
fn delta_v_examples() {
    let sys = ex1();
    let rule = exact(&sys);
    let v4 = example1_storage(4.0).unwrap();
    let z = x1(0.0);
    assert_eq!(delta_v(&v4, &sys, &z, &z, &rule).unwrap().value, 0.0);
    let d = delta_v(&v4, &sys, &x1(1.0), &z, &rule).unwrap().value;
    assert!((d - (4.0 * 0.99 * 0.99 - 4.0)).abs() < 1e-14);

    let lin = scalar_linear(0.5, 1.0, 0.0, 0.0, 0.0).to_affine();
    let vq = StorageFunction::quadratic(s(1.0)).unwrap();
    let d = delta_v(&vq, &lin, &x1(1.0), &z, &exact(&lin)).unwrap().value;
    assert!((d - 0.25).abs() < 1e-14);
}

#[test]
fn h0_examples() {
    let sys = ex1();
    let rule = exact(&sys);
    let v4 = example1_storage(4.0).unwrap();
    assert_eq!(h0(&v4, &sys, &x1(0.0), &rule).unwrap().value, 0.0);
    let h = h0(&v4, &sys, &x1(1.0), &rule).unwrap().value;
    assert!((h + 0.0396).abs() < 1e-14);

    let unstable = ex1_variant(1.1, 0.01, 0.0, 0.2);
    let h = h0(&StorageFunction::quadratic(s(1.0)).unwrap(), &unstable, &x1(1.0), &rule)
        .unwrap()
        .value;
    assert!((h - 0.21).abs() < 1e-14);
}

#[test]
fn h1_boundary_of_example1() {
    let sys = ex1();
    let rule = exact(&sys);
    let v4 = example1_storage(4.0).unwrap();
    let beta = 1.0 / 0.99;
    for x in [0.0, 1.0, -3.0, 10.0] {
        let h = h1(&v4, &sys, &x1(x), beta, &rule).unwrap().value;
        assert!(h.abs() <= 1e-10 * (1.0 + x * x), "x = {x}: {h}");
    }
    assert!(matches!(
        h1(&v4, &sys, &x1(1.0), 1.0, &rule),
        Err(Error::Config(_))
    ));
}

#[test]
fn g_beta_examples() {
    let sys = ex1();
    let rule = exact(&sys);
    let v4 = example1_storage(4.0).unwrap();
    let beta = 1.0 / 0.99;
    let g = g_beta(&v4, &sys, &x1(0.0), beta, &rule, &VSearch::Auto).unwrap();
    assert!(g.exact);
    assert!((g.value - 0.08).abs() < 1e-12);
    // p β b² cos²(x) / (β − 1) + c₁²
    for x in [0.5, 2.0] {
        let g = g_beta(&v4, &sys, &x1(x), beta, &rule, &VSearch::Auto).unwrap().value;
        let expected = 4.0 * beta * 1e-4 * x.cos().powi(2) / (beta - 1.0) + 0.04;
        assert!((g - expected).abs() < 1e-12);
    }

    let quiet = ex1_variant(0.5, 0.0, 0.3, 0.0);
    let g = g_beta(&v4, &quiet, &x1(1.0), 2.0, &rule, &VSearch::Auto).unwrap();
    assert_eq!(g.value, 0.0);
}

#[test]
fn sphere_search_bounds_eigen_path_from_below() {
    let sys = ex1();
    let rule = exact(&sys);
    let v4 = example1_storage(4.0).unwrap();
    let eig = g_beta(&v4, &sys, &x1(0.3), 1.5, &rule, &VSearch::Auto).unwrap();
    let sph = g_beta(&v4, &sys, &x1(0.3), 1.5, &rule, &VSearch::default_sphere()).unwrap();
    assert!(!sph.exact);
    assert!(sph.value <= eig.value + 1e-12);
    // scalar v: the Rayleigh quotient is constant on the sphere
    assert!((sph.value - eig.value).abs() < 1e-12);
}

#[test]
fn g0_examples() {
    let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]);
    let m1 = DMatrix::from_row_slice(1, 2, &[0.3, -0.1]);
    let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let (bb, mm) = (b.clone(), m1.clone());
    let sys = AffineSystem::builder("const-gain", 2, 2, NoiseModel::standard_normal())
        .drift(Some(0), |x, _| x * 0.5)
        .gain(Some(0), move |_, _| bb.clone())
        .feedthrough(1, move |_| mm.clone())
        .build()
        .unwrap();
    let rule = exact(&sys);
    let v = StorageFunction::quadratic(p.clone()).unwrap();
    let g = g0(&v, &sys, &rule, &VSearch::Auto).unwrap().value;
    let oracle = b.transpose() * &p * &b + m1.transpose() * &m1;
    let oracle = oracle.symmetric_eigenvalues().max();
    assert!((g - oracle).abs() < 1e-12);

    let scalar = AffineSystem::builder("b1", 1, 1, NoiseModel::standard_normal())
        .gain(Some(0), |_, _| s(1.0))
        .build()
        .unwrap();
    let g = g0(&StorageFunction::quadratic(s(2.0)).unwrap(), &scalar, &rule, &VSearch::Auto)
        .unwrap()
        .value;
    assert!((g - 2.0).abs() < 1e-15);
}

#[test]
fn g_beta_is_g0_of_scaled_storage_for_constant_gain() {
    let sys = AffineSystem::builder("const", 1, 1, NoiseModel::standard_normal())
        .drift(Some(0), |x, _| x * 0.3)
        .gain(Some(0), |_, _| s(0.7))
        .feedthrough(1, |_| s(0.2))
        .build()
        .unwrap();
    let rule = exact(&sys);
    let v = StorageFunction::quadratic(s(1.5)).unwrap();
    let beta = 1.7;
    let values: Vec<f64> = [-2.0, 0.0, 1.0, 5.0]
        .iter()
        .map(|x| g_beta(&v, &sys, &x1(*x), beta, &rule, &VSearch::Auto).unwrap().value)
        .collect();
    assert!(values.iter().all(|g| (g - values[0]).abs() < 1e-14));
    let scaled = v.scaled(beta / (beta - 1.0)).unwrap();
    let g = g0(&scaled, &sys, &rule, &VSearch::Auto).unwrap().value;
    assert!((g - values[0]).abs() < 1e-12);
}

#[test]
fn check_internal_examples() {
    let sys = ex1();
    let scheme = ExpectationScheme::closed_form();
    let v4 = example1_storage(4.0).unwrap();
    let cert = check_internal(&sys, &v4, 4.0, &line(-10.0, 10.0, 41), &scheme).unwrap();
    assert_eq!(cert.status, Status::Certified);

    let unstable = ex1_variant(1.1, 0.01, 0.2, 0.2);
    let cert = check_internal(&unstable, &v4, 4.0, &line(-10.0, 10.0, 41), &scheme).unwrap();
    assert_eq!(cert.status, Status::Falsified);
    assert_ne!(cert.witness.unwrap().point[0], 0.0);

    let quiet = ex1_variant(0.99, 0.01, 0.0, 0.2);
    let quartic = StorageFunction::separable(vec![1.0], vec![4]).unwrap();
    let cert = check_internal(&quiet, &quartic, 200.0, &line(-10.0, 10.0, 41), &scheme).unwrap();
    assert_eq!(cert.check("h0").unwrap().status, Status::Certified);
    assert_eq!(cert.status, Status::Inconclusive);
}

#[test]
fn check_external_examples() {
    let sys = ex1();
    let scheme = ExpectationScheme::closed_form();
    let v4 = example1_storage(4.0).unwrap();
    let beta = 1.0 / 0.99;
    let domain = line(-5.0, 5.0, 101);
    let cert = check_external(&sys, &v4, beta, 0.08f64.sqrt(), &domain, &scheme, &VSearch::Auto)
        .unwrap();
    assert_eq!(cert.status, Status::Certified, "{:#?}", cert.checks);
    assert!(cert.check("h1").unwrap().worst_margin.abs() < 1e-10);

    let cert = check_external(&sys, &v4, beta, 0.05f64.sqrt(), &domain, &scheme, &VSearch::Auto)
        .unwrap();
    assert_eq!(cert.status, Status::Falsified);
    assert_eq!(cert.check("g_beta").unwrap().status, Status::Falsified);
    assert_eq!(cert.check("h1").unwrap().status, Status::Certified);

    let zero = AffineSystem::builder("zero", 2, 1, NoiseModel::standard_normal())
        .build()
        .unwrap();
    let v = StorageFunction::quadratic(DMatrix::identity(2, 2)).unwrap();
    let square = DomainBox::cube(2, -1.0, 1.0, Sampling::Grid { points_per_axis: 5 }).unwrap();
    for gamma in [1e-3, 1.0, 100.0] {
        let cert = check_external(&zero, &v, 1.5, gamma, &square, &scheme, &VSearch::Auto).unwrap();
        assert_eq!(cert.status, Status::Certified);
    }
}

#[test]
fn check_external_requires_convex_storage() {
    use crate::storage::CustomStorage;
    use std::sync::Arc;
    struct Concave;
    impl CustomStorage for Concave {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, x: &DVector<f64>) -> f64 {
            x[0].abs().sqrt()
        }
    }
    let sys = ex1();
    let v = StorageFunction::custom(Arc::new(Concave), true, true).unwrap();
    let err = check_external(
        &sys,
        &v,
        1.5,
        1.0,
        &line(-1.0, 1.0, 5),
        &ExpectationScheme::closed_form(),
        &VSearch::Auto,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Precondition(_)));
    let unclaimed = StorageFunction::custom(Arc::new(Concave), false, true).unwrap();
    assert!(matches!(
        check_external(
            &sys,
            &unclaimed,
            1.5,
            1.0,
            &line(-1.0, 1.0, 5),
            &ExpectationScheme::closed_form(),
            &VSearch::Auto
        ),
        Err(Error::Precondition(_))
    ));
}

fn example1_family() -> StorageFamily {
    StorageFamily::Scaled {
        base: example1_storage(1.0).unwrap(),
        scales: vec![1.0, 2.0, 3.0, 4.0, 5.0, 8.0],
    }
}

#[test]
fn gamma_star_example1() {
    let sys = ex1();
    let mut betas = default_beta_grid();
    betas.push(1.0 / 0.99);
    let r = gamma_star_search(
        &sys,
        &example1_family(),
        &betas,
        &line(-3.0, 3.0, 13),
        &ExpectationScheme::closed_form(),
        &VSearch::Auto,
    )
    .unwrap();
    assert!((r.gamma_star_sq.unwrap() - 0.08).abs() < 1e-10);
    assert_eq!(r.beta, Some(1.0 / 0.99));
    assert_eq!(r.parameter, Some(4.0));
    assert_eq!(r.certificate.status, Status::Certified);
}

#[test]
fn gamma_star_without_disturbance_path() {
    let sys = ex1_variant(0.99, 0.0, 0.2, 0.0);
    let r = gamma_star_search(
        &sys,
        &example1_family(),
        &[1.01, 1.5],
        &line(-3.0, 3.0, 7),
        &ExpectationScheme::closed_form(),
        &VSearch::Auto,
    )
    .unwrap();
    assert_eq!(r.gamma_star_sq, Some(0.0));
    assert_eq!(r.beta, Some(1.01));
}

#[test]
fn gamma_star_grid_is_above_analytic_optimum() {
    let (a, b, c, c1): (f64, f64, f64, f64) = (0.5, 0.1, 0.1, 0.1);
    let analytic = b * b * c * c / (1.0 - a.abs()).powi(2) + c1 * c1;
    let sys = ex1_variant(a, b, c, c1);
    let scales: Vec<f64> = (1..=40).map(|i| 0.005 * i as f64).collect();
    let r = gamma_star_search(
        &sys,
        &StorageFamily::Scaled {
            base: example1_storage(1.0).unwrap(),
            scales,
        },
        &default_beta_grid(),
        &line(-3.0, 3.0, 13),
        &ExpectationScheme::closed_form(),
        &VSearch::Auto,
    )
    .unwrap();
    let g = r.gamma_star_sq.unwrap();
    assert!(g >= analytic - 1e-12 && g <= 1.05 * analytic, "{g} vs {analytic}");
}

#[test]
fn gamma_star_infeasible_is_inconclusive() {
    let sys = ex1_variant(1.1, 0.01, 0.2, 0.2);
    let r = gamma_star_search(
        &sys,
        &example1_family(),
        &[1.1, 2.0],
        &line(-1.0, 1.0, 5),
        &ExpectationScheme::closed_form(),
        &VSearch::Auto,
    )
    .unwrap();
    assert_eq!(r.gamma_star_sq, None);
    assert_eq!(r.certificate.status, Status::Inconclusive);
}

#[test]
fn envelopes_of_scalar_contraction() {
    let lin = scalar_linear(0.5, 0.0, 1.0, 0.5, 0.0).to_affine();
    let v = StorageFunction::quadratic(s(1.0)).unwrap();
    let t = estimate_c1_c2(&lin, &v, &[1.5, 2.0], &line(-2.0, 2.0, 9), &exact(&lin)).unwrap();
    for r in &t.rows {
        assert!((r.c1 - 0.25 * r.beta * r.beta).abs() < 1e-14);
        assert!((r.c2 - r.c1).abs() < 1e-14);
    }
    assert!((t.c1_at_one - 0.25).abs() < 1e-15);
    assert!(t.contraction);
    assert!(t.beta0.is_some());

    let exp = scalar_linear(1.1, 0.0, 1.0, 0.5, 0.0).to_affine();
    let t = estimate_c1_c2(&exp, &v, &[1.5], &line(-2.0, 2.0, 9), &exact(&exp)).unwrap();
    assert!((t.c1_at_one - 1.21).abs() < 1e-14);
    assert!(!t.contraction);
}

#[test]
fn lemma_constants() {
    let c = |b: f64| 0.25 * b * b;
    let k = derive_p0_q0_gamma0(c, c, 1.5, 1.0, 1.0, 0.0).unwrap();
    assert!((k.q0 - 0.45).abs() < 1e-14);
    assert!((k.p0 - 1.2).abs() < 1e-14);
    assert!(k.p0 > k.q0 && k.q0 > 0.0);
    assert!((k.gamma0_sq - 4.5).abs() < 1e-14);
    let big = |b: f64| 2.0 * b;
    assert!(matches!(
        derive_p0_q0_gamma0(big, c, 1.5, 1.0, 1.0, 0.0),
        Err(Error::Config(_))
    ));
}

#[test]
fn linear_internal_examples() {
    let sys = scalar_linear(0.5, 0.0, 1.0, 0.5, 0.0);
    let cert = linear_internal(&sys, &s(0.5)).unwrap();
    assert_eq!(cert.status, Status::Certified);
    assert!((cert.worst_margin + 0.125).abs() < 1e-15);

    let cert = linear_internal(&scalar_linear(1.1, 0.0, 1.0, 0.0, 0.0), &s(2.0)).unwrap();
    assert_eq!(cert.status, Status::Falsified);
    assert!((cert.worst_margin - 0.42).abs() < 1e-14);

    let zero = LinearSystem::new(
        DMatrix::zeros(2, 2),
        DMatrix::zeros(2, 2),
        DMatrix::zeros(2, 1),
        DMatrix::zeros(1, 2),
        DMatrix::zeros(1, 1),
    )
    .unwrap();
    let cert = linear_internal(&zero, &DMatrix::identity(2, 2)).unwrap();
    assert_eq!(cert.status, Status::Certified);
    assert!(matches!(linear_internal(&sys, &s(-1.0)), Err(Error::Precondition(_))));
}

#[test]
fn linear_brl_scalar_boundary() {
    let sys = scalar_linear(0.5, 0.0, 1.0, 0.5, 0.0);
    let r = linear_brl(&sys, &s(0.5), 2.0, 2f64.sqrt()).unwrap();
    assert!(r.certified());
    assert!(r.margin_gain.abs() <= 1e-12);
    assert!(r.margin_dissipation.abs() < 1e-15);
    let r = linear_brl(&sys, &s(0.5), 2.0, 1.9f64.sqrt()).unwrap();
    assert_eq!(r.status, Status::Falsified);
    assert!((r.margin_gain - 0.1).abs() < 1e-12);

    let fed = scalar_linear(0.5, 0.0, 1.0, 0.5, 2f64.sqrt());
    for (p, beta) in [(0.1, 1.5), (1.0, 3.0), (1e-3, 10.0)] {
        assert_eq!(linear_brl(&fed, &s(p), beta, 1.0).unwrap().status, Status::Falsified);
    }
}

#[test]
fn linear_brl_search_examples() {
    let sys = scalar_linear(0.5, 0.0, 1.0, 0.5, 0.0);
    let p_bar = adjoint_series(&sys, &s(0.25), 10_000);
    assert!((p_bar[(0, 0)] - 1.0 / 3.0).abs() < 1e-14);

    let r = linear_brl_search(&sys, 1e3, &default_linear_beta_grid(&sys), &PStrategy::default())
        .unwrap();
    assert_eq!(r.status, Status::Certified);
    assert!(r.report.unwrap().certified());

    let r = linear_brl_search(
        &scalar_linear(1.1, 0.0, 1.0, 0.5, 0.0),
        1e3,
        &[1.5],
        &PStrategy::default(),
    )
    .unwrap();
    assert_eq!(r.status, Status::Inconclusive);
    assert!((r.diagnostics.sigma_bar - 1.21).abs() < 1e-14);
}

#[test]
fn empirical_gain_examples() {
    let sys = ex1();
    let r = empirical_gain(&sys, None, &DisturbanceEnsemble::decaying_sine(), 200, 50, 0.08, 3)
        .unwrap();
    assert_eq!(r.verdict, Verdict::Consistent);
    assert!(r.max_ratio < 0.08);

    let fed = feedthrough_system(1.0).unwrap();
    let r = empirical_gain(
        &fed,
        None,
        &DisturbanceEnsemble::WhiteNoise { std_dev: 1.0 },
        50,
        20,
        0.5,
        3,
    )
    .unwrap();
    assert!((r.mean_ratio - 1.0).abs() < 1e-12);
    assert_eq!(r.verdict, Verdict::Violated);

    assert!(matches!(
        empirical_gain(&sys, None, &DisturbanceEnsemble::decaying_sine(), 200, 0, 0.08, 3),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        empirical_gain(&sys, None, &DisturbanceEnsemble::Zero, 200, 5, 0.08, 3),
        Err(Error::Config(_))
    ));
}

#[test]
fn dissipation_profile_is_nonpositive_for_certified_tuple() {
    let sys = ex1();
    let v4 = example1_storage(4.0).unwrap();
    let profile = dissipation_profile(
        &sys,
        None,
        &v4,
        0.08,
        &DisturbanceEnsemble::WhiteNoise { std_dev: 1.0 },
        100,
        50,
        9,
    )
    .unwrap();
    for (k, e) in profile.iter().enumerate() {
        assert!(e.value <= 4.0 * e.std_error + 1e-12, "k = {k}: {e:?}");
    }
}
