use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;

use super::*;
use crate::builtin::{example2_beta, example2_plant, example2_storage, EXAMPLE2_P};
use crate::certificate::Status;
use crate::dynamics::{Dims, Dynamics, GeneralSystem};
use crate::noise::{Distribution, NoiseModel};
use crate::storage::Sampling;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_vec(xs.to_vec())
}

fn m(r: usize, c: usize, xs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, xs)
}

fn closed_form() -> ExpectationRule {
    ExpectationRule::new(
        &crate::builtin::example2_noise(),
        &ExpectationScheme::closed_form(),
    )
    .unwrap()
}

/// `x⁺ = 0.5x + u + v`, `z = u`, deterministic.
fn scalar_general() -> GeneralSystem {
    GeneralSystem::new(
        "scalar",
        Dims {
            state: 1,
            control: 1,
            disturbance: 1,
            output: 1,
        },
        NoiseModel::scalar(Distribution::PointMass(0.0)).unwrap(),
        Some(0),
        |_, x, u, d, _| x * 0.5 + u + d,
        |_, _, u, _| u.clone(),
    )
    .unwrap()
}

fn unit_quadratic() -> StorageSequence {
    StorageSequence::Constant(StorageFunction::quadratic(m(1, 1, &[1.0])).unwrap())
}

#[test]
fn example2_law_matches_formulas() {
    let law = FeedbackLaw::example2();
    let u = law.eval(&v(&[1.0, 1.0, 1.0]), 0);
    assert!((u[0] + (1.0 + 1f64.cos()) / 24.0).abs() < 1e-15);
    assert!((u[1] + 0.75).abs() < 1e-15);
    assert_eq!(law.eval(&DVector::zeros(3), 7), DVector::zeros(2));
}

#[test]
fn example2_coefficient_is_exact() {
    let beta_cubed = Ratio::new(8i64, 5);
    let p = Ratio::new(1i64, 16);
    let c = beta_cubed * p / (Ratio::from_integer(4) * beta_cubed * p + Ratio::from_integer(2));
    assert_eq!(c, Ratio::new(1, 24));
    assert!((FeedbackLaw::example2_coefficient(1.6, 0.0625) - 1.0 / 24.0).abs() <= f64::EPSILON);
}

#[test]
fn example2_chain_endpoint_is_zero() {
    let beta_cubed = Ratio::new(8i64, 5);
    let p = Ratio::new(1i64, 16);
    let end = Ratio::new(5, 12) * p * beta_cubed + Ratio::new(1, 48) - p;
    assert_eq!(end, Ratio::from_integer(0));
    let lhs = beta_cubed * Ratio::from_integer(5 * 8 * 8 * 8);
    assert_eq!(lhs, Ratio::from_integer(4096));
    assert!(lhs > Ratio::from_integer(5 * 9 * 9 * 9));
}

#[test]
fn zero_law_gives_open_loop() {
    let plant = example2_plant();
    let sys = closed_loop(&plant, &FeedbackLaw::Zero { control_dim: 2 }).unwrap();
    let x = v(&[0.3, -1.2, 0.7]);
    let w = [0.2, -0.1, 0.9, 0.4, 0.6];
    assert_eq!(sys.drift(&x, &w), plant.drift(&x, &DVector::zeros(2), &w));
    assert_eq!(sys.output(&x), plant.output(&x, &DVector::zeros(2)));
}

#[test]
fn linear_gain_closed_loop() {
    let a = m(2, 2, &[0.5, 0.1, 0.0, 0.8]);
    let bu = m(2, 1, &[1.0, 0.5]);
    let k = m(1, 2, &[-0.2, -0.4]);
    let plant = ControlledSystem::linear(
        a.clone(),
        DMatrix::zeros(2, 2),
        bu.clone(),
        m(2, 1, &[1.0, 0.0]),
        DMatrix::identity(2, 2),
        m(1, 1, &[1.0]),
        DMatrix::zeros(0, 1),
        NoiseModel::standard_normal(),
    )
    .unwrap();
    let sys = closed_loop(&plant, &FeedbackLaw::LinearGain(k.clone())).unwrap();
    let x = v(&[1.0, -2.0]);
    let expected = (&a + &bu * &k) * &x;
    assert!((sys.drift(&x, &[0.3]) - expected).amax() < 1e-15);
    assert!(closed_loop(&plant, &FeedbackLaw::LinearGain(m(1, 3, &[0.0; 3]))).is_err());
}

#[test]
fn h_design_vanishes_at_origin() {
    let h = h_design(
        &example2_storage(EXAMPLE2_P).unwrap(),
        &example2_plant(),
        &DVector::zeros(3),
        &DVector::zeros(2),
        example2_beta(),
        &closed_form(),
    )
    .unwrap();
    assert_eq!(h.value, 0.0);
}

#[test]
fn h_design_nonpositive_under_designed_law() {
    let plant = example2_plant();
    let vf = example2_storage(EXAMPLE2_P).unwrap();
    let x = v(&[1.0, 1.0, 1.0]);
    let u = FeedbackLaw::example2().eval(&x, 0);
    let exact = h_design(&vf, &plant, &x, &u, example2_beta(), &closed_form()).unwrap();
    assert!(exact.value <= 0.0, "{}", exact.value);
    let mc_rule = ExpectationRule::new(
        plant.noise(),
        &ExpectationScheme::monte_carlo(100_000, 11),
    )
    .unwrap();
    let mc = h_design(&vf, &plant, &x, &u, example2_beta(), &mc_rule).unwrap();
    assert!(mc.value <= 3.0 * mc.std_error);
    assert!((mc.value - exact.value).abs() <= 4.0 * mc.std_error);
}

#[test]
fn designed_law_improves_on_zero_control() {
    let plant = example2_plant();
    let vf = example2_storage(EXAMPLE2_P).unwrap();
    let rule = closed_form();
    for x in [[0.0, 2.0, 0.0], [1.0, 0.0, 1.0], [-1.5, 0.5, 2.0], [2.0, -2.0, -1.0]] {
        let x = v(&x);
        let ustar = FeedbackLaw::example2().eval(&x, 0);
        let hs = h_design(&vf, &plant, &x, &ustar, example2_beta(), &rule).unwrap();
        let h0 = h_design(&vf, &plant, &x, &DVector::zeros(2), example2_beta(), &rule).unwrap();
        assert!(hs.value <= h0.value + 1e-12, "{x:?}");
    }
}

#[test]
fn design_functional_is_second_order_smooth() {
    let plant = example2_plant();
    let vf = example2_storage(EXAMPLE2_P).unwrap();
    let rule = closed_form();
    let x = v(&[1.0, 1.0, 1.0]);
    let ustar = FeedbackLaw::example2().eval(&x, 0);
    let law = FeedbackLaw::example2();
    let closed = |y: &DVector<f64>| {
        h_design(&vf, &plant, y, &law.eval(y, 0), example2_beta(), &rule)
            .unwrap()
            .value
    };
    // quadratic in x⁽¹⁾; transcendental in x⁽²⁾ and x⁽³⁾
    assert!(crate::fd::observed_order(closed, &x, 0, 0.1).is_none_or(|p| p >= 1.9));
    for i in 1..3 {
        let p = crate::fd::observed_order(closed, &x, i, 0.1).unwrap();
        assert!(p >= 1.9, "coordinate {i}: order {p}");
    }
    // polynomial of degree ≤ 4 in u with vanishing third derivative at u*:
    // the central difference is exact
    for i in 0..2 {
        let p = crate::fd::observed_order(
            |u| h_design(&vf, &plant, &x, u, example2_beta(), &rule).unwrap().value,
            &ustar,
            i,
            0.1,
        );
        assert!(p.is_none_or(|p| p >= 1.9));
    }
}

fn example2_box(points: usize) -> DomainBox {
    DomainBox::cube(3, -2.0, 2.0, Sampling::Grid { points_per_axis: points }).unwrap()
}

#[test]
fn example2_controller_certificate() {
    let plant = example2_plant();
    let vf = example2_storage(EXAMPLE2_P).unwrap();
    let cert = certify_controller(
        &plant,
        &FeedbackLaw::example2(),
        &vf,
        example2_beta(),
        0.75,
        &example2_box(5),
        &ExpectationScheme::closed_form(),
        &VSearch::Auto,
    )
    .unwrap();
    assert_eq!(cert.status, Status::Certified, "{:?}", cert.notes);
    let b = example2_beta();
    let expected = b / (b - 1.0) / 16.0;
    assert!((cert.summary["g_beta_sup"] - expected).abs() < 1e-12);
    assert!((expected - 0.430_998_734_648_594).abs() < 1e-12);

    let low = certify_controller(
        &plant,
        &FeedbackLaw::example2(),
        &vf,
        b,
        0.4f64.sqrt(),
        &example2_box(3),
        &ExpectationScheme::closed_form(),
        &VSearch::Auto,
    )
    .unwrap();
    assert_eq!(low.status, Status::Falsified);
    assert_eq!(low.witness.as_ref().unwrap().values["g_beta"], cert.summary["g_beta_sup"]);
}

#[test]
fn controller_certificate_equals_closed_loop_check() {
    let plant = example2_plant();
    let law = FeedbackLaw::example2();
    let vf = example2_storage(EXAMPLE2_P).unwrap();
    let scheme = ExpectationScheme::monte_carlo(2_000, 5);
    let domain = example2_box(3);
    let a = certify_controller(&plant, &law, &vf, 1.2, 0.75, &domain, &scheme, &VSearch::Auto).unwrap();
    let b = check_external(
        &closed_loop(&plant, &law).unwrap(),
        &vf,
        1.2,
        0.75,
        &domain,
        &scheme,
        &VSearch::Auto,
    )
    .unwrap();
    assert_eq!(a.status, b.status);
    assert_eq!(a.records, b.records);
}

#[test]
fn zero_plant_is_certified() {
    let plant = ControlledSystem::builder("zero", 2, 1, 1, NoiseModel::standard_normal())
        .build()
        .unwrap();
    let vf = StorageFunction::quadratic(DMatrix::identity(2, 2)).unwrap();
    let domain = DomainBox::cube(2, -1.0, 1.0, Sampling::Grid { points_per_axis: 3 }).unwrap();
    for gamma in [1e-3, 1.0] {
        let cert = certify_controller(
            &plant,
            &FeedbackLaw::Zero { control_dim: 1 },
            &vf,
            2.0,
            gamma,
            &domain,
            &ExpectationScheme::closed_form(),
            &VSearch::Auto,
        )
        .unwrap();
        assert_eq!(cert.status, Status::Certified);
    }
}

/// `x⁺ = x + u`, `V = x²`, `m = (x; u)`, `β = 2`:
/// `H = 2(x + u)² + u²`, minimized at `u = −2x/3`.
fn integrator_plant() -> ControlledSystem {
    ControlledSystem::builder("integrator", 1, 1, 0, NoiseModel::standard_normal())
        .drift(Some(0), |x, u, _| x + u)
        .output(2, |x, u| v(&[x[0], u[0]]))
        .build()
        .unwrap()
}

#[test]
fn pattern_search_finds_quadratic_minimizer() {
    let plant = integrator_plant();
    let vf = StorageFunction::quadratic(m(1, 1, &[1.0])).unwrap();
    let rule = ExpectationRule::new(plant.noise(), &ExpectationScheme::closed_form()).unwrap();
    for x0 in [1.0, -0.7, 2.5] {
        let x = v(&[x0]);
        let r = argmin_improve(&plant, &vf, 2.0, &x, &v(&[0.0]), &rule, &PatternSearch::default())
            .unwrap();
        assert!((r.point[0] + 2.0 * x0 / 3.0).abs() < 1e-4, "{x0}: {}", r.point[0]);
        assert!(r.value <= r.start_value);
        let again =
            argmin_improve(&plant, &vf, 2.0, &x, &r.point, &rule, &PatternSearch::default())
                .unwrap();
        assert!((again.point[0] - r.point[0]).abs() < 1e-4);
    }
}

#[test]
fn pattern_search_respects_bounds() {
    let spec = PatternSearch {
        bounds: Some(vec![[1.0, 3.0]]),
        ..PatternSearch::default()
    };
    let r = pattern_search(|u| Ok((u[0] + 1.0).powi(2)), &v(&[2.0]), &spec).unwrap();
    assert!((r.point[0] - 1.0).abs() < 1e-12);
}

#[test]
fn search_does_not_worsen_designed_law() {
    let plant = example2_plant();
    let vf = example2_storage(EXAMPLE2_P).unwrap();
    let rule = closed_form();
    let x = v(&[1.0, 0.0, 1.0]);
    let ustar = FeedbackLaw::example2().eval(&x, 0);
    let base = h_design(&vf, &plant, &x, &ustar, example2_beta(), &rule).unwrap().value;
    let r = argmin_improve(&plant, &vf, example2_beta(), &x, &ustar, &rule, &PatternSearch::default())
        .unwrap();
    assert!(r.value <= base + 1e-6);
}

#[test]
fn h_k_values() {
    let sys = scalar_general();
    let rule = ExpectationRule::new(sys.noise(), &ExpectationScheme::closed_form()).unwrap();
    let z = DVector::zeros(1);
    let h = h_k_general(&unit_quadratic(), &sys, &z, &z, &z, 0, &rule).unwrap();
    assert_eq!(h.value, 0.0);
    let h = h_k_general(&unit_quadratic(), &sys, &v(&[1.0]), &z, &z, 0, &rule).unwrap();
    assert!((h.value + 0.75).abs() < 1e-15);

    let tv = StorageSequence::time_varying(|k| {
        StorageFunction::quadratic(m(1, 1, &[1.0 + 0.5f64.powi(k as i32)])).unwrap()
    });
    let h0 = h_k_general(&tv, &sys, &v(&[1.0]), &z, &z, 0, &rule).unwrap().value;
    let h1 = h_k_general(&tv, &sys, &v(&[1.0]), &z, &z, 1, &rule).unwrap().value;
    // (1.5 · 0.25 − 2) and (1.25 · 0.25 − 1.5)
    assert!((h0 + 1.625).abs() < 1e-15);
    assert!((h1 + 1.1875).abs() < 1e-15);
}

fn scalar_boxes() -> (DomainBox, DomainBox) {
    (
        DomainBox::cube(1, -2.0, 2.0, Sampling::Grid { points_per_axis: 9 }).unwrap(),
        DomainBox::cube(1, -2.0, 2.0, Sampling::Grid { points_per_axis: 9 }).unwrap(),
    )
}

#[test]
fn general_certificate_matches_quadratic_form_oracle() {
    let sys = scalar_general();
    let (xs, vs) = scalar_boxes();
    let law = FeedbackLaw::Zero { control_dim: 1 };
    for (gamma, expect) in [(3.0, Status::Certified), (0.4, Status::Falsified)] {
        // (0.5x + v)² − x² − γ²v² as a quadratic form in (x, v)
        let q = m(2, 2, &[-0.75, 0.5, 0.5, 1.0 - gamma * gamma]);
        let oracle = crate::linalg::lambda_max(&q) <= 0.0;
        assert_eq!(oracle, expect == Status::Certified);
        let cert = certify_controller_general(
            &sys,
            &law,
            &unit_quadratic(),
            gamma,
            &xs,
            &vs,
            &[0, 1],
            &ExpectationScheme::closed_form(),
        )
        .unwrap();
        assert_eq!(cert.status, expect);
        if expect == Status::Falsified {
            let w = cert.witness.unwrap();
            let (x, d) = (w.point[0], w.point[1]);
            let direct = (0.5 * x + d).powi(2) - x * x - gamma * gamma * d * d;
            assert!((w.margin - direct).abs() < 1e-12);
        }
    }
}

#[test]
fn general_certificate_zero_plant() {
    let sys = GeneralSystem::new(
        "zero",
        Dims {
            state: 1,
            control: 1,
            disturbance: 1,
            output: 1,
        },
        NoiseModel::standard_normal(),
        Some(0),
        |_, x, _, _, _| x * 0.0,
        |_, x, _, _| x * 0.0,
    )
    .unwrap();
    let (xs, vs) = scalar_boxes();
    let cert = certify_controller_general(
        &sys,
        &FeedbackLaw::Zero { control_dim: 1 },
        &unit_quadratic(),
        1e-3,
        &xs,
        &vs,
        &[0],
        &ExpectationScheme::closed_form(),
    )
    .unwrap();
    assert_eq!(cert.status, Status::Certified);
}

fn scalar_saddle(gamma: f64) -> Result<SaddleData> {
    SaddleData::new(
        |x, _| DVector::zeros(x.len()),
        |x, _| x * -0.5,
        m(1, 1, &[8.0]),
        m(1, 1, &[4.0]),
        gamma,
    )
}

fn scalar_taylor_domain() -> TaylorDomain {
    let unit = |n| DomainBox::cube(1, -1.0, 1.0, Sampling::Grid { points_per_axis: n }).unwrap();
    TaylorDomain {
        states: DomainBox::cube(1, -2.0, 2.0, Sampling::Grid { points_per_axis: 5 }).unwrap(),
        controls: unit(3),
        disturbances: unit(3),
        steps: vec![0],
    }
}

#[test]
fn taylor_scalar_instance() {
    let sys = scalar_general();
    let scheme = ExpectationScheme::closed_form();
    let cert =
        taylor_certify(&sys, &scalar_saddle(3.0).unwrap(), &unit_quadratic(), &scalar_taylor_domain(), &scheme)
            .unwrap();
    assert_eq!(cert.status, Status::Certified, "{:#?}", cert.checks);
    for r in cert.records.iter().filter(|r| r.check == "saddle_value") {
        let x = r.point[0];
        assert!((r.margin + 0.1 * x * x).abs() < 1e-3, "x = {x}: {}", r.margin);
    }

    let cert =
        taylor_certify(&sys, &scalar_saddle(2.1).unwrap(), &unit_quadratic(), &scalar_taylor_domain(), &scheme)
            .unwrap();
    assert_eq!(cert.status, Status::Falsified);
    let w = cert.witness.clone().unwrap();
    let x = w.point[0];
    let expected = (-1.0 + (4.0 + 16.0 / 0.41) / 8.0) * x * x;
    assert!((w.margin - expected).abs() < 1e-9, "{} vs {expected}", w.margin);
    assert!(cert.check("stationarity").unwrap().status == Status::Certified);
    assert!(cert.check("hessian_domination").unwrap().status == Status::Certified);
}

#[test]
fn taylor_singular_gap_is_precondition_error() {
    let sys = scalar_general();
    let err = taylor_certify(
        &sys,
        &scalar_saddle(2.0).unwrap(),
        &unit_quadratic(),
        &scalar_taylor_domain(),
        &ExpectationScheme::closed_form(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Precondition(_)));
}

#[test]
fn taylor_detects_weak_dominators() {
    let sys = scalar_general();
    let saddle = SaddleData::new(
        |x, _| DVector::zeros(x.len()),
        |x, _| x * -0.5,
        m(1, 1, &[3.0]),
        m(1, 1, &[1.0]),
        3.0,
    )
    .unwrap();
    let cert = taylor_certify(
        &sys,
        &saddle,
        &unit_quadratic(),
        &scalar_taylor_domain(),
        &ExpectationScheme::closed_form(),
    )
    .unwrap();
    assert_eq!(cert.check("hessian_domination").unwrap().status, Status::Falsified);
}

#[test]
fn taylor_wrong_saddle_fails_stationarity() {
    let sys = scalar_general();
    let saddle = SaddleData::new(
        |x, _| DVector::zeros(x.len()),
        |x, _| x * 0.0,
        m(1, 1, &[8.0]),
        m(1, 1, &[4.0]),
        3.0,
    )
    .unwrap();
    let cert = taylor_certify(
        &sys,
        &saddle,
        &unit_quadratic(),
        &scalar_taylor_domain(),
        &ExpectationScheme::closed_form(),
    )
    .unwrap();
    assert_eq!(cert.check("stationarity").unwrap().status, Status::Falsified);
}

#[test]
fn worst_disturbance_search() {
    let sys = scalar_general();
    let rule = ExpectationRule::new(sys.noise(), &ExpectationScheme::closed_form()).unwrap();
    // max over v of (0.5x + v)² − x² − 9v² is at v = x/16
    let x = v(&[1.6]);
    let r = argmax_disturbance(
        &sys,
        &unit_quadratic(),
        &x,
        &DVector::zeros(1),
        0,
        3.0,
        &rule,
        &DVector::zeros(1),
        &PatternSearch::default(),
    )
    .unwrap();
    assert!((r.point[0] - 0.1).abs() < 1e-4);
    assert!(r.value >= r.start_value);
}
