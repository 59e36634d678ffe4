//! General-tier certificates: the `H_k` functional, the sampled check of
//! `H_k(x, α_k(x), v) − γ²|v|² ≤ 0`, and the second-order (saddle) theorem.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{FeedbackLaw, StateMap};
use crate::certificate::{Certificate, CheckBuilder, Provenance, Status, Tolerance};
use crate::certify::{composed_degree, Split};
use crate::dynamics::{Dynamics, GeneralSystem};
use crate::error::{Error, Result};
use crate::fd;
use crate::linalg::{eig_tolerance, is_positive_definite, is_symmetric, lambda_max, symmetrize};
use crate::noise::{derive_seed, Estimate, ExpectationRule, ExpectationScheme, NoiseModel};
use crate::storage::{DomainBox, StorageFunction};

/// Monte Carlo replications averaged by the finite-difference checks.
pub const FD_REPLICATIONS: usize = 16;

/// Storage functions `V_k`.
#[derive(Clone)]
pub enum StorageSequence {
    Constant(StorageFunction),
    TimeVarying(Arc<dyn Fn(usize) -> StorageFunction + Send + Sync>),
}

impl fmt::Debug for StorageSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Self::TimeVarying(_) => f.write_str("TimeVarying(..)"),
        }
    }
}

impl StorageSequence {
    pub fn time_varying<F>(f: F) -> Self
    where
        F: Fn(usize) -> StorageFunction + Send + Sync + 'static,
    {
        Self::TimeVarying(Arc::new(f))
    }

    pub fn at(&self, k: usize) -> StorageFunction {
        match self {
            Self::Constant(v) => v.clone(),
            Self::TimeVarying(f) => f(k),
        }
    }
}

fn check_general_point(
    sys: &GeneralSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<()> {
    let d = sys.dims();
    if x.len() != d.state {
        return Err(Error::dims("state", d.state, x.len()));
    }
    if u.len() != d.control {
        return Err(Error::dims("control", d.control, u.len()));
    }
    if v.len() != d.disturbance {
        return Err(Error::dims("disturbance", d.disturbance, v.len()));
    }
    Ok(())
}

pub(crate) fn h_k_split(
    sys: &GeneralSystem,
    storage: &StorageSequence,
    x: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
    k: usize,
    rule: &ExpectationRule,
) -> Result<Split> {
    check_general_point(sys, x, u, v)?;
    let (now, next) = (storage.at(k), storage.at(k + 1));
    if now.dim() != x.len() || next.dim() != x.len() {
        return Err(Error::dims("storage", x.len(), now.dim()));
    }
    let e = rule.expect(composed_degree(&next, sys.omega_degree()), |w| {
        next.value(&sys.transition_at(k, x, u, v, w))
    })?;
    let m = sys.output_at(k, x, u, v).norm_squared();
    Ok(Split {
        gain: Estimate {
            value: e.value + m,
            std_error: e.std_error,
        },
        storage: now.estimate(x)?,
    })
}

/// `H_k(x, u, v) = E[V_{k+1}(F_k(x, u, v, ω))] − V_k(x) + |m_k(x, u, v)|²`.
pub fn h_k_general(
    storage: &StorageSequence,
    sys: &GeneralSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
    k: usize,
    rule: &ExpectationRule,
) -> Result<Estimate> {
    Ok(h_k_split(sys, storage, x, u, v, k, rule)?.value())
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn require_zero_storage(storage: &StorageSequence, n: usize, steps: &[usize]) -> Result<()> {
    for &k in steps {
        for j in [k, k + 1] {
            let v0 = storage.at(j).evaluate(&DVector::zeros(n))?;
            if v0.abs() > 1e-12 {
                return Err(Error::precondition(format!("V_{j}(0) = {v0}, expected 0")));
            }
        }
    }
    Ok(())
}

fn provenance(scheme: &ExpectationScheme) -> Provenance {
    Provenance {
        seed: Some(scheme.seed),
        scheme: Some(scheme.clone()),
        pairs: None,
    }
}

/// Sampled check of `H_k(x, α_k(x), v) − γ²|v|² ≤ 0` jointly over
/// `(x, v, k)`.
#[allow(clippy::too_many_arguments)]
pub fn certify_controller_general(
    sys: &GeneralSystem,
    law: &FeedbackLaw,
    storage: &StorageSequence,
    gamma: f64,
    states: &DomainBox,
    disturbances: &DomainBox,
    steps: &[usize],
    scheme: &ExpectationScheme,
) -> Result<Certificate> {
    let d = sys.dims();
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::config(format!("γ must be positive, got {gamma}")));
    }
    if states.dim() != d.state {
        return Err(Error::dims("state domain", d.state, states.dim()));
    }
    if disturbances.dim() != d.disturbance {
        return Err(Error::dims("disturbance domain", d.disturbance, disturbances.dim()));
    }
    if steps.is_empty() {
        return Err(Error::config("step window is empty"));
    }
    law.check_dims(d.state, d.control)?;
    require_zero_storage(storage, d.state, steps)?;
    let rule = ExpectationRule::new(sys.noise(), scheme)?;
    let g2 = gamma * gamma;
    let xs = states.points();
    let vs = disturbances.points();
    let (xs, vs) = (&xs, &vs);
    let cases: Vec<(usize, &DVector<f64>, &DVector<f64>)> = steps
        .iter()
        .flat_map(|&k| xs.iter().flat_map(move |x| vs.iter().map(move |v| (k, x, v))))
        .collect();
    let rows: Vec<Result<Split>> = cases
        .par_iter()
        .map(|(k, x, v)| h_k_split(sys, storage, x, &law.eval(x, *k), v, *k, &rule))
        .collect();
    let tol = Tolerance::default();
    let mut check = CheckBuilder::new("h_k_minus_gamma_v");
    for ((k, x, v), row) in cases.iter().zip(rows) {
        let split = row?;
        let h = split.value();
        let penalty = g2 * v.norm_squared();
        check.push(
            &concat(&[x.as_slice(), v.as_slice(), &[*k as f64]]),
            h.value - penalty,
            h.std_error,
            tol.bound(split.scale().max(penalty)),
            &[("h_k", h.value), ("gamma_sq_v_sq", penalty)],
        );
    }
    let mut cert = Certificate::from_checks(
        "h_infinity_control",
        Some(states.clone()),
        vec![check],
        provenance(scheme),
        tol,
    );
    cert.summary.insert("gamma_sq".into(), g2);
    cert.note(format!(
        "disturbances sampled on {:?}; witness point layout is (x, v, k)",
        disturbances.intervals()
    ));
    cert.note("internal stability is not part of this claim; see check_internal and lasalle_probe");
    Ok(cert)
}

/// Saddle data `(α_k, η_k, M, N, γ)` of the second-order synthesis theorem.
#[derive(Clone)]
pub struct SaddleData {
    pub alpha: StateMap,
    pub eta: StateMap,
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub gamma: f64,
}

impl fmt::Debug for SaddleData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SaddleData")
            .field("m", &self.m)
            .field("n", &self.n)
            .field("gamma", &self.gamma)
            .finish_non_exhaustive()
    }
}

impl SaddleData {
    pub fn new<A, E>(alpha: A, eta: E, m: DMatrix<f64>, n: DMatrix<f64>, gamma: f64) -> Result<Self>
    where
        A: Fn(&DVector<f64>, usize) -> DVector<f64> + Send + Sync + 'static,
        E: Fn(&DVector<f64>, usize) -> DVector<f64> + Send + Sync + 'static,
    {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::config(format!("γ must be positive, got {gamma}")));
        }
        if !is_positive_definite(&m) {
            return Err(Error::precondition("M must be symmetric positive definite"));
        }
        if !is_symmetric(&n) {
            return Err(Error::precondition("N must be symmetric"));
        }
        Ok(Self {
            alpha: Arc::new(alpha),
            eta: Arc::new(eta),
            m,
            n,
            gamma,
        })
    }

    /// `γ²I − N`
    pub fn gap(&self) -> DMatrix<f64> {
        let k = self.n.nrows();
        DMatrix::identity(k, k) * (self.gamma * self.gamma) - &self.n
    }

    /// `N + N(γ²I − N)⁻¹Nᵀ` with its condition number, or a precondition
    /// error when `γ²I − N` is singular.
    pub fn weight(&self) -> Result<(DMatrix<f64>, f64)> {
        let gap = symmetrize(&self.gap());
        let tol = eig_tolerance(&gap);
        let eig = gap.clone().symmetric_eigen();
        let smallest = eig.eigenvalues.iter().map(|l| l.abs()).fold(f64::INFINITY, f64::min);
        if smallest <= tol {
            return Err(Error::precondition(format!(
                "γ²I − N is singular (smallest |eigenvalue| {smallest:e})"
            )));
        }
        let largest = eig.eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max);
        let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
        let inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
        let w = &self.n + &self.n * inv * self.n.transpose();
        Ok((symmetrize(&w), largest / smallest))
    }
}

/// Sampling boxes of the second-order theorem. Stationarity and the saddle
/// value are checked over `states × steps`; Hessian domination over
/// `states × controls × disturbances × steps`.
#[derive(Debug, Clone)]
pub struct TaylorDomain {
    pub states: DomainBox,
    pub controls: DomainBox,
    pub disturbances: DomainBox,
    pub steps: Vec<usize>,
}

fn replicated_rules(noise: &NoiseModel, scheme: &ExpectationScheme) -> Result<Vec<ExpectationRule>> {
    if scheme.is_closed_form() {
        return Ok(vec![ExpectationRule::new(noise, scheme)?]);
    }
    (0..FD_REPLICATIONS as u64)
        .map(|r| {
            let s = ExpectationScheme {
                samples: (scheme.samples / FD_REPLICATIONS).max(1),
                seed: derive_seed(scheme.seed, r),
                ..scheme.clone()
            };
            ExpectationRule::new(noise, &s)
        })
        .collect()
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn fd_tolerance(scale: f64) -> f64 {
    1e-6 * (1.0 + scale.abs())
}

fn resolvable(z: &DVector<f64>) -> bool {
    z.iter().all(|&c| {
        c.is_finite() && (c + fd::gradient_step(c)) != c && (c + fd::hessian_step(c)) != c
    })
}

/// Evaluates `H_k` as a function of `z = (u; v)`, surfacing the first error.
struct Objective<'a> {
    sys: &'a GeneralSystem,
    storage: &'a StorageSequence,
    x: &'a DVector<f64>,
    k: usize,
    nu: usize,
    failure: std::sync::Mutex<Option<Error>>,
}

impl<'a> Objective<'a> {
    fn new(sys: &'a GeneralSystem, storage: &'a StorageSequence, x: &'a DVector<f64>, k: usize) -> Self {
        Self {
            sys,
            storage,
            x,
            k,
            nu: sys.dims().control,
            failure: std::sync::Mutex::new(None),
        }
    }

    fn eval(&self, z: &DVector<f64>, rule: &ExpectationRule) -> f64 {
        let u = z.rows(0, self.nu).into_owned();
        let v = z.rows(self.nu, z.len() - self.nu).into_owned();
        match h_k_split(self.sys, self.storage, self.x, &u, &v, self.k, rule) {
            Ok(s) => s.value().value,
            Err(e) => {
                self.failure.lock().unwrap().get_or_insert(e);
                f64::NAN
            }
        }
    }

    fn finish<T>(self, value: T) -> Result<T> {
        match self.failure.into_inner().unwrap() {
            Some(e) => Err(e),
            None => Ok(value),
        }
    }
}

/// Stationarity (i), Hessian domination (ii) and the saddle value (iii),
/// each sampled. Certified iff all three pass.
pub fn taylor_certify(
    sys: &GeneralSystem,
    saddle: &SaddleData,
    storage: &StorageSequence,
    domain: &TaylorDomain,
    scheme: &ExpectationScheme,
) -> Result<Certificate> {
    let d = sys.dims();
    if domain.states.dim() != d.state {
        return Err(Error::dims("state domain", d.state, domain.states.dim()));
    }
    if domain.controls.dim() != d.control {
        return Err(Error::dims("control domain", d.control, domain.controls.dim()));
    }
    if domain.disturbances.dim() != d.disturbance {
        return Err(Error::dims("disturbance domain", d.disturbance, domain.disturbances.dim()));
    }
    if saddle.m.nrows() != d.control || saddle.n.nrows() != d.disturbance {
        return Err(Error::config("M and N must match the control and disturbance dimensions"));
    }
    if domain.steps.is_empty() {
        return Err(Error::config("step window is empty"));
    }
    require_zero_storage(storage, d.state, &domain.steps)?;
    let (weight, condition) = saddle.weight()?;
    let gap = symmetrize(&saddle.gap());
    let gap_min = crate::linalg::lambda_min(&gap);
    let rule = ExpectationRule::new(sys.noise(), scheme)?;
    let reps = replicated_rules(sys.noise(), scheme)?;
    let nz = d.control + d.disturbance;
    let mut dominator = DMatrix::zeros(nz, nz);
    dominator
        .view_mut((0, 0), (d.control, d.control))
        .copy_from(&saddle.m);
    dominator
        .view_mut((d.control, d.control), (d.disturbance, d.disturbance))
        .copy_from(&saddle.n);
    let tol = Tolerance::default();

    let xs = domain.states.points();
    let point_cases: Vec<(usize, &DVector<f64>)> = domain
        .steps
        .iter()
        .flat_map(|&k| xs.iter().map(move |x| (k, x)))
        .collect();

    struct PointRow {
        z: DVector<f64>,
        grad: (f64, f64),
        scale: f64,
        value: Estimate,
        correction: f64,
        h_scale: f64,
    }
    let point_rows: Vec<Result<PointRow>> = point_cases
        .par_iter()
        .map(|(k, x)| {
            let (k, x) = (*k, *x);
            let alpha = (saddle.alpha)(x, k);
            let eta = (saddle.eta)(x, k);
            if alpha.len() != d.control || eta.len() != d.disturbance {
                return Err(Error::config("α or η returned a vector of the wrong dimension"));
            }
            let z = DVector::from_iterator(nz, alpha.iter().chain(eta.iter()).copied());
            let obj = Objective::new(sys, storage, x, k);
            let grads: Vec<DVector<f64>> = reps
                .iter()
                .map(|r| fd::gradient(|z| obj.eval(z, r), &z))
                .collect();
            let obj_grads = obj.finish(grads)?;
            let mean = obj_grads.iter().fold(DVector::zeros(nz), |a, g| a + g) / obj_grads.len() as f64;
            let se = if obj_grads.len() > 1 {
                let r = obj_grads.len() as f64;
                let ss: f64 = obj_grads.iter().map(|g| (g - &mean).norm_squared()).sum();
                (ss / (r - 1.0) / r).sqrt()
            } else {
                0.0
            };
            let split = h_k_split(sys, storage, x, &alpha, &eta, k, &rule)?;
            let correction = 0.5 * (eta.transpose() * &weight * &eta)[(0, 0)];
            let h = split.value();
            Ok(PointRow {
                z,
                grad: (mean.norm(), se),
                scale: split.scale(),
                value: Estimate {
                    value: h.value + correction,
                    std_error: h.std_error,
                },
                correction,
                h_scale: split.scale().max(correction.abs()),
            })
        })
        .collect();

    let us = domain.controls.points();
    let vs = domain.disturbances.points();
    let (xs, us, vs) = (&xs, &us, &vs);
    let hess_cases: Vec<(usize, &DVector<f64>, &DVector<f64>, &DVector<f64>)> = domain
        .steps
        .iter()
        .flat_map(|&k| {
            xs.iter().flat_map(move |x| {
                us.iter()
                    .flat_map(move |u| vs.iter().map(move |v| (k, x, u, v)))
            })
        })
        .collect();
    let hess_rows: Vec<Result<(DVector<f64>, f64, f64, f64)>> = hess_cases
        .par_iter()
        .map(|(k, x, u, v)| {
            let z = DVector::from_iterator(nz, u.iter().chain(v.iter()).copied());
            let obj = Objective::new(sys, storage, x, *k);
            let hs: Vec<DMatrix<f64>> = reps
                .iter()
                .map(|r| fd::hessian(|z| obj.eval(z, r), &z))
                .collect();
            let hs = obj.finish(hs)?;
            let lams: Vec<f64> = hs.iter().map(|h| lambda_max(&(h - &dominator))).collect();
            let mean_h = hs.iter().fold(DMatrix::zeros(nz, nz), |a, h| a + h) / hs.len() as f64;
            let (_, se) = mean_se(&lams);
            let scale = h_k_split(sys, storage, x, u, v, *k, &rule)?
                .scale()
                .max(mean_h.norm());
            Ok((z, lambda_max(&(mean_h - &dominator)), se, scale))
        })
        .collect();

    let mut stationarity = CheckBuilder::new("stationarity");
    let mut saddle_value = CheckBuilder::new("saddle_value");
    let mut unresolved = false;
    for ((k, x), row) in point_cases.iter().zip(point_rows) {
        let row = row?;
        unresolved |= !resolvable(&row.z);
        let p = concat(&[x.as_slice(), &[*k as f64]]);
        stationarity.push(
            &p,
            row.grad.0,
            row.grad.1,
            fd_tolerance(row.scale),
            &[("gradient_norm", row.grad.0)],
        );
        saddle_value.push(
            &p,
            row.value.value,
            row.value.std_error,
            tol.bound(row.h_scale),
            &[
                ("saddle_value", row.value.value),
                ("h_k", row.value.value - row.correction),
                ("correction", row.correction),
            ],
        );
    }
    let mut domination = CheckBuilder::new("hessian_domination");
    for ((k, x, _, _), row) in hess_cases.iter().zip(hess_rows) {
        let (z, lam, se, scale) = row?;
        unresolved |= !resolvable(&z);
        domination.push(
            &concat(&[x.as_slice(), z.as_slice(), &[*k as f64]]),
            lam,
            se,
            fd_tolerance(scale),
            &[("lambda_max", lam)],
        );
    }
    let mut gap_check = CheckBuilder::new("gamma_gap");
    gap_check.push(
        &[saddle.gamma],
        -gap_min,
        0.0,
        eig_tolerance(&gap),
        &[("lambda_min", gap_min)],
    );

    let mut cert = Certificate::from_checks(
        "second_order_synthesis",
        Some(domain.states.clone()),
        vec![stationarity, domination, gap_check, saddle_value],
        provenance(scheme),
        tol,
    );
    cert.summary.insert("gamma".into(), saddle.gamma);
    cert.summary.insert("gap_lambda_min".into(), gap_min);
    cert.summary.insert("gap_condition".into(), condition);
    if let Some(c) = cert.check("saddle_value") {
        cert.summary.insert("saddle_value_worst".into(), c.worst_margin);
    }
    if !reps.is_empty() && reps.len() > 1 {
        cert.note(format!(
            "finite-difference checks average {} Monte Carlo replications",
            reps.len()
        ));
    }
    cert.note("Hessian domination is checked on the sampled (x, u, v) box only");
    if unresolved {
        cert.downgrade("finite-difference step not resolvable at some sample point");
    }
    if cert.status == Status::Certified && condition > 1e8 {
        cert.note(format!("γ²I − N is ill conditioned (condition number {condition:e})"));
    }
    Ok(cert)
}
