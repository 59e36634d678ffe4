use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::functionals::{check_beta, g_beta, h0_split, h1_split, GainValue, Split, VSearch};
use crate::certificate::{Certificate, CheckBuilder, Provenance, Status, Tolerance};
use crate::dynamics::{
    simulate_ensemble, AffineSystem, ControlLaw, DisturbanceEnsemble, Dynamics,
};
use crate::error::{Error, Result};
use crate::noise::{Estimate, ExpectationRule, ExpectationScheme};
use crate::storage::{check_convex, quad_bound, DomainBox, StorageFunction};

/// Pairs sampled when a custom storage function must be checked for convexity.
pub const CONVEXITY_PAIRS: usize = 256;

fn provenance(scheme: &ExpectationScheme) -> Provenance {
    Provenance {
        seed: Some(scheme.seed),
        scheme: Some(scheme.clone()),
        pairs: None,
    }
}

fn slice(x: &DVector<f64>) -> Vec<f64> {
    x.iter().copied().collect()
}

fn push_split(check: &mut CheckBuilder, tol: &Tolerance, x: &DVector<f64>, name: &str, s: &Split) {
    let v = s.value();
    check.push(
        &slice(x),
        v.value,
        v.std_error,
        tol.bound(s.scale()),
        &[(name, v.value), ("storage", s.storage.value)],
    );
}

/// Sampled check of `V(x) ≤ c₂|x|²` and `H₀(V(x)) ≤ 0`.
pub fn check_internal(
    sys: &AffineSystem,
    v: &StorageFunction,
    c2: f64,
    domain: &DomainBox,
    scheme: &ExpectationScheme,
) -> Result<Certificate> {
    if !(c2.is_finite() && c2 > 0.0) {
        return Err(Error::config(format!("c2 must be positive, got {c2}")));
    }
    if domain.dim() != sys.state_dim() {
        return Err(Error::dims("domain", sys.state_dim(), domain.dim()));
    }
    let rule = ExpectationRule::new(sys.noise(), scheme)?;
    let tol = Tolerance::default();
    let points = domain.points();
    let rows: Vec<Result<(Estimate, Split)>> = points
        .par_iter()
        .map(|x| Ok((v.estimate(x)?, h0_split(v, sys, x, &rule)?)))
        .collect();
    let mut bound = CheckBuilder::new("quadratic_bound");
    let mut h0 = CheckBuilder::new("h0");
    for (x, row) in points.iter().zip(rows) {
        let (vx, split) = row?;
        let rhs = c2 * x.norm_squared();
        bound.push(
            &slice(x),
            vx.value - rhs,
            vx.std_error,
            tol.bound(vx.value.abs().max(rhs)),
            &[("storage", vx.value), ("c2_x_sq", rhs)],
        );
        push_split(&mut h0, &tol, x, "h0", &split);
    }
    let mut cert = Certificate::from_checks(
        "internal_stability",
        Some(domain.clone()),
        vec![bound, h0],
        provenance(scheme),
        tol,
    );
    cert.summary.insert("c2".into(), c2);
    let qb = quad_bound(v, domain)?;
    if qb.inconclusive {
        cert.downgrade(format!(
            "V(x)/|x|^2 grows towards the box boundary (sampled c2 = {}); no finite c2 is established",
            qb.sampled_c2
        ));
    }
    Ok(cert)
}

fn require_convex_storage(
    v: &StorageFunction,
    domain: &DomainBox,
    seed: u64,
) -> Result<Option<Certificate>> {
    if !v.claims_convex() {
        return Err(Error::precondition("storage function does not claim convexity"));
    }
    let v0 = v.evaluate(&DVector::zeros(v.dim()))?;
    if v0.abs() > 1e-12 {
        return Err(Error::precondition(format!("storage function has V(0) = {v0}")));
    }
    if v.is_analytically_convex() {
        return Ok(None);
    }
    let cert = check_convex(v, domain, CONVEXITY_PAIRS, seed)?;
    if cert.status != Status::Certified {
        return Err(Error::precondition(format!(
            "storage function is not certified convex on the domain (status {:?})",
            cert.status
        )));
    }
    Ok(Some(cert))
}

pub(crate) fn external_with_rule(
    sys: &AffineSystem,
    v: &StorageFunction,
    beta: f64,
    gamma_sq: f64,
    domain: &DomainBox,
    rule: &ExpectationRule,
    search: &VSearch,
    label: &str,
) -> Result<Certificate> {
    let tol = Tolerance::default();
    let points = domain.points();
    let rows: Vec<Result<(Split, GainValue)>> = points
        .par_iter()
        .map(|x| {
            Ok((
                h1_split(v, sys, x, beta, rule)?,
                g_beta(v, sys, x, beta, rule, search)?,
            ))
        })
        .collect();
    let mut h1 = CheckBuilder::new("h1");
    let mut gb = CheckBuilder::new("g_beta");
    let mut g_sup = f64::NEG_INFINITY;
    let mut exact = true;
    for (x, row) in points.iter().zip(rows) {
        let (split, g) = row?;
        push_split(&mut h1, &tol, x, "h1", &split);
        gb.push(
            &slice(x),
            g.value - gamma_sq,
            g.std_error,
            tol.bound(g.value.abs().max(gamma_sq)),
            &[("g_beta", g.value), ("gamma_sq", gamma_sq)],
        );
        g_sup = g_sup.max(g.value);
        exact &= g.exact;
    }
    let mut cert = Certificate::from_checks(
        label,
        Some(domain.clone()),
        vec![h1, gb],
        provenance(rule.scheme()),
        tol,
    );
    cert.summary.insert("beta".into(), beta);
    cert.summary.insert("gamma_sq".into(), gamma_sq);
    cert.summary.insert("g_beta_sup".into(), g_sup);
    if let Some(c) = cert.check("h1") {
        cert.summary.insert("h1_worst".into(), c.worst_margin);
    }
    if !exact {
        cert.downgrade(
            "sup over v was sampled on spheres; G_beta is only a lower bound on the true sup",
        );
    }
    Ok(cert)
}

/// Sampled check of `H₁(V(x), β) ≤ 0` and `G_β(V(x)) ≤ γ²` for convex `V`
/// with `V(0) = 0`.
pub fn check_external(
    sys: &AffineSystem,
    v: &StorageFunction,
    beta: f64,
    gamma: f64,
    domain: &DomainBox,
    scheme: &ExpectationScheme,
    search: &VSearch,
) -> Result<Certificate> {
    check_beta(beta)?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::config(format!("γ must be positive, got {gamma}")));
    }
    if domain.dim() != sys.state_dim() {
        return Err(Error::dims("domain", sys.state_dim(), domain.dim()));
    }
    let convexity = require_convex_storage(v, domain, scheme.seed)?;
    let rule = ExpectationRule::new(sys.noise(), scheme)?;
    let mut cert = external_with_rule(
        sys,
        v,
        beta,
        gamma * gamma,
        domain,
        &rule,
        search,
        "external_stability",
    )?;
    if let Some(c) = convexity {
        cert.note(format!(
            "convexity of V certified by sampling ({} pairs)",
            c.samples
        ));
    }
    if cert.status == Status::Certified {
        let qb = quad_bound(v, domain)?;
        if !qb.inconclusive {
            cert.summary.insert("c2".into(), qb.c2);
            cert.note(format!(
                "V(x) <= c2|x|^2 holds on the domain with c2 = {}; the certificate also implies internal stability",
                qb.c2
            ));
        }
    }
    Ok(cert)
}

/// Parameterized storage candidates for the γ* search.
#[derive(Debug, Clone)]
pub enum StorageFamily {
    /// `s · base` for each `s` in `scales`.
    Scaled {
        base: StorageFunction,
        scales: Vec<f64>,
    },
    Explicit(Vec<StorageFunction>),
}

impl StorageFamily {
    /// `(parameter, member)`; the parameter is the scale or the index.
    pub fn members(&self) -> Result<Vec<(f64, StorageFunction)>> {
        match self {
            Self::Scaled { base, scales } => scales
                .iter()
                .map(|s| Ok((*s, base.scaled(*s)?)))
                .collect(),
            Self::Explicit(list) => Ok(list
                .iter()
                .enumerate()
                .map(|(i, v)| (i as f64, v.clone()))
                .collect()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaStar {
    /// Upper bound on `‖𝓛‖²`; `None` when no pair was feasible.
    pub gamma_star_sq: Option<f64>,
    pub beta: Option<f64>,
    pub parameter: Option<f64>,
    pub feasible: usize,
    pub evaluated: usize,
    pub certificate: Certificate,
}

/// `β` grid with `n` logarithmically spaced points in `(1, cap]`.
pub fn log_beta_grid(cap: f64, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| cap.powf(i as f64 / n as f64))
        .collect()
}

/// Default nonlinear grid: 40 points in `(1, 4]`.
pub fn default_beta_grid() -> Vec<f64> {
    log_beta_grid(4.0, 40)
}

/// Minimizes the sampled sup of `G_β` over `(β, V)` pairs whose `H₁ ≤ 0`
/// check is certified. Ties go to the smallest `β`.
pub fn gamma_star_search(
    sys: &AffineSystem,
    family: &StorageFamily,
    betas: &[f64],
    domain: &DomainBox,
    scheme: &ExpectationScheme,
    search: &VSearch,
) -> Result<GammaStar> {
    if domain.dim() != sys.state_dim() {
        return Err(Error::dims("domain", sys.state_dim(), domain.dim()));
    }
    let mut grid: Vec<f64> = betas.to_vec();
    for b in &grid {
        check_beta(*b)?;
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let members = family.members()?;
    if members.is_empty() || grid.is_empty() {
        return Err(Error::config("γ* search needs at least one storage candidate and one β"));
    }
    for (_, v) in &members {
        require_convex_storage(v, domain, scheme.seed)?;
    }
    let rule = ExpectationRule::new(sys.noise(), scheme)?;
    let tol = Tolerance::default();
    let points = domain.points();
    let mut best: Option<(f64, f64, usize)> = None;
    let mut feasible = 0;
    let mut evaluated = 0;
    for &beta in &grid {
        for (idx, (_, v)) in members.iter().enumerate() {
            evaluated += 1;
            let rows: Vec<Result<Option<f64>>> = points
                .par_iter()
                .map(|x| {
                    let s = h1_split(v, sys, x, beta, &rule)?;
                    if s.value().value > tol.bound(s.scale()) {
                        return Ok(None);
                    }
                    Ok(Some(g_beta(v, sys, x, beta, &rule, search)?.value))
                })
                .collect();
            let mut sup = f64::NEG_INFINITY;
            let mut ok = true;
            for r in rows {
                match r? {
                    Some(g) => sup = sup.max(g),
                    None => ok = false,
                }
            }
            if !ok {
                continue;
            }
            feasible += 1;
            if best.is_none_or(|(b, _, _)| sup < b) {
                best = Some((sup, beta, idx));
            }
        }
    }
    let Some((gsq, beta, idx)) = best else {
        return Ok(GammaStar {
            gamma_star_sq: None,
            beta: None,
            parameter: None,
            feasible,
            evaluated,
            certificate: Certificate::inconclusive(
                "gamma_star",
                format!("no (beta, V) pair satisfied H1 <= 0 on the domain ({evaluated} evaluated)"),
            ),
        });
    };
    let (param, v) = &members[idx];
    let mut certificate =
        external_with_rule(sys, v, beta, gsq, domain, &rule, search, "gamma_star")?;
    certificate.summary.insert("gamma_star_sq".into(), gsq);
    certificate.summary.insert("parameter".into(), *param);
    certificate.note("gamma_star_sq is an upper bound on the squared l2 gain");
    Ok(GammaStar {
        gamma_star_sq: Some(gsq),
        beta: Some(beta),
        parameter: Some(*param),
        feasible,
        evaluated,
        certificate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Violated,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Consistent => 0,
            Verdict::Violated => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    pub ensemble_size: usize,
    pub horizon: usize,
    /// Per-trajectory `Σ|z|² / Σ|v|²`; `+∞` for diverged trajectories.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// `mean Σ|z|² / mean Σ|v|²`.
    pub mean_ratio: f64,
    pub std_error: f64,
    pub gamma_sq: f64,
    pub verdict: Verdict,
    pub seed: u64,
    pub diverged: usize,
}

/// Empirical `‖𝓛‖²` lower estimate from `x₀ = 0`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_gain(
    sys: &dyn Dynamics,
    law: Option<&dyn ControlLaw>,
    disturbance: &DisturbanceEnsemble,
    horizon: usize,
    size: usize,
    gamma_sq: f64,
    seed: u64,
) -> Result<GainReport> {
    if horizon == 0 || size == 0 {
        return Err(Error::config("empirical gain needs K ≥ 1 and N ≥ 1"));
    }
    let zero_ensemble = match disturbance {
        DisturbanceEnsemble::Zero => true,
        DisturbanceEnsemble::WhiteNoise { std_dev } => *std_dev == 0.0,
        DisturbanceEnsemble::DecayingSine { amplitude, .. } => {
            amplitude[0] == 0.0 && amplitude[1] == 0.0
        }
        DisturbanceEnsemble::Impulse { step, value } => {
            *step >= horizon || value.iter().all(|v| *v == 0.0)
        }
    };
    if zero_ensemble {
        return Err(Error::config("disturbance ensemble has zero energy"));
    }
    if !(gamma_sq.is_finite() && gamma_sq >= 0.0) {
        return Err(Error::config("γ² must be finite and ≥ 0"));
    }
    let x0 = DVector::zeros(sys.dims().state);
    let runs = simulate_ensemble(sys, &x0, law, disturbance, horizon, size, seed);
    let mut ratios = Vec::with_capacity(size);
    let mut zs = Vec::with_capacity(size);
    let mut vs = Vec::with_capacity(size);
    let mut diverged = 0;
    for r in runs {
        match r {
            Ok(t) => {
                let z = t.total_output_energy();
                let v = t.total_disturbance_energy();
                ratios.push(if v > 0.0 { z / v } else { f64::NAN });
                zs.push(z);
                vs.push(v);
            }
            Err(Error::Divergence { .. }) => {
                diverged += 1;
                ratios.push(f64::INFINITY);
            }
            Err(e) => return Err(e),
        }
    }
    let (mean_ratio, std_error) = if diverged > 0 {
        (f64::INFINITY, 0.0)
    } else {
        ratio_of_means(&zs, &vs)
    };
    let verdict = if mean_ratio > gamma_sq + 4.0 * std_error {
        Verdict::Violated
    } else {
        Verdict::Consistent
    };
    let max_ratio = ratios
        .iter()
        .copied()
        .filter(|r| !r.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(GainReport {
        ensemble_size: size,
        horizon,
        ratios,
        max_ratio,
        mean_ratio,
        std_error,
        gamma_sq,
        verdict,
        seed,
        diverged,
    })
}

/// `mean(z) / mean(v)` with a delta-method standard error.
fn ratio_of_means(z: &[f64], v: &[f64]) -> (f64, f64) {
    let n = z.len() as f64;
    let mz = z.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let r = mz / mv;
    if z.len() < 2 {
        return (r, 0.0);
    }
    let resid: f64 = z
        .iter()
        .zip(v)
        .map(|(a, b)| (a - r * b).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    (r, (resid / n).sqrt() / mv)
}

/// Per-step ensemble mean of `V(x_{k+1}) − V(x_k) + |z_k|² − γ²|v_k|²` from `x₀ = 0`.
#[allow(clippy::too_many_arguments)]
pub fn dissipation_profile(
    sys: &dyn Dynamics,
    law: Option<&dyn ControlLaw>,
    v: &StorageFunction,
    gamma_sq: f64,
    disturbance: &DisturbanceEnsemble,
    horizon: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<Estimate>> {
    if size < 2 {
        return Err(Error::config("dissipation profile needs at least two trajectories"));
    }
    let x0 = DVector::zeros(sys.dims().state);
    let runs: Vec<_> = simulate_ensemble(sys, &x0, law, disturbance, horizon, size, seed)
        .into_iter()
        .collect::<Result<_>>()?;
    let n = size as f64;
    (0..horizon)
        .map(|k| {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for t in &runs {
                let d = v.evaluate(&t.states[k + 1])? - v.evaluate(&t.states[k])? + t.z_sq[k]
                    - gamma_sq * t.v_sq[k];
                sum += d;
                sum_sq += d * d;
            }
            let mean = sum / n;
            let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
            Ok(Estimate {
                value: mean,
                std_error: (var / n).sqrt(),
            })
        })
        .collect()
}
