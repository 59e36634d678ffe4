use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::functionals::{check_beta, composed_degree};
use crate::certificate::{Certificate, CheckBuilder, Provenance, Status};
use crate::dynamics::{AffineSystem, LinearSystem};
use crate::error::{Error, Result};
use crate::linalg::{self, eig_tolerance, symmetrize};
use crate::noise::ExpectationRule;
use crate::storage::{DomainBox, StorageFunction};

fn require_pd(p: &DMatrix<f64>, n: usize) -> Result<()> {
    if p.shape() != (n, n) {
        return Err(Error::config(format!(
            "P must be {n}×{n}, got {}×{}",
            p.nrows(),
            p.ncols()
        )));
    }
    if !linalg::is_positive_definite(p) {
        return Err(Error::precondition("P must be symmetric positive definite"));
    }
    Ok(())
}

/// `(λ_max, tolerance)` of a matrix inequality `X ≤ 0`.
fn eig_margin(x: &DMatrix<f64>) -> (f64, f64) {
    let s = symmetrize(x);
    (linalg::lambda_max(&s), eig_tolerance(&s))
}

fn eig_certificate(name: &str, checks: &[(&str, f64, f64)]) -> Certificate {
    let builders = checks
        .iter()
        .map(|(n, m, t)| {
            let mut b = CheckBuilder::new(*n);
            b.push(&[], *m, 0.0, *t, &[("lambda_max", *m)]);
            b
        })
        .collect();
    Certificate::from_checks(
        name,
        None,
        builders,
        Provenance::default(),
        Default::default(),
    )
}

/// `AᵀPA + A₀ᵀPA₀ − P + CᵀC ≤ 0`.
pub fn linear_internal(sys: &LinearSystem, p: &DMatrix<f64>) -> Result<Certificate> {
    require_pd(p, sys.state_dim())?;
    let lhs = sys.adjoint(p) - p + sys.c.transpose() * &sys.c;
    let (m, t) = eig_margin(&lhs);
    Ok(eig_certificate("linear_internal", &[("lyapunov", m, t)]))
}

/// Constants of the linear-case assumption on `AᵀA + A₀ᵀA₀`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A2Diagnostics {
    pub sigma_bar: f64,
    pub sigma_min: f64,
    /// `(1, 1/σ̄)` when `σ̄ < 1`.
    pub beta0_interval: Option<[f64; 2]>,
    pub beta0: Option<f64>,
    /// `(1 − σ_min) / (1 − σ̄ β₀)`.
    pub p0: Option<f64>,
}

impl A2Diagnostics {
    /// Evaluated at `β₀ = β` when `β` is admissible, else at the interval midpoint.
    pub fn new(sys: &LinearSystem, beta: Option<f64>) -> Self {
        let q = sys.a.transpose() * &sys.a + sys.a0.transpose() * &sys.a0;
        let sigma_bar = linalg::lambda_max(&q);
        let sigma_min = linalg::lambda_min(&q);
        let (interval, beta0) = if sigma_bar < 1.0 {
            let hi = if sigma_bar > 0.0 { 1.0 / sigma_bar } else { f64::INFINITY };
            let b0 = match beta {
                Some(b) if b > 1.0 && b < hi => b,
                _ if hi.is_finite() => 0.5 * (1.0 + hi),
                _ => 2.0,
            };
            (Some([1.0, hi]), Some(b0))
        } else {
            (None, None)
        };
        let p0 = beta0.map(|b| (1.0 - sigma_min) / (1.0 - sigma_bar * b));
        Self {
            sigma_bar,
            sigma_min,
            beta0_interval: interval,
            beta0,
            p0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearBrlReport {
    pub p: Vec<Vec<f64>>,
    pub beta: f64,
    pub gamma: f64,
    /// `λ_max((β²/(β−1))BᵀPB + DᵀD − γ²I)`
    pub margin_gain: f64,
    /// `λ_max(β(AᵀPA + A₀ᵀPA₀) − P + CᵀC)`
    pub margin_dissipation: f64,
    pub tolerance_gain: f64,
    pub tolerance_dissipation: f64,
    pub status: Status,
    pub diagnostics: A2Diagnostics,
}

impl LinearBrlReport {
    pub fn certified(&self) -> bool {
        self.status == Status::Certified
    }
}

/// Eigenvalue check of the two linear bounded-real inequalities.
pub fn linear_brl(
    sys: &LinearSystem,
    p: &DMatrix<f64>,
    beta: f64,
    gamma: f64,
) -> Result<LinearBrlReport> {
    require_pd(p, sys.state_dim())?;
    check_beta(beta)?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::config(format!("γ must be positive, got {gamma}")));
    }
    let nv = sys.disturbance_dim();
    let gain = sys.b.transpose() * p * &sys.b * (beta * beta / (beta - 1.0))
        + sys.d.transpose() * &sys.d
        - DMatrix::identity(nv, nv) * (gamma * gamma);
    let diss = sys.adjoint(p) * beta - p + sys.c.transpose() * &sys.c;
    let (mg, tg) = if nv == 0 { (f64::NEG_INFINITY, 0.0) } else { eig_margin(&gain) };
    let (md, td) = eig_margin(&diss);
    let status = if mg <= tg && md <= td {
        Status::Certified
    } else {
        Status::Falsified
    };
    Ok(LinearBrlReport {
        p: linalg::to_rows(p),
        beta,
        gamma,
        margin_gain: mg,
        tolerance_gain: tg,
        margin_dissipation: md,
        tolerance_dissipation: td,
        status,
        diagnostics: A2Diagnostics::new(sys, Some(beta)),
    })
}

/// Where the search takes `P̄` from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PStrategy {
    /// Truncated series `Σ_k (L*)^k(CᵀC)` with at most `max_terms` terms.
    Series { max_terms: usize },
    Fixed(Vec<Vec<f64>>),
}

impl Default for PStrategy {
    fn default() -> Self {
        Self::Series { max_terms: 10_000 }
    }
}

/// `Σ_{k<K} (L*)^k(Q)` until terms fall below `1e-15` relative.
pub fn adjoint_series(sys: &LinearSystem, q: &DMatrix<f64>, max_terms: usize) -> DMatrix<f64> {
    let mut sum = q.clone();
    let mut term = q.clone();
    for _ in 1..max_terms {
        term = sys.adjoint(&term);
        sum += &term;
        if term.norm() <= 1e-15 * sum.norm() {
            break;
        }
    }
    sum
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearBrlSearch {
    pub status: Status,
    pub p_bar: Option<Vec<Vec<f64>>>,
    /// Generalized envelopes of `L*` relative to `P̄`: `λ_max`, `λ_min` of
    /// `P̄^{-1/2} L*(P̄) P̄^{-1/2}`.
    pub envelope: Option<[f64; 2]>,
    pub report: Option<LinearBrlReport>,
    pub diagnostics: A2Diagnostics,
    pub notes: Vec<String>,
}

/// Builds `P = p₀(β) P̄` for each `β` and returns the first certifying pair.
pub fn linear_brl_search(
    sys: &LinearSystem,
    gamma: f64,
    betas: &[f64],
    strategy: &PStrategy,
) -> Result<LinearBrlSearch> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::config(format!("γ must be positive, got {gamma}")));
    }
    let diagnostics = A2Diagnostics::new(sys, None);
    let mut notes = Vec::new();
    if diagnostics.sigma_bar >= 1.0 {
        notes.push(format!(
            "sigma_bar(A^T A + A0^T A0) = {} >= 1: the linear-case assumption fails",
            diagnostics.sigma_bar
        ));
        return Ok(LinearBrlSearch {
            status: Status::Inconclusive,
            p_bar: None,
            envelope: None,
            report: None,
            diagnostics,
            notes,
        });
    }
    let n = sys.state_dim();
    let p_bar = match strategy {
        PStrategy::Series { max_terms } => {
            let ctc = sys.c.transpose() * &sys.c;
            let s = adjoint_series(sys, &ctc, (*max_terms).max(1));
            if linalg::lambda_min(&s) > 1e-12 * (1.0 + s.norm()) {
                s
            } else {
                let eps = 1e-6 * (1.0 + ctc.norm());
                notes.push(format!(
                    "series of C^T C is singular; regularized with {eps} I"
                ));
                adjoint_series(sys, &(ctc + DMatrix::identity(n, n) * eps), (*max_terms).max(1))
            }
        }
        PStrategy::Fixed(rows) => linalg::from_rows(rows)
            .ok_or_else(|| Error::config("P_bar rows are ragged"))?,
    };
    require_pd(&p_bar, n)?;
    let eig = symmetrize(&p_bar).symmetric_eigen();
    let inv_sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * eig.eigenvectors.transpose();
    let rel = &inv_sqrt * sys.adjoint(&p_bar) * &inv_sqrt;
    let l_max = linalg::lambda_max(&rel);
    let l_min = linalg::lambda_min(&rel);
    let mut grid = betas.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut last = None;
    for beta in grid {
        check_beta(beta)?;
        if beta * l_max >= 1.0 {
            continue;
        }
        let p0 = (1.0 - l_min) / (1.0 - beta * l_max);
        let report = linear_brl(sys, &(&p_bar * p0), beta, gamma)?;
        if report.certified() {
            return Ok(LinearBrlSearch {
                status: Status::Certified,
                p_bar: Some(linalg::to_rows(&p_bar)),
                envelope: Some([l_max, l_min]),
                report: Some(report),
                diagnostics,
                notes,
            });
        }
        last = Some(report);
    }
    notes.push("no grid beta produced a certifying P = p0 * P_bar".into());
    Ok(LinearBrlSearch {
        status: Status::Inconclusive,
        p_bar: Some(linalg::to_rows(&p_bar)),
        envelope: Some([l_max, l_min]),
        report: last,
        diagnostics,
        notes,
    })
}

/// Default linear grid: 40 log-spaced points in `(1, 1/σ̄)`, cap excluded.
pub fn default_linear_beta_grid(sys: &LinearSystem) -> Vec<f64> {
    let d = A2Diagnostics::new(sys, None);
    let cap = match d.beta0_interval {
        Some([_, hi]) if hi.is_finite() => hi,
        _ => 4.0,
    };
    (1..=40).map(|i| cap.powf(i as f64 / 41.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeRow {
    pub beta: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeTable {
    pub rows: Vec<EnvelopeRow>,
    pub c1_at_one: f64,
    /// `Ĉ₁(1) < 1`.
    pub contraction: bool,
    /// Grid `β > 1` maximizing `β − Ĉ₁(β) > 0`.
    pub beta0: Option<f64>,
}

/// Sampled envelopes of `E[V̄(β f(x,ω))] / V̄(x)`; `β = 1` is always included.
pub fn estimate_c1_c2(
    sys: &AffineSystem,
    v_bar: &StorageFunction,
    betas: &[f64],
    domain: &DomainBox,
    rule: &ExpectationRule,
) -> Result<EnvelopeTable> {
    if domain.dim() != sys.state_dim() || v_bar.dim() != sys.state_dim() {
        return Err(Error::dims("domain/storage", sys.state_dim(), domain.dim()));
    }
    let mut grid: Vec<f64> = betas.iter().copied().chain([1.0]).collect();
    for b in &grid {
        if !(b.is_finite() && *b >= 1.0) {
            return Err(Error::config(format!("envelope β must be ≥ 1, got {b}")));
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let points: Vec<DVector<f64>> = domain
        .points()
        .into_iter()
        .filter(|x| x.norm() >= 1e-9)
        .collect();
    let degree = composed_degree(v_bar, sys.drift_degree());
    let mut rows = Vec::with_capacity(grid.len());
    for &beta in &grid {
        let ratios: Vec<Result<Option<f64>>> = points
            .par_iter()
            .map(|x| {
                let vx = v_bar.evaluate(x)?;
                if vx <= 1e-300 {
                    return Ok(None);
                }
                let e = rule.expect(degree, |w| v_bar.value(&(sys.drift(x, w) * beta)))?;
                Ok(Some(e.value / vx))
            })
            .collect();
        let mut c1 = f64::NEG_INFINITY;
        let mut c2 = f64::INFINITY;
        for r in ratios {
            if let Some(r) = r? {
                c1 = c1.max(r);
                c2 = c2.min(r);
            }
        }
        if !c1.is_finite() {
            return Err(Error::config("no sample with V̄(x) > 0 outside the excluded ball"));
        }
        rows.push(EnvelopeRow { beta, c1, c2 });
    }
    let c1_at_one = rows[0].c1;
    let beta0 = rows
        .iter()
        .filter(|r| r.beta > 1.0 && r.beta - r.c1 > 0.0)
        .max_by(|a, b| (a.beta - a.c1).total_cmp(&(b.beta - b.c1)))
        .map(|r| r.beta);
    Ok(EnvelopeTable {
        rows,
        c1_at_one,
        contraction: c1_at_one < 1.0,
        beta0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaConstants {
    pub q0: f64,
    pub p0: f64,
    pub gamma0_sq: f64,
}

/// `q₀ = C₁(β₀)(1 − C₂(1))/(β₀ − C₁(β₀))`, `p₀ = q₀β₀/C₁(β₀)`,
/// `γ₀² = c₂β₀²σ_g/(β₀ − 1) + σ_{m₁}`.
pub fn derive_p0_q0_gamma0<F, G>(
    c1: F,
    c2_fn: G,
    beta0: f64,
    c2: f64,
    sigma_g: f64,
    sigma_m1: f64,
) -> Result<LemmaConstants>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    check_beta(beta0)?;
    let c1b = c1(beta0);
    let c2one = c2_fn(1.0);
    if !(beta0 - c1b > 0.0) {
        return Err(Error::config(format!(
            "β₀ − C₁(β₀) > 0 fails: β₀ = {beta0}, C₁(β₀) = {c1b}"
        )));
    }
    if !(c2one < 1.0) {
        return Err(Error::config(format!("C₂(1) < 1 fails: C₂(1) = {c2one}")));
    }
    if !(c1b > 0.0) {
        return Err(Error::config(format!("C₁(β₀) must be positive, got {c1b}")));
    }
    let q0 = c1b * (1.0 - c2one) / (beta0 - c1b);
    let p0 = q0 * beta0 / c1b;
    let gamma0_sq = c2 * beta0 * beta0 * sigma_g / (beta0 - 1.0) + sigma_m1;
    Ok(LemmaConstants { q0, p0, gamma0_sq })
}
