use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::AffineSystem;
use crate::error::{Error, Result};
use crate::linalg;
use crate::noise::{rng_from_seed, Estimate, ExpectationRule};
use crate::storage::{StorageForm, StorageFunction};

/// How the supremum over `v` in `G_β` / `G⁰` is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum VSearch {
    /// Exact eigenvalue path when available, sphere sampling otherwise.
    Auto,
    /// Exact eigenvalue path; an error when `V` does not admit it.
    ClosedForm,
    /// `directions` random unit vectors (plus `±eᵢ`) times each radius.
    Sphere {
        directions: usize,
        radii: Vec<f64>,
        seed: u64,
    },
}

impl Default for VSearch {
    fn default() -> Self {
        Self::Auto
    }
}

impl VSearch {
    pub fn default_sphere() -> Self {
        Self::Sphere {
            directions: 64,
            radii: vec![0.1, 1.0, 10.0],
            seed: 0,
        }
    }
}

/// Value of a disturbance-gain functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainValue {
    pub value: f64,
    pub std_error: f64,
    /// True for the eigenvalue path; false when the sup was sampled
    /// (then `value` is only a lower bound).
    pub exact: bool,
}

/// `deg_V · deg_inner`, when both are known.
pub(crate) fn composed_degree(v: &StorageFunction, inner: Option<u32>) -> Option<u32> {
    Some(v.degree()? * inner?)
}

fn check_point(sys: &AffineSystem, v: &StorageFunction, x: &DVector<f64>) -> Result<()> {
    if v.dim() != sys.state_dim() {
        return Err(Error::dims("storage", sys.state_dim(), v.dim()));
    }
    if x.len() != sys.state_dim() {
        return Err(Error::dims("state", sys.state_dim(), x.len()));
    }
    Ok(())
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("β must be finite and > 1, got {beta}")))
    }
}

fn combine_se(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// `Δ_v V(x) = E[V(f(x,ω) + g(x,ω)v)] − V(x)`.
pub fn delta_v(
    v: &StorageFunction,
    sys: &AffineSystem,
    x: &DVector<f64>,
    dist: &DVector<f64>,
    rule: &ExpectationRule,
) -> Result<Estimate> {
    check_point(sys, v, x)?;
    if dist.len() != sys.disturbance_dim() {
        return Err(Error::dims("disturbance", sys.disturbance_dim(), dist.len()));
    }
    let unforced = dist.iter().all(|c| *c == 0.0);
    let inner = if unforced {
        sys.drift_degree()
    } else {
        sys.omega_degree()
    };
    let e = rule.expect(composed_degree(v, inner), |w| {
        let mut next = sys.drift(x, w);
        if !unforced {
            next += sys.gain(x, w) * dist;
        }
        v.value(&next)
    })?;
    let vx = v.estimate(x)?;
    Ok(Estimate {
        value: e.value - vx.value,
        std_error: combine_se(e.std_error, vx.std_error),
    })
}

/// Pieces of `H₀` / `H₁` kept apart for tolerance scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Split {
    /// `E[…] + |m(x)|²`
    pub gain: Estimate,
    /// `V(x)`
    pub storage: Estimate,
}

impl Split {
    pub fn value(&self) -> Estimate {
        Estimate {
            value: self.gain.value - self.storage.value,
            std_error: combine_se(self.gain.std_error, self.storage.std_error),
        }
    }

    pub fn scale(&self) -> f64 {
        self.gain.value.abs().max(self.storage.value.abs())
    }
}

pub(crate) fn h0_split(
    v: &StorageFunction,
    sys: &AffineSystem,
    x: &DVector<f64>,
    rule: &ExpectationRule,
) -> Result<Split> {
    check_point(sys, v, x)?;
    let e = rule.expect(composed_degree(v, sys.drift_degree()), |w| {
        v.value(&sys.drift(x, w))
    })?;
    let m = sys.output(x).norm_squared();
    Ok(Split {
        gain: Estimate {
            value: e.value + m,
            std_error: e.std_error,
        },
        storage: v.estimate(x)?,
    })
}

pub(crate) fn h1_split(
    v: &StorageFunction,
    sys: &AffineSystem,
    x: &DVector<f64>,
    beta: f64,
    rule: &ExpectationRule,
) -> Result<Split> {
    check_beta(beta)?;
    check_point(sys, v, x)?;
    let e = rule.expect(composed_degree(v, sys.drift_degree()), |w| {
        v.value(&(sys.drift(x, w) * beta))
    })?;
    let m = sys.output(x).norm_squared();
    Ok(Split {
        gain: Estimate {
            value: e.value / beta + m,
            std_error: e.std_error / beta,
        },
        storage: v.estimate(x)?,
    })
}

/// `H₀(V(x)) = E[V(f(x,ω))] − V(x) + |m(x)|²`.
pub fn h0(
    v: &StorageFunction,
    sys: &AffineSystem,
    x: &DVector<f64>,
    rule: &ExpectationRule,
) -> Result<Estimate> {
    Ok(h0_split(v, sys, x, rule)?.value())
}

/// `H₁(V(x), β) = (1/β) E[V(β f(x,ω))] − V(x) + |m(x)|²`.
pub fn h1(
    v: &StorageFunction,
    sys: &AffineSystem,
    x: &DVector<f64>,
    beta: f64,
    rule: &ExpectationRule,
) -> Result<Estimate> {
    Ok(h1_split(v, sys, x, beta, rule)?.value())
}

/// Matrix `P_eff` with `V(g v) = vᵀ gᵀ P_eff g v` for every `g` reachable at
/// `x`, or `None` when `V` does not restrict to a quadratic form on the range
/// of `g(x, ·)`.
fn effective_quadratic(
    v: &StorageFunction,
    sys: &AffineSystem,
    x: &DVector<f64>,
    rule: &ExpectationRule,
) -> Option<DMatrix<f64>> {
    match v.form() {
        StorageForm::Quadratic(p) => Some(p.clone()),
        StorageForm::Separable { p, d } => {
            let nodes = if sys.gain_degree() == Some(0) { 1 } else { rule.len() };
            let higher: Vec<usize> = (0..d.len()).filter(|i| d[*i] != 2).collect();
            for i in 0..nodes {
                let g = sys.gain(x, rule.node(i));
                if higher.iter().any(|r| g.row(*r).iter().any(|c| *c != 0.0)) {
                    return None;
                }
            }
            Some(DMatrix::from_fn(p.len(), p.len(), |i, j| {
                if i == j && d[i] == 2 {
                    p[i]
                } else {
                    0.0
                }
            }))
        }
        StorageForm::Custom(_) => None,
    }
}

/// `sup_v [k·E[V(c·g(x,ω)v)] + |m₁(x)v|²] / |v|²`.
fn disturbance_gain(
    v: &StorageFunction,
    sys: &AffineSystem,
    x: &DVector<f64>,
    k: f64,
    c: f64,
    rule: &ExpectationRule,
    search: &VSearch,
) -> Result<GainValue> {
    check_point(sys, v, x)?;
    let nv = sys.disturbance_dim();
    if nv == 0 {
        return Ok(GainValue {
            value: 0.0,
            std_error: 0.0,
            exact: true,
        });
    }
    let m1 = sys.feedthrough(x);
    let m1tm1 = m1.transpose() * &m1;
    let exact = match search {
        VSearch::Sphere { .. } => None,
        _ => effective_quadratic(v, sys, x, rule),
    };
    if let Some(p) = exact {
        let degree = sys.gain_degree().map(|d| 2 * d);
        let egpg = rule.expect_matrix(degree, |w| {
            let g = sys.gain(x, w);
            g.transpose() * &p * g
        })?;
        let scale = k * c * c;
        let q = &egpg * scale + &m1tm1;
        let (value, dir) = linalg::top_eigenpair(&q);
        let std_error = if rule.is_closed_form() || degree == Some(0) {
            0.0
        } else {
            let e = rule.expect(degree, |w| {
                let gv = sys.gain(x, w) * &dir;
                (&p * &gv).dot(&gv)
            })?;
            scale * e.std_error
        };
        return Ok(GainValue {
            value,
            std_error,
            exact: true,
        });
    }
    let (directions, radii, seed) = match search {
        VSearch::ClosedForm => {
            return Err(Error::config(
                "closed-form sup over v needs a storage function that is quadratic on the range of g",
            ))
        }
        VSearch::Sphere {
            directions,
            radii,
            seed,
        } => (*directions, radii.clone(), *seed),
        VSearch::Auto => match VSearch::default_sphere() {
            VSearch::Sphere {
                directions,
                radii,
                seed,
            } => (directions, radii, seed),
            _ => unreachable!(),
        },
    };
    if radii.is_empty() || radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::config("sphere search needs positive finite radii"));
    }
    let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(directions + 2 * nv);
    for i in 0..nv {
        for s in [1.0, -1.0] {
            let mut e = DVector::zeros(nv);
            e[i] = s;
            dirs.push(e);
        }
    }
    let mut rng = rng_from_seed(seed);
    while dirs.len() < directions + 2 * nv {
        let u = DVector::from_fn(nv, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = u.norm();
        if norm > 1e-12 {
            dirs.push(u / norm);
        }
    }
    let degree = composed_degree(v, sys.gain_degree());
    let mut best = GainValue {
        value: f64::NEG_INFINITY,
        std_error: 0.0,
        exact: false,
    };
    for u in &dirs {
        for r in &radii {
            let dv = u * *r;
            let e = rule.expect(degree, |w| v.value(&(sys.gain(x, w) * &dv * c)))?;
            let r2 = r * r;
            let val = (k * e.value + (&m1 * &dv).norm_squared()) / r2;
            if val > best.value {
                best.value = val;
                best.std_error = k * e.std_error / r2;
            }
        }
    }
    Ok(best)
}

/// `G_β(V(x)) = sup_v [((β−1)/β)E[V((β/(β−1))g v)] + |m₁ v|²] / |v|²`.
pub fn g_beta(
    v: &StorageFunction,
    sys: &AffineSystem,
    x: &DVector<f64>,
    beta: f64,
    rule: &ExpectationRule,
    search: &VSearch,
) -> Result<GainValue> {
    check_beta(beta)?;
    disturbance_gain(
        v,
        sys,
        x,
        (beta - 1.0) / beta,
        beta / (beta - 1.0),
        rule,
        search,
    )
}

/// `G⁰(V) = sup_v [E[V(g(0,ω)v)] + |m₁(0)v|²] / |v|²`.
pub fn g0(
    v: &StorageFunction,
    sys: &AffineSystem,
    rule: &ExpectationRule,
    search: &VSearch,
) -> Result<GainValue> {
    let zero = DVector::zeros(sys.state_dim());
    disturbance_gain(v, sys, &zero, 1.0, 1.0, rule, search)
}
