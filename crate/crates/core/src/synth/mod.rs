//! State-feedback laws, closed-loop formation and controller certificates.

mod general;
mod search;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::certificate::Certificate;
use crate::certify::{check_external, VSearch};
use crate::certify::{check_beta, composed_degree};
use crate::dynamics::{AffineSystem, ControlLaw, ControlledSystem};
use crate::error::{Error, Result};
use crate::noise::{Estimate, ExpectationRule, ExpectationScheme};
use crate::storage::{DomainBox, StorageFunction};

pub use general::{
    certify_controller_general, h_k_general, taylor_certify, SaddleData, StorageSequence,
    TaylorDomain, FD_REPLICATIONS,
};
pub use search::{argmax_disturbance, argmin_improve, pattern_search, PatternSearch, SearchResult};

/// `(x, k) ↦ ℝᵐ`
pub type StateMap = Arc<dyn Fn(&DVector<f64>, usize) -> DVector<f64> + Send + Sync>;

/// State-feedback law `u = α(x, k)`.
#[derive(Clone)]
pub enum FeedbackLaw {
    Zero { control_dim: usize },
    /// `u⁽¹⁾ = −β³p/(4β³p + 2)·(x⁽¹⁾ + x⁽³⁾cos x⁽²⁾)`,
    /// `u⁽²⁾ = −½(x⁽²⁾ + x⁽³⁾/(1 + |x⁽³⁾|))`.
    Example2 { beta_cubed: f64, p: f64 },
    /// `u = K x`
    LinearGain(DMatrix<f64>),
    Custom {
        name: String,
        state_dim: usize,
        control_dim: usize,
        map: StateMap,
    },
}

impl fmt::Debug for FeedbackLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero { control_dim } => write!(f, "Zero({control_dim})"),
            Self::Example2 { beta_cubed, p } => {
                write!(f, "Example2 {{ beta_cubed: {beta_cubed}, p: {p} }}")
            }
            Self::LinearGain(k) => write!(f, "LinearGain({k:?})"),
            Self::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl FeedbackLaw {
    pub fn example2() -> Self {
        Self::Example2 {
            beta_cubed: crate::builtin::EXAMPLE2_BETA_CUBED,
            p: crate::builtin::EXAMPLE2_P,
        }
    }

    pub fn custom<F>(name: impl Into<String>, state_dim: usize, control_dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>, usize) -> DVector<f64> + Send + Sync + 'static,
    {
        Self::Custom {
            name: name.into(),
            state_dim,
            control_dim,
            map: Arc::new(f),
        }
    }

    /// `β³p / (4β³p + 2)`
    pub fn example2_coefficient(beta_cubed: f64, p: f64) -> f64 {
        beta_cubed * p / (4.0 * beta_cubed * p + 2.0)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Zero { .. } => "zero",
            Self::Example2 { .. } => "builtin-example2",
            Self::LinearGain(_) => "linear-gain",
            Self::Custom { .. } => "custom",
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            Self::Zero { control_dim } | Self::Custom { control_dim, .. } => *control_dim,
            Self::Example2 { .. } => 2,
            Self::LinearGain(k) => k.nrows(),
        }
    }

    /// Required state dimension, when the law fixes one.
    pub fn state_dim(&self) -> Option<usize> {
        match self {
            Self::Zero { .. } => None,
            Self::Example2 { .. } => Some(3),
            Self::LinearGain(k) => Some(k.ncols()),
            Self::Custom { state_dim, .. } => Some(*state_dim),
        }
    }

    pub fn eval(&self, x: &DVector<f64>, k: usize) -> DVector<f64> {
        match self {
            Self::Zero { control_dim } => DVector::zeros(*control_dim),
            Self::Example2 { beta_cubed, p } => {
                let c = Self::example2_coefficient(*beta_cubed, *p);
                DVector::from_vec(vec![
                    -c * (x[0] + x[2] * x[1].cos()),
                    -0.5 * (x[1] + x[2] / (1.0 + x[2].abs())),
                ])
            }
            Self::LinearGain(gain) => gain * x,
            Self::Custom { map, .. } => map(x, k),
        }
    }

    fn check_dims(&self, state_dim: usize, control_dim: usize) -> Result<()> {
        if let Some(n) = self.state_dim() {
            if n != state_dim {
                return Err(Error::dims("feedback law state", state_dim, n));
            }
        }
        if self.control_dim() != control_dim {
            return Err(Error::dims("feedback law control", control_dim, self.control_dim()));
        }
        Ok(())
    }
}

impl ControlLaw for FeedbackLaw {
    fn control(&self, x: &DVector<f64>, k: usize) -> DVector<f64> {
        self.eval(x, k)
    }
}

/// Substitutes `u = α(x)` into the plant. Time-varying laws are frozen at `k = 0`.
pub fn closed_loop(plant: &ControlledSystem, law: &FeedbackLaw) -> Result<AffineSystem> {
    law.check_dims(plant.state_dim(), plant.control_dim())?;
    let (p1, p2, p3) = (plant.clone(), plant.clone(), plant.clone());
    let (l1, l2) = (law.clone(), law.clone());
    AffineSystem::builder(
        format!("{} under {}", plant.name(), law.kind()),
        plant.state_dim(),
        plant.disturbance_dim(),
        plant.noise().clone(),
    )
    .drift(plant.drift_degree(), move |x, w| p1.drift(x, &l1.eval(x, 0), w))
    .gain(plant.gain_degree(), move |x, w| p2.gain(x, w))
    .output(plant.output_dim(), move |x| p3.output(x, &l2.eval(x, 0)))
    .feedthrough(plant.feedthrough_rows(), {
        let p = plant.clone();
        move |x| p.feedthrough(x)
    })
    .build()
}

/// `H(V(x), u, β) = (1/β) E[V(β f(x, u, ω))] − V(x) + |m(x, u)|²`.
pub fn h_design(
    v: &StorageFunction,
    plant: &ControlledSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    beta: f64,
    rule: &ExpectationRule,
) -> Result<Estimate> {
    check_beta(beta)?;
    if v.dim() != plant.state_dim() || x.len() != plant.state_dim() {
        return Err(Error::dims("state", plant.state_dim(), x.len().min(v.dim())));
    }
    if u.len() != plant.control_dim() {
        return Err(Error::dims("control", plant.control_dim(), u.len()));
    }
    let e = rule.expect(composed_degree(v, plant.drift_degree()), |w| {
        v.value(&(plant.drift(x, u, w) * beta))
    })?;
    let vx = v.estimate(x)?;
    Ok(Estimate {
        value: e.value / beta - vx.value + plant.output(x, u).norm_squared(),
        std_error: (e.std_error * e.std_error / (beta * beta) + vx.std_error * vx.std_error)
            .sqrt(),
    })
}

/// Design certificate: `H(V, α(x), β) ≤ 0` and `G_β(V) ≤ γ²` over the domain,
/// evaluated on the closed loop.
#[allow(clippy::too_many_arguments)]
pub fn certify_controller(
    plant: &ControlledSystem,
    law: &FeedbackLaw,
    v: &StorageFunction,
    beta: f64,
    gamma: f64,
    domain: &DomainBox,
    scheme: &ExpectationScheme,
    search: &VSearch,
) -> Result<Certificate> {
    let sys = closed_loop(plant, law)?;
    let mut cert = check_external(&sys, v, beta, gamma, domain, scheme, search)?;
    cert.note(format!("closed loop of {} under the {} law", plant.name(), law.kind()));
    cert.note(
        "internal stability of the closed loop is reported separately (check_internal, lasalle_probe)",
    );
    Ok(cert)
}

#[cfg(test)]
mod tests;
