use std::f64::consts::PI;
use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::system::Dynamics;
use crate::error::{Error, Result};
use crate::noise::{derive_seed, rng_from_seed};

/// A trajectory is declared divergent once `|x_k|` exceeds this bound.
pub const OVERFLOW_BOUND: f64 = 1e12;

/// State-feedback control law `u = α(x, k)`.
pub trait ControlLaw: Send + Sync {
    fn control(&self, x: &DVector<f64>, k: usize) -> DVector<f64>;
}

impl<F> ControlLaw for F
where
    F: Fn(&DVector<f64>, usize) -> DVector<f64> + Send + Sync,
{
    fn control(&self, x: &DVector<f64>, k: usize) -> DVector<f64> {
        self(x, k)
    }
}

pub type DisturbanceMap = Arc<dyn Fn(&DVector<f64>, usize) -> DVector<f64> + Send + Sync>;

/// How the disturbance `v_k` is produced during a simulation.
#[derive(Clone)]
pub enum DisturbancePolicy {
    Zero,
    /// `v_k` for `k < len`, zero afterwards.
    Recorded(Vec<DVector<f64>>),
    StateFeedback(DisturbanceMap),
    /// `v_step = value`, zero at every other step.
    Impulse { step: usize, value: DVector<f64> },
}

impl std::fmt::Debug for DisturbancePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Recorded(v) => write!(f, "Recorded({} steps)", v.len()),
            Self::StateFeedback(_) => write!(f, "StateFeedback(..)"),
            Self::Impulse { step, value } => {
                write!(f, "Impulse {{ step: {step}, value: {:?} }}", value.as_slice())
            }
        }
    }
}

impl DisturbancePolicy {
    fn validate(&self, nv: usize) -> Result<()> {
        match self {
            Self::Recorded(seq) => {
                for (k, v) in seq.iter().enumerate() {
                    if v.len() != nv {
                        return Err(Error::dims(&format!("recorded v_{k}"), nv, v.len()));
                    }
                    if v.iter().any(|c| !c.is_finite()) {
                        return Err(Error::config(format!("recorded v_{k} is not finite")));
                    }
                }
            }
            Self::Impulse { value, .. } => {
                if value.len() != nv {
                    return Err(Error::dims("impulse value", nv, value.len()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn at(&self, x: &DVector<f64>, k: usize, nv: usize) -> DVector<f64> {
        match self {
            Self::Zero => DVector::zeros(nv),
            Self::Recorded(seq) => seq.get(k).cloned().unwrap_or_else(|| DVector::zeros(nv)),
            Self::StateFeedback(map) => map(x, k),
            Self::Impulse { step, value } => {
                if k == *step {
                    value.clone()
                } else {
                    DVector::zeros(nv)
                }
            }
        }
    }
}

/// Solution `x_k^{0,x₀,v}` together with its outputs and energies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    /// `x₀ … x_K`
    pub states: Vec<DVector<f64>>,
    /// `z₀ … z_{K−1}`
    pub outputs: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
    pub controls: Option<Vec<DVector<f64>>>,
    pub z_sq: Vec<f64>,
    pub v_sq: Vec<f64>,
    pub cum_z_sq: Vec<f64>,
    pub cum_v_sq: Vec<f64>,
    /// Seed of the noise stream that drove the trajectory.
    pub seed: u64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.outputs.len()
    }

    pub fn total_output_energy(&self) -> f64 {
        self.cum_z_sq.last().copied().unwrap_or(0.0)
    }

    pub fn total_disturbance_energy(&self) -> f64 {
        self.cum_v_sq.last().copied().unwrap_or(0.0)
    }

    fn push(&mut self, u: Option<DVector<f64>>, v: DVector<f64>, z: DVector<f64>, next: DVector<f64>) {
        let zs = z.norm_squared();
        let vs = v.norm_squared();
        let cz = self.cum_z_sq.last().copied().unwrap_or(0.0) + zs;
        let cv = self.cum_v_sq.last().copied().unwrap_or(0.0) + vs;
        if let (Some(c), Some(u)) = (self.controls.as_mut(), u) {
            c.push(u);
        }
        self.disturbances.push(v);
        self.outputs.push(z);
        self.states.push(next);
        self.z_sq.push(zs);
        self.v_sq.push(vs);
        self.cum_z_sq.push(cz);
        self.cum_v_sq.push(cv);
    }

    /// Writes the trajectory CSV: `k, x_*, u_*, v_*, z_sq, v_sq, cum_z_sq, cum_v_sq`.
    /// The final row (k = K) carries only the state. Floats use the shortest
    /// round-trip form, with an exponent outside `[1e-5, 1e16)`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.states.first().map_or(0, |x| x.len());
        let nu = self
            .controls
            .as_ref()
            .and_then(|c| c.first())
            .map_or(0, |u| u.len());
        let nv = self.disturbances.first().map_or(0, |v| v.len());
        let mut header = vec!["k".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=nu).map(|i| format!("u_{i}")));
        header.extend((1..=nv).map(|i| format!("v_{i}")));
        header.extend(["z_sq", "v_sq", "cum_z_sq", "cum_v_sq"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for (k, x) in self.states.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|c| format!("{c:?}")));
            if k < self.horizon() {
                if let Some(c) = &self.controls {
                    row.extend(c[k].iter().map(|c| format!("{c:?}")));
                }
                row.extend(self.disturbances[k].iter().map(|c| format!("{c:?}")));
                row.extend(
                    [self.z_sq[k], self.v_sq[k], self.cum_z_sq[k], self.cum_v_sq[k]]
                        .iter()
                        .map(|c| format!("{c:?}")),
                );
            } else {
                row.extend(std::iter::repeat_n(String::new(), nu + nv + 4));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// One transition with dimension checks; `u = None` means zero control.
pub fn step(
    sys: &dyn Dynamics,
    k: usize,
    x: &DVector<f64>,
    u: Option<&DVector<f64>>,
    v: &DVector<f64>,
    omega: &[f64],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let dims = sys.dims();
    if x.len() != dims.state {
        return Err(Error::dims("state", dims.state, x.len()));
    }
    if v.len() != dims.disturbance {
        return Err(Error::dims("disturbance", dims.disturbance, v.len()));
    }
    if omega.len() != sys.noise().dim() {
        return Err(Error::dims("noise draw", sys.noise().dim(), omega.len()));
    }
    let zero_u;
    let u = match u {
        Some(u) => {
            if u.len() != dims.control {
                return Err(Error::dims("control", dims.control, u.len()));
            }
            u
        }
        None => {
            zero_u = DVector::zeros(dims.control);
            &zero_u
        }
    };
    let (next, z) = sys.transition(k, x, u, v, omega);
    if next.iter().any(|c| !c.is_finite()) {
        return Err(Error::Divergence {
            step: k + 1,
            norm: f64::INFINITY,
            partial: Box::default(),
        });
    }
    Ok((next, z))
}

/// Simulates `K` steps from `x₀`; the noise stream is `rng_from_seed(seed)`.
pub fn simulate(
    sys: &dyn Dynamics,
    x0: &DVector<f64>,
    law: Option<&dyn ControlLaw>,
    policy: &DisturbancePolicy,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    let dims = sys.dims();
    if horizon == 0 {
        return Err(Error::config("horizon must be at least 1"));
    }
    if x0.len() != dims.state {
        return Err(Error::dims("x0", dims.state, x0.len()));
    }
    policy.validate(dims.disturbance)?;
    let mut rng = rng_from_seed(seed);
    let mut omega = vec![0.0; sys.noise().dim()];
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        controls: law.map(|_| Vec::with_capacity(horizon)),
        seed,
        ..Trajectory::default()
    };
    traj.states.push(x0.clone());
    let zero_u = DVector::zeros(dims.control);
    let mut x = x0.clone();
    for k in 0..horizon {
        sys.noise().draw(&mut rng, &mut omega);
        let u = law.map(|l| l.control(&x, k));
        if let Some(u) = &u {
            if u.len() != dims.control {
                return Err(Error::dims("control law output", dims.control, u.len()));
            }
        }
        let v = policy.at(&x, k, dims.disturbance);
        if v.len() != dims.disturbance {
            return Err(Error::dims("disturbance policy output", dims.disturbance, v.len()));
        }
        let (next, z) = sys.transition(k, &x, u.as_ref().unwrap_or(&zero_u), &v, &omega);
        let norm = next.norm();
        let diverged = !norm.is_finite() || norm > OVERFLOW_BOUND;
        traj.push(u, v, z, next.clone());
        if diverged {
            return Err(Error::Divergence {
                step: k + 1,
                norm,
                partial: Box::new(traj),
            });
        }
        x = next;
    }
    Ok(traj)
}

/// `Σ|z_k|² / Σ|v_k|²`, or `None` when the disturbance energy is zero.
pub fn energy_ratio(t: &Trajectory) -> Option<f64> {
    let ev = t.total_disturbance_energy();
    (ev > 0.0).then(|| t.total_output_energy() / ev)
}

/// Disturbance families used for simulation ensembles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceEnsemble {
    Zero,
    /// `v_k^{(j)} = A_j · decay^k · sin(frequency · k + jπ/3)` with
    /// `A_j ~ U[amplitude]` drawn per trajectory and coordinate.
    DecayingSine {
        amplitude: [f64; 2],
        decay: f64,
        frequency: f64,
    },
    /// i.i.d. `N(0, std_dev²)` entries.
    WhiteNoise { std_dev: f64 },
    Impulse { step: usize, value: Vec<f64> },
}

impl DisturbanceEnsemble {
    /// Fig. 1 style decaying sine: amplitude U[0.5, 1.5], envelope 0.98^k, frequency 0.3.
    pub fn decaying_sine() -> Self {
        Self::DecayingSine {
            amplitude: [0.5, 1.5],
            decay: 0.98,
            frequency: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::DecayingSine {
                amplitude,
                decay,
                frequency,
            } => {
                if !(amplitude[0] <= amplitude[1]) || !amplitude.iter().all(|a| a.is_finite()) {
                    return Err(Error::config("decaying_sine amplitude must be [lo, hi] with lo ≤ hi"));
                }
                if !(0.0..1.0).contains(decay) {
                    return Err(Error::config("decaying_sine decay must lie in [0, 1)"));
                }
                if !frequency.is_finite() {
                    return Err(Error::config("decaying_sine frequency must be finite"));
                }
            }
            Self::WhiteNoise { std_dev } => {
                if !(std_dev.is_finite() && *std_dev >= 0.0) {
                    return Err(Error::config("white_noise std_dev must be finite and ≥ 0"));
                }
            }
            Self::Impulse { value, .. } => {
                if value.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("impulse value must be finite"));
                }
            }
            Self::Zero => {}
        }
        Ok(())
    }

    /// Draws one realization over `horizon` steps.
    pub fn realize(&self, nv: usize, horizon: usize, seed: u64) -> Result<DisturbancePolicy> {
        self.validate()?;
        let mut rng = rng_from_seed(seed);
        Ok(match self {
            Self::Zero => DisturbancePolicy::Zero,
            Self::DecayingSine {
                amplitude,
                decay,
                frequency,
            } => {
                let amps: Vec<f64> = (0..nv)
                    .map(|_| rng.random_range(amplitude[0]..=amplitude[1]))
                    .collect();
                DisturbancePolicy::Recorded(
                    (0..horizon)
                        .map(|k| {
                            let env = decay.powi(k as i32);
                            DVector::from_fn(nv, |j, _| {
                                amps[j] * env * (frequency * k as f64 + j as f64 * PI / 3.0).sin()
                            })
                        })
                        .collect(),
                )
            }
            Self::WhiteNoise { std_dev } => DisturbancePolicy::Recorded(
                (0..horizon)
                    .map(|_| {
                        DVector::from_fn(nv, |_, _| std_dev * rng.sample::<f64, _>(StandardNormal))
                    })
                    .collect(),
            ),
            Self::Impulse { step, value } => {
                if value.len() != nv {
                    return Err(Error::dims("impulse value", nv, value.len()));
                }
                DisturbancePolicy::Impulse {
                    step: *step,
                    value: DVector::from_column_slice(value),
                }
            }
        })
    }
}

/// Seeds of trajectory `j` in an ensemble: `(noise, disturbance)`.
pub fn ensemble_seeds(seed: u64, j: usize) -> (u64, u64) {
    let s = derive_seed(seed, j as u64);
    (s, derive_seed(s, u64::MAX))
}

/// Runs `size` independent trajectories in parallel. Results are in
/// trajectory order and do not depend on the thread count.
pub fn simulate_ensemble(
    sys: &dyn Dynamics,
    x0: &DVector<f64>,
    law: Option<&dyn ControlLaw>,
    disturbance: &DisturbanceEnsemble,
    horizon: usize,
    size: usize,
    seed: u64,
) -> Vec<Result<Trajectory>> {
    let nv = sys.dims().disturbance;
    (0..size)
        .into_par_iter()
        .map(|j| {
            let (noise_seed, dist_seed) = ensemble_seeds(seed, j);
            let policy = disturbance.realize(nv, horizon, dist_seed)?;
            simulate(sys, x0, law, &policy, horizon, noise_seed)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaSalleReport {
    /// Max `|x_k|` over the tail window; `+∞` for diverged trajectories.
    pub tail_max: Vec<f64>,
    pub converged: Vec<bool>,
    pub fraction_converged: f64,
    pub threshold: f64,
}

/// Zero-disturbance ensemble probe of `x_k → 0`.
#[allow(clippy::too_many_arguments)]
pub fn lasalle_probe(
    sys: &dyn Dynamics,
    x0: &DVector<f64>,
    law: Option<&dyn ControlLaw>,
    horizon: usize,
    size: usize,
    seed: u64,
    tail_fraction: f64,
    threshold: f64,
) -> Result<LaSalleReport> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::config("tail fraction must lie in (0, 1)"));
    }
    if size == 0 {
        return Err(Error::config("ensemble size must be at least 1"));
    }
    let start = ((1.0 - tail_fraction) * horizon as f64).ceil() as usize;
    let runs = simulate_ensemble(
        sys,
        x0,
        law,
        &DisturbanceEnsemble::Zero,
        horizon,
        size,
        seed,
    );
    let mut tail_max = Vec::with_capacity(size);
    for r in runs {
        match r {
            Ok(t) => tail_max.push(
                t.states[start.min(horizon)..]
                    .iter()
                    .map(|x| x.norm())
                    .fold(0.0, f64::max),
            ),
            Err(Error::Divergence { .. }) => tail_max.push(f64::INFINITY),
            Err(e) => return Err(e),
        }
    }
    let converged: Vec<bool> = tail_max.iter().map(|m| *m < threshold).collect();
    let fraction_converged =
        converged.iter().filter(|c| **c).count() as f64 / converged.len() as f64;
    Ok(LaSalleReport {
        tail_max,
        converged,
        fraction_converged,
        threshold,
    })
}
