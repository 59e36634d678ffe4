use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::{rng_from_seed, Distribution, ExpectationRule, NoiseModel};

/// `f(x, ω)`
pub type DriftFn = Arc<dyn Fn(&DVector<f64>, &[f64]) -> DVector<f64> + Send + Sync>;
/// `g(x, ω)`, an `n × n_v` matrix.
pub type GainFn = Arc<dyn Fn(&DVector<f64>, &[f64]) -> DMatrix<f64> + Send + Sync>;
/// `m(x)`
pub type OutputFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// `m₁(x)`, a `(n_z − n_m) × n_v` matrix.
pub type FeedthroughFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// `f(x, u, ω)`
pub type ControlledDriftFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>, &[f64]) -> DVector<f64> + Send + Sync>;
/// `m(x, u)`
pub type ControlledOutputFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// `F_k(x, u, v, ω)`
pub type TransitionFn = Arc<
    dyn Fn(usize, &DVector<f64>, &DVector<f64>, &DVector<f64>, &[f64]) -> DVector<f64> + Send + Sync,
>;
/// `m_k(x, u, v)`
pub type GeneralOutputFn =
    Arc<dyn Fn(usize, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Dimensions shared by every system tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dims {
    pub state: usize,
    pub control: usize,
    pub disturbance: usize,
    /// Total regulated output dimension `n_z`.
    pub output: usize,
}

/// Common simulation interface of the three system tiers.
pub trait Dynamics: Send + Sync {
    fn dims(&self) -> Dims;
    fn noise(&self) -> &NoiseModel;
    /// One unchecked transition: `(x_{k+1}, z_k)`.
    fn transition(
        &self,
        k: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
        omega: &[f64],
    ) -> (DVector<f64>, DVector<f64>);
}

/// Noise draws used to spot-check the equilibrium conditions at construction.
fn spot_check_omegas(noise: &NoiseModel) -> Vec<Vec<f64>> {
    let mut out = vec![noise.mean()];
    let mut rng = rng_from_seed(0x5eed);
    for _ in 0..8 {
        let mut w = vec![0.0; noise.dim()];
        noise.draw(&mut rng, &mut w);
        out.push(w);
    }
    out
}

fn check_vec(what: &str, v: &DVector<f64>, expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::dims(what, expected, v.len()));
    }
    Ok(())
}

fn check_mat(what: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::config(format!(
            "{what}: expected {rows}×{cols}, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_zero(what: &str, v: &DVector<f64>) -> Result<()> {
    if v.iter().any(|c| *c != 0.0) {
        return Err(Error::config(format!(
            "{what} must vanish at the origin, got {:?}",
            v.as_slice()
        )));
    }
    Ok(())
}

/// Disturbance-affine system
/// `x_{k+1} = f(x_k, ω_k) + g(x_k, ω_k) v_k`, `z_k = (m(x_k); m₁(x_k) v_k)`.
#[derive(Clone)]
pub struct AffineSystem {
    name: String,
    state_dim: usize,
    disturbance_dim: usize,
    output_dim: usize,
    feedthrough_rows: usize,
    drift: DriftFn,
    gain: GainFn,
    output: OutputFn,
    feedthrough: FeedthroughFn,
    drift_degree: Option<u32>,
    gain_degree: Option<u32>,
    noise: NoiseModel,
}

impl fmt::Debug for AffineSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AffineSystem")
            .field("name", &self.name)
            .field("dims", &self.dims())
            .field("noise", &self.noise)
            .finish_non_exhaustive()
    }
}

impl AffineSystem {
    /// Starts a builder with zero drift, zero gain and empty outputs.
    pub fn builder(
        name: impl Into<String>,
        state_dim: usize,
        disturbance_dim: usize,
        noise: NoiseModel,
    ) -> AffineBuilder {
        AffineBuilder {
            sys: AffineSystem {
                name: name.into(),
                state_dim,
                disturbance_dim,
                output_dim: 0,
                feedthrough_rows: 0,
                drift: Arc::new(move |_, _| DVector::zeros(state_dim)),
                gain: Arc::new(move |_, _| DMatrix::zeros(state_dim, disturbance_dim)),
                output: Arc::new(|_| DVector::zeros(0)),
                feedthrough: Arc::new(move |_| DMatrix::zeros(0, disturbance_dim)),
                drift_degree: Some(0),
                gain_degree: Some(0),
                noise,
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn disturbance_dim(&self) -> usize {
        self.disturbance_dim
    }

    /// `n_m`
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// `n_z − n_m`
    pub fn feedthrough_rows(&self) -> usize {
        self.feedthrough_rows
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// Polynomial degree of `f` in ω, when declared.
    pub fn drift_degree(&self) -> Option<u32> {
        self.drift_degree
    }

    /// Polynomial degree of `g` in ω, when declared.
    pub fn gain_degree(&self) -> Option<u32> {
        self.gain_degree
    }

    /// Degree of `f + g v` in ω.
    pub fn omega_degree(&self) -> Option<u32> {
        Some(self.drift_degree?.max(self.gain_degree?))
    }

    pub fn drift(&self, x: &DVector<f64>, omega: &[f64]) -> DVector<f64> {
        (self.drift)(x, omega)
    }

    pub fn gain(&self, x: &DVector<f64>, omega: &[f64]) -> DMatrix<f64> {
        (self.gain)(x, omega)
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.output)(x)
    }

    pub fn feedthrough(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.feedthrough)(x)
    }

    pub fn drift_fn(&self) -> DriftFn {
        self.drift.clone()
    }

    pub fn output_fn(&self) -> OutputFn {
        self.output.clone()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Replaces the noise model, e.g. to swap the distribution of a builtin.
    pub fn with_noise(mut self, noise: NoiseModel) -> Result<Self> {
        self.noise = noise;
        self.validate()?;
        Ok(self)
    }

    /// `λ_max(E[g(x,ω)ᵀ P g(x,ω)])`-style helpers need the raw expectation;
    /// this returns `E[g(x,ω)ᵀ P g(x,ω)]`.
    pub fn expected_gain_form(
        &self,
        x: &DVector<f64>,
        p: &DMatrix<f64>,
        rule: &ExpectationRule,
    ) -> Result<DMatrix<f64>> {
        let degree = self.gain_degree.map(|d| 2 * d);
        rule.expect_matrix(degree, |w| {
            let g = self.gain(x, w);
            g.transpose() * p * g
        })
    }

    fn validate(&self) -> Result<()> {
        let n = self.state_dim;
        let nv = self.disturbance_dim;
        if n == 0 {
            return Err(Error::config("state dimension must be positive"));
        }
        let zero = DVector::zeros(n);
        let m0 = self.output(&zero);
        check_vec("m(0)", &m0, self.output_dim)?;
        check_zero("m", &m0)?;
        check_mat(
            "m1(0)",
            &self.feedthrough(&zero),
            self.feedthrough_rows,
            nv,
        )?;
        for w in spot_check_omegas(&self.noise) {
            let f0 = self.drift(&zero, &w);
            check_vec("f(0, ω)", &f0, n)?;
            check_zero("f(·, ω)", &f0)?;
            check_mat("g(0, ω)", &self.gain(&zero, &w), n, nv)?;
        }
        Ok(())
    }
}

impl Dynamics for AffineSystem {
    fn dims(&self) -> Dims {
        Dims {
            state: self.state_dim,
            control: 0,
            disturbance: self.disturbance_dim,
            output: self.output_dim + self.feedthrough_rows,
        }
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn transition(
        &self,
        _k: usize,
        x: &DVector<f64>,
        _u: &DVector<f64>,
        v: &DVector<f64>,
        omega: &[f64],
    ) -> (DVector<f64>, DVector<f64>) {
        let mut next = self.drift(x, omega);
        if self.disturbance_dim > 0 {
            next += self.gain(x, omega) * v;
        }
        let m = self.output(x);
        let fz = self.feedthrough(x) * v;
        let z = DVector::from_iterator(m.len() + fz.len(), m.iter().chain(fz.iter()).copied());
        (next, z)
    }
}

pub struct AffineBuilder {
    sys: AffineSystem,
}

impl AffineBuilder {
    /// Sets `f(x, ω)` with its declared polynomial degree in ω.
    pub fn drift<F>(mut self, degree: Option<u32>, f: F) -> Self
    where
        F: Fn(&DVector<f64>, &[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        self.sys.drift = Arc::new(f);
        self.sys.drift_degree = degree;
        self
    }

    pub fn gain<F>(mut self, degree: Option<u32>, f: F) -> Self
    where
        F: Fn(&DVector<f64>, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.sys.gain = Arc::new(f);
        self.sys.gain_degree = degree;
        self
    }

    pub fn output<F>(mut self, dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.sys.output = Arc::new(f);
        self.sys.output_dim = dim;
        self
    }

    pub fn feedthrough<F>(mut self, rows: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.sys.feedthrough = Arc::new(f);
        self.sys.feedthrough_rows = rows;
        self
    }

    pub fn build(self) -> Result<AffineSystem> {
        self.sys.validate()?;
        Ok(self.sys)
    }
}

/// Controlled affine system
/// `x_{k+1} = f(x_k, u_k, ω_k) + g(x_k, ω_k) v_k`, `z_k = (m(x_k, u_k); m₁(x_k) v_k)`.
#[derive(Clone)]
pub struct ControlledSystem {
    name: String,
    state_dim: usize,
    control_dim: usize,
    disturbance_dim: usize,
    output_dim: usize,
    feedthrough_rows: usize,
    drift: ControlledDriftFn,
    gain: GainFn,
    output: ControlledOutputFn,
    feedthrough: FeedthroughFn,
    drift_degree: Option<u32>,
    gain_degree: Option<u32>,
    noise: NoiseModel,
}

impl fmt::Debug for ControlledSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlledSystem")
            .field("name", &self.name)
            .field("dims", &self.dims())
            .finish_non_exhaustive()
    }
}

impl ControlledSystem {
    pub fn builder(
        name: impl Into<String>,
        state_dim: usize,
        control_dim: usize,
        disturbance_dim: usize,
        noise: NoiseModel,
    ) -> ControlledBuilder {
        ControlledBuilder {
            sys: ControlledSystem {
                name: name.into(),
                state_dim,
                control_dim,
                disturbance_dim,
                output_dim: 0,
                feedthrough_rows: 0,
                drift: Arc::new(move |_, _, _| DVector::zeros(state_dim)),
                gain: Arc::new(move |_, _| DMatrix::zeros(state_dim, disturbance_dim)),
                output: Arc::new(|_, _| DVector::zeros(0)),
                feedthrough: Arc::new(move |_| DMatrix::zeros(0, disturbance_dim)),
                drift_degree: Some(0),
                gain_degree: Some(0),
                noise,
            },
        }
    }

    /// Linear plant `x⁺ = Ax + A₀xω + B_u u + B_v v`, `z = (Cx; D_u u; D v)`.
    #[allow(clippy::too_many_arguments)]
    pub fn linear(
        a: DMatrix<f64>,
        a0: DMatrix<f64>,
        b_u: DMatrix<f64>,
        b_v: DMatrix<f64>,
        c: DMatrix<f64>,
        d_u: DMatrix<f64>,
        d: DMatrix<f64>,
        noise: NoiseModel,
    ) -> Result<Self> {
        let n = a.nrows();
        let nu = b_u.ncols();
        let nv = b_v.ncols();
        check_mat("A", &a, n, n)?;
        check_mat("A0", &a0, n, n)?;
        check_mat("B_u", &b_u, n, nu)?;
        check_mat("B_v", &b_v, n, nv)?;
        check_mat("C", &c, c.nrows(), n)?;
        check_mat("D_u", &d_u, d_u.nrows(), nu)?;
        check_mat("D", &d, d.nrows(), nv)?;
        if noise.dim() != 1 {
            return Err(Error::config("linear plants use scalar noise"));
        }
        let (nc, ndu) = (c.nrows(), d_u.nrows());
        let dd = d.clone();
        let bv = b_v.clone();
        Self::builder("linear-plant", n, nu, nv, noise)
            .drift(Some(1), move |x, u, w| &a * x + (&a0 * x) * w[0] + &b_u * u)
            .gain(Some(0), move |_, _| bv.clone())
            .output(nc + ndu, move |x, u| {
                let cx = &c * x;
                let du = &d_u * u;
                DVector::from_iterator(nc + ndu, cx.iter().chain(du.iter()).copied())
            })
            .feedthrough(d.nrows(), move |_| dd.clone())
            .build()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn disturbance_dim(&self) -> usize {
        self.disturbance_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn feedthrough_rows(&self) -> usize {
        self.feedthrough_rows
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn drift_degree(&self) -> Option<u32> {
        self.drift_degree
    }

    pub fn gain_degree(&self) -> Option<u32> {
        self.gain_degree
    }

    pub fn drift(&self, x: &DVector<f64>, u: &DVector<f64>, omega: &[f64]) -> DVector<f64> {
        (self.drift)(x, u, omega)
    }

    pub fn gain(&self, x: &DVector<f64>, omega: &[f64]) -> DMatrix<f64> {
        (self.gain)(x, omega)
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.output)(x, u)
    }

    pub fn feedthrough(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.feedthrough)(x)
    }

    /// Replaces the noise model; the dimension must not change.
    pub fn with_noise(mut self, noise: NoiseModel) -> Result<Self> {
        if noise.dim() != self.noise.dim() {
            return Err(Error::dims("noise", self.noise.dim(), noise.dim()));
        }
        self.noise = noise;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let n = self.state_dim;
        if n == 0 {
            return Err(Error::config("state dimension must be positive"));
        }
        let zero = DVector::zeros(n);
        let u0 = DVector::zeros(self.control_dim);
        let m0 = self.output(&zero, &u0);
        check_vec("m(0, 0)", &m0, self.output_dim)?;
        check_zero("m(·, 0)", &m0)?;
        check_mat(
            "m1(0)",
            &self.feedthrough(&zero),
            self.feedthrough_rows,
            self.disturbance_dim,
        )?;
        for w in spot_check_omegas(&self.noise) {
            let f0 = self.drift(&zero, &u0, &w);
            check_vec("f(0, 0, ω)", &f0, n)?;
            check_zero("f(·, 0, ω)", &f0)?;
            check_mat("g(0, ω)", &self.gain(&zero, &w), n, self.disturbance_dim)?;
        }
        Ok(())
    }
}

impl Dynamics for ControlledSystem {
    fn dims(&self) -> Dims {
        Dims {
            state: self.state_dim,
            control: self.control_dim,
            disturbance: self.disturbance_dim,
            output: self.output_dim + self.feedthrough_rows,
        }
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn transition(
        &self,
        _k: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
        omega: &[f64],
    ) -> (DVector<f64>, DVector<f64>) {
        let mut next = self.drift(x, u, omega);
        if self.disturbance_dim > 0 {
            next += self.gain(x, omega) * v;
        }
        let m = self.output(x, u);
        let fz = self.feedthrough(x) * v;
        let z = DVector::from_iterator(m.len() + fz.len(), m.iter().chain(fz.iter()).copied());
        (next, z)
    }
}

pub struct ControlledBuilder {
    sys: ControlledSystem,
}

impl ControlledBuilder {
    pub fn drift<F>(mut self, degree: Option<u32>, f: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>, &[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        self.sys.drift = Arc::new(f);
        self.sys.drift_degree = degree;
        self
    }

    pub fn gain<F>(mut self, degree: Option<u32>, f: F) -> Self
    where
        F: Fn(&DVector<f64>, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.sys.gain = Arc::new(f);
        self.sys.gain_degree = degree;
        self
    }

    pub fn output<F>(mut self, dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.sys.output = Arc::new(f);
        self.sys.output_dim = dim;
        self
    }

    pub fn feedthrough<F>(mut self, rows: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.sys.feedthrough = Arc::new(f);
        self.sys.feedthrough_rows = rows;
        self
    }

    pub fn build(self) -> Result<ControlledSystem> {
        self.sys.validate()?;
        Ok(self.sys)
    }
}

/// General (possibly time-varying) tier `x_{k+1} = F_k(x, u, v, ω)`,
/// `z_k = m_k(x, u, v)`.
#[derive(Clone)]
pub struct GeneralSystem {
    name: String,
    dims: Dims,
    transition: TransitionFn,
    output: GeneralOutputFn,
    omega_degree: Option<u32>,
    noise: NoiseModel,
}

impl fmt::Debug for GeneralSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralSystem")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .finish_non_exhaustive()
    }
}

impl GeneralSystem {
    /// `omega_degree` is the declared polynomial degree of `F_k` in ω.
    pub fn new<F, M>(
        name: impl Into<String>,
        dims: Dims,
        noise: NoiseModel,
        omega_degree: Option<u32>,
        transition: F,
        output: M,
    ) -> Result<Self>
    where
        F: Fn(usize, &DVector<f64>, &DVector<f64>, &DVector<f64>, &[f64]) -> DVector<f64>
            + Send
            + Sync
            + 'static,
        M: Fn(usize, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64>
            + Send
            + Sync
            + 'static,
    {
        let sys = Self {
            name: name.into(),
            dims,
            transition: Arc::new(transition),
            output: Arc::new(output),
            omega_degree,
            noise,
        };
        let zero = DVector::zeros(dims.state);
        let u0 = DVector::zeros(dims.control);
        let v0 = DVector::zeros(dims.disturbance);
        let z0 = sys.output_at(0, &zero, &u0, &v0);
        check_vec("m_0(0, 0, 0)", &z0, dims.output)?;
        check_zero("m_k(·, 0, 0)", &z0)?;
        for w in spot_check_omegas(&sys.noise) {
            let f0 = sys.transition_at(0, &zero, &u0, &v0, &w);
            check_vec("F_0(0, 0, 0, ω)", &f0, dims.state)?;
            check_zero("F_k(·, 0, 0, ω)", &f0)?;
        }
        Ok(sys)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn omega_degree(&self) -> Option<u32> {
        self.omega_degree
    }

    pub fn transition_at(
        &self,
        k: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
        omega: &[f64],
    ) -> DVector<f64> {
        (self.transition)(k, x, u, v, omega)
    }

    pub fn output_at(
        &self,
        k: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> DVector<f64> {
        (self.output)(k, x, u, v)
    }
}

impl Dynamics for GeneralSystem {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn transition(
        &self,
        k: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
        omega: &[f64],
    ) -> (DVector<f64>, DVector<f64>) {
        (
            self.transition_at(k, x, u, v, omega),
            self.output_at(k, x, u, v),
        )
    }
}

/// Linear multiplicative-noise system
/// `x_{k+1} = A x + A₀ x ω + B v`, `z = (C x; D v)` with scalar ω,
/// `E[ω] = 0`, `E[ω²] = 1`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub a0: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    noise: NoiseModel,
}

impl LinearSystem {
    /// Uses standard normal noise.
    pub fn new(
        a: DMatrix<f64>,
        a0: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        Self::with_noise(a, a0, b, c, d, NoiseModel::standard_normal())
    }

    pub fn with_noise(
        a: DMatrix<f64>,
        a0: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        noise: NoiseModel,
    ) -> Result<Self> {
        let n = a.nrows();
        check_mat("A", &a, n, n)?;
        check_mat("A0", &a0, n, n)?;
        check_mat("B", &b, n, b.ncols())?;
        check_mat("C", &c, c.nrows(), n)?;
        check_mat("D", &d, d.nrows(), b.ncols())?;
        if n == 0 {
            return Err(Error::config("state dimension must be positive"));
        }
        if noise.dim() != 1 {
            return Err(Error::config("linear systems use 1-dimensional noise"));
        }
        let dist: &Distribution = &noise.components()[0];
        if dist.moment(1).abs() > 1e-12 || (dist.moment(2) - 1.0).abs() > 1e-12 {
            return Err(Error::config(
                "linear-system noise must satisfy E[ω] = 0 and E[ω²] = 1",
            ));
        }
        Ok(Self {
            a,
            a0,
            b,
            c,
            d,
            noise,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// `L*(P) = AᵀPA + A₀ᵀPA₀`.
    pub fn adjoint(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        self.a.transpose() * p * &self.a + self.a0.transpose() * p * &self.a0
    }

    /// The same system as an [`AffineSystem`].
    pub fn to_affine(&self) -> AffineSystem {
        let n = self.state_dim();
        let nv = self.disturbance_dim();
        let (a, a0, b, c, d) = (
            self.a.clone(),
            self.a0.clone(),
            self.b.clone(),
            self.c.clone(),
            self.d.clone(),
        );
        let a0_is_zero = a0.iter().all(|v| *v == 0.0);
        AffineSystem::builder("linear", n, nv, self.noise.clone())
            .drift(Some(if a0_is_zero { 0 } else { 1 }), move |x, w| {
                &a * x + (&a0 * x) * w[0]
            })
            .gain(Some(0), move |_, _| b.clone())
            .output(self.c.nrows(), move |x| &c * x)
            .feedthrough(self.d.nrows(), move |_| d.clone())
            .build()
            .expect("linear system satisfies the affine invariants")
    }
}

impl Dynamics for LinearSystem {
    fn dims(&self) -> Dims {
        Dims {
            state: self.state_dim(),
            control: 0,
            disturbance: self.disturbance_dim(),
            output: self.c.nrows() + self.d.nrows(),
        }
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn transition(
        &self,
        _k: usize,
        x: &DVector<f64>,
        _u: &DVector<f64>,
        v: &DVector<f64>,
        omega: &[f64],
    ) -> (DVector<f64>, DVector<f64>) {
        let next = &self.a * x + (&self.a0 * x) * omega[0] + &self.b * v;
        let cx = &self.c * x;
        let dv = &self.d * v;
        let z = DVector::from_iterator(cx.len() + dv.len(), cx.iter().chain(dv.iter()).copied());
        (next, z)
    }
}
