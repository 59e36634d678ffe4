//! The i.i.d. driving noise `ω_k` and the expectation engine `E[φ(ω)]`.
//!
//! Two evaluation schemes are supported:
//!
//! * **closed form**: a tensor-product three-point Gauss rule matched to each
//!   coordinate's distribution. Every such rule reproduces the moments of its
//!   distribution up to order five, so the rule returns the exact moment
//!   combination for any integrand that is a polynomial of degree ≤ 4 in ω.
//!   Integrands must declare their degree to be admitted.
//! * **Monte Carlo**: an N-sample mean drawn from a ChaCha8 stream seeded by
//!   the scheme, optionally with antithetic pairs.
//!
//! A prepared [`ExpectationRule`] fixes its nodes once, so repeated
//! evaluations across many states reuse the same draws (common random
//! numbers) and are bit-for-bit deterministic.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest polynomial degree admitted by the closed-form scheme.
pub const MAX_CLOSED_FORM_DEGREE: u32 = 4;

/// Per-coordinate distribution of the driving noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// Uniform on `[lo, hi]`.
    Uniform(f64, f64),
    /// Gaussian with `(mean, variance)`.
    Gaussian(f64, f64),
    PointMass(f64),
    /// ±1 with equal probability.
    Rademacher,
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Uniform(lo, hi) if !(lo.is_finite() && hi.is_finite() && lo < hi) => Err(
                Error::config(format!("uniform({lo}, {hi}) requires finite lo < hi")),
            ),
            Distribution::Gaussian(mean, var) if !(mean.is_finite() && var.is_finite() && var >= 0.0) => {
                Err(Error::config(format!(
                    "gaussian({mean}, {var}) requires a finite mean and variance ≥ 0"
                )))
            }
            Distribution::PointMass(v) if !v.is_finite() => {
                Err(Error::config("point mass value must be finite"))
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Uniform(lo, hi) => 0.5 * (lo + hi),
            Distribution::Gaussian(mean, _) => mean,
            Distribution::PointMass(v) => v,
            Distribution::Rademacher => 0.0,
        }
    }

    /// Raw moment `E[θ^k]` for `k ≤ 4`.
    pub fn moment(&self, k: u32) -> f64 {
        match *self {
            Distribution::Uniform(lo, hi) => {
                let kp = (k + 1) as i32;
                (hi.powi(kp) - lo.powi(kp)) / ((k + 1) as f64 * (hi - lo))
            }
            Distribution::Gaussian(mu, s2) => match k {
                0 => 1.0,
                1 => mu,
                2 => mu * mu + s2,
                3 => mu.powi(3) + 3.0 * mu * s2,
                4 => mu.powi(4) + 6.0 * mu * mu * s2 + 3.0 * s2 * s2,
                _ => panic!("moments above order 4 are not provided"),
            },
            Distribution::PointMass(v) => v.powi(k as i32),
            Distribution::Rademacher => {
                if k % 2 == 0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Draws a centred deviation `θ − E[θ]`. Symmetric about zero for every
    /// supported distribution, which is what antithetic pairing relies on.
    fn deviation<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Uniform(lo, hi) => (hi - lo) * (rng.random::<f64>() - 0.5),
            Distribution::Gaussian(_, var) => {
                let z: f64 = rng.sample(StandardNormal);
                var.sqrt() * z
            }
            Distribution::PointMass(_) => 0.0,
            Distribution::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    /// Three-point (or fewer) Gauss rule exact up to degree 5.
    fn gauss_rule(&self) -> Vec<(f64, f64)> {
        match *self {
            Distribution::Uniform(lo, hi) => {
                let c = 0.5 * (lo + hi);
                let h = 0.5 * (hi - lo) * (0.6f64).sqrt();
                vec![(c - h, 5.0 / 18.0), (c, 8.0 / 18.0), (c + h, 5.0 / 18.0)]
            }
            Distribution::Gaussian(mu, var) => {
                if var == 0.0 {
                    return vec![(mu, 1.0)];
                }
                let h = (3.0 * var).sqrt();
                vec![(mu - h, 1.0 / 6.0), (mu, 2.0 / 3.0), (mu + h, 1.0 / 6.0)]
            }
            Distribution::PointMass(v) => vec![(v, 1.0)],
            Distribution::Rademacher => vec![(-1.0, 0.5), (1.0, 0.5)],
        }
    }
}

/// Distribution of one draw `ω_k ∈ ℝ^d`; coordinates are independent and the
/// sequence is i.i.d. across time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNoiseModel")]
pub struct NoiseModel {
    dim: usize,
    components: Vec<Distribution>,
}

#[derive(Deserialize)]
struct RawNoiseModel {
    dim: usize,
    components: Vec<Distribution>,
}

impl TryFrom<RawNoiseModel> for NoiseModel {
    type Error = Error;

    fn try_from(raw: RawNoiseModel) -> Result<Self> {
        if raw.dim != raw.components.len() {
            return Err(Error::config(format!(
                "noise dim {} does not match {} components",
                raw.dim,
                raw.components.len()
            )));
        }
        NoiseModel::new(raw.components)
    }
}

impl NoiseModel {
    pub fn new(components: Vec<Distribution>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::config("noise model needs at least one component"));
        }
        for c in &components {
            c.validate()?;
        }
        Ok(Self {
            dim: components.len(),
            components,
        })
    }

    pub fn scalar(dist: Distribution) -> Result<Self> {
        Self::new(vec![dist])
    }

    /// Standard normal scalar noise.
    pub fn standard_normal() -> Self {
        Self::scalar(Distribution::Gaussian(0.0, 1.0)).expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Distribution] {
        &self.components
    }

    pub fn mean(&self) -> Vec<f64> {
        self.components.iter().map(Distribution::mean).collect()
    }

    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (slot, c) in out.iter_mut().zip(&self.components) {
            *slot = c.mean() + c.deviation(rng);
        }
    }

    /// Fills `out` with one draw taken from `rng`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        self.draw_into(rng, out);
    }
}

/// Derives an independent sub-seed for stream `index` as `seed ⊕ mix(index)`,
/// where `mix` is the SplitMix64 finalizer.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = index.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    seed ^ (z ^ (z >> 31))
}

/// Generator used for every random stream in the toolkit.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws `count` i.i.d. rows from `noise`.
pub fn sample(noise: &NoiseModel, seed: u64, count: usize) -> Result<DMatrix<f64>> {
    if count == 0 {
        return Err(Error::config("sample count must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut data = vec![0.0; count * noise.dim()];
    for row in data.chunks_mut(noise.dim()) {
        noise.draw_into(&mut rng, row);
    }
    Ok(DMatrix::from_row_slice(count, noise.dim(), &data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpectationMode {
    MonteCarlo,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectationScheme {
    pub mode: ExpectationMode,
    /// Number of integrand evaluations (Monte Carlo only).
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
}

fn default_samples() -> usize {
    100_000
}

impl ExpectationScheme {
    pub fn closed_form() -> Self {
        Self {
            mode: ExpectationMode::ClosedForm,
            samples: 0,
            seed: 0,
            antithetic: false,
        }
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        Self {
            mode: ExpectationMode::MonteCarlo,
            samples,
            seed,
            antithetic: false,
        }
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn is_closed_form(&self) -> bool {
        self.mode == ExpectationMode::ClosedForm
    }
}

/// Point estimate with its Monte Carlo standard error (0 for exact rules).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RuleKind {
    ClosedForm,
    MonteCarlo,
    /// Nodes are stored as consecutive (μ + d, μ − d) pairs.
    Antithetic,
}

/// Prepared quadrature / sample set for one `(noise, scheme)` pair.
#[derive(Debug, Clone)]
pub struct ExpectationRule {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    kind: RuleKind,
    scheme: ExpectationScheme,
}

impl ExpectationRule {
    pub fn new(noise: &NoiseModel, scheme: &ExpectationScheme) -> Result<Self> {
        let dim = noise.dim();
        match scheme.mode {
            ExpectationMode::ClosedForm => {
                let mut nodes: Vec<Vec<f64>> = vec![Vec::new()];
                let mut weights = vec![1.0];
                for c in noise.components() {
                    let rule = c.gauss_rule();
                    let mut next_nodes = Vec::with_capacity(nodes.len() * rule.len());
                    let mut next_weights = Vec::with_capacity(nodes.len() * rule.len());
                    for (prefix, w) in nodes.iter().zip(&weights) {
                        for &(t, wt) in &rule {
                            let mut p = prefix.clone();
                            p.push(t);
                            next_nodes.push(p);
                            next_weights.push(w * wt);
                        }
                    }
                    nodes = next_nodes;
                    weights = next_weights;
                }
                Ok(Self {
                    dim,
                    nodes: nodes.concat(),
                    weights,
                    kind: RuleKind::ClosedForm,
                    scheme: scheme.clone(),
                })
            }
            ExpectationMode::MonteCarlo => {
                if scheme.samples == 0 {
                    return Err(Error::config("Monte Carlo scheme needs samples ≥ 1"));
                }
                let mut rng = rng_from_seed(scheme.seed);
                let (kind, count) = if scheme.antithetic {
                    (RuleKind::Antithetic, 2 * scheme.samples.div_ceil(2))
                } else {
                    (RuleKind::MonteCarlo, scheme.samples)
                };
                let mut nodes = vec![0.0; count * dim];
                match kind {
                    RuleKind::Antithetic => {
                        for pair in nodes.chunks_mut(2 * dim) {
                            let (plus, minus) = pair.split_at_mut(dim);
                            for (j, c) in noise.components().iter().enumerate() {
                                let d = c.deviation(&mut rng);
                                plus[j] = c.mean() + d;
                                minus[j] = c.mean() - d;
                            }
                        }
                    }
                    _ => {
                        for row in nodes.chunks_mut(dim) {
                            noise.draw_into(&mut rng, row);
                        }
                    }
                }
                let w = 1.0 / count as f64;
                Ok(Self {
                    dim,
                    nodes,
                    weights: vec![w; count],
                    kind,
                    scheme: scheme.clone(),
                })
            }
        }
    }

    pub fn scheme(&self) -> &ExpectationScheme {
        &self.scheme
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_closed_form(&self) -> bool {
        self.kind == RuleKind::ClosedForm
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    fn check_degree(&self, degree: Option<u32>) -> Result<()> {
        if self.kind == RuleKind::ClosedForm {
            match degree {
                Some(d) if d <= MAX_CLOSED_FORM_DEGREE => Ok(()),
                Some(d) => Err(Error::ClosedFormUnavailable(format!(
                    "integrand has degree {d} in the noise (max {MAX_CLOSED_FORM_DEGREE})"
                ))),
                None => Err(Error::ClosedFormUnavailable(
                    "integrand is not declared polynomial in the noise".into(),
                )),
            }
        } else {
            Ok(())
        }
    }

    fn finite(&self, value: f64, i: usize) -> Result<f64> {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Evaluation {
                message: format!("integrand returned {value}"),
                omega: self.node(i).to_vec(),
            })
        }
    }

    /// `E[φ(ω)]`. `degree` is the integrand's declared polynomial degree in
    /// ω (`None` for a general integrand). A declared degree of 0 means φ does
    /// not depend on ω and is evaluated once.
    pub fn expect<F>(&self, degree: Option<u32>, integrand: F) -> Result<Estimate>
    where
        F: Fn(&[f64]) -> f64,
    {
        self.check_degree(degree)?;
        if degree == Some(0) {
            let v = self.finite(integrand(self.node(0)), 0)?;
            return Ok(Estimate::exact(v));
        }
        match self.kind {
            RuleKind::ClosedForm => {
                let mut acc = 0.0;
                for (i, w) in self.weights.iter().enumerate() {
                    acc += w * self.finite(integrand(self.node(i)), i)?;
                }
                Ok(Estimate::exact(acc))
            }
            RuleKind::MonteCarlo => {
                let mut stats = Welford::default();
                for i in 0..self.len() {
                    stats.push(self.finite(integrand(self.node(i)), i)?);
                }
                Ok(stats.estimate())
            }
            RuleKind::Antithetic => {
                let mut stats = Welford::default();
                for i in (0..self.len()).step_by(2) {
                    let a = self.finite(integrand(self.node(i)), i)?;
                    let b = self.finite(integrand(self.node(i + 1)), i + 1)?;
                    stats.push(0.5 * (a + b));
                }
                Ok(stats.estimate())
            }
        }
    }

    /// Entrywise expectation of a matrix-valued integrand (no error estimate).
    pub fn expect_matrix<F>(&self, degree: Option<u32>, integrand: F) -> Result<DMatrix<f64>>
    where
        F: Fn(&[f64]) -> DMatrix<f64>,
    {
        self.check_degree(degree)?;
        let first = integrand(self.node(0));
        if degree == Some(0) {
            return self.finite_matrix(first, 0);
        }
        let mut acc = self.finite_matrix(first, 0)? * self.weights[0];
        for i in 1..self.len() {
            acc += self.finite_matrix(integrand(self.node(i)), i)? * self.weights[i];
        }
        Ok(acc)
    }

    fn finite_matrix(&self, m: DMatrix<f64>, i: usize) -> Result<DMatrix<f64>> {
        if m.iter().all(|v| v.is_finite()) {
            Ok(m)
        } else {
            Err(Error::Evaluation {
                message: "matrix integrand has non-finite entries".into(),
                omega: self.node(i).to_vec(),
            })
        }
    }
}

/// `E[φ(ω)]` for a one-off integrand; see [`ExpectationRule::expect`].
pub fn expect<F>(
    noise: &NoiseModel,
    scheme: &ExpectationScheme,
    degree: Option<u32>,
    integrand: F,
) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64,
{
    ExpectationRule::new(noise, scheme)?.expect(degree, integrand)
}

#[derive(Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn estimate(&self) -> Estimate {
        let se = if self.n > 1 {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        } else {
            0.0
        };
        Estimate {
            value: self.mean,
            std_error: se,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform01() -> NoiseModel {
        NoiseModel::scalar(Distribution::Uniform(0.0, 1.0)).unwrap()
    }

    #[test]
    fn point_mass_rows_are_constant() {
        let noise = NoiseModel::scalar(Distribution::PointMass(0.7)).unwrap();
        let s = sample(&noise, 1, 3).unwrap();
        assert_eq!(s.nrows(), 3);
        assert!(s.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn uniform_sample_mean() {
        let s = sample(&uniform01(), 11, 100_000).unwrap();
        let mean = s.mean();
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
        assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn rademacher_sample_moments() {
        let noise = NoiseModel::scalar(Distribution::Rademacher).unwrap();
        let s = sample(&noise, 5, 100_000).unwrap();
        let mean = s.mean();
        let second = s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!((second - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_count_rejected() {
        assert!(matches!(sample(&uniform01(), 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(NoiseModel::scalar(Distribution::Uniform(1.0, 1.0)).is_err());
        assert!(NoiseModel::scalar(Distribution::Gaussian(0.0, -1.0)).is_err());
        let bad: std::result::Result<NoiseModel, _> =
            serde_json::from_str(r#"{"dim":2,"components":[{"uniform":[0,1]}]}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn config_block_parses() {
        let n: NoiseModel = serde_json::from_str(
            r#"{"dim":3,"components":[{"uniform":[0,1]},{"gaussian":[0,1]},"rademacher"]}"#,
        )
        .unwrap();
        assert_eq!(n.dim(), 3);
        assert_eq!(n.components()[2], Distribution::Rademacher);
    }

    #[test]
    fn closed_form_first_and_second_moments() {
        let cf = ExpectationScheme::closed_form();
        let e = expect(&uniform01(), &cf, Some(1), |w| w[0]).unwrap();
        assert!((e.value - 0.5).abs() < 1e-15);
        assert_eq!(e.std_error, 0.0);
        let centred = NoiseModel::scalar(Distribution::Uniform(-0.5, 0.5)).unwrap();
        let e = expect(&centred, &cf, Some(2), |w| w[0] * w[0]).unwrap();
        assert!((e.value - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_moments_to_degree_four() {
        let dists = [
            Distribution::Uniform(-0.3, 1.7),
            Distribution::Gaussian(0.4, 2.5),
            Distribution::PointMass(-1.25),
            Distribution::Rademacher,
        ];
        for d in dists {
            let noise = NoiseModel::scalar(d).unwrap();
            for k in 0..=4u32 {
                let e = expect(&noise, &ExpectationScheme::closed_form(), Some(k), |w| {
                    w[0].powi(k as i32)
                })
                .unwrap();
                let m = d.moment(k);
                assert!((e.value - m).abs() < 1e-12 * (1.0 + m.abs()), "{d:?} k={k}");
            }
        }
    }

    #[test]
    fn closed_form_rejects_undeclared_integrand() {
        let r = expect(&uniform01(), &ExpectationScheme::closed_form(), None, |w| w[0].sin());
        assert!(matches!(r, Err(Error::ClosedFormUnavailable(_))));
        let r = expect(&uniform01(), &ExpectationScheme::closed_form(), Some(5), |w| w[0]);
        assert!(matches!(r, Err(Error::ClosedFormUnavailable(_))));
    }

    #[test]
    fn gaussian_unit_variance_monte_carlo() {
        let e = expect(
            &NoiseModel::standard_normal(),
            &ExpectationScheme::monte_carlo(100_000, 3),
            None,
            |w| 0f64.cos().powi(2) * w[0] * w[0],
        )
        .unwrap();
        assert!((e.value - 1.0).abs() < 3.0 * e.std_error, "{e:?}");
        assert!(e.std_error > 0.0);
    }

    #[test]
    fn non_finite_integrand_reports_omega() {
        let r = expect(
            &uniform01(),
            &ExpectationScheme::monte_carlo(10, 1),
            None,
            |w| if w[0] > 0.0 { f64::NAN } else { 0.0 },
        );
        match r {
            Err(Error::Evaluation { omega, .. }) => assert_eq!(omega.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn antithetic_cancels_odd_integrands() {
        for d in [
            Distribution::Uniform(-1.0, 1.0),
            Distribution::Gaussian(0.0, 2.0),
            Distribution::Rademacher,
        ] {
            let noise = NoiseModel::new(vec![d, d]).unwrap();
            let scheme = ExpectationScheme::monte_carlo(1001, 9).with_antithetic(true);
            let e = expect(&noise, &scheme, None, |w| w[1] - d.mean()).unwrap();
            assert_eq!(e.value, 0.0, "{d:?}");
        }
        // Off-centre support: cancellation up to rounding.
        let scheme = ExpectationScheme::monte_carlo(1000, 9).with_antithetic(true);
        let e = expect(&uniform01(), &scheme, None, |w| w[0] - 0.5).unwrap();
        assert!(e.value.abs() < 1e-15);
    }

    #[test]
    fn derived_seeds_differ_by_index() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(42, 0));
    }

    #[test]
    fn degree_zero_evaluates_once() {
        let noise = NoiseModel::standard_normal();
        let rule = ExpectationRule::new(&noise, &ExpectationScheme::monte_carlo(50, 1)).unwrap();
        let calls = std::cell::Cell::new(0);
        let e = rule
            .expect(Some(0), |_| {
                calls.set(calls.get() + 1);
                2.5
            })
            .unwrap();
        assert_eq!(e, Estimate::exact(2.5));
        assert_eq!(calls.get(), 1);
    }
}
