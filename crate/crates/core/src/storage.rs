//! Candidate storage functions and their structural checks.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{Certificate, CheckBuilder, Provenance, Tolerance};
use crate::dynamics::AffineSystem;
use crate::error::{Error, Result};
use crate::linalg;
use crate::noise::{derive_seed, rng_from_seed, Estimate};

/// A storage function backed by arbitrary code, e.g. an estimator.
pub trait CustomStorage: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    /// Standard error of [`value`](Self::value) when it is an estimate.
    fn std_error(&self, _x: &DVector<f64>) -> f64 {
        0.0
    }
}

#[derive(Clone)]
pub enum StorageForm {
    /// `xᵀ P x`
    Quadratic(DMatrix<f64>),
    /// `Σ pᵢ xᵢ^{dᵢ}`
    Separable { p: Vec<f64>, d: Vec<u32> },
    Custom(Arc<dyn CustomStorage>),
}

impl fmt::Debug for StorageForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Quadratic(p) => f.debug_tuple("Quadratic").field(p).finish(),
            Self::Separable { p, d } => f
                .debug_struct("Separable")
                .field("p", p)
                .field("d", d)
                .finish(),
            Self::Custom(c) => write!(f, "Custom(dim = {})", c.dim()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StorageFunction {
    form: StorageForm,
    claims_convex: bool,
    claims_v0_zero: bool,
}

struct Scaled {
    inner: Arc<dyn CustomStorage>,
    factor: f64,
}

impl CustomStorage for Scaled {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.factor * self.inner.value(x)
    }
    fn std_error(&self, x: &DVector<f64>) -> f64 {
        self.factor * self.inner.std_error(x)
    }
}

impl StorageFunction {
    /// `xᵀPx` with `P` symmetric positive definite.
    pub fn quadratic(p: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_symmetric(&p) {
            return Err(Error::config("quadratic storage: P must be symmetric"));
        }
        if !(linalg::lambda_min(&p) > 0.0) {
            return Err(Error::config("quadratic storage: P must be positive definite"));
        }
        Ok(Self {
            form: StorageForm::Quadratic(p),
            claims_convex: true,
            claims_v0_zero: true,
        })
    }

    /// `Σ pᵢ xᵢ^{dᵢ}` with `pᵢ > 0` and even `dᵢ ≥ 2`.
    pub fn separable(p: Vec<f64>, d: Vec<u32>) -> Result<Self> {
        if p.len() != d.len() || p.is_empty() {
            return Err(Error::config(
                "separable storage: p and d must be non-empty and of equal length",
            ));
        }
        if p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config("separable storage: every p_i must be positive"));
        }
        if d.iter().any(|v| *v < 2 || v % 2 != 0) {
            return Err(Error::config("separable storage: every d_i must be even and ≥ 2"));
        }
        Ok(Self {
            form: StorageForm::Separable { p, d },
            claims_convex: true,
            claims_v0_zero: true,
        })
    }

    /// Wraps arbitrary code; `V(0) = 0` is point-checked when claimed.
    pub fn custom(
        inner: Arc<dyn CustomStorage>,
        claims_convex: bool,
        claims_v0_zero: bool,
    ) -> Result<Self> {
        if claims_v0_zero {
            let v0 = inner.value(&DVector::zeros(inner.dim()));
            if v0.abs() > 1e-12 {
                return Err(Error::config(format!("custom storage claims V(0) = 0 but V(0) = {v0}")));
            }
        }
        Ok(Self {
            form: StorageForm::Custom(inner),
            claims_convex,
            claims_v0_zero,
        })
    }

    pub fn form(&self) -> &StorageForm {
        &self.form
    }

    pub fn claims_convex(&self) -> bool {
        self.claims_convex
    }

    pub fn claims_v0_zero(&self) -> bool {
        self.claims_v0_zero
    }

    /// Quadratic and separable forms are convex by construction.
    pub fn is_analytically_convex(&self) -> bool {
        !matches!(self.form, StorageForm::Custom(_))
    }

    pub fn dim(&self) -> usize {
        match &self.form {
            StorageForm::Quadratic(p) => p.nrows(),
            StorageForm::Separable { p, .. } => p.len(),
            StorageForm::Custom(c) => c.dim(),
        }
    }

    /// Polynomial degree in `x`, when `V` is polynomial.
    pub fn degree(&self) -> Option<u32> {
        match &self.form {
            StorageForm::Quadratic(_) => Some(2),
            StorageForm::Separable { d, .. } => d.iter().copied().max(),
            StorageForm::Custom(_) => None,
        }
    }

    pub fn quadratic_matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.form {
            StorageForm::Quadratic(p) => Some(p),
            _ => None,
        }
    }

    /// Unchecked evaluation.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match &self.form {
            StorageForm::Quadratic(p) => (p * x).dot(x),
            StorageForm::Separable { p, d } => p
                .iter()
                .zip(d)
                .zip(x.iter())
                .map(|((pi, di), xi)| pi * xi.powi(*di as i32))
                .sum(),
            StorageForm::Custom(c) => c.value(x),
        }
    }

    pub fn std_error(&self, x: &DVector<f64>) -> f64 {
        match &self.form {
            StorageForm::Custom(c) => c.std_error(x),
            _ => 0.0,
        }
    }

    /// Checked evaluation.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::dims("storage argument", self.dim(), x.len()));
        }
        let v = self.value(x);
        if !v.is_finite() {
            return Err(Error::Evaluation {
                message: format!("V(x) = {v} at x = {:?}", x.as_slice()),
                omega: Vec::new(),
            });
        }
        Ok(v)
    }

    pub fn estimate(&self, x: &DVector<f64>) -> Result<Estimate> {
        Ok(Estimate {
            value: self.evaluate(x)?,
            std_error: self.std_error(x),
        })
    }

    /// `s · V` for `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::config("storage scale must be positive"));
        }
        let form = match &self.form {
            StorageForm::Quadratic(p) => StorageForm::Quadratic(p * s),
            StorageForm::Separable { p, d } => StorageForm::Separable {
                p: p.iter().map(|v| v * s).collect(),
                d: d.clone(),
            },
            StorageForm::Custom(c) => StorageForm::Custom(Arc::new(Scaled {
                inner: c.clone(),
                factor: s,
            })),
        };
        Ok(Self {
            form,
            claims_convex: self.claims_convex,
            claims_v0_zero: self.claims_v0_zero,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Sampling {
    /// Tensor grid including both endpoints of every interval.
    Grid { points_per_axis: usize },
    Random { count: usize, seed: u64 },
}

/// Axis-aligned box `Π [loᵢ, hiᵢ]` with a sampling plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawDomainBox")]
pub struct DomainBox {
    intervals: Vec<[f64; 2]>,
    sampling: Sampling,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomainBox {
    intervals: Vec<[f64; 2]>,
    sampling: Sampling,
}

impl TryFrom<RawDomainBox> for DomainBox {
    type Error = Error;
    fn try_from(raw: RawDomainBox) -> Result<Self> {
        DomainBox::new(raw.intervals, raw.sampling)
    }
}

impl DomainBox {
    pub fn new(intervals: Vec<[f64; 2]>, sampling: Sampling) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::config("domain box needs at least one interval"));
        }
        for (i, [lo, hi]) in intervals.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(format!(
                    "domain interval {i}: need finite lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        match sampling {
            Sampling::Grid { points_per_axis: 0 } | Sampling::Random { count: 0, .. } => {
                return Err(Error::config("domain sampling must produce at least one point"));
            }
            _ => {}
        }
        Ok(Self {
            intervals,
            sampling,
        })
    }

    /// `[lo, hi]ⁿ`
    pub fn cube(n: usize, lo: f64, hi: f64, sampling: Sampling) -> Result<Self> {
        Self::new(vec![[lo, hi]; n], sampling)
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[[f64; 2]] {
        &self.intervals
    }

    pub fn sampling(&self) -> Sampling {
        self.sampling
    }

    pub fn count(&self) -> usize {
        match self.sampling {
            Sampling::Grid { points_per_axis } => points_per_axis.pow(self.dim() as u32),
            Sampling::Random { count, .. } => count,
        }
    }

    /// The sample points in a fixed order.
    pub fn points(&self) -> Vec<DVector<f64>> {
        match self.sampling {
            Sampling::Grid { points_per_axis: m } => {
                let axis = |[lo, hi]: [f64; 2], j: usize| {
                    if m == 1 {
                        0.5 * (lo + hi)
                    } else {
                        lo + (hi - lo) * j as f64 / (m - 1) as f64
                    }
                };
                (0..self.count())
                    .map(|mut idx| {
                        DVector::from_iterator(
                            self.dim(),
                            self.intervals.iter().map(|iv| {
                                let j = idx % m;
                                idx /= m;
                                axis(*iv, j)
                            }),
                        )
                    })
                    .collect()
            }
            Sampling::Random { count, seed } => {
                let mut rng = rng_from_seed(seed);
                (0..count).map(|_| self.uniform(&mut rng)).collect()
            }
        }
    }

    pub fn uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.intervals.iter().map(|[lo, hi]| rng.random_range(*lo..=*hi)),
        )
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && self
                .intervals
                .iter()
                .zip(x.iter())
                .all(|([lo, hi], v)| *lo <= *v && *v <= *hi)
    }

    /// True when some coordinate lies on a face of the box.
    pub fn on_boundary(&self, x: &DVector<f64>) -> bool {
        self.intervals.iter().zip(x.iter()).any(|([lo, hi], v)| {
            let eps = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
            (v - lo).abs() <= eps || (v - hi).abs() <= eps
        })
    }
}

const QUARTER_POINTS: [f64; 3] = [0.25, 0.5, 0.75];

/// Shared sampler for convexity-type checks of a scalar field.
fn sampled_convexity<F>(
    name: &str,
    field: F,
    domain: &DomainBox,
    pairs: usize,
    seed: u64,
) -> Result<Certificate>
where
    F: Fn(&DVector<f64>) -> Result<Estimate> + Sync,
{
    if pairs == 0 {
        return Err(Error::config("convexity check needs pairs ≥ 1"));
    }
    let tol = Tolerance::default();
    let rows: Vec<Result<(Vec<f64>, f64, f64, f64, f64, f64)>> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let x = domain.uniform(&mut rng);
            let y = domain.uniform(&mut rng);
            let a = QUARTER_POINTS[i % 3];
            let mid = &x * a + &y * (1.0 - a);
            let fx = field(&x)?;
            let fy = field(&y)?;
            let fm = field(&mid)?;
            let rhs = a * fx.value + (1.0 - a) * fy.value;
            let se = (fm.std_error.powi(2)
                + (a * fx.std_error).powi(2)
                + ((1.0 - a) * fy.std_error).powi(2))
            .sqrt();
            let mut point: Vec<f64> = x.iter().copied().collect();
            point.extend(y.iter());
            point.push(a);
            Ok((point, fm.value - rhs, se, fm.value, rhs, a))
        })
        .collect();
    let mut check = CheckBuilder::new(name);
    for row in rows {
        let (point, margin, se, lhs, rhs, _) = row?;
        check.push(
            &point,
            margin,
            se,
            tol.bound(lhs.abs().max(rhs.abs())),
            &[("lhs", lhs), ("rhs", rhs)],
        );
    }
    Ok(Certificate::from_checks(
        name,
        Some(domain.clone()),
        vec![check],
        Provenance {
            seed: Some(seed),
            scheme: None,
            pairs: Some(pairs),
        },
        tol,
    ))
}

/// Samples `V(αx + (1−α)y) ≤ αV(x) + (1−α)V(y)` with α ∈ {¼, ½, ¾}.
/// Witness points are laid out as `(x, y, α)`.
pub fn check_convex(
    v: &StorageFunction,
    domain: &DomainBox,
    pairs: usize,
    seed: u64,
) -> Result<Certificate> {
    if v.dim() != domain.dim() {
        return Err(Error::dims("domain", v.dim(), domain.dim()));
    }
    sampled_convexity("convexity", |x| v.estimate(x), domain, pairs, seed)
}

/// Sampled h-convexity (`h(y) = |y|²`) of a vector field.
pub fn check_h_convex<M>(map: M, domain: &DomainBox, pairs: usize, seed: u64) -> Result<Certificate>
where
    M: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    sampled_convexity(
        "h_convexity",
        |x| {
            let v = map(x).norm_squared();
            if v.is_finite() {
                Ok(Estimate::exact(v))
            } else {
                Err(Error::Evaluation {
                    message: format!("|map(x)|² is {v} at x = {:?}", x.as_slice()),
                    omega: Vec::new(),
                })
            }
        },
        domain,
        pairs,
        seed,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadBoundReport {
    /// Reported constant: exact `λ_max(P)` for quadratic V, else the sampled max.
    pub c2: f64,
    pub sampled_c2: f64,
    pub witness: Vec<f64>,
    pub boundary_attained: bool,
    /// Ratio at the witness exceeds the ratio at half the witness.
    pub growth_detected: bool,
    /// Boundary-attained maximum with growing ratio: `c₂` may not exist on ℝⁿ.
    pub inconclusive: bool,
}

/// Smallest sampled `c₂` with `V(x) ≤ c₂|x|²`; samples with `|x| < 1e-9` are skipped.
pub fn quad_bound(v: &StorageFunction, domain: &DomainBox) -> Result<QuadBoundReport> {
    if v.dim() != domain.dim() {
        return Err(Error::dims("domain", v.dim(), domain.dim()));
    }
    let ratio = |x: &DVector<f64>| -> Result<f64> { Ok(v.evaluate(x)? / x.norm_squared()) };
    let mut best = f64::NEG_INFINITY;
    let mut witness = None;
    for x in domain.points() {
        if x.norm() < 1e-9 {
            continue;
        }
        let r = ratio(&x)?;
        if r > best {
            best = r;
            witness = Some(x);
        }
    }
    let Some(w) = witness else {
        return Err(Error::config("quad_bound: every sample lies in the excluded ball"));
    };
    let sampled_c2 = best.max(0.0);
    let half = &w * 0.5;
    let growth_detected = best > ratio(&half)? * (1.0 + 1e-9) + 1e-300;
    let boundary_attained = domain.on_boundary(&w);
    let (c2, inconclusive) = match v.quadratic_matrix() {
        Some(p) => (linalg::lambda_max(p), false),
        None => (sampled_c2, boundary_attained && growth_detected),
    };
    Ok(QuadBoundReport {
        c2,
        sampled_c2,
        witness: w.iter().copied().collect(),
        boundary_attained,
        growth_detected,
        inconclusive,
    })
}

/// Monte Carlo truncation of `V(x) = Σ_{i=0}^{K} E|m(x_i^{0,x,0})|²`.
///
/// Path `j` uses the noise stream `derive_seed(seed, j)` for every `x`, so
/// the estimator is a deterministic function of `x`.
#[derive(Clone)]
pub struct ConstructedStorage {
    system: AffineSystem,
    horizon: usize,
    ensemble: usize,
    seed: u64,
}

impl fmt::Debug for ConstructedStorage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstructedStorage")
            .field("system", &self.system.name())
            .field("horizon", &self.horizon)
            .field("ensemble", &self.ensemble)
            .field("seed", &self.seed)
            .finish()
    }
}

/// Per-x summary of the constructed estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageSample {
    pub value: f64,
    pub std_error: f64,
    /// Share of the total contributed by the last quarter of the horizon.
    pub tail_fraction: f64,
}

impl ConstructedStorage {
    pub fn new(system: AffineSystem, horizon: usize, ensemble: usize, seed: u64) -> Result<Self> {
        if horizon == 0 || ensemble == 0 {
            return Err(Error::config("construct_storage needs K ≥ 1 and N ≥ 1"));
        }
        Ok(Self {
            system,
            horizon,
            ensemble,
            seed,
        })
    }

    pub fn sample(&self, x: &DVector<f64>) -> StorageSample {
        let n = self.system.state_dim();
        let nw = self.system.noise().dim();
        let tail_start = self.horizon - self.horizon / 4;
        let deterministic = self.system.drift_degree() == Some(0);
        let paths = if deterministic { 1 } else { self.ensemble };
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut tail = 0.0;
        let mut omega = vec![0.0; nw];
        let mean = self.system.noise().mean();
        for j in 0..paths {
            let mut rng = rng_from_seed(derive_seed(self.seed, j as u64));
            let mut state = x.clone();
            let mut total = 0.0;
            for i in 0..=self.horizon {
                let e = self.system.output(&state).norm_squared();
                total += e;
                if i >= tail_start {
                    tail += e;
                }
                if i == self.horizon || !total.is_finite() {
                    break;
                }
                if deterministic {
                    omega.copy_from_slice(&mean);
                } else {
                    self.system.noise().draw(&mut rng, &mut omega);
                }
                state = self.system.drift(&state, &omega);
                debug_assert_eq!(state.len(), n);
            }
            sum += total;
            sum_sq += total * total;
        }
        let p = paths as f64;
        let value = sum / p;
        let std_error = if paths > 1 {
            ((sum_sq / p - value * value).max(0.0) / (p - 1.0)).sqrt()
        } else {
            0.0
        };
        let tail_fraction = if sum > 0.0 { tail / sum } else { 0.0 };
        StorageSample {
            value,
            std_error,
            tail_fraction,
        }
    }
}

impl CustomStorage for ConstructedStorage {
    fn dim(&self) -> usize {
        self.system.state_dim()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.sample(x).value
    }

    fn std_error(&self, x: &DVector<f64>) -> f64 {
        self.sample(x).std_error
    }
}

#[derive(Debug, Clone)]
pub struct ConstructedStorageReport {
    pub storage: StorageFunction,
    pub estimator: ConstructedStorage,
    /// Largest tail fraction over the probes `±eᵢ`.
    pub max_tail_fraction: f64,
    /// Tail fraction above 10%: the series may not converge.
    pub inconclusive: bool,
}

/// Builds the estimator-backed storage function and probes its tail mass.
pub fn construct_storage(
    system: &AffineSystem,
    horizon: usize,
    ensemble: usize,
    seed: u64,
) -> Result<ConstructedStorageReport> {
    let est = ConstructedStorage::new(system.clone(), horizon, ensemble, seed)?;
    let n = system.state_dim();
    let mut max_tail = 0.0f64;
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut e = DVector::zeros(n);
            e[i] = s;
            max_tail = max_tail.max(est.sample(&e).tail_fraction);
        }
    }
    let storage = StorageFunction::custom(Arc::new(est.clone()), false, true)?;
    Ok(ConstructedStorageReport {
        storage,
        estimator: est,
        max_tail_fraction: max_tail,
        inconclusive: max_tail > 0.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::Status;
    use crate::noise::NoiseModel;

    fn grid(n: usize, lo: f64, hi: f64, m: usize) -> DomainBox {
        DomainBox::cube(n, lo, hi, Sampling::Grid { points_per_axis: m }).unwrap()
    }

    struct Field<F>(usize, F);

    impl<F: Fn(&DVector<f64>) -> f64 + Send + Sync> CustomStorage for Field<F> {
        fn dim(&self) -> usize {
            self.0
        }
        fn value(&self, x: &DVector<f64>) -> f64 {
            (self.1)(x)
        }
    }

    fn custom<F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static>(n: usize, f: F) -> StorageFunction {
        StorageFunction::custom(Arc::new(Field(n, f)), false, false).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let v = StorageFunction::quadratic(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(v.evaluate(&DVector::from_vec(vec![3.0, 4.0])).unwrap(), 25.0);
        let s = StorageFunction::separable(vec![1.0 / 16.0; 3], vec![2, 4, 2]).unwrap();
        assert_eq!(s.evaluate(&DVector::from_vec(vec![1.0; 3])).unwrap(), 3.0 / 16.0);
        assert_eq!(s.evaluate(&DVector::zeros(3)).unwrap(), 0.0);
        assert_eq!(v.evaluate(&DVector::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn invalid_forms_rejected() {
        assert!(StorageFunction::quadratic(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
        assert!(StorageFunction::quadratic(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])).is_err());
        assert!(StorageFunction::separable(vec![1.0], vec![3]).is_err());
        assert!(StorageFunction::separable(vec![0.0], vec![2]).is_err());
        let nonzero = Arc::new(Field(1, |x: &DVector<f64>| x[0] * x[0] + 1.0));
        assert!(StorageFunction::custom(nonzero, true, true).is_err());
    }

    #[test]
    fn grid_points_include_endpoints() {
        let d = grid(2, -1.0, 1.0, 3);
        let pts = d.points();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[0].as_slice(), &[-1.0, -1.0]);
        assert_eq!(pts[8].as_slice(), &[1.0, 1.0]);
        assert!(DomainBox::cube(1, 1.0, 1.0, Sampling::Grid { points_per_axis: 2 }).is_err());
    }

    #[test]
    fn convexity_examples() {
        let d = grid(1, -5.0, 5.0, 2);
        let v = custom(1, |x| x[0] * x[0]);
        assert_eq!(check_convex(&v, &d, 200, 1).unwrap().status, Status::Certified);
        let neg = custom(1, |x| -x[0] * x[0]);
        let cert = check_convex(&neg, &d, 200, 1).unwrap();
        assert_eq!(cert.status, Status::Falsified);
        assert_eq!(cert.witness.unwrap().point.len(), 3);
        let d3 = grid(3, -2.0, 2.0, 2);
        let s = StorageFunction::separable(vec![1.0 / 16.0; 3], vec![2, 4, 2]).unwrap();
        assert_eq!(check_convex(&s, &d3, 300, 2).unwrap().status, Status::Certified);
    }

    #[test]
    fn h_convexity_examples() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let d = grid(2, -3.0, 3.0, 2);
        let cert = check_h_convex(|x| &c * x, &d, 300, 3).unwrap();
        assert_eq!(cert.status, Status::Certified);
        let d0 = grid(1, 0.0, 4.0, 2);
        let cert = check_h_convex(|x| x.map(|v| v.abs().sqrt()), &d0, 300, 3).unwrap();
        assert_eq!(cert.status, Status::Certified);
        let d1 = grid(1, -2.0, 2.0, 2);
        let cert = check_h_convex(|x| x.map(|v| (3.0 * v).sin()), &d1, 300, 3).unwrap();
        assert_eq!(cert.status, Status::Falsified);
    }

    #[test]
    fn quad_bound_examples() {
        let v = StorageFunction::quadratic(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]))).unwrap();
        let r = quad_bound(&v, &grid(2, -1.0, 1.0, 5)).unwrap();
        assert_eq!(r.c2, 4.0);
        assert!(!r.inconclusive);
        let quartic = StorageFunction::separable(vec![1.0], vec![4]).unwrap();
        let r = quad_bound(&quartic, &grid(1, -2.0, 2.0, 9)).unwrap();
        assert_eq!(r.c2, 4.0);
        assert!(r.boundary_attained && r.growth_detected && r.inconclusive);
        let sq = StorageFunction::separable(vec![1.0], vec![2]).unwrap();
        assert_eq!(quad_bound(&sq, &grid(1, -2.0, 2.0, 9)).unwrap().c2, 1.0);
    }

    fn scalar_system(a: f64, c: f64) -> AffineSystem {
        AffineSystem::builder("scalar", 1, 1, NoiseModel::standard_normal())
            .drift(Some(0), move |x, _| x * a)
            .output(1, move |x| x * c)
            .build()
            .unwrap()
    }

    #[test]
    fn constructed_storage_matches_geometric_series() {
        let (a, c) = (0.99f64, 0.2f64);
        let report = construct_storage(&scalar_system(a, c), 400, 4, 7).unwrap();
        assert!(!report.inconclusive);
        for x in [0.5, 1.0, 2.0] {
            let oracle: f64 = (0..=400).map(|i| c * c * a.powi(2 * i) * x * x).sum();
            let got = report.storage.evaluate(&DVector::from_vec(vec![x])).unwrap();
            assert!((got - oracle).abs() <= 1e-12 * oracle, "{got} vs {oracle}");
        }
        assert_eq!(report.storage.evaluate(&DVector::zeros(1)).unwrap(), 0.0);
    }

    #[test]
    fn constructed_storage_flags_slow_tail() {
        let report = construct_storage(&scalar_system(0.999, 1.0), 100, 1, 0).unwrap();
        assert!(report.inconclusive);
    }

    #[test]
    fn zero_output_gives_zero_storage() {
        let report = construct_storage(&scalar_system(0.5, 0.0), 50, 3, 0).unwrap();
        assert_eq!(report.storage.evaluate(&DVector::from_vec(vec![3.0])).unwrap(), 0.0);
    }
}
