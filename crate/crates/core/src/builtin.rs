//! The two worked systems of the reference analysis and a pure-feedthrough
//! counterexample.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{AffineSystem, ControlledSystem};
use crate::error::Result;
use crate::noise::{Distribution, NoiseModel};
use crate::storage::StorageFunction;

/// Parameters of `x⁺ = a x + b cos(x) ω v`, `z = (c x; c₁ v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example1 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub c1: f64,
}

impl Default for Example1 {
    fn default() -> Self {
        Self {
            a: 0.99,
            b: 0.01,
            c: 0.2,
            c1: 0.2,
        }
    }
}

impl Example1 {
    /// `b²c²/(1 − |a|)² + c₁²`
    pub fn gamma_star_sq(&self) -> f64 {
        let Self { a, b, c, c1 } = *self;
        b * b * c * c / (1.0 - a.abs()).powi(2) + c1 * c1
    }

    /// `1/|a|`
    pub fn optimal_beta(&self) -> f64 {
        1.0 / self.a.abs()
    }

    /// `c²/(1 − a²β)` at `β = 1/|a|`.
    pub fn optimal_p(&self) -> f64 {
        let beta = self.optimal_beta();
        self.c * self.c / (1.0 - self.a * self.a * beta)
    }

    pub fn system(&self) -> Result<AffineSystem> {
        self.system_with_noise(NoiseModel::standard_normal())
    }

    pub fn system_with_noise(&self, noise: NoiseModel) -> Result<AffineSystem> {
        let Self { a, b, c, c1 } = *self;
        AffineSystem::builder("example1", 1, 1, noise)
            .drift(Some(0), move |x, _| x * a)
            .gain(Some(1), move |x, w| {
                DMatrix::from_element(1, 1, b * x[0].cos() * w[0])
            })
            .output(1, move |x| x * c)
            .feedthrough(1, move |_| DMatrix::from_element(1, 1, c1))
            .build()
    }
}

pub fn example1_system() -> AffineSystem {
    Example1::default().system().expect("example 1 is well formed")
}

/// `V(x) = p x²`
pub fn example1_storage(p: f64) -> Result<StorageFunction> {
    StorageFunction::quadratic(DMatrix::from_element(1, 1, p))
}

pub const EXAMPLE2_BETA_CUBED: f64 = 1.6;
pub const EXAMPLE2_P: f64 = 0.0625;
pub const EXAMPLE2_GAMMA: f64 = 0.75;
pub const EXAMPLE2_X0: [f64; 3] = [1.0, 1.0, 0.5];

/// `β = (8/5)^{1/3}`
pub fn example2_beta() -> f64 {
    EXAMPLE2_BETA_CUBED.cbrt()
}

/// `θ⁽¹⁾, θ⁽³⁾, θ⁽⁴⁾, θ⁽⁵⁾ ~ U[0, 1]`, `θ⁽²⁾ ~ U[−½, ½]`.
pub fn example2_noise() -> NoiseModel {
    let u = Distribution::Uniform(0.0, 1.0);
    NoiseModel::new(vec![u, Distribution::Uniform(-0.5, 0.5), u, u, u])
        .expect("example 2 noise is well formed")
}

/// Three-state plant with two controls and two disturbances entering
/// `x⁽¹⁾` and `x⁽³⁾`.
pub fn example2_plant() -> ControlledSystem {
    ControlledSystem::builder("example2", 3, 2, 2, example2_noise())
        .drift(Some(1), |x, u, w| {
            DVector::from_vec(vec![
                w[0] * x[0] + w[1] * x[1] * x[1] + u[0],
                w[2] * x[1] + w[3] * x[2] / (1.0 + x[2].abs()) + u[1],
                w[4] * x[2] * x[1].cos() + u[0],
            ])
        })
        .gain(Some(0), |_, _| {
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0])
        })
        .output(3, |x, u| {
            DVector::from_vec(vec![
                0.1 * x[0] + 0.1 * x[2] * x[1].cos(),
                x[1] * x[1] / 7.0,
                u[0],
            ])
        })
        .build()
        .expect("example 2 is well formed")
}

/// `V(x) = p(x⁽¹⁾)² + p(x⁽²⁾)⁴ + p(x⁽³⁾)²`
pub fn example2_storage(p: f64) -> Result<StorageFunction> {
    StorageFunction::separable(vec![p; 3], vec![2, 4, 2])
}

/// `x⁺ = ½x`, `z = d·v`: the gain from `v` to `z` is exactly `|d|`.
pub fn feedthrough_system(d: f64) -> Result<AffineSystem> {
    AffineSystem::builder("feedthrough", 1, 1, NoiseModel::standard_normal())
        .drift(Some(0), |x, _| x * 0.5)
        .feedthrough(1, move |_| DMatrix::from_element(1, 1, d))
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_optimum() {
        let e = Example1::default();
        assert!((e.optimal_p() - 4.0).abs() < 1e-12);
        assert!((e.gamma_star_sq() - 0.08).abs() < 1e-15);
    }

    #[test]
    fn example2_plant_evaluates() {
        let plant = example2_plant();
        let x = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let u = DVector::from_vec(vec![0.5, -0.25]);
        let f = plant.drift(&x, &u, &[0.5, 0.25, 1.0, 1.0, 0.5]);
        assert!((f[0] - (0.5 + 1.0 + 0.5)).abs() < 1e-15);
        assert!((f[1] - (2.0 - 0.5 - 0.25)).abs() < 1e-15);
        assert!((f[2] - (-0.5 * 2f64.cos() + 0.5)).abs() < 1e-15);
        let z = plant.output(&x, &u);
        assert!((z[1] - 4.0 / 7.0).abs() < 1e-15);
        assert_eq!(z[2], 0.5);
    }

    #[test]
    fn example2_storage_value() {
        let v = example2_storage(EXAMPLE2_P).unwrap();
        assert!((v.value(&DVector::from_element(3, 1.0)) - 3.0 / 16.0).abs() < 1e-15);
    }
}
