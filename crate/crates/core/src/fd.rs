//! Central finite differences.

use nalgebra::{DMatrix, DVector};

/// Gradient step `1e-4 · (1 + |c|)`.
pub fn gradient_step(c: f64) -> f64 {
    1e-4 * (1.0 + c.abs())
}

/// Hessian step `1e-3 · (1 + |c|)`.
pub fn hessian_step(c: f64) -> f64 {
    1e-3 * (1.0 + c.abs())
}

/// Central-difference gradient with per-coordinate steps `step(xᵢ)`.
pub fn gradient_with<F, S>(f: F, x: &DVector<f64>, step: S) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
    S: Fn(f64) -> f64,
{
    let mut y = x.clone();
    DVector::from_fn(x.len(), |i, _| {
        let h = step(x[i]);
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        (fp - fm) / (2.0 * h)
    })
}

pub fn gradient<F>(f: F, x: &DVector<f64>) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    gradient_with(f, x, gradient_step)
}

/// Central-difference Hessian.
pub fn hessian<F>(f: F, x: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|c| hessian_step(*c)).collect();
    let f0 = f(x);
    let mut y = x.clone();
    let at = |y: &mut DVector<f64>, di: (usize, f64), dj: Option<(usize, f64)>| {
        y[di.0] += di.1;
        if let Some((j, s)) = dj {
            y[j] += s;
        }
        let v = f(y);
        y.copy_from(x);
        v
    };
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let fp = at(&mut y, (i, h[i]), None);
        let fm = at(&mut y, (i, -h[i]), None);
        out[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let pp = at(&mut y, (i, h[i]), Some((j, h[j])));
            let pm = at(&mut y, (i, h[i]), Some((j, -h[j])));
            let mp = at(&mut y, (i, -h[i]), Some((j, h[j])));
            let mm = at(&mut y, (i, -h[i]), Some((j, -h[j])));
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Observed convergence order of the central difference `∂ᵢf(x)` from
/// steps `h`, `h/2`, `h/4`: `log₂(|D(h) − D(h/2)| / |D(h/2) − D(h/4)|)`.
/// `None` when the differences vanish (the derivative is resolved exactly).
pub fn observed_order<F>(f: F, x: &DVector<f64>, i: usize, h: f64) -> Option<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let d = |h: f64| {
        let mut y = x.clone();
        y[i] += h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        (fp - fm) / (2.0 * h)
    };
    let (d1, d2, d3) = (d(h), d(h / 2.0), d(h / 4.0));
    let (a, b) = ((d1 - d2).abs(), (d2 - d3).abs());
    if a == 0.0 || b == 0.0 {
        None
    } else {
        Some((a / b).log2())
    }
}
