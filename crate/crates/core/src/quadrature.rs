//! Adaptive integration on finite intervals.
//!
//! Each panel is integrated with the double-exponential rule; panels whose error
//! estimate misses their share of the tolerance are bisected.

use std::cell::Cell;

use crate::{Error, Result};

const MAX_DEPTH: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: u32,
}

/// Integrates `f` over `(a, b)` to absolute tolerance `tol`. Endpoints are never
/// evaluated. Any non-finite integrand value is reported as an error.
pub fn integrate<F>(f: F, a: f64, b: f64, tol: f64) -> Result<Integral>
where
    F: Fn(f64) -> f64,
{
    if !(a < b) || !tol.is_finite() || tol <= 0.0 {
        return Err(Error::Numerical(format!(
            "bad integration request on ({a}, {b}) with tolerance {tol}"
        )));
    }
    let bad = Cell::new(None);
    let guarded = |x: f64| {
        let v = f(x);
        if !v.is_finite() && bad.get().is_none() {
            bad.set(Some((x, v)));
        }
        v
    };
    let out = panel(&guarded, a, b, tol, 0)?;
    if let Some((x, v)) = bad.get() {
        return Err(Error::DivergenceInfinite(format!(
            "integrand is {v} at {x}"
        )));
    }
    Ok(out)
}

fn panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> Result<Integral> {
    let o = quadrature::double_exponential::integrate(f, a, b, tol);
    if o.error_estimate <= tol {
        return Ok(Integral {
            value: o.integral,
            error_estimate: o.error_estimate,
            evaluations: o.num_function_evaluations,
        });
    }
    if depth >= MAX_DEPTH {
        return Err(Error::Numerical(format!(
            "quadrature on ({a}, {b}) stalled at error {:e}",
            o.error_estimate
        )));
    }
    let mid = 0.5 * (a + b);
    let left = panel(f, a, mid, 0.5 * tol, depth + 1)?;
    let right = panel(f, mid, b, 0.5 * tol, depth + 1)?;
    Ok(Integral {
        value: left.value + right.value,
        error_estimate: left.error_estimate + right.error_estimate,
        evaluations: o.num_function_evaluations + left.evaluations + right.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_endpoint_singularity() {
        let o = integrate(|x| x * x, 0.0, 3.0, 1e-12).unwrap();
        assert!((o.value - 9.0).abs() < 1e-10);
        let o = integrate(|x| x.ln(), 0.0, 1.0, 1e-10).unwrap();
        assert!((o.value + 1.0).abs() < 1e-9);
    }

    #[test]
    fn peaked_integrand_on_wide_interval() {
        let gauss = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let o = integrate(gauss, -12.0, 12.0, 1e-10).unwrap();
        assert!((o.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let r = integrate(|x| if x > 0.5 { f64::INFINITY } else { 1.0 }, 0.0, 1.0, 1e-8);
        assert!(matches!(r, Err(Error::DivergenceInfinite(_))));
    }
}
