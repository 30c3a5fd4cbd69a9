//! Thin wrappers over the quadrature crates.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};

/// Gauss–Legendre rule on [-1, 1], nodes ascending.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = GaussLegendre::new(NonZeroUsize::new(m.max(1)).unwrap());
    let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Tanh-sinh integration over consecutive breakpoints.
pub fn integrate<F>(f: F, breaks: &[f64], tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let mut total = 0.0;
    for w in breaks.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let out = quadrature::integrate(&f, w[0], w[1], tol);
        if !out.integral.is_finite() || out.error_estimate > 1e3 * tol.max(1e-15) * (1.0 + out.integral.abs()) {
            return Err(Error::CalibrationFailure(format!(
                "quadrature on [{}, {}] did not converge (error estimate {:e})",
                w[0], w[1], out.error_estimate
            )));
        }
        total += out.integral;
    }
    Ok(total)
}

pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

/// Surface area of the unit sphere S^{d-1} in R^d.
pub fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / gamma(h)
}
