#![allow(dead_code)]

use std::f64::consts::PI;

use lcf_core::geometry::{build_chart, DiscretizedManifold};
use lcf_core::mobius::KleinianGroup;
use statrs::function::gamma::gamma;

pub fn quarter_turn() -> Vec<f64> {
    vec![0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]
}

/// S¹×S² as the quotient by x ↦ 2·R·x with R a quarter turn about x₃.
pub fn hopf_group() -> KleinianGroup {
    KleinianGroup::dilation(3, 2.0, Some(quarter_turn())).unwrap()
}

pub fn hopf_chart(resolution: usize) -> DiscretizedManifold {
    build_chart(&hopf_group(), resolution, 3).unwrap()
}

pub fn sphere_chart(resolution: usize) -> DiscretizedManifold {
    build_chart(&KleinianGroup::trivial(3), resolution, 3).unwrap()
}

/// Eigenvalue of I_α on constants of the unit round S^n.
pub fn sphere_i_eigenvalue(n: usize, alpha: f64) -> f64 {
    let n = n as f64;
    gamma((n - alpha) / 2.0) / gamma((n + alpha) / 2.0)
}

/// The constant solution on the round S^n.
pub fn sphere_constant(n: usize, alpha: f64) -> f64 {
    let p = (n as f64 + alpha) / (n as f64 - alpha);
    sphere_i_eigenvalue(n, alpha).powf(-1.0 / (p - 1.0))
}

/// c(n, α) written out from its Fourier characterisation.
pub fn riesz_c(n: usize, alpha: f64) -> f64 {
    let n = n as f64;
    gamma((n - alpha) / 2.0) / (2f64.powf(alpha) * PI.powf(n / 2.0) * gamma(alpha / 2.0))
}

/// Reduced kernel for radial profiles Q(σ) = v̂·|x|^s, σ = ln|x|, in n = 3:
/// Q(σ) = ∫ G(σ − τ) Q(τ)^p dτ.
pub fn hopf_reduced_kernel(alpha: f64, sigma: f64) -> f64 {
    let s = (3.0 - alpha) / 2.0;
    let ch = sigma.cosh();
    riesz_c(3, alpha) * PI / (1.0 - s)
        * ((2.0 * ch + 2.0).powf(1.0 - s) - (2.0 * ch - 2.0).abs().powf(1.0 - s))
}

/// Constant Q solving the reduced equation on the circle of length ln k,
/// by midpoint summation of the periodized reduced kernel.
pub fn hopf_reduced_constant(alpha: f64, k: f64, samples: usize) -> f64 {
    let p = (3.0 + alpha) / (3.0 - alpha);
    let period = k.ln();
    let h = period / samples as f64;
    let mut total = 0.0;
    for j in 0..samples {
        let sigma = (j as f64 + 0.5) * h;
        let mut m = 0i64;
        loop {
            let a = hopf_reduced_kernel(alpha, sigma + m as f64 * period);
            let b = hopf_reduced_kernel(alpha, sigma - (m + 1) as f64 * period);
            total += h * (a + b);
            if a + b < 1e-18 {
                break;
            }
            m += 1;
        }
    }
    // the integrand has a kink at σ = 0, so midpoint sums converge at O(h²)
    total.powf(-1.0 / (p - 1.0))
}

/// The 1D oracle for u on the Hopf chart: u = Q·((1 + r²)/(2r))^s.
pub fn hopf_oracle(alpha: f64, q: f64, x: &[f64]) -> f64 {
    let s = (3.0 - alpha) / 2.0;
    let r2: f64 = x.iter().map(|t| t * t).sum();
    q * ((1.0 + r2) / (2.0 * r2.sqrt())).powf(s)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
