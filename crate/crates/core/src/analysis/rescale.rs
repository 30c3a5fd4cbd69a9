use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{ChartInterpolant, DiscretizedManifold, SolutionField};
use crate::kernel::PointKernel;
use crate::mobius::Point;
use crate::riesz::ProblemSpec;
use crate::vec::{dist2, norm2};

/// v_λ sampled on a ball around the origin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RescaledField {
    pub n: usize,
    pub lambda: f64,
    pub requested_radius: f64,
    pub radius: f64,
    pub clipped: bool,
    pub center_node: usize,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl RescaledField {
    pub fn value_at_origin(&self) -> Option<f64> {
        self.points
            .iter()
            .position(|x| norm2(x) == 0.0)
            .map(|i| self.values[i])
    }
}

/// ζ_λ(x) = x₀ + x/(η̂₀·λ^{2/(n−α)}), so that the pulled-back metric at p₀
/// is λ^{4/(n−α)} times the flat one.
struct Zoom {
    x0: Vec<f64>,
    factor: f64,
}

impl Zoom {
    fn new(chart: &DiscretizedManifold, p0: usize, lambda: f64, s: f64) -> Result<Self> {
        if p0 >= chart.len() {
            return Err(Error::Domain(format!("node {p0} out of range")));
        }
        if !(lambda >= 1.0) {
            return Err(Error::Domain(format!("lambda must be at least 1, got {lambda}")));
        }
        Ok(Zoom {
            x0: chart.nodes[p0].clone(),
            factor: 1.0 / (chart.eta_hat[p0] * lambda.powf(1.0 / s)),
        })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.x0.iter().zip(x).map(|(a, b)| a + self.factor * b).collect()
    }

    /// Largest rescaled radius whose image stays clear of the finite limit points.
    fn max_radius(&self, limit_points: &[Point]) -> f64 {
        limit_points
            .iter()
            .filter_map(|p| match p {
                Point::Finite(l) => Some(0.9 * dist2(l, &self.x0).sqrt() / self.factor),
                Point::Infinity => None,
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn ball_grid(n: usize, radius: f64, per_radius: usize) -> Vec<Vec<f64>> {
    let m = per_radius as i64;
    let h = radius / per_radius as f64;
    let side = (2 * m + 1) as usize;
    let mut out = Vec::new();
    for idx in 0..side.pow(n as u32) {
        let mut rem = idx;
        let x: Vec<f64> = (0..n)
            .map(|_| {
                let i = (rem % side) as i64 - m;
                rem /= side;
                i as f64 * h
            })
            .collect();
        if norm2(&x) <= radius * radius * (1.0 + 1e-12) {
            out.push(x);
        }
    }
    out
}

/// v_λ(x) = u(ζ_λ(x))/λ on B_window, using the unfolded field v̂ = u·η̂^s.
pub fn rescale(
    u: &SolutionField,
    chart: &DiscretizedManifold,
    p0: usize,
    lambda: f64,
    window: f64,
    per_radius: usize,
) -> Result<RescaledField> {
    if !(window > 0.0) || per_radius == 0 {
        return Err(Error::Domain("window and sampling density must be positive".into()));
    }
    let n = chart.n;
    let s = (n as f64 - u.alpha) / 2.0;
    let zoom = Zoom::new(chart, p0, lambda, s)?;
    let interp = ChartInterpolant::new(chart, &u.values, u.alpha)?;
    let cap = zoom.max_radius(&chart.group.limit_points);
    let radius = window.min(cap);
    let points = ball_grid(n, radius, per_radius);
    let norm = 1.0 / (lambda * chart.eta_hat[p0].powf(s));
    let mut values = points
        .iter()
        .map(|x| interp.eval(&zoom.apply(x)).map(|v| v * norm))
        .collect::<Result<Vec<_>>>()?;
    if let Some(i) = points.iter().position(|x| norm2(x) == 0.0) {
        values[i] = u.values[p0] / lambda;
    }
    Ok(RescaledField {
        n,
        lambda,
        requested_radius: window,
        radius,
        clipped: radius < window,
        center_node: p0,
        points,
        values,
    })
}

/// sup over sample pairs of B_Λ of |λ^{−2}K(ζ_λx, ζ_λy) − c|x − y|^{α−n}|.
pub fn kernel_limit_gap(
    spec: &ProblemSpec,
    chart: &DiscretizedManifold,
    cutoff: usize,
    p0: usize,
    lambda: f64,
    big_lambda: f64,
    per_radius: usize,
) -> Result<f64> {
    let s = spec.s();
    let zoom = Zoom::new(chart, p0, lambda, s)?;
    if big_lambda > zoom.max_radius(&chart.group.limit_points) {
        return Err(Error::Domain("ball B_Λ reaches the limit set".into()));
    }
    let kernel = PointKernel::new(chart, spec, cutoff)?;
    let pts = ball_grid(chart.n, big_lambda, per_radius);
    let images: Vec<Vec<f64>> = pts.iter().map(|x| zoom.apply(x)).collect();
    let mut worst = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let k = kernel.eval(&images[i], &images[j])? / (lambda * lambda);
            let flat = spec.c_n_alpha * dist2(&pts[i], &pts[j]).powf(-s);
            worst = worst.max((k - flat).abs());
        }
    }
    Ok(worst)
}
