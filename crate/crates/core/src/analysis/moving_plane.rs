use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ChartInterpolant, DiscretizedManifold};
use crate::mobius::{MoebiusMap, Point};
use crate::riesz::Bubble;

/// (x₁, …, x_{n−1}, 2λ − x_n).
pub fn reflect(x: &[f64], lambda: f64) -> Vec<f64> {
    reflect_axis(x, lambda, x.len() - 1)
}

/// Reflection across the hyperplane x_axis = λ.
pub fn reflect_axis(x: &[f64], lambda: f64, axis: usize) -> Vec<f64> {
    let mut y = x.to_vec();
    y[axis] = 2.0 * lambda - x[axis];
    y
}

/// A positive field on (part of) R^n that can be evaluated off-grid.
pub trait FlatField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<f64>;
}

impl FlatField for Bubble {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(Bubble::eval(self, x))
    }
}

/// v̂ = unfold(u), interpolated from the chart nodes and extended by the group.
pub struct ChartField<'a> {
    interp: ChartInterpolant<'a>,
}

impl<'a> ChartField<'a> {
    pub fn new(chart: &'a DiscretizedManifold, values: &[f64], alpha: f64) -> Result<Self> {
        Ok(ChartField {
            interp: ChartInterpolant::new(chart, values, alpha)?,
        })
    }

    pub fn limit_points(&self) -> Vec<Point> {
        self.interp.chart().group.limit_points.clone()
    }
}

impl FlatField for ChartField<'_> {
    fn dim(&self) -> usize {
        self.interp.chart().n
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        self.interp.eval(x)
    }
}

/// The field seen through another stereographic base point:
/// v(z) = inner(T z)·|T'(z)|_e^{(n−α)/2} for a Möbius map T.
pub struct Reprojected<F> {
    pub inner: F,
    pub map: MoebiusMap,
    pub s: f64,
}

impl<F: FlatField> Reprojected<F> {
    /// Reprojection through the unit-radius inversion centred at `center`.
    pub fn inversion(inner: F, center: &[f64], alpha: f64) -> Result<Self> {
        let n = inner.dim();
        Ok(Reprojected {
            map: MoebiusMap::sphere_inversion(center, 1.0)?,
            s: (n as f64 - alpha) / 2.0,
            inner,
        })
    }

    /// Images of the given limit points in the new chart.
    pub fn map_points(&self, points: &[Point]) -> Vec<Point> {
        let inv = self.map.inverse();
        points.iter().map(|p| inv.apply_point(p)).collect()
    }
}

impl<F: FlatField> FlatField for Reprojected<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, z: &[f64]) -> Result<f64> {
        let tz = self.map.apply(z)?;
        Ok(self.inner.eval(&tz)? * self.map.deriv_euclidean(z)?.powf(self.s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    /// Coordinate playing the role of x_n; defaults to the last one.
    pub axis: Option<usize>,
    /// Half-width of the transverse sampling box.
    pub half_width: f64,
    /// Extent of Σ_λ sampled beyond the plane.
    pub depth: f64,
    /// Samples per box axis.
    pub samples: usize,
    /// Interpolation floor for sign decisions.
    pub floor: f64,
    pub derivative_step: f64,
    /// Transverse centre of the sampling box.
    pub center: Option<Vec<f64>>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            axis: None,
            half_width: 2.0,
            depth: 2.0,
            samples: 16,
            floor: 1e-3,
            derivative_step: 1e-3,
            center: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MovingPlaneReport {
    pub lambdas: Vec<f64>,
    /// Discrete measure of {v̂_λ < v̂} in the sampled part of Σ_λ.
    pub sigma_minus_measure: Vec<f64>,
    /// Same, counting only points below −floor.
    pub sigma_minus_above_floor: Vec<f64>,
    pub min_gap: Vec<f64>,
    pub clearance: Vec<f64>,
    pub skipped: Vec<bool>,
    /// ∂v̂/∂x_n on S_0 at the box centre, one-sided into Σ_0.
    pub boundary_derivative: f64,
    /// Distance from Σ_{λ_min} to the sampled limit set; `None` if it is empty.
    pub limit_set_clearance: Option<f64>,
    pub floor: f64,
}

fn clearance(limit_points: &[Point], lambda: f64, axis: usize) -> f64 {
    limit_points
        .iter()
        .map(|p| match p {
            Point::Infinity => 0.0,
            Point::Finite(x) => (lambda - x[axis]).max(0.0),
        })
        .fold(f64::INFINITY, f64::min)
}

/// Compares v̂ with its reflection over sample points of Σ_λ = {x_n > λ}.
pub fn moving_plane_scan<F: FlatField>(
    field: &F,
    lambdas: &[f64],
    limit_points: &[Point],
    opts: &ScanOptions,
) -> Result<MovingPlaneReport> {
    let n = field.dim();
    let axis = opts.axis.unwrap_or(n - 1);
    if axis >= n {
        return Err(Error::Domain(format!("axis {axis} out of range for n = {n}")));
    }
    if lambdas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Domain("lambdas must be strictly decreasing".into()));
    }
    if opts.samples == 0 || !(opts.half_width > 0.0 && opts.depth > 0.0) {
        return Err(Error::Domain("sampling box must be non-empty".into()));
    }
    let center = opts.center.clone().unwrap_or_else(|| vec![0.0; n]);
    let m = opts.samples;
    let transverse: Vec<usize> = (0..n).filter(|&d| d != axis).collect();
    let cell = (2.0 * opts.half_width / m as f64).powi(n as i32 - 1) * (opts.depth / m as f64);
    let per_lambda: Vec<(f64, f64, f64, f64, bool)> = lambdas
        .par_iter()
        .map(|&lambda| {
            let clear = clearance(limit_points, lambda, axis);
            if !(clear > 0.0) {
                return (0.0, 0.0, f64::NAN, clear, true);
            }
            let mut count_neg = 0usize;
            let mut count_floor = 0usize;
            let mut min_gap = f64::INFINITY;
            let total = m.pow(n as u32);
            let mut x = vec![0.0; n];
            for idx in 0..total {
                let mut rem = idx;
                for &d in &transverse {
                    let i = rem % m;
                    rem /= m;
                    x[d] = center[d] - opts.half_width + (i as f64 + 0.5) * 2.0 * opts.half_width / m as f64;
                }
                x[axis] = lambda + (rem as f64 + 0.5) * opts.depth / m as f64;
                let (Ok(v), Ok(vr)) = (field.eval(&x), field.eval(&reflect_axis(&x, lambda, axis))) else {
                    continue;
                };
                let gap = vr - v;
                min_gap = min_gap.min(gap);
                if gap < 0.0 {
                    count_neg += 1;
                }
                if gap < -opts.floor {
                    count_floor += 1;
                }
            }
            (count_neg as f64 * cell, count_floor as f64 * cell, min_gap, clear, false)
        })
        .collect();
    let mut foot = center.clone();
    foot[axis] = 0.0;
    let h = opts.derivative_step;
    let at = |t: f64| {
        let mut y = foot.clone();
        y[axis] = t;
        field.eval(&y)
    };
    let boundary_derivative = match (at(0.0), at(h), at(2.0 * h)) {
        (Ok(f0), Ok(f1), Ok(f2)) => (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h),
        _ => f64::NAN,
    };
    let limit_set_clearance = if limit_points.is_empty() {
        None
    } else {
        lambdas.last().map(|&l| clearance(limit_points, l, axis))
    };
    Ok(MovingPlaneReport {
        lambdas: lambdas.to_vec(),
        sigma_minus_measure: per_lambda.iter().map(|r| r.0).collect(),
        sigma_minus_above_floor: per_lambda.iter().map(|r| r.1).collect(),
        min_gap: per_lambda.iter().map(|r| r.2).collect(),
        clearance: per_lambda.iter().map(|r| r.3).collect(),
        skipped: per_lambda.iter().map(|r| r.4).collect(),
        boundary_derivative,
        limit_set_clearance,
        floor: opts.floor,
    })
}
