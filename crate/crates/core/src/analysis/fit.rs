use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::riesz::{Bubble, ProblemSpec};
use crate::vec::{dist2, norm2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Upper bound on t as a multiple of the sample radius.
    pub max_scale_ratio: f64,
    pub step_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 200,
            max_scale_ratio: 4.0,
            step_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BubbleFit {
    pub t: f64,
    pub x0: Vec<f64>,
    pub amplitude: f64,
    /// max|b − v| / max v over the samples.
    pub fit_residual: f64,
    pub iterations: usize,
}

impl BubbleFit {
    pub fn bubble(&self, spec: &ProblemSpec) -> Bubble {
        Bubble {
            n: spec.n,
            alpha: spec.alpha,
            center: self.x0.clone(),
            scale: self.t,
            amplitude: self.amplitude,
        }
    }
}

struct Model<'a> {
    points: &'a [Vec<f64>],
    values: &'a [f64],
    s: f64,
}

impl Model<'_> {
    /// θ = (ln t, x₀, ln A).
    fn eval(&self, theta: &[f64], x: &[f64]) -> f64 {
        let t = theta[0].exp();
        let d2 = dist2(x, &theta[1..theta.len() - 1]);
        theta[theta.len() - 1].exp() * (t / (t * t + d2)).powf(self.s)
    }

    fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        self.points
            .iter()
            .zip(self.values)
            .map(|(x, v)| self.eval(theta, x) / v - 1.0)
            .collect()
    }

    fn jacobian(&self, theta: &[f64]) -> DMatrix<f64> {
        let dim = theta.len();
        let t = theta[0].exp();
        let x0 = &theta[1..dim - 1];
        DMatrix::from_fn(self.points.len(), dim, |i, j| {
            let x = &self.points[i];
            let q = t * t + dist2(x, x0);
            let b = self.eval(theta, x) / self.values[i];
            if j == 0 {
                b * self.s * (1.0 - 2.0 * t * t / q)
            } else if j == dim - 1 {
                b
            } else {
                b * self.s * 2.0 * (x[j - 1] - x0[j - 1]) / q
            }
        })
    }
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn initial_guess(points: &[Vec<f64>], values: &[f64], s: f64, t_max: f64) -> Vec<f64> {
    let (imax, vmax) = values
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let x0 = &points[imax];
    let mut ts: Vec<f64> = points
        .iter()
        .zip(values)
        .filter_map(|(x, v)| {
            let rho = (v / vmax).powf(1.0 / s);
            let d2 = dist2(x, x0);
            (rho > 0.05 && rho < 0.95 && d2 > 0.0).then(|| (d2 * rho / (1.0 - rho)).sqrt())
        })
        .collect();
    ts.sort_by(f64::total_cmp);
    let t = ts.get(ts.len() / 2).copied().unwrap_or(t_max).min(t_max);
    let mut theta = vec![t.ln()];
    theta.extend_from_slice(x0);
    theta.push((vmax * t.powf(s)).ln());
    theta
}

/// Least-squares fit of A·(t/(t² + |x − x₀|²))^{(n−α)/2} to positive samples.
pub fn bubble_fit(points: &[Vec<f64>], values: &[f64], spec: &ProblemSpec, opts: &FitOptions) -> Result<BubbleFit> {
    let n = spec.n;
    if points.len() != values.len() || points.len() < n + 2 {
        return Err(Error::FitDivergence("need at least n + 2 samples".into()));
    }
    if points.iter().any(|x| x.len() != n) {
        return Err(Error::Domain("sample dimension differs from n".into()));
    }
    if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::FitDivergence("samples must be positive and finite".into()));
    }
    let radius = points.iter().map(|x| norm2(x).sqrt()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let ln_t_max = (opts.max_scale_ratio * radius).ln();
    let model = Model { points, values, s: spec.s() };
    let mut theta = initial_guess(points, values, model.s, ln_t_max.exp());
    let mut r = model.residuals(&theta);
    let mut c = cost(&r);
    let mut mu = 1e-3;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let j = model.jacobian(&theta);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        let mut accepted = false;
        let mut small = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for d in 0..a.nrows() {
                a[(d, d)] += mu * jtj[(d, d)].max(1e-12);
            }
            let Some(delta) = a.lu().solve(&(-&g)) else {
                mu *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            trial[0] = trial[0].min(ln_t_max);
            let rt = model.residuals(&trial);
            let ct = cost(&rt);
            if ct.is_finite() && ct <= c {
                let step = theta
                    .iter()
                    .zip(&trial)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                small = step < opts.step_tol || c - ct <= 1e-30 * c.max(1e-300);
                theta = trial;
                r = rt;
                c = ct;
                mu = (mu / 3.0).max(1e-15);
                accepted = true;
                break;
            }
            mu *= 4.0;
        }
        if !accepted || small {
            break;
        }
    }
    if !theta.iter().all(|v| v.is_finite()) {
        return Err(Error::FitDivergence("parameters became non-finite".into()));
    }
    let vmax = values.iter().fold(0.0f64, |a, v| a.max(*v));
    let fit_residual = points
        .iter()
        .zip(values)
        .map(|(x, v)| (model.eval(&theta, x) - v).abs())
        .fold(0.0, f64::max)
        / vmax;
    Ok(BubbleFit {
        t: theta[0].exp(),
        x0: theta[1..=n].to_vec(),
        amplitude: theta[n + 1].exp(),
        fit_residual,
        iterations,
    })
}
