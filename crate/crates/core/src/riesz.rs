//! Flat Riesz potentials, the fractional Laplacian on periodic boxes, and
//! the standard bubble solutions.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{gamma, integrate, sphere_area};
use crate::vec::dist2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tail_tol: f64,
    pub solve_tol: f64,
    pub quad_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tail_tol: 1e-9,
            solve_tol: 1e-8,
            quad_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProblemSpec {
    pub n: usize,
    pub alpha: f64,
    /// (n + α)/(n − α).
    pub p: f64,
    pub c_n_alpha: f64,
    pub tolerances: Tolerances,
}

impl ProblemSpec {
    pub fn new(n: usize, alpha: f64) -> Result<Self> {
        Self::with_tolerances(n, alpha, Tolerances::default())
    }

    pub fn with_tolerances(n: usize, alpha: f64, tolerances: Tolerances) -> Result<Self> {
        if n < 3 {
            return Err(Error::Domain(format!("n must be at least 3, got {n}")));
        }
        if !(2.0..n as f64).contains(&alpha) {
            return Err(Error::Domain(format!("alpha must lie in [2, {n}), got {alpha}")));
        }
        for (name, v) in [
            ("tail_tol", tolerances.tail_tol),
            ("solve_tol", tolerances.solve_tol),
            ("quad_tol", tolerances.quad_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        let nf = n as f64;
        Ok(ProblemSpec {
            n,
            alpha,
            p: (nf + alpha) / (nf - alpha),
            c_n_alpha: riesz_constant(n, alpha)?,
            tolerances,
        })
    }

    /// (n − α)/2.
    pub fn s(&self) -> f64 {
        (self.n as f64 - self.alpha) / 2.0
    }
}

/// c(n, α) = Γ((n−α)/2) / (2^α π^{n/2} Γ(α/2)), so that the Riesz potential
/// inverts (−Δ)^{α/2}.
pub fn riesz_constant(n: usize, alpha: f64) -> Result<f64> {
    let nf = n as f64;
    if n == 0 || !(alpha > 0.0 && alpha < nf) {
        return Err(Error::Domain(format!("need 0 < alpha < n, got alpha = {alpha}, n = {n}")));
    }
    Ok(gamma((nf - alpha) / 2.0) / (2f64.powf(alpha) * PI.powf(nf / 2.0) * gamma(alpha / 2.0)))
}

/// Field on a periodic box, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicField {
    pub shape: Vec<usize>,
    pub lengths: Vec<f64>,
    pub data: Vec<f64>,
}

impl PeriodicField {
    pub fn new(shape: Vec<usize>, lengths: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        if shape.len() != lengths.len() || shape.iter().product::<usize>() != data.len() {
            return Err(Error::Domain("shape, lengths and data disagree".into()));
        }
        Ok(PeriodicField { shape, lengths, data })
    }

    /// Samples f on the grid of the box [0, L₁) × … with the given shape.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(shape: Vec<usize>, lengths: Vec<f64>, f: F) -> Self {
        let total: usize = shape.iter().product();
        let mut data = Vec::with_capacity(total);
        let mut x = vec![0.0; shape.len()];
        for idx in 0..total {
            let mut rem = idx;
            for d in (0..shape.len()).rev() {
                x[d] = (rem % shape[d]) as f64 * lengths[d] / shape[d] as f64;
                rem /= shape[d];
            }
            data.push(f(&x));
        }
        PeriodicField { shape, lengths, data }
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn with_multiplier<F: Fn(f64) -> f64>(&self, mult: F) -> PeriodicField {
        let mut buf: Vec<Complex64> = self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_nd(&mut buf, &self.shape, false);
        let total = buf.len();
        for (idx, z) in buf.iter_mut().enumerate() {
            let mut rem = idx;
            let mut xi2 = 0.0;
            for d in (0..self.shape.len()).rev() {
                let m = self.shape[d];
                let j = rem % m;
                rem /= m;
                let k = if j <= m / 2 { j as f64 } else { j as f64 - m as f64 };
                let xi = 2.0 * PI * k / self.lengths[d];
                xi2 += xi * xi;
            }
            *z *= if xi2 == 0.0 { 0.0 } else { mult(xi2.sqrt()) };
        }
        fft_nd(&mut buf, &self.shape, true);
        let scale = 1.0 / total as f64;
        PeriodicField {
            shape: self.shape.clone(),
            lengths: self.lengths.clone(),
            data: buf.iter().map(|z| z.re * scale).collect(),
        }
    }
}

fn fft_nd(buf: &mut [Complex64], shape: &[usize], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let dims = shape.len();
    for d in 0..dims {
        let len = shape[d];
        let stride: usize = shape[d + 1..].iter().product();
        let fft = if inverse {
            planner.plan_fft_inverse(len)
        } else {
            planner.plan_fft_forward(len)
        };
        let outer: usize = shape[..d].iter().product();
        let mut line = vec![Complex64::new(0.0, 0.0); len];
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * len * stride + inner;
                for (k, v) in line.iter_mut().enumerate() {
                    *v = buf[base + k * stride];
                }
                fft.process(&mut line);
                for (k, v) in line.iter().enumerate() {
                    buf[base + k * stride] = *v;
                }
            }
        }
    }
}

/// (−Δ)^{α/2} as the Fourier multiplier |ξ|^α; the mean mode maps to 0.
pub fn frac_laplacian_periodic(f: &PeriodicField, alpha: f64) -> PeriodicField {
    f.with_multiplier(|xi| xi.powf(alpha))
}

/// Periodic Riesz potential with kernel c(n,α)|x|^{α−n} on R^n, acting on
/// fields that depend on the first `f.shape.len() ≤ n` coordinates only.
///
/// The Fourier transform of c(n,α)|x|^{α−n} is
/// c(n,α)·2^α π^{n/2} Γ(α/2)/Γ((n−α)/2)·|ξ|^{−α}.
pub fn riesz_periodic(f: &PeriodicField, n: usize, alpha: f64) -> Result<PeriodicField> {
    if f.shape.len() > n {
        return Err(Error::Domain(format!("field of dimension {} exceeds n = {n}", f.shape.len())));
    }
    let nf = n as f64;
    let c = riesz_constant(n, alpha)?;
    let symbol = c * 2f64.powf(alpha) * PI.powf(nf / 2.0) * gamma(alpha / 2.0) / gamma((nf - alpha) / 2.0);
    Ok(f.with_multiplier(|xi| symbol * xi.powf(-alpha)))
}

/// Treatment of the singular self-interaction in Nyström sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SingularCorrection {
    /// The diagonal weight makes the rule exact on a Gaussian bump of width
    /// `width` × local node spacing centred at the node.
    CalibratedBump { width: f64 },
    /// Exact integral of the kernel over a ball of the cell's volume.
    EqualVolumeBall,
}

impl Default for SingularCorrection {
    fn default() -> Self {
        SingularCorrection::CalibratedBump { width: 3.0 }
    }
}

/// Uniform grid origin + h·index in R^d, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatGrid {
    pub shape: Vec<usize>,
    pub spacing: f64,
    pub origin: Vec<f64>,
    pub data: Vec<f64>,
}

impl FlatGrid {
    pub fn from_fn<F: Fn(&[f64]) -> f64 + Sync>(shape: Vec<usize>, spacing: f64, origin: Vec<f64>, f: F) -> Self {
        let total: usize = shape.iter().product();
        let mut g = FlatGrid {
            shape,
            spacing,
            origin,
            data: Vec::new(),
        };
        g.data = (0..total).into_par_iter().map(|i| f(&g.point(i))).collect();
        g
    }

    /// Centred cube [−L, L]^d with spacing h (L a multiple of h).
    pub fn centred<F: Fn(&[f64]) -> f64 + Sync>(d: usize, half_width: f64, h: f64, f: F) -> Self {
        let m = (half_width / h).round() as usize;
        Self::from_fn(vec![2 * m + 1; d], h, vec![-(m as f64) * h; d], f)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            out[d] = idx % self.shape[d];
            idx /= self.shape[d];
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.shape).fold(0, |acc, (i, m)| acc * m + i)
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .zip(&self.origin)
            .map(|(&i, o)| o + i as f64 * self.spacing)
            .collect()
    }
}

/// Diagonal weight D of the flat Nyström rule on a uniform lattice.
pub fn flat_self_weight(d: usize, alpha: f64, h: f64, correction: SingularCorrection) -> Result<f64> {
    let c = riesz_constant(d, alpha)?;
    let area = sphere_area(d);
    let s = (d as f64 - alpha) / 2.0;
    match correction {
        SingularCorrection::EqualVolumeBall => {
            let ball = area / d as f64;
            let r = (h.powi(d as i32) / ball).powf(1.0 / d as f64);
            Ok(c * area * r.powf(alpha) / alpha)
        }
        SingularCorrection::CalibratedBump { width } => {
            let sigma = width * h;
            let exact = c * area * sigma.powf(alpha) * gamma(alpha / 2.0) / 2.0;
            let reach = (6.5 * sigma / h).ceil() as i64;
            let side = (2 * reach + 1) as usize;
            let total = side.pow(d as u32);
            let mut lattice = 0.0;
            for idx in 0..total {
                let mut rem = idx;
                let mut r2 = 0i64;
                for _ in 0..d {
                    let k = (rem % side) as i64 - reach;
                    rem /= side;
                    r2 += k * k;
                }
                if r2 == 0 {
                    continue;
                }
                let d2 = r2 as f64 * h * h;
                lattice += c * d2.powf(-s) * h.powi(d as i32) * (-d2 / (sigma * sigma)).exp();
            }
            Ok(exact - lattice)
        }
    }
}

/// Î_α f at the listed grid nodes, with the kernel of the grid's own dimension.
pub fn riesz_apply_flat_at(
    f: &FlatGrid,
    alpha: f64,
    correction: SingularCorrection,
    nodes: &[usize],
) -> Result<Vec<f64>> {
    let d = f.dim();
    let c = riesz_constant(d, alpha)?;
    let s = (d as f64 - alpha) / 2.0;
    let h = f.spacing;
    let diag = flat_self_weight(d, alpha, h, correction)?;
    let max_r2: usize = f.shape.iter().map(|m| (m - 1) * (m - 1)).sum();
    let hd = h.powi(d as i32);
    let table: Vec<f64> = (0..=max_r2)
        .map(|r2| if r2 == 0 { 0.0 } else { c * (r2 as f64 * h * h).powf(-s) * hd })
        .collect();
    let out = nodes
        .par_iter()
        .map(|&p| {
            let mp = f.multi_index(p);
            let mut acc = 0.0;
            let mut mq = vec![0usize; d];
            for (q, fq) in f.data.iter().enumerate() {
                if *fq == 0.0 {
                    continue;
                }
                let mut rem = q;
                for k in (0..d).rev() {
                    mq[k] = rem % f.shape[k];
                    rem /= f.shape[k];
                }
                let r2: usize = mp.iter().zip(&mq).map(|(a, b)| a.abs_diff(*b).pow(2)).sum();
                acc += table[r2] * fq;
            }
            acc + diag * f.data[p]
        })
        .collect();
    Ok(out)
}

/// Î_α f at every grid node.
pub fn riesz_apply_flat(f: &FlatGrid, alpha: f64) -> Result<FlatGrid> {
    riesz_apply_flat_with(f, alpha, SingularCorrection::default())
}

pub fn riesz_apply_flat_with(f: &FlatGrid, alpha: f64, correction: SingularCorrection) -> Result<FlatGrid> {
    let all: Vec<usize> = (0..f.len()).collect();
    Ok(FlatGrid {
        data: riesz_apply_flat_at(f, alpha, correction, &all)?,
        ..f.clone()
    })
}

/// b(x) = A·(t/(t² + |x − x₀|²))^{(n−α)/2}.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bubble {
    pub n: usize,
    pub alpha: f64,
    pub center: Vec<f64>,
    pub scale: f64,
    pub amplitude: f64,
}

impl Bubble {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let s = (self.n as f64 - self.alpha) / 2.0;
        let t = self.scale;
        self.amplitude * (t / (t * t + dist2(x, &self.center))).powf(s)
    }

    pub fn sample(&self, grid: &FlatGrid) -> FlatGrid {
        FlatGrid {
            data: (0..grid.len()).map(|i| self.eval(&grid.point(i))).collect(),
            ..grid.clone()
        }
    }
}

/// Amplitude A with A·φ = Î_α((Aφ)^p) for φ = (1/(1 + |x|²))^{(n−α)/2},
/// from the radial integral of Î_α(φ^p) at the centre.
pub fn bubble_amplitude(spec: &ProblemSpec) -> Result<f64> {
    let n = spec.n as f64;
    let a = spec.alpha;
    // r = tan θ turns ∫ r^{α−1}(1 + r²)^{−(n+α)/2} dr into a finite-interval integral
    let radial = integrate(
        |th: f64| th.sin().powf(a - 1.0) * th.cos().powf(n - 1.0),
        &[0.0, PI / 4.0, PI / 2.0],
        1e-15,
    )?;
    let value = spec.c_n_alpha * sphere_area(spec.n) * radial;
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::CalibrationFailure(format!("radial integral gave {value}")));
    }
    Ok(value.powf(-1.0 / (spec.p - 1.0)))
}

pub fn bubble(spec: &ProblemSpec, t: f64, x0: &[f64]) -> Result<Bubble> {
    if !(t > 0.0) || x0.len() != spec.n {
        return Err(Error::Domain("bubble needs t > 0 and a centre in R^n".into()));
    }
    Ok(Bubble {
        n: spec.n,
        alpha: spec.alpha,
        center: x0.to_vec(),
        scale: t,
        amplitude: bubble_amplitude(spec)?,
    })
}
