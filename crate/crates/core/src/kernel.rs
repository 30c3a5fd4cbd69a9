//! The conformally covariant kernel K̃ and its periodization over Γ.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{conformal_factor, DiscretizedManifold};
use crate::mobius::{dilation_deriv_spherical, GroupKind, MoebiusMap};
use crate::quad::{integrate, sphere_area};
use crate::riesz::{ProblemSpec, SingularCorrection};
use crate::vec::{dist2, norm2};

/// K̃(x, y) = c(n,α)·((1+|x|²)/2)^s |x − y|^{−2s} ((1+|y|²)/2)^s, s = (n−α)/2.
pub fn ktilde(x: &[f64], y: &[f64], spec: &ProblemSpec) -> Result<f64> {
    let d2 = dist2(x, y);
    if d2 == 0.0 {
        return Err(Error::Domain("ktilde at coincident points".into()));
    }
    let s = spec.s();
    let fx = (1.0 + norm2(x)) / 2.0;
    let fy = (1.0 + norm2(y)) / 2.0;
    Ok(spec.c_n_alpha * (fx * fy).powf(s) * d2.powf(-s))
}

/// |K̃(γx, γy)·(|γ'(x)||γ'(y)|)^s − K̃(x, y)| with spherical derivatives.
pub fn covariance_residual(gamma: &MoebiusMap, x: &[f64], y: &[f64], spec: &ProblemSpec) -> Result<f64> {
    let s = spec.s();
    let gx = gamma.apply(x)?;
    let gy = gamma.apply(y)?;
    let dx = gamma.deriv_spherical(x)?;
    let dy = gamma.deriv_spherical(y)?;
    Ok((ktilde(&gx, &gy, spec)? * (dx * dy).powf(s) - ktilde(x, y, spec)?).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    pub correction: SingularCorrection,
    /// Largest word length tried when searching for a cutoff.
    pub max_cutoff: usize,
    /// Use this cutoff instead of searching.
    pub cutoff: Option<usize>,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            correction: SingularCorrection::default(),
            max_cutoff: 4000,
            cutoff: None,
        }
    }
}

/// Dense kernel on the chart nodes. The diagonal of `entries` holds the
/// regular γ ≠ id part only; the identity self-interaction is the separate
/// `diagonal_correction`, which multiplies f(p) directly.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub n: usize,
    pub alpha: f64,
    pub entries: DMatrix<f64>,
    pub diagonal_correction: Vec<f64>,
    pub tail_bound: f64,
    pub group_cutoff: usize,
    /// Empirical bound on the factor c|x − γy|^{−2s}(2/(1+|γy|²))^{−s} over tail words.
    pub tail_constant: f64,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.diagonal_correction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal_correction.is_empty()
    }

    pub fn asymmetry(&self) -> f64 {
        let n = self.len();
        let mut worst = 0.0f64;
        for q in 0..n {
            for p in 0..q {
                worst = worst.max((self.entries[(p, q)] - self.entries[(q, p)]).abs());
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEstimate {
    pub cutoff: usize,
    pub tail_bound: f64,
    pub tail_constant: f64,
}

fn group_power(chart: &DiscretizedManifold, m: i64) -> Result<MoebiusMap> {
    if m == 0 {
        Ok(MoebiusMap::identity(chart.n))
    } else {
        chart.group.power(m)
    }
}

/// Truncation bound for the periodized kernel at the given cutoff.
pub fn tail_estimate(chart: &DiscretizedManifold, spec: &ProblemSpec, cutoff: usize) -> Result<TailEstimate> {
    if chart.group.kind == GroupKind::Trivial {
        return Ok(TailEstimate {
            cutoff: 0,
            tail_bound: 0.0,
            tail_constant: 0.0,
        });
    }
    let s = spec.s();
    let c = spec.c_n_alpha;
    let nodes = &chart.nodes;
    let edge: Vec<MoebiusMap> = [cutoff as i64 + 1, -(cutoff as i64) - 1]
        .iter()
        .map(|&m| group_power(chart, m))
        .collect::<Result<_>>()?;
    let mut images = Vec::with_capacity(2 * nodes.len());
    for g in &edge {
        for y in nodes {
            let gy = g.apply(y)?;
            let factor = (2.0 / (1.0 + norm2(&gy))).powf(-s);
            images.push((gy, factor));
        }
    }
    let limit_far = c * 2f64.powf(-s);
    let kmax = nodes
        .par_iter()
        .map(|x| {
            let near = c * norm2(x).powf(-s) * 2f64.powf(-s);
            images
                .iter()
                .map(|(gy, f)| c * dist2(x, gy).powf(-s) * f)
                .fold(near.max(limit_far), f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let mut left = 0.0f64;
    let mut right = 0.0f64;
    for (p, y) in nodes.iter().enumerate() {
        let eta = chart.eta_hat[p];
        left = left.max(eta.powf(-s));
        let tail = chart.group.poincare_partial_sum(s, y, cutoff)?.tail_bound;
        right = right.max(eta.powf(-s) * conformal_factor(y).powf(s) * tail);
    }
    Ok(TailEstimate {
        cutoff,
        tail_bound: left * right * kmax,
        tail_constant: kmax,
    })
}

/// Smallest cutoff whose tail bound meets `tail_tol`.
pub fn select_cutoff(chart: &DiscretizedManifold, spec: &ProblemSpec, max_cutoff: usize) -> Result<TailEstimate> {
    if chart.group.kind == GroupKind::Trivial {
        return tail_estimate(chart, spec, 0);
    }
    let tol = spec.tolerances.tail_tol;
    let mut lo = 0usize;
    let mut hi = 1usize;
    let mut best = tail_estimate(chart, spec, hi)?;
    while best.tail_bound > tol {
        if hi >= max_cutoff {
            return Err(Error::TailUnreachable {
                achieved: best.tail_bound,
                target: tol,
                cutoff: max_cutoff,
            });
        }
        lo = hi;
        hi = (2 * hi).min(max_cutoff);
        best = tail_estimate(chart, spec, hi)?;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let est = tail_estimate(chart, spec, mid)?;
        if est.tail_bound <= tol {
            hi = mid;
            best = est;
        } else {
            lo = mid;
        }
    }
    Ok(best)
}

pub fn assemble(chart: &DiscretizedManifold, spec: &ProblemSpec) -> Result<KernelMatrix> {
    assemble_with(chart, spec, &AssemblyOptions::default())
}

/// entries(p,q) = c(η̂_p η̂_q)^{−s} Σ_{|m| ≤ M} |x_p − γ^m x_q|^{−2s} |(γ^m)'(x_q)|_e^s.
pub fn assemble_with(chart: &DiscretizedManifold, spec: &ProblemSpec, opts: &AssemblyOptions) -> Result<KernelMatrix> {
    if chart.n != spec.n {
        return Err(Error::Domain(format!("chart dimension {} differs from n = {}", chart.n, spec.n)));
    }
    let tail = match opts.cutoff {
        Some(m) => {
            let est = tail_estimate(chart, spec, m)?;
            if est.tail_bound > spec.tolerances.tail_tol {
                return Err(Error::TailUnreachable {
                    achieved: est.tail_bound,
                    target: spec.tolerances.tail_tol,
                    cutoff: m,
                });
            }
            est
        }
        None => select_cutoff(chart, spec, opts.max_cutoff)?,
    };
    let cutoff = tail.cutoff as i64;
    let n_nodes = chart.len();
    let s = spec.s();
    let c = spec.c_n_alpha;
    let words: Vec<i64> = (-cutoff..=cutoff).collect();
    let maps: Vec<MoebiusMap> = words.iter().map(|&m| group_power(chart, m)).collect::<Result<_>>()?;
    let nw = words.len();
    // images[q][w] and |γ'|_e^s per word
    let mut images = vec![0.0; n_nodes * nw * 3];
    for (q, y) in chart.nodes.iter().enumerate() {
        for (w, g) in maps.iter().enumerate() {
            let gy = g.apply(y)?;
            images[(q * nw + w) * 3..(q * nw + w) * 3 + 3].copy_from_slice(&gy);
        }
    }
    let dfac: Vec<f64> = maps.iter().map(|g| g.scale.powf(s)).collect();
    let id_word = cutoff as usize;
    let half = s == 0.5;
    let rows: Vec<Vec<f64>> = (0..n_nodes)
        .into_par_iter()
        .map(|p| {
            let x = &chart.nodes[p];
            let (x0, x1, x2) = (x[0], x[1], x[2]);
            let ep = chart.eta_hat[p];
            (p..n_nodes)
                .map(|q| {
                    let base = q * nw * 3;
                    let mut acc = 0.0;
                    for w in 0..nw {
                        if q == p && w == id_word {
                            continue;
                        }
                        let i = base + 3 * w;
                        let d0 = x0 - images[i];
                        let d1 = x1 - images[i + 1];
                        let d2 = x2 - images[i + 2];
                        let r2 = d0 * d0 + d1 * d1 + d2 * d2;
                        let k = if half { 1.0 / r2.sqrt() } else { r2.powf(-s) };
                        acc += k * dfac[w];
                    }
                    c * (ep * chart.eta_hat[q]).powf(-s) * acc
                })
                .collect()
        })
        .collect();
    let mut entries = DMatrix::zeros(n_nodes, n_nodes);
    for (p, row) in rows.iter().enumerate() {
        for (off, v) in row.iter().enumerate() {
            let q = p + off;
            entries[(p, q)] = *v;
            entries[(q, p)] = *v;
        }
    }
    let diagonal_correction = self_weights(chart, spec, opts.correction)?;
    Ok(KernelMatrix {
        n: spec.n,
        alpha: spec.alpha,
        entries,
        diagonal_correction,
        tail_bound: tail.tail_bound,
        group_cutoff: tail.cutoff,
        tail_constant: tail.tail_constant,
    })
}

/// ∫_{S^n} c·|ξ − ξ₀|^{−2s} exp(−|ξ − ξ₀|²/σ²) dV(ξ).
fn bump_integral(spec: &ProblemSpec, sigma: f64) -> Result<f64> {
    let s = spec.s();
    let n = spec.n;
    let mut breaks = vec![0.0, sigma / 4.0, sigma, 3.0 * sigma, PI];
    breaks.retain(|b| *b <= PI);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    if *breaks.last().unwrap() < PI {
        breaks.push(PI);
    }
    let radial = integrate(
        |th: f64| {
            let chord = 2.0 * (th / 2.0).sin();
            th.sin().powi(n as i32 - 1) * chord.powf(-2.0 * s) * (-(chord * chord) / (sigma * sigma)).exp()
        },
        &breaks,
        1e-15,
    )?;
    Ok(spec.c_n_alpha * sphere_area(n) * radial)
}

/// Per-node weight for the identity self-interaction, in the round frame.
pub fn self_weights(chart: &DiscretizedManifold, spec: &ProblemSpec, correction: SingularCorrection) -> Result<Vec<f64>> {
    let n = chart.n;
    let s = spec.s();
    let c = spec.c_n_alpha;
    let weights = chart.conformal_weights();
    match correction {
        SingularCorrection::EqualVolumeBall => {
            let area = sphere_area(n);
            let ball = area / n as f64;
            Ok(weights
                .iter()
                .map(|w| {
                    let r = (w / ball).powf(1.0 / n as f64);
                    c * area * r.powf(spec.alpha) / spec.alpha
                })
                .collect())
        }
        SingularCorrection::CalibratedBump { width } => {
            if !(width > 0.0) {
                return Err(Error::CalibrationFailure(format!("bump width must be positive, got {width}")));
            }
            let spacing = chart.neighbour_spacing();
            let mut cache: HashMap<u64, f64> = HashMap::new();
            let mut exact = Vec::with_capacity(chart.len());
            for h in &spacing {
                let sigma = width * h;
                let key = sigma.to_bits();
                let v = match cache.get(&key) {
                    Some(v) => *v,
                    None => {
                        let v = bump_integral(spec, sigma)?;
                        cache.insert(key, v);
                        v
                    }
                };
                exact.push((sigma, v));
            }
            let frame = &chart.frame_nodes;
            let k = chart.dilation();
            let rho: Vec<f64> = frame.iter().map(|y| conformal_factor(y)).collect();
            let r2: Vec<f64> = frame.iter().map(|y| norm2(y)).collect();
            // images of the frame nodes under γ^m for the words that reach the bump
            let mut layers: Vec<(i64, Vec<Vec<f64>>)> = vec![(0, frame.clone())];
            if let Some(k) = k {
                for m in 1..=64i64 {
                    let mut any = false;
                    for e in [m, -m] {
                        let significant = r2
                            .iter()
                            .any(|r| dilation_deriv_spherical(k, e as i32, *r).powi(n as i32) > 1e-18);
                        if significant {
                            let g = chart.group.power(e)?;
                            let imgs: Vec<Vec<f64>> = frame.iter().map(|y| g.apply(y)).collect::<Result<_>>()?;
                            layers.push((e, imgs));
                            any = true;
                        }
                    }
                    if !any {
                        break;
                    }
                }
            }
            let out: Vec<f64> = (0..chart.len())
                .into_par_iter()
                .map(|p| {
                    let (sigma, ex) = exact[p];
                    let yp = &frame[p];
                    let mut acc = 0.0;
                    for (e, imgs) in &layers {
                        for (q, gy) in imgs.iter().enumerate() {
                            if *e == 0 && q == p {
                                continue;
                            }
                            let chord2 = rho[p] * conformal_factor(gy) * dist2(yp, gy);
                            let ds = match k {
                                Some(k) => dilation_deriv_spherical(k, *e as i32, r2[q]),
                                None => 1.0,
                            };
                            acc += c * chord2.powf(-s) * (-chord2 / (sigma * sigma)).exp() * weights[q] * ds.powi(n as i32);
                        }
                    }
                    ex - acc
                })
                .collect();
            Ok(out)
        }
    }
}

/// The periodized kernel K(x, y) at arbitrary points of Ω̂.
#[derive(Debug, Clone)]
pub struct PointKernel<'a> {
    chart: &'a DiscretizedManifold,
    maps: Vec<MoebiusMap>,
    c: f64,
    s: f64,
}

impl<'a> PointKernel<'a> {
    pub fn new(chart: &'a DiscretizedManifold, spec: &ProblemSpec, cutoff: usize) -> Result<Self> {
        let m = if chart.group.kind == GroupKind::Trivial { 0 } else { cutoff as i64 };
        let maps = (-m..=m).map(|e| group_power(chart, e)).collect::<Result<_>>()?;
        Ok(PointKernel {
            chart,
            maps,
            c: spec.c_n_alpha,
            s: spec.s(),
        })
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let ex = self.chart.eta_hat_at(x)?;
        let ey = self.chart.eta_hat_at(y)?;
        let mut acc = 0.0;
        for g in &self.maps {
            let gy = g.apply(y)?;
            let d2 = dist2(x, &gy);
            if d2 == 0.0 {
                return Err(Error::Domain("kernel at coincident points".into()));
            }
            acc += d2.powf(-self.s) * g.deriv_euclidean(y)?.powf(self.s);
        }
        Ok(self.c * (ex * ey).powf(-self.s) * acc)
    }
}
