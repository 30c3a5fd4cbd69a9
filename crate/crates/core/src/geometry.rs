//! Stereographic charts, conformal factors and discretized fundamental domains.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mobius::{GroupKind, KleinianGroup, MoebiusMap};
use crate::quad::gauss_legendre;
use crate::vec::{dist2, norm2};

/// ψ(x) = (2x, |x|² − 1)/(1 + |x|²); the base point is e_{n+1}.
pub fn stereographic(x: &[f64]) -> Vec<f64> {
    let r2 = norm2(x);
    let d = 1.0 + r2;
    let mut out: Vec<f64> = x.iter().map(|t| 2.0 * t / d).collect();
    out.push((r2 - 1.0) / d);
    out
}

pub fn inverse_stereographic(xi: &[f64]) -> Result<Vec<f64>> {
    let n = xi.len() - 1;
    let den = 1.0 - xi[n];
    if den <= 1e-15 {
        return Err(Error::PointAtInfinity);
    }
    Ok(xi[..n].iter().map(|t| t / den).collect())
}

/// 2/(1 + |x|²): the round metric is this factor squared times the flat one.
pub fn conformal_factor(x: &[f64]) -> f64 {
    2.0 / (1.0 + norm2(x))
}

/// |ψ(x) − ψ(y)|.
pub fn chordal_distance(x: &[f64], y: &[f64]) -> f64 {
    (conformal_factor(x) * conformal_factor(y)).sqrt() * dist2(x, y).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartKind {
    SphereFullChart,
    DilationShell,
}

/// Quadrature nodes on a fundamental domain, in the flat chart.
///
/// Nodes are ordered on a product grid (first axis, θ, φ). The first axis is
/// the hyperspherical angle χ on the sphere chart and t = ln|x| on the shell.
#[derive(Debug, Clone)]
pub struct DiscretizedManifold {
    pub n: usize,
    pub kind: ChartKind,
    pub group: KleinianGroup,
    pub resolution: usize,
    pub nodes: Vec<Vec<f64>>,
    pub flat_weights: Vec<f64>,
    pub eta_hat: Vec<f64>,
    /// Positions of the nodes in the reference fundamental domain. They
    /// differ from `nodes` only after [`DiscretizedManifold::transported`].
    pub frame_nodes: Vec<Vec<f64>>,
    pub shape: [usize; 3],
    axis0: Vec<f64>,
    theta: Vec<f64>,
    /// Rotation angle of the generator about x₃, and the matching φ shift.
    rot_angle: f64,
    pub deck_shift: usize,
}

/// Discretizes the fundamental domain of `group`.
pub fn build_chart(group: &KleinianGroup, resolution: usize, n: usize) -> Result<DiscretizedManifold> {
    if n != 3 {
        return Err(Error::Domain(format!("charts are implemented for n = 3, got n = {n}")));
    }
    if group.n != n {
        return Err(Error::Domain(format!("group acts on R^{}, chart requested for n = {n}", group.n)));
    }
    if resolution < 2 {
        return Err(Error::Domain(format!("resolution must be at least 2, got {resolution}")));
    }
    match &group.kind {
        GroupKind::Trivial => Ok(sphere_chart(group, resolution)),
        GroupKind::Dilation { k, rotation } => shell_chart(group, *k, rotation, resolution),
        GroupKind::General => Err(Error::UnsupportedGroup(
            "charts exist only for the trivial group and cyclic dilation groups".into(),
        )),
    }
}

fn theta_axis(m: usize) -> (Vec<f64>, Vec<f64>) {
    let (z, wz) = gauss_legendre(m);
    // descending z gives ascending θ
    let theta: Vec<f64> = z.iter().rev().map(|t| t.acos()).collect();
    let w: Vec<f64> = wz.into_iter().rev().collect();
    (theta, w)
}

fn sphere_chart(group: &KleinianGroup, m: usize) -> DiscretizedManifold {
    let n_phi = 2 * m;
    let dchi = PI / (m + 1) as f64;
    let chi: Vec<f64> = (1..=m).map(|i| i as f64 * dchi).collect();
    let wchi: Vec<f64> = chi.iter().map(|c| dchi * c.sin().powi(2)).collect();
    let (theta, wth) = theta_axis(m);
    let dphi = 2.0 * PI / n_phi as f64;
    let mut nodes = Vec::with_capacity(m * m * n_phi);
    let mut flat_weights = Vec::with_capacity(nodes.capacity());
    let mut eta_hat = Vec::with_capacity(nodes.capacity());
    for (i, &c) in chi.iter().enumerate() {
        for (j, &th) in theta.iter().enumerate() {
            for l in 0..n_phi {
                let ph = (l as f64 + 0.5) * dphi;
                let (sc, cc) = c.sin_cos();
                let xi = [sc * th.sin() * ph.cos(), sc * th.sin() * ph.sin(), sc * th.cos(), cc];
                let x = inverse_stereographic(&xi).expect("nodes avoid the base point");
                let rho = conformal_factor(&x);
                let w_round = wchi[i] * wth[j] * dphi;
                flat_weights.push(w_round / rho.powi(3));
                eta_hat.push(rho);
                nodes.push(x);
            }
        }
    }
    DiscretizedManifold {
        n: 3,
        kind: ChartKind::SphereFullChart,
        group: group.clone(),
        resolution: m,
        frame_nodes: nodes.clone(),
        nodes,
        flat_weights,
        eta_hat,
        shape: [m, m, n_phi],
        axis0: chi,
        theta,
        rot_angle: 0.0,
        deck_shift: 0,
    }
}

fn shell_chart(group: &KleinianGroup, k: f64, rotation: &[f64], m: usize) -> Result<DiscretizedManifold> {
    let n_phi = 2 * m;
    let dphi = 2.0 * PI / n_phi as f64;
    let r = rotation;
    let fixes_axis = r[2].abs() < 1e-12 && r[5].abs() < 1e-12 && r[6].abs() < 1e-12 && r[7].abs() < 1e-12
        && (r[8] - 1.0).abs() < 1e-12;
    if !fixes_axis || (r[1] + r[3]).abs() > 1e-12 || (r[0] - r[4]).abs() > 1e-12 {
        return Err(Error::UnsupportedGroup(
            "shell charts need a rotation about the x3 axis".into(),
        ));
    }
    let angle = r[3].atan2(r[0]);
    let steps = angle / dphi;
    if (steps - steps.round()).abs() > 1e-9 {
        return Err(Error::UnsupportedGroup(format!(
            "rotation angle {angle} is not a multiple of the azimuthal step {dphi} at resolution {m}"
        )));
    }
    let deck_shift = (steps.round() as i64).rem_euclid(n_phi as i64) as usize;
    let period = k.ln();
    let n_t = ((m as f64 * period / PI).ceil() as usize).max(2);
    let dt = period / n_t as f64;
    let t: Vec<f64> = (0..n_t).map(|i| (i as f64 + 0.5) * dt).collect();
    let (theta, wth) = theta_axis(m);
    let mut nodes = Vec::with_capacity(n_t * m * n_phi);
    let mut flat_weights = Vec::with_capacity(nodes.capacity());
    let mut eta_hat = Vec::with_capacity(nodes.capacity());
    for &ti in &t {
        let rad = ti.exp();
        for (j, &th) in theta.iter().enumerate() {
            for l in 0..n_phi {
                let ph = (l as f64 + 0.5) * dphi;
                let x = vec![rad * th.sin() * ph.cos(), rad * th.sin() * ph.sin(), rad * th.cos()];
                flat_weights.push(dt * wth[j] * dphi * rad.powi(3));
                eta_hat.push(conformal_factor(&x));
                nodes.push(x);
            }
        }
    }
    Ok(DiscretizedManifold {
        n: 3,
        kind: ChartKind::DilationShell,
        group: group.clone(),
        resolution: m,
        frame_nodes: nodes.clone(),
        nodes,
        flat_weights,
        eta_hat,
        shape: [n_t, m, n_phi],
        axis0: t,
        theta,
        rot_angle: angle,
        deck_shift,
    })
}

impl DiscretizedManifold {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, l: usize) -> usize {
        (i * self.shape[1] + j) * self.shape[2] + l
    }

    /// Round-metric volume weights w·η̂ⁿ.
    pub fn conformal_weights(&self) -> Vec<f64> {
        self.flat_weights
            .iter()
            .zip(&self.eta_hat)
            .map(|(w, e)| w * e.powi(self.n as i32))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        self.conformal_weights().iter().sum()
    }

    /// Dilation factor and period in t; `None` on the sphere chart.
    pub fn dilation(&self) -> Option<f64> {
        match self.group.kind {
            GroupKind::Dilation { k, .. } => Some(k),
            _ => None,
        }
    }

    /// Replaces the fundamental domain F by γF, moving every node.
    pub fn transported(&self, gamma: &MoebiusMap) -> Result<DiscretizedManifold> {
        let mut out = self.clone();
        for p in 0..self.len() {
            let x = &self.nodes[p];
            let de = gamma.deriv_euclidean(x)?;
            out.nodes[p] = gamma.apply(x)?;
            out.flat_weights[p] = self.flat_weights[p] * de.powi(self.n as i32);
            out.eta_hat[p] = self.eta_hat[p] / de;
        }
        Ok(out)
    }

    /// Node permutation induced by the rotation part of the generator, if any.
    pub fn deck_permutation(&self) -> Option<Vec<usize>> {
        if self.kind != ChartKind::DilationShell {
            return None;
        }
        let [a, b, c] = self.shape;
        let mut perm = vec![0; self.len()];
        for i in 0..a {
            for j in 0..b {
                for l in 0..c {
                    perm[self.index(i, j, l)] = self.index(i, j, (l + self.deck_shift) % c);
                }
            }
        }
        Some(perm)
    }

    /// Largest chordal distance from each node to its grid neighbours in
    /// the reference domain.
    pub fn neighbour_spacing(&self) -> Vec<f64> {
        let [a, b, c] = self.shape;
        let mut out = vec![0.0f64; self.len()];
        let dt = if self.kind == ChartKind::DilationShell {
            self.axis0[1] - self.axis0[0]
        } else {
            0.0
        };
        for i in 0..a {
            for j in 0..b {
                for l in 0..c {
                    let p = self.index(i, j, l);
                    let x = &self.frame_nodes[p];
                    let mut h = 0.0f64;
                    match self.kind {
                        ChartKind::SphereFullChart => {
                            for ii in [i.wrapping_sub(1), i + 1] {
                                if ii < a {
                                    h = h.max(chordal_distance(x, &self.frame_nodes[self.index(ii, j, l)]));
                                }
                            }
                        }
                        ChartKind::DilationShell => {
                            for f in [dt.exp(), (-dt).exp()] {
                                let y: Vec<f64> = x.iter().map(|t| t * f).collect();
                                h = h.max(chordal_distance(x, &y));
                            }
                        }
                    }
                    for jj in [j.wrapping_sub(1), j + 1] {
                        if jj < b {
                            h = h.max(chordal_distance(x, &self.frame_nodes[self.index(i, jj, l)]));
                        }
                    }
                    for ll in [(l + c - 1) % c, (l + 1) % c] {
                        h = h.max(chordal_distance(x, &self.frame_nodes[self.index(i, j, ll)]));
                    }
                    out[p] = h;
                }
            }
        }
        out
    }

    /// Writes z = γ^m·y with y in the reference fundamental domain.
    pub fn reduce(&self, z: &[f64]) -> Result<(Vec<f64>, i32)> {
        if z.len() != self.n || z.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("point outside the chart".into()));
        }
        match self.kind {
            ChartKind::SphereFullChart => Ok((z.to_vec(), 0)),
            ChartKind::DilationShell => {
                let k = self.dilation().expect("shell chart has a dilation group");
                let r = norm2(z).sqrt();
                if r == 0.0 {
                    return Err(Error::PointAtInfinity);
                }
                let mut m = (r.ln() / k.ln()).floor() as i32;
                let mut f = k.powi(-m);
                if r * f >= k {
                    m += 1;
                    f = k.powi(-m);
                } else if r * f < 1.0 {
                    m -= 1;
                    f = k.powi(-m);
                }
                let (s, c) = (-(m as f64) * self.rot_angle).sin_cos();
                let y = vec![f * (c * z[0] - s * z[1]), f * (s * z[0] + c * z[1]), f * z[2]];
                Ok((y, m))
            }
        }
    }

    /// The Γ-invariant extension of η̂ at an arbitrary point of Ω̂.
    pub fn eta_hat_at(&self, z: &[f64]) -> Result<f64> {
        let (y, m) = self.reduce(z)?;
        let k = self.dilation().unwrap_or(1.0);
        Ok(conformal_factor(&y) * k.powi(-m))
    }
}

/// Positive nodal values of u on M.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionField {
    pub values: Vec<f64>,
    pub residual_history: Vec<f64>,
    pub alpha: f64,
}

impl SolutionField {
    pub fn new(values: Vec<f64>, alpha: f64) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::Domain(format!("value at node {i} is not positive")));
        }
        Ok(SolutionField {
            values,
            residual_history: Vec::new(),
            alpha,
        })
    }
}

/// v̂ = u·η̂^{(n−α)/2} at the chart nodes.
pub fn unfold(u: &SolutionField, chart: &DiscretizedManifold) -> Vec<f64> {
    let s = (chart.n as f64 - u.alpha) / 2.0;
    u.values
        .iter()
        .zip(&chart.eta_hat)
        .map(|(v, e)| v * e.powf(s))
        .collect()
}

/// Inverse of [`unfold`].
pub fn pushdown(vhat: &[f64], chart: &DiscretizedManifold, alpha: f64) -> Result<SolutionField> {
    let s = (chart.n as f64 - alpha) / 2.0;
    SolutionField::new(
        vhat.iter().zip(&chart.eta_hat).map(|(v, e)| v / e.powf(s)).collect(),
        alpha,
    )
}

/// Evaluates the unfolded field v̂ anywhere in Ω̂ by tensor-product cubic
/// interpolation on the chart grid.
///
/// On the shell the interpolated quantity is v̂·|x|^s, which is invariant
/// under the group and therefore periodic in t.
#[derive(Debug, Clone)]
pub struct ChartInterpolant<'a> {
    chart: &'a DiscretizedManifold,
    grid: Vec<f64>,
    s: f64,
}

impl<'a> ChartInterpolant<'a> {
    pub fn new(chart: &'a DiscretizedManifold, values: &[f64], alpha: f64) -> Result<Self> {
        if values.len() != chart.len() {
            return Err(Error::Domain("field length differs from node count".into()));
        }
        let s = (chart.n as f64 - alpha) / 2.0;
        let grid = match chart.kind {
            ChartKind::SphereFullChart => values.to_vec(),
            ChartKind::DilationShell => values
                .iter()
                .zip(&chart.frame_nodes)
                .map(|(u, y)| u * (conformal_factor(y) * norm2(y).sqrt()).powf(s))
                .collect(),
        };
        Ok(ChartInterpolant { chart, grid, s })
    }

    pub fn chart(&self) -> &DiscretizedManifold {
        self.chart
    }

    /// v̂(z).
    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        let c = self.chart;
        let [a, _, nphi] = c.shape;
        let dphi = 2.0 * PI / nphi as f64;
        match c.kind {
            ChartKind::SphereFullChart => {
                let xi = stereographic(z);
                let chi = xi[3].clamp(-1.0, 1.0).acos();
                let (th, ph) = polar_angles(&xi[..3]);
                let (i0, wi) = stencil(&c.axis0, chi);
                let (j0, wj) = stencil(&c.theta, th);
                let mut acc = 0.0;
                for (di, w1) in wi.iter().enumerate() {
                    for (dj, w2) in wj.iter().enumerate() {
                        let row = self.phi_row(i0 + di, j0 + dj, ph, dphi);
                        acc += w1 * w2 * row;
                    }
                }
                Ok(acc * conformal_factor(z).powf(self.s))
            }
            ChartKind::DilationShell => {
                let (y, _) = c.reduce(z)?;
                let r = norm2(&y).sqrt();
                let t = r.ln();
                let (th, ph) = polar_angles(&y);
                let dt = c.axis0[1] - c.axis0[0];
                let i0 = (t / dt - 0.5).floor() as i64;
                let (j0, wj) = stencil(&c.theta, th);
                let ts: Vec<f64> = (i0 - 1..=i0 + 2).map(|i| (i as f64 + 0.5) * dt).collect();
                let wt = lagrange(&ts, t);
                let mut acc = 0.0;
                for (k, i) in (i0 - 1..=i0 + 2).enumerate() {
                    let wraps = i.div_euclid(a as i64);
                    let ii = i.rem_euclid(a as i64) as usize;
                    let shifted = ph - wraps as f64 * c.rot_angle;
                    let mut row = 0.0;
                    for (dj, w2) in wj.iter().enumerate() {
                        row += w2 * self.phi_row(ii, j0 + dj, shifted, dphi);
                    }
                    acc += wt[k] * row;
                }
                Ok(acc * norm2(z).sqrt().powf(-self.s))
            }
        }
    }

    fn phi_row(&self, i: usize, j: usize, ph: f64, dphi: f64) -> f64 {
        let nphi = self.chart.shape[2] as i64;
        let l0 = (ph / dphi - 0.5).floor() as i64;
        let ls: Vec<f64> = (l0 - 1..=l0 + 2).map(|l| (l as f64 + 0.5) * dphi).collect();
        let w = lagrange(&ls, ph);
        (l0 - 1..=l0 + 2)
            .zip(w)
            .map(|(l, wl)| wl * self.grid[self.chart.index(i, j, l.rem_euclid(nphi) as usize)])
            .sum()
    }
}

fn polar_angles(x: &[f64]) -> (f64, f64) {
    let r = norm2(x).sqrt();
    let th = if r > 0.0 { (x[2] / r).clamp(-1.0, 1.0).acos() } else { 0.0 };
    let ph = x[1].atan2(x[0]).rem_euclid(2.0 * PI);
    (th, ph)
}

/// Up to four consecutive nodes around x on an ascending axis, with weights.
fn stencil(axis: &[f64], x: f64) -> (usize, Vec<f64>) {
    let m = axis.len();
    let width = m.min(4);
    let pos = axis.partition_point(|a| *a <= x);
    let start = pos.saturating_sub(2).min(m - width);
    (start, lagrange(&axis[start..start + width], x))
}

fn lagrange(xs: &[f64], x: f64) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            xs.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, xj)| (x - xj) / (xs[i] - xj))
                .product()
        })
        .collect()
}
