use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec::{dist2, identity, matmul, matvec, norm2, sub, transpose};

/// A point of R^n ∪ {∞}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Point {
    Finite(Vec<f64>),
    Infinity,
}

impl Point {
    pub fn finite(&self) -> Option<&[f64]> {
        match self {
            Point::Finite(x) => Some(x),
            Point::Infinity => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Point::Infinity)
    }
}

/// γ(x) = b + scale·R·ι(x − a), with ι the identity or the unit inversion.
///
/// Similarities are kept with `a = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoebiusMap {
    pub inversion: bool,
    /// Row-major n×n orthogonal matrix.
    pub rotation: Vec<f64>,
    pub scale: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

const ORTHO_TOL: f64 = 1e-12;

impl MoebiusMap {
    pub fn new(inversion: bool, scale: f64, rotation: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = b.len();
        if n == 0 {
            return Err(Error::Domain("b: empty vector".into()));
        }
        if a.len() != n {
            return Err(Error::Domain(format!("a: expected length {n}, got {}", a.len())));
        }
        if rotation.len() != n * n {
            return Err(Error::Domain(format!(
                "rotation: expected {} entries, got {}",
                n * n,
                rotation.len()
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Domain(format!("scale: must be positive and finite, got {scale}")));
        }
        if a.iter().chain(&b).chain(&rotation).any(|v| !v.is_finite()) {
            return Err(Error::Domain("a, b, rotation: non-finite entry".into()));
        }
        let rtr = matmul(&transpose(&rotation, n), &rotation, n);
        let id = identity(n);
        let err = rtr.iter().zip(&id).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if err > ORTHO_TOL {
            return Err(Error::Domain(format!("rotation: not orthogonal (deviation {err:e})")));
        }
        let mut map = MoebiusMap { inversion, rotation, scale, a, b };
        if !inversion {
            let ra = matvec(&map.rotation, &map.a);
            for i in 0..n {
                map.b[i] -= scale * ra[i];
                map.a[i] = 0.0;
            }
        }
        Ok(map)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn identity(n: usize) -> Self {
        MoebiusMap {
            inversion: false,
            rotation: identity(n),
            scale: 1.0,
            a: vec![0.0; n],
            b: vec![0.0; n],
        }
    }

    pub fn dilation(n: usize, k: f64) -> Self {
        MoebiusMap {
            scale: k,
            ..Self::identity(n)
        }
    }

    /// x ↦ k·A·x.
    pub fn dilation_rotation(k: f64, rotation: Vec<f64>) -> Result<Self> {
        let n = (rotation.len() as f64).sqrt().round() as usize;
        Self::new(false, k, rotation, vec![0.0; n], vec![0.0; n])
    }

    /// x ↦ t + scale·R·x.
    pub fn similarity(scale: f64, rotation: Vec<f64>, translation: Vec<f64>) -> Result<Self> {
        let n = translation.len();
        Self::new(false, scale, rotation, vec![0.0; n], translation)
    }

    pub fn translation(t: Vec<f64>) -> Self {
        let n = t.len();
        MoebiusMap {
            b: t,
            ..Self::identity(n)
        }
    }

    /// x ↦ x/|x|².
    pub fn inversion(n: usize) -> Self {
        MoebiusMap {
            inversion: true,
            ..Self::identity(n)
        }
    }

    /// Inversion in the sphere |x − c| = r.
    pub fn sphere_inversion(center: &[f64], radius: f64) -> Result<Self> {
        let n = center.len();
        Self::new(true, radius * radius, identity(n), center.to_vec(), center.to_vec())
    }

    /// Maps the exterior of S(c1, r1) onto the interior of S(c2, r2).
    pub fn sphere_pairing(c1: &[f64], r1: f64, c2: &[f64], r2: f64) -> Result<Self> {
        let n = c1.len();
        Self::new(true, r1 * r2, identity(n), c1.to_vec(), c2.to_vec())
    }

    pub fn is_similarity(&self) -> bool {
        !self.inversion
    }

    /// Preimage of ∞.
    pub fn pole(&self) -> Point {
        if self.inversion {
            Point::Finite(self.a.clone())
        } else {
            Point::Infinity
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::Domain(format!("point of length {} for map on R^{n}", x.len())));
        }
        let v: Vec<f64> = if self.inversion {
            let d = sub(x, &self.a);
            let r2 = norm2(&d);
            if r2 == 0.0 {
                return Err(Error::PointAtInfinity);
            }
            d.iter().map(|t| t / r2).collect()
        } else {
            x.to_vec()
        };
        let rv = matvec(&self.rotation, &v);
        let out: Vec<f64> = (0..n).map(|i| self.b[i] + self.scale * rv[i]).collect();
        if out.iter().any(|t| !t.is_finite()) {
            return Err(Error::PointAtInfinity);
        }
        Ok(out)
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        match p {
            Point::Infinity => {
                if self.inversion {
                    Point::Finite(self.b.clone())
                } else {
                    Point::Infinity
                }
            }
            Point::Finite(x) => match self.apply(x) {
                Ok(y) => Point::Finite(y),
                Err(_) => Point::Infinity,
            },
        }
    }

    pub fn inverse(&self) -> Self {
        let n = self.dim();
        let rt = transpose(&self.rotation, n);
        if self.inversion {
            MoebiusMap {
                inversion: true,
                rotation: rt,
                scale: self.scale,
                a: self.b.clone(),
                b: self.a.clone(),
            }
        } else {
            let rb = matvec(&rt, &self.b);
            MoebiusMap {
                inversion: false,
                rotation: rt,
                scale: 1.0 / self.scale,
                a: vec![0.0; n],
                b: rb.iter().map(|t| -t / self.scale).collect(),
            }
        }
    }

    /// Jacobian matrix (row-major) at x.
    pub fn jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        let mut j: Vec<f64> = self.rotation.iter().map(|r| r * self.scale).collect();
        if self.inversion {
            let d = sub(x, &self.a);
            let r2 = norm2(&d);
            if r2 == 0.0 {
                return Err(Error::PointAtInfinity);
            }
            let mut dinv = identity(n);
            for i in 0..n {
                for k in 0..n {
                    dinv[i * n + k] = (dinv[i * n + k] - 2.0 * d[i] * d[k] / r2) / r2;
                }
            }
            j = matmul(&j, &dinv, n);
        }
        Ok(j)
    }

    /// |γ'(x)|_e.
    pub fn deriv_euclidean(&self, x: &[f64]) -> Result<f64> {
        if self.inversion {
            let r2 = dist2(x, &self.a);
            if r2 == 0.0 {
                return Err(Error::PointAtInfinity);
            }
            Ok(self.scale / r2)
        } else {
            Ok(self.scale)
        }
    }

    /// Conformal derivative for the round metric pulled back through the
    /// stereographic chart.
    pub fn deriv_spherical(&self, x: &[f64]) -> Result<f64> {
        let de = self.deriv_euclidean(x)?;
        let y = self.apply(x)?;
        Ok((1.0 + norm2(x)) / (1.0 + norm2(&y)) * de)
    }

    /// self ∘ g.
    pub fn compose(&self, g: &MoebiusMap) -> MoebiusMap {
        let f = self;
        let n = f.dim();
        if !f.inversion && !g.inversion {
            let gb = matvec(&f.rotation, &g.b);
            return MoebiusMap {
                inversion: false,
                rotation: orthonormalize(&matmul(&f.rotation, &g.rotation, n), n),
                scale: f.scale * g.scale,
                a: vec![0.0; n],
                b: (0..n).map(|i| f.b[i] + f.scale * gb[i]).collect(),
            };
        }
        let pole = g.inverse().apply_point(&f.pole());
        let x = probe_point(n, g, &pole);
        let gx = g.apply(&x).expect("probe avoids the pole of g");
        let hx = f.apply(&gx).expect("probe avoids the pole of f∘g");
        let jac = matmul(
            &f.jacobian(&gx).expect("probe avoids the pole"),
            &g.jacobian(&x).expect("probe avoids the pole"),
            n,
        );
        match pole {
            Point::Infinity => {
                let (scale, rotation) = polar(&jac, n);
                let rx = matvec(&rotation, &x);
                MoebiusMap {
                    inversion: false,
                    rotation,
                    scale,
                    a: vec![0.0; n],
                    b: (0..n).map(|i| hx[i] - scale * rx[i]).collect(),
                }
            }
            Point::Finite(a) => {
                let d = sub(&x, &a);
                let r2 = norm2(&d);
                let mut undo = identity(n);
                for i in 0..n {
                    for k in 0..n {
                        undo[i * n + k] = (undo[i * n + k] - 2.0 * d[i] * d[k] / r2) * r2;
                    }
                }
                let (scale, rotation) = polar(&matmul(&jac, &undo, n), n);
                let b = match f.apply_point(&g.apply_point(&Point::Infinity)) {
                    Point::Finite(b) => b,
                    Point::Infinity => unreachable!("finite pole implies finite image of infinity"),
                };
                MoebiusMap {
                    inversion: true,
                    rotation,
                    scale,
                    a,
                    b,
                }
            }
        }
    }

    /// γ^m.
    pub fn power(&self, m: i64) -> MoebiusMap {
        let base = if m < 0 { self.inverse() } else { self.clone() };
        let mut e = m.unsigned_abs();
        let mut acc = MoebiusMap::identity(self.dim());
        let mut sq = base;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.compose(&sq);
            }
            e >>= 1;
            if e > 0 {
                sq = sq.compose(&sq);
            }
        }
        acc
    }

    /// Comparison of normal-form parameters at relative tolerance `tol`.
    pub fn approx_eq(&self, other: &MoebiusMap, tol: f64) -> bool {
        if self.inversion != other.inversion || self.dim() != other.dim() {
            return false;
        }
        let close = |x: &[f64], y: &[f64]| {
            let scale = 1.0 + norm2(x).sqrt().max(norm2(y).sqrt());
            dist2(x, y).sqrt() <= tol * scale
        };
        (self.scale.ln() - other.scale.ln()).abs() <= tol
            && self
                .rotation
                .iter()
                .zip(&other.rotation)
                .all(|(p, q)| (p - q).abs() <= tol)
            && close(&self.a, &other.a)
            && close(&self.b, &other.b)
    }

    /// Composition of one to three random similarities and sphere inversions.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize) -> MoebiusMap {
        let factors = rng.gen_range(1..=3);
        let mut map = MoebiusMap::identity(n);
        for _ in 0..factors {
            let f = if rng.gen_bool(0.5) {
                let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let scale = rng.gen_range(-0.5f64..0.5).exp();
                MoebiusMap::similarity(scale, random_rotation(rng, n), t).expect("valid similarity")
            } else {
                let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let r = rng.gen_range(0.5..1.5);
                MoebiusMap::sphere_inversion(&c, r).expect("valid inversion")
            };
            map = f.compose(&map);
        }
        map
    }
}

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let q = m.qr().q();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = q[(i, j)];
        }
    }
    out
}

/// Scale and orthogonal factor of a conformal matrix.
fn polar(m: &[f64], n: usize) -> (f64, Vec<f64>) {
    let dm = DMatrix::from_row_slice(n, n, m);
    let svd = dm.svd(true, true);
    let scale = svd.singular_values.iter().sum::<f64>() / n as f64;
    let r = svd.u.unwrap() * svd.v_t.unwrap();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = r[(i, j)];
        }
    }
    (scale, out)
}

fn orthonormalize(m: &[f64], n: usize) -> Vec<f64> {
    polar(m, n).1
}

/// A fixed point kept away from the poles relevant to f∘g.
fn probe_point(n: usize, g: &MoebiusMap, pole: &Point) -> Vec<f64> {
    let mut best = vec![0.0; n];
    let mut best_score = f64::NEG_INFINITY;
    for j in 0..16 {
        let radius = [0.5, 1.0, 2.0, 4.0][j % 4];
        let x: Vec<f64> = (0..n)
            .map(|i| radius * (1.7 * j as f64 + 0.9 * i as f64 + 0.3).sin())
            .collect();
        let mut score = f64::INFINITY;
        if g.inversion {
            score = score.min(dist2(&x, &g.a));
        }
        if let Point::Finite(p) = pole {
            score = score.min(dist2(&x, p));
        }
        if score > best_score {
            best_score = score;
            best = x;
        }
    }
    best
}

/// Free-function forms of the map operations.
pub fn apply(map: &MoebiusMap, x: &[f64]) -> Result<Vec<f64>> {
    map.apply(x)
}

pub fn compose(a: &MoebiusMap, b: &MoebiusMap) -> MoebiusMap {
    a.compose(b)
}

pub fn deriv_euclidean(map: &MoebiusMap, x: &[f64]) -> Result<f64> {
    map.deriv_euclidean(x)
}

pub fn deriv_spherical(map: &MoebiusMap, x: &[f64]) -> Result<f64> {
    map.deriv_spherical(x)
}

