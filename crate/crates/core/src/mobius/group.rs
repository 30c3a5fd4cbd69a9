use std::collections::HashMap;

use serde::Serialize;

use super::map::{MoebiusMap, Point};
use crate::error::{Error, Result};
use crate::vec::{dist2, matmul, norm2};

/// Relative tolerance used to merge group elements with equal normal forms.
pub const DEDUP_TOL: f64 = 1e-8;

const MAX_ELEMENTS: usize = 400_000;

#[derive(Debug, Clone, PartialEq)]
pub enum GroupKind {
    Trivial,
    /// ⟨x ↦ k·A·x⟩ with k > 1 and A orthogonal.
    Dilation { k: f64, rotation: Vec<f64> },
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FundamentalDomain {
    WholeChart,
    Shell { inner: f64, outer: f64 },
    Unspecified,
}

#[derive(Debug, Clone)]
pub struct GroupElement {
    /// Letters are ±(generator index + 1).
    pub word: Vec<i32>,
    pub map: MoebiusMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoincareSum {
    pub sum: f64,
    pub tail_bound: f64,
}

#[derive(Debug, Clone)]
pub struct KleinianGroup {
    pub n: usize,
    pub generators: Vec<MoebiusMap>,
    pub kind: GroupKind,
    /// Point of Ω(Γ) used for exponent estimates and limit-point sampling.
    pub base_point: Vec<f64>,
    /// Identity first, then shells of increasing word length.
    pub elements: Vec<GroupElement>,
    shell_starts: Vec<usize>,
    pub limit_points: Vec<Point>,
    pub fundamental_domain: FundamentalDomain,
}

impl KleinianGroup {
    pub fn trivial(n: usize) -> Self {
        let mut g = KleinianGroup {
            n,
            generators: Vec::new(),
            kind: GroupKind::Trivial,
            base_point: unit(n, 0),
            elements: Vec::new(),
            shell_starts: Vec::new(),
            limit_points: Vec::new(),
            fundamental_domain: FundamentalDomain::WholeChart,
        };
        g.reset();
        g
    }

    /// The cyclic group generated by x ↦ k·A·x; `rotation` defaults to the identity.
    pub fn dilation(n: usize, k: f64, rotation: Option<Vec<f64>>) -> Result<Self> {
        if !(k.is_finite() && k > 1.0) {
            return Err(Error::Domain(format!("k: must exceed 1, got {k}")));
        }
        let rotation = rotation.unwrap_or_else(|| crate::vec::identity(n));
        let gen = MoebiusMap::dilation_rotation(k, rotation.clone())?;
        if gen.dim() != n {
            return Err(Error::Domain(format!("rotation: expected {n}x{n} matrix")));
        }
        let mut g = KleinianGroup {
            n,
            generators: vec![gen],
            kind: GroupKind::Dilation { k, rotation },
            base_point: unit(n, 0),
            elements: Vec::new(),
            shell_starts: Vec::new(),
            limit_points: vec![Point::Finite(vec![0.0; n]), Point::Infinity],
            fundamental_domain: FundamentalDomain::Shell { inner: 1.0, outer: k },
        };
        g.reset();
        Ok(g)
    }

    /// A group from explicit generators. A single dilation-rotation fixing
    /// the origin is recognised as a cyclic dilation group.
    pub fn from_generators(n: usize, generators: Vec<MoebiusMap>, base_point: Option<Vec<f64>>) -> Result<Self> {
        for (i, g) in generators.iter().enumerate() {
            if g.dim() != n {
                return Err(Error::Domain(format!("generators[{i}]: dimension {} differs from n = {n}", g.dim())));
            }
        }
        if let Some(bp) = &base_point {
            if bp.len() != n {
                return Err(Error::Domain(format!("base_point: expected length {n}")));
            }
        }
        let mut group = if generators.is_empty() {
            Self::trivial(n)
        } else if generators.len() == 1
            && generators[0].is_similarity()
            && norm2(&generators[0].b) == 0.0
            && (generators[0].scale - 1.0).abs() > 1e-12
        {
            let g = if generators[0].scale > 1.0 {
                generators[0].clone()
            } else {
                generators[0].inverse()
            };
            Self::dilation(n, g.scale, Some(g.rotation))?
        } else {
            let bp = base_point.clone().unwrap_or_else(|| default_base_point(n, &generators));
            let mut g = KleinianGroup {
                n,
                generators,
                kind: GroupKind::General,
                base_point: bp,
                elements: Vec::new(),
                shell_starts: Vec::new(),
                limit_points: Vec::new(),
                fundamental_domain: FundamentalDomain::Unspecified,
            };
            g.reset();
            g
        };
        if let Some(bp) = base_point {
            group.base_point = bp;
        }
        Ok(group)
    }

    fn reset(&mut self) {
        self.elements = vec![GroupElement {
            word: Vec::new(),
            map: MoebiusMap::identity(self.n),
        }];
        self.shell_starts = vec![0, 1];
    }

    /// Largest enumerated word length.
    pub fn depth(&self) -> usize {
        self.shell_starts.len() - 2
    }

    /// Elements of word length `len`.
    pub fn shell(&self, len: usize) -> &[GroupElement] {
        if len + 1 >= self.shell_starts.len() {
            return &[];
        }
        &self.elements[self.shell_starts[len]..self.shell_starts[len + 1]]
    }

    /// γ^m for cyclic groups.
    pub fn power(&self, m: i64) -> Result<MoebiusMap> {
        match &self.kind {
            GroupKind::Dilation { k, rotation } => {
                let n = self.n;
                let base = if m >= 0 {
                    rotation.clone()
                } else {
                    crate::vec::transpose(rotation, n)
                };
                let mut r = crate::vec::identity(n);
                for _ in 0..m.unsigned_abs() {
                    r = matmul(&r, &base, n);
                }
                MoebiusMap::dilation_rotation(k.powi(m as i32), reorthonormalize(&r, n))
            }
            GroupKind::Trivial if m == 0 => Ok(MoebiusMap::identity(self.n)),
            _ => Err(Error::UnsupportedGroup("power requires a cyclic dilation group".into())),
        }
    }

    /// Enumerates all elements of word length ≤ `depth`.
    pub fn enumerate(&mut self, depth: usize) -> Result<()> {
        self.reset();
        match self.kind.clone() {
            GroupKind::Trivial => {
                for _ in 0..depth {
                    self.shell_starts.push(self.elements.len());
                }
            }
            GroupKind::Dilation { .. } => {
                for m in 1..=depth as i64 {
                    for e in [m, -m] {
                        let letter = if e > 0 { 1 } else { -1 };
                        self.elements.push(GroupElement {
                            word: vec![letter; e.unsigned_abs() as usize],
                            map: self.power(e)?,
                        });
                    }
                    self.shell_starts.push(self.elements.len());
                }
            }
            GroupKind::General => self.enumerate_words(depth)?,
        }
        if self.kind == GroupKind::General {
            self.limit_points = self.sample_limit_points();
        }
        Ok(())
    }

    fn enumerate_words(&mut self, depth: usize) -> Result<()> {
        let letters: Vec<(i32, MoebiusMap)> = self
            .generators
            .iter()
            .enumerate()
            .flat_map(|(i, g)| [(i as i32 + 1, g.clone()), (-(i as i32) - 1, g.inverse())])
            .collect();
        let mut bins: HashMap<(bool, i64), Vec<usize>> = HashMap::new();
        let key = |m: &MoebiusMap| (m.inversion, (m.scale.ln() / (10.0 * DEDUP_TOL)).floor() as i64);
        bins.entry(key(&self.elements[0].map)).or_default().push(0);
        for len in 1..=depth {
            let prev = self.shell_starts[len - 1]..self.shell_starts[len];
            let mut fresh: Vec<GroupElement> = Vec::new();
            for idx in prev {
                let parent = self.elements[idx].clone();
                for (letter, gen) in &letters {
                    if parent.word.last() == Some(&-letter) {
                        continue;
                    }
                    let map = parent.map.compose(gen);
                    let (flag, bin) = key(&map);
                    let duplicate = (bin - 1..=bin + 1).any(|b| {
                        bins.get(&(flag, b)).is_some_and(|ids| {
                            ids.iter().any(|&j| {
                                let other = if j < self.elements.len() {
                                    &self.elements[j].map
                                } else {
                                    &fresh[j - self.elements.len()].map
                                };
                                other.approx_eq(&map, DEDUP_TOL)
                            })
                        })
                    });
                    if duplicate {
                        continue;
                    }
                    bins.entry((flag, bin))
                        .or_default()
                        .push(self.elements.len() + fresh.len());
                    let mut word = parent.word.clone();
                    word.push(*letter);
                    fresh.push(GroupElement { word, map });
                    if self.elements.len() + fresh.len() > MAX_ELEMENTS {
                        return Err(Error::Domain(format!(
                            "enumeration exceeds {MAX_ELEMENTS} elements at word length {len}"
                        )));
                    }
                }
            }
            self.elements.extend(fresh);
            self.shell_starts.push(self.elements.len());
        }
        Ok(())
    }

    /// Attracting fixed points of long words, found by iterating them on the base point.
    fn sample_limit_points(&self) -> Vec<Point> {
        let mut out: Vec<Point> = Vec::new();
        let shell = self.shell(self.depth());
        let step = (shell.len() / 64).max(1);
        for el in shell.iter().step_by(step) {
            let mut x = Point::Finite(self.base_point.clone());
            for _ in 0..60 {
                let y = el.map.apply_point(&x);
                let y = match y {
                    Point::Finite(v) if norm2(&v) > 1e30 => Point::Infinity,
                    other => other,
                };
                let done = match (&x, &y) {
                    (Point::Finite(a), Point::Finite(b)) => dist2(a, b) < 1e-24,
                    (Point::Infinity, Point::Infinity) => true,
                    _ => false,
                };
                x = y;
                if done {
                    break;
                }
            }
            let seen = out.iter().any(|p| match (p, &x) {
                (Point::Finite(a), Point::Finite(b)) => dist2(a, b) < 1e-18,
                (Point::Infinity, Point::Infinity) => true,
                _ => false,
            });
            if !seen {
                out.push(x);
            }
        }
        out
    }

    /// Σ over each shell of |γ'(x)|^s for word lengths 1..=shells.
    pub fn shell_sums(&self, s: f64, x: &[f64], shells: usize) -> Result<Vec<f64>> {
        match &self.kind {
            GroupKind::Trivial => Ok(vec![0.0; shells]),
            GroupKind::Dilation { k, .. } => {
                let r2 = norm2(x);
                Ok((1..=shells as i32)
                    .map(|m| {
                        [m, -m]
                            .iter()
                            .map(|&e| dilation_deriv_spherical(*k, e, r2).powf(s))
                            .sum()
                    })
                    .collect())
            }
            GroupKind::General => {
                if shells > self.depth() {
                    return Err(Error::InsufficientEnumeration {
                        shells: self.depth(),
                        needed: shells,
                    });
                }
                (1..=shells)
                    .map(|len| {
                        self.shell(len)
                            .iter()
                            .map(|el| el.map.deriv_spherical(x).map(|d| d.powf(s)))
                            .sum::<Result<f64>>()
                    })
                    .collect()
            }
        }
    }

    /// Partial Poincaré sum over word lengths 1..=cutoff with a geometric tail estimate.
    pub fn poincare_partial_sum(&self, s: f64, x: &[f64], cutoff: usize) -> Result<PoincareSum> {
        if !(s > 0.0) {
            return Err(Error::Domain(format!("s must be positive, got {s}")));
        }
        if cutoff < 1 {
            return Err(Error::Domain("cutoff must be at least 1".into()));
        }
        if self.kind == GroupKind::Trivial {
            return Ok(PoincareSum { sum: 0.0, tail_bound: 0.0 });
        }
        let available = match self.kind {
            GroupKind::General => self.depth(),
            _ => usize::MAX,
        };
        if cutoff > available {
            return Err(Error::InsufficientEnumeration {
                shells: available,
                needed: cutoff,
            });
        }
        let extra = if cutoff < 3 { 3 - cutoff } else { 0 };
        let count = (cutoff + extra).min(available);
        if count < 2 {
            return Err(Error::InsufficientEnumeration { shells: count, needed: 2 });
        }
        let sums = self.shell_sums(s, x, count)?;
        let sum: f64 = sums[..cutoff.min(count)].iter().sum();
        let last = cutoff.min(count);
        let lo = last.saturating_sub(3).max(1);
        let mut ratio: f64 = 0.0;
        for l in lo..last.max(2) {
            let (a, b) = (sums[l - 1], sums[l]);
            if a > 0.0 {
                ratio = ratio.max(b / a);
            }
        }
        if ratio >= 1.0 {
            return Err(Error::Divergent { s, ratio });
        }
        let tail_bound = sums[last - 1] * ratio / (1.0 - ratio);
        Ok(PoincareSum { sum, tail_bound })
    }

    /// Critical exponent estimated from the decay rate of shell sums.
    pub fn exponent_estimate(&self) -> Result<f64> {
        let shells = match self.kind {
            GroupKind::Trivial => return Ok(0.0),
            GroupKind::Dilation { .. } => 16,
            GroupKind::General => self.depth(),
        };
        if shells < 4 {
            return Err(Error::InsufficientEnumeration { shells, needed: 4 });
        }
        let x = self.base_point.clone();
        let pressure = |s: f64| -> Result<f64> {
            let sums = self.shell_sums(s, &x, shells)?;
            let from = shells / 2;
            let pts: Vec<(f64, f64)> = (from..=shells)
                .map(|l| (l as f64, sums[l - 1].ln()))
                .collect();
            if pts.iter().any(|p| !p.1.is_finite()) {
                return Ok(f64::NEG_INFINITY);
            }
            Ok(slope(&pts))
        };
        if pressure(0.0)? <= 1e-12 {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (0.0, self.n as f64);
        if pressure(hi)? > 0.0 {
            return Ok(hi);
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if pressure(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// |(kA)^m'(x)| in the spherical metric, given |x|².
pub fn dilation_deriv_spherical(k: f64, m: i32, r2: f64) -> f64 {
    let km = k.powi(m);
    (1.0 + r2) / (1.0 + km * km * r2) * km
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn reorthonormalize(m: &[f64], n: usize) -> Vec<f64> {
    let dm = nalgebra::DMatrix::from_row_slice(n, n, m);
    let svd = dm.svd(true, true);
    let r = svd.u.unwrap() * svd.v_t.unwrap();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = r[(i, j)];
        }
    }
    out
}

/// Candidate point farthest from every inversion centre of the generators.
fn default_base_point(n: usize, generators: &[MoebiusMap]) -> Vec<f64> {
    let centres: Vec<&Vec<f64>> = generators
        .iter()
        .filter(|g| g.inversion)
        .flat_map(|g| [&g.a, &g.b])
        .collect();
    let mut candidates = vec![vec![0.0; n]];
    for i in 0..n {
        for r in [1.0, -1.0, 3.0, -3.0] {
            let mut v = vec![0.0; n];
            v[i] = r;
            candidates.push(v);
        }
    }
    candidates
        .into_iter()
        .map(|c| {
            let d = centres.iter().map(|a| dist2(&c, a)).fold(f64::INFINITY, f64::min);
            (d, c)
        })
        .fold((f64::NEG_INFINITY, vec![0.0; n]), |best, cur| if cur.0 > best.0 { cur } else { best })
        .1
}
