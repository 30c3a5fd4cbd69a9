//! The discrete operator I_α, its inverse P_α and the nonlinear solve of
//! u = I_α(u^p).

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DiscretizedManifold, SolutionField};
use crate::kernel::KernelMatrix;
use crate::riesz::ProblemSpec;

/// Relative residual above which a linear solve is declared ill-conditioned.
const SOLVE_REL_TOL: f64 = 1e-9;

type Factor = LU<f64, nalgebra::Dyn, nalgebra::Dyn>;

/// I_α on the chart: (If)_p = Σ_q K(p,q) W_q f_q + D_p f_p, W = w·η̂ⁿ.
///
/// Writing B = K + diag(D/W), the operator is f ↦ B(W∘f) and its inverse is
/// u ↦ W⁻¹∘B⁻¹u. B is symmetric, which gives self-adjointness of both in the
/// W-weighted inner product.
pub struct DiscreteOperator<'a> {
    pub kernel: &'a KernelMatrix,
    pub weights: Vec<f64>,
    factor: OnceLock<std::result::Result<(Factor, f64), Error>>,
}

impl<'a> DiscreteOperator<'a> {
    pub fn new(kernel: &'a KernelMatrix, chart: &DiscretizedManifold) -> Result<Self> {
        if kernel.len() != chart.len() {
            return Err(Error::Domain(format!(
                "kernel has {} nodes, chart has {}",
                kernel.len(),
                chart.len()
            )));
        }
        Ok(DiscreteOperator {
            kernel,
            weights: chart.conformal_weights(),
            factor: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// B·g.
    fn apply_b(&self, g: &[f64]) -> Vec<f64> {
        let n = self.len();
        let data = self.kernel.entries.as_slice();
        (0..n)
            .into_par_iter()
            .map(|p| {
                let col = &data[p * n..(p + 1) * n];
                let dot: f64 = col.iter().zip(g).map(|(a, b)| a * b).sum();
                dot + self.kernel.diagonal_correction[p] / self.weights[p] * g[p]
            })
            .collect()
    }

    pub fn apply_i(&self, f: &[f64]) -> Vec<f64> {
        let wf: Vec<f64> = f.iter().zip(&self.weights).map(|(a, w)| a * w).collect();
        self.apply_b(&wf)
    }

    fn factor(&self) -> Result<&(Factor, f64)> {
        self.factor
            .get_or_init(|| {
                let n = self.len();
                let mut b = self.kernel.entries.clone();
                for p in 0..n {
                    b[(p, p)] += self.kernel.diagonal_correction[p] / self.weights[p];
                }
                let norm1 = (0..n)
                    .map(|q| b.column(q).iter().map(|v| v.abs()).sum::<f64>())
                    .fold(0.0, f64::max);
                let lu = b.lu();
                if !lu.is_invertible() {
                    return Err(Error::IllConditioned { estimate: f64::INFINITY });
                }
                let inv_norm = hager_inverse_norm(&lu, n);
                Ok((lu, norm1 * inv_norm))
            })
            .as_ref()
            .map_err(|e| e.clone())
    }

    /// 1-norm condition estimate of B.
    pub fn condition_estimate(&self) -> Result<f64> {
        Ok(self.factor()?.1)
    }

    /// B⁻¹u with two steps of iterative refinement.
    fn solve_b(&self, u: &[f64]) -> Result<Vec<f64>> {
        let (lu, cond) = self.factor()?;
        let rhs = DVector::from_column_slice(u);
        let mut g = lu.solve(&rhs).ok_or(Error::IllConditioned { estimate: *cond })?;
        let unorm = u.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut rel = f64::INFINITY;
        for _ in 0..3 {
            let bg = self.apply_b(g.as_slice());
            let r: Vec<f64> = u.iter().zip(&bg).map(|(a, b)| a - b).collect();
            rel = r.iter().fold(0.0f64, |m, v| m.max(v.abs())) / unorm;
            if rel <= 1e-14 {
                break;
            }
            let corr = lu
                .solve(&DVector::from_vec(r))
                .ok_or(Error::IllConditioned { estimate: *cond })?;
            g += corr;
        }
        if !(rel <= SOLVE_REL_TOL) {
            return Err(Error::IllConditioned { estimate: *cond });
        }
        Ok(g.as_slice().to_vec())
    }

    pub fn apply_p(&self, u: &[f64]) -> Result<Vec<f64>> {
        let g = self.solve_b(u)?;
        Ok(g.iter().zip(&self.weights).map(|(a, w)| a / w).collect())
    }
}

/// Hager's estimate of ‖B⁻¹‖₁ for symmetric B.
fn hager_inverse_norm(lu: &Factor, n: usize) -> f64 {
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0;
    for _ in 0..5 {
        let y = match lu.solve(&x) {
            Some(y) => y,
            None => return f64::INFINITY,
        };
        est = y.iter().map(|v| v.abs()).sum();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let z = match lu.solve(&xi) {
            Some(z) => z,
            None => return f64::INFINITY,
        };
        let (j, zmax) = z
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |b, (i, v)| if v.abs() > b.1 { (i, v.abs()) } else { b });
        if zmax <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(n);
        x[j] = 1.0;
    }
    est
}

pub fn apply_i(kernel: &KernelMatrix, chart: &DiscretizedManifold, f: &[f64]) -> Result<Vec<f64>> {
    Ok(DiscreteOperator::new(kernel, chart)?.apply_i(f))
}

pub fn apply_p(kernel: &KernelMatrix, chart: &DiscretizedManifold, u: &[f64]) -> Result<Vec<f64>> {
    DiscreteOperator::new(kernel, chart)?.apply_p(u)
}

/// u − I_α(u^p).
pub fn residual(op: &DiscreteOperator, spec: &ProblemSpec, u: &[f64]) -> Vec<f64> {
    let up: Vec<f64> = u.iter().map(|v| v.powf(spec.p)).collect();
    let iu = op.apply_i(&up);
    u.iter().zip(&iu).map(|(a, b)| a - b).collect()
}

/// J·δ for J = id − p·I_α∘diag(u^{p−1}), the derivative of [`residual`].
pub fn jacobian_apply(op: &DiscreteOperator, spec: &ProblemSpec, u: &[f64], delta: &[f64]) -> Vec<f64> {
    let scaled: Vec<f64> = u
        .iter()
        .zip(delta)
        .map(|(a, d)| spec.p * a.powf(spec.p - 1.0) * d)
        .collect();
    let i = op.apply_i(&scaled);
    delta.iter().zip(&i).map(|(d, v)| d - v).collect()
}

/// Residual of the flat equation v̂ = Î_α(v̂^p) at the nodes, with the flat
/// kernel c Σ_γ |x − γy|^{−2s}|γ'(y)|_e^s, flat weights w and the self
/// weight rescaled to flat units.
pub fn flat_residual(kernel: &KernelMatrix, chart: &DiscretizedManifold, spec: &ProblemSpec, vhat: &[f64]) -> Vec<f64> {
    let s = spec.s();
    let n = chart.len();
    let e = &chart.eta_hat;
    let data = kernel.entries.as_slice();
    (0..n)
        .into_par_iter()
        .map(|p| {
            let col = &data[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for q in 0..n {
                let flat_k = col[q] * (e[p] * e[q]).powf(s);
                acc += flat_k * chart.flat_weights[q] * vhat[q].powf(spec.p);
            }
            let self_w = kernel.diagonal_correction[p] * e[p].powf(-spec.alpha);
            vhat[p] - acc - self_w * vhat[p].powf(spec.p)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iter: usize,
    /// Damping of the fixed-point fallback.
    pub theta: f64,
    pub picard_max: usize,
    pub max_halvings: usize,
    /// Extra Newton steps after convergence while they reduce the residual.
    pub polish: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iter: 50,
            theta: 0.5,
            picard_max: 500,
            max_halvings: 30,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub picard_iterations: usize,
    pub final_residual: f64,
    pub min_value: f64,
    pub max_value: f64,
    pub yamabe_alpha_estimate: Option<f64>,
    pub integral_bound_lhs: Option<f64>,
    pub integral_bound_rhs: Option<f64>,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn newton_direction(op: &DiscreteOperator, spec: &ProblemSpec, u: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    let n = u.len();
    let k = op.kernel;
    let mut j = DMatrix::zeros(n, n);
    let src = k.entries.as_slice();
    {
        let dst = j.as_mut_slice();
        dst.par_chunks_mut(n).enumerate().for_each(|(q, col)| {
            let scale = -spec.p * u[q].powf(spec.p - 1.0) * op.weights[q];
            for (c, s) in col.iter_mut().zip(&src[q * n..(q + 1) * n]) {
                *c = scale * s;
            }
        });
    }
    for p in 0..n {
        j[(p, p)] += 1.0 - spec.p * k.diagonal_correction[p] * u[p].powf(spec.p - 1.0);
    }
    let rhs = DVector::from_iterator(n, f.iter().map(|v| -v));
    let lu = j.lu();
    lu.solve(&rhs)
        .map(|d| d.as_slice().to_vec())
        .ok_or(Error::IllConditioned { estimate: f64::INFINITY })
}

/// Damped Newton with a positivity-preserving line search and a damped
/// fixed-point fallback.
pub fn solve(
    spec: &ProblemSpec,
    chart: &DiscretizedManifold,
    kernel: &KernelMatrix,
    u0: &[f64],
    opts: &SolveOptions,
) -> Result<(SolutionField, SolveReport)> {
    let op = DiscreteOperator::new(kernel, chart)?;
    solve_with(spec, &op, u0, opts)
}

pub fn solve_with(
    spec: &ProblemSpec,
    op: &DiscreteOperator,
    u0: &[f64],
    opts: &SolveOptions,
) -> Result<(SolutionField, SolveReport)> {
    if u0.len() != op.len() {
        return Err(Error::Domain("initial guess length differs from node count".into()));
    }
    if u0.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("initial guess must be positive".into()));
    }
    let tol = spec.tolerances.solve_tol;
    let mut u = u0.to_vec();
    let mut f = residual(op, spec, &u);
    let mut res = sup(&f);
    let mut history = vec![res];
    let mut iterations = 0usize;
    let mut picard = 0usize;
    let mut polish_steps = 0usize;
    let mut best = res;
    loop {
        let converged = res < tol;
        if converged && (!opts.polish || res <= tol * 1e-4 || polish_steps >= 2) {
            break;
        }
        if iterations >= opts.max_iter {
            if converged {
                break;
            }
            return Err(Error::NonConvergence {
                iterations,
                best_residual: best,
            });
        }
        let dir = newton_direction(op, spec, &u, &f);
        let mut accepted = false;
        let mut positive_seen = false;
        if let Ok(dir) = dir {
            let mut step = 1.0;
            for _ in 0..=opts.max_halvings {
                let trial: Vec<f64> = u.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
                if trial.iter().all(|v| *v > 0.0) {
                    positive_seen = true;
                    let ft = residual(op, spec, &trial);
                    let rt = sup(&ft);
                    if rt < res {
                        u = trial;
                        f = ft;
                        res = rt;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
        }
        if converged {
            if !accepted {
                break;
            }
            iterations += 1;
            polish_steps += 1;
            history.push(res);
            continue;
        }
        if accepted {
            iterations += 1;
            history.push(res);
            best = best.min(res);
            continue;
        }
        // Newton stalled: damped fixed-point iteration
        let entry = res;
        let mut improved = false;
        for _ in 0..opts.picard_max {
            let up: Vec<f64> = u.iter().map(|v| v.powf(spec.p)).collect();
            let iu = op.apply_i(&up);
            let next: Vec<f64> = u
                .iter()
                .zip(&iu)
                .map(|(a, b)| (1.0 - opts.theta) * a + opts.theta * b)
                .collect();
            picard += 1;
            if next.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::PositivityLoss {
                    iteration: iterations + picard,
                });
            }
            u = next;
            f = residual(op, spec, &u);
            res = sup(&f);
            history.push(res);
            if res < 0.5 * entry || res < tol {
                improved = true;
                break;
            }
        }
        if !improved && !positive_seen {
            return Err(Error::PositivityLoss {
                iteration: iterations + picard,
            });
        }
        if !improved || !res.is_finite() {
            return Err(Error::NonConvergence {
                iterations: iterations + picard,
                best_residual: best.min(res),
            });
        }
        best = best.min(res);
        iterations += 1;
    }
    let min_value = u.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_value = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut field = SolutionField::new(u, spec.alpha)?;
    field.residual_history = history;
    let report = SolveReport {
        converged: true,
        iterations,
        picard_iterations: picard,
        final_residual: res,
        min_value,
        max_value,
        yamabe_alpha_estimate: None,
        integral_bound_lhs: None,
        integral_bound_rhs: None,
    };
    Ok((field, report))
}

/// Constant c₀ with c₀^{p−1} equal to the mean of P_α1.
/// Constant c₀ with c₀^{p−1}·∫I_α1 = vol; exact when 1 is an eigenfunction.
pub fn initial_guess(spec: &ProblemSpec, chart: &DiscretizedManifold, kernel: &KernelMatrix) -> Result<Vec<f64>> {
    let op = DiscreteOperator::new(kernel, chart)?;
    initial_guess_with(spec, &op)
}

pub fn initial_guess_with(spec: &ProblemSpec, op: &DiscreteOperator) -> Result<Vec<f64>> {
    let i1 = op.apply_i(&vec![1.0; op.len()]);
    let vol: f64 = op.weights.iter().sum();
    let mass: f64 = i1.iter().zip(&op.weights).map(|(a, w)| a * w).sum();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::Domain(format!("integral of I1 is not positive ({mass})")));
    }
    Ok(vec![(vol / mass).powf(1.0 / (spec.p - 1.0)); op.len()])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YamabeOptions {
    pub random_starts: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Modes of W^{1/2}BW^{1/2} below this multiple of its most negative
    /// eigenvalue are treated as unresolved and excluded.
    pub noise_multiple: f64,
}

impl Default for YamabeOptions {
    fn default() -> Self {
        YamabeOptions {
            random_starts: 5,
            seed: 17,
            max_iter: 300,
            noise_multiple: 1.0,
        }
    }
}

/// Discrete quotient ∫φP_αφ / (∫φ^q)^{2/q}, q = 2n/(n−α).
pub fn rayleigh_quotient(op: &DiscreteOperator, spec: &ProblemSpec, phi: &[f64]) -> Result<f64> {
    let q = 2.0 * spec.n as f64 / (spec.n as f64 - spec.alpha);
    let pphi = op.apply_p(phi)?;
    let num: f64 = phi.iter().zip(&pphi).zip(&op.weights).map(|((a, b), w)| w * a * b).sum();
    let den: f64 = phi.iter().zip(&op.weights).map(|(a, w)| w * a.powf(q)).sum();
    Ok(num / den.powf(2.0 / q))
}

/// Minimizes the Rayleigh quotient over positive fields in the resolved
/// spectral subspace of I_α, from the constant start and seeded random starts.
pub fn yamabe_alpha(
    spec: &ProblemSpec,
    chart: &DiscretizedManifold,
    kernel: &KernelMatrix,
    opts: &YamabeOptions,
) -> Result<f64> {
    let op = DiscreteOperator::new(kernel, chart)?;
    yamabe_alpha_with(spec, &op, opts)
}

/// Eigenpairs (μ, V) of W^{1/2}BW^{1/2} above the noise level.
struct ResolvedBasis {
    mu: Vec<f64>,
    vectors: DMatrix<f64>,
}

fn resolved_basis(op: &DiscreteOperator, noise_multiple: f64) -> ResolvedBasis {
    let n = op.len();
    let k = op.kernel;
    let sw: Vec<f64> = op.weights.iter().map(|w| w.sqrt()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| {
        let mut b = 0.5 * (k.entries[(i, j)] + k.entries[(j, i)]);
        if i == j {
            b += k.diagonal_correction[i] / op.weights[i];
        }
        sw[i] * b * sw[j]
    });
    let eig = s.symmetric_eigen();
    let floor = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(-v)) * noise_multiple;
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > floor.max(0.0)).collect();
    ResolvedBasis {
        mu: keep.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors: eig.eigenvectors.select_columns(&keep),
    }
}

pub fn yamabe_alpha_with(spec: &ProblemSpec, op: &DiscreteOperator, opts: &YamabeOptions) -> Result<f64> {
    let n = op.len();
    let q = 2.0 * spec.n as f64 / (spec.n as f64 - spec.alpha);
    let basis = resolved_basis(op, opts.noise_multiple);
    if basis.mu.is_empty() {
        return Err(Error::IllConditioned { estimate: f64::INFINITY });
    }
    let sw: Vec<f64> = op.weights.iter().map(|w| w.sqrt()).collect();
    // φ = W^{−1/2}Vc, so ∫φPφ = Σ c²/μ
    let field = |c: &DVector<f64>| -> Vec<f64> {
        let g = &basis.vectors * c;
        g.iter().zip(&sw).map(|(a, b)| a / b).collect()
    };
    let coords = |phi: &[f64]| -> DVector<f64> {
        let g = DVector::from_iterator(n, phi.iter().zip(&sw).map(|(a, b)| a * b));
        basis.vectors.tr_mul(&g)
    };
    let evaluate = |c: &DVector<f64>| -> Option<(f64, Vec<f64>)> {
        let phi = field(c);
        if phi.iter().any(|v| !(*v > 0.0)) {
            return None;
        }
        let num: f64 = c.iter().zip(&basis.mu).map(|(a, m)| a * a / m).sum();
        let den: f64 = phi.iter().zip(&op.weights).map(|(a, w)| w * a.powf(q)).sum();
        Some((num / den.powf(2.0 / q), phi))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![vec![1.0; n]];
    for _ in 0..opts.random_starts {
        starts.push((0..n).map(|_| rng.gen_range(0.5..1.5)).collect());
    }
    let mut best = f64::INFINITY;
    for start in starts {
        let mut c = coords(&start);
        let Some((mut value, mut phi)) = evaluate(&c) else {
            continue;
        };
        let mut step = 0.5;
        for _ in 0..opts.max_iter {
            // μ-preconditioned gradient; its zeros solve φ = R·I_α(φ^{q−1}) on the subspace
            let den: f64 = phi.iter().zip(&op.weights).map(|(a, w)| w * a.powf(q)).sum();
            let num = value * den.powf(2.0 / q);
            let h = DVector::from_iterator(n, phi.iter().zip(&sw).map(|(a, s)| s * a.powf(q - 1.0)));
            let vh = basis.vectors.tr_mul(&h);
            let dir = DVector::from_iterator(
                c.len(),
                c.iter().zip(vh.iter()).zip(&basis.mu).map(|((ci, hi), m)| ci - num / den * m * hi),
            );
            let mut moved = false;
            for _ in 0..40 {
                let trial = &c - step * &dir;
                if let Some((tv, tphi)) = evaluate(&trial) {
                    if tv < value {
                        moved = value - tv > 1e-14 * value.abs();
                        c = trial;
                        phi = tphi;
                        value = tv;
                        step = (step * 2.0).min(1.0);
                        break;
                    }
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        best = best.min(value);
    }
    if !best.is_finite() {
        return Err(Error::NonConvergence {
            iterations: opts.max_iter,
            best_residual: f64::INFINITY,
        });
    }
    Ok(best)
}

/// (∫u^p dV, (max|P_α1|)^{(n+α)/(2α)}·vol).
pub fn integral_bound_check(
    spec: &ProblemSpec,
    chart: &DiscretizedManifold,
    kernel: &KernelMatrix,
    u: &SolutionField,
) -> Result<(f64, f64)> {
    let op = DiscreteOperator::new(kernel, chart)?;
    integral_bound_with(spec, &op, u)
}

pub fn integral_bound_with(spec: &ProblemSpec, op: &DiscreteOperator, u: &SolutionField) -> Result<(f64, f64)> {
    let p1 = op.apply_p(&vec![1.0; op.len()])?;
    let m = p1.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let vol: f64 = op.weights.iter().sum();
    let lhs: f64 = u.values.iter().zip(&op.weights).map(|(v, w)| w * v.powf(spec.p)).sum();
    let exponent = (spec.n as f64 + spec.alpha) / (2.0 * spec.alpha);
    Ok((lhs, m.powf(exponent) * vol))
}
