use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DiscretizedManifold, SolutionField};
use crate::kernel::{assemble_with, AssemblyOptions};
use crate::riesz::{ProblemSpec, Tolerances};
use crate::solver::{initial_guess_with, integral_bound_with, solve_with, yamabe_alpha_with, DiscreteOperator, SolveOptions, YamabeOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationOptions {
    pub tolerances: Tolerances,
    pub solve: SolveOptions,
    pub assembly: AssemblyOptions,
    /// Λ: every step must satisfy sup u ≤ Λ and 1/inf u ≤ Λ.
    pub bound: f64,
    /// Also estimate Y_α at each step.
    pub yamabe: Option<YamabeOptions>,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            tolerances: Tolerances::default(),
            solve: SolveOptions::default(),
            assembly: AssemblyOptions::default(),
            bound: 100.0,
            yamabe: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuationPath {
    pub alphas: Vec<f64>,
    pub solutions: Vec<SolutionField>,
    pub sup_norms: Vec<f64>,
    pub inf_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    pub yamabe_alpha: Vec<Option<f64>>,
    pub integral_bound: Vec<(f64, f64)>,
    pub tail_bounds: Vec<f64>,
    pub bound: f64,
}

impl ContinuationPath {
    /// All steps stayed within Λ.
    pub fn compact(&self) -> bool {
        self.sup_norms
            .iter()
            .zip(&self.inf_values)
            .all(|(s, i)| *s <= self.bound && 1.0 / i <= self.bound)
    }
}

/// 2, 2 + step, …, with the last step shortened to land on `alpha_end`.
pub fn alpha_grid(alpha_start: f64, alpha_end: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut i = 0usize;
    loop {
        let a = alpha_start + i as f64 * step;
        if a >= alpha_end - 1e-9 * step {
            break;
        }
        out.push(a);
        i += 1;
    }
    out.push(alpha_end);
    out
}

/// Solves along α ∈ [2, α₀], warm-starting each step from the previous one.
pub fn continue_alpha(
    chart: &DiscretizedManifold,
    alpha_end: f64,
    step: f64,
    opts: &ContinuationOptions,
) -> Result<ContinuationPath> {
    let n = chart.n;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Domain(format!("step must be positive, got {step}")));
    }
    let delta = chart.group.exponent_estimate()?;
    if !(alpha_end >= 2.0 && alpha_end < n as f64 - 2.0 * delta) {
        return Err(Error::Domain(format!(
            "alpha range end {alpha_end} must lie in [2, {}) for exponent estimate {delta}",
            n as f64 - 2.0 * delta
        )));
    }
    let mut path = ContinuationPath {
        alphas: Vec::new(),
        solutions: Vec::new(),
        sup_norms: Vec::new(),
        inf_values: Vec::new(),
        residuals: Vec::new(),
        iterations: Vec::new(),
        yamabe_alpha: Vec::new(),
        integral_bound: Vec::new(),
        tail_bounds: Vec::new(),
        bound: opts.bound,
    };
    let mut previous: Option<Vec<f64>> = None;
    for alpha in alpha_grid(2.0, alpha_end, step) {
        let last_good = path.alphas.last().copied();
        let fail = |source: Error| Error::ContinuationFailure {
            alpha,
            last_good,
            source: Box::new(source),
        };
        let spec = ProblemSpec::with_tolerances(n, alpha, opts.tolerances).map_err(fail)?;
        let kernel = assemble_with(chart, &spec, &opts.assembly).map_err(fail)?;
        let op = DiscreteOperator::new(&kernel, chart).map_err(fail)?;
        let u0 = match previous.take() {
            Some(u) => u,
            None => initial_guess_with(&spec, &op).map_err(fail)?,
        };
        let (u, report) = solve_with(&spec, &op, &u0, &opts.solve).map_err(fail)?;
        let sup = report.max_value;
        let inf = report.min_value;
        if !(sup <= opts.bound && 1.0 / inf <= opts.bound) {
            return Err(Error::BoundViolation {
                alpha,
                sup_norm: sup,
                inf_value: inf,
                bound: opts.bound,
            });
        }
        let lemma = integral_bound_with(&spec, &op, &u).map_err(fail)?;
        let yamabe = match &opts.yamabe {
            Some(y) => Some(yamabe_alpha_with(&spec, &op, y).map_err(fail)?),
            None => None,
        };
        previous = Some(u.values.clone());
        path.alphas.push(alpha);
        path.sup_norms.push(sup);
        path.inf_values.push(inf);
        path.residuals.push(report.final_residual);
        path.iterations.push(report.iterations);
        path.yamabe_alpha.push(yamabe);
        path.integral_bound.push(lemma);
        path.tail_bounds.push(kernel.tail_bound);
        path.solutions.push(u);
    }
    Ok(path)
}
