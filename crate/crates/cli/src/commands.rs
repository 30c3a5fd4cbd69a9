use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use lcf_core::analysis::{
    bubble_fit, continue_alpha, kernel_limit_gap, moving_plane_scan, rescale, ChartField, ContinuationOptions,
    FitOptions, FlatField, MovingPlaneReport, Reprojected, ScanOptions,
};
use lcf_core::geometry::{build_chart, DiscretizedManifold};
use lcf_core::kernel::{assemble_with, covariance_residual, ktilde, KernelMatrix};
use lcf_core::mobius::{GroupKind, KleinianGroup, MoebiusMap, Point};
use lcf_core::riesz::{frac_laplacian_periodic, riesz_periodic, PeriodicField, ProblemSpec};
use lcf_core::solver::{initial_guess, integral_bound_check, solve, yamabe_alpha};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Resolved;
use crate::CliError;

pub struct Outputs {
    dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(row).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }
}

/// Shortest round-trip form; scientific outside [1e−4, 1e15).
fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn coord_header(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

struct Setup {
    spec: ProblemSpec,
    chart: DiscretizedManifold,
    kernel: KernelMatrix,
}

fn group(r: &Resolved) -> Result<KleinianGroup, CliError> {
    Ok(r.group.build(r.config.n)?)
}

fn chart(r: &Resolved) -> Result<DiscretizedManifold, CliError> {
    Ok(build_chart(&group(r)?, r.config.resolution, r.config.n)?)
}

fn setup(r: &Resolved) -> Result<Setup, CliError> {
    let spec = ProblemSpec::with_tolerances(r.config.n, r.config.alpha, r.config.tolerances())?;
    let chart = chart(r)?;
    let kernel = assemble_with(&chart, &spec, &r.config.assembly())?;
    Ok(Setup { spec, chart, kernel })
}

fn kernel_block(k: &KernelMatrix) -> Value {
    json!({
        "cutoff": k.group_cutoff,
        "tail_bound": k.tail_bound,
        "tail_constant": k.tail_constant,
        "asymmetry": k.asymmetry(),
    })
}

fn chart_block(c: &DiscretizedManifold) -> Value {
    json!({
        "kind": c.kind,
        "resolution": c.resolution,
        "nodes": c.len(),
        "shape": c.shape,
        "volume": c.volume(),
    })
}

fn report(command: &str, r: &Resolved, st: Option<&Setup>) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(command));
    m.insert("config".into(), serde_json::to_value(r).unwrap_or(Value::Null));
    m.insert("chart".into(), st.map(|s| chart_block(&s.chart)).unwrap_or(Value::Null));
    m.insert("kernel".into(), st.map(|s| kernel_block(&s.kernel)).unwrap_or(Value::Null));
    m
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn solved(r: &Resolved, st: &Setup) -> Result<(lcf_core::geometry::SolutionField, lcf_core::solver::SolveReport), CliError> {
    let u0 = if r.config.solve.u0 == "guess" {
        initial_guess(&st.spec, &st.chart, &st.kernel)?
    } else {
        vec![1.0; st.chart.len()]
    };
    Ok(solve(&st.spec, &st.chart, &st.kernel, &u0, &r.config.solve_options())?)
}

pub fn run_solve(r: &Resolved, out: &mut Outputs) -> Result<(), CliError> {
    let st = setup(r)?;
    let (u, mut rep) = solved(r, &st)?;
    let (lhs, rhs) = integral_bound_check(&st.spec, &st.chart, &st.kernel, &u)?;
    rep.integral_bound_lhs = Some(lhs);
    rep.integral_bound_rhs = Some(rhs);
    if r.config.solve.yamabe {
        rep.yamabe_alpha_estimate = Some(yamabe_alpha(&st.spec, &st.chart, &st.kernel, &r.config.yamabe_options())?);
    }
    let n = st.chart.n;
    let mut cols = header(&["node"]);
    cols.extend(coord_header(n));
    cols.extend(header(&["eta_hat", "value"]));
    let rows: Vec<Vec<String>> = (0..st.chart.len())
        .map(|p| {
            let mut row = vec![p.to_string()];
            row.extend(st.chart.nodes[p].iter().map(|v| num(*v)));
            row.push(num(st.chart.eta_hat[p]));
            row.push(num(u.values[p]));
            row
        })
        .collect();
    out.csv("solution.csv", &cols, &rows)?;
    let mean = u.values.iter().sum::<f64>() / u.values.len() as f64;
    let mut m = report("solve", r, Some(&st));
    m.insert("spec".into(), to_value(&st.spec));
    m.insert("report".into(), to_value(&rep));
    m.insert(
        "solution".into(),
        json!({"min": rep.min_value, "max": rep.max_value, "mean": mean, "residual_history": u.residual_history}),
    );
    out.json("solve.json", &Value::Object(m))
}

pub fn run_kernel(r: &Resolved, out: &mut Outputs) -> Result<(), CliError> {
    let st = setup(r)?;
    let n = st.chart.n;
    let len = st.chart.len();
    let mut cols = header(&["node"]);
    cols.extend(coord_header(n));
    cols.extend(header(&["weight", "eta_hat"]));
    let rows: Vec<Vec<String>> = (0..len)
        .map(|p| {
            let mut row = vec![p.to_string()];
            row.extend(st.chart.nodes[p].iter().map(|v| num(*v)));
            row.push(num(st.chart.flat_weights[p]));
            row.push(num(st.chart.eta_hat[p]));
            row
        })
        .collect();
    out.csv("chart.csv", &cols, &rows)?;
    let mut cols = header(&["row", "diagonal_correction"]);
    cols.extend((0..len).map(|q| q.to_string()));
    let rows: Vec<Vec<String>> = (0..len)
        .map(|p| {
            let mut row = vec![p.to_string(), num(st.kernel.diagonal_correction[p])];
            row.extend((0..len).map(|q| num(st.kernel.entries[(p, q)])));
            row
        })
        .collect();
    out.csv("kernel.csv", &cols, &rows)?;
    let mut m = report("kernel", r, Some(&st));
    m.insert(
        "header".into(),
        json!({"n": n, "alpha": st.spec.alpha, "cutoff": st.kernel.group_cutoff, "tail_bound": st.kernel.tail_bound, "nodes": len}),
    );
    out.json("kernel.json", &Value::Object(m))
}

pub fn run_poincare(r: &Resolved, out: &mut Outputs) -> Result<(), CliError> {
    let cfg = &r.config;
    let mut g = group(r)?;
    let cutoff = cfg.poincare.cutoff;
    if g.kind == GroupKind::General {
        g.enumerate(cutoff.max(4))?;
    }
    let s = cfg.poincare.s.unwrap_or((cfg.n as f64 - cfg.alpha) / 2.0);
    let x = cfg.poincare.point.clone().unwrap_or_else(|| g.base_point.clone());
    let sums = (1..=cutoff)
        .map(|c| g.poincare_partial_sum(s, &x, c))
        .collect::<lcf_core::Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = sums
        .iter()
        .enumerate()
        .map(|(i, p)| vec![(i + 1).to_string(), num(p.sum), num(p.tail_bound)])
        .collect();
    out.csv("poincare.csv", &header(&["cutoff", "sum", "tail_bound"]), &rows)?;
    let delta = g.exponent_estimate()?;
    // the kernel block is included whenever the group admits a chart
    let st = if g.kind == GroupKind::General { None } else { Some(setup(r)?) };
    let mut m = report("poincare", r, st.as_ref());
    let last = sums.last().copied();
    m.insert(
        "poincare".into(),
        json!({
            "s": s,
            "point": x,
            "cutoff": cutoff,
            "sum": last.map(|p| p.sum),
            "tail_bound": last.map(|p| p.tail_bound),
            "exponent_estimate": delta,
            "alpha_limit": cfg.n as f64 - 2.0 * delta,
        }),
    );
    out.json("poincare.json", &Value::Object(m))
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    samples: usize,
    max_residual: f64,
    tolerance: f64,
    passed: bool,
}

fn band_limited(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> PeriodicField {
    let d = shape.len();
    let modes: Vec<(Vec<f64>, f64, f64)> = (0..8)
        .map(|_| {
            let k: Vec<f64> = (0..d).map(|_| rng.gen_range(-6i32..=6) as f64).collect();
            (k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let mut f = PeriodicField::from_fn(shape, vec![2.0 * PI; d], |x| {
        modes
            .iter()
            .map(|(k, a, ph)| a * (k.iter().zip(x).map(|(ki, xi)| ki * xi).sum::<f64>() + ph).cos())
            .sum()
    });
    let mean = f.data.iter().sum::<f64>() / f.data.len() as f64;
    f.data.iter_mut().for_each(|v| *v -= mean);
    f
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn run_verify(r: &Resolved, out: &mut Outputs) -> Result<(), CliError> {
    let cfg = &r.config;
    let n = cfg.n;
    let alpha = cfg.alpha;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.verify.seed);
    let mut checks = Vec::new();

    for (name, shape) in [("riesz_inverse_2d", vec![64, 64]), ("riesz_inverse_3d", vec![32, 32, 32])] {
        let mut worst = 0.0f64;
        for _ in 0..cfg.verify.fields {
            let f = band_limited(&mut rng, shape.clone());
            let back = riesz_periodic(&frac_laplacian_periodic(&f, alpha), n, alpha)?;
            let err = back.data.iter().zip(&f.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(err / f.sup_norm());
        }
        checks.push((name, cfg.verify.fields, worst, 1e-6));
    }

    let mut worst = [0.0f64; 4];
    let mut count = 0;
    while count < cfg.verify.samples {
        let g = MoebiusMap::random(&mut rng, n);
        let h = MoebiusMap::random(&mut rng, n);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (Ok(gx), Ok(gy), Ok(dx), Ok(dy), Ok(sx), Ok(hx), Ok(dh), Ok(dgh)) = (
            g.apply(&x),
            g.apply(&y),
            g.deriv_euclidean(&x),
            g.deriv_euclidean(&y),
            g.deriv_spherical(&x),
            h.apply(&x),
            h.deriv_spherical(&x),
            g.compose(&h).deriv_spherical(&x),
        ) else {
            continue;
        };
        let (Ok(dg_hx), Ok(back)) = (g.deriv_spherical(&hx), g.inverse().deriv_spherical(&gx)) else {
            continue;
        };
        count += 1;
        let lhs = dist(&gx, &gy);
        let rhs = (dx * dy).sqrt() * dist(&x, &y);
        worst[0] = worst[0].max((lhs - rhs).abs() / lhs.max(rhs));
        let expected = (1.0 + norm2(&x)) / (1.0 + norm2(&gx)) * dx;
        worst[1] = worst[1].max((sx - expected).abs() / expected);
        worst[2] = worst[2].max((dgh - dg_hx * dh).abs() / dgh);
        worst[3] = worst[3].max((back * sx - 1.0).abs());
    }
    for (name, w) in ["distance_identity", "spherical_derivative", "chain_rule", "inverse_rule"].iter().zip(worst) {
        checks.push((name, count, w, 1e-10));
    }

    let spec = ProblemSpec::with_tolerances(n, alpha, cfg.tolerances())?;
    let mut worst = 0.0f64;
    let mut count = 0;
    while count < cfg.verify.samples {
        let g = MoebiusMap::random(&mut rng, n);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if let (Ok(res), Ok(k)) = (covariance_residual(&g, &x, &y, &spec), ktilde(&x, &y, &spec)) {
            worst = worst.max(res / k.max(1.0));
            count += 1;
        }
    }
    checks.push(("kernel_covariance", count, worst, 1e-10));

    let st = setup(r)?;
    checks.push(("kernel_symmetry", 1, st.kernel.asymmetry(), 1e-10));
    checks.push(("kernel_tail", 1, st.kernel.tail_bound, cfg.tolerances.tail_tol));

    let checks: Vec<Check> = checks
        .into_iter()
        .map(|(name, samples, max_residual, tolerance)| Check {
            name,
            samples,
            max_residual,
            tolerance,
            passed: max_residual < tolerance || (name == "kernel_tail" && max_residual <= tolerance),
        })
        .collect();
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| vec![c.name.to_string(), c.samples.to_string(), num(c.max_residual), num(c.tolerance), c.passed.to_string()])
        .collect();
    out.csv("verify.csv", &header(&["check", "samples", "max_residual", "tolerance", "passed"]), &rows)?;
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.to_string()).collect();
    let mut m = report("verify", r, Some(&st));
    m.insert("checks".into(), to_value(&checks));
    m.insert("passed".into(), json!(failed.is_empty()));
    out.json("verify.json", &Value::Object(m))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failed))
    }
}

fn scan_rows(rep: &MovingPlaneReport) -> Vec<Vec<String>> {
    (0..rep.lambdas.len())
        .map(|i| {
            vec![
                num(rep.lambdas[i]),
                num(rep.clearance[i]),
                rep.skipped[i].to_string(),
                num(rep.min_gap[i]),
                num(rep.sigma_minus_measure[i]),
                num(rep.sigma_minus_above_floor[i]),
            ]
        })
        .collect()
}

pub fn run_moving_plane(r: &Resolved, out: &mut Outputs) -> Result<(), CliError> {
    let cfg = &r.config;
    let st = setup(r)?;
    let (u, _) = solved(r, &st)?;
    let field = ChartField::new(&st.chart, &u.values, cfg.alpha)?;
    let limit = field.limit_points();
    let mp = &cfg.moving_plane;
    let opts = ScanOptions {
        axis: mp.axis,
        half_width: mp.half_width,
        depth: mp.depth,
        samples: mp.samples,
        floor: mp.floor,
        derivative_step: ScanOptions::default().derivative_step,
        center: mp.center.clone(),
    };
    // with ∞ in the limit set the scan needs another projection base point
    let base = mp.base_point.clone().or_else(|| {
        limit.contains(&Point::Infinity).then(|| {
            let mut c = vec![0.0; cfg.n];
            c[0] = 0.5;
            c
        })
    });
    let (rep, limit) = match &base {
        Some(c) => {
            let moved = Reprojected::inversion(field, c, cfg.alpha)?;
            let limit = moved.map_points(&limit);
            (scan(&moved, &mp.lambdas, &limit, &opts)?, limit)
        }
        None => (scan(&field, &mp.lambdas, &limit, &opts)?, limit),
    };
    out.csv(
        "moving_plane.csv",
        &header(&["lambda", "clearance", "skipped", "min_gap", "sigma_minus_measure", "sigma_minus_above_floor"]),
        &scan_rows(&rep),
    )?;
    let violations: Vec<f64> = (0..rep.lambdas.len())
        .filter(|&i| !rep.skipped[i] && rep.min_gap[i] < -rep.floor)
        .map(|i| rep.lambdas[i])
        .collect();
    let mut m = report("moving-plane", r, Some(&st));
    m.insert("base_point".into(), json!(base));
    m.insert("limit_points".into(), to_value(&limit));
    m.insert("scan".into(), to_value(&rep));
    m.insert("violations".into(), json!(violations));
    out.json("moving_plane.json", &Value::Object(m))
}

fn scan<F: FlatField>(field: &F, lambdas: &[f64], limit: &[Point], opts: &ScanOptions) -> Result<MovingPlaneReport, CliError> {
    Ok(moving_plane_scan(field, lambdas, limit, opts)?)
}

pub fn run_rescale(r: &Resolved, out: &mut Outputs) -> Result<(), CliError> {
    let cfg = &r.config;
    let st = setup(r)?;
    let (u, _) = solved(r, &st)?;
    let rs = &cfg.rescale;
    let p0 = match rs.node {
        Some(p) => p,
        None => (0..u.values.len()).fold(0, |a, i| if u.values[i] > u.values[a] { i } else { a }),
    };
    let n = st.chart.n;
    let mut cols = header(&["lambda", "point"]);
    cols.extend(coord_header(n));
    cols.push("value".into());
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for &lambda in &rs.lambdas {
        let field = rescale(&u, &st.chart, p0, lambda, rs.window, rs.per_radius)?;
        for (i, (x, v)) in field.points.iter().zip(&field.values).enumerate() {
            let mut row = vec![num(lambda), i.to_string()];
            row.extend(x.iter().map(|c| num(*c)));
            row.push(num(*v));
            rows.push(row);
        }
        let gap = kernel_limit_gap(&st.spec, &st.chart, st.kernel.group_cutoff, p0, lambda, rs.big_lambda, rs.per_radius);
        let fit = if rs.fit {
            Some(bubble_fit(&field.points, &field.values, &st.spec, &FitOptions::default()))
        } else {
            None
        };
        entries.push(json!({
            "lambda": lambda,
            "radius": field.radius,
            "requested_radius": field.requested_radius,
            "clipped": field.clipped,
            "value_at_origin": field.value_at_origin(),
            "kernel_gap": gap.as_ref().ok(),
            "kernel_gap_error": gap.as_ref().err().map(|e| e.to_string()),
            "fit": fit.as_ref().and_then(|f| f.as_ref().ok()).map(to_value),
            "fit_error": fit.as_ref().and_then(|f| f.as_ref().err()).map(|e| e.to_string()),
        }));
    }
    out.csv("rescale.csv", &cols, &rows)?;
    let gaps: Vec<Option<f64>> = entries.iter().map(|e| e["kernel_gap"].as_f64()).collect();
    let monotone = gaps.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b < a));
    let mut m = report("rescale", r, Some(&st));
    m.insert("node".into(), json!(p0));
    m.insert("node_value".into(), json!(u.values[p0]));
    m.insert("big_lambda".into(), json!(rs.big_lambda));
    m.insert("levels".into(), Value::Array(entries));
    m.insert("kernel_gap_decreasing".into(), json!(monotone));
    out.json("rescale.json", &Value::Object(m))
}

pub fn run_continue(r: &Resolved, out: &mut Outputs) -> Result<(), CliError> {
    let cfg = &r.config;
    let chart = chart(r)?;
    let opts = ContinuationOptions {
        tolerances: cfg.tolerances(),
        solve: cfg.solve_options(),
        assembly: cfg.assembly(),
        bound: cfg.continuation.bound,
        yamabe: cfg.continuation.yamabe.then(|| cfg.yamabe_options()),
    };
    let alpha_end = cfg.alpha_range[1];
    let path = continue_alpha(&chart, alpha_end, cfg.continuation.step, &opts)?;
    let rows: Vec<Vec<String>> = (0..path.alphas.len())
        .map(|i| {
            vec![
                num(path.alphas[i]),
                num(path.sup_norms[i]),
                num(path.inf_values[i]),
                num(path.residuals[i]),
                path.yamabe_alpha[i].map(num).unwrap_or_default(),
            ]
        })
        .collect();
    out.csv(
        "continuation.csv",
        &header(&["alpha", "sup_norm", "inf_value", "residual", "yamabe_alpha"]),
        &rows,
    )?;
    let mut m = report("continue", r, None);
    m.insert("chart".into(), chart_block(&chart));
    m.insert(
        "kernel".into(),
        json!({
            "tail_bound": path.tail_bounds.iter().cloned().fold(0.0, f64::max),
            "tail_bounds": path.tail_bounds,
        }),
    );
    m.insert(
        "path".into(),
        json!({
            "alphas": path.alphas,
            "sup_norms": path.sup_norms,
            "inf_values": path.inf_values,
            "residuals": path.residuals,
            "iterations": path.iterations,
            "yamabe_alpha": path.yamabe_alpha,
            "integral_bound": path.integral_bound,
            "bound": path.bound,
            "compact": path.compact(),
        }),
    );
    out.json("continuation.json", &Value::Object(m))
}
