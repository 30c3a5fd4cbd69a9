mod common;

use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{hopf_chart, hopf_oracle, hopf_reduced_constant, sphere_chart, sup_diff};
use lcf_core::analysis::{
    continue_alpha, kernel_limit_gap, moving_plane_scan, ChartField, ContinuationOptions, Reprojected, ScanOptions,
};
use lcf_core::kernel::{assemble, covariance_residual};
use lcf_core::mobius::{exponent_estimate, poincare_partial_sum, KleinianGroup, MoebiusMap};
use lcf_core::riesz::{
    bubble, frac_laplacian_periodic, riesz_apply_flat_at, riesz_periodic, FlatGrid, PeriodicField, ProblemSpec,
    SingularCorrection,
};
use lcf_core::solver::{integral_bound_check, solve, yamabe_alpha, SolveOptions, YamabeOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    check(t < limit, format!("runtime {t:.1?} exceeds {limit:?}"))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|t| t * t).sum::<f64>().sqrt()
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn riesz_inverse() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    for shape in [vec![64, 64], vec![32, 32, 32]] {
        for alpha in [2.0, 2.5, 3.0 - 1e-3] {
            for _ in 0..20 {
                let d = shape.len();
                let modes: Vec<(Vec<f64>, f64, f64)> = (0..8)
                    .map(|_| {
                        let k: Vec<f64> = (0..d).map(|_| rng.gen_range(-6i32..=6) as f64).collect();
                        (k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI))
                    })
                    .collect();
                let mut f = PeriodicField::from_fn(shape.clone(), vec![2.0 * PI; d], |x| {
                    modes
                        .iter()
                        .map(|(k, a, ph)| a * (k.iter().zip(x).map(|(ki, xi)| ki * xi).sum::<f64>() + ph).cos())
                        .sum()
                });
                let mean = f.data.iter().sum::<f64>() / f.data.len() as f64;
                f.data.iter_mut().for_each(|v| *v -= mean);
                let back = riesz_periodic(&frac_laplacian_periodic(&f, alpha), 3, alpha).map_err(|e| e.to_string())?;
                worst = worst.max(sup_diff(&back.data, &f.data) / f.sup_norm());
            }
        }
    }
    check(worst < 1e-6, format!("relative sup error {worst:e}"))?;
    within(Duration::from_secs(30), start)?;
    Ok(format!("120 fields, worst relative error {worst:.2e}"))
}

fn moebius_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = [0.0f64; 4];
    let mut count = 0;
    while count < 1000 {
        let g = MoebiusMap::random(&mut rng, 3);
        let h = MoebiusMap::random(&mut rng, 3);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
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
        let Ok(dg_at_hx) = g.deriv_spherical(&hx) else {
            continue;
        };
        count += 1;
        let lhs = dist(&gx, &gy);
        let rhs = (dx * dy).sqrt() * dist(&x, &y);
        worst[0] = worst[0].max((lhs - rhs).abs() / lhs.max(rhs));
        let expected = (1.0 + norm(&x).powi(2)) / (1.0 + norm(&gx).powi(2)) * dx;
        worst[1] = worst[1].max((sx - expected).abs() / expected);
        worst[2] = worst[2].max((dgh - dg_at_hx * dh).abs() / dgh);
        let back = g.inverse().deriv_spherical(&gx).map_err(|e| e.to_string())?;
        worst[3] = worst[3].max((back * sx - 1.0).abs());
    }
    check(worst.iter().all(|w| *w < 1e-10), format!("residuals {worst:?}"))?;
    Ok(format!(
        "distance {:.1e}, spherical derivative {:.1e}, chain {:.1e}, inverse {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

fn kernel_covariance() -> Outcome {
    let spec = ProblemSpec::new(3, 2.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut count = 0;
    while count < 100 {
        let g = MoebiusMap::random(&mut rng, 3);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if let Ok(r) = covariance_residual(&g, &x, &y, &spec) {
            worst = worst.max(r);
            count += 1;
        }
    }
    check(worst < 1e-10, format!("covariance residual {worst:e}"))?;
    let k = assemble(&hopf_chart(10), &spec).map_err(|e| e.to_string())?;
    let asym = k.asymmetry();
    check(asym < 1e-10, format!("asymmetry {asym:e}"))?;
    check(
        k.tail_bound < 1e-9 && k.group_cutoff <= 60,
        format!("tail {:e} at cutoff {}", k.tail_bound, k.group_cutoff),
    )?;
    Ok(format!(
        "covariance {worst:.1e}, asymmetry {asym:.1e}, tail {:.1e} at cutoff {}",
        k.tail_bound, k.group_cutoff
    ))
}

fn poincare_series() -> Outcome {
    let g = KleinianGroup::dilation(3, 2.0, None).map_err(|e| e.to_string())?;
    let s = 0.5;
    let mut worst = 0.0f64;
    for x in [[1.0, 0.0, 0.0], [0.3, -0.7, 1.1], [0.0, 0.0, 1.9]] {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        for cutoff in [1usize, 5, 20, 60, 200] {
            let direct: f64 = (1..=cutoff as i32)
                .flat_map(|m| [m, -m])
                .map(|m| {
                    let k = 2f64.powi(m);
                    (k * (1.0 + r2) / (1.0 + k * k * r2)).powf(s)
                })
                .sum();
            let r = poincare_partial_sum(&g, s, &x, cutoff).map_err(|e| e.to_string())?;
            worst = worst.max((r.sum - direct).abs());
        }
    }
    let delta = exponent_estimate(&g).map_err(|e| e.to_string())?;
    check(worst < 1e-12, format!("partial sum deviation {worst:e}"))?;
    check(delta < 0.1, format!("exponent estimate {delta}"))?;
    Ok(format!("partial sums within {worst:.1e}, exponent estimate {delta:.3}"))
}

fn sphere_constant_solution() -> Outcome {
    let start = Instant::now();
    let spec = ProblemSpec::new(3, 2.0).map_err(|e| e.to_string())?;
    let chart = sphere_chart(9);
    let k = assemble(&chart, &spec).map_err(|e| e.to_string())?;
    let (u, rep) = solve(&spec, &chart, &k, &vec![1.0; chart.len()], &SolveOptions::default()).map_err(|e| e.to_string())?;
    let target = 0.75f64.powf(0.25);
    let err = u.values.iter().map(|v| (v / target - 1.0).abs()).fold(0.0, f64::max);
    check(rep.converged && rep.final_residual < spec.tolerances.solve_tol, format!("residual {:e}", rep.final_residual))?;
    check(err < 1e-3, format!("relative error {err:e}"))?;
    within(Duration::from_secs(120), start)?;
    Ok(format!(
        "{} nodes, relative error {err:.1e}, residual {:.1e}, {:.1?}",
        chart.len(),
        rep.final_residual,
        start.elapsed()
    ))
}

fn bubble_residual() -> Outcome {
    let spec = ProblemSpec::new(3, 2.0).map_err(|e| e.to_string())?;
    let b = bubble(&spec, 1.0, &[0.0; 3]).map_err(|e| e.to_string())?;
    let mut res = Vec::new();
    for (h, half_width) in [(0.5, 3.0), (0.25, 6.0), (0.125, 12.0)] {
        let g = FlatGrid::centred(3, half_width, h, |x| b.eval(x).powf(spec.p));
        let m = (g.shape[0] - 1) / 2;
        let nodes: Vec<usize> = [0.0, 0.5, 1.0]
            .iter()
            .map(|x: &f64| g.flat_index(&[m + (x / h).round() as usize, m, m]))
            .collect();
        let out = riesz_apply_flat_at(&g, 2.0, SingularCorrection::default(), &nodes).map_err(|e| e.to_string())?;
        res.push(
            nodes
                .iter()
                .zip(&out)
                .map(|(&q, v)| (b.eval(&g.point(q)) - v).abs())
                .fold(0.0, f64::max),
        );
    }
    let orders: Vec<f64> = res.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    check(orders.iter().all(|o| *o >= 2.0), format!("residuals {res:?}, orders {orders:?}"))?;
    Ok(format!("residuals {:.1e} {:.1e} {:.1e}, orders {:.2} {:.2}", res[0], res[1], res[2], orders[0], orders[1]))
}

fn hopf_manifold() -> Outcome {
    let spec = ProblemSpec::new(3, 2.0).map_err(|e| e.to_string())?;
    let chart = hopf_chart(10);
    let k = assemble(&chart, &spec).map_err(|e| e.to_string())?;
    let (u, rep) = solve(&spec, &chart, &k, &vec![1.0; chart.len()], &SolveOptions::default()).map_err(|e| e.to_string())?;
    check(
        rep.converged && rep.final_residual < spec.tolerances.solve_tol && rep.min_value > 0.0,
        format!("residual {:e}, min {}", rep.final_residual, rep.min_value),
    )?;
    let perm = chart.deck_permutation().ok_or("chart has no deck permutation")?;
    let deck = (0..chart.len()).map(|p| (u.values[perm[p]] - u.values[p]).abs()).fold(0.0, f64::max);
    check(deck < 1e-6, format!("deck asymmetry {deck:e}"))?;
    let (lhs, rhs) = integral_bound_check(&spec, &chart, &k, &u).map_err(|e| e.to_string())?;
    check(lhs <= rhs * (1.0 + spec.tolerances.quad_tol), format!("integral bound {lhs} > {rhs}"))?;
    let y = yamabe_alpha(&spec, &chart, &k, &YamabeOptions::default()).map_err(|e| e.to_string())?;
    check(y > 0.0, format!("yamabe {y}"))?;
    let q = hopf_reduced_constant(2.0, 2.0, 4000);
    let closed = 0.25f64.powf(0.25);
    check((q / closed - 1.0).abs() < 1e-6, format!("reduced constant {q} vs {closed}"))?;
    let err = chart
        .nodes
        .iter()
        .zip(&u.values)
        .map(|(x, v)| (v / hopf_oracle(2.0, q, x) - 1.0).abs())
        .fold(0.0, f64::max);
    check(err < 1e-3, format!("oracle deviation {err:e}"))?;
    Ok(format!(
        "{} nodes, deck {deck:.1e}, bound {lhs:.3} <= {rhs:.3}, Y = {y:.4}, oracle {err:.1e}",
        chart.len()
    ))
}

fn moving_plane() -> Outcome {
    let spec = ProblemSpec::new(3, 2.0).map_err(|e| e.to_string())?;
    let chart = hopf_chart(10);
    let k = assemble(&chart, &spec).map_err(|e| e.to_string())?;
    let (u, _) = solve(&spec, &chart, &k, &vec![1.0; chart.len()], &SolveOptions::default()).map_err(|e| e.to_string())?;
    let field = ChartField::new(&chart, &u.values, 2.0).map_err(|e| e.to_string())?;
    let limit = field.limit_points();
    let moved = Reprojected::inversion(field, &[0.5, 0.0, 0.0], 2.0).map_err(|e| e.to_string())?;
    let limit = moved.map_points(&limit);
    let lambdas: Vec<f64> = (0..12).map(|i| 1.2 - 0.1 * i as f64).collect();
    let opts = ScanOptions::default();
    let rep = moving_plane_scan(&moved, &lambdas, &limit, &opts).map_err(|e| e.to_string())?;
    let mut scanned = 0;
    let mut worst = f64::INFINITY;
    for i in 0..lambdas.len() {
        if rep.skipped[i] || !(rep.clearance[i] > 0.0) {
            continue;
        }
        scanned += 1;
        worst = worst.min(rep.min_gap[i]);
        check(
            rep.min_gap[i] >= -1e-3 && rep.sigma_minus_above_floor[i] == 0.0,
            format!("λ = {}: gap {}, measure {}", lambdas[i], rep.min_gap[i], rep.sigma_minus_above_floor[i]),
        )?;
    }
    check(scanned > 0, "no λ with positive clearance".into())?;
    let off = bubble(&spec, 0.8, &[0.0, 0.0, -0.7]).map_err(|e| e.to_string())?;
    let brep = moving_plane_scan(&off, &[0.0], &[], &opts).map_err(|e| e.to_string())?;
    check(brep.boundary_derivative < 0.0, format!("boundary derivative {}", brep.boundary_derivative))?;
    Ok(format!(
        "{scanned} planes, min gap {worst:.2e}, bubble boundary derivative {:.3}",
        brep.boundary_derivative
    ))
}

fn kernel_limit() -> Outcome {
    let spec = ProblemSpec::new(3, 2.0).map_err(|e| e.to_string())?;
    let chart = hopf_chart(10);
    let k = assemble(&chart, &spec).map_err(|e| e.to_string())?;
    let (u, _) = solve(&spec, &chart, &k, &vec![1.0; chart.len()], &SolveOptions::default()).map_err(|e| e.to_string())?;
    let p0 = u.values.iter().enumerate().fold(0, |a, (i, v)| if *v > u.values[a] { i } else { a });
    let gaps = [2.0, 4.0, 8.0]
        .iter()
        .map(|&l| kernel_limit_gap(&spec, &chart, k.group_cutoff, p0, l, 2.0, 3))
        .collect::<lcf_core::Result<Vec<f64>>>()
        .map_err(|e| e.to_string())?;
    check(gaps[0] > gaps[1] && gaps[1] > gaps[2], format!("gaps {gaps:?}"))?;
    Ok(format!("gaps {:.2e} {:.2e} {:.2e}", gaps[0], gaps[1], gaps[2]))
}

fn continuation() -> Outcome {
    let start = Instant::now();
    let opts = ContinuationOptions::default();
    let mut parts = Vec::new();
    for (name, chart) in [("sphere", sphere_chart(9)), ("hopf", hopf_chart(10))] {
        let coarse = continue_alpha(&chart, 2.8, 0.1, &opts).map_err(|e| format!("{name}: {e}"))?;
        let fine = continue_alpha(&chart, 2.8, 0.05, &opts).map_err(|e| format!("{name}: {e}"))?;
        for path in [&coarse, &fine] {
            check(
                path.residuals.iter().all(|r| *r < opts.tolerances.solve_tol),
                format!("{name}: unconverged step"),
            )?;
            check(path.compact(), format!("{name}: bound {} exceeded", path.bound))?;
        }
        let a = &coarse.solutions.last().ok_or("empty path")?.values;
        let b = &fine.solutions.last().ok_or("empty path")?.values;
        let drift = sup_diff(a, b);
        check(drift < 10.0 * opts.tolerances.solve_tol, format!("{name}: endpoint drift {drift:e}"))?;
        let sup = coarse.sup_norms.iter().chain(&fine.sup_norms).fold(0.0f64, |m, v| m.max(*v));
        let inv = coarse.inf_values.iter().chain(&fine.inf_values).fold(0.0f64, |m, v| m.max(1.0 / v));
        parts.push(format!("{name}: sup {sup:.3}, 1/inf {inv:.3}, drift {drift:.1e}"));
    }
    within(Duration::from_secs(900), start)?;
    Ok(format!("{}, {:.1?}", parts.join("; "), start.elapsed()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("riesz inverse on periodic grids", riesz_inverse),
        ("moebius identities", moebius_identities),
        ("kernel covariance, symmetry and tail", kernel_covariance),
        ("poincare series", poincare_series),
        ("sphere constant solution", sphere_constant_solution),
        ("bubble residual order", bubble_residual),
        ("hopf manifold solution", hopf_manifold),
        ("moving plane", moving_plane),
        ("kernel limit under rescaling", kernel_limit),
        ("alpha continuation", continuation),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let t = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{t:.1?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{t:.1?}]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
