mod common;

use std::f64::consts::PI;

use approx::assert_relative_eq;
use common::{hopf_chart, hopf_group, sphere_chart};
use lcf_core::geometry::{
    build_chart, chordal_distance, conformal_factor, inverse_stereographic, pushdown, stereographic, unfold,
    ChartInterpolant, ChartKind, SolutionField,
};
use lcf_core::kernel::assemble;
use lcf_core::mobius::{KleinianGroup, MoebiusMap};
use lcf_core::riesz::ProblemSpec;
use lcf_core::solver::{flat_residual, residual, DiscreteOperator};
use lcf_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|t| t * t).sum::<f64>().sqrt()
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Round volume of {1 ≤ |x| < 2}: 4π∫₀^{ln 2} sech³t dt.
fn shell_volume() -> f64 {
    let t = 2f64.ln();
    let prim = |t: f64| 0.5 * (t.tanh() / t.cosh() + t.sinh().atan());
    4.0 * PI * (prim(t) - prim(0.0))
}

#[test]
fn stereographic_examples() {
    assert_eq!(stereographic(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0, -1.0]);
    let xi = stereographic(&[0.6, 0.0, 0.8]);
    assert!(xi[3].abs() < 1e-15);
    assert_relative_eq!(conformal_factor(&[0.6, 0.0, 0.8]), 1.0, max_relative = 1e-15);
    assert!(matches!(inverse_stereographic(&[0.0, 0.0, 0.0, 1.0]), Err(Error::PointAtInfinity)));
}

#[test]
fn pullback_factor_by_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nv = norm(&v);
        let h = 1e-6;
        let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b / nv).collect();
        let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b / nv).collect();
        let speed = dist(&stereographic(&xp), &stereographic(&xm)) / (2.0 * h);
        assert_relative_eq!(speed * speed, conformal_factor(&x).powi(2), max_relative = 1e-7);
    }
}

#[test]
fn sphere_chart_volume_and_size() {
    for m in [5, 9] {
        let chart = sphere_chart(m);
        assert_eq!(chart.len(), 2 * m * m * m);
        assert_eq!(chart.kind, ChartKind::SphereFullChart);
        assert!(chart.flat_weights.iter().all(|w| *w > 0.0));
        assert_relative_eq!(chart.volume(), 2.0 * PI * PI, max_relative = 1e-3);
    }
}

#[test]
fn shell_chart_membership_and_volume() {
    let chart = hopf_chart(10);
    assert_eq!(chart.kind, ChartKind::DilationShell);
    for x in &chart.nodes {
        let r = norm(x);
        assert!((1.0..2.0).contains(&r), "{r}");
    }
    assert!(chart.flat_weights.iter().all(|w| *w > 0.0));
    assert_relative_eq!(chart.volume(), shell_volume(), max_relative = 1e-2);
}

#[test]
fn shell_volume_converges_at_second_order() {
    let exact = shell_volume();
    let levels: Vec<(f64, f64)> = [10, 20, 40]
        .iter()
        .map(|&m| {
            let c = hopf_chart(m);
            (2f64.ln() / c.shape[0] as f64, (c.volume() - exact).abs())
        })
        .collect();
    for w in levels.windows(2) {
        let order = (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln();
        assert!(order >= 1.9, "order {order}");
    }
}

#[test]
fn chart_rejects_unsupported_input() {
    let g4 = KleinianGroup::trivial(4);
    assert!(matches!(build_chart(&g4, 5, 4), Err(Error::Domain(_))));
    assert!(build_chart(&KleinianGroup::trivial(3), 1, 3).is_err());
    let inv = MoebiusMap::sphere_pairing(&[-3.0, 0.0, 0.0], 1.0, &[3.0, 0.0, 0.0], 1.0).unwrap();
    let general = KleinianGroup::from_generators(3, vec![inv], None).unwrap();
    assert!(matches!(build_chart(&general, 5, 3), Err(Error::UnsupportedGroup(_))));
    // a quarter turn is not a multiple of the azimuthal step when 2m is not divisible by 4
    assert!(matches!(build_chart(&hopf_group(), 5, 3), Err(Error::UnsupportedGroup(_))));
}

#[test]
fn deck_shift_of_quarter_turn() {
    let chart = hopf_chart(10);
    assert_eq!(chart.deck_shift, 5);
    let perm = chart.deck_permutation().unwrap();
    let gen = &chart.group.generators[0];
    // the generator moves node p to k·x at the node perm[p] of the next cell
    for p in 0..chart.len() {
        let y = gen.apply(&chart.nodes[p]).unwrap();
        let q = &chart.nodes[perm[p]];
        let back: Vec<f64> = y.iter().map(|t| t / 2.0).collect();
        assert!(dist(&back, q) < 1e-12);
    }
}

#[test]
fn conformal_volume_is_invariant_under_transport() {
    for chart in [hopf_chart(10), sphere_chart(5)] {
        let gamma = match chart.kind {
            ChartKind::DilationShell => chart.group.generators[0].clone(),
            ChartKind::SphereFullChart => MoebiusMap::sphere_inversion(&[0.2, 0.1, -0.3], 1.1).unwrap(),
        };
        let moved = chart.transported(&gamma).unwrap();
        assert_relative_eq!(moved.volume(), chart.volume(), max_relative = 1e-10);
    }
}

#[test]
fn unfold_examples() {
    let chart = sphere_chart(5);
    let u = SolutionField::new(vec![1.0; chart.len()], 2.0).unwrap();
    let v = unfold(&u, &chart);
    for (x, vx) in chart.nodes.iter().zip(&v) {
        assert_relative_eq!(*vx, (2.0 / (1.0 + norm(x).powi(2))).sqrt(), max_relative = 1e-14);
    }
    let interp = ChartInterpolant::new(&chart, &u.values, 2.0).unwrap();
    assert_relative_eq!(interp.eval(&[0.0; 3]).unwrap(), 2f64.sqrt(), max_relative = 1e-12);
}

#[test]
fn solution_field_requires_positive_values() {
    assert!(SolutionField::new(vec![1.0, 0.0], 2.0).is_err());
    assert!(SolutionField::new(vec![1.0, f64::NAN], 2.0).is_err());
}

#[test]
fn interpolant_reproduces_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for chart in [sphere_chart(6), hopf_chart(8)] {
        let values: Vec<f64> = (0..chart.len()).map(|_| rng.gen_range(0.5..1.5)).collect();
        let u = SolutionField::new(values.clone(), 2.4).unwrap();
        let v = unfold(&u, &chart);
        let interp = ChartInterpolant::new(&chart, &values, 2.4).unwrap();
        for p in (0..chart.len()).step_by(7) {
            assert_relative_eq!(interp.eval(&chart.nodes[p]).unwrap(), v[p], max_relative = 1e-10);
        }
    }
}

#[test]
fn interpolant_converges_on_smooth_fields() {
    let f = |xi: &[f64]| 1.0 + 0.3 * xi[0] + 0.2 * xi[3] * xi[3] - 0.1 * xi[1] * xi[2];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let probes: Vec<Vec<f64>> = (0..200).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let mut errors = Vec::new();
    for m in [6, 12] {
        let chart = sphere_chart(m);
        let values: Vec<f64> = chart.nodes.iter().map(|x| f(&stereographic(x))).collect();
        let interp = ChartInterpolant::new(&chart, &values, 2.0).unwrap();
        let err = probes
            .iter()
            .map(|z| (interp.eval(z).unwrap() / conformal_factor(z).sqrt() - f(&stereographic(z))).abs())
            .fold(0.0, f64::max);
        errors.push(err);
    }
    assert!(errors[0] < 2e-2 && errors[1] < errors[0] / 8.0, "{errors:?}");
}

#[test]
fn interpolant_is_group_covariant() {
    let chart = hopf_chart(8);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let values: Vec<f64> = (0..chart.len()).map(|_| rng.gen_range(0.5..1.5)).collect();
    let alpha = 2.2;
    let s = (3.0 - alpha) / 2.0;
    let interp = ChartInterpolant::new(&chart, &values, alpha).unwrap();
    let gen = &chart.group.generators[0];
    for _ in 0..50 {
        let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        for m in [-2i64, 1, 3] {
            let g = gen.power(m);
            let lhs = interp.eval(&g.apply(&z).unwrap()).unwrap() * g.deriv_euclidean(&z).unwrap().powf(s);
            assert_relative_eq!(lhs, interp.eval(&z).unwrap(), max_relative = 1e-10);
        }
    }
}

#[test]
fn residual_transports_to_flat_form() {
    let spec = ProblemSpec::new(3, 2.0).unwrap();
    let chart = hopf_chart(6);
    let k = assemble(&chart, &spec).unwrap();
    let op = DiscreteOperator::new(&k, &chart).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let u: Vec<f64> = (0..chart.len()).map(|_| rng.gen_range(0.6..0.9)).collect();
    let field = SolutionField::new(u.clone(), 2.0).unwrap();
    let r = residual(&op, &spec, &u);
    let flat = flat_residual(&k, &chart, &spec, &unfold(&field, &chart));
    for p in 0..chart.len() {
        let expected = r[p] * chart.eta_hat[p].powf(spec.s());
        assert!((flat[p] - expected).abs() <= 1e-10 * (1.0 + expected.abs()), "{p}");
    }
}

proptest! {
    #[test]
    fn stereographic_round_trip(x in prop::collection::vec(-5.0f64..5.0, 3)) {
        let xi = stereographic(&x);
        prop_assert!((xi.iter().map(|t| t * t).sum::<f64>() - 1.0).abs() < 1e-12);
        let back = inverse_stereographic(&xi).unwrap();
        prop_assert!(dist(&back, &x) <= 1e-12 * (1.0 + norm(&x)));
    }

    #[test]
    fn chordal_distance_identity(x in prop::collection::vec(-5.0f64..5.0, 3), y in prop::collection::vec(-5.0f64..5.0, 3)) {
        let direct = dist(&stereographic(&x), &stereographic(&y));
        let formula = 2.0 * dist(&x, &y) / ((1.0 + norm(&x).powi(2)) * (1.0 + norm(&y).powi(2))).sqrt();
        prop_assert!((direct - formula).abs() < 1e-12);
        prop_assert!((chordal_distance(&x, &y) - formula).abs() < 1e-12);
    }

    #[test]
    fn unfold_round_trip(seed in any::<u64>(), alpha in 2.0f64..2.95) {
        let chart = sphere_chart(3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..chart.len()).map(|_| rng.gen_range(0.01..10.0)).collect();
        let u = SolutionField::new(vals.clone(), alpha).unwrap();
        let v = unfold(&u, &chart);
        prop_assert!(v.iter().all(|t| *t > 0.0));
        let back = pushdown(&v, &chart, alpha).unwrap();
        for (a, b) in back.values.iter().zip(&vals) {
            prop_assert!((a - b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn reduce_lands_in_fundamental_domain(z in prop::collection::vec(-50.0f64..50.0, 3)) {
        prop_assume!(norm(&z) > 1e-3);
        let chart = hopf_chart(6);
        let (y, m) = chart.reduce(&z).unwrap();
        let r = norm(&y);
        prop_assert!((1.0..2.0).contains(&r));
        let back = chart.group.generators[0].power(m as i64).apply(&y).unwrap();
        prop_assert!(dist(&back, &z) <= 1e-12 * norm(&z));
    }
}
