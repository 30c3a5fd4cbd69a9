mod common;

use std::f64::consts::PI;

use approx::assert_relative_eq;
use lcf_core::riesz::{
    bubble, bubble_amplitude, frac_laplacian_periodic, riesz_apply_flat, riesz_apply_flat_at, riesz_apply_flat_with,
    riesz_constant, riesz_periodic, FlatGrid, PeriodicField, ProblemSpec, SingularCorrection, Tolerances,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::beta::beta;
use statrs::function::erf::erf;
use statrs::function::gamma::gamma;

fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0)
}

/// Î_α(e^{−|x|²})(0) computed on the Fourier side, without c(n, α).
fn gaussian_potential_at_origin(n: usize, alpha: f64) -> f64 {
    let nf = n as f64;
    (2.0 * PI).powf(-nf) * PI.powf(nf / 2.0) * sphere_area(n) * 2f64.powf(nf - 1.0 - alpha) * gamma((nf - alpha) / 2.0)
}

fn band_limited(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> PeriodicField {
    let d = shape.len();
    let modes: Vec<(Vec<f64>, f64, f64)> = (0..8)
        .map(|_| {
            let k: Vec<f64> = (0..d).map(|_| rng.gen_range(-6i32..=6) as f64).collect();
            (k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    PeriodicField::from_fn(shape, vec![2.0 * PI; d], |x| {
        modes
            .iter()
            .map(|(k, a, ph)| a * (k.iter().zip(x).map(|(ki, xi)| ki * xi).sum::<f64>() + ph).cos())
            .sum()
    })
}

fn remove_mean(f: &mut PeriodicField) {
    let mean = f.data.iter().sum::<f64>() / f.data.len() as f64;
    f.data.iter_mut().for_each(|v| *v -= mean);
}

#[test]
fn riesz_constant_examples() {
    assert_relative_eq!(riesz_constant(3, 2.0).unwrap(), 1.0 / (4.0 * PI), max_relative = 1e-14);
    assert_relative_eq!(riesz_constant(4, 2.0).unwrap(), 1.0 / (4.0 * PI * PI), max_relative = 1e-14);
    assert!(riesz_constant(3, 0.0).is_err());
    assert!(riesz_constant(3, 3.0).is_err());
}

#[test]
fn problem_spec_validation() {
    let s = ProblemSpec::new(3, 2.0).unwrap();
    assert_relative_eq!(s.p, 5.0);
    assert!(s.c_n_alpha > 0.0);
    assert!(ProblemSpec::new(2, 1.5).is_err());
    assert!(ProblemSpec::new(3, 1.9).is_err());
    assert!(ProblemSpec::new(3, 3.0).is_err());
    let bad = Tolerances { solve_tol: -1.0, ..Tolerances::default() };
    assert!(ProblemSpec::with_tolerances(3, 2.0, bad).is_err());
}

#[test]
fn riesz_constant_matches_fourier_side_gaussian() {
    // real-space c(n,α)|S^{n−1}|∫ r^{α−1}e^{−r²} dr against the Fourier-side value
    for (n, alpha) in [(3, 2.0), (3, 2.5), (4, 2.0), (4, 3.3), (5, 2.7)] {
        let real = riesz_constant(n, alpha).unwrap() * sphere_area(n) * gamma(alpha / 2.0) / 2.0;
        assert_relative_eq!(real, gaussian_potential_at_origin(n, alpha), max_relative = 1e-12);
    }
}

#[test]
fn fractional_laplacian_examples() {
    let shape = vec![32, 32];
    let lengths = vec![2.0 * PI; 2];
    let c = PeriodicField::from_fn(shape.clone(), lengths.clone(), |_| 3.0);
    assert!(frac_laplacian_periodic(&c, 2.0).sup_norm() < 1e-12);
    let s1 = PeriodicField::from_fn(shape.clone(), lengths.clone(), |x| x[0].sin());
    let out = frac_laplacian_periodic(&s1, 2.0);
    assert!(common::sup_diff(&out.data, &s1.data) < 1e-12);
    let s2 = PeriodicField::from_fn(shape.clone(), lengths.clone(), |x| (2.0 * x[0]).sin());
    let out = frac_laplacian_periodic(&s2, 3.0);
    let expected: Vec<f64> = s2.data.iter().map(|v| 8.0 * v).collect();
    assert!(common::sup_diff(&out.data, &expected) < 1e-11);
    let twice = frac_laplacian_periodic(&frac_laplacian_periodic(&s2, 1.5), 1.5);
    assert!(common::sup_diff(&twice.data, &out.data) < 1e-11);
}

#[test]
fn spectral_inverse_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for shape in [vec![64, 64], vec![32, 32, 32]] {
        for alpha in [2.0, 2.5, 3.0 - 1e-3] {
            for _ in 0..20 {
                let mut f = band_limited(&mut rng, shape.clone());
                remove_mean(&mut f);
                let back = riesz_periodic(&frac_laplacian_periodic(&f, alpha), 3, alpha).unwrap();
                let err = common::sup_diff(&back.data, &f.data) / f.sup_norm();
                assert!(err < 1e-6, "{shape:?} α={alpha}: {err}");
            }
        }
    }
}

#[test]
fn riesz_tends_to_identity_for_small_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut f = band_limited(&mut rng, vec![32, 32]);
    remove_mean(&mut f);
    let out = riesz_periodic(&f, 3, 1e-9).unwrap();
    assert!(common::sup_diff(&out.data, &f.data) / f.sup_norm() < 1e-7);
    assert!(riesz_periodic(&f, 1, 0.5).is_err());
}

#[test]
fn flat_riesz_of_zero_is_zero() {
    let g = FlatGrid::centred(3, 1.0, 0.25, |_| 0.0);
    assert!(riesz_apply_flat(&g, 2.0).unwrap().data.iter().all(|v| *v == 0.0));
}

#[test]
fn flat_riesz_newtonian_potential_of_gaussian() {
    let h = 0.1;
    let g = FlatGrid::centred(3, 5.0, h, |x| (-x.iter().map(|t| t * t).sum::<f64>()).exp());
    let m = (g.shape[0] - 1) / 2;
    let nodes: Vec<usize> = [0, 5, 10, 20].iter().map(|&i| g.flat_index(&[m + i, m, m])).collect();
    let out = riesz_apply_flat_at(&g, 2.0, SingularCorrection::default(), &nodes).unwrap();
    for (&node, v) in nodes.iter().zip(&out) {
        let r = g.point(node)[0];
        let exact = if r == 0.0 { 0.5 } else { PI.sqrt() / 4.0 * erf(r) / r };
        assert_relative_eq!(*v, exact, max_relative = 1e-3);
    }
}

#[test]
fn flat_riesz_gaussian_matches_fourier_value() {
    let h = 0.1;
    let g = FlatGrid::centred(3, 5.0, h, |x| (-x.iter().map(|t| t * t).sum::<f64>()).exp());
    let centre = (g.len() - 1) / 2;
    for alpha in [2.0, 2.5, 2.9] {
        let v = riesz_apply_flat_at(&g, alpha, SingularCorrection::default(), &[centre]).unwrap()[0];
        assert_relative_eq!(v, gaussian_potential_at_origin(3, alpha), max_relative = 1e-3);
    }
}

#[test]
fn calibrated_correction_beats_equal_volume_ball() {
    let g = FlatGrid::centred(3, 5.0, 0.2, |x| (-x.iter().map(|t| t * t).sum::<f64>()).exp());
    let centre = (g.len() - 1) / 2;
    let exact = gaussian_potential_at_origin(3, 2.0);
    let err = |c| (riesz_apply_flat_at(&g, 2.0, c, &[centre]).unwrap()[0] - exact).abs();
    assert!(err(SingularCorrection::default()) < err(SingularCorrection::EqualVolumeBall));
}

#[test]
fn flat_riesz_commutes_with_grid_symmetries() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let g = FlatGrid::centred(3, 1.0, 0.25, |_| 0.0);
    let data: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let f = FlatGrid { data, ..g.clone() };
    let m = f.shape[0] - 1;
    let rotate = |i: &[usize]| vec![m - i[1], i[0], i[2]];
    let mirror = |i: &[usize]| vec![i[0], i[1], m - i[2]];
    let base = riesz_apply_flat(&f, 2.3).unwrap();
    for op in [&rotate as &dyn Fn(&[usize]) -> Vec<usize>, &mirror] {
        let mut moved = f.clone();
        for q in 0..f.len() {
            moved.data[f.flat_index(&op(&f.multi_index(q)))] = f.data[q];
        }
        let out = riesz_apply_flat(&moved, 2.3).unwrap();
        for q in 0..f.len() {
            let tq = f.flat_index(&op(&f.multi_index(q)));
            assert!((out.data[tq] - base.data[q]).abs() <= 1e-12 * base.data[q]);
        }
    }
}

#[test]
fn flat_riesz_is_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for correction in [SingularCorrection::default(), SingularCorrection::EqualVolumeBall] {
        let g = FlatGrid::centred(3, 1.0, 0.25, |_| 0.0);
        let data: Vec<f64> = (0..g.len()).map(|_| if rng.gen_bool(0.1) { rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
        let f = FlatGrid { data, ..g };
        let out = riesz_apply_flat_with(&f, 2.0, correction).unwrap();
        assert!(out.data.iter().all(|v| *v > 0.0));
        let mut delta = FlatGrid { data: vec![0.0; f.len()], ..f.clone() };
        delta.data[17] = 1.0;
        assert!(riesz_apply_flat_with(&delta, 2.0, correction).unwrap().data[17] > 0.0);
    }
}

#[test]
fn bubble_amplitude_matches_beta_oracle() {
    for (n, alpha) in [(3, 2.0), (3, 2.5), (4, 2.0), (5, 3.5)] {
        let spec = ProblemSpec::new(n, alpha).unwrap();
        // ∫₀^∞ r^{α−1}(1 + r²)^{−(n+α)/2} dr = B(α/2, n/2)/2
        let radial = beta(alpha / 2.0, n as f64 / 2.0) / 2.0;
        let expected = (spec.c_n_alpha * sphere_area(n) * radial).powf(-1.0 / (spec.p - 1.0));
        assert_relative_eq!(bubble_amplitude(&spec).unwrap(), expected, max_relative = 1e-12);
    }
}

#[test]
fn bubble_rejects_bad_parameters() {
    let spec = ProblemSpec::new(3, 2.0).unwrap();
    assert!(bubble(&spec, 0.0, &[0.0; 3]).is_err());
    assert!(bubble(&spec, 1.0, &[0.0; 2]).is_err());
}

/// sup over sample points of |b − Î(b^p)| on the box [−L, L]³.
fn bubble_residual(h: f64, half_width: f64) -> f64 {
    let spec = ProblemSpec::new(3, 2.0).unwrap();
    let b = bubble(&spec, 1.0, &[0.0; 3]).unwrap();
    let g = FlatGrid::centred(3, half_width, h, |x| b.eval(x).powf(spec.p));
    let m = (g.shape[0] - 1) / 2;
    let nodes: Vec<usize> = [0.0, 0.5, 1.0]
        .iter()
        .map(|x| g.flat_index(&[m + (x / h).round() as usize, m, m]))
        .collect();
    let out = riesz_apply_flat_at(&g, 2.0, SingularCorrection::default(), &nodes).unwrap();
    nodes
        .iter()
        .zip(&out)
        .map(|(&q, v)| (b.eval(&g.point(q)) - v).abs())
        .fold(0.0, f64::max)
}

#[test]
fn bubble_residual_converges_at_second_order() {
    let r: Vec<f64> = [(0.5, 3.0), (0.25, 6.0), (0.125, 12.0)]
        .iter()
        .map(|&(h, l)| bubble_residual(h, l))
        .collect();
    for w in r.windows(2) {
        assert!((w[0] / w[1]).log2() >= 2.0, "{r:?}");
    }
}

proptest! {
    #[test]
    fn bubble_scaling_covariance(t in 0.2f64..5.0, x0 in prop::collection::vec(-2.0f64..2.0, 3), x in prop::collection::vec(-3.0f64..3.0, 3), alpha in 2.0f64..2.9) {
        let spec = ProblemSpec::new(3, alpha).unwrap();
        let b = bubble(&spec, t, &x0).unwrap();
        let unit = bubble(&spec, 1.0, &[0.0; 3]).unwrap();
        let y: Vec<f64> = x.iter().zip(&x0).map(|(a, c)| (a - c) / t).collect();
        let expected = t.powf(-spec.s()) * unit.eval(&y);
        prop_assert!((b.eval(&x) - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn bubble_is_positive_and_radially_decreasing(r1 in 0.0f64..5.0, dr in 0.01f64..3.0, alpha in 2.0f64..2.9) {
        let spec = ProblemSpec::new(3, alpha).unwrap();
        let b = bubble(&spec, 0.7, &[0.1, 0.2, 0.3]).unwrap();
        let at = |r: f64| b.eval(&[0.1 + r, 0.2, 0.3]);
        prop_assert!(at(r1 + dr) > 0.0);
        prop_assert!(at(r1 + dr) < at(r1));
    }
}
