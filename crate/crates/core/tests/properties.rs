//! Randomized invariants.

use proptest::prelude::*;

use fracsing::capacity::{cap_fourier, FourierConfig};
use fracsing::conformal::{kelvin, moving_sphere_sweep_with, sweep_tolerance, KelvinMap};
use fracsing::constants::{extension_normalizer, gamma, gamma_ratio_condition};
use fracsing::extension::extend;
use fracsing::fraclap::{bubble, cylindrical_solution, frac_laplacian_point, QuadConfig};
use fracsing::lattice::{euclid, graded_heights, grading_exponent, Grid, GridFn, HalfGridFn, SingularSet};
use fracsing::probes::{blowup_exponent, symmetry_ratio_sampled, DEFAULT_EPS};
use fracsing::solver::{solve_bvp, MixedBVP};
use fracsing::FracParams;

fn point(n: usize, range: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-range..range, n)
}

fn gaussian_at(c: Vec<f64>, w: f64) -> impl Fn(&[f64]) -> f64 {
    move |x: &[f64]| (-w * x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gamma_recurrence(x in 0.1f64..30.0) {
        let g = gamma(x).unwrap();
        prop_assert!((gamma(x + 1.0).unwrap() - x * g).abs() <= 1e-10 * (x * g).abs());
    }

    #[test]
    fn normalizer_reflection(sigma in 0.05f64..0.95) {
        let v = extension_normalizer(sigma).unwrap() * extension_normalizer(1.0 - sigma).unwrap();
        prop_assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gamma_ratio_positive_below_threshold(n in 2usize..=8, k in 0usize..8, s in 1usize..=9) {
        let sigma = 0.1 * s as f64;
        prop_assume!(k < n && (k as f64) < 0.5 * (n as f64 - 2.0 * sigma));
        prop_assert!(gamma_ratio_condition(n, k, sigma).unwrap().positive);
    }

    #[test]
    fn set_distance_is_one_lipschitz(x in point(3, 2.0), y in point(3, 2.0), z in point(3, 1.0), r in 0.05f64..0.5) {
        let set = SingularSet::point(z).union(SingularSet::strip(3, 1, 0.7)).union(SingularSet::ball(vec![1.0, 1.0, 0.0], r));
        prop_assert!(set.dist(&x) <= euclid(&x, &y) + set.dist(&y) + 1e-12);
    }

    #[test]
    fn kelvin_is_an_involution(
        c in point(2, 1.0),
        lambda in 0.2f64..2.0,
        x in point(2, 3.0),
        t in 0.01f64..3.0,
    ) {
        let map = KelvinMap::new(c, lambda, 1.0).unwrap();
        let u = |y: &[f64]| 1.0 + y[0] * y[0] + 0.5 * y[1] + y[2];
        let once = |y: &[f64]| kelvin(&u, &map, y).unwrap();
        let y = [x[0], x[1], t];
        prop_assume!(euclid(&[y[0], y[1], y[2]], &[map.center[0], map.center[1], 0.0]) > 1e-3);
        let back = kelvin(&once, &map, &y).unwrap();
        prop_assert!((back - u(&y)).abs() <= 1e-12 * u(&y).abs().max(1.0));
    }

    #[test]
    fn blowup_slope_ignores_amplitude(a in 1e-3f64..1e3, sigma in 0.1f64..0.9) {
        let p = FracParams::new(3, sigma).unwrap().with_k(1).unwrap();
        let set = SingularSet::strip(3, 1, 2.0);
        let radii = [0.4, 0.2, 0.1, 0.05];
        let u = |x: &[f64]| cylindrical_solution(x, &p, 1.0).unwrap() * (1.0 + x[2]);
        let au = |x: &[f64]| a * u(x);
        let s1 = blowup_exponent(&u, &set, &[0.0; 3], &radii, &p).unwrap().slope;
        let s2 = blowup_exponent(&au, &set, &[0.0; 3], &radii, &p).unwrap().slope;
        prop_assert!((s1 - s2).abs() < 1e-12, "{s1} vs {s2}");
    }

    #[test]
    fn cylinder_symmetry_ignores_fiber_rotation(phase in 0.0f64..6.3, r in 0.001f64..0.03) {
        let p = FracParams::new(3, 0.5).unwrap().with_k(1).unwrap();
        let set = SingularSet::strip(3, 1, 2.0);
        let u = |x: &[f64]| cylindrical_solution(x, &p, 1.0).unwrap();
        let s = symmetry_ratio_sampled(&u, &set, &[0.3, 0.0, 0.0], r, DEFAULT_EPS, &p, 32, phase).unwrap();
        prop_assert!((s.ratio - 1.0).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fraclap_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, c in point(2, 0.5), x in point(2, 1.0)) {
        let p = FracParams::linear(2, 0.5).unwrap();
        let q = QuadConfig { tail_exponent_assumed: Some(f64::INFINITY), ..QuadConfig::default() };
        let u = gaussian_at(vec![0.0, 0.0], 1.0);
        let v = gaussian_at(c, 2.0);
        let lu = frac_laplacian_point(&u, &x, &p, &q).unwrap();
        let lv = frac_laplacian_point(&v, &x, &p, &q).unwrap();
        let lw = frac_laplacian_point(&|y: &[f64]| a * u(y) + b * v(y), &x, &p, &q).unwrap();
        let scale = (a * lu).abs() + (b * lv).abs();
        prop_assert!((lw - a * lu - b * lv).abs() <= 1e-8 * scale.max(1e-300));
    }

    #[test]
    fn extension_is_linear_and_bounded(a in 0.1f64..2.0, b in 0.1f64..2.0, c in point(2, 1.0), t in 0.05f64..2.0) {
        let p = FracParams::linear(2, 0.5).unwrap();
        let grid = Grid::cube(2, 4.0, 0.25).unwrap();
        let f = GridFn::from_fn(grid.clone(), gaussian_at(vec![0.0, 0.0], 1.0));
        let g = GridFn::from_fn(grid.clone(), gaussian_at(c.clone(), 0.5));
        let fg = GridFn::new(grid, f.values.iter().zip(&g.values).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let targets = vec![vec![0.0, 0.0, t], vec![c[0], c[1], t], vec![1.0, -1.0, 0.5 * t]];
        let ef = extend(&f, &p, &targets).unwrap();
        let eg = extend(&g, &p, &targets).unwrap();
        let efg = extend(&fg, &p, &targets).unwrap();
        for i in 0..targets.len() {
            prop_assert!((efg[i] - a * ef[i] - b * eg[i]).abs() <= 1e-12 * (a + b));
            prop_assert!(efg[i] >= fg.inf() - 1e-12 && efg[i] <= fg.sup() + 1e-12);
        }
    }

    #[test]
    fn sweep_is_monotone_in_tolerance(extra in 0.0f64..0.5, h in prop::sample::select(vec![0.2, 0.25])) {
        let p = FracParams::new(2, 0.5).unwrap();
        let w = GridFn::from_fn(Grid::cube(2, 3.0, h).unwrap(), |y| bubble(y, &p) * (1.0 + 0.2 * y[0]));
        let lambdas: Vec<f64> = (1..=30).map(|i| 0.05 * i as f64).collect();
        let set = SingularSet::empty(2);
        let tol = sweep_tolerance(&w);
        let lo = moving_sphere_sweep_with(&w, &[0.1, 0.0], &lambdas, &set, p.decay(), tol).unwrap();
        let hi = moving_sphere_sweep_with(&w, &[0.1, 0.0], &lambdas, &set, p.decay(), tol + extra).unwrap();
        prop_assert!(hi.lambda_bar >= lo.lambda_bar);
    }

    #[test]
    fn solutions_respect_data_ordering(shift in 0.0f64..1.0, flux in 0.0f64..1.0, sigma in 0.2f64..0.8) {
        let base = Grid::cube(2, 1.0, 0.25).unwrap();
        let t = graded_heights(1.0, 8, sigma, grading_exponent(sigma)).unwrap();
        let lower = MixedBVP::neumann(base.clone(), t.clone(), sigma, Box::new(|x, t| 1.0 + x[0] * t), Box::new(|x| x[1]));
        let upper = MixedBVP::neumann(
            base,
            t,
            sigma,
            Box::new(move |x, t| 1.0 + x[0] * t + shift),
            Box::new(move |x| x[1] + flux),
        );
        let (a, _) = solve_bvp(&upper, 1e-11).unwrap();
        let (b, _) = solve_bvp(&lower, 1e-11).unwrap();
        let scale = a.sup().max(b.sup());
        prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| *x >= y - 1e-8 * scale));
    }

    #[test]
    fn energy_ignores_added_constants(c in -10.0f64..10.0, sigma in 0.1f64..0.9) {
        let base = Grid::cube(2, 1.0, 0.25).unwrap();
        let t = graded_heights(1.0, 6, sigma, grading_exponent(sigma)).unwrap();
        let f = |x: &[f64], t: f64| (x[0] * 3.0).sin() + t * x[1];
        let u = HalfGridFn::from_fn(base.clone(), t.clone(), f).unwrap();
        let v = HalfGridFn::from_fn(base, t, move |x, t| f(x, t) + c).unwrap();
        let (eu, ev) = (u.weighted_energy(sigma), v.weighted_energy(sigma));
        prop_assert!((eu - ev).abs() <= 1e-10 * eu);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn fourier_capacity_is_monotone_and_subadditive(r1 in 0.15f64..0.3, dr in 0.05f64..0.2, gap in 0.3f64..0.6) {
        let p = FracParams::new(2, 0.5).unwrap();
        let grid = Grid::cube(2, 2.0, 0.0625).unwrap();
        let cfg = FourierConfig::default();
        let cap = |s: &SingularSet| cap_fourier(s, &grid, &p, &cfg).unwrap().value;
        let small = SingularSet::ball(vec![0.0, 0.0], r1);
        let big = SingularSet::ball(vec![0.0, 0.0], r1 + dr);
        prop_assert!(cap(&small) <= cap(&big) + 1e-8);
        let c = r1 + gap / 2.0;
        let left = SingularSet::ball(vec![-c, 0.0], r1);
        let right = SingularSet::ball(vec![c, 0.0], r1);
        let both = cap(&left.clone().union(right.clone()));
        let sum = cap(&left) + cap(&right);
        prop_assert!(both <= 1.05 * sum, "{both} vs {sum}");
    }
}
