//! Property-based invariants for the solver, kernel, and sampling layers.

use brownlab::brown::point_data;
use brownlab::c64;
use brownlab::ensembles::{sample_iid, DeformedModel, Dist, Field, ModelSpec};
use brownlab::experiments::{chi2_sf, p_gin_k, wilson_interval};
use brownlab::flows::scale_s;
use brownlab::mde::{solve_scalar, Atoms};
use brownlab::util::{derive_seed, gauss_legendre, gl_integrate};
use proptest::prelude::*;

fn svals_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..5.0, 1..48)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mde_solution_satisfies_equation(svals in svals_strategy(), log_eta in -8.0f64..1.0) {
        let eta = 10f64.powf(log_eta);
        let sol = solve_scalar(&svals, eta).unwrap();
        prop_assert!(sol.v >= eta);
        prop_assert!(sol.im_m() >= 0.0);
        // Residual of v = η + ⟨v/(s² + v²)⟩ directly.
        let rhs: f64 = svals.iter().map(|s| sol.v / (s * s + sol.v * sol.v)).sum::<f64>()
            / svals.len() as f64;
        prop_assert!((sol.v - eta - rhs).abs() <= 1e-11 * (1.0 + sol.v));
    }

    #[test]
    fn mde_v_is_increasing_in_eta(svals in svals_strategy(), log_eta in -6.0f64..0.0) {
        let eta = 10f64.powf(log_eta);
        let v1 = solve_scalar(&svals, eta).unwrap().v;
        let v2 = solve_scalar(&svals, eta * 1.5).unwrap().v;
        prop_assert!(v2 > v1);
    }

    #[test]
    fn scale_function_increasing_in_eta(svals in svals_strategy(), log_eta in -4.0f64..0.0) {
        let atoms = Atoms::from_svals(&svals);
        let eta = 10f64.powf(log_eta);
        let s1 = scale_s(&atoms, eta, 1.0).unwrap();
        let s2 = scale_s(&atoms, eta * 2.0, 1.0).unwrap();
        prop_assert!(s2 > s1);
    }

    #[test]
    fn kernel_intensity_bounds(re1 in -4.0f64..2.0, im1 in -3.0f64..3.0,
                               re2 in -4.0f64..2.0, im2 in -3.0f64..3.0) {
        let w1 = c64::new(re1, im1);
        let w2 = c64::new(re2, im2);
        let p1a = p_gin_k(&[w1]).unwrap();
        let p1b = p_gin_k(&[w2]).unwrap();
        let p2 = p_gin_k(&[w1, w2]).unwrap();
        let inv_pi = 1.0 / std::f64::consts::PI;
        prop_assert!((-1e-12..=inv_pi + 1e-12).contains(&p1a));
        // Determinantal repulsion: p₂ ≤ p₁ ⊗ p₁.
        prop_assert!(p2 <= p1a * p1b + 1e-12);
        prop_assert!(p2 >= -1e-12);
    }

    #[test]
    fn sampling_is_seed_deterministic(seed in any::<u64>(), n in 2usize..24) {
        let model = DeformedModel::zero(n, Field::Complex, Dist::Gaussian);
        let a = sample_iid(&model, seed);
        let b = sample_iid(&model, seed);
        prop_assert_eq!(&a.entries, &b.entries);
        let c = sample_iid(&model, seed.wrapping_add(1));
        prop_assert!(a.entries != c.entries);
    }

    #[test]
    fn derived_seeds_do_not_collide(base in any::<u64>()) {
        let mut seen = std::collections::HashSet::new();
        for i in 0..256u64 {
            prop_assert!(seen.insert(derive_seed(base, i)));
        }
    }

    #[test]
    fn wilson_interval_brackets_the_estimate(hits in 0u64..500, extra in 0u64..500) {
        let trials = hits + extra;
        prop_assume!(trials > 0);
        let (lo, hi) = wilson_interval(hits, trials, 1.96);
        let p = hits as f64 / trials as f64;
        prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
    }

    #[test]
    fn chi2_sf_is_a_survival_function(x in 0.0f64..50.0, dof in 1usize..20) {
        let p = chi2_sf(x, dof);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(chi2_sf(x + 1.0, dof) <= p + 1e-12);
    }

    #[test]
    fn gauss_legendre_is_exact_on_polynomials(c0 in -2.0f64..2.0, c1 in -2.0f64..2.0,
                                              c2 in -2.0f64..2.0, c3 in -2.0f64..2.0) {
        // n = 3 nodes integrate degree ≤ 5 exactly.
        let rule = gauss_legendre(3);
        let mut f = |x: f64| c0 + c1 * x + c2 * x * x + c3 * x.powi(5);
        let got = gl_integrate(&mut f, -1.0, 2.0, &rule);
        let exact = |x: f64| c0 * x + c1 * x * x / 2.0 + c2 * x.powi(3) / 3.0
            + c3 * x.powi(6) / 6.0;
        prop_assert!((got - (exact(2.0) - exact(-1.0))).abs() <= 1e-12);
    }

    #[test]
    fn f_a_is_subharmonic_off_the_spectrum(re in -3.0f64..3.0, im in 0.3f64..3.0) {
        // Diagonal atoms at ±1; z is kept off the real axis, so away from
        // Spec(A), where ⟨|A − z|⁻²⟩ must have a nonnegative Laplacian.
        let model = DeformedModel::build(
            &ModelSpec::TwoCluster { n: 8, a: [1.0, 0.0], b: [-1.0, 0.0] },
            Field::Complex,
            Dist::Gaussian,
        ).unwrap();
        let pd = point_data(&model, c64::new(re, im)).unwrap();
        prop_assert!(pd.laplacian() >= -1e-10 * (1.0 + pd.f));
    }
}
