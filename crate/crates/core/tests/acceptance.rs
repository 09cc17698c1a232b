//! Acceptance gate: one criterion per test, each printing a single
//! pass/fail line. Run with `cargo test --test acceptance -- --nocapture`.

use brownlab::brown::{
    brown_field, density, find_edge_ray, sigma_f, sigma_f_closed, EdgeOptions, EdgePoint,
    GridSpec, SigmaControls, SpecEpsControls,
};
use brownlab::ensembles::{sample_iid, DeformedModel, Dist, Field, ModelSpec};
use brownlab::experiments::{
    chi2_two_sample, cluster_count, edge_statistics, fit_slope, girko_identity_test,
    girko_observables, local_law, no_outlier, p1_profile_deviation, smallest_singular_tail, Bump,
    Window,
};
use brownlab::flows::{
    characteristic_flow, complex_path, real_path, zigzag_schedule, PathOptions, PathRegime,
    RkControls,
};
use brownlab::mde::{cubic_residual, m_matrix, solve_at, solve_scalar, QuadratureControls};
use brownlab::{c64, util};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Mutex;
use std::time::Instant;

/// Criteria run one at a time so the per-criterion runtime budgets are
/// measured without interference from the harness's thread pool.
static GATE: Mutex<()> = Mutex::new(());

struct Criterion {
    index: u32,
    name: &'static str,
    budget_s: f64,
    started: Instant,
    failures: Vec<String>,
}

impl Criterion {
    fn start(index: u32, name: &'static str, budget_s: f64) -> Self {
        Self { index, name, budget_s, started: Instant::now(), failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, detail: String) {
        if !ok {
            self.failures.push(detail);
        }
    }

    fn finish(mut self) {
        let elapsed = self.started.elapsed().as_secs_f64();
        if elapsed > self.budget_s {
            self.failures.push(format!(
                "runtime {elapsed:.1}s exceeds the {:.0}s budget",
                self.budget_s
            ));
        }
        let verdict = if self.failures.is_empty() { "PASS" } else { "FAIL" };
        println!(
            "criterion {:02} ({}): {verdict} [{elapsed:.1}s]",
            self.index, self.name
        );
        assert!(
            self.failures.is_empty(),
            "criterion {:02} failed:\n  {}",
            self.index,
            self.failures.join("\n  ")
        );
    }
}

fn gate() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn zero_model(n: usize, field: Field) -> DeformedModel {
    DeformedModel::zero(n, field, Dist::Gaussian)
}

fn two_cluster(n: usize, sep: f64, field: Field) -> DeformedModel {
    DeformedModel::build(
        &ModelSpec::TwoCluster { n, a: [sep, 0.0], b: [-sep, 0.0] },
        field,
        Dist::Gaussian,
    )
    .unwrap()
}

fn three_cluster(n: usize, field: Field) -> DeformedModel {
    DeformedModel::build(
        &ModelSpec::ThreeCluster { n, a: [-2.0, 0.0], b: [0.0, 0.0], c: [2.0, 0.0] },
        field,
        Dist::Gaussian,
    )
    .unwrap()
}

fn edge_at(model: &DeformedModel, origin: c64, dir: c64) -> EdgePoint {
    let opts = EdgeOptions { n: model.n, ..EdgeOptions::default() };
    find_edge_ray(model, origin, dir, &opts).unwrap()
}

/// Edge of `model` on a ray from `center` whose angle is tuned so the edge
/// point has the requested imaginary part (monotone for φ ∈ [0, π/2]).
fn edge_with_im(model: &DeformedModel, center: c64, target_im: f64) -> EdgePoint {
    let (mut lo, mut hi) = (0.0_f64, std::f64::consts::FRAC_PI_2);
    for _ in 0..60 {
        let phi = 0.5 * (lo + hi);
        let e = edge_at(model, center, c64::from_polar(1.0, phi));
        if e.z0.im < target_im {
            lo = phi;
        } else {
            hi = phi;
        }
    }
    edge_at(model, center, c64::from_polar(1.0, 0.5 * (lo + hi)))
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

#[test]
fn criterion_01_mde_solver() {
    let _g = gate();
    let mut c = Criterion::start(1, "MDE solver", 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    for case in 0..100 {
        let n = rng.gen_range(4..=128usize);
        let entries: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
            .collect();
        let model = DeformedModel::build(
            &ModelSpec::Diagonal { n, entries },
            Field::Complex,
            Dist::Gaussian,
        )
        .unwrap();
        let z = c64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let eta = 10f64.powf(rng.gen_range(-6.0..1.0));
        let svals = model.svals_shifted(z).unwrap();
        let sol = solve_scalar(&svals, eta).unwrap();
        c.check(sol.residual <= 1e-12, format!("case {case}: residual {}", sol.residual));
        // Independent oracle: bisection on g(v) = v − η − ⟨v/(s²+v²)⟩,
        // negative at v = η and positive for large v.
        let g = |v: f64| {
            v - eta - svals.iter().map(|s| v / (s * s + v * v)).sum::<f64>() / n as f64
        };
        let mut lo = eta;
        let mut hi = eta + 2.0;
        while g(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        let oracle = 0.5 * (lo + hi);
        c.check(
            (sol.v - oracle).abs() <= 1e-12 * oracle.max(1.0),
            format!("case {case}: v {} vs oracle {oracle}", sol.v),
        );
        let m = m_matrix(&model, z, eta).unwrap();
        c.check(
            m.trace_mean().re.abs() <= 1e-12,
            format!("case {case}: Re⟨M⟩ = {}", m.trace_mean().re),
        );
        let inv = model.inv_norm_shifted(z).unwrap();
        c.check(
            m.norm() <= inv * (1.0 + 1e-12),
            format!("case {case}: ‖M‖ {} > ‖(A−z)⁻¹‖ {inv}", m.norm()),
        );
    }
    c.finish();
}

#[test]
fn criterion_02_edge_asymptotics() {
    let _g = gate();
    let mut c = Criterion::start(2, "edge asymptotics", 30.0);
    let model = zero_model(64, Field::Complex);
    let z0 = c64::new(1.0, 0.0);
    // v(iη) ~ η^{1/3} at the edge.
    let etas = logspace(1e-9, 1e-3, 20);
    let (xs, ys): (Vec<f64>, Vec<f64>) = etas
        .iter()
        .map(|&eta| (eta.ln(), solve_at(&model, z0, eta).unwrap().v.ln()))
        .unzip();
    let slope = fit_slope(&xs, &ys);
    c.check(
        (slope - 1.0 / 3.0).abs() <= 0.02,
        format!("η-exponent of v is {slope}, want 1/3 ± 0.02"),
    );
    // Approximate cubic: I₄v³ − 2Re(w I₃)v − η stays below the error budget.
    let (i3, i4) = (c64::new(-1.0, 0.0), 1.0);
    for (ki, &aw) in logspace(1e-4, 5e-2, 10).iter().enumerate() {
        let w = c64::from_polar(aw, 2.4 * ki as f64);
        for &eta in &logspace(1e-9, 1e-3, 10) {
            let res = cubic_residual(&model, z0, i3, i4, w, eta).unwrap();
            let bound = 5.0 * (aw.sqrt() + eta.powf(1.0 / 3.0)).powi(5);
            c.check(
                res.abs() <= bound,
                format!("cubic residual {res:.3e} > {bound:.3e} at |w|={aw:.1e}, η={eta:.1e}"),
            );
        }
    }
    c.finish();
}

#[test]
fn criterion_03_brown_density() {
    let _g = gate();
    let mut c = Criterion::start(3, "Brown density", 300.0);
    let model = zero_model(64, Field::Complex);
    let controls = QuadratureControls::default();
    let h = 1e-3;
    let inv_pi = 1.0 / std::f64::consts::PI;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    for k in 0..20 {
        let z = c64::from_polar(rng.gen_range(0.0..0.8), rng.gen_range(0.0..6.28));
        let d = density(&model, z, h, &controls).unwrap();
        c.check(
            (d.value - inv_pi).abs() <= 1e-2,
            format!("interior point {k}: density {} vs 1/π", d.value),
        );
        let z = c64::from_polar(rng.gen_range(1.2..1.5), rng.gen_range(0.0..6.28));
        let d = density(&model, z, h, &controls).unwrap();
        c.check(d.value.abs() <= 1e-3, format!("exterior point {k}: density {}", d.value));
    }
    // Global upper bound on a covering grid.
    let grid = GridSpec { re_min: -1.3, re_max: 1.3, im_min: -1.3, im_max: 1.3, nx: 41, ny: 41 };
    let field = brown_field(&model, grid, true, h).unwrap();
    let max_density = field
        .density_vals
        .as_ref()
        .unwrap()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    c.check(
        max_density <= inv_pi + 2e-2,
        format!("max grid density {max_density} > 1/π + 2e−2"),
    );
    // Sharp-edge one-sided values of the two-cluster deformation.
    let tc = two_cluster(64, 1.5, Field::Complex);
    for &phi in &[0.0, 0.6, -0.6, 1.2, -1.2] {
        let e = edge_at(&tc, c64::new(1.5, 0.0), c64::from_polar(1.0, phi));
        let inward = e.grad_f / e.grad_f.norm();
        let d = density(&tc, e.z0 + 0.005 * inward, h, &controls).unwrap();
        let jump = e.gamma0.norm_sqr() * inv_pi;
        c.check(
            (d.value - jump).abs() <= 0.05 * jump,
            format!("edge φ={phi}: one-sided density {} vs |γ₀|²/π = {jump}", d.value),
        );
    }
    c.finish();
}

#[test]
fn criterion_04_fluctuation_scale() {
    let _g = gate();
    let mut c = Criterion::start(4, "fluctuation scale", 120.0);
    let controls = SigmaControls::default();
    // A = 0, N = 10⁴: σ_f at the sharp edge equals √(2/N).
    let zero = zero_model(64, Field::Complex);
    let n = 10_000;
    let s = sigma_f(&zero, c64::new(1.0, 0.0), n, &controls).unwrap();
    let want = (2.0 / n as f64).sqrt();
    c.check(
        (s - want).abs() <= 0.05 * want,
        format!("σ_f at the Ginibre edge: {s} vs √(2/N) = {want}"),
    );
    // Closed-form comparison at 20 sharp-edge points of two deformations.
    let tc = two_cluster(64, 1.5, Field::Complex);
    let th = three_cluster(66, Field::Complex);
    let mut points: Vec<(DeformedModel, EdgePoint)> = Vec::new();
    for &phi in &[0.0, 0.7, 1.4, 2.1, 2.8, 3.5, 4.2, 4.9, 5.6, 6.1] {
        points.push((tc.clone(), edge_at(&tc, c64::new(1.5, 0.0), c64::from_polar(1.0, phi))));
    }
    for (center, angles) in [
        (c64::new(2.0, 0.0), vec![0.0, 1.5, 3.0, 4.5]),
        (c64::new(0.0, 0.0), vec![0.8, 2.3, 3.9]),
        (c64::new(-2.0, 0.0), vec![0.5, 2.6, 4.7]),
    ] {
        for phi in angles {
            points.push((th.clone(), edge_at(&th, center, c64::from_polar(1.0, phi))));
        }
    }
    for (k, (m, e)) in points.iter().enumerate() {
        let num = sigma_f(m, e.z0, n, &controls).unwrap();
        let closed = sigma_f_closed(m, e.z0, n).unwrap();
        let ratio = num / closed;
        c.check(
            (0.2..=5.0).contains(&ratio),
            format!("edge point {k}: σ_f/σ_f^closed = {ratio}"),
        );
    }
    // Quadratic edge: σ_f ~ N^{−1/4}.
    let quad = two_cluster(64, 1.0, Field::Complex);
    let (xs, ys): (Vec<f64>, Vec<f64>) = [1e3, 1e4, 1e5]
        .iter()
        .map(|&nn| {
            let s = sigma_f(&quad, c64::new(0.0, 0.0), nn as usize, &controls).unwrap();
            ((nn as f64).ln(), s.ln())
        })
        .unzip();
    let slope = fit_slope(&xs, &ys);
    c.check(
        (-0.28..=-0.22).contains(&slope),
        format!("quadratic-edge N-exponent {slope}, want −1/4 ± 0.03"),
    );
    c.finish();
}

#[test]
fn criterion_05_path_validity() {
    let _g = gate();
    let mut c = Criterion::start(5, "path validity", 60.0);
    // Complex path from the inner edge of the two-cluster support.
    let tc = two_cluster(64, 1.5, Field::Complex);
    let inner = edge_at(&tc, c64::new(1.5, 0.0), c64::new(-1.0, 0.0));
    let opts = PathOptions { n: 256, delta: 0.005, samples: 512 };
    // Route the escape above the support: the straight-out default would
    // cross the cluster at +1.5.
    let waypoints = [inner.z0, inner.z0 + c64::new(0.0, 3.0), c64::new(0.0, 5.5)];
    let path = complex_path(&tc, inner.z0, Some(&waypoints), &opts).unwrap();
    let r = &path.report;
    c.check(r.max_f_dev <= 1e-10, format!("max |⟨|𝒜|⁻²⟩ − 1| = {}", r.max_f_dev));
    for (name, v) in [
        ("‖𝒜‖", r.max_norm),
        ("‖𝒜⁻¹‖", r.max_inv_norm),
        ("|I₃|", r.max_i3),
        ("I₄", r.max_i4),
        ("‖d𝒜/dt‖", r.max_da_dt),
    ] {
        c.check(v <= 1e3, format!("complex path bound {name} = {v} > 1e3"));
    }
    c.check(r.min_i4 >= 1e-3, format!("min I₄ = {}", r.min_i4));
    // Real paths at the two worked base points.
    let rc = two_cluster(64, 1.5, Field::Real);
    let nf = opts.n as f64;
    let e1 = edge_with_im(&rc, c64::new(1.5, 0.0), 0.3);
    let p1 = real_path(&rc, e1.z0, 0.05, &opts).unwrap();
    c.check(p1.regime == PathRegime::RealA1, format!("regime at Im z₀ = 0.3: {:?}", p1.regime));
    c.check(p1.report.max_f_dev <= 1e-10, format!("A1 max f dev {}", p1.report.max_f_dev));
    let min_theta = p1.report.min_abs_theta.unwrap_or(0.0);
    c.check(
        min_theta > nf.powf(-0.5),
        format!("A1: min |θ| = {min_theta} ≤ N^(-1/2)"),
    );
    let e2 = edge_at(&rc, c64::new(1.5, 0.0), c64::new(1.0, 0.0));
    let p2 = real_path(&rc, e2.z0, 0.05, &opts).unwrap();
    c.check(p2.regime == PathRegime::RealA2, format!("regime at real z₀: {:?}", p2.regime));
    c.check(p2.report.max_f_dev <= 1e-10, format!("A2 max f dev {}", p2.report.max_f_dev));
    let deriv = p2.report.max_i4_theta_deriv.unwrap_or(f64::INFINITY);
    c.check(
        deriv <= nf.powf(-0.5),
        format!("A2: max |d(I₄^(-1/2)θ)/dt| = {deriv} > N^(-1/2)"),
    );
    c.finish();
}

#[test]
fn criterion_06_characteristic_flow() {
    let _g = gate();
    let mut c = Criterion::start(6, "characteristic flow", 60.0);
    let controls = RkControls::default();
    let zero = zero_model(6, Field::Complex);
    let tc = two_cluster(8, 1.5, Field::Complex);
    let cases: Vec<(&DeformedModel, c64, f64)> = vec![
        (&zero, c64::new(0.0, 0.0), 1.0),
        (&zero, c64::new(0.5, 0.2), 0.5),
        (&zero, c64::new(1.0, 0.0), 2.0),
        (&zero, c64::new(-0.3, 0.8), 1.5),
        (&zero, c64::new(2.0, 0.0), 0.8),
        (&tc, c64::new(1.5, 0.0), 1.0),
        (&tc, c64::new(0.0, 0.0), 0.5),
        (&tc, c64::new(1.0, 0.5), 2.0),
        (&tc, c64::new(-1.5, 0.1), 1.2),
        (&tc, c64::new(0.7, -0.4), 0.6),
    ];
    for (k, (m, z, eta0)) in cases.iter().enumerate() {
        let traj = characteristic_flow(m, *z, *eta0, 3.0, &controls).unwrap();
        let base = traj.samples[0].im_m;
        let mut worst = 0.0_f64;
        for s in &traj.samples {
            let want = (s.t / 2.0).exp() * base;
            worst = worst.max((s.im_m - want).abs() / want.abs());
        }
        c.check(worst <= 1e-8, format!("trajectory {k}: e^(t/2) law deviation {worst:.2e}"));
    }
    // Zig-zag schedule invariants.
    let zr = zero_model(2, Field::Real);
    let z = c64::new(1.0, 0.0);
    let (n, eps, eps0) = (4096usize, 0.2, 0.05);
    let sched = zigzag_schedule(&zr, z, n, eps, eps0).unwrap();
    for (k, r) in sched.reconstruction(&zr, z).unwrap().iter().enumerate() {
        c.check(r.abs() <= 1e-8, format!("schedule step {k}: reconstruction residual {r:.2e}"));
    }
    let bound = (n as f64).powf(-eps0 / 100.0) * (-sched.t_total).exp();
    for (k, w) in sched.etas.windows(2).enumerate() {
        c.check(
            w[1] / w[0] >= bound - 1e-12,
            format!("schedule step {k}: η ratio {} below {bound}", w[1] / w[0]),
        );
    }
    c.finish();
}

#[test]
fn criterion_07_local_law_scaling() {
    let _g = gate();
    let mut c = Criterion::start(7, "local law scaling", 1200.0);
    let n = 512;
    let trials = 100;
    let etas = logspace((n as f64).powf(-0.9), 0.3, 6);
    for (label, model, z) in [
        ("A=0", zero_model(n, Field::Complex), c64::new(0.2, 0.1)),
        ("two-cluster", two_cluster(n, 1.5, Field::Complex), c64::new(1.2, 0.1)),
    ] {
        let r = local_law(&model, z, &etas, trials, 0xC7).unwrap();
        c.check(
            (-1.2..=-0.8).contains(&r.slope),
            format!("{label}: averaged-error slope {}", r.slope),
        );
        for (i, &eta) in etas.iter().enumerate() {
            let target = (r.rho[i] / (n as f64 * eta)).sqrt();
            let ratio = r.p95_iso_err[i] / target;
            c.check(
                (0.1..=10.0).contains(&ratio),
                format!("{label}: isotropic p95 at η={eta:.2e} is {ratio:.2}× √(ρ/Nη)"),
            );
        }
    }
    c.finish();
}

#[test]
fn criterion_08_no_outliers() {
    let _g = gate();
    let mut c = Criterion::start(8, "no outliers", 900.0);
    let n = 512;
    let trials = 200;
    let controls = SpecEpsControls::default();
    for (label, model) in [
        ("A=0", zero_model(n, Field::Complex)),
        ("two-cluster", two_cluster(n, 1.5, Field::Complex)),
    ] {
        let r = no_outlier(&model, 0.25, trials, 0xC8, &controls).unwrap();
        c.check(
            r.violations == 0,
            format!("{label}: {} of {trials} trials put an eigenvalue outside Spec_ε", r.violations),
        );
    }
    // Explicit inter-cluster gap count for the two-cluster model.
    let tc = two_cluster(n, 1.5, Field::Complex);
    let mut gap = 0usize;
    for t in 0..trials {
        let x = sample_iid(&tc, util::derive_seed(0xC8, t as u64));
        let b = &tc.a + &x.entries;
        for lambda in brownlab::ensembles::eigenvalues(&b).unwrap() {
            if lambda.re.abs() <= 0.5 {
                gap += 1;
            }
        }
    }
    c.check(gap == 0, format!("{gap} eigenvalues landed in the inter-cluster gap"));
    c.finish();
}

#[test]
fn criterion_09_cluster_rigidity() {
    let _g = gate();
    let mut c = Criterion::start(9, "cluster rigidity", 600.0);
    let trials = 200;
    let controls = SpecEpsControls::default();
    for (label, model) in [
        ("two-cluster", two_cluster(200, 1.5, Field::Complex)),
        ("three-cluster", three_cluster(200, Field::Complex)),
    ] {
        let r = cluster_count(&model, 0.25, trials, 0xC9, &controls).unwrap();
        c.check(
            r.mismatched_trials == 0,
            format!(
                "{label}: counts differed from {:?} in {} of {trials} trials",
                r.expected, r.mismatched_trials
            ),
        );
    }
    c.finish();
}

fn check_edge_profile(c: &mut Criterion, label: &str, model: &DeformedModel, edge: &EdgePoint) {
    let stats = edge_statistics(model, edge, 4000, 0xCA, Window::default()).unwrap();
    let (dev, allow) = p1_profile_deviation(&stats, 0.03);
    c.check(
        dev <= allow,
        format!("{label}: p₁ sup deviation {dev:.4} > allowance {allow:.4}"),
    );
    // Deep bulk (Re w ≤ −3) must flatten out at 1/π.
    let w = &stats.window;
    let mut acc = 0.0;
    let mut count = 0usize;
    for (i, &p) in stats.p1.iter().enumerate() {
        if w.bin_center(i).re <= -3.0 {
            acc += p;
            count += 1;
        }
    }
    let bulk = acc / count as f64;
    let inv_pi = 1.0 / std::f64::consts::PI;
    c.check(
        (bulk - inv_pi).abs() <= 0.05 * inv_pi,
        format!("{label}: deep-bulk intensity {bulk} vs 1/π"),
    );
}

#[test]
fn criterion_10_edge_statistics() {
    let _g = gate();
    let mut c = Criterion::start(10, "edge statistics vs Ginibre kernel", 2700.0);
    let n = 256;
    let zero = zero_model(n, Field::Complex);
    let e0 = edge_at(&zero, c64::new(0.0, 0.0), c64::new(1.0, 0.0));
    check_edge_profile(&mut c, "Ginibre z₀=1", &zero, &e0);
    let tc = two_cluster(n, 1.5, Field::Complex);
    let e1 = edge_at(&tc, c64::new(1.5, 0.0), c64::new(1.0, 0.0));
    check_edge_profile(&mut c, "two-cluster outer edge", &tc, &e1);
    c.finish();
}

#[test]
fn criterion_11_real_case_comparison() {
    let _g = gate();
    let mut c = Criterion::start(11, "real-case comparison", 5400.0);
    let n = 256;
    let trials = 4000;
    let rc = two_cluster(n, 1.5, Field::Real);
    let gin = zero_model(n, Field::Real);
    for &im in &[0.0, 0.3] {
        let edge = if im == 0.0 {
            edge_at(&rc, c64::new(1.5, 0.0), c64::new(1.0, 0.0))
        } else {
            edge_with_im(&rc, c64::new(1.5, 0.0), im)
        };
        // Matched real-Ginibre base point on the unit circle.
        let im1 = if im == 0.0 {
            0.0
        } else {
            edge.gamma0.norm().min(1.0 / im.abs()) * im
        };
        let z1 = c64::new((1.0 - im1 * im1).max(0.0).sqrt(), im1);
        let gedge = edge_at(&gin, c64::new(0.0, 0.0), z1);
        let s_model = edge_statistics(&rc, &edge, trials, 0xCB, Window::default()).unwrap();
        let s_gin = edge_statistics(&gin, &gedge, trials, 0xCC, Window::default()).unwrap();
        let r = chi2_two_sample(&s_model.counts, &s_gin.counts).unwrap();
        c.check(
            r.p_value >= 0.01,
            format!(
                "Im z₀ = {im}: χ² = {:.1} at {} dof, p = {:.4}",
                r.statistic, r.dof, r.p_value
            ),
        );
    }
    c.finish();
}

#[test]
fn criterion_12_exact_identities() {
    let _g = gate();
    let mut c = Criterion::start(12, "exact identities on samples", 600.0);
    // Girko formula on one sample each of two models.
    let zero = zero_model(64, Field::Complex);
    let g1 = girko_identity_test(&zero, &Bump { center: [0.0, 0.0], radius: 0.5 }, 0xCD, 64).unwrap();
    c.check(
        g1.residual <= 1e-3 * g1.delta_f_l1,
        format!("Girko (A=0): residual {} vs {}", g1.residual, 1e-3 * g1.delta_f_l1),
    );
    let tc = two_cluster(48, 1.5, Field::Complex);
    let g2 = girko_identity_test(&tc, &Bump { center: [1.5, 0.0], radius: 0.5 }, 0xCE, 64).unwrap();
    c.check(
        g2.residual <= 1e-3 * g2.delta_f_l1,
        format!("Girko (two-cluster): residual {} vs {}", g2.residual, 1e-3 * g2.delta_f_l1),
    );
    // L₀ and N₀ route agreements at a deformed edge.
    let tcn = two_cluster(128, 1.5, Field::Complex);
    let edge = edge_at(&tcn, c64::new(1.5, 0.0), c64::new(1.0, 0.0));
    let obs = girko_observables(&tcn, &edge, c64::new(0.3, -0.2), 20, 0xCF, 0.005).unwrap();
    for (k, s) in obs.samples.iter().enumerate() {
        c.check(
            (s.l0_direct - s.l0_integral).abs() <= 1e-6 * tcn.n as f64,
            format!("trial {k}: L₀ routes {} vs {}", s.l0_direct, s.l0_integral),
        );
        c.check(
            (s.n0 - s.n0_herm).abs() <= 1e-12 * s.n0.abs().max(1.0),
            format!("trial {k}: N₀ routes {} vs {}", s.n0, s.n0_herm),
        );
    }
    // Smallest-singular-value tail bound.
    let zero256 = zero_model(256, Field::Complex);
    let e = edge_at(&zero256, c64::new(0.0, 0.0), c64::new(1.0, 0.0));
    let tail = smallest_singular_tail(&zero256, &e, c64::new(0.0, 0.0), 2000, 0xD0, 0.005).unwrap();
    c.check(
        tail.pass,
        format!(
            "tail: empirical {} vs bound {} (± {})",
            tail.p_hat, tail.bound, tail.bound_se
        ),
    );
    c.finish();
}
