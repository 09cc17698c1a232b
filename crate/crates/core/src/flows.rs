//! Deterministic deformation paths `𝒜_t`, the characteristic η-flow ODE, and
//! the zig-zag scale schedule used by the flow-interpolation arguments.

use crate::ensembles::DeformedModel;
use crate::mde::{solve_atoms, Atoms};
use crate::util::{c64, Error, Result};
use ndarray::Array2;
use ndarray_linalg::Inverse;
use serde::Serialize;

/// Normalization scalars of a matrix `𝒜` with `⟨|𝒜|⁻²⟩ = 1`:
/// `I₃ = ⟨𝒜^* |𝒜|⁻⁴⟩`, `I₄ = ⟨|𝒜|⁻⁴⟩`, `c = I₄^{−1/4}`, `γ = −I₄^{−1/2} I₃`,
/// and the rescaled spectral parameter `η = η₁ / c`.
#[derive(Debug, Clone, Copy)]
pub struct ScalingParams {
    pub i3: c64,
    pub i4: f64,
    pub c: f64,
    pub gamma: c64,
    pub eta: f64,
}

/// `η₁ = N^{−3/4−δ}`; `δ` must satisfy `0 < δ < 1/100`.
pub fn eta1(n: usize, delta: f64) -> Result<f64> {
    if delta <= 0.0 || delta > 0.01 {
        return Err(Error::InvalidInput(format!("delta = {delta} outside (0, 1/100]")));
    }
    Ok((n as f64).powf(-0.75 - delta))
}

/// Control parameter `Ψ = 1/(N η₁)`.
pub fn psi(n: usize, eta1: f64) -> f64 {
    1.0 / (n as f64 * eta1)
}

pub fn scaling_params(a: &DeformedModel, eta1: f64) -> Result<ScalingParams> {
    let pd = crate::brown::point_data(a, c64::new(0.0, 0.0))?;
    let c = pd.i4.powf(-0.25);
    Ok(ScalingParams {
        i3: pd.i3,
        i4: pd.i4,
        c,
        gamma: -pd.i3 / pd.i4.sqrt(),
        eta: eta1 / c,
    })
}

/// `θ = 1 − ⟨(𝒜 𝒜^T)⁻¹⟩` for an arbitrary (possibly complex) matrix.
fn theta_of(a: &DeformedModel) -> Result<c64> {
    if let Some(d) = &a.diag {
        let mut acc = c64::new(0.0, 0.0);
        for &v in d {
            let v2 = v * v;
            if v2.norm() < 1e-28 {
                return Err(Error::InvalidInput("𝒜 𝒜^T is singular".into()));
            }
            acc += 1.0 / v2;
        }
        Ok(c64::new(1.0, 0.0) - acc / d.len() as f64)
    } else {
        let at = a.a.t().to_owned();
        let prod = a.a.dot(&at);
        let inv = prod
            .inv()
            .map_err(|_| Error::InvalidInput("𝒜 𝒜^T is singular".into()))?;
        let n = a.n;
        let mut tr = c64::new(0.0, 0.0);
        for i in 0..n {
            tr += inv[[i, i]];
        }
        Ok(c64::new(1.0, 0.0) - tr / n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PathRegime {
    Complex,
    RealA1,
    RealA2,
}

/// One sample of a matrix path, with every normalization scalar re-evaluated.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub t: f64,
    /// Base point `ẑ_t`; `None` at the ideal endpoint `ẑ = ∞`.
    pub z_hat: Option<c64>,
    pub a_t: DeformedModel,
    /// `⟨|𝒜_t|⁻²⟩`, which must equal 1.
    pub f_check: f64,
    pub i3: c64,
    pub i4: f64,
    pub c: f64,
    pub gamma: c64,
    pub eta: f64,
    /// `θ_t`; populated for real base deformations.
    pub theta: Option<c64>,
    pub norm_a: f64,
    pub inv_norm_a: f64,
}

/// Per-path bound report (the boundedness assumptions, evaluated not assumed).
#[derive(Debug, Clone, Default, Serialize)]
pub struct PathCheckReport {
    pub max_norm: f64,
    pub max_inv_norm: f64,
    pub max_i3: f64,
    pub max_i4: f64,
    pub min_i4: f64,
    /// Largest deviation of `⟨|𝒜_t|⁻²⟩` from 1.
    pub max_f_dev: f64,
    /// Largest finite-difference `‖d𝒜_t/dt‖_F`.
    pub max_da_dt: f64,
    /// Real-regime diagnostics (A1/A2), absent for complex paths.
    pub min_abs_theta: Option<f64>,
    pub max_abs_theta: Option<f64>,
    /// `max |θ⁻² dθ/dt|` (A1 inequality).
    pub max_theta_ratio_deriv: Option<f64>,
    /// `max |d(I₄^{−1/2} θ)/dt|` (A2 inequality).
    pub max_i4_theta_deriv: Option<f64>,
    /// `max ‖d Im 𝒜_t/dt‖_F` (A2 inequality).
    pub max_d_im_a_dt: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PathSpec {
    pub samples: Vec<PathSample>,
    pub regime: PathRegime,
    pub n: usize,
    pub delta: f64,
    pub report: PathCheckReport,
}

/// Number of uniform path samples.
pub const PATH_SAMPLES: usize = 512;

/// Build the normalized sample `𝒜 = ⟨|A−ẑ|⁻²⟩^{1/2}(A−ẑ)` at a finite `ẑ`.
fn sample_at(model: &DeformedModel, t: f64, z_hat: c64, eta1: f64, want_theta: bool) -> Result<PathSample> {
    let f = crate::brown::f_a(model, z_hat)?;
    let c_norm = f.sqrt();
    let mut a = model.shifted(z_hat);
    a.mapv_inplace(|v| v * c_norm);
    finish_sample(t, Some(z_hat), a, eta1, want_theta)
}

/// Endpoint sample `𝒜₁ = −z₁·Id` for a unimodular `z₁`.
fn sample_endpoint(model: &DeformedModel, t: f64, z1: c64, eta1: f64, want_theta: bool) -> Result<PathSample> {
    let n = model.n;
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        a[[i, i]] = -z1;
    }
    finish_sample(t, None, a, eta1, want_theta)
}

fn finish_sample(t: f64, z_hat: Option<c64>, a: Array2<c64>, eta1: f64, want_theta: bool) -> Result<PathSample> {
    let m = DeformedModel::from_matrix(a, crate::ensembles::Field::Complex, crate::ensembles::Dist::Gaussian, format!("path(t={t:.4})"))?;
    let pd = crate::brown::point_data(&m, c64::new(0.0, 0.0))?;
    let c = pd.i4.powf(-0.25);
    let theta = if want_theta { Some(theta_of(&m)?) } else { None };
    let norm_a = m.norm_a;
    Ok(PathSample {
        t,
        z_hat,
        f_check: pd.f,
        i3: pd.i3,
        i4: pd.i4,
        c,
        gamma: -pd.i3 / pd.i4.sqrt(),
        eta: eta1 / c,
        theta,
        norm_a,
        inv_norm_a: pd.inv_norm,
        a_t: m,
    })
}

fn frob_diff(a: &Array2<c64>, b: &Array2<c64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

fn frob_im_diff(a: &Array2<c64>, b: &Array2<c64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x.im - y.im;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn build_report(samples: &[PathSample], regime: PathRegime) -> PathCheckReport {
    let mut r = PathCheckReport {
        min_i4: f64::INFINITY,
        ..Default::default()
    };
    for s in samples {
        r.max_norm = r.max_norm.max(s.norm_a);
        r.max_inv_norm = r.max_inv_norm.max(s.inv_norm_a);
        r.max_i3 = r.max_i3.max(s.i3.norm());
        r.max_i4 = r.max_i4.max(s.i4);
        r.min_i4 = r.min_i4.min(s.i4);
        r.max_f_dev = r.max_f_dev.max((s.f_check - 1.0).abs());
    }
    for w in samples.windows(2) {
        let dt = w[1].t - w[0].t;
        if dt <= 0.0 {
            continue;
        }
        let d = frob_diff(&w[1].a_t.a, &w[0].a_t.a) / dt;
        r.max_da_dt = r.max_da_dt.max(d);
        if regime != PathRegime::Complex {
            let dim = frob_im_diff(&w[1].a_t.a, &w[0].a_t.a) / dt;
            r.max_d_im_a_dt = Some(r.max_d_im_a_dt.unwrap_or(0.0).max(dim));
            if let (Some(t0), Some(t1)) = (w[0].theta, w[1].theta) {
                let dtheta = (t1 - t0).norm() / dt;
                let mid = 0.5 * (t0 + t1);
                if mid.norm() > 0.0 {
                    let v = dtheta / mid.norm_sqr();
                    r.max_theta_ratio_deriv = Some(r.max_theta_ratio_deriv.unwrap_or(0.0).max(v));
                }
                let g0 = w[0].i4.powf(-0.5) * t0;
                let g1 = w[1].i4.powf(-0.5) * t1;
                let v = (g1 - g0).norm() / dt;
                r.max_i4_theta_deriv = Some(r.max_i4_theta_deriv.unwrap_or(0.0).max(v));
            }
        }
    }
    if regime != PathRegime::Complex {
        let thetas: Vec<f64> = samples.iter().filter_map(|s| s.theta.map(|t| t.norm())).collect();
        r.min_abs_theta = thetas.iter().copied().reduce(f64::min);
        r.max_abs_theta = thetas.iter().copied().reduce(f64::max);
    }
    r
}

/// Options shared by the path builders.
#[derive(Debug, Clone, Copy)]
pub struct PathOptions {
    pub n: usize,
    pub delta: f64,
    pub samples: usize,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self { n: 4096, delta: 0.005, samples: PATH_SAMPLES }
    }
}

/// Deterministic escape path for complex deformations: `ẑ_t` runs from the
/// sharp edge `z₀` through the given waypoints (default: straight to `C″z₁`
/// with `C″ = 2(1+‖A‖)`), then along the ray `z₁·[C″, ∞)`; the matrix path is
/// `𝒜_t = ⟨|A−ẑ_t|⁻²⟩^{1/2}(A−ẑ_t)` with endpoint `𝒜₁ = −z₁`.
pub fn complex_path(
    model: &DeformedModel,
    z0: c64,
    waypoints: Option<&[c64]>,
    opts: &PathOptions,
) -> Result<PathSpec> {
    let want_theta = model.a.iter().all(|v| v.im == 0.0);
    build_escape_path(model, z0, waypoints, opts, c64::new(0.0, 0.0), want_theta, PathRegime::Complex)
}

/// Shared escape-path builder; `lift` is added to every finite base point
/// (used by the real A1 regime to keep `Im ẑ` bounded away from 0).
fn build_escape_path(
    model: &DeformedModel,
    z0: c64,
    waypoints: Option<&[c64]>,
    opts: &PathOptions,
    lift: c64,
    want_theta: bool,
    regime: PathRegime,
) -> Result<PathSpec> {
    let eta1 = eta1(opts.n, opts.delta)?;
    let c2 = 2.0 * (1.0 + model.norm_a);
    let z1 = if z0.norm() > 1e-12 { z0 / z0.norm() } else { c64::new(1.0, 0.0) };
    let default_wp = [z0, c2 * z1];
    let wp: Vec<c64> = match waypoints {
        Some(w) => {
            if w.first().map(|p| (p - z0).norm() > 1e-9).unwrap_or(true) {
                return Err(Error::InvalidInput("waypoints must start at z₀".into()));
            }
            w.to_vec()
        }
        None => default_wp.to_vec(),
    };
    let escape = *wp.last().unwrap();
    if escape.norm() < c2 - 1e-9 {
        return Err(Error::InvalidInput(format!(
            "last waypoint |{escape}| must reach the escape radius C″ = {c2}"
        )));
    }
    // Direction of the outgoing ray (also fixes the endpoint, up to the lift).
    let ray_dir = escape / escape.norm();
    let half = opts.samples / 2;
    let mut samples = Vec::with_capacity(opts.samples + 1);
    // First half: polyline through the waypoints, arclength-uniform in t.
    let seg_len: Vec<f64> = wp.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let total: f64 = seg_len.iter().sum();
    for k in 0..half {
        let t = 0.5 * k as f64 / half as f64;
        let mut target = 2.0 * t * total;
        let mut z = wp[0];
        for (seg, &len) in wp.windows(2).zip(&seg_len) {
            if target <= len || len == 0.0 {
                let frac = if len > 0.0 { target / len } else { 0.0 };
                z = seg[0] + frac * (seg[1] - seg[0]);
                break;
            }
            target -= len;
            z = seg[1];
        }
        samples.push(sample_at(model, t, z + lift, eta1, want_theta)?);
    }
    // Second half: ray to infinity, parameterized so 1/|ẑ| is linear in t.
    let r0 = escape.norm();
    for k in 0..=(opts.samples - half) {
        let t = 0.5 + 0.5 * k as f64 / (opts.samples - half) as f64;
        if t >= 1.0 {
            // Ideal endpoint: lim 𝒜_t = −(direction of ẑ) with the lift
            // washed out by |ẑ| → ∞.
            samples.push(sample_endpoint(model, 1.0, ray_dir, eta1, want_theta)?);
        } else {
            let radius = r0 / (2.0 * (1.0 - t));
            samples.push(sample_at(model, t, radius * ray_dir + lift, eta1, want_theta)?);
        }
    }
    let report = build_report(&samples, regime);
    Ok(PathSpec { samples, regime, n: opts.n, delta: opts.delta, report })
}

/// Real-deformation path. The regime is chosen by comparing `|Im z₀|` against
/// `N^{−1/2+𝔠}`:
/// - A1 (`|Im z₀|` at least the threshold): the escape path lifted by `iτ`,
///   which keeps `|θ_t|` well above `N^{−1/2}`.
/// - A2 (below the threshold): `Re ẑ_t = Re z₀ + t/(1−t)` with
///   `Im ẑ_t = f(Re ẑ_t)/f(Re z₀) · Im z₀`, which keeps `I₄^{−1/2}θ_t`
///   nearly constant.
pub fn real_path(model: &DeformedModel, z0: c64, c_frak: f64, opts: &PathOptions) -> Result<PathSpec> {
    if model.a.iter().any(|v| v.im != 0.0) {
        return Err(Error::InvalidInput("real paths require a real deformation".into()));
    }
    let nf = opts.n as f64;
    let threshold = nf.powf(-0.5 + c_frak);
    if z0.im.abs() >= threshold {
        // Regime A1: mirror to the upper half plane if needed, lift by iτ.
        let flip = z0.im < 0.0;
        let z0u = if flip { z0.conj() } else { z0 };
        let dist = spec_distance(model, z0u);
        let tau = 0.1 * dist;
        let mut path = build_escape_path(
            model,
            z0u,
            None,
            opts,
            c64::new(0.0, tau),
            true,
            PathRegime::RealA1,
        )?;
        if flip {
            conjugate_path(&mut path);
        }
        Ok(path)
    } else {
        real_path_a2(model, z0, opts)
    }
}

fn conjugate_path(path: &mut PathSpec) {
    for s in &mut path.samples {
        s.z_hat = s.z_hat.map(|z| z.conj());
        s.a_t.a.mapv_inplace(|v| v.conj());
        if let Some(d) = &mut s.a_t.diag {
            for v in d.iter_mut() {
                *v = v.conj();
            }
        }
        s.i3 = s.i3.conj();
        s.gamma = s.gamma.conj();
        s.theta = s.theta.map(|t| t.conj());
    }
    // Bound magnitudes are conjugation-invariant; the report stands.
}

fn spec_distance(model: &DeformedModel, z: c64) -> f64 {
    let eigs: Vec<c64> = match &model.diag {
        Some(d) => d.clone(),
        None => crate::ensembles::eigenvalues(&model.a).unwrap_or_default(),
    };
    eigs.iter()
        .map(|l| (l - z).norm())
        .fold(f64::INFINITY, f64::min)
        .min(1.0 + z.norm())
}

/// The A2 ratio function
/// `f(x) = ⟨|A−x|⁻⁴⟩^{−1/2} ⟨|A−x|⁻²⟩^{−1} ⟨((A−x)²(A−x)^T)⁻¹⟩`.
fn a2_ratio(model: &DeformedModel, x: f64) -> Result<f64> {
    if let Some(d) = &model.diag {
        let mut f = 0.0;
        let mut i4 = 0.0;
        let mut cube = 0.0;
        for v in d {
            let b = v.re - x; // diagonal of a real model
            if b.abs() < 1e-14 {
                return Err(Error::InvalidInput("A2 path crosses Spec(A)".into()));
            }
            f += 1.0 / (b * b);
            i4 += 1.0 / (b * b * b * b);
            cube += 1.0 / (b * b * b);
        }
        let n = d.len() as f64;
        Ok((i4 / n).powf(-0.5) * (n / f) * (cube / n))
    } else {
        let b = model.shifted(c64::new(x, 0.0));
        let svals = crate::ensembles::singular_values(&b)?;
        let n = svals.len() as f64;
        let f: f64 = svals.iter().map(|s| 1.0 / (s * s)).sum::<f64>() / n;
        let i4: f64 = svals.iter().map(|s| 1.0 / (s * s * s * s)).sum::<f64>() / n;
        let bt = b.t().to_owned();
        let prod = b.dot(&b).dot(&bt);
        let inv = prod
            .inv()
            .map_err(|_| Error::InvalidInput("A2 path crosses Spec(A)".into()))?;
        let mut tr = c64::new(0.0, 0.0);
        for i in 0..inv.nrows() {
            tr += inv[[i, i]];
        }
        Ok(i4.powf(-0.5) / f * (tr.re / n))
    }
}

fn real_path_a2(model: &DeformedModel, z0: c64, opts: &PathOptions) -> Result<PathSpec> {
    let eta1 = eta1(opts.n, opts.delta)?;
    let f0 = a2_ratio(model, z0.re)?;
    if f0.abs() < 1e-14 {
        return Err(Error::InvalidInput("A2 ratio vanishes at Re z₀".into()));
    }
    let mut samples = Vec::with_capacity(opts.samples + 1);
    for k in 0..opts.samples {
        let t = k as f64 / opts.samples as f64;
        let x = z0.re + t / (1.0 - t);
        let y = a2_ratio(model, x)? / f0 * z0.im;
        samples.push(sample_at(model, t, c64::new(x, y), eta1, true)?);
    }
    // Ideal endpoint: direction of ẑ_t as Re ẑ → ∞.
    let x_big = z0.re + 1e8;
    let y_big = a2_ratio(model, x_big)? / f0 * z0.im;
    let dir = c64::new(x_big, y_big);
    samples.push(sample_endpoint(model, 1.0, dir / dir.norm(), eta1, true)?);
    let report = build_report(&samples, PathRegime::RealA2);
    Ok(PathSpec { samples, regime: PathRegime::RealA2, n: opts.n, delta: opts.delta, report })
}

impl PathSpec {
    /// CSV rows, one per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "t,re_zhat,im_zhat,f_check,re_i3,im_i3,i4,c,re_gamma,im_gamma,eta,re_theta,im_theta,norm,inv_norm\n",
        );
        for s in &self.samples {
            let (zr, zi) = s
                .z_hat
                .map(|z| (format!("{}", z.re), format!("{}", z.im)))
                .unwrap_or_default();
            let (tr, ti) = s
                .theta
                .map(|t| (format!("{}", t.re), format!("{}", t.im)))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                s.t, zr, zi, s.f_check, s.i3.re, s.i3.im, s.i4, s.c, s.gamma.re, s.gamma.im,
                s.eta, tr, ti, s.norm_a, s.inv_norm_a
            ));
        }
        out
    }
}

/// One accepted step of a characteristic trajectory.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CharSample {
    pub t: f64,
    pub eta: f64,
    /// `Im⟨M_{𝒜_t}(iη_t)⟩` (unnormalized).
    pub im_m: f64,
    /// `ρ_t = Im⟨M⟩/π`.
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct CharTrajectory {
    pub samples: Vec<CharSample>,
    /// Time at which `η` hits 0, when reached before `t_max`.
    pub terminal: Option<f64>,
    pub steps: usize,
    pub rejected: usize,
}

/// Integrator controls for the characteristic flow.
#[derive(Debug, Clone, Copy)]
pub struct RkControls {
    /// Local error tolerance, relative to `η`.
    pub tol: f64,
    /// Smallest allowed step.
    pub floor: f64,
    pub initial_step: f64,
}

impl Default for RkControls {
    fn default() -> Self {
        Self { tol: 1e-10, floor: 1e-8, initial_step: 1e-3 }
    }
}

/// Internal driver: integrate `dη/dt = −η/2 − Im⟨M_{r₀ e^{−t/2}(A−z)}(iη)⟩`
/// from `(0, η₀)` to `t_max`, stopping early if `η` reaches 0.
struct FlowDriver {
    atoms: Atoms,
    r0: f64,
}

impl FlowDriver {
    fn rhs(&self, t: f64, eta: f64) -> Result<f64> {
        if eta <= 0.0 {
            return Err(Error::InvalidInput(format!("flow left η > 0 (η = {eta})")));
        }
        let scale = self.r0 * (-0.5 * t).exp();
        let scaled = Atoms {
            s: self.atoms.s.iter().map(|s| s * scale).collect(),
            w: self.atoms.w.clone(),
        };
        let sol = solve_atoms(&scaled, eta)?;
        Ok(-0.5 * eta - sol.im_m())
    }

    fn rk4(&self, t: f64, eta: f64, h: f64) -> Result<f64> {
        let k1 = self.rhs(t, eta)?;
        let k2 = self.rhs(t + 0.5 * h, (eta + 0.5 * h * k1).max(1e-300))?;
        let k3 = self.rhs(t + 0.5 * h, (eta + 0.5 * h * k2).max(1e-300))?;
        let k4 = self.rhs(t + h, (eta + h * k3).max(1e-300))?;
        Ok(eta + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    }

    /// Adaptive RK4 with step doubling.
    fn integrate(&self, eta0: f64, t_max: f64, controls: &RkControls) -> Result<CharTrajectory> {
        if eta0 <= 0.0 {
            return Err(Error::InvalidInput(format!("η₀ = {eta0} must be positive")));
        }
        let mut t = 0.0;
        let mut eta = eta0;
        let mut h = controls.initial_step.min(t_max.max(1e-12));
        let mut samples = Vec::new();
        let record = |samples: &mut Vec<CharSample>, drv: &Self, t: f64, eta: f64| -> Result<()> {
            let scale = drv.r0 * (-0.5 * t).exp();
            let scaled = Atoms {
                s: drv.atoms.s.iter().map(|s| s * scale).collect(),
                w: drv.atoms.w.clone(),
            };
            let sol = solve_atoms(&scaled, eta)?;
            samples.push(CharSample {
                t,
                eta,
                im_m: sol.im_m(),
                rho: sol.im_m() / std::f64::consts::PI,
            });
            Ok(())
        };
        record(&mut samples, self, t, eta)?;
        let mut steps = 0usize;
        let mut rejected = 0usize;
        let mut terminal = None;
        'outer: while t < t_max - 1e-15 {
            h = h.min(t_max - t);
            let full = self.rk4(t, eta, h);
            let half1 = self.rk4(t, eta, 0.5 * h);
            let step_result = match (full, half1) {
                (Ok(yf), Ok(y1)) if y1 > 0.0 => match self.rk4(t + 0.5 * h, y1, 0.5 * h) {
                    Ok(y2) => Some((yf, y2)),
                    Err(_) => None,
                },
                _ => None,
            };
            let (accept, new_eta) = match step_result {
                Some((yf, y2)) => {
                    let err = (yf - y2).abs() / 15.0;
                    let y = y2 + (y2 - yf) / 15.0; // Richardson extrapolation
                    if err <= controls.tol * eta.max(1e-14) || h <= controls.floor {
                        (true, y)
                    } else {
                        (false, y)
                    }
                }
                None => (false, f64::NAN),
            };
            if !accept {
                rejected += 1;
                h = (0.5 * h).max(controls.floor);
                if h == controls.floor && step_result.is_none() {
                    // η is collapsing inside the smallest step: treat as terminal.
                    terminal = Some(t);
                    break 'outer;
                }
                continue;
            }
            if new_eta <= 0.0 {
                // Bracket the zero crossing within this step.
                let mut lo = 0.0;
                let mut hi = h;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    match self.rk4(t, eta, mid) {
                        Ok(y) if y > 0.0 => lo = mid,
                        _ => hi = mid,
                    }
                    if hi - lo < 1e-12 * h.max(1e-12) {
                        break;
                    }
                }
                let t_star = t + lo;
                if lo > 0.0 {
                    if let Ok(y) = self.rk4(t, eta, lo) {
                        if y > 0.0 {
                            record(&mut samples, self, t_star, y)?;
                        }
                    }
                }
                terminal = Some(t_star);
                break 'outer;
            }
            t += h;
            eta = new_eta;
            steps += 1;
            record(&mut samples, self, t, eta)?;
            h = (h * 1.5).min(0.05 * (t_max.max(0.1)));
        }
        Ok(CharTrajectory { samples, terminal, steps, rejected })
    }

    /// η at an arbitrary time, re-integrating from the nearest recorded
    /// sample at or before `t` with fixed RK4 substeps.
    fn eta_at(&self, traj: &CharTrajectory, t: f64) -> Result<f64> {
        let idx = traj
            .samples
            .partition_point(|s| s.t <= t)
            .saturating_sub(1);
        let s = traj.samples[idx];
        let dt = t - s.t;
        if dt <= 0.0 {
            return Ok(s.eta);
        }
        let nsub = 8;
        let h = dt / nsub as f64;
        let mut eta = s.eta;
        let mut tt = s.t;
        for _ in 0..nsub {
            eta = self.rk4(tt, eta, h)?;
            tt += h;
            if eta <= 0.0 {
                return Err(Error::InvalidInput(format!("η crossed 0 before t = {t}")));
            }
        }
        Ok(eta)
    }
}

/// Characteristic flow for `𝒜_t = e^{−t/2}(A−z)`:
/// `dη/dt = −η/2 − Im⟨M_{𝒜_t}(iη_t)⟩`, integrated until `t_max` or until `η`
/// reaches 0.
pub fn characteristic_flow(
    model: &DeformedModel,
    z: c64,
    eta0: f64,
    t_max: f64,
    controls: &RkControls,
) -> Result<CharTrajectory> {
    let svals = model.svals_shifted(z)?;
    let driver = FlowDriver { atoms: Atoms::from_svals(&svals), r0: 1.0 };
    driver.integrate(eta0, t_max, controls)
}

/// The scale function `𝔰(η, r) = η / Im⟨M_{rA}(iη)⟩` (strictly increasing in
/// η), evaluated from the deduplicated singular values of the base matrix.
pub fn scale_s(atoms: &Atoms, eta: f64, r: f64) -> Result<f64> {
    let scaled = Atoms {
        s: atoms.s.iter().map(|s| s * r).collect(),
        w: atoms.w.clone(),
    };
    let sol = solve_atoms(&scaled, eta)?;
    Ok(eta / sol.im_m())
}

/// Zig-zag scale schedule.
#[derive(Debug, Clone, Serialize)]
pub struct ZigZagSchedule {
    pub n: usize,
    pub eps: f64,
    pub eps0: f64,
    /// Total flow time `T = N^{−ε₀}`.
    pub t_total: f64,
    pub eta_fin: f64,
    pub s_fin: f64,
    pub eta_in: f64,
    pub s_in: f64,
    /// `𝔰_k = 𝔰_in N^{−kε₀/100} ∨ 𝔰_fin`, `k = 0..=K`.
    pub scales: Vec<f64>,
    /// Times `t_k` solving `𝔰(η_{t_k}, e^{(T−t_k)/2}) = 𝔰_k`.
    pub times: Vec<f64>,
    /// `η_{t_k}` along the shooting trajectory.
    pub etas: Vec<f64>,
    /// Domains `D_k` as `(η_min, r_max)` pairs.
    pub domains: Vec<(f64, f64)>,
    pub k_final: usize,
}

/// Build the schedule: `η_fin` from `N η ρ^{A−z}(iη) = N^ε`, `η_in` by
/// shooting the characteristic from `e^{T/2}(A−z)` so that the scale at time
/// `T` equals `𝔰_fin`, and each `t_k` by root-finding on the decreasing map
/// `t ↦ 𝔰(η_t, e^{(T−t)/2})`.
pub fn zigzag_schedule(
    model: &DeformedModel,
    z: c64,
    n: usize,
    eps: f64,
    eps0: f64,
) -> Result<ZigZagSchedule> {
    if eps <= 0.0 || eps0 <= 0.0 || eps >= 1.0 || eps0 >= 1.0 {
        return Err(Error::InvalidInput(format!("need 0 < ε, ε₀ < 1, got ε={eps}, ε₀={eps0}")));
    }
    let nf = n as f64;
    let svals = model.svals_shifted(z)?;
    let atoms = Atoms::from_svals(&svals);
    // η_fin: N η Im⟨M(iη)⟩ = N^ε; the left side is strictly increasing in η.
    let target = nf.powf(eps);
    let g = |eta: f64| -> Result<f64> { Ok(nf * eta * solve_atoms(&atoms, eta)?.im_m()) };
    let mut lo = 1e-14;
    let mut hi = 1.0;
    while g(hi)? < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Bracket("η_fin bracket failed".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) < 1e-14 * hi {
            break;
        }
    }
    let eta_fin = 0.5 * (lo + hi);
    let s_fin = scale_s(&atoms, eta_fin, 1.0)?;
    let t_total = nf.powf(-eps0);
    let r0 = (0.5 * t_total).exp();
    let driver = FlowDriver { atoms: atoms.clone(), r0 };
    let controls = RkControls::default();
    // Shooting: the landing scale 𝔰(η_T, 1) is increasing in η_in.
    let land = |eta_in: f64| -> Result<Option<f64>> {
        let traj = driver.integrate(eta_in, t_total, &controls)?;
        if traj.terminal.is_some() {
            return Ok(None); // η died before T: η_in too small
        }
        let eta_t = traj.samples.last().unwrap().eta;
        Ok(Some(scale_s(&atoms, eta_t, 1.0)?))
    };
    let mut lo = eta_fin * 1e-3;
    let mut hi = eta_fin.max(1e-6);
    let mut bracketed = false;
    for _ in 0..60 {
        match land(hi)? {
            Some(s) if s >= s_fin => {
                bracketed = true;
                break;
            }
            _ => {
                lo = hi;
                hi *= 2.0;
            }
        }
        if hi > 1e9 {
            break;
        }
    }
    if !bracketed {
        return Err(Error::Bracket("η_in shooting failed to bracket 𝔰_fin".into()));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        match land(mid)? {
            Some(s) if s >= s_fin => hi = mid,
            _ => lo = mid,
        }
        if (hi - lo) < 1e-13 * hi {
            break;
        }
    }
    let eta_in = hi;
    let s_in = scale_s(&atoms, eta_in, r0)?;
    // Scale ladder and K.
    let step = nf.powf(-eps0 / 100.0);
    let mut scales = vec![s_in];
    while *scales.last().unwrap() > s_fin {
        let next = (scales.last().unwrap() * step).max(s_fin);
        scales.push(next);
        if scales.len() > 20_000 {
            return Err(Error::NoConvergence("scale ladder failed to terminate".into()));
        }
    }
    let k_final = scales.len() - 1;
    // Times t_k: root-find on the decreasing map φ(t) = 𝔰(η_t, e^{(T−t)/2}).
    let traj = driver.integrate(eta_in, t_total, &controls)?;
    if traj.terminal.is_some() {
        return Err(Error::NoConvergence("shooting trajectory died before T".into()));
    }
    let phi = |t: f64| -> Result<f64> {
        let eta = driver.eta_at(&traj, t)?;
        scale_s(&atoms, eta, ((t_total - t) * 0.5).exp())
    };
    let mut times = Vec::with_capacity(scales.len());
    let mut etas = Vec::with_capacity(scales.len());
    let mut domains = Vec::with_capacity(scales.len());
    let mut t_lo = 0.0;
    for (k, &sk) in scales.iter().enumerate() {
        let tk = if k == 0 {
            0.0
        } else if k == k_final {
            t_total
        } else {
            let mut a = t_lo;
            let mut b = t_total;
            for _ in 0..80 {
                let mid = 0.5 * (a + b);
                if phi(mid)? > sk {
                    a = mid;
                } else {
                    b = mid;
                }
                if b - a < 1e-13 * t_total.max(1e-6) {
                    break;
                }
            }
            0.5 * (a + b)
        };
        let eta_k = driver.eta_at(&traj, tk)?;
        times.push(tk);
        etas.push(eta_k);
        domains.push((eta_k, ((t_total - tk) * 0.5).exp()));
        t_lo = tk;
    }
    Ok(ZigZagSchedule {
        n,
        eps,
        eps0,
        t_total,
        eta_fin,
        s_fin,
        eta_in,
        s_in,
        scales,
        times,
        etas,
        domains,
        k_final,
    })
}

impl ZigZagSchedule {
    /// Reconstruction residuals `𝔰(η_{t_k}, e^{(T−t_k)/2})/𝔰_k − 1`.
    pub fn reconstruction(&self, model: &DeformedModel, z: c64) -> Result<Vec<f64>> {
        let atoms = Atoms::from_svals(&model.svals_shifted(z)?);
        self.times
            .iter()
            .zip(self.etas.iter())
            .zip(self.scales.iter())
            .map(|((t, eta), s)| {
                Ok(scale_s(&atoms, *eta, ((self.t_total - t) * 0.5).exp())? / s - 1.0)
            })
            .collect()
    }
}

impl ZigZagSchedule {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,t,scale,eta,domain_eta_min,domain_r_max\n");
        for k in 0..self.scales.len() {
            out.push_str(&format!(
                "{k},{},{},{},{},{}\n",
                self.times[k], self.scales[k], self.etas[k], self.domains[k].0, self.domains[k].1
            ));
        }
        out
    }
}

impl CharTrajectory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,eta,im_m,rho\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{},{}\n", s.t, s.eta, s.im_m, s.rho));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{Dist, Field, ModelSpec};

    fn zero_real(n: usize) -> DeformedModel {
        DeformedModel::zero(n, Field::Real, Dist::Gaussian)
    }

    #[test]
    fn scaling_params_identity() {
        let mut a = Array2::zeros((3, 3));
        for i in 0..3 {
            a[[i, i]] = c64::new(-1.0, 0.0);
        }
        let m = DeformedModel::from_matrix(a, Field::Complex, Dist::Gaussian, "neg-id".into()).unwrap();
        let p = scaling_params(&m, 1e-3).unwrap();
        assert!((p.i3 - c64::new(-1.0, 0.0)).norm() < 1e-14);
        assert!((p.i4 - 1.0).abs() < 1e-14);
        assert!((p.c - 1.0).abs() < 1e-14);
        assert!((p.gamma - c64::new(1.0, 0.0)).norm() < 1e-14);
        assert!((p.eta - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn eta1_and_psi_values() {
        let e = eta1(4096, 0.01).unwrap();
        assert!((e - 4096f64.powf(-0.76)).abs() < 1e-18);
        assert!((psi(4096, e) - 4096f64.powf(-0.24)).abs() < 1e-12);
        assert!((psi(4096, e) - 0.1358).abs() < 1e-3);
        assert!(eta1(4096, 0.02).is_err());
    }

    #[test]
    fn complex_path_zero_model() {
        let m = DeformedModel::zero(4, Field::Complex, Dist::Gaussian);
        let opts = PathOptions { samples: 64, ..Default::default() };
        let path = complex_path(&m, c64::new(1.0, 0.0), None, &opts).unwrap();
        assert_eq!(path.regime, PathRegime::Complex);
        // Every sample is a unimodular multiple of the identity.
        for s in &path.samples {
            assert!((s.f_check - 1.0).abs() < 1e-10, "f = {} at t = {}", s.f_check, s.t);
            assert!((s.norm_a - 1.0).abs() < 1e-10);
            assert!((s.i4 - 1.0).abs() < 1e-10);
        }
        // Endpoints: 𝒜₀ = A − z₀ = −Id, 𝒜₁ = −z₁ = −1.
        let first = &path.samples[0];
        assert!((first.a_t.a[[0, 0]] - c64::new(-1.0, 0.0)).norm() < 1e-10);
        let last = path.samples.last().unwrap();
        assert!(last.z_hat.is_none());
        assert!((last.a_t.a[[0, 0]] - c64::new(-1.0, 0.0)).norm() < 1e-8);
        assert!(path.report.max_f_dev < 1e-10);
    }

    #[test]
    fn path_normalization_two_cluster() {
        let spec = ModelSpec::TwoCluster { n: 8, a: [1.5, 0.0], b: [-1.5, 0.0] };
        let m = DeformedModel::build(&spec, Field::Complex, Dist::Gaussian).unwrap();
        // Locate the right sharp edge and launch the path from it.
        let edge = crate::brown::find_edge_ray(
            &m,
            c64::new(1.5, 0.0),
            c64::new(1.0, 0.0),
            &crate::brown::EdgeOptions::default(),
        )
        .unwrap();
        let opts = PathOptions { samples: 64, ..Default::default() };
        let path = complex_path(&m, edge.z0, None, &opts).unwrap();
        for s in &path.samples {
            assert!((s.f_check - 1.0).abs() < 1e-10, "f = {} at t = {}", s.f_check, s.t);
            // Jensen: ⟨|𝒜|⁻⁴⟩ ≥ ⟨|𝒜|⁻²⟩² = 1.
            assert!(s.i4 >= 1.0 - 1e-10);
        }
        assert!(path.report.max_da_dt.is_finite());
    }

    #[test]
    fn characteristic_flow_exponential_law() {
        // d⟨M_t⟩/dt = ⟨M_t⟩/2 along the characteristic.
        let m = zero_real(4);
        let traj = characteristic_flow(&m, c64::new(1.0, 0.0), 0.5, 0.4, &RkControls::default()).unwrap();
        assert!(traj.terminal.is_none());
        let m0 = traj.samples[0].im_m;
        for s in &traj.samples {
            let predicted = (0.5 * s.t).exp() * m0;
            assert!(
                (s.im_m - predicted).abs() <= 1e-8 * predicted.abs(),
                "t = {}: {} vs {}",
                s.t,
                s.im_m,
                predicted
            );
        }
        // η strictly decreasing.
        for w in traj.samples.windows(2) {
            assert!(w[1].eta < w[0].eta);
        }
    }

    #[test]
    fn characteristic_flow_matches_tight_reference() {
        let m = zero_real(2);
        let z = c64::new(0.0, 0.0);
        let controls = RkControls::default();
        let traj = characteristic_flow(&m, z, 1.0, 0.3, &controls).unwrap();
        // Reference: fixed-step RK4 at h = 1e-5.
        let svals = m.svals_shifted(z).unwrap();
        let driver = FlowDriver { atoms: Atoms::from_svals(&svals), r0: 1.0 };
        let mut eta = 1.0;
        let mut t = 0.0;
        let h = 1e-5_f64;
        while t < 0.3 - 1e-12 {
            let step = h.min(0.3 - t);
            eta = driver.rk4(t, eta, step).unwrap();
            t += step;
        }
        let end = traj.samples.last().unwrap();
        assert!((end.t - 0.3).abs() < 1e-12);
        assert!(
            (end.eta - eta).abs() < 1e-9 * eta,
            "adaptive {} vs reference {}",
            end.eta,
            eta
        );
    }

    #[test]
    fn zigzag_schedule_invariants() {
        let m = zero_real(2);
        let z = c64::new(1.0, 0.0);
        let (n, eps, eps0) = (4096, 0.2, 0.05);
        let sched = zigzag_schedule(&m, z, n, eps, eps0).unwrap();
        let nf = n as f64;
        assert!(sched.k_final as f64 <= 100.0 / eps0);
        assert_eq!(*sched.scales.last().unwrap(), sched.s_fin);
        // η_fin ≳ N^{−1+ε}.
        assert!(sched.eta_fin * nf.powf(1.0 - eps) >= 0.1);
        // Monotonicity.
        for w in sched.times.windows(2) {
            assert!(w[1] > w[0] - 1e-12);
        }
        for w in sched.scales.windows(2) {
            assert!(w[1] <= w[0]);
        }
        // Reconstruction within 1e−8.
        for r in sched.reconstruction(&m, z).unwrap() {
            assert!(r.abs() <= 1e-8, "reconstruction residual {r}");
        }
        // Ratio bound η_{t_{k+1}}/η_{t_k} ≥ N^{−ε₀/100} e^{−T}.
        let bound = nf.powf(-eps0 / 100.0) * (-sched.t_total).exp();
        for w in sched.etas.windows(2) {
            assert!(w[1] / w[0] >= bound - 1e-12, "ratio {} < bound {bound}", w[1] / w[0]);
        }
    }

    #[test]
    fn real_path_regimes() {
        let m = zero_real(4);
        let opts = PathOptions { n: 10_000, delta: 0.005, samples: 64 };
        // A1: |Im z₀| well above N^{−1/2+𝔠}.
        let z0 = c64::from_polar(1.0, 0.3);
        let p1 = real_path(&m, z0, 0.05, &opts).unwrap();
        assert_eq!(p1.regime, PathRegime::RealA1);
        let min_theta = p1.report.min_abs_theta.unwrap();
        assert!(min_theta > (10_000f64).powf(-0.5), "min |θ| = {min_theta}");
        // A2: tiny |Im z₀|.
        let z0 = c64::new(1.0, 1e-3);
        let p2 = real_path(&m, z0, 0.05, &opts).unwrap();
        assert_eq!(p2.regime, PathRegime::RealA2);
        let deriv = p2.report.max_i4_theta_deriv.unwrap();
        assert!(deriv <= (10_000f64).powf(-0.5), "d(I₄^{{-1/2}}θ)/dt = {deriv}");
        for s in &p2.samples {
            assert!((s.f_check - 1.0).abs() < 1e-10);
        }
        // Endpoint: Im z₁′ ≈ |γ₀| Im z₀ (γ₀ = 1 for the unit disk at z₀ ≈ 1).
        let last = p2.samples.last().unwrap();
        let endpoint = -last.a_t.a[[0, 0]];
        assert!((endpoint.im - 1e-3).abs() < 1e-4, "Im z₁′ = {}", endpoint.im);
    }
}
