//! Deterministic geometry of the limiting spectral distribution of `A + X`:
//! the function `f_A(z) = ⟨|A−z|⁻²⟩` whose level set `f_A = 1` bounds the
//! support, its derivatives, edge detection and classification, the density,
//! the eigenvalue fluctuation scale, the fattened support region, and the
//! real-symmetry quantity θ.

use crate::ensembles::DeformedModel;
use crate::mde::{log_potential, QuadratureControls};
use crate::util::{c64, Error, Result};
use ndarray::Array2;
use ndarray_linalg::Inverse;
use serde::Serialize;

/// Scalar point data: `f` and its holomorphic/antiholomorphic derivatives,
/// the edge moments, and the resolvent norm, all at one `z ∉ Spec(A)`.
#[derive(Debug, Clone)]
pub struct PointData {
    pub z: c64,
    /// `f = ⟨|A−z|⁻²⟩`.
    pub f: f64,
    /// `I₃ = ⟨(A−z)^* |A−z|⁻⁴⟩ = ∂_z f`.
    pub i3: c64,
    /// `I₄ = ⟨|A−z|⁻⁴⟩`.
    pub i4: f64,
    /// `∂²_z f`.
    pub dzz: c64,
    /// `∂_z ∂_z̄ f = ⟨(A−z)⁻²((A−z)⁻²)^*⟩ > 0`; the Laplacian is 4× this.
    pub dzzbar: f64,
    /// `‖(A−z)⁻¹‖`.
    pub inv_norm: f64,
}

impl PointData {
    /// Gradient of `f` as a complex number (`2 ∂_z̄ f` convention).
    pub fn grad(&self) -> c64 {
        2.0 * self.i3.conj()
    }

    /// Real 2×2 Hessian of `f` in `(x, y) = (Re z, Im z)`.
    pub fn hessian(&self) -> [[f64; 2]; 2] {
        let a = self.dzz;
        let b = self.dzzbar;
        [
            [2.0 * b + 2.0 * a.re, -2.0 * a.im],
            [-2.0 * a.im, 2.0 * b - 2.0 * a.re],
        ]
    }

    /// Laplacian `Δf = 4 ∂_z∂_z̄ f`.
    pub fn laplacian(&self) -> f64 {
        4.0 * self.dzzbar
    }
}

/// Evaluate `f` alone (cheapest path: one singular-value pass).
pub fn f_a(model: &DeformedModel, z: c64) -> Result<f64> {
    let svals = model.svals_shifted(z)?;
    if svals[0] <= 1e-12 {
        return Err(Error::InvalidInput(format!("z = {z} is within 1e-12 of Spec(A)")));
    }
    Ok(svals.iter().map(|s| 1.0 / (s * s)).sum::<f64>() / svals.len() as f64)
}

/// Evaluate the full point data at `z`.
pub fn point_data(model: &DeformedModel, z: c64) -> Result<PointData> {
    if let Some(diag) = &model.diag {
        let n = diag.len() as f64;
        let mut f = 0.0;
        let mut i3 = c64::new(0.0, 0.0);
        let mut i4 = 0.0;
        let mut dzz = c64::new(0.0, 0.0);
        let mut smin = f64::INFINITY;
        for &a in diag {
            let b = a - z;
            let r2 = b.norm_sqr();
            if r2 <= 1e-24 {
                return Err(Error::InvalidInput(format!("z = {z} is within 1e-12 of Spec(A)")));
            }
            smin = smin.min(r2.sqrt());
            f += 1.0 / r2;
            i3 += b.conj() / (r2 * r2);
            i4 += 1.0 / (r2 * r2);
            dzz += 2.0 * b.conj() * b.conj() / (r2 * r2 * r2);
        }
        Ok(PointData {
            z,
            f: f / n,
            i3: i3 / n,
            i4: i4 / n,
            dzz: dzz / n,
            // For diagonal A the mixed derivative coincides with I₄.
            dzzbar: i4 / n,
            inv_norm: 1.0 / smin,
        })
    } else {
        let b = model.shifted(z);
        let n = model.n as f64;
        let c = b.inv().map_err(|_| {
            Error::InvalidInput(format!("A − z not invertible at z = {z}"))
        })?;
        let cdag = conj_transpose(&c);
        let s = c.dot(&cdag); // (B^*B)^{-1}
        let s2 = s.dot(&s);
        let bdag = conj_transpose(&b);
        let i3 = trace_mean(&bdag.dot(&s2));
        let i4 = trace_mean(&s2).re;
        let bs = bdag.dot(&s); // B^* S
        let dzz = 2.0 * trace_mean(&s.dot(&bs).dot(&bs));
        let c2 = c.dot(&c);
        let dzzbar = c2.iter().map(|v| v.norm_sqr()).sum::<f64>() / n;
        let inv_norm = crate::ensembles::singular_values(&c)?
            .last()
            .copied()
            .unwrap_or(f64::NAN);
        let f = s.diag().iter().map(|v| v.re).sum::<f64>() / n;
        Ok(PointData { z, f, i3, i4, dzz, dzzbar, inv_norm })
    }
}

fn conj_transpose(a: &Array2<c64>) -> Array2<c64> {
    a.t().mapv(|v| v.conj())
}

fn trace_mean(a: &Array2<c64>) -> c64 {
    let n = a.nrows();
    let mut t = c64::new(0.0, 0.0);
    for i in 0..n {
        t += a[[i, i]];
    }
    t / n as f64
}

/// Edge classification per the regularity thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeClass {
    Sharp,
    Quadratic,
    Irregular,
}

/// Thresholds for edge classification. `sharp` requires
/// `(1+|z|)³ |I₃| > i3_threshold` and `‖(A−z)⁻¹‖ < inv_norm_max`;
/// `quadratic` requires a non-degenerate Hessian instead of the I₃ bound.
#[derive(Debug, Clone, Copy)]
pub struct EdgeThresholds {
    pub i3_threshold: f64,
    pub inv_norm_max: f64,
    pub hessian_det_floor: f64,
}

impl Default for EdgeThresholds {
    fn default() -> Self {
        Self { i3_threshold: 0.01, inv_norm_max: 100.0, hessian_det_floor: 1e-4 }
    }
}

/// A located boundary point of the support with its scaling data.
#[derive(Debug, Clone)]
pub struct EdgePoint {
    pub z0: c64,
    pub f: f64,
    pub grad_f: c64,
    pub i3: c64,
    pub i4: f64,
    /// `γ₀ = −I₄^{-1/2} I₃`.
    pub gamma0: c64,
    pub cls: EdgeClass,
    /// Closed-form fluctuation scale `N^{-1/2}/(N^{-1/4} + |∇f|)` at the
    /// `n` used for detection; the quadrature-based scale is a separate op.
    pub sigma_f: f64,
    pub inv_norm: f64,
}

/// Options for edge detection.
#[derive(Debug, Clone, Copy)]
pub struct EdgeOptions {
    /// Matrix dimension used for the stored fluctuation scale.
    pub n: usize,
    pub thresholds: EdgeThresholds,
    /// Target `|f − 1|` at the returned point.
    pub tol: f64,
}

impl Default for EdgeOptions {
    fn default() -> Self {
        Self { n: 10_000, thresholds: EdgeThresholds::default(), tol: 1e-10 }
    }
}

pub fn classify(pd: &PointData, thresholds: &EdgeThresholds) -> EdgeClass {
    let scale = (1.0 + pd.z.norm()).powi(3) * pd.i3.norm();
    if pd.inv_norm >= thresholds.inv_norm_max {
        return EdgeClass::Irregular;
    }
    if scale > thresholds.i3_threshold {
        return EdgeClass::Sharp;
    }
    let h = pd.hessian();
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    let tr = h[0][0] + h[1][1];
    if det.abs() > thresholds.hessian_det_floor && tr > 0.0 {
        EdgeClass::Quadratic
    } else {
        EdgeClass::Irregular
    }
}

fn edge_point_at(model: &DeformedModel, z0: c64, opts: &EdgeOptions) -> Result<EdgePoint> {
    let pd = point_data(model, z0)?;
    let gamma0 = -pd.i3 / pd.i4.sqrt();
    Ok(EdgePoint {
        z0,
        f: pd.f,
        grad_f: pd.grad(),
        i3: pd.i3,
        i4: pd.i4,
        gamma0,
        cls: classify(&pd, &opts.thresholds),
        sigma_f: sigma_f_closed_from_grad(pd.grad().norm(), opts.n),
        inv_norm: pd.inv_norm,
    })
}

/// Newton polish of `f = 1` moving along the gradient direction.
fn newton_refine(model: &DeformedModel, mut z: c64, tol: f64) -> Result<c64> {
    for _ in 0..100 {
        let pd = point_data(model, z)?;
        let g = pd.f - 1.0;
        if g.abs() <= tol {
            return Ok(z);
        }
        let grad = pd.grad();
        let n2 = grad.norm_sqr();
        if n2 < 1e-30 {
            return Err(Error::NoConvergence(
                "gradient vanished while refining the boundary point".into(),
            ));
        }
        z -= g * grad / n2;
    }
    Err(Error::NoConvergence("boundary refinement stalled".into()))
}

/// Find the support boundary along the ray `origin + r·dir`, `r > 0`.
/// The origin must lie inside the support (`f > 1`) and the ray must exit it.
pub fn find_edge_ray(
    model: &DeformedModel,
    origin: c64,
    dir: c64,
    opts: &EdgeOptions,
) -> Result<EdgePoint> {
    if dir.norm() == 0.0 {
        return Err(Error::InvalidInput("ray direction must be nonzero".into()));
    }
    let u = dir / dir.norm();
    let fval = |r: f64| f_a(model, origin + r * u);
    // Bracket the crossing: expand r until f < 1.
    let mut lo = 0.0_f64;
    let mut hi = 0.5_f64;
    let f0 = fval(0.0).unwrap_or(f64::INFINITY);
    if f0 <= 1.0 {
        return Err(Error::Bracket(format!("ray origin has f = {f0} ≤ 1 (not inside the support)")));
    }
    let mut found = false;
    for _ in 0..60 {
        match fval(hi) {
            Ok(f) if f < 1.0 => {
                found = true;
                break;
            }
            _ => {
                lo = hi;
                hi *= 2.0;
                if hi > 1e6 {
                    break;
                }
            }
        }
    }
    if !found {
        return Err(Error::Bracket("ray never exits the support".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match fval(mid) {
            Ok(f) if f > 1.0 => lo = mid,
            Ok(_) => hi = mid,
            Err(_) => lo = mid, // mid inside Spec(A): push outward
        }
        if hi - lo < 1e-13 * (1.0 + hi) {
            break;
        }
    }
    let z0 = newton_refine(model, origin + 0.5 * (lo + hi) * u, opts.tol)?;
    edge_point_at(model, z0, opts)
}

/// Find a boundary point by Newton refinement from a seed near the contour.
pub fn find_edge_seed(model: &DeformedModel, seed: c64, opts: &EdgeOptions) -> Result<EdgePoint> {
    let z0 = newton_refine(model, seed, opts.tol)?;
    edge_point_at(model, z0, opts)
}

/// Density estimate with its negative-part clamp diagnostic.
#[derive(Debug, Clone, Copy)]
pub struct DensityValue {
    pub value: f64,
    /// Magnitude clamped away below zero (0 when no clamping occurred).
    pub clamp: f64,
}

/// Limiting eigenvalue density of `A + X` at `z` via the 5-point Laplacian of
/// the η-integrated log potential with stencil spacing `h`.
pub fn density(model: &DeformedModel, z: c64, h: f64, controls: &QuadratureControls) -> Result<DensityValue> {
    let lp = |zz: c64| -> Result<f64> { Ok(log_potential(model, zz, controls)?.0) };
    let center = lp(z)?;
    let lap = (lp(z + c64::new(h, 0.0))?
        + lp(z - c64::new(h, 0.0))?
        + lp(z + c64::new(0.0, h))?
        + lp(z - c64::new(0.0, h))?
        - 4.0 * center)
        / (h * h);
    let raw = -lap / (2.0 * std::f64::consts::PI);
    if raw < 0.0 {
        Ok(DensityValue { value: 0.0, clamp: -raw })
    } else {
        Ok(DensityValue { value: raw, clamp: 0.0 })
    }
}

/// The quadratic form governing the density near a quadratic (critical) edge:
/// `Q[u] = (1/2π)(∂_z∂_z̄ f / I₄)·⟨u, ℋu⟩ + (1/4π)(1/I₄)·‖ℋu‖²`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub hessian: [[f64; 2]; 2],
    pub c_mixed: f64,
    pub c_norm: f64,
}

impl QuadraticForm {
    pub fn eval(&self, u: [f64; 2]) -> f64 {
        let h = &self.hessian;
        let hu = [h[0][0] * u[0] + h[0][1] * u[1], h[1][0] * u[0] + h[1][1] * u[1]];
        let uhu = u[0] * hu[0] + u[1] * hu[1];
        self.c_mixed * uhu + self.c_norm * (hu[0] * hu[0] + hu[1] * hu[1])
    }
}

pub fn quadratic_form_q(model: &DeformedModel, z0: c64, thresholds: &EdgeThresholds) -> Result<QuadraticForm> {
    let pd = point_data(model, z0)?;
    if classify(&pd, thresholds) != EdgeClass::Quadratic {
        return Err(Error::InvalidInput(format!(
            "z0 = {z0} is not a quadratic edge point"
        )));
    }
    let pi = std::f64::consts::PI;
    Ok(QuadraticForm {
        hessian: pd.hessian(),
        c_mixed: pd.dzzbar / (2.0 * pi * pd.i4),
        c_norm: 1.0 / (4.0 * pi * pd.i4),
    })
}

fn sigma_f_closed_from_grad(grad_norm: f64, n: usize) -> f64 {
    let nf = n as f64;
    nf.powf(-0.5) / (nf.powf(-0.25) + grad_norm)
}

/// Closed-form fluctuation scale `N^{-1/2} / (N^{-1/4} + |∇f_A(z)|)`.
pub fn sigma_f_closed(model: &DeformedModel, z: c64, n: usize) -> Result<f64> {
    let pd = point_data(model, z)?;
    Ok(sigma_f_closed_from_grad(pd.grad().norm(), n))
}

/// Controls for the quadrature-based fluctuation scale.
#[derive(Debug, Clone)]
pub struct SigmaControls {
    /// Finite-difference step for the radial derivative of the log potential.
    pub h: f64,
    /// Relative tolerance on the returned radius.
    pub rel_tol: f64,
    /// Number of angular quadrature points.
    pub angles: usize,
    pub quadrature: QuadratureControls,
}

impl Default for SigmaControls {
    fn default() -> Self {
        Self { h: 1e-4, rel_tol: 1e-3, angles: 32, quadrature: QuadratureControls::default() }
    }
}

/// Fluctuation scale at `z`: the radius `σ` such that the disk `D(z, σ)`
/// carries limiting spectral mass `1/N`.
///
/// The disk mass is a boundary flux: with `U` the η-integrated log potential,
/// `∫_D ρ = −(1/2π) ∮_{∂D} ∂_n U ds`, evaluated by a midpoint rule over
/// `angles` directions with central-difference radial derivatives. The
/// monotone mass function is then inverted for the target `1/N` by bisection.
pub fn sigma_f(model: &DeformedModel, z: c64, n: usize, controls: &SigmaControls) -> Result<f64> {
    let target = 1.0 / n as f64;
    let nf = n as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let angles: Vec<c64> = (0..controls.angles)
        .map(|j| c64::from_polar(1.0, two_pi * (j as f64 + 0.5) / controls.angles as f64))
        .collect();
    let h = controls.h;
    let mass = |sigma: f64| -> Result<f64> {
        let mut acc = 0.0;
        for u in &angles {
            let zp = z + sigma * u;
            let hi = log_potential(model, zp + h * u, &controls.quadrature)?.0;
            let lo = log_potential(model, zp - h * u, &controls.quadrature)?.0;
            acc += (hi - lo) / (2.0 * h);
        }
        // −(1/2π) · (2πσ/K) · Σ ∂_r U
        Ok(-(sigma / angles.len() as f64) * acc)
    };
    // Bracket: grow the outer radius until the disk holds at least 1/N.
    let mut hi = (4.0 * sigma_f_closed(model, z, n)?).max(2.0 * nf.powf(-0.25)).max(4.0 * h);
    let mut grown = false;
    for _ in 0..40 {
        if mass(hi)? >= target {
            grown = true;
            break;
        }
        hi *= 2.0;
        if hi > 1e3 {
            break;
        }
    }
    if !grown {
        return Err(Error::NoConvergence(format!(
            "disk around z = {z} never accumulates mass 1/N (σ grew to {hi:.3e})"
        )));
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mass(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= controls.rel_tol * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Hermitian fluctuation scale `η_f(z) = |f_{A−z₀}(z) − 1|^{1/6} / N^{2/3}`
/// for the singular values of `A + X − z₀` near the query point `z`.
pub fn eta_f(model: &DeformedModel, z0: c64, z: c64, n: usize) -> Result<f64> {
    let f = f_a(model, z0 + z)?;
    Ok((f - 1.0).abs().powf(1.0 / 6.0) / (n as f64).powf(2.0 / 3.0))
}

/// Real-symmetry quantity `θ = 1 − ⟨((A−z₀)(A−z₀)^T)⁻¹⟩` for real `A`.
pub fn theta(model: &DeformedModel, z0: c64) -> Result<c64> {
    if model.a.iter().any(|v| v.im != 0.0) {
        return Err(Error::InvalidInput("θ is defined for real deformations only".into()));
    }
    if let Some(diag) = &model.diag {
        let mut acc = c64::new(0.0, 0.0);
        for &a in diag {
            let b = a - z0;
            let b2 = b * b;
            if b2.norm() < 1e-24 {
                return Err(Error::InvalidInput("(A−z₀)(A−z₀)^T is singular".into()));
            }
            acc += 1.0 / b2;
        }
        Ok(c64::new(1.0, 0.0) - acc / diag.len() as f64)
    } else {
        let b = model.shifted(z0);
        let bt = b.t().to_owned();
        let prod = b.dot(&bt);
        let inv = prod
            .inv()
            .map_err(|_| Error::InvalidInput("(A−z₀)(A−z₀)^T is singular".into()))?;
        Ok(c64::new(1.0, 0.0) - trace_mean(&inv))
    }
}

/// Rectangular evaluation grid in the complex plane.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridSpec {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn node(&self, i: usize, j: usize) -> c64 {
        let x = self.re_min + (self.re_max - self.re_min) * i as f64 / (self.nx - 1) as f64;
        let y = self.im_min + (self.im_max - self.im_min) * j as f64 / (self.ny - 1) as f64;
        c64::new(x, y)
    }

    /// Grid covering Spec(A) with a margin, sized to the model.
    pub fn covering(model: &DeformedModel, margin: f64, nodes: usize) -> Self {
        let (mut re_min, mut re_max, mut im_min, mut im_max) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        let candidates: Vec<c64> = match &model.diag {
            Some(d) => d.clone(),
            None => crate::ensembles::eigenvalues(&model.a).unwrap_or_default(),
        };
        for v in candidates {
            re_min = re_min.min(v.re);
            re_max = re_max.max(v.re);
            im_min = im_min.min(v.im);
            im_max = im_max.max(v.im);
        }
        if !re_min.is_finite() {
            re_min = 0.0;
            re_max = 0.0;
            im_min = 0.0;
            im_max = 0.0;
        }
        GridSpec {
            re_min: re_min - margin,
            re_max: re_max + margin,
            im_min: im_min - margin,
            im_max: im_max + margin,
            nx: nodes,
            ny: nodes,
        }
    }
}

/// Discretized field of `f` (and optionally density) with the support contour.
#[derive(Debug, Clone)]
pub struct BrownField {
    pub grid: GridSpec,
    pub f_vals: Array2<f64>,
    pub density_vals: Option<Array2<f64>>,
    pub potential_vals: Option<Array2<f64>>,
    pub support_mask: Array2<bool>,
    /// Polylines of the `f = 1` level set (closed loops where possible).
    pub contour: Vec<Vec<c64>>,
}

/// Build the field. Density/potential layers are optional because they cost a
/// full η-quadrature (plus a 5-point stencil) per node.
pub fn brown_field(
    model: &DeformedModel,
    grid: GridSpec,
    with_density: bool,
    h: f64,
) -> Result<BrownField> {
    let controls = QuadratureControls::default();
    let nodes: Vec<(usize, usize)> = (0..grid.nx)
        .flat_map(|i| (0..grid.ny).map(move |j| (i, j)))
        .collect();
    let f_list = crate::util::par_map(nodes.len(), |k| {
        let (i, j) = nodes[k];
        f_a(model, grid.node(i, j)).unwrap_or(f64::INFINITY)
    });
    let mut f_vals = Array2::zeros((grid.nx, grid.ny));
    for (k, &(i, j)) in nodes.iter().enumerate() {
        f_vals[[i, j]] = f_list[k];
    }
    let support_mask = f_vals.mapv(|f| f > 1.0);
    let contour = marching_squares(&grid, &f_vals, 1.0)
        .into_iter()
        .map(|poly| {
            poly.into_iter()
                .map(|p| newton_refine(model, p, 1e-10).unwrap_or(p))
                .collect()
        })
        .collect();
    let (density_vals, potential_vals) = if with_density {
        let dp = crate::util::par_map(nodes.len(), |k| {
            let (i, j) = nodes[k];
            let z = grid.node(i, j);
            let pot = log_potential(model, z, &controls).map(|(v, _)| v).unwrap_or(f64::NAN);
            let den = density(model, z, h, &controls).map(|d| d.value).unwrap_or(f64::NAN);
            (den, pot)
        });
        let mut d = Array2::zeros((grid.nx, grid.ny));
        let mut p = Array2::zeros((grid.nx, grid.ny));
        for (k, &(i, j)) in nodes.iter().enumerate() {
            d[[i, j]] = dp[k].0;
            p[[i, j]] = dp[k].1;
        }
        (Some(d), Some(p))
    } else {
        (None, None)
    };
    Ok(BrownField { grid, f_vals, density_vals, potential_vals, support_mask, contour })
}

impl BrownField {
    /// CSV rows `re_z, im_z, f, density, in_support` (density blank if absent).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("re_z,im_z,f,density,in_support\n");
        for i in 0..self.grid.nx {
            for j in 0..self.grid.ny {
                let z = self.grid.node(i, j);
                let d = self
                    .density_vals
                    .as_ref()
                    .map(|dv| format!("{}", dv[[i, j]]))
                    .unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    z.re,
                    z.im,
                    self.f_vals[[i, j]],
                    d,
                    self.support_mask[[i, j]] as u8
                ));
            }
        }
        out
    }

    /// Contour polylines as JSON (`[[ [re,im], ... ], ...]`).
    pub fn contour_json(&self) -> String {
        let data: Vec<Vec<[f64; 2]>> = self
            .contour
            .iter()
            .map(|poly| poly.iter().map(|p| [p.re, p.im]).collect())
            .collect();
        serde_json::to_string(&data).expect("contour serialization")
    }
}

/// Marching squares on the node grid `vals` for the level `level`.
/// Returns polylines; loops are closed when the level set is closed.
pub fn marching_squares(grid: &GridSpec, vals: &Array2<f64>, level: f64) -> Vec<Vec<c64>> {
    // Edge key: (i, j, horizontal?) identifying the grid edge from node (i,j)
    // to (i+1,j) (horizontal in Re) or (i,j+1).
    type EdgeKey = (usize, usize, bool);
    let interp = |a: c64, fa: f64, b: c64, fb: f64| -> c64 {
        let t = if (fb - fa).abs() > 1e-300 { (level - fa) / (fb - fa) } else { 0.5 };
        a + t.clamp(0.0, 1.0) * (b - a)
    };
    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    for i in 0..grid.nx - 1 {
        for j in 0..grid.ny - 1 {
            let f = [
                vals[[i, j]],
                vals[[i + 1, j]],
                vals[[i + 1, j + 1]],
                vals[[i, j + 1]],
            ];
            let above = [f[0] > level, f[1] > level, f[2] > level, f[3] > level];
            let code = above[0] as u8 | (above[1] as u8) << 1 | (above[2] as u8) << 2 | (above[3] as u8) << 3;
            if code == 0 || code == 15 {
                continue;
            }
            // Cell edges: 0 bottom (i..i+1, j), 1 right (i+1, j..j+1),
            // 2 top (i..i+1, j+1), 3 left (i, j..j+1).
            let keys: [EdgeKey; 4] = [
                (i, j, true),
                (i + 1, j, false),
                (i, j + 1, true),
                (i, j, false),
            ];
            let pairs: &[(usize, usize)] = match code {
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(3, 2)],
                5 => &[(3, 0), (1, 2)],
                10 => &[(0, 1), (3, 2)],
                _ => &[],
            };
            let _ = interp; // used below through closure captures
            for &(ea, eb) in pairs {
                segments.push((keys[ea], keys[eb]));
            }
        }
    }
    // Interpolated position of each edge key.
    let edge_point = |key: EdgeKey| -> c64 {
        let (i, j, horizontal) = key;
        let (a, b) = if horizontal {
            ((i, j), (i + 1, j))
        } else {
            ((i, j), (i, j + 1))
        };
        interp(
            grid.node(a.0, a.1),
            vals[[a.0, a.1]],
            grid.node(b.0, b.1),
            vals[[b.0, b.1]],
        )
    };
    // Link segments into polylines via shared edge keys.
    let mut adjacency: std::collections::HashMap<EdgeKey, Vec<usize>> = std::collections::HashMap::new();
    for (idx, (a, b)) in segments.iter().enumerate() {
        adjacency.entry(*a).or_default().push(idx);
        adjacency.entry(*b).or_default().push(idx);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (a0, b0) = segments[start];
        let mut chain = vec![a0, b0];
        // Extend forward from the tail, then from the head.
        for end in 0..2 {
            loop {
                let tip = if end == 0 { *chain.last().unwrap() } else { chain[0] };
                let next = adjacency
                    .get(&tip)
                    .and_then(|ids| ids.iter().find(|&&id| !used[id]).copied());
                match next {
                    Some(id) => {
                        used[id] = true;
                        let (a, b) = segments[id];
                        let other = if a == tip { b } else { a };
                        if end == 0 {
                            chain.push(other);
                        } else {
                            chain.insert(0, other);
                        }
                    }
                    None => break,
                }
            }
        }
        polylines.push(chain.into_iter().map(edge_point).collect());
    }
    polylines
}

/// The support fattened by `N^ε σ_f` disks around its boundary.
#[derive(Debug, Clone)]
pub struct SpecEps {
    pub n: usize,
    pub eps: f64,
    /// Refined contour polylines.
    pub loops: Vec<Vec<c64>>,
    /// Fluctuation scale at each contour vertex (same shape as `loops`).
    pub sigma: Vec<Vec<f64>>,
    /// `N^ε`.
    pub factor: f64,
}

/// Controls for `spec_eps`.
#[derive(Debug, Clone)]
pub struct SpecEpsControls {
    pub grid_nodes: usize,
    pub margin: f64,
    /// σ_f anchors per loop; remaining vertices are interpolated.
    pub sigma_anchors: usize,
    pub sigma: SigmaControls,
}

impl Default for SpecEpsControls {
    fn default() -> Self {
        Self { grid_nodes: 121, margin: 1.5, sigma_anchors: 24, sigma: SigmaControls::default() }
    }
}

pub fn spec_eps(
    model: &DeformedModel,
    n: usize,
    eps: f64,
    controls: &SpecEpsControls,
) -> Result<SpecEps> {
    let grid = GridSpec::covering(model, controls.margin, controls.grid_nodes);
    let field = brown_field(model, grid, false, 1e-3)?;
    if field.contour.is_empty() {
        return Err(Error::InvalidInput("support contour is empty on the grid".into()));
    }
    let mut sigma = Vec::new();
    for poly in &field.contour {
        let anchors = controls.sigma_anchors.min(poly.len()).max(1);
        let idx: Vec<usize> = (0..anchors)
            .map(|k| k * poly.len() / anchors)
            .collect();
        let anchor_sigma: Vec<f64> = {
            let vals = crate::util::par_map(idx.len(), |k| {
                sigma_f(model, poly[idx[k]], n, &controls.sigma)
            });
            vals.into_iter().collect::<Result<Vec<_>>>()?
        };
        // Piecewise-linear interpolation between anchors around the loop.
        let mut s = vec![0.0; poly.len()];
        for k in 0..idx.len() {
            let (i0, s0) = (idx[k], anchor_sigma[k]);
            let (i1, s1) = if k + 1 < idx.len() {
                (idx[k + 1], anchor_sigma[k + 1])
            } else {
                (poly.len(), anchor_sigma[0])
            };
            for i in i0..i1 {
                let t = (i - i0) as f64 / (i1 - i0).max(1) as f64;
                s[i] = s0 + t * (s1 - s0);
            }
        }
        sigma.push(s);
    }
    Ok(SpecEps {
        n,
        eps,
        loops: field.contour,
        sigma,
        factor: (n as f64).powf(eps),
    })
}

impl SpecEps {
    /// Signed excursion of a point: `≤ 0` when inside the region.
    /// Inside the support (f > 1) it is `−1`; outside it is
    /// `min over boundary vertices of |p − v| / (N^ε σ_f(v)) − 1`.
    pub fn excursion(&self, model: &DeformedModel, p: c64) -> f64 {
        if f_a(model, p).map(|f| f > 1.0).unwrap_or(true) {
            return -1.0;
        }
        let mut best = f64::INFINITY;
        for (poly, sig) in self.loops.iter().zip(&self.sigma) {
            for (v, s) in poly.iter().zip(sig) {
                let r = (p - v).norm() / (self.factor * s);
                best = best.min(r);
            }
        }
        best - 1.0
    }

    pub fn contains(&self, model: &DeformedModel, p: c64) -> bool {
        self.excursion(model, p) <= 0.0
    }

    /// Index of the loop whose boundary is nearest to `p` (cluster id).
    pub fn nearest_loop(&self, p: c64) -> usize {
        let mut best = (0usize, f64::INFINITY);
        for (li, poly) in self.loops.iter().enumerate() {
            for v in poly {
                let d = (p - v).norm();
                if d < best.1 {
                    best = (li, d);
                }
            }
        }
        best.0
    }
}
