//! The self-consistent (Dyson-type) equation on the imaginary axis for the
//! Hermitisation of `A − z`.
//!
//! On the imaginary axis the full 2N×2N equation collapses to one scalar
//! fixed point for `v = η + Im⟨M⟩`:
//!
//! ```text
//! v = η + (1/N) Σ_i v / (s_i² + v²),      s_i = singular values of A − z.
//! ```
//!
//! Everything else — the spectral density, the full matrix `M`, the
//! η-integrated log potential whose Laplacian is the limiting eigenvalue
//! density, and the edge cubic — is reconstruction from `v`.

use crate::ensembles::DeformedModel;
use crate::util::{c64, gauss_legendre, gl_integrate, Error, Result};
use ndarray::Array2;
use ndarray_linalg::Inverse;

/// Singular-value spectrum compressed into `(value, weight)` atoms.
/// Weights sum to 1. Exact for diagonal deformations with few distinct
/// entries; harmless O(N) pass otherwise.
#[derive(Debug, Clone)]
pub struct Atoms {
    pub s: Vec<f64>,
    pub w: Vec<f64>,
}

impl Atoms {
    pub fn from_svals(svals: &[f64]) -> Self {
        let mut s = Vec::new();
        let mut w = Vec::new();
        let inv_n = 1.0 / svals.len() as f64;
        for &x in svals {
            match s.last() {
                Some(&last) if (x - last as f64).abs() <= 1e-12 * (1.0 + x) => {
                    *w.last_mut().unwrap() += inv_n;
                }
                _ => {
                    s.push(x);
                    w.push(inv_n);
                }
            }
        }
        Atoms { s, w }
    }

    /// `f = ⟨|A−z|⁻²⟩ = Σ w/s²`; infinite if an atom sits at 0.
    pub fn f_value(&self) -> f64 {
        self.s
            .iter()
            .zip(&self.w)
            .map(|(&s, &w)| w / (s * s))
            .sum()
    }

    /// Second moment `⟨s²⟩`, used for the analytic quadrature tail.
    fn m2(&self) -> f64 {
        self.s.iter().zip(&self.w).map(|(&s, &w)| w * s * s).sum()
    }

    fn smin(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }
}

/// Scalar solution of the self-consistent equation at one `(z, η)`.
#[derive(Debug, Clone)]
pub struct MdeSolution {
    /// Base point, when the caller supplied one (solves from raw singular
    /// values leave it unset).
    pub z: Option<c64>,
    pub eta: f64,
    /// `v = η + Im⟨M⟩ > 0`.
    pub v: f64,
    /// `Im⟨M⟩ = v − η`, stored separately because the solver computes it
    /// directly (forming the difference would cancel at large η).
    im_m: f64,
    /// Spectral density of the Hermitisation, `ρ = (v − η)/π`.
    pub rho: f64,
    /// `|v − η − F(v)|` at the returned `v`.
    pub residual: f64,
    pub iterations: usize,
    /// Cached singular values of `A − z` (atoms).
    pub atoms: Atoms,
}

impl MdeSolution {
    pub fn im_m(&self) -> f64 {
        self.im_m
    }
}

/// Full-matrix solution `M = (H_{A−z} − iv)⁻¹`.
#[derive(Debug, Clone)]
pub struct MdeMatrix {
    pub m: Array2<c64>,
    pub solution: MdeSolution,
}

fn fmap(atoms: &Atoms, v: f64) -> f64 {
    atoms
        .s
        .iter()
        .zip(&atoms.w)
        .map(|(&s, &w)| w * v / (s * s + v * v))
        .sum()
}

fn fmap_deriv(atoms: &Atoms, v: f64) -> f64 {
    atoms
        .s
        .iter()
        .zip(&atoms.w)
        .map(|(&s, &w)| {
            let d = s * s + v * v;
            w * (s * s - v * v) / (d * d)
        })
        .sum()
}

const MAX_ITERS: usize = 10_000;
const TOL: f64 = 1e-12;

/// Solve the scalar equation for compressed atoms.
pub fn solve_atoms(atoms: &Atoms, eta: f64) -> Result<MdeSolution> {
    if eta <= 0.0 || !eta.is_finite() {
        return Err(Error::InvalidInput(format!("η must be > 0, got {eta}")));
    }
    // Iterate on d = v − η = F(η + d) rather than on v itself: at large η
    // the two differ by many orders of magnitude and forming v − η from a
    // converged v would lose all significant digits.
    let smin = atoms.smin();
    let mut d = if smin > 0.0 { (1.0 / smin).min(1.0) } else { 1.0 };
    let mut residual = f64::INFINITY;
    for iter in 0..MAX_ITERS {
        let v = eta + d;
        let g = d - fmap(atoms, v);
        residual = g.abs();
        if residual <= TOL * (1.0 + d) {
            // Newton polish: the loop tolerance is on the map residual, but a
            // contraction factor near 1 would leave the root itself an order
            // less accurate. Two quadratic steps pin it to machine precision.
            for _ in 0..2 {
                let v = eta + d;
                let g = d - fmap(atoms, v);
                let dg = 1.0 - fmap_deriv(atoms, v);
                let dn = d - g / dg;
                if dn.is_finite() && dn >= 0.0 {
                    d = dn;
                }
            }
            let v = eta + d;
            residual = (d - fmap(atoms, v)).abs();
            return Ok(MdeSolution {
                z: None,
                eta,
                v,
                im_m: d,
                rho: d / std::f64::consts::PI,
                residual,
                iterations: iter,
                atoms: atoms.clone(),
            });
        }
        if residual < 1e-3 {
            // Newton step; the derivative 1 − F'(v) is bounded away from 0
            // for v > η since F'(v) < F(v)/v ≤ (v−η)/v < 1.
            let dg = 1.0 - fmap_deriv(atoms, v);
            let step = g / dg;
            let dn = d - step;
            if dn >= 0.0 && dn.is_finite() {
                d = dn;
                continue;
            }
        }
        // Damped fixed point d ← (1−α)d + αF(η + d), α = 1/2.
        d = 0.5 * d + 0.5 * fmap(atoms, v);
    }
    Err(Error::NoConvergence(format!(
        "scalar solve stalled at residual {residual:.3e} (η = {eta:.3e})"
    )))
}

/// Solve from a raw list of singular values.
pub fn solve_scalar(svals: &[f64], eta: f64) -> Result<MdeSolution> {
    if svals.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::InvalidInput("singular values must be finite and ≥ 0".into()));
    }
    solve_atoms(&Atoms::from_svals(svals), eta)
}

/// Solve at a base point of a model (one pass of singular values of `A − z`).
pub fn solve_at(model: &DeformedModel, z: c64, eta: f64) -> Result<MdeSolution> {
    let svals = model.svals_shifted(z)?;
    let mut sol = solve_atoms(&Atoms::from_svals(&svals), eta)?;
    sol.z = Some(z);
    Ok(sol)
}

/// Reconstruct the full 2N×2N matrix `M = (H_{A−z} − iv)⁻¹`.
pub fn m_matrix(model: &DeformedModel, z: c64, eta: f64) -> Result<MdeMatrix> {
    let solution = solve_at(model, z, eta)?;
    let herm = crate::ensembles::hermitize(&model.a, z)?;
    let iv = c64::new(0.0, solution.v);
    let mut h = herm.h;
    let dim = h.nrows();
    for i in 0..dim {
        h[[i, i]] -= iv;
    }
    let m = h.inv().map_err(|e| Error::Linalg(e.to_string()))?;
    Ok(MdeMatrix { m, solution })
}

impl MdeMatrix {
    /// Normalised trace `⟨M⟩`.
    pub fn trace_mean(&self) -> c64 {
        let dim = self.m.nrows();
        let mut t = c64::new(0.0, 0.0);
        for i in 0..dim {
            t += self.m[[i, i]];
        }
        t / dim as f64
    }

    /// Operator norm of `M`, for the boundedness check against `‖(A−z)⁻¹‖`.
    pub fn norm(&self) -> f64 {
        crate::ensembles::singular_values(&self.m)
            .map(|s| s.last().copied().unwrap_or(f64::NAN))
            .unwrap_or(f64::NAN)
    }
}

/// Controls for the η-quadrature of the log potential.
#[derive(Debug, Clone)]
pub struct QuadratureControls {
    pub tol: f64,
    /// Upper cutoff; an analytic `−⟨s²⟩/(2H²)` tail is added beyond it.
    pub upper: f64,
    /// Lower cutoff; the integrand is constant `v(0⁺)` to O(η) below it.
    pub lower: f64,
}

impl Default for QuadratureControls {
    fn default() -> Self {
        Self { tol: 1e-9, upper: 1e6, lower: 1e-9 }
    }
}

/// The inner η-integral of the log-potential representation:
/// `∫₀^∞ [Im⟨M(iη)⟩ − η/(1+η²)] dη` for the Hermitisation of `A − z`.
///
/// Its −(1/2π)-scaled distributional Laplacian in `z` is the limiting
/// eigenvalue density of `A + X`. Returns `(value, error_estimate)`.
///
/// The panel layout is fixed (log-decade Gauss panels), so the quadrature
/// error varies smoothly in `z` and cancels in finite-difference Laplacians.
pub fn log_potential_atoms(atoms: &Atoms, controls: &QuadratureControls) -> Result<(f64, f64)> {
    let integrand = |eta: f64| -> f64 {
        let sol = solve_atoms(atoms, eta).expect("scalar solve inside quadrature");
        sol.im_m() - eta / (1.0 + eta * eta)
    };
    let lo = controls.lower;
    let hi = controls.upper;
    let rule_a = gauss_legendre(24);
    let rule_b = gauss_legendre(48);
    let decades = (hi / lo).log10().ceil() as usize;
    let mut total = 0.0;
    let mut err = 0.0;
    let mut a = lo;
    for _ in 0..decades {
        let b = (a * 10.0).min(hi);
        // Integrate in log η: substitution η = e^u flattens the power-law
        // behaviour of the integrand near the origin.
        let (la, lb) = (a.ln(), b.ln());
        let mut g = |u: f64| {
            let eta = u.exp();
            integrand(eta) * eta
        };
        let coarse = gl_integrate(&mut g, la, lb, &rule_a);
        let fine = gl_integrate(&mut g, la, lb, &rule_b);
        total += fine;
        err += (fine - coarse).abs();
        a = b;
        if a >= hi {
            break;
        }
    }
    // Below the lower cutoff the integrand is v(0⁺) + O(η); outside the
    // support it is O(η) instead, so v(lo) bounds both cases.
    let head = solve_atoms(atoms, lo)?.im_m() * lo;
    total += head;
    // Beyond the upper cutoff the integrand is −⟨s²⟩/η³ + O(η⁻⁵).
    total += -atoms.m2() / (2.0 * hi * hi);
    if err > controls.tol {
        return Err(Error::NoConvergence(format!(
            "log-potential quadrature error estimate {err:.3e} exceeds tol {:.3e}",
            controls.tol
        )));
    }
    Ok((total, err))
}

/// Log potential at a base point of a model.
pub fn log_potential(model: &DeformedModel, z: c64, controls: &QuadratureControls) -> Result<(f64, f64)> {
    let svals = model.svals_shifted(z)?;
    log_potential_atoms(&Atoms::from_svals(&svals), controls)
}

/// Residual of the asymptotic edge cubic `I₄v³ − 2Re[w·I₃]v − η` evaluated
/// with the true scalar solution at base point `z₀ + w`.
pub fn cubic_residual(
    model: &DeformedModel,
    z0: c64,
    i3: c64,
    i4: f64,
    w: c64,
    eta: f64,
) -> Result<f64> {
    let v = if eta == 0.0 && w.norm() == 0.0 {
        0.0
    } else {
        solve_at(model, z0 + w, eta.max(1e-12))?.v
    };
    Ok(i4 * v * v * v - 2.0 * (w * i3).re * v - eta)
}
