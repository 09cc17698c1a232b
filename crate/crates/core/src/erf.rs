//! Error function for complex arguments, accurate to 1e−12 on `|z| ≤ 10`.
//!
//! Two regimes: a Maclaurin series near the origin (where the Faddeeva route
//! loses digits to cancellation) and Weideman's rational approximation of the
//! Faddeeva function `w(z) = e^{−z²} erfc(−iz)` elsewhere, combined through
//! `erf(z) = 1 − e^{−z²} w(iz)` for `Re z ≥ 0` and odd symmetry.

use crate::util::c64;
use std::sync::OnceLock;

/// Order of the Weideman rational approximation.
const WEIDEMAN_N: usize = 40;

/// Chebyshev-like expansion coefficients for the Faddeeva function, computed
/// once by a direct discrete Fourier sum (Weideman, SIAM J. Numer. Anal. 31
/// (1994), Algorithm 916-style construction).
fn weideman_coeffs() -> &'static (f64, Vec<f64>) {
    static COEFFS: OnceLock<(f64, Vec<f64>)> = OnceLock::new();
    COEFFS.get_or_init(|| {
        let n = WEIDEMAN_N;
        let m = 2 * n;
        let m2 = 2 * m;
        let l = (n as f64 / std::f64::consts::SQRT_2).sqrt();
        // Sample f(θ) = e^{−t²}(L² + t²) with t = L·tan(θ/2) at the shifted
        // grid, then take the real DFT to obtain the polynomial coefficients.
        let mut f = vec![0.0_f64; m2];
        // Index 0 corresponds to θ = −π (t = ∞, f = 0); fill the rest.
        for (idx, k) in (-(m as i64 - 1)..m as i64).enumerate() {
            let theta = k as f64 * std::f64::consts::PI / m as f64;
            let t = l * (theta / 2.0).tan();
            f[idx + 1] = (-t * t).exp() * (l * l + t * t);
        }
        // a_j = (1/M2) Σ_p f_shifted[p] e^{−2πi j p / M2}, real part; the
        // shift (fftshift) multiplies term p by (−1)^p.
        let mut a = vec![0.0_f64; n];
        for (j, aj) in a.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (p, fp) in f.iter().enumerate() {
                // fftshift: rotate by M positions, i.e. multiply by e^{−iπ(j+1)}·…
                let pp = (p + m) % m2;
                let angle = -2.0 * std::f64::consts::PI * (j + 1) as f64 * pp as f64 / m2 as f64;
                acc += fp * angle.cos();
            }
            *aj = acc / m2 as f64;
        }
        (l, a)
    })
}

/// Faddeeva function `w(z) = e^{−z²} erfc(−iz)` for `Im z ≥ 0`.
pub fn faddeeva_upper(z: c64) -> c64 {
    let (l, a) = weideman_coeffs();
    let iz = c64::new(-z.im, z.re); // i·z
    let denom = l - iz;
    let big_z = (l + iz) / denom;
    // Horner in descending powers: p(Z) = a_{N-1} Z^{N-1} + … + a_0.
    let mut p = c64::new(0.0, 0.0);
    for &coeff in a.iter().rev() {
        p = p * big_z + coeff;
    }
    2.0 * p / (denom * denom) + std::f64::consts::FRAC_1_PI.sqrt() / denom
}

/// Maclaurin series `erf(z) = (2/√π) Σ (−1)^n z^{2n+1} / (n!(2n+1))`.
fn erf_series(z: c64) -> c64 {
    let z2 = z * z;
    let mut term = z;
    let mut sum = z;
    for n in 1..120 {
        let nf = n as f64;
        term *= -z2 / nf;
        let contrib = term / (2.0 * nf + 1.0);
        sum += contrib;
        if contrib.norm() <= 1e-17 * sum.norm().max(1e-300) {
            break;
        }
    }
    sum * (2.0 / std::f64::consts::PI.sqrt())
}

/// Error function of a complex argument.
pub fn erf(z: c64) -> c64 {
    if z.im == 0.0 {
        return c64::new(libm::erf(z.re), 0.0);
    }
    if z.norm_sqr() <= 4.0 {
        return erf_series(z);
    }
    if z.re < 0.0 {
        return -erf(-z);
    }
    // erf(z) = 1 − e^{−z²} w(iz); iz is in the closed upper half plane
    // exactly when Re z ≥ 0.
    let iz = c64::new(-z.im, z.re);
    c64::new(1.0, 0.0) - (-z * z).exp() * faddeeva_upper(iz)
}

/// Complementary error function.
pub fn erfc(z: c64) -> c64 {
    c64::new(1.0, 0.0) - erf(z)
}
