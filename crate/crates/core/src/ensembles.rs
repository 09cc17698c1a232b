//! Ensemble construction and sampling: deterministic deformations `A`,
//! i.i.d. noise matrices `X` with entry variance `1/N`, the exact
//! Ornstein–Uhlenbeck transition, Hermitisation, and dense spectral
//! primitives (eigenvalues, singular values).

use crate::util::{c64, Error, Result};
use ndarray::{Array2, Axis};
use ndarray_linalg::{Eig, Eigh, Norm, SVD, UPLO};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

/// Symmetry class of the noise matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Real,
    Complex,
}

/// Entry law of the noise matrix. All laws are centred with variance `1/N`;
/// in the complex case the real and imaginary parts are i.i.d. with variance
/// `1/(2N)` each, which makes the second moment `E[X_ij^2]` vanish.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dist {
    Gaussian,
    Rademacher,
    Uniform,
}

/// Declarative description of a deformation matrix, the unit of configuration
/// for the CLI and the experiment harness. Serialises to JSON with complex
/// numbers as `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// A = 0.
    Zero { n: usize },
    /// Diagonal A with explicit entries (`[re, im]` pairs), cycled to length N.
    Diagonal { n: usize, entries: Vec<[f64; 2]> },
    /// Half the diagonal at `a`, half at `b`.
    TwoCluster { n: usize, a: [f64; 2], b: [f64; 2] },
    /// Diagonal split in three equal groups.
    ThreeCluster {
        n: usize,
        a: [f64; 2],
        b: [f64; 2],
        c: [f64; 2],
    },
    /// Single Jordan block with eigenvalue `lambda`.
    Jordan { n: usize, lambda: [f64; 2] },
    /// Dense user-supplied matrix, row-major `[re, im]` cells.
    Custom { n: usize, rows: Vec<Vec<[f64; 2]>> },
}

/// The ensemble `A + X`: a deterministic deformation together with the
/// symmetry class and entry law of the noise.
#[derive(Debug, Clone)]
pub struct DeformedModel {
    pub a: Array2<c64>,
    pub n: usize,
    pub field: Field,
    pub dist: Dist,
    pub label: String,
    /// Operator norm of A, recorded at construction.
    pub norm_a: f64,
    /// Diagonal entries when A is diagonal; enables closed-form singular
    /// values of A − z without an SVD.
    pub diag: Option<Vec<c64>>,
}

/// One draw of the noise matrix, tagged with its seed and OU time.
#[derive(Debug, Clone)]
pub struct SampledMatrix {
    pub entries: Array2<c64>,
    pub seed: u64,
    pub time: f64,
    pub field: Field,
}

/// The 2N×2N Hermitian block matrix with zero diagonal blocks and
/// off-diagonal blocks `B − z`, `(B − z)^*`.
#[derive(Debug, Clone)]
pub struct Hermitization {
    pub h: Array2<c64>,
    pub z: c64,
}

fn cx(p: [f64; 2]) -> c64 {
    c64::new(p[0], p[1])
}

fn operator_norm(a: &Array2<c64>) -> f64 {
    // Largest singular value; for diagonal matrices this is just max |a_ii|.
    match a.svd(false, false) {
        Ok((_, s, _)) => s.iter().cloned().fold(0.0, f64::max),
        Err(_) => f64::NAN,
    }
}

fn is_diagonal(a: &Array2<c64>) -> bool {
    a.indexed_iter()
        .all(|((i, j), v)| i == j || v.norm() == 0.0)
}

impl DeformedModel {
    /// Construct from a declarative spec with the given noise law.
    pub fn build(spec: &ModelSpec, field: Field, dist: Dist) -> Result<Self> {
        let (a, label) = match spec {
            ModelSpec::Zero { n } => (Array2::zeros((*n, *n)), format!("zero(N={n})")),
            ModelSpec::Diagonal { n, entries } => {
                if entries.is_empty() {
                    return Err(Error::InvalidInput("diagonal spec needs entries".into()));
                }
                let mut a = Array2::zeros((*n, *n));
                for i in 0..*n {
                    a[[i, i]] = cx(entries[i % entries.len()]);
                }
                (a, format!("diagonal(N={n})"))
            }
            ModelSpec::TwoCluster { n, a: ca, b: cb } => {
                let mut a = Array2::zeros((*n, *n));
                for i in 0..*n {
                    a[[i, i]] = if i < n / 2 { cx(*ca) } else { cx(*cb) };
                }
                (a, format!("two_cluster(N={n})"))
            }
            ModelSpec::ThreeCluster { n, a: ca, b: cb, c: cc } => {
                let mut a = Array2::zeros((*n, *n));
                for i in 0..*n {
                    let v = if i < n / 3 {
                        cx(*ca)
                    } else if i < 2 * n / 3 {
                        cx(*cb)
                    } else {
                        cx(*cc)
                    };
                    a[[i, i]] = v;
                }
                (a, format!("three_cluster(N={n})"))
            }
            ModelSpec::Jordan { n, lambda } => {
                let mut a = Array2::zeros((*n, *n));
                for i in 0..*n {
                    a[[i, i]] = cx(*lambda);
                    if i + 1 < *n {
                        a[[i, i + 1]] = c64::new(1.0, 0.0);
                    }
                }
                (a, format!("jordan(N={n})"))
            }
            ModelSpec::Custom { n, rows } => {
                if rows.len() != *n || rows.iter().any(|r| r.len() != *n) {
                    return Err(Error::InvalidInput("custom matrix is not N×N".into()));
                }
                let mut a = Array2::zeros((*n, *n));
                for (i, row) in rows.iter().enumerate() {
                    for (j, p) in row.iter().enumerate() {
                        a[[i, j]] = cx(*p);
                    }
                }
                (a, format!("custom(N={n})"))
            }
        };
        Self::from_matrix(a, field, dist, label)
    }

    /// Construct directly from a matrix.
    pub fn from_matrix(a: Array2<c64>, field: Field, dist: Dist, label: String) -> Result<Self> {
        let (r, c) = a.dim();
        if r != c || r == 0 {
            return Err(Error::InvalidInput(format!(
                "deformation must be square and nonempty, got {r}×{c}"
            )));
        }
        if field == Field::Real && a.iter().any(|v| v.im != 0.0) {
            return Err(Error::InvalidInput(
                "real-field model requires a real deformation matrix".into(),
            ));
        }
        let diag = if is_diagonal(&a) {
            Some(a.diag().to_vec())
        } else {
            None
        };
        let norm_a = if let Some(d) = &diag {
            d.iter().map(|v| v.norm()).fold(0.0, f64::max)
        } else {
            operator_norm(&a)
        };
        Ok(Self { n: r, a, field, dist, label, norm_a, diag })
    }

    pub fn zero(n: usize, field: Field, dist: Dist) -> Self {
        Self::build(&ModelSpec::Zero { n }, field, dist).expect("zero model is always valid")
    }

    /// Singular values of `A − z`, ascending. Closed form for diagonal A.
    pub fn svals_shifted(&self, z: c64) -> Result<Vec<f64>> {
        if let Some(d) = &self.diag {
            let mut s: Vec<f64> = d.iter().map(|a| (a - z).norm()).collect();
            s.sort_by(|x, y| x.partial_cmp(y).unwrap());
            Ok(s)
        } else {
            let mut b = self.a.clone();
            for i in 0..self.n {
                b[[i, i]] -= z;
            }
            singular_values(&b)
        }
    }

    /// `A − z` as a dense matrix.
    pub fn shifted(&self, z: c64) -> Array2<c64> {
        let mut b = self.a.clone();
        for i in 0..self.n {
            b[[i, i]] -= z;
        }
        b
    }

    /// `‖(A − z)^{-1}‖` = 1 / (smallest singular value of A − z).
    pub fn inv_norm_shifted(&self, z: c64) -> Result<f64> {
        let s = self.svals_shifted(z)?;
        let smin = s[0];
        if smin <= 0.0 {
            return Err(Error::InvalidInput(format!("A − z singular at z = {z}")));
        }
        Ok(1.0 / smin)
    }
}

/// Draw the i.i.d. noise matrix `X` for a model. Deterministic in the seed.
pub fn sample_iid(model: &DeformedModel, seed: u64) -> SampledMatrix {
    let n = model.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = match (model.field, model.dist) {
        (Field::Real, Dist::Gaussian) => {
            let g = Normal::new(0.0, (1.0 / n as f64).sqrt()).unwrap();
            Array2::from_shape_simple_fn((n, n), || c64::new(g.sample(&mut rng), 0.0))
        }
        (Field::Complex, Dist::Gaussian) => {
            let g = Normal::new(0.0, (0.5 / n as f64).sqrt()).unwrap();
            Array2::from_shape_simple_fn((n, n), || {
                c64::new(g.sample(&mut rng), g.sample(&mut rng))
            })
        }
        (Field::Real, Dist::Rademacher) => {
            let s = (1.0 / n as f64).sqrt();
            Array2::from_shape_simple_fn((n, n), || {
                c64::new(if rng.gen::<bool>() { s } else { -s }, 0.0)
            })
        }
        (Field::Complex, Dist::Rademacher) => {
            let s = (0.5 / n as f64).sqrt();
            Array2::from_shape_simple_fn((n, n), || {
                c64::new(
                    if rng.gen::<bool>() { s } else { -s },
                    if rng.gen::<bool>() { s } else { -s },
                )
            })
        }
        (Field::Real, Dist::Uniform) => {
            let b = (3.0 / n as f64).sqrt();
            let u = Uniform::new_inclusive(-b, b);
            Array2::from_shape_simple_fn((n, n), || c64::new(u.sample(&mut rng), 0.0))
        }
        (Field::Complex, Dist::Uniform) => {
            let b = (1.5 / n as f64).sqrt();
            let u = Uniform::new_inclusive(-b, b);
            Array2::from_shape_simple_fn((n, n), || {
                c64::new(u.sample(&mut rng), u.sample(&mut rng))
            })
        }
    };
    SampledMatrix { entries, seed, time: 0.0, field: model.field }
}

/// Exact-in-law Ornstein–Uhlenbeck transition over time `t`:
/// `X_t = e^{-t/2} X_0 + G_t` with independent centred Gaussian `G_t` of
/// entry variance `(1 - e^{-t})/N`, same symmetry class as `X_0`.
/// The stationary law is the Ginibre ensemble.
pub fn ou_transition(x0: &SampledMatrix, t: f64, seed: u64) -> Result<SampledMatrix> {
    if t < 0.0 {
        return Err(Error::InvalidInput(format!("OU time must be ≥ 0, got {t}")));
    }
    let n = x0.entries.nrows();
    let decay = (-t / 2.0).exp();
    let var = 1.0 - (-t).exp();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = if var == 0.0 {
        x0.entries.clone()
    } else {
        match x0.field {
            Field::Real => {
                let g = Normal::new(0.0, (var / n as f64).sqrt()).unwrap();
                x0.entries
                    .mapv(|v| v * decay + c64::new(g.sample(&mut rng), 0.0))
            }
            Field::Complex => {
                let g = Normal::new(0.0, (0.5 * var / n as f64).sqrt()).unwrap();
                x0.entries
                    .mapv(|v| v * decay + c64::new(g.sample(&mut rng), g.sample(&mut rng)))
            }
        }
    };
    Ok(SampledMatrix { entries, seed, time: x0.time + t, field: x0.field })
}

/// Build the Hermitisation of `B` at shift `z`.
pub fn hermitize(b: &Array2<c64>, z: c64) -> Result<Hermitization> {
    let (r, c) = b.dim();
    if r != c {
        return Err(Error::InvalidInput(format!("B must be square, got {r}×{c}")));
    }
    let n = r;
    let mut h = Array2::zeros((2 * n, 2 * n));
    for i in 0..n {
        for j in 0..n {
            let v = b[[i, j]] - if i == j { z } else { c64::new(0.0, 0.0) };
            h[[i, n + j]] = v;
            h[[n + j, i]] = v.conj();
        }
    }
    Ok(Hermitization { h, z })
}

impl Hermitization {
    /// Eigenvalues of the Hermitisation, ascending. They come in ± pairs
    /// equal to the singular values of the shifted block.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let (w, _) = self.h.eigh(UPLO::Lower)?;
        Ok(w.to_vec())
    }
}

/// Eigenvalues (with multiplicity) of a dense square complex matrix.
pub fn eigenvalues(b: &Array2<c64>) -> Result<Vec<c64>> {
    let (r, c) = b.dim();
    if r != c {
        return Err(Error::InvalidInput(format!("B must be square, got {r}×{c}")));
    }
    if b.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let (vals, _) = b.eig()?;
    Ok(vals.to_vec())
}

/// Singular values of a dense complex matrix, ascending.
pub fn singular_values(b: &Array2<c64>) -> Result<Vec<f64>> {
    let (_, s, _) = b.svd(false, false)?;
    let mut v = s.to_vec();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(v)
}

/// Residual check `‖Bv − λv‖ / ‖B‖` for an eigenpair, used by tests and the
/// CLI's diagnostic mode.
pub fn eigen_residual(b: &Array2<c64>, lambda: c64, v: &ndarray::Array1<c64>) -> f64 {
    let bv = b.dot(v);
    let diff = &bv - &v.mapv(|x| x * lambda);
    let nb = b.norm_l2().max(1e-300);
    diff.norm_l2() / (nb * v.norm_l2().max(1e-300))
}

/// Serialise a matrix to CSV rows with "re,im" cells (row-major).
pub fn matrix_to_csv(a: &Array2<c64>) -> String {
    let mut out = String::new();
    for row in a.axis_iter(Axis(0)) {
        let cells: Vec<String> = row.iter().map(|v| format!("{} {}", v.re, v.im)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
