//! Cloude–Pottier eigen-decomposition of the coherency matrix: entropy,
//! alpha angles and mean alpha.
//!
//! The Hermitian eigenproblem is solved with cyclic complex Jacobi rotations.
//! For a 3x3 matrix this converges in a handful of sweeps and keeps the
//! eigenvector basis unitary to rounding error, which the reconstruction
//! invariant relies on.

use num_complex::Complex64;
use thiserror::Error;

use crate::types::{CoherencyMatrix, PixelVector, TypeError};

type Mat3 = [[Complex64; 3]; 3];

const MAX_SWEEPS: usize = 64;
/// Eigenvalues below this fraction of the trace are rounding noise.
const EIGEN_NOISE: f64 = 64.0 * f64::EPSILON;
/// Smallest component modulus treated as nonzero during phase normalization.
const PHASE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompositionError {
    #[error("non-finite value in coherency data")]
    NonFinite,
    #[error(transparent)]
    Pixel(#[from] TypeError),
}

/// Minimum total power for a pixel to carry a meaningful decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFloor(pub f64);

impl PowerFloor {
    /// Used when no scene context is available.
    pub const ABSOLUTE: PowerFloor = PowerFloor(1e-300);

    /// `1e-12` times the scene-mean trace.
    pub fn relative_to(mean_trace: f64) -> Self {
        PowerFloor((1e-12 * mean_trace).max(Self::ABSOLUTE.0))
    }
}

impl Default for PowerFloor {
    fn default() -> Self {
        Self::ABSOLUTE
    }
}

/// Eigenvalues sorted descending with paired unit eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSystem {
    pub lambdas: [f64; 3],
    /// `eigvecs[i]` is the eigenvector for `lambdas[i]`.
    pub eigvecs: [[Complex64; 3]; 3],
}

/// Per-pixel H/alpha parameters. Angles are in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HAlpha {
    pub p: [f64; 3],
    pub entropy: f64,
    pub alphas: [f64; 3],
    pub alpha_bar: f64,
    pub valid: bool,
}

impl HAlpha {
    pub fn invalid() -> Self {
        HAlpha { p: [0.0; 3], entropy: 0.0, alphas: [0.0; 3], alpha_bar: 0.0, valid: false }
    }
}

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[Complex64::new(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn adjoint(a: &Mat3) -> Mat3 {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i].conj();
        }
    }
    out
}

fn eye() -> Mat3 {
    let z = Complex64::new(0.0, 0.0);
    let o = Complex64::new(1.0, 0.0);
    [[o, z, z], [z, o, z], [z, z, o]]
}

/// Runs Jacobi sweeps on a Hermitian matrix, returning the (unsorted)
/// diagonal and the accumulated unitary, whose columns are eigenvectors.
fn jacobi_hermitian(mut a: Mat3) -> ([f64; 3], Mat3) {
    let mut v = eye();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = a[0][1].norm_sqr() + a[0][2].norm_sqr() + a[1][2].norm_sqr();
        let diag: f64 = (0..3).map(|i| a[i][i].re * a[i][i].re).sum();
        if off == 0.0 || off <= 1e-34 * (diag + 2.0 * off) {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let b = a[p][q];
            let r = b.norm();
            if r == 0.0 {
                continue;
            }
            let phase = b / r;
            let tau = (a[q][q].re - a[p][p].re) / (2.0 * r);
            let t = if tau.abs() > 1e150 {
                0.5 / tau
            } else {
                let sign = if tau >= 0.0 { 1.0 } else { -1.0 };
                sign / (tau.abs() + (1.0 + tau * tau).sqrt())
            };
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = t * c;
            // U = D R with D = diag(1, conj(phase)) making the (p, q) entry real.
            let mut u = eye();
            u[p][p] = Complex64::new(c, 0.0);
            u[p][q] = Complex64::new(s, 0.0);
            u[q][p] = -phase.conj() * s;
            u[q][q] = phase.conj() * c;
            a = matmul(&adjoint(&u), &matmul(&a, &u));
            // Restore exact Hermitian structure lost to rounding.
            for i in 0..3 {
                a[i][i] = Complex64::new(a[i][i].re, 0.0);
                for j in i + 1..3 {
                    let m = 0.5 * (a[i][j] + a[j][i].conj());
                    a[i][j] = m;
                    a[j][i] = m.conj();
                }
            }
            a[p][q] = Complex64::new(0.0, 0.0);
            a[q][p] = Complex64::new(0.0, 0.0);
            v = matmul(&v, &u);
        }
    }
    ([a[0][0].re, a[1][1].re, a[2][2].re], v)
}

/// Unit-normalizes `e` and rotates its phase so the first nonzero component
/// is real and non-negative.
fn canonical_phase(mut e: [Complex64; 3]) -> [Complex64; 3] {
    let norm = e.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        for z in e.iter_mut() {
            *z /= norm;
        }
    }
    if let Some(lead) = e.iter().find(|z| z.norm() > PHASE_EPS).copied() {
        let rot = lead.conj() / lead.norm();
        for z in e.iter_mut() {
            *z *= rot;
        }
    }
    e
}

pub fn eigendecompose(t: &CoherencyMatrix) -> Result<EigenSystem, DecompositionError> {
    let full = t.to_full();
    let max = full
        .iter()
        .flatten()
        .map(|z| z.re.abs().max(z.im.abs()))
        .fold(0.0, f64::max);
    if !max.is_finite() {
        return Err(DecompositionError::NonFinite);
    }
    if max == 0.0 {
        let basis = eye();
        return Ok(EigenSystem {
            lambdas: [0.0; 3],
            eigvecs: [0, 1, 2].map(|i| [basis[0][i], basis[1][i], basis[2][i]]),
        });
    }
    let mut scaled = full;
    for z in scaled.iter_mut().flatten() {
        *z /= max;
    }
    let (diag, v) = jacobi_hermitian(scaled);

    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]));

    let trace = t.trace();
    let mut lambdas = [0.0; 3];
    let mut eigvecs = [[Complex64::new(0.0, 0.0); 3]; 3];
    for (slot, &i) in idx.iter().enumerate() {
        let lam = diag[i] * max;
        lambdas[slot] = if lam <= EIGEN_NOISE * trace { 0.0 } else { lam };
        eigvecs[slot] = canonical_phase([v[0][i], v[1][i], v[2][i]]);
    }
    if lambdas.iter().any(|l| !l.is_finite()) {
        return Err(DecompositionError::NonFinite);
    }
    Ok(EigenSystem { lambdas, eigvecs })
}

/// Smallest eigenvalue without clamping, for PSD validation.
pub fn min_eigenvalue(t: &CoherencyMatrix) -> Result<f64, DecompositionError> {
    let full = t.to_full();
    let max = full.iter().flatten().map(|z| z.re.abs().max(z.im.abs())).fold(0.0, f64::max);
    if !max.is_finite() {
        return Err(DecompositionError::NonFinite);
    }
    if max == 0.0 {
        return Ok(0.0);
    }
    let mut scaled = full;
    for z in scaled.iter_mut().flatten() {
        *z /= max;
    }
    let (diag, _) = jacobi_hermitian(scaled);
    Ok(diag.iter().copied().fold(f64::INFINITY, f64::min) * max)
}

pub fn pseudo_probabilities(lambdas: [f64; 3]) -> [f64; 3] {
    pseudo_probabilities_with_floor(lambdas, PowerFloor::ABSOLUTE)
}

/// `λ_i / Σλ`, or all zeros when the total power is below `floor`.
pub fn pseudo_probabilities_with_floor(lambdas: [f64; 3], floor: PowerFloor) -> [f64; 3] {
    let total: f64 = lambdas.iter().sum();
    if !(total >= floor.0) || total <= 0.0 {
        return [0.0; 3];
    }
    lambdas.map(|l| l / total)
}

/// Base-3 entropy with `0 log 0 = 0`, clamped to `[0, 1]`.
pub fn entropy(p: [f64; 3]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum::<f64>()
        / 3f64.ln();
    h.clamp(0.0, 1.0)
}

/// `α_i = arccos |e_i[0]|` in degrees.
pub fn alpha_angles(es: &EigenSystem) -> [f64; 3] {
    es.eigvecs
        .map(|e| e[0].norm().min(1.0).acos().to_degrees().clamp(0.0, 90.0))
}

pub fn mean_alpha(p: [f64; 3], alphas: [f64; 3]) -> f64 {
    (p[0] * alphas[0] + p[1] * alphas[1] + p[2] * alphas[2]).clamp(0.0, 90.0)
}

pub fn halpha_of_matrix(t: &CoherencyMatrix, floor: PowerFloor) -> Result<HAlpha, DecompositionError> {
    if !(t.trace() >= floor.0) {
        return Ok(HAlpha::invalid());
    }
    let es = eigendecompose(t)?;
    let p = pseudo_probabilities_with_floor(es.lambdas, floor);
    if p == [0.0; 3] {
        return Ok(HAlpha::invalid());
    }
    let alphas = alpha_angles(&es);
    Ok(HAlpha { p, entropy: entropy(p), alphas, alpha_bar: mean_alpha(p, alphas), valid: true })
}

pub fn halpha_of_pixel(v: &PixelVector) -> Result<HAlpha, DecompositionError> {
    halpha_of_pixel_with_floor(v, PowerFloor::ABSOLUTE)
}

pub fn halpha_of_pixel_with_floor(
    v: &PixelVector,
    floor: PowerFloor,
) -> Result<HAlpha, DecompositionError> {
    halpha_of_matrix(&v.to_matrix()?, floor)
}
