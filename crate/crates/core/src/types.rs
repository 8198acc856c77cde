//! Shared PolSAR data model: coherency matrices, pixel vectors, patches and
//! labeled scenes.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label-grid value for pixels with no ground truth.
pub const UNLABELED: u16 = u16::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("non-finite component at position {0}")]
    NonFinite(usize),
    #[error("negative diagonal power t{0}{0} = {1}")]
    NegativePower(usize, f64),
    #[error("grid dimension mismatch: expected {expected} cells, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty patch ({0}x{1})")]
    EmptyPatch(usize, usize),
}

/// 3x3 Hermitian coherency matrix, stored as its upper triangle.
///
/// The lower triangle is implied by conjugation, so a value of this type is
/// Hermitian by construction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "CoherencyRepr", into = "CoherencyRepr")]
pub struct CoherencyMatrix {
    t11: f64,
    t22: f64,
    t33: f64,
    t12: Complex64,
    t13: Complex64,
    t23: Complex64,
}

impl CoherencyMatrix {
    pub fn new(
        t11: f64,
        t22: f64,
        t33: f64,
        t12: Complex64,
        t13: Complex64,
        t23: Complex64,
    ) -> Result<Self, TypeError> {
        let m = CoherencyMatrix { t11, t22, t33, t12, t13, t23 };
        m.validate()?;
        Ok(m)
    }

    pub fn diag(t11: f64, t22: f64, t33: f64) -> Result<Self, TypeError> {
        let z = Complex64::new(0.0, 0.0);
        Self::new(t11, t22, t33, z, z, z)
    }

    pub fn identity() -> Self {
        Self::diag(1.0, 1.0, 1.0).expect("identity is valid")
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Builds `(1/L) Σ k kᴴ` from `L ≥ 1` scattering vectors.
    pub fn from_outer_products(vectors: &[[Complex64; 3]]) -> Result<Self, TypeError> {
        let mut acc = [[Complex64::new(0.0, 0.0); 3]; 3];
        for k in vectors {
            for i in 0..3 {
                for j in i..3 {
                    acc[i][j] += k[i] * k[j].conj();
                }
            }
        }
        let scale = 1.0 / vectors.len().max(1) as f64;
        Self::new(
            acc[0][0].re * scale,
            acc[1][1].re * scale,
            acc[2][2].re * scale,
            acc[0][1] * scale,
            acc[0][2] * scale,
            acc[1][2] * scale,
        )
    }

    fn validate(&self) -> Result<(), TypeError> {
        for (i, x) in self.to_vector().0.iter().enumerate() {
            if !x.is_finite() {
                return Err(TypeError::NonFinite(i));
            }
        }
        for (i, d) in [self.t11, self.t22, self.t33].into_iter().enumerate() {
            if d < 0.0 {
                return Err(TypeError::NegativePower(i + 1, d));
            }
        }
        Ok(())
    }

    pub fn t11(&self) -> f64 {
        self.t11
    }
    pub fn t22(&self) -> f64 {
        self.t22
    }
    pub fn t33(&self) -> f64 {
        self.t33
    }
    pub fn t12(&self) -> Complex64 {
        self.t12
    }
    pub fn t13(&self) -> Complex64 {
        self.t13
    }
    pub fn t23(&self) -> Complex64 {
        self.t23
    }

    pub fn trace(&self) -> f64 {
        self.t11 + self.t22 + self.t33
    }

    /// Full matrix with the lower triangle reconstructed by conjugation.
    pub fn to_full(&self) -> [[Complex64; 3]; 3] {
        let d = |x: f64| Complex64::new(x, 0.0);
        [
            [d(self.t11), self.t12, self.t13],
            [self.t12.conj(), d(self.t22), self.t23],
            [self.t13.conj(), self.t23.conj(), d(self.t33)],
        ]
    }

    /// Every entry multiplied by a non-negative factor.
    pub fn scaled(&self, c: f64) -> Result<Self, TypeError> {
        Self::new(
            self.t11 * c,
            self.t22 * c,
            self.t33 * c,
            self.t12 * c,
            self.t13 * c,
            self.t23 * c,
        )
    }

    pub fn to_vector(&self) -> PixelVector {
        matrix_to_vector(self)
    }
}

#[derive(Serialize, Deserialize)]
struct CoherencyRepr {
    t11: f64,
    t22: f64,
    t33: f64,
    #[serde(default)]
    t12: [f64; 2],
    #[serde(default)]
    t13: [f64; 2],
    #[serde(default)]
    t23: [f64; 2],
}

impl TryFrom<CoherencyRepr> for CoherencyMatrix {
    type Error = TypeError;
    fn try_from(r: CoherencyRepr) -> Result<Self, Self::Error> {
        let c = |v: [f64; 2]| Complex64::new(v[0], v[1]);
        CoherencyMatrix::new(r.t11, r.t22, r.t33, c(r.t12), c(r.t13), c(r.t23))
    }
}

impl From<CoherencyMatrix> for CoherencyRepr {
    fn from(m: CoherencyMatrix) -> Self {
        let c = |z: Complex64| [z.re, z.im];
        CoherencyRepr {
            t11: m.t11,
            t22: m.t22,
            t33: m.t33,
            t12: c(m.t12),
            t13: c(m.t13),
            t23: c(m.t23),
        }
    }
}

/// The nine real channels of a coherency matrix, ordered
/// `t11, t22, t33, Re t12, Im t12, Re t13, Im t13, Re t23, Im t23`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PixelVector(pub [f64; 9]);

impl PixelVector {
    pub const LEN: usize = 9;

    pub fn as_array(&self) -> &[f64; 9] {
        &self.0
    }

    pub fn to_matrix(&self) -> Result<CoherencyMatrix, TypeError> {
        vector_to_matrix(self)
    }
}

pub fn matrix_to_vector(t: &CoherencyMatrix) -> PixelVector {
    PixelVector([
        t.t11, t.t22, t.t33, t.t12.re, t.t12.im, t.t13.re, t.t13.im, t.t23.re, t.t23.im,
    ])
}

pub fn vector_to_matrix(v: &PixelVector) -> Result<CoherencyMatrix, TypeError> {
    let v = &v.0;
    CoherencyMatrix::new(
        v[0],
        v[1],
        v[2],
        Complex64::new(v[3], v[4]),
        Complex64::new(v[5], v[6]),
        Complex64::new(v[7], v[8]),
    )
}

/// An `rows x cols` window of pixel vectors with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    rows: usize,
    cols: usize,
    pixels: Vec<PixelVector>,
    label: usize,
    origin: (usize, usize),
}

impl Patch {
    /// `pixels` is row-major. `origin` is the center pixel in the source scene.
    pub fn new(
        rows: usize,
        cols: usize,
        pixels: Vec<PixelVector>,
        label: usize,
        origin: (usize, usize),
    ) -> Result<Self, TypeError> {
        if rows == 0 || cols == 0 {
            return Err(TypeError::EmptyPatch(rows, cols));
        }
        if pixels.len() != rows * cols {
            return Err(TypeError::DimensionMismatch {
                expected: rows * cols,
                found: pixels.len(),
            });
        }
        Ok(Patch { rows, cols, pixels, label, origin })
    }

    /// A patch filled with copies of one matrix.
    pub fn uniform(size: usize, t: &CoherencyMatrix, label: usize) -> Result<Self, TypeError> {
        Self::new(size, size, vec![t.to_vector(); size * size], label, (0, 0))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn pixels(&self) -> &[PixelVector] {
        &self.pixels
    }
    pub fn pixel(&self, r: usize, c: usize) -> &PixelVector {
        &self.pixels[r * self.cols + c]
    }
    pub fn label(&self) -> usize {
        self.label
    }
    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = label;
        self
    }

    /// Same patch with every pixel matrix multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let pixels = self
            .pixels
            .iter()
            .map(|p| PixelVector(p.0.map(|x| x * c)))
            .collect();
        Patch { pixels, ..self.clone() }
    }
}

/// Full raster of coherency data with a ground-truth label map.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    rows: usize,
    cols: usize,
    data: Vec<CoherencyMatrix>,
    labels: Vec<u16>,
    class_names: Vec<String>,
}

impl SceneDataset {
    pub fn new(
        rows: usize,
        cols: usize,
        data: Vec<CoherencyMatrix>,
        labels: Vec<u16>,
        class_names: Vec<String>,
    ) -> Result<Self, TypeError> {
        let cells = rows * cols;
        if data.len() != cells {
            return Err(TypeError::DimensionMismatch { expected: cells, found: data.len() });
        }
        if labels.len() != cells {
            return Err(TypeError::DimensionMismatch { expected: cells, found: labels.len() });
        }
        let classes = class_names.len();
        if let Some(&bad) = labels
            .iter()
            .find(|&&l| l != UNLABELED && l as usize >= classes)
        {
            return Err(TypeError::LabelOutOfRange { label: bad as usize, classes });
        }
        Ok(SceneDataset { rows, cols, data, labels, class_names })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }
    pub fn data(&self) -> &[CoherencyMatrix] {
        &self.data
    }
    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn pixel(&self, r: usize, c: usize) -> &CoherencyMatrix {
        &self.data[r * self.cols + c]
    }

    /// Class index at `(r, c)`, `None` when unlabeled.
    pub fn label(&self, r: usize, c: usize) -> Option<usize> {
        match self.labels[r * self.cols + c] {
            UNLABELED => None,
            l => Some(l as usize),
        }
    }

    pub fn mean_trace(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|t| t.trace()).sum::<f64>() / self.data.len() as f64
    }

    /// Per-class pixel counts (unlabeled pixels excluded).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            if l != UNLABELED {
                counts[l as usize] += 1;
            }
        }
        counts
    }

    /// Square window of side `size` centered on `(r, c)`. Returns `None` if it
    /// would leave the raster.
    pub fn window(&self, r: usize, c: usize, size: usize) -> Option<Vec<PixelVector>> {
        let half = size / 2;
        if size == 0 || r < half || c < half || r + half >= self.rows || c + half >= self.cols {
            return None;
        }
        let mut out = Vec::with_capacity(size * size);
        for rr in r - half..=r + half {
            let row = &self.data[rr * self.cols..(rr + 1) * self.cols];
            out.extend(row[c - half..=c + half].iter().map(matrix_to_vector));
        }
        Some(out)
    }

    /// Labeled patch centered on `(r, c)`; `None` at the border or when the
    /// center is unlabeled.
    pub fn patch_at(&self, r: usize, c: usize, size: usize) -> Option<Patch> {
        let label = self.label(r, c)?;
        let pixels = self.window(r, c, size)?;
        Some(Patch { rows: size, cols: size, pixels, label, origin: (r, c) })
    }

    /// Every pixel matrix multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self, TypeError> {
        let data = self.data.iter().map(|t| t.scaled(c)).collect::<Result<_, _>>()?;
        Ok(SceneDataset { data, ..self.clone() })
    }
}
