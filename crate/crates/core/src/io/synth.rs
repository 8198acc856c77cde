//! Synthetic multi-look PolSAR scenes.
//!
//! Each pixel of class `c` averages `L` outer products of circular complex
//! Gaussian scattering vectors `k ~ CN(0, Σ_c)`, so the coherency matrices
//! follow a scaled complex Wishart law with mean `Σ_c`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::halpha::{eigendecompose, min_eigenvalue};
use crate::types::{CoherencyMatrix, SceneDataset, TypeError, UNLABELED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawClassSpec")]
pub struct ClassSpec {
    pub name: String,
    /// Mean coherency matrix of the class.
    pub sigma: CoherencyMatrix,
}

#[derive(Deserialize)]
struct RawClassSpec {
    name: String,
    sigma: serde_json::Value,
}

impl TryFrom<RawClassSpec> for ClassSpec {
    type Error = String;
    fn try_from(raw: RawClassSpec) -> Result<Self, Self::Error> {
        let sigma: CoherencyMatrix = serde_json::from_value(raw.sigma)
            .map_err(|e| format!("class '{}' has an invalid covariance: {e}", raw.name))?;
        Ok(ClassSpec { name: raw.name, sigma })
    }
}

impl ClassSpec {
    pub fn new(name: &str, sigma: CoherencyMatrix) -> Self {
        ClassSpec { name: name.to_string(), sigma }
    }
}

/// Rectangular labeled area; later regions overwrite earlier ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// `blocks x blocks` equal tiles, class `(block_row·blocks + block_col) mod C`.
    Grid { blocks: usize },
    /// Uncovered pixels are unlabeled and drawn from the background covariance.
    Regions { regions: Vec<Region> },
    /// Row-major label raster, `65535` for unlabeled.
    Raster { labels: Vec<u16> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub rows: usize,
    pub cols: usize,
    pub looks: usize,
    pub layout: Layout,
    pub classes: Vec<ClassSpec>,
    /// Covariance for unlabeled pixels; defaults to the mean class covariance.
    pub background: Option<CoherencyMatrix>,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            rows: 256,
            cols: 256,
            looks: 4,
            layout: Layout::Grid { blocks: 4 },
            classes: default_palette(),
            background: None,
            seed: 7,
        }
    }
}

/// Five classes spread over the H/alpha plane.
pub fn default_palette() -> Vec<ClassSpec> {
    let z = Complex64::new(0.0, 0.0);
    let third = 1.0 / 3.0;
    vec![
        ClassSpec::new("surface", CoherencyMatrix::diag(0.9, 0.08, 0.02).unwrap()),
        ClassSpec::new("double-bounce", CoherencyMatrix::diag(0.08, 0.9, 0.02).unwrap()),
        ClassSpec::new("volume", CoherencyMatrix::diag(third, third, third).unwrap()),
        ClassSpec::new("mixed-a", CoherencyMatrix::diag(0.5, 0.3, 0.2).unwrap()),
        ClassSpec::new(
            "mixed-b",
            CoherencyMatrix::new(0.4, 0.4, 0.2, Complex64::new(0.15, 0.0), z, z).unwrap(),
        ),
    ]
}

fn check_covariance(name: &str, sigma: &CoherencyMatrix) -> Result<(), DataError> {
    let bad = |reason: String| DataError::InvalidCovariance { class: name.to_string(), reason };
    let trace = sigma.trace();
    if !(trace > 0.0) {
        return Err(bad(format!("trace {trace} is not positive")));
    }
    let min = min_eigenvalue(sigma).map_err(|e| bad(e.to_string()))?;
    if min < -1e-9 * trace {
        return Err(bad(format!("not positive semidefinite (min eigenvalue {min:e})")));
    }
    Ok(())
}

/// `Σ^{1/2}` as `V Λ^{1/2}`, so that `A Aᴴ = Σ`.
fn square_root(sigma: &CoherencyMatrix) -> Result<[[Complex64; 3]; 3], DataError> {
    let es = eigendecompose(sigma).map_err(|e| DataError::InvalidSpec(e.to_string()))?;
    let mut a = [[Complex64::new(0.0, 0.0); 3]; 3];
    for (j, (lam, e)) in es.lambdas.iter().zip(es.eigvecs.iter()).enumerate() {
        let s = lam.max(0.0).sqrt();
        for i in 0..3 {
            a[i][j] = e[i] * s;
        }
    }
    Ok(a)
}

fn label_raster(spec: &SceneSpec) -> Result<Vec<u16>, DataError> {
    let (rows, cols, classes) = (spec.rows, spec.cols, spec.classes.len());
    match &spec.layout {
        Layout::Grid { blocks } => {
            if *blocks == 0 || *blocks > rows.min(cols) {
                return Err(DataError::InvalidSpec(format!("grid of {blocks} blocks does not fit")));
            }
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let br = r * blocks / rows;
                for c in 0..cols {
                    let bc = c * blocks / cols;
                    out.push(((br * blocks + bc) % classes) as u16);
                }
            }
            Ok(out)
        }
        Layout::Regions { regions } => {
            let mut out = vec![UNLABELED; rows * cols];
            for reg in regions {
                if reg.class >= classes {
                    return Err(DataError::InvalidSpec(format!("region class {} >= {classes}", reg.class)));
                }
                if reg.row + reg.rows > rows || reg.col + reg.cols > cols {
                    return Err(DataError::InvalidSpec(format!("region {reg:?} leaves the scene")));
                }
                for r in reg.row..reg.row + reg.rows {
                    out[r * cols + reg.col..r * cols + reg.col + reg.cols].fill(reg.class as u16);
                }
            }
            Ok(out)
        }
        Layout::Raster { labels } => {
            if labels.len() != rows * cols {
                return Err(TypeError::DimensionMismatch { expected: rows * cols, found: labels.len() }.into());
            }
            if let Some(l) = labels.iter().find(|&&l| l != UNLABELED && l as usize >= classes) {
                return Err(DataError::InvalidSpec(format!("raster label {l} >= {classes}")));
            }
            Ok(labels.clone())
        }
    }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<SceneDataset, DataError> {
    if spec.rows == 0 || spec.cols == 0 {
        return Err(DataError::InvalidSpec("scene must have at least one pixel".into()));
    }
    if spec.looks == 0 {
        return Err(DataError::InvalidSpec("looks must be at least 1".into()));
    }
    if spec.classes.is_empty() || spec.classes.len() >= UNLABELED as usize {
        return Err(DataError::InvalidSpec("need between 1 and 65534 classes".into()));
    }
    for c in &spec.classes {
        check_covariance(&c.name, &c.sigma)?;
    }
    let background = match spec.background {
        Some(b) => b,
        None => {
            let n = spec.classes.len() as f64;
            let v = spec.classes.iter().fold([0.0; 9], |mut acc, c| {
                for (a, x) in acc.iter_mut().zip(c.sigma.to_vector().0) {
                    *a += x / n;
                }
                acc
            });
            crate::types::vector_to_matrix(&crate::types::PixelVector(v))?
        }
    };
    check_covariance("background", &background)?;

    let labels = label_raster(spec)?;
    let roots = spec
        .classes
        .iter()
        .map(|c| square_root(&c.sigma))
        .collect::<Result<Vec<_>, _>>()?;
    let background_root = square_root(&background)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut looks = vec![[Complex64::new(0.0, 0.0); 3]; spec.looks];
    let mut data = Vec::with_capacity(spec.rows * spec.cols);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    for &label in &labels {
        let a = if label == UNLABELED { &background_root } else { &roots[label as usize] };
        for k in looks.iter_mut() {
            let mut z = [Complex64::new(0.0, 0.0); 3];
            for zi in z.iter_mut() {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                *zi = Complex64::new(re * scale, im * scale);
            }
            for i in 0..3 {
                k[i] = a[i][0] * z[0] + a[i][1] * z[1] + a[i][2] * z[2];
            }
        }
        data.push(CoherencyMatrix::from_outer_products(&looks)?);
    }
    let names = spec.classes.iter().map(|c| c.name.clone()).collect();
    Ok(SceneDataset::new(spec.rows, spec.cols, data, labels, names)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halpha::{halpha_of_matrix, PowerFloor};

    fn one_class(sigma: CoherencyMatrix, looks: usize, rows: usize, seed: u64) -> SceneDataset {
        let spec = SceneSpec {
            rows,
            cols: 100,
            looks,
            layout: Layout::Grid { blocks: 1 },
            classes: vec![ClassSpec::new("c", sigma)],
            background: None,
            seed,
        };
        generate_scene(&spec).unwrap()
    }

    fn mean_entropy(ds: &SceneDataset) -> f64 {
        ds.data()
            .iter()
            .map(|t| halpha_of_matrix(t, PowerFloor::ABSOLUTE).unwrap().entropy)
            .sum::<f64>()
            / ds.data().len() as f64
    }

    #[test]
    fn single_look_is_rank_one() {
        let ds = one_class(CoherencyMatrix::diag(0.5, 0.3, 0.2).unwrap(), 1, 20, 1);
        for t in ds.data() {
            assert_eq!(halpha_of_matrix(t, PowerFloor::ABSOLUTE).unwrap().entropy, 0.0);
        }
    }

    #[test]
    fn pure_surface_has_low_entropy() {
        let ds = one_class(CoherencyMatrix::diag(1.0, 0.0, 0.0).unwrap(), 8, 100, 2);
        assert!(mean_entropy(&ds) < 0.15);
        let mean_alpha = ds
            .data()
            .iter()
            .map(|t| halpha_of_matrix(t, PowerFloor::ABSOLUTE).unwrap().alpha_bar)
            .sum::<f64>()
            / 10_000.0;
        assert!(mean_alpha < 1.0, "{mean_alpha}");
    }

    #[test]
    fn isotropic_volume_entropy_grows_with_looks() {
        let third = 1.0 / 3.0;
        let sigma = CoherencyMatrix::diag(third, third, third).unwrap();
        let h4 = mean_entropy(&one_class(sigma, 4, 100, 3));
        let h64 = mean_entropy(&one_class(sigma, 64, 100, 3));
        assert!(h64 > 0.9, "{h64}");
        assert!(h64 > h4);
    }

    #[test]
    fn empirical_mean_matches_covariance() {
        let sigma = default_palette()[4].sigma;
        let ds = one_class(sigma, 4, 100, 4);
        let n = ds.data().len() as f64;
        let mut mean = [0.0; 9];
        for t in ds.data() {
            for (m, x) in mean.iter_mut().zip(t.to_vector().0) {
                *m += x / n;
            }
        }
        let target = sigma.to_vector().0;
        // Off-diagonals count twice in the Frobenius norm.
        let w = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0];
        let err: f64 = (0..9).map(|i| w[i] * (mean[i] - target[i]).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = (0..9).map(|i| w[i] * target[i].powi(2)).sum::<f64>().sqrt();
        assert!(err / norm < 0.05, "{}", err / norm);
    }

    #[test]
    fn generation_is_seeded() {
        let spec = SceneSpec { rows: 8, cols: 8, ..SceneSpec::default() };
        assert_eq!(generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
        let other = SceneSpec { seed: 8, ..spec.clone() };
        assert_ne!(generate_scene(&spec).unwrap(), generate_scene(&other).unwrap());
    }

    #[test]
    fn every_pixel_is_psd() {
        let ds = generate_scene(&SceneSpec { rows: 40, cols: 40, ..SceneSpec::default() }).unwrap();
        for t in ds.data() {
            assert!(min_eigenvalue(t).unwrap() >= -1e-9 * t.trace());
        }
    }

    #[test]
    fn invalid_covariance_names_class() {
        let z = Complex64::new(0.0, 0.0);
        let bad = CoherencyMatrix::new(1.0, 1.0, 0.0, Complex64::new(3.0, 0.0), z, z).unwrap();
        let spec = SceneSpec {
            rows: 4,
            cols: 4,
            classes: vec![ClassSpec::new("good", CoherencyMatrix::identity()), ClassSpec::new("broken", bad)],
            ..SceneSpec::default()
        };
        let err = generate_scene(&spec).unwrap_err();
        assert!(matches!(&err, DataError::InvalidCovariance { class, .. } if class == "broken"), "{err}");
        let spec = SceneSpec {
            classes: vec![ClassSpec::new("dark", CoherencyMatrix::zero())],
            ..SceneSpec::default()
        };
        assert!(matches!(generate_scene(&spec), Err(DataError::InvalidCovariance { .. })));
    }

    #[test]
    fn layouts() {
        let spec = SceneSpec {
            rows: 4,
            cols: 4,
            layout: Layout::Regions { regions: vec![Region { row: 0, col: 0, rows: 2, cols: 4, class: 1 }] },
            ..SceneSpec::default()
        };
        let ds = generate_scene(&spec).unwrap();
        assert_eq!(ds.label(1, 3), Some(1));
        assert_eq!(ds.label(2, 0), None);

        let grid = generate_scene(&SceneSpec { rows: 8, cols: 8, layout: Layout::Grid { blocks: 4 }, ..SceneSpec::default() }).unwrap();
        assert_eq!(grid.label(0, 0), Some(0));
        assert_eq!(grid.label(2, 0), Some(4));
        assert_eq!(grid.label(2, 2), Some(0));

        let bad = SceneSpec { rows: 2, cols: 2, layout: Layout::Raster { labels: vec![0, 1, 2] }, ..SceneSpec::default() };
        assert!(generate_scene(&bad).is_err());
    }

    #[test]
    fn spec_json_round_trip_and_class_named_errors() {
        let spec = SceneSpec { rows: 3, cols: 3, ..SceneSpec::default() };
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<SceneSpec>(&text).unwrap(), spec);
        let bad = r#"{"classes": [{"name": "weird", "sigma": {"t11": -1, "t22": 1, "t33": 1}}]}"#;
        let err = serde_json::from_str::<SceneSpec>(bad).unwrap_err().to_string();
        assert!(err.contains("weird"), "{err}");
    }
}
