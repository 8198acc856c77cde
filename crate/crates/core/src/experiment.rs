//! Paired curriculum / baseline experiments over several seeds, and the
//! result files they produce.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{init_model, ClassifierError, Model, ModelConfig, Trainer};
use crate::dcl::{aggregate_runs, run_baseline, run_dcl, BaselineConfig, DclConfig, DclError, MeanStd, ScenePatches, TrainingLog};
use crate::io::{extract_centers, generate_scene, load_scene, split_pools, write_legend_csv, DataError, PatchExtractionSpec, SceneSpec};
use crate::types::{Patch, SceneDataset};

const TEST_SUBSET_STREAM: u64 = 3;
const MAP_CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Dcl(#[from] DclError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSource {
    Path(PathBuf),
    Synthetic(SceneSpec),
}

impl Default for SceneSource {
    fn default() -> Self {
        SceneSource::Synthetic(SceneSpec::default())
    }
}

impl SceneSource {
    pub fn load(&self) -> Result<SceneDataset, ExperimentError> {
        Ok(match self {
            SceneSource::Path(p) => load_scene(p)?,
            SceneSource::Synthetic(spec) => generate_scene(spec)?,
        })
    }
}

/// Classifier hyperparameters; the class count comes from the scene and the
/// initialization seed from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub features: usize,
    pub hidden: usize,
    pub learning_rate: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = ModelConfig::default();
        ModelSettings { features: d.features, hidden: d.hidden, learning_rate: d.learning_rate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scene: SceneSource,
    pub patch: PatchExtractionSpec,
    /// Train pool / validation / test fractions.
    pub split_fractions: [f64; 3],
    pub dcl: DclConfig,
    pub baseline: BaselineConfig,
    pub model: ModelSettings,
    pub num_seeds: usize,
    /// Seeds run are `first_seed .. first_seed + num_seeds`.
    pub first_seed: u64,
    /// Seeded subset of the test split used for OA; `None` keeps all of it.
    pub max_test_samples: Option<usize>,
    pub write_maps: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scene: SceneSource::default(),
            patch: PatchExtractionSpec::default(),
            split_fractions: [0.6, 0.2, 0.2],
            dcl: DclConfig::default(),
            baseline: BaselineConfig::default(),
            model: ModelSettings::default(),
            num_seeds: 10,
            first_seed: 0,
            max_test_samples: Some(3000),
            write_maps: true,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        if self.num_seeds == 0 {
            return bad("num_seeds must be at least 1".into());
        }
        if (self.dcl.samples_per_stage, self.dcl.stages) != (self.baseline.samples_per_stage, self.baseline.stages) {
            return bad("curriculum and baseline must share samples_per_stage and stages".into());
        }
        if self.max_test_samples == Some(0) {
            return bad("max_test_samples must be at least 1".into());
        }
        if let SceneSource::Path(p) = &self.scene {
            if !p.exists() {
                return bad(format!("scene file {} does not exist", p.display()));
            }
        }
        self.patch.validate()?;
        Ok(())
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        let first = self.first_seed;
        (0..self.num_seeds as u64).map(move |i| first + i)
    }

    fn model_config(&self, classes: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            patch_size: self.patch.patch_size,
            num_classes: classes,
            features: self.model.features,
            hidden: self.model.hidden,
            learning_rate: self.model.learning_rate,
            seed,
        }
    }
}

/// Both methods' logs and final models for one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub curriculum: TrainingLog,
    pub baseline: TrainingLog,
    pub curriculum_model: Model,
    pub baseline_model: Model,
}

/// Runs one seed: stratified split, shared initialization and shared stage
/// draws for both methods.
pub fn run_seed(scene: &SceneDataset, cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun, ExperimentError> {
    cfg.validate()?;
    let centers = extract_centers(scene, &cfg.patch)?;
    let splits = split_pools(&centers, |c| c.2, cfg.split_fractions, seed)?;
    let mut test_centers = splits.test;
    if let Some(cap) = cfg.max_test_samples {
        if test_centers.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(TEST_SUBSET_STREAM);
            test_centers.shuffle(&mut rng);
            test_centers.truncate(cap);
            test_centers.sort_unstable();
        }
    }
    let size = cfg.patch.patch_size;
    let test: Vec<Patch> = test_centers
        .iter()
        .map(|&(r, c, _)| scene.patch_at(r, c, size).expect("center fits the scene"))
        .collect();
    let test_refs: Vec<&Patch> = test.iter().collect();
    let pool = ScenePatches::new(scene, splits.train, size);

    let model = init_model(&cfg.model_config(scene.num_classes(), seed))?;
    let dcl_cfg = DclConfig { seed, ..cfg.dcl.clone() };
    let base_cfg = BaselineConfig { seed, ..cfg.baseline.clone() };
    let (curriculum_model, curriculum) = run_dcl(&pool, &test_refs, &dcl_cfg, model.clone())?;
    let (baseline_model, baseline) = run_baseline(&pool, &test_refs, &base_cfg, model)?;
    Ok(SeedRun { seed, curriculum, baseline, curriculum_model, baseline_model })
}

/// Predicted class for every non-border pixel; `None` on the border.
pub fn classify_scene<M: Trainer>(scene: &SceneDataset, model: &M, patch_size: usize) -> Result<Vec<Option<usize>>, ExperimentError> {
    let half = patch_size / 2;
    let mut out = vec![None; scene.rows() * scene.cols()];
    if scene.rows() < patch_size || scene.cols() < patch_size {
        return Ok(out);
    }
    let centers: Vec<(usize, usize)> = (half..scene.rows() - half)
        .flat_map(|r| (half..scene.cols() - half).map(move |c| (r, c)))
        .collect();
    for chunk in centers.chunks(MAP_CHUNK) {
        let patches: Vec<Patch> = chunk
            .iter()
            .map(|&(r, c)| {
                let w = scene.window(r, c, patch_size).expect("center fits the scene");
                Patch::new(patch_size, patch_size, w, 0, (r, c)).expect("window is square")
            })
            .collect();
        let refs: Vec<&Patch> = patches.iter().collect();
        for (&(r, c), k) in chunk.iter().zip(model.predict(&refs)?) {
            out[r * scene.cols() + c] = Some(k);
        }
    }
    Ok(out)
}

/// Binary PGM; gray `round(255·(k+1)/C)` for class `k`, 0 where `None`.
pub fn write_pgm<W: Write>(rows: usize, cols: usize, classes: usize, map: &[Option<usize>], mut w: W) -> std::io::Result<()> {
    write!(w, "P5\n{cols} {rows}\n255\n")?;
    let bytes: Vec<u8> = map
        .iter()
        .map(|k| match k {
            Some(k) => (255.0 * (*k + 1) as f64 / classes as f64).round() as u8,
            None => 0,
        })
        .collect();
    w.write_all(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub final_oa: MeanStd,
    pub total_seconds: MeanStd,
    pub per_seed_final_oa: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub started_at: u64,
    pub config: ExperimentConfig,
    pub completed_seeds: Vec<u64>,
    pub failed_seeds: Vec<(u64, String)>,
    pub curriculum: Option<MethodSummary>,
    pub baseline: Option<MethodSummary>,
    /// Mean of per-seed `curriculum - baseline` final OA.
    pub final_oa_gap: Option<MeanStd>,
}

pub fn summarize(runs: &[SeedRun], failed: Vec<(u64, String)>, cfg: &ExperimentConfig, started_at: u64) -> Result<ExperimentSummary, ExperimentError> {
    let mut summary = ExperimentSummary {
        started_at,
        config: cfg.clone(),
        completed_seeds: runs.iter().map(|r| r.seed).collect(),
        failed_seeds: failed,
        curriculum: None,
        baseline: None,
        final_oa_gap: None,
    };
    if runs.is_empty() {
        return Ok(summary);
    }
    let pairs: Vec<(TrainingLog, TrainingLog)> = runs.iter().map(|r| (r.curriculum.clone(), r.baseline.clone())).collect();
    let agg = aggregate_runs(&pairs)?;
    let finals = |f: &dyn Fn(&SeedRun) -> &TrainingLog| {
        runs.iter().map(|r| (r.seed, f(r).final_oa().unwrap_or(f64::NAN))).collect::<Vec<_>>()
    };
    summary.curriculum = Some(MethodSummary {
        final_oa: agg.final_oa_a,
        total_seconds: agg.seconds_a,
        per_seed_final_oa: finals(&|r| &r.curriculum),
    });
    summary.baseline = Some(MethodSummary {
        final_oa: agg.final_oa_b,
        total_seconds: agg.seconds_b,
        per_seed_final_oa: finals(&|r| &r.baseline),
    });
    summary.final_oa_gap = Some(agg.final_oa_delta);
    Ok(summary)
}

/// `method,seed,stage,n_samples,oa,seconds`
pub fn write_oa_curves<W: Write>(runs: &[SeedRun], mut w: W) -> std::io::Result<()> {
    writeln!(w, "method,seed,stage,n_samples,oa,seconds")?;
    for (method, pick) in [("curriculum", 0), ("baseline", 1)] {
        for run in runs {
            let log = if pick == 0 { &run.curriculum } else { &run.baseline };
            for r in &log.records {
                writeln!(w, "{method},{},{},{},{},{}", run.seed, r.stage, r.n_samples, r.oa, r.seconds)?;
            }
        }
    }
    Ok(())
}

/// Outcome of a whole experiment; results are already on disk.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub runs: Vec<SeedRun>,
    pub summary: ExperimentSummary,
}

impl ExperimentOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.summary.failed_seeds.is_empty()
    }
}

/// Runs every seed, continuing past failing ones, and writes
/// `oa_curves.csv`, `summary.json`, `legend.csv` and, if enabled, per-seed
/// classification maps under `output_dir`. Progress goes to `progress`.
pub fn run_experiment(cfg: &ExperimentConfig, mut progress: impl FnMut(&str)) -> Result<ExperimentOutcome, ExperimentError> {
    cfg.validate()?;
    let started_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let scene = cfg.scene.load()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    write_legend_csv(scene.class_names(), fs::File::create(out.join("legend.csv"))?)?;
    if cfg.write_maps {
        let truth: Vec<Option<usize>> = scene.labels().iter().map(|&l| (l != crate::UNLABELED).then_some(l as usize)).collect();
        write_map(out.join("ground_truth.pgm"), &scene, &truth)?;
    }

    let mut runs = Vec::new();
    let mut failed = Vec::new();
    for seed in cfg.seeds() {
        progress(&format!("seed {seed}: training"));
        match run_seed(&scene, cfg, seed).and_then(|run| {
            if cfg.write_maps {
                write_seed_maps(out, &scene, cfg.patch.patch_size, &run)?;
            }
            Ok(run)
        }) {
            Ok(run) => {
                progress(&format!(
                    "seed {seed}: curriculum OA {:.4} ({:.1} s), baseline OA {:.4} ({:.1} s)",
                    run.curriculum.final_oa().unwrap_or(f64::NAN),
                    run.curriculum.total_seconds(),
                    run.baseline.final_oa().unwrap_or(f64::NAN),
                    run.baseline.total_seconds(),
                ));
                runs.push(run);
            }
            Err(e) => {
                progress(&format!("seed {seed}: failed: {e}"));
                failed.push((seed, e.to_string()));
            }
        }
    }

    write_oa_curves(&runs, fs::File::create(out.join("oa_curves.csv"))?)?;
    let summary = summarize(&runs, failed, cfg, started_at)?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(ExperimentOutcome { runs, summary })
}

fn write_map(path: PathBuf, scene: &SceneDataset, map: &[Option<usize>]) -> Result<(), ExperimentError> {
    let mut buf = Vec::new();
    write_pgm(scene.rows(), scene.cols(), scene.num_classes(), map, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn write_seed_maps(out: &Path, scene: &SceneDataset, patch_size: usize, run: &SeedRun) -> Result<(), ExperimentError> {
    let dir = out.join(format!("seed_{}", run.seed));
    fs::create_dir_all(&dir)?;
    write_map(dir.join("map_curriculum.pgm"), scene, &classify_scene(scene, &run.curriculum_model, patch_size)?)?;
    write_map(dir.join("map_baseline.pgm"), scene, &classify_scene(scene, &run.baseline_model, patch_size)?)?;
    Ok(())
}
