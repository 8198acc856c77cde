//! Staged training loops: the curriculum loop that ranks and accumulates
//! batches, and the shuffled fixed-batch baseline it is compared against.
//!
//! Both loops draw the same stage samples for the same seed, so a paired run
//! differs only in how the accumulated training set is ordered and batched.
//! Model weights persist across every stage and batch, and input
//! normalization is frozen from the whole first-stage draw.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{evaluate, ClassifierError, Trainer};
use crate::curriculum::{pacc, slice_batch, CurriculumError, RankedTrainingSet};
use crate::types::{Patch, SceneDataset};

const SAMPLER_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum DclError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("sample pool exhausted: {requested} samples requested, {available} available")]
    Exhausted { requested: usize, available: usize },
    #[error("test set is empty")]
    EmptyTest,
    #[error("training logs cover different stage grids: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
}

/// Indexable pool of labeled patches that may be materialized lazily.
pub trait PatchSource: Sync {
    fn len(&self) -> usize;
    fn patch(&self, index: usize) -> Patch;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PatchSource for [Patch] {
    fn len(&self) -> usize {
        <[Patch]>::len(self)
    }
    fn patch(&self, index: usize) -> Patch {
        self[index].clone()
    }
}

impl PatchSource for Vec<Patch> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn patch(&self, index: usize) -> Patch {
        self[index].clone()
    }
}

/// Patches cut from a scene on demand at the given centers.
#[derive(Debug, Clone)]
pub struct ScenePatches<'a> {
    scene: &'a SceneDataset,
    centers: Vec<(usize, usize, usize)>,
    size: usize,
}

impl<'a> ScenePatches<'a> {
    /// `centers` are `(row, col, label)` triples whose windows fit the scene.
    pub fn new(scene: &'a SceneDataset, centers: Vec<(usize, usize, usize)>, size: usize) -> Self {
        ScenePatches { scene, centers, size }
    }

    pub fn centers(&self) -> &[(usize, usize, usize)] {
        &self.centers
    }
}

impl PatchSource for ScenePatches<'_> {
    fn len(&self) -> usize {
        self.centers.len()
    }
    fn patch(&self, index: usize) -> Patch {
        let (r, c, _) = self.centers[index];
        self.scene.patch_at(r, c, self.size).expect("center fits the scene")
    }
}

/// How "fine-tuning iterations" per accumulated batch are carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IterationMode {
    /// Each iteration is one full-batch gradient step on `B_k`.
    #[default]
    FullBatch,
    /// Each iteration is one pass over `B_k` in ranked order, in mini-batches.
    MiniBatch { batch_size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DclConfig {
    pub samples_per_stage: usize,
    pub stages: usize,
    /// Number of accumulated batches per stage.
    pub splits: usize,
    pub epochs_per_batch: usize,
    pub iteration_mode: IterationMode,
    pub seed: u64,
}

impl Default for DclConfig {
    fn default() -> Self {
        DclConfig {
            samples_per_stage: 100,
            stages: 30,
            splits: 25,
            epochs_per_batch: 5,
            iteration_mode: IterationMode::FullBatch,
            seed: 0,
        }
    }
}

impl DclConfig {
    fn validate(&self) -> Result<(), DclError> {
        let bad = |m: &str| Err(DclError::InvalidConfig(m.into()));
        if self.samples_per_stage == 0 || self.stages == 0 || self.splits == 0 {
            return bad("samples_per_stage, stages and splits must be at least 1");
        }
        if self.epochs_per_batch == 0 {
            return bad("epochs_per_batch must be at least 1");
        }
        if let IterationMode::MiniBatch { batch_size: 0 } = self.iteration_mode {
            return bad("mini-batch size must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub samples_per_stage: usize,
    pub stages: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { samples_per_stage: 100, stages: 30, batch_size: 25, epochs: 10, seed: 0 }
    }
}

impl BaselineConfig {
    fn validate(&self) -> Result<(), DclError> {
        if self.samples_per_stage == 0 || self.stages == 0 {
            return Err(DclError::InvalidConfig("samples_per_stage and stages must be at least 1".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(DclError::InvalidConfig("batch_size and epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    /// Accumulated training-set size after this stage's draw.
    pub n_samples: usize,
    pub oa: f64,
    /// Training wall-clock time, evaluation excluded.
    pub seconds: f64,
    /// Pool indices drawn at this stage.
    pub drawn: Vec<usize>,
    /// Loss history of every training call, in call order.
    pub batch_losses: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<StageRecord>,
}

impl TrainingLog {
    pub fn final_oa(&self) -> Option<f64> {
        self.records.last().map(|r| r.oa)
    }

    pub fn total_seconds(&self) -> f64 {
        self.records.iter().map(|r| r.seconds).sum()
    }

    /// `stage,n_samples,oa,seconds`
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "stage,n_samples,oa,seconds")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{}", r.stage, r.n_samples, r.oa, r.seconds)?;
        }
        Ok(())
    }
}

/// Uniform draws without replacement from `0..pool`, seeded.
struct StageSampler {
    remaining: Vec<usize>,
    rng: ChaCha8Rng,
}

impl StageSampler {
    fn new(pool: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SAMPLER_STREAM);
        StageSampler { remaining: (0..pool).collect(), rng }
    }

    fn draw(&mut self, n: usize) -> Result<Vec<usize>, DclError> {
        if n > self.remaining.len() {
            return Err(DclError::Exhausted { requested: n, available: self.remaining.len() });
        }
        Ok((0..n)
            .map(|_| {
                let j = self.rng.random_range(0..self.remaining.len());
                self.remaining.swap_remove(j)
            })
            .collect())
    }
}

fn check_pool(pool_len: usize, per_stage: usize, stages: usize) -> Result<(), DclError> {
    let requested = per_stage.saturating_mul(stages);
    if requested > pool_len {
        return Err(DclError::Exhausted { requested, available: pool_len });
    }
    Ok(())
}

/// Curriculum training: per stage, draw, re-rank the accumulated set by
/// PaCC and fine-tune on each accumulated prefix `B_1 … B_n`.
pub fn run_dcl<M: Trainer, S: PatchSource + ?Sized>(
    pool: &S,
    test: &[&Patch],
    cfg: &DclConfig,
    mut model: M,
) -> Result<(M, TrainingLog), DclError> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(DclError::EmptyTest);
    }
    check_pool(pool.len(), cfg.samples_per_stage, cfg.stages)?;
    let mut sampler = StageSampler::new(pool.len(), cfg.seed);
    let mut train: Vec<Patch> = Vec::new();
    let mut scores: Vec<f64> = Vec::new();
    let mut log = TrainingLog::default();

    for stage in 0..cfg.stages {
        let drawn = sampler.draw(cfg.samples_per_stage)?;
        let clock = Instant::now();
        for &i in &drawn {
            let p = pool.patch(i);
            scores.push(pacc(&p)?);
            train.push(p);
        }
        let refs: Vec<&Patch> = train.iter().collect();
        if stage == 0 {
            model.prime_normalization(&refs)?;
        }
        let ranked = RankedTrainingSet::from_scores(&refs, &scores)?;
        let mut batch_losses = Vec::new();
        for k in 1..=cfg.splits {
            let batch: Vec<&Patch> = slice_batch(&ranked, k, cfg.splits)?.iter().map(|(p, _)| *p).collect();
            match cfg.iteration_mode {
                IterationMode::FullBatch => {
                    batch_losses.push(model.train_on_batch(&batch, cfg.epochs_per_batch)?);
                }
                IterationMode::MiniBatch { batch_size } => {
                    for _ in 0..cfg.epochs_per_batch {
                        for chunk in batch.chunks(batch_size) {
                            batch_losses.push(model.train_on_batch(chunk, 1)?);
                        }
                    }
                }
            }
        }
        let seconds = clock.elapsed().as_secs_f64();
        let oa = evaluate(&model, test)?;
        log.records.push(StageRecord { stage, n_samples: train.len(), oa, seconds, drawn, batch_losses });
    }
    Ok((model, log))
}

/// No-curriculum baseline: same stage draws, then `epochs` passes over the
/// reshuffled accumulated set in fixed-size batches.
pub fn run_baseline<M: Trainer, S: PatchSource + ?Sized>(
    pool: &S,
    test: &[&Patch],
    cfg: &BaselineConfig,
    mut model: M,
) -> Result<(M, TrainingLog), DclError> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(DclError::EmptyTest);
    }
    check_pool(pool.len(), cfg.samples_per_stage, cfg.stages)?;
    let mut sampler = StageSampler::new(pool.len(), cfg.seed);
    let mut shuffler = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffler.set_stream(SHUFFLE_STREAM);
    let mut train: Vec<Patch> = Vec::new();
    let mut log = TrainingLog::default();

    for stage in 0..cfg.stages {
        let drawn = sampler.draw(cfg.samples_per_stage)?;
        let clock = Instant::now();
        train.extend(drawn.iter().map(|&i| pool.patch(i)));
        if stage == 0 {
            model.prime_normalization(&train.iter().collect::<Vec<_>>())?;
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut batch_losses = Vec::new();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut shuffler);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&Patch> = chunk.iter().map(|&i| &train[i]).collect();
                batch_losses.push(model.train_on_batch(&batch, 1)?);
            }
        }
        let seconds = clock.elapsed().as_secs_f64();
        let oa = evaluate(&model, test)?;
        log.records.push(StageRecord { stage, n_samples: train.len(), oa, seconds, drawn, batch_losses });
    }
    Ok((model, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageComparison {
    pub stage: usize,
    pub n_samples: usize,
    pub oa_a: f64,
    pub oa_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub stages: Vec<StageComparison>,
    /// `final_oa(a) - final_oa(b)`
    pub final_oa_delta: f64,
    pub seconds_a: f64,
    pub seconds_b: f64,
}

pub fn compare_runs(a: &TrainingLog, b: &TrainingLog) -> Result<RunComparison, DclError> {
    if a.records.len() != b.records.len() {
        return Err(DclError::GridMismatch(format!("{} vs {} stages", a.records.len(), b.records.len())));
    }
    if a.records.is_empty() {
        return Err(DclError::GridMismatch("no stages".into()));
    }
    let mut stages = Vec::with_capacity(a.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        if (x.stage, x.n_samples) != (y.stage, y.n_samples) {
            return Err(DclError::GridMismatch(format!(
                "stage {}/{} samples vs stage {}/{} samples",
                x.stage, x.n_samples, y.stage, y.n_samples
            )));
        }
        stages.push(StageComparison { stage: x.stage, n_samples: x.n_samples, oa_a: x.oa, oa_b: y.oa });
    }
    let last = stages.last().expect("non-empty");
    Ok(RunComparison {
        final_oa_delta: last.oa_a - last.oa_b,
        seconds_a: a.total_seconds(),
        seconds_b: b.total_seconds(),
        stages,
    })
}

/// Mean and sample standard deviation (zero for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std })
    }
}

/// Aggregate over repeated seeds of paired `(a, b)` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub final_oa_a: MeanStd,
    pub final_oa_b: MeanStd,
    pub seconds_a: MeanStd,
    pub seconds_b: MeanStd,
    pub final_oa_delta: MeanStd,
    /// Mean OA per stage across seeds, `(n_samples, mean_a, mean_b)`.
    pub mean_curve: Vec<(usize, f64, f64)>,
}

pub fn aggregate_runs(pairs: &[(TrainingLog, TrainingLog)]) -> Result<SeedAggregate, DclError> {
    let comps = pairs.iter().map(|(a, b)| compare_runs(a, b)).collect::<Result<Vec<_>, _>>()?;
    let first = comps.first().ok_or_else(|| DclError::GridMismatch("no runs".into()))?;
    for c in &comps {
        let grid = |x: &RunComparison| x.stages.iter().map(|s| s.n_samples).collect::<Vec<_>>();
        if grid(c) != grid(first) {
            return Err(DclError::GridMismatch("seeds cover different stage grids".into()));
        }
    }
    let col = |f: &dyn Fn(&RunComparison) -> f64| {
        MeanStd::of(&comps.iter().map(f).collect::<Vec<_>>()).expect("non-empty")
    };
    let n = comps.len() as f64;
    let mean_curve = (0..first.stages.len())
        .map(|i| {
            let a = comps.iter().map(|c| c.stages[i].oa_a).sum::<f64>() / n;
            let b = comps.iter().map(|c| c.stages[i].oa_b).sum::<f64>() / n;
            (first.stages[i].n_samples, a, b)
        })
        .collect();
    Ok(SeedAggregate {
        final_oa_a: col(&|c| c.stages.last().unwrap().oa_a),
        final_oa_b: col(&|c| c.stages.last().unwrap().oa_b),
        seconds_a: col(&|c| c.seconds_a),
        seconds_b: col(&|c| c.seconds_b),
        final_oa_delta: col(&|c| c.final_oa_delta),
        mean_curve,
    })
}
