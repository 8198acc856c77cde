//! The `dcl` command line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::curriculum::{argsort_stable, PiccRaster};
use crate::experiment::{run_experiment, ExperimentConfig, SceneSource};
use crate::halpha::{halpha_of_matrix, PowerFloor};
use crate::io::{extract_centers, generate_scene, load_scene, save_scene, Layout, PatchExtractionSpec, SceneSpec};
use crate::types::SceneDataset;

#[derive(Debug, Parser)]
#[command(name = "dcl", version, about = "Curriculum training for PolSAR patch classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-look scene.
    Synth(SynthArgs),
    /// Rank every labeled patch of a scene by PaCC, easiest first.
    Rank(RankArgs),
    /// PaCC of the single patch centered on a pixel.
    Score(ScoreArgs),
    /// Per-pixel entropy and mean alpha as CSV.
    Decompose(DecomposeArgs),
    /// Run paired curriculum / baseline experiments.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON scene spec; flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub looks: Option<usize>,
    /// Use a `blocks x blocks` grid layout.
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    pub scene: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub patch_size: usize,
    /// Output CSV; standard output when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    pub scene: PathBuf,
    #[arg(long)]
    pub row: usize,
    #[arg(long)]
    pub col: usize,
    #[arg(long, default_value_t = 15)]
    pub patch_size: usize,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    pub scene: PathBuf,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene file to use instead of the synthetic scene.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub first_seed: Option<u64>,
    /// Samples drawn per stage, for both methods.
    #[arg(long)]
    pub samples_per_stage: Option<usize>,
    /// Number of stages, for both methods.
    #[arg(long)]
    pub stages: Option<usize>,
    /// Accumulated batches per curriculum stage.
    #[arg(long)]
    pub splits: Option<usize>,
    #[arg(long)]
    pub max_test_samples: Option<usize>,
    /// Skip the classification maps.
    #[arg(long)]
    pub no_maps: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// Parses arguments, sizes the worker pool from `DCL_THREADS` and runs.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DCL_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("DCL_THREADS={v} is not a count"))?;
        if n == 0 {
            bail!("DCL_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Score(a) => cmd_score(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Run(a) => cmd_run(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn open_scene(path: &Path) -> Result<SceneDataset> {
    load_scene(path).with_context(|| format!("loading {}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn cmd_synth(a: SynthArgs) -> Result<ExitCode> {
    let mut spec: SceneSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => SceneSpec::default(),
    };
    if let Some(v) = a.rows {
        spec.rows = v;
    }
    if let Some(v) = a.cols {
        spec.cols = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.looks {
        spec.looks = v;
    }
    if let Some(v) = a.blocks {
        spec.layout = Layout::Grid { blocks: v };
    }
    let ds = generate_scene(&spec)?;
    save_scene(&ds, &a.output).with_context(|| format!("writing {}", a.output.display()))?;
    for (name, n) in ds.class_names().iter().zip(ds.class_counts()) {
        println!("{name}: {n}");
    }
    Ok(ExitCode::SUCCESS)
}

fn scene_raster(ds: &SceneDataset) -> Result<PiccRaster> {
    Ok(PiccRaster::compute(ds, PowerFloor::relative_to(ds.mean_trace()))?)
}

fn cmd_rank(a: RankArgs) -> Result<ExitCode> {
    let ds = open_scene(&a.scene)?;
    let centers = extract_centers(&ds, &PatchExtractionSpec { patch_size: a.patch_size })?;
    let raster = scene_raster(&ds)?;
    let scores: Vec<f64> = centers
        .iter()
        .map(|&(r, c, _)| raster.pacc_at(r, c, a.patch_size).expect("center is interior"))
        .collect();
    let mut w = output(a.output.as_deref())?;
    writeln!(w, "orig_index,row,col,label,pacc")?;
    for i in argsort_stable(&scores) {
        let (r, c, l) = centers[i];
        writeln!(w, "{i},{r},{c},{l},{}", scores[i])?;
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_score(a: ScoreArgs) -> Result<ExitCode> {
    let ds = open_scene(&a.scene)?;
    PatchExtractionSpec { patch_size: a.patch_size }.validate()?;
    let raster = scene_raster(&ds)?;
    match raster.pacc_at(a.row, a.col, a.patch_size) {
        Some(v) => println!("{v}"),
        None => bail!("a {0}x{0} patch centered on ({1}, {2}) does not fit the scene", a.patch_size, a.row, a.col),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_decompose(a: DecomposeArgs) -> Result<ExitCode> {
    let ds = open_scene(&a.scene)?;
    let floor = PowerFloor::relative_to(ds.mean_trace());
    let mut w = output(a.output.as_deref())?;
    writeln!(w, "row,col,h,alpha_bar,valid")?;
    for r in 0..ds.rows() {
        for c in 0..ds.cols() {
            let h = halpha_of_matrix(ds.pixel(r, c), floor)?;
            writeln!(w, "{r},{c},{},{},{}", h.entropy, h.alpha_bar, u8::from(h.valid))?;
        }
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let mut cfg: ExperimentConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = a.scene {
        cfg.scene = SceneSource::Path(p);
    }
    if let Some(v) = a.seeds {
        cfg.num_seeds = v;
    }
    if let Some(v) = a.first_seed {
        cfg.first_seed = v;
    }
    if let Some(v) = a.samples_per_stage {
        cfg.dcl.samples_per_stage = v;
        cfg.baseline.samples_per_stage = v;
    }
    if let Some(v) = a.stages {
        cfg.dcl.stages = v;
        cfg.baseline.stages = v;
    }
    if let Some(v) = a.splits {
        cfg.dcl.splits = v;
    }
    if let Some(v) = a.max_test_samples {
        cfg.max_test_samples = Some(v);
    }
    if a.no_maps {
        cfg.write_maps = false;
    }
    if let Some(p) = a.output {
        cfg.output_dir = p;
    }
    let outcome = run_experiment(&cfg, |msg| eprintln!("{msg}"))?;
    eprintln!("results written to {}", cfg.output_dir.display());
    Ok(if outcome.all_succeeded() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
