use num_complex::Complex64;
use proptest::prelude::*;

use polsar_dcl::classifier::{evaluate, Model, Trainer};
use polsar_dcl::curriculum::{pacc, picc, rank_patches};
use polsar_dcl::experiment::{classify_scene, run_seed, ExperimentConfig, ModelSettings, SceneSource};
use polsar_dcl::halpha::{halpha_of_matrix, PowerFloor};
use polsar_dcl::dcl::{BaselineConfig, DclConfig};
use polsar_dcl::io::{extract_patches, read_scene, write_scene, Layout, PatchExtractionSpec, SceneSpec};
use polsar_dcl::{CoherencyMatrix, Patch};

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        scene: SceneSource::Synthetic(SceneSpec { rows: 48, cols: 48, layout: Layout::Grid { blocks: 2 }, seed: 11, ..SceneSpec::default() }),
        patch: PatchExtractionSpec { patch_size: 9 },
        dcl: DclConfig { samples_per_stage: 40, stages: 3, splits: 5, epochs_per_batch: 3, ..DclConfig::default() },
        baseline: BaselineConfig { samples_per_stage: 40, stages: 3, batch_size: 10, epochs: 3, seed: 0 },
        model: ModelSettings { features: 6, hidden: 16, learning_rate: 0.01 },
        num_seeds: 1,
        max_test_samples: Some(200),
        write_maps: false,
        ..ExperimentConfig::default()
    }
}

#[test]
fn default_experiment_uses_3000_training_samples() {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.dcl.samples_per_stage * cfg.dcl.stages, 3000);
    assert_eq!(cfg.baseline.samples_per_stage * cfg.baseline.stages, 3000);
    assert_eq!(cfg.num_seeds, 10);
}

#[test]
fn seed_runs_are_reproducible() {
    let cfg = small_config();
    let scene = cfg.scene.load().unwrap();
    let a = run_seed(&scene, &cfg, 2).unwrap();
    let b = run_seed(&scene, &cfg, 2).unwrap();
    for (x, y) in [(&a.curriculum, &b.curriculum), (&a.baseline, &b.baseline)] {
        for (r, s) in x.records.iter().zip(&y.records) {
            assert_eq!((r.stage, r.n_samples, r.oa, &r.drawn, &r.batch_losses), (s.stage, s.n_samples, s.oa, &s.drawn, &s.batch_losses));
        }
    }
    assert_eq!(a.curriculum_model, b.curriculum_model);
    let other = run_seed(&scene, &cfg, 3).unwrap();
    assert_ne!(other.curriculum.records[0].drawn, a.curriculum.records[0].drawn);
}

#[test]
fn trained_model_beats_chance_and_survives_checkpoint() {
    let cfg = small_config();
    let scene = cfg.scene.load().unwrap();
    let run = run_seed(&scene, &cfg, 0).unwrap();
    assert!(run.curriculum.final_oa().unwrap() > 0.4, "{:?}", run.curriculum.final_oa());
    let mut bytes = Vec::new();
    run.curriculum_model.save_checkpoint(&mut bytes).unwrap();
    let restored = Model::load_checkpoint(&bytes[..]).unwrap();
    let patches = extract_patches(&scene, &cfg.patch).unwrap();
    let refs: Vec<&Patch> = patches.iter().take(300).collect();
    assert_eq!(restored.predict(&refs).unwrap(), run.curriculum_model.predict(&refs).unwrap());
    assert_eq!(evaluate(&restored, &refs).unwrap(), evaluate(&run.curriculum_model, &refs).unwrap());

    let map = classify_scene(&scene, &restored, 9).unwrap();
    assert_eq!(map.len(), 48 * 48);
    assert!(map[0].is_none() && map[24 * 48 + 24].is_some());
}

#[test]
fn scene_bytes_round_trip_preserves_ranking() {
    let spec = SceneSpec { rows: 24, cols: 24, seed: 5, layout: Layout::Grid { blocks: 3 }, ..SceneSpec::default() };
    let ds = polsar_dcl::io::generate_scene(&spec).unwrap();
    let mut bytes = Vec::new();
    write_scene(&ds, &mut bytes).unwrap();
    let back = read_scene(&bytes).unwrap();
    let ps = PatchExtractionSpec { patch_size: 5 };
    let a = extract_patches(&ds, &ps).unwrap();
    let b = extract_patches(&back, &ps).unwrap();
    assert_eq!(rank_patches(&a).unwrap().order(), rank_patches(&b).unwrap().order());
}

fn psd_strategy() -> impl Strategy<Value = CoherencyMatrix> {
    let vec3 = prop::array::uniform6(-10.0f64..10.0);
    (prop::collection::vec(vec3, 1..5), -8i32..8).prop_map(|(vs, e)| {
        let s = 10f64.powi(e);
        let ks: Vec<[Complex64; 3]> = vs
            .iter()
            .map(|v| [0, 1, 2].map(|i| Complex64::new(v[2 * i], v[2 * i + 1]) * s))
            .collect();
        CoherencyMatrix::from_outer_products(&ks).unwrap()
    })
}

proptest! {
    #[test]
    fn halpha_stays_in_range(t in psd_strategy()) {
        let h = halpha_of_matrix(&t, PowerFloor::ABSOLUTE).unwrap();
        prop_assume!(h.valid);
        prop_assert!((0.0..=1.0).contains(&h.entropy));
        prop_assert!((0.0..=90.0).contains(&h.alpha_bar));
        prop_assert!((h.p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let v = picc(&h);
        prop_assert!((0.0..=std::f64::consts::SQRT_2).contains(&v));
    }

    #[test]
    fn pacc_is_scale_free(ts in prop::collection::vec(psd_strategy(), 9), c in 1e-3f64..1e3) {
        let p = Patch::new(3, 3, ts.iter().map(|t| t.to_vector()).collect(), 0, (0, 0)).unwrap();
        let a = pacc(&p).unwrap();
        let b = pacc(&p.scaled(c)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
    }
}
