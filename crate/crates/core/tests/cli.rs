use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use polsar_dcl::io::{extract_centers, load_scene, PatchExtractionSpec};

fn dcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcl")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth_small(dir: &Path, name: &str) -> String {
    let path = dir.join(name);
    let p = path.to_str().unwrap();
    ok(&dcl(&["synth", "--rows", "24", "--cols", "20", "--seed", "3", "--blocks", "2", "-o", p]));
    p.to_string()
}

#[test]
fn synth_is_deterministic_and_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.dcls");
    let b = dir.path().join("b.dcls");
    let out = ok(&dcl(&["synth", "--rows", "64", "--cols", "64", "--seed", "7", "-o", a.to_str().unwrap()]));
    ok(&dcl(&["synth", "--rows", "64", "--cols", "64", "--seed", "7", "-o", b.to_str().unwrap()]));
    let bytes = fs::read(&a).unwrap();
    assert_eq!(&bytes[..4], b"DCLS");
    assert_eq!(bytes, fs::read(&b).unwrap());
    let total: usize = out.lines().map(|l| l.rsplit(": ").next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 64 * 64);
    assert!(out.starts_with("surface: "), "{out}");
}

#[test]
fn synth_rejects_invalid_covariance_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"rows": 16, "cols": 16, "classes": [
            {"name": "fine", "sigma": {"t11": 1, "t22": 1, "t33": 1, "t12": [0, 0], "t13": [0, 0], "t23": [0, 0]}},
            {"name": "broken-class", "sigma": {"t11": 1, "t22": 1, "t33": 1, "t12": [3, 0], "t13": [0, 0], "t23": [0, 0]}}
        ]}"#,
    )
    .unwrap();
    let out = dcl(&["synth", "--spec", spec.to_str().unwrap(), "-o", dir.path().join("x.dcls").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken-class"));
}

#[test]
fn rank_is_sorted_complete_and_matches_score() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_small(dir.path(), "s.dcls");
    let csv = ok(&dcl(&["rank", &scene, "--patch-size", "5"]));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("orig_index,row,col,label,pacc"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    let ds = load_scene(&scene).unwrap();
    assert_eq!(rows.len(), extract_centers(&ds, &PatchExtractionSpec { patch_size: 5 }).unwrap().len());
    let scores: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] <= w[1]));
    for r in [&rows[0], &rows[rows.len() / 2], &rows[rows.len() - 1]] {
        let single = ok(&dcl(&["score", &scene, "--row", &r[1], "--col", &r[2], "--patch-size", "5"]));
        assert_eq!(single.trim(), r[4]);
    }
}

#[test]
fn score_outside_scene_fails() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_small(dir.path(), "s.dcls");
    assert!(!dcl(&["score", &scene, "--row", "0", "--col", "0"]).status.success());
}

#[test]
fn decompose_dumps_every_pixel() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_small(dir.path(), "s.dcls");
    let out = dir.path().join("ha.csv");
    ok(&dcl(&["decompose", &scene, "-o", out.to_str().unwrap()]));
    let text = fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().next(), Some("row,col,h,alpha_bar,valid"));
    assert_eq!(text.lines().count(), 1 + 24 * 20);
    for line in text.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((0.0..=1.0).contains(&f[2]) && (0.0..=90.0).contains(&f[3]));
    }
}

#[test]
fn corrupt_scene_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_small(dir.path(), "s.dcls");
    let bytes = fs::read(&scene).unwrap();
    fs::write(&scene, &bytes[..bytes.len() - 7]).unwrap();
    let out = dcl(&["rank", &scene]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("at byte {}", bytes.len() - 7)) && err.contains("s.dcls"), "{err}");
}

const SMALL_RUN: &str = r#"{
    "scene": {"synthetic": {"rows": 40, "cols": 40, "layout": {"kind": "grid", "blocks": 2}}},
    "patch": {"patch_size": 7},
    "dcl": {"samples_per_stage": 20, "stages": 3, "splits": 4, "epochs_per_batch": 2},
    "baseline": {"samples_per_stage": 20, "stages": 3, "batch_size": 10, "epochs": 2},
    "model": {"features": 4, "hidden": 8},
    "num_seeds": 2,
    "max_test_samples": 60
}"#;

#[test]
fn run_writes_curves_summary_and_maps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let out_dir = dir.path().join("results");
    let out = dcl(&["run", "--config", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap()]);
    ok(&out);
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed 1"));

    let curves = fs::read_to_string(out_dir.join("oa_curves.csv")).unwrap();
    let mut lines = curves.lines();
    assert_eq!(lines.next(), Some("method,seed,stage,n_samples,oa,seconds"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    for method in ["curriculum", "baseline"] {
        for seed in ["0", "1"] {
            let mine: Vec<_> = rows.iter().filter(|r| r[0] == method && r[1] == seed).collect();
            assert_eq!(mine.len(), 3);
            assert_eq!(mine[2][3], "60");
        }
    }

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary["started_at"].as_u64().unwrap() > 0);
    for method in ["curriculum", "baseline"] {
        let finals: Vec<f64> = rows.iter().filter(|r| r[0] == method && r[2] == "2").map(|r| r[4].parse().unwrap()).collect();
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        let reported = summary[method]["final_oa"]["mean"].as_f64().unwrap();
        assert!((reported - mean).abs() < 1e-12, "{method}: {reported} vs {mean}");
        let secs: f64 = rows.iter().filter(|r| r[0] == method).map(|r| r[5].parse::<f64>().unwrap()).sum::<f64>() / 2.0;
        assert!((summary[method]["total_seconds"]["mean"].as_f64().unwrap() - secs).abs() < 1e-9);
    }

    for file in ["seed_0/map_curriculum.pgm", "seed_1/map_baseline.pgm", "ground_truth.pgm"] {
        let pgm = fs::read(out_dir.join(file)).unwrap();
        let header = b"P5\n40 40\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm.len(), header.len() + 1600);
    }
    let legend = fs::read_to_string(out_dir.join("legend.csv")).unwrap();
    assert_eq!(legend.lines().count(), 6);
}

#[test]
fn run_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let strip = |p: &Path| {
        fs::read_to_string(p.join("oa_curves.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        ok(&dcl(&["run", "--config", cfg.to_str().unwrap(), "--seeds", "1", "-o", out_dir.to_str().unwrap()]));
        outs.push(out_dir);
    }
    assert_eq!(strip(&outs[0]), strip(&outs[1]));
    for map in ["seed_0/map_curriculum.pgm", "seed_0/map_baseline.pgm"] {
        assert_eq!(fs::read(outs[0].join(map)).unwrap(), fs::read(outs[1].join(map)).unwrap());
    }
}

#[test]
fn run_rejects_missing_scene_and_bad_thread_count() {
    let out = dcl(&["run", "--scene", "/nonexistent/scene.dcls", "--seeds", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
    let out = Command::new(env!("CARGO_BIN_EXE_dcl"))
        .env("DCL_THREADS", "0")
        .args(["synth", "-o", "/dev/null"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_small(dir.path(), "s.dcls");
    let one = Command::new(env!("CARGO_BIN_EXE_dcl")).env("DCL_THREADS", "1").args(["rank", &scene]).output().unwrap();
    let three = Command::new(env!("CARGO_BIN_EXE_dcl")).env("DCL_THREADS", "3").args(["rank", &scene]).output().unwrap();
    assert_eq!(ok(&one), ok(&three));
}
