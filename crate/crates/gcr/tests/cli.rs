use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gcr::commands::write_pose_dir;
use gcr::core::fusion::{init_params, FusionConfig};
use gcr::formats::{list_scenes, read_scene, write_fusion_params};

const TRAIN_SCENES: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../configs/train_scenes.json"
);

fn gcr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = gcr(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(args: &[&str]) -> (i32, String) {
    let out = gcr(args);
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_config(dir: &Path) -> String {
    let c = dir.join("synth.json");
    fs::write(&c, r#"{"max_image_size": 96}"#).unwrap();
    c.to_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn synth_writes_requested_scenes_reproducibly() {
    let t = tempfile::tempdir().unwrap();
    let cfg = small_config(t.path());
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&[
        "synth",
        "--count",
        "3",
        "--seed",
        "9",
        "--config",
        &cfg,
        "--out",
        p(&a),
    ]);
    ok(&[
        "synth",
        "--count",
        "3",
        "--seed",
        "9",
        "--config",
        &cfg,
        "--out",
        p(&b),
        "--jobs",
        "2",
    ]);
    assert_eq!(list_scenes(&a).unwrap().len(), 3);
    for name in [
        "scene_0002.json",
        "scene_0001.cam2.dmap",
        "scene_0000.cam1.dfield",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    assert!(a.join("manifest.json").exists());
}

#[test]
fn bad_config_is_a_usage_error_naming_the_field() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("bad.json");
    fs::write(&cfg, r#"{"max_image_size": "big"}"#).unwrap();
    let (c, msg) = code(&[
        "synth",
        "--count",
        "1",
        "--config",
        p(&cfg),
        "--out",
        p(&t.path().join("o")),
    ]);
    assert_eq!(c, 2);
    assert!(msg.contains("max_image_size"), "{msg}");

    fs::write(&cfg, r#"{"min_baseline": 3.0}"#).unwrap();
    let (c, msg) = code(&[
        "synth",
        "--count",
        "1",
        "--config",
        p(&cfg),
        "--out",
        p(&t.path().join("o")),
    ]);
    assert_eq!(c, 2);
    assert!(msg.contains("min_baseline"), "{msg}");

    let (c, _) = code(&["synth", "--count", "1"]);
    assert_eq!(c, 2);
    let (c, _) = code(&["synth", "--count", "0", "--out", p(&t.path().join("o"))]);
    assert_eq!(c, 2);
}

#[test]
fn ransac_recovers_noise_free_scenes_and_rejects_bad_input() {
    let t = tempfile::tempdir().unwrap();
    let cfg = small_config(t.path());
    let s = t.path().join("s");
    ok(&[
        "synth",
        "--count",
        "4",
        "--seed",
        "2",
        "--config",
        &cfg,
        "--out",
        p(&s),
    ]);
    let r = t.path().join("r");
    ok(&["ransac", "--scenes", p(&s), "--out", p(&r)]);
    let rows = csv_rows(&r.join("results.csv"));
    assert_eq!(rows.len(), 5);
    let median = rows.last().unwrap();
    assert_eq!(median[0], "median");
    assert!(median[2].parse::<f64>().unwrap() < 1e-4);
    assert!(median[3].parse::<f64>().unwrap() < 1e-4);
    assert!(r.join("traces/scene_0000.jsonl").exists());

    let empty = t.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(
        code(&["ransac", "--scenes", p(&empty), "--out", p(&r)]).0,
        3
    );
    assert_eq!(
        code(&[
            "ransac",
            "--scenes",
            p(&s),
            "--weights",
            "best",
            "--out",
            p(&r)
        ])
        .0,
        2
    );
    assert_eq!(
        code(&[
            "ransac",
            "--scenes",
            p(&s),
            "--prior",
            "perturbed:x",
            "--out",
            p(&r)
        ])
        .0,
        2
    );

    fs::remove_file(s.join("scene_0001.cam1.dmap")).unwrap();
    let (c, msg) = code(&["ransac", "--scenes", p(&s), "--out", p(&r)]);
    assert_eq!(c, 3);
    assert!(msg.contains("scene_0001.cam1.dmap"), "{msg}");
}

#[test]
fn ransac_accepts_every_weight_and_prior_mode() {
    let t = tempfile::tempdir().unwrap();
    let s = t.path().join("s");
    ok(&[
        "synth",
        "--count",
        "2",
        "--seed",
        "4",
        "--config",
        TRAIN_SCENES,
        "--out",
        p(&s),
    ]);
    let fusion = t.path().join("fusion");
    write_fusion_params(&fusion, &init_params(&FusionConfig::default(), 3).unwrap()).unwrap();
    let fusion_arg = format!("fusion:{}", p(&fusion));
    for weights in ["uniform", "oracle", fusion_arg.as_str()] {
        for prior in ["gt", "perturbed:10"] {
            let out = t.path().join(format!("r-{}-{prior}", weights.len()));
            ok(&[
                "ransac",
                "--scenes",
                p(&s),
                "--weights",
                weights,
                "--prior",
                prior,
                "--out",
                p(&out),
            ]);
            assert_eq!(csv_rows(&out.join("results.csv")).len(), 3);
        }
    }
}

#[test]
fn analyze_reports_error_maps() {
    let t = tempfile::tempdir().unwrap();
    let cfg = small_config(t.path());
    let s = t.path().join("s");
    ok(&[
        "synth",
        "--count",
        "3",
        "--seed",
        "6",
        "--config",
        &cfg,
        "--out",
        p(&s),
    ]);
    let (gt, pert, file) = (
        t.path().join("gt"),
        t.path().join("pert"),
        t.path().join("file"),
    );
    ok(&["analyze", "--scenes", p(&s), "--out", p(&gt)]);
    ok(&[
        "analyze",
        "--scenes",
        p(&s),
        "--pose",
        "perturbed:5",
        "--out",
        p(&pert),
    ]);

    let poses: Vec<(String, _)> = list_scenes(&s)
        .unwrap()
        .iter()
        .map(|sp| {
            (
                sp.file_stem().unwrap().to_string_lossy().into_owned(),
                read_scene(sp).unwrap().gt_pose,
            )
        })
        .collect();
    let pose_dir = t.path().join("poses");
    write_pose_dir(&pose_dir, &poses).unwrap();
    ok(&[
        "analyze",
        "--scenes",
        p(&s),
        "--pose",
        &format!("file:{}", p(&pose_dir)),
        "--out",
        p(&file),
    ]);

    let g = csv_rows(&gt.join("summary.csv"));
    let q = csv_rows(&pert.join("summary.csv"));
    assert_eq!(
        fs::read(gt.join("summary.csv")).unwrap(),
        fs::read(file.join("summary.csv")).unwrap()
    );
    let mut valid_total = 0u64;
    for (a, b) in g.iter().zip(&q) {
        let (ga, pb): (f64, f64) = (a[1].parse().unwrap(), b[1].parse().unwrap());
        assert!(ga < 5e-3, "{a:?}");
        assert!(pb >= ga, "{a:?} {b:?}");
        valid_total += a[2].parse::<u64>().unwrap();
        assert!(gt.join(format!("{}.pgm", a[0])).exists());
        assert!(gt.join(format!("{}.json", a[0])).exists());
    }
    let hist: u64 = csv_rows(&gt.join("histogram.csv"))
        .iter()
        .map(|r| r[2].parse::<u64>().unwrap())
        .sum();
    assert_eq!(hist, valid_total);

    fs::remove_file(s.join("scene_0000.cam2.dfield")).unwrap();
    assert_eq!(code(&["analyze", "--scenes", p(&s), "--out", p(&gt)]).0, 3);
}

#[test]
fn train_reports_auc_at_three_thresholds_per_mode() {
    let t = tempfile::tempdir().unwrap();
    let s = t.path().join("s");
    ok(&[
        "synth",
        "--count",
        "6",
        "--seed",
        "8",
        "--config",
        TRAIN_SCENES,
        "--out",
        p(&s),
    ]);
    let cfg = t.path().join("train.json");
    fs::write(&cfg, r#"{"steps": 5}"#).unwrap();
    for mode in ["pose_only", "pose+desc", "full"] {
        let out = t.path().join(mode);
        ok(&[
            "train",
            "--scenes",
            p(&s),
            "--mode",
            mode,
            "--config",
            p(&cfg),
            "--out",
            p(&out),
        ]);
        let auc = csv_rows(&out.join("auc.csv"));
        let thresholds: Vec<&str> = auc.iter().map(|r| r[0].as_str()).collect();
        assert_eq!(thresholds, ["5", "10", "20"]);
        assert_eq!(csv_rows(&out.join("history.csv")).len(), 5);
        assert_eq!(csv_rows(&out.join("heldout_errors.csv")).len(), 2);
    }
    fs::write(&cfg, r#"{"steps": 0}"#).unwrap();
    assert_eq!(
        code(&[
            "train",
            "--scenes",
            p(&s),
            "--config",
            p(&cfg),
            "--out",
            p(&t.path().join("z"))
        ])
        .0,
        2
    );
    assert_eq!(
        code(&[
            "train",
            "--scenes",
            p(&s),
            "--mode",
            "all",
            "--out",
            p(&t.path().join("z"))
        ])
        .0,
        2
    );
}
