use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctma_core::data::image_io::read_rgb;
use ctma_core::data::{Dataset, Samples, Split, TileSpec};
use ctma_core::train::{predict_pair, Checkpoint, ModelPredictor};

fn ctma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctma")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ctma(args);
    assert!(out.status.success(), "{:?} failed: {}", args, String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path) -> PathBuf {
    let text = format!(
        r#"[run]
preset = "tiny"
name = "smoke"
out_dir = "{runs}"

[data]
root = "{data}"

[synth]
train_pairs = 8
val_pairs = 2
test_pairs = 2
height = 16
width = 16
min_size = 4
max_size = 6

[schedule]
max_iterations = 50
batch_size = 4
"#,
        runs = dir.join("runs").display(),
        data = dir.join("data").display()
    );
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn gray(path: &Path) -> Vec<u8> {
    image::open(path).unwrap().to_luma8().into_raw()
}

#[test]
fn synth_train_eval_predict_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let c = cfg.to_str().unwrap();
    let run = tmp.path().join("runs/smoke");

    ok(&["synth", "--config", c]);
    assert_eq!(std::fs::read_dir(tmp.path().join("data/train/A")).unwrap().count(), 8);

    ok(&["train", "--config", c, "--quiet"]);
    for f in ["config.snapshot", "metrics.csv", "checkpoints/best.ckpt", "checkpoints/last.ckpt"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let last = Checkpoint::load(&run.join("checkpoints/last.ckpt")).unwrap();
    assert_eq!(last.step().unwrap(), 50);

    let before = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    ok(&["eval", "--config", c]);
    let after = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let new_rows: Vec<&str> = after.lines().skip(before.lines().count()).collect();
    assert_eq!(new_rows.len(), 1);
    assert_eq!(new_rows[0].split(',').nth(1), Some("test"));
    assert!(run.join("eval_test.csv").is_file());

    // Written change maps binarise back to the in-memory prediction.
    let out = ok(&["predict", "--config", c, "--split", "test"]);
    assert_eq!(out.lines().count(), 6);
    let ck = Checkpoint::load(&run.join("checkpoints/best.ckpt")).unwrap();
    let (model, store) = ck.restore::<f32>().unwrap();
    let ds = Dataset::open(&tmp.path().join("data"), Split::Test).unwrap();
    for i in 0..ds.len() {
        let pair = ds.get(i).unwrap();
        let pred = predict_pair(&ModelPredictor { model: &model, store: &store }, &pair, TileSpec::new(16, 16).unwrap(), 0.5).unwrap();
        let disk = gray(&run.join("predictions").join(format!("{}_change.png", pair.id)));
        let back: Vec<f32> = disk.iter().map(|&v| if v as f64 / 255.0 >= 0.5 { 1.0 } else { 0.0 }).collect();
        assert_eq!(back.as_slice(), pred.change.data());
        let mask = gray(&run.join("predictions").join(format!("{}_coarse_mask.png", pair.id)));
        assert!(mask.iter().all(|&v| v == 0 || v == 255));
    }

    let a = tmp.path().join("data/test/A/synth_000010.png");
    let b = tmp.path().join("data/test/B/synth_000010.png");
    assert!(read_rgb(&a).is_ok());
    let single = tmp.path().join("single");
    let out = ok(&["predict", "--config", c, "--a", a.to_str().unwrap(), "--b", b.to_str().unwrap(), "--out", single.to_str().unwrap()]);
    assert_eq!(out.lines().count(), 3);
    let mut names: Vec<String> = std::fs::read_dir(&single).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["synth_000010_change.png", "synth_000010_coarse_mask.png", "synth_000010_probability.png"]);

    let out = ok(&["plot", "--config", c, "--limit", "1"]);
    assert!(out.contains("curves.png"));
    assert!(out.contains("_panels.png"));
    assert!(out.contains("_heatmap_min"));

    // The snapshot alone reproduces the resolved configuration.
    let snap = run.join("config.snapshot");
    let again = ctma_cli::config::parse_config(Some(&snap), &[]).unwrap();
    assert_eq!(again, ctma_cli::config::parse_config(Some(&cfg), &[]).unwrap());
}

#[test]
fn ablate_writes_a_four_row_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let c = cfg.to_str().unwrap();
    ok(&["synth", "--config", c, "--set", "synth.val_pairs=0"]);
    ok(&["ablate", "--config", c, "--set", "schedule.max_iterations=2", "--run-name", "abl"]);
    let table = std::fs::read_to_string(tmp.path().join("runs/abl/ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("TE+SE+RN-MA-"));
    assert!(lines[4].starts_with("TE+SE+RN+MA+"));
}

#[test]
fn exit_codes_classify_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let c = cfg.to_str().unwrap();
    let code = |args: &[&str]| ctma(args).status.code();

    assert_eq!(code(&["train", "--config", c, "--set", "fusion.lambda_mask=1.5"]), Some(2));
    assert_eq!(code(&["train", "--config", c, "--set", "fusion.no_such_key=1"]), Some(2));
    assert_eq!(code(&["train", "--config", "/no/such/file.toml"]), Some(2));
    // No dataset has been generated yet.
    assert_eq!(code(&["train", "--config", c]), Some(3));

    ok(&["synth", "--config", c]);
    let run = tmp.path().join("runs/smoke");
    ok(&["train", "--config", c, "--quiet", "--set", "schedule.max_iterations=1"]);
    let mut ck = Checkpoint::load(&run.join("checkpoints/last.ckpt")).unwrap();
    for (k, r) in ck.records.iter_mut() {
        if k.starts_with("se.head") {
            if let ctma_core::train::checkpoint::Payload::F32(v) = &mut r.payload {
                v.fill(f32::NAN);
            }
        }
    }
    let bad = tmp.path().join("nan.ckpt");
    ck.save(&bad).unwrap();
    let out = ctma(&["train", "--config", c, "--quiet", "--resume", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iteration 1"));
}
