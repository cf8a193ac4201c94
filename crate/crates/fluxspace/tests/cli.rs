use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fluxspace"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tiny corpus and model so every test trains in well under a second.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let f = Self { dir };
        ok(&["corpus", "--out", s(&f.path("corpus")), "--count", "12", "--seed", "3"]);
        fs::write(
            f.path("train.json"),
            r#"{"hidden": 16, "heads": 2, "d-pool": 8, "d-ctxt": 8, "steps": 12, "batch-size": 2, "log-interval": 1}"#,
        )
        .unwrap();
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str) -> PathBuf {
        let ckpt = self.path(out);
        ok(&["train", "--config", s(&self.path("train.json")), "--corpus", s(&self.path("corpus")), "--out", s(&ckpt)]);
        ckpt
    }
}

#[test]
fn corpus_manifest_and_images() {
    let f = Fixture::new();
    let manifest = fs::read_to_string(f.path("corpus/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 12);
    assert_eq!(manifest.lines().nth(1).unwrap().split(' ').collect::<Vec<_>>()[2..], ["red", "square"]);
    assert!(f.path("corpus/sample_00011.ppm").is_file());
}

#[test]
fn train_without_corpus_is_a_usage_error() {
    let out = run(&["train", "--steps", "1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus"));
}

#[test]
fn unknown_flags_and_config_keys_are_usage_errors() {
    assert_eq!(code(&run(&["generate", "--lambda"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"stepz": 3}"#).unwrap();
    assert_eq!(code(&run(&["train", "--config", s(&cfg)])), 2);
}

#[test]
fn training_writes_checkpoint_and_reproducible_log() {
    let f = Fixture::new();
    let a = f.train("a.fxsp");
    let b = f.train("b.fxsp");
    let log_a = fs::read_to_string(a.with_extension("log")).unwrap();
    assert_eq!(log_a.lines().count(), 12);
    assert!(log_a.starts_with("1 "));
    assert_eq!(log_a, fs::read_to_string(b.with_extension("log")).unwrap());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let sidecar: Value = serde_json::from_str(&fs::read_to_string(a.with_extension("json")).unwrap()).unwrap();
    assert_eq!(sidecar["hidden"], 16);
}

#[test]
fn divergence_exits_numeric_and_keeps_weights() {
    let f = Fixture::new();
    let ckpt = f.path("bad.fxsp");
    let out = run(&[
        "train", "--config", s(&f.path("train.json")), "--corpus", s(&f.path("corpus")), "--out", s(&ckpt),
        "--learning-rate", "1e30", "--grad-clip", "1e30", "--steps", "50",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let model = fluxspace::checkpoint::load(&ckpt).unwrap();
    assert!(model.params().tensors().iter().all(|t| t.is_finite()));
}

#[test]
fn zero_edit_matches_generation_bytes() {
    let f = Fixture::new();
    let ckpt = f.train("m.fxsp");
    let gen = f.path("gen.ppm");
    let edit = f.path("edit.ppm");
    let common = ["--checkpoint", s(&ckpt), "--prompt", "blue circle", "--steps", "6", "--seed", "4"];
    ok(&[&["generate"], &common[..], &["--out", s(&gen)]].concat());
    ok(&[&["edit"], &common[..], &["--edit-prompt", "red", "--lambda-fine", "0", "--lambda-coarse", "0", "--out", s(&edit)]]
        .concat());
    assert_eq!(fs::read(&gen).unwrap(), fs::read(&edit).unwrap());

    let strong = f.path("strong.ppm");
    ok(&[&["edit"], &common[..], &["--edit-prompt", "red", "--lambda-fine", "8", "--out", s(&strong)]].concat());
    assert_ne!(fs::read(&gen).unwrap(), fs::read(&strong).unwrap());
}

#[test]
fn sidecar_reproduces_the_output() {
    let f = Fixture::new();
    let ckpt = f.train("m.fxsp");
    let first = f.path("first.ppm");
    ok(&["edit", "--checkpoint", s(&ckpt), "--prompt", "green square", "--edit-prompt", "blue", "--steps", "5", "--out", s(&first)]);
    let again = f.path("again.ppm");
    ok(&["edit", "--config", s(&first.with_extension("json")), "--out", s(&again)]);
    assert_eq!(fs::read(&first).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn presets_expand_in_the_sidecar() {
    let f = Fixture::new();
    let ckpt = f.train("m.fxsp");
    for (preset, coarse, fine, start) in [("eyeglasses", 0.8, 5.0, 3), ("smile", 0.5, 8.0, 5)] {
        let out = f.path(&format!("{preset}.ppm"));
        ok(&["edit", "--checkpoint", s(&ckpt), "--prompt", "red circle", "--preset", preset, "--steps", "6", "--out", s(&out)]);
        let side: Value = serde_json::from_str(&fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
        assert_eq!(side["lambda-coarse"], coarse);
        assert_eq!(side["lambda-fine"], fine);
        assert_eq!(side["tau-m"], 0.5);
        assert_eq!(side["start-step"], start);
        assert_eq!(side["seed"], 0);
    }
}

#[test]
fn edit_rejects_bad_inputs() {
    let f = Fixture::new();
    let ckpt = f.train("m.fxsp");
    let out = s(&f.path("x.ppm")).to_string();
    let bad_coarse = run(&["edit", "--checkpoint", s(&ckpt), "--prompt", "red", "--edit-prompt", "blue", "--lambda-coarse", "1.5", "--out", &out]);
    assert_eq!(code(&bad_coarse), 2);
    let missing = run(&["edit", "--checkpoint", s(&f.path("none.fxsp")), "--prompt", "red", "--edit-prompt", "blue", "--out", &out]);
    assert_eq!(code(&missing), 2);

    let corrupt = f.path("corrupt.fxsp");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] = b'Z';
    fs::write(&corrupt, bytes).unwrap();
    let bad = run(&["generate", "--checkpoint", s(&corrupt), "--prompt", "red", "--out", &out]);
    assert_eq!(code(&bad), 4);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("magic"));
}

#[test]
fn sweep_outputs_and_axis_rules() {
    let f = Fixture::new();
    let ckpt = f.train("m.fxsp");
    let common = ["--checkpoint", s(&ckpt), "--prompt", "blue circle", "--edit-prompt", "red", "--steps", "5"];

    let multi = run(&[&["sweep"], &common[..], &["--grid", "lambda-fine=0,1", "--grid", "tau-m=0.5", "--out", s(&f.path("m.ppm"))]].concat());
    assert_eq!(code(&multi), 2);

    let strip = f.path("strip.ppm");
    let out = ok(&[&["sweep"], &common[..], &["--grid", "lambda-fine=0,2,4", "--out", s(&strip)]].concat());
    let table = fs::read_to_string(strip.with_extension("txt")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert_eq!(String::from_utf8_lossy(&out.stdout), table);
    let img = fluxspace::ppm::decode(&fs::read(&strip).unwrap()).unwrap();
    assert_eq!((img.width, img.height), (48, 16));

    let single = f.path("single.ppm");
    ok(&[&["sweep"], &common[..], &["--grid", "lambda-fine=0", "--lambda-coarse", "0", "--out", s(&single)]].concat());
    let gen = f.path("gen.ppm");
    ok(&["generate", "--checkpoint", s(&ckpt), "--prompt", "blue circle", "--steps", "5", "--out", s(&gen)]);
    assert_eq!(fs::read(&single).unwrap(), fs::read(&gen).unwrap());
}

#[test]
fn inspect_mask_files() {
    let f = Fixture::new();
    let ckpt = f.train("m.fxsp");
    let run_masks = |dir: &Path| {
        ok(&[
            "inspect-mask", "--checkpoint", s(&ckpt), "--prompt", "blue circle", "--edit-prompt", "red", "--steps", "6",
            "--start-step", "2", "--out", s(dir),
        ]);
        let mut names: Vec<String> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.ends_with(".ppm"))
            .collect();
        names.sort();
        names
    };
    let a = f.path("masks_a");
    let names = run_masks(&a);
    // Steps 2..6 edited, two blocks each.
    assert_eq!(names.len(), 4 * 2);
    assert!(names.contains(&"mask_s2_b0.ppm".to_string()) && names.contains(&"mask_s5_b1.ppm".to_string()));
    for n in &names {
        let img = fluxspace::ppm::decode(&fs::read(a.join(n)).unwrap()).unwrap();
        assert_eq!((img.width, img.height), (8, 8));
        assert!(img.data.iter().all(|&b| b == 0 || b == 255));
    }
    let b = f.path("masks_b");
    assert_eq!(run_masks(&b), names);
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap());
    }

    let off = run(&["inspect-mask", "--checkpoint", s(&ckpt), "--prompt", "red", "--edit-prompt", "blue", "--no-mask", "--out", s(&f.path("none"))]);
    assert_eq!(code(&off), 2);
}

#[test]
fn invert_writes_noise_that_generate_accepts() {
    let f = Fixture::new();
    let ckpt = f.train("m.fxsp");
    let image = f.path("corpus/sample_00000.ppm");
    let noise = f.path("n.bin");
    ok(&["invert", "--checkpoint", s(&ckpt), "--prompt", "red circle", "--image", s(&image), "--steps", "8", "--out", s(&noise)]);
    let n = fluxspace::noise::load(&noise).unwrap();
    assert_eq!(n.shape(), &[16, 16, 3]);
    let out = f.path("back.ppm");
    ok(&["generate", "--checkpoint", s(&ckpt), "--prompt", "red circle", "--noise", s(&noise), "--steps", "8", "--out", s(&out)]);
    let side: Value = serde_json::from_str(&fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(side["noise"], s(&noise));
}

#[test]
fn help_documents_defaults() {
    let out = ok(&["edit", "--help"]);
    let help = String::from_utf8_lossy(&out.stdout);
    for flag in ["--lambda-fine", "--lambda-coarse", "--tau-m", "--boundary", "--start-step", "--no-mask", "--preset", "--seed"] {
        assert!(help.contains(flag), "{flag}");
    }
    assert!(help.contains("[default: 0.5]"));
}
