use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rpfnet::io::{save_gray, save_rgb};
use rpfnet_core::synthetic::synthetic_dataset;

const SMALL: [&str; 8] = [
    "channels=4",
    "stages=1",
    "batch=2",
    "crop=16",
    "synthetic_size=16",
    "synthetic_pairs=2",
    "synthetic_val_pairs=1",
    "epochs=1",
];

fn rpfnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rpfnet")).args(args).output().expect("binary runs")
}

fn with_sets<'a>(mut args: Vec<&'a str>, sets: &[&'a str]) -> Vec<&'a str> {
    for s in sets {
        args.extend(["--set", s]);
    }
    args
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train_small(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut sets: Vec<&str> = SMALL.to_vec();
    sets.extend(extra);
    rpfnet(&with_sets(vec!["train", "--out", out], &sets))
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

/// Three registered pairs on disk, as 8-bit PNGs.
fn pair_dirs(root: &Path, gray: bool) -> (PathBuf, PathBuf) {
    let (ir, vis) = (root.join("ir"), root.join("vis"));
    fs::create_dir_all(&ir).unwrap();
    fs::create_dir_all(&vis).unwrap();
    for (i, p) in synthetic_dataset(3, 20, 24, 11).iter().enumerate() {
        let name = format!("scene{i}.png");
        save_gray(&ir.join(&name), &p.ir).unwrap();
        if gray {
            save_gray(&vis.join(&name), &p.vis.y).unwrap();
        } else {
            save_rgb(&vis.join(&name), &p.vis_rgb).unwrap();
        }
    }
    (ir, vis)
}

fn checkpoint(dir: &Path) -> PathBuf {
    let out = dir.join("train");
    let o = train_small(&out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("checkpoints").join("epoch_0001.ckpt")
}

#[test]
fn one_epoch_writes_one_checkpoint_log_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = train_small(&out, &["lambda2=4.8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(files(&out.join("checkpoints")), ["epoch_0001.ckpt"]);
    let log = fs::read_to_string(out.join("loss.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("step,l_grad,l_reg,l_c,l_s,l_total"));
    assert_eq!(lines.count(), 1);
    let echo = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echo.contains("lambda2 = 4.8"));
    assert!(out.join("val_metrics.json").exists());
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    assert!(train_small(&a, &[]).status.success());
    let b = dir.path().join("b");
    let echo = a.join("config.toml");
    let o = rpfnet(&["train", "--config", echo.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(a.join("loss.csv")).unwrap(), fs::read(b.join("loss.csv")).unwrap());
}

#[test]
fn missing_dataset_dir_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = rpfnet(&with_sets(
        vec!["train", "--out", out.to_str().unwrap()],
        &["ir_dir=/definitely/missing/ir", "vis_dir=/definitely/missing/vis"],
    ));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/definitely/missing/ir"));
    assert!(!out.exists());
}

#[test]
fn bad_key_exits_nonzero_naming_it() {
    let o = rpfnet(&["train", "--set", "lamda2=4.8", "--out", "/tmp/never-created"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("lamda2"));
    assert!(!Path::new("/tmp/never-created").exists());
}

#[test]
fn gpu_device_is_rejected() {
    let o = rpfnet(&["eval", "--device", "gpu"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("GPU"));
}

#[test]
fn fuse_preserves_names_and_dimensions_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint(dir.path());
    let (ir, vis) = pair_dirs(dir.path(), false);
    let args = |out: &Path| {
        let v = vec![
            "fuse".to_string(),
            "--out".into(),
            out.display().to_string(),
            "--set".into(),
            format!("checkpoint={}", ck.display()),
            "--set".into(),
            format!("ir_dir={}", ir.display()),
            "--set".into(),
            format!("vis_dir={}", vis.display()),
        ];
        v
    };
    let run = |out: &Path| {
        let a = args(out);
        let o = rpfnet(&a.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(o.status.success(), "{}", stderr(&o));
    };
    let (o1, o2) = (dir.path().join("f1"), dir.path().join("f2"));
    run(&o1);
    run(&o2);
    let names = ["scene0.png", "scene1.png", "scene2.png"];
    for n in names {
        let img = image::open(o1.join(n)).unwrap();
        assert_eq!((img.width(), img.height()), (24, 20));
        assert_eq!(img.color(), image::ColorType::Rgb8);
        assert_eq!(fs::read(o1.join(n)).unwrap(), fs::read(o2.join(n)).unwrap());
    }
    let first = fs::read(o1.join("scene0.png")).unwrap();
    run(&o1);
    assert_eq!(fs::read(o1.join("scene0.png")).unwrap(), first);
}

#[test]
fn grayscale_pairs_fuse_to_single_channel() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint(dir.path());
    let (ir, vis) = pair_dirs(dir.path(), true);
    let out = dir.path().join("g");
    let sets = [
        format!("checkpoint={}", ck.display()),
        format!("ir_dir={}", ir.display()),
        format!("vis_dir={}", vis.display()),
        "grayscale=true".to_string(),
    ];
    let o = rpfnet(&with_sets(vec!["fuse", "--out", out.to_str().unwrap()], &sets.iter().map(String::as_str).collect::<Vec<_>>()));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(image::open(out.join("scene1.png")).unwrap().color(), image::ColorType::L8);
}

#[test]
fn unreadable_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.ckpt");
    fs::write(&bogus, b"not a checkpoint").unwrap();
    let set = format!("checkpoint={}", bogus.display());
    let out = dir.path().join("f");
    let o = rpfnet(&with_sets(vec!["fuse", "--out", out.to_str().unwrap()], &[&set, "synthetic_pairs=1"]));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("checkpoint"));
    assert!(!out.exists());
}

#[test]
fn eval_and_psd_write_their_reports() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint(dir.path());
    let set = format!("checkpoint={}", ck.display());
    for cmd in ["eval", "psd"] {
        let out = dir.path().join(cmd);
        let o = rpfnet(&with_sets(vec![cmd, "--out", out.to_str().unwrap()], &[&set, "synthetic_pairs=3", "synthetic_size=16"]));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let csv = fs::read_to_string(dir.path().join("eval/metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("image,EN,SF,SD,CC,SCD,VIF"));
    assert_eq!(csv.lines().count(), 4);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(json["count"], 3);
    let psd = dir.path().join("psd");
    assert!(fs::read_to_string(psd.join("psd.csv")).unwrap().starts_with("image,radius,fused,ir,vis\n"));
    assert_eq!(image::open(psd.join("psd.png")).unwrap().width(), 640);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(psd.join("psd.json")).unwrap()).unwrap();
    assert_eq!(json["images"].as_array().unwrap().len(), 3);
}

#[test]
fn eval_reads_prefused_images() {
    let dir = tempfile::tempdir().unwrap();
    let (ir, vis) = pair_dirs(dir.path(), false);
    let sets = [
        format!("ir_dir={}", ir.display()),
        format!("vis_dir={}", vis.display()),
        format!("fused_dir={}", ir.display()),
    ];
    let out = dir.path().join("e");
    let o = rpfnet(&with_sets(vec!["eval", "--out", out.to_str().unwrap()], &sets.iter().map(String::as_str).collect::<Vec<_>>()));
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["count"], 3);
}

#[test]
fn ablate_with_no_cases_runs_the_baseline_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("abl");
    let mut sets: Vec<&str> = SMALL.to_vec();
    sets.push("ablate_cases=[]");
    let o = rpfnet(&with_sets(vec!["ablate", "--out", out.to_str().unwrap()], &sets));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "case,EN,SF,SD,CC,SCD,VIF,RoR");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("baseline,"));
}

#[test]
fn unknown_ablation_case_lists_valid_ones() {
    let o = rpfnet(&["ablate", "--set", "ablate_cases=[\"no_cpm\",\"no_magic\"]"]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.contains("no_magic"));
    for c in rpfnet::ablation::CASES {
        assert!(e.contains(c), "{c}");
    }
}

#[test]
fn resume_continues_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let two = dir.path().join("two");
    assert!(train_small(&two, &["epochs=2"]).status.success());
    let one = dir.path().join("one");
    assert!(train_small(&one, &[]).status.success());
    let resumed = dir.path().join("resumed");
    let ck = format!("checkpoint={}", one.join("checkpoints/epoch_0001.ckpt").display());
    assert!(train_small(&resumed, &["epochs=2", &ck]).status.success());
    let full = fs::read_to_string(two.join("loss.csv")).unwrap();
    let tail = fs::read_to_string(resumed.join("loss.csv")).unwrap();
    assert_eq!(full.lines().last(), tail.lines().last());
    assert_eq!(
        fs::read(two.join("checkpoints/epoch_0002.ckpt")).unwrap(),
        fs::read(resumed.join("checkpoints/epoch_0002.ckpt")).unwrap()
    );
}
