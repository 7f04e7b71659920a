use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use simusr::image::save_image;
use simusr::synth;

fn simusr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simusr"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SIMUSR_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn lr_dir(root: &Path, n: u64) {
    let dir = root.join("lr");
    fs::create_dir_all(&dir).unwrap();
    for i in 0..n {
        let img = synth::scene(40 + 4 * i as usize, 44, 100 + i).quantized();
        save_image(&img, dir.join(format!("img{i}.png"))).unwrap();
    }
}

const TINY: &[&str] = &["--features", "8", "--blocks", "1"];

fn train_tiny(root: &Path) {
    let mut args = vec!["train", "--pairs", "pairs", "--out", "m.ckpt", "--steps", "4", "--batch", "2", "--seed", "3"];
    args.extend_from_slice(TINY);
    let out = simusr(&args, root);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn build_pairs_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    lr_dir(root, 3);
    for out in ["p1", "p2"] {
        let o = simusr(&["build-pairs", "lr", "--out", out, "--scale", "2", "--kernel", "keys:-0.5", "--denoise", "off"], root);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = fs::read_to_string(root.join("p1/manifest")).unwrap();
    let b = fs::read_to_string(root.join("p2/manifest")).unwrap();
    assert_eq!(a, b);
    assert!(a.contains("count=3"));
    assert_eq!(a.lines().filter(|l| l.starts_with("pair ")).count(), 3);
    let exp: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("p1/experiment.json")).unwrap()).unwrap();
    assert_eq!(exp["command"], "build-pairs");
    assert_eq!(exp["inputs"].as_array().unwrap().len(), 3);
    assert_eq!(exp["config"]["scale"], "2");
}

#[test]
fn missing_input_dir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = simusr(&["build-pairs", "no-such-dir", "--out", "p"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no-such-dir"));
}

#[test]
fn bad_arguments_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(code(&simusr(&["frobnicate"], root)), 3);
    assert_eq!(code(&simusr(&["build-pairs", "x", "--out", "y", "--kernel", "lanczos"], root)), 3);
    assert_eq!(code(&simusr(&["--help"], root)), 0);

    lr_dir(root, 1);
    fs::create_dir_all(root.join("empty")).unwrap();
    assert_eq!(code(&simusr(&["build-pairs", "empty", "--out", "p"], root)), 3);
    fs::write(root.join("cfg.txt"), "scale=2\nunknown_key=1\n").unwrap();
    let o = simusr(&["build-pairs", "lr", "--out", "p", "--config", "cfg.txt"], root);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    lr_dir(root, 1);
    fs::write(root.join("cfg.txt"), "# pairs\nscale = 2\nseed = 11\n").unwrap();
    let o = simusr(&["build-pairs", "lr", "--out", "p", "--config", "cfg.txt", "--seed", "5"], root);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = fs::read_to_string(root.join("p/manifest")).unwrap();
    assert!(m.contains("seed=5"));
    assert!(m.contains("scale=2"));

    let o = Command::new(env!("CARGO_BIN_EXE_simusr"))
        .args(["build-pairs", "lr", "--out", "q"])
        .current_dir(root)
        .env("SIMUSR_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(fs::read_to_string(root.join("q/manifest")).unwrap().contains("seed=9"));
}

#[test]
fn train_infer_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    lr_dir(root, 2);
    assert_eq!(code(&simusr(&["build-pairs", "lr", "--out", "pairs"], root)), 0);
    let before = fs::read(root.join("lr/img0.png")).unwrap();
    train_tiny(root);
    assert!(root.join("m.ckpt").is_file());
    let csv = fs::read_to_string(root.join("m.csv")).unwrap();
    assert!(csv.starts_with("step,loss,elapsed_ms\n"));
    assert_eq!(csv.lines().count(), 5);
    assert!(root.join("m.manifest.json").is_file());

    let o = simusr(&["train", "--pairs", "pairs", "--scale", "4", "--steps", "1"], root);
    assert_eq!(code(&o), 3);

    let o = simusr(&["infer", "--ckpt", "m.ckpt", "--input", "lr", "--out", "sr", "--scale", "2"], root);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sr = simusr::image::load_image(root.join("sr/img0.png")).unwrap();
    assert_eq!(sr.dims(), (80, 88));
    assert!(root.join("sr/experiment.json").is_file());

    let o = simusr(&["infer", "--ckpt", "m.ckpt", "--input", "lr/img0.png", "--out", "x.png", "--scale", "4"], root);
    assert_eq!(code(&o), 3);
    assert!(!root.join("x.png").exists());

    let o = simusr(&["eval", "--mode", "y", "--shave", "2", "sr", "sr", "--out", "e.csv"], root);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "image,psnr_db,ssim,mode,shave");
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[3], "mean,inf,1.000000,y,2");
    assert_eq!(fs::read_to_string(root.join("e.csv")).unwrap(), table);

    assert_eq!(fs::read(root.join("lr/img0.png")).unwrap(), before);
}

#[test]
fn corrupt_checkpoint_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    lr_dir(root, 1);
    assert_eq!(code(&simusr(&["build-pairs", "lr", "--out", "pairs"], root)), 0);
    train_tiny(root);
    let bytes = fs::read(root.join("m.ckpt")).unwrap();
    fs::write(root.join("bad.ckpt"), &bytes[..bytes.len() - 7]).unwrap();
    let o = simusr(&["infer", "--ckpt", "bad.ckpt", "--input", "lr", "--out", "sr"], root);
    assert_eq!(code(&o), 5);
    let o = simusr(&["infer", "--ckpt", "none.ckpt", "--input", "lr", "--out", "sr"], root);
    assert_eq!(code(&o), 2);
}

#[test]
fn zssr_and_bench_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    lr_dir(root, 1);
    assert_eq!(code(&simusr(&["build-pairs", "lr", "--out", "pairs"], root)), 0);
    train_tiny(root);

    let mut args = vec!["zssr", "--input", "lr/img0.png", "--out", "z.png", "--log", "z.csv", "--steps", "3", "--lr-patch", "16"];
    args.extend_from_slice(TINY);
    let o = simusr(&args, root);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(simusr::image::load_image(root.join("z.png")).unwrap().dims(), (80, 88));
    assert_eq!(fs::read_to_string(root.join("z.csv")).unwrap().lines().count(), 4);

    let o = simusr(
        &["bench", "--input", "lr/img0.png", "--ckpt", "m.ckpt", "--zssr-steps", "3", "--zssr-lr-patch", "16", "--repeats", "3", "--out", "b.json"],
        root,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let b: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("b.json")).unwrap()).unwrap();
    let jobs = b["jobs"].as_array().unwrap();
    assert_eq!(jobs[0]["job"], "simusr_infer");
    assert_eq!(jobs[1]["job"], "zssr_full");
    assert_eq!(jobs[0]["runs"].as_array().unwrap().len(), 3);
    let ratio = jobs[1]["median_ms"].as_f64().unwrap() / jobs[0]["median_ms"].as_f64().unwrap();
    assert!((b["ratio"].as_f64().unwrap() - ratio).abs() < 1e-9);

    let o = simusr(&["bench", "--input", "lr/img0.png", "--ckpt", "m.ckpt", "--repeats", "2"], root);
    assert_eq!(code(&o), 3);
}
