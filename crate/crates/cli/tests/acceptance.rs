//! End-to-end acceptance checks. Runs as a plain binary so the per-check
//! verdict lines always print; exits non-zero when any check fails.
//!
//! `cargo test -p simusr-cli --test acceptance [-- 1 4 9]` (numbers pick
//! criteria; default all)

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use simusr::denoise::DenoiseSetting;
use simusr::image::{load_image, save_image, ColorMode};
use simusr::metrics::{psnr, ssim, Psnr};
use simusr::nn::{init_params, forward_tape, Checkpoint, ModelConfig, Tape, Tensor, Var};
use simusr::pairs::{load_pairs, verify_rederivable};
use simusr::resample::{bicubic_upsample, downsample, kernel_weight, resample, Direction, Kernel, ScaleFactor};
use simusr::{synth, Image};

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn run(root: &Path, args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_simusr"))
        .args(args)
        .current_dir(root)
        .env_remove("SIMUSR_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`simusr {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn db(p: Psnr) -> f64 {
    p.db().unwrap_or(f64::INFINITY)
}

// ---------------------------------------------------------------- gradients

fn pseudo(shape: [usize; 4], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|i| {
            let u = ((i as u64 * 2654435761 + seed * 40503) % 10007) as f64 / 10007.0;
            lo + (hi - lo) * u
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Values in `[0.1, 0.5]` with pseudo-random signs: never near zero.
fn away_from_zero(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut t = pseudo(shape, seed, 0.1, 0.5);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        if (i as u64 * 7 + seed) % 3 == 0 {
            *v = -*v;
        }
    }
    t
}

/// L1 against targets at +-10 with mixed signs, so upstream gradients vary
/// per element and finite differences never cross a kink.
fn head(tape: &mut Tape<f64>, y: Var) -> Var {
    let shape = tape.value(y).shape();
    let n = tape.value(y).numel();
    let far = (0..n).map(|i| if (i * 5 + 1) % 3 == 0 { 10.0 } else { -10.0 }).collect();
    let t = tape.leaf(Tensor::from_vec(shape, far).unwrap(), false);
    tape.l1_loss(y, t).unwrap()
}

/// Largest relative error between the tape gradient and central
/// differences over every entry of every leaf.
fn gradcheck(build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var, leaves: &[Tensor<f64>]) -> f64 {
    let eval = |vals: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = build(&mut tape, &vars);
        (tape, vars, loss)
    };
    let (mut tape, vars, loss) = eval(leaves);
    tape.backward(loss).unwrap();
    let eps = 1e-4;
    let mut worst = 0f64;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = tape.grad(vars[li]).unwrap().to_vec();
        for j in 0..leaf.numel() {
            let mut plus = leaves.to_vec();
            plus[li].data_mut()[j] += eps;
            let mut minus = leaves.to_vec();
            minus[li].data_mut()[j] -= eps;
            let (tp, _, lp) = eval(&plus);
            let (tm, _, lm) = eval(&minus);
            let numeric = (tp.value(lp).data()[0] - tm.value(lm).data()[0]) / (2.0 * eps);
            let diff = (numeric - analytic[j]).abs();
            worst = worst.max(diff / (numeric.abs() + analytic[j].abs()).max(1e-8));
        }
    }
    worst
}

fn gradients() -> Check {
    let start = Instant::now();
    let mut report = Vec::new();
    let mut check = |name: &str, err: f64, tol: f64| -> std::result::Result<(), String> {
        report.push(format!("{name} {err:.1e}"));
        ensure(err < tol, format!("{name}: relative error {err:.3e} >= {tol:e}"))
    };

    let conv = |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.conv2d(v[0], v[1], v[2]).unwrap();
        head(t, y)
    };
    check(
        "conv2d",
        gradcheck(&conv, &[pseudo([2, 3, 6, 5], 1, -1.0, 1.0), pseudo([4, 3, 3, 3], 2, -0.5, 0.5), pseudo([1, 4, 1, 1], 3, -0.2, 0.2)]),
        1e-3,
    )?;

    let relu = |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.relu(v[0]);
        head(t, y)
    };
    check("relu", gradcheck(&relu, &[away_from_zero([2, 3, 5, 4], 4)]), 1e-3)?;

    let shuffle = |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.pixel_shuffle(v[0], 2).unwrap();
        head(t, y)
    };
    check("pixel_shuffle", gradcheck(&shuffle, &[pseudo([2, 8, 3, 4], 5, -1.0, 1.0)]), 1e-3)?;

    // Targets offset by at least 0.1 from the predictions: no ties.
    let pred = pseudo([2, 3, 4, 5], 6, -1.0, 1.0);
    let mut target = pred.clone();
    for (i, v) in target.data_mut().iter_mut().enumerate() {
        *v += if i % 2 == 0 { 0.1 + 0.01 * (i % 7) as f64 } else { -0.3 };
    }
    let l1 = |t: &mut Tape<f64>, v: &[Var]| {
        let target = t.leaf(target.clone(), false);
        t.l1_loss(v[0], target).unwrap()
    };
    check("l1_loss", gradcheck(&l1, &[pred]), 1e-3)?;

    let cfg = ModelConfig {
        feature_channels: 4,
        residual_blocks: 1,
        ..ModelConfig::default()
    };
    let mut params: Vec<Tensor<f64>> = init_params(&cfg, 9).unwrap().iter().map(|p| p.cast()).collect();
    for (k, p) in params.iter_mut().enumerate() {
        let jitter = pseudo(p.shape(), 20 + k as u64, -0.05, 0.05);
        for (v, j) in p.data_mut().iter_mut().zip(jitter.data()) {
            *v += j;
        }
    }
    let mut leaves = vec![pseudo([1, 3, 8, 8], 10, 0.0, 1.0)];
    leaves.extend(params);
    let model = |t: &mut Tape<f64>, v: &[Var]| {
        let y = forward_tape(&cfg, t, &v[1..], v[0]).unwrap();
        head(t, y)
    };
    check("model", gradcheck(&model, &leaves), 1e-2)?;

    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!("{} in {:.1}s", report.join(", "), elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- resampler

fn resampler_identities() -> Check {
    let mut worst_dc = 0f32;
    for k in [Kernel::BICUBIC, Kernel::Box, Kernel::Gaussian { sigma: 0.8 }] {
        for s in [2.0, 3.0, 4.0] {
            for dir in [Direction::Down, Direction::Up] {
                let img = Image::filled(3, 24, 20, 0.37).unwrap();
                let out = resample(&img, ScaleFactor::new(s).unwrap(), &k, dir, true).map_err(|e| e.to_string())?;
                for &v in out.data() {
                    worst_dc = worst_dc.max((v - 0.37).abs());
                }
            }
        }
    }
    ensure(worst_dc < 1e-6, format!("DC drift {worst_dc:e}"))?;

    let mut worst_pu = 0f64;
    for i in 0..=1000 {
        let x = i as f64 / 1000.0;
        let sum: f64 = (-3..=3).map(|n| kernel_weight(&Kernel::BICUBIC, x - n as f64)).sum();
        worst_pu = worst_pu.max((sum - 1.0).abs());
    }
    ensure(worst_pu < 1e-9, format!("partition of unity off by {worst_pu:e}"))?;

    let ramp = Image::from_fn(1, 4, 4, |_, y, x| (y * 4 + x) as f32 / 16.0).unwrap();
    let out = downsample(&ramp, ScaleFactor::X2, &Kernel::Box).map_err(|e| e.to_string())?;
    ensure(out.dims() == (2, 2), "box output is not 2x2")?;
    for by in 0..2 {
        for bx in 0..2 {
            let mut sum = 0f64;
            for dy in 0..2 {
                for dx in 0..2 {
                    sum += ramp.get(0, 2 * by + dy, 2 * bx + dx) as f64;
                }
            }
            let want = (sum / 4.0) as f32;
            ensure(out.get(0, by, bx) == want, format!("box block ({by},{bx}): {} vs {want}", out.get(0, by, bx)))?;
        }
    }
    Ok(format!("DC {worst_dc:.1e}, unity {worst_pu:.1e}, box exact"))
}

// ---------------------------------------------------------------- metrics

fn metric_oracles() -> Check {
    let flat = |c: usize, v: f32| Image::filled(c, 16, 16, v).unwrap();
    let e = |r: simusr::Result<Psnr>| r.map_err(|e| e.to_string());

    // Both operands exact in f32 and differing by 0.1 to double precision.
    let hi = 0.1f32;
    let lo = (hi as f64 - 0.1) as f32;
    let p01 = db(e(psnr(&flat(3, lo), &flat(3, hi), ColorMode::Rgb, 0))?);
    ensure((p01 - 20.0).abs() < 1e-9, format!("0.1 difference gave {p01}"))?;
    let p05 = db(e(psnr(&flat(3, 0.25), &flat(3, 0.75), ColorMode::Rgb, 0))?);
    let want = 20.0 * 2f64.log10();
    ensure((p05 - want).abs() < 1e-9, format!("0.5 difference gave {p05}"))?;
    ensure((want - 6.0206).abs() < 1e-4, "6.0206 reference")?;

    let c1 = 0.01f64.powi(2);
    let s = ssim(&flat(1, 0.0), &flat(1, 1.0), ColorMode::Rgb, 0).map_err(|e| e.to_string())?;
    ensure((s - c1 / (1.0 + c1)).abs() < 1e-6, format!("SSIM(0, 1) = {s}"))?;
    let (a, b) = (0.25f64, 0.75f64);
    let s = ssim(&flat(3, a as f32), &flat(3, b as f32), ColorMode::Rgb, 0).map_err(|e| e.to_string())?;
    let want = (2.0 * a * b + c1) / (a * a + b * b + c1);
    ensure((s - want).abs() < 1e-6, format!("SSIM(0.25, 0.75) = {s} vs {want}"))?;

    let img = synth::scene(32, 32, 4);
    ensure(e(psnr(&img, &img, ColorMode::Y, 2))?.is_identical(), "identical PSNR is not the sentinel")?;
    ensure(e(psnr(&img, &img, ColorMode::Y, 2))?.to_string() == "inf", "sentinel does not print as inf")?;
    let s = ssim(&img, &img, ColorMode::Y, 2).map_err(|e| e.to_string())?;
    ensure(s == 1.0, format!("identical SSIM {s}"))?;
    Ok(format!("PSNR {p01:.12} / {p05:.10} dB, SSIM closed forms, sentinels"))
}

// ---------------------------------------------------------------- quality

const TRAIN_IMAGES: u64 = 20;
const HELD_OUT: u64 = 5;
const STEPS: usize = 2000;
const SEEDS: [u64; 3] = [7, 8, 9];

struct Data {
    root: PathBuf,
    /// True HR of the held-out images; never written where training sees it.
    hr: Vec<Image>,
    lr: Vec<Image>,
}

fn make_data(root: &Path) -> Data {
    let s = ScaleFactor::X2;
    let train_dir = root.join("train_lr");
    let test_dir = root.join("test_lr");
    fs::create_dir_all(&train_dir).unwrap();
    fs::create_dir_all(&test_dir).unwrap();
    let lr_of = |hr: &Image| downsample(hr, s, &Kernel::BICUBIC).unwrap().quantized();
    for i in 0..TRAIN_IMAGES {
        let hr = synth::scene(256, 256, 1000 + i).quantized();
        save_image(&lr_of(&hr), train_dir.join(format!("img{i:02}.png"))).unwrap();
    }
    let mut hr = Vec::new();
    let mut lr = Vec::new();
    for i in 0..HELD_OUT {
        let h = synth::scene(256, 256, 5000 + i).quantized();
        let l = lr_of(&h);
        save_image(&l, test_dir.join(format!("img{i}.png"))).unwrap();
        hr.push(h);
        lr.push(l);
    }
    run(root, &["build-pairs", "train_lr", "--out", "pairs", "--scale", "2", "--seed", "1"]).expect("pair set builds");
    Data {
        root: root.to_owned(),
        hr,
        lr,
    }
}

fn mean_y_psnr(outputs: &[Image], hr: &[Image]) -> std::result::Result<f64, String> {
    let mut sum = 0.0;
    for (o, h) in outputs.iter().zip(hr) {
        sum += db(psnr(o, h, ColorMode::Y, 2).map_err(|e| e.to_string())?);
    }
    Ok(sum / outputs.len() as f64)
}

/// Trains with `seed` through the CLI and returns the mean held-out
/// Y-PSNR of its inference outputs.
fn simusr_psnr(d: &Data, seed: u64) -> std::result::Result<f64, String> {
    let ckpt = format!("simusr_{seed}.ckpt");
    let out = format!("sr_{seed}");
    run(&d.root, &["train", "--pairs", "pairs", "--out", &ckpt, "--steps", &STEPS.to_string(), "--seed", &seed.to_string()])?;
    run(&d.root, &["infer", "--ckpt", &ckpt, "--input", "test_lr", "--out", &out, "--scale", "2"])?;
    let sr: Vec<Image> = (0..HELD_OUT)
        .map(|i| load_image(d.root.join(&out).join(format!("img{i}.png"))).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    mean_y_psnr(&sr, &d.hr)
}

fn zssr_psnr(d: &Data, seed: u64) -> std::result::Result<f64, String> {
    let mut sr = Vec::new();
    for i in 0..HELD_OUT {
        let out = format!("zssr_{seed}_{i}.png");
        run(
            &d.root,
            &["zssr", "--input", &format!("test_lr/img{i}.png"), "--out", &out, "--scale", "2", "--steps", &STEPS.to_string(), "--seed", &seed.to_string()],
        )?;
        sr.push(load_image(d.root.join(&out)).map_err(|e| e.to_string())?);
    }
    mean_y_psnr(&sr, &d.hr)
}

/// The verdict plus the SimUSR score, when training got that far.
fn beats_bicubic(d: &Data) -> (Check, Option<f64>) {
    let mut score = None;
    let verdict = beats_bicubic_inner(d, &mut score);
    (verdict, score)
}

fn beats_bicubic_inner(d: &Data, score: &mut Option<f64>) -> Check {
    let start = Instant::now();
    let ours = simusr_psnr(d, SEEDS[0])?;
    *score = Some(ours);
    let bicubic: Vec<Image> = d
        .lr
        .iter()
        .map(|l| bicubic_upsample(l, ScaleFactor::X2).unwrap().clamped().quantized())
        .collect();
    let base = mean_y_psnr(&bicubic, &d.hr)?;
    let elapsed = start.elapsed();
    let gain = ours - base;
    ensure(gain >= 0.3, format!("SimUSR {ours:.3} dB vs bicubic {base:.3} dB: gain {gain:.3} < 0.3"))?;
    ensure(elapsed < Duration::from_secs(15 * 60), format!("took {elapsed:?}"))?;
    Ok(format!("SimUSR {ours:.3} dB, bicubic {base:.3} dB, gain {gain:+.3} dB in {:.0}s", elapsed.as_secs_f64()))
}

fn offline_vs_online(d: &Data, first: f64) -> Check {
    let mut lines = Vec::new();
    let mut worst = f64::INFINITY;
    for (k, &seed) in SEEDS.iter().enumerate() {
        let ours = if k == 0 { first } else { simusr_psnr(d, seed)? };
        let zssr = zssr_psnr(d, seed)?;
        worst = worst.min(ours - zssr);
        lines.push(format!("seed {seed}: {ours:.3} vs {zssr:.3}"));
    }
    ensure(worst >= -0.05, format!("SimUSR behind ZSSR by {:.3} dB ({})", -worst, lines.join("; ")))?;
    Ok(format!("{} (worst margin {worst:+.3} dB)", lines.join("; ")))
}

// ---------------------------------------------------------------- latency

fn latency_ratio(root: &Path) -> Check {
    let cfg = ModelConfig::with_scale(4);
    let ckpt = Checkpoint {
        config: cfg,
        step: 0,
        params: init_params(&cfg, 0).unwrap(),
        adam: None,
    };
    ckpt.save(&root.join("x4.ckpt")).map_err(|e| e.to_string())?;
    save_image(&synth::scene(320, 480, 77).quantized(), root.join("bench.png")).unwrap();
    run(
        root,
        &["bench", "--input", "bench.png", "--scale", "4", "--ckpt", "x4.ckpt", "--zssr-steps", "1000", "--out", "bench.json"],
    )?;
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("bench.json")).unwrap()).map_err(|e| e.to_string())?;
    let jobs = json["jobs"].as_array().ok_or("no jobs array")?;
    let median = |name: &str| {
        jobs.iter()
            .find(|j| j["job"] == name)
            .and_then(|j| j["median_ms"].as_f64())
            .ok_or(format!("missing {name}"))
    };
    let (inf, zssr) = (median("simusr_infer")?, median("zssr_full")?);
    let ratio = json["ratio"].as_f64().ok_or("no ratio")?;
    ensure((ratio - zssr / inf).abs() < 1e-9 * ratio, "ratio field disagrees with medians")?;
    ensure(ratio > 10.0, format!("ratio {ratio:.1} <= 10"))?;
    Ok(format!("zssr_full {zssr:.0} ms / simusr_infer {inf:.0} ms = {ratio:.1}x"))
}

// ---------------------------------------------------------------- denoise

fn denoise_gain(root: &Path) -> Check {
    let dir = root.join("noisy");
    fs::create_dir_all(&dir).unwrap();
    let sigma = 25.0 / 255.0;
    let mut hr = Vec::new();
    for i in 0..3u64 {
        let h = synth::scene(192, 192, 9000 + i).quantized();
        let lr = downsample(&h, ScaleFactor::X2, &Kernel::BICUBIC).unwrap();
        let noisy = synth::add_gaussian_noise(&lr, sigma, 300 + i, true).quantized();
        save_image(&noisy, dir.join(format!("n{i}.png"))).unwrap();
        hr.push(h);
    }
    let mut means = Vec::new();
    for setting in [DenoiseSetting::Auto, DenoiseSetting::Off] {
        let mut sum = 0.0;
        for i in 0..3 {
            let out = format!("dn_{setting}_{i}.png");
            run(
                root,
                &["zssr", "--input", &format!("noisy/n{i}.png"), "--out", &out, "--scale", "2", "--denoise", &setting.to_string(), "--seed", "3"],
            )?;
            let sr = load_image(root.join(&out)).map_err(|e| e.to_string())?;
            sum += db(psnr(&sr, &hr[i], ColorMode::Rgb, 2).map_err(|e| e.to_string())?);
        }
        means.push(sum / 3.0);
    }
    let gain = means[0] - means[1];
    ensure(gain >= 0.3, format!("auto {:.3} dB vs off {:.3} dB: gain {gain:.3} < 0.3", means[0], means[1]))?;
    Ok(format!("auto {:.3} dB, off {:.3} dB, gain {gain:+.3} dB", means[0], means[1]))
}

// ---------------------------------------------------------------- determinism

fn determinism(root: &Path) -> Check {
    let tiny = ["--features", "8", "--blocks", "1"];
    for tag in ["a", "b"] {
        let mut args = vec!["train", "--pairs", "pairs", "--steps", "40"];
        let out = format!("det_{tag}.ckpt");
        args.extend(["--out", out.as_str(), "--seed", "5"]);
        args.extend(tiny);
        run(root, &args)?;
        let mut args = vec!["zssr", "--input", "test_lr/img0.png", "--steps", "40", "--seed", "5"];
        let out = format!("det_{tag}.png");
        args.extend(["--out", out.as_str()]);
        args.extend(tiny);
        run(root, &args)?;
    }
    let same = |a: &str, b: &str| fs::read(root.join(a)).unwrap() == fs::read(root.join(b)).unwrap();
    ensure(same("det_a.ckpt", "det_b.ckpt"), "checkpoints differ")?;
    ensure(same("det_a.png", "det_b.png"), "ZSSR outputs differ")?;
    Ok("train checkpoints and ZSSR outputs bit-identical".into())
}

// ---------------------------------------------------------------- pairs

fn rederivable_pairs(root: &Path) -> Check {
    let set = load_pairs(&root.join("pairs")).map_err(|e| e.to_string())?;
    let bad = verify_rederivable(&set).map_err(|e| e.to_string())?;
    ensure(bad.is_empty(), format!("mismatched sons: {bad:?}"))?;
    Ok(format!("{} sons re-derived bit-exactly", set.pairs.len()))
}

fn main() {
    let picked: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: u32| picked.is_empty() || picked.contains(&n);
    let dir = tempfile::tempdir().expect("temp dir");
    let root = dir.path();
    let mut results: Vec<(u32, Check)> = Vec::new();
    let mut report = |n: u32, r: Check| {
        match &r {
            Ok(msg) => println!("criterion {n}: PASS  {msg}"),
            Err(msg) => println!("criterion {n}: FAIL  {msg}"),
        }
        results.push((n, r));
    };

    if want(1) {
        report(1, gradients());
    }
    if want(2) {
        report(2, resampler_identities());
    }
    if want(3) {
        report(3, metric_oracles());
    }
    let data = [4, 5, 8, 9].into_iter().any(want).then(|| make_data(root));
    if let Some(data) = &data {
        let mut first = None;
        if want(4) {
            let (c4, score) = beats_bicubic(data);
            report(4, c4);
            first = score;
        }
        if want(5) {
            let first = match first {
                Some(v) => Ok(v),
                None => simusr_psnr(data, SEEDS[0]),
            };
            report(5, first.and_then(|ours| offline_vs_online(data, ours)));
        }
    }
    if want(6) {
        report(6, latency_ratio(root));
    }
    if want(7) {
        report(7, denoise_gain(root));
    }
    if want(8) {
        report(8, determinism(root));
    }
    if want(9) {
        report(9, rederivable_pairs(root));
    }

    let failed: Vec<u32> = results.iter().filter(|(_, r)| r.is_err()).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}
