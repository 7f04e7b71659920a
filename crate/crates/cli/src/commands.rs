use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use simusr::denoise::DenoiseSetting;
use simusr::image::{load_image, save_image};
use simusr::metrics::{bench_latency, evaluate, BenchJob, LatencyReport, MetricReport, Psnr};
use simusr::nn::{Checkpoint, ModelConfig};
use simusr::pairs::{build_pairs as derive_pairs, load_pairs, save_pairs, AugmentPolicy, DenoiseOrder, PairSet, PairSetSpec};
use simusr::resample::{Kernel, ScaleFactor};
use simusr::train::{ensure_scale, infer as run_infer, train_simusr, train_zssr, TrainConfig, ZssrConfig};
use simusr::{ColorMode, Error, Image};

use crate::config::Resolver;
use crate::manifest::{io_err, ExperimentManifest};
use crate::{BenchArgs, BuildPairsArgs, EvalArgs, InferArgs, ModelArgs, TrainArgs, ZssrArgs};

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        let png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if png && path.is_file() {
            out.push(path);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: no PNG files", dir.display())));
    }
    out.sort();
    Ok(out)
}

fn require(path: &Path) -> Result<(), Error> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::NotFound(path.to_owned()))
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn manifest_path(out: &Path, flag: Option<&PathBuf>) -> PathBuf {
    if let Some(p) = flag {
        return p.clone();
    }
    if out.is_dir() {
        return out.join("experiment.json");
    }
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn finish(mut m: ExperimentManifest, start: Instant, path: &Path) -> Result<()> {
    m.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    m.write(path)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn model_config(r: &mut Resolver, args: &ModelArgs, in_channels: usize, scale: u32) -> Result<ModelConfig, Error> {
    let d = ModelConfig::default();
    let cfg = ModelConfig {
        in_channels,
        feature_channels: r.get("features", args.features, d.feature_channels)?,
        residual_blocks: r.get("blocks", args.blocks, d.residual_blocks)?,
        scale,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn build_pairs(a: BuildPairsArgs) -> Result<()> {
    let start = Instant::now();
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let d = PairSetSpec::default();
    let scale = r.get("scale", a.scale, 2u32)?;
    let antialias = r.get("antialias", a.no_antialias.then_some(false), true)?;
    let spec = PairSetSpec {
        scale: ScaleFactor::integer(scale)?,
        kernel: r.get("kernel", a.kernel, d.kernel)?,
        antialias,
        denoise: r.get("denoise", a.denoise, d.denoise)?,
        denoise_order: r.get::<DenoiseOrder>("denoise_order", a.denoise_order, d.denoise_order)?,
        seed: r.seed(a.seed)?,
        min_patch: d.min_patch,
    };
    let config = r.finish()?;

    let files = list_pngs(&a.input)?;
    let mut m = ExperimentManifest::new("build-pairs", config);
    let mut inputs = Vec::with_capacity(files.len());
    for f in &files {
        m.input(f)?;
        inputs.push((stem(f), load_image(f)?));
    }
    let pairs = derive_pairs(&spec, &inputs)?;
    let set = PairSet { spec, pairs };
    save_pairs(&set, &a.out)?;
    m.outputs.push(a.out.clone());
    eprintln!("wrote {} pairs to {}", set.pairs.len(), a.out.display());
    finish(m, start, &manifest_path(&a.out, a.common.manifest.as_ref()))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let start = Instant::now();
    let mut r = Resolver::new(a.common.config.as_deref())?;
    require(&a.pairs)?;
    let set = load_pairs(&a.pairs)?;
    let set_scale = set
        .spec
        .scale
        .as_integer()
        .ok_or_else(|| Error::InvalidArgument("pair set scale is not an integer".into()))?;
    let scale = r.get("scale", a.scale, set_scale)?;
    if scale != set_scale {
        return Err(Error::InvalidArgument(format!(
            "--scale {scale} conflicts with the pair set scale {set_scale}"
        ))
        .into());
    }
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        steps: r.get("steps", a.steps, d.steps)?,
        batch: r.get("batch", a.batch, d.batch)?,
        lr_patch: r.get("lr_patch", a.lr_patch, d.lr_patch)?,
        learning_rate: r.get("lr", a.lr, d.learning_rate)?,
        halve_every: r.get("halve_every", a.halve_every, d.halve_every)?,
        seed: r.seed(a.seed)?,
        augment: r.get::<AugmentPolicy>("augment", a.augment, d.augment)?,
        scale,
    };
    cfg.validate()?;
    let in_channels = set.pairs.first().map_or(3, |p| p.father.channels());
    let model = model_config(&mut r, &a.model, in_channels, scale)?;
    let config = r.finish()?;

    let mut m = ExperimentManifest::new("train", config);
    m.input(&a.pairs.join(simusr::pairs::MANIFEST))?;
    let (ckpt, log) = train_simusr(&set.pairs, &cfg, &model)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    ckpt.save(&a.out)?;
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    write_text(&log_path, &log.to_csv())?;
    m.outputs.push(a.out.clone());
    m.outputs.push(log_path);
    if let Some(last) = log.rows.last() {
        eprintln!("step {} loss {:.5}", last.step, last.loss);
    }
    finish(m, start, &manifest_path(&a.out, a.common.manifest.as_ref()))
}

pub fn zssr(a: ZssrArgs) -> Result<()> {
    let start = Instant::now();
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let d = ZssrConfig::default();
    let scale = r.get("scale", a.scale, 2u32)?;
    let cfg = ZssrConfig {
        steps: r.get("steps", a.steps, d.steps)?,
        learning_rate: r.get("lr", a.lr, d.learning_rate)?,
        plateau: r.get("plateau", a.plateau, d.plateau)?,
        lr_patch: r.get("lr_patch", a.lr_patch, d.lr_patch)?,
        batch: r.get("batch", a.batch, d.batch)?,
        seed: r.seed(a.seed)?,
        denoise: r.get::<DenoiseSetting>("denoise", a.denoise, d.denoise)?,
        kernel: r.get::<Kernel>("kernel", a.kernel, d.kernel)?,
        antialias: d.antialias,
    };
    cfg.validate()?;
    let input = load_image(&a.input)?;
    let model = model_config(&mut r, &a.model, input.channels(), scale)?;
    let config = r.finish()?;

    let mut m = ExperimentManifest::new("zssr", config);
    m.input(&a.input)?;
    let res = train_zssr(&input, &cfg, &model)?;
    save_image(&res.sr, &a.out)?;
    m.outputs.push(a.out.clone());
    if let Some(log) = &a.log {
        write_text(log, &res.log.to_csv())?;
        m.outputs.push(log.clone());
    }
    finish(m, start, &manifest_path(&a.out, a.common.manifest.as_ref()))
}

pub fn infer(a: InferArgs) -> Result<()> {
    let start = Instant::now();
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let denoise = r.get::<DenoiseSetting>("denoise", a.denoise, DenoiseSetting::Off)?;
    let requested = r.opt("scale", a.scale)?;
    require(&a.ckpt)?;
    require(&a.input)?;
    let ckpt = Checkpoint::load(&a.ckpt)?;
    if let Some(s) = requested {
        ensure_scale(&ckpt, s)?;
    }
    r.record("scale", ckpt.config.scale);
    let config = r.finish()?;

    let mut m = ExperimentManifest::new("infer", config);
    m.input(&a.ckpt)?;
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
        list_pngs(&a.input)?
            .into_iter()
            .map(|p| {
                let out = a.out.join(p.file_name().expect("listed files have names"));
                (p, out)
            })
            .collect()
    } else {
        vec![(a.input.clone(), a.out.clone())]
    };
    for (src, dst) in &jobs {
        m.input(src)?;
        let lr = load_image(src)?;
        let sr = run_infer(&ckpt, &lr, &denoise).with_context(|| format!("{}", src.display()))?;
        save_image(&sr, dst)?;
        m.outputs.push(dst.clone());
    }
    finish(m, start, &manifest_path(&a.out, a.common.manifest.as_ref()))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let start = Instant::now();
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let mode = r.get::<ColorMode>("mode", a.mode, ColorMode::Y)?;
    let shave = r.get("shave", a.shave, 0usize)?;
    let config = r.finish()?;
    require(&a.sr)?;
    require(&a.reference)?;

    let mut m = ExperimentManifest::new("eval", config);
    let pairs: Vec<(String, PathBuf, PathBuf)> = if a.sr.is_dir() {
        let mut v = Vec::new();
        for sr in list_pngs(&a.sr)? {
            let name = sr.file_name().expect("listed files have names");
            let reference = a.reference.join(name);
            require(&reference)?;
            v.push((name.to_string_lossy().into_owned(), sr, reference));
        }
        v
    } else {
        let name = a.sr.file_name().unwrap_or_default().to_string_lossy().into_owned();
        vec![(name, a.sr.clone(), a.reference.clone())]
    };

    let mut csv = String::from("image,psnr_db,ssim,mode,shave\n");
    let mut reports: Vec<MetricReport> = Vec::new();
    for (name, sr, reference) in &pairs {
        m.input(sr)?;
        m.input(reference)?;
        let rep = evaluate(&load_image(sr)?, &load_image(reference)?, mode, shave)
            .with_context(|| name.clone())?;
        csv.push_str(&format!("{name},{},{:.6},{mode},{shave}\n", rep.psnr_db, rep.ssim));
        reports.push(rep);
    }
    let n = reports.len() as f64;
    let mean_psnr = if reports.iter().any(|r| r.psnr_db.is_identical()) {
        Psnr::Identical
    } else {
        Psnr::Finite(reports.iter().filter_map(|r| r.psnr_db.db()).sum::<f64>() / n)
    };
    let mean_ssim = reports.iter().map(|r| r.ssim).sum::<f64>() / n;
    csv.push_str(&format!("mean,{},{mean_ssim:.6},{mode},{shave}\n", mean_psnr));
    print!("{csv}");

    match &a.out {
        Some(out) => {
            write_text(out, &csv)?;
            m.outputs.push(out.clone());
            finish(m, start, &manifest_path(out, a.common.manifest.as_ref()))
        }
        None => match &a.common.manifest {
            Some(p) => finish(m, start, p),
            None => {
                m.wall_ms = start.elapsed().as_secs_f64() * 1e3;
                eprintln!("{}", serde_json::to_string_pretty(&m)?);
                Ok(())
            }
        },
    }
}

#[derive(Serialize)]
struct BenchReport {
    input: PathBuf,
    height: usize,
    width: usize,
    scale: u32,
    jobs: Vec<LatencyReport>,
    /// ZSSR median over inference median.
    ratio: f64,
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let start = Instant::now();
    let mut r = Resolver::new(a.common.config.as_deref())?;
    require(&a.ckpt)?;
    require(&a.input)?;
    let ckpt = Checkpoint::load(&a.ckpt)?;
    if let Some(s) = r.opt("scale", a.scale)? {
        ensure_scale(&ckpt, s)?;
    }
    let d = ZssrConfig::default();
    let zcfg = ZssrConfig {
        steps: r.get("zssr_steps", a.zssr_steps, d.steps)?,
        lr_patch: r.get("zssr_lr_patch", a.zssr_lr_patch, d.lr_patch)?,
        seed: r.seed(a.seed)?,
        ..d
    };
    zcfg.validate()?;
    let repeats = r.get("repeats", a.repeats, 5usize)?;
    let zssr_repeats = r.get("zssr_repeats", a.zssr_repeats, 1usize)?;
    let config = r.finish()?;

    let input: Image = load_image(&a.input)?;
    let mut m = ExperimentManifest::new("bench", config);
    m.input(&a.ckpt)?;
    m.input(&a.input)?;
    let inf = bench_latency(BenchJob::SimusrInfer { ckpt: &ckpt }, &input, repeats)?;
    let model = ckpt.config;
    let z = bench_latency(
        BenchJob::ZssrFull {
            cfg: &zcfg,
            model: &model,
        },
        &input,
        zssr_repeats,
    )?;
    let ratio = z.median_ms / inf.median_ms;
    let report = BenchReport {
        input: a.input.clone(),
        height: input.height(),
        width: input.width(),
        scale: model.scale,
        jobs: vec![inf, z],
        ratio,
    };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(out) => {
            write_text(out, &json)?;
            m.outputs.push(out.clone());
            finish(m, start, &manifest_path(out, a.common.manifest.as_ref()))
        }
        None => {
            print!("{json}");
            match &a.common.manifest {
                Some(p) => finish(m, start, p),
                None => Ok(()),
            }
        }
    }
}
