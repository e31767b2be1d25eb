use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use metanerv::checkpoint::Checkpoint;
use metanerv::compress::{
    bpp_from_bits, compress_model, finetune_pruned, prune_global_magnitude, CompressedModel,
};
use metanerv::fit::{fit, FitConfig};
use metanerv::loss::psnr_frames;
use metanerv::meta::{self, InnerRate};
use metanerv::model::ModelParams;
use metanerv::objective::render_video;
use metanerv::video::{
    add_noise, generate_synthetic, load_video, save_png_dir, Family, SyntheticSpec,
};
use metanerv::Video;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{AdaptArgs, CompressArgs, DenoiseArgs, MetaTrainArgs};

const MANIFEST: &str = "manifest.json";
const TEST_SEED_OFFSET: u64 = 1 << 20;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    split: String,
    index: usize,
    id: String,
    family: Family,
    seed: u64,
    /// Relative to the dataset directory.
    path: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: RunConfig,
    videos: Vec<ManifestEntry>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn video_seed(base: u64, split_offset: u64, index: usize) -> u64 {
    base.wrapping_mul(1 << 32)
        .wrapping_add(split_offset)
        .wrapping_add(index as u64)
}

pub fn gen_dataset(cfg: &RunConfig, out: &Path) -> Result<()> {
    let d = &cfg.dataset;
    ensure!(!d.families.is_empty(), "dataset.families is empty");
    let (mh, mw) = cfg.model.output_resolution();
    let res = (d.height.unwrap_or(mh), d.width.unwrap_or(mw));
    let mut videos = Vec::new();
    for (split, count, offset) in [("train", d.train, 0), ("test", d.test, TEST_SEED_OFFSET)] {
        for index in 0..count {
            let family = d.families[index % d.families.len()];
            let seed = video_seed(cfg.seed, offset, index);
            let mut spec = SyntheticSpec::new(family, res, d.frames, seed);
            spec.velocity = d.velocity;
            spec.size = d.size;
            spec.contrast = d.contrast;
            let video = generate_synthetic(&spec);
            let rel = format!("{split}/{index:03}-{family}");
            save_png_dir(&video, out.join(&rel))?;
            videos.push(ManifestEntry {
                split: split.into(),
                index,
                id: video.id().into(),
                family,
                seed,
                path: rel,
            });
        }
    }
    write_json(
        &out.join(MANIFEST),
        &Manifest {
            config: cfg.clone(),
            videos,
        },
    )
}

fn load_split(dataset: &Path, split: &str) -> Result<Vec<Video>> {
    let path = dataset.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let videos = manifest
        .videos
        .iter()
        .filter(|e| e.split == split)
        .map(|e| Ok(load_video(dataset.join(&e.path))?))
        .collect::<Result<Vec<_>>>()?;
    ensure!(
        !videos.is_empty(),
        "dataset {} has no {split} videos",
        dataset.display()
    );
    Ok(videos)
}

#[derive(Serialize)]
struct MetaTrainReport<'a> {
    command: &'static str,
    config: &'a RunConfig,
    outer_iter: u64,
    rows_written: usize,
    last_final_loss: Option<f64>,
}

pub fn meta_train(mut cfg: RunConfig, a: &MetaTrainArgs) -> Result<()> {
    if let Some(s) = a.steps {
        cfg.meta.outer_steps = s;
    }
    if a.no_spatial {
        cfg.meta.loss = cfg.meta.loss.clone().final_only(cfg.model.num_blocks());
    }
    if a.no_progressive {
        cfg.meta.progressive = false;
    }
    cfg.meta.validate()?;
    let dataset = load_split(&a.dataset, "train")?;
    let (template, mut state) = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ensure!(
                ck.params.config() == &cfg.model,
                "checkpoint {} was trained with a different model config",
                path.display()
            );
            let state = ck
                .meta_state()
                .with_context(|| format!("{} holds no meta-training state", path.display()))?;
            (ck.params, state)
        }
        None => {
            let init = ModelParams::init_random(&cfg.model, cfg.seed)?;
            let state = meta::init_state(&init, &cfg.meta);
            (init, state)
        }
    };
    let remaining = (cfg.meta.outer_steps as u64).saturating_sub(state.outer_iter) as usize;
    create_parent(&a.log)?;
    let file = fs::File::create(&a.log).with_context(|| format!("creating {}", a.log.display()))?;
    let mut log = BufWriter::new(file);
    log.write_all(meta::log_csv(&[], cfg.meta.inner_steps).as_bytes())?;
    let mut rows = 0;
    let mut last = None;
    meta::train_steps(
        &mut state,
        &template,
        &dataset,
        &cfg.meta,
        remaining,
        |row| {
            log.write_all(row.csv_record().as_bytes())
                .map_err(|e| metanerv::Error::Io {
                    path: a.log.clone(),
                    source: e,
                })?;
            rows += 1;
            last = row.final_loss;
            Ok(())
        },
    )?;
    log.flush()?;
    create_parent(&a.out)?;
    Checkpoint::from_meta_state(&template, &state)?.save(&a.out)?;
    let report = MetaTrainReport {
        command: "meta-train",
        config: &cfg,
        outer_iter: state.outer_iter,
        rows_written: rows,
        last_final_loss: last,
    };
    write_json(&a.out.with_extension("json"), &report)
}

#[derive(Serialize)]
struct AdaptReport<'a> {
    command: &'static str,
    config: &'a RunConfig,
    init: String,
    learned_rates: bool,
    steps: usize,
    psnr: Vec<f64>,
    ms_ssim: Vec<f64>,
}

pub fn adapt(cfg: RunConfig, a: &AdaptArgs) -> Result<()> {
    let video = load_video(&a.video)?;
    let (init, beta, source) = match (&a.checkpoint, a.random_init) {
        (Some(path), false) => {
            let ck = Checkpoint::load(path)?;
            (ck.params, ck.beta, path.display().to_string())
        }
        (None, true) => (
            ModelParams::init_random(&cfg.model, cfg.seed)?,
            None,
            format!("random:{}", cfg.seed),
        ),
        _ => bail!("pass exactly one of --checkpoint or --random-init"),
    };
    let rate = match &beta {
        Some(b) => InnerRate::PerParam(b),
        None => InnerRate::Scalar(cfg.adapt.lr),
    };
    let steps = a.steps.unwrap_or(cfg.adapt.steps);
    let result = meta::adapt(&init, rate, &video, steps, &cfg.meta.loss)?;
    create_parent(&a.csv)?;
    fs::write(&a.csv, meta::trace_csv(&result.trace))
        .with_context(|| format!("writing {}", a.csv.display()))?;
    create_parent(&a.out)?;
    Checkpoint::params_only(result.params.clone()).save(&a.out)?;
    if let Some(dir) = &a.dump {
        let frames = render_video(&result.params, video.len())?;
        save_png_dir(&Video::new(format!("{}-recon", video.id()), frames)?, dir)?;
    }
    let report = AdaptReport {
        command: "adapt",
        config: &cfg,
        init: source,
        learned_rates: beta.is_some(),
        steps,
        psnr: result.trace.iter().map(|m| m.psnr).collect(),
        ms_ssim: result.trace.iter().map(|m| m.ms_ssim).collect(),
    };
    write_json(&a.out.with_extension("json"), &report)
}

#[derive(Serialize)]
struct CompressReport<'a> {
    command: &'static str,
    config: &'a RunConfig,
    container: String,
    ratio: f64,
    bits: u32,
    container_bits: u64,
    bpp: f64,
    pruned: usize,
    psnr_before: f64,
    psnr_pruned: f64,
    psnr_after: f64,
}

fn video_psnr(params: &ModelParams, video: &Video) -> Result<f64> {
    Ok(psnr_frames(
        &render_video(params, video.len())?,
        video.frames(),
    )?)
}

pub fn container_name(ratio: f64, bits: u32) -> String {
    format!("ratio-{ratio:.2}-b{bits}")
}

pub fn compress(mut cfg: RunConfig, a: &CompressArgs) -> Result<()> {
    if let Some(r) = &a.ratio {
        cfg.compress.ratios = r.clone();
    }
    if let Some(b) = a.bits {
        cfg.compress.bits = b;
    }
    ensure!(!cfg.compress.ratios.is_empty(), "no pruning ratios given");
    let ck = Checkpoint::load(&a.checkpoint)?;
    let video = load_video(&a.video)?;
    let params = ck.params;
    let bits = cfg.compress.bits;
    let psnr_before = video_psnr(&params, &video)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for &ratio in &cfg.compress.ratios {
        let (pruned, mask) = prune_global_magnitude(&params, ratio)?;
        let psnr_pruned = video_psnr(&pruned, &video)?;
        let steps = cfg.compress.finetune_steps;
        let tuned = if steps > 0 && (ratio > 0.0 || cfg.compress.qat) {
            let fc = FitConfig {
                qat_bits: cfg.compress.qat.then_some(bits),
                ..cfg.fit.clone()
            };
            finetune_pruned(&pruned, &mask, &video, steps, &fc)?
        } else {
            pruned
        };
        let bytes = compress_model(&tuned, Some(&mask), bits)?.to_bytes()?;
        let name = container_name(ratio, bits);
        let path: PathBuf = a.out_dir.join(format!("{name}.mnrc"));
        fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
        let restored = CompressedModel::load(&path)?.decompress()?;
        let container_bits = fs::metadata(&path)?.len() * 8;
        let report = CompressReport {
            command: "compress",
            config: &cfg,
            container: path.file_name().unwrap().to_string_lossy().into_owned(),
            ratio,
            bits,
            container_bits,
            bpp: bpp_from_bits(container_bits, video.pixels())?,
            pruned: mask.pruned(),
            psnr_before,
            psnr_pruned,
            psnr_after: video_psnr(&restored, &video)?,
        };
        write_json(&a.out_dir.join(format!("{name}.json")), &report)?;
    }
    Ok(())
}

pub fn decompress(input: &Path, out: &Path) -> Result<()> {
    let params = CompressedModel::load(input)?.decompress()?;
    create_parent(out)?;
    Checkpoint::params_only(params).save(out)?;
    Ok(())
}

#[derive(Serialize)]
struct DenoiseReport<'a> {
    command: &'static str,
    config: &'a RunConfig,
    sigma: f64,
    steps: usize,
    psnr_noisy_vs_clean: f64,
    psnr_recon_vs_clean: f64,
    psnr_recon_vs_noisy: f64,
}

pub fn denoise_eval(mut cfg: RunConfig, a: &DenoiseArgs) -> Result<()> {
    if let Some(s) = a.sigma {
        cfg.denoise.sigma = s;
    }
    if let Some(s) = a.steps {
        cfg.fit.steps = s;
    }
    let clean = load_video(&a.video)?;
    let noisy = add_noise(&clean, cfg.denoise.sigma, cfg.denoise.noise_seed)?;
    let init = match &a.checkpoint {
        Some(p) => Checkpoint::load(p)?.params,
        None => ModelParams::init_random(&cfg.model, cfg.seed)?,
    };
    let fitted = fit(&init, &noisy, &cfg.fit, None)?.params;
    let recon = render_video(&fitted, clean.len())?;
    let report = DenoiseReport {
        command: "denoise-eval",
        config: &cfg,
        sigma: cfg.denoise.sigma,
        steps: cfg.fit.steps,
        psnr_noisy_vs_clean: psnr_frames(noisy.frames(), clean.frames())?,
        psnr_recon_vs_clean: psnr_frames(&recon, clean.frames())?,
        psnr_recon_vs_noisy: psnr_frames(&recon, noisy.frames())?,
    };
    write_json(&a.report, &report)
}
