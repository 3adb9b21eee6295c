use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use textstyle::candle_core::{DType, Device};
use textstyle::config::load_config_for;
use textstyle::encoders::{BackendKind, Backends};
use textstyle::evaluation::{content_preservation, patchwise_clip_score};
use textstyle::report::LossReport;
use textstyle::rng::{SeedStreams, Stream};
use textstyle::trainer::{write_history_csv, FastSession, SingleImageSession, TextureDataset};
use textstyle::{default_config, stylize as run_network, Image, Mode, StyleNetwork, StylePrompt, TrainConfig};

use crate::manifest::{RunManifest, RunStatus};
use crate::{ApplyArgs, BackendArgs, BackendChoice, EvalArgs, Failure, FastTrainArgs, StylizeArgs, TrainArgs};
use crate::{EXIT_FAILURE, EXIT_USAGE};

pub const FINAL_IMAGE: &str = "final.png";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.resolved";

const LOG_EVERY: usize = 10;

type CmdResult = Result<(), Failure>;

/// Output-side failures are neither bad input nor a backend problem.
fn output<T>(r: textstyle::Result<T>, what: &Path) -> Result<T, Failure> {
    r.map_err(|e| {
        Failure::new(
            EXIT_FAILURE,
            anyhow::Error::new(e).context(format!("writing {}", what.display())),
        )
    })
}

fn load_backends(args: &BackendArgs, dtype: DType, device: &Device) -> Result<Backends, Failure> {
    Ok(match args.backend {
        BackendChoice::Stub => Backends::stub(dtype, device)?,
        BackendChoice::Real => Backends::real(args.weights.as_deref(), device)?,
    })
}

fn resolve_config(args: &TrainArgs, mode: Mode) -> Result<TrainConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => load_config_for(path, mode)?,
        None => default_config(mode),
    };
    if config.mode != mode {
        return Err(Failure::usage(anyhow::anyhow!(
            "config file is for mode `{}` but this command needs `{}`",
            config.mode,
            mode
        )));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.iterations {
        config.iterations = n;
    }
    if let Some(p) = args.patch_size {
        config.patch_size = p;
    }
    if let Some(tau) = args.tau {
        config.tau = tau;
    }
    if let Some(ablation) = args.ablation {
        ablation.apply(&mut config);
    }
    Ok(config)
}

fn slug(text: &str) -> String {
    let s: String = text
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect();
    let s = s.split('-').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("-");
    if s.is_empty() {
        "run".into()
    } else {
        s.chars().take(40).collect()
    }
}

fn run_dir(args: &TrainArgs, stem: &str, seed: u64) -> Result<(String, PathBuf), Failure> {
    let id = args
        .run_id
        .clone()
        .unwrap_or_else(|| format!("{}-{}-seed{seed}", slug(stem), slug(&args.text)));
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(Failure::usage(anyhow::anyhow!("invalid run id `{id}`")));
    }
    let dir = args.out.join(&id);
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::from)?;
    Ok((id, dir))
}

fn log_progress(i: usize, total: usize, r: &LossReport) {
    if i == 0 || (i + 1).is_multiple_of(LOG_EVERY) || i + 1 == total {
        log::info!(
            "iter {:>4}/{total}  total {:.4}  dir {:.4}  patch {:.4}  content {:.5}  tv {:.5}  rejected {}/{}",
            i + 1,
            r.l_total,
            r.l_dir,
            r.l_patch,
            r.l_content,
            r.l_tv,
            r.rejected_count(),
            r.per_patch.len()
        );
    }
}

fn finish_run(
    manifest: &mut RunManifest,
    dir: &Path,
    history: &[LossReport],
    outcome: textstyle::Result<()>,
) -> CmdResult {
    manifest.iterations_completed = history.len();
    manifest.final_loss = history.last().map(|r| r.l_total);
    match outcome {
        Ok(()) => {
            manifest.finish(RunStatus::Completed);
            manifest.write(dir)?;
            Ok(())
        }
        Err(e) => {
            manifest.error = Some(e.to_string());
            manifest.finish(RunStatus::Aborted);
            manifest.write(dir)?;
            Err(e.into())
        }
    }
}

pub fn stylize(args: StylizeArgs) -> CmdResult {
    let config = resolve_config(&args.train, Mode::SingleImage)?;
    config.validate()?;
    let prompt = StylePrompt::with_source(&args.train.text, &args.train.source)?;
    let content = Image::load(&args.content)?;
    config.check_content_size(content.height(), content.width())?;
    let backends = load_backends(&args.train.backend, DType::F32, &Device::Cpu)?;

    let stem = args.content.file_stem().and_then(|s| s.to_str()).unwrap_or("content");
    let (run_id, dir) = run_dir(&args.train, stem, config.seed)?;
    let config_path = dir.join(CONFIG_FILE);
    output(config.save(&config_path), &config_path)?;
    let mut manifest = RunManifest::start(
        &run_id,
        "stylize",
        backends.identity(),
        &config,
        &prompt,
        vec![args.content.clone()],
        args.train.ablation,
    );
    manifest.write(&dir)?;
    log::info!(
        "run {run_id}: backend {}, {} iterations",
        backends.identity(),
        config.iterations
    );

    let started = Instant::now();
    let mut session = SingleImageSession::new(
        &content,
        &prompt,
        &config,
        backends.encoder.as_ref(),
        backends.extractor.as_ref(),
    )?;
    let mut outcome = Ok(());
    while !session.is_done() {
        let i = session.iteration();
        match session.step() {
            Ok(r) => log_progress(i, config.iterations, &r),
            Err(e) => {
                log::error!("aborting at iteration {}: {e}", i + 1);
                outcome = Err(e);
                break;
            }
        }
    }
    log::info!("optimization took {:.1}s", started.elapsed().as_secs_f64());

    // the image is written even after an abort, from the last finite weights
    let mut image = session.stylized()?;
    if args.enhance {
        image = image.enhance_contrast();
    }
    let final_path = dir.join(FINAL_IMAGE);
    output(image.save_png(&final_path), &final_path)?;
    let history_path = dir.join(HISTORY_FILE);
    output(
        write_history_csv(&history_path, session.history(), &config),
        &history_path,
    )?;
    manifest.outputs = vec![final_path.clone(), history_path, config_path];
    if outcome.is_ok() {
        let ckpt = dir.join(CHECKPOINT_FILE);
        output(session.network().save(&ckpt), &ckpt)?;
        manifest.outputs.push(ckpt);
    }
    finish_run(&mut manifest, &dir, session.history(), outcome)?;
    println!("{}", final_path.display());
    Ok(())
}

pub fn fast_train(args: FastTrainArgs) -> CmdResult {
    let config = resolve_config(&args.train, Mode::FastTransfer)?;
    config.validate()?;
    let prompt = StylePrompt::with_source(&args.train.text, &args.train.source)?;
    let dataset = TextureDataset::from_dir(&args.textures, config.patch_size, config.batch_size)?;
    let backends = load_backends(&args.train.backend, DType::F32, &Device::Cpu)?;
    let net = match backends.kind {
        BackendKind::Stub => textstyle::FastStyler::stub(config.seed, DType::F32, &Device::Cpu)?,
        BackendKind::Real => {
            let vgg = backends
                .vgg_weights
                .clone()
                .ok_or_else(|| textstyle::Error::BackendUnavailable("no VGG weights located".into()))?;
            textstyle::FastStyler::pretrained(vgg, config.seed, DType::F32, &Device::Cpu)?
        }
    };

    let stem = args.textures.file_name().and_then(|s| s.to_str()).unwrap_or("textures");
    let (run_id, dir) = run_dir(&args.train, stem, config.seed)?;
    let config_path = dir.join(CONFIG_FILE);
    output(config.save(&config_path), &config_path)?;
    let mut manifest = RunManifest::start(
        &run_id,
        "fast-train",
        backends.identity(),
        &config,
        &prompt,
        vec![args.textures.clone()],
        args.train.ablation,
    );
    manifest.write(&dir)?;
    log::info!(
        "run {run_id}: {} texture image(s), {} iterations",
        dataset.len(),
        config.iterations
    );

    let mut session = FastSession::new(
        net,
        dataset,
        &prompt,
        &config,
        backends.encoder.as_ref(),
        backends.extractor.as_ref(),
    )?;
    let mut outcome = Ok(());
    while !session.is_done() {
        let i = session.iteration();
        match session.step() {
            Ok(r) => log_progress(i, config.iterations, &r),
            Err(e) => {
                log::error!("aborting at iteration {}: {e}", i + 1);
                outcome = Err(e);
                break;
            }
        }
    }
    let history_path = dir.join(HISTORY_FILE);
    output(
        write_history_csv(&history_path, session.history(), &config),
        &history_path,
    )?;
    manifest.outputs = vec![history_path, config_path];
    let ckpt = dir.join(CHECKPOINT_FILE);
    if outcome.is_ok() {
        output(session.network().save(&ckpt), &ckpt)?;
        manifest.outputs.push(ckpt.clone());
    }
    finish_run(&mut manifest, &dir, session.history(), outcome)?;
    println!("{}", ckpt.display());
    Ok(())
}

pub fn apply(args: ApplyArgs) -> CmdResult {
    let net = StyleNetwork::load(&args.checkpoint, &Device::Cpu).map_err(|e| {
        Failure::backend(anyhow::Error::new(e).context(format!("loading {}", args.checkpoint.display())))
    })?;
    let content = Image::load(&args.content)?;
    let started = Instant::now();
    let mut image = run_network(&net, &content)?;
    log::info!(
        "{}x{} forward pass took {:.2}s",
        content.width(),
        content.height(),
        started.elapsed().as_secs_f64()
    );
    if args.enhance {
        image = image.enhance_contrast();
    }
    output(image.save_png(&args.output), &args.output)?;
    println!("{}", args.output.display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> CmdResult {
    if args.min_size == 0 || args.min_size > args.max_size {
        return Err(Failure::new(
            EXIT_USAGE,
            anyhow::anyhow!("--min-size must be positive and at most --max-size"),
        ));
    }
    let image = Image::load(&args.output)?;
    let backends = load_backends(&args.backend, DType::F32, &Device::Cpu)?;
    let mut rng = SeedStreams::new(args.seed).rng(Stream::Eval);
    let mut report = patchwise_clip_score(
        &image,
        &args.text,
        backends.encoder.as_ref(),
        args.patches,
        (args.min_size, args.max_size),
        &mut rng,
    )?;
    if let Some(content_path) = &args.content {
        let content = Image::load(content_path)?;
        let layers = default_config(Mode::SingleImage).content_layers;
        report.content_mse = Some(content_preservation(
            &content,
            &image,
            backends.extractor.as_ref(),
            &layers,
        )?);
    }
    print!("{report}");
    if let Some(path) = &args.report {
        output(report.write_csv(path), path)?;
        let txt = path.with_extension("txt");
        std::fs::write(&txt, report.to_string())
            .with_context(|| format!("writing {}", txt.display()))
            .map_err(Failure::from)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slug("Fire"), "fire");
        assert_eq!(
            slug("Starry Night by Vincent van gogh"),
            "starry-night-by-vincent-van-gogh"
        );
        assert_eq!(slug("!!!"), "run");
    }
}
