use std::path::Path;

use anyhow::Context;
use uatr_core::contrastive::{pretrain, training_log, UartModel};
use uatr_core::data::{
    assign_folds, ingest, segment_audio, write_synth_dataset, Dataset, SynthSpec,
};
use uatr_core::dsp::{read_wav_mono, resample_to_16k, AudioSegment, SAMPLE_RATE};
use uatr_core::encoders::Checkpoint;
use uatr_core::inference::{
    cross_validate, encoder_tune, predict_fold, prompt_infer_batch, uart_tune, Classifier,
    EncoderInit, EvalReport, Predictor,
};
use uatr_core::text::{candidate_queue, TemplateSpec};

use crate::config::RunConfig;
use crate::{Command, Split, Tune, UsageError};

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth { spec, out } => synth(spec.as_deref(), &out),
        Command::Train {
            manifest,
            config,
            template,
            out,
            split,
            log,
        } => train(
            &manifest,
            config.as_deref(),
            template.as_deref(),
            &out,
            split,
            log.as_deref(),
        ),
        Command::Tune { strategy } => match strategy {
            Tune::Uart {
                ckpt,
                manifest,
                config,
                template,
                out,
                split,
            } => tune_uart(
                &ckpt,
                &manifest,
                config.as_deref(),
                template.as_deref(),
                &out,
                split,
            ),
            Tune::Encoder {
                ckpt,
                manifest,
                config,
                out,
                freeze,
                split,
            } => tune_encoder(&ckpt, &manifest, config.as_deref(), &out, freeze, split),
        },
        Command::Infer {
            ckpt,
            wav,
            labels,
            config,
        } => infer(&ckpt, &wav, labels.as_deref(), config.as_deref()),
        Command::Eval {
            ckpt,
            manifest,
            folds,
            fold,
            config,
            report,
        } => eval(
            &ckpt,
            &manifest,
            folds,
            fold,
            config.as_deref(),
            report.as_deref(),
        ),
        Command::Cv {
            manifest,
            config,
            template,
            folds,
            report,
        } => cv(
            &manifest,
            config.as_deref(),
            template.as_deref(),
            folds,
            report.as_deref(),
        ),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?)
}

fn load_template(path: Option<&Path>) -> anyhow::Result<TemplateSpec> {
    Ok(match path {
        Some(p) => TemplateSpec::load(p)?,
        None => TemplateSpec::default_training(),
    })
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).map_err(|e| uatr_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn check_fold(split: Split) -> anyhow::Result<()> {
    if let Some(f) = split.fold {
        if f >= split.folds {
            return Err(UsageError(format!(
                "fold {f} does not exist with {} folds",
                split.folds
            ))
            .into());
        }
    }
    Ok(())
}

/// The dataset, or its training recordings for `split.fold`.
fn training_split(ds: Dataset, split: Split, seed: u64) -> anyhow::Result<Dataset> {
    check_fold(split)?;
    Ok(match split.fold {
        Some(f) => {
            let folds = assign_folds(&ds.sources(), split.folds, seed)?;
            ds.from_sources(&folds.train_sources(f))
        }
        None => ds,
    })
}

fn synth(spec: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let spec: SynthSpec = match spec {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    let manifest = write_synth_dataset(&spec, out)?;
    println!(
        "wrote {} recordings and {}",
        manifest.rows.len(),
        out.join("manifest.jsonl").display()
    );
    Ok(())
}

fn train(
    manifest: &Path,
    config: Option<&Path>,
    template: Option<&Path>,
    out: &Path,
    split: Split,
    log: Option<&Path>,
) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    let template = load_template(template)?;
    let ds = training_split(ingest(manifest, &cfg.segment)?, split, cfg.fold_seed)?;
    let (model, metrics) = pretrain(
        &ds,
        &cfg.encoder,
        &cfg.train,
        &template,
        &cfg.test_template()?,
    )?;
    let text = training_log(&metrics);
    print!("{text}");
    if let Some(p) = log {
        write_text(p, &text)?;
    }
    model.save(out)?;
    println!("saved {}", out.display());
    Ok(())
}

fn tune_uart(
    ckpt: &Path,
    manifest: &Path,
    config: Option<&Path>,
    template: Option<&Path>,
    out: &Path,
    split: Split,
) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    let model = UartModel::load(ckpt)?;
    if config.is_some() {
        model.check_compatible(&cfg.encoder)?;
    }
    let template = match template {
        Some(p) => TemplateSpec::load(p)?,
        None => model.template.clone(),
    };
    let ds = training_split(ingest(manifest, &cfg.segment)?, split, cfg.fold_seed)?;
    let (model, metrics) = uart_tune(model, &ds, &template, &cfg.train)?;
    print!("{}", training_log(&metrics));
    model.save(out)?;
    println!("saved {}", out.display());
    Ok(())
}

fn tune_encoder(
    ckpt: &Path,
    manifest: &Path,
    config: Option<&Path>,
    out: &Path,
    freeze: bool,
    split: Split,
) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    let model = UartModel::load(ckpt)?;
    let ds = training_split(ingest(manifest, &cfg.segment)?, split, cfg.fold_seed)?;
    let mut tune = cfg.tune.clone();
    tune.freeze_encoder |= freeze;
    let (clf, trace) = encoder_tune(EncoderInit::Pretrained(&model), &ds, &ds.labels(), &tune)?;
    for (i, loss) in trace.iter().enumerate() {
        println!("epoch={} mean_loss={loss}", i + 1);
    }
    clf.save(out)?;
    println!("saved {}", out.display());
    Ok(())
}

enum Loaded {
    Uart(Box<UartModel>),
    Classifier(Box<Classifier>),
}

impl Loaded {
    fn load(path: &Path) -> anyhow::Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let kind = ckpt
            .metadata
            .get("kind")
            .and_then(|k| k.as_str())
            .unwrap_or("");
        Ok(match kind {
            "classifier" => Loaded::Classifier(Box::new(Classifier::from_checkpoint(&ckpt)?)),
            _ => Loaded::Uart(Box::new(UartModel::from_checkpoint(&ckpt)?)),
        })
    }

    fn predictor(&self) -> &dyn Predictor {
        match self {
            Loaded::Uart(m) => m.as_ref(),
            Loaded::Classifier(c) => c.as_ref(),
        }
    }
}

/// Segments of one file; a file shorter than a segment is used whole.
fn wav_segments(wav: &Path, cfg: &RunConfig) -> anyhow::Result<Vec<AudioSegment>> {
    let (samples, rate) = read_wav_mono(wav)?;
    let samples = resample_to_16k(&samples, rate).with_context(|| format!("{}", wav.display()))?;
    let id = wav
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut segs = segment_audio(&samples, &id, SAMPLE_RATE, &cfg.segment)?;
    if segs.is_empty() && !samples.is_empty() {
        segs.push(AudioSegment::new(samples, id, 0));
    }
    Ok(segs)
}

fn infer(
    ckpt: &Path,
    wav: &Path,
    labels: Option<&Path>,
    config: Option<&Path>,
) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    let segs = wav_segments(wav, &cfg)?;
    let refs: Vec<&AudioSegment> = segs.iter().collect();
    match Loaded::load(ckpt)? {
        Loaded::Uart(model) => {
            let labels: Vec<String> = match labels {
                Some(p) => std::fs::read_to_string(p)
                    .map_err(|e| UsageError(format!("cannot read {}: {e}", p.display())))?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect(),
                None => model.labels.clone(),
            };
            let candidates = candidate_queue(&model.test_template, &labels)?;
            for (seg, p) in segs
                .iter()
                .zip(prompt_infer_batch(&model, &refs, &candidates)?)
            {
                let sims: Vec<String> = labels
                    .iter()
                    .zip(&p.similarities)
                    .map(|(l, s)| format!("{l}={s:.4}"))
                    .collect();
                println!(
                    "segment {}: {} ({})",
                    seg.segment_index,
                    labels[p.index],
                    sims.join(" ")
                );
            }
        }
        Loaded::Classifier(clf) => {
            for (seg, label) in segs.iter().zip(clf.predict(&refs)?) {
                println!("segment {}: {label}", seg.segment_index);
            }
        }
    }
    Ok(())
}

fn emit_report(report: &EvalReport, path: Option<&Path>) -> anyhow::Result<()> {
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = path {
        write_text(p, &text)?;
    }
    Ok(())
}

fn eval(
    ckpt: &Path,
    manifest: &Path,
    folds: usize,
    fold: Option<usize>,
    config: Option<&Path>,
    report: Option<&Path>,
) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    check_fold(Split { fold, folds })?;
    let ds = ingest(manifest, &cfg.segment)?;
    let assignment = assign_folds(&ds.sources(), folds, cfg.fold_seed)?;
    let model = Loaded::load(ckpt)?;
    let wanted: Vec<usize> = match fold {
        Some(f) => vec![f],
        None => (0..folds).collect(),
    };
    let mut results = Vec::new();
    for f in wanted {
        let test = ds.from_sources(&assignment.test_sources(f));
        results.push((f, predict_fold(model.predictor(), &test)?));
    }
    emit_report(&EvalReport::from_folds(results, &cfg.class_map()), report)
}

fn cv(
    manifest: &Path,
    config: Option<&Path>,
    template: Option<&Path>,
    folds: usize,
    report: Option<&Path>,
) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    let template = load_template(template)?;
    let test_template = cfg.test_template()?;
    let ds = ingest(manifest, &cfg.segment)?;
    let rep = cross_validate(
        &ds,
        folds,
        cfg.fold_seed,
        &cfg.class_map(),
        |fold, train| {
            log::info!("fold {fold}: {} training segments", train.len());
            let (model, _) = pretrain(train, &cfg.encoder, &cfg.train, &template, &test_template)?;
            Ok(model)
        },
    )?;
    emit_report(&rep, report)
}
