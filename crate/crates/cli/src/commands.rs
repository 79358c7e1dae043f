use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use vispgan::blend::{blend_clip, RegionSidecar};
use vispgan::eval::{evaluate_generators, train_auxiliary_classifier, FakeProtocol};
use vispgan::losses::Mode;
use vispgan::synthcorpus::{generate_corpus, Corpus, CorpusConfig, Split, MANIFEST_FILE};
use vispgan::trainer::{
    pretrain_word_classifier, train_gan, trim_csv_after, ClassifierTrainConfig, CsvMetrics,
    GanRunOptions, GanState, MetricsLog, TrainConfig, TrainedClassifier, TrainedGenerator,
};
use vispgan::vsgc::{read_clip, write_atomic, write_clip, DType};
use vispgan::Error;

use crate::export::export_frames;
use crate::manifest::{hash_inputs, manifest_path, now_ms, RunManifest};
use crate::plot::{default_columns, plot_metrics, plot_report};
use crate::{
    BlendArgs, ClassifierArgs, Cli, CliError, CliResult, Command, EvaluateArgs, GenerateArgs,
    MakeCorpusArgs, PlotArgs, Preset, TrainArgs,
};

/// What a command reports back for its manifest.
struct Outcome {
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    /// Primary output and whether it is a directory.
    primary: (PathBuf, bool),
    summary: serde_json::Value,
}

pub(crate) fn dispatch(cli: &Cli, argv: &[String]) -> CliResult<()> {
    let started = now_ms();
    let data = &cli.data_dir;
    let (name, outcome) = match &cli.command {
        Command::MakeCorpus(a) => ("make-corpus", make_corpus(data, a)?),
        Command::PretrainCls(a) => ("pretrain-cls", classifier(data, a, false)?),
        Command::Train(a) => ("train", train(data, a)?),
        Command::TrainAux(a) => ("train-aux", classifier(data, a, true)?),
        Command::Generate(a) => ("generate", generate(data, a)?),
        Command::Evaluate(a) => ("evaluate", evaluate(data, a)?),
        Command::Blend(a) => ("blend", blend(a)?),
        Command::Plot(a) => ("plot", plot(data, a)?),
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: name.into(),
        argv: argv.to_vec(),
        config: outcome.config,
        seeds: outcome.seeds,
        inputs: outcome
            .inputs
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        input_hash: hash_inputs(&outcome.inputs)?,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        outputs: outcome
            .outputs
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        summary: outcome.summary,
    };
    let path = manifest_path(&outcome.primary.0, outcome.primary.1);
    manifest.write(&path)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?)
}

fn to_value<T: Serialize>(v: &T) -> CliResult<serde_json::Value> {
    Ok(serde_json::to_value(v).map_err(Error::from)?)
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), b.parent().map(fs::canonicalize)) {
        (Ok(a), Some(Ok(parent))) => b.file_name().is_some_and(|n| parent.join(n) == a),
        _ => a == b,
    }
}

/// Outputs must never overwrite an input.
fn ensure_distinct(inputs: &[&Path], outputs: &[&Path]) -> CliResult<()> {
    for o in outputs {
        if let Some(i) = inputs.iter().find(|i| same_file(i, o)) {
            return Err(CliError::Usage(format!(
                "output {} would overwrite input {}",
                o.display(),
                i.display()
            )));
        }
    }
    Ok(())
}

fn parent_dir(path: &Path) -> CliResult<PathBuf> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn remove_stale(path: &Path) -> CliResult<()> {
    if path.exists() {
        fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn make_corpus(data: &Path, a: &MakeCorpusArgs) -> CliResult<Outcome> {
    let mut cfg: CorpusConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => CorpusConfig::desk(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.noise_sigma {
        cfg.render.noise_sigma = n;
    }
    let out = a.out.clone().unwrap_or_else(|| data.join("corpus"));
    if out.join(MANIFEST_FILE).exists() {
        return Err(CliError::Usage(format!(
            "{} already holds a corpus",
            out.display()
        )));
    }
    let manifest = generate_corpus(&cfg, &out)?;
    log::info!(
        "wrote {} clips to {}",
        manifest.records.len(),
        out.display()
    );
    Ok(Outcome {
        config: to_value(&cfg)?,
        seeds: BTreeMap::from([("corpus".into(), cfg.seed)]),
        inputs: a.config.iter().cloned().collect(),
        outputs: vec![out.clone()],
        primary: (out, true),
        summary: json!({ "clips": manifest.records.len() }),
    })
}

fn classifier(data: &Path, a: &ClassifierArgs, auxiliary: bool) -> CliResult<Outcome> {
    let corpus_dir = a.corpus.clone().unwrap_or_else(|| data.join("corpus"));
    let corpus = Corpus::open(&corpus_dir)?;
    let channels = corpus.clip_dims()[3];
    let classes = corpus.vocabulary().len();
    let mut cfg: ClassifierTrainConfig = match (&a.config, a.preset, auxiliary) {
        (Some(p), _, _) => read_json(p)?,
        (None, Preset::Desk, false) => ClassifierTrainConfig::desk_word(channels, classes),
        (None, Preset::Desk, true) => ClassifierTrainConfig::desk_aux(channels, classes),
        (None, Preset::Paper, false) => ClassifierTrainConfig::paper_word(channels, classes),
        (None, Preset::Paper, true) => ClassifierTrainConfig::paper_aux(channels, classes),
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    cfg.validate()?;
    let default_name = if auxiliary { "aux" } else { "classifier" };
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| data.join(format!("{default_name}.vsck")));
    let metrics = a
        .metrics
        .clone()
        .unwrap_or_else(|| out.with_extension("metrics.csv"));
    let diag = parent_dir(&out)?;
    parent_dir(&metrics)?;
    remove_stale(&metrics)?;
    let mut sink = CsvMetrics::new(&metrics);
    let trained = if auxiliary {
        train_auxiliary_classifier(&corpus, &cfg, Some(&diag), &mut sink)?
    } else {
        pretrain_word_classifier(&corpus, &cfg, Some(&diag), &mut sink)?
    };
    trained.save(&out)?;
    let test = corpus.load_split(Split::Test)?;
    let test_accuracy = trained.accuracy(&test)?;
    let val_accuracy = trained.history.last().and_then(|e| e.val_accuracy);
    log::info!(
        "{default_name}: validation accuracy {val_accuracy:?}, test accuracy {test_accuracy:.4}"
    );
    Ok(Outcome {
        config: to_value(&cfg)?,
        seeds: BTreeMap::from([("train".into(), cfg.seed)]),
        inputs: vec![corpus_dir],
        outputs: vec![out.clone(), metrics],
        primary: (out, false),
        summary: json!({ "val_accuracy": val_accuracy, "test_accuracy": test_accuracy }),
    })
}

fn train(data: &Path, a: &TrainArgs) -> CliResult<Outcome> {
    let corpus_dir = a.corpus.clone().unwrap_or_else(|| data.join("corpus"));
    let cls_path = a
        .classifier
        .clone()
        .unwrap_or_else(|| data.join("classifier.vsck"));
    let corpus = Corpus::open(&corpus_dir)?;
    let classifier = TrainedClassifier::load(&cls_path)?;
    let file_cfg: Option<TrainConfig> = a.config.as_deref().map(read_json).transpose()?;
    let mode: Mode = match (a.mode, &file_cfg) {
        (Some(m), Some(c)) if Mode::from(m) != c.mode => {
            return Err(CliError::Usage(format!(
                "--mode {} contradicts the config file's mode {}",
                Mode::from(m),
                c.mode
            )));
        }
        (Some(m), _) => m.into(),
        (None, Some(c)) => c.mode,
        (None, None) => Mode::Vispgan,
    };
    let out_dir = a
        .out_dir
        .clone()
        .unwrap_or_else(|| data.join(format!("gan-{}", mode.name())));
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let last = GanRunOptions::last_checkpoint(&out_dir);
    let metrics = out_dir.join("metrics.csv");
    let state = if a.resume {
        let overrides = [
            a.config.is_some(),
            a.epochs.is_some(),
            a.decay_start_epoch.is_some(),
            a.seed.is_some(),
            a.learning_rate.is_some(),
            a.batch_size.is_some(),
            a.n_critic.is_some(),
        ];
        if overrides.iter().any(|&o| o) {
            return Err(CliError::Usage(
                "--resume takes its configuration from the checkpoint".into(),
            ));
        }
        let state = GanState::load(&last)?;
        if state.config.mode != mode {
            return Err(CliError::Usage(format!(
                "checkpoint {} was trained in {} mode",
                last.display(),
                state.config.mode
            )));
        }
        trim_csv_after(&metrics, state.generator_steps as f64)?;
        log::info!(
            "resuming {} after epoch {}",
            last.display(),
            state.epochs_done
        );
        state
    } else {
        if last.exists() {
            return Err(CliError::Usage(format!(
                "{} already holds a run; pass --resume or choose another --out-dir",
                out_dir.display()
            )));
        }
        let channels = corpus.clip_dims()[3];
        let (alphabet, vocab) = (corpus.alphabet().len(), corpus.vocabulary().len());
        let mut cfg = match (file_cfg, a.preset) {
            (Some(c), _) => c,
            (None, Preset::Desk) => TrainConfig::desk(mode, channels, alphabet, vocab),
            (None, Preset::Paper) => TrainConfig::paper(mode, channels, alphabet, vocab),
        };
        if let Some(v) = a.epochs {
            cfg.epochs = v;
            cfg.decay_start_epoch = v / 2;
        }
        if let Some(v) = a.decay_start_epoch {
            cfg.decay_start_epoch = v;
        }
        if let Some(v) = a.seed {
            cfg.seed = v;
        }
        if let Some(v) = a.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = a.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = a.n_critic {
            cfg.n_critic = v;
        }
        remove_stale(&metrics)?;
        GanState::for_corpus(cfg, &corpus, &classifier)?
    };
    let options = GanRunOptions {
        checkpoint_dir: Some(out_dir.clone()),
        stop_after_epochs: a.stop_after_epochs,
    };
    let mut sink = CsvMetrics::new(&metrics);
    let state = train_gan(&corpus, &classifier, state, &options, &mut sink)?;
    Ok(Outcome {
        config: to_value(&state.config)?,
        seeds: BTreeMap::from([("train".into(), state.config.seed)]),
        inputs: vec![corpus_dir, cls_path],
        outputs: vec![last, metrics],
        primary: (out_dir, true),
        summary: json!({
            "epochs_done": state.epochs_done,
            "critic_steps": state.critic_steps,
            "generator_steps": state.generator_steps,
        }),
    })
}

fn generate(data: &Path, a: &GenerateArgs) -> CliResult<Outcome> {
    let ckpt = a
        .checkpoint
        .clone()
        .unwrap_or_else(|| data.join("gan-vispgan").join("gan_last.vsck"));
    ensure_distinct(&[&ckpt, &a.input], &[&a.out])?;
    let g = TrainedGenerator::load(&ckpt)?;
    let clip = read_clip(&a.input)?;
    if clip.dims() != g.clip_dims {
        return Err(CliError::Usage(format!(
            "input clip is {:?}, the generator was trained on {:?}",
            clip.dims(),
            g.clip_dims
        )));
    }
    let target = g.vocabulary.index_of(&a.word).ok_or_else(|| {
        CliError::Usage(format!(
            "word {:?} is not in the vocabulary {:?}",
            a.word,
            g.vocabulary.words()
        ))
    })?;
    let fake = g.translate(&clip, target)?;
    parent_dir(&a.out)?;
    write_clip(&a.out, &fake, DType::F32)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(dir) = &a.export {
        outputs.extend(export_frames(&fake, dir, "frame")?);
    }
    let mut inputs = vec![ckpt, a.input.clone()];
    let mut summary = json!({ "target_word": a.word });
    if let Some(aux_path) = &a.aux {
        let aux = TrainedClassifier::load(aux_path)?;
        let predicted = aux.predict(&[&fake])?[0];
        let word = aux.vocabulary.word(predicted)?.to_string();
        log::info!("auxiliary classifier reads {word:?}");
        summary["aux_prediction"] = json!(word);
        inputs.push(aux_path.clone());
    }
    Ok(Outcome {
        config: json!({ "word": a.word, "mode": g.mode }),
        seeds: BTreeMap::new(),
        inputs,
        outputs,
        primary: (a.out.clone(), false),
        summary,
    })
}

fn evaluate(data: &Path, a: &EvaluateArgs) -> CliResult<Outcome> {
    let corpus_dir = a.corpus.clone().unwrap_or_else(|| data.join("corpus"));
    let aux_path = a.aux.clone().unwrap_or_else(|| data.join("aux.vsck"));
    let checkpoints: Vec<PathBuf> = if a.checkpoint.is_empty() {
        [Mode::Vispgan, Mode::Stargan3d]
            .iter()
            .map(|m| GanRunOptions::last_checkpoint(&data.join(format!("gan-{}", m.name()))))
            .filter(|p| p.exists())
            .collect()
    } else {
        a.checkpoint.clone()
    };
    if checkpoints.is_empty() {
        return Err(CliError::Usage(
            "no GAN checkpoint given and none found under the data directory".into(),
        ));
    }
    let mut protocol: FakeProtocol = match &a.config {
        Some(p) => read_json(p)?,
        None => FakeProtocol::desk(),
    };
    if let Some(v) = a.per_target {
        protocol.per_target = v;
    }
    if let Some(v) = a.seed {
        protocol.seed = v;
    }
    if let Some(v) = a.batch_size {
        protocol.batch_size = v;
    }
    let out = a.out.clone().unwrap_or_else(|| data.join("report.json"));
    let mut inputs = vec![corpus_dir.clone(), aux_path.clone()];
    inputs.extend(checkpoints.iter().cloned());
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    ensure_distinct(&input_refs, &[&out])?;

    let corpus = Corpus::open(&corpus_dir)?;
    let aux = TrainedClassifier::load(&aux_path)?;
    let test = corpus.load_split(Split::Test)?;
    let generators: Vec<(String, TrainedGenerator)> = checkpoints
        .iter()
        .map(|p| Ok((p.display().to_string(), TrainedGenerator::load(p)?)))
        .collect::<CliResult<_>>()?;
    let refs: Vec<(&str, &TrainedGenerator)> =
        generators.iter().map(|(n, g)| (n.as_str(), g)).collect();
    let report = evaluate_generators(&refs, &aux, &test, &protocol)?;
    let mut text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    text.push('\n');
    parent_dir(&out)?;
    write_atomic(&out, text.as_bytes())?;
    Ok(Outcome {
        config: to_value(&protocol)?,
        seeds: BTreeMap::from([("evaluate".into(), protocol.seed)]),
        inputs,
        outputs: vec![out.clone()],
        primary: (out, false),
        summary: json!({
            "identity_accuracy": report.identity_accuracy,
            "fid_noise": report.fid_noise,
            "models": report.models.iter().map(|m| json!({
                "checkpoint": m.checkpoint, "accuracy": m.accuracy, "fid": m.fid_mean,
            })).collect::<Vec<_>>(),
        }),
    })
}

fn blend(a: &BlendArgs) -> CliResult<Outcome> {
    ensure_distinct(&[&a.original, &a.generated, &a.regions], &[&a.out])?;
    let original = read_clip(&a.original)?;
    let generated = read_clip(&a.generated)?;
    let regions = RegionSidecar::read(&a.regions)?.regions()?;
    let out = blend_clip(&original, &generated, &regions, a.tol)?;
    parent_dir(&a.out)?;
    write_clip(&a.out, &out, DType::F32)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(dir) = &a.export {
        outputs.extend(export_frames(&out, dir, "frame")?);
    }
    Ok(Outcome {
        config: json!({ "tol": a.tol }),
        seeds: BTreeMap::new(),
        inputs: vec![a.original.clone(), a.generated.clone(), a.regions.clone()],
        outputs,
        primary: (a.out.clone(), false),
        summary: json!({ "blended_frames": regions.len() }),
    })
}

fn plot(data: &Path, a: &PlotArgs) -> CliResult<Outcome> {
    let log = MetricsLog::read_csv(&a.metrics)?;
    let columns = a.columns.clone().unwrap_or_else(|| default_columns(&log));
    let out_dir = a.out_dir.clone().unwrap_or_else(|| data.join("plots"));
    let mut outputs = plot_metrics(&log, &columns, &out_dir)?;
    let mut inputs = vec![a.metrics.clone()];
    if let Some(rp) = &a.report {
        let report = read_json(rp)?;
        let path = out_dir.join("evaluation.svg");
        plot_report(&report, &path)?;
        outputs.push(path);
        inputs.push(rp.clone());
    }
    Ok(Outcome {
        config: json!({ "columns": columns }),
        seeds: BTreeMap::new(),
        inputs,
        outputs,
        primary: (out_dir, true),
        summary: json!({ "rows": log.rows.len() }),
    })
}
