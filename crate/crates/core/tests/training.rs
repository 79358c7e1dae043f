use std::fs;
use std::path::{Path, PathBuf};

use vispgan::losses::Mode;
use vispgan::synthcorpus::{
    generate_corpus, plan_records, render_record, template_decode, Corpus, CorpusConfig,
    SplitCounts,
};
use vispgan::trainer::{
    params_fingerprint, pretrain_word_classifier, train_gan, ClassifierTrainConfig, GanRunOptions,
    GanState, MetricsLog, TrainConfig, TrainedClassifier,
};

fn tiny_corpus_config(seed: u64) -> CorpusConfig {
    let mut cfg = CorpusConfig::desk();
    cfg.words = ["bad", "idea", "lit"].map(String::from).to_vec();
    cfg.counts = SplitCounts {
        train_per_word: 8,
        gan_fraction: 0.5,
        val_per_word: 2,
        test_per_word: 2,
    };
    cfg.seed = seed;
    cfg
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn corpus_is_bit_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    generate_corpus(&tiny_corpus_config(5), &a).unwrap();
    generate_corpus(&tiny_corpus_config(5), &b).unwrap();
    generate_corpus(&tiny_corpus_config(6), &c).unwrap();
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), fb.len());
    assert!(fa.len() > 36);
    let mut differs = false;
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(&a).unwrap(), y.strip_prefix(&b).unwrap());
        assert_eq!(
            fs::read(x).unwrap(),
            fs::read(y).unwrap(),
            "{}",
            x.display()
        );
        let z = c.join(x.strip_prefix(&a).unwrap());
        differs |= z.exists() && fs::read(x).unwrap() != fs::read(&z).unwrap();
    }
    assert!(differs, "another seed gives other clips");
}

/// Nearest-template decoding accuracy on every clip of the desk plan.
fn oracle_accuracy(sigma: f32) -> f64 {
    let mut cfg = CorpusConfig::desk();
    cfg.render.noise_sigma = sigma;
    let (alphabet, vocab) = cfg.validate().unwrap();
    let records = plan_records(&cfg).unwrap();
    let correct = records
        .iter()
        .filter(|r| {
            let clip = render_record(&cfg, &alphabet, &vocab, r).unwrap();
            template_decode(&clip, &r.speaker, &alphabet, &vocab).unwrap() == r.word_index
        })
        .count();
    correct as f64 / records.len() as f64
}

#[test]
fn template_oracle_degrades_with_noise() {
    let acc: Vec<f64> = [0.0, 0.05, 0.1, 0.2]
        .into_iter()
        .map(oracle_accuracy)
        .collect();
    assert_eq!(acc[0], 1.0, "{acc:?}");
    assert!(acc.windows(2).all(|w| w[1] <= w[0]), "{acc:?}");
}

struct Fixture {
    _tmp: tempfile::TempDir,
    corpus: Corpus,
    classifier: TrainedClassifier,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("corpus");
    generate_corpus(&tiny_corpus_config(1), &root).unwrap();
    let corpus = Corpus::open(&root).unwrap();
    let mut cfg = ClassifierTrainConfig::desk_word(3, corpus.vocabulary().len());
    cfg.epochs = 1;
    cfg.batch_size = 4;
    let classifier =
        pretrain_word_classifier(&corpus, &cfg, None, &mut MetricsLog::default()).unwrap();
    Fixture {
        _tmp: tmp,
        corpus,
        classifier,
    }
}

/// Narrow networks, 2 epochs of 6 critic batches each.
fn small_config(f: &Fixture, mode: Mode) -> TrainConfig {
    let mut cfg = TrainConfig::desk(
        mode,
        3,
        f.corpus.alphabet().len(),
        f.corpus.vocabulary().len(),
    );
    cfg.generator.base_width = 2;
    cfg.generator.max_width = 4;
    cfg.generator.res_blocks = 1;
    cfg.critic.base_width = 2;
    cfg.critic.max_width = 4;
    cfg.batch_size = 2;
    cfg.epochs = 2;
    cfg.decay_start_epoch = 1;
    cfg.n_critic = 5;
    cfg
}

fn run(f: &Fixture, cfg: TrainConfig, options: &GanRunOptions) -> (GanState, MetricsLog) {
    let state = GanState::for_corpus(cfg, &f.corpus, &f.classifier).unwrap();
    let mut log = MetricsLog::default();
    let state = train_gan(&f.corpus, &f.classifier, state, options, &mut log).unwrap();
    (state, log)
}

#[test]
fn update_counts_frozen_classifier_and_resume() {
    let f = fixture();
    let before = f.classifier.params.clone();
    let fingerprint = params_fingerprint(&f.classifier.params);

    let (full, full_log) = run(
        &f,
        small_config(&f, Mode::Vispgan),
        &GanRunOptions::default(),
    );
    // 12 gan-train clips in batches of 2 over 2 epochs
    assert_eq!(full.critic_steps, 12);
    assert_eq!(full.generator_steps, 12 / 5);
    assert_eq!(full.g_opt.steps(), full.generator_steps);
    assert_eq!(full.d_opt.steps(), full.critic_steps);
    assert_eq!(
        full.inspector.as_ref().unwrap().opt.steps(),
        full.critic_steps
    );
    assert_eq!(full_log.rows.len() as u64, full.generator_steps);
    assert!(f.classifier.params.bit_equal(&before));
    assert_eq!(params_fingerprint(&f.classifier.params), fingerprint);

    // interrupted after one epoch, reloaded from disk, then continued
    let dir = tempfile::tempdir().unwrap();
    let opts = GanRunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        stop_after_epochs: Some(1),
    };
    let (half, mut log) = run(&f, small_config(&f, Mode::Vispgan), &opts);
    assert_eq!(half.epochs_done, 1);
    let reloaded = GanState::load(&GanRunOptions::last_checkpoint(dir.path())).unwrap();
    assert!(reloaded.bit_equal(&half));
    let resumed = train_gan(
        &f.corpus,
        &f.classifier,
        reloaded,
        &GanRunOptions::default(),
        &mut log,
    )
    .unwrap();
    assert!(resumed.bit_equal(&full), "resumed run diverged");
    assert_eq!(log.to_csv(), full_log.to_csv());

    // a second uninterrupted run logs the same numbers
    let (_, again) = run(
        &f,
        small_config(&f, Mode::Vispgan),
        &GanRunOptions::default(),
    );
    assert_eq!(again.to_csv(), full_log.to_csv());

    let (base, base_log) = run(
        &f,
        small_config(&f, Mode::Stargan3d),
        &GanRunOptions::default(),
    );
    assert!(base.inspector.is_none());
    assert_eq!(base.generator_steps, 2);
    assert!(!base_log.columns.iter().any(|c| c.contains("insp")));
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let f = fixture();
    let state =
        GanState::for_corpus(small_config(&f, Mode::Vispgan), &f.corpus, &f.classifier).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.vsck");
    state.save(&path).unwrap();
    assert!(GanState::load(&path).unwrap().bit_equal(&state));
    let cls = dir.path().join("c.vsck");
    f.classifier.save(&cls).unwrap();
    let back = TrainedClassifier::load(&cls).unwrap();
    assert!(back.params.bit_equal(&f.classifier.params));
    assert_eq!(back.vocabulary, f.classifier.vocabulary);
    // the checkpoint kind is checked on load
    assert!(GanState::load(&cls).is_err());
}
