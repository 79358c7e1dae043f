use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{params_fingerprint, Checkpoint};
use super::classifier::TrainedClassifier;
use super::metrics::{gan_columns, MetricsSink};
use super::{epoch_order, lr_schedule_linear, TAG_CRITIC, TAG_GENERATOR, TAG_INIT};
use crate::chargrid::{
    char_indicator, expand_vocabulary_word, Alphabet, CharIndicator, Conditioning, WordVocabulary,
};
use crate::clip::{clips_to_tensor, tensor_to_clips, VideoClip};
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_terms, classification_loss, critic_objectives, cycle_loss, feature_matching_loss,
    generator_adversarial_loss, generator_objective, indicator_targets, inspector_loss,
    CriticTerms, GeneratorTerms, LossWeights, Mode,
};
use crate::nets::{CriticConfig, Discriminator, Generator, GeneratorConfig, Inspector, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::rng;
use crate::synthcorpus::{horizontal_flip, Corpus, LabeledClip, Split};
use crate::tensor::{self, Tensor};

pub const GAN_KIND: &str = "gan";
const LAST_CHECKPOINT: &str = "gan_last.vsck";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub beta1: f64,
    pub beta2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// First epoch of the linear decay to zero.
    pub decay_start_epoch: usize,
    /// Critic (and inspector) updates per generator update.
    pub n_critic: usize,
    pub weights: LossWeights,
    pub flip_augment: bool,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
}

impl TrainConfig {
    /// Label channels are the alphabet size in character mode and the
    /// vocabulary size in word mode.
    pub fn paper(mode: Mode, channels: usize, alphabet_size: usize, vocab_size: usize) -> Self {
        let labels = match mode {
            Mode::Vispgan => alphabet_size,
            Mode::Stargan3d => vocab_size,
        };
        TrainConfig {
            mode,
            beta1: 0.5,
            beta2: 0.999,
            learning_rate: 1e-4,
            batch_size: 8,
            epochs: 20,
            decay_start_epoch: 10,
            n_critic: 5,
            weights: LossWeights::default(),
            flip_augment: true,
            seed: 0,
            generator: GeneratorConfig::paper(channels, labels),
            critic: CriticConfig::paper(channels),
        }
    }

    pub fn desk(mode: Mode, channels: usize, alphabet_size: usize, vocab_size: usize) -> Self {
        let p = Self::paper(mode, channels, alphabet_size, vocab_size);
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            flip_augment: false,
            generator: GeneratorConfig::desk(channels, p.generator.label_channels),
            critic: CriticConfig::desk(channels),
            ..p
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        self.weights.validate()?;
        self.generator.validate()?;
        self.critic.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.n_critic == 0 {
            return Err(Error::invalid("batch size and n_critic must be at least 1"));
        }
        if self.decay_start_epoch >= self.epochs {
            return Err(Error::invalid(format!(
                "decay start epoch {} must be below the epoch count {}",
                self.decay_start_epoch, self.epochs
            )));
        }
        if self.generator.video_channels != self.critic.in_channels {
            return Err(Error::invalid(
                "generator and critic disagree on video channels",
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    fn check_corpus(
        &self,
        alphabet: &Alphabet,
        vocab: &WordVocabulary,
        dims: [usize; 4],
    ) -> Result<()> {
        let labels = match self.mode {
            Mode::Vispgan => alphabet.len(),
            Mode::Stargan3d => vocab.len(),
        };
        if self.generator.label_channels != labels {
            return Err(Error::invalid(format!(
                "{} mode needs {labels} label channels, generator config has {}",
                self.mode, self.generator.label_channels
            )));
        }
        if self.generator.video_channels != dims[3] {
            return Err(Error::invalid(format!(
                "generator takes {} channels, clips have {}",
                self.generator.video_channels, dims[3]
            )));
        }
        self.generator.check_dims([dims[0], dims[1], dims[2]])?;
        self.critic.trunk_dims([dims[0], dims[1], dims[2]])?;
        Ok(())
    }
}

/// Target conditioning for a batch of word labels.
fn conditioning(
    mode: Mode,
    targets: &[usize],
    frames: usize,
    alphabet: &Alphabet,
    vocab: &WordVocabulary,
) -> Result<Conditioning> {
    match mode {
        Mode::Vispgan => Ok(Conditioning::Characters(
            targets
                .iter()
                .map(|&w| expand_vocabulary_word(vocab, w, frames, alphabet))
                .collect::<Result<_>>()?,
        )),
        Mode::Stargan3d => {
            if let Some(&bad) = targets.iter().find(|&&w| w >= vocab.len()) {
                return Err(Error::IndexOutOfRange {
                    index: bad,
                    size: vocab.len(),
                });
            }
            Ok(Conditioning::Words {
                indices: targets.to_vec(),
                vocab_size: vocab.len(),
            })
        }
    }
}

#[derive(Clone, Debug)]
pub struct InspectorState {
    pub net: Inspector,
    pub params: ParamStore<f64>,
    pub opt: Adam<f64>,
}

/// Everything needed to continue adversarial training bit-exactly. Random
/// streams are derived from the seed and the step counters, so no generator
/// state is stored.
#[derive(Clone, Debug)]
pub struct GanState {
    pub config: TrainConfig,
    pub alphabet: Alphabet,
    pub vocabulary: WordVocabulary,
    pub clip_dims: [usize; 4],
    /// Fingerprint of the frozen word classifier this run depends on.
    pub classifier: String,
    pub epochs_done: usize,
    pub critic_steps: u64,
    pub generator_steps: u64,
    pub critic_window: CriticWindow,
    pub generator: Generator,
    pub g_params: ParamStore<f64>,
    pub g_opt: Adam<f64>,
    pub critic: Discriminator,
    pub d_params: ParamStore<f64>,
    pub d_opt: Adam<f64>,
    pub inspector: Option<InspectorState>,
}

#[derive(Serialize, Deserialize)]
struct GanMeta {
    config: TrainConfig,
    alphabet: Alphabet,
    vocabulary: WordVocabulary,
    clip_dims: [usize; 4],
    classifier: String,
    epochs_done: usize,
    critic_steps: u64,
    generator_steps: u64,
    #[serde(default)]
    critic_window: CriticWindow,
}

impl GanState {
    /// Fresh networks for `config`, initialized from its seed.
    pub fn new(
        config: TrainConfig,
        alphabet: Alphabet,
        vocabulary: WordVocabulary,
        clip_dims: [usize; 4],
        classifier: &TrainedClassifier,
    ) -> Result<Self> {
        config.validate()?;
        config.check_corpus(&alphabet, &vocabulary, clip_dims)?;
        let seed = config.seed;
        let mut g_params = ParamStore::new();
        let generator = Generator::new(
            config.generator.clone(),
            &mut g_params,
            &mut rng::stream(seed, &[TAG_INIT, 0]),
        )?;
        let mut d_params = ParamStore::new();
        let critic = Discriminator::new(
            config.critic.clone(),
            &mut d_params,
            &mut rng::stream(seed, &[TAG_INIT, 1]),
        )?;
        let inspector = if config.mode.uses_inspector() {
            let mut params = ParamStore::new();
            let net = Inspector::new(
                config.critic.clone(),
                alphabet.len(),
                [clip_dims[0], clip_dims[1], clip_dims[2]],
                &mut params,
                &mut rng::stream(seed, &[TAG_INIT, 2]),
            )?;
            let opt = Adam::new(config.adam(), &params);
            Some(InspectorState { net, params, opt })
        } else {
            None
        };
        Ok(GanState {
            g_opt: Adam::new(config.adam(), &g_params),
            d_opt: Adam::new(config.adam(), &d_params),
            classifier: params_fingerprint(&classifier.params),
            config,
            alphabet,
            vocabulary,
            clip_dims,
            epochs_done: 0,
            critic_steps: 0,
            generator_steps: 0,
            critic_window: CriticWindow::default(),
            generator,
            g_params,
            critic,
            d_params,
            inspector,
        })
    }

    pub fn for_corpus(
        config: TrainConfig,
        corpus: &Corpus,
        classifier: &TrainedClassifier,
    ) -> Result<Self> {
        Self::new(
            config,
            corpus.alphabet().clone(),
            corpus.vocabulary().clone(),
            corpus.clip_dims(),
            classifier,
        )
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = GanMeta {
            config: self.config.clone(),
            alphabet: self.alphabet.clone(),
            vocabulary: self.vocabulary.clone(),
            clip_dims: self.clip_dims,
            classifier: self.classifier.clone(),
            epochs_done: self.epochs_done,
            critic_steps: self.critic_steps,
            generator_steps: self.generator_steps,
            critic_window: self.critic_window,
        };
        let mut ck = Checkpoint::new(GAN_KIND, serde_json::to_value(meta)?);
        ck.push_params("g", &self.g_params);
        ck.push_params("d", &self.d_params);
        ck.push_optimizer("g_opt", &self.g_opt);
        ck.push_optimizer("d_opt", &self.d_opt);
        if let Some(insp) = &self.inspector {
            ck.push_params("insp", &insp.params);
            ck.push_optimizer("insp_opt", &insp.opt);
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn from_checkpoint(ck: &Checkpoint, origin: &Path) -> Result<Self> {
        if ck.kind != GAN_KIND {
            return Err(Error::format(
                origin,
                format!("expected a {GAN_KIND} checkpoint, found {}", ck.kind),
            ));
        }
        let meta: GanMeta = ck.meta_as(origin)?;
        let mut state = GanState::new_unchecked(&meta)?;
        ck.load_params("g", &mut state.g_params)?;
        ck.load_params("d", &mut state.d_params)?;
        // Adam steps equal the update counts of each network.
        ck.load_optimizer("g_opt", &mut state.g_opt, meta.generator_steps)?;
        ck.load_optimizer("d_opt", &mut state.d_opt, meta.critic_steps)?;
        if let Some(insp) = &mut state.inspector {
            ck.load_params("insp", &mut insp.params)?;
            ck.load_optimizer("insp_opt", &mut insp.opt, meta.critic_steps)?;
        }
        state.epochs_done = meta.epochs_done;
        state.critic_steps = meta.critic_steps;
        state.generator_steps = meta.generator_steps;
        state.critic_window = meta.critic_window;
        Ok(state)
    }

    fn new_unchecked(meta: &GanMeta) -> Result<Self> {
        let config = meta.config.clone();
        config.validate()?;
        let mut g_params = ParamStore::new();
        let generator = Generator::new(
            config.generator.clone(),
            &mut g_params,
            &mut rng::stream(0, &[]),
        )?;
        let mut d_params = ParamStore::new();
        let critic = Discriminator::new(
            config.critic.clone(),
            &mut d_params,
            &mut rng::stream(0, &[]),
        )?;
        let inspector = if config.mode.uses_inspector() {
            let mut params = ParamStore::new();
            let dims = meta.clip_dims;
            let net = Inspector::new(
                config.critic.clone(),
                meta.alphabet.len(),
                [dims[0], dims[1], dims[2]],
                &mut params,
                &mut rng::stream(0, &[]),
            )?;
            let opt = Adam::new(config.adam(), &params);
            Some(InspectorState { net, params, opt })
        } else {
            None
        };
        Ok(GanState {
            g_opt: Adam::new(config.adam(), &g_params),
            d_opt: Adam::new(config.adam(), &d_params),
            config,
            alphabet: meta.alphabet.clone(),
            vocabulary: meta.vocabulary.clone(),
            clip_dims: meta.clip_dims,
            classifier: meta.classifier.clone(),
            epochs_done: 0,
            critic_steps: 0,
            generator_steps: 0,
            critic_window: CriticWindow::default(),
            generator,
            g_params,
            critic,
            d_params,
            inspector,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }

    /// Bitwise equality of counters, parameters, and optimizer moments.
    pub fn bit_equal(&self, other: &Self) -> bool {
        let insp = match (&self.inspector, &other.inspector) {
            (None, None) => true,
            (Some(a), Some(b)) => a.params.bit_equal(&b.params) && a.opt.bit_equal(&b.opt),
            _ => false,
        };
        self.epochs_done == other.epochs_done
            && self.critic_steps == other.critic_steps
            && self.generator_steps == other.generator_steps
            && self.critic_window.n == other.critic_window.n
            && self.critic_window.sums.map(f64::to_bits)
                == other.critic_window.sums.map(f64::to_bits)
            && self.g_params.bit_equal(&other.g_params)
            && self.g_opt.bit_equal(&other.g_opt)
            && self.d_params.bit_equal(&other.d_params)
            && self.d_opt.bit_equal(&other.d_opt)
            && insp
    }

    pub fn trained_generator(&self) -> TrainedGenerator {
        TrainedGenerator {
            mode: self.config.mode,
            net: self.generator.clone(),
            params: self.g_params.frozen(),
            alphabet: self.alphabet.clone(),
            vocabulary: self.vocabulary.clone(),
            clip_dims: self.clip_dims,
        }
    }
}

/// Inference-only generator with the labels it was trained on.
#[derive(Clone, Debug)]
pub struct TrainedGenerator {
    pub mode: Mode,
    pub net: Generator,
    pub params: ParamStore<f64>,
    pub alphabet: Alphabet,
    pub vocabulary: WordVocabulary,
    pub clip_dims: [usize; 4],
}

impl TrainedGenerator {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(GanState::load(path)?.trained_generator())
    }

    /// Translates each clip to the paired target word.
    pub fn translate_batch(
        &self,
        clips: &[&VideoClip],
        targets: &[usize],
    ) -> Result<Vec<VideoClip>> {
        if clips.len() != targets.len() {
            return Err(Error::shape(format!(
                "{} clips for {} targets",
                clips.len(),
                targets.len()
            )));
        }
        if let Some(c) = clips.iter().find(|c| c.dims() != self.clip_dims) {
            return Err(Error::shape(format!(
                "generator expects clips {:?}, got {:?}",
                self.clip_dims,
                c.dims()
            )));
        }
        let cond = conditioning(
            self.mode,
            targets,
            self.clip_dims[0],
            &self.alphabet,
            &self.vocabulary,
        )?;
        tensor::no_grad(|| {
            let x = clips_to_tensor::<f64>(clips)?;
            tensor_to_clips(&self.net.forward(&self.params, &x, &cond)?)
        })
    }

    pub fn translate(&self, clip: &VideoClip, target: usize) -> Result<VideoClip> {
        Ok(self.translate_batch(&[clip], &[target])?.remove(0))
    }
}

#[derive(Clone, Debug, Default)]
pub struct GanRunOptions {
    /// Directory for the per-epoch checkpoint; nothing is written when unset.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop once this many epochs are complete (counting resumed ones).
    pub stop_after_epochs: Option<usize>,
}

impl GanRunOptions {
    pub fn last_checkpoint(dir: &Path) -> PathBuf {
        dir.join(LAST_CHECKPOINT)
    }
}

/// Running sums of the critic-side metrics since the last generator step.
/// Part of the resumable state: a checkpoint can fall inside a window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CriticWindow {
    pub n: usize,
    pub sums: [f64; 4],
}

impl CriticWindow {
    fn add(&mut self, v: [f64; 4]) {
        self.n += 1;
        for (s, x) in self.sums.iter_mut().zip(v) {
            *s += x;
        }
    }

    fn take(&mut self) -> [f64; 4] {
        let n = self.n.max(1) as f64;
        let out = self.sums.map(|s| s / n);
        *self = Self::default();
        out
    }
}

fn finite(value: f64, what: &str, step: u64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            what: what.into(),
            step,
        })
    }
}

fn param_refs(ps: &ParamStore<f64>) -> Vec<&Tensor<f64>> {
    ps.values().iter().collect()
}

struct Batch {
    x: Tensor<f64>,
    sources: Vec<usize>,
    targets: Vec<usize>,
}

/// Runs the adversarial schedule from `state` to the configured epoch count.
///
/// Each critic step draws a batch of `gan-train` clips and uniform target
/// words, generates one fake batch, and updates the critic (and the
/// inspector in character mode). After every `n_critic` critic steps the
/// generator is updated on the same batch. The word classifier is only
/// read. A metrics row is written per generator step and a checkpoint per
/// epoch. A non-finite loss aborts, leaving the last epoch's checkpoint.
pub fn train_gan(
    corpus: &Corpus,
    classifier: &TrainedClassifier,
    mut state: GanState,
    options: &GanRunOptions,
    sink: &mut dyn MetricsSink,
) -> Result<GanState> {
    let cfg = state.config.clone();
    if corpus.vocabulary() != &state.vocabulary
        || corpus.alphabet() != &state.alphabet
        || corpus.clip_dims() != state.clip_dims
    {
        return Err(Error::invalid(
            "corpus labels or clip dims differ from the training state",
        ));
    }
    if classifier.vocabulary != state.vocabulary || classifier.clip_dims != state.clip_dims {
        return Err(Error::invalid(
            "word classifier was trained on a different vocabulary or clip size",
        ));
    }
    if params_fingerprint(&classifier.params) != state.classifier {
        return Err(Error::invalid(
            "word classifier differs from the one this run started with",
        ));
    }
    let train = corpus.load_split(Split::GanTrain)?;
    let batches = train.len() / cfg.batch_size;
    if batches == 0 {
        return Err(Error::invalid(format!(
            "gan-train has {} clips, fewer than one batch of {}",
            train.len(),
            cfg.batch_size
        )));
    }
    let nl = state.vocabulary.len();
    let mut by_word: Vec<Vec<usize>> = vec![Vec::new(); nl];
    for (i, c) in train.iter().enumerate() {
        by_word[c.word_index].push(i);
    }
    if cfg.mode.uses_inspector() {
        if let Some(w) = by_word.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!(
                "word {:?} has no gan-train clip to serve as a feature-matching reference",
                state.vocabulary.word(w)?
            )));
        }
    }
    let indicators: Vec<CharIndicator> = state
        .vocabulary
        .words()
        .iter()
        .map(|w| char_indicator(w, &state.alphabet))
        .collect::<Result<_>>()?;

    sink.header(&gan_columns(cfg.mode))?;
    if let Some(dir) = &options.checkpoint_dir {
        if state.epochs_done == 0 {
            state.save(&GanRunOptions::last_checkpoint(dir))?;
        }
    }
    let end = options
        .stop_after_epochs
        .map_or(cfg.epochs, |s| s.min(cfg.epochs));
    for epoch in state.epochs_done..end {
        let lr = lr_schedule_linear(cfg.learning_rate, epoch, cfg.epochs, cfg.decay_start_epoch);
        let order = epoch_order(cfg.seed, epoch, train.len());
        for b in 0..batches {
            let idx = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
            let batch = draw_batch(&state, &train, idx)?;
            let critic_values = critic_step(&mut state, &batch, &indicators, lr)?;
            state.critic_window.add(critic_values);
            state.critic_steps += 1;
            if state.critic_steps.is_multiple_of(cfg.n_critic as u64) {
                let g_values = generator_step(
                    &mut state,
                    classifier,
                    &train,
                    &by_word,
                    &indicators,
                    &batch,
                    lr,
                )?;
                state.generator_steps += 1;
                let [d_loss, gap, gp, insp_real] = state.critic_window.take();
                let mut row = vec![
                    state.generator_steps as f64,
                    epoch as f64 + 1.0,
                    lr,
                    d_loss,
                    gap,
                    gp,
                ];
                if cfg.mode.uses_inspector() {
                    row.push(insp_real);
                }
                row.extend(g_values);
                sink.row(&row)?;
            }
        }
        state.epochs_done = epoch + 1;
        log::info!(
            "{} epoch {}/{}: {} critic steps, {} generator steps, lr {lr:.3e}",
            cfg.mode,
            epoch + 1,
            cfg.epochs,
            state.critic_steps,
            state.generator_steps
        );
        if let Some(dir) = &options.checkpoint_dir {
            state.save(&GanRunOptions::last_checkpoint(dir))?;
        }
    }
    Ok(state)
}

fn draw_batch(state: &GanState, train: &[LabeledClip], idx: &[usize]) -> Result<Batch> {
    let cfg = &state.config;
    let mut r = rng::stream(cfg.seed, &[TAG_CRITIC, state.critic_steps]);
    let targets: Vec<usize> = idx
        .iter()
        .map(|_| r.random_range(0..state.vocabulary.len()))
        .collect();
    let flipped: Vec<VideoClip>;
    let clips: Vec<&VideoClip> = if cfg.flip_augment {
        flipped = idx
            .iter()
            .map(|&i| {
                if r.random_bool(0.5) {
                    horizontal_flip(&train[i].clip)
                } else {
                    train[i].clip.clone()
                }
            })
            .collect();
        flipped.iter().collect()
    } else {
        idx.iter().map(|&i| &train[i].clip).collect()
    };
    Ok(Batch {
        x: clips_to_tensor(&clips)?,
        sources: idx.iter().map(|&i| train[i].word_index).collect(),
        targets,
    })
}

/// One joint critic/inspector update; returns `[L_D, gap, GP, L_insp_real]`.
fn critic_step(
    state: &mut GanState,
    batch: &Batch,
    indicators: &[CharIndicator],
    lr: f64,
) -> Result<[f64; 4]> {
    let cfg = &state.config;
    let step = state.critic_steps;
    let frames = state.clip_dims[0];
    let mut r = rng::stream(cfg.seed, &[TAG_CRITIC, step, 1]);
    let alpha: Vec<f64> = batch.targets.iter().map(|_| r.random::<f64>()).collect();
    let cond = conditioning(
        cfg.mode,
        &batch.targets,
        frames,
        &state.alphabet,
        &state.vocabulary,
    )?;
    let fake = tensor::no_grad(|| state.generator.forward(&state.g_params, &batch.x, &cond))?;

    let (d, dp) = (&state.critic, &state.d_params);
    let critic = |v: &Tensor<f64>| d.forward(dp, v);
    let terms = adversarial_terms(&critic, &batch.x, &fake, &alpha, cfg.weights.gp)?;
    let insp_real = match &state.inspector {
        Some(insp) => {
            let z: Vec<CharIndicator> = batch
                .sources
                .iter()
                .map(|&w| indicators[w].clone())
                .collect();
            Some(inspector_loss(
                &insp.net.forward(&insp.params, &batch.x)?,
                &indicator_targets(&z),
            )?)
        }
        None => None,
    };
    let objectives = critic_objectives(
        &CriticTerms {
            adv: terms.critic_loss.neg(),
            cls_real: None,
            insp_real,
        },
        cfg.mode,
    )?;
    let d_loss = finite(objectives.critic.item(), "critic loss", step)?;
    let grads = tensor::grad(&objectives.critic, &param_refs(&state.d_params), false);
    state.d_opt.step(&mut state.d_params, &grads, lr);
    let mut insp_value = 0.0;
    if let (Some(insp), Some(loss)) = (&mut state.inspector, &objectives.inspector) {
        insp_value = finite(loss.item(), "inspector loss", step)?;
        let grads = tensor::grad(loss, &param_refs(&insp.params), false);
        insp.opt.step(&mut insp.params, &grads, lr);
    }
    Ok([d_loss, terms.gap.item(), terms.penalty.item(), insp_value])
}

/// One generator update; returns the logged generator terms in column order.
fn generator_step(
    state: &mut GanState,
    classifier: &TrainedClassifier,
    train: &[LabeledClip],
    by_word: &[Vec<usize>],
    indicators: &[CharIndicator],
    batch: &Batch,
    lr: f64,
) -> Result<Vec<f64>> {
    let cfg = &state.config;
    let step = state.generator_steps;
    let frames = state.clip_dims[0];
    let cond_target = conditioning(
        cfg.mode,
        &batch.targets,
        frames,
        &state.alphabet,
        &state.vocabulary,
    )?;
    let cond_source = conditioning(
        cfg.mode,
        &batch.sources,
        frames,
        &state.alphabet,
        &state.vocabulary,
    )?;
    let g = &state.generator;
    let fake = g.forward(&state.g_params, &batch.x, &cond_target)?;
    let rec = g.forward(&state.g_params, &fake, &cond_source)?;
    let d_frozen = state.d_params.frozen();
    let adv = generator_adversarial_loss(&state.critic.forward(&d_frozen, &fake)?)?;
    let out = classifier.net.forward(&classifier.params, &fake)?;
    let cls_fake = classification_loss(&out.probs, &batch.targets)?;
    let cyc = cycle_loss(&rec, &batch.x)?;
    let (insp_fake, fm) = match &state.inspector {
        Some(insp) => {
            let z: Vec<CharIndicator> = batch
                .targets
                .iter()
                .map(|&w| indicators[w].clone())
                .collect();
            let probs = insp.net.forward(&insp.params.frozen(), &fake)?;
            let insp_fake = inspector_loss(&probs, &indicator_targets(&z))?;
            let mut r = rng::stream(cfg.seed, &[TAG_GENERATOR, step]);
            let refs: Vec<&VideoClip> = batch
                .targets
                .iter()
                .map(|&w| &train[by_word[w][r.random_range(0..by_word[w].len())]].clip)
                .collect();
            let ref_x = clips_to_tensor::<f64>(&refs)?;
            let ref_features =
                tensor::no_grad(|| classifier.net.features(&classifier.params, &ref_x))?;
            let fm = feature_matching_loss(&out.features, &ref_features)?;
            (Some(insp_fake), Some(fm))
        }
        None => (None, None),
    };
    let terms = GeneratorTerms {
        adv,
        cls_fake,
        cyc,
        insp_fake,
        fm,
    };
    let objective = generator_objective(&terms, &cfg.weights, cfg.mode)?;
    let g_loss = finite(objective.item(), "generator loss", step)?;
    let grads = tensor::grad(&objective, &param_refs(&state.g_params), false);
    state.g_opt.step(&mut state.g_params, &grads, lr);
    let mut values = vec![
        g_loss,
        terms.adv.item(),
        terms.cls_fake.item(),
        terms.cyc.item(),
    ];
    if let (Some(i), Some(f)) = (&terms.insp_fake, &terms.fm) {
        values.extend([i.item(), f.item()]);
    }
    Ok(values)
}
