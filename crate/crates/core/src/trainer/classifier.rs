use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::metrics::{classifier_columns, MetricsSink};
use super::{epoch_order, lr_schedule_exponential, TAG_CRITIC, TAG_INIT};
use crate::chargrid::WordVocabulary;
use crate::clip::{clips_to_tensor, VideoClip};
use crate::error::{Error, Result};
use crate::losses::classification_loss;
use crate::nets::{Classifier, ClassifierConfig, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::rng;
use crate::synthcorpus::{horizontal_flip, Corpus, LabeledClip, Split};
use crate::tensor::{self, Tensor};

pub const CLASSIFIER_KIND: &str = "classifier";

const INFER_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub network: ClassifierConfig,
    pub beta1: f64,
    pub beta2: f64,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    /// L2 coefficient on all weights.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub flip_augment: bool,
    pub seed: u64,
}

impl ClassifierTrainConfig {
    fn with_network(network: ClassifierConfig) -> Self {
        ClassifierTrainConfig {
            network,
            beta1: 0.5,
            beta2: 0.999,
            learning_rate: 1e-4,
            lr_decay: 0.9,
            weight_decay: 2e-4,
            batch_size: 16,
            epochs: 20,
            flip_augment: true,
            seed: 0,
        }
    }

    pub fn paper_word(channels: usize, classes: usize) -> Self {
        Self::with_network(ClassifierConfig::paper_word(channels, classes))
    }

    pub fn paper_aux(channels: usize, classes: usize) -> Self {
        Self::with_network(ClassifierConfig::paper_aux(channels, classes))
    }

    /// Small networks converge within ten epochs at a higher rate.
    pub fn desk_word(channels: usize, classes: usize) -> Self {
        ClassifierTrainConfig {
            learning_rate: 2e-3,
            epochs: 10,
            flip_augment: false,
            ..Self::with_network(ClassifierConfig::desk_word(channels, classes))
        }
    }

    pub fn desk_aux(channels: usize, classes: usize) -> Self {
        ClassifierTrainConfig {
            learning_rate: 2e-3,
            epochs: 10,
            flip_augment: false,
            ..Self::with_network(ClassifierConfig::desk_aux(channels, classes))
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.adam().validate()?;
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.lr_decay > 0.0
            && self.lr_decay <= 1.0
            && self.batch_size >= 1
            && self.epochs >= 1;
        if !ok {
            return Err(Error::invalid(format!(
                "classifier training needs positive rates, decay in (0, 1], batch and epochs >= 1 (lr {}, decay {}, batch {}, epochs {})",
                self.learning_rate, self.lr_decay, self.batch_size, self.epochs
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ClassifierMeta {
    config: ClassifierTrainConfig,
    vocabulary: WordVocabulary,
    clip_dims: [usize; 4],
    history: Vec<ClassifierEpoch>,
}

/// A trained word classifier with frozen parameters.
#[derive(Clone, Debug)]
pub struct TrainedClassifier {
    pub config: ClassifierTrainConfig,
    pub net: Classifier,
    pub params: ParamStore<f64>,
    pub vocabulary: WordVocabulary,
    pub clip_dims: [usize; 4],
    pub history: Vec<ClassifierEpoch>,
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    t.data().chunks(t.dim(1)).map(<[f64]>::to_vec).collect()
}

impl TrainedClassifier {
    fn check_clips(&self, clips: &[&VideoClip]) -> Result<()> {
        if let Some(c) = clips.iter().find(|c| c.dims() != self.clip_dims) {
            return Err(Error::shape(format!(
                "classifier expects clips {:?}, got {:?}",
                self.clip_dims,
                c.dims()
            )));
        }
        Ok(())
    }

    fn map_batches(
        &self,
        clips: &[&VideoClip],
        f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>> + Sync,
    ) -> Result<Vec<Vec<f64>>> {
        self.check_clips(clips)?;
        let parts: Vec<Vec<Vec<f64>>> = clips
            .par_chunks(INFER_BATCH)
            .map(|chunk| tensor::no_grad(|| Ok(rows(&f(&clips_to_tensor(chunk)?)?))))
            .collect::<Result<_>>()?;
        Ok(parts.into_iter().flatten().collect())
    }

    /// Word probabilities per clip.
    pub fn probabilities(&self, clips: &[&VideoClip]) -> Result<Vec<Vec<f64>>> {
        self.map_batches(clips, |x| Ok(self.net.forward(&self.params, x)?.probs))
    }

    pub fn predict(&self, clips: &[&VideoClip]) -> Result<Vec<usize>> {
        Ok(self
            .probabilities(clips)?
            .iter()
            .map(|p| argmax(p))
            .collect())
    }

    /// Final recurrent state per clip.
    pub fn features(&self, clips: &[&VideoClip]) -> Result<Vec<Vec<f64>>> {
        self.map_batches(clips, |x| self.net.features(&self.params, x))
    }

    pub fn accuracy(&self, clips: &[LabeledClip]) -> Result<f64> {
        if clips.is_empty() {
            return Err(Error::invalid("accuracy over an empty clip set"));
        }
        let refs: Vec<&VideoClip> = clips.iter().map(|c| &c.clip).collect();
        let pred = self.predict(&refs)?;
        let hits = pred
            .iter()
            .zip(clips)
            .filter(|(p, c)| **p == c.word_index)
            .count();
        Ok(hits as f64 / clips.len() as f64)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = ClassifierMeta {
            config: self.config.clone(),
            vocabulary: self.vocabulary.clone(),
            clip_dims: self.clip_dims,
            history: self.history.clone(),
        };
        let mut ck = Checkpoint::new(CLASSIFIER_KIND, serde_json::to_value(meta)?);
        ck.push_params("net", &self.params);
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load_kind(path, CLASSIFIER_KIND)?;
        let meta: ClassifierMeta = ck.meta_as(path)?;
        let mut params = ParamStore::new();
        let net = Classifier::new(
            meta.config.network.clone(),
            &mut params,
            &mut rng::stream(0, &[]),
        )?;
        ck.load_params("net", &mut params)?;
        Ok(TrainedClassifier {
            config: meta.config,
            net,
            params: params.frozen(),
            vocabulary: meta.vocabulary,
            clip_dims: meta.clip_dims,
            history: meta.history,
        })
    }
}

fn check_labels(clips: &[LabeledClip], classes: usize, dims: [usize; 4]) -> Result<()> {
    for c in clips {
        if c.word_index >= classes {
            return Err(Error::IndexOutOfRange {
                index: c.word_index,
                size: classes,
            });
        }
        if c.clip.dims() != dims {
            return Err(Error::shape(format!(
                "clip {} has dims {:?}, expected {dims:?}",
                c.clip_id,
                c.clip.dims()
            )));
        }
    }
    Ok(())
}

/// Minimizes word cross-entropy plus L2 weight decay with Adam, decaying
/// the learning rate once per epoch. One metrics row per epoch.
///
/// A non-finite loss aborts; with `diagnostic_dir` set, the parameters from
/// before the failing step are written there first.
pub fn train_classifier(
    train: &[LabeledClip],
    val: Option<&[LabeledClip]>,
    vocabulary: &WordVocabulary,
    config: &ClassifierTrainConfig,
    diagnostic_dir: Option<&Path>,
    sink: &mut dyn MetricsSink,
) -> Result<TrainedClassifier> {
    config.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::invalid("classifier training split is empty"))?;
    let dims = first.clip.dims();
    if config.network.classes != vocabulary.len() {
        return Err(Error::invalid(format!(
            "classifier has {} classes, vocabulary has {} words",
            config.network.classes,
            vocabulary.len()
        )));
    }
    if config.network.in_channels != dims[3] {
        return Err(Error::invalid(format!(
            "classifier takes {} channels, clips have {}",
            config.network.in_channels, dims[3]
        )));
    }
    check_labels(train, vocabulary.len(), dims)?;
    if let Some(v) = val {
        check_labels(v, vocabulary.len(), dims)?;
    }

    let mut params = ParamStore::<f64>::new();
    let net = Classifier::new(
        config.network.clone(),
        &mut params,
        &mut rng::stream(config.seed, &[TAG_INIT]),
    )?;
    let mut opt = Adam::new(config.adam(), &params);
    sink.header(&classifier_columns())?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0u64;

    let snapshot = |params: &ParamStore<f64>, history: &[ClassifierEpoch]| TrainedClassifier {
        config: config.clone(),
        net: net.clone(),
        params: params.frozen(),
        vocabulary: vocabulary.clone(),
        clip_dims: dims,
        history: history.to_vec(),
    };

    for epoch in 0..config.epochs {
        let lr = lr_schedule_exponential(config.learning_rate, epoch, config.lr_decay);
        let order = epoch_order(config.seed, epoch, train.len());
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let mut r = rng::stream(config.seed, &[TAG_CRITIC, step]);
            let flipped: Vec<VideoClip>;
            let clips: Vec<&VideoClip> = if config.flip_augment {
                flipped = batch
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
                batch.iter().map(|&i| &train[i].clip).collect()
            };
            let labels: Vec<usize> = batch.iter().map(|&i| train[i].word_index).collect();
            let x = clips_to_tensor::<f64>(&clips)?;
            let out = net.forward(&params, &x)?;
            let loss = classification_loss(&out.probs, &labels)?;
            let value = loss.item();
            if !value.is_finite() {
                if let Some(dir) = diagnostic_dir {
                    snapshot(&params, &history).save(&dir.join("classifier_diverged.vsck"))?;
                }
                return Err(Error::NonFinite {
                    what: "classifier loss".into(),
                    step,
                });
            }
            let wrt: Vec<&Tensor<f64>> = params.values().iter().collect();
            let grads = tensor::grad(&loss, &wrt, false);
            opt.step(&mut params, &grads, lr);
            loss_sum += value * batch.len() as f64;
            hits += rows(&out.probs)
                .iter()
                .zip(&labels)
                .filter(|(p, &l)| argmax(p) == l)
                .count();
            step += 1;
        }
        let mut record = ClassifierEpoch {
            epoch,
            lr,
            loss: loss_sum / train.len() as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            val_accuracy: None,
        };
        if let Some(v) = val.filter(|v| !v.is_empty()) {
            record.val_accuracy = Some(snapshot(&params, &[]).accuracy(v)?);
        }
        log::info!(
            "classifier epoch {} lr {:.3e} loss {:.4} train acc {:.3} val acc {}",
            epoch + 1,
            lr,
            record.loss,
            record.train_accuracy,
            record
                .val_accuracy
                .map_or("-".into(), |a| format!("{a:.3}"))
        );
        sink.row(&[
            epoch as f64 + 1.0,
            lr,
            record.loss,
            record.train_accuracy,
            record.val_accuracy.unwrap_or(f64::NAN),
        ])?;
        history.push(record);
    }
    Ok(snapshot(&params, &history))
}

/// Trains the word classifier on `gan-train`, reporting accuracy on `val`.
pub fn pretrain_word_classifier(
    corpus: &Corpus,
    config: &ClassifierTrainConfig,
    diagnostic_dir: Option<&Path>,
    sink: &mut dyn MetricsSink,
) -> Result<TrainedClassifier> {
    let train = corpus.load_split(Split::GanTrain)?;
    let val = corpus.load_split(Split::Val)?;
    train_classifier(
        &train,
        Some(&val),
        corpus.vocabulary(),
        config,
        diagnostic_dir,
        sink,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chargrid::Alphabet;
    use crate::trainer::MetricsLog;

    fn toy(words: &[&str]) -> (Vec<LabeledClip>, WordVocabulary) {
        let a = Alphabet::new("ab").unwrap();
        let vocab = WordVocabulary::new(words, &a).unwrap();
        let clips = (0..6)
            .map(|i| {
                let w = i % words.len();
                let v = if w == 0 { -0.5 } else { 0.5 };
                LabeledClip {
                    clip_id: format!("c{i}"),
                    word_index: w,
                    clip: VideoClip::new(4, 4, 4, 1, vec![v + 0.01 * i as f32; 64]).unwrap(),
                }
            })
            .collect();
        (clips, vocab)
    }

    fn tiny_config(classes: usize) -> ClassifierTrainConfig {
        let mut c = ClassifierTrainConfig::desk_word(1, classes);
        c.network.front_width = 4;
        c.network.stage_widths = vec![4, 4];
        c.network.stage_blocks = vec![1, 1];
        c.network.stage_strides = vec![1, 2];
        c.network.hidden = 8;
        c.network.recurrent_layers = 1;
        c.batch_size = 4;
        c.epochs = 6;
        c.learning_rate = 1e-2;
        c
    }

    #[test]
    fn one_word_vocabulary_is_trivial() {
        let (clips, vocab) = toy(&["ab"]);
        let mut log = MetricsLog::default();
        let trained = train_classifier(
            &clips,
            Some(&clips),
            &vocab,
            &tiny_config(1),
            None,
            &mut log,
        )
        .unwrap();
        assert_eq!(trained.accuracy(&clips).unwrap(), 1.0);
        assert!(trained.history.last().unwrap().loss < 1e-9);
        assert_eq!(log.rows.len(), 6);
    }

    #[test]
    fn separates_two_constant_words_and_roundtrips() {
        let (clips, vocab) = toy(&["ab", "ba"]);
        let mut log = MetricsLog::default();
        let trained =
            train_classifier(&clips, None, &vocab, &tiny_config(2), None, &mut log).unwrap();
        assert_eq!(trained.accuracy(&clips).unwrap(), 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cls.vsck");
        trained.save(&path).unwrap();
        let back = TrainedClassifier::load(&path).unwrap();
        assert!(back.params.bit_equal(&trained.params));
        assert_eq!(back.history, trained.history);
        let refs: Vec<&VideoClip> = clips.iter().map(|c| &c.clip).collect();
        assert_eq!(
            back.features(&refs).unwrap(),
            trained.features(&refs).unwrap()
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let (clips, vocab) = toy(&["ab", "ba"]);
        let mut log = MetricsLog::default();
        assert!(train_classifier(&[], None, &vocab, &tiny_config(2), None, &mut log).is_err());
        assert!(train_classifier(&clips, None, &vocab, &tiny_config(3), None, &mut log).is_err());
        let mut bad = clips.clone();
        bad[0].word_index = 5;
        assert!(train_classifier(&bad, None, &vocab, &tiny_config(2), None, &mut log).is_err());
    }

    #[test]
    fn diverging_run_aborts_with_diagnostic_checkpoint() {
        let (clips, vocab) = toy(&["ab", "ba"]);
        let mut cfg = tiny_config(2);
        cfg.learning_rate = f64::MAX;
        let dir = tempfile::tempdir().unwrap();
        let mut log = MetricsLog::default();
        let err =
            train_classifier(&clips, None, &vocab, &cfg, Some(dir.path()), &mut log).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
        assert!(!err.is_user_error());
        assert!(dir.path().join("classifier_diverged.vsck").exists());
    }
}
