use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{render_utterance_clip, RenderParams, SpeakerIdentity};
use super::temporal_crop;
use crate::chargrid::{Alphabet, WordVocabulary};
use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::rng;
use crate::vsgc::{self, DType};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    GanTrain,
    AuxTrain,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::GanTrain, Split::AuxTrain, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::GanTrain => "gan-train",
            Split::AuxTrain => "aux-train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown split {s:?}")))
    }
}

/// Clips per word. Training clips are divided between `gan-train` (the first
/// `round(train * gan_fraction)`) and `aux-train` (the rest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train_per_word: usize,
    pub gan_fraction: f64,
    pub val_per_word: usize,
    pub test_per_word: usize,
}

impl SplitCounts {
    pub fn gan_per_word(&self) -> usize {
        (self.train_per_word as f64 * self.gan_fraction).round() as usize
    }

    pub fn aux_per_word(&self) -> usize {
        self.train_per_word - self.gan_per_word()
    }

    pub fn per_word(&self, split: Split) -> usize {
        match split {
            Split::GanTrain => self.gan_per_word(),
            Split::AuxTrain => self.aux_per_word(),
            Split::Val => self.val_per_word,
            Split::Test => self.test_per_word,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub alphabet: String,
    pub words: Vec<String>,
    pub render: RenderParams,
    /// Frames rendered before cropping to `render.frames`; `None` renders at
    /// the final length.
    pub source_frames: Option<usize>,
    pub counts: SplitCounts,
    pub storage: DType,
    pub seed: u64,
}

impl CorpusConfig {
    /// Ten words over an eight-letter alphabet, 8 frames of 16x16 RGB.
    pub fn desk() -> Self {
        CorpusConfig {
            alphabet: "abdeilot".into(),
            words: [
                "able", "bad", "bet", "doe", "idea", "lit", "oat", "tide", "toad", "bolt",
            ]
            .map(String::from)
            .to_vec(),
            render: RenderParams {
                frames: 8,
                height: 16,
                width: 16,
                channels: 3,
                noise_sigma: 0.05,
            },
            source_frames: None,
            counts: SplitCounts {
                train_per_word: 40,
                gan_fraction: 0.5,
                val_per_word: 10,
                test_per_word: 10,
            },
            storage: DType::F32,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(Alphabet, WordVocabulary)> {
        let alphabet = Alphabet::new(&self.alphabet)?;
        let vocab = WordVocabulary::new(&self.words, &alphabet)?;
        self.render.validate()?;
        let c = &self.counts;
        if !(0.0..=1.0).contains(&c.gan_fraction) {
            return Err(Error::invalid(format!(
                "gan fraction {} outside [0, 1]",
                c.gan_fraction
            )));
        }
        if c.gan_per_word() == 0 || c.aux_per_word() == 0 {
            return Err(Error::invalid(format!(
                "zero clips per word in a training split ({} train clips, fraction {})",
                c.train_per_word, c.gan_fraction
            )));
        }
        if c.test_per_word == 0 {
            return Err(Error::invalid("zero test clips per word"));
        }
        let rendered = self.source_frames.unwrap_or(self.render.frames);
        if rendered < self.render.frames {
            return Err(Error::invalid(format!(
                "source frames {rendered} shorter than clip frames {}",
                self.render.frames
            )));
        }
        for w in vocab.words() {
            if w.chars().count() > self.render.frames {
                return Err(Error::WordTooLong {
                    word: w.clone(),
                    len: w.chars().count(),
                    frames: self.render.frames,
                });
            }
        }
        if self.storage == DType::F64 {
            return Err(Error::invalid("clip storage must be u8 or f32"));
        }
        Ok((alphabet, vocab))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub word_index: usize,
    pub split: Split,
    pub speaker: SpeakerIdentity,
    pub noise_seed: u64,
    /// Relative to the corpus root.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub alphabet: Alphabet,
    pub vocabulary: WordVocabulary,
    pub render: RenderParams,
    pub source_frames: Option<usize>,
    pub counts: SplitCounts,
    pub storage: DType,
    pub seed: u64,
    pub records: Vec<ClipRecord>,
}

impl CorpusManifest {
    pub fn records(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.records(split).count()
    }

    /// Checks indices, id uniqueness, and per-word split balance.
    pub fn validate(&self, origin: &Path) -> Result<()> {
        let bad = |reason: String| Error::format(origin, reason);
        if self.format_version != MANIFEST_VERSION {
            return Err(bad(format!(
                "manifest version {} unsupported, expected {MANIFEST_VERSION}",
                self.format_version
            )));
        }
        let mut ids = HashSet::new();
        let mut per: HashMap<(Split, usize), usize> = HashMap::new();
        for r in &self.records {
            if r.word_index >= self.vocabulary.len() {
                return Err(bad(format!(
                    "record {} has word index {} of {}",
                    r.clip_id,
                    r.word_index,
                    self.vocabulary.len()
                )));
            }
            if !ids.insert(r.clip_id.as_str()) {
                return Err(bad(format!("duplicate clip id {}", r.clip_id)));
            }
            *per.entry((r.split, r.word_index)).or_default() += 1;
        }
        for split in Split::ALL {
            for w in 0..self.vocabulary.len() {
                let got = per.get(&(split, w)).copied().unwrap_or(0);
                let want = self.counts.per_word(split);
                if got != want {
                    return Err(bad(format!(
                        "word {} has {got} {split} clips, manifest declares {want}",
                        self.vocabulary.words()[w]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The records a config produces, in file order: word-major, then split,
/// then index within the split.
pub fn plan_records(config: &CorpusConfig) -> Result<Vec<ClipRecord>> {
    let (_, vocab) = config.validate()?;
    let mut out = Vec::new();
    for (wi, word) in vocab.words().iter().enumerate() {
        let mut k = 0u64;
        for split in Split::ALL {
            for i in 0..config.counts.per_word(split) {
                let speaker_seed = rng::derive_seed(config.seed, &[1, wi as u64, k]);
                let noise_seed = rng::derive_seed(config.seed, &[2, wi as u64, k]);
                let clip_id = format!("{word}_{split}_{i:05}");
                out.push(ClipRecord {
                    path: format!("clips/{clip_id}.vsgc"),
                    clip_id,
                    word_index: wi,
                    split,
                    speaker: SpeakerIdentity::from_seed(speaker_seed),
                    noise_seed,
                });
                k += 1;
            }
        }
    }
    Ok(out)
}

pub fn render_record(
    config: &CorpusConfig,
    alphabet: &Alphabet,
    vocab: &WordVocabulary,
    record: &ClipRecord,
) -> Result<VideoClip> {
    let word = vocab.word(record.word_index)?;
    let frames = config.render.frames;
    let mut params = config.render.clone();
    params.frames = config.source_frames.unwrap_or(frames);
    let clip = render_utterance_clip(word, alphabet, &record.speaker, &params, record.noise_seed)?;
    temporal_crop(&clip, frames)
}

/// Renders every clip into `out_dir/clips/` and writes `out_dir/manifest.json`.
pub fn generate_corpus(config: &CorpusConfig, out_dir: &Path) -> Result<CorpusManifest> {
    let (alphabet, vocab) = config.validate()?;
    let records = plan_records(config)?;
    let clips_dir = out_dir.join("clips");
    fs::create_dir_all(&clips_dir).map_err(|e| Error::io(&clips_dir, e))?;
    records.par_iter().try_for_each(|r| {
        let clip = render_record(config, &alphabet, &vocab, r)?;
        vsgc::write_clip(&out_dir.join(&r.path), &clip, config.storage)
    })?;
    let manifest = CorpusManifest {
        format_version: MANIFEST_VERSION,
        alphabet,
        vocabulary: vocab,
        render: config.render.clone(),
        source_frames: config.source_frames,
        counts: config.counts.clone(),
        storage: config.storage,
        seed: config.seed,
        records,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    vsgc::write_atomic(&out_dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledClip {
    pub clip_id: String,
    pub word_index: usize,
    pub clip: VideoClip,
}

/// A corpus opened from disk.
#[derive(Clone, Debug)]
pub struct Corpus {
    root: PathBuf,
    manifest: CorpusManifest,
}

impl Corpus {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CorpusManifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
        manifest.validate(&path)?;
        Ok(Corpus {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.manifest.alphabet
    }

    pub fn vocabulary(&self) -> &WordVocabulary {
        &self.manifest.vocabulary
    }

    pub fn clip_dims(&self) -> [usize; 4] {
        let r = &self.manifest.render;
        [r.frames, r.height, r.width, r.channels]
    }

    pub fn load_clip(&self, record: &ClipRecord) -> Result<VideoClip> {
        let path = self.root.join(&record.path);
        let clip = vsgc::read_clip(&path)?;
        if clip.dims() != self.clip_dims() {
            return Err(Error::format(
                &path,
                format!(
                    "clip dims {:?}, manifest declares {:?}",
                    clip.dims(),
                    self.clip_dims()
                ),
            ));
        }
        Ok(clip)
    }

    /// All clips of a split in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<LabeledClip>> {
        let records: Vec<&ClipRecord> = self.manifest.records(split).collect();
        records
            .par_iter()
            .map(|r| {
                Ok(LabeledClip {
                    clip_id: r.clip_id.clone(),
                    word_index: r.word_index,
                    clip: self.load_clip(r)?,
                })
            })
            .collect()
    }

    /// Fails if any clip id occurs in both splits.
    pub fn check_disjoint(&self, a: Split, b: Split) -> Result<()> {
        if a == b {
            return Err(Error::invalid(format!("split {a} compared with itself")));
        }
        let ids: HashSet<&str> = self
            .manifest
            .records(a)
            .map(|r| r.clip_id.as_str())
            .collect();
        if let Some(r) = self
            .manifest
            .records(b)
            .find(|r| ids.contains(r.clip_id.as_str()))
        {
            return Err(Error::invalid(format!(
                "clip {} is in both {a} and {b}",
                r.clip_id
            )));
        }
        Ok(())
    }
}
