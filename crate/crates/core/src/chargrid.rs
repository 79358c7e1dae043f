//! Word and character encodings used to condition the generator.
//!
//! A word of `N` characters is spread over `T` frames as `N` contiguous runs
//! (one per character, in order). When `N` does not divide `T`, the first
//! `T mod N` runs receive one extra frame.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const ENGLISH_LOWERCASE: &str = "abcdefghijklmnopqrstuvwxyz";

/// Ordered set of distinct characters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Alphabet {
    symbols: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, usize>,
}

impl Alphabet {
    pub fn new(symbols: &str) -> Result<Self> {
        let symbols: Vec<char> = symbols.chars().flat_map(|c| c.to_lowercase()).collect();
        if symbols.len() < 2 {
            return Err(Error::invalid("alphabet needs at least two symbols"));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, &c) in symbols.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(Error::invalid(format!("duplicate alphabet symbol {c:?}")));
            }
        }
        Ok(Alphabet { symbols, index })
    }

    pub fn english() -> Self {
        Self::new(ENGLISH_LOWERCASE).expect("static alphabet is valid")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn symbol(&self, i: usize) -> Option<char> {
        self.symbols.get(i).copied()
    }

    /// Alphabet indices of a (lowercased) word.
    pub fn encode(&self, word: &str) -> Result<Vec<usize>> {
        let word = word.to_lowercase();
        if word.is_empty() {
            return Err(Error::invalid("empty word"));
        }
        word.chars()
            .map(|c| {
                self.index_of(c).ok_or_else(|| Error::UnknownCharacter {
                    ch: c,
                    word: word.clone(),
                })
            })
            .collect()
    }
}

impl TryFrom<String> for Alphabet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Alphabet::new(&s)
    }
}

impl From<Alphabet> for String {
    fn from(a: Alphabet) -> String {
        a.symbols.iter().collect()
    }
}

/// Ordered list of distinct lowercase words; position is the word label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordVocabulary {
    words: Vec<String>,
}

impl WordVocabulary {
    pub fn new<S: AsRef<str>>(words: &[S], alphabet: &Alphabet) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::invalid("vocabulary is empty"));
        }
        let mut seen = HashMap::new();
        let mut out = Vec::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            let w = w.as_ref().to_lowercase();
            alphabet.encode(&w)?;
            if seen.insert(w.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary word {w:?}")));
            }
            out.push(w);
        }
        Ok(WordVocabulary { words: out })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, index: usize) -> Result<&str> {
        self.words
            .get(index)
            .map(String::as_str)
            .ok_or(Error::IndexOutOfRange {
                index,
                size: self.words.len(),
            })
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        let w = word.to_lowercase();
        self.words.iter().position(|x| *x == w)
    }
}

/// Per-frame character labels of a word spread over `T` frames.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharLabelSequence {
    pub labels: Vec<usize>,
    /// (alphabet index, run length) per character of the word, in order.
    pub runs: Vec<(usize, usize)>,
    pub alphabet_size: usize,
    pub word_index: Option<usize>,
}

impl CharLabelSequence {
    pub fn frames(&self) -> usize {
        self.labels.len()
    }

    pub fn char_count(&self) -> usize {
        self.runs.len()
    }

    pub fn run_lengths(&self) -> Vec<usize> {
        self.runs.iter().map(|r| r.1).collect()
    }
}

/// Frame counts for `n` characters over `frames` frames (largest remainder,
/// extra frames to the earliest characters).
pub fn run_lengths(n: usize, frames: usize) -> Vec<usize> {
    let (k, extra) = (frames / n, frames % n);
    (0..n).map(|i| k + usize::from(i < extra)).collect()
}

pub fn expand_characters(
    word: &str,
    frames: usize,
    alphabet: &Alphabet,
) -> Result<CharLabelSequence> {
    let chars = alphabet.encode(word)?;
    if chars.len() > frames {
        return Err(Error::WordTooLong {
            word: word.to_string(),
            len: chars.len(),
            frames,
        });
    }
    let lengths = run_lengths(chars.len(), frames);
    let mut labels = Vec::with_capacity(frames);
    for (&c, &len) in chars.iter().zip(&lengths) {
        labels.extend(std::iter::repeat_n(c, len));
    }
    Ok(CharLabelSequence {
        labels,
        runs: chars.into_iter().zip(lengths).collect(),
        alphabet_size: alphabet.len(),
        word_index: None,
    })
}

/// Expansion of vocabulary word `word_index`.
pub fn expand_vocabulary_word(
    vocab: &WordVocabulary,
    word_index: usize,
    frames: usize,
    alphabet: &Alphabet,
) -> Result<CharLabelSequence> {
    let mut seq = expand_characters(vocab.word(word_index)?, frames, alphabet)?;
    seq.word_index = Some(word_index);
    Ok(seq)
}

/// Presence bit per alphabet character.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharIndicator {
    pub bits: Vec<u8>,
}

impl CharIndicator {
    pub fn popcount(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }
}

pub fn char_indicator(word: &str, alphabet: &Alphabet) -> Result<CharIndicator> {
    let mut bits = vec![0u8; alphabet.len()];
    for i in alphabet.encode(word)? {
        bits[i] = 1;
    }
    Ok(CharIndicator { bits })
}

/// `T × H × W × (C + L)` generator input: the clip followed by `L`
/// spatially constant label channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningVolume {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub video_channels: usize,
    pub label_channels: usize,
    pub data: Vec<f32>,
}

impl ConditioningVolume {
    pub fn channels(&self) -> usize {
        self.video_channels + self.label_channels
    }

    pub fn get(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[((t * self.height + y) * self.width + x) * self.channels() + c]
    }

    /// Channels `[0, C)` as a clip.
    pub fn video(&self) -> Result<VideoClip> {
        let c = self.channels();
        let data = self
            .data
            .chunks_exact(c)
            .flat_map(|px| px[..self.video_channels].iter().copied())
            .collect();
        VideoClip::new(
            self.frames,
            self.height,
            self.width,
            self.video_channels,
            data,
        )
    }

    /// Index of the hot label channel at frame `t`, if exactly one is set.
    pub fn label_at(&self, t: usize) -> Option<usize> {
        let c = self.channels();
        let base = t * self.height * self.width * c + self.video_channels;
        let px = &self.data[base..base + self.label_channels];
        let hot: Vec<usize> = px
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect();
        (hot.len() == 1).then(|| hot[0])
    }
}

fn assemble(
    clip: &VideoClip,
    label_channels: usize,
    label_of_frame: impl Fn(usize) -> usize,
) -> ConditioningVolume {
    let [t, h, w, c] = clip.dims();
    let total = c + label_channels;
    let mut data = Vec::with_capacity(t * h * w * total);
    for ti in 0..t {
        let hot = label_of_frame(ti);
        for px in clip.frame(ti).chunks_exact(c) {
            data.extend_from_slice(px);
            data.extend((0..label_channels).map(|l| if l == hot { 1.0 } else { 0.0 }));
        }
        debug_assert_eq!(data.len(), (ti + 1) * h * w * total);
    }
    ConditioningVolume {
        frames: t,
        height: h,
        width: w,
        video_channels: c,
        label_channels,
        data,
    }
}

pub fn build_conditioning_volume(
    clip: &VideoClip,
    labels: &CharLabelSequence,
) -> Result<ConditioningVolume> {
    if clip.frames() != labels.frames() {
        return Err(Error::shape(format!(
            "clip has {} frames but the label sequence has {}",
            clip.frames(),
            labels.frames()
        )));
    }
    Ok(assemble(clip, labels.alphabet_size, |t| labels.labels[t]))
}

pub fn build_word_conditioning_volume(
    clip: &VideoClip,
    word_index: usize,
    vocab: &WordVocabulary,
) -> Result<ConditioningVolume> {
    if word_index >= vocab.len() {
        return Err(Error::IndexOutOfRange {
            index: word_index,
            size: vocab.len(),
        });
    }
    Ok(assemble(clip, vocab.len(), |_| word_index))
}

/// Target labels for a batch, in the form the generator consumes.
#[derive(Clone, Debug, PartialEq)]
pub enum Conditioning {
    /// Per-frame character labels (one sequence per batch element).
    Characters(Vec<CharLabelSequence>),
    /// One word label per batch element over a vocabulary of `vocab_size`.
    Words {
        indices: Vec<usize>,
        vocab_size: usize,
    },
}

impl Conditioning {
    pub fn batch_len(&self) -> usize {
        match self {
            Conditioning::Characters(s) => s.len(),
            Conditioning::Words { indices, .. } => indices.len(),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Conditioning::Characters(s) => s.first().map_or(0, |x| x.alphabet_size),
            Conditioning::Words { vocab_size, .. } => *vocab_size,
        }
    }

    /// One-hot label planes as an `[N, L, T, 1, 1]` tensor; broadcast it over
    /// height and width before concatenating.
    pub fn planes<F: Float>(&self, frames: usize) -> Result<Tensor<F>> {
        let n = self.batch_len();
        let l = self.channels();
        let mut data = vec![F::zero(); n * l * frames];
        match self {
            Conditioning::Characters(seqs) => {
                for (i, s) in seqs.iter().enumerate() {
                    if s.frames() != frames || s.alphabet_size != l {
                        return Err(Error::shape(format!(
                            "label sequence covers {} frames over {} symbols, expected {frames} over {l}",
                            s.frames(),
                            s.alphabet_size
                        )));
                    }
                    for (t, &c) in s.labels.iter().enumerate() {
                        data[(i * l + c) * frames + t] = F::one();
                    }
                }
            }
            Conditioning::Words {
                indices,
                vocab_size,
            } => {
                for (i, &w) in indices.iter().enumerate() {
                    if w >= *vocab_size {
                        return Err(Error::IndexOutOfRange {
                            index: w,
                            size: *vocab_size,
                        });
                    }
                    for t in 0..frames {
                        data[(i * l + w) * frames + t] = F::one();
                    }
                }
            }
        }
        Ok(Tensor::from_vec(data, &[n, l, frames, 1, 1]))
    }
}

/// Fixed-width base-2 code of a character index.
pub fn binary_char_code(char_index: usize, alphabet: &Alphabet) -> Result<Vec<u8>> {
    let a = alphabet.len();
    if a > 32 {
        return Err(Error::invalid(format!(
            "binary coding supports at most 32 symbols, alphabet has {a}"
        )));
    }
    if char_index >= a {
        return Err(Error::IndexOutOfRange {
            index: char_index,
            size: a,
        });
    }
    let width = binary_code_width(a);
    Ok((0..width)
        .rev()
        .map(|b| ((char_index >> b) & 1) as u8)
        .collect())
}

pub fn decode_binary_char_code(code: &[u8]) -> usize {
    code.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

/// `ceil(log2(a))`, at least 1.
pub fn binary_code_width(a: usize) -> usize {
    let mut w = 0;
    while (1usize << w) < a {
        w += 1;
    }
    w.max(1)
}
