use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::chargrid::{expand_characters, Alphabet, WordVocabulary};
use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::rng;

const CAVITY: [f32; 3] = [-0.85, -0.9, -0.8];
const MOUTH_CENTER_Y: f32 = 0.1;

/// Appearance of one synthetic speaker, fully determined by `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerIdentity {
    pub seed: u64,
    pub background: [f32; 3],
    pub gradient: [f32; 3],
    pub texture_amp: f32,
    pub texture_freq: f32,
    pub texture_phase: f32,
    pub lip_color: [f32; 3],
    pub lip_thickness: f32,
}

impl SpeakerIdentity {
    pub fn from_seed(seed: u64) -> Self {
        let mut r = rng::stream(seed, &[0x5eed]);
        let mut color =
            |lo: f32, hi: f32| -> [f32; 3] { std::array::from_fn(|_| r.random_range(lo..hi)) };
        let background = color(-0.2, 0.6);
        let gradient = color(-0.15, 0.15);
        let mut r = rng::stream(seed, &[0x11b5]);
        SpeakerIdentity {
            seed,
            background,
            gradient,
            texture_amp: r.random_range(0.0..0.08),
            texture_freq: r.random_range(1.0..3.0),
            texture_phase: r.random_range(0.0..std::f32::consts::TAU),
            lip_color: [
                r.random_range(0.3..0.8),
                r.random_range(-0.5..0.0),
                r.random_range(-0.4..0.1),
            ],
            lip_thickness: r.random_range(0.12..0.22),
        }
    }
}

/// Mouth opening (vertical half-axis) and width (horizontal half-axis) of a
/// character's glyph, in units of the half frame size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlyphShape {
    pub aperture: f32,
    pub width: f32,
}

/// Linear ramps over the alphabet: aperture grows while width shrinks.
pub fn glyph_shape(char_index: usize, alphabet_size: usize) -> GlyphShape {
    let t = char_index as f32 / (alphabet_size.max(2) - 1) as f32;
    GlyphShape {
        aperture: 0.12 + 0.6 * t,
        width: 0.8 - 0.35 * t,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderParams {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// 1 (grey) or 3 (RGB).
    pub channels: usize,
    pub noise_sigma: f32,
}

impl RenderParams {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid(format!(
                "render dims must be positive, got {}x{}x{}",
                self.frames, self.height, self.width
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

fn coverage(d: f32, radius_px: f32) -> f32 {
    // d is the normalized elliptic radius; (1 - d) * radius approximates the
    // signed distance to the outline in pixels
    (0.5 + (1.0 - d) * radius_px).clamp(0.0, 1.0)
}

/// One noise-free frame showing `char_index`'s glyph over the speaker.
pub fn render_glyph_frame(
    char_index: usize,
    alphabet_size: usize,
    speaker: &SpeakerIdentity,
    height: usize,
    width: usize,
    channels: usize,
) -> Vec<f32> {
    let g = glyph_shape(char_index, alphabet_size);
    let (hf, wf) = (height as f32, width as f32);
    let outer = (
        g.width + speaker.lip_thickness,
        g.aperture + speaker.lip_thickness,
    );
    let scale = hf.min(wf) / 2.0;
    let mut out = Vec::with_capacity(height * width * channels);
    for y in 0..height {
        let v = (y as f32 + 0.5) / hf * 2.0 - 1.0;
        for x in 0..width {
            let u = (x as f32 + 0.5) / wf * 2.0 - 1.0;
            let dy = v - MOUTH_CENTER_Y;
            let d_outer = ((u / outer.0).powi(2) + (dy / outer.1).powi(2)).sqrt();
            let d_inner = ((u / g.width).powi(2) + (dy / g.aperture).powi(2)).sqrt();
            let m_lip = coverage(d_outer, outer.0.min(outer.1) * scale);
            let m_cav = coverage(d_inner, g.width.min(g.aperture) * scale);
            let tex = speaker.texture_amp
                * (speaker.texture_freq * std::f32::consts::PI * u + speaker.texture_phase).sin()
                * (0.5 * speaker.texture_freq * std::f32::consts::PI * v).cos();
            let mut px = [0f32; 3];
            for c in 0..3 {
                let bg = speaker.background[c] + speaker.gradient[c] * v + tex;
                let lip = bg * (1.0 - m_lip) + speaker.lip_color[c] * m_lip;
                px[c] = lip * (1.0 - m_cav) + CAVITY[c] * m_cav;
            }
            if channels == 1 {
                out.push(((px[0] + px[1] + px[2]) / 3.0).clamp(-1.0, 1.0));
            } else {
                out.extend(px.iter().map(|p| p.clamp(-1.0, 1.0)));
            }
        }
    }
    out
}

/// Renders `word` spoken by `speaker`: frame t shows the glyph of the
/// character expanded onto t, plus Gaussian noise truncated at 3σ.
pub fn render_utterance_clip(
    word: &str,
    alphabet: &Alphabet,
    speaker: &SpeakerIdentity,
    params: &RenderParams,
    noise_seed: u64,
) -> Result<VideoClip> {
    params.validate()?;
    let labels = expand_characters(word, params.frames, alphabet)?;
    let (h, w, c) = (params.height, params.width, params.channels);
    let mut glyphs: Vec<Option<Vec<f32>>> = vec![None; alphabet.len()];
    let mut data = Vec::with_capacity(params.frames * h * w * c);
    for &l in &labels.labels {
        let frame = glyphs[l]
            .get_or_insert_with(|| render_glyph_frame(l, alphabet.len(), speaker, h, w, c));
        data.extend_from_slice(frame);
    }
    if params.noise_sigma > 0.0 {
        let sigma = params.noise_sigma;
        let normal = Normal::new(0.0f32, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut r = rng::stream(noise_seed, &[0x0015e]);
        for v in &mut data {
            let n = normal.sample(&mut r).clamp(-3.0 * sigma, 3.0 * sigma);
            *v += n;
        }
    }
    VideoClip::from_clamped(params.frames, h, w, c, data)
}

/// Reference decoder that knows the glyph table and the speaker: each frame
/// is matched to its nearest noise-free glyph, and the word whose character
/// expansion agrees with the most frames wins (ties to the lower index).
pub fn template_decode(
    clip: &VideoClip,
    speaker: &SpeakerIdentity,
    alphabet: &Alphabet,
    vocab: &WordVocabulary,
) -> Result<usize> {
    let [t, h, w, c] = clip.dims();
    let templates: Vec<Vec<f32>> = (0..alphabet.len())
        .map(|i| render_glyph_frame(i, alphabet.len(), speaker, h, w, c))
        .collect();
    let per_frame: Vec<usize> = (0..t)
        .map(|ti| {
            let f = clip.frame(ti);
            let dist =
                |tpl: &Vec<f32>| -> f32 { tpl.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum() };
            (0..templates.len())
                .min_by(|&a, &b| dist(&templates[a]).total_cmp(&dist(&templates[b])))
                .expect("alphabet is nonempty")
        })
        .collect();
    let mut best = (0usize, 0usize);
    for (wi, word) in vocab.words().iter().enumerate() {
        let exp = expand_characters(word, t, alphabet)?;
        let agree = exp
            .labels
            .iter()
            .zip(&per_frame)
            .filter(|(a, b)| a == b)
            .count();
        if agree > best.1 || wi == 0 {
            best = (wi, agree);
        }
    }
    Ok(best.0)
}
