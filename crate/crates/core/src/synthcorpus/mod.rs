//! Procedural utterance-video corpus: rendering, on-disk layout, and the
//! ingestion transforms (temporal crop, horizontal flip).

mod corpus;
mod render;

pub use corpus::{
    generate_corpus, plan_records, render_record, ClipRecord, Corpus, CorpusConfig, CorpusManifest,
    LabeledClip, Split, SplitCounts, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use render::{
    glyph_shape, render_glyph_frame, render_utterance_clip, template_decode, GlyphShape,
    RenderParams, SpeakerIdentity,
};

use crate::clip::VideoClip;
use crate::error::{Error, Result};

/// Keeps `frames` frames, dropping `floor(excess / 2)` at the start and the
/// rest at the end.
pub fn temporal_crop(clip: &VideoClip, frames: usize) -> Result<VideoClip> {
    let t0 = clip.frames();
    if frames > t0 {
        return Err(Error::invalid(format!(
            "cannot crop {t0} frames to {frames}"
        )));
    }
    let lead = (t0 - frames) / 2;
    let n = clip.frame_len();
    let data = clip.data()[lead * n..(lead + frames) * n].to_vec();
    VideoClip::new(frames, clip.height(), clip.width(), clip.channels(), data)
}

/// Mirrors every frame left to right.
pub fn horizontal_flip(clip: &VideoClip) -> VideoClip {
    let [t, h, w, c] = clip.dims();
    let src = clip.data();
    let mut data = Vec::with_capacity(src.len());
    for ti in 0..t {
        for y in 0..h {
            for x in (0..w).rev() {
                let i = clip.index(ti, y, x, 0);
                data.extend_from_slice(&src[i..i + c]);
            }
        }
    }
    VideoClip::new(t, h, w, c, data).expect("flip preserves shape and range")
}
