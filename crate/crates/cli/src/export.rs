//! Per-frame binary PPM (RGB) or PGM (grey) images for viewing clips.

use std::fs;
use std::path::{Path, PathBuf};

use vispgan::vsgc::{unit_to_u8, write_atomic};
use vispgan::{Error, Result, VideoClip};

/// Writes `<stem>_<t>.ppm` (3 channels) or `.pgm` (1 channel) per frame.
pub fn export_frames(clip: &VideoClip, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let (magic, ext) = match clip.channels() {
        1 => ("P5", "pgm"),
        3 => ("P6", "ppm"),
        c => {
            return Err(Error::invalid(format!(
                "frame export needs 1 or 3 channels, clip has {c}"
            )))
        }
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(clip.frames());
    for t in 0..clip.frames() {
        let mut bytes = format!("{magic}\n{} {}\n255\n", clip.width(), clip.height()).into_bytes();
        bytes.extend(clip.frame(t).iter().map(|&v| unit_to_u8(v)));
        let path = dir.join(format!("{stem}_{t:03}.{ext}"));
        write_atomic(&path, &bytes)?;
        paths.push(path);
    }
    Ok(paths)
}
