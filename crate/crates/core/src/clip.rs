use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// A `T × H × W × C` video with values in `[-1, 1]`, stored row-major with
/// time outermost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoClip {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl VideoClip {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let expected = frames * height * width * channels;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "clip {frames}x{height}x{width}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("clip value {v} outside [-1, 1]")));
        }
        Ok(VideoClip {
            frames,
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a clip, clamping every value into `[-1, 1]` (NaN becomes 0).
    pub fn from_clamped(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        mut data: Vec<f32>,
    ) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        }
        Self::new(frames, height, width, channels, data)
    }

    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        VideoClip {
            frames,
            height,
            width,
            channels,
            data: vec![0.0; frames * height * width * channels],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize, c: usize) -> usize {
        ((t * self.height + y) * self.width + x) * self.channels + c
    }

    pub fn get(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(t, y, x, c)]
    }

    /// Replaces frame `t` with `values` (clamped into range).
    pub fn set_frame(&mut self, t: usize, values: &[f32]) -> Result<()> {
        let n = self.frame_len();
        if values.len() != n || t >= self.frames {
            return Err(Error::shape(format!(
                "frame {t} of length {} does not fit clip {:?}",
                values.len(),
                self.dims()
            )));
        }
        for (dst, &v) in self.data[t * n..(t + 1) * n].iter_mut().zip(values) {
            *dst = v.clamp(-1.0, 1.0);
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &VideoClip) -> bool {
        self.dims() == other.dims()
    }
}

/// Stacks clips into an `[N, C, T, H, W]` tensor.
pub fn clips_to_tensor<F: Float>(clips: &[&VideoClip]) -> Result<Tensor<F>> {
    let first = clips
        .first()
        .ok_or_else(|| Error::invalid("empty clip batch"))?;
    let [t, h, w, c] = first.dims();
    let per = t * h * w * c;
    let mut out = vec![F::zero(); clips.len() * per];
    for (n, clip) in clips.iter().enumerate() {
        if clip.dims() != first.dims() {
            return Err(Error::shape(format!(
                "batch mixes clip shapes {:?} and {:?}",
                first.dims(),
                clip.dims()
            )));
        }
        let base = n * per;
        for ti in 0..t {
            for y in 0..h {
                for x in 0..w {
                    for ci in 0..c {
                        out[base + ((ci * t + ti) * h + y) * w + x] =
                            F::num(clip.get(ti, y, x, ci) as f64);
                    }
                }
            }
        }
    }
    Ok(Tensor::from_vec(out, &[clips.len(), c, t, h, w]))
}

/// Splits an `[N, C, T, H, W]` tensor back into clips (values clamped).
pub fn tensor_to_clips<F: Float>(x: &Tensor<F>) -> Result<Vec<VideoClip>> {
    if x.rank() != 5 {
        return Err(Error::shape(format!(
            "expected [N, C, T, H, W], got {:?}",
            x.shape()
        )));
    }
    let s = x.shape();
    let (n, c, t, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let per = c * t * h * w;
    let d = x.data();
    (0..n)
        .map(|i| {
            let mut data = vec![0.0f32; per];
            for ci in 0..c {
                for ti in 0..t {
                    for y in 0..h {
                        for xx in 0..w {
                            data[((ti * h + y) * w + xx) * c + ci] =
                                d[i * per + ((ci * t + ti) * h + y) * w + xx].as_f64() as f32;
                        }
                    }
                }
            }
            VideoClip::from_clamped(t, h, w, c, data)
        })
        .collect()
}
