use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv3d, ConvTranspose3d, InstanceNorm};
use super::params::ParamStore;
use crate::chargrid::{Conditioning, ConditioningVolume};
use crate::clip::{tensor_to_clips, VideoClip};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub video_channels: usize,
    /// Alphabet size (character mode) or vocabulary size (word mode).
    pub label_channels: usize,
    pub base_width: usize,
    pub max_width: usize,
    pub res_blocks: usize,
    /// Per down block; mirrored by the up blocks.
    pub spatial_strides: [usize; 3],
    pub temporal_strides: [usize; 3],
    pub norm_eps: f64,
}

impl GeneratorConfig {
    /// 64x64 inputs: spatial stride 2 in every down block, temporal stride
    /// 2 in the first two.
    pub fn paper(video_channels: usize, label_channels: usize) -> Self {
        GeneratorConfig {
            video_channels,
            label_channels,
            base_width: 64,
            max_width: 256,
            res_blocks: 6,
            spatial_strides: [2, 2, 2],
            temporal_strides: [2, 2, 1],
            norm_eps: 1e-5,
        }
    }

    /// 16x16 inputs: the third down block keeps the spatial size, so the
    /// bottleneck stays 4x4.
    pub fn desk(video_channels: usize, label_channels: usize) -> Self {
        GeneratorConfig {
            base_width: 16,
            max_width: 64,
            spatial_strides: [2, 2, 1],
            ..Self::paper(video_channels, label_channels)
        }
    }

    pub fn widths(&self) -> [usize; 3] {
        std::array::from_fn(|i| (self.base_width << i).min(self.max_width))
    }

    pub fn validate(&self) -> Result<()> {
        let strides_ok = self
            .spatial_strides
            .iter()
            .chain(&self.temporal_strides)
            .all(|&s| s == 1 || s == 2);
        if !strides_ok {
            return Err(Error::invalid("generator strides must be 1 or 2"));
        }
        if self.video_channels == 0
            || self.label_channels == 0
            || self.base_width == 0
            || self.max_width == 0
        {
            return Err(Error::invalid(
                "generator widths and channel counts must be positive",
            ));
        }
        Ok(())
    }

    /// Required divisors of (T, H, W).
    pub fn divisors(&self) -> [usize; 3] {
        let t: usize = self.temporal_strides.iter().product();
        let s: usize = self.spatial_strides.iter().product();
        [t, s, s]
    }

    pub fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        let div = self.divisors();
        if dims.iter().zip(&div).any(|(&d, &k)| d == 0 || d % k != 0) {
            return Err(Error::shape(format!(
                "generator needs (T, H, W) divisible by {div:?}, got {dims:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv3d,
    norm1: InstanceNorm,
    conv2: Conv3d,
    norm2: InstanceNorm,
}

/// Encoder (3 strided conv blocks), residual bottleneck, decoder (3
/// transposed conv blocks, the last one emitting `tanh` video).
#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    downs: Vec<(Conv3d, InstanceNorm)>,
    res: Vec<ResBlock>,
    ups: Vec<(ConvTranspose3d, Option<InstanceNorm>)>,
}

impl Generator {
    pub fn new<F: Float, R: Rng + ?Sized>(
        config: GeneratorConfig,
        ps: &mut ParamStore<F>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        let eps = config.norm_eps;
        let strides = |i: usize| {
            [
                config.temporal_strides[i],
                config.spatial_strides[i],
                config.spatial_strides[i],
            ]
        };
        let mut cin = config.video_channels + config.label_channels;
        let mut downs = Vec::new();
        for (i, &w) in widths.iter().enumerate() {
            let conv = Conv3d::strided(ps, rng, &format!("down{i}"), cin, w, strides(i), false);
            downs.push((
                conv,
                InstanceNorm::new(ps, &format!("down{i}.norm"), w, eps),
            ));
            cin = w;
        }
        let wb = widths[2];
        let res = (0..config.res_blocks)
            .map(|i| ResBlock {
                conv1: Conv3d::strided(ps, rng, &format!("res{i}.conv1"), wb, wb, [1, 1, 1], false),
                norm1: InstanceNorm::new(ps, &format!("res{i}.norm1"), wb, eps),
                conv2: Conv3d::strided(ps, rng, &format!("res{i}.conv2"), wb, wb, [1, 1, 1], false),
                norm2: InstanceNorm::new(ps, &format!("res{i}.norm2"), wb, eps),
            })
            .collect();
        let mut ups = Vec::new();
        for i in (0..3).rev() {
            let cout = if i == 0 {
                config.video_channels
            } else {
                widths[i - 1]
            };
            let last = i == 0;
            let conv = ConvTranspose3d::strided(
                ps,
                rng,
                &format!("up{i}"),
                widths[i],
                cout,
                strides(i),
                last,
            );
            let norm = (!last).then(|| InstanceNorm::new(ps, &format!("up{i}.norm"), cout, eps));
            ups.push((conv, norm));
        }
        Ok(Generator {
            config,
            downs,
            res,
            ups,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// `x` is `[N, C, T, H, W]`; the output has the same shape with values in
    /// (-1, 1).
    pub fn forward<F: Float>(
        &self,
        ps: &ParamStore<F>,
        x: &Tensor<F>,
        cond: &Conditioning,
    ) -> Result<Tensor<F>> {
        let s = x.shape();
        if s.len() != 5 || s[1] != self.config.video_channels {
            return Err(Error::shape(format!(
                "generator expects [N, {}, T, H, W], got {s:?}",
                self.config.video_channels
            )));
        }
        let (n, t, h, w) = (s[0], s[2], s[3], s[4]);
        self.config.check_dims([t, h, w])?;
        if cond.batch_len() != n || cond.channels() != self.config.label_channels {
            return Err(Error::shape(format!(
                "conditioning for {} samples over {} labels, generator expects {n} over {}",
                cond.batch_len(),
                cond.channels(),
                self.config.label_channels
            )));
        }
        let planes = cond
            .planes::<F>(t)?
            .broadcast_to(&[n, self.config.label_channels, t, h, w]);
        Ok(self.forward_input(ps, &Tensor::concat(&[x.clone(), planes], 1)))
    }

    /// Forward on an input whose label channels are already concatenated;
    /// dims must have passed `check_dims`.
    fn forward_input<F: Float>(&self, ps: &ParamStore<F>, input: &Tensor<F>) -> Tensor<F> {
        let mut y = input.clone();
        let mut dims = vec![[input.dim(2), input.dim(3), input.dim(4)]];
        for (conv, norm) in &self.downs {
            y = norm.forward(ps, &conv.forward(ps, &y)).relu();
            dims.push([y.dim(2), y.dim(3), y.dim(4)]);
        }
        for b in &self.res {
            let r = b.norm1.forward(ps, &b.conv1.forward(ps, &y)).relu();
            let r = b.norm2.forward(ps, &b.conv2.forward(ps, &r));
            y = y.add(&r);
        }
        for (k, (conv, norm)) in self.ups.iter().enumerate() {
            let target = dims[2 - k];
            y = conv.forward(ps, &y, target);
            y = match norm {
                Some(norm) => norm.forward(ps, &y).relu(),
                None => y.tanh(),
            };
        }
        y
    }

    /// Translates one conditioning volume (clip plus one-hot label channels).
    pub fn forward_volume<F: Float>(
        &self,
        ps: &ParamStore<F>,
        volume: &ConditioningVolume,
    ) -> Result<VideoClip> {
        if volume.label_channels != self.config.label_channels
            || volume.video_channels != self.config.video_channels
        {
            return Err(Error::shape(format!(
                "volume has {}+{} channels, generator expects {}+{}",
                volume.video_channels,
                volume.label_channels,
                self.config.video_channels,
                self.config.label_channels
            )));
        }
        self.config
            .check_dims([volume.frames, volume.height, volume.width])?;
        let (t, h, w, c) = (
            volume.frames,
            volume.height,
            volume.width,
            volume.channels(),
        );
        let mut data = vec![F::zero(); c * t * h * w];
        for ti in 0..t {
            for y in 0..h {
                for x in 0..w {
                    for ci in 0..c {
                        data[((ci * t + ti) * h + y) * w + x] =
                            F::num(volume.get(ti, y, x, ci) as f64);
                    }
                }
            }
        }
        let input = Tensor::from_vec(data, &[1, c, t, h, w]);
        let out = self.forward_input(ps, &input);
        Ok(tensor_to_clips(&out)?.remove(0))
    }
}
