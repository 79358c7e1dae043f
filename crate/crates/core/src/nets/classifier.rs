use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{softmax_rows, time_steps, Conv3d, Gru, InstanceNorm, Linear, Lstm};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecurrentBackend {
    /// Unidirectional LSTM; the feature is the top layer's last hidden state.
    Lstm,
    /// Bidirectional GRU; the feature concatenates the top layer's final
    /// forward and backward states.
    BiGru,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub in_channels: usize,
    pub classes: usize,
    pub front_width: usize,
    pub front_kernel: [usize; 3],
    pub front_stride: [usize; 3],
    /// Per residual stage: width, number of basic blocks, spatial stride.
    pub stage_widths: Vec<usize>,
    pub stage_blocks: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub hidden: usize,
    pub recurrent_layers: usize,
    pub backend: RecurrentBackend,
    pub norm_eps: f64,
}

impl ClassifierConfig {
    /// 34-layer residual trunk and a two-layer LSTM.
    pub fn paper_word(in_channels: usize, classes: usize) -> Self {
        ClassifierConfig {
            in_channels,
            classes,
            front_width: 64,
            front_kernel: [5, 7, 7],
            front_stride: [1, 2, 2],
            stage_widths: vec![64, 128, 256, 512],
            stage_blocks: vec![3, 4, 6, 3],
            stage_strides: vec![1, 2, 2, 2],
            hidden: 256,
            recurrent_layers: 2,
            backend: RecurrentBackend::Lstm,
            norm_eps: 1e-5,
        }
    }

    /// 18-layer residual trunk and a two-layer bidirectional GRU.
    pub fn paper_aux(in_channels: usize, classes: usize) -> Self {
        ClassifierConfig {
            stage_blocks: vec![2, 2, 2, 2],
            backend: RecurrentBackend::BiGru,
            ..Self::paper_word(in_channels, classes)
        }
    }

    /// 10-layer trunk for 16x16 inputs.
    pub fn desk_word(in_channels: usize, classes: usize) -> Self {
        ClassifierConfig {
            in_channels,
            classes,
            front_width: 8,
            front_kernel: [3, 3, 3],
            front_stride: [1, 1, 1],
            stage_widths: vec![8, 16, 32, 64],
            stage_blocks: vec![1, 1, 1, 1],
            stage_strides: vec![1, 2, 2, 2],
            hidden: 64,
            recurrent_layers: 2,
            backend: RecurrentBackend::Lstm,
            norm_eps: 1e-5,
        }
    }

    /// 18-layer trunk with different widths and a bidirectional GRU, so the
    /// evaluator shares no architecture with the word classifier.
    pub fn desk_aux(in_channels: usize, classes: usize) -> Self {
        ClassifierConfig {
            front_width: 12,
            front_kernel: [3, 5, 5],
            stage_widths: vec![12, 24, 32, 48],
            stage_blocks: vec![2, 2, 2, 2],
            hidden: 32,
            backend: RecurrentBackend::BiGru,
            ..Self::desk_word(in_channels, classes)
        }
    }

    /// Weighted layers: front conv, two per basic block, final linear.
    pub fn depth(&self) -> usize {
        2 + 2 * self.stage_blocks.iter().sum::<usize>()
    }

    pub fn feature_dim(&self) -> usize {
        match self.backend {
            RecurrentBackend::Lstm => self.hidden,
            RecurrentBackend::BiGru => 2 * self.hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stage_widths.len();
        if n == 0 || self.stage_blocks.len() != n || self.stage_strides.len() != n {
            return Err(Error::invalid(
                "classifier stage lists must be nonempty and equally long",
            ));
        }
        if self.classes == 0 || self.hidden == 0 || self.recurrent_layers == 0 {
            return Err(Error::invalid(
                "classifier needs classes, hidden size, and recurrent layers",
            ));
        }
        if self.stage_strides.contains(&0) || self.front_stride.contains(&0) {
            return Err(Error::invalid("classifier strides must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct BasicBlock {
    conv1: Conv3d,
    norm1: InstanceNorm,
    conv2: Conv3d,
    norm2: InstanceNorm,
    shortcut: Option<(Conv3d, InstanceNorm)>,
}

impl BasicBlock {
    fn new<F: Float, R: Rng + ?Sized>(
        ps: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        eps: f64,
    ) -> Self {
        let frame = |s: usize| ConvGeometry::new([1, s, s], [0, 1, 1]);
        let conv1 = Conv3d::new(
            ps,
            rng,
            &format!("{name}.conv1"),
            cin,
            cout,
            [1, 3, 3],
            frame(stride),
            false,
        );
        let norm1 = InstanceNorm::new(ps, &format!("{name}.norm1"), cout, eps);
        let conv2 = Conv3d::new(
            ps,
            rng,
            &format!("{name}.conv2"),
            cout,
            cout,
            [1, 3, 3],
            frame(1),
            false,
        );
        let norm2 = InstanceNorm::new(ps, &format!("{name}.norm2"), cout, eps);
        let shortcut = (stride != 1 || cin != cout).then(|| {
            let geom = ConvGeometry::new([1, stride, stride], [0, 0, 0]);
            (
                Conv3d::new(
                    ps,
                    rng,
                    &format!("{name}.down"),
                    cin,
                    cout,
                    [1, 1, 1],
                    geom,
                    false,
                ),
                InstanceNorm::new(ps, &format!("{name}.down.norm"), cout, eps),
            )
        });
        BasicBlock {
            conv1,
            norm1,
            conv2,
            norm2,
            shortcut,
        }
    }

    fn forward<F: Float>(&self, ps: &ParamStore<F>, x: &Tensor<F>) -> Tensor<F> {
        let y = self.norm1.forward(ps, &self.conv1.forward(ps, x)).relu();
        let y = self.norm2.forward(ps, &self.conv2.forward(ps, &y));
        let skip = match &self.shortcut {
            Some((conv, norm)) => norm.forward(ps, &conv.forward(ps, x)),
            None => x.clone(),
        };
        y.add(&skip).relu()
    }
}

#[derive(Clone, Debug)]
enum Recurrent {
    Lstm(Vec<Lstm>),
    BiGru(Vec<(Gru, Gru)>),
}

#[derive(Clone, Debug)]
pub struct ClassifierOutput<F: Float> {
    pub logits: Tensor<F>,
    /// Softmax of `logits`, `[N, classes]`.
    pub probs: Tensor<F>,
    /// Recurrent feature `[N, feature_dim]`.
    pub features: Tensor<F>,
}

/// Word classifier: spatio-temporal front conv, per-frame residual trunk,
/// global average pooling, recurrent backend, linear softmax head.
#[derive(Clone, Debug)]
pub struct Classifier {
    config: ClassifierConfig,
    front: Conv3d,
    front_norm: InstanceNorm,
    blocks: Vec<BasicBlock>,
    recurrent: Recurrent,
    head: Linear,
}

impl Classifier {
    pub fn new<F: Float, R: Rng + ?Sized>(
        config: ClassifierConfig,
        ps: &mut ParamStore<F>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let eps = config.norm_eps;
        let pad = config.front_kernel.map(|k| k / 2);
        let front = Conv3d::new(
            ps,
            rng,
            "front",
            config.in_channels,
            config.front_width,
            config.front_kernel,
            ConvGeometry::new(config.front_stride, pad),
            false,
        );
        let front_norm = InstanceNorm::new(ps, "front.norm", config.front_width, eps);
        let mut blocks = Vec::new();
        let mut cin = config.front_width;
        for (s, ((&w, &n), &stride)) in config
            .stage_widths
            .iter()
            .zip(&config.stage_blocks)
            .zip(&config.stage_strides)
            .enumerate()
        {
            for b in 0..n {
                let st = if b == 0 { stride } else { 1 };
                blocks.push(BasicBlock::new(
                    ps,
                    rng,
                    &format!("stage{s}.block{b}"),
                    cin,
                    w,
                    st,
                    eps,
                ));
                cin = w;
            }
        }
        let h = config.hidden;
        let recurrent = match config.backend {
            RecurrentBackend::Lstm => Recurrent::Lstm(
                (0..config.recurrent_layers)
                    .map(|l| {
                        Lstm::new(
                            ps,
                            rng,
                            &format!("lstm{l}"),
                            if l == 0 { cin } else { h },
                            h,
                        )
                    })
                    .collect(),
            ),
            RecurrentBackend::BiGru => Recurrent::BiGru(
                (0..config.recurrent_layers)
                    .map(|l| {
                        let input = if l == 0 { cin } else { 2 * h };
                        (
                            Gru::new(ps, rng, &format!("gru{l}.fwd"), input, h),
                            Gru::new(ps, rng, &format!("gru{l}.bwd"), input, h),
                        )
                    })
                    .collect(),
            ),
        };
        let head = Linear::new(ps, rng, "head", config.feature_dim(), config.classes);
        Ok(Classifier {
            config,
            front,
            front_norm,
            blocks,
            recurrent,
            head,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn check_input<F: Float>(&self, x: &Tensor<F>) -> Result<()> {
        let s = x.shape();
        if s.len() != 5 || s[1] != self.config.in_channels {
            return Err(Error::shape(format!(
                "classifier expects [N, {}, T, H, W], got {s:?}",
                self.config.in_channels
            )));
        }
        let mut dims = [s[2], s[3], s[4]];
        let pad = self.config.front_kernel.map(|k| k / 2);
        dims = ConvGeometry::new(self.config.front_stride, pad)
            .output_dims(dims, self.config.front_kernel)
            .ok_or_else(|| {
                Error::shape(format!(
                    "classifier front conv does not fit input {:?}",
                    &s[2..]
                ))
            })?;
        for &st in &self.config.stage_strides {
            if dims[1] < st || dims[2] < st {
                return Err(Error::shape(format!(
                    "classifier trunk shrinks input {:?} to nothing",
                    &s[2..]
                )));
            }
            dims = [dims[0], (dims[1] - 1) / st + 1, (dims[2] - 1) / st + 1];
        }
        Ok(())
    }

    /// Recurrent feature only.
    pub fn features<F: Float>(&self, ps: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_input(x)?;
        let mut y = self
            .front_norm
            .forward(ps, &self.front.forward(ps, x))
            .relu();
        for b in &self.blocks {
            y = b.forward(ps, &y);
        }
        let steps = time_steps(&y.mean_axes_keepdim(&[3, 4]));
        Ok(match &self.recurrent {
            Recurrent::Lstm(layers) => {
                let mut seq = steps;
                for l in layers {
                    seq = l.forward(ps, &seq);
                }
                seq.pop().expect("at least one frame")
            }
            Recurrent::BiGru(layers) => {
                let mut seq = steps;
                let mut last = None;
                for (fwd, bwd) in layers {
                    let f = fwd.forward(ps, &seq);
                    let rev: Vec<Tensor<F>> = seq.iter().rev().cloned().collect();
                    let mut b = bwd.forward(ps, &rev);
                    b.reverse();
                    last = Some(Tensor::concat(&[f[f.len() - 1].clone(), b[0].clone()], 1));
                    seq = f
                        .iter()
                        .zip(&b)
                        .map(|(a, c)| Tensor::concat(&[a.clone(), c.clone()], 1))
                        .collect();
                }
                last.expect("at least one layer")
            }
        })
    }

    pub fn forward<F: Float>(
        &self,
        ps: &ParamStore<F>,
        x: &Tensor<F>,
    ) -> Result<ClassifierOutput<F>> {
        let features = self.features(ps, x)?;
        let logits = self.head.forward(ps, &features);
        let probs = softmax_rows(&logits);
        Ok(ClassifierOutput {
            logits,
            probs,
            features,
        })
    }
}
