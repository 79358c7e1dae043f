use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv3d, CONV_INIT_STD};
use super::params::{normal_vec, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Float, Tensor};

/// Five strided LeakyReLU conv layers shared (in structure, not weights) by
/// the patch critic and the character inspector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub max_width: usize,
    pub spatial_strides: [usize; 5],
    pub temporal_strides: [usize; 5],
    pub leaky_slope: f64,
}

impl CriticConfig {
    /// 24x64x64 input reduced to a 6x2x2 patch grid.
    pub fn paper(in_channels: usize) -> Self {
        CriticConfig {
            in_channels,
            base_width: 64,
            max_width: 1024,
            spatial_strides: [2, 2, 2, 2, 2],
            temporal_strides: [1, 1, 1, 2, 2],
            leaky_slope: 0.05,
        }
    }

    /// 8x16x16 input reduced to a 2x1x1 patch grid (the fifth layer keeps
    /// the spatial size).
    pub fn desk(in_channels: usize) -> Self {
        CriticConfig {
            base_width: 8,
            max_width: 64,
            spatial_strides: [2, 2, 2, 2, 1],
            ..Self::paper(in_channels)
        }
    }

    pub fn widths(&self) -> [usize; 5] {
        std::array::from_fn(|i| (self.base_width << i).min(self.max_width))
    }

    pub fn validate(&self) -> Result<()> {
        let strides_ok = self
            .spatial_strides
            .iter()
            .chain(&self.temporal_strides)
            .all(|&s| s == 1 || s == 2);
        if !strides_ok {
            return Err(Error::invalid("critic strides must be 1 or 2"));
        }
        if self.in_channels == 0 || self.base_width == 0 || self.max_width == 0 {
            return Err(Error::invalid("critic widths must be positive"));
        }
        Ok(())
    }

    /// (T, H, W) after the five trunk layers.
    pub fn trunk_dims(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        let mut d = dims;
        for i in 0..5 {
            let s = [
                self.temporal_strides[i],
                self.spatial_strides[i],
                self.spatial_strides[i],
            ];
            for a in 0..3 {
                if s[a] == 2 && !d[a].is_multiple_of(2) {
                    return Err(Error::shape(format!(
                        "critic layer {} halves an odd extent in input {dims:?}",
                        i + 1
                    )));
                }
                d[a] /= s[a];
            }
        }
        if d.contains(&0) {
            return Err(Error::shape(format!(
                "critic reduces input {dims:?} to nothing"
            )));
        }
        Ok(d)
    }
}

#[derive(Clone, Debug)]
struct Trunk {
    layers: Vec<Conv3d>,
    slope: f64,
    in_channels: usize,
}

impl Trunk {
    fn new<F: Float, R: Rng + ?Sized>(
        cfg: &CriticConfig,
        ps: &mut ParamStore<F>,
        rng: &mut R,
        prefix: &str,
    ) -> Self {
        let mut cin = cfg.in_channels;
        let layers = cfg
            .widths()
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let s = [
                    cfg.temporal_strides[i],
                    cfg.spatial_strides[i],
                    cfg.spatial_strides[i],
                ];
                let conv = Conv3d::strided(ps, rng, &format!("{prefix}.conv{i}"), cin, w, s, true);
                cin = w;
                conv
            })
            .collect();
        Trunk {
            layers,
            slope: cfg.leaky_slope,
            in_channels: cfg.in_channels,
        }
    }

    fn forward<F: Float>(&self, ps: &ParamStore<F>, x: &Tensor<F>) -> Tensor<F> {
        self.layers.iter().fold(x.clone(), |y, conv| {
            conv.forward(ps, &y).leaky_relu(self.slope)
        })
    }

    fn out_width(&self) -> usize {
        self.layers.last().map_or(self.in_channels, |l| l.cout)
    }
}

fn check_input<F: Float>(cfg: &CriticConfig, x: &Tensor<F>) -> Result<[usize; 3]> {
    let s = x.shape();
    if s.len() != 5 || s[1] != cfg.in_channels {
        return Err(Error::shape(format!(
            "critic expects [N, {}, T, H, W], got {s:?}",
            cfg.in_channels
        )));
    }
    cfg.trunk_dims([s[2], s[3], s[4]])
}

/// Wasserstein patch critic: a real-valued score volume, no final
/// nonlinearity.
#[derive(Clone, Debug)]
pub struct Discriminator {
    config: CriticConfig,
    trunk: Trunk,
    head: Conv3d,
}

impl Discriminator {
    pub fn new<F: Float, R: Rng + ?Sized>(
        config: CriticConfig,
        ps: &mut ParamStore<F>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let trunk = Trunk::new(&config, ps, rng, "critic");
        let head = Conv3d::strided(
            ps,
            rng,
            "critic.head",
            trunk.out_width(),
            1,
            [1, 1, 1],
            true,
        );
        Ok(Discriminator {
            config,
            trunk,
            head,
        })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    /// Score volume shape `[T', H', W']` for an input of `dims`.
    pub fn output_dims(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        self.config.trunk_dims(dims)
    }

    /// `[N, C, T, H, W]` to `[N, 1, T', H', W']`.
    pub fn forward<F: Float>(&self, ps: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        check_input(&self.config, x)?;
        Ok(self.forward_unchecked(ps, x))
    }

    pub(crate) fn forward_unchecked<F: Float>(
        &self,
        ps: &ParamStore<F>,
        x: &Tensor<F>,
    ) -> Tensor<F> {
        self.head.forward(ps, &self.trunk.forward(ps, x))
    }
}

/// Multi-label character detector: the critic trunk followed by a conv
/// whose kernel covers the whole remaining volume, one sigmoid per symbol.
#[derive(Clone, Debug)]
pub struct Inspector {
    config: CriticConfig,
    symbols: usize,
    input_dims: [usize; 3],
    trunk: Trunk,
    head: Conv3d,
}

impl Inspector {
    pub fn new<F: Float, R: Rng + ?Sized>(
        config: CriticConfig,
        symbols: usize,
        input_dims: [usize; 3],
        ps: &mut ParamStore<F>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let kernel = config.trunk_dims(input_dims)?;
        let trunk = Trunk::new(&config, ps, rng, "inspector");
        let cin = trunk.out_width();
        let n = symbols * cin * kernel.iter().product::<usize>();
        let w = ps.add(
            "inspector.head.weight",
            normal_vec(rng, n, CONV_INIT_STD),
            &[symbols, cin, kernel[0], kernel[1], kernel[2]],
        );
        let b = ps.add("inspector.head.bias", vec![F::zero(); symbols], &[symbols]);
        let head = Conv3d {
            w,
            b: Some(b),
            cin,
            cout: symbols,
            kernel,
            geom: ConvGeometry::new([1, 1, 1], [0, 0, 0]),
        };
        Ok(Inspector {
            config,
            symbols,
            input_dims,
            trunk,
            head,
        })
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn head(&self) -> &Conv3d {
        &self.head
    }

    pub fn logits<F: Float>(&self, ps: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        check_input(&self.config, x)?;
        let s = x.shape();
        if [s[2], s[3], s[4]] != self.input_dims {
            return Err(Error::shape(format!(
                "inspector built for {:?} inputs, got {:?}",
                self.input_dims,
                &s[2..]
            )));
        }
        let y = self.head.forward(ps, &self.trunk.forward(ps, x));
        Ok(y.reshape(&[s[0], self.symbols]))
    }

    /// `[N, C, T, H, W]` to per-symbol presence probabilities `[N, A]`.
    pub fn forward<F: Float>(&self, ps: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.logits(ps, x)?.sigmoid())
    }
}
