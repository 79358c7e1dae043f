use rand::Rng;

use super::params::{normal_vec, orthogonal_vec, uniform_vec, ParamId, ParamStore};
use crate::tensor::{ConvGeometry, Float, Tensor};

/// Std of the Gaussian used for every convolution kernel.
pub const CONV_INIT_STD: f64 = 0.02;

/// Kernel extent used for a given stride: 4 when downsampling by 2, 3 when
/// keeping the size (both with padding 1).
pub fn kernel_for_stride(stride: usize) -> usize {
    if stride == 2 {
        4
    } else {
        3
    }
}

fn geometry_for(strides: [usize; 3]) -> ([usize; 3], ConvGeometry) {
    (
        strides.map(kernel_for_stride),
        ConvGeometry::new(strides, [1, 1, 1]),
    )
}

#[derive(Clone, Debug)]
pub struct Conv3d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub geom: ConvGeometry,
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Float, R: Rng + ?Sized>(
        ps: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        geom: ConvGeometry,
        bias: bool,
    ) -> Self {
        let n = cout * cin * kernel.iter().product::<usize>();
        let w = ps.add(
            format!("{name}.weight"),
            normal_vec(rng, n, CONV_INIT_STD),
            &[cout, cin, kernel[0], kernel[1], kernel[2]],
        );
        let b = bias.then(|| ps.add(format!("{name}.bias"), vec![F::zero(); cout], &[cout]));
        Conv3d {
            w,
            b,
            cin,
            cout,
            kernel,
            geom,
        }
    }

    /// Kernel 4 for stride 2, kernel 3 for stride 1, padding 1.
    pub fn strided<F: Float, R: Rng + ?Sized>(
        ps: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        strides: [usize; 3],
        bias: bool,
    ) -> Self {
        let (kernel, geom) = geometry_for(strides);
        Self::new(ps, rng, name, cin, cout, kernel, geom, bias)
    }

    pub fn output_dims(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        self.geom.output_dims(input, self.kernel)
    }

    pub fn forward<F: Float>(&self, ps: &ParamStore<F>, x: &Tensor<F>) -> Tensor<F> {
        let y = x.conv3d(ps.get(self.w), self.geom);
        match self.b {
            Some(b) => y.add(&ps.get(b).reshape(&[1, self.cout, 1, 1, 1])),
            None => y,
        }
    }
}

/// Transposed 3-D convolution; `forward` needs the target output extent
/// because strided convolutions are not invertible in size.
#[derive(Clone, Debug)]
pub struct ConvTranspose3d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub geom: ConvGeometry,
}

impl ConvTranspose3d {
    pub fn strided<F: Float, R: Rng + ?Sized>(
        ps: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        strides: [usize; 3],
        bias: bool,
    ) -> Self {
        let (kernel, geom) = geometry_for(strides);
        let n = cin * cout * kernel.iter().product::<usize>();
        let w = ps.add(
            format!("{name}.weight"),
            normal_vec(rng, n, CONV_INIT_STD),
            &[cin, cout, kernel[0], kernel[1], kernel[2]],
        );
        let b = bias.then(|| ps.add(format!("{name}.bias"), vec![F::zero(); cout], &[cout]));
        ConvTranspose3d {
            w,
            b,
            cin,
            cout,
            kernel,
            geom,
        }
    }

    pub fn forward<F: Float>(
        &self,
        ps: &ParamStore<F>,
        x: &Tensor<F>,
        output: [usize; 3],
    ) -> Tensor<F> {
        let y = x.conv_transpose3d(ps.get(self.w), self.geom, output);
        match self.b {
            Some(b) => y.add(&ps.get(b).reshape(&[1, self.cout, 1, 1, 1])),
            None => y,
        }
    }
}

/// Per-sample, per-channel normalization over (T, H, W) with a learned
/// per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct InstanceNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub eps: f64,
}

impl InstanceNorm {
    pub fn new<F: Float>(ps: &mut ParamStore<F>, name: &str, channels: usize, eps: f64) -> Self {
        InstanceNorm {
            gamma: ps.add(
                format!("{name}.gamma"),
                vec![F::one(); channels],
                &[channels],
            ),
            beta: ps.add(
                format!("{name}.beta"),
                vec![F::zero(); channels],
                &[channels],
            ),
            channels,
            eps,
        }
    }

    pub fn forward<F: Float>(&self, ps: &ParamStore<F>, x: &Tensor<F>) -> Tensor<F> {
        let axes = [2, 3, 4];
        let centered = x.sub(&x.mean_axes_keepdim(&axes));
        let var = centered.square().mean_axes_keepdim(&axes);
        let inv = var.add_scalar(self.eps).sqrt().recip_nonzero();
        let shape = [1, self.channels, 1, 1, 1];
        centered
            .mul(&inv)
            .mul(&ps.get(self.gamma).reshape(&shape))
            .add(&ps.get(self.beta).reshape(&shape))
    }
}

/// `y = x · W + b` with `W` of shape `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new<F: Float, R: Rng + ?Sized>(
        ps: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Linear {
            w: ps.add(
                format!("{name}.weight"),
                uniform_vec(rng, fan_in * fan_out, bound),
                &[fan_in, fan_out],
            ),
            b: ps.add(format!("{name}.bias"), vec![F::zero(); fan_out], &[fan_out]),
            fan_in,
            fan_out,
        }
    }

    pub fn forward<F: Float>(&self, ps: &ParamStore<F>, x: &Tensor<F>) -> Tensor<F> {
        x.matmul(ps.get(self.w))
            .add(&ps.get(self.b).reshape(&[1, self.fan_out]))
    }
}

/// Gate blocks of a recurrent matrix, each initialized orthogonal.
fn gated_orthogonal<F: Float, R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    hidden: usize,
    gates: usize,
) -> Vec<F> {
    let blocks: Vec<Vec<F>> = (0..gates)
        .map(|_| orthogonal_vec(rng, rows, hidden))
        .collect();
    let mut out = Vec::with_capacity(rows * hidden * gates);
    for r in 0..rows {
        for b in &blocks {
            out.extend_from_slice(&b[r * hidden..(r + 1) * hidden]);
        }
    }
    out
}

/// Single LSTM layer, gate order (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<F: Float, R: Rng + ?Sized>(
        ps: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        let mut bias = vec![F::zero(); 4 * hidden];
        // forget gate starts open
        bias[hidden..2 * hidden]
            .iter_mut()
            .for_each(|v| *v = F::one());
        Lstm {
            w_ih: ps.add(
                format!("{name}.w_ih"),
                gated_orthogonal(rng, input, hidden, 4),
                &[input, 4 * hidden],
            ),
            w_hh: ps.add(
                format!("{name}.w_hh"),
                gated_orthogonal(rng, hidden, hidden, 4),
                &[hidden, 4 * hidden],
            ),
            b: ps.add(format!("{name}.bias"), bias, &[4 * hidden]),
            input,
            hidden,
        }
    }

    /// Hidden states for every step of `xs` (each `[N, input]`).
    pub fn forward<F: Float>(&self, ps: &ParamStore<F>, xs: &[Tensor<F>]) -> Vec<Tensor<F>> {
        let n = xs[0].dim(0);
        let h_ = self.hidden;
        let mut h = Tensor::zeros(&[n, h_]);
        let mut c = Tensor::zeros(&[n, h_]);
        let b = ps.get(self.b).reshape(&[1, 4 * h_]);
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let gates = x
                .matmul(ps.get(self.w_ih))
                .add(&h.matmul(ps.get(self.w_hh)))
                .add(&b);
            let i = gates.narrow(1, 0, h_).sigmoid();
            let f = gates.narrow(1, h_, h_).sigmoid();
            let g = gates.narrow(1, 2 * h_, h_).tanh();
            let o = gates.narrow(1, 3 * h_, h_).sigmoid();
            c = f.mul(&c).add(&i.mul(&g));
            h = o.mul(&c.tanh());
            out.push(h.clone());
        }
        out
    }
}

/// Single GRU layer, gate order (reset, update, new).
#[derive(Clone, Debug)]
pub struct Gru {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new<F: Float, R: Rng + ?Sized>(
        ps: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        Gru {
            w_ih: ps.add(
                format!("{name}.w_ih"),
                gated_orthogonal(rng, input, hidden, 3),
                &[input, 3 * hidden],
            ),
            w_hh: ps.add(
                format!("{name}.w_hh"),
                gated_orthogonal(rng, hidden, hidden, 3),
                &[hidden, 3 * hidden],
            ),
            b_ih: ps.add(
                format!("{name}.b_ih"),
                vec![F::zero(); 3 * hidden],
                &[3 * hidden],
            ),
            b_hh: ps.add(
                format!("{name}.b_hh"),
                vec![F::zero(); 3 * hidden],
                &[3 * hidden],
            ),
            input,
            hidden,
        }
    }

    pub fn forward<F: Float>(&self, ps: &ParamStore<F>, xs: &[Tensor<F>]) -> Vec<Tensor<F>> {
        let n = xs[0].dim(0);
        let h_ = self.hidden;
        let mut h = Tensor::zeros(&[n, h_]);
        let b_ih = ps.get(self.b_ih).reshape(&[1, 3 * h_]);
        let b_hh = ps.get(self.b_hh).reshape(&[1, 3 * h_]);
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let gi = x.matmul(ps.get(self.w_ih)).add(&b_ih);
            let gh = h.matmul(ps.get(self.w_hh)).add(&b_hh);
            let r = gi.narrow(1, 0, h_).add(&gh.narrow(1, 0, h_)).sigmoid();
            let z = gi.narrow(1, h_, h_).add(&gh.narrow(1, h_, h_)).sigmoid();
            let cand = gi
                .narrow(1, 2 * h_, h_)
                .add(&r.mul(&gh.narrow(1, 2 * h_, h_)))
                .tanh();
            // h' = (1 - z) * n + z * h = n + z * (h - n)
            h = cand.add(&z.mul(&h.sub(&cand)));
            out.push(h.clone());
        }
        out
    }
}

/// Row-wise softmax of `[N, L]` logits (max-shifted).
pub fn softmax_rows<F: Float>(logits: &Tensor<F>) -> Tensor<F> {
    let (n, l) = (logits.dim(0), logits.dim(1));
    let d = logits.data();
    let max: Vec<F> = (0..n)
        .map(|i| {
            d[i * l..(i + 1) * l]
                .iter()
                .copied()
                .fold(F::neg_infinity(), F::max)
        })
        .collect();
    let shifted = logits.sub(&Tensor::from_vec(max, &[n, 1]));
    let e = shifted.exp();
    e.div(&e.sum_axes_keepdim(&[1]))
}

/// Splits `[N, C, T, 1, 1]` pooled maps into T tensors of shape `[N, C]`.
pub fn time_steps<F: Float>(x: &Tensor<F>) -> Vec<Tensor<F>> {
    let (n, c, t) = (x.dim(0), x.dim(1), x.dim(2));
    let seq = x.reshape(&[n, c, t]).permute(&[2, 0, 1]);
    (0..t)
        .map(|i| seq.narrow(0, i, 1).reshape(&[n, c]))
        .collect()
}
