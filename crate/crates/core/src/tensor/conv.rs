//! 3-D convolution over `[N, C, T, H, W]` tensors.
//!
//! The three bilinear maps below (convolution, its adjoint in the input and
//! its adjoint in the kernel) are closed under differentiation, so any
//! number of backward passes stays within this module.

use rayon::prelude::*;

use super::{Backward, Float, Tensor};

/// Per-axis (time, height, width) stride and zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeometry {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeometry {
    pub fn new(stride: [usize; 3], pad: [usize; 3]) -> Self {
        ConvGeometry { stride, pad }
    }

    /// Output extent of a convolution along each axis, or `None` when the
    /// kernel does not fit.
    pub fn output_dims(&self, input: [usize; 3], kernel: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            let padded = input[i] + 2 * self.pad[i];
            if padded < kernel[i] || self.stride[i] == 0 {
                return None;
            }
            out[i] = (padded - kernel[i]) / self.stride[i] + 1;
        }
        Some(out)
    }

    /// Extent produced by the transposed convolution of an `input`-sized map.
    pub fn transposed_dims(&self, input: [usize; 3], kernel: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            let full = (input[i].checked_sub(1)?) * self.stride[i] + kernel[i];
            out[i] = full.checked_sub(2 * self.pad[i])?;
        }
        Some(out)
    }
}

fn spatial(shape: &[usize]) -> [usize; 3] {
    [shape[2], shape[3], shape[4]]
}

struct Layout {
    cin: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    geom: ConvGeometry,
}

impl Layout {
    fn k(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    fn l(&self) -> usize {
        self.output.iter().product()
    }

    fn in_len(&self) -> usize {
        self.cin * self.input.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.geom.stride == [1, 1, 1] && self.geom.pad == [0, 0, 0]
    }

    /// Visits (column offset, input offset) for every valid
    /// tap. Padding taps are skipped.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let [t, h, w] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [to, ho, wo] = self.output;
        let [st, sh, sw] = self.geom.stride;
        let [pt, ph, pw] = self.geom.pad;
        let l = self.l();
        for ci in 0..self.cin {
            for a in 0..kt {
                for b in 0..kh {
                    for d in 0..kw {
                        let row = ((ci * kt + a) * kh + b) * kw + d;
                        for ot in 0..to {
                            let it = (ot * st + a) as isize - pt as isize;
                            if it < 0 || it >= t as isize {
                                continue;
                            }
                            for oh in 0..ho {
                                let ih = (oh * sh + b) as isize - ph as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                let base_in = ((ci * t + it as usize) * h + ih as usize) * w;
                                let base_out = row * l + (ot * ho + oh) * wo;
                                for ow in 0..wo {
                                    let iw = (ow * sw + d) as isize - pw as isize;
                                    if iw < 0 || iw >= w as isize {
                                        continue;
                                    }
                                    f(base_out + ow, base_in + iw as usize);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col<F: Float>(&self, x: &[F], col: &mut [F]) {
        col.iter_mut().for_each(|v| *v = F::zero());
        self.for_each_tap(|c, i| col[c] = x[i]);
    }

    fn col2im<F: Float>(&self, col: &[F], x: &mut [F]) {
        self.for_each_tap(|c, i| x[i] += col[c]);
    }
}

/// `y[co, l] = Σ_k w[co, k] · col[k, l]` for one sample.
fn gemm_forward<F: Float>(
    lay: &Layout,
    cout: usize,
    w: &[F],
    x: &[F],
    col: &mut Vec<F>,
    y: &mut [F],
) {
    let (k, l) = (lay.k(), lay.l());
    let src: &[F] = if lay.is_pointwise() {
        x
    } else {
        col.resize(k * l, F::zero());
        lay.im2col(x, col);
        col
    };
    // SAFETY: w is cout x k, src is k x l, y is cout x l, all row-major.
    unsafe {
        F::gemm(
            cout,
            k,
            l,
            F::one(),
            w.as_ptr(),
            k as isize,
            1,
            src.as_ptr(),
            l as isize,
            1,
            F::zero(),
            y.as_mut_ptr(),
            l as isize,
            1,
        );
    }
}

pub(crate) fn conv3d_forward<F: Float>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    geom: ConvGeometry,
) -> (Vec<F>, Vec<usize>) {
    let (n, cin) = (x.dim(0), x.dim(1));
    let (cout, wcin) = (w.dim(0), w.dim(1));
    assert_eq!(
        cin,
        wcin,
        "conv3d channel mismatch: input {:?}, weight {:?}",
        x.shape(),
        w.shape()
    );
    let kernel = spatial(w.shape());
    let output = geom
        .output_dims(spatial(x.shape()), kernel)
        .unwrap_or_else(|| {
            panic!(
                "conv3d kernel {kernel:?} does not fit input {:?}",
                x.shape()
            )
        });
    let lay = Layout {
        cin,
        input: spatial(x.shape()),
        kernel,
        output,
        geom,
    };
    let (in_len, l) = (lay.in_len(), lay.l());
    let mut out = vec![F::zero(); n * cout * l];
    let (xd, wd) = (x.data(), w.data());
    if l > 0 {
        out.par_chunks_mut(cout * l)
            .enumerate()
            .for_each_init(Vec::new, |col, (i, y)| {
                gemm_forward(&lay, cout, wd, &xd[i * in_len..(i + 1) * in_len], col, y);
            });
    }
    (out, vec![n, cout, output[0], output[1], output[2]])
}

/// Adjoint of the convolution in its input: maps `[N, Co, To, Ho, Wo]` to
/// `[N, Ci, input...]`.
pub(crate) fn conv3d_input_adjoint<F: Float>(
    g: &Tensor<F>,
    w: &Tensor<F>,
    geom: ConvGeometry,
    input: [usize; 3],
) -> (Vec<F>, Vec<usize>) {
    let (n, cout) = (g.dim(0), g.dim(1));
    assert_eq!(
        cout,
        w.dim(0),
        "transposed conv channel mismatch: {:?} vs weight {:?}",
        g.shape(),
        w.shape()
    );
    let cin = w.dim(1);
    let kernel = spatial(w.shape());
    let output = spatial(g.shape());
    debug_assert_eq!(geom.output_dims(input, kernel), Some(output));
    let lay = Layout {
        cin,
        input,
        kernel,
        output,
        geom,
    };
    let (in_len, k, l) = (lay.in_len(), lay.k(), lay.l());
    let mut out = vec![F::zero(); n * in_len];
    let (gd, wd) = (g.data(), w.data());
    if l > 0 && in_len > 0 {
        out.par_chunks_mut(in_len).enumerate().for_each_init(
            Vec::new,
            |col: &mut Vec<F>, (i, x)| {
                let gi = &gd[i * cout * l..(i + 1) * cout * l];
                let pointwise = lay.is_pointwise();
                if !pointwise {
                    col.resize(k * l, F::zero());
                }
                let dst: *mut F = if pointwise {
                    x.as_mut_ptr()
                } else {
                    col.as_mut_ptr()
                };
                // SAFETY: wᵀ is k x cout (w row-major cout x k), g is cout x l,
                // dst is k x l.
                unsafe {
                    F::gemm(
                        k,
                        cout,
                        l,
                        F::one(),
                        wd.as_ptr(),
                        1,
                        k as isize,
                        gi.as_ptr(),
                        l as isize,
                        1,
                        F::zero(),
                        dst,
                        l as isize,
                        1,
                    );
                }
                if !pointwise {
                    lay.col2im(col, x);
                }
            },
        );
    }
    (out, vec![n, cin, input[0], input[1], input[2]])
}

/// Adjoint of the convolution in its kernel: `[Co, Ci, kernel...]`.
pub(crate) fn conv3d_kernel_adjoint<F: Float>(
    x: &Tensor<F>,
    g: &Tensor<F>,
    geom: ConvGeometry,
    kernel: [usize; 3],
) -> (Vec<F>, Vec<usize>) {
    let (n, cin) = (x.dim(0), x.dim(1));
    let cout = g.dim(1);
    assert_eq!(n, g.dim(0));
    let lay = Layout {
        cin,
        input: spatial(x.shape()),
        kernel,
        output: spatial(g.shape()),
        geom,
    };
    debug_assert_eq!(geom.output_dims(lay.input, kernel), Some(lay.output));
    let (in_len, k, l) = (lay.in_len(), lay.k(), lay.l());
    let (xd, gd) = (x.data(), g.data());
    let partials: Vec<Vec<F>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![F::zero(); cout * k];
            if l == 0 {
                return acc;
            }
            let xi = &xd[i * in_len..(i + 1) * in_len];
            let gi = &gd[i * cout * l..(i + 1) * cout * l];
            let col_buf;
            let src: &[F] = if lay.is_pointwise() {
                xi
            } else {
                let mut c = vec![F::zero(); k * l];
                lay.im2col(xi, &mut c);
                col_buf = c;
                &col_buf
            };
            // SAFETY: g is cout x l, colᵀ is l x k, acc is cout x k.
            unsafe {
                F::gemm(
                    cout,
                    l,
                    k,
                    F::one(),
                    gi.as_ptr(),
                    l as isize,
                    1,
                    src.as_ptr(),
                    1,
                    l as isize,
                    F::zero(),
                    acc.as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
            acc
        })
        .collect();
    let mut out = vec![F::zero(); cout * k];
    for p in &partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += *v;
        }
    }
    (out, vec![cout, cin, kernel[0], kernel[1], kernel[2]])
}

struct Conv3dOp<F: Float> {
    x: Tensor<F>,
    w: Tensor<F>,
    geom: ConvGeometry,
}

impl<F: Float> Backward<F> for Conv3dOp<F> {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn inputs(&self) -> Vec<&Tensor<F>> {
        vec![&self.x, &self.w]
    }

    fn backward(&self, _out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        vec![
            needs[0].then(|| g.conv_transpose3d(&self.w, self.geom, spatial(self.x.shape()))),
            needs[1].then(|| {
                self.x
                    .conv3d_kernel_grad(g, self.geom, spatial(self.w.shape()))
            }),
        ]
    }
}

struct ConvTranspose3dOp<F: Float> {
    x: Tensor<F>,
    w: Tensor<F>,
    geom: ConvGeometry,
}

impl<F: Float> Backward<F> for ConvTranspose3dOp<F> {
    fn name(&self) -> &'static str {
        "conv_transpose3d"
    }

    fn inputs(&self) -> Vec<&Tensor<F>> {
        vec![&self.x, &self.w]
    }

    fn backward(&self, _out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        vec![
            needs[0].then(|| g.conv3d(&self.w, self.geom)),
            needs[1].then(|| g.conv3d_kernel_grad(&self.x, self.geom, spatial(self.w.shape()))),
        ]
    }
}

struct Conv3dKernelGradOp<F: Float> {
    x: Tensor<F>,
    g: Tensor<F>,
    geom: ConvGeometry,
}

impl<F: Float> Backward<F> for Conv3dKernelGradOp<F> {
    fn name(&self) -> &'static str {
        "conv3d_kernel_grad"
    }

    fn inputs(&self) -> Vec<&Tensor<F>> {
        vec![&self.x, &self.g]
    }

    fn backward(&self, _out: &Tensor<F>, v: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        vec![
            needs[0].then(|| {
                self.g
                    .conv_transpose3d(v, self.geom, spatial(self.x.shape()))
            }),
            needs[1].then(|| self.x.conv3d(v, self.geom)),
        ]
    }
}

impl<F: Float> Tensor<F> {
    /// Cross-correlation of `[N, Ci, T, H, W]` with a `[Co, Ci, kt, kh, kw]`
    /// kernel (no bias).
    pub fn conv3d(&self, w: &Tensor<F>, geom: ConvGeometry) -> Tensor<F> {
        assert_eq!(
            self.rank(),
            5,
            "conv3d input must be [N, C, T, H, W], got {:?}",
            self.shape()
        );
        assert_eq!(
            w.rank(),
            5,
            "conv3d kernel must be 5-D, got {:?}",
            w.shape()
        );
        let (data, shape) = conv3d_forward(self, w, geom);
        Tensor::from_op(
            data,
            shape,
            Conv3dOp {
                x: self.clone(),
                w: w.clone(),
                geom,
            },
        )
    }

    /// Transposed convolution: the adjoint of `conv3d(·, w, geom)` evaluated
    /// on `self`, producing an `[N, w.dim(1), output...]` tensor.
    pub fn conv_transpose3d(
        &self,
        w: &Tensor<F>,
        geom: ConvGeometry,
        output: [usize; 3],
    ) -> Tensor<F> {
        assert_eq!(
            self.rank(),
            5,
            "conv_transpose3d input must be 5-D, got {:?}",
            self.shape()
        );
        assert_eq!(
            geom.output_dims(output, spatial(w.shape())),
            Some(spatial(self.shape())),
            "conv_transpose3d output {output:?} inconsistent with input {:?}",
            self.shape()
        );
        let (data, shape) = conv3d_input_adjoint(self, w, geom, output);
        Tensor::from_op(
            data,
            shape,
            ConvTranspose3dOp {
                x: self.clone(),
                w: w.clone(),
                geom,
            },
        )
    }

    /// Gradient of `⟨g, conv3d(self, w)⟩` with respect to `w`.
    pub fn conv3d_kernel_grad(
        &self,
        g: &Tensor<F>,
        geom: ConvGeometry,
        kernel: [usize; 3],
    ) -> Tensor<F> {
        let (data, shape) = conv3d_kernel_adjoint(self, g, geom, kernel);
        Tensor::from_op(
            data,
            shape,
            Conv3dKernelGradOp {
                x: self.clone(),
                g: g.clone(),
                geom,
            },
        )
    }
}
