use super::{numel, Backward, Float, Tensor};

struct ReshapeOp<F: Float> {
    x: Tensor<F>,
}

impl<F: Float> Backward<F> for ReshapeOp<F> {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn inputs(&self) -> Vec<&Tensor<F>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        vec![needs[0].then(|| g.reshape(self.x.shape()))]
    }
}

struct PermuteOp<F: Float> {
    x: Tensor<F>,
    perm: Vec<usize>,
}

impl<F: Float> Backward<F> for PermuteOp<F> {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn inputs(&self) -> Vec<&Tensor<F>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let mut inv = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        vec![needs[0].then(|| g.permute(&inv))]
    }
}

struct NarrowOp<F: Float> {
    x: Tensor<F>,
    axis: usize,
    start: usize,
}

impl<F: Float> Backward<F> for NarrowOp<F> {
    fn name(&self) -> &'static str {
        "narrow"
    }

    fn inputs(&self) -> Vec<&Tensor<F>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let before = self.start;
        let after = self.x.dim(self.axis) - self.start - g.dim(self.axis);
        vec![needs[0].then(|| g.pad_axis(self.axis, before, after))]
    }
}

struct PadOp<F: Float> {
    x: Tensor<F>,
    axis: usize,
    before: usize,
}

impl<F: Float> Backward<F> for PadOp<F> {
    fn name(&self) -> &'static str {
        "pad_axis"
    }

    fn inputs(&self) -> Vec<&Tensor<F>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        vec![needs[0].then(|| g.narrow(self.axis, self.before, self.x.dim(self.axis)))]
    }
}

struct ConcatOp<F: Float> {
    parts: Vec<Tensor<F>>,
    axis: usize,
}

impl<F: Float> Backward<F> for ConcatOp<F> {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn inputs(&self) -> Vec<&Tensor<F>> {
        self.parts.iter().collect()
    }

    fn backward(&self, _out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let mut start = 0;
        self.parts
            .iter()
            .zip(needs)
            .map(|(p, &need)| {
                let len = p.dim(self.axis);
                let r = need.then(|| g.narrow(self.axis, start, len));
                start += len;
                r
            })
            .collect()
    }
}

/// (outer, axis, inner) decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<F: Float> Tensor<F> {
    pub fn reshape(&self, shape: &[usize]) -> Tensor<F> {
        assert_eq!(
            numel(shape),
            self.numel(),
            "cannot reshape {:?} to {:?}",
            self.shape(),
            shape
        );
        if shape == self.shape() {
            return self.clone();
        }
        Tensor::from_op_shared(
            self.storage().clone(),
            shape.to_vec(),
            ReshapeOp { x: self.clone() },
        )
    }

    pub fn permute(&self, perm: &[usize]) -> Tensor<F> {
        let rank = self.rank();
        assert_eq!(perm.len(), rank);
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return self.clone();
        }
        let src = self.shape();
        let out_shape: Vec<usize> = perm.iter().map(|&p| src[p]).collect();
        let mut src_strides = vec![1usize; rank];
        for d in (0..rank.saturating_sub(1)).rev() {
            src_strides[d] = src_strides[d + 1] * src[d + 1];
        }
        let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let data = self.data();
        let n = self.numel();
        let mut res = Vec::with_capacity(n);
        if n > 0 {
            let inner = out_shape[rank - 1];
            let is = strides[rank - 1];
            let mut idx = vec![0usize; rank - 1];
            let mut off = 0usize;
            for _ in 0..n / inner {
                for j in 0..inner {
                    res.push(data[off + j * is]);
                }
                for d in (0..rank - 1).rev() {
                    idx[d] += 1;
                    off += strides[d];
                    if idx[d] < out_shape[d] {
                        break;
                    }
                    off -= strides[d] * out_shape[d];
                    idx[d] = 0;
                }
            }
        }
        Tensor::from_op(
            res,
            out_shape,
            PermuteOp {
                x: self.clone(),
                perm: perm.to_vec(),
            },
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor<F> {
        assert!(start + len <= self.dim(axis), "narrow out of range");
        if start == 0 && len == self.dim(axis) {
            return self.clone();
        }
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let data = self.data();
        let mut res = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            res.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Tensor::from_op(
            res,
            shape,
            NarrowOp {
                x: self.clone(),
                axis,
                start,
            },
        )
    }

    /// Zero padding along one axis.
    pub fn pad_axis(&self, axis: usize, before: usize, after: usize) -> Tensor<F> {
        if before == 0 && after == 0 {
            return self.clone();
        }
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let total = n + before + after;
        let data = self.data();
        let mut res = vec![F::zero(); outer * total * inner];
        for o in 0..outer {
            let dst = (o * total + before) * inner;
            res[dst..dst + n * inner].copy_from_slice(&data[o * n * inner..(o + 1) * n * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = total;
        Tensor::from_op(
            res,
            shape,
            PadOp {
                x: self.clone(),
                axis,
                before,
            },
        )
    }

    pub fn concat(parts: &[Tensor<F>], axis: usize) -> Tensor<F> {
        assert!(!parts.is_empty(), "concat of nothing");
        if parts.len() == 1 {
            return parts[0].clone();
        }
        let first = parts[0].shape();
        for p in parts {
            assert_eq!(p.rank(), first.len());
            for d in 0..first.len() {
                assert!(
                    d == axis || p.dim(d) == first[d],
                    "concat shape mismatch {:?} vs {:?}",
                    first,
                    p.shape()
                );
            }
        }
        let (outer, _, inner) = split_axis(first, axis);
        let total: usize = parts.iter().map(|p| p.dim(axis)).sum();
        let mut res = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let n = p.dim(axis) * inner;
                res.extend_from_slice(&p.data()[o * n..(o + 1) * n]);
            }
        }
        let mut shape = first.to_vec();
        shape[axis] = total;
        Tensor::from_op(
            res,
            shape,
            ConcatOp {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor<F>]) -> Tensor<F> {
        let reshaped: Vec<Tensor<F>> = parts
            .iter()
            .map(|p| {
                let mut s = vec![1];
                s.extend_from_slice(p.shape());
                p.reshape(&s)
            })
            .collect();
        Tensor::concat(&reshaped, 0)
    }

    /// 2-D transpose.
    pub fn t(&self) -> Tensor<F> {
        assert_eq!(self.rank(), 2);
        self.permute(&[1, 0])
    }
}
