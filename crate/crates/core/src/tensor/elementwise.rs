use super::{numel, Backward, Float, Tensor};

/// Shape both operands broadcast to (numpy rules).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    (0..rank)
        .map(|i| {
            let da = if i + a.len() >= rank {
                a[i + a.len() - rank]
            } else {
                1
            };
            let db = if i + b.len() >= rank {
                b[i + b.len() - rank]
            } else {
                1
            };
            match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => panic!("shapes {a:?} and {b:?} do not broadcast"),
            }
        })
        .collect()
}

/// Element strides of `shape` viewed inside `out`; broadcast axes get 0.
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        if d < offset {
            continue;
        }
        let n = shape[d - offset];
        strides[d] = if n == 1 { 0 } else { acc };
        acc *= n;
    }
    strides
}

/// Visits every element of `out` in row-major order, passing the element's
/// offsets into two strided operands.
fn for_each_pair(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let inner = out[rank - 1];
    if inner == 0 {
        return;
    }
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let outer = numel(out) / inner;
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..outer {
        for j in 0..inner {
            f(oa + j * ia, ob + j * ib);
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn binary_map<F: Float>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    f: impl Fn(F, F) -> F,
) -> (Vec<F>, Vec<usize>) {
    let (ad, bd) = (a.data(), b.data());
    if a.shape() == b.shape() {
        return (
            ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            a.shape().to_vec(),
        );
    }
    let out = broadcast_shape(a.shape(), b.shape());
    if bd.len() == 1 && out == a.shape() {
        let y = bd[0];
        return (ad.iter().map(|&x| f(x, y)).collect(), out);
    }
    if ad.len() == 1 && out == b.shape() {
        let x = ad[0];
        return (bd.iter().map(|&y| f(x, y)).collect(), out);
    }
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut res = Vec::with_capacity(numel(&out));
    for_each_pair(&out, &sa, &sb, |i, j| res.push(f(ad[i], bd[j])));
    (res, out)
}

#[derive(Clone, Copy, Debug)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

struct BinaryOp<F: Float> {
    kind: BinaryKind,
    a: Tensor<F>,
    b: Tensor<F>,
}

impl<F: Float> Backward<F> for BinaryOp<F> {
    fn name(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }

    fn inputs(&self) -> Vec<&Tensor<F>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let (a, b) = (&self.a, &self.b);
        let ga = needs[0].then(|| {
            match self.kind {
                BinaryKind::Add | BinaryKind::Sub => g.clone(),
                BinaryKind::Mul => g.mul(b),
                BinaryKind::Div => g.div(b),
            }
            .sum_to(a.shape())
        });
        let gb = needs[1].then(|| {
            match self.kind {
                BinaryKind::Add => g.clone(),
                BinaryKind::Sub => g.neg(),
                BinaryKind::Mul => g.mul(a),
                BinaryKind::Div => g.mul(out).div(b).neg(),
            }
            .sum_to(b.shape())
        });
        vec![ga, gb]
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum UnaryKind {
    Exp,
    Log,
    Tanh,
    Sigmoid,
    /// Square root whose derivative at 0 is taken to be 0.
    Sqrt,
    /// `1/x`, with 0 mapped to 0.
    RecipNonzero,
    Relu,
    LeakyRelu(f64),
    Abs,
    Clamp(f64, f64),
    MulScalar(f64),
    AddScalar(f64),
}

struct UnaryOp<F: Float> {
    kind: UnaryKind,
    x: Tensor<F>,
}

fn mask_like<F: Float>(x: &Tensor<F>, f: impl Fn(F) -> F) -> Tensor<F> {
    Tensor::from_vec(x.data().iter().map(|&v| f(v)).collect(), x.shape())
}

impl<F: Float> Backward<F> for UnaryOp<F> {
    fn name(&self) -> &'static str {
        match self.kind {
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::RecipNonzero => "recip_nonzero",
            UnaryKind::Relu => "relu",
            UnaryKind::LeakyRelu(_) => "leaky_relu",
            UnaryKind::Abs => "abs",
            UnaryKind::Clamp(..) => "clamp",
            UnaryKind::MulScalar(_) => "mul_scalar",
            UnaryKind::AddScalar(_) => "add_scalar",
        }
    }

    fn inputs(&self) -> Vec<&Tensor<F>> {
        vec![&self.x]
    }

    fn backward(&self, out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        if !needs[0] {
            return vec![None];
        }
        let x = &self.x;
        let zero = F::zero();
        let one = F::one();
        let gx = match self.kind {
            UnaryKind::Exp => g.mul(out),
            UnaryKind::Log => g.div(x),
            UnaryKind::Tanh => g.mul(&out.square().neg().add_scalar(1.0)),
            UnaryKind::Sigmoid => g.mul(&out.mul(&out.neg().add_scalar(1.0))),
            UnaryKind::Sqrt => g.mul(&out.recip_nonzero()).mul_scalar(0.5),
            UnaryKind::RecipNonzero => g.mul(&out.square()).neg(),
            UnaryKind::Relu => g.mul(&mask_like(x, |v| if v > zero { one } else { zero })),
            UnaryKind::LeakyRelu(s) => {
                let s = F::num(s);
                g.mul(&mask_like(x, |v| if v > zero { one } else { s }))
            }
            UnaryKind::Abs => g.mul(&mask_like(x, |v| {
                if v > zero {
                    one
                } else if v < zero {
                    -one
                } else {
                    zero
                }
            })),
            UnaryKind::Clamp(lo, hi) => {
                let (lo, hi) = (F::num(lo), F::num(hi));
                g.mul(&mask_like(
                    x,
                    |v| if v >= lo && v <= hi { one } else { zero },
                ))
            }
            UnaryKind::MulScalar(c) => g.mul_scalar(c),
            UnaryKind::AddScalar(_) => g.clone(),
        };
        vec![Some(gx)]
    }
}

pub(crate) fn unary<F: Float>(x: &Tensor<F>, kind: UnaryKind) -> Tensor<F> {
    let zero = F::zero();
    let one = F::one();
    let data: Vec<F> = match kind {
        UnaryKind::Exp => x.data().iter().map(|v| v.exp()).collect(),
        UnaryKind::Log => x.data().iter().map(|v| v.ln()).collect(),
        UnaryKind::Tanh => x.data().iter().map(|v| v.tanh()).collect(),
        UnaryKind::Sigmoid => x
            .data()
            .iter()
            .map(|&v| {
                if v >= zero {
                    one / (one + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (one + e)
                }
            })
            .collect(),
        UnaryKind::Sqrt => x.data().iter().map(|v| v.sqrt()).collect(),
        UnaryKind::RecipNonzero => x
            .data()
            .iter()
            .map(|&v| if v == zero { zero } else { one / v })
            .collect(),
        UnaryKind::Relu => x
            .data()
            .iter()
            .map(|&v| if v > zero { v } else { zero })
            .collect(),
        UnaryKind::LeakyRelu(s) => {
            let s = F::num(s);
            x.data()
                .iter()
                .map(|&v| if v > zero { v } else { v * s })
                .collect()
        }
        UnaryKind::Abs => x.data().iter().map(|v| v.abs()).collect(),
        UnaryKind::Clamp(lo, hi) => {
            let (lo, hi) = (F::num(lo), F::num(hi));
            x.data()
                .iter()
                .map(|&v| if v.is_nan() { v } else { v.max(lo).min(hi) })
                .collect()
        }
        UnaryKind::MulScalar(c) => {
            let c = F::num(c);
            x.data().iter().map(|&v| v * c).collect()
        }
        UnaryKind::AddScalar(c) => {
            let c = F::num(c);
            x.data().iter().map(|&v| v + c).collect()
        }
    };
    Tensor::from_op(data, x.shape().to_vec(), UnaryOp { kind, x: x.clone() })
}

/// Reduces a broadcast gradient back to `target` shape by summation.
struct SumToOp<F: Float> {
    x: Tensor<F>,
}

impl<F: Float> Backward<F> for SumToOp<F> {
    fn name(&self) -> &'static str {
        "sum_to"
    }

    fn inputs(&self) -> Vec<&Tensor<F>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        vec![needs[0].then(|| g.broadcast_to(self.x.shape()))]
    }
}

struct BroadcastToOp<F: Float> {
    x: Tensor<F>,
}

impl<F: Float> Backward<F> for BroadcastToOp<F> {
    fn name(&self) -> &'static str {
        "broadcast_to"
    }

    fn inputs(&self) -> Vec<&Tensor<F>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        vec![needs[0].then(|| g.sum_to(self.x.shape()))]
    }
}

impl<F: Float> Tensor<F> {
    fn binary(&self, other: &Tensor<F>, kind: BinaryKind) -> Tensor<F> {
        let (data, shape) = match kind {
            BinaryKind::Add => binary_map(self, other, |x, y| x + y),
            BinaryKind::Sub => binary_map(self, other, |x, y| x - y),
            BinaryKind::Mul => binary_map(self, other, |x, y| x * y),
            BinaryKind::Div => binary_map(self, other, |x, y| x / y),
        };
        Tensor::from_op(
            data,
            shape,
            BinaryOp {
                kind,
                a: self.clone(),
                b: other.clone(),
            },
        )
    }

    pub fn add(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary(other, BinaryKind::Div)
    }

    pub fn neg(&self) -> Tensor<F> {
        self.mul_scalar(-1.0)
    }

    pub fn square(&self) -> Tensor<F> {
        self.mul(self)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor<F> {
        unary(self, UnaryKind::MulScalar(c))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<F> {
        unary(self, UnaryKind::AddScalar(c))
    }

    pub fn exp(&self) -> Tensor<F> {
        unary(self, UnaryKind::Exp)
    }

    pub fn ln(&self) -> Tensor<F> {
        unary(self, UnaryKind::Log)
    }

    pub fn tanh(&self) -> Tensor<F> {
        unary(self, UnaryKind::Tanh)
    }

    pub fn sigmoid(&self) -> Tensor<F> {
        unary(self, UnaryKind::Sigmoid)
    }

    pub fn sqrt(&self) -> Tensor<F> {
        unary(self, UnaryKind::Sqrt)
    }

    pub fn recip_nonzero(&self) -> Tensor<F> {
        unary(self, UnaryKind::RecipNonzero)
    }

    pub fn relu(&self) -> Tensor<F> {
        unary(self, UnaryKind::Relu)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<F> {
        unary(self, UnaryKind::LeakyRelu(slope))
    }

    pub fn abs(&self) -> Tensor<F> {
        unary(self, UnaryKind::Abs)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<F> {
        unary(self, UnaryKind::Clamp(lo, hi))
    }

    /// Sums over broadcast axes so the result has shape `target`.
    pub fn sum_to(&self, target: &[usize]) -> Tensor<F> {
        if self.shape() == target {
            return self.clone();
        }
        let src = self.shape();
        assert!(
            target.len() <= src.len(),
            "cannot sum {src:?} to {target:?}"
        );
        let offset = src.len() - target.len();
        let padded: Vec<usize> = std::iter::repeat_n(1, offset)
            .chain(target.iter().copied())
            .collect();
        for (d, (&s, &t)) in src.iter().zip(&padded).enumerate() {
            assert!(
                t == s || t == 1,
                "cannot sum {src:?} to {target:?} (axis {d})"
            );
        }
        let so = broadcast_strides(&padded, src);
        let unit: Vec<usize> = vec![0; src.len()];
        let mut out = vec![F::zero(); numel(target)];
        let data = self.data();
        let mut k = 0usize;
        for_each_pair(src, &so, &unit, |o, _| {
            out[o] += data[k];
            k += 1;
        });
        Tensor::from_op(out, target.to_vec(), SumToOp { x: self.clone() })
    }

    pub fn broadcast_to(&self, target: &[usize]) -> Tensor<F> {
        if self.shape() == target {
            return self.clone();
        }
        let out = broadcast_shape(self.shape(), target);
        assert_eq!(
            out,
            target,
            "cannot broadcast {:?} to {:?}",
            self.shape(),
            target
        );
        let ss = broadcast_strides(self.shape(), target);
        let unit = vec![0; target.len()];
        let data = self.data();
        let mut res = Vec::with_capacity(numel(target));
        for_each_pair(target, &ss, &unit, |i, _| res.push(data[i]));
        Tensor::from_op(res, target.to_vec(), BroadcastToOp { x: self.clone() })
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes_keepdim(&self, axes: &[usize]) -> Tensor<F> {
        let mut target = self.shape().to_vec();
        for &a in axes {
            target[a] = 1;
        }
        self.sum_to(&target)
    }

    pub fn mean_axes_keepdim(&self, axes: &[usize]) -> Tensor<F> {
        let count: usize = axes.iter().map(|&a| self.dim(a)).product();
        self.sum_axes_keepdim(axes).mul_scalar(1.0 / count as f64)
    }

    pub fn sum_all(&self) -> Tensor<F> {
        self.sum_to(&[])
    }

    pub fn mean_all(&self) -> Tensor<F> {
        let n = self.numel().max(1);
        self.sum_all().mul_scalar(1.0 / n as f64)
    }
}

macro_rules! impl_binary_operator {
    ($trait:ident, $method:ident, $func:ident) => {
        impl<F: Float> std::ops::$trait<&Tensor<F>> for &Tensor<F> {
            type Output = Tensor<F>;
            fn $method(self, rhs: &Tensor<F>) -> Tensor<F> {
                self.$func(rhs)
            }
        }
        impl<F: Float> std::ops::$trait<Tensor<F>> for Tensor<F> {
            type Output = Tensor<F>;
            fn $method(self, rhs: Tensor<F>) -> Tensor<F> {
                Tensor::$func(&self, &rhs)
            }
        }
    };
}

impl_binary_operator!(Add, add, add);
impl_binary_operator!(Sub, sub, sub);
impl_binary_operator!(Mul, mul, mul);
impl_binary_operator!(Div, div, div);

impl<F: Float> std::ops::Neg for &Tensor<F> {
    type Output = Tensor<F>;
    fn neg(self) -> Tensor<F> {
        Tensor::neg(self)
    }
}
