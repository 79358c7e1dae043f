use super::{Backward, Float, Tensor};

/// `op(a) · op(b)` for 2-D tensors, where `op` optionally transposes.
struct MatMulOp<F: Float> {
    a: Tensor<F>,
    b: Tensor<F>,
    ta: bool,
    tb: bool,
}

impl<F: Float> Backward<F> for MatMulOp<F> {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn inputs(&self) -> Vec<&Tensor<F>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let (a, b) = (&self.a, &self.b);
        let (ga, gb) = match (self.ta, self.tb) {
            (false, false) => (
                needs[0].then(|| g.matmul_t(b, false, true)),
                needs[1].then(|| a.matmul_t(g, true, false)),
            ),
            (true, false) => (
                needs[0].then(|| b.matmul_t(g, false, true)),
                needs[1].then(|| a.matmul_t(g, false, false)),
            ),
            (false, true) => (
                needs[0].then(|| g.matmul_t(b, false, false)),
                needs[1].then(|| g.matmul_t(a, true, false)),
            ),
            (true, true) => (
                needs[0].then(|| b.matmul_t(g, true, true)),
                needs[1].then(|| g.matmul_t(a, true, true)),
            ),
        };
        vec![ga, gb]
    }
}

impl<F: Float> Tensor<F> {
    pub fn matmul(&self, other: &Tensor<F>) -> Tensor<F> {
        self.matmul_t(other, false, false)
    }

    /// Matrix product with optional transposition of either operand.
    pub fn matmul_t(&self, other: &Tensor<F>, ta: bool, tb: bool) -> Tensor<F> {
        assert_eq!(
            self.rank(),
            2,
            "matmul lhs must be 2-D, got {:?}",
            self.shape()
        );
        assert_eq!(
            other.rank(),
            2,
            "matmul rhs must be 2-D, got {:?}",
            other.shape()
        );
        let (ar, ac) = (self.dim(0), self.dim(1));
        let (br, bc) = (other.dim(0), other.dim(1));
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(
            k,
            k2,
            "matmul inner dims differ: {:?} x {:?} (ta={ta}, tb={tb})",
            self.shape(),
            other.shape()
        );
        let mut out = vec![F::zero(); m * n];
        let (rsa, csa) = if ta {
            (1, ac as isize)
        } else {
            (ac as isize, 1)
        };
        let (rsb, csb) = if tb {
            (1, bc as isize)
        } else {
            (bc as isize, 1)
        };
        if m > 0 && n > 0 && k > 0 {
            // SAFETY: strides describe the row-major storage of `self` and
            // `other`; `out` is a fresh m x n buffer.
            unsafe {
                F::gemm(
                    m,
                    k,
                    n,
                    F::one(),
                    self.data().as_ptr(),
                    rsa,
                    csa,
                    other.data().as_ptr(),
                    rsb,
                    csb,
                    F::zero(),
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        Tensor::from_op(
            out,
            vec![m, n],
            MatMulOp {
                a: self.clone(),
                b: other.clone(),
                ta,
                tb,
            },
        )
    }
}
