//! Dense n-dimensional tensors with reverse-mode automatic differentiation.
//!
//! Every backward rule is written in terms of differentiable tensor
//! operations, so gradients can themselves be differentiated
//! (`grad(.., create_graph = true)`). The gradient penalty of the critic
//! relies on this.

mod conv;
mod elementwise;
mod linalg;
mod shape;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub use conv::ConvGeometry;

/// Element type of a tensor. Implemented for `f32` and `f64`.
pub trait Float:
    num_traits::Float
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const NAME: &'static str;

    fn num(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` on strided row/column views.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing (for `c`)
    /// regions of the stated dimensions.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Float for f32 {
    const NAME: &'static str = "f32";

    fn num(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Float for f64 {
    const NAME: &'static str = "f64";

    fn num(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

static NEXT_ID: AtomicUsize = AtomicUsize::new(1);

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Restores the previous grad mode on drop.
pub struct GradModeGuard {
    prev: bool,
}

impl GradModeGuard {
    pub fn new(enabled: bool) -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
        GradModeGuard { prev }
    }
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Runs `f` without recording any graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = GradModeGuard::new(false);
    f()
}

/// Backward rule of a recorded operation.
pub(crate) trait Backward<F: Float>: Send + Sync {
    fn name(&self) -> &'static str;

    fn inputs(&self) -> Vec<&Tensor<F>>;

    /// Vector-Jacobian products for each input. `needs[i]` is false when the
    /// gradient of input `i` is not required; the rule may return `None` there.
    fn backward(&self, out: &Tensor<F>, grad: &Tensor<F>, needs: &[bool])
        -> Vec<Option<Tensor<F>>>;
}

struct Node<F: Float> {
    id: usize,
    data: Arc<Vec<F>>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad_fn: Option<Box<dyn Backward<F>>>,
}

/// Reference-counted tensor handle. Cloning is cheap and shares storage.
pub struct Tensor<F: Float = f64> {
    node: Arc<Node<F>>,
}

impl<F: Float> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<F: Float> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.node.grad_fn.as_ref().map(|g| g.name());
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &op)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Float> Tensor<F> {
    fn make(
        data: Arc<Vec<F>>,
        shape: Vec<usize>,
        requires_grad: bool,
        grad_fn: Option<Box<dyn Backward<F>>>,
    ) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                data,
                shape,
                requires_grad,
                grad_fn,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(data: Vec<F>, shape: &[usize]) -> Self {
        assert_eq!(
            data.len(),
            numel(shape),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self::make(Arc::new(data), shape.to_vec(), false, None)
    }

    pub fn from_f64_slice(data: &[f64], shape: &[usize]) -> Self {
        Self::from_vec(data.iter().map(|&v| F::num(v)).collect(), shape)
    }

    pub fn scalar(v: F) -> Self {
        Self::from_vec(vec![v], &[])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, F::one())
    }

    pub fn full(shape: &[usize], v: F) -> Self {
        Self::from_vec(vec![v; numel(shape)], shape)
    }

    /// Leaf tensor that accumulates gradients (a trainable parameter or an
    /// input we differentiate with respect to).
    pub fn leaf(data: Vec<F>, shape: &[usize]) -> Self {
        assert_eq!(data.len(), numel(shape));
        Self::make(Arc::new(data), shape.to_vec(), true, None)
    }

    /// Result of an operation. Records `op` only when grad mode is on and
    /// some input requires a gradient.
    pub(crate) fn from_op(data: Vec<F>, shape: Vec<usize>, op: impl Backward<F> + 'static) -> Self {
        Self::from_op_shared(Arc::new(data), shape, op)
    }

    pub(crate) fn from_op_shared(
        data: Arc<Vec<F>>,
        shape: Vec<usize>,
        op: impl Backward<F> + 'static,
    ) -> Self {
        let track = is_grad_enabled() && op.inputs().iter().any(|t| t.requires_grad());
        if track {
            Self::make(data, shape, true, Some(Box::new(op)))
        } else {
            Self::make(data, shape, false, None)
        }
    }

    pub(crate) fn storage(&self) -> &Arc<Vec<F>> {
        &self.node.data
    }

    pub fn id(&self) -> usize {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.node.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.node.data.as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> F {
        assert_eq!(
            self.numel(),
            1,
            "item() on tensor of shape {:?}",
            self.shape()
        );
        self.node.data[0]
    }

    /// Shares storage, drops the graph.
    pub fn detach(&self) -> Self {
        Self::make(
            Arc::clone(&self.node.data),
            self.node.shape.clone(),
            false,
            None,
        )
    }

    /// Shares storage as a fresh gradient-tracking leaf.
    pub fn detach_leaf(&self) -> Self {
        Self::make(
            Arc::clone(&self.node.data),
            self.node.shape.clone(),
            true,
            None,
        )
    }

    pub fn all_finite(&self) -> bool {
        self.node.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Float>(&self) -> Tensor<G> {
        Tensor::from_vec(
            self.data().iter().map(|v| G::num(v.as_f64())).collect(),
            self.shape(),
        )
    }
}

/// Gradients of the scalar `output` with respect to each tensor in `wrt`.
///
/// Tensors not connected to `output` receive zeros. With `create_graph` the
/// returned gradients are themselves differentiable.
pub fn grad<F: Float>(
    output: &Tensor<F>,
    wrt: &[&Tensor<F>],
    create_graph: bool,
) -> Vec<Tensor<F>> {
    assert_eq!(
        output.numel(),
        1,
        "grad() needs a scalar output, got shape {:?}",
        output.shape()
    );
    let seed = Tensor::ones(output.shape());
    grad_with_seed(output, &seed, wrt, create_graph)
}

/// Vector-Jacobian product `seedᵀ · ∂output/∂wrt`.
pub fn grad_with_seed<F: Float>(
    output: &Tensor<F>,
    seed: &Tensor<F>,
    wrt: &[&Tensor<F>],
    create_graph: bool,
) -> Vec<Tensor<F>> {
    assert_eq!(output.shape(), seed.shape());
    let zeros = || {
        wrt.iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect::<Vec<_>>()
    };
    if !output.requires_grad() {
        return zeros();
    }

    // Post-order DFS: inputs precede consumers.
    let mut order: Vec<Tensor<F>> = Vec::new();
    let mut index: HashMap<usize, usize> = HashMap::new();
    let mut visited: HashSet<usize> = HashSet::new();
    let mut stack: Vec<(Tensor<F>, bool)> = vec![(output.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            index.insert(t.id(), order.len());
            order.push(t);
            continue;
        }
        if !visited.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(g) = &t.node.grad_fn {
            for inp in g.inputs() {
                if inp.requires_grad() && !visited.contains(&inp.id()) {
                    stack.push((inp.clone(), false));
                }
            }
        }
    }

    let targets: HashSet<usize> = wrt.iter().map(|t| t.id()).collect();
    let mut leads = vec![false; order.len()];
    for (i, t) in order.iter().enumerate() {
        let mut l = targets.contains(&t.id());
        if !l {
            if let Some(g) = &t.node.grad_fn {
                l = g
                    .inputs()
                    .iter()
                    .any(|inp| index.get(&inp.id()).is_some_and(|&j| leads[j]));
            }
        }
        leads[i] = l;
    }
    if !leads[order.len() - 1] {
        return zeros();
    }

    let _mode = GradModeGuard::new(create_graph);
    let mut grads: HashMap<usize, Tensor<F>> = HashMap::new();
    grads.insert(
        output.id(),
        if create_graph {
            seed.clone()
        } else {
            seed.detach()
        },
    );

    for t in order.iter().rev() {
        let Some(g_fn) = &t.node.grad_fn else {
            continue;
        };
        if !leads[index[&t.id()]] {
            continue;
        }
        let Some(g_out) = (if targets.contains(&t.id()) {
            grads.get(&t.id()).cloned()
        } else {
            grads.remove(&t.id())
        }) else {
            continue;
        };
        let inputs = g_fn.inputs();
        let needs: Vec<bool> = inputs
            .iter()
            .map(|inp| inp.requires_grad() && index.get(&inp.id()).is_some_and(|&j| leads[j]))
            .collect();
        if !needs.iter().any(|&n| n) {
            continue;
        }
        let in_grads = g_fn.backward(t, &g_out, &needs);
        debug_assert_eq!(in_grads.len(), inputs.len());
        for ((inp, need), g) in inputs.iter().zip(&needs).zip(in_grads) {
            if !need {
                continue;
            }
            let Some(g) = g else { continue };
            debug_assert_eq!(
                g.shape(),
                inp.shape(),
                "bad gradient shape from {}",
                g_fn.name()
            );
            match grads.remove(&inp.id()) {
                Some(acc) => {
                    grads.insert(inp.id(), acc.add(&g));
                }
                None => {
                    grads.insert(inp.id(), g);
                }
            }
        }
    }

    wrt.iter()
        .map(|t| {
            grads
                .get(&t.id())
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect()
}
