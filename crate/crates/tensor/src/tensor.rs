use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::element::{DType, Element};
use crate::error::{Result, TensorError};

static NEXT_ID: AtomicUsize = AtomicUsize::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables graph recording on the current thread while alive.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(false));
        NoGradGuard { prev }
    }
}

impl Default for NoGradGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = NoGradGuard::new();
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward closure: receives the output gradient and a per-input flag
/// telling which inputs need a gradient, returns one optional gradient per input.
pub(crate) type BackwardFn<E> = Box<dyn FnOnce(&[E], &[bool]) -> Vec<Option<Vec<E>>> + Send>;

struct Node<E: Element> {
    op: &'static str,
    inputs: Vec<Tensor<E>>,
    backward: BackwardFn<E>,
}

struct Inner<E: Element> {
    id: usize,
    shape: Vec<usize>,
    data: Vec<E>,
    requires_grad: bool,
    is_leaf: bool,
    grad: Mutex<Option<Vec<E>>>,
    node: Mutex<Option<Node<E>>>,
}

/// Dense row-major tensor. Cloning is cheap and shares storage.
pub struct Tensor<E: Element> {
    inner: Arc<Inner<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("dtype", &E::DTYPE)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn check_len(len: usize, shape: &[usize]) -> Result<()> {
    if shape.iter().product::<usize>() != len {
        return Err(TensorError::DataLength {
            len,
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

impl<E: Element> Tensor<E> {
    fn make(data: Vec<E>, shape: Vec<usize>, requires_grad: bool, node: Option<Node<E>>) -> Self {
        let is_leaf = node.is_none();
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                is_leaf,
                grad: Mutex::new(None),
                node: Mutex::new(node),
            }),
        }
    }

    pub fn from_vec(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        check_len(data.len(), shape)?;
        Ok(Self::make(data, shape.to_vec(), false, None))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn param(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        check_len(data.len(), shape)?;
        Ok(Self::make(data, shape.to_vec(), true, None))
    }

    pub fn scalar(v: E) -> Self {
        Self::make(vec![v], vec![], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, E::one())
    }

    pub fn full(shape: &[usize], v: E) -> Self {
        let n = shape.iter().product();
        Self::make(vec![v; n], shape.to_vec(), false, None)
    }

    /// Output of a differentiable op. Records a graph node only when
    /// recording is enabled and some input requires a gradient.
    pub(crate) fn from_op(
        op: &'static str,
        data: Vec<E>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<E>>,
        backward: impl FnOnce(&[E], &[bool]) -> Vec<Option<Vec<E>>> + Send + 'static,
    ) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>(), "{op}");
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if !track {
            return Self::make(data, shape, false, None);
        }
        let node = Node {
            op,
            inputs,
            backward: Box::new(backward),
        };
        Self::make(data, shape, true, Some(node))
    }

    pub fn id(&self) -> usize {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn dtype(&self) -> DType {
        E::DTYPE
    }

    pub fn data(&self) -> &[E] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.is_leaf
    }

    /// Name of the op that produced this tensor, if it is a recorded node.
    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.node.lock().unwrap().as_ref().map(|n| n.op)
    }

    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor {:?}", self.shape());
        self.inner.data[0]
    }

    /// Leaf copy sharing no graph history.
    pub fn detach(&self) -> Self {
        Self::make(self.inner.data.clone(), self.inner.shape.clone(), false, None)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn with_grad<R>(&self, f: impl FnOnce(Option<&[E]>) -> R) -> R {
        let g = self.inner.grad.lock().unwrap();
        f(g.as_deref())
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    /// Shape as `(N, C, H, W)`; errors unless rank 4.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            s => Err(TensorError::Rank {
                op,
                expected: 4,
                shape: s.to_vec(),
            }),
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            &[a, b] => Ok((a, b)),
            s => Err(TensorError::Rank {
                op,
                expected: 2,
                shape: s.to_vec(),
            }),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    fn accumulate_leaf(&self, g: Vec<E>) {
        let mut slot = self.inner.grad.lock().unwrap();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode pass from a scalar loss. Leaves that require gradients
    /// accumulate into their grad buffers; the graph is released afterwards.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Err(TensorError::NoGraph);
        }
        if self.is_leaf() {
            self.accumulate_leaf(vec![E::one()]);
            return Ok(());
        }
        if self.inner.node.lock().unwrap().is_none() {
            return Err(TensorError::GraphConsumed);
        }

        // Post-order DFS over recorded nodes; reversed, every node precedes its inputs.
        let mut order: Vec<Tensor<E>> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor<E>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            let children: Vec<Tensor<E>> = {
                let node = t.inner.node.lock().unwrap();
                match node.as_ref() {
                    Some(n) => n
                        .inputs
                        .iter()
                        .filter(|i| i.requires_grad() && !i.is_leaf())
                        .cloned()
                        .collect(),
                    None => Vec::new(),
                }
            };
            stack.push((t, true));
            for c in children {
                if !visited.contains(&c.id()) {
                    stack.push((c, false));
                }
            }
        }

        let mut grads: HashMap<usize, Vec<E>> = HashMap::new();
        grads.insert(self.id(), vec![E::one()]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            let Some(node) = t.inner.node.lock().unwrap().take() else {
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(|i| i.requires_grad()).collect();
            let input_grads = (node.backward)(&g, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op);
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(ig.len(), input.numel(), "{} grad length", node.op);
                if input.is_leaf() {
                    input.accumulate_leaf(ig);
                } else {
                    match grads.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(ig).for_each(|(a, b)| *a += b),
                        None => {
                            grads.insert(input.id(), ig);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
