use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::{Float, NdArray};

/// Local derivative of one recorded operation: receives the gradient of the
/// output and a per-parent "needed" mask, returns one optional gradient per
/// parent.
pub(crate) type BackwardFn<F> = Box<dyn Fn(&NdArray<F>, &[bool]) -> Vec<Option<NdArray<F>>>>;

struct Node<F: Float> {
    value: Rc<NdArray<F>>,
    parents: Vec<usize>,
    needs: Vec<bool>,
    requires_grad: bool,
    retain: Cell<bool>,
    backward: Option<BackwardFn<F>>,
}

/// Append-only record of the operations performed during one forward pass.
///
/// Nodes whose inputs do not require gradients store no derivative closure,
/// so frozen sub-networks never contribute work to [`Graph::backward`].
pub struct Graph<F: Float> {
    nodes: RefCell<Vec<Node<F>>>,
}

impl<F: Float> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of recorded nodes that carry a derivative closure.
    pub fn differentiable_nodes(&self) -> usize {
        self.nodes
            .borrow()
            .iter()
            .filter(|n| n.backward.is_some())
            .count()
    }

    pub fn leaf(&self, value: NdArray<F>, requires_grad: bool) -> Tensor<'_, F> {
        self.shared_leaf(Rc::new(value), requires_grad)
    }

    pub fn constant(&self, value: NdArray<F>) -> Tensor<'_, F> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: F) -> Tensor<'_, F> {
        self.constant(NdArray::scalar(value))
    }

    /// Inserts a leaf sharing storage with the caller (no copy).
    pub fn shared_leaf(&self, value: Rc<NdArray<F>>, requires_grad: bool) -> Tensor<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            needs: Vec::new(),
            requires_grad,
            retain: Cell::new(requires_grad),
            backward: None,
        });
        Tensor {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Records an operation result. `make_backward` is only invoked when at
    /// least one parent requires a gradient.
    pub(crate) fn record(
        &self,
        value: NdArray<F>,
        parents: &[Tensor<'_, F>],
        make_backward: impl FnOnce(&Rc<NdArray<F>>) -> BackwardFn<F>,
    ) -> Tensor<'_, F> {
        let value = Rc::new(value);
        let needs: Vec<bool> = parents.iter().map(|p| p.requires_grad()).collect();
        let requires_grad = needs.iter().any(|&n| n);
        let backward = requires_grad.then(|| make_backward(&value));
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: if requires_grad {
                parents.iter().map(|p| p.id).collect()
            } else {
                Vec::new()
            },
            needs: if requires_grad { needs } else { Vec::new() },
            requires_grad,
            retain: Cell::new(false),
            backward,
        });
        Tensor {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Reverse-mode sweep from `root`, seeded with ones of `root`'s shape.
    ///
    /// Returned gradients cover leaves that require gradients plus any node
    /// flagged with [`Tensor::retain_grad`].
    pub fn backward(&self, root: Tensor<'_, F>) -> Gradients<F> {
        let seed = NdArray::full(root.value().shape().to_vec(), F::one());
        self.backward_with(root, seed)
    }

    pub fn backward_with(&self, root: Tensor<'_, F>, seed: NdArray<F>) -> Gradients<F> {
        let nodes = self.nodes.borrow();
        assert_eq!(
            seed.shape(),
            nodes[root.id].value.shape(),
            "seed shape must match root"
        );
        let mut kept = HashMap::new();
        if !nodes[root.id].requires_grad {
            return Gradients { grads: kept };
        }
        let mut grads: Vec<Option<NdArray<F>>> = (0..=root.id).map(|_| None).collect();
        grads[root.id] = Some(seed);
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(backward) = &node.backward {
                let parent_grads = backward(&g, &node.needs);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for ((&pid, &need), pg) in node.parents.iter().zip(&node.needs).zip(parent_grads) {
                    if !need {
                        continue;
                    }
                    let Some(pg) = pg else { continue };
                    debug_assert_eq!(pg.shape(), nodes[pid].value.shape());
                    match &mut grads[pid] {
                        Some(acc) => acc.add_assign(&pg),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            if node.retain.get() {
                kept.insert(id, g);
            }
        }
        Gradients { grads: kept }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Tensor<'g, F: Float> {
    pub(crate) graph: &'g Graph<F>,
    pub(crate) id: usize,
}

impl<F: Float> fmt::Debug for Tensor<'_, F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl<'g, F: Float> Tensor<'g, F> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<F> {
        self.graph
    }

    pub fn value(&self) -> Rc<NdArray<F>> {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Keeps this node's gradient in the result of [`Graph::backward`].
    pub fn retain_grad(&self) {
        self.graph.nodes.borrow()[self.id].retain.set(true);
    }

    /// Same value, cut from the derivative chain.
    pub fn detach(&self) -> Tensor<'g, F> {
        self.graph.shared_leaf(self.value(), false)
    }
}

/// Gradients produced by one backward sweep, keyed by tensor.
pub struct Gradients<F> {
    grads: HashMap<usize, NdArray<F>>,
}

impl<F: Float> Gradients<F> {
    pub fn get(&self, t: Tensor<'_, F>) -> Option<&NdArray<F>> {
        self.grads.get(&t.id)
    }

    pub fn take(&mut self, t: Tensor<'_, F>) -> Option<NdArray<F>> {
        self.grads.remove(&t.id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
