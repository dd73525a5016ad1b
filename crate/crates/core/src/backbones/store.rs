//! Named parameter storage and the per-forward session that turns stored
//! arrays into graph leaves.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::rc::Rc;

use autograd::{batch_norm, BatchStats, Float, Graph, NdArray, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type ParamId = usize;
pub type NormId = usize;

/// Momentum of running normalization statistics.
pub const NORM_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct Param<F> {
    pub name: String,
    pub group: String,
    pub value: Rc<NdArray<F>>,
}

/// Running statistics of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats<F> {
    pub name: String,
    pub group: String,
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

#[derive(Clone, Debug)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
    norms: Vec<NormStats<F>>,
}

impl<F: Float> Default for ParamStore<F> {
    fn default() -> Self {
        Self {
            params: Vec::new(),
            norms: Vec::new(),
        }
    }
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name; names are fixed by model construction.
    pub fn add_param(&mut self, name: String, group: &str, value: NdArray<F>) -> ParamId {
        assert!(self.find(&name).is_none(), "duplicate parameter `{name}`");
        self.params.push(Param {
            name,
            group: group.to_string(),
            value: Rc::new(value),
        });
        self.params.len() - 1
    }

    pub fn add_norm(&mut self, name: String, group: &str, channels: usize) -> NormId {
        self.norms.push(NormStats {
            name,
            group: group.to_string(),
            mean: vec![F::zero(); channels],
            var: vec![F::one(); channels],
        });
        self.norms.len() - 1
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn norms(&self) -> &[NormStats<F>] {
        &self.norms
    }

    pub fn norms_mut(&mut self) -> &mut [NormStats<F>] {
        &mut self.norms
    }

    pub fn param(&self, id: ParamId) -> &Param<F> {
        &self.params[id]
    }

    pub fn value(&self, id: ParamId) -> &NdArray<F> {
        &self.params[id].value
    }

    /// Mutable access; copies only if a graph still holds the array.
    pub fn value_mut(&mut self, id: ParamId) -> &mut NdArray<F> {
        Rc::make_mut(&mut self.params[id].value)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Group names in order of first appearance.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.params {
            if !out.contains(&p.group) {
                out.push(p.group.clone());
            }
        }
        out
    }

    pub fn group_params(&self, group: &str) -> Vec<ParamId> {
        (0..self.params.len()).filter(|&i| self.params[i].group == group).collect()
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Folds batch statistics into the running estimates.
    pub fn apply_norm_updates(&mut self, updates: Vec<(NormId, BatchStats<F>)>) {
        let m = F::of(NORM_MOMENTUM);
        let keep = F::one() - m;
        for (id, stats) in updates {
            let norm = &mut self.norms[id];
            for (r, b) in norm.mean.iter_mut().zip(&stats.mean) {
                *r = keep * *r + m * *b;
            }
            for (r, b) in norm.var.iter_mut().zip(&stats.var) {
                *r = keep * *r + m * *b;
            }
        }
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group.clone(),
                    value: Rc::new(p.value.cast()),
                })
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|n| NormStats {
                    name: n.name.clone(),
                    group: n.group.clone(),
                    mean: n.mean.iter().map(|v| G::of(v.as_f64())).collect(),
                    var: n.var.iter().map(|v| G::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Registers parameters of one group with deterministic initialization.
pub struct Init<'a, F> {
    pub store: &'a mut ParamStore<F>,
    pub rng: &'a mut ChaCha8Rng,
    pub group: String,
}

impl<'a, F: Float> Init<'a, F> {
    pub fn new(store: &'a mut ParamStore<F>, rng: &'a mut ChaCha8Rng, group: &str) -> Self {
        Self {
            store,
            rng,
            group: group.to_string(),
        }
    }

    pub fn set_group(&mut self, group: &str) {
        self.group = group.to_string();
    }

    fn full_name(&self, name: &str) -> String {
        format!("{}.{name}", self.group)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let rng = &mut *self.rng;
        let value = NdArray::from_fn(shape.to_vec(), |_| F::of(rng.random_range(-bound..=bound)));
        let full = self.full_name(name);
        self.store.add_param(full, &self.group, value)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        let full = self.full_name(name);
        self.store
            .add_param(full, &self.group, NdArray::full(shape.to_vec(), F::of(value)))
    }

    pub fn norm(&mut self, name: &str, channels: usize) -> NormId {
        let full = self.full_name(name);
        self.store.add_norm(full, &self.group, channels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass over a [`ParamStore`].
///
/// Parameters become graph leaves on first use. A leaf requires a gradient
/// only in training mode and only when its group is not frozen, so frozen
/// groups are never differentiated. Normalization layers in frozen groups,
/// and all of them in evaluation mode, use running statistics.
pub struct Session<'g, 's, F: Float> {
    graph: &'g Graph<F>,
    store: &'s ParamStore<F>,
    mode: Mode,
    frozen: BTreeSet<String>,
    leaves: RefCell<Vec<Option<Tensor<'g, F>>>>,
    norm_updates: RefCell<Vec<(NormId, BatchStats<F>)>>,
    tap: Option<String>,
    tapped: RefCell<Option<Tensor<'g, F>>>,
}

impl<'g, 's, F: Float> Session<'g, 's, F> {
    pub fn new(graph: &'g Graph<F>, store: &'s ParamStore<F>, mode: Mode, frozen: BTreeSet<String>) -> Self {
        Self {
            graph,
            store,
            mode,
            frozen,
            leaves: RefCell::new(vec![None; store.params().len()]),
            norm_updates: RefCell::new(Vec::new()),
            tap: None,
            tapped: RefCell::new(None),
        }
    }

    /// Cuts the graph at the named layer output: the output is replaced by
    /// a fresh leaf that requires a gradient, retrievable via [`Session::tapped`].
    pub fn with_tap(mut self, layer: &str) -> Self {
        self.tap = Some(layer.to_string());
        self
    }

    pub fn graph(&self) -> &'g Graph<F> {
        self.graph
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_frozen(&self, group: &str) -> bool {
        self.frozen.contains(group)
    }

    pub fn param(&self, id: ParamId) -> Tensor<'g, F> {
        if let Some(t) = self.leaves.borrow()[id] {
            return t;
        }
        let p = self.store.param(id);
        let grad = self.mode == Mode::Train && !self.frozen.contains(&p.group);
        let t = self.graph.shared_leaf(Rc::clone(&p.value), grad);
        self.leaves.borrow_mut()[id] = Some(t);
        t
    }

    /// `(param id, leaf)` for every parameter used that requires a gradient.
    pub fn trainable_leaves(&self) -> Vec<(ParamId, Tensor<'g, F>)> {
        self.leaves
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.filter(|t| t.requires_grad()).map(|t| (i, t)))
            .collect()
    }

    pub fn batch_norm(
        &self,
        x: Tensor<'g, F>,
        gamma: ParamId,
        beta: ParamId,
        norm: NormId,
        axis: usize,
        eps: f64,
    ) -> Tensor<'g, F> {
        let stats = &self.store.norms()[norm];
        let running = self.mode == Mode::Eval || self.frozen.contains(&stats.group);
        let (g, b) = (self.param(gamma), self.param(beta));
        if running {
            batch_norm(x, g, b, axis, F::of(eps), Some((&stats.mean, &stats.var))).0
        } else {
            let (y, batch) = batch_norm(x, g, b, axis, F::of(eps), None);
            self.norm_updates
                .borrow_mut()
                .push((norm, batch.expect("training-mode statistics")));
            y
        }
    }

    pub fn take_norm_updates(&self) -> Vec<(NormId, BatchStats<F>)> {
        std::mem::take(&mut self.norm_updates.borrow_mut())
    }

    /// Marks a named layer output; see [`Session::with_tap`].
    pub fn tap(&self, layer: &str, x: Tensor<'g, F>) -> Tensor<'g, F> {
        if self.tap.as_deref() == Some(layer) {
            let leaf = self.graph.shared_leaf(x.value(), true);
            *self.tapped.borrow_mut() = Some(leaf);
            leaf
        } else {
            x
        }
    }

    pub fn tapped(&self) -> Option<Tensor<'g, F>> {
        *self.tapped.borrow()
    }
}
