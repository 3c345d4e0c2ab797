//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its value and a closure that maps
//! the output gradient to gradients of its parents. `backward` walks the tape
//! in reverse, so graph depth never touches the call stack.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Output gradient plus "does parent i need a gradient" flags.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, Var>>,
    buffer_updates: RefCell<Vec<(ParamId, Tensor)>>,
    training: bool,
    rng: RefCell<ChaCha8Rng>,
    op_count: Cell<usize>,
}

impl Graph {
    /// A graph for inference: dropout off, batch norm uses running statistics.
    pub fn inference() -> Self {
        Self::new(false, 0)
    }

    /// A graph for a training step; `seed` drives dropout masks.
    pub fn training(seed: u64) -> Self {
        Self::new(true, seed)
    }

    pub fn new(training: bool, seed: u64) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            buffer_updates: RefCell::new(Vec::new()),
            training,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            op_count: Cell::new(0),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub(crate) fn with_rng<R>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        f(&mut self.rng.borrow_mut())
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Rc<Tensor>, parents: Vec<usize>, backward: Option<BackwardFn>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents, backward, requires_grad });
        Var(nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(Rc::new(t), Vec::new(), None, false)
    }

    /// A leaf that receives a gradient (inputs under test, for example).
    pub fn leaf(&self, t: Tensor) -> Var {
        self.push(Rc::new(t), Vec::new(), None, true)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.borrow().get(&id) {
            return v;
        }
        let v = self.push(store.get_rc(id), Vec::new(), None, store.is_trainable(id));
        self.params.borrow_mut().insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v);
        self.push(value, Vec::new(), None, false)
    }

    /// Record an operation. `backward` is dropped when no parent needs a gradient.
    pub(crate) fn op(&self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        self.op_count.set(self.op_count.get() + 1);
        let requires = parents.iter().any(|&p| self.requires_grad(p));
        let bw = if requires { Some(backward) } else { None };
        self.push(Rc::new(value), parents.iter().map(|p| p.0).collect(), bw, requires)
    }

    pub fn op_count(&self) -> usize {
        self.op_count.get()
    }

    pub(crate) fn record_buffer_update(&self, id: ParamId, value: Tensor) {
        self.buffer_updates.borrow_mut().push((id, value));
    }

    /// Running-statistics updates produced by batch norm in training mode.
    pub fn take_buffer_updates(&self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.buffer_updates.borrow_mut())
    }

    /// Gradients of the scalar `loss` with respect to every node that needs one.
    pub fn backward(&self, loss: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape().to_vec(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            let Some(bw) = &node.backward else { continue };
            let Some(g) = grads[i].take() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let pgrads = bw(&g, &needs);
            debug_assert_eq!(pgrads.len(), node.parents.len());
            for ((&p, pg), need) in node.parents.iter().zip(pgrads).zip(&needs) {
                let (Some(pg), true) = (pg, *need) else { continue };
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "gradient shape mismatch");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        let params = self.params.borrow().iter().map(|(&id, &v)| (id, v)).collect();
        Gradients { grads, params }
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of a leaf (constant leaves and unused leaves yield `None`).
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Parameter gradients, sorted by id for deterministic iteration.
    pub fn params(&self) -> Vec<(ParamId, &Tensor)> {
        let mut out: Vec<_> =
            self.params.iter().filter_map(|&(id, v)| self.wrt(v).map(|g| (id, g))).collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
