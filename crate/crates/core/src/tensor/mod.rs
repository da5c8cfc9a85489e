//! Dense `f64` tensors with tape-free reverse-mode differentiation.
//!
//! Every differentiable operation records its parents and a backward closure on
//! the output node. [`Tensor::backward`] walks the graph in reverse topological
//! order, visiting each node once and accumulating gradients additively.
//! Layout is row-major; feature maps are NCHW.

mod gemm;
mod gradcheck;
mod init;
mod ops;
mod rng;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

pub use gemm::{gemm, Transpose};
pub use gradcheck::grad_check;
pub use init::{init, InitScheme};
pub use ops::{BinaryOp, ReduceOp};
pub use rng::{streams, Rng, RngState};

use crate::error::{Error, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any operations for differentiation.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

type BackwardFn = Box<dyn Fn(&[f64], &[Tensor])>;

struct GradFn {
    name: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

/// Shared handle to a node of the computation graph.
///
/// Cloning is cheap and aliases the same storage, which is how layer
/// parameters are shared between a backbone and its split halves.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let head: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("head", &head)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::dim("tensor", format!("zero-sized dimension in {shape:?}")));
    }
    if numel(shape) != len {
        return Err(Error::dim(
            "tensor",
            format!("shape {shape:?} holds {} values, got {len}", numel(shape)),
        ));
    }
    Ok(())
}

impl Tensor {
    /// Constant (non-differentiable) tensor.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::leaf(shape.to_vec(), data, false))
    }

    /// Learnable leaf tensor.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::leaf(shape.to_vec(), data, true))
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::leaf(vec![1], vec![v], false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Tensor::leaf(shape.to_vec(), vec![v; numel(shape)], false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            grad_fn: None,
        }))
    }

    /// Builds an operation output. The backward closure is kept only when
    /// recording is enabled and some parent needs a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        name: &'static str,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64], &[Tensor]) + 'static,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len(), "{name}");
        let track = grad_enabled() && parents.iter().any(Tensor::requires_grad);
        let grad_fn = track.then(|| GradFn {
            name,
            parents,
            backward: Box::new(backward),
        });
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: track,
            grad_fn,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Name of the operation that produced this tensor, if any.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name)
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.0.data.borrow()[0]
    }

    /// Overwrites the values in place (optimizer steps, running statistics).
    pub fn set_data(&self, data: Vec<f64>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(Error::dim(
                "set_data",
                format!("{} values for shape {:?}", data.len(), self.shape()),
            ));
        }
        *self.0.data.borrow_mut() = data;
        Ok(())
    }

    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.0.data.borrow_mut());
    }

    /// Accumulated gradient, zeros when nothing has flowed here.
    pub fn grad(&self) -> Vec<f64> {
        self.0
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn has_grad(&self) -> bool {
        self.0.grad.borrow().is_some()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        if !self.0.requires_grad {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Same values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.0.shape.clone(), self.to_vec(), false)
    }

    /// Independent leaf with the same values and `requires_grad` flag.
    pub fn deep_copy(&self) -> Tensor {
        Tensor::leaf(self.0.shape.clone(), self.to_vec(), self.0.requires_grad)
    }

    /// Deep copy as a fresh learnable leaf.
    pub fn clone_param(&self) -> Tensor {
        Tensor::leaf(self.0.shape.clone(), self.to_vec(), true)
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Reverse-mode sweep from this tensor. Non-scalar roots are seeded with ones.
    pub fn backward(&self) -> Result<()> {
        if !self.requires_grad() {
            return Err(Error::State(
                "backward called on a tensor that does not require grad".into(),
            ));
        }
        let order = self.topo_order();
        self.accumulate_grad(&vec![1.0; self.numel()]);
        for node in order.iter().rev() {
            let Some(gf) = node.0.grad_fn.as_ref() else {
                continue;
            };
            let grad = node.0.grad.borrow();
            let Some(g) = grad.as_ref() else { continue };
            (gf.backward)(g, &gf.parents);
        }
        Ok(())
    }

    /// Nodes reachable from `self` in topological order (parents first).
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        // Iterative post-order DFS: (node, expanded?)
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(Rc::as_ptr(&t.0)) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = t.0.grad_fn.as_ref() {
                for p in gf.parents.iter().filter(|p| p.requires_grad()) {
                    if !seen.contains(&Rc::as_ptr(&p.0)) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Number of distinct graph nodes reachable from `self`.
    pub fn graph_size(&self) -> usize {
        self.topo_order().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_len() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 0], vec![]).is_err());
        let t = Tensor::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
        assert_eq!(t.grad().len(), 6);
    }

    #[test]
    fn shared_input_accumulates() {
        // f(x) = sum(x) + sum(x) -> grad 2
        let x = Tensor::param(&[3], vec![1.0, -2.0, 5.0]).unwrap();
        let y = x.sum().add(&x.sum()).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad(), vec![2.0; 3]);
    }

    #[test]
    fn diamond_graph_visits_each_node_once() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let a = x.mul_scalar(3.0);
        let b = a.mul(&a).unwrap();
        let c = a.add(&b).unwrap();
        let loss = c.sum();
        loss.backward().unwrap();
        // d/dx (3x + 9x^2) = 3 + 18x
        assert_eq!(x.grad(), vec![21.0, 39.0]);
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| x.mul(&x).unwrap());
        assert!(!y.requires_grad());
        assert!(grad_enabled());
    }

    #[test]
    fn backward_on_constant_is_an_error() {
        let x = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        assert!(x.sum().backward().is_err());
    }
}
