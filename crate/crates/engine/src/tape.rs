use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::kernels::ConvGeometry;
use crate::{EngineError, Real, Result, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

/// Handle to a node on a particular tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    node: NodeId,
}

impl Var {
    pub fn node_id(&self) -> NodeId {
        self.node
    }
}

/// A user-defined operation whose forward value is computed by the caller.
///
/// `backward` receives the input values, the output value and the upstream
/// gradient, and returns one optional gradient per input (same shape as the
/// input). `None` means the input receives no contribution.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &str;

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>>;
}

pub(crate) enum Op<T: Real> {
    Leaf,
    Conv2d { input: NodeId, weight: NodeId, bias: Option<NodeId>, geom: ConvGeometry },
    Matmul { a: NodeId, b: NodeId },
    Affine { x: NodeId, w: NodeId, b: NodeId },
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Vec<T> },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: T },
    ScalarMul { s: NodeId, x: NodeId },
    Relu { x: NodeId },
    Mean { x: NodeId },
    Sum { x: NodeId },
    Reshape { x: NodeId },
    Concat { inputs: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize },
    GlobalAvgPool { x: NodeId },
    Custom { inputs: Vec<NodeId>, op: Box<dyn CustomOp<T>> },
}

impl<T: Real> Op<T> {
    pub(crate) fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Matmul { .. } => "matmul",
            Op::Affine { .. } => "affine",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::ScalarMul { .. } => "scalar_mul",
            Op::Relu { .. } => "relu",
            Op::Mean { .. } => "mean",
            Op::Sum { .. } => "sum",
            Op::Reshape { .. } => "reshape",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Custom { op, .. } => op.name(),
        }
    }

    pub(crate) fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, .. } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::Matmul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::ScalarMul { s, x } => vec![*s, *x],
            Op::Scale { x, .. }
            | Op::Relu { x }
            | Op::Mean { x }
            | Op::Sum { x }
            | Op::Reshape { x }
            | Op::Slice { x, .. }
            | Op::GlobalAvgPool { x } => vec![*x],
            Op::Concat { inputs, .. } | Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

pub(crate) struct Node<T: Real> {
    pub value: Tensor<T>,
    pub requires_grad: bool,
    pub op: Op<T>,
}

/// Append-only record of a computation.
///
/// A tape confines itself to one thread (it is `!Sync`); independent tapes
/// can run on separate threads.
pub struct Tape<T: Real> {
    id: u64,
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("id", &self.id).field("nodes", &self.len()).finish()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. Leaves that require gradients are the usual parameters.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Records a constant leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Result<Ref<'_, Tensor<T>>> {
        self.check(v)?;
        Ok(Ref::map(self.nodes.borrow(), |n| &n[v.node.0].value))
    }

    /// Clones the value of `v` out of the tape.
    pub fn value_of(&self, v: Var) -> Result<Tensor<T>> {
        Ok(self.value(v)?.clone())
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        self.check(v)?;
        Ok(self.nodes.borrow()[v.node.0].requires_grad)
    }

    pub fn shape_of(&self, v: Var) -> Result<Vec<usize>> {
        Ok(self.value(v)?.shape().to_vec())
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> Result<String> {
        self.check(v)?;
        Ok(self.nodes.borrow()[v.node.0].op.name().to_string())
    }

    /// First node holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<(NodeId, String)> {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.all_finite())
            .map(|(i, n)| (NodeId(i), n.op.name().to_string()))
    }

    /// Records an operation whose forward value has already been computed.
    pub fn custom(&self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        let ids = inputs.iter().map(|v| v.node).collect();
        Ok(self.record(output, Op::Custom { inputs: ids, op }))
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.node.0 >= self.len() {
            return Err(EngineError::ForeignVar { node: v.node.0 });
        }
        Ok(())
    }

    pub(crate) fn push(&self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(Node { value, requires_grad, op });
        Var { tape: self.id, node: id }
    }

    /// Pushes a non-leaf node; it requires a gradient iff any input does.
    pub(crate) fn record(&self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|id| nodes[id.0].requires_grad)
        };
        self.push(value, requires_grad, op)
    }

    /// Reverse-mode sweep from a scalar node.
    ///
    /// Nodes that do not require gradients get no entry. Each node is visited
    /// at most once, in reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.node.0];
        if !root.value.is_scalar() {
            return Err(EngineError::contract(
                "backward",
                format!("loss must be a scalar, got shape {:?}", root.value.shape()),
            ));
        }
        let mut slots: Vec<Option<Tensor<T>>> = (0..=loss.node.0).map(|_| None).collect();
        if root.requires_grad {
            slots[loss.node.0] = Some(Tensor::full(root.value.shape().to_vec(), T::one()));
        }
        for id in (0..=loss.node.0).rev() {
            let Some(grad) = slots[id].take() else { continue };
            crate::ops::backward_node(&nodes, id, &grad, &mut slots)?;
            slots[id] = Some(grad);
        }
        let map = slots
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| g.map(|g| (NodeId(i), g)))
            .collect();
        Ok(Gradients { tape: self.id, map })
    }
}

/// Gradients produced by one backward sweep, keyed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    tape: u64,
    map: HashMap<NodeId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.map.get(&v.node)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.map.remove(&v.node)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.map.keys().copied()
    }
}
