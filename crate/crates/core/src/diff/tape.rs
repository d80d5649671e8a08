use std::fmt;

use super::Tensor;
use crate::error::{Error, Result};

/// A differentiable primitive.
///
/// `forward` must be a pure function of its inputs so that a recorded tape
/// can be replayed on new input values. `backward` returns one adjoint per
/// input; entries whose `needs` flag is false may be `None`.
pub trait Op: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Kind {
    /// Replaceable leaf; receives adjoints.
    Input,
    /// Trainable leaf; receives adjoints.
    Param,
    /// Leaf that never receives adjoints.
    Const,
    Op { op: Box<dyn Op>, inputs: Vec<Var> },
}

struct Node {
    kind: Kind,
    value: Tensor,
    requires_grad: bool,
}

/// Define-by-run record of tensor operations.
///
/// Values are computed eagerly as operations are recorded, so model code can
/// read intermediate results (importance sampling needs the coarse pass).
/// [`Tape::forward`] replays the record on new input values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    stale: bool,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("stale", &self.stale)
            .finish()
    }
}

/// Adjoints of the leaves of a tape after a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Vars pointing past
    /// the new end become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, kind: Kind, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            kind,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Kind::Input, value, true)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Kind::Param, value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Kind::Const, value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Records `op` applied to `inputs` and evaluates it immediately.
    pub fn apply(&mut self, op: impl Op + 'static, inputs: &[Var]) -> Result<Var> {
        let value = {
            let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            op.forward(&values)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(
            Kind::Op {
                op: Box::new(op),
                inputs: inputs.to_vec(),
            },
            value,
            requires_grad,
        ))
    }

    /// Replaces the value of an input leaf. The tape must be re-evaluated
    /// with [`Tape::reevaluate`] before the next backward pass.
    pub fn set_input(&mut self, var: Var, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[var.0];
        if !matches!(node.kind, Kind::Input) {
            return Err(Error::InvalidConfig(format!(
                "node {} is not an input leaf",
                var.0
            )));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::shape("Tape::set_input", node.value.shape(), value.shape()));
        }
        node.value = value;
        self.stale = true;
        Ok(())
    }

    /// Replays the tape with new values for the input leaves, given in the
    /// order the inputs were recorded.
    pub fn forward(&mut self, inputs: &[Tensor]) -> Result<()> {
        let slots: Vec<usize> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.kind, Kind::Input))
            .map(|(i, _)| i)
            .collect();
        if slots.len() != inputs.len() {
            return Err(Error::shape("Tape::forward", &[slots.len()], &[inputs.len()]));
        }
        for (&slot, value) in slots.iter().zip(inputs) {
            self.set_input(Var(slot), value.clone())?;
        }
        self.reevaluate()
    }

    /// Recomputes every operation node in recording order.
    pub fn reevaluate(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if let Kind::Op { op, inputs } = &node.kind {
                let values: Vec<&Tensor> = inputs.iter().map(|v| &before[v.0].value).collect();
                node.value = op.forward(&values)?;
            }
        }
        self.stale = false;
        Ok(())
    }

    /// Reverse sweep seeded with `adjoint` at `output`.
    pub fn backward(&self, output: Var, adjoint: Tensor) -> Result<Gradients> {
        self.backward_seeds(vec![(output, adjoint)])
    }

    /// Reverse sweep seeded at several nodes at once. Only leaf adjoints are
    /// retained in the result.
    pub fn backward_seeds(&self, seeds: Vec<(Var, Tensor)>) -> Result<Gradients> {
        if self.stale {
            return Err(Error::NotEvaluated);
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        let mut last = 0;
        for (var, adj) in seeds {
            let expected = self.nodes[var.0].value.shape();
            if adj.shape() != expected {
                return Err(Error::shape("Tape::backward", expected, adj.shape()));
            }
            last = last.max(var.0);
            match &mut grads[var.0] {
                Some(g) => g.add_assign(&adj),
                slot => *slot = Some(adj),
            }
        }
        for i in (0..=last).rev() {
            let node = &self.nodes[i];
            let Kind::Op { op, inputs } = &node.kind else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = op.backward(&values, &node.value, &g, &needs);
            debug_assert_eq!(input_grads.len(), inputs.len(), "{}", op.name());
            for ((var, ig), need) in inputs.iter().zip(input_grads).zip(needs) {
                let Some(ig) = ig else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(
                    ig.shape(),
                    self.nodes[var.0].value.shape(),
                    "adjoint shape from {}",
                    op.name()
                );
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&ig),
                    slot => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients { grads })
    }
}
