use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use super::Tensor;
use crate::error::{Error, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Disables graph recording on this thread until dropped.
pub struct NoGradGuard {
    previous: bool,
}

impl NoGradGuard {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        let previous = GRAD_ENABLED.with(|g| g.replace(false));
        NoGradGuard { previous }
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.previous));
    }
}

/// Recorded operations reachable from a root, in topological order: every
/// entry appears after the producers of all of its inputs.
pub struct Trace {
    order: Vec<Tensor>,
}

impl Trace {
    pub fn record(root: &Tensor) -> Trace {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        // iterative post-order DFS; deep encoders overflow a recursive walk
        let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if t.op().is_none() || !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            let op = t.op().unwrap();
            for input in op.inputs().into_iter().rev() {
                if input.op().is_some() && !visited.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
        Trace { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn op_names(&self) -> Vec<&'static str> {
        self.order
            .iter()
            .map(|t| t.op().map(|o| o.name()).unwrap_or("leaf"))
            .collect()
    }

    /// Position of every recorded node, keyed by tensor id.
    pub fn positions(&self) -> HashMap<usize, usize> {
        self.order
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id(), i))
            .collect()
    }

    pub fn entries(&self) -> &[Tensor] {
        &self.order
    }

    /// Replay adjoints from the last entry (the root) back to the leaves.
    fn replay(&self, root: &Tensor) {
        let mut grads: HashMap<usize, Vec<f64>> = HashMap::new();
        grads.insert(root.id(), vec![1.0; root.numel()]);
        for node in self.order.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            let op = node.op().expect("trace holds recorded nodes only");
            for (input, gin) in op.inputs().into_iter().zip(op.backward(&g)) {
                let Some(gin) = gin else { continue };
                if input.op().is_none() {
                    input.accumulate_grad(&gin);
                } else {
                    match grads.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&gin).for_each(|(a, b)| *a += b),
                        None => {
                            grads.insert(input.id(), gin);
                        }
                    }
                }
            }
        }
    }
}

/// Accumulate d(loss)/d(leaf) into every reachable leaf that requires a
/// gradient. Calling twice without zeroing doubles the gradients.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::Usage(format!(
            "backward needs a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.requires_grad() {
        return Err(Error::Usage(
            "loss is not connected to any tensor that requires a gradient".into(),
        ));
    }
    if loss.is_leaf() {
        loss.accumulate_grad(&[1.0]);
        return Ok(());
    }
    Trace::record(loss).replay(loss);
    Ok(())
}
