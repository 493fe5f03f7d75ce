use std::cell::{Cell, RefCell};

use crate::error::{Error, Result};

use super::{Tensor, TensorId};

pub(crate) struct Record {
    pub(crate) out: TensorId,
    pub(crate) backward: Box<dyn Fn()>,
}

/// Tape of recorded operations. Appending order is construction order, which
/// is a valid topological order, so replaying the tape backwards visits every
/// node after all of its consumers. A graph is single-writer and supports a
/// single backward pass.
pub struct Graph {
    records: RefCell<Vec<Record>>,
    backward_done: Cell<bool>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            records: RefCell::new(Vec::new()),
            backward_done: Cell::new(false),
        }
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.borrow().is_empty()
    }

    pub(crate) fn record(&self, out: TensorId, backward: Box<dyn Fn()>) {
        self.records.borrow_mut().push(Record { out, backward });
    }

    /// Run reverse-mode differentiation from `loss`, which must be a scalar
    /// and the final node recorded on this graph. Gradients accumulate
    /// additively into every tensor that feeds the loss. A second call on the
    /// same graph is a state error.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if self.backward_done.get() {
            return Err(Error::State(
                "backward has already run on this graph".to_string(),
            ));
        }
        if !loss.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        {
            let records = self.records.borrow();
            if let Some(last) = records.last() {
                if last.out != loss.id() {
                    return Err(Error::Contract(
                        "loss must be the final node of the graph".to_string(),
                    ));
                }
            }
            // An empty graph with a scalar leaf loss is the trivial case:
            // only the loss itself receives a gradient.
        }
        loss.set_grad(vec![1.0]);
        let records = self.records.borrow();
        for record in records.iter().rev() {
            (record.backward)();
        }
        self.backward_done.set(true);
        Ok(())
    }
}
