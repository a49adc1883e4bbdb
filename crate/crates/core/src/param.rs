//! Trainable tensors and the module visitation protocol.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tape::Gradients;
use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a parameter on a tape. Fresh for every `Param`, including clones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A tensor owned by a layer, plus its accumulated gradient.
///
/// Buffers (`trainable == false`) such as batch-norm running statistics ride
/// along for checkpointing but never receive gradients or optimizer updates.
#[derive(Debug)]
pub struct Param<T: Real = f64> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    trainable: bool,
    id: ParamId,
}

impl<T: Real> Clone for Param<T> {
    fn clone(&self) -> Self {
        Self {
            value: self.value.clone(),
            grad: self.grad.clone(),
            trainable: self.trainable,
            id: ParamId::fresh(),
        }
    }
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Self { value, grad: None, trainable: true, id: ParamId::fresh() }
    }

    pub fn buffer(value: Tensor<T>) -> Self {
        Self { value, grad: None, trainable: false, id: ParamId::fresh() }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn grad(&self) -> Option<&Tensor<T>> {
        self.grad.as_ref()
    }

    /// Replaces the value, keeping the shape fixed.
    pub fn set_value(&mut self, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::dim(format!(
                "parameter has shape {:?}, replacement has {:?}",
                self.value.shape(),
                value.shape()
            )));
        }
        self.value = value;
        Ok(())
    }

    pub fn value_mut(&mut self) -> &mut [T] {
        self.value.data_mut()
    }

    /// Adds this parameter's gradient from `grads`, if it was reached.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        let Some(g) = grads.param(self.id) else { return };
        match self.grad.as_mut() {
            Some(acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            None => self.grad = Some(g.clone()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything holding parameters under hierarchical dotted names.
pub trait Module<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>));

    fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name, p)));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.is_trainable() {
                n += p.value().len();
            }
        });
        n
    }

    fn accumulate_grads(&mut self, grads: &Gradients<T>) {
        self.visit_mut("", &mut |_, p| p.accumulate(grads));
    }

    fn zero_grads(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }
}
