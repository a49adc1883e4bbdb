use crate::param::Module;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// One update of a single tensor:
/// `g' = g + wd·p; v = momentum·v + g'; p −= lr·v`.
pub fn sgd_step<T: Real>(param: &mut [T], grad: &[T], velocity: &mut [T], lr: T, momentum: T, weight_decay: T) {
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        let g = g + weight_decay * *p;
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

/// Momentum SGD over every trainable parameter of a module. Velocities are
/// keyed by visitation order, which is fixed for a given architecture.
#[derive(Clone, Debug)]
pub struct Sgd<T: Real = f64> {
    pub momentum: T,
    pub weight_decay: T,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum: T::of(momentum), weight_decay: T::of(weight_decay), velocity: Vec::new() }
    }

    /// Applies accumulated gradients. Parameters that received no gradient
    /// are left untouched, weight decay included.
    pub fn step<M: Module<T>>(&mut self, model: &mut M, lr: f64) {
        let lr = T::of(lr);
        let (momentum, wd) = (self.momentum, self.weight_decay);
        let velocity = &mut self.velocity;
        let mut slot = 0;
        model.visit_mut("", &mut |_, p| {
            if !p.is_trainable() {
                return;
            }
            if velocity.len() <= slot {
                velocity.push(None);
            }
            if let Some(g) = p.grad().cloned() {
                let v = velocity[slot].get_or_insert_with(|| g.zeros_like());
                sgd_step(p.value_mut(), g.data(), v.data_mut(), lr, momentum, wd);
            }
            slot += 1;
        });
    }
}
