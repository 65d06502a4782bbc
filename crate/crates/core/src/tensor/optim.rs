use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    /// Wraps handles recorded elsewhere, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name `{name}`");
        self.names.push(name);
        self.tensors.push(tensor.requires_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Scalar count over parameters whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Records every parameter on the tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        Bindings(self.tensors.iter().map(|t| tape.leaf(t)).collect())
    }

    /// Reads parameter gradients off a tape (zeros where none arrived).
    pub fn collect_grads(&self, tape: &Tape, bindings: &Bindings) -> Vec<Vec<f64>> {
        bindings.0.iter().map(|&v| tape.grad_or_zeros(v)).collect()
    }

    pub fn accumulate(&mut self, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != self.tensors.len() {
            return Err(Error::shape("gradient set does not match parameter count"));
        }
        for (t, g) in self.tensors.iter_mut().zip(grads) {
            t.accumulate_grad(g)?;
        }
        Ok(())
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for t in &mut self.tensors {
            if let Some(g) = t.grad.as_mut() {
                g.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Rounds every value to `f32` precision, the checkpoint storage format.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// Replaces a parameter's values, keeping its shape.
    pub fn set_values(&mut self, id: ParamId, values: &[f64]) -> Result<()> {
        let t = &mut self.tensors[id.0];
        if values.len() != t.len() {
            return Err(Error::shape(format!(
                "parameter `{}` has {} values, got {}",
                self.names[id.0],
                t.len(),
                values.len()
            )));
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Inverse-time decay: `lr_t = lr / (1 + decay * t)`.
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.config.lr / (1.0 + self.config.decay * self.step as f64)
    }

    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() || self.first.iter().zip(&params.tensors).any(|(m, t)| m.len() != t.len()) {
            return Err(Error::shape("optimizer state does not match parameters"));
        }
        if let Some(i) = params.tensors.iter().position(|t| t.grad.is_none()) {
            return Err(Error::MissingGradient(params.names[i].clone()));
        }
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let lr = self.current_lr();
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((t, m), v) in params.tensors.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grad = t.grad.take().expect("checked above");
            for (((p, g), m), v) in t.data.iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
            t.grad = Some(grad);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![1.5, -2.0]));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store).unwrap();
        assert_eq!(store.get(id).data(), &[1.5, -2.0]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.0));
        store.accumulate(&[vec![1.0]]).unwrap();
        let mut adam = Adam::new(AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        });
        adam.step(&mut store).unwrap();
        assert!((store.get(id).data()[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn quadratic_converges() {
        // f(w) = (w - 3)^2, df/dw = 2(w - 3)
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.0));
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        for step in 0..100u64 {
            assert_eq!(adam.steps(), step);
            store.zero_grad();
            let w = store.get(id).data()[0];
            store.accumulate(&[vec![2.0 * (w - 3.0)]]).unwrap();
            adam.step(&mut store).unwrap();
        }
        assert!((store.get(id).data()[0] - 3.0).abs() < 0.5);
    }

    #[test]
    fn learning_rate_decays_inverse_time() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(0.0));
        let mut adam = Adam::new(AdamConfig::default());
        assert_eq!(adam.current_lr(), 1e-3);
        for _ in 0..10 {
            adam.step(&mut store).unwrap();
        }
        assert!((adam.current_lr() - 1e-3 / (1.0 + 1e-3)).abs() < 1e-15);
    }

    #[test]
    fn shape_change_is_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(0.0));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store).unwrap();
        store.add("extra", Tensor::scalar(0.0));
        assert!(adam.step(&mut store).is_err());
    }
}
