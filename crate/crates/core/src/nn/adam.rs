use std::collections::BTreeMap;

use super::params::{Matrix, ParamId, ParamStore};
use super::tape::Gradients;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer state for a fixed subset of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    /// First and second moments keyed by parameter.
    pub moments: BTreeMap<ParamId, (Matrix, Matrix)>,
}

impl AdamState {
    /// State managing `params`, with zeroed moments shaped like each tensor.
    pub fn new(config: AdamConfig, store: &ParamStore, params: impl IntoIterator<Item = ParamId>) -> Self {
        let moments = params
            .into_iter()
            .map(|id| {
                let dim = store.get(id).dim();
                (id, (Matrix::zeros(dim), Matrix::zeros(dim)))
            })
            .collect();
        Self {
            config,
            step_count: 0,
            moments,
        }
    }

    /// One bias-corrected Adam update. Managed parameters without a gradient are
    /// left untouched; any non-finite gradient aborts before anything changes.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (&id, (m, _)) in &self.moments {
            if let Some(g) = grads.param(id) {
                if g.dim() != m.dim() {
                    return Err(Error::Shape {
                        context: "adam gradient vs parameter",
                        left: g.dim(),
                        right: m.dim(),
                    });
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NumericInstability {
                        param: store.name(id).to_string(),
                    });
                }
            }
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (&id, (m, v)) in self.moments.iter_mut() {
            let Some(g) = grads.param(id) else { continue };
            ndarray::Zip::from(&mut *m).and(&mut *v).and(g).for_each(|m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
            });
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let m_hat = m / c1;
                let v_hat = v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tape;
    use ndarray::array;

    fn quadratic_grads(store: &ParamStore, id: ParamId) -> Gradients {
        // f(w) = w² via mse against zero target: mean((w-0)²)
        let mut tape = Tape::new();
        let w = tape.param(store, id);
        let target = Matrix::zeros(store.get(id).dim());
        let loss = tape.mse(w, std::sync::Arc::new(target)).unwrap();
        tape.backward(loss).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.push("w", array![[0.5]]);
        let mut adam = AdamState::new(AdamConfig::with_lr(0.001), &store, [id]);
        // gradient of w² at 0.5 is 1
        let grads = quadratic_grads(&store, id);
        assert_eq!(grads.param(id).unwrap()[[0, 0]], 1.0);
        adam.step(&mut store, &grads).unwrap();
        let expected = 0.5 - 0.001 / (1.0 + 1e-8);
        assert!((store.get(id)[[0, 0]] - expected).abs() < 1e-15);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut store = ParamStore::new();
        let id = store.push("w", array![[0.0, 0.0]]);
        let mut adam = AdamState::new(AdamConfig::default(), &store, [id]);
        let grads = quadratic_grads(&store, id);
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get(id), &array![[0.0, 0.0]]);
    }

    #[test]
    fn ten_steps_descend_convex_scalar() {
        let mut store = ParamStore::new();
        let id = store.push("w", array![[1.0]]);
        let mut adam = AdamState::new(AdamConfig::with_lr(0.05), &store, [id]);
        let mut prev = 1.0;
        for _ in 0..10 {
            let grads = quadratic_grads(&store, id);
            adam.step(&mut store, &grads).unwrap();
            let w = store.get(id)[[0, 0]];
            assert!(w * w < prev);
            prev = w * w;
        }
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut store = ParamStore::new();
        let id = store.push("encoder.0.weight", array![[f64::NAN]]);
        let mut adam = AdamState::new(AdamConfig::default(), &store, [id]);
        let grads = quadratic_grads(&store, id);
        let err = adam.step(&mut store, &grads).unwrap_err();
        assert!(err.to_string().contains("encoder.0.weight"));
        assert_eq!(adam.step_count, 0);
    }
}
