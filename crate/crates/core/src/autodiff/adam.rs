use serde::{Deserialize, Serialize};

use super::{AutodiffError, GradStore, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
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

/// First/second moment estimates for every parameter of one store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &Tensor {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor {
        &self.second[index]
    }

    /// Bias-corrected Adam update of every parameter in `store`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradStore) -> Result<(), AutodiffError> {
        if !(self.config.learning_rate > 0.0) {
            return Err(AutodiffError::Config(format!(
                "learning rate must be positive, got {}",
                self.config.learning_rate
            )));
        }
        for (id, name, t) in store.iter() {
            let g = grads.get(id);
            if g.shape() != t.shape() {
                return Err(AutodiffError::Shape {
                    op: "adam",
                    detail: format!("{name}: grad {:?} vs param {:?}", g.shape(), t.shape()),
                });
            }
            if !g.is_finite() {
                return Err(AutodiffError::NonFiniteGradient(name.to_string()));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let g = grads.get(id).values();
            let m = self.first[id.0].values_mut();
            let v = self.second[id.0].values_mut();
            let p = store.get_mut(id).values_mut();
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new("p");
        s.insert("w", Tensor::row(vec![1.0, -2.0, 0.5]));
        s
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut s = store();
        let before = s.flatten();
        let mut adam = AdamState::new(&s, AdamConfig::default());
        let mut g = GradStore::zeros_like(&s);
        g.grads[0] = Tensor::row(vec![1.0, 1.0, 1.0]);
        adam.step(&mut s, &g).unwrap();
        let m1 = adam.first_moment(0).values()[0];
        let after_one = s.flatten();
        let zero = GradStore::zeros_like(&s);
        adam.step(&mut s, &zero).unwrap();
        assert!((adam.first_moment(0).values()[0] - 0.9 * m1).abs() < 1e-15);
        // A zero gradient still moves the parameter through momentum; a fresh
        // optimizer fed only zeros must not move at all.
        let mut fresh = store();
        let mut adam2 = AdamState::new(&fresh, AdamConfig::default());
        let zero = GradStore::zeros_like(&fresh);
        adam2.step(&mut fresh, &zero).unwrap();
        assert_eq!(fresh.flatten(), before);
        assert_ne!(after_one, before);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn constant_gradient_converges_to_sign_step() {
        let mut s = store();
        let mut adam = AdamState::new(&s, AdamConfig::default());
        let mut g = GradStore::zeros_like(&s);
        g.grads[0] = Tensor::row(vec![0.3, -2.0, 1e-3]);
        let mut last = s.flatten();
        let mut delta = vec![0.0; 3];
        for _ in 0..1000 {
            adam.step(&mut s, &g).unwrap();
            let now = s.flatten();
            for k in 0..3 {
                delta[k] = now[k] - last[k];
            }
            last = now;
        }
        let expected = [-1e-3, 1e-3, -1e-3];
        for k in 0..3 {
            assert!((delta[k] - expected[k]).abs() < 1e-3 * 1e-3, "{k}: {}", delta[k]);
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store();
        let mut adam = AdamState::new(&s, AdamConfig::default());
        let mut g = GradStore::zeros_like(&s);
        g.grads[0].values_mut()[1] = f64::NAN;
        let err = adam.step(&mut s, &g).unwrap_err();
        assert!(err.to_string().contains('w'));
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn identical_runs_give_identical_params() {
        let run = || {
            let mut s = store();
            let mut adam = AdamState::new(&s, AdamConfig::default());
            let mut g = GradStore::zeros_like(&s);
            for i in 0..50 {
                g.grads[0] = Tensor::row(vec![(i as f64).sin(), 0.1, -0.2 * i as f64]);
                adam.step(&mut s, &g).unwrap();
            }
            s.flatten()
        };
        assert_eq!(run(), run());
    }
}
