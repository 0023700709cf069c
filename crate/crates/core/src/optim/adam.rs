use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::layers::Parameterized;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Gradients keyed by parameter name.
pub type ParamGrads<S> = IndexMap<String, Vec<S>>;

/// First and second moment buffers per parameter plus the shared step count.
#[derive(Clone, Debug)]
pub struct AdamState<S = f32> {
    pub config: AdamConfig,
    m: IndexMap<String, Vec<S>>,
    v: IndexMap<String, Vec<S>>,
    t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            m: IndexMap::new(),
            v: IndexMap::new(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&[S]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[S]> {
        self.v.get(name).map(Vec::as_slice)
    }

    /// Advances the step counter; call once per optimizer step before the
    /// per-parameter [`AdamState::update`] calls.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, name: &str, param: &mut [S], grad: &[S], lr: f64) -> Result<()> {
        if param.len() != grad.len() {
            return Err(Error::shape(format!(
                "adam: parameter `{name}` has {} values, gradient {}",
                param.len(),
                grad.len()
            )));
        }
        if !(lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        if self.t == 0 {
            return Err(Error::config("adam: update before begin_step"));
        }
        let c = self.config;
        let m = self
            .m
            .entry(name.to_string())
            .or_insert_with(|| vec![S::zero(); param.len()]);
        let v = self
            .v
            .entry(name.to_string())
            .or_insert_with(|| vec![S::zero(); param.len()]);
        if m.len() != param.len() {
            return Err(Error::shape(format!("adam: parameter `{name}` changed size")));
        }
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let (one_b1, one_b2) = (S::of(1.0 - c.beta1), S::of(1.0 - c.beta2));
        let t = self.t as i32;
        let corr1 = S::of(1.0 - c.beta1.powi(t));
        let corr2 = S::of(1.0 - c.beta2.powi(t));
        let (lr, eps) = (S::of(lr), S::of(c.eps));
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + one_b1 * g;
            v[i] = b2 * v[i] + one_b2 * g * g;
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    /// One optimizer step over every parameter of `model` that has a
    /// gradient in `grads`.
    pub fn step(&mut self, model: &mut dyn Parameterized<S>, grads: &ParamGrads<S>, lr: f64) -> Result<()> {
        self.begin_step();
        let mut err = None;
        let mut seen = 0;
        model.visit_params_mut(&mut |name, t| {
            if err.is_some() {
                return;
            }
            if let Some(g) = grads.get(name) {
                seen += 1;
                if let Err(e) = self.update(name, t.data_mut(), g, lr) {
                    err = Some(e);
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != grads.len() {
            return Err(Error::shape("adam: gradients for unknown parameters"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = AdamState::<f64>::new(AdamConfig::default());
        let mut w = [0.0];
        s.begin_step();
        s.update("w", &mut w, &[1.0], 0.1).unwrap();
        assert!((w[0] + 0.1).abs() < 1e-6, "w = {}", w[0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn zero_gradient_fresh_state_is_noop() {
        let mut s = AdamState::<f64>::new(AdamConfig::default());
        let mut w = [0.7, -3.0];
        s.begin_step();
        s.update("w", &mut w, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(w, [0.7, -3.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn errors() {
        let mut s = AdamState::<f64>::new(AdamConfig::default());
        let mut w = [0.0, 0.0];
        assert!(s.update("w", &mut w, &[1.0, 1.0], 0.1).is_err());
        s.begin_step();
        assert!(s.update("w", &mut w, &[1.0], 0.1).is_err());
        assert!(s.update("w", &mut w, &[1.0, 1.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn zero_gradient_with_zero_moments_leaves_params(
            w in prop::collection::vec(-10.0f64..10.0, 1..16),
            t in 0u64..50,
        ) {
            let mut s = AdamState::<f64>::new(AdamConfig::default());
            s.t = t;
            let mut p = w.clone();
            s.begin_step();
            s.update("p", &mut p, &vec![0.0; w.len()], 1e-3).unwrap();
            prop_assert_eq!(p, w);
            prop_assert!(s.second_moment("p").unwrap().iter().all(|&v| v >= 0.0));
        }
    }
}
