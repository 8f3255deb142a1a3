use crate::error::{Error, Result};
use crate::param::ParamStore;

/// How weight decay enters the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WeightDecay {
    /// L2 penalty folded into the gradient before the moment updates.
    #[default]
    Coupled,
    /// Applied directly to the weights, outside the adaptive step (AdamW).
    Decoupled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecay,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decay_mode: WeightDecay::Coupled,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    /// One update of every parameter, consuming the stored gradients.
    pub fn step(&self, params: &mut ParamStore) -> Result<()> {
        if params.iter().any(|p| p.grad.is_none()) {
            return Err(Error::Usage(
                "adam step called before gradients were applied".into(),
            ));
        }
        for p in params.iter_mut() {
            let mut grad = p.grad.take().expect("checked above");
            let st = &mut p.adam;
            st.step += 1;
            let t = st.step as i32;
            let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
            let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
            let w = p.value.data_mut();
            if self.decay_mode == WeightDecay::Coupled && self.weight_decay != 0.0 {
                for (g, x) in grad.iter_mut().zip(w.iter()) {
                    *g += self.weight_decay * x;
                }
            }
            for i in 0..w.len() {
                let g = grad[i];
                st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g;
                st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g * g;
                let mhat = st.m[i] / bc1;
                let vhat = st.v[i] / bc2;
                if self.decay_mode == WeightDecay::Decoupled {
                    w[i] -= self.lr * self.weight_decay * w[i];
                }
                w[i] -= self.lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
        Ok(())
    }
}
