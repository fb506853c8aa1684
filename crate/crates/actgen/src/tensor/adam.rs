//! Adam optimizer over a [`VarStore`].

use super::{Result, Scalar, TensorError, VarStore};

/// Per-parameter first/second moments plus the shared hyperparameters.
/// Moment buffers are aligned with the store's insertion order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Defaults tuned for pix2pix-style GAN training: lr 2e-4, beta1 0.5,
    /// beta2 0.999.
    pub fn new(store: &VarStore<T>) -> Self {
        Self::with_hyper(store, 2e-4, 0.5, 0.999, 1e-8)
    }

    pub fn with_hyper(store: &VarStore<T>, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let m = store.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        let v = store.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        Self {
            lr: T::from_f64(lr),
            beta1: T::from_f64(beta1),
            beta2: T::from_f64(beta2),
            epsilon: T::from_f64(epsilon),
            step: 0,
            m,
            v,
        }
    }

    /// One Adam update. `grads` is aligned with the store order; `None`
    /// entries (parameters absent from the step's graph) are left untouched.
    pub fn step(&mut self, store: &mut VarStore<T>, grads: &[Option<Vec<T>>]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                detail: format!(
                    "store has {} params, got {} grads / {} moments",
                    store.len(),
                    grads.len(),
                    self.m.len()
                ),
            });
        }
        self.step += 1;
        let t = self.step as f64;
        let corr1 = T::one() / (T::one() - T::from_f64(self.beta1.as_f64().powf(t)));
        let corr2 = T::one() / (T::one() - T::from_f64(self.beta2.as_f64().powf(t)));
        let one = T::one();
        for (idx, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let param = store.get_mut(super::ParamId(idx));
            if g.len() != param.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    detail: format!(
                        "param {} has {} values, gradient has {}",
                        idx,
                        param.len(),
                        g.len()
                    ),
                });
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for (i, (&gv, p)) in g.iter().zip(param.data_mut()).enumerate() {
                m[i] = self.beta1 * m[i] + (one - self.beta1) * gv;
                v[i] = self.beta2 * v[i] + (one - self.beta2) * gv * gv;
                let m_hat = m[i] * corr1;
                let v_hat = v[i] * corr2;
                *p = *p - self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
