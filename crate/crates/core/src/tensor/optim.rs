use super::{Gradients, ParamStore, Tensor};
use crate::error::{Error, Result};

/// First/second moment buffers and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .ids()
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update over every parameter in `store`.
    pub fn step(
        &self,
        store: &mut ParamStore,
        grads: &Gradients,
        state: &mut AdamState,
    ) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        if let Some(id) = ids.iter().find(|&&id| grads.get(id).is_none()) {
            return Err(Error::MissingGrad(store.name(*id).to_string()));
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in ids {
            let g = grads.get(id).expect("checked above").data();
            let m = state.m[id.index()].data_mut();
            let v = state.v[id.index()].data_mut();
            let p = store.value_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Halves (by `factor`) the learning rate when a minimized metric stalls.
///
/// An evaluation counts as an improvement when it beats the best value seen
/// so far by at least `threshold`. After `patience` consecutive
/// non-improving evaluations the rate decays and the counter resets.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: u32,
    pub threshold: f64,
    pub best: f64,
    pub bad_evals: u32,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: u32) -> Self {
        PlateauScheduler {
            factor,
            patience,
            threshold: 1e-4,
            best: f64::INFINITY,
            bad_evals: 0,
        }
    }

    /// Records `metric` and returns the learning rate to use next.
    pub fn observe(&mut self, lr: f64, metric: f64) -> f64 {
        if metric <= self.best - self.threshold {
            self.best = metric;
            self.bad_evals = 0;
            return lr;
        }
        self.bad_evals += 1;
        if self.bad_evals >= self.patience {
            self.bad_evals = 0;
            lr * self.factor
        } else {
            lr
        }
    }
}
