use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// First-order optimizer with its running state.
///
/// Parameters that receive no gradient in a step are left untouched, moments
/// included.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        let (first_moment, second_moment) = match kind {
            OptimizerKind::Adam => (zeros.clone(), zeros),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Optimizer {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment,
            second_moment,
        }
    }

    pub fn apply(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (id, g) in grads.iter() {
                    for (p, gi) in params.get_mut(id).data_mut().iter_mut().zip(g.data()) {
                        *p -= self.learning_rate * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as f64;
                let bc1 = 1.0 - self.beta1.powf(t);
                let bc2 = 1.0 - self.beta2.powf(t);
                for (id, g) in grads.iter() {
                    let m = &mut self.first_moment[id.index()];
                    let v = &mut self.second_moment[id.index()];
                    let p = params.get_mut(id).data_mut();
                    for k in 0..p.len() {
                        let gk = g.data()[k];
                        m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                        v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                        let mhat = m[k] / bc1;
                        let vhat = v[k] / bc2;
                        p[k] -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}
