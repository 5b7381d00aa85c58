//! Adagrad and Adam with decoupled weight decay and a separate learning
//! rate for the embedding matrix.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Parameter;
use crate::model::EMBEDDING_PARAM;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adagrad,
    Adam,
}

const EPSILON: f64 = 1e-8;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;

enum SlotState<T> {
    Adagrad { acc: Tensor<T> },
    Adam { m: Tensor<T>, v: Tensor<T> },
}

/// Per-parameter optimizer state keyed by parameter name.
///
/// One call to [`Optimizer::step`] applies decoupled weight decay, then
/// the gradient update, then zeroes every gradient. The embedding matrix
/// uses `emb_lr` instead of `lr`; `emb_lr == 0` leaves it untouched
/// entirely.
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: f64,
    emb_lr: f64,
    weight_decay: f64,
    state: HashMap<String, SlotState<T>>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, emb_lr: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind,
            lr,
            emb_lr,
            weight_decay,
            state: HashMap::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &[Parameter<T>]) {
        self.steps += 1;
        for p in params {
            let name = p.name();
            let is_embedding = name == EMBEDDING_PARAM;
            let lr = if is_embedding { self.emb_lr } else { self.lr };
            if is_embedding && lr == 0.0 {
                continue; // frozen: value and state stay bit-identical
            }

            let slot = self.state.entry(name).or_insert_with(|| match self.kind {
                OptimizerKind::Adagrad => SlotState::Adagrad {
                    acc: Tensor::zeros(&p.shape()),
                },
                OptimizerKind::Adam => SlotState::Adam {
                    m: Tensor::zeros(&p.shape()),
                    v: Tensor::zeros(&p.shape()),
                },
            });

            let lr_t = T::from_f64(lr);
            let decay = T::from_f64(lr * self.weight_decay);
            let eps = T::from_f64(EPSILON);
            let steps = self.steps;
            p.update(|value, grad| {
                if self.weight_decay != 0.0 {
                    for v in value.data_mut() {
                        *v = *v - decay * *v;
                    }
                }
                match slot {
                    SlotState::Adagrad { acc } => {
                        for ((v, &g), a) in value
                            .data_mut()
                            .iter_mut()
                            .zip(grad.data())
                            .zip(acc.data_mut())
                        {
                            *a = *a + g * g;
                            *v = *v - lr_t * g / (a.sqrt() + eps);
                        }
                    }
                    SlotState::Adam { m, v: second } => {
                        let b1 = T::from_f64(BETA1);
                        let b2 = T::from_f64(BETA2);
                        let c1 = T::from_f64(1.0 - BETA1.powi(steps as i32));
                        let c2 = T::from_f64(1.0 - BETA2.powi(steps as i32));
                        for (((v, &g), mi), vi) in value
                            .data_mut()
                            .iter_mut()
                            .zip(grad.data())
                            .zip(m.data_mut())
                            .zip(second.data_mut())
                        {
                            *mi = b1 * *mi + (T::one() - b1) * g;
                            *vi = b2 * *vi + (T::one() - b2) * g * g;
                            let m_hat = *mi / c1;
                            let v_hat = *vi / c2;
                            *v = *v - lr_t * m_hat / (v_hat.sqrt() + eps);
                        }
                    }
                }
            });
        }
        for p in params {
            p.zero_grad();
        }
    }
}
