//! Row-sparse first-order optimizers.
//!
//! Parameters are addressed per row; only rows that received a gradient in
//! a step are touched. Adam keeps lazy per-row moment estimates with a
//! per-row step count for bias correction.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{EntityId, RelationId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(format!("unknown optimizer `{s}`")),
        }
    }
}

/// Identifies one parameter row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKey {
    Entity(EntityId),
    Relation(RelationId),
    /// θ of the tying declaration at this index.
    Theta(usize),
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    state: HashMap<ParamKey, Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: HashMap::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Moves `params` against `grad`.
    pub fn step(&mut self, key: ParamKey, params: &mut [f64], grad: &[f64]) {
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let st = self.state.entry(key).or_insert_with(|| Moments {
                    m: vec![0.0; grad.len()],
                    v: vec![0.0; grad.len()],
                    t: 0,
                });
                st.t += 1;
                let c1 = 1.0 - b1.powi(st.t as i32);
                let c2 = 1.0 - b2.powi(st.t as i32);
                for i in 0..grad.len() {
                    let g = grad[i];
                    st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
                    st.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g;
                    let m_hat = st.m[i] / c1;
                    let v_hat = st.v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}
