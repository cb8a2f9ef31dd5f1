use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::{Error, Result};

/// One stored entry `(a_{w-1}, r_{w-1}, i_w, o_w, c_w)` plus a padding mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub prev_action: Vec<f64>,
    pub prev_reward: f64,
    pub information: Vec<f64>,
    pub observation: Vec<f64>,
    pub continuation: bool,
    /// False for left padding before an episode's first step.
    pub valid: bool,
}

impl WindowEntry {
    pub fn padding(action_dim: usize, info_dim: usize, obs_dim: usize) -> Self {
        Self {
            prev_action: vec![0.0; action_dim],
            prev_reward: 0.0,
            information: vec![0.0; info_dim],
            observation: vec![0.0; obs_dim],
            continuation: true,
            valid: false,
        }
    }
}

pub type Window = Vec<WindowEntry>;

/// `N` windows of length `W`, stored time-major: element `w` of every field
/// is an `N × d` matrix holding step `w` of all windows.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub prev_actions: Vec<Tensor>,
    pub prev_rewards: Vec<Tensor>,
    pub information: Vec<Tensor>,
    pub observations: Vec<Tensor>,
    pub continuations: Vec<Tensor>,
    pub mask: Vec<Tensor>,
}

impl SequenceBatch {
    pub fn from_windows(windows: &[&Window]) -> Result<Self> {
        let Some(first) = windows.first() else {
            return Err(Error::Contract("batch needs at least one window".into()));
        };
        let len = first.len();
        if len == 0 {
            return Err(Error::Contract("window length must be at least 1".into()));
        }
        let e0 = &first[0];
        let dims = (e0.prev_action.len(), e0.information.len(), e0.observation.len());
        for w in windows {
            if w.len() != len {
                return Err(Error::Shape(format!("window lengths {} and {len} differ", w.len())));
            }
            for e in w.iter() {
                if (e.prev_action.len(), e.information.len(), e.observation.len()) != dims {
                    return Err(Error::Shape("window entries have inconsistent widths".into()));
                }
            }
        }
        let stack = |t: usize, f: &dyn Fn(&WindowEntry) -> Vec<f64>| {
            let rows: Vec<Vec<f64>> = windows.iter().map(|w| f(&w[t])).collect();
            Tensor::from_rows(&rows)
        };
        let mut batch = SequenceBatch {
            prev_actions: Vec::with_capacity(len),
            prev_rewards: Vec::with_capacity(len),
            information: Vec::with_capacity(len),
            observations: Vec::with_capacity(len),
            continuations: Vec::with_capacity(len),
            mask: Vec::with_capacity(len),
        };
        for t in 0..len {
            batch.prev_actions.push(stack(t, &|e| e.prev_action.clone()));
            batch.prev_rewards.push(stack(t, &|e| vec![e.prev_reward]));
            batch.information.push(stack(t, &|e| e.information.clone()));
            batch.observations.push(stack(t, &|e| e.observation.clone()));
            batch.continuations.push(stack(t, &|e| vec![f64::from(u8::from(e.continuation))]));
            batch.mask.push(stack(t, &|e| vec![f64::from(u8::from(e.valid))]));
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.observations.first().map_or(0, Tensor::rows)
    }

    /// Rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let f = |ts: &[Tensor]| -> Vec<Tensor> {
            ts.iter()
                .map(|t| {
                    let rows: Vec<&[f64]> = perm.iter().map(|&r| t.row_slice(r)).collect();
                    Tensor::from_rows(&rows)
                })
                .collect()
        };
        Self {
            prev_actions: f(&self.prev_actions),
            prev_rewards: f(&self.prev_rewards),
            information: f(&self.information),
            observations: f(&self.observations),
            continuations: f(&self.continuations),
            mask: f(&self.mask),
        }
    }
}
