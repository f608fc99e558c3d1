//! Append-only transition log with row-aligned feature caches.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::envs::Transition;
use crate::error::{Error, Result};

/// What the transition head regresses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionTarget {
    /// `s' − s`; predictions add the current state back.
    #[default]
    Delta,
    /// `s'` directly.
    NextState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    state_dim: usize,
    action_dim: usize,
    transitions: Vec<Transition>,
    transition_features: Option<DMatrix<f64>>,
    reward_features: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            transitions: Vec::new(),
            transition_features: None,
            reward_features: None,
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Appends rows. Feature caches are dropped because they no longer cover every row.
    pub fn append(&mut self, rows: impl IntoIterator<Item = Transition>) -> Result<()> {
        let start = self.transitions.len();
        for t in rows {
            if t.state.len() != self.state_dim
                || t.next_state.len() != self.state_dim
                || t.action.len() != self.action_dim
            {
                self.transitions.truncate(start);
                return Err(Error::DimensionMismatch("transition does not match dataset dimensions".into()));
            }
            let finite = t.reward.is_finite()
                && t.state.iter().chain(t.action.iter()).chain(t.next_state.iter()).all(|x| x.is_finite());
            if !finite {
                self.transitions.truncate(start);
                return Err(Error::NonFinite("transition contains non-finite values".into()));
            }
            self.transitions.push(t);
        }
        if self.transitions.len() != start {
            self.transition_features = None;
            self.reward_features = None;
        }
        Ok(())
    }

    /// Stacked `[s, a]` rows (N × (d_s + d_a)).
    pub fn inputs(&self) -> DMatrix<f64> {
        let (ds, da) = (self.state_dim, self.action_dim);
        DMatrix::from_fn(self.len(), ds + da, |r, c| {
            let t = &self.transitions[r];
            if c < ds {
                t.state[c]
            } else {
                t.action[c - ds]
            }
        })
    }

    /// N × 1.
    pub fn rewards(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), 1, |r, _| self.transitions[r].reward)
    }

    /// N × d_s.
    pub fn transition_targets(&self, target: TransitionTarget) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.state_dim, |r, c| {
            let t = &self.transitions[r];
            match target {
                TransitionTarget::Delta => t.next_state[c] - t.state[c],
                TransitionTarget::NextState => t.next_state[c],
            }
        })
    }

    /// Replaces both caches. Row counts must equal the number of transitions.
    pub fn set_features(&mut self, transition: DMatrix<f64>, reward: DMatrix<f64>) -> Result<()> {
        if transition.nrows() != self.len() || reward.nrows() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "feature caches have {} and {} rows for {} transitions",
                transition.nrows(),
                reward.nrows(),
                self.len()
            )));
        }
        self.transition_features = Some(transition);
        self.reward_features = Some(reward);
        Ok(())
    }

    pub fn transition_features(&self) -> Option<&DMatrix<f64>> {
        self.transition_features.as_ref()
    }

    pub fn reward_features(&self) -> Option<&DMatrix<f64>> {
        self.reward_features.as_ref()
    }
}
