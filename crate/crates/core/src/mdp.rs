//! Episodic feature-acquisition MDP.
//!
//! Actions `0..n` reveal one feature of the current sample at cost `lambda`;
//! actions `n..n + k` end the episode with a class prediction. The network
//! sees `[x * m; m]`, so hidden feature values are never exposed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Amount subtracted from the Q-value of every currently invalid action.
pub const INVALID_PENALTY: f32 = 1e6;

/// Index into the combined action space `[0, n + k)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Reveal(usize),
    Classify(usize),
}

/// Shape of the MDP: `n` features, `k` classes, per-feature cost `lambda`,
/// and the maximum number of features an episode may reveal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEnv {
    pub n_features: usize,
    pub n_classes: usize,
    pub lambda: f32,
    pub max_steps: usize,
}

impl FeatureEnv {
    pub fn new(n_features: usize, n_classes: usize, lambda: f32) -> Self {
        Self {
            n_features,
            n_classes,
            lambda,
            max_steps: n_features,
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps.min(self.n_features);
        self
    }

    pub fn n_actions(&self) -> usize {
        self.n_features + self.n_classes
    }

    pub fn input_dim(&self) -> usize {
        2 * self.n_features
    }

    pub fn decode(&self, action: ActionId) -> Result<Action> {
        let a = action.0;
        if a < self.n_features {
            Ok(Action::Reveal(a))
        } else if a < self.n_actions() {
            Ok(Action::Classify(a - self.n_features))
        } else {
            Err(Error::InvalidAction {
                action: a,
                reason: "index outside the action space",
            })
        }
    }

    pub fn classify_action(&self, class: usize) -> ActionId {
        ActionId(self.n_features + class)
    }

    pub fn reset(&self, sample: &[f32]) -> Result<EpisodeState> {
        if sample.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: sample.len(),
            });
        }
        Ok(EpisodeState {
            x: sample.to_vec(),
            mask: vec![false; self.n_features],
            revealed: Vec::new(),
        })
    }

    /// Apply `action`. Feature actions cost `lambda`; a classification action
    /// ends the episode with reward 0 when correct and -1 otherwise.
    pub fn step(&self, state: &EpisodeState, action: ActionId, true_label: usize) -> Result<StepResult> {
        match self.decode(action)? {
            Action::Reveal(i) => {
                if state.mask[i] {
                    return Err(Error::InvalidAction {
                        action: i,
                        reason: "feature already revealed",
                    });
                }
                if state.n_revealed() >= self.max_steps {
                    return Err(Error::InvalidAction {
                        action: i,
                        reason: "feature budget exhausted",
                    });
                }
                let mut next = state.clone();
                next.mask[i] = true;
                next.revealed.push(i);
                Ok(StepResult {
                    next_state: Some(next),
                    reward: -self.lambda,
                    done: false,
                    predicted_class: None,
                })
            }
            Action::Classify(j) => Ok(StepResult {
                next_state: None,
                reward: if j == true_label { 0.0 } else { -1.0 },
                done: true,
                predicted_class: Some(j),
            }),
        }
    }

    /// Whether feature `i` may still be revealed given a mask.
    pub fn feature_valid(&self, mask: &[bool], revealed: usize, i: usize) -> bool {
        !mask[i] && revealed < self.max_steps
    }

    /// Subtract [`INVALID_PENALTY`] from every feature action that may not be
    /// taken in `state`. Classification actions are never penalized.
    pub fn validity_penalty(&self, q_values: &[f32], state: &EpisodeState) -> Vec<f32> {
        let mut out = q_values.to_vec();
        self.apply_penalty(&mut out, &state.mask, state.n_revealed());
        out
    }

    pub fn apply_penalty(&self, q_values: &mut [f32], mask: &[bool], revealed: usize) {
        debug_assert_eq!(q_values.len(), self.n_actions());
        let exhausted = revealed >= self.max_steps;
        for (q, &m) in q_values.iter_mut().zip(mask) {
            if m || exhausted {
                *q -= INVALID_PENALTY;
            }
        }
    }

    /// Masked argmax for a raw network input `[x * m; m]`, ties to the lowest index.
    pub fn masked_argmax_from_input(&self, q_values: &[f32], input: &[f32]) -> ActionId {
        let mask: Vec<bool> = input[self.n_features..].iter().map(|&v| v > 0.5).collect();
        let revealed = mask.iter().filter(|&&m| m).count();
        let mut q = q_values.to_vec();
        self.apply_penalty(&mut q, &mask, revealed);
        argmax(&q)
    }

    /// Indices of every action that is currently allowed.
    pub fn valid_actions(&self, state: &EpisodeState) -> Vec<ActionId> {
        let revealed = state.n_revealed();
        (0..self.n_features)
            .filter(|&i| self.feature_valid(&state.mask, revealed, i))
            .chain(self.n_features..self.n_actions())
            .map(ActionId)
            .collect()
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f32]) -> ActionId {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    ActionId(best)
}

/// One sample's progress through an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    x: Vec<f32>,
    mask: Vec<bool>,
    revealed: Vec<usize>,
}

impl EpisodeState {
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Feature indices in the order they were revealed.
    pub fn revealed(&self) -> &[usize] {
        &self.revealed
    }

    pub fn n_revealed(&self) -> usize {
        self.revealed.len()
    }

    /// Sample values with unrevealed entries zeroed.
    pub fn masked_x(&self) -> Vec<f32> {
        self.x
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect()
    }

    /// Network input `[x * m; m]` of length `2n`.
    pub fn network_input(&self) -> Vec<f32> {
        let mut out = vec![0.0; 2 * self.x.len()];
        self.write_input(&mut out);
        out
    }

    pub fn write_input(&self, out: &mut [f32]) {
        let n = self.x.len();
        for i in 0..n {
            let m = self.mask[i];
            out[i] = if m { self.x[i] } else { 0.0 };
            out[n + i] = if m { 1.0 } else { 0.0 };
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    /// `None` once the episode has terminated.
    pub next_state: Option<EpisodeState>,
    pub reward: f32,
    pub done: bool,
    pub predicted_class: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> FeatureEnv {
        FeatureEnv::new(3, 2, 0.0001)
    }

    #[test]
    fn reset_hides_everything() {
        let s = env().reset(&[0.5, -1.0, 2.0]).unwrap();
        assert_eq!(s.mask().iter().filter(|&&m| m).count(), 0);
        let input = s.network_input();
        assert_eq!(input.len(), 6);
        assert!(input.iter().all(|&v| v == 0.0));
        assert!(s.masked_x().iter().all(|&v| v == 0.0));
        assert!(matches!(
            env().reset(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn feature_step_reveals_and_costs_lambda() {
        let e = env();
        let s = e.reset(&[0.5, -1.0, 2.0]).unwrap();
        let r = e.step(&s, ActionId(1), 0).unwrap();
        assert_eq!(r.reward, -0.0001);
        assert!(!r.done);
        assert!(r.predicted_class.is_none());
        let next = r.next_state.unwrap();
        assert_eq!(next.mask(), &[false, true, false]);
        assert_eq!(next.network_input(), vec![0.0, -1.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            e.step(&next, ActionId(1), 0),
            Err(Error::InvalidAction { action: 1, .. })
        ));
    }

    #[test]
    fn classification_rewards() {
        let e = env();
        let s = e.reset(&[0.0; 3]).unwrap();
        let right = e.step(&s, ActionId(4), 1).unwrap();
        assert_eq!((right.reward, right.done, right.predicted_class), (0.0, true, Some(1)));
        assert!(right.next_state.is_none());
        let wrong = e.step(&s, ActionId(3), 1).unwrap();
        assert_eq!((wrong.reward, wrong.done, wrong.predicted_class), (-1.0, true, Some(0)));
        assert!(e.step(&s, ActionId(5), 0).is_err());
    }

    #[test]
    fn penalty_examples() {
        let e = FeatureEnv::new(3, 1, 0.0);
        let mut s = e.reset(&[1.0, 2.0, 3.0]).unwrap();
        s = e.step(&s, ActionId(1), 0).unwrap().next_state.unwrap();
        let q = [2.0, 5.0, 1.0, 0.5];
        assert_eq!(e.validity_penalty(&q, &s), vec![2.0, 5.0 - 1e6, 1.0, 0.5]);

        let fresh = e.reset(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(e.validity_penalty(&q, &fresh), q.to_vec());

        let mut full = fresh.clone();
        for i in 0..3 {
            full = e.step(&full, ActionId(i), 0).unwrap().next_state.unwrap();
        }
        let penalized = e.validity_penalty(&[9.0, 9.0, 9.0, -5.0], &full);
        assert_eq!(argmax(&penalized), ActionId(3));
    }

    #[test]
    fn step_cap_blocks_features() {
        let e = FeatureEnv::new(4, 2, 0.0).with_max_steps(1);
        let s = e.reset(&[1.0; 4]).unwrap();
        let s = e.step(&s, ActionId(2), 0).unwrap().next_state.unwrap();
        assert!(e.step(&s, ActionId(0), 0).is_err());
        assert_eq!(e.valid_actions(&s), vec![ActionId(4), ActionId(5)]);
        let q = e.validity_penalty(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.0], &s);
        assert!(q[..4].iter().all(|&v| v < -1e5));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), ActionId(1));
        assert_eq!(argmax(&[0.0, 0.0]), ActionId(0));
    }

    #[test]
    fn argmax_from_input_reads_mask_half() {
        let e = FeatureEnv::new(2, 2, 0.0);
        let input = [0.3, 0.0, 1.0, 0.0];
        assert_eq!(e.masked_argmax_from_input(&[5.0, 4.0, 1.0, 0.0], &input), ActionId(1));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    proptest! {
        #[test]
        fn penalty_preserves_order_of_valid_actions(
            q in proptest::collection::vec(-100.0f32..100.0, 7),
            mask in proptest::collection::vec(any::<bool>(), 4),
        ) {
            let e = FeatureEnv::new(4, 3, 0.0);
            let mut s = e.reset(&[0.1, 0.2, 0.3, 0.4]).unwrap();
            for (i, &m) in mask.iter().enumerate() {
                if m {
                    s = e.step(&s, ActionId(i), 0).unwrap().next_state.unwrap();
                }
            }
            let out = e.validity_penalty(&q, &s);
            let valid = e.valid_actions(&s);
            for &ActionId(a) in &valid {
                prop_assert_eq!(out[a], q[a]);
                for &ActionId(b) in &valid {
                    prop_assert_eq!(q[a] < q[b], out[a] < out[b]);
                }
            }
        }
    }
}
