use std::collections::VecDeque;

use rand::Rng;

use super::{ActionVec, StateVec};
use crate::error::{Error, Result};

/// One trajectory: `states.len() == actions.len() + 1 == rewards.len() + 1`.
///
/// `rewards[t]` is the reward received on the transition
/// `states[t] --actions[t]--> states[t + 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Episode {
    pub states: Vec<StateVec>,
    pub actions: Vec<ActionVec>,
    pub rewards: Vec<f64>,
    /// Set when the environment terminated the episode (goal reached).
    pub terminated: bool,
}

impl Episode {
    pub fn new(initial: StateVec) -> Self {
        Self {
            states: vec![initial],
            ..Default::default()
        }
    }

    pub fn push(&mut self, action: ActionVec, reward: f64, next: StateVec) {
        self.actions.push(action);
        self.rewards.push(reward);
        self.states.push(next);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.actions.len() + 1 || self.rewards.len() != self.actions.len() {
            return Err(Error::InvalidArgument(format!(
                "episode lengths inconsistent: {} states, {} actions, {} rewards",
                self.states.len(),
                self.actions.len(),
                self.rewards.len()
            )));
        }
        let finite = self.states.iter().chain(&self.actions).all(|v| v.iter().all(|x| x.is_finite()))
            && self.rewards.iter().all(|r| r.is_finite());
        if !finite {
            return Err(Error::NonFinite("episode"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub state: &'a StateVec,
    pub action: &'a ActionVec,
    pub reward: f64,
    pub next: &'a StateVec,
}

/// FIFO store of whole episodes.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
    transitions: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            episodes: VecDeque::new(),
            transitions: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, episode: Episode) -> Result<()> {
        episode.validate()?;
        if self.episodes.len() == self.capacity {
            if let Some(old) = self.episodes.pop_front() {
                self.transitions -= old.len();
            }
        }
        self.transitions += episode.len();
        self.episodes.push_back(episode);
        Ok(())
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions == 0
    }

    pub fn transition_count(&self) -> usize {
        self.transitions
    }

    pub fn transition(&self, mut index: usize) -> Option<Transition<'_>> {
        for ep in &self.episodes {
            if index < ep.len() {
                return Some(Transition {
                    state: &ep.states[index],
                    action: &ep.actions[index],
                    reward: ep.rewards[index],
                    next: &ep.states[index + 1],
                });
            }
            index -= ep.len();
        }
        None
    }

    /// Uniform over all stored transitions.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Transition<'_>> {
        if self.transitions == 0 {
            return Err(Error::EmptyBuffer);
        }
        let i = rng.random_range(0..self.transitions);
        Ok(self.transition(i).expect("index below transition count"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn ep(n: usize) -> Episode {
        let mut e = Episode::new(DVector::zeros(1));
        for i in 0..n {
            e.push(DVector::zeros(1), i as f64, DVector::from_element(1, i as f64 + 1.0));
        }
        e
    }

    #[test]
    fn fifo_eviction_keeps_capacity() {
        let mut b = ReplayBuffer::new(2);
        b.push(ep(3)).unwrap();
        b.push(ep(4)).unwrap();
        b.push(ep(5)).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.transition_count(), 9);
        assert_eq!(b.episodes().next().unwrap().len(), 4);
    }

    #[test]
    fn rejects_inconsistent_episode() {
        let mut e = ep(2);
        e.rewards.pop();
        assert!(ReplayBuffer::new(1).push(e).is_err());
    }

    #[test]
    fn transition_indexing_spans_episodes() {
        let mut b = ReplayBuffer::new(4);
        b.push(ep(2)).unwrap();
        b.push(ep(3)).unwrap();
        let t = b.transition(3).unwrap();
        assert_eq!(t.reward, 1.0);
        assert_eq!(t.next[0], 2.0);
        assert!(b.transition(5).is_none());
    }
}
