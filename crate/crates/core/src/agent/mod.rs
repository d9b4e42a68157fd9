//! Data collection: a PPO agent whose whole training history is recorded,
//! plus a uniform random-policy baseline sharing the same action mechanics.
//!
//! Every policy decision is held for `action_repeat` frames, and with
//! probability `sticky_prob` the previous decision is repeated instead of the
//! policy's proposal. The first decision of an episode treats noop as the
//! previous action.

mod obs;
mod ppo;

pub use obs::{AgentObservation, ObsBuilder, HISTORY, OBS_SIZE};
pub use ppo::{
    categorical_entropy, clipped_surrogate, evaluate_policy, gae, gae_with_dones, ppo_update,
    record_policy, train_agent, CollectLog, Policy, PpoBatch, PpoStats,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{EpisodeBuilder, PolicyTag, Trajectory};
use crate::env::{render, Action, EnvConfig, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub n_envs: usize,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    /// Environment frames per env per iteration (decisions = frames / action_repeat).
    pub rollout_len: usize,
    pub epochs_per_iter: usize,
    pub minibatch: usize,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub total_env_steps: usize,
    pub action_repeat: usize,
    pub sticky_prob: f64,
    /// Rewards are multiplied by this before entering the returns.
    pub reward_scale: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub maps: Vec<String>,
    pub randomize_start: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            n_envs: 8,
            gamma: 0.99,
            entropy_coef: 0.1,
            learning_rate: 1e-4,
            rollout_len: 512,
            epochs_per_iter: 10,
            minibatch: 64,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            value_coef: 0.5,
            total_env_steps: 2_000_000,
            action_repeat: 4,
            sticky_prob: 0.3,
            reward_scale: 1e-3,
            checkpoint_every: 100_000,
            seed: 0,
            maps: crate::env::map::GameMap::shipped_names()
                .map(|s| s.to_string())
                .collect(),
            randomize_start: false,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_envs", self.n_envs),
            ("rollout_len", self.rollout_len),
            ("epochs_per_iter", self.epochs_per_iter),
            ("minibatch", self.minibatch),
            ("action_repeat", self.action_repeat),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("sticky_prob", self.sticky_prob),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.rollout_len % self.action_repeat != 0 {
            return Err(Error::Config(
                "rollout_len must be a multiple of action_repeat".into(),
            ));
        }
        if self.maps.is_empty() {
            return Err(Error::Config("at least one map is required".into()));
        }
        Ok(())
    }

    pub fn env(&self, index: usize) -> EnvConfig {
        EnvConfig {
            map: self.maps[index % self.maps.len()].clone(),
            randomize_start: self.randomize_start,
        }
    }
}

/// Shared decision mechanics: sticky repetition and action repeat.
#[derive(Debug, Clone)]
pub struct StickyActions {
    pub sticky_prob: f64,
    pub repeat: usize,
    prev: Action,
    held: Action,
    remaining: usize,
}

impl StickyActions {
    pub fn new(sticky_prob: f64, repeat: usize) -> Self {
        StickyActions {
            sticky_prob,
            repeat: repeat.max(1),
            prev: Action::Noop,
            held: Action::Noop,
            remaining: 0,
        }
    }

    pub fn reset(&mut self) {
        self.prev = Action::Noop;
        self.remaining = 0;
    }

    /// True when the next frame starts a new decision.
    pub fn needs_decision(&self) -> bool {
        self.remaining == 0
    }

    /// Resolves a policy proposal into the executed decision.
    pub fn decide(&mut self, proposal: Action, rng: &mut impl Rng) -> Action {
        let chosen = if rng.random_bool(self.sticky_prob) {
            self.prev
        } else {
            proposal
        };
        self.prev = chosen;
        self.held = chosen;
        self.remaining = self.repeat;
        chosen
    }

    /// The action for the next frame; call after `decide` when a decision was due.
    pub fn next_frame_action(&mut self) -> Action {
        debug_assert!(self.remaining > 0, "decide before taking frames");
        self.remaining -= 1;
        self.held
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomPolicyConfig {
    pub action_repeat: usize,
    pub sticky_prob: f64,
    pub maps: Vec<String>,
    pub randomize_start: bool,
    /// Ids are assigned consecutively from here.
    pub first_episode_id: u64,
}

impl Default for RandomPolicyConfig {
    fn default() -> Self {
        let a = AgentConfig::default();
        RandomPolicyConfig {
            action_repeat: a.action_repeat,
            sticky_prob: a.sticky_prob,
            maps: a.maps,
            randomize_start: false,
            first_episode_id: 0,
        }
    }
}

/// Uniform random play until `n_frames` frames are recorded in total.
/// The final episode may be cut short to hit the count exactly.
pub fn random_rollouts(
    n_frames: usize,
    seed: u64,
    config: &RandomPolicyConfig,
) -> Result<Vec<Trajectory>> {
    if config.maps.is_empty() {
        return Err(Error::Config("at least one map is required".into()));
    }
    let mut out = Vec::new();
    let mut total = 0;
    let mut episode = 0u64;
    while total < n_frames {
        let env = EnvConfig {
            map: config.maps[episode as usize % config.maps.len()].clone(),
            randomize_start: config.randomize_start,
        };
        let ep_seed = derive_seed(seed, episode);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ep_seed, 0x5eed));
        let mut state = env.reset(ep_seed)?;
        let mut sticky = StickyActions::new(config.sticky_prob, config.action_repeat);
        let mut b = EpisodeBuilder::new(
            config.first_episode_id + episode,
            ep_seed,
            PolicyTag::Random,
            env,
            &state,
        );
        while total < n_frames {
            if sticky.needs_decision() {
                let proposal = Action::ALL[rng.random_range(0..NUM_ACTIONS)];
                sticky.decide(proposal, &mut rng);
            }
            let a = sticky.next_frame_action();
            let frame = render(&state);
            let info = state.step_mut(a);
            b.push(frame, a, info.reward, info.done);
            total += 1;
            if info.done {
                break;
            }
        }
        out.push(b.finish());
        episode += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_frames_is_empty() {
        assert!(random_rollouts(0, 1, &RandomPolicyConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn repeat_expands_decisions() {
        let t = random_rollouts(400, 3, &RandomPolicyConfig::default()).unwrap();
        assert_eq!(t.iter().map(|t| t.len()).sum::<usize>(), 400);
        for chunk in t[0].actions.chunks(4) {
            assert!(chunk.iter().all(|a| *a == chunk[0]));
        }
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        assert!(AgentConfig {
            gamma: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AgentConfig {
            n_envs: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
