//! PPO with generalized advantage estimation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::nn::{self, Module, OptimizerConfig, VarStore};
use tch::{Kind, Tensor};

use super::obs::{AgentObservation, ObsBuilder, HISTORY, OBS_SIZE};
use super::{AgentConfig, StickyActions};
use crate::checkpoint::{self, LoadOptions};
use crate::dataset::{DatasetWriter, EpisodeBuilder, PolicyTag, Trajectory};
use crate::env::{render, Action, Frame, GameState, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::nn::{device, seeded_init};
use crate::rng::derive_seed;

pub const CHECKPOINT_KIND: &str = "agent";
const FEATURES: i64 = 512;

/// Generalized advantage estimates; `values` carries the bootstrap value last.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    gae_with_dones(rewards, values, &vec![false; rewards.len()], gamma, lambda)
}

/// As [`gae`], cutting the recursion after steps flagged terminal.
pub fn gae_with_dones(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::shape(
            format!("{} values", rewards.len() + 1),
            values.len(),
        ));
    }
    if dones.len() != rewards.len() {
        return Err(Error::shape(
            format!("{} done flags", rewards.len()),
            dones.len(),
        ));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        acc = delta + gamma * lambda * live * acc;
        adv[t] = acc;
    }
    Ok(adv)
}

/// Per-sample clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage)
}

/// Convolutional feature network with actor and critic heads.
#[derive(Debug)]
pub struct Policy {
    vs: VarStore,
    convs: Vec<nn::Conv2D>,
    fc: nn::Linear,
    actor: (nn::Linear, nn::Linear),
    critic: (nn::Linear, nn::Linear),
    pub config: AgentConfig,
}

impl Policy {
    pub fn new(config: &AgentConfig) -> Self {
        let vs = VarStore::new(device());
        let p = vs.root();
        let c = |stride, padding| nn::ConvConfig {
            stride,
            padding,
            ..Default::default()
        };
        let convs = vec![
            nn::conv2d(&p / "conv1", 2, 32, 4, c(2, 1)),
            nn::conv2d(&p / "conv2", 32, 64, 4, c(2, 1)),
            nn::conv2d(&p / "conv3", 64, 64, 3, c(1, 1)),
        ];
        let flat = 64 * (OBS_SIZE as i64 / 4).pow(2) + (HISTORY * NUM_ACTIONS) as i64;
        let fc = nn::linear(&p / "fc", flat, FEATURES, Default::default());
        let actor = (
            nn::linear(&p / "actor1", FEATURES, 256, Default::default()),
            nn::linear(&p / "actor2", 256, NUM_ACTIONS as i64, Default::default()),
        );
        let critic = (
            nn::linear(&p / "critic1", FEATURES, 256, Default::default()),
            nn::linear(&p / "critic2", 256, 1, Default::default()),
        );
        seeded_init(&vs, derive_seed(config.seed, 11), &["actor2"]);
        Policy {
            vs,
            convs,
            fc,
            actor,
            critic,
            config: config.clone(),
        }
    }

    fn inputs(obs: &[&AgentObservation]) -> (Tensor, Tensor) {
        let n = obs.len() as i64;
        let s = OBS_SIZE as i64;
        let mut img = Vec::with_capacity(obs.len() * 2 * OBS_SIZE * OBS_SIZE);
        let mut acts = Vec::with_capacity(obs.len() * HISTORY);
        for o in obs {
            img.extend_from_slice(&o.frame);
            img.extend_from_slice(&o.minimap);
            acts.extend(o.last_actions.iter().map(|&a| a as i64));
        }
        let img = Tensor::from_slice(&img).view([n, 2, s, s]);
        let acts = Tensor::from_slice(&acts)
            .view([n, HISTORY as i64])
            .one_hot(NUM_ACTIONS as i64)
            .to_kind(Kind::Float)
            .view([n, -1]);
        (img, acts)
    }

    /// Action logits `(B, 8)` and values `(B,)`.
    pub fn forward(&self, obs: &[&AgentObservation]) -> (Tensor, Tensor) {
        let (img, acts) = Self::inputs(obs);
        let mut h = img;
        for c in &self.convs {
            h = c.forward(&h).relu();
        }
        let h = Tensor::cat(&[h.flatten(1, -1), acts], 1);
        let f = self.fc.forward(&h).relu();
        let logits = self.actor.1.forward(&self.actor.0.forward(&f).tanh());
        let value = self
            .critic
            .1
            .forward(&self.critic.0.forward(&f).tanh())
            .squeeze_dim(1);
        (logits, value)
    }

    /// Samples one action per observation with the caller's RNG.
    pub fn act(&self, obs: &[&AgentObservation], rng: &mut impl Rng) -> Vec<(Action, f64, f64)> {
        let (logits, value) = tch::no_grad(|| self.forward(obs));
        let probs =
            Vec::<f64>::try_from(logits.softmax(-1, Kind::Double).flatten(0, -1)).expect("probs");
        let values = Vec::<f64>::try_from(value.to_kind(Kind::Double)).expect("values");
        probs
            .chunks_exact(NUM_ACTIONS)
            .zip(values)
            .map(|(p, v)| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut idx = NUM_ACTIONS - 1;
                for (i, &pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        idx = i;
                        break;
                    }
                }
                (Action::ALL[idx], p[idx].max(1e-12).ln(), v)
            })
            .collect()
    }

    /// Adam over the policy parameters at the configured learning rate.
    pub fn optimizer(&self) -> Result<nn::Optimizer> {
        Ok(nn::Adam::default().build(&self.vs, self.config.learning_rate)?)
    }

    pub fn hash(&self) -> String {
        checkpoint::params_hash(&[("policy", &self.vs)])
    }

    pub fn save(&self, path: &Path, step: usize) -> Result<()> {
        checkpoint::save(
            path,
            CHECKPOINT_KIND,
            &self.config,
            step,
            serde_json::Value::Null,
            &[("policy", &self.vs)],
        )?;
        Ok(())
    }

    pub fn load(path: &Path, opts: LoadOptions) -> Result<(Self, usize)> {
        let header = checkpoint::read_header(path)?;
        let mut p = Policy::new(&header.config_as()?);
        let header = checkpoint::load(path, CHECKPOINT_KIND, opts, &mut [("policy", &mut p.vs)])?;
        Ok((p, header.step))
    }
}

/// Per-row entropy of the categorical distributions given by `logits`.
pub fn categorical_entropy(logits: &Tensor) -> Tensor {
    let logp = logits.log_softmax(-1, Kind::Float);
    -(logp.exp() * &logp).sum_dim_intlist(-1, false, Kind::Float)
}

/// One PPO update's worth of samples.
#[derive(Debug, Clone, Default)]
pub struct PpoBatch {
    pub obs: Vec<AgentObservation>,
    pub actions: Vec<Action>,
    pub old_logprobs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Losses for one minibatch: `(total, policy, value, entropy, clip fraction)`.
fn ppo_losses(
    policy: &Policy,
    batch: &PpoBatch,
    idx: &[usize],
    cfg: &AgentConfig,
) -> (Tensor, Tensor, Tensor, Tensor, f64) {
    let obs: Vec<&AgentObservation> = idx.iter().map(|&i| &batch.obs[i]).collect();
    let (logits, values) = policy.forward(&obs);
    let logp_all = logits.log_softmax(-1, Kind::Float);
    let acts = Tensor::from_slice(
        &idx.iter()
            .map(|&i| batch.actions[i].id() as i64)
            .collect::<Vec<_>>(),
    );
    let logp = logp_all.gather(1, &acts.unsqueeze(1), false).squeeze_dim(1);
    let old = Tensor::from_slice(
        &idx.iter()
            .map(|&i| batch.old_logprobs[i] as f32)
            .collect::<Vec<_>>(),
    );
    let adv = Tensor::from_slice(
        &idx.iter()
            .map(|&i| batch.advantages[i] as f32)
            .collect::<Vec<_>>(),
    );
    let ret = Tensor::from_slice(
        &idx.iter()
            .map(|&i| batch.returns[i] as f32)
            .collect::<Vec<_>>(),
    );
    let ratio = (&logp - old).exp();
    let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let surrogate = (&ratio * &adv).minimum(&(&clipped * &adv));
    let policy_loss = -surrogate.mean(Kind::Float);
    let value_loss = (values - ret).square().mean(Kind::Float);
    let entropy = categorical_entropy(&logits).mean(Kind::Float);
    let clip_frac = (ratio - 1.0)
        .abs()
        .gt(cfg.clip_eps)
        .to_kind(Kind::Float)
        .mean(Kind::Float)
        .double_value(&[]);
    let total = &policy_loss + cfg.value_coef * &value_loss - cfg.entropy_coef * &entropy;
    (total, policy_loss, value_loss, entropy, clip_frac)
}

/// Runs `epochs_per_iter` passes of minibatch PPO over `batch`.
pub fn ppo_update(
    policy: &Policy,
    opt: &mut nn::Optimizer,
    batch: &PpoBatch,
    cfg: &AgentConfig,
    rng: &mut impl Rng,
    step: usize,
) -> Result<PpoStats> {
    let n = batch.obs.len();
    let mut stats = PpoStats::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs_per_iter {
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        for idx in order.chunks(cfg.minibatch) {
            let (total, pl, vl, ent, cf) = ppo_losses(policy, batch, idx, cfg);
            let value = total.double_value(&[]);
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step,
                    msg: format!(
                        "PPO loss {value} (policy {}, value {}, entropy {})",
                        pl.double_value(&[]),
                        vl.double_value(&[]),
                        ent.double_value(&[])
                    ),
                });
            }
            opt.backward_step_clip_norm(&total, 0.5);
            stats.policy_loss += pl.double_value(&[]);
            stats.value_loss += vl.double_value(&[]);
            stats.entropy += ent.double_value(&[]);
            stats.clip_fraction += cf;
            count += 1.0;
        }
    }
    if count > 0.0 {
        stats.policy_loss /= count;
        stats.value_loss /= count;
        stats.entropy /= count;
        stats.clip_fraction /= count;
    }
    Ok(stats)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CollectLog {
    pub env_steps: usize,
    pub episodes: usize,
    pub records_written: usize,
    /// `(env steps, mean reward of episodes finished in that iteration)`.
    pub episode_rewards: Vec<(usize, f64)>,
    pub stats: Vec<PpoStats>,
    pub checkpoints: Vec<std::path::PathBuf>,
}

/// A policy decision and the scaled reward of the frames it has covered.
struct Decision {
    obs: AgentObservation,
    proposal: Action,
    logp: f64,
    value: f64,
    reward: f64,
    done: bool,
}

struct Slot {
    state: GameState,
    obs: ObsBuilder,
    sticky: StickyActions,
    episode: EpisodeBuilder,
    reward: f64,
    open: Option<Decision>,
}

/// Trains a policy while recording every frame it plays.
///
/// Partial episodes are flushed to the recorder when training ends, so the
/// recorder receives exactly `iterations * n_envs * rollout_len` records.
pub fn train_agent(
    config: &AgentConfig,
    mut recorder: Option<&mut DatasetWriter>,
    checkpoint_dir: Option<&Path>,
) -> Result<(Policy, CollectLog)> {
    config.validate()?;
    let policy = Policy::new(config);
    let mut opt = policy.optimizer()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 12));
    let mut log = CollectLog::default();
    let mut next_episode = 0u64;
    let new_slot = |i: usize, env_steps: usize, next_episode: &mut u64| -> Result<Slot> {
        let env = config.env(i + *next_episode as usize);
        let seed = derive_seed(config.seed, 1_000_000 + *next_episode);
        let state = env.reset(seed)?;
        let episode = EpisodeBuilder::new(
            *next_episode,
            seed,
            PolicyTag::Agent {
                step: env_steps as u64,
            },
            env,
            &state,
        );
        *next_episode += 1;
        Ok(Slot {
            state,
            obs: ObsBuilder::default(),
            sticky: StickyActions::new(config.sticky_prob, config.action_repeat),
            episode,
            reward: 0.0,
            open: None,
        })
    };
    let mut slots = Vec::new();
    for i in 0..config.n_envs {
        slots.push(new_slot(i, 0, &mut next_episode)?);
    }
    let iterations = config
        .total_env_steps
        .div_ceil(config.n_envs * config.rollout_len)
        .max(1);
    let mut next_ckpt = config.checkpoint_every;
    for _iter in 0..iterations {
        let mut per_env: Vec<Vec<Decision>> = (0..config.n_envs).map(|_| Vec::new()).collect();
        let mut finished = Vec::new();
        for _ in 0..config.rollout_len {
            let idle: Vec<usize> = (0..slots.len())
                .filter(|&i| slots[i].open.is_none())
                .collect();
            let mut frames: Vec<Option<Frame>> = vec![None; slots.len()];
            if !idle.is_empty() {
                let obs: Vec<AgentObservation> = idle
                    .iter()
                    .map(|&i| {
                        let f = render(&slots[i].state);
                        let o = slots[i].obs.observe(&slots[i].state, &f);
                        frames[i] = Some(f);
                        o
                    })
                    .collect();
                let choices = policy.act(&obs.iter().collect::<Vec<_>>(), &mut rng);
                for ((&i, o), (proposal, logp, value)) in idle.iter().zip(obs).zip(choices) {
                    let slot = &mut slots[i];
                    let executed = slot.sticky.decide(proposal, &mut rng);
                    slot.obs.push_action(executed);
                    slot.open = Some(Decision {
                        obs: o,
                        proposal,
                        logp,
                        value,
                        reward: 0.0,
                        done: false,
                    });
                }
            }
            for (i, slot) in slots.iter_mut().enumerate() {
                let a = slot.sticky.next_frame_action();
                let f = frames[i].take().unwrap_or_else(|| render(&slot.state));
                let info = slot.state.step_mut(a);
                slot.episode.push(f, a, info.reward, info.done);
                slot.reward += info.reward as f64;
                log.env_steps += 1;
                let open = slot.open.as_mut().expect("decision opened above");
                open.reward += info.reward as f64 * config.reward_scale;
                if info.done {
                    open.done = true;
                }
                if info.done || slot.sticky.needs_decision() {
                    per_env[i].push(slot.open.take().expect("decision opened above"));
                }
                if info.done {
                    let fresh = new_slot(i, log.env_steps, &mut next_episode)?;
                    let old = std::mem::replace(slot, fresh);
                    finished.push(old.reward);
                    log.episodes += 1;
                    if let Some(w) = recorder.as_deref_mut() {
                        w.write(&old.episode.finish())?;
                        log.records_written = w.frames_written();
                    }
                }
            }
        }
        // A decision still running carries into the next iteration; its value
        // estimate bootstraps the decisions closed here.
        let frames: Vec<_> = slots.iter().map(|s| render(&s.state)).collect();
        let obs: Vec<AgentObservation> = slots
            .iter()
            .zip(&frames)
            .map(|(s, f)| s.obs.observe(&s.state, f))
            .collect();
        let (_, boot) = tch::no_grad(|| policy.forward(&obs.iter().collect::<Vec<_>>()));
        let boot = Vec::<f64>::try_from(boot.to_kind(Kind::Double))?;
        let boot: Vec<f64> = slots
            .iter()
            .zip(boot)
            .map(|(s, b)| s.open.as_ref().map_or(b, |d| d.value))
            .collect();
        let mut batch = PpoBatch::default();
        for (decisions, b) in per_env.into_iter().zip(boot) {
            let r: Vec<f64> = decisions.iter().map(|d| d.reward).collect();
            let dones: Vec<bool> = decisions.iter().map(|d| d.done).collect();
            let mut v: Vec<f64> = decisions.iter().map(|d| d.value).collect();
            v.push(b);
            let adv = gae_with_dones(&r, &v, &dones, config.gamma, config.gae_lambda)?;
            batch.returns.extend(adv.iter().zip(&v).map(|(a, v)| a + v));
            batch.advantages.extend(adv);
            for d in decisions {
                batch.obs.push(d.obs);
                batch.actions.push(d.proposal);
                batch.old_logprobs.push(d.logp);
            }
        }
        if batch.obs.is_empty() {
            continue;
        }
        let mean = batch.advantages.iter().sum::<f64>() / batch.advantages.len() as f64;
        let sd = (batch
            .advantages
            .iter()
            .map(|a| (a - mean).powi(2))
            .sum::<f64>()
            / batch.advantages.len() as f64)
            .sqrt();
        for a in &mut batch.advantages {
            *a = (*a - mean) / (sd + 1e-8);
        }
        let stats = ppo_update(&policy, &mut opt, &batch, config, &mut rng, log.env_steps)?;
        log::info!(
            "agent steps {} episodes {} entropy {:.3} value loss {:.4}",
            log.env_steps,
            log.episodes,
            stats.entropy,
            stats.value_loss
        );
        log.stats.push(stats);
        if !finished.is_empty() {
            log.episode_rewards.push((
                log.env_steps,
                finished.iter().sum::<f64>() / finished.len() as f64,
            ));
        }
        if let Some(dir) = checkpoint_dir {
            if log.env_steps >= next_ckpt {
                let path = dir.join(format!("agent_step_{:09}.ckpt", log.env_steps));
                policy.save(&path, log.env_steps)?;
                log.checkpoints.push(path);
                next_ckpt += config.checkpoint_every.max(1);
            }
        }
    }
    if let Some(w) = recorder.as_deref_mut() {
        for slot in slots {
            let traj = slot.episode.finish();
            if !traj.is_empty() {
                w.write(&traj)?;
            }
        }
        log.records_written = w.frames_written();
    }
    if let Some(dir) = checkpoint_dir {
        let path = dir.join("agent_final.ckpt");
        policy.save(&path, log.env_steps)?;
        log.checkpoints.push(path);
    }
    Ok((policy, log))
}

/// Records `n_frames` frames of play by `policy` (uniform random when `None`),
/// with episode ids from `first_episode_id`. The last episode may be cut short.
pub fn record_policy(
    policy: Option<&Policy>,
    config: &AgentConfig,
    n_frames: usize,
    seed: u64,
    first_episode_id: u64,
) -> Result<Vec<Trajectory>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 14));
    let mut out = Vec::new();
    let mut total = 0;
    let mut e = 0u64;
    while total < n_frames {
        let env = config.env(e as usize);
        let ep_seed = derive_seed(seed, e);
        let mut state = env.reset(ep_seed)?;
        let tag = match policy {
            Some(_) => PolicyTag::Agent {
                step: config.total_env_steps as u64,
            },
            None => PolicyTag::Random,
        };
        let mut b = EpisodeBuilder::new(first_episode_id + e, ep_seed, tag, env, &state);
        let mut obs = ObsBuilder::default();
        let mut sticky = StickyActions::new(config.sticky_prob, config.action_repeat);
        'episode: while total < n_frames {
            let frame = render(&state);
            let proposal = match policy {
                Some(p) => p.act(&[&obs.observe(&state, &frame)], &mut rng)[0].0,
                None => Action::ALL[rng.random_range(0..NUM_ACTIONS)],
            };
            obs.push_action(sticky.decide(proposal, &mut rng));
            let mut frame = Some(frame);
            for _ in 0..config.action_repeat {
                let a = sticky.next_frame_action();
                let f = frame.take().unwrap_or_else(|| render(&state));
                let info = state.step_mut(a);
                b.push(f, a, info.reward, info.done);
                total += 1;
                if info.done {
                    break 'episode;
                }
                if total == n_frames {
                    break;
                }
            }
        }
        out.push(b.finish());
        e += 1;
    }
    Ok(out)
}

/// Mean episode reward over `episodes` full episodes; `None` plays uniformly at random.
pub fn evaluate_policy(
    policy: Option<&Policy>,
    config: &AgentConfig,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 13));
    let mut total = 0.0;
    for e in 0..episodes {
        let env = config.env(e);
        let mut state = env.reset(derive_seed(seed, e as u64))?;
        let mut obs = ObsBuilder::default();
        let mut sticky = StickyActions::new(config.sticky_prob, config.action_repeat);
        'episode: loop {
            let proposal = match policy {
                Some(p) => {
                    let o = obs.observe(&state, &render(&state));
                    p.act(&[&o], &mut rng)[0].0
                }
                None => Action::ALL[rng.random_range(0..NUM_ACTIONS)],
            };
            let executed = sticky.decide(proposal, &mut rng);
            obs.push_action(executed);
            for _ in 0..config.action_repeat {
                let info = state.step_mut(sticky.next_frame_action());
                total += info.reward as f64;
                if info.done {
                    break 'episode;
                }
            }
        }
    }
    Ok(total / episodes.max(1) as f64)
}
