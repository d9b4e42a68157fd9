//! Teacher-forced prediction, autoregressive rollouts and rollout dumps.
//!
//! Rollouts feed generated latents straight back into the context; decoded
//! frames are output only and never re-encoded.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tch::Tensor;

use crate::autoencoder::{Codec, LatentFrame, Provenance, LATENT_C, LATENT_H, LATENT_W};
use crate::dataset::{read_frame_stream, write_frame_stream, Trajectory};
use crate::diffusion::{ContextBuffer, Denoiser, LatentCorpus, SamplerConfig};
use crate::env::{Action, Frame};
use crate::error::{Error, Result};
use crate::nn::tensor_to_frames;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    GroundTruthInit,
    OodFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Recorded,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub length: usize,
    pub sampler: SamplerConfig,
    pub seed: u64,
    pub context_source: ContextSource,
    pub action_source: ActionSource,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            length: 64,
            sampler: SamplerConfig::default(),
            seed: 0,
            context_source: ContextSource::GroundTruthInit,
            action_source: ActionSource::Recorded,
        }
    }
}

/// Sampling seed for step `step` of a session seeded with `seed`.
pub fn step_seed(seed: u64, step: u64) -> u64 {
    derive_seed(seed, step)
}

fn ctx_shape(b: i64, n: i64) -> [i64; 5] {
    [b, n, LATENT_C as i64, LATENT_H as i64, LATENT_W as i64]
}

/// Encodes the ground-truth context for predicting `traj.frames[index]`.
pub fn ground_truth_context(
    traj: &Trajectory,
    index: usize,
    codec: &Codec,
    n: usize,
) -> Result<ContextBuffer> {
    if index < n || index >= traj.len() {
        return Err(Error::range(
            "teacher-forced index",
            format!("{index} (needs {n} <= index < {})", traj.len()),
        ));
    }
    let frames: Vec<&Frame> = traj.frames[index - n..index].iter().collect();
    ContextBuffer::new(
        codec.encode_batch(&frames)?,
        traj.actions[index - n..index].to_vec(),
    )
}

/// Predicts `traj.frames[index]` from the `N` ground-truth frames before it.
pub fn teacher_forced_predict(
    traj: &Trajectory,
    index: usize,
    codec: &Codec,
    denoiser: &Denoiser,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Frame> {
    let ctx = ground_truth_context(traj, index, codec, denoiser.context_len())?;
    codec.decode(&denoiser.sample_next_latent(&ctx, sampler, seed)?)
}

/// Batched teacher forcing over corpus windows; item `i` uses `step_seed(seed, i)`.
pub fn teacher_forced_latents(
    corpus: &LatentCorpus,
    windows: &[(usize, usize)],
    denoiser: &Denoiser,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Tensor> {
    let mut out = Vec::new();
    for (c, chunk) in windows.chunks(64).enumerate() {
        let (ctx, acts, _) = corpus.gather(chunk, denoiser.context_len());
        let seeds: Vec<u64> = (0..chunk.len())
            .map(|i| step_seed(seed, (c * 64 + i) as u64))
            .collect();
        out.push(denoiser.sample_batch(&ctx, &acts, sampler, &seeds)?);
    }
    Ok(Tensor::cat(&out, 0))
}

/// `N` copies of `encode(frame)` with noop actions.
pub fn ood_context_from_frame(frame: &Frame, codec: &Codec, n: usize) -> Result<ContextBuffer> {
    ContextBuffer::replicated(codec.encode(frame)?, n)
}

#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub frames: Vec<Frame>,
    pub latents: Vec<LatentFrame>,
    pub actions: Vec<Action>,
    /// The action stream ended before `length` frames.
    pub truncated: bool,
}

/// Autoregressive generation: each step applies the next action to the
/// newest context latent, samples, and pushes the sampled latent.
pub fn rollout(
    init: &ContextBuffer,
    actions: impl IntoIterator<Item = Action>,
    config: &RolloutConfig,
    codec: &Codec,
    denoiser: &Denoiser,
) -> Result<(Rollout, ContextBuffer)> {
    let mut ctx = init.clone();
    ctx.seal();
    let mut out = Rollout::default();
    let mut actions = actions.into_iter();
    for k in 0..config.length {
        let Some(a) = actions.next() else {
            out.truncated = true;
            break;
        };
        ctx.set_newest_action(a);
        let z =
            denoiser.sample_next_latent(&ctx, &config.sampler, step_seed(config.seed, k as u64))?;
        out.frames.push(codec.decode(&z)?);
        out.latents.push(z.clone());
        out.actions.push(a);
        ctx.push(z, Action::Noop)?;
    }
    Ok((out, ctx))
}

/// Batched autoregressive latents `(B, L, 4, 8, 8)` from corpus windows.
///
/// Item `b` starts from the ground-truth context of `windows[b]` and consumes
/// the recorded actions from there on; its seed is `seeds[b]`.
pub fn rollout_latents(
    corpus: &LatentCorpus,
    windows: &[(usize, usize)],
    length: usize,
    denoiser: &Denoiser,
    sampler: &SamplerConfig,
    seeds: &[u64],
) -> Result<Tensor> {
    let n = denoiser.context_len();
    let b = windows.len() as i64;
    for &(e, i) in windows {
        if i + length > corpus.episodes[e].len {
            return Err(Error::range(
                "rollout window",
                format!("episode {e} index {i} + {length}"),
            ));
        }
    }
    let (mut ctx, mut acts, _) = corpus.gather(windows, n);
    let mut steps = Vec::with_capacity(length);
    for k in 0..length {
        let now: Vec<i64> = windows
            .iter()
            .map(|&(e, i)| corpus.actions[corpus.episodes[e].start + i + k - 1] as i64)
            .collect();
        let _ = acts
            .narrow(1, n as i64 - 1, 1)
            .copy_(&Tensor::from_slice(&now).view([b, 1]));
        let step_seeds: Vec<u64> = seeds.iter().map(|&s| step_seed(s, k as u64)).collect();
        let z = denoiser.sample_batch(&ctx, &acts, sampler, &step_seeds)?;
        ctx = Tensor::cat(
            &[ctx.narrow(1, 1, n as i64 - 1), z.view(ctx_shape(b, 1))],
            1,
        );
        acts = Tensor::cat(
            &[
                acts.narrow(1, 1, n as i64 - 1),
                Tensor::zeros([b, 1], (tch::Kind::Int64, tch::Device::Cpu)),
            ],
            1,
        );
        steps.push(z);
    }
    Ok(Tensor::stack(&steps, 1))
}

/// Decodes `(B, L, 4, 8, 8)` latents to frames, item-major.
pub fn decode_sequence(codec: &Codec, latents: &Tensor) -> Result<Vec<Vec<Frame>>> {
    let size = latents.size();
    let (b, l) = (size[0], size[1]);
    let flat = latents.reshape([b * l, LATENT_C as i64, LATENT_H as i64, LATENT_W as i64]);
    let mut frames = Vec::with_capacity((b * l) as usize);
    for chunk in flat.split(256, 0) {
        frames.extend(tensor_to_frames(&codec.decode_tensor(&chunk))?);
    }
    Ok(frames.chunks(l as usize).map(|c| c.to_vec()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutMeta {
    pub config: RolloutConfig,
    pub codec_hash: String,
    pub denoiser_hash: String,
    pub len: usize,
    pub truncated: bool,
}

/// Writes `rollout.meta.json`, `frames.rgb` and `actions.u8`.
pub fn write_rollout_dump(dir: &Path, meta: &RolloutMeta, rollout: &Rollout) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_frame_stream(dir, &rollout.frames, &rollout.actions)?;
    fs::write(
        dir.join("rollout.meta.json"),
        serde_json::to_vec_pretty(meta)?,
    )?;
    Ok(())
}

pub fn read_rollout_dump(dir: &Path) -> Result<(RolloutMeta, Vec<Frame>, Vec<Action>)> {
    let meta: RolloutMeta = serde_json::from_slice(&fs::read(dir.join("rollout.meta.json"))?)?;
    let (frames, actions) = read_frame_stream(dir)?;
    if frames.len() != meta.len {
        return Err(Error::Dataset(format!(
            "rollout dump has {} frames, meta says {}",
            frames.len(),
            meta.len
        )));
    }
    Ok((meta, frames, actions))
}

/// Provenance of every latent in a rollout.
pub fn all_generated(r: &Rollout) -> bool {
    r.latents
        .iter()
        .all(|l| l.provenance == Provenance::Generated)
}
