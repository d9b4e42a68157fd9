//! Teacher-forced and autoregressive evaluation on held-out episodes.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{psnr, summarize, PDist, Summary};
use super::report::MetricReport;
use crate::autoencoder::Codec;
use crate::dataset::{check_disjoint, Trajectory};
use crate::diffusion::{Denoiser, LatentCorpus, SamplerConfig};
use crate::env::render::{FRAME_H, FRAME_W, PAD_COLOR, PAD_Y};
use crate::env::{Frame, TileCoord};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::simulation::{decode_sequence, rollout_latents, teacher_forced_latents};

/// Evaluation windows start at or after this index so every context length
/// up to it sees only real frames.
pub const EVAL_MIN_INDEX: usize = 16;

/// Held-out trajectories with their encoded latents, index-aligned.
#[derive(Debug)]
pub struct EvalSet {
    pub trajectories: Vec<Trajectory>,
    pub corpus: LatentCorpus,
}

impl EvalSet {
    pub fn new(codec: &Codec, trajectories: Vec<Trajectory>) -> Result<Self> {
        let trajectories: Vec<Trajectory> =
            trajectories.into_iter().filter(|t| !t.is_empty()).collect();
        let corpus = LatentCorpus::encode(codec, &trajectories)?;
        Ok(EvalSet {
            trajectories,
            corpus,
        })
    }

    pub fn frame(&self, w: (usize, usize)) -> &Frame {
        &self.trajectories[w.0].frames[w.1]
    }

    pub fn episode_ids(&self) -> BTreeSet<u64> {
        self.corpus.episode_ids()
    }

    /// `n` distinct windows with `index >= min_index` and `horizon` frames available.
    pub fn select_windows(
        &self,
        n: usize,
        horizon: usize,
        min_index: usize,
        seed: u64,
    ) -> Result<Vec<(usize, usize)>> {
        let mut eligible: Vec<(usize, usize)> = self
            .corpus
            .episodes
            .iter()
            .enumerate()
            .flat_map(|(e, s)| {
                (min_index.max(1)..(s.len + 1).saturating_sub(horizon.max(1))).map(move |i| (e, i))
            })
            .collect();
        if eligible.len() < n {
            return Err(Error::Dataset(format!(
                "only {} eligible windows, {n} requested",
                eligible.len()
            )));
        }
        eligible.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 41)));
        eligible.truncate(n);
        eligible.sort_unstable();
        Ok(eligible)
    }

    /// L1 tile distance of the player from the map spawn at frame `w`.
    pub fn distance_from_spawn(&self, w: (usize, usize)) -> u32 {
        let span = &self.corpus.episodes[w.0];
        span.tiles[w.1].l1(span.spawn)
    }
}

#[derive(Debug, Clone, Serialize)]
struct EvalSnapshot<'a> {
    protocol: &'a str,
    codec_hash: String,
    denoiser_hash: String,
    denoiser_config: &'a crate::diffusion::DenoiserConfig,
    sampler: &'a SamplerConfig,
    seed: u64,
    windows: usize,
    horizon: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherForcedReport {
    pub psnr: MetricReport,
    pub pdist: MetricReport,
    /// PSNR of repeating the last context frame.
    pub copy_last_psnr: MetricReport,
    /// Largest per-channel deviation of decoded pad rows from the pad color.
    pub max_pad_error: u8,
}

/// Next-frame prediction from ground-truth context on `windows`.
pub fn eval_teacher_forced(
    codec: &Codec,
    denoiser: &Denoiser,
    set: &EvalSet,
    windows: &[(usize, usize)],
    sampler: &SamplerConfig,
    seed: u64,
    train_ids: Option<&BTreeSet<u64>>,
) -> Result<TeacherForcedReport> {
    if let Some(train) = train_ids {
        check_disjoint(train, &set.episode_ids())?;
    }
    let z = teacher_forced_latents(&set.corpus, windows, denoiser, sampler, seed)?;
    let pred = decode_sequence(codec, &z.unsqueeze(1))?;
    let pd = PDist::default();
    let mut p = Vec::with_capacity(windows.len());
    let mut base = Vec::with_capacity(windows.len());
    let mut pad_err = 0u8;
    let truth: Vec<&Frame> = windows.iter().map(|&w| set.frame(w)).collect();
    let preds: Vec<&Frame> = pred.iter().map(|v| &v[0]).collect();
    for (k, &w) in windows.iter().enumerate() {
        p.push(psnr(preds[k], truth[k])?);
        base.push(psnr(set.frame((w.0, w.1 - 1)), truth[k])?);
        pad_err = pad_err.max(max_pad_error(preds[k]));
    }
    let d = pd.batch(&preds, &truth)?;
    let snap = EvalSnapshot {
        protocol: "teacher_forced",
        codec_hash: codec.hash(),
        denoiser_hash: denoiser.hash(),
        denoiser_config: &denoiser.config,
        sampler,
        seed,
        windows: windows.len(),
        horizon: 1,
    };
    Ok(TeacherForcedReport {
        psnr: MetricReport::new("psnr", p, &snap),
        pdist: MetricReport::new("pdist", d, &snap),
        copy_last_psnr: MetricReport::new("copy_last_psnr", base, &snap),
        max_pad_error: pad_err,
    })
}

pub fn max_pad_error(f: &Frame) -> u8 {
    let mut m = 0u8;
    for y in PAD_Y..FRAME_H {
        for x in 0..FRAME_W {
            let px = f.get(x, y);
            for c in 0..3 {
                m = m.max(px[c].abs_diff(PAD_COLOR[c]));
            }
        }
    }
    m
}

/// Per-step curves over autoregressive rollouts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutoregressiveReport {
    pub psnr: Vec<Summary>,
    pub pdist: Vec<Summary>,
    /// `[item][step]` PSNR values.
    pub psnr_items: Vec<Vec<f64>>,
    pub pdist_items: Vec<Vec<f64>>,
    pub config_hash: String,
}

impl AutoregressiveReport {
    /// Summarizes `[item][step]` values column by column.
    pub fn from_items(
        psnr_items: Vec<Vec<f64>>,
        pdist_items: Vec<Vec<f64>>,
        config_hash: String,
    ) -> Self {
        let steps = psnr_items.first().map_or(0, Vec::len);
        let column = |items: &[Vec<f64>], k: usize| {
            summarize(&items.iter().map(|v| v[k]).collect::<Vec<_>>())
        };
        AutoregressiveReport {
            psnr: (0..steps).map(|k| column(&psnr_items, k)).collect(),
            pdist: (0..steps).map(|k| column(&pdist_items, k)).collect(),
            psnr_items,
            pdist_items,
            config_hash,
        }
    }

    pub fn steps(&self) -> usize {
        self.psnr.len()
    }
}

/// Rolls out `steps` frames from each window's ground-truth context with the
/// recorded actions and compares every generated frame with the real one.
pub fn eval_autoregressive(
    codec: &Codec,
    denoiser: &Denoiser,
    set: &EvalSet,
    windows: &[(usize, usize)],
    steps: usize,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<AutoregressiveReport> {
    let pd = PDist::default();
    let mut psnr_items = Vec::with_capacity(windows.len());
    let mut pdist_items = Vec::with_capacity(windows.len());
    for (c, chunk) in windows.chunks(32).enumerate() {
        let seeds: Vec<u64> = (0..chunk.len())
            .map(|i| derive_seed(seed, (c * 32 + i) as u64))
            .collect();
        let z = rollout_latents(&set.corpus, chunk, steps, denoiser, sampler, &seeds)?;
        let frames = decode_sequence(codec, &z)?;
        for (&w, gen) in chunk.iter().zip(&frames) {
            let truth: Vec<&Frame> = (0..steps).map(|k| set.frame((w.0, w.1 + k))).collect();
            let (p, d) = step_metrics(&pd, &gen.iter().collect::<Vec<_>>(), &truth)?;
            psnr_items.push(p);
            pdist_items.push(d);
        }
    }
    let snap = EvalSnapshot {
        protocol: "autoregressive",
        codec_hash: codec.hash(),
        denoiser_hash: denoiser.hash(),
        denoiser_config: &denoiser.config,
        sampler,
        seed,
        windows: windows.len(),
        horizon: steps,
    };
    Ok(AutoregressiveReport::from_items(
        psnr_items,
        pdist_items,
        crate::checkpoint::config_hash(&snap),
    ))
}

/// Per-step PSNR and pdist of a generated sequence against the real one.
pub fn step_metrics(
    pd: &PDist,
    generated: &[&Frame],
    truth: &[&Frame],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = generated
        .iter()
        .zip(truth)
        .map(|(g, t)| psnr(g, t))
        .collect::<Result<Vec<_>>>()?;
    Ok((p, pd.batch(generated, truth)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    /// Half-open buckets on L1 tile distance: `[0, 6)`, `[6, 14]`, `(14, inf)`.
    pub fn of_distance(d: u32) -> Self {
        match d {
            0..=5 => Difficulty::Easy,
            6..=14 => Difficulty::Medium,
            _ => Difficulty::Hard,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

/// Buckets trajectories by the distance of their final position from spawn.
pub fn difficulty_split(trajectories: &[Trajectory]) -> Result<[Vec<usize>; 3]> {
    let mut out: [Vec<usize>; 3] = Default::default();
    for (i, t) in trajectories.iter().enumerate() {
        let tiles = t.player_tiles()?;
        let map = crate::env::GameMap::shipped(&t.meta.env.map)?;
        let last: TileCoord = tiles.last().copied().unwrap_or(t.meta.start_tile);
        out[Difficulty::of_distance(last.l1(map.spawn)) as usize].push(i);
    }
    Ok(out)
}
