//! Pre-encoded training corpus and window gathering.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::autoencoder::{Codec, LATENT_C, LATENT_H, LATENT_W};
use crate::dataset::{Dataset, Trajectory};
use crate::env::{Action, TileCoord};
use crate::error::{Error, Result};

/// Episodes encoded once with the codec, concatenated along the first axis.
#[derive(Debug)]
pub struct LatentCorpus {
    /// `(T, 4, 8, 8)`, provenance: encoded ground truth.
    pub latents: Tensor,
    pub actions: Vec<u8>,
    pub episodes: Vec<EpisodeSpan>,
}

#[derive(Serialize, Deserialize)]
struct CorpusSidecar {
    actions: Vec<u8>,
    episodes: Vec<EpisodeSpan>,
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpan {
    pub episode_id: u64,
    pub start: usize,
    pub len: usize,
    pub map: String,
    pub spawn: TileCoord,
    /// Player tile at every frame.
    pub tiles: Vec<TileCoord>,
}

impl LatentCorpus {
    pub fn encode(codec: &Codec, trajectories: &[Trajectory]) -> Result<Self> {
        Self::encode_stream(
            codec,
            trajectories
                .iter()
                .map(|t| Ok(std::borrow::Cow::Borrowed(t))),
        )
    }

    /// Encodes every episode of a stored dataset, one episode in memory at a time.
    pub fn encode_dataset(codec: &Codec, dataset: &Dataset) -> Result<Self> {
        Self::encode_stream(
            codec,
            dataset
                .entries
                .iter()
                .map(|e| dataset.load(e).map(std::borrow::Cow::Owned)),
        )
    }

    fn encode_stream<'a>(
        codec: &Codec,
        trajectories: impl Iterator<Item = Result<std::borrow::Cow<'a, Trajectory>>>,
    ) -> Result<Self> {
        let mut parts = Vec::new();
        let mut actions = Vec::new();
        let mut episodes = Vec::new();
        let mut start = 0;
        for t in trajectories {
            let t = t?;
            t.check_lengths()?;
            if t.is_empty() {
                continue;
            }
            parts.push(codec.encode_all(&t.frames.iter().collect::<Vec<_>>())?);
            actions.extend(t.actions.iter().map(|a| a.id()));
            let map = crate::env::GameMap::shipped(&t.meta.env.map)?;
            episodes.push(EpisodeSpan {
                episode_id: t.meta.episode_id,
                start,
                len: t.len(),
                map: t.meta.env.map.clone(),
                spawn: map.spawn,
                tiles: t.player_tiles()?,
            });
            start += t.len();
        }
        if parts.is_empty() {
            return Err(Error::Dataset("no frames to encode".into()));
        }
        Ok(LatentCorpus {
            latents: Tensor::cat(&parts, 0),
            actions,
            episodes,
        })
    }

    /// Writes `<path>` (latents) and `<path>.json` (actions and episodes).
    pub fn save(&self, path: &Path) -> Result<()> {
        self.latents.save(path)?;
        let side = CorpusSidecar {
            actions: self.actions.clone(),
            episodes: self.episodes.clone(),
        };
        std::fs::write(sidecar(path), serde_json::to_vec(&side)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let latents = Tensor::load(path)?;
        let side: CorpusSidecar = serde_json::from_slice(&std::fs::read(sidecar(path))?)?;
        if latents.size()[0] as usize != side.actions.len() {
            return Err(Error::Dataset(format!(
                "{}: latent and action counts differ",
                path.display()
            )));
        }
        Ok(LatentCorpus {
            latents,
            actions: side.actions,
            episodes: side.episodes,
        })
    }

    pub fn frames(&self) -> usize {
        self.actions.len()
    }

    pub fn episode_ids(&self) -> std::collections::BTreeSet<u64> {
        self.episodes.iter().map(|e| e.episode_id).collect()
    }

    /// Leading episodes whose total length reaches `n_frames` (the last one cut).
    pub fn take_frames(&self, n_frames: usize) -> LatentCorpus {
        let mut episodes = Vec::new();
        let mut total = 0;
        for e in &self.episodes {
            if total >= n_frames {
                break;
            }
            let len = e.len.min(n_frames - total);
            episodes.push(EpisodeSpan {
                len,
                tiles: e.tiles[..len].to_vec(),
                ..e.clone()
            });
            total += len;
        }
        let mut parts = Vec::new();
        let mut actions = Vec::new();
        let mut start = 0;
        for e in &mut episodes {
            parts.push(self.latents.narrow(0, e.start as i64, e.len as i64));
            actions.extend_from_slice(&self.actions[e.start..e.start + e.len]);
            e.start = start;
            start += e.len;
        }
        LatentCorpus {
            latents: Tensor::cat(&parts, 0),
            actions,
            episodes,
        }
    }

    /// Every `(episode, index)` with `index >= min_index`.
    pub fn windows(&self, min_index: usize) -> Vec<(usize, usize)> {
        self.episodes
            .iter()
            .enumerate()
            .flat_map(|(e, span)| (min_index..span.len).map(move |i| (e, i)))
            .collect()
    }

    /// Context `(B, N, 4, 8, 8)`, actions `(B, N)` and targets `(B, 4, 8, 8)`.
    ///
    /// Positions before the episode start repeat its first frame with noop
    /// actions, the same convention used to start live play from one frame.
    pub fn gather(&self, windows: &[(usize, usize)], n: usize) -> (Tensor, Tensor, Tensor) {
        let mut ctx_idx = Vec::with_capacity(windows.len() * n);
        let mut acts = Vec::with_capacity(windows.len() * n);
        let mut tgt_idx = Vec::with_capacity(windows.len());
        for &(e, i) in windows {
            let span = &self.episodes[e];
            for k in 0..n {
                let pos = i as i64 - n as i64 + k as i64;
                if pos < 0 {
                    ctx_idx.push(span.start as i64);
                    acts.push(Action::Noop.id() as i64);
                } else {
                    ctx_idx.push((span.start + pos as usize) as i64);
                    acts.push(self.actions[span.start + pos as usize] as i64);
                }
            }
            tgt_idx.push((span.start + i) as i64);
        }
        let b = windows.len() as i64;
        let shape = [
            b,
            n as i64,
            LATENT_C as i64,
            LATENT_H as i64,
            LATENT_W as i64,
        ];
        let ctx = self
            .latents
            .index_select(0, &Tensor::from_slice(&ctx_idx))
            .view(shape);
        let acts = Tensor::from_slice(&acts).view([b, n as i64]);
        let tgt = self.latents.index_select(0, &Tensor::from_slice(&tgt_idx));
        (ctx, acts, tgt)
    }

    pub fn sample_windows(
        &self,
        all: &[(usize, usize)],
        rng: &mut impl Rng,
        b: usize,
    ) -> Vec<(usize, usize)> {
        (0..b)
            .map(|_| all[rng.random_range(0..all.len())])
            .collect()
    }

    /// Second moment of the latents, per element.
    pub fn second_moment(&self) -> f64 {
        self.latents.square().mean(Kind::Float).double_value(&[])
    }
}
