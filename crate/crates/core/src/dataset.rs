//! Trajectory records and the on-disk episode store.
//!
//! Layout: one directory per episode holding `frames.rgb` (raw RGB24 frames
//! back to back), `actions.u8`, `rewards.f32le` and `meta.json`; a top-level
//! `index.jsonl` lists completed episodes. An episode is appended to the index
//! only after its directory is fully written, so an interrupted writer leaves a
//! readable store.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::render::FRAME_BYTES;
use crate::env::{render, Action, EnvConfig, Frame, GameState, TileCoord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyTag {
    Random,
    Agent { step: u64 },
    Human,
}

impl std::fmt::Display for PolicyTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicyTag::Random => write!(f, "random"),
            PolicyTag::Agent { step } => write!(f, "agent@step-{step}"),
            PolicyTag::Human => write!(f, "human"),
        }
    }
}

impl std::str::FromStr for PolicyTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PolicyTag::Random),
            "human" => Ok(PolicyTag::Human),
            _ => s
                .strip_prefix("agent@step-")
                .and_then(|n| n.parse().ok())
                .map(|step| PolicyTag::Agent { step })
                .ok_or_else(|| Error::Dataset(format!("bad policy tag {s:?}"))),
        }
    }
}

impl Serialize for PolicyTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PolicyTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub episode_id: u64,
    pub seed: u64,
    pub policy_tag: PolicyTag,
    pub env: EnvConfig,
    pub start_tile: TileCoord,
    pub len: usize,
    /// The last recorded step ended the episode.
    pub done: bool,
}

/// One recorded episode. `actions[i]` is applied after `frames[i]` is shown and
/// earns `rewards[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub frames: Vec<Frame>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f32>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn done_flags(&self) -> Vec<bool> {
        let mut d = vec![false; self.len()];
        if let Some(last) = d.last_mut() {
            *last = self.meta.done;
        }
        d
    }

    pub fn check_lengths(&self) -> Result<()> {
        if self.frames.len() != self.actions.len()
            || self.frames.len() != self.rewards.len()
            || self.frames.len() != self.meta.len
        {
            return Err(Error::Dataset(format!(
                "episode {}: {} frames, {} actions, {} rewards, meta len {}",
                self.meta.episode_id,
                self.frames.len(),
                self.actions.len(),
                self.rewards.len(),
                self.meta.len
            )));
        }
        Ok(())
    }

    /// Game states before each recorded action, re-simulated from `(seed, actions)`.
    pub fn replay_states(&self) -> Result<Vec<GameState>> {
        let mut s = self.meta.env.reset(self.meta.seed)?;
        let mut out = Vec::with_capacity(self.len());
        for &a in &self.actions {
            out.push(s.clone());
            s.step_mut(a);
        }
        Ok(out)
    }

    /// Player tile at each frame (replayed, no rendering).
    pub fn player_tiles(&self) -> Result<Vec<TileCoord>> {
        let mut s = self.meta.env.reset(self.meta.seed)?;
        let mut out = Vec::with_capacity(self.len());
        for &a in &self.actions {
            out.push(s.player_tile());
            s.step_mut(a);
        }
        Ok(out)
    }

    /// Confirms the stored frames are exactly what the environment renders.
    pub fn verify_replay(&self) -> Result<()> {
        for (i, (state, frame)) in self.replay_states()?.iter().zip(&self.frames).enumerate() {
            if render(state) != *frame {
                return Err(Error::Dataset(format!(
                    "episode {}: frame {i} does not replay",
                    self.meta.episode_id
                )));
            }
        }
        Ok(())
    }
}

/// Incrementally builds a trajectory while an environment runs.
#[derive(Debug)]
pub struct EpisodeBuilder {
    pub traj: Trajectory,
}

impl EpisodeBuilder {
    pub fn new(
        episode_id: u64,
        seed: u64,
        policy_tag: PolicyTag,
        env: EnvConfig,
        start: &GameState,
    ) -> Self {
        Self {
            traj: Trajectory {
                meta: TrajectoryMeta {
                    episode_id,
                    seed,
                    policy_tag,
                    env,
                    start_tile: start.player_tile(),
                    len: 0,
                    done: false,
                },
                frames: Vec::new(),
                actions: Vec::new(),
                rewards: Vec::new(),
            },
        }
    }

    pub fn push(&mut self, frame: Frame, action: Action, reward: f32, done: bool) {
        self.traj.frames.push(frame);
        self.traj.actions.push(action);
        self.traj.rewards.push(reward);
        self.traj.meta.len += 1;
        self.traj.meta.done = done;
    }

    pub fn finish(self) -> Trajectory {
        self.traj
    }
}

/// Runs `env` from `seed` with a fixed action list and records it.
pub fn record_actions(
    env: &EnvConfig,
    episode_id: u64,
    seed: u64,
    tag: PolicyTag,
    actions: &[Action],
) -> Result<Trajectory> {
    let mut s = env.reset(seed)?;
    let mut b = EpisodeBuilder::new(episode_id, seed, tag, env.clone(), &s);
    for &a in actions {
        let frame = render(&s);
        let info = s.step_mut(a);
        b.push(frame, a, info.reward, info.done);
        if info.done {
            break;
        }
    }
    Ok(b.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub episode_id: u64,
    pub dir: String,
    pub len: usize,
    pub policy_tag: PolicyTag,
    pub map: String,
}

/// Append-only episode store writer.
#[derive(Debug)]
pub struct DatasetWriter {
    root: PathBuf,
    index: File,
    frames_written: usize,
}

impl DatasetWriter {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let index = OpenOptions::new()
            .create(true)
            .append(true)
            .open(root.join("index.jsonl"))?;
        Ok(Self {
            root,
            index,
            frames_written: 0,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn frames_written(&self) -> usize {
        self.frames_written
    }

    pub fn write(&mut self, traj: &Trajectory) -> Result<()> {
        traj.check_lengths()?;
        write_episode_dir(&self.root, traj)?;
        let entry = IndexEntry {
            episode_id: traj.meta.episode_id,
            dir: episode_dir_name(traj.meta.episode_id),
            len: traj.len(),
            policy_tag: traj.meta.policy_tag,
            map: traj.meta.env.map.clone(),
        };
        writeln!(self.index, "{}", serde_json::to_string(&entry)?)?;
        self.index.flush()?;
        self.frames_written += traj.len();
        Ok(())
    }
}

pub fn episode_dir_name(id: u64) -> String {
    format!("ep_{id:08}")
}

fn write_episode_dir(root: &Path, traj: &Trajectory) -> Result<()> {
    let dir = root.join(episode_dir_name(traj.meta.episode_id));
    fs::create_dir_all(&dir)?;
    write_frame_stream(&dir, &traj.frames, &traj.actions)?;
    let rewards: Vec<u8> = traj.rewards.iter().flat_map(|r| r.to_le_bytes()).collect();
    fs::write(dir.join("rewards.f32le"), rewards)?;
    fs::write(
        dir.join("meta.json"),
        serde_json::to_vec_pretty(&traj.meta)?,
    )?;
    Ok(())
}

/// Writes `frames.rgb` and `actions.u8` into `dir`.
pub fn write_frame_stream(dir: &Path, frames: &[Frame], actions: &[Action]) -> Result<()> {
    let mut bytes = Vec::with_capacity(frames.len() * FRAME_BYTES);
    for f in frames {
        f.ensure_standard()?;
        bytes.extend_from_slice(&f.pixels);
    }
    fs::write(dir.join("frames.rgb"), bytes)?;
    fs::write(
        dir.join("actions.u8"),
        actions.iter().map(|a| a.id()).collect::<Vec<u8>>(),
    )?;
    Ok(())
}

/// Reads `frames.rgb` and `actions.u8` from `dir`.
pub fn read_frame_stream(dir: &Path) -> Result<(Vec<Frame>, Vec<Action>)> {
    let bytes = fs::read(dir.join("frames.rgb"))?;
    if bytes.len() % FRAME_BYTES != 0 {
        return Err(Error::Dataset(format!(
            "{}: truncated frames.rgb",
            dir.display()
        )));
    }
    let frames = bytes
        .chunks_exact(FRAME_BYTES)
        .map(Frame::from_bytes)
        .collect::<Result<Vec<_>>>()?;
    let actions = fs::read(dir.join("actions.u8"))?
        .into_iter()
        .map(Action::from_id)
        .collect::<Result<Vec<_>>>()?;
    Ok((frames, actions))
}

/// Read side of the episode store.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let file = File::open(root.join("index.jsonl"))
            .map_err(|e| Error::Dataset(format!("{}: {e}", root.join("index.jsonl").display())))?;
        let mut entries = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        Ok(Self { root, entries })
    }

    pub fn total_frames(&self) -> usize {
        self.entries.iter().map(|e| e.len).sum()
    }

    pub fn episode_ids(&self) -> BTreeSet<u64> {
        self.entries.iter().map(|e| e.episode_id).collect()
    }

    pub fn load(&self, entry: &IndexEntry) -> Result<Trajectory> {
        let dir = self.root.join(&entry.dir);
        let meta: TrajectoryMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
        let (frames, actions) = read_frame_stream(&dir)?;
        let rewards = fs::read(dir.join("rewards.f32le"))?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let traj = Trajectory {
            meta,
            frames,
            actions,
            rewards,
        };
        traj.check_lengths()?;
        Ok(traj)
    }

    pub fn load_all(&self) -> Result<Vec<Trajectory>> {
        self.entries.iter().map(|e| self.load(e)).collect()
    }
}

/// Errors out when the two episode id sets intersect.
pub fn check_disjoint(train: &BTreeSet<u64>, eval: &BTreeSet<u64>) -> Result<()> {
    let overlap = train.intersection(eval).count();
    if overlap > 0 {
        return Err(Error::Overlap(overlap));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: u64) -> Trajectory {
        let actions: Vec<Action> = (0..40)
            .map(|i| Action::ALL[(i * 7 + id as usize) % 8])
            .collect();
        record_actions(
            &EnvConfig::new("pillars"),
            id,
            100 + id,
            PolicyTag::Agent { step: 4096 },
            &actions,
        )
        .unwrap()
    }

    #[test]
    fn policy_tag_strings() {
        for tag in [
            PolicyTag::Random,
            PolicyTag::Human,
            PolicyTag::Agent { step: 12 },
        ] {
            assert_eq!(tag.to_string().parse::<PolicyTag>().unwrap(), tag);
        }
        assert_eq!(PolicyTag::Agent { step: 12 }.to_string(), "agent@step-12");
        assert!("agent@12".parse::<PolicyTag>().is_err());
    }

    #[test]
    fn store_round_trip_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = DatasetWriter::create(dir.path()).unwrap();
        let trajs = [sample(1), sample(2)];
        for t in &trajs {
            w.write(t).unwrap();
        }
        assert_eq!(w.frames_written(), 80);
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.entries.len(), 2);
        let loaded = ds.load_all().unwrap();
        assert_eq!(loaded, trajs);
        for t in &loaded {
            t.verify_replay().unwrap();
        }
    }

    #[test]
    fn tampered_frame_fails_replay() {
        let mut t = sample(3);
        t.frames[5].pixels[0] ^= 1;
        assert!(t.verify_replay().is_err());
    }

    #[test]
    fn overlap_detected() {
        let a: BTreeSet<u64> = [1, 2, 3].into();
        let b: BTreeSet<u64> = [3, 4].into();
        assert!(matches!(check_disjoint(&a, &b), Err(Error::Overlap(1))));
        assert!(check_disjoint(&a, &[9].into()).is_ok());
    }
}
