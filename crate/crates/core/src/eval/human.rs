//! Blinded A/B clips for human raters and scoring of their choices.
//!
//! The manifest only carries a sealed token per pair. The truth side is
//! recovered by recomputing the token with the secret from the scoring key.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::protocols::{EvalSet, EVAL_MIN_INDEX};
use crate::autoencoder::Codec;
use crate::dataset::write_frame_stream;
use crate::diffusion::{Denoiser, SamplerConfig};
use crate::env::Action;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::simulation::{decode_sequence, rollout_latents};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const KEY_FILE: &str = "scoring_key.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub pair_id: String,
    pub clip_len: usize,
    /// Clip directories relative to the manifest.
    pub left: String,
    pub right: String,
    pub sealed_truth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub codec_hash: String,
    pub denoiser_hash: String,
    pub pairs: Vec<PairEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringKey {
    pub secret: String,
}

impl ScoringKey {
    fn seal(&self, pair_id: &str, side: Side) -> String {
        let digest =
            Sha256::digest(format!("{}:{pair_id}:{}", self.secret, side.name()).as_bytes());
        hex::encode(&digest[..8])
    }

    /// Side holding the real clip, or an error if the key does not match.
    pub fn real_side(&self, pair: &PairEntry) -> Result<Side> {
        [Side::Left, Side::Right]
            .into_iter()
            .find(|&s| self.seal(&pair.pair_id, s) == pair.sealed_truth)
            .ok_or_else(|| {
                Error::Config(format!("scoring key does not open pair {}", pair.pair_id))
            })
    }
}

/// One rater decision: the side they believe is the real game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub pair_id: String,
    pub choice: Side,
}

/// Writes `n_pairs` real/simulated clip pairs plus manifest and key into `out`.
pub fn make_human_eval_pairs(
    codec: &Codec,
    denoiser: &Denoiser,
    set: &EvalSet,
    clip_lens: &[usize],
    n_pairs: usize,
    sampler: &SamplerConfig,
    seed: u64,
    out: &Path,
) -> Result<(Manifest, ScoringKey)> {
    if clip_lens.is_empty() || clip_lens.contains(&0) {
        return Err(Error::Config(
            "clip lengths must be non-empty and positive".into(),
        ));
    }
    fs::create_dir_all(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xab));
    let mut secret = [0u8; 16];
    rng.fill_bytes(&mut secret);
    let key = ScoringKey {
        secret: hex::encode(secret),
    };
    let mut pairs = Vec::with_capacity(n_pairs);
    for &len in clip_lens {
        let count = (0..n_pairs)
            .filter(|p| clip_lens[p % clip_lens.len()] == len)
            .count();
        if count == 0 {
            continue;
        }
        let windows =
            set.select_windows(count, len, EVAL_MIN_INDEX, derive_seed(seed, len as u64))?;
        let seeds: Vec<u64> = (0..count as u64)
            .map(|k| derive_seed(seed, (len as u64) << 32 | k))
            .collect();
        let mut sims = Vec::with_capacity(count);
        for (w, s) in windows.chunks(32).zip(seeds.chunks(32)) {
            let z = rollout_latents(&set.corpus, w, len, denoiser, sampler, s)?;
            sims.extend(decode_sequence(codec, &z)?);
        }
        for (k, (&(e, i), sim)) in windows.iter().zip(sims).enumerate() {
            let traj = &set.trajectories[e];
            let real = &traj.frames[i..i + len];
            let actions: Vec<Action> = traj.actions[i - 1..i + len - 1].to_vec();
            let pair_id = format!("pair_{len:03}_{k:04}");
            let real_side = if rng.random_bool(0.5) {
                Side::Left
            } else {
                Side::Right
            };
            let (left, right) = if real_side == Side::Left {
                (real, &sim[..])
            } else {
                (&sim[..], real)
            };
            for (side, frames) in [("a", left), ("b", right)] {
                let dir = out.join(&pair_id).join(side);
                fs::create_dir_all(&dir)?;
                write_frame_stream(&dir, frames, &actions)?;
            }
            pairs.push(PairEntry {
                sealed_truth: key.seal(&pair_id, real_side),
                left: format!("{pair_id}/a"),
                right: format!("{pair_id}/b"),
                pair_id,
                clip_len: len,
            });
        }
    }
    let manifest = Manifest {
        codec_hash: codec.hash(),
        denoiser_hash: denoiser.hash(),
        pairs,
    };
    fs::write(
        out.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    fs::write(out.join(KEY_FILE), serde_json::to_vec_pretty(&key)?)?;
    Ok((manifest, key))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScore {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Wilson 95% interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Fraction of rated pairs where the rater picked the real clip.
///
/// Pairs without a rating are excluded; repeated ratings keep the first.
pub fn score_ratings(
    manifest: &Manifest,
    key: &ScoringKey,
    ratings: &[Rating],
) -> Result<RatingScore> {
    let truth: BTreeMap<&str, Side> = manifest
        .pairs
        .iter()
        .map(|p| Ok((p.pair_id.as_str(), key.real_side(p)?)))
        .collect::<Result<_>>()?;
    let mut seen = BTreeSet::new();
    let (mut n, mut correct) = (0usize, 0usize);
    for r in ratings {
        let Some(&real) = truth.get(r.pair_id.as_str()) else {
            return Err(Error::Config(format!(
                "rating for unknown pair {}",
                r.pair_id
            )));
        };
        if !seen.insert(r.pair_id.as_str()) {
            continue;
        }
        n += 1;
        correct += usize::from(r.choice == real);
    }
    let (lo, hi) = wilson_interval(correct, n, 1.96);
    Ok(RatingScore {
        n,
        correct,
        accuracy: if n == 0 {
            f64::NAN
        } else {
            correct as f64 / n as f64
        },
        ci_low: lo,
        ci_high: hi,
    })
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Reads a JSON-lines rating log.
pub fn read_ratings(path: &Path) -> Result<Vec<Rating>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize, seed: u64) -> (Manifest, ScoringKey, Vec<Side>) {
        let key = ScoringKey {
            secret: format!("{seed:032x}"),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut truth = Vec::new();
        let pairs = (0..n)
            .map(|k| {
                let side = if rng.random_bool(0.5) {
                    Side::Left
                } else {
                    Side::Right
                };
                truth.push(side);
                let pair_id = format!("p{k}");
                PairEntry {
                    sealed_truth: key.seal(&pair_id, side),
                    left: String::new(),
                    right: String::new(),
                    pair_id,
                    clip_len: 32,
                }
            })
            .collect();
        (
            Manifest {
                codec_hash: String::new(),
                denoiser_hash: String::new(),
                pairs,
            },
            key,
            truth,
        )
    }

    #[test]
    fn all_correct_scores_one() {
        let (m, key, truth) = manifest(40, 1);
        let ratings: Vec<Rating> = m
            .pairs
            .iter()
            .zip(&truth)
            .map(|(p, &s)| Rating {
                pair_id: p.pair_id.clone(),
                choice: s,
            })
            .collect();
        let s = score_ratings(&m, &key, &ratings).unwrap();
        assert_eq!((s.n, s.correct, s.accuracy), (40, 40, 1.0));
    }

    #[test]
    fn unrated_pairs_are_excluded() {
        let (m, key, truth) = manifest(40, 2);
        let ratings: Vec<Rating> = m
            .pairs
            .iter()
            .zip(&truth)
            .take(10)
            .map(|(p, &s)| Rating {
                pair_id: p.pair_id.clone(),
                choice: s,
            })
            .collect();
        assert_eq!(score_ratings(&m, &key, &ratings).unwrap().n, 10);
    }

    #[test]
    fn wrong_key_cannot_open_the_manifest() {
        let (m, _, _) = manifest(4, 3);
        let wrong = ScoringKey {
            secret: "00".into(),
        };
        assert!(score_ratings(&m, &wrong, &[]).is_err());
    }

    #[test]
    fn coin_flip_raters_land_in_the_interval_at_the_nominal_rate() {
        let mut covered = 0;
        let trials = 400;
        for seed in 0..trials {
            let (m, key, _) = manifest(200, 1000 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ratings: Vec<Rating> = m
                .pairs
                .iter()
                .map(|p| Rating {
                    pair_id: p.pair_id.clone(),
                    choice: if rng.random_bool(0.5) {
                        Side::Left
                    } else {
                        Side::Right
                    },
                })
                .collect();
            let s = score_ratings(&m, &key, &ratings).unwrap();
            covered += usize::from(s.ci_low <= 0.5 && 0.5 <= s.ci_high);
        }
        let rate = covered as f64 / trials as f64;
        assert!((0.92..=0.98).contains(&rate), "coverage {rate}");
    }

    #[test]
    fn wilson_matches_reference_values() {
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!(
            (lo - 0.4038).abs() < 1e-4 && (hi - 0.5962).abs() < 1e-4,
            "{lo} {hi}"
        );
        assert_eq!(wilson_interval(0, 0, 1.96), (0.0, 1.0));
    }
}
