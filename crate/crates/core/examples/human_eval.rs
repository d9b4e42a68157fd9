//! Builds blinded real/simulated clip pairs and scores simulated raters.
//!
//! `cargo run -p neurosim-core --example human_eval -- <model_dir> [out_dir]`
//!
//! A rater who always guesses scores near 50%; one who can tell the clips
//! apart scores near 100%. Both are scored through the sealed manifest.

use std::path::PathBuf;

use neurosim::agent::{random_rollouts, RandomPolicyConfig};
use neurosim::autoencoder::Codec;
use neurosim::checkpoint::LoadOptions;
use neurosim::diffusion::Denoiser;
use neurosim::eval::human::{make_human_eval_pairs, score_ratings, Rating, Side};
use neurosim::eval::EvalSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let models = PathBuf::from(
        args.first()
            .ok_or_else(|| anyhow::anyhow!("usage: human_eval <model_dir> [out_dir]"))?,
    );
    let out = PathBuf::from(
        args.get(1)
            .map(String::as_str)
            .unwrap_or("target/human_eval"),
    );
    let codec = Codec::load(&models.join("codec.ckpt"), LoadOptions::default())?;
    let denoiser = Denoiser::load(
        &models.join("denoiser.ckpt"),
        Some(&codec.hash()),
        LoadOptions::default(),
    )?;

    let held = random_rollouts(
        4000,
        77,
        &RandomPolicyConfig {
            first_episode_id: 5_000_000,
            ..Default::default()
        },
    )?;
    let set = EvalSet::new(&codec, held)?;
    let (manifest, key) = make_human_eval_pairs(
        &codec,
        &denoiser,
        &set,
        &[16, 32],
        40,
        &denoiser.default_sampler(),
        1,
        &out,
    )?;
    println!("{} pairs in {}", manifest.pairs.len(), out.display());

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let guesses: Vec<Rating> = manifest
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
    let oracle: Vec<Rating> = manifest
        .pairs
        .iter()
        .map(|p| {
            Ok(Rating {
                pair_id: p.pair_id.clone(),
                choice: key.real_side(p)?,
            })
        })
        .collect::<neurosim::Result<_>>()?;
    for (name, ratings) in [("coin flip", &guesses), ("oracle", &oracle)] {
        let s = score_ratings(&manifest, &key, ratings)?;
        println!(
            "{name:>9}: {}/{} correct, {:.1}% (95% CI {:.1}..{:.1})",
            s.correct,
            s.n,
            100.0 * s.accuracy,
            100.0 * s.ci_low,
            100.0 * s.ci_high
        );
    }
    Ok(())
}
