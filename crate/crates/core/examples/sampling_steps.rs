//! Teacher-forced quality against the number of DDIM steps.
//!
//! `cargo run -p neurosim-core --example sampling_steps -- <model_dir> [windows]`

use std::path::PathBuf;

use neurosim::agent::{random_rollouts, RandomPolicyConfig};
use neurosim::autoencoder::Codec;
use neurosim::checkpoint::LoadOptions;
use neurosim::diffusion::Denoiser;
use neurosim::eval::ablations::ablate_sampling_steps;
use neurosim::eval::{EvalSet, EVAL_MIN_INDEX};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let models = PathBuf::from(
        args.first()
            .ok_or_else(|| anyhow::anyhow!("usage: sampling_steps <model_dir> [windows]"))?,
    );
    let n: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(128);
    let codec = Codec::load(&models.join("codec.ckpt"), LoadOptions::default())?;
    let denoiser = Denoiser::load(
        &models.join("denoiser.ckpt"),
        Some(&codec.hash()),
        LoadOptions::default(),
    )?;
    let distilled = models.join("distilled.ckpt");
    let distilled = if distilled.exists() {
        Some(Denoiser::load(
            &distilled,
            Some(&codec.hash()),
            LoadOptions::default(),
        )?)
    } else {
        None
    };

    let held = random_rollouts(
        4096,
        2,
        &RandomPolicyConfig {
            first_episode_id: 1_000_000,
            ..Default::default()
        },
    )?;
    let set = EvalSet::new(&codec, held)?;
    let windows = set.select_windows(n, 1, EVAL_MIN_INDEX, 7)?;
    let (table, _) = ablate_sampling_steps(
        &codec,
        &denoiser,
        distilled.as_ref(),
        &set,
        &windows,
        &[1, 2, 4, 8, 16],
        &denoiser.default_sampler(),
        5,
    )?;
    print!("{}", table.to_csv());
    Ok(())
}
