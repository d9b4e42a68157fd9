//! Plays the learned simulation offline: starts from a rendered spawn frame,
//! feeds a scripted action stream and writes the generated frames next to
//! the real game's frames for the same actions.
//!
//! `cargo run -p neurosim-core --example dream -- <model_dir> [out_dir] [length]`
//!
//! `<model_dir>` holds `codec.ckpt` and `denoiser.ckpt`, for example the
//! directory written by the `world_model` example.

use std::path::PathBuf;

use neurosim::autoencoder::Codec;
use neurosim::checkpoint::LoadOptions;
use neurosim::diffusion::Denoiser;
use neurosim::env::{render, Action, EnvConfig};
use neurosim::eval::psnr;
use neurosim::simulation::{
    all_generated, ood_context_from_frame, rollout, write_rollout_dump, ActionSource,
    ContextSource, RolloutConfig, RolloutMeta,
};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let models = PathBuf::from(
        args.first()
            .ok_or_else(|| anyhow::anyhow!("usage: dream <model_dir> [out_dir] [length]"))?,
    );
    let out = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("target/dream"));
    let length: usize = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(48);

    let codec = Codec::load(&models.join("codec.ckpt"), LoadOptions::default())?;
    let denoiser = Denoiser::load(
        &models.join("denoiser.ckpt"),
        Some(&codec.hash()),
        LoadOptions::default(),
    )?;
    let script: Vec<Action> = [
        (Action::Forward, 16),
        (Action::TurnRight, 8),
        (Action::Forward, 16),
        (Action::Fire, 8),
    ]
    .into_iter()
    .flat_map(|(a, n)| std::iter::repeat_n(a, n))
    .cycle()
    .take(length)
    .collect();

    let mut state = EnvConfig::new("crossroads").reset(3)?;
    let init = ood_context_from_frame(&render(&state), &codec, denoiser.context_len())?;
    let config = RolloutConfig {
        length,
        sampler: denoiser.default_sampler(),
        seed: 3,
        context_source: ContextSource::OodFrame,
        action_source: ActionSource::Live,
    };
    let (dream, _) = rollout(&init, script.iter().copied(), &config, &codec, &denoiser)?;
    assert!(all_generated(&dream));

    std::fs::create_dir_all(out.join("real"))?;
    for (k, (&a, gen)) in script.iter().zip(&dream.frames).enumerate() {
        state.step_mut(a);
        let real = render(&state);
        if k % 8 == 0 {
            println!(
                "step {k:>3} {:>12}: PSNR vs game {:.2} dB",
                a.name(),
                psnr(gen, &real)?
            );
        }
        std::fs::write(
            out.join("real").join(format!("frame_{k:04}.ppm")),
            real.to_ppm(),
        )?;
    }
    let meta = RolloutMeta {
        config,
        codec_hash: codec.hash(),
        denoiser_hash: denoiser.hash(),
        len: dream.frames.len(),
        truncated: dream.truncated,
    };
    write_rollout_dump(&out, &meta, &dream)?;
    println!(
        "wrote {} generated frames to {}",
        dream.frames.len(),
        out.display()
    );
    Ok(())
}
