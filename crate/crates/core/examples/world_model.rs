//! End-to-end world model on random-policy data: codec, denoiser, then
//! teacher-forced PSNR against the copy-last-frame baseline.
//!
//! `cargo run --example world_model -- <workdir> [steps] [w0,w1,w2] [train_frames]`
//!
//! The codec is cached in `<workdir>/codec.ckpt` and reused on later runs.

use std::path::PathBuf;

use neurosim::agent::{random_rollouts, RandomPolicyConfig};
use neurosim::autoencoder::{finetune_decoder, train_autoencoder, Codec, CodecConfig};
use neurosim::checkpoint::LoadOptions;
use neurosim::diffusion::{
    train_denoiser_with, DenoiserConfig, LatentCorpus, SamplerConfig, TrainOptions,
};
use neurosim::eval::{eval_teacher_forced, EvalSet, EVAL_MIN_INDEX};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = PathBuf::from(
        args.first()
            .map(String::as_str)
            .unwrap_or("target/world_model"),
    );
    let steps: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let widths: Vec<i64> = args
        .get(2)
        .map(|s| s.split(',').map(str::parse).collect())
        .transpose()?
        .unwrap_or(vec![32, 64, 64]);
    let n_train: usize = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(8000);
    std::fs::create_dir_all(&dir)?;

    let train = random_rollouts(n_train, 1, &RandomPolicyConfig::default())?;
    let held = random_rollouts(
        4096,
        2,
        &RandomPolicyConfig {
            first_episode_id: 1_000_000,
            ..Default::default()
        },
    )?;

    let codec_path = dir.join("codec.ckpt");
    let codec = if codec_path.exists() {
        Codec::load(&codec_path, LoadOptions::default())?
    } else {
        let frames: Vec<_> = train.iter().flat_map(|t| &t.frames).collect();
        let config = CodecConfig {
            widths: [16, 32, 64],
            train_steps: 4000,
            finetune_steps: 1000,
            log_every: 500,
            ..Default::default()
        };
        let (mut codec, _) = train_autoencoder(&frames, &config)?;
        finetune_decoder(&mut codec, &frames, &config)?;
        codec.save(&codec_path)?;
        codec
    };

    let corpus = LatentCorpus::encode(&codec, &train)?;
    let set = EvalSet::new(&codec, held)?;
    let windows = set.select_windows(128, 1, EVAL_MIN_INDEX, 7)?;
    let config = DenoiserConfig {
        widths: [widths[0], widths[1], widths[2]],
        train_steps: steps,
        batch_size: 32,
        log_every: 100,
        ..Default::default()
    };
    let opts = TrainOptions {
        eval_every: (steps / 4).max(1),
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let (model, _) = train_denoiser_with(&corpus, &codec.hash(), &config, &opts, |step, m| {
        let r = eval_teacher_forced(
            &codec,
            m,
            &set,
            &windows,
            &SamplerConfig::default(),
            3,
            Some(&corpus.episode_ids()),
        )?;
        println!(
            "step {step:>6} ({:.0}s): median PSNR {:.2} dB, copy-last {:.2} dB, pdist {:.4}",
            t0.elapsed().as_secs_f64(),
            r.psnr.median(),
            r.copy_last_psnr.median(),
            r.pdist.summary().mean
        );
        Ok(())
    })?;
    model.save(&dir.join("denoiser.ckpt"))?;
    Ok(())
}
