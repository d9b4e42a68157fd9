//! Trains a small codec on random-policy frames and reports held-out PSNR.
//!
//! `cargo run --example train_codec -- [train_frames] [steps] [w0,w1,w2] [learning_rate]`

use neurosim::agent::{random_rollouts, RandomPolicyConfig};
use neurosim::autoencoder::{finetune_decoder, train_autoencoder, CodecConfig};
use neurosim::env::render::{HUD_Y, PAD_Y};
use neurosim::eval::{median, psnr, region_mse};

fn main() -> anyhow::Result<()> {
    let raw: Vec<String> = std::env::args().skip(1).collect();
    let args: Vec<usize> = raw
        .iter()
        .take(2)
        .map(|a| a.parse())
        .collect::<Result<_, _>>()?;
    let widths = match raw.get(2) {
        Some(w) => {
            let v: Vec<i64> = w.split(',').map(|x| x.parse()).collect::<Result<_, _>>()?;
            [v[0], v[1], v[2]]
        }
        None => [16, 32, 64],
    };
    let learning_rate: f64 = raw.get(3).map(|s| s.parse()).transpose()?.unwrap_or(1e-3);
    let n_train = args.first().copied().unwrap_or(4000);
    let steps = args.get(1).copied().unwrap_or(1500);

    let train = random_rollouts(n_train, 1, &RandomPolicyConfig::default())?;
    let held = random_rollouts(
        512,
        2,
        &RandomPolicyConfig {
            first_episode_id: 10_000,
            ..Default::default()
        },
    )?;
    let train_frames: Vec<_> = train.iter().flat_map(|t| &t.frames).collect();
    let held_frames: Vec<_> = held.iter().flat_map(|t| &t.frames).collect();

    let config = CodecConfig {
        widths,
        train_steps: steps,
        finetune_steps: steps / 4,
        learning_rate,
        log_every: 250,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let (mut codec, log) = train_autoencoder(&train_frames, &config)?;
    println!(
        "trained {steps} steps in {:.1}s",
        t0.elapsed().as_secs_f64()
    );
    for (step, loss) in &log.losses {
        println!("  step {step:>6} loss {loss:.5}");
    }

    let report = |codec: &neurosim::autoencoder::Codec| -> anyhow::Result<(f64, f64)> {
        let recon =
            codec.decode_batch(&codec.encode_batch(&held_frames)?.iter().collect::<Vec<_>>())?;
        let p: Vec<f64> = held_frames
            .iter()
            .zip(&recon)
            .map(|(a, b)| psnr(a, b))
            .collect::<Result<_, _>>()?;
        let hud: Vec<f64> = held_frames
            .iter()
            .zip(&recon)
            .map(|(a, b)| region_mse(a, b, HUD_Y, PAD_Y))
            .collect::<Result<_, _>>()?;
        Ok((median(&p), hud.iter().sum::<f64>() / hud.len() as f64))
    };
    let (p0, h0) = report(&codec)?;
    println!("held-out median PSNR {p0:.2} dB, HUD MSE {h0:.2}");
    let t0 = std::time::Instant::now();
    finetune_decoder(&mut codec, &train_frames, &config)?;
    let (p1, h1) = report(&codec)?;
    println!(
        "after decoder fine-tune ({:.1}s): median PSNR {p1:.2} dB, HUD MSE {h1:.2}",
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
