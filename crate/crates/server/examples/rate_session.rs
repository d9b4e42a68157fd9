//! Rate mode end to end: builds blinded pairs, serves them, rates every pair
//! over the web socket and scores the logged ratings with the sealed key.
//!
//! `cargo run -p neurosim-server --example rate_session -- [model_dir] [pairs]`

use std::path::PathBuf;

use neurosim::agent::{random_rollouts, RandomPolicyConfig};
use neurosim::autoencoder::{Codec, CodecConfig};
use neurosim::checkpoint::LoadOptions;
use neurosim::diffusion::{Denoiser, DenoiserConfig};
use neurosim::eval::human::{make_human_eval_pairs, read_ratings, score_ratings, Side};
use neurosim::eval::EvalSet;
use neurosim_server::client::Client;
use neurosim_server::engine::{Engine, Worker, CODEC_FILE, DENOISER_FILE};
use neurosim_server::server::{start, ServeConfig, RATINGS_FILE};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model_dir = args.first().filter(|s| !s.is_empty()).map(PathBuf::from);
    let n_pairs: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(24);

    let (codec, denoiser) = match &model_dir {
        Some(dir) => {
            let codec = Codec::load(&dir.join(CODEC_FILE), LoadOptions::default())?;
            let denoiser = Denoiser::load(
                &dir.join(DENOISER_FILE),
                Some(&codec.hash()),
                LoadOptions::default(),
            )?;
            (codec, denoiser)
        }
        None => {
            let codec = Codec::new(CodecConfig {
                widths: [8, 8, 8],
                ..Default::default()
            })?;
            let denoiser = Denoiser::new(
                DenoiserConfig {
                    widths: [16, 16, 16],
                    ..Default::default()
                },
                codec.hash(),
            )?;
            (codec, denoiser)
        }
    };
    let dir = tempfile::tempdir()?;
    let held = random_rollouts(
        3000,
        9,
        &RandomPolicyConfig {
            first_episode_id: 500,
            ..Default::default()
        },
    )?;
    let set = EvalSet::new(&codec, held)?;
    let sampler = denoiser.default_sampler();
    let (manifest, key) = make_human_eval_pairs(
        &codec,
        &denoiser,
        &set,
        &[8, 16],
        n_pairs,
        &sampler,
        1,
        dir.path(),
    )?;
    println!("{} pairs written", manifest.pairs.len());

    let (worker, info) = Worker::spawn(move || Engine::new(codec, denoiser, sampler))?;
    let srv = start(
        ServeConfig {
            port: 0,
            rate_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        },
        worker,
        info,
    )
    .await?;
    let mut client = Client::connect(&srv.ws_url()).await?;
    // A rater who always answers "left".
    let sent = client.rate_all(|_| Side::Left).await?;
    client.close().await?;

    let logged = read_ratings(&dir.path().join(RATINGS_FILE))?;
    assert_eq!(logged, sent);
    let s = score_ratings(&manifest, &key, &logged)?;
    println!(
        "always-left rater: {}/{} correct, {:.1}% (95% CI {:.1}..{:.1})",
        s.correct,
        s.n,
        100.0 * s.accuracy,
        100.0 * s.ci_low,
        100.0 * s.ci_high
    );
    Ok(())
}
