//! Serves a model over the web socket protocol and plays a scripted key
//! timeline against it, then reads the loop statistics from `/health`.
//!
//! `cargo run -p neurosim-server --example scripted_session -- [model_dir] [frames] [out_dir]`
//!
//! Without `model_dir` an untrained model of the same shape is served, which
//! is enough to exercise the protocol.

use std::path::PathBuf;

use neurosim::autoencoder::{Codec, CodecConfig};
use neurosim::diffusion::{Denoiser, DenoiserConfig, SamplerConfig};
use neurosim::env::Frame;
use neurosim_server::client::{fetch_health, random_key_script, Client};
use neurosim_server::engine::{Engine, Worker};
use neurosim_server::protocol::Mode;
use neurosim_server::server::{start, ServeConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model_dir = args.first().filter(|s| !s.is_empty()).map(PathBuf::from);
    let n_frames: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    let out = args.get(2).map(PathBuf::from);

    let (worker, info) = Worker::spawn(move || match model_dir {
        Some(dir) => Engine::load(&dir, None),
        None => {
            let codec = Codec::new(CodecConfig {
                widths: [16, 32, 64],
                ..Default::default()
            })?;
            let denoiser = Denoiser::new(
                DenoiserConfig {
                    widths: [32, 64, 64],
                    ..Default::default()
                },
                codec.hash(),
            )?;
            Engine::new(
                codec,
                denoiser,
                SamplerConfig {
                    num_steps: 4,
                    ..Default::default()
                },
            )
        }
    })?;
    println!("codec {} denoiser {}", info.codec_hash, info.denoiser_hash);
    let srv = start(
        ServeConfig {
            port: 0,
            ..Default::default()
        },
        worker,
        info,
    )
    .await?;
    println!("listening on {}", srv.ws_url());

    let mut client = Client::connect(&srv.ws_url()).await?;
    client.hello(Mode::Play).await?;
    let script = random_key_script(n_frames as usize / 4, n_frames, 5);
    let (frames, other) = client.play(41, None, &script, n_frames).await?;
    client.close().await?;
    let gapless = frames
        .windows(2)
        .all(|w| w[1].seq == w[0].seq + 1 && w[1].frame == w[0].frame + 1);
    let last = frames.last().ok_or("no frames")?;
    println!(
        "{} frames, gapless {gapless}, {} other messages, last fps {:.1}, latency {:.1} ms",
        frames.len(),
        other.len(),
        last.fps,
        last.latency_ms
    );

    let stats = fetch_health(srv.addr).await?.stats;
    println!(
        "loop: {} frames, model {:.1} ms of {:.1} ms total, overhead {:.1}%",
        stats.frames,
        stats.model_ms,
        stats.total_ms,
        100.0 * stats.overhead_fraction()
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        for f in &frames {
            std::fs::write(
                dir.join(format!("frame_{:05}.ppm", f.frame)),
                Frame::from_bytes(&f.pixels)?.to_ppm(),
            )?;
        }
        println!("wrote {} frames to {}", frames.len(), dir.display());
    }
    Ok(())
}
