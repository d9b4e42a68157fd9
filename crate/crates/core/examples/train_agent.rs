//! Trains the PPO agent briefly and compares it with uniform random play.
//!
//! `cargo run --example train_agent -- [env_steps]`

use neurosim::agent::{evaluate_policy, record_policy, train_agent, AgentConfig};
use neurosim::dataset::Trajectory;
use neurosim::eval::{median, psnr};

fn motion_stats(trajs: &[Trajectory]) -> anyhow::Result<(f64, f64)> {
    let mut p = Vec::new();
    let mut far = 0usize;
    let mut n = 0usize;
    for t in trajs {
        for w in t.frames.windows(2) {
            p.push(psnr(&w[0], &w[1])?);
        }
        let spawn = neurosim::env::GameMap::shipped(&t.meta.env.map)?.spawn;
        for tile in t.player_tiles()? {
            n += 1;
            far += usize::from(tile.l1(spawn) >= 6);
        }
    }
    Ok((median(&p), far as f64 / n.max(1) as f64))
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let steps: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(50_000);
    let config = AgentConfig {
        total_env_steps: steps,
        seed: 5,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let (policy, log) = train_agent(&config, None, None)?;
    println!(
        "trained {} env steps in {:.0}s",
        log.env_steps,
        t0.elapsed().as_secs_f64()
    );
    for (s, r) in &log.episode_rewards {
        println!("  {s:>8} env steps: mean episode reward {r:.0}");
    }
    let agent = evaluate_policy(Some(&policy), &config, 16, 99)?;
    let random = evaluate_policy(None, &config, 16, 99)?;
    println!("mean episode reward: agent {agent:.0}, random {random:.0}");
    for (name, p) in [("agent", Some(&policy)), ("random", None)] {
        let trajs = record_policy(p, &config, 8000, 7, 0)?;
        let (copy_last, far) = motion_stats(&trajs)?;
        println!(
            "{name}: copy-last median PSNR {copy_last:.2} dB, frames >= 6 tiles from spawn {:.1}%",
            100.0 * far
        );
    }
    Ok(())
}
