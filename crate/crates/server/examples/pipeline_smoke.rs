//! Runs every pipeline stage at toy scale in a scratch directory: data,
//! agent, codec, denoiser, distillation, evaluations, ablations and plots.
//!
//! `cargo run -p neurosim-server --example pipeline_smoke -- [workdir]`
//!
//! Stages are cached by configuration, so a second run only re-reads outputs.

use std::path::PathBuf;

use neurosim_server::pipeline::{Pipeline, PipelineConfig};

const TOY: &str = r#"{
  "random_frames": 6000,
  "eval_frames": 3000,
  "codec_train_frames": 2000,
  "agent": {"total_env_steps": 2048, "n_envs": 2, "epochs_per_iter": 1},
  "codec": {"widths": [8, 8, 16], "train_steps": 40, "finetune_steps": 10},
  "denoiser": {"context_len": 4, "widths": [16, 16, 16], "train_steps": 40, "batch_size": 4},
  "distill": {"steps": 10},
  "sampler": {"num_steps": 2},
  "eval": {"teacher_forced_windows": 32, "autoregressive_windows": 4, "autoregressive_steps": 8,
           "ablation_train_steps": 20, "dataset_sizes": [1000, 2000], "dataset_size_train_steps": 20,
           "dataset_size_eval_every": 10, "human_pairs": 6, "clip_lens": [4]}
}"#;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let workdir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/pipeline_smoke"));
    let mut config = PipelineConfig::from_json(serde_json::from_str(TOY)?)?;
    config.workdir = workdir;
    let p = Pipeline::new(config, false)?;

    let tf = p.eval_teacher_forced()?;
    println!(
        "teacher-forced PSNR {:.2} dB, copy-last {:.2} dB",
        tf.psnr.median(),
        tf.copy_last_psnr.median()
    );
    let ar = p.eval_autoregressive()?;
    println!(
        "autoregressive PSNR by step: {:?}",
        ar.psnr
            .iter()
            .map(|s| format!("{:.1}", s.mean))
            .collect::<Vec<_>>()
    );
    println!(
        "sampling steps: {} rows",
        p.ablate_sampling_steps(true)?.len()
    );
    println!(
        "context lengths: {} rows",
        p.ablate_context_lengths()?.len()
    );
    p.ablate_noise_aug()?;
    p.ablate_data_policy()?;
    println!("dataset sizes: {} curves", p.ablate_dataset_size()?.len());
    let (m, _) = p.human_pairs()?;
    println!("{} human-eval pairs", m.pairs.len());
    for path in p.plot()? {
        println!("plot {}", path.display());
    }
    Ok(())
}
