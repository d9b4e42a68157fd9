use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use neurosim_server::engine::{Engine, Worker};
use neurosim_server::pipeline::{Pipeline, PipelineConfig};
use neurosim_server::server::serve;

#[derive(Parser)]
#[command(
    name = "neurosim",
    version,
    about = "Train, evaluate and serve a neural simulation of a toy game"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON pipeline configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Working directory for data, models and reports.
    #[arg(long)]
    workdir: Option<PathBuf>,
    /// Top-level seed; every stage seed derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Config override `a.b=value`, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Rerun the stage even if its outputs are up to date.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the agent and record its gameplay.
    Collect(Common),
    /// Record uniform random gameplay.
    RandomData(Common),
    /// Train the codec.
    TrainAe(Common),
    /// Fine-tune the codec decoder.
    FinetuneDecoder(Common),
    /// Train the denoiser.
    TrainDenoiser(Common),
    /// Distill the denoiser into a one-step generator.
    Distill(Common),
    /// Run an evaluation protocol.
    Eval {
        which: EvalKind,
        #[command(flatten)]
        common: Common,
        /// Rating log for `score`.
        #[arg(long)]
        ratings: Option<PathBuf>,
    },
    /// Run an ablation.
    Ablate {
        which: AblationKind,
        #[command(flatten)]
        common: Common,
        /// Include the distilled model in the sampling-steps table.
        #[arg(long)]
        distilled: bool,
    },
    /// Serve the learned simulation over a web socket.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        port: Option<u16>,
        /// Directory holding codec.ckpt and denoiser.ckpt.
        #[arg(long)]
        model_dir: Option<PathBuf>,
        /// Static client files served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Human-eval directory for rate mode.
        #[arg(long)]
        rate_dir: Option<PathBuf>,
    },
    /// Roll the model out on a held-out episode and write a dump.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Output directory for the dump.
        #[arg(long)]
        out: PathBuf,
        /// Frames to generate.
        #[arg(long, default_value_t = 64)]
        length: usize,
    },
    /// Print a rollout dump and export its frames as PPM images.
    Replay {
        rollout: PathBuf,
        /// Directory for the exported frames.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG plots from existing reports.
    Plot(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalKind {
    TeacherForced,
    Autoregressive,
    HumanPairs,
    Score,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationKind {
    SamplingSteps,
    ContextLengths,
    NoiseAug,
    DataPolicy,
    DatasetSize,
}

fn pipeline(c: &Common) -> anyhow::Result<Pipeline> {
    let mut config = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = c.seed {
        config.set_seed(seed);
    }
    if let Some(w) = &c.workdir {
        config.workdir = w.clone();
    }
    let config = config.with_overrides(&c.overrides)?;
    Ok(Pipeline::new(config, c.force)?)
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Collect(c) => {
            let d = pipeline(&c)?.collect()?;
            println!(
                "{} frames in {} episodes",
                d.total_frames(),
                d.entries.len()
            );
        }
        Command::RandomData(c) => {
            let d = pipeline(&c)?.random_data()?;
            println!(
                "{} frames in {} episodes",
                d.total_frames(),
                d.entries.len()
            );
        }
        Command::TrainAe(c) => println!("codec {}", pipeline(&c)?.train_ae()?.hash()),
        Command::FinetuneDecoder(c) => {
            println!("codec {}", pipeline(&c)?.finetune_decoder()?.hash())
        }
        Command::TrainDenoiser(c) => {
            println!("denoiser {}", pipeline(&c)?.train_denoiser()?.hash())
        }
        Command::Distill(c) => println!("distilled {}", pipeline(&c)?.distill()?.hash()),
        Command::Eval {
            which,
            common,
            ratings,
        } => {
            let p = pipeline(&common)?;
            match which {
                EvalKind::TeacherForced => {
                    let r = p.eval_teacher_forced()?;
                    println!(
                        "median PSNR {:.3} dB (copy-last {:.3} dB), mean pdist {:.4}, n {}",
                        r.psnr.median(),
                        r.copy_last_psnr.median(),
                        r.pdist.mean,
                        r.psnr.n
                    );
                }
                EvalKind::Autoregressive => {
                    let r = p.eval_autoregressive()?;
                    for (k, (a, b)) in r.psnr.iter().zip(&r.pdist).enumerate() {
                        println!("step {:>3}  PSNR {:.3}  pdist {:.4}", k + 1, a.mean, b.mean);
                    }
                }
                EvalKind::HumanPairs => {
                    let (m, _) = p.human_pairs()?;
                    println!(
                        "{} pairs in {}",
                        m.pairs.len(),
                        p.dir.human_eval().display()
                    );
                }
                EvalKind::Score => {
                    let path = ratings.unwrap_or_else(|| {
                        p.dir
                            .human_eval()
                            .join(neurosim_server::server::RATINGS_FILE)
                    });
                    print_json(&p.score(&path)?)?;
                }
            }
        }
        Command::Ablate {
            which,
            common,
            distilled,
        } => {
            let p = pipeline(&common)?;
            match which {
                AblationKind::SamplingSteps => print_json(&p.ablate_sampling_steps(distilled)?)?,
                AblationKind::ContextLengths => print_json(&p.ablate_context_lengths()?)?,
                AblationKind::NoiseAug => print_json(&p.ablate_noise_aug()?)?,
                AblationKind::DataPolicy => print_json(&p.ablate_data_policy()?)?,
                AblationKind::DatasetSize => print_json(&p.ablate_dataset_size()?)?,
            }
        }
        Command::Serve {
            common,
            port,
            model_dir,
            static_dir,
            rate_dir,
        } => {
            let p = pipeline(&common)?;
            let mut config = p.config.serve.clone().with_env();
            if model_dir.is_none() && std::env::var_os("MODEL_DIR").is_none() {
                config.model_dir = p.dir.models();
            }
            config.port = port.unwrap_or(config.port);
            config.model_dir = model_dir.unwrap_or(config.model_dir);
            config.static_dir = static_dir.or(config.static_dir);
            config.rate_dir = rate_dir.or(config.rate_dir);
            let dir = config.model_dir.clone();
            let sampler = p.config.sampler;
            let (worker, info) = Worker::spawn(move || Engine::load(&dir, Some(sampler)))?;
            println!("codec {} denoiser {}", info.codec_hash, info.denoiser_hash);
            tokio::runtime::Runtime::new()?.block_on(serve(config, worker, info))?;
        }
        Command::Rollout {
            common,
            out,
            length,
        } => {
            let p = pipeline(&common)?;
            let meta = p.rollout(&out, length, p.config.seed)?;
            println!("{} frames written to {}", meta.len, out.display());
        }
        Command::Replay { rollout, out } => {
            let (meta, frames, actions) = neurosim::simulation::read_rollout_dump(&rollout)?;
            print_json(&meta)?;
            let counts = actions
                .iter()
                .fold([0usize; neurosim::env::NUM_ACTIONS], |mut c, a| {
                    c[a.id() as usize] += 1;
                    c
                });
            for a in neurosim::env::Action::ALL {
                println!("{:>12}: {}", a.name(), counts[a.id() as usize]);
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                for (i, f) in frames.iter().enumerate() {
                    std::fs::write(dir.join(format!("frame_{i:05}.ppm")), f.to_ppm())?;
                }
                println!("wrote {} frames to {}", frames.len(), dir.display());
            }
        }
        Command::Plot(c) => {
            for path in pipeline(&c)?.plot()? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
