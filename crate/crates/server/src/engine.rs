//! Model-side half of serving: checkpoints, per-session contexts and the
//! single inference worker that owns them.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use neurosim::autoencoder::Codec;
use neurosim::checkpoint::LoadOptions;
use neurosim::diffusion::{ContextBuffer, Denoiser, SamplerConfig};
use neurosim::env::{render, Action, EnvConfig, Frame};
use neurosim::simulation::{ood_context_from_frame, step_seed};
use neurosim::{Error, Result};

pub const CODEC_FILE: &str = "codec.ckpt";
pub const DENOISER_FILE: &str = "denoiser.ckpt";

/// Hashes reported by the health endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub codec_hash: String,
    pub denoiser_hash: String,
    pub context_len: usize,
    pub sampler: SamplerConfig,
    pub distilled: bool,
}

pub struct Engine {
    pub codec: Codec,
    pub denoiser: Denoiser,
    pub sampler: SamplerConfig,
}

/// One session's simulation: context plus the seed its noise derives from.
pub struct SimState {
    pub context: ContextBuffer,
    pub seed: u64,
}

impl Engine {
    /// Loads `codec.ckpt` and `denoiser.ckpt` from `dir`; the denoiser must
    /// have been trained against this codec.
    pub fn load(dir: &Path, sampler: Option<SamplerConfig>) -> Result<Self> {
        let codec = Codec::load(&dir.join(CODEC_FILE), LoadOptions::default())?;
        let denoiser = Denoiser::load(
            &dir.join(DENOISER_FILE),
            Some(&codec.hash()),
            LoadOptions::default(),
        )?;
        let sampler = sampler.unwrap_or_else(|| denoiser.default_sampler());
        sampler.validate()?;
        Ok(Engine {
            codec,
            denoiser,
            sampler,
        })
    }

    /// Pairs already-built models; the denoiser must match the codec.
    pub fn new(codec: Codec, denoiser: Denoiser, sampler: SamplerConfig) -> Result<Self> {
        if denoiser.codec_hash != codec.hash() {
            return Err(Error::Config(format!(
                "denoiser expects codec {}, got {}",
                denoiser.codec_hash,
                codec.hash()
            )));
        }
        sampler.validate()?;
        Ok(Engine {
            codec,
            denoiser,
            sampler,
        })
    }

    pub fn info(&self) -> ModelInfo {
        ModelInfo {
            codec_hash: self.codec.hash(),
            denoiser_hash: self.denoiser.hash(),
            context_len: self.denoiser.context_len(),
            sampler: self.sampler,
            distilled: self.denoiser.distilled,
        }
    }

    /// Context of `N` copies of the real spawn frame.
    pub fn reset(&self, map: &str, seed: u64) -> Result<SimState> {
        let state = EnvConfig::new(map).reset(seed)?;
        let mut context =
            ood_context_from_frame(&render(&state), &self.codec, self.denoiser.context_len())?;
        context.seal();
        Ok(SimState { context, seed })
    }

    /// Applies `action`, samples the next latent and decodes it.
    pub fn step(&self, sim: &mut SimState, action: Action, tick: u64) -> Result<Frame> {
        sim.context.set_newest_action(action);
        let z = self.denoiser.sample_next_latent(
            &sim.context,
            &self.sampler,
            step_seed(sim.seed, tick),
        )?;
        let frame = self.codec.decode(&z)?;
        sim.context.push(z, Action::Noop)?;
        Ok(frame)
    }
}

pub struct StepOutput {
    pub frame: Frame,
    pub model_ms: f64,
}

enum Job {
    Reset {
        session: u64,
        map: String,
        seed: u64,
        reply: oneshot::Sender<Result<()>>,
    },
    Step {
        session: u64,
        action: Action,
        tick: u64,
        reply: oneshot::Sender<Result<StepOutput>>,
    },
    Close {
        session: u64,
    },
}

/// Handle to the inference thread. Sessions time-share the one model.
#[derive(Clone)]
pub struct Worker {
    jobs: mpsc::Sender<Job>,
}

fn gone() -> Error {
    Error::Config("inference worker stopped".into())
}

impl Worker {
    /// Starts the worker; `load` runs on the worker thread, which then owns
    /// the models for its whole life.
    pub fn spawn<F>(load: F) -> Result<(Worker, ModelInfo)>
    where
        F: FnOnce() -> Result<Engine> + Send + 'static,
    {
        let (jobs, rx) = mpsc::channel::<Job>();
        let (ready_tx, ready_rx) = mpsc::channel::<Result<ModelInfo>>();
        thread::Builder::new()
            .name("inference".into())
            .spawn(move || {
                let engine = match load() {
                    Ok(e) => {
                        let _ = ready_tx.send(Ok(e.info()));
                        e
                    }
                    Err(e) => {
                        let _ = ready_tx.send(Err(e));
                        return;
                    }
                };
                let mut sims: HashMap<u64, SimState> = HashMap::new();
                while let Ok(job) = rx.recv() {
                    match job {
                        Job::Reset {
                            session,
                            map,
                            seed,
                            reply,
                        } => {
                            let r = engine.reset(&map, seed).map(|s| {
                                sims.insert(session, s);
                            });
                            let _ = reply.send(r);
                        }
                        Job::Step {
                            session,
                            action,
                            tick,
                            reply,
                        } => {
                            let started = Instant::now();
                            let r = match sims.get_mut(&session) {
                                Some(sim) => engine.step(sim, action, tick),
                                None => {
                                    Err(Error::Config(format!("session {session} has no context")))
                                }
                            };
                            let model_ms = started.elapsed().as_secs_f64() * 1e3;
                            let _ = reply.send(r.map(|frame| StepOutput { frame, model_ms }));
                        }
                        Job::Close { session } => {
                            sims.remove(&session);
                        }
                    }
                }
            })?;
        let info = ready_rx.recv().map_err(|_| gone())??;
        Ok((Worker { jobs }, info))
    }

    pub fn from_dir(dir: PathBuf, sampler: Option<SamplerConfig>) -> Result<(Worker, ModelInfo)> {
        Self::spawn(move || Engine::load(&dir, sampler))
    }

    pub async fn reset(&self, session: u64, map: String, seed: u64) -> Result<()> {
        let (reply, rx) = oneshot::channel();
        self.jobs
            .send(Job::Reset {
                session,
                map,
                seed,
                reply,
            })
            .map_err(|_| gone())?;
        rx.await.map_err(|_| gone())?
    }

    pub async fn step(&self, session: u64, action: Action, tick: u64) -> Result<StepOutput> {
        let (reply, rx) = oneshot::channel();
        self.jobs
            .send(Job::Step {
                session,
                action,
                tick,
                reply,
            })
            .map_err(|_| gone())?;
        rx.await.map_err(|_| gone())?
    }

    pub fn close(&self, session: u64) {
        let _ = self.jobs.send(Job::Close { session });
    }
}
