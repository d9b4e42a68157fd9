//! Action-conditioned latent diffusion: v-parameterized training with context
//! noise augmentation, classifier-free guidance on the context frames, DDIM
//! sampling and optional one-step distillation.

pub mod algebra;
mod context;
mod data;
mod distill;
mod train;
mod unet;

pub use algebra::{
    augment_context, cfg_combine, ddim_step, forward_diffuse, predict_eps, predict_x0,
    velocity_target, AugSpec, NoiseSchedule,
};
pub use context::ContextBuffer;
pub use data::{EpisodeSpan, LatentCorpus};
pub use distill::{distill, DistillConfig};
pub use train::{train_denoiser, train_denoiser_with, TrainOptions};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::nn::VarStore;
use tch::Tensor;

use crate::autoencoder::{LatentFrame, Provenance, LATENT_C, LATENT_H, LATENT_LEN, LATENT_W};
use crate::checkpoint::{self, LoadOptions};
use crate::error::{Error, Result};
use crate::nn::{device, randn, seeded_init};
use unet::UNet;

pub const CHECKPOINT_KIND: &str = "denoiser";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub context_len: usize,
    pub action_embed_dim: i64,
    pub time_embed_dim: i64,
    pub widths: [i64; 3],
    /// Latent resolutions carrying action cross-attention; fixed by the architecture.
    pub attention_resolutions: Vec<usize>,
    pub cond_dropout_prob: f64,
    pub noise_augmentation: bool,
    pub max_aug_level: f64,
    pub aug_buckets: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_steps: usize,
    pub seed: u64,
    pub schedule: NoiseSchedule,
    /// Guidance is applied to the `v` prediction.
    pub cfg_space: String,
    pub log_every: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            context_len: 16,
            action_embed_dim: 128,
            time_embed_dim: 128,
            widths: [64, 128, 256],
            attention_resolutions: vec![4, 2],
            cond_dropout_prob: 0.1,
            noise_augmentation: true,
            max_aug_level: 0.7,
            aug_buckets: 10,
            batch_size: 64,
            learning_rate: 2e-4,
            train_steps: 150_000,
            seed: 0,
            schedule: NoiseSchedule::default(),
            cfg_space: "v".into(),
            log_every: 100,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_len == 0 {
            return Err(Error::Config("context_len must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.cond_dropout_prob) {
            return Err(Error::Config(format!(
                "cond_dropout_prob must lie in [0, 1), got {}",
                self.cond_dropout_prob
            )));
        }
        if self.max_aug_level <= 0.0 || self.aug_buckets == 0 {
            return Err(Error::Config(
                "augmentation level and bucket count must be positive".into(),
            ));
        }
        if self.attention_resolutions != [4, 2] {
            return Err(Error::Config(
                "attention runs at the 4x4 and 2x2 levels".into(),
            ));
        }
        if self.cfg_space != "v" {
            return Err(Error::Config(format!(
                "unsupported guidance space {}",
                self.cfg_space
            )));
        }
        if self.widths.iter().any(|&w| w <= 0)
            || self.time_embed_dim % 2 != 0
            || self.action_embed_dim <= 0
        {
            return Err(Error::Config(
                "widths and embedding sizes must be positive (time embedding even)".into(),
            ));
        }
        Ok(())
    }

    pub fn aug_spec(&self) -> AugSpec {
        AugSpec {
            max_level: self.max_aug_level,
            buckets: self.aug_buckets,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub num_steps: usize,
    pub cfg_weight: f64,
    pub inference_aug_level: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            num_steps: 4,
            cfg_weight: 1.5,
            inference_aug_level: 0.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 {
            return Err(Error::Config("num_steps must be at least 1".into()));
        }
        if !(self.cfg_weight >= 0.0) {
            return Err(Error::Config(format!(
                "cfg_weight must be non-negative, got {}",
                self.cfg_weight
            )));
        }
        Ok(())
    }

    /// `t_k = 1 - k / num_steps` for `k = 0..=num_steps`.
    pub fn step_grid(&self) -> Vec<f64> {
        (0..=self.num_steps)
            .map(|k| 1.0 - k as f64 / self.num_steps as f64)
            .collect()
    }
}

/// A trained (or initialized) denoiser bound to one codec.
#[derive(Debug)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub codec_hash: String,
    pub step: usize,
    /// Set for one-step distilled generators.
    pub distilled: bool,
    vs: VarStore,
    net: UNet,
}

#[derive(Serialize, Deserialize)]
struct Extra {
    codec_hash: String,
    distilled: bool,
    schedule: NoiseSchedule,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, codec_hash: impl Into<String>) -> Result<Self> {
        config.validate()?;
        let vs = VarStore::new(device());
        let net = UNet::new(&vs.root(), &config);
        seeded_init(
            &vs,
            crate::rng::derive_seed(config.seed, 21),
            unet::ZERO_INIT,
        );
        Ok(Denoiser {
            config,
            codec_hash: codec_hash.into(),
            step: 0,
            distilled: false,
            vs,
            net,
        })
    }

    /// Independent copy with identical weights.
    pub fn duplicate(&self) -> Result<Self> {
        let mut d = Denoiser::new(self.config.clone(), self.codec_hash.clone())?;
        d.vs.copy(&self.vs)?;
        d.step = self.step;
        d.distilled = self.distilled;
        Ok(d)
    }

    pub fn context_len(&self) -> usize {
        self.config.context_len
    }

    pub(crate) fn var_store(&self) -> &VarStore {
        &self.vs
    }

    pub fn hash(&self) -> String {
        checkpoint::params_hash(&[("denoiser", &self.vs)])
    }

    /// Raw `v` prediction; see [`UNet::forward`] for shapes.
    pub fn forward(
        &self,
        x_t: &Tensor,
        ts: &[f64],
        context: &Tensor,
        actions: &Tensor,
        buckets: &[i64],
        drop: &[bool],
    ) -> Result<Tensor> {
        let t = Tensor::from_slice(&ts.iter().map(|&t| t as f32).collect::<Vec<_>>());
        let bucket = Tensor::from_slice(buckets);
        let drop = Tensor::from_slice(drop);
        self.net.forward(x_t, &t, context, actions, &bucket, &drop)
    }

    /// Samples next latents for a batch of contexts; item `i` draws all its
    /// noise from `seeds[i]`, so results do not depend on batch composition.
    pub fn sample_batch(
        &self,
        context: &Tensor,
        actions: &Tensor,
        sampler: &SamplerConfig,
        seeds: &[u64],
    ) -> Result<Tensor> {
        sampler.validate()?;
        let b = seeds.len();
        let n = self.config.context_len;
        let shape = [LATENT_C as i64, LATENT_H as i64, LATENT_W as i64];
        let mut noise = Vec::with_capacity(b);
        let mut ctx_noise = Vec::with_capacity(b);
        for &s in seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            noise.push(randn(&mut rng, &shape));
            if sampler.inference_aug_level > 0.0 {
                ctx_noise.push(randn(&mut rng, &[n as i64, shape[0], shape[1], shape[2]]));
            }
        }
        let mut x = Tensor::stack(&noise, 0);
        let (ctx, bucket) = if sampler.inference_aug_level > 0.0 {
            let spec = self.config.aug_spec();
            let bucket = if self.config.noise_augmentation {
                spec.bucket(sampler.inference_aug_level)? as i64
            } else {
                0
            };
            let eps = Tensor::stack(&ctx_noise, 0);
            (
                algebra::batched::augment_context(
                    context,
                    &vec![sampler.inference_aug_level; b],
                    &eps,
                ),
                bucket,
            )
        } else {
            (context.shallow_clone(), 0)
        };
        let grid = sampler.step_grid();
        let sched = self.config.schedule;
        let guided = sampler.cfg_weight != 1.0;
        let (ctx2, act2) = if guided {
            (
                Tensor::cat(&[&ctx, &ctx], 0),
                Tensor::cat(&[actions, actions], 0),
            )
        } else {
            (ctx.shallow_clone(), actions.shallow_clone())
        };
        tch::no_grad(|| -> Result<()> {
            for k in 0..sampler.num_steps {
                let (t, t_next) = (grid[k], grid[k + 1]);
                let v = if guided {
                    let xx = Tensor::cat(&[&x, &x], 0);
                    let drop: Vec<bool> = (0..2 * b).map(|i| i >= b).collect();
                    let v = self.forward(
                        &xx,
                        &vec![t; 2 * b],
                        &ctx2,
                        &act2,
                        &vec![bucket; 2 * b],
                        &drop,
                    )?;
                    let (vc, vu) = (v.narrow(0, 0, b as i64), v.narrow(0, b as i64, b as i64));
                    algebra::batched::cfg_combine(&vc, &vu, sampler.cfg_weight)
                } else {
                    self.forward(
                        &x,
                        &vec![t; b],
                        &ctx2,
                        &act2,
                        &vec![bucket; b],
                        &vec![false; b],
                    )?
                };
                x = algebra::batched::ddim_step(&sched, &x, &v, t, t_next)?;
            }
            Ok(())
        })?;
        Ok(x)
    }

    pub fn sample_next_latent(
        &self,
        context: &ContextBuffer,
        sampler: &SamplerConfig,
        seed: u64,
    ) -> Result<LatentFrame> {
        if context.len() != self.config.context_len {
            return Err(Error::shape(
                format!("context of {}", self.config.context_len),
                context.len(),
            ));
        }
        let (values, actions) = context.flat();
        let n = context.len() as i64;
        let ctx = Tensor::from_slice(&values).view([
            1,
            n,
            LATENT_C as i64,
            LATENT_H as i64,
            LATENT_W as i64,
        ]);
        let acts = Tensor::from_slice(&actions).view([1, n]);
        let out = self.sample_batch(&ctx, &acts, sampler, &[seed])?;
        let v = crate::nn::to_vec_f32(&out);
        debug_assert_eq!(v.len(), LATENT_LEN);
        LatentFrame::new(v, Provenance::Generated)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let extra = Extra {
            codec_hash: self.codec_hash.clone(),
            distilled: self.distilled,
            schedule: self.config.schedule,
        };
        checkpoint::save(
            path,
            CHECKPOINT_KIND,
            &self.config,
            self.step,
            serde_json::to_value(extra)?,
            &[("denoiser", &self.vs)],
        )?;
        Ok(())
    }

    /// Loads a checkpoint; with `expected_codec` set, refuses a codec mismatch unless forced.
    pub fn load(path: &Path, expected_codec: Option<&str>, opts: LoadOptions) -> Result<Self> {
        let header = checkpoint::read_header(path)?;
        let extra: Extra = serde_json::from_value(header.extra.clone())?;
        if let Some(expected) = expected_codec {
            if expected != extra.codec_hash && !opts.force {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    msg: format!(
                        "denoiser was trained against codec {}, loaded codec is {expected}",
                        extra.codec_hash
                    ),
                });
            }
        }
        let mut d = Denoiser::new(header.config_as()?, extra.codec_hash)?;
        let header = checkpoint::load(path, CHECKPOINT_KIND, opts, &mut [("denoiser", &mut d.vs)])?;
        d.step = header.step;
        d.distilled = extra.distilled;
        Ok(d)
    }

    /// Sampler settings recommended for this model.
    pub fn default_sampler(&self) -> SamplerConfig {
        if self.distilled {
            SamplerConfig {
                num_steps: 1,
                cfg_weight: 1.0,
                inference_aug_level: 0.0,
            }
        } else {
            SamplerConfig::default()
        }
    }
}

pub(crate) fn latent_shape(b: i64) -> [i64; 4] {
    [b, LATENT_C as i64, LATENT_H as i64, LATENT_W as i64]
}
