//! Teacher-forced denoiser training.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::nn::{self, OptimizerConfig};
use tch::Kind;

use super::algebra::batched;
use super::{latent_shape, Denoiser, DenoiserConfig, LatentCorpus};
use crate::autoencoder::TrainLog;
use crate::error::{Error, Result};
use crate::nn::{check_finite, randn, SpikeGuard};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Periodic checkpoint; on divergence the error names the last good one.
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
    /// Calls the evaluation hook every this many steps (and after the last step).
    pub eval_every: usize,
}

pub fn train_denoiser(
    corpus: &LatentCorpus,
    codec_hash: &str,
    config: &DenoiserConfig,
) -> Result<(Denoiser, TrainLog)> {
    train_denoiser_with(
        corpus,
        codec_hash,
        config,
        &TrainOptions::default(),
        |_, _| Ok(()),
    )
}

/// Trains on windows of `context_len` encoded frames plus the next frame.
///
/// Each example draws `t ~ U(0, 1)`, `eps ~ N(0, I)`, an augmentation level
/// `alpha ~ U(0, max_aug_level)` applied to the context only, and drops the
/// context with probability `cond_dropout_prob`; the loss is the squared
/// error against the velocity target.
pub fn train_denoiser_with(
    corpus: &LatentCorpus,
    codec_hash: &str,
    config: &DenoiserConfig,
    opts: &TrainOptions,
    mut on_eval: impl FnMut(usize, &Denoiser) -> Result<()>,
) -> Result<(Denoiser, TrainLog)> {
    let mut model = Denoiser::new(config.clone(), codec_hash)?;
    let windows = corpus.windows(1);
    if windows.is_empty() {
        return Err(Error::Dataset(
            "no training windows (episodes need at least two frames)".into(),
        ));
    }
    let mut lr = config.learning_rate;
    let mut opt = nn::Adam::default().build(model.var_store(), lr)?;
    let mut guard = SpikeGuard::new(&[model.var_store()]);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 22));
    let spec = config.aug_spec();
    let sched = config.schedule;
    let n = config.context_len;
    let b = config.batch_size;
    let mut log = TrainLog::default();
    let mut last_good: Option<PathBuf> = None;
    for step in 0..config.train_steps {
        if opts.eval_every > 0 && step % opts.eval_every == 0 {
            on_eval(step, &model)?;
        }
        let picks = corpus.sample_windows(&windows, &mut rng, b);
        let (ctx, acts, x0) = corpus.gather(&picks, n);
        let ts: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
        let eps = randn(&mut rng, &latent_shape(b as i64));
        let x_t = batched::forward_diffuse(&sched, &x0, &ts, &eps);
        let target = batched::velocity_target(&sched, &x0, &eps, &ts);
        let (ctx, buckets) = if config.noise_augmentation {
            let alphas: Vec<f64> = (0..b)
                .map(|_| rng.random_range(0.0..config.max_aug_level))
                .collect();
            let ctx_eps = randn(&mut rng, &ctx.size());
            let buckets = alphas
                .iter()
                .map(|&a| spec.bucket(a).map(|v| v as i64))
                .collect::<Result<Vec<_>>>()?;
            (batched::augment_context(&ctx, &alphas, &ctx_eps), buckets)
        } else {
            (ctx, vec![0; b])
        };
        let drop: Vec<bool> = (0..b)
            .map(|_| rng.random_bool(config.cond_dropout_prob))
            .collect();
        let v = model.forward(&x_t, &ts, &ctx, &acts, &buckets, &drop)?;
        let loss = (v - target).square().mean(Kind::Float);
        let value = loss.double_value(&[]);
        if let Err(e) = check_finite(value, step) {
            return Err(match last_good {
                Some(p) => Error::Diverged {
                    step,
                    msg: format!("{e}; last good checkpoint {}", p.display()),
                },
                None => e,
            });
        }
        if guard.observe(step, value, &[model.var_store()])? {
            lr *= 0.5;
            opt = nn::Adam::default().build(model.var_store(), lr)?;
            model.step += 1;
            continue;
        }
        if step % config.log_every.max(1) == 0 {
            log.losses.push((step, value));
            log::debug!("denoiser step {step} loss {value:.5}");
        }
        opt.backward_step_clip_norm(&loss, 1.0);
        model.step += 1;
        if let Some(path) = &opts.checkpoint {
            if opts.checkpoint_every > 0 && model.step % opts.checkpoint_every == 0 {
                model.save(path)?;
                last_good = Some(path.clone());
            }
        }
    }
    if opts.eval_every > 0 {
        on_eval(config.train_steps, &model)?;
    }
    if let Some(path) = &opts.checkpoint {
        model.save(path)?;
    }
    Ok((model, log))
}
