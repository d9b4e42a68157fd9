//! One-step distillation by distribution matching.
//!
//! Three networks start from the teacher: a frozen teacher, a fake-score
//! model and a generator. The generator maps pure noise at `t = 1` to a clean
//! latent in one step. Its output is re-noised at a random level; the teacher
//! (with guidance) and the fake-score model predict the noise, and the
//! generator descends along `eps_fake - eps_real` per element. The fake-score
//! model keeps fitting the generator's outputs with the ordinary diffusion loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::nn::{self, OptimizerConfig};
use tch::{Kind, Tensor};

use super::algebra::batched;
use super::{latent_shape, Denoiser, LatentCorpus};
use crate::autoencoder::TrainLog;
use crate::error::{Error, Result};
use crate::nn::{check_finite, randn};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub generator_lr: f64,
    pub fake_score_lr: f64,
    /// Guidance used for the teacher's score.
    pub cfg_weight: f64,
    /// Re-noising levels are drawn from `U(t_min, t_max)`.
    pub t_min: f64,
    pub t_max: f64,
    pub fake_score_updates: usize,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            steps: 1000,
            batch_size: 32,
            generator_lr: 2e-5,
            fake_score_lr: 2e-5,
            cfg_weight: 1.5,
            t_min: 0.02,
            t_max: 0.98,
            fake_score_updates: 1,
            seed: 0,
            log_every: 50,
        }
    }
}

fn generate(
    gen: &Denoiser,
    noise: &Tensor,
    ctx: &Tensor,
    acts: &Tensor,
    b: usize,
) -> Result<Tensor> {
    let v = gen.forward(
        noise,
        &vec![1.0; b],
        ctx,
        acts,
        &vec![0; b],
        &vec![false; b],
    )?;
    Ok(batched::predict_x0(
        &gen.config.schedule,
        noise,
        &v,
        &vec![1.0; b],
    ))
}

/// Returns the distilled one-step generator; the teacher is only read.
pub fn distill(
    teacher: &Denoiser,
    corpus: &LatentCorpus,
    config: &DistillConfig,
) -> Result<(Denoiser, TrainLog)> {
    let gen = teacher.duplicate()?;
    let fake = teacher.duplicate()?;
    let mut opt_g = nn::Adam::default().build(gen.var_store(), config.generator_lr)?;
    let mut opt_f = nn::Adam::default().build(fake.var_store(), config.fake_score_lr)?;
    let windows = corpus.windows(1);
    if windows.is_empty() {
        return Err(Error::Dataset("no distillation windows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 31));
    let sched = teacher.config.schedule;
    let n = teacher.config.context_len;
    let b = config.batch_size;
    let mut log = TrainLog::default();
    let mut gen = gen;
    for step in 0..config.steps {
        let picks = corpus.sample_windows(&windows, &mut rng, b);
        let (ctx, acts, _) = corpus.gather(&picks, n);
        let noise = randn(&mut rng, &latent_shape(b as i64));
        let ts: Vec<f64> = (0..b)
            .map(|_| rng.random_range(config.t_min..config.t_max))
            .collect();
        let eps = randn(&mut rng, &latent_shape(b as i64));

        // Generator step.
        let x0 = generate(&gen, &noise, &ctx, &acts, b)?;
        let (eps_real, eps_fake) = tch::no_grad(|| -> Result<(Tensor, Tensor)> {
            let x_t = batched::forward_diffuse(&sched, &x0.detach(), &ts, &eps);
            let keep = vec![0; b];
            let vc = teacher.forward(&x_t, &ts, &ctx, &acts, &keep, &vec![false; b])?;
            let vu = teacher.forward(&x_t, &ts, &ctx, &acts, &keep, &vec![true; b])?;
            let v_real = batched::cfg_combine(&vc, &vu, config.cfg_weight);
            let v_fake = fake.forward(&x_t, &ts, &ctx, &acts, &keep, &vec![false; b])?;
            Ok((
                batched::predict_eps(&sched, &x_t, &v_real, &ts),
                batched::predict_eps(&sched, &x_t, &v_fake, &ts),
            ))
        })?;
        let grad = (&eps_real - &eps_fake).detach();
        let norm = grad.abs().mean(Kind::Float).clamp_min(1e-6);
        // d(loss)/d(x0) equals grad / norm, so descent follows eps_fake - eps_real.
        let target = (&x0 - &grad / &norm).detach();
        let g_loss = (&x0 - target).square().sum(Kind::Float) * 0.5 / b as f64;
        let g_val = g_loss.double_value(&[]);
        check_finite(g_val, step)?;
        opt_g.backward_step_clip_norm(&g_loss, 1.0);

        // Fake-score step on fresh generator samples.
        let mut f_val = 0.0;
        for _ in 0..config.fake_score_updates.max(1) {
            let x0 = tch::no_grad(|| generate(&gen, &noise, &ctx, &acts, b))?;
            let ts: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
            let eps = randn(&mut rng, &latent_shape(b as i64));
            let x_t = batched::forward_diffuse(&sched, &x0, &ts, &eps);
            let target = batched::velocity_target(&sched, &x0, &eps, &ts);
            let v = fake.forward(&x_t, &ts, &ctx, &acts, &vec![0; b], &vec![false; b])?;
            let f_loss = (v - target).square().mean(Kind::Float);
            f_val = f_loss.double_value(&[]);
            check_finite(f_val, step)?;
            opt_f.backward_step_clip_norm(&f_loss, 1.0);
        }
        if step % config.log_every.max(1) == 0 {
            log.losses.push((step, g_val));
            log::debug!("distill step {step} generator {g_val:.5} fake-score {f_val:.5}");
        }
        gen.step += 1;
    }
    gen.distilled = true;
    Ok((gen, log))
}
