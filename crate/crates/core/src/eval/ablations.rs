//! Ablations: sampling steps, context length, noise augmentation, data
//! policy and dataset size. Trained models can be cached on disk, keyed by
//! configuration, codec and corpus.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{psnr, summarize, Summary};
use super::protocols::{
    eval_autoregressive, eval_teacher_forced, AutoregressiveReport, Difficulty, EvalSet,
};
use super::report::Table;
use crate::autoencoder::Codec;
use crate::checkpoint::{config_hash, LoadOptions};
use crate::diffusion::{
    train_denoiser_with, Denoiser, DenoiserConfig, LatentCorpus, SamplerConfig, TrainOptions,
};
use crate::error::Result;
use crate::simulation::{decode_sequence, teacher_forced_latents};

/// Where trained ablation models are kept between runs.
#[derive(Debug, Clone, Default)]
pub struct ModelCache {
    pub dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct CacheKey<'a> {
    config: &'a DenoiserConfig,
    codec_hash: &'a str,
    frames: usize,
    episodes: Vec<u64>,
    eval_every: usize,
}

/// Held-out teacher-forced PSNR measured during training.
pub type Curve = Vec<(usize, f64)>;

impl ModelCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ModelCache {
            dir: Some(dir.into()),
        }
    }

    fn key(
        &self,
        corpus: &LatentCorpus,
        codec_hash: &str,
        config: &DenoiserConfig,
        eval_every: usize,
    ) -> String {
        config_hash(&CacheKey {
            config,
            codec_hash,
            frames: corpus.frames(),
            episodes: corpus.episodes.iter().map(|e| e.episode_id).collect(),
            eval_every,
        })
    }

    /// Trains (or loads) a denoiser, optionally tracking a held-out curve.
    pub fn train(
        &self,
        label: &str,
        corpus: &LatentCorpus,
        codec: &Codec,
        config: &DenoiserConfig,
        curve_eval: Option<(&EvalSet, &[(usize, usize)], usize)>,
    ) -> Result<(Denoiser, Curve)> {
        let codec_hash = codec.hash();
        let eval_every = curve_eval.map(|c| c.2).unwrap_or(0);
        let key = self.key(corpus, &codec_hash, config, eval_every);
        let paths = self.dir.as_ref().map(|d| {
            (
                d.join(format!("{label}-{key}.ckpt")),
                d.join(format!("{label}-{key}.curve.json")),
            )
        });
        if let Some((ckpt, curve_path)) = &paths {
            if ckpt.exists() && (eval_every == 0 || curve_path.exists()) {
                let model = Denoiser::load(ckpt, Some(&codec_hash), LoadOptions::default())?;
                let curve = if eval_every > 0 {
                    serde_json::from_slice(&std::fs::read(curve_path)?)?
                } else {
                    Vec::new()
                };
                log::info!("loaded cached model {label} ({key})");
                return Ok((model, curve));
            }
        }
        let started = std::time::Instant::now();
        let mut curve = Vec::new();
        let opts = TrainOptions {
            eval_every,
            ..Default::default()
        };
        let (model, _) = train_denoiser_with(corpus, &codec_hash, config, &opts, |step, m| {
            if let Some((set, windows, _)) = curve_eval {
                let z =
                    teacher_forced_latents(&set.corpus, windows, m, &SamplerConfig::default(), 0)?;
                let frames = decode_sequence(codec, &z.unsqueeze(1))?;
                let p: Vec<f64> = windows
                    .iter()
                    .zip(&frames)
                    .map(|(&w, f)| psnr(&f[0], set.frame(w)))
                    .collect::<Result<_>>()?;
                let mean = summarize(&p).mean;
                log::info!("{label} step {step} held-out PSNR {mean:.3}");
                curve.push((step, mean));
            }
            Ok(())
        })?;
        log::info!("trained {label} in {:.0}s", started.elapsed().as_secs_f64());
        if let Some((ckpt, curve_path)) = &paths {
            model.save(ckpt)?;
            if eval_every > 0 {
                std::fs::write(curve_path, serde_json::to_vec(&curve)?)?;
            }
        }
        Ok((model, curve))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepsRow {
    pub label: String,
    pub steps: usize,
    pub psnr: Summary,
    pub psnr_median: f64,
    pub pdist: Summary,
}

fn fmt(s: &Summary) -> String {
    format!("{:.3} ± {:.3}", s.mean, s.stderr)
}

/// Teacher-forced quality per number of sampling steps, plus an optional
/// distilled one-step row labelled `D`.
pub fn ablate_sampling_steps(
    codec: &Codec,
    denoiser: &Denoiser,
    distilled: Option<&Denoiser>,
    set: &EvalSet,
    windows: &[(usize, usize)],
    steps: &[usize],
    base: &SamplerConfig,
    seed: u64,
) -> Result<(Table, Vec<StepsRow>)> {
    let mut rows = Vec::new();
    let mut run = |label: String, model: &Denoiser, sampler: SamplerConfig| -> Result<()> {
        let r = eval_teacher_forced(codec, model, set, windows, &sampler, seed, None)?;
        rows.push(StepsRow {
            label,
            steps: sampler.num_steps,
            psnr: r.psnr.summary(),
            psnr_median: r.psnr.median(),
            pdist: r.pdist.summary(),
        });
        Ok(())
    };
    for &s in steps {
        run(
            s.to_string(),
            denoiser,
            SamplerConfig {
                num_steps: s,
                ..*base
            },
        )?;
    }
    if let Some(d) = distilled {
        run("D".into(), d, d.default_sampler())?;
    }
    let mut table = Table::new("sampling_steps", &["steps", "psnr", "psnr_median", "pdist"]);
    for r in &rows {
        table.push(vec![
            r.label.clone(),
            fmt(&r.psnr),
            format!("{:.3}", r.psnr_median),
            fmt(&r.pdist),
        ]);
    }
    Ok((table, rows))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextRow {
    pub context_len: usize,
    pub psnr: Summary,
    pub pdist: Summary,
}

/// One short-budget model per context length, sharing codec and data.
pub fn ablate_context_lengths(
    ns: &[usize],
    train: &LatentCorpus,
    codec: &Codec,
    base: &DenoiserConfig,
    set: &EvalSet,
    windows: &[(usize, usize)],
    sampler: &SamplerConfig,
    seed: u64,
    cache: &ModelCache,
) -> Result<(Table, Vec<ContextRow>)> {
    let mut rows = Vec::new();
    for &n in ns {
        let config = DenoiserConfig {
            context_len: n,
            ..base.clone()
        };
        let (model, _) = cache.train(&format!("context{n}"), train, codec, &config, None)?;
        let r = eval_teacher_forced(
            codec,
            &model,
            set,
            windows,
            sampler,
            seed,
            Some(&train.episode_ids()),
        )?;
        rows.push(ContextRow {
            context_len: n,
            psnr: r.psnr.summary(),
            pdist: r.pdist.summary(),
        });
    }
    let mut table = Table::new("context_lengths", &["context_len", "psnr", "pdist"]);
    for r in &rows {
        table.push(vec![r.context_len.to_string(), fmt(&r.psnr), fmt(&r.pdist)]);
    }
    Ok((table, rows))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseAugResult {
    pub aug: AutoregressiveReport,
    pub no_aug: AutoregressiveReport,
    pub aug_config_hash: String,
    pub no_aug_config_hash: String,
}

/// Equal-budget models with and without context noise augmentation, rolled out.
pub fn ablate_noise_aug(
    train: &LatentCorpus,
    codec: &Codec,
    base: &DenoiserConfig,
    set: &EvalSet,
    windows: &[(usize, usize)],
    steps: usize,
    sampler: &SamplerConfig,
    seed: u64,
    cache: &ModelCache,
) -> Result<NoiseAugResult> {
    let aug_cfg = DenoiserConfig {
        noise_augmentation: true,
        ..base.clone()
    };
    let no_cfg = DenoiserConfig {
        noise_augmentation: false,
        ..base.clone()
    };
    let (aug_model, _) = cache.train("aug", train, codec, &aug_cfg, None)?;
    let (no_model, _) = cache.train("noaug", train, codec, &no_cfg, None)?;
    Ok(NoiseAugResult {
        aug: eval_autoregressive(codec, &aug_model, set, windows, steps, sampler, seed)?,
        no_aug: eval_autoregressive(codec, &no_model, set, windows, steps, sampler, seed)?,
        aug_config_hash: config_hash(&aug_cfg),
        no_aug_config_hash: config_hash(&no_cfg),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyRow {
    pub bucket: String,
    pub policy: String,
    pub n: usize,
    pub first_frame: Summary,
    pub horizon: Summary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataPolicyResult {
    pub rows: Vec<PolicyRow>,
    /// Overall mean PSNR difference (agent - random) on the first frame.
    pub first_frame_gap: f64,
    /// Overall mean PSNR difference at the last rollout step.
    pub horizon_gap: f64,
    /// Per-bucket difference at the last rollout step.
    pub bucket_gaps: Vec<(String, f64)>,
    /// Bucket of every window, by distance from spawn at the clip's last frame.
    pub buckets: Vec<Difficulty>,
}

/// Agent-data versus random-data models, first frame and `horizon` frames out.
pub fn ablate_data_policy(
    agent: &LatentCorpus,
    random: &LatentCorpus,
    codec: &Codec,
    base: &DenoiserConfig,
    set: &EvalSet,
    windows: &[(usize, usize)],
    horizon: usize,
    sampler: &SamplerConfig,
    seed: u64,
    cache: &ModelCache,
) -> Result<(Table, DataPolicyResult)> {
    let (agent_model, _) = cache.train("agentdata", agent, codec, base, None)?;
    let (random_model, _) = cache.train("randomdata", random, codec, base, None)?;
    let a = eval_autoregressive(codec, &agent_model, set, windows, horizon, sampler, seed)?;
    let r = eval_autoregressive(codec, &random_model, set, windows, horizon, sampler, seed)?;
    let buckets: Vec<Difficulty> = windows
        .iter()
        .map(|&(e, i)| Difficulty::of_distance(set.distance_from_spawn((e, i + horizon - 1))))
        .collect();
    let last = horizon - 1;
    let mut rows = Vec::new();
    let mut bucket_gaps = Vec::new();
    for d in Difficulty::ALL {
        let idx: Vec<usize> = (0..windows.len()).filter(|&k| buckets[k] == d).collect();
        let pick = |rep: &AutoregressiveReport, step: usize| {
            summarize(
                &idx.iter()
                    .map(|&k| rep.psnr_items[k][step])
                    .collect::<Vec<_>>(),
            )
        };
        let (af, ah) = (pick(&a, 0), pick(&a, last));
        let (rf, rh) = (pick(&r, 0), pick(&r, last));
        bucket_gaps.push((d.name().to_string(), ah.mean - rh.mean));
        rows.push(PolicyRow {
            bucket: d.name().into(),
            policy: "agent".into(),
            n: idx.len(),
            first_frame: af,
            horizon: ah,
        });
        rows.push(PolicyRow {
            bucket: d.name().into(),
            policy: "random".into(),
            n: idx.len(),
            first_frame: rf,
            horizon: rh,
        });
    }
    let mut table = Table::new(
        "data_policy",
        &[
            "difficulty",
            "policy",
            "n",
            "psnr_first_frame",
            "psnr_horizon",
        ],
    );
    for row in &rows {
        table.push(vec![
            row.bucket.clone(),
            row.policy.clone(),
            row.n.to_string(),
            fmt(&row.first_frame),
            fmt(&row.horizon),
        ]);
    }
    let result = DataPolicyResult {
        first_frame_gap: a.psnr[0].mean - r.psnr[0].mean,
        horizon_gap: a.psnr[last].mean - r.psnr[last].mean,
        rows,
        bucket_gaps,
        buckets,
    };
    Ok((table, result))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeCurve {
    pub frames: usize,
    pub curve: Curve,
    pub peak_step: usize,
    pub final_psnr: f64,
}

/// One run per dataset size, tracking held-out PSNR during training.
pub fn ablate_dataset_size(
    sizes: &[usize],
    corpus: &LatentCorpus,
    codec: &Codec,
    base: &DenoiserConfig,
    set: &EvalSet,
    windows: &[(usize, usize)],
    eval_every: usize,
    cache: &ModelCache,
) -> Result<Vec<SizeCurve>> {
    let mut out = Vec::new();
    for &size in sizes {
        let sub = corpus.take_frames(size);
        let (_, curve) = cache.train(
            &format!("size{size}"),
            &sub,
            codec,
            base,
            Some((set, windows, eval_every)),
        )?;
        let (peak_step, _) =
            curve.iter().copied().fold(
                (0, f64::MIN),
                |best, (s, p)| if p > best.1 { (s, p) } else { best },
            );
        let final_psnr = curve.last().map(|c| c.1).unwrap_or(f64::NAN);
        out.push(SizeCurve {
            frames: sub.frames(),
            curve,
            peak_step,
            final_psnr,
        });
    }
    Ok(out)
}

/// Path helper for report outputs.
pub fn report_path(dir: &Path, name: &str, ext: &str) -> PathBuf {
    dir.join(format!("{name}.{ext}"))
}
