use std::sync::OnceLock;

use neurosim::agent::{random_rollouts, RandomPolicyConfig};
use neurosim::autoencoder::{train_autoencoder, Codec, CodecConfig, LATENT_LEN};
use neurosim::checkpoint::LoadOptions;
use neurosim::dataset::Trajectory;
use neurosim::diffusion::{
    distill, train_denoiser, ContextBuffer, Denoiser, DenoiserConfig, DistillConfig, LatentCorpus,
    SamplerConfig,
};
use neurosim::env::{Action, Frame};
use neurosim::eval::{median, psnr};
use neurosim::simulation::teacher_forced_latents;
use tch::Tensor;

fn tiny(steps: usize) -> DenoiserConfig {
    DenoiserConfig {
        context_len: 4,
        widths: [16, 16, 32],
        action_embed_dim: 16,
        time_embed_dim: 16,
        batch_size: 8,
        train_steps: steps,
        log_every: 1,
        ..Default::default()
    }
}

struct Fixture {
    trajectories: Vec<Trajectory>,
    codec: Codec,
    corpus: LatentCorpus,
}

/// Trains the shared codec once per test binary; each test loads its own copy.
fn fixture() -> Fixture {
    static CODEC: OnceLock<(tempfile::TempDir, std::path::PathBuf)> = OnceLock::new();
    let trajectories = random_rollouts(48, 11, &RandomPolicyConfig::default()).unwrap();
    let (_, path) = CODEC.get_or_init(|| {
        let frames: Vec<&Frame> = trajectories.iter().flat_map(|t| &t.frames).collect();
        let config = CodecConfig {
            widths: [16, 32, 64],
            train_steps: 1500,
            batch_size: 16,
            learning_rate: 3e-3,
            ..Default::default()
        };
        let (codec, _) = train_autoencoder(&frames, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codec.ckpt");
        codec.save(&path).unwrap();
        (dir, path)
    });
    let codec = Codec::load(path, LoadOptions::default()).unwrap();
    let corpus = LatentCorpus::encode(&codec, &trajectories).unwrap();
    Fixture {
        trajectories,
        codec,
        corpus,
    }
}

fn context(f: &Fixture, n: usize) -> (Tensor, Tensor) {
    let (ctx, acts, _) = f.corpus.gather(&[(0, 10), (0, 20)], n);
    (ctx, acts)
}

#[test]
fn output_shapes_and_determinism() {
    let f = &fixture();
    let (d, _) = train_denoiser(&f.corpus, &f.codec.hash(), &tiny(5)).unwrap();
    let (ctx, acts) = context(f, 4);
    let x = Tensor::randn([2, 4, 8, 8], (tch::Kind::Float, tch::Device::Cpu));
    let v = d
        .forward(&x, &[0.3, 0.6], &ctx, &acts, &[0, 3], &[false, false])
        .unwrap();
    assert_eq!(v.size(), vec![2, 4, 8, 8]);
    let again = d
        .forward(&x, &[0.3, 0.6], &ctx, &acts, &[0, 3], &[false, false])
        .unwrap();
    assert!(v.equal(&again));

    let buf = ContextBuffer::replicated(f.codec.encode(&f.trajectories[0].frames[0]).unwrap(), 4)
        .unwrap();
    let s = SamplerConfig::default();
    let a = d.sample_next_latent(&buf, &s, 9).unwrap();
    assert_eq!(a.values.len(), LATENT_LEN);
    assert_eq!(a, d.sample_next_latent(&buf, &s, 9).unwrap());
    assert_ne!(a, d.sample_next_latent(&buf, &s, 10).unwrap());
    let short = ContextBuffer::replicated(f.codec.encode(&f.trajectories[0].frames[0]).unwrap(), 3)
        .unwrap();
    assert!(d.sample_next_latent(&short, &s, 9).is_err());
    assert!(d
        .sample_next_latent(&buf, &SamplerConfig { num_steps: 0, ..s }, 9)
        .is_err());
}

#[test]
fn batch_items_do_not_depend_on_batch_composition() {
    let f = &fixture();
    let (d, _) = train_denoiser(&f.corpus, &f.codec.hash(), &tiny(5)).unwrap();
    let (ctx, acts) = context(f, 4);
    let s = SamplerConfig::default();
    let both = d.sample_batch(&ctx, &acts, &s, &[1, 2]).unwrap();
    let second = d
        .sample_batch(&ctx.narrow(0, 1, 1), &acts.narrow(0, 1, 1), &s, &[2])
        .unwrap();
    assert!(both.narrow(0, 1, 1).allclose(&second, 1e-5, 1e-6, false));
}

#[test]
fn dropped_context_is_ignored() {
    let f = &fixture();
    let (d, _) = train_denoiser(&f.corpus, &f.codec.hash(), &tiny(30)).unwrap();
    let (ctx, acts) = context(f, 4);
    let other = &ctx + Tensor::ones_like(&ctx) * 3.0;
    let x = Tensor::randn([2, 4, 8, 8], (tch::Kind::Float, tch::Device::Cpu));
    let run = |c: &Tensor, drop: bool| {
        d.forward(&x, &[0.5, 0.5], c, &acts, &[0, 0], &[drop, drop])
            .unwrap()
    };
    assert!(run(&ctx, true).equal(&run(&other, true)));
    assert!(!run(&ctx, false).equal(&run(&other, false)));
}

#[test]
fn initial_loss_matches_the_target_moment() {
    let f = &fixture();
    let (_, log) = train_denoiser(&f.corpus, &f.codec.hash(), &tiny(1)).unwrap();
    // E|v|^2 = E[ab] E|eps|^2 + E[1 - ab] E|x0|^2 for t ~ U(0, 1).
    let m2 = f.corpus.second_moment();
    let mean_ab = 1.0 - (1.0 - 1e-4) * 0.5;
    let moment = mean_ab + (1.0 - mean_ab) * m2;
    let first = log.losses[0].1;
    assert!(
        first > moment / 3.0 && first < moment * 3.0,
        "loss {first} vs moment {moment}"
    );
}

#[test]
fn overfits_a_few_windows() {
    let f = &fixture();
    let windows: Vec<(usize, usize)> = (0..8).map(|k| (0, 4 + 3 * k)).collect();
    let mut small = f.corpus.take_frames(f.corpus.episodes[0].len.min(30));
    small.episodes.truncate(1);
    let config = DenoiserConfig {
        learning_rate: 1e-3,
        noise_augmentation: false,
        cond_dropout_prob: 0.0,
        ..tiny(600)
    };
    let (d, _) = train_denoiser(&small, &f.codec.hash(), &config).unwrap();
    let sampler = SamplerConfig {
        num_steps: 8,
        cfg_weight: 1.0,
        inference_aug_level: 0.0,
    };
    let z = teacher_forced_latents(&small, &windows, &d, &sampler, 3).unwrap();
    let pred = f
        .codec
        .decode_batch(
            &neurosim::autoencoder::LatentFrame::unstack(
                &z,
                neurosim::autoencoder::Provenance::Generated,
            )
            .unwrap()
            .iter()
            .collect::<Vec<_>>(),
        )
        .unwrap();
    let p: Vec<f64> = windows
        .iter()
        .zip(&pred)
        .map(|(&(e, i), g)| psnr(g, &f.trajectories[e].frames[i]).unwrap())
        .collect();
    assert!(median(&p) >= 28.0, "median {:.2} dB", median(&p));
}

#[test]
fn checkpoint_refuses_a_foreign_codec() {
    let f = &fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.ckpt");
    let (d, _) = train_denoiser(&f.corpus, &f.codec.hash(), &tiny(3)).unwrap();
    d.save(&path).unwrap();
    let back = Denoiser::load(&path, Some(&f.codec.hash()), LoadOptions::default()).unwrap();
    assert_eq!(back.hash(), d.hash());
    assert!(Denoiser::load(&path, Some("0000000000000000"), LoadOptions::default()).is_err());
    assert!(Denoiser::load(&path, Some("0000000000000000"), LoadOptions { force: true }).is_ok());
}

#[test]
fn distillation_reads_but_never_writes_the_teacher() {
    let f = &fixture();
    let (teacher, _) = train_denoiser(&f.corpus, &f.codec.hash(), &tiny(10)).unwrap();
    let before = teacher.hash();
    let (student, _) = distill(
        &teacher,
        &f.corpus,
        &DistillConfig {
            steps: 3,
            batch_size: 4,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(teacher.hash(), before);
    assert!(student.distilled);
    assert_eq!(student.default_sampler().num_steps, 1);
    let buf = ContextBuffer::new(
        (0..4)
            .map(|i| f.codec.encode(&f.trajectories[0].frames[i]).unwrap())
            .collect(),
        vec![Action::Forward; 4],
    )
    .unwrap();
    let a = student
        .sample_next_latent(&buf, &student.default_sampler(), 1)
        .unwrap();
    let b = teacher
        .sample_next_latent(&buf, &SamplerConfig::default(), 1)
        .unwrap();
    assert_eq!(a.values.len(), b.values.len());
    assert_eq!(a.provenance, b.provenance);
}
