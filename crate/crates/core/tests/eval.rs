use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use neurosim::agent::{random_rollouts, RandomPolicyConfig};
use neurosim::autoencoder::{Codec, CodecConfig};
use neurosim::dataset::{read_frame_stream, record_actions, PolicyTag};
use neurosim::diffusion::{Denoiser, DenoiserConfig, SamplerConfig};
use neurosim::env::{Action, EnvConfig, GameMap};
use neurosim::eval::human::{make_human_eval_pairs, Side};
use neurosim::eval::{
    difficulty_split, eval_autoregressive, eval_teacher_forced, step_metrics, Difficulty, EvalSet,
    PDist, EVAL_MIN_INDEX, PSNR_CAP,
};

fn models() -> (Codec, Denoiser) {
    let codec = Codec::new(CodecConfig {
        widths: [8, 8, 8],
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let config = DenoiserConfig {
        context_len: 4,
        widths: [16, 16, 16],
        action_embed_dim: 16,
        time_embed_dim: 16,
        ..Default::default()
    };
    let denoiser = Denoiser::new(config, codec.hash()).unwrap();
    (codec, denoiser)
}

fn held_out(codec: &Codec) -> EvalSet {
    let trajs = random_rollouts(
        1500,
        21,
        &RandomPolicyConfig {
            first_episode_id: 9000,
            ..Default::default()
        },
    )
    .unwrap();
    EvalSet::new(codec, trajs).unwrap()
}

fn sampler() -> SamplerConfig {
    SamplerConfig {
        num_steps: 2,
        ..Default::default()
    }
}

#[test]
fn difficulty_boundaries_are_half_open() {
    let cases = [
        (0, Difficulty::Easy),
        (5, Difficulty::Easy),
        (6, Difficulty::Medium),
        (14, Difficulty::Medium),
        (15, Difficulty::Hard),
    ];
    for (d, want) in cases {
        assert_eq!(Difficulty::of_distance(d), want, "distance {d}");
    }
}

#[test]
fn trajectory_ending_at_spawn_is_easy() {
    let t = record_actions(
        &EnvConfig::new("pillars"),
        1,
        3,
        PolicyTag::Human,
        &[Action::Noop; 12],
    )
    .unwrap();
    assert_eq!(
        difficulty_split(&[t]).unwrap()[Difficulty::Easy as usize],
        vec![0]
    );
}

#[test]
fn difficulty_buckets_partition_the_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let maps: Vec<&str> = GameMap::shipped_names().collect();
    let trajs: Vec<_> = (0..200)
        .map(|k| {
            let env = EnvConfig {
                map: maps[k % maps.len()].to_string(),
                randomize_start: k % 2 == 0,
            };
            let len = rng.random_range(1..120);
            let actions: Vec<Action> = (0..len)
                .map(|_| Action::ALL[rng.random_range(0..8)])
                .collect();
            record_actions(&env, k as u64, k as u64, PolicyTag::Random, &actions).unwrap()
        })
        .collect();
    let buckets = difficulty_split(&trajs).unwrap();
    let mut seen = vec![0; trajs.len()];
    for (b, members) in buckets.iter().enumerate() {
        for &i in members {
            seen[i] += 1;
            let t = &trajs[i];
            let mut s = t.meta.env.reset(t.meta.seed).unwrap();
            for &a in &t.actions[..t.len() - 1] {
                s.step_mut(a);
            }
            let d = s
                .player_tile()
                .l1(GameMap::shipped(&t.meta.env.map).unwrap().spawn);
            let want = if d < 6 {
                0
            } else if d <= 14 {
                1
            } else {
                2
            };
            assert_eq!(b, want, "trajectory {i} at distance {d}");
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
}

#[test]
fn teacher_forced_report_is_sized_and_reproducible() {
    let (codec, denoiser) = models();
    let set = held_out(&codec);
    let windows = set.select_windows(24, 1, EVAL_MIN_INDEX, 3).unwrap();
    assert_eq!(windows.len(), 24);
    assert!(windows.iter().all(|w| w.1 >= EVAL_MIN_INDEX));
    let a = eval_teacher_forced(&codec, &denoiser, &set, &windows, &sampler(), 5, None).unwrap();
    assert_eq!(a.psnr.n, 24);
    assert_eq!(a.pdist.n, 24);
    assert_eq!(a.copy_last_psnr.n, 24);
    let b = eval_teacher_forced(&codec, &denoiser, &set, &windows, &sampler(), 5, None).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn overlapping_train_episodes_abort_evaluation() {
    let (codec, denoiser) = models();
    let set = held_out(&codec);
    let windows = set.select_windows(4, 1, EVAL_MIN_INDEX, 3).unwrap();
    let leaked: BTreeSet<u64> = [1, 2, *set.episode_ids().iter().next().unwrap()].into();
    assert!(eval_teacher_forced(
        &codec,
        &denoiser,
        &set,
        &windows,
        &sampler(),
        5,
        Some(&leaked)
    )
    .is_err());
    let clean: BTreeSet<u64> = [1, 2, 3].into();
    assert!(eval_teacher_forced(
        &codec,
        &denoiser,
        &set,
        &windows,
        &sampler(),
        5,
        Some(&clean)
    )
    .is_ok());
}

#[test]
fn autoregressive_curves_have_one_entry_per_step() {
    let (codec, denoiser) = models();
    let set = held_out(&codec);
    let windows = set.select_windows(3, 6, EVAL_MIN_INDEX, 1).unwrap();
    let r = eval_autoregressive(&codec, &denoiser, &set, &windows, 6, &sampler(), 2).unwrap();
    assert_eq!(r.steps(), 6);
    assert_eq!(r.pdist.len(), 6);
    assert!(r.psnr_items.iter().all(|v| v.len() == 6));
    assert_eq!(r.psnr_items.len(), 3);
}

#[test]
fn ground_truth_against_itself_is_perfect_at_every_step() {
    let trajs = random_rollouts(64, 4, &RandomPolicyConfig::default()).unwrap();
    let frames: Vec<_> = trajs[0].frames.iter().take(64).collect();
    let (p, d) = step_metrics(&PDist::default(), &frames, &frames).unwrap();
    assert_eq!(p.len(), frames.len());
    assert!(p.iter().all(|&v| v == PSNR_CAP));
    assert!(d.iter().all(|&v| v == 0.0));
}

#[test]
fn human_eval_pairs_share_actions_and_hide_the_real_clip() {
    let (codec, denoiser) = models();
    let set = held_out(&codec);
    let dir = tempfile::tempdir().unwrap();
    let (manifest, key) = make_human_eval_pairs(
        &codec,
        &denoiser,
        &set,
        &[4, 6],
        10,
        &sampler(),
        3,
        dir.path(),
    )
    .unwrap();
    assert_eq!(manifest.pairs.len(), 10);
    let mut sides = BTreeSet::new();
    for p in &manifest.pairs {
        let (left, la) = read_frame_stream(&dir.path().join(&p.left)).unwrap();
        let (right, ra) = read_frame_stream(&dir.path().join(&p.right)).unwrap();
        assert_eq!(la, ra);
        assert_eq!(left.len(), p.clip_len);
        assert_eq!(right.len(), p.clip_len);
        let side = key.real_side(p).unwrap();
        sides.insert(side.name());
        let real = if side == Side::Left { &left } else { &right };
        let found = set
            .trajectories
            .iter()
            .any(|t| t.frames.windows(p.clip_len).any(|w| w == &real[..]));
        assert!(
            found,
            "real clip of {} is not a held-out segment",
            p.pair_id
        );
        assert!(!p.sealed_truth.contains(side.name()));
    }
    assert_eq!(sides.len(), 2);
}
