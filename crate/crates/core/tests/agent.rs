use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tch::{Kind, Tensor};

use neurosim::agent::{
    categorical_entropy, gae, ppo_update, random_rollouts, train_agent, AgentConfig, ObsBuilder,
    Policy, PpoBatch, RandomPolicyConfig, StickyActions,
};
use neurosim::dataset::{Dataset, DatasetWriter, PolicyTag};
use neurosim::env::{render, Action, EnvConfig, NUM_ACTIONS};

/// Discounted return from each step, bootstrapped with the final value.
fn brute_force_returns(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| {
            let tail: f64 = rewards[t..]
                .iter()
                .enumerate()
                .map(|(k, r)| gamma.powi(k as i32) * r)
                .sum();
            tail + gamma.powi((rewards.len() - t) as i32) * bootstrap
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn gae_with_unit_lambda_is_return_minus_value(
        rv in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..40),
        bootstrap in -10.0f64..10.0,
        gamma in 0.5f64..1.0,
    ) {
        let rewards: Vec<f64> = rv.iter().map(|p| p.0).collect();
        let mut values: Vec<f64> = rv.iter().map(|p| p.1).collect();
        values.push(bootstrap);
        let adv = gae(&rewards, &values, gamma, 1.0).unwrap();
        for ((a, g), v) in adv.iter().zip(brute_force_returns(&rewards, bootstrap, gamma)).zip(&values) {
            prop_assert!((a - (g - v)).abs() <= 1e-9 * (1.0 + g.abs()), "{a} vs {}", g - v);
        }
    }
}

#[test]
fn gae_rejects_missing_bootstrap() {
    assert!(gae(&[1.0, 1.0], &[0.0, 0.0], 0.99, 0.95).is_err());
}

#[test]
fn uniform_policy_entropy_is_ln_8() {
    let h = categorical_entropy(&Tensor::zeros(
        [3, NUM_ACTIONS as i64],
        (Kind::Float, tch::Device::Cpu),
    ));
    for v in Vec::<f64>::try_from(h.to_kind(Kind::Double)).unwrap() {
        assert!((v - 8f64.ln()).abs() < 1e-6, "{v}");
    }
}

#[test]
fn on_policy_batch_with_zero_advantage_has_zero_policy_loss() {
    let config = AgentConfig {
        epochs_per_iter: 1,
        minibatch: 16,
        ..Default::default()
    };
    let policy = Policy::new(&config);
    let mut state = EnvConfig::new("crossroads").reset(1).unwrap();
    let mut builder = ObsBuilder::default();
    let mut obs = Vec::new();
    for a in [
        Action::Forward,
        Action::TurnLeft,
        Action::Fire,
        Action::Noop,
    ]
    .into_iter()
    .cycle()
    .take(16)
    {
        obs.push(builder.observe(&state, &render(&state)));
        builder.push_action(a);
        state.step_mut(a);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let acts = policy.act(&obs.iter().collect::<Vec<_>>(), &mut rng);
    let batch = PpoBatch {
        obs,
        actions: acts.iter().map(|a| a.0).collect(),
        old_logprobs: acts.iter().map(|a| a.1).collect(),
        advantages: vec![0.0; 16],
        returns: acts.iter().map(|a| a.2).collect(),
    };
    let mut opt = policy.optimizer().unwrap();
    let stats = ppo_update(&policy, &mut opt, &batch, &config, &mut rng, 0).unwrap();
    assert_eq!(stats.policy_loss, 0.0);
    assert_eq!(stats.clip_fraction, 0.0);
    assert!(stats.value_loss < 1e-8, "{}", stats.value_loss);
}

#[test]
fn one_iteration_records_every_frame() {
    let dir = tempfile::tempdir().unwrap();
    let config = AgentConfig {
        n_envs: 8,
        rollout_len: 512,
        total_env_steps: 4096,
        epochs_per_iter: 1,
        minibatch: 256,
        ..Default::default()
    };
    let mut writer = DatasetWriter::create(dir.path()).unwrap();
    let (_, log) = train_agent(&config, Some(&mut writer), None).unwrap();
    drop(writer);
    assert_eq!(log.env_steps, 4096);
    assert_eq!(log.records_written, 4096);

    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.total_frames(), 4096);
    for entry in &ds.entries {
        let t = ds.load(entry).unwrap();
        assert!(matches!(t.meta.policy_tag, PolicyTag::Agent { .. }));
        for chunk in t.actions.chunks(4) {
            assert!(
                chunk.iter().all(|a| *a == chunk[0]),
                "action repeat broken in episode {}",
                t.meta.episode_id
            );
        }
        t.verify_replay().unwrap();
    }
}

/// Expected count of each action over episodes of the given decision counts,
/// when every decision repeats the previous one with probability `rho` and
/// otherwise draws uniformly; the chain starts from noop.
fn sticky_expected_counts(episode_decisions: &[usize], rho: f64) -> [f64; NUM_ACTIONS] {
    let u = 1.0 / NUM_ACTIONS as f64;
    let mut out = [0.0; NUM_ACTIONS];
    for &n in episode_decisions {
        let mut p = [0.0; NUM_ACTIONS];
        p[0] = 1.0;
        for _ in 0..n {
            for (q, o) in p.iter_mut().zip(out.iter_mut()) {
                *q = rho * *q + (1.0 - rho) * u;
                *o += *q;
            }
        }
    }
    out
}

#[test]
fn random_policy_histogram_matches_sticky_marginal() {
    let config = RandomPolicyConfig {
        action_repeat: 1,
        ..Default::default()
    };
    let rho = config.sticky_prob;
    let trajs = random_rollouts(100_000, 5, &config).unwrap();
    let lens: Vec<usize> = trajs.iter().map(|t| t.len()).collect();
    assert_eq!(lens.iter().sum::<usize>(), 100_000);
    let mut counts = [0.0f64; NUM_ACTIONS];
    for t in &trajs {
        assert_eq!(t.meta.policy_tag, PolicyTag::Random);
        for a in &t.actions {
            counts[a.id() as usize] += 1.0;
        }
    }
    let expected = sticky_expected_counts(&lens, rho);
    // Sticky repetition correlates neighbouring decisions, inflating count
    // variance by (1 + rho) / (1 - rho).
    let inflation = (1.0 + rho) / (1.0 - rho);
    let n = 100_000.0;
    let mut chi2 = 0.0;
    for a in 0..NUM_ACTIONS {
        let p = expected[a] / n;
        let sigma = (n * p * (1.0 - p) * inflation).sqrt();
        assert!(
            (counts[a] - expected[a]).abs() <= 3.0 * sigma,
            "action {a}: {} vs {:.1} (sigma {sigma:.1})",
            counts[a],
            expected[a]
        );
        chi2 += (counts[a] - expected[a]).powi(2) / (expected[a] * inflation);
    }
    // 99.9th percentile of chi-square with 7 degrees of freedom.
    assert!(chi2 < 24.32, "chi2 {chi2:.2}");
}

#[test]
fn sticky_decisions_repeat_at_the_configured_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = StickyActions::new(0.3, 1);
    let mut prev = Action::Noop;
    let (mut eligible, mut kept) = (0, 0);
    for i in 0..50_000 {
        let proposal = if i % 2 == 0 {
            Action::Forward
        } else {
            Action::Fire
        };
        let chosen = s.decide(proposal, &mut rng);
        assert_eq!(s.next_frame_action(), chosen);
        if proposal != prev {
            eligible += 1;
            kept += usize::from(chosen == prev);
        }
        prev = chosen;
    }
    let rate = kept as f64 / eligible as f64;
    assert!((rate - 0.3).abs() < 0.01, "{rate}");
}

#[test]
fn random_rollouts_are_reproducible() {
    let c = RandomPolicyConfig::default();
    assert_eq!(
        random_rollouts(900, 4, &c).unwrap(),
        random_rollouts(900, 4, &c).unwrap()
    );
    assert_ne!(
        random_rollouts(900, 4, &c).unwrap(),
        random_rollouts(900, 5, &c).unwrap()
    );
    assert!(random_rollouts(0, 4, &c).unwrap().is_empty());
}
