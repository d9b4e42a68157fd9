use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use neurosim::agent::{random_rollouts, RandomPolicyConfig};
use neurosim::autoencoder::{Codec, CodecConfig};
use neurosim::diffusion::{Denoiser, DenoiserConfig, SamplerConfig};
use neurosim::eval::human::{make_human_eval_pairs, read_ratings, score_ratings, Side};
use neurosim::eval::EvalSet;
use neurosim_server::client::{fetch_health, random_key_script, Client};
use neurosim_server::engine::{Engine, Worker};
use neurosim_server::protocol::{Mode, ServerMessage};
use neurosim_server::server::{start, RunningServer, ServeConfig, RATINGS_FILE};

fn small_models() -> (Codec, Denoiser) {
    let codec = Codec::new(CodecConfig {
        widths: [8, 8, 8],
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let config = DenoiserConfig {
        context_len: 4,
        widths: [16, 16, 16],
        action_embed_dim: 16,
        time_embed_dim: 16,
        seed: 4,
        ..Default::default()
    };
    let denoiser = Denoiser::new(config, codec.hash()).unwrap();
    (codec, denoiser)
}

fn sampler() -> SamplerConfig {
    SamplerConfig {
        num_steps: 1,
        ..Default::default()
    }
}

async fn server(rate_dir: Option<std::path::PathBuf>) -> RunningServer {
    let (worker, info) = Worker::spawn(|| {
        let (c, d) = small_models();
        Engine::new(c, d, sampler())
    })
    .unwrap();
    let config = ServeConfig {
        port: 0,
        tick_hz: 200.0,
        rate_dir,
        ..Default::default()
    };
    start(config, worker, info).await.unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_session_has_gapless_sequence_numbers() {
    let srv = server(None).await;
    let mut c = Client::connect(&srv.ws_url()).await.unwrap();
    let welcome = c.hello(Mode::Play).await.unwrap();
    assert!(matches!(welcome.body, ServerMessage::Welcome { .. }));
    let script = random_key_script(50, 120, 1);
    assert_eq!(script.len(), 100);
    let (frames, other) = c.play(7, None, &script, 120).await.unwrap();
    assert!(other.is_empty(), "{other:?}");
    assert_eq!(frames.len(), 120);
    for (k, f) in frames.iter().enumerate() {
        assert_eq!(f.frame, k as u64);
        assert_eq!(f.tick, k as u64);
        assert_eq!(f.pixels.len(), 64 * 64 * 3);
    }
    assert!(frames.windows(2).all(|w| w[1].seq == w[0].seq + 1));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn identical_seeds_and_timelines_give_identical_streams() {
    let srv = server(None).await;
    let script = random_key_script(20, 40, 2);
    let mut streams = Vec::new();
    for _ in 0..2 {
        let mut c = Client::connect(&srv.ws_url()).await.unwrap();
        c.hello(Mode::Play).await.unwrap();
        let (frames, _) = c.play(11, Some("pillars"), &script, 40).await.unwrap();
        streams.push(frames.into_iter().map(|f| f.pixels).collect::<Vec<_>>());
        c.close().await.unwrap();
    }
    assert_eq!(streams[0], streams[1]);
    let mut c = Client::connect(&srv.ws_url()).await.unwrap();
    c.hello(Mode::Play).await.unwrap();
    let (other, _) = c.play(12, Some("pillars"), &script, 40).await.unwrap();
    assert_ne!(
        other.into_iter().map(|f| f.pixels).collect::<Vec<_>>(),
        streams[0]
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_messages_get_errors_and_keep_the_session() {
    let srv = server(None).await;
    let mut c = Client::connect(&srv.ws_url()).await.unwrap();
    c.send_json(json!({"type": "teleport"})).await.unwrap();
    let e = c.recv().await.unwrap();
    assert!(
        matches!(&e.body, ServerMessage::Error { code, .. } if code == "bad_type"),
        "{e:?}"
    );
    c.send_text("not json").await.unwrap();
    let e2 = c.recv().await.unwrap();
    assert!(matches!(&e2.body, ServerMessage::Error { code, .. } if code == "bad_json"));
    assert_eq!(e2.seq, e.seq + 1);
    let (frames, _) = c.play(1, None, &[], 5).await.unwrap();
    assert_eq!(frames.len(), 5);
    assert!(frames[0].seq > e2.seq);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_reports_checkpoint_hashes() {
    let srv = server(None).await;
    let h = fetch_health(srv.addr).await.unwrap();
    assert_eq!(h.models, srv.info);
    let (codec, denoiser) = small_models();
    assert_eq!(h.models.codec_hash, codec.hash());
    assert_eq!(h.models.denoiser_hash, denoiser.hash());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn coin_flip_raters_score_at_chance_through_the_server() {
    let dir = tempfile::tempdir().unwrap();
    let (codec, denoiser) = small_models();
    let trajs = random_rollouts(
        3000,
        9,
        &RandomPolicyConfig {
            first_episode_id: 500,
            ..Default::default()
        },
    )
    .unwrap();
    let set = EvalSet::new(&codec, trajs).unwrap();
    let (manifest, key) = make_human_eval_pairs(
        &codec,
        &denoiser,
        &set,
        &[4, 8],
        200,
        &sampler(),
        1,
        dir.path(),
    )
    .unwrap();
    assert_eq!(manifest.pairs.len(), 200);

    let srv = server(Some(dir.path().to_path_buf())).await;
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut c = Client::connect(&srv.ws_url()).await.unwrap();
    let sent = c
        .rate_all(|_| {
            if rng.random_bool(0.5) {
                Side::Left
            } else {
                Side::Right
            }
        })
        .await
        .unwrap();
    assert_eq!(sent.len(), 200);
    c.close().await.unwrap();
    let logged = read_ratings(&dir.path().join(RATINGS_FILE)).unwrap();
    assert_eq!(logged, sent);
    let ids: BTreeSet<_> = logged.iter().map(|r| &r.pair_id).collect();
    assert_eq!(ids.len(), 200);
    let score = score_ratings(&manifest, &key, &logged).unwrap();
    assert_eq!(score.n, 200);
    assert!(score.ci_low <= 0.5 && 0.5 <= score.ci_high, "{score:?}");
}
