//! End-to-end acceptance run.
//!
//! Trains every model of the reference desk configuration inside a cached
//! working directory (`NEUROSIM_ACCEPTANCE_DIR`, default `target/acceptance`),
//! evaluates each criterion at its stated tolerance and prints one line per
//! criterion. The first run trains everything and takes hours on a CPU;
//! later runs reuse the stamped stage outputs.
//!
//! The process exits non-zero on a failed criterion only when
//! `NEUROSIM_ACCEPTANCE_STRICT=1`; otherwise the PASS/FAIL lines are the result.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use neurosim::agent::AgentConfig;
use neurosim::autoencoder::{Codec, CodecConfig};
use neurosim::diffusion::{
    augment_context, ddim_step, forward_diffuse, predict_x0, velocity_target, AugSpec,
    DenoiserConfig, DistillConfig, NoiseSchedule, SamplerConfig,
};
use neurosim::env::render::{HUD_Y, PAD_Y};
use neurosim::env::state::RewardLedger;
use neurosim::env::{render, Action, Frame, GameMap, GameState};
use neurosim::eval::{median, psnr, region_mse};
use neurosim_server::client::{fetch_health, random_key_script, Client, ReceivedFrame};
use neurosim_server::engine::{Engine, Worker};
use neurosim_server::pipeline::{EvalConfig, Pipeline, PipelineConfig};
use neurosim_server::protocol::Mode;
use neurosim_server::server::{start, ServeConfig};

type BoxError = Box<dyn std::error::Error + Send + Sync>;
type Outcome = Result<(bool, String), BoxError>;

fn workdir() -> PathBuf {
    std::env::var_os("NEUROSIM_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance")
        })
}

/// Reference desk configuration.
pub fn acceptance_config() -> PipelineConfig {
    let mut c = PipelineConfig {
        workdir: workdir(),
        random_frames: 200_000,
        eval_frames: 30_000,
        codec_train_frames: 20_000,
        agent: AgentConfig {
            total_env_steps: 200_000,
            ..Default::default()
        },
        codec: CodecConfig {
            widths: [32, 64, 128],
            train_steps: 6_000,
            finetune_steps: 1_500,
            ..Default::default()
        },
        denoiser: DenoiserConfig {
            widths: [32, 64, 64],
            batch_size: 32,
            train_steps: 30_000,
            ..Default::default()
        },
        distill: DistillConfig {
            steps: 2_000,
            ..Default::default()
        },
        sampler: SamplerConfig::default(),
        eval: EvalConfig {
            ablation_train_steps: 12_000,
            dataset_sizes: vec![10_000, 50_000, 200_000],
            dataset_size_train_steps: 12_000,
            dataset_size_eval_every: 1_000,
            ..Default::default()
        },
        ..Default::default()
    };
    c.set_seed(0);
    c
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0)
}

fn algebra() -> Outcome {
    let t0 = Instant::now();
    let s = NoiseSchedule::default();
    let spec = AugSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = 0;
    for _ in 0..1000 {
        let x0: Vec<f64> = (0..256).map(|_| rng.random_range(-3.0..3.0)).collect();
        let eps: Vec<f64> = (0..256).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t: f64 = rng.random();
        let x_t = forward_diffuse(&s, &x0, t, &eps)?;
        let v = velocity_target(&s, &x0, &eps, t)?;
        let all = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| rel_close(*x, *y));
        let ok_x0 = all(&predict_x0(&s, &x_t, &v, t)?, &x0);
        let ok_ddim = all(&ddim_step(&s, &x_t, &v, t, 0.0)?, &x0);
        let ok_t0 = all(&forward_diffuse(&s, &x0, 0.0, &eps)?, &x0);
        let ab1 = 1e-4f64;
        let end: Vec<f64> = x0
            .iter()
            .zip(&eps)
            .map(|(x, e)| ab1.sqrt() * x + (1.0 - ab1).sqrt() * e)
            .collect();
        let ok_t1 = all(&forward_diffuse(&s, &x0, 1.0, &eps)?, &end);
        let (same, b0) = augment_context(&spec, &x0, 0.0, &eps)?;
        let (_, b_mid) = augment_context(&spec, &x0, 0.35, &eps)?;
        let (_, b_top) = augment_context(&spec, &x0, 0.7, &eps)?;
        let ok_aug = same == x0 && b0 == 0 && b_mid == 5 && b_top == 9;
        if !(ok_x0 && ok_ddim && ok_t0 && ok_t1 && ok_aug) {
            failures += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    Ok((
        failures == 0 && secs < 60.0,
        format!("{failures} of 1000 draws outside 1e-6 relative tolerance, {secs:.1}s (< 60s)"),
    ))
}

fn env_determinism() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let maps: Vec<&str> = GameMap::shipped_names().collect();
    let play = |map: &str, seed: u64, actions: &[Action]| -> (Vec<Frame>, i64, RewardLedger) {
        let mut s = GameState::reset(GameMap::shipped(map).unwrap(), seed);
        let mut frames = vec![render(&s)];
        let mut total = 0i64;
        let mut ledger = RewardLedger::default();
        for &a in actions {
            let info = s.step_mut(a);
            total += info.reward as i64;
            ledger.accumulate(&info.ledger);
            frames.push(render(&s));
            if info.done {
                break;
            }
        }
        (frames, total, ledger)
    };
    let (mut bad_frames, mut bad_ledger) = (0, 0);
    for k in 0..100 {
        let seed: u64 = rng.random();
        let actions: Vec<Action> = (0..500)
            .map(|_| Action::ALL[rng.random_range(0..Action::ALL.len())])
            .collect();
        let map = maps[k % maps.len()];
        let (a, total_a, ledger_a) = play(map, seed, &actions);
        let (b, _, _) = play(map, seed, &actions);
        if a != b {
            bad_frames += 1;
        }
        if ledger_a.total() != total_a {
            bad_ledger += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    Ok((
        bad_frames == 0 && bad_ledger == 0 && secs < 120.0,
        format!("{bad_frames} frame mismatches, {bad_ledger} ledger mismatches over 100 replays, {secs:.1}s (< 120s)"),
    ))
}

fn codec_gate(p: &Pipeline) -> Outcome {
    let before = p.train_ae()?;
    let after = p.codec()?;
    let eval = p.eval_data()?.load_all()?;
    let frames: Vec<&Frame> = eval
        .iter()
        .flat_map(|t| &t.frames)
        .step_by(7)
        .take(2048)
        .collect();
    let measure = |c: &Codec| -> Result<(f64, f64), neurosim::Error> {
        let z = c.encode_batch(&frames)?;
        let r = c.decode_batch(&z.iter().collect::<Vec<_>>())?;
        let ps: Vec<f64> = frames
            .iter()
            .zip(&r)
            .map(|(a, b)| psnr(a, b))
            .collect::<Result<_, _>>()?;
        let hud: Vec<f64> = frames
            .iter()
            .zip(&r)
            .map(|(a, b)| region_mse(a, b, HUD_Y, PAD_Y))
            .collect::<Result<_, _>>()?;
        Ok((median(&ps), hud.iter().sum::<f64>() / hud.len() as f64))
    };
    let (p0, h0) = measure(&before)?;
    let (p1, h1) = measure(&after)?;
    let pass = p1 >= 30.0 && h1 <= h0 && p1 >= p0 - 0.1;
    Ok((pass, format!("held-out median PSNR {p0:.2} -> {p1:.2} dB (gate 30), HUD MSE {h0:.2} -> {h1:.2}, n {}", frames.len())))
}

fn quality_gate(p: &Pipeline) -> Outcome {
    let r = p.eval_teacher_forced()?;
    let (m, base) = (r.psnr.median(), r.copy_last_psnr.median());
    let steps = p.config.denoiser.train_steps;
    let pass = m >= base + 1.5 && steps <= 150_000 && r.psnr.n == 512;
    Ok((pass, format!("median PSNR {m:.2} dB vs copy-last {base:.2} dB (need +1.5), {} windows, {steps} steps", r.psnr.n)))
}

fn sampling_steps(p: &Pipeline) -> Outcome {
    let rows = p.ablate_sampling_steps(true)?;
    let at = |label: &str| {
        rows.iter()
            .find(|r| r.label == label)
            .map(|r| r.psnr.mean)
            .ok_or(format!("row {label} missing"))
    };
    let (s1, s4, s16) = (at("1")?, at("4")?, at("16")?);
    let pass = (s4 - s16).abs() <= 0.5 && s1 <= s4 - 1.0;
    let distilled = at("D")?;
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("{}:{:.2}", r.label, r.psnr.mean))
        .collect();
    Ok((
        pass,
        format!(
            "{} | 4 vs 16: {:.2} dB (<= 0.5), 1 vs 4: {:.2} dB (>= 1) | optional tier distilled > 1-step: {}",
            table.join(" "),
            (s4 - s16).abs(),
            s4 - s1,
            if distilled > s1 { "yes" } else { "no" }
        ),
    ))
}

fn noise_aug(p: &Pipeline) -> Outcome {
    let r = p.ablate_noise_aug()?;
    let steps = r.aug.steps();
    let separated = (19..steps).all(|k| r.no_aug.pdist[k].mean > r.aug.pdist[k].mean);
    let first_bad = (19..steps)
        .find(|&k| r.no_aug.pdist[k].mean <= r.aug.pdist[k].mean)
        .map(|k| k + 1);
    let aug_drop = r.aug.psnr[0].mean - r.aug.psnr[steps - 1].mean;
    let no_drop = r.no_aug.psnr[0].mean - r.no_aug.psnr[steps - 1].mean;
    let pass = steps == 64 && separated && aug_drop <= 6.0 && no_drop > 6.0;
    Ok((
        pass,
        format!(
            "pdist no-aug > aug from step 20: {} | step-1 -> step-64 PSNR drop: aug {aug_drop:.2} dB (<= 6), no-aug {no_drop:.2} dB (> 6) | {} rollouts",
            match first_bad {
                None => "yes".to_string(),
                Some(k) => format!("no (first violation at step {k})"),
            },
            r.aug.psnr[0].n
        ),
    ))
}

fn context_lengths(p: &Pipeline) -> Outcome {
    let rows = p.ablate_context_lengths()?;
    let at = |n: usize| {
        rows.iter()
            .find(|r| r.context_len == n)
            .map(|r| r.psnr.mean)
            .ok_or(format!("N={n} missing"))
    };
    let (g12, g816) = (at(2)? - at(1)?, at(16)? - at(8)?);
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("N={}:{:.2}", r.context_len, r.psnr.mean))
        .collect();
    Ok((
        g12 > g816,
        format!(
            "{} | gain 1->2 {g12:.3} dB vs 8->16 {g816:.3} dB",
            table.join(" ")
        ),
    ))
}

fn data_policy(p: &Pipeline) -> Outcome {
    let r = p.ablate_data_policy()?;
    let gap = |b: &str| {
        r.bucket_gaps
            .iter()
            .find(|(n, _)| n == b)
            .map(|g| g.1)
            .ok_or(format!("bucket {b} missing"))
    };
    let (easy, medium) = (gap("easy")?, gap("medium")?);
    let counts: Vec<String> = r
        .rows
        .iter()
        .filter(|row| row.policy == "agent")
        .map(|row| format!("{}={}", row.bucket, row.n))
        .collect();
    let pass = medium > easy && r.horizon_gap > r.first_frame_gap;
    Ok((
        pass,
        format!(
            "agent-random gap: medium {medium:.3} vs easy {easy:.3} dB; horizon {:.3} vs first frame {:.3} dB | windows {}",
            r.horizon_gap,
            r.first_frame_gap,
            counts.join(" ")
        ),
    ))
}

fn dataset_size(p: &Pipeline) -> Outcome {
    let curves = p.ablate_dataset_size()?;
    let (small, large) = (
        curves.first().ok_or("no curves")?,
        curves.last().ok_or("no curves")?,
    );
    let desc: Vec<String> = curves
        .iter()
        .map(|c| {
            format!(
                "{} frames: peak at {} ({:.2} dB final)",
                c.frames, c.peak_step, c.final_psnr
            )
        })
        .collect();
    Ok((small.peak_step < large.peak_step, desc.join("; ")))
}

fn serving(p: &Pipeline) -> Outcome {
    p.train_denoiser()?;
    let dir = p.dir.models();
    let sampler = p.config.sampler;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    rt.block_on(async move {
        let (worker, info) = Worker::spawn(move || Engine::load(&dir, Some(sampler)))?;
        let config = ServeConfig { port: 0, ..Default::default() };
        let srv = start(config, worker, info).await?;
        let script = random_key_script(300, 1000, 5);
        let mut streams: Vec<Vec<ReceivedFrame>> = Vec::new();
        for _ in 0..2 {
            let mut c = Client::connect(&srv.ws_url()).await?;
            c.hello(Mode::Play).await?;
            let (frames, _) = c.play(41, None, &script, 1000).await?;
            c.close().await?;
            streams.push(frames);
        }
        let stats = fetch_health(srv.addr).await?.stats;
        let gapless = streams[0].len() == 1000
            && streams[0].windows(2).all(|w| w[1].seq == w[0].seq + 1 && w[1].frame == w[0].frame + 1);
        let same = streams[0].len() == streams[1].len() && streams[0].iter().zip(&streams[1]).all(|(a, b)| a.pixels == b.pixels);
        let overhead = stats.overhead_fraction();
        let pass = gapless && same && overhead < 0.2;
        Ok((
            pass,
            format!(
                "{} frames, gapless {gapless}, identical streams {same}, overhead {:.1}% (< 20%), model {:.1} ms/frame",
                streams[0].len(),
                100.0 * overhead,
                stats.model_ms / stats.frames.max(1) as f64
            ),
        ))
    })
}

fn main() -> ExitCode {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .try_init();
    let pipeline = match Pipeline::new(acceptance_config(), false) {
        Ok(p) => p,
        Err(e) => {
            println!("acceptance: cannot open working directory: {e}");
            return ExitCode::FAILURE;
        }
    };
    println!(
        "acceptance working directory {}",
        pipeline.dir.root.display()
    );
    let p = &pipeline;
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("algebraic core", Box::new(algebra)),
        ("environment determinism", Box::new(env_determinism)),
        ("codec gate", Box::new(move || codec_gate(p))),
        ("simulation quality gate", Box::new(move || quality_gate(p))),
        (
            "sampling steps pattern",
            Box::new(move || sampling_steps(p)),
        ),
        ("noise augmentation pattern", Box::new(move || noise_aug(p))),
        (
            "context length pattern",
            Box::new(move || context_lengths(p)),
        ),
        ("data policy pattern", Box::new(move || data_policy(p))),
        ("dataset size pattern", Box::new(move || dataset_size(p))),
        ("serving", Box::new(move || serving(p))),
    ];
    let mut lines = Vec::new();
    let mut failed = 0;
    for (name, check) in &criteria {
        let t0 = Instant::now();
        let line = match check() {
            Ok((true, detail)) => format!(
                "PASS  {name}: {detail} [{:.1}s]",
                t0.elapsed().as_secs_f64()
            ),
            Ok((false, detail)) => {
                failed += 1;
                format!(
                    "FAIL  {name}: {detail} [{:.1}s]",
                    t0.elapsed().as_secs_f64()
                )
            }
            Err(e) => {
                failed += 1;
                format!(
                    "FAIL  {name}: error: {e} [{:.1}s]",
                    t0.elapsed().as_secs_f64()
                )
            }
        };
        println!("{line}");
        lines.push(line);
    }
    println!(
        "\nacceptance summary: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    for l in &lines {
        println!("  {l}");
    }
    let strict = std::env::var("NEUROSIM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
