use neurosim::agent::{random_rollouts, RandomPolicyConfig};
use neurosim::env::render::{FRAME_H, FRAME_W};
use neurosim::env::Frame;
use neurosim::eval::{median, psnr, psnr_from_mse, summarize, PDist, PSNR_CAP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn offset(f: &Frame, d: i32) -> Frame {
    let mut g = f.clone();
    for y in 0..FRAME_H {
        for x in 0..FRAME_W {
            let p = f.get(x, y);
            g.set(x, y, p.map(|c| (c as i32 + d).clamp(0, 255) as u8));
        }
    }
    g
}

fn noisy(f: &Frame, sigma: f64, rng: &mut impl Rng) -> Frame {
    let normal = rand_distr::Normal::new(0.0, sigma).unwrap();
    let mut g = f.clone();
    for y in 0..FRAME_H {
        for x in 0..FRAME_W {
            let p = f.get(x, y);
            g.set(
                x,
                y,
                p.map(|c| (c as f64 + rng.sample(normal)).round().clamp(0.0, 255.0) as u8),
            );
        }
    }
    g
}

#[test]
fn psnr_closed_form_examples() {
    let a = Frame::filled(FRAME_W, FRAME_H, [100, 100, 100]);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    let black = Frame::filled(FRAME_W, FRAME_H, [0, 0, 0]);
    let white = Frame::filled(FRAME_W, FRAME_H, [255, 255, 255]);
    assert!(psnr(&black, &white).unwrap().abs() < 1e-12);
    let expect = 10.0 * (255.0f64 * 255.0 / 25.0).log10();
    assert!((psnr(&a, &offset(&a, 5)).unwrap() - expect).abs() < 1e-9);
    assert!((expect - 34.15).abs() < 0.01);
    assert!((psnr_from_mse(255.0 * 255.0)).abs() < 1e-12);
}

#[test]
fn psnr_rejects_mismatched_frames() {
    let a = Frame::filled(FRAME_W, FRAME_H, [0, 0, 0]);
    let b = Frame::filled(32, 32, [0, 0, 0]);
    assert!(psnr(&a, &b).is_err());
}

#[test]
fn median_and_summary() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    assert!(median(&[]).is_nan());
    let s = summarize(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(s.mean, 2.5);
    assert!((s.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
    assert_eq!(s.n, 4);
}

fn probe() -> Vec<Frame> {
    let t = random_rollouts(100, 3, &RandomPolicyConfig::default()).unwrap();
    t.into_iter().flat_map(|t| t.frames).take(100).collect()
}

#[test]
fn pdist_identity_and_symmetry() {
    let frames = probe();
    let d = PDist::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for f in frames.iter().take(10) {
        assert_eq!(d.distance(f, f).unwrap(), 0.0);
        let g = noisy(f, 15.0, &mut rng);
        let (ab, ba) = (d.distance(f, &g).unwrap(), d.distance(&g, f).unwrap());
        assert!((ab - ba).abs() <= 1e-9 * ab.abs().max(1.0));
        assert!(ab > 0.0);
    }
}

#[test]
fn pdist_grows_with_noise() {
    let frames = probe();
    assert_eq!(frames.len(), 100);
    let d = PDist::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mean_at = |sigma: f64, rng: &mut ChaCha8Rng| {
        let noisy: Vec<Frame> = frames.iter().map(|f| noisy(f, sigma, rng)).collect();
        let a: Vec<&Frame> = frames.iter().collect();
        let b: Vec<&Frame> = noisy.iter().collect();
        let v = d.batch(&a, &b).unwrap();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let m: Vec<f64> = [5.0, 15.0, 45.0]
        .iter()
        .map(|&s| mean_at(s, &mut rng))
        .collect();
    assert!(m[0] < m[1] && m[1] < m[2], "{m:?}");
}

#[test]
fn pdist_is_reproducible_across_instances() {
    let frames = probe();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = noisy(&frames[0], 20.0, &mut rng);
    assert_eq!(
        PDist::default().distance(&frames[0], &g).unwrap(),
        PDist::default().distance(&frames[0], &g).unwrap()
    );
}
