//! Checks the diffusion algebra numerically on random vectors: forward
//! noising, the velocity target, x0 recovery, DDIM steps and guidance.
//!
//! `cargo run -p neurosim-core --example diffusion_identities`

use neurosim::diffusion::{
    cfg_combine, ddim_step, forward_diffuse, predict_eps, predict_x0, velocity_target, AugSpec,
    NoiseSchedule,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn main() -> neurosim::Result<()> {
    let s = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eps: Vec<f64> = (0..256).map(|_| rng.random_range(-2.0..2.0)).collect();
    println!(
        "{:>5} {:>10} {:>12} {:>12} {:>12}",
        "t", "alpha_bar", "x0 err", "eps err", "ddim->0 err"
    );
    for t in [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0] {
        let x_t = forward_diffuse(&s, &x0, t, &eps)?;
        let v = velocity_target(&s, &x0, &eps, t)?;
        println!(
            "{t:>5.2} {:>10.5} {:>12.2e} {:>12.2e} {:>12.2e}",
            s.alpha_bar(t),
            max_err(&predict_x0(&s, &x_t, &v, t)?, &x0),
            max_err(&predict_eps(&s, &x_t, &v, t)?, &eps),
            max_err(&ddim_step(&s, &x_t, &v, t, 0.0)?, &x0)
        );
    }

    // Walking the DDIM grid with exact velocities stays on the noising path.
    let grid = [1.0, 0.75, 0.5, 0.25, 0.0];
    let mut x = forward_diffuse(&s, &x0, 1.0, &eps)?;
    for w in grid.windows(2) {
        let v = velocity_target(&s, &x0, &eps, w[0])?;
        x = ddim_step(&s, &x, &v, w[0], w[1])?;
    }
    println!(
        "4-step DDIM with oracle velocity: max error {:.2e}",
        max_err(&x, &x0)
    );

    let (vc, vu) = (vec![1.0, 2.0], vec![0.0, 1.0]);
    println!(
        "guidance w=1.5 on (1,2) vs (0,1): {:?}",
        cfg_combine(&vc, &vu, 1.5)?
    );
    let spec = AugSpec::default();
    for a in [0.0, 0.07, 0.35, 0.69, 0.7] {
        println!("augmentation level {a:.2} -> bucket {}", spec.bucket(a)?);
    }
    Ok(())
}
