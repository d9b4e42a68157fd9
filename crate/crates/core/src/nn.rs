//! Small helpers shared by the torch-backed models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tch::{nn::VarStore, Device, Kind, Tensor};

use crate::env::render::{FRAME_H, FRAME_W};
use crate::env::Frame;
use crate::error::{Error, Result};

pub fn device() -> Device {
    Device::Cpu
}

/// Re-initializes every parameter of `vs` from a seeded stream so model
/// construction never depends on torch's global generator.
///
/// Matrices and kernels get `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; biases get
/// zero; other vectors (norm scales) keep their constant construction value.
/// Names listed in `zero` are zeroed outright.
pub fn seeded_init(vs: &VarStore, seed: u64, zero: &[&str]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vars: Vec<(String, Tensor)> = vs.variables().into_iter().collect();
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    tch::no_grad(|| {
        for (name, mut t) in vars {
            let size = t.size();
            if !t.requires_grad() {
                continue;
            }
            if zero.iter().any(|z| name.starts_with(z))
                || (size.len() == 1 && name.ends_with("bias"))
            {
                let _ = t.zero_();
                continue;
            }
            if size.len() < 2 {
                continue;
            }
            let fan_in: i64 = size[1..].iter().product();
            let bound = 1.0 / (fan_in as f32).sqrt();
            let n: i64 = size.iter().product();
            let data: Vec<f32> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            t.copy_(&Tensor::from_slice(&data).view(size.as_slice()));
        }
    });
}

/// Standard-normal tensor drawn from a seeded stream.
pub fn randn(rng: &mut impl Rng, shape: &[i64]) -> Tensor {
    let n: i64 = shape.iter().product();
    let data: Vec<f32> = (0..n)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    Tensor::from_slice(&data).view(shape)
}

pub fn uniform(rng: &mut impl Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Frames to a `(B, 3, 64, 64)` tensor in `[-1, 1]`.
pub fn frames_to_tensor(frames: &[&Frame]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(frames.len() * FRAME_W * FRAME_H * 3);
    for f in frames {
        f.ensure_standard()?;
        data.extend(f.pixels.iter().map(|&p| p as f32 / 127.5 - 1.0));
    }
    Ok(Tensor::from_slice(&data)
        .view([frames.len() as i64, FRAME_H as i64, FRAME_W as i64, 3])
        .permute([0, 3, 1, 2])
        .contiguous())
}

/// Inverse of [`frames_to_tensor`], clamping to the byte range.
pub fn tensor_to_frames(t: &Tensor) -> Result<Vec<Frame>> {
    let size = t.size();
    if size.len() != 4 || size[1] != 3 || size[2] != FRAME_H as i64 || size[3] != FRAME_W as i64 {
        return Err(Error::shape("(B, 3, 64, 64)", format!("{size:?}")));
    }
    let bytes = ((t.clamp(-1.0, 1.0) + 1.0) * 127.5)
        .round()
        .permute([0, 2, 3, 1])
        .contiguous()
        .to_kind(Kind::Uint8);
    let flat: Vec<u8> = Vec::<u8>::try_from(bytes.flatten(0, -1))?;
    Ok(flat
        .chunks_exact(FRAME_W * FRAME_H * 3)
        .map(|c| Frame::from_bytes(c).expect("exact chunk"))
        .collect())
}

pub fn to_vec_f32(t: &Tensor) -> Vec<f32> {
    Vec::<f32>::try_from(t.detach().to_kind(Kind::Float).flatten(0, -1)).expect("float tensor")
}

pub fn scalar(t: &Tensor) -> f64 {
    t.double_value(&[])
}

/// Aborts training on a non-finite loss.
pub fn check_finite(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            msg: format!("loss became {loss}"),
        })
    }
}

/// Rolls training back when the loss jumps far above its running average and
/// stays there.
///
/// Healthy steps update an exponential average of the loss and, every
/// `SNAPSHOT_EVERY` steps, a weight snapshot. After `PATIENCE` consecutive
/// steps above `RATIO` times the average, the weights are restored from the
/// older of the last two snapshots and [`SpikeGuard::observe`] returns `true`
/// so the caller can rebuild its optimizers.
#[derive(Debug)]
pub struct SpikeGuard {
    ema: Option<f64>,
    bad: usize,
    snapshots: [Vec<Tensor>; 2],
    pub restarts: usize,
}

impl SpikeGuard {
    pub const RATIO: f64 = 10.0;
    pub const PATIENCE: usize = 25;
    pub const WARMUP: usize = 200;
    pub const SNAPSHOT_EVERY: usize = 100;
    pub const MAX_RESTARTS: usize = 6;

    pub fn new(stores: &[&VarStore]) -> Self {
        SpikeGuard {
            ema: None,
            bad: 0,
            snapshots: [snapshot(stores), snapshot(stores)],
            restarts: 0,
        }
    }

    /// Checks one step's loss; errors on a non-finite loss or too many restarts.
    pub fn observe(&mut self, step: usize, loss: f64, stores: &[&VarStore]) -> Result<bool> {
        check_finite(loss, step)?;
        let ema = *self.ema.get_or_insert(loss);
        if step >= Self::WARMUP && loss > Self::RATIO * ema {
            self.bad += 1;
            if self.bad < Self::PATIENCE {
                return Ok(false);
            }
            self.restarts += 1;
            if self.restarts > Self::MAX_RESTARTS {
                return Err(Error::Diverged {
                    step,
                    msg: format!(
                        "loss {loss} against average {ema} after {} restores",
                        Self::MAX_RESTARTS
                    ),
                });
            }
            let vars = stores.iter().flat_map(|vs| vs.trainable_variables());
            tch::no_grad(|| {
                for (mut v, s) in vars.zip(&self.snapshots[0]) {
                    v.copy_(s);
                }
            });
            self.snapshots[1] = self.snapshots[0].iter().map(Tensor::copy).collect();
            self.bad = 0;
            log::warn!(
                "loss {loss:.5} stuck above average {ema:.5} at step {step}, weights restored"
            );
            return Ok(true);
        }
        self.bad = 0;
        self.ema = Some(0.98 * ema + 0.02 * loss);
        if step % Self::SNAPSHOT_EVERY == 0 {
            let newest = snapshot(stores);
            self.snapshots[0] = std::mem::replace(&mut self.snapshots[1], newest);
        }
        Ok(false)
    }
}

fn snapshot(stores: &[&VarStore]) -> Vec<Tensor> {
    stores
        .iter()
        .flat_map(|vs| vs.trainable_variables())
        .map(|v| v.detach().copy())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::nn;

    #[test]
    fn seeded_init_is_reproducible() {
        let build = |seed| {
            let vs = VarStore::new(device());
            let _l = nn::linear(vs.root() / "l", 8, 4, Default::default());
            seeded_init(&vs, seed, &[]);
            crate::checkpoint::params_hash(&[("m", &vs)])
        };
        assert_eq!(build(3), build(3));
        assert_ne!(build(3), build(4));
    }

    #[test]
    fn spike_guard_restores_an_earlier_snapshot() {
        let vs = VarStore::new(device());
        let _l = nn::linear(vs.root() / "l", 4, 4, Default::default());
        seeded_init(&vs, 1, &[]);
        let weight = || to_vec_f32(&vs.trainable_variables()[0]);
        let set = |x: f64| {
            tch::no_grad(|| {
                vs.trainable_variables().into_iter().for_each(|mut v| {
                    let _ = v.fill_(x);
                })
            })
        };
        let mut g = SpikeGuard::new(&[&vs]);
        for step in 0..=300 {
            set(step as f64);
            assert!(!g.observe(step, 1.0, &[&vs]).unwrap());
        }
        // One short spike is tolerated.
        for step in 301..311 {
            assert!(!g.observe(step, 50.0, &[&vs]).unwrap());
        }
        assert!(!g.observe(311, 1.0, &[&vs]).unwrap());
        let mut restored = false;
        for step in 312..400 {
            restored = g.observe(step, 50.0, &[&vs]).unwrap();
            if restored {
                assert_eq!(step, 312 + SpikeGuard::PATIENCE - 1);
                break;
            }
        }
        assert!(restored);
        assert!(weight().iter().all(|&w| w == 200.0));
        assert_eq!(g.restarts, 1);
        assert!(g.observe(400, f64::NAN, &[&vs]).is_err());
    }

    #[test]
    fn frame_tensor_round_trip() {
        let mut f = Frame::blank();
        for (i, p) in f.pixels.iter_mut().enumerate() {
            *p = (i * 31 % 256) as u8;
        }
        let t = frames_to_tensor(&[&f, &f]).unwrap();
        assert_eq!(t.size(), vec![2, 3, 64, 64]);
        let back = tensor_to_frames(&t).unwrap();
        assert_eq!(back[0], f);
        assert!(frames_to_tensor(&[&Frame::filled(8, 8, [0; 3])]).is_err());
    }
}
