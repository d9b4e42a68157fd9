//! Deterministic convolutional codec: 64x64 RGB frames to 4x8x8 latents.
//!
//! Encoder and decoder live in separate var stores so decoder fine-tuning can
//! never touch encoder weights. Latents are normalized per channel with
//! statistics measured after training and stored with the encoder.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::nn::{self, Module, OptimizerConfig, VarStore};
use tch::{Kind, Tensor};

use crate::checkpoint::{self, Header, LoadOptions};
use crate::env::render::{CONTENT_H, HUD_Y, PAD_Y};
use crate::env::Frame;
use crate::error::{Error, Result};
use crate::nn::{
    check_finite, device, frames_to_tensor, seeded_init, tensor_to_frames, to_vec_f32, SpikeGuard,
};

pub const LATENT_C: usize = 4;
pub const LATENT_H: usize = 8;
pub const LATENT_W: usize = 8;
pub const LATENT_LEN: usize = LATENT_C * LATENT_H * LATENT_W;
/// Latent cells whose value can depend on a given input patch lie within this
/// Chebyshev radius (in latent cells) of the patch's own cell.
pub const RECEPTIVE_RADIUS: usize = 4;

pub const CHECKPOINT_KIND: &str = "codec";

/// Where a latent came from. Training and teacher forcing only ever consume
/// `Encoded`; autoregressive rollouts feed back `Generated`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Encoded,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentFrame {
    /// Channel-major `4 x 8 x 8` values.
    pub values: Vec<f32>,
    pub provenance: Provenance,
}

impl LatentFrame {
    pub fn new(values: Vec<f32>, provenance: Provenance) -> Result<Self> {
        if values.len() != LATENT_LEN {
            return Err(Error::shape(
                format!("{LATENT_LEN} latent values"),
                values.len(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::range("latent value", v));
        }
        Ok(LatentFrame { values, provenance })
    }

    pub fn zeros(provenance: Provenance) -> Self {
        LatentFrame {
            values: vec![0.0; LATENT_LEN],
            provenance,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_slice(&self.values).view([LATENT_C as i64, LATENT_H as i64, LATENT_W as i64])
    }

    /// Stacks latents into `(B, 4, 8, 8)`.
    pub fn stack(latents: &[&LatentFrame]) -> Tensor {
        let data: Vec<f32> = latents
            .iter()
            .flat_map(|l| l.values.iter().copied())
            .collect();
        Tensor::from_slice(&data).view([
            latents.len() as i64,
            LATENT_C as i64,
            LATENT_H as i64,
            LATENT_W as i64,
        ])
    }

    /// Splits a `(B, 4, 8, 8)` tensor into latents.
    pub fn unstack(t: &Tensor, provenance: Provenance) -> Result<Vec<LatentFrame>> {
        let size = t.size();
        if size.len() != 4 || size[1..] != [LATENT_C as i64, LATENT_H as i64, LATENT_W as i64] {
            return Err(Error::shape("(B, 4, 8, 8)", format!("{size:?}")));
        }
        to_vec_f32(t)
            .chunks_exact(LATENT_LEN)
            .map(|c| LatentFrame::new(c.to_vec(), provenance))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub widths: [i64; 3],
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    pub seed: u64,
    pub finetune_steps: usize,
    pub finetune_learning_rate: f64,
    /// Loss weight on HUD rows during decoder fine-tuning.
    pub hud_weight: f64,
    pub log_every: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            widths: [64, 128, 256],
            learning_rate: 1e-3,
            batch_size: 32,
            train_steps: 20_000,
            seed: 0,
            finetune_steps: 2_000,
            finetune_learning_rate: 2e-4,
            hud_weight: 4.0,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    /// `(step, loss)` pairs at the logging cadence, step 0 included.
    pub losses: Vec<(usize, f64)>,
}

fn conv(p: nn::Path, cin: i64, cout: i64, k: i64, stride: i64) -> nn::Conv2D {
    nn::conv2d(
        p,
        cin,
        cout,
        k,
        nn::ConvConfig {
            stride,
            padding: k / 2,
            ..Default::default()
        },
    )
}

#[derive(Debug)]
struct Encoder {
    down: Vec<nn::Conv2D>,
    res: Vec<nn::Conv2D>,
    head: nn::Conv2D,
    mean: Tensor,
    std: Tensor,
}

impl Encoder {
    fn new(p: &nn::Path, w: [i64; 3]) -> Self {
        let mut down = Vec::new();
        let mut cin = 3;
        for (i, &c) in w.iter().enumerate() {
            down.push(nn::conv2d(
                p / format!("down{i}"),
                cin,
                c,
                4,
                nn::ConvConfig {
                    stride: 2,
                    padding: 1,
                    ..Default::default()
                },
            ));
            cin = c;
        }
        let res = vec![
            conv(p / "res1", w[1], w[1], 3, 1),
            conv(p / "res2a", w[2], w[2], 3, 1),
            conv(p / "res2b", w[2], w[2], 3, 1),
        ];
        let head = conv(p / "head", w[2], LATENT_C as i64, 1, 1);
        let mean = p.zeros_no_train("latent_mean", &[1, LATENT_C as i64, 1, 1]);
        let std = p.ones_no_train("latent_std", &[1, LATENT_C as i64, 1, 1]);
        Encoder {
            down,
            res,
            head,
            mean,
            std,
        }
    }

    fn raw(&self, x: &Tensor) -> Tensor {
        let h = self.down[0].forward(x).silu();
        let h = self.down[1].forward(&h).silu();
        let h = &h + self.res[0].forward(&h).silu();
        let h = self.down[2].forward(&h).silu();
        let h = &h + self.res[1].forward(&h).silu();
        let h = &h + self.res[2].forward(&h).silu();
        self.head.forward(&h)
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        (self.raw(x) - &self.mean) / &self.std
    }
}

#[derive(Debug)]
struct Decoder {
    stem: nn::Conv2D,
    res: Vec<nn::Conv2D>,
    up: Vec<nn::Conv2D>,
    out: nn::Conv2D,
}

impl Decoder {
    fn new(p: &nn::Path, w: [i64; 3]) -> Self {
        let stem = conv(p / "stem", LATENT_C as i64, w[2], 3, 1);
        let res = vec![
            conv(p / "res2a", w[2], w[2], 3, 1),
            conv(p / "res2b", w[2], w[2], 3, 1),
            conv(p / "res1", w[1], w[1], 3, 1),
        ];
        let up = vec![
            conv(p / "up2", w[2], w[1], 3, 1),
            conv(p / "up1", w[1], w[0], 3, 1),
        ];
        // The last stage upsamples by pixel shuffle: 12 channels at 32x32 become RGB at 64x64.
        let out = conv(p / "out", w[0], 12, 3, 1);
        Decoder { stem, res, up, out }
    }

    fn forward(&self, z: &Tensor) -> Tensor {
        let up2 = |h: &Tensor| {
            let (hh, ww) = (h.size()[2], h.size()[3]);
            h.upsample_nearest2d([hh * 2, ww * 2], None, None)
        };
        let h = self.stem.forward(z).silu();
        let h = &h + self.res[0].forward(&h).silu();
        let h = &h + self.res[1].forward(&h).silu();
        let h = self.up[0].forward(&up2(&h)).silu();
        let h = &h + self.res[2].forward(&h).silu();
        let h = self.up[1].forward(&up2(&h)).silu();
        self.out.forward(&h).pixel_shuffle(2)
    }
}

/// Trained (or freshly initialized) codec.
#[derive(Debug)]
pub struct Codec {
    pub config: CodecConfig,
    pub step: usize,
    enc_vs: VarStore,
    dec_vs: VarStore,
    encoder: Encoder,
    decoder: Decoder,
}

const ENCODE_CHUNK: usize = 256;

impl Codec {
    pub fn new(config: CodecConfig) -> Result<Self> {
        if config.widths.iter().any(|&w| w <= 0) {
            return Err(Error::Config(format!(
                "codec widths must be positive: {:?}",
                config.widths
            )));
        }
        let enc_vs = VarStore::new(device());
        let dec_vs = VarStore::new(device());
        let encoder = Encoder::new(&enc_vs.root(), config.widths);
        let decoder = Decoder::new(&dec_vs.root(), config.widths);
        seeded_init(&enc_vs, crate::rng::derive_seed(config.seed, 1), &[]);
        seeded_init(&dec_vs, crate::rng::derive_seed(config.seed, 2), &[]);
        Ok(Codec {
            config,
            step: 0,
            enc_vs,
            dec_vs,
            encoder,
            decoder,
        })
    }

    /// Normalized latents for a `(B, 3, 64, 64)` batch in `[-1, 1]`.
    pub fn encode_tensor(&self, x: &Tensor) -> Tensor {
        tch::no_grad(|| self.encoder.forward(x))
    }

    /// Pixels in `[-1, 1]` (unclamped) for a `(B, 4, 8, 8)` batch.
    pub fn decode_tensor(&self, z: &Tensor) -> Tensor {
        tch::no_grad(|| {
            self.decoder
                .forward(&(z * &self.encoder.std + &self.encoder.mean))
        })
    }

    pub fn encode(&self, frame: &Frame) -> Result<LatentFrame> {
        Ok(self.encode_batch(&[frame])?.remove(0))
    }

    pub fn encode_batch(&self, frames: &[&Frame]) -> Result<Vec<LatentFrame>> {
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(ENCODE_CHUNK) {
            let z = self.encode_tensor(&frames_to_tensor(chunk)?);
            out.extend(LatentFrame::unstack(&z, Provenance::Encoded)?);
        }
        Ok(out)
    }

    pub fn decode(&self, latent: &LatentFrame) -> Result<Frame> {
        Ok(self.decode_batch(&[latent])?.remove(0))
    }

    pub fn decode_batch(&self, latents: &[&LatentFrame]) -> Result<Vec<Frame>> {
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(ENCODE_CHUNK) {
            for l in chunk {
                if l.values.len() != LATENT_LEN {
                    return Err(Error::shape(
                        format!("{LATENT_LEN} latent values"),
                        l.values.len(),
                    ));
                }
                if let Some(v) = l.values.iter().find(|v| !v.is_finite()) {
                    return Err(Error::range("latent value", v));
                }
            }
            out.extend(tensor_to_frames(
                &self.decode_tensor(&LatentFrame::stack(chunk)),
            )?);
        }
        Ok(out)
    }

    /// Encodes every frame of a set into one `(B, 4, 8, 8)` tensor.
    pub fn encode_all(&self, frames: &[&Frame]) -> Result<Tensor> {
        let mut parts = Vec::new();
        for chunk in frames.chunks(ENCODE_CHUNK) {
            parts.push(self.encode_tensor(&frames_to_tensor(chunk)?));
        }
        Ok(Tensor::cat(&parts, 0))
    }

    /// Identifies encoder and decoder weights together.
    pub fn hash(&self) -> String {
        checkpoint::params_hash(&[("encoder", &self.enc_vs), ("decoder", &self.dec_vs)])
    }

    pub fn encoder_hash(&self) -> String {
        checkpoint::params_hash(&[("encoder", &self.enc_vs)])
    }

    /// Sets per-channel latent normalization from a frame sample.
    pub fn calibrate(&mut self, frames: &[&Frame]) -> Result<()> {
        if frames.is_empty() {
            return Err(Error::Dataset("cannot calibrate on zero frames".into()));
        }
        let mut parts = Vec::new();
        for chunk in frames.chunks(ENCODE_CHUNK) {
            parts.push(tch::no_grad(|| {
                self.encoder
                    .raw(&frames_to_tensor(chunk).expect("checked frames"))
            }));
        }
        let z = Tensor::cat(&parts, 0);
        let mean = z.mean_dim([0i64, 2, 3].as_slice(), true, Kind::Float);
        let std = z
            .std_dim([0i64, 2, 3].as_slice(), false, true)
            .clamp_min(1e-3);
        tch::no_grad(|| {
            self.encoder.mean.copy_(&mean);
            self.encoder.std.copy_(&std);
        });
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<Header> {
        checkpoint::save(
            path,
            CHECKPOINT_KIND,
            &self.config,
            self.step,
            serde_json::json!({ "codec_hash": self.hash(), "encoder_hash": self.encoder_hash() }),
            &[("encoder", &self.enc_vs), ("decoder", &self.dec_vs)],
        )
    }

    pub fn load(path: &Path, opts: LoadOptions) -> Result<Self> {
        let header = checkpoint::read_header(path)?;
        let config: CodecConfig = header.config_as()?;
        let mut codec = Codec::new(config)?;
        let header = checkpoint::load(
            path,
            CHECKPOINT_KIND,
            opts,
            &mut [
                ("encoder", &mut codec.enc_vs),
                ("decoder", &mut codec.dec_vs),
            ],
        )?;
        codec.step = header.step;
        Ok(codec)
    }

    fn reconstruction(&self, x: &Tensor) -> Tensor {
        self.decoder
            .forward(&(self.encoder.forward(x) * &self.encoder.std + &self.encoder.mean))
    }
}

/// Per-pixel loss weights: HUD rows scaled by `hud_weight`, pad rows zero.
fn row_weights(hud_weight: f64) -> Tensor {
    let rows: Vec<f32> = (0..crate::env::render::FRAME_H)
        .map(|y| match y {
            y if y >= PAD_Y => 0.0,
            y if y >= HUD_Y => hud_weight as f32,
            _ => 1.0,
        })
        .collect();
    let w = Tensor::from_slice(&rows).view([1, 1, -1, 1]);
    let norm = rows.iter().sum::<f32>() / CONTENT_H as f32;
    w / norm as f64
}

fn sample_batch(frames: &[&Frame], rng: &mut impl Rng, n: usize) -> Result<Tensor> {
    let pick: Vec<&Frame> = (0..n)
        .map(|_| frames[rng.random_range(0..frames.len())])
        .collect();
    frames_to_tensor(&pick)
}

/// Trains encoder and decoder jointly on pixel MSE, then calibrates latents.
pub fn train_autoencoder(frames: &[&Frame], config: &CodecConfig) -> Result<(Codec, TrainLog)> {
    if frames.is_empty() {
        return Err(Error::Dataset(
            "autoencoder training needs at least one frame".into(),
        ));
    }
    let mut codec = Codec::new(config.clone())?;
    let mut lr = config.learning_rate;
    let mut opt_enc = nn::Adam::default().build(&codec.enc_vs, lr)?;
    let mut opt_dec = nn::Adam::default().build(&codec.dec_vs, lr)?;
    let mut guard = SpikeGuard::new(&[&codec.enc_vs, &codec.dec_vs]);
    let mut rng = ChaCha8Rng::seed_from_u64(crate::rng::derive_seed(config.seed, 3));
    let weights = row_weights(1.0);
    let mut log = TrainLog::default();
    for step in 0..config.train_steps {
        let x = sample_batch(frames, &mut rng, config.batch_size)?;
        let loss = ((codec.reconstruction(&x) - &x).square() * &weights).mean(Kind::Float);
        let value = loss.double_value(&[]);
        if guard.observe(step, value, &[&codec.enc_vs, &codec.dec_vs])? {
            lr *= 0.5;
            opt_enc = nn::Adam::default().build(&codec.enc_vs, lr)?;
            opt_dec = nn::Adam::default().build(&codec.dec_vs, lr)?;
            codec.step += 1;
            continue;
        }
        if step % config.log_every.max(1) == 0 {
            log.losses.push((step, value));
            log::debug!("codec step {step} loss {value:.5}");
        }
        opt_enc.zero_grad();
        opt_dec.zero_grad();
        loss.backward();
        clip_joint(&[&codec.enc_vs, &codec.dec_vs], 1.0);
        opt_enc.step();
        opt_dec.step();
        codec.step += 1;
    }
    let sample: Vec<&Frame> = frames
        .iter()
        .step_by((frames.len() / 2048).max(1))
        .copied()
        .collect();
    codec.calibrate(&sample)?;
    Ok((codec, log))
}

/// Clips the global gradient norm across several var stores.
pub(crate) fn clip_joint(stores: &[&VarStore], max_norm: f64) {
    let grads: Vec<Tensor> = stores
        .iter()
        .flat_map(|vs| vs.trainable_variables())
        .map(|v| v.grad())
        .filter(|g| g.defined())
        .collect();
    if grads.is_empty() {
        return;
    }
    let total: f64 = grads
        .iter()
        .map(|g| g.square().sum(Kind::Float).double_value(&[]))
        .sum::<f64>()
        .sqrt();
    if total > max_norm {
        let scale = max_norm / (total + 1e-6);
        tch::no_grad(|| {
            for mut g in grads {
                let _ = g.g_mul_scalar_(scale);
            }
        });
    }
}

/// Fine-tunes only the decoder against pixels with up-weighted HUD rows.
pub fn finetune_decoder(
    codec: &mut Codec,
    frames: &[&Frame],
    config: &CodecConfig,
) -> Result<TrainLog> {
    if frames.is_empty() {
        return Err(Error::Dataset(
            "decoder fine-tuning needs at least one frame".into(),
        ));
    }
    let mut opt = nn::Adam::default().build(&codec.dec_vs, config.finetune_learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::rng::derive_seed(config.seed, 4));
    let weights = row_weights(config.hud_weight);
    let mut log = TrainLog::default();
    for step in 0..config.finetune_steps {
        let x = sample_batch(frames, &mut rng, config.batch_size)?;
        let z = codec.encode_tensor(&x);
        let recon = codec
            .decoder
            .forward(&(z * &codec.encoder.std + &codec.encoder.mean));
        let loss = ((recon - &x).square() * &weights).mean(Kind::Float);
        let value = loss.double_value(&[]);
        check_finite(value, step)?;
        if step % config.log_every.max(1) == 0 {
            log.losses.push((step, value));
        }
        opt.backward_step_clip_norm(&loss, 1.0);
        codec.step += 1;
    }
    codec.config.finetune_steps = config.finetune_steps;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CodecConfig {
        CodecConfig {
            widths: [8, 8, 8],
            ..Default::default()
        }
    }

    #[test]
    fn latent_frame_validation() {
        assert!(LatentFrame::new(vec![0.0; 10], Provenance::Encoded).is_err());
        assert!(LatentFrame::new(vec![f32::NAN; LATENT_LEN], Provenance::Encoded).is_err());
        assert!(LatentFrame::new(vec![0.5; LATENT_LEN], Provenance::Generated).is_ok());
    }

    #[test]
    fn shapes_and_determinism() {
        let codec = Codec::new(tiny()).unwrap();
        let f = Frame::blank();
        let a = codec.encode(&f).unwrap();
        assert_eq!(a.values.len(), LATENT_LEN);
        assert_eq!(a, codec.encode(&f).unwrap());
        let d = codec.decode(&a).unwrap();
        assert!(d.is_standard());
        assert_eq!(d, codec.decode(&a).unwrap());
        assert!(codec.encode(&Frame::filled(32, 32, [0; 3])).is_err());
        let bad = LatentFrame {
            values: vec![f32::INFINITY; LATENT_LEN],
            provenance: Provenance::Generated,
        };
        assert!(codec.decode(&bad).is_err());
    }
}
