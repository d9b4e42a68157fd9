use neurosim::agent::{random_rollouts, RandomPolicyConfig};
use neurosim::autoencoder::{
    finetune_decoder, train_autoencoder, Codec, CodecConfig, LatentFrame, Provenance, LATENT_H,
    LATENT_LEN, LATENT_W, RECEPTIVE_RADIUS,
};
use neurosim::checkpoint::LoadOptions;
use neurosim::env::Frame;
use neurosim::eval::{median, psnr};

fn frames(n: usize, seed: u64) -> Vec<Frame> {
    random_rollouts(n, seed, &RandomPolicyConfig::default())
        .unwrap()
        .into_iter()
        .flat_map(|t| t.frames)
        .take(n)
        .collect()
}

fn small(steps: usize) -> CodecConfig {
    CodecConfig {
        widths: [8, 16, 16],
        train_steps: steps,
        finetune_steps: steps,
        batch_size: 8,
        ..Default::default()
    }
}

#[test]
fn receptive_field_is_bounded() {
    let codec = Codec::new(CodecConfig {
        widths: [8, 16, 16],
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let base = frames(1, 1).remove(0);
    let z0 = codec.encode(&base).unwrap();
    for (cx, cy) in [(0usize, 0usize), (3, 2), (7, 4)] {
        let mut f = base.clone();
        for y in cy * 8..cy * 8 + 8 {
            for x in cx * 8..cx * 8 + 8 {
                let p = f.get(x, y);
                f.set(x, y, [255 - p[0], 255 - p[1], 255 - p[2]]);
            }
        }
        let z1 = codec.encode(&f).unwrap();
        let mut changed_inside = false;
        for c in 0..4 {
            for y in 0..LATENT_H {
                for x in 0..LATENT_W {
                    let k = (c * LATENT_H + y) * LATENT_W + x;
                    let far = x.abs_diff(cx).max(y.abs_diff(cy)) > RECEPTIVE_RADIUS;
                    if far {
                        assert_eq!(
                            z0.values[k], z1.values[k],
                            "cell ({x},{y}) moved for patch ({cx},{cy})"
                        );
                    } else if z0.values[k] != z1.values[k] {
                        changed_inside = true;
                    }
                }
            }
        }
        assert!(changed_inside);
    }
}

#[test]
fn overfits_a_small_set() {
    let train = frames(32, 7);
    let refs: Vec<&Frame> = train.iter().collect();
    let config = CodecConfig {
        widths: [16, 32, 64],
        train_steps: 1500,
        batch_size: 16,
        learning_rate: 3e-3,
        ..Default::default()
    };
    let (codec, log) = train_autoencoder(&refs, &config).unwrap();
    assert!(log.losses.last().unwrap().1 < log.losses[0].1);
    let z: Vec<LatentFrame> = codec.encode_batch(&refs).unwrap();
    let recon = codec.decode_batch(&z.iter().collect::<Vec<_>>()).unwrap();
    let p: Vec<f64> = train
        .iter()
        .zip(&recon)
        .map(|(a, b)| psnr(a, b).unwrap())
        .collect();
    assert!(median(&p) >= 35.0, "median PSNR {:.2}", median(&p));
}

#[test]
fn seeded_training_is_reproducible() {
    let train = frames(64, 2);
    let refs: Vec<&Frame> = train.iter().collect();
    let (a, _) = train_autoencoder(&refs, &small(20)).unwrap();
    let (b, _) = train_autoencoder(&refs, &small(20)).unwrap();
    assert_eq!(a.hash(), b.hash());
    let (c, _) = train_autoencoder(
        &refs,
        &CodecConfig {
            seed: 1,
            ..small(20)
        },
    )
    .unwrap();
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn decoder_finetune_leaves_the_encoder_alone() {
    let train = frames(64, 4);
    let refs: Vec<&Frame> = train.iter().collect();
    let (mut codec, _) = train_autoencoder(&refs, &small(20)).unwrap();
    let (enc, all) = (codec.encoder_hash(), codec.hash());
    let z = codec.encode(&train[0]).unwrap();
    finetune_decoder(&mut codec, &refs, &small(20)).unwrap();
    assert_eq!(codec.encoder_hash(), enc);
    assert_ne!(codec.hash(), all);
    assert_eq!(codec.encode(&train[0]).unwrap(), z);
}

#[test]
fn checkpoint_round_trip_and_tamper_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("codec.ckpt");
    let train = frames(32, 5);
    let refs: Vec<&Frame> = train.iter().collect();
    let (codec, _) = train_autoencoder(&refs, &small(10)).unwrap();
    codec.save(&path).unwrap();
    let back = Codec::load(&path, LoadOptions::default()).unwrap();
    assert_eq!(back.hash(), codec.hash());
    assert_eq!(
        back.encode(&train[3]).unwrap(),
        codec.encode(&train[3]).unwrap()
    );

    // Flip one digit of the stored learning rate so the config no longer matches its hash.
    let bytes = std::fs::read(&path).unwrap();
    let needle = b"\"learning_rate\":0.001";
    let at = bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .expect("config in header");
    let mut bad = bytes.clone();
    bad[at + needle.len() - 1] = b'2';
    std::fs::write(&path, &bad).unwrap();
    assert!(Codec::load(&path, LoadOptions::default()).is_err());
    assert!(Codec::load(&path, LoadOptions { force: true }).is_ok());

    // A corrupted weight fails the parameter hash.
    let mut bad = bytes;
    let n = bad.len();
    bad[n - 2] ^= 0x40;
    std::fs::write(&path, &bad).unwrap();
    assert!(Codec::load(&path, LoadOptions::default()).is_err());
}

#[test]
fn zero_latent_decodes_to_a_fixed_frame() {
    let codec = Codec::new(small(0)).unwrap();
    let z = LatentFrame::zeros(Provenance::Generated);
    assert_eq!(z.values.len(), LATENT_LEN);
    let a = codec.decode(&z).unwrap();
    let b = Codec::new(small(0)).unwrap().decode(&z).unwrap();
    assert_eq!(a, b);
}
