//! Latent U-Net denoiser over 8x8 latents.
//!
//! Input channels are the noised latent concatenated with the `N` context
//! latents. Action ids become a token sequence read through cross-attention at
//! the 4x4 and 2x2 levels. Diffusion time and the augmentation bucket are
//! embedded and summed into the conditioning vector of every residual block.

use tch::nn::{self, Module};
use tch::{Kind, Tensor};

use super::DenoiserConfig;
use crate::autoencoder::{LATENT_C, LATENT_H, LATENT_W};
use crate::env::NUM_ACTIONS;
use crate::error::{Error, Result};

fn groups(c: i64) -> i64 {
    [8, 4, 2, 1].into_iter().find(|g| c % g == 0).unwrap_or(1)
}

fn conv3(p: nn::Path, cin: i64, cout: i64) -> nn::Conv2D {
    nn::conv2d(
        p,
        cin,
        cout,
        3,
        nn::ConvConfig {
            padding: 1,
            ..Default::default()
        },
    )
}

#[derive(Debug)]
struct ResBlock {
    n1: nn::GroupNorm,
    c1: nn::Conv2D,
    emb: nn::Linear,
    n2: nn::GroupNorm,
    c2: nn::Conv2D,
    skip: Option<nn::Conv2D>,
}

impl ResBlock {
    fn new(p: nn::Path, cin: i64, cout: i64, emb_dim: i64) -> Self {
        ResBlock {
            n1: nn::group_norm(&p / "n1", groups(cin), cin, Default::default()),
            c1: conv3(&p / "c1", cin, cout),
            emb: nn::linear(&p / "emb", emb_dim, cout, Default::default()),
            n2: nn::group_norm(&p / "n2", groups(cout), cout, Default::default()),
            c2: conv3(&p / "c2", cout, cout),
            skip: (cin != cout).then(|| nn::conv2d(&p / "skip", cin, cout, 1, Default::default())),
        }
    }

    fn forward(&self, x: &Tensor, emb: &Tensor) -> Tensor {
        let h = self.c1.forward(&self.n1.forward(x).silu());
        let h = h + self.emb.forward(emb).unsqueeze(-1).unsqueeze(-1);
        let h = self.c2.forward(&self.n2.forward(&h).silu());
        match &self.skip {
            Some(s) => s.forward(x) + h,
            None => x + h,
        }
    }
}

/// Single-head cross-attention from feature positions to action tokens.
#[derive(Debug)]
struct CrossAttention {
    norm: nn::GroupNorm,
    q: nn::Linear,
    k: nn::Linear,
    v: nn::Linear,
    out: nn::Linear,
}

impl CrossAttention {
    fn new(p: nn::Path, c: i64, token_dim: i64) -> Self {
        CrossAttention {
            norm: nn::group_norm(&p / "norm", groups(c), c, Default::default()),
            q: nn::linear(&p / "q", c, c, Default::default()),
            k: nn::linear(&p / "k", token_dim, c, Default::default()),
            v: nn::linear(&p / "v", token_dim, c, Default::default()),
            out: nn::linear(&p / "out", c, c, Default::default()),
        }
    }

    fn forward(&self, x: &Tensor, tokens: &Tensor) -> Tensor {
        let (b, c, h, w) = x.size4().expect("4-d features");
        let q = self
            .q
            .forward(&self.norm.forward(x).view([b, c, h * w]).transpose(1, 2));
        let k = self.k.forward(tokens);
        let v = self.v.forward(tokens);
        let att = (q.matmul(&k.transpose(1, 2)) / (c as f64).sqrt()).softmax(-1, Kind::Float);
        let o = self.out.forward(&att.matmul(&v));
        x + o.transpose(1, 2).view([b, c, h, w])
    }
}

#[derive(Debug)]
pub struct UNet {
    n_ctx: i64,
    time_dim: i64,
    time_mlp: (nn::Linear, nn::Linear),
    bucket_embed: nn::Embedding,
    action_embed: nn::Embedding,
    action_pos: Tensor,
    input: nn::Conv2D,
    d0: ResBlock,
    down0: nn::Conv2D,
    d1: ResBlock,
    a1: CrossAttention,
    down1: nn::Conv2D,
    m1: ResBlock,
    am: CrossAttention,
    m2: ResBlock,
    u1: ResBlock,
    au1: CrossAttention,
    u0: ResBlock,
    out_norm: nn::GroupNorm,
    output: nn::Conv2D,
}

/// Names of parameters initialized to zero so every block starts as identity.
pub const ZERO_INIT: &[&str] = &["output", "a1.out", "am.out", "au1.out"];

impl UNet {
    pub fn new(p: &nn::Path, cfg: &DenoiserConfig) -> Self {
        let [w0, w1, w2] = cfg.widths;
        let n = cfg.context_len as i64;
        let t = cfg.time_embed_dim;
        let a = cfg.action_embed_dim;
        let down = |p: nn::Path, cin, cout| {
            nn::conv2d(
                p,
                cin,
                cout,
                3,
                nn::ConvConfig {
                    stride: 2,
                    padding: 1,
                    ..Default::default()
                },
            )
        };
        UNet {
            n_ctx: n,
            time_dim: t,
            time_mlp: (
                nn::linear(p / "time1", t, t, Default::default()),
                nn::linear(p / "time2", t, t, Default::default()),
            ),
            bucket_embed: nn::embedding(
                p / "bucket",
                cfg.aug_buckets as i64,
                t,
                Default::default(),
            ),
            action_embed: nn::embedding(p / "action", NUM_ACTIONS as i64, a, Default::default()),
            action_pos: p.randn("action_pos", &[1, n, a], 0.0, 0.02),
            input: conv3(p / "input", LATENT_C as i64 * (1 + n), w0),
            d0: ResBlock::new(p / "d0", w0, w0, t),
            down0: down(p / "down0", w0, w1),
            d1: ResBlock::new(p / "d1", w1, w1, t),
            a1: CrossAttention::new(p / "a1", w1, a),
            down1: down(p / "down1", w1, w2),
            m1: ResBlock::new(p / "m1", w2, w2, t),
            am: CrossAttention::new(p / "am", w2, a),
            m2: ResBlock::new(p / "m2", w2, w2, t),
            u1: ResBlock::new(p / "u1", w2 + w1, w1, t),
            au1: CrossAttention::new(p / "au1", w1, a),
            u0: ResBlock::new(p / "u0", w1 + w0, w0, t),
            out_norm: nn::group_norm(p / "out_norm", groups(w0), w0, Default::default()),
            output: conv3(p / "output", w0, LATENT_C as i64),
        }
    }

    fn time_features(&self, t: &Tensor) -> Tensor {
        let half = self.time_dim / 2;
        let freqs = (Tensor::arange(half, (Kind::Float, t.device()))
            * (-(10_000f64.ln()) / half as f64))
            .exp();
        let args = (t * 1000.0).unsqueeze(1) * freqs.unsqueeze(0);
        Tensor::cat(&[args.sin(), args.cos()], 1)
    }

    /// Predicts `v` for a batch.
    ///
    /// * `x_t`: `(B, 4, 8, 8)`; `t`: `(B,)` float
    /// * `context`: `(B, N, 4, 8, 8)`; `actions`: `(B, N)` int64
    /// * `bucket`: `(B,)` int64; `drop`: `(B,)` bool, true zeroes the context latents
    pub fn forward(
        &self,
        x_t: &Tensor,
        t: &Tensor,
        context: &Tensor,
        actions: &Tensor,
        bucket: &Tensor,
        drop: &Tensor,
    ) -> Result<Tensor> {
        let b = x_t.size()[0];
        let lat = [LATENT_C as i64, LATENT_H as i64, LATENT_W as i64];
        if x_t.size() != [b, lat[0], lat[1], lat[2]] {
            return Err(Error::shape(
                "(B, 4, 8, 8) noised latent",
                format!("{:?}", x_t.size()),
            ));
        }
        if context.size() != [b, self.n_ctx, lat[0], lat[1], lat[2]] {
            return Err(Error::shape(
                format!("(B, {}, 4, 8, 8) context", self.n_ctx),
                format!("{:?}", context.size()),
            ));
        }
        if actions.size() != [b, self.n_ctx]
            || t.size() != [b]
            || bucket.size() != [b]
            || drop.size() != [b]
        {
            return Err(Error::shape(
                format!("actions (B, {}), t/bucket/drop (B,)", self.n_ctx),
                format!(
                    "{:?} {:?} {:?} {:?}",
                    actions.size(),
                    t.size(),
                    bucket.size(),
                    drop.size()
                ),
            ));
        }
        let keep = drop
            .logical_not()
            .to_kind(Kind::Float)
            .view([b, 1, 1, 1, 1]);
        let ctx = (context * keep).view([b, self.n_ctx * lat[0], lat[1], lat[2]]);
        let emb = self
            .time_mlp
            .1
            .forward(&self.time_mlp.0.forward(&self.time_features(t)).silu());
        let emb = (emb + self.bucket_embed.forward(bucket)).silu();
        let tokens = self.action_embed.forward(actions) + &self.action_pos;

        let h0 = self
            .d0
            .forward(&self.input.forward(&Tensor::cat(&[x_t, &ctx], 1)), &emb);
        let h1 = self
            .a1
            .forward(&self.d1.forward(&self.down0.forward(&h0), &emb), &tokens);
        let m = self.m1.forward(&self.down1.forward(&h1), &emb);
        let m = self.m2.forward(&self.am.forward(&m, &tokens), &emb);
        let u = m.upsample_nearest2d([4, 4], None, None);
        let u = self
            .au1
            .forward(&self.u1.forward(&Tensor::cat(&[u, h1], 1), &emb), &tokens);
        let u = u.upsample_nearest2d([8, 8], None, None);
        let u = self.u0.forward(&Tensor::cat(&[u, h0], 1), &emb);
        Ok(self.output.forward(&self.out_norm.forward(&u).silu()))
    }
}
