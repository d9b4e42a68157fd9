//! Schedule and sampler algebra.
//!
//! Scalar-coefficient functions are shared by slice implementations (generic
//! over the float type, used for exact checks) and tensor implementations
//! (used by training and sampling).

use num_traits::Float;
use serde::{Deserialize, Serialize};
use tch::Tensor;

use crate::error::{Error, Result};

/// `alpha_bar(t) = 1 - (1 - alpha_bar_min) t` on `t in [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub alpha_bar_min: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            alpha_bar_min: 1e-4,
        }
    }
}

impl NoiseSchedule {
    pub fn alpha_bar(&self, t: f64) -> f64 {
        1.0 - (1.0 - self.alpha_bar_min) * t
    }

    pub fn check_t(t: f64) -> Result<()> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(Error::range("diffusion time t", t))
        }
    }

    /// `(sqrt(alpha_bar), sqrt(1 - alpha_bar))` at `t`.
    pub fn coefficients(&self, t: f64) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        (ab.sqrt(), (1.0 - ab).sqrt())
    }
}

fn same_len<F>(a: &[F], b: &[F]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::shape(format!("{} values", a.len()), b.len()))
    }
}

fn lin<F: Float>(ca: f64, a: &[F], cb: f64, b: &[F]) -> Vec<F> {
    let (ca, cb) = (F::from(ca).unwrap(), F::from(cb).unwrap());
    a.iter().zip(b).map(|(&x, &y)| ca * x + cb * y).collect()
}

/// `x_t = sqrt(ab) x0 + sqrt(1 - ab) eps`.
pub fn forward_diffuse<F: Float>(s: &NoiseSchedule, x0: &[F], t: f64, eps: &[F]) -> Result<Vec<F>> {
    NoiseSchedule::check_t(t)?;
    same_len(x0, eps)?;
    let (a, b) = s.coefficients(t);
    Ok(lin(a, x0, b, eps))
}

/// `v = sqrt(ab) eps - sqrt(1 - ab) x0`.
pub fn velocity_target<F: Float>(s: &NoiseSchedule, x0: &[F], eps: &[F], t: f64) -> Result<Vec<F>> {
    NoiseSchedule::check_t(t)?;
    same_len(x0, eps)?;
    let (a, b) = s.coefficients(t);
    Ok(lin(a, eps, -b, x0))
}

/// `x0 = sqrt(ab) x_t - sqrt(1 - ab) v`.
pub fn predict_x0<F: Float>(s: &NoiseSchedule, x_t: &[F], v: &[F], t: f64) -> Result<Vec<F>> {
    NoiseSchedule::check_t(t)?;
    same_len(x_t, v)?;
    let (a, b) = s.coefficients(t);
    Ok(lin(a, x_t, -b, v))
}

/// `eps = sqrt(1 - ab) x_t + sqrt(ab) v`.
pub fn predict_eps<F: Float>(s: &NoiseSchedule, x_t: &[F], v: &[F], t: f64) -> Result<Vec<F>> {
    NoiseSchedule::check_t(t)?;
    same_len(x_t, v)?;
    let (a, b) = s.coefficients(t);
    Ok(lin(b, x_t, a, v))
}

/// Deterministic DDIM update from `t` to `t_next < t` (equal times are the identity).
pub fn ddim_step<F: Float>(
    s: &NoiseSchedule,
    x_t: &[F],
    v: &[F],
    t: f64,
    t_next: f64,
) -> Result<Vec<F>> {
    check_order(t, t_next)?;
    if t_next == t {
        return Ok(x_t.to_vec());
    }
    let x0 = predict_x0(s, x_t, v, t)?;
    let eps = predict_eps(s, x_t, v, t)?;
    let (a, b) = s.coefficients(t_next);
    Ok(lin(a, &x0, b, &eps))
}

fn check_order(t: f64, t_next: f64) -> Result<()> {
    NoiseSchedule::check_t(t)?;
    NoiseSchedule::check_t(t_next)?;
    if t_next > t {
        return Err(Error::range(
            "DDIM step (t_next must not exceed t)",
            format!("t={t}, t_next={t_next}"),
        ));
    }
    Ok(())
}

/// `v = v_uncond + w (v_cond - v_uncond)`.
pub fn cfg_combine<F: Float>(v_cond: &[F], v_uncond: &[F], w: f64) -> Result<Vec<F>> {
    same_len(v_cond, v_uncond)?;
    let w = F::from(w).unwrap();
    Ok(v_cond
        .iter()
        .zip(v_uncond)
        .map(|(&c, &u)| u + w * (c - u))
        .collect())
}

/// Context-noise augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugSpec {
    pub max_level: f64,
    pub buckets: usize,
}

impl Default for AugSpec {
    fn default() -> Self {
        AugSpec {
            max_level: 0.7,
            buckets: 10,
        }
    }
}

impl AugSpec {
    /// `min(buckets - 1, floor(alpha / (max_level / buckets)))`.
    pub fn bucket(&self, alpha: f64) -> Result<usize> {
        self.check(alpha)?;
        // The tolerance keeps exact multiples (0.35 -> 5) from rounding down.
        let b = (alpha / self.max_level * self.buckets as f64 + 1e-9).floor() as usize;
        Ok(b.min(self.buckets - 1))
    }

    pub fn check(&self, alpha: f64) -> Result<()> {
        if (0.0..=self.max_level + 1e-12).contains(&alpha) {
            Ok(())
        } else {
            Err(Error::range("augmentation level", alpha))
        }
    }
}

/// Mixes context latents with noise: `sqrt(1 - alpha) z + sqrt(alpha) eps`.
pub fn augment_context<F: Float>(
    spec: &AugSpec,
    latents: &[F],
    alpha: f64,
    eps: &[F],
) -> Result<(Vec<F>, usize)> {
    let bucket = spec.bucket(alpha)?;
    same_len(latents, eps)?;
    if alpha == 0.0 {
        return Ok((latents.to_vec(), bucket));
    }
    Ok((
        lin((1.0 - alpha).sqrt(), latents, alpha.sqrt(), eps),
        bucket,
    ))
}

/// Tensor counterparts. Per-item coefficients broadcast over trailing dims.
pub mod batched {
    use super::*;

    fn per_item(values: &[f64], like: &Tensor) -> Tensor {
        let mut shape = vec![values.len() as i64];
        shape.extend(std::iter::repeat_n(1, like.dim() - 1));
        Tensor::from_slice(&values.iter().map(|&v| v as f32).collect::<Vec<_>>())
            .view(shape.as_slice())
            .to_kind(like.kind())
    }

    fn coeffs(s: &NoiseSchedule, ts: &[f64], like: &Tensor) -> (Tensor, Tensor) {
        let (a, b): (Vec<f64>, Vec<f64>) = ts.iter().map(|&t| s.coefficients(t)).unzip();
        (per_item(&a, like), per_item(&b, like))
    }

    pub fn forward_diffuse(s: &NoiseSchedule, x0: &Tensor, ts: &[f64], eps: &Tensor) -> Tensor {
        let (a, b) = coeffs(s, ts, x0);
        a * x0 + b * eps
    }

    pub fn velocity_target(s: &NoiseSchedule, x0: &Tensor, eps: &Tensor, ts: &[f64]) -> Tensor {
        let (a, b) = coeffs(s, ts, x0);
        a * eps - b * x0
    }

    pub fn predict_x0(s: &NoiseSchedule, x_t: &Tensor, v: &Tensor, ts: &[f64]) -> Tensor {
        let (a, b) = coeffs(s, ts, x_t);
        a * x_t - b * v
    }

    pub fn predict_eps(s: &NoiseSchedule, x_t: &Tensor, v: &Tensor, ts: &[f64]) -> Tensor {
        let (a, b) = coeffs(s, ts, x_t);
        b * x_t + a * v
    }

    pub fn ddim_step(
        s: &NoiseSchedule,
        x_t: &Tensor,
        v: &Tensor,
        t: f64,
        t_next: f64,
    ) -> Result<Tensor> {
        check_order(t, t_next)?;
        if t_next == t {
            return Ok(x_t.shallow_clone());
        }
        let n = x_t.size()[0] as usize;
        let x0 = predict_x0(s, x_t, v, &vec![t; n]);
        let eps = predict_eps(s, x_t, v, &vec![t; n]);
        let (a, b) = s.coefficients(t_next);
        Ok(x0 * a + eps * b)
    }

    pub fn cfg_combine(v_cond: &Tensor, v_uncond: &Tensor, w: f64) -> Tensor {
        v_uncond + (v_cond - v_uncond) * w
    }

    /// Augments `(B, ...)` context with per-item levels.
    pub fn augment_context(latents: &Tensor, alphas: &[f64], eps: &Tensor) -> Tensor {
        let a: Vec<f64> = alphas.iter().map(|a| (1.0 - a).sqrt()).collect();
        let b: Vec<f64> = alphas.iter().map(|a| a.sqrt()).collect();
        per_item(&a, latents) * latents + per_item(&b, latents) * eps
    }
}
