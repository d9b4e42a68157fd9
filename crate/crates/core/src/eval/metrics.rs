//! Frame metrics: PSNR and a fixed random-feature perceptual distance.
//!
//! Both are computed on the content region (rows `0..48`); pad rows are excluded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::env::render::CONTENT_H;
use crate::env::Frame;
use crate::error::{Error, Result};
use crate::nn::frames_to_tensor;

pub const PSNR_CAP: f64 = 99.0;

fn check_pair(a: &Frame, b: &Frame) -> Result<()> {
    if a.width != b.width || a.height != b.height || a.pixels.len() != b.pixels.len() {
        return Err(Error::shape(
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", b.width, b.height),
        ));
    }
    Ok(())
}

fn content_rows(f: &Frame) -> usize {
    f.height.min(CONTENT_H)
}

/// Mean squared error over the content region, in byte units.
pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    check_pair(a, b)?;
    let n = content_rows(a) * a.width * 3;
    let sum: u64 = a.pixels[..n]
        .iter()
        .zip(&b.pixels[..n])
        .map(|(&x, &y)| (x as i64 - y as i64).pow(2) as u64)
        .sum();
    Ok(sum as f64 / n as f64)
}

/// MSE restricted to rows `y0..y1`.
pub fn region_mse(a: &Frame, b: &Frame, y0: usize, y1: usize) -> Result<f64> {
    check_pair(a, b)?;
    let (s, e) = (y0 * a.width * 3, y1.min(a.height) * a.width * 3);
    let sum: u64 = a.pixels[s..e]
        .iter()
        .zip(&b.pixels[s..e])
        .map(|(&x, &y)| (x as i64 - y as i64).pow(2) as u64)
        .sum();
    Ok(sum as f64 / (e - s).max(1) as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// `10 log10(255^2 / MSE)`, capped at [`PSNR_CAP`] for identical frames.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub const PDIST_SEED: u64 = 0x9d15_7a11;
const PDIST_WIDTHS: [i64; 4] = [16, 32, 32, 32];

/// Perceptual-distance proxy: unit-normalized features of a fixed, seeded,
/// randomly initialized 4-layer conv stack, squared distance averaged over
/// positions then over layers.
#[derive(Debug)]
pub struct PDist {
    weights: Vec<Tensor>,
}

impl Default for PDist {
    fn default() -> Self {
        Self::new(PDIST_SEED)
    }
}

impl PDist {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let mut weights = Vec::new();
        for &cout in &PDIST_WIDTHS {
            let n = (cout * cin * 9) as usize;
            let bound = (3.0 / (cin * 9) as f32).sqrt();
            let w: Vec<f32> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            weights.push(Tensor::from_slice(&w).view([cout, cin, 3, 3]));
            cin = cout;
        }
        PDist { weights }
    }

    fn features(&self, x: &Tensor) -> Vec<Tensor> {
        let mut h = x.narrow(2, 0, CONTENT_H as i64);
        let mut out = Vec::new();
        for (i, w) in self.weights.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            h = h
                .conv2d(w, None::<Tensor>, [stride, stride], [1, 1], [1, 1], 1)
                .relu();
            let norm = (h.square().sum_dim_intlist(1, true, Kind::Float) + 1e-10).sqrt();
            out.push(&h / norm);
        }
        out
    }

    /// Distances for aligned frame lists.
    pub fn batch(&self, a: &[&Frame], b: &[&Frame]) -> Result<Vec<f64>> {
        if a.len() != b.len() {
            return Err(Error::shape(format!("{} frames", a.len()), b.len()));
        }
        for (x, y) in a.iter().zip(b) {
            check_pair(x, y)?;
        }
        let mut out = Vec::with_capacity(a.len());
        for (ca, cb) in a.chunks(128).zip(b.chunks(128)) {
            let (fa, fb) = tch::no_grad(|| -> Result<_> {
                Ok((
                    self.features(&frames_to_tensor(ca)?),
                    self.features(&frames_to_tensor(cb)?),
                ))
            })?;
            let mut total = Tensor::zeros([ca.len() as i64], (Kind::Float, tch::Device::Cpu));
            for (x, y) in fa.iter().zip(&fb) {
                total += (x - y)
                    .square()
                    .sum_dim_intlist(1, false, Kind::Float)
                    .mean_dim([1i64, 2].as_slice(), false, Kind::Float);
            }
            let total = total / fa.len() as f64;
            out.extend(Vec::<f32>::try_from(total)?.into_iter().map(|v| v as f64));
        }
        // Identical inputs give identical features; pin that to exactly zero.
        for (i, d) in out.iter_mut().enumerate() {
            if a[i].pixels == b[i].pixels {
                *d = 0.0;
            }
        }
        Ok(out)
    }

    pub fn distance(&self, a: &Frame, b: &Frame) -> Result<f64> {
        Ok(self.batch(&[a], &[b])?[0])
    }
}

/// Mean, standard error and count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            stderr: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, stderr, n }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
