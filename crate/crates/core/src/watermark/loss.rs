//! Message, wavelet-subband, reconstruction and total losses with their
//! gradients.

use ndarray::Array2;

use super::dwt::{dwt_forward, dwt_inverse, WaveletPyramid};
use crate::error::{Error, Result};
use crate::splat::Image;

/// Soft bits are clamped to `[SOFT_BIT_CLAMP, 1 - SOFT_BIT_CLAMP]` before logs.
pub const SOFT_BIT_CLAMP: f64 = 1e-7;

fn check_len(context: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { context, expected: b, actual: a });
    }
    Ok(())
}

fn clamp_soft(p: f64) -> f64 {
    p.clamp(SOFT_BIT_CLAMP, 1.0 - SOFT_BIT_CLAMP)
}

/// Binary cross entropy summed over bits.
pub fn message_loss(soft_bits: &[f64], message: &[u8]) -> Result<f64> {
    check_len("message loss", soft_bits.len(), message.len())?;
    Ok(soft_bits
        .iter()
        .zip(message)
        .map(|(&p, &b)| {
            let p = clamp_soft(p);
            if b == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum())
}

/// d(message_loss)/d(soft bit); zero where the clamp is active.
pub fn message_loss_grad(soft_bits: &[f64], message: &[u8]) -> Result<Vec<f64>> {
    check_len("message loss", soft_bits.len(), message.len())?;
    Ok(soft_bits
        .iter()
        .zip(message)
        .map(|(&p, &b)| {
            if p != clamp_soft(p) {
                0.0
            } else if b == 1 {
                -1.0 / p
            } else {
                1.0 / (1.0 - p)
            }
        })
        .collect())
}

/// d(message_loss)/d(logit) for `soft = logistic(logit)`: `p - b` inside the
/// clamp, zero outside it.
pub fn message_loss_logit_grad(soft_bits: &[f64], message: &[u8]) -> Result<Vec<f64>> {
    check_len("message loss", soft_bits.len(), message.len())?;
    Ok(soft_bits
        .iter()
        .zip(message)
        .map(|(&p, &b)| if p != clamp_soft(p) { 0.0 } else { p - b as f64 })
        .collect())
}

fn check_dims(image: &Image, reference: &Image) -> Result<()> {
    if image.dim() != reference.dim() {
        let (_, h, w) = image.dim();
        let (_, rh, rw) = reference.dim();
        return Err(Error::ShapeMismatch { context: "image pair", expected: (rh, rw), actual: (h, w) });
    }
    Ok(())
}

fn channel_pyramids(image: &Image, levels: usize) -> Result<Vec<WaveletPyramid>> {
    image.outer_iter().map(|plane| dwt_forward(plane, levels)).collect()
}

/// Mean absolute difference over every detail coefficient of every level
/// and channel; LL is excluded.
pub fn wavelet_subband_loss(image: &Image, reference: &Image, levels: usize) -> Result<f64> {
    check_dims(image, reference)?;
    let a = channel_pyramids(image, levels)?;
    let b = channel_pyramids(reference, levels)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (pa, pb) in a.iter().zip(&b) {
        total += pa.detail_coefficients().zip(pb.detail_coefficients()).map(|(x, y)| (x - y).abs()).sum::<f64>();
        count += pa.detail_count();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Subgradient of [`wavelet_subband_loss`] with respect to `image`, using
/// `sign(0) = 0`.
pub fn wavelet_subband_grad(image: &Image, reference: &Image, levels: usize) -> Result<Image> {
    check_dims(image, reference)?;
    let a = channel_pyramids(image, levels)?;
    let b = channel_pyramids(reference, levels)?;
    let count: usize = a.iter().map(WaveletPyramid::detail_count).sum();
    let mut out = Image::zeros(image.dim());
    if count == 0 {
        return Ok(out);
    }
    let scale = 1.0 / count as f64;
    let sign = |x: f64, y: f64| {
        let d = x - y;
        if d > 0.0 {
            scale
        } else if d < 0.0 {
            -scale
        } else {
            0.0
        }
    };
    for (ch, (pa, pb)) in a.iter().zip(&b).enumerate() {
        let g = WaveletPyramid { ll: Array2::zeros(pa.ll.dim()), details: pa.zip_details(pb, sign) };
        out.index_axis_mut(ndarray::Axis(0), ch).assign(&dwt_inverse(&g)?);
    }
    Ok(out)
}

/// Mean squared pixel error.
pub fn reconstruction_loss(image: &Image, reference: &Image) -> Result<f64> {
    check_dims(image, reference)?;
    let n = image.len().max(1) as f64;
    Ok(image.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

pub fn reconstruction_grad(image: &Image, reference: &Image) -> Result<Image> {
    check_dims(image, reference)?;
    let n = image.len().max(1) as f64;
    Ok((image - reference) * (2.0 / n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub wm: f64,
    pub wav: f64,
    pub con: f64,
    pub rec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { wm: 1.0, wav: 0.5, con: 0.1, rec: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_wm", self.wm), ("lambda_wav", self.wav), ("lambda_con", self.con), ("lambda_rec", self.rec)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(name, format!("must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub wm: f64,
    pub wav: f64,
    pub con: f64,
    pub rec: f64,
}

pub fn total_loss(c: &LossComponents, l: &LossWeights) -> Result<f64> {
    l.validate()?;
    Ok(l.wm * c.wm + l.wav * c.wav + l.con * c.con + l.rec * c.rec)
}
