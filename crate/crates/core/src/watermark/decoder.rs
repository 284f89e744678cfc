//! Frozen linear message decoder over the coarse LL band.

use ndarray::{Array2, ArrayView2};

use super::dwt::{dwt_forward, ll_adjoint};
use crate::error::{Error, Result};
use crate::kinematics::logistic;
use crate::splat::Image;

/// Pyramid depth whose LL band feeds the decoder.
pub const DECODER_LEVELS: usize = 2;

/// SplitMix64. Kept local so decoder weights are reproducible from the seed
/// alone, independent of any RNG crate's stream.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in (0, 1], 53-bit resolution.
    fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller (one draw per call, cosine branch).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_open01();
        let u2 = self.next_open01();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenDecoder {
    seed: u64,
    bits: usize,
    ll_height: usize,
    ll_width: usize,
    /// `bits x (ll_height * ll_width)`.
    weights: Array2<f64>,
    bias: Vec<f64>,
}

impl FrozenDecoder {
    /// Weights and bias are i.i.d. normal with standard deviation
    /// `1/sqrt(P)`, `P` the LL pixel count, drawn weights first (row-major)
    /// then bias.
    pub fn new(seed: u64, bits: usize, ll_height: usize, ll_width: usize) -> Result<Self> {
        if bits == 0 {
            return Err(Error::param("bits", "message length must be at least 1"));
        }
        if ll_height == 0 || ll_width == 0 {
            return Err(Error::param("ll_dims", "LL band must be non-empty"));
        }
        let p = ll_height * ll_width;
        let std = 1.0 / (p as f64).sqrt();
        let mut rng = SplitMix64::new(seed);
        let weights = Array2::from_shape_simple_fn((bits, p), || std * rng.next_normal());
        let bias = (0..bits).map(|_| std * rng.next_normal()).collect();
        Ok(Self { seed, bits, ll_height, ll_width, weights, bias })
    }

    /// Decoder for images of the given size.
    pub fn for_image(seed: u64, bits: usize, height: usize, width: usize) -> Result<Self> {
        super::dwt::check_divisible(height, width, DECODER_LEVELS)?;
        Self::new(seed, bits, height >> DECODER_LEVELS, width >> DECODER_LEVELS)
    }

    /// Hand-built decoder. `seed` is reported as 0.
    pub fn from_parts(weights: Array2<f64>, bias: Vec<f64>, ll_height: usize, ll_width: usize) -> Result<Self> {
        if weights.ncols() != ll_height * ll_width {
            return Err(Error::LengthMismatch {
                context: "decoder weight columns",
                expected: ll_height * ll_width,
                actual: weights.ncols(),
            });
        }
        if bias.len() != weights.nrows() {
            return Err(Error::LengthMismatch { context: "decoder bias", expected: weights.nrows(), actual: bias.len() });
        }
        Ok(Self { seed: 0, bits: bias.len(), ll_height, ll_width, weights, bias })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn ll_dims(&self) -> (usize, usize) {
        (self.ll_height, self.ll_width)
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.ll_height << DECODER_LEVELS, self.ll_width << DECODER_LEVELS)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn logits(&self, ll: ArrayView2<f64>) -> Result<Vec<f64>> {
        if ll.dim() != (self.ll_height, self.ll_width) {
            return Err(Error::ShapeMismatch {
                context: "decoder LL band",
                expected: (self.ll_height, self.ll_width),
                actual: ll.dim(),
            });
        }
        Ok(self
            .weights
            .rows()
            .into_iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(ll.iter()).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect())
    }

    /// `W^T g`, reshaped to the LL band.
    pub fn logits_adjoint(&self, grad_logits: &[f64]) -> Array2<f64> {
        let mut out = Array2::zeros((self.ll_height, self.ll_width));
        for (row, g) in self.weights.rows().into_iter().zip(grad_logits) {
            if *g == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row.iter()) {
                *o += g * w;
            }
        }
        out
    }
}

pub fn decode_message(ll: ArrayView2<f64>, decoder: &FrozenDecoder) -> Result<Vec<f64>> {
    Ok(decoder.logits(ll)?.into_iter().map(logistic).collect())
}

/// Channel-mean of a `(k, H, W)` image.
pub fn luminance(image: &Image) -> Array2<f64> {
    let k = image.shape()[0] as f64;
    image.sum_axis(ndarray::Axis(0)) / k
}

/// Decoder logits for a full-resolution image.
pub fn image_logits(image: &Image, decoder: &FrozenDecoder) -> Result<Vec<f64>> {
    let lum = luminance(image);
    let pyr = dwt_forward(lum.view(), DECODER_LEVELS)?;
    decoder.logits(pyr.ll.view())
}

pub fn decode_image(image: &Image, decoder: &FrozenDecoder) -> Result<Vec<f64>> {
    Ok(image_logits(image, decoder)?.into_iter().map(logistic).collect())
}

/// Pulls a logit gradient back to a `(k, H, W)` image gradient.
pub fn image_logits_adjoint(grad_logits: &[f64], decoder: &FrozenDecoder, channels: usize) -> Result<Image> {
    let plane = ll_adjoint(decoder.logits_adjoint(grad_logits), DECODER_LEVELS)? / channels as f64;
    let (h, w) = plane.dim();
    Ok(Image::from_shape_fn((channels, h, w), |(_, r, c)| plane[[r, c]]))
}
