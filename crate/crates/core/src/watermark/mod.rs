//! Wavelet analysis, the frozen decoder, losses, gradient routing and the
//! embedding loop.

pub mod decoder;
pub mod dwt;
pub mod embed;
pub mod loss;
pub mod routing;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use decoder::{decode_image, decode_message, FrozenDecoder, DECODER_LEVELS};
pub use dwt::{dwt_forward, dwt_inverse, WaveletPyramid};
pub use embed::{embed, ConsistencyPrior, EmbedConfig, EmbedOutcome, TemporalLink, TraceRow};
pub use loss::{message_loss, total_loss, wavelet_subband_loss, LossComponents, LossWeights};
pub use routing::routed_gradient;

pub const DEFAULT_BITS: usize = 48;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatermarkMessage {
    bits: Vec<u8>,
}

impl WatermarkMessage {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::param("message", "needs at least one bit"));
        }
        if let Some(b) = bits.iter().find(|b| **b > 1) {
            return Err(Error::param("message", format!("bits must be 0 or 1, got {b}")));
        }
        Ok(Self { bits })
    }

    pub fn random(seed: u64, len: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new((0..len).map(|_| rng.random_range(0..2u8)).collect())
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

impl std::str::FromStr for WatermarkMessage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::param("message", format!("unexpected character {other:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(bits)
    }
}

impl std::fmt::Display for WatermarkMessage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_text_roundtrip() {
        let m: WatermarkMessage = "0110\n".parse().unwrap();
        assert_eq!(m.bits(), &[0, 1, 1, 0]);
        assert_eq!(m.to_string(), "0110");
        assert!("01a".parse::<WatermarkMessage>().is_err());
        assert!("".parse::<WatermarkMessage>().is_err());
    }

    #[test]
    fn random_is_seeded() {
        assert_eq!(WatermarkMessage::random(5, 48).unwrap(), WatermarkMessage::random(5, 48).unwrap());
        assert_eq!(WatermarkMessage::random(5, 48).unwrap().len(), 48);
    }
}
