//! Modality-wise Bernoulli feature masking, applied during training only.
//!
//! Masks are literal `x ⊙ m` with no rescaling, so training sees features
//! shrunk by `1 − r` on average while evaluation sees them unmasked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, input_err, Result};
use crate::numeric::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskConfig {
    /// Probability that a feature is zeroed.
    pub ratio: f64,
    pub seed: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { ratio: 0.3, seed: 0 }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(input_err!("mask ratio must lie in [0, 1], got {}", self.ratio));
        }
        Ok(())
    }
}

/// Draws `length` independent Bernoulli(1 − r) entries.
///
/// The stream is keyed by `(cfg.seed, draw_id)`, so any draw can be
/// reproduced on its own regardless of what was drawn before it.
pub fn sample_mask(length: usize, cfg: &MaskConfig, draw_id: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    if length == 0 {
        return Err(input_err!("mask length must be at least 1"));
    }
    let keep = 1.0 - cfg.ratio;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(draw_id);
    Ok((0..length)
        .map(|_| if rng.random::<f64>() < keep { 1.0 } else { 0.0 })
        .collect())
}

/// Element-wise `x ⊙ m`.
pub fn apply_mask(x: &Tensor, m: &[f64]) -> Result<Tensor> {
    if m.len() != x.numel() {
        return Err(dim_err!("mask of length {} for {} features", m.len(), x.numel()));
    }
    let data = x.data().iter().zip(m).map(|(a, b)| a * b).collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extreme_ratios() {
        let ones = sample_mask(1000, &MaskConfig { ratio: 0.0, seed: 4 }, 0).unwrap();
        assert!(ones.iter().all(|&v| v == 1.0));
        let zeros = sample_mask(1000, &MaskConfig { ratio: 1.0, seed: 4 }, 0).unwrap();
        assert!(zeros.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn keep_rate_close_to_one_minus_r() {
        let m = sample_mask(100_000, &MaskConfig { ratio: 0.3, seed: 17 }, 3).unwrap();
        let rate = m.iter().sum::<f64>() / m.len() as f64;
        assert!((rate - 0.7).abs() < 0.005, "{rate}");
    }

    #[test]
    fn draws_are_keyed() {
        let cfg = MaskConfig { ratio: 0.5, seed: 1 };
        assert_eq!(sample_mask(64, &cfg, 9).unwrap(), sample_mask(64, &cfg, 9).unwrap());
        assert_ne!(sample_mask(64, &cfg, 9).unwrap(), sample_mask(64, &cfg, 10).unwrap());
    }

    #[test]
    fn invalid_inputs() {
        assert!(sample_mask(4, &MaskConfig { ratio: 1.5, seed: 0 }, 0).is_err());
        assert!(sample_mask(4, &MaskConfig { ratio: -0.1, seed: 0 }, 0).is_err());
        assert!(sample_mask(0, &MaskConfig::default(), 0).is_err());
        let x = Tensor::filled(&[3], 1.0);
        assert!(matches!(apply_mask(&x, &[1.0, 0.0]), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn apply_cases() {
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(apply_mask(&x, &[1.0, 1.0, 1.0]).unwrap(), x);
        assert_eq!(apply_mask(&x, &[0.0; 3]).unwrap().data(), &[0.0; 3]);
        assert_eq!(apply_mask(&x, &[1.0, 0.0, 1.0]).unwrap().data(), &[1.0, 0.0, 3.0]);
    }

    #[test]
    fn idempotent() {
        let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.5, 0.0, -7.0]).unwrap();
        let m = sample_mask(6, &MaskConfig { ratio: 0.4, seed: 8 }, 1).unwrap();
        let once = apply_mask(&x, &m).unwrap();
        assert_eq!(apply_mask(&once, &m).unwrap(), once);
    }
}
