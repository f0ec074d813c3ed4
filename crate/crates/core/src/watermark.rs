//! Dithered binary QIM over block-aligned coefficient streams, and the
//! fidelity metrics used to report on it.
//!
//! Bit `b` is carried by quantising a coefficient onto the lattice
//! `Δ·ℤ + d_b` with `d₀ = −Δ/4` and `d₁ = +Δ/4`. The two lattices interleave at
//! distance `Δ/2`, so any perturbation strictly below `Δ/4` decodes correctly.

use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WatermarkError {
    #[error("quantisation step must be positive and finite, got {0}")]
    Step(f64),
    #[error("repetition must be at least 1")]
    Repetition,
    #[error("repetition {repetition} exceeds the block size {block_size}")]
    RepetitionTooLarge { repetition: usize, block_size: usize },
    #[error("stream of {total} coefficients cannot hold {blocks} blocks")]
    Layout { total: usize, blocks: usize },
    #[error("expected {expected} bits, got {got}")]
    BitCount { expected: usize, got: usize },
    #[error("stream has {got} coefficients, layout expects {expected}")]
    StreamLength { expected: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Partition of a coefficient stream into one block per fingerprint bit.
///
/// Every block holds `floor(total / blocks)` coefficients; the remainder is
/// appended to the last block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    total: usize,
    blocks: usize,
}

impl BlockLayout {
    pub fn new(total: usize, blocks: usize) -> Result<Self, WatermarkError> {
        if blocks == 0 || total < blocks {
            return Err(WatermarkError::Layout { total, blocks });
        }
        Ok(Self { total, blocks })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn block_size(&self) -> usize {
        self.total / self.blocks
    }

    pub fn range(&self, block: usize) -> Range<usize> {
        let size = self.block_size();
        let start = block * size;
        let end = if block + 1 == self.blocks {
            self.total
        } else {
            start + size
        };
        start..end
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.blocks).map(move |k| self.range(k))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QimParams {
    /// Quantisation step Δ.
    pub step: f64,
    /// Carriers per block; `None` means every coefficient of the block.
    #[serde(default)]
    pub repetition: Option<usize>,
}

impl QimParams {
    pub fn new(step: f64) -> Self {
        Self {
            step,
            repetition: None,
        }
    }

    pub fn with_repetition(mut self, r: usize) -> Self {
        self.repetition = Some(r);
        self
    }

    pub fn validate(&self) -> Result<(), WatermarkError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(WatermarkError::Step(self.step));
        }
        if self.repetition == Some(0) {
            return Err(WatermarkError::Repetition);
        }
        Ok(())
    }

    fn check_layout(&self, layout: &BlockLayout) -> Result<(), WatermarkError> {
        self.validate()?;
        match self.repetition {
            Some(r) if r > layout.block_size() => Err(WatermarkError::RepetitionTooLarge {
                repetition: r,
                block_size: layout.block_size(),
            }),
            _ => Ok(()),
        }
    }

    /// Indices of the carriers inside `block`.
    pub fn carriers(&self, block: Range<usize>) -> Range<usize> {
        match self.repetition {
            Some(r) => block.start..(block.start + r).min(block.end),
            None => block,
        }
    }

    fn dither(&self, bit: u8) -> f64 {
        if bit == 0 {
            -self.step / 4.0
        } else {
            self.step / 4.0
        }
    }
}

/// Nearest point of `Δ·ℤ + d_bit` to `x`.
pub fn quantize(x: f64, bit: u8, params: &QimParams) -> f64 {
    let d = params.dither(bit);
    params.step * ((x - d) / params.step).round() + d
}

/// Distance from `x` to the lattice of `bit`.
pub fn lattice_distance(x: f64, bit: u8, params: &QimParams) -> f64 {
    (x - quantize(x, bit, params)).abs()
}

/// Per-coefficient hard decision; equidistant values decode to 0.
pub fn decode_coefficient(x: f64, params: &QimParams) -> u8 {
    u8::from(lattice_distance(x, 1, params) < lattice_distance(x, 0, params))
}

pub fn qim_embed(
    coeffs: &[f64],
    layout: &BlockLayout,
    bits: &[u8],
    params: &QimParams,
) -> Result<Vec<f64>, WatermarkError> {
    params.check_layout(layout)?;
    if bits.len() != layout.blocks() {
        return Err(WatermarkError::BitCount {
            expected: layout.blocks(),
            got: bits.len(),
        });
    }
    if coeffs.len() != layout.total() {
        return Err(WatermarkError::StreamLength {
            expected: layout.total(),
            got: coeffs.len(),
        });
    }
    let mut out = coeffs.to_vec();
    for (block, &bit) in layout.ranges().zip(bits) {
        for x in &mut out[params.carriers(block)] {
            *x = quantize(*x, bit, params);
        }
    }
    Ok(out)
}

/// Blind extraction: per-coefficient decisions, then a majority vote over the
/// carriers of each block (ties give 0).
pub fn qim_extract(
    coeffs: &[f64],
    block_count: usize,
    params: &QimParams,
) -> Result<Vec<u8>, WatermarkError> {
    let layout = BlockLayout::new(coeffs.len(), block_count)?;
    params.check_layout(&layout)?;
    Ok(layout
        .ranges()
        .map(|block| {
            let carriers = params.carriers(block);
            let n = carriers.len();
            let ones = coeffs[carriers]
                .iter()
                .filter(|&&x| decode_coefficient(x, params) == 1)
                .count();
            u8::from(2 * ones > n)
        })
        .collect())
}

fn median_abs(values: &[f64]) -> f64 {
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    let n = mags.len();
    if n % 2 == 1 {
        mags[n / 2]
    } else {
        0.5 * (mags[n / 2 - 1] + mags[n / 2])
    }
}

/// Amplitude gain of `observed` as the ratio of median magnitudes against
/// `reference`, normally the lattice values of the base file.
pub fn estimate_gain(observed: &[f64], reference: &[f64]) -> f64 {
    let r = median_abs(reference);
    if r == 0.0 {
        return 1.0;
    }
    let g = median_abs(observed) / r;
    if g.is_finite() && g > 0.0 {
        g
    } else {
        1.0
    }
}

/// Divides `observed` by its estimated gain against `reference`.
pub fn normalize_gain(observed: &[f64], reference: &[f64]) -> Vec<f64> {
    let g = estimate_gain(observed, reference);
    observed.iter().map(|v| v / g).collect()
}

/// Bit error rate.
pub fn ber(f: &[u8], g: &[u8]) -> Result<f64, WatermarkError> {
    if f.len() != g.len() {
        return Err(WatermarkError::LengthMismatch(f.len(), g.len()));
    }
    if f.is_empty() {
        return Ok(0.0);
    }
    let diff = f.iter().zip(g).filter(|(a, b)| (**a != 0) != (**b != 0)).count();
    Ok(diff as f64 / f.len() as f64)
}

/// Normalised correlation of two binary vectors. Two all-zero vectors
/// correlate to 1; one all-zero vector against a non-zero one gives 0.
pub fn nc(f: &[u8], g: &[u8]) -> Result<f64, WatermarkError> {
    if f.len() != g.len() {
        return Err(WatermarkError::LengthMismatch(f.len(), g.len()));
    }
    let ones = |v: &[u8]| v.iter().filter(|&&b| b != 0).count() as f64;
    let (nf, ng) = (ones(f), ones(g));
    if nf == 0.0 || ng == 0.0 {
        return Ok(if nf == ng { 1.0 } else { 0.0 });
    }
    let dot = f.iter().zip(g).filter(|(a, b)| **a != 0 && **b != 0).count() as f64;
    Ok(dot / (nf * ng).sqrt())
}

/// `10·log10(peak² / MSE)`; identical inputs give `+∞`.
pub fn psnr(x: &[f64], y: &[f64], peak: f64) -> Result<f64, WatermarkError> {
    if x.len() != y.len() {
        return Err(WatermarkError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Ok(f64::INFINITY);
    }
    let mse = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// PSNR floor when every carrier moves by the maximal `Δ/2`.
pub fn psnr_bound(peak: f64, step: f64) -> f64 {
    10.0 * (peak * peak / (step / 2.0).powi(2)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> QimParams {
        QimParams::new(1.0)
    }

    #[test]
    fn quantizer_examples() {
        assert!((quantize(0.6, 0, &unit()) - 0.75).abs() < 1e-15);
        assert_eq!(quantize(0.25, 1, &unit()), 0.25);
        assert_eq!(decode_coefficient(0.75, &unit()), 0);
        assert_eq!(decode_coefficient(1.25, &unit()), 1);
    }

    #[test]
    fn embed_rejects_bad_input() {
        let layout = BlockLayout::new(4, 2).unwrap();
        assert_eq!(
            qim_embed(&[0.0; 4], &layout, &[0], &unit()),
            Err(WatermarkError::BitCount { expected: 2, got: 1 })
        );
        assert_eq!(
            qim_embed(&[0.0; 4], &layout, &[0, 1], &QimParams::new(0.0)),
            Err(WatermarkError::Step(0.0))
        );
        assert_eq!(
            qim_embed(&[0.0; 4], &layout, &[0, 1], &QimParams::new(-1.0)),
            Err(WatermarkError::Step(-1.0))
        );
        assert!(BlockLayout::new(3, 4).is_err());
    }

    #[test]
    fn layout_puts_remainder_in_last_block() {
        let l = BlockLayout::new(11, 3).unwrap();
        assert_eq!(l.block_size(), 3);
        let r: Vec<_> = l.ranges().collect();
        assert_eq!(r, vec![0..3, 3..6, 6..11]);
    }

    #[test]
    fn repetition_limits_carriers() {
        let layout = BlockLayout::new(8, 2).unwrap();
        let p = QimParams::new(1.0).with_repetition(2);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
        let y = qim_embed(&x, &layout, &[1, 0], &p).unwrap();
        assert_eq!(&y[2..4], &x[2..4]);
        assert_eq!(&y[6..8], &x[6..8]);
        assert_eq!(qim_extract(&y, 2, &p).unwrap(), vec![1, 0]);
        assert!(qim_extract(&y, 2, &QimParams::new(1.0).with_repetition(5)).is_err());
    }

    #[test]
    fn majority_vote_tolerates_minority_flips() {
        let layout = BlockLayout::new(5, 1).unwrap();
        let p = unit();
        let mut y = qim_embed(&[0.0; 5], &layout, &[1], &p).unwrap();
        y[0] += 0.5;
        y[1] += 0.5;
        assert_eq!(qim_extract(&y, 1, &p).unwrap(), vec![1]);
        y[2] += 0.5;
        assert_eq!(qim_extract(&y, 1, &p).unwrap(), vec![0]);
    }

    #[test]
    fn even_vote_tie_gives_zero() {
        let p = unit();
        let y = [0.25, -0.25];
        assert_eq!(qim_extract(&y, 1, &p).unwrap(), vec![0]);
    }

    #[test]
    fn ber_examples() {
        assert_eq!(ber(&[0, 1, 0, 1], &[0, 1, 0, 1]), Ok(0.0));
        assert_eq!(ber(&[0, 1, 0, 1], &[1, 0, 1, 0]), Ok(1.0));
        assert_eq!(ber(&[0, 0, 0, 0], &[0, 0, 0, 1]), Ok(0.25));
        assert!(ber(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn nc_examples() {
        assert_eq!(nc(&[1, 1, 1], &[1, 1, 1]), Ok(1.0));
        assert_eq!(nc(&[1, 0], &[0, 1]), Ok(0.0));
        assert!((nc(&[1, 1, 0, 0], &[1, 0, 0, 0]).unwrap() - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(nc(&[0, 0], &[0, 0]), Ok(1.0));
        assert_eq!(nc(&[0, 0], &[0, 1]), Ok(0.0));
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&[1.0, 2.0], &[1.0, 2.0], 255.0), Ok(f64::INFINITY));
        let x = vec![10.0; 64];
        let y = vec![11.0; 64];
        let v = psnr(&x, &y, 255.0).unwrap();
        assert!((v - 20.0 * 255f64.log10()).abs() < 1e-12);
        assert!((v - 48.1308).abs() < 1e-3);
        let drop = psnr_bound(1.0, 0.25) - psnr_bound(1.0, 0.5);
        assert!((drop - 20.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn gain_normalisation_undoes_scaling() {
        let reference: Vec<f64> = (0..101).map(|k| (k as f64 * 0.37).sin() * 3.0).collect();
        let scaled: Vec<f64> = reference.iter().map(|v| v * 1.1).collect();
        assert!((estimate_gain(&scaled, &reference) - 1.1).abs() < 1e-12);
        let back = normalize_gain(&scaled, &reference);
        for (a, b) in back.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn round_trip_and_distortion(
            coeffs in proptest::collection::vec(-50.0f64..50.0, 1..200),
            step in 0.01f64..4.0,
            seed in any::<u64>(),
        ) {
            let blocks = 1 + (seed as usize % coeffs.len());
            let layout = BlockLayout::new(coeffs.len(), blocks).unwrap();
            let bits: Vec<u8> = (0..blocks).map(|k| ((seed >> (k % 64)) & 1) as u8).collect();
            let p = QimParams::new(step);
            let y = qim_embed(&coeffs, &layout, &bits, &p).unwrap();
            for (a, b) in coeffs.iter().zip(&y) {
                prop_assert!((a - b).abs() <= step / 2.0 + 1e-12);
            }
            prop_assert_eq!(qim_extract(&y, blocks, &p).unwrap(), bits);
        }

        #[test]
        fn sub_quarter_noise_never_flips(
            coeffs in proptest::collection::vec(-20.0f64..20.0, 1..64),
            noise in proptest::collection::vec(-0.999f64..0.999, 64),
            bit in 0u8..2,
        ) {
            let p = QimParams::new(0.5);
            let layout = BlockLayout::new(coeffs.len(), 1).unwrap();
            let y = qim_embed(&coeffs, &layout, &[bit], &p).unwrap();
            for (x, n) in y.iter().zip(&noise) {
                prop_assert_eq!(decode_coefficient(x + n * p.step / 4.0, &p), bit);
            }
        }

        #[test]
        fn ber_complements_agreement(
            pair in proptest::collection::vec((0u8..2, 0u8..2), 1..100)
        ) {
            let (f, g): (Vec<u8>, Vec<u8>) = pair.into_iter().unzip();
            let agree = f.iter().zip(&g).filter(|(a, b)| a == b).count() as f64 / f.len() as f64;
            prop_assert_eq!(ber(&f, &g).unwrap() + agree, 1.0);
        }
    }
}
