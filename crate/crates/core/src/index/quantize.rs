//! Per-token uniform scalar quantization of residuals and bit packing.

use crate::error::{Error, Result};

pub const VALID_NBITS: [u8; 4] = [1, 2, 4, 8];

pub fn check_nbits(nbits: u8) -> Result<()> {
    if VALID_NBITS.contains(&nbits) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("nbits must be one of 1, 2, 4, 8; got {nbits}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub codes: Vec<u8>,
    pub scale: f32,
    pub offset: f32,
}

/// `offset = min(r)`, `scale = range / (2^nbits - 1)`, codes rounded and
/// clamped. Codes are computed against the stored `f32` scale and offset.
pub fn quantize_residual(r: &[f64], nbits: u8) -> Quantized {
    let levels = ((1u32 << nbits) - 1) as f64;
    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if r.is_empty() {
        return Quantized {
            codes: Vec::new(),
            scale: 0.0,
            offset: 0.0,
        };
    }
    let offset = lo as f32;
    let scale = ((hi - lo) / levels) as f32;
    let codes = r
        .iter()
        .map(|&v| {
            if scale == 0.0 {
                0
            } else {
                ((v - offset as f64) / scale as f64).round().clamp(0.0, levels) as u8
            }
        })
        .collect();
    Quantized { codes, scale, offset }
}

pub fn dequantize(codes: &[u8], scale: f32, offset: f32) -> Vec<f64> {
    codes.iter().map(|&c| offset as f64 + scale as f64 * c as f64).collect()
}

pub fn packed_len(n_values: usize, nbits: u8) -> usize {
    (n_values * nbits as usize).div_ceil(8)
}

/// Writes `codes` starting at value position `start`, low bits first.
pub fn pack_into(out: &mut [u8], start: usize, codes: &[u8], nbits: u8) {
    let nb = nbits as usize;
    for (i, &c) in codes.iter().enumerate() {
        let bit = (start + i) * nb;
        out[bit / 8] |= c << (bit % 8);
    }
}

pub fn unpack_into(packed: &[u8], start: usize, out: &mut [u8], nbits: u8) {
    if nbits == 8 {
        out.copy_from_slice(&packed[start..start + out.len()]);
        return;
    }
    let nb = nbits as usize;
    let mask = ((1u16 << nb) - 1) as u8;
    for (i, o) in out.iter_mut().enumerate() {
        let bit = (start + i) * nb;
        *o = (packed[bit / 8] >> (bit % 8)) & mask;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_bit_hand_case() {
        let q = quantize_residual(&[-1.0, 1.0, 0.2], 1);
        assert_eq!((q.offset, q.scale), (-1.0, 2.0));
        assert_eq!(q.codes, [0, 1, 1]);
        assert_eq!(dequantize(&q.codes, q.scale, q.offset), [-1.0, 1.0, 1.0]);
    }

    #[test]
    fn constant_residual_is_exact() {
        let q = quantize_residual(&[0.25; 5], 4);
        assert_eq!(q.codes, [0; 5]);
        assert_eq!(q.scale, 0.0);
        assert_eq!(dequantize(&q.codes, q.scale, q.offset), [0.25; 5]);
    }

    #[test]
    fn nbits_are_validated() {
        for n in VALID_NBITS {
            check_nbits(n).unwrap();
        }
        assert!(check_nbits(3).is_err());
        assert_eq!(packed_len(64 * 3, 1), 24);
        assert_eq!(packed_len(3, 2), 1);
    }

    proptest! {
        #[test]
        fn reconstruction_within_half_a_step(
            r in proptest::collection::vec(-2.0f64..2.0, 1..40),
            ni in 0usize..4,
        ) {
            let nbits = VALID_NBITS[ni];
            let q = quantize_residual(&r, nbits);
            let back = dequantize(&q.codes, q.scale, q.offset);
            let range = r.iter().cloned().fold(f64::MIN, f64::max) - r.iter().cloned().fold(f64::MAX, f64::min);
            // half a step plus f32 storage rounding of offset and scale
            let bound = q.scale as f64 / 2.0 + 1e-6 * (1.0 + range);
            for (a, b) in r.iter().zip(&back) {
                prop_assert!((a - b).abs() <= bound, "{a} {b} {bound}");
            }
            prop_assert!(q.codes.iter().all(|&c| (c as u32) < (1 << nbits)));
        }

        #[test]
        fn packing_roundtrips(codes in proptest::collection::vec(0u8..=255, 1..50), ni in 0usize..4, start in 0usize..9) {
            let nbits = VALID_NBITS[ni];
            let codes: Vec<u8> = codes.iter().map(|c| (*c as u16 & ((1 << nbits) - 1)) as u8).collect();
            let mut buf = vec![0u8; packed_len(start + codes.len(), nbits)];
            pack_into(&mut buf, start, &codes, nbits);
            let mut back = vec![0u8; codes.len()];
            unpack_into(&buf, start, &mut back, nbits);
            prop_assert_eq!(back, codes);
        }
    }
}
