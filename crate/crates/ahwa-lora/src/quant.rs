//! Symmetric mid-tread uniform quantization, shared by the DAC and ADC models.
//!
//! A `bits`-wide converter has `2^bits - 1` levels placed symmetrically on
//! `[-bound, +bound]` with zero as an exact level, so the step is
//! `2*bound / (2^bits - 2)`. Values outside the range clamp to the extreme
//! levels; ties round half away from zero.

use crate::{Error, Result};

/// Number of representable levels for a bit width.
pub fn level_count(bits: u32) -> u64 {
    (1u64 << bits) - 1
}

/// Quantization step for a bit width and full-scale bound.
pub fn step(bits: u32, bound: f64) -> f64 {
    bound / ((1u64 << (bits - 1)) - 1) as f64
}

/// Half the quantization step: the worst-case in-range error.
pub fn half_lsb(bits: u32, bound: f64) -> f64 {
    0.5 * step(bits, bound)
}

/// Quantize a scalar to the nearest level.
pub fn quantize(v: f64, bits: u32, bound: f64) -> f64 {
    debug_assert!((2..=16).contains(&bits), "converter bits must be in [2, 16]");
    debug_assert!(bound > 0.0, "converter bound must be > 0");
    let delta = step(bits, bound);
    let k_max = ((1u64 << (bits - 1)) - 1) as f64;
    // f64::round rounds half away from zero, the tie rule used here.
    let k = (v / delta).round().clamp(-k_max, k_max);
    // + 0.0 canonicalizes -0.0 so each level has one representation.
    k * delta + 0.0
}

/// Quantize a slice in place.
pub fn quantize_slice(vs: &mut [f64], bits: u32, bound: f64) {
    for v in vs.iter_mut() {
        *v = quantize(*v, bits, bound);
    }
}

/// Validate converter bit widths and bounds.
pub fn validate(bits: u32, bound: f64) -> Result<()> {
    if !(2..=16).contains(&bits) {
        return Err(Error::Config(format!("converter bits {} outside [2, 16]", bits)));
    }
    if !(bound > 0.0) {
        return Err(Error::Config(format!("converter bound {} must be > 0", bound)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn two_bit_levels_are_minus_one_zero_one() {
        assert_eq!(quantize(0.4, 2, 1.0), 0.0);
        assert_eq!(quantize(0.6, 2, 1.0), 1.0);
        assert_eq!(quantize(-0.6, 2, 1.0), -1.0);
        assert_eq!(quantize(3.0, 2, 1.0), 1.0); // clamps
    }

    #[test]
    fn ties_round_half_away_from_zero() {
        // bits=2, bound=1: the tie at 0.5 goes to 1, at -0.5 to -1.
        assert_eq!(quantize(0.5, 2, 1.0), 1.0);
        assert_eq!(quantize(-0.5, 2, 1.0), -1.0);
    }

    #[test]
    fn eight_bit_output_code_count() {
        let mut codes = BTreeSet::new();
        let n = 200_000;
        for i in 0..=n {
            let x = -1.5 + 3.0 * i as f64 / n as f64;
            codes.insert(quantize(x, 8, 1.0).to_bits());
        }
        assert!(codes.len() as u64 <= level_count(8));
        assert_eq!(codes.len() as u64, 255);
    }

    proptest! {
        #[test]
        fn idempotent_and_odd_symmetric(v in -4.0f64..4.0, bits in 2u32..=16, bound in 0.1f64..10.0) {
            let q = quantize(v, bits, bound);
            prop_assert_eq!(quantize(q, bits, bound).to_bits(), q.to_bits());
            prop_assert_eq!(quantize(-v, bits, bound), -q);
        }

        #[test]
        fn in_range_error_is_at_most_half_lsb(v in -1.0f64..1.0, bits in 2u32..=16) {
            let bound = 1.0;
            let q = quantize(v, bits, bound);
            prop_assert!((q - v).abs() <= half_lsb(bits, bound) * (1.0 + 1e-12));
        }
    }
}
