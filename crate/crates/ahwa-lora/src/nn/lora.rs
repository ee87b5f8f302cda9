//! Low-rank adapters: the only trainable state after deployment.

use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use crate::util::{stream_rng, Digest};
use crate::{Error, Result};

/// One adapter pair `A (m x r)`, `B (r x n)` contributing
/// `scaling * (x A) B` on top of a frozen layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub rank: usize,
    pub scaling: f64,
}

impl LoraAdapter {
    /// Standard init: `A ~ N(0, 1/m)` (variance), `B = 0`, so the adapter is
    /// exactly the identity perturbation at start.
    pub fn init(m: usize, n: usize, rank: usize, scaling: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, &[m as u64, n as u64, rank as u64]);
        let normal = Normal::new(0.0, (1.0 / m as f64).sqrt()).unwrap();
        LoraAdapter {
            a: Array2::from_shape_fn((m, rank), |_| normal.sample(&mut rng)),
            b: Array2::zeros((rank, n)),
            rank,
            scaling,
        }
    }

    /// The dense update this adapter encodes: `scaling * A B`.
    pub fn dense_update(&self) -> Array2<f64> {
        let mut u = self.a.dot(&self.b);
        u.mapv_inplace(|v| v * self.scaling);
        u
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }
}

/// The adapter collection of one model, aligned with its mapped-layer slots.
/// Slots excluded by the placement hold `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoraSet {
    pub adapters: Vec<Option<LoraAdapter>>,
}

impl LoraSet {
    pub fn param_count(&self) -> usize {
        self.adapters.iter().flatten().map(|a| a.param_count()).sum()
    }

    pub fn digest(&self) -> u64 {
        let mut d = Digest::new();
        for (i, slot) in self.adapters.iter().enumerate() {
            d.update(&(i as u64).to_le_bytes());
            if let Some(ad) = slot {
                d.update_matrix(&ad.a);
                d.update_matrix(&ad.b);
                d.update(&ad.scaling.to_le_bytes());
            }
        }
        d.finish()
    }

    /// Serialize to the adapter checkpoint layout: a count header followed by
    /// one record per active slot (slot index, dims, rank, scaling, then A
    /// and B row-major as 32-bit floats).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"AHWLORA1");
        let active = self.adapters.iter().flatten().count() as u32;
        out.extend_from_slice(&(self.adapters.len() as u32).to_le_bytes());
        out.extend_from_slice(&active.to_le_bytes());
        for (i, slot) in self.adapters.iter().enumerate() {
            let Some(ad) = slot else { continue };
            out.extend_from_slice(&(i as u32).to_le_bytes());
            out.extend_from_slice(&(ad.a.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(ad.b.ncols() as u32).to_le_bytes());
            out.extend_from_slice(&(ad.rank as u32).to_le_bytes());
            out.extend_from_slice(&(ad.scaling as f32).to_le_bytes());
            for v in ad.a.iter().chain(ad.b.iter()) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Parse an adapter checkpoint.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::State(format!("adapter checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != b"AHWLORA1" {
            return Err(err("bad magic"));
        }
        let mut pos = 8;
        let u32_at = |pos: &mut usize| -> Result<u32> {
            if *pos + 4 > bytes.len() {
                return Err(err("truncated"));
            }
            let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
            *pos += 4;
            Ok(v)
        };
        let n_slots = u32_at(&mut pos)? as usize;
        let active = u32_at(&mut pos)? as usize;
        let mut adapters: Vec<Option<LoraAdapter>> = vec![None; n_slots];
        for _ in 0..active {
            let slot = u32_at(&mut pos)? as usize;
            let m = u32_at(&mut pos)? as usize;
            let n = u32_at(&mut pos)? as usize;
            let rank = u32_at(&mut pos)? as usize;
            let scaling = f32::from_le_bytes(
                bytes.get(pos..pos + 4).ok_or_else(|| err("truncated"))?.try_into().unwrap(),
            ) as f64;
            pos += 4;
            let count = m * rank + rank * n;
            let mut vals = Vec::with_capacity(count);
            for _ in 0..count {
                let v = f32::from_le_bytes(
                    bytes.get(pos..pos + 4).ok_or_else(|| err("truncated"))?.try_into().unwrap(),
                );
                pos += 4;
                vals.push(v as f64);
            }
            let a = Array2::from_shape_vec((m, rank), vals[..m * rank].to_vec()).unwrap();
            let b = Array2::from_shape_vec((rank, n), vals[m * rank..].to_vec()).unwrap();
            if slot >= n_slots {
                return Err(err("slot index out of range"));
            }
            adapters[slot] = Some(LoraAdapter { a, b, rank, scaling });
        }
        if pos != bytes.len() {
            return Err(err("trailing bytes"));
        }
        Ok(LoraSet { adapters })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_zero_update_and_seed_stable() {
        let a1 = LoraAdapter::init(16, 8, 4, 1.0, 7);
        let a2 = LoraAdapter::init(16, 8, 4, 1.0, 7);
        assert_eq!(a1, a2);
        assert!(a1.dense_update().iter().all(|&v| v == 0.0));
        assert_eq!(a1.param_count(), 16 * 4 + 4 * 8);
    }

    #[test]
    fn checkpoint_roundtrip_is_stable_after_one_f32_pass() {
        // The format stores f32; the first encode is lossy, after which
        // encode/decode must be exact.
        let mut set = LoraSet { adapters: vec![None; 3] };
        let mut ad = LoraAdapter::init(5, 3, 2, 1.0, 9);
        ad.b[(0, 1)] = 0.125;
        ad.a[(4, 1)] = -2.5;
        set.adapters[1] = Some(ad);
        let bytes = set.to_bytes();
        let once = LoraSet::from_bytes(&bytes).unwrap();
        assert_eq!(once.to_bytes(), bytes);
        let twice = LoraSet::from_bytes(&once.to_bytes()).unwrap();
        assert_eq!(twice, once);
        // Values exactly representable in f32 survive the first pass too.
        let ad1 = once.adapters[1].as_ref().unwrap();
        assert_eq!(ad1.b[(0, 1)], 0.125);
        assert_eq!(ad1.a[(4, 1)], -2.5);
    }

    #[test]
    fn digest_changes_with_any_element() {
        let mut set = LoraSet { adapters: vec![Some(LoraAdapter::init(4, 4, 2, 1.0, 3))] };
        let d0 = set.digest();
        set.adapters[0].as_mut().unwrap().b[(0, 0)] = 1e-9;
        assert_ne!(set.digest(), d0);
    }
}
