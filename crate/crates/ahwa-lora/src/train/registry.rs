//! Multi-task adapter registry: one frozen analog model, many adapter sets,
//! hot-swapped without touching a single device.

use std::collections::BTreeMap;

use crate::nn::{HwaNoiseSpec, LoraSet, ManifestEntry, TinyTransformer};
use crate::{Error, Result};

/// A trained adapter set plus its provenance.
#[derive(Debug, Clone)]
pub struct RegisteredAdapter {
    pub lora: LoraSet,
    pub task_name: String,
    pub noise: HwaNoiseSpec,
    pub checksum: u64,
}

/// Registry keyed by task id. All entries must conform to one shared
/// mapped-layer manifest (the tile set never changes between tasks).
#[derive(Debug, Clone)]
pub struct AdapterRegistry {
    manifest: Vec<ManifestEntry>,
    entries: BTreeMap<String, RegisteredAdapter>,
}

impl AdapterRegistry {
    pub fn new(manifest: Vec<ManifestEntry>) -> Self {
        AdapterRegistry { manifest, entries: BTreeMap::new() }
    }

    pub fn register(
        &mut self,
        task_id: &str,
        lora: LoraSet,
        task_name: &str,
        noise: HwaNoiseSpec,
    ) -> Result<()> {
        if lora.adapters.len() != self.manifest.len() {
            return Err(Error::Shape(format!(
                "adapter set has {} slots, manifest has {}",
                lora.adapters.len(),
                self.manifest.len()
            )));
        }
        for (slot, ad) in lora.adapters.iter().enumerate() {
            if let Some(ad) = ad {
                let e = &self.manifest[slot];
                if ad.a.nrows() != e.m || ad.b.ncols() != e.n {
                    return Err(Error::Shape(format!(
                        "adapter at slot {slot} is {}x..x{}, layer '{}' is {}x{}",
                        ad.a.nrows(),
                        ad.b.ncols(),
                        e.name,
                        e.m,
                        e.n
                    )));
                }
            }
        }
        let checksum = lora.digest();
        self.entries.insert(
            task_id.to_string(),
            RegisteredAdapter { lora, task_name: task_name.to_string(), noise, checksum },
        );
        Ok(())
    }

    pub fn get(&self, task_id: &str) -> Result<&RegisteredAdapter> {
        self.entries.get(task_id).ok_or_else(|| Error::UnknownTask(task_id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Rebind a model to a registered adapter set. Meta-weights are untouched by
/// construction; the digest assertion makes that checkable in release runs.
pub fn swap_adapter(
    registry: &AdapterRegistry,
    task_id: &str,
    model: &mut TinyTransformer,
) -> Result<()> {
    let entry = registry.get(task_id)?;
    let meta_before = model.meta_digest();
    model.lora = entry.lora.clone();
    assert_eq!(
        model.meta_digest(),
        meta_before,
        "adapter swap must not touch meta-weights"
    );
    Ok(())
}

/// Parameter accounting for serving `n_tasks` tasks from one analog model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamAccounting {
    /// Shared mapped weights + shared unmappable weights + one adapter set
    /// per task.
    pub total_ours: f64,
    /// One full mappable copy per task + shared unmappable weights.
    pub total_conventional: f64,
    pub reduction_factor: f64,
}

/// All quantities in the same unit (absolute counts or millions).
pub fn account_params(
    n_tasks: f64,
    lora_per_task: f64,
    mappable: f64,
    unmappable: f64,
) -> Result<ParamAccounting> {
    if n_tasks < 0.0 || lora_per_task < 0.0 || mappable < 0.0 || unmappable < 0.0 {
        return Err(Error::Domain("parameter counts must be >= 0".into()));
    }
    let total_ours = n_tasks * lora_per_task + mappable + unmappable;
    if total_ours == 0.0 {
        return Err(Error::Domain("total parameter count is zero".into()));
    }
    let total_conventional = n_tasks * mappable + unmappable;
    Ok(ParamAccounting {
        total_ours,
        total_conventional,
        reduction_factor: total_conventional / total_ours,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_task_accounting_matches_published_totals() {
        let acc = account_params(8.0, 1.6, 20.4, 4.9).unwrap();
        assert!((acc.total_ours - 38.1).abs() < 1e-12);
        assert!((acc.total_conventional - 168.1).abs() < 1e-12);
        assert!(acc.reduction_factor > 4.0);
        assert!((acc.reduction_factor - 168.1 / 38.1).abs() < 1e-12);
    }

    #[test]
    fn single_task_without_adapters_has_factor_one() {
        let acc = account_params(1.0, 0.0, 10.0, 2.0).unwrap();
        assert_eq!(acc.reduction_factor, 1.0);
    }

    #[test]
    fn zero_total_is_an_error() {
        assert!(account_params(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(account_params(-1.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn unknown_task_is_reported() {
        let registry = AdapterRegistry::new(vec![]);
        assert!(matches!(registry.get("nope"), Err(Error::UnknownTask(_))));
    }
}
