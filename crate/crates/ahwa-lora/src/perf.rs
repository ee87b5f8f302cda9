//! Analytic performance model of the hybrid pipeline: an analog tile
//! performs the static `x W` products while a digital multi-core cluster
//! computes the low-rank `x A B` update and the final add for `t` tokens at
//! a time. The two stages plus the tile-to-cluster transfer form a
//! three-stage linear pipeline over a full sequence.
//!
//! Latency is modeled in closed form: the tile integrates one token per
//! `T_int`, the cluster retires one fused multiply-accumulate per block per
//! cycle plus a fixed per-invocation overhead, and the transfer is bounded
//! by DMA bandwidth. The defaults (500 MHz clock, 32 FMA blocks, FP16
//! elements, 64-cycle invocation overhead, 8 B/cycle DMA) reproduce the
//! cluster-to-tile latency ratios and the scratchpad footprints reported for
//! this architecture to within a few percent.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One evaluation point of the hybrid pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineScenario {
    /// Layer shape: `m` inputs, `n` outputs.
    pub m: usize,
    pub n: usize,
    /// LoRA rank.
    pub r: usize,
    /// Parallel tokens per pipeline chunk.
    pub t: usize,
    /// Analog integration time per token (ns).
    pub t_int_ns: f64,
    pub fma_blocks: usize,
    pub clock_hz: f64,
    /// Bytes per staged element (2 = FP16).
    pub elem_bytes: usize,
    /// Cluster scratchpad capacity (bytes).
    pub tcdm_bytes_cap: usize,
    pub dma_bw_bytes_per_cycle: usize,
    /// Fixed cycles per cluster invocation (kernel setup, loop prologue).
    pub fixed_overhead_cycles: usize,
    /// Count the elementwise add as one op per output element; switching it
    /// off models a fused accumulate.
    pub count_add: bool,
    /// Sequence length processed per layer.
    pub seq_len: usize,
}

impl Default for PipelineScenario {
    fn default() -> Self {
        PipelineScenario {
            m: 512,
            n: 128,
            r: 8,
            t: 8,
            t_int_ns: 128.0,
            fma_blocks: 32,
            clock_hz: 5e8,
            elem_bytes: 2,
            tcdm_bytes_cap: 128 * 1024,
            dma_bw_bytes_per_cycle: 8,
            fixed_overhead_cycles: 64,
            count_add: true,
            seq_len: 320,
        }
    }
}

impl PipelineScenario {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.t == 0 || self.seq_len == 0 {
            return Err(Error::Config("scenario dimensions must be positive".into()));
        }
        if self.fma_blocks == 0 || self.dma_bw_bytes_per_cycle == 0 || self.elem_bytes == 0 {
            return Err(Error::Config("cluster parameters must be positive".into()));
        }
        if !(self.clock_hz > 0.0) || !(self.t_int_ns > 0.0) {
            return Err(Error::Config("clock and integration time must be positive".into()));
        }
        Ok(())
    }

    fn cycles_to_ns(&self, cycles: u64) -> f64 {
        cycles as f64 / self.clock_hz * 1e9
    }
}

/// Analog latency for one chunk: the tile integrates `t` tokens
/// sequentially.
pub fn aimc_latency_ns(sc: &PipelineScenario) -> f64 {
    sc.t as f64 * sc.t_int_ns
}

/// Cluster MAC count for one chunk: `x A` plus `(x A) B` plus the final add.
/// No LoRA (`r = 0`) means the cluster is never invoked.
pub fn pmca_ops(sc: &PipelineScenario) -> u64 {
    if sc.r == 0 {
        return 0;
    }
    let add = if sc.count_add { sc.n } else { 0 };
    (sc.t * (sc.m * sc.r + sc.r * sc.n + add)) as u64
}

/// Cluster latency for one chunk.
pub fn pmca_latency_ns(sc: &PipelineScenario) -> f64 {
    let ops = pmca_ops(sc);
    if ops == 0 {
        return 0.0;
    }
    let cycles = ops.div_ceil(sc.fma_blocks as u64) + sc.fixed_overhead_cycles as u64;
    sc.cycles_to_ns(cycles)
}

/// Tile-to-cluster transfer latency for one chunk of `t` output rows.
pub fn transfer_latency_ns(sc: &PipelineScenario) -> f64 {
    if pmca_ops(sc) == 0 {
        return 0.0;
    }
    let bytes = (sc.elem_bytes * sc.t * sc.n) as u64;
    let cycles = bytes.div_ceil(sc.dma_bw_bytes_per_cycle as u64);
    sc.cycles_to_ns(cycles)
}

/// Cluster scratchpad bytes: staged inputs and tile outputs for `t` tokens,
/// both adapter matrices, and the `x A` intermediate.
pub fn tcdm_bytes(sc: &PipelineScenario) -> usize {
    sc.elem_bytes * (sc.t * sc.m + sc.t * sc.n + sc.m * sc.r + sc.r * sc.n + sc.t * sc.r)
}

/// Which stage bounds the steady-state pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bottleneck {
    Aimc,
    Transfer,
    Pmca,
}

/// Latency breakdown for one full sequence through the three-stage pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub total_ns: f64,
    /// Tile-only latency for the same sequence (no adapters at all).
    pub baseline_ns: f64,
    pub overhead_factor: f64,
    pub bottleneck: Bottleneck,
    pub tcdm_bytes: usize,
    /// The chunk working set exceeds the scratchpad; the schedule would need
    /// extra spills to main memory (latency not modeled).
    pub tcdm_spill: bool,
    pub chunks: usize,
}

/// Steady-state three-stage pipeline over `ceil(seq_len / t)` chunks:
/// fill time (one pass through all stages) plus the bottleneck stage for
/// every further chunk. With no cluster work at all the pipeline degenerates
/// to the tile alone and the overhead factor is exactly 1.
pub fn pipeline_total_ns(sc: &PipelineScenario) -> Result<PipelineReport> {
    sc.validate()?;
    if sc.seq_len < sc.t {
        return Err(Error::Config(format!(
            "seq_len {} smaller than the parallel-token chunk {}",
            sc.seq_len, sc.t
        )));
    }
    let chunks = sc.seq_len.div_ceil(sc.t);
    let aimc = aimc_latency_ns(sc);
    let baseline_ns = chunks as f64 * aimc;
    let pmca = pmca_latency_ns(sc);
    let transfer = transfer_latency_ns(sc);
    let mem = tcdm_bytes(sc);

    if pmca == 0.0 && transfer == 0.0 {
        return Ok(PipelineReport {
            total_ns: baseline_ns,
            baseline_ns,
            overhead_factor: 1.0,
            bottleneck: Bottleneck::Aimc,
            tcdm_bytes: mem,
            tcdm_spill: mem > sc.tcdm_bytes_cap,
            chunks,
        });
    }

    let stages =
        [(aimc, Bottleneck::Aimc), (transfer, Bottleneck::Transfer), (pmca, Bottleneck::Pmca)];
    let (max_stage, bottleneck) =
        stages.iter().copied().max_by(|a, b| a.0.partial_cmp(&b.0).unwrap()).unwrap();
    let fill: f64 = aimc + transfer + pmca;
    let total_ns = fill + (chunks as f64 - 1.0) * max_stage;
    Ok(PipelineReport {
        total_ns,
        baseline_ns,
        overhead_factor: total_ns / baseline_ns,
        bottleneck,
        tcdm_bytes: mem,
        tcdm_spill: mem > sc.tcdm_bytes_cap,
        chunks,
    })
}

/// One row of a balance sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub m: usize,
    pub n: usize,
    pub t_int_ns: f64,
    /// The parallel-token count minimizing total pipeline latency.
    pub best_t: usize,
    /// Cluster-to-tile latency ratio at `best_t`.
    pub ratio: f64,
    pub tcdm_bytes: usize,
    pub overhead_factor: f64,
    pub tcdm_spill: bool,
    pub total_ns: f64,
}

/// For every (shape, integration time), find the parallel-token count
/// minimizing total latency and report the latency balance there.
pub fn sweep_balance(
    shapes: &[(usize, usize)],
    t_ints_ns: &[f64],
    t_values: &[usize],
    proto: &PipelineScenario,
) -> Result<Vec<SweepRow>> {
    if shapes.is_empty() || t_ints_ns.is_empty() || t_values.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    let mut rows = Vec::with_capacity(shapes.len() * t_ints_ns.len());
    for &(m, n) in shapes {
        for &t_int in t_ints_ns {
            let mut best: Option<(PipelineReport, usize)> = None;
            for &t in t_values {
                let sc = PipelineScenario { m, n, t, t_int_ns: t_int, ..proto.clone() };
                let report = pipeline_total_ns(&sc)?;
                let better = match &best {
                    None => true,
                    Some((b, _)) => report.total_ns < b.total_ns,
                };
                if better {
                    best = Some((report, t));
                }
            }
            let (report, best_t) = best.unwrap();
            let sc = PipelineScenario { m, n, t: best_t, t_int_ns: t_int, ..proto.clone() };
            let aimc = aimc_latency_ns(&sc);
            rows.push(SweepRow {
                m,
                n,
                t_int_ns: t_int,
                best_t,
                ratio: pmca_latency_ns(&sc) / aimc,
                tcdm_bytes: report.tcdm_bytes,
                overhead_factor: report.overhead_factor,
                tcdm_spill: report.tcdm_spill,
                total_ns: report.total_ns,
            });
        }
    }
    Ok(rows)
}

/// The published reference grids: 128x128 and 512x128 layers, integration
/// times {128, 256, 512} ns, parallel tokens {8, 16, 32, 64, 128}.
pub fn reference_grids() -> (Vec<(usize, usize)>, Vec<f64>, Vec<usize>) {
    (vec![(128, 128), (512, 128)], vec![128.0, 256.0, 512.0], vec![8, 16, 32, 64, 128])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(m: usize, n: usize, r: usize, t: usize, t_int: f64) -> PipelineScenario {
        PipelineScenario { m, n, r, t, t_int_ns: t_int, ..Default::default() }
    }

    #[test]
    fn aimc_latency_is_tokens_times_integration() {
        assert_eq!(aimc_latency_ns(&sc(512, 128, 8, 1, 128.0)), 128.0);
        assert_eq!(aimc_latency_ns(&sc(512, 128, 8, 128, 128.0)), 16384.0);
        assert_eq!(aimc_latency_ns(&sc(512, 128, 8, 8, 512.0)), 4096.0);
    }

    #[test]
    fn pmca_cycles_match_hand_arithmetic_without_overhead() {
        // 512x128, r=8, t=128: 671744 MACs, 20992 cycles, 41984 ns at 500 MHz.
        let mut s = sc(512, 128, 8, 128, 128.0);
        s.fixed_overhead_cycles = 0;
        assert_eq!(pmca_ops(&s), 671_744);
        assert_eq!(pmca_latency_ns(&s), 41_984.0);
        assert!((pmca_latency_ns(&s) / aimc_latency_ns(&s) - 2.5625).abs() < 1e-12);

        let mut s = sc(128, 128, 8, 128, 128.0);
        s.fixed_overhead_cycles = 0;
        assert!((pmca_latency_ns(&s) / aimc_latency_ns(&s) - 1.0625).abs() < 1e-12);
    }

    #[test]
    fn no_lora_and_no_add_means_no_cluster_work() {
        let mut s = sc(512, 128, 0, 64, 128.0);
        s.count_add = false;
        assert_eq!(pmca_ops(&s), 0);
        assert_eq!(pmca_latency_ns(&s), 0.0);
        assert_eq!(transfer_latency_ns(&s), 0.0);
        // r = 0 alone already disables the cluster: there is nothing to add.
        let s2 = sc(512, 128, 0, 64, 128.0);
        assert_eq!(pmca_ops(&s2), 0);
    }

    #[test]
    fn tcdm_matches_published_endpoints() {
        // Small layer, few tokens: 8320 B (within 2% of 8.2 KiB).
        let small = tcdm_bytes(&sc(128, 128, 8, 8, 128.0));
        assert_eq!(small, 8320);
        assert!((small as f64 - 8.2 * 1024.0).abs() / (8.2 * 1024.0) < 0.02);
        // Large layer, many tokens: exactly 172 KiB.
        let large = tcdm_bytes(&sc(512, 128, 8, 128, 128.0));
        assert_eq!(large, 176_128);
        assert_eq!(large, 172 * 1024);
        // No tokens staged: adapter matrices only.
        let mut s = sc(512, 128, 8, 1, 128.0);
        s.t = 0;
        assert_eq!(tcdm_bytes(&s), 2 * (512 * 8 + 8 * 128));
    }

    #[test]
    fn pipeline_degenerates_to_baseline_without_cluster_work() {
        let mut s = sc(512, 128, 0, 8, 128.0);
        s.count_add = false;
        let rep = pipeline_total_ns(&s).unwrap();
        assert_eq!(rep.overhead_factor, 1.0);
        assert_eq!(rep.total_ns, rep.baseline_ns);
        assert_eq!(rep.bottleneck, Bottleneck::Aimc);
    }

    #[test]
    fn pipeline_lower_bounds_hold() {
        for t in [8usize, 16, 32, 64, 128] {
            for t_int in [128.0, 256.0, 512.0] {
                let s = sc(512, 128, 8, t, t_int);
                let rep = pipeline_total_ns(&s).unwrap();
                let stages = [aimc_latency_ns(&s), transfer_latency_ns(&s), pmca_latency_ns(&s)];
                let max = stages.iter().fold(0.0f64, |a, &b| a.max(b));
                assert!(rep.total_ns >= rep.chunks as f64 * max - 1e-9);
                assert!(rep.total_ns >= rep.baseline_ns);
            }
        }
    }

    #[test]
    fn latencies_are_monotone_and_scale_free() {
        let mut prev_aimc = 0.0;
        let mut prev_ops = 0;
        let mut prev_mem = 0;
        for t in [8usize, 16, 32, 64, 128] {
            let s = sc(256, 128, 8, t, 128.0);
            assert!(aimc_latency_ns(&s) > prev_aimc);
            assert!(pmca_ops(&s) > prev_ops);
            assert!(tcdm_bytes(&s) > prev_mem);
            prev_aimc = aimc_latency_ns(&s);
            prev_ops = pmca_ops(&s);
            prev_mem = tcdm_bytes(&s);
        }
        // tcdm strictly increases in each of m, n, r.
        let base = tcdm_bytes(&sc(64, 64, 4, 8, 128.0));
        assert!(tcdm_bytes(&sc(65, 64, 4, 8, 128.0)) > base);
        assert!(tcdm_bytes(&sc(64, 65, 4, 8, 128.0)) > base);
        assert!(tcdm_bytes(&sc(64, 64, 5, 8, 128.0)) > base);

        // Doubling the clock exactly halves the cluster latency.
        let s1 = sc(512, 128, 8, 64, 128.0);
        let mut s2 = s1.clone();
        s2.clock_hz *= 2.0;
        assert_eq!(pmca_latency_ns(&s2), pmca_latency_ns(&s1) / 2.0);
    }

    #[test]
    fn sweep_reproduces_published_ratios_within_ten_percent() {
        let (shapes, t_ints, ts) = reference_grids();
        let rows = sweep_balance(&shapes, &t_ints, &ts, &PipelineScenario::default()).unwrap();
        let expect = [
            ((128usize, 128usize), 128.0, 1.04),
            ((128, 128), 256.0, 0.63),
            ((128, 128), 512.0, 0.32),
            ((512, 128), 128.0, 2.57),
            ((512, 128), 256.0, 1.29),
            ((512, 128), 512.0, 0.70),
        ];
        for ((shape, t_int, want), row) in expect.iter().zip(&rows) {
            assert_eq!((row.m, row.n), *shape);
            assert_eq!(row.t_int_ns, *t_int);
            let rel = (row.ratio - want).abs() / want;
            assert!(rel < 0.10, "{shape:?} @ {t_int} ns: ratio {} vs {want} ({rel:.3})", row.ratio);
        }
    }

    #[test]
    fn single_point_grid_returns_that_point() {
        let rows =
            sweep_balance(&[(128, 128)], &[256.0], &[32], &PipelineScenario::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].best_t, 32);
    }

    #[test]
    fn large_layer_spills_the_scratchpad_at_many_tokens() {
        let rep = pipeline_total_ns(&sc(512, 128, 8, 128, 128.0)).unwrap();
        assert!(rep.tcdm_spill);
        let rep = pipeline_total_ns(&sc(128, 128, 8, 8, 128.0)).unwrap();
        assert!(!rep.tcdm_spill);
    }

    #[test]
    fn chunk_larger_than_sequence_is_rejected() {
        let mut s = sc(128, 128, 8, 64, 128.0);
        s.seq_len = 32;
        assert!(pipeline_total_ns(&s).is_err());
    }
}
