//! Analog tile lifecycle: clip-and-map weights onto differential conductance
//! pairs, program and age the devices, run quantized analog matrix-vector
//! products through DAC/ADC models with per-channel affine correction, and
//! compensate drift with a single per-tile scalar.
//!
//! A signed weight `w` is encoded as `channel_scale * (G+ - G-)` where exactly
//! one of the pair carries the magnitude. Channel scales come from per-output-
//! channel clipping of the weight distribution, so each channel uses the full
//! conductance range.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::{
    apply_drift, sample_nu, sample_programmed_conductance, sample_read_conductance, DeviceState,
    PcmDeviceModel,
};
use crate::quant::quantize;
use crate::util::Digest;
use crate::{Error, Result};

/// Maximum rows/columns of one physical tile.
pub const MAX_TILE_DIM: usize = 512;

/// Fallback clip bound for channels with no spread at all.
const TINY_BOUND: f64 = 1e-12;

/// One polarity of the differential pair: per-device targets, programmed
/// values, and drift exponents, all `m x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceGrid {
    pub g_target: Array2<f64>,
    pub g_programmed: Array2<f64>,
    pub nu: Array2<f64>,
}

impl DeviceGrid {
    fn zeros(m: usize, n: usize) -> Self {
        DeviceGrid {
            g_target: Array2::zeros((m, n)),
            g_programmed: Array2::zeros((m, n)),
            nu: Array2::zeros((m, n)),
        }
    }

    /// The full state of one device.
    pub fn device(&self, i: usize, j: usize) -> DeviceState {
        DeviceState {
            g_target: self.g_target[(i, j)],
            g_programmed: self.g_programmed[(i, j)],
            nu: self.nu[(i, j)],
        }
    }
}

/// A programmed (or not yet programmed) analog tile holding one weight block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductanceTile {
    m: usize,
    n: usize,
    pub g_plus: DeviceGrid,
    pub g_minus: DeviceGrid,
    /// Weight units per µS, one entry per output channel.
    pub channel_scale: Vec<f64>,
    /// Reference time recorded when the tile was programmed (seconds after
    /// programming; equals the device model's `t0`). `None` until programmed.
    pub program_time: Option<f64>,
}

impl ConductanceTile {
    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn is_programmed(&self) -> bool {
        self.program_time.is_some()
    }

    /// Fold the full tile state into a digest (used by the frozen-meta
    /// acceptance checks).
    pub fn digest_into(&self, d: &mut Digest) {
        d.update(&(self.m as u64).to_le_bytes());
        d.update(&(self.n as u64).to_le_bytes());
        d.update_f64s(&self.channel_scale);
        d.update(&self.program_time.unwrap_or(-1.0).to_le_bytes());
        for grid in [&self.g_plus, &self.g_minus] {
            d.update_matrix(&grid.g_target);
            d.update_matrix(&grid.g_programmed);
            d.update_matrix(&grid.nu);
        }
    }

    /// Serialize to the flat little-endian snapshot layout: a fixed header
    /// (magic, m, n, programmed flag, program time, channel scales) followed
    /// by six row-major f64 grids (targets, programmed values, drift
    /// exponents for G+ then G-). Bit-exact round trip.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(33 + 8 * (self.n + 6 * self.m * self.n));
        out.extend_from_slice(b"AHWTILE1");
        out.extend_from_slice(&(self.m as u64).to_le_bytes());
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        out.push(self.program_time.is_some() as u8);
        out.extend_from_slice(&self.program_time.unwrap_or(0.0).to_le_bytes());
        for s in &self.channel_scale {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for grid in [&self.g_plus, &self.g_minus] {
            for mat in [&grid.g_target, &grid.g_programmed, &grid.nu] {
                for v in mat.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    /// Parse a snapshot produced by [`ConductanceTile::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8)?;
        if magic != b"AHWTILE1" {
            return Err(Error::State("tile snapshot: bad magic".into()));
        }
        let m = cur.u64()? as usize;
        let n = cur.u64()? as usize;
        if m == 0 || n == 0 || m > MAX_TILE_DIM || n > MAX_TILE_DIM {
            return Err(Error::Shape(format!("tile snapshot: bad dims {m}x{n}")));
        }
        let programmed = cur.take(1)?[0] != 0;
        let t_prog = cur.f64()?;
        let mut channel_scale = Vec::with_capacity(n);
        for _ in 0..n {
            channel_scale.push(cur.f64()?);
        }
        let mut grids = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut mats = Vec::with_capacity(3);
            for _ in 0..3 {
                let mut data = Vec::with_capacity(m * n);
                for _ in 0..m * n {
                    data.push(cur.f64()?);
                }
                mats.push(Array2::from_shape_vec((m, n), data).expect("shape checked"));
            }
            let nu = mats.pop().unwrap();
            let g_programmed = mats.pop().unwrap();
            let g_target = mats.pop().unwrap();
            grids.push(DeviceGrid { g_target, g_programmed, nu });
        }
        if cur.pos != bytes.len() {
            return Err(Error::State("tile snapshot: trailing bytes".into()));
        }
        let g_minus = grids.pop().unwrap();
        let g_plus = grids.pop().unwrap();
        Ok(ConductanceTile {
            m,
            n,
            g_plus,
            g_minus,
            channel_scale,
            program_time: programmed.then_some(t_prog),
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::State("tile snapshot: truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// How the DAC input bound is derived from a calibration batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputBoundRule {
    /// Three standard deviations of the calibration activations. The usual
    /// choice for dense activations.
    ThreeSigma,
    /// The maximum absolute activation. Required for one-hot driven tiles,
    /// where 3-sigma would clip the ones.
    MaxAbs,
}

/// DAC/ADC bit widths, clip bounds, and the per-channel digital affine
/// correction applied after the ADC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConverterSpec {
    pub dac_bits: u32,
    pub adc_bits: u32,
    /// Input clip magnitude (per tile).
    pub input_bound: f64,
    /// Pre-ADC output clip magnitude (per tile).
    pub output_bound: f64,
    /// Per-channel affine scale; empty means 1.0 everywhere.
    pub affine_scale: Vec<f64>,
    /// Per-channel affine offset; empty means 0.0 everywhere.
    pub affine_offset: Vec<f64>,
}

impl Default for ConverterSpec {
    fn default() -> Self {
        ConverterSpec {
            dac_bits: 8,
            adc_bits: 8,
            input_bound: 1.0,
            output_bound: 1.0,
            affine_scale: Vec::new(),
            affine_offset: Vec::new(),
        }
    }
}

impl ConverterSpec {
    pub fn validate(&self) -> Result<()> {
        crate::quant::validate(self.dac_bits, self.input_bound)?;
        crate::quant::validate(self.adc_bits, self.output_bound)?;
        Ok(())
    }

    pub fn scale_for(&self, c: usize) -> f64 {
        self.affine_scale.get(c).copied().unwrap_or(1.0)
    }

    pub fn offset_for(&self, c: usize) -> f64 {
        self.affine_offset.get(c).copied().unwrap_or(0.0)
    }

    /// DAC stage: clamp-and-quantize one input vector.
    pub fn dac(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| quantize(v, self.dac_bits, self.input_bound)).collect()
    }

    /// ADC-and-affine stage applied in place to a raw analog output row,
    /// with an optional drift-compensation factor applied last.
    pub fn output_stage(&self, y: &mut [f64], gamma: Option<f64>) {
        let g = gamma.unwrap_or(1.0);
        for (c, v) in y.iter_mut().enumerate() {
            let q = quantize(*v, self.adc_bits, self.output_bound);
            *v = (self.scale_for(c) * q + self.offset_for(c)) * g;
        }
    }

    /// Calibrate bounds and the affine scale against a batch of layer inputs
    /// and the clipped digital weights the tile encodes.
    ///
    /// The input bound follows `rule`; the output bound is the largest
    /// reference output magnitude with 10% headroom; the affine scale is the
    /// per-channel least-squares factor matching the noiseless quantized
    /// pipeline to the digital reference on the same batch. Offsets stay 0.
    pub fn calibrated(
        dac_bits: u32,
        adc_bits: u32,
        w_clipped: ArrayView2<'_, f64>,
        batch: ArrayView2<'_, f64>,
        rule: InputBoundRule,
    ) -> Result<ConverterSpec> {
        if batch.ncols() != w_clipped.nrows() {
            return Err(Error::Shape(format!(
                "calibration batch has {} columns, weights expect {}",
                batch.ncols(),
                w_clipped.nrows()
            )));
        }
        let max_abs = batch.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let input_bound = match rule {
            InputBoundRule::ThreeSigma => {
                let vals: Vec<f64> = batch.iter().copied().collect();
                let s = crate::util::pop_std(&vals);
                if s > 0.0 {
                    3.0 * s
                } else {
                    max_abs.max(TINY_BOUND)
                }
            }
            InputBoundRule::MaxAbs => max_abs.max(TINY_BOUND),
        };

        let y_ref = batch.dot(&w_clipped);
        let out_max = y_ref.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let output_bound = (out_max * 1.1).max(TINY_BOUND);

        let mut spec = ConverterSpec {
            dac_bits,
            adc_bits,
            input_bound,
            output_bound,
            affine_scale: Vec::new(),
            affine_offset: Vec::new(),
        };
        spec.validate()?;

        // Noiseless quantized pipeline on the same batch.
        let mut x_q = batch.to_owned();
        x_q.mapv_inplace(|v| quantize(v, dac_bits, input_bound));
        let mut y_q = x_q.dot(&w_clipped);
        y_q.mapv_inplace(|v| quantize(v, adc_bits, output_bound));

        let n = w_clipped.ncols();
        let mut scale = vec![1.0; n];
        for c in 0..n {
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..batch.nrows() {
                num += y_ref[(k, c)] * y_q[(k, c)];
                den += y_q[(k, c)] * y_q[(k, c)];
            }
            if den > 0.0 {
                scale[c] = num / den;
            }
        }
        spec.affine_scale = scale;
        Ok(spec)
    }
}

/// Global drift compensation: one scalar restoring the average output
/// magnitude of a tile to its programming-time value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdcState {
    pub gamma: f64,
    /// Digest of the calibration inputs and evaluation time, for traceability.
    pub calibration_checksum: u64,
}

/// Per-output-channel clip bounds: `clip_sigma` standard deviations of each
/// weight column, with a max-abs fallback for zero-spread channels.
pub fn channel_clip_bounds(w: ArrayView2<'_, f64>, clip_sigma: f64) -> Vec<f64> {
    let mut bounds = Vec::with_capacity(w.ncols());
    for c in 0..w.ncols() {
        let col: Vec<f64> = w.column(c).iter().copied().collect();
        let s = crate::util::pop_std(&col);
        let bound = if s > 0.0 {
            clip_sigma * s
        } else {
            col.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(TINY_BOUND)
        };
        bounds.push(bound);
    }
    bounds
}

/// Clamp every weight to its channel's clip bound.
pub fn clip_weights(w: ArrayView2<'_, f64>, bounds: &[f64]) -> Array2<f64> {
    let mut out = w.to_owned();
    for (c, &b) in bounds.iter().enumerate() {
        for v in out.column_mut(c).iter_mut() {
            *v = v.clamp(-b, b);
        }
    }
    out
}

/// Map a weight matrix onto differential conductance targets with
/// per-channel clipping. The returned tile is unprogrammed.
pub fn map_weights(
    w: ArrayView2<'_, f64>,
    clip_sigma: f64,
    model: &PcmDeviceModel,
) -> Result<ConductanceTile> {
    let bounds = channel_clip_bounds(w, clip_sigma);
    map_weights_with_bounds(w, &bounds, model)
}

/// Map with externally supplied channel bounds. Used directly when a large
/// matrix is split across several tiles but the clipping statistics must
/// come from the full columns.
pub fn map_weights_with_bounds(
    w: ArrayView2<'_, f64>,
    bounds: &[f64],
    model: &PcmDeviceModel,
) -> Result<ConductanceTile> {
    let (m, n) = w.dim();
    if m == 0 || n == 0 || m > MAX_TILE_DIM || n > MAX_TILE_DIM {
        return Err(Error::Shape(format!(
            "weight block {m}x{n} does not fit a {MAX_TILE_DIM}x{MAX_TILE_DIM} tile"
        )));
    }
    if bounds.len() != n {
        return Err(Error::Shape(format!("{} bounds for {} channels", bounds.len(), n)));
    }
    let mut tile = ConductanceTile {
        m,
        n,
        g_plus: DeviceGrid::zeros(m, n),
        g_minus: DeviceGrid::zeros(m, n),
        channel_scale: bounds.iter().map(|b| b / model.g_max).collect(),
        program_time: None,
    };
    for c in 0..n {
        let scale = tile.channel_scale[c];
        for i in 0..m {
            let wv = w[(i, c)].clamp(-bounds[c], bounds[c]);
            if wv >= 0.0 {
                tile.g_plus.g_target[(i, c)] = wv / scale;
            } else {
                tile.g_minus.g_target[(i, c)] = -wv / scale;
            }
        }
    }
    Ok(tile)
}

/// Program every device on the tile: realize programming noise and draw
/// per-device drift exponents. Reprogramming replaces the previous state.
pub fn program_tile<R: Rng>(
    tile: &mut ConductanceTile,
    model: &PcmDeviceModel,
    rng: &mut R,
) -> Result<()> {
    if tile.is_programmed() {
        log::warn!(
            "reprogramming a {}x{} tile; previous device state is replaced",
            tile.m,
            tile.n
        );
    }
    for grid in [&mut tile.g_plus, &mut tile.g_minus] {
        for i in 0..tile.m {
            for j in 0..tile.n {
                let target = grid.g_target[(i, j)];
                grid.g_programmed[(i, j)] = sample_programmed_conductance(target, model, rng)?;
                grid.nu[(i, j)] = sample_nu(model, rng);
            }
        }
    }
    tile.program_time = Some(model.t0);
    Ok(())
}

fn effective_grid<R: Rng>(
    grid: &DeviceGrid,
    t: f64,
    model: &PcmDeviceModel,
    mut rng: Option<&mut R>,
) -> Result<Array2<f64>> {
    let (m, n) = grid.g_programmed.dim();
    let mut out = Array2::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            let mut g = apply_drift(grid.g_programmed[(i, j)], grid.nu[(i, j)], t, model)?;
            if let Some(r) = rng.as_deref_mut() {
                g = sample_read_conductance(g, t, model, r)?;
            }
            out[(i, j)] = g;
        }
    }
    Ok(out)
}

/// Decode the tile back into weight units at time `t`: drift each device,
/// optionally realize one read-noise sample, and take the scaled difference
/// of the pair.
pub fn read_effective_weights<R: Rng>(
    tile: &ConductanceTile,
    t: f64,
    model: &PcmDeviceModel,
    rng: &mut R,
    noisy: bool,
) -> Result<Array2<f64>> {
    if !tile.is_programmed() {
        return Err(Error::State("tile is not programmed".into()));
    }
    let gp = effective_grid(&tile.g_plus, t, model, noisy.then_some(&mut *rng))?;
    let gm = effective_grid(&tile.g_minus, t, model, noisy.then_some(&mut *rng))?;
    let mut w = gp - gm;
    for c in 0..tile.n {
        let s = tile.channel_scale[c];
        for v in w.column_mut(c).iter_mut() {
            *v *= s;
        }
    }
    Ok(w)
}

/// The raw analog readout in weight units, before any converter: one fresh
/// read-noise realization per call when `rng` is supplied, the drifted mean
/// otherwise. This is the measurement-grade path used by drift-compensation
/// calibration and by oracles.
pub fn raw_mvm<R: Rng>(
    tile: &ConductanceTile,
    x: &[f64],
    t: f64,
    model: &PcmDeviceModel,
    rng: Option<&mut R>,
) -> Result<Vec<f64>> {
    if x.len() != tile.m {
        return Err(Error::Shape(format!(
            "input of length {} against a {}x{} tile",
            x.len(),
            tile.m,
            tile.n
        )));
    }
    if !tile.is_programmed() {
        return Err(Error::State("tile is not programmed".into()));
    }
    let noisy = rng.is_some();
    let w_eff = match rng {
        Some(r) => read_effective_weights(tile, t, model, r, true)?,
        None => {
            // Dummy RNG; never consulted on the noiseless path.
            let mut silent = crate::util::stream_rng(0, &[]);
            read_effective_weights(tile, t, model, &mut silent, false)?
        }
    };
    debug_assert!(noisy || true);
    let mut y = vec![0.0; tile.n];
    for c in 0..tile.n {
        let mut acc = 0.0;
        for i in 0..tile.m {
            acc += x[i] * w_eff[(i, c)];
        }
        y[c] = acc;
    }
    Ok(y)
}

/// Quantized analog matrix-vector product: DAC on the input, one read-noise
/// realization of the drifted tile, pre-ADC clamp, ADC, per-channel affine
/// correction, and the drift-compensation factor when present.
pub fn analog_mvm<R: Rng>(
    tile: &ConductanceTile,
    x: &[f64],
    t: f64,
    model: &PcmDeviceModel,
    conv: &ConverterSpec,
    gdc: Option<&GdcState>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if x.len() != tile.m {
        return Err(Error::Shape(format!(
            "input of length {} against a {}x{} tile",
            x.len(),
            tile.m,
            tile.n
        )));
    }
    let x_q = conv.dac(x);
    let mut y = raw_mvm(tile, &x_q, t, model, Some(rng))?;
    conv.output_stage(&mut y, gdc.map(|g| g.gamma));
    Ok(y)
}

/// Calibrate the global drift-compensation factor at time `t`.
///
/// `gamma` is the ratio of summed absolute raw outputs at programming time to
/// the same sum at `t`, with the time-`t` outputs averaged over `reads`
/// independent read-noise realizations. Calibration uses the raw
/// measurement path: quantizing the reference reads would leak converter
/// error into a factor that must be exact in the noiseless limit.
pub fn calibrate_gdc<R: Rng>(
    tile: &ConductanceTile,
    calibration_inputs: ArrayView2<'_, f64>,
    t: f64,
    model: &PcmDeviceModel,
    reads: usize,
    rng: &mut R,
) -> Result<GdcState> {
    if calibration_inputs.nrows() == 0 {
        return Err(Error::Calibration("empty calibration batch".into()));
    }
    if calibration_inputs.ncols() != tile.m {
        return Err(Error::Shape(format!(
            "calibration rows of length {} against a {}x{} tile",
            calibration_inputs.ncols(),
            tile.m,
            tile.n
        )));
    }
    let reads = reads.max(1);
    let k = calibration_inputs.nrows();

    let mut ref_sum = 0.0;
    for row in calibration_inputs.rows() {
        let x: Vec<f64> = row.iter().copied().collect();
        let y = raw_mvm::<R>(tile, &x, model.t0, model, None)?;
        ref_sum += y.iter().map(|v| v.abs()).sum::<f64>();
    }

    // Average the outputs over reads, then sum magnitudes.
    let mut avg = vec![vec![0.0f64; tile.n]; k];
    for _ in 0..reads {
        for (ki, row) in calibration_inputs.rows().into_iter().enumerate() {
            let x: Vec<f64> = row.iter().copied().collect();
            let y = raw_mvm(tile, &x, t, model, Some(&mut *rng))?;
            for (a, v) in avg[ki].iter_mut().zip(&y) {
                *a += v / reads as f64;
            }
        }
    }
    let t_sum: f64 = avg.iter().flatten().map(|v| v.abs()).sum();
    if t_sum == 0.0 {
        return Err(Error::Calibration("calibration outputs sum to zero".into()));
    }

    let mut d = Digest::new();
    for v in calibration_inputs.iter() {
        d.update(&v.to_le_bytes());
    }
    d.update(&t.to_le_bytes());
    d.update(&(reads as u64).to_le_bytes());

    Ok(GdcState { gamma: ref_sum / t_sum, calibration_checksum: d.finish() })
}

/// A weight matrix split across several tiles by row/column blocking, with
/// digital partial-sum accumulation across row blocks.
#[derive(Debug, Clone)]
pub struct TileGrid {
    row_splits: Vec<usize>,
    col_splits: Vec<usize>,
    /// Row-major blocks: `tiles[bi * col_blocks + bj]`.
    pub tiles: Vec<ConductanceTile>,
    m: usize,
    n: usize,
}

fn split_sizes(total: usize, max: usize) -> Vec<usize> {
    let blocks = total.div_ceil(max);
    let base = total / blocks;
    let extra = total % blocks;
    (0..blocks).map(|b| base + usize::from(b < extra)).collect()
}

impl TileGrid {
    /// Clip on the full columns, then map each block onto its own tile.
    pub fn map(w: ArrayView2<'_, f64>, clip_sigma: f64, model: &PcmDeviceModel) -> Result<Self> {
        let (m, n) = w.dim();
        if m == 0 || n == 0 {
            return Err(Error::Shape("empty weight matrix".into()));
        }
        let bounds = channel_clip_bounds(w, clip_sigma);
        let row_splits = split_sizes(m, MAX_TILE_DIM);
        let col_splits = split_sizes(n, MAX_TILE_DIM);
        let mut tiles = Vec::with_capacity(row_splits.len() * col_splits.len());
        let mut r0 = 0;
        for &rs in &row_splits {
            let mut c0 = 0;
            for &cs in &col_splits {
                let block = w.slice(ndarray::s![r0..r0 + rs, c0..c0 + cs]);
                tiles.push(map_weights_with_bounds(block, &bounds[c0..c0 + cs], model)?);
                c0 += cs;
            }
            r0 += rs;
        }
        Ok(TileGrid { row_splits, col_splits, tiles, m, n })
    }

    pub fn program<R: Rng>(&mut self, model: &PcmDeviceModel, rng: &mut R) -> Result<()> {
        for tile in &mut self.tiles {
            program_tile(tile, model, rng)?;
        }
        Ok(())
    }

    /// Full-width MVM: each block performs its quantized analog product and
    /// the row-block partial sums accumulate digitally.
    pub fn analog_mvm<R: Rng>(
        &self,
        x: &[f64],
        t: f64,
        model: &PcmDeviceModel,
        conv: &ConverterSpec,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if x.len() != self.m {
            return Err(Error::Shape(format!("input length {} != rows {}", x.len(), self.m)));
        }
        let mut y = vec![0.0; self.n];
        let cols = self.col_splits.len();
        let mut r0 = 0;
        for (bi, &rs) in self.row_splits.iter().enumerate() {
            let mut c0 = 0;
            for (bj, &cs) in self.col_splits.iter().enumerate() {
                let tile = &self.tiles[bi * cols + bj];
                let part = analog_mvm(tile, &x[r0..r0 + rs], t, model, conv, None, rng)?;
                for (acc, v) in y[c0..c0 + cs].iter_mut().zip(&part) {
                    *acc += v;
                }
                c0 += cs;
            }
            r0 += rs;
        }
        Ok(y)
    }
}
