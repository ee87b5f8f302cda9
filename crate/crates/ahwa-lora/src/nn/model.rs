//! The tiny transformer: embedding (a one-hot-driven mapped linear plus a
//! digital positional table), post-norm encoder blocks, mean pooling, and a
//! mapped classifier head. Forward runs in one of three modes; backward is
//! hand-derived and works for the digital and hardware-aware modes.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::device::PcmDeviceModel;
use crate::tile::{
    calibrate_gdc, channel_clip_bounds, clip_weights, map_weights_with_bounds, program_tile,
    read_effective_weights, ConductanceTile, ConverterSpec, InputBoundRule,
};
use crate::util::{stream_rng, Digest};
use crate::{Error, Result};

use super::linear::{hwa_linear_backward, hwa_linear_forward, AnalogRealization, HwaLinearCache};
use super::lora::{LoraAdapter, LoraSet};
use super::{HwaNoiseSpec, ManifestEntry, SlotGroup, TinyTransformerConfig};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044715;

/// Dense one-hot rows for a batch of token sequences (`b*s x vocab`).
pub fn one_hot(tokens: &[Vec<u16>], vocab: usize) -> Array2<f64> {
    let b = tokens.len();
    let s = tokens.first().map_or(0, |t| t.len());
    let mut x = Array2::zeros((b * s, vocab));
    for (bi, seq) in tokens.iter().enumerate() {
        for (si, &tok) in seq.iter().enumerate() {
            x[(bi * s + si, tok as usize)] = 1.0;
        }
    }
    x
}

/// Row-wise softmax, numerically shifted.
pub fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Cache of one layer-norm application.
#[derive(Debug, Clone)]
struct LnCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm_forward(x: &Array2<f64>, gamma: &[f64], beta: &[f64]) -> (Array2<f64>, LnCache) {
    let (rows, d) = x.dim();
    let mut y = Array2::zeros((rows, d));
    let mut xhat = Array2::zeros((rows, d));
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mu = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(istd);
        for c in 0..d {
            let xh = (x[(r, c)] - mu) * istd;
            xhat[(r, c)] = xh;
            y[(r, c)] = gamma[c] * xh + beta[c];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gamma: &[f64],
) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let (rows, d) = dy.dim();
    let mut dx = Array2::zeros((rows, d));
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for r in 0..rows {
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for c in 0..d {
            let g = dy[(r, c)] * gamma[c];
            sum_dxhat += g;
            sum_dxhat_xhat += g * cache.xhat[(r, c)];
            dgamma[c] += dy[(r, c)] * cache.xhat[(r, c)];
            dbeta[c] += dy[(r, c)];
        }
        let mean_dxhat = sum_dxhat / d as f64;
        let mean_dxhat_xhat = sum_dxhat_xhat / d as f64;
        for c in 0..d {
            let g = dy[(r, c)] * gamma[c];
            dx[(r, c)] =
                cache.inv_std[r] * (g - mean_dxhat - cache.xhat[(r, c)] * mean_dxhat_xhat);
        }
    }
    (dx, dgamma, dbeta)
}

/// All frozen tensors of the base model.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaParams {
    /// Mapped-layer weights, aligned with [`TinyTransformerConfig::slots`].
    pub slots: Vec<Array2<f64>>,
    /// Positional embeddings (`max_seq x d_model`), digital.
    pub pos: Array2<f64>,
    /// Two layer norms per block: `(gamma, beta)` at indices `2l` and `2l+1`.
    pub ln: Vec<(Vec<f64>, Vec<f64>)>,
}

/// The model: configuration, frozen meta-weights, and the adapters.
#[derive(Debug, Clone)]
pub struct TinyTransformer {
    pub cfg: TinyTransformerConfig,
    pub meta: MetaParams,
    pub lora: LoraSet,
}

/// How the mapped linears execute.
pub enum ForwardMode<'a> {
    /// Full-precision matmuls; backward also yields meta-weight gradients
    /// (the pretraining path).
    Digital,
    /// Hardware-aware training: injected noise and (optionally) converter
    /// quantization, straight-through backward, no meta gradients. Per-layer
    /// noise streams derive from `step_seed`.
    TrainHwa {
        spec: &'a HwaNoiseSpec,
        convs: Option<&'a [ConverterSpec]>,
        step_seed: u64,
    },
    /// Inference over realized analog tiles (forward only).
    InferAnalog { reals: &'a [AnalogRealization] },
}

struct LayerCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Softmax probabilities, one `s x s` matrix per (batch item, head).
    probs: Vec<Array2<f64>>,
    ff_pre: Array2<f64>,
    ln1: Option<LnCache>,
    ln2: Option<LnCache>,
}

/// Forward-pass record sufficient for one backward pass.
pub struct ModelCache {
    slot_caches: Vec<Option<HwaLinearCache>>,
    layers: Vec<LayerCache>,
    b: usize,
    s: usize,
    /// Filled only in digital mode.
    want_meta_grads: bool,
    backward_ready: bool,
}

impl ModelCache {
    /// Attention probabilities of one (layer, batch item, head).
    pub fn attn_probs(&self, layer: usize, batch: usize, head: usize, heads: usize) -> &Array2<f64> {
        &self.layers[layer].probs[batch * heads + head]
    }
}

/// Gradients of one backward pass, aligned with the model's slots.
pub struct ModelGrads {
    /// Meta-weight gradients; present per slot only in digital mode.
    pub slot_dw: Vec<Option<Array2<f64>>>,
    /// Adapter gradients `(dA, dB)` per slot carrying an adapter.
    pub lora: Vec<Option<(Array2<f64>, Array2<f64>)>>,
    pub dpos: Array2<f64>,
    /// Per layer norm `(dgamma, dbeta)`, aligned with [`MetaParams::ln`].
    pub dln: Vec<(Vec<f64>, Vec<f64>)>,
}

impl TinyTransformer {
    /// Fresh random init (the "pre-pretraining" state).
    pub fn new(cfg: TinyTransformerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let slots = cfg.slots();
        let mut weights = Vec::with_capacity(slots.len());
        for (i, slot) in slots.iter().enumerate() {
            let mut rng = stream_rng(seed, &[1, i as u64]);
            let std = (1.0 / slot.m as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            weights.push(Array2::from_shape_fn((slot.m, slot.n), |_| normal.sample(&mut rng)));
        }
        let mut rng = stream_rng(seed, &[2]);
        let pos_normal = Normal::new(0.0, 0.02).unwrap();
        let pos = Array2::from_shape_fn((cfg.max_seq, cfg.d_model), |_| pos_normal.sample(&mut rng));
        let ln = (0..2 * cfg.layers)
            .map(|_| (vec![1.0; cfg.d_model], vec![0.0; cfg.d_model]))
            .collect();

        let mut lora = LoraSet { adapters: vec![None; slots.len()] };
        for (i, slot) in slots.iter().enumerate() {
            if cfg.lora_placement.selects(slot.group, cfg.lora_on_embedding) {
                lora.adapters[i] = Some(LoraAdapter::init(
                    slot.m,
                    slot.n,
                    cfg.rank,
                    cfg.lora_scaling,
                    crate::util::derive_seed(seed, &[3, i as u64]),
                ));
            }
        }
        Ok(TinyTransformer { cfg, meta: MetaParams { slots: weights, pos, ln }, lora })
    }

    /// Re-initialize the adapters (used when rebinding a model to a new task).
    pub fn reset_lora(&mut self, seed: u64) {
        let slots = self.cfg.slots();
        for (i, slot) in slots.iter().enumerate() {
            if self.lora.adapters[i].is_some() {
                self.lora.adapters[i] = Some(LoraAdapter::init(
                    slot.m,
                    slot.n,
                    self.cfg.rank,
                    self.cfg.lora_scaling,
                    crate::util::derive_seed(seed, &[3, i as u64]),
                ));
            }
        }
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.cfg.slots()
    }

    /// Digest over every frozen tensor (mapped weights, positional table,
    /// layer norms). Adapters are excluded: they are the trainable state.
    pub fn meta_digest(&self) -> u64 {
        let mut d = Digest::new();
        for w in &self.meta.slots {
            d.update_matrix(w);
        }
        d.update_matrix(&self.meta.pos);
        for (g, b) in &self.meta.ln {
            d.update_f64s(g);
            d.update_f64s(b);
        }
        d.finish()
    }

    /// The dense effective weight of one slot: `W + scaling * A B`.
    pub fn effective_dense(&self, slot: usize) -> Array2<f64> {
        let mut w = self.meta.slots[slot].clone();
        if let Some(ad) = &self.lora.adapters[slot] {
            w += &ad.dense_update();
        }
        w
    }

    fn slot_index(&self, layer: usize, which: usize) -> usize {
        1 + 6 * layer + which
    }

    fn head_slot(&self) -> usize {
        1 + 6 * self.cfg.layers
    }

    fn slot_forward<R: Rng>(
        &self,
        idx: usize,
        x: ArrayView2<'_, f64>,
        mode: &ForwardMode<'_>,
        rng: &mut R,
    ) -> Result<(Array2<f64>, Option<HwaLinearCache>)> {
        let adapter = self.lora.adapters[idx].as_ref();
        match mode {
            ForwardMode::Digital => {
                let spec = HwaNoiseSpec::disabled();
                let (y, c) =
                    hwa_linear_forward(x, self.meta.slots[idx].view(), adapter, &spec, None, rng)?;
                Ok((y, Some(c)))
            }
            ForwardMode::TrainHwa { spec, convs, step_seed } => {
                let conv = convs.map(|cs| &cs[idx]);
                let mut slot_rng = stream_rng(*step_seed, &[idx as u64]);
                let (y, c) = hwa_linear_forward(
                    x,
                    self.meta.slots[idx].view(),
                    adapter,
                    spec,
                    conv,
                    &mut slot_rng,
                )?;
                Ok((y, Some(c)))
            }
            ForwardMode::InferAnalog { reals } => {
                let y = reals[idx].forward(x, adapter)?;
                Ok((y, None))
            }
        }
    }

    /// Run the model on a batch of equal-length sequences. Returns logits
    /// (`batch x n_classes`) and the cache for a backward pass.
    pub fn forward(&self, tokens: &[Vec<u16>], mode: &ForwardMode<'_>) -> Result<(Array2<f64>, ModelCache)> {
        let b = tokens.len();
        if b == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let s = tokens[0].len();
        if s == 0 || s > self.cfg.max_seq {
            return Err(Error::Shape(format!(
                "sequence length {s} outside [1, {}]",
                self.cfg.max_seq
            )));
        }
        for seq in tokens {
            if seq.len() != s {
                return Err(Error::Shape("ragged batch".into()));
            }
            if seq.iter().any(|&t| t as usize >= self.cfg.vocab) {
                return Err(Error::Domain(format!("token id >= vocab {}", self.cfg.vocab)));
            }
        }
        if let ForwardMode::InferAnalog { reals } = mode {
            if reals.len() != self.meta.slots.len() {
                return Err(Error::State(format!(
                    "{} realizations for {} mapped layers",
                    reals.len(),
                    self.meta.slots.len()
                )));
            }
        }

        let d = self.cfg.d_model;
        let heads = self.cfg.heads;
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let n_slots = self.meta.slots.len();
        let mut slot_caches: Vec<Option<HwaLinearCache>> = (0..n_slots).map(|_| None).collect();
        // Never consulted: every stochastic path derives its own stream.
        let mut rng = stream_rng(0, &[]);

        let x0 = one_hot(tokens, self.cfg.vocab);
        let (mut h, c_embed) = self.slot_forward(0, x0.view(), mode, &mut rng)?;
        slot_caches[0] = c_embed;
        for bi in 0..b {
            for si in 0..s {
                let mut row = h.row_mut(bi * s + si);
                row += &self.meta.pos.row(si);
            }
        }

        let mut layers = Vec::with_capacity(self.cfg.layers);
        for l in 0..self.cfg.layers {
            let (q, cq) = self.slot_forward(self.slot_index(l, 0), h.view(), mode, &mut rng)?;
            let (k, ck) = self.slot_forward(self.slot_index(l, 1), h.view(), mode, &mut rng)?;
            let (v, cv) = self.slot_forward(self.slot_index(l, 2), h.view(), mode, &mut rng)?;
            slot_caches[self.slot_index(l, 0)] = cq;
            slot_caches[self.slot_index(l, 1)] = ck;
            slot_caches[self.slot_index(l, 2)] = cv;

            let mut concat = Array2::zeros((b * s, d));
            let mut probs = Vec::with_capacity(b * heads);
            for bi in 0..b {
                let r0 = bi * s;
                for hh in 0..heads {
                    let c0 = hh * dk;
                    let qh = q.slice(s![r0..r0 + s, c0..c0 + dk]);
                    let kh = k.slice(s![r0..r0 + s, c0..c0 + dk]);
                    let vh = v.slice(s![r0..r0 + s, c0..c0 + dk]);
                    let mut sc = qh.dot(&kh.t());
                    sc.mapv_inplace(|x| x * scale);
                    softmax_rows(&mut sc);
                    let oh = sc.dot(&vh);
                    concat.slice_mut(s![r0..r0 + s, c0..c0 + dk]).assign(&oh);
                    probs.push(sc);
                }
            }

            let (ao, cao) = self.slot_forward(self.slot_index(l, 3), concat.view(), mode, &mut rng)?;
            slot_caches[self.slot_index(l, 3)] = cao;
            let res1 = &h + &ao;
            let (h1, ln1) = layer_norm_forward(&res1, &self.meta.ln[2 * l].0, &self.meta.ln[2 * l].1);

            let (ff_pre, cup) = self.slot_forward(self.slot_index(l, 4), h1.view(), mode, &mut rng)?;
            slot_caches[self.slot_index(l, 4)] = cup;
            let g = ff_pre.mapv(gelu);
            let (ff2, cdown) = self.slot_forward(self.slot_index(l, 5), g.view(), mode, &mut rng)?;
            slot_caches[self.slot_index(l, 5)] = cdown;
            let res2 = &h1 + &ff2;
            let (h_next, ln2) =
                layer_norm_forward(&res2, &self.meta.ln[2 * l + 1].0, &self.meta.ln[2 * l + 1].1);

            layers.push(LayerCache { q, k, v, probs, ff_pre, ln1: Some(ln1), ln2: Some(ln2) });
            h = h_next;
        }

        // Mean pool over the sequence.
        let mut pooled = Array2::zeros((b, d));
        for bi in 0..b {
            for si in 0..s {
                let row = h.row(bi * s + si);
                let mut p = pooled.row_mut(bi);
                p += &row;
            }
            let mut p = pooled.row_mut(bi);
            p.mapv_inplace(|v| v / s as f64);
        }

        let (logits, c_head) = self.slot_forward(self.head_slot(), pooled.view(), mode, &mut rng)?;
        slot_caches[self.head_slot()] = c_head;

        let backward_ready = !matches!(mode, ForwardMode::InferAnalog { .. });
        let cache = ModelCache {
            slot_caches,
            layers,
            b,
            s,
            want_meta_grads: matches!(mode, ForwardMode::Digital),
            backward_ready,
        };
        Ok((logits, cache))
    }

    fn slot_backward(
        &self,
        idx: usize,
        grad: ArrayView2<'_, f64>,
        cache: &ModelCache,
        grads: &mut ModelGrads,
    ) -> Result<Array2<f64>> {
        let c = cache.slot_caches[idx]
            .as_ref()
            .ok_or_else(|| Error::State("backward through a forward-only cache".into()))?;
        let adapter = self.lora.adapters[idx].as_ref();
        let g = hwa_linear_backward(grad, c, adapter)?;
        if let (Some(da), Some(db)) = (g.d_a, g.d_b) {
            grads.lora[idx] = Some((da, db));
        }
        if cache.want_meta_grads {
            grads.slot_dw[idx] = Some(c.x.t().dot(&grad));
        }
        Ok(g.dx)
    }

    /// Backward from `dlogits`. Valid for digital and hardware-aware caches.
    pub fn backward(&self, cache: &ModelCache, dlogits: ArrayView2<'_, f64>) -> Result<ModelGrads> {
        if !cache.backward_ready {
            return Err(Error::State("analog-mode caches do not support backward".into()));
        }
        let (b, s) = (cache.b, cache.s);
        let d = self.cfg.d_model;
        let heads = self.cfg.heads;
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let n_slots = self.meta.slots.len();
        let mut grads = ModelGrads {
            slot_dw: (0..n_slots).map(|_| None).collect(),
            lora: (0..n_slots).map(|_| None).collect(),
            dpos: Array2::zeros(self.meta.pos.dim()),
            dln: self
                .meta
                .ln
                .iter()
                .map(|(g, _)| (vec![0.0; g.len()], vec![0.0; g.len()]))
                .collect(),
        };

        let dpooled = self.slot_backward(self.head_slot(), dlogits, cache, &mut grads)?;

        let mut dh = Array2::zeros((b * s, d));
        for bi in 0..b {
            for si in 0..s {
                let mut row = dh.row_mut(bi * s + si);
                row.assign(&dpooled.row(bi));
                row.mapv_inplace(|v| v / s as f64);
            }
        }

        for l in (0..self.cfg.layers).rev() {
            let lc = &cache.layers[l];
            let (dres2, dg2, db2) =
                layer_norm_backward(&dh, lc.ln2.as_ref().unwrap(), &self.meta.ln[2 * l + 1].0);
            grads.dln[2 * l + 1] = (dg2, db2);

            // FFN branch.
            let dg = self.slot_backward(self.slot_index(l, 5), dres2.view(), cache, &mut grads)?;
            let mut dff_pre = dg;
            for (dv, x) in dff_pre.iter_mut().zip(lc.ff_pre.iter()) {
                *dv *= gelu_grad(*x);
            }
            let dh1_ffn =
                self.slot_backward(self.slot_index(l, 4), dff_pre.view(), cache, &mut grads)?;
            let dh1 = &dres2 + &dh1_ffn;

            let (dres1, dg1, db1) =
                layer_norm_backward(&dh1, lc.ln1.as_ref().unwrap(), &self.meta.ln[2 * l].0);
            grads.dln[2 * l] = (dg1, db1);

            // Attention branch.
            let dconcat =
                self.slot_backward(self.slot_index(l, 3), dres1.view(), cache, &mut grads)?;
            let mut dq = Array2::zeros((b * s, d));
            let mut dk_m = Array2::zeros((b * s, d));
            let mut dv_m = Array2::zeros((b * s, d));
            for bi in 0..b {
                let r0 = bi * s;
                for hh in 0..heads {
                    let c0 = hh * dk;
                    let doh = dconcat.slice(s![r0..r0 + s, c0..c0 + dk]);
                    let p = &lc.probs[bi * heads + hh];
                    let qh = lc.q.slice(s![r0..r0 + s, c0..c0 + dk]);
                    let kh = lc.k.slice(s![r0..r0 + s, c0..c0 + dk]);
                    let vh = lc.v.slice(s![r0..r0 + s, c0..c0 + dk]);

                    let dp = doh.dot(&vh.t());
                    let dvh = p.t().dot(&doh);
                    // Softmax backward, row-wise.
                    let mut ds = Array2::zeros((s, s));
                    for r in 0..s {
                        let dot: f64 = (0..s).map(|c| dp[(r, c)] * p[(r, c)]).sum();
                        for c in 0..s {
                            ds[(r, c)] = p[(r, c)] * (dp[(r, c)] - dot);
                        }
                    }
                    ds.mapv_inplace(|v| v * scale);
                    let dqh = ds.dot(&kh);
                    let dkh = ds.t().dot(&qh);
                    dq.slice_mut(s![r0..r0 + s, c0..c0 + dk]).assign(&dqh);
                    dk_m.slice_mut(s![r0..r0 + s, c0..c0 + dk]).assign(&dkh);
                    dv_m.slice_mut(s![r0..r0 + s, c0..c0 + dk]).assign(&dvh);
                }
            }

            let mut dh_prev = dres1; // residual path
            dh_prev += &self.slot_backward(self.slot_index(l, 0), dq.view(), cache, &mut grads)?;
            dh_prev += &self.slot_backward(self.slot_index(l, 1), dk_m.view(), cache, &mut grads)?;
            dh_prev += &self.slot_backward(self.slot_index(l, 2), dv_m.view(), cache, &mut grads)?;
            dh = dh_prev;
        }

        // Positional grads, then the embedding slot.
        for bi in 0..b {
            for si in 0..s {
                let mut row = grads.dpos.row_mut(si);
                row += &dh.row(bi * s + si);
            }
        }
        let _ = self.slot_backward(0, dh.view(), cache, &mut grads)?;
        Ok(grads)
    }
}

/// A model deployed to analog hardware: clipped meta-weights, one programmed
/// tile and calibrated converter per mapped layer.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub model: TinyTransformer,
    pub tiles: Vec<ConductanceTile>,
    pub convs: Vec<ConverterSpec>,
    pub pcm: PcmDeviceModel,
    pub clip_sigma: f64,
}

/// Step 1 of the pipeline: clip each mapped layer per channel, calibrate its
/// converter on probe activations, and map + program its tile. The returned
/// model carries the clipped weights; they are frozen from here on.
pub fn deploy(
    model: &TinyTransformer,
    probe_tokens: &[Vec<u16>],
    clip_sigma: f64,
    pcm: &PcmDeviceModel,
    dac_bits: u32,
    adc_bits: u32,
    seed: u64,
) -> Result<Deployment> {
    pcm.validate()?;
    let mut clipped = model.clone();
    let mut all_bounds = Vec::with_capacity(model.meta.slots.len());
    for w in &mut clipped.meta.slots {
        let bounds = channel_clip_bounds(w.view(), clip_sigma);
        *w = clip_weights(w.view(), &bounds);
        all_bounds.push(bounds);
    }

    // Capture per-layer input activations on the clipped digital model.
    let (_, cache) = clipped.forward(probe_tokens, &ForwardMode::Digital)?;

    let mut tiles = Vec::with_capacity(clipped.meta.slots.len());
    let mut convs = Vec::with_capacity(clipped.meta.slots.len());
    let slot_infos = clipped.cfg.slots();
    for (i, w) in clipped.meta.slots.iter().enumerate() {
        let x_batch = &cache.slot_caches[i].as_ref().expect("digital cache").x;
        let rule = if slot_infos[i].group == SlotGroup::Embed {
            InputBoundRule::MaxAbs
        } else {
            InputBoundRule::ThreeSigma
        };
        convs.push(ConverterSpec::calibrated(dac_bits, adc_bits, w.view(), x_batch.view(), rule)?);
        let mut tile = map_weights_with_bounds(w.view(), &all_bounds[i], pcm)?;
        let mut rng = stream_rng(seed, &[0x7111, i as u64]);
        program_tile(&mut tile, pcm, &mut rng)?;
        tiles.push(tile);
    }

    Ok(Deployment { model: clipped, tiles, convs, pcm: pcm.clone(), clip_sigma })
}

impl Deployment {
    /// Digest over everything that must stay frozen: clipped meta-weights and
    /// the complete tile states.
    pub fn frozen_digest(&self) -> u64 {
        let mut d = Digest::new();
        d.update(&self.model.meta_digest().to_le_bytes());
        for tile in &self.tiles {
            tile.digest_into(&mut d);
        }
        d.finish()
    }

    /// Realize every tile at evaluation time `t`: one read-noise sample per
    /// tile (a trial is one read event), plus a fresh drift-compensation
    /// factor when `gdc` is on, estimated from a fixed seeded probe batch
    /// with reads averaged `gdc_reads` times.
    pub fn realize<R: Rng>(
        &self,
        t: f64,
        noisy: bool,
        gdc: bool,
        gdc_reads: usize,
        rng: &mut R,
    ) -> Result<Vec<AnalogRealization>> {
        let mut reals = Vec::with_capacity(self.tiles.len());
        for (i, tile) in self.tiles.iter().enumerate() {
            let gamma = if gdc {
                let mut probe_rng = stream_rng(0x6dc0, &[i as u64]);
                let normal = Normal::new(0.0, 1.0).unwrap();
                let probe =
                    Array2::from_shape_fn((32, tile.rows()), |_| normal.sample(&mut probe_rng));
                Some(calibrate_gdc(tile, probe.view(), t, &self.pcm, gdc_reads, rng)?.gamma)
            } else {
                None
            };
            let w_eff = if noisy {
                read_effective_weights(tile, t, &self.pcm, rng, true)?
            } else {
                let mut silent = stream_rng(0, &[]);
                read_effective_weights(tile, t, &self.pcm, &mut silent, false)?
            };
            reals.push(AnalogRealization { w_eff, conv: self.convs[i].clone(), gamma });
        }
        Ok(reals)
    }
}
