//! The hardware-aware dense layer.
//!
//! Forward (training path):
//!
//! ```text
//! y = Quant_adc( Quant_dac(x) . (W + E_w) ) + E_out + scaling . (x A) B
//! ```
//!
//! `E_w` is Gaussian weight noise with per-channel std
//! `weight_noise * max_i |W[i,c]|`, `E_out` is Gaussian converter noise.
//! Backward treats both quantizers as straight-through (identity inside the
//! clip bounds, zero outside) and all noise realizations as constants; no
//! gradient is ever produced for the meta-weights on this path. The LoRA
//! branch is digital and bypasses the converters entirely.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::quant::quantize;
use crate::tile::ConverterSpec;
use crate::{Error, Result};

use super::lora::LoraAdapter;
use super::{HwaNoiseSpec, OutputNoiseRef};

/// Realize one sample of the training-time weight noise for a clipped weight
/// matrix: per-element Gaussian whose std in channel `c` is
/// `weight_noise * max_i |w[i, c]|`.
pub fn sample_weight_noise<R: Rng>(
    w: ArrayView2<'_, f64>,
    weight_noise: f64,
    rng: &mut R,
) -> Array2<f64> {
    let (m, n) = w.dim();
    let mut sigma = vec![0.0; n];
    for c in 0..n {
        let max_abs = w.column(c).iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        sigma[c] = weight_noise * max_abs;
    }
    let mut e = Array2::zeros((m, n));
    for i in 0..m {
        for c in 0..n {
            if sigma[c] > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                e[(i, c)] = sigma[c] * z;
            }
        }
    }
    e
}

/// Everything the backward pass needs, captured as realized constants.
#[derive(Debug, Clone)]
pub struct HwaLinearCache {
    /// Pre-DAC input (the LoRA branch reads this).
    pub x: Array2<f64>,
    /// `x . A` when an adapter is attached.
    pub xa: Option<Array2<f64>>,
    /// The realized noisy weights `W + E_w` (just `W` when noise is off).
    pub w_noisy: Array2<f64>,
    /// Straight-through DAC mask: 1 where `|x| <= input_bound`.
    pub dac_mask: Option<Array2<f64>>,
    /// Straight-through ADC mask: 1 where the pre-ADC value is in range.
    pub adc_mask: Option<Array2<f64>>,
}

/// Gradients of the hardware-aware layer. `d_a`/`d_b` are present exactly
/// when the forward saw an adapter. There is never a meta-weight gradient.
#[derive(Debug, Clone)]
pub struct HwaLinearGrads {
    pub dx: Array2<f64>,
    pub d_a: Option<Array2<f64>>,
    pub d_b: Option<Array2<f64>>,
}

/// Forward pass. `conv = None` models a deployment without explicit
/// DAC/ADC simulation; converter (output) noise is skipped in that case
/// because there is no converter to be noisy.
pub fn hwa_linear_forward<R: Rng>(
    x: ArrayView2<'_, f64>,
    w_meta: ArrayView2<'_, f64>,
    adapter: Option<&LoraAdapter>,
    spec: &HwaNoiseSpec,
    conv: Option<&ConverterSpec>,
    rng: &mut R,
) -> Result<(Array2<f64>, HwaLinearCache)> {
    if x.ncols() != w_meta.nrows() {
        return Err(Error::Shape(format!(
            "input width {} does not match weight rows {}",
            x.ncols(),
            w_meta.nrows()
        )));
    }
    if let Some(ad) = adapter {
        if ad.a.nrows() != w_meta.nrows() || ad.b.ncols() != w_meta.ncols() {
            return Err(Error::Shape("adapter shape does not conform to the host layer".into()));
        }
    }

    // DAC stage.
    let (x_q, dac_mask) = match conv {
        Some(c) => {
            let mask = x.mapv(|v| f64::from(v.abs() <= c.input_bound));
            let xq = x.mapv(|v| quantize(v, c.dac_bits, c.input_bound));
            (xq, Some(mask))
        }
        None => (x.to_owned(), None),
    };

    // Weight noise.
    let w_noisy = if spec.enabled && spec.weight_noise > 0.0 {
        let mut w = w_meta.to_owned();
        w += &sample_weight_noise(w_meta, spec.weight_noise, rng);
        w
    } else {
        w_meta.to_owned()
    };

    let meta_pre = x_q.dot(&w_noisy);

    // ADC stage.
    let (mut y, adc_mask) = match conv {
        Some(c) => {
            let mask = meta_pre.mapv(|v| f64::from(v.abs() <= c.output_bound));
            let yq = meta_pre.mapv(|v| quantize(v, c.adc_bits, c.output_bound));
            (yq, Some(mask))
        }
        None => (meta_pre.clone(), None),
    };

    // Converter output noise.
    if spec.enabled && spec.output_noise > 0.0 {
        let sigma = match (spec.output_noise_ref, conv) {
            (OutputNoiseRef::AdcRange, Some(c)) => spec.output_noise * c.output_bound,
            (OutputNoiseRef::AdcRange, None) => 0.0,
            (OutputNoiseRef::BatchStd, _) => {
                let vals: Vec<f64> = meta_pre.iter().copied().collect();
                spec.output_noise * crate::util::pop_std(&vals)
            }
        };
        if sigma > 0.0 {
            for v in y.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += sigma * z;
            }
        }
    }

    // Digital LoRA branch.
    let xa = adapter.map(|ad| x.dot(&ad.a));
    if let (Some(ad), Some(xa)) = (adapter, xa.as_ref()) {
        let mut lora = xa.dot(&ad.b);
        lora.mapv_inplace(|v| v * ad.scaling);
        y += &lora;
    }

    let cache = HwaLinearCache { x: x.to_owned(), xa, w_noisy, dac_mask, adc_mask };
    Ok((y, cache))
}

/// Backward pass over a cached forward. The adapter must be the one the
/// forward saw (shapes are checked).
pub fn hwa_linear_backward(
    grad_out: ArrayView2<'_, f64>,
    cache: &HwaLinearCache,
    adapter: Option<&LoraAdapter>,
) -> Result<HwaLinearGrads> {
    let (t, n) = (cache.x.nrows(), cache.w_noisy.ncols());
    if grad_out.dim() != (t, n) {
        return Err(Error::Shape(format!(
            "grad_out {:?} does not match cached forward ({t}, {n})",
            grad_out.dim()
        )));
    }
    if adapter.is_some() != cache.xa.is_some() {
        return Err(Error::State("adapter presence differs from the cached forward".into()));
    }

    // Meta path: straight-through masks on both converters.
    let g_meta = match &cache.adc_mask {
        Some(m) => &grad_out.to_owned() * m,
        None => grad_out.to_owned(),
    };
    let mut dx = g_meta.dot(&cache.w_noisy.t());
    if let Some(m) = &cache.dac_mask {
        dx *= m;
    }

    // LoRA path.
    let (mut d_a, mut d_b) = (None, None);
    if let (Some(ad), Some(xa)) = (adapter, cache.xa.as_ref()) {
        let mut db = xa.t().dot(&grad_out);
        db.mapv_inplace(|v| v * ad.scaling);
        let g_b = grad_out.dot(&ad.b.t());
        let mut da = cache.x.t().dot(&g_b);
        da.mapv_inplace(|v| v * ad.scaling);
        let mut dx_lora = g_b.dot(&ad.a.t());
        dx_lora.mapv_inplace(|v| v * ad.scaling);
        dx += &dx_lora;
        d_a = Some(da);
        d_b = Some(db);
    }

    Ok(HwaLinearGrads { dx, d_a, d_b })
}

/// One read-noise realization of a whole programmed tile plus its converter
/// state: the inference-time forward path. Created once per (tile, time,
/// trial) and applied to any number of inputs as one read event.
#[derive(Debug, Clone)]
pub struct AnalogRealization {
    /// Effective weights at the evaluation time (channel-scaled differential
    /// conductances, one read-noise sample).
    pub w_eff: Array2<f64>,
    pub conv: ConverterSpec,
    /// Drift-compensation factor, if compensation is on.
    pub gamma: Option<f64>,
}

impl AnalogRealization {
    /// Quantized analog forward for a batch of rows, with the digital LoRA
    /// branch added on top.
    pub fn forward(&self, x: ArrayView2<'_, f64>, adapter: Option<&LoraAdapter>) -> Result<Array2<f64>> {
        if x.ncols() != self.w_eff.nrows() {
            return Err(Error::Shape(format!(
                "input width {} does not match realized weights {}",
                x.ncols(),
                self.w_eff.nrows()
            )));
        }
        let x_q = x.mapv(|v| quantize(v, self.conv.dac_bits, self.conv.input_bound));
        let mut y = x_q.dot(&self.w_eff);
        let gamma = self.gamma.unwrap_or(1.0);
        for mut row in y.rows_mut() {
            let slice = row.as_slice_mut().expect("row-major layout");
            self.conv.output_stage(slice, Some(gamma));
        }
        if let Some(ad) = adapter {
            let mut lora = x.dot(&ad.a).dot(&ad.b);
            lora.mapv_inplace(|v| v * ad.scaling);
            y += &lora;
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{pop_std, stream_rng};
    use ndarray::array;
    use rand_distr::Normal;

    fn gaussian(m: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream_rng(seed, &[4242]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        Array2::from_shape_fn((m, n), |_| normal.sample(&mut rng))
    }

    fn wide_conv(n_out: usize) -> ConverterSpec {
        ConverterSpec {
            dac_bits: 16,
            adc_bits: 16,
            input_bound: 6.0,
            output_bound: 12.0,
            affine_scale: vec![1.0; n_out],
            affine_offset: vec![0.0; n_out],
        }
    }

    #[test]
    fn disabled_noise_wide_converters_zero_b_matches_plain_matmul() {
        let x = gaussian(6, 10, 1);
        let w = gaussian(10, 4, 2);
        let adapter = LoraAdapter::init(10, 4, 3, 1.0, 3);
        let spec = HwaNoiseSpec::disabled();
        let conv = wide_conv(4);
        let mut rng = stream_rng(4, &[]);
        let (y, _) =
            hwa_linear_forward(x.view(), w.view(), Some(&adapter), &spec, Some(&conv), &mut rng)
                .unwrap();
        let y_ref = x.dot(&w);
        let denom = y_ref.iter().fold(1e-12f64, |a, v| a.max(v.abs()));
        for (a, b) in y.iter().zip(y_ref.iter()) {
            assert!((a - b).abs() / denom < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_input_with_noise_disabled_gives_zero_output() {
        let x = Array2::<f64>::zeros((3, 5));
        let w = gaussian(5, 2, 5);
        let spec = HwaNoiseSpec::disabled();
        let mut rng = stream_rng(6, &[]);
        let (y, _) = hwa_linear_forward(x.view(), w.view(), None, &spec, None, &mut rng).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weight_noise_std_matches_amplitude() {
        // Single column with max |w| = 1: per-element std must be 0.067.
        let w = array![[1.0], [0.5], [-0.25], [0.1]];
        let mut rng = stream_rng(7, &[]);
        let mut draws = Vec::with_capacity(100_000);
        for _ in 0..25_000 {
            let e = sample_weight_noise(w.view(), 0.067, &mut rng);
            draws.extend(e.iter().copied());
        }
        let std = pop_std(&draws);
        assert!((std - 0.067).abs() / 0.067 < 0.03, "std = {std}");
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let x = gaussian(4, 6, 8);
        let w = gaussian(6, 3, 9);
        let adapter = LoraAdapter::init(6, 3, 2, 1.0, 10);
        let spec = HwaNoiseSpec::default();
        let conv = wide_conv(3);
        let mut rng = stream_rng(11, &[]);
        let (_, cache) =
            hwa_linear_forward(x.view(), w.view(), Some(&adapter), &spec, Some(&conv), &mut rng)
                .unwrap();
        let g = Array2::<f64>::zeros((4, 3));
        let grads = hwa_linear_backward(g.view(), &cache, Some(&adapter)).unwrap();
        assert!(grads.dx.iter().all(|&v| v == 0.0));
        assert!(grads.d_a.unwrap().iter().all(|&v| v == 0.0));
        assert!(grads.d_b.unwrap().iter().all(|&v| v == 0.0));
    }

    /// Frozen-noise finite differences on a small instance: adapter grads are
    /// exact because the quantized meta path is constant in (A, B); grad_x is
    /// checked with converters off (the staircase has no usable derivative)
    /// but noise on.
    #[test]
    fn gradients_match_central_finite_differences() {
        let x = gaussian(2, 2, 12);
        let w = gaussian(2, 2, 13);
        let mut adapter = LoraAdapter::init(2, 2, 2, 1.0, 14);
        adapter.b = gaussian(2, 2, 15); // move B off zero so dA is nonzero
        let spec = HwaNoiseSpec { output_noise: 0.0, ..Default::default() };
        let conv = wide_conv(2);
        let seed = 777u64;
        let h = 1e-4;

        // Loss = sum(y^2) / 2 with the SAME noise stream each evaluation.
        let loss = |ad: &LoraAdapter, xin: &Array2<f64>, with_conv: bool| -> f64 {
            let mut rng = stream_rng(seed, &[]);
            let conv_opt = with_conv.then_some(&conv);
            let (y, _) =
                hwa_linear_forward(xin.view(), w.view(), Some(ad), &spec, conv_opt, &mut rng)
                    .unwrap();
            0.5 * y.iter().map(|v| v * v).sum::<f64>()
        };

        let mut rng = stream_rng(seed, &[]);
        let (y, cache) =
            hwa_linear_forward(x.view(), w.view(), Some(&adapter), &spec, Some(&conv), &mut rng)
                .unwrap();
        let grads = hwa_linear_backward(y.view(), &cache, Some(&adapter)).unwrap();

        // Adapter gradients, converters active.
        let d_a = grads.d_a.as_ref().unwrap();
        let d_b = grads.d_b.as_ref().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut plus = adapter.clone();
                plus.a[(i, j)] += h;
                let mut minus = adapter.clone();
                minus.a[(i, j)] -= h;
                let fd = (loss(&plus, &x, true) - loss(&minus, &x, true)) / (2.0 * h);
                assert!(
                    (fd - d_a[(i, j)]).abs() / d_a[(i, j)].abs().max(1e-6) < 1e-3,
                    "dA[{i},{j}]: fd {fd} vs {}",
                    d_a[(i, j)]
                );

                let mut plus = adapter.clone();
                plus.b[(i, j)] += h;
                let mut minus = adapter.clone();
                minus.b[(i, j)] -= h;
                let fd = (loss(&plus, &x, true) - loss(&minus, &x, true)) / (2.0 * h);
                assert!(
                    (fd - d_b[(i, j)]).abs() / d_b[(i, j)].abs().max(1e-6) < 1e-3,
                    "dB[{i},{j}]: fd {fd} vs {}",
                    d_b[(i, j)]
                );
            }
        }

        // grad_x with converters off (smooth path), noise still frozen.
        let mut rng = stream_rng(seed, &[]);
        let (y2, cache2) =
            hwa_linear_forward(x.view(), w.view(), Some(&adapter), &spec, None, &mut rng).unwrap();
        let grads2 = hwa_linear_backward(y2.view(), &cache2, Some(&adapter)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut plus = x.clone();
                plus[(i, j)] += h;
                let mut minus = x.clone();
                minus[(i, j)] -= h;
                let fd = (loss(&adapter, &plus, false) - loss(&adapter, &minus, false)) / (2.0 * h);
                let an = grads2.dx[(i, j)];
                assert!((fd - an).abs() / an.abs().max(1e-6) < 1e-3, "dx[{i},{j}]: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn clipped_input_coordinate_gets_lora_only_gradient() {
        let mut x = gaussian(1, 3, 16);
        x[(0, 1)] = 50.0; // far outside the input bound
        let w = gaussian(3, 2, 17);
        let mut adapter = LoraAdapter::init(3, 2, 2, 1.0, 18);
        adapter.b = gaussian(2, 2, 19);
        let spec = HwaNoiseSpec::disabled();
        let conv = ConverterSpec {
            dac_bits: 8,
            adc_bits: 16,
            input_bound: 2.0,
            output_bound: 200.0,
            affine_scale: vec![],
            affine_offset: vec![],
        };
        let mut rng = stream_rng(20, &[]);
        let (_, cache) =
            hwa_linear_forward(x.view(), w.view(), Some(&adapter), &spec, Some(&conv), &mut rng)
                .unwrap();
        let g = gaussian(1, 2, 21);
        let grads = hwa_linear_backward(g.view(), &cache, Some(&adapter)).unwrap();
        // The meta path is masked out at the clipped coordinate; what is left
        // is exactly the LoRA contribution.
        let lora_only = g.dot(&adapter.b.t()).dot(&adapter.a.t());
        assert!((grads.dx[(0, 1)] - lora_only[(0, 1)]).abs() < 1e-12);
        // A non-clipped coordinate sees both paths.
        assert!((grads.dx[(0, 0)] - lora_only[(0, 0)]).abs() > 1e-9);
    }

    #[test]
    fn repeated_backward_on_one_cache_is_identical() {
        let x = gaussian(3, 4, 22);
        let w = gaussian(4, 3, 23);
        let adapter = LoraAdapter::init(4, 3, 2, 1.0, 24);
        let spec = HwaNoiseSpec::default();
        let conv = wide_conv(3);
        let mut rng = stream_rng(25, &[]);
        let (y, cache) =
            hwa_linear_forward(x.view(), w.view(), Some(&adapter), &spec, Some(&conv), &mut rng)
                .unwrap();
        let g1 = hwa_linear_backward(y.view(), &cache, Some(&adapter)).unwrap();
        let g2 = hwa_linear_backward(y.view(), &cache, Some(&adapter)).unwrap();
        assert_eq!(g1.dx, g2.dx);
        assert_eq!(g1.d_a, g2.d_a);
        assert_eq!(g1.d_b, g2.d_b);
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let x = gaussian(2, 3, 26);
        let w = gaussian(4, 2, 27);
        let spec = HwaNoiseSpec::disabled();
        let mut rng = stream_rng(28, &[]);
        assert!(matches!(
            hwa_linear_forward(x.view(), w.view(), None, &spec, None, &mut rng),
            Err(Error::Shape(_))
        ));
    }
}
