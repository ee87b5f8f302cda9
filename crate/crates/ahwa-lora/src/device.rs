//! Statistical PCM device physics.
//!
//! Three nonidealities are modeled, each driven by an explicit seeded RNG:
//!
//! - programming noise: a Gaussian write error whose std is a quadratic
//!   polynomial in the normalized target conductance,
//! - conductance drift: the deterministic power law `G(t) = G_prog (t/t0)^-nu`
//!   with a per-device exponent,
//! - read noise: a Gaussian read error whose std grows slowly with time since
//!   programming.
//!
//! All conductances are in microsiemens and all times in seconds. Every
//! sampler is a pure function of `(inputs, model, rng state)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Statistical parameters of the PCM device population.
///
/// The default values are calibration placeholders for the device family the
/// simulator targets; every field is expected to be overridden from measured
/// data when such data is available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcmDeviceModel {
    /// Maximum programmable conductance (µS).
    pub g_max: f64,
    /// Dimensionless coefficients `(c0, c1, c2)` of the programming-noise
    /// polynomial: `sigma_prog = g_max * (c0 + c1*g^ + c2*g^2)` with
    /// `g^ = g_target / g_max`.
    pub prog_noise_coeffs: [f64; 3],
    /// Lower bound on the programming-noise std, relative to `g_max`. Keeps
    /// the default polynomial (which dips negative near `g_max`) physical.
    pub prog_noise_floor: f64,
    /// Mean drift exponent.
    pub nu_mean: f64,
    /// Device-to-device std of the drift exponent.
    pub nu_std: f64,
    /// Clamp bounds for sampled drift exponents.
    pub nu_min: f64,
    pub nu_max: f64,
    /// Read-noise coefficient (relative to instantaneous conductance).
    pub read_noise_coeff: f64,
    /// Drift reference time (s): the time after programming at which the
    /// conductance equals its programmed value.
    pub t0: f64,
    /// Read-pulse duration (s).
    pub t_read: f64,
}

impl Default for PcmDeviceModel {
    fn default() -> Self {
        PcmDeviceModel {
            g_max: 25.0,
            // 0.26 + 1.13*g^ - 1.75*g^2 in µS at g_max = 25, expressed
            // relative to g_max.
            prog_noise_coeffs: [0.26 / 25.0, 1.13 / 25.0, -1.75 / 25.0],
            prog_noise_floor: 0.01,
            nu_mean: 0.06,
            nu_std: 0.02,
            nu_min: 0.0,
            nu_max: 0.12,
            read_noise_coeff: 0.02,
            t0: 20.0,
            t_read: 250e-9,
        }
    }
}

impl PcmDeviceModel {
    /// A model with every stochastic term switched off. Drift statistics are
    /// kept (`nu_mean` stays at its default) but the per-device spread is
    /// zero, so programming and reading become deterministic.
    pub fn noiseless() -> Self {
        PcmDeviceModel {
            prog_noise_coeffs: [0.0; 3],
            prog_noise_floor: 0.0,
            nu_std: 0.0,
            read_noise_coeff: 0.0,
            ..Default::default()
        }
    }

    /// Validate the invariants on the parameter set.
    pub fn validate(&self) -> Result<()> {
        if !(self.g_max > 0.0) {
            return Err(Error::Config(format!("pcm: g_max must be > 0, got {}", self.g_max)));
        }
        if !(self.nu_min <= self.nu_mean && self.nu_mean <= self.nu_max) {
            return Err(Error::Config(format!(
                "pcm: nu_mean {} outside clamp bounds [{}, {}]",
                self.nu_mean, self.nu_min, self.nu_max
            )));
        }
        if self.nu_std < 0.0 || self.read_noise_coeff < 0.0 || self.prog_noise_floor < 0.0 {
            return Err(Error::Config("pcm: noise coefficients must be >= 0".into()));
        }
        if !(self.t0 > 0.0) {
            return Err(Error::Config(format!("pcm: t0 must be > 0, got {}", self.t0)));
        }
        if !(self.t_read > 0.0) {
            return Err(Error::Config(format!("pcm: t_read must be > 0, got {}", self.t_read)));
        }
        Ok(())
    }

    /// Programming-noise std (µS) for a target conductance.
    pub fn sigma_prog(&self, g_target: f64) -> f64 {
        let gn = g_target / self.g_max;
        let [c0, c1, c2] = self.prog_noise_coeffs;
        let poly = c0 + c1 * gn + c2 * gn * gn;
        self.g_max * poly.max(self.prog_noise_floor)
    }

    /// Read-noise std (µS) at conductance `g_t` and time-since-programming `t`.
    pub fn sigma_read(&self, g_t: f64, t: f64) -> f64 {
        self.read_noise_coeff * g_t * ((t + self.t_read) / (2.0 * self.t_read)).ln().sqrt()
    }
}

/// One physical device: its intended conductance, the value the write
/// actually landed on, and its drift exponent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeviceState {
    pub g_target: f64,
    pub g_programmed: f64,
    pub nu: f64,
}

/// Draw the conductance a write of `g_target` actually lands on.
///
/// The error is Gaussian with the model's state-dependent std; the result is
/// clamped at zero because conductances are non-negative.
pub fn sample_programmed_conductance<R: Rng>(
    g_target: f64,
    model: &PcmDeviceModel,
    rng: &mut R,
) -> Result<f64> {
    if !(0.0..=model.g_max).contains(&g_target) {
        return Err(Error::Domain(format!(
            "g_target {} outside [0, {}]",
            g_target, model.g_max
        )));
    }
    let sigma = model.sigma_prog(g_target);
    if sigma == 0.0 {
        return Ok(g_target);
    }
    let eps = Normal::new(0.0, sigma).expect("sigma is finite and positive").sample(rng);
    Ok((g_target + eps).max(0.0))
}

/// Deterministic power-law drift: `g * (t/t0)^-nu`.
///
/// `t` counts from programming; the law is undefined before the reference
/// time `t0`.
pub fn apply_drift(g_programmed: f64, nu: f64, t: f64, model: &PcmDeviceModel) -> Result<f64> {
    if t < model.t0 {
        return Err(Error::Domain(format!(
            "drift time {} s is before the reference time t0 = {} s",
            t, model.t0
        )));
    }
    Ok(g_programmed * (t / model.t0).powf(-nu))
}

/// Draw a single read of a device sitting at conductance `g_t` at time `t`
/// after programming.
///
/// The std is `read_noise_coeff * g_t * sqrt(ln((t + t_read) / (2 t_read)))`;
/// the log factor needs `t >= t_read`, which is the precondition enforced
/// here (reads during the programming pulse itself are not modeled).
pub fn sample_read_conductance<R: Rng>(
    g_t: f64,
    t: f64,
    model: &PcmDeviceModel,
    rng: &mut R,
) -> Result<f64> {
    if g_t < 0.0 {
        return Err(Error::Domain(format!("conductance {} must be >= 0", g_t)));
    }
    if t < model.t_read {
        return Err(Error::Domain(format!(
            "read time {} s is before the read-pulse duration {} s",
            t, model.t_read
        )));
    }
    let sigma = model.sigma_read(g_t, t);
    if sigma == 0.0 {
        return Ok(g_t);
    }
    let eps = Normal::new(0.0, sigma).expect("sigma is finite and positive").sample(rng);
    Ok((g_t + eps).max(0.0))
}

/// Draw a per-device drift exponent: Gaussian around `nu_mean`, clamped to
/// the model's physical bounds.
pub fn sample_nu<R: Rng>(model: &PcmDeviceModel, rng: &mut R) -> f64 {
    if model.nu_std == 0.0 {
        return model.nu_mean.clamp(model.nu_min, model.nu_max);
    }
    let nu = Normal::new(model.nu_mean, model.nu_std)
        .expect("nu_std is finite and positive")
        .sample(rng);
    nu.clamp(model.nu_min, model.nu_max)
}
