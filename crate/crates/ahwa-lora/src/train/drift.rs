//! Drift-sweep evaluation: realize the programmed tiles at a series of times
//! after programming, re-sampling read noise per trial and recalibrating the
//! drift compensation at every time point, and report the task metric as
//! mean and std over trials.

use serde::{Deserialize, Serialize};

use crate::nn::{Deployment, ForwardMode};
use crate::util::{mean, pop_std, stream_rng};
use crate::{Error, Result};

use super::task::Dataset;
use super::evaluate_accuracy;

/// One evaluation time: a human label and absolute seconds after
/// programming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub label: String,
    pub seconds: f64,
}

/// Parse a time label (`0s`, `1h`, `1d`, `1w`, `1m`, `1y`, `10y`, or any
/// `<number><unit>`). `0s` maps to the drift reference time: the power law
/// is undefined before it.
pub fn parse_time_label(label: &str, t0: f64) -> Result<f64> {
    let label = label.trim();
    if label == "0s" {
        return Ok(t0);
    }
    let split = label
        .find(|c: char| !c.is_ascii_digit() && c != '.' && c != '-')
        .ok_or_else(|| Error::Config(format!("time label '{label}' has no unit")))?;
    let (num, unit) = label.split_at(split);
    let v: f64 = num
        .parse()
        .map_err(|_| Error::Config(format!("time label '{label}': bad number '{num}'")))?;
    let factor = match unit {
        "s" => 1.0,
        "h" => 3600.0,
        "d" => 86_400.0,
        "w" => 604_800.0,
        "m" => 2.592e6,  // 30 days
        "y" => 3.1536e7, // 365 days
        _ => return Err(Error::Config(format!("time label '{label}': unknown unit '{unit}'"))),
    };
    let seconds = v * factor;
    if seconds < t0 {
        return Err(Error::Config(format!(
            "time label '{label}' ({seconds} s) is before the drift reference time {t0} s"
        )));
    }
    Ok(seconds)
}

/// The drift-evaluation schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvalPlan {
    pub times: Vec<TimePoint>,
    pub trials: usize,
    pub gdc: bool,
    /// Reads averaged per calibration measurement.
    pub gdc_reads: usize,
}

impl DriftEvalPlan {
    /// The standard seven-point schedule: 0s, 1h, 1d, 1w, 1m, 1y, 10y.
    pub fn standard(t0: f64) -> Self {
        let labels = ["0s", "1h", "1d", "1w", "1m", "1y", "10y"];
        DriftEvalPlan {
            times: labels
                .iter()
                .map(|l| TimePoint {
                    label: l.to_string(),
                    seconds: parse_time_label(l, t0).expect("standard labels parse"),
                })
                .collect(),
            trials: 10,
            gdc: true,
            gdc_reads: 10,
        }
    }

    pub fn from_labels(labels: &[String], t0: f64, trials: usize, gdc: bool) -> Result<Self> {
        let mut times = Vec::with_capacity(labels.len());
        for l in labels {
            times.push(TimePoint { label: l.clone(), seconds: parse_time_label(l, t0)? });
        }
        let plan = DriftEvalPlan { times, trials, gdc, gdc_reads: 10 };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("drift plan needs trials >= 1".into()));
        }
        if self.times.is_empty() {
            return Err(Error::Config("drift plan needs at least one time".into()));
        }
        for w in self.times.windows(2) {
            if w[1].seconds < w[0].seconds {
                return Err(Error::Config("drift times must be sorted ascending".into()));
            }
        }
        Ok(())
    }
}

/// One row of the drift table.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftRow {
    pub label: String,
    pub seconds: f64,
    pub metric_mean: f64,
    pub metric_std: f64,
    pub trials: usize,
    pub gdc: bool,
    pub seed: u64,
}

/// The metric of a single trial at one time point. Exposed so that a k-trial
/// sweep is exactly the mean of k single-trial calls with matching indices.
pub fn drift_trial_metric(
    dep: &Deployment,
    data: &Dataset,
    time_index: usize,
    seconds: f64,
    trial: usize,
    plan: &DriftEvalPlan,
    seed: u64,
    batch_size: usize,
) -> Result<f64> {
    let mut rng = stream_rng(seed, &[0xd21f7, time_index as u64, trial as u64]);
    let reals = dep.realize(seconds, true, plan.gdc, plan.gdc_reads, &mut rng)?;
    evaluate_accuracy(&dep.model, data, &ForwardMode::InferAnalog { reals: &reals }, batch_size)
}

/// Full sweep: per time point, `trials` independent read realizations (with
/// optional per-time drift-compensation recalibration), reported as
/// mean plus/minus std.
pub fn evaluate_drift(
    dep: &Deployment,
    data: &Dataset,
    plan: &DriftEvalPlan,
    seed: u64,
    batch_size: usize,
) -> Result<Vec<DriftRow>> {
    plan.validate()?;
    if data.is_empty() {
        return Err(Error::Config("drift evaluation needs a non-empty dataset".into()));
    }
    let mut rows = Vec::with_capacity(plan.times.len());
    for (ti, tp) in plan.times.iter().enumerate() {
        let mut accs = Vec::with_capacity(plan.trials);
        for k in 0..plan.trials {
            accs.push(drift_trial_metric(dep, data, ti, tp.seconds, k, plan, seed, batch_size)?);
        }
        rows.push(DriftRow {
            label: tp.label.clone(),
            seconds: tp.seconds,
            metric_mean: mean(&accs),
            metric_std: pop_std(&accs),
            trials: plan.trials,
            gdc: plan.gdc,
            seed,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_labels_map_to_expected_seconds() {
        let plan = DriftEvalPlan::standard(20.0);
        let secs: Vec<f64> = plan.times.iter().map(|t| t.seconds).collect();
        assert_eq!(secs, vec![20.0, 3600.0, 86_400.0, 604_800.0, 2.592e6, 3.1536e7, 3.1536e8]);
    }

    #[test]
    fn labels_before_reference_time_are_rejected() {
        assert!(parse_time_label("5s", 20.0).is_err());
        assert!(parse_time_label("bogus", 20.0).is_err());
        assert_eq!(parse_time_label("0s", 20.0).unwrap(), 20.0);
        assert_eq!(parse_time_label("2h", 20.0).unwrap(), 7200.0);
    }

    #[test]
    fn plan_validation_catches_bad_order_and_zero_trials() {
        let mut plan = DriftEvalPlan::standard(20.0);
        plan.times.swap(1, 2);
        assert!(plan.validate().is_err());
        let mut plan = DriftEvalPlan::standard(20.0);
        plan.trials = 0;
        assert!(plan.validate().is_err());
    }
}
