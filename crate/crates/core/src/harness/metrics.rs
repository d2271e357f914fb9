//! Ground-truth metrics: additive distortion, performance and alarm timing.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::detect::{Calibration, TestStat, Threshold};
use crate::error::{Error, Result};
use crate::harness::config::Scenario;
use crate::harness::sim::Trace;
use crate::linsys::PlantModel;
use crate::residual::{kalman_design, kalman_step, KalmanState, RICCATI_MAX_ITER, RICCATI_TOL};
use crate::signal::Signal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub name: String,
    pub alarms: usize,
    pub first_alarm: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Threshold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub class: String,
    pub horizon: usize,
    pub onset: Option<usize>,
    /// `(1/T) sum ||v[t]||^2`.
    pub distortion_power: f64,
    pub distortion_power_after_onset: Option<f64>,
    /// Mean square of `d[t] = z[t] - y[t]`.
    pub distortion_ms: f64,
    pub ms_x: f64,
    pub ms_y: f64,
    pub ms_z: f64,
    pub windows_evaluated: usize,
    /// End time of the first alarmed window.
    pub first_alarm: Option<usize>,
    pub first_alarm_after_onset: Option<usize>,
    /// `first_alarm_after_onset - onset`.
    pub delay: Option<usize>,
    pub false_alarms_before_onset: usize,
    pub tests: Vec<TestSummary>,
}

fn check_ground_truth(trace: &Trace) -> Result<()> {
    let len = trace.z.len();
    if trace.w.len() != len {
        return Err(Error::MissingGroundTruth("process noise w"));
    }
    if trace.y.len() != len || trace.x.len() != len {
        return Err(Error::MissingGroundTruth("true outputs"));
    }
    Ok(())
}

/// Additive distortion `v[t]` per step (row 0 is zero).
///
/// The plant recursion holds exactly in the trace, so each class's definition
/// reduces to a filter on `d = z - y`; honest runs give exactly zero.
pub fn distortion_series(trace: &Trace, scenario: &Scenario) -> Result<Signal> {
    check_ground_truth(trace)?;
    let len = trace.len();
    let dim = match &scenario.plant {
        PlantModel::Partial(p) => p.order(),
        p => p.output_dim(),
    };
    let mut v = Signal::with_capacity(dim, len);
    if len == 0 {
        return Ok(v);
    }
    v.push(&vec![0.0; dim]);
    let d = |t: i64, i: usize| trace.z.at(t, i) - trace.y.at(t, i);
    match &scenario.plant {
        PlantModel::Scalar(p) => {
            for t in 1..len as i64 {
                v.push(&[d(t, 0) - p.a * d(t - 1, 0)]);
            }
        }
        PlantModel::Arx(p) => {
            for t in 1..len as i64 {
                let mut acc = d(t, 0);
                for (m, a) in p.a.iter().enumerate() {
                    acc += a * d(t - 1 - m as i64, 0);
                }
                v.push(&[acc]);
            }
        }
        PlantModel::Armax(p) => {
            for t in 1..len as i64 {
                let mut acc = d(t, 0);
                for (k, a) in p.a.iter().enumerate() {
                    acc += a * d(t - 1 - k as i64, 0);
                }
                v.push(&[acc]);
            }
        }
        PlantModel::Mimo(p) => {
            let n = p.states();
            for t in 1..len as i64 {
                let dt = DVector::from_fn(n, |i, _| d(t, i));
                let dp = DVector::from_fn(n, |i, _| d(t - 1, i));
                v.push((dt - &p.a * dp).as_slice());
            }
        }
        PlantModel::Partial(p) => {
            // Detector filter on reports against the oracle filter on true outputs.
            let design = kalman_design(p, RICCATI_TOL, RICCATI_MAX_ITER)?;
            let mut on_z = KalmanState::new(p.order());
            let mut on_y = KalmanState::new(p.order());
            for t in 1..len as i64 {
                let g = trace.u_g.at(t - 1, 0);
                let e = trace.e_shaped.at(t - 1, 0);
                let qf = kalman_step(&mut on_z, &design, p, trace.z.at(t, 0), g, e).q;
                let qr = kalman_step(&mut on_y, &design, p, trace.y.at(t, 0), g, e).q;
                v.push((qf - qr).as_slice());
            }
        }
    }
    Ok(v)
}

fn mean_square(s: &Signal, from: usize) -> f64 {
    let rows = s.len().saturating_sub(from);
    if rows == 0 {
        return 0.0;
    }
    s.rows().skip(from).map(|r| r.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / rows as f64
}

pub fn oracle_metrics(trace: &Trace, scenario: &Scenario, calibration: Option<&Calibration>) -> Result<RunReport> {
    let v = distortion_series(trace, scenario)?;
    let onset = scenario.attack.active_onset();
    let mut d = Signal::with_capacity(trace.z.dim(), trace.len());
    for t in 0..trace.len() {
        let row: Vec<f64> = trace.z.row(t).iter().zip(trace.y.row(t)).map(|(z, y)| z - y).collect();
        d.push(&row);
    }
    let before = |end: usize| onset.is_some_and(|o| end < o);
    let after = |end: usize| onset.is_some_and(|o| end >= o);
    let first_alarm = trace.windows.iter().find(|w| w.alarm).map(|w| w.end_t);
    let first_alarm_after_onset = trace.windows.iter().find(|w| w.alarm && after(w.end_t)).map(|w| w.end_t);
    let false_alarms_before_onset = trace
        .windows
        .iter()
        .filter(|w| w.alarm && (onset.is_none() || before(w.end_t)))
        .count();
    let tests = trace
        .test_names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let alarmed: Vec<usize> = trace.windows.iter().filter(|w| w.alarms[i]).map(|w| w.end_t).collect();
            TestSummary {
                name: name.clone(),
                alarms: alarmed.len(),
                first_alarm: alarmed.first().copied(),
                threshold: calibration.and_then(|c| c.tests.iter().find(|t| &t.name == name)).map(|t| t.threshold),
            }
        })
        .collect();
    Ok(RunReport {
        scenario: scenario.name().to_string(),
        class: scenario.plant.class_name().to_string(),
        horizon: trace.len(),
        onset,
        distortion_power: mean_square(&v, 1),
        distortion_power_after_onset: onset.map(|o| mean_square(&v, o.max(1))),
        distortion_ms: mean_square(&d, 0),
        ms_x: mean_square(&trace.x, 0),
        ms_y: mean_square(&trace.y, 0),
        ms_z: mean_square(&trace.z, 0),
        windows_evaluated: trace.windows.len(),
        first_alarm,
        first_alarm_after_onset,
        delay: first_alarm_after_onset.zip(onset).map(|(a, o)| a - o),
        false_alarms_before_onset,
        tests,
    })
}

/// One point of the windowed negative log-likelihood curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllPoint {
    pub window_end_t: usize,
    pub nll: f64,
    pub threshold: f64,
}

pub fn nll_series(trace: &Trace, calibration: &Calibration) -> Vec<NllPoint> {
    let Some((idx, test)) = calibration
        .tests
        .iter()
        .enumerate()
        .find(|(_, t)| matches!(t.stat, TestStat::Nll { .. }))
    else {
        return Vec::new();
    };
    let Some(col) = trace.test_names.iter().position(|n| n == &test.name) else { return Vec::new() };
    debug_assert_eq!(col, idx);
    trace
        .windows
        .iter()
        .map(|w| NllPoint {
            window_end_t: w.end_t,
            nll: w.values[col],
            threshold: test.threshold.upper(),
        })
        .collect()
}
