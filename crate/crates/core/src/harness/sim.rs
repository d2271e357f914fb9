//! Seeded closed-loop execution and the detector pass over its reports.

use nalgebra::DVector;

use crate::adversary::{CustomRegistry, Sensor, SensorView};
use crate::detect::{calibrate, Calibration, Evaluator, NullModel, WindowRecord, WindowedDetector};
use crate::error::{ensure_all_finite, Error, Result};
use crate::harness::config::Scenario;
use crate::linsys::{step_armax, step_arx, step_partial, step_scalar, step_statespace, PlantModel};
use crate::random::{stream_rng, NoiseDist, Stream, StreamRng};
use crate::residual::ResidualEngine;
use crate::signal::Signal;
use crate::watermark::ExcitationSource;

/// Everything recorded during one run. Row `t` of each signal holds the value
/// at time `t`; `w[0]` is zero and `n` is zero for fully observed plants.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub x: Signal,
    pub y: Signal,
    pub z: Signal,
    pub u: Signal,
    pub u_g: Signal,
    pub e_raw: Signal,
    pub e_shaped: Signal,
    pub w: Signal,
    pub n: Signal,
    pub test_names: Vec<String>,
    pub windows: Vec<WindowRecord>,
}

impl Trace {
    pub fn empty(plant: &PlantModel) -> Self {
        Self::with_dims(
            plant.state_dim(),
            plant.output_dim(),
            plant.input_dim(),
            plant.noise_dim(),
            0,
        )
    }

    pub(crate) fn with_dims(nx: usize, ny: usize, m: usize, nw: usize, rows: usize) -> Self {
        Trace {
            x: Signal::with_capacity(nx, rows),
            y: Signal::with_capacity(ny, rows),
            z: Signal::with_capacity(ny, rows),
            u: Signal::with_capacity(m, rows),
            u_g: Signal::with_capacity(m, rows),
            e_raw: Signal::with_capacity(m, rows),
            e_shaped: Signal::with_capacity(m, rows),
            w: Signal::with_capacity(nw, rows),
            n: Signal::with_capacity(1, rows),
            test_names: Vec::new(),
            windows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// A calibrated detector ready to scan report streams.
#[derive(Debug, Clone)]
pub struct DetectorSetup {
    pub calibration: Calibration,
    pub evaluator: Evaluator,
    pub burn_in: usize,
}

fn evaluator_for(scenario: &Scenario) -> Result<(Evaluator, usize)> {
    let engine = ResidualEngine::new(&scenario.plant)?;
    let null = NullModel::for_plant(
        &scenario.plant,
        scenario.watermark.excitation,
        scenario.process_noise,
        engine.kalman_design(),
    )?;
    let burn_in = engine.burn_in().max(scenario.watermark.shaper.burn_in());
    Ok((Evaluator::new(null)?, burn_in))
}

/// Calibrates the scenario's detector; `None` when detection is disabled.
pub fn calibrate_scenario(scenario: &Scenario) -> Result<Option<DetectorSetup>> {
    let Some(spec) = &scenario.detector else { return Ok(None) };
    let (evaluator, burn_in) = evaluator_for(scenario)?;
    let calibration = calibrate(spec, &evaluator)?;
    log::debug!("calibrated {} tests at l={}", calibration.tests.len(), calibration.window);
    Ok(Some(DetectorSetup {
        calibration,
        evaluator,
        burn_in: burn_in.max(spec.burn_in),
    }))
}

/// Rebuilds a detector around thresholds calibrated earlier.
pub fn detector_with(scenario: &Scenario, calibration: Calibration) -> Result<DetectorSetup> {
    let (evaluator, burn_in) = evaluator_for(scenario)?;
    let user = scenario.detector.as_ref().map_or(0, |d| d.burn_in);
    Ok(DetectorSetup {
        calibration,
        evaluator,
        burn_in: burn_in.max(user),
    })
}

/// Scans reports, policy inputs and raw excitation: the detector's whole view.
pub fn detect_windows(
    scenario: &Scenario,
    setup: &DetectorSetup,
    z: &Signal,
    u_g: &Signal,
    e_raw: &Signal,
) -> Result<Vec<WindowRecord>> {
    let mut engine = ResidualEngine::new(&scenario.plant)?;
    let mut detector = WindowedDetector::new(setup.calibration.clone(), setup.evaluator.clone(), setup.burn_in);
    let mut windows = Vec::new();
    for t in 0..z.len() {
        if let Some(frame) = engine.process(t, z, u_g, e_raw)? {
            if let Some(rec) = detector.push(&frame) {
                windows.push(rec);
            }
        }
    }
    Ok(windows)
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Reuse thresholds instead of calibrating for this run.
    pub detector: Option<&'a DetectorSetup>,
    pub registry: Option<&'a CustomRegistry>,
    /// Replaces the attack stream derived from the seed.
    pub attack_rng: Option<StreamRng>,
    /// Skip the detector pass.
    pub skip_detection: bool,
}

pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<Trace> {
    run_scenario_with(scenario, seed, RunOptions::default())
}

pub fn run_scenario_with(scenario: &Scenario, seed: u64, opts: RunOptions<'_>) -> Result<Trace> {
    let default_registry;
    let registry = match opts.registry {
        Some(r) => r,
        None => {
            default_registry = CustomRegistry::default();
            &default_registry
        }
    };
    let mut trace = simulate(scenario, seed, registry, opts.attack_rng)?;
    if opts.skip_detection {
        return Ok(trace);
    }
    let owned;
    let setup = match opts.detector {
        Some(s) => Some(s),
        None => {
            owned = calibrate_scenario(scenario)?;
            owned.as_ref()
        }
    };
    if let Some(setup) = setup {
        trace.test_names = setup.calibration.tests.iter().map(|t| t.name.clone()).collect();
        trace.windows = detect_windows(scenario, setup, &trace.z, &trace.u_g, &trace.e_raw)?;
    }
    Ok(trace)
}

fn simulate(scenario: &Scenario, seed: u64, registry: &CustomRegistry, attack_rng: Option<StreamRng>) -> Result<Trace> {
    let plant = &scenario.plant;
    let horizon = scenario.horizon();
    let (nx, m, nw) = (plant.state_dim(), plant.input_dim(), plant.noise_dim());
    let mut trace = Trace::with_dims(nx, plant.output_dim(), m, nw, horizon);

    let mut rng_w = stream_rng(seed, Stream::Process);
    let mut rng_n = stream_rng(seed, Stream::Measurement);
    let mut sources: Vec<ExcitationSource> = (0..m)
        .map(|i| ExcitationSource::new(scenario.watermark.clone(), stream_rng(seed, Stream::Excitation(i))))
        .collect();
    let attack_rng = attack_rng.unwrap_or_else(|| stream_rng(seed, Stream::Attack));
    let mut sensor = Sensor::new(
        scenario.attack.clone(),
        plant,
        scenario.watermark.excitation,
        attack_rng,
        registry,
    )?;
    let measurement = match plant {
        PlantModel::Partial(p) => Some(NoiseDist::gaussian(p.sigma_n2)),
        _ => None,
    };

    let mut x = scenario.x0.clone();
    let mut w = vec![0.0; nw];
    let mut n = measurement.map_or(0.0, |d| d.sample(&mut rng_n));
    let mut y = output(plant, &x, n);
    for t in 0..horizon {
        trace.x.push(&x);
        trace.y.push(&y);
        trace.w.push(&w);
        trace.n.push(&[n]);

        let view = SensorView {
            t,
            y: &trace.y,
            z: &trace.z,
            u_g: &trace.u_g,
            plant,
            excitation: scenario.watermark.excitation,
            process_noise: scenario.process_noise,
        };
        let z = sensor.report(&view)?;
        ensure_all_finite(&z, "report")?;
        trace.z.push(&z);

        let ug = scenario.policy.evaluate(&trace.z, &trace.u_g);
        trace.u_g.push(&ug);
        let mut raw = Vec::with_capacity(m);
        let mut shaped = Vec::with_capacity(m);
        for src in sources.iter_mut() {
            let (r, s) = src.next_sample();
            raw.push(r);
            shaped.push(s);
        }
        let u: Vec<f64> = ug.iter().zip(&shaped).map(|(g, s)| g + s).collect();
        trace.e_raw.push(&raw);
        trace.e_shaped.push(&shaped);
        trace.u.push(&u);

        if t + 1 == horizon {
            break;
        }
        w = scenario.process_noise.sample_vec(&mut rng_w, nw);
        n = measurement.map_or(0.0, |d| d.sample(&mut rng_n));
        x = advance(plant, &trace, t, &x, &u, &w, n)?;
        y = output(plant, &x, n);
    }
    Ok(trace)
}

fn output(plant: &PlantModel, x: &[f64], n: f64) -> Vec<f64> {
    match plant {
        PlantModel::Partial(p) => vec![(&p.c * DVector::from_row_slice(x))[0] + n],
        _ => x.to_vec(),
    }
}

/// State (or output, for input-output models) at `t + 1`.
fn advance(plant: &PlantModel, trace: &Trace, t: usize, x: &[f64], u: &[f64], w: &[f64], n: f64) -> Result<Vec<f64>> {
    let ti = t as i64;
    Ok(match plant {
        PlantModel::Scalar(p) => vec![step_scalar(p, x[0], u[0], w[0])?],
        PlantModel::Arx(p) => vec![step_arx(p, &trace.y.lagged(ti, p.a.len()), &trace.u.lagged(ti, p.b.len()), w[0])?],
        PlantModel::Armax(p) => {
            let mut w_hist = Vec::with_capacity(p.c.len());
            w_hist.push(w[0]);
            w_hist.extend(trace.w.lagged(ti, p.c.len() - 1));
            let u_hist = trace.u.lagged(ti, p.delay + p.b.len() - 1);
            vec![step_armax(p, &trace.y.lagged(ti, p.a.len()), &u_hist, &w_hist)?]
        }
        PlantModel::Partial(p) => {
            let (next, _) = step_partial(p, &DVector::from_row_slice(x), u[0], &DVector::from_row_slice(w), n)?;
            next.as_slice().to_vec()
        }
        PlantModel::Mimo(p) => step_statespace(
            p,
            &DVector::from_row_slice(x),
            &DVector::from_row_slice(u),
            &DVector::from_row_slice(w),
        )?
        .as_slice()
        .to_vec(),
    })
}

/// Checks that the recorded states follow the plant recursion bit-exactly.
pub fn verify_recursion(trace: &Trace, scenario: &Scenario) -> Result<()> {
    let plant = &scenario.plant;
    let dims = [
        (trace.x.dim(), plant.state_dim(), "x"),
        (trace.y.dim(), plant.output_dim(), "y"),
        (trace.u.dim(), plant.input_dim(), "u"),
        (trace.w.dim(), plant.noise_dim(), "w"),
    ];
    for (got, want, name) in dims {
        if got != want {
            return Err(Error::TraceFormat(format!(
                "column group {name} has {got} components, scenario expects {want}"
            )));
        }
    }
    let len = trace.x.len();
    for s in [&trace.y, &trace.u, &trace.w, &trace.n] {
        if s.len() != len {
            return Err(Error::TraceFormat("signals have different lengths".into()));
        }
    }
    for t in 0..len.saturating_sub(1) {
        let next = advance(
            plant,
            trace,
            t,
            trace.x.row(t),
            trace.u.row(t),
            trace.w.row(t + 1),
            trace.n.at(t as i64 + 1, 0),
        )?;
        if next.as_slice() != trace.x.row(t + 1) {
            return Err(Error::TraceFormat(format!("plant recursion broken between t={t} and t={}", t + 1)));
        }
        let y = output(plant, &next, trace.n.at(t as i64 + 1, 0));
        if y.as_slice() != trace.y.row(t + 1) {
            return Err(Error::TraceFormat(format!("output equation broken at t={}", t + 1)));
        }
    }
    Ok(())
}
