//! Sensor-side reporting strategies.
//!
//! A strategy only ever sees a [`SensorView`]: true outputs, its own past
//! reports, the policy inputs (computable from those reports) and public model
//! knowledge. Excitation and process-noise samples are not part of the view.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::{PartialPlant, PlantModel};
use crate::random::{NoiseDist, StreamRng};
use crate::residual::{design_with_noise, KalmanDesign, RICCATI_MAX_ITER, RICCATI_TOL};
use crate::signal::Signal;

/// What the sensor can legitimately look at when producing `z[t]`.
#[derive(Debug, Clone, Copy)]
pub struct SensorView<'a> {
    pub t: usize,
    /// True outputs `y[0..=t]`.
    pub y: &'a Signal,
    /// Own past reports `z[0..t]`.
    pub z: &'a Signal,
    /// Policy inputs `u^g[0..t]`.
    pub u_g: &'a Signal,
    pub plant: &'a PlantModel,
    /// Public law of each actuator's excitation.
    pub excitation: NoiseDist,
    /// Public law of each process-noise component.
    pub process_noise: NoiseDist,
}

impl SensorView<'_> {
    fn y_now(&self) -> Vec<f64> {
        self.y.row(self.t).to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    Honest,
    Replay { record_len: usize },
    NoiseSim,
    AdditiveEstimated,
    Custom {
        name: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackStrategy {
    #[serde(flatten)]
    pub kind: AttackKind,
    pub onset: usize,
}

impl AttackStrategy {
    pub fn honest() -> Self {
        AttackStrategy {
            kind: AttackKind::Honest,
            onset: 0,
        }
    }

    pub fn is_honest(&self) -> bool {
        self.kind == AttackKind::Honest
    }

    /// Onset of malicious behaviour, if any.
    pub fn active_onset(&self) -> Option<usize> {
        (!self.is_honest()).then_some(self.onset)
    }
}

/// A user-defined reporting rule. Sees the view and an attack-private stream.
pub trait CustomRule: Send {
    fn report(&mut self, view: &SensorView<'_>, rng: &mut StreamRng) -> Vec<f64>;
}

pub type CustomFactory = Arc<dyn Fn(&BTreeMap<String, f64>) -> Result<Box<dyn CustomRule>> + Send + Sync>;

/// Named custom attacks. The default registry holds `bias` and `scale`.
#[derive(Clone)]
pub struct CustomRegistry {
    rules: BTreeMap<String, CustomFactory>,
}

impl fmt::Debug for CustomRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rules.keys()).finish()
    }
}

impl Default for CustomRegistry {
    fn default() -> Self {
        let mut reg = CustomRegistry { rules: BTreeMap::new() };
        reg.register("bias", |params| {
            let offset = param(params, "offset", 1.0)?;
            Ok(Box::new(BiasRule { offset }) as Box<dyn CustomRule>)
        });
        reg.register("scale", |params| {
            let factor = param(params, "factor", 2.0)?;
            Ok(Box::new(ScaleRule { factor }) as Box<dyn CustomRule>)
        });
        reg
    }
}

impl CustomRegistry {
    pub fn empty() -> Self {
        CustomRegistry { rules: BTreeMap::new() }
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&BTreeMap<String, f64>) -> Result<Box<dyn CustomRule>> + Send + Sync + 'static,
    {
        self.rules.insert(name.to_string(), Arc::new(factory));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.rules.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.rules.keys().map(String::as_str)
    }

    pub fn build(&self, name: &str, params: &BTreeMap<String, f64>) -> Result<Box<dyn CustomRule>> {
        let factory = self
            .rules
            .get(name)
            .ok_or_else(|| Error::UnknownCustomAttack(name.to_string()))?;
        factory(params)
    }
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> Result<f64> {
    let v = params.get(key).copied().unwrap_or(default);
    if !v.is_finite() {
        return Err(Error::InvalidParameter(format!("attack parameter {key} must be finite")));
    }
    Ok(v)
}

/// `z = y + offset` on every component.
struct BiasRule {
    offset: f64,
}

impl CustomRule for BiasRule {
    fn report(&mut self, view: &SensorView<'_>, _rng: &mut StreamRng) -> Vec<f64> {
        view.y.row(view.t).iter().map(|y| y + self.offset).collect()
    }
}

/// `z = factor * y`.
struct ScaleRule {
    factor: f64,
}

impl CustomRule for ScaleRule {
    fn report(&mut self, view: &SensorView<'_>, _rng: &mut StreamRng) -> Vec<f64> {
        view.y.row(view.t).iter().map(|y| y * self.factor).collect()
    }
}

/// Deterministic part of the next output given a history `h` (true outputs
/// or reports) and the policy inputs, i.e. everything except the excitation,
/// the noise and, for ARMAX, the moving-average term.
fn nominal_output(plant: &PlantModel, h: &Signal, u_g: &Signal, t: usize) -> Vec<f64> {
    let t = t as i64;
    match plant {
        PlantModel::Scalar(p) => vec![p.a * h.at(t - 1, 0) + p.b * u_g.at(t - 1, 0)],
        PlantModel::Arx(p) => {
            let mut acc = 0.0;
            for (m, a) in p.a.iter().enumerate() {
                acc -= a * h.at(t - 1 - m as i64, 0);
            }
            for (r, b) in p.b.iter().enumerate() {
                acc += b * u_g.at(t - 1 - r as i64, 0);
            }
            vec![acc]
        }
        PlantModel::Armax(p) => {
            let mut acc = 0.0;
            for (k, a) in p.a.iter().enumerate() {
                acc -= a * h.at(t - 1 - k as i64, 0);
            }
            for (k, b) in p.b.iter().enumerate() {
                acc += b * u_g.at(t - (p.delay + k) as i64, 0);
            }
            vec![acc]
        }
        PlantModel::Mimo(p) => {
            let x = DVector::from_vec(h.row_or_zero(t - 1));
            let g = DVector::from_vec(u_g.row_or_zero(t - 1));
            (&p.a * x + &p.b * g).as_slice().to_vec()
        }
        PlantModel::Partial(_) => unreachable!("partial plants use a state estimate"),
    }
}

/// `sigma_w2 / (sigma_w2 + g^2 sigma_e2)`: weight on the innovation in the
/// conditional-mean estimate of the noise.
fn noise_weight(sigma_w2: f64, gain: f64, sigma_e2: f64) -> f64 {
    sigma_w2 / (sigma_w2 + gain * gain * sigma_e2)
}

/// Adversary's estimate of `w[t]` for an ARX (or scalar) plant:
/// `beta * (y[t] - nominal)`, where the innovation is `b_0 e[t-1] + w[t]`.
/// With `sigma_e2 = sigma_w2` the weight is one half.
pub fn estimate_noise_arx(view: &SensorView<'_>) -> Result<f64> {
    let gain = match view.plant {
        PlantModel::Scalar(p) => p.b,
        PlantModel::Arx(p) => p.b[0],
        other => {
            return Err(Error::InvalidParameter(format!(
                "ARX noise estimate needs a scalar or ARX plant, got {}",
                other.class_name()
            )))
        }
    };
    if view.t == 0 {
        return Ok(0.0);
    }
    let innovation = view.y.at(view.t as i64, 0) - nominal_output(view.plant, view.y, view.u_g, view.t)[0];
    Ok(noise_weight(view.process_noise.variance, gain, view.excitation.variance) * innovation)
}

/// `v = n - w_hat`, `z = y + v`.
pub fn additive_attack_step(y: &[f64], w_hat: &[f64], n: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let v: Vec<f64> = n.iter().zip(w_hat).map(|(n, w)| n - w).collect();
    let z = y.iter().zip(&v).map(|(y, v)| y + v).collect();
    (v, z)
}

/// Adversary-side steady-state predictor for a partially observed plant. The
/// excitation is unknown to it, so it is folded into the process noise.
#[derive(Debug, Clone)]
struct ShadowFilter {
    plant: PartialPlant,
    design: KalmanDesign,
    /// `x^(t-1|t-1)`.
    xhat: DVector<f64>,
    /// Weight on the innovation when estimating the next-output noise.
    beta: f64,
}

impl ShadowFilter {
    fn new(plant: &PartialPlant, sigma_e2: f64) -> Result<Self> {
        let p = plant.order();
        let q = DMatrix::identity(p, p) * plant.sigma_w2 + &plant.b * plant.b.transpose() * sigma_e2;
        let design = design_with_noise(&plant.a, &plant.c, &q, plant.sigma_n2, RICCATI_TOL, RICCATI_MAX_ITER)?;
        let cb = (&plant.c * &plant.b)[0];
        let beta = 1.0 - cb * cb * sigma_e2 / design.sigma_r2;
        Ok(ShadowFilter {
            plant: plant.clone(),
            design,
            xhat: DVector::zeros(p),
            beta,
        })
    }

    /// Innovation of `y[t]`; updates the estimate.
    fn observe(&mut self, y_t: f64, g_prev: f64) -> f64 {
        let predicted = &self.plant.a * &self.xhat + &self.plant.b * g_prev;
        let innovation = y_t - (&self.plant.c * &predicted)[0];
        self.xhat = predicted + &self.design.gain * innovation;
        innovation
    }
}

#[derive(Debug, Clone)]
enum Memory {
    None,
    Replay(Option<Vec<Vec<f64>>>),
    /// ARMAX whitened-innovation history for the additive attack.
    Whitener(VecDeque<f64>),
    Shadow(Box<ShadowFilter>),
    /// Noise-sim: own noise history (ARMAX) or own state (partial).
    SimArmax(VecDeque<f64>),
    SimPartial(DVector<f64>),
}

/// A sensor running one strategy. Advance with [`Sensor::report`] once per step.
pub struct Sensor {
    strategy: AttackStrategy,
    rng: StreamRng,
    memory: Memory,
    custom: Option<Box<dyn CustomRule>>,
}

impl fmt::Debug for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Sensor").field("strategy", &self.strategy).finish_non_exhaustive()
    }
}

impl Sensor {
    pub fn new(
        strategy: AttackStrategy,
        plant: &PlantModel,
        excitation: NoiseDist,
        rng: StreamRng,
        registry: &CustomRegistry,
    ) -> Result<Self> {
        let memory = match (&strategy.kind, plant) {
            (AttackKind::Replay { .. }, _) => Memory::Replay(None),
            (AttackKind::AdditiveEstimated, PlantModel::Armax(p)) => {
                Memory::Whitener(std::iter::repeat_n(0.0, p.c.len() - 1).collect())
            }
            (AttackKind::AdditiveEstimated, PlantModel::Partial(p)) => {
                Memory::Shadow(Box::new(ShadowFilter::new(p, excitation.variance)?))
            }
            (AttackKind::NoiseSim, PlantModel::Armax(p)) => Memory::SimArmax(std::iter::repeat_n(0.0, p.c.len()).collect()),
            (AttackKind::NoiseSim, PlantModel::Partial(p)) => Memory::SimPartial(DVector::zeros(p.order())),
            _ => Memory::None,
        };
        let custom = match &strategy.kind {
            AttackKind::Custom { name, params } => Some(registry.build(name, params)?),
            _ => None,
        };
        Ok(Sensor {
            strategy,
            rng,
            memory,
            custom,
        })
    }

    pub fn strategy(&self) -> &AttackStrategy {
        &self.strategy
    }

    /// Produces `z[t]` for `t = view.t`.
    pub fn report(&mut self, view: &SensorView<'_>) -> Result<Vec<f64>> {
        let active = !self.strategy.is_honest() && view.t >= self.strategy.onset;
        // Internal filters run from the start so they are settled at onset.
        let w_hat = self.track(view, active)?;
        if !active {
            return Ok(view.y_now());
        }
        let onset = self.strategy.onset;
        match (&self.strategy.kind, &mut self.memory) {
            (AttackKind::Replay { record_len }, Memory::Replay(record)) => {
                let record_len = *record_len;
                if record.is_none() {
                    if record_len == 0 || record_len > onset {
                        return Err(Error::ReplayHistory {
                            record_len,
                            available: onset,
                        });
                    }
                    *record = Some((onset - record_len..onset).map(|s| view.y.row(s).to_vec()).collect());
                }
                let rec = record.as_ref().expect("record filled above");
                Ok(rec[(view.t - onset) % record_len].clone())
            }
            (AttackKind::NoiseSim, memory) => Ok(self_simulate(view, memory, &mut self.rng)),
            (AttackKind::AdditiveEstimated, _) => {
                let w_hat = w_hat.expect("estimate tracked for additive attack");
                let n = noise_draw(view, &mut self.rng, w_hat.len());
                Ok(additive_attack_step(&view.y_now(), &w_hat, &n).1)
            }
            (AttackKind::Custom { .. }, _) => {
                let rule = self.custom.as_mut().expect("custom rule built at construction");
                let z = rule.report(view, &mut self.rng);
                if z.len() != view.plant.output_dim() {
                    return Err(Error::Dimension(format!(
                        "custom attack returned {} components, expected {}",
                        z.len(),
                        view.plant.output_dim()
                    )));
                }
                Ok(z)
            }
            _ => Ok(view.y_now()),
        }
    }

    /// Updates per-step memories; returns the noise estimate for the additive attack.
    fn track(&mut self, view: &SensorView<'_>, active: bool) -> Result<Option<Vec<f64>>> {
        match (&self.strategy.kind, &mut self.memory) {
            (AttackKind::AdditiveEstimated, Memory::Whitener(hist)) => {
                let PlantModel::Armax(p) = view.plant else { unreachable!() };
                let raw = view.y.at(view.t as i64, 0) - nominal_output(view.plant, view.y, view.u_g, view.t)[0];
                let mut lambda = raw;
                for (c, l) in p.c[1..].iter().zip(hist.iter()) {
                    lambda -= c * l;
                }
                if !hist.is_empty() {
                    hist.pop_back();
                    hist.push_front(lambda);
                }
                Ok(Some(vec![noise_weight(view.process_noise.variance, 1.0, view.excitation.variance) * lambda]))
            }
            (AttackKind::AdditiveEstimated, Memory::Shadow(f)) => {
                let g_prev = view.u_g.at(view.t as i64 - 1, 0);
                let innovation = f.observe(view.y.at(view.t as i64, 0), g_prev);
                Ok(Some(vec![f.beta * innovation]))
            }
            (AttackKind::AdditiveEstimated, _) => {
                if !active {
                    return Ok(None);
                }
                Ok(Some(match view.plant {
                    PlantModel::Mimo(p) => {
                        let n = p.states();
                        let innovation = DVector::from_vec(view.y_now())
                            - DVector::from_vec(nominal_output(view.plant, view.y, view.u_g, view.t));
                        let cov = &p.b * p.b.transpose() * view.excitation.variance
                            + DMatrix::identity(n, n) * view.process_noise.variance;
                        let chol = cov.cholesky().ok_or(Error::SingularCovariance { len: 0, dim: n })?;
                        (chol.solve(&innovation) * view.process_noise.variance).as_slice().to_vec()
                    }
                    _ => vec![estimate_noise_arx(view)?],
                }))
            }
            (AttackKind::NoiseSim, Memory::SimPartial(x)) if view.t > 0 => {
                let PlantModel::Partial(p) = view.plant else { unreachable!() };
                let g_prev = view.u_g.at(view.t as i64 - 1, 0);
                let w = DVector::from_vec(view.process_noise.sample_vec(&mut self.rng, p.order()));
                *x = &p.a * &*x + &p.b * g_prev + w;
                Ok(None)
            }
            (AttackKind::NoiseSim, Memory::SimArmax(hist)) => {
                hist.pop_back();
                hist.push_front(view.process_noise.sample(&mut self.rng));
                Ok(None)
            }
            _ => Ok(None),
        }
    }
}

fn noise_draw(view: &SensorView<'_>, rng: &mut StreamRng, dim: usize) -> Vec<f64> {
    let law = match view.plant {
        // The additive noise stands in for an output-level disturbance.
        PlantModel::Partial(p) => {
            let var = view.process_noise.variance * p.c.norm_squared() + p.sigma_n2;
            NoiseDist::new(view.process_noise.kind, var)
        }
        _ => view.process_noise,
    };
    law.sample_vec(rng, dim)
}

/// Noise-sim report: run the nominal loop on own reports plus own noise.
fn self_simulate(view: &SensorView<'_>, memory: &mut Memory, rng: &mut StreamRng) -> Vec<f64> {
    match (view.plant, memory) {
        (PlantModel::Armax(p), Memory::SimArmax(hist)) => {
            let mut z = nominal_output(view.plant, view.z, view.u_g, view.t)[0];
            for (c, w) in p.c.iter().zip(hist.iter()) {
                z += c * w;
            }
            vec![z]
        }
        (PlantModel::Partial(p), Memory::SimPartial(x)) => {
            let n = NoiseDist::gaussian(p.sigma_n2).sample(rng);
            vec![(&p.c * &*x)[0] + n]
        }
        (plant, _) => {
            let mut z = nominal_output(plant, view.z, view.u_g, view.t);
            for zi in z.iter_mut() {
                *zi += view.process_noise.sample(rng);
            }
            z
        }
    }
}
