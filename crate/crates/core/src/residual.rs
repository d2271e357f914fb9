//! Detector-side residuals: what the actuator can compute from reports, the
//! policy inputs and its own excitation, per plant class.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linsys::{ArmaxPlant, ArxPlant, MimoPlant, PartialPlant, PlantModel, ScalarPlant};
use crate::signal::Signal;

/// Riccati tolerance (max-abs entry change between iterates).
pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 1_000_000;
/// Samples dropped while the steady-state Kalman filter forgets its start.
pub const KALMAN_BURN_IN: usize = 50;

/// Residual with and without the excitation term removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarResidualPair {
    /// Excitation removed; equals `w[t+1]` for honest reports.
    pub watermark_removed: f64,
    /// Excitation left in; equals `b e[t] + w[t+1]` for honest reports.
    pub raw: f64,
}

pub fn scalar_residual(z_prev: f64, z_next: f64, g_val: f64, e_val: f64, plant: &ScalarPlant) -> ScalarResidualPair {
    let raw = z_next - plant.a * z_prev - plant.b * g_val;
    ScalarResidualPair {
        watermark_removed: raw - plant.b * e_val,
        raw,
    }
}

/// `z_hist = (z[k+1], z[k], z[k-1], ...)`, `g_hist = (u^g[k], u^g[k-1], ...)`.
pub fn arx_residual(z_hist: &[f64], g_hist: &[f64], e_val: f64, plant: &ArxPlant) -> Result<ScalarResidualPair> {
    if z_hist.len() < plant.a.len() + 1 {
        return Err(Error::ShortHistory {
            what: "ARX report history",
            needed: plant.a.len() + 1,
            got: z_hist.len(),
        });
    }
    if g_hist.len() < plant.b.len() {
        return Err(Error::ShortHistory {
            what: "ARX policy-input history",
            needed: plant.b.len(),
            got: g_hist.len(),
        });
    }
    let mut raw = z_hist[0];
    for (a, z) in plant.a.iter().zip(&z_hist[1..]) {
        raw += a * z;
    }
    for (b, g) in plant.b.iter().zip(g_hist) {
        raw -= b * g;
    }
    Ok(ScalarResidualPair {
        watermark_removed: raw - plant.b[0] * e_val,
        raw,
    })
}

/// Prediction-error filter for ARMAX reports.
///
/// For honest reports the output `z~[t]` equals `e[t-l] + w[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmaxFilterState {
    plant: ArmaxPlant,
    z_hist: VecDeque<f64>,
    ztilde_hist: VecDeque<f64>,
    steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmaxFilterOutput {
    pub ztilde: f64,
    /// Test 1 integrand `z~[t] - e[t-l]`.
    pub watermark_removed: f64,
    /// Test 2 integrand `z~[t]`.
    pub raw: f64,
    pub in_burn_in: bool,
}

impl ArmaxFilterState {
    pub fn new(plant: ArmaxPlant) -> Self {
        let p = plant.a.len();
        let r = plant.c.len() - 1;
        ArmaxFilterState {
            plant,
            z_hist: std::iter::repeat_n(0.0, p).collect(),
            ztilde_hist: std::iter::repeat_n(0.0, r).collect(),
            steps: 0,
        }
    }

    pub fn plant(&self) -> &ArmaxPlant {
        &self.plant
    }
}

/// `g_hist = (u^g[t-l], u^g[t-l-1], ..., u^g[t-l-h])`; `e_lagged = e[t-l]`.
pub fn armax_filter_step(
    state: &mut ArmaxFilterState,
    z_t: f64,
    g_hist: &[f64],
    e_lagged: f64,
) -> Result<ArmaxFilterOutput> {
    let plant = &state.plant;
    if g_hist.len() < plant.b.len() {
        return Err(Error::ShortHistory {
            what: "ARMAX policy-input history",
            needed: plant.b.len(),
            got: g_hist.len(),
        });
    }
    let mut predicted = 0.0;
    for (a, z) in plant.a.iter().zip(&state.z_hist) {
        predicted -= a * z;
    }
    for (b, g) in plant.b.iter().zip(g_hist) {
        predicted += b * g;
    }
    for (c, zt) in plant.c[1..].iter().zip(&state.ztilde_hist) {
        predicted += c * zt;
    }
    let ztilde = z_t - predicted;
    let in_burn_in = state.steps < plant.burn_in();
    if !state.z_hist.is_empty() {
        state.z_hist.pop_back();
        state.z_hist.push_front(z_t);
    }
    if !state.ztilde_hist.is_empty() {
        state.ztilde_hist.pop_back();
        state.ztilde_hist.push_front(ztilde);
    }
    state.steps += 1;
    Ok(ArmaxFilterOutput {
        ztilde,
        watermark_removed: ztilde - e_lagged,
        raw: ztilde,
        in_burn_in,
    })
}

/// Steady-state Kalman design for a partially observed plant.
///
/// `p` is the stationary one-step prediction covariance, solving
/// `P = A P A' - A P C' (C P C' + r)^-1 C P A' + Q`. The filter gain
/// `K = P C' (C P C' + r)^-1` multiplies the innovation in the measurement
/// update; the predictor gain is `A K`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanDesign {
    pub gain: DVector<f64>,
    pub predictor_gain: DVector<f64>,
    pub p: DMatrix<f64>,
    /// Innovation variance `C P C' + r`.
    pub sigma_r2: f64,
    pub iterations: usize,
}

/// Fixed-point iteration of the Riccati map from `P_0 = 0`.
pub fn riccati_fixed_point(
    a: &DMatrix<f64>,
    c: &RowDVector<f64>,
    q: &DMatrix<f64>,
    r: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(DMatrix<f64>, usize)> {
    let mut p = DMatrix::<f64>::zeros(a.nrows(), a.nrows());
    for iter in 1..=max_iter {
        let next = riccati_map(a, c, q, r, &p);
        let delta = (&next - &p).amax();
        p = next;
        if !delta.is_finite() {
            break;
        }
        if delta < tol {
            return Ok((p, iter));
        }
    }
    Err(Error::RiccatiNoConvergence(max_iter))
}

pub(crate) fn riccati_map(a: &DMatrix<f64>, c: &RowDVector<f64>, q: &DMatrix<f64>, r: f64, p: &DMatrix<f64>) -> DMatrix<f64> {
    let pct = p * c.transpose();
    let s = (c * &pct)[0] + r;
    let apct = a * &pct;
    let mut next = a * p * a.transpose() - &apct * apct.transpose() / s + q;
    // keep the iterate exactly symmetric
    next = (&next + next.transpose()) * 0.5;
    next
}

pub fn kalman_design(plant: &PartialPlant, tol: f64, max_iter: usize) -> Result<KalmanDesign> {
    let q = DMatrix::<f64>::identity(plant.order(), plant.order()) * plant.sigma_w2;
    design_with_noise(&plant.a, &plant.c, &q, plant.sigma_n2, tol, max_iter)
}

pub(crate) fn design_with_noise(
    a: &DMatrix<f64>,
    c: &RowDVector<f64>,
    q: &DMatrix<f64>,
    r: f64,
    tol: f64,
    max_iter: usize,
) -> Result<KalmanDesign> {
    let (p, iterations) = riccati_fixed_point(a, c, q, r, tol, max_iter)?;
    let pct = &p * c.transpose();
    let sigma_r2 = (c * &pct)[0] + r;
    let gain: DVector<f64> = pct.column(0) / sigma_r2;
    let predictor_gain = a * &gain;
    Ok(KalmanDesign {
        gain,
        predictor_gain,
        p,
        sigma_r2,
        iterations,
    })
}

/// Filtered estimate `x^_F(k|k)` of the detector-side filter.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub xhat: DVector<f64>,
    pub last_prediction: f64,
}

impl KalmanState {
    pub fn new(order: usize) -> Self {
        KalmanState {
            xhat: DVector::zeros(order),
            last_prediction: 0.0,
        }
    }
}

/// Innovation `nu_F[k+1]` and `q = x^_F(k+1|k+1) - A x^_F(k|k) - B g - B e = K nu_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanStepOutput {
    pub innovation: f64,
    pub q: DVector<f64>,
}

pub fn kalman_step(
    state: &mut KalmanState,
    design: &KalmanDesign,
    plant: &PartialPlant,
    z_next: f64,
    g_val: f64,
    e_val: f64,
) -> KalmanStepOutput {
    let predicted = &plant.a * &state.xhat + &plant.b * (g_val + e_val);
    let measurement = (&plant.c * &predicted)[0];
    let innovation = z_next - measurement;
    let q = &design.gain * innovation;
    state.xhat = predicted + &q;
    state.last_prediction = measurement;
    KalmanStepOutput { innovation, q }
}

/// `r[k+1] = z[k+1] - A z[k] - B g_k(z^k)`.
pub fn mimo_residual(
    z_prev: &DVector<f64>,
    z_next: &DVector<f64>,
    g_vec: &DVector<f64>,
    plant: &MimoPlant,
) -> Result<DVector<f64>> {
    let n = plant.states();
    if z_prev.len() != n || z_next.len() != n || g_vec.len() != plant.inputs() {
        return Err(Error::Dimension(format!(
            "MIMO residual expects reports of length {n} and inputs of length {}",
            plant.inputs()
        )));
    }
    Ok(z_next - &plant.a * z_prev - &plant.b * g_vec)
}

/// One detector sample, aligned so `excitation` is the raw excitation whose
/// effect first shows in this sample's residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: usize,
    pub excitation: Vec<f64>,
    pub watermark_removed: Vec<f64>,
    pub raw: Vec<f64>,
    /// Vector correlated against each actuator's excitation.
    pub cross: Vec<f64>,
    pub in_burn_in: bool,
}

/// Streams detector frames for any plant class from reports, policy inputs and
/// raw excitation.
#[derive(Debug, Clone)]
pub enum ResidualEngine {
    Scalar(ScalarPlant),
    Arx(ArxPlant),
    Armax(ArmaxFilterState),
    Partial {
        plant: PartialPlant,
        design: KalmanDesign,
        state: KalmanState,
    },
    Mimo(MimoPlant),
}

impl ResidualEngine {
    pub fn new(plant: &PlantModel) -> Result<Self> {
        Ok(match plant {
            PlantModel::Scalar(p) => ResidualEngine::Scalar(p.clone()),
            PlantModel::Arx(p) => ResidualEngine::Arx(p.clone()),
            PlantModel::Armax(p) => ResidualEngine::Armax(ArmaxFilterState::new(p.clone())),
            PlantModel::Partial(p) => ResidualEngine::Partial {
                design: kalman_design(p, RICCATI_TOL, RICCATI_MAX_ITER)?,
                state: KalmanState::new(p.order()),
                plant: p.clone(),
            },
            PlantModel::Mimo(p) => ResidualEngine::Mimo(p.clone()),
        })
    }

    /// First report time whose frame is free of start-up effects.
    pub fn burn_in(&self) -> usize {
        match self {
            ResidualEngine::Scalar(_) => 1,
            ResidualEngine::Arx(p) => p.a.len().max(p.b.len() - 1).max(1),
            ResidualEngine::Armax(s) => s.plant.burn_in(),
            ResidualEngine::Partial { .. } => KALMAN_BURN_IN,
            ResidualEngine::Mimo(_) => 1,
        }
    }

    pub fn kalman_design(&self) -> Option<&KalmanDesign> {
        match self {
            ResidualEngine::Partial { design, .. } => Some(design),
            _ => None,
        }
    }

    /// Frame for report time `t`, reading reports through `t` and policy
    /// inputs and raw excitation through `t - 1`. Call once per `t` in order.
    /// Returns `None` at `t = 0` for classes that need a previous report.
    pub fn process(&mut self, t: usize, z: &Signal, u_g: &Signal, e: &Signal) -> Result<Option<Frame>> {
        if t >= z.len() {
            return Err(Error::ShortHistory {
                what: "report stream",
                needed: t + 1,
                got: z.len(),
            });
        }
        let t = t as i64;
        let burn_in = self.burn_in() as i64;
        let frame = match self {
            ResidualEngine::Scalar(p) => {
                if t == 0 {
                    return Ok(None);
                }
                let e_prev = e.at(t - 1, 0);
                let pair = scalar_residual(z.at(t - 1, 0), z.at(t, 0), u_g.at(t - 1, 0), e_prev, p);
                scalar_frame(t, e_prev, pair, burn_in)
            }
            ResidualEngine::Arx(p) => {
                if t == 0 {
                    return Ok(None);
                }
                let e_prev = e.at(t - 1, 0);
                let pair = arx_residual(&z.lagged(t, p.a.len() + 1), &u_g.lagged(t - 1, p.b.len()), e_prev, p)?;
                scalar_frame(t, e_prev, pair, burn_in)
            }
            ResidualEngine::Armax(state) => {
                let l = state.plant.delay as i64;
                let e_lag = e.at(t - l, 0);
                let g_hist = u_g.lagged(t - l, state.plant.b.len());
                let out = armax_filter_step(state, z.at(t, 0), &g_hist, e_lag)?;
                Frame {
                    t: t as usize,
                    excitation: vec![e_lag],
                    watermark_removed: vec![out.watermark_removed],
                    raw: vec![out.raw],
                    cross: vec![out.raw],
                    in_burn_in: out.in_burn_in,
                }
            }
            ResidualEngine::Partial { plant, design, state } => {
                if t == 0 {
                    return Ok(None);
                }
                let e_prev = e.at(t - 1, 0);
                let out = kalman_step(state, design, plant, z.at(t, 0), u_g.at(t - 1, 0), e_prev);
                Frame {
                    t: t as usize,
                    excitation: vec![e_prev],
                    watermark_removed: vec![out.innovation],
                    raw: vec![out.innovation],
                    cross: out.q.as_slice().to_vec(),
                    in_burn_in: t < burn_in,
                }
            }
            ResidualEngine::Mimo(p) => {
                if t == 0 {
                    return Ok(None);
                }
                let z_prev = DVector::from_row_slice(z.row(t as usize - 1));
                let z_next = DVector::from_row_slice(z.row(t as usize));
                let g = DVector::from_row_slice(u_g.row(t as usize - 1));
                let e_prev = DVector::from_row_slice(e.row(t as usize - 1));
                let raw = mimo_residual(&z_prev, &z_next, &g, p)?;
                let wm = &raw - &p.b * &e_prev;
                Frame {
                    t: t as usize,
                    excitation: e_prev.as_slice().to_vec(),
                    watermark_removed: wm.as_slice().to_vec(),
                    cross: raw.as_slice().to_vec(),
                    raw: raw.as_slice().to_vec(),
                    in_burn_in: t < burn_in,
                }
            }
        };
        Ok(Some(frame))
    }
}

fn scalar_frame(t: i64, e_prev: f64, pair: ScalarResidualPair, burn_in: i64) -> Frame {
    Frame {
        t: t as usize,
        excitation: vec![e_prev],
        watermark_removed: vec![pair.watermark_removed],
        raw: vec![pair.raw],
        cross: vec![pair.raw],
        in_burn_in: t < burn_in,
    }
}
