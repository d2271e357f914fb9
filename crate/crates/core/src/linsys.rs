//! Discrete-time plant models and their exact one-step transition functions.
//!
//! Noise samples are always supplied by the caller, so every stepper is a pure
//! function of its arguments.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::Serialize;

use crate::error::{ensure_all_finite, ensure_finite, Error, Result};
use crate::signal::Signal;

/// Unit-circle tolerance for the minimum-phase test.
pub const MIN_PHASE_TOL: f64 = 1e-9;

/// `x[t+1] = a x[t] + b u[t] + w[t+1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarPlant {
    pub a: f64,
    pub b: f64,
    pub sigma_w2: f64,
}

impl ScalarPlant {
    pub fn new(a: f64, b: f64, sigma_w2: f64) -> Result<Self> {
        ensure_all_finite(&[a, b, sigma_w2], "scalar plant parameter")?;
        if sigma_w2 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma_w2 must be positive, got {sigma_w2}"
            )));
        }
        if b == 0.0 {
            return Err(Error::InvalidParameter("input gain b must be nonzero".into()));
        }
        Ok(ScalarPlant { a, b, sigma_w2 })
    }
}

/// `y[t+1] = -sum_m a_m y[t-m] + sum_r b_r u[t-r] + w[t+1]`, with `a = (a_0..a_p)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArxPlant {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma_w2: f64,
}

impl ArxPlant {
    pub fn new(a: Vec<f64>, b: Vec<f64>, sigma_w2: f64) -> Result<Self> {
        ensure_all_finite(&a, "ARX a coefficient")?;
        ensure_all_finite(&b, "ARX b coefficient")?;
        if sigma_w2.is_nan() || sigma_w2 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma_w2 must be positive, got {sigma_w2}"
            )));
        }
        check_minimum_phase("B", &b)?;
        Ok(ArxPlant { a, b, sigma_w2 })
    }
}

/// `y[t] = -sum_{k>=1} a_k y[t-k] + sum_k b_k u[t-l-k] + sum_k c_k w[t-k]`, `c_0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmaxPlant {
    /// `(a_1..a_p)`; the leading `a_0 = 1` is implicit.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub delay: usize,
    pub sigma_w2: f64,
}

impl ArmaxPlant {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, delay: usize, sigma_w2: f64) -> Result<Self> {
        ensure_all_finite(&a, "ARMAX a coefficient")?;
        ensure_all_finite(&b, "ARMAX b coefficient")?;
        ensure_all_finite(&c, "ARMAX c coefficient")?;
        if sigma_w2.is_nan() || sigma_w2 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma_w2 must be positive, got {sigma_w2}"
            )));
        }
        if delay == 0 {
            return Err(Error::InvalidParameter("ARMAX delay must be at least 1".into()));
        }
        if c.first() != Some(&1.0) {
            return Err(Error::InvalidParameter("ARMAX c_0 must equal 1".into()));
        }
        check_minimum_phase("B", &b)?;
        check_minimum_phase("C", &c)?;
        Ok(ArmaxPlant {
            a,
            b,
            c,
            delay,
            sigma_w2,
        })
    }

    /// Steps before the prediction-error filter has seen a full history.
    pub fn burn_in(&self) -> usize {
        self.a
            .len()
            .max(self.b.len() - 1 + self.delay)
            .max(self.c.len() - 1)
    }
}

/// Partially observed SISO plant: `x[t+1] = A x + B u + w`, `y = C x + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialPlant {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
    pub sigma_w2: f64,
    pub sigma_n2: f64,
}

impl PartialPlant {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: RowDVector<f64>,
        sigma_w2: f64,
        sigma_n2: f64,
    ) -> Result<Self> {
        let p = a.nrows();
        if a.ncols() != p || b.len() != p || c.len() != p || p == 0 {
            return Err(Error::Dimension(format!(
                "partial plant needs A {p}x{p}, B {p}x1, C 1x{p}; got A {}x{}, B {}x1, C 1x{}",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len()
            )));
        }
        ensure_all_finite(a.as_slice(), "A entry")?;
        ensure_all_finite(b.as_slice(), "B entry")?;
        ensure_all_finite(c.as_slice(), "C entry")?;
        if sigma_w2.is_nan() || sigma_w2 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma_w2 must be positive, got {sigma_w2}"
            )));
        }
        if sigma_n2.is_nan() || sigma_n2 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma_n2 must be positive, got {sigma_n2}"
            )));
        }
        let rank = observability_rank(&a, &c);
        if rank < p {
            return Err(Error::NotObservable { rank, dim: p });
        }
        Ok(PartialPlant {
            a,
            b,
            c,
            sigma_w2,
            sigma_n2,
        })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }
}

/// Fully observed MIMO plant `x[t+1] = A x + B u + w`, `cov(w) = sigma_w2 I`.
#[derive(Debug, Clone, PartialEq)]
pub struct MimoPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub sigma_w2: f64,
}

impl MimoPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, sigma_w2: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || n == 0 || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "MIMO plant needs square A and B with {n} rows; got A {}x{}, B {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        ensure_all_finite(a.as_slice(), "A entry")?;
        ensure_all_finite(b.as_slice(), "B entry")?;
        if sigma_w2.is_nan() || sigma_w2 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma_w2 must be positive, got {sigma_w2}"
            )));
        }
        let plant = MimoPlant { a, b, sigma_w2 };
        if !plant.has_full_rank_input() {
            log::warn!(
                "rank(B) < {n}: detection guarantees against all attacks are not claimed for this plant"
            );
        }
        Ok(plant)
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn has_full_rank_input(&self) -> bool {
        self.b.rank(1e-10) == self.states()
    }
}

/// Any of the supported plant classes.
#[derive(Debug, Clone, PartialEq)]
pub enum PlantModel {
    Scalar(ScalarPlant),
    Arx(ArxPlant),
    Armax(ArmaxPlant),
    Partial(PartialPlant),
    Mimo(MimoPlant),
}

impl PlantModel {
    pub fn class_name(&self) -> &'static str {
        match self {
            PlantModel::Scalar(_) => "scalar",
            PlantModel::Arx(_) => "arx",
            PlantModel::Armax(_) => "armax",
            PlantModel::Partial(_) => "partial",
            PlantModel::Mimo(_) => "mimo",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            PlantModel::Partial(p) => p.order(),
            PlantModel::Mimo(p) => p.states(),
            _ => 1,
        }
    }

    /// Dimension of the measured output `y` (and of each report `z`).
    pub fn output_dim(&self) -> usize {
        match self {
            PlantModel::Mimo(p) => p.states(),
            _ => 1,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            PlantModel::Mimo(p) => p.inputs(),
            _ => 1,
        }
    }

    /// Dimension of each process-noise draw.
    pub fn noise_dim(&self) -> usize {
        self.state_dim()
    }

    pub fn sigma_w2(&self) -> f64 {
        match self {
            PlantModel::Scalar(p) => p.sigma_w2,
            PlantModel::Arx(p) => p.sigma_w2,
            PlantModel::Armax(p) => p.sigma_w2,
            PlantModel::Partial(p) => p.sigma_w2,
            PlantModel::Mimo(p) => p.sigma_w2,
        }
    }

    /// Gain with which the current raw excitation reaches the next output.
    pub fn excitation_gain(&self) -> f64 {
        match self {
            PlantModel::Scalar(p) => p.b,
            PlantModel::Arx(p) => p.b[0],
            _ => 1.0,
        }
    }
}

pub fn step_scalar(plant: &ScalarPlant, x: f64, u: f64, w: f64) -> Result<f64> {
    ensure_finite(x, "state")?;
    ensure_finite(u, "input")?;
    ensure_finite(w, "noise")?;
    Ok(plant.a * x + plant.b * u + w)
}

/// `y_hist = (y[t], y[t-1], ...)` and `u_hist = (u[t], u[t-1], ...)`, most recent first.
pub fn step_arx(plant: &ArxPlant, y_hist: &[f64], u_hist: &[f64], w: f64) -> Result<f64> {
    if y_hist.len() < plant.a.len() {
        return Err(Error::ShortHistory {
            what: "ARX output history",
            needed: plant.a.len(),
            got: y_hist.len(),
        });
    }
    if u_hist.len() < plant.b.len() {
        return Err(Error::ShortHistory {
            what: "ARX input history",
            needed: plant.b.len(),
            got: u_hist.len(),
        });
    }
    ensure_all_finite(y_hist, "output history")?;
    ensure_all_finite(u_hist, "input history")?;
    ensure_finite(w, "noise")?;
    let mut acc = 0.0;
    for (a, y) in plant.a.iter().zip(y_hist) {
        acc -= a * y;
    }
    for (b, u) in plant.b.iter().zip(u_hist) {
        acc += b * u;
    }
    Ok(acc + w)
}

/// Produces `y[t]` from `y_hist = (y[t-1], ...)`, `u_hist = (u[t-1], ...)` and
/// `w_hist = (w[t], w[t-1], ...)`.
pub fn step_armax(plant: &ArmaxPlant, y_hist: &[f64], u_hist: &[f64], w_hist: &[f64]) -> Result<f64> {
    let u_needed = plant.delay + plant.b.len() - 1;
    if y_hist.len() < plant.a.len() {
        return Err(Error::ShortHistory {
            what: "ARMAX output history",
            needed: plant.a.len(),
            got: y_hist.len(),
        });
    }
    if u_hist.len() < u_needed {
        return Err(Error::ShortHistory {
            what: "ARMAX input history",
            needed: u_needed,
            got: u_hist.len(),
        });
    }
    if w_hist.len() < plant.c.len() {
        return Err(Error::ShortHistory {
            what: "ARMAX noise history",
            needed: plant.c.len(),
            got: w_hist.len(),
        });
    }
    ensure_all_finite(y_hist, "output history")?;
    ensure_all_finite(u_hist, "input history")?;
    ensure_all_finite(w_hist, "noise history")?;
    let mut acc = 0.0;
    for (a, y) in plant.a.iter().zip(y_hist) {
        acc -= a * y;
    }
    for (k, b) in plant.b.iter().enumerate() {
        acc += b * u_hist[plant.delay - 1 + k];
    }
    for (c, w) in plant.c.iter().zip(w_hist) {
        acc += c * w;
    }
    Ok(acc)
}

pub fn step_statespace(
    plant: &MimoPlant,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = plant.states();
    if x.len() != n || w.len() != n || u.len() != plant.inputs() {
        return Err(Error::Dimension(format!(
            "state-space step expects x,w of length {n} and u of length {}; got {}, {}, {}",
            plant.inputs(),
            x.len(),
            w.len(),
            u.len()
        )));
    }
    ensure_all_finite(x.as_slice(), "state")?;
    ensure_all_finite(u.as_slice(), "input")?;
    ensure_all_finite(w.as_slice(), "noise")?;
    Ok(&plant.a * x + &plant.b * u + w)
}

/// Returns `(x[t+1], y[t+1])` with `y[t+1] = C x[t+1] + n[t+1]`.
pub fn step_partial(
    plant: &PartialPlant,
    x: &DVector<f64>,
    u: f64,
    w: &DVector<f64>,
    n: f64,
) -> Result<(DVector<f64>, f64)> {
    let p = plant.order();
    if x.len() != p || w.len() != p {
        return Err(Error::Dimension(format!(
            "partial step expects x,w of length {p}; got {}, {}",
            x.len(),
            w.len()
        )));
    }
    ensure_all_finite(x.as_slice(), "state")?;
    ensure_finite(u, "input")?;
    ensure_all_finite(w.as_slice(), "noise")?;
    ensure_finite(n, "measurement noise")?;
    let next = &plant.a * x + &plant.b * u + w;
    let y = (&plant.c * &next)[0] + n;
    Ok((next, y))
}

/// Smallest root magnitude of `p_0 + p_1 q^-1 + ... + p_h q^-h`, viewed as a
/// polynomial in `q^-1`. Degree-zero polynomials have no roots (`+inf`).
pub fn smallest_root_magnitude(coeffs: &[f64]) -> f64 {
    let mut h = coeffs.len().saturating_sub(1);
    while h > 0 && coeffs[h] == 0.0 {
        h -= 1;
    }
    if h == 0 {
        return f64::INFINITY;
    }
    // Roots in q are the eigenvalues of the companion matrix of the monic
    // z^h + (p_1/p_0) z^{h-1} + ... + p_h/p_0; roots in q^-1 are their reciprocals.
    let lead = coeffs[0];
    let mut companion = DMatrix::<f64>::zeros(h, h);
    for k in 0..h {
        companion[(0, k)] = -coeffs[k + 1] / lead;
    }
    for k in 1..h {
        companion[(k, k - 1)] = 1.0;
    }
    let largest = companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    1.0 / largest
}

/// Rejects polynomials with a root on or inside the unit circle (in `q^-1`).
pub fn check_minimum_phase(name: &'static str, coeffs: &[f64]) -> Result<()> {
    if coeffs.is_empty() || coeffs[0] == 0.0 {
        return Err(Error::InvalidParameter(format!(
            "{name} polynomial needs a nonzero leading coefficient, got {coeffs:?}"
        )));
    }
    let root_magnitude = smallest_root_magnitude(coeffs);
    if root_magnitude > 1.0 + MIN_PHASE_TOL {
        Ok(())
    } else {
        Err(Error::NotMinimumPhase {
            name,
            coeffs: coeffs.to_vec(),
            root_magnitude,
        })
    }
}

pub fn observability_rank(a: &DMatrix<f64>, c: &RowDVector<f64>) -> usize {
    let p = a.nrows();
    let mut obs = DMatrix::<f64>::zeros(p, p);
    let mut row = c.clone();
    for i in 0..p {
        obs.set_row(i, &row);
        row = &row * a;
    }
    obs.rank(1e-10)
}

/// Maps the reported history to the policy-specified input `u^g[t]`.
///
/// Evaluation sees only reports `z^t` and the policy's own past outputs, which
/// are themselves functions of earlier reports.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlPolicy {
    Zero { inputs: usize },
    /// `u^g[t] = F z[t]`.
    Linear { gain: DMatrix<f64> },
    /// SISO: `u^g[t] = offset + sum_j z_coeffs[j] z[t-j] + sum_j ug_coeffs[j] u^g[t-1-j]`.
    Affine {
        z_coeffs: Vec<f64>,
        ug_coeffs: Vec<f64>,
        offset: f64,
    },
}

impl ControlPolicy {
    pub fn linear_scalar(f: f64) -> Self {
        ControlPolicy::Linear {
            gain: DMatrix::from_element(1, 1, f),
        }
    }

    /// Cancels the ARX dynamics: with honest reports the closed loop is
    /// `y[t+1] = b_0 e[t] + w[t+1]`.
    pub fn arx_deadbeat(plant: &ArxPlant) -> Self {
        let b0 = plant.b[0];
        ControlPolicy::Affine {
            z_coeffs: plant.a.iter().map(|a| a / b0).collect(),
            ug_coeffs: plant.b[1..].iter().map(|b| -b / b0).collect(),
            offset: 0.0,
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            ControlPolicy::Zero { inputs } => *inputs,
            ControlPolicy::Linear { gain } => gain.nrows(),
            ControlPolicy::Affine { .. } => 1,
        }
    }

    /// Number of report components the policy consumes, if it constrains it.
    pub fn outputs(&self) -> Option<usize> {
        match self {
            ControlPolicy::Zero { .. } => None,
            ControlPolicy::Linear { gain } => Some(gain.ncols()),
            ControlPolicy::Affine { .. } => Some(1),
        }
    }

    /// `z` holds reports `z[0..=t]`, `u_g` holds `u^g[0..t]`.
    pub fn evaluate(&self, z: &Signal, u_g: &Signal) -> Vec<f64> {
        let t = z.len() as i64 - 1;
        match self {
            ControlPolicy::Zero { inputs } => vec![0.0; *inputs],
            ControlPolicy::Linear { gain } => {
                let zt = z.row_or_zero(t);
                (0..gain.nrows())
                    .map(|i| (0..gain.ncols()).map(|j| gain[(i, j)] * zt[j]).sum())
                    .collect()
            }
            ControlPolicy::Affine {
                z_coeffs,
                ug_coeffs,
                offset,
            } => {
                let mut acc = *offset;
                for (j, c) in z_coeffs.iter().enumerate() {
                    acc += c * z.at(t - j as i64, 0);
                }
                for (j, c) in ug_coeffs.iter().enumerate() {
                    acc += c * u_g.at(t - 1 - j as i64, 0);
                }
                vec![acc]
            }
        }
    }
}
