//! Windowed test statistics, threshold calibration and the alarm procedure.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linsys::PlantModel;
use crate::random::{stream_rng, NoiseDist, Stream, StreamRng};
use crate::residual::{Frame, KalmanDesign};

/// Null windows simulated per parallel task.
const CAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    Variance,
    CrossCorr,
    Covariance,
    NegLogLikelihood,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowStat {
    pub kind: StatKind,
    pub window_len: usize,
    pub value: f64,
    /// `value / target` for the variance statistic.
    pub normalized: Option<f64>,
}

pub fn variance_stat(samples: &[f64], target: f64) -> Result<WindowStat> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("variance statistic needs at least one sample".into()));
    }
    let value = samples.iter().map(|r| r * r).sum::<f64>() / samples.len() as f64;
    Ok(WindowStat {
        kind: StatKind::Variance,
        window_len: samples.len(),
        value,
        normalized: Some(value / target),
    })
}

/// `|| (1/l) sum e[k] r[k+1] - target ||`; the slices must already be aligned.
pub fn cross_corr_stat(e_samples: &[f64], residuals: &[DVector<f64>], target: &DVector<f64>) -> Result<WindowStat> {
    if e_samples.len() != residuals.len() || e_samples.is_empty() {
        return Err(Error::Dimension(format!(
            "cross-correlation needs equal, non-empty windows; got {} excitation and {} residual samples",
            e_samples.len(),
            residuals.len()
        )));
    }
    let mut acc = DVector::zeros(target.len());
    for (e, r) in e_samples.iter().zip(residuals) {
        if r.len() != target.len() {
            return Err(Error::Dimension("residual length differs from target length".into()));
        }
        acc += r * *e;
    }
    let value = (acc / e_samples.len() as f64 - target).norm();
    Ok(WindowStat {
        kind: StatKind::CrossCorr,
        window_len: e_samples.len(),
        value,
        normalized: None,
    })
}

pub fn cov_stat(residuals: &[DVector<f64>], sigma0: &DMatrix<f64>) -> Result<WindowStat> {
    let reference = Reference::new(sigma0)?;
    let scatter = scatter_of(residuals, reference.dim)?;
    Ok(WindowStat {
        kind: StatKind::Covariance,
        window_len: residuals.len(),
        value: reference.divergence(&scatter, residuals.len())?,
        normalized: None,
    })
}

/// Negative log of the Wishart(`Sigma0`, `l`) density at `l S`.
pub fn nll_window(residuals: &[DVector<f64>], sigma0: &DMatrix<f64>) -> Result<WindowStat> {
    let reference = Reference::new(sigma0)?;
    let scatter = scatter_of(residuals, reference.dim)?;
    Ok(WindowStat {
        kind: StatKind::NegLogLikelihood,
        window_len: residuals.len(),
        value: reference.wishart_nll(&scatter, residuals.len())?,
        normalized: None,
    })
}

fn scatter_of(residuals: &[DVector<f64>], dim: usize) -> Result<DMatrix<f64>> {
    if residuals.len() <= dim {
        return Err(Error::SingularCovariance {
            len: residuals.len(),
            dim,
        });
    }
    let mut s = DMatrix::zeros(dim, dim);
    for r in residuals {
        if r.len() != dim {
            return Err(Error::Dimension(format!("residual of length {} against a {dim}-dim target", r.len())));
        }
        s += r * r.transpose();
    }
    Ok(s)
}

/// Precomputed inverse and log-determinant of a target covariance.
#[derive(Debug, Clone)]
struct Reference {
    dim: usize,
    inv: DMatrix<f64>,
    logdet: f64,
}

impl Reference {
    fn new(sigma0: &DMatrix<f64>) -> Result<Self> {
        let dim = sigma0.nrows();
        if sigma0.ncols() != dim || dim == 0 {
            return Err(Error::Dimension("target covariance must be square".into()));
        }
        let chol = sigma0
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("target covariance must be positive definite".into()))?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Reference {
            dim,
            inv: chol.inverse(),
            logdet,
        })
    }

    fn logdet_of(scatter: &DMatrix<f64>, len: usize, dim: usize) -> Result<f64> {
        let chol = scatter.clone().cholesky().ok_or(Error::SingularCovariance { len, dim })?;
        Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    /// `tr(Sigma0^-1 S) - ln det(Sigma0^-1 S) - n` with `S = scatter / l`.
    fn divergence(&self, scatter: &DMatrix<f64>, l: usize) -> Result<f64> {
        let n = self.dim;
        let s = scatter / l as f64;
        let trace = (&self.inv * &s).trace();
        let logdet_s = Self::logdet_of(&s, l, n)?;
        Ok(trace - (logdet_s - self.logdet) - n as f64)
    }

    fn wishart_nll(&self, scatter: &DMatrix<f64>, l: usize) -> Result<f64> {
        let n = self.dim as f64;
        let dof = l as f64;
        let logdet_x = Self::logdet_of(scatter, l, self.dim)?;
        let trace = (&self.inv * scatter).trace();
        Ok(-0.5 * (dof - n - 1.0) * logdet_x
            + 0.5 * trace
            + 0.5 * dof * n * std::f64::consts::LN_2
            + 0.5 * dof * self.logdet
            + ln_multigamma(self.dim, 0.5 * dof))
    }
}

fn ln_multigamma(n: usize, a: f64) -> f64 {
    let nf = n as f64;
    nf * (nf - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (1..=n).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

/// Which residual a statistic reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    WatermarkRemoved,
    Raw,
}

/// A statistic bound to its input stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stat", rename_all = "snake_case")]
pub enum TestStat {
    Variance { channel: Channel },
    Covariance { channel: Channel },
    Nll { channel: Channel },
    CrossCorr { actuator: usize },
}

impl TestStat {
    pub fn kind(&self) -> StatKind {
        match self {
            TestStat::Variance { .. } => StatKind::Variance,
            TestStat::Covariance { .. } => StatKind::Covariance,
            TestStat::Nll { .. } => StatKind::NegLogLikelihood,
            TestStat::CrossCorr { .. } => StatKind::CrossCorr,
        }
    }
}

/// Null-hypothesis frame generator: honest residuals are linear in iid
/// excitation `e` and iid noise `xi`:
/// `wm = H xi`, `raw = G e + H xi`, `cross = Gc e + Hc xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullModel {
    pub excitation: NoiseDist,
    pub noise: NoiseDist,
    pub exc_to_raw: DMatrix<f64>,
    pub noise_map: DMatrix<f64>,
    pub cross_exc: DMatrix<f64>,
    pub cross_noise: DMatrix<f64>,
}

impl NullModel {
    /// `kalman` must be given for partially observed plants.
    pub fn for_plant(
        plant: &PlantModel,
        excitation: NoiseDist,
        process_noise: NoiseDist,
        kalman: Option<&KalmanDesign>,
    ) -> Result<Self> {
        let one = || DMatrix::from_element(1, 1, 1.0);
        Ok(match plant {
            PlantModel::Scalar(_) | PlantModel::Arx(_) | PlantModel::Armax(_) => {
                let g = DMatrix::from_element(1, 1, plant.excitation_gain());
                NullModel {
                    excitation,
                    noise: process_noise,
                    cross_exc: g.clone(),
                    exc_to_raw: g,
                    noise_map: one(),
                    cross_noise: one(),
                }
            }
            PlantModel::Mimo(p) => {
                let n = p.states();
                NullModel {
                    excitation,
                    noise: process_noise,
                    exc_to_raw: p.b.clone(),
                    noise_map: DMatrix::identity(n, n),
                    cross_exc: p.b.clone(),
                    cross_noise: DMatrix::identity(n, n),
                }
            }
            PlantModel::Partial(p) => {
                let k = kalman.ok_or(Error::MissingGroundTruth("Kalman design for the partial null model"))?;
                NullModel {
                    excitation,
                    noise: NoiseDist::gaussian(k.sigma_r2),
                    exc_to_raw: DMatrix::zeros(1, 1),
                    noise_map: one(),
                    cross_exc: DMatrix::zeros(p.order(), 1),
                    cross_noise: DMatrix::from_column_slice(p.order(), 1, k.gain.as_slice()),
                }
            }
        })
    }

    pub fn actuators(&self) -> usize {
        self.exc_to_raw.ncols()
    }

    pub fn residual_dim(&self) -> usize {
        self.noise_map.nrows()
    }

    pub fn cross_dim(&self) -> usize {
        self.cross_exc.nrows()
    }

    pub fn covariance(&self, channel: Channel) -> DMatrix<f64> {
        let wm = &self.noise_map * self.noise_map.transpose() * self.noise.variance;
        match channel {
            Channel::WatermarkRemoved => wm,
            Channel::Raw => &self.exc_to_raw * self.exc_to_raw.transpose() * self.excitation.variance + wm,
        }
    }

    /// `E[e_i cross] = Gc[:, i] sigma_e^2`.
    pub fn cross_target(&self, actuator: usize) -> DVector<f64> {
        self.cross_exc.column(actuator) * self.excitation.variance
    }

    /// Whether a channel is Gaussian under the null.
    fn channel_is_gaussian(&self, channel: Channel) -> bool {
        let noise_ok = self.noise.is_gaussian() || self.noise_map.iter().all(|v| *v == 0.0);
        let exc_ok = channel == Channel::WatermarkRemoved
            || self.excitation.is_gaussian()
            || self.exc_to_raw.iter().all(|v| *v == 0.0)
            || self.excitation.variance == 0.0;
        noise_ok && exc_ok
    }

    fn sample_into(&self, rng: &mut StreamRng, buf: &mut FrameBuf) {
        for e in buf.e.iter_mut() {
            *e = self.excitation.sample(rng);
        }
        for x in buf.xi.iter_mut() {
            *x = self.noise.sample(rng);
        }
        affine(&self.noise_map, &buf.xi, None, &mut buf.wm);
        affine(&self.exc_to_raw, &buf.e, Some(&buf.wm), &mut buf.raw);
        affine(&self.cross_noise, &buf.xi, None, &mut buf.cross);
        add_product(&self.cross_exc, &buf.e, &mut buf.cross);
    }
}

fn affine(m: &DMatrix<f64>, x: &[f64], base: Option<&[f64]>, out: &mut [f64]) {
    match base {
        Some(b) => out.copy_from_slice(b),
        None => out.fill(0.0),
    }
    add_product(m, x, out);
}

fn add_product(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (j, xj) in x.iter().enumerate() {
        for (i, o) in out.iter_mut().enumerate() {
            *o += m[(i, j)] * xj;
        }
    }
}

struct FrameBuf {
    e: Vec<f64>,
    xi: Vec<f64>,
    wm: Vec<f64>,
    raw: Vec<f64>,
    cross: Vec<f64>,
}

impl FrameBuf {
    fn new(null: &NullModel) -> Self {
        FrameBuf {
            e: vec![0.0; null.actuators()],
            xi: vec![0.0; null.noise_map.ncols()],
            wm: vec![0.0; null.residual_dim()],
            raw: vec![0.0; null.residual_dim()],
            cross: vec![0.0; null.cross_dim()],
        }
    }
}

/// Sufficient statistics of one window.
#[derive(Debug, Clone)]
pub struct WindowAccumulator {
    count: usize,
    wm: DMatrix<f64>,
    raw: DMatrix<f64>,
    /// Column `i` sums `e_i * cross`.
    cross: DMatrix<f64>,
}

impl WindowAccumulator {
    pub fn new(residual_dim: usize, cross_dim: usize, actuators: usize) -> Self {
        WindowAccumulator {
            count: 0,
            wm: DMatrix::zeros(residual_dim, residual_dim),
            raw: DMatrix::zeros(residual_dim, residual_dim),
            cross: DMatrix::zeros(cross_dim, actuators),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn clear(&mut self) {
        self.count = 0;
        self.wm.fill(0.0);
        self.raw.fill(0.0);
        self.cross.fill(0.0);
    }

    pub fn add(&mut self, excitation: &[f64], wm: &[f64], raw: &[f64], cross: &[f64]) {
        self.count += 1;
        add_outer(&mut self.wm, wm);
        add_outer(&mut self.raw, raw);
        for (j, e) in excitation.iter().enumerate() {
            for (i, c) in cross.iter().enumerate() {
                self.cross[(i, j)] += e * c;
            }
        }
    }

    pub fn add_frame(&mut self, frame: &Frame) {
        self.add(&frame.excitation, &frame.watermark_removed, &frame.raw, &frame.cross);
    }

    fn scatter(&self, channel: Channel) -> &DMatrix<f64> {
        match channel {
            Channel::WatermarkRemoved => &self.wm,
            Channel::Raw => &self.raw,
        }
    }
}

fn add_outer(m: &mut DMatrix<f64>, r: &[f64]) {
    for (j, rj) in r.iter().enumerate() {
        for (i, ri) in r.iter().enumerate() {
            m[(i, j)] += ri * rj;
        }
    }
}

/// Evaluates statistics from accumulators against a null model.
#[derive(Debug, Clone)]
pub struct Evaluator {
    null: NullModel,
    wm: Reference,
    raw: Reference,
    cross_targets: Vec<DVector<f64>>,
}

impl Evaluator {
    pub fn new(null: NullModel) -> Result<Self> {
        let wm = Reference::new(&null.covariance(Channel::WatermarkRemoved))?;
        let raw = Reference::new(&null.covariance(Channel::Raw))?;
        let cross_targets = (0..null.actuators()).map(|i| null.cross_target(i)).collect();
        Ok(Evaluator {
            null,
            wm,
            raw,
            cross_targets,
        })
    }

    pub fn null(&self) -> &NullModel {
        &self.null
    }

    pub fn accumulator(&self) -> WindowAccumulator {
        WindowAccumulator::new(self.null.residual_dim(), self.null.cross_dim(), self.null.actuators())
    }

    fn reference(&self, channel: Channel) -> &Reference {
        match channel {
            Channel::WatermarkRemoved => &self.wm,
            Channel::Raw => &self.raw,
        }
    }

    /// Statistic value; a singular window covariance maps to `+inf`.
    pub fn evaluate(&self, stat: &TestStat, acc: &WindowAccumulator) -> f64 {
        let l = acc.count.max(1);
        let singular = |r: Result<f64>| r.unwrap_or(f64::INFINITY);
        match *stat {
            TestStat::Variance { channel } => acc.scatter(channel)[(0, 0)] / l as f64,
            TestStat::Covariance { channel } => singular(self.reference(channel).divergence(acc.scatter(channel), l)),
            TestStat::Nll { channel } => singular(self.reference(channel).wishart_nll(acc.scatter(channel), l)),
            TestStat::CrossCorr { actuator } => {
                (acc.cross.column(actuator) / l as f64 - &self.cross_targets[actuator]).norm()
            }
        }
    }

    /// Expected value of the statistic's target, for reporting.
    pub fn target(&self, stat: &TestStat) -> Option<f64> {
        match *stat {
            TestStat::Variance { channel } => Some(self.null.covariance(channel)[(0, 0)]),
            TestStat::CrossCorr { actuator } => Some(self.cross_targets[actuator].norm()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "side", rename_all = "snake_case")]
pub enum Bound {
    Upper { tau: f64 },
    TwoSided { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ThresholdMethod {
    ChiSquare,
    MonteCarlo { n_cal: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub alpha: f64,
    pub bound: Bound,
    pub method: ThresholdMethod,
}

impl Threshold {
    pub fn exceeded(&self, value: f64) -> bool {
        match self.bound {
            Bound::Upper { tau } => value > tau,
            Bound::TwoSided { lower, upper } => value < lower || value > upper,
        }
    }

    /// Upper decision boundary, for plotting.
    pub fn upper(&self) -> f64 {
        match self.bound {
            Bound::Upper { tau } => tau,
            Bound::TwoSided { upper, .. } => upper,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    Ok(())
}

/// Two-sided chi-square band for the mean of `l` squared N(0, sigma2) samples.
pub fn chi_square_band(l: usize, alpha: f64, sigma2: f64) -> Result<Threshold> {
    check_alpha(alpha)?;
    let chi = ChiSquared::new(l as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(Threshold {
        alpha,
        bound: Bound::TwoSided {
            lower: sigma2 * chi.inverse_cdf(alpha / 2.0) / l as f64,
            upper: sigma2 * chi.inverse_cdf(1.0 - alpha / 2.0) / l as f64,
        },
        method: ThresholdMethod::ChiSquare,
    })
}

fn needs_monte_carlo(stat: &TestStat, null: &NullModel) -> bool {
    match *stat {
        TestStat::Variance { channel } => !null.channel_is_gaussian(channel),
        _ => true,
    }
}

/// Simulates `n_windows` null windows of length `l` and returns every
/// statistic's value per window (outer index: statistic).
pub fn simulate_null(stats: &[TestStat], evaluator: &Evaluator, l: usize, n_windows: usize, seed: u64) -> Vec<Vec<f64>> {
    let chunks = n_windows.div_ceil(CAL_CHUNK);
    let per_chunk: Vec<Vec<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, Stream::Calibration(k as u64));
            let mut buf = FrameBuf::new(&evaluator.null);
            let mut acc = evaluator.accumulator();
            let count = CAL_CHUNK.min(n_windows - k * CAL_CHUNK);
            let mut out = vec![Vec::with_capacity(count); stats.len()];
            for _ in 0..count {
                acc.clear();
                for _ in 0..l {
                    evaluator.null.sample_into(&mut rng, &mut buf);
                    acc.add(&buf.e, &buf.wm, &buf.raw, &buf.cross);
                }
                for (s, o) in stats.iter().zip(out.iter_mut()) {
                    o.push(evaluator.evaluate(s, &acc));
                }
            }
            out
        })
        .collect();
    let mut merged = vec![Vec::with_capacity(n_windows); stats.len()];
    for chunk in per_chunk {
        for (m, c) in merged.iter_mut().zip(chunk) {
            m.extend(c);
        }
    }
    merged
}

/// Empirical quantile with the sorted sample's `floor(p N)` element.
fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let idx = ((p * sorted.len() as f64).floor() as usize).min(sorted.len() - 1);
    sorted[idx]
}

/// Calibrates several statistics at once from one null simulation.
pub fn calibrate_thresholds(
    stats: &[TestStat],
    l: usize,
    alpha: f64,
    evaluator: &Evaluator,
    n_cal: usize,
    seed: u64,
) -> Result<Vec<Threshold>> {
    check_alpha(alpha)?;
    if l == 0 {
        return Err(Error::InvalidParameter("window length must be positive".into()));
    }
    let mc: Vec<TestStat> = stats.iter().copied().filter(|s| needs_monte_carlo(s, &evaluator.null)).collect();
    let needed = (10.0 / alpha).ceil() as usize;
    if !mc.is_empty() && n_cal < needed {
        return Err(Error::CalibrationTooSmall {
            alpha,
            needed,
            got: n_cal,
        });
    }
    let mut simulated = if mc.is_empty() {
        Vec::new()
    } else {
        simulate_null(&mc, evaluator, l, n_cal, seed)
    };
    for v in simulated.iter_mut() {
        v.sort_by(f64::total_cmp);
    }
    let mut mc_iter = simulated.into_iter();
    stats
        .iter()
        .map(|stat| {
            if !needs_monte_carlo(stat, &evaluator.null) {
                let TestStat::Variance { channel } = *stat else { unreachable!() };
                return chi_square_band(l, alpha, evaluator.null.covariance(channel)[(0, 0)]);
            }
            let sorted = mc_iter.next().expect("one simulation per Monte-Carlo statistic");
            let bound = match stat {
                TestStat::Variance { .. } => Bound::TwoSided {
                    lower: empirical_quantile(&sorted, alpha / 2.0),
                    upper: empirical_quantile(&sorted, 1.0 - alpha / 2.0),
                },
                _ => Bound::Upper {
                    tau: empirical_quantile(&sorted, 1.0 - alpha),
                },
            };
            Ok(Threshold {
                alpha,
                bound,
                method: ThresholdMethod::MonteCarlo { n_cal },
            })
        })
        .collect()
}

pub fn calibrate_threshold(
    stat: TestStat,
    l: usize,
    alpha: f64,
    evaluator: &Evaluator,
    n_cal: usize,
    seed: u64,
) -> Result<Threshold> {
    Ok(calibrate_thresholds(&[stat], l, alpha, evaluator, n_cal, seed)?.remove(0))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmLog {
    pub alarm_times: Vec<usize>,
    pub first_alarm: Option<usize>,
}

/// Alarms at every labelled value beyond the threshold; monitoring never stops.
pub fn sequential_detect(stream: &[(usize, f64)], threshold: &Threshold) -> AlarmLog {
    let alarm_times: Vec<usize> = stream
        .iter()
        .filter(|(_, v)| threshold.exceeded(*v))
        .map(|(t, _)| *t)
        .collect();
    AlarmLog {
        first_alarm: alarm_times.first().copied(),
        alarm_times,
    }
}

/// Test families a scenario can enable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFamily {
    /// Second moment of the watermark-removed residual.
    Test1,
    /// Second moment of the raw residual.
    Test2,
    /// Correlation of each actuator's excitation with the residual.
    CrossCorr,
    /// Wishart negative log-likelihood of the watermark-removed residual.
    Nll,
}

impl TestFamily {
    pub const ALL: [TestFamily; 4] = [TestFamily::Test1, TestFamily::Test2, TestFamily::CrossCorr, TestFamily::Nll];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedTest {
    pub name: String,
    pub stat: TestStat,
    pub threshold: Threshold,
}

/// Named statistics for the enabled families, sized to the null model.
pub fn expand_tests(families: &[TestFamily], null: &NullModel) -> Vec<(String, TestStat)> {
    let second_moment = |channel| {
        if null.residual_dim() == 1 {
            TestStat::Variance { channel }
        } else {
            TestStat::Covariance { channel }
        }
    };
    let mut out = Vec::new();
    for f in families {
        match f {
            TestFamily::Test1 => out.push(("test1".to_string(), second_moment(Channel::WatermarkRemoved))),
            TestFamily::Test2 => out.push(("test2".to_string(), second_moment(Channel::Raw))),
            TestFamily::CrossCorr => {
                let m = null.actuators();
                for i in 0..m {
                    let name = if m == 1 { "cross_corr".to_string() } else { format!("cross_corr_{i}") };
                    out.push((name, TestStat::CrossCorr { actuator: i }));
                }
            }
            TestFamily::Nll => out.push((
                "nll".to_string(),
                TestStat::Nll {
                    channel: Channel::WatermarkRemoved,
                },
            )),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub window: usize,
    pub alpha: f64,
    pub tests: Vec<TestFamily>,
    pub n_cal: usize,
    pub calibration_seed: u64,
    /// Earliest report time a window may start at.
    pub burn_in: usize,
}

/// Thresholds for one detector configuration; reusable across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub window: usize,
    pub alpha: f64,
    pub tests: Vec<CalibratedTest>,
}

pub fn calibrate(spec: &DetectorSpec, evaluator: &Evaluator) -> Result<Calibration> {
    let named = expand_tests(&spec.tests, evaluator.null());
    let stats: Vec<TestStat> = named.iter().map(|(_, s)| *s).collect();
    let thresholds = calibrate_thresholds(&stats, spec.window, spec.alpha, evaluator, spec.n_cal, spec.calibration_seed)?;
    Ok(Calibration {
        window: spec.window,
        alpha: spec.alpha,
        tests: named
            .into_iter()
            .zip(thresholds)
            .map(|((name, stat), threshold)| CalibratedTest { name, stat, threshold })
            .collect(),
    })
}

/// Statistics of one completed window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub window_id: usize,
    pub start_t: usize,
    pub end_t: usize,
    pub values: Vec<f64>,
    pub alarms: Vec<bool>,
    pub alarm: bool,
}

/// Online detector over non-overlapping windows `[k l, (k+1) l)`.
///
/// Window 0 and any window touching the burn-in period are skipped.
#[derive(Debug, Clone)]
pub struct WindowedDetector {
    calibration: Calibration,
    evaluator: Evaluator,
    burn_in: usize,
    acc: WindowAccumulator,
    current: Option<usize>,
    valid: bool,
}

impl WindowedDetector {
    pub fn new(calibration: Calibration, evaluator: Evaluator, burn_in: usize) -> Self {
        let acc = evaluator.accumulator();
        WindowedDetector {
            calibration,
            evaluator,
            burn_in,
            acc,
            current: None,
            valid: false,
        }
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn evaluator(&self) -> &Evaluator {
        &self.evaluator
    }

    pub fn push(&mut self, frame: &Frame) -> Option<WindowRecord> {
        let l = self.calibration.window;
        let id = frame.t / l;
        if self.current != Some(id) {
            self.current = Some(id);
            self.acc.clear();
            self.valid = id >= 1 && id * l >= self.burn_in && frame.t == id * l;
        }
        if !self.valid || frame.in_burn_in {
            self.valid = false;
            return None;
        }
        self.acc.add_frame(frame);
        if frame.t + 1 != (id + 1) * l || self.acc.count() != l {
            return None;
        }
        let values: Vec<f64> = self
            .calibration
            .tests
            .iter()
            .map(|t| self.evaluator.evaluate(&t.stat, &self.acc))
            .collect();
        let alarms: Vec<bool> = self
            .calibration
            .tests
            .iter()
            .zip(&values)
            .map(|(t, v)| t.threshold.exceeded(*v))
            .collect();
        Some(WindowRecord {
            window_id: id,
            start_t: id * l,
            end_t: frame.t,
            alarm: alarms.iter().any(|a| *a),
            values,
            alarms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::Continuous;

    fn gaussian_draws(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, Stream::Process);
        NoiseDist::gaussian(1.0).sample_vec(&mut rng, n)
    }

    fn scalar_null(sigma_e2: f64) -> NullModel {
        NullModel {
            excitation: NoiseDist::gaussian(sigma_e2),
            noise: NoiseDist::gaussian(1.0),
            exc_to_raw: DMatrix::from_element(1, 1, 1.0),
            noise_map: DMatrix::from_element(1, 1, 1.0),
            cross_exc: DMatrix::from_element(1, 1, 1.0),
            cross_noise: DMatrix::from_element(1, 1, 1.0),
        }
    }

    #[test]
    fn variance_examples() {
        assert_eq!(variance_stat(&[1.0, -1.0, 1.0, -1.0], 1.0).unwrap().value, 1.0);
        assert_eq!(variance_stat(&[0.0; 5], 1.0).unwrap().value, 0.0);
        assert!(variance_stat(&[], 1.0).is_err());
        let v = variance_stat(&gaussian_draws(100_000, 1), 1.0).unwrap();
        assert!((v.value - 1.0).abs() < 0.02);
    }

    #[test]
    fn cross_corr_examples() {
        let e = gaussian_draws(1000, 2);
        let r: Vec<DVector<f64>> = e.iter().map(|x| DVector::from_element(1, 0.7 * x)).collect();
        let own_var = e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64;
        let s = cross_corr_stat(&e, &r, &DVector::from_element(1, 0.7 * own_var)).unwrap();
        assert!(s.value < 1e-12);

        let n = 100_000;
        let e = gaussian_draws(n, 3);
        let r: Vec<DVector<f64>> = gaussian_draws(n, 4).into_iter().map(|x| DVector::from_element(1, x)).collect();
        let s = cross_corr_stat(&e, &r, &DVector::zeros(1)).unwrap();
        assert!(s.value < 4.0 / (n as f64).sqrt());

        assert!(cross_corr_stat(&e[..3], &r[..2], &DVector::zeros(1)).is_err());
    }

    #[test]
    fn cov_stat_examples() {
        let sigma0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        // Four vectors whose scatter / 4 equals sigma0.
        let chol = sigma0.clone().cholesky().unwrap().l();
        let basis = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let rs: Vec<DVector<f64>> = basis.iter().map(|b| &chol * DVector::from_row_slice(b)).collect();
        assert!(cov_stat(&rs, &sigma0).unwrap().value.abs() < 1e-10);

        let s1: Vec<DVector<f64>> = [1.5, -0.5, 2.0].iter().map(|x| DVector::from_element(1, *x)).collect();
        let s = (1.5f64.powi(2) + 0.25 + 4.0) / 3.0;
        let sigma = 0.8;
        let v = cov_stat(&s1, &DMatrix::from_element(1, 1, sigma)).unwrap().value;
        assert!((v - (s / sigma - (s / sigma).ln() - 1.0)).abs() < 1e-12);

        assert!(matches!(cov_stat(&rs[..2], &sigma0), Err(Error::SingularCovariance { .. })));
    }

    #[test]
    fn nll_scalar_matches_chi_square_density() {
        let rs: Vec<DVector<f64>> = (0..100).map(|i| DVector::from_element(1, if i % 2 == 0 { 1.0 } else { -1.0 })).collect();
        let v = nll_window(&rs, &DMatrix::from_element(1, 1, 1.0)).unwrap().value;
        let oracle = -ChiSquared::new(100.0).unwrap().ln_pdf(100.0);
        assert!((v - oracle).abs() < 1e-10, "{v} vs {oracle}");
        assert!((v - 3.569763860925626).abs() < 1e-9);

        let sigma = 2.5;
        let v = nll_window(&rs, &DMatrix::from_element(1, 1, sigma)).unwrap().value;
        let oracle = -(ChiSquared::new(100.0).unwrap().ln_pdf(100.0 / sigma) - sigma.ln());
        assert!((v - oracle).abs() < 1e-10);
    }

    #[test]
    fn nll_matches_reference_wishart_density() {
        // Reference value from an independent Wishart log-density routine.
        let sigma0 = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 1.2]);
        let reference = Reference::new(&sigma0).unwrap();
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let v = reference.wishart_nll(&(s * 50.0), 50).unwrap();
        assert!((v - 11.958967496138342).abs() < 1e-9, "{v}");
    }

    #[test]
    fn nll_minimized_at_wishart_mode() {
        let sigma0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let reference = Reference::new(&sigma0).unwrap();
        let l = 20;
        let nll = |c: f64| reference.wishart_nll(&(&sigma0 * (c * l as f64)), l).unwrap();
        let mode = (l as f64 - 3.0) / l as f64;
        for c in [0.5, 0.7, 0.8, 0.84, 0.86, 0.9, 1.0, 1.2] {
            assert!(nll(c) >= nll(mode) - 1e-12, "c={c}");
        }
    }

    #[test]
    fn chi_square_band_examples() {
        let t = chi_square_band(100, 0.05, 1.0).unwrap();
        let Bound::TwoSided { lower, upper } = t.bound else { panic!() };
        assert!((lower * 100.0 - 74.22192747492373).abs() < 1e-6);
        assert!((upper * 100.0 - 129.5611971858366).abs() < 1e-6);
        let t = chi_square_band(1_000_000, 0.05, 2.0).unwrap();
        let Bound::TwoSided { lower, upper } = t.bound else { panic!() };
        assert!((lower - 2.0).abs() < 0.01 && (upper - 2.0).abs() < 0.01);
        assert!(chi_square_band(100, 0.6, 1.0).is_err());
    }

    #[test]
    fn calibration_needs_enough_windows() {
        let ev = Evaluator::new(scalar_null(1.0)).unwrap();
        let err = calibrate_threshold(TestStat::CrossCorr { actuator: 0 }, 50, 0.01, &ev, 500, 1).unwrap_err();
        assert!(matches!(err, Error::CalibrationTooSmall { needed: 1000, .. }));
        // Closed-form thresholds need no simulation.
        assert!(calibrate_threshold(TestStat::Variance { channel: Channel::Raw }, 50, 0.01, &ev, 0, 1).is_ok());
    }

    #[test]
    fn calibration_is_deterministic() {
        let ev = Evaluator::new(scalar_null(0.5)).unwrap();
        let stat = TestStat::Nll {
            channel: Channel::WatermarkRemoved,
        };
        let a = calibrate_threshold(stat, 30, 0.05, &ev, 1000, 7).unwrap();
        let b = calibrate_threshold(stat, 30, 0.05, &ev, 1000, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sequential_detect_examples() {
        let t = Threshold {
            alpha: 0.01,
            bound: Bound::Upper { tau: 1.0 },
            method: ThresholdMethod::ChiSquare,
        };
        let quiet: Vec<(usize, f64)> = (0..10).map(|i| (i, 0.5)).collect();
        assert_eq!(sequential_detect(&quiet, &t), AlarmLog::default());
        let mut spike = quiet.clone();
        spike[7].1 = 3.0;
        let log = sequential_detect(&spike, &t);
        assert_eq!(log.first_alarm, Some(7));
        assert_eq!(log.alarm_times, vec![7]);
    }

    #[test]
    fn detector_skips_window_zero_and_burn_in() {
        let ev = Evaluator::new(scalar_null(1.0)).unwrap();
        let spec = DetectorSpec {
            window: 10,
            alpha: 0.05,
            tests: vec![TestFamily::Test1],
            n_cal: 0,
            calibration_seed: 0,
            burn_in: 15,
        };
        let cal = calibrate(&spec, &ev).unwrap();
        let mut det = WindowedDetector::new(cal, ev, spec.burn_in);
        let mut ends = Vec::new();
        for t in 1..50 {
            let frame = Frame {
                t,
                excitation: vec![0.0],
                watermark_removed: vec![1.0],
                raw: vec![1.0],
                cross: vec![1.0],
                in_burn_in: false,
            };
            if let Some(rec) = det.push(&frame) {
                assert_eq!(rec.values, vec![1.0]);
                ends.push(rec.end_t);
            }
        }
        assert_eq!(ends, vec![29, 39, 49]);
    }

    proptest! {
        #[test]
        fn cov_stat_is_nonnegative(xs in proptest::collection::vec(-3.0f64..3.0, 12), d in 0.2f64..3.0) {
            let rs: Vec<DVector<f64>> = xs.chunks(2).map(DVector::from_row_slice).collect();
            let sigma0 = DMatrix::from_row_slice(2, 2, &[d, 0.1, 0.1, 1.0]);
            if let Ok(s) = cov_stat(&rs, &sigma0) {
                prop_assert!(s.value >= -1e-10);
            }
        }

        #[test]
        fn inflation_increases_statistics(seed in 0u64..1000, c in 1.05f64..3.0) {
            let xs = gaussian_draws(40, seed);
            let rs: Vec<DVector<f64>> = xs.chunks(2).map(DVector::from_row_slice).collect();
            let big: Vec<DVector<f64>> = rs.iter().map(|r| r * c).collect();
            let v0 = variance_stat(&xs, 1.0).unwrap().value;
            let v1 = variance_stat(&xs.iter().map(|x| x * c).collect::<Vec<_>>(), 1.0).unwrap().value;
            prop_assert!(v1 > v0);
            // Above the target, inflation moves the divergence further away.
            let sigma0 = DMatrix::identity(2, 2) * 1e-3;
            let c0 = cov_stat(&rs, &sigma0).unwrap().value;
            let c1 = cov_stat(&big, &sigma0).unwrap().value;
            prop_assert!(c1 > c0);
        }
    }
}
