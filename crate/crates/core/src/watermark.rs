//! Private excitation: drawing it, and shaping it so the part that reaches the
//! plant output is white with a known variance.

use std::collections::VecDeque;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linsys::check_minimum_phase;
use crate::random::{NoiseDist, StreamRng};

/// Filter between the raw excitation `e` and the injected input component.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shaper {
    None,
    /// Injects `e'` with `B(q^-1) e' = b_0 e` (ARX plants).
    PreEqualizer { b: Vec<f64> },
    /// Injects `s` with `B(q^-1) s = C(q^-1) e` (ARMAX plants).
    Armax { b: Vec<f64>, c: Vec<f64> },
}

impl Shaper {
    pub fn pre_equalizer(b: Vec<f64>) -> Result<Self> {
        check_minimum_phase("B", &b)?;
        Ok(Shaper::PreEqualizer { b })
    }

    pub fn armax(b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        check_minimum_phase("B", &b)?;
        if c.is_empty() {
            return Err(Error::InvalidParameter("C polynomial must be non-empty".into()));
        }
        Ok(Shaper::Armax { b, c })
    }

    /// Samples of start-up transient to drop from test windows.
    pub fn burn_in(&self) -> usize {
        match self {
            Shaper::None => 0,
            Shaper::PreEqualizer { b } => b.len() - 1,
            Shaper::Armax { b, c } => (b.len() - 1).max(c.len() - 1),
        }
    }

    pub fn initial_state(&self) -> ShaperState {
        match self {
            Shaper::None => ShaperState::new(0, 0),
            Shaper::PreEqualizer { b } => ShaperState::new(b.len() - 1, 0),
            Shaper::Armax { b, c } => ShaperState::new(b.len() - 1, c.len() - 1),
        }
    }

    pub fn apply(&self, state: &mut ShaperState, e_new: f64) -> f64 {
        match self {
            Shaper::None => e_new,
            Shaper::PreEqualizer { b } => pre_equalize(state, b, e_new),
            Shaper::Armax { b, c } => armax_shape(state, b, c, e_new),
        }
    }
}

/// Public description of one actuator's watermark. The law is public; the
/// realization never leaves the actuator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WatermarkSpec {
    pub excitation: NoiseDist,
    pub shaper: Shaper,
}

impl WatermarkSpec {
    pub fn new(excitation: NoiseDist, shaper: Shaper) -> Result<Self> {
        if !excitation.variance.is_finite() || excitation.variance < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "excitation variance must be finite and >= 0, got {}",
                excitation.variance
            )));
        }
        Ok(WatermarkSpec { excitation, shaper })
    }

    pub fn gaussian(sigma_e2: f64) -> Result<Self> {
        WatermarkSpec::new(NoiseDist::gaussian(sigma_e2), Shaper::None)
    }

    pub fn sigma_e2(&self) -> f64 {
        self.excitation.variance
    }
}

/// Recent shaped outputs and raw inputs of a shaping filter, most recent first.
#[derive(Debug, Clone, PartialEq)]
pub struct ShaperState {
    e_prime_hist: VecDeque<f64>,
    e_hist: VecDeque<f64>,
}

impl ShaperState {
    pub fn new(shaped_order: usize, raw_order: usize) -> Self {
        ShaperState {
            e_prime_hist: std::iter::repeat_n(0.0, shaped_order).collect(),
            e_hist: std::iter::repeat_n(0.0, raw_order).collect(),
        }
    }

    pub fn shaped_history(&self) -> impl Iterator<Item = &f64> {
        self.e_prime_hist.iter()
    }

    fn record(&mut self, shaped: f64, raw: f64) {
        if !self.e_prime_hist.is_empty() {
            self.e_prime_hist.pop_back();
            self.e_prime_hist.push_front(shaped);
        }
        if !self.e_hist.is_empty() {
            self.e_hist.pop_back();
            self.e_hist.push_front(raw);
        }
    }
}

pub fn draw_excitation(spec: &WatermarkSpec, rng: &mut StreamRng) -> f64 {
    spec.excitation.sample(rng)
}

/// `e'[t] = e[t] - (1/b_0) sum_{k=1}^{h} b_k e'[t-k]`.
pub fn pre_equalize(state: &mut ShaperState, b: &[f64], e_new: f64) -> f64 {
    let feedback: f64 = b[1..]
        .iter()
        .zip(state.e_prime_hist.iter())
        .map(|(bk, ep)| bk * ep)
        .sum();
    let shaped = e_new - feedback / b[0];
    state.record(shaped, e_new);
    shaped
}

/// Solves `B(q^-1) s[t] = C(q^-1) e[t]` for the newest `s[t]`.
pub fn armax_shape(state: &mut ShaperState, b: &[f64], c: &[f64], e_new: f64) -> f64 {
    let mut acc = c[0] * e_new;
    for (ck, ek) in c[1..].iter().zip(state.e_hist.iter()) {
        acc += ck * ek;
    }
    for (bk, sk) in b[1..].iter().zip(state.e_prime_hist.iter()) {
        acc -= bk * sk;
    }
    let shaped = acc / b[0];
    state.record(shaped, e_new);
    shaped
}

/// Excitation law whose image under the input gain `b` is the process-noise law.
pub fn match_distribution(target: NoiseDist, b: f64) -> Result<NoiseDist> {
    if b == 0.0 || !b.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "cannot match an excitation through input gain {b}"
        )));
    }
    if !target.variance.is_finite() || target.variance < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "target law needs a finite variance, got {}",
            target.variance
        )));
    }
    Ok(target.scaled(1.0 / b))
}

/// One actuator's excitation generator: its private stream plus shaper state.
#[derive(Debug, Clone)]
pub struct ExcitationSource {
    spec: WatermarkSpec,
    rng: StreamRng,
    state: ShaperState,
}

impl ExcitationSource {
    pub fn new(spec: WatermarkSpec, rng: StreamRng) -> Self {
        let state = spec.shaper.initial_state();
        ExcitationSource { spec, rng, state }
    }

    pub fn spec(&self) -> &WatermarkSpec {
        &self.spec
    }

    /// Returns `(raw, shaped)` for the next step.
    pub fn next_sample(&mut self) -> (f64, f64) {
        let raw = draw_excitation(&self.spec, &mut self.rng);
        let shaped = self.spec.shaper.apply(&mut self.state, raw);
        (raw, shaped)
    }

    pub fn rng_mut(&mut self) -> &mut impl Rng {
        &mut self.rng
    }
}
