//! Zero-mean noise laws and seeded, per-purpose random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    Laplace,
    Uniform,
}

/// A zero-mean distribution parameterized by its variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseDist {
    pub kind: NoiseKind,
    pub variance: f64,
}

impl NoiseDist {
    pub fn new(kind: NoiseKind, variance: f64) -> Self {
        NoiseDist { kind, variance }
    }

    pub fn gaussian(variance: f64) -> Self {
        NoiseDist::new(NoiseKind::Gaussian, variance)
    }

    pub fn laplace(variance: f64) -> Self {
        NoiseDist::new(NoiseKind::Laplace, variance)
    }

    /// Laplace law with density `exp(-|x|/s) / 2s`, whose variance is `2 s^2`.
    pub fn laplace_with_scale(scale: f64) -> Self {
        NoiseDist::laplace(2.0 * scale * scale)
    }

    pub fn uniform(variance: f64) -> Self {
        NoiseDist::new(NoiseKind::Uniform, variance)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn laplace_scale(&self) -> f64 {
        (self.variance / 2.0).sqrt()
    }

    /// Law of `factor * X`.
    pub fn scaled(&self, factor: f64) -> Self {
        NoiseDist::new(self.kind, self.variance * factor * factor)
    }

    pub fn is_gaussian(&self) -> bool {
        self.kind == NoiseKind::Gaussian
    }

    /// Always consumes randomness, even at zero variance, so stream positions
    /// do not depend on the configured variance.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let sd = self.std_dev();
        match self.kind {
            NoiseKind::Gaussian => {
                let n: f64 = rng.sample(StandardNormal);
                sd * n
            }
            NoiseKind::Laplace => {
                let u: f64 = rng.random::<f64>() - 0.5;
                let mag = -(1.0 - 2.0 * u.abs()).ln();
                self.laplace_scale() * mag * u.signum()
            }
            NoiseKind::Uniform => {
                let half = (3.0 * self.variance).sqrt();
                half * (2.0 * rng.random::<f64>() - 1.0)
            }
        }
    }

    pub fn sample_vec<R: Rng + ?Sized>(&self, rng: &mut R, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.sample(rng)).collect()
    }
}

/// Purpose of a random stream. Each purpose gets its own ChaCha stream under the
/// master seed, so adding an actuator or an attack never perturbs other draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Process,
    Measurement,
    Attack,
    Excitation(usize),
    Calibration(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Process => 1,
            Stream::Measurement => 2,
            Stream::Attack => 3,
            Stream::Excitation(i) => 0x100 + i as u64,
            Stream::Calibration(k) => (1 << 32) + k,
        }
    }
}

pub fn stream_rng(master_seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream.id());
    rng
}
