//! Scenario files: a versioned TOML tree with plant, policy, watermark, attack
//! and detector sections, validated into ready-to-run domain objects.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::adversary::{AttackKind, AttackStrategy, CustomRegistry};
use crate::detect::{DetectorSpec, TestFamily};
use crate::error::{Error, Result, ValidationError};
use crate::linsys::{ArmaxPlant, ArxPlant, ControlPolicy, MimoPlant, PartialPlant, PlantModel, ScalarPlant};
use crate::random::{NoiseDist, NoiseKind};
use crate::watermark::{match_distribution, Shaper, WatermarkSpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_HORIZON: usize = 9000;
pub const DEFAULT_ONSET: usize = 4500;
pub const DEFAULT_WINDOW: usize = 500;
pub const DEFAULT_ALPHA: f64 = 1e-3;
pub const DEFAULT_SIGMA_E2: f64 = 1.0;
pub const DEFAULT_CALIBRATION_SEED: u64 = 0x5eed;

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}
fn default_onset() -> usize {
    DEFAULT_ONSET
}
fn default_window() -> usize {
    DEFAULT_WINDOW
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_calibration_seed() -> u64 {
    DEFAULT_CALIBRATION_SEED
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    pub plant: PlantSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub watermark: WatermarkSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub detector: DetectorSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSection {
    Scalar {
        a: f64,
        b: f64,
        sigma_w2: f64,
        #[serde(default)]
        noise: NoiseKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x0: Option<f64>,
    },
    Arx {
        a: Vec<f64>,
        b: Vec<f64>,
        sigma_w2: f64,
        #[serde(default)]
        noise: NoiseKind,
    },
    Armax {
        a: Vec<f64>,
        b: Vec<f64>,
        c: Vec<f64>,
        delay: usize,
        sigma_w2: f64,
        #[serde(default)]
        noise: NoiseKind,
    },
    Partial {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        c: Vec<f64>,
        sigma_w2: f64,
        sigma_n2: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x0: Option<Vec<f64>>,
    },
    Mimo {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        sigma_w2: f64,
        #[serde(default)]
        noise: NoiseKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x0: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gain {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySection {
    #[default]
    Zero,
    /// `u^g[t] = F z[t]`.
    Linear { gain: Gain },
    Affine {
        z_coeffs: Vec<f64>,
        #[serde(default)]
        ug_coeffs: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    /// ARX dynamics cancellation.
    Deadbeat,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcitationLaw {
    #[default]
    Gaussian,
    Laplace,
    Uniform,
    /// Process-noise law scaled by the inverse input gain.
    Matched,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShaperChoice {
    /// Pre-equalizer for ARX, `B^-1 C` shaping for ARMAX, none otherwise.
    #[default]
    Auto,
    /// Unshaped excitation. Detector targets still assume the auto shaper.
    None,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_e2: Option<f64>,
    #[serde(default)]
    pub dist: ExcitationLaw,
    #[serde(default)]
    pub shaper: ShaperChoice,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSection {
    #[default]
    Honest,
    Replay {
        #[serde(default = "default_onset")]
        onset: usize,
        record_len: usize,
    },
    NoiseSim {
        #[serde(default = "default_onset")]
        onset: usize,
    },
    AdditiveEstimated {
        #[serde(default = "default_onset")]
        onset: usize,
    },
    Custom {
        #[serde(default = "default_onset")]
        onset: usize,
        name: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tests: Option<Vec<TestFamily>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cal: Option<usize>,
    #[serde(default = "default_calibration_seed")]
    pub calibration_seed: u64,
    #[serde(default)]
    pub burn_in: usize,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            enabled: true,
            window: DEFAULT_WINDOW,
            alpha: DEFAULT_ALPHA,
            tests: None,
            n_cal: None,
            calibration_seed: DEFAULT_CALIBRATION_SEED,
            burn_in: 0,
        }
    }
}

/// Default Monte-Carlo calibration size for a false-alarm rate.
pub fn default_n_cal(alpha: f64) -> usize {
    ((20.0 / alpha).ceil() as usize).max(2000)
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub plant: PlantModel,
    pub process_noise: NoiseDist,
    pub x0: Vec<f64>,
    pub policy: ControlPolicy,
    pub watermark: WatermarkSpec,
    pub attack: AttackStrategy,
    pub detector: Option<DetectorSpec>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_str_with(text, &CustomRegistry::default())
    }

    pub fn from_toml_str_with(text: &str, registry: &CustomRegistry) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::ScenarioParse(e.to_string()))?;
        Self::from_file(file, registry)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.file).expect("scenario file always serializes")
    }

    pub fn seed(&self) -> u64 {
        self.file.seed
    }

    pub fn horizon(&self) -> usize {
        self.file.horizon
    }

    pub fn name(&self) -> &str {
        self.file.name.as_deref().unwrap_or("scenario")
    }

    /// Validates every section, reporting all offending fields at once.
    pub fn from_file(file: ScenarioFile, registry: &CustomRegistry) -> Result<Self> {
        let mut issues = ValidationError::default();
        if file.schema_version != SCHEMA_VERSION {
            issues.push(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", file.schema_version),
            );
        }
        if file.horizon == 0 {
            issues.push("horizon", "must be at least 1");
        }
        let built = build_plant(&file.plant, &mut issues);
        let policy = built.as_ref().and_then(|(plant, _, _)| build_policy(&file.policy, plant, &mut issues));
        let watermark = built
            .as_ref()
            .and_then(|(plant, noise, _)| build_watermark(&file.watermark, plant, *noise, &mut issues));
        let attack = build_attack(&file.attack, registry, &mut issues);
        let detector = build_detector(&file.detector, built.as_ref().map(|b| &b.0), &mut issues);
        issues.into_result()?;
        let (plant, process_noise, x0) = built.expect("no issues implies a plant");
        Ok(Scenario {
            plant,
            process_noise,
            x0,
            policy: policy.expect("no issues implies a policy"),
            watermark: watermark.expect("no issues implies a watermark"),
            attack: attack.expect("no issues implies an attack"),
            detector: detector.expect("no issues implies a detector"),
            file,
        })
    }
}

fn matrix(rows: &[Vec<f64>], field: &str, issues: &mut ValidationError) -> Option<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        issues.push(field, "must be a non-empty rectangular matrix");
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn record<T>(field: &str, r: Result<T>, issues: &mut ValidationError) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            issues.push(field, e.to_string());
            None
        }
    }
}

fn plant_field(e: &Error) -> String {
    match e {
        Error::NotMinimumPhase { name, .. } => format!("plant.{}", name.to_lowercase()),
        Error::NotObservable { .. } => "plant.c".into(),
        Error::Dimension(_) => "plant".into(),
        Error::InvalidParameter(m) if m.contains("sigma_n2") => "plant.sigma_n2".into(),
        Error::InvalidParameter(m) if m.contains("sigma_w2") => "plant.sigma_w2".into(),
        Error::InvalidParameter(m) if m.contains("delay") => "plant.delay".into(),
        Error::InvalidParameter(m) if m.contains("c_0") => "plant.c".into(),
        Error::InvalidParameter(m) if m.contains("b ") || m.contains("b0") => "plant.b".into(),
        _ => "plant".into(),
    }
}

fn build_plant(section: &PlantSection, issues: &mut ValidationError) -> Option<(PlantModel, NoiseDist, Vec<f64>)> {
    let push = |r: Result<PlantModel>, issues: &mut ValidationError| match r {
        Ok(p) => Some(p),
        Err(e) => {
            issues.push(plant_field(&e), e.to_string());
            None
        }
    };
    let check_x0 = |x0: &Option<Vec<f64>>, dim: usize, issues: &mut ValidationError| match x0 {
        Some(v) if v.len() != dim => {
            issues.push("plant.x0", format!("must have {dim} entries"));
            None
        }
        Some(v) => Some(v.clone()),
        None => Some(vec![0.0; dim]),
    };
    match section {
        PlantSection::Scalar {
            a,
            b,
            sigma_w2,
            noise,
            x0,
        } => {
            let plant = push(ScalarPlant::new(*a, *b, *sigma_w2).map(PlantModel::Scalar), issues)?;
            Some((plant, NoiseDist::new(*noise, *sigma_w2), vec![x0.unwrap_or(0.0)]))
        }
        PlantSection::Arx { a, b, sigma_w2, noise } => {
            let plant = push(ArxPlant::new(a.clone(), b.clone(), *sigma_w2).map(PlantModel::Arx), issues)?;
            Some((plant, NoiseDist::new(*noise, *sigma_w2), vec![0.0]))
        }
        PlantSection::Armax {
            a,
            b,
            c,
            delay,
            sigma_w2,
            noise,
        } => {
            let plant = push(
                ArmaxPlant::new(a.clone(), b.clone(), c.clone(), *delay, *sigma_w2).map(PlantModel::Armax),
                issues,
            )?;
            Some((plant, NoiseDist::new(*noise, *sigma_w2), vec![0.0]))
        }
        PlantSection::Partial {
            a,
            b,
            c,
            sigma_w2,
            sigma_n2,
            x0,
        } => {
            let am = matrix(a, "plant.a", issues)?;
            let plant = push(
                PartialPlant::new(
                    am,
                    DVector::from_vec(b.clone()),
                    RowDVector::from_vec(c.clone()),
                    *sigma_w2,
                    *sigma_n2,
                )
                .map(PlantModel::Partial),
                issues,
            )?;
            let x0 = check_x0(x0, plant.state_dim(), issues)?;
            Some((plant, NoiseDist::gaussian(*sigma_w2), x0))
        }
        PlantSection::Mimo {
            a,
            b,
            sigma_w2,
            noise,
            x0,
        } => {
            let am = matrix(a, "plant.a", issues);
            let bm = matrix(b, "plant.b", issues);
            let plant = push(MimoPlant::new(am?, bm?, *sigma_w2).map(PlantModel::Mimo), issues)?;
            let x0 = check_x0(x0, plant.state_dim(), issues)?;
            Some((plant, NoiseDist::new(*noise, *sigma_w2), x0))
        }
    }
}

fn build_policy(section: &PolicySection, plant: &PlantModel, issues: &mut ValidationError) -> Option<ControlPolicy> {
    let (m, n) = (plant.input_dim(), plant.output_dim());
    let policy = match section {
        PolicySection::Zero => ControlPolicy::Zero { inputs: m },
        PolicySection::Linear { gain } => {
            let gain = match gain {
                Gain::Scalar(f) => DMatrix::from_element(1, 1, *f),
                Gain::Matrix(rows) => matrix(rows, "policy.gain", issues)?,
            };
            if gain.nrows() != m || gain.ncols() != n {
                issues.push(
                    "policy.gain",
                    format!("must be {m}x{n} for this plant, got {}x{}", gain.nrows(), gain.ncols()),
                );
                return None;
            }
            if gain.iter().any(|v| !v.is_finite()) {
                issues.push("policy.gain", "entries must be finite");
                return None;
            }
            ControlPolicy::Linear { gain }
        }
        PolicySection::Affine {
            z_coeffs,
            ug_coeffs,
            offset,
        } => {
            if m != 1 || n != 1 {
                issues.push("policy.kind", "affine policies are single-input single-output only");
                return None;
            }
            ControlPolicy::Affine {
                z_coeffs: z_coeffs.clone(),
                ug_coeffs: ug_coeffs.clone(),
                offset: *offset,
            }
        }
        PolicySection::Deadbeat => match plant {
            PlantModel::Arx(p) => ControlPolicy::arx_deadbeat(p),
            _ => {
                issues.push("policy.kind", "deadbeat policy needs an ARX plant");
                return None;
            }
        },
    };
    Some(policy)
}

fn build_watermark(
    section: &WatermarkSection,
    plant: &PlantModel,
    process_noise: NoiseDist,
    issues: &mut ValidationError,
) -> Option<WatermarkSpec> {
    let excitation = match section.dist {
        ExcitationLaw::Matched => {
            let gain = match plant {
                PlantModel::Scalar(_) | PlantModel::Arx(_) => plant.excitation_gain(),
                _ => {
                    issues.push("watermark.dist", "matched excitation needs a scalar or ARX plant");
                    return None;
                }
            };
            let law = record("watermark.dist", match_distribution(process_noise, gain), issues)?;
            if let Some(v) = section.sigma_e2 {
                if (v - law.variance).abs() > 1e-12 * law.variance.max(1.0) {
                    issues.push(
                        "watermark.sigma_e2",
                        format!("matched excitation fixes sigma_e2 = {}, got {v}", law.variance),
                    );
                    return None;
                }
            }
            law
        }
        law => {
            let var = section.sigma_e2.unwrap_or(DEFAULT_SIGMA_E2);
            let kind = match law {
                ExcitationLaw::Gaussian => NoiseKind::Gaussian,
                ExcitationLaw::Laplace => NoiseKind::Laplace,
                _ => NoiseKind::Uniform,
            };
            NoiseDist::new(kind, var)
        }
    };
    if !excitation.variance.is_finite() || excitation.variance < 0.0 {
        issues.push("watermark.sigma_e2", "must be finite and non-negative");
        return None;
    }
    if matches!(plant, PlantModel::Partial(_)) && !excitation.is_gaussian() {
        issues.push("watermark.dist", "partially observed plants need Gaussian excitation");
        return None;
    }
    let shaper = match (section.shaper, plant) {
        (ShaperChoice::Auto, PlantModel::Arx(p)) => record("watermark.shaper", Shaper::pre_equalizer(p.b.clone()), issues)?,
        (ShaperChoice::Auto, PlantModel::Armax(p)) => {
            record("watermark.shaper", Shaper::armax(p.b.clone(), p.c.clone()), issues)?
        }
        _ => Shaper::None,
    };
    record("watermark", WatermarkSpec::new(excitation, shaper), issues)
}

fn build_attack(section: &AttackSection, registry: &CustomRegistry, issues: &mut ValidationError) -> Option<AttackStrategy> {
    let (kind, onset) = match section {
        AttackSection::Honest => (AttackKind::Honest, 0),
        AttackSection::Replay { onset, record_len } => {
            if *record_len == 0 || record_len > onset {
                issues.push(
                    "attack.record_len",
                    format!("must be between 1 and the onset ({onset}), got {record_len}"),
                );
                return None;
            }
            (AttackKind::Replay { record_len: *record_len }, *onset)
        }
        AttackSection::NoiseSim { onset } => (AttackKind::NoiseSim, *onset),
        AttackSection::AdditiveEstimated { onset } => (AttackKind::AdditiveEstimated, *onset),
        AttackSection::Custom { onset, name, params } => {
            if !registry.contains(name) {
                issues.push("attack.name", format!("unknown custom attack {name:?}"));
                return None;
            }
            if let Err(e) = registry.build(name, params) {
                issues.push("attack.params", e.to_string());
                return None;
            }
            (
                AttackKind::Custom {
                    name: name.clone(),
                    params: params.clone(),
                },
                *onset,
            )
        }
    };
    Some(AttackStrategy { kind, onset })
}

fn build_detector(
    section: &DetectorSection,
    plant: Option<&PlantModel>,
    issues: &mut ValidationError,
) -> Option<Option<DetectorSpec>> {
    if !section.enabled {
        return Some(None);
    }
    let before = issues.issues.len();
    if !(section.alpha > 0.0 && section.alpha < 0.5) {
        issues.push("detector.alpha", format!("must lie in (0, 0.5), got {}", section.alpha));
    }
    let dim = plant.map_or(1, PlantModel::output_dim);
    if section.window < 2 || section.window <= dim {
        issues.push("detector.window", format!("must exceed both 1 and the residual dimension {dim}"));
    }
    let tests = section.tests.clone().unwrap_or_else(|| match plant {
        Some(PlantModel::Partial(_)) => vec![TestFamily::Test2, TestFamily::CrossCorr, TestFamily::Nll],
        _ => TestFamily::ALL.to_vec(),
    });
    if tests.is_empty() {
        issues.push("detector.tests", "enable at least one test or set enabled = false");
    }
    let n_cal = section.n_cal.unwrap_or_else(|| default_n_cal(section.alpha.max(1e-12)));
    if section.alpha > 0.0 && (n_cal as f64) < 10.0 / section.alpha {
        issues.push(
            "detector.n_cal",
            format!("needs at least {} windows for alpha = {}", (10.0 / section.alpha).ceil(), section.alpha),
        );
    }
    if issues.issues.len() > before {
        return None;
    }
    Some(Some(DetectorSpec {
        window: section.window,
        alpha: section.alpha,
        tests,
        n_cal,
        calibration_seed: section.calibration_seed,
        burn_in: section.burn_in,
    }))
}
