#![allow(dead_code)]

use dynwm::harness::config::Scenario;
use dynwm::harness::sim::Trace;
use dynwm::residual::{Frame, ResidualEngine};

pub const SCALAR: &str = r#"
schema_version = 1
[plant]
kind = "scalar"
a = 0.5
b = 1.0
sigma_w2 = 1.0
[policy]
kind = "linear"
gain = -0.3
[watermark]
sigma_e2 = 0.25
"#;

pub const ARX: &str = r#"
schema_version = 1
[plant]
kind = "arx"
a = [0.7, 0.2]
b = [1.0, 0.5]
sigma_w2 = 1.0
[policy]
kind = "deadbeat"
"#;

pub const ARMAX: &str = r#"
schema_version = 1
[plant]
kind = "armax"
a = [-0.6]
b = [1.0, 0.3]
c = [1.0, 0.4]
delay = 2
sigma_w2 = 1.0
[policy]
kind = "linear"
gain = 0.2
"#;

pub const PARTIAL: &str = r#"
schema_version = 1
[plant]
kind = "partial"
a = [[0.9, 0.1], [0.0, 0.7]]
b = [0.0, 1.0]
c = [1.0, 0.0]
sigma_w2 = 1.0
sigma_n2 = 1.0
[policy]
kind = "linear"
gain = -0.2
"#;

pub const MIMO: &str = r#"
schema_version = 1
[plant]
kind = "mimo"
a = [[0.5, 0.1], [0.0, 0.4]]
b = [[1.0, 0.2], [0.1, 1.0]]
sigma_w2 = 1.0
[policy]
kind = "linear"
gain = [[-0.2, 0.0], [0.0, -0.2]]
[watermark]
sigma_e2 = 0.5
"#;

pub const ALL: [(&str, &str); 5] = [
    ("scalar", SCALAR),
    ("arx", ARX),
    ("armax", ARMAX),
    ("partial", PARTIAL),
    ("mimo", MIMO),
];

/// Base scenario text with a horizon, an attack table and a detector table appended.
pub fn scenario(base: &str, horizon: usize, attack: &str, detector: &str) -> Scenario {
    let text = format!("horizon = {horizon}\n{base}\n[attack]\n{attack}\n[detector]\n{detector}\n");
    Scenario::from_toml_str(&text).unwrap_or_else(|e| panic!("{e}\n{text}"))
}

pub fn frames(s: &Scenario, tr: &Trace) -> Vec<Frame> {
    let mut engine = ResidualEngine::new(&s.plant).unwrap();
    (0..tr.len())
        .filter_map(|t| engine.process(t, &tr.z, &tr.u_g, &tr.e_raw).unwrap())
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
