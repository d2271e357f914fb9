//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::detect::{sequential_detect, Calibration};
use crate::error::{Error, Result};
use crate::harness::config::Scenario;
use crate::harness::metrics::{nll_series, oracle_metrics, NllPoint};
use crate::harness::sim::{calibrate_scenario, detect_windows, detector_with, run_scenario_with, verify_recursion, RunOptions};
use crate::harness::trace_io::{export_trace, import_trace};

#[derive(Debug, Parser)]
#[command(name = "dynwm", version, about = "Dynamic watermarking simulation and detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write trace, report and NLL series to a run directory.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to `$DYNWM_OUT_DIR/<name>-<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "DYNWM_OUT_DIR", default_value = "runs", hide_env_values = true)]
        out_root: PathBuf,
    },
    /// Print calibrated thresholds for a scenario's detector.
    Calibrate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        ncal: Option<usize>,
    },
    /// Re-run the detector over a recorded trace.
    Detect {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Print the run report and NLL series for a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Check a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

/// Parses `args` and executes; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{out}");
            0
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}

/// Single-line JSON error record.
pub fn error_line(e: &Error) -> String {
    let mut v = json!({ "error": e.code(), "message": e.to_string() });
    if let Error::Validation(issues) = e {
        v["issues"] = serde_json::to_value(&issues.issues).expect("issues serialize");
    }
    v.to_string()
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialize")
}

fn execute(cmd: Command) -> Result<String> {
    match cmd {
        Command::Validate { scenario } => {
            let s = Scenario::from_path(&scenario)?;
            Ok(json!({
                "valid": true,
                "name": s.name(),
                "class": s.plant.class_name(),
                "horizon": s.horizon(),
            })
            .to_string())
        }
        Command::Calibrate { scenario, alpha, ncal } => {
            let mut s = Scenario::from_path(&scenario)?;
            let det = s
                .detector
                .as_mut()
                .ok_or_else(|| Error::InvalidParameter("the scenario's detector is disabled".into()))?;
            if let Some(a) = alpha {
                det.alpha = a;
            }
            if let Some(n) = ncal {
                det.n_cal = n;
            }
            let setup = calibrate_scenario(&s)?.expect("detector enabled");
            Ok(to_json(&setup.calibration))
        }
        Command::Run {
            scenario,
            seed,
            out,
            out_root,
        } => run(&scenario, seed, out, &out_root),
        Command::Detect { trace, scenario } => {
            let s = Scenario::from_path(&scenario)?;
            let tr = import_trace(&trace)?;
            verify_recursion(&tr, &s)?;
            let setup = calibrate_scenario(&s)?
                .ok_or_else(|| Error::InvalidParameter("the scenario's detector is disabled".into()))?;
            let windows = detect_windows(&s, &setup, &tr.z, &tr.u_g, &tr.e_raw)?;
            let tests: Vec<_> = setup
                .calibration
                .tests
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let stream: Vec<(usize, f64)> = windows.iter().map(|w| (w.end_t, w.values[i])).collect();
                    json!({ "name": t.name, "threshold": t.threshold, "log": sequential_detect(&stream, &t.threshold) })
                })
                .collect();
            Ok(to_json(&json!({
                "windows": windows.len(),
                "first_alarm": windows.iter().find(|w| w.alarm).map(|w| w.end_t),
                "tests": tests,
            })))
        }
        Command::Report { run } => report(&run),
    }
}

fn run(scenario_path: &Path, seed: Option<u64>, out: Option<PathBuf>, out_root: &Path) -> Result<String> {
    let s = Scenario::from_path(scenario_path)?;
    let seed = seed.unwrap_or(s.seed());
    let mut file = s.file.clone();
    file.seed = seed;
    let s = Scenario { file, ..s };
    let out = out.unwrap_or_else(|| out_root.join(format!("{}-{seed}", s.name())));

    let setup = calibrate_scenario(&s)?;
    let trace = run_scenario_with(
        &s,
        seed,
        RunOptions {
            detector: setup.as_ref(),
            skip_detection: setup.is_none(),
            ..RunOptions::default()
        },
    )?;
    let calibration = setup.map(|d| d.calibration);
    let report = oracle_metrics(&trace, &s, calibration.as_ref())?;
    let nll = calibration.as_ref().map(|c| nll_series(&trace, c)).unwrap_or_default();

    // Build the run directory beside its destination, then move it into place.
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let staging = tempfile::Builder::new().prefix(".dynwm-run-").tempdir_in(parent)?;
    let dir = staging.path();
    fs::write(dir.join("scenario.toml"), s.to_toml())?;
    export_trace(&trace, &dir.join("trace.csv"))?;
    fs::write(dir.join("report.json"), to_json(&report))?;
    if let Some(c) = &calibration {
        fs::write(dir.join("calibration.json"), to_json(c))?;
    }
    write_nll_csv(&dir.join("nll_series.csv"), &nll)?;
    if out.exists() {
        fs::remove_dir_all(&out)?;
    }
    fs::rename(staging.keep(), &out)?;
    log::info!("wrote run to {}", out.display());
    Ok(json!({
        "run_dir": out.display().to_string(),
        "first_alarm": report.first_alarm,
        "delay": report.delay,
    })
    .to_string())
}

fn write_nll_csv(path: &Path, series: &[NllPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::TraceFormat(e.to_string()))?;
    w.write_record(["window_end_t", "nll", "threshold"])
        .map_err(|e| Error::TraceFormat(e.to_string()))?;
    for p in series {
        w.write_record([p.window_end_t.to_string(), p.nll.to_string(), p.threshold.to_string()])
            .map_err(|e| Error::TraceFormat(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn report(run: &Path) -> Result<String> {
    let s = Scenario::from_path(&run.join("scenario.toml"))?;
    let trace = import_trace(&run.join("trace.csv"))?;
    verify_recursion(&trace, &s)?;
    let cal_path = run.join("calibration.json");
    let calibration: Option<Calibration> = if cal_path.exists() {
        let text = fs::read_to_string(&cal_path)?;
        Some(serde_json::from_str(&text).map_err(|e| Error::TraceFormat(format!("calibration.json: {e}")))?)
    } else {
        None
    };
    if let Some(c) = &calibration {
        // The stored thresholds must reproduce the stored window decisions.
        let setup = detector_with(&s, c.clone())?;
        let windows = detect_windows(&s, &setup, &trace.z, &trace.u_g, &trace.e_raw)?;
        if windows.iter().map(|w| w.alarm).ne(trace.windows.iter().map(|w| w.alarm)) {
            return Err(Error::TraceFormat("recorded alarms disagree with the stored calibration".into()));
        }
    }
    let report = oracle_metrics(&trace, &s, calibration.as_ref())?;
    let nll = calibration.as_ref().map(|c| nll_series(&trace, c)).unwrap_or_default();
    Ok(to_json(&json!({ "report": report, "nll_series": nll })))
}
