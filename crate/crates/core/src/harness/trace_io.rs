//! CSV trace files: one row per step, fixed header, shortest round-trip
//! decimal floats.
//!
//! Columns: `t`, `x0..`, `y0..`, `z0..`, `u0..`, `u_g0..`, `e_raw0..`,
//! `e_shaped0..`, `w0..`, `n`, `window_id`, then `stat:<test>` and
//! `alarm:<test>` per test, then `alarm`. Window columns are filled only on
//! the last row of an evaluated window.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::detect::WindowRecord;
use crate::error::{Error, Result};
use crate::harness::sim::Trace;
use crate::signal::Signal;

const GROUPS: [&str; 8] = ["x", "y", "z", "u", "u_g", "e_raw", "e_shaped", "w"];

fn groups(trace: &Trace) -> [&Signal; 8] {
    [
        &trace.x,
        &trace.y,
        &trace.z,
        &trace.u,
        &trace.u_g,
        &trace.e_raw,
        &trace.e_shaped,
        &trace.w,
    ]
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::TraceFormat(format!("{other:?}")),
    }
}

pub fn header(trace: &Trace) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for (name, sig) in GROUPS.iter().zip(groups(trace)) {
        h.extend((0..sig.dim()).map(|i| format!("{name}{i}")));
    }
    h.push("n".into());
    h.push("window_id".into());
    for name in &trace.test_names {
        h.push(format!("stat:{name}"));
        h.push(format!("alarm:{name}"));
    }
    h.push("alarm".into());
    h
}

pub fn write_trace<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(trace)).map_err(csv_err)?;
    let window_len = trace.windows.first().map(|r| r.end_t + 1 - r.start_t);
    let mut windows = trace.windows.iter().peekable();
    let mut row = Vec::new();
    for t in 0..trace.len() {
        row.clear();
        row.push(t.to_string());
        for sig in groups(trace) {
            row.extend(sig.row(t).iter().map(f64::to_string));
        }
        row.push(trace.n.at(t as i64, 0).to_string());
        row.push(window_len.map_or(String::new(), |l| (t / l).to_string()));
        match windows.next_if(|r| r.end_t == t) {
            Some(rec) => {
                for (v, a) in rec.values.iter().zip(&rec.alarms) {
                    row.push(v.to_string());
                    row.push(u8::from(*a).to_string());
                }
                row.push(u8::from(rec.alarm).to_string());
            }
            None => row.extend(std::iter::repeat_n(String::new(), 2 * trace.test_names.len() + 1)),
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_trace(trace: &Trace, path: &Path) -> Result<()> {
    write_trace(trace, BufWriter::new(File::create(path)?))
}

fn parse_f64(s: &str, t: usize) -> Result<f64> {
    s.parse().map_err(|_| Error::TraceFormat(format!("bad number {s:?} at t={t}")))
}

fn parse_flag(s: &str, t: usize) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::TraceFormat(format!("bad alarm flag {s:?} at t={t}"))),
    }
}

pub fn read_trace<R: Read>(input: R) -> Result<Trace> {
    let mut r = csv::Reader::from_reader(input);
    let head: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if head.first().map(String::as_str) != Some("t") {
        return Err(Error::TraceFormat("first column must be t".into()));
    }
    // Count each group's components from the fixed column order.
    let mut pos = 1;
    let mut dims = [0usize; 8];
    for (g, name) in GROUPS.iter().enumerate() {
        while head.get(pos).is_some_and(|h| h.strip_prefix(name).is_some_and(|i| i == dims[g].to_string())) {
            dims[g] += 1;
            pos += 1;
        }
    }
    if head.get(pos).map(String::as_str) != Some("n") || head.get(pos + 1).map(String::as_str) != Some("window_id") {
        return Err(Error::TraceFormat(format!("unexpected column layout near column {pos}")));
    }
    let stats_at = pos + 2;
    let mut test_names = Vec::new();
    let mut c = stats_at;
    while let Some(name) = head.get(c).and_then(|h| h.strip_prefix("stat:")) {
        if head.get(c + 1).map(String::as_str) != Some(&format!("alarm:{name}")) {
            return Err(Error::TraceFormat(format!("missing alarm column for {name}")));
        }
        test_names.push(name.to_string());
        c += 2;
    }
    if head.get(c).map(String::as_str) != Some("alarm") || head.len() != c + 1 {
        return Err(Error::TraceFormat("trailing alarm column missing".into()));
    }

    let mut trace = Trace::with_dims(dims[0], dims[1], dims[3], dims[7], 0);
    trace.z = Signal::new(dims[2]);
    trace.test_names = test_names;
    let mut buf = Vec::new();
    for (t, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != head.len() {
            return Err(Error::TraceFormat(format!("row for t={t} has {} fields", rec.len())));
        }
        if rec[0] != *t.to_string() {
            return Err(Error::TraceFormat(format!("rows out of order at t={t}")));
        }
        let mut col = 1;
        let sigs = [
            &mut trace.x,
            &mut trace.y,
            &mut trace.z,
            &mut trace.u,
            &mut trace.u_g,
            &mut trace.e_raw,
            &mut trace.e_shaped,
            &mut trace.w,
        ];
        for (sig, dim) in sigs.into_iter().zip(dims) {
            buf.clear();
            for k in 0..dim {
                buf.push(parse_f64(&rec[col + k], t)?);
            }
            sig.push(&buf);
            col += dim;
        }
        trace.n.push(&[parse_f64(&rec[col], t)?]);
        let alarm = &rec[c];
        if !alarm.is_empty() {
            let window_id: usize = rec[col + 1]
                .parse()
                .map_err(|_| Error::TraceFormat(format!("bad window id at t={t}")))?;
            let mut values = Vec::with_capacity(trace.test_names.len());
            let mut alarms = Vec::with_capacity(trace.test_names.len());
            for k in 0..trace.test_names.len() {
                values.push(parse_f64(&rec[stats_at + 2 * k], t)?);
                alarms.push(parse_flag(&rec[stats_at + 2 * k + 1], t)?);
            }
            let l = (t + 1) / (window_id + 1);
            trace.windows.push(WindowRecord {
                window_id,
                start_t: t + 1 - l,
                end_t: t,
                values,
                alarms,
                alarm: parse_flag(alarm, t)?,
            });
        }
    }
    Ok(trace)
}

pub fn import_trace(path: &Path) -> Result<Trace> {
    read_trace(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Scenario;
    use crate::harness::sim::run_scenario;

    const SCALAR: &str = r#"
schema_version = 1
horizon = 100
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
[detector]
window = 20
alpha = 0.05
tests = ["test1", "test2", "cross_corr"]
n_cal = 400
"#;

    #[test]
    fn roundtrip_is_bit_exact() {
        let s = Scenario::from_toml_str(SCALAR).unwrap();
        let tr = run_scenario(&s, 11).unwrap();
        let mut bytes = Vec::new();
        write_trace(&tr, &mut bytes).unwrap();
        let back = read_trace(bytes.as_slice()).unwrap();
        assert_eq!(tr, back);
    }

    #[test]
    fn empty_trace_is_header_only() {
        let s = Scenario::from_toml_str(SCALAR).unwrap();
        let tr = Trace::empty(&s.plant);
        let mut bytes = Vec::new();
        write_trace(&tr, &mut bytes).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text, "t,x0,y0,z0,u0,u_g0,e_raw0,e_shaped0,w0,n,window_id,alarm\n");
        assert_eq!(read_trace(text.as_bytes()).unwrap(), tr);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(read_trace("a,b\n1,2\n".as_bytes()).is_err());
        let bad = "t,x0,y0,z0,u0,u_g0,e_raw0,e_shaped0,w0,n,window_id,alarm\n0,1,1,1,0,0,0,0,zero,0,,\n";
        assert!(matches!(read_trace(bad.as_bytes()), Err(Error::TraceFormat(_))));
    }
}
