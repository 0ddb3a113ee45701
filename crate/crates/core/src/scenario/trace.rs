//! CSV trace and JSON summary. The CSV holds only quantities that are
//! deterministic given the config and seed; wall-clock timings go to the
//! summary.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::pipeline::SafetyFlags;
use crate::scenario::plot;
use crate::scenario::run::{PreparedScenario, RunSummary, Trace};
use crate::synthesis::ObserverCertificate;

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CERTIFICATE_FILE: &str = "certificate.json";

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

fn safe(flags: &SafetyFlags) -> String {
    flag(flags.all_safe())
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Column names, fixed by the model dimensions and the observer set.
pub fn header(trace: &Trace) -> Vec<String> {
    let mut cols = vec!["t".to_string(), "time".to_string()];
    cols.extend(trace.state_names.iter().map(|s| format!("x_{s}")));
    cols.extend(trace.output_names.iter().map(|s| format!("y_{s}")));
    let m = trace.u.first().map_or(0, |u| u.len());
    cols.extend((0..m).map(|j| format!("u{j}")));
    cols.push("lead".into());
    cols.push("warmup".into());
    for obs in &trace.observers {
        let pre = obs.method.label();
        let first = obs.steps.first();
        for j in 0..first.map_or(0, |s| s.f_box.dim()) {
            cols.push(format!("{pre}_f{j}_lo"));
            cols.push(format!("{pre}_f{j}_hi"));
        }
        for k in 0..first.map_or(0, |s| s.g_box.dim()) {
            cols.push(format!("{pre}_g{k}_lo"));
            cols.push(format!("{pre}_g{k}_hi"));
        }
        for s in &trace.state_names {
            cols.push(format!("{pre}_{s}_lo"));
            cols.push(format!("{pre}_{s}_hi"));
        }
        for s in &trace.output_names {
            cols.push(format!("{pre}_pred_{s}_lo"));
            cols.push(format!("{pre}_pred_{s}_hi"));
        }
        cols.push(format!("{pre}_inside"));
        cols.push(format!("{pre}_state_safe"));
        cols.push(format!("{pre}_pred_state_safe"));
        cols.push(format!("{pre}_pred_output_safe"));
        cols.push(format!("{pre}_act_alarm"));
        for name in &trace.yo_names {
            cols.push(format!("{pre}_out_alarm_{name}"));
        }
        cols.push(format!("{pre}_nodes"));
        cols.push(format!("{pre}_budget_hit"));
        cols.push(format!("{pre}_decrement"));
    }
    cols
}

pub fn rows(trace: &Trace) -> Vec<Vec<String>> {
    (0..trace.horizon())
        .map(|t| {
            let mut row = vec![t.to_string(), num(t as f64 * trace.t_s)];
            row.extend(trace.x[t].iter().copied().map(num));
            row.extend(trace.y[t].iter().copied().map(num));
            row.extend(trace.u[t].iter().copied().map(num));
            row.push(num(trace.lead[t]));
            row.push(flag(t == 0));
            for obs in &trace.observers {
                let s = &obs.steps[t];
                for bx in [&s.f_box, &s.g_box, &s.state_box, &s.predicted_output] {
                    for i in 0..bx.dim() {
                        let (lo, hi) = bx.component(i);
                        row.push(num(lo));
                        row.push(num(hi));
                    }
                }
                row.push(flag(obs.inside[t]));
                row.push(safe(&s.state_safety));
                row.push(safe(&s.predicted_state_safety));
                row.push(safe(&s.predicted_output_safety));
                row.push(flag(s.any_actuator_alarm()));
                for i in 0..trace.yo_names.len() {
                    row.push(flag(s.output_alarm.as_ref().is_some_and(|a| a[i])));
                }
                row.push(s.nn_nodes.to_string());
                row.push(flag(s.budget_exhausted));
                row.push(num(obs.decrements[t]));
            }
            row
        })
        .collect()
}

pub fn csv_string(trace: &Trace) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(trace))?;
    for row in rows(trace) {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::error::Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV fields are ASCII"))
}

/// Writes trace, summary, certificate and (optionally) plots into `dir`.
pub fn write_outputs(
    dir: &Path,
    prepared: &PreparedScenario,
    trace: &Trace,
    summary: &RunSummary,
    cert: &ObserverCertificate,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut write = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, contents)?;
        files.push(path);
        Ok(())
    };
    write(TRACE_FILE, csv_string(trace)?)?;
    write(SUMMARY_FILE, serde_json::to_string_pretty(summary)?)?;
    write(CERTIFICATE_FILE, cert.to_json()?)?;
    if prepared.config.output.plots {
        for (name, svg) in plot::scenario_plots(prepared, trace) {
            write(&name, svg)?;
        }
    }
    Ok(files)
}
