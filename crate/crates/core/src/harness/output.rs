use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use super::trial::{ExperimentSummary, RunTrace, TraceRow};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "iter,t,rel_err,j_dm,j_tp,cov_frob";

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// A trace as CSV with LF line endings.
pub fn trace_csv(trace: &RunTrace) -> String {
    let mut s = String::with_capacity(96 * (trace.rows.len() + 1));
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for r in &trace.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.iter,
            format_float(r.t),
            format_float(r.rel_err),
            format_float(r.j_dm),
            format_float(r.j_tp),
            format_float(r.cov_frob)
        );
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub q10: f64,
    pub q90: f64,
}

/// Across-trial summary of one iteration. Only trials that reached the
/// iteration without diverging contribute.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub iter: usize,
    pub t: f64,
    pub active: usize,
    pub rel_err: MetricSummary,
    pub j_dm: MetricSummary,
    pub j_tp: MetricSummary,
    pub cov_frob: MetricSummary,
}

/// Quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(values: &mut [f64]) -> MetricSummary {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.sort_by(f64::total_cmp);
    let (q10, q90) = if values.len() == 1 {
        (values[0], values[0])
    } else {
        (quantile(values, 0.1), quantile(values, 0.9))
    };
    MetricSummary { mean, q10, q90 }
}

pub fn aggregate(traces: &[RunTrace]) -> Vec<AggregateRow> {
    let len = traces.iter().map(|t| t.rows.len()).max().unwrap_or(0);
    (0..len)
        .filter_map(|i| {
            let rows: Vec<&TraceRow> = traces.iter().filter_map(|t| t.rows.get(i)).collect();
            let first = *rows.first()?;
            let col = |f: fn(&TraceRow) -> f64| summarize(&mut rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            Some(AggregateRow {
                iter: first.iter,
                t: first.t,
                active: rows.len(),
                rel_err: col(|r| r.rel_err),
                j_dm: col(|r| r.j_dm),
                j_tp: col(|r| r.j_tp),
                cov_frob: col(|r| r.cov_frob),
            })
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("iter,t,active");
    for m in ["rel_err", "j_dm", "j_tp", "cov_frob"] {
        let _ = write!(s, ",{m}_mean,{m}_q10,{m}_q90");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{},{}", r.iter, format_float(r.t), r.active);
        for m in [&r.rel_err, &r.j_dm, &r.j_tp, &r.cov_frob] {
            let _ = write!(s, ",{},{},{}", format_float(m.mean), format_float(m.q10), format_float(m.q90));
        }
        s.push('\n');
    }
    s
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `trial_<k>.csv` for every trial, `aggregate.csv`, and finally
/// `manifest.json`, whose presence marks a complete experiment.
pub fn write_experiment(summary: &ExperimentSummary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut trials = Vec::new();
    for t in &summary.traces {
        let file = format!("trial_{}.csv", t.trial);
        write(&dir.join(&file), &trace_csv(t))?;
        trials.push(json!({
            "trial": t.trial,
            "seed": t.seed,
            "file": file,
            "rows": t.rows.len(),
            "diverged_at": t.diverged_at(),
            "divergence_reason": t.divergence.as_ref().map(|d| d.reason.clone()),
        }));
    }
    write(&dir.join("aggregate.csv"), &aggregate_csv(&summary.aggregate))?;
    let manifest = json!({
        "library": "enkopt",
        "version": env!("CARGO_PKG_VERSION"),
        "config": summary.config,
        "trials": trials,
        "diverged_trials": summary.diverged_trials,
        "wall_clock_secs": summary.wall_clock_secs,
    });
    write(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
}

/// Reads an ensemble stored as a JSON list of members.
pub fn read_initial_ensemble(path: &Path) -> Result<Ensemble> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let members: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let d = members.first().map(Vec::len).unwrap_or(0);
    if d == 0 || members.iter().any(|m| m.len() != d) {
        return Err(Error::Config(format!("{}: members must be non-empty and of equal length", path.display())));
    }
    let cols: Vec<f64> = members.concat();
    Ensemble::new(DMatrix::from_column_slice(d, members.len(), &cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::trial::{DivergenceInfo, TraceRow};
    use proptest::prelude::*;

    fn row(iter: usize, v: f64) -> TraceRow {
        TraceRow {
            iter,
            t: iter as f64 * 0.5,
            rel_err: v,
            j_dm: 2.0 * v,
            j_tp: 3.0 * v,
            cov_frob: v,
        }
    }

    fn trace(trial: usize, vals: &[f64], diverged: Option<usize>) -> RunTrace {
        RunTrace {
            trial,
            seed: trial as u64,
            rows: vals.iter().enumerate().map(|(i, &v)| row(i, v)).collect(),
            divergence: diverged.map(|iter| DivergenceInfo {
                iter,
                reason: "test".into(),
            }),
        }
    }

    #[test]
    fn diverged_rows_are_excluded() {
        let traces = [trace(0, &[1.0, 2.0, 3.0], None), trace(1, &[5.0], Some(1)), trace(2, &[0.0, 4.0, 5.0], None)];
        let agg = aggregate(&traces);
        assert_eq!(agg.len(), 3);
        assert_eq!(agg[0].active, 3);
        assert_eq!(agg[1].active, 2);
        assert_eq!(agg[1].rel_err.mean, 3.0);
        assert!((agg[2].rel_err.q10 - 3.2).abs() < 1e-12);
        assert!((agg[2].rel_err.q90 - 4.8).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let csv = trace_csv(&trace(0, &[0.25, 1e-300], None));
        let lines: Vec<&str> = csv.split('\n').collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines[1], "0,0.0000000000000000e0,2.5000000000000000e-1,5.0000000000000000e-1,7.5000000000000000e-1,2.5000000000000000e-1");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[3], "");
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = crate::harness::ExperimentConfig::new(crate::ProblemSpec::Elliptic2d, "eki".parse().unwrap(), 0.1, 4);
        cfg.n_trials = 2;
        cfg.output_dir = Some(dir.path().join("out"));
        let s = crate::harness::run_experiment(&cfg).unwrap();
        let out = dir.path().join("out");
        for f in ["trial_0.csv", "trial_1.csv", "aggregate.csv", "manifest.json"] {
            assert!(out.join(f).is_file(), "{f}");
        }
        let text = fs::read_to_string(out.join("trial_1.csv")).unwrap();
        assert_eq!(text, trace_csv(&s.traces[1]));
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["config"]["method"], "eki");
        assert_eq!(manifest["trials"][1]["seed"], s.traces[1].seed);
        assert_eq!(manifest["diverged_trials"], 0);
        let agg = fs::read_to_string(out.join("aggregate.csv")).unwrap();
        assert_eq!(agg.lines().count(), 6);
    }

    #[test]
    fn io_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let mut cfg = crate::harness::ExperimentConfig::new(crate::ProblemSpec::Elliptic2d, "eki".parse().unwrap(), 0.1, 1);
        cfg.n_trials = 1;
        cfg.output_dir = Some(blocker.join("sub"));
        let err = crate::harness::run_experiment(&cfg).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("file"));
    }

    #[test]
    fn initial_ensemble_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.json");
        fs::write(&path, "[[1.0, 2.0], [3.0, 4.0], [5.0, 6.5]]").unwrap();
        let e = read_initial_ensemble(&path).unwrap();
        assert_eq!((e.dim(), e.n_members()), (2, 3));
        assert_eq!(e.member(2).as_slice(), &[5.0, 6.5]);
        fs::write(&path, "[[1.0, 2.0], [3.0]]").unwrap();
        assert!(read_initial_ensemble(&path).is_err());

        let mut cfg = crate::harness::ExperimentConfig::new(crate::ProblemSpec::Elliptic2d, "eki".parse().unwrap(), 0.1, 3);
        fs::write(&path, "[[-2.0, 100.0], [-2.5, 104.0], [-3.0, 102.0], [-2.2, 99.0]]").unwrap();
        cfg.initial_ensemble = Some(path);
        cfg.n_members = 4;
        cfg.n_trials = 2;
        let s = crate::harness::run_experiment(&cfg).unwrap();
        assert_eq!(s.traces[0].rows[0], s.traces[1].rows[0]);
    }

    proptest! {
        #[test]
        fn floats_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
            prop_assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
        }
    }
}
