//! CSV writers. Classes are 1-based in every file; floats are written with
//! 17 significant digits so a file round-trips exactly.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::diffusion::SdePath;
use crate::engine::EventTrace;
use crate::harness::fmt_f64;

fn class_columns(out: &mut String, prefix: &str, classes: usize) {
    for i in 1..=classes {
        write!(out, ",{prefix}_{i}").unwrap();
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// `t,event_kind,class,j,Q_1..Q_N,Psi_1..Psi_N,busy`, one row per event.
pub fn trace_csv(trace: &EventTrace) -> String {
    let dim = trace.num_classes;
    let mut out = String::from("t,event_kind,class,j");
    class_columns(&mut out, "Q", dim);
    class_columns(&mut out, "Psi", dim);
    out.push_str(",busy\n");
    for (k, row) in trace.rows.iter().enumerate() {
        write!(out, "{},{},{},{}", fmt_f64(row.t), row.kind.label(), opt(row.class.map(|c| c + 1)), opt(row.j)).unwrap();
        let state = trace.state(k);
        for c in state {
            write!(out, ",{}", c.queue).unwrap();
        }
        for c in state {
            write!(out, ",{}", c.in_service).unwrap();
        }
        writeln!(out, ",{}", trace.busy(k)).unwrap();
    }
    out
}

/// `i,j,AT,q_observed,action,RT,WT,post_horizon`, ordered by class then `j`.
/// `RT` and `WT` are empty for customers who left.
pub fn customers_csv(trace: &EventTrace) -> String {
    let mut out = String::from("i,j,AT,q_observed,action,RT,WT,post_horizon\n");
    for c in trace.all_customers() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.class + 1,
            c.j,
            fmt_f64(c.arrival),
            c.observed_queue,
            c.action,
            opt(c.routed.map(fmt_f64)),
            opt(c.wait().map(fmt_f64)),
            c.post_horizon
        )
        .unwrap();
    }
    out
}

/// `path_id,t,X_1..X_N,L,Q_1..Q_N`, every `stride`-th grid point.
pub fn sde_csv(paths: &[SdePath], stride: usize) -> String {
    let dim = paths.first().map_or(0, |p| p.x.dim());
    let mut out = String::from("path_id,t");
    class_columns(&mut out, "X", dim);
    out.push_str(",L");
    class_columns(&mut out, "Q", dim);
    out.push('\n');
    for (id, p) in paths.iter().enumerate() {
        let last = p.x.len().saturating_sub(1);
        for k in (0..p.x.len()).filter(|&k| k % stride.max(1) == 0 || k == last) {
            write!(out, "{id},{}", fmt_f64(p.x.times()[k])).unwrap();
            for v in p.x.point(k) {
                write!(out, ",{}", fmt_f64(*v)).unwrap();
            }
            write!(out, ",{}", fmt_f64(p.l[k])).unwrap();
            for v in p.q.point(k) {
                write!(out, ",{}", fmt_f64(*v)).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// `source,t,sample,X_1..X_N` for marginal samples, `samples[time][draw][coord]`.
pub fn marginals_csv(source: &str, times: &[f64], samples: &[Vec<Vec<f64>>]) -> String {
    let dim = samples.iter().flatten().next().map_or(0, Vec::len);
    let mut out = String::from("source,t,sample");
    class_columns(&mut out, "X", dim);
    out.push('\n');
    for (t, draws) in times.iter().zip(samples) {
        for (s, x) in draws.iter().enumerate() {
            write!(out, "{source},{},{s}", fmt_f64(*t)).unwrap();
            for v in x {
                write!(out, ",{}", fmt_f64(*v)).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Writes to a sibling temporary file and renames it into place, so readers
/// never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}
