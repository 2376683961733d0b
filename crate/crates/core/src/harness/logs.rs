//! Episode files: the 20 ms log, an optional 1 ms slave trace and a
//! one-row summary with the task verdict.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset_io::{read_stamped, DatasetIoError, Table};
use crate::executor::{AutonomousLog, StateVec, TickRow};
use crate::joint::STATE_DIM;
use crate::metrics::SuccessReport;
use crate::model::Scheme;
use crate::provenance::Provenance;

use super::config::Cell;

const CHANNELS: [&str; STATE_DIM] = [
    "theta1", "theta2", "theta3", "dtheta1", "dtheta2", "dtheta3", "tau1", "tau2", "tau3",
];
const GROUPS: [&str; 4] = ["s_res", "s_hat", "m_hat", "cmd"];

pub fn log_columns() -> Vec<String> {
    let mut cols = vec!["t_ms".to_string()];
    for g in GROUPS {
        cols.extend(CHANNELS.iter().map(|c| format!("{g}_{c}")));
    }
    cols.extend(["mode", "scheme", "k", "height_mm"].map(String::from));
    cols
}

fn push_vec(out: &mut String, v: Option<&StateVec>) {
    for i in 0..STATE_DIM {
        match v {
            Some(v) => write!(out, ",{}", v[i]).unwrap(),
            None => out.push(','),
        }
    }
}

pub fn render_log(log: &AutonomousLog, cell: &Cell, prov: &Provenance) -> String {
    let mut out = format!("{prov}\n{}\n", log_columns().join(","));
    for r in &log.rows {
        write!(out, "{}", r.t_ms).unwrap();
        push_vec(&mut out, Some(&r.s_res));
        push_vec(&mut out, r.s_hat.as_ref());
        push_vec(&mut out, r.m_hat.as_ref());
        push_vec(&mut out, Some(&r.command));
        writeln!(out, ",{},{},{},{}", cell.mode, cell.model.scheme, cell.model.k, cell.height_mm).unwrap();
    }
    out
}

pub fn render_trace(log: &AutonomousLog, prov: &Provenance) -> String {
    let mut out = format!("{prov}\nt_ms,{},contact_normal,paper_height_mm\n", CHANNELS.join(","));
    for (i, s) in log.trace.iter().enumerate() {
        write!(out, "{i}").unwrap();
        for v in s.slave.to_array() {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out, ",{},{}", s.contact_normal, s.paper_height * 1000.0).unwrap();
    }
    out
}

/// Parsed 20 ms log of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedLog {
    pub provenance: Option<Provenance>,
    pub rows: Vec<TickRow>,
}

pub fn load_log(path: &Path) -> Result<LoadedLog, DatasetIoError> {
    let (provenance, body, first) = read_stamped(path)?;
    let names = log_columns();
    let cols: Vec<&str> = names.iter().map(String::as_str).collect();
    let table = Table { path, columns: &cols };
    let mut rows = Vec::new();
    for (ln, f) in table.rows(&body, first)? {
        let t_ms = f[0]
            .parse()
            .map_err(|_| table.err(ln, "t_ms", format!("not an integer: `{}`", f[0])))?;
        let group = |g: usize| -> Result<Option<StateVec>, DatasetIoError> {
            let offset = 1 + g * STATE_DIM;
            if f[offset..offset + STATE_DIM].iter().all(|s| s.is_empty()) {
                Ok(None)
            } else {
                table.values(ln, &f, offset).map(Some)
            }
        };
        let required = |g: usize| {
            group(g)?.ok_or_else(|| table.err(ln, cols[1 + g * STATE_DIM], "empty value"))
        };
        rows.push(TickRow {
            t_ms,
            s_res: required(0)?,
            s_hat: group(1)?,
            m_hat: group(2)?,
            command: required(3)?,
        });
    }
    Ok(LoadedLog { provenance, rows })
}

pub const SUMMARY_COLUMNS: [&str; 9] = [
    "scheme", "k", "mode", "height_mm", "to_mm", "success", "force_duty", "diverged", "reason",
];

/// Verdict of one episode as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub provenance: Option<Provenance>,
    pub scheme: Scheme,
    pub k: usize,
    pub mode: String,
    pub height_mm: f64,
    pub to_mm: Option<f64>,
    pub success: bool,
    pub force_duty: f64,
    pub diverged: bool,
    pub reason: String,
}

pub fn render_summary(cell: &Cell, log: &AutonomousLog, verdict: &SuccessReport, prov: &Provenance) -> String {
    let to = cell.perturbation.map(|p| p.to_mm.to_string()).unwrap_or_default();
    let reason = verdict.reason.as_deref().unwrap_or("").replace(',', ";");
    format!(
        "{prov}\n{}\n{},{},{},{},{},{},{},{},{}\n",
        SUMMARY_COLUMNS.join(","),
        cell.model.scheme,
        cell.model.k,
        cell.mode,
        cell.height_mm,
        to,
        verdict.success as u8,
        verdict.force_duty,
        log.divergence.is_some() as u8,
        reason
    )
}

pub fn load_summary(path: &Path) -> Result<EpisodeSummary, DatasetIoError> {
    let (provenance, body, first) = read_stamped(path)?;
    let table = Table { path, columns: &SUMMARY_COLUMNS };
    let rows = table.rows(&body, first)?;
    let [(ln, f)] = rows.as_slice() else {
        return Err(table.err(first, "scheme", format!("expected one row, found {}", rows.len())));
    };
    let ln = *ln;
    let flag = |i: usize| match f[i] {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(table.err(ln, SUMMARY_COLUMNS[i], format!("not 0/1: `{other}`"))),
    };
    Ok(EpisodeSummary {
        provenance,
        scheme: f[0].parse().map_err(|e: String| table.err(ln, "scheme", e))?,
        k: f[1].parse().map_err(|_| table.err(ln, "k", "not an integer"))?,
        mode: f[2].to_string(),
        height_mm: table.float(ln, 3, f[3])?,
        to_mm: if f[4].is_empty() { None } else { Some(table.float(ln, 4, f[4])?) },
        success: flag(5)?,
        force_duty: table.float(ln, 6, f[6])?,
        diverged: flag(7)?,
        reason: f[8].to_string(),
    })
}
