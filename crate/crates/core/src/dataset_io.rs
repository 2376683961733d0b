//! Dataset CSV and its `*.stats.csv` sidecar.
//!
//! Each 20 ms sample of a trial is two rows, master first:
//!
//! ```text
//! trial,height_mm,t_ms,role,theta1,theta2,theta3,dtheta1,dtheta2,dtheta3,tau1,tau2,tau3
//! ```
//!
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! lossless. An optional provenance stamp may precede the header.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::joint::STATE_DIM;
use crate::provenance::Provenance;
use crate::teleop::{build_dataset, Dataset, NormStats, TeleopError, TrialRecord};

pub const DATASET_COLUMNS: [&str; 13] = [
    "trial", "height_mm", "t_ms", "role", "theta1", "theta2", "theta3", "dtheta1", "dtheta2",
    "dtheta3", "tau1", "tau2", "tau3",
];

pub const STATS_COLUMNS: [&str; 11] = [
    "role", "stat", "theta1", "theta2", "theta3", "dtheta1", "dtheta2", "dtheta3", "tau1", "tau2",
    "tau3",
];

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: column `{column}`: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        column: String,
        message: String,
    },
    #[error(transparent)]
    Dataset(#[from] TeleopError),
}

/// Sidecar path: `data/foo.csv` → `data/foo.stats.csv`.
pub fn stats_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    path.with_file_name(format!("{stem}.stats.csv"))
}

fn push_values(out: &mut String, values: &[f64]) {
    for v in values {
        write!(out, ",{v}").unwrap();
    }
    out.push('\n');
}

pub fn render_dataset(ds: &Dataset, prov: Option<&Provenance>) -> String {
    let mut out = String::new();
    if let Some(p) = prov {
        writeln!(out, "{p}").unwrap();
    }
    writeln!(out, "{}", DATASET_COLUMNS.join(",")).unwrap();
    for trial in &ds.trials {
        for (i, (m, s)) in trial.master.iter().zip(&trial.slave).enumerate() {
            let t_ms = i as u64 * trial.step_ms;
            for (role, row) in [("master", m), ("slave", s)] {
                write!(out, "{},{},{},{}", trial.trial, trial.height_mm, t_ms, role).unwrap();
                push_values(&mut out, row);
            }
        }
    }
    out
}

pub fn render_stats(stats: &NormStats, prov: Option<&Provenance>) -> String {
    let mut out = String::new();
    if let Some(p) = prov {
        writeln!(out, "{p}").unwrap();
    }
    writeln!(out, "{}", STATS_COLUMNS.join(",")).unwrap();
    for (role, stat, values) in [
        ("master", "mean", &stats.master_mean),
        ("master", "std", &stats.master_std),
        ("slave", "mean", &stats.slave_mean),
        ("slave", "std", &stats.slave_std),
    ] {
        write!(out, "{role},{stat}").unwrap();
        push_values(&mut out, values);
    }
    out
}

pub fn write_file(path: &Path, text: &str) -> Result<(), DatasetIoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| DatasetIoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| DatasetIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_dataset(
    path: &Path,
    ds: &Dataset,
    prov: Option<&Provenance>,
) -> Result<(), DatasetIoError> {
    write_file(path, &render_dataset(ds, prov))?;
    write_file(&stats_path(path), &render_stats(&ds.stats, prov))
}

/// Strict comma-separated table: exact header, fixed column count.
pub struct Table<'a> {
    pub path: &'a Path,
    pub columns: &'a [&'a str],
}

impl Table<'_> {
    pub fn err(&self, line: usize, column: &str, message: impl Into<String>) -> DatasetIoError {
        DatasetIoError::Schema {
            path: self.path.to_path_buf(),
            line,
            column: column.to_string(),
            message: message.into(),
        }
    }

    /// Checks the header and yields `(line_number, fields)` for data rows.
    pub fn rows<'t>(&self, text: &'t str, first_line: usize) -> Result<Vec<(usize, Vec<&'t str>)>, DatasetIoError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + first_line, l));
        let (hline, header) = lines
            .next()
            .ok_or_else(|| self.err(first_line, self.columns[0], "missing header"))?;
        let names: Vec<&str> = header.split(',').map(str::trim).collect();
        for (i, want) in self.columns.iter().enumerate() {
            match names.get(i) {
                Some(got) if got == want => {}
                Some(got) => return Err(self.err(hline, want, format!("header has `{got}`"))),
                None => return Err(self.err(hline, want, "missing from header")),
            }
        }
        if names.len() > self.columns.len() {
            return Err(self.err(hline, names[self.columns.len()], "unexpected extra column"));
        }
        let mut out = Vec::new();
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < self.columns.len() {
                return Err(self.err(ln, self.columns[fields.len()], "missing value"));
            }
            if fields.len() > self.columns.len() {
                return Err(self.err(ln, "<extra>", format!("{} fields, expected {}", fields.len(), self.columns.len())));
            }
            out.push((ln, fields));
        }
        Ok(out)
    }

    pub fn float(&self, line: usize, col: usize, text: &str) -> Result<f64, DatasetIoError> {
        let v: f64 = text
            .parse()
            .map_err(|_| self.err(line, self.columns[col], format!("not a number: `{text}`")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(line, self.columns[col], "non-finite value"))
        }
    }

    pub fn values(&self, line: usize, fields: &[&str], offset: usize) -> Result<[f64; STATE_DIM], DatasetIoError> {
        let mut out = [0.0; STATE_DIM];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = self.float(line, offset + i, fields[offset + i])?;
        }
        Ok(out)
    }
}

/// Reads a file, splitting off its provenance stamp. Also returns the line
/// number of the first line after the stamp.
pub fn read_stamped(path: &Path) -> Result<(Option<Provenance>, String, usize), DatasetIoError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (prov, body) = Provenance::split_header(text.as_bytes()).map_err(|source| DatasetIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let first_line = if prov.is_some() { 2 } else { 1 };
    Ok((prov, body, first_line))
}

pub fn parse_dataset_rows(path: &Path, text: &str, first_line: usize) -> Result<Vec<TrialRecord>, DatasetIoError> {
    let table = Table {
        path,
        columns: &DATASET_COLUMNS,
    };
    let mut trials: Vec<TrialRecord> = Vec::new();
    let mut pending_master: Option<(usize, u64, [f64; STATE_DIM])> = None;
    for (ln, f) in table.rows(text, first_line)? {
        let trial: usize = f[0]
            .parse()
            .map_err(|_| table.err(ln, "trial", format!("not an index: `{}`", f[0])))?;
        let height = table.float(ln, 1, f[1])?;
        let t_ms: u64 = f[2]
            .parse()
            .map_err(|_| table.err(ln, "t_ms", format!("not an integer: `{}`", f[2])))?;
        let values = table.values(ln, &f, 4)?;
        match (f[3], pending_master.take()) {
            ("master", None) => pending_master = Some((trial, t_ms, values)),
            ("slave", Some((mt, mt_ms, master))) if mt == trial && mt_ms == t_ms => {
                let new_trial = trials.last().map_or(true, |t| t.trial != trial);
                if new_trial {
                    if trials.iter().any(|t| t.trial == trial) {
                        return Err(table.err(ln, "trial", format!("trial {trial} is not contiguous")));
                    }
                    trials.push(TrialRecord {
                        trial,
                        height_mm: height,
                        step_ms: 0,
                        slave: Vec::new(),
                        master: Vec::new(),
                    });
                }
                let rec = trials.last_mut().unwrap();
                if rec.height_mm != height {
                    return Err(table.err(ln, "height_mm", "height changes within a trial"));
                }
                match rec.len() {
                    0 if t_ms != 0 => {
                        return Err(table.err(ln, "t_ms", "trial must start at t_ms = 0"))
                    }
                    1 if t_ms == 0 => return Err(table.err(ln, "t_ms", "repeated timestamp")),
                    1 => rec.step_ms = t_ms,
                    n if n > 1 && t_ms != n as u64 * rec.step_ms => {
                        let want = n as u64 * rec.step_ms;
                        return Err(table.err(ln, "t_ms", format!("expected {want}, got {t_ms}")));
                    }
                    _ => {}
                }
                rec.master.push(master);
                rec.slave.push(values);
            }
            ("master" | "slave", _) => {
                return Err(table.err(ln, "role", "rows must alternate master, slave at equal t_ms"))
            }
            (other, _) => return Err(table.err(ln, "role", format!("unknown role `{other}`"))),
        }
    }
    if pending_master.is_some() {
        return Err(table.err(0, "role", "trailing master row without slave"));
    }
    Ok(trials)
}

pub fn parse_stats(path: &Path, text: &str, first_line: usize) -> Result<NormStats, DatasetIoError> {
    let table = Table {
        path,
        columns: &STATS_COLUMNS,
    };
    let mut found: [Option<[f64; STATE_DIM]>; 4] = [None; 4];
    for (ln, f) in table.rows(text, first_line)? {
        let slot = match (f[0], f[1]) {
            ("master", "mean") => 0,
            ("master", "std") => 1,
            ("slave", "mean") => 2,
            ("slave", "std") => 3,
            _ => return Err(table.err(ln, "stat", format!("unknown row `{},{}`", f[0], f[1]))),
        };
        found[slot] = Some(table.values(ln, &f, 2)?);
    }
    let names = ["master,mean", "master,std", "slave,mean", "slave,std"];
    let get = |i: usize| found[i].ok_or_else(|| table.err(0, "stat", format!("missing row `{}`", names[i])));
    Ok(NormStats {
        master_mean: get(0)?,
        master_std: get(1)?,
        slave_mean: get(2)?,
        slave_std: get(3)?,
    })
}

/// Loads a dataset and its sidecar statistics. Returns the provenance stamp
/// of the main file when present.
pub fn load_dataset(path: &Path) -> Result<(Dataset, Option<Provenance>), DatasetIoError> {
    let (prov, body, first) = read_stamped(path)?;
    let trials = parse_dataset_rows(path, &body, first)?;
    let spath = stats_path(path);
    let (_, sbody, sfirst) = read_stamped(&spath)?;
    let stats = parse_stats(&spath, &sbody, sfirst)?;
    if trials.is_empty() {
        return Err(TeleopError::EmptyDataset.into());
    }
    Ok((Dataset { trials, stats }, prov))
}

/// Statistics recomputed from the rows alone.
pub fn recompute_stats(trials: Vec<TrialRecord>) -> Result<NormStats, TeleopError> {
    Ok(build_dataset(trials)?.stats)
}
