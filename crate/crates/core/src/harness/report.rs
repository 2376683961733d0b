//! Aggregates episode files into the success matrix, the variance-ratio
//! table and the amplitude-gap data.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::executor::Mode;
use crate::metrics::{amplitude_stats, paired_rows, prediction_variance, reproducibility_gap, variance_ratios, AmplitudeStats, RatioReport};
use crate::model::{ModelConfig, Scheme};
use crate::teleop::Dataset;

use super::config::{Cell, ExperimentConfig};
use super::logs::{load_log, load_summary, EpisodeSummary, LoadedLog};
use super::pipeline::Context;
use super::HarnessError;

/// Channels whose amplitude reproducibility is reported.
pub const AMPLITUDE_CHANNELS: [(&str, usize); 2] = [("theta1", 0), ("tau1", 6)];

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub cell: Cell,
    pub summary: EpisodeSummary,
    pub log: LoadedLog,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioRow {
    pub model: ModelConfig,
    pub height_mm: f64,
    pub to_mm: Option<f64>,
    /// `None` when a mode is missing or a variance is degenerate.
    pub ratios: Option<RatioReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapRow {
    pub cell: Cell,
    pub channel: &'static str,
    pub train: AmplitudeStats,
    pub auto: AmplitudeStats,
    pub amplitude_gap: f64,
    pub mean_gap: f64,
}

/// Everything the report stage computes.
#[derive(Clone, Debug, PartialEq)]
pub struct Reports {
    pub episodes: Vec<EpisodeResult>,
    pub ratios: Vec<RatioRow>,
    pub gaps: Vec<GapRow>,
    /// Success rate per scheme over the plain (unperturbed) episodes.
    pub success_rate: BTreeMap<Scheme, f64>,
    pub headline: String,
}

impl Reports {
    pub fn episode(&self, model: ModelConfig, mode: Mode, height_mm: f64, to_mm: Option<f64>) -> Option<&EpisodeResult> {
        self.episodes.iter().find(|e| {
            e.cell.model == model
                && e.cell.mode == mode
                && e.cell.height_mm == height_mm
                && e.cell.perturbation.map(|p| p.to_mm) == to_mm
        })
    }

    pub fn ratio(&self, model: ModelConfig, height_mm: f64, to_mm: Option<f64>) -> Option<&RatioReport> {
        self.ratios
            .iter()
            .find(|r| r.model == model && r.height_mm == height_mm && r.to_mm == to_mm)
            .and_then(|r| r.ratios.as_ref())
    }

    /// Relative θ₁ and τ₁ amplitude gaps at one training height,
    /// `Σ_ch |Δamp| / amp_train`, averaged over the modes that ran.
    pub fn amplitude_score(&self, model: ModelConfig, height_mm: f64) -> Option<f64> {
        let rows: Vec<&GapRow> = self
            .gaps
            .iter()
            .filter(|g| g.cell.model == model && g.cell.height_mm == height_mm)
            .collect();
        let modes = Mode::ALL.iter().filter(|m| rows.iter().any(|g| g.cell.mode == **m)).count();
        if modes == 0 {
            return None;
        }
        let total: f64 = rows.iter().map(|g| g.amplitude_gap / g.train.amplitude.max(1e-12)).sum();
        Some(total / modes as f64)
    }
}

fn amplitude_of(rows: &[[f64; 9]], channel: usize, dt: f64, cfg: &ExperimentConfig) -> Option<AmplitudeStats> {
    let signal: Vec<f64> = rows.iter().map(|r| r[channel]).collect();
    amplitude_stats(&signal, dt, cfg.metrics.amplitude_start, cfg.metrics.amplitude_period).ok()
}

/// Training-data statistics at one height: means over the trials there.
pub fn train_amplitude(ds: &Dataset, height_mm: f64, channel: usize, cfg: &ExperimentConfig) -> Option<AmplitudeStats> {
    let stats: Vec<AmplitudeStats> = ds
        .trials_at(height_mm)
        .filter_map(|t| amplitude_of(&t.slave, channel, t.step_ms as f64 / 1000.0, cfg))
        .collect();
    if stats.is_empty() {
        return None;
    }
    let n = stats.len() as f64;
    Some(AmplitudeStats {
        amplitude: stats.iter().map(|s| s.amplitude).sum::<f64>() / n,
        mean: stats.iter().map(|s| s.mean).sum::<f64>() / n,
    })
}

fn load_episodes(ctx: &Context) -> Result<Vec<EpisodeResult>, HarnessError> {
    let want = ctx.provenance();
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for cell in ctx.cfg.cells().into_iter().filter(|c| ctx.filter.cell(c)) {
        let (spath, lpath) = (ctx.log_path(&cell, "summary"), ctx.log_path(&cell, ""));
        let (summary, log) = match (load_summary(&spath), load_log(&lpath)) {
            (Ok(s), Ok(l)) => (s, l),
            _ => {
                missing.push(cell.label());
                continue;
            }
        };
        for p in [&summary.provenance, &log.provenance] {
            if p.as_ref() != Some(&want) {
                let found = p.as_ref().map_or("no stamp".to_string(), |p| format!("config {} seed {}", p.config_hash, p.seed));
                return Err(HarnessError::Validation(format!(
                    "{}: written by {found}, current is config {} seed {}",
                    cell.label(),
                    want.config_hash,
                    want.seed
                )));
            }
        }
        out.push(EpisodeResult { cell, summary, log });
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(HarnessError::MissingLogs(missing))
    }
}

fn ratio_rows(cfg: &ExperimentConfig, episodes: &[EpisodeResult]) -> Vec<RatioRow> {
    let mut rows = Vec::new();
    for e in episodes.iter().filter(|e| e.cell.mode == Mode::Conventional && e.cell.model.scheme.predicts_slave()) {
        let to_mm = e.cell.perturbation.map(|p| p.to_mm);
        let fb = episodes.iter().find(|f| {
            f.cell.mode == Mode::Feedback
                && f.cell.model == e.cell.model
                && f.cell.height_mm == e.cell.height_mm
                && f.cell.perturbation.map(|p| p.to_mm) == to_mm
        });
        let ratios = fb.and_then(|fb| {
            let conv = prediction_variance(&paired_rows(&e.log.rows)).ok()?;
            let fbv = prediction_variance(&paired_rows(&fb.log.rows)).ok()?;
            variance_ratios(&conv, &fbv, cfg.metrics.ratio_weights).ok()
        });
        rows.push(RatioRow {
            model: e.cell.model,
            height_mm: e.cell.height_mm,
            to_mm,
            ratios,
        });
    }
    rows
}

fn gap_rows(ctx: &Context, ds: &Dataset, episodes: &[EpisodeResult]) -> Vec<GapRow> {
    let cfg = &ctx.cfg;
    let dt = cfg.run.exec.infer_every as f64 * crate::sim::CONTROL_DT;
    let mut rows = Vec::new();
    for e in episodes.iter().filter(|e| e.cell.perturbation.is_none()) {
        let auto_rows: Vec<[f64; 9]> = e.log.rows.iter().map(|r| r.s_res).collect();
        for (name, ch) in AMPLITUDE_CHANNELS {
            let (Some(train), Some(auto)) = (
                train_amplitude(ds, e.cell.height_mm, ch, cfg),
                amplitude_of(&auto_rows, ch, dt, cfg),
            ) else {
                continue;
            };
            let (amplitude_gap, mean_gap) = reproducibility_gap(&train, &auto);
            rows.push(GapRow {
                cell: e.cell,
                channel: name,
                train,
                auto,
                amplitude_gap,
                mean_gap,
            });
        }
    }
    rows
}

fn render_matrix(ctx: &Context, episodes: &[EpisodeResult]) -> String {
    let cfg = &ctx.cfg;
    let mut columns: Vec<(ModelConfig, Mode)> = Vec::new();
    for e in episodes.iter().filter(|e| e.cell.perturbation.is_none()) {
        if !columns.contains(&(e.cell.model, e.cell.mode)) {
            columns.push((e.cell.model, e.cell.mode));
        }
    }
    let mut out = format!("{}\nheight_mm", ctx.provenance());
    for (m, mode) in &columns {
        write!(out, ",{}_{mode}", m.label()).unwrap();
    }
    out.push('\n');
    for &h in &cfg.run.heights_mm {
        write!(out, "{h}").unwrap();
        for (m, mode) in &columns {
            let cell = episodes
                .iter()
                .find(|e| e.cell.perturbation.is_none() && e.cell.model == *m && e.cell.mode == *mode && e.cell.height_mm == h);
            match cell {
                Some(e) => write!(out, ",{}", e.summary.success as u8).unwrap(),
                None => out.push_str(",N/A"),
            }
        }
        out.push('\n');
    }
    out
}

fn render_ratios(ctx: &Context, rows: &[RatioRow]) -> String {
    let mut out = format!("{}\nscheme,k,height_mm,to_mm,theta,theta_dot,tau,total\n", ctx.provenance());
    for r in rows {
        let to = r.to_mm.map(|t| t.to_string()).unwrap_or_default();
        write!(out, "{},{},{},{to}", r.model.scheme, r.model.k, r.height_mm).unwrap();
        match &r.ratios {
            Some(q) => writeln!(out, ",{},{},{},{}", q.theta, q.theta_dot, q.tau, q.total).unwrap(),
            None => out.push_str(",N/A,N/A,N/A,N/A\n"),
        }
    }
    out
}

fn render_gaps(ctx: &Context, rows: &[GapRow]) -> String {
    let mut out = format!(
        "{}\nscheme,k,mode,height_mm,channel,train_amplitude,auto_amplitude,amplitude_gap,train_mean,auto_mean,mean_gap\n",
        ctx.provenance()
    );
    for g in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            g.cell.model.scheme,
            g.cell.model.k,
            g.cell.mode,
            g.cell.height_mm,
            g.channel,
            g.train.amplitude,
            g.auto.amplitude,
            g.amplitude_gap,
            g.train.mean,
            g.auto.mean,
            g.mean_gap
        )
        .unwrap();
    }
    out
}

fn success_rates(episodes: &[EpisodeResult]) -> BTreeMap<Scheme, f64> {
    let mut counts: BTreeMap<Scheme, (usize, usize)> = BTreeMap::new();
    for e in episodes.iter().filter(|e| e.cell.perturbation.is_none()) {
        let c = counts.entry(e.cell.model.scheme).or_default();
        c.0 += e.summary.success as usize;
        c.1 += 1;
    }
    counts.into_iter().map(|(s, (ok, n))| (s, ok as f64 / n as f64)).collect()
}

fn render_headline(ctx: &Context, rates: &BTreeMap<Scheme, f64>, episodes: &[EpisodeResult], ratios: &[RatioRow]) -> String {
    let mut out = format!("{}\n", ctx.provenance());
    for (scheme, rate) in rates {
        let n = episodes.iter().filter(|e| e.cell.perturbation.is_none() && e.cell.model.scheme == *scheme).count();
        writeln!(out, "{scheme:<6} success rate {:5.1}% over {n} episodes", 100.0 * rate).unwrap();
    }
    let totals: Vec<f64> = ratios.iter().filter_map(|r| r.ratios.map(|q| q.total)).collect();
    if !totals.is_empty() {
        let above = totals.iter().filter(|t| **t > 1.0).count();
        writeln!(out, "variance ratio total > 1 in {above} of {} cells", totals.len()).unwrap();
    }
    out
}

/// Reads all episode files of the selected cells and writes the reports.
pub fn report(ctx: &Context) -> Result<Reports, HarnessError> {
    let episodes = load_episodes(ctx)?;
    let ds = ctx.load_dataset()?;
    let ratios = ratio_rows(&ctx.cfg, &episodes);
    let gaps = gap_rows(ctx, &ds, &episodes);
    let success_rate = success_rates(&episodes);
    let headline = render_headline(ctx, &success_rate, &episodes, &ratios);

    let dir = ctx.report_dir();
    let write = |name: &str, text: &str| {
        crate::dataset_io::write_file(&dir.join(name), text).map_err(|e| HarnessError::Runtime(e.to_string()))
    };
    write("success_matrix.csv", &render_matrix(ctx, &episodes))?;
    write("variance_ratios.csv", &render_ratios(ctx, &ratios))?;
    write("amplitude_gaps.csv", &render_gaps(ctx, &gaps))?;
    write("headline.txt", &headline)?;
    Ok(Reports {
        episodes,
        ratios,
        gaps,
        success_rate,
        headline,
    })
}
