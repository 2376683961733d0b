//! The four stages. Each reads the previous stage's files from the output
//! directory, so stages can run separately or back to back.
//!
//! ```text
//! out/
//!   config.toml
//!   data/dataset.csv, data/dataset.stats.csv, data/collect_summary.csv
//!   models/<scheme>_k<k>.json, models/<scheme>_k<k>.loss.csv
//!   logs/<cell>.csv, logs/<cell>.summary.csv, logs/<cell>.trace.csv
//!   reports/success_matrix.csv, reports/variance_ratios.csv,
//!   reports/amplitude_gaps.csv, reports/headline.txt
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset_io::{load_dataset, save_dataset, write_file};
use crate::executor::{run_autonomous, NetworkPredictor};
use crate::metrics::log_success;
use crate::model::checkpoint::render_loss_curve;
use crate::model::{train, Checkpoint, ModelConfig};
use crate::provenance::Provenance;
use crate::teleop::{bilateral_residual, build_dataset, collect_trial, downsample, Dataset, TrialSpec};

use super::config::{derive_seed, Cell, ExperimentConfig, Filter};
use super::logs::{load_summary, render_log, render_summary, render_trace};
use super::HarnessError;

/// Settling time and tolerances of the per-trial bilateral check.
const SETTLE: f64 = 0.5;
const POSITION_TOL: f64 = 0.01;
const FORCE_TOL: f64 = 0.05;

/// Resolved run settings shared by all stages.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub jobs: usize,
    pub filter: Filter,
    pub resume: bool,
    /// Print progress to stderr.
    pub verbose: bool,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, out: impl Into<PathBuf>) -> Self {
        Context {
            cfg,
            out: out.into(),
            jobs: 1,
            filter: Filter::default(),
            resume: false,
            verbose: false,
        }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
        }
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.out.join("data").join("dataset.csv")
    }

    pub fn checkpoint_path(&self, m: &ModelConfig) -> PathBuf {
        self.out.join("models").join(format!("{}.json", m.label()))
    }

    pub fn log_path(&self, cell: &Cell, kind: &str) -> PathBuf {
        let suffix = if kind.is_empty() { String::new() } else { format!(".{kind}") };
        self.out.join("logs").join(format!("{}{suffix}.csv", cell.label()))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("reports")
    }

    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool, HarnessError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .map_err(|e| HarnessError::Runtime(e.to_string()))
    }

    fn check_stamp(&self, what: &Path, found: Option<&Provenance>) -> Result<(), HarnessError> {
        let want = self.provenance();
        match found {
            Some(p) if *p == want => Ok(()),
            Some(p) => Err(HarnessError::Validation(format!(
                "{} was produced by config {} seed {}, current is {} seed {}",
                what.display(),
                p.config_hash,
                p.seed,
                want.config_hash,
                want.seed
            ))),
            None => Err(HarnessError::Validation(format!("{} has no provenance stamp", what.display()))),
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset, HarnessError> {
        let path = self.dataset_path();
        let (ds, prov) = load_dataset(&path).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        self.check_stamp(&path, prov.as_ref())?;
        Ok(ds)
    }

    fn write(&self, path: &Path, text: &str) -> Result<(), HarnessError> {
        write_file(path, text).map_err(|e| HarnessError::Runtime(e.to_string()))
    }
}

fn io(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

/// Writes the resolved configuration next to the outputs.
pub fn write_config(ctx: &Context) -> Result<(), HarnessError> {
    let text = format!("{}\n{}", ctx.provenance(), ctx.cfg.to_toml());
    ctx.write(&ctx.out.join("config.toml"), &text)
}

/// Runs the trial plan and writes the dataset.
pub fn collect(ctx: &Context) -> Result<Dataset, HarnessError> {
    let cfg = &ctx.cfg;
    let mut specs = Vec::new();
    for &h in &cfg.trials.heights_mm {
        for _ in 0..cfg.trials.per_height {
            let i = specs.len();
            specs.push(TrialSpec {
                paper_height: h / 1000.0,
                duration: cfg.trials.duration,
                seed: derive_seed(cfg.seed, &format!("trial{i}")),
            });
        }
    }
    if specs.is_empty() {
        return Err(HarnessError::Validation("no trials".into()));
    }
    let results: Vec<_> = ctx.pool()?.install(|| {
        specs
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                let traj = collect_trial(spec, &cfg.expert, &cfg.robot, &cfg.env, &cfg.gains)
                    .map_err(|e| HarnessError::Runtime(format!("trial {i}: {e}")))?;
                let residual = bilateral_residual(&traj, SETTLE, POSITION_TOL, FORCE_TOL);
                let rec = downsample(&traj, cfg.trials.downsample, i)
                    .map_err(|e| HarnessError::Runtime(format!("trial {i}: {e}")))?;
                Ok((rec, residual))
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;

    let prov = ctx.provenance();
    let mut summary = format!(
        "{prov}\ntrial,height_mm,seed,max_position_error,position_ok,force_ok,contact_steps\n"
    );
    for ((rec, r), spec) in results.iter().zip(&specs) {
        writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            rec.trial, rec.height_mm, spec.seed, r.max_position_error, r.position_ok, r.force_ok, r.contact_steps
        )
        .unwrap();
        ctx.note(format!(
            "trial {:2} h={:>4} mm  max|θm−θs|={:.4} rad  pos_ok={:.3}  force_ok={:.3}",
            rec.trial, rec.height_mm, r.max_position_error, r.position_ok, r.force_ok
        ));
    }
    let ds = build_dataset(results.into_iter().map(|(r, _)| r).collect()).map_err(io)?;
    save_dataset(&ctx.dataset_path(), &ds, Some(&prov)).map_err(io)?;
    ctx.write(&ctx.out.join("data").join("collect_summary.csv"), &summary)?;
    Ok(ds)
}

fn checkpoint_done(ctx: &Context, m: &ModelConfig) -> bool {
    Checkpoint::load(&ctx.checkpoint_path(m)).is_ok_and(|c| c.provenance() == ctx.provenance())
}

/// Trains every selected model. A failing job does not stop the others.
pub fn train_models(ctx: &Context) -> Result<(), HarnessError> {
    let ds = ctx.load_dataset()?;
    let prov = ctx.provenance();
    let jobs: Vec<ModelConfig> = ctx
        .cfg
        .models
        .grid
        .iter()
        .filter(|m| ctx.filter.model(m))
        .filter(|m| !(ctx.resume && checkpoint_done(ctx, m)))
        .copied()
        .collect();
    let failures: Vec<String> = ctx.pool()?.install(|| {
        jobs.par_iter()
            .filter_map(|m| {
                let seed = derive_seed(ctx.cfg.seed, &m.label());
                let started = std::time::Instant::now();
                let result = train(&ds, *m, &ctx.cfg.train, seed, |_, _| {})
                    .map_err(|e| e.to_string())
                    .and_then(|tm| {
                        let path = ctx.checkpoint_path(m);
                        Checkpoint::from_trained(&tm, &prov).save(&path).map_err(|e| e.to_string())?;
                        let curve = render_loss_curve(&tm.loss_curve, &prov);
                        write_file(&path.with_extension("loss.csv"), &curve).map_err(|e| e.to_string())?;
                        Ok(tm.loss_curve.last().copied())
                    });
                match result {
                    Ok(loss) => {
                        ctx.note(format!("trained {} in {:.1?}, final loss {loss:?}", m.label(), started.elapsed()));
                        None
                    }
                    Err(e) => Some(format!("{}: {e}", m.label())),
                }
            })
            .collect()
    });
    if failures.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Runtime(format!("training failed: {}", failures.join("; "))))
    }
}

fn summary_done(ctx: &Context, cell: &Cell) -> bool {
    load_summary(&ctx.log_path(cell, "summary")).is_ok_and(|s| s.provenance == Some(ctx.provenance()))
}

/// Runs every selected episode. Divergence is recorded as a failed
/// episode, not an error.
pub fn run_episodes(ctx: &Context) -> Result<(), HarnessError> {
    let cfg = &ctx.cfg;
    let prov = ctx.provenance();
    let cells: Vec<Cell> = cfg
        .cells()
        .into_iter()
        .filter(|c| ctx.filter.cell(c))
        .filter(|c| !(ctx.resume && summary_done(ctx, c)))
        .collect();
    let mut models: Vec<ModelConfig> = cells.iter().map(|c| c.model).collect();
    models.sort();
    models.dedup();
    let mut checkpoints = Vec::new();
    let mut missing = Vec::new();
    for m in &models {
        let path = ctx.checkpoint_path(m);
        match Checkpoint::load(&path) {
            Ok(c) => {
                ctx.check_stamp(&path, Some(&c.provenance()))?;
                checkpoints.push((*m, c));
            }
            Err(e) => missing.push(e.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(HarnessError::Runtime(format!("missing checkpoints: {}", missing.join("; "))));
    }

    ctx.pool()?.install(|| {
        cells.par_iter().try_for_each(|cell| {
            let ckpt = &checkpoints.iter().find(|(m, _)| *m == cell.model).unwrap().1;
            let env = cfg.env.with_height(cell.height_mm / 1000.0);
            let start = cfg.expert.start_pose(&cfg.robot, &env);
            let mut predictor = NetworkPredictor::from_checkpoint(ckpt);
            let log = run_autonomous(
                &mut predictor,
                cell.mode,
                start,
                &cfg.robot,
                &env,
                &cfg.gains,
                &cfg.run.exec,
                cell.height_step(),
                derive_seed(cfg.seed, &cell.label()),
            )
            .map_err(|e| HarnessError::Validation(format!("{}: {e}", cell.label())))?;
            let verdict = log_success(&log, &cfg.expert, &cfg.robot, &env, &cfg.criterion);
            ctx.write(&ctx.log_path(cell, ""), &render_log(&log, cell, &prov))?;
            if cfg.run.save_traces {
                ctx.write(&ctx.log_path(cell, "trace"), &render_trace(&log, &prov))?;
            }
            ctx.write(&ctx.log_path(cell, "summary"), &render_summary(cell, &log, &verdict, &prov))?;
            ctx.note(format!(
                "{:<34} {}",
                cell.label(),
                if verdict.success { "success".to_string() } else { format!("fail: {}", verdict.reason.unwrap_or_default()) }
            ));
            Ok(())
        })
    })
}

/// `collect → train → run → report`.
pub fn run_all(ctx: &Context) -> Result<super::report::Reports, HarnessError> {
    write_config(ctx)?;
    collect(ctx)?;
    train_models(ctx)?;
    run_episodes(ctx)?;
    super::report::report(ctx)
}
