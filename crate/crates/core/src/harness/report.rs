use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use super::config::{ExperimentConfig, ANC_OFF};
use super::experiment::{ControllerKind, ResolvedController, TrialOutcome};
use super::metrics::{anc_gain_db, average_traces, convergence_time, steady_state, Decibels};
use crate::acoustics::Point3;
use crate::anc::ErrorTrace;
use crate::error::Result;
use crate::latent::{LatentScheme, TuningProbe};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    /// Blocks from trial start; `None` = did not converge.
    pub convergence_initial: Option<usize>,
    /// Blocks from the path switch.
    pub convergence_post: Option<usize>,
    pub anc_gain_initial_db: Decibels,
    pub anc_gain_db: Decibels,
    pub steady_mse: f64,
    pub realization: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerReport {
    pub name: String,
    pub kind: String,
    pub model: Option<String>,
    pub scheme: Option<LatentScheme>,
    pub step_size: f64,
    pub tuning: Option<Vec<TuningProbe>>,
    pub trials_ok: usize,
    pub trials_failed: usize,
    pub failures: Vec<TrialFailure>,
    /// Mean over converged trials.
    pub mean_convergence_initial: Option<f64>,
    pub mean_convergence_post: Option<f64>,
    pub not_converged_initial: usize,
    pub not_converged_post: usize,
    /// Steady-state MSE of the averaged trace, end of each phase.
    pub steady_mse_initial: f64,
    pub steady_mse: f64,
    /// Gains of the averaged trace against the averaged ANC-off trace.
    pub anc_gain_initial_db: Decibels,
    pub anc_gain_db: Decibels,
    pub trials: Vec<TrialMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialInfo {
    pub trial: usize,
    pub positions: [Point3; 2],
    pub realization: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub anc_off_steady_mse_initial: f64,
    pub anc_off_steady_mse: f64,
    pub controllers: Vec<ControllerReport>,
    pub trials: Vec<TrialInfo>,
}

impl MetricsReport {
    pub fn controller(&self, name: &str) -> Option<&ControllerReport> {
        self.controllers.iter().find(|c| c.name == name)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Aligned plain-text summary.
    pub fn to_table(&self) -> String {
        let headers = [
            "controller", "step", "conv0", "conv1", "gain0 dB", "gain1 dB", "ok", "failed",
        ];
        let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.1}"));
        let mut rows: Vec<[String; 8]> = vec![[
            ANC_OFF.to_string(),
            "-".into(),
            "-".into(),
            "-".into(),
            "0.00".into(),
            "0.00".into(),
            self.trials.len().to_string(),
            "0".into(),
        ]];
        for c in &self.controllers {
            rows.push([
                c.name.clone(),
                format!("{:.4}", c.step_size),
                fmt_opt(c.mean_convergence_initial),
                fmt_opt(c.mean_convergence_post),
                c.anc_gain_initial_db.to_string(),
                c.anc_gain_db.to_string(),
                c.trials_ok.to_string(),
                c.trials_failed.to_string(),
            ]);
        }
        let mut widths = headers.map(str::len);
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
                if i == 0 {
                    let _ = write!(out, "{cell:<w$}");
                } else {
                    let _ = write!(out, "  {cell:>w$}");
                }
            }
            out.push('\n');
        };
        line(&mut out, &headers);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
        for r in &rows {
            line(&mut out, &r.iter().map(String::as_str).collect::<Vec<_>>());
        }
        let _ = writeln!(
            out,
            "\nconv0/conv1: mean blocks to convergence (rho={}) before and after the switch at block {}",
            self.config.experiment.rho, self.config.experiment.switch_block
        );
        out
    }
}

/// Averaged traces for plotting: ANC off first, then one per controller.
#[derive(Debug, Clone)]
pub struct MeanTraces {
    pub anc_off: ErrorTrace,
    pub controllers: Vec<(String, Option<ErrorTrace>)>,
}

fn mean_of(values: &[usize]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<usize>() as f64 / values.len() as f64)
}

/// Aggregate trial outcomes into the report. Deterministic: every reduction
/// runs in trial order.
pub fn build_report(
    config: &ExperimentConfig,
    controllers: &[ResolvedController],
    trials: &[TrialOutcome],
) -> Result<(MetricsReport, MeanTraces)> {
    let t = &config.experiment;
    let (sw, win, rho) = (t.switch_block, t.steady_window, t.rho);
    let offs: Vec<ErrorTrace> = trials.iter().map(|o| o.anc_off.clone()).collect();
    let mean_off = average_traces(&offs)?;
    let mut reports = Vec::with_capacity(controllers.len());
    let mut means = Vec::with_capacity(controllers.len());
    for (ci, c) in controllers.iter().enumerate() {
        let mut ok_traces = Vec::new();
        let mut per_trial = Vec::new();
        let mut failures = Vec::new();
        let (mut c0, mut c1) = (Vec::new(), Vec::new());
        let (mut nc0, mut nc1) = (0, 0);
        for o in trials {
            let run = &o.runs[ci];
            match &run.result {
                Ok(trace) => {
                    let e = &trace.block_mse;
                    let off = &o.anc_off.block_mse;
                    let conv0 = convergence_time(&e[..sw], rho, win)?;
                    let conv1 = convergence_time(&e[sw..], rho, win)?;
                    match conv0 {
                        Some(v) => c0.push(v),
                        None => nc0 += 1,
                    }
                    match conv1 {
                        Some(v) => c1.push(v),
                        None => nc1 += 1,
                    }
                    per_trial.push(TrialMetrics {
                        trial: o.index,
                        convergence_initial: conv0,
                        convergence_post: conv1,
                        anc_gain_initial_db: Decibels(anc_gain_db(&e[..sw], &off[..sw], win)?),
                        anc_gain_db: Decibels(anc_gain_db(&e[sw..], &off[sw..], win)?),
                        steady_mse: steady_state(e, win)?,
                        realization: run.realization.clone(),
                    });
                    ok_traces.push(trace.clone());
                }
                Err(msg) => failures.push(TrialFailure {
                    trial: o.index,
                    error: msg.clone(),
                }),
            }
        }
        let mean = if ok_traces.is_empty() {
            None
        } else {
            Some(average_traces(&ok_traces)?)
        };
        let (steady0, steady1, g0, g1) = match &mean {
            Some(m) => (
                steady_state(&m.block_mse[..sw], win)?,
                steady_state(&m.block_mse, win)?,
                anc_gain_db(&m.block_mse[..sw], &mean_off.block_mse[..sw], win)?,
                anc_gain_db(&m.block_mse[sw..], &mean_off.block_mse[sw..], win)?,
            ),
            None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
        };
        let (kind, model, scheme) = match &c.kind {
            ControllerKind::Fxlms { .. } => ("fxlms", None, None),
            ControllerKind::Latent {
                model_name, scheme, ..
            } => ("latent", Some(model_name.clone()), Some(*scheme)),
        };
        reports.push(ControllerReport {
            name: c.name.clone(),
            kind: kind.to_string(),
            model,
            scheme,
            step_size: c.step_size(),
            tuning: c.tuning.clone(),
            trials_ok: ok_traces.len(),
            trials_failed: failures.len(),
            failures,
            mean_convergence_initial: mean_of(&c0),
            mean_convergence_post: mean_of(&c1),
            not_converged_initial: nc0,
            not_converged_post: nc1,
            steady_mse_initial: steady0,
            steady_mse: steady1,
            anc_gain_initial_db: Decibels(g0),
            anc_gain_db: Decibels(g1),
            trials: per_trial,
        });
        means.push((c.name.clone(), mean));
    }
    let report = MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: config.clone(),
        anc_off_steady_mse_initial: steady_state(&mean_off.block_mse[..sw], win)?,
        anc_off_steady_mse: steady_state(&mean_off.block_mse, win)?,
        controllers: reports,
        trials: trials
            .iter()
            .map(|o| TrialInfo {
                trial: o.index,
                positions: o.positions,
                realization: o.realization.clone(),
            })
            .collect(),
    };
    Ok((
        report,
        MeanTraces {
            anc_off: mean_off,
            controllers: means,
        },
    ))
}

/// File-system friendly version of a controller name.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Write `report.json`, `report.txt`, averaged traces under `traces/` and
/// per-trial traces under `traces/<controller>/`.
pub fn write_outputs(
    dir: &Path,
    report: &MetricsReport,
    means: &MeanTraces,
    trials: &[TrialOutcome],
) -> Result<()> {
    std::fs::create_dir_all(dir.join("traces"))?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    std::fs::write(dir.join("report.txt"), report.to_table())?;
    means.anc_off.save_csv(&dir.join("traces").join(format!("{ANC_OFF}.csv")))?;
    for (name, trace) in &means.controllers {
        if let Some(t) = trace {
            t.save_csv(&dir.join("traces").join(format!("{}.csv", file_stem(name))))?;
        }
    }
    let off_dir = dir.join("traces").join(ANC_OFF);
    std::fs::create_dir_all(&off_dir)?;
    for o in trials {
        o.anc_off.save_csv(&off_dir.join(format!("trial_{:03}.csv", o.index)))?;
    }
    for (ci, (name, _)) in means.controllers.iter().enumerate() {
        let sub = dir.join("traces").join(file_stem(name));
        std::fs::create_dir_all(&sub)?;
        for o in trials {
            if let Ok(t) = &o.runs[ci].result {
                t.save_csv(&sub.join(format!("trial_{:03}.csv", o.index)))?;
            }
        }
    }
    Ok(())
}
