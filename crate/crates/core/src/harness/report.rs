use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::control::TrialResult;

pub const CSV_HEADER: &str = "config,object,mode,compliance,noise,trials,success,servo_ticks_mean,servo_ticks_std,total_ticks_mean,total_ticks_std,hand_actions_mean,hand_actions_std";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("no results to report")]
    Empty,
    #[error("trial table: {0}")]
    Parse(String),
}

/// One raw trial, as stored in the per-trial table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub config: String,
    pub object: String,
    pub mode: String,
    pub compliance: String,
    pub noise: String,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub servo_ticks: usize,
    pub total_ticks: usize,
    pub hand_actions: usize,
    pub failure_cause: String,
}

pub fn trial_rows(cfg: &ExperimentConfig, results: &[TrialResult]) -> Vec<TrialRow> {
    let e = &cfg.experiment;
    results
        .iter()
        .enumerate()
        .map(|(i, r)| TrialRow {
            config: cfg.label(),
            object: e.object.clone(),
            mode: e.mode.name().into(),
            compliance: e.compliance.name().into(),
            noise: e.noise.name().into(),
            trial: i,
            seed: r.seed,
            success: r.success,
            servo_ticks: r.servo_ticks,
            total_ticks: r.total_ticks,
            hand_actions: r.hand_actions,
            failure_cause: r.failure_cause.name().into(),
        })
        .collect()
}

pub fn write_trials(rows: &[TrialRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

pub fn read_trials(text: &str) -> Result<Vec<TrialRow>, ReportError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<TrialRow>, _>>()
        .map_err(|e| ReportError::Parse(e.to_string()))
}

/// Aggregates of one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub config: String,
    pub object: String,
    pub mode: String,
    pub compliance: String,
    pub noise: String,
    pub trials: usize,
    pub successes: usize,
    /// (mean, sample std) pairs.
    pub servo_ticks: (f64, f64),
    pub total_ticks: (f64, f64),
    pub hand_actions: (f64, f64),
}

impl SummaryRow {
    pub fn success_ratio(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }

    pub fn success_field(&self) -> String {
        format!("{}/{}", self.successes, self.trials)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

fn mean_std(v: impl Iterator<Item = usize> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().map(|x| x as f64).sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = v.map(|x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(cfg: &ExperimentConfig, results: &[TrialResult]) -> Result<SummaryRow, ReportError> {
    summarize_group(&trial_rows(cfg, results))
}

fn summarize_group(rows: &[TrialRow]) -> Result<SummaryRow, ReportError> {
    let first = rows.first().ok_or(ReportError::Empty)?;
    Ok(SummaryRow {
        config: first.config.clone(),
        object: first.object.clone(),
        mode: first.mode.clone(),
        compliance: first.compliance.clone(),
        noise: first.noise.clone(),
        trials: rows.len(),
        successes: rows.iter().filter(|r| r.success).count(),
        servo_ticks: mean_std(rows.iter().map(|r| r.servo_ticks)),
        total_ticks: mean_std(rows.iter().map(|r| r.total_ticks)),
        hand_actions: mean_std(rows.iter().map(|r| r.hand_actions)),
    })
}

/// Groups raw trials by configuration, in order of first appearance.
pub fn summarize_rows(rows: &[TrialRow]) -> Result<SummaryTable, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut groups: Vec<Vec<TrialRow>> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|g| g[0].config == r.config) {
            Some(g) => g.push(r.clone()),
            None => groups.push(vec![r.clone()]),
        }
    }
    let rows = groups.iter().map(|g| summarize_group(g)).collect::<Result<_, _>>()?;
    Ok(SummaryTable { rows })
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl SummaryTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}",
                csv_escape(&r.config),
                csv_escape(&r.object),
                r.mode,
                r.compliance,
                r.noise,
                r.trials,
                r.success_field(),
                r.servo_ticks.0,
                r.servo_ticks.1,
                r.total_ticks.0,
                r.total_ticks.1,
                r.hand_actions.0,
                r.hand_actions.1
            );
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from(
            "| Config | Object | Mode | Compliance | Noise | Servo ticks | Total ticks | Hand actions | Success |\n\
             |---|---|---|---|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {:.1} ± {:.1} | {:.1} ± {:.1} | {:.1} ± {:.1} | {} |",
                r.config,
                r.object,
                r.mode,
                r.compliance,
                r.noise,
                r.servo_ticks.0,
                r.servo_ticks.1,
                r.total_ticks.0,
                r.total_ticks.1,
                r.hand_actions.0,
                r.hand_actions.1,
                r.success_field()
            );
        }
        s.push_str("\nTick counts at the 30 Hz control rate stand in for wall-clock times.\n");
        s
    }

    pub fn render(&self, format: super::OutputFormat) -> String {
        match format {
            super::OutputFormat::Csv => self.to_csv(),
            super::OutputFormat::Markdown => self.to_markdown(),
        }
    }
}

/// Renders one row per (config, results) pair.
pub fn report(runs: &[(ExperimentConfig, Vec<TrialResult>)], format: super::OutputFormat) -> Result<String, ReportError> {
    if runs.is_empty() {
        return Err(ReportError::Empty);
    }
    let rows = runs.iter().map(|(c, r)| summarize(c, r)).collect::<Result<Vec<_>, _>>()?;
    Ok(SummaryTable { rows }.render(format))
}
