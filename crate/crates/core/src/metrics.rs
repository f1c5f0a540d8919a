//! Summary statistics computed from a run log alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::RunLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalMetrics {
    pub started: u64,
    pub completed: u64,
    pub expired: u64,
    /// completed / started, 0 when no goal was started.
    pub completion_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub survival_ticks: u64,
    pub died: bool,
    /// Fraction of ticks with |current - target_eff| <= band.
    pub time_in_band: BTreeMap<String, f64>,
    pub mean_abs_drive: BTreeMap<String, f64>,
    /// Keyed by level.
    pub mean_prediction_error: BTreeMap<String, f64>,
    pub goals: GoalMetrics,
    pub actions: BTreeMap<String, u64>,
    pub imprints: u64,
    pub aborts: u64,
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `expected_ticks` is the run length the log should cover, when known; a
/// log with no rows for a non-empty run is corrupt.
pub fn compute_metrics(log: &RunLog, expected_ticks: Option<u64>) -> Result<Metrics> {
    let n = log.rows.len();
    if n == 0 && expected_ticks.is_some_and(|t| t > 0) {
        return Err(Error::Integrity("empty log for a non-empty run".into()));
    }
    let mut time_in_band = BTreeMap::new();
    let mut mean_abs_drive = BTreeMap::new();
    for (i, name) in log.layout.hvars.iter().enumerate() {
        let inside = log.rows.iter().filter(|r| r.hvars[i].drive <= 1.0).count();
        let drive: f64 = log.rows.iter().map(|r| r.hvars[i].drive.abs()).sum();
        time_in_band.insert(name.clone(), mean(inside as f64, n));
        mean_abs_drive.insert(name.clone(), mean(drive, n));
    }

    let mut per_level: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (i, (_, level)) in log.layout.subsystems.iter().enumerate() {
        let e = per_level.entry(*level).or_default();
        for r in &log.rows {
            e.0 += r.subsystems[i].prediction_error;
            e.1 += 1;
        }
    }
    let mean_prediction_error = per_level
        .into_iter()
        .map(|(l, (s, c))| (l.to_string(), mean(s, c)))
        .collect();

    let (mut started, mut completed, mut expired, mut imprints, mut aborts) = (0, 0, 0, 0, 0);
    let mut actions = BTreeMap::new();
    for r in &log.rows {
        *actions.entry(r.action.label().to_string()).or_insert(0) += 1;
        for s in &r.subsystems {
            for ev in s.goal_event.split(';').filter(|e| !e.is_empty()) {
                match ev.split(':').next() {
                    Some("start") => started += 1,
                    Some("complete") => completed += 1,
                    Some("expire") => expired += 1,
                    _ => return Err(Error::Integrity(format!("unknown goal event {ev:?}"))),
                }
            }
            imprints += u64::from(s.imprinted.is_some());
            aborts += u64::from(s.aborted);
        }
    }

    Ok(Metrics {
        survival_ticks: n as u64,
        died: log.died(),
        time_in_band,
        mean_abs_drive,
        mean_prediction_error,
        goals: GoalMetrics {
            started,
            completed,
            expired,
            completion_rate: mean(completed as f64, started as usize),
        },
        actions,
        imprints,
        aborts,
    })
}
