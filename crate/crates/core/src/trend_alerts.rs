//! Trend groups with decaying scores and threshold alerts.
//!
//! Each processed email joins the nearest group representative within
//! squared distance `delta`, or founds a new group. A group's score decays
//! by `k_alert^t` (t in fractional days since its last update) and then
//! grows by `100 / ñ × label`, where `ñ` is the trailing daily volume.
//! An alert fires when the score reaches `t_alert` while the group is armed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Days, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vector_bowl::{squared_distance, RecordId};

const SECONDS_PER_DAY: f64 = 86_400.0;

/// Absolute slack when comparing a score against `t_alert`, so a group that
/// reaches the threshold exactly is not missed by rounding.
pub const ALERT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TrendError {
    #[error("observation at {at} precedes group {group}'s last update at {last}")]
    OutOfOrder {
        group: GroupId,
        last: DateTime<Utc>,
        at: DateTime<Utc>,
    },
    #[error("label must be in [0, 1], got {0}")]
    InvalidLabel(f64),
    #[error("invalid trend config: {0}")]
    Config(String),
    #[error("alert log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("alert log {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub u64);

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrendConfig {
    /// Squared-distance join threshold.
    pub delta: f64,
    pub k_alert: f64,
    pub t_alert: f64,
    pub daily_window_days: u32,
}

impl Default for TrendConfig {
    fn default() -> Self {
        TrendConfig {
            delta: 0.2,
            k_alert: 0.5,
            t_alert: calibrate_threshold(20.0, 0.5, 3),
            daily_window_days: 7,
        }
    }
}

impl TrendConfig {
    pub fn validate(&self) -> Result<(), TrendError> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(TrendError::Config(format!("delta {} must be positive", self.delta)));
        }
        if !(self.k_alert > 0.0 && self.k_alert < 1.0) {
            return Err(TrendError::Config(format!("k_alert {} not in (0, 1)", self.k_alert)));
        }
        if !(self.t_alert.is_finite() && self.t_alert > 0.0) {
            return Err(TrendError::Config(format!("t_alert {} must be positive", self.t_alert)));
        }
        if self.daily_window_days == 0 {
            return Err(TrendError::Config("daily_window_days must be at least 1".into()));
        }
        Ok(())
    }
}

/// Threshold reached by a group holding `p_alert`% of daily volume for
/// `days` consecutive days: `p × (1 − k^T) / (1 − k)`.
pub fn calibrate_threshold(p_alert: f64, k_alert: f64, days: u32) -> f64 {
    p_alert * (1.0 - k_alert.powi(days as i32)) / (1.0 - k_alert)
}

/// Scales `score` by `k^t` for `t` fractional days between `from` and `to`.
pub fn decay(score: f64, k_alert: f64, from: DateTime<Utc>, to: DateTime<Utc>) -> f64 {
    let days = elapsed_days(from, to).max(0.0);
    if days == 0.0 {
        score
    } else {
        score * k_alert.powf(days)
    }
}

fn elapsed_days(from: DateTime<Utc>, to: DateTime<Utc>) -> f64 {
    let delta = to - from;
    let secs = delta.num_seconds() as f64 + f64::from(delta.subsec_nanos()) * 1e-9;
    secs / SECONDS_PER_DAY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendGroup {
    pub group_id: GroupId,
    pub representative_vector: Vec<f64>,
    pub representative_record_id: Option<RecordId>,
    /// Anonymized text of the representative, for display.
    pub representative_text: Option<String>,
    pub score: f64,
    pub last_update: DateTime<Utc>,
    pub member_count: u64,
    pub alert_armed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub group_id: GroupId,
    pub representative_record_id: Option<RecordId>,
    pub score_at_alert: f64,
    pub timestamp: DateTime<Utc>,
}

/// A group as reported at query time, score decayed to `as_of`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group_id: GroupId,
    pub representative_record_id: Option<RecordId>,
    pub representative_text: Option<String>,
    pub score: f64,
    pub member_count: u64,
    pub last_update: DateTime<Utc>,
    pub alert_armed: bool,
}

/// Per-day email counts and the trailing daily average `ñ`.
///
/// `ñ` for a given day is the mean count over the preceding
/// `window` calendar days (only days since the first observation count,
/// missing days as zero). On the very first day there is no history and the
/// running count of that day is used instead. Floored at 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DailyVolume {
    counts: BTreeMap<NaiveDate, u64>,
    window_days: u32,
}

impl DailyVolume {
    pub fn new(window_days: u32) -> Self {
        DailyVolume {
            counts: BTreeMap::new(),
            window_days: window_days.max(1),
        }
    }

    pub fn record(&mut self, at: DateTime<Utc>) {
        *self.counts.entry(at.date_naive()).or_default() += 1;
    }

    pub fn count(&self, day: NaiveDate) -> u64 {
        self.counts.get(&day).copied().unwrap_or(0)
    }

    pub fn n_tilde(&self, at: DateTime<Utc>) -> f64 {
        let today = at.date_naive();
        let Some(&first) = self.counts.keys().next() else {
            return 1.0;
        };
        if first >= today {
            return (self.count(today) as f64).max(1.0);
        }
        let window_start = today
            .checked_sub_days(Days::new(u64::from(self.window_days)))
            .unwrap_or(NaiveDate::MIN)
            .max(first);
        let days = (today - window_start).num_days().max(1) as f64;
        let total: u64 = self.counts.range(window_start..today).map(|(_, c)| c).sum();
        (total as f64 / days).max(1.0)
    }
}

/// One email entering the trend analyzer.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub vector: &'a [f64],
    /// Ensemble label for classified emails, 1 for submitted phish.
    pub label: f64,
    pub at: DateTime<Utc>,
    pub record_id: Option<RecordId>,
    pub text: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationOutcome {
    pub group_id: GroupId,
    pub new_group: bool,
    pub score: f64,
    pub alert: Option<Alert>,
}

/// Index of the nearest representative within `delta`, earliest group on ties.
pub fn nearest_group(groups: &[TrendGroup], vector: &[f64], delta: f64) -> Option<usize> {
    groups
        .iter()
        .enumerate()
        .map(|(i, g)| (i, squared_distance(&g.representative_vector, vector)))
        .filter(|&(_, d)| d <= delta)
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

struct AlertLog {
    path: PathBuf,
    file: File,
}

/// Group store, volume bookkeeping and alert log.
pub struct TrendTracker {
    config: TrendConfig,
    groups: Vec<TrendGroup>,
    volume: DailyVolume,
    alerts: Vec<Alert>,
    log: Option<AlertLog>,
}

impl fmt::Debug for TrendTracker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrendTracker")
            .field("config", &self.config)
            .field("groups", &self.groups.len())
            .field("alerts", &self.alerts.len())
            .finish()
    }
}

impl TrendTracker {
    pub fn new(config: TrendConfig) -> Result<Self, TrendError> {
        config.validate()?;
        Ok(TrendTracker {
            volume: DailyVolume::new(config.daily_window_days),
            config,
            groups: Vec::new(),
            alerts: Vec::new(),
            log: None,
        })
    }

    /// Like [`TrendTracker::new`], appending alerts to `path` and loading earlier ones.
    pub fn with_alert_log(config: TrendConfig, path: impl AsRef<Path>) -> Result<Self, TrendError> {
        let mut tracker = Self::new(config)?;
        let path = path.as_ref().to_path_buf();
        let io = |source| TrendError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let alert: Alert = serde_json::from_str(&line).map_err(|e| TrendError::Corrupt {
                    path: path.clone(),
                    line: n + 1,
                    message: e.to_string(),
                })?;
                tracker.alerts.push(alert);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        tracker.log = Some(AlertLog { path, file });
        Ok(tracker)
    }

    pub fn config(&self) -> &TrendConfig {
        &self.config
    }

    pub fn groups(&self) -> &[TrendGroup] {
        &self.groups
    }

    pub fn volume(&self) -> &DailyVolume {
        &self.volume
    }

    /// Returns the group `vector` belongs to, founding a new one if none is within `delta`.
    pub fn assign_group(&mut self, vector: &[f64], at: DateTime<Utc>) -> GroupId {
        match nearest_group(&self.groups, vector, self.config.delta) {
            Some(i) => self.groups[i].group_id,
            None => self.found_group(vector, at, None, None),
        }
    }

    fn found_group(
        &mut self,
        vector: &[f64],
        at: DateTime<Utc>,
        record_id: Option<RecordId>,
        text: Option<&str>,
    ) -> GroupId {
        let group_id = GroupId(self.groups.len() as u64);
        self.groups.push(TrendGroup {
            group_id,
            representative_vector: vector.to_vec(),
            representative_record_id: record_id,
            representative_text: text.map(str::to_string),
            score: 0.0,
            last_update: at,
            member_count: 0,
            alert_armed: true,
        });
        group_id
    }

    pub fn add_observation(&mut self, obs: Observation<'_>) -> Result<ObservationOutcome, TrendError> {
        if !(0.0..=1.0).contains(&obs.label) {
            return Err(TrendError::InvalidLabel(obs.label));
        }
        let existing = nearest_group(&self.groups, obs.vector, self.config.delta);
        if let Some(i) = existing {
            let group = &self.groups[i];
            if obs.at < group.last_update {
                return Err(TrendError::OutOfOrder {
                    group: group.group_id,
                    last: group.last_update,
                    at: obs.at,
                });
            }
        }
        let index = match existing {
            Some(i) => i,
            None => {
                self.found_group(obs.vector, obs.at, obs.record_id, obs.text);
                self.groups.len() - 1
            }
        };

        self.volume.record(obs.at);
        let n_tilde = self.volume.n_tilde(obs.at);
        let config = self.config;
        let group = &mut self.groups[index];

        group.score = decay(group.score, config.k_alert, group.last_update, obs.at);
        if !group.alert_armed && group.score + ALERT_TOLERANCE < config.t_alert {
            group.alert_armed = true;
        }
        group.score += 100.0 / n_tilde * obs.label;
        group.last_update = obs.at;
        group.member_count += 1;

        let mut alert = None;
        if group.alert_armed && group.score + ALERT_TOLERANCE >= config.t_alert {
            group.alert_armed = false;
            alert = Some(Alert {
                group_id: group.group_id,
                representative_record_id: group.representative_record_id,
                score_at_alert: group.score,
                timestamp: obs.at,
            });
        }
        let outcome = ObservationOutcome {
            group_id: group.group_id,
            new_group: existing.is_none(),
            score: group.score,
            alert: alert.clone(),
        };
        if let Some(alert) = alert {
            self.persist(&alert)?;
            self.alerts.push(alert);
        }
        Ok(outcome)
    }

    fn persist(&mut self, alert: &Alert) -> Result<(), TrendError> {
        if let Some(AlertLog { path, file }) = &mut self.log {
            let mut line = serde_json::to_string(alert).expect("alerts always serialize");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| TrendError::Io {
                    path: path.clone(),
                    source,
                })?;
        }
        Ok(())
    }

    /// Groups sorted by score decayed to `as_of`, highest first.
    pub fn summaries(&self, as_of: DateTime<Utc>) -> Vec<GroupSummary> {
        let mut out: Vec<GroupSummary> = self
            .groups
            .iter()
            .map(|g| GroupSummary {
                group_id: g.group_id,
                representative_record_id: g.representative_record_id,
                representative_text: g.representative_text.clone(),
                score: decay(g.score, self.config.k_alert, g.last_update, as_of),
                member_count: g.member_count,
                last_update: g.last_update,
                alert_armed: g.alert_armed,
            })
            .collect();
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.group_id.cmp(&b.group_id)));
        out
    }

    /// Alerts, newest first.
    pub fn alerts(&self) -> Vec<Alert> {
        let mut out = self.alerts.clone();
        out.sort_by_key(|a| std::cmp::Reverse(a.timestamp));
        out
    }
}
