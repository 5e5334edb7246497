//! Leaderboard semantics: latest-per-submitter views, history, sorting,
//! search, column visibility, color bands and error boards.
//!
//! Everything here is a pure function of a config and a store snapshot, so two
//! identical queries between writes return identical results.

use std::cmp::Ordering;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::records::{ErrorCategory, EvaluationRecord, PhaseKind, SubmissionId};
use crate::store::{latest_per_submitter, Snapshot};
use crate::{ArenaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub key: String,
    pub display_name: String,
    pub min: f64,
    pub max: f64,
    pub threshold: f64,
    pub higher_is_better: bool,
    pub visible_by_default: bool,
}

impl MetricConfig {
    pub fn new(key: &str, display_name: &str, (min, max, threshold): (f64, f64, f64), higher_is_better: bool, visible: bool) -> Self {
        Self {
            key: key.into(),
            display_name: display_name.into(),
            min,
            max,
            threshold,
            higher_is_better,
            visible_by_default: visible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoardConfig {
    pub metrics: Vec<MetricConfig>,
}

impl BoardConfig {
    pub fn default_for(kind: PhaseKind) -> Self {
        let unit = (0.0, 1.0, 0.5);
        let metrics = match kind {
            PhaseKind::Attack => vec![
                MetricConfig::new("clean_acc", "Clean accuracy", unit, true, false),
                MetricConfig::new("adv_acc", "Adversarial accuracy", unit, false, true),
                MetricConfig::new("mean_l2", "Mean L2", (0.0, 3.6, 1.8), false, true),
                MetricConfig::new("queries", "Queries", (0.0, 5000.0, 2500.0), false, true),
                MetricConfig::new("runtime_s", "Runtime (s)", (0.0, 60.0, 30.0), false, true),
                MetricConfig::new("effectiveness", "Effectiveness", unit, true, false),
                MetricConfig::new("stealth", "Stealth", unit, true, false),
                MetricConfig::new("query_eff", "Query efficiency", unit, true, false),
                MetricConfig::new("time_eff", "Time efficiency", unit, true, false),
                MetricConfig::new("overall_score", "Overall", unit, true, true),
            ],
            PhaseKind::Defense => vec![
                MetricConfig::new("clean_acc", "Clean accuracy", unit, true, true),
                MetricConfig::new("robust_acc_fgsm", "Robust acc. (FGSM)", unit, true, true),
                MetricConfig::new("robust_acc_pgd", "Robust acc. (PGD)", unit, true, true),
                MetricConfig::new("robust_acc_ga", "Robust acc. (GA)", unit, true, true),
                MetricConfig::new("overhead_s", "Overhead (s)", (0.0, 300.0, 150.0), false, true),
                MetricConfig::new("robustness", "Robustness", unit, true, false),
                MetricConfig::new("clean_retention", "Clean retention", unit, true, false),
                MetricConfig::new("time_eff", "Time efficiency", unit, true, false),
                MetricConfig::new("overall_score", "Overall", unit, true, true),
            ],
            PhaseKind::War => vec![
                MetricConfig::new("attack_side", "Attack side", unit, true, true),
                MetricConfig::new("defense_side", "Defense side", unit, true, true),
                MetricConfig::new("matchups", "Matchups", (0.0, 100.0, 1.0), true, false),
                MetricConfig::new("overall_score", "Overall", unit, true, true),
            ],
        };
        Self { metrics }
    }

    /// Index and message of the first invalid metric.
    pub fn validate(&self) -> Result<(), (usize, String)> {
        let mut seen = std::collections::HashSet::new();
        for (i, m) in self.metrics.iter().enumerate() {
            if !seen.insert(m.key.as_str()) {
                return Err((i, format!("duplicate metric {:?}", m.key)));
            }
            if !(m.min < m.max) {
                return Err((i, format!("min {} must be < max {}", m.min, m.max)));
            }
            if !(m.min <= m.threshold && m.threshold <= m.max) {
                return Err((i, format!("threshold {} outside [{}, {}]", m.threshold, m.min, m.max)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Green,
    Red,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellColor {
    pub band: Band,
    pub intensity: f64,
    /// The value was not finite.
    pub invalid: bool,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

/// Green above the threshold and red below it (reversed when lower is
/// better), with intensity growing linearly from 0 at the threshold to 1 at
/// the bound on that side.
pub fn color_for(value: f64, cfg: &MetricConfig) -> CellColor {
    if !value.is_finite() {
        return CellColor { band: Band::Neutral, intensity: 0.0, invalid: true };
    }
    let thr = cfg.threshold;
    let (band_above, band_below) = if cfg.higher_is_better { (Band::Green, Band::Red) } else { (Band::Red, Band::Green) };
    match value.partial_cmp(&thr).expect("finite") {
        Ordering::Equal => CellColor { band: Band::Neutral, intensity: 0.0, invalid: false },
        Ordering::Greater => CellColor { band: band_above, intensity: ratio(value - thr, cfg.max - thr), invalid: false },
        Ordering::Less => CellColor { band: band_below, intensity: ratio(thr - value, thr - cfg.min), invalid: false },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortDir {
    Asc,
    Desc,
}

impl std::str::FromStr for SortDir {
    type Err = ArenaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "asc" => Ok(SortDir::Asc),
            "desc" => Ok(SortDir::Desc),
            other => Err(ArenaError::Input(format!("unknown sort direction {other:?}; valid: asc, desc"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoardQuery {
    pub sort: Option<String>,
    pub dir: Option<SortDir>,
    pub search: Option<String>,
    pub submitter: Option<String>,
    /// Visible metric columns; `None` uses the board defaults.
    pub metrics: Option<Vec<String>>,
    pub limit: Option<usize>,
    #[serde(default)]
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub key: String,
    pub display_name: String,
    pub higher_is_better: bool,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardRow {
    pub submitter_id: String,
    pub display_name: String,
    pub submission_id: SubmissionId,
    pub eval_timestamp: DateTime<Utc>,
    /// Values of the visible metric columns present in the record.
    pub metrics: IndexMap<String, f64>,
    pub cells: IndexMap<String, CellColor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardView {
    pub phase: String,
    pub columns: Vec<Column>,
    pub sort: String,
    pub dir: SortDir,
    /// Rows matching the query before `limit`/`offset`.
    pub total: usize,
    pub rows: Vec<BoardRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub submitter_id: String,
    pub display_name: String,
    pub submission_id: SubmissionId,
    pub eval_timestamp: DateTime<Utc>,
    pub category: ErrorCategory,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorView {
    pub phase: String,
    pub sort: String,
    pub dir: SortDir,
    pub total: usize,
    pub rows: Vec<ErrorRow>,
}

const FIXED_KEYS: [&str; 4] = ["eval_timestamp", "submission_id", "submitter_id", "display_name"];

fn require_phase(config: &Config, phase: &str) -> Result<()> {
    config.phase(phase).map(|_| ()).ok_or_else(|| ArenaError::NotFound(format!("unknown phase {phase:?}")))
}

fn require_submitter(config: &Config, id: &str) -> Result<()> {
    config.submitter(id).map(|_| ()).ok_or_else(|| ArenaError::NotFound(format!("unknown submitter {id:?}")))
}

fn display_name(config: &Config, id: &str) -> String {
    config.submitter(id).map_or_else(|| id.to_string(), |s| s.display_name.clone())
}

fn matches_search(needle: &Option<String>, id: &str, name: &str) -> bool {
    match needle.as_deref().map(str::trim) {
        None | Some("") => true,
        Some(n) => {
            let n = n.to_lowercase();
            id.to_lowercase().contains(&n) || name.to_lowercase().contains(&n)
        }
    }
}

fn unknown_key(kind: &str, key: &str, valid: &[String]) -> ArenaError {
    ArenaError::Input(format!("unknown {kind} {key:?}; valid keys: {}", valid.join(", ")))
}

#[derive(Debug, Clone, PartialEq, PartialOrd)]
enum SortValue {
    Number(f64),
    Text(String),
    Time(DateTime<Utc>),
}

/// Orders rows by `key` in `dir`, missing values last, then by
/// `eval_timestamp` and submission id in the same direction.
fn compare(
    a: (&Option<SortValue>, DateTime<Utc>, SubmissionId),
    b: (&Option<SortValue>, DateTime<Utc>, SubmissionId),
    dir: SortDir,
) -> Ordering {
    let flip = |o: Ordering| if dir == SortDir::Desc { o.reverse() } else { o };
    let primary = match (a.0, b.0) {
        (Some(x), Some(y)) => flip(x.partial_cmp(y).unwrap_or(Ordering::Equal)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    primary.then_with(|| flip(a.1.cmp(&b.1))).then_with(|| flip(a.2.cmp(&b.2)))
}

fn page<T>(rows: Vec<T>, offset: usize, limit: Option<usize>) -> Vec<T> {
    let it = rows.into_iter().skip(offset);
    match limit {
        Some(l) => it.take(l).collect(),
        None => it.collect(),
    }
}

/// Results board for `phase`.
///
/// Without a submitter filter there is one row per submitter (its latest
/// evaluation), sorted by `eval_timestamp` descending unless asked otherwise.
/// With a submitter filter the rows are that submitter's full history, in
/// chronological order unless asked otherwise.
pub fn board_view(config: &Config, snapshot: &Snapshot, phase: &str, query: &BoardQuery) -> Result<BoardView> {
    require_phase(config, phase)?;
    let board = config.board(phase).ok_or_else(|| ArenaError::NotFound(format!("no board for phase {phase:?}")))?;
    if let Some(id) = &query.submitter {
        require_submitter(config, id)?;
    }

    let metric_keys: Vec<String> = board.metrics.iter().map(|m| m.key.clone()).collect();
    let visible: Vec<String> = match &query.metrics {
        Some(selected) => {
            for key in selected {
                if !metric_keys.contains(key) {
                    return Err(unknown_key("metric", key, &metric_keys));
                }
            }
            metric_keys.iter().filter(|k| selected.contains(k)).cloned().collect()
        }
        None => board.metrics.iter().filter(|m| m.visible_by_default).map(|m| m.key.clone()).collect(),
    };

    let mut sortable: Vec<String> = FIXED_KEYS.iter().map(|s| s.to_string()).collect();
    sortable.extend(metric_keys.iter().cloned());
    if !sortable.iter().any(|k| k == "overall_score") {
        sortable.push("overall_score".into());
    }
    let sort = query.sort.clone().unwrap_or_else(|| "eval_timestamp".into());
    if !sortable.contains(&sort) {
        return Err(unknown_key("sort key", &sort, &sortable));
    }
    let dir = query.dir.unwrap_or(if query.submitter.is_some() && query.sort.is_none() { SortDir::Asc } else { SortDir::Desc });

    let records: Vec<&EvaluationRecord> = match &query.submitter {
        Some(id) => snapshot.evaluations_in(phase).filter(|r| &r.submitter_id == id).collect(),
        None => latest_per_submitter(snapshot.evaluations_in(phase)),
    };
    let mut keyed: Vec<(Option<SortValue>, &EvaluationRecord, String)> = records
        .into_iter()
        .map(|r| (r, display_name(config, &r.submitter_id)))
        .filter(|(r, name)| matches_search(&query.search, &r.submitter_id, name))
        .map(|(r, name)| {
            let value = match sort.as_str() {
                "eval_timestamp" => Some(SortValue::Time(r.eval_timestamp)),
                "submission_id" => Some(SortValue::Number(r.submission_id as f64)),
                "submitter_id" => Some(SortValue::Text(r.submitter_id.clone())),
                "display_name" => Some(SortValue::Text(name.to_lowercase())),
                key => r.metrics.get(key).filter(|v| v.is_finite()).map(SortValue::Number),
            };
            (value, r, name)
        })
        .collect();
    keyed.sort_by(|a, b| compare((&a.0, a.1.eval_timestamp, a.1.submission_id), (&b.0, b.1.eval_timestamp, b.1.submission_id), dir));

    let total = keyed.len();
    let rows = page(keyed, query.offset, query.limit)
        .into_iter()
        .map(|(_, r, name)| {
            let mut metrics = IndexMap::new();
            let mut cells = IndexMap::new();
            for key in &visible {
                if let Some(v) = r.metrics.get(key) {
                    metrics.insert(key.clone(), v);
                    let cfg = board.metrics.iter().find(|m| &m.key == key).expect("visible keys come from the board");
                    cells.insert(key.clone(), color_for(v, cfg));
                }
            }
            BoardRow {
                submitter_id: r.submitter_id.clone(),
                display_name: name,
                submission_id: r.submission_id,
                eval_timestamp: r.eval_timestamp,
                metrics,
                cells,
            }
        })
        .collect();
    let columns = board
        .metrics
        .iter()
        .map(|m| Column {
            key: m.key.clone(),
            display_name: m.display_name.clone(),
            higher_is_better: m.higher_is_better,
            visible: visible.contains(&m.key),
        })
        .collect();
    Ok(BoardView { phase: phase.to_string(), columns, sort, dir, total, rows })
}

/// Full chronological history of one submitter.
pub fn history_view(config: &Config, snapshot: &Snapshot, phase: &str, submitter: &str, query: &BoardQuery) -> Result<BoardView> {
    board_view(config, snapshot, phase, &BoardQuery { submitter: Some(submitter.to_string()), ..query.clone() })
}

/// Error board for `phase`: every error record (not only the latest per
/// submitter), newest first unless asked otherwise.
pub fn error_view(config: &Config, snapshot: &Snapshot, phase: &str, query: &BoardQuery) -> Result<ErrorView> {
    require_phase(config, phase)?;
    if let Some(id) = &query.submitter {
        require_submitter(config, id)?;
    }
    let mut sortable: Vec<String> = FIXED_KEYS.iter().map(|s| s.to_string()).collect();
    sortable.push("category".into());
    let sort = query.sort.clone().unwrap_or_else(|| "eval_timestamp".into());
    if !sortable.contains(&sort) {
        return Err(unknown_key("sort key", &sort, &sortable));
    }
    let dir = query.dir.unwrap_or(if query.submitter.is_some() && query.sort.is_none() { SortDir::Asc } else { SortDir::Desc });

    let mut keyed: Vec<(Option<SortValue>, ErrorRow)> = snapshot
        .errors_in(phase)
        .filter(|e| query.submitter.as_ref().is_none_or(|id| &e.submitter_id == id))
        .map(|e| ErrorRow {
            submitter_id: e.submitter_id.clone(),
            display_name: display_name(config, &e.submitter_id),
            submission_id: e.submission_id,
            eval_timestamp: e.eval_timestamp,
            category: e.category,
            message: e.message.clone(),
        })
        .filter(|row| matches_search(&query.search, &row.submitter_id, &row.display_name))
        .map(|row| {
            let value = match sort.as_str() {
                "eval_timestamp" => SortValue::Time(row.eval_timestamp),
                "submission_id" => SortValue::Number(row.submission_id as f64),
                "submitter_id" => SortValue::Text(row.submitter_id.clone()),
                "display_name" => SortValue::Text(row.display_name.to_lowercase()),
                _ => SortValue::Text(row.category.as_str().to_string()),
            };
            (Some(value), row)
        })
        .collect();
    keyed.sort_by(|a, b| compare((&a.0, a.1.eval_timestamp, a.1.submission_id), (&b.0, b.1.eval_timestamp, b.1.submission_id), dir));
    let total = keyed.len();
    let rows = page(keyed.into_iter().map(|(_, r)| r).collect(), query.offset, query.limit);
    Ok(ErrorView { phase: phase.to_string(), sort, dir, total, rows })
}
