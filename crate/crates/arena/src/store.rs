//! Append-only record store: one newline-delimited JSON log per phase.
//!
//! A single writer appends whole lines under a lock and then publishes a new
//! immutable [`Snapshot`]; readers only ever see complete snapshots.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};

use crate::records::{EvaluationRecord, ErrorRecord, MatchupRecord, Payload, Record, Submission, SubmissionId};
use crate::{ArenaError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    pub submissions: Vec<Submission>,
    pub evaluations: Vec<EvaluationRecord>,
    pub errors: Vec<ErrorRecord>,
    pub matchups: Vec<MatchupRecord>,
}

impl Snapshot {
    pub fn record_count(&self) -> usize {
        self.submissions.len() + self.evaluations.len() + self.errors.len() + self.matchups.len()
    }

    fn apply(&mut self, record: Record) {
        match record {
            Record::Submission(s) => self.submissions.push(s),
            Record::Evaluation(e) => self.evaluations.push(e),
            Record::Error(e) => self.errors.push(e),
            Record::Matchup(m) => self.matchups.push(m),
        }
    }

    pub fn submission(&self, id: SubmissionId) -> Option<&Submission> {
        self.submissions.iter().find(|s| s.id == id)
    }

    /// Submissions without an evaluation or error record, in id order.
    pub fn pending(&self) -> Vec<&Submission> {
        let done: HashSet<SubmissionId> =
            self.evaluations.iter().map(|e| e.submission_id).chain(self.errors.iter().map(|e| e.submission_id)).collect();
        let mut pending: Vec<&Submission> = self.submissions.iter().filter(|s| !done.contains(&s.id)).collect();
        pending.sort_by_key(|s| s.id);
        pending
    }

    pub fn evaluations_in<'a>(&'a self, phase: &'a str) -> impl Iterator<Item = &'a EvaluationRecord> + 'a {
        self.evaluations.iter().filter(move |e| e.phase == phase)
    }

    pub fn errors_in<'a>(&'a self, phase: &'a str) -> impl Iterator<Item = &'a ErrorRecord> + 'a {
        self.errors.iter().filter(move |e| e.phase == phase)
    }

    pub fn evaluation_of(&self, id: SubmissionId) -> Option<&EvaluationRecord> {
        self.evaluations.iter().rev().find(|e| e.submission_id == id)
    }

    pub fn next_submission_id(&self) -> SubmissionId {
        self.submissions.iter().map(|s| s.id).max().map_or(1, |m| m + 1)
    }

    pub fn next_war_run(&self) -> u64 {
        let from_matchups = self.matchups.iter().map(|m| m.run);
        let from_entries = self.submissions.iter().filter_map(|s| match s.payload {
            Payload::WarEntry { run } => Some(run),
            _ => None,
        });
        from_matchups.chain(from_entries).max().map_or(1, |m| m + 1)
    }
}

pub struct Store {
    dir: PathBuf,
    files: Mutex<HashMap<String, File>>,
    snapshot: RwLock<Arc<Snapshot>>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("dir", &self.dir).finish_non_exhaustive()
    }
}

fn phase_file(dir: &Path, phase: &str) -> PathBuf {
    dir.join(format!("{phase}.jsonl"))
}

impl Store {
    /// Opens (creating if needed) the log directory and replays every log.
    /// A trailing line without a newline is a torn write and is ignored.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        let mut snapshot = Snapshot::default();
        for path in paths {
            let text = fs::read_to_string(&path)?;
            let complete = match text.rfind('\n') {
                Some(end) => &text[..=end],
                None => "",
            };
            for (n, line) in complete.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: Record = serde_json::from_str(line)
                    .map_err(|e| ArenaError::Store(format!("{}:{}: {e}", path.display(), n + 1)))?;
                snapshot.apply(record);
            }
        }
        // Logs are per phase; restore the global chronological order.
        snapshot.submissions.sort_by_key(|s| s.id);
        snapshot.evaluations.sort_by_key(|r| r.eval_timestamp);
        snapshot.errors.sort_by_key(|r| r.eval_timestamp);
        snapshot.matchups.sort_by_key(|r| (r.run, r.eval_timestamp));
        Ok(Self { dir: dir.to_path_buf(), files: Mutex::new(HashMap::new()), snapshot: RwLock::new(Arc::new(snapshot)) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn append(&self, record: Record) -> Result<()> {
        let mut files = self.files.lock().expect("store lock");
        self.write_locked(&mut files, &record)?;
        self.publish(|s| s.apply(record));
        Ok(())
    }

    /// Assigns the next submission id and appends the submission atomically.
    pub fn create_submission(
        &self,
        submitter_id: &str,
        phase: &str,
        payload: Payload,
        submitted_at: DateTime<Utc>,
    ) -> Result<Submission> {
        let mut files = self.files.lock().expect("store lock");
        let submission = Submission {
            id: self.snapshot().next_submission_id(),
            submitter_id: submitter_id.to_string(),
            phase: phase.to_string(),
            payload,
            submitted_at,
        };
        let record = Record::Submission(submission.clone());
        self.write_locked(&mut files, &record)?;
        self.publish(|s| s.apply(record));
        Ok(submission)
    }

    fn write_locked(&self, files: &mut HashMap<String, File>, record: &Record) -> Result<()> {
        let phase = record.phase().to_string();
        if !files.contains_key(&phase) {
            let file = OpenOptions::new().create(true).append(true).open(phase_file(&self.dir, &phase))?;
            files.insert(phase.clone(), file);
        }
        let file = files.get_mut(&phase).expect("inserted above");
        let mut line = serde_json::to_vec(record).map_err(|e| ArenaError::Store(e.to_string()))?;
        line.push(b'\n');
        file.write_all(&line)?;
        file.sync_data()?;
        Ok(())
    }

    fn publish(&self, change: impl FnOnce(&mut Snapshot)) {
        let mut guard = self.snapshot.write().expect("snapshot lock");
        let mut next = Snapshot::clone(&guard);
        change(&mut next);
        *guard = Arc::new(next);
    }
}

/// Latest evaluation per submitter: max `eval_timestamp`, ties by max
/// submission id.
pub fn latest_per_submitter<'a>(records: impl Iterator<Item = &'a EvaluationRecord>) -> Vec<&'a EvaluationRecord> {
    let mut best: BTreeMap<&str, &EvaluationRecord> = BTreeMap::new();
    for r in records {
        let replace = match best.get(r.submitter_id.as_str()) {
            None => true,
            Some(cur) => (r.eval_timestamp, r.submission_id) > (cur.eval_timestamp, cur.submission_id),
        };
        if replace {
            best.insert(&r.submitter_id, r);
        }
    }
    best.into_values().collect()
}
