//! Local examination records: one append-only JSONL file per course.
//!
//! The file is read fully on open to build an in-memory index. A final line
//! cut short by a crash is dropped (and trimmed from the file) with a warning;
//! any other unreadable line is treated as corruption.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::session::{Mode, SessionStatus, StepOutcome};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("record id `{0}` already exists")]
    DuplicateRecordId(String),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("corrupt results file {path}: line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("storage failure: {0}")]
    StorageFailure(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamRecord {
    pub record_id: String,
    pub session_id: String,
    pub user_id: String,
    pub course_id: String,
    pub task_id: String,
    pub mode: Mode,
    pub score_percent: f64,
    pub error_total: u32,
    pub per_step: Vec<StepOutcome>,
    pub started_at: u64,
    pub ended_at: u64,
    pub status: SessionStatus,
}

impl ExamRecord {
    fn check(&self) -> Result<(), StoreError> {
        if self.record_id.is_empty() {
            return Err(StoreError::Malformed("empty record_id".into()));
        }
        if self.mode != Mode::Examination {
            return Err(StoreError::Malformed(format!("mode {:?} is not stored", self.mode)));
        }
        if !(0.0..=100.0).contains(&self.score_percent) {
            return Err(StoreError::Malformed(format!(
                "score {} outside [0, 100]",
                self.score_percent
            )));
        }
        if self.status == SessionStatus::Active {
            return Err(StoreError::Malformed("record of an active session".into()));
        }
        Ok(())
    }
}

/// Every field is optional; records must match all the fields that are set.
/// The time window applies to `started_at`: `since` inclusive, `until` exclusive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub since: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<u64>,
}

impl RecordFilter {
    pub fn user(user_id: impl Into<String>) -> Self {
        RecordFilter {
            user_id: Some(user_id.into()),
            ..Default::default()
        }
    }

    pub fn matches(&self, r: &ExamRecord) -> bool {
        self.user_id.as_ref().is_none_or(|u| *u == r.user_id)
            && self.task_id.as_ref().is_none_or(|t| *t == r.task_id)
            && self.since.is_none_or(|s| r.started_at >= s)
            && self.until.is_none_or(|u| r.started_at < u)
    }
}

#[derive(Debug)]
pub struct ResultsStore {
    file: Option<(PathBuf, File)>,
    records: Vec<ExamRecord>,
    ids: HashSet<String>,
    warnings: Vec<String>,
}

/// Conventional location of a course's results file.
pub fn results_path(dir: &Path, course_id: &str) -> PathBuf {
    dir.join(format!("{course_id}.jsonl"))
}

impl ResultsStore {
    /// A store that lives only as long as the process.
    pub fn in_memory() -> Self {
        ResultsStore {
            file: None,
            records: Vec::new(),
            ids: HashSet::new(),
            warnings: Vec::new(),
        }
    }

    /// Opens (creating if needed) `<dir>/<course_id>.jsonl`.
    pub fn open(dir: &Path, course_id: &str) -> Result<Self, StoreError> {
        fs::create_dir_all(dir)?;
        ResultsStore::open_file(&results_path(dir, course_id))
    }

    pub fn open_file(path: &Path) -> Result<Self, StoreError> {
        let mut store = ResultsStore::in_memory();
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };

        let mut good_len = 0usize;
        let mut offset = 0usize;
        let mut line_no = 0usize;
        let mut needs_newline = false;
        while offset < bytes.len() {
            line_no += 1;
            let (line, next, terminated) = match bytes[offset..].iter().position(|b| *b == b'\n') {
                Some(i) => (&bytes[offset..offset + i], offset + i + 1, true),
                None => (&bytes[offset..], bytes.len(), false),
            };
            let text = String::from_utf8_lossy(line);
            if !text.trim().is_empty() {
                match serde_json::from_str::<ExamRecord>(&text) {
                    Ok(rec) => {
                        if !store.ids.insert(rec.record_id.clone()) {
                            return Err(StoreError::Corrupt {
                                path: path.to_path_buf(),
                                line: line_no,
                                message: format!("duplicate record id `{}`", rec.record_id),
                            });
                        }
                        store.records.push(rec);
                        needs_newline = !terminated;
                    }
                    Err(e) if !terminated => {
                        let msg = format!(
                            "{}: skipping truncated final line {line_no} ({} bytes): {e}",
                            path.display(),
                            line.len()
                        );
                        log::warn!("{msg}");
                        store.warnings.push(msg);
                        break;
                    }
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            path: path.to_path_buf(),
                            line: line_no,
                            message: e.to_string(),
                        })
                    }
                }
            }
            good_len = next;
            offset = next;
        }

        let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
        if (good_len as u64) < file.metadata()?.len() {
            file.set_len(good_len as u64)?;
        }
        if needs_newline {
            file.write_all(b"\n")?;
        }
        file.sync_data()?;
        store.file = Some((path.to_path_buf(), file));
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    /// Problems tolerated while opening (e.g. a truncated tail).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn append(&mut self, record: ExamRecord) -> Result<(), StoreError> {
        record.check()?;
        if self.ids.contains(&record.record_id) {
            return Err(StoreError::DuplicateRecordId(record.record_id));
        }
        if let Some((_, file)) = self.file.as_mut() {
            let mut line = serde_json::to_vec(&record).map_err(|e| StoreError::Malformed(e.to_string()))?;
            line.push(b'\n');
            // One write per record keeps appends atomic at line granularity.
            file.write_all(&line)?;
            file.sync_data()?;
        }
        self.ids.insert(record.record_id.clone());
        self.records.push(record);
        Ok(())
    }

    /// Matching records in append order.
    pub fn query(&self, filter: &RecordFilter) -> Vec<ExamRecord> {
        self.records.iter().filter(|r| filter.matches(r)).cloned().collect()
    }

    /// Writes every record as one JSON object per line.
    pub fn export<W: Write>(&self, mut out: W) -> Result<usize, StoreError> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(|e| StoreError::StorageFailure(e.into()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(self.records.len())
    }

    /// Appends every record of a JSONL stream produced by [`export`](Self::export).
    pub fn import<R: BufRead>(&mut self, input: R) -> Result<usize, StoreError> {
        let mut n = 0;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ExamRecord = serde_json::from_str(&line)
                .map_err(|e| StoreError::Malformed(format!("import line {}: {e}", i + 1)))?;
            self.append(rec)?;
            n += 1;
        }
        Ok(n)
    }
}

/// Sink the session engine hands finished examinations to.
pub trait ExamRecorder: Send + Sync {
    fn record(&self, record: ExamRecord) -> Result<(), StoreError>;
}

impl ExamRecorder for Mutex<ResultsStore> {
    fn record(&self, record: ExamRecord) -> Result<(), StoreError> {
        self.lock().unwrap_or_else(|e| e.into_inner()).append(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(id: &str, user: &str, started_at: u64) -> ExamRecord {
        ExamRecord {
            record_id: id.to_string(),
            session_id: format!("sess-{id}"),
            user_id: user.to_string(),
            course_id: "c".into(),
            task_id: "t1".into(),
            mode: Mode::Examination,
            score_percent: 50.0,
            error_total: 1,
            per_step: vec![StepOutcome {
                step_id: "s1".into(),
                correct: true,
                error_count: 0,
                completed_at: started_at + 10,
            }],
            started_at,
            ended_at: started_at + 20,
            status: SessionStatus::Completed,
        }
    }

    #[test]
    fn append_then_query_by_user() {
        let mut s = ResultsStore::in_memory();
        s.append(record("r1", "u1", 0)).unwrap();
        s.append(record("r2", "u2", 0)).unwrap();
        let got = s.query(&RecordFilter::user("u1"));
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].record_id, "r1");
        assert_eq!(s.query(&RecordFilter::default()).len(), 2);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut s = ResultsStore::in_memory();
        s.append(record("r1", "u1", 0)).unwrap();
        assert!(matches!(
            s.append(record("r1", "u1", 0)),
            Err(StoreError::DuplicateRecordId(_))
        ));
    }

    #[test]
    fn malformed_records_rejected() {
        let mut s = ResultsStore::in_memory();
        let mut r = record("r1", "u1", 0);
        r.score_percent = 101.0;
        assert!(matches!(s.append(r), Err(StoreError::Malformed(_))));
        let mut r = record("r2", "u1", 0);
        r.mode = Mode::Teaching;
        assert!(matches!(s.append(r), Err(StoreError::Malformed(_))));
    }

    #[test]
    fn hundred_appends_keep_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ResultsStore::open(dir.path(), "c").unwrap();
        for i in 0..100 {
            s.append(record(&format!("r{i:03}"), "u1", i)).unwrap();
        }
        let ids: Vec<String> = s
            .query(&RecordFilter::default())
            .into_iter()
            .map(|r| r.record_id)
            .collect();
        let expected: Vec<String> = (0..100).map(|i| format!("r{i:03}")).collect();
        assert_eq!(ids, expected);
    }

    #[test]
    fn time_window_matches_linear_scan() {
        let mut s = ResultsStore::in_memory();
        let starts = [5u64, 100, 42, 7, 300, 99, 100, 0];
        for (i, t) in starts.iter().enumerate() {
            s.append(record(&format!("r{i}"), if i % 2 == 0 { "u1" } else { "u2" }, *t))
                .unwrap();
        }
        for since in [None, Some(0), Some(7), Some(100)] {
            for until in [None, Some(8), Some(100), Some(301)] {
                let f = RecordFilter {
                    since,
                    until,
                    ..Default::default()
                };
                let mut expected = Vec::new();
                for (i, t) in starts.iter().enumerate() {
                    let lo = since.is_none_or(|s| *t >= s);
                    let hi = until.is_none_or(|u| *t < u);
                    if lo && hi {
                        expected.push(format!("r{i}"));
                    }
                }
                let got: Vec<String> = s.query(&f).into_iter().map(|r| r.record_id).collect();
                assert_eq!(got, expected, "since={since:?} until={until:?}");
            }
        }
    }

    #[test]
    fn export_lines_parse_and_reimport_identically() {
        let mut s = ResultsStore::in_memory();
        let mut buf = Vec::new();
        assert_eq!(s.export(&mut buf).unwrap(), 0);
        assert!(buf.is_empty());

        for i in 0..3 {
            s.append(record(&format!("r{i}"), "u1", i)).unwrap();
        }
        let mut buf = Vec::new();
        assert_eq!(s.export(&mut buf).unwrap(), 3);
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        for line in text.lines() {
            serde_json::from_str::<serde_json::Value>(line).unwrap();
        }
        let mut fresh = ResultsStore::in_memory();
        assert_eq!(fresh.import(buf.as_slice()).unwrap(), 3);
        assert_eq!(fresh.query(&RecordFilter::default()), s.query(&RecordFilter::default()));
    }
}
