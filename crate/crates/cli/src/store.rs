//! Directory-backed review store.
//!
//! ```text
//! <dir>/journal.jsonl            append-only, one JournalEntry per line
//! <dir>/annotations/<task>.xml   latest annotation per task
//! ```
//! The journal is the source of truth; the XML files are a convenience copy
//! rewritten on every accepted write.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use seedling_core::data::{write_annotation, AnnotationRecord, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TaskStatus {
    #[default]
    Pending,
    InReview,
    Verified,
}

impl TaskStatus {
    /// Only verified annotations close a task; drafts keep it in review.
    pub fn for_provenance(p: Provenance) -> Self {
        match p {
            Provenance::Verified => TaskStatus::Verified,
            Provenance::Manual | Provenance::Proposed => TaskStatus::InReview,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    pub task: String,
    pub status: TaskStatus,
    pub record: AnnotationRecord,
}

/// Latest state of one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoredTask {
    pub seq: u64,
    pub status: TaskStatus,
    pub record: AnnotationRecord,
}

pub type StoreState = BTreeMap<String, StoredTask>;

/// Folds journal entries in order; later entries for a task replace earlier ones.
pub fn replay<'a>(entries: impl IntoIterator<Item = &'a JournalEntry>) -> StoreState {
    let mut state = StoreState::new();
    for e in entries {
        state.insert(
            e.task.clone(),
            StoredTask {
                seq: e.seq,
                status: e.status,
                record: e.record.clone(),
            },
        );
    }
    state
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub total: usize,
    pub pending: usize,
    pub in_review: usize,
    pub verified: usize,
}

/// Single-writer store; callers serialize access (the service holds it in a mutex).
#[derive(Debug)]
pub struct AnnotationStore {
    dir: PathBuf,
    journal: File,
    state: StoreState,
    next_seq: u64,
}

impl AnnotationStore {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir.join("annotations"))
            .with_context(|| format!("creating store {}", dir.display()))?;
        let path = dir.join("journal.jsonl");
        let entries = if path.exists() {
            read_journal(&path)?
        } else {
            Vec::new()
        };
        let next_seq = entries.last().map_or(0, |e| e.seq + 1);
        let journal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        // cut a torn tail so the next append starts on a fresh line
        let bytes = std::fs::read(&path)?;
        if bytes.last().is_some_and(|&b| b != b'\n') {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            journal.set_len(keep as u64)?;
        }
        Ok(AnnotationStore {
            dir: dir.to_path_buf(),
            journal,
            state: replay(&entries),
            next_seq,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn journal_path(&self) -> PathBuf {
        self.dir.join("journal.jsonl")
    }

    pub fn state(&self) -> &StoreState {
        &self.state
    }

    pub fn get(&self, task: &str) -> Option<&StoredTask> {
        self.state.get(task)
    }

    pub fn status(&self, task: &str) -> TaskStatus {
        self.state
            .get(task)
            .map_or(TaskStatus::Pending, |t| t.status)
    }

    /// Journals `record` for `task` and makes it the task's current state.
    pub fn write(&mut self, task: &str, record: AnnotationRecord) -> Result<JournalEntry> {
        record.validate().map_err(anyhow::Error::from)?;
        let entry = JournalEntry {
            seq: self.next_seq,
            task: task.to_string(),
            status: TaskStatus::for_provenance(record.provenance),
            record,
        };
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        self.journal.write_all(line.as_bytes())?;
        self.journal.sync_data()?;
        self.next_seq += 1;
        write_annotation(
            &entry.record,
            &self.dir.join("annotations").join(format!("{task}.xml")),
        )?;
        self.state.insert(
            task.to_string(),
            StoredTask {
                seq: entry.seq,
                status: entry.status,
                record: entry.record.clone(),
            },
        );
        Ok(entry)
    }

    pub fn progress<'a>(&self, tasks: impl IntoIterator<Item = &'a str>) -> Progress {
        let mut p = Progress::default();
        for t in tasks {
            p.total += 1;
            match self.status(t) {
                TaskStatus::Pending => p.pending += 1,
                TaskStatus::InReview => p.in_review += 1,
                TaskStatus::Verified => p.verified += 1,
            }
        }
        p
    }
}

/// Reads every journal entry. A torn final line (no trailing newline) from an
/// interrupted write is dropped; any other malformed line is an error.
pub fn read_journal(path: &Path) -> Result<Vec<JournalEntry>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let torn_tail = !text.is_empty() && !text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out: Vec<JournalEntry> = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<JournalEntry>(line) {
            Ok(e) => {
                if out.last().is_some_and(|p| p.seq >= e.seq) {
                    bail!(
                        "{} line {}: sequence number {} out of order",
                        path.display(),
                        i + 1,
                        e.seq
                    );
                }
                out.push(e);
            }
            Err(_) if torn_tail && i + 1 == lines.len() => {
                log::warn!("{}: ignoring torn final entry", path.display());
            }
            Err(e) => bail!("{} line {}: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}
