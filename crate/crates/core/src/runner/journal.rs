use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{RunFailure, RunRecord, RunnerError};

/// One journal line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JournalEntry {
    Record(RunRecord),
    Failure(RunFailure),
}

/// Append-only JSONL journal; concurrent writers serialize on the lock.
pub struct Journal {
    path: PathBuf,
    file: Mutex<File>,
}

impl Journal {
    pub fn open(path: &Path) -> Result<Self, RunnerError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| RunnerError::Io { path: parent.to_path_buf(), source })?;
        }
        let io = |source| RunnerError::Io { path: path.to_path_buf(), source };
        // drop an unterminated tail left by an interrupted write
        if let Ok(bytes) = fs::read(path) {
            if bytes.last().is_some_and(|&b| b != b'\n') {
                let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                log::warn!("{}: truncating torn last line", path.display());
                OpenOptions::new().write(true).open(path).and_then(|f| f.set_len(keep as u64)).map_err(io)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Self { path: path.to_path_buf(), file: Mutex::new(file) })
    }

    pub fn append(&self, entry: &JournalEntry) -> Result<(), RunnerError> {
        let mut line = serde_json::to_string(entry).expect("journal entry serializes");
        line.push('\n');
        let mut file = self.file.lock().expect("journal lock poisoned");
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|source| RunnerError::Io { path: self.path.clone(), source })
    }
}

/// Reads a journal; a missing file is empty. A torn final line from an
/// interrupted write is skipped.
pub fn read_journal(path: &Path) -> Result<Vec<JournalEntry>, RunnerError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => return Err(RunnerError::Io { path: path.to_path_buf(), source }),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| RunnerError::Io { path: path.to_path_buf(), source })?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(entry) => out.push(entry),
            Err(e) if Some(i) == last => log::warn!("{}: ignoring torn last line: {e}", path.display()),
            Err(e) => {
                return Err(RunnerError::Journal(format!("{}:{}: {e}", path.display(), i + 1)));
            }
        }
    }
    Ok(out)
}
