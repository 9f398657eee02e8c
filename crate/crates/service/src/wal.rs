//! Append-only stroke log, one per slide and correction round.
//!
//! Each event is one JSON line. A batch is written with a single write and
//! synced before the request is acknowledged. On reopen, a torn final line
//! from a crash mid-write is cut off; a malformed line anywhere else is an
//! error, since it would mean losing acknowledged strokes.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::strokes::Stroke;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LogEvent {
    Stroke {
        id: u64,
        stroke: Stroke,
    },
    /// Tombstone for an earlier stroke.
    Undo {
        id: u64,
    },
}

#[derive(Debug)]
pub struct StrokeLog {
    path: PathBuf,
    file: File,
    events: Vec<LogEvent>,
}

fn corrupt(path: &Path, line: usize, e: impl std::fmt::Display) -> io::Error {
    io::Error::new(
        io::ErrorKind::InvalidData,
        format!("{} line {}: {e}", path.display(), line + 1),
    )
}

impl StrokeLog {
    pub fn open(path: impl Into<PathBuf>) -> io::Result<StrokeLog> {
        let path = path.into();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e),
        };
        let mut events = Vec::new();
        let mut good = 0;
        let mut lines = bytes
            .split_inclusive(|&b| b == b'\n')
            .enumerate()
            .peekable();
        while let Some((i, line)) = lines.next() {
            let complete = line.ends_with(b"\n");
            match serde_json::from_slice::<LogEvent>(line) {
                Ok(ev) if complete => {
                    events.push(ev);
                    good += line.len();
                }
                // Only the last line may be torn.
                _ if lines.peek().is_none() && !complete => break,
                Ok(_) => unreachable!("complete lines end with a newline"),
                Err(e) => return Err(corrupt(&path, i, e)),
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(&path)?;
        if good < bytes.len() {
            file.set_len(good as u64)?;
            file.sync_data()?;
        }
        Ok(StrokeLog { path, file, events })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn events(&self) -> &[LogEvent] {
        &self.events
    }

    /// Number of events ever appended; changes with every write.
    pub fn version(&self) -> usize {
        self.events.len()
    }

    pub fn next_id(&self) -> u64 {
        self.events
            .iter()
            .filter_map(|e| match e {
                LogEvent::Stroke { id, .. } => Some(id + 1),
                LogEvent::Undo { .. } => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Strokes not undone, in the order they were drawn.
    pub fn live(&self) -> Vec<(u64, &Stroke)> {
        let undone: std::collections::HashSet<u64> = self
            .events
            .iter()
            .filter_map(|e| match e {
                LogEvent::Undo { id } => Some(*id),
                LogEvent::Stroke { .. } => None,
            })
            .collect();
        self.events
            .iter()
            .filter_map(|e| match e {
                LogEvent::Stroke { id, stroke } if !undone.contains(id) => Some((*id, stroke)),
                _ => None,
            })
            .collect()
    }

    pub fn live_strokes(&self) -> Vec<Stroke> {
        self.live().into_iter().map(|(_, s)| s.clone()).collect()
    }

    /// Durably appends a batch; the events are visible only once synced.
    pub fn append(&mut self, batch: &[LogEvent]) -> io::Result<()> {
        let mut buf = Vec::new();
        for ev in batch {
            serde_json::to_writer(&mut buf, ev).map_err(io::Error::other)?;
            buf.push(b'\n');
        }
        self.file.write_all(&buf)?;
        self.file.sync_data()?;
        self.events.extend_from_slice(batch);
        Ok(())
    }
}
