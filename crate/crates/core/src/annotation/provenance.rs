use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, SubsecRound, Utc};
use serde::{Deserialize, Serialize};

use super::{AnnotationMatrix, LabelValue};
use crate::error::{Error, Result};

/// Attribute column used for whole-image unusable flags in the log.
pub const UNUSABLE_FIELD: &str = "__unusable__";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub timestamp: DateTime<Utc>,
    pub image: String,
    pub attribute: String,
    pub old: String,
    pub new: String,
    pub source: String,
}

impl ProvenanceEntry {
    pub fn now(
        image: impl Into<String>,
        attribute: impl Into<String>,
        old: impl Into<String>,
        new: impl Into<String>,
        source: impl Into<String>,
    ) -> Self {
        ProvenanceEntry {
            timestamp: Utc::now().trunc_subsecs(6),
            image: image.into(),
            attribute: attribute.into(),
            old: old.into(),
            new: new.into(),
            // tabs and newlines would break the line format
            source: source.into().replace(['\t', '\n', '\r'], " "),
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.timestamp.to_rfc3339_opts(SecondsFormat::Micros, true),
            self.image,
            self.attribute,
            self.old,
            self.new,
            self.source
        )
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 6 tab-separated fields, found {}", fields.len()),
            });
        }
        let timestamp = DateTime::parse_from_rfc3339(fields[0])
            .map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad timestamp: {e}"),
            })?
            .with_timezone(&Utc);
        Ok(ProvenanceEntry {
            timestamp,
            image: fields[1].to_string(),
            attribute: fields[2].to_string(),
            old: fields[3].to_string(),
            new: fields[4].to_string(),
            source: fields[5].to_string(),
        })
    }
}

/// Append-only record of every mutation applied to a matrix.
#[derive(Debug, Clone, Default)]
pub struct ProvenanceLog {
    entries: Vec<ProvenanceEntry>,
}

impl ProvenanceLog {
    pub fn append(&mut self, entry: ProvenanceEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[ProvenanceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(ProvenanceEntry::parse_line(&line, i + 1)?);
        }
        Ok(ProvenanceLog { entries })
    }

    /// Appends entries `from..` to the file at `path`.
    pub fn append_to_file(&self, path: &Path, from: usize) -> Result<()> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        for entry in &self.entries[from.min(self.entries.len())..] {
            writeln!(file, "{}", entry.to_line()).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Re-applies the log to a snapshot. Each entry's `old` value must match
    /// the snapshot state at that point.
    pub fn replay(&self, snapshot: &mut AnnotationMatrix) -> Result<()> {
        for (n, entry) in self.entries.iter().enumerate() {
            let i = snapshot.image_index(&entry.image)?;
            if entry.attribute == UNUSABLE_FIELD {
                snapshot.write_unusable(i, entry.new == "1");
                continue;
            }
            let a = snapshot.attribute_index(&entry.attribute)?;
            let current = snapshot
                .cell(i, a)
                .ok_or_else(|| Error::ImageUnusable(entry.image.clone()))?;
            if current.to_string() != entry.old {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!(
                        "log expects {} for ({}, {}) but snapshot has {}",
                        entry.old, entry.image, entry.attribute, current
                    ),
                });
            }
            let value: LabelValue = entry.new.parse()?;
            snapshot.write_cell(i, a, value);
        }
        Ok(())
    }
}
