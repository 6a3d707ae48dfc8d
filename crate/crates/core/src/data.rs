//! JSONL text collections: one `{"id", "title"?, "text"}` object per line.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub title: String,
    pub text: String,
}

impl TextRecord {
    /// Title and text joined by a space; just the text when untitled.
    pub fn full_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

/// Reads records as `(id, full text)` pairs. Blank lines are skipped; ids
/// must be unique, non-empty and free of whitespace.
pub fn load_texts(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: n + 1, msg };
        let rec: TextRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if rec.id.is_empty() || rec.id.contains(char::is_whitespace) {
            return Err(err(format!("bad id {:?}", rec.id)));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(err(format!("duplicate id {:?}", rec.id)));
        }
        out.push((rec.id.clone(), rec.full_text()));
    }
    Ok(out)
}

/// Writes `(id, text)` pairs without titles.
pub fn save_texts(path: impl AsRef<Path>, texts: &[(String, String)]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (id, text) in texts {
        serde_json::to_writer(&mut w, &TextRecord { id: id.clone(), title: String::new(), text: text.clone() })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
