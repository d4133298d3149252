use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::DescriptionRecord;
use crate::error::{Error, Result};

/// Ordered collection of description records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub records: Vec<DescriptionRecord>,
}

impl Corpus {
    pub fn new(records: Vec<DescriptionRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl FromIterator<DescriptionRecord> for Corpus {
    fn from_iter<T: IntoIterator<Item = DescriptionRecord>>(iter: T) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Writes one JSON object per line (UTF-8, LF).
pub fn save_corpus(records: &[DescriptionRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("line {}", i + 1);
        let record: DescriptionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(path.display().to_string(), &location, e.to_string()))?;
        record
            .validate()
            .map_err(|e| Error::format(path.display().to_string(), &location, e.to_string()))?;
        records.push(record);
    }
    Ok(Corpus { records })
}
