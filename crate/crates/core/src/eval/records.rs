//! Generated-captions file: a JSON header line followed by one JSON record
//! per image.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::ArtifactMeta;
use crate::corpus::TokenizedCaption;
use crate::error::{Error, Result};
use crate::knowledge::ContextFact;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    #[serde(flatten)]
    pub caption: TokenizedCaption,
    /// Knowledge context the caption was generated against; `Fact` refs
    /// index into it.
    #[serde(default)]
    pub knowledge: Vec<ContextFact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    meta: ArtifactMeta,
    #[serde(default)]
    variant: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionsFile {
    pub meta: ArtifactMeta,
    pub variant: Option<String>,
    pub records: Vec<CaptionRecord>,
}

impl CaptionsFile {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = Header {
            meta: self.meta.clone(),
            variant: self.variant.clone(),
        };
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", serde_json::to_string(&header)?).map_err(io)?;
        for r in &self.records {
            writeln!(w, "{}", serde_json::to_string(r)?).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let header: Header = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&line).map_err(|e| Error::parse(path, 1, e.to_string()))?
            }
            None => return Err(Error::parse(path, 1, "missing header line")),
        };
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CaptionRecord =
                serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            records.push(rec);
        }
        Ok(CaptionsFile {
            meta: header.meta,
            variant: header.variant,
            records,
        })
    }
}
