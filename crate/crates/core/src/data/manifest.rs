//! `manifest.csv`: header `id,text,image_path,label`, text always quoted.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::Label;
use crate::error::{EtmaError, Result};
use crate::fsutil;

pub const MANIFEST_HEADER: [&str; 4] = ["id", "text", "image_path", "label"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub text: String,
    /// Relative to the manifest's directory unless absolute.
    pub image_path: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub source: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        let p = Path::new(&record.image_path);
        match self.source.parent() {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn plain_field(what: &str, value: &str) -> Result<()> {
    if value.is_empty() || value.contains([',', '"', '\n', '\r']) {
        return Err(EtmaError::Config(format!(
            "{what} {value:?} must be nonempty without commas, quotes or newlines"
        )));
    }
    Ok(())
}

pub fn encode_manifest(records: &[ManifestRecord]) -> Result<String> {
    let mut out = MANIFEST_HEADER.join(",");
    out.push('\n');
    for r in records {
        plain_field("id", &r.id)?;
        plain_field("image path", &r.image_path)?;
        out.push_str(&format!(
            "{},\"{}\",{},{}\n",
            r.id,
            r.text.replace('"', "\"\""),
            r.image_path,
            r.label
        ));
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    fsutil::write_atomic(path, encode_manifest(records)?.as_bytes())
}

pub fn parse_manifest(text: &str, source: &Path) -> Result<DatasetManifest> {
    let name = source.display().to_string();
    let parse_err = |line: u64, message: String| EtmaError::Parse {
        source_name: name.clone(),
        line: line as usize,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(parse_err(1, format!("header must be {}", MANIFEST_HEADER.join(","))));
    }
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, found {}", row.len())));
        }
        let label = row[3]
            .parse::<Label>()
            .map_err(|_| parse_err(line, format!("label {:?} is neither real nor fake", &row[3])))?;
        if !ids.insert(row[0].to_string()) {
            return Err(parse_err(line, format!("duplicate id {:?}", &row[0])));
        }
        records.push(ManifestRecord {
            id: row[0].to_string(),
            text: row[1].to_string(),
            image_path: row[2].to_string(),
            label,
        });
    }
    Ok(DatasetManifest {
        records,
        source: source.to_path_buf(),
    })
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    parse_manifest(&fsutil::read_to_string(path)?, path)
}
