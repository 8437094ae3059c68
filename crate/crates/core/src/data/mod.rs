//! Samples, the synthetic benchmark, dataset directories and preprocessing.

mod augment;
mod image;
mod manifest;
mod normalize;
mod preprocess;
mod split;
mod synthetic;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use augment::{augment, Augmentation};
pub use image::{decode_netpbm, encode_pgm, encode_ppm, from_byte, load_image, save_ppm, to_byte};
pub use manifest::{
    encode_manifest, load_manifest, parse_manifest, write_manifest, DatasetManifest, ManifestRecord, MANIFEST_HEADER,
};
pub use normalize::{ChannelStats, STD_FLOOR};
pub use preprocess::{Preprocessor, PreprocessorRecord};
pub use split::{Split, SplitSpec};
pub use synthetic::{generate_synthetic, synthetic_design, Design, SyntheticSpec};

use crate::error::{EtmaError, Result};
use crate::fsutil;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::Real
        } else {
            Label::Fake
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

impl FromStr for Label {
    type Err = EtmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            _ => Err(EtmaError::Config(format!("unknown label {s:?}"))),
        }
    }
}

/// One post with both modalities. `image` is `h × w × c` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub id: String,
    pub text: String,
    pub image: Tensor,
    pub label: Label,
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SPEC_FILE: &str = "spec.json-lines";
pub const IMAGE_DIR: &str = "images";

/// Writes `manifest.csv`, `images/<id>.ppm` and, when given, the generator
/// spec as a one-line `spec.json-lines`.
pub fn write_dataset(dir: &Path, samples: &[MultimodalSample], spec: Option<&SyntheticSpec>) -> Result<()> {
    fsutil::create_dir_all(&dir.join(IMAGE_DIR))?;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let rel = format!("{IMAGE_DIR}/{}.ppm", s.id);
        save_ppm(&dir.join(&rel), &s.image)?;
        records.push(ManifestRecord {
            id: s.id.clone(),
            text: s.text.clone(),
            image_path: rel,
            label: s.label,
        });
    }
    if let Some(spec) = spec {
        fsutil::write_atomic(&dir.join(SPEC_FILE), fsutil::json_lines(&[spec])?.as_bytes())?;
    }
    write_manifest(&dir.join(MANIFEST_FILE), &records)
}

/// Loads every sample listed in `dir/manifest.csv`. Samples missing either
/// modality (empty text) are rejected.
pub fn load_dataset(dir: &Path) -> Result<Vec<MultimodalSample>> {
    let manifest = load_manifest(&dir.join(MANIFEST_FILE))?;
    manifest
        .records
        .iter()
        .map(|r| {
            if r.text.trim().is_empty() {
                return Err(EtmaError::Contract(format!("sample {:?} has no text", r.id)));
            }
            Ok(MultimodalSample {
                id: r.id.clone(),
                text: r.text.clone(),
                image: load_image(&manifest.resolve(r))?,
                label: r.label,
            })
        })
        .collect()
}

/// The generator spec stored alongside a dataset, if any.
pub fn load_dataset_spec(dir: &Path) -> Result<Option<SyntheticSpec>> {
    let path = dir.join(SPEC_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fsutil::read_to_string(&path)?;
    let line = text.lines().next().unwrap_or("");
    serde_json::from_str(line).map(Some).map_err(|e| EtmaError::Parse {
        source_name: path.display().to_string(),
        line: 1,
        message: e.to_string(),
    })
}
