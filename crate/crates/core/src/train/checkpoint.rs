//! Single-file checkpoints: `"ETMK"`, version `u16`, header length `u64`,
//! JSON header, parameter count `u32`, then per parameter a `u32` name
//! length, the UTF-8 name and one tensor record.

use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{sha256_hex, TrainConfig};
use crate::data::{Preprocessor, PreprocessorRecord};
use crate::error::{EtmaError, Result};
use crate::fsutil;
use crate::model::{AblationVariant, EtmaModel};
use crate::tensor::{read_tensor, write_tensor, Rng};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ETMK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Metadata stored ahead of the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub variant: String,
    pub config_hash: String,
    /// Epoch (1-based) whose parameters are stored; 0 for an untrained model.
    pub epoch: usize,
    pub val_accuracy: Option<f64>,
    pub config: String,
    pub preprocess_hash: String,
    pub preprocess: PreprocessorRecord,
}

/// A model together with the preprocessing and configuration it was trained with.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub config: TrainConfig,
    pub preprocessor: Preprocessor,
    pub model: EtmaModel,
}

/// Hash identifying fitted preprocessing (vocabulary, stopwords, image statistics, `n_max`).
pub fn preprocess_hash(pre: &Preprocessor) -> String {
    let json = serde_json::to_string(&pre.to_record()).expect("record serializes");
    sha256_hex(json.as_bytes())
}

impl Checkpoint {
    pub fn new(
        model: EtmaModel,
        config: TrainConfig,
        preprocessor: Preprocessor,
        epoch: usize,
        val_accuracy: Option<f64>,
    ) -> Self {
        let header = CheckpointHeader {
            variant: model.variant.label().to_string(),
            config_hash: config.hash(),
            epoch,
            val_accuracy,
            config: config.to_text(),
            preprocess_hash: preprocess_hash(&preprocessor),
            preprocess: preprocessor.to_record(),
        };
        Checkpoint {
            header,
            config,
            preprocessor,
            model,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| EtmaError::Contract(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let params = self.model.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (_, p) in params.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            write_tensor(&mut out, &p.value).map_err(|e| EtmaError::Contract(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        read(&mut r, &mut magic, "checkpoint magic")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(EtmaError::Format {
                expected: "checkpoint magic ETMK".into(),
                found: format!("{magic:?}"),
            });
        }
        let version = u16::from_le_bytes(take(&mut r, "checkpoint version")?);
        if version != CHECKPOINT_VERSION {
            return Err(EtmaError::Format {
                expected: format!("checkpoint version {CHECKPOINT_VERSION}"),
                found: format!("version {version}"),
            });
        }
        let header_len = u64::from_le_bytes(take(&mut r, "header length")?) as usize;
        if header_len > bytes.len() {
            return Err(EtmaError::Format {
                expected: format!("{header_len}-byte header"),
                found: format!("{}-byte file", bytes.len()),
            });
        }
        let mut header = vec![0u8; header_len];
        read(&mut r, &mut header, "checkpoint header")?;
        let header: CheckpointHeader = serde_json::from_slice(&header).map_err(|e| EtmaError::Format {
            expected: "JSON checkpoint header".into(),
            found: e.to_string(),
        })?;

        let config = TrainConfig::parse(&header.config, "checkpoint config")?;
        if config.hash() != header.config_hash {
            return Err(EtmaError::Format {
                expected: format!("config hash {}", header.config_hash),
                found: config.hash(),
            });
        }
        let variant: AblationVariant = header.variant.parse()?;
        let preprocessor = Preprocessor::from_record(header.preprocess.clone())?;
        let model_cfg = config.model_config(preprocessor.vocab.size());
        let mut model = EtmaModel::build(&model_cfg, variant, &mut Rng::new(0))?;

        let count = u32::from_le_bytes(take(&mut r, "parameter count")?) as usize;
        let mut named = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = u32::from_le_bytes(take(&mut r, "parameter name length")?) as usize;
            if len > bytes.len() {
                return Err(EtmaError::Format {
                    expected: "parameter name".into(),
                    found: format!("length {len}"),
                });
            }
            let mut name = vec![0u8; len];
            read(&mut r, &mut name, "parameter name")?;
            let name = String::from_utf8(name).map_err(|e| EtmaError::Format {
                expected: "UTF-8 parameter name".into(),
                found: e.to_string(),
            })?;
            named.push((name, read_tensor(&mut r)?));
        }
        if (r.position() as usize) != bytes.len() {
            return Err(EtmaError::Format {
                expected: "end of checkpoint".into(),
                found: format!("{} trailing bytes", bytes.len() - r.position() as usize),
            });
        }
        model.params_mut().load_named(named)?;
        Ok(Checkpoint {
            header,
            config,
            preprocessor,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsutil::read(path)?)
    }
}

fn read(r: &mut Cursor<&[u8]>, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| EtmaError::Format {
        expected: what.to_string(),
        found: "end of input".into(),
    })
}

fn take<const N: usize>(r: &mut Cursor<&[u8]>, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read(r, &mut b, what)?;
    Ok(b)
}
