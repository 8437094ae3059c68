use serde::{Deserialize, Serialize};

use super::augment::augment;
use super::normalize::ChannelStats;
use super::MultimodalSample;
use crate::embed::{normalize_text, StopWords, Vocabulary};
use crate::error::{EtmaError, Result};
use crate::model::Batch;
use crate::tensor::Rng;

/// Everything fitted on the training split that turns raw samples into
/// model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub vocab: Vocabulary,
    pub stopwords: StopWords,
    pub stats: ChannelStats,
    pub n_max: usize,
}

/// Serializable form of a [`Preprocessor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessorRecord {
    pub vocab: Vec<String>,
    pub stopwords: Vec<String>,
    pub stats: ChannelStats,
    pub n_max: usize,
}

impl Preprocessor {
    pub fn fit(train: &[&MultimodalSample], n_max: usize, min_freq: usize, stopwords: StopWords) -> Result<Self> {
        if train.is_empty() {
            return Err(EtmaError::Contract("cannot fit preprocessing on an empty split".into()));
        }
        let docs: Vec<Vec<String>> = train.iter().map(|s| normalize_text(&s.text, &stopwords)).collect();
        let vocab = Vocabulary::build(docs.iter().map(Vec::as_slice), min_freq);
        let stats = ChannelStats::compute(train.iter().map(|s| &s.image))?;
        Ok(Preprocessor {
            vocab,
            stopwords,
            stats,
            n_max,
        })
    }

    /// Builds a batch; when `rng` is given each image is augmented first.
    pub fn batch(&self, samples: &[&MultimodalSample], mut rng: Option<&mut Rng>) -> Batch {
        let mut batch = Batch::default();
        for s in samples {
            let image = match rng.as_deref_mut() {
                Some(r) => augment(&s.image, r),
                None => s.image.clone(),
            };
            batch.images.push(self.stats.normalize(&image));
            let (ids, mask) = self.vocab.encode(&s.text, &self.stopwords, self.n_max);
            batch.ids.extend(ids);
            batch.mask.extend(mask);
            batch.labels.push(s.label.index());
        }
        batch
    }

    pub fn to_record(&self) -> PreprocessorRecord {
        PreprocessorRecord {
            vocab: self.vocab.tokens().to_vec(),
            stopwords: self.stopwords.words(),
            stats: self.stats.clone(),
            n_max: self.n_max,
        }
    }

    pub fn from_record(r: PreprocessorRecord) -> Result<Self> {
        let mut text = r.vocab.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        Ok(Preprocessor {
            vocab: Vocabulary::from_text(&text)?,
            stopwords: StopWords::from_words(r.stopwords),
            stats: r.stats,
            n_max: r.n_max,
        })
    }
}
