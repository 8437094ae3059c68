use std::io::Write;

use serde::Serialize;

use super::{load_compatible, load_nonempty, prepare_out, say, write, VizArgs};
use crate::data::{encode_pgm, Label, MultimodalSample};
use crate::embed::normalize_text;
use crate::error::{EtmaError, Result};
use crate::fsutil;
use crate::nn::Context;
use crate::tensor::Tape;
use crate::train::Checkpoint;

/// Region attention, token saliency and prediction for one sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionMap {
    pub id: String,
    /// Regions per column and per row.
    pub grid: (usize, usize),
    /// Row-major region weights.
    pub alpha: Vec<f64>,
    /// `(word, vocabulary token, saliency)` for every real text position.
    pub tokens: Vec<(String, String, f64)>,
    pub p_fake: f64,
    pub predicted: Label,
    pub label: Label,
}

impl AttentionMap {
    /// Region with the largest weight.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &a) in self.alpha.iter().enumerate() {
            if a > self.alpha[best] {
                best = i;
            }
        }
        best
    }

    /// Grayscale levels at `patch`-pixel resolution, scaled so the largest
    /// weight is 255.
    pub fn heatmap(&self, patch: usize) -> Vec<u8> {
        let (gh, gw) = self.grid;
        let peak = self.alpha.iter().copied().fold(0.0, f64::max);
        let (h, w) = (gh * patch, gw * patch);
        let mut levels = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let a = self.alpha[(y / patch) * gw + x / patch];
                let v = if peak > 0.0 { a / peak * 255.0 } else { 0.0 };
                levels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        levels
    }
}

/// Runs `sample` through the checkpoint and collects its region weights
/// and the gradient norm of P(fake) at each text embedding.
pub fn attention_map(ck: &Checkpoint, sample: &MultimodalSample) -> Result<AttentionMap> {
    let model = &ck.model;
    if model.vs_attention.is_none() {
        return Err(EtmaError::Config(format!(
            "variant {} has no visual-semantic attention to show",
            model.variant.label()
        )));
    }
    let pre = &ck.preprocessor;
    let batch = pre.batch(&[sample], None);
    let mut tape = Tape::with_params(model.params());
    let out = model.forward(&mut tape, &batch, &mut Context::eval())?;
    let alpha = tape
        .value(out.features.vs_weights.expect("variant has region weights"))
        .data()
        .to_vec();
    let probs = tape.value(out.probs).data().to_vec();
    let fake = tape.slice(out.probs, 1, 1, 1)?;
    let fake = tape.sum_all(fake);
    let emb = out.features.text_embeddings.expect("variant has text");
    let grads = tape.backward_retaining(fake, &[emb])?;
    let d = model.config.dim;
    let g = grads
        .get(emb)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; pre.n_max * d]);

    let words = normalize_text(&sample.text, &pre.stopwords);
    let tokens = batch
        .ids
        .iter()
        .zip(&batch.mask)
        .enumerate()
        .take_while(|(_, (_, &m))| m)
        .map(|(i, (&id, _))| {
            let word = if i == 0 {
                "[CLS]".to_string()
            } else {
                words[i - 1].clone()
            };
            let token = pre.vocab.token(id).unwrap_or("[UNK]").to_string();
            let norm = g[i * d..(i + 1) * d].iter().map(|x| x * x).sum::<f64>().sqrt();
            (word, token, norm)
        })
        .collect();

    let (h, w, _) = ck.config.image_size;
    let p = ck.config.patch;
    Ok(AttentionMap {
        id: sample.id.clone(),
        grid: (h / p, w / p),
        alpha,
        tokens,
        p_fake: probs[1],
        predicted: Label::from_index(usize::from(probs[1] > probs[0])),
        label: sample.label,
    })
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    id: &'a str,
    predicted: Label,
    label: Label,
    p_real: f64,
    p_fake: f64,
    argmax_region: usize,
}

pub(super) fn viz_attn(a: &VizArgs, log: &mut dyn Write) -> Result<()> {
    let samples = load_nonempty(&a.data)?;
    let sample = samples
        .iter()
        .find(|s| s.id == a.sample_id)
        .ok_or_else(|| EtmaError::Config(format!("no sample with id {:?} in {}", a.sample_id, a.data.display())))?;
    let ck = load_compatible(&a.checkpoint, &samples)?;
    let map = attention_map(&ck, sample)?;
    prepare_out(&a.out, a.force)?;

    let patch = ck.config.patch;
    let (gh, gw) = map.grid;
    let pgm = encode_pgm(gh * patch, gw * patch, &map.heatmap(patch))?;
    fsutil::write_atomic(&a.out.join("heatmap.pgm"), &pgm)?;

    let mut alpha = String::from("region,row,col,alpha\n");
    for (r, v) in map.alpha.iter().enumerate() {
        alpha.push_str(&format!("{r},{},{},{v}\n", r / gw, r % gw));
    }
    write(&a.out.join("alpha.csv"), &alpha)?;

    let mut tokens = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| EtmaError::Contract(e.to_string());
    tokens
        .write_record(["position", "word", "token", "saliency"])
        .map_err(csv_err)?;
    for (i, (word, token, s)) in map.tokens.iter().enumerate() {
        tokens
            .write_record([i.to_string(), word.clone(), token.clone(), s.to_string()])
            .map_err(csv_err)?;
    }
    let tokens = tokens.into_inner().map_err(|e| EtmaError::Contract(e.to_string()))?;
    fsutil::write_atomic(&a.out.join("tokens.csv"), &tokens)?;

    let rec = PredictionRecord {
        id: &map.id,
        predicted: map.predicted,
        label: map.label,
        p_real: 1.0 - map.p_fake,
        p_fake: map.p_fake,
        argmax_region: map.argmax(),
    };
    write(&a.out.join("prediction.json-lines"), &fsutil::json_lines(&[rec])?)?;
    say!(
        log,
        "sample {}: predicted {} (p_fake {:.4}), label {}",
        map.id,
        map.predicted,
        map.p_fake,
        map.label
    );
    say!(log, "attention peaks at region {} of {}", map.argmax(), map.alpha.len());
    say!(log, "wrote heatmap.pgm, alpha.csv, tokens.csv to {}", a.out.display());
    Ok(())
}
