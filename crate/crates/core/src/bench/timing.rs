use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{EtmaError, Result};
use crate::model::{Batch, EtmaModel};
use crate::nn::Context;
use crate::tensor::Tape;

/// Minimum number of recorded trials.
pub const MIN_TRIALS: usize = 30;

/// Reference latencies from the original large-scale setup, in ms per
/// sample. Kept for context only.
pub const REFERENCE_FEATURE_MS: f64 = 11.6;
pub const REFERENCE_TESTING_MS: f64 = 0.46;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles over `samples`; `None` when empty.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = |q: f64| sorted[((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
        Some(LatencyStats {
            mean: samples.iter().sum::<f64>() / samples.len() as f64,
            p50: rank(0.50),
            p95: rank(0.95),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub variant: String,
    pub feature_formulation_ms_per_sample: LatencyStats,
    pub testing_ms_per_sample: LatencyStats,
    pub trials: usize,
    pub warmup: usize,
    pub machine_note: String,
}

impl TimingReport {
    pub const CSV_HEADER: &'static str = "variant,trials,warmup,feature_mean_ms,feature_p50_ms,feature_p95_ms,testing_mean_ms,testing_p50_ms,testing_p95_ms";

    pub fn to_json_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| EtmaError::Contract(e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let (f, t) = (&self.feature_formulation_ms_per_sample, &self.testing_ms_per_sample);
        format!(
            "{}\n{},{},{},{},{},{},{},{},{}\n",
            Self::CSV_HEADER,
            self.variant,
            self.trials,
            self.warmup,
            f.mean,
            f.p50,
            f.p95,
            t.mean,
            t.p50,
            t.p95
        )
    }
}

fn machine_note() -> String {
    format!(
        "{} {}, {} logical cpus available, single-threaded timing; \
         preprocessing (tokenization, normalization) excluded",
        std::env::consts::OS,
        std::env::consts::ARCH,
        std::thread::available_parallelism().map_or(1, |n| n.get()),
    )
}

/// Times eval-mode inference one sample at a time.
///
/// Each trial runs one sample through the model (cycling over `samples`)
/// and reads the clock twice: once when the fused vector is ready and once
/// after the classifier head. The first `warmup` trials are discarded.
pub fn time_model(model: &EtmaModel, samples: &[Batch], trials: usize, warmup: usize) -> Result<TimingReport> {
    if samples.is_empty() {
        return Err(EtmaError::Contract("timing needs at least one sample".into()));
    }
    if trials < MIN_TRIALS {
        return Err(EtmaError::Config(format!(
            "timing needs at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    if let Some(b) = samples.iter().find(|b| b.len() != 1) {
        return Err(EtmaError::Contract(format!(
            "timing batches must hold one sample each, got {}",
            b.len()
        )));
    }
    let mut features = Vec::with_capacity(trials);
    let mut testing = Vec::with_capacity(trials);
    for i in 0..warmup + trials {
        let batch = &samples[i % samples.len()];
        let mut tape = Tape::with_params(model.params());
        let mut ctx = Context::eval();
        let start = Instant::now();
        let f = model.features(&mut tape, batch, &mut ctx)?;
        let feature_ms = start.elapsed().as_secs_f64() * 1e3;
        let (_, probs) = model.head.forward(&mut tape, f.fused)?;
        std::hint::black_box(tape.value(probs));
        let testing_ms = start.elapsed().as_secs_f64() * 1e3;
        if i >= warmup {
            features.push(feature_ms);
            testing.push(testing_ms);
        }
    }
    Ok(TimingReport {
        variant: model.variant.label().to_string(),
        feature_formulation_ms_per_sample: LatencyStats::from_samples(&features).expect("trials > 0"),
        testing_ms_per_sample: LatencyStats::from_samples(&testing).expect("trials > 0"),
        trials,
        warmup,
        machine_note: machine_note(),
    })
}
