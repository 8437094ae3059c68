use crate::error::{EtmaError, Result};

/// One ROC point: samples with score `>= threshold` are called positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// From `(0, 0)` at threshold `+inf` to `(1, 1)`, one point per distinct score.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// Starts at recall 0, precision 1 (threshold `+inf`).
    pub points: Vec<PrPoint>,
    pub auc: f64,
}

/// Cumulative `(threshold, tp, fp)` after admitting each distinct score,
/// highest first, plus the positive and negative totals.
type Sweep = (Vec<(f64, usize, usize)>, usize, usize);

fn sweep(scores: &[f64], positive: &[bool]) -> Result<Sweep> {
    if scores.len() != positive.len() {
        return Err(EtmaError::dim("curve", &[scores.len()], &[positive.len()]));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EtmaError::Contract("NaN score".into()));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EtmaError::Contract(
            "AUC is undefined unless both classes are present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((s, tp, fp));
    }
    Ok((out, pos, neg))
}

/// ROC curve with the trapezoidal area; tied scores form a single point.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    let (steps, pos, neg) = sweep(scores, positive)?;
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let mut auc = 0.0;
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    for (threshold, tp, fp) in steps {
        // integer trapezoid, scaled by pos·neg at the end
        auc += ((fp - prev_fp) * (tp + prev_tp)) as f64 / 2.0;
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
        (prev_tp, prev_fp) = (tp, fp);
    }
    Ok(RocCurve {
        points,
        auc: auc / (pos * neg) as f64,
    })
}

pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    roc_curve(scores, positive).map(|c| c.auc)
}

/// Precision-recall curve; the area is the right-continuous step sum
/// `Σ (R_i − R_{i−1}) · P_i`.
pub fn pr_curve(scores: &[f64], positive: &[bool]) -> Result<PrCurve> {
    let (steps, pos, _) = sweep(scores, positive)?;
    let mut points = vec![PrPoint {
        threshold: f64::INFINITY,
        recall: 0.0,
        precision: 1.0,
    }];
    let mut auc = 0.0;
    let mut prev_recall = 0.0;
    for (threshold, tp, fp) in steps {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        auc += (recall - prev_recall) * precision;
        points.push(PrPoint {
            threshold,
            recall,
            precision,
        });
        prev_recall = recall;
    }
    Ok(PrCurve { points, auc })
}

pub fn pr_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    pr_curve(scores, positive).map(|c| c.auc)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, by checking every pair.
pub fn pairwise_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(positive)
        .filter(|(_, &p)| !p)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(EtmaError::Contract(
            "AUC is undefined unless both classes are present".into(),
        ));
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

impl RocCurve {
    pub const CSV_HEADER: &'static str = "threshold,fpr,tpr";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for p in &self.points {
            out.push_str(&format!("{:?},{:?},{:?}\n", p.threshold, p.fpr, p.tpr));
        }
        out
    }

    /// Reads the points back; the area is recomputed from them.
    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = parse_rows(text, Self::CSV_HEADER, "roc csv")?;
        let points: Vec<RocPoint> = rows
            .into_iter()
            .map(|[threshold, fpr, tpr]| RocPoint { threshold, fpr, tpr })
            .collect();
        let auc = points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum();
        Ok(RocCurve { points, auc })
    }
}

impl PrCurve {
    pub const CSV_HEADER: &'static str = "threshold,recall,precision";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for p in &self.points {
            out.push_str(&format!("{:?},{:?},{:?}\n", p.threshold, p.recall, p.precision));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = parse_rows(text, Self::CSV_HEADER, "pr csv")?;
        let points: Vec<PrPoint> = rows
            .into_iter()
            .map(|[threshold, recall, precision]| PrPoint {
                threshold,
                recall,
                precision,
            })
            .collect();
        let auc = points
            .windows(2)
            .map(|w| (w[1].recall - w[0].recall) * w[1].precision)
            .sum();
        Ok(PrCurve { points, auc })
    }
}

fn parse_rows(text: &str, header: &str, source: &str) -> Result<Vec<[f64; 3]>> {
    let mut lines = text.lines();
    let err = |line: usize, message: String| EtmaError::Parse {
        source_name: source.to_string(),
        line,
        message,
    };
    if lines.next() != Some(header) {
        return Err(err(1, format!("header must be {header}")));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split(',')
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(i + 2, e.to_string()))?;
            v.try_into()
                .map_err(|v: Vec<f64>| err(i + 2, format!("expected 3 fields, found {}", v.len())))
        })
        .collect()
}
