//! Extraction and classification metrics and the evaluation report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Attribute, DataPoint, ATTRIBUTES};
use crate::error::{Error, Result};
use crate::model::Model;

/// Predicted and gold token masks of one example and attribute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPair {
    pub predicted: Vec<bool>,
    pub gold: Vec<bool>,
}

impl MaskPair {
    pub fn new(predicted: Vec<bool>, gold: Vec<bool>) -> Result<Self> {
        if predicted.len() != gold.len() {
            return Err(Error::Shape {
                op: "mask_pair",
                detail: format!("predicted {} vs gold {}", predicted.len(), gold.len()),
            });
        }
        Ok(Self { predicted, gold })
    }
}

/// `2TP / (2TP + FP + FN)`, or 0 when nothing is positive on either side.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// `(TP, FP, FN)` over every token of every pair.
pub fn token_counts(pairs: &[MaskPair]) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for p in pairs {
        for (&a, &b) in p.predicted.iter().zip(&p.gold) {
            match (a, b) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    (tp, fp, fn_)
}

/// Micro F1 of the positive class over the pooled tokens.
pub fn token_f1(pairs: &[MaskPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Invalid("token_f1 needs at least one pair".into()));
    }
    let (tp, fp, fn_) = token_counts(pairs);
    Ok(f1_from_counts(tp, fp, fn_))
}

/// Longest run of positions where both masks are set.
pub fn lcs_length(pair: &MaskPair) -> usize {
    let mut best = 0;
    let mut run = 0;
    for (&a, &b) in pair.predicted.iter().zip(&pair.gold) {
        run = if a && b { run + 1 } else { 0 };
        best = best.max(run);
    }
    best
}

/// LCS F1 of one pair; `None` when the gold mask is empty.
pub fn lcsf1_pair(pair: &MaskPair) -> Option<f64> {
    let gold = pair.gold.iter().filter(|&&g| g).count();
    if gold == 0 {
        return None;
    }
    let pred = pair.predicted.iter().filter(|&&p| p).count();
    let lcs = lcs_length(pair) as f64;
    let recall = lcs / gold as f64;
    let precision = if pred == 0 { 0.0 } else { lcs / pred as f64 };
    Some(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LcsF1 {
    /// Mean over pairs with non-empty gold; `None` if there are none.
    pub score: Option<f64>,
    pub included: usize,
    pub skipped_empty_gold: usize,
}

pub fn lcsf1(pairs: &[MaskPair]) -> LcsF1 {
    let scores: Vec<f64> = pairs.iter().filter_map(lcsf1_pair).collect();
    LcsF1 {
        score: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
        included: scores.len(),
        skipped_empty_gold: pairs.len() - scores.len(),
    }
}

/// Macro F1 over the classes that occur in the gold labels or predictions.
pub fn classification_f1(preds: &[usize], golds: &[usize], n_classes: usize) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::Shape {
            op: "classification_f1",
            detail: format!("{} predictions vs {} labels", preds.len(), golds.len()),
        });
    }
    if preds.is_empty() {
        return Err(Error::Invalid("classification_f1 needs at least one example".into()));
    }
    if let Some(&bad) = preds.iter().chain(golds).find(|&&c| c >= n_classes) {
        return Err(Error::Invalid(format!("class id {bad} out of range for {n_classes} classes")));
    }
    let mut tp = vec![0; n_classes];
    let mut fp = vec![0; n_classes];
    let mut fn_ = vec![0; n_classes];
    for (&p, &g) in preds.iter().zip(golds) {
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let present: Vec<usize> = (0..n_classes).filter(|&c| tp[c] + fp[c] + fn_[c] > 0).collect();
    let total: f64 = present.iter().map(|&c| f1_from_counts(tp[c], fp[c], fn_[c])).sum();
    Ok(total / present.len() as f64)
}

/// Number of maximal runs of set positions.
pub fn segment_count(mask: &[bool]) -> usize {
    let mut count = 0;
    let mut prev = false;
    for &m in mask {
        if m && !prev {
            count += 1;
        }
        prev = m;
    }
    count
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub attribute: Attribute,
    pub classification_f1: f64,
    /// Absent when no example carries spans for this attribute.
    pub tf1: Option<f64>,
    pub lcsf1: Option<f64>,
    pub span_pairs: usize,
    pub skipped_empty_gold: usize,
    pub mean_segment_count: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub n_examples: usize,
    pub n_span_examples: usize,
    pub attributes: Vec<AttributeReport>,
    pub macro_classification_f1: f64,
    pub macro_tf1: Option<f64>,
    pub macro_lcsf1: Option<f64>,
    pub mean_segment_count: f64,
}

fn mean3(xs: [Option<f64>; 3]) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.into_iter().collect();
    v.map(|v| v.iter().sum::<f64>() / 3.0)
}

/// Assembles a report from per-example class predictions and span masks.
pub fn evaluate_predictions(
    system: &str,
    data: &[DataPoint],
    predictions: &[([usize; 3], [Vec<bool>; 3])],
) -> Result<EvalReport> {
    if data.len() != predictions.len() {
        return Err(Error::Shape {
            op: "evaluate",
            detail: format!("{} examples vs {} predictions", data.len(), predictions.len()),
        });
    }
    if data.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty dataset".into()));
    }
    let mut attributes = Vec::with_capacity(3);
    for a in ATTRIBUTES {
        let k = a.index();
        let preds: Vec<usize> = predictions.iter().map(|p| p.0[k]).collect();
        let golds: Vec<usize> = data.iter().map(|d| d.label(a)).collect();
        let mut pairs = Vec::new();
        let mut segments = 0usize;
        for (dp, (_, masks)) in data.iter().zip(predictions) {
            if masks[k].len() != dp.len() {
                return Err(Error::Shape {
                    op: "evaluate",
                    detail: format!("{}: {a} mask length {} vs {} tokens", dp.id, masks[k].len(), dp.len()),
                });
            }
            segments += segment_count(&masks[k]);
            if let Some(gold) = dp.gold_mask(a) {
                pairs.push(MaskPair::new(masks[k].clone(), gold)?);
            }
        }
        let lcs = lcsf1(&pairs);
        attributes.push(AttributeReport {
            attribute: a,
            classification_f1: classification_f1(&preds, &golds, a.num_classes())?,
            tf1: if pairs.is_empty() { None } else { Some(token_f1(&pairs)?) },
            lcsf1: lcs.score,
            span_pairs: pairs.len(),
            skipped_empty_gold: lcs.skipped_empty_gold,
            mean_segment_count: segments as f64 / data.len() as f64,
        });
    }
    let pick = |f: fn(&AttributeReport) -> Option<f64>| mean3([f(&attributes[0]), f(&attributes[1]), f(&attributes[2])]);
    Ok(EvalReport {
        system: system.to_string(),
        n_examples: data.len(),
        n_span_examples: data.iter().filter(|d| d.has_spans()).count(),
        macro_classification_f1: pick(|r| Some(r.classification_f1)).expect("always present"),
        macro_tf1: pick(|r| r.tf1),
        macro_lcsf1: pick(|r| r.lcsf1),
        mean_segment_count: pick(|r| Some(r.mean_segment_count)).expect("always present"),
        attributes,
    })
}

/// Evaluates a model with its current projection and thresholds.
pub fn evaluate(model: &Model, data: &[DataPoint]) -> Result<EvalReport> {
    let preds = data
        .iter()
        .map(|d| model.predict_point(d).map(|p| (p.classes, p.masks)))
        .collect::<Result<Vec<_>>>()?;
    let name = format!("{}+{}", model.cfg.scorer, model.cfg.projection.kind);
    evaluate_predictions(&name, data, &preds)
}

/// Predictions equal to the gold labels and spans (empty masks where the
/// example has no spans).
pub fn oracle_predictions(data: &[DataPoint]) -> Vec<([usize; 3], [Vec<bool>; 3])> {
    data.iter()
        .map(|d| {
            (
                d.labels,
                ATTRIBUTES.map(|a| d.gold_mask(a).unwrap_or_else(|| vec![false; d.len()])),
            )
        })
        .collect()
}

impl EvalReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("reports always serialize")
    }

    pub fn to_table(&self) -> String {
        let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{}: {} examples, {} with spans",
            self.system, self.n_examples, self.n_span_examples
        );
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>8} {:>8} {:>9}",
            "attribute", "TF1", "LCSF1", "ClsF1", "segments"
        );
        for r in &self.attributes {
            let _ = writeln!(
                out,
                "{:<10} {:>8} {:>8} {:>8.4} {:>9.3}",
                r.attribute.name(),
                fmt(r.tf1),
                fmt(r.lcsf1),
                r.classification_f1,
                r.mean_segment_count
            );
        }
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>8} {:>8.4} {:>9.3}",
            "macro",
            fmt(self.macro_tf1),
            fmt(self.macro_lcsf1),
            self.macro_classification_f1,
            self.mean_segment_count
        );
        out
    }
}
