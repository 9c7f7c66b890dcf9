use serde::{Deserialize, Serialize};

use super::model::{DetectorModel, Graph};
use super::train::MaskedGraphSample;
use crate::error::{Error, Result};

/// Confusion counts with the attacked class as positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(pred: &[bool], truth: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub prec: f64,
    pub f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Metrics {
    /// Undefined ratios (zero denominators) are reported as 0.
    pub fn from_confusion(c: &Confusion) -> Self {
        let tpr = ratio(c.tp, c.tp + c.fn_);
        let prec = ratio(c.tp, c.tp + c.fp);
        let f1 = if prec + tpr > 0.0 { 2.0 * prec * tpr / (prec + tpr) } else { 0.0 };
        Metrics {
            acc: ratio(c.tp + c.tn, c.total()),
            tpr,
            fpr: ratio(c.fp, c.fp + c.tn),
            prec,
            f1,
        }
    }
}

pub fn predict(model: &DetectorModel, graph: &Graph, samples: &[MaskedGraphSample], threshold: f64) -> Vec<bool> {
    samples.iter().map(|s| model.probability(graph, &s.x) >= threshold).collect()
}

pub fn evaluate(model: &DetectorModel, graph: &Graph, samples: &[MaskedGraphSample], threshold: f64) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty test set".into()));
    }
    let pred = predict(model, graph, samples, threshold);
    let truth: Vec<bool> = samples.iter().map(|s| s.label > 0.5).collect();
    Ok(Metrics::from_confusion(&Confusion::from_predictions(&pred, &truth)))
}
