use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layout::{Normalizer, ObservationLayout};
use super::loss::{LossParts, LossWeights, LqMode};
use super::metrics::{evaluate, Metrics};
use super::model::{Architecture, DetectorModel, Graph};
use crate::error::{Error, Result};
use crate::powerflow::{MeasurementFrame, CHANNELS};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_data: f64,
    pub lambda_phy: f64,
    pub recon_weight: f64,
    pub lq_mode: LqMode,
    pub hidden: usize,
    pub layers: usize,
    /// Fraction of labelled frames used for training; the rest validates.
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 5e-3,
            lambda_data: 1.0,
            lambda_phy: 0.2,
            recon_weight: 0.1,
            lq_mode: LqMode::Sin,
            hidden: 32,
            layers: 2,
            split_ratio: 0.7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.lambda_data >= 0.0 && self.lambda_phy >= 0.0 && self.recon_weight >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split ratio must lie in (0, 1)");
        }
        if self.hidden == 0 || self.layers == 0 {
            return bad("hidden width and layer count must be positive");
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_data: self.lambda_data,
            lambda_phy: self.lambda_phy,
            recon_weight: self.recon_weight,
            lq_mode: self.lq_mode,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture { hidden: self.hidden, layers: self.layers }
    }
}

/// One encoded graph: inputs, observation mask and label.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedGraphSample {
    pub x: Vec<f64>,
    /// Row-major `N x CHANNELS` observation flags.
    pub observed: Vec<bool>,
    pub label: f64,
}

pub fn encode_frames(frames: &[MeasurementFrame], layout: &ObservationLayout, norm: &Normalizer) -> Vec<MaskedGraphSample> {
    let observed: Vec<bool> = layout.observed.iter().flatten().copied().collect();
    frames
        .iter()
        .map(|f| MaskedGraphSample {
            x: norm.encode(f, layout),
            observed: observed.clone(),
            label: if f.is_attacked() { 1.0 } else { 0.0 },
        })
        .collect()
}

fn check_samples(samples: &[MaskedGraphSample], n: usize, what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Dataset(format!("{what} set is empty")));
    }
    if samples.iter().any(|s| s.observed.len() != n * CHANNELS) {
        return Err(Error::Dataset(format!("{what} samples do not match the graph size")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossParts,
    pub val: LossParts,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: DetectorModel,
    pub best_epoch: usize,
    pub val_loss: LossParts,
    pub history: Vec<EpochLog>,
}

/// Mean loss over a sample set, without gradients.
pub fn mean_loss(model: &DetectorModel, graph: &Graph, samples: &[MaskedGraphSample], w: &LossWeights) -> LossParts {
    let mut acc = LossParts::default();
    let scale = 1.0 / samples.len() as f64;
    for s in samples {
        let parts = model.loss_and_grad(graph, &s.x, &s.observed, s.label, w, None);
        acc.accumulate(&parts, scale);
    }
    acc
}

/// Mean loss and its gradient over a batch.
pub fn batch_gradient(
    model: &DetectorModel,
    graph: &Graph,
    batch: &[&MaskedGraphSample],
    w: &LossWeights,
    grad: &mut [f64],
) -> LossParts {
    grad.fill(0.0);
    let scale = 1.0 / batch.len() as f64;
    let mut acc = LossParts::default();
    for s in batch {
        let parts = model.loss_and_grad(graph, &s.x, &s.observed, s.label, w, Some((grad, scale)));
        acc.accumulate(&parts, scale);
    }
    acc
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains a fresh detector with Adam and keeps the best validation epoch.
pub fn train(
    graph: &Graph,
    train_set: &[MaskedGraphSample],
    val_set: &[MaskedGraphSample],
    normalizer: Normalizer,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = graph.n();
    check_samples(train_set, n, "training")?;
    check_samples(val_set, n, "validation")?;
    let positives = train_set.iter().filter(|s| s.label > 0.5).count();
    if positives == 0 || positives == train_set.len() {
        return Err(Error::Training("training set contains a single class".into()));
    }
    if train_set.iter().all(|s| !s.observed.iter().any(|&o| o) && s.x.iter().all(|&v| v == 0.0)) {
        return Err(Error::Training("no observable input".into()));
    }

    let w = cfg.weights();
    let mut model = DetectorModel::new(cfg.architecture(), normalizer, cfg.seed)?;
    let mut adam = Adam::new(model.n_params(), cfg.learning_rate);
    let mut grad = vec![0.0; model.n_params()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = stream(cfg.seed, &[0x7a1]);

    let mut best = (mean_loss(&model, graph, val_set, &w), model.params.clone(), 0);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = LossParts::default();
        let batches = order.len().div_ceil(cfg.batch_size);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&MaskedGraphSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let parts = batch_gradient(&model, graph, &batch, &w, &mut grad);
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch} (bce {:.3e}, recon {:.3e}, L_P {:.3e}, L_Q {:.3e})",
                    parts.bce, parts.recon, parts.l_p, parts.l_q
                )));
            }
            epoch_loss.accumulate(&parts, 1.0 / batches as f64);
            adam.step(&mut model.params, &grad);
        }
        let val = mean_loss(&model, graph, val_set, &w);
        if !val.total.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        let val_acc = evaluate(&model, graph, val_set, 0.5)?.acc;
        history.push(EpochLog { epoch, train: epoch_loss, val, val_acc });
        if val.total < best.0.total {
            best = (val, model.params.clone(), epoch);
        }
    }
    let (val_loss, params, best_epoch) = best;
    model.params = params;
    Ok(TrainOutcome { model, best_epoch, val_loss, history })
}

/// Trains and reports validation metrics in one call.
pub fn train_and_score(
    graph: &Graph,
    train_set: &[MaskedGraphSample],
    val_set: &[MaskedGraphSample],
    normalizer: Normalizer,
    cfg: &TrainConfig,
) -> Result<(TrainOutcome, Metrics)> {
    let out = train(graph, train_set, val_set, normalizer, cfg)?;
    let m = evaluate(&out.model, graph, val_set, 0.5)?;
    Ok((out, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::layout::INPUT_DIM;
    use rand::Rng;

    fn ring(n: usize) -> Graph {
        Graph { neighbors: (0..n).map(|v| vec![(v + n - 1) % n, (v + 1) % n]).collect() }
    }

    fn separable(count: usize, seed: u64) -> Vec<MaskedGraphSample> {
        let n = 5;
        let mut rng = stream(seed, &[0]);
        (0..count)
            .map(|i| {
                let label = (i % 2) as f64;
                let shift = if label > 0.5 { 1.0 } else { -1.0 };
                let mut x = vec![0.0; n * INPUT_DIM];
                for v in 0..n {
                    x[v * INPUT_DIM + 4] = shift + rng.random_range(-0.5..0.5);
                    x[v * INPUT_DIM + 5] = rng.random_range(-1.0..1.0);
                }
                let mut observed = vec![false; n * CHANNELS];
                for v in 0..n {
                    observed[v * CHANNELS + 4] = true;
                    observed[v * CHANNELS + 5] = true;
                }
                MaskedGraphSample { x, observed, label }
            })
            .collect()
    }

    #[test]
    fn learns_separable_data() {
        let cfg = TrainConfig { epochs: 50, hidden: 8, batch_size: 16, seed: 3, ..Default::default() };
        let out = train(&ring(5), &separable(200, 1), &separable(100, 2), Normalizer::identity(5), &cfg).unwrap();
        let m = evaluate(&out.model, &ring(5), &separable(100, 2), 0.5).unwrap();
        assert!(m.acc >= 0.99, "accuracy {}", m.acc);
        assert!(out.best_epoch >= 1);
        assert_eq!(out.history.len(), 50);
    }

    #[test]
    fn same_seed_same_loss_bits() {
        let cfg = TrainConfig { epochs: 3, hidden: 4, seed: 9, ..Default::default() };
        let run = || train(&ring(5), &separable(40, 1), &separable(20, 2), Normalizer::identity(5), &cfg).unwrap();
        assert_eq!(run().val_loss.total.to_bits(), run().val_loss.total.to_bits());
    }

    #[test]
    fn rejects_single_class() {
        let data: Vec<_> = separable(20, 1).into_iter().filter(|s| s.label == 0.0).collect();
        let err = train(&ring(5), &data, &data, Normalizer::identity(5), &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Training(_)));
    }

    #[test]
    fn divergence_is_reported() {
        let mut data = separable(20, 1);
        data[0].x[4] = f64::NAN;
        let err = train(&ring(5), &data, &separable(10, 2), Normalizer::identity(5), &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { split_ratio: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lambda_phy: -0.1, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn reported_total_decomposes() {
        let cfg = TrainConfig { epochs: 2, hidden: 4, ..Default::default() };
        let out = train(&ring(5), &separable(20, 1), &separable(10, 2), Normalizer::identity(5), &cfg).unwrap();
        let w = cfg.weights();
        for log in &out.history {
            for p in [log.train, log.val] {
                let expected = w.lambda_data * p.l_data + w.lambda_phy * (p.l_p + p.l_q);
                assert!((p.total - expected).abs() < 1e-12);
            }
        }
    }
}
