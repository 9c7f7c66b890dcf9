//! Physics-informed message-passing attack detector.

mod io;
mod layout;
mod loss;
mod metrics;
mod model;
mod train;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub use io::{load_model, save_model, write_curve, CURVE_HEADER};
pub use layout::{baseline_channels, Normalizer, ObservationLayout, INPUT_DIM};
pub use loss::{bce_with_logit, physics_residuals, sigmoid, total_loss, LossParts, LossWeights, LqMode};
pub use metrics::{evaluate, predict, Confusion, Metrics};
pub use model::{Architecture, DetectorModel, Forward, Graph};
pub use train::{
    batch_gradient, encode_frames, mean_loss, train, train_and_score, EpochLog, MaskedGraphSample, TrainConfig,
    TrainOutcome,
};

use crate::error::{Error, Result};
use crate::netmodel::PowerNetwork;
use crate::powerflow::MeasurementFrame;
use crate::rng::derive;

impl Graph {
    pub fn of(net: &PowerNetwork) -> Self {
        Graph { neighbors: net.neighbors().to_vec() }
    }
}

/// Labelled frames shared by every detector trained during a search.
#[derive(Debug, Clone)]
pub struct DetectorData {
    pub train: Vec<MeasurementFrame>,
    pub val: Vec<MeasurementFrame>,
    /// Fitted on the benign training frames.
    pub normalizer: Normalizer,
}

impl DetectorData {
    pub fn new(train: Vec<MeasurementFrame>, val: Vec<MeasurementFrame>) -> Result<Self> {
        let benign: Vec<MeasurementFrame> = train.iter().filter(|f| !f.is_attacked()).cloned().collect();
        let normalizer = Normalizer::fit(&benign)?;
        Ok(DetectorData { train, val, normalizer })
    }
}

/// Training seed for a sensor set, so identical layouts train identically.
pub fn layout_seed(seed: u64, sensors: &[usize]) -> u64 {
    let path: Vec<u64> = sensors.iter().map(|&s| s as u64).collect();
    derive(seed, &path)
}

/// Trains a detector for one sensor layout.
pub fn train_for_layout(
    net: &PowerNetwork,
    data: &DetectorData,
    sensors: &[usize],
    baseline: bool,
    cfg: &TrainConfig,
) -> Result<(TrainOutcome, ObservationLayout)> {
    let layout = ObservationLayout::new(net, sensors, baseline)?;
    if layout.n_observed() == 0 {
        return Err(Error::Training("no observable input: empty layout".into()));
    }
    let graph = Graph::of(net);
    let tr = encode_frames(&data.train, &layout, &data.normalizer);
    let va = encode_frames(&data.val, &layout, &data.normalizer);
    let cfg = TrainConfig { seed: layout_seed(cfg.seed, sensors), ..cfg.clone() };
    let out = train(&graph, &tr, &va, data.normalizer.clone(), &cfg)?;
    Ok((out, layout))
}

/// Detection objective: validation `L_T` of a freshly trained detector,
/// memoized by sensor set.
pub struct F2Evaluator<'a> {
    pub net: &'a PowerNetwork,
    pub data: &'a DetectorData,
    pub config: TrainConfig,
    pub baseline: bool,
    cache: Mutex<BTreeMap<Vec<usize>, f64>>,
    trainings: AtomicUsize,
}

impl<'a> F2Evaluator<'a> {
    pub fn new(net: &'a PowerNetwork, data: &'a DetectorData, config: TrainConfig, baseline: bool) -> Self {
        F2Evaluator { net, data, config, baseline, cache: Mutex::new(BTreeMap::new()), trainings: AtomicUsize::new(0) }
    }

    /// `sensors` are 0-based bus indices.
    pub fn f2(&self, sensors: &[usize]) -> Result<f64> {
        let mut key = sensors.to_vec();
        key.sort_unstable();
        key.dedup();
        if let Some(&v) = self.cache.lock().unwrap().get(&key) {
            return Ok(v);
        }
        let (out, _) = train_for_layout(self.net, self.data, &key, self.baseline, &self.config)?;
        self.trainings.fetch_add(1, Ordering::Relaxed);
        let v = out.val_loss.total;
        self.cache.lock().unwrap().insert(key, v);
        Ok(v)
    }

    /// Number of detectors actually trained.
    pub fn trainings(&self) -> usize {
        self.trainings.load(Ordering::Relaxed)
    }
}
