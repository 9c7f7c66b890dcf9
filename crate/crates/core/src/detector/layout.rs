use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{BusKind, PowerNetwork};
use crate::powerflow::{Channel, MeasurementFrame, CHANNELS};

/// Per-bus input width: six channels plus the sensor bit.
pub const INPUT_DIM: usize = CHANNELS + 1;

/// Which channels are visible at each bus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub observed: Vec<[bool; CHANNELS]>,
    /// Buses carrying a placed sensor (all channels visible).
    pub sensor: Vec<bool>,
}

/// Channels metered at a bus before any sensor is placed.
pub fn baseline_channels(kind: BusKind) -> &'static [Channel] {
    match kind {
        BusKind::Slack => &[Channel::V, Channel::Theta, Channel::P],
        BusKind::Generator => &[Channel::V, Channel::P],
        BusKind::Load => &[Channel::P, Channel::Q],
    }
}

impl ObservationLayout {
    pub fn new(net: &PowerNetwork, sensors: &[usize], baseline: bool) -> Result<Self> {
        let n = net.n_buses();
        let mut observed = vec![[false; CHANNELS]; n];
        let mut sensor = vec![false; n];
        if baseline {
            for b in &net.buses {
                for c in baseline_channels(b.kind) {
                    observed[b.id][c.index()] = true;
                }
            }
        }
        for &s in sensors {
            if s >= n {
                return Err(Error::Config(format!("sensor bus index {s} out of range")));
            }
            sensor[s] = true;
            observed[s] = [true; CHANNELS];
        }
        Ok(ObservationLayout { observed, sensor })
    }

    pub fn baseline(net: &PowerNetwork) -> Self {
        Self::new(net, &[], true).expect("no sensors to validate")
    }

    pub fn n_buses(&self) -> usize {
        self.sensor.len()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().flatten().filter(|&&o| o).count()
    }

    /// True when `other` sees at least every channel this layout sees.
    pub fn is_subset_of(&self, other: &ObservationLayout) -> bool {
        self.observed.iter().zip(&other.observed).all(|(a, b)| a.iter().zip(b).all(|(&x, &y)| !x || y))
    }
}

/// Per-bus, per-channel standardization fitted on benign training frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<[f64; CHANNELS]>,
    pub std: Vec<[f64; CHANNELS]>,
}

/// Channels whose spread is below this are treated as constant.
const MIN_STD: f64 = 1e-9;

impl Normalizer {
    pub fn fit(frames: &[MeasurementFrame]) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::Dataset("cannot fit normalizer on no frames".into()))?;
        let n = first.n_buses();
        let count = frames.len() as f64;
        let mut mean = vec![[0.0; CHANNELS]; n];
        for f in frames {
            for (m, b) in mean.iter_mut().zip(&f.buses) {
                for c in 0..CHANNELS {
                    m[c] += b[c] / count;
                }
            }
        }
        let mut std = vec![[0.0; CHANNELS]; n];
        for f in frames {
            for ((s, m), b) in std.iter_mut().zip(&mean).zip(&f.buses) {
                for c in 0..CHANNELS {
                    s[c] += (b[c] - m[c]).powi(2) / count;
                }
            }
        }
        for s in std.iter_mut().flatten() {
            *s = if s.sqrt() < MIN_STD { 1.0 } else { s.sqrt() };
        }
        Ok(Normalizer { mean, std })
    }

    pub fn identity(n: usize) -> Self {
        Normalizer { mean: vec![[0.0; CHANNELS]; n], std: vec![[1.0; CHANNELS]; n] }
    }

    pub fn n_buses(&self) -> usize {
        self.mean.len()
    }

    /// Model input: standardized observed channels, zeros elsewhere, and
    /// the sensor bit; row-major `N x INPUT_DIM`.
    pub fn encode(&self, frame: &MeasurementFrame, layout: &ObservationLayout) -> Vec<f64> {
        let mut x = vec![0.0; frame.n_buses() * INPUT_DIM];
        for (v, row) in x.chunks_exact_mut(INPUT_DIM).enumerate() {
            for c in 0..CHANNELS {
                if layout.observed[v][c] {
                    row[c] = (frame.buses[v][c] - self.mean[v][c]) / self.std[v][c];
                }
            }
            row[CHANNELS] = if layout.sensor[v] { 1.0 } else { 0.0 };
        }
        x
    }
}
