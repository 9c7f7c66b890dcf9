use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{extract_frame, solve_powerflow, Dispatch, MeasurementFrame, PowerFlowOptions};
use crate::error::{Error, Result};
use crate::netmodel::PowerNetwork;
use crate::rng::stream;

/// Settings for synthetic load profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    pub timestamps: usize,
    /// Length of the daily cycle in timestamps.
    pub period: usize,
    /// Peak deviation of the daily curve from 1.0.
    pub amplitude: f64,
    /// Half-width of the per-bus uniform noise.
    pub noise: f64,
    pub min_multiplier: f64,
    pub max_multiplier: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            timestamps: 200,
            period: 24,
            amplitude: 0.1,
            noise: 0.05,
            min_multiplier: 0.8,
            max_multiplier: 1.2,
        }
    }
}

/// Per-timestamp, per-bus load multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub multipliers: Vec<Vec<f64>>,
}

impl LoadProfile {
    /// `clamp(daily_curve(t) + U(-noise, noise), [min, max])` for every bus.
    /// Timestamp `t` draws from its own stream so the result does not
    /// depend on evaluation order.
    pub fn generate(net: &PowerNetwork, cfg: &ProfileConfig, seed: u64) -> Result<Self> {
        if cfg.timestamps == 0 {
            return Err(Error::Config("load profile needs at least one timestamp".into()));
        }
        if !(cfg.min_multiplier > 0.0 && cfg.min_multiplier <= cfg.max_multiplier) {
            return Err(Error::Config("multiplier range must be positive and ordered".into()));
        }
        let period = cfg.period.max(1) as f64;
        let multipliers = (0..cfg.timestamps)
            .map(|t| {
                let mut rng = stream(seed, &[0x10ad, t as u64]);
                let curve = 1.0 + cfg.amplitude * (2.0 * std::f64::consts::PI * t as f64 / period).sin();
                (0..net.n_buses())
                    .map(|_| {
                        let noise = if cfg.noise > 0.0 { rng.random_range(-cfg.noise..cfg.noise) } else { 0.0 };
                        (curve + noise).clamp(cfg.min_multiplier, cfg.max_multiplier)
                    })
                    .collect()
            })
            .collect();
        Ok(LoadProfile { multipliers })
    }

    pub fn constant(net: &PowerNetwork, timestamps: usize, multiplier: f64) -> Self {
        LoadProfile { multipliers: vec![vec![multiplier; net.n_buses()]; timestamps] }
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<MeasurementFrame>,
    /// Timestamps whose power flow did not converge.
    pub skipped: Vec<usize>,
}

/// Solves one power flow per timestamp and returns the benign frames.
pub fn generate_dataset(net: &PowerNetwork, profile: &LoadProfile) -> Result<Dataset> {
    if profile.is_empty() {
        return Err(Error::Config("load profile is empty".into()));
    }
    let opts = PowerFlowOptions::default();
    let results: Vec<(usize, Option<MeasurementFrame>)> = profile
        .multipliers
        .par_iter()
        .enumerate()
        .map(|(t, m)| {
            let dispatch = Dispatch::scaled(net, m);
            match solve_powerflow(net, &dispatch, &opts) {
                Ok(sol) => (t, Some(extract_frame(net, &sol, t))),
                Err(e) => {
                    log::warn!("timestamp {t} skipped: {e}");
                    (t, None)
                }
            }
        })
        .collect();
    let mut frames = Vec::with_capacity(results.len());
    let mut skipped = Vec::new();
    for (t, f) in results {
        match f {
            Some(f) => frames.push(f),
            None => skipped.push(t),
        }
    }
    Ok(Dataset { frames, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::bundled_case;
    use crate::powerflow::Label;

    #[test]
    fn identity_profile_reproduces_base_case() {
        let net = bundled_case("case14").unwrap();
        let ds = generate_dataset(&net, &LoadProfile::constant(&net, 1, 1.0)).unwrap();
        let sol = solve_powerflow(&net, &Dispatch::base(&net), &PowerFlowOptions::default()).unwrap();
        assert_eq!(ds.frames.len(), 1);
        assert_eq!(ds.frames[0], extract_frame(&net, &sol, 0));
    }

    #[test]
    fn same_seed_same_dataset() {
        let net = bundled_case("case14").unwrap();
        let cfg = ProfileConfig { timestamps: 20, ..Default::default() };
        let a = generate_dataset(&net, &LoadProfile::generate(&net, &cfg, 7).unwrap()).unwrap();
        let b = generate_dataset(&net, &LoadProfile::generate(&net, &cfg, 7).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&net, &LoadProfile::generate(&net, &cfg, 8).unwrap()).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn multipliers_stay_in_range() {
        let net = bundled_case("case14").unwrap();
        let cfg = ProfileConfig { timestamps: 100, amplitude: 0.3, ..Default::default() };
        let p = LoadProfile::generate(&net, &cfg, 1).unwrap();
        assert!(p.multipliers.iter().flatten().all(|&m| (0.8..=1.2).contains(&m)));
    }

    #[test]
    fn two_hundred_timestamps_converge() {
        let net = bundled_case("case14").unwrap();
        let cfg = ProfileConfig { timestamps: 200, ..Default::default() };
        let ds = generate_dataset(&net, &LoadProfile::generate(&net, &cfg, 3).unwrap()).unwrap();
        assert!(ds.frames.len() >= 195);
        assert!(ds.frames.iter().all(|f| f.label == Label::Benign));
    }

    #[test]
    fn empty_profile_rejected() {
        let net = bundled_case("case14").unwrap();
        assert!(generate_dataset(&net, &LoadProfile { multipliers: vec![] }).is_err());
    }
}
