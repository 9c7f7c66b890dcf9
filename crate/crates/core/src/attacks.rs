//! False data injection on measurement frames: random scaling, general
//! range-based offsets and load redistribution.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::PowerNetwork;
use crate::powerflow::{
    extract_frame, solve_powerflow, AttackType, Channel, Dispatch, Label, MeasurementFrame, PowerFlowOptions, CHANNELS,
};
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Random,
    General,
    Lr,
}

impl AttackKind {
    pub fn attack_type(self) -> AttackType {
        match self {
            AttackKind::Random => AttackType::Random,
            AttackKind::General => AttackType::General,
            AttackKind::Lr => AttackType::Lr,
        }
    }

    fn tag(self) -> u64 {
        match self {
            AttackKind::Random => 0xa1,
            AttackKind::General => 0xa2,
            AttackKind::Lr => 0xa3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_fraction")]
    pub target_fraction: f64,
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
    /// Channels perturbed by random and general attacks.
    #[serde(default = "default_channels")]
    pub channels: Vec<Channel>,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> f64 {
    0.1
}
fn default_fraction() -> f64 {
    0.3
}
fn default_tau_max() -> f64 {
    0.2
}
fn default_channels() -> Vec<Channel> {
    vec![Channel::P, Channel::Q]
}

impl AttackConfig {
    pub fn new(kind: AttackKind, alpha: f64, target_fraction: f64, seed: u64) -> Self {
        AttackConfig { kind, alpha, target_fraction, tau_max: default_tau_max(), channels: default_channels(), seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_max > 0.0 && self.tau_max <= 1.0) {
            return Err(Error::Config(format!("tau_max must lie in (0, 1], got {}", self.tau_max)));
        }
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::Config(format!("target_fraction must lie in (0, 1], got {}", self.target_fraction)));
        }
        if self.kind != AttackKind::Lr {
            if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
                return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
            }
            if self.channels.is_empty() {
                return Err(Error::Config("no channels selected for attack".into()));
            }
        }
        Ok(())
    }

    /// Number of buses targeted in a network of `n` buses.
    pub fn target_count(&self, n: usize) -> usize {
        (self.target_fraction * n as f64).round() as usize
    }

    fn rng(&self, t: usize) -> StreamRng {
        stream(self.seed, &[self.kind.tag(), t as u64])
    }
}

/// Picks `count` distinct buses from `candidates`, returned ascending.
fn pick(rng: &mut StreamRng, candidates: &[usize], count: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = sample(rng, candidates.len(), count).into_iter().map(|k| candidates[k]).collect();
    chosen.sort_unstable();
    chosen
}

/// Buses eligible for multiplicative attack: a channel that reads exactly
/// zero cannot be scaled, so buses with all attacked channels at zero are
/// skipped.
fn scalable_buses(frame: &MeasurementFrame, channels: &[Channel]) -> Vec<usize> {
    (0..frame.n_buses()).filter(|&b| channels.iter().any(|&c| frame.get(b, c) != 0.0)).collect()
}

fn attacked_copy(frame: &MeasurementFrame, kind: AttackKind) -> MeasurementFrame {
    let mut out = frame.clone();
    out.label = Label::Attacked;
    out.attack_type = kind.attack_type();
    out
}

/// `Z_s = (1 + alpha) Z_b` on the configured channels of the targeted buses.
pub fn attack_random(frame: &MeasurementFrame, cfg: &AttackConfig) -> Result<MeasurementFrame> {
    cfg.validate()?;
    let count = cfg.target_count(frame.n_buses());
    if count == 0 {
        return Err(Error::Attack(format!("target fraction {} selects no buses", cfg.target_fraction)));
    }
    if cfg.alpha == 0.0 {
        log::warn!("random attack with alpha = 0 leaves the frame unchanged");
    }
    let candidates = scalable_buses(frame, &cfg.channels);
    if candidates.len() < count {
        return Err(Error::Attack(format!("only {} buses have nonzero readings, {count} requested", candidates.len())));
    }
    let mut rng = cfg.rng(frame.t);
    let mut out = attacked_copy(frame, AttackKind::Random);
    for b in pick(&mut rng, &candidates, count) {
        for &c in &cfg.channels {
            out.set(b, c, (1.0 + cfg.alpha) * frame.get(b, c));
        }
    }
    Ok(out)
}

/// Per bus and channel spread `max - min` of the benign history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRange {
    pub range: Vec<[f64; CHANNELS]>,
}

impl HistoryRange {
    pub fn from_frames(frames: &[MeasurementFrame]) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::Attack("empty history".into()))?;
        let n = first.n_buses();
        let mut lo = first.buses.clone();
        let mut hi = first.buses.clone();
        for f in frames {
            if f.n_buses() != n {
                return Err(Error::Attack("history frames differ in bus count".into()));
            }
            for b in 0..n {
                for c in 0..CHANNELS {
                    lo[b][c] = lo[b][c].min(f.buses[b][c]);
                    hi[b][c] = hi[b][c].max(f.buses[b][c]);
                }
            }
        }
        let range = lo.iter().zip(&hi).map(|(l, h)| std::array::from_fn(|c| h[c] - l[c])).collect();
        Ok(HistoryRange { range })
    }
}

/// `Z_s = Z_b + (-1)^beta * alpha * gamma * Range(Z_b)` with
/// `beta ~ Bernoulli(0.5)` and `gamma ~ U(0, 1)` drawn per bus and channel.
pub fn attack_general(frame: &MeasurementFrame, history: &HistoryRange, cfg: &AttackConfig) -> Result<MeasurementFrame> {
    cfg.validate()?;
    if history.range.len() != frame.n_buses() {
        return Err(Error::Attack("history range does not match frame size".into()));
    }
    let count = cfg.target_count(frame.n_buses());
    if count == 0 {
        return Err(Error::Attack(format!("target fraction {} selects no buses", cfg.target_fraction)));
    }
    let mut rng = cfg.rng(frame.t);
    let all: Vec<usize> = (0..frame.n_buses()).collect();
    let mut out = attacked_copy(frame, AttackKind::General);
    for b in pick(&mut rng, &all, count) {
        for &c in &cfg.channels {
            let sign = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
            let gamma: f64 = rng.random();
            let z = frame.get(b, c) + sign * cfg.alpha * gamma * history.range[b][c.index()];
            out.set(b, c, z);
        }
    }
    Ok(out)
}

/// Zero-sum active load changes over `targets`, scaled so that the largest
/// relative change `tau` is uniform in `[tau_max / 2, tau_max]`.
///
/// Returns the per-target deltas and the realized `tau`.
pub fn lr_deltas(loads: &[f64], tau_max: f64, rng: &mut impl Rng) -> Result<(Vec<f64>, f64)> {
    if loads.len() < 2 {
        return Err(Error::Attack("load redistribution needs at least two loaded buses".into()));
    }
    if loads.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Attack("load redistribution targets must carry positive load".into()));
    }
    let mut delta: Vec<f64> = loads.iter().map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mean = delta.iter().sum::<f64>() / delta.len() as f64;
    delta.iter_mut().for_each(|d| *d -= mean);
    let raw_tau = delta.iter().zip(loads).map(|(d, p)| (d / p).abs()).fold(0.0, f64::max);
    let tau = rng.random_range(0.5 * tau_max..=tau_max);
    if raw_tau == 0.0 {
        return Err(Error::Attack("degenerate load redistribution draw".into()));
    }
    let scale = tau / raw_tau;
    delta.iter_mut().for_each(|d| *d *= scale);
    // Absorb the rounding residue of the zero-sum projection into the
    // entry with the most headroom below the bound.
    let residue: f64 = delta.iter().sum();
    let k = (0..delta.len())
        .max_by(|&a, &b| {
            let ha = tau_max * loads[a] - delta[a].abs();
            let hb = tau_max * loads[b] - delta[b].abs();
            ha.total_cmp(&hb)
        })
        .unwrap();
    delta[k] -= residue;
    let tau = delta.iter().zip(loads).map(|(d, p)| (d / p).abs()).fold(0.0, f64::max);
    Ok((delta, tau))
}

/// Outcome of a load redistribution attack.
#[derive(Debug, Clone, PartialEq)]
pub struct LrAttack {
    pub frame: MeasurementFrame,
    pub targets: Vec<usize>,
    pub delta_p: Vec<f64>,
    pub tau: f64,
}

/// Redistributes active load among targeted loaded buses, keeps each bus's
/// power factor, and re-solves the power flow so every channel is
/// consistent with the falsified loads.
pub fn attack_lr(net: &PowerNetwork, dispatch: &Dispatch, t: usize, cfg: &AttackConfig) -> Result<LrAttack> {
    cfg.validate()?;
    let loaded: Vec<usize> = (0..net.n_buses()).filter(|&b| dispatch.load_p[b] > 0.0).collect();
    let count = cfg.target_count(net.n_buses()).min(loaded.len());
    if count < 2 {
        return Err(Error::Attack(format!("load redistribution needs two loaded targets, have {count}")));
    }
    let mut rng = cfg.rng(t);
    let targets = pick(&mut rng, &loaded, count);
    let loads: Vec<f64> = targets.iter().map(|&b| dispatch.load_p[b]).collect();
    let (delta_p, tau) = lr_deltas(&loads, cfg.tau_max, &mut rng)?;
    let mut falsified = dispatch.clone();
    for ((&b, &d), &p) in targets.iter().zip(&delta_p).zip(&loads) {
        falsified.load_p[b] = p + d;
        falsified.load_q[b] *= (p + d) / p;
    }
    let sol = solve_powerflow(net, &falsified, &PowerFlowOptions::default())
        .map_err(|e| Error::Attack(format!("falsified loads at t={t} do not solve: {e}")))?;
    let mut frame = extract_frame(net, &sol, t);
    frame.label = Label::Attacked;
    frame.attack_type = AttackType::Lr;
    Ok(LrAttack { frame, targets, delta_p, tau })
}
