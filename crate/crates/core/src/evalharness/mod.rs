//! Dataset splits, placement benchmarking and sensor-failure robustness.

mod experiment;

pub use experiment::{
    prepare, read_placements, run_evaluate, run_optimize, write_evaluation, write_optimize, EvalConfig, ExperimentConfig,
    MethodResult, NamedPlacement, OptimizeResult, ParetoEntry, PlacementFile, Prepared, METRICS_HEADER, ROBUSTNESS_HEADER,
};

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{attack_general, attack_lr, attack_random, AttackConfig, AttackKind, HistoryRange};
use crate::detector::{encode_frames, evaluate, DetectorModel, Graph, Metrics, ObservationLayout};
use crate::error::{Error, Result};
use crate::netmodel::PowerNetwork;
use crate::nsga2::top_k;
use crate::placement::PlacementGenome;
use crate::powerflow::{Dispatch, LoadProfile, MeasurementFrame};
use crate::rng::stream;

/// Attack settings for the training pool (random and general) and the
/// held-out test set (load redistribution).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSuite {
    pub random: AttackConfig,
    pub general: AttackConfig,
    pub lr: AttackConfig,
}

impl Default for AttackSuite {
    fn default() -> Self {
        AttackSuite {
            random: AttackConfig::new(AttackKind::Random, 0.1, 0.3, 0),
            general: AttackConfig::new(AttackKind::General, 0.1, 0.3, 0),
            lr: AttackConfig::new(AttackKind::Lr, 0.0, 0.3, 0),
        }
    }
}

impl AttackSuite {
    pub fn validate(&self) -> Result<()> {
        for (cfg, kind) in [(&self.random, AttackKind::Random), (&self.general, AttackKind::General), (&self.lr, AttackKind::Lr)] {
            if cfg.kind != kind {
                return Err(Error::Config(format!("attack slot {kind:?} holds a {:?} config", cfg.kind)));
            }
            cfg.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Fraction of timestamps held out for the test set.
    pub test_fraction: f64,
    /// Train share of the remaining timestamps.
    pub train_ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { test_fraction: 0.3, train_ratio: 0.7, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<MeasurementFrame>,
    pub val: Vec<MeasurementFrame>,
    pub test: Vec<MeasurementFrame>,
}

impl Splits {
    pub fn timestamps(frames: &[MeasurementFrame]) -> Vec<usize> {
        let mut t: Vec<usize> = frames.iter().map(|f| f.t).collect();
        t.dedup();
        t
    }
}

/// Splits timestamps three ways. Each pool timestamp contributes its benign
/// frame and one random or general attack; each test timestamp its benign
/// frame and one load redistribution attack.
pub fn make_splits(
    net: &PowerNetwork,
    profile: &LoadProfile,
    benign: &[MeasurementFrame],
    attacks: &AttackSuite,
    cfg: &SplitConfig,
) -> Result<Splits> {
    attacks.validate()?;
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0 && cfg.train_ratio > 0.0 && cfg.train_ratio < 1.0) {
        return Err(Error::Config("split fractions must lie in (0, 1)".into()));
    }
    let mut order: Vec<usize> = (0..benign.len()).collect();
    let mut rng = stream(cfg.seed, &[0x5b]);
    order.sort_by_key(|&i| benign[i].t);
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let n_test = (cfg.test_fraction * benign.len() as f64).round() as usize;
    let n_pool = benign.len().saturating_sub(n_test);
    let n_train = (cfg.train_ratio * n_pool as f64).round() as usize;
    if n_test == 0 || n_train == 0 || n_train == n_pool {
        return Err(Error::Dataset(format!("{} benign frames are too few to split", benign.len())));
    }
    let pick = |idx: &[usize]| -> Vec<&MeasurementFrame> {
        let mut v: Vec<&MeasurementFrame> = idx.iter().map(|&i| &benign[i]).collect();
        v.sort_by_key(|f| f.t);
        v
    };
    let test_b = pick(&order[..n_test]);
    let train_b = pick(&order[n_test..n_test + n_train]);
    let val_b = pick(&order[n_test + n_train..]);

    let owned: Vec<MeasurementFrame> = train_b.iter().map(|&f| f.clone()).collect();
    let history = HistoryRange::from_frames(&owned)?;
    let pool = |frames: &[&MeasurementFrame]| -> Result<Vec<MeasurementFrame>> {
        let mut out = Vec::with_capacity(2 * frames.len());
        for &f in frames {
            out.push(f.clone());
            let mut coin = stream(cfg.seed, &[0xc01, f.t as u64]);
            let attacked =
                if coin.random_bool(0.5) { attack_random(f, &attacks.random)? } else { attack_general(f, &history, &attacks.general)? };
            out.push(attacked);
        }
        Ok(out)
    };
    let train = pool(&train_b)?;
    let val = pool(&val_b)?;

    let mut test = Vec::with_capacity(2 * test_b.len());
    for &f in &test_b {
        test.push(f.clone());
        let dispatch = Dispatch::scaled(net, &profile.multipliers[f.t]);
        match attack_lr(net, &dispatch, f.t, &attacks.lr) {
            Ok(a) => test.push(a.frame),
            Err(e) => log::warn!("no load redistribution frame at t={}: {e}", f.t),
        }
    }
    if !test.iter().any(|f| f.is_attacked()) {
        return Err(Error::Dataset("no load redistribution attack could be generated".into()));
    }
    Ok(Splits { train, val, test })
}

/// Top-`k` buses by importance, ties broken by a seeded key.
pub fn greedy_placement(scores: &[f64], k: usize, seed: u64) -> Result<PlacementGenome> {
    if k > scores.len() {
        return Err(Error::Config(format!("K = {k} exceeds {} buses", scores.len())));
    }
    Ok(top_k(scores, k, &mut stream(seed, &[0x6ee])))
}

/// `trials` copies of `genome`, each with `k` uniformly chosen sensors removed.
pub fn simulate_failures(genome: &PlacementGenome, k: usize, trials: usize, seed: u64) -> Result<Vec<PlacementGenome>> {
    let placed = genome.selected();
    if k > placed.len() {
        return Err(Error::Config(format!("cannot fail {k} of {} placed sensors", placed.len())));
    }
    Ok((0..trials)
        .map(|m| {
            let mut rng = stream(seed, &[0xfa1, k as u64, m as u64]);
            let mut g = genome.clone();
            for i in sample(&mut rng, placed.len(), k) {
                g.bits[placed[i]] = false;
            }
            g
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub k: usize,
    pub acc: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub prec: f64,
    pub f1: f64,
}

impl LevelMetrics {
    pub fn mean(k: usize, trials: &[Metrics]) -> Self {
        let n = trials.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| trials.iter().map(f).sum::<f64>() / n;
        LevelMetrics { k, acc: avg(|m| m.acc), tpr: avg(|m| m.tpr), fpr: avg(|m| m.fpr), prec: avg(|m| m.prec), f1: avg(|m| m.f1) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub levels: Vec<LevelMetrics>,
    pub r: f64,
    pub a_f1: f64,
    pub f_crit: usize,
    pub mean_acc: f64,
    pub mean_f1: f64,
    pub mean_prec: f64,
}

/// Fraction of the no-failure F1 below which a failure count is critical.
pub const F_CRIT_RATIO: f64 = 0.9;

/// Summary metrics of a failure sweep. `levels` must start at `k = 0` and
/// be strictly increasing.
///
/// * `R = 1 / (1 + mean_l (ACC_0 - ACC_l) / ACC_0)` over the levels `k > 0`;
///   a net improvement counts as zero degradation.
/// * `A_F1` is the trapezoidal area under F1 against `k / k_max`.
/// * `F_crit` is the first `k` whose F1 falls below `0.9 F1_0`, else `k_max`.
pub fn summarize_levels(levels: Vec<LevelMetrics>) -> Result<RobustnessReport> {
    let first = levels.first().ok_or_else(|| Error::Config("no failure levels".into()))?;
    if first.k != 0 || levels.windows(2).any(|w| w[1].k <= w[0].k) {
        return Err(Error::Config("failure levels must start at 0 and increase".into()));
    }
    let (acc0, f10) = (first.acc, first.f1);
    let failed = &levels[1..];
    let degradation = if failed.is_empty() || acc0 == 0.0 {
        0.0
    } else {
        failed.iter().map(|l| (acc0 - l.acc) / acc0).sum::<f64>() / failed.len() as f64
    };
    let r = 1.0 / (1.0 + degradation.max(0.0));
    let k_max = levels.last().unwrap().k;
    let a_f1 = if k_max == 0 {
        f10
    } else {
        levels.windows(2).map(|w| 0.5 * (w[0].f1 + w[1].f1) * (w[1].k - w[0].k) as f64 / k_max as f64).sum()
    };
    let f_crit = levels.iter().find(|l| l.f1 < F_CRIT_RATIO * f10).map_or(k_max, |l| l.k);
    let n = levels.len() as f64;
    let mean = |f: fn(&LevelMetrics) -> f64| levels.iter().map(f).sum::<f64>() / n;
    Ok(RobustnessReport {
        r,
        a_f1,
        f_crit,
        mean_acc: mean(|l| l.acc),
        mean_f1: mean(|l| l.f1),
        mean_prec: mean(|l| l.prec),
        levels,
    })
}

/// `0, 1, ..., min(floor(frac N), sensors)`, thinned to at most `max_levels`
/// evenly spaced counts that keep both ends.
pub fn failure_levels(n_buses: usize, sensors: usize, frac: f64, max_levels: usize) -> Vec<usize> {
    let top = ((frac * n_buses as f64).floor() as usize).min(sensors);
    let max_levels = max_levels.max(2);
    if top + 1 <= max_levels {
        return (0..=top).collect();
    }
    let mut out: Vec<usize> =
        (0..max_levels).map(|i| ((i * top) as f64 / (max_levels - 1) as f64).round() as usize).collect();
    out.dedup();
    out
}

/// Stress test of a fixed detector: for every level, `trials` random
/// failure patterns of the placed sensors. Baseline metering is never removed.
#[allow(clippy::too_many_arguments)]
pub fn robustness_report(
    model: &DetectorModel,
    net: &PowerNetwork,
    sensors: &[usize],
    test: &[MeasurementFrame],
    levels: &[usize],
    trials: usize,
    seed: u64,
    baseline: bool,
) -> Result<RobustnessReport> {
    if trials == 0 {
        return Err(Error::Config("need at least one failure trial".into()));
    }
    let genome = PlacementGenome::from_indices(net.n_buses(), sensors);
    let graph = Graph::of(net);
    let mut out = Vec::with_capacity(levels.len());
    for &k in levels {
        let masks = simulate_failures(&genome, k, if k == 0 { 1 } else { trials }, seed)?;
        let metrics: Vec<Metrics> = masks
            .par_iter()
            .map(|g| {
                let layout = ObservationLayout::new(net, &g.selected(), baseline)?;
                evaluate(model, &graph, &encode_frames(test, &layout, &model.normalizer), 0.5)
            })
            .collect::<Result<_>>()?;
        out.push(LevelMetrics::mean(k, &metrics));
    }
    summarize_levels(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::testnets::case14;
    use crate::powerflow::{generate_dataset, ProfileConfig};

    fn level(k: usize, acc: f64, f1: f64) -> LevelMetrics {
        LevelMetrics { k, acc, f1, prec: f1, ..Default::default() }
    }

    #[test]
    fn r_from_trace() {
        let rep = summarize_levels(vec![level(0, 0.9, 0.8), level(1, 0.81, 0.7), level(2, 0.72, 0.6)]).unwrap();
        // degradations 0.1 and 0.2
        assert!((rep.r - 1.0 / 1.15).abs() < 1e-12);
        let flat = summarize_levels(vec![level(0, 0.9, 0.8), level(3, 0.9, 0.8)]).unwrap();
        assert_eq!(flat.r, 1.0);
        let tenth = summarize_levels(vec![level(0, 1.0, 1.0), level(1, 0.9, 1.0)]).unwrap();
        assert!((tenth.r - 1.0 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn area_and_critical_count() {
        let rep = summarize_levels(vec![level(0, 1.0, 1.0), level(1, 1.0, 0.95), level(2, 1.0, 0.85), level(4, 1.0, 0.5)])
            .unwrap();
        let expected = (0.5 * (1.0 + 0.95) + 0.5 * (0.95 + 0.85) + 2.0 * 0.5 * (0.85 + 0.5)) / 4.0;
        assert!((rep.a_f1 - expected).abs() < 1e-12);
        assert_eq!(rep.f_crit, 2);
        let c = summarize_levels(vec![level(0, 1.0, 0.7), level(2, 1.0, 0.7), level(3, 1.0, 0.7)]).unwrap();
        assert!((c.a_f1 - 0.7).abs() < 1e-12);
        assert_eq!(c.f_crit, 3);
        assert!(summarize_levels(vec![level(1, 1.0, 1.0)]).is_err());
    }

    #[test]
    fn failure_masks() {
        let g = PlacementGenome::from_indices(10, &[1, 4, 6, 9]);
        assert_eq!(simulate_failures(&g, 0, 3, 1).unwrap(), vec![g.clone(); 3]);
        assert!(simulate_failures(&g, 4, 2, 1).unwrap().iter().all(|m| m.popcount() == 0));
        let a = simulate_failures(&g, 2, 50, 7).unwrap();
        assert_eq!(a, simulate_failures(&g, 2, 50, 7).unwrap());
        for m in &a {
            assert_eq!(m.popcount(), 2);
            assert!(m.selected().iter().all(|i| g.bits[*i]));
        }
        assert!(simulate_failures(&g, 5, 1, 0).is_err());
    }

    #[test]
    fn levels_are_thinned() {
        assert_eq!(failure_levels(14, 10, 0.3, 8), vec![0, 1, 2, 3, 4]);
        assert_eq!(failure_levels(14, 2, 0.3, 8), vec![0, 1, 2]);
        let l = failure_levels(118, 60, 0.3, 8);
        assert_eq!((l.len(), l[0], *l.last().unwrap()), (8, 0, 35));
    }

    #[test]
    fn greedy_matches_sort() {
        let net = case14();
        let scores = crate::importance::importance_scores(&net, &Default::default()).unwrap().score;
        let g = greedy_placement(&scores, 4, 0).unwrap();
        let mut order: Vec<usize> = (0..14).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let mut expect = order[..4].to_vec();
        expect.sort_unstable();
        assert_eq!(g.selected(), expect);
        let argmax = order[0];
        assert_eq!(greedy_placement(&scores, 1, 3).unwrap().selected(), vec![argmax]);
        assert_eq!(greedy_placement(&scores, 14, 3).unwrap().popcount(), 14);
        assert!(greedy_placement(&scores, 15, 3).is_err());
    }

    #[test]
    fn splits_are_disjoint_and_typed() {
        let net = case14();
        let profile = LoadProfile::generate(&net, &ProfileConfig { timestamps: 100, ..Default::default() }, 2).unwrap();
        let benign = generate_dataset(&net, &profile).unwrap().frames;
        let s = make_splits(&net, &profile, &benign, &AttackSuite::default(), &SplitConfig::default()).unwrap();
        let (tr, va, te) = (Splits::timestamps(&s.train), Splits::timestamps(&s.val), Splits::timestamps(&s.test));
        assert_eq!(te.len(), 30);
        assert_eq!((tr.len(), va.len()), (49, 21));
        for t in &te {
            assert!(!tr.contains(t) && !va.contains(t));
        }
        assert!(tr.iter().all(|t| !va.contains(t)));
        use crate::powerflow::AttackType;
        assert!(s.test.iter().all(|f| matches!(f.attack_type, AttackType::None | AttackType::Lr)));
        assert!(s.train.iter().all(|f| f.attack_type != AttackType::Lr));
        assert_eq!(s.train.iter().filter(|f| f.is_attacked()).count(), tr.len());
    }

    #[test]
    fn labelled_pool_splits_seventy_thirty() {
        let net = case14();
        let profile = LoadProfile::generate(&net, &ProfileConfig { timestamps: 72, ..Default::default() }, 2).unwrap();
        let benign = generate_dataset(&net, &profile).unwrap().frames;
        let cfg = SplitConfig { test_fraction: 0.3, ..Default::default() };
        let s = make_splits(&net, &profile, &benign, &AttackSuite::default(), &cfg).unwrap();
        // 50 pool timestamps give 100 labelled frames.
        assert_eq!(s.train.len() + s.val.len(), 100);
        assert!((s.train.len() as i64 - 70).abs() <= 1);
        assert!(make_splits(&net, &profile, &benign[..1], &AttackSuite::default(), &cfg).is_err());
    }
}
