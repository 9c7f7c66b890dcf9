use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{failure_levels, greedy_placement, make_splits, robustness_report, AttackSuite, RobustnessReport, SplitConfig, Splits};
use crate::detector::{encode_frames, evaluate, train_for_layout, DetectorData, F2Evaluator, Graph, Metrics, TrainConfig};
use crate::error::{Error, Result};
use crate::importance::{importance_scores, ImportanceScores, ImportanceWeights};
use crate::netmodel::{bundled_case, parse_case, PowerNetwork};
use crate::nsga2::{evolve, Evaluator, Fitness, GaConfig, GenerationLog};
use crate::placement::{ConstraintConfig, PlacementGenome, PlacementModel};
use crate::powerflow::{generate_dataset, LoadProfile, ProfileConfig};
use crate::rng::derive;
use crate::stateest::PsseConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Failure trials per level.
    pub trials: usize,
    /// Explicit failure counts; derived from `failure_fraction` when absent.
    pub failure_levels: Option<Vec<usize>>,
    pub failure_fraction: f64,
    pub max_levels: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { trials: 30, failure_levels: None, failure_fraction: 0.3, max_levels: 8, seed: 0 }
    }
}

/// Everything an experiment needs; every sub-seed is derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Bundled case name or path to a case file.
    pub case: String,
    pub seed: u64,
    pub profile: ProfileConfig,
    pub ga: GaConfig,
    pub constraints: ConstraintConfig,
    pub importance: ImportanceWeights,
    pub attacks: AttackSuite,
    pub split: SplitConfig,
    pub detector: TrainConfig,
    pub eval: EvalConfig,
    pub psse: PsseConfig,
    /// Whether role-based baseline metering is part of every layout.
    pub baseline_layout: bool,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            case: "case14".into(),
            seed: 0,
            profile: ProfileConfig { timestamps: 1000, ..Default::default() },
            ga: GaConfig::default(),
            constraints: ConstraintConfig::default(),
            importance: ImportanceWeights::default(),
            attacks: AttackSuite::default(),
            split: SplitConfig::default(),
            detector: TrainConfig { learning_rate: 1e-2, ..Default::default() },
            eval: EvalConfig::default(),
            psse: PsseConfig::default(),
            baseline_layout: true,
            output: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.case.is_empty() {
            return Err(Error::Config("no case given".into()));
        }
        self.ga.validate()?;
        self.detector.validate()?;
        self.attacks.validate()?;
        self.importance.validate()?;
        if self.profile.timestamps == 0 {
            return Err(Error::Config("profile needs at least one timestamp".into()));
        }
        if self.eval.trials == 0 {
            return Err(Error::Config("eval.trials must be positive".into()));
        }
        if !(self.eval.failure_fraction >= 0.0 && self.eval.failure_fraction <= 1.0) {
            return Err(Error::Config("eval.failure_fraction must lie in [0, 1]".into()));
        }
        if !(self.psse.variance > 0.0 && self.psse.pseudo_factor > 0.0 && self.psse.noise_sigma >= 0.0) {
            return Err(Error::Config("psse variances must be positive".into()));
        }
        Ok(())
    }

    /// Copy with every component seed derived from the master seed.
    pub fn resolved(&self) -> Self {
        let s = |k: u64| derive(self.seed, &[k]);
        let mut c = self.clone();
        c.attacks.random.seed = s(2);
        c.attacks.general.seed = s(3);
        c.attacks.lr.seed = s(4);
        c.split.seed = s(5);
        c.ga.seed = s(6);
        c.detector.seed = s(7);
        c.eval.seed = s(8);
        c.psse.seed = s(9);
        c
    }

    fn profile_seed(&self) -> u64 {
        derive(self.seed, &[1])
    }

    pub fn load_network(&self) -> Result<PowerNetwork> {
        let path = Path::new(&self.case);
        if path.exists() {
            parse_case(path)
        } else {
            bundled_case(&self.case)
        }
    }
}

/// Network, data and scores shared by optimization and evaluation.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub net: PowerNetwork,
    pub profile: LoadProfile,
    pub splits: Splits,
    pub data: DetectorData,
    pub scores: ImportanceScores,
    pub model: PlacementModel,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let config = config.resolved();
    let net = config.load_network()?;
    let profile = LoadProfile::generate(&net, &config.profile, config.profile_seed())?;
    let benign = generate_dataset(&net, &profile)?.frames;
    let splits = make_splits(&net, &profile, &benign, &config.attacks, &config.split)?;
    let data = DetectorData::new(splits.train.clone(), splits.val.clone())?;
    let scores = importance_scores(&net, &config.importance)?;
    let model = PlacementModel::all_buses(&net, scores.score.clone(), config.constraints)?;
    Ok(Prepared { config, net, profile, splits, data, scores, model })
}

/// Constraint violation, sensor count and detector loss. Infeasible
/// layouts are not trained: Deb's rules never compare their losses.
struct ClosedLoop<'a> {
    net: &'a PowerNetwork,
    model: &'a PlacementModel,
    f2: F2Evaluator<'a>,
}

impl Evaluator for ClosedLoop<'_> {
    fn evaluate(&self, genome: &PlacementGenome) -> Result<Fitness> {
        let v = self.model.total_violation(self.net, genome).total;
        let f1 = genome.popcount();
        if v > 0.0 {
            return Ok(Fitness { v, f1, f2: f64::INFINITY });
        }
        Ok(Fitness { v, f1, f2: self.f2.f2(&self.model.sensors(genome))? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoEntry {
    /// Sorted 1-based bus numbers.
    pub buses: Vec<usize>,
    pub v: f64,
    pub f1: usize,
    /// Absent for layouts that were not trained.
    pub f2: Option<f64>,
}

impl ParetoEntry {
    fn new(model: &PlacementModel, genome: &PlacementGenome, fit: &Fitness) -> Self {
        ParetoEntry {
            buses: model.to_bus_ids(genome),
            v: fit.v,
            f1: fit.f1,
            f2: fit.f2.is_finite().then_some(fit.f2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub champion: ParetoEntry,
    pub greedy: ParetoEntry,
    pub pareto: Vec<ParetoEntry>,
    pub history: Vec<GenerationLog>,
    pub evaluations: usize,
    pub trainings: usize,
    pub failures: usize,
}

pub fn run_optimize(prep: &Prepared) -> Result<OptimizeResult> {
    let cfg = &prep.config;
    let eval = ClosedLoop {
        net: &prep.net,
        model: &prep.model,
        f2: F2Evaluator::new(&prep.net, &prep.data, cfg.detector.clone(), cfg.baseline_layout),
    };
    let res = evolve(&prep.model, &prep.scores.score, &eval, &cfg.ga)?;
    let k = cfg.ga.resolved_k(prep.model.n_candidates());
    let greedy = greedy_placement(&prep.scores.score, k, cfg.ga.seed)?;
    let greedy_fit = eval.evaluate(&greedy)?;
    let mut pareto: Vec<ParetoEntry> =
        res.pareto_front().iter().map(|i| ParetoEntry::new(&prep.model, &i.genome, &i.fitness)).collect();
    pareto.sort_by(|a, b| {
        a.f1.cmp(&b.f1)
            .then(a.f2.unwrap_or(f64::INFINITY).total_cmp(&b.f2.unwrap_or(f64::INFINITY)))
            .then(a.buses.cmp(&b.buses))
    });
    pareto.dedup();
    Ok(OptimizeResult {
        champion: ParetoEntry::new(&prep.model, &res.champion.genome, &res.champion.fitness),
        greedy: ParetoEntry::new(&prep.model, &greedy, &greedy_fit),
        pareto,
        history: res.history,
        evaluations: res.evaluations,
        trainings: eval.f2.trainings(),
        failures: res.failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPlacement {
    pub method: String,
    /// Sorted 1-based bus numbers.
    pub buses: Vec<usize>,
}

/// Contents of `placements.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementFile {
    pub config: Option<ExperimentConfig>,
    pub champion: Option<ParetoEntry>,
    pub placements: Vec<NamedPlacement>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PlacementInput {
    File(PlacementFile),
    Named(NamedPlacement),
    Buses { buses: Vec<usize> },
    Bare(Vec<usize>),
}

/// Reads a results `placements.json`, a single `{method, buses}` object,
/// a `{buses}` object or a bare array of 1-based bus numbers.
pub fn read_placements(path: &Path) -> Result<Vec<NamedPlacement>> {
    let text = fs::read_to_string(path)?;
    let input: PlacementInput = serde_json::from_str(&text)?;
    let external = || path.file_stem().map_or("external".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(match input {
        PlacementInput::File(f) => f.placements,
        PlacementInput::Named(p) => vec![p],
        PlacementInput::Buses { buses } | PlacementInput::Bare(buses) => vec![NamedPlacement { method: external(), buses }],
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes `placements.json`, `pareto.json` and `log.jsonl`.
pub fn write_optimize(dir: &Path, prep: &Prepared, res: &OptimizeResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    let file = PlacementFile {
        config: Some(prep.config.clone()),
        champion: Some(res.champion.clone()),
        placements: vec![
            NamedPlacement { method: "ga".into(), buses: res.champion.buses.clone() },
            NamedPlacement { method: "greedy".into(), buses: res.greedy.buses.clone() },
            NamedPlacement { method: "baseline".into(), buses: vec![] },
        ],
    };
    write_json(&dir.join("placements.json"), &file)?;
    write_json(&dir.join("pareto.json"), &res.pareto)?;
    let mut log = BufWriter::new(File::create(dir.join("log.jsonl"))?);
    for g in &res.history {
        serde_json::to_writer(&mut log, &serde_json::json!({"event": "generation", "log": g}))?;
        log.write_all(b"\n")?;
    }
    let done = serde_json::json!({
        "event": "optimize",
        "seed": prep.config.seed,
        "evaluations": res.evaluations,
        "trainings": res.trainings,
        "failures": res.failures,
        "greedy": res.greedy,
    });
    serde_json::to_writer(&mut log, &done)?;
    log.write_all(b"\n")?;
    log.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub buses: Vec<usize>,
    pub nominal: Metrics,
    /// Nominal metrics minus those of the baseline layout.
    pub improvement: Metrics,
    pub val_loss: f64,
    pub robustness: RobustnessReport,
}

fn diff(a: &Metrics, b: &Metrics) -> Metrics {
    Metrics { acc: a.acc - b.acc, tpr: a.tpr - b.tpr, fpr: a.fpr - b.fpr, prec: a.prec - b.prec, f1: a.f1 - b.f1 }
}

/// Trains one detector per placement, scores it on the test set and runs
/// the failure sweep. A `baseline` row (no sensors) is always included.
pub fn run_evaluate(prep: &Prepared, placements: &[NamedPlacement]) -> Result<Vec<MethodResult>> {
    let cfg = &prep.config;
    let mut methods: Vec<NamedPlacement> = Vec::with_capacity(placements.len() + 1);
    if !placements.iter().any(|p| p.method == "baseline") {
        methods.push(NamedPlacement { method: "baseline".into(), buses: vec![] });
    }
    methods.extend(placements.iter().cloned());
    let graph = Graph::of(&prep.net);
    let rows: Vec<(NamedPlacement, Metrics, f64, RobustnessReport)> = methods
        .into_par_iter()
        .map(|p| {
            let sensors: Vec<usize> = prep.model.from_bus_ids(&p.buses).map(|g| prep.model.sensors(&g))?;
            let (out, layout) = train_for_layout(&prep.net, &prep.data, &sensors, cfg.baseline_layout, &cfg.detector)?;
            let test = encode_frames(&prep.splits.test, &layout, &out.model.normalizer);
            let nominal = evaluate(&out.model, &graph, &test, 0.5)?;
            let levels = match &cfg.eval.failure_levels {
                Some(l) => l.iter().copied().filter(|&k| k <= sensors.len()).collect(),
                None => failure_levels(prep.net.n_buses(), sensors.len(), cfg.eval.failure_fraction, cfg.eval.max_levels),
            };
            let rob = robustness_report(
                &out.model,
                &prep.net,
                &sensors,
                &prep.splits.test,
                &levels,
                cfg.eval.trials,
                cfg.eval.seed,
                cfg.baseline_layout,
            )?;
            let mut buses = p.buses.clone();
            buses.sort_unstable();
            Ok((NamedPlacement { method: p.method, buses }, nominal, out.val_loss.total, rob))
        })
        .collect::<Result<_>>()?;
    let base = rows.iter().find(|r| r.0.method == "baseline").map(|r| r.1).unwrap_or_default();
    Ok(rows
        .into_iter()
        .map(|(p, nominal, val_loss, robustness)| MethodResult {
            method: p.method,
            buses: p.buses,
            improvement: diff(&nominal, &base),
            nominal,
            val_loss,
            robustness,
        })
        .collect())
}

pub const METRICS_HEADER: [&str; 20] = [
    "method", "buses", "n_sensors", "ACC", "TPR", "FPR", "PREC", "F1", "dACC", "dTPR", "dFPR", "dPREC", "dF1",
    "val_loss", "F_crit", "R", "A_F1", "mean_ACC", "mean_F1", "mean_PREC",
];

pub const ROBUSTNESS_HEADER: [&str; 7] = ["method", "k", "ACC", "TPR", "FPR", "PREC", "F1"];

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.into())
}

/// Writes `metrics.csv`, `robustness.csv` and appends the evaluation
/// metadata to `log.jsonl`.
pub fn write_evaluation(dir: &Path, prep: &Prepared, results: &[MethodResult]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut m = csv::Writer::from_path(dir.join("metrics.csv")).map_err(csv_err)?;
    m.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in results {
        let ids: Vec<String> = r.buses.iter().map(|b| b.to_string()).collect();
        let (n, d, rb) = (&r.nominal, &r.improvement, &r.robustness);
        let mut row = vec![r.method.clone(), ids.join(" "), r.buses.len().to_string()];
        row.extend([n.acc, n.tpr, n.fpr, n.prec, n.f1, d.acc, d.tpr, d.fpr, d.prec, d.f1, r.val_loss].map(|v| v.to_string()));
        row.push(rb.f_crit.to_string());
        row.extend([rb.r, rb.a_f1, rb.mean_acc, rb.mean_f1, rb.mean_prec].map(|v| v.to_string()));
        m.write_record(&row).map_err(csv_err)?;
    }
    m.flush()?;
    let mut w = csv::Writer::from_path(dir.join("robustness.csv")).map_err(csv_err)?;
    w.write_record(ROBUSTNESS_HEADER).map_err(csv_err)?;
    for r in results {
        for l in &r.robustness.levels {
            let mut row = vec![r.method.clone(), l.k.to_string()];
            row.extend([l.acc, l.tpr, l.fpr, l.prec, l.f1].map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    let mut log = OpenOptions::new().create(true).append(true).open(dir.join("log.jsonl"))?;
    let meta = serde_json::json!({
        "event": "evaluate",
        "seed": prep.config.seed,
        "retrained_under_failures": false,
        "f_crit": "smallest failure count whose mean F1 is below 0.9 x the no-failure F1, else the largest count tested",
        "r": "1 / (1 + mean relative accuracy loss over failure counts > 0), net gains count as 0",
        "a_f1": "trapezoidal area of F1 against failure count / largest count tested",
        "trials": prep.config.eval.trials,
        "test_frames": prep.splits.test.len(),
    });
    serde_json::to_writer(&mut log, &meta)?;
    log.write_all(b"\n")?;
    Ok(())
}
