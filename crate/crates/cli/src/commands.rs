use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::anyhow;
use gridsense::attacks::{attack_general, attack_lr, attack_random, AttackConfig, AttackKind, HistoryRange};
use gridsense::detector::LqMode;
use gridsense::evalharness::{
    prepare, read_placements, run_evaluate, run_optimize, write_evaluation, write_optimize, ExperimentConfig,
    NamedPlacement,
};
use gridsense::importance::{importance_scores, ImportanceWeights, METRICS};
use gridsense::netmodel::{bundled_case, parse_case, PowerNetwork};
use gridsense::powerflow::{
    generate_dataset, read_csv, read_jsonl, write_csv, write_jsonl, Dispatch, LoadProfile, MeasurementFrame, ProfileConfig,
};
use gridsense::stateest::{psse_improvement, PsseConfig};
use gridsense::Error;

use crate::{AttackArgs, Command, EvaluateArgs, ExperimentArgs, ImportanceArgs, KindArg, ProfileArgs, PsseArgs, SimulateArgs};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_CONVERGENCE: u8 = 3;
pub const EXIT_EVALUATOR: u8 = 4;
pub const EXIT_MISSING: u8 = 5;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type Outcome<T = ()> = Result<T, Failure>;

fn fail(code: u8, error: impl Into<anyhow::Error>) -> Failure {
    Failure { code, error: error.into() }
}

/// Exit code of a library error outside the evaluator.
fn classify(e: Error) -> Failure {
    let code = match e {
        Error::Divergence { .. } => EXIT_CONVERGENCE,
        _ => EXIT_CONFIG,
    };
    fail(code, e)
}

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Attack(a) => attack(a),
        Command::Importance(a) => importance(a),
        Command::Optimize(a) => optimize(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Psse(a) => psse(a),
    }
}

fn load_network(case: &str) -> Outcome<PowerNetwork> {
    let path = Path::new(case);
    let net = if path.exists() { parse_case(path) } else { bundled_case(case) };
    net.map_err(|e| fail(EXIT_CONFIG, anyhow!("cannot load case {case:?}: {e}")))
}

fn profile(net: &PowerNetwork, a: &ProfileArgs) -> Outcome<LoadProfile> {
    let cfg = ProfileConfig { timestamps: a.timestamps, noise: a.noise, amplitude: a.amplitude, ..Default::default() };
    LoadProfile::generate(net, &cfg, a.seed).map_err(classify)
}

fn benign_frames(net: &PowerNetwork, profile: &LoadProfile) -> Outcome<Vec<MeasurementFrame>> {
    let data = generate_dataset(net, profile).map_err(classify)?;
    if !data.skipped.is_empty() {
        return Err(fail(
            EXIT_CONVERGENCE,
            anyhow!("power flow did not converge at {} timestamps (first t={})", data.skipped.len(), data.skipped[0]),
        ));
    }
    Ok(data.frames)
}

fn write_frames(path: &Path, frames: &[MeasurementFrame]) -> Outcome {
    let io_fail = |e: io::Error| fail(EXIT_CONFIG, anyhow!("cannot write {}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_fail)?;
    }
    let w = BufWriter::new(File::create(path).map_err(io_fail)?);
    let res = if path.extension().is_some_and(|e| e == "jsonl") { write_jsonl(frames, w) } else { write_csv(frames, w) };
    res.map_err(classify)
}

fn read_frames(path: &Path) -> Outcome<Vec<MeasurementFrame>> {
    let f = File::open(path).map_err(|e| fail(EXIT_CONFIG, anyhow!("cannot open {}: {e}", path.display())))?;
    let r = BufReader::new(f);
    let res = if path.extension().is_some_and(|e| e == "jsonl") { read_jsonl(r) } else { read_csv(r) };
    res.map_err(classify)
}

fn simulate(a: SimulateArgs) -> Outcome {
    let net = load_network(&a.profile.case)?;
    let p = profile(&net, &a.profile)?;
    let frames = benign_frames(&net, &p)?;
    write_frames(&a.out, &frames)?;
    log::info!("wrote {} frames to {}", frames.len(), a.out.display());
    Ok(())
}

fn attack(a: AttackArgs) -> Outcome {
    let kind = match a.kind {
        KindArg::Random => AttackKind::Random,
        KindArg::General => AttackKind::General,
        KindArg::Lr => AttackKind::Lr,
    };
    let cfg = AttackConfig { tau_max: a.tau_max, ..AttackConfig::new(kind, a.alpha, a.fraction, a.attack_seed) };
    cfg.validate().map_err(classify)?;
    let net = load_network(&a.profile.case)?;
    let (benign, prof) = match &a.input {
        Some(path) => {
            if kind == AttackKind::Lr {
                return Err(fail(EXIT_CONFIG, anyhow!("load redistribution re-solves the power flow; use --case instead of --input")));
            }
            (read_frames(path)?, None)
        }
        None => {
            let p = profile(&net, &a.profile)?;
            (benign_frames(&net, &p)?, Some(p))
        }
    };
    if benign.is_empty() {
        return Err(fail(EXIT_CONFIG, anyhow!("no frames to attack")));
    }
    let history = if kind == AttackKind::General { Some(HistoryRange::from_frames(&benign).map_err(classify)?) } else { None };
    let mut out = Vec::with_capacity(benign.len() * 2);
    for f in &benign {
        let attacked = match kind {
            AttackKind::Random => attack_random(f, &cfg),
            AttackKind::General => attack_general(f, history.as_ref().unwrap(), &cfg),
            AttackKind::Lr => {
                let p = prof.as_ref().unwrap();
                attack_lr(&net, &Dispatch::scaled(&net, &p.multipliers[f.t]), f.t, &cfg).map(|a| a.frame)
            }
        }
        .map_err(classify)?;
        if a.with_benign {
            out.push(f.clone());
        }
        out.push(attacked);
    }
    write_frames(&a.out, &out)
}

fn importance(a: ImportanceArgs) -> Outcome {
    let net = load_network(&a.case)?;
    let w = ImportanceWeights { w_bc: a.weights[0], w_eic: a.weights[1], w_ebc: a.weights[2], w_ecd: a.weights[3] };
    let s = importance_scores(&net, &w).map_err(classify)?;
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(File::create(p).map_err(|e| fail(EXIT_CONFIG, e))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let csv_fail = |e: csv::Error| fail(EXIT_CONFIG, e);
    let mut header = vec!["bus"];
    header.extend(METRICS);
    header.push("score");
    w.write_record(&header).map_err(csv_fail)?;
    for (i, b) in net.buses.iter().enumerate() {
        let mut row = vec![b.number.to_string()];
        row.extend(s.raw.iter().map(|m| m[i].to_string()));
        row.push(s.score[i].to_string());
        w.write_record(&row).map_err(csv_fail)?;
    }
    w.flush().map_err(|e| fail(EXIT_CONFIG, e))
}

fn load_config(a: &ExperimentArgs) -> Outcome<ExperimentConfig> {
    let mut cfg = match &a.config {
        None => ExperimentConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| fail(EXIT_CONFIG, anyhow!("cannot read config {}: {e}", path.display())))?;
            if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| fail(EXIT_CONFIG, anyhow!("{}: {e}", path.display())))?
            } else {
                toml::from_str(&text).map_err(|e| fail(EXIT_CONFIG, anyhow!("{}: {e}", path.display())))?
            }
        }
    };
    if let Some(c) = &a.case {
        cfg.case = c.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(o) = &a.out {
        cfg.output = o.clone();
    }
    if let Some(t) = a.timestamps {
        cfg.profile.timestamps = t;
    }
    if let Some(n) = a.pop {
        cfg.ga.n_pop = n;
    }
    if let Some(g) = a.generations {
        cfg.ga.generations = g;
    }
    if let Some(e) = a.epochs {
        cfg.detector.epochs = e;
    }
    if let Some(t) = a.trials {
        cfg.eval.trials = t;
    }
    if a.paper_verbatim_lq {
        cfg.detector.lq_mode = LqMode::Cos;
    }
    cfg.validate().map_err(classify)?;
    Ok(cfg)
}

fn optimize(a: ExperimentArgs) -> Outcome {
    let cfg = load_config(&a)?;
    let prep = prepare(&cfg).map_err(classify)?;
    let res = run_optimize(&prep).map_err(|e| fail(EXIT_EVALUATOR, e))?;
    write_optimize(&cfg.output, &prep, &res).map_err(classify)?;
    println!("champion buses {:?} (V={}, sensors={}, f2={:?})", res.champion.buses, res.champion.v, res.champion.f1, res.champion.f2);
    if res.failures > 0 {
        return Err(fail(EXIT_EVALUATOR, anyhow!("{} fitness evaluations failed; see the log", res.failures)));
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Outcome {
    let cfg = load_config(&a.experiment)?;
    let placements: Vec<NamedPlacement> = match &a.placement {
        None => vec![],
        Some(p) if !p.exists() => return Err(fail(EXIT_MISSING, anyhow!("placement file {} not found", p.display()))),
        Some(p) => read_placements(p).map_err(|e| fail(EXIT_CONFIG, anyhow!("{}: {e}", p.display())))?,
    };
    let prep = prepare(&cfg).map_err(classify)?;
    let results = run_evaluate(&prep, &placements).map_err(|e| fail(EXIT_EVALUATOR, e))?;
    write_evaluation(&cfg.output, &prep, &results).map_err(classify)?;
    for r in &results {
        println!(
            "{:<10} F1={:.4} ACC={:.4} R={:.4} A_F1={:.4} F_crit={}",
            r.method, r.nominal.f1, r.nominal.acc, r.robustness.r, r.robustness.a_f1, r.robustness.f_crit
        );
    }
    Ok(())
}

fn pick_placement(path: &Path, method: Option<&str>) -> Outcome<Vec<usize>> {
    if !path.exists() {
        return Err(fail(EXIT_MISSING, anyhow!("placement file {} not found", path.display())));
    }
    let all = read_placements(path).map_err(|e| fail(EXIT_CONFIG, anyhow!("{}: {e}", path.display())))?;
    let chosen = match method {
        Some(m) => all.iter().find(|p| p.method == m),
        None => all.iter().find(|p| p.method == "ga").or(all.first()),
    };
    chosen.map(|p| p.buses.clone()).ok_or_else(|| fail(EXIT_CONFIG, anyhow!("no matching placement in {}", path.display())))
}

/// 1-based bus positions, as written in placement files, to indices.
fn to_indices(net: &PowerNetwork, buses: &[usize]) -> Outcome<Vec<usize>> {
    buses
        .iter()
        .map(|&b| match b {
            1.. if b <= net.n_buses() => Ok(b - 1),
            _ => Err(fail(EXIT_CONFIG, anyhow!("bus {b} is not in the network"))),
        })
        .collect()
}

fn psse(a: PsseArgs) -> Outcome {
    let net = load_network(&a.case)?;
    let b = to_indices(&net, &pick_placement(&a.placement, a.method.as_deref())?)?;
    let base = match &a.against {
        Some(p) => to_indices(&net, &pick_placement(p, None)?)?,
        None => vec![],
    };
    let pargs = ProfileArgs { case: a.case.clone(), timestamps: a.timestamps, seed: a.seed, noise: 0.05, amplitude: 0.1 };
    let frames = benign_frames(&net, &profile(&net, &pargs)?)?;
    let cfg = PsseConfig { noise_sigma: a.sigma, seed: a.seed, ..Default::default() };
    let rep = psse_improvement(&net, &frames, &base, &b, &cfg).map_err(classify)?;
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(File::create(p).map_err(|e| fail(EXIT_CONFIG, e))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let csv_fail = |e: csv::Error| fail(EXIT_CONFIG, e);
    w.write_record(["t", "vm_err_ref", "va_err_ref", "vm_err", "va_err"]).map_err(csv_fail)?;
    for r in &rep.frames {
        w.write_record([r.t.to_string(), r.vm_a.to_string(), r.va_a.to_string(), r.vm_b.to_string(), r.va_b.to_string()])
            .map_err(csv_fail)?;
    }
    w.flush().map_err(|e| fail(EXIT_CONFIG, e))?;
    drop(w);
    eprintln!(
        "mean |dVm| {:.3e} -> {:.3e} ({:.1}% reduction); mean |dVa| {:.3e} -> {:.3e} ({:.1}% reduction)",
        rep.mean_vm_a, rep.mean_vm_b, rep.dvm_pct, rep.mean_va_a, rep.mean_va_b, rep.dva_pct
    );
    Ok(())
}
