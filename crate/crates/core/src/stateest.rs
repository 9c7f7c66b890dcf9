//! Weighted least squares state estimation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{BusKind, PowerNetwork};
use crate::powerflow::{power_derivatives, Channel, MeasurementFrame};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeasKind {
    Vmag,
    Vangle,
    Pinj,
    Qinj,
}

impl MeasKind {
    fn channel(self) -> Channel {
        match self {
            MeasKind::Vmag => Channel::V,
            MeasKind::Vangle => Channel::Theta,
            MeasKind::Pinj => Channel::P,
            MeasKind::Qinj => Channel::Q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub kind: MeasKind,
    pub bus: usize,
    pub value: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub rows: Vec<Measurement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsseConfig {
    /// Variance of metered rows.
    pub variance: f64,
    /// Variance multiplier for load-bus pseudo-measurements.
    pub pseudo_factor: f64,
    /// Standard deviation of the Gaussian noise added to every row.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PsseConfig {
    fn default() -> Self {
        PsseConfig { variance: 1e-4, pseudo_factor: 10.0, noise_sigma: 0.01, seed: 0 }
    }
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, kind: MeasKind, bus: usize, value: f64, variance: f64) -> Result<()> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Config(format!("measurement variance must be positive, got {variance}")));
        }
        self.rows.push(Measurement { kind, bus, value, variance });
        Ok(())
    }
}

/// Baseline metering per bus role plus `(Vmag, Vangle, Pinj, Qinj)` at each sensor bus.
/// Load-bus baseline rows are pseudo-measurements with inflated variance.
pub fn build_measurement_set(
    net: &PowerNetwork,
    frame: &MeasurementFrame,
    sensors: &[usize],
    cfg: &PsseConfig,
) -> Result<MeasurementSet> {
    let mut set = MeasurementSet::default();
    let metered = cfg.variance;
    let pseudo = cfg.variance * cfg.pseudo_factor;
    for b in &net.buses {
        let (kinds, var): (&[MeasKind], f64) = match b.kind {
            BusKind::Slack => (&[MeasKind::Vmag, MeasKind::Vangle, MeasKind::Pinj], metered),
            BusKind::Generator => (&[MeasKind::Vmag, MeasKind::Pinj], metered),
            BusKind::Load => (&[MeasKind::Pinj, MeasKind::Qinj], pseudo),
        };
        for &k in kinds {
            set.push(k, b.id, frame.get(b.id, k.channel()), var)?;
        }
    }
    for &s in sensors {
        if s >= net.n_buses() {
            return Err(Error::Config(format!("sensor bus index {s} out of range")));
        }
        for k in [MeasKind::Vmag, MeasKind::Vangle, MeasKind::Pinj, MeasKind::Qinj] {
            set.push(k, s, frame.get(s, k.channel()), metered)?;
        }
    }
    Ok(set)
}

/// Adds independent Gaussian noise; row `r` of frame `t` draws from its own
/// stream keyed by (kind, bus, occurrence), so nested sets share noise on
/// their common rows.
pub fn add_noise(set: &MeasurementSet, sigma: f64, seed: u64, t: usize) -> MeasurementSet {
    if sigma == 0.0 {
        return set.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut seen = std::collections::BTreeMap::new();
    let rows = set
        .rows
        .iter()
        .map(|m| {
            let occ = seen.entry((m.kind, m.bus)).or_insert(0u64);
            let mut rng = stream(seed, &[0x5e, t as u64, m.kind as u64, m.bus as u64, *occ]);
            *occ += 1;
            Measurement { value: m.value + normal.sample(&mut rng), ..*m }
        })
        .collect();
    MeasurementSet { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEstimate {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Weighted residual norm `sqrt(J)` at the final state.
    pub residual_norm: f64,
    /// `J(x)` before each iteration and at the end.
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for WlsOptions {
    fn default() -> Self {
        WlsOptions { max_iterations: 25, tolerance: 1e-8 }
    }
}

/// Measurement model around a state `[theta (non-slack), Vm (all)]`.
pub struct WlsModel<'a> {
    net: &'a PowerNetwork,
    meas: &'a MeasurementSet,
    slack: usize,
    /// Column of each bus angle, `None` for the slack.
    angle_col: Vec<Option<usize>>,
}

impl<'a> WlsModel<'a> {
    pub fn new(net: &'a PowerNetwork, meas: &'a MeasurementSet) -> Result<Self> {
        let n = net.n_buses();
        if let Some(m) = meas.rows.iter().find(|m| m.bus >= n) {
            return Err(Error::Config(format!("measurement on bus index {} out of range", m.bus)));
        }
        let slack = net.slack();
        let mut col = 0;
        let angle_col = (0..n)
            .map(|i| {
                (i != slack).then(|| {
                    col += 1;
                    col - 1
                })
            })
            .collect();
        Ok(WlsModel { net, meas, slack, angle_col })
    }

    pub fn dim(&self) -> usize {
        2 * self.net.n_buses() - 1
    }

    pub fn flat_start(&self) -> DVector<f64> {
        let n = self.net.n_buses();
        DVector::from_fn(self.dim(), |k, _| if k >= n - 1 { 1.0 } else { 0.0 })
    }

    pub fn unpack(&self, x: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let n = self.net.n_buses();
        let va = (0..n).map(|i| self.angle_col[i].map_or(0.0, |c| x[c])).collect();
        let vm = (0..n).map(|i| x[n - 1 + i]).collect();
        (vm, va)
    }

    fn voltages(&self, x: &DVector<f64>) -> DVector<Complex64> {
        let (vm, va) = self.unpack(x);
        DVector::from_iterator(vm.len(), vm.iter().zip(&va).map(|(&m, &a)| Complex64::from_polar(m, a)))
    }

    /// Predicted measurement values `h(x)`.
    pub fn h(&self, x: &DVector<f64>) -> DVector<f64> {
        let (vm, va) = self.unpack(x);
        let v = self.voltages(x);
        let s: Vec<Complex64> = v.iter().zip((self.net.ybus() * &v).iter()).map(|(v, i)| v * i.conj()).collect();
        DVector::from_iterator(
            self.meas.len(),
            self.meas.rows.iter().map(|m| match m.kind {
                MeasKind::Vmag => vm[m.bus],
                MeasKind::Vangle => va[m.bus],
                MeasKind::Pinj => s[m.bus].re,
                MeasKind::Qinj => s[m.bus].im,
            }),
        )
    }

    /// Analytic Jacobian of [`Self::h`].
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.net.n_buses();
        let (ds_dva, ds_dvm) = power_derivatives(self.net.ybus(), &self.voltages(x));
        let mut jac = DMatrix::zeros(self.meas.len(), self.dim());
        for (r, m) in self.meas.rows.iter().enumerate() {
            match m.kind {
                MeasKind::Vmag => jac[(r, n - 1 + m.bus)] = 1.0,
                MeasKind::Vangle => {
                    if let Some(c) = self.angle_col[m.bus] {
                        jac[(r, c)] = 1.0;
                    }
                }
                MeasKind::Pinj | MeasKind::Qinj => {
                    let part = |z: Complex64| if m.kind == MeasKind::Pinj { z.re } else { z.im };
                    for j in 0..n {
                        if let Some(c) = self.angle_col[j] {
                            jac[(r, c)] = part(ds_dva[(m.bus, j)]);
                        }
                        jac[(r, n - 1 + j)] = part(ds_dvm[(m.bus, j)]);
                    }
                }
            }
        }
        jac
    }

    fn weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.meas.len(), self.meas.rows.iter().map(|m| 1.0 / m.variance))
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let z = DVector::from_iterator(self.meas.len(), self.meas.rows.iter().map(|m| m.value));
        z - self.h(x)
    }

    /// `J(x) = sum w_i r_i^2`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.residual(x).iter().zip(self.weights().iter()).map(|(r, w)| w * r * r).sum()
    }

    /// Gain matrix `H^T W H`.
    pub fn gain(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let hm = self.jacobian(x);
        let w = self.weights();
        let wh = DMatrix::from_fn(hm.nrows(), hm.ncols(), |i, j| w[i] * hm[(i, j)]);
        hm.transpose() * wh
    }

    pub fn slack(&self) -> usize {
        self.slack
    }
}

/// Relative pivot below which the gain matrix is treated as singular.
const PIVOT_TOL: f64 = 1e-10;

fn factor(gain: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = gain.diagonal().iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    let chol = gain.cholesky().ok_or_else(|| Error::Unobservable("gain matrix is not positive definite".into()))?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > PIVOT_TOL * scale) {
        return Err(Error::Unobservable(format!("gain matrix is numerically singular (pivot {min_pivot:.3e})")));
    }
    Ok(chol)
}

/// State covariance `(H^T W H)^-1` at `x`.
pub fn covariance(model: &WlsModel, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(factor(model.gain(x))?.inverse())
}

/// Gauss-Newton WLS from a flat start. Non-convergence returns an estimate
/// with `converged == false`.
pub fn wls_estimate(net: &PowerNetwork, meas: &MeasurementSet, opts: &WlsOptions) -> Result<StateEstimate> {
    let model = WlsModel::new(net, meas)?;
    let mut x = model.flat_start();
    let w = model.weights();
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        let r = model.residual(&x);
        objective.push(r.iter().zip(w.iter()).map(|(r, w)| w * r * r).sum());
        let hm = model.jacobian(&x);
        let wr = r.component_mul(&w);
        let chol = factor(model.gain(&x))?;
        let dx = chol.solve(&(hm.transpose() * wr));
        x += &dx;
        iterations += 1;
        if !dx.iter().all(|d| d.is_finite()) {
            break;
        }
        if dx.iter().fold(0.0_f64, |m, d| m.max(d.abs())) < opts.tolerance {
            converged = true;
            break;
        }
    }
    let j = model.objective(&x);
    objective.push(j);
    let (vm, va) = model.unpack(&x);
    Ok(StateEstimate { vm, va, converged, iterations, residual_norm: j.sqrt(), objective })
}

/// Mean absolute magnitude and angle errors of an estimate against a frame.
pub fn estimate_errors(est: &StateEstimate, truth: &MeasurementFrame) -> (f64, f64) {
    let n = est.vm.len() as f64;
    let dvm = est.vm.iter().enumerate().map(|(i, v)| (v - truth.get(i, Channel::V)).abs()).sum::<f64>() / n;
    let dva = est.va.iter().enumerate().map(|(i, a)| (a - truth.get(i, Channel::Theta)).abs()).sum::<f64>() / n;
    (dvm, dva)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameErrors {
    pub t: usize,
    pub vm_a: f64,
    pub va_a: f64,
    pub vm_b: f64,
    pub va_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsseReport {
    pub frames: Vec<FrameErrors>,
    pub mean_vm_a: f64,
    pub mean_va_a: f64,
    pub mean_vm_b: f64,
    pub mean_va_b: f64,
    /// Percentage reduction of the mean errors of `b` relative to `a`.
    pub dvm_pct: f64,
    pub dva_pct: f64,
}

fn reduction(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        100.0 * (a - b) / a
    }
}

/// Estimates every frame under layouts `a` and `b` with the same noise draws.
pub fn psse_improvement(
    net: &PowerNetwork,
    frames: &[MeasurementFrame],
    sensors_a: &[usize],
    sensors_b: &[usize],
    cfg: &PsseConfig,
) -> Result<PsseReport> {
    if frames.is_empty() {
        return Err(Error::Dataset("no frames to estimate".into()));
    }
    let opts = WlsOptions::default();
    let run = |f: &MeasurementFrame, sensors: &[usize]| -> Result<(f64, f64)> {
        let clean = build_measurement_set(net, f, sensors, cfg)?;
        let noisy = add_noise(&clean, cfg.noise_sigma, cfg.seed, f.t);
        Ok(estimate_errors(&wls_estimate(net, &noisy, &opts)?, f))
    };
    let rows: Vec<FrameErrors> = frames
        .par_iter()
        .map(|f| {
            let (vm_a, va_a) = run(f, sensors_a)?;
            let (vm_b, va_b) = run(f, sensors_b)?;
            Ok(FrameErrors { t: f.t, vm_a, va_a, vm_b, va_b })
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let mean = |g: fn(&FrameErrors) -> f64| rows.iter().map(g).sum::<f64>() / n;
    let (mean_vm_a, mean_va_a) = (mean(|r| r.vm_a), mean(|r| r.va_a));
    let (mean_vm_b, mean_va_b) = (mean(|r| r.vm_b), mean(|r| r.va_b));
    Ok(PsseReport {
        dvm_pct: reduction(mean_vm_a, mean_vm_b),
        dva_pct: reduction(mean_va_a, mean_va_b),
        frames: rows,
        mean_vm_a,
        mean_va_a,
        mean_vm_b,
        mean_va_b,
    })
}

/// Random perturbation of a state vector, used by derivative checks.
pub fn perturbed_state(model: &WlsModel, rng: &mut impl Rng) -> DVector<f64> {
    let n = model.dim();
    let split = (n - 1) / 2;
    DVector::from_fn(n, |k, _| if k < split { rng.random_range(-0.3..0.3) } else { rng.random_range(0.9..1.1) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::testnets::case14;
    use crate::powerflow::{extract_frame, solve_powerflow, Dispatch, PowerFlowOptions};

    fn truth(net: &PowerNetwork) -> MeasurementFrame {
        let sol = solve_powerflow(net, &Dispatch::base(net), &PowerFlowOptions::default()).unwrap();
        extract_frame(net, &sol, 0)
    }

    #[test]
    fn baseline_row_count_follows_roles() {
        let net = case14();
        let f = truth(&net);
        let cfg = PsseConfig::default();
        let set = build_measurement_set(&net, &f, &[], &cfg).unwrap();
        let gens = net.buses_of_kind(BusKind::Generator).len();
        let loads = net.buses_of_kind(BusKind::Load).len();
        assert_eq!(set.len(), 3 + 2 * gens + 2 * loads);
        let all: Vec<usize> = (0..14).collect();
        let full = build_measurement_set(&net, &f, &all, &cfg).unwrap();
        assert_eq!(full.len(), set.len() + 4 * 14);
    }

    #[test]
    fn noiseless_full_set_recovers_truth() {
        let net = case14();
        let f = truth(&net);
        let all: Vec<usize> = (0..14).collect();
        let set = build_measurement_set(&net, &f, &all, &PsseConfig::default()).unwrap();
        let est = wls_estimate(&net, &set, &WlsOptions::default()).unwrap();
        assert!(est.converged);
        let (dvm, dva) = estimate_errors(&est, &f);
        for i in 0..14 {
            assert!((est.vm[i] - f.get(i, Channel::V)).abs() < 1e-6);
            assert!((est.va[i] - f.get(i, Channel::Theta)).abs() < 1e-6);
        }
        assert!(dvm < 1e-6 && dva < 1e-6);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let net = case14();
        let f = truth(&net);
        let set = build_measurement_set(&net, &f, &[1, 4, 8, 12], &PsseConfig::default()).unwrap();
        let model = WlsModel::new(&net, &set).unwrap();
        let mut rng = stream(4, &[]);
        for _ in 0..5 {
            let x = perturbed_state(&model, &mut rng);
            let jac = model.jacobian(&x);
            let h = 1e-6;
            for c in 0..model.dim() {
                let mut up = x.clone();
                up[c] += h;
                let mut down = x.clone();
                down[c] -= h;
                let fd = (model.h(&up) - model.h(&down)) / (2.0 * h);
                for r in 0..set.len() {
                    let (a, b) = (jac[(r, c)], fd[r]);
                    assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1.0), "({r},{c}) {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn angles_only_is_unobservable() {
        let net = case14();
        let f = truth(&net);
        let mut set = MeasurementSet::default();
        for i in 0..14 {
            set.push(MeasKind::Vangle, i, f.get(i, Channel::Theta), 1e-4).unwrap();
        }
        assert!(matches!(wls_estimate(&net, &set, &WlsOptions::default()), Err(Error::Unobservable(_))));
        assert!(set.push(MeasKind::Vmag, 0, 1.0, 0.0).is_err());
    }

    #[test]
    fn objective_does_not_increase() {
        let net = case14();
        let f = truth(&net);
        let cfg = PsseConfig::default();
        for seed in 0..5 {
            let set = add_noise(&build_measurement_set(&net, &f, &[3, 9], &cfg).unwrap(), 0.01, seed, 0);
            let est = wls_estimate(&net, &set, &WlsOptions::default()).unwrap();
            assert!(est.converged);
            for w in est.objective.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12, "{:?}", est.objective);
            }
        }
    }

    #[test]
    fn extra_measurements_never_increase_covariance_trace() {
        let net = case14();
        let f = truth(&net);
        let cfg = PsseConfig::default();
        let full: Vec<usize> = (0..14).collect();
        let x = {
            let set = build_measurement_set(&net, &f, &full, &cfg).unwrap();
            let est = wls_estimate(&net, &set, &WlsOptions::default()).unwrap();
            let m = WlsModel::new(&net, &set).unwrap();
            let mut x = m.flat_start();
            for i in 0..14 {
                if let Some(c) = m.angle_col[i] {
                    x[c] = est.va[i];
                }
                x[13 + i] = est.vm[i];
            }
            x
        };
        let mut prev = f64::INFINITY;
        for k in 0..=14 {
            let set = build_measurement_set(&net, &f, &full[..k], &cfg).unwrap();
            let model = WlsModel::new(&net, &set).unwrap();
            let tr = covariance(&model, &x).unwrap().trace();
            assert!(tr <= prev * (1.0 + 1e-9), "k={k}: {tr} > {prev}");
            prev = tr;
        }
    }

    #[test]
    fn nested_layouts_reduce_noisy_error() {
        let net = case14();
        let frames = vec![truth(&net)];
        let (mut vm, mut va) = (0.0, 0.0);
        for seed in 0..20 {
            let cfg = PsseConfig { seed, ..Default::default() };
            let rep = psse_improvement(&net, &frames, &[], &[1, 5, 8, 12], &cfg).unwrap();
            vm += rep.dvm_pct / 20.0;
            va += rep.dva_pct / 20.0;
        }
        assert!(vm >= 0.0 && va >= 0.0, "{vm} {va}");
    }

    #[test]
    fn identical_layouts_show_no_improvement() {
        let net = case14();
        let frames = vec![truth(&net)];
        let rep = psse_improvement(&net, &frames, &[2, 3], &[2, 3], &PsseConfig::default()).unwrap();
        assert_eq!((rep.dvm_pct, rep.dva_pct), (0.0, 0.0));
    }
}
