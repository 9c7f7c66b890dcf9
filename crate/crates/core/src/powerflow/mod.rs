//! AC power flow and measurement frames.

mod dataset;
mod frame;
mod io;

pub use dataset::{generate_dataset, Dataset, LoadProfile, ProfileConfig};
pub use frame::{extract_frame, AttackType, Channel, Label, MeasurementFrame, CHANNELS};
pub use io::{read_csv, read_jsonl, write_csv, write_jsonl, FrameRow};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{BusKind, PowerNetwork};

/// Per-bus demand and generation schedule, per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    pub gen_p: Vec<f64>,
}

impl Dispatch {
    /// The base-case loads and generator schedule from the case file.
    pub fn base(net: &PowerNetwork) -> Self {
        Dispatch {
            load_p: net.buses.iter().map(|b| b.base_load_p).collect(),
            load_q: net.buses.iter().map(|b| b.base_load_q).collect(),
            gen_p: net.buses.iter().map(|b| b.gen_p).collect(),
        }
    }

    /// Base case with loads scaled per bus; scheduled generation follows
    /// the total active load so the slack only covers the residual.
    pub fn scaled(net: &PowerNetwork, multipliers: &[f64]) -> Self {
        let mut d = Self::base(net);
        let before: f64 = d.load_p.iter().sum();
        for (i, m) in multipliers.iter().enumerate() {
            d.load_p[i] *= m;
            d.load_q[i] *= m;
        }
        let after: f64 = d.load_p.iter().sum();
        if before > 0.0 {
            let ratio = after / before;
            d.gen_p.iter_mut().for_each(|g| *g *= ratio);
        }
        d
    }

    /// Specified complex injection (generation minus load) at each bus.
    pub fn injections(&self) -> Vec<Complex64> {
        (0..self.load_p.len())
            .map(|i| Complex64::new(self.gen_p[i] - self.load_p[i], -self.load_q[i]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions { max_iterations: 20, tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    pub iterations: usize,
    /// Infinity norm of the final power mismatch, p.u.
    pub mismatch: f64,
}

impl PowerFlowSolution {
    pub fn voltages(&self) -> Vec<Complex64> {
        self.vm.iter().zip(&self.va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
    }
}

/// Polar Newton-Raphson formulation: state is the angles of all non-slack
/// buses followed by the magnitudes of load buses.
pub struct NewtonSystem<'a> {
    net: &'a PowerNetwork,
    spec: Vec<Complex64>,
    pvpq: Vec<usize>,
    pq: Vec<usize>,
    base_vm: Vec<f64>,
}

impl<'a> NewtonSystem<'a> {
    pub fn new(net: &'a PowerNetwork, dispatch: &Dispatch) -> Self {
        let pvpq: Vec<usize> = (0..net.n_buses()).filter(|&i| net.buses[i].kind != BusKind::Slack).collect();
        let pq = net.buses_of_kind(BusKind::Load);
        let base_vm = net.buses.iter().map(|b| b.voltage_setpoint).collect();
        NewtonSystem { net, spec: dispatch.injections(), pvpq, pq, base_vm }
    }

    pub fn dim(&self) -> usize {
        self.pvpq.len() + self.pq.len()
    }

    /// Flat start: setpoint magnitudes on generator buses, 1.0 elsewhere, zero angles.
    pub fn flat_start(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        for (k, &i) in self.pq.iter().enumerate() {
            x[self.pvpq.len() + k] = self.base_vm[i];
        }
        x
    }

    pub fn voltages(&self, x: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let mut vm = self.base_vm.clone();
        let mut va = vec![0.0; vm.len()];
        for (k, &i) in self.pvpq.iter().enumerate() {
            va[i] = x[k];
        }
        for (k, &i) in self.pq.iter().enumerate() {
            vm[i] = x[self.pvpq.len() + k];
        }
        (vm, va)
    }

    fn complex_voltages(&self, x: &DVector<f64>) -> DVector<Complex64> {
        let (vm, va) = self.voltages(x);
        DVector::from_iterator(vm.len(), vm.iter().zip(&va).map(|(&m, &a)| Complex64::from_polar(m, a)))
    }

    /// Calculated minus specified injections on the equations that are enforced.
    pub fn mismatch(&self, x: &DVector<f64>) -> DVector<f64> {
        let v = self.complex_voltages(x);
        let i = self.net.ybus() * &v;
        let s: Vec<Complex64> = v.iter().zip(i.iter()).map(|(v, i)| v * i.conj()).collect();
        let mut f = DVector::zeros(self.dim());
        for (k, &b) in self.pvpq.iter().enumerate() {
            f[k] = s[b].re - self.spec[b].re;
        }
        for (k, &b) in self.pq.iter().enumerate() {
            f[self.pvpq.len() + k] = s[b].im - self.spec[b].im;
        }
        f
    }

    /// Analytic Jacobian of [`Self::mismatch`].
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (ds_dva, ds_dvm) = power_derivatives(self.net.ybus(), &self.complex_voltages(x));
        let npvpq = self.pvpq.len();
        let mut j = DMatrix::zeros(self.dim(), self.dim());
        for (r, &bi) in self.pvpq.iter().enumerate() {
            for (c, &bj) in self.pvpq.iter().enumerate() {
                j[(r, c)] = ds_dva[(bi, bj)].re;
            }
            for (c, &bj) in self.pq.iter().enumerate() {
                j[(r, npvpq + c)] = ds_dvm[(bi, bj)].re;
            }
        }
        for (r, &bi) in self.pq.iter().enumerate() {
            for (c, &bj) in self.pvpq.iter().enumerate() {
                j[(npvpq + r, c)] = ds_dva[(bi, bj)].im;
            }
            for (c, &bj) in self.pq.iter().enumerate() {
                j[(npvpq + r, npvpq + c)] = ds_dvm[(bi, bj)].im;
            }
        }
        j
    }
}

/// Partial derivatives of complex bus injections `S = diag(V) conj(Y V)`
/// with respect to voltage angles and magnitudes.
pub(crate) fn power_derivatives(
    y: &DMatrix<Complex64>,
    v: &DVector<Complex64>,
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = v.len();
    let ibus = y * v;
    let vnorm: Vec<Complex64> = v.iter().map(|v| if v.norm() > 0.0 { v / v.norm() } else { Complex64::new(1.0, 0.0) }).collect();
    let mut ds_dva = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut ds_dvm = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let j = Complex64::new(0.0, 1.0);
    for r in 0..n {
        for c in 0..n {
            let yrc = y[(r, c)];
            // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
            let mut a = -(yrc * v[c]).conj();
            // dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
            let mut m = v[r] * (yrc * vnorm[c]).conj();
            if r == c {
                a += ibus[r].conj();
                m += ibus[r].conj() * vnorm[r];
            }
            ds_dva[(r, c)] = j * v[r] * a;
            ds_dvm[(r, c)] = m;
        }
    }
    (ds_dva, ds_dvm)
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solves the AC power flow by Newton-Raphson from a flat start.
pub fn solve_powerflow(net: &PowerNetwork, dispatch: &Dispatch, opts: &PowerFlowOptions) -> Result<PowerFlowSolution> {
    let sys = NewtonSystem::new(net, dispatch);
    let mut x = sys.flat_start();
    let mut f = sys.mismatch(&x);
    let mut norm = inf_norm(&f);
    let mut it = 0;
    while norm >= opts.tolerance {
        if it == opts.max_iterations || !norm.is_finite() {
            return Err(Error::Divergence { iterations: it, mismatch: norm });
        }
        let jac = sys.jacobian(&x);
        let dx = jac
            .lu()
            .solve(&f)
            .ok_or_else(|| Error::Divergence { iterations: it, mismatch: norm })?;
        x -= dx;
        f = sys.mismatch(&x);
        norm = inf_norm(&f);
        it += 1;
    }
    let (vm, va) = sys.voltages(&x);
    Ok(PowerFlowSolution { vm, va, iterations: it, mismatch: norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{bundled_case, testnets};

    #[test]
    fn no_load_network_stays_flat() {
        let net = testnets::graph(4, &[(0, 1), (1, 2), (2, 3)]);
        let mut d = Dispatch::base(&net);
        d.load_p.iter_mut().for_each(|p| *p = 0.0);
        d.load_q.iter_mut().for_each(|q| *q = 0.0);
        let sol = solve_powerflow(&net, &d, &PowerFlowOptions::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.mismatch, 0.0);
        assert!(sol.vm.iter().all(|&v| v == 1.0));
        assert!(sol.va.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn case14_converges_quickly() {
        let net = bundled_case("case14").unwrap();
        let sol = solve_powerflow(&net, &Dispatch::base(&net), &PowerFlowOptions::default()).unwrap();
        assert!(sol.iterations <= 10, "{} iterations", sol.iterations);
        assert!(sol.mismatch < 1e-8);
        // Published solution for the IEEE 14-bus system.
        assert!((sol.vm[13] - 1.036).abs() < 1e-3);
        assert!((sol.va[13].to_degrees() + 16.03).abs() < 0.05);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let net = bundled_case("case14").unwrap();
        let sys = NewtonSystem::new(&net, &Dispatch::base(&net));
        let mut x = sys.flat_start();
        for k in 0..x.len() {
            x[k] += 0.01 * ((k * 7 % 5) as f64 - 2.0);
        }
        let jac = sys.jacobian(&x);
        let h = 1e-6;
        for c in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let col = (sys.mismatch(&xp) - sys.mismatch(&xm)) / (2.0 * h);
            for r in 0..x.len() {
                assert!((col[r] - jac[(r, c)]).abs() < 1e-5, "J[{r},{c}] {} vs {}", jac[(r, c)], col[r]);
            }
        }
    }

    #[test]
    fn injections_sum_to_branch_losses() {
        let net = bundled_case("case30").unwrap();
        let sol = solve_powerflow(&net, &Dispatch::base(&net), &PowerFlowOptions::default()).unwrap();
        let v = sol.voltages();
        let total: Complex64 = {
            let vd = DVector::from_vec(v.clone());
            let i = net.ybus() * &vd;
            vd.iter().zip(i.iter()).map(|(v, i)| v * i.conj()).sum()
        };
        // Independent sum of branch and shunt losses from terminal flows.
        let mut losses = Complex64::new(0.0, 0.0);
        for br in &net.branches {
            let ys = br.series_admittance();
            let t = Complex64::from_polar(br.tap, br.shift);
            let bc = Complex64::new(0.0, br.b_shunt / 2.0);
            let (vf, vt) = (v[br.from], v[br.to]);
            let i_f = (ys + bc) / (t * t.conj()) * vf - ys / t.conj() * vt;
            let i_t = -ys / t * vf + (ys + bc) * vt;
            losses += vf * i_f.conj() + vt * i_t.conj();
        }
        for (b, vb) in net.buses.iter().zip(&v) {
            losses += Complex64::new(b.shunt_g, -b.shunt_b) * vb.norm_sqr();
        }
        assert!((total - losses).norm() < 1e-9);
        assert!(total.re > 0.0);
    }

    #[test]
    fn divergence_is_reported() {
        let net = bundled_case("case14").unwrap();
        let d = Dispatch::scaled(&net, &vec![25.0; 14]);
        match solve_powerflow(&net, &d, &PowerFlowOptions::default()) {
            Err(Error::Divergence { mismatch, .. }) => assert!(mismatch > 1e-8 || mismatch.is_nan()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
