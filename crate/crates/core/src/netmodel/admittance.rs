use nalgebra::DMatrix;
use num_complex::Complex64;

use super::PowerNetwork;
use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

/// Assembles the bus admittance matrix.
///
/// Each branch contributes the standard pi-model stamp with half the line
/// charging at each end; off-nominal taps and phase shifts scale the
/// from-side entries. Bus shunts are added on the diagonal.
pub fn build_ybus(net: &PowerNetwork) -> Result<DMatrix<Complex64>> {
    let n = net.n_buses();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for br in &net.branches {
        let z = Complex64::new(br.r, br.x);
        if z.norm() == 0.0 {
            return Err(Error::ZeroImpedance { from: br.from, to: br.to });
        }
        let ys = Complex64::new(1.0, 0.0) / z;
        let tap = Complex64::from_polar(br.tap, br.shift);
        let ytt = ys + Complex64::new(0.0, br.b_shunt / 2.0);
        let yff = ytt / (tap * tap.conj());
        let yft = -ys / tap.conj();
        let ytf = -ys / tap;
        y[(br.from, br.from)] += yff;
        y[(br.to, br.to)] += ytt;
        y[(br.from, br.to)] += yft;
        y[(br.to, br.from)] += ytf;
    }
    for bus in &net.buses {
        y[(bus.id, bus.id)] += Complex64::new(bus.shunt_g, bus.shunt_b);
    }
    Ok(y)
}

/// True when `y` is numerically rank deficient.
pub fn is_singular(y: &DMatrix<Complex64>) -> bool {
    let sv = y.clone().singular_values();
    let max = sv.max();
    max == 0.0 || sv.min() <= RANK_TOL * max
}

/// Impedance matrix: the exact inverse of a nonsingular Ybus, otherwise
/// its Moore-Penrose pseudo-inverse.
pub fn build_zbus(ybus: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    if ybus.nrows() == 0 {
        return ybus.clone();
    }
    let svd = ybus.clone().svd(true, true);
    let max = svd.singular_values.max();
    if max > 0.0 && svd.singular_values.min() > RANK_TOL * max {
        if let Some(inv) = ybus.clone().lu().try_inverse() {
            return inv;
        }
    }
    svd.pseudo_inverse(RANK_TOL * max.max(f64::MIN_POSITIVE))
        .expect("SVD computed with both singular vector sets")
}

#[cfg(test)]
mod tests {
    use super::super::testnets::*;
    use super::super::BusKind;
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_bus(branches: Vec<super::super::Branch>, shunt_b: f64) -> PowerNetwork {
        let mut b1 = bus(1, BusKind::Load, 0.5, 0.1);
        b1.shunt_b = shunt_b;
        PowerNetwork::new("two", 100.0, vec![bus(0, BusKind::Slack, 0.0, 0.0), b1], branches).unwrap()
    }

    #[test]
    fn single_reactive_line() {
        let net = two_bus(vec![line(0, 1, 0.0, 0.1)], 0.0);
        let y = net.ybus();
        assert!((y[(0, 0)] - c(0.0, -10.0)).norm() < 1e-12);
        assert!((y[(1, 1)] - c(0.0, -10.0)).norm() < 1e-12);
        assert!((y[(0, 1)] - c(0.0, 10.0)).norm() < 1e-12);
        assert!((y[(1, 0)] - c(0.0, 10.0)).norm() < 1e-12);
    }

    #[test]
    fn parallel_lines_double_admittance() {
        let one = two_bus(vec![line(0, 1, 0.02, 0.1)], 0.0);
        let two = two_bus(vec![line(0, 1, 0.02, 0.1), line(0, 1, 0.02, 0.1)], 0.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((two.ybus()[(i, j)] - one.ybus()[(i, j)] * 2.0).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn nonsingular_inverse() {
        let net = two_bus(vec![line(0, 1, 0.01, 0.1)], 0.5);
        let prod = net.zbus() * net.ybus();
        let eye = DMatrix::<Complex64>::identity(2, 2);
        assert!((prod - eye).norm() < 1e-10);
    }

    #[test]
    fn singular_pseudo_inverse() {
        let net = graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert!(is_singular(net.ybus()));
        let z = net.zbus();
        let zyz = z * net.ybus() * z;
        assert!((zyz - z).norm() < 1e-8);
    }

    #[test]
    fn kirchhoff_row_sums_without_shunts() {
        let net = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)]);
        for i in 0..5 {
            let s: Complex64 = net.ybus().row(i).iter().sum();
            assert!(s.norm() < 1e-10);
        }
    }

    #[test]
    fn tap_breaks_symmetry_only_when_shifted() {
        let mut br = line(0, 1, 0.01, 0.1);
        br.tap = 0.95;
        let net = two_bus(vec![br.clone()], 0.0);
        assert!((net.ybus()[(0, 1)] - net.ybus()[(1, 0)]).norm() < 1e-12);
        br.shift = 0.1;
        let net = two_bus(vec![br], 0.0);
        assert!((net.ybus()[(0, 1)] - net.ybus()[(1, 0)]).norm() > 1e-3);
    }
}
