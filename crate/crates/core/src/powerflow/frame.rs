use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::PowerFlowSolution;
use crate::netmodel::PowerNetwork;

/// Number of measurement channels per bus.
pub const CHANNELS: usize = 6;

/// Per-bus measurement channels, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    V = 0,
    I = 1,
    #[serde(rename = "theta")]
    Theta = 2,
    #[serde(rename = "delta")]
    Delta = 3,
    P = 4,
    Q = 5,
}

impl Channel {
    pub const ALL: [Channel; CHANNELS] = [Channel::V, Channel::I, Channel::Theta, Channel::Delta, Channel::P, Channel::Q];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::V => "V",
            Channel::I => "I",
            Channel::Theta => "theta",
            Channel::Delta => "delta",
            Channel::P => "P",
            Channel::Q => "Q",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Channel::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Attacked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackType {
    None,
    Random,
    General,
    Lr,
}

/// One timestamp of per-bus measurements `[V, I, theta, delta, P, Q]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFrame {
    pub t: usize,
    pub buses: Vec<[f64; CHANNELS]>,
    pub label: Label,
    pub attack_type: AttackType,
}

impl MeasurementFrame {
    pub fn get(&self, bus: usize, ch: Channel) -> f64 {
        self.buses[bus][ch.index()]
    }

    pub fn set(&mut self, bus: usize, ch: Channel, value: f64) {
        self.buses[bus][ch.index()] = value;
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn is_attacked(&self) -> bool {
        self.label == Label::Attacked
    }
}

/// Builds the measurement frame of a converged power-flow solution.
///
/// Current injections are `I = Ybus V` and powers `S = V conj(I)`. The
/// current angle of a bus with zero injection is reported as 0.
pub fn extract_frame(net: &PowerNetwork, sol: &PowerFlowSolution, t: usize) -> MeasurementFrame {
    let v = DVector::from_vec(sol.voltages());
    let inj = net.ybus() * &v;
    let buses = v
        .iter()
        .zip(inj.iter())
        .map(|(v, i): (&Complex64, &Complex64)| {
            let s = v * i.conj();
            let delta = if i.norm() == 0.0 { 0.0 } else { i.arg() };
            [v.norm(), i.norm(), v.arg(), delta, s.re, s.im]
        })
        .collect();
    MeasurementFrame { t, buses, label: Label::Benign, attack_type: AttackType::None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::bundled_case;
    use crate::powerflow::{solve_powerflow, Dispatch, PowerFlowOptions};

    #[test]
    fn benign_frame_satisfies_power_identity() {
        let net = bundled_case("case14").unwrap();
        let sol = solve_powerflow(&net, &Dispatch::base(&net), &PowerFlowOptions::default()).unwrap();
        let f = extract_frame(&net, &sol, 3);
        assert_eq!(f.t, 3);
        for b in &f.buses {
            let [v, i, th, de, p, q] = *b;
            assert!((p - v * i * (th - de).cos()).abs() < 1e-6);
            assert!((q - v * i * (th - de).sin()).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_injection_bus_has_zero_current_angle() {
        let net = crate::netmodel::testnets::graph(3, &[(0, 1), (1, 2)]);
        let sol = PowerFlowSolution { vm: vec![1.0; 3], va: vec![0.0; 3], iterations: 0, mismatch: 0.0 };
        let f = extract_frame(&net, &sol, 0);
        for b in &f.buses {
            assert_eq!(b[Channel::I.index()], 0.0);
            assert_eq!(b[Channel::Delta.index()], 0.0);
            assert_eq!(b[Channel::P.index()], 0.0);
            assert_eq!(b[Channel::Q.index()], 0.0);
        }
    }

    #[test]
    fn channel_names_round_trip() {
        for c in Channel::ALL {
            assert_eq!(Channel::parse(c.name()), Some(c));
        }
    }
}
