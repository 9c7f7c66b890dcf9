//! Power-system network model.
//!
//! A [`PowerNetwork`] is built once from a case file and is immutable
//! afterwards. It carries bus roles, branch parameters, the graph topology
//! and the complex bus admittance / impedance matrices.

mod admittance;
mod case;

pub use admittance::{build_ybus, build_zbus, is_singular};
pub use case::{bundled_case, parse_case, parse_case_str, serialize_case, BUNDLED_CASES};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role of a bus in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Generator,
    Load,
}

/// A bus. Powers are per-unit on the network MVA base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// Contiguous internal index.
    pub id: usize,
    /// Bus number as it appears in the case file.
    pub number: u32,
    pub kind: BusKind,
    pub base_load_p: f64,
    pub base_load_q: f64,
    /// Rated generation capacity (sum of in-service generator Pmax), 0 for loads.
    pub gen_capacity: f64,
    /// Scheduled active generation.
    pub gen_p: f64,
    /// Voltage magnitude setpoint for slack/generator buses, 1.0 otherwise.
    pub voltage_setpoint: f64,
    pub shunt_g: f64,
    pub shunt_b: f64,
}

impl Bus {
    pub fn is_generator(&self) -> bool {
        matches!(self.kind, BusKind::Slack | BusKind::Generator)
    }

    /// Apparent base load |P + jQ|.
    pub fn apparent_load(&self) -> f64 {
        self.base_load_p.hypot(self.base_load_q)
    }
}

/// A transmission line or transformer between two buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b_shunt: f64,
    /// Off-nominal turns ratio, 1.0 for lines.
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
}

impl Branch {
    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r, self.x)
    }
}

#[derive(Debug, Clone)]
pub struct PowerNetwork {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    neighbors: Vec<Vec<usize>>,
    ybus: DMatrix<Complex64>,
    zbus: DMatrix<Complex64>,
}

impl PartialEq for PowerNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.base_mva == other.base_mva
            && self.buses == other.buses
            && self.branches == other.branches
    }
}

impl PowerNetwork {
    /// Validates the buses and branches and assembles the derived matrices.
    pub fn new(name: impl Into<String>, base_mva: f64, buses: Vec<Bus>, branches: Vec<Branch>) -> Result<Self> {
        let n = buses.len();
        if n == 0 {
            return Err(Error::Validation("network has no buses".into()));
        }
        if !(base_mva > 0.0) {
            return Err(Error::Validation(format!("base MVA must be positive, got {base_mva}")));
        }
        let slacks = buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slacks != 1 {
            return Err(Error::Validation(format!("expected exactly one slack bus, found {slacks}")));
        }
        for (i, bus) in buses.iter().enumerate() {
            if bus.id != i {
                return Err(Error::Validation(format!("bus index {} out of order at position {i}", bus.id)));
            }
            if bus.base_load_p < 0.0 || bus.gen_capacity < 0.0 {
                return Err(Error::Validation(format!(
                    "bus {} has negative active load or generation capacity",
                    bus.number
                )));
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for br in &branches {
            if br.from >= n || br.to >= n {
                return Err(Error::Validation(format!("branch {}-{} references unknown bus", br.from, br.to)));
            }
            if br.from == br.to {
                return Err(Error::Validation(format!("branch {}-{} is a self loop", br.from, br.to)));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(Error::ZeroImpedance { from: br.from, to: br.to });
            }
            neighbors[br.from].push(br.to);
            neighbors[br.to].push(br.from);
        }
        for adj in &mut neighbors {
            adj.sort_unstable();
            adj.dedup();
        }

        let mut net = PowerNetwork {
            name: name.into(),
            base_mva,
            buses,
            branches,
            neighbors,
            ybus: DMatrix::zeros(0, 0),
            zbus: DMatrix::zeros(0, 0),
        };
        net.ybus = build_ybus(&net)?;
        net.zbus = build_zbus(&net.ybus);
        Ok(net)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated network has a slack bus")
    }

    /// Sorted, de-duplicated neighbor lists.
    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    /// Symmetric boolean adjacency matrix.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let n = self.n_buses();
        let mut adj = vec![vec![false; n]; n];
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &j in nb {
                adj[i][j] = true;
            }
        }
        adj
    }

    pub fn ybus(&self) -> &DMatrix<Complex64> {
        &self.ybus
    }

    pub fn zbus(&self) -> &DMatrix<Complex64> {
        &self.zbus
    }

    pub fn buses_of_kind(&self, kind: BusKind) -> Vec<usize> {
        self.buses.iter().filter(|b| b.kind == kind).map(|b| b.id).collect()
    }

    /// Slack and generator buses.
    pub fn generator_buses(&self) -> Vec<usize> {
        self.buses.iter().filter(|b| b.is_generator()).map(|b| b.id).collect()
    }

    /// Connected components of the topology, each sorted ascending.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n_buses();
        let mut label = vec![usize::MAX; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let c = comps.len();
            let mut members = vec![start];
            label[start] = c;
            let mut head = 0;
            while head < members.len() {
                let u = members[head];
                head += 1;
                for &v in &self.neighbors[u] {
                    if label[v] == usize::MAX {
                        label[v] = c;
                        members.push(v);
                    }
                }
            }
            members.sort_unstable();
            comps.push(members);
        }
        comps
    }

    /// Returns a copy of this network with buses renumbered by `perm`
    /// (new index of old bus `i` is `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_buses();
        if perm.len() != n {
            return Err(Error::Validation("permutation length mismatch".into()));
        }
        let mut buses = self.buses.clone();
        buses.sort_by_key(|b| perm[b.id]);
        for b in &mut buses {
            b.id = perm[b.id];
        }
        let branches = self
            .branches
            .iter()
            .map(|br| Branch { from: perm[br.from], to: perm[br.to], ..br.clone() })
            .collect();
        PowerNetwork::new(self.name.clone(), self.base_mva, buses, branches)
    }
}
