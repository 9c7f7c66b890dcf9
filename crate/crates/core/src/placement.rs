//! Sensor placement genomes and the constraint-violation function.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::PowerNetwork;

/// Binary sensor layout over the candidate buses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PlacementGenome {
    pub bits: Vec<bool>,
}

impl PlacementGenome {
    pub fn empty(n: usize) -> Self {
        PlacementGenome { bits: vec![false; n] }
    }

    pub fn from_indices(n: usize, selected: &[usize]) -> Self {
        let mut g = Self::empty(n);
        for &i in selected {
            g.bits[i] = true;
        }
        g
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Indices of set bits, ascending.
    pub fn selected(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    pub fn hamming(&self, other: &PlacementGenome) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }

    /// Compact `0`/`1` string, used as a stable key.
    pub fn key(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// Constraint settings: coverage radius, minimum redundancy and the
/// violation weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintConfig {
    pub r: usize,
    pub r_min: usize,
    pub w_cn: f64,
    pub w_cr: f64,
    pub w_rd: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig { r: 1, r_min: 2, w_cn: 1.0, w_cr: 1.0, w_rd: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub p_connectivity: f64,
    pub p_coverage: f64,
    pub p_redundancy: f64,
    pub w_cn: f64,
    pub w_cr: f64,
    pub w_rd: f64,
    pub total: f64,
}

/// Hop distances from `src` to every bus; `usize::MAX` when unreachable.
pub fn hop_distances(net: &PowerNetwork, src: usize) -> Vec<usize> {
    let adj = net.neighbors();
    let mut dist = vec![usize::MAX; net.n_buses()];
    dist[src] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(v) = q.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                q.push_back(w);
            }
        }
    }
    dist
}

/// 0 when the subgraph induced on `sensors` is connected, 1 otherwise.
/// An empty sensor set counts as disconnected.
pub fn check_connectivity(net: &PowerNetwork, sensors: &[usize]) -> f64 {
    let Some(&root) = sensors.first() else { return 1.0 };
    let mut on = vec![false; net.n_buses()];
    sensors.iter().for_each(|&s| on[s] = true);
    let adj = net.neighbors();
    let mut seen = vec![false; net.n_buses()];
    seen[root] = true;
    let mut reached = 1;
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if on[w] && !seen[w] {
                seen[w] = true;
                reached += 1;
                stack.push(w);
            }
        }
    }
    let distinct = on.iter().filter(|&&b| b).count();
    if reached == distinct {
        0.0
    } else {
        1.0
    }
}

/// Precomputed constraint evaluator for one network and candidate set.
#[derive(Debug, Clone)]
pub struct PlacementModel {
    pub candidates: Vec<usize>,
    /// Criticality weight of each bus.
    pub alpha: Vec<f64>,
    pub config: ConstraintConfig,
    /// For each bus `j`, the candidate positions within `r` hops of `j`.
    hood: Vec<Vec<usize>>,
    n_buses: usize,
}

impl PlacementModel {
    pub fn new(net: &PowerNetwork, candidates: Vec<usize>, alpha: Vec<f64>, config: ConstraintConfig) -> Result<Self> {
        let n = net.n_buses();
        if candidates.is_empty() {
            return Err(Error::Config("candidate set is empty".into()));
        }
        if candidates.iter().any(|&c| c >= n) {
            return Err(Error::Config("candidate bus out of range".into()));
        }
        let mut sorted = candidates.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != candidates.len() {
            return Err(Error::Config("duplicate candidate bus".into()));
        }
        if alpha.len() != n {
            return Err(Error::Config("criticality weights must cover every bus".into()));
        }
        if config.r_min < 1 {
            return Err(Error::Config("minimum redundancy must be at least 1".into()));
        }
        let mut position = vec![usize::MAX; n];
        for (k, &c) in candidates.iter().enumerate() {
            position[c] = k;
        }
        let hood = (0..n)
            .map(|j| {
                let dist = hop_distances(net, j);
                (0..n).filter(|&i| dist[i] <= config.r && position[i] != usize::MAX).map(|i| position[i]).collect()
            })
            .collect();
        Ok(PlacementModel { candidates, alpha, config, hood, n_buses: n })
    }

    /// All buses are candidates.
    pub fn all_buses(net: &PowerNetwork, alpha: Vec<f64>, config: ConstraintConfig) -> Result<Self> {
        Self::new(net, (0..net.n_buses()).collect(), alpha, config)
    }

    pub fn n_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    /// Bus indices carrying a sensor.
    pub fn sensors(&self, genome: &PlacementGenome) -> Vec<usize> {
        genome.selected().into_iter().map(|k| self.candidates[k]).collect()
    }

    /// Sorted 1-based bus numbers of the selected sensors.
    pub fn to_bus_ids(&self, genome: &PlacementGenome) -> Vec<usize> {
        let mut ids: Vec<usize> = self.sensors(genome).into_iter().map(|b| b + 1).collect();
        ids.sort_unstable();
        ids
    }

    pub fn from_bus_ids(&self, ids: &[usize]) -> Result<PlacementGenome> {
        let mut g = PlacementGenome::empty(self.n_candidates());
        for &id in ids {
            let k = self
                .candidates
                .iter()
                .position(|&c| c + 1 == id)
                .ok_or_else(|| Error::Config(format!("bus {id} is not a placement candidate")))?;
            g.bits[k] = true;
        }
        Ok(g)
    }

    /// Candidate positions within `r` hops of bus `j`.
    pub fn coverers(&self, j: usize) -> &[usize] {
        &self.hood[j]
    }

    /// Number of sensors within `r` hops of each bus.
    pub fn sensor_counts(&self, genome: &PlacementGenome) -> Vec<usize> {
        self.hood.iter().map(|h| h.iter().filter(|&&k| genome.bits[k]).count()).collect()
    }

    pub fn connectivity(&self, net: &PowerNetwork, genome: &PlacementGenome) -> f64 {
        check_connectivity(net, &self.sensors(genome))
    }

    /// `(1/N_c) * sum over candidates j of alpha_j * (1 - coverage(j))`.
    pub fn coverage_penalty(&self, genome: &PlacementGenome) -> f64 {
        let uncovered: f64 = self
            .candidates
            .iter()
            .filter(|&&j| !self.hood[j].iter().any(|&k| genome.bits[k]))
            .map(|&j| self.alpha[j])
            .sum();
        uncovered / self.n_candidates() as f64
    }

    /// `(1/N_c) * sum over candidates j of max(R_min - u_j, 0)`.
    pub fn redundancy_penalty(&self, genome: &PlacementGenome) -> f64 {
        let r_min = self.config.r_min;
        let deficit: usize = self
            .candidates
            .iter()
            .map(|&j| r_min.saturating_sub(self.hood[j].iter().filter(|&&k| genome.bits[k]).count()))
            .sum();
        deficit as f64 / self.n_candidates() as f64
    }

    pub fn total_violation(&self, net: &PowerNetwork, genome: &PlacementGenome) -> ConstraintReport {
        let c = &self.config;
        let p_connectivity = self.connectivity(net, genome);
        let p_coverage = self.coverage_penalty(genome);
        let p_redundancy = self.redundancy_penalty(genome);
        ConstraintReport {
            p_connectivity,
            p_coverage,
            p_redundancy,
            w_cn: c.w_cn,
            w_cr: c.w_cr,
            w_rd: c.w_rd,
            total: c.w_cn * p_connectivity + c.w_cr * p_coverage + c.w_rd * p_redundancy,
        }
    }
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Virtual-flow connectivity: the root ships one unit to every other
    //! selected node over edges whose endpoints are both selected.
    use super::*;

    fn bfs_augment(cap: &mut [Vec<i64>], s: usize, t: usize) -> i64 {
        let n = cap.len();
        let mut flow = 0;
        loop {
            let mut prev = vec![usize::MAX; n];
            prev[s] = s;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for v in 0..n {
                    if prev[v] == usize::MAX && cap[u][v] > 0 {
                        prev[v] = u;
                        q.push_back(v);
                    }
                }
            }
            if prev[t] == usize::MAX {
                return flow;
            }
            let mut push = i64::MAX;
            let mut v = t;
            while v != s {
                push = push.min(cap[prev[v]][v]);
                v = prev[v];
            }
            let mut v = t;
            while v != s {
                cap[prev[v]][v] -= push;
                cap[v][prev[v]] += push;
                v = prev[v];
            }
            flow += push;
        }
    }

    /// 0 when the virtual-flow system is feasible, 1 otherwise.
    pub fn flow_connectivity(net: &PowerNetwork, sensors: &[usize]) -> f64 {
        if sensors.is_empty() {
            return 1.0;
        }
        let n = net.n_buses();
        let (src, sink) = (n, n + 1);
        let mut x = vec![false; n];
        sensors.iter().for_each(|&s| x[s] = true);
        let demand = sensors.len() as i64 - 1;
        let mut cap = vec![vec![0i64; n + 2]; n + 2];
        let root = sensors[0];
        cap[src][root] = demand;
        for &s in &sensors[1..] {
            cap[s][sink] = 1;
        }
        for br in &net.branches {
            if x[br.from] && x[br.to] {
                cap[br.from][br.to] = n as i64 - 1;
                cap[br.to][br.from] = n as i64 - 1;
            }
        }
        if bfs_augment(&mut cap, src, sink) == demand {
            0.0
        } else {
            1.0
        }
    }
}
