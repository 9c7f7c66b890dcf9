//! Hybrid node importance from topological and electrical centralities.

use std::collections::{HashMap, VecDeque};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{BusKind, PowerNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImportanceWeights {
    pub w_bc: f64,
    pub w_eic: f64,
    pub w_ebc: f64,
    pub w_ecd: f64,
}

impl Default for ImportanceWeights {
    fn default() -> Self {
        ImportanceWeights { w_bc: 0.25, w_eic: 0.25, w_ebc: 0.25, w_ecd: 0.25 }
    }
}

impl ImportanceWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.w_bc, self.w_eic, self.w_ebc, self.w_ecd]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::Config("importance weights must be non-negative".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("importance weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Metric order used in [`ImportanceScores`].
pub const METRICS: [&str; 4] = ["betweenness", "eigenvector", "electrical_betweenness", "coupling_degree"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScores {
    pub raw: [Vec<f64>; 4],
    pub normalized: [Vec<f64>; 4],
    pub score: Vec<f64>,
}

/// Shortest-path betweenness with unweighted edges; each unordered pair
/// of endpoints is counted once.
pub fn betweenness(net: &PowerNetwork) -> Vec<f64> {
    let n = net.n_buses();
    let adj = net.neighbors();
    let mut cb = vec![0.0; n];
    let mut stack = Vec::with_capacity(n);
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut sigma = vec![0.0; n];
    let mut dist = vec![-1i64; n];
    let mut delta = vec![0.0; n];
    let mut queue = VecDeque::with_capacity(n);
    for s in 0..n {
        stack.clear();
        preds.iter_mut().for_each(Vec::clear);
        sigma.fill(0.0);
        dist.fill(-1);
        delta.fill(0.0);
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &adj[v] {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                cb[w] += delta[w];
            }
        }
    }
    cb.iter_mut().for_each(|c| *c /= 2.0);
    cb
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenvectorCentrality {
    pub values: Vec<f64>,
    /// Dominant adjacency eigenvalue of each bus's component.
    pub eigenvalues: Vec<f64>,
    pub iterations: usize,
}

const EIG_TOL: f64 = 1e-10;
const EIG_MAX_ITER: usize = 10_000;

/// Eigenvector centrality by power iteration, run per connected component
/// on `A + I` (the shift keeps bipartite graphs from oscillating). The
/// result is L2-normalized over the whole network.
pub fn eigenvector_centrality(net: &PowerNetwork) -> Result<EigenvectorCentrality> {
    let n = net.n_buses();
    if n == 0 {
        return Err(Error::Validation("empty network".into()));
    }
    let adj = net.neighbors();
    let mut values = vec![0.0; n];
    let mut eigenvalues = vec![0.0; n];
    let mut iterations = 0;
    for comp in net.components() {
        let m = comp.len();
        let local: HashMap<usize, usize> = comp.iter().enumerate().map(|(k, &b)| (b, k)).collect();
        let mut x = vec![1.0 / (m as f64).sqrt(); m];
        let mut next = vec![0.0; m];
        let mut converged = false;
        let mut gap = f64::INFINITY;
        let mut lambda = 0.0;
        for it in 1..=EIG_MAX_ITER {
            for (k, &b) in comp.iter().enumerate() {
                next[k] = x[k] + adj[b].iter().map(|nb| x[local[nb]]).sum::<f64>();
            }
            let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
            next.iter_mut().for_each(|v| *v /= norm);
            gap = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            std::mem::swap(&mut x, &mut next);
            lambda = norm - 1.0;
            iterations = iterations.max(it);
            if gap <= EIG_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence { iterations: EIG_MAX_ITER, gap });
        }
        for (k, &b) in comp.iter().enumerate() {
            values[b] = x[k].max(0.0);
            eigenvalues[b] = lambda;
        }
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    values.iter_mut().for_each(|v| *v /= norm);
    Ok(EigenvectorCentrality { values, eigenvalues, iterations })
}

/// Series admittance of each adjacent bus pair, summed over parallel branches.
fn link_admittances(net: &PowerNetwork) -> HashMap<(usize, usize), Complex64> {
    let mut links = HashMap::new();
    for br in &net.branches {
        let key = (br.from.min(br.to), br.from.max(br.to));
        *links.entry(key).or_insert(Complex64::new(0.0, 0.0)) += br.series_admittance();
    }
    links
}

fn component_labels(net: &PowerNetwork) -> Vec<usize> {
    let mut label = vec![0; net.n_buses()];
    for (c, comp) in net.components().iter().enumerate() {
        for &b in comp {
            label[b] = c;
        }
    }
    label
}

/// Generator buses weighted by capacity and loaded load buses weighted by
/// apparent base load.
pub fn generator_load_sets(net: &PowerNetwork) -> Result<(Vec<(usize, f64)>, Vec<(usize, f64)>)> {
    let gens: Vec<(usize, f64)> = net.generator_buses().into_iter().map(|b| (b, net.buses[b].gen_capacity)).collect();
    let loads: Vec<(usize, f64)> = net
        .buses_of_kind(BusKind::Load)
        .into_iter()
        .map(|b| (b, net.buses[b].apparent_load()))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    if gens.is_empty() || loads.is_empty() {
        return Err(Error::Validation("electrical betweenness needs generator and load buses".into()));
    }
    Ok((gens, loads))
}

/// Current-flow participation of each bus in generator-to-load transfers,
/// normalized by the total pair weight.
pub fn electrical_betweenness(net: &PowerNetwork) -> Result<Vec<f64>> {
    let (gens, loads) = generator_load_sets(net)?;
    let n = net.n_buses();
    let z = net.zbus();
    let mut links: Vec<((usize, usize), Complex64)> = link_admittances(net).into_iter().collect();
    links.sort_unstable_by_key(|l| l.0);
    let comp = component_labels(net);
    let pairs: Vec<(usize, usize, f64)> = gens
        .iter()
        .flat_map(|&(i, wi)| loads.iter().map(move |&(j, wj)| (i, j, (wi * wj).sqrt())))
        .filter(|&(i, j, _)| i != j && comp[i] == comp[j])
        .collect();
    let total_weight: f64 = pairs.iter().map(|p| p.2).sum();
    let contributions: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(i, j, w)| {
            let mut through = vec![0.0; n];
            for &((a, b), y) in &links {
                let u_a = z[(a, i)] - z[(a, j)];
                let u_b = z[(b, i)] - z[(b, j)];
                let current = ((u_a - u_b) * y).norm();
                through[a] += current;
                through[b] += current;
            }
            (0..n).map(|k| w * if k == i || k == j { 1.0 } else { 0.5 * through[k] }).collect()
        })
        .collect();
    // Summed in pair order so the result does not depend on scheduling.
    let mut be = vec![0.0; n];
    for c in &contributions {
        be.iter_mut().zip(c).for_each(|(a, c)| *a += c);
    }
    if total_weight == 0.0 {
        return Ok(vec![0.0; n]);
    }
    Ok(be.into_iter().map(|b| b / total_weight).collect())
}

/// Effective-impedance distance `|Z_vv + Z_uu - 2 Z_vu|`.
pub fn resistance_distance(net: &PowerNetwork, u: usize, v: usize) -> f64 {
    let z = net.zbus();
    (z[(v, v)] + z[(u, u)] - z[(v, u)] - z[(u, v)]).norm()
}

/// Reciprocal of the summed resistance distance to every other bus in the
/// same component; 0 when that sum is 0.
pub fn electrical_coupling_degree(net: &PowerNetwork) -> Vec<f64> {
    let n = net.n_buses();
    let comp = component_labels(net);
    (0..n)
        .map(|v| {
            let total: f64 = (0..n).filter(|&u| u != v && comp[u] == comp[v]).map(|u| resistance_distance(net, u, v)).sum();
            if total > 0.0 {
                1.0 / total
            } else {
                0.0
            }
        })
        .collect()
}

/// `c / max(c)`, or all zeros when `c` is identically zero.
pub fn max_normalize(c: &[f64]) -> Vec<f64> {
    let max = c.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        c.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; c.len()]
    }
}

pub fn importance_scores(net: &PowerNetwork, weights: &ImportanceWeights) -> Result<ImportanceScores> {
    weights.validate()?;
    let raw = [
        betweenness(net),
        eigenvector_centrality(net)?.values,
        electrical_betweenness(net)?,
        electrical_coupling_degree(net),
    ];
    Ok(combine(raw, weights))
}

/// Max-normalizes each metric and forms the weighted sum.
pub fn combine(raw: [Vec<f64>; 4], weights: &ImportanceWeights) -> ImportanceScores {
    let normalized = [max_normalize(&raw[0]), max_normalize(&raw[1]), max_normalize(&raw[2]), max_normalize(&raw[3])];
    let w = weights.as_array();
    let n = raw[0].len();
    let score = (0..n)
        .map(|v| (0..4).map(|k| w[k] * normalized[k][v]).sum::<f64>().clamp(0.0, 1.0))
        .collect();
    ImportanceScores { raw, normalized, score }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::testnets::{bus, case14, graph, line};
    use crate::netmodel::{bundled_case, Branch, BUNDLED_CASES};
    use nalgebra::DVector;

    /// Counts shortest paths through each vertex by explicit enumeration.
    fn brute_betweenness(net: &PowerNetwork) -> Vec<f64> {
        let n = net.n_buses();
        let adj = net.neighbors();
        let mut cb = vec![0.0; n];
        for s in 0..n {
            for t in (s + 1)..n {
                // depth-first enumeration of all shortest s-t paths
                let mut dist = vec![usize::MAX; n];
                dist[s] = 0;
                let mut q = VecDeque::from([s]);
                while let Some(v) = q.pop_front() {
                    for &w in &adj[v] {
                        if dist[w] == usize::MAX {
                            dist[w] = dist[v] + 1;
                            q.push_back(w);
                        }
                    }
                }
                if dist[t] == usize::MAX {
                    continue;
                }
                let mut paths: Vec<Vec<usize>> = Vec::new();
                let mut stack = vec![vec![s]];
                while let Some(p) = stack.pop() {
                    let last = *p.last().unwrap();
                    if last == t {
                        paths.push(p);
                        continue;
                    }
                    if p.len() > dist[t] {
                        continue;
                    }
                    for &w in &adj[last] {
                        if !p.contains(&w) {
                            let mut np = p.clone();
                            np.push(w);
                            stack.push(np);
                        }
                    }
                }
                let shortest: Vec<&Vec<usize>> = paths.iter().filter(|p| p.len() == dist[t] + 1).collect();
                for p in &shortest {
                    for &v in &p[1..p.len() - 1] {
                        cb[v] += 1.0 / shortest.len() as f64;
                    }
                }
            }
        }
        cb
    }

    #[test]
    fn path_graph_betweenness() {
        assert_eq!(betweenness(&graph(3, &[(0, 1), (1, 2)])), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn complete_graph_betweenness_is_zero() {
        let k4 = graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        assert_eq!(betweenness(&k4), vec![0.0; 4]);
    }

    #[test]
    fn case14_betweenness_matches_enumeration() {
        let net = case14();
        let fast = betweenness(&net);
        let slow = brute_betweenness(&net);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn complete_graph_eigenvector_uniform() {
        let k4 = graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let e = eigenvector_centrality(&k4).unwrap();
        for v in &e.values {
            assert!((v - 0.5).abs() < 1e-9);
        }
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn star_center_dominates() {
        let star = graph(4, &[(0, 1), (0, 2), (0, 3)]);
        let e = eigenvector_centrality(&star).unwrap();
        assert!(e.values[1..].iter().all(|&v| v < e.values[0]));
    }

    #[test]
    fn case14_eigen_residual() {
        let net = case14();
        let e = eigenvector_centrality(&net).unwrap();
        let adj = net.neighbors();
        let lambda = e.eigenvalues[0];
        for v in 0..net.n_buses() {
            let ac: f64 = adj[v].iter().map(|&u| e.values[u]).sum();
            assert!((ac - lambda * e.values[v]).abs() < 1e-8);
        }
        let norm: f64 = e.values.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvector_converges_on_all_bundled_cases() {
        for (name, _) in BUNDLED_CASES {
            let net = bundled_case(name).unwrap();
            let e = eigenvector_centrality(&net).unwrap();
            assert!(e.values.iter().all(|&v| v >= 0.0), "{name}");
        }
    }

    fn two_bus() -> PowerNetwork {
        let buses = vec![bus(0, BusKind::Slack, 0.0, 0.0), bus(1, BusKind::Load, 0.5, 0.1)];
        PowerNetwork::new("two", 100.0, buses, vec![line(0, 1, 0.01, 0.1)]).unwrap()
    }

    #[test]
    fn two_bus_electrical_betweenness_endpoints() {
        assert_eq!(electrical_betweenness(&two_bus()).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn series_path_carries_unit_current() {
        let buses = vec![
            bus(0, BusKind::Slack, 0.0, 0.0),
            bus(1, BusKind::Load, 0.0, 0.0),
            bus(2, BusKind::Load, 0.5, 0.1),
        ];
        let net = PowerNetwork::new("p3", 100.0, buses, vec![line(0, 1, 0.01, 0.1), line(1, 2, 0.02, 0.2)]).unwrap();
        let be = electrical_betweenness(&net).unwrap();
        assert!((be[1] - 1.0).abs() < 1e-9, "{be:?}");
    }

    #[test]
    fn case14_electrical_betweenness_matches_linear_solves() {
        let net = case14();
        let fast = electrical_betweenness(&net).unwrap();
        let (gens, loads) = generator_load_sets(&net).unwrap();
        let n = net.n_buses();
        let lu = net.ybus().clone().lu();
        let mut be = vec![0.0; n];
        let mut total = 0.0;
        for &(i, wi) in &gens {
            for &(j, wj) in &loads {
                let mut rhs = DVector::from_element(n, Complex64::new(0.0, 0.0));
                rhs[i] = Complex64::new(1.0, 0.0);
                rhs[j] = Complex64::new(-1.0, 0.0);
                let u = lu.solve(&rhs).unwrap();
                let w = (wi * wj).sqrt();
                total += w;
                for k in 0..n {
                    if k == i || k == j {
                        be[k] += w;
                        continue;
                    }
                    // each branch separately; parallel branches add up
                    let mut per_neighbor: HashMap<usize, Complex64> = HashMap::new();
                    for br in net.branches.iter().filter(|br| br.from == k || br.to == k) {
                        let m = if br.from == k { br.to } else { br.from };
                        *per_neighbor.entry(m).or_insert(Complex64::new(0.0, 0.0)) += (u[m] - u[k]) * br.series_admittance();
                    }
                    be[k] += w * 0.5 * per_neighbor.values().map(|c| c.norm()).sum::<f64>();
                }
            }
        }
        for k in 0..n {
            assert!((fast[k] - be[k] / total).abs() < 1e-8, "bus {k}: {} vs {}", fast[k], be[k] / total);
        }
    }

    #[test]
    fn missing_generator_or_load_set_is_error() {
        let buses = vec![bus(0, BusKind::Slack, 0.0, 0.0), bus(1, BusKind::Load, 0.0, 0.0)];
        let net = PowerNetwork::new("x", 100.0, buses, vec![line(0, 1, 0.01, 0.1)]).unwrap();
        assert!(electrical_betweenness(&net).is_err());
    }

    #[test]
    fn coupling_degree_symmetry_and_parallel_line() {
        let net = two_bus();
        let c = electrical_coupling_degree(&net);
        assert!((c[0] - c[1]).abs() < 1e-12);

        let base = graph(3, &[(0, 1), (1, 2)]);
        let before = electrical_coupling_degree(&base);
        let mut branches: Vec<Branch> = base.branches.clone();
        branches.push(line(0, 1, 0.01, 0.1));
        let doubled = PowerNetwork::new("p", 100.0, base.buses.clone(), branches).unwrap();
        assert!(resistance_distance(&doubled, 0, 1) < resistance_distance(&base, 0, 1));
        assert!(electrical_coupling_degree(&doubled)[0] > before[0]);
    }

    #[test]
    fn case14_distances_symmetric() {
        let net = case14();
        for u in 0..14 {
            for v in 0..14 {
                assert!((resistance_distance(&net, u, v) - resistance_distance(&net, v, u)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_bus_coupling_is_zero() {
        let net = PowerNetwork::new("one", 100.0, vec![bus(0, BusKind::Slack, 0.0, 0.0)], vec![]).unwrap();
        assert_eq!(electrical_coupling_degree(&net), vec![0.0]);
    }

    #[test]
    fn degenerate_weights_select_one_metric() {
        let net = case14();
        let w = ImportanceWeights { w_bc: 1.0, w_eic: 0.0, w_ebc: 0.0, w_ecd: 0.0 };
        let s = importance_scores(&net, &w).unwrap();
        assert_eq!(s.score, max_normalize(&betweenness(&net)));
    }

    #[test]
    fn scores_in_unit_interval_with_unit_max() {
        let s = importance_scores(&case14(), &ImportanceWeights::default()).unwrap();
        for m in &s.normalized {
            let max = m.iter().cloned().fold(0.0, f64::max);
            assert!(max == 1.0 || max == 0.0);
            assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!(s.score.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn invariant_under_metric_scaling() {
        let s = importance_scores(&case14(), &ImportanceWeights::default()).unwrap();
        let mut raw = s.raw.clone();
        raw[2].iter_mut().for_each(|v| *v *= 37.5);
        let t = combine(raw, &ImportanceWeights::default());
        for (a, b) in s.score.iter().zip(&t.score) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn bad_weights_rejected() {
        let w = ImportanceWeights { w_bc: 0.5, w_eic: 0.5, w_ebc: 0.5, w_ecd: 0.0 };
        assert!(importance_scores(&case14(), &w).is_err());
    }

    #[test]
    fn relabeling_permutes_scores() {
        let net = case14();
        let perm: Vec<usize> = (0..14).map(|i| (i * 5 + 3) % 14).collect();
        let p = net.permuted(&perm).unwrap();
        let a = importance_scores(&net, &ImportanceWeights::default()).unwrap();
        let b = importance_scores(&p, &ImportanceWeights::default()).unwrap();
        for i in 0..14 {
            assert!((a.score[i] - b.score[perm[i]]).abs() < 1e-9);
        }
    }

    #[test]
    fn disjoint_cliques_ignore_cross_component_pairs() {
        let edges = [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)];
        let net = graph(6, &edges);
        let c = electrical_coupling_degree(&net);
        // each bus sees exactly two same-clique partners at equal distance
        let d = resistance_distance(&net, 0, 1);
        assert!((c[4] - 1.0 / (2.0 * d)).abs() < 1e-9);
        let bc = betweenness(&net);
        assert!(bc.iter().all(|&v| v == 0.0));
        let e = eigenvector_centrality(&net).unwrap();
        assert!(e.values.iter().all(|&v| (v - e.values[0]).abs() < 1e-9));
    }
}
