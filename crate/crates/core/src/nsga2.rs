//! NSGA-II over placement genomes with constraint domination, hybrid
//! initialization and importance-biased mutation.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::placement::{PlacementGenome, PlacementModel};
use crate::rng::{stream, StreamRng};

/// Objective values `(V, f1, f2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub v: f64,
    pub f1: usize,
    pub f2: f64,
}

impl Fitness {
    pub fn worst(f1: usize) -> Self {
        Fitness { v: f64::INFINITY, f1, f2: f64::INFINITY }
    }

    pub fn feasible(&self) -> bool {
        self.v <= 0.0
    }

    /// Champion key `(I(V > 0), V, f1 + f2)`.
    pub fn champion_key(&self) -> (u8, f64, f64) {
        (u8::from(!self.feasible()), self.v, self.f1 as f64 + self.f2)
    }
}

fn cmp_key(a: (u8, f64, f64), b: (u8, f64, f64)) -> Ordering {
    a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2))
}

/// Constraint domination: feasible beats infeasible, smaller violation
/// beats larger, and feasible pairs use Pareto dominance on `(f1, f2)`.
pub fn dominates(a: &Fitness, b: &Fitness) -> bool {
    match (a.feasible(), b.feasible()) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.v < b.v,
        (true, true) => {
            let f1a = a.f1 as f64;
            let f1b = b.f1 as f64;
            f1a <= f1b && a.f2 <= b.f2 && (f1a < f1b || a.f2 < b.f2)
        }
    }
}

/// Fronts as index lists into `fits`, best first.
pub fn nondominated_sort(fits: &[Fitness]) -> Vec<Vec<usize>> {
    let n = fits.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut count = vec![0usize; n];
    for p in 0..n {
        for q in (p + 1)..n {
            if dominates(&fits[p], &fits[q]) {
                dominated_by[p].push(q);
                count[q] += 1;
            } else if dominates(&fits[q], &fits[p]) {
                dominated_by[q].push(p);
                count[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by[p] {
                count[q] -= 1;
                if count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of one front, aligned with `front`.
/// Feasible fronts use `(f1, f2)`, infeasible fronts use `V`.
pub fn crowding_distance(fits: &[Fitness], front: &[usize]) -> Vec<f64> {
    let m = front.len();
    let mut dist = vec![0.0; m];
    if m <= 2 {
        return vec![f64::INFINITY; m];
    }
    let objectives: Vec<Box<dyn Fn(&Fitness) -> f64>> = if fits[front[0]].feasible() {
        vec![Box::new(|f: &Fitness| f.f1 as f64), Box::new(|f: &Fitness| f.f2)]
    } else {
        vec![Box::new(|f: &Fitness| f.v)]
    };
    for obj in objectives {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| obj(&fits[front[a]]).total_cmp(&obj(&fits[front[b]])).then(a.cmp(&b)));
        let lo = obj(&fits[front[order[0]]]);
        let hi = obj(&fits[front[order[m - 1]]]);
        dist[order[0]] = f64::INFINITY;
        dist[order[m - 1]] = f64::INFINITY;
        let span = hi - lo;
        if !(span > 0.0 && span.is_finite()) {
            continue;
        }
        for k in 1..m - 1 {
            let gap = obj(&fits[front[order[k + 1]]]) - obj(&fits[front[order[k - 1]]]);
            dist[order[k]] += gap / span;
        }
    }
    dist
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub n_pop: usize,
    pub generations: usize,
    /// Maximum sensors at initialization; `None` means 30% of the candidates.
    pub k: Option<usize>,
    pub h_frac: f64,
    pub d_frac: f64,
    pub d_min: f64,
    pub indpb: f64,
    pub b_f: f64,
    pub crossover_prob: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            n_pop: 20,
            generations: 40,
            k: None,
            h_frac: 0.2,
            d_frac: 0.3,
            d_min: 0.2,
            indpb: 0.1,
            b_f: 0.8,
            crossover_prob: 0.9,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_pop < 2 {
            return Err(Error::Config("population needs at least two individuals".into()));
        }
        if !(prob(self.h_frac) && prob(self.d_frac) && self.h_frac + self.d_frac <= 1.0 + 1e-12) {
            return Err(Error::Config("h_frac and d_frac must be probabilities summing to at most 1".into()));
        }
        if !(prob(self.d_min) && prob(self.indpb) && prob(self.b_f) && prob(self.crossover_prob)) {
            return Err(Error::Config("d_min, indpb, b_f and crossover_prob must lie in [0, 1]".into()));
        }
        if self.k == Some(0) {
            return Err(Error::Config("K must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolved_k(&self, n_candidates: usize) -> usize {
        self.k.unwrap_or(((0.3 * n_candidates as f64).floor() as usize).max(1)).min(n_candidates)
    }
}

const INIT_RETRIES: usize = 10_000;

/// Top-`k` candidates by score; equal scores are ordered by a seeded
/// random key.
pub fn top_k(scores: &[f64], k: usize, rng: &mut impl Rng) -> PlacementGenome {
    let mut order: Vec<(usize, u64)> = (0..scores.len()).map(|i| (i, rng.random())).collect();
    order.sort_by(|a, b| scores[b.0].total_cmp(&scores[a.0]).then(a.1.cmp(&b.1)));
    let chosen: Vec<usize> = order.iter().take(k).map(|o| o.0).collect();
    PlacementGenome::from_indices(scores.len(), &chosen)
}

/// Repeatedly adds the candidate covering the most still-uncovered buses
/// within `r` hops until `k` sensors are placed or nothing is left to
/// cover. Ties go to the higher score, then the lower index.
pub fn greedy_cover(model: &PlacementModel, scores: &[f64], k: usize) -> PlacementGenome {
    let nc = model.n_candidates();
    let n = model.n_buses();
    // reach[c] = buses within r hops of candidate c
    let mut reach: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for j in 0..n {
        for &c in model.coverers(j) {
            reach[c].push(j);
        }
    }
    let mut covered = vec![false; n];
    let mut genome = PlacementGenome::empty(nc);
    while genome.popcount() < k {
        let mut best: Option<(usize, usize)> = None;
        for c in 0..nc {
            if genome.bits[c] {
                continue;
            }
            let gain = reach[c].iter().filter(|&&j| !covered[j]).count();
            let better = match best {
                None => true,
                Some((b, bg)) => gain > bg || (gain == bg && scores[c] > scores[b]),
            };
            if better {
                best = Some((c, gain));
            }
        }
        match best {
            Some((c, gain)) if gain > 0 => {
                genome.bits[c] = true;
                reach[c].iter().for_each(|&j| covered[j] = true);
            }
            _ => break,
        }
    }
    genome
}

fn random_genome(nc: usize, k: usize, rng: &mut impl Rng) -> PlacementGenome {
    let count = rng.random_range(1..=k);
    let mut idx: Vec<usize> = (0..nc).collect();
    idx.shuffle(rng);
    PlacementGenome::from_indices(nc, &idx[..count])
}

/// Hybrid initialization: importance top-K, greedy cover, diversity-gated
/// random draws, then plain random fill.
pub fn init_population(model: &PlacementModel, scores: &[f64], cfg: &GaConfig) -> Result<Vec<PlacementGenome>> {
    cfg.validate()?;
    let nc = model.n_candidates();
    if scores.len() != nc {
        return Err(Error::Config("importance scores must align with candidates".into()));
    }
    let k = cfg.resolved_k(nc);
    let mut rng = stream(cfg.seed, &[0x1417]);
    let mut pop: Vec<PlacementGenome> = Vec::with_capacity(cfg.n_pop);
    let mut seen: HashSet<PlacementGenome> = HashSet::new();
    let push = |g: PlacementGenome, pop: &mut Vec<PlacementGenome>, seen: &mut HashSet<PlacementGenome>| {
        if pop.len() < cfg.n_pop && seen.insert(g.clone()) {
            pop.push(g);
        }
    };
    let half = cfg.h_frac * cfg.n_pop as f64 / 2.0;
    for _ in 0..half.floor() as usize {
        push(top_k(scores, k, &mut rng), &mut pop, &mut seen);
    }
    for _ in 0..half.ceil() as usize {
        push(greedy_cover(model, scores, k), &mut pop, &mut seen);
    }
    let diverse_target = ((cfg.h_frac + cfg.d_frac) * cfg.n_pop as f64).ceil() as usize;
    let threshold = cfg.d_min * nc as f64;
    let mut tries = 0;
    while pop.len() < diverse_target.min(cfg.n_pop) && tries < INIT_RETRIES {
        tries += 1;
        let g = random_genome(nc, k, &mut rng);
        if pop.iter().all(|p| p.hamming(&g) as f64 >= threshold) {
            push(g, &mut pop, &mut seen);
        }
    }
    if pop.len() < diverse_target.min(cfg.n_pop) {
        log::warn!("diversity gate filled {} of {} slots", pop.len(), diverse_target);
    }
    tries = 0;
    while pop.len() < cfg.n_pop && tries < INIT_RETRIES {
        tries += 1;
        push(random_genome(nc, k, &mut rng), &mut pop, &mut seen);
    }
    if pop.len() < cfg.n_pop {
        log::warn!("only {} unique genomes exist; padding with duplicates", pop.len());
        let mut i = 0;
        while pop.len() < cfg.n_pop {
            pop.push(pop[i].clone());
            i += 1;
        }
    }
    Ok(pop)
}

/// Importance-biased mutation; each bit draws independently at up to
/// three nested levels.
pub fn biased_mutation(genome: &PlacementGenome, scores: &[f64], indpb: f64, b_f: f64, rng: &mut impl Rng) -> PlacementGenome {
    let mut out = genome.clone();
    for (i, bit) in out.bits.iter_mut().enumerate() {
        if rng.random::<f64>() < indpb {
            if rng.random::<f64>() < b_f {
                *bit = rng.random::<f64>() < scores[i];
            } else {
                *bit = !*bit;
            }
        }
    }
    out
}

pub fn uniform_crossover(a: &PlacementGenome, b: &PlacementGenome, rng: &mut impl Rng) -> (PlacementGenome, PlacementGenome) {
    let mut c = a.clone();
    let mut d = b.clone();
    for i in 0..a.len() {
        if rng.random_bool(0.5) {
            c.bits[i] = b.bits[i];
            d.bits[i] = a.bits[i];
        }
    }
    (c, d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genome: PlacementGenome,
    pub fitness: Fitness,
    pub rank: usize,
    pub crowding: f64,
}

/// Index of the champion: lexicographic minimum of
/// `(I(V > 0), V, f1 + f2)`, first occurrence on ties.
pub fn champion_index(fits: &[Fitness]) -> Option<usize> {
    (0..fits.len()).min_by(|&a, &b| cmp_key(fits[a].champion_key(), fits[b].champion_key()).then(a.cmp(&b)))
}

/// Per-generation summary for the progress log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub best: (u8, f64, f64),
    pub front_sizes: Vec<usize>,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct EvolveResult {
    pub population: Vec<Individual>,
    pub champion: Individual,
    pub history: Vec<GenerationLog>,
    pub evaluations: usize,
    /// Evaluations that returned an error and were scored as worst.
    pub failures: usize,
}

impl EvolveResult {
    /// First-front members of the final population.
    pub fn pareto_front(&self) -> Vec<&Individual> {
        self.population.iter().filter(|i| i.rank == 1).collect()
    }
}

/// Fitness evaluator. Must be deterministic in the genome alone so that
/// memoized and parallel evaluation do not change results.
pub trait Evaluator: Sync {
    fn evaluate(&self, genome: &PlacementGenome) -> Result<Fitness>;
}

impl<F: Fn(&PlacementGenome) -> Result<Fitness> + Sync> Evaluator for F {
    fn evaluate(&self, genome: &PlacementGenome) -> Result<Fitness> {
        self(genome)
    }
}

struct Memo<'a, E: Evaluator> {
    evaluator: &'a E,
    cache: HashMap<PlacementGenome, Fitness>,
    failures: usize,
}

impl<E: Evaluator> Memo<'_, E> {
    /// Evaluates the uncached genomes in parallel, inserting in order.
    fn fill(&mut self, genomes: &[PlacementGenome]) {
        let mut todo: Vec<&PlacementGenome> = Vec::new();
        let mut queued = HashSet::new();
        for g in genomes {
            if !self.cache.contains_key(g) && queued.insert(g) {
                todo.push(g);
            }
        }
        let results: Vec<Option<Fitness>> = todo
            .par_iter()
            .map(|g| match self.evaluator.evaluate(g) {
                Ok(f) => Some(f),
                Err(e) => {
                    log::warn!("evaluation of {} failed: {e}", g.key());
                    None
                }
            })
            .collect();
        for (g, f) in todo.into_iter().zip(results) {
            self.failures += usize::from(f.is_none());
            self.cache.insert(g.clone(), f.unwrap_or_else(|| Fitness::worst(g.popcount())));
        }
    }

    fn get(&self, g: &PlacementGenome) -> Fitness {
        self.cache[g]
    }
}

fn rank_population(genomes: Vec<PlacementGenome>, fits: Vec<Fitness>) -> Vec<Individual> {
    let fronts = nondominated_sort(&fits);
    let mut rank = vec![0; fits.len()];
    let mut crowd = vec![0.0; fits.len()];
    for (r, front) in fronts.iter().enumerate() {
        let d = crowding_distance(&fits, front);
        for (k, &i) in front.iter().enumerate() {
            rank[i] = r + 1;
            crowd[i] = d[k];
        }
    }
    genomes
        .into_iter()
        .zip(fits)
        .enumerate()
        .map(|(i, (genome, fitness))| Individual { genome, fitness, rank: rank[i], crowding: crowd[i] })
        .collect()
}

/// Binary tournament on (rank, crowding); the first draw wins ties.
fn tournament<'p>(pop: &'p [Individual], rng: &mut impl Rng) -> &'p Individual {
    let a = &pop[rng.random_range(0..pop.len())];
    let b = &pop[rng.random_range(0..pop.len())];
    if b.rank < a.rank || (b.rank == a.rank && b.crowding > a.crowding) {
        b
    } else {
        a
    }
}

/// Keeps whole fronts while they fit, then the most crowded-apart members
/// of the boundary front. The champion always survives.
fn truncate(combined: Vec<Individual>, n_pop: usize) -> Vec<Individual> {
    let fits: Vec<Fitness> = combined.iter().map(|i| i.fitness).collect();
    let champ = champion_index(&fits).expect("population is non-empty");
    let mut order: Vec<usize> = (0..combined.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&combined[a], &combined[b]);
        x.rank.cmp(&y.rank).then(y.crowding.total_cmp(&x.crowding)).then(a.cmp(&b))
    });
    let mut keep: Vec<usize> = order.into_iter().take(n_pop).collect();
    if !keep.contains(&champ) {
        *keep.last_mut().unwrap() = champ;
    }
    keep.sort_unstable();
    let mut slots: Vec<Option<Individual>> = combined.into_iter().map(Some).collect();
    keep.into_iter().map(|i| slots[i].take().unwrap()).collect()
}

/// Generational (mu + lambda) loop. Offspring pair `k` of generation `g`
/// draws from its own random stream.
pub fn evolve<E: Evaluator>(model: &PlacementModel, scores: &[f64], evaluator: &E, cfg: &GaConfig) -> Result<EvolveResult> {
    let init = init_population(model, scores, cfg)?;
    let mut memo = Memo { evaluator, cache: HashMap::new(), failures: 0 };
    memo.fill(&init);
    let fits = init.iter().map(|g| memo.get(g)).collect();
    let mut pop = rank_population(init, fits);
    let mut history = Vec::with_capacity(cfg.generations + 1);
    history.push(summary(0, &pop, memo.cache.len()));
    for gen in 1..=cfg.generations {
        let mut children = Vec::with_capacity(cfg.n_pop);
        let mut pair = 0u64;
        while children.len() < cfg.n_pop {
            let mut rng: StreamRng = stream(cfg.seed, &[0x9e4, gen as u64, pair]);
            pair += 1;
            let p1 = tournament(&pop, &mut rng).genome.clone();
            let p2 = tournament(&pop, &mut rng).genome.clone();
            let (c1, c2) = if rng.random::<f64>() < cfg.crossover_prob {
                uniform_crossover(&p1, &p2, &mut rng)
            } else {
                (p1, p2)
            };
            children.push(biased_mutation(&c1, scores, cfg.indpb, cfg.b_f, &mut rng));
            if children.len() < cfg.n_pop {
                children.push(biased_mutation(&c2, scores, cfg.indpb, cfg.b_f, &mut rng));
            }
        }
        memo.fill(&children);
        let mut genomes: Vec<PlacementGenome> = pop.into_iter().map(|i| i.genome).collect();
        genomes.extend(children);
        let fits = genomes.iter().map(|g| memo.get(g)).collect();
        let combined = rank_population(genomes, fits);
        let survivors = truncate(combined, cfg.n_pop);
        let genomes: Vec<PlacementGenome> = survivors.iter().map(|i| i.genome.clone()).collect();
        let fits: Vec<Fitness> = survivors.iter().map(|i| i.fitness).collect();
        pop = rank_population(genomes, fits);
        debug_assert!(first_front_undominated(&pop));
        let log = summary(gen, &pop, memo.cache.len());
        log::info!("generation {gen}: best {:?}, fronts {:?}", log.best, log.front_sizes);
        history.push(log);
    }
    let fits: Vec<Fitness> = pop.iter().map(|i| i.fitness).collect();
    let champion = pop[champion_index(&fits).unwrap()].clone();
    Ok(EvolveResult { population: pop, champion, history, evaluations: memo.cache.len(), failures: memo.failures })
}

fn summary(generation: usize, pop: &[Individual], evaluations: usize) -> GenerationLog {
    let fits: Vec<Fitness> = pop.iter().map(|i| i.fitness).collect();
    let best = fits[champion_index(&fits).unwrap()].champion_key();
    let max_rank = pop.iter().map(|i| i.rank).max().unwrap_or(0);
    let front_sizes = (1..=max_rank).map(|r| pop.iter().filter(|i| i.rank == r).count()).collect();
    GenerationLog { generation, best, front_sizes, evaluations }
}

/// Brute-force check that no rank-1 individual is dominated.
pub fn first_front_undominated(pop: &[Individual]) -> bool {
    pop.iter()
        .filter(|i| i.rank == 1)
        .all(|a| pop.iter().all(|b| !dominates(&b.fitness, &a.fitness)))
}
