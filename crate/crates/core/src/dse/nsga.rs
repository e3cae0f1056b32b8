//! NSGA-II over a [`DesignSpace`] with objectives `(accuracy_loss, energy)`.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::pareto::{dominates, pareto_filter};
use super::space::DesignSpace;
use super::EvalRecord;
use crate::error::{Error, Result};
use crate::plan::ApproxPlan;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsgaConfig {
    pub population: usize,
    pub generations: usize,
    pub seed: u64,
    pub crossover_rate: f64,
    /// Per-gene resampling probability; `None` means `1 / genes`.
    pub mutation_rate: Option<f64>,
}

impl NsgaConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            population: 32,
            generations: 50,
            seed,
            crossover_rate: 0.9,
            mutation_rate: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    /// Every distinct plan evaluated, in evaluation order.
    pub archive: Vec<EvalRecord>,
    pub front: Vec<EvalRecord>,
}

type Genome = Vec<u128>;

/// RNG of one offspring slot, independent of evaluation scheduling.
fn slot_rng(seed: u64, generation: usize, slot: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((generation as u64).to_le_bytes());
    h.update((slot as u64).to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Ranks (0 = first front) by fast non-dominated sorting.
pub fn non_dominated_ranks(points: &[(f64, f64)]) -> Vec<usize> {
    let n = points.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for p in 0..n {
        for q in 0..n {
            if dominates(points[p], points[q]) {
                dominates_list[p].push(q);
            } else if dominates(points[q], points[p]) {
                dominated_by[p] += 1;
            }
        }
    }
    let mut rank = vec![usize::MAX; n];
    let mut current: Vec<usize> = (0..n).filter(|&p| dominated_by[p] == 0).collect();
    let mut level = 0;
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            rank[p] = level;
            for &q in &dominates_list[p] {
                dominated_by[q] -= 1;
                if dominated_by[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        current = next;
        level += 1;
    }
    rank
}

/// Crowding distance of each member of one front; boundary points are infinite.
pub fn crowding_distances(points: &[(f64, f64)]) -> Vec<f64> {
    let n = points.len();
    let mut distance = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    for objective in 0..2 {
        let value = |i: usize| if objective == 0 { points[i].0 } else { points[i].1 };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));
        let (lo, hi) = (value(order[0]), value(order[n - 1]));
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        if hi > lo {
            for w in 1..n - 1 {
                distance[order[w]] += (value(order[w + 1]) - value(order[w - 1])) / (hi - lo);
            }
        }
    }
    distance
}

/// Picks `count` members of `points` by rank, then crowding distance.
fn select(points: &[(f64, f64)], count: usize) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let rank = non_dominated_ranks(points);
    let max_rank = rank.iter().copied().max().unwrap_or(0);
    let mut crowd = vec![0.0; points.len()];
    let mut chosen = Vec::with_capacity(count);
    for level in 0..=max_rank {
        let members: Vec<usize> = (0..points.len()).filter(|&i| rank[i] == level).collect();
        let front_points: Vec<(f64, f64)> = members.iter().map(|&i| points[i]).collect();
        for (&i, d) in members.iter().zip(crowding_distances(&front_points)) {
            crowd[i] = d;
        }
        if chosen.len() + members.len() <= count {
            chosen.extend(&members);
        } else {
            let mut by_crowd = members.clone();
            by_crowd.sort_by(|&a, &b| crowd[b].total_cmp(&crowd[a]).then(a.cmp(&b)));
            chosen.extend(by_crowd.into_iter().take(count - chosen.len()));
        }
        if chosen.len() == count {
            break;
        }
    }
    let ranks = chosen.iter().map(|&i| rank[i]).collect();
    let crowds = chosen.iter().map(|&i| crowd[i]).collect();
    (chosen, ranks, crowds)
}

struct Archive<'a, F> {
    space: &'a DesignSpace,
    eval: F,
    index: HashMap<Genome, usize>,
    records: Vec<EvalRecord>,
}

impl<F> Archive<'_, F>
where
    F: Fn(&ApproxPlan) -> Result<EvalRecord> + Sync,
{
    /// Evaluates the genomes not seen before (in parallel, results kept in order).
    fn evaluate(&mut self, genomes: &[Genome]) -> Result<()> {
        let mut fresh: Vec<&Genome> = Vec::new();
        let mut seen = HashSet::new();
        for g in genomes {
            if !self.index.contains_key(g) && seen.insert(g) {
                fresh.push(g);
            }
        }
        let space = self.space;
        let eval = &self.eval;
        let records = fresh
            .par_iter()
            .map(|g| eval(&space.decode(g)))
            .collect::<Result<Vec<_>>>()?;
        for (g, r) in fresh.into_iter().zip(records) {
            self.index.insert(g.clone(), self.records.len());
            self.records.push(r);
        }
        Ok(())
    }

    fn point(&self, g: &Genome) -> (f64, f64) {
        self.records[self.index[g]].objectives()
    }
}

fn random_genome(rng: &mut ChaCha8Rng, domains: &[u128]) -> Genome {
    domains.iter().map(|&d| rng.gen_range(0..d)).collect()
}

/// Resamples one gene to a different value (when its domain allows).
fn mutate_one(rng: &mut ChaCha8Rng, genome: &mut Genome, domains: &[u128]) {
    let movable: Vec<usize> = (0..domains.len()).filter(|&i| domains[i] > 1).collect();
    if movable.is_empty() {
        return;
    }
    let gene = movable[rng.gen_range(0..movable.len())];
    let shift = rng.gen_range(1..domains[gene]);
    genome[gene] = (genome[gene] + shift) % domains[gene];
}

/// Attempts at replacing a duplicate child before accepting it.
const DUPLICATE_RETRIES: usize = 16;

pub fn nsga2<F>(space: &DesignSpace, eval: F, config: NsgaConfig) -> Result<SearchResult>
where
    F: Fn(&ApproxPlan) -> Result<EvalRecord> + Sync,
{
    space.validate()?;
    let n = config.population;
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("population must be even and at least 4, got {n}")));
    }
    if !(0.0..=1.0).contains(&config.crossover_rate) {
        return Err(Error::InvalidArgument("crossover rate must lie in [0, 1]".into()));
    }
    let domains = space.gene_domains();
    let genes = domains.len();
    let mutation_rate = config.mutation_rate.unwrap_or(1.0 / genes as f64);
    if !(0.0..=1.0).contains(&mutation_rate) {
        return Err(Error::InvalidArgument("mutation rate must lie in [0, 1]".into()));
    }
    let mut archive = Archive {
        space,
        eval,
        index: HashMap::new(),
        records: Vec::new(),
    };
    if space.size() == 1 {
        archive.evaluate(&[vec![0; genes]])?;
        let front = pareto_filter(&archive.records);
        return Ok(SearchResult { archive: archive.records, front });
    }

    // distinct initial population (as far as the space allows)
    let mut population: Vec<Genome> = Vec::with_capacity(n);
    let mut members: HashSet<Genome> = HashSet::new();
    for slot in 0..n {
        let mut rng = slot_rng(config.seed, 0, slot);
        let mut g = random_genome(&mut rng, &domains);
        for _ in 0..DUPLICATE_RETRIES {
            if !members.contains(&g) {
                break;
            }
            g = random_genome(&mut rng, &domains);
        }
        members.insert(g.clone());
        population.push(g);
    }
    archive.evaluate(&population)?;

    for generation in 1..=config.generations {
        let points: Vec<(f64, f64)> = population.iter().map(|g| archive.point(g)).collect();
        let rank = non_dominated_ranks(&points);
        let mut crowd = vec![0.0; n];
        for level in 0..=rank.iter().copied().max().unwrap_or(0) {
            let members: Vec<usize> = (0..n).filter(|&i| rank[i] == level).collect();
            let pts: Vec<(f64, f64)> = members.iter().map(|&i| points[i]).collect();
            for (&i, d) in members.iter().zip(crowding_distances(&pts)) {
                crowd[i] = d;
            }
        }
        let better = |a: usize, b: usize| -> usize {
            if rank[a] != rank[b] {
                if rank[a] < rank[b] { a } else { b }
            } else if crowd[a] != crowd[b] {
                if crowd[a] > crowd[b] { a } else { b }
            } else {
                a.min(b)
            }
        };

        let mut taken: HashSet<Genome> = population.iter().cloned().collect();
        let mut offspring: Vec<Genome> = Vec::with_capacity(n);
        for pair in 0..n / 2 {
            let mut rng = slot_rng(config.seed, generation, pair);
            let tournament = |rng: &mut ChaCha8Rng| {
                let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
                better(a, b)
            };
            let (p1, p2) = (tournament(&mut rng), tournament(&mut rng));
            let (mut c1, mut c2) = (population[p1].clone(), population[p2].clone());
            if rng.gen_bool(config.crossover_rate) {
                for gene in 0..genes {
                    if rng.gen_bool(0.5) {
                        std::mem::swap(&mut c1[gene], &mut c2[gene]);
                    }
                }
            }
            for child in [&mut c1, &mut c2] {
                for gene in 0..genes {
                    if domains[gene] > 1 && rng.gen_bool(mutation_rate) {
                        child[gene] = rng.gen_range(0..domains[gene]);
                    }
                }
                for _ in 0..DUPLICATE_RETRIES {
                    if !taken.contains(child) {
                        break;
                    }
                    mutate_one(&mut rng, child, &domains);
                }
                taken.insert(child.clone());
            }
            offspring.push(c1);
            offspring.push(c2);
        }
        archive.evaluate(&offspring)?;

        let mut combined = population;
        combined.extend(offspring);
        let points: Vec<(f64, f64)> = combined.iter().map(|g| archive.point(g)).collect();
        let (chosen, _, _) = select(&points, n);
        population = chosen.into_iter().map(|i| combined[i].clone()).collect();
    }

    let front = pareto_filter(&archive.records);
    Ok(SearchResult { archive: archive.records, front })
}
