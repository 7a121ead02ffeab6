//! Two-objective NSGA-II machinery: Pareto dominance, fast non-dominated
//! sorting, crowding distance, binary tournament, elitist environmental
//! selection, exact 2-D hypervolume and trade-off subset selection.
//!
//! Objectives are stored as `(error, flops)` everywhere and both are
//! minimized.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::genotype::{ArchitectureGenotype, Digest};

/// `(top-1 error %, MFLOPs)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub error: f64,
    pub flops: f64,
}

impl ObjectiveVector {
    pub const fn new(error: f64, flops: f64) -> Self {
        Self { error, flops }
    }
}

/// Hypervolume reference point: worst error and the largest MFLOPs budget.
pub const HV_REFERENCE: ObjectiveVector = ObjectiveVector::new(100.0, 1000.0);
pub const HV_IDEAL: ObjectiveVector = ObjectiveVector::new(0.0, 0.0);

/// Anything that carries an objective vector.
pub trait HasObjectives {
    fn objectives(&self) -> ObjectiveVector;
}

impl HasObjectives for ObjectiveVector {
    fn objectives(&self) -> ObjectiveVector {
        *self
    }
}

impl<T: HasObjectives> HasObjectives for &T {
    fn objectives(&self) -> ObjectiveVector {
        (*self).objectives()
    }
}

/// How an individual was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Init,
    Genetic,
    BnSample,
    /// Uniform draw from the baseline without variation operators.
    RandomSample,
}

impl Origin {
    pub fn label(self) -> &'static str {
        match self {
            Origin::Init => "init",
            Origin::Genetic => "genetic",
            Origin::BnSample => "bn_sample",
            Origin::RandomSample => "random_sample",
        }
    }
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "init" => Ok(Origin::Init),
            "genetic" => Ok(Origin::Genetic),
            "bn_sample" => Ok(Origin::BnSample),
            "random_sample" => Ok(Origin::RandomSample),
            other => Err(format!("unknown origin `{other}`")),
        }
    }
}

/// An evaluated genotype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub digest: Digest,
    pub genotype: ArchitectureGenotype,
    pub objectives: ObjectiveVector,
    pub params: u64,
    pub origin: Origin,
    pub generation_born: usize,
    /// The evaluator failed and the penalty error was assigned.
    #[serde(default)]
    pub failed: bool,
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub crowding: Option<f64>,
}

impl Individual {
    pub fn new(
        genotype: ArchitectureGenotype,
        objectives: ObjectiveVector,
        origin: Origin,
        generation_born: usize,
    ) -> Self {
        Self {
            digest: genotype.digest(),
            genotype,
            objectives,
            params: 0,
            origin,
            generation_born,
            failed: false,
            rank: None,
            crowding: None,
        }
    }
}

impl HasObjectives for Individual {
    fn objectives(&self) -> ObjectiveVector {
        self.objectives
    }
}

/// `a` is no worse in both objectives and strictly better in one.
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> bool {
    a.error <= b.error && a.flops <= b.flops && (a.error < b.error || a.flops < b.flops)
}

/// Deb's fast non-dominated sort. Returns fronts of indices into `items`;
/// each front keeps input order.
pub fn nondominated_sort<T: HasObjectives>(items: &[T]) -> Vec<Vec<usize>> {
    let n = items.len();
    let objs: Vec<ObjectiveVector> = items.iter().map(HasObjectives::objectives).collect();
    let mut dominated_by = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates(&objs[i], &objs[j]) {
                dominates_list[i].push(j);
                dominated_by[j] += 1;
            } else if dominates(&objs[j], &objs[i]) {
                dominates_list[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `front` (indices into `items`), in
/// the same order as `front`.
pub fn crowding_distance<T: HasObjectives>(items: &[T], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut dist = vec![0.0; n];
    let getters: [fn(&ObjectiveVector) -> f64; 2] = [|o| o.error, |o| o.flops];
    for get in getters {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            get(&items[front[a]].objectives())
                .total_cmp(&get(&items[front[b]].objectives()))
                .then(a.cmp(&b))
        });
        let lo = get(&items[front[order[0]]].objectives());
        let hi = get(&items[front[order[n - 1]]].objectives());
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for w in 1..n - 1 {
            let prev = get(&items[front[order[w - 1]]].objectives());
            let next = get(&items[front[order[w + 1]]].objectives());
            dist[order[w]] += (next - prev) / range;
        }
    }
    dist
}

/// Sorts `members` into fronts and stores rank and crowding on each one.
pub fn assign_rank_and_crowding(members: &mut [Individual]) -> Vec<Vec<usize>> {
    let fronts = nondominated_sort(members);
    for (rank, front) in fronts.iter().enumerate() {
        let dist = crowding_distance(members, front);
        for (&i, d) in front.iter().zip(dist) {
            members[i].rank = Some(rank);
            members[i].crowding = Some(d);
        }
    }
    fronts
}

/// A population with rank and crowding assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedPopulation {
    pub members: Vec<Individual>,
    pub fronts: Vec<Vec<usize>>,
}

impl RankedPopulation {
    pub fn new(mut members: Vec<Individual>) -> Self {
        let fronts = assign_rank_and_crowding(&mut members);
        Self { members, fronts }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn first_front(&self) -> Vec<&Individual> {
        self.fronts
            .first()
            .map(|f| f.iter().map(|&i| &self.members[i]).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SelectionError {
    #[error("tournament needs at least 2 individuals, got {0}")]
    PopulationTooSmall(usize),
    #[error("requested {requested} members from a front of {available}")]
    SubsetTooLarge { requested: usize, available: usize },
}

/// Crowded-comparison: lower rank wins, then larger crowding. `Less` means
/// `a` is preferred.
pub fn crowded_compare(a: &Individual, b: &Individual) -> Ordering {
    let ra = a.rank.unwrap_or(usize::MAX);
    let rb = b.rank.unwrap_or(usize::MAX);
    ra.cmp(&rb).then_with(|| {
        let ca = a.crowding.unwrap_or(0.0);
        let cb = b.crowding.unwrap_or(0.0);
        cb.total_cmp(&ca)
    })
}

/// Two distinct uniform draws; crowded-comparison winner, fair coin on ties.
/// Returns the index of the winner in `pop.members`.
pub fn binary_tournament<R: Rng + ?Sized>(pop: &RankedPopulation, rng: &mut R) -> Result<usize, SelectionError> {
    let n = pop.len();
    if n < 2 {
        return Err(SelectionError::PopulationTooSmall(n));
    }
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    Ok(match crowded_compare(&pop.members[a], &pop.members[b]) {
        Ordering::Less => a,
        Ordering::Greater => b,
        Ordering::Equal => {
            if rng.random_bool(0.5) {
                a
            } else {
                b
            }
        }
    })
}

/// Indices of the `k` survivors of `items`: whole fronts in order, the split
/// front truncated by descending crowding distance (stable on ties).
pub fn select_indices<T: HasObjectives>(items: &[T], k: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(k);
    for front in nondominated_sort(items) {
        if chosen.len() + front.len() <= k {
            chosen.extend_from_slice(&front);
            if chosen.len() == k {
                break;
            }
            continue;
        }
        let dist = crowding_distance(items, &front);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
        let room = k - chosen.len();
        chosen.extend(order[..room].iter().map(|&w| front[w]));
        break;
    }
    chosen
}

/// NSGA-II survival of `k` members out of `pool`. Survivors carry the rank
/// and crowding they had in the combined pool.
pub fn environmental_selection(mut pool: Vec<Individual>, k: usize) -> Vec<Individual> {
    assign_rank_and_crowding(&mut pool);
    let keep = select_indices(&pool, k);
    let mut slots: Vec<Option<Individual>> = pool.into_iter().map(Some).collect();
    keep.into_iter().filter_map(|i| slots[i].take()).collect()
}

/// Exact area dominated by `points` and bounded by `reference`. Points that
/// do not strictly dominate the reference contribute nothing.
pub fn hypervolume_2d<T: HasObjectives>(points: &[T], reference: ObjectiveVector) -> f64 {
    let mut pts: Vec<ObjectiveVector> = points
        .iter()
        .map(HasObjectives::objectives)
        .filter(|p| p.error < reference.error && p.flops < reference.flops)
        .collect();
    pts.sort_by(|a, b| a.error.total_cmp(&b.error).then(a.flops.total_cmp(&b.flops)));
    let mut area = 0.0;
    let mut ceiling = reference.flops;
    for p in pts {
        if p.flops < ceiling {
            area += (reference.error - p.error) * (ceiling - p.flops);
            ceiling = p.flops;
        }
    }
    area
}

/// Hypervolume w.r.t. `(100, 1000)` divided by the ideal-to-reference box.
pub fn normalized_hv<T: HasObjectives>(points: &[T]) -> f64 {
    let boxed = (HV_REFERENCE.error - HV_IDEAL.error) * (HV_REFERENCE.flops - HV_IDEAL.flops);
    hypervolume_2d(points, HV_REFERENCE) / boxed
}

/// Greedy trade-off picks from a front sorted by ascending FLOPs.
///
/// Starts at the cheapest member, then repeatedly takes the later member with
/// the best error reduction per extra FLOP relative to the last pick. A
/// candidate is only eligible if enough members remain after it to reach `k`.
pub fn select_tradeoff_subset<T: HasObjectives>(front: &[T], k: usize) -> Result<Vec<usize>, SelectionError> {
    let n = front.len();
    if k > n {
        return Err(SelectionError::SubsetTooLarge {
            requested: k,
            available: n,
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut picks = vec![0];
    while picks.len() < k {
        let last = *picks.last().unwrap_or(&0);
        let lo = front[last].objectives();
        let still_needed = k - picks.len();
        let ratio = |j: usize| {
            let o = front[j].objectives();
            let gain = lo.error - o.error;
            let cost = o.flops - lo.flops;
            if cost > 0.0 {
                gain / cost
            } else if gain > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        };
        let best = (last + 1..=n - still_needed)
            .map(|j| (j, ratio(j)))
            .fold(None::<(usize, f64)>, |best, (j, r)| match best {
                Some((_, br)) if br >= r => best,
                _ => Some((j, r)),
            })
            .map(|(j, _)| j)
            .unwrap_or(last + 1);
        picks.push(best);
    }
    Ok(picks)
}
