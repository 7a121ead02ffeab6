//! Generational search loop, its baselines, the archive and checkpoints.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::complexity::{default_reference_shape, network_cost, op_complexity_order, CostError, MacroConfig};
use crate::eda::{fit_bn, next_rho, sample_genotype, select_model_set, BlockBayesNet, RhoState, DEFAULT_MODEL_SET};
use crate::evaluation::{EvalError, EvalRequest, Evaluator, ProxyConfig, SurrogateSpec};
use crate::genotype::{random_genotype, ArchitectureGenotype, Digest, SearchSpaceSpec, DEFAULT_NODES, NUM_OPS};
use crate::moea::{
    assign_rank_and_crowding, binary_tournament, normalized_hv, nondominated_sort, select_indices, Individual,
    ObjectiveVector, Origin, RankedPopulation,
};
use crate::variation::{crossover, pm_mutate, VariationConfig};

pub const CHECKPOINT_VERSION: &str = concat!("evonas-checkpoint/1/", env!("CARGO_PKG_VERSION"));
pub const DEFAULT_MAX_REDRAWS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Evaluator(#[from] EvalError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint version `{found}` does not match `{expected}`")]
    CheckpointVersion { found: String, expected: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Nsganetv1,
    VanillaNsga2,
    RandomSampling,
}

impl SearchMode {
    pub const ALL: [SearchMode; 3] = [SearchMode::Nsganetv1, SearchMode::VanillaNsga2, SearchMode::RandomSampling];

    pub fn label(self) -> &'static str {
        match self {
            SearchMode::Nsganetv1 => "nsganetv1",
            SearchMode::VanillaNsga2 => "vanilla_nsga2",
            SearchMode::RandomSampling => "random_sampling",
        }
    }
}

impl std::fmt::Display for SearchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected nsganetv1, vanilla_nsga2 or random_sampling)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub pop_size: usize,
    pub generations: usize,
    /// Generation at which exploitation starts; `None` means two thirds of
    /// `generations`, rounded up.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<usize>,
    /// `false` keeps genetic operators for the whole run.
    pub exploit: bool,
    pub pc: f64,
    pub pm: f64,
    pub eta_m: f64,
    pub model_set: usize,
    pub bn_alpha: f64,
    pub seed: u64,
    pub mode: SearchMode,
    pub nodes: usize,
    pub max_redraws: usize,
    /// `synthetic` or `external:<command>`.
    pub evaluator: String,
    pub workers: usize,
    pub dataset: String,
    #[serde(rename = "macro")]
    pub macro_config: MacroConfig,
    pub proxy: ProxyConfig,
    pub surrogate: SurrogateSpec,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            pop_size: 40,
            generations: 30,
            tau: None,
            exploit: true,
            pc: 0.9,
            pm: 0.1,
            eta_m: 20.0,
            model_set: DEFAULT_MODEL_SET,
            bn_alpha: 0.5,
            seed: 0,
            mode: SearchMode::Nsganetv1,
            nodes: DEFAULT_NODES,
            max_redraws: DEFAULT_MAX_REDRAWS,
            evaluator: "synthetic".to_string(),
            workers: 1,
            dataset: "cifar10".to_string(),
            macro_config: MacroConfig::default(),
            proxy: ProxyConfig::default(),
            surrogate: SurrogateSpec::default(),
        }
    }
}

impl SearchConfig {
    pub fn spec(&self) -> SearchSpaceSpec {
        SearchSpaceSpec::new(self.nodes, NUM_OPS)
    }

    /// Exploitation start, or `None` when this run never samples the network.
    pub fn effective_tau(&self) -> Option<usize> {
        if self.mode != SearchMode::Nsganetv1 || !self.exploit {
            return None;
        }
        Some(self.tau.unwrap_or_else(|| (2 * self.generations).div_ceil(3)))
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::Config(m));
        if self.pop_size < 2 || self.pop_size % 2 != 0 {
            return bad(format!("pop_size must be even and at least 2, got {}", self.pop_size));
        }
        if self.generations == 0 {
            return bad("generations must be positive".into());
        }
        if let Some(t) = self.tau {
            if t == 0 || t > self.generations {
                return bad(format!("tau must lie in 1..={}, got {t}", self.generations));
            }
        }
        for (name, p) in [("pc", self.pc), ("pm", self.pm)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.eta_m > 0.0) {
            return bad(format!("eta_m must be positive, got {}", self.eta_m));
        }
        if !(self.bn_alpha > 0.0 && self.bn_alpha.is_finite()) {
            return bad(format!("bn_alpha must be positive, got {}", self.bn_alpha));
        }
        if self.model_set == 0 || self.nodes == 0 || self.workers == 0 {
            return bad("model_set, nodes and workers must be positive".into());
        }
        self.macro_config.validate()?;
        self.surrogate.validate()?;
        Ok(())
    }

    /// Variation settings for this mode. `pc`, `pm` and `eta_m` apply to
    /// nsganetv1 only; the vanilla baseline keeps stock NSGA-II values.
    pub fn variation(&self) -> VariationConfig {
        let spec = self.spec();
        match self.mode {
            SearchMode::Nsganetv1 => {
                let order = op_complexity_order(&spec, default_reference_shape(&self.macro_config));
                VariationConfig {
                    p_c: self.pc,
                    p_m: self.pm,
                    eta_m: self.eta_m,
                    ..VariationConfig::new(&order)
                }
            }
            _ => VariationConfig::plain(&spec),
        }
    }

    pub fn to_toml(&self) -> Result<String, SearchError> {
        toml::to_string(self).map_err(|e| SearchError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, SearchError> {
        toml::from_str(text).map_err(|e| SearchError::Config(e.to_string()))
    }
}

/// Every distinct genotype evaluated so far, in evaluation order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub members: Vec<Individual>,
    /// NHV of the archive after each generation, starting with the
    /// initial population.
    pub nhv: Vec<f64>,
    /// NHV of the parent population after each generation.
    pub population_nhv: Vec<f64>,
    pub dedup_hits: usize,
    #[serde(skip)]
    index: HashMap<Digest, usize>,
}

impl Archive {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, d: &Digest) -> bool {
        self.index.contains_key(d)
    }

    pub fn get(&self, d: &Digest) -> Option<&Individual> {
        self.index.get(d).map(|&i| &self.members[i])
    }

    /// Adds `ind` unless its digest is already present. Returns whether it
    /// was new.
    pub fn absorb(&mut self, ind: &Individual) -> bool {
        if self.index.contains_key(&ind.digest) {
            self.dedup_hits += 1;
            return false;
        }
        self.index.insert(ind.digest, self.members.len());
        let mut stored = ind.clone();
        stored.rank = None;
        stored.crowding = None;
        self.members.push(stored);
        true
    }

    /// Non-dominated members, in archive order.
    pub fn front(&self) -> Vec<&Individual> {
        nondominated_sort(&self.members)
            .first()
            .map(|f| {
                let mut idx = f.clone();
                idx.sort_unstable();
                idx.into_iter().map(|i| &self.members[i]).collect()
            })
            .unwrap_or_default()
    }

    fn rebuild_index(&mut self) {
        self.index = self.members.iter().enumerate().map(|(i, m)| (m.digest, i)).collect();
    }
}

/// Per-generation counters. Generation 0 is the initial population.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub nhv: f64,
    pub population_nhv: f64,
    pub front_size: usize,
    /// `rho` in effect while this generation's offspring were made.
    pub rho: f64,
    pub produced: OriginCounts,
    pub survived: OriginCounts,
    /// Requests sent to the evaluator.
    pub evaluations: usize,
    pub failed: usize,
    pub dedup_hits: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginCounts {
    pub init: usize,
    pub genetic: usize,
    pub bn_sample: usize,
    pub random_sample: usize,
}

impl OriginCounts {
    pub fn add(&mut self, o: Origin) {
        *self.slot(o) += 1;
    }

    pub fn get(&self, o: Origin) -> usize {
        match o {
            Origin::Init => self.init,
            Origin::Genetic => self.genetic,
            Origin::BnSample => self.bn_sample,
            Origin::RandomSample => self.random_sample,
        }
    }

    pub fn total(&self) -> usize {
        self.init + self.genetic + self.bn_sample + self.random_sample
    }

    fn slot(&mut self, o: Origin) -> &mut usize {
        match o {
            Origin::Init => &mut self.init,
            Origin::Genetic => &mut self.genetic,
            Origin::BnSample => &mut self.bn_sample,
            Origin::RandomSample => &mut self.random_sample,
        }
    }
}

/// How offspring are produced in one generation.
pub struct Breeder<'a> {
    pub mode: SearchMode,
    pub spec: SearchSpaceSpec,
    pub variation: &'a VariationConfig,
    pub bn: Option<&'a BlockBayesNet>,
    pub max_redraws: usize,
}

impl Breeder<'_> {
    fn draw<R: Rng + ?Sized>(
        &self,
        pop: &RankedPopulation,
        origin: Origin,
        rng: &mut R,
    ) -> ArchitectureGenotype {
        match origin {
            Origin::Genetic => {
                let a = binary_tournament(pop, rng).expect("population has at least two members");
                let b = binary_tournament(pop, rng).expect("population has at least two members");
                let child = crossover(&pop.members[a].genotype, &pop.members[b].genotype, self.variation, rng);
                pm_mutate(&child, self.variation, &self.spec, rng)
            }
            Origin::BnSample => sample_genotype(self.bn.expect("network fitted when rho < 1"), rng),
            Origin::RandomSample | Origin::Init => random_genotype(&self.spec, rng),
        }
    }
}

/// `k` offspring. Each picks its channel once (genetic with probability
/// `rho`, else a network sample; uniform draws in random-sampling mode),
/// then redraws up to `max_redraws` times while the digest is already known
/// or was produced earlier in this batch.
pub fn make_offspring<R: Rng + ?Sized>(
    breeder: &Breeder<'_>,
    pop: &RankedPopulation,
    rho: f64,
    k: usize,
    known: impl Fn(&Digest) -> bool,
    rng: &mut R,
) -> Vec<(ArchitectureGenotype, Origin)> {
    let mut batch: HashSet<Digest> = HashSet::new();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let origin = match breeder.mode {
            SearchMode::RandomSampling => Origin::RandomSample,
            _ if rho >= 1.0 => Origin::Genetic,
            _ if rho <= 0.0 => Origin::BnSample,
            _ if rng.random_bool(rho) => Origin::Genetic,
            _ => Origin::BnSample,
        };
        let mut child = breeder.draw(pop, origin, rng);
        for _ in 0..breeder.max_redraws {
            let d = child.digest();
            if !known(&d) && !batch.contains(&d) {
                break;
            }
            child = breeder.draw(pop, origin, rng);
        }
        batch.insert(child.digest());
        out.push((child, origin));
    }
    out
}

/// Complete, resumable state of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub version: String,
    pub config: SearchConfig,
    /// Generations completed; the initial population is generation 0.
    pub generation: usize,
    pub initialized: bool,
    pub population: Vec<Individual>,
    pub archive: Archive,
    pub stats: Vec<GenerationStats>,
    pub rho: RhoState,
    pub next_id: u64,
    /// Requests sent to the evaluator so far.
    pub evaluations: usize,
    rng: ChaCha8Rng,
}

impl SearchState {
    pub fn new(config: SearchConfig) -> Result<Self, SearchError> {
        config.validate()?;
        Ok(Self {
            version: CHECKPOINT_VERSION.to_string(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            generation: 0,
            initialized: false,
            population: Vec::new(),
            archive: Archive::default(),
            stats: Vec::new(),
            rho: RhoState::default(),
            next_id: 0,
            evaluations: 0,
        })
    }

    pub fn is_done(&self) -> bool {
        self.initialized && self.generation >= self.config.generations
    }

    /// Runs initialization or one generation. On error the state is left
    /// exactly as it was before the call.
    pub fn step(&mut self, evaluator: &mut dyn Evaluator) -> Result<(), SearchError> {
        let backup = self.clone();
        let r = if self.initialized {
            self.generation_step(evaluator)
        } else {
            self.init_step(evaluator)
        };
        if r.is_err() {
            *self = backup;
        }
        r
    }

    /// Runs to completion, calling `on_step` after each successful step.
    pub fn run<F>(&mut self, evaluator: &mut dyn Evaluator, mut on_step: F) -> Result<(), SearchError>
    where
        F: FnMut(&SearchState) -> Result<(), SearchError>,
    {
        while !self.is_done() {
            self.step(evaluator)?;
            on_step(self)?;
        }
        Ok(())
    }

    fn init_step(&mut self, evaluator: &mut dyn Evaluator) -> Result<(), SearchError> {
        let start = Instant::now();
        let spec = self.config.spec();
        let k = self.config.pop_size;
        let genotypes: Vec<_> = (0..k)
            .map(|_| (random_genotype(&spec, &mut self.rng), Origin::Init))
            .collect();
        let (members, evaluations, failed) = self.evaluate(genotypes, 0, evaluator)?;
        let mut produced = OriginCounts::default();
        for m in &members {
            produced.add(m.origin);
            self.archive.absorb(m);
        }
        self.population = members;
        self.initialized = true;
        self.record(GenerationStats {
            generation: 0,
            rho: 1.0,
            produced,
            survived: produced,
            evaluations,
            failed,
            wall_ms: start.elapsed().as_millis() as u64,
            ..GenerationStats::default()
        });
        Ok(())
    }

    fn generation_step(&mut self, evaluator: &mut dyn Evaluator) -> Result<(), SearchError> {
        let start = Instant::now();
        let spec = self.config.spec();
        let k = self.config.pop_size;
        let rho = self.rho.rho;
        let bn = if rho < 1.0 && self.config.mode == SearchMode::Nsganetv1 {
            let idx = select_model_set(&self.archive.members, self.config.model_set).expect("archive is never empty");
            let set: Vec<&ArchitectureGenotype> = idx.iter().map(|&i| &self.archive.members[i].genotype).collect();
            Some(fit_bn(set, &spec, self.config.bn_alpha).expect("alpha validated"))
        } else {
            None
        };
        let variation = self.config.variation();
        let breeder = Breeder {
            mode: self.config.mode,
            spec,
            variation: &variation,
            bn: bn.as_ref(),
            max_redraws: self.config.max_redraws,
        };
        let parents = RankedPopulation::new(std::mem::take(&mut self.population));
        let archive = &self.archive;
        let children = make_offspring(&breeder, &parents, rho, k, |d| archive.contains(d), &mut self.rng);
        let born = self.generation + 1;
        let (offspring, evaluations, failed) = self.evaluate(children, born, evaluator)?;

        let mut produced = OriginCounts::default();
        for o in &offspring {
            produced.add(o.origin);
        }
        let mut pool = parents.members;
        pool.extend(offspring.iter().cloned());
        assign_rank_and_crowding(&mut pool);
        let keep = select_indices(&pool, k);
        let mut survived = OriginCounts::default();
        for &i in &keep {
            if i >= k {
                survived.add(pool[i].origin);
            }
        }
        let mut slots: Vec<Option<Individual>> = pool.into_iter().map(Some).collect();
        self.population = keep.into_iter().filter_map(|i| slots[i].take()).collect();

        let hits_before = self.archive.dedup_hits;
        for o in &offspring {
            self.archive.absorb(o);
        }
        let dedup_hits = self.archive.dedup_hits - hits_before;
        self.generation = born;
        let tau = self.config.effective_tau();
        let survival = [
            (survived.genetic, produced.genetic),
            (survived.bn_sample, produced.bn_sample),
        ];
        self.rho = next_rho(self.generation, tau, self.rho, survival);
        self.record(GenerationStats {
            generation: born,
            rho,
            produced,
            survived,
            evaluations,
            failed,
            dedup_hits,
            wall_ms: start.elapsed().as_millis() as u64,
            ..GenerationStats::default()
        });
        Ok(())
    }

    /// Objectives for `children`. Genotypes already in the archive, or
    /// repeated within the batch, reuse the stored result without a new
    /// request. Returns the individuals, the number of requests sent and the
    /// number that failed.
    fn evaluate(
        &mut self,
        children: Vec<(ArchitectureGenotype, Origin)>,
        born: usize,
        evaluator: &mut dyn Evaluator,
    ) -> Result<(Vec<Individual>, usize, usize), SearchError> {
        let mut requests = Vec::new();
        let mut request_of: HashMap<Digest, usize> = HashMap::new();
        for (g, _) in &children {
            let d = g.digest();
            if self.archive.contains(&d) || request_of.contains_key(&d) {
                continue;
            }
            let mut req = EvalRequest::new(self.next_id, g.clone());
            self.next_id += 1;
            req.proxy = self.config.proxy;
            req.macro_config = self.config.macro_config;
            req.dataset = self.config.dataset.clone();
            request_of.insert(d, requests.len());
            requests.push(req);
        }
        let results = if requests.is_empty() {
            Vec::new()
        } else {
            evaluator.evaluate(&requests)?
        };
        self.evaluations += requests.len();
        let failed = results.iter().filter(|r| !r.is_ok()).count();

        let mut out = Vec::with_capacity(children.len());
        for (g, origin) in children {
            let d = g.digest();
            if let Some(prev) = self.archive.get(&d) {
                let mut ind = Individual::new(g, prev.objectives, origin, born);
                ind.params = prev.params;
                ind.failed = prev.failed;
                out.push(ind);
                continue;
            }
            let res = &results[request_of[&d]];
            let cost = network_cost(&g, &self.config.macro_config)?;
            let mut ind = Individual::new(g, ObjectiveVector::new(res.objective_error(), cost.mflops()), origin, born);
            ind.params = cost.params;
            ind.failed = !res.is_ok();
            out.push(ind);
        }
        Ok((out, requests.len(), failed))
    }

    fn record(&mut self, mut s: GenerationStats) {
        s.nhv = normalized_hv(&self.archive.members);
        s.population_nhv = normalized_hv(&self.population);
        s.front_size = nondominated_sort(&self.population).first().map_or(0, Vec::len);
        self.archive.nhv.push(s.nhv);
        self.archive.population_nhv.push(s.population_nhv);
        self.stats.push(s);
    }

    /// Final parent population with rank and crowding.
    pub fn ranked_population(&self) -> RankedPopulation {
        RankedPopulation::new(self.population.clone())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), SearchError> {
        let text = serde_json::to_string(self).map_err(|e| SearchError::CorruptCheckpoint(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, SearchError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint_text(&text)
    }

    pub fn from_checkpoint_text(text: &str) -> Result<Self, SearchError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| SearchError::CorruptCheckpoint(e.to_string()))?;
        let found = value.get("version").and_then(|v| v.as_str()).unwrap_or("");
        if found != CHECKPOINT_VERSION {
            return Err(SearchError::CheckpointVersion {
                found: found.to_string(),
                expected: CHECKPOINT_VERSION.to_string(),
            });
        }
        let mut state: SearchState =
            serde_json::from_value(value).map_err(|e| SearchError::CorruptCheckpoint(e.to_string()))?;
        state.config.validate()?;
        state.archive.rebuild_index();
        Ok(state)
    }
}

/// Runs a whole search from scratch.
pub fn run_search(config: SearchConfig, evaluator: &mut dyn Evaluator) -> Result<SearchState, SearchError> {
    let mut state = SearchState::new(config)?;
    state.run(evaluator, |_| Ok(()))?;
    Ok(state)
}
