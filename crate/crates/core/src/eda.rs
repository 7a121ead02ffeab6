//! Exploitation by distribution estimation.
//!
//! Each block kind gets a chain-structured Bayesian network over its node
//! states (a node state is the full `(in1, op1, in2, op2)` tuple):
//! `p(a1)`, `p(a2 | a1)`, ..., `p(an | a(n-1))`. Every table is
//! Laplace-smoothed over the node's legal domain,
//! `p(s) = (count(s) + alpha) / (total + alpha * |domain|)`. When a sampled
//! context was never observed, the position's marginal table is used.
//!
//! Also holds the adaptive split `rho` between genetic offspring and
//! network samples.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::genotype::{ArchitectureGenotype, BlockGenotype, BlockKind, NodeGene, SearchSpaceSpec};
use crate::moea::{select_indices, Individual};

/// Default size of the elite set the network is fitted on.
pub const DEFAULT_MODEL_SET: usize = 100;
/// `rho` assigned when exploitation starts.
pub const EXPLOITATION_START_RHO: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EdaError {
    #[error("cannot select a model set from an empty archive")]
    EmptyArchive,
    #[error("cannot fit a network on an empty model set")]
    EmptyModelSet,
    #[error("smoothing alpha must be positive and finite, got {0}")]
    BadAlpha(f64),
}

/// One smoothed distribution over the node states at `position`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    /// 1-based node position.
    pub position: usize,
    /// State of the preceding node, or `None` for a marginal table.
    pub context: Option<NodeGene>,
    pub domain: usize,
    pub counts: BTreeMap<NodeGene, u64>,
    pub total: u64,
    pub alpha: f64,
}

impl ConditionalTable {
    fn new(position: usize, context: Option<NodeGene>, domain: usize, alpha: f64) -> Self {
        Self {
            position,
            context,
            domain,
            counts: BTreeMap::new(),
            total: 0,
            alpha,
        }
    }

    fn add(&mut self, state: NodeGene) {
        *self.counts.entry(state).or_default() += 1;
        self.total += 1;
    }

    fn normalizer(&self) -> f64 {
        self.total as f64 + self.alpha * self.domain as f64
    }

    pub fn count(&self, state: &NodeGene) -> u64 {
        self.counts.get(state).copied().unwrap_or(0)
    }

    pub fn probability(&self, state: &NodeGene) -> f64 {
        (self.count(state) as f64 + self.alpha) / self.normalizer()
    }

    /// Probability of every legal state, indexed by [`NodeGene::state_index`].
    pub fn distribution(&self, spec: &SearchSpaceSpec) -> Vec<f64> {
        let z = self.normalizer();
        let mut p = vec![self.alpha / z; self.domain];
        for (state, &c) in &self.counts {
            p[state.state_index(spec, self.position)] += c as f64 / z;
        }
        p
    }

    /// Exact draw from the smoothed distribution: the smoothing mass is
    /// uniform over the domain, the rest follows the observed counts.
    pub fn sample<R: Rng + ?Sized>(&self, spec: &SearchSpaceSpec, rng: &mut R) -> NodeGene {
        let smooth = self.alpha * self.domain as f64;
        let pick_uniform = self.total == 0 || rng.random::<f64>() * self.normalizer() < smooth;
        if pick_uniform {
            let idx = rng.random_range(0..self.domain);
            return NodeGene::from_state_index(spec, self.position, idx);
        }
        let mut u = rng.random_range(0..self.total);
        for (state, &c) in &self.counts {
            if u < c {
                return *state;
            }
            u -= c;
        }
        unreachable!("counts sum to total")
    }

    /// The `k` most likely states, ties broken by state order.
    pub fn top(&self, k: usize) -> Vec<(NodeGene, f64)> {
        let mut seen: Vec<(NodeGene, u64)> = self.counts.iter().map(|(s, &c)| (*s, c)).collect();
        seen.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        seen.into_iter()
            .take(k)
            .map(|(s, _)| (s, self.probability(&s)))
            .collect()
    }
}

/// First-order chain over the nodes of one block kind.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockChain {
    pub kind: BlockKind,
    /// `marginals[i]` is the table for position `i + 1`.
    pub marginals: Vec<ConditionalTable>,
    /// `conditionals[i]` maps the state of node `i` to the table of node
    /// `i + 1` (both 1-based); `conditionals[0]` is always empty.
    pub conditionals: Vec<BTreeMap<NodeGene, ConditionalTable>>,
}

impl BlockChain {
    fn fit<'a>(
        kind: BlockKind,
        blocks: impl Iterator<Item = &'a BlockGenotype>,
        spec: &SearchSpaceSpec,
        alpha: f64,
    ) -> Self {
        let mut marginals: Vec<ConditionalTable> = (1..=spec.nodes)
            .map(|pos| ConditionalTable::new(pos, None, spec.node_domain(pos), alpha))
            .collect();
        let mut conditionals: Vec<BTreeMap<NodeGene, ConditionalTable>> = vec![BTreeMap::new(); spec.nodes];
        for block in blocks {
            for (i, &state) in block.nodes.iter().enumerate().take(spec.nodes) {
                let pos = i + 1;
                marginals[i].add(state);
                if i > 0 {
                    let ctx = block.nodes[i - 1];
                    conditionals[i]
                        .entry(ctx)
                        .or_insert_with(|| ConditionalTable::new(pos, Some(ctx), spec.node_domain(pos), alpha))
                        .add(state);
                }
            }
        }
        Self {
            kind,
            marginals,
            conditionals,
        }
    }

    /// Table used for node `position` (1-based) given the previous node.
    pub fn table_for(&self, position: usize, previous: Option<&NodeGene>) -> &ConditionalTable {
        let i = position - 1;
        previous
            .and_then(|ctx| self.conditionals[i].get(ctx))
            .unwrap_or(&self.marginals[i])
    }

    pub fn sample<R: Rng + ?Sized>(&self, spec: &SearchSpaceSpec, rng: &mut R) -> BlockGenotype {
        let mut nodes: Vec<NodeGene> = Vec::with_capacity(spec.nodes);
        for pos in 1..=spec.nodes {
            let state = self.table_for(pos, nodes.last()).sample(spec, rng);
            nodes.push(state);
        }
        BlockGenotype::new(self.kind, nodes)
    }

    /// Every table in the chain, marginals first.
    pub fn tables(&self) -> impl Iterator<Item = &ConditionalTable> {
        self.marginals
            .iter()
            .chain(self.conditionals.iter().flat_map(|m| m.values()))
    }
}

/// Fitted networks for both block kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockBayesNet {
    pub spec: SearchSpaceSpec,
    pub alpha: f64,
    pub normal: BlockChain,
    pub reduction: BlockChain,
}

impl BlockBayesNet {
    pub fn chain(&self, kind: BlockKind) -> &BlockChain {
        match kind {
            BlockKind::Normal => &self.normal,
            BlockKind::Reduction => &self.reduction,
        }
    }

    /// Per-position top states with probabilities, for frequency analysis.
    pub fn report(&self, top: usize) -> String {
        let mut out = String::new();
        for chain in [&self.normal, &self.reduction] {
            let _ = writeln!(out, "[{}]", chain.kind);
            for table in &chain.marginals {
                let _ = writeln!(out, "node {} (n = {}):", table.position, table.total);
                for (state, p) in table.top(top) {
                    let _ = writeln!(
                        out,
                        "  ({},{},{},{})  {:.4}",
                        state.in1, state.op1, state.in2, state.op2, p
                    );
                }
            }
        }
        out
    }
}

/// Elite subset for fitting: fronts in order, the split front truncated by
/// descending crowding distance. Returns indices into `archive`.
pub fn select_model_set(archive: &[Individual], m: usize) -> Result<Vec<usize>, EdaError> {
    if archive.is_empty() {
        return Err(EdaError::EmptyArchive);
    }
    Ok(select_indices(archive, m.min(archive.len())))
}

/// Fits both block chains on `model_set`. Order of the model set does not
/// matter.
pub fn fit_bn<'a, I>(model_set: I, spec: &SearchSpaceSpec, alpha: f64) -> Result<BlockBayesNet, EdaError>
where
    I: IntoIterator<Item = &'a ArchitectureGenotype>,
{
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(EdaError::BadAlpha(alpha));
    }
    let genotypes: Vec<&ArchitectureGenotype> = model_set.into_iter().collect();
    if genotypes.is_empty() {
        return Err(EdaError::EmptyModelSet);
    }
    Ok(BlockBayesNet {
        spec: *spec,
        alpha,
        normal: BlockChain::fit(BlockKind::Normal, genotypes.iter().map(|g| &g.normal), spec, alpha),
        reduction: BlockChain::fit(BlockKind::Reduction, genotypes.iter().map(|g| &g.reduction), spec, alpha),
    })
}

/// Ancestral sample of a full genotype.
pub fn sample_genotype<R: Rng + ?Sized>(bn: &BlockBayesNet, rng: &mut R) -> ArchitectureGenotype {
    let normal = bn.normal.sample(&bn.spec, rng);
    let reduction = bn.reduction.sample(&bn.spec, rng);
    ArchitectureGenotype { normal, reduction }
}

/// Probability of producing an offspring by genetic operators, plus the last
/// known survival rates of both channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoState {
    pub rho: f64,
    pub s_genetic: f64,
    pub s_bn: f64,
}

impl Default for RhoState {
    fn default() -> Self {
        Self {
            rho: 1.0,
            s_genetic: 0.0,
            s_bn: 0.0,
        }
    }
}

/// Softmax over the previous generation's survival rates. A channel that
/// produced nothing keeps its previous rate.
pub fn update_rho(
    state: RhoState,
    survived_genetic: usize,
    produced_genetic: usize,
    survived_bn: usize,
    produced_bn: usize,
) -> RhoState {
    let rate = |survived: usize, produced: usize, previous: f64| {
        if produced == 0 {
            previous
        } else {
            survived as f64 / produced as f64
        }
    };
    let s_genetic = rate(survived_genetic, produced_genetic, state.s_genetic);
    let s_bn = rate(survived_bn, produced_bn, state.s_bn);
    let eg = s_genetic.exp();
    let eb = s_bn.exp();
    RhoState {
        rho: eg / (eg + eb),
        s_genetic,
        s_bn,
    }
}

/// `rho` for the generation that starts once the counter reaches
/// `generation`: 1 before `tau`, 0.75 at `tau`, adaptive afterwards.
/// `tau = None` disables exploitation.
pub fn next_rho(
    generation: usize,
    tau: Option<usize>,
    state: RhoState,
    survival: [(usize, usize); 2],
) -> RhoState {
    match tau {
        Some(t) if generation == t => RhoState {
            rho: EXPLOITATION_START_RHO,
            ..state
        },
        Some(t) if generation > t => {
            let [(sg, pg), (sb, pb)] = survival;
            update_rho(state, sg, pg, sb, pb)
        }
        _ => RhoState { rho: 1.0, ..state },
    }
}
