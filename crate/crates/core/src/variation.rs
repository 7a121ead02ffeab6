//! Exploration operators: block/node-level crossover, gene-wise uniform
//! crossover (the plain baseline), and a discretized parent-centric
//! polynomial mutation over ordered gene domains.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::genotype::{ArchitectureGenotype, BlockKind, OpCode, SearchSpaceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossoverKind {
    /// Block-level or node-level exchange, chosen with equal probability.
    BlockNode,
    /// Each gene taken from either parent with probability 1/2.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationConfig {
    pub p_c: f64,
    /// Per-gene mutation probability.
    pub p_m: f64,
    pub eta_m: f64,
    /// Op indices in the order mutation treats as adjacent. Must be a
    /// permutation of `0..n_ops`.
    pub op_order: Vec<u8>,
    pub crossover: CrossoverKind,
}

impl VariationConfig {
    /// Block/node crossover with mutation over the given op ordering.
    pub fn new(op_order: &[OpCode]) -> Self {
        Self {
            p_c: 0.9,
            p_m: 0.1,
            eta_m: 20.0,
            op_order: op_order.iter().map(|op| op.index()).collect(),
            crossover: CrossoverKind::BlockNode,
        }
    }

    /// Stock NSGA-II settings on the integer encoding: uniform crossover,
    /// mutation over raw op indices with probability `1 / genes`.
    pub fn plain(spec: &SearchSpaceSpec) -> Self {
        Self {
            p_m: 1.0 / (8 * spec.nodes) as f64,
            op_order: (0..spec.n_ops as u8).collect(),
            crossover: CrossoverKind::Uniform,
            ..Self::new(&[])
        }
    }

    pub fn validate(&self, spec: &SearchSpaceSpec) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.p_c) {
            return Err(format!("p_c = {} is outside [0, 1]", self.p_c));
        }
        if !(0.0..=1.0).contains(&self.p_m) {
            return Err(format!("p_m = {} is outside [0, 1]", self.p_m));
        }
        if !(self.eta_m > 0.0) {
            return Err(format!("eta_m = {} must be positive", self.eta_m));
        }
        let mut seen = vec![false; spec.n_ops];
        for &op in &self.op_order {
            match seen.get_mut(op as usize) {
                Some(s) if !*s => *s = true,
                _ => return Err("op_order is not a permutation".into()),
            }
        }
        if seen.iter().any(|s| !s) {
            return Err("op_order is not a permutation".into());
        }
        Ok(())
    }

    fn op_rank(&self) -> Vec<u8> {
        let mut rank = vec![0u8; self.op_order.len()];
        for (r, &op) in self.op_order.iter().enumerate() {
            rank[op as usize] = r as u8;
        }
        rank
    }
}

/// Block-level exchange: `(normal of a, reduction of b)` and its complement.
pub fn block_swap(a: &ArchitectureGenotype, b: &ArchitectureGenotype) -> (ArchitectureGenotype, ArchitectureGenotype) {
    (
        ArchitectureGenotype {
            normal: a.normal.clone(),
            reduction: b.reduction.clone(),
        },
        ArchitectureGenotype {
            normal: b.normal.clone(),
            reduction: a.reduction.clone(),
        },
    )
}

/// Node-level exchange at 0-based `normal_pos` in the Normal blocks and
/// `reduction_pos` in the Reduction blocks.
pub fn node_swap(
    a: &ArchitectureGenotype,
    b: &ArchitectureGenotype,
    normal_pos: usize,
    reduction_pos: usize,
) -> (ArchitectureGenotype, ArchitectureGenotype) {
    let mut c1 = a.clone();
    let mut c2 = b.clone();
    for (kind, pos) in [(BlockKind::Normal, normal_pos), (BlockKind::Reduction, reduction_pos)] {
        let n1 = &mut c1.block_mut(kind).nodes[pos];
        let n2 = &mut c2.block_mut(kind).nodes[pos];
        std::mem::swap(n1, n2);
    }
    (c1, c2)
}

/// Gene-wise uniform crossover; returns one child.
pub fn uniform_crossover<R: Rng + ?Sized>(
    a: &ArchitectureGenotype,
    b: &ArchitectureGenotype,
    rng: &mut R,
) -> ArchitectureGenotype {
    let ga = a.to_vec();
    let gb = b.to_vec();
    let child: Vec<u8> = ga
        .iter()
        .zip(&gb)
        .map(|(&x, &y)| if rng.random_bool(0.5) { x } else { y })
        .collect();
    ArchitectureGenotype::from_slice(&child, a.normal.nodes.len()).expect("parents share a node count")
}

/// Recombines two parents into a single offspring.
pub fn crossover<R: Rng + ?Sized>(
    p1: &ArchitectureGenotype,
    p2: &ArchitectureGenotype,
    cfg: &VariationConfig,
    rng: &mut R,
) -> ArchitectureGenotype {
    if !rng.random_bool(cfg.p_c) {
        return if rng.random_bool(0.5) { p1.clone() } else { p2.clone() };
    }
    match cfg.crossover {
        CrossoverKind::Uniform => uniform_crossover(p1, p2, rng),
        CrossoverKind::BlockNode => {
            let (c1, c2) = if rng.random_bool(0.5) {
                block_swap(p1, p2)
            } else {
                let normal_pos = rng.random_range(0..p1.normal.nodes.len());
                let reduction_pos = rng.random_range(0..p1.reduction.nodes.len());
                node_swap(p1, p2, normal_pos, reduction_pos)
            };
            if rng.random_bool(0.5) {
                c1
            } else {
                c2
            }
        }
    }
}

/// One draw of Deb's bounded polynomial perturbation of `x` in `[lo, hi]`.
pub fn polynomial_perturb<R: Rng + ?Sized>(x: f64, lo: f64, hi: f64, eta: f64, rng: &mut R) -> f64 {
    let range = hi - lo;
    if range <= 0.0 {
        return x;
    }
    let d1 = (x - lo) / range;
    let d2 = (hi - x) / range;
    let pow = 1.0 / (eta + 1.0);
    let u: f64 = rng.random();
    let dq = if u < 0.5 {
        let v = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1).powf(eta + 1.0);
        v.powf(pow) - 1.0
    } else {
        let v = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2).powf(eta + 1.0);
        1.0 - v.powf(pow)
    };
    (x + dq * range).clamp(lo, hi)
}

/// Mutates a rank in `0..domain`: perturb, round, clip; one redraw if the
/// rank is unchanged, then accept.
pub fn mutate_rank<R: Rng + ?Sized>(rank: usize, domain: usize, eta: f64, rng: &mut R) -> usize {
    if domain <= 1 {
        return rank;
    }
    let hi = (domain - 1) as f64;
    let draw = |rng: &mut R| polynomial_perturb(rank as f64, 0.0, hi, eta, rng).round().clamp(0.0, hi) as usize;
    let first = draw(rng);
    if first != rank {
        first
    } else {
        draw(rng)
    }
}

/// Per-gene discretized polynomial mutation. Input genes move in
/// chronological order, op genes in `cfg.op_order`.
pub fn pm_mutate<R: Rng + ?Sized>(
    g: &ArchitectureGenotype,
    cfg: &VariationConfig,
    spec: &SearchSpaceSpec,
    rng: &mut R,
) -> ArchitectureGenotype {
    let mut out = g.clone();
    if cfg.p_m <= 0.0 {
        return out;
    }
    let rank_of = cfg.op_rank();
    let n_ops = cfg.op_order.len();
    for kind in [BlockKind::Normal, BlockKind::Reduction] {
        for (i, node) in out.block_mut(kind).nodes.iter_mut().enumerate() {
            let inputs = spec.input_choices(i + 1);
            for input in [&mut node.in1, &mut node.in2] {
                if rng.random_bool(cfg.p_m) {
                    *input = mutate_rank(*input as usize, inputs, cfg.eta_m, rng) as u8;
                }
            }
            for op in [&mut node.op1, &mut node.op2] {
                if rng.random_bool(cfg.p_m) {
                    let r = mutate_rank(rank_of[*op as usize] as usize, n_ops, cfg.eta_m, rng);
                    *op = cfg.op_order[r];
                }
            }
        }
    }
    out
}
