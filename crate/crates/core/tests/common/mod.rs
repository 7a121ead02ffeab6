//! Independent reference implementations used by the integration tests and
//! the acceptance suite. Written from the formulas, not from the library
//! code paths.
#![allow(dead_code)]

use std::collections::HashMap;

use evonas_core::complexity::MacroConfig;
use evonas_core::eda::{fit_bn, sample_genotype, BlockBayesNet, ConditionalTable};
use evonas_core::genotype::random_genotype;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use evonas_core::genotype::{ArchitectureGenotype, BlockGenotype, BlockKind, NodeGene, OpCode, SearchSpaceSpec};

// ---------------------------------------------------------------- FLOPs

/// A primitive layer: conv `kh x kw` with `groups`, or a fixed-cost op.
#[derive(Debug, Clone, Copy)]
enum Layer {
    Conv {
        kh: u64,
        kw: u64,
        cin: u64,
        cout: u64,
        groups: u64,
        out_area: u64,
    },
    /// Binary sparse kernel at 50% density, no learned weights.
    BinaryConv { k: u64, cin: u64, out_area: u64 },
    Pool { k: u64, c: u64, out_area: u64 },
    /// Global average over the map.
    GlobalPool { c: u64, area: u64 },
    /// Element-wise channel scaling.
    Scale { c: u64, area: u64 },
    Linear { fin: u64, fout: u64, bias: bool },
}

impl Layer {
    fn macs(&self) -> u64 {
        match *self {
            Layer::Conv {
                kh,
                kw,
                cin,
                cout,
                groups,
                out_area,
            } => kh * kw * (cin / groups) * cout * out_area,
            Layer::BinaryConv { k, cin, out_area } => k * k * cin * cin * out_area / 2,
            Layer::Pool { k, c, out_area } => k * k * c * out_area,
            Layer::GlobalPool { c, area } | Layer::Scale { c, area } => c * area,
            Layer::Linear { fin, fout, .. } => fin * fout,
        }
    }

    fn params(&self) -> u64 {
        match *self {
            Layer::Conv {
                kh,
                kw,
                cin,
                cout,
                groups,
                ..
            } => kh * kw * (cin / groups) * cout,
            Layer::Linear { fin, fout, bias } => fin * fout + if bias { fout } else { 0 },
            _ => 0,
        }
    }
}

fn dw(k: u64, c: u64, a: u64) -> Layer {
    Layer::Conv {
        kh: k,
        kw: k,
        cin: c,
        cout: c,
        groups: c,
        out_area: a,
    }
}

fn pw(cin: u64, cout: u64, a: u64) -> Layer {
    Layer::Conv {
        kh: 1,
        kw: 1,
        cin,
        cout,
        groups: 1,
        out_area: a,
    }
}

/// Primitive layers making up `op` on a `c`-channel map producing `a`
/// output pixels.
fn op_layers(op: OpCode, c: u64, a: u64) -> Vec<Layer> {
    use OpCode::*;
    match op {
        Identity => vec![],
        MaxPool3x3 | AvgPool3x3 => vec![Layer::Pool { k: 3, c, out_area: a }],
        SqueezeExcite => {
            let r = (c / 16).max(1);
            vec![
                Layer::GlobalPool { c, area: a },
                Layer::Linear {
                    fin: c,
                    fout: r,
                    bias: false,
                },
                Layer::Linear {
                    fin: r,
                    fout: c,
                    bias: false,
                },
                Layer::Scale { c, area: a },
            ]
        }
        Lbc3x3 | Lbc5x5 => {
            let k = if op == Lbc3x3 { 3 } else { 5 };
            vec![Layer::BinaryConv { k, cin: c, out_area: a }, pw(c, c, a)]
        }
        DilConv3x3 | DilConv5x5 => {
            let k = if op == DilConv3x3 { 3 } else { 5 };
            vec![dw(k, c, a), pw(c, c, a)]
        }
        SepConv3x3 | SepConv5x5 | SepConv7x7 => {
            let k = match op {
                SepConv3x3 => 3,
                SepConv5x5 => 5,
                _ => 7,
            };
            vec![dw(k, c, a), pw(c, c, a), dw(k, c, a), pw(c, c, a)]
        }
        Conv1x7_7x1 => vec![
            Layer::Conv {
                kh: 1,
                kw: 7,
                cin: c,
                cout: c,
                groups: 1,
                out_area: a,
            },
            Layer::Conv {
                kh: 7,
                kw: 1,
                cin: c,
                cout: c,
                groups: 1,
                out_area: a,
            },
        ],
    }
}

/// Walks the network tensor by tensor and sums primitive layer costs.
/// Returns `(macs, params)`.
pub fn oracle_network_cost(g: &ArchitectureGenotype, m: &MacroConfig) -> (u64, u64) {
    let mut layers: Vec<Layer> = Vec::new();
    let mut res = m.input_hw as u64;
    layers.push(Layer::Conv {
        kh: 3,
        kw: 3,
        cin: m.input_channels as u64,
        cout: m.ch_init as u64,
        groups: 1,
        out_area: res * res,
    });
    // (channels, resolution) of h[i-2] and h[i-1].
    let mut hist: [(u64, u64); 2] = [(m.ch_init as u64, res); 2];
    let mut kinds = Vec::new();
    for stage in 0..3 {
        if stage > 0 {
            kinds.push(BlockKind::Reduction);
        }
        for _ in 0..m.n_repeat {
            kinds.push(BlockKind::Normal);
        }
    }
    for (depth, kind) in kinds.into_iter().enumerate() {
        let c = (m.ch_init + depth * m.ch_inc) as u64;
        let block = if kind == BlockKind::Normal { &g.normal } else { &g.reduction };
        let [(c_pp, _), (c_p, r_p)] = hist;
        res = r_p;
        layers.push(pw(c_pp, c, res * res));
        layers.push(pw(c_p, c, res * res));
        let out_res = if kind == BlockKind::Reduction { res / 2 } else { res };
        let mut consumed = vec![false; block.nodes.len()];
        for node in &block.nodes {
            for (input, op) in [(node.in1, node.op1), (node.in2, node.op2)] {
                if input >= 2 {
                    consumed[input as usize - 2] = true;
                }
                // Block-input branches of a reduction block are strided, so
                // every branch produces an out_res x out_res map.
                layers.extend(op_layers(OpCode::from_index(op).unwrap(), c, out_res * out_res));
            }
        }
        let width = consumed.iter().filter(|&&x| !x).count() as u64;
        hist = [(c_p, r_p), (c * width, out_res)];
    }
    let (c_last, r_last) = hist[1];
    layers.push(Layer::GlobalPool {
        c: c_last,
        area: r_last * r_last,
    });
    layers.push(Layer::Linear {
        fin: c_last,
        fout: m.num_classes as u64,
        bias: true,
    });
    layers
        .iter()
        .fold((0, 0), |(f, p), l| (f + l.macs(), p + l.params()))
}

/// All-identity genotype: only stem, block preprocessing and head cost.
pub fn identity_closed_form(m: &MacroConfig, nodes: u64) -> u64 {
    let n = m.n_repeat as u64;
    let hw = m.input_hw as u64;
    let c = |k: u64| m.ch_init as u64 + k * m.ch_inc as u64;
    let total_blocks = 3 * n + 2;
    // Reduction blocks sit at indices n and 2n + 1.
    let out_res = |k: u64| hw >> (u64::from(k >= n) + u64::from(k > 2 * n));
    let out_ch = |k: u64| nodes * c(k);
    let in_res = |k: u64| if k == 0 { hw } else { out_res(k - 1) };
    let stem = 9 * m.input_channels as u64 * m.ch_init as u64 * hw * hw;
    let mut pre = 0;
    for k in 0..total_blocks {
        let r = in_res(k);
        let c_p = if k == 0 { m.ch_init as u64 } else { out_ch(k - 1) };
        let c_pp = if k <= 1 { m.ch_init as u64 } else { out_ch(k - 2) };
        pre += (c_pp + c_p) * c(k) * r * r;
    }
    let c_last = out_ch(total_blocks - 1);
    let r_last = out_res(total_blocks - 1);
    stem + pre + c_last * r_last * r_last + c_last * m.num_classes as u64
}

// ---------------------------------------------------------------- MOEA

pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// Repeatedly peels off the points no remaining point dominates.
pub fn pairwise_fronts(points: &[(f64, f64)]) -> Vec<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut fronts = Vec::new();
    while !remaining.is_empty() {
        let front: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| !remaining.iter().any(|&j| dominates(points[j], points[i])))
            .collect();
        remaining.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

/// Normalized-gap crowding, computed per objective with a fresh sort.
pub fn oracle_crowding(points: &[(f64, f64)], front: &[usize]) -> HashMap<usize, f64> {
    let mut d: HashMap<usize, f64> = front.iter().map(|&i| (i, 0.0)).collect();
    if front.len() <= 2 {
        for v in d.values_mut() {
            *v = f64::INFINITY;
        }
        return d;
    }
    for obj in 0..2 {
        let val = |i: usize| if obj == 0 { points[i].0 } else { points[i].1 };
        let mut s = front.to_vec();
        s.sort_by(|&a, &b| val(a).partial_cmp(&val(b)).unwrap().then(a.cmp(&b)));
        let span = val(*s.last().unwrap()) - val(s[0]);
        *d.get_mut(&s[0]).unwrap() = f64::INFINITY;
        *d.get_mut(s.last().unwrap()).unwrap() = f64::INFINITY;
        if span <= 0.0 {
            continue;
        }
        for w in 1..s.len() - 1 {
            *d.get_mut(&s[w]).unwrap() += (val(s[w + 1]) - val(s[w - 1])) / span;
        }
    }
    d
}

/// Sort everything by (rank, -crowding, index) and keep the first `k`.
pub fn naive_selection(points: &[(f64, f64)], k: usize) -> Vec<usize> {
    let fronts = pairwise_fronts(points);
    let mut keyed: Vec<(usize, f64, usize)> = Vec::new();
    for (rank, front) in fronts.iter().enumerate() {
        let crowd = oracle_crowding(points, front);
        for &i in front {
            keyed.push((rank, crowd[&i], i));
        }
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    keyed.into_iter().take(k).map(|t| t.2).collect()
}

/// Monte-Carlo hypervolume in `[0, r0] x [0, r1]`. Returns `(estimate, sigma)`.
pub fn monte_carlo_hv(points: &[(f64, f64)], r: (f64, f64), samples: usize, seed: u64) -> (f64, f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut hit = 0usize;
    for _ in 0..samples {
        let x = rng.random::<f64>() * r.0;
        let y = rng.random::<f64>() * r.1;
        if points.iter().any(|&(a, b)| a <= x && b <= y) {
            hit += 1;
        }
    }
    let box_area = r.0 * r.1;
    let p = hit as f64 / samples as f64;
    (p * box_area, (p * (1.0 - p) / samples as f64).sqrt() * box_area)
}

// ---------------------------------------------------------------- space

/// Counts valid blocks by filtering every gene tuple in a superset whose
/// ranges extend one past the legal bounds.
pub fn enumerate_valid_blocks(spec: &SearchSpaceSpec) -> u64 {
    let genes = 4 * spec.nodes;
    let radix = (spec.nodes + 2).max(spec.n_ops + 1) as u64;
    let filler = BlockGenotype::uniform_op(BlockKind::Reduction, spec.nodes, OpCode::Identity);
    let mut count = 0;
    for code in 0..radix.pow(genes as u32) {
        let mut c = code;
        let mut g = Vec::with_capacity(genes);
        for _ in 0..genes {
            g.push((c % radix) as u8);
            c /= radix;
        }
        let nodes: Vec<NodeGene> = g.chunks(4).map(|q| NodeGene::new(q[0], q[1], q[2], q[3])).collect();
        let arch = ArchitectureGenotype {
            normal: BlockGenotype::new(BlockKind::Normal, nodes),
            reduction: filler.clone(),
        };
        if evonas_core::genotype::is_valid(&arch, spec) {
            count += 1;
        }
    }
    count
}

/// Counts valid two-block genotypes over the same kind of superset.
pub fn enumerate_valid_architectures(spec: &SearchSpaceSpec) -> u64 {
    let genes = 8 * spec.nodes;
    let radix = (spec.nodes + 2).max(spec.n_ops + 1) as u64;
    let mut count = 0;
    for code in 0..radix.pow(genes as u32) {
        let mut c = code;
        let g: Vec<u8> = (0..genes)
            .map(|_| {
                let v = (c % radix) as u8;
                c /= radix;
                v
            })
            .collect();
        let arch = ArchitectureGenotype::from_slice(&g, spec.nodes).unwrap();
        if evonas_core::genotype::is_valid(&arch, spec) {
            count += 1;
        }
    }
    count
}

// ---------------------------------------------------------------- BN

/// Smoothed frequency of `state` among `observations`.
pub fn counted_probability(observations: &[NodeGene], state: NodeGene, alpha: f64, domain: usize) -> f64 {
    let hits = observations.iter().filter(|&&s| s == state).count();
    (hits as f64 + alpha) / (observations.len() as f64 + alpha * domain as f64)
}

/// Every legal state at 1-based `position`, enumerated from the gene ranges.
pub fn legal_states(spec: &SearchSpaceSpec, position: usize) -> Vec<NodeGene> {
    let mut out = Vec::new();
    for in1 in 0..=position as u8 {
        for op1 in 0..spec.n_ops as u8 {
            for in2 in 0..=position as u8 {
                for op2 in 0..spec.n_ops as u8 {
                    out.push(NodeGene::new(in1, op1, in2, op2));
                }
            }
        }
    }
    out
}

/// Three distinct genotypes repeated unevenly, plus one stray.
pub fn hand_built() -> Vec<ArchitectureGenotype> {
    let n = |a, b, c, d| NodeGene::new(a, b, c, d);
    let a = ArchitectureGenotype::new(
        vec![n(0, 8, 1, 8), n(1, 9, 2, 4), n(0, 0, 3, 10), n(2, 1, 4, 1), n(5, 6, 0, 7)],
        vec![n(1, 3, 0, 2), n(0, 2, 2, 2), n(3, 11, 1, 0), n(0, 5, 0, 5), n(4, 4, 3, 3)],
    );
    let b = ArchitectureGenotype::new(
        vec![n(0, 8, 1, 8), n(1, 9, 2, 4), n(2, 7, 0, 10), n(2, 1, 4, 1), n(1, 1, 1, 1)],
        vec![n(1, 3, 0, 2), n(0, 0, 0, 0), n(3, 11, 1, 0), n(0, 5, 0, 5), n(4, 4, 3, 3)],
    );
    let c = ArchitectureGenotype::uniform_op(5, OpCode::SepConv5x5);
    let mut out = Vec::new();
    out.extend(std::iter::repeat_n(a, 5));
    out.extend(std::iter::repeat_n(b, 3));
    out.extend(std::iter::repeat_n(c, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    out.push(random_genotype(&SearchSpaceSpec::default(), &mut rng));
    out
}

pub fn column(set: &[ArchitectureGenotype], kind: BlockKind, i: usize) -> Vec<NodeGene> {
    set.iter()
        .map(|g| if kind == BlockKind::Normal { g.normal.nodes[i] } else { g.reduction.nodes[i] })
        .collect()
}

pub fn check_against_counts(set: &[ArchitectureGenotype], spec: &SearchSpaceSpec, alpha: f64) {
    let bn = fit_bn(set, spec, alpha).unwrap();
    for kind in [BlockKind::Normal, BlockKind::Reduction] {
        let chain = bn.chain(kind);
        for pos in 1..=spec.nodes {
            let obs = column(set, kind, pos - 1);
            let table = &chain.marginals[pos - 1];
            let domain = legal_states(spec, pos);
            assert_eq!(table.domain, domain.len());
            for &s in &domain {
                let want = counted_probability(&obs, s, alpha, domain.len());
                assert!((table.probability(&s) - want).abs() < 1e-12);
            }
            if pos == 1 {
                assert!(chain.conditionals[0].is_empty());
                continue;
            }
            let prev = column(set, kind, pos - 2);
            let mut by_ctx: HashMap<NodeGene, Vec<NodeGene>> = HashMap::new();
            for (p, s) in prev.iter().zip(&obs) {
                by_ctx.entry(*p).or_default().push(*s);
            }
            assert_eq!(chain.conditionals[pos - 1].len(), by_ctx.len());
            for (ctx, sub) in &by_ctx {
                let t = chain.table_for(pos, Some(ctx));
                assert_eq!(t.context, Some(*ctx));
                for &s in &domain {
                    let want = counted_probability(sub, s, alpha, domain.len());
                    assert!((t.probability(&s) - want).abs() < 1e-12);
                }
            }
        }
    }
}

/// L1 distance between the empirical distribution of `draws` and `table`.
pub fn l1(table: &ConditionalTable, spec: &SearchSpaceSpec, draws: &[NodeGene]) -> f64 {
    let p = table.distribution(spec);
    let mut hits = vec![0usize; p.len()];
    for d in draws {
        hits[d.state_index(spec, table.position)] += 1;
    }
    let n = draws.len() as f64;
    p.iter().zip(&hits).map(|(q, &h)| (h as f64 / n - q).abs()).sum()
}

/// Draws `n` chains and groups each node by the table that produced it.
pub fn ancestral_l1(bn: &BlockBayesNet, n: usize, min_draws: usize, seed: u64) -> Vec<(usize, f64)> {
    let spec = bn.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: HashMap<(BlockKind, usize, Option<NodeGene>), Vec<NodeGene>> = HashMap::new();
    for _ in 0..n {
        let g = sample_genotype(bn, &mut rng);
        for block in g.blocks() {
            let chain = bn.chain(block.kind);
            for (i, &s) in block.nodes.iter().enumerate() {
                let prev = if i == 0 { None } else { Some(&block.nodes[i - 1]) };
                let t = chain.table_for(i + 1, prev);
                groups.entry((block.kind, i + 1, t.context)).or_default().push(s);
            }
        }
    }
    let mut out = Vec::new();
    for ((kind, pos, ctx), draws) in groups {
        if draws.len() < min_draws {
            continue;
        }
        let t = bn.chain(kind).table_for(pos, ctx.as_ref());
        out.push((draws.len(), l1(t, &spec, &draws)));
    }
    out
}
