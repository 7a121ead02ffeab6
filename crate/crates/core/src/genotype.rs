//! Cell-based search space: operation set, node/block/architecture genotypes,
//! validation, uniform sampling, canonical digests, DAG decoding and the
//! line-oriented text format.
//!
//! A block has `n` nodes. Node `i` (1-based) picks two `(input, op)` branches.
//! Inputs are encoded chronologically: `0` is `h[i-2]` (output of the block
//! before the previous one), `1` is `h[i-1]` (output of the previous block),
//! and `k >= 2` is the output of node `k - 1` of the same block. Node `i` may
//! therefore read inputs `0..=i`, which gives `i + 1` choices per branch and
//! `((n+1)!)^2 * n_ops^(2n)` combinations per block.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

/// Number of operations in the default operation set.
pub const NUM_OPS: usize = 12;
/// Default number of nodes per block.
pub const DEFAULT_NODES: usize = 5;

/// Candidate operations, in their canonical listing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpCode {
    Identity,
    MaxPool3x3,
    AvgPool3x3,
    SqueezeExcite,
    Lbc3x3,
    Lbc5x5,
    DilConv3x3,
    DilConv5x5,
    SepConv3x3,
    SepConv5x5,
    SepConv7x7,
    Conv1x7_7x1,
}

impl OpCode {
    pub const ALL: [OpCode; NUM_OPS] = [
        OpCode::Identity,
        OpCode::MaxPool3x3,
        OpCode::AvgPool3x3,
        OpCode::SqueezeExcite,
        OpCode::Lbc3x3,
        OpCode::Lbc5x5,
        OpCode::DilConv3x3,
        OpCode::DilConv5x5,
        OpCode::SepConv3x3,
        OpCode::SepConv5x5,
        OpCode::SepConv7x7,
        OpCode::Conv1x7_7x1,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(index: u8) -> Option<OpCode> {
        Self::ALL.get(index as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            OpCode::Identity => "identity",
            OpCode::MaxPool3x3 => "max_pool_3x3",
            OpCode::AvgPool3x3 => "avg_pool_3x3",
            OpCode::SqueezeExcite => "squeeze_excite",
            OpCode::Lbc3x3 => "lbc_3x3",
            OpCode::Lbc5x5 => "lbc_5x5",
            OpCode::DilConv3x3 => "dil_conv_3x3",
            OpCode::DilConv5x5 => "dil_conv_5x5",
            OpCode::SepConv3x3 => "sep_conv_3x3",
            OpCode::SepConv5x5 => "sep_conv_5x5",
            OpCode::SepConv7x7 => "sep_conv_7x7",
            OpCode::Conv1x7_7x1 => "conv_1x7_7x1",
        }
    }
}

impl fmt::Display for OpCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpCode::ALL
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| format!("unknown operation `{s}`"))
    }
}

/// Size of the search space: nodes per block and number of usable operations.
///
/// With `n_ops < 12` only the first `n_ops` operations of [`OpCode::ALL`] are
/// legal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpaceSpec {
    pub nodes: usize,
    pub n_ops: usize,
}

impl Default for SearchSpaceSpec {
    fn default() -> Self {
        Self {
            nodes: DEFAULT_NODES,
            n_ops: NUM_OPS,
        }
    }
}

impl SearchSpaceSpec {
    pub fn new(nodes: usize, n_ops: usize) -> Self {
        assert!(nodes >= 1 && n_ops >= 1, "search space needs n >= 1 and n_ops >= 1");
        Self { nodes, n_ops }
    }

    /// Largest legal input index for the node at 1-based `position`.
    pub fn max_input(&self, position: usize) -> u8 {
        position as u8
    }

    /// Number of legal input choices for the node at 1-based `position`.
    pub fn input_choices(&self, position: usize) -> usize {
        position + 1
    }

    /// Number of legal `NodeGene` states for the node at 1-based `position`.
    pub fn node_domain(&self, position: usize) -> usize {
        let b = self.input_choices(position);
        b * b * self.n_ops * self.n_ops
    }
}

/// One two-branched node: `op1(in1) + op2(in2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeGene {
    pub in1: u8,
    pub op1: u8,
    pub in2: u8,
    pub op2: u8,
}

impl NodeGene {
    pub const fn new(in1: u8, op1: u8, in2: u8, op2: u8) -> Self {
        Self { in1, op1, in2, op2 }
    }

    pub fn genes(&self) -> [u8; 4] {
        [self.in1, self.op1, self.in2, self.op2]
    }

    pub fn from_genes(g: [u8; 4]) -> Self {
        Self::new(g[0], g[1], g[2], g[3])
    }

    /// Dense index of this state inside the node's legal domain.
    pub fn state_index(&self, spec: &SearchSpaceSpec, position: usize) -> usize {
        let b = spec.input_choices(position);
        let o = spec.n_ops;
        ((self.in1 as usize * o + self.op1 as usize) * b + self.in2 as usize) * o + self.op2 as usize
    }

    /// Inverse of [`NodeGene::state_index`].
    pub fn from_state_index(spec: &SearchSpaceSpec, position: usize, mut index: usize) -> Self {
        let b = spec.input_choices(position);
        let o = spec.n_ops;
        let op2 = index % o;
        index /= o;
        let in2 = index % b;
        index /= b;
        let op1 = index % o;
        let in1 = index / o;
        Self::new(in1 as u8, op1 as u8, in2 as u8, op2 as u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Normal,
    Reduction,
}

impl BlockKind {
    pub fn label(self) -> &'static str {
        match self {
            BlockKind::Normal => "normal",
            BlockKind::Reduction => "reduction",
        }
    }

    fn tag(self) -> u8 {
        match self {
            BlockKind::Normal => 0,
            BlockKind::Reduction => 1,
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockGenotype {
    pub kind: BlockKind,
    pub nodes: Vec<NodeGene>,
}

impl BlockGenotype {
    pub fn new(kind: BlockKind, nodes: Vec<NodeGene>) -> Self {
        Self { kind, nodes }
    }

    /// Every node reads `(h[i-2], h[i-1])` through `op`.
    pub fn uniform_op(kind: BlockKind, nodes: usize, op: OpCode) -> Self {
        let op = op.index();
        Self::new(kind, vec![NodeGene::new(0, op, 1, op); nodes])
    }

    pub fn random<R: Rng + ?Sized>(kind: BlockKind, spec: &SearchSpaceSpec, rng: &mut R) -> Self {
        let nodes = (1..=spec.nodes)
            .map(|pos| {
                let b = spec.input_choices(pos) as u8;
                let o = spec.n_ops as u8;
                NodeGene::new(
                    rng.random_range(0..b),
                    rng.random_range(0..o),
                    rng.random_range(0..b),
                    rng.random_range(0..o),
                )
            })
            .collect();
        Self::new(kind, nodes)
    }

    /// Nodes (1-based) never used as an input by a later node of this block.
    pub fn loose_nodes(&self) -> Vec<usize> {
        let mut used = vec![false; self.nodes.len() + 1];
        for node in &self.nodes {
            for input in [node.in1, node.in2] {
                if input >= 2 {
                    if let Some(slot) = used.get_mut(input as usize - 1) {
                        *slot = true;
                    }
                }
            }
        }
        (1..=self.nodes.len()).filter(|&i| !used[i]).collect()
    }

    pub fn concat_width(&self) -> usize {
        self.loose_nodes().len()
    }

    pub fn ops(&self) -> impl Iterator<Item = u8> + '_ {
        self.nodes.iter().flat_map(|n| [n.op1, n.op2])
    }
}

/// The full upper-level decision vector: one Normal and one Reduction block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchitectureGenotype {
    pub normal: BlockGenotype,
    pub reduction: BlockGenotype,
}

impl ArchitectureGenotype {
    pub fn new(normal: Vec<NodeGene>, reduction: Vec<NodeGene>) -> Self {
        Self {
            normal: BlockGenotype::new(BlockKind::Normal, normal),
            reduction: BlockGenotype::new(BlockKind::Reduction, reduction),
        }
    }

    pub fn uniform_op(nodes: usize, op: OpCode) -> Self {
        Self {
            normal: BlockGenotype::uniform_op(BlockKind::Normal, nodes, op),
            reduction: BlockGenotype::uniform_op(BlockKind::Reduction, nodes, op),
        }
    }

    pub fn blocks(&self) -> [&BlockGenotype; 2] {
        [&self.normal, &self.reduction]
    }

    pub fn block_mut(&mut self, kind: BlockKind) -> &mut BlockGenotype {
        match kind {
            BlockKind::Normal => &mut self.normal,
            BlockKind::Reduction => &mut self.reduction,
        }
    }

    /// Flat integer vector, normal block first, four genes per node.
    pub fn to_vec(&self) -> Vec<u8> {
        self.blocks()
            .iter()
            .flat_map(|b| b.nodes.iter().flat_map(|n| n.genes()))
            .collect()
    }

    /// Inverse of [`ArchitectureGenotype::to_vec`] for a given node count.
    pub fn from_slice(genes: &[u8], nodes: usize) -> Option<Self> {
        if genes.len() != 8 * nodes {
            return None;
        }
        let block = |chunk: &[u8]| {
            chunk
                .chunks_exact(4)
                .map(|c| NodeGene::new(c[0], c[1], c[2], c[3]))
                .collect::<Vec<_>>()
        };
        Some(Self::new(block(&genes[..4 * nodes]), block(&genes[4 * nodes..])))
    }

    pub fn digest(&self) -> Digest {
        canonical_hash(self)
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

/// Which gene of a node a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneField {
    In1,
    Op1,
    In2,
    Op2,
}

impl fmt::Display for GeneField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneField::In1 => "in1",
            GeneField::Op1 => "op1",
            GeneField::In2 => "in2",
            GeneField::Op2 => "op2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NodeCount {
        block: BlockKind,
        expected: usize,
        found: usize,
    },
    OutOfBounds {
        block: BlockKind,
        /// 1-based node position.
        node: usize,
        field: GeneField,
        value: u8,
        max: u8,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NodeCount {
                block,
                expected,
                found,
            } => write!(f, "{block} block has {found} nodes, expected {expected}"),
            Violation::OutOfBounds {
                block,
                node,
                field,
                value,
                max,
            } => write!(f, "{block} node {node}: {field} = {value} exceeds {max}"),
        }
    }
}

/// Checks every positional bound; returns all violations found.
pub fn validate(g: &ArchitectureGenotype, spec: &SearchSpaceSpec) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let max_op = (spec.n_ops - 1) as u8;
    for block in g.blocks() {
        if block.nodes.len() != spec.nodes {
            violations.push(Violation::NodeCount {
                block: block.kind,
                expected: spec.nodes,
                found: block.nodes.len(),
            });
        }
        for (i, node) in block.nodes.iter().enumerate() {
            let pos = i + 1;
            let max_in = spec.max_input(pos);
            let checks = [
                (GeneField::In1, node.in1, max_in),
                (GeneField::Op1, node.op1, max_op),
                (GeneField::In2, node.in2, max_in),
                (GeneField::Op2, node.op2, max_op),
            ];
            for (field, value, max) in checks {
                if value > max {
                    violations.push(Violation::OutOfBounds {
                        block: block.kind,
                        node: pos,
                        field,
                        value,
                        max,
                    });
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

pub fn is_valid(g: &ArchitectureGenotype, spec: &SearchSpaceSpec) -> bool {
    validate(g, spec).is_ok()
}

/// Samples every gene uniformly over its legal range.
pub fn random_genotype<R: Rng + ?Sized>(spec: &SearchSpaceSpec, rng: &mut R) -> ArchitectureGenotype {
    let normal = BlockGenotype::random(BlockKind::Normal, spec, rng);
    let reduction = BlockGenotype::random(BlockKind::Reduction, spec, rng);
    ArchitectureGenotype { normal, reduction }
}

/// Combinations for one block: `((n+1)!)^2 * n_ops^(2n)`.
pub fn block_space_size(spec: &SearchSpaceSpec) -> BigUint {
    let factorial: BigUint = (1..=spec.nodes + 1).map(BigUint::from).product();
    let ops = BigUint::from(spec.n_ops).pow(2 * spec.nodes as u32);
    &factorial * &factorial * ops
}

/// Size of the two-block search space.
pub fn search_space_size(spec: &SearchSpaceSpec) -> BigUint {
    let block = block_space_size(spec);
    &block * &block
}

/// 128-bit canonical digest of a genotype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 16]);

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl FromStr for Digest {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 32 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(format!("invalid digest `{s}`"));
        }
        let mut out = [0u8; 16];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|e| e.to_string())?;
        }
        Ok(Digest(out))
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// SHA-256 over a fixed binary layout of the genes, truncated to 128 bits.
pub fn canonical_hash(g: &ArchitectureGenotype) -> Digest {
    let mut hasher = Sha256::new();
    hasher.update(b"evonas-genotype-v1");
    for block in g.blocks() {
        hasher.update([block.kind.tag()]);
        hasher.update((block.nodes.len() as u32).to_le_bytes());
        for node in &block.nodes {
            hasher.update(node.genes());
        }
    }
    let full = hasher.finalize();
    let mut out = [0u8; 16];
    out.copy_from_slice(&full[..16]);
    Digest(out)
}

/// Source of one branch feeding a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Vertex {
    /// `h[i-2]`
    PrevPrev,
    /// `h[i-1]`
    Prev,
    /// Output of the node at this 1-based position.
    Node(usize),
    /// Concatenation of loose node outputs.
    Output,
}

impl Vertex {
    fn from_input(input: u8) -> Vertex {
        match input {
            0 => Vertex::PrevPrev,
            1 => Vertex::Prev,
            k => Vertex::Node(k as usize - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DagEdge {
    pub from: Vertex,
    pub to: Vertex,
    /// `None` for the unlabeled edges into the concat output.
    pub op: Option<u8>,
}

/// Graph view of a block: two inputs, `n` addition nodes, one concat output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDag {
    pub kind: BlockKind,
    pub nodes: usize,
    pub edges: Vec<DagEdge>,
    pub loose_nodes: Vec<usize>,
}

impl BlockDag {
    pub fn vertices(&self) -> Vec<Vertex> {
        let mut v = vec![Vertex::PrevPrev, Vertex::Prev];
        v.extend((1..=self.nodes).map(Vertex::Node));
        v.push(Vertex::Output);
        v
    }

    pub fn in_degree(&self, v: Vertex) -> usize {
        self.edges.iter().filter(|e| e.to == v).count()
    }

    pub fn concat_width(&self) -> usize {
        self.loose_nodes.len()
    }

    /// Kahn's algorithm; `None` if the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<Vertex>> {
        let vertices = self.vertices();
        let pos = |v: Vertex| vertices.iter().position(|&w| w == v);
        let mut indeg = vec![0usize; vertices.len()];
        for e in &self.edges {
            indeg[pos(e.to)?] += 1;
        }
        let mut ready: Vec<usize> = (0..vertices.len()).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(vertices.len());
        while let Some(i) = ready.pop() {
            order.push(vertices[i]);
            for e in self.edges.iter().filter(|e| e.from == vertices[i]) {
                let j = pos(e.to)?;
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.push(j);
                }
            }
        }
        (order.len() == vertices.len()).then_some(order)
    }
}

pub fn decode_to_dag(block: &BlockGenotype) -> BlockDag {
    let mut edges = Vec::with_capacity(2 * block.nodes.len() + block.nodes.len());
    for (i, node) in block.nodes.iter().enumerate() {
        let to = Vertex::Node(i + 1);
        edges.push(DagEdge {
            from: Vertex::from_input(node.in1),
            to,
            op: Some(node.op1),
        });
        edges.push(DagEdge {
            from: Vertex::from_input(node.in2),
            to,
            op: Some(node.op2),
        });
    }
    let loose_nodes = block.loose_nodes();
    for &n in &loose_nodes {
        edges.push(DagEdge {
            from: Vertex::Node(n),
            to: Vertex::Output,
            op: None,
        });
    }
    BlockDag {
        kind: block.kind,
        nodes: block.nodes.len(),
        edges,
        loose_nodes,
    }
}

// Text format:
//
//   normal: (0,3,1,5) (1,0,2,8) ...
//   reduction: (0,9,0,2) ...

impl fmt::Display for ArchitectureGenotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, block) in self.blocks().into_iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{}:", block.kind)?;
            for n in &block.nodes {
                write!(f, " ({},{},{},{})", n.in1, n.op1, n.in2, n.op2)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            column: self.pos + 1,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.text[self.pos..].starts_with([' ', '\t']) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> Result<(), ParseError> {
        self.skip_ws();
        if self.text[self.pos..].starts_with(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn number(&mut self) -> Result<u8, ParseError> {
        self.skip_ws();
        let digits = self.text[self.pos..]
            .bytes()
            .take_while(u8::is_ascii_digit)
            .count();
        if digits == 0 {
            return Err(self.err("expected an integer"));
        }
        let value = self.text[self.pos..self.pos + digits]
            .parse::<u8>()
            .map_err(|_| self.err("integer out of range"))?;
        self.pos += digits;
        Ok(value)
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.text.len()
    }
}

fn parse_block_line(text: &str, line: usize, kind: BlockKind) -> Result<Vec<NodeGene>, ParseError> {
    let mut cur = Cursor { text, pos: 0, line };
    cur.skip_ws();
    let label = kind.label();
    if !cur.text[cur.pos..].starts_with(label) {
        return Err(cur.err(format!("expected `{label}:`")));
    }
    cur.pos += label.len();
    cur.eat(':')?;
    let mut nodes = Vec::new();
    while !cur.at_end() {
        cur.eat('(')?;
        let in1 = cur.number()?;
        cur.eat(',')?;
        let op1 = cur.number()?;
        cur.eat(',')?;
        let in2 = cur.number()?;
        cur.eat(',')?;
        let op2 = cur.number()?;
        cur.eat(')')?;
        nodes.push(NodeGene::new(in1, op1, in2, op2));
    }
    if nodes.is_empty() {
        return Err(cur.err("block has no nodes"));
    }
    Ok(nodes)
}

/// Parses the two-line text format. Only syntax is checked here; positional
/// bounds are the job of [`validate`].
pub fn parse_genotype(text: &str) -> Result<ArchitectureGenotype, ParseError> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.is_empty() {
        return Err(ParseError {
            line: 1,
            column: 1,
            message: "empty genotype text".into(),
        });
    }
    if lines.len() != 2 {
        return Err(ParseError {
            line: lines.len().min(3),
            column: 1,
            message: format!("expected 2 block lines, found {}", lines.len()),
        });
    }
    let normal = parse_block_line(lines[0], 1, BlockKind::Normal)?;
    let reduction = parse_block_line(lines[1], 2, BlockKind::Reduction)?;
    if normal.len() != reduction.len() {
        return Err(ParseError {
            line: 2,
            column: 1,
            message: format!(
                "block sizes differ: normal has {}, reduction has {}",
                normal.len(),
                reduction.len()
            ),
        });
    }
    Ok(ArchitectureGenotype::new(normal, reduction))
}

impl FromStr for ArchitectureGenotype {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_genotype(s)
    }
}
