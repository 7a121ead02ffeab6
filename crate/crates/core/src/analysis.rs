//! Frequency analytics over an archive: how often each op is chosen in
//! different subsets, and how block output width relates to error.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::genotype::{OpCode, NUM_OPS};
use crate::moea::{nondominated_sort, Individual};

/// Fraction of the archive, by ascending error, that forms the top group.
pub const TOP_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct OpCounts {
    pub label: &'static str,
    /// Genotypes in this group.
    pub members: usize,
    /// Indexed by op code; sums to `4 * nodes * members`.
    pub counts: [usize; NUM_OPS],
}

impl OpCounts {
    fn tally<'a>(label: &'static str, group: impl Iterator<Item = &'a Individual>) -> Self {
        let mut counts = [0; NUM_OPS];
        let mut members = 0;
        for ind in group {
            members += 1;
            for block in ind.genotype.blocks() {
                for op in block.ops() {
                    counts[op as usize] += 1;
                }
            }
        }
        Self { label, members, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Op counts for all members, the non-dominated set, and the lowest-error
/// fifth (rounded up).
pub fn op_frequencies(members: &[Individual]) -> [OpCounts; 3] {
    let front: Vec<usize> = nondominated_sort(members).into_iter().next().unwrap_or_default();
    let mut by_error: Vec<usize> = (0..members.len()).collect();
    by_error.sort_by(|&a, &b| {
        members[a]
            .objectives
            .error
            .total_cmp(&members[b].objectives.error)
            .then(a.cmp(&b))
    });
    let top = (members.len() as f64 * TOP_FRACTION).ceil() as usize;
    [
        OpCounts::tally("all", members.iter()),
        OpCounts::tally("non_dominated", front.iter().map(|&i| &members[i])),
        OpCounts::tally("top_20pct", by_error[..top].iter().map(|&i| &members[i])),
    ]
}

/// Error statistics for genotypes whose normal block concatenates `width`
/// node outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthSummary {
    pub width: usize,
    pub count: usize,
    pub mean_error: f64,
    pub min_error: f64,
}

pub fn concat_width_summary(members: &[Individual]) -> Vec<WidthSummary> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for m in members {
        groups
            .entry(m.genotype.normal.concat_width())
            .or_default()
            .push(m.objectives.error);
    }
    groups
        .into_iter()
        .map(|(width, errs)| WidthSummary {
            width,
            count: errs.len(),
            mean_error: errs.iter().sum::<f64>() / errs.len() as f64,
            min_error: errs.iter().copied().fold(f64::INFINITY, f64::min),
        })
        .collect()
}

/// Plain-text report of both tables.
pub fn format_report(members: &[Individual]) -> String {
    let groups = op_frequencies(members);
    let mut out = String::new();
    let _ = write!(out, "{:<16}", "op");
    for g in &groups {
        let _ = write!(out, " {:>14}", format!("{} ({})", g.label, g.members));
    }
    out.push('\n');
    for op in OpCode::ALL {
        let _ = write!(out, "{:<16}", op.name());
        for g in &groups {
            let c = g.counts[op.index() as usize];
            let frac = if g.total() == 0 { 0.0 } else { c as f64 / g.total() as f64 };
            let _ = write!(out, " {:>7} {:>5.1}%", c, 100.0 * frac);
        }
        out.push('\n');
    }
    out.push('\n');
    let _ = writeln!(out, "{:<8} {:>6} {:>11} {:>10}", "width", "count", "mean_error", "min_error");
    for w in concat_width_summary(members) {
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>11.3} {:>10.3}",
            w.width, w.count, w.mean_error, w.min_error
        );
    }
    out
}
