//! Run directory artifacts: `config.toml`, `archive.jsonl`, `front.csv`,
//! `nhv.csv`, `stats.csv` and `checkpoint.json`.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::genotype::{parse_genotype, Digest};
use crate::moea::{crowding_distance, nondominated_sort, Individual, ObjectiveVector, Origin};
use crate::search::SearchState;

pub const CONFIG_FILE: &str = "config.toml";
pub const ARCHIVE_FILE: &str = "archive.jsonl";
pub const FRONT_FILE: &str = "front.csv";
pub const NHV_FILE: &str = "nhv.csv";
pub const STATS_FILE: &str = "stats.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, thiserror::Error)]
pub enum RunDirError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{0}: no records")]
    Empty(PathBuf),
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunDirError + '_ {
    move |source| RunDirError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> RunDirError + '_ {
    move |source| RunDirError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// One line of `archive.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveRecord {
    pub digest: Digest,
    pub genotype: String,
    pub error: f64,
    pub flops: f64,
    #[serde(default)]
    pub params: u64,
    pub origin: Origin,
    pub generation: usize,
    #[serde(default)]
    pub failed: bool,
}

impl From<&Individual> for ArchiveRecord {
    fn from(ind: &Individual) -> Self {
        Self {
            digest: ind.digest,
            genotype: ind.genotype.to_text(),
            error: ind.objectives.error,
            flops: ind.objectives.flops,
            params: ind.params,
            origin: ind.origin,
            generation: ind.generation_born,
            failed: ind.failed,
        }
    }
}

/// One row of `front.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontRow {
    pub digest: Digest,
    pub error_pct: f64,
    pub flops_m: f64,
    pub rank: usize,
    pub crowding: f64,
    pub origin: Origin,
    pub generation: usize,
}

/// One row of `nhv.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NhvRow {
    pub generation: usize,
    pub nhv: f64,
    pub population_nhv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StatsRow {
    generation: usize,
    nhv: f64,
    population_nhv: f64,
    front_size: usize,
    rho: f64,
    produced_init: usize,
    produced_genetic: usize,
    produced_bn_sample: usize,
    produced_random_sample: usize,
    survived_genetic: usize,
    survived_bn_sample: usize,
    survived_random_sample: usize,
    evaluations: usize,
    failed: usize,
    dedup_hits: usize,
    wall_ms: u64,
}

/// Non-dominated members of `members` with their crowding distance, sorted
/// by FLOPs then error.
pub fn front_rows(members: &[Individual]) -> Vec<FrontRow> {
    let Some(front) = nondominated_sort(members).into_iter().next() else {
        return Vec::new();
    };
    let dist = crowding_distance(members, &front);
    let mut rows: Vec<FrontRow> = front
        .iter()
        .zip(dist)
        .map(|(&i, d)| {
            let m = &members[i];
            FrontRow {
                digest: m.digest,
                error_pct: m.objectives.error,
                flops_m: m.objectives.flops,
                rank: 0,
                crowding: d,
                origin: m.origin,
                generation: m.generation_born,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.flops_m
            .total_cmp(&b.flops_m)
            .then(a.error_pct.total_cmp(&b.error_pct))
            .then(a.digest.0.cmp(&b.digest.0))
    });
    rows
}

pub fn write_front_csv<W: std::io::Write>(rows: &[FrontRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every artifact except the checkpoint.
pub fn write_run_dir(dir: &Path, state: &SearchState) -> Result<(), RunDirError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let path = dir.join(CONFIG_FILE);
    let text = state.config.to_toml().map_err(|e| RunDirError::Parse {
        path: path.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    fs::write(&path, text).map_err(io_err(&path))?;

    let path = dir.join(ARCHIVE_FILE);
    let mut text = String::new();
    for m in &state.archive.members {
        text.push_str(&serde_json::to_string(&ArchiveRecord::from(m)).expect("records serialize"));
        text.push('\n');
    }
    fs::write(&path, text).map_err(io_err(&path))?;

    let path = dir.join(FRONT_FILE);
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_front_csv(&front_rows(&state.archive.members), file).map_err(csv_err(&path))?;

    let path = dir.join(NHV_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for (g, (&nhv, &pop)) in state
        .archive
        .nhv
        .iter()
        .zip(&state.archive.population_nhv)
        .enumerate()
    {
        w.serialize(NhvRow {
            generation: g,
            nhv,
            population_nhv: pop,
        })
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join(STATS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for s in &state.stats {
        w.serialize(StatsRow {
            generation: s.generation,
            nhv: s.nhv,
            population_nhv: s.population_nhv,
            front_size: s.front_size,
            rho: s.rho,
            produced_init: s.produced.init,
            produced_genetic: s.produced.genetic,
            produced_bn_sample: s.produced.bn_sample,
            produced_random_sample: s.produced.random_sample,
            survived_genetic: s.survived.genetic,
            survived_bn_sample: s.survived.bn_sample,
            survived_random_sample: s.survived.random_sample,
            evaluations: s.evaluations,
            failed: s.failed,
            dedup_hits: s.dedup_hits,
            wall_ms: s.wall_ms,
        })
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(())
}

/// Reads `archive.jsonl` back into individuals. Blank lines are skipped.
pub fn read_archive(path: &Path) -> Result<Vec<Individual>, RunDirError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| RunDirError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let rec: ArchiveRecord = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        let genotype = parse_genotype(&rec.genotype).map_err(|e| parse(e.to_string()))?;
        if genotype.digest() != rec.digest {
            return Err(parse(format!("digest {} does not match the genotype", rec.digest)));
        }
        let mut ind = Individual::new(genotype, ObjectiveVector::new(rec.error, rec.flops), rec.origin, rec.generation);
        ind.params = rec.params;
        ind.failed = rec.failed;
        out.push(ind);
    }
    Ok(out)
}

/// Like [`read_archive`] on `dir/archive.jsonl`, but an empty archive is an
/// error.
pub fn read_run_archive(dir: &Path) -> Result<Vec<Individual>, RunDirError> {
    let path = dir.join(ARCHIVE_FILE);
    let members = read_archive(&path)?;
    if members.is_empty() {
        return Err(RunDirError::Empty(path));
    }
    Ok(members)
}

pub fn read_nhv(dir: &Path) -> Result<Vec<NhvRow>, RunDirError> {
    let path = dir.join(NHV_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
    r.deserialize().collect::<Result<Vec<NhvRow>, _>>().map_err(csv_err(&path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{SurrogateSpec, SyntheticEvaluator};
    use crate::search::{run_search, SearchConfig};

    #[test]
    fn run_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SearchConfig {
            pop_size: 8,
            generations: 3,
            ..SearchConfig::default()
        };
        let st = run_search(cfg, &mut SyntheticEvaluator::new(SurrogateSpec::default(), 0)).unwrap();
        write_run_dir(dir.path(), &st).unwrap();
        let back = read_run_archive(dir.path()).unwrap();
        assert_eq!(back.len(), st.archive.len());
        for (a, b) in back.iter().zip(&st.archive.members) {
            assert_eq!(a.digest, b.digest);
            assert_eq!(a.objectives, b.objectives);
            assert_eq!(a.origin, b.origin);
        }
        let nhv = read_nhv(dir.path()).unwrap();
        assert_eq!(nhv.len(), 4);
        assert_eq!(nhv[3].nhv, st.archive.nhv[3]);
        let front = fs::read_to_string(dir.path().join(FRONT_FILE)).unwrap();
        assert!(front.starts_with("digest,error_pct,flops_m,rank,crowding,origin,generation\n"));
        let stats = fs::read_to_string(dir.path().join(STATS_FILE)).unwrap();
        assert_eq!(stats.lines().count(), 5);
    }

    #[test]
    fn digest_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(ARCHIVE_FILE);
        let g = crate::genotype::ArchitectureGenotype::uniform_op(5, crate::genotype::OpCode::Identity);
        let mut rec = ArchiveRecord::from(&Individual::new(g, ObjectiveVector::new(1.0, 2.0), Origin::Init, 0));
        rec.digest = Digest([0; 16]);
        fs::write(&path, serde_json::to_string(&rec).unwrap()).unwrap();
        assert!(matches!(read_archive(&path), Err(RunDirError::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_archive_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(ARCHIVE_FILE), "").unwrap();
        assert!(matches!(read_run_archive(dir.path()), Err(RunDirError::Empty(_))));
    }
}
