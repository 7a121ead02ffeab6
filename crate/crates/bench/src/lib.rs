//! Seeded inputs shared by the benchmarks.

use evonas_core::genotype::{random_genotype, ArchitectureGenotype, SearchSpaceSpec};
use evonas_core::moea::{Individual, ObjectiveVector, Origin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn genotypes(n: usize, seed: u64) -> Vec<ArchitectureGenotype> {
    let spec = SearchSpaceSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_genotype(&spec, &mut rng)).collect()
}

pub fn objectives(n: usize, seed: u64) -> Vec<ObjectiveVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| ObjectiveVector::new(rng.random::<f64>() * 100.0, rng.random::<f64>() * 1000.0))
        .collect()
}

pub fn population(n: usize, seed: u64) -> Vec<Individual> {
    genotypes(n, seed)
        .into_iter()
        .zip(objectives(n, seed ^ 0x5eed))
        .map(|(g, o)| Individual::new(g, o, Origin::Init, 0))
        .collect()
}
