//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use evonas_core::complexity::{default_reference_shape, network_cost, op_complexity_order, MacroConfig};
use evonas_core::eda::{fit_bn, next_rho, update_rho, RhoState};
use evonas_core::genotype::{
    block_space_size, is_valid, random_genotype, search_space_size, ArchitectureGenotype, OpCode, SearchSpaceSpec,
};
use evonas_core::moea::{hypervolume_2d, nondominated_sort, normalized_hv, select_indices, ObjectiveVector, HV_REFERENCE};
use evonas_core::rundir::{read_nhv, write_run_dir, ARCHIVE_FILE};
use evonas_core::search::{run_search, SearchConfig, SearchMode, SearchState};
use evonas_core::variation::{crossover, pm_mutate, VariationConfig};
use evonas_core::SyntheticEvaluator;
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn objs(points: &[(f64, f64)]) -> Vec<ObjectiveVector> {
    points.iter().map(|&(e, f)| ObjectiveVector::new(e, f)).collect()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|_| (rng.random::<f64>() * 100.0, rng.random::<f64>() * 1000.0)).collect()
}

fn synthetic_run(cfg: SearchConfig) -> SearchState {
    let mut ev = SyntheticEvaluator::new(cfg.surrogate.clone(), cfg.seed);
    run_search(cfg, &mut ev).expect("synthetic run")
}

fn cardinality() -> String {
    let start = Instant::now();
    let per_block = BigUint::from(518_400u64) * BigUint::from(12u32).pow(10);
    let total = search_space_size(&SearchSpaceSpec::default());
    assert_eq!(total, &per_block * &per_block);
    let text = total.to_string();
    assert_eq!(text.len(), 34);
    for nodes in 1..=2 {
        for n_ops in 1..=3 {
            let spec = SearchSpaceSpec::new(nodes, n_ops);
            assert_eq!(block_space_size(&spec), BigUint::from(enumerate_valid_blocks(&spec)));
        }
    }
    for n_ops in 1..=3 {
        let spec = SearchSpaceSpec::new(1, n_ops);
        assert_eq!(search_space_size(&spec), BigUint::from(enumerate_valid_architectures(&spec)));
    }
    let took = start.elapsed();
    assert!(took < Duration::from_secs(1), "took {took:?}");
    format!("|B| = {}.{}e33, enumeration agrees, {:?}", &text[..1], &text[1..3], took)
}

fn oracle_equivalence() -> String {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let points = random_points(&mut rng, 1000);
    assert_eq!(nondominated_sort(&objs(&points)), pairwise_fronts(&points));
    for _ in 0..50 {
        let n = rng.random_range(20..120);
        let k = rng.random_range(1..n);
        let pool = random_points(&mut rng, n);
        let mut got = select_indices(&objs(&pool), k);
        let mut want = naive_selection(&pool, k);
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want);
    }
    let mut worst = 0.0f64;
    for trial in 0..3u64 {
        let pts = random_points(&mut rng, 5 + 10 * trial as usize);
        let exact = hypervolume_2d(&objs(&pts), HV_REFERENCE);
        let (est, sigma) = monte_carlo_hv(&pts, (100.0, 1000.0), 1_000_000, trial);
        let z = (exact - est).abs() / sigma;
        assert!(z <= 3.0, "HV {exact} vs Monte-Carlo {est}, {z:.2} sigma");
        worst = worst.max(z);
    }
    let two = objs(&[(20.0, 800.0), (60.0, 200.0)]);
    assert_eq!(hypervolume_2d(&two, HV_REFERENCE), 40_000.0);
    assert_eq!(normalized_hv(&two), 0.4);
    let took = start.elapsed();
    assert!(took < Duration::from_secs(30), "took {took:?}");
    format!("sort, 50 selections, HV within {worst:.2} sigma, two-point 40000/0.4, {took:?}")
}

fn operator_closure() -> String {
    let spec = SearchSpaceSpec::default();
    let ordered = VariationConfig::new(&op_complexity_order(&spec, default_reference_shape(&MacroConfig::default())));
    let configs = [ordered, VariationConfig::plain(&spec)];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let parents: Vec<ArchitectureGenotype> = (0..64).map(|_| random_genotype(&spec, &mut rng)).collect();
    let n = 100_000;
    let mut violations = 0;
    for i in 0..n {
        let cfg = &configs[i % 2];
        let a = &parents[rng.random_range(0..parents.len())];
        let b = &parents[rng.random_range(0..parents.len())];
        let child = pm_mutate(&crossover(a, b, cfg, &mut rng), cfg, &spec, &mut rng);
        if !is_valid(&child, &spec) {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
    format!("{n} applications, 0 violations")
}

fn rho_schedule() -> String {
    let s = RhoState::default();
    let sym = update_rho(s, 4, 10, 2, 5).rho;
    let up = update_rho(s, 10, 10, 0, 10).rho;
    let down = update_rho(s, 0, 10, 10, 10).rho;
    assert!((sym - 0.5).abs() < 1e-6);
    assert!((up - 0.7311).abs() < 1e-4 && (up - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-6);
    assert!((down - 0.2689).abs() < 1e-4 && (down - 1.0 / (1.0 + 1.0f64.exp())).abs() < 1e-6);
    for tau in [1, 5, 20] {
        for g in 0..tau {
            assert_eq!(next_rho(g, Some(tau), s, [(3, 5), (1, 5)]).rho, 1.0);
        }
        assert_eq!(next_rho(tau, Some(tau), s, [(3, 5), (1, 5)]).rho, 0.75);
    }
    let st = synthetic_run(SearchConfig {
        pop_size: 20,
        generations: 10,
        tau: Some(4),
        seed: 1,
        ..SearchConfig::default()
    });
    assert!(st.stats[..=4].iter().all(|g| g.rho == 1.0 && g.produced.bn_sample == 0));
    assert_eq!(st.stats[5].rho, 0.75);
    format!("0.5 / {up:.6} / {down:.6}, rho 1 before tau and 0.75 at tau")
}

fn bn_fidelity() -> String {
    let spec = SearchSpaceSpec::default();
    check_against_counts(&hand_built(), &spec, 0.5);
    check_against_counts(&hand_built(), &spec, 0.01);
    let bn = fit_bn(&hand_built(), &spec, 1e-6).unwrap();
    let res = ancestral_l1(&bn, 100_000, 1000, 5);
    assert!(res.len() >= 20, "only {} tables had enough draws", res.len());
    let worst = res.iter().map(|r| r.1).fold(0.0, f64::max);
    assert!(worst < 0.02, "worst ancestral L1 {worst}");
    let tables = res.len();

    let small = SearchSpaceSpec::new(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let set: Vec<_> = (0..12).map(|_| random_genotype(&small, &mut rng)).collect();
    let bn = fit_bn(&set, &small, 0.5).unwrap();
    let mut worst_small = 0.0f64;
    let mut small_tables = 0;
    for chain in [&bn.normal, &bn.reduction] {
        for t in chain.tables() {
            let draws: Vec<_> = (0..100_000).map(|_| t.sample(&small, &mut rng)).collect();
            worst_small = worst_small.max(l1(t, &small, &draws));
            small_tables += 1;
        }
    }
    assert!(worst_small < 0.02, "worst direct-draw L1 {worst_small} in the small space");
    format!(
        "counting oracle exact; 1e5 ancestral samples: worst L1 {worst:.4} over {tables} tables; \
         1e5 draws per smoothed table: worst L1 {worst_small:.4} over {small_tables} tables"
    )
}

fn flops_model() -> String {
    let spec = SearchSpaceSpec::default();
    let m = MacroConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let g = random_genotype(&spec, &mut rng);
        let got = network_cost(&g, &m).unwrap();
        assert_eq!((got.flops, got.params), oracle_network_cost(&g, &m), "{g}");
    }
    let id = ArchitectureGenotype::uniform_op(5, OpCode::Identity);
    let closed = identity_closed_form(&m, 5);
    assert_eq!(network_cost(&id, &m).unwrap().flops, closed);
    format!("100 genotypes match the layer walk; identity network {closed} MACs")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn search_dynamics() -> String {
    let mut medians = Vec::new();
    let mut slowest = Duration::ZERO;
    for mode in SearchMode::ALL {
        let mut finals = Vec::new();
        for seed in 0..5 {
            let start = Instant::now();
            let s = synthetic_run(SearchConfig {
                pop_size: 40,
                generations: 30,
                mode,
                seed,
                ..SearchConfig::default()
            });
            let took = start.elapsed();
            assert!(took < Duration::from_secs(60), "{} seed {seed} took {took:?}", mode.label());
            slowest = slowest.max(took);
            finals.push(*s.archive.nhv.last().unwrap());
        }
        medians.push(median(finals));
    }
    let [ours, vanilla, random] = [medians[0], medians[1], medians[2]];
    let summary = format!("median NHV nsganetv1 {ours:.4}, vanilla_nsga2 {vanilla:.4}, random_sampling {random:.4}");
    assert!(ours >= vanilla, "{summary}");
    assert!(vanilla >= random, "{summary}");
    assert!(ours - random >= 0.02, "{summary}");
    format!("{summary}; slowest run {slowest:?}")
}

fn determinism() -> String {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SearchConfig {
        pop_size: 40,
        generations: 30,
        seed: 17,
        ..SearchConfig::default()
    };
    write_run_dir(&dir.path().join("a"), &synthetic_run(cfg.clone())).unwrap();
    write_run_dir(&dir.path().join("b"), &synthetic_run(cfg.clone())).unwrap();
    let a = std::fs::read(dir.path().join("a").join(ARCHIVE_FILE)).unwrap();
    let b = std::fs::read(dir.path().join("b").join(ARCHIVE_FILE)).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "archive.jsonl differs");

    let untimed = |mut s: SearchState| {
        s.stats.iter_mut().for_each(|g| g.wall_ms = 0);
        s
    };
    let full = untimed(synthetic_run(cfg.clone()));
    let ckpt = dir.path().join("checkpoint.json");
    for stop in [0, 19, 20, 25] {
        let mut ev = SyntheticEvaluator::new(cfg.surrogate.clone(), cfg.seed);
        let mut state = SearchState::new(cfg.clone()).unwrap();
        state.step(&mut ev).unwrap();
        while state.generation < stop {
            state.step(&mut ev).unwrap();
        }
        state.save_checkpoint(&ckpt).unwrap();
        let mut resumed = SearchState::load_checkpoint(&ckpt).unwrap();
        let mut ev = SyntheticEvaluator::new(cfg.surrogate.clone(), cfg.seed);
        resumed.run(&mut ev, |_| Ok(())).unwrap();
        assert!(untimed(resumed) == full, "resume after generation {stop} diverged");
    }
    format!("archive.jsonl identical ({} bytes); resume after generations 0/19/20/25 identical", a.len())
}

fn ablation_shape() -> String {
    let dir = tempfile::tempdir().unwrap();
    let g = 30usize;
    let taus = [g.div_ceil(3), g.div_ceil(2), (2 * g).div_ceil(3), (3 * g).div_ceil(4)];
    assert_eq!(taus, [10, 15, 20, 23]);
    let mut runs: Vec<(String, SearchConfig)> = taus
        .iter()
        .map(|&t| {
            (
                format!("tau{t}"),
                SearchConfig {
                    tau: Some(t),
                    ..SearchConfig::default()
                },
            )
        })
        .collect();
    runs.push((
        "no_exploit".into(),
        SearchConfig {
            exploit: false,
            ..SearchConfig::default()
        },
    ));
    let mut finals = Vec::new();
    for (name, base) in runs {
        let cfg = SearchConfig {
            pop_size: 40,
            generations: g,
            seed: 0,
            ..base
        };
        let s = synthetic_run(cfg);
        let out = dir.path().join(&name);
        write_run_dir(&out, &s).unwrap();
        let series = read_nhv(&out).unwrap();
        assert_eq!(series.len(), g + 1, "{name}");
        assert!(series.windows(2).all(|w| w[1].nhv >= w[0].nhv), "{name}");
        finals.push(format!("{name} {:.4}", series[g].nhv));
    }
    format!("NHV series of {} points each: {}", g + 1, finals.join(", "))
}

fn main() {
    let criteria: [(&str, fn() -> String); 9] = [
        ("search-space cardinality", cardinality),
        ("oracle equivalence", oracle_equivalence),
        ("operator closure", operator_closure),
        ("rho update and schedule", rho_schedule),
        ("BN fidelity", bn_fidelity),
        ("FLOPs model", flops_model),
        ("search dynamics", search_dynamics),
        ("determinism", determinism),
        ("ablation shape", ablation_shape),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL  {name}: {}", msg.lines().next().unwrap_or(""));
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
