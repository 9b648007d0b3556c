// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskroute::bench::bootstrap::{bootstrap_ci, mean};
use taskroute::bench::costs::{asymptotic_costs, CostModelInput};
use taskroute::bench::{
    evaluate_selectors, generate_world, oracle_downstream_accuracy, oracle_table, BenchOptions, WorldConfig, WorldMode,
};
use taskroute::dataset_io::{EmbeddingMatrix, TaskDataset};
use taskroute::knn::{knn_select, loocv_1nn_accuracy};
use taskroute::selectors::Method;

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn noiseless(experts: usize, tasks: usize, seed: u64) -> WorldConfig {
    WorldConfig {
        seed,
        experts,
        d_raw: 8 * experts,
        d_embed: 6,
        tasks,
        noise: 0.0,
        n_train: 60,
        n_test: 30,
        upstream_per_leaf: 10,
        ..WorldConfig::default()
    }
}

#[test]
fn noiseless_true_expert_separates_the_classes() {
    let w = generate_world(&noiseless(4, 6, 1)).unwrap();
    for task in &w.tasks {
        let expert = &w.experts[task.true_expert as usize];
        let emb = expert.extract_batch(&task.train_inputs).unwrap();
        let acc = loocv_1nn_accuracy(&emb.to_f32(), emb.cols(), task.train.class_labels()).unwrap();
        assert_eq!(acc.accuracy, 1.0, "task {}", task.index);
        let oracle = oracle_downstream_accuracy(task, expert, &w.config.oracle_train).unwrap();
        assert_eq!(oracle, 1.0, "task {}", task.index);
    }
}

#[test]
fn same_seed_gives_identical_worlds() {
    for mode in [WorldMode::Semantic, WorldMode::RandomSlices] {
        let cfg = WorldConfig {
            mode,
            ..noiseless(4, 3, 9)
        };
        let a = generate_world(&cfg).unwrap().to_bytes();
        assert_eq!(a, generate_world(&cfg).unwrap().to_bytes());
        let other = WorldConfig { seed: 10, ..cfg };
        assert_ne!(a, generate_world(&other).unwrap().to_bytes());
    }
}

#[test]
fn oracle_best_is_usually_the_true_expert() {
    let cfg = WorldConfig {
        seed: 3,
        tasks: 20,
        ..WorldConfig::default()
    };
    assert_eq!((cfg.experts, cfg.d_raw, cfg.d_embed), (16, 64, 8));
    let w = generate_world(&cfg).unwrap();
    let table = oracle_table(&w).unwrap();
    let mut hits = 0;
    for (task, row) in w.tasks.iter().zip(&table) {
        let best = (0..row.len()).fold(0, |b, e| if row[e] > row[b] { e } else { b });
        hits += usize::from(best == task.true_expert as usize);
    }
    assert!(hits >= 18, "oracle best equals the true expert on {hits}/20 tasks");
}

#[test]
fn orthogonal_expert_is_at_chance() {
    let seeds = 20;
    let mut accs = Vec::new();
    let mut n_test = 0;
    for seed in 0..seeds {
        let cfg = WorldConfig {
            classes: 2,
            ..noiseless(4, 1, 100 + seed)
        };
        n_test = cfg.n_test;
        let w = generate_world(&cfg).unwrap();
        let task = &w.tasks[0];
        // Any other semantic expert reads only clutter for this task.
        let other = (task.true_expert as usize + 1) % 4;
        accs.push(oracle_downstream_accuracy(task, &w.experts[other], &w.config.oracle_train).unwrap());
    }
    let se = (0.25 / (n_test as f64 * seeds as f64)).sqrt();
    let m = mean(&accs);
    assert!((m - 0.5).abs() < 3.0 * se, "mean accuracy {m}, se {se}");
}

#[test]
fn oracle_is_deterministic() {
    let w = generate_world(&noiseless(4, 2, 5)).unwrap();
    let a = oracle_downstream_accuracy(&w.tasks[1], &w.experts[2], &w.config.oracle_train).unwrap();
    for _ in 0..3 {
        assert_eq!(a, oracle_downstream_accuracy(&w.tasks[1], &w.experts[2], &w.config.oracle_train).unwrap());
    }
}

#[test]
fn oracle_selector_has_no_regret() {
    let w = generate_world(&WorldConfig {
        noise: 0.5,
        ..noiseless(4, 6, 2)
    })
    .unwrap();
    let s = evaluate_selectors(&w, &[Method::Oracle, Method::Knn, Method::Random], &BenchOptions::default()).unwrap();
    assert_eq!((s[0].mean_regret, s[0].agreement), (0.0, 1.0));
    for summary in &s {
        assert_eq!(summary.records.len(), 6);
        for r in &summary.records {
            assert!(r.regret >= 0.0);
            assert_eq!(r.regret, r.oracle_acc - r.selector_acc);
        }
        assert!(summary.ci_lo <= summary.mean_regret && summary.mean_regret <= summary.ci_hi);
    }
    let few = generate_world(&noiseless(4, 4, 2)).unwrap();
    assert!(evaluate_selectors(&few, &[Method::Knn], &BenchOptions::default()).is_err());
}

#[test]
fn random_agreement_is_one_in_e() {
    let e = 4;
    let tasks = 200;
    let cfg = WorldConfig {
        n_train: 20,
        n_test: 20,
        ..noiseless(e, tasks, 77)
    };
    let w = generate_world(&cfg).unwrap();
    let s = evaluate_selectors(&w, &[Method::Random], &BenchOptions::default()).unwrap();
    let p = 1.0 / e as f64;
    let se = (p * (1.0 - p) / tasks as f64).sqrt();
    assert!((s[0].agreement - p).abs() < 3.0 * se, "agreement {}", s[0].agreement);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = WorldConfig {
        noise: 0.5,
        mode: WorldMode::RandomSlices,
        ..noiseless(4, 5, 13)
    };
    let methods = [Method::Knn, Method::Epn, Method::Kl, Method::Random];
    let run = |threads| {
        pool(threads).install(|| {
            let w = generate_world(&cfg).unwrap();
            (w.to_bytes(), evaluate_selectors(&w, &methods, &BenchOptions::default()).unwrap())
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn knn_finds_the_separating_expert() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 60;
    let labels: Vec<u32> = (0..n).map(|i| (i % 3) as u32).collect();
    let task = TaskDataset::new((0..n as u64).collect(), labels.clone(), 3).unwrap();
    let experts: Vec<EmbeddingMatrix> = (0..5u32)
        .map(|e| {
            let data = (0..n * 4)
                .map(|k| {
                    let noise = rng.random::<f32>();
                    if e == 3 {
                        labels[k / 4] as f32 * 10.0 + noise
                    } else {
                        noise
                    }
                })
                .collect();
            EmbeddingMatrix::new(e, (0..n as u64).collect(), 4, data).unwrap()
        })
        .collect();
    let r = knn_select(&task, &experts).unwrap();
    assert_eq!((r.chosen, r.scores[&3]), (3, 1.0));
}

#[test]
fn bootstrap_covers_the_bernoulli_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut covered = 0;
    for trial in 0..200 {
        let s: Vec<f64> = (0..100).map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect();
        let (lo, hi) = bootstrap_ci(&s, 0.95, 2000, trial).unwrap();
        covered += usize::from(lo <= 0.3 && 0.3 <= hi);
    }
    assert!(covered >= 180, "coverage {covered}/200");
}

#[test]
fn doubling_resamples_is_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s: Vec<f64> = (0..100).map(|_| rng.random::<f64>() * 4.0).collect();
    let m = mean(&s);
    let sd = (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 99.0).sqrt();
    let se = sd / 10.0;
    let a = bootstrap_ci(&s, 0.95, 2000, 1).unwrap();
    let b = bootstrap_ci(&s, 0.95, 4000, 1).unwrap();
    assert!((a.0 - b.0).abs() < se && (a.1 - b.1).abs() < se, "{a:?} vs {b:?}, se {se}");
}

#[test]
fn two_point_interval_contains_the_mean() {
    let (lo, hi) = bootstrap_ci(&[0.0, 1.0], 0.95, 10_000, 3).unwrap();
    assert!(0.0 <= lo && lo <= 0.5 && 0.5 <= hi && hi <= 1.0);
    assert_eq!(bootstrap_ci(&[0.25; 3], 0.95, 100, 0).unwrap(), (0.25, 0.25));
}

#[test]
fn cost_examples() {
    let x = CostModelInput::SELECTION_AT_SCALE;
    let t = asymptotic_costs(&x).unwrap();
    let ratio = t.preparation_ratio();
    assert!((2300.0..2500.0).contains(&ratio), "{ratio}");
    assert!(t.ratio_within(1_000, 10_000));
    let degenerate = asymptotic_costs(&CostModelInput { e: 1, s_a: 0, ..x }).unwrap();
    assert_eq!(degenerate.dat.upstream, degenerate.ours.upstream);
}

proptest! {
    #[test]
    fn cost_cells_match_the_formulas(
        p in 1u64..1_000_000_000,
        b in 1u64..10_000,
        s_u in 0u64..10_000_000,
        s_a in 0u64..10_000_000,
        s_f in 0u64..100_000,
        e in 1u64..10_000,
        n_t in 1u64..1_000_000,
    ) {
        let t = asymptotic_costs(&CostModelInput { p, b, s_u, s_a, s_f, e, n_t }).unwrap();
        let (p, b, s_u, s_a, s_f, e, n_t) =
            (p as u128, b as u128, s_u as u128, s_a as u128, s_f as u128, e as u128, n_t as u128);
        prop_assert_eq!(t.dat.upstream, s_u * b * p);
        prop_assert_eq!(t.dat.preparation, (n_t + s_a * b) * p);
        prop_assert_eq!(t.dat.fine_tune, s_f * b * p);
        prop_assert_eq!(t.ours.upstream, (s_u + s_a * e) * b * p);
        prop_assert_eq!(t.ours.preparation, (n_t * p + n_t * n_t) * e);
        prop_assert_eq!(t.ours.fine_tune, s_f * b * p);
    }
}

#[test]
fn shipped_acceptance_config_matches_the_built_in_one() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/acceptance.toml");
    assert_eq!(taskroute::bench::BenchConfig::load(path).unwrap(), taskroute::bench::BenchConfig::acceptance());
}
