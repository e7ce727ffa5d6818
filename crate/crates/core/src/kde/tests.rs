use std::collections::HashMap;
use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{parse_for_features, DependencyGraph};
use crate::table::{load_csv_inferred, Feature, Schema};

fn num(name: &str) -> Feature {
    Feature { name: name.into(), kind: FeatureKind::Numerical }
}

fn cat(name: &str) -> Feature {
    Feature { name: name.into(), kind: FeatureKind::Categorical }
}

fn n(x: f64) -> Value {
    Value::Number(x)
}

fn c(s: &str) -> Value {
    Value::Category(s.into())
}

fn model(table: &Table, edges: &[(&str, &str)], policy: EpsilonPolicy) -> KdeModel {
    let names = table.schema().names().map(str::to_string).collect();
    let order = DependencyGraph::with_edges(names, edges.iter().copied())
        .unwrap()
        .finalize()
        .unwrap()
        .topo_order()
        .unwrap();
    KdeModel::build(table, &order, NormStats::fit(table), policy, BandwidthRule::Scott).unwrap()
}

fn policy(k_min: usize) -> EpsilonPolicy {
    EpsilonPolicy { k_min, ..EpsilonPolicy::default() }
}

#[test]
fn bandwidth_rules() {
    assert_eq!(bandwidth(BandwidthRule::Scott, 32, 1).unwrap(), 0.5);
    let silverman = bandwidth(BandwidthRule::Silverman, 32, 1).unwrap();
    // 30-digit evaluation of (4/3)^(1/5) * 32^(-1/5)
    assert!((silverman - 0.529_611_920_524_406_1).abs() < 1e-12);
    assert_eq!(bandwidth(BandwidthRule::Scott, 1, 1).unwrap(), 1.0);
    assert_eq!(bandwidth(BandwidthRule::Fixed(0.3), 7, 1).unwrap(), 0.3);
    assert_eq!(bandwidth(BandwidthRule::Scott, 0, 1), Err(KdeError::NoSamples));
}

#[test]
fn kde_sample_degenerate_and_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(kde_sample(&[5.0], 1e-300, (0.0, 10.0), &mut rng), 5.0);
    assert_eq!(kde_sample(&[5.0], 0.0, (0.0, 10.0), &mut rng), 5.0);
    let draws: Vec<f64> = (0..10_000).map(|_| kde_sample(&[0.0, 10.0], 0.01, (-1.0, 11.0), &mut rng)).collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!((mean - 5.0).abs() < 0.2, "mean {mean}");
    // clamping
    assert!((0..1000).all(|_| kde_sample(&[0.0], 5.0, (-0.5, 0.5), &mut rng).abs() <= 0.5));
}

#[test]
fn kde_density_at_center() {
    assert!((kde_density(&[0.0], 1.0, 0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
}

#[test]
fn kde_density_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let values: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 10.0).collect();
    let h = 0.7;
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min) - 5.0 * h;
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 5.0 * h;
    let steps = 10_000;
    let dx = (hi - lo) / steps as f64;
    let mut integral = 0.0;
    for i in 0..=steps {
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        integral += w * kde_density(&values, h, lo + i as f64 * dx);
    }
    integral *= dx;
    assert!((0.999..=1.001).contains(&integral), "{integral}");
}

#[test]
fn categorical_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let targets = ["A", "A", "B"];
    let draws = 10_000;
    let a = (0..draws).filter(|_| *categorical_sample(&targets, &mut rng) == "A").count() as f64;
    let b = draws as f64 - a;
    let (ea, eb) = (draws as f64 * 2.0 / 3.0, draws as f64 / 3.0);
    let chi2 = (a - ea).powi(2) / ea + (b - eb).powi(2) / eb;
    // 1 degree of freedom, 0.999 quantile
    assert!(chi2 < 10.83, "chi2 {chi2}");
    assert_eq!(*categorical_sample(&["only"], &mut rng), "only");
    assert!((0..100).all(|_| *categorical_sample(&["x", "x"], &mut rng) == "x"));
}

#[test]
fn index_shapes() {
    let schema = Schema::new(vec![cat("education"), num("age"), num("income")]).unwrap();
    let rows = (0..6)
        .map(|i| vec![c(if i % 2 == 0 { "HS" } else { "BSc" }), n(20.0 + i as f64), n(i as f64)])
        .collect();
    let t = Table::new(schema, rows).unwrap();
    let m = model(&t, &[("education", "income")], policy(20));
    assert_eq!(m.partition_count("income"), Some(2));
    assert_eq!(m.has_trees("income"), Some(false));
    let m = model(&t, &[("age", "income")], policy(20));
    assert_eq!(m.partition_count("income"), Some(1));
    assert_eq!(m.has_trees("income"), Some(true));
    assert_eq!(m.partition_count("education"), Some(1));
}

#[test]
fn housing_latitude_tree() {
    let schema = Schema::new(vec![num("longitude"), num("latitude")]).unwrap();
    let rows = (0..30).map(|i| vec![n(-124.0 + i as f64 * 0.3), n(33.0 + (i % 7) as f64)]).collect();
    let t = Table::new(schema, rows).unwrap();
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/housing.graph")).unwrap();
    // restrict the fixture line for latitude to this two-column table
    let line = text.lines().find(|l| l.starts_with("latitude:")).unwrap();
    let order = parse_for_features(line, vec!["longitude".into(), "latitude".into()])
        .unwrap()
        .finalize()
        .unwrap()
        .topo_order()
        .unwrap();
    let m = KdeModel::build(&t, &order, NormStats::fit(&t), policy(5), BandwidthRule::Scott).unwrap();
    assert_eq!(m.partition_count("latitude"), Some(1));
    assert_eq!(m.has_trees("latitude"), Some(true));
    let cand = m.fuzzy_match("latitude", &[n(-120.0)]).unwrap();
    assert!(cand.rows.len() >= 5);
}

#[test]
fn exact_stage_short_circuits() {
    let schema = Schema::new(vec![cat("a"), num("y")]).unwrap();
    let rows = (0..50).map(|i| vec![c(if i < 25 { "p" } else { "q" }), n(i as f64)]).collect();
    let t = Table::new(schema, rows).unwrap();
    let m = model(&t, &[("a", "y")], policy(20));
    let cand = m.fuzzy_match("y", &[c("p")]).unwrap();
    assert_eq!((cand.hamming, cand.numeric), (0, 0.0));
    let mut rows = cand.rows.clone();
    rows.sort_unstable();
    assert_eq!(rows, (0..25).collect::<Vec<u32>>());
}

#[test]
fn numeric_expansion_hits_second_radius() {
    let schema = Schema::new(vec![num("x"), num("y")]).unwrap();
    let rows = vec![vec![n(0.0), n(1.0)], vec![n(0.5), n(2.0)], vec![n(1.0), n(3.0)]];
    let t = Table::new(schema, rows).unwrap();
    let m = model(&t, &[("x", "y")], policy(1));
    let cand = m.fuzzy_match("y", &[n(0.57)]).unwrap();
    // linear scan: only x = 0.5 lies within 0.1 of 0.57, none within 0.05
    assert_eq!(cand.rows, vec![1]);
    assert_eq!(cand.hamming, 0);
    assert!((cand.numeric - 0.1).abs() < 1e-12);
}

#[test]
fn categorical_mismatch_moves_to_radius_one() {
    let schema = Schema::new(vec![cat("a"), cat("b"), num("y")]).unwrap();
    let rows = vec![vec![c("a0"), c("b0"), n(1.0)], vec![c("a1"), c("b1"), n(2.0)]];
    let t = Table::new(schema, rows).unwrap();
    let m = model(&t, &[("a", "y"), ("b", "y")], policy(1));
    let cand = m.fuzzy_match("y", &[c("a0"), c("b1")]).unwrap();
    assert_eq!(cand.hamming, 1);
    assert_eq!(cand.rows.len(), 2);
}

#[test]
fn query_errors() {
    let schema = Schema::new(vec![cat("a"), num("y")]).unwrap();
    let rows = vec![vec![c("p"), n(1.0)], vec![c("q"), n(2.0)]];
    let t = Table::new(schema, rows).unwrap();
    let m = model(&t, &[("a", "y")], policy(1));
    assert!(matches!(m.fuzzy_match("y", &[]), Err(KdeError::ParentArity { .. })));
    assert!(matches!(m.fuzzy_match("y", &[c("zz")]), Err(KdeError::UnknownCategory { .. })));
    assert!(matches!(m.fuzzy_match("y", &[n(1.0)]), Err(KdeError::ParentKind { .. })));
    assert!(matches!(m.fuzzy_match("nope", &[]), Err(KdeError::UnknownFeature(_))));
}

/// Random mixed table: `cats` categorical parents with `levels` values each,
/// `nums` numerical parents, and a numerical target.
fn random_table(rng: &mut ChaCha8Rng, rows: usize, cats: usize, levels: u32, nums: usize) -> Table {
    let mut features: Vec<Feature> = (0..cats).map(|i| cat(&format!("c{i}"))).collect();
    features.extend((0..nums).map(|i| num(&format!("x{i}"))));
    features.push(num("y"));
    let schema = Schema::new(features).unwrap();
    let data = (0..rows)
        .map(|_| {
            let mut row: Vec<Value> = (0..cats).map(|_| c(&format!("v{}", rng.random_range(0..levels)))).collect();
            row.extend((0..nums).map(|_| n((rng.random::<f64>() * 100.0).round() / 10.0)));
            row.push(n(rng.random::<f64>()));
            row
        })
        .collect();
    Table::new(schema, data).unwrap()
}

/// Replays the staged schedule by linear scan.
fn brute_force_staged(t: &Table, stats: &NormStats, query: &[Value], k_min: usize, eps0: f64) -> (Vec<u32>, usize, f64) {
    let m = t.n_cols() - 1;
    let cat_cols: Vec<usize> = (0..m).filter(|&j| t.schema().kind(j) == FeatureKind::Categorical).collect();
    let num_cols: Vec<usize> = (0..m).filter(|&j| t.schema().kind(j) == FeatureKind::Numerical).collect();
    let dist = |r: usize| -> (usize, f64) {
        let ham = cat_cols.iter().filter(|&&j| t.value(r, j) != &query[j]).count();
        let l1: f64 = num_cols
            .iter()
            .map(|&j| {
                let a = stats.normalize(j, t.value(r, j).as_number().unwrap());
                let b = stats.normalize(j, query[j].as_number().unwrap());
                (a - b).abs()
            })
            .sum();
        (ham, l1)
    };
    let d = num_cols.len();
    let mut schedule = vec![0.0];
    if d > 0 {
        let mut eps = eps0 * d as f64;
        while eps < d as f64 {
            schedule.push(eps);
            eps *= 2.0;
        }
        schedule.push(eps);
    }
    let dists: Vec<(usize, f64)> = (0..t.n_rows()).map(dist).collect();
    let k_min = k_min.min(t.n_rows());
    for r in 0..=cat_cols.len() {
        if r > 0 && !dists.iter().any(|(h, _)| *h == r) {
            continue;
        }
        let available = dists.iter().filter(|(h, _)| *h <= r).count();
        for &eps in &schedule {
            let rows: Vec<u32> = (0..t.n_rows())
                .filter(|&i| dists[i].0 <= r && dists[i].1 <= eps)
                .map(|i| i as u32)
                .collect();
            if rows.len() >= k_min {
                return (rows, r, eps);
            }
            if rows.len() == available {
                break;
            }
        }
    }
    unreachable!()
}

fn check_oracle(t: &Table, k_min: usize, rng: &mut ChaCha8Rng, queries: usize) {
    let names: Vec<String> = t.schema().names().map(str::to_string).collect();
    let y = names.last().unwrap().clone();
    let edges: Vec<(&str, &str)> = names[..names.len() - 1].iter().map(|p| (p.as_str(), y.as_str())).collect();
    let m = model(t, &edges, policy(k_min));
    let stats = NormStats::fit(t);
    for _ in 0..queries {
        // query parents: mostly taken from real rows, perturbed
        let base = rng.random_range(0..t.n_rows());
        let query: Vec<Value> = (0..t.n_cols() - 1)
            .map(|j| match t.value(base, j) {
                Value::Number(x) => n(x + rng.random_range(-1.0..1.0)),
                Value::Category(s) => {
                    if rng.random::<f64>() < 0.3 {
                        stats.support(j)[rng.random_range(0..stats.support(j).len())].clone().into()
                    } else {
                        c(s)
                    }
                }
            })
            .collect();
        let got = m.fuzzy_match(&y, &query).unwrap();
        let (want_rows, want_r, want_eps) = brute_force_staged(t, &stats, &query, k_min, 0.05);
        let mut rows = got.rows.clone();
        rows.sort_unstable();
        assert_eq!((got.hamming, got.numeric), (want_r, want_eps));
        assert_eq!(rows, want_rows);
        assert_eq!(m.match_at(&y, &query, got.hamming, got.numeric).unwrap(), want_rows);
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Category(s)
    }
}

#[test]
fn fuzzy_match_equals_brute_force_on_10k_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = random_table(&mut rng, 10_000, 2, 6, 2);
    check_oracle(&t, 20, &mut rng, 40);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fuzzy_match_equals_brute_force(
        seed in any::<u64>(),
        rows in 1usize..300,
        cats in 0usize..3,
        nums in 0usize..3,
        levels in 1u32..5,
        k_min in 1usize..40,
    ) {
        prop_assume!(cats + nums > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_table(&mut rng, rows, cats, levels, nums);
        check_oracle(&t, k_min, &mut rng, 5);
    }

    #[test]
    fn candidate_sets_are_monotone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_table(&mut rng, 200, 2, 3, 2);
        let m = model(&t, &[("c0", "y"), ("c1", "y"), ("x0", "y"), ("x1", "y")], policy(20));
        let q = vec![c("v0"), c("v1"), n(rng.random::<f64>() * 10.0), n(rng.random::<f64>() * 10.0)];
        let exact = m.match_at("y", &q, 0, 0.0).unwrap();
        let mut prev_h: Option<Vec<u32>> = None;
        for h in 0..=2 {
            let mut prev: Option<Vec<u32>> = None;
            for eps in [0.0, 0.1, 0.2, 0.4, 0.8, 1.6, 2.0] {
                let set = m.match_at("y", &q, h, eps).unwrap();
                prop_assert!(exact.iter().all(|r| set.contains(r)));
                if let Some(p) = &prev {
                    prop_assert!(p.iter().all(|r| set.contains(r)));
                }
                prev = Some(set);
            }
            let at_full = prev.unwrap();
            if let Some(p) = &prev_h {
                prop_assert!(p.iter().all(|r| at_full.contains(r)));
            }
            prev_h = Some(at_full);
        }
    }
}

fn iris() -> Table {
    load_csv_inferred(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/iris.csv"), &HashMap::new())
        .unwrap()
        .table
}

fn iris_model() -> KdeModel {
    let t = iris();
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/iris.graph")).unwrap();
    let order = crate::graph::parse_dependency_text(&text, t.schema())
        .unwrap()
        .finalize()
        .unwrap()
        .topo_order()
        .unwrap();
    KdeModel::build(&t, &order, NormStats::fit(&t), EpsilonPolicy::default(), BandwidthRule::Scott).unwrap()
}

#[test]
fn iris_sampling_respects_support() {
    let m = iris_model();
    let synth = m.sample_table(150, 42);
    assert_eq!(synth.n_rows(), 150);
    let species = synth.schema().index_of("Species").unwrap();
    let support = m.stats().support(species);
    assert_eq!(support.len(), 3);
    for row in synth.rows() {
        assert!(support.iter().any(|s| Some(s.as_str()) == row[species].as_category()));
        for j in 0..4 {
            let (lo, hi) = m.stats().bounds(j);
            let x = row[j].as_number().unwrap();
            assert!((lo..=hi).contains(&x));
        }
    }
    assert_eq!(m.sample_table(20, 7), m.sample_table(20, 7));
    assert_ne!(m.sample_table(20, 7), m.sample_table(20, 8));
}

#[test]
fn single_feature_single_row() {
    let schema = Schema::new(vec![num("x")]).unwrap();
    let t = Table::new(schema, vec![vec![n(1.0)], vec![n(2.0)], vec![n(4.0)]]).unwrap();
    let m = model(&t, &[], policy(20));
    let s = m.sample_table(1, 0);
    assert_eq!(s.n_rows(), 1);
    let x = s.value(0, 0).as_number().unwrap();
    assert!((1.0..=4.0).contains(&x));
}

#[test]
fn deterministic_pair_never_violates() {
    // b is a function of a; every a level has at least k_min rows
    let schema = Schema::new(vec![cat("a"), num("b")]).unwrap();
    let rows = (0..200).map(|i| vec![c(&format!("L{}", i % 5)), n((i % 5) as f64 * 3.0)]).collect();
    let t = Table::new(schema, rows).unwrap();
    let m = model(&t, &[("a", "b")], policy(20));
    let s = m.sample_table(500, 9);
    for row in s.rows() {
        let level: f64 = row[0].as_category().unwrap()[1..].parse().unwrap();
        assert_eq!(row[1].as_number().unwrap(), level * 3.0);
    }
}
