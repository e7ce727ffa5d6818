//! Acceptance suite: one PASS/FAIL line per criterion. Everything runs in a
//! one-thread rayon pool.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dagsynth::datasets::synthetic_census;
use dagsynth::eval::{dcr, discriminator_measure, downstream_utility, violation_rate, Task, ViolationRule};
use dagsynth::flow::{fit_flows, ConditionalFlow, FlowModel, TrainConfig, GROUPS};
use dagsynth::graph::{min_feedback_arc_set_indexed, parse_dependency_text, DependencyGraph, TopoOrder};
use dagsynth::kde::{kde_density, l1, BallTree, BandwidthRule, EpsilonPolicy, KdeModel};
use dagsynth::table::{load_csv_inferred, Feature, FeatureKind, NormStats, Schema, Table, Value};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn order_from(text: &str, schema: &Schema) -> TopoOrder {
    parse_dependency_text(text, schema).unwrap().finalize().unwrap().topo_order().unwrap()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn iris_end_to_end() -> Outcome {
    let started = Instant::now();
    let iris = load_csv_inferred(&fixture("iris.csv"), &HashMap::new()).unwrap().table;
    let order = order_from(&std::fs::read_to_string(fixture("iris.graph")).unwrap(), iris.schema());
    let mut accs = Vec::new();
    for seed in 0..5u64 {
        let mut idx: Vec<usize> = (0..iris.n_rows()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let train = iris.select_rows(&idx[..120]).unwrap();
        let test = iris.select_rows(&idx[120..]).unwrap();
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let model = fit_flows(&train, &order, &cfg).unwrap();
        let synth = model.sample_table(150, seed + 100);
        let report = downstream_utility(&synth, &test, "Species", Task::Classify).unwrap();
        let lr = report.scores.iter().find(|s| s.model == "logistic_regression").unwrap();
        accs.push(lr.accuracy.unwrap());
    }
    let secs = started.elapsed().as_secs_f64();
    let good = accs.iter().filter(|&&a| a >= 0.9).count();
    outcome(
        good >= 4 && secs < 120.0,
        format!("LR accuracy per seed {accs:.3?}, {good}/5 >= 0.90, {secs:.1}s"),
    )
}

/// Income annotation without the `educational-num -> education` line, so
/// the graph keeps `education -> educational-num`.
fn census_order(schema: &Schema) -> TopoOrder {
    let text = std::fs::read_to_string(fixture("income.graph")).unwrap();
    let kept: String = text
        .lines()
        .filter(|l| !l.starts_with("education:"))
        .map(|l| format!("{l}\n"))
        .collect();
    order_from(&kept, schema)
}

fn deterministic_pair() -> Outcome {
    let real = synthetic_census(5000, 1);
    let order = census_order(real.schema());
    if order.parents_of("educational-num") != Some(&["education".to_string()][..]) {
        return outcome(false, "graph lost education -> educational-num");
    }
    let rule = ViolationRule::pair_map(&real, "education", "educational-num").unwrap();
    let kde = KdeModel::build(
        &real,
        &order,
        NormStats::fit(&real),
        EpsilonPolicy::default(),
        BandwidthRule::Scott,
    )
    .unwrap();
    let k = violation_rate(&kde.sample_table(5000, 2), &rule).unwrap();
    let nf = fit_flows(&real, &order, &TrainConfig::default()).unwrap();
    let f = violation_rate(&nf.sample_table(5000, 2), &rule).unwrap();
    outcome(
        k.count == 0 && f.rate <= 0.01,
        format!(
            "KDE {}/{} violations, NF {:.2}% ({}/{})",
            k.count,
            k.n,
            100.0 * f.rate,
            f.count,
            f.n
        ),
    )
}

fn mean_latency_ms(n: usize, mut sample: impl FnMut(usize) -> Table) -> f64 {
    sample(20);
    let runs: Vec<f64> = (0..3)
        .map(|_| {
            let t = Instant::now();
            let table = sample(n);
            assert_eq!(table.n_rows(), n);
            t.elapsed().as_secs_f64() * 1e3 / n as f64
        })
        .collect();
    median(runs)
}

fn throughput() -> Outcome {
    let real = synthetic_census(48_000, 5);
    let order = census_order(real.schema());
    // only sampling latency is measured, so a short fit suffices
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let nf = fit_flows(&real, &order, &cfg).unwrap();
    let kde = KdeModel::build(
        &real,
        &order,
        NormStats::fit(&real),
        EpsilonPolicy::default(),
        BandwidthRule::Scott,
    )
    .unwrap();
    let mut seed = 0;
    let nf_ms = mean_latency_ms(2000, |n| {
        seed += 1;
        nf.sample_table(n, seed)
    });
    let kde_ms = mean_latency_ms(500, |n| {
        seed += 1;
        kde.sample_table(n, seed)
    });
    outcome(
        real.n_cols() == 15 && nf_ms <= 1.0 && kde_ms <= 100.0,
        format!("NF {nf_ms:.4} ms/row, KDE {kde_ms:.4} ms/row on 48000 x 15"),
    )
}

fn kde_mse(n: usize, reps: u64) -> f64 {
    let h = (n as f64).powf(-0.2);
    let grid: Vec<f64> = (0..=160).map(|i| -4.0 + 0.05 * i as f64).collect();
    let truth: Vec<f64> = grid
        .iter()
        .map(|x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
        .collect();
    let mut total = 0.0;
    for r in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 * n as u64 + r);
        let values: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        total += grid
            .iter()
            .zip(&truth)
            .map(|(&x, &p)| (kde_density(&values, h, x) - p).powi(2))
            .sum::<f64>()
            / grid.len() as f64;
    }
    total / reps as f64
}

fn kde_trend() -> Outcome {
    let mse: Vec<f64> = [100, 1000, 10_000].iter().map(|&n| kde_mse(n, 40)).collect();
    let ratio = mse[0] / mse[2];
    let theory = 10f64.powf(1.6);
    outcome(
        mse[0] > mse[1] && mse[1] > mse[2] && ratio >= theory / 3.0 && ratio <= theory * 3.0,
        format!("MSE {:?}, ratio {ratio:.1} vs {theory:.1}", mse.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>()),
    )
}

fn conditional_gaussian(n: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = Schema::new(vec![
        Feature {
            name: "c".into(),
            kind: FeatureKind::Numerical,
        },
        Feature {
            name: "y".into(),
            kind: FeatureKind::Numerical,
        },
    ])
    .unwrap();
    let noise = Normal::new(0.0, 0.5).unwrap();
    let rows = (0..n)
        .map(|_| {
            let c: f64 = rng.random();
            vec![Value::Number(c), Value::Number(2.0 + 3.0 * c + noise.sample(&mut rng))]
        })
        .collect();
    Table::new(schema, rows).unwrap()
}

/// Largest per-group relative error of the analytic loss gradient against
/// central differences, with a fixed dropout stream.
fn worst_gradient_error(f: &ConditionalFlow, contexts: &[f64], targets: &[f64]) -> f64 {
    let rows: Vec<usize> = (0..targets.len()).collect();
    let masks = ChaCha8Rng::seed_from_u64(17);
    let loss = |g: &ConditionalFlow, grad: &mut [f64]| g.loss_grad(contexts, targets, &rows, Some(&mut masks.clone()), grad);
    let mut grad = vec![0.0; f.layout().len()];
    loss(f, &mut grad);
    let mut worst = 0.0f64;
    for g in 0..GROUPS.len() {
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for i in f.layout().group(g).step_by(3) {
            let mut scratch = vec![0.0; grad.len()];
            let (mut plus, mut minus) = (f.clone(), f.clone());
            plus.params_mut()[i] += 1e-5;
            minus.params_mut()[i] -= 1e-5;
            let fd = (loss(&plus, &mut scratch) - loss(&minus, &mut scratch)) / 2e-5;
            diff += (fd - grad[i]).powi(2);
            scale += fd.powi(2).max(grad[i].powi(2));
        }
        worst = worst.max(diff.sqrt() / scale.sqrt().max(1e-6));
    }
    worst
}

fn flow_correctness() -> Outcome {
    let train = conditional_gaussian(2000, 1);
    let names = train.schema().names().map(str::to_string).collect();
    let order = DependencyGraph::with_edges(names, [("c", "y")])
        .unwrap()
        .finalize()
        .unwrap()
        .topo_order()
        .unwrap();
    let model: FlowModel = fit_flows(&train, &order, &TrainConfig::default()).unwrap();
    let flow = model.flow("y").unwrap();

    let (mut round_trip, mut log_det) = (0.0f64, 0.0f64);
    for ci in 0..=4 {
        let ctx = model.context("y", &[Value::Number(ci as f64 / 4.0), Value::Number(0.0)]).unwrap();
        for zi in 0..=120 {
            let z = -6.0 + 0.1 * zi as f64;
            let (v, ld) = flow.forward(z, &ctx);
            round_trip = round_trip.max((flow.inverse(v, &ctx).0 - z).abs());
            let h = 1e-5;
            let fd = (flow.forward(z + h, &ctx).0 - flow.forward(z - h, &ctx).0) / (2.0 * h);
            log_det = log_det.max(((fd - ld.exp()) / fd).abs());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut contexts, mut targets) = (Vec::new(), Vec::new());
    for _ in 0..32 {
        let row = &train.rows()[rng.random_range(0..train.n_rows())];
        contexts.extend(model.context("y", row).unwrap());
        targets.push(rng.random_range(-2.5..2.5));
    }
    let grad = worst_gradient_error(flow, &contexts, &targets);

    let test = conditional_gaussian(5000, 2);
    let nll = -test
        .rows()
        .iter()
        .map(|r| flow.log_density(r[1].as_number().unwrap(), &model.context("y", r).unwrap()))
        .sum::<f64>()
        / test.n_rows() as f64;
    let optimum = 0.5 * (2.0 * std::f64::consts::PI * 0.25).ln() + 0.5;
    let gap = (nll - optimum).abs();
    outcome(
        round_trip < 1e-6 && log_det < 1e-4 && grad < 1e-4 && gap <= 0.05,
        format!(
            "round trip {round_trip:.1e}, log-det rel {log_det:.1e}, gradient rel {grad:.1e}, NLL {nll:.4} vs optimum {optimum:.4}"
        ),
    )
}

/// Brute force: the fewest edges outside some node ordering's forward edges.
fn fas_oracle(n: usize, edges: &[(usize, usize)]) -> (usize, Vec<u32>) {
    let mut perms = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    permute(&mut p, 0, &mut perms);
    let forward: Vec<u32> = perms
        .iter()
        .map(|perm| {
            let mut pos = vec![0; n];
            for (i, &v) in perm.iter().enumerate() {
                pos[v] = i;
            }
            edges
                .iter()
                .enumerate()
                .filter(|(_, &(a, b))| pos[a] < pos[b])
                .fold(0u32, |m, (i, _)| m | (1 << i))
        })
        .collect();
    let best = forward.iter().map(|f| edges.len() - f.count_ones() as usize).min().unwrap();
    (best, forward)
}

fn permute(p: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == p.len() {
        out.push(p.clone());
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, out);
        p.swap(k, i);
    }
}

fn feedback_arc_minimality() -> Outcome {
    let mut graphs = 0usize;
    let mut mismatches = 0usize;
    for n in 1..=5usize {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b))).collect();
        let (_, all_forward) = fas_oracle(n, &pairs);
        for mask in 0u32..(1 << pairs.len()) {
            let picked: Vec<usize> = (0..pairs.len()).filter(|&i| mask & (1 << i) != 0).collect();
            let edges: Vec<(usize, usize)> = picked.iter().map(|&i| pairs[i]).collect();
            // an ordering's forward set restricted to this graph
            let best = all_forward
                .iter()
                .map(|f| edges.len() - (f & mask).count_ones() as usize)
                .min()
                .unwrap();
            let removed = min_feedback_arc_set_indexed(n, &edges).unwrap();
            let kept = removed.iter().fold(mask, |m, &e| m & !(1 << picked[e]));
            let acyclic = all_forward.iter().any(|f| kept & !f == 0);
            if removed.len() != best || !acyclic {
                mismatches += 1;
            }
            graphs += 1;
        }
    }
    outcome(mismatches == 0, format!("{graphs} digraphs on 1..=5 nodes, {mismatches} mismatches"))
}

fn ball_tree_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 10_000;
    let points: Vec<f64> = (0..3 * n).map(|_| rng.random()).collect();
    let tree = BallTree::new(3, points.clone(), (0..n as u32).collect(), BallTree::DEFAULT_LEAF_SIZE);
    let mut mismatches = 0;
    let mut hits = 0;
    for _ in 0..100 {
        let center: Vec<f64> = (0..3).map(|_| rng.random_range(-0.2..1.2)).collect();
        let radius = rng.random_range(0.0..0.6);
        let mut got = tree.range_query(&center, radius).unwrap();
        got.sort_unstable();
        let want: Vec<u32> = (0..n)
            .filter(|&i| l1(&points[3 * i..3 * i + 3], &center) <= radius)
            .map(|i| i as u32)
            .collect();
        hits += want.len();
        if got != want {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("100 queries over 10000 points, {hits} hits, {mismatches} mismatches"))
}

fn metric_sanity() -> Outcome {
    let t = synthetic_census(4000, 11);
    let stats = NormStats::fit(&t);
    let self_dcr = dcr(&t, &t, &stats).unwrap().mean;

    let mut halves = Vec::new();
    for seed in 0..5u64 {
        let mut idx: Vec<usize> = (0..t.n_rows()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = t.select_rows(&idx[..2000]).unwrap();
        let b = t.select_rows(&idx[2000..]).unwrap();
        halves.push(discriminator_measure(&a, &b, 5, seed).unwrap().mean);
    }

    let small = synthetic_census(1000, 12);
    let stats = NormStats::fit(&small);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let noise: Vec<f64> = (0..small.n_rows() * small.n_cols()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let noisy_dcr: Vec<f64> = [0.01, 0.05, 0.1]
        .iter()
        .map(|&s| {
            let rows = small
                .rows()
                .iter()
                .enumerate()
                .map(|(r, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(c, v)| match v {
                            Value::Number(x) => {
                                let (lo, hi) = stats.bounds(c);
                                Value::Number(x + s * (hi - lo) * noise[r * small.n_cols() + c])
                            }
                            other => other.clone(),
                        })
                        .collect()
                })
                .collect();
            let noisy = Table::new(small.schema().clone(), rows).unwrap();
            dcr(&small, &noisy, &stats).unwrap().mean
        })
        .collect();

    let halves_ok = halves.iter().all(|h| (0.45..=0.55).contains(h));
    let monotone = noisy_dcr[0] < noisy_dcr[1] && noisy_dcr[1] < noisy_dcr[2];
    outcome(
        self_dcr == 0.0 && halves_ok && monotone,
        format!("dcr(T,T) = {self_dcr}, discriminator halves {halves:.3?}, noisy DCR {noisy_dcr:.4?}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("iris end-to-end", iris_end_to_end),
        ("deterministic-pair fidelity", deterministic_pair),
        ("sampling throughput", throughput),
        ("kde consistency trend", kde_trend),
        ("flow correctness", flow_correctness),
        ("feedback-arc minimality", feedback_arc_minimality),
        ("ball tree oracle", ball_tree_oracle),
        ("metric sanity", metric_sanity),
    ];
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let started = Instant::now();
        let result = pool.install(run);
        let mark = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "{mark} [{}] {name}: {} ({:.1}s)",
            i + 1,
            result.detail,
            started.elapsed().as_secs_f64()
        );
        failed += usize::from(!result.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
