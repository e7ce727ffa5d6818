use std::path::Path;
use std::time::{Duration, Instant};

use dagsynth::annotate::{self, AnnotationRequest, RetryPolicy};
use dagsynth::eval::{self, EvalReport, RuleResult};
use dagsynth::flow::{fit_flows, FlowModel};
use dagsynth::graph::{parse_dependency_text, TopoOrder, ROOT};
use dagsynth::kde::{BandwidthRule, EpsilonPolicy, KdeModel};
use dagsynth::table::{self, load_csv, sha256_hex, write_csv, NormStats, Table};
use dagsynth::Error;
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig};

const KDE_FORMAT: &str = "dagsynth-kde/1";

/// What `fit` stores for the KDE sampler: the policy and the hashes of the
/// inputs it applies to. The index is rebuilt from the data on load.
#[derive(Debug, Serialize, Deserialize)]
struct KdeArtifact {
    format: String,
    schema_hash: String,
    graph_hash: String,
    data_sha256: String,
    bandwidth: BandwidthRule,
    policy: EpsilonPolicy,
    training_seconds: f64,
}

#[derive(Debug, Serialize)]
struct GraphReport {
    source: String,
    removed_edges: Vec<String>,
    order: Vec<OrderEntry>,
    graph_hash: String,
}

#[derive(Debug, Serialize)]
struct OrderEntry {
    feature: String,
    parents: Vec<String>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_real(cfg: &RunConfig) -> Result<Table, Error> {
    let loaded = table::load_csv_inferred(&cfg.dataset, &cfg.schema)?;
    if loaded.dropped_rows > 0 {
        log::info!("{}: dropped {} incomplete rows", cfg.dataset.display(), loaded.dropped_rows);
    }
    Ok(loaded.table)
}

fn graph_source(cfg: &RunConfig) -> std::path::PathBuf {
    cfg.graph.path.clone().unwrap_or_else(|| cfg.annotation_path())
}

fn build_order(cfg: &RunConfig, real: &Table) -> Result<(dagsynth::graph::DependencyGraph, TopoOrder), Error> {
    let source = graph_source(cfg);
    let text = read(&source)?;
    let mut g = parse_dependency_text(&text, real.schema())?;
    g.set_provenance(source.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default());
    let g = g.finalize()?;
    let order = g.topo_order()?;
    Ok((g, order))
}

pub fn annotate(cfg: &RunConfig) -> Result<(), Error> {
    let section = cfg
        .annotate
        .as_ref()
        .ok_or_else(|| Error::Config("the annotate command needs an [annotate] section".into()))?;
    let token = std::env::var(&section.token_env)
        .map_err(|_| Error::Config(format!("environment variable {} is not set", section.token_env)))?;
    let real = load_real(cfg)?;
    let request = AnnotationRequest {
        dataset_description: section.description.clone(),
        feature_names: annotate::prompt_feature_order(real.schema()),
        endpoint: section.endpoint.clone(),
        model_name: section.model.clone(),
        auth_token: token,
        timeout: Duration::from_secs_f64(section.timeout_secs),
    };
    let policy = RetryPolicy {
        attempts: section.attempts,
        base_delay: Duration::from_millis(section.base_delay_ms),
    };
    let out = cfg.annotation_path();
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let archive = annotate::archive_path_for(&out);
    let text = annotate::request_annotation(&request, policy, Some(&archive))?;
    write(&out, &text)?;
    println!("annotation written to {} (raw response {})", out.display(), archive.display());
    Ok(())
}

pub fn graph(cfg: &RunConfig) -> Result<(), Error> {
    let real = load_real(cfg)?;
    let (g, order) = build_order(cfg, &real)?;
    let report = GraphReport {
        source: g.provenance().to_string(),
        removed_edges: g.removed_edges().iter().map(|(p, c)| format!("{p}->{c}")).collect(),
        order: order
            .iter()
            .map(|(f, ps)| OrderEntry {
                feature: f.to_string(),
                parents: ps.to_vec(),
            })
            .collect(),
        graph_hash: order.hash(),
    };
    write(&cfg.graph_out(), g.to_annotated_file())?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write(&cfg.out_dir.join("graph_report.json"), json + "\n")?;

    println!("removed {} edge(s)", report.removed_edges.len());
    for e in &report.removed_edges {
        println!("  {e}");
    }
    println!("sampling order:");
    for e in &report.order {
        let parents = if e.parents.is_empty() { ROOT.to_string() } else { e.parents.join(", ") };
        println!("  {} <- {}", e.feature, parents);
    }
    println!("graph written to {}", cfg.graph_out().display());
    Ok(())
}

fn data_hash(cfg: &RunConfig) -> Result<String, Error> {
    let bytes = std::fs::read(&cfg.dataset).map_err(|e| Error::io(&cfg.dataset, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn fit(cfg: &RunConfig) -> Result<(), Error> {
    let real = load_real(cfg)?;
    let (_, order) = build_order(cfg, &real)?;
    let path = cfg.model_path();
    let started = Instant::now();
    match cfg.method {
        Method::Nf => {
            let model = fit_flows(&real, &order, &cfg.nf)?;
            for l in &model.log {
                let best = l.epoch_nll.get(l.best_epoch).copied().unwrap_or(f64::NAN);
                println!(
                    "{}: best epoch {} of {}, nll {:.4}",
                    l.feature,
                    l.best_epoch + 1,
                    l.epoch_nll.len(),
                    best
                );
            }
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
            model.save(&path)?;
            log::info!("trained {} flows in {:.2}s", model.flows().len(), started.elapsed().as_secs_f64());
        }
        Method::Kde => {
            // nothing is trained; building once validates the policy against the data
            KdeModel::build(&real, &order, NormStats::fit(&real), cfg.kde.policy(), cfg.kde.bandwidth)?;
            let artifact = KdeArtifact {
                format: KDE_FORMAT.into(),
                schema_hash: real.schema().hash(),
                graph_hash: order.hash(),
                data_sha256: data_hash(cfg)?,
                bandwidth: cfg.kde.bandwidth,
                policy: cfg.kde.policy(),
                training_seconds: 0.0,
            };
            write(&path, serde_json::to_string_pretty(&artifact).expect("artifact serializes") + "\n")?;
            println!("training time: 0 s");
        }
    }
    println!("model written to {}", path.display());
    Ok(())
}

enum Sampler {
    Kde(KdeModel),
    Nf(FlowModel),
}

fn load_sampler(cfg: &RunConfig, real: &Table, order: &TopoOrder) -> Result<Sampler, Error> {
    let path = cfg.model_path();
    match cfg.method {
        Method::Nf => Ok(Sampler::Nf(FlowModel::load(&path, real.schema(), order)?)),
        Method::Kde => {
            let a: KdeArtifact = serde_json::from_str(&read(&path)?)
                .map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))?;
            if a.format != KDE_FORMAT {
                return Err(Error::Artifact(format!("unsupported format `{}`", a.format)));
            }
            if a.schema_hash != real.schema().hash() {
                return Err(Error::Artifact("schema hash does not match".into()));
            }
            if a.graph_hash != order.hash() {
                return Err(Error::Artifact("graph hash does not match".into()));
            }
            if a.data_sha256 != data_hash(cfg)? {
                return Err(Error::Artifact("dataset changed since fit".into()));
            }
            Ok(Sampler::Kde(KdeModel::build(real, order, NormStats::fit(real), a.policy, a.bandwidth)?))
        }
    }
}

pub fn sample(cfg: &RunConfig) -> Result<(), Error> {
    let real = load_real(cfg)?;
    let (_, order) = build_order(cfg, &real)?;
    let loading = Instant::now();
    let sampler = load_sampler(cfg, &real, &order)?;
    log::info!("model loaded in {:.3}s", loading.elapsed().as_secs_f64());
    let n = cfg.n.unwrap_or(real.n_rows());
    let started = Instant::now();
    let synth = match &sampler {
        Sampler::Kde(m) => m.sample_table(n, cfg.seed),
        Sampler::Nf(m) => m.sample_table(n, cfg.seed),
    };
    let elapsed = started.elapsed();
    let out = cfg.synthetic_path();
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_csv(&synth, &out)?;
    let per_row = if n == 0 { 0.0 } else { elapsed.as_secs_f64() * 1e3 / n as f64 };
    println!("sampled {n} rows in {:.3}s, mean latency {per_row:.4} ms/row", elapsed.as_secs_f64());
    println!("synthetic data written to {}", out.display());
    Ok(())
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), Error> {
    let real = load_real(cfg)?;
    let synth = load_csv(&cfg.synthetic_path(), real.schema())?.table;
    let mut report = EvalReport::default();
    if cfg.eval.dcr {
        report.dcr = Some(eval::dcr(&real, &synth, &NormStats::fit(&real))?);
    }
    if let Some(rules) = &cfg.eval.rules {
        for rule in eval::parse_rules(rules, &real)? {
            report.violations.push(RuleResult {
                rule: rule.describe(),
                rate: eval::violation_rate(&synth, &rule)?,
            });
        }
    }
    if cfg.eval.discriminator_folds >= 2 {
        report.discriminator = Some(eval::discriminator_measure(&real, &synth, cfg.eval.discriminator_folds, cfg.seed)?);
    }
    if let (Some(target), Some(task)) = (&cfg.eval.utility_target, cfg.eval.utility_task) {
        let test = match &cfg.eval.test {
            Some(p) => load_csv(p, real.schema())?.table,
            None => real.clone(),
        };
        report.utility = Some(eval::downstream_utility(&synth, &test, target, task)?);
    }
    report.config = Some(serde_json::to_value(cfg).expect("config serializes"));

    let text = report.to_text();
    write(&cfg.out_dir.join("eval_report.txt"), &text)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write(&cfg.out_dir.join("eval_report.json"), json + "\n")?;
    print!("{text}");
    Ok(())
}
