use std::collections::HashMap;
use std::path::{Path, PathBuf};

use dagsynth::flow::TrainConfig;
use dagsynth::kde::{BandwidthRule, EpsilonPolicy};
use dagsynth::table::FeatureKind;
use dagsynth::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kde,
    Nf,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Kde => "kde",
            Method::Nf => "nf",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// real data CSV
    pub dataset: PathBuf,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_method")]
    pub method: Method,
    /// rows to sample; defaults to the dataset size
    pub n: Option<usize>,
    /// per-column kind overrides
    #[serde(default)]
    pub schema: HashMap<String, FeatureKind>,
    #[serde(default)]
    pub graph: GraphSection,
    pub annotate: Option<AnnotateSection>,
    #[serde(default)]
    pub kde: KdeSection,
    #[serde(default)]
    pub nf: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    42
}

fn default_method() -> Method {
    Method::Kde
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    /// annotation text; defaults to the annotate output
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotateSection {
    #[serde(default)]
    pub description: String,
    pub endpoint: String,
    pub model: String,
    /// name of the environment variable holding the bearer token
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_attempts")]
    pub attempts: u32,
    #[serde(default = "default_base_delay")]
    pub base_delay_ms: u64,
}

fn default_token_env() -> String {
    "DAGSYNTH_API_TOKEN".into()
}

fn default_timeout() -> f64 {
    120.0
}

fn default_attempts() -> u32 {
    3
}

fn default_base_delay() -> u64 {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeSection {
    pub bandwidth: BandwidthRule,
    pub k_min: usize,
    pub eps0: f64,
    pub growth: f64,
}

impl Default for KdeSection {
    fn default() -> Self {
        let p = EpsilonPolicy::default();
        Self {
            bandwidth: BandwidthRule::default(),
            k_min: p.k_min,
            eps0: p.eps0,
            growth: p.growth,
        }
    }
}

impl KdeSection {
    pub fn policy(&self) -> EpsilonPolicy {
        EpsilonPolicy {
            k_min: self.k_min,
            eps0: self.eps0,
            growth: self.growth,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// synthetic CSV; defaults to the sample output
    pub synthetic: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    #[serde(default = "yes")]
    pub dcr: bool,
    /// folds for the discriminator; 0 disables it
    #[serde(default = "default_folds")]
    pub discriminator_folds: usize,
    pub utility_target: Option<String>,
    pub utility_task: Option<dagsynth::eval::Task>,
    /// held-out real rows for utility; defaults to the dataset
    pub test: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

fn default_folds() -> usize {
    5
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            synthetic: None,
            rules: None,
            dcr: true,
            discriminator_folds: 5,
            utility_target: None,
            utility_task: None,
            test: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub n: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a TOML file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.dataset);
        fix(&mut cfg.out_dir);
        for p in [&mut cfg.graph.path, &mut cfg.eval.synthetic, &mut cfg.eval.rules, &mut cfg.eval.test]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(m) = overrides.method {
            cfg.method = m;
        }
        if let Some(n) = overrides.n {
            cfg.n = Some(n);
        }
        if let Some(o) = &overrides.out {
            cfg.out_dir = o.clone();
        }
        cfg.nf.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if self.kde.k_min == 0 {
            return bad("kde.k_min must be at least 1".into());
        }
        if let BandwidthRule::Fixed(h) = self.kde.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("kde.bandwidth fixed value {h} must be positive"));
            }
        }
        if let Some(a) = &self.annotate {
            if !(a.timeout_secs > 0.0) {
                return bad("annotate.timeout_secs must be positive".into());
            }
        }
        if self.eval.discriminator_folds == 1 {
            return bad("eval.discriminator_folds must be 0 or at least 2".into());
        }
        if self.eval.utility_target.is_some() != self.eval.utility_task.is_some() {
            return bad("eval.utility_target and eval.utility_task go together".into());
        }
        Ok(())
    }

    pub fn annotation_path(&self) -> PathBuf {
        self.out_dir.join("annotation.txt")
    }

    pub fn graph_out(&self) -> PathBuf {
        self.out_dir.join("graph.txt")
    }

    pub fn model_path(&self) -> PathBuf {
        self.out_dir.join(format!("model.{}.json", self.method.as_str()))
    }

    pub fn synthetic_path(&self) -> PathBuf {
        self.eval
            .synthetic
            .clone()
            .unwrap_or_else(|| self.out_dir.join("synthetic.csv"))
    }
}
