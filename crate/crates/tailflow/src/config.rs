//! TOML experiment configuration.
//!
//! ```toml
//! name = "desk"
//! base_seed = 0
//! replications = 5
//! save_checkpoints = true
//!
//! [data]
//! kind = "benchmark"            # or "hickling"
//! copulas = [{ family = "gumbel", tau = 0.5 }, { family = "husler_reiss", rho = 0.5 }]
//! dims = [10, 20]
//! alphas = [1.5, 2.0]           # benchmark: Pareto tail indices
//! pareto_fraction = 0.7         # benchmark: leading share of Pareto margins
//! nus = [2.0]                   # hickling: Student-t degrees of freedom
//! n_train = 5000
//! n_val = 1000
//! n_test = 5000
//!
//! [[methods]]
//! mode = "adaptive"             # adaptive | uniform | arcsinh | identity
//! schedule = "linear"           # linear | vp_trig | vp_poly | quadratic
//! steps = 100
//! clamp = inf
//!
//! [train]
//! epochs = 1500
//! patience = 100                # 0 disables early stopping
//! lr = 5e-3
//! weight_decay = 1e-5
//! clip = 10.0
//! width = 128
//! depth = 3
//! embed_pairs = 32
//! alpha_max = 4.0
//! standardize = false
//!
//! [eval]
//! projections = 512
//! energy_cap = 2000
//! ```
//!
//! Unknown keys and ill-typed values are rejected with the offending key path.

use serde::{Deserialize, Serialize};
use tailflow_core::datagen::Copula;
use tailflow_core::flow::{Schedule, TrainConfig, TransformMode};
use tailflow_core::metrics::EvalConfig;
use tailflow_core::nn::AdamWConfig;

use crate::bench::{BenchConfig, Cell, CellData, Method};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_true")]
    pub save_checkpoints: bool,
    pub data: DataSection,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodSection>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default)]
    pub copulas: Vec<CopulaSection>,
    pub dims: Vec<usize>,
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default = "default_pareto_fraction")]
    pub pareto_fraction: f64,
    #[serde(default)]
    pub nus: Vec<f64>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopulaSection {
    pub family: String,
    pub tau: Option<f64>,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_schedule")]
    pub schedule: String,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_clamp")]
    pub clamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub width: usize,
    pub depth: usize,
    pub embed_pairs: usize,
    pub alpha_max: f64,
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub projections: usize,
    pub energy_cap: usize,
}

fn default_name() -> String {
    "bench".into()
}
fn default_replications() -> usize {
    5
}
fn default_true() -> bool {
    true
}
fn default_kind() -> String {
    "benchmark".into()
}
fn default_pareto_fraction() -> f64 {
    0.7
}
fn default_mode() -> String {
    "adaptive".into()
}
fn default_schedule() -> String {
    "linear".into()
}
fn default_steps() -> usize {
    100
}
fn default_clamp() -> f64 {
    f64::INFINITY
}
fn default_methods() -> Vec<MethodSection> {
    vec![MethodSection { mode: default_mode(), schedule: default_schedule(), steps: 100, clamp: f64::INFINITY }]
}

impl Default for TrainSection {
    /// The paper-scale network and optimizer.
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.max_epochs,
            patience: t.patience.unwrap_or(0),
            lr: t.optimizer.lr,
            weight_decay: t.optimizer.weight_decay,
            clip: t.optimizer.clip,
            width: t.width,
            depth: t.depth,
            embed_pairs: t.embed_pairs,
            alpha_max: t.alpha_max,
            standardize: t.standardize,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalSection { projections: e.projections, energy_cap: e.energy_cap }
    }
}

impl TrainSection {
    /// Training settings for one run; the mode, schedule and seed are per run.
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            alpha_max: self.alpha_max,
            max_epochs: self.epochs,
            patience: (self.patience > 0).then_some(self.patience),
            optimizer: AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, clip: self.clip, ..AdamWConfig::default() },
            width: self.width,
            depth: self.depth,
            embed_pairs: self.embed_pairs,
            standardize: self.standardize,
            ..TrainConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(1..=5000).contains(&self.epochs) {
            return Err(Error::config("train.epochs", "must lie in 1..=5000"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("train.weight_decay", "must be nonnegative"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::config("train.clip", "must be positive"));
        }
        if self.width == 0 || self.embed_pairs < 2 {
            return Err(Error::config("train.width", "width must be positive and embed_pairs at least 2"));
        }
        if !(self.alpha_max > 0.0) {
            return Err(Error::config("train.alpha_max", "must be positive"));
        }
        Ok(())
    }
}

/// Parse a TOML document; type errors name the key path.
pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Error::config(if key == "." { "<root>".into() } else { key }, e.into_inner().to_string())
    })
}

/// Read, parse and validate a configuration file.
pub fn load_config(path: impl AsRef<std::path::Path>) -> Result<BenchConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)?.to_bench()
}

impl ConfigFile {
    /// Validate the document and expand the grid.
    pub fn to_bench(&self) -> Result<BenchConfig> {
        if self.replications == 0 {
            return Err(Error::config("replications", "must be positive"));
        }
        self.train.validate()?;
        let d = &self.data;
        if d.dims.is_empty() || d.dims.contains(&0) {
            return Err(Error::config("data.dims", "must be a nonempty list of positive dimensions"));
        }
        if d.n_train < 2 || d.n_test == 0 {
            return Err(Error::config("data.n_train", "need at least 2 training and 1 test rows"));
        }
        if self.train.patience > 0 && d.n_val == 0 {
            return Err(Error::config("data.n_val", "early stopping needs validation rows"));
        }
        let mut data = Vec::new();
        match d.kind.as_str() {
            "benchmark" => {
                if d.copulas.is_empty() || d.alphas.is_empty() {
                    return Err(Error::config("data", "benchmark data needs `copulas` and `alphas`"));
                }
                if !(d.pareto_fraction >= 0.0 && d.pareto_fraction <= 1.0) {
                    return Err(Error::config("data.pareto_fraction", "must lie in [0, 1]"));
                }
                for (i, a) in d.alphas.iter().enumerate() {
                    if !(*a > 0.0) {
                        return Err(Error::config(format!("data.alphas[{i}]"), "must be positive"));
                    }
                }
                for (i, c) in d.copulas.iter().enumerate() {
                    let copula = c.to_copula().map_err(|r| Error::config(format!("data.copulas[{i}]"), r))?;
                    for &dim in &d.dims {
                        for &alpha in &d.alphas {
                            data.push(CellData::Benchmark { copula, d: dim, alpha, pareto_fraction: d.pareto_fraction });
                        }
                    }
                }
            }
            "hickling" => {
                if d.nus.is_empty() {
                    return Err(Error::config("data.nus", "hickling data needs degrees of freedom"));
                }
                for (i, nu) in d.nus.iter().enumerate() {
                    if !(*nu > 0.0) {
                        return Err(Error::config(format!("data.nus[{i}]"), "must be positive"));
                    }
                }
                for &dim in &d.dims {
                    if dim < 2 {
                        return Err(Error::config("data.dims", "hickling data needs d ≥ 2"));
                    }
                    for &nu in &d.nus {
                        data.push(CellData::Hickling { d: dim, nu });
                    }
                }
            }
            other => return Err(Error::config("data.kind", format!("unknown kind `{other}`"))),
        }
        let cells = data.into_iter().map(|data| Cell { data, n_train: d.n_train, n_val: d.n_val, n_test: d.n_test }).collect();
        if self.methods.is_empty() {
            return Err(Error::config("methods", "must list at least one method"));
        }
        let methods = self
            .methods
            .iter()
            .enumerate()
            .map(|(i, m)| m.to_method().map_err(|(k, r)| Error::config(format!("methods[{i}].{k}"), r)))
            .collect::<Result<Vec<_>>>()?;
        Ok(BenchConfig {
            name: self.name.clone(),
            cells,
            methods,
            replications: self.replications,
            base_seed: self.base_seed,
            train: self.train.clone(),
            eval: EvalConfig { seed: 0, projections: self.eval.projections.max(1), energy_cap: self.eval.energy_cap.max(2) },
            save_checkpoints: self.save_checkpoints,
        })
    }
}

impl CopulaSection {
    fn to_copula(&self) -> std::result::Result<Copula, String> {
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| format!("`{}` needs `{key}`", self.family));
        let copula = match self.family.as_str() {
            "gaussian" => Copula::Gaussian { tau: need(self.tau, "tau")? },
            "gumbel" => Copula::Gumbel { tau: need(self.tau, "tau")? },
            "husler_reiss" => Copula::HuslerReiss { rho: need(self.rho, "rho")? },
            "iid" => Copula::Iid,
            other => return Err(format!("unknown copula family `{other}`")),
        };
        match copula {
            Copula::Gaussian { tau } | Copula::Gumbel { tau } if !(tau > 0.0 && tau < 1.0) => {
                Err(format!("tau must lie in (0, 1), got {tau}"))
            }
            Copula::HuslerReiss { rho } if !(rho > 0.0 && rho < 1.0) => Err(format!("rho must lie in (0, 1), got {rho}")),
            c => Ok(c),
        }
    }

    pub fn from_copula(c: Copula) -> Self {
        match c {
            Copula::Gaussian { tau } => CopulaSection { family: "gaussian".into(), tau: Some(tau), rho: None },
            Copula::Gumbel { tau } => CopulaSection { family: "gumbel".into(), tau: Some(tau), rho: None },
            Copula::HuslerReiss { rho } => CopulaSection { family: "husler_reiss".into(), tau: None, rho: Some(rho) },
            Copula::Iid => CopulaSection { family: "iid".into(), tau: None, rho: None },
        }
    }
}

impl MethodSection {
    fn to_method(&self) -> std::result::Result<Method, (&'static str, String)> {
        let mode = TransformMode::parse(&self.mode).ok_or(("mode", format!("unknown transform mode `{}`", self.mode)))?;
        let schedule = Schedule::parse(&self.schedule).ok_or(("schedule", format!("unknown schedule `{}`", self.schedule)))?;
        if self.steps == 0 {
            return Err(("steps", "must be positive".into()));
        }
        if !(self.clamp > 0.0) {
            return Err(("clamp", "must be positive (use inf for no clamp)".into()));
        }
        Ok(Method { mode, schedule, steps: self.steps, clamp: self.clamp })
    }

    pub fn from_method(m: &Method) -> Self {
        MethodSection { mode: m.mode.name().into(), schedule: m.schedule.name().into(), steps: m.steps, clamp: m.clamp }
    }
}
