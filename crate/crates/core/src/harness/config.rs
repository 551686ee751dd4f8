//! Experiment configuration: one TOML file with a section per module, plus
//! dotted `key=value` overrides. Precedence: overrides > file > defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annealer::AnnealConfig;
use crate::baselines::{GreedyConfig, NcrConfig};
use crate::error::{Error, Result};
use crate::numerics::{self, build_noise_model, build_source_model};
use crate::objective::{LagrangeWeights, Problem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub rho: f64,
    pub var1: f64,
    pub var2: f64,
    pub n_x: usize,
    /// Grid half-width in standard deviations.
    pub span: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            rho: 0.995,
            var1: 1.0,
            var2: 1.0,
            n_x: numerics::DEFAULT_N_X,
            span: numerics::DEFAULT_SOURCE_SPAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Channel noise variance, shared by both channels unless `var2` is set.
    pub var: f64,
    pub var2: Option<f64>,
    pub n_n: usize,
    pub span: f64,
}

impl NoiseConfig {
    pub fn var1(&self) -> f64 {
        self.var
    }

    pub fn var2(&self) -> f64 {
        self.var2.unwrap_or(self.var)
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            var: 0.1,
            var2: None,
            n_n: numerics::DEFAULT_N_N,
            span: numerics::DEFAULT_NOISE_SPAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_y: usize,
    /// Relative padding of the output lattice beyond the reachable range.
    pub margin: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_y: numerics::DEFAULT_N_Y,
            margin: 0.1,
        }
    }
}

/// How the power terms are weighted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightsConfig {
    Individual { lambda1: f64, lambda2: f64 },
    Total { lambda: f64 },
    /// Tune the multipliers until the powers hit a target: either a total
    /// `P1 + P2` (one shared multiplier) or per-channel `p1`, `p2`.
    PowerTarget {
        #[serde(default)]
        total: Option<f64>,
        #[serde(default)]
        p1: Option<f64>,
        #[serde(default)]
        p2: Option<f64>,
    },
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig::Total { lambda: 0.004 }
    }
}

/// Resolved power target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerTarget {
    Total(f64),
    Individual(f64, f64),
}

impl WeightsConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightsConfig::Individual { lambda1, lambda2 } => LagrangeWeights::new(lambda1, lambda2).map(|_| ()),
            WeightsConfig::Total { lambda } => LagrangeWeights::total(lambda).map(|_| ()),
            WeightsConfig::PowerTarget { .. } => self.target().map(|_| ()),
        }
    }

    /// Fixed multipliers, or `None` when they are to be tuned.
    pub fn fixed(&self) -> Result<Option<LagrangeWeights>> {
        match *self {
            WeightsConfig::Individual { lambda1, lambda2 } => LagrangeWeights::new(lambda1, lambda2).map(Some),
            WeightsConfig::Total { lambda } => LagrangeWeights::total(lambda).map(Some),
            WeightsConfig::PowerTarget { .. } => Ok(None),
        }
    }

    pub fn target(&self) -> Result<PowerTarget> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::config(format!("weights.{name} must be positive, got {v}")))
            }
        };
        match *self {
            WeightsConfig::PowerTarget {
                total: Some(t),
                p1: None,
                p2: None,
            } => Ok(PowerTarget::Total(positive(t, "total")?)),
            WeightsConfig::PowerTarget {
                total: None,
                p1: Some(a),
                p2: Some(b),
            } => Ok(PowerTarget::Individual(positive(a, "p1")?, positive(b, "p2")?)),
            WeightsConfig::PowerTarget { .. } => Err(Error::config(
                "power_target needs either `total` or both `p1` and `p2`, not a mix",
            )),
            _ => Err(Error::config("weights mode is not power_target")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Da,
    Greedy,
    Ncr,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "da" => Ok(Method::Da),
            "greedy" => Ok(Method::Greedy),
            "ncr" => Ok(Method::Ncr),
            other => Err(Error::config(format!("unknown method `{other}` (expected da, greedy or ncr)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Da => "da",
            Method::Greedy => "greedy",
            Method::Ncr => "ncr",
        })
    }
}

/// Starting encoders for greedy and NCR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Linear,
    /// Independent Gaussian node values.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub kind: InitKind,
    /// Slope of the linear start, in units of output std per source std.
    pub slope: f64,
    /// Standard deviation of random node values relative to the source std.
    pub scale: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            kind: InitKind::Linear,
            slope: 1.0,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub enabled: bool,
    pub mc_samples: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig {
            enabled: true,
            mc_samples: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    /// Relative tolerance on the achieved power.
    pub tol: f64,
    pub max_iters: usize,
    /// Starting multiplier for the bracket search.
    pub lambda_init: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            tol: 0.02,
            max_iters: 20,
            lambda_init: 0.004,
            lambda_min: 1e-7,
            lambda_max: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Sweep points: exactly one list is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Shared multipliers (total-power weighting).
    pub lambdas: Vec<f64>,
    /// `[lambda1, lambda2]` pairs (individual weighting).
    pub lambda_pairs: Vec<[f64; 2]>,
    /// Total power targets, each reached by tuning a shared multiplier.
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub source: SourceConfig,
    pub noise: NoiseConfig,
    pub grid: GridConfig,
    pub weights: WeightsConfig,
    pub anneal: AnnealConfig,
    pub greedy: GreedyConfig,
    pub ncr: NcrConfig,
    pub init: InitConfig,
    pub tuning: TuningConfig,
    pub validate: ValidateConfig,
    pub run: RunConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    /// Parses TOML text, applies overrides, and validates.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::config(format!("parse error: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        infer_weights_mode(&mut table);
        let cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Loads `path` (or starts from defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        // the builders carry the numeric range checks
        self.problem(LagrangeWeights::total(1.0)?)?;
        if self.grid.n_y < 16 {
            return bad(format!("grid.n_y must be at least 16, got {}", self.grid.n_y));
        }
        if !(self.grid.margin >= 0.0) {
            return bad("grid.margin must be nonnegative".into());
        }
        self.weights.validate()?;
        match self.method {
            Method::Da => self.anneal.validate()?,
            Method::Greedy => self.greedy.validate()?,
            Method::Ncr => {
                self.greedy.validate()?;
                self.ncr.validate(self.noise.var.max(self.noise.var2()))?;
            }
        }
        if !(self.init.slope.is_finite() && self.init.scale > 0.0) {
            return bad("init.slope must be finite and init.scale positive".into());
        }
        if self.validate.enabled && self.validate.mc_samples < super::montecarlo::MIN_MC_SAMPLES {
            return bad(format!(
                "validate.mc_samples must be at least {}",
                super::montecarlo::MIN_MC_SAMPLES
            ));
        }
        let t = &self.tuning;
        if !(t.tol > 0.0 && t.max_iters > 0 && t.lambda_min > 0.0 && t.lambda_min < t.lambda_max) {
            return bad("tuning needs tol > 0, max_iters > 0 and 0 < lambda_min < lambda_max".into());
        }
        if !(t.lambda_init >= t.lambda_min && t.lambda_init <= t.lambda_max) {
            return bad("tuning.lambda_init must lie in [lambda_min, lambda_max]".into());
        }
        let s = &self.sweep;
        for &l in &s.lambdas {
            LagrangeWeights::total(l)?;
        }
        for &[a, b] in &s.lambda_pairs {
            LagrangeWeights::new(a, b)?;
        }
        if s.targets.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return bad("sweep.targets must be positive".into());
        }
        Ok(())
    }

    /// Source, noise and grid settings combined with the given weights.
    pub fn problem(&self, weights: LagrangeWeights) -> Result<Problem> {
        let s = &self.source;
        let n = &self.noise;
        Ok(Problem {
            source: build_source_model(s.rho, s.var1, s.var2, s.n_x, s.span)?,
            noise1: build_noise_model(n.var1(), n.n_n, n.span)?,
            noise2: build_noise_model(n.var2(), n.n_n, n.span)?,
            weights,
            n_y: self.grid.n_y,
            margin: self.grid.margin,
        })
    }
}

/// Fills in `weights.mode` from the keys present when it is omitted, so
/// `--set weights.lambda=0.01` works on its own.
fn infer_weights_mode(table: &mut toml::Table) {
    let Some(toml::Value::Table(w)) = table.get_mut("weights") else {
        return;
    };
    if w.contains_key("mode") {
        return;
    }
    let has = |k: &str| w.contains_key(k);
    let mode = if has("lambda") {
        "total"
    } else if has("lambda1") || has("lambda2") {
        "individual"
    } else if has("total") || has("p1") || has("p2") {
        "power_target"
    } else {
        return;
    };
    w.insert("mode".into(), mode.into());
}

/// Applies one `dotted.key=value` override. The value is read as a TOML value
/// when it parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{item}` is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(format!("override `{item}` has an empty key segment")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("nonempty key");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override `{item}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
