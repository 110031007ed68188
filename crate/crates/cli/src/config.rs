//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hsvar_core::bounds::{AlgoConfig, BoundMethod};
use hsvar_core::ident::{NormalizationRule, SignRule};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::ingest::BreakSpec;
use crate::spec_file::preset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Ols,
    Gls,
    Ml,
    Gibbs,
}

impl Estimator {
    fn parse(s: &str) -> CliResult<Self> {
        match s {
            "ols" => Ok(Estimator::Ols),
            "gls" => Ok(Estimator::Gls),
            "ml" => Ok(Estimator::Ml),
            "gibbs" => Ok(Estimator::Gibbs),
            _ => Err(CliError::Config(format!("estimator must be ols, gls, ml or gibbs, got {s:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Ols => "ols",
            Estimator::Gls => "gls",
            Estimator::Ml => "ml",
            Estimator::Gibbs => "gibbs",
        }
    }
}

/// Overrides of the diffuse default prior.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PriorOverrides {
    /// Prior variance of each slope coefficient.
    pub variance: Option<f64>,
    /// Inverse-Wishart degrees of freedom for both regimes.
    pub dof: Option<f64>,
}

/// Eigenvalue positions pooled into blocks; empty means all distinct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionDecl {
    pub pools: Vec<(usize, usize)>,
}

impl PartitionDecl {
    fn parse(s: &str) -> CliResult<Self> {
        let s = s.trim();
        if s == "distinct" {
            return Ok(PartitionDecl { pools: Vec::new() });
        }
        let pools = s
            .split(',')
            .map(|p| {
                let (a, b) = p
                    .trim()
                    .split_once("..")
                    .ok_or_else(|| CliError::Config(format!("partition entry {p:?} is not a range a..b")))?;
                let a: usize = a.trim().parse().map_err(|_| CliError::Config(format!("bad partition {p:?}")))?;
                let b: usize = b.trim().parse().map_err(|_| CliError::Config(format!("bad partition {p:?}")))?;
                if a == 0 || b <= a {
                    return Err(CliError::Config(format!("partition range {p:?} must satisfy 1 <= a < b")));
                }
                Ok((a - 1, b - 1))
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(PartitionDecl { pools })
    }

    pub fn is_distinct(&self) -> bool {
        self.pools.is_empty()
    }

    fn render(&self) -> String {
        if self.pools.is_empty() {
            "distinct".into()
        } else {
            self.pools.iter().map(|(a, b)| format!("{}..{}", a + 1, b + 1)).collect::<Vec<_>>().join(",")
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: PathBuf,
    pub break_at: BreakSpec,
    pub lags: usize,
    pub estimator: Estimator,
    pub prior: PriorOverrides,
    pub partition: Option<PartitionDecl>,
    /// File path or preset name.
    pub restrictions: Option<String>,
    pub algo: AlgoConfig,
    pub out: PathBuf,
}

const RUN_KEYS: &[&str] = &[
    "data",
    "break",
    "lags",
    "estimator",
    "prior_variance",
    "prior_dof",
    "partition",
    "restrictions",
    "draws",
    "sign_attempts",
    "stochastic_iterations",
    "alpha",
    "seed",
    "multistarts",
    "start_pool",
    "horizons",
    "method",
    "burn_in",
    "thinning",
    "cumulate",
    "eta_grid",
    "sign_rule",
    "out",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) =
            body.split_once('=').ok_or_else(|| CliError::Config(format!("line {}: expected key = value", ln + 1)))?;
        let k = k.trim().to_string();
        if map.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("line {}: key {k:?} given twice", ln + 1)));
        }
    }
    Ok(map)
}

pub(crate) fn num<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse {v:?}")))
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

impl RunConfig {
    /// Parses config text; relative paths are taken from `base`.
    pub fn from_text(text: &str, base: &Path) -> CliResult<Self> {
        let map = parse_pairs(text)?;
        if let Some(k) = map.keys().find(|k| !RUN_KEYS.contains(&k.as_str())) {
            return Err(CliError::Config(format!("unknown key {k:?}")));
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let need = |k: &str| get(k).ok_or_else(|| CliError::Config(format!("missing key {k:?}")));
        let mut algo = AlgoConfig::default();
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = get($key) {
                    $field = num($key, v)?;
                }
            };
        }
        set!("draws", algo.accepted_draws);
        set!("sign_attempts", algo.sign_attempts);
        set!("stochastic_iterations", algo.stochastic_iterations);
        set!("alpha", algo.alpha);
        set!("seed", algo.seed);
        set!("multistarts", algo.multistarts);
        set!("start_pool", algo.start_pool);
        set!("horizons", algo.horizons);
        set!("burn_in", algo.burn_in);
        set!("thinning", algo.thinning);
        set!("eta_grid", algo.eta_grid);
        if let Some(v) = get("method") {
            algo.method = match v {
                "optimizer" => BoundMethod::Optimizer,
                "stochastic" => BoundMethod::Stochastic,
                _ => return Err(CliError::Config(format!("method must be optimizer or stochastic, got {v:?}"))),
            };
        }
        if let Some(v) = get("sign_rule") {
            let sign_rule = match v {
                "a0" => SignRule::DiagA0Nonneg,
                "c" => SignRule::DiagCNonneg,
                _ => return Err(CliError::Config(format!("sign_rule must be a0 or c, got {v:?}"))),
            };
            algo.normalization = NormalizationRule { sign_rule, ..Default::default() };
        }
        if let Some(v) = get("cumulate") {
            algo.cumulate = v
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    let g: usize = num("cumulate", s.trim())?;
                    g.checked_sub(1).ok_or_else(|| CliError::Config("cumulate indices are 1-based".into()))
                })
                .collect::<CliResult<_>>()?;
        }
        let prior = PriorOverrides {
            variance: get("prior_variance").map(|v| num("prior_variance", v)).transpose()?,
            dof: get("prior_dof").map(|v| num("prior_dof", v)).transpose()?,
        };
        let restrictions = get("restrictions").map(|r| {
            if preset(r).is_some() {
                r.to_string()
            } else {
                resolve(base, r).display().to_string()
            }
        });
        let cfg = RunConfig {
            data: resolve(base, need("data")?),
            break_at: BreakSpec::parse(need("break")?),
            lags: num("lags", need("lags")?)?,
            estimator: get("estimator").map(Estimator::parse).transpose()?.unwrap_or(Estimator::Ml),
            prior,
            partition: get("partition").map(PartitionDecl::parse).transpose()?,
            restrictions,
            algo,
            out: resolve(base, get("out").unwrap_or("out")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        RunConfig::from_text(&text, &base)
    }

    pub fn validate(&self) -> CliResult<()> {
        if !self.data.is_file() {
            return Err(CliError::Config(format!("data file {} not found", self.data.display())));
        }
        if let Some(r) = &self.restrictions {
            if preset(r).is_none() && !Path::new(r).is_file() {
                return Err(CliError::Config(format!("restriction file {r} not found")));
            }
        }
        if self.lags == 0 {
            return Err(CliError::Config("lags must be at least 1".into()));
        }
        if let Some(v) = self.prior.variance {
            if !(v > 0.0) {
                return Err(CliError::Config("prior_variance must be positive".into()));
            }
        }
        self.algo.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn require_partition(&self) -> CliResult<&PartitionDecl> {
        self.partition.as_ref().ok_or_else(|| {
            CliError::Config("partition must be declared (e.g. `partition = distinct` or `2..3`)".into())
        })
    }

    /// Every effective setting in a fixed order; the basis of the config hash.
    pub fn canonical(&self) -> String {
        let a = &self.algo;
        let mut lines = vec![
            format!("data = {}", self.data.display()),
            format!("break = {}", self.break_at),
            format!("lags = {}", self.lags),
            format!("estimator = {}", self.estimator.name()),
        ];
        if let Some(v) = self.prior.variance {
            lines.push(format!("prior_variance = {v:?}"));
        }
        if let Some(v) = self.prior.dof {
            lines.push(format!("prior_dof = {v:?}"));
        }
        if let Some(p) = &self.partition {
            lines.push(format!("partition = {}", p.render()));
        }
        if let Some(r) = &self.restrictions {
            lines.push(format!("restrictions = {r}"));
        }
        let method = match a.method {
            BoundMethod::Optimizer => "optimizer",
            BoundMethod::Stochastic => "stochastic",
        };
        let sign_rule = match a.normalization.sign_rule {
            SignRule::DiagA0Nonneg => "a0",
            SignRule::DiagCNonneg => "c",
        };
        let cumulate: Vec<String> = a.cumulate.iter().map(|g| (g + 1).to_string()).collect();
        lines.extend([
            format!("draws = {}", a.accepted_draws),
            format!("sign_attempts = {}", a.sign_attempts),
            format!("stochastic_iterations = {}", a.stochastic_iterations),
            format!("alpha = {:?}", a.alpha),
            format!("seed = {}", a.seed),
            format!("multistarts = {}", a.multistarts),
            format!("start_pool = {}", a.start_pool),
            format!("horizons = {}", a.horizons),
            format!("method = {method}"),
            format!("burn_in = {}", a.burn_in),
            format!("thinning = {}", a.thinning),
            format!("cumulate = {}", cumulate.join(",")),
            format!("eta_grid = {}", a.eta_grid),
            format!("sign_rule = {sign_rule}"),
            format!("out = {}", self.out.display()),
        ]);
        lines.join("\n") + "\n"
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
